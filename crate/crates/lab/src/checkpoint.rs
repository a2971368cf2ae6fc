//! Little-endian binary encoding of a training run's full state.
//!
//! Layout (all integers little-endian, `f64` as IEEE-754 bits):
//!
//! ```text
//! magic "RAVECKPT" | u32 version
//! str  resolved config (TOML)        str = u64 byte length + UTF-8
//! u64  seed | u64 env_steps | u64 episodes | u64 learner_steps | u64 rows
//! u8   pretrained
//! period accumulators (see `PeriodStats`)
//! u64  worker count, then per worker: env | rng | f64 episode return
//! env  eval environment
//! rng  learner | rng dynamics
//! member policy | u64 n, n x member critics | u64 n, n x mlp targets
//! u8   has dynamics, then 3 x (u64 n, n x member) and 5 x scaler
//! replay: u64 capacity | u64 head | u64 n | n x transition
//! ```
//!
//! `member` is an `mlp` followed by the Adam state (`vec` first moment,
//! `vec` second moment, u64 steps); `mlp` is a `vec` of parameters whose
//! shape comes from the config; `vec` is u64 length + f64 values; `rng` is
//! 32 seed bytes, u64 stream, u128 word position; `env` is f64 position,
//! u8 done, u8 truncated, u64 steps and an `rng`.

use std::path::Path;

use rave_core::agent::Transition;
use rave_core::dynamics::Scaler;
use rave_core::env::EnvState;
use rave_core::nn::{Adam, AdamConfig, Member, Mlp, MlpSpec};
use rave_core::rng::RngState;

use crate::error::{LabError, Result};

pub const MAGIC: &[u8; 8] = b"RAVECKPT";
pub const VERSION: u32 = 1;

#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        let mut e = Self::default();
        e.buf.extend_from_slice(MAGIC);
        e.u32(VERSION);
        e
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn vec(&mut self, v: &[f64]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }

    pub fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn rng(&mut self, r: &RngState) {
        self.buf.extend_from_slice(&r.seed);
        self.u64(r.stream);
        self.buf.extend_from_slice(&r.word_pos.to_le_bytes());
    }

    pub fn env(&mut self, s: &EnvState, rng: &RngState) {
        self.f64(s.position);
        self.bool(s.done);
        self.bool(s.truncated);
        self.usize(s.steps);
        self.rng(rng);
    }

    pub fn mlp(&mut self, net: &Mlp) {
        self.vec(net.params());
    }

    pub fn member(&mut self, m: &Member) {
        self.mlp(&m.net);
        let (first, second) = m.opt.moments();
        self.vec(first);
        self.vec(second);
        self.u64(m.opt.steps());
    }

    pub fn members(&mut self, ms: &[Member]) {
        self.usize(ms.len());
        ms.iter().for_each(|m| self.member(m));
    }

    pub fn scaler(&mut self, s: &Scaler) {
        self.vec(&s.shift);
        self.vec(&s.scale);
    }

    pub fn transition(&mut self, t: &Transition) {
        self.vec(&t.state);
        self.vec(&t.action);
        self.f64(t.reward);
        self.vec(&t.next_state);
        self.bool(t.done);
    }
}

pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    /// Checks the header and positions the cursor after it.
    pub fn new(buf: &'a [u8]) -> std::result::Result<Self, String> {
        let mut d = Self { buf, pos: 0 };
        if d.take(8)? != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let version = d.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        Ok(d)
    }

    pub fn finish(&self) -> std::result::Result<(), String> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(format!("{} trailing bytes", self.buf.len() - self.pos))
        }
    }

    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> std::result::Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    pub fn bool(&mut self) -> std::result::Result<bool, String> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(format!("invalid flag byte {b}")),
        }
    }

    pub fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn usize(&mut self) -> std::result::Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|e| e.to_string())
    }

    /// A length prefix that must fit in the remaining bytes at `unit` bytes
    /// per element.
    fn len(&mut self, unit: usize) -> std::result::Result<usize, String> {
        let n = self.usize()?;
        if n.saturating_mul(unit) > self.buf.len() - self.pos {
            return Err(format!("length {n} at byte {} exceeds the file", self.pos));
        }
        Ok(n)
    }

    pub fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn vec(&mut self) -> std::result::Result<Vec<f64>, String> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn str(&mut self) -> std::result::Result<String, String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }

    pub fn rng(&mut self) -> std::result::Result<RngState, String> {
        Ok(RngState {
            seed: self.array()?,
            stream: self.u64()?,
            word_pos: u128::from_le_bytes(self.array()?),
        })
    }

    pub fn env(&mut self) -> std::result::Result<(EnvState, RngState), String> {
        let state = EnvState {
            position: self.f64()?,
            done: self.bool()?,
            truncated: self.bool()?,
            steps: self.usize()?,
        };
        Ok((state, self.rng()?))
    }

    pub fn mlp(&mut self, spec: &MlpSpec) -> std::result::Result<Mlp, String> {
        Mlp::from_params(spec, self.vec()?).map_err(|e| e.to_string())
    }

    pub fn member(&mut self, spec: &MlpSpec, opt: AdamConfig) -> std::result::Result<Member, String> {
        let net = self.mlp(spec)?;
        let (first, second, steps) = (self.vec()?, self.vec()?, self.u64()?);
        if first.len() != net.params().len() {
            return Err("optimizer state does not match its network".into());
        }
        let opt = Adam::from_parts(opt, first, second, steps).map_err(|e| e.to_string())?;
        Ok(Member { net, opt })
    }

    pub fn members(&mut self, spec: &MlpSpec, opt: AdamConfig) -> std::result::Result<Vec<Member>, String> {
        let n = self.len(1)?;
        (0..n).map(|_| self.member(spec, opt)).collect()
    }

    pub fn scaler(&mut self) -> std::result::Result<Scaler, String> {
        let shift = self.vec()?;
        let scale = self.vec()?;
        if shift.len() != scale.len() {
            return Err("scaler columns disagree".into());
        }
        Ok(Scaler { shift, scale })
    }

    pub fn transition(&mut self) -> std::result::Result<Transition, String> {
        Ok(Transition {
            state: self.vec()?,
            action: self.vec()?,
            reward: self.f64()?,
            next_state: self.vec()?,
            done: self.bool()?,
        })
    }

    /// Number of transitions that follow; bounded by the remaining bytes.
    pub fn count(&mut self) -> std::result::Result<usize, String> {
        self.len(1)
    }
}

/// Writes `bytes` to `path` atomically (temporary file, then rename).
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(LabError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(LabError::io(path))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(LabError::io(path))
}
