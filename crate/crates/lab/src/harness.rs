//! Experiment driver: warmup, dynamics pretraining, the actor/learner loop,
//! periodic evaluation against the oracle and checkpoints.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use rave_core::agent::{explore_action, ActorCritic, Batch, ReplayBuffer, StepReport, Transition};
use rave_core::dynamics::{DynamicsEnsemble, MemberLoss};
use rave_core::env::ToyEnv;
use rave_core::expansion::ExpansionConfig;
use rave_core::nn::{Matrix, Mlp};
use rave_core::rng::{self, LabRng, RngState};

use crate::checkpoint::{self, Decoder, Encoder};
use crate::config::RunConfig;
use crate::error::{LabError, Result};
use crate::metrics::{MetricsRow, MetricsWriter, TimingWriter};
use crate::oracle::{self, StartValues, START_STATE};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const ORACLE_FILE: &str = "oracle_cache.csv";

// Random stream ids under a run seed.
const INIT_STREAM: u64 = 1;
const LEARNER_STREAM: u64 = 2;
const MODEL_STREAM: u64 = 3;
const EVAL_STREAM: u64 = 4;
const WORKER_ENV_STREAM: u64 = 16;
const WORKER_ACTION_STREAM: u64 = 1024;

/// One actor context: an environment instance and its action noise.
#[derive(Debug, Clone)]
pub struct Worker {
    env: ToyEnv,
    rng: LabRng,
    episode_return: f64,
}

impl Worker {
    fn new(config: &RunConfig, seed: u64, index: u64) -> Result<Self> {
        let fresh = ToyEnv::new(config.toy(), seed)?;
        let noise = RngState::capture(&rng::stream(seed, WORKER_ENV_STREAM + index));
        Ok(Self {
            env: ToyEnv::restore(config.toy(), fresh.state(), noise)?,
            rng: rng::stream(seed, WORKER_ACTION_STREAM + index),
            episode_return: 0.0,
        })
    }

    fn position(&self) -> f64 {
        self.env.state().position
    }

    /// Uniform random action during warmup, the exploring policy after.
    fn act(&mut self, policy: Option<&Mlp>, epsilon: f64, noise_std: f64) -> Result<f64> {
        Ok(match policy {
            None => self.rng.random_range(-1.0..=1.0),
            Some(net) => explore_action(net, &[self.position()], epsilon, noise_std, &mut self.rng)?[0],
        })
    }

    /// Steps the environment, restarting it when the episode ends. Returns
    /// the transition and the finished episode's return, if any.
    fn step(&mut self, action: f64) -> Result<(Transition, Option<f64>)> {
        let state = self.position();
        let (next, reward, terminal) = self.env.step_scalar(action)?;
        self.episode_return += reward;
        let transition = Transition {
            state: vec![state],
            action: vec![action],
            reward,
            next_state: vec![next.position],
            done: terminal,
        };
        let finished = if terminal || next.truncated {
            let ret = self.episode_return;
            self.episode_return = 0.0;
            self.env.reset_at(START_STATE);
            Some(ret)
        } else {
            None
        };
        Ok((transition, finished))
    }
}

/// Running sums between two metrics rows.
#[derive(Debug, Clone, Default, PartialEq)]
struct PeriodStats {
    learner_steps: u64,
    critic_loss: f64,
    actor_loss: f64,
    alpha_eff: f64,
    clb_subtraction: f64,
    weights: Vec<f64>,
    model_steps: u64,
    model_loss: Vec<f64>,
    return_sum: f64,
    returns: u64,
}

impl PeriodStats {
    fn new(horizon: usize, members: usize) -> Self {
        Self {
            weights: vec![0.0; horizon + 1],
            model_loss: vec![0.0; members],
            ..Self::default()
        }
    }

    fn add_learner(&mut self, report: &StepReport) {
        self.learner_steps += 1;
        self.critic_loss += report.critic_loss;
        self.actor_loss += report.actor_loss;
        self.alpha_eff += report.diagnostics.alpha_eff;
        self.clb_subtraction += report.diagnostics.clb_subtraction;
        for (acc, w) in self.weights.iter_mut().zip(&report.diagnostics.weights) {
            *acc += w;
        }
    }

    fn add_model(&mut self, losses: &[MemberLoss]) {
        self.model_steps += 1;
        for (acc, l) in self.model_loss.iter_mut().zip(losses) {
            *acc += l.total();
        }
    }

    fn add_return(&mut self, ret: f64) {
        self.return_sum += ret;
        self.returns += 1;
    }

    fn encode(&self, e: &mut Encoder) {
        e.u64(self.learner_steps);
        for v in [self.critic_loss, self.actor_loss, self.alpha_eff, self.clb_subtraction] {
            e.f64(v);
        }
        e.vec(&self.weights);
        e.u64(self.model_steps);
        e.vec(&self.model_loss);
        e.f64(self.return_sum);
        e.u64(self.returns);
    }

    fn decode(d: &mut Decoder) -> std::result::Result<Self, String> {
        Ok(Self {
            learner_steps: d.u64()?,
            critic_loss: d.f64()?,
            actor_loss: d.f64()?,
            alpha_eff: d.f64()?,
            clb_subtraction: d.f64()?,
            weights: d.vec()?,
            model_steps: d.u64()?,
            model_loss: d.vec()?,
            return_sum: d.f64()?,
            returns: d.u64()?,
        })
    }
}

fn mean(sum: f64, n: u64) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub env_steps: u64,
    pub episodes: u64,
    pub learner_steps: u64,
    /// Metrics rows written so far.
    pub rows: u64,
}

/// Draws the dynamics batch (when a model is trained) and the learner batch.
fn sample_batches(
    replay: &ReplayBuffer,
    size: usize,
    with_model: bool,
    model_rng: &mut LabRng,
    learner_rng: &mut LabRng,
) -> Result<(Option<Batch>, Batch)> {
    let model = if with_model {
        Some(replay.sample(size, model_rng)?)
    } else {
        None
    };
    Ok((model, replay.sample(size, learner_rng)?))
}

/// Start-state value estimates of an agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartEstimates {
    pub right: f64,
    pub left: f64,
}

/// `Q̂(s0, +1)` and `Q̂(s0, -1)` from the first online critic, or from the
/// critic mean.
pub fn start_estimates(agent: &ActorCritic, mean_critic: bool) -> Result<StartEstimates> {
    let states = Matrix::column(vec![START_STATE, START_STATE]);
    let actions = Matrix::column(vec![1.0, -1.0]);
    let q = if mean_critic {
        agent.q_mean(&states, &actions)?
    } else {
        agent.q_values(0, &states, &actions)?
    };
    Ok(StartEstimates {
        right: q[0],
        left: q[1],
    })
}

/// Undiscounted return of one greedy episode from the start state.
pub fn greedy_return(agent: &ActorCritic, env: &mut ToyEnv) -> Result<f64> {
    let mut state = env.reset_at(START_STATE);
    let mut total = 0.0;
    let mut rng = rng::stream(0, 0);
    loop {
        let a = agent.select_action(&[state.position], false, &mut rng)?;
        let (next, reward, terminal) = env.step_scalar(a[0])?;
        total += reward;
        state = next;
        if terminal || state.truncated {
            return Ok(total);
        }
    }
}

/// The complete state of one seed's run.
pub struct Trainer {
    config: RunConfig,
    seed: u64,
    expansion: ExpansionConfig,
    agent: ActorCritic,
    dynamics: Option<DynamicsEnsemble>,
    replay: ReplayBuffer,
    workers: Vec<Worker>,
    eval_env: ToyEnv,
    learner_rng: LabRng,
    model_rng: LabRng,
    counters: Counters,
    period: PeriodStats,
    oracle: StartValues,
}

impl Trainer {
    /// Fresh networks and environments for `seed`; `oracle` supplies the
    /// ground truth recorded next to the estimates.
    pub fn new(config: RunConfig, seed: u64, oracle: StartValues) -> Result<Self> {
        config.validate()?;
        let mut init = rng::stream(seed, INIT_STREAM);
        let agent = ActorCritic::new(config.agent()?, &mut init)?;
        let dynamics = match config.dynamics()? {
            Some(cfg) => Some(DynamicsEnsemble::new(cfg, &mut init)?),
            None => None,
        };
        let workers = (0..config.workers as u64)
            .map(|w| Worker::new(&config, seed, w))
            .collect::<Result<Vec<_>>>()?;
        let fresh = ToyEnv::new(config.toy(), seed)?;
        let eval_env = ToyEnv::restore(
            config.toy(),
            fresh.state(),
            RngState::capture(&rng::stream(seed, EVAL_STREAM)),
        )?;
        let members = dynamics.as_ref().map_or(0, |d| d.members());
        Ok(Self {
            expansion: config.expansion()?,
            replay: ReplayBuffer::new(config.replay_capacity)?,
            period: PeriodStats::new(config.horizon, members),
            learner_rng: rng::stream(seed, LEARNER_STREAM),
            model_rng: rng::stream(seed, MODEL_STREAM),
            counters: Counters::default(),
            config,
            seed,
            agent,
            dynamics,
            workers,
            eval_env,
            oracle,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn agent(&self) -> &ActorCritic {
        &self.agent
    }

    pub fn dynamics(&self) -> Option<&DynamicsEnsemble> {
        self.dynamics.as_ref()
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn oracle(&self) -> StartValues {
        self.oracle
    }

    fn model_members(&self) -> usize {
        self.dynamics.as_ref().map_or(0, |d| d.members())
    }

    /// Fits the model's standardisation to the warmup data and takes
    /// `pretrain_steps` gradient steps on it.
    fn pretrain(&mut self, replay: &ReplayBuffer) -> Result<()> {
        let Some(dynamics) = self.dynamics.as_mut() else {
            return Ok(());
        };
        dynamics.fit_scalers(&Batch::from_transitions(replay.iter())?)?;
        for _ in 0..self.config.pretrain_steps {
            let batch = replay.sample(self.config.batch_size, &mut self.model_rng)?;
            dynamics.train(&batch, &mut self.model_rng)?;
        }
        Ok(())
    }

    /// One dynamics update (if any) and one actor-critic update.
    fn learn(&mut self, model_batch: Option<Batch>, batch: Batch) -> Result<()> {
        if let (Some(dynamics), Some(b)) = (self.dynamics.as_mut(), model_batch) {
            let losses = dynamics.train(&b, &mut self.model_rng)?;
            self.period.add_model(&losses);
        }
        let report = self
            .agent
            .learn(&batch, self.dynamics.as_ref(), &self.expansion, &mut self.learner_rng)?;
        self.period.add_learner(&report);
        self.counters.learner_steps += 1;
        Ok(())
    }

    /// Evaluates the agent and closes the current metrics period.
    pub fn evaluate(&mut self) -> Result<MetricsRow> {
        let q = start_estimates(&self.agent, self.config.eval_mean_critic())?;
        let eval_return = greedy_return(&self.agent, &mut self.eval_env)?;
        let p = &self.period;
        let row = MetricsRow {
            env_steps: self.counters.env_steps,
            episodes: self.counters.episodes,
            learner_steps: self.counters.learner_steps,
            train_return: mean(p.return_sum, p.returns),
            eval_return,
            q_right: q.right,
            q_left: q.left,
            oracle_right: self.oracle.right,
            oracle_left: self.oracle.left,
            alpha_eff: mean(p.alpha_eff, p.learner_steps),
            clb_subtraction: mean(p.clb_subtraction, p.learner_steps),
            weights: p.weights.iter().map(|&w| mean(w, p.learner_steps)).collect(),
            critic_loss: mean(p.critic_loss, p.learner_steps),
            actor_loss: mean(p.actor_loss, p.learner_steps),
            dynamics_loss: p.model_loss.iter().map(|&l| mean(l, p.model_steps)).collect(),
        };
        self.period = PeriodStats::new(self.config.horizon, self.model_members());
        self.counters.rows += 1;
        Ok(row)
    }

    /// Trains until `total_steps` environment steps, writing a row every
    /// `eval_period` steps.
    pub fn run(&mut self, sink: &mut Sink) -> Result<()> {
        if self.workers.len() == 1 {
            self.run_serial(sink)
        } else {
            self.run_parallel(sink)
        }
    }

    fn run_serial(&mut self, sink: &mut Sink) -> Result<()> {
        let total = self.config.total_steps as u64;
        let warmup = self.config.warmup_frames as u64;
        let period = self.config.eval_period as u64;
        let (epsilon, noise) = (self.config.epsilon, self.config.exploration_std);
        let with_model = self.dynamics.is_some();
        let batch_size = self.config.batch_size;
        while self.counters.env_steps < total {
            let worker = &mut self.workers[0];
            let policy = (self.counters.env_steps >= warmup).then_some(&self.agent.policy.net);
            let action = worker.act(policy, epsilon, noise)?;
            let (transition, finished) = worker.step(action)?;
            self.replay.push(transition);
            self.counters.env_steps += 1;
            if let Some(ret) = finished {
                self.counters.episodes += 1;
                self.period.add_return(ret);
            }
            let step = self.counters.env_steps;
            if step == warmup {
                let replay = std::mem::replace(&mut self.replay, ReplayBuffer::new(1)?);
                let result = self.pretrain(&replay);
                self.replay = replay;
                result?;
            } else if step > warmup {
                let (m, b) = sample_batches(
                    &self.replay,
                    batch_size,
                    with_model,
                    &mut self.model_rng,
                    &mut self.learner_rng,
                )?;
                self.learn(m, b)?;
            }
            if step.is_multiple_of(period) {
                let row = self.evaluate()?;
                sink.write(&row)?;
            }
        }
        Ok(())
    }

    fn run_parallel(&mut self, sink: &mut Sink) -> Result<()> {
        let shared = Shared {
            replay: Mutex::new(std::mem::replace(&mut self.replay, ReplayBuffer::new(1)?)),
            policy: Mutex::new(Arc::new(self.agent.policy.net.clone())),
            claimed: AtomicU64::new(self.counters.env_steps),
            pushed: AtomicU64::new(self.counters.env_steps),
            learned: AtomicU64::new(self.counters.learner_steps),
            stop: AtomicBool::new(false),
            episodes: Mutex::new(Vec::new()),
        };
        let workers = std::mem::take(&mut self.workers);
        let plan = WorkerPlan {
            total: self.config.total_steps as u64,
            warmup: self.config.warmup_frames as u64,
            slack: workers.len() as u64,
            epsilon: self.config.epsilon,
            noise_std: self.config.exploration_std,
        };
        let (result, joined) = std::thread::scope(|scope| {
            let handles: Vec<_> = workers
                .into_iter()
                .map(|w| {
                    let shared = &shared;
                    scope.spawn(move || worker_loop(w, shared, plan))
                })
                .collect();
            let result = self.learner_loop(&shared, sink);
            shared.stop.store(true, Ordering::SeqCst);
            let joined: Vec<Result<Worker>> = handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(LabError::Config("actor worker panicked".into())))
                })
                .collect();
            (result, joined)
        });
        self.replay = shared.replay.into_inner().expect("replay lock poisoned");
        self.counters.env_steps = shared.pushed.load(Ordering::SeqCst);
        self.workers = joined.into_iter().collect::<Result<Vec<_>>>()?;
        result
    }

    fn drain_episodes(&mut self, shared: &Shared) {
        for ret in std::mem::take(&mut *shared.episodes.lock().expect("episode lock poisoned")) {
            self.counters.episodes += 1;
            self.period.add_return(ret);
        }
    }

    fn learner_loop(&mut self, shared: &Shared, sink: &mut Sink) -> Result<()> {
        let total = self.config.total_steps as u64;
        let warmup = (self.config.warmup_frames as u64).min(total);
        let period = self.config.eval_period as u64;
        let with_model = self.dynamics.is_some();
        let wait = |until: u64| -> bool {
            while shared.pushed.load(Ordering::SeqCst) < until {
                if shared.stop.load(Ordering::SeqCst) {
                    return false;
                }
                std::thread::sleep(Duration::from_micros(50));
            }
            true
        };
        if self.counters.learner_steps == 0 {
            if !wait(warmup) {
                return Ok(());
            }
            if warmup == self.config.warmup_frames as u64 {
                let replay = shared.replay.lock().expect("replay lock poisoned");
                self.pretrain(&replay)?;
            }
            self.drain_episodes(shared);
            while (self.counters.rows + 1) * period <= warmup {
                self.counters.env_steps = shared.pushed.load(Ordering::SeqCst);
                let row = self.evaluate()?;
                sink.write(&row)?;
            }
        }
        while warmup + self.counters.learner_steps < total {
            if !wait(warmup + self.counters.learner_steps + 1) {
                break;
            }
            let (m, b) = {
                let replay = shared.replay.lock().expect("replay lock poisoned");
                sample_batches(
                    &replay,
                    self.config.batch_size,
                    with_model,
                    &mut self.model_rng,
                    &mut self.learner_rng,
                )?
            };
            self.learn(m, b)?;
            shared.learned.store(self.counters.learner_steps, Ordering::SeqCst);
            if self
                .counters
                .learner_steps
                .is_multiple_of(self.config.snapshot_period as u64)
            {
                *shared.policy.lock().expect("policy lock poisoned") = Arc::new(self.agent.policy.net.clone());
            }
            if (warmup + self.counters.learner_steps).is_multiple_of(period) {
                self.drain_episodes(shared);
                self.counters.env_steps = shared.pushed.load(Ordering::SeqCst);
                let row = self.evaluate()?;
                sink.write(&row)?;
            }
        }
        self.drain_episodes(shared);
        Ok(())
    }

    /// Serializes the full run state (see [`crate::checkpoint`]).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.str(&self.config.to_toml());
        e.u64(self.seed);
        let c = self.counters;
        for v in [c.env_steps, c.episodes, c.learner_steps, c.rows] {
            e.u64(v);
        }
        self.period.encode(&mut e);
        e.usize(self.workers.len());
        for w in &self.workers {
            e.env(&w.env.state(), &w.env.rng_state());
            e.rng(&RngState::capture(&w.rng));
            e.f64(w.episode_return);
        }
        e.env(&self.eval_env.state(), &self.eval_env.rng_state());
        e.rng(&RngState::capture(&self.learner_rng));
        e.rng(&RngState::capture(&self.model_rng));
        e.member(&self.agent.policy);
        e.members(&self.agent.critics);
        e.usize(self.agent.targets.len());
        self.agent.targets.iter().for_each(|t| e.mlp(t));
        e.bool(self.dynamics.is_some());
        if let Some(d) = &self.dynamics {
            e.members(&d.transition);
            e.members(&d.reward);
            e.members(&d.termination);
            let s = &d.scalers;
            for scaler in [
                &s.transition_in,
                &s.transition_out,
                &s.reward_in,
                &s.reward_out,
                &s.termination_in,
            ] {
                e.scaler(scaler);
            }
        }
        let (items, head) = self.replay.raw_parts();
        e.usize(self.replay.capacity());
        e.usize(head);
        e.usize(items.len());
        items.iter().for_each(|t| e.transition(t));
        e.into_bytes()
    }

    /// Inverse of [`Trainer::to_bytes`]. `total_steps`, when given,
    /// extends or shortens the run.
    pub fn from_bytes(
        bytes: &[u8],
        oracle: StartValues,
        total_steps: Option<usize>,
    ) -> std::result::Result<Self, String> {
        let mut d = Decoder::new(bytes)?;
        let mut config = RunConfig::from_toml(&d.str()?).map_err(|e| e.to_string())?;
        if let Some(t) = total_steps {
            config.total_steps = t;
        }
        let seed = d.u64()?;
        let counters = Counters {
            env_steps: d.u64()?,
            episodes: d.u64()?,
            learner_steps: d.u64()?,
            rows: d.u64()?,
        };
        let period = PeriodStats::decode(&mut d)?;
        let n_workers = d.usize()?;
        if n_workers != config.workers {
            return Err(format!("checkpoint has {n_workers} workers, config {}", config.workers));
        }
        let core = |e: rave_core::Error| e.to_string();
        let mut workers = Vec::with_capacity(n_workers);
        for _ in 0..n_workers {
            let (state, noise) = d.env()?;
            workers.push(Worker {
                env: ToyEnv::restore(config.toy(), state, noise).map_err(core)?,
                rng: d.rng()?.restore(),
                episode_return: d.f64()?,
            });
        }
        let (state, noise) = d.env()?;
        let eval_env = ToyEnv::restore(config.toy(), state, noise).map_err(core)?;
        let learner_rng = d.rng()?.restore();
        let model_rng = d.rng()?.restore();

        let agent_cfg = config.agent().map_err(|e| e.to_string())?;
        let policy = d.member(&agent_cfg.policy_spec(), agent_cfg.actor_optimizer)?;
        let critic_spec = agent_cfg.critic_spec();
        let critics = d.members(&critic_spec, agent_cfg.critic_optimizer)?;
        let n_targets = d.usize()?;
        let targets = (0..n_targets)
            .map(|_| d.mlp(&critic_spec))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let agent = ActorCritic::from_parts(agent_cfg, policy, critics, targets).map_err(core)?;

        let dyn_cfg = config.dynamics().map_err(|e| e.to_string())?;
        let dynamics = match (d.bool()?, dyn_cfg) {
            (false, None) => None,
            (true, Some(cfg)) => {
                let opt = cfg.optimizer;
                let transition = d.members(&cfg.transition_spec(), opt)?;
                let reward = d.members(&cfg.reward_spec(), opt)?;
                let termination = d.members(&cfg.termination_spec(), opt)?;
                let scalers = rave_core::dynamics::Scalers {
                    transition_in: d.scaler()?,
                    transition_out: d.scaler()?,
                    reward_in: d.scaler()?,
                    reward_out: d.scaler()?,
                    termination_in: d.scaler()?,
                };
                Some(DynamicsEnsemble::from_parts(cfg, transition, reward, termination, scalers).map_err(core)?)
            }
            _ => return Err("dynamics presence does not match the estimator".into()),
        };

        let capacity = d.usize()?;
        let head = d.usize()?;
        let n = d.count()?;
        let items = (0..n)
            .map(|_| d.transition())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let replay = ReplayBuffer::from_raw_parts(capacity, items, head).map_err(core)?;
        d.finish()?;
        let expansion = config.expansion().map_err(|e| e.to_string())?;
        Ok(Self {
            config,
            seed,
            expansion,
            agent,
            dynamics,
            replay,
            workers,
            eval_env,
            learner_rng,
            model_rng,
            counters,
            period,
            oracle,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path, oracle: StartValues, total_steps: Option<usize>) -> Result<Self> {
        let bytes = checkpoint::read_file(path)?;
        Self::from_bytes(&bytes, oracle, total_steps).map_err(|message| LabError::Format {
            path: path.to_path_buf(),
            message,
        })
    }
}

/// Where a run writes its rows.
pub struct Sink {
    metrics: MetricsWriter,
    timing: Option<TimingWriter>,
    started: Instant,
    last: Option<MetricsRow>,
}

impl Sink {
    pub fn new(metrics: MetricsWriter, timing: Option<TimingWriter>) -> Self {
        Self {
            metrics,
            timing,
            started: Instant::now(),
            last: None,
        }
    }

    fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.metrics.write(row)?;
        if let Some(t) = &mut self.timing {
            t.write(row.env_steps, self.started.elapsed().as_secs_f64())?;
        }
        self.last = Some(row.clone());
        Ok(())
    }
}

struct Shared {
    replay: Mutex<ReplayBuffer>,
    /// Latest published policy; workers clone the `Arc` and never hold the
    /// lock while acting.
    policy: Mutex<Arc<Mlp>>,
    claimed: AtomicU64,
    pushed: AtomicU64,
    learned: AtomicU64,
    stop: AtomicBool,
    episodes: Mutex<Vec<f64>>,
}

#[derive(Clone, Copy)]
struct WorkerPlan {
    total: u64,
    warmup: u64,
    /// Environment steps a worker may run ahead of the learner.
    slack: u64,
    epsilon: f64,
    noise_std: f64,
}

fn worker_loop(mut worker: Worker, shared: &Shared, plan: WorkerPlan) -> Result<Worker> {
    let result = (|| -> Result<()> {
        loop {
            if shared.stop.load(Ordering::SeqCst) {
                return Ok(());
            }
            let n = shared.claimed.fetch_add(1, Ordering::SeqCst);
            if n >= plan.total {
                return Ok(());
            }
            let policy = if n >= plan.warmup {
                while n - plan.warmup > shared.learned.load(Ordering::SeqCst) + plan.slack {
                    if shared.stop.load(Ordering::SeqCst) {
                        return Ok(());
                    }
                    std::thread::sleep(Duration::from_micros(50));
                }
                Some(Arc::clone(&shared.policy.lock().expect("policy lock poisoned")))
            } else {
                None
            };
            let action = worker.act(policy.as_deref(), plan.epsilon, plan.noise_std)?;
            let (transition, finished) = worker.step(action)?;
            shared.replay.lock().expect("replay lock poisoned").push(transition);
            shared.pushed.fetch_add(1, Ordering::SeqCst);
            if let Some(ret) = finished {
                shared.episodes.lock().expect("episode lock poisoned").push(ret);
            }
        }
    })();
    if result.is_err() {
        shared.stop.store(true, Ordering::SeqCst);
    }
    result.map(|_| worker)
}

/// Looks up (or computes and caches) the ground truth for `config`.
pub fn oracle_for(config: &RunConfig) -> Result<StartValues> {
    oracle::start_values(
        &config.output_root().join(ORACLE_FILE),
        &config.toy(),
        config.gamma,
        config.oracle_grid,
        config.oracle_episodes,
        config.oracle_seed,
    )
}

/// Outcome of one seed's run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub seed: u64,
    pub run_dir: PathBuf,
    pub counters: Counters,
    pub last_row: Option<MetricsRow>,
}

/// Runs `trainer` to completion and writes its final checkpoint, also
/// when training fails part way.
fn finish(trainer: &mut Trainer, run_dir: &Path, mut sink: Sink) -> Result<RunSummary> {
    let result = trainer.run(&mut sink);
    if trainer.config.save_checkpoint {
        trainer.save(&run_dir.join(CHECKPOINT_FILE))?;
    }
    result?;
    Ok(RunSummary {
        seed: trainer.seed,
        run_dir: run_dir.to_path_buf(),
        counters: trainer.counters,
        last_row: sink.last,
    })
}

/// Trains `config` for one seed into [`RunConfig::run_dir`].
pub fn run_seed(config: &RunConfig, seed: u64) -> Result<RunSummary> {
    let config = RunConfig {
        seeds: vec![seed],
        ..config.clone()
    };
    config.validate()?;
    let run_dir = config.run_dir(seed);
    std::fs::create_dir_all(&run_dir).map_err(LabError::io(&run_dir))?;
    let cfg_path = run_dir.join(CONFIG_FILE);
    std::fs::write(&cfg_path, config.to_toml()).map_err(LabError::io(&cfg_path))?;
    let oracle = oracle_for(&config)?;
    let members = config.model()?.map_or(0, |m| m.1);
    let metrics = MetricsWriter::create(&run_dir.join(METRICS_FILE), config.horizon, members)?;
    let timing = TimingWriter::create(&run_dir.join(TIMING_FILE), false)?;
    let mut trainer = Trainer::new(config, seed, oracle)?;
    finish(&mut trainer, &run_dir, Sink::new(metrics, Some(timing)))
}

/// Runs every seed of `config` in turn.
pub fn run_experiment(config: &RunConfig) -> Result<Vec<RunSummary>> {
    config.validate()?;
    config.seeds.iter().map(|&seed| run_seed(config, seed)).collect()
}

/// Continues the run saved in `run_dir` up to `total_steps` (or the saved
/// total). Metrics rows written after the checkpoint are discarded first.
pub fn resume(run_dir: &Path, total_steps: Option<usize>) -> Result<RunSummary> {
    let path = run_dir.join(CHECKPOINT_FILE);
    let bytes = checkpoint::read_file(&path)?;
    let probe =
        Trainer::from_bytes(&bytes, StartValues::default(), total_steps).map_err(|message| LabError::Format {
            path: path.clone(),
            message,
        })?;
    let config = probe.config.clone();
    drop(probe);
    let oracle = oracle_for(&config)?;
    let mut trainer = Trainer::from_bytes(&bytes, oracle, total_steps).map_err(|message| LabError::Format {
        path: path.clone(),
        message,
    })?;
    let cfg_path = run_dir.join(CONFIG_FILE);
    std::fs::write(&cfg_path, config.to_toml()).map_err(LabError::io(&cfg_path))?;
    let metrics = MetricsWriter::resume(
        &run_dir.join(METRICS_FILE),
        config.horizon,
        trainer.model_members(),
        trainer.counters.rows as usize,
    )?;
    let timing = TimingWriter::create(&run_dir.join(TIMING_FILE), true)?;
    finish(&mut trainer, run_dir, Sink::new(metrics, Some(timing)))
}
