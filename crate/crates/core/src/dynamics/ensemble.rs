use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::Scaler;
use crate::agent::Batch;
use crate::nn::loss::{gaussian_nll_batch, mse_batch};
use crate::nn::{AdamConfig, Head, Matrix, Member, Mlp, MlpSpec};
use crate::rng::standard_normal;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelMode {
    /// Mean-only networks trained on squared error.
    Deterministic,
    /// Mean and variance heads trained on the Gaussian NLL.
    Probabilistic,
}

/// How a sampled termination value becomes a continuation weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationSampling {
    /// Clip the Gaussian draw into `[0, 1]` and use it as a soft weight.
    Clip,
    /// Round the Gaussian draw to 0 or 1 at 0.5.
    Threshold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsConfig {
    pub mode: ModelMode,
    pub members: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden_width: usize,
    /// Fully connected layers of the transition network.
    pub transition_layers: usize,
    /// Fully connected layers of the reward and termination networks.
    pub model_layers: usize,
    pub optimizer: AdamConfig,
    pub termination_sampling: TerminationSampling,
}

impl DynamicsConfig {
    pub fn new(mode: ModelMode, members: usize, state_dim: usize, action_dim: usize) -> Self {
        Self {
            mode,
            members,
            state_dim,
            action_dim,
            hidden_width: 64,
            transition_layers: 8,
            model_layers: 4,
            optimizer: AdamConfig::default(),
            termination_sampling: TerminationSampling::Clip,
        }
    }

    fn head(&self) -> Head {
        match self.mode {
            ModelMode::Deterministic => Head::Identity,
            ModelMode::Probabilistic => Head::Gaussian,
        }
    }

    pub fn transition_spec(&self) -> MlpSpec {
        let (s, a) = (self.state_dim, self.action_dim);
        MlpSpec::uniform(s + a, self.hidden_width, self.transition_layers, s, self.head())
    }

    pub fn reward_spec(&self) -> MlpSpec {
        let (s, a) = (self.state_dim, self.action_dim);
        MlpSpec::uniform(2 * s + a, self.hidden_width, self.model_layers, 1, self.head())
    }

    pub fn termination_spec(&self) -> MlpSpec {
        MlpSpec::uniform(self.state_dim, self.hidden_width, self.model_layers, 1, self.head())
    }

    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(Error::Config("dynamics ensemble needs at least one member".into()));
        }
        if self.transition_layers == 0 || self.model_layers == 0 {
            return Err(Error::Config("dynamics networks need at least one layer".into()));
        }
        self.transition_spec().validate()?;
        self.reward_spec().validate()?;
        self.termination_spec().validate()
    }
}

/// One optimizer step on `(input, target)`; returns the loss before the step.
fn fit(member: &mut Member, mode: ModelMode, input: &Matrix, target: &Matrix) -> Result<f64> {
    let tape = member.net.forward_recorded(input)?;
    let out = tape.output();
    let d = target.cols();
    let (loss, d_out) = match mode {
        ModelMode::Deterministic => mse_batch(out, target)?,
        ModelMode::Probabilistic => {
            let mean = out.columns(0, d)?;
            let var = out.columns(d, 2 * d)?;
            let (loss, d_mean, d_var) = gaussian_nll_batch(&mean, &var, target)?;
            (loss, Matrix::hcat(&[&d_mean, &d_var])?)
        }
    };
    let grads = member.net.backward(&tape, &d_out)?;
    member.opt.step(&mut member.net, &grads.params)?;
    Ok(loss)
}

/// Per-member training losses of one [`DynamicsEnsemble::train`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemberLoss {
    pub transition: f64,
    pub reward: f64,
    pub termination: f64,
}

impl MemberLoss {
    pub fn total(&self) -> f64 {
        self.transition + self.reward + self.termination
    }
}

/// Input and output standardisation shared by all members.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalers {
    pub transition_in: Scaler,
    /// Over the state delta `s' - s`.
    pub transition_out: Scaler,
    pub reward_in: Scaler,
    pub reward_out: Scaler,
    pub termination_in: Scaler,
}

impl Scalers {
    fn identity(cfg: &DynamicsConfig) -> Self {
        let (s, a) = (cfg.state_dim, cfg.action_dim);
        Self {
            transition_in: Scaler::identity(s + a),
            transition_out: Scaler::identity(s),
            reward_in: Scaler::identity(2 * s + a),
            reward_out: Scaler::identity(1),
            termination_in: Scaler::identity(s),
        }
    }
}

/// Ensembles of transition, reward and termination models.
///
/// Member `i` of the transition model is always paired with member `i` of
/// the termination model. The transition networks predict the state delta.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsEnsemble {
    config: DynamicsConfig,
    pub transition: Vec<Member>,
    pub reward: Vec<Member>,
    pub termination: Vec<Member>,
    pub scalers: Scalers,
}

impl DynamicsEnsemble {
    pub fn new<R: Rng + ?Sized>(config: DynamicsConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let opt = config.optimizer;
        let build = |spec: MlpSpec, rng: &mut R| -> Result<Vec<Member>> {
            (0..config.members).map(|_| Member::new(&spec, opt, rng)).collect()
        };
        let transition = build(config.transition_spec(), rng)?;
        let reward = build(config.reward_spec(), rng)?;
        let termination = build(config.termination_spec(), rng)?;
        let scalers = Scalers::identity(&config);
        Ok(Self {
            config,
            transition,
            reward,
            termination,
            scalers,
        })
    }

    /// Reassembles an ensemble from saved members.
    pub fn from_parts(
        config: DynamicsConfig,
        transition: Vec<Member>,
        reward: Vec<Member>,
        termination: Vec<Member>,
        scalers: Scalers,
    ) -> Result<Self> {
        config.validate()?;
        for (group, spec) in [
            (&transition, config.transition_spec()),
            (&reward, config.reward_spec()),
            (&termination, config.termination_spec()),
        ] {
            if group.len() != config.members || group.iter().any(|m| m.net.spec() != &spec) {
                return Err(Error::Config(
                    "saved dynamics members do not match the configuration".into(),
                ));
            }
        }
        Ok(Self {
            config,
            transition,
            reward,
            termination,
            scalers,
        })
    }

    pub fn config(&self) -> &DynamicsConfig {
        &self.config
    }

    pub fn members(&self) -> usize {
        self.config.members
    }

    pub fn mode(&self) -> ModelMode {
        self.config.mode
    }

    fn check_member(&self, i: usize) -> Result<()> {
        if i < self.config.members {
            Ok(())
        } else {
            Err(Error::Usage(format!(
                "member {i} out of range for an ensemble of {}",
                self.config.members
            )))
        }
    }

    /// Fits the input/output standardisation to `batch`.
    pub fn fit_scalers(&mut self, batch: &Batch) -> Result<()> {
        let sa = Matrix::hcat(&[&batch.states, &batch.actions])?;
        let delta = batch.next_states.sub(&batch.states)?;
        let sas = Matrix::hcat(&[&batch.states, &batch.actions, &batch.next_states])?;
        self.scalers = Scalers {
            transition_in: Scaler::fit(&sa),
            transition_out: Scaler::fit(&delta),
            reward_in: Scaler::fit(&sas),
            reward_out: Scaler::fit(&Matrix::column(batch.rewards.clone())),
            termination_in: Scaler::fit(&batch.next_states),
        };
        Ok(())
    }

    /// Runs `net` and splits its output into data-unit mean and variance.
    fn distribution(&self, net: &Mlp, input: &Matrix, out_scaler: Option<&Scaler>) -> Result<(Matrix, Matrix)> {
        let out = net.forward(input)?;
        let d = net.output_width();
        let (mut mean, mut var) = match self.config.mode {
            ModelMode::Deterministic => (out, Matrix::zeros(input.rows(), d)),
            ModelMode::Probabilistic => (out.columns(0, d)?, out.columns(d, 2 * d)?),
        };
        if let Some(s) = out_scaler {
            s.denormalize_in_place(mean.as_mut_slice());
            s.denormalize_variance_in_place(var.as_mut_slice());
        }
        Ok((mean, var))
    }

    /// Mean and variance of the next state under transition member `i`.
    pub fn transition_distribution(&self, i: usize, states: &Matrix, actions: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_member(i)?;
        let input = self.scalers.transition_in.normalize(&Matrix::hcat(&[states, actions])?);
        let (delta, var) = self.distribution(&self.transition[i].net, &input, Some(&self.scalers.transition_out))?;
        Ok((states.add(&delta)?, var))
    }

    /// Next state from member `i`: a Gaussian draw when `sample` is set and
    /// the ensemble is probabilistic, the mean otherwise.
    pub fn predict_transition<R: Rng + ?Sized>(
        &self,
        i: usize,
        states: &Matrix,
        actions: &Matrix,
        sample: bool,
        rng: &mut R,
    ) -> Result<Matrix> {
        let (mut mean, var) = self.transition_distribution(i, states, actions)?;
        if sample && self.config.mode == ModelMode::Probabilistic {
            draw_in_place(mean.as_mut_slice(), var.as_slice(), rng);
        }
        Ok(mean)
    }

    pub fn reward_distribution(
        &self,
        j: usize,
        states: &Matrix,
        actions: &Matrix,
        next_states: &Matrix,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_member(j)?;
        let input = self
            .scalers
            .reward_in
            .normalize(&Matrix::hcat(&[states, actions, next_states])?);
        let (mean, var) = self.distribution(&self.reward[j].net, &input, Some(&self.scalers.reward_out))?;
        Ok((mean.into_vec(), var.into_vec()))
    }

    pub fn predict_reward<R: Rng + ?Sized>(
        &self,
        j: usize,
        states: &Matrix,
        actions: &Matrix,
        next_states: &Matrix,
        sample: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let (mut mean, var) = self.reward_distribution(j, states, actions, next_states)?;
        if sample && self.config.mode == ModelMode::Probabilistic {
            draw_in_place(&mut mean, &var, rng);
        }
        Ok(mean)
    }

    /// Raw (unclipped) termination mean and variance of member `i`.
    pub fn termination_distribution(&self, i: usize, next_states: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_member(i)?;
        let input = self.scalers.termination_in.normalize(next_states);
        let (mean, var) = self.distribution(&self.termination[i].net, &input, None)?;
        Ok((mean.into_vec(), var.into_vec()))
    }

    /// Termination probability in `[0, 1]` from member `i`, optionally
    /// sampled, then clipped or thresholded per the configuration.
    pub fn predict_termination<R: Rng + ?Sized>(
        &self,
        i: usize,
        next_states: &Matrix,
        sample: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let (mut d, var) = self.termination_distribution(i, next_states)?;
        if sample && self.config.mode == ModelMode::Probabilistic {
            draw_in_place(&mut d, &var, rng);
        }
        for v in &mut d {
            *v = match self.config.termination_sampling {
                TerminationSampling::Clip => v.clamp(0.0, 1.0),
                TerminationSampling::Threshold => {
                    if *v >= 0.5 {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
        }
        Ok(d)
    }

    /// Ensemble average of the members' mean next-state predictions.
    pub fn mean_transition(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
        let mut acc = Matrix::zeros(states.rows(), states.cols());
        for i in 0..self.config.members {
            let (mean, _) = self.transition_distribution(i, states, actions)?;
            acc = acc.add(&mean)?;
        }
        let n = self.config.members as f64;
        Ok(acc.map(|v| v / n))
    }

    /// Disagreement of the members' mean next-state predictions: population
    /// variance across members, summed over state dimensions, per row.
    pub fn epistemic_variance(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        let means = (0..self.config.members)
            .map(|i| self.transition_distribution(i, states, actions).map(|d| d.0))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(states.rows());
        let mut column = Vec::with_capacity(means.len());
        for r in 0..states.rows() {
            let mut total = 0.0;
            for c in 0..states.cols() {
                column.clear();
                column.extend(means.iter().map(|m| m.get(r, c)));
                total += super::ensemble_stats(&column)?.1;
            }
            out.push(total);
        }
        Ok(out)
    }

    /// Mean predicted aleatoric variance of the next state, averaged over members.
    pub fn aleatoric_variance(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
        let mut acc = Matrix::zeros(states.rows(), states.cols());
        for i in 0..self.config.members {
            let (_, var) = self.transition_distribution(i, states, actions)?;
            acc = acc.add(&var)?;
        }
        let n = self.config.members as f64;
        Ok(acc.map(|v| v / n))
    }

    /// One optimizer step for every network of every member, each member on
    /// its own bootstrap resample of `batch`.
    pub fn train<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<Vec<MemberLoss>> {
        if batch.is_empty() {
            return Err(Error::Usage("cannot train dynamics on an empty batch".into()));
        }
        let mode = self.config.mode;
        let n = batch.len();
        let mut losses = Vec::with_capacity(self.config.members);
        for m in 0..self.config.members {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let view = batch.select(&idx);
            let sa = self
                .scalers
                .transition_in
                .normalize(&Matrix::hcat(&[&view.states, &view.actions])?);
            let delta = self
                .scalers
                .transition_out
                .normalize(&view.next_states.sub(&view.states)?);
            let sas =
                self.scalers
                    .reward_in
                    .normalize(&Matrix::hcat(&[&view.states, &view.actions, &view.next_states])?);
            let rewards = self.scalers.reward_out.normalize(&Matrix::column(view.rewards.clone()));
            let s2 = self.scalers.termination_in.normalize(&view.next_states);
            let dones = Matrix::column(view.dones.clone());
            losses.push(MemberLoss {
                transition: fit(&mut self.transition[m], mode, &sa, &delta)?,
                reward: fit(&mut self.reward[m], mode, &sas, &rewards)?,
                termination: fit(&mut self.termination[m], mode, &s2, &dones)?,
            });
        }
        Ok(losses)
    }
}

fn draw_in_place<R: Rng + ?Sized>(mean: &mut [f64], var: &[f64], rng: &mut R) {
    for (m, v) in mean.iter_mut().zip(var) {
        *m += libm::sqrt(*v) * standard_normal(rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Transition;
    use crate::rng::{self, LabRng};
    use alloc::vec;

    fn ensemble(mode: ModelMode, members: usize, seed: u64) -> (DynamicsEnsemble, LabRng) {
        let mut cfg = DynamicsConfig::new(mode, members, 1, 1);
        cfg.hidden_width = 16;
        let mut rng = rng::stream(seed, 0);
        (DynamicsEnsemble::new(cfg, &mut rng).unwrap(), rng)
    }

    /// Zeroes the last layer of `net` and sets the output biases.
    fn pin_output(net: &mut Mlp, biases: &[f64]) {
        let k = biases.len();
        let last_in = *net.spec().hidden.last().unwrap_or(&net.spec().input);
        let n = net.params().len();
        let params = net.params_mut();
        for p in &mut params[n - k - last_in * k..n - k] {
            *p = 0.0;
        }
        params[n - k..].copy_from_slice(biases);
    }

    fn col(v: &[f64]) -> Matrix {
        Matrix::column(v.to_vec())
    }

    #[test]
    fn floored_variance_sample_matches_mean() {
        let (mut ens, mut rng) = ensemble(ModelMode::Probabilistic, 1, 1);
        pin_output(&mut ens.transition[0].net, &[0.25, -1e4]);
        let s = col(&[0.5; 1000]);
        let a = col(&[1.0; 1000]);
        let mean = ens.predict_transition(0, &s, &a, false, &mut rng).unwrap();
        let draw = ens.predict_transition(0, &s, &a, true, &mut rng).unwrap();
        assert!(mean.as_slice().iter().all(|&m| (m - 0.75).abs() < 1e-12));
        for (d, m) in draw.as_slice().iter().zip(mean.as_slice()) {
            assert!((d - m).abs() < 1e-2);
        }
    }

    #[test]
    fn deterministic_sampling_is_the_mean() {
        let (ens, mut rng) = ensemble(ModelMode::Deterministic, 2, 2);
        let s = col(&[0.1, -2.0]);
        let a = col(&[1.0, -1.0]);
        let x = ens.predict_transition(1, &s, &a, true, &mut rng).unwrap();
        let y = ens.predict_transition(1, &s, &a, false, &mut rng).unwrap();
        assert_eq!(x, y);
        let r1 = ens.predict_reward(0, &s, &a, &x, true, &mut rng).unwrap();
        let r2 = ens.reward_distribution(0, &s, &a, &x).unwrap().0;
        assert_eq!(r1, r2);
    }

    #[test]
    fn seeded_samples_repeat() {
        let (ens, _) = ensemble(ModelMode::Probabilistic, 2, 3);
        let s = col(&[0.0, 1.0, 2.0]);
        let a = col(&[1.0, 1.0, -1.0]);
        let mut r1 = rng::stream(99, 1);
        let mut r2 = rng::stream(99, 1);
        assert_eq!(
            ens.predict_transition(1, &s, &a, true, &mut r1).unwrap(),
            ens.predict_transition(1, &s, &a, true, &mut r2).unwrap()
        );
    }

    #[test]
    fn zero_reward_net_predicts_zero() {
        let (mut ens, mut rng) = ensemble(ModelMode::Deterministic, 1, 4);
        let p = ens.reward[0].net.params_mut();
        p.iter_mut().for_each(|v| *v = 0.0);
        let s = col(&[0.3]);
        let r = ens.predict_reward(0, &s, &s, &s, true, &mut rng).unwrap();
        assert_eq!(r, vec![0.0]);
    }

    #[test]
    fn sampled_rewards_center_on_head_mean() {
        let (mut ens, mut rng) = ensemble(ModelMode::Probabilistic, 1, 5);
        pin_output(&mut ens.reward[0].net, &[2.0, libm::log(4.0)]);
        let n = 10_000;
        let s = col(&vec![0.0; n]);
        let (mean, var) = ens.reward_distribution(0, &s, &s, &s).unwrap();
        let draws = ens.predict_reward(0, &s, &s, &s, true, &mut rng).unwrap();
        let avg = draws.iter().sum::<f64>() / n as f64;
        let stderr = libm::sqrt(var[0] / n as f64);
        assert!((avg - mean[0]).abs() < 3.0 * stderr, "avg {avg} mean {}", mean[0]);
    }

    #[test]
    fn termination_is_clipped() {
        let (mut ens, mut rng) = ensemble(ModelMode::Probabilistic, 1, 6);
        let s = col(&[3.0]);
        pin_output(&mut ens.termination[0].net, &[0.0, -1e4]);
        let d = ens.predict_termination(0, &s, true, &mut rng).unwrap()[0];
        assert!(d.abs() < 1e-2);
        pin_output(&mut ens.termination[0].net, &[1.5, -1e4]);
        assert_eq!(ens.predict_termination(0, &s, true, &mut rng).unwrap(), vec![1.0]);

        let (mut det, mut rng) = ensemble(ModelMode::Deterministic, 1, 6);
        pin_output(&mut det.termination[0].net, &[0.5]);
        assert_eq!(det.predict_termination(0, &s, true, &mut rng).unwrap(), vec![0.5]);
    }

    #[test]
    fn threshold_switch_rounds() {
        let mut cfg = DynamicsConfig::new(ModelMode::Deterministic, 1, 1, 1);
        cfg.hidden_width = 8;
        cfg.termination_sampling = TerminationSampling::Threshold;
        let mut rng = rng::stream(0, 0);
        let mut ens = DynamicsEnsemble::new(cfg, &mut rng).unwrap();
        pin_output(&mut ens.termination[0].net, &[0.7]);
        assert_eq!(
            ens.predict_termination(0, &col(&[0.0]), false, &mut rng).unwrap(),
            vec![1.0]
        );
    }

    #[test]
    fn member_index_is_checked() {
        let (ens, mut rng) = ensemble(ModelMode::Deterministic, 2, 7);
        let s = col(&[0.0]);
        assert!(matches!(
            ens.predict_transition(2, &s, &s, false, &mut rng),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn nll_decreases_on_constant_targets() {
        let (mut ens, mut rng) = ensemble(ModelMode::Probabilistic, 2, 8);
        let items: Vec<Transition> = (0..32)
            .map(|i| Transition {
                state: vec![i as f64 * 0.1 - 1.6],
                action: vec![1.0],
                reward: 3.0,
                next_state: vec![i as f64 * 0.1 - 0.6],
                done: false,
            })
            .collect();
        let batch = Batch::from_transitions(&items).unwrap();
        let first = ens.train(&batch, &mut rng).unwrap();
        let mut last = first.clone();
        for _ in 0..100 {
            last = ens.train(&batch, &mut rng).unwrap();
        }
        for (a, b) in first.iter().zip(&last) {
            assert!(b.total() < a.total(), "{a:?} -> {b:?}");
        }
    }

    #[test]
    fn empty_batch_is_usage_error() {
        let (mut ens, mut rng) = ensemble(ModelMode::Deterministic, 1, 9);
        let empty = Batch {
            states: Matrix::zeros(0, 1),
            actions: Matrix::zeros(0, 1),
            rewards: vec![],
            next_states: Matrix::zeros(0, 1),
            dones: vec![],
        };
        assert!(matches!(ens.train(&empty, &mut rng), Err(Error::Usage(_))));
    }

    #[test]
    fn single_deterministic_member_rollouts_repeat_bitwise() {
        let (ens, _) = ensemble(ModelMode::Deterministic, 1, 10);
        let roll = |seed| {
            let mut rng = rng::stream(seed, 0);
            let mut s = col(&[0.0]);
            let mut trace = Vec::new();
            for _ in 0..5 {
                s = ens.predict_transition(0, &s, &col(&[1.0]), true, &mut rng).unwrap();
                trace.push(s.get(0, 0).to_bits());
            }
            trace
        };
        assert_eq!(roll(1), roll(2));
    }
}
