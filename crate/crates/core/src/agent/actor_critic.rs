use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::Batch;
use crate::dynamics::DynamicsEnsemble;
use crate::expansion::{compute_targets, Diagnostics, EstimatorKind, ExpansionConfig};
use crate::nn::loss::mse_batch;
use crate::nn::{soft_update, AdamConfig, Head, Matrix, Member, Mlp, MlpSpec};
use crate::rng::standard_normal;
use crate::{Error, Result};

/// How the critic ensemble is reduced into the actor's training signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticReduction {
    Mean,
    First,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden_width: usize,
    /// Fully connected layers of the policy and of each critic.
    pub layers: usize,
    pub critics: usize,
    /// Probability of perturbing an exploratory action.
    pub epsilon: f64,
    pub noise_std: f64,
    pub tau: f64,
    /// When set, the policy's output layer is redrawn from
    /// `U(-bound, bound)` so that initial actions sit near zero.
    pub policy_output_init: Option<f64>,
    pub actor_optimizer: AdamConfig,
    pub critic_optimizer: AdamConfig,
    pub actor_signal: CriticReduction,
}

impl AgentConfig {
    pub fn new(state_dim: usize, action_dim: usize, critics: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            hidden_width: 64,
            layers: 4,
            critics,
            epsilon: 0.05,
            noise_std: 0.1,
            tau: 0.001,
            policy_output_init: Some(3e-3),
            actor_optimizer: AdamConfig::default(),
            critic_optimizer: AdamConfig::default(),
            actor_signal: CriticReduction::Mean,
        }
    }

    pub fn policy_spec(&self) -> MlpSpec {
        MlpSpec::uniform(
            self.state_dim,
            self.hidden_width,
            self.layers,
            self.action_dim,
            Head::Tanh,
        )
    }

    pub fn critic_spec(&self) -> MlpSpec {
        MlpSpec::uniform(
            self.state_dim + self.action_dim,
            self.hidden_width,
            self.layers,
            1,
            Head::Identity,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.critics == 0 || self.layers == 0 {
            return Err(Error::Config("agent needs at least one critic and one layer".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise std must be >= 0, got {}", self.noise_std)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if let Some(b) = self.policy_output_init {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::Config(format!(
                    "policy output init bound must be positive, got {b}"
                )));
            }
        }
        self.policy_spec().validate()?;
        self.critic_spec().validate()
    }
}

/// Losses and target diagnostics of one learner step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub diagnostics: Diagnostics,
}

/// `policy(state)`, perturbed with probability `epsilon` by Gaussian noise
/// of scale `noise_std`, clamped to `[-1, 1]`. Usable on a policy snapshot
/// without the rest of the agent.
pub fn explore_action<R: Rng + ?Sized>(
    policy: &Mlp,
    state: &[f64],
    epsilon: f64,
    noise_std: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut a = policy.forward(&Matrix::from_rows(&[state])?)?.into_vec();
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        for v in &mut a {
            *v += noise_std * standard_normal(rng);
        }
    }
    for v in &mut a {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok(a)
}

/// Deterministic policy with an ensemble of critics and their delayed copies.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    config: AgentConfig,
    pub policy: Member,
    pub critics: Vec<Member>,
    pub targets: Vec<Mlp>,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut policy = Member::new(&config.policy_spec(), config.actor_optimizer, rng)?;
        if let Some(bound) = config.policy_output_init {
            policy.net.init_output_layer(bound, rng);
        }
        let critic_spec = config.critic_spec();
        let critics = (0..config.critics)
            .map(|_| Member::new(&critic_spec, config.critic_optimizer, rng))
            .collect::<Result<Vec<_>>>()?;
        let targets = critics.iter().map(|c| c.net.clone()).collect();
        Ok(Self {
            config,
            policy,
            critics,
            targets,
        })
    }

    /// Reassembles an agent from saved networks.
    pub fn from_parts(config: AgentConfig, policy: Member, critics: Vec<Member>, targets: Vec<Mlp>) -> Result<Self> {
        config.validate()?;
        let critic_spec = config.critic_spec();
        if policy.net.spec() != &config.policy_spec()
            || critics.len() != config.critics
            || targets.len() != config.critics
            || critics
                .iter()
                .map(|c| &c.net)
                .chain(&targets)
                .any(|n| n.spec() != &critic_spec)
        {
            return Err(Error::Config(
                "saved agent networks do not match the configuration".into(),
            ));
        }
        Ok(Self {
            config,
            policy,
            critics,
            targets,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    /// `pi(s)`, with probability `epsilon` perturbed by Gaussian noise when
    /// exploring; always inside `[-1, 1]`.
    pub fn select_action<R: Rng + ?Sized>(&self, state: &[f64], explore: bool, rng: &mut R) -> Result<Vec<f64>> {
        let noise = if explore { self.config.epsilon } else { 0.0 };
        explore_action(&self.policy.net, state, noise, self.config.noise_std, rng)
    }

    /// Online critic `member` at each row of `(states, actions)`.
    pub fn q_values(&self, member: usize, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        let critic = self
            .critics
            .get(member)
            .ok_or_else(|| Error::Usage(format!("critic {member} out of range")))?;
        Ok(critic.net.forward(&Matrix::hcat(&[states, actions])?)?.into_vec())
    }

    /// Ensemble-mean online critic.
    pub fn q_mean(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; states.rows()];
        for m in 0..self.critics.len() {
            for (a, q) in acc.iter_mut().zip(self.q_values(m, states, actions)?) {
                *a += q;
            }
        }
        let n = self.critics.len() as f64;
        Ok(acc.into_iter().map(|v| v / n).collect())
    }

    /// Squared TD error of critic `member` against fixed `targets` and its
    /// parameter gradient.
    pub fn td_loss_gradient(&self, member: usize, batch: &Batch, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let net = &self.critics[member].net;
        let tape = net.forward_recorded(&Matrix::hcat(&[&batch.states, &batch.actions])?)?;
        let (loss, d_out) = mse_batch(tape.output(), &Matrix::column(targets.to_vec()))?;
        Ok((loss, net.backward(&tape, &d_out)?.params))
    }

    /// `-mean_b Q(s_b, pi(s_b))` over the configured critic reduction, and its
    /// gradient with respect to the policy parameters only.
    pub fn policy_loss_gradient(&self, states: &Matrix) -> Result<(f64, Vec<f64>)> {
        let used = match self.config.actor_signal {
            CriticReduction::Mean => &self.critics[..],
            CriticReduction::First => &self.critics[..1],
        };
        let state_dim = self.config.state_dim;
        self.policy_loss_gradient_with(states, |s, a| {
            let input = Matrix::hcat(&[s, a])?;
            let n = used.len() as f64;
            let ones = Matrix::filled(s.rows(), 1, 1.0 / n);
            let mut q = vec![0.0; s.rows()];
            let mut dq = Matrix::zeros(a.rows(), a.cols());
            for critic in used {
                let tape = critic.net.forward_recorded(&input)?;
                for (acc, v) in q.iter_mut().zip(tape.output().as_slice()) {
                    *acc += v / n;
                }
                let g = critic.net.backward(&tape, &ones)?.input;
                dq = dq.add(&g.columns(state_dim, g.cols())?)?;
            }
            Ok((q, dq))
        })
    }

    /// Policy loss against an arbitrary critic returning `(Q(s, a), dQ/da)`
    /// per row.
    pub fn policy_loss_gradient_with<F>(&self, states: &Matrix, mut critic: F) -> Result<(f64, Vec<f64>)>
    where
        F: FnMut(&Matrix, &Matrix) -> Result<(Vec<f64>, Matrix)>,
    {
        let tape = self.policy.net.forward_recorded(states)?;
        let (q, dq) = critic(states, tape.output())?;
        let rows = states.rows() as f64;
        let loss = -q.iter().sum::<f64>() / rows;
        let d_actions = dq.map(|g| -g / rows);
        Ok((loss, self.policy.net.backward(&tape, &d_actions)?.params))
    }

    /// One Adam step of every critic toward the shared `targets`; returns the
    /// mean loss over members before the step.
    pub fn critic_update(&mut self, batch: &Batch, targets: &[f64]) -> Result<f64> {
        if targets.len() != batch.len() {
            return Err(Error::Dimension {
                context: "critic_update targets",
                expected: batch.len(),
                found: targets.len(),
            });
        }
        let mut total = 0.0;
        for m in 0..self.critics.len() {
            let (loss, grad) = self.td_loss_gradient(m, batch, targets)?;
            let c = &mut self.critics[m];
            c.opt.step(&mut c.net, &grad)?;
            total += loss;
        }
        Ok(total / self.critics.len() as f64)
    }

    /// One Adam step of the policy; critics are left untouched.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<f64> {
        let (loss, grad) = self.policy_loss_gradient(&batch.states)?;
        self.policy.opt.step(&mut self.policy.net, &grad)?;
        Ok(loss)
    }

    /// [`ActorCritic::actor_update`] against a caller-supplied critic.
    pub fn actor_update_with<F>(&mut self, states: &Matrix, critic: F) -> Result<f64>
    where
        F: FnMut(&Matrix, &Matrix) -> Result<(Vec<f64>, Matrix)>,
    {
        let (loss, grad) = self.policy_loss_gradient_with(states, critic)?;
        self.policy.opt.step(&mut self.policy.net, &grad)?;
        Ok(loss)
    }

    pub fn target_sync(&mut self, tau: f64) -> Result<()> {
        for (t, c) in self.targets.iter_mut().zip(&self.critics) {
            soft_update(t, &c.net, tau)?;
        }
        Ok(())
    }

    /// Target computation, critic step, actor step and target blending.
    pub fn learn<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        dynamics: Option<&DynamicsEnsemble>,
        expansion: &ExpansionConfig,
        rng: &mut R,
    ) -> Result<StepReport> {
        if matches!(expansion.estimator, EstimatorKind::Steve | EstimatorKind::Rave)
            && self.critics.len() != expansion.members
        {
            return Err(Error::Config(format!(
                "{} needs {} critics, agent has {}",
                expansion.estimator.name(),
                expansion.members,
                self.critics.len()
            )));
        }
        let targets = compute_targets(batch, &self.policy.net, &self.targets, dynamics, expansion, rng)?;
        let critic_loss = self.critic_update(batch, &targets.values)?;
        let actor_loss = self.actor_update(batch)?;
        self.target_sync(self.config.tau)?;
        Ok(StepReport {
            critic_loss,
            actor_loss,
            diagnostics: targets.diagnostics,
        })
    }
}
