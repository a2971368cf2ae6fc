use rand::Rng;
use rave_core::agent::{Batch, ReplayBuffer, Transition};
use rave_core::dynamics::{DynamicsConfig, DynamicsEnsemble, ModelMode};
use rave_core::env::{ToyEnv, ToyEnvConfig};
use rave_core::nn::Matrix;
use rave_core::rng::{self, LabRng};

/// `count` transitions of uniformly random actions on the toy task.
fn toy_data(noise: f64, count: usize, seed: u64) -> ReplayBuffer {
    let mut env = ToyEnv::new(ToyEnvConfig::with_noise(noise), seed).unwrap();
    let mut rng = rng::stream(seed, 99);
    let mut replay = ReplayBuffer::new(count).unwrap();
    let mut s = env.reset_at(0.0).position;
    for _ in 0..count {
        let a: f64 = rng.random_range(-1.0..=1.0);
        let (next, reward, terminal) = env.step_scalar(a).unwrap();
        replay.push(Transition {
            state: vec![s],
            action: vec![a],
            reward,
            next_state: vec![next.position],
            done: terminal,
        });
        s = if terminal || next.truncated {
            env.reset_at(0.0).position
        } else {
            next.position
        };
    }
    replay
}

fn trained(mode: ModelMode, members: usize, data: &ReplayBuffer, steps: usize, rng: &mut LabRng) -> DynamicsEnsemble {
    let mut cfg = DynamicsConfig::new(mode, members, 1, 1);
    cfg.hidden_width = 16;
    let mut model = DynamicsEnsemble::new(cfg, rng).unwrap();
    model
        .fit_scalers(&Batch::from_transitions(data.iter()).unwrap())
        .unwrap();
    for _ in 0..steps {
        let idx = data.sample_indices(128, rng).unwrap();
        let batch = Batch::from_transitions(idx.iter().map(|&i| data.get(i))).unwrap();
        model.train(&batch, rng).unwrap();
    }
    model
}

fn start_inputs() -> (Matrix, Matrix) {
    (Matrix::column(vec![0.0, 0.0]), Matrix::column(vec![1.0, -1.0]))
}

#[test]
fn deterministic_toy_transitions_are_learned() {
    let mut rng = rng::stream(1, 0);
    let data = toy_data(0.0, 50_000, 1);
    let model = trained(ModelMode::Probabilistic, 1, &data, 3000, &mut rng);
    let holdout = toy_data(0.0, 2000, 2);
    let batch = Batch::from_transitions(holdout.iter()).unwrap();
    let (mean, _) = model.transition_distribution(0, &batch.states, &batch.actions).unwrap();
    let err = mean
        .as_slice()
        .iter()
        .zip(batch.next_states.as_slice())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / batch.len() as f64;
    assert!(err < 0.05, "mean holdout error {err}");
}

#[test]
fn unit_noise_variance_is_recovered_at_the_start_state() {
    let mut rng = rng::stream(2, 0);
    let data = toy_data(1.0, 50_000, 3);
    let model = trained(ModelMode::Probabilistic, 1, &data, 3000, &mut rng);
    let (s, a) = start_inputs();
    let (_, var) = model.transition_distribution(0, &s, &a).unwrap();
    for v in var.as_slice() {
        assert!((v - 1.0).abs() <= 0.2, "predicted variance {v}");
    }
}

#[test]
fn disagreement_shrinks_with_more_data() {
    let (s, a) = start_inputs();
    let epistemic = |count: usize| {
        let mut rng = rng::stream(4, 0);
        let data = toy_data(1.0, count, 5);
        let model = trained(ModelMode::Probabilistic, 4, &data, 1000, &mut rng);
        model.epistemic_variance(&s, &a).unwrap().iter().sum::<f64>()
    };
    let (small, large) = (epistemic(500), epistemic(50_000));
    assert!(
        large < small,
        "epistemic variance {large} with 50k samples vs {small} with 500"
    );
}
