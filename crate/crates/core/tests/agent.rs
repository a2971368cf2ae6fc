use rand::Rng;
use rave_core::agent::{ActorCritic, AgentConfig, Batch, CriticReduction};
use rave_core::expansion::{td0_targets, EstimatorKind, ExpansionConfig};
use rave_core::nn::loss::{gaussian_nll_batch, mse_batch};
use rave_core::nn::{Adam, AdamConfig, Head, Matrix, Mlp, MlpSpec};
use rave_core::rng::{self, LabRng};

fn agent(critics: usize, seed: u64) -> (ActorCritic, LabRng) {
    let mut cfg = AgentConfig::new(1, 1, critics);
    cfg.hidden_width = 8;
    let mut rng = rng::stream(seed, 0);
    (ActorCritic::new(cfg, &mut rng).unwrap(), rng)
}

fn batch(rows: usize, rng: &mut LabRng) -> Batch {
    let col =
        |rng: &mut LabRng, lo: f64, hi: f64| Matrix::column((0..rows).map(|_| rng.random_range(lo..hi)).collect());
    Batch {
        states: col(rng, -5.0, 5.0),
        actions: col(rng, -1.0, 1.0),
        rewards: (0..rows).map(|_| rng.random_range(-10.0..10.0)).collect(),
        next_states: col(rng, -5.0, 5.0),
        dones: (0..rows)
            .map(|_| if rng.random::<f64>() < 0.2 { 1.0 } else { 0.0 })
            .collect(),
    }
}

const FD_STEP: f64 = 1e-4;

/// Central differences of `loss` over every parameter of `net`.
///
/// Returns `None` when the step straddles a ReLU kink, detected as
/// disagreement with a ten times smaller step; such instances are redrawn.
fn numeric_gradient(net: &Mlp, mut loss: impl FnMut(&Mlp) -> f64) -> Option<Vec<f64>> {
    let coarse = differences(net, &mut loss, FD_STEP);
    let fine = differences(net, &mut loss, FD_STEP / 10.0);
    (relative_error(&coarse, &fine) < 1e-6).then_some(coarse)
}

fn differences(net: &Mlp, loss: &mut impl FnMut(&Mlp) -> f64, h: f64) -> Vec<f64> {
    let mut probe = net.clone();
    (0..net.params().len())
        .map(|i| {
            let base = net.params()[i];
            probe.params_mut()[i] = base + h;
            let up = loss(&probe);
            probe.params_mut()[i] = base - h;
            let down = loss(&probe);
            probe.params_mut()[i] = base;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm(a).max(norm(b)).max(1e-12)
}

/// Asserts `analytic` vs central differences on ten kink-free instances.
fn check_gradients(mut instance: impl FnMut(u64) -> (Vec<f64>, Option<Vec<f64>>)) {
    let mut checked = 0;
    for seed in 0..100 {
        let (analytic, numeric) = instance(seed);
        let Some(numeric) = numeric else { continue };
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
        checked += 1;
        if checked == 10 {
            return;
        }
    }
    panic!("only {checked} kink-free instances in 100 draws");
}

#[test]
fn td_loss_gradient_matches_finite_differences() {
    check_gradients(|seed| {
        let (ac, mut rng) = agent(2, seed);
        let b = batch(16, &mut rng);
        let targets: Vec<f64> = (0..16).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (_, analytic) = ac.td_loss_gradient(1, &b, &targets).unwrap();
        let input = Matrix::hcat(&[&b.states, &b.actions]).unwrap();
        let y = Matrix::column(targets);
        let numeric = numeric_gradient(&ac.critics[1].net, |net| {
            mse_batch(&net.forward(&input).unwrap(), &y).unwrap().0
        });
        (analytic, numeric)
    });
}

#[test]
fn policy_loss_gradient_matches_finite_differences() {
    check_gradients(|seed| {
        let (ac, mut rng) = agent(3, 100 + seed);
        let b = batch(16, &mut rng);
        let (loss, analytic) = ac.policy_loss_gradient(&b.states).unwrap();
        let recompute = |policy: &Mlp| {
            let a = policy.forward(&b.states).unwrap();
            let input = Matrix::hcat(&[&b.states, &a]).unwrap();
            let mut total = 0.0;
            for c in &ac.critics {
                total += c.net.forward(&input).unwrap().as_slice().iter().sum::<f64>();
            }
            -total / (16.0 * ac.critics.len() as f64)
        };
        assert!((loss - recompute(&ac.policy.net)).abs() < 1e-12);
        (analytic, numeric_gradient(&ac.policy.net, recompute))
    });
}

#[test]
fn gaussian_nll_gradient_matches_finite_differences() {
    check_gradients(|seed| {
        let mut rng = rng::stream(200 + seed, 0);
        let net = Mlp::new(&MlpSpec::uniform(3, 8, 3, 2, Head::Gaussian), &mut rng).unwrap();
        let x = Matrix::from_vec(12, 3, (0..36).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let y = Matrix::from_vec(12, 2, (0..24).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let nll = |out: &Matrix| {
            let mean = out.columns(0, 2).unwrap();
            let var = out.columns(2, 4).unwrap();
            gaussian_nll_batch(&mean, &var, &y).unwrap()
        };
        let tape = net.forward_recorded(&x).unwrap();
        let (_, dm, dv) = nll(tape.output());
        let d_out = Matrix::hcat(&[&dm, &dv]).unwrap();
        let analytic = net.backward(&tape, &d_out).unwrap().params;
        (analytic, numeric_gradient(&net, |n| nll(&n.forward(&x).unwrap()).0))
    });
}

#[test]
fn action_selection_contract() {
    let (mut ac, mut rng) = agent(1, 1);
    let s = [0.7];
    let greedy = ac.select_action(&s, false, &mut rng).unwrap();
    assert_eq!(
        greedy,
        ac.policy
            .net
            .forward(&Matrix::from_rows(&[&s]).unwrap())
            .unwrap()
            .into_vec()
    );

    let mut cfg = ac.config().clone();
    cfg.epsilon = 0.0;
    let zero_eps =
        ActorCritic::from_parts(cfg.clone(), ac.policy.clone(), ac.critics.clone(), ac.targets.clone()).unwrap();
    for _ in 0..100 {
        assert_eq!(zero_eps.select_action(&s, true, &mut rng).unwrap(), greedy);
    }
    cfg.epsilon = 1.0;
    cfg.noise_std = 0.0;
    let silent =
        ActorCritic::from_parts(cfg.clone(), ac.policy.clone(), ac.critics.clone(), ac.targets.clone()).unwrap();
    assert_eq!(silent.select_action(&s, true, &mut rng).unwrap(), greedy);

    cfg.noise_std = 10.0;
    ac = ActorCritic::from_parts(cfg, ac.policy.clone(), ac.critics.clone(), ac.targets.clone()).unwrap();
    let mut moved = false;
    for _ in 0..100 {
        let a = ac.select_action(&s, true, &mut rng).unwrap()[0];
        assert!((-1.0..=1.0).contains(&a));
        moved |= a != greedy[0];
    }
    assert!(moved);
}

#[test]
fn critic_at_its_targets_does_not_move() {
    let (ac, mut rng) = agent(2, 2);
    let b = batch(8, &mut rng);
    let targets = ac.q_values(0, &b.states, &b.actions).unwrap();
    let before = ac.critics[0].net.params().to_vec();
    let loss = ac.td_loss_gradient(0, &b, &targets).unwrap().0;
    assert_eq!(loss, 0.0);
    let mut single = ac.clone();
    single.critics.truncate(1);
    single.critic_update(&b, &targets).unwrap();
    assert_eq!(single.critics[0].net.params(), &before[..]);
    assert_eq!(single.critics[0].opt.steps(), 1);
}

#[test]
fn terminal_td0_target_is_the_reward() {
    let (ac, mut rng) = agent(1, 3);
    let mut b = batch(1, &mut rng);
    b.dones[0] = 1.0;
    let t = td0_targets(&b, &ac.policy.net, &ac.targets, 0.99).unwrap();
    assert_eq!(t, b.rewards);
}

#[test]
fn policy_climbs_a_fixed_quadratic_critic() {
    let (mut ac, mut rng) = agent(1, 4);
    let states = Matrix::column((0..32).map(|_| rng.random_range(-5.0..5.0)).collect());
    let quadratic = |_: &Matrix, a: &Matrix| {
        let q = a.as_slice().iter().map(|x| -(x - 0.3) * (x - 0.3)).collect();
        Ok((q, a.map(|x| -2.0 * (x - 0.3))))
    };
    for _ in 0..3000 {
        ac.actor_update_with(&states, quadratic).unwrap();
    }
    let a = ac.policy.net.forward(&states).unwrap();
    for v in a.as_slice() {
        assert!((v - 0.3).abs() < 0.01, "{v}");
    }

    let constant = |s: &Matrix, a: &Matrix| Ok((vec![4.0; s.rows()], Matrix::zeros(a.rows(), a.cols())));
    let (_, grad) = ac.policy_loss_gradient_with(&states, constant).unwrap();
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn targets_track_frozen_critics() {
    let (mut ac, _) = agent(2, 5);
    let mut rng = rng::stream(77, 0);
    for c in &mut ac.critics {
        for p in c.net.params_mut() {
            *p += rng.random_range(-1.0..1.0);
        }
    }
    let initial: Vec<Vec<f64>> = ac.targets.iter().map(|t| t.params().to_vec()).collect();
    for _ in 0..1000 {
        ac.target_sync(0.005).unwrap();
    }
    for ((t, c), t0) in ac.targets.iter().zip(&ac.critics).zip(&initial) {
        assert_eq!(t.spec(), c.net.spec());
        for ((x, o), x0) in t.params().iter().zip(c.net.params()).zip(t0) {
            assert!((x - o).abs() <= 0.01 * (x0 - o).abs() + 1e-12);
        }
    }
    ac.target_sync(1.0).unwrap();
    for (t, c) in ac.targets.iter().zip(&ac.critics) {
        assert_eq!(t.params(), c.net.params());
    }
}

#[test]
fn actor_and_critic_updates_are_isolated() {
    let (mut ac, mut rng) = agent(2, 6);
    let b = batch(8, &mut rng);
    let critics: Vec<Vec<f64>> = ac.critics.iter().map(|c| c.net.params().to_vec()).collect();
    ac.actor_update(&b).unwrap();
    for (c, before) in ac.critics.iter().zip(&critics) {
        assert_eq!(c.net.params(), &before[..]);
    }
    let policy = ac.policy.net.params().to_vec();
    ac.critic_update(&b, &[1.0; 8]).unwrap();
    assert_eq!(ac.policy.net.params(), &policy[..]);
}

#[test]
fn td0_learner_step_is_textbook_ddpg() {
    let (mut ac, mut rng) = agent(1, 8);
    let b = batch(32, &mut rng);
    let gamma = 0.99;

    // Direct implementation on copies of the networks.
    let pi = ac.policy.net.clone();
    let mut q = ac.critics[0].net.clone();
    let mut q_target = ac.targets[0].clone();
    let mut pi_new = pi.clone();
    let mut q_opt = Adam::new(AdamConfig::default(), &q);
    let mut pi_opt = Adam::new(AdamConfig::default(), &pi);
    let a_next = pi.forward(&b.next_states).unwrap();
    let q_next = q_target
        .forward(&Matrix::hcat(&[&b.next_states, &a_next]).unwrap())
        .unwrap();
    let y: Vec<f64> = (0..32)
        .map(|i| b.rewards[i] + (gamma * (1.0 - b.dones[i])) * q_next.get(i, 0))
        .collect();
    let tape = q
        .forward_recorded(&Matrix::hcat(&[&b.states, &b.actions]).unwrap())
        .unwrap();
    let (_, d) = mse_batch(tape.output(), &Matrix::column(y)).unwrap();
    let g = q.backward(&tape, &d).unwrap().params;
    q_opt.step(&mut q, &g).unwrap();
    let p_tape = pi_new.forward_recorded(&b.states).unwrap();
    let q_tape = q
        .forward_recorded(&Matrix::hcat(&[&b.states, p_tape.output()]).unwrap())
        .unwrap();
    let dq = q.backward(&q_tape, &Matrix::filled(32, 1, 1.0)).unwrap().input;
    let da = dq.columns(1, 2).unwrap().map(|v| -v / 32.0);
    let gp = pi_new.backward(&p_tape, &da).unwrap().params;
    pi_opt.step(&mut pi_new, &gp).unwrap();
    rave_core::nn::soft_update(&mut q_target, &q, ac.config().tau).unwrap();

    let cfg = ExpansionConfig {
        estimator: EstimatorKind::Td0,
        members: 1,
        gamma,
        ..Default::default()
    };
    ac.learn(&b, None, &cfg, &mut rng).unwrap();
    assert_eq!(ac.critics[0].net.params(), q.params());
    assert_eq!(ac.policy.net.params(), pi_new.params());
    assert_eq!(ac.targets[0].params(), q_target.params());
}

#[test]
fn ensemble_estimators_need_matching_critics() {
    let (mut ac, mut rng) = agent(2, 9);
    let b = batch(4, &mut rng);
    let cfg = ExpansionConfig {
        estimator: EstimatorKind::Steve,
        members: 4,
        ..Default::default()
    };
    assert!(matches!(
        ac.learn(&b, None, &cfg, &mut rng),
        Err(rave_core::Error::Config(_))
    ));
    let mut first = ac.config().clone();
    first.actor_signal = CriticReduction::First;
    assert!(first.validate().is_ok());
}
