use magcool_core::{BipartiteParams, EnvConfig};
use magcool_sac::agent::{actor_loss_grad, critic_loss_grad, critic_target, squash};
use magcool_sac::nn::Mlp;
use magcool_sac::{
    ActionMode, AgentCheckpoint, Batch, Hyperparams, ReplayBuffer, SacAgent, SacError, Transition,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_hp() -> Hyperparams {
    Hyperparams {
        hidden: vec![8, 8],
        batch_size: 16,
        buffer_capacity: 1000,
        warmup_steps: 0,
        ..Hyperparams::default()
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

fn fd_gradient(net: &mut Mlp, loss: impl Fn(&Mlp) -> f64) -> Vec<f64> {
    let h = 1e-6;
    (0..net.n_params())
        .map(|i| {
            let p = net.param(i);
            net.set_param(i, p + h);
            let up = loss(net);
            net.set_param(i, p - h);
            let down = loss(net);
            net.set_param(i, p);
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut q = Mlp::new(&[5, 8, 8, 1], &mut rng);
    let obs = random_matrix(&mut rng, 100, 3);
    let act = random_matrix(&mut rng, 100, 2);
    let y = DVector::from_fn(100, |_, _| rng.random_range(-2.0..2.0));
    let (_, g) = critic_loss_grad(&q, &obs, &act, &y);
    let fd = fd_gradient(&mut q, |n| critic_loss_grad(n, &obs, &act, &y).0);
    let gap = relative_gap(&fd, &g.flat());
    assert!(gap < 1e-4, "relative gap {gap:e}");
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut policy = Mlp::new(&[3, 8, 8, 4], &mut rng);
    let q1 = Mlp::new(&[5, 8, 8, 1], &mut rng);
    let q2 = Mlp::new(&[5, 8, 8, 1], &mut rng);
    let obs = random_matrix(&mut rng, 70, 3);
    let eps = random_matrix(&mut rng, 70, 2);
    let extra = random_matrix(&mut rng, 70, 2) * 0.1;
    for alpha in [0.0, 0.3] {
        let step = actor_loss_grad(&policy, &q1, &q2, &obs, &eps, &extra, alpha);
        let fd = fd_gradient(&mut policy, |p| actor_loss_grad(p, &q1, &q2, &obs, &eps, &extra, alpha).loss);
        let gap = relative_gap(&fd, &step.grads.flat());
        assert!(gap < 1e-4, "alpha {alpha}: relative gap {gap:e}");
    }
}

#[test]
fn log_density_matches_change_of_variables() {
    // 1-D: integrate exp(log π(a)) over a ∈ (−1, 1) by the midpoint rule on z.
    let out = DMatrix::from_row_slice(1, 2, &[0.3, -0.4]);
    let sigma = (-0.4f64).exp();
    let n = 20_000;
    let (lo, hi) = (0.3 - 12.0 * sigma, 0.3 + 12.0 * sigma);
    let dz = (hi - lo) / n as f64;
    let mut mass = 0.0;
    for i in 0..n {
        let z = lo + (i as f64 + 0.5) * dz;
        let eps = (z - 0.3) / sigma;
        let sq = squash(&out, &DMatrix::from_element(1, 1, eps), &DMatrix::zeros(1, 1));
        let da = 1.0 - z.tanh().powi(2);
        mass += sq.log_prob[0].exp() * da * dz;
    }
    assert!((mass - 1.0).abs() < 1e-8, "{mass}");
}

#[test]
fn twin_target_is_symmetric_and_masked() {
    let r = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let q1 = DVector::from_vec(vec![3.0, 1.0, -1.0]);
    let q2 = DVector::from_vec(vec![2.0, 4.0, -3.0]);
    let lp = DVector::from_vec(vec![0.1, -0.2, 0.3]);
    let live = DVector::zeros(3);
    let a = critic_target(&r, &live, &q1, &q2, &lp, 0.9, 0.2);
    let b = critic_target(&r, &live, &q2, &q1, &lp, 0.9, 0.2);
    assert_eq!(a, b);
    let done = DVector::from_element(3, 1.0);
    assert_eq!(critic_target(&r, &done, &q1, &q2, &lp, 0.9, 0.2), r);
    assert_eq!(critic_target(&r, &live, &q1, &q2, &lp, 0.0, 0.2), r);
    let y = critic_target(&r, &live, &q1, &q1, &lp, 0.5, 0.0);
    assert_eq!(y, &r + &q1 * 0.5);
}

#[test]
fn critic_loss_vanishes_on_exact_targets_and_ignores_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let q = Mlp::new(&[3, 8, 8, 1], &mut rng);
    let obs = random_matrix(&mut rng, 20, 2);
    let act = random_matrix(&mut rng, 20, 1);
    let mut x = DMatrix::zeros(20, 3);
    x.columns_mut(0, 2).copy_from(&obs);
    x.columns_mut(2, 1).copy_from(&act);
    let y = q.forward(&x).column(0).into_owned();
    let (loss, g) = critic_loss_grad(&q, &obs, &act, &y);
    assert_eq!(loss, 0.0);
    assert!(g.flat().iter().all(|v| *v == 0.0));

    let y2 = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
    let perm: Vec<usize> = (0..20).rev().collect();
    let pick = |m: &DMatrix<f64>| DMatrix::from_fn(20, m.ncols(), |i, j| m[(perm[i], j)]);
    let (l1, _) = critic_loss_grad(&q, &obs, &act, &y2);
    let (l2, _) = critic_loss_grad(&q, &pick(&obs), &pick(&act), &DVector::from_fn(20, |i, _| y2[perm[i]]));
    assert!((l1 - l2).abs() < 1e-12);
}

#[test]
fn zero_alpha_constant_critic_gives_no_policy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let policy = Mlp::new(&[2, 8, 8, 2], &mut rng);
    let mut q = Mlp::new(&[3, 8, 8, 1], &mut rng);
    for l in &mut q.layers {
        l.weight.fill(0.0);
    }
    let obs = random_matrix(&mut rng, 10, 2);
    let eps = random_matrix(&mut rng, 10, 1);
    let step = actor_loss_grad(&policy, &q, &q, &obs, &eps, &DMatrix::zeros(10, 1), 0.0);
    assert!(step.grads.flat().iter().all(|v| *v == 0.0));
}

#[test]
fn soft_update_converges_geometrically() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let online = Mlp::new(&[2, 8, 1], &mut rng);
    let mut target = Mlp::new(&[2, 8, 1], &mut rng);
    let dist = |a: &Mlp| (0..a.n_params()).map(|i| (a.param(i) - online.param(i)).abs()).fold(0.0, f64::max);
    let d0 = dist(&target);
    for _ in 0..100 {
        target.soft_update_from(&online, 0.05);
    }
    let expected = d0 * 0.95f64.powi(100);
    assert!((dist(&target) - expected).abs() < 1e-12 + 1e-9 * expected);
}

fn filled_buffer(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> ReplayBuffer {
    let mut b = ReplayBuffer::new(10_000);
    for _ in 0..n {
        b.push(Transition {
            obs: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            action: (0..k).map(|_| rng.random_range(-1.0..1.0)).collect(),
            reward: rng.random_range(0.0..2.0),
            next_obs: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            done: rng.random_bool(0.1),
        });
    }
    b
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let env = EnvConfig::bipartite(&BipartiteParams::default(), 1.0).unwrap();
    let mut agent = SacAgent::new(env.observation_dim(), env.action_dim(), small_hp(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let buf = filled_buffer(&mut rng, 64, env.observation_dim(), 2);
    for _ in 0..5 {
        agent.update(&buf.sample(16, &mut rng).unwrap()).unwrap();
    }
    let ck = AgentCheckpoint::new(&agent, &env);
    let bytes = ck.to_bytes();
    let back = AgentCheckpoint::read_from(bytes.as_slice()).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    back.ensure_compatible(&env).unwrap();
    let mut a = agent.clone();
    let mut b = back.agent.clone();
    for _ in 0..10 {
        let obs: Vec<f64> = (0..env.observation_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (x, lx) = a.sample_action(&obs, ActionMode::Stochastic).unwrap();
        let (y, ly) = b.sample_action(&obs, ActionMode::Stochastic).unwrap();
        assert_eq!(x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(lx.to_bits(), ly.to_bits());
    }
    let other = EnvConfig::bipartite(&BipartiteParams::default(), 2.0).unwrap();
    assert!(matches!(back.ensure_compatible(&other), Err(SacError::EnvMismatch { .. })));
    let mut corrupt = bytes.clone();
    corrupt[8] = 9;
    assert!(matches!(AgentCheckpoint::read_from(corrupt.as_slice()), Err(SacError::Version { .. })));
}

#[test]
fn alpha_stays_positive_over_long_soak() {
    let mut la = 0.1f64.ln();
    let mut opt = magcool_sac::nn::ScalarAdam::new(1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..100_000 {
        let lp = rng.random_range(-5.0..5.0);
        let g = magcool_sac::agent::alpha_grad(la, lp, -2.0);
        opt.step(&mut la, g);
    }
    assert!(la.exp().is_finite() && la.exp() > 0.0);
}

#[test]
fn larger_alpha_raises_entropy_after_one_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let hp = Hyperparams {
        lr: 1e-2,
        ..small_hp()
    };
    let base = SacAgent::new(2, 1, hp, 5).unwrap();
    let obs = random_matrix(&mut rng, 64, 2);
    let eps = random_matrix(&mut rng, 64, 1);
    let mean_log_std = |p: &Mlp| p.forward(&obs).column(1).map(|v| v.clamp(-20.0, 2.0)).mean();
    let after = |alpha: f64| {
        let mut a = base.clone();
        let step = actor_loss_grad(&a.policy, &a.q1, &a.q2, &obs, &eps, &DMatrix::zeros(64, 1), alpha);
        a.policy_opt.step(&mut a.policy, &step.grads);
        mean_log_std(&a.policy)
    };
    assert!(after(1.0) > after(0.0));
}

#[test]
fn teacher_with_other_shape_is_rejected() {
    let teacher = SacAgent::new(12, 2, small_hp(), 1).unwrap();
    let hp = Hyperparams {
        hidden: vec![4],
        ..small_hp()
    };
    assert!(matches!(SacAgent::from_teacher(&teacher, hp, 2), Err(SacError::DimensionMismatch { .. })));
    let same = SacAgent::from_teacher(&teacher, small_hp(), 2).unwrap();
    assert_eq!(same.policy, teacher.policy);
}

proptest! {
    #[test]
    fn replay_returns_only_inserted_transitions(cap in 1usize..50, pushes in 0usize..120, n in 1usize..20, seed in any::<u64>()) {
        let mut b = ReplayBuffer::new(cap);
        for i in 0..pushes {
            b.push(Transition { obs: vec![i as f64], action: vec![0.0], reward: i as f64, next_obs: vec![0.0], done: false });
        }
        prop_assert_eq!(b.len(), pushes.min(cap));
        let kept: Vec<f64> = b.iter_oldest_first().map(|t| t.reward).collect();
        let expected: Vec<f64> = (pushes.saturating_sub(cap)..pushes).map(|i| i as f64).collect();
        prop_assert_eq!(&kept, &expected);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match b.sample(n, &mut rng) {
            Some(batch) => {
                let mut seen: Vec<f64> = batch.rewards.iter().copied().collect();
                prop_assert!(seen.iter().all(|r| expected.contains(r)));
                seen.sort_by(f64::total_cmp);
                seen.dedup();
                prop_assert_eq!(seen.len(), n);
            }
            None => prop_assert!(n > b.len()),
        }
    }

    #[test]
    fn actions_stay_strictly_inside_box(mu in -30.0f64..30.0, ls in -25.0f64..5.0, e in -5.0f64..5.0) {
        let sq = squash(&DMatrix::from_row_slice(1, 2, &[mu, ls]), &DMatrix::from_element(1, 1, e), &DMatrix::zeros(1, 1));
        let a = sq.action[(0, 0)];
        prop_assert!(a.abs() <= 1.0);
        prop_assert!(sq.log_prob[0].is_finite());
    }
}

#[test]
fn update_is_deterministic_for_a_seed() {
    let env = EnvConfig::bipartite(&BipartiteParams::default(), 1.0).unwrap();
    let run = || {
        let mut agent = SacAgent::new(env.observation_dim(), 2, small_hp(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let buf = filled_buffer(&mut rng, 100, env.observation_dim(), 2);
        let batch: Batch = buf.sample(16, &mut rng).unwrap();
        agent.update(&batch).unwrap();
        AgentCheckpoint::new(&agent, &env).to_bytes()
    };
    assert_eq!(run(), run());
}
