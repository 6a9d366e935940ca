//! Soft actor-critic: squashed-Gaussian policy, twin critics with Polyak
//! targets and a learned temperature.

use magcool_core::par;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::nn::{chunks, clip_global_norm, rows, Adam, Grads, Mlp, ScalarAdam};
use crate::{Result, SacError};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub tau: f64,
    pub initial_alpha: f64,
    /// Defaults to minus the action dimension.
    pub target_entropy: Option<f64>,
    pub warmup_steps: usize,
    pub updates_per_step: usize,
    pub grad_clip: f64,
    /// Pre-squash exploration noise, annealed linearly from start to end.
    pub noise_std_start: f64,
    pub noise_std_end: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            hidden: vec![512, 256, 256, 128],
            lr: 1e-4,
            buffer_capacity: 1_000_000,
            batch_size: 512,
            gamma: 0.99,
            tau: 0.005,
            initial_alpha: 0.1,
            target_entropy: None,
            warmup_steps: 1000,
            updates_per_step: 1,
            grad_clip: 10.0,
            noise_std_start: 0.0,
            noise_std_end: 0.0,
        }
    }
}

impl Hyperparams {
    /// Defaults with the tripartite noise layer switched on.
    pub fn with_noise_layer() -> Self {
        Self {
            noise_std_start: 0.1,
            noise_std_end: 0.01,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SacError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must be in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must be in (0, 1]");
        }
        if !(self.initial_alpha > 0.0 && self.lr > 0.0 && self.grad_clip > 0.0) {
            return bad("alpha, lr and grad_clip must be > 0");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("need 0 < batch_size <= buffer_capacity");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be non-empty and > 0");
        }
        if self.noise_std_start < 0.0 || self.noise_std_end < 0.0 {
            return bad("noise std must be >= 0");
        }
        Ok(())
    }
}

/// A sampled minibatch, one transition per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: DMatrix<f64>,
    pub actions: DMatrix<f64>,
    pub rewards: DVector<f64>,
    pub next_obs: DMatrix<f64>,
    pub done: DVector<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.nrows() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionMode {
    Stochastic,
    Deterministic,
}

/// Result of pushing Gaussian noise through the tanh squash.
#[derive(Debug, Clone)]
pub struct Squashed {
    pub mu: DMatrix<f64>,
    pub log_std: DMatrix<f64>,
    /// 1 where the raw log-std was inside the clamp range.
    pub log_std_live: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub action: DMatrix<f64>,
    pub log_prob: DVector<f64>,
}

/// `log(1 − tanh²z)` without cancellation.
fn log_one_minus_tanh_sq(z: f64) -> f64 {
    let softplus = |x: f64| if x > 30.0 { x } else { x.exp().ln_1p() };
    2.0 * (std::f64::consts::LN_2 - z - softplus(-2.0 * z))
}

/// Applies the policy head to raw network output `out (B×2k)` with fixed
/// standard-normal draws `eps` and additive pre-squash noise `extra`.
pub fn squash(out: &DMatrix<f64>, eps: &DMatrix<f64>, extra: &DMatrix<f64>) -> Squashed {
    let k = out.ncols() / 2;
    let b = out.nrows();
    let mu = out.columns(0, k).into_owned();
    let raw = out.columns(k, k);
    let log_std = raw.map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    let log_std_live = raw.map(|v| if (LOG_STD_MIN..=LOG_STD_MAX).contains(&v) { 1.0 } else { 0.0 });
    let z = DMatrix::from_fn(b, k, |i, j| mu[(i, j)] + log_std[(i, j)].exp() * eps[(i, j)] + extra[(i, j)]);
    let action = z.map(f64::tanh);
    let log_prob = DVector::from_fn(b, |i, _| {
        (0..k)
            .map(|j| {
                -0.5 * eps[(i, j)] * eps[(i, j)] - log_std[(i, j)] - HALF_LOG_TWO_PI
                    - log_one_minus_tanh_sq(z[(i, j)])
            })
            .sum()
    });
    Squashed {
        mu,
        log_std,
        log_std_live,
        z,
        action,
        log_prob,
    }
}

fn concat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    m.columns_mut(0, a.ncols()).copy_from(a);
    m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    m
}

/// `y = r + γ (1 − d) (min_j Q_targ,j(s′, ã′) − α log π(ã′|s′))`.
pub fn critic_target(
    rewards: &DVector<f64>,
    done: &DVector<f64>,
    q1_next: &DVector<f64>,
    q2_next: &DVector<f64>,
    next_log_prob: &DVector<f64>,
    gamma: f64,
    alpha: f64,
) -> DVector<f64> {
    DVector::from_fn(rewards.len(), |i, _| {
        let soft = q1_next[i].min(q2_next[i]) - alpha * next_log_prob[i];
        rewards[i] + gamma * (1.0 - done[i]) * soft
    })
}

/// Mean squared error of `q(s, a)` against `y` and its gradient.
pub fn critic_loss_grad(q: &Mlp, obs: &DMatrix<f64>, actions: &DMatrix<f64>, y: &DVector<f64>) -> (f64, Grads) {
    let n = obs.nrows() as f64;
    let parts = par::map(&chunks(obs.nrows()), |r| {
        let x = concat(&rows(obs, r), &rows(actions, r));
        let (out, tape) = q.forward_tape(&x);
        let resid = DMatrix::from_fn(r.len(), 1, |i, _| out[(i, 0)] - y[r.start + i]);
        let loss = resid.norm_squared();
        let (g, _) = q.backward(&tape, &(resid * (2.0 / n)));
        (loss, g)
    });
    let loss = parts.iter().map(|p| p.0).sum::<f64>() / n;
    let grads = Grads::sum(parts.into_iter().map(|p| p.1)).expect("non-empty batch");
    (loss, grads)
}

#[derive(Debug, Clone)]
pub struct ActorStep {
    pub loss: f64,
    pub grads: Grads,
    pub mean_log_prob: f64,
}

/// `E[α log π(ã|s) − min_j Q_j(s, ã)]` with reparameterised `ã` built from the
/// fixed draws `eps` and `extra`, and its gradient in the policy parameters.
pub fn actor_loss_grad(
    policy: &Mlp,
    q1: &Mlp,
    q2: &Mlp,
    obs: &DMatrix<f64>,
    eps: &DMatrix<f64>,
    extra: &DMatrix<f64>,
    alpha: f64,
) -> ActorStep {
    let n = obs.nrows() as f64;
    let parts = par::map(&chunks(obs.nrows()), |r| {
        let o = rows(obs, r);
        let (out, ptape) = policy.forward_tape(&o);
        let e = rows(eps, r);
        let sq = squash(&out, &e, &rows(extra, r));
        let k = sq.action.ncols();
        let x = concat(&o, &sq.action);
        let (v1, t1) = q1.forward_tape(&x);
        let (v2, t2) = q2.forward_tape(&x);
        let first = DMatrix::from_fn(r.len(), 1, |i, _| if v1[(i, 0)] <= v2[(i, 0)] { 1.0 } else { 0.0 });
        let second = first.map(|f| 1.0 - f);
        let (_, dx1) = q1.backward(&t1, &first);
        let (_, dx2) = q2.backward(&t2, &second);
        let d = o.ncols();
        let mut loss = 0.0;
        let mut d_out = DMatrix::zeros(r.len(), 2 * k);
        for i in 0..r.len() {
            let qmin = v1[(i, 0)].min(v2[(i, 0)]);
            loss += alpha * sq.log_prob[i] - qmin;
            for j in 0..k {
                let a = sq.action[(i, j)];
                let dq_da = dx1[(i, d + j)] + dx2[(i, d + j)];
                // ∂/∂z of α log π − Q through a = tanh z
                let dz = alpha * 2.0 * a - dq_da * (1.0 - a * a);
                let sigma = sq.log_std[(i, j)].exp();
                d_out[(i, j)] = dz / n;
                d_out[(i, k + j)] = (-alpha + dz * sigma * e[(i, j)]) * sq.log_std_live[(i, j)] / n;
            }
        }
        let (g, _) = policy.backward(&ptape, &d_out);
        (loss, sq.log_prob.sum(), g)
    });
    let loss = parts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_log_prob = parts.iter().map(|p| p.1).sum::<f64>() / n;
    let grads = Grads::sum(parts.into_iter().map(|p| p.2)).expect("non-empty batch");
    ActorStep {
        loss,
        grads,
        mean_log_prob,
    }
}

/// Gradient of `E[−α (log π + H_target)]` with respect to `log α`.
pub fn alpha_grad(log_alpha: f64, mean_log_prob: f64, target_entropy: f64) -> f64 {
    -log_alpha.exp() * (mean_log_prob + target_entropy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub mean_log_prob: f64,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    pub policy: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub policy_opt: Adam,
    pub q1_opt: Adam,
    pub q2_opt: Adam,
    pub log_alpha: f64,
    pub alpha_opt: ScalarAdam,
    pub hp: Hyperparams,
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Current pre-squash noise std (0 disables the layer).
    pub noise_std: f64,
    pub updates: u64,
    pub rng: ChaCha8Rng,
}

impl SacAgent {
    pub fn new(obs_dim: usize, act_dim: usize, hp: Hyperparams, seed: u64) -> Result<Self> {
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = |i: usize, o: usize| {
            let mut s = vec![i];
            s.extend(&hp.hidden);
            s.push(o);
            s
        };
        let policy = Mlp::new(&sizes(obs_dim, 2 * act_dim), &mut rng);
        let q1 = Mlp::new(&sizes(obs_dim + act_dim, 1), &mut rng);
        let q2 = Mlp::new(&sizes(obs_dim + act_dim, 1), &mut rng);
        Ok(Self {
            policy_opt: Adam::new(&policy, hp.lr),
            q1_opt: Adam::new(&q1, hp.lr),
            q2_opt: Adam::new(&q2, hp.lr),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy,
            q1,
            q2,
            log_alpha: hp.initial_alpha.ln(),
            alpha_opt: ScalarAdam::new(hp.lr),
            noise_std: hp.noise_std_start,
            hp,
            obs_dim,
            act_dim,
            updates: 0,
            rng,
        })
    }

    /// Copies every network from `teacher` into a fresh agent with new
    /// optimiser state and temperature.
    pub fn from_teacher(teacher: &SacAgent, hp: Hyperparams, seed: u64) -> Result<Self> {
        let mut a = Self::new(teacher.obs_dim, teacher.act_dim, hp, seed)?;
        if a.policy.sizes() != teacher.policy.sizes() || a.q1.sizes() != teacher.q1.sizes() {
            return Err(SacError::DimensionMismatch {
                expected: format!("policy {:?}, critic {:?}", a.policy.sizes(), a.q1.sizes()),
                found: format!("policy {:?}, critic {:?}", teacher.policy.sizes(), teacher.q1.sizes()),
            });
        }
        a.policy = teacher.policy.clone();
        a.q1 = teacher.q1.clone();
        a.q2 = teacher.q2.clone();
        a.q1_target = teacher.q1_target.clone();
        a.q2_target = teacher.q2_target.clone();
        Ok(a)
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn target_entropy(&self) -> f64 {
        self.hp.target_entropy.unwrap_or(-(self.act_dim as f64))
    }

    pub fn check_dims(&self, obs_dim: usize, act_dim: usize) -> Result<()> {
        if (obs_dim, act_dim) != (self.obs_dim, self.act_dim) {
            return Err(SacError::DimensionMismatch {
                expected: format!("obs {}, act {}", self.obs_dim, self.act_dim),
                found: format!("obs {obs_dim}, act {act_dim}"),
            });
        }
        Ok(())
    }

    fn normal(&mut self, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
        if scale == 0.0 {
            return DMatrix::zeros(r, c);
        }
        let rng = &mut self.rng;
        DMatrix::from_fn(r, c, |_, _| {
            let x: f64 = StandardNormal.sample(rng);
            scale * x
        })
    }

    /// Action for one observation with explicit draws; does not touch the RNG.
    pub fn action_with(&self, obs: &[f64], eps: &[f64], extra: &[f64]) -> Result<(Vec<f64>, f64)> {
        if obs.len() != self.obs_dim || obs.iter().any(|v| !v.is_finite()) {
            return Err(SacError::NonFinite("observation is malformed or non-finite".into()));
        }
        let out = self.policy.forward(&DMatrix::from_row_slice(1, self.obs_dim, obs));
        if out.iter().any(|v| !v.is_finite()) {
            return Err(SacError::NonFinite("policy output is not finite".into()));
        }
        let sq = squash(
            &out,
            &DMatrix::from_row_slice(1, self.act_dim, eps),
            &DMatrix::from_row_slice(1, self.act_dim, extra),
        );
        Ok((sq.action.row(0).iter().copied().collect(), sq.log_prob[0]))
    }

    /// Stochastic actions draw from the agent RNG (and the noise layer);
    /// deterministic actions are `tanh(μ)`.
    pub fn sample_action(&mut self, obs: &[f64], mode: ActionMode) -> Result<(Vec<f64>, f64)> {
        let k = self.act_dim;
        match mode {
            ActionMode::Deterministic => self.action_with(obs, &vec![0.0; k], &vec![0.0; k]),
            ActionMode::Stochastic => {
                let eps = self.normal(1, k, 1.0);
                let extra = self.normal(1, k, self.noise_std);
                self.action_with(obs, eps.as_slice(), extra.as_slice())
            }
        }
    }

    pub fn deterministic_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let k = self.act_dim;
        Ok(self.action_with(obs, &vec![0.0; k], &vec![0.0; k])?.0)
    }

    /// One critic, actor and temperature step followed by the target update.
    pub fn update(&mut self, batch: &Batch) -> Result<UpdateStats> {
        let b = batch.len();
        let k = self.act_dim;
        let alpha = self.alpha();

        let eps_next = self.normal(b, k, 1.0);
        let extra_next = self.normal(b, k, self.noise_std);
        let next = squash(&self.policy.forward(&batch.next_obs), &eps_next, &extra_next);
        let xn = concat(&batch.next_obs, &next.action);
        let q1n = self.q1_target.forward(&xn).column(0).into_owned();
        let q2n = self.q2_target.forward(&xn).column(0).into_owned();
        let y = critic_target(&batch.rewards, &batch.done, &q1n, &q2n, &next.log_prob, self.hp.gamma, alpha);

        let (l1, mut g1) = critic_loss_grad(&self.q1, &batch.obs, &batch.actions, &y);
        let (l2, mut g2) = critic_loss_grad(&self.q2, &batch.obs, &batch.actions, &y);
        if !(l1.is_finite() && l2.is_finite() && g1.is_finite() && g2.is_finite()) {
            return Err(SacError::NonFinite(format!("critic loss {l1} / {l2}")));
        }
        clip_global_norm(&mut [&mut g1], self.hp.grad_clip);
        clip_global_norm(&mut [&mut g2], self.hp.grad_clip);
        self.q1_opt.step(&mut self.q1, &g1);
        self.q2_opt.step(&mut self.q2, &g2);

        let eps = self.normal(b, k, 1.0);
        let extra = self.normal(b, k, self.noise_std);
        let mut actor = actor_loss_grad(&self.policy, &self.q1, &self.q2, &batch.obs, &eps, &extra, alpha);
        if !(actor.loss.is_finite() && actor.grads.is_finite()) {
            return Err(SacError::NonFinite(format!("actor loss {}", actor.loss)));
        }
        clip_global_norm(&mut [&mut actor.grads], self.hp.grad_clip);
        self.policy_opt.step(&mut self.policy, &actor.grads);

        let ga = alpha_grad(self.log_alpha, actor.mean_log_prob, self.target_entropy());
        self.alpha_opt.step(&mut self.log_alpha, ga);

        self.q1_target.soft_update_from(&self.q1, self.hp.tau);
        self.q2_target.soft_update_from(&self.q2, self.hp.tau);
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss: 0.5 * (l1 + l2),
            actor_loss: actor.loss,
            alpha: self.alpha(),
            mean_log_prob: actor.mean_log_prob,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_density_correction_is_stable() {
        for z in [-40.0, -3.0, 0.0, 0.7, 25.0] {
            let direct = (1.0 - f64::tanh(z).powi(2)).ln();
            if direct.is_finite() {
                assert!((log_one_minus_tanh_sq(z) - direct).abs() < 1e-9);
            }
            assert!(log_one_minus_tanh_sq(z).is_finite());
        }
    }

    #[test]
    fn tiny_std_gives_tanh_mean() {
        let out = DMatrix::from_row_slice(1, 2, &[0.4, -20.0]);
        let sq = squash(&out, &DMatrix::from_element(1, 1, 1.3), &DMatrix::zeros(1, 1));
        assert!((sq.action[(0, 0)] - 0.4f64.tanh()).abs() < 1e-8);
    }

    #[test]
    fn alpha_update_signs() {
        assert_eq!(alpha_grad(0.0, 2.0, -2.0), 0.0);
        // entropy below target means log π above −H_target: α must grow
        assert!(alpha_grad(0.0, 3.0, -2.0) < 0.0);
        assert!(alpha_grad(0.0, 0.5, -2.0) > 0.0);
    }
}
