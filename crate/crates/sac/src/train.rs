//! Episode loop: rollouts, updates, periodic deterministic evaluation and
//! best-model selection.

use magcool_core::{par, CoolingEnv, EnvConfig, EpisodeTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{ActionMode, SacAgent, UpdateStats};
use crate::buffer::{ReplayBuffer, Transition};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Seeds warmup actions and minibatch sampling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 10_000,
            eval_every: 50,
            eval_episodes: 3,
            seed: 0,
        }
    }
}

/// One learning-curve row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub net_reward: f64,
    pub mean_reward: f64,
    pub mean_quotient: f64,
    pub min_quotient: f64,
    /// Mean net reward of the deterministic evaluation episodes, when run.
    pub eval_score: Option<f64>,
    pub eval_min_quotient: Option<f64>,
    pub alpha: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: Vec<CurveRow>,
    /// Agent with the best evaluation score seen, and that score.
    pub best: Option<(f64, SacAgent)>,
    pub final_agent: SacAgent,
    /// Reason training stopped early.
    pub halted: Option<String>,
    pub env_steps: usize,
}

impl TrainOutcome {
    /// The best evaluated agent, else the final one.
    pub fn best_agent(&self) -> &SacAgent {
        self.best.as_ref().map_or(&self.final_agent, |b| &b.1)
    }
}

/// Deterministic-policy episodes, run in parallel.
pub fn evaluate(agent: &SacAgent, env: &EnvConfig, episodes: usize) -> Result<Vec<EpisodeTrace>> {
    agent.check_dims(env.observation_dim(), env.action_dim())?;
    par::map_range(episodes, |_| -> Result<EpisodeTrace> {
        let mut e = CoolingEnv::new(env.clone())?;
        let mut failure = None;
        let trace = e.run_episode(|obs| match agent.deterministic_action(obs.as_slice()) {
            Ok(a) => a,
            Err(err) => {
                failure.get_or_insert(err);
                vec![f64::NAN; env.action_dim()]
            }
        });
        match (failure, trace) {
            (Some(err), _) => Err(err),
            (None, t) => Ok(t?),
        }
    })
    .into_iter()
    .collect()
}

fn score(traces: &[EpisodeTrace]) -> (f64, f64) {
    let n = traces.len().max(1) as f64;
    let mean = traces.iter().map(EpisodeTrace::net_reward).sum::<f64>() / n;
    let min_q = traces
        .iter()
        .filter_map(|t| t.min_quotient().map(|m| m.0))
        .fold(f64::INFINITY, f64::min);
    (mean, min_q)
}

/// Trains `agent` on fresh episodes of `env`. `on_row` sees every curve row
/// as it is produced.
pub fn train<F>(env: &EnvConfig, mut agent: SacAgent, cfg: &TrainConfig, mut on_row: F) -> Result<TrainOutcome>
where
    F: FnMut(&CurveRow),
{
    agent.check_dims(env.observation_dim(), env.action_dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut buffer = ReplayBuffer::new(agent.hp.buffer_capacity);
    let mut e = CoolingEnv::new(env.clone())?;
    let mut curve = Vec::with_capacity(cfg.episodes);
    let mut best: Option<(f64, SacAgent)> = None;
    let mut last_good = agent.clone();
    let mut halted = None;
    let mut env_steps = 0usize;
    let k = env.action_dim();
    let (n0, n1) = (agent.hp.noise_std_start, agent.hp.noise_std_end);

    if cfg.episodes == 0 {
        let (s, q) = score(&evaluate(&agent, env, cfg.eval_episodes.max(1))?);
        let row = CurveRow {
            episode: 0,
            net_reward: f64::NAN,
            mean_reward: f64::NAN,
            mean_quotient: f64::NAN,
            min_quotient: f64::NAN,
            eval_score: Some(s),
            eval_min_quotient: Some(q),
            alpha: agent.alpha(),
            critic_loss: f64::NAN,
            actor_loss: f64::NAN,
        };
        on_row(&row);
        curve.push(row);
        best = Some((s, agent.clone()));
    }

    'episodes: for ep in 0..cfg.episodes {
        let frac = if cfg.episodes > 1 { ep as f64 / (cfg.episodes - 1) as f64 } else { 0.0 };
        agent.noise_std = n0 + (n1 - n0) * frac;
        let mut obs = e.reset();
        let mut stats: Vec<UpdateStats> = Vec::new();
        while !e.is_done() {
            let action = if env_steps < agent.hp.warmup_steps {
                (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()
            } else {
                agent.sample_action(obs.as_slice(), ActionMode::Stochastic)?.0
            };
            let (next, reward, done) = match e.step(&action) {
                Ok(v) => v,
                Err(err) => {
                    halted = Some(format!("episode {ep}: {err}"));
                    break 'episodes;
                }
            };
            if !reward.is_finite() {
                halted = Some(format!("episode {ep}: non-finite reward"));
                break 'episodes;
            }
            buffer.push(Transition {
                obs: obs.0,
                action,
                reward,
                next_obs: next.0.clone(),
                done,
            });
            obs = next;
            env_steps += 1;
            if env_steps >= agent.hp.warmup_steps && buffer.len() >= agent.hp.batch_size {
                for _ in 0..agent.hp.updates_per_step {
                    let batch = buffer.sample(agent.hp.batch_size, &mut rng).expect("buffer holds a batch");
                    match agent.update(&batch) {
                        Ok(s) => stats.push(s),
                        Err(err) => {
                            halted = Some(format!("episode {ep}: {err}"));
                            break 'episodes;
                        }
                    }
                }
            }
        }
        let trace = e.trace();
        let quotients = trace.quotients();
        let mean_of = |f: fn(&UpdateStats) -> f64| {
            if stats.is_empty() {
                f64::NAN
            } else {
                stats.iter().map(f).sum::<f64>() / stats.len() as f64
            }
        };
        let mut row = CurveRow {
            episode: ep + 1,
            net_reward: trace.net_reward(),
            mean_reward: trace.net_reward() / trace.len().max(1) as f64,
            mean_quotient: quotients.iter().sum::<f64>() / quotients.len().max(1) as f64,
            min_quotient: quotients.iter().copied().fold(f64::INFINITY, f64::min),
            eval_score: None,
            eval_min_quotient: None,
            alpha: agent.alpha(),
            critic_loss: mean_of(|s| s.critic_loss),
            actor_loss: mean_of(|s| s.actor_loss),
        };
        let eval_due = cfg.eval_every > 0 && ((ep + 1) % cfg.eval_every == 0 || ep + 1 == cfg.episodes);
        if eval_due {
            match evaluate(&agent, env, cfg.eval_episodes.max(1)) {
                Ok(traces) => {
                    let (s, q) = score(&traces);
                    row.eval_score = Some(s);
                    row.eval_min_quotient = Some(q);
                    if s.is_finite() {
                        last_good = agent.clone();
                        if best.as_ref().is_none_or(|b| s > b.0) {
                            best = Some((s, agent.clone()));
                        }
                    }
                }
                Err(err) => {
                    halted = Some(format!("evaluation after episode {}: {err}", ep + 1));
                    on_row(&row);
                    curve.push(row);
                    break;
                }
            }
        }
        on_row(&row);
        curve.push(row);
    }
    let final_agent = if halted.is_some() { last_good } else { agent };
    Ok(TrainOutcome {
        curve,
        best,
        final_agent,
        halted,
        env_steps,
    })
}
