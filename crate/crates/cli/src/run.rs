//! Executes one run into its own directory and writes its manifest.

use std::path::{Path, PathBuf};

use magcool_core::baselines::{
    effective_two_mode, raman_time_limit, sideband_sweep, sideband_time_limit, stirap_optimize, stirap_run,
    GaussianPulsePair,
};
use magcool_core::optim::SearchConfig;
use magcool_core::{
    dynamics::thermal_covariance, from_periods, schedule::simulate, to_periods, Complex64, ControlSchedule,
    env::DEFAULT_DT, CoreError, EnvConfig, EpisodeTrace,
};
use magcool_sac::{evaluate, train, AgentCheckpoint, CurveRow, SacAgent, TrainConfig};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{RunConfig, ScheduleConfig, SystemKind};
use crate::manifest::{CommandKind, Invocation, RunManifest, MANIFEST_FILE};
use crate::table::{
    episode_from_states, polar_table, schedule_from_table, schedule_of, schedule_table, trace_table, Table,
    TableKind,
};
use crate::{BaselineMode, CliError, Result};

/// Rows of the curve log shown when training halts.
const HALT_TAIL: usize = 5;

#[derive(Debug, Clone)]
pub struct Run {
    pub name: String,
    pub invocation: Invocation,
    pub config: RunConfig,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    /// One-line human summary.
    pub summary: String,
    /// Set when training stopped early.
    pub halted: Option<String>,
}

/// Agent-initialisation and training seeds, both drawn from the run seed.
pub fn derive_seeds(seed: u64) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rng.next_u64(), rng.next_u64())
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Outputs<'_> {
    fn table(&mut self, name: &str, table: &Table) -> Result<()> {
        table.write(&self.dir.join(name))?;
        self.files.push(name.into());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(value).expect("json value serialises");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        self.files.push(name.into());
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.files.push(name.into());
        Ok(())
    }

    fn checkpoint(&mut self, name: &str, ck: &AgentCheckpoint) -> Result<()> {
        ck.save(&self.dir.join(name))?;
        self.files.push(name.into());
        Ok(())
    }
}

fn opt_num(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

fn nullable(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v).map_or(serde_json::Value::Null, serde_json::Value::Number)
}

impl Run {
    /// Rebuilds the run a manifest describes.
    pub fn from_manifest(m: &RunManifest) -> Self {
        Self {
            name: m.run_name.clone(),
            invocation: m.invocation.clone(),
            config: m.config.clone(),
            seed: m.seed,
        }
    }

    pub fn execute(&self, out_root: &Path) -> Result<RunReport> {
        let env = self.config.env_config()?;
        let dir = out_root.join(&self.name);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let mut manifest = RunManifest::new(
            self.name.clone(),
            self.invocation.clone(),
            self.config.clone(),
            env.clone(),
            self.seed,
        );
        let mut out = Outputs {
            dir: &dir,
            files: Vec::new(),
        };
        let mut halted = None;
        let summary = match self.invocation.command {
            CommandKind::Simulate => self.simulate(&env, &mut out)?,
            CommandKind::Baseline => {
                let mode = self.mode()?;
                match mode {
                    BaselineMode::Sideband => self.sideband(&env, &mut out)?,
                    BaselineMode::Stirap => self.stirap(&env, &mut out)?,
                    BaselineMode::Limits => self.limits(&mut out)?,
                }
            }
            CommandKind::Train => {
                let (s, h) = self.train(&env, &mut out)?;
                halted = h;
                s
            }
            CommandKind::Evaluate => self.evaluate(&env, &mut out)?,
            CommandKind::Export => self.export(&mut out)?,
        };
        for f in &out.files {
            manifest.add_output(&dir, f)?;
        }
        if let Some(h) = &halted {
            manifest.notes.push(h.clone());
        }
        manifest.finish();
        manifest.write(&dir)?;
        Ok(RunReport {
            dir,
            manifest,
            summary,
            halted,
        })
    }

    fn mode(&self) -> Result<BaselineMode> {
        match self.invocation.mode.as_deref() {
            Some("sideband") => Ok(BaselineMode::Sideband),
            Some("stirap") => Ok(BaselineMode::Stirap),
            Some("limits") => Ok(BaselineMode::Limits),
            other => Err(CliError::Invalid(format!("unknown baseline mode {other:?}"))),
        }
    }

    fn schedule(&self, env: &EnvConfig) -> Result<ControlSchedule> {
        let sys = &env.system;
        let n = env.steps_per_episode;
        match &self.config.schedule {
            ScheduleConfig::Zero => Ok(ControlSchedule::zeros(n, sys.n_control_slots, env.dt)?),
            ScheduleConfig::Constant { values } => {
                if values.len() != sys.n_control_slots {
                    return Err(CliError::Invalid(format!(
                        "constant schedule gives {} values, system has {} control slots",
                        values.len(),
                        sys.n_control_slots
                    )));
                }
                let c: Vec<Complex64> = values.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
                Ok(ControlSchedule::constant(&c, n, env.dt)?)
            }
            ScheduleConfig::Gaussian {
                peak_s,
                peak_p,
                center_s_periods,
                center_p_periods,
                width_periods,
            } => {
                if sys.n_control_slots != 2 {
                    return Err(CliError::Invalid("a Gaussian pulse pair needs a two-slot system".into()));
                }
                let pulses = GaussianPulsePair {
                    peak_s: *peak_s,
                    peak_p: *peak_p,
                    center_s: from_periods(*center_s_periods),
                    center_p: from_periods(*center_p_periods),
                    width: from_periods(*width_periods),
                    total_time: n as f64 * env.dt,
                };
                Ok(pulses.schedule(env.dt)?)
            }
            ScheduleConfig::File { path } => {
                let table = Table::read(path)?;
                let mut s = schedule_from_table(sys, &table, env.dt)?;
                let times = table.column("t_periods").expect("schedule tables have a time column");
                let step = to_periods(env.dt);
                if let Some(k) = times
                    .iter()
                    .enumerate()
                    .position(|(k, t)| (t - k as f64 * step).abs() > 1e-9 * step.max(t.abs()))
                {
                    return Err(CliError::Parse {
                        path: path.clone(),
                        line: k + 3,
                        message: format!("t_periods {} is off the control grid of {step} periods", times[k]),
                    });
                }
                if s.len() < n {
                    return Err(CliError::Invalid(format!(
                        "{}: schedule covers {} steps, the episode needs {n}",
                        path.display(),
                        s.len()
                    )));
                }
                s.values.truncate(n);
                Ok(s)
            }
        }
    }

    fn simulate(&self, env: &EnvConfig, out: &mut Outputs) -> Result<String> {
        let schedule = self.schedule(env)?;
        let states = simulate(&env.system, &schedule, &thermal_covariance(&env.system))?;
        let trace = episode_from_states(env, &schedule, &states);
        out.table("trace.csv", &trace_table(&env.system, &trace))?;
        out.table("schedule.csv", &schedule_table(&env.system, &schedule))?;
        Ok(format!(
            "{} steps, final quotient {:.4e}, min {:.4e}",
            trace.len(),
            opt_num(trace.final_quotient()),
            opt_num(trace.min_quotient().map(|m| m.0)),
        ))
    }

    fn sideband(&self, env: &EnvConfig, out: &mut Outputs) -> Result<String> {
        if self.config.system != SystemKind::Bipartite {
            return Err(CliError::Invalid("the sideband baseline runs on the bipartite system".into()));
        }
        let b = &self.config.baseline;
        let sys = &env.system;
        let r = sideband_sweep(sys, &b.sideband_grid(), from_periods(b.horizon_periods), b.target_quotient)?;
        let cols = [
            "coupling",
            "min_quotient",
            "time_to_min_periods",
            "settling_periods",
            "first_crossing_periods",
            "diverged",
        ];
        let mut t = Table::new(TableKind::Sideband, cols.iter().map(|c| c.to_string()).collect());
        for e in &r.entries {
            t.push(vec![
                e.coupling,
                e.min_quotient,
                e.time_to_min,
                opt_num(e.time_to_target),
                opt_num(e.first_crossing),
                if e.diverged { 1.0 } else { 0.0 },
            ]);
        }
        out.table("sideband.csv", &t)?;

        let tau = match sideband_time_limit(&r, b.target_quotient) {
            Ok(v) => Some(v),
            Err(CoreError::TargetUnreachable { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        let fastest = r
            .entries
            .iter()
            .filter(|e| e.time_to_target.is_some() && e.time_to_target == tau)
            .map(|e| e.coupling)
            .next();
        let best = r.best_quotient().expect("sweep has entries");
        let first = r.entries.iter().filter_map(|e| e.first_crossing).min_by(f64::total_cmp);
        out.json(
            "summary.json",
            &json!({
                "target_quotient": b.target_quotient,
                "horizon_periods": r.horizon,
                "best_min_quotient": best.min_quotient,
                "best_min_coupling": best.coupling,
                "time_limit_periods": tau,
                "time_limit_coupling": fastest,
                "fastest_first_crossing_periods": first,
            }),
        )?;

        // Trace of the fastest settling coupling, else of the deepest minimum.
        let g = fastest.unwrap_or(best.coupling);
        let steps = (from_periods(b.horizon_periods) / DEFAULT_DT).round().max(1.0) as usize;
        let schedule = ControlSchedule::constant(&[Complex64::new(g, 0.0)], steps, DEFAULT_DT)?;
        let states = simulate(sys, &schedule, &thermal_covariance(sys))?;
        let trace = EpisodeTrace::from_schedule(sys, &schedule, &states);
        out.table("trace.csv", &trace_table(sys, &trace))?;

        Ok(match tau {
            Some(t) => format!(
                "best quotient {:.3e} at G = {:.4}; time to {:e}: {t:.2} periods at G = {:.4}",
                best.min_quotient,
                best.coupling,
                b.target_quotient,
                g
            ),
            None => format!(
                "best quotient {:.3e} at G = {:.4}; {:e} not reached",
                best.min_quotient, best.coupling, b.target_quotient
            ),
        })
    }

    fn stirap(&self, env: &EnvConfig, out: &mut Outputs) -> Result<String> {
        if self.config.system != SystemKind::Tripartite {
            return Err(CliError::Invalid("the pulse baseline runs on the tripartite system".into()));
        }
        let b = &self.config.baseline;
        let om = self.config.control.omega_max;
        let tau = raman_time_limit(self.config.tripartite.magnon_frequency, om, om)?;
        let horizon = b.stirap_horizon_factor * tau;
        let search = SearchConfig {
            restarts: b.restarts,
            max_iters: b.max_iters,
            seed: self.seed,
            ..SearchConfig::default()
        };
        let opt = stirap_optimize(&env.system, om, horizon, &search)?;
        let trace = stirap_run(&env.system, &opt.pulses)?;
        out.table("trace.csv", &trace_table(&env.system, &trace))?;
        out.table("schedule.csv", &schedule_table(&env.system, &schedule_of(&trace, DEFAULT_DT)?))?;
        let mut restarts = Table::new(TableKind::Restarts, vec!["rank".into(), "final_quotient".into()]);
        for (k, q) in opt.restart_quotients.iter().enumerate() {
            restarts.push(vec![k as f64, *q]);
        }
        out.table("restarts.csv", &restarts)?;
        let heating = opt.final_quotient >= 1.0;
        let min = trace.min_quotient();
        out.json(
            "summary.json",
            &json!({
                "omega_max": om,
                "magnon_frequency": self.config.tripartite.magnon_frequency,
                "time_limit": tau,
                "time_limit_periods": to_periods(tau),
                "horizon_periods": to_periods(horizon),
                "pulses": opt.pulses,
                "counter_intuitive": opt.pulses.is_counter_intuitive(),
                "final_quotient": nullable(opt.final_quotient),
                "min_quotient": min.map(|m| m.0),
                "time_of_min_periods": min.map(|m| to_periods(m.1)),
                "first_crossing_1e-3_periods": trace.first_crossing(1e-3).map(to_periods),
                "converged": opt.converged,
                "heating": heating,
            }),
        )?;
        Ok(format!(
            "Ω_max = {om}: final quotient {:.3e}{} (time limit {:.3} periods)",
            opt.final_quotient,
            if heating { ", heating" } else { "" },
            to_periods(tau)
        ))
    }

    fn limits(&self, out: &mut Outputs) -> Result<String> {
        let cols = [
            "omega_m",
            "omega_s",
            "omega_p",
            "time_limit",
            "time_limit_periods",
            "delta_eff",
            "omega_eff",
        ];
        let mut t = Table::new(TableKind::Limits, cols.iter().map(|c| c.to_string()).collect());
        for &[wm, os, op] in &self.config.baseline.limits {
            let tau = raman_time_limit(wm, os, op)?;
            let (d, g) = effective_two_mode(wm, os, op);
            t.push(vec![wm, os, op, tau, to_periods(tau), d, g]);
        }
        out.table("limits.csv", &t)?;
        Ok(format!("{} time limits", t.rows.len()))
    }

    fn train(&self, env: &EnvConfig, out: &mut Outputs) -> Result<(String, Option<String>)> {
        let (agent_seed, train_seed) = derive_seeds(self.seed);
        let hp = self.config.agent.clone();
        let agent = match &self.invocation.teacher {
            Some(p) => {
                let teacher = AgentCheckpoint::load(p)?;
                log::info!("warm start from {}", p.display());
                SacAgent::from_teacher(&teacher.agent, hp, agent_seed)?
            }
            None => SacAgent::new(env.observation_dim(), env.action_dim(), hp, agent_seed)?,
        };
        let cfg = TrainConfig {
            seed: train_seed,
            ..self.config.train.clone()
        };
        let outcome = train(env, agent, &cfg, |row| {
            if let Some(s) = row.eval_score {
                log::info!(
                    "episode {}: eval score {s:.4e}, eval min quotient {:.3e}, α = {:.3e}",
                    row.episode,
                    opt_num(row.eval_min_quotient),
                    row.alpha
                );
            }
        })?;
        let curve = curve_table(&outcome.curve);
        out.table("curve.csv", &curve)?;
        out.checkpoint("best.ckpt", &AgentCheckpoint::new(outcome.best_agent(), env))?;
        out.checkpoint("final.ckpt", &AgentCheckpoint::new(&outcome.final_agent, env))?;
        let halted = outcome.halted.as_ref().map(|reason| {
            let tail = curve.rows.len().saturating_sub(HALT_TAIL);
            let mut t = curve.clone();
            t.rows.drain(..tail);
            format!("halted: {reason}\nlast curve rows:\n{}", t.to_csv())
        });
        let best = outcome.best.as_ref().map(|b| b.0);
        Ok((
            format!(
                "{} episodes, {} environment steps, best eval score {:.4e}",
                outcome.curve.len(),
                outcome.env_steps,
                opt_num(best)
            ),
            halted,
        ))
    }

    fn evaluate(&self, env: &EnvConfig, out: &mut Outputs) -> Result<String> {
        let path = self
            .invocation
            .checkpoint
            .as_ref()
            .ok_or_else(|| CliError::Invalid("evaluate needs --checkpoint".into()))?;
        let ck = AgentCheckpoint::load(path)?;
        if let Err(e) = ck.ensure_compatible(env) {
            if self.invocation.force {
                log::warn!("{e}; continuing because --force was given");
            } else {
                return Err(e.into());
            }
        }
        let target = self.config.evaluate.target_quotient;
        let traces = evaluate(&ck.agent, env, self.config.evaluate.episodes)?;
        let magnon = env.system.mode_index("magnon").filter(|_| self.config.system == SystemKind::Tripartite);
        let mut episodes = Vec::new();
        for (k, tr) in traces.iter().enumerate() {
            out.table(&format!("trace_{k}.csv"), &trace_table(&env.system, tr))?;
            out.table(&format!("schedule_{k}.csv"), &schedule_table(&env.system, &schedule_of(tr, env.dt)?))?;
            if self.config.system == SystemKind::Bipartite {
                out.table(&format!("polar_{k}.csv"), &polar_table(tr))?;
            }
            let min = tr.min_quotient();
            episodes.push(json!({
                "net_reward": nullable(tr.net_reward()),
                "min_quotient": min.map(|m| nullable(m.0)),
                "time_of_min_periods": min.map(|m| to_periods(m.1)),
                "final_quotient": tr.final_quotient().map(nullable),
                "first_crossing_periods": tr.first_crossing(target).map(to_periods),
                "max_magnon_occupancy": magnon.map(|m| tr.steps.iter().map(|s| s.occupancies[m]).fold(f64::NEG_INFINITY, f64::max)),
                "clipped_actions": tr.clipped_actions,
            }));
        }
        out.json(
            "summary.json",
            &json!({
                "checkpoint": path,
                "target_quotient": target,
                "episodes": episodes,
            }),
        )?;
        let tr = &traces[0];
        Ok(format!(
            "min quotient {:.3e}, first crossing of {target:e}: {}",
            opt_num(tr.min_quotient().map(|m| m.0)),
            tr.first_crossing(target)
                .map_or("never".to_string(), |t| format!("{:.3} periods", to_periods(t)))
        ))
    }

    fn export(&self, out: &mut Outputs) -> Result<String> {
        let format = self.invocation.format.as_deref().unwrap_or("csv");
        if !matches!(format, "csv" | "json") {
            return Err(CliError::Invalid(format!("unknown export format '{format}'")));
        }
        let inputs = &self.invocation.inputs;
        let (stem, table) = match inputs.as_slice() {
            [] => return Err(CliError::Invalid("export needs at least one input table".into())),
            [one] => (
                one.file_stem().map_or("export".into(), |s| s.to_string_lossy().into_owned()),
                Table::read(one)?,
            ),
            many => {
                let mut key_name = None;
                let mut parts = Vec::new();
                for p in many {
                    let (name, key) = sweep_key(p)?;
                    if key_name.get_or_insert(name) != &name {
                        return Err(CliError::Invalid("inputs come from runs on different systems".into()));
                    }
                    parts.push((key, Table::read(p)?));
                }
                parts.sort_by(|a, b| a.0.total_cmp(&b.0));
                ("sweep".to_string(), Table::long_format(key_name.expect("non-empty"), &parts)?)
            }
        };
        match format {
            "csv" => {
                out.text(&format!("{stem}.csv"), &table.to_csv())?;
                out.json(&format!("{stem}.schema.json"), &table.schema())?;
            }
            _ => out.json(&format!("{stem}.json"), &table.to_json())?,
        }
        Ok(format!("{} table with {} rows as {format}", table.kind, table.rows.len()))
    }
}

/// Key of a run's table in a long-format sweep, read from the manifest next
/// to it: the coupling bound for bipartite runs, `Ω_max` for tripartite ones.
fn sweep_key(table_path: &Path) -> Result<(&'static str, f64)> {
    let m = table_path
        .parent()
        .map(|d| d.join(MANIFEST_FILE))
        .filter(|p| p.exists())
        .ok_or_else(|| {
            CliError::Invalid(format!("{}: no manifest next to this table to key it by", table_path.display()))
        })?;
    let m = RunManifest::load(&m)?;
    Ok(match m.config.system {
        SystemKind::Bipartite => ("g_max", m.config.control.g_max),
        SystemKind::Tripartite => ("omega_max", m.config.control.omega_max),
    })
}

pub fn curve_table(rows: &[CurveRow]) -> Table {
    let cols = [
        "episode",
        "net_reward",
        "mean_reward",
        "mean_quotient",
        "min_quotient",
        "eval_score",
        "eval_min_quotient",
        "alpha",
        "critic_loss",
        "actor_loss",
    ];
    let mut t = Table::new(TableKind::Curve, cols.iter().map(|c| c.to_string()).collect());
    for r in rows {
        t.push(vec![
            r.episode as f64,
            r.net_reward,
            r.mean_reward,
            r.mean_quotient,
            r.min_quotient,
            opt_num(r.eval_score),
            opt_num(r.eval_min_quotient),
            r.alpha,
            r.critic_loss,
            r.actor_loss,
        ]);
    }
    t
}
