use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use magcool::config::{RunConfig, ScheduleConfig};
use magcool::manifest::{CommandKind, Invocation, RunManifest};
use magcool::{recipes, BaselineMode, CliError, Result, Run, RunReport, DEFAULT_OUT, OUT_ENV};

#[derive(Parser)]
#[command(name = "magcool", version, about = "Cooling simulations, baselines and agent training")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// TOML run configuration, or a run manifest to repeat.
    #[arg(long, global = true, conflicts_with = "recipe")]
    config: Option<PathBuf>,
    /// Run seed; every random draw of the run derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; each run writes to its own subdirectory.
    #[arg(long, global = true, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Checkpoint to warm-start training from.
    #[arg(long, global = true)]
    teacher: Option<PathBuf>,
    /// Built-in recipe or recipe group (see `magcool recipes list`).
    #[arg(long, global = true)]
    recipe: Option<String>,
    /// Worker threads for sweeps and batched simulation.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Propagate the moment equations under an open-loop schedule.
    Simulate,
    /// Constant-coupling sweep, pulse-pair search or time-limit table.
    Baseline { mode: Option<BaselineMode> },
    /// Train an agent; writes checkpoints and the learning curve.
    Train,
    /// Deterministic rollouts of a checkpoint.
    Evaluate {
        /// Agent checkpoint; taken from the manifest when repeating a run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Evaluate even if the checkpoint was written for another environment.
        #[arg(long)]
        force: bool,
    },
    /// Convert tables to plot-ready csv or json. Several inputs from a sweep
    /// are combined into one long-format table.
    Export {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// List or print built-in recipes.
    Recipes {
        #[command(subcommand)]
        action: RecipesCmd,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum RecipesCmd {
    List,
    /// Print a recipe's full configuration as TOML.
    Show { name: String },
    /// Print the default configuration as TOML.
    Defaults,
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| CliError::io(p, e))
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let ScheduleConfig::File { path: sched } = &mut cfg.schedule {
        if sched.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            *sched = absolute(&base.join(&*sched))?;
        }
    }
    Ok(cfg)
}

fn is_manifest(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

fn plan(cli: &Cli, kind: CommandKind) -> Result<Vec<Run>> {
    let mut inv = Invocation::new(kind);
    match &cli.cmd {
        Cmd::Baseline { mode } => inv.mode = mode.map(|m| m.as_str().to_string()),
        Cmd::Evaluate { checkpoint, force, .. } => {
            inv.checkpoint = checkpoint.as_deref().map(absolute).transpose()?;
            inv.force = *force;
        }
        Cmd::Export { inputs, format } => {
            inv.inputs = inputs.iter().map(|p| absolute(p)).collect::<Result<_>>()?;
            inv.format = Some(match format {
                Format::Csv => "csv".into(),
                Format::Json => "json".into(),
            });
        }
        _ => {}
    }
    if let Some(t) = &cli.teacher {
        inv.teacher = Some(absolute(t)?);
    }

    if let Some(path) = cli.config.as_ref().filter(|p| is_manifest(p)) {
        let m = RunManifest::load(path)?;
        if m.invocation.command != kind {
            return Err(CliError::Invalid(format!(
                "{} records a `{}` run, not `{}`",
                path.display(),
                m.invocation.command.as_str(),
                kind.as_str()
            )));
        }
        if cli.seed.is_some_and(|s| s != m.seed) {
            return Err(CliError::Invalid("--seed conflicts with the manifest's seed".into()));
        }
        return Ok(vec![Run::from_manifest(&m)]);
    }

    if kind == CommandKind::Evaluate && inv.checkpoint.is_none() {
        return Err(CliError::Invalid("evaluate needs --checkpoint".into()));
    }
    let seed = cli.seed.unwrap_or(0);
    let mut runs = Vec::new();
    if let Some(name) = &cli.recipe {
        for r in recipes::find(name)? {
            if r.command != kind {
                return Err(CliError::Invalid(format!(
                    "recipe '{}' is a `{}` recipe",
                    r.name,
                    r.command.as_str()
                )));
            }
            if r.wants_teacher && inv.teacher.is_none() {
                log::warn!("recipe '{}' is meant to start from --teacher; training from scratch", r.name);
            }
            let mut i = inv.clone();
            i.recipe = Some(r.name.clone());
            if i.mode.is_none() {
                i.mode = r.mode.map(|m| m.as_str().to_string());
            }
            let mut config = r.config;
            if let Cmd::Evaluate { episodes: Some(n), .. } = cli.cmd {
                config.evaluate.episodes = n;
            }
            runs.push(Run {
                name: format!("{}-s{seed}", r.name),
                invocation: i,
                config,
                seed,
            });
        }
        return Ok(runs);
    }

    let (label, mut config) = match &cli.config {
        Some(p) => (
            p.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned()),
            load_config(p)?,
        ),
        None => (kind.as_str().to_string(), RunConfig::default()),
    };
    if let Cmd::Evaluate { episodes: Some(n), .. } = cli.cmd {
        config.evaluate.episodes = n;
    }
    let label = match &inv.mode {
        Some(m) if cli.config.is_some() => format!("{label}-{m}"),
        Some(m) => m.clone(),
        None => label,
    };
    if kind == CommandKind::Baseline && inv.mode.is_none() {
        return Err(CliError::Invalid("baseline needs a mode: sideband, stirap or limits".into()));
    }
    Ok(vec![Run {
        name: format!("{label}-s{seed}"),
        invocation: inv,
        config,
        seed,
    }])
}

fn recipes_cmd(action: &RecipesCmd) -> Result<()> {
    match action {
        RecipesCmd::List => {
            for r in recipes::all() {
                let cmd = match r.mode {
                    Some(m) => format!("baseline {}", m.as_str()),
                    None => r.command.as_str().to_string(),
                };
                println!("{:<24} {:<18} [{}] {}", r.name, cmd, r.tag, r.description);
            }
            for (g, prefix) in recipes::GROUPS {
                println!("{g:<24} group of {prefix}*");
            }
        }
        RecipesCmd::Show { name } => {
            for r in recipes::find(name)? {
                println!("# {}: {}\n{}", r.name, r.description, r.config.to_toml());
            }
        }
        RecipesCmd::Defaults => print!("{}", RunConfig::default().to_toml()),
    }
    Ok(())
}

fn report(r: &RunReport) {
    println!("{}: {}", r.dir.display(), r.summary);
    if let Some(h) = &r.halted {
        eprintln!("{h}");
    }
}

fn real_main(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.workers {
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("cannot start {n} workers: {e}")))?;
        #[cfg(not(feature = "parallel"))]
        log::warn!("built without the parallel feature; --workers {n} is ignored");
    }
    let kind = match &cli.cmd {
        Cmd::Simulate => CommandKind::Simulate,
        Cmd::Baseline { .. } => CommandKind::Baseline,
        Cmd::Train => CommandKind::Train,
        Cmd::Evaluate { .. } => CommandKind::Evaluate,
        Cmd::Export { .. } => CommandKind::Export,
        Cmd::Recipes { action } => {
            recipes_cmd(action)?;
            return Ok(ExitCode::SUCCESS);
        }
    };
    let root = cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let runs = plan(&cli, kind)?;
    let results = magcool_core::par::map(&runs, |r| r.execute(&root));
    let mut code = ExitCode::SUCCESS;
    for (run, res) in runs.iter().zip(results) {
        match res {
            Ok(r) => {
                report(&r);
                if r.halted.is_some() {
                    code = ExitCode::from(2);
                }
            }
            Err(e) => {
                eprintln!("{}: {e}", run.name);
                code = ExitCode::FAILURE;
            }
        }
    }
    Ok(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main(Cli::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
