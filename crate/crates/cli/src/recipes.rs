//! Built-in run configurations.

use magcool_core::TripartiteParams;
use magcool_sac::Hyperparams;

use crate::config::{RunConfig, SystemKind};
use crate::manifest::CommandKind;
use crate::{BaselineMode, CliError, Result};

/// Bipartite coupling bounds, as multiples of `√2`.
pub const G_MAX_SWEEP: [f64; 9] = [0.1, 0.2, 0.3, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0];
pub const STIRAP_OMEGAS: [f64; 5] = [6.0, 8.0, 10.0, 12.0, 15.0];

#[derive(Debug, Clone)]
pub struct Recipe {
    pub name: String,
    /// Short experiment tag shown by `recipes list`.
    pub tag: &'static str,
    pub command: CommandKind,
    pub mode: Option<BaselineMode>,
    pub description: String,
    pub config: RunConfig,
    /// Whether the recipe is meant to be run with `--teacher`.
    pub wants_teacher: bool,
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

pub fn all() -> Vec<Recipe> {
    let mut out = Vec::new();

    let zero = RunConfig {
        system: SystemKind::Bipartite,
        ..RunConfig::default()
    };
    out.push(Recipe {
        name: "bipartite-idle".into(),
        tag: "sanity",
        command: CommandKind::Simulate,
        mode: None,
        description: "bipartite system with the coupling switched off".into(),
        config: zero,
        wants_teacher: false,
    });

    for g in G_MAX_SWEEP {
        let mut cfg = RunConfig::default();
        cfg.control.g_max = g * std::f64::consts::SQRT_2;
        out.push(Recipe {
            name: format!("bipartite-gmax-{}", fmt_num(g)),
            tag: "coupling-bound sweep",
            command: CommandKind::Train,
            mode: None,
            description: format!("train on the bipartite system with |G| <= {}·√2", fmt_num(g)),
            config: cfg,
            wants_teacher: false,
        });
    }

    let tri = |omega_m: f64, omega_max: f64| {
        let mut cfg = RunConfig {
            system: SystemKind::Tripartite,
            tripartite: TripartiteParams {
                magnon_frequency: omega_m,
                ..TripartiteParams::default()
            },
            agent: Hyperparams::with_noise_layer(),
            ..RunConfig::default()
        };
        cfg.control.omega_max = omega_max;
        cfg.control.lambda = 10.0;
        cfg
    };
    out.push(Recipe {
        name: "tripartite-auxiliary".into(),
        tag: "three-mode training",
        command: CommandKind::Train,
        mode: None,
        description: "first training stage: ω_m = 1e3, Ω_max = 10, 150 steps".into(),
        config: tri(1e3, 10.0),
        wants_teacher: false,
    });
    out.push(Recipe {
        name: "tripartite-primary".into(),
        tag: "three-mode training",
        command: CommandKind::Train,
        mode: None,
        description: "second training stage: ω_m = 1e5, Ω_max = 100; pass --teacher <auxiliary checkpoint>".into(),
        config: tri(1e5, 100.0),
        wants_teacher: true,
    });

    let mut sideband = RunConfig::default();
    // The steady-state floor of the default system sits just above 1e-4.
    sideband.baseline.target_quotient = 2e-4;
    out.push(Recipe {
        name: "sideband".into(),
        tag: "constant-coupling baseline",
        command: CommandKind::Baseline,
        mode: Some(BaselineMode::Sideband),
        description: "constant real coupling sweep on the bipartite defaults".into(),
        config: sideband,
        wants_teacher: false,
    });

    for om in STIRAP_OMEGAS {
        let mut cfg = tri(1e3, om);
        cfg.tripartite = TripartiteParams::auxiliary().undamped();
        out.push(Recipe {
            name: format!("stirap-omega-{}", fmt_num(om)),
            tag: "pulse baseline",
            command: CommandKind::Baseline,
            mode: Some(BaselineMode::Stirap),
            description: format!("optimised counter-intuitive Gaussian pulses, ω_m = 1e3, Ω_max = {}", fmt_num(om)),
            config: cfg,
            wants_teacher: false,
        });
    }

    out.push(Recipe {
        name: "limits".into(),
        tag: "time limits",
        command: CommandKind::Baseline,
        mode: Some(BaselineMode::Limits),
        description: "Raman transfer time limits for the configured (ω_m, Ω_S, Ω_P)".into(),
        config: RunConfig::default(),
        wants_teacher: false,
    });
    out
}

/// Group names that expand to several recipes.
pub const GROUPS: [(&str, &str); 2] = [("bipartite-gmax", "bipartite-gmax-"), ("stirap", "stirap-omega-")];

/// A recipe by name, or every member of a group.
pub fn find(name: &str) -> Result<Vec<Recipe>> {
    let all = all();
    if let Some(r) = all.iter().find(|r| r.name == name) {
        return Ok(vec![r.clone()]);
    }
    if let Some((_, prefix)) = GROUPS.iter().find(|(g, _)| *g == name) {
        return Ok(all.into_iter().filter(|r| r.name.starts_with(prefix)).collect());
    }
    Err(CliError::Invalid(format!(
        "unknown recipe '{name}'; `magcool recipes list` shows the available ones"
    )))
}
