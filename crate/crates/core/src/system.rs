//! Declarative description of bosonic modes, their baths, and the quadratic
//! couplings between them.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

/// A single bosonic mode with its Markovian bath.
///
/// Frequencies and rates are in units of the reference phonon frequency
/// `ω_b`; in a rotating frame `frequency` is the detuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub label: String,
    pub frequency: f64,
    pub damping: f64,
    pub bath_occupancy: f64,
}

impl ModeSpec {
    pub fn new(label: impl Into<String>, frequency: f64, damping: f64, bath_occupancy: f64) -> Self {
        Self {
            label: label.into(),
            frequency,
            damping,
            bath_occupancy,
        }
    }
}

/// Interaction form between two modes `(c1, c2) = mode_pair`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    /// `(G c1 + G* c1†)(c2 + c2†)` with complex `G`.
    LinearizedComplex,
    /// `Ω (c1 + c1†)(c2 + c2†)` with real `Ω`.
    PositionPosition,
    /// `G (c1 c2† + c1† c2)` with real `G`.
    BeamSplitterRwa,
}

impl CouplingKind {
    pub fn is_complex(self) -> bool {
        matches!(self, CouplingKind::LinearizedComplex)
    }
}

/// Where a coupling amplitude comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Amplitude {
    Fixed { re: f64, im: f64 },
    ControlSlot(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub kind: CouplingKind,
    pub mode_pair: (usize, usize),
    pub amplitude: Amplitude,
}

/// Modes, couplings and the number of externally controlled amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub modes: Vec<ModeSpec>,
    pub couplings: Vec<CouplingSpec>,
    pub n_control_slots: usize,
    pub target_mode: usize,
}

impl SystemSpec {
    /// Builds and validates a system.
    pub fn new(
        modes: Vec<ModeSpec>,
        couplings: Vec<CouplingSpec>,
        n_control_slots: usize,
        target_mode: usize,
    ) -> Result<Self> {
        let spec = Self {
            modes,
            couplings,
            n_control_slots,
            target_mode,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// Dimension of the quadrature covariance matrix, `2N`.
    pub fn phase_space_dim(&self) -> usize {
        2 * self.modes.len()
    }

    pub fn mode_index(&self, label: &str) -> Option<usize> {
        self.modes.iter().position(|m| m.label == label)
    }

    /// Thermal occupancy of the target mode's bath.
    pub fn target_bath_occupancy(&self) -> f64 {
        self.modes[self.target_mode].bath_occupancy
    }

    /// Whether control slot `slot` drives a complex-valued coupling.
    pub fn slot_is_complex(&self, slot: usize) -> bool {
        self.couplings
            .iter()
            .any(|c| c.amplitude == Amplitude::ControlSlot(slot) && c.kind.is_complex())
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(CoreError::InvalidSystem(msg));
        if self.modes.is_empty() {
            return invalid("system has no modes".into());
        }
        for (i, m) in self.modes.iter().enumerate() {
            if !(m.frequency.is_finite() && m.frequency > 0.0) {
                return invalid(format!("mode {i} ({}) frequency must be > 0", m.label));
            }
            if !(m.damping.is_finite() && m.damping >= 0.0) {
                return invalid(format!("mode {i} ({}) damping must be >= 0", m.label));
            }
            if !(m.bath_occupancy.is_finite() && m.bath_occupancy >= 0.0) {
                return invalid(format!("mode {i} ({}) bath occupancy must be >= 0", m.label));
            }
        }
        if self.target_mode >= self.modes.len() {
            return invalid(format!("target mode {} out of range", self.target_mode));
        }
        let mut used = vec![false; self.n_control_slots];
        for (k, c) in self.couplings.iter().enumerate() {
            let (i, j) = c.mode_pair;
            if i == j || i >= self.modes.len() || j >= self.modes.len() {
                return invalid(format!("coupling {k} has invalid mode pair ({i}, {j})"));
            }
            match c.amplitude {
                Amplitude::ControlSlot(s) => {
                    if s >= self.n_control_slots {
                        return invalid(format!("coupling {k} references missing control slot {s}"));
                    }
                    used[s] = true;
                }
                Amplitude::Fixed { re, im } => {
                    if !re.is_finite() || !im.is_finite() {
                        return invalid(format!("coupling {k} has a non-finite amplitude"));
                    }
                    if !c.kind.is_complex() && im != 0.0 {
                        return invalid(format!("coupling {k} is real but has an imaginary part"));
                    }
                }
            }
        }
        if let Some(s) = used.iter().position(|u| !u) {
            return invalid(format!("control slot {s} is not referenced by any coupling"));
        }
        Ok(())
    }

    /// Resolves every coupling amplitude for the given control values.
    pub(crate) fn resolve_amplitudes(&self, controls: &[Complex64]) -> Result<Vec<Complex64>> {
        if controls.len() != self.n_control_slots {
            return Err(CoreError::InvalidInput(format!(
                "expected {} control values, got {}",
                self.n_control_slots,
                controls.len()
            )));
        }
        if let Some(bad) = controls.iter().position(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(CoreError::InvalidInput(format!("control {bad} is not finite")));
        }
        self.couplings
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let g = match c.amplitude {
                    Amplitude::Fixed { re, im } => Complex64::new(re, im),
                    Amplitude::ControlSlot(s) => controls[s],
                };
                if !c.kind.is_complex() && g.im != 0.0 {
                    return Err(CoreError::InvalidInput(format!(
                        "coupling {k} ({:?}) requires a real amplitude, got {g}",
                        c.kind
                    )));
                }
                Ok(g)
            })
            .collect()
    }
}

/// Parameters of the two-mode magnon–phonon model with a complex linearized
/// coupling `G` on control slot 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BipartiteParams {
    /// Magnon detuning `Δ_m`.
    pub magnon_detuning: f64,
    pub phonon_frequency: f64,
    pub magnon_damping: f64,
    pub phonon_damping: f64,
    pub magnon_bath: f64,
    /// Phonon bath occupancy, also the thermal reference `n_T`.
    pub phonon_bath: f64,
}

impl Default for BipartiteParams {
    fn default() -> Self {
        Self {
            magnon_detuning: 1.0,
            phonon_frequency: 1.0,
            magnon_damping: 0.1,
            phonon_damping: 1e-5,
            magnon_bath: 0.0,
            phonon_bath: 100.0,
        }
    }
}

impl BipartiteParams {
    pub fn build(&self) -> Result<SystemSpec> {
        SystemSpec::new(
            vec![
                ModeSpec::new("magnon", self.magnon_detuning, self.magnon_damping, self.magnon_bath),
                ModeSpec::new("phonon", self.phonon_frequency, self.phonon_damping, self.phonon_bath),
            ],
            vec![CouplingSpec {
                kind: CouplingKind::LinearizedComplex,
                mode_pair: (0, 1),
                amplitude: Amplitude::ControlSlot(0),
            }],
            1,
            1,
        )
    }
}

/// Parameters of the photon–magnon–phonon chain. Control slot 0 is the
/// optomagnonic rate `Ω_S`, slot 1 the magnon–phonon rate `Ω_P`.
///
/// The damping and magnon-bath defaults are placeholders, not measured values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripartiteParams {
    pub cavity_detuning: f64,
    pub magnon_frequency: f64,
    pub phonon_frequency: f64,
    pub cavity_damping: f64,
    pub magnon_damping: f64,
    pub phonon_damping: f64,
    pub cavity_bath: f64,
    pub magnon_bath: f64,
    pub phonon_bath: f64,
}

impl Default for TripartiteParams {
    fn default() -> Self {
        Self {
            cavity_detuning: 1.0,
            magnon_frequency: 1e5,
            phonon_frequency: 1.0,
            cavity_damping: 0.1,
            magnon_damping: 1e-3,
            phonon_damping: 1e-5,
            cavity_bath: 0.0,
            magnon_bath: 0.0,
            phonon_bath: 100.0,
        }
    }
}

impl TripartiteParams {
    /// The easier training system with `ω_m = 10³`.
    pub fn auxiliary() -> Self {
        Self {
            magnon_frequency: 1e3,
            ..Self::default()
        }
    }

    pub fn undamped(mut self) -> Self {
        self.cavity_damping = 0.0;
        self.magnon_damping = 0.0;
        self.phonon_damping = 0.0;
        self
    }

    pub fn build(&self) -> Result<SystemSpec> {
        SystemSpec::new(
            vec![
                ModeSpec::new("photon", self.cavity_detuning, self.cavity_damping, self.cavity_bath),
                ModeSpec::new("magnon", self.magnon_frequency, self.magnon_damping, self.magnon_bath),
                ModeSpec::new("phonon", self.phonon_frequency, self.phonon_damping, self.phonon_bath),
            ],
            vec![
                CouplingSpec {
                    kind: CouplingKind::PositionPosition,
                    mode_pair: (0, 1),
                    amplitude: Amplitude::ControlSlot(0),
                },
                CouplingSpec {
                    kind: CouplingKind::PositionPosition,
                    mode_pair: (1, 2),
                    amplitude: Amplitude::ControlSlot(1),
                },
            ],
            2,
            2,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        let bi = BipartiteParams::default().build().unwrap();
        assert_eq!(bi.n_modes(), 2);
        assert_eq!(bi.target_mode, 1);
        assert!(bi.slot_is_complex(0));
        let tri = TripartiteParams::default().build().unwrap();
        assert_eq!(tri.phase_space_dim(), 6);
        assert!(!tri.slot_is_complex(1));
        assert_eq!(tri.mode_index("magnon"), Some(1));
    }

    #[test]
    fn rejects_bad_pairs_and_slots() {
        let modes = vec![ModeSpec::new("a", 1.0, 0.1, 0.0), ModeSpec::new("b", 1.0, 0.1, 0.0)];
        let same = CouplingSpec {
            kind: CouplingKind::PositionPosition,
            mode_pair: (1, 1),
            amplitude: Amplitude::Fixed { re: 0.1, im: 0.0 },
        };
        assert!(SystemSpec::new(modes.clone(), vec![same], 0, 0).is_err());

        let slot = CouplingSpec {
            kind: CouplingKind::PositionPosition,
            mode_pair: (0, 1),
            amplitude: Amplitude::ControlSlot(1),
        };
        assert!(SystemSpec::new(modes.clone(), vec![slot.clone()], 1, 0).is_err());
        // slot 0 declared but never referenced
        let slot1 = CouplingSpec {
            amplitude: Amplitude::ControlSlot(1),
            ..slot
        };
        assert!(SystemSpec::new(modes.clone(), vec![slot1], 2, 0).is_err());

        let mut bad = modes;
        bad[0].frequency = 0.0;
        assert!(SystemSpec::new(bad, vec![], 0, 0).is_err());
    }

    #[test]
    fn real_couplings_reject_complex_controls() {
        let tri = TripartiteParams::default().build().unwrap();
        let err = tri.resolve_amplitudes(&[Complex64::new(1.0, 0.5), Complex64::new(1.0, 0.0)]);
        assert!(err.is_err());
        assert!(tri.resolve_amplitudes(&[Complex64::new(1.0, 0.0)]).is_err());
        assert!(tri
            .resolve_amplitudes(&[Complex64::new(f64::NAN, 0.0), Complex64::new(1.0, 0.0)])
            .is_err());
    }
}
