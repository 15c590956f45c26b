//! Experiment configuration: one JSON document per run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stark_echo::ensemble::EnsembleSpec;
use stark_echo::protocols::{CouplingOptions, Placement};
use stark_echo::quantum::RelaxationParams;

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    DemolitionScan,
    ConditionalPhase,
    SelectivityScan,
    Validate,
}

/// Inclusive linear grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanRange {
    pub start: f64,
    pub stop: f64,
    pub n_points: usize,
}

impl ScanRange {
    pub fn points(&self) -> Vec<f64> {
        match self.n_points {
            0 => Vec::new(),
            1 => vec![self.start],
            n => (0..n).map(|i| self.start + (self.stop - self.start) * i as f64 / (n - 1) as f64).collect(),
        }
    }

    fn check(&self, name: &str) -> Result<(), String> {
        if self.n_points == 0 {
            return Err(format!("{name}.n_points: scan range is empty"));
        }
        if !self.start.is_finite() || !self.stop.is_finite() {
            return Err(format!("{name}: start and stop must be finite"));
        }
        if self.stop < self.start {
            return Err(format!("{name}: stop ({}) is below start ({})", self.stop, self.start));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    /// Echo delay τ; also the selection delay.
    pub tau_s: f64,
    pub target_rabi_hz: f64,
    pub control_rabi_hz: f64,
    #[serde(default = "default_placement")]
    pub perturb_placement: Placement,
    /// Area of the control perturbation in turns (0.5 = π). Zero leaves the
    /// control off in both arms.
    #[serde(default = "default_control_area")]
    pub control_pulse_area: f64,
}

fn default_placement() -> Placement {
    Placement::WithRephasing
}

fn default_control_area() -> f64 {
    0.5
}

fn default_prep_branch() -> f64 {
    1.0
}

/// Repeated 2π pulses plus reset on both channels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub n_cycles: u32,
    /// Shelving fraction of the preparation resets.
    #[serde(default = "default_prep_branch")]
    pub branch_aux: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    /// Design coupling Δ*.
    pub target_coupling_hz: f64,
    pub n_cycles: u32,
    #[serde(default)]
    pub alternate_roles: bool,
    #[serde(default = "default_prep_branch")]
    pub branch_aux: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub dt_s: f64,
    /// Recorded half-window around the expected echo, in envelope widths.
    pub half_window_envelopes: f64,
    /// Additive Gaussian noise on I and Q (standard deviation per unit total weight).
    pub noise_sigma: Option<f64>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self { dt_s: 0.1e-6, half_window_envelopes: 2.0, noise_sigma: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub ensemble: EnsembleSpec,
    #[serde(default)]
    pub relaxation: RelaxationParams,
    #[serde(default)]
    pub coupling: CouplingOptions,
    pub sequence: SequenceConfig,
    /// Replace every sampled coupling by this value.
    #[serde(default)]
    pub fixed_coupling_hz: Option<f64>,
    #[serde(default)]
    pub distillation: Option<DistillConfig>,
    #[serde(default)]
    pub selection: Option<SelectionConfig>,
    /// Control pulse durations for the demolition scan.
    #[serde(default)]
    pub control_duration_scan: Option<ScanRange>,
    /// Fixed couplings for the selectivity scan.
    #[serde(default)]
    pub coupling_scan: Option<ScanRange>,
    #[serde(default)]
    pub detection: DetectionConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit_trajectories: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            HarnessError::Config(format!(
                "line {} column {}, field `{}`: {inner}",
                inner.line(),
                inner.column(),
                e.path()
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |field: &str, e: &dyn std::fmt::Display| HarnessError::Config(format!("field `{field}`: {e}"));
        self.ensemble.validate().map_err(|e| bad("ensemble", &e))?;
        self.relaxation.validate().map_err(|e| bad("relaxation", &e))?;
        let s = &self.sequence;
        for (name, v) in [
            ("sequence.tau_s", s.tau_s),
            ("sequence.target_rabi_hz", s.target_rabi_hz),
            ("sequence.control_rabi_hz", s.control_rabi_hz),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(bad(name, &format!("must be finite and > 0, got {v}")));
            }
        }
        if !(s.control_pulse_area.is_finite() && s.control_pulse_area >= 0.0) {
            return Err(bad("sequence.control_pulse_area", &"must be finite and >= 0"));
        }
        if !(self.coupling.max_substep_s > 0.0) {
            return Err(bad("coupling.max_substep_s", &"must be > 0"));
        }
        if let Some(c) = self.fixed_coupling_hz {
            if !c.is_finite() {
                return Err(bad("fixed_coupling_hz", &"must be finite"));
            }
        }
        if let Some(d) = &self.distillation {
            if d.n_cycles == 0 {
                return Err(bad("distillation.n_cycles", &"must be >= 1"));
            }
            if !(0.0..=1.0).contains(&d.branch_aux) {
                return Err(bad("distillation.branch_aux", &"must be in [0, 1]"));
            }
        }
        if let Some(sel) = &self.selection {
            if sel.n_cycles == 0 {
                return Err(bad("selection.n_cycles", &"must be >= 1"));
            }
            if !sel.target_coupling_hz.is_finite() {
                return Err(bad("selection.target_coupling_hz", &"must be finite"));
            }
            if !(0.0..=1.0).contains(&sel.branch_aux) {
                return Err(bad("selection.branch_aux", &"must be in [0, 1]"));
            }
        }
        let d = &self.detection;
        if !(d.dt_s.is_finite() && d.dt_s > 0.0) {
            return Err(bad("detection.dt_s", &"must be finite and > 0"));
        }
        if !(d.half_window_envelopes.is_finite() && d.half_window_envelopes > 0.0) {
            return Err(bad("detection.half_window_envelopes", &"must be finite and > 0"));
        }
        if let Some(sigma) = d.noise_sigma {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(bad("detection.noise_sigma", &"must be finite and >= 0"));
            }
        }

        match self.experiment {
            ExperimentKind::DemolitionScan => {
                let scan = self
                    .control_duration_scan
                    .ok_or_else(|| bad("control_duration_scan", &"required for demolition_scan"))?;
                scan.check("control_duration_scan").map_err(HarnessError::Config)?;
                if scan.start < 0.0 {
                    return Err(bad("control_duration_scan.start", &"durations must be >= 0"));
                }
                let periods = (scan.stop - scan.start) * s.control_rabi_hz;
                if periods < 2.0 - 1e-9 {
                    return Err(bad(
                        "control_duration_scan",
                        &format!("covers {periods:.3} control Rabi periods; at least 2 are needed"),
                    ));
                }
            }
            ExperimentKind::ConditionalPhase => {
                if self.selection.is_none() && self.fixed_coupling_hz.is_none() {
                    return Err(bad(
                        "selection",
                        &"conditional_phase needs pair selection (or a fixed coupling)",
                    ));
                }
            }
            ExperimentKind::SelectivityScan => {
                let scan = self.coupling_scan.ok_or_else(|| bad("coupling_scan", &"required for selectivity_scan"))?;
                scan.check("coupling_scan").map_err(HarnessError::Config)?;
                if self.selection.is_none() {
                    return Err(bad("selection", &"required for selectivity_scan"));
                }
            }
            ExperimentKind::Validate => {}
        }
        Ok(())
    }

    /// Relaxation used by the preparation resets.
    pub fn prep_relaxation(&self, branch_aux: f64) -> RelaxationParams {
        RelaxationParams { branch_aux, ..self.relaxation }
    }
}
