//! TOML scenario configuration.

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::certify::{RecorderOptions, W2Solver, DEFAULT_PROP31_TOLERANCE, DEFAULT_VANISHING_FRACTION};
use crate::dynamics::{FieldModel, InitialSpec, Perturbation, TwinVariant};
use crate::field::{GridSpec, SofteningSpec};
use crate::ot::MAX_EXACT_POINTS;

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: String,
    /// Sign of the interaction: `1` repulsive, `-1` attractive.
    #[serde(default = "one")]
    pub epsilon: f64,
    pub particles: usize,
    #[serde(default = "one")]
    pub total_mass: f64,
    #[serde(default)]
    pub seed: u64,
    pub dt: f64,
    pub t_end: f64,
    /// Softening length for the direct model (default: half a cell).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub softening: Option<f64>,
    #[serde(default = "yes")]
    pub enforce_dt_rule: bool,
    pub initial: InitialSpec,
    pub grid: GridConfig,
    pub twin: TwinConfig,
    #[serde(default)]
    pub ot: OtConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Cubic box `[-half_width, half_width]^3` with `cells` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Grid,
    Direct,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub model: ModelKind,
    /// Per-axis node count overriding `grid.cells` (same box).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
    #[serde(default)]
    pub perturbation: Perturbation,
}

/// `a` is the reference flow (also the single flow of `simulate`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwinConfig {
    pub a: VariantConfig,
    pub b: VariantConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OtConfig {
    pub solver: W2Solver,
    pub regularization: f64,
    /// OT evaluations every `stride` steps (0 disables them).
    pub stride: usize,
    pub max_points: usize,
    pub loglip_pairs: usize,
}

impl Default for OtConfig {
    fn default() -> Self {
        let r = RecorderOptions::default();
        OtConfig {
            solver: r.w2_solver,
            regularization: r.regularization,
            stride: r.ot_stride,
            max_points: r.max_points,
            loglip_pairs: r.loglip_pairs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub prop31: f64,
    /// Required fraction of in-window steps satisfying the gap inequality.
    pub gronwall_pass_fraction: f64,
    /// Relative tolerance on the deposited mass.
    pub mass: f64,
    pub vanishing_fraction: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            prop31: DEFAULT_PROP31_TOLERANCE,
            gronwall_pass_fraction: 0.99,
            mass: 1e-12,
            vanishing_fraction: DEFAULT_VANISHING_FRACTION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Snapshot (and dump) interval in steps; 0 keeps only the first and last.
    pub snapshot_every: usize,
    pub dumps: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { snapshot_every: 0, dumps: true }
    }
}

/// 1-based line of the byte offset `pos` in `text`.
fn line_of(text: &str, pos: usize) -> usize {
    text[..pos.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Line of `key = ...` inside the table `section` (dotted, `""` for the root).
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (k, line) in text.lines().enumerate() {
        let l = line.trim();
        if let Some(rest) = l.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            if !key.is_empty() || current != section {
                continue;
            }
            return Some(k + 1);
        }
        if current == section && !key.is_empty() {
            if let Some((lhs, _)) = l.split_once('=') {
                if lhs.trim() == key {
                    return Some(k + 1);
                }
            }
        }
    }
    None
}

impl ScenarioConfig {
    /// Parses and validates; errors carry the offending line when known.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| HarnessError::Config {
            origin: origin.to_string(),
            line: e.span().map(|s| line_of(text, s.start)),
            msg: e.message().to_string(),
        })?;
        cfg.validate().map_err(|(section, key, msg)| HarnessError::Config {
            origin: origin.to_string(),
            line: locate(text, section, key).or_else(|| locate(text, section, "")),
            msg,
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, &'static str, String)> {
        let finite_pos = |v: f64| v > 0.0 && v.is_finite();
        if self.epsilon != 1.0 && self.epsilon != -1.0 {
            return Err(("", "epsilon", format!("epsilon must be 1 or -1, got {}", self.epsilon)));
        }
        if self.particles == 0 {
            return Err(("", "particles", "particles must be at least 1".into()));
        }
        if !finite_pos(self.total_mass) {
            return Err(("", "total_mass", format!("total_mass must be positive, got {}", self.total_mass)));
        }
        if !finite_pos(self.dt) {
            return Err(("", "dt", format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end.is_finite() && self.dt < self.t_end) {
            return Err(("", "t_end", format!("t_end must exceed dt, got {}", self.t_end)));
        }
        if let Some(s) = self.softening {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(("", "softening", format!("softening must be nonnegative, got {s}")));
            }
        }
        self.initial.validate().map_err(|e| ("initial", "", e.to_string()))?;
        if !finite_pos(self.grid.half_width) {
            return Err(("grid", "half_width", format!("half_width must be positive, got {}", self.grid.half_width)));
        }
        for (section, cells) in [("grid", Some(self.grid.cells)), ("twin.a", self.twin.a.cells), ("twin.b", self.twin.b.cells)] {
            if let Some(c) = cells {
                if c < 2 {
                    return Err((section, "cells", format!("cells must be at least 2, got {c}")));
                }
            }
        }
        for (section, v) in [("twin.a", &self.twin.a), ("twin.b", &self.twin.b)] {
            if v.cells.is_some() && v.model != ModelKind::Grid {
                return Err((section, "cells", "cells only applies to the grid model".into()));
            }
            let m = v.perturbation.magnitude();
            if !(m >= 0.0 && m.is_finite()) {
                return Err((section, "perturbation", format!("invalid perturbation size {m}")));
            }
        }
        if !finite_pos(self.ot.regularization) {
            return Err(("ot", "regularization", format!("regularization must be positive, got {}", self.ot.regularization)));
        }
        if self.ot.max_points == 0 || self.ot.max_points > MAX_EXACT_POINTS {
            return Err(("ot", "max_points", format!("max_points must lie in 1..={MAX_EXACT_POINTS}")));
        }
        let t = &self.tolerances;
        for (key, v) in [
            ("prop31", t.prop31),
            ("gronwall_pass_fraction", t.gronwall_pass_fraction),
            ("mass", t.mass),
            ("vanishing_fraction", t.vanishing_fraction),
        ] {
            if !finite_pos(v) {
                return Err(("tolerances", key, format!("{key} must be positive, got {v}")));
            }
        }
        if t.gronwall_pass_fraction > 1.0 || t.vanishing_fraction >= 1.0 {
            return Err(("tolerances", "", "fractions must not exceed 1".into()));
        }
        Ok(())
    }

    /// Number of steps to reach `t_end`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil() as usize
    }

    pub fn grid_spec(&self, cells: Option<usize>) -> Result<GridSpec> {
        Ok(GridSpec::centered(self.grid.half_width, cells.unwrap_or(self.grid.cells))?)
    }

    /// The common monitoring grid (variant A's).
    pub fn monitor_spec(&self) -> Result<GridSpec> {
        self.grid_spec(self.twin.a.cells)
    }

    pub fn variant(&self, v: &VariantConfig) -> Result<TwinVariant> {
        let spec = self.grid_spec(v.cells)?;
        let model = match v.model {
            ModelKind::Grid => FieldModel::Grid(spec),
            ModelKind::Free => FieldModel::Free,
            ModelKind::Direct => FieldModel::Direct(match self.softening {
                Some(s) => SofteningSpec::new(s),
                None => SofteningSpec::for_cell(spec.h),
            }),
        };
        Ok(TwinVariant { model, monitor: Some(self.monitor_spec()?), perturbation: v.perturbation.clone() })
    }

    /// Both variants run the same field model at the same resolution.
    pub fn same_model(&self) -> bool {
        self.twin.a.model == self.twin.b.model && self.twin.a.cells == self.twin.b.cells
    }

    pub fn recorder_options(&self) -> RecorderOptions {
        RecorderOptions {
            ot_stride: self.ot.stride,
            max_points: self.ot.max_points,
            loglip_pairs: self.ot.loglip_pairs,
            seed: self.seed,
            prop31_tolerance: self.tolerances.prop31,
            w2_solver: self.ot.solver,
            regularization: self.ot.regularization,
        }
    }
}
