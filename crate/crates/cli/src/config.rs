//! Run configuration: a flat TOML file with dotted keys (`grid.n = 32`).
//! Every section is strict; unknown or model-irrelevant keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use fbmfg_core::spectral::{Mode, ModeCoefficient};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    DecoupledHeat,
    QuadraticMfg,
    Congestion,
    LinearCounterexample,
    Custom,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::DecoupledHeat => "decoupled-heat",
            Self::QuadraticMfg => "quadratic-mfg",
            Self::Congestion => "congestion",
            Self::LinearCounterexample => "linear-counterexample",
            Self::Custom => "custom",
        }
    }

    fn allowed_params(&self) -> &'static [&'static str] {
        match self {
            Self::DecoupledHeat => &["m0"],
            Self::QuadraticMfg => &["m0", "sigma"],
            Self::Congestion => &["m0", "sigma", "alpha"],
            Self::LinearCounterexample => &["m0", "alpha", "final_coupling"],
            Self::Custom => &["m0", "sigma", "kappa", "velocity", "coupling", "potential", "nu"],
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub n: usize,
    pub nt: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    /// Threshold; chosen automatically when absent.
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    0.5
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self { k: None, delta: default_delta() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IterationConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub relaxation: f64,
    pub positivity: bool,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self { p: None, tol: 1e-8, max_iter: 200, relaxation: 1.0, positivity: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalCoupling {
    /// `h[m] = alpha P m`, `P` the projection onto the modes of `m0`.
    Projected,
    /// `h[m] = alpha m`.
    Pointwise,
}

/// Model parameters. Which keys are legal depends on the model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Initial density as `"<mode>=<value>"` terms, e.g. `["c0=1", "c1=0.5"]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<Vec<String>>,
    /// Width of the Gaussian smoothing kernel in the final cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Congestion exponent, or the final coupling of the counterexample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_coupling: Option<FinalCoupling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

impl ModelParams {
    fn present(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        let mut add = |name, set: bool| {
            if set {
                keys.push(name);
            }
        };
        add("m0", self.m0.is_some());
        add("sigma", self.sigma.is_some());
        add("alpha", self.alpha.is_some());
        add("final_coupling", self.final_coupling.is_some());
        add("kappa", self.kappa.is_some());
        add("velocity", self.velocity.is_some());
        add("coupling", self.coupling.is_some());
        add("potential", self.potential.is_some());
        add("nu", self.nu.is_some());
        keys
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write the `t = 0, T/2, T` slices.
    pub fields: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), fields: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub grid: GridConfig,
    #[serde(default)]
    pub truncation: TruncationConfig,
    #[serde(default)]
    pub iteration: IterationConfig,
    #[serde(default)]
    pub params: ModelParams,
    #[serde(default)]
    pub output: OutputConfig,
}

impl FromStr for RunConfig {
    type Err = CliError;

    fn from_str(text: &str) -> Result<Self, CliError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        text.parse()
    }

    /// Re-parses the `[config]` table of a run manifest.
    pub fn from_manifest(text: &str) -> Result<Self, CliError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let config = doc.remove("config").ok_or_else(|| invalid("manifest has no [config] table"))?;
        let config: RunConfig = config.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.grid;
        if !(g.dim == 1 || g.dim == 2) {
            return Err(invalid(format!("grid.dim must be 1 or 2, got {}", g.dim)));
        }
        if g.n < 4 {
            return Err(invalid(format!("grid.n must be at least 4, got {}", g.n)));
        }
        if g.nt < 2 {
            return Err(invalid(format!("grid.nt must be at least 2, got {}", g.nt)));
        }
        positive("grid.T", g.horizon)?;
        positive("truncation.delta", self.truncation.delta)?;
        if let Some(k) = self.truncation.k {
            positive("truncation.K", k)?;
        }
        let it = &self.iteration;
        if let Some(p) = it.p {
            if !(p > g.dim as f64 + 2.0 && p.is_finite()) {
                return Err(invalid(format!("iteration.p must exceed dim + 2, got {p}")));
            }
        }
        positive("iteration.tol", it.tol)?;
        if it.max_iter == 0 {
            return Err(invalid("iteration.max_iter must be at least 1"));
        }
        if !(it.relaxation > 0.0 && it.relaxation <= 1.0) {
            return Err(invalid(format!("iteration.relaxation must lie in (0, 1], got {}", it.relaxation)));
        }

        let allowed = self.model.allowed_params();
        if let Some(key) = self.params.present().into_iter().find(|k| !allowed.contains(k)) {
            return Err(invalid(format!("params.{key} is not a parameter of model {}", self.model)));
        }
        let p = &self.params;
        if let Some(s) = p.sigma {
            positive("params.sigma", s)?;
        }
        match self.model {
            ModelKind::Congestion => positive("params.alpha", self.congestion_alpha())?,
            ModelKind::LinearCounterexample => {
                if !self.counterexample_alpha().is_finite() {
                    return Err(invalid("params.alpha must be finite"));
                }
            }
            ModelKind::Custom => {
                if let Some(v) = &p.velocity {
                    if v.len() != g.dim {
                        return Err(invalid(format!("params.velocity needs {} components", g.dim)));
                    }
                }
                if let Some(nu) = p.nu {
                    positive("params.nu", nu)?;
                }
                if p.kappa.is_some_and(|k| !(k >= 0.0)) {
                    return Err(invalid("params.kappa must be non-negative"));
                }
            }
            _ => {}
        }
        self.initial_modes()?;
        Ok(())
    }

    pub fn congestion_alpha(&self) -> f64 {
        self.params.alpha.unwrap_or(1.0)
    }

    pub fn counterexample_alpha(&self) -> f64 {
        self.params.alpha.unwrap_or(-3.0)
    }

    pub fn final_coupling(&self) -> FinalCoupling {
        self.params.final_coupling.unwrap_or(FinalCoupling::Projected)
    }

    /// Terms of the initial density. The default is `1 + cos(2 pi x1) / 2`,
    /// and for the counterexample `1 + 0.3 cos(2 pi x1) + 0.2 sin(2 pi x1)`.
    pub fn initial_modes(&self) -> Result<Vec<ModeCoefficient>, CliError> {
        let dim = self.grid.dim;
        let lift = |m: Mode| -> Result<Mode, CliError> {
            if m.dim() == dim {
                Ok(m)
            } else if dim == 2 && m.dim() == 1 {
                Mode::new(vec![m.axes()[0], Mode::constant(1).axes()[0]]).map_err(|e| invalid(e.to_string()))
            } else {
                Err(invalid(format!("mode {m} does not fit a {dim}-dimensional grid")))
            }
        };
        let terms = match &self.params.m0 {
            Some(terms) => terms
                .iter()
                .map(|term| {
                    let (mode, value) =
                        term.split_once('=').ok_or_else(|| invalid(format!("m0 term {term:?} is not <mode>=<value>")))?;
                    let mode: Mode = mode.trim().parse().map_err(|e: fbmfg_core::Error| invalid(e.to_string()))?;
                    let value: f64 =
                        value.trim().parse().map_err(|_| invalid(format!("bad coefficient in m0 term {term:?}")))?;
                    if !value.is_finite() {
                        return Err(invalid(format!("non-finite coefficient in m0 term {term:?}")));
                    }
                    Ok(ModeCoefficient::new(lift(mode)?, value))
                })
                .collect::<Result<Vec<_>, _>>()?,
            None => {
                let mut terms = vec![ModeCoefficient::new(Mode::constant(dim), 1.0)];
                if self.model == ModelKind::LinearCounterexample {
                    terms.push(ModeCoefficient::new(lift(Mode::cos(1))?, 0.3));
                    terms.push(ModeCoefficient::new(lift(Mode::sin(1))?, 0.2));
                } else {
                    terms.push(ModeCoefficient::new(lift(Mode::cos(1))?, 0.5));
                }
                terms
            }
        };
        if terms.is_empty() {
            return Err(invalid("params.m0 is empty"));
        }
        for (i, a) in terms.iter().enumerate() {
            if terms[..i].iter().any(|b| b.mode == a.mode) {
                return Err(invalid(format!("mode {} appears twice in params.m0", a.mode)));
            }
        }
        Ok(terms)
    }
}
