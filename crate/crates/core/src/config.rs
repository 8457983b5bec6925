//! JSON problem description. See `docs/config.md` for the format.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificate::{CertificateError, ClassKForm};
use crate::running_example::ExampleError;
use crate::sequence::{SeqError, DEFAULT_GUARD, DEFAULT_TOL};
use crate::system::{Polynomial, SystemError};

pub const CONFIG_VERSION: u32 = 1;

/// Default number of ball samples for ratio estimates.
pub const DEFAULT_RATIO_SAMPLES: usize = 100_000;
/// Default number of ball samples for hypothesis checks.
pub const DEFAULT_CHECK_SAMPLES: usize = 4_096;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("unsupported config version {0}; this build reads version {CONFIG_VERSION}")]
    Version(u32),

    #[error("{0}")]
    Invalid(String),

    #[error("hypothesis check failed: {0}")]
    Hypothesis(String),

    #[error(transparent)]
    System(#[from] SystemError),

    #[error(transparent)]
    Certificate(#[from] CertificateError),

    #[error(transparent)]
    Example(#[from] ExampleError),

    #[error(transparent)]
    Sequence(#[from] SeqError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub version: u32,
    pub system: SystemSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_points: Option<Vec<Vec<f64>>>,
    /// Named initial set of the builtin map (`a`..`d`), instead of `initial_points`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    pub objective: ObjectiveSpec,
    pub certificate: CertificateSpec,
    #[serde(default = "default_guard")]
    pub guard: usize,
    #[serde(default = "default_tol")]
    pub tolerance: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ratio_samples")]
    pub ratio_samples: usize,
    #[serde(default = "default_check_samples")]
    pub check_samples: usize,
}

fn default_guard() -> usize {
    DEFAULT_GUARD
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_ratio_samples() -> usize {
    DEFAULT_RATIO_SAMPLES
}

fn default_check_samples() -> usize {
    DEFAULT_CHECK_SAMPLES
}

fn default_decay() -> f64 {
    (-1.0f64).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinMap {
    RunningExample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemSpec {
    Builtin(BuiltinMap),
    Affine {
        matrix: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        offset: Option<Vec<f64>>,
    },
    /// One polynomial per output coordinate.
    Polynomial(Vec<Polynomial>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveSpec {
    /// One-based coordinate index.
    Coordinate(usize),
    Linear {
        coeffs: Vec<f64>,
        #[serde(default)]
        constant: f64,
    },
    Quadratic {
        q: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<Vec<f64>>,
        #[serde(default)]
        constant: f64,
    },
    Norm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateSpec {
    Kl(KlSpec),
    Lyapunov(LyapunovSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlSpec {
    pub theta1: ClassKForm,
    pub theta2: ClassKForm,
    pub psi_sup: PsiSup,
    #[serde(default = "default_decay")]
    pub decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PsiSup {
    Value(f64),
    Named(PsiNamed),
}

/// `sup ψ` computed from the initial points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiNamed {
    MaxNorm,
    MaxNormSquared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSpec {
    pub v: VSpec,
    #[serde(default)]
    pub radius_sq: RadiusSpec,
    pub ratio: RatioSpec,
    /// `α_V` with `α_V(‖x‖) <= V(x)`; defaults to `s²` for the builtin `V`s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_lower: Option<ClassKForm>,
    pub construction: ConstructionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VSpec {
    RunningExample,
    NormSquared,
    Polynomial(Polynomial),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RadiusSpec {
    Value(f64),
    Named(RadiusNamed),
}

impl Default for RadiusSpec {
    fn default() -> Self {
        RadiusSpec::Named(RadiusNamed::Auto)
    }
}

/// Smallest ball containing the initial points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadiusNamed {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioSpec {
    ClosedForm,
    Estimate,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstructionSpec {
    /// `h(s) = s · sup V`; needs `φ <= V` on the domain.
    Direct,
    /// `h(s) = α(α_V⁻¹(s · sup V))`; needs `φ(x) <= α(‖x‖)`.
    Continuous { alpha: ClassKForm },
}

impl SolveConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: SolveConfig = serde_json::from_str(text)?;
        cfg.check_shape()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Problem for a builtin scenario of the benchmark map with objective
    /// `π_coordinate` and either certificate construction used for it.
    pub fn scenario(scenario: &str, coordinate: usize, kind: CertificateKind) -> Self {
        let certificate = match kind {
            CertificateKind::Kl => CertificateSpec::Kl(KlSpec {
                theta1: ClassKForm::Sqrt,
                theta2: ClassKForm::Power(2.0),
                psi_sup: PsiSup::Named(PsiNamed::MaxNorm),
                decay: default_decay(),
            }),
            CertificateKind::Lyapunov => CertificateSpec::Lyapunov(LyapunovSpec {
                v: VSpec::RunningExample,
                radius_sq: RadiusSpec::default(),
                ratio: RatioSpec::ClosedForm,
                alpha_lower: Some(ClassKForm::Power(2.0)),
                construction: ConstructionSpec::Continuous {
                    alpha: ClassKForm::Identity,
                },
            }),
        };
        Self {
            version: CONFIG_VERSION,
            system: SystemSpec::Builtin(BuiltinMap::RunningExample),
            initial_points: None,
            scenario: Some(scenario.to_string()),
            objective: ObjectiveSpec::Coordinate(coordinate),
            certificate,
            guard: DEFAULT_GUARD,
            tolerance: DEFAULT_TOL,
            seed: 0,
            ratio_samples: DEFAULT_RATIO_SAMPLES,
            check_samples: DEFAULT_CHECK_SAMPLES,
        }
    }

    fn check_shape(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Version(self.version));
        }
        match (&self.initial_points, &self.scenario) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid(
                    "give either initial_points or scenario, not both".into(),
                ))
            }
            (None, None) => {
                return Err(ConfigError::Invalid(
                    "missing initial set: give initial_points or scenario".into(),
                ))
            }
            _ => {}
        }
        if self.scenario.is_some() && self.system != SystemSpec::Builtin(BuiltinMap::RunningExample) {
            return Err(ConfigError::Invalid(
                "named scenarios belong to the builtin running-example system".into(),
            ));
        }
        if let ObjectiveSpec::Coordinate(0) = self.objective {
            return Err(ConfigError::Invalid("objective coordinates are numbered from 1".into()));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "tolerance must be finite and nonnegative, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateKind {
    Kl,
    Lyapunov,
}
