//! TOML experiment configuration and its validation.

use std::path::{Path, PathBuf};

use ladderlab::model::{ModelSpec, QuantumState};
use ladderlab::rng::Rng;
use ladderlab::C64;
use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub model: Option<ModelConfig>,
    pub simulate: Option<SimulateConfig>,
    pub pulse: Option<PulseConfig>,
    pub steer: Option<SteerConfig>,
    pub small_time: Option<SmallTimeConfig>,
    pub sweep: Option<SweepConfig>,
    pub disperse: Option<DisperseConfig>,
    pub findim: Option<FindimConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub alpha: Option<f64>,
    /// `toy-torus` (default) or `explicit-table`.
    pub mode: Option<String>,
    pub lambda: Option<Vec<f64>>,
    pub coupling: Option<Vec<Vec<[f64; 2]>>>,
}

/// A state given as one of: a basis level, explicit coefficients starting at
/// `offset`, or a random unit state on a level window drawn from the seed.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfig {
    pub basis: Option<usize>,
    pub offset: Option<usize>,
    pub coeffs: Option<Vec<[f64; 2]>>,
    pub random: Option<[usize; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub psi: Option<StateConfig>,
    pub truncation: Option<usize>,
    /// Constant control value, used when no schedule file is given.
    pub u: Option<f64>,
    pub duration: Option<f64>,
    pub segments: Option<usize>,
    /// A schedule written by `--emit-schedule`.
    pub schedule: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    pub j: Option<usize>,
    pub k: Option<usize>,
    pub truncation: Option<usize>,
    /// Coefficients `(x_j, x_k)`; `[[1, 0], [0, 0]]` by default.
    pub state: Option<[[f64; 2]; 2]>,
    pub divisors: Option<Vec<f64>>,
    /// Operator-norm budget; overrides `divisors`.
    pub eta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerConfig {
    pub psi0: Option<StateConfig>,
    pub psi1: Option<StateConfig>,
    pub n0: Option<usize>,
    pub eps: Option<f64>,
    pub truncation: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallTimeConfig {
    pub psi0: Option<StateConfig>,
    pub psi1: Option<StateConfig>,
    pub eps: Option<f64>,
    pub budget: Option<f64>,
    pub max_truncation: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisperseConfig {
    pub psi: Option<StateConfig>,
    pub n0: Option<usize>,
    pub eps: Option<f64>,
    pub k_max: Option<f64>,
    pub grid: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindimConfig {
    pub a: Option<Vec<Vec<[f64; 2]>>>,
    pub b: Option<Vec<Vec<[f64; 2]>>>,
    /// JSON file holding `{"a": ..., "b": ...}`.
    pub pair_file: Option<PathBuf>,
    /// Dimension of a seeded generic pair.
    pub random: Option<usize>,
    pub psi0: Option<Vec<[f64; 2]>>,
    pub psi1: Option<Vec<[f64; 2]>>,
    pub k_max: Option<f64>,
    pub grid: Option<usize>,
    pub expect_rank: Option<usize>,
}

/// Cartesian grid of runs, enumerated with `alpha` outermost.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// `time-bound`, `steer` or `small-time`.
    pub kind: Option<String>,
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub n0: Vec<usize>,
    #[serde(default)]
    pub budget: Vec<f64>,
    pub psi0: Option<StateConfig>,
    pub psi1: Option<StateConfig>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage("--config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::usage("config", e.message().to_owned() + &span_note(&e)))
    }

    pub fn model(&self) -> Result<ModelSpec, CliError> {
        let m = self.model.as_ref().ok_or_else(|| CliError::usage("model", "missing table"))?;
        let alpha = require(m.alpha, "model.alpha")?;
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(CliError::usage("model.alpha", "must be a positive number"));
        }
        match m.mode.as_deref().unwrap_or("toy-torus") {
            "toy-torus" => {
                if m.lambda.is_some() || m.coupling.is_some() {
                    return Err(CliError::usage("model.mode", "toy-torus takes no `lambda` or `coupling`"));
                }
                Ok(ModelSpec::toy(alpha))
            }
            "explicit-table" => {
                let lambda = require(m.lambda.clone(), "model.lambda")?;
                let coupling = require(m.coupling.as_ref(), "model.coupling")?
                    .iter()
                    .map(|row| complex_row(row))
                    .collect();
                ModelSpec::explicit(alpha, lambda, coupling).map_err(|e| CliError::usage("model", e.to_string()))
            }
            other => Err(CliError::usage("model.mode", format!("unknown mode `{other}`"))),
        }
    }

    pub fn section<'a, T>(&self, field: &'a Option<T>, path: &str) -> Result<&'a T, CliError> {
        field.as_ref().ok_or_else(|| CliError::usage(path, "missing table"))
    }
}

fn span_note(e: &toml::de::Error) -> String {
    e.span().map_or(String::new(), |s| format!(" (at byte {})", s.start))
}

pub fn require<T>(value: Option<T>, path: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::usage(path, "missing required field"))
}

pub fn positive(value: Option<f64>, path: &str) -> Result<f64, CliError> {
    let v = require(value, path)?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::usage(path, format!("must be positive (got {v})")))
    }
}

pub fn tolerance(value: Option<f64>, path: &str) -> Result<f64, CliError> {
    let v = positive(value, path)?;
    if v < 1.0 {
        Ok(v)
    } else {
        Err(CliError::usage(path, format!("must lie in (0, 1) (got {v})")))
    }
}

pub fn complex_row(row: &[[f64; 2]]) -> Vec<C64> {
    row.iter().map(|&[re, im]| C64::new(re, im)).collect()
}

impl StateConfig {
    pub fn build(&self, path: &str, rng: &mut Rng) -> Result<QuantumState, CliError> {
        let given = [self.basis.is_some(), self.coeffs.is_some(), self.random.is_some()];
        if given.iter().filter(|&&g| g).count() != 1 {
            return Err(CliError::usage(path, "give exactly one of `basis`, `coeffs` or `random`"));
        }
        if self.offset.is_some() && self.coeffs.is_none() {
            return Err(CliError::usage(&format!("{path}.offset"), "only valid with `coeffs`"));
        }
        let state = if let Some(level) = self.basis {
            QuantumState::basis(level)
        } else if let Some(coeffs) = &self.coeffs {
            QuantumState::new(self.offset.unwrap_or(1), complex_row(coeffs))
        } else {
            let [lo, hi] = self.random.expect("checked above");
            rng.unit_state(lo, hi)
        };
        let state = state.map_err(|e| CliError::usage(path, e.to_string()))?;
        state.require_normalized(path).map_err(|e| CliError::usage(path, e.to_string()))?;
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_alpha_names_the_field() {
        let cfg = ExperimentConfig::parse("[model]\nmode = \"toy-torus\"\n").unwrap();
        let err = cfg.model().unwrap_err();
        assert!(err.to_string().contains("model.alpha"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::parse("[model]\nalpha = 3.0\nbeta = 1\n").unwrap_err();
        assert!(err.to_string().contains("beta"), "{err}");
    }

    #[test]
    fn explicit_table_model_parses() {
        let cfg = ExperimentConfig::parse(
            "[model]\nalpha = 1.0\nmode = \"explicit-table\"\nlambda = [1.0, 4.0]\ncoupling = [[[0,0],[0,-0.5]],[[0,-0.5],[0,0]]]\n",
        )
        .unwrap();
        assert!(!cfg.model().unwrap().is_toy());
    }

    #[test]
    fn state_forms_are_exclusive() {
        let mut rng = Rng::new(1);
        let s = StateConfig {
            basis: Some(1),
            random: Some([1, 3]),
            ..Default::default()
        };
        assert!(s.build("psi", &mut rng).is_err());
        let s = StateConfig {
            random: Some([2, 5]),
            ..Default::default()
        };
        let psi = s.build("psi", &mut rng).unwrap();
        assert!((psi.norm() - 1.0).abs() < 1e-12);
        let s = StateConfig {
            coeffs: Some(vec![[3.0, 0.0], [4.0, 0.0]]),
            ..Default::default()
        };
        assert!(s.build("psi", &mut rng).unwrap_err().to_string().contains("psi"));
    }

    #[test]
    fn tolerance_must_be_in_unit_interval() {
        assert!(tolerance(Some(0.3), "x").is_ok());
        assert!(tolerance(Some(1.0), "x").is_err());
        assert!(tolerance(None, "x").unwrap_err().to_string().contains("x"));
    }
}
