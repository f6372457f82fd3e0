//! JSON experiment configuration.
//!
//! Matrices are row-major nested arrays. Every object rejects unknown keys.
//! Optional fields and their defaults:
//!
//! | field | default |
//! |---|---|
//! | `measurement` | `"full"` |
//! | `collection.delta1`, `collection.delta2` | `δ`, `2δ` (partial mode only) |
//! | `excitation.sinusoids` | seeded default dither |
//! | `excitation.duration` | `l·δ` (+ `δ1 + δ2` in partial mode) |
//! | `identification` | growing memory, re-identify, estimated model, threshold `1e10` |
//! | `mpc.p_terminal` | zero |
//! | `mpc.epsilon` | `1e-10` |
//! | `mpc.constraint_grid_points` | 32 |
//! | `mpc.rho_tol` | `1e-9` |
//! | `control_period` | `δ` |
//! | `seed` | 0 |

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::collector::Measurement;
use crate::error::{Error, Result};
use crate::identifier::Retention;
use crate::mpc::{InputBox, MpcConfig};
use crate::numerics::DEFAULT_CONDITION_THRESHOLD;
use crate::plant::{LtiModel, ReferenceSpec, Sinusoid};
use crate::runner::{ExcitationConfig, ExperimentConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub plant: PlantFile,
    pub initial_state: Vec<f64>,
    #[serde(default)]
    pub measurement: MeasurementMode,
    pub excitation: ExcitationFile,
    pub collection: CollectionFile,
    #[serde(default)]
    pub identification: IdentificationFile,
    pub mpc: MpcFile,
    pub reference: ReferenceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_period: Option<f64>,
    pub total_time: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantFile {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementMode {
    #[default]
    Full,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationFile {
    pub k0: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinusoids: Option<Vec<Sinusoid>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionFile {
    pub delta: f64,
    pub samples: usize,
    pub dt_sim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetentionFile {
    Growing,
    Sliding { samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentificationFile {
    #[serde(default = "default_retention")]
    pub retention: RetentionFile,
    #[serde(default = "default_true")]
    pub reidentify: bool,
    #[serde(default)]
    pub use_true_model: bool,
    #[serde(default = "default_condition_threshold")]
    pub condition_threshold: f64,
}

impl Default for IdentificationFile {
    fn default() -> Self {
        IdentificationFile {
            retention: default_retention(),
            reidentify: true,
            use_true_model: false,
            condition_threshold: DEFAULT_CONDITION_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcFile {
    pub horizon: f64,
    pub order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_override: Option<usize>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_terminal: Option<Vec<Vec<f64>>>,
    /// `[lo, hi]` per input channel.
    pub u_box: Vec<[f64; 2]>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_grid_points")]
    pub constraint_grid_points: usize,
    #[serde(default = "default_rho_tol")]
    pub rho_tol: f64,
}

fn default_retention() -> RetentionFile {
    RetentionFile::Growing
}

fn default_true() -> bool {
    true
}

fn default_condition_threshold() -> f64 {
    DEFAULT_CONDITION_THRESHOLD
}

fn default_epsilon() -> f64 {
    1e-10
}

fn default_grid_points() -> usize {
    32
}

fn default_rho_tol() -> f64 {
    1e-9
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(Error::config(field, "matrix must be nonempty"));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::config(field, "rows have different lengths"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::config(field, "entries must be finite"));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().cloned()))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

impl ConfigFile {
    /// Converts to a validated [`ExperimentConfig`].
    pub fn into_experiment(self) -> Result<ExperimentConfig> {
        let a = matrix("plant.a", &self.plant.a)?;
        let b = matrix("plant.b", &self.plant.b)?;
        let plant = LtiModel::new(a, b).map_err(|e| Error::config("plant", e.to_string()))?;
        let (n, m) = (plant.n(), plant.m());

        let delta = self.collection.delta;
        let measurement = match self.measurement {
            MeasurementMode::Full => {
                if self.collection.delta1.is_some() || self.collection.delta2.is_some() {
                    return Err(Error::config(
                        "collection.delta1",
                        "nested windows only apply in partial mode",
                    ));
                }
                Measurement::Full
            }
            MeasurementMode::Partial => Measurement::Partial {
                delta1: self.collection.delta1.unwrap_or(delta),
                delta2: self.collection.delta2.unwrap_or(2.0 * delta),
            },
        };

        let q = matrix("mpc.q", &self.mpc.q)?;
        let r = matrix("mpc.r", &self.mpc.r)?;
        let p_terminal = match &self.mpc.p_terminal {
            Some(p) => matrix("mpc.p_terminal", p)?,
            None => DMatrix::zeros(n, n),
        };
        let bounds: Vec<(f64, f64)> = self.mpc.u_box.iter().map(|b| (b[0], b[1])).collect();
        let u_box = InputBox::new(&bounds).map_err(|e| Error::config("mpc.u_box", e.to_string()))?;
        let mpc = MpcConfig {
            horizon: self.mpc.horizon,
            order: self.mpc.order,
            rho_override: self.mpc.rho_override,
            q,
            r,
            p_terminal,
            u_box,
            epsilon: self.mpc.epsilon,
            constraint_grid_points: self.mpc.constraint_grid_points,
            rho_tol: self.mpc.rho_tol,
        };

        let k0 = if self.excitation.k0.is_empty() {
            DMatrix::zeros(m, n)
        } else {
            matrix("excitation.k0", &self.excitation.k0)?
        };

        let cfg = ExperimentConfig {
            plant,
            initial_state: DVector::from_vec(self.initial_state),
            measurement,
            excitation: ExcitationConfig {
                k0,
                sinusoids: self.excitation.sinusoids,
                duration: self.excitation.duration,
            },
            delta,
            samples: self.collection.samples,
            dt_sim: self.collection.dt_sim,
            retention: match self.identification.retention {
                RetentionFile::Growing => Retention::Growing,
                RetentionFile::Sliding { samples } => Retention::Sliding { samples },
            },
            reidentify: self.identification.reidentify,
            use_true_model: self.identification.use_true_model,
            condition_threshold: self.identification.condition_threshold,
            mpc,
            reference: self.reference,
            control_period: self.control_period.unwrap_or(delta),
            total_time: self.total_time,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes every field explicitly, so that parsing the result gives back
    /// `cfg` unchanged.
    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        let (measurement, delta1, delta2) = match cfg.measurement {
            Measurement::Full => (MeasurementMode::Full, None, None),
            Measurement::Partial { delta1, delta2 } => {
                (MeasurementMode::Partial, Some(delta1), Some(delta2))
            }
        };
        ConfigFile {
            plant: PlantFile {
                a: rows_of(cfg.plant.a()),
                b: rows_of(cfg.plant.b()),
            },
            initial_state: cfg.initial_state.as_slice().to_vec(),
            measurement,
            excitation: ExcitationFile {
                k0: rows_of(&cfg.excitation.k0),
                sinusoids: cfg.excitation.sinusoids.clone(),
                duration: cfg.excitation.duration,
            },
            collection: CollectionFile {
                delta: cfg.delta,
                samples: cfg.samples,
                dt_sim: cfg.dt_sim,
                delta1,
                delta2,
            },
            identification: IdentificationFile {
                retention: match cfg.retention {
                    Retention::Growing => RetentionFile::Growing,
                    Retention::Sliding { samples } => RetentionFile::Sliding { samples },
                },
                reidentify: cfg.reidentify,
                use_true_model: cfg.use_true_model,
                condition_threshold: cfg.condition_threshold,
            },
            mpc: MpcFile {
                horizon: cfg.mpc.horizon,
                order: cfg.mpc.order,
                rho_override: cfg.mpc.rho_override,
                q: rows_of(&cfg.mpc.q),
                r: rows_of(&cfg.mpc.r),
                p_terminal: Some(rows_of(&cfg.mpc.p_terminal)),
                u_box: cfg.mpc.u_box.bounds().map(|(lo, hi)| [lo, hi]).collect(),
                epsilon: cfg.mpc.epsilon,
                constraint_grid_points: cfg.mpc.constraint_grid_points,
                rho_tol: cfg.mpc.rho_tol,
            },
            reference: cfg.reference.clone(),
            control_period: Some(cfg.control_period),
            total_time: cfg.total_time,
            seed: cfg.seed,
        }
    }
}

/// Parses and validates a JSON config.
pub fn parse_config(text: &[u8]) -> Result<ExperimentConfig> {
    let file: ConfigFile = serde_json::from_slice(text)?;
    file.into_experiment()
}

pub fn serialize_config(cfg: &ExperimentConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ConfigFile::from_experiment(cfg))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = include_str!("../../fixtures/scalar.json");

    fn field_of(text: &str) -> String {
        match parse_config(text.as_bytes()) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn scalar_fixture_defaults() {
        let cfg = parse_config(SCALAR.as_bytes()).unwrap();
        assert_eq!(cfg.mpc.order, 1);
        assert_eq!(cfg.control_period, cfg.delta);
        assert_eq!(cfg.mpc.p_terminal, DMatrix::zeros(1, 1));
        assert_eq!(cfg.mpc.epsilon, 1e-10);
        assert!(cfg.reidentify);
        assert_eq!(cfg.retention, Retention::Growing);
        assert_eq!(cfg.measurement, Measurement::Full);
    }

    #[test]
    fn order_is_required() {
        let text = SCALAR.replace("\"order\": 1,", "");
        assert!(matches!(parse_config(text.as_bytes()), Err(Error::Json(_))));
    }

    #[test]
    fn off_grid_delta_names_delta() {
        let text = SCALAR.replace("\"dt_sim\": 0.001", "\"dt_sim\": 0.02");
        assert_eq!(field_of(&text), "collection.delta");
    }

    #[test]
    fn indefinite_q_names_q() {
        let text = SCALAR.replace("\"q\": [[1.0]]", "\"q\": [[0.0]]");
        assert_eq!(field_of(&text), "mpc.q");
    }

    #[test]
    fn box_must_contain_origin() {
        let text = SCALAR.replace("[[-5.0, 5.0]]", "[[0.5, 5.0]]");
        assert_eq!(field_of(&text), "mpc.u_box");
    }

    #[test]
    fn odd_state_rejected_in_partial_mode() {
        let text = SCALAR.replace("\"measurement\": \"full\"", "\"measurement\": \"partial\"");
        assert_eq!(field_of(&text), "measurement");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = SCALAR.replacen('{', "{\"bogus\": 1,", 1);
        assert!(matches!(parse_config(text.as_bytes()), Err(Error::Json(_))));
        let text = SCALAR.replace("\"horizon\"", "\"bogus\": 0, \"horizon\"");
        assert!(matches!(parse_config(text.as_bytes()), Err(Error::Json(_))));
    }

    #[test]
    fn fixture_round_trips() {
        let cfg = parse_config(SCALAR.as_bytes()).unwrap();
        let again = parse_config(serialize_config(&cfg).unwrap().as_bytes()).unwrap();
        assert_eq!(cfg, again);
    }
}
