use std::f64::consts::FRAC_PI_2;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidChannel {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    #[serde(default)]
    pub offset: f64,
}

/// Reference trajectory `x_d(t)` with analytic derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    Constant {
        setpoint: Vec<f64>,
    },
    /// Per-channel coefficients in ascending powers of `t`.
    Polynomial {
        coefficients: Vec<Vec<f64>>,
        max_derivative_order: usize,
    },
    /// `offset + amplitude * sin(frequency * t + phase)` per channel.
    Sinusoid {
        channels: Vec<SinusoidChannel>,
        max_derivative_order: usize,
    },
}

/// Reference derivatives split at the relative degree: `x1d` holds orders
/// `0..rho`, `x2d` orders `rho..=r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceStack {
    pub x1d: DVector<f64>,
    pub x2d: DVector<f64>,
}

impl ReferenceSpec {
    pub fn dim(&self) -> usize {
        match self {
            ReferenceSpec::Constant { setpoint } => setpoint.len(),
            ReferenceSpec::Polynomial { coefficients, .. } => coefficients.len(),
            ReferenceSpec::Sinusoid { channels, .. } => channels.len(),
        }
    }

    pub fn max_derivative_order(&self) -> Option<usize> {
        match self {
            ReferenceSpec::Constant { .. } => None,
            ReferenceSpec::Polynomial {
                max_derivative_order,
                ..
            }
            | ReferenceSpec::Sinusoid {
                max_derivative_order,
                ..
            } => Some(*max_derivative_order),
        }
    }

    pub fn value(&self, t: f64) -> DVector<f64> {
        self.eval(t, 0)
    }

    /// `order`-th time derivative at `t`.
    pub fn derivative(&self, t: f64, order: usize) -> Result<DVector<f64>> {
        if let Some(max) = self.max_derivative_order() {
            if order > max {
                return Err(Error::Domain(format!(
                    "reference derivative of order {order} requested, maximum is {max}"
                )));
            }
        }
        Ok(self.eval(t, order))
    }

    fn eval(&self, t: f64, order: usize) -> DVector<f64> {
        match self {
            ReferenceSpec::Constant { setpoint } => {
                if order == 0 {
                    DVector::from_column_slice(setpoint)
                } else {
                    DVector::zeros(setpoint.len())
                }
            }
            ReferenceSpec::Polynomial { coefficients, .. } => {
                DVector::from_iterator(
                    coefficients.len(),
                    coefficients.iter().map(|c| poly_derivative(c, t, order)),
                )
            }
            ReferenceSpec::Sinusoid { channels, .. } => DVector::from_iterator(
                channels.len(),
                channels.iter().map(|c| {
                    let osc = c.amplitude
                        * c.frequency.powi(order as i32)
                        * (c.frequency * t + c.phase + order as f64 * FRAC_PI_2).sin();
                    if order == 0 {
                        c.offset + osc
                    } else {
                        osc
                    }
                }),
            ),
        }
    }
}

fn poly_derivative(coeffs: &[f64], t: f64, order: usize) -> f64 {
    // Horner on the differentiated coefficients
    let mut acc = 0.0;
    for k in (order..coeffs.len()).rev() {
        let falling: f64 = ((k - order + 1)..=k).map(|i| i as f64).product();
        acc = acc * t + coeffs[k] * falling;
    }
    acc
}

/// Stacks the reference and its derivatives at time `t`, split at `rho`.
pub fn reference_stack(spec: &ReferenceSpec, t: f64, r: usize, rho: usize) -> Result<ReferenceStack> {
    if rho < 1 || r < rho {
        return Err(Error::Domain(format!(
            "need r >= rho >= 1, got r = {r}, rho = {rho}"
        )));
    }
    let n = spec.dim();
    let mut x1d = DVector::zeros(rho * n);
    let mut x2d = DVector::zeros((r - rho + 1) * n);
    for k in 0..=r {
        let d = spec.derivative(t, k)?;
        if k < rho {
            x1d.rows_mut(k * n, n).copy_from(&d);
        } else {
            x2d.rows_mut((k - rho) * n, n).copy_from(&d);
        }
    }
    Ok(ReferenceStack { x1d, x2d })
}
