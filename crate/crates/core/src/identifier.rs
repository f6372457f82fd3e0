//! Batch least-squares identification of `(A, B)` from a regressor batch.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::collector::{Measurement, RegressorBatch};
use crate::error::{Error, Result};
use crate::numerics::{conditioning, least_squares, unvec, vec};
use crate::plant::LtiModel;

/// How much regressor history re-identification keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retention {
    /// Every sample since the start.
    Growing,
    /// Only the latest `samples` sample times.
    Sliding { samples: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterEstimate {
    /// `[vec(A); vec(B)]` in full mode, `[vec(A1); vec(A2); vec(B1)]` in
    /// partial mode.
    pub theta_hat: DVector<f64>,
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub measurement: Measurement,
    pub condition_estimate: f64,
    pub residual_norm: f64,
}

impl ParameterEstimate {
    /// Wraps known matrices as an exact full-mode estimate.
    pub fn from_model(model: &LtiModel) -> Self {
        let mut theta = vec(model.a()).as_slice().to_vec();
        theta.extend_from_slice(vec(model.b()).as_slice());
        ParameterEstimate {
            theta_hat: DVector::from_vec(theta),
            a_hat: model.a().clone(),
            b_hat: model.b().clone(),
            measurement: Measurement::Full,
            condition_estimate: 1.0,
            residual_norm: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn m(&self) -> usize {
        self.b_hat.ncols()
    }

    /// Text block with the estimated matrices and diagnostics.
    pub fn report_block(&self) -> String {
        let mut s = String::new();
        let mode = if self.measurement.is_partial() { "partial" } else { "full" };
        let _ = writeln!(s, "estimate ({mode} state)");
        let _ = writeln!(s, "A_hat =");
        write_matrix(&mut s, &self.a_hat);
        let _ = writeln!(s, "B_hat =");
        write_matrix(&mut s, &self.b_hat);
        let _ = writeln!(s, "residual_norm  = {:>16.8e}", self.residual_norm);
        let _ = writeln!(s, "condition      = {:>16.8e}", self.condition_estimate);
        s
    }

    /// CSV rows `kind,row,col,value` for `A_hat`, `B_hat` and diagnostics.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "row", "col", "value"])?;
        for (name, m) in [("A_hat", &self.a_hat), ("B_hat", &self.b_hat)] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    w.write_record([name, &i.to_string(), &j.to_string(), &m[(i, j)].to_string()])?;
                }
            }
        }
        w.write_record(["residual_norm", "", "", &self.residual_norm.to_string()])?;
        w.write_record(["condition", "", "", &self.condition_estimate.to_string()])?;
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn write_matrix(s: &mut String, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let _ = write!(s, "{:>17.8e}", m[(i, j)]);
        }
        s.push('\n');
    }
}

/// Solves `Γ = Ψ Θ` and reshapes `Θ` into `(A_hat, B_hat)`.
///
/// In partial mode the known blocks of `A = [[0, I], [A1, A2]]` and
/// `B = [0; B1]` are written exactly.
pub fn estimate(batch: &RegressorBatch, condition_threshold: f64) -> Result<ParameterEstimate> {
    if batch.rows() < batch.cols() {
        return Err(Error::InsufficientData {
            required: batch.min_samples(),
            got: batch.samples(),
        });
    }
    let sol = least_squares(&batch.psi(), &batch.gamma(), condition_threshold)?;
    let (n, m) = (batch.n(), batch.m());
    let theta = sol.theta;
    let (a_hat, b_hat) = match batch.measurement() {
        Measurement::Full => (
            unvec(&theta.rows(0, n * n).into_owned(), n, n)?,
            unvec(&theta.rows(n * n, n * m).into_owned(), n, m)?,
        ),
        Measurement::Partial { .. } => {
            let q = n / 2;
            let a1 = unvec(&theta.rows(0, q * q).into_owned(), q, q)?;
            let a2 = unvec(&theta.rows(q * q, q * q).into_owned(), q, q)?;
            let b1 = unvec(&theta.rows(2 * q * q, q * m).into_owned(), q, m)?;
            let mut a = DMatrix::zeros(n, n);
            a.view_mut((0, q), (q, q)).fill_with_identity();
            a.view_mut((q, 0), (q, q)).copy_from(&a1);
            a.view_mut((q, q), (q, q)).copy_from(&a2);
            let mut b = DMatrix::zeros(n, m);
            b.view_mut((q, 0), (q, m)).copy_from(&b1);
            (a, b)
        }
    };
    Ok(ParameterEstimate {
        theta_hat: theta,
        a_hat,
        b_hat,
        measurement: batch.measurement(),
        condition_estimate: sol.condition,
        residual_norm: sol.residual_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcitationReport {
    pub rank_ok: bool,
    pub condition_estimate: f64,
    pub min_singular_value: f64,
}

/// Singular-value diagnostics of `Ψ`; `rank_ok` iff there are enough rows
/// and the condition estimate is within `condition_threshold`.
pub fn excitation_report(batch: &RegressorBatch, condition_threshold: f64) -> ExcitationReport {
    let c = conditioning(&batch.psi());
    ExcitationReport {
        rank_ok: batch.rows() >= batch.cols() && c.condition <= condition_threshold,
        condition_estimate: c.condition,
        min_singular_value: c.min_singular_value,
    }
}

/// `‖[A_hat B_hat] - [A B]‖_F / ‖[A B]‖_F`.
pub fn estimate_error(est: &ParameterEstimate, truth: &LtiModel) -> Result<f64> {
    if est.a_hat.shape() != truth.a().shape() || est.b_hat.shape() != truth.b().shape() {
        return Err(Error::shape(
            "estimate_error",
            format!(
                "estimate is {}x{}, truth is {}x{}",
                est.n(),
                est.m(),
                truth.n(),
                truth.m()
            ),
        ));
    }
    let diff = (&est.a_hat - truth.a()).norm_squared() + (&est.b_hat - truth.b()).norm_squared();
    let scale = truth.a().norm_squared() + truth.b().norm_squared();
    Ok((diff / scale).sqrt())
}
