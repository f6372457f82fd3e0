//! Ground-truth continuous-time LTI plants `ẋ = Ax + Bu` and their
//! fixed-step RK4 simulation.

mod excitation;
mod reference;
mod trajectory;

pub use excitation::{excitation_input, ExcitationSpec, Sinusoid};
pub use reference::{reference_stack, ReferenceSpec, ReferenceStack, SinusoidChannel};
pub use trajectory::Trajectory;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A continuous-time linear plant `ẋ = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LtiModel {
    /// Builds a model after checking shapes. An uncontrollable pair is
    /// accepted but logged.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::shape(
                "LtiModel::new",
                format!("A must be square, got {}x{}", a.nrows(), a.ncols()),
            ));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::shape(
                "LtiModel::new",
                format!(
                    "B must be {}xm with m >= 1, got {}x{}",
                    a.nrows(),
                    b.nrows(),
                    b.ncols()
                ),
            ));
        }
        let model = LtiModel { a, b };
        let rank = model.controllability_rank();
        if rank < model.n() {
            log::warn!(
                "(A, B) is not controllable: controllability rank {rank} < n = {}",
                model.n()
            );
        }
        Ok(model)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    /// Numerical rank of `[B, AB, ..., A^(n-1) B]`.
    pub fn controllability_rank(&self) -> usize {
        let (n, m) = (self.n(), self.m());
        let mut ctrb = DMatrix::zeros(n, n * m);
        let mut block = self.b.clone();
        for k in 0..n {
            ctrb.view_mut((0, k * m), (n, m)).copy_from(&block);
            block = &self.a * block;
        }
        let sv = ctrb.singular_values();
        let max = sv.max();
        if max == 0.0 {
            return 0;
        }
        let tol = max * 1e-10 * (n * m) as f64;
        sv.iter().filter(|&&s| s > tol).count()
    }

    pub fn is_controllable(&self) -> bool {
        self.controllability_rank() == self.n()
    }
}

/// An input law evaluated along the trajectory. State feedback is allowed,
/// so RK4 stages evaluate it at their intermediate states.
pub trait InputSignal {
    fn input(&self, t: f64, x: &DVector<f64>) -> DVector<f64>;
}

impl<F> InputSignal for F
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    fn input(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        self(t, x)
    }
}

fn check_finite(what: &str, v: &DVector<f64>, t: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite {what} at t = {t}")))
    }
}

/// One classical fourth-order Runge-Kutta step of `ẋ = Ax + Bu(t, x)`.
pub fn rk4_step<I: InputSignal + ?Sized>(
    model: &LtiModel,
    x: &DVector<f64>,
    input: &I,
    t: f64,
    dt: f64,
) -> Result<DVector<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {dt}")));
    }
    if x.len() != model.n() {
        return Err(Error::shape(
            "rk4_step",
            format!("state has length {}, model has n = {}", x.len(), model.n()),
        ));
    }
    check_finite("state", x, t)?;
    let f = |t: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        let u = input.input(t, x);
        if u.len() != model.m() {
            return Err(Error::shape(
                "rk4_step",
                format!("input has length {}, model has m = {}", u.len(), model.m()),
            ));
        }
        check_finite("input", &u, t)?;
        Ok(model.derivative(x, &u))
    };
    let h = 0.5 * dt;
    let k1 = f(t, x)?;
    let k2 = f(t + h, &(x + &k1 * h))?;
    let k3 = f(t + h, &(x + &k2 * h))?;
    let k4 = f(t + dt, &(x + &k3 * dt))?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    check_finite("state", &next, t + dt)?;
    Ok(next)
}

/// Number of `dt` steps spanning `span`, rejecting spans that are not an
/// integer multiple of `dt`.
pub fn grid_steps(span: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Domain(format!("step must be positive, got {dt}")));
    }
    if !(span >= 0.0) || !span.is_finite() {
        return Err(Error::Domain(format!("span must be nonnegative, got {span}")));
    }
    let steps = (span / dt).round();
    if (steps * dt - span).abs() > 1e-9 * span.max(dt) {
        return Err(Error::Domain(format!(
            "span {span} is not an integer multiple of step {dt}"
        )));
    }
    Ok(steps as usize)
}

/// Simulates the plant on the grid `t0, t0 + dt, ..., t_end`.
pub fn simulate<I: InputSignal + ?Sized>(
    model: &LtiModel,
    x0: &DVector<f64>,
    input: &I,
    t0: f64,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    if !(t_end > t0) {
        return Err(Error::Domain(format!(
            "simulation end {t_end} must exceed start {t0}"
        )));
    }
    let steps = grid_steps(t_end - t0, dt)?;
    let mut traj = Trajectory::new(t0, dt, x0.clone(), model.m())?;
    traj.advance(model, input, steps)?;
    Ok(traj)
}
