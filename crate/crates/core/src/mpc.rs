//! Receding-horizon MPC with a Taylor-polynomial prediction.
//!
//! Over the horizon `τ ∈ [0, T]` the state is expanded as
//! `x(t_k + τ) = Σ_{i=0}^{r} τ^i/i! x^{[i]}`. With relative degree `ρ`, the
//! derivatives split into `X1 = [x; ...; x^{[ρ-1]}] = A1 x`, which the input
//! cannot move, and `X2 = [x^{[ρ]}; ...; x^{[r]}] = A2 x + Bcal u`, where
//! `u = [u; u'; ...; u^{[r-ρ]}]` stacks the input derivatives at `t_k`. The
//! quadratic tracking cost then reduces to a finite QP in `u` whose Gram
//! matrices are closed-form monomial integrals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::identifier::ParameterEstimate;
use crate::numerics::{factorial, is_symmetric, matrix_powers, monomial_gram, symmetric_eigen_min};
use crate::plant::{reference_stack, ReferenceSpec, ReferenceStack};

/// Per-channel input bounds; each interval must contain 0 in its interior.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl InputBox {
    pub fn new(bounds: &[(f64, f64)]) -> Result<Self> {
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo < 0.0 && 0.0 < hi) {
                return Err(Error::Domain(format!(
                    "input box channel {i} = [{lo}, {hi}] must contain 0 in its interior"
                )));
            }
        }
        Ok(InputBox {
            lo: bounds.iter().map(|b| b.0).collect(),
            hi: bounds.iter().map(|b| b.1).collect(),
        })
    }

    /// `[-limit, limit]` on every channel.
    pub fn symmetric(m: usize, limit: f64) -> Result<Self> {
        InputBox::new(&vec![(-limit, limit); m])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn bounds(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.lo.iter().cloned().zip(self.hi.iter().cloned())
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        u.len() == self.dim()
            && u
                .iter()
                .zip(self.bounds())
                .all(|(&v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn clamp(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            u.len(),
            u.iter().zip(self.bounds()).map(|(&v, (lo, hi))| v.clamp(lo, hi)),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    /// Horizon `T`.
    pub horizon: f64,
    /// Control order `r`.
    pub order: usize,
    pub rho_override: Option<usize>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p_terminal: DMatrix<f64>,
    pub u_box: InputBox,
    /// Tikhonov term added to the QP Hessian.
    pub epsilon: f64,
    pub constraint_grid_points: usize,
    pub rho_tol: f64,
}

impl MpcConfig {
    /// Defaults: zero terminal weight, `ε = 1e-10`, 32 constraint samples.
    pub fn new(horizon: f64, order: usize, q: DMatrix<f64>, r: DMatrix<f64>, u_box: InputBox) -> Self {
        let n = q.nrows();
        MpcConfig {
            horizon,
            order,
            rho_override: None,
            q,
            r,
            p_terminal: DMatrix::zeros(n, n),
            u_box,
            epsilon: 1e-10,
            constraint_grid_points: 32,
            rho_tol: 1e-9,
        }
    }

    /// Checks weights, box and orders against a plant of size `(n, m)`.
    /// Errors name the offending field.
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::config("mpc.horizon", "must be positive"));
        }
        if self.order < 1 {
            return Err(Error::config("mpc.order", "must be at least 1"));
        }
        if let Some(rho) = self.rho_override {
            if rho < 1 || rho > self.order {
                return Err(Error::config("mpc.rho_override", "need 1 <= rho <= order"));
            }
        }
        check_weight("mpc.q", &self.q, n, true)?;
        check_weight("mpc.r", &self.r, m, false)?;
        check_weight("mpc.p_terminal", &self.p_terminal, n, false)?;
        if self.u_box.dim() != m {
            return Err(Error::config(
                "mpc.u_box",
                format!("expected {m} channels, got {}", self.u_box.dim()),
            ));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::config("mpc.epsilon", "must be nonnegative"));
        }
        if self.constraint_grid_points < 2 {
            return Err(Error::config("mpc.constraint_grid_points", "must be at least 2"));
        }
        if !(self.rho_tol > 0.0) {
            return Err(Error::config("mpc.rho_tol", "must be positive"));
        }
        Ok(())
    }
}

fn check_weight(field: &str, w: &DMatrix<f64>, dim: usize, definite: bool) -> Result<()> {
    if w.shape() != (dim, dim) {
        return Err(Error::config(
            field,
            format!("expected {dim}x{dim}, got {}x{}", w.nrows(), w.ncols()),
        ));
    }
    if w.iter().any(|v| !v.is_finite()) || !is_symmetric(w, 1e-12) {
        return Err(Error::config(field, "must be finite and symmetric"));
    }
    if definite {
        if w.clone().cholesky().is_none() {
            return Err(Error::config(field, "must be positive definite"));
        }
    } else if symmetric_eigen_min(w) < -1e-12 * w.amax().max(1.0) {
        return Err(Error::config(field, "must be positive semidefinite"));
    }
    Ok(())
}

/// Smallest `i >= 1` with `‖A^(i-1) B‖_F > tol ‖B‖_F`.
pub fn relative_degree(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<usize> {
    if !a.is_square() || b.nrows() != a.nrows() {
        return Err(Error::shape(
            "relative_degree",
            format!("A is {:?}, B is {:?}", a.shape(), b.shape()),
        ));
    }
    let n = a.nrows();
    let b_norm = b.norm();
    if b_norm <= tol {
        return Err(Error::DegenerateInput { max_order: n });
    }
    let mut block = b.clone();
    for i in 1..=n {
        if block.norm() > tol * b_norm {
            return Ok(i);
        }
        block = a * block;
    }
    Err(Error::DegenerateInput { max_order: n })
}

/// `A1`, `A2` and the block-Toeplitz `Bcal` of the Taylor prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrices {
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub bcal: DMatrix<f64>,
    pub rho: usize,
    pub r: usize,
}

impl PredictionMatrices {
    pub fn n(&self) -> usize {
        self.a1.ncols()
    }

    pub fn m(&self) -> usize {
        self.bcal.ncols() / self.blocks()
    }

    /// Number of input-derivative blocks, `r - ρ + 1`.
    pub fn blocks(&self) -> usize {
        self.r - self.rho + 1
    }

    pub fn decision_dim(&self) -> usize {
        self.bcal.ncols()
    }

    /// `(X1, X2)` for state `x` and input stack `u`.
    pub fn derivative_stacks(&self, x: &DVector<f64>, u_stack: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.a1 * x, &self.a2 * x + &self.bcal * u_stack)
    }
}

pub fn build_prediction(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    rho: usize,
    r: usize,
) -> Result<PredictionMatrices> {
    if rho < 1 || r < rho {
        return Err(Error::Domain(format!(
            "need r >= rho >= 1, got r = {r}, rho = {rho}"
        )));
    }
    if !a.is_square() || b.nrows() != a.nrows() {
        return Err(Error::shape(
            "build_prediction",
            format!("A is {:?}, B is {:?}", a.shape(), b.shape()),
        ));
    }
    let (n, m) = b.shape();
    let powers = matrix_powers(a, r);
    let blocks = r - rho + 1;

    let mut a1 = DMatrix::zeros(rho * n, n);
    for (i, p) in powers.iter().take(rho).enumerate() {
        a1.view_mut((i * n, 0), (n, n)).copy_from(p);
    }
    let mut a2 = DMatrix::zeros(blocks * n, n);
    for i in 0..blocks {
        a2.view_mut((i * n, 0), (n, n)).copy_from(&powers[rho + i]);
    }
    let markov: Vec<DMatrix<f64>> = (0..blocks).map(|k| &powers[rho - 1 + k] * b).collect();
    let mut bcal = DMatrix::zeros(blocks * n, blocks * m);
    for i in 0..blocks {
        for j in 0..=i {
            bcal.view_mut((i * n, j * m), (n, m)).copy_from(&markov[i - j]);
        }
    }
    Ok(PredictionMatrices { a1, a2, bcal, rho, r })
}

/// Row of monomials `τ^k/k!` for `k` in `orders`, lifted by `I_dim`.
fn monomial_row(orders: std::ops::RangeInclusive<usize>, tau: f64, dim: usize) -> DMatrix<f64> {
    let count = orders.end() + 1 - orders.start();
    let mut out = DMatrix::zeros(dim, count * dim);
    for (j, k) in orders.enumerate() {
        let c = tau.powi(k as i32) / factorial(k);
        out.view_mut((0, j * dim), (dim, dim)).fill_diagonal(c);
    }
    out
}

/// Evaluates a stack of derivative blocks as `Σ_k τ^k/k! block_k`.
fn taylor_sum(stack: &DVector<f64>, first_order: usize, tau: f64, dim: usize) -> DVector<f64> {
    let blocks = stack.len() / dim;
    let mut out = DVector::zeros(dim);
    for j in 0..blocks {
        let k = first_order + j;
        out += stack.rows(j * dim, dim) * (tau.powi(k as i32) / factorial(k));
    }
    out
}

/// Predicted `x(t_k + τ)` from the Taylor stacks.
pub fn predict_state(pm: &PredictionMatrices, x: &DVector<f64>, u_stack: &DVector<f64>, tau: f64) -> DVector<f64> {
    let n = pm.n();
    let (x1, x2) = pm.derivative_stacks(x, u_stack);
    taylor_sum(&x1, 0, tau, n) + taylor_sum(&x2, pm.rho, tau, n)
}

/// `J(u) = uᵀ H u + 2 gᵀ u + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c: f64,
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        (u.transpose() * &self.h * u)[(0, 0)] + 2.0 * self.g.dot(u) + self.c
    }
}

/// Assembles the horizon cost
/// `∫ eᵀQe + ûᵀRû dτ + e(T)ᵀ P e(T)` as a QP in the input stack, with the
/// error expanded in the same Taylor basis as the prediction.
pub fn build_qp(
    pm: &PredictionMatrices,
    cfg: &MpcConfig,
    x: &DVector<f64>,
    reference: &ReferenceStack,
) -> Result<QpProblem> {
    let n = pm.n();
    let m = pm.m();
    let (rho, r) = (pm.rho, pm.r);
    if x.len() != n
        || reference.x1d.len() != rho * n
        || reference.x2d.len() != pm.blocks() * n
        || cfg.q.shape() != (n, n)
        || cfg.r.shape() != (m, m)
        || cfg.p_terminal.shape() != (n, n)
    {
        return Err(Error::shape(
            "build_qp",
            format!("inconsistent dimensions for n = {n}, m = {m}, rho = {rho}, r = {r}"),
        ));
    }
    let t = cfg.horizon;
    let t11 = monomial_gram(0..=rho - 1, 0..=rho - 1, t, &cfg.q)?;
    let t12 = monomial_gram(0..=rho - 1, rho..=r, t, &cfg.q)?;
    let t22 = monomial_gram(rho..=r, rho..=r, t, &cfg.q)?;
    let tu = monomial_gram(0..=r - rho, 0..=r - rho, t, &cfg.r)?;

    // X̃1 = d1 (fixed), X̃2 = s + Bcal u
    let d1 = &pm.a1 * x - &reference.x1d;
    let s = &pm.a2 * x - &reference.x2d;
    let bcal = &pm.bcal;

    // terminal error e(T) = c_t + L u
    let e1 = monomial_row(0..=rho - 1, t, n);
    let e2 = monomial_row(rho..=r, t, n);
    let c_t = &e1 * &d1 + &e2 * &s;
    let l = &e2 * bcal;
    let p = &cfg.p_terminal;

    let mut h = bcal.transpose() * &t22 * bcal + &tu + l.transpose() * p * &l;
    // symmetrize away roundoff before regularizing
    h = (&h + h.transpose()) * 0.5;
    for i in 0..h.nrows() {
        h[(i, i)] += cfg.epsilon;
    }
    let g = bcal.transpose() * (t12.transpose() * &d1 + &t22 * &s) + l.transpose() * p * &c_t;
    let c = d1.dot(&(&t11 * &d1)) + 2.0 * d1.dot(&(&t12 * &s)) + s.dot(&(&t22 * &s)) + c_t.dot(&(p * &c_t));
    Ok(QpProblem { h, g, c })
}

/// Minimizer of the unconstrained QP, `H u = -g`, by Cholesky.
pub fn solve_unconstrained(qp: &QpProblem) -> Result<DVector<f64>> {
    let chol = qp
        .h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("QP Hessian is not positive definite".into()))?;
    let u = chol.solve(&(-&qp.g));
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite QP solution".into()));
    }
    Ok(u)
}

/// Input polynomial `û(τ) = Σ_{j=0}^{r-ρ} τ^j/j! u^{[j]}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialPolicy {
    stack: DVector<f64>,
    m: usize,
}

impl PolynomialPolicy {
    pub fn eval(&self, tau: f64) -> DVector<f64> {
        taylor_sum(&self.stack, 0, tau, self.m)
    }

    pub fn stack(&self) -> &DVector<f64> {
        &self.stack
    }

    pub fn degree(&self) -> usize {
        self.stack.len() / self.m - 1
    }
}

pub fn extract_policy(u_stack: &DVector<f64>, rho: usize, r: usize, m: usize) -> Result<PolynomialPolicy> {
    if rho < 1 || r < rho || m == 0 || u_stack.len() != (r - rho + 1) * m {
        return Err(Error::shape(
            "extract_policy",
            format!(
                "stack of length {} does not fit rho = {rho}, r = {r}, m = {m}",
                u_stack.len()
            ),
        ));
    }
    Ok(PolynomialPolicy {
        stack: u_stack.clone(),
        m,
    })
}

/// Scaled input stack returned by [`enforce_box`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoxedSolution {
    pub u_stack: DVector<f64>,
    /// Applied scale `α ∈ [0, 1]`; 1 when the unconstrained policy is feasible.
    pub scale: f64,
}

impl BoxedSolution {
    pub fn is_scaled(&self) -> bool {
        self.scale < 1.0
    }
}

/// Shrinks the unconstrained optimum along its own direction until the
/// input polynomial satisfies the box at `constraint_grid_points` evenly
/// spaced samples of `[0, T]`.
///
/// Feasibility is linear in the scale, so the largest feasible `α` is the
/// smallest bound-to-value ratio over the violated samples; it is computed
/// directly rather than bisected. `α = 0` is always feasible because the
/// box contains the origin.
pub fn enforce_box(u_star: &DVector<f64>, pm: &PredictionMatrices, cfg: &MpcConfig) -> Result<BoxedSolution> {
    let m = pm.m();
    let policy = extract_policy(u_star, pm.rho, pm.r, m)?;
    if cfg.u_box.dim() != m {
        return Err(Error::shape("enforce_box", "box dimension differs from m"));
    }
    let grid = cfg.constraint_grid_points.max(2);
    let taus: Vec<f64> = (0..grid)
        .map(|k| cfg.horizon * k as f64 / (grid - 1) as f64)
        .collect();
    let samples: Vec<DVector<f64>> = taus.iter().map(|&tau| policy.eval(tau)).collect();

    let mut alpha: f64 = 1.0;
    for u in &samples {
        for (v, (lo, hi)) in u.iter().zip(cfg.u_box.bounds()) {
            if *v > hi {
                alpha = alpha.min(hi / v);
            } else if *v < lo {
                alpha = alpha.min(lo / v);
            }
        }
    }
    if alpha < 1.0 {
        // ratios can land one ulp outside; walk inwards until the scaled
        // polynomial itself is feasible at every sample
        let feasible = |a: f64| {
            let scaled = PolynomialPolicy {
                stack: u_star * a,
                m,
            };
            taus.iter().all(|&tau| cfg.u_box.contains(&scaled.eval(tau)))
        };
        let mut tries = 0;
        while !feasible(alpha) && tries < 64 {
            alpha *= 1.0 - 4.0 * f64::EPSILON;
            tries += 1;
        }
        if !feasible(alpha) {
            alpha = 0.0;
        }
    }
    Ok(BoxedSolution {
        u_stack: if alpha < 1.0 { u_star * alpha } else { u_star.clone() },
        scale: alpha,
    })
}

/// Everything computed for one receding-horizon update.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPlan {
    pub rho: usize,
    pub prediction: PredictionMatrices,
    pub qp: QpProblem,
    pub unconstrained: DVector<f64>,
    pub solution: BoxedSolution,
    pub policy: PolynomialPolicy,
}

/// One MPC update at time `t` from state `x` with model `est`.
pub fn plan(
    est: &ParameterEstimate,
    cfg: &MpcConfig,
    reference: &ReferenceSpec,
    x: &DVector<f64>,
    t: f64,
) -> Result<ControlPlan> {
    let rho = match cfg.rho_override {
        Some(rho) => rho,
        None => relative_degree(&est.a_hat, &est.b_hat, cfg.rho_tol)?,
    };
    if cfg.order < rho {
        return Err(Error::Domain(format!(
            "control order {} is below the relative degree {rho}",
            cfg.order
        )));
    }
    let prediction = build_prediction(&est.a_hat, &est.b_hat, rho, cfg.order)?;
    let stack = reference_stack(reference, t, cfg.order, rho)?;
    let qp = build_qp(&prediction, cfg, x, &stack)?;
    let unconstrained = solve_unconstrained(&qp)?;
    let solution = enforce_box(&unconstrained, &prediction, cfg)?;
    let policy = extract_policy(&solution.u_stack, rho, cfg.order, est.m())?;
    Ok(ControlPlan {
        rho,
        prediction,
        qp,
        unconstrained,
        solution,
        policy,
    })
}
