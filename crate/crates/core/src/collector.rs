//! Integral-window regressors.
//!
//! Integrating `ẋ = Ax + Bu` over a window `[t - δ, t]` gives
//! `x(t) - x(t - δ) = A ∫x + B ∫u`, which is linear in
//! `Θ = [vec(A); vec(B)]` and needs no state derivatives. With only the
//! first half `ξ` of the state measured and `A = [[0, I], [A1, A2]]`,
//! `B = [0; B1]`, a second nested window of length `δ2` eliminates the
//! unmeasured half and leaves `Θ1 = [vec(A1); vec(A2); vec(B1)]`.
//!
//! All integrals are composite trapezoid sums on the trajectory grid.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::kron;
use crate::plant::{grid_steps, Trajectory};

/// Which part of the state is measured and how windows are formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measurement {
    Full,
    /// Only the first `n/2` states; nested windows of lengths `delta1 != delta2`.
    Partial { delta1: f64, delta2: f64 },
}

impl Measurement {
    /// Window reach below which samples are identically zero.
    pub fn threshold(&self, delta: f64) -> f64 {
        match *self {
            Measurement::Full => delta,
            Measurement::Partial { delta1, delta2 } => delta1 + delta2,
        }
    }

    /// Rows contributed by one sample time.
    pub fn rows_per_sample(&self, n: usize) -> usize {
        match self {
            Measurement::Full => n,
            Measurement::Partial { .. } => n / 2,
        }
    }

    /// Number of unknowns.
    pub fn parameter_count(&self, n: usize, m: usize) -> usize {
        match self {
            Measurement::Full => n * n + n * m,
            Measurement::Partial { .. } => {
                let q = n / 2;
                2 * q * q + m * q
            }
        }
    }

    pub fn is_partial(&self) -> bool {
        matches!(self, Measurement::Partial { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSampleFull {
    pub t: f64,
    /// `x(t) - x(t - δ)`
    pub f: DVector<f64>,
    /// `∫ x` over the window
    pub xi_x: DVector<f64>,
    /// `∫ u` over the window
    pub xi_u: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSamplePartial {
    pub t: f64,
    /// `ξ(t-δ2-δ1) - ξ(t-δ1) + ξ(t) - ξ(t-δ2)`
    pub f1: DVector<f64>,
    /// nested double integral of `ξ`
    pub xi_p: DVector<f64>,
    /// `∫_{t-δ2}^{t} ξ - ∫_{t-δ1-δ2}^{t-δ1} ξ`
    pub xi_v: DVector<f64>,
    /// nested double integral of `u`
    pub xi_u1: DVector<f64>,
}

fn window_steps(traj: &Trajectory, delta: f64, name: &str) -> Result<usize> {
    let d = grid_steps(delta, traj.dt())
        .map_err(|_| Error::Domain(format!("{name} = {delta} is not a multiple of the grid step {}", traj.dt())))?;
    if d == 0 {
        return Err(Error::Domain(format!("{name} must be positive")));
    }
    Ok(d)
}

fn grid_index(traj: &Trajectory, t: f64) -> Result<usize> {
    traj.index_of(t)
}

/// Full-state window ending at `t`. Zero when `t - t0 < δ`.
pub fn window_full(traj: &Trajectory, t: f64, delta: f64) -> Result<WindowSampleFull> {
    let d = window_steps(traj, delta, "delta")?;
    let i = grid_index(traj, t)?;
    let (n, m) = (traj.n(), traj.m());
    if i < d {
        return Ok(WindowSampleFull {
            t,
            f: DVector::zeros(n),
            xi_x: DVector::zeros(n),
            xi_u: DVector::zeros(m),
        });
    }
    Ok(WindowSampleFull {
        t,
        f: traj.state(i) - traj.state(i - d),
        xi_x: traj.integrate_state(i - d, i),
        xi_u: traj.integrate_input(i - d, i),
    })
}

/// Nested-window integrals from per-step trapezoid pieces `seg[k]` covering
/// `[i - d1 - d2, i]`. Returns `(double integral, outer minus shifted single)`.
fn nested_integrals(seg: &[DVector<f64>], d1: usize, d2: usize, dt: f64) -> (DVector<f64>, DVector<f64>) {
    debug_assert_eq!(seg.len(), d1 + d2);
    let dim = seg[0].len();
    // local prefix sums keep magnitudes small
    let mut prefix = Vec::with_capacity(seg.len() + 1);
    prefix.push(DVector::zeros(dim));
    for s in seg {
        let next = prefix.last().unwrap() + s;
        prefix.push(next);
    }
    let inner = |j: usize| &prefix[j] - &prefix[j - d1];
    let mut double = (inner(d1) + inner(d1 + d2)) * 0.5;
    for j in d1 + 1..d1 + d2 {
        double += inner(j);
    }
    double *= dt;
    let shifted = (&prefix[d1 + d2] - &prefix[d1]) - (&prefix[d2] - &prefix[0]);
    (double, shifted)
}

/// Partial-state window ending at `t`, using the first `n/2` states.
/// Zero when `t - t0 < δ1 + δ2`.
pub fn window_partial(
    traj: &Trajectory,
    t: f64,
    delta1: f64,
    delta2: f64,
) -> Result<WindowSamplePartial> {
    if (delta1 - delta2).abs() <= 1e-12 * delta1.abs().max(delta2.abs()) {
        return Err(Error::Domain(format!(
            "nested windows need delta1 != delta2, got {delta1} and {delta2}"
        )));
    }
    let n = traj.n();
    if !n.is_multiple_of(2) {
        return Err(Error::Domain(format!(
            "partial measurement needs an even state dimension, got n = {n}"
        )));
    }
    let q = n / 2;
    let m = traj.m();
    let d1 = window_steps(traj, delta1, "delta1")?;
    let d2 = window_steps(traj, delta2, "delta2")?;
    let i = grid_index(traj, t)?;
    if i < d1 + d2 {
        return Ok(WindowSamplePartial {
            t,
            f1: DVector::zeros(q),
            xi_p: DVector::zeros(q),
            xi_v: DVector::zeros(q),
            xi_u1: DVector::zeros(m),
        });
    }
    let start = i - d1 - d2;
    let xi = |k: usize| traj.state(k).rows(0, q).into_owned();
    let dt = traj.dt();

    let f1 = xi(start) - xi(i - d1) + xi(i) - xi(i - d2);

    let seg_x: Vec<DVector<f64>> = (start..i)
        .map(|k| (xi(k) + xi(k + 1)) * (0.5 * dt))
        .collect();
    let (xi_p, xi_v) = nested_integrals(&seg_x, d1, d2, dt);

    let seg_u: Vec<DVector<f64>> = (start..i)
        .map(|k| {
            let (a, b) = traj.step_inputs(k);
            (a + b) * (0.5 * dt)
        })
        .collect();
    let (xi_u1, _) = nested_integrals(&seg_u, d1, d2, dt);

    Ok(WindowSamplePartial {
        t,
        f1,
        xi_p,
        xi_v,
        xi_u1,
    })
}

fn lift(xi: &DVector<f64>, dim: usize) -> DMatrix<f64> {
    // (ξ ⊗ I)^T = ξ^T ⊗ I
    let row = DMatrix::from_row_slice(1, xi.len(), xi.as_slice());
    kron(&row, &DMatrix::identity(dim, dim))
}

/// `(F, [(Ξx ⊗ I_n)^T, (Ξu ⊗ I_n)^T])`, an `n x (n^2 + nm)` row block.
pub fn regressor_row_full(
    s: &WindowSampleFull,
    n: usize,
    m: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if s.f.len() != n || s.xi_x.len() != n || s.xi_u.len() != m {
        return Err(Error::shape(
            "regressor_row_full",
            format!("sample does not match n = {n}, m = {m}"),
        ));
    }
    let mut psi = DMatrix::zeros(n, n * n + n * m);
    psi.view_mut((0, 0), (n, n * n)).copy_from(&lift(&s.xi_x, n));
    psi.view_mut((0, n * n), (n, n * m)).copy_from(&lift(&s.xi_u, n));
    Ok((s.f.clone(), psi))
}

/// `(F1, [(Ξp ⊗ I_q)^T, (Ξv ⊗ I_q)^T, (Ξu1 ⊗ I_q)^T])`, a `q x (2q^2 + mq)` row block.
pub fn regressor_row_partial(
    s: &WindowSamplePartial,
    q: usize,
    m: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if s.f1.len() != q || s.xi_p.len() != q || s.xi_v.len() != q || s.xi_u1.len() != m {
        return Err(Error::shape(
            "regressor_row_partial",
            format!("sample does not match q = {q}, m = {m}"),
        ));
    }
    let mut psi = DMatrix::zeros(q, 2 * q * q + m * q);
    psi.view_mut((0, 0), (q, q * q)).copy_from(&lift(&s.xi_p, q));
    psi.view_mut((0, q * q), (q, q * q)).copy_from(&lift(&s.xi_v, q));
    psi.view_mut((0, 2 * q * q), (q, m * q)).copy_from(&lift(&s.xi_u1, q));
    Ok((s.f1.clone(), psi))
}

/// Stacked `(Γ, Ψ)` over strictly increasing sample times.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorBatch {
    measurement: Measurement,
    n: usize,
    m: usize,
    sample_times: Vec<f64>,
    gamma: Vec<f64>,
    /// row-major
    psi: Vec<f64>,
}

impl RegressorBatch {
    pub fn new(measurement: Measurement, n: usize, m: usize) -> Result<Self> {
        if measurement.is_partial() && !n.is_multiple_of(2) {
            return Err(Error::Domain(format!(
                "partial measurement needs an even state dimension, got n = {n}"
            )));
        }
        Ok(RegressorBatch {
            measurement,
            n,
            m,
            sample_times: Vec::new(),
            gamma: Vec::new(),
            psi: Vec::new(),
        })
    }

    pub fn measurement(&self) -> Measurement {
        self.measurement
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn rows_per_sample(&self) -> usize {
        self.measurement.rows_per_sample(self.n)
    }

    pub fn cols(&self) -> usize {
        self.measurement.parameter_count(self.n, self.m)
    }

    pub fn rows(&self) -> usize {
        self.gamma.len()
    }

    /// Number of sample times `l`.
    pub fn samples(&self) -> usize {
        self.sample_times.len()
    }

    pub fn sample_times(&self) -> &[f64] {
        &self.sample_times
    }

    /// Fewest sample times giving at least as many rows as unknowns.
    pub fn min_samples(&self) -> usize {
        self.cols().div_ceil(self.rows_per_sample())
    }

    pub fn gamma(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.gamma)
    }

    pub fn psi(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows(), self.cols(), &self.psi)
    }

    /// Appends one row block.
    pub fn push_rows(&mut self, t: f64, gamma_row: &DVector<f64>, psi_row: &DMatrix<f64>) -> Result<()> {
        let rps = self.rows_per_sample();
        if gamma_row.len() != rps || psi_row.shape() != (rps, self.cols()) {
            return Err(Error::shape(
                "RegressorBatch::push_rows",
                format!(
                    "expected {rps} rows x {} cols, got gamma {} and psi {:?}",
                    self.cols(),
                    gamma_row.len(),
                    psi_row.shape()
                ),
            ));
        }
        if let Some(&last) = self.sample_times.last() {
            if !(t > last) {
                return Err(Error::Domain(format!(
                    "sample times must increase: {t} after {last}"
                )));
            }
        }
        self.sample_times.push(t);
        self.gamma.extend(gamma_row.iter());
        for r in 0..rps {
            self.psi.extend(psi_row.row(r).iter());
        }
        Ok(())
    }

    /// Forms the window ending at `t` from `traj` and appends its rows.
    pub fn push_window(&mut self, traj: &Trajectory, t: f64, delta: f64) -> Result<()> {
        let (g, p) = match self.measurement {
            Measurement::Full => regressor_row_full(&window_full(traj, t, delta)?, self.n, self.m)?,
            Measurement::Partial { delta1, delta2 } => regressor_row_partial(
                &window_partial(traj, t, delta1, delta2)?,
                self.n / 2,
                self.m,
            )?,
        };
        self.push_rows(t, &g, &p)
    }

    /// Drops the oldest samples, keeping at most `keep`.
    pub fn retain_latest(&mut self, keep: usize) {
        let l = self.samples();
        if l <= keep {
            return;
        }
        let drop = l - keep;
        let rps = self.rows_per_sample();
        let cols = self.cols();
        self.sample_times.drain(..drop);
        self.gamma.drain(..drop * rps);
        self.psi.drain(..drop * rps * cols);
    }

    /// CSV: a `mode,n,m,delta1,delta2` header pair, a column header, then
    /// one line per regressor row (`t,row,gamma,psi_0..`).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record(["mode", "n", "m", "delta1", "delta2"])?;
        let (mode, d1, d2) = match self.measurement {
            Measurement::Full => ("full", String::new(), String::new()),
            Measurement::Partial { delta1, delta2 } => {
                ("partial", delta1.to_string(), delta2.to_string())
            }
        };
        w.write_record([mode, &self.n.to_string(), &self.m.to_string(), &d1, &d2])?;
        let mut header = vec!["t".to_string(), "row".to_string(), "gamma".to_string()];
        header.extend((0..self.cols()).map(|j| format!("psi_{j}")));
        w.write_record(&header)?;
        let rps = self.rows_per_sample();
        let cols = self.cols();
        for (s, t) in self.sample_times.iter().enumerate() {
            for r in 0..rps {
                let row = s * rps + r;
                let mut rec = vec![t.to_string(), r.to_string(), self.gamma[row].to_string()];
                rec.extend(self.psi[row * cols..(row + 1) * cols].iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(input);
        let mut records = rdr.records();
        let bad = |msg: &str| Error::Domain(format!("malformed batch csv: {msg}"));
        let mut next = || -> Result<csv::StringRecord> {
            records
                .next()
                .ok_or_else(|| bad("unexpected end of file"))?
                .map_err(Error::from)
        };
        let _ = next()?;
        let meta = next()?;
        let field = |i: usize| meta.get(i).unwrap_or("");
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| bad("bad dimension"));
        let parse_f64 = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let n = parse_usize(field(1))?;
        let m = parse_usize(field(2))?;
        let measurement = match field(0) {
            "full" => Measurement::Full,
            "partial" => Measurement::Partial {
                delta1: parse_f64(field(3))?,
                delta2: parse_f64(field(4))?,
            },
            _ => return Err(bad("unknown mode")),
        };
        let mut batch = RegressorBatch::new(measurement, n, m)?;
        let _ = next()?;
        let rps = batch.rows_per_sample();
        let cols = batch.cols();
        let rows: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
        if !rows.len().is_multiple_of(rps) {
            return Err(bad("row count is not a multiple of rows per sample"));
        }
        for block in rows.chunks(rps) {
            let t = parse_f64(block[0].get(0).unwrap_or(""))?;
            let mut g = DVector::zeros(rps);
            let mut p = DMatrix::zeros(rps, cols);
            for (r, rec) in block.iter().enumerate() {
                if rec.len() != cols + 3 {
                    return Err(bad("wrong column count"));
                }
                g[r] = parse_f64(&rec[2])?;
                for j in 0..cols {
                    p[(r, j)] = parse_f64(&rec[3 + j])?;
                }
            }
            batch.push_rows(t, &g, &p)?;
        }
        Ok(batch)
    }
}

/// Batch over sample times `t0 + i·δ` up to `t0 + l·δ` (plus `δ1 + δ2`
/// in partial mode). Samples whose window would reach before `t0` are
/// identically zero and are left out.
pub fn assemble_batch(
    traj: &Trajectory,
    delta: f64,
    l: usize,
    measurement: Measurement,
) -> Result<RegressorBatch> {
    let d = window_steps(traj, delta, "delta")?;
    let mut batch = RegressorBatch::new(measurement, traj.n(), traj.m())?;
    let required = batch.min_samples();
    if l < required {
        return Err(Error::InsufficientData { required, got: l });
    }
    let extra = match measurement {
        Measurement::Full => 0,
        Measurement::Partial { delta1, delta2 } => {
            window_steps(traj, delta1, "delta1")? + window_steps(traj, delta2, "delta2")?
        }
    };
    let last_index = l * d + extra;
    if last_index > traj.steps() {
        return Err(Error::Domain(format!(
            "trajectory ends at {}, batch needs data up to {}",
            traj.end_time(),
            traj.time(last_index)
        )));
    }
    let threshold = match measurement {
        Measurement::Full => d,
        Measurement::Partial { .. } => extra,
    };
    let mut i = 0;
    while i * d <= last_index {
        if i * d >= threshold {
            batch.push_window(traj, traj.time(i * d), delta)?;
        }
        i += 1;
    }
    Ok(batch)
}
