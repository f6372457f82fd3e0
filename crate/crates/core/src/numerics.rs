//! Dense numerical kernels shared by the rest of the crate: Kronecker and
//! `vec` algebra, orthogonal least squares, closed-form monomial Gram
//! matrices and composite trapezoid quadrature.

use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition-number ceiling above which a regressor counts as rank deficient.
pub const DEFAULT_CONDITION_THRESHOLD: f64 = 1e10;

/// Kronecker product `a ⊗ b`. Block `(i, j)` of the result is `a[(i, j)] * b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * s));
        }
    }
    out
}

/// Column-major vectorization, `vec(P) = [p_1; ...; p_m]`.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra storage is already column-major
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec()`].
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::shape(
            "unvec",
            format!("vector of length {} cannot fill {rows}x{cols}", v.len()),
        ));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Integer power by repeated multiplication.
pub fn matrix_power(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut p = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        p = &p * a;
    }
    p
}

/// All powers `a^0 ..= a^max`.
pub fn matrix_powers(a: &DMatrix<f64>, max: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(max + 1);
    out.push(DMatrix::identity(a.nrows(), a.ncols()));
    for k in 1..=max {
        let next = &out[k - 1] * a;
        out.push(next);
    }
    out
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresSolution {
    pub theta: DVector<f64>,
    /// `sigma_max / sigma_min` of the regressor.
    pub condition: f64,
    pub residual_norm: f64,
}

/// Singular-value summary of a regressor matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conditioning {
    pub max_singular_value: f64,
    pub min_singular_value: f64,
    pub condition: f64,
}

impl Conditioning {
    fn from_singular_values(sv: &DVector<f64>) -> Self {
        let max = sv.iter().cloned().fold(0.0_f64, f64::max);
        let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        let condition = if min > 0.0 && max.is_finite() {
            max / min
        } else {
            f64::INFINITY
        };
        Conditioning {
            max_singular_value: max,
            min_singular_value: if min.is_finite() { min } else { 0.0 },
            condition,
        }
    }
}

/// Singular-value diagnostics of `psi` (rows >= cols).
pub fn conditioning(psi: &DMatrix<f64>) -> Conditioning {
    if psi.ncols() == 0 {
        return Conditioning {
            max_singular_value: 0.0,
            min_singular_value: 0.0,
            condition: f64::INFINITY,
        };
    }
    if psi.nrows() < psi.ncols() {
        // rank is at most nrows, so the smallest of the ncols singular values is zero
        let sv = psi.clone().singular_values();
        let max = sv.iter().cloned().fold(0.0_f64, f64::max);
        return Conditioning {
            max_singular_value: max,
            min_singular_value: 0.0,
            condition: f64::INFINITY,
        };
    }
    // R from a thin QR carries the same singular values and is only cols x cols
    let r = psi.clone().qr().r();
    Conditioning::from_singular_values(&r.singular_values())
}

/// Minimizer of `||psi * theta - gamma||_2` by Householder QR.
///
/// Rejects regressors whose condition estimate exceeds `condition_threshold`.
pub fn least_squares(
    psi: &DMatrix<f64>,
    gamma: &DVector<f64>,
    condition_threshold: f64,
) -> Result<LeastSquaresSolution> {
    let (rows, cols) = psi.shape();
    if gamma.len() != rows {
        return Err(Error::shape(
            "least_squares",
            format!("psi has {rows} rows but gamma has {}", gamma.len()),
        ));
    }
    if cols == 0 || rows < cols {
        return Err(Error::shape(
            "least_squares",
            format!("psi must be tall with at least one column, got {rows}x{cols}"),
        ));
    }

    let qr = psi.clone().qr();
    let r = qr.r();
    let cond = Conditioning::from_singular_values(&r.singular_values()).condition;
    if !(cond <= condition_threshold) {
        return Err(Error::RankDeficient { condition: cond });
    }

    let mut qtb = DMatrix::from_column_slice(rows, 1, gamma.as_slice());
    qr.q_tr_mul(&mut qtb);
    let rhs = DVector::from_iterator(cols, qtb.column(0).iter().take(cols).cloned());
    let theta = r
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    let residual_norm = (psi * &theta - gamma).norm();
    Ok(LeastSquaresSolution {
        theta,
        condition: cond,
        residual_norm,
    })
}

/// Block matrix of weighted monomial integrals over `[0, horizon]`.
///
/// Block `(a, b)` is `T^(a+b+1) / ((a+b+1) a! b!) * weight` for `a` in
/// `rows` and `b` in `cols`, i.e. `∫ τ^a/a! τ^b/b! dτ · W`.
pub fn monomial_gram(
    rows: RangeInclusive<usize>,
    cols: RangeInclusive<usize>,
    horizon: f64,
    weight: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Domain(format!(
            "gram horizon must be positive, got {horizon}"
        )));
    }
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::Domain("gram index ranges must be nonempty".into()));
    }
    let d = weight.nrows();
    if weight.ncols() != d {
        return Err(Error::shape("monomial_gram", "weight must be square"));
    }
    let (r0, c0) = (*rows.start(), *cols.start());
    let nr = rows.end() - r0 + 1;
    let nc = cols.end() - c0 + 1;
    let mut out = DMatrix::zeros(nr * d, nc * d);
    for (bi, a) in rows.enumerate() {
        for (bj, b) in cols.clone().enumerate() {
            let p = (a + b + 1) as f64;
            let coef = horizon.powi((a + b + 1) as i32) / (p * factorial(a) * factorial(b));
            out.view_mut((bi * d, bj * d), (d, d))
                .copy_from(&(weight * coef));
        }
    }
    Ok(out)
}

/// Composite trapezoid rule over equally spaced samples.
pub fn trapezoid_integral(samples: &[DVector<f64>], dt: f64) -> Result<DVector<f64>> {
    if samples.len() < 2 {
        return Err(Error::Domain(
            "trapezoid rule needs at least two samples".into(),
        ));
    }
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {dt}")));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::shape("trapezoid_integral", "samples differ in length"));
    }
    let last = samples.len() - 1;
    let mut acc = (&samples[0] + &samples[last]) * 0.5;
    for s in &samples[1..last] {
        acc += s;
    }
    Ok(acc * dt)
}

/// Whether a square matrix is symmetric to a relative tolerance.
pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1e-300);
    (m - m.transpose()).amax() <= rel_tol * scale
}

pub(crate) fn symmetric_eigen_min(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn kron_with_scalar_identity_is_identity_map() {
        let m = mat(2, 3, &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(kron(&DMatrix::identity(1, 1), &m), m);
    }

    #[test]
    fn kron_row_by_identity() {
        let a = mat(1, 2, &[1., 2.]);
        let out = kron(&a, &DMatrix::identity(2, 2));
        assert_eq!(out, mat(2, 4, &[1., 0., 2., 0., 0., 1., 0., 2.]));
    }

    #[test]
    fn kron_column_by_identity() {
        let x = mat(2, 1, &[1., 0.]);
        let out = kron(&x, &DMatrix::identity(2, 2));
        assert_eq!(out, mat(4, 2, &[1., 0., 0., 1., 0., 0., 0., 0.]));
    }

    #[test]
    fn vec_is_column_major() {
        let m = mat(2, 2, &[1., 2., 3., 4.]);
        assert_eq!(vec(&m).as_slice(), &[1., 3., 2., 4.]);
        assert_eq!(
            unvec(&DVector::from_vec(vec![1., 3., 2., 4.]), 2, 2).unwrap(),
            m
        );
        assert_eq!(vec(&DMatrix::zeros(2, 2)), DVector::zeros(4));
    }

    #[test]
    fn unvec_rejects_bad_length() {
        let err = unvec(&DVector::zeros(5), 2, 2).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn least_squares_identity() {
        let sol = least_squares(
            &DMatrix::identity(3, 3),
            &DVector::from_vec(vec![1., 2., 3.]),
            DEFAULT_CONDITION_THRESHOLD,
        )
        .unwrap();
        assert_relative_eq!(sol.theta, DVector::from_vec(vec![1., 2., 3.]), epsilon = 1e-14);
        assert_relative_eq!(sol.condition, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn least_squares_mean_of_pair() {
        let sol = least_squares(
            &mat(2, 1, &[1., 1.]),
            &DVector::from_vec(vec![1., 3.]),
            DEFAULT_CONDITION_THRESHOLD,
        )
        .unwrap();
        assert_relative_eq!(sol.theta[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(sol.residual_norm, 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn least_squares_rank_one_is_rejected() {
        let psi = mat(3, 2, &[1., 1., 2., 2., 3., 3.]);
        let err = least_squares(
            &psi,
            &DVector::from_vec(vec![1., 0., -1.]),
            DEFAULT_CONDITION_THRESHOLD,
        )
        .unwrap_err();
        match err {
            Error::RankDeficient { condition } => assert!(condition > 1e10),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn least_squares_zero_regressor_is_rejected() {
        let err = least_squares(&DMatrix::zeros(4, 2), &DVector::zeros(4), 1e10).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn least_squares_matches_normal_equations_when_well_conditioned() {
        let psi = mat(4, 2, &[1., 0.5, 2., -1., 0.3, 3., -1., 1.]);
        let gamma = DVector::from_vec(vec![0.2, 1.0, -0.7, 2.0]);
        let normal = (psi.transpose() * &psi)
            .try_inverse()
            .unwrap()
            * psi.transpose()
            * &gamma;
        let sol = least_squares(&psi, &gamma, 1e10).unwrap();
        assert_relative_eq!(sol.theta, normal, epsilon = 1e-12);
    }

    #[test]
    fn conditioning_of_duplicated_columns() {
        let psi = mat(3, 2, &[1., 1., 0.5, 0.5, -2., -2.]);
        let c = conditioning(&psi);
        assert!(c.condition > 1e10);
        let c = conditioning(&DMatrix::identity(3, 3));
        assert_relative_eq!(c.condition, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gram_scalar_cases() {
        let w = DMatrix::identity(1, 1);
        let g = monomial_gram(0..=0, 0..=0, 1.0, &w).unwrap();
        assert_relative_eq!(g[(0, 0)], 1.0, epsilon = 1e-15);

        let g = monomial_gram(0..=0, 1..=2, 1.0, &w).unwrap();
        assert_relative_eq!(g[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(g[(0, 1)], 1.0 / 6.0, epsilon = 1e-15);

        let g = monomial_gram(1..=2, 1..=2, 1.0, &w).unwrap();
        let expected = mat(2, 2, &[1. / 3., 1. / 8., 1. / 8., 1. / 20.]);
        assert_relative_eq!(g, expected, epsilon = 1e-15);
    }

    #[test]
    fn gram_rejects_nonpositive_horizon() {
        let w = DMatrix::identity(1, 1);
        assert!(matches!(
            monomial_gram(0..=1, 0..=1, 0.0, &w),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            monomial_gram(0..=1, 0..=1, -1.0, &w),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn gram_block_lifting() {
        let w = mat(2, 2, &[2., 1., 1., 3.]);
        let g = monomial_gram(0..=1, 0..=0, 2.0, &w).unwrap();
        assert_eq!(g.shape(), (4, 2));
        assert_relative_eq!(g.view((0, 0), (2, 2)).into_owned(), &w * 2.0, epsilon = 1e-14);
        assert_relative_eq!(g.view((2, 0), (2, 2)).into_owned(), &w * 2.0, epsilon = 1e-14);
    }

    #[test]
    fn trapezoid_examples() {
        let c = DVector::from_vec(vec![3.0, -1.0]);
        let v = trapezoid_integral(&[c.clone(), c.clone(), c.clone()], 0.2).unwrap();
        assert_relative_eq!(v, &c * 0.4, epsilon = 1e-15);

        let ramp: Vec<_> = (0..3).map(|i| DVector::from_element(1, i as f64)).collect();
        assert_relative_eq!(trapezoid_integral(&ramp, 1.0).unwrap()[0], 2.0);

        let unit = [DVector::from_element(1, 0.0), DVector::from_element(1, 1.0)];
        assert_relative_eq!(trapezoid_integral(&unit, 1.0).unwrap()[0], 0.5);
    }

    #[test]
    fn trapezoid_needs_two_samples() {
        assert!(trapezoid_integral(&[DVector::zeros(1)], 0.1).is_err());
        assert!(trapezoid_integral(&[DVector::zeros(1), DVector::zeros(1)], 0.0).is_err());
    }

    fn arb_matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-3.0..3.0f64, rows * cols)
            .prop_map(move |v| DMatrix::from_vec(rows, cols, v))
    }

    // composite Simpson; plain trapezoid bias h^2 p(p+1)/12 exceeds 1e-8 past degree 3
    fn dense_simpson(f: impl Fn(f64) -> f64, t: f64, n: usize) -> f64 {
        let h = t / n as f64;
        let mut acc = f(0.0) + f(t);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(i as f64 * h);
        }
        acc * h / 3.0
    }

    proptest! {
        #[test]
        fn kron_vec_identity(
            (a, x, b) in (1usize..4, 1usize..4, 1usize..4, 1usize..4)
                .prop_flat_map(|(p, q, r, s)| (arb_matrix(p, q), arb_matrix(q, r), arb_matrix(r, s)))
        ) {
            let lhs = vec(&(&a * &x * &b));
            let rhs = kron(&b.transpose(), &a) * vec(&x);
            let scale = 1.0 + lhs.amax();
            prop_assert!((lhs - rhs).amax() <= 1e-12 * scale);
        }

        #[test]
        fn unvec_inverts_vec(m in (1usize..5, 1usize..5).prop_flat_map(|(r, c)| arb_matrix(r, c))) {
            let (r, c) = m.shape();
            prop_assert_eq!(unvec(&vec(&m), r, c).unwrap(), m);
        }

        #[test]
        fn least_squares_residual_is_orthogonal(
            psi in (3usize..9, 1usize..4).prop_flat_map(|(r, c)| arb_matrix(r + c, c)),
            seed in proptest::collection::vec(-2.0..2.0f64, 12),
        ) {
            let gamma = DVector::from_iterator(psi.nrows(), seed.iter().cycle().take(psi.nrows()).cloned());
            match least_squares(&psi, &gamma, 1e8) {
                Ok(sol) => {
                    let ortho = psi.transpose() * (&psi * &sol.theta - &gamma);
                    prop_assert!(ortho.norm() <= 1e-10 * psi.norm() * gamma.norm().max(1.0));
                }
                Err(Error::RankDeficient { .. }) => {}
                Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
            }
        }

        #[test]
        fn gram_matches_dense_quadrature(
            t in 0.1..5.0f64,
            a0 in 0usize..5, a_len in 0usize..2,
            b0 in 0usize..5, b_len in 0usize..2,
        ) {
            let w = DMatrix::identity(1, 1);
            let g = monomial_gram(a0..=a0 + a_len, b0..=b0 + b_len, t, &w).unwrap();
            for (i, a) in (a0..=a0 + a_len).enumerate() {
                for (j, b) in (b0..=b0 + b_len).enumerate() {
                    let q = dense_simpson(
                        |s| s.powi(a as i32) / factorial(a) * s.powi(b as i32) / factorial(b),
                        t,
                        10_000,
                    );
                    prop_assert!((g[(i, j)] - q).abs() <= 1e-8 * q.abs().max(1e-300));
                }
            }
        }

        #[test]
        fn gram_is_symmetric_on_matching_ranges(t in 0.1..5.0f64, lo in 0usize..3, len in 0usize..4) {
            let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
            let g = monomial_gram(lo..=lo + len, lo..=lo + len, t, &w).unwrap();
            prop_assert!(is_symmetric(&g, 1e-14));
        }
    }
}
