//! Small dense kernels: Gauss–Legendre rules, SPD/PSD solves, least squares
//! and eigenpairs of small matrices.
//!
//! Storage and the heavy factorizations (QR, SVD, Schur, LU) come from
//! `nalgebra`; the quadrature and the Cholesky solve are local.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type DenseMatrix = DMatrix<f64>;

/// Pivot tolerance for [`solve_spd`], relative to the largest diagonal entry.
pub const SPD_TOL: f64 = 1e-13;
/// Eigenvalue truncation for [`lstsq_psd`], relative to the largest eigenvalue.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumError {
    #[error("quadrature order {0} outside 1..=64")]
    QuadratureOrder(usize),
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotSpd { row: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("eigen-solver did not converge: {0}")]
    NoConvergence(String),
}

/// Gauss–Legendre rule on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// `n`-point Gauss–Legendre rule mapped to `[0, 1]`; nodes ascending.
pub fn gauss_legendre(n: usize) -> Result<QuadratureRule, NumError> {
    if !(1..=64).contains(&n) {
        return Err(NumError::QuadratureOrder(n));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // x is the i-th largest root on [-1,1]
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        nodes[i] = 0.5 * (1.0 - x);
        weights[n - 1 - i] = 0.5 * w;
        weights[i] = 0.5 * w;
    }
    Ok(QuadratureRule { nodes, weights })
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let d = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Cholesky solve of `A x = b` for symmetric positive definite `A`.
pub fn solve_spd(a: &DenseMatrix, b: &DVector<f64>) -> Result<DVector<f64>, NumError> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(NumError::Dimension(format!("{}x{} vs {}", a.nrows(), a.ncols(), b.len())));
    }
    let dmax = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= SPD_TOL * dmax {
            return Err(NumError::NotSpd { row: j, pivot: d });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[(i, k)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[(k, i)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    Ok(y)
}

/// Minimum-norm minimizer of `x^T A x / 2 - b^T x` for symmetric positive
/// semi-definite `A`, via a truncated eigen-decomposition.
pub fn lstsq_psd(a: &DenseMatrix, b: &DVector<f64>) -> DVector<f64> {
    let eig = a.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let mut x = DVector::zeros(a.nrows());
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > PSD_TOL * lmax && lam > 0.0 {
            let v = eig.eigenvectors.column(k);
            x += v * (v.dot(b) / lam);
        }
    }
    x
}

/// Least-squares solution of an overdetermined system.
#[derive(Clone, Debug)]
pub struct Lstsq {
    pub x: DVector<f64>,
    /// True when the QR factor was numerically rank deficient and the
    /// minimum-norm SVD solution was used instead.
    pub used_svd: bool,
}

/// Householder QR least squares with an SVD fallback on rank deficiency.
pub fn lstsq(a: &DenseMatrix, b: &DVector<f64>) -> Lstsq {
    let n = a.ncols();
    if a.nrows() >= n {
        let qr = a.clone().qr();
        let r = qr.r();
        let rmax = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        let rmin = (0..n).map(|i| r[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        if rmax > 0.0 && rmin > 1e-12 * rmax {
            let mut qtb = b.clone();
            qr.q_tr_mul(&mut qtb);
            let mut x = qtb.rows(0, n).into_owned();
            if r.solve_upper_triangular_mut(&mut x) {
                return Lstsq { x, used_svd: false };
            }
        }
    }
    Lstsq { x: lstsq_min_norm(a, b), used_svd: true }
}

/// Minimum-norm least-squares solution via SVD; singular values below
/// `1e-12 * sigma_max` are treated as zero.
pub fn lstsq_min_norm(a: &DenseMatrix, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    let eps = (1e-12 * smax).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Real eigenpairs of a small square matrix, sorted by descending modulus.
///
/// Eigenvalues come from the real Schur form; eigenvectors are right singular
/// vectors of `A - lambda I` for the smallest singular values. A repeated
/// eigenvalue yields as many vectors as its geometric multiplicity.
pub fn real_eigen_small(a: &DenseMatrix) -> Result<Vec<(f64, DVector<f64>)>, NumError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(NumError::Dimension(format!("{}x{} is not square", n, a.ncols())));
    }
    let anorm = a.norm().max(f64::MIN_POSITIVE);
    let ev = real_schur_eigenvalues(a)?;
    let mut reals: Vec<f64> =
        ev.iter().filter(|z| z.im.abs() <= 1e-9 * anorm).map(|z| z.re).collect();
    reals.sort_by(|x, y| y.abs().total_cmp(&x.abs()).then(y.total_cmp(x)));
    let mut out = Vec::new();
    let mut i = 0;
    while i < reals.len() {
        let lam = reals[i];
        let mut m = 1;
        while i + m < reals.len() && (reals[i + m] - lam).abs() <= 1e-7 * anorm {
            m += 1;
        }
        let mut shifted = a.clone();
        for k in 0..n {
            shifted[(k, k)] -= lam;
        }
        let svd = shifted.svd(false, true);
        let vt = svd.v_t.expect("requested V^T");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
        let mut found = 0;
        for &k in order.iter().take(m) {
            let v = vt.row(k).transpose();
            let res = (a * &v - &v * lam).norm();
            if res <= 1e-10 * anorm * v.norm() {
                out.push((lam, v));
                found += 1;
            }
        }
        if found == 0 {
            return Err(NumError::NoConvergence(format!("no eigenvector for eigenvalue {lam}")));
        }
        i += m;
    }
    Ok(out)
}

/// Deflation thresholds tried in turn, relative to the Frobenius norm; the
/// Schur iteration can stall at the tightest one on matrices with clustered
/// or defective eigenvalues.
const SCHUR_EPS: [f64; 4] = [f64::EPSILON, 1e-14, 1e-13, 1e-12];

fn real_schur_eigenvalues(a: &DenseMatrix) -> Result<DVector<Complex64>, NumError> {
    let scale = a.norm().max(f64::MIN_POSITIVE);
    SCHUR_EPS
        .iter()
        .find_map(|eps| a.clone().try_schur(eps * scale, 100_000))
        .map(|s| s.complex_eigenvalues())
        .ok_or_else(|| NumError::NoConvergence("Schur iteration".into()))
}

/// All eigenvalues (complex) of a real square matrix.
pub fn eigenvalues(a: &DenseMatrix) -> Result<Vec<Complex64>, NumError> {
    let ev = real_schur_eigenvalues(a)?;
    let mut v: Vec<Complex64> = ev.iter().copied().collect();
    v.sort_by(|x, y| y.norm().total_cmp(&x.norm()));
    Ok(v)
}

/// Eigenvalues of a complex square matrix via the complex Schur form,
/// sorted by descending modulus.
pub fn complex_eigenvalues(a: &DMatrix<Complex64>) -> Result<Vec<Complex64>, NumError> {
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let t = SCHUR_EPS
        .iter()
        .find_map(|eps| a.clone().try_schur(eps * scale, 100_000))
        .ok_or_else(|| NumError::NoConvergence("complex Schur iteration".into()))?
        .unpack()
        .1;
    let mut v: Vec<Complex64> = (0..t.nrows()).map(|i| t[(i, i)]).collect();
    v.sort_by(|x, y| y.norm().total_cmp(&x.norm()));
    Ok(v)
}

/// Eigenvector of a complex matrix for a known simple eigenvalue, by
/// inverse iteration.
pub fn complex_eigenvector(
    a: &DMatrix<Complex64>,
    lambda: Complex64,
) -> Result<DVector<Complex64>, NumError> {
    let n = a.nrows();
    let scale = a.norm().max(1.0);
    let mut shifted = a.clone();
    let shift = lambda + Complex64::new(1e-10 * scale, 0.0);
    for k in 0..n {
        shifted[(k, k)] -= shift;
    }
    let lu = shifted.lu();
    let mut v = DVector::from_element(n, Complex64::new(1.0, 0.3));
    for _ in 0..8 {
        v = lu.solve(&v).ok_or_else(|| NumError::NoConvergence("singular shift".into()))?;
        let nv = v.norm();
        v /= Complex64::new(nv, 0.0);
    }
    let res = (a * &v - &v * lambda).norm();
    if res > 1e-9 * scale {
        return Err(NumError::NoConvergence(format!("inverse iteration residual {res:e}")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_rules() {
        let r = gauss_legendre(1).unwrap();
        assert_eq!(r.nodes, vec![0.5]);
        assert!((r.weights[0] - 1.0).abs() < 1e-15);
        let r = gauss_legendre(2).unwrap();
        let d = 0.5 / 3f64.sqrt();
        assert!((r.nodes[0] - (0.5 - d)).abs() < 1e-15);
        assert!((r.nodes[1] - (0.5 + d)).abs() < 1e-15);
        assert!(r.weights.iter().all(|w| (w - 0.5).abs() < 1e-15));
        let r = gauss_legendre(3).unwrap();
        assert!((r.integrate(|u| u.powi(5)) - 1.0 / 6.0).abs() <= 1e-15);
        assert!(gauss_legendre(0).is_err());
        assert!(gauss_legendre(65).is_err());
    }

    #[test]
    fn quadrature_exactness_all_orders() {
        for n in 1..=64 {
            let r = gauss_legendre(n).unwrap();
            let s: f64 = r.weights.iter().sum();
            assert!((s - 1.0).abs() <= 1e-14, "n={n} sum={s}");
            assert!(r.nodes.iter().all(|&x| x > 0.0 && x < 1.0));
            assert!(r.weights.iter().all(|&w| w > 0.0));
            for k in 0..2 * n {
                let exact = 1.0 / (k as f64 + 1.0);
                let got = r.integrate(|u| u.powi(k as i32));
                assert!((got - exact).abs() <= 1e-13, "n={n} k={k} err={}", got - exact);
            }
        }
    }

    #[test]
    fn spd_examples() {
        let x = solve_spd(&DenseMatrix::identity(3, 3), &DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0, 3.0]);
        let a = DenseMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let x = solve_spd(&a, &DVector::from_vec(vec![2.0, 4.0])).unwrap();
        assert!((x - DVector::from_vec(vec![1.0, 1.0])).norm() < 1e-15);
        let bad = DenseMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(solve_spd(&bad, &DVector::from_vec(vec![1.0, 1.0])), Err(NumError::NotSpd { .. })));
    }

    #[test]
    fn psd_examples() {
        let a = DenseMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let x = lstsq_psd(&a, &DVector::from_vec(vec![3.0, 0.0]));
        assert!((x[0] - 3.0).abs() < 1e-14 && x[1].abs() < 1e-14);
        let b = DVector::from_vec(vec![0.3, -1.2, 4.0]);
        let x = lstsq_psd(&DenseMatrix::identity(3, 3), &b);
        assert!((x - &b).norm() < 1e-14);
        // rank one: A = v v^T, minimizer of min norm is (b.v / |v|^4) v
        let v = DVector::from_vec(vec![1.0, 1.0]);
        let a = &v * v.transpose();
        let b = DVector::from_vec(vec![2.0, 1.0]);
        let x = lstsq_psd(&a, &b);
        let expect = &v * (b.dot(&v) / 4.0);
        assert!((x - expect).norm() < 1e-14);
    }

    #[test]
    fn eigen_examples() {
        let a = DenseMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        let e = real_eigen_small(&a).unwrap();
        assert_eq!(e.len(), 2);
        assert!((e[0].0 - 3.0).abs() < 1e-14 && (e[1].0 - 1.0).abs() < 1e-14);
        let a = DenseMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let e = real_eigen_small(&a).unwrap();
        let mut vals: Vec<f64> = e.iter().map(|p| p.0).collect();
        vals.sort_by(f64::total_cmp);
        assert!((vals[0] + 1.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn complex_eigen_of_rotation() {
        let c = |r: f64, i: f64| Complex64::new(r, i);
        let a = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        let ev = complex_eigenvalues(&a).unwrap();
        assert!(ev.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12 && z.re.abs() < 1e-12));
        let v = complex_eigenvector(&a, ev[0]).unwrap();
        assert!((&a * &v - &v * ev[0]).norm() < 1e-10);
    }

    #[test]
    fn lstsq_fits_line_and_handles_rank_deficiency() {
        let a = DenseMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 3.0, 5.0]);
        let s = lstsq(&a, &b);
        assert!(!s.used_svd);
        assert!((s.x[0] - 1.0).abs() < 1e-14 && (s.x[1] - 2.0).abs() < 1e-14);
        let a = DenseMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let s = lstsq(&a, &DVector::from_vec(vec![2.0, 2.0, 2.0]));
        assert!(s.used_svd);
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn spd_random_residual(m in prop::collection::vec(-1.0f64..1.0, 36),
                               b in prop::collection::vec(-1.0f64..1.0, 6)) {
            let m = DenseMatrix::from_row_slice(6, 6, &m);
            let a = m.transpose() * &m + DenseMatrix::identity(6, 6);
            let b = DVector::from_vec(b);
            let x = solve_spd(&a, &b).unwrap();
            prop_assert!((&a * x - &b).norm() <= 1e-12 * b.norm().max(1e-300));
        }

        #[test]
        fn spd_moderately_conditioned(d in prop::collection::vec(0.0f64..8.0, 5),
                                      q in prop::collection::vec(-1.0f64..1.0, 25),
                                      b in prop::collection::vec(-1.0f64..1.0, 5)) {
            // A = Q diag(10^-d) Q^T with condition <= 1e8
            let qm = DenseMatrix::from_row_slice(5, 5, &q).qr().q();
            let diag = DVector::from_iterator(5, d.iter().map(|&e| 10f64.powf(-e)));
            let a = &qm * DenseMatrix::from_diagonal(&diag) * qm.transpose();
            let a = (&a + a.transpose()) * 0.5;
            let b = DVector::from_vec(b);
            // normwise backward error; rounding x alone costs eps·|A|·|x|
            if let Ok(x) = solve_spd(&a, &b) {
                let scale = a.norm() * x.norm() + b.norm();
                prop_assert!((&a * &x - &b).norm() <= 1e-10 * scale.max(1e-300));
            }
        }

        #[test]
        fn eigen_residuals(m in prop::collection::vec(-1.0f64..1.0, 25)) {
            let m = DenseMatrix::from_row_slice(5, 5, &m);
            let a = &m + m.transpose();
            let pairs = real_eigen_small(&a).unwrap();
            prop_assert_eq!(pairs.len(), 5);
            for w in pairs.windows(2) {
                prop_assert!(w[0].0.abs() >= w[1].0.abs() - 1e-12);
            }
            for (lam, v) in &pairs {
                prop_assert!((&a * v - v * *lam).norm() <= 1e-10 * a.norm() * v.norm());
            }
        }
    }
}
