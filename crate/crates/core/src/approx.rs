//! Best approximation of a target function from a mapped polynomial space,
//! cell by cell, and mesh-level error reports.
//!
//! On a cell with map `G`, the local space is `{b ∘ G⁻¹ : b ∈ Q^p}`. The
//! weighted least-squares problem at the Gauss nodes,
//! `min_c Σ w |det J| (φ(G) - Σ c_k b_k)²`, is the L2 projection with exact
//! quadrature for the Gram matrix. Its residual is the squared error.
//! The local basis is tensor shifted Legendre, which keeps the problem well
//! conditioned at high `p`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::expr::{Expr, ExprError, Jet2};
use crate::geometry::{build_mesh, build_tensor_mesh, cell_map, CapKind, ElementMap, GeometryError, MeshLevel, RingSpec};
use crate::numkernel::{gauss_legendre, lstsq_min_norm, lstsq_psd, solve_spd, NumError, QuadratureRule};
use crate::poly::{MonomialIndex, Poly2, TRIM_TOL};

/// Below this `|det J|` at a quadrature node a non-singular map is rejected.
pub const DET_TOL: f64 = 1e-12;
pub const DEFAULT_LINF_GRID: usize = 33;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ApproxError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Numeric(#[from] NumError),
    #[error("Jacobian determinant {det:e} at parameter ({u}, {v}) of a regular cell")]
    SingularJacobian { u: f64, v: f64, det: f64 },
    #[error("quadrature order {order} below the minimum {min} for p={p}, q={q}")]
    QuadratureTooLow { order: usize, min: usize, p: usize, q: usize },
    #[error("seminorm order {0} not supported (0, 1 or 2)")]
    SeminormOrder(u32),
    #[error("target is not finite at ({x}, {y})")]
    NonFinite { x: f64, y: f64 },
}

/// A function `φ(x, y)` to approximate.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetFunction {
    Monomial(MonomialIndex),
    PhysPolynomial(Poly2),
    /// `cos(x) + sin(y + 1)`
    CosSin,
    /// `sin(x) cos(y + 1)`
    SinCos,
    /// `x² + y²`
    SumSquares,
    Custom(Expr),
}

impl TargetFunction {
    /// Accepts `cossin`, `sincos`, `sumsquares` or any expression in `x, y`.
    /// Polynomial expressions are expanded.
    pub fn parse(s: &str) -> Result<Self, ExprError> {
        match s.trim() {
            "cossin" => return Ok(Self::CosSin),
            "sincos" => return Ok(Self::SinCos),
            "sumsquares" => return Ok(Self::SumSquares),
            _ => {}
        }
        let e = Expr::parse(s)?;
        Ok(match e.to_poly() {
            Some(p) => {
                let terms: Vec<_> = p.terms().filter(|t| t.2 != 0.0).collect();
                match terms[..] {
                    [(a, b, 1.0)] => Self::Monomial(MonomialIndex::new(a as u32, b as u32)),
                    _ => Self::PhysPolynomial(p),
                }
            }
            None => Self::Custom(e),
        })
    }

    pub fn monomial(alpha: u32, beta: u32) -> Self {
        Self::Monomial(MonomialIndex::new(alpha, beta))
    }

    pub fn jet(&self, x: f64, y: f64) -> Jet2 {
        match self {
            Self::Monomial(m) => monomial_jet(m.alpha as i32, m.beta as i32, x, y),
            Self::PhysPolynomial(p) => p
                .terms()
                .filter(|t| t.2 != 0.0)
                .fold(Jet2::constant(0.0), |acc, (i, j, c)| axpy(acc, c, monomial_jet(i as i32, j as i32, x, y))),
            Self::CosSin => {
                let (s, c) = x.sin_cos();
                let (s1, c1) = (y + 1.0).sin_cos();
                Jet2 { v: c + s1, dx: -s, dy: c1, dxx: -c, dxy: 0.0, dyy: -s1 }
            }
            Self::SinCos => {
                let (s, c) = x.sin_cos();
                let (s1, c1) = (y + 1.0).sin_cos();
                Jet2 { v: s * c1, dx: c * c1, dy: -s * s1, dxx: -s * c1, dxy: -c * s1, dyy: -s * c1 }
            }
            Self::SumSquares => Jet2 { v: x * x + y * y, dx: 2.0 * x, dy: 2.0 * y, dxx: 2.0, dxy: 0.0, dyy: 2.0 },
            Self::Custom(e) => e.jet(x, y),
        }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        match self {
            Self::Monomial(m) => x.powi(m.alpha as i32) * y.powi(m.beta as i32),
            Self::PhysPolynomial(p) => p.eval(x, y),
            Self::Custom(e) => e.eval(x, y),
            _ => self.jet(x, y).v,
        }
    }

    /// Total degree when `φ` is a polynomial.
    pub fn poly_degree(&self) -> Option<usize> {
        match self {
            Self::Monomial(m) => Some(m.degree() as usize),
            Self::PhysPolynomial(p) => Some(p.total_degree(TRIM_TOL)),
            Self::SumSquares => Some(2),
            Self::CosSin | Self::SinCos => None,
            Self::Custom(e) => e.to_poly().map(|p| p.total_degree(TRIM_TOL)),
        }
    }
}

impl fmt::Display for TargetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Monomial(m) => {
                let part = |name: &str, e: u32| match e {
                    0 => None,
                    1 => Some(name.to_string()),
                    _ => Some(format!("{name}^{e}")),
                };
                let parts: Vec<_> = [part("x", m.alpha), part("y", m.beta)].into_iter().flatten().collect();
                if parts.is_empty() {
                    f.write_str("1")
                } else {
                    f.write_str(&parts.join("*"))
                }
            }
            Self::PhysPolynomial(p) => {
                let mut first = true;
                for (i, j, c) in p.terms().filter(|t| t.2 != 0.0) {
                    if !first {
                        f.write_str("+")?;
                    }
                    first = false;
                    write!(f, "({c})*x^{i}*y^{j}")?;
                }
                if first {
                    f.write_str("0")?;
                }
                Ok(())
            }
            Self::CosSin => f.write_str("cos(x)+sin(y+1)"),
            Self::SinCos => f.write_str("sin(x)*cos(y+1)"),
            Self::SumSquares => f.write_str("x^2+y^2"),
            Self::Custom(e) => write!(f, "{e}"),
        }
    }
}

fn monomial_jet(a: i32, b: i32, x: f64, y: f64) -> Jet2 {
    let pw = |t: f64, k: i32| if k < 0 { 0.0 } else { t.powi(k) };
    let (fa, fb) = (a as f64, b as f64);
    Jet2 {
        v: pw(x, a) * pw(y, b),
        dx: fa * pw(x, a - 1) * pw(y, b),
        dy: fb * pw(x, a) * pw(y, b - 1),
        dxx: fa * (fa - 1.0) * pw(x, a - 2) * pw(y, b),
        dxy: fa * fb * pw(x, a - 1) * pw(y, b - 1),
        dyy: fb * (fb - 1.0) * pw(x, a) * pw(y, b - 2),
    }
}

fn axpy(acc: Jet2, c: f64, j: Jet2) -> Jet2 {
    Jet2 {
        v: acc.v + c * j.v,
        dx: acc.dx + c * j.dx,
        dy: acc.dy + c * j.dy,
        dxx: acc.dxx + c * j.dxx,
        dxy: acc.dxy + c * j.dxy,
        dyy: acc.dyy + c * j.dyy,
    }
}

/// Gauss points per direction for a cell of bidegree `q`.
///
/// The floor `p + q + 2` integrates the Gram matrix exactly. Polynomial
/// targets of degree `d` also get the `φ ∘ G` cross terms exactly; other
/// targets get a few extra points.
pub fn quadrature_order(phi: &TargetFunction, p: usize, q: usize) -> usize {
    let floor = p + q + 2;
    match phi.poly_degree() {
        Some(d) => floor.max(p.max(d * q) + q + 1),
        None => p + q + 6,
    }
    .min(64)
}

/// Normalized shifted Legendre polynomials on `[0, 1]` with first and second
/// derivatives: `out[i] = [L_i(t), L_i'(t), L_i''(t)]`.
pub fn legendre_table(p: usize, t: f64) -> Vec<[f64; 3]> {
    let s = 2.0 * t - 1.0;
    let mut raw = vec![[0.0; 3]; p + 1];
    raw[0] = [1.0, 0.0, 0.0];
    if p >= 1 {
        raw[1] = [s, 1.0, 0.0];
    }
    for n in 1..p {
        let nf = n as f64;
        let v = ((2.0 * nf + 1.0) * s * raw[n][0] - nf * raw[n - 1][0]) / (nf + 1.0);
        let d = raw[n - 1][1] + (2.0 * nf + 1.0) * raw[n][0];
        let dd = raw[n - 1][2] + (2.0 * nf + 1.0) * raw[n][1];
        raw[n + 1] = [v, d, dd];
    }
    raw.iter()
        .enumerate()
        .map(|(i, r)| {
            let c = (2.0 * i as f64 + 1.0).sqrt();
            [c * r[0], 2.0 * c * r[1], 4.0 * c * r[2]]
        })
        .collect()
}

/// Tensor Legendre basis of `Q^p` tabulated at the nodes of a square
/// Gauss rule. Node `(a, b)` is row `a * m + b`; basis `L_i(u) L_j(v)` is
/// column `i * (p + 1) + j`.
#[derive(Clone, Debug)]
pub struct CellBasis {
    pub p: usize,
    pub rule: QuadratureRule,
    pub val: DMatrix<f64>,
    /// `[∂u, ∂v]`
    pub grad: [DMatrix<f64>; 2],
    /// `[∂uu, ∂uv, ∂vv]`
    pub hess: [DMatrix<f64>; 3],
}

impl CellBasis {
    pub fn new(p: usize, order: usize) -> Result<Self, ApproxError> {
        let rule = gauss_legendre(order)?;
        let m = rule.order();
        let nb = (p + 1) * (p + 1);
        let tabs: Vec<_> = rule.nodes.iter().map(|&t| legendre_table(p, t)).collect();
        let mk = |du: usize, dv: usize| {
            DMatrix::from_fn(m * m, nb, |row, col| {
                let (a, b) = (row / m, row % m);
                let (i, j) = (col / (p + 1), col % (p + 1));
                tabs[a][i][du] * tabs[b][j][dv]
            })
        };
        Ok(Self {
            p,
            val: mk(0, 0),
            grad: [mk(1, 0), mk(0, 1)],
            hess: [mk(2, 0), mk(1, 1), mk(0, 2)],
            rule,
        })
    }

    fn nodes(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let r = &self.rule;
        r.nodes.iter().zip(&r.weights).flat_map(move |(&u, &wu)| {
            r.nodes.iter().zip(&r.weights).map(move |(&v, &wv)| (u, v, wu * wv))
        })
    }

    /// Weighted L2 projection onto the mapped space on one cell.
    pub fn project(&self, phi: &TargetFunction, g: &ElementMap) -> Result<CellFit, ApproxError> {
        let d = g.derivatives();
        let nq = self.val.nrows();
        let mut sw = DVector::zeros(nq);
        let mut f = DVector::zeros(nq);
        for (row, (u, v, w)) in self.nodes().enumerate() {
            let det = d.jacobian(u, v).det;
            if !g.allow_singular && det.abs() < DET_TOL {
                return Err(ApproxError::SingularJacobian { u, v, det });
            }
            let [x, y] = g.eval(u, v);
            let val = phi.value(x, y);
            if !val.is_finite() {
                return Err(ApproxError::NonFinite { x, y });
            }
            sw[row] = (w * det.abs()).sqrt();
            f[row] = sw[row] * val;
        }
        let a = DMatrix::from_fn(nq, self.val.ncols(), |r, c| sw[r] * self.val[(r, c)]);
        let (coeffs, sq_error, used_svd) = weighted_lstsq(a, f);
        Ok(CellFit { p: self.p, coeffs, sq_error, used_svd })
    }

    /// Same projection through the normal equations `M c = b`, error
    /// `∫φ² - cᵀb`. Loses accuracy when the error is tiny relative to `φ`.
    pub fn project_gram(&self, phi: &TargetFunction, g: &ElementMap) -> Result<CellFit, ApproxError> {
        let d = g.derivatives();
        let nq = self.val.nrows();
        let mut sw = DVector::zeros(nq);
        let mut f = DVector::zeros(nq);
        for (row, (u, v, w)) in self.nodes().enumerate() {
            let det = d.jacobian(u, v).det;
            if !g.allow_singular && det.abs() < DET_TOL {
                return Err(ApproxError::SingularJacobian { u, v, det });
            }
            let [x, y] = g.eval(u, v);
            sw[row] = (w * det.abs()).sqrt();
            f[row] = sw[row] * phi.value(x, y);
        }
        let a = DMatrix::from_fn(nq, self.val.ncols(), |r, c| sw[r] * self.val[(r, c)]);
        let m = a.transpose() * &a;
        let b = a.transpose() * &f;
        let (coeffs, used_svd) = match solve_spd(&m, &b) {
            Ok(c) => (c, false),
            Err(_) => {
                log::warn!("Gram matrix not numerically SPD; using a pseudo-inverse");
                (lstsq_psd(&m, &b), true)
            }
        };
        let sq_error = (f.norm_squared() - coeffs.dot(&b)).max(0.0);
        Ok(CellFit { p: self.p, coeffs, sq_error, used_svd })
    }

    /// Squared best-approximation error in the `H^r` seminorm, `r ∈ {0,1,2}`.
    /// For `r = 2` the mixed derivative is counted once.
    pub fn seminorm_error(&self, phi: &TargetFunction, g: &ElementMap, r: u32) -> Result<f64, ApproxError> {
        match r {
            0 => return Ok(self.project(phi, g)?.sq_error),
            1 | 2 => {}
            _ => return Err(ApproxError::SeminormOrder(r)),
        }
        let d = g.derivatives();
        let nb = self.val.ncols();
        let comps = if r == 1 { 2 } else { 3 };
        let nq = self.val.nrows();
        let mut a = DMatrix::zeros(nq * comps, nb);
        let mut f = DVector::zeros(nq * comps);
        for (row, (u, v, w)) in self.nodes().enumerate() {
            let jac = d.jacobian(u, v);
            if !g.allow_singular && jac.det.abs() < DET_TOL {
                return Err(ApproxError::SingularJacobian { u, v, det: jac.det });
            }
            let [x, y] = g.eval(u, v);
            let t = phi.jet(x, y);
            if !t.v.is_finite() {
                return Err(ApproxError::NonFinite { x, y });
            }
            let s = (w * jac.det.abs()).sqrt();
            // Inverse Jacobian: rows are ∇_x u and ∇_x v.
            let [[xu, xv], [yu, yv]] = jac.m;
            let inv = [[yv / jac.det, -xv / jac.det], [-yu / jac.det, xu / jac.det]];
            let grad_x = |bu: f64, bv: f64| [inv[0][0] * bu + inv[1][0] * bv, inv[0][1] * bu + inv[1][1] * bv];
            if r == 1 {
                for c in 0..nb {
                    let gx = grad_x(self.grad[0][(row, c)], self.grad[1][(row, c)]);
                    a[(comps * row, c)] = s * gx[0];
                    a[(comps * row + 1, c)] = s * gx[1];
                }
                f[comps * row] = s * t.dx;
                f[comps * row + 1] = s * t.dy;
            } else {
                let hg = d.hessians(u, v);
                for c in 0..nb {
                    let gx = grad_x(self.grad[0][(row, c)], self.grad[1][(row, c)]);
                    let (buu, buv, bvv) = (self.hess[0][(row, c)], self.hess[1][(row, c)], self.hess[2][(row, c)]);
                    let hu = [
                        [buu - gx[0] * hg[0][0][0] - gx[1] * hg[1][0][0], buv - gx[0] * hg[0][0][1] - gx[1] * hg[1][0][1]],
                        [0.0, bvv - gx[0] * hg[0][1][1] - gx[1] * hg[1][1][1]],
                    ];
                    // H_x = inv · H_u · invᵀ where inv maps ∂u-coordinates to x.
                    let mut hx = [[0.0; 2]; 2];
                    for (k, hk) in hx.iter_mut().enumerate() {
                        for (l, hkl) in hk.iter_mut().enumerate() {
                            let mut acc = 0.0;
                            for i in 0..2 {
                                for j in 0..2 {
                                    let hij = if i <= j { hu[i][j] } else { hu[j][i] };
                                    acc += inv[i][k] * hij * inv[j][l];
                                }
                            }
                            *hkl = acc;
                        }
                    }
                    a[(comps * row, c)] = s * hx[0][0];
                    a[(comps * row + 1, c)] = s * hx[0][1];
                    a[(comps * row + 2, c)] = s * hx[1][1];
                }
                f[comps * row] = s * t.dxx;
                f[comps * row + 1] = s * t.dxy;
                f[comps * row + 2] = s * t.dyy;
            }
        }
        let c = lstsq_min_norm(&a, &f);
        Ok((f - a * c).norm_squared())
    }
}

/// Result of a cell projection.
#[derive(Clone, Debug)]
pub struct CellFit {
    pub p: usize,
    /// Coefficients in the tensor Legendre basis.
    pub coeffs: DVector<f64>,
    pub sq_error: f64,
    pub used_svd: bool,
}

impl CellFit {
    /// `φ_h ∘ G` at parameter `(u, v)`.
    pub fn eval_param(&self, u: f64, v: f64) -> f64 {
        let lu = legendre_table(self.p, u);
        let lv = legendre_table(self.p, v);
        let mut s = 0.0;
        for (i, a) in lu.iter().enumerate() {
            for (j, b) in lv.iter().enumerate() {
                s += self.coeffs[i * (self.p + 1) + j] * a[0] * b[0];
            }
        }
        s
    }
}

/// QR least squares returning `(x, ‖b - A x‖², used_svd)`. The residual is
/// read off the trailing part of `Qᵀb`.
fn weighted_lstsq(a: DMatrix<f64>, b: DVector<f64>) -> (DVector<f64>, f64, bool) {
    let (m, n) = a.shape();
    if m >= n {
        let qr = a.clone().qr();
        let r = qr.r();
        let diag: Vec<f64> = (0..n).map(|i| r[(i, i)].abs()).collect();
        let rmax = diag.iter().copied().fold(0.0, f64::max);
        let rmin = diag.iter().copied().fold(f64::INFINITY, f64::min);
        if rmax > 0.0 && rmin > 1e-12 * rmax {
            let mut qtb = b.clone();
            qr.q_tr_mul(&mut qtb);
            let res = qtb.rows(n, m - n).norm_squared();
            let mut x = qtb.rows(0, n).into_owned();
            if r.solve_upper_triangular_mut(&mut x) {
                return (x, res, false);
            }
        }
    }
    let x = lstsq_min_norm(&a, &b);
    let res = (&b - &a * &x).norm_squared();
    (x, res, true)
}

/// Projection of `φ` on one cell with an explicit rule order.
pub fn project_l2_cell(phi: &TargetFunction, g: &ElementMap, p: usize, order: usize) -> Result<CellFit, ApproxError> {
    CellBasis::new(p, order)?.project(phi, g)
}

/// Normal-equation variant of [`project_l2_cell`].
pub fn project_l2_cell_gram(
    phi: &TargetFunction,
    g: &ElementMap,
    p: usize,
    order: usize,
) -> Result<CellFit, ApproxError> {
    CellBasis::new(p, order)?.project_gram(phi, g)
}

/// Squared `H^r` seminorm best-approximation error on one cell.
pub fn best_error_seminorm(
    phi: &TargetFunction,
    g: &ElementMap,
    p: usize,
    r: u32,
    order: usize,
) -> Result<f64, ApproxError> {
    CellBasis::new(p, order)?.seminorm_error(phi, g, r)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorOptions {
    /// Seminorm order; 0 is the L2 norm.
    pub r: u32,
    /// Restrict to the ring's sector elements and their cap pieces.
    pub sector_only: bool,
    /// Points per direction; defaults to [`quadrature_order`].
    pub quad_order: Option<usize>,
    /// Grid size for the sampled max-norm error (L2 projection only).
    pub linf_grid: Option<usize>,
}

/// Errors on one mesh level. Norms, not squares.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorReport {
    pub level: u32,
    pub r: u32,
    /// Error over ring `i`, for `i = 0..=level`.
    pub ring_errors: Vec<f64>,
    pub cap_error: Option<f64>,
    pub total: f64,
    pub ring_linf: Option<Vec<f64>>,
    pub cap_linf: Option<f64>,
    /// Max over all sampled points.
    pub linf_proxy: Option<f64>,
    pub cells: usize,
    pub svd_fallbacks: usize,
}

struct CellOutcome {
    sq: f64,
    linf: f64,
    svd: bool,
}

fn cell_outcome(
    phi: &TargetFunction,
    g: &ElementMap,
    basis: &CellBasis,
    opts: &ErrorOptions,
) -> Result<CellOutcome, ApproxError> {
    if opts.r > 0 {
        let sq = basis.seminorm_error(phi, g, opts.r)?;
        return Ok(CellOutcome { sq, linf: 0.0, svd: false });
    }
    let fit = basis.project(phi, g)?;
    let linf = match opts.linf_grid {
        Some(n) => sampled_max_error(phi, g, &fit, n),
        None => 0.0,
    };
    Ok(CellOutcome { sq: fit.sq_error, linf, svd: fit.used_svd })
}

fn sampled_max_error(phi: &TargetFunction, g: &ElementMap, fit: &CellFit, n: usize) -> f64 {
    let n = n.max(2);
    let ts: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let tabs: Vec<_> = ts.iter().map(|&t| legendre_table(fit.p, t)).collect();
    let p1 = fit.p + 1;
    let mut worst: f64 = 0.0;
    for (a, &u) in ts.iter().enumerate() {
        for (b, &v) in ts.iter().enumerate() {
            let [x, y] = g.eval(u, v);
            let mut s = 0.0;
            for i in 0..p1 {
                for j in 0..p1 {
                    s += fit.coeffs[i * p1 + j] * tabs[a][i][0] * tabs[b][j][0];
                }
            }
            worst = worst.max((phi.value(x, y) - s).abs());
        }
    }
    worst
}

fn basis_for(
    cache: &mut BTreeMap<usize, CellBasis>,
    phi: &TargetFunction,
    p: usize,
    q: usize,
    opts: &ErrorOptions,
) -> Result<(), ApproxError> {
    if cache.contains_key(&q) {
        return Ok(());
    }
    let min = p + q + 2;
    let order = match opts.quad_order {
        Some(o) if o < min => return Err(ApproxError::QuadratureTooLow { order: o, min, p, q }),
        Some(o) => o,
        None => quadrature_order(phi, p, q),
    };
    cache.insert(q, CellBasis::new(p, order)?);
    Ok(())
}

/// Best-approximation error of `φ` from the level's mapped `Q^p` space.
///
/// Cells are processed in parallel; per-ring sums run in mesh order, so the
/// result does not depend on the thread count.
pub fn mesh_error(
    phi: &TargetFunction,
    mesh: &MeshLevel,
    p: usize,
    opts: &ErrorOptions,
) -> Result<ErrorReport, ApproxError> {
    if opts.r > 2 {
        return Err(ApproxError::SeminormOrder(opts.r));
    }
    let cells: Vec<_> = mesh.cells.iter().filter(|c| !opts.sector_only || mesh.ring.in_sector(c.n)).collect();
    let caps: Vec<_> = mesh
        .cap
        .maps
        .iter()
        .zip(&mesh.cap.owners)
        .filter(|(_, owners)| !opts.sector_only || owners.iter().any(|&n| mesh.ring.in_sector(n)))
        .map(|(m, _)| m)
        .collect();

    let mut cache = BTreeMap::new();
    for g in mesh.ring.elements.iter().chain(caps.iter().copied()) {
        basis_for(&mut cache, phi, p, g.q, opts)?;
    }

    let ring_out: Vec<CellOutcome> = cells
        .par_iter()
        .map(|c| {
            let g = cell_map(mesh, c)?;
            cell_outcome(phi, &g, &cache[&g.q], opts)
        })
        .collect::<Result<_, _>>()?;
    let cap_out: Vec<CellOutcome> =
        caps.par_iter().map(|g| cell_outcome(phi, g, &cache[&g.q], opts)).collect::<Result<_, _>>()?;

    let nr = mesh.level as usize + 1;
    let mut ring_sq = vec![0.0; nr];
    let mut ring_linf = vec![0.0f64; nr];
    for (c, o) in cells.iter().zip(&ring_out) {
        ring_sq[c.i as usize] += o.sq;
        ring_linf[c.i as usize] = ring_linf[c.i as usize].max(o.linf);
    }
    let has_cap = mesh.cap.kind != CapKind::Excluded && !caps.is_empty();
    let cap_sq: f64 = cap_out.iter().map(|o| o.sq).sum();
    let cap_linf = cap_out.iter().map(|o| o.linf).fold(0.0, f64::max);
    let total_sq = ring_sq.iter().sum::<f64>() + cap_sq;
    let with_linf = opts.r == 0 && opts.linf_grid.is_some();
    let svd_fallbacks = ring_out.iter().chain(&cap_out).filter(|o| o.svd).count();
    if svd_fallbacks > 0 {
        log::warn!("level {}: {svd_fallbacks} cells needed the SVD fallback", mesh.level);
    }
    Ok(ErrorReport {
        level: mesh.level,
        r: opts.r,
        ring_errors: ring_sq.iter().map(|s| s.sqrt()).collect(),
        cap_error: has_cap.then(|| cap_sq.sqrt()),
        total: total_sq.sqrt(),
        linf_proxy: with_linf.then(|| ring_linf.iter().copied().fold(cap_linf, f64::max)),
        ring_linf: with_linf.then_some(ring_linf),
        cap_linf: (with_linf && has_cap).then_some(cap_linf),
        cells: cells.len() + caps.len(),
        svd_fallbacks,
    })
}

/// Sampled max-norm error of the L2 projection on a `grid × grid` lattice
/// per cell.
pub fn linf_proxy(
    phi: &TargetFunction,
    mesh: &MeshLevel,
    p: usize,
    quad_order: Option<usize>,
    grid: usize,
) -> Result<f64, ApproxError> {
    let opts = ErrorOptions { quad_order, linf_grid: Some(grid), ..Default::default() };
    Ok(mesh_error(phi, mesh, p, &opts)?.linf_proxy.unwrap_or(0.0))
}

/// Where the meshes of a convergence sweep come from.
#[derive(Clone, Debug)]
pub enum MeshSource {
    Ring { ring: RingSpec, cap: CapKind },
    /// Uniform refinement of one global map.
    Tensor(ElementMap),
}

impl MeshSource {
    pub fn mesh(&self, level: u32) -> Result<MeshLevel, GeometryError> {
        match self {
            Self::Ring { ring, cap } => build_mesh(ring, level, *cap),
            Self::Tensor(g) => Ok(build_tensor_mesh(g, level)),
        }
    }
}

/// Error reports for levels `0..=max_level`.
pub fn convergence(
    phi: &TargetFunction,
    source: &MeshSource,
    p: usize,
    max_level: u32,
    opts: &ErrorOptions,
) -> Result<Vec<ErrorReport>, ApproxError> {
    (0..=max_level).map(|l| mesh_error(phi, &source.mesh(l)?, p, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_sb1, make_sb2, sb1_global};
    use crate::numkernel::gauss_legendre;
    use crate::reproduction::min_reproduction_degree;
    use crate::subdivision::{characteristic_ring, Scheme, SchemeId};
    use proptest::prelude::*;

    fn sb1_source() -> MeshSource {
        let (_, ring) = make_sb1();
        let cap = ring.default_cap();
        MeshSource::Ring { ring, cap }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn legendre_is_orthonormal() {
        let rule = gauss_legendre(10).unwrap();
        let tabs: Vec<_> = rule.nodes.iter().map(|&t| legendre_table(6, t)).collect();
        for i in 0..=6 {
            for j in 0..=6 {
                let s: f64 = tabs.iter().zip(&rule.weights).map(|(t, w)| w * t[i][0] * t[j][0]).sum();
                assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-13);
            }
        }
        let h = 1e-5;
        for t in [0.1, 0.45, 0.9] {
            let (a, b, c) = (legendre_table(5, t - h), legendre_table(5, t), legendre_table(5, t + h));
            for i in 0..=5 {
                assert!(((c[i][0] - a[i][0]) / (2.0 * h) - b[i][1]).abs() < 1e-6 * (1.0 + b[i][1].abs()));
                assert!(((c[i][1] - a[i][1]) / (2.0 * h) - b[i][2]).abs() < 1e-5 * (1.0 + b[i][2].abs()));
            }
        }
    }

    #[test]
    fn target_parsing() {
        assert_eq!(TargetFunction::parse("x^2").unwrap(), TargetFunction::monomial(2, 0));
        assert_eq!(TargetFunction::parse("x*y").unwrap(), TargetFunction::monomial(1, 1));
        assert!(matches!(TargetFunction::parse("x^2+y^2").unwrap(), TargetFunction::PhysPolynomial(_)));
        assert_eq!(TargetFunction::parse("cossin").unwrap(), TargetFunction::CosSin);
        assert!(matches!(TargetFunction::parse("exp(x)").unwrap(), TargetFunction::Custom(_)));
        assert_eq!(TargetFunction::parse("x^3*y").unwrap().poly_degree(), Some(4));
        assert_eq!(TargetFunction::CosSin.poly_degree(), None);
        for m in [(0, 0), (1, 0), (2, 1), (0, 3)] {
            let t = TargetFunction::monomial(m.0, m.1);
            let back = TargetFunction::parse(&t.to_string()).unwrap();
            assert_eq!(back.value(0.7, 1.3), t.value(0.7, 1.3));
        }
        for t in [TargetFunction::CosSin, TargetFunction::SinCos, TargetFunction::SumSquares] {
            let e = TargetFunction::parse(&t.to_string()).unwrap();
            for (x, y) in [(0.3, -0.2), (1.1, 0.7)] {
                let (a, b) = (t.jet(x, y), e.jet(x, y));
                for (s, u) in [(a.v, b.v), (a.dx, b.dx), (a.dy, b.dy), (a.dxx, b.dxx), (a.dxy, b.dxy), (a.dyy, b.dyy)] {
                    assert!((s - u).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn exact_on_identity_cell() {
        // x^a y^b with a, b ≤ p lies in Q^p on an affine cell.
        let g = ElementMap::identity().affine(0.5, 0.2, 0.25, -0.1);
        for p in 1..=4 {
            for a in 0..=p as u32 {
                let fit = project_l2_cell(&TargetFunction::monomial(a, p as u32 - a), &g, p, p + 4).unwrap();
                assert!(fit.sq_error < 1e-28, "{}", fit.sq_error);
            }
        }
    }

    #[test]
    fn qr_and_gram_agree() {
        let g = &make_sb1().1.elements[0];
        for phi in [TargetFunction::monomial(2, 0), TargetFunction::CosSin] {
            for p in 1..=3 {
                let o = quadrature_order(&phi, p, g.q);
                let a = project_l2_cell(&phi, g, p, o).unwrap();
                let b = project_l2_cell_gram(&phi, g, p, o).unwrap();
                assert!(rel(a.sq_error, b.sq_error) < 1e-6, "{} {}", a.sq_error, b.sq_error);
                assert!((a.coeffs - b.coeffs).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn residual_matches_direct_quadrature() {
        let g = &make_sb1().1.elements[1];
        let phi = TargetFunction::SinCos;
        let o = quadrature_order(&phi, 2, g.q);
        let fit = project_l2_cell(&phi, g, 2, o).unwrap();
        let rule = gauss_legendre(o).unwrap();
        let mut s = 0.0;
        for (&u, &wu) in rule.nodes.iter().zip(&rule.weights) {
            for (&v, &wv) in rule.nodes.iter().zip(&rule.weights) {
                let [x, y] = g.eval(u, v);
                let e = phi.value(x, y) - fit.eval_param(u, v);
                s += wu * wv * g.jacobian(u, v).det.abs() * e * e;
            }
        }
        assert!(rel(fit.sq_error, s) < 1e-9);
    }

    #[test]
    fn singular_cells_are_rejected_unless_allowed() {
        let collapsed = ElementMap::new(Poly2::u(), Poly2::constant(0.0));
        let err = project_l2_cell(&TargetFunction::CosSin, &collapsed, 1, 4).unwrap_err();
        assert!(matches!(err, ApproxError::SingularJacobian { .. }));
        let ok = project_l2_cell(&TargetFunction::CosSin, &collapsed.singular(true), 1, 4).unwrap();
        assert_eq!(ok.sq_error, 0.0);
    }

    #[test]
    fn quadrature_floor_is_enforced() {
        let mesh = sb1_source().mesh(0).unwrap();
        let opts = ErrorOptions { quad_order: Some(3), ..Default::default() };
        let e = mesh_error(&TargetFunction::CosSin, &mesh, 2, &opts).unwrap_err();
        let q = mesh.ring.elements[0].q;
        assert_eq!(e, ApproxError::QuadratureTooLow { order: 3, min: q + 4, p: 2, q });
    }

    #[test]
    fn sb1_level_zero() {
        let r = mesh_error(&TargetFunction::monomial(2, 0), &sb1_source().mesh(0).unwrap(), 2, &Default::default()).unwrap();
        assert!((r.total.log2() + 8.04491).abs() < 5e-5, "{}", r.total.log2());
        assert_eq!(r.ring_errors.len(), 1);
        assert!(r.cap_error.is_some());
        let r = mesh_error(&TargetFunction::CosSin, &sb1_source().mesh(1).unwrap(), 3, &Default::default()).unwrap();
        assert!((r.total.log2() + 14.5615).abs() < 5e-4, "{}", r.total.log2());
    }

    #[test]
    fn sb2_linear_target() {
        let (_, ring) = make_sb2();
        let src = MeshSource::Ring { cap: ring.default_cap(), ring };
        let r = convergence(&TargetFunction::monomial(1, 0), &src, 2, 1, &Default::default()).unwrap();
        assert!(rel(r[0].total, 0.00320709) < 1e-4, "{}", r[0].total);
        assert!(rel(r[1].total, 0.00082104) < 1e-4, "{}", r[1].total);
    }

    #[test]
    fn catmull_clark_sector() {
        let cc3 = characteristic_ring(SchemeId::new(Scheme::CatmullClark, 3)).unwrap();
        let ring = cc3.ring_spec(true);
        let mesh = build_mesh(&ring, 0, CapKind::CoonsPatch).unwrap();
        let opts = ErrorOptions { sector_only: true, ..Default::default() };
        let r = mesh_error(&TargetFunction::SumSquares, &mesh, 3, &opts).unwrap();
        assert!((r.total.log2() + 14.4090).abs() < 5e-4, "{}", r.total.log2());
        assert_eq!(r.cells, 4);
    }

    #[test]
    fn linf_and_thread_independence() {
        let mesh = sb1_source().mesh(2).unwrap();
        let opts = ErrorOptions { linf_grid: Some(9), ..Default::default() };
        let a = mesh_error(&TargetFunction::CosSin, &mesh, 2, &opts).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| mesh_error(&TargetFunction::CosSin, &mesh, 2, &opts).unwrap());
        assert_eq!(a, b);
        let linf = a.linf_proxy.unwrap();
        assert!(linf > 0.0 && linf.is_finite());
        let area: f64 = 1.0;
        assert!(a.total <= linf * area.sqrt() * 2.0);
    }

    #[test]
    fn seminorm_orders() {
        let g = ElementMap::identity().affine(0.3, 0.1, 0.3, 0.2);
        // Exact members have zero error in every seminorm.
        for r in 0..=2 {
            let e = best_error_seminorm(&TargetFunction::monomial(1, 2), &g, 2, r, 6).unwrap();
            assert!(e < 1e-24, "r={r}: {e}");
        }
        assert!(matches!(best_error_seminorm(&TargetFunction::CosSin, &g, 2, 3, 6), Err(ApproxError::SeminormOrder(3))));
        // x² from Q¹ on the unit square: the best gradient fit leaves 2x - 1.
        let e1 = best_error_seminorm(&TargetFunction::monomial(2, 0), &ElementMap::identity(), 1, 1, 6).unwrap();
        assert!((e1 - 1.0 / 3.0).abs() < 1e-12, "{e1}");
        let e2 = best_error_seminorm(&TargetFunction::monomial(2, 0), &ElementMap::identity(), 1, 2, 6).unwrap();
        assert!((e2 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn hessian_chain_rule_on_curved_map() {
        // If φ ∘ G ∈ Q^p the seminorm errors vanish for every r.
        let g = &make_sb1().1.elements[0];
        let k = min_reproduction_degree(std::slice::from_ref(g), 4);
        assert_eq!(k, 2);
        for r in 0..=2 {
            let e = best_error_seminorm(&TargetFunction::monomial(1, 1), g, 4, r, 12).unwrap();
            assert!(e < 1e-20, "r={r}: {e}");
        }
        let e = best_error_seminorm(&TargetFunction::monomial(3, 0), g, 4, 2, 12).unwrap();
        assert!(e > 1e-10);
    }

    #[test]
    fn tensor_source() {
        let src = MeshSource::Tensor(sb1_global());
        let m = src.mesh(1).unwrap();
        assert_eq!(m.cells.len(), 16);
        let r = mesh_error(&TargetFunction::CosSin, &m, 2, &Default::default()).unwrap();
        assert!(r.cap_error.is_none());
        assert!(r.total > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn ring_scaling(level in 1u32..3, p in 2usize..4, which in 0usize..3) {
            let (_, ring) = make_sb1();
            let kappa0 = min_reproduction_degree(&ring.elements, p) as u32;
            let m = crate::reproduction::maximizing_monomials(kappa0)[which.min(kappa0 as usize + 1)];
            let phi = TargetFunction::Monomial(m);
            let lam = ring.lambda;
            let fine = mesh_error(&phi, &build_mesh(&ring, level, CapKind::Excluded).unwrap(), p, &Default::default()).unwrap();
            for i in 1..=level {
                let coarse = mesh_error(&phi, &build_mesh(&ring, level - i, CapKind::Excluded).unwrap(), p, &Default::default()).unwrap();
                let expect = lam.powi((i * (kappa0 + 2)) as i32) * coarse.ring_errors[0];
                prop_assert!(rel(fine.ring_errors[i as usize], expect) < 1e-8);
            }
        }

        #[test]
        fn nonnegative_and_monotone_in_p(which in 0usize..4, level in 0u32..2) {
            let phi = [TargetFunction::CosSin, TargetFunction::SinCos, TargetFunction::monomial(3, 1),
                       TargetFunction::SumSquares][which].clone();
            let mesh = sb1_source().mesh(level).unwrap();
            let mut last = f64::INFINITY;
            for p in 1..=5 {
                let r = mesh_error(&phi, &mesh, p, &Default::default()).unwrap();
                prop_assert!(r.total >= 0.0);
                prop_assert!(r.total <= last * (1.0 + 1e-9) + 1e-15);
                last = r.total;
            }
        }

        #[test]
        fn quadrature_robust_for_polynomials(a in 0u32..4, b in 0u32..4, p in 1usize..4, extra in 1usize..4) {
            let phi = TargetFunction::monomial(a, b);
            let mesh = sb1_source().mesh(1).unwrap();
            let base = mesh_error(&phi, &mesh, p, &Default::default()).unwrap();
            let o = quadrature_order(&phi, p, 3) + extra;
            let more = mesh_error(&phi, &mesh, p, &ErrorOptions { quad_order: Some(o), ..Default::default() }).unwrap();
            let scale = (base.total * base.total).max(1e-300);
            prop_assert!((base.total.powi(2) - more.total.powi(2)).abs() <= 1e-10 * scale + 1e-28);
        }

        #[test]
        fn seminorm_scaling(mu in 0.05f64..1.0, r in 0u32..3, which in 0usize..2) {
            let g = make_sb1().1.elements[which].clone();
            let phi = TargetFunction::monomial(3, 0);
            // φ(x / μ) on μG has the same pulled-back problem as φ on G.
            let scaled = TargetFunction::PhysPolynomial(Poly2::monomial(3, 0, mu.powi(-3)));
            let e = best_error_seminorm(&phi, &g, 2, r, 10).unwrap().sqrt();
            let es = best_error_seminorm(&scaled, &g.scale(mu), 2, r, 10).unwrap().sqrt();
            prop_assert!(rel(es, mu.powi(1 - r as i32) * e) < 1e-7, "{} {}", es, e);
        }
    }
}
