//! Dense bivariate polynomials in the monomial basis.
//!
//! A [`Poly2`] stores `c[i][j]` for `u^i v^j` with `0 <= i <= du`, `0 <= j <= dv`.
//! The same type is used for polynomials in parameter coordinates `(u, v)` and
//! in physical coordinates `(x, y)`; composition substitutes the two components
//! of a map for the first and second variable.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

pub mod exact;

/// Default relative tolerance used by [`Poly2::trim`].
pub const TRIM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Poly2 {
    du: usize,
    dv: usize,
    c: Vec<f64>,
}

/// Direction of a partial derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dir {
    U,
    V,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PolyError {
    #[error("coefficient matrix has no rows")]
    Empty,
    #[error("coefficient row {row} has length {len}, expected {expected}")]
    Ragged { row: usize, len: usize, expected: usize },
    #[error("coefficient ({i},{j}) is not finite")]
    NonFinite { i: usize, j: usize },
}

impl Poly2 {
    pub fn zero() -> Self {
        Self::with_degree(0, 0)
    }

    /// Zero polynomial with room for bidegree `(du, dv)`.
    pub fn with_degree(du: usize, dv: usize) -> Self {
        Self { du, dv, c: vec![0.0; (du + 1) * (dv + 1)] }
    }

    pub fn constant(a: f64) -> Self {
        Self { du: 0, dv: 0, c: vec![a] }
    }

    /// The first coordinate, `u` (or `x`).
    pub fn u() -> Self {
        Self::monomial(1, 0, 1.0)
    }

    /// The second coordinate, `v` (or `y`).
    pub fn v() -> Self {
        Self::monomial(0, 1, 1.0)
    }

    pub fn monomial(i: usize, j: usize, a: f64) -> Self {
        let mut p = Self::with_degree(i, j);
        p.set(i, j, a);
        p
    }

    /// Builds from a row-major matrix `rows[i][j]` (coefficient of `u^i v^j`).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, PolyError> {
        let first = rows.first().ok_or(PolyError::Empty)?;
        if first.is_empty() {
            return Err(PolyError::Empty);
        }
        let mut p = Self::with_degree(rows.len() - 1, first.len() - 1);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != first.len() {
                return Err(PolyError::Ragged { row: i, len: row.len(), expected: first.len() });
            }
            for (j, &a) in row.iter().enumerate() {
                if !a.is_finite() {
                    return Err(PolyError::NonFinite { i, j });
                }
                p.set(i, j, a);
            }
        }
        Ok(p)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..=self.du).map(|i| (0..=self.dv).map(|j| self.get(i, j)).collect()).collect()
    }

    /// Stored bidegree bound `(du, dv)`.
    pub fn bidegree(&self) -> (usize, usize) {
        (self.du, self.dv)
    }

    /// Coefficient of `u^i v^j`; zero outside the stored range.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i <= self.du && j <= self.dv {
            self.c[i * (self.dv + 1) + j]
        } else {
            0.0
        }
    }

    /// Sets a coefficient, growing the storage if needed.
    pub fn set(&mut self, i: usize, j: usize, a: f64) {
        if i > self.du || j > self.dv {
            self.grow(i.max(self.du), j.max(self.dv));
        }
        let dv = self.dv;
        self.c[i * (dv + 1) + j] = a;
    }

    fn add_at(&mut self, i: usize, j: usize, a: f64) {
        let dv = self.dv;
        self.c[i * (dv + 1) + j] += a;
    }

    fn grow(&mut self, du: usize, dv: usize) {
        let mut q = Self::with_degree(du, dv);
        for i in 0..=self.du {
            for j in 0..=self.dv {
                q.c[i * (dv + 1) + j] = self.get(i, j);
            }
        }
        *self = q;
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..=self.du).flat_map(move |i| (0..=self.dv).map(move |j| (i, j, self.get(i, j))))
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(|&a| a == 0.0)
    }

    /// Horner evaluation in both directions.
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let mut acc = 0.0;
        for i in (0..=self.du).rev() {
            let row = &self.c[i * (self.dv + 1)..(i + 1) * (self.dv + 1)];
            let inner = row.iter().rev().fold(0.0, |s, &a| s * v + a);
            acc = acc * u + inner;
        }
        acc
    }

    /// Removes trailing rows and columns whose entries are all at most
    /// `tol * max|c|` in magnitude. Those entries are also zeroed.
    pub fn trim(&self, tol: f64) -> Self {
        let cut = tol * self.max_abs();
        let small = |a: f64| a.abs() <= cut;
        let mut du = 0;
        let mut dv = 0;
        for (i, j, a) in self.terms() {
            if !small(a) {
                du = du.max(i);
                dv = dv.max(j);
            }
        }
        let mut q = Self::with_degree(du, dv);
        for i in 0..=du {
            for j in 0..=dv {
                let a = self.get(i, j);
                if !small(a) {
                    q.set(i, j, a);
                }
            }
        }
        q
    }

    /// Bidegree after dropping coefficients below `tol * max|c|`.
    pub fn effective_bidegree(&self, tol: f64) -> (usize, usize) {
        self.trim(tol).bidegree()
    }

    /// Largest `i + j` with a coefficient above `tol * max|c|`.
    pub fn total_degree(&self, tol: f64) -> usize {
        let cut = tol * self.max_abs();
        self.terms().filter(|t| t.2.abs() > cut).map(|t| t.0 + t.1).max().unwrap_or(0)
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { du: self.du, dv: self.dv, c: self.c.iter().map(|x| x * a).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut r = Self::with_degree(self.du.max(other.du), self.dv.max(other.dv));
        for (i, j, a) in self.terms().chain(other.terms()) {
            r.add_at(i, j, a);
        }
        r
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut r = Self::with_degree(self.du + other.du, self.dv + other.dv);
        for (i, j, a) in self.terms() {
            if a == 0.0 {
                continue;
            }
            for (k, l, b) in other.terms() {
                r.add_at(i + k, j + l, a * b);
            }
        }
        r
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut r = Self::constant(1.0);
        for _ in 0..n {
            r = r.mul(self);
        }
        r
    }

    /// `self(gx(u,v), gy(u,v))`, expanded.
    pub fn compose(&self, gx: &Self, gy: &Self) -> Self {
        let mut ypow = Vec::with_capacity(self.dv + 1);
        ypow.push(Self::constant(1.0));
        for j in 1..=self.dv {
            let next = ypow[j - 1].mul(gy);
            ypow.push(next);
        }
        let mut acc = Self::zero();
        for i in (0..=self.du).rev() {
            let mut inner = Self::zero();
            for (j, yp) in ypow.iter().enumerate() {
                let a = self.get(i, j);
                if a != 0.0 {
                    inner = inner.add(&yp.scale(a));
                }
            }
            acc = acc.mul(gx).add(&inner);
        }
        acc
    }

    /// Substitutes `u <- a_u + b_u u` and `v <- a_v + b_v v`.
    pub fn affine(&self, a_u: f64, b_u: f64, a_v: f64, b_v: f64) -> Self {
        let tu = affine_matrix(self.du, a_u, b_u);
        let tv = affine_matrix(self.dv, a_v, b_v);
        let mut r = Self::with_degree(self.du, self.dv);
        for (i, j, c) in self.terms() {
            if c == 0.0 {
                continue;
            }
            for (k, &x) in tu[i].iter().enumerate() {
                for (l, &y) in tv[j].iter().enumerate() {
                    r.add_at(k, l, c * x * y);
                }
            }
        }
        r
    }

    /// Restriction to the dyadic cell `[j1, j1+1] x [j2, j2+1] / 2^k`,
    /// re-parameterized over the unit square.
    pub fn reparam_to_cell(&self, j1: u64, j2: u64, k: u32) -> Self {
        let h = 0.5f64.powi(k as i32);
        self.affine(j1 as f64 * h, h, j2 as f64 * h, h)
    }

    /// `self(mu u, mu v)`.
    pub fn scale_args(&self, mu: f64) -> Self {
        self.affine(0.0, mu, 0.0, mu)
    }

    pub fn partial(&self, dir: Dir) -> Self {
        match dir {
            Dir::U => {
                let mut r = Self::with_degree(self.du.saturating_sub(1), self.dv);
                for (i, j, a) in self.terms().filter(|t| t.0 > 0) {
                    r.set(i - 1, j, a * i as f64);
                }
                r
            }
            Dir::V => {
                let mut r = Self::with_degree(self.du, self.dv.saturating_sub(1));
                for (i, j, a) in self.terms().filter(|t| t.1 > 0) {
                    r.set(i, j - 1, a * j as f64);
                }
                r
            }
        }
    }
}

/// Row `i` holds the coefficients of `(a + b t)^i` in powers of `t`.
fn affine_matrix(n: usize, a: f64, b: f64) -> Vec<Vec<f64>> {
    let mut out = vec![vec![1.0]];
    for i in 1..=n {
        let prev = &out[i - 1];
        let mut row = vec![0.0; i + 1];
        for (k, &x) in prev.iter().enumerate() {
            row[k] += a * x;
            row[k + 1] += b * x;
        }
        out.push(row);
    }
    out
}

impl TryFrom<Vec<Vec<f64>>> for Poly2 {
    type Error = PolyError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::from_rows(&rows)
    }
}

impl From<Poly2> for Vec<Vec<f64>> {
    fn from(p: Poly2) -> Self {
        p.rows()
    }
}

impl Add for &Poly2 {
    type Output = Poly2;
    fn add(self, rhs: &Poly2) -> Poly2 {
        Poly2::add(self, rhs)
    }
}

impl Sub for &Poly2 {
    type Output = Poly2;
    fn sub(self, rhs: &Poly2) -> Poly2 {
        Poly2::sub(self, rhs)
    }
}

impl Mul for &Poly2 {
    type Output = Poly2;
    fn mul(self, rhs: &Poly2) -> Poly2 {
        Poly2::mul(self, rhs)
    }
}

impl Neg for &Poly2 {
    type Output = Poly2;
    fn neg(self) -> Poly2 {
        self.scale(-1.0)
    }
}

/// Exponents of a physical monomial `x^alpha y^beta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MonomialIndex {
    pub alpha: u32,
    pub beta: u32,
}

impl MonomialIndex {
    pub fn new(alpha: u32, beta: u32) -> Self {
        Self { alpha, beta }
    }

    pub fn degree(&self) -> u32 {
        self.alpha + self.beta
    }

    pub fn to_poly(&self) -> Poly2 {
        Poly2::monomial(self.alpha as usize, self.beta as usize, 1.0)
    }

    /// All monomials of exact total degree `t`, ordered `x^t, x^{t-1}y, ..., y^t`.
    pub fn of_degree(t: u32) -> Vec<Self> {
        (0..=t).map(|b| Self::new(t - b, b)).collect()
    }
}

impl std::fmt::Display for MonomialIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let part = |name: &str, e: u32| match e {
            0 => String::new(),
            1 => name.to_string(),
            _ => format!("{name}^{e}"),
        };
        let s = format!("{}{}", part("x", self.alpha), part("y", self.beta));
        if s.is_empty() {
            f.write_str("1")
        } else {
            f.write_str(&s)
        }
    }
}

/// Factor `mu^(alpha+beta)` relating `psi(mu x)` and `psi(x)`.
pub fn scale_physical(psi: MonomialIndex, mu: f64) -> f64 {
    mu.powi(psi.degree() as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ex33_x() -> Poly2 {
        // u + u^2 v - u^2 v^2
        Poly2::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, -1.0]]).unwrap()
    }

    fn close(a: &Poly2, b: &Poly2, tol: f64) -> bool {
        let du = a.du.max(b.du);
        let dv = a.dv.max(b.dv);
        let scale = a.max_abs().max(b.max_abs()).max(1.0);
        (0..=du).all(|i| (0..=dv).all(|j| (a.get(i, j) - b.get(i, j)).abs() <= tol * scale))
    }

    #[test]
    fn eval_examples() {
        assert_eq!(Poly2::constant(1.0).eval(0.3, 0.7), 1.0);
        assert_eq!(Poly2::monomial(1, 1, 1.0).eval(2.0, 3.0), 6.0);
        assert_eq!(ex33_x().eval(1.0, 1.0), 1.0);
    }

    #[test]
    fn arithmetic_examples() {
        let uv = &Poly2::u() * &Poly2::v();
        assert_eq!(uv.bidegree(), (1, 1));
        assert_eq!(uv.get(1, 1), 1.0);
        let s = (&Poly2::u() + &Poly2::v()).pow(2);
        assert_eq!((s.get(2, 0), s.get(1, 1), s.get(0, 2), s.get(0, 0)), (1.0, 2.0, 1.0, 0.0));
        let sq = ex33_x().pow(2);
        assert_eq!(sq.get(4, 4), 1.0);
        assert_eq!(sq.effective_bidegree(TRIM_TOL), (4, 4));
    }

    /// Brute-force convolution of coefficient arrays, independent of `mul`.
    fn convolve(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; a[0].len() + b[0].len() - 1]; a.len() + b.len() - 1];
        for (i, ra) in a.iter().enumerate() {
            for (j, x) in ra.iter().enumerate() {
                for (k, rb) in b.iter().enumerate() {
                    for (l, y) in rb.iter().enumerate() {
                        out[i + k][j + l] += x * y;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn square_matches_convolution() {
        let rows = ex33_x().rows();
        let expect = convolve(&rows, &rows);
        assert_eq!(ex33_x().pow(2).rows(), expect);
    }

    #[test]
    fn compose_examples() {
        let gx = ex33_x();
        let gy = Poly2::v();
        assert_eq!(Poly2::u().compose(&gx, &gy).trim(0.0), gx.trim(0.0));
        assert_eq!(Poly2::v().compose(&gx, &gy).trim(0.0), gy);
        let x2 = Poly2::monomial(2, 0, 1.0);
        assert_eq!(x2.compose(&Poly2::u(), &Poly2::v()).trim(0.0), x2);
    }

    #[test]
    fn reparam_examples() {
        let u = Poly2::u();
        assert_eq!(u.reparam_to_cell(0, 0, 1).rows(), vec![vec![0.0], vec![0.5]]);
        assert_eq!(u.reparam_to_cell(1, 0, 1).rows(), vec![vec![0.5], vec![0.5]]);
        let uv = Poly2::monomial(1, 1, 1.0).reparam_to_cell(1, 1, 2);
        // (1+u)(1+v)/16
        assert_eq!(uv.rows(), vec![vec![1.0 / 16.0, 1.0 / 16.0], vec![1.0 / 16.0, 1.0 / 16.0]]);
    }

    #[test]
    fn scale_physical_examples() {
        assert_eq!(scale_physical(MonomialIndex::new(0, 0), 0.37), 1.0);
        assert_eq!(scale_physical(MonomialIndex::new(2, 0), 0.5), 0.25);
        let mu: f64 = 0.549988;
        assert!((scale_physical(MonomialIndex::new(1, 1), mu) - 0.302487).abs() < 1e-6);
    }

    #[test]
    fn derivative_examples() {
        let d = Poly2::monomial(2, 1, 1.0).partial(Dir::U);
        assert_eq!(d.trim(0.0), Poly2::monomial(1, 1, 2.0));
        assert!(Poly2::u().partial(Dir::V).is_zero());
        let d = ex33_x().partial(Dir::U).trim(0.0);
        assert_eq!(d.rows(), vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, -2.0]]);
    }

    #[test]
    fn trim_drops_small_tail() {
        let mut p = Poly2::with_degree(3, 3);
        p.set(1, 1, 1.0);
        p.set(3, 0, 1e-14);
        assert_eq!(p.trim(TRIM_TOL).bidegree(), (1, 1));
        assert_eq!(p.total_degree(TRIM_TOL), 2);
    }

    #[test]
    fn serde_round_trip() {
        let p = ex33_x();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<Poly2>(&s).unwrap(), p);
        assert!(serde_json::from_str::<Poly2>("[[1.0],[1.0,2.0]]").is_err());
        assert!(serde_json::from_str::<Poly2>("[]").is_err());
    }

    fn arb_poly(max_deg: usize) -> impl Strategy<Value = Poly2> {
        (0..=max_deg, 0..=max_deg).prop_flat_map(|(du, dv)| {
            prop::collection::vec(-2.0f64..2.0, (du + 1) * (dv + 1))
                .prop_map(move |c| Poly2 { du, dv, c })
        })
    }

    proptest! {
        #[test]
        fn compose_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0,
                             p1 in arb_poly(3), p2 in arb_poly(3),
                             gx in arb_poly(2), gy in arb_poly(2)) {
            let lhs = p1.scale(a).add(&p2.scale(b)).compose(&gx, &gy);
            let rhs = p1.compose(&gx, &gy).scale(a).add(&p2.compose(&gx, &gy).scale(b));
            prop_assert!(close(&lhs, &rhs, 1e-13));
        }

        #[test]
        fn compose_with_identity_renames(p in arb_poly(4)) {
            let q = p.compose(&Poly2::u(), &Poly2::v());
            prop_assert!(close(&q, &p, 0.0));
        }

        #[test]
        fn dyadic_nesting(p in arb_poly(4), k1 in 0u32..3, k2 in 0u32..3,
                          s in any::<(u64, u64, u64, u64)>()) {
            let (a1, a2) = (s.0 % (1 << k1), s.1 % (1 << k1));
            let (b1, b2) = (s.2 % (1 << k2), s.3 % (1 << k2));
            let twice = p.reparam_to_cell(a1, a2, k1).reparam_to_cell(b1, b2, k2);
            let once = p.reparam_to_cell((a1 << k2) + b1, (a2 << k2) + b2, k1 + k2);
            prop_assert!(close(&twice, &once, 1e-13));
        }

        #[test]
        fn monomial_scaling(alpha in 0u32..6, beta in 0u32..6, mu in 0.05f64..3.0,
                            pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 10)) {
            let m = MonomialIndex::new(alpha, beta);
            let psi = m.to_poly();
            for (x, y) in pts {
                let lhs = psi.eval(mu * x, mu * y);
                let rhs = scale_physical(m, mu) * psi.eval(x, y);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1e-300));
            }
        }

        #[test]
        fn eval_matches_naive(p in arb_poly(5), u in -1.5f64..1.5, v in -1.5f64..1.5) {
            let naive: f64 = p.terms().map(|(i, j, a)| a * u.powi(i as i32) * v.powi(j as i32)).sum();
            prop_assert!((p.eval(u, v) - naive).abs() <= 1e-11 * (1.0 + naive.abs()));
        }

        #[test]
        fn partial_matches_finite_difference(p in arb_poly(4), u in -1.0f64..1.0, v in -1.0f64..1.0) {
            let h = 1e-6;
            let fd = (p.eval(u + h, v) - p.eval(u - h, v)) / (2.0 * h);
            prop_assert!((p.partial(Dir::U).eval(u, v) - fd).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }
}
