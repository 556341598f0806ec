//! Exact rational polynomials, used to audit reproduction degrees of maps
//! whose coefficients are exactly representable.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use super::Poly2;

#[derive(Clone, Debug, PartialEq)]
pub struct QPoly2 {
    du: usize,
    dv: usize,
    c: Vec<BigRational>,
}

impl QPoly2 {
    pub fn with_degree(du: usize, dv: usize) -> Self {
        Self { du, dv, c: vec![BigRational::zero(); (du + 1) * (dv + 1)] }
    }

    pub fn constant(a: BigRational) -> Self {
        Self { du: 0, dv: 0, c: vec![a] }
    }

    /// Converts every coefficient exactly (each finite f64 is a dyadic rational).
    pub fn from_f64(p: &Poly2) -> Self {
        let (du, dv) = p.bidegree();
        let mut q = Self::with_degree(du, dv);
        for (i, j, a) in p.terms() {
            q.c[i * (dv + 1) + j] = BigRational::from_float(a).expect("finite coefficient");
        }
        q
    }

    pub fn bidegree(&self) -> (usize, usize) {
        (self.du, self.dv)
    }

    pub fn get(&self, i: usize, j: usize) -> BigRational {
        if i <= self.du && j <= self.dv {
            self.c[i * (self.dv + 1) + j].clone()
        } else {
            BigRational::zero()
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, usize, &BigRational)> + '_ {
        let dv = self.dv;
        self.c.iter().enumerate().map(move |(k, a)| (k / (dv + 1), k % (dv + 1), a))
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut r = Self::with_degree(self.du.max(o.du), self.dv.max(o.dv));
        let dv = r.dv;
        for (i, j, a) in self.terms().chain(o.terms()) {
            r.c[i * (dv + 1) + j] += a;
        }
        r
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut r = Self::with_degree(self.du + o.du, self.dv + o.dv);
        let dv = r.dv;
        for (i, j, a) in self.terms().filter(|t| !t.2.is_zero()) {
            for (k, l, b) in o.terms().filter(|t| !t.2.is_zero()) {
                r.c[(i + k) * (dv + 1) + j + l] += a * b;
            }
        }
        r
    }

    /// `self(gx, gy)` in exact arithmetic.
    pub fn compose(&self, gx: &Self, gy: &Self) -> Self {
        let mut ypow = vec![Self::constant(BigRational::one())];
        for j in 1..=self.dv {
            let next = ypow[j - 1].mul(gy);
            ypow.push(next);
        }
        let mut acc = Self::constant(BigRational::zero());
        for i in (0..=self.du).rev() {
            let mut inner = Self::constant(BigRational::zero());
            for (j, yp) in ypow.iter().enumerate() {
                let a = self.get(i, j);
                if !a.is_zero() {
                    inner = inner.add(&yp.mul(&Self::constant(a)));
                }
            }
            acc = acc.mul(gx).add(&inner);
        }
        acc
    }

    /// True if every coefficient with `i > p` or `j > p` is exactly zero.
    pub fn in_qp(&self, p: usize) -> bool {
        self.terms().all(|(i, j, a)| (i <= p && j <= p) || a.is_zero())
    }

    pub fn max_abs(&self) -> BigRational {
        self.c.iter().map(|a| a.abs()).max().unwrap_or_else(BigRational::zero)
    }
}

/// Monomial `x^alpha y^beta` as an exact polynomial.
pub fn monomial(alpha: usize, beta: usize) -> QPoly2 {
    let mut q = QPoly2::with_degree(alpha, beta);
    let dv = q.dv;
    q.c[alpha * (dv + 1) + beta] = BigRational::from_integer(BigInt::one());
    q
}
