//! Observed convergence rates and the rates predicted by ring scaling.
//!
//! With `d` the lowest degree that the mapped spaces fail to reproduce
//! (`κ₀ + 1` for a generic target), the error on ring `i` of level ℓ scales
//! like `A^i` with `A = λ^{d+1-r}`, while uniform refinement of a fixed ring
//! gives `B = 2^{-(p+1-r)}` per level. The total behaves like `max(A, B)^ℓ`,
//! with an extra `√(ℓ+1)` when the two coincide.

use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::reproduction::min_reproduction_degree;
use crate::subdivision::{characteristic_ring, Scheme, SchemeId, SubdivisionError};

/// Tolerance on `|A - B|` for the borderline case.
pub const CASE_TOL: f64 = 1e-12;
/// Number of trailing levels in the asymptotic fit.
pub const TAIL_POINTS: usize = 3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RateError {
    #[error("need at least two errors, got {0}")]
    TooFew(usize),
    #[error("rate base must be positive and different from 1, got {0}")]
    Base(f64),
    #[error("seminorm order {r} exceeds the failing degree {d}")]
    SeminormOrder { r: u32, d: u32 },
    #[error("lambda must lie in ]0,1[, got {0}")]
    Lambda(f64),
}

/// Per-step and asymptotic rates of an error sequence `e_0, e_1, ...`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateReport {
    pub base: f64,
    /// `ρ_ℓ = log(e_{ℓ-1}/e_ℓ) / log(base)` for `ℓ ≥ 1`; `None` when an
    /// error involved is not positive.
    pub steps: Vec<Option<f64>>,
    /// Least-squares slope of `-log_base e_ℓ` over the last levels.
    pub fit: Option<f64>,
    /// The same after dividing `e_ℓ` by `√(ℓ+1)`.
    pub fit_log_corrected: Option<f64>,
}

impl RateReport {
    pub fn last_step(&self) -> Option<f64> {
        self.steps.last().copied().flatten()
    }
}

pub fn observed_rates(errors: &[f64], base: f64) -> Result<RateReport, RateError> {
    if errors.len() < 2 {
        return Err(RateError::TooFew(errors.len()));
    }
    if !(base > 0.0 && base != 1.0 && base.is_finite()) {
        return Err(RateError::Base(base));
    }
    let lb = base.ln();
    let ok = |e: f64| e > 0.0 && e.is_finite();
    let steps = errors
        .windows(2)
        .map(|w| (ok(w[0]) && ok(w[1])).then(|| (w[0] / w[1]).ln() / lb))
        .collect();
    let tail: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .skip(errors.len().saturating_sub(TAIL_POINTS))
        .filter(|(_, &e)| ok(e))
        .map(|(l, &e)| (l as f64, e))
        .collect();
    let fit = slope(tail.iter().map(|&(l, e)| (l, -e.ln() / lb)));
    let fit_log_corrected = slope(tail.iter().map(|&(l, e)| (l, -(e / (l + 1.0).sqrt()).ln() / lb)));
    Ok(RateReport { base, steps, fit, fit_log_corrected })
}

fn slope(pts: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let pts: Vec<_> = pts.collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BoundCase {
    /// Ring scaling dominates: `A > B`.
    A,
    /// `A = B`; an extra `√(ℓ+1)` factor.
    B,
    /// Uniform refinement dominates: `A < B`.
    C,
}

impl fmt::Display for BoundCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundCase::A => "a",
            BoundCase::B => "b",
            BoundCase::C => "c",
        })
    }
}

/// Best possible rates for given `p`, `λ` and seminorm order `r`.
/// These are limits the theory allows, not guaranteed observations.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundPrediction {
    pub p: u32,
    /// Lowest physical degree not reproduced.
    pub degree: u32,
    pub lambda: f64,
    pub r: u32,
    pub a: f64,
    pub b: f64,
    pub case: BoundCase,
    /// Error reduction per level, `max(A, B)`, without the log factor.
    pub rate: f64,
    /// `max(λ^d, 2^{-(p+1)})`.
    pub linf_rate: f64,
    pub descriptor: String,
}

impl BoundPrediction {
    pub fn log_factor(&self) -> bool {
        self.case == BoundCase::B
    }
}

pub fn predict_bounds(p: u32, kappa0: u32, lambda: f64, r: u32) -> Result<BoundPrediction, RateError> {
    predict_bounds_for_degree(p, kappa0 + 1, lambda, r)
}

/// Prediction for targets whose lowest non-reproduced degree is `d`.
pub fn predict_bounds_for_degree(p: u32, d: u32, lambda: f64, r: u32) -> Result<BoundPrediction, RateError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(RateError::Lambda(lambda));
    }
    if r > d {
        return Err(RateError::SeminormOrder { r, d });
    }
    let a = lambda.powi((d + 1 - r) as i32);
    let b = 0.5f64.powi(p as i32 + 1 - r as i32);
    let case = if (a - b).abs() <= CASE_TOL * a.max(b) {
        BoundCase::B
    } else if a > b {
        BoundCase::A
    } else {
        BoundCase::C
    };
    let rate = a.max(b);
    let linf_rate = lambda.powi(d as i32).max(0.5f64.powi(p as i32 + 1));
    let pow = format!("2^({}*l)", fmt_exponent(rate.log2()));
    let descriptor = if case == BoundCase::B { format!("sqrt(l+1)*{pow}") } else { pow };
    Ok(BoundPrediction { p, degree: d, lambda, r, a, b, case, rate, linf_rate, descriptor })
}

/// Mesh width ratio per level: the larger of `λ` and `1/2`.
pub fn h_ratio(lambda: f64) -> f64 {
    lambda.max(0.5)
}

/// Exponent `e` with `rate = h_ratio^e`.
pub fn h_exponent(rate: f64, lambda: f64) -> f64 {
    rate.ln() / h_ratio(lambda).ln()
}

/// Five decimals, or an integer when the value is one to that precision.
pub fn fmt_exponent(x: f64) -> String {
    let r = (x * 1e5).round() / 1e5;
    if (r - r.round()).abs() < 1e-9 {
        format!("{}", r.round() as i64)
    } else {
        format!("{r:.5}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateEntry {
    pub case: Option<BoundCase>,
    pub rate: f64,
    pub h_exponent: f64,
    pub log_factor: bool,
}

impl RateEntry {
    fn render(&self, with_base2: bool) -> String {
        let mut s = String::new();
        if self.log_factor {
            s.push_str("sqrt(1-log2(h)) ");
        }
        write!(s, "h^{}", fmt_exponent(self.h_exponent)).expect("string write");
        if with_base2 {
            write!(s, " ~ 2^{}", fmt_exponent(self.rate.log2())).expect("string write");
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub label: String,
    pub valence: u32,
    pub lambda: f64,
    pub kappa0: i32,
    /// L∞, L², H¹.
    pub entries: [RateEntry; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryTable {
    pub title: String,
    pub p: u32,
    pub rows: Vec<SummaryRow>,
    /// Whether entries also show the per-level factor as a power of 2.
    pub base2: bool,
}

/// Rate row for one scheme and valence at the scheme's natural degree.
pub fn summary_row(id: SchemeId, label: String) -> Result<SummaryRow, SubdivisionError> {
    let ring = characteristic_ring(id)?;
    let p = id.degree() as u32;
    let kappa0 = min_reproduction_degree(&ring.elements(), p as usize);
    let lambda = ring.lambda;
    let d = kappa0 as u32 + 1;
    let pred = |r| predict_bounds_for_degree(p, d, lambda, r).expect("r ≤ 1 ≤ d");
    let (l2, h1) = (pred(0), pred(1));
    let linf = l2.linf_rate;
    let entry = |b: &BoundPrediction| RateEntry {
        case: Some(b.case),
        rate: b.rate,
        h_exponent: h_exponent(b.rate, lambda),
        log_factor: b.log_factor(),
    };
    Ok(SummaryRow {
        label,
        valence: id.valence as u32,
        lambda,
        kappa0,
        entries: [
            RateEntry { case: None, rate: linf, h_exponent: h_exponent(linf, lambda), log_factor: false },
            entry(&l2),
            entry(&h1),
        ],
    })
}

/// Best possible rates for Doo-Sabin (valence 4 and any other valence) and
/// Catmull-Clark (valences 3 to 6).
pub fn summary_tables() -> Result<Vec<SummaryTable>, SubdivisionError> {
    let ds = |v| SchemeId::new(Scheme::DooSabin, v);
    let cc = |v| SchemeId::new(Scheme::CatmullClark, v);
    let mut ds_rows = vec![summary_row(ds(4), "DS, valence 4".into())?];
    // All valences other than 4 share λ = 1/2 and κ₀; valence 3 stands for them.
    ds_rows.push(summary_row(ds(3), "DS, valence != 4".into())?);
    let cc_rows = (3..=6).map(|v| summary_row(cc(v), format!("CC, valence {v}"))).collect::<Result<_, _>>()?;
    Ok(vec![
        SummaryTable { title: "Doo-Sabin (p = 2)".into(), p: 2, rows: ds_rows, base2: false },
        SummaryTable { title: "Catmull-Clark (p = 3)".into(), p: 3, rows: cc_rows, base2: true },
    ])
}

const LABEL_W: usize = 20;
const COL_W: usize = 32;

/// Fixed-width text rendering; see the README for the layout.
pub fn render_tables(tables: &[SummaryTable]) -> String {
    let mut out = String::new();
    for (k, t) in tables.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        out.push_str(&t.title);
        out.push('\n');
        let header = format!("{:LABEL_W$}{:COL_W$}{:COL_W$}{}", "", "L-inf rate", "L2 rate", "H1 rate");
        out.push_str(header.trim_end());
        out.push('\n');
        for row in &t.rows {
            let [a, b, c] = row.entries.map(|e| e.render(t.base2));
            let line = format!("{:LABEL_W$}{a:COL_W$}{b:COL_W$}{c}", row.label);
            out.push_str(line.trim_end());
            out.push('\n');
        }
    }
    out
}
