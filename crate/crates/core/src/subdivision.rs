//! Doo–Sabin and Catmull–Clark subdivision around an extraordinary vertex,
//! the subdominant eigenvector, and the characteristic ring built from it.
//!
//! Control points are addressed by sector `j` and grid position `(a, b)` in
//! that sector's quadrant, `a` running along the ray that separates sector
//! `j` from sector `j-1`, `b` along the ray to sector `j+1`:
//!
//! ```text
//!   b
//!   ^
//!   2  (j,1,2) (j,2,2)          Catmull–Clark, m = 2:
//!   1  (j,1,1) (j,2,1)            center + n·m·(m+1) points
//!   0  (j,1,0) (j,2,0)          Doo–Sabin, m = 1:
//!   +--------------------> a      n·(m+1)² points, a,b ∈ 0..=m
//!      1       2
//! ```
//!
//! For Catmull–Clark the column `a = 0` belongs to the next sector:
//! `(j,0,b) = (j+1,b,0)`, and `(0,0)` is the extraordinary vertex. For
//! Doo–Sabin, points with `a` or `b` equal to `-1` wrap to the neighbours:
//! `(j,a,-1) = (j-1,0,a)` and `(j,-1,b) = (j+1,b,0)`.
//!
//! Patches are extracted per sector on the faces `(1,0)`, `(0,1)`, `(1,1)`
//! after one refinement step; together they form the L-shaped ring segment.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::geometry::{CapKind, CapPiece, CapSpec, CapTemplate, ElementMap, RingSpec};
use crate::numkernel::{complex_eigenvalues, complex_eigenvector, DenseMatrix, NumError};
use crate::poly::Poly2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    DooSabin,
    CatmullClark,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SchemeId {
    pub scheme: Scheme,
    pub valence: usize,
}

impl SchemeId {
    pub fn new(scheme: Scheme, valence: usize) -> Self {
        Self { scheme, valence }
    }

    pub fn is_extraordinary(&self) -> bool {
        self.valence != 4
    }

    /// Bidegree of the extracted patches.
    pub fn degree(&self) -> usize {
        match self.scheme {
            Scheme::DooSabin => 2,
            Scheme::CatmullClark => 3,
        }
    }

    fn net_size(&self) -> usize {
        match self.scheme {
            Scheme::DooSabin => 1,
            Scheme::CatmullClark => 2,
        }
    }
}

pub const MIN_VALENCE: usize = 3;
pub const MAX_VALENCE: usize = 50;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SubdivisionError {
    #[error("valence {0} outside [3, 50]")]
    UnsupportedValence(usize),
    #[error("degenerate subdominant eigenspace: {0}")]
    DegenerateEigenspace(String),
    #[error(transparent)]
    Numeric(#[from] NumError),
}

/// Control point address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Key {
    Center,
    Point { j: usize, a: usize, b: usize },
}

fn resolve(id: SchemeId, j: i64, a: i64, b: i64) -> Key {
    let n = id.valence as i64;
    let j = j.rem_euclid(n);
    match id.scheme {
        Scheme::CatmullClark => {
            if a == 0 && b == 0 {
                Key::Center
            } else if b < 0 {
                debug_assert!(b == -1 && a >= 0);
                resolve(id, j - 1, 1, a)
            } else if a < 0 {
                debug_assert!(a == -1 && b >= 0);
                resolve(id, j + 1, b, 1)
            } else if a == 0 {
                resolve(id, j + 1, b, 0)
            } else {
                Key::Point { j: j as usize, a: a as usize, b: b as usize }
            }
        }
        Scheme::DooSabin => {
            if b < 0 {
                debug_assert!(b == -1 && a >= 0);
                resolve(id, j - 1, 0, a)
            } else if a < 0 {
                debug_assert!(a == -1 && b >= 0);
                resolve(id, j + 1, b, 0)
            } else {
                Key::Point { j: j as usize, a: a as usize, b: b as usize }
            }
        }
    }
}

/// Control net keys for grid size `m`, in storage order.
pub fn net_keys(id: SchemeId, m: usize) -> Vec<Key> {
    let n = id.valence;
    match id.scheme {
        Scheme::CatmullClark => std::iter::once(Key::Center)
            .chain((0..n).flat_map(|j| (1..=m).flat_map(move |a| (0..=m).map(move |b| Key::Point { j, a, b }))))
            .collect(),
        Scheme::DooSabin => (0..n)
            .flat_map(|j| (0..=m).flat_map(move |a| (0..=m).map(move |b| Key::Point { j, a, b })))
            .collect(),
    }
}

type Q = Ratio<i64>;

/// Catmull–Clark stencil of the refined point at `(j, a, b)` (or the center),
/// with exact rational weights.
fn cc_stencil(id: SchemeId, key: Key) -> Vec<(Key, Q)> {
    let n = id.valence as i64;
    let mut w: Vec<(Key, Q)> = Vec::new();
    let mut add = |k: Key, x: Q| match w.iter_mut().find(|e| e.0 == k) {
        Some(e) => e.1 += x,
        None => w.push((k, x)),
    };
    let (j, a, b) = match key {
        Key::Center => {
            // (F + 2E + (n-3)V) / n with F, E the averages of the face
            // points and edge midpoints around the vertex
            let nn = Q::from_integer(n * n);
            for s in 0..n {
                for k in [Key::Center, resolve(id, s, 1, 0), resolve(id, s, 1, 1), resolve(id, s, 0, 1)] {
                    add(k, Q::new(1, 4) / nn);
                }
                add(Key::Center, Q::from_integer(1) / nn);
                add(resolve(id, s, 1, 0), Q::from_integer(1) / nn);
            }
            add(Key::Center, Q::new(n - 3, n));
            return w;
        }
        Key::Point { j, a, b } => (j as i64, a as i64, b as i64),
    };
    let r = |x: i64, y: i64| resolve(id, j, x, y);
    let (ha, hb) = (a.div_euclid(2), b.div_euclid(2));
    match (a % 2 == 1, b % 2 == 1) {
        (true, true) => {
            for da in 0..2 {
                for db in 0..2 {
                    add(r(ha + da, hb + db), Q::new(1, 4));
                }
            }
        }
        (true, false) => {
            for da in 0..2 {
                add(r(ha + da, hb), Q::new(3, 8));
                for db in [-1, 1] {
                    add(r(ha + da, hb + db), Q::new(1, 16));
                }
            }
        }
        (false, true) => {
            for db in 0..2 {
                add(r(ha, hb + db), Q::new(3, 8));
                for da in [-1, 1] {
                    add(r(ha + da, hb + db), Q::new(1, 16));
                }
            }
        }
        (false, false) => {
            add(r(ha, hb), Q::new(9, 16));
            for (da, db) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                add(r(ha + da, hb + db), Q::new(3, 32));
            }
            for (da, db) in [(1, 1), (-1, 1), (1, -1), (-1, -1)] {
                add(r(ha + da, hb + db), Q::new(1, 64));
            }
        }
    }
    w
}

/// Doo–Sabin stencil. The refined corner `(j,0,0)` uses the classical
/// n-gon weights; all other points use the tensor product of the
/// one-dimensional (3/4, 1/4) rule.
fn ds_stencil(id: SchemeId, key: Key) -> Vec<(Key, f64)> {
    let n = id.valence;
    let Key::Point { j, a, b } = key else { unreachable!("Doo–Sabin nets have no center") };
    let mut w: Vec<(Key, f64)> = Vec::new();
    let mut add = |k: Key, x: f64| match w.iter_mut().find(|e| e.0 == k) {
        Some(e) => e.1 += x,
        None => w.push((k, x)),
    };
    if a == 0 && b == 0 {
        for s in 0..n {
            let d = (s + n - j) % n;
            let alpha = if d == 0 {
                (n as f64 + 5.0) / (4.0 * n as f64)
            } else {
                (3.0 + 2.0 * (2.0 * PI * d as f64 / n as f64).cos()) / (4.0 * n as f64)
            };
            add(Key::Point { j: s, a: 0, b: 0 }, alpha);
        }
        return w;
    }
    let taps = |x: i64| -> [(i64, f64); 2] {
        if x % 2 == 0 {
            [(x / 2, 0.75), (x / 2 - 1, 0.25)]
        } else {
            [((x - 1) / 2, 0.75), ((x + 1) / 2, 0.25)]
        }
    };
    for (ia, wa) in taps(a as i64) {
        for (ib, wb) in taps(b as i64) {
            add(resolve(id, j as i64, ia, ib), wa * wb);
        }
    }
    w
}

fn check_valence(id: SchemeId) -> Result<(), SubdivisionError> {
    if (MIN_VALENCE..=MAX_VALENCE).contains(&id.valence) {
        Ok(())
    } else {
        Err(SubdivisionError::UnsupportedValence(id.valence))
    }
}

/// Rows: refined points of a grid of size `m_out`; columns: the square net.
fn refinement_matrix(id: SchemeId, m_out: usize) -> Result<(DenseMatrix, Vec<Key>, Vec<Key>), SubdivisionError> {
    check_valence(id)?;
    let cols = net_keys(id, id.net_size());
    let rows = net_keys(id, m_out);
    let index: HashMap<Key, usize> = cols.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let mut s = DenseMatrix::zeros(rows.len(), cols.len());
    for (r, &key) in rows.iter().enumerate() {
        let stencil: Vec<(Key, f64)> = match id.scheme {
            Scheme::CatmullClark => cc_stencil(id, key).into_iter().map(|(k, q)| (k, ratio_to_f64(q))).collect(),
            Scheme::DooSabin => ds_stencil(id, key),
        };
        for (k, x) in stencil {
            s[(r, index[&k])] += x;
        }
    }
    Ok((s, rows, cols))
}

fn ratio_to_f64(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

/// Exact row sums of the Catmull–Clark matrix (each must equal one).
pub fn cc_row_sums_exact(valence: usize) -> Result<Vec<Ratio<i64>>, SubdivisionError> {
    let id = SchemeId::new(Scheme::CatmullClark, valence);
    check_valence(id)?;
    Ok(net_keys(id, 2).into_iter().map(|k| cc_stencil(id, k).into_iter().map(|e| e.1).sum()).collect())
}

/// Local subdivision matrix acting on the control net around the
/// extraordinary vertex (CC: `6n+1` points, DS: `4n` points).
pub fn subdivision_matrix(id: SchemeId) -> Result<DenseMatrix, SubdivisionError> {
    Ok(refinement_matrix(id, id.net_size())?.0)
}

/// Key order of the rows and columns of [`subdivision_matrix`].
pub fn matrix_keys(id: SchemeId) -> Vec<Key> {
    net_keys(id, id.net_size())
}

/// Fourier block of frequency `k`: `B[p][q] = Σ_s A[(0,p),(s,q)] ω^{ks}`,
/// over the per-sector points (the center joins only for `k = 0`).
pub fn fourier_block(id: SchemeId, k: usize) -> Result<DMatrix<Complex64>, SubdivisionError> {
    let a = subdivision_matrix(id)?;
    let keys = matrix_keys(id);
    let n = id.valence;
    let local: Vec<(usize, usize)> = keys
        .iter()
        .filter_map(|key| match key {
            Key::Point { j: 0, a, b } => Some((*a, *b)),
            _ => None,
        })
        .collect();
    let center = keys.iter().position(|k| *k == Key::Center).filter(|_| k.is_multiple_of(n));
    let size = local.len() + usize::from(center.is_some());
    let index: HashMap<Key, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let omega = |e: usize| Complex64::from_polar(1.0, 2.0 * PI * ((k * e) % n) as f64 / n as f64);
    let mut blk = DMatrix::zeros(size, size);
    for (p, &(pa, pb)) in local.iter().enumerate() {
        let row = index[&Key::Point { j: 0, a: pa, b: pb }];
        for s in 0..n {
            for (q, &(qa, qb)) in local.iter().enumerate() {
                blk[(p, q)] += omega(s) * a[(row, index[&Key::Point { j: s, a: qa, b: qb }])];
            }
        }
        if let Some(c) = center {
            blk[(p, local.len())] += Complex64::new(a[(row, c)], 0.0);
        }
    }
    if let Some(c) = center {
        let last = local.len();
        for s in 0..n {
            for (q, &(qa, qb)) in local.iter().enumerate() {
                blk[(last, q)] += Complex64::new(a[(c, index[&Key::Point { j: s, a: qa, b: qb }])], 0.0);
            }
        }
        blk[(last, last)] = Complex64::new(a[(c, c)], 0.0);
    }
    Ok(blk)
}

/// Subdominant eigenvalue: the dominant eigenvalue of the frequency-1 block,
/// together with its block eigenvector.
fn subdominant_pair(id: SchemeId) -> Result<(f64, DVector<Complex64>), SubdivisionError> {
    let blk = fourier_block(id, 1)?;
    let ev = complex_eigenvalues(&blk)?;
    let top = ev[0];
    if top.im.abs() > 1e-10 || top.re <= 0.0 {
        return Err(SubdivisionError::DegenerateEigenspace(format!("leading eigenvalue {top} is not real positive")));
    }
    if ev.len() > 1 && ev[1].norm() > top.norm() - 1e-9 {
        return Err(SubdivisionError::DegenerateEigenspace(format!("leading eigenvalue {top} is not simple")));
    }
    let lam = Complex64::new(top.re, 0.0);
    let v = complex_eigenvector(&blk, lam)?;
    Ok((top.re, v))
}

pub fn subdominant_lambda(id: SchemeId) -> Result<f64, SubdivisionError> {
    Ok(subdominant_pair(id)?.0)
}

/// Uniform cubic B-spline segment to power basis, row `i` = coefficient of `t^i`.
const M4: [[f64; 4]; 4] = [
    [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0, 0.0],
    [-0.5, 0.0, 0.5, 0.0],
    [0.5, -1.0, 0.5, 0.0],
    [-1.0 / 6.0, 0.5, -0.5, 1.0 / 6.0],
];
/// Uniform quadratic B-spline segment to power basis.
const M3: [[f64; 3]; 3] = [[0.5, 0.5, 0.0], [-1.0, 1.0, 0.0], [0.5, -1.0, 0.5]];

const FACES: [(i64, i64); 3] = [(1, 0), (0, 1), (1, 1)];

/// Planar control net: one point per key of the square matrix.
pub type Net = Vec<[f64; 2]>;

/// Extracts the 3 ring patches of every sector from a control net
/// (indexed like [`matrix_keys`]), after one refinement step.
pub fn extract_patches(id: SchemeId, net: &Net) -> Result<Vec<[ElementMap; 3]>, SubdivisionError> {
    let m_out = id.net_size() + 1;
    let (e, rows, _) = refinement_matrix(id, m_out)?;
    let xs = DVector::from_iterator(net.len(), net.iter().map(|p| p[0]));
    let ys = DVector::from_iterator(net.len(), net.iter().map(|p| p[1]));
    let (rx, ry) = (&e * xs, &e * ys);
    let refined: HashMap<Key, [f64; 2]> = rows.iter().enumerate().map(|(i, k)| (*k, [rx[i], ry[i]])).collect();
    let d = id.degree();
    let basis = |i: usize, t: usize| if d == 3 { M4[i][t] } else { M3[i][t] };
    let mut out = Vec::with_capacity(id.valence);
    for j in 0..id.valence as i64 {
        let patch = |f: (i64, i64)| {
            let mut gx = Poly2::with_degree(d, d);
            let mut gy = Poly2::with_degree(d, d);
            for s in 0..=d {
                for t in 0..=d {
                    let p = refined[&resolve(id, j, f.0 - 1 + s as i64, f.1 - 1 + t as i64)];
                    for i in 0..=d {
                        for k in 0..=d {
                            let w = basis(i, s) * basis(k, t);
                            if w != 0.0 {
                                gx.set(i, k, gx.get(i, k) + w * p[0]);
                                gy.set(i, k, gy.get(i, k) + w * p[1]);
                            }
                        }
                    }
                }
            }
            let mut g = ElementMap::new(gx, gy);
            g.q = d;
            g
        };
        out.push(FACES.map(patch));
    }
    Ok(out)
}

/// Characteristic ring of a scheme: `valence` sectors of 3 patches each,
/// rotated and scaled so that the outer end of the ray between sector
/// `valence-1` and sector 0 lies at `(1, 0)`. Sector 0 is the report sector.
#[derive(Clone, Debug, PartialEq)]
pub struct CharacteristicRing {
    pub id: SchemeId,
    pub lambda: f64,
    pub keys: Vec<Key>,
    pub net: Net,
    pub sector_maps: Vec<[ElementMap; 3]>,
    pub sector: usize,
}

pub fn characteristic_ring(id: SchemeId) -> Result<CharacteristicRing, SubdivisionError> {
    let (lambda, z) = subdominant_pair(id)?;
    let keys = matrix_keys(id);
    let n = id.valence;
    let local: Vec<(usize, usize)> = keys
        .iter()
        .filter_map(|key| match key {
            Key::Point { j: 0, a, b } => Some((*a, *b)),
            _ => None,
        })
        .collect();
    let raw: Vec<Complex64> = keys
        .iter()
        .map(|key| match key {
            Key::Center => Complex64::new(0.0, 0.0),
            Key::Point { j, a, b } => {
                let p = local.iter().position(|&x| x == (*a, *b)).expect("sector-0 key");
                z[p] * Complex64::from_polar(1.0, 2.0 * PI * *j as f64 / n as f64)
            }
        })
        .collect();
    let to_net = |c: Complex64| raw.iter().map(|z| z * c).map(|z| [z.re, z.im]).collect::<Net>();
    let probe = extract_patches(id, &to_net(Complex64::new(1.0, 0.0)))?;
    let end = probe[0][0].eval(1.0, 0.0);
    let end = Complex64::new(end[0], end[1]);
    if end.norm() < 1e-300 {
        return Err(SubdivisionError::DegenerateEigenspace("ring collapses".into()));
    }
    let net = to_net(end.conj() / end.norm_sqr());
    let sector_maps = extract_patches(id, &net)?;
    Ok(CharacteristicRing { id, lambda, keys, net, sector_maps, sector: 0 })
}

impl CharacteristicRing {
    pub fn elements(&self) -> Vec<ElementMap> {
        self.sector_maps.iter().flat_map(|s| s.iter().cloned()).collect()
    }

    /// Element indices of the report sector.
    pub fn sector_elements(&self) -> Vec<usize> {
        (3 * self.sector..3 * self.sector + 3).collect()
    }

    /// Coons cap pieces at level 0 (covering the hole inside ring 0).
    pub fn cap_pieces(&self) -> Vec<CapPiece> {
        self.sector_maps
            .iter()
            .enumerate()
            .map(|(j, s)| CapPiece { map: coons_patch(&s[0], &s[1], self.id.degree()), owners: vec![3 * j, 3 * j + 1, 3 * j + 2] })
            .collect()
    }

    /// Ring with Coons cap; errors are reported on the report sector only if
    /// `sector_only`.
    pub fn ring_spec(&self, sector_only: bool) -> RingSpec {
        let sector = sector_only.then(|| self.sector_elements());
        RingSpec::new(self.elements(), self.lambda, sector, CapTemplate::Coons(self.cap_pieces()))
            .expect("characteristic rings are valid")
    }
}

/// Bilinearly blended patch with corners `0`, `P10 = a(0,0)`, `P11 = a(0,1)`,
/// `P01 = c(0,0)`; the sides on `t = 0` and `s = 0` are straight segments
/// from the origin, the side `s = 1` is `a(0, t)` and the side `t = 1` is
/// `c(s, 0)`.
fn coons_patch(a: &ElementMap, c: &ElementMap, q: usize) -> ElementMap {
    let comp = |pa: &Poly2, pc: &Poly2| {
        let right: Poly2 = {
            let mut r = Poly2::with_degree(0, q);
            for t in 0..=q {
                r.set(0, t, pa.get(0, t));
            }
            r
        };
        let top: Poly2 = {
            let mut r = Poly2::with_degree(q, 0);
            for s in 0..=q {
                r.set(s, 0, pc.get(s, 0));
            }
            r
        };
        let p10 = pa.eval(0.0, 0.0);
        let p01 = pc.eval(0.0, 0.0);
        let p11 = pa.eval(0.0, 1.0);
        let s = Poly2::u();
        let t = Poly2::v();
        let one = Poly2::constant(1.0);
        let omt = one.sub(&t);
        let oms = one.sub(&s);
        let bottom = s.scale(p10);
        let left = t.scale(p01);
        let corners = s.mul(&omt).scale(p10).add(&oms.mul(&t).scale(p01)).add(&s.mul(&t).scale(p11));
        omt.mul(&bottom).add(&t.mul(&top)).add(&oms.mul(&left)).add(&s.mul(&right)).sub(&corners)
    };
    let mut g = ElementMap::new(comp(&a.gx, &c.gx), comp(&a.gy, &c.gy));
    g.q = q;
    g
}

/// Coons cap of a characteristic ring at level `level`.
pub fn coons_cap(ring: &CharacteristicRing, level: u32) -> CapSpec {
    let inner = ring.lambda.powi(level as i32);
    let pieces = ring.cap_pieces();
    CapSpec {
        kind: CapKind::CoonsPatch,
        maps: pieces.iter().map(|p| p.map.scale(inner)).collect(),
        owners: pieces.into_iter().map(|p| p.owners).collect(),
        scale: ring.lambda * inner,
    }
}

/// Serializable dump of a characteristic ring.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RingDump {
    pub scheme: Scheme,
    pub valence: usize,
    pub lambda: f64,
    pub control_net: Vec<NetPoint>,
    pub patches: Vec<PatchDump>,
    pub cap: Vec<PatchDump>,
    pub polylines: Vec<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetPoint {
    pub key: Key,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PatchDump {
    pub sector: usize,
    pub face: usize,
    pub gx: Poly2,
    pub gy: Poly2,
}

impl CharacteristicRing {
    /// Dump with `samples` points per patch edge in the polylines.
    pub fn dump(&self, samples: usize) -> RingDump {
        let samples = samples.max(2);
        let mut patches = Vec::new();
        let mut polylines = Vec::new();
        for (j, s) in self.sector_maps.iter().enumerate() {
            for (f, g) in s.iter().enumerate() {
                patches.push(PatchDump { sector: j, face: f, gx: g.gx.clone(), gy: g.gy.clone() });
                let line: Vec<[f64; 2]> = (0..=4 * samples)
                    .map(|i| {
                        let side = i / samples;
                        let t = (i % samples) as f64 / samples as f64;
                        match side {
                            0 => g.eval(t, 0.0),
                            1 => g.eval(1.0, t),
                            2 => g.eval(1.0 - t, 1.0),
                            3 => g.eval(0.0, 1.0 - t),
                            _ => g.eval(0.0, 0.0),
                        }
                    })
                    .collect();
                polylines.push(line);
            }
        }
        let cap = self
            .cap_pieces()
            .into_iter()
            .enumerate()
            .map(|(j, p)| PatchDump { sector: j, face: 3, gx: p.map.gx, gy: p.map.gy })
            .collect();
        RingDump {
            scheme: self.id.scheme,
            valence: self.id.valence,
            lambda: self.lambda,
            control_net: self.keys.iter().zip(&self.net).map(|(k, p)| NetPoint { key: *k, x: p[0], y: p[1] }).collect(),
            patches,
            cap,
            polylines,
        }
    }
}
