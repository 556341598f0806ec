//! Element maps, self-similar rings and the level-ℓ meshes built from them.
//!
//! A ring holds the level-0 element maps `G⁰_n` and the contraction factor
//! `λ`. Ring `i` of a level-ℓ mesh is `λ^i` times ring 0, each element split
//! dyadically `ℓ - i` times; whatever lies inside ring ℓ is covered by a cap.

use serde::{Deserialize, Serialize};

use crate::numkernel::QuadratureRule;
use crate::poly::{Dir, Poly2, TRIM_TOL};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("lambda must lie in ]0,1[, got {0}")]
    Lambda(f64),
    #[error("a ring needs at least one element")]
    NoElements,
    #[error("sector index {index} out of range for {count} elements")]
    Sector { index: usize, count: usize },
    #[error("cap kind {0:?} is not available for this ring")]
    CapUnavailable(CapKind),
    #[error("cell {0:?} is not part of the mesh")]
    UnknownCell(Cell),
}

/// Planar polynomial map `G = (gx, gy)` on the unit square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementMap {
    pub gx: Poly2,
    pub gy: Poly2,
    /// Declared bidegree bound.
    pub q: usize,
    /// Singular points (vanishing Jacobian) are tolerated, e.g. at an apex.
    #[serde(default)]
    pub allow_singular: bool,
}

/// Jacobian matrix `[[x_u, x_v], [y_u, y_v]]` and its determinant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jacobian {
    pub m: [[f64; 2]; 2],
    pub det: f64,
}

impl ElementMap {
    /// Builds a map and sets `q` to the larger effective bidegree.
    pub fn new(gx: Poly2, gy: Poly2) -> Self {
        let (a, b) = gx.effective_bidegree(TRIM_TOL);
        let (c, d) = gy.effective_bidegree(TRIM_TOL);
        let q = a.max(b).max(c).max(d);
        Self { gx, gy, q, allow_singular: false }
    }

    pub fn identity() -> Self {
        Self::new(Poly2::u(), Poly2::v())
    }

    pub fn singular(mut self, allow: bool) -> Self {
        self.allow_singular = allow;
        self
    }

    pub fn eval(&self, u: f64, v: f64) -> [f64; 2] {
        [self.gx.eval(u, v), self.gy.eval(u, v)]
    }

    pub fn scale(&self, mu: f64) -> Self {
        Self { gx: self.gx.scale(mu), gy: self.gy.scale(mu), ..self.clone() }
    }

    /// `A · G` for a 2×2 matrix `A`.
    pub fn transform(&self, a: [[f64; 2]; 2]) -> Self {
        Self {
            gx: self.gx.scale(a[0][0]).add(&self.gy.scale(a[0][1])),
            gy: self.gx.scale(a[1][0]).add(&self.gy.scale(a[1][1])),
            ..self.clone()
        }
    }

    pub fn affine(&self, a_u: f64, b_u: f64, a_v: f64, b_v: f64) -> Self {
        Self {
            gx: self.gx.affine(a_u, b_u, a_v, b_v),
            gy: self.gy.affine(a_u, b_u, a_v, b_v),
            ..self.clone()
        }
    }

    pub fn reparam_to_cell(&self, j1: u64, j2: u64, k: u32) -> Self {
        Self {
            gx: self.gx.reparam_to_cell(j1, j2, k),
            gy: self.gy.reparam_to_cell(j1, j2, k),
            ..self.clone()
        }
    }

    pub fn derivatives(&self) -> MapDerivatives {
        MapDerivatives::new(self)
    }

    pub fn jacobian(&self, u: f64, v: f64) -> Jacobian {
        self.derivatives().jacobian(u, v)
    }

    /// Smallest and largest `det J` over a tensor grid of quadrature nodes.
    pub fn det_range(&self, rule: &QuadratureRule) -> (f64, f64) {
        let d = self.derivatives();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &u in &rule.nodes {
            for &v in &rule.nodes {
                let det = d.jacobian(u, v).det;
                lo = lo.min(det);
                hi = hi.max(det);
            }
        }
        (lo, hi)
    }

    /// Regular on the nodes: `det J` is bounded away from zero with one sign.
    /// Orientation is irrelevant for integration, which uses `|det J|`.
    pub fn is_regular_on(&self, rule: &QuadratureRule) -> bool {
        let (lo, hi) = self.det_range(rule);
        lo > 0.0 || hi < 0.0
    }

    /// Points along the boundary of the unit square, `n` per side.
    pub fn boundary_samples(&self, n: usize) -> Vec<[f64; 2]> {
        let mut pts = Vec::with_capacity(4 * n);
        for s in 0..n {
            let t = s as f64 / n as f64;
            pts.push(self.eval(t, 0.0));
            pts.push(self.eval(1.0, t));
            pts.push(self.eval(1.0 - t, 1.0));
            pts.push(self.eval(0.0, 1.0 - t));
        }
        pts
    }

    /// Diameter estimate from 4×`n` boundary samples.
    pub fn diameter(&self, n: usize) -> f64 {
        let pts = self.boundary_samples(n);
        let mut d: f64 = 0.0;
        for (a, p) in pts.iter().enumerate() {
            for r in &pts[a + 1..] {
                d = d.max(((p[0] - r[0]).powi(2) + (p[1] - r[1]).powi(2)).sqrt());
            }
        }
        d
    }
}

/// First and second partial derivatives of a map's components.
#[derive(Clone, Debug)]
pub struct MapDerivatives {
    pub xu: Poly2,
    pub xv: Poly2,
    pub yu: Poly2,
    pub yv: Poly2,
    pub xuu: Poly2,
    pub xuv: Poly2,
    pub xvv: Poly2,
    pub yuu: Poly2,
    pub yuv: Poly2,
    pub yvv: Poly2,
}

impl MapDerivatives {
    fn new(g: &ElementMap) -> Self {
        let xu = g.gx.partial(Dir::U);
        let xv = g.gx.partial(Dir::V);
        let yu = g.gy.partial(Dir::U);
        let yv = g.gy.partial(Dir::V);
        Self {
            xuu: xu.partial(Dir::U),
            xuv: xu.partial(Dir::V),
            xvv: xv.partial(Dir::V),
            yuu: yu.partial(Dir::U),
            yuv: yu.partial(Dir::V),
            yvv: yv.partial(Dir::V),
            xu,
            xv,
            yu,
            yv,
        }
    }

    pub fn jacobian(&self, u: f64, v: f64) -> Jacobian {
        let m = [[self.xu.eval(u, v), self.xv.eval(u, v)], [self.yu.eval(u, v), self.yv.eval(u, v)]];
        Jacobian { m, det: m[0][0] * m[1][1] - m[0][1] * m[1][0] }
    }

    /// Parameter Hessians `[x, y]`, each `[[_uu, _uv], [_uv, _vv]]`.
    pub fn hessians(&self, u: f64, v: f64) -> [[[f64; 2]; 2]; 2] {
        let h = |a: &Poly2, b: &Poly2, c: &Poly2| {
            let uv = b.eval(u, v);
            [[a.eval(u, v), uv], [uv, c.eval(u, v)]]
        };
        [h(&self.xuu, &self.xuv, &self.xvv), h(&self.yuu, &self.yuv, &self.yvv)]
    }
}

/// How the region inside the finest ring is handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CapKind {
    /// The scaled global scaled-boundary map (singular at the apex).
    ScaledSingular,
    /// Bilinearly blended patches, one per sector.
    CoonsPatch,
    Excluded,
}

/// One piece of a cap at level 0, with the ring elements it is attached to
/// for sector-restricted error reports.
#[derive(Clone, Debug, PartialEq)]
pub struct CapPiece {
    pub map: ElementMap,
    pub owners: Vec<usize>,
}

/// Cap pieces for level 0; the level-ℓ cap is `λ^ℓ` times these.
#[derive(Clone, Debug, PartialEq)]
pub enum CapTemplate {
    None,
    ScaledSingular(Vec<CapPiece>),
    Coons(Vec<CapPiece>),
}

impl CapTemplate {
    pub fn kind(&self) -> Option<CapKind> {
        match self {
            CapTemplate::None => None,
            CapTemplate::ScaledSingular(_) => Some(CapKind::ScaledSingular),
            CapTemplate::Coons(_) => Some(CapKind::CoonsPatch),
        }
    }
}

/// A level-0 ring `Ω⁰` with contraction factor `λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct RingSpec {
    pub elements: Vec<ElementMap>,
    pub lambda: f64,
    /// Element indices on which sector-restricted errors are reported.
    pub sector: Option<Vec<usize>>,
    pub cap: CapTemplate,
}

impl RingSpec {
    pub fn new(
        elements: Vec<ElementMap>,
        lambda: f64,
        sector: Option<Vec<usize>>,
        cap: CapTemplate,
    ) -> Result<Self, GeometryError> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(GeometryError::Lambda(lambda));
        }
        if elements.is_empty() {
            return Err(GeometryError::NoElements);
        }
        let count = elements.len();
        if let Some(s) = &sector {
            if let Some(&index) = s.iter().find(|&&i| i >= count) {
                return Err(GeometryError::Sector { index, count });
            }
        }
        let pieces = match &cap {
            CapTemplate::None => &[][..],
            CapTemplate::ScaledSingular(p) | CapTemplate::Coons(p) => &p[..],
        };
        for piece in pieces {
            if let Some(&index) = piece.owners.iter().find(|&&i| i >= count) {
                return Err(GeometryError::Sector { index, count });
            }
        }
        Ok(Self { elements, lambda, sector, cap })
    }

    pub fn in_sector(&self, n: usize) -> bool {
        self.sector.as_ref().is_none_or(|s| s.contains(&n))
    }

    /// The natural cap for this ring, or `Excluded` if it has none.
    pub fn default_cap(&self) -> CapKind {
        self.cap.kind().unwrap_or(CapKind::Excluded)
    }
}

/// A dyadic sub-cell of element `n` in ring `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub i: u32,
    pub n: usize,
    pub j1: u64,
    pub j2: u64,
    pub k: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CapSpec {
    pub kind: CapKind,
    pub maps: Vec<ElementMap>,
    pub owners: Vec<Vec<usize>>,
    /// `λ^{ℓ+1}`.
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeshLevel {
    pub level: u32,
    pub ring: RingSpec,
    pub cells: Vec<Cell>,
    pub cap: CapSpec,
}

/// Number of ring cells at level ℓ for `n_elements` elements.
pub fn cell_count(n_elements: usize, level: u32) -> usize {
    n_elements * (0..=level).map(|i| 1usize << (2 * (level - i))).sum::<usize>()
}

pub fn build_mesh(ring: &RingSpec, level: u32, cap: CapKind) -> Result<MeshLevel, GeometryError> {
    let mut cells = Vec::with_capacity(cell_count(ring.elements.len(), level));
    for i in 0..=level {
        let k = level - i;
        for n in 0..ring.elements.len() {
            for j1 in 0..1u64 << k {
                for j2 in 0..1u64 << k {
                    cells.push(Cell { i, n, j1, j2, k });
                }
            }
        }
    }
    let scale = ring.lambda.powi(level as i32 + 1);
    let inner = ring.lambda.powi(level as i32);
    let pieces = match (cap, &ring.cap) {
        (CapKind::Excluded, _) => Vec::new(),
        (CapKind::ScaledSingular, CapTemplate::ScaledSingular(p)) => p.clone(),
        (CapKind::CoonsPatch, CapTemplate::Coons(p)) => p.clone(),
        _ => return Err(GeometryError::CapUnavailable(cap)),
    };
    let cap = CapSpec {
        kind: cap,
        maps: pieces.iter().map(|p| p.map.scale(inner)).collect(),
        owners: pieces.into_iter().map(|p| p.owners).collect(),
        scale,
    };
    Ok(MeshLevel { level, ring: ring.clone(), cells, cap })
}

/// `λ^i · G⁰_n` restricted to the cell's dyadic square.
pub fn cell_map(mesh: &MeshLevel, cell: &Cell) -> Result<ElementMap, GeometryError> {
    let base = mesh.ring.elements.get(cell.n).ok_or(GeometryError::UnknownCell(*cell))?;
    if cell.i > mesh.level || cell.j1 >> cell.k != 0 || cell.j2 >> cell.k != 0 {
        return Err(GeometryError::UnknownCell(*cell));
    }
    let g = base.reparam_to_cell(cell.j1, cell.j2, cell.k);
    Ok(if cell.i == 0 { g } else { g.scale(mesh.ring.lambda.powi(cell.i as i32)) })
}

impl MeshLevel {
    pub fn cell_maps(&self) -> Vec<ElementMap> {
        self.cells.iter().map(|c| cell_map(self, c).expect("cells belong to the mesh")).collect()
    }

    pub fn export(&self) -> MeshExport {
        MeshExport {
            level: self.level,
            lambda: self.ring.lambda,
            cells: self.cells.clone(),
            cap: CapExport { kind: self.cap.kind, scale: self.cap.scale },
        }
    }
}

/// Debug/visualization export of a mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshExport {
    pub level: u32,
    pub lambda: f64,
    pub cells: Vec<Cell>,
    pub cap: CapExport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapExport {
    pub kind: CapKind,
    pub scale: f64,
}

/// The whole global map split uniformly `ℓ + 1` times, without a cap.
pub fn build_tensor_mesh(global: &ElementMap, level: u32) -> MeshLevel {
    let k = level + 1;
    let mut cells = Vec::with_capacity(1 << (2 * k));
    for j1 in 0..1u64 << k {
        for j2 in 0..1u64 << k {
            cells.push(Cell { i: 0, n: 0, j1, j2, k });
        }
    }
    let ring = RingSpec {
        elements: vec![global.clone().singular(true)],
        lambda: 0.5,
        sector: None,
        cap: CapTemplate::None,
    };
    MeshLevel {
        level,
        ring,
        cells,
        cap: CapSpec { kind: CapKind::Excluded, maps: Vec::new(), owners: Vec::new(), scale: 0.0 },
    }
}

/// Ring of a scaled-boundary map `Ĝ`: `Ĝ(]λ,1[ × ]0,1[)`, split into `split`
/// elements along `v`. The cap is `λ Ĝ` at level 0.
pub fn scaled_boundary_ring(global: &ElementMap, lambda: f64, split: usize) -> Result<RingSpec, GeometryError> {
    if split == 0 {
        return Err(GeometryError::NoElements);
    }
    let h = 1.0 / split as f64;
    let elements: Vec<ElementMap> = (0..split)
        .map(|n| {
            let mut g = global.affine(lambda, 1.0 - lambda, n as f64 * h, h);
            g.allow_singular = false;
            g
        })
        .collect();
    let cap = CapTemplate::ScaledSingular(vec![CapPiece {
        map: global.scale(lambda).singular(true),
        owners: (0..split).collect(),
    }]);
    RingSpec::new(elements, lambda, None, cap)
}

/// Number of elements the scaled-boundary examples use per ring.
pub const SB_SPLIT: usize = 2;

fn poly(rows: &[&[f64]]) -> Poly2 {
    Poly2::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).expect("literal")
}

/// Biquadratic scaled-boundary map `(u(2v - v²), u(1 - v²))` and its ring.
pub fn make_sb1() -> (ElementMap, RingSpec) {
    let g = sb1_global();
    let ring = scaled_boundary_ring(&g, 0.5, SB_SPLIT).expect("valid");
    (g, ring)
}

/// Bicubic scaled-boundary map `(u(v + v² - v³), u(1 - v²))` and its ring.
pub fn make_sb2() -> (ElementMap, RingSpec) {
    let g = sb2_global();
    let ring = scaled_boundary_ring(&g, 0.5, SB_SPLIT).expect("valid");
    (g, ring)
}

pub fn sb1_global() -> ElementMap {
    let gx = poly(&[&[0.0, 0.0, 0.0], &[0.0, 2.0, -1.0]]);
    let gy = poly(&[&[0.0, 0.0, 0.0], &[1.0, 0.0, -1.0]]);
    ElementMap::new(gx, gy).singular(true)
}

pub fn sb2_global() -> ElementMap {
    let gx = poly(&[&[0.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 1.0, -1.0]]);
    let gy = poly(&[&[0.0, 0.0, 0.0, 0.0], &[1.0, 0.0, -1.0, 0.0]]);
    let mut g = ElementMap::new(gx, gy).singular(true);
    g.q = 3;
    g
}
