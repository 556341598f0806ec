//! Reproduction degree of mapped polynomial spaces.
//!
//! `κ[ω]` is the largest total degree `t` such that every physical
//! polynomial of degree `≤ t`, pulled back through the element map, is a
//! polynomial of bidegree `≤ (p, p)`. Composition is linear, so testing the
//! monomials `x^α y^β` suffices.

use serde::Serialize;

use crate::geometry::ElementMap;
use crate::poly::exact::{monomial, QPoly2};
use crate::poly::{MonomialIndex, Poly2};

/// Default membership tolerance, relative to the largest composite coefficient.
pub const KAPPA_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DegreeCheck {
    pub degree: u32,
    pub passed: Vec<MonomialIndex>,
    pub failed: Vec<MonomialIndex>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReproductionReport {
    pub kappa: i32,
    pub per_degree: Vec<DegreeCheck>,
    pub tol_used: f64,
    /// True when every degree up to `p` passed and the search stopped there.
    pub cap_reached: bool,
}

/// Powers of the map components, computed on demand.
struct PowerCache<'a> {
    g: &'a ElementMap,
    x: Vec<Poly2>,
    y: Vec<Poly2>,
}

impl<'a> PowerCache<'a> {
    fn new(g: &'a ElementMap) -> Self {
        Self { g, x: vec![Poly2::constant(1.0)], y: vec![Poly2::constant(1.0)] }
    }

    fn composite(&mut self, m: MonomialIndex) -> Poly2 {
        while self.x.len() <= m.alpha as usize {
            let next = self.x.last().expect("nonempty").mul(&self.g.gx);
            self.x.push(next);
        }
        while self.y.len() <= m.beta as usize {
            let next = self.y.last().expect("nonempty").mul(&self.g.gy);
            self.y.push(next);
        }
        self.x[m.alpha as usize].mul(&self.y[m.beta as usize])
    }
}

/// True if all coefficients with `i > p` or `j > p` are at most `tol · max|c|`.
pub fn in_qp(c: &Poly2, p: usize, tol: f64) -> bool {
    let cut = tol * c.max_abs();
    c.terms().all(|(i, j, a)| (i <= p && j <= p) || a.abs() <= cut)
}

pub fn reproduction_degree(g: &ElementMap, p: usize, tol: f64) -> ReproductionReport {
    let mut cache = PowerCache::new(g);
    run_search(p, tol, |m| in_qp(&cache.composite(m), p, tol))
}

/// Exact-rational variant for maps with exactly representable coefficients;
/// membership means the tail coefficients vanish exactly.
pub fn reproduction_degree_exact(g: &ElementMap, p: usize) -> ReproductionReport {
    let gx = QPoly2::from_f64(&g.gx);
    let gy = QPoly2::from_f64(&g.gy);
    run_search(p, 0.0, |m| monomial(m.alpha as usize, m.beta as usize).compose(&gx, &gy).in_qp(p))
}

fn run_search(p: usize, tol: f64, mut member: impl FnMut(MonomialIndex) -> bool) -> ReproductionReport {
    let mut per_degree = Vec::new();
    for t in 0..=p as u32 {
        let (passed, failed): (Vec<_>, Vec<_>) = MonomialIndex::of_degree(t).into_iter().partition(|&m| member(m));
        let ok = failed.is_empty();
        per_degree.push(DegreeCheck { degree: t, passed, failed });
        if !ok {
            return ReproductionReport { kappa: t as i32 - 1, per_degree, tol_used: tol, cap_reached: false };
        }
    }
    ReproductionReport { kappa: p as i32, per_degree, tol_used: tol, cap_reached: true }
}

/// Sub-cells used to spot-check that refinement preserves κ.
/// Kept shallow: on deep cells genuine tail coefficients shrink like `2^{-k·i}`
/// and can drop below the relative membership tolerance.
const SPOT_CELLS: [(u64, u64, u32); 3] = [(1, 0, 1), (2, 3, 2), (0, 2, 2)];

/// Minimum κ over the level-0 elements. Sub-cells inherit κ from their
/// parent element; a few are re-checked and a warning is logged on mismatch.
pub fn min_reproduction_degree(elements: &[ElementMap], p: usize) -> i32 {
    let mut kappa0 = i32::MAX;
    for (n, g) in elements.iter().enumerate() {
        let k = reproduction_degree(g, p, KAPPA_TOL).kappa;
        for &(j1, j2, lvl) in &SPOT_CELLS {
            let ks = reproduction_degree(&g.reparam_to_cell(j1, j2, lvl), p, KAPPA_TOL).kappa;
            if ks != k {
                log::warn!("element {n}: sub-cell ({j1},{j2},{lvl}) has kappa {ks}, parent has {k}");
            }
        }
        kappa0 = kappa0.min(k);
    }
    kappa0
}

/// The monomials of exact degree `κ₀ + 1`.
pub fn maximizing_monomials(kappa0: u32) -> Vec<MonomialIndex> {
    MonomialIndex::of_degree(kappa0 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_sb1, make_sb2, sb1_global, sb2_global};
    use crate::subdivision::{characteristic_ring, Scheme, SchemeId};
    use proptest::prelude::*;

    fn ex33() -> ElementMap {
        let gx = Poly2::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, -1.0]]).unwrap();
        ElementMap::new(gx, Poly2::v())
    }

    #[test]
    fn worked_example() {
        let r = reproduction_degree(&ex33(), 2, KAPPA_TOL);
        assert_eq!(r.kappa, 1);
        let failed = &r.per_degree[2].failed;
        assert_eq!(failed, &vec![MonomialIndex::new(2, 0), MonomialIndex::new(1, 1)]);
        assert_eq!(r.per_degree[2].passed, vec![MonomialIndex::new(0, 2)]);
        assert_eq!(reproduction_degree(&ex33(), 4, KAPPA_TOL).kappa, 2);
        let id = reproduction_degree(&ElementMap::identity(), 3, KAPPA_TOL);
        assert_eq!(id.kappa, 3);
        assert!(id.cap_reached);
    }

    #[test]
    fn scaled_boundary_rings() {
        let (_, ring) = make_sb1();
        assert_eq!(min_reproduction_degree(&ring.elements, 2), 1);
        assert_eq!(min_reproduction_degree(&ring.elements, 4), 2);
        assert_eq!(min_reproduction_degree(&ring.elements, 5), 2);
        let (_, ring2) = make_sb2();
        assert_eq!(min_reproduction_degree(&ring2.elements, 2), 0);
    }

    #[test]
    fn subdivision_rings() {
        let cc5 = characteristic_ring(SchemeId::new(Scheme::CatmullClark, 5)).unwrap();
        assert_eq!(min_reproduction_degree(&cc5.elements(), 3), 1);
        let ds5 = characteristic_ring(SchemeId::new(Scheme::DooSabin, 5)).unwrap();
        assert_eq!(min_reproduction_degree(&ds5.elements(), 2), 1);
        let ds4 = characteristic_ring(SchemeId::new(Scheme::DooSabin, 4)).unwrap();
        assert_eq!(min_reproduction_degree(&ds4.elements(), 2), 2);
        let cc4 = characteristic_ring(SchemeId::new(Scheme::CatmullClark, 4)).unwrap();
        for p in 1..=5 {
            assert_eq!(min_reproduction_degree(&cc4.elements(), p), p as i32);
        }
    }

    #[test]
    fn coons_cap_matches_neighbours() {
        let cc3 = characteristic_ring(SchemeId::new(Scheme::CatmullClark, 3)).unwrap();
        for piece in cc3.cap_pieces() {
            assert_eq!(reproduction_degree(&piece.map, 3, KAPPA_TOL).kappa, 1);
        }
    }

    #[test]
    fn maximizing_sets() {
        assert_eq!(maximizing_monomials(1), vec![MonomialIndex::new(2, 0), MonomialIndex::new(1, 1), MonomialIndex::new(0, 2)]);
        assert_eq!(maximizing_monomials(0), vec![MonomialIndex::new(1, 0), MonomialIndex::new(0, 1)]);
        assert_eq!(maximizing_monomials(2).len(), 4);
    }

    #[test]
    fn exact_mode_agrees() {
        let (_, r1) = make_sb1();
        let (_, r2) = make_sb2();
        let maps: Vec<ElementMap> = vec![ex33(), sb1_global(), sb2_global()]
            .into_iter()
            .chain(r1.elements)
            .chain(r2.elements)
            .collect();
        for g in &maps {
            for p in 0..=6 {
                let a = reproduction_degree(g, p, KAPPA_TOL);
                let b = reproduction_degree_exact(g, p);
                assert_eq!(a.kappa, b.kappa, "p={p}");
                assert_eq!(a.per_degree, b.per_degree);
            }
        }
    }

    #[test]
    fn monotone_in_p_and_bounded_below() {
        let (_, r1) = make_sb1();
        let cc3 = characteristic_ring(SchemeId::new(Scheme::CatmullClark, 3)).unwrap();
        for g in r1.elements.iter().chain(cc3.elements().iter()) {
            let mut last = -1;
            for p in 0..=7 {
                let k = reproduction_degree(g, p, KAPPA_TOL).kappa;
                assert!(k >= last);
                assert!(k >= (p / g.q) as i32);
                last = k;
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn subcells_and_scaling_preserve_kappa(which in 0usize..4, p in 1usize..6,
                                               k in 0u32..3, s in any::<(u64, u64)>(), e in 0usize..3) {
            let g = match which {
                0 => ex33(),
                1 => make_sb1().1.elements[1].clone(),
                2 => make_sb2().1.elements[0].clone(),
                _ => characteristic_ring(SchemeId::new(Scheme::CatmullClark, 5)).unwrap().sector_maps[0][e].clone(),
            };
            let base = reproduction_degree(&g, p, KAPPA_TOL).kappa;
            let (j1, j2) = (s.0 % (1 << k), s.1 % (1 << k));
            prop_assert_eq!(reproduction_degree(&g.reparam_to_cell(j1, j2, k), p, KAPPA_TOL).kappa, base);
            for mu in [0.5, 0.25, 0.549988, 0.549988f64.powi(2)] {
                prop_assert_eq!(reproduction_degree(&g.scale(mu), p, KAPPA_TOL).kappa, base);
            }
        }
    }
}
