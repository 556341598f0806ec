//! Experiment configuration, domain selection and the custom-domain JSON
//! format.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::approx::{ErrorOptions, MeshSource, TargetFunction, DEFAULT_LINF_GRID};
use crate::geometry::{
    make_sb1, make_sb2, sb1_global, sb2_global, scaled_boundary_ring, CapKind, CapPiece, CapTemplate, ElementMap,
    RingSpec,
};
use crate::poly::Poly2;
use crate::subdivision::{characteristic_ring, Scheme, SchemeId};

pub const MAX_P: usize = 12;
pub const MAX_LEVEL: u32 = 8;
pub const MAX_CUSTOM_DEGREE: usize = 12;
pub const MAX_CUSTOM_ELEMENTS: usize = 256;
pub const MIN_LINF_GRID: usize = 9;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{field}: {msg}")]
    Invalid { field: &'static str, msg: String },
    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{field}: cannot read {path}: {source}")]
    Io { field: &'static str, path: PathBuf, source: std::io::Error },
}

impl ConfigError {
    pub fn invalid(field: &'static str, msg: impl Into<String>) -> Self {
        Self::Invalid { field, msg: msg.into() }
    }

    pub fn field(&self) -> Option<&'static str> {
        match self {
            Self::Invalid { field, .. } | Self::Io { field, .. } => Some(field),
            Self::Json(_) => None,
        }
    }
}

/// Which global map a tensor-grid run refines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorBase {
    Sb1,
    Sb2,
}

/// `sb1`, `sb2`, `ds:<valence>`, `cc:<valence>`, `custom:<file>`,
/// `tensor:sb1` or `tensor:sb2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DomainSpec {
    Sb1,
    Sb2,
    DooSabin(usize),
    CatmullClark(usize),
    Custom(PathBuf),
    Tensor(TensorBase),
}

impl FromStr for DomainSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |msg: String| ConfigError::invalid("domain", msg);
        let valence = |v: &str| -> Result<usize, ConfigError> {
            let n: usize = v.parse().map_err(|_| bad(format!("invalid valence '{v}'")))?;
            if !(3..=50).contains(&n) {
                return Err(bad(format!("valence {n} outside 3..=50")));
            }
            Ok(n)
        };
        match s.split_once(':') {
            None => match s {
                "sb1" => Ok(Self::Sb1),
                "sb2" => Ok(Self::Sb2),
                _ => Err(bad(format!("unknown domain '{s}'"))),
            },
            Some(("ds", v)) => Ok(Self::DooSabin(valence(v)?)),
            Some(("cc", v)) => Ok(Self::CatmullClark(valence(v)?)),
            Some(("custom", "")) => Err(bad("custom domain needs a file path".into())),
            Some(("custom", f)) => Ok(Self::Custom(PathBuf::from(f))),
            Some(("tensor", "sb1")) => Ok(Self::Tensor(TensorBase::Sb1)),
            Some(("tensor", "sb2")) => Ok(Self::Tensor(TensorBase::Sb2)),
            Some((k, v)) => Err(bad(format!("unknown domain '{k}:{v}'"))),
        }
    }
}

impl fmt::Display for DomainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sb1 => f.write_str("sb1"),
            Self::Sb2 => f.write_str("sb2"),
            Self::DooSabin(n) => write!(f, "ds:{n}"),
            Self::CatmullClark(n) => write!(f, "cc:{n}"),
            Self::Custom(p) => write!(f, "custom:{}", p.display()),
            Self::Tensor(TensorBase::Sb1) => f.write_str("tensor:sb1"),
            Self::Tensor(TensorBase::Sb2) => f.write_str("tensor:sb2"),
        }
    }
}

impl Serialize for DomainSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DomainSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    L2,
    H1,
    H2,
    Linf,
}

impl Norm {
    pub fn seminorm_order(self) -> u32 {
        match self {
            Norm::H1 => 1,
            Norm::H2 => 2,
            Norm::L2 | Norm::Linf => 0,
        }
    }
}

impl FromStr for Norm {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l2" => Ok(Self::L2),
            "h1" => Ok(Self::H1),
            "h2" => Ok(Self::H2),
            "linf" => Ok(Self::Linf),
            _ => Err(ConfigError::invalid("norm", format!("unknown norm '{s}' (l2, h1, h2, linf)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CapChoice {
    #[default]
    Auto,
    Coons,
    Scaled,
    Excluded,
}

impl FromStr for CapChoice {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Self::Auto),
            "coons" => Ok(Self::Coons),
            "scaled" => Ok(Self::Scaled),
            "excluded" => Ok(Self::Excluded),
            _ => Err(ConfigError::invalid("cap", format!("unknown cap '{s}' (auto, coons, scaled, excluded)"))),
        }
    }
}

/// A target given by name/expression or by a coefficient matrix
/// `c[i][j]` of `x^i y^j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Expr(String),
    Coeffs { coeffs: Poly2 },
}

impl TargetSpec {
    pub fn resolve(&self) -> Result<TargetFunction, ConfigError> {
        match self {
            Self::Expr(s) => TargetFunction::parse(s).map_err(|e| ConfigError::invalid("target", e.to_string())),
            Self::Coeffs { coeffs } => {
                let (du, dv) = coeffs.bidegree();
                if du.max(dv) > MAX_CUSTOM_DEGREE * 2 {
                    return Err(ConfigError::invalid("target", "polynomial degree too large"));
                }
                Ok(TargetFunction::PhysPolynomial(coeffs.clone()))
            }
        }
    }
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self::Expr("x^2".into())
    }
}

/// One experiment: a domain, polynomial degrees, levels `0..=levels`, a
/// target and a norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainSpec,
    #[serde(default = "default_degrees")]
    pub degrees: Vec<usize>,
    #[serde(default = "default_levels")]
    pub levels: u32,
    #[serde(default)]
    pub target: TargetSpec,
    #[serde(default)]
    pub norm: Norm,
    #[serde(default)]
    pub cap: CapChoice,
    #[serde(default)]
    pub sector_only: bool,
    #[serde(default)]
    pub quad_order_override: Option<usize>,
    #[serde(default)]
    pub linf_grid: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_degrees() -> Vec<usize> {
    vec![2]
}

fn default_levels() -> u32 {
    3
}

impl ExperimentConfig {
    pub fn new(domain: DomainSpec) -> Self {
        Self {
            domain,
            degrees: default_degrees(),
            levels: default_levels(),
            target: TargetSpec::default(),
            norm: Norm::L2,
            cap: CapChoice::Auto,
            sector_only: false,
            quad_order_override: None,
            linf_grid: None,
            output: None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(s)?)
    }

    /// Checks every field and loads the domain. `base_dir` resolves
    /// relative custom-domain paths.
    pub fn validate(&self, base_dir: Option<&Path>) -> Result<Experiment, ConfigError> {
        if self.degrees.is_empty() {
            return Err(ConfigError::invalid("degrees", "at least one degree is required"));
        }
        if let Some(&p) = self.degrees.iter().find(|&&p| p == 0 || p > MAX_P) {
            return Err(ConfigError::invalid("degrees", format!("degree {p} outside 1..={MAX_P}")));
        }
        if self.levels > MAX_LEVEL {
            return Err(ConfigError::invalid("levels", format!("{} exceeds {MAX_LEVEL}", self.levels)));
        }
        let target = self.target.resolve()?;
        let linf_grid = self.linf_grid.unwrap_or(DEFAULT_LINF_GRID);
        if linf_grid < MIN_LINF_GRID {
            return Err(ConfigError::invalid("linf_grid", format!("{linf_grid} is below {MIN_LINF_GRID}")));
        }
        let domain = Domain::load(&self.domain, base_dir)?;
        let source = domain.mesh_source(self.cap)?;
        if self.sector_only && domain.ring.as_ref().is_none_or(|r| r.sector.is_none()) {
            return Err(ConfigError::invalid("sector_only", format!("domain {} has no sector", self.domain)));
        }
        if let Some(o) = self.quad_order_override {
            let q = domain.max_q();
            let p = *self.degrees.iter().max().expect("nonempty");
            if o < p + q + 2 || o > 64 {
                return Err(ConfigError::invalid(
                    "quad_order_override",
                    format!("{o} outside {}..=64 for p={p}, q={q}", p + q + 2),
                ));
            }
        }
        let mut degrees = self.degrees.clone();
        degrees.sort_unstable();
        degrees.dedup();
        let options = ErrorOptions {
            r: self.norm.seminorm_order(),
            sector_only: self.sector_only,
            quad_order: self.quad_order_override,
            linf_grid: (self.norm == Norm::Linf).then_some(linf_grid),
        };
        Ok(Experiment { config: self.clone(), degrees, target, domain, source, options })
    }
}

/// A validated configuration, ready to run.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub degrees: Vec<usize>,
    pub target: TargetFunction,
    pub domain: Domain,
    pub source: MeshSource,
    pub options: ErrorOptions,
}

/// A loaded domain: a ring, or a single global map for tensor-grid runs.
#[derive(Clone, Debug)]
pub struct Domain {
    pub label: String,
    pub ring: Option<RingSpec>,
    pub global: Option<ElementMap>,
}

impl Domain {
    pub fn load(spec: &DomainSpec, base_dir: Option<&Path>) -> Result<Self, ConfigError> {
        let label = spec.to_string();
        let ring = |r: RingSpec| Ok(Self { label: label.clone(), ring: Some(r), global: None });
        match spec {
            DomainSpec::Sb1 => ring(make_sb1().1),
            DomainSpec::Sb2 => ring(make_sb2().1),
            DomainSpec::DooSabin(n) | DomainSpec::CatmullClark(n) => {
                let scheme = if matches!(spec, DomainSpec::DooSabin(_)) { Scheme::DooSabin } else { Scheme::CatmullClark };
                let cr = characteristic_ring(SchemeId::new(scheme, *n))
                    .map_err(|e| ConfigError::invalid("domain", e.to_string()))?;
                ring(cr.ring_spec(true))
            }
            DomainSpec::Custom(path) => {
                let full = match base_dir {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                let text = std::fs::read_to_string(&full)
                    .map_err(|source| ConfigError::Io { field: "domain", path: full.clone(), source })?;
                ring(parse_custom_domain(&text)?)
            }
            DomainSpec::Tensor(base) => {
                let g = match base {
                    TensorBase::Sb1 => sb1_global(),
                    TensorBase::Sb2 => sb2_global(),
                };
                Ok(Self { label, ring: None, global: Some(g) })
            }
        }
    }

    /// Level-0 element maps, the ones κ is computed on.
    pub fn elements(&self) -> Vec<ElementMap> {
        match (&self.ring, &self.global) {
            (Some(r), _) => r.elements.clone(),
            (None, Some(g)) => vec![g.clone()],
            (None, None) => Vec::new(),
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        self.ring.as_ref().map(|r| r.lambda)
    }

    fn max_q(&self) -> usize {
        let caps = match self.ring.as_ref().map(|r| &r.cap) {
            Some(CapTemplate::ScaledSingular(p) | CapTemplate::Coons(p)) => p.iter().map(|c| c.map.q).max(),
            _ => None,
        };
        self.elements().iter().map(|g| g.q).chain(caps).max().unwrap_or(1)
    }

    pub fn mesh_source(&self, cap: CapChoice) -> Result<MeshSource, ConfigError> {
        match (&self.ring, &self.global) {
            (Some(ring), _) => {
                let kind = match cap {
                    CapChoice::Auto => ring.default_cap(),
                    CapChoice::Coons => CapKind::CoonsPatch,
                    CapChoice::Scaled => CapKind::ScaledSingular,
                    CapChoice::Excluded => CapKind::Excluded,
                };
                if kind != CapKind::Excluded && ring.cap.kind() != Some(kind) {
                    return Err(ConfigError::invalid("cap", format!("{kind:?} cap not available for {}", self.label)));
                }
                Ok(MeshSource::Ring { ring: ring.clone(), cap: kind })
            }
            (None, Some(g)) => match cap {
                CapChoice::Auto | CapChoice::Excluded => Ok(MeshSource::Tensor(g.clone())),
                _ => Err(ConfigError::invalid("cap", "tensor-grid domains have no cap")),
            },
            (None, None) => Err(ConfigError::invalid("domain", "empty domain")),
        }
    }
}

/// Element map in JSON: coefficient matrices `c[i][j]` of `u^i v^j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapJson {
    pub gx: Poly2,
    pub gy: Poly2,
    #[serde(default)]
    pub allow_singular: bool,
}

impl MapJson {
    fn to_map(&self, field: &'static str) -> Result<ElementMap, ConfigError> {
        for p in [&self.gx, &self.gy] {
            let (du, dv) = p.bidegree();
            if du.max(dv) > MAX_CUSTOM_DEGREE {
                return Err(ConfigError::invalid(field, format!("bidegree ({du},{dv}) exceeds {MAX_CUSTOM_DEGREE}")));
            }
        }
        Ok(ElementMap::new(self.gx.clone(), self.gy.clone()).singular(self.allow_singular))
    }
}

impl From<&ElementMap> for MapJson {
    fn from(g: &ElementMap) -> Self {
        Self { gx: g.gx.clone(), gy: g.gy.clone(), allow_singular: g.allow_singular }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CustomCapKind {
    Scaled,
    Coons,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapPieceJson {
    pub map: MapJson,
    pub owners: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapJson {
    pub kind: CustomCapKind,
    pub pieces: Vec<CapPieceJson>,
}

/// Custom domain file. Either a scaled-boundary map, whose ring and cap
/// are derived, or an explicit ring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CustomDomain {
    ScaledBoundary {
        global: MapJson,
        lambda: f64,
        #[serde(default = "default_split")]
        split: usize,
    },
    Ring {
        lambda: f64,
        elements: Vec<MapJson>,
        #[serde(default)]
        sector: Option<Vec<usize>>,
        #[serde(default)]
        cap: Option<CapJson>,
    },
}

fn default_split() -> usize {
    2
}

impl CustomDomain {
    pub fn to_ring(&self) -> Result<RingSpec, ConfigError> {
        let geom = |e: crate::geometry::GeometryError| ConfigError::invalid("domain", e.to_string());
        match self {
            Self::ScaledBoundary { global, lambda, split } => {
                if *split == 0 || *split > MAX_CUSTOM_ELEMENTS {
                    return Err(ConfigError::invalid("split", format!("{split} outside 1..={MAX_CUSTOM_ELEMENTS}")));
                }
                let g = global.to_map("global")?.singular(true);
                scaled_boundary_ring(&g, *lambda, *split).map_err(geom)
            }
            Self::Ring { lambda, elements, sector, cap } => {
                if elements.len() > MAX_CUSTOM_ELEMENTS {
                    return Err(ConfigError::invalid("elements", format!("more than {MAX_CUSTOM_ELEMENTS} elements")));
                }
                let maps = elements.iter().map(|m| m.to_map("elements")).collect::<Result<Vec<_>, _>>()?;
                let cap = match cap {
                    None => CapTemplate::None,
                    Some(c) => {
                        if c.pieces.len() > MAX_CUSTOM_ELEMENTS {
                            return Err(ConfigError::invalid("cap", "too many cap pieces"));
                        }
                        let pieces = c
                            .pieces
                            .iter()
                            .map(|p| Ok(CapPiece { map: p.map.to_map("cap")?, owners: p.owners.clone() }))
                            .collect::<Result<Vec<_>, ConfigError>>()?;
                        match c.kind {
                            CustomCapKind::Scaled => CapTemplate::ScaledSingular(pieces),
                            CustomCapKind::Coons => CapTemplate::Coons(pieces),
                        }
                    }
                };
                RingSpec::new(maps, *lambda, sector.clone(), cap).map_err(geom)
            }
        }
    }
}

pub fn parse_custom_domain(text: &str) -> Result<RingSpec, ConfigError> {
    serde_json::from_str::<CustomDomain>(text)?.to_ring()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_sb1;

    #[test]
    fn domain_specs_round_trip() {
        for s in ["sb1", "sb2", "ds:5", "cc:3", "custom:dom.json", "tensor:sb1", "tensor:sb2"] {
            assert_eq!(s.parse::<DomainSpec>().unwrap().to_string(), s);
        }
        for s in ["", "sb3", "cc:", "cc:2", "cc:51", "ds:x", "custom:", "tensor:cc", ":"] {
            let e = s.parse::<DomainSpec>().unwrap_err();
            assert_eq!(e.field(), Some("domain"), "{s}");
        }
    }

    #[test]
    fn config_json_and_validation() {
        let c = ExperimentConfig::from_json(
            r#"{"domain":"cc:5","degrees":[3,4,5],"levels":4,"target":"x^2+y^2","sector_only":true}"#,
        )
        .unwrap();
        let x = c.validate(None).unwrap();
        assert_eq!(x.degrees, vec![3, 4, 5]);
        assert!(x.options.sector_only);
        assert!(matches!(x.source, MeshSource::Ring { cap: CapKind::CoonsPatch, .. }));

        let c = ExperimentConfig::from_json(r#"{"domain":"sb1","target":{"coeffs":[[0,0],[0,1]]}}"#).unwrap();
        assert!(matches!(c.validate(None).unwrap().target, TargetFunction::PhysPolynomial(_)));

        let bad = |json: &str| ExperimentConfig::from_json(json).and_then(|c| c.validate(None).map(|_| ())).unwrap_err();
        assert_eq!(bad(r#"{"domain":"sb1","degrees":[]}"#).field(), Some("degrees"));
        assert_eq!(bad(r#"{"domain":"sb1","degrees":[0]}"#).field(), Some("degrees"));
        assert_eq!(bad(r#"{"domain":"sb1","levels":99}"#).field(), Some("levels"));
        assert_eq!(bad(r#"{"domain":"sb1","target":"x^"}"#).field(), Some("target"));
        assert_eq!(bad(r#"{"domain":"sb1","cap":"coons"}"#).field(), Some("cap"));
        assert_eq!(bad(r#"{"domain":"sb1","sector_only":true}"#).field(), Some("sector_only"));
        assert_eq!(bad(r#"{"domain":"sb1","quad_order_override":3}"#).field(), Some("quad_order_override"));
        assert_eq!(bad(r#"{"domain":"tensor:sb1","cap":"scaled"}"#).field(), Some("cap"));
        assert_eq!(bad(r#"{"domain":"sb1","norm":"linf","linf_grid":3}"#).field(), Some("linf_grid"));
        assert_eq!(bad(r#"{"domain":"custom:/nonexistent/x.json"}"#).field(), Some("domain"));
        let e = bad(r#"{"domain":"sb1","bogus":1}"#);
        assert!(e.to_string().contains("bogus"));
    }

    #[test]
    fn custom_scaled_boundary_matches_builtin() {
        let json = r#"{"type":"scaled_boundary","lambda":0.5,
                       "global":{"gx":[[0,0,0],[0,2,-1]],"gy":[[0,0,0],[1,0,-1]]}}"#;
        let ring = parse_custom_domain(json).unwrap();
        assert_eq!(ring, make_sb1().1);
    }

    #[test]
    fn custom_ring() {
        let json = r#"{"type":"ring","lambda":0.5,"elements":[{"gx":[[0],[1]],"gy":[[0,1]]}],"sector":[0]}"#;
        let ring = parse_custom_domain(json).unwrap();
        assert_eq!(ring.elements[0], ElementMap::identity());
        for (json, field) in [
            (r#"{"type":"ring","lambda":1.5,"elements":[{"gx":[[0],[1]],"gy":[[0,1]]}]}"#, "domain"),
            (r#"{"type":"ring","lambda":0.5,"elements":[]}"#, "domain"),
            (r#"{"type":"ring","lambda":0.5,"elements":[{"gx":[[0],[1]],"gy":[[0,1]]}],"sector":[3]}"#, "domain"),
            (r#"{"type":"scaled_boundary","lambda":0.5,"split":0,"global":{"gx":[[1]],"gy":[[1]]}}"#, "split"),
        ] {
            assert_eq!(parse_custom_domain(json).unwrap_err().field(), Some(field), "{json}");
        }
        assert!(parse_custom_domain(r#"{"type":"ring","lambda":0.5,"elements":[{"gx":[[0],[1,2]],"gy":[[0,1]]}]}"#).is_err());
        assert!(parse_custom_domain(r#"{"type":"blob"}"#).is_err());
    }
}
