use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use ringfem::approx::{convergence, ApproxError};
use ringfem::config::{CapChoice, ConfigError, Domain, DomainSpec, Experiment, MAX_LEVEL};
use ringfem::rates::{render_tables, summary_tables};
use ringfem::reproduction::{reproduction_degree, KAPPA_TOL};
use ringfem::subdivision::{characteristic_ring, Scheme, SchemeId};

use crate::output::{convergence_rows, write_csv, CsvRow};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Output(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<ApproxError> for CliError {
    fn from(e: ApproxError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

pub fn convergence_table(exp: &Experiment) -> Result<Vec<CsvRow>, CliError> {
    let mut rows = Vec::new();
    for &p in &exp.degrees {
        log::info!("{}: p={p}, levels 0..={}", exp.domain.label, exp.config.levels);
        let reports = convergence(&exp.target, &exp.source, p, exp.config.levels, &exp.options)?;
        rows.extend(convergence_rows(p, &reports));
    }
    Ok(rows)
}

pub fn convergence_csv(exp: &Experiment) -> Result<String, CliError> {
    let rows = convergence_table(exp)?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).map_err(|e| CliError::Output(e.to_string()))?;
    Ok(String::from_utf8(buf).expect("csv output is ASCII"))
}

/// Per-element, per-degree reproduction table and the minimum κ₀.
pub fn kappa_text(domain: &Domain, degrees: &[usize]) -> String {
    let elements = domain.elements();
    let mut out = String::new();
    writeln!(out, "domain: {}", domain.label).expect("string write");
    for &p in degrees {
        writeln!(out, "p = {p}").expect("string write");
        let mut kappa0 = i32::MAX;
        for (n, g) in elements.iter().enumerate() {
            let rep = reproduction_degree(g, p, KAPPA_TOL);
            writeln!(out, "  element {n}: kappa = {}", rep.kappa).expect("string write");
            for d in &rep.per_degree {
                let mut all: Vec<_> = d.passed.iter().map(|m| (*m, "pass")).chain(d.failed.iter().map(|m| (*m, "fail"))).collect();
                all.sort_by_key(|(m, _)| std::cmp::Reverse(m.alpha));
                let cells: Vec<String> = all.iter().map(|(m, s)| format!("{m} {s}")).collect();
                writeln!(out, "    degree {}: {}", d.degree, cells.join(", ")).expect("string write");
            }
            kappa0 = kappa0.min(rep.kappa);
        }
        writeln!(out, "  kappa0 = {kappa0}").expect("string write");
    }
    out
}

/// JSON dump of a characteristic ring; `spec` is `ds:<n>` or `cc:<n>`.
pub fn char_ring_json(spec: &str, samples: usize) -> Result<String, CliError> {
    let id = match spec.parse::<DomainSpec>()? {
        DomainSpec::DooSabin(n) => SchemeId::new(Scheme::DooSabin, n),
        DomainSpec::CatmullClark(n) => SchemeId::new(Scheme::CatmullClark, n),
        other => return Err(ConfigError::invalid("domain", format!("{other} is not a subdivision scheme")).into()),
    };
    let ring = characteristic_ring(id).map_err(|e| CliError::Numeric(e.to_string()))?;
    Ok(serde_json::to_string_pretty(&ring.dump(samples)).expect("serializable"))
}

pub fn tables_text() -> Result<String, CliError> {
    let t = summary_tables().map_err(|e| CliError::Numeric(e.to_string()))?;
    Ok(render_tables(&t))
}

pub fn mesh_json(domain: &Domain, level: u32, cap: CapChoice) -> Result<String, CliError> {
    if level > MAX_LEVEL {
        return Err(ConfigError::invalid("levels", format!("{level} exceeds {MAX_LEVEL}")).into());
    }
    let mesh = domain
        .mesh_source(cap)?
        .mesh(level)
        .map_err(|e| ConfigError::invalid("cap", e.to_string()))?;
    Ok(serde_json::to_string_pretty(&mesh.export()).expect("serializable"))
}

pub fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Output(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Output(e.to_string())),
                _ => Ok(()),
            }
        }
    }
}
