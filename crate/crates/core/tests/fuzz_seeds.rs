//! Replays the checked-in fuzz corpus seeds with the fuzz target bodies.
//! Seeds named `ok_*` must be accepted and `err_*` rejected.

use std::path::PathBuf;

use ringfem::approx::TargetFunction;
use ringfem::config::{parse_custom_domain, DomainSpec, ExperimentConfig};
use ringfem::expr::Expr;
use ringfem::geometry::build_mesh;

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read_to_string(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn replay(target: &str, accept: impl Fn(&str) -> bool) {
    for (name, text) in seeds(target) {
        let ok = accept(&text);
        if name.starts_with("ok_") {
            assert!(ok, "{target}/{name} rejected");
        } else if name.starts_with("err_") {
            assert!(!ok, "{target}/{name} accepted");
        }
    }
}

#[test]
fn expr_parse_seeds() {
    replay("expr_parse", |s| match Expr::parse(s) {
        Ok(e) => {
            let printed = e.to_string();
            assert_eq!(Expr::parse(&printed).unwrap().to_string(), printed);
            let _ = e.eval(0.3, -0.7);
            let _ = e.to_poly();
            true
        }
        Err(_) => false,
    });
}

#[test]
fn target_function_seeds() {
    replay("target_function", |s| match TargetFunction::parse(s) {
        Ok(t) => {
            let _ = t.jet(0.25, 0.5);
            TargetFunction::parse(&t.to_string()).unwrap();
            true
        }
        Err(_) => false,
    });
}

#[test]
fn domain_spec_seeds() {
    replay("domain_spec", |s| match s.parse::<DomainSpec>() {
        Ok(d) => {
            assert_eq!(d.to_string().parse::<DomainSpec>().unwrap(), d);
            true
        }
        Err(_) => false,
    });
}

#[test]
fn experiment_config_seeds() {
    replay("experiment_config", |s| {
        ExperimentConfig::from_json(s).is_ok_and(|c| matches!(c.domain, DomainSpec::Custom(_)) || c.validate(None).is_ok())
    });
}

#[test]
fn custom_domain_seeds() {
    replay("custom_domain", |s| match parse_custom_domain(s) {
        Ok(ring) => build_mesh(&ring, 1, ring.default_cap()).is_ok(),
        Err(_) => false,
    });
}
