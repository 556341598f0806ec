//! CSV rows for convergence runs.
//!
//! Floats use 17 significant digits (`{:.16e}`); lines end in `\n`.

use std::io::Write;

use ringfem::approx::ErrorReport;

pub const HEADER: [&str; 6] = ["p", "level", "ring_index", "error", "log2_error", "rate"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Ring(usize),
    Cap,
    Total,
    Linf,
}

impl RowKind {
    fn label(self) -> String {
        match self {
            RowKind::Ring(i) => i.to_string(),
            RowKind::Cap => "cap".into(),
            RowKind::Total => "total".into(),
            RowKind::Linf => "linf".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub p: usize,
    pub level: u32,
    pub kind: RowKind,
    pub error: f64,
    /// `log2(previous level / this level)`, on total and linf rows.
    pub rate: Option<f64>,
}

/// Rows for one degree; `reports` are consecutive levels from 0.
pub fn convergence_rows(p: usize, reports: &[ErrorReport]) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    let step = |prev: Option<f64>, cur: f64| match prev {
        Some(a) if a > 0.0 && cur > 0.0 => Some((a / cur).log2()),
        _ => None,
    };
    let mut prev_total = None;
    let mut prev_linf = None;
    for rep in reports {
        for (i, &e) in rep.ring_errors.iter().enumerate() {
            rows.push(CsvRow { p, level: rep.level, kind: RowKind::Ring(i), error: e, rate: None });
        }
        if let Some(c) = rep.cap_error {
            rows.push(CsvRow { p, level: rep.level, kind: RowKind::Cap, error: c, rate: None });
        }
        rows.push(CsvRow { p, level: rep.level, kind: RowKind::Total, error: rep.total, rate: step(prev_total, rep.total) });
        prev_total = Some(rep.total);
        if let Some(l) = rep.linf_proxy {
            rows.push(CsvRow { p, level: rep.level, kind: RowKind::Linf, error: l, rate: step(prev_linf, l) });
            prev_linf = Some(l);
        }
    }
    rows
}

pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn write_csv<W: Write>(rows: &[CsvRow], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            r.p.to_string(),
            r.level.to_string(),
            r.kind.label(),
            fmt_float(r.error),
            fmt_float(r.error.log2()),
            r.rate.map(fmt_float).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(level: u32, rings: Vec<f64>, cap: Option<f64>) -> ErrorReport {
        let total = (rings.iter().map(|e| e * e).sum::<f64>() + cap.unwrap_or(0.0).powi(2)).sqrt();
        ErrorReport {
            level,
            r: 0,
            ring_errors: rings,
            cap_error: cap,
            total,
            ring_linf: None,
            cap_linf: None,
            linf_proxy: None,
            cells: 1,
            svd_fallbacks: 0,
        }
    }

    #[test]
    fn layout() {
        let reps = vec![report(0, vec![0.5], Some(0.0)), report(1, vec![0.0625, 0.0], Some(0.0))];
        let rows = convergence_rows(2, &reps);
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let expect = "p,level,ring_index,error,log2_error,rate
2,0,0,5.0000000000000000e-1,-1.0000000000000000e0,
2,0,cap,0.0000000000000000e0,-inf,
2,0,total,5.0000000000000000e-1,-1.0000000000000000e0,
2,1,0,6.2500000000000000e-2,-4.0000000000000000e0,
2,1,1,0.0000000000000000e0,-inf,
2,1,cap,0.0000000000000000e0,-inf,
2,1,total,6.2500000000000000e-2,-4.0000000000000000e0,3.0000000000000000e0
";
        assert_eq!(text, expect);
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.powf(-31.9793), 6.02214076e23] {
            assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
        }
    }
}
