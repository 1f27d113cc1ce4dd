//! Tab-separated tables and plain-text summaries.

use std::fmt::Write as _;

use latent_edit_core::metrics::{CorrelationReport, F1Report, MaeGroup, PairFprReport, Pow3Fit};

use crate::num::fmt_f64;

/// Masked cells are written as `NA`.
pub fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt_f64)
}

#[derive(Debug, Clone, Default)]
pub struct Tsv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Tsv {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join("\t");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join("\t"));
            s.push('\n');
        }
        s
    }
}

pub fn correlation_tsv(report: &CorrelationReport, names: &[String]) -> Tsv {
    let mut header = vec!["attribute"];
    header.extend(names.iter().map(String::as_str));
    let mut t = Tsv::new(&header);
    for (i, n) in names.iter().enumerate() {
        let mut row = vec![n.clone()];
        row.extend((0..names.len()).map(|j| cell(report.get(i, j))));
        t.push(row);
    }
    t
}

pub fn correlation_text(report: &CorrelationReport, names: &[String]) -> String {
    let masked = report.matrix.iter().filter(|v| v.is_none()).count();
    format!(
        "metric: correlation\nattributes: {}\nmean_abs_offdiag: {}\nmasked_cells: {masked}\n",
        names.join(","),
        cell(report.mean_abs_offdiag)
    )
}

pub fn f1_tsv(report: &F1Report, names: &[String]) -> Tsv {
    let mut t = Tsv::new(&["attribute", "f1", "vacuous"]);
    for (i, n) in names.iter().enumerate() {
        t.push(vec![n.clone(), fmt_f64(report.per_attribute[i]), report.vacuous[i].to_string()]);
    }
    t
}

pub fn f1_text(report: &F1Report, names: &[String], threshold: f64) -> String {
    format!(
        "metric: f1\nattributes: {}\nthreshold: {}\nmacro_f1: {}\nvacuous: {}\n",
        names.join(","),
        fmt_f64(threshold),
        fmt_f64(report.macro_f1),
        report.vacuous.iter().filter(|v| **v).count()
    )
}

/// Long format: one row per ordered pair (absent, present).
pub fn pair_fpr_tsv(report: &PairFprReport, names: &[String]) -> Tsv {
    let mut t = Tsv::new(&["absent", "present", "fpr", "support"]);
    for i in 0..report.size {
        for j in 0..report.size {
            if i != j {
                t.push(vec![names[i].clone(), names[j].clone(), cell(report.get(i, j)), report.support[i * report.size + j].to_string()]);
            }
        }
    }
    t
}

pub fn pair_fpr_text(report: &PairFprReport, names: &[String], threshold: f64) -> String {
    let supported = (0..report.size * report.size).filter(|&c| c / report.size != c % report.size && report.fpr[c].is_some()).count();
    format!(
        "metric: pair-fpr\nattributes: {}\nthreshold: {}\nmean_pair_fpr: {}\nsupported_pairs: {supported}\n",
        names.join(","),
        fmt_f64(threshold),
        cell(report.mean())
    )
}

pub fn mae_tsv(groups: &[MaeGroup]) -> Tsv {
    let mut t = Tsv::new(&["edited", "rows", "mae", "se"]);
    for g in groups {
        t.push(vec![g.edited.to_string(), g.rows.to_string(), fmt_f64(g.mae), cell(g.se)]);
    }
    t
}

pub fn pow3_text(fit: &Pow3Fit, multiplier: Option<Result<f64, String>>) -> String {
    let mut s = format!(
        "metric: learning-curve\nmodel: a - b * n^(-c)\na: {}\nb: {}\nc: {}\nresidual: {}\nflat: {}\n",
        fmt_f64(fit.a),
        fmt_f64(fit.b),
        fmt_f64(fit.c),
        fmt_f64(fit.residual),
        fit.flat
    );
    match multiplier {
        Some(Ok(m)) => {
            let _ = writeln!(s, "data_multiplier: {}", fmt_f64(m));
        }
        Some(Err(e)) => {
            let _ = writeln!(s, "data_multiplier: NA ({e})");
        }
        None => {}
    }
    s
}
