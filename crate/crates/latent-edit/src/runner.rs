//! Multi-seed experiment runs and their report files.

use std::fmt::Write as _;
use std::path::Path;

use latent_edit_core::experiment::{run_scenario, ExperimentConfig, ExperimentData, Scenario, ScenarioReport};
use latent_edit_core::metrics::{data_multiplier, fit_pow3, mean_sd};
use latent_edit_core::sampler::OracleSpec;
use rayon::prelude::*;

use crate::error::Result;
use crate::files;
use crate::num::fmt_f64;
use crate::report::{cell, Tsv};

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    /// In the order the scenarios were requested.
    pub reports: Vec<ScenarioReport>,
    pub synthetic_attempted: usize,
    pub synthetic_failed: usize,
}

impl SeedOutcome {
    pub fn get(&self, s: Scenario) -> Option<&ScenarioReport> {
        self.reports.iter().find(|r| r.scenario == s)
    }
}

/// Runs every scenario for every seed; seeds and scenarios run in
/// parallel, results come back in input order.
pub fn run<F>(spec_for: F, scenarios: &[Scenario], seeds: &[u64], config: &ExperimentConfig) -> Result<Vec<SeedOutcome>>
where
    F: Fn(u64) -> Result<OracleSpec> + Sync,
{
    let edited = scenarios.iter().any(|s| s.uses_edited());
    let synthetic = scenarios.iter().any(|s| s.uses_synthetic());
    seeds
        .par_iter()
        .map(|&seed| {
            let spec = spec_for(seed)?;
            let data = ExperimentData::generate(&spec, config, seed, edited, synthetic)?;
            let reports = scenarios
                .par_iter()
                .map(|&s| run_scenario(&spec, &data, s, config))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let (attempted, failed) = data.synthetic.as_ref().map_or((0, 0), |s| (s.attempted, s.failed));
            Ok(SeedOutcome { seed, reports, synthetic_attempted: attempted, synthetic_failed: failed })
        })
        .collect()
}

/// Seeds on which `scenario` beats the baseline: (macro-F1 higher, mean
/// pair-FPR lower, seeds compared).
pub fn wins_over_baseline(outcomes: &[SeedOutcome], scenario: Scenario) -> (usize, usize, usize) {
    let mut f1 = 0;
    let mut fpr = 0;
    let mut n = 0;
    for o in outcomes {
        if let (Some(b), Some(s)) = (o.get(Scenario::Baseline), o.get(scenario)) {
            n += 1;
            f1 += usize::from(s.macro_f1 > b.macro_f1);
            if let (Some(x), Some(y)) = (s.mean_pair_fpr, b.mean_pair_fpr) {
                fpr += usize::from(x < y);
            }
        }
    }
    (f1, fpr, n)
}

/// Real-data multiplier the baseline would need to match the augmented
/// score, from a POW3 fit of the baseline learning curve.
pub fn multiplier(outcome: &SeedOutcome) -> Option<std::result::Result<f64, String>> {
    let b = outcome.get(Scenario::Baseline)?;
    let a = outcome.get(Scenario::Augmented)?;
    let points: Vec<(f64, f64)> = b.curve.iter().map(|p| (p.n_real as f64, p.macro_f1)).collect();
    let fit = match fit_pow3(&points) {
        Ok(f) => f,
        Err(e) => return Some(Err(e.to_string())),
    };
    Some(data_multiplier(&fit, a.macro_f1, b.real_rows as f64).map_err(|e| e.to_string()))
}

pub fn write_reports(dir: &Path, outcomes: &[SeedOutcome], scenarios: &[Scenario]) -> Result<()> {
    files::create_dir(dir)?;
    let mut summary = Tsv::new(&[
        "scenario",
        "seed",
        "macro_f1",
        "mean_pair_fpr",
        "real_rows",
        "edited_rows",
        "synthetic_rows",
        "train_rows",
        "best_epoch",
    ]);
    let mut per_au = Tsv::new(&["scenario", "seed", "au", "f1", "weight"]);
    let mut fpr = Tsv::new(&["scenario", "seed", "absent", "present", "fpr", "support"]);
    let mut curve = Tsv::new(&["scenario", "seed", "fraction", "n_real", "macro_f1"]);
    for o in outcomes {
        for r in &o.reports {
            let s = r.scenario.as_str().to_string();
            let seed = o.seed.to_string();
            summary.push(vec![
                s.clone(),
                seed.clone(),
                fmt_f64(r.macro_f1),
                cell(r.mean_pair_fpr),
                r.real_rows.to_string(),
                r.edited_rows.to_string(),
                r.synthetic_rows.to_string(),
                r.train_rows.to_string(),
                r.best_epoch.to_string(),
            ]);
            for (k, au) in r.aus.iter().enumerate() {
                let w = r.au_weights.as_ref().map(|w| w[k]);
                per_au.push(vec![s.clone(), seed.clone(), au.clone(), fmt_f64(r.per_au_f1[k]), cell(w)]);
            }
            let m = r.pair_fpr.size;
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        fpr.push(vec![
                            s.clone(),
                            seed.clone(),
                            r.aus[i].clone(),
                            r.aus[j].clone(),
                            cell(r.pair_fpr.get(i, j)),
                            r.pair_fpr.support[i * m + j].to_string(),
                        ]);
                    }
                }
            }
            for p in &r.curve {
                curve.push(vec![s.clone(), seed.clone(), fmt_f64(p.fraction), p.n_real.to_string(), fmt_f64(p.macro_f1)]);
            }
        }
    }

    let mut aggregate = Tsv::new(&["scenario", "metric", "mean", "sd", "seeds"]);
    let mut text = String::from("experiment report\n");
    let _ = writeln!(text, "seeds: {}", outcomes.iter().map(|o| o.seed.to_string()).collect::<Vec<_>>().join(","));
    for &sc in scenarios {
        let rs: Vec<&ScenarioReport> = outcomes.iter().filter_map(|o| o.get(sc)).collect();
        let f1: Vec<f64> = rs.iter().map(|r| r.macro_f1).collect();
        let pf: Vec<f64> = rs.iter().filter_map(|r| r.mean_pair_fpr).collect();
        let _ = writeln!(text, "\n[{}]", sc.as_str());
        for (name, v) in [("macro_f1", &f1), ("mean_pair_fpr", &pf)] {
            let (mean, sd) = mean_sd(v);
            aggregate.push(vec![sc.as_str().to_string(), name.to_string(), fmt_f64(mean), cell(sd), v.len().to_string()]);
            let _ = writeln!(text, "{name}: mean {} sd {} over {} seeds", fmt_f64(mean), cell(sd), v.len());
        }
        if sc != Scenario::Baseline {
            let (w1, w2, n) = wins_over_baseline(outcomes, sc);
            if n > 0 {
                let _ = writeln!(text, "beats baseline: macro_f1 on {w1}/{n} seeds, mean_pair_fpr on {w2}/{n} seeds");
            }
        }
    }
    let failures: Vec<String> = outcomes
        .iter()
        .filter(|o| o.synthetic_attempted > 0)
        .map(|o| format!("seed {}: {}/{}", o.seed, o.synthetic_failed, o.synthetic_attempted))
        .collect();
    if !failures.is_empty() {
        let _ = writeln!(text, "\nneutralization failures: {}", failures.join("; "));
    }
    let mults: Vec<String> = outcomes
        .iter()
        .filter_map(|o| {
            multiplier(o).map(|m| match m {
                Ok(v) => format!("seed {}: {}", o.seed, fmt_f64(v)),
                Err(e) => format!("seed {}: NA ({e})", o.seed),
            })
        })
        .collect();
    if !mults.is_empty() {
        let _ = writeln!(text, "\nreal-data multiplier to match augmented (POW3 on baseline curve):");
        for m in mults {
            let _ = writeln!(text, "  {m}");
        }
    }

    files::write(&dir.join("summary.tsv"), summary.render().as_bytes())?;
    files::write(&dir.join("per_au_f1.tsv"), per_au.render().as_bytes())?;
    files::write(&dir.join("pair_fpr.tsv"), fpr.render().as_bytes())?;
    files::write(&dir.join("curve.tsv"), curve.render().as_bytes())?;
    files::write(&dir.join("aggregate.tsv"), aggregate.render().as_bytes())?;
    files::write(&dir.join("report.txt"), text.as_bytes())
}
