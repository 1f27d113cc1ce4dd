//! End-to-end acceptance checks. Runs without the libtest harness and
//! prints one PASS/FAIL line per criterion; exits nonzero on any failure.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use latent_edit::runner;
use latent_edit_core::editor::apply_edit;
use latent_edit_core::experiment::{
    build_edited_set, mark_origin, neutral_rows, AugmentationPlan, ExperimentConfig, ExperimentData, Scenario,
};
use latent_edit_core::geometry::{orthonormalize, project_out};
use latent_edit_core::linfit::{extract_direction, fit_directions, fit_logistic, fit_ridge, DirectionFitConfig, LinearPredictor};
use latent_edit_core::metrics::{correlation_matrix, data_multiplier, fit_pow3};
use latent_edit_core::neutralizer::{
    neutralize, objective_gradient, objective_value, predict_aus, train_neutralizer, NeutralizationTarget, NeutralizeConfig,
    NeutralizerConfig, StopPolicy, StopReason,
};
use latent_edit_core::sampler::{oracle_sample, presets, OracleSpec};
use latent_edit_core::{AttributeRole, AttributeTable, Direction, DirectionBank, LatentCode, Provenance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn abs_cos(a: &[f64], b: &[f64]) -> f64 {
    (dot(a, b) / (norm(a) * norm(b))).abs()
}

fn within(t: Instant, limit: Duration) -> Result<Duration, String> {
    let e = t.elapsed();
    if e < limit {
        Ok(e)
    } else {
        Err(format!("took {e:.2?}, limit {limit:?}"))
    }
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn direction_fidelity() -> Outcome {
    let t0 = Instant::now();
    let spec = presets::independent(1);
    if (spec.k(), spec.dimension(), spec.noise_sigma()) != (6, 32, 0.05) {
        return Err("preset does not match the required oracle".into());
    }
    let table = oracle_sample(&spec, 5000, 1).map_err(|e| e.to_string())?;
    let mut worst = f64::INFINITY;
    for (i, name) in names("au", 6).iter().enumerate() {
        let dir = extract_direction(&fit_ridge(&table, name, &[], 10.0).map_err(|e| e.to_string())?);
        let c = abs_cos(dir.w_hat(), &spec.factor_axis(i));
        worst = worst.min(c);
        if c < 0.9 {
            return Err(format!("{name}: |cos| = {c:.4} < 0.9"));
        }
    }
    let e = within(t0, Duration::from_secs(10))?;
    Ok(format!("min |cos| = {worst:.4} over 6 factors in {e:.2?}"))
}

fn conditioning_reduces_leakage() -> Outcome {
    let peers: Vec<String> = names("au", 6).into_iter().skip(1).collect();
    let mut gaps = Vec::new();
    for seed in 0..20u64 {
        let spec = presets::confounded(seed);
        let c = spec.correlation();
        if (c[1] - 0.6).abs() > 1e-12 {
            return Err("confounded oracle lacks corr(f1, f2) = 0.6".into());
        }
        let table = oracle_sample(&spec, 5000, seed).map_err(|e| e.to_string())?;
        let axis2 = spec.factor_axis(1);
        let base = extract_direction(&fit_ridge(&table, "au1", &[], 10.0).map_err(|e| e.to_string())?);
        let cond = extract_direction(&fit_ridge(&table, "au1", &peers, 10.0).map_err(|e| e.to_string())?);
        let (b, k) = (abs_cos(base.w_hat(), &axis2), abs_cos(cond.w_hat(), &axis2));
        if k >= b {
            return Err(format!("seed {seed}: conditioned alignment {k:.4} >= base {b:.4}"));
        }
        gaps.push(b - k);
    }
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(format!("conditioned < base on 20/20 oracles, smallest gap {min_gap:.4}"))
}

fn projection_exactness() -> Outcome {
    let t0 = Instant::now();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let diag = Direction::new("diag", vec![r, r], 1.0, Provenance::default(), 0.0, false).map_err(|e| e.to_string())?;
    let x = Direction::new("x", vec![1.0, 0.0], 1.0, Provenance::default(), 0.0, false).map_err(|e| e.to_string())?;
    let basis = orthonormalize(&[&x], 1e-8).map_err(|e| e.to_string())?;
    let p = project_out(&diag, &basis).map_err(|e| e.to_string())?;
    if (p.w_hat()[0]).abs() > 1e-12 || (p.w_hat()[1] - 1.0).abs() > 1e-12 {
        return Err(format!("hand case gave {:?}", p.w_hat()));
    }

    let spec = presets::entangled(2);
    let table = oracle_sample(&spec, 2000, 2).map_err(|e| e.to_string())?;
    let all = names("au", 12);
    let fitted = fit_directions(&table, &all, &DirectionFitConfig::default()).map_err(|e| e.to_string())?;
    let dirs: Vec<&Direction> = fitted.iter().map(|(_, d)| d).collect();
    let (mut max_dot, mut max_idem) = (0.0f64, 0.0f64);
    for target in 0..dirs.len() {
        let nuisance: Vec<&Direction> = (1..=5).map(|k| dirs[(target + k) % dirs.len()]).collect();
        let basis = orthonormalize(&nuisance, 1e-8).map_err(|e| e.to_string())?;
        let once = project_out(dirs[target], &basis).map_err(|e| e.to_string())?;
        for b in basis.basis() {
            max_dot = max_dot.max(dot(once.w_hat(), b).abs());
        }
        let twice = project_out(&once, &basis).map_err(|e| e.to_string())?;
        for (a, b) in once.w_hat().iter().zip(twice.w_hat()) {
            max_idem = max_idem.max((a - b).abs());
        }
        max_idem = max_idem.max((once.calibration() - twice.calibration()).abs() / once.calibration());
    }
    if max_dot >= 1e-9 {
        return Err(format!("residual dot {max_dot:e}"));
    }
    if max_idem >= 1e-9 {
        return Err(format!("projection not idempotent: {max_idem:e}"));
    }
    let e = within(t0, Duration::from_secs(1))?;
    Ok(format!("hand case (0,1); max |dot| {max_dot:.1e}; idempotence {max_idem:.1e}; {e:.2?}"))
}

fn edit_calibration() -> Outcome {
    let spec = presets::entangled(5);
    let table = oracle_sample(&spec, 2000, 5).map_err(|e| e.to_string())?;
    let aus = names("au", 12);
    let mut preds: Vec<LinearPredictor> = Vec::new();
    for condition_on_peers in [false, true] {
        let cfg = DirectionFitConfig { condition_on_peers, ..DirectionFitConfig::default() };
        preds.extend(fit_directions(&table, &aus, &cfg).map_err(|e| e.to_string())?.into_iter().map(|(p, _)| p));
    }
    preds.push(fit_ridge(&table, "age", &[], 10.0).map_err(|e| e.to_string())?);
    preds.push(fit_logistic(&table, "gender", &[], 1.0).map_err(|e| e.to_string())?);

    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst = 0.0f64;
    for pred in &preds {
        let dir = extract_direction(pred);
        for _ in 0..1000 {
            let z: Vec<f64> = (0..32).map(|_| rng.random_range(-2.0..2.0)).collect();
            let cov: Vec<f64> = pred.covariates.iter().map(|_| rng.random_range(0.0..1.0)).collect();
            let s = rng.random_range(-2.0..2.0);
            let code = LatentCode::new(z.clone()).map_err(|e| e.to_string())?;
            let edited = apply_edit(&code, &dir, s).map_err(|e| e.to_string())?;
            let before = pred.affine(&z, &cov).map_err(|e| e.to_string())?;
            let after = pred.affine(edited.z(), &cov).map_err(|e| e.to_string())?;
            worst = worst.max((after - before - s).abs());
        }
    }
    if worst >= 1e-9 {
        return Err(format!("worst calibration error {worst:e}"));
    }
    Ok(format!("{} predictors x 1000 codes, worst error {worst:.1e}", preds.len()))
}

/// Codes whose AU factors are all zero except one drawn from [0.6, 1).
fn single_au_codes(spec: &OracleSpec, n_aus: usize, n: usize, seed: u64) -> Result<Vec<LatentCode>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut f = spec.draw_factors(&mut rng);
            let active = rng.random_range(0..n_aus);
            for (i, v) in f.iter_mut().take(n_aus).enumerate() {
                *v = if i == active { rng.random_range(0.6..1.0) } else { 0.0 };
            }
            LatentCode::new(spec.encode(&f, &mut rng).map_err(|e| e.to_string())?).map_err(|e| e.to_string())
        })
        .collect()
}

fn neutralization_effectiveness() -> Outcome {
    let t0 = Instant::now();
    let spec = presets::expressive(4);
    let n_aus = spec.factors().iter().filter(|f| f.role == AttributeRole::Au).count();
    let table = oracle_sample(&spec, 2000, 4).map_err(|e| e.to_string())?;
    let cfg = NeutralizerConfig { width: 64, head_width: 32, max_epochs: 200, seed: 4, ..NeutralizerConfig::default() };
    let model = train_neutralizer(&table, &cfg).map_err(|e| e.to_string())?.model;
    let samples = single_au_codes(&spec, n_aus, 100, 9)?;

    let mut ok = 0;
    for (i, z) in samples.iter().enumerate() {
        let out = neutralize(z, &model, &NeutralizeConfig { seed: i as u64, ..NeutralizeConfig::default() })
            .map_err(|e| e.to_string())?;
        let pred = predict_aus(&model, &out.code).map_err(|e| e.to_string())?;
        let truth = spec.recover_factors(out.code.z()).map_err(|e| e.to_string())?;
        if pred.iter().all(|&p| p < 0.1) && truth[..n_aus].iter().all(|&f| f < 0.2) {
            ok += 1;
        }
    }
    if ok < 95 {
        return Err(format!("only {ok}/100 samples neutralized"));
    }

    let mut worst = 0.0f64;
    for z in samples.iter().take(5) {
        let z0 = z.z();
        let target = NeutralizationTarget::neutral(&model, z0).map_err(|e| e.to_string())?;
        let zs: Vec<f64> = z0.iter().map(|v| v + 0.05).collect();
        let (_, g) = objective_gradient(&model, &zs, z0, &target, 0.004, None).map_err(|e| e.to_string())?;
        let h = 1e-5;
        let fd: Vec<f64> = (0..zs.len())
            .map(|i| {
                let mut p = zs.clone();
                let mut m = zs.clone();
                p[i] += h;
                m[i] -= h;
                let f = |v: &[f64]| objective_value(&model, v, z0, &target, 0.004).unwrap();
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = fd.iter().zip(&g).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&fd).max(norm(&g)));
    }
    if worst >= 1e-4 {
        return Err(format!("gradient relative error {worst:e}"));
    }
    let e = within(t0, Duration::from_secs(120))?;
    Ok(format!("{ok}/100 neutralized; gradient relative error {worst:.1e}; {e:.1?}"))
}

fn stop_policy() -> Outcome {
    let p = StopPolicy::default();
    let flat = vec![0.5; 1000];
    let first = (1..=flat.len()).find(|&t| p.should_stop(&flat[..t])).ok_or("flat trace never stops")?;
    if first != p.window + p.horizon {
        return Err(format!("stopped at step {first}, expected {}", p.window + p.horizon));
    }
    let spec = presets::expressive(0);
    let table = oracle_sample(&spec, 200, 0).map_err(|e| e.to_string())?;
    let cfg = NeutralizerConfig { width: 16, head_width: 8, max_epochs: 2, ..NeutralizerConfig::default() };
    let model = train_neutralizer(&table, &cfg).map_err(|e| e.to_string())?.model;
    let out = neutralize(&table.latent(0), &model, &NeutralizeConfig { lr: 0.0, ..NeutralizeConfig::default() })
        .map_err(|e| e.to_string())?;
    if out.trace.len() != first || out.stop_reason != StopReason::Converged {
        return Err(format!("frozen optimization stopped after {} steps", out.trace.len()));
    }
    Ok(format!("flat trace stops at step {first} (window {} + horizon {})", p.window, p.horizon))
}

fn balanced_augmentation() -> Outcome {
    let spec = presets::entangled(3);
    let table = oracle_sample(&spec, 1000, 3).map_err(|e| e.to_string())?;
    let aus = table.names_with_role(AttributeRole::Au);
    let cfg = DirectionFitConfig { condition_on_peers: true, ..DirectionFitConfig::default() };
    let mut bank = DirectionBank::new(table.dimension());
    for (_, d) in fit_directions(&table, &aus, &cfg).map_err(|e| e.to_string())? {
        bank.insert(d).map_err(|e| e.to_string())?;
    }
    let plan = AugmentationPlan::default();
    let neutral = table.select_rows(&neutral_rows(&table, plan.threshold));
    let edited = build_edited_set(&neutral, &bank, &plan).map_err(|e| e.to_string())?;
    let counts: Vec<usize> = table
        .indices_with_role(AttributeRole::Au)
        .iter()
        .map(|&i| (0..edited.n_rows()).filter(|&r| edited.labels(r)[i] >= plan.threshold).count())
        .collect();
    if counts.iter().any(|&c| c != counts[0]) || counts[0] == 0 {
        return Err(format!("per-AU positive counts {counts:?}"));
    }
    Ok(format!("{} neutral rows; every AU has {} positives", neutral.n_rows(), counts[0]))
}

fn downstream_direction_of_effect() -> Outcome {
    let t0 = Instant::now();
    let cfg = ExperimentConfig { curve_fractions: Vec::new(), ..ExperimentConfig::default() };
    let seeds: Vec<u64> = (0..5).collect();
    let outcomes = runner::run(|s| Ok(presets::entangled(s)), &[Scenario::Baseline, Scenario::Augmented], &seeds, &cfg)
        .map_err(|e| e.to_string())?;
    let (f1, fpr, n) = runner::wins_over_baseline(&outcomes, Scenario::Augmented);
    let e = within(t0, Duration::from_secs(600))?;
    let detail = format!("augmented beats baseline: macro-F1 {f1}/{n}, pair-FPR {fpr}/{n}; {e:.1?}");
    if f1 >= 4 && fpr >= 4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn pow3_recovery() -> Outcome {
    let (a, b, c) = (0.6, 0.5, 0.4);
    let f = |n: f64| a - b * n.powf(-c);
    let points: Vec<(f64, f64)> = [50.0, 100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0].iter().map(|&n| (n, f(n))).collect();
    let fit = fit_pow3(&points).map_err(|e| e.to_string())?;
    let err = (fit.a - a).abs().max((fit.b - b).abs()).max((fit.c - c).abs());
    if err >= 1e-3 {
        return Err(format!("recovered ({}, {}, {})", fit.a, fit.b, fit.c));
    }
    // the true curve reaches f(5000) at n = 5000 exactly
    let (reference, n_current) = (f(5000.0), 1000.0);
    let m = data_multiplier(&fit, reference, n_current).map_err(|e| e.to_string())?;
    let analytic = (b / (a - reference)).powf(1.0 / c) / n_current;
    if (m - analytic).abs() >= 1e-6 {
        return Err(format!("multiplier {m} vs analytic {analytic}"));
    }
    Ok(format!("max parameter error {err:.1e}; multiplier {m:.6} (analytic {analytic:.6})"))
}

fn recovered(spec: &OracleSpec, t: &AttributeTable, k: usize) -> Result<Vec<f64>, String> {
    let mut v = Vec::with_capacity(t.n_rows() * k);
    for r in 0..t.n_rows() {
        v.extend_from_slice(&spec.recover_factors(t.code(r)).map_err(|e| e.to_string())?[..k]);
    }
    Ok(v)
}

fn correlation_mechanism() -> Outcome {
    let cfg = ExperimentConfig::default();
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let spec = presets::coactivation(seed);
        let data = ExperimentData::generate(&spec, &cfg, seed, true, true).map_err(|e| e.to_string())?;
        let k = data.aus.len();
        let raw = correlation_matrix(&recovered(&spec, &data.real, k)?, k).map_err(|e| e.to_string())?;
        let edited = data.edited.as_ref().ok_or("no edited set")?;
        let synthetic = &data.synthetic.as_ref().ok_or("no synthetic set")?.table;
        let generated = mark_origin(edited, false).and_then(|t| t.concat(synthetic)).map_err(|e| e.to_string())?;
        let gen = correlation_matrix(&recovered(&spec, &generated, k)?, k).map_err(|e| e.to_string())?;
        let (Some(r), Some(g)) = (raw.mean_abs_offdiag, gen.mean_abs_offdiag) else {
            return Err(format!("seed {seed}: correlation undefined"));
        };
        if g >= r {
            return Err(format!("seed {seed}: generated {g:.4} >= raw {r:.4}"));
        }
        pairs.push(format!("{r:.3}->{g:.3}"));
    }
    Ok(format!("mean |offdiag| raw->generated: {}", pairs.join(", ")))
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_latent-edit"))
        .args(args)
        .current_dir(dir)
        .env_remove("LATENT_EDIT_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn snapshot(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = entry.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).map_err(|e| e.to_string())?));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn reproducibility() -> Outcome {
    let pipeline: &[&[&str]] = &[
        &["--seed", "5", "sample", "--oracle", "oracle.toml", "--n", "400", "--out", "real.tbl"],
        &["fit-directions", "--table", "real.tbl", "--condition-on-peers", "--out", "bank.txt"],
        &["project", "--bank", "bank.txt", "--target", "au1", "--against", "au2", "--out", "projected.txt"],
        &["edit", "--table", "real.tbl", "--bank", "projected.txt", "--set", "au1=+0.5", "--out", "edited.tbl"],
        &["fit-predictors", "--table", "real.tbl", "--binary", "gender", "--binned", "age:3", "--out", "preds.txt"],
        &[
            "--seed", "6", "sample-balanced", "--filter", "gender,age3", "--per-cell", "5", "--predictors", "preds.txt",
            "--oracle", "oracle.toml", "--out", "balanced.tbl",
        ],
        &[
            "--seed", "7", "--param", "neutralizer.width=32", "--param", "neutralizer.head_width=16", "--param",
            "neutralizer.max_epochs=15", "train-neutralizer", "--table", "real.tbl", "--out", "model.bin", "--history",
            "history.tsv",
        ],
        &[
            "--seed", "8", "neutralize", "--table", "balanced.tbl", "--model", "model.bin", "--out", "neutral.tbl", "--trace",
            "traces",
        ],
        &["metrics", "corr", "--table", "real.tbl", "--oracle", "oracle.toml", "--out", "corr"],
        &["metrics", "f1", "--truth", "real.tbl", "--model", "model.bin", "--out", "f1"],
        &["metrics", "pair-fpr", "--truth", "real.tbl", "--model", "model.bin", "--out", "fpr"],
        &["metrics", "mae", "--edited", "edited.tbl", "--target", "real.tbl", "--out", "mae"],
    ];
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut snaps = Vec::new();
    for run in ["a", "b"] {
        let dir = root.path().join(run);
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        std::fs::write(dir.join("oracle.toml"), "preset = \"entangled\"\nseed = 3\n").map_err(|e| e.to_string())?;
        for args in pipeline {
            run_cli(&dir, args)?;
        }
        snaps.push(snapshot(&dir)?);
    }
    if snaps[0].len() != snaps[1].len() {
        return Err("runs produced different file sets".into());
    }
    for ((na, a), (nb, b)) in snaps[0].iter().zip(&snaps[1]) {
        if na != nb || a != b {
            return Err(format!("`{na}` differs between runs"));
        }
    }
    Ok(format!("{} commands, {} files byte-identical across two runs", pipeline.len(), snaps[0].len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("direction fidelity", direction_fidelity),
        ("conditioning reduces leakage", conditioning_reduces_leakage),
        ("projection exactness", projection_exactness),
        ("edit calibration", edit_calibration),
        ("neutralization effectiveness", neutralization_effectiveness),
        ("stop policy", stop_policy),
        ("balanced augmentation", balanced_augmentation),
        ("downstream direction of effect", downstream_direction_of_effect),
        ("POW3 recovery", pow3_recovery),
        ("correlation report mechanism", correlation_mechanism),
        ("reproducibility", reproducibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|f| if f.parse::<usize>().is_ok() { *f == id } else { name.contains(f.as_str()) }) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{:.1?}]", t.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {why} [{:.1?}]", t.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
