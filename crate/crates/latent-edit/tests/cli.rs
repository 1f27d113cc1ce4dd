use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latent-edit"))
        .args(args)
        .current_dir(dir)
        .env_remove("LATENT_EDIT_CONFIG")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("oracle.toml"), "preset = \"entangled\"\nseed = 2\n").unwrap();
    let o = run(dir.path(), &["--seed", "1", "sample", "--oracle", "oracle.toml", "--n", "300", "--out", "real.tbl"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["fit-directions", "project", "edit", "train-neutralizer", "neutralize", "sample-balanced", "metrics", "experiment"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
    assert_eq!(code(&run(dir.path(), &["--version"])), 0);
    assert_eq!(code(&run(dir.path(), &["metrics", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = setup();
    assert_eq!(code(&run(dir.path(), &["--bogus"])), 1);
    assert_eq!(code(&run(dir.path(), &["sample", "--oracle", "oracle.toml"])), 1);
    // stochastic commands refuse to run without a seed
    let o = run(dir.path(), &["sample", "--oracle", "oracle.toml", "--n", "5", "--out", "x.tbl"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
    assert!(!dir.path().join("x.tbl").exists());
}

#[test]
fn data_errors_exit_two() {
    let dir = setup();
    let p = dir.path();
    assert_eq!(code(&run(p, &["fit-directions", "--table", "missing.tbl", "--out", "b.txt"])), 2);
    std::fs::write(p.join("short.txt"), "# direction-bank v1\ndimension=32\ndirection au1\ncalibration=1\nintercept=0\ndegenerate=false\nw=1 0\nend\n")
        .unwrap();
    let o = run(p, &["edit", "--table", "real.tbl", "--bank", "short.txt", "--set", "au1=+1", "--out", "e.tbl"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("short.txt:7"), "{}", stderr(&o));
    assert_eq!(code(&run(p, &["fit-directions", "--table", "real.tbl", "--out", "b.txt"])), 0);
    let o = run(p, &["edit", "--table", "real.tbl", "--bank", "b.txt", "--set", "au99=+1", "--out", "e.tbl"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = run(p, &["--param", "neutralize.lamda=1", "fit-directions", "--table", "real.tbl", "--out", "b.txt"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("neutralize.lamda"));
}

#[test]
fn config_file_comes_from_the_environment() {
    let dir = setup();
    let p = dir.path();
    std::fs::write(p.join("run.toml"), "seed = 11\n[fit]\nalpha = 2.5\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_latent-edit"))
        .args(["sample", "--oracle", "oracle.toml", "--n", "10", "--out", "s.tbl"])
        .current_dir(p)
        .env("LATENT_EDIT_CONFIG", "run.toml")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let prov = std::fs::read_to_string(p.join("s.tbl.provenance")).unwrap();
    assert!(prov.contains("seed = 11"), "{prov}");
    assert!(prov.contains("fit.alpha = 2.5"), "{prov}");
    assert!(prov.contains("\"run.toml\" = \"sha256:"), "{prov}");
    // the flag wins over the file
    let o = run(p, &["--config", "run.toml", "--seed", "12", "sample", "--oracle", "oracle.toml", "--n", "10", "--out", "t.tbl"]);
    assert_eq!(code(&o), 0);
    assert!(std::fs::read_to_string(p.join("t.tbl.provenance")).unwrap().contains("seed = 12"));
}

#[test]
fn edit_moves_labels_and_codes() {
    let dir = setup();
    let p = dir.path();
    assert_eq!(code(&run(p, &["fit-directions", "--table", "real.tbl", "--out", "b.txt"])), 0);
    let o = run(p, &["edit", "--table", "real.tbl", "--bank", "b.txt", "--set", "au12=+0.25", "--out", "e.tbl"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let real = latent_edit::table::load(&p.join("real.tbl")).unwrap();
    let edited = latent_edit::table::load(&p.join("e.tbl")).unwrap();
    let bank = latent_edit::bank::load(&p.join("b.txt")).unwrap();
    let d = bank.get("au12").unwrap();
    let i = real.attribute_index("au12").unwrap();
    for r in 0..real.n_rows() {
        let moved: f64 = real.code(r).iter().zip(edited.code(r)).zip(d.w_hat()).map(|((a, b), w)| (b - a) * w).sum();
        assert!((moved * d.calibration() - 0.25).abs() < 1e-9);
        let want = (real.labels(r)[i] + 0.25).min(1.0);
        assert!((edited.labels(r)[i] - want).abs() < 1e-12);
    }
}

#[test]
fn projection_warns_when_nothing_is_left() {
    let dir = setup();
    let p = dir.path();
    assert_eq!(code(&run(p, &["fit-directions", "--table", "real.tbl", "--out", "b.txt"])), 0);
    let o = run(p, &["project", "--bank", "b.txt", "--target", "au1", "--against", "au1", "--out", "p.txt"]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("degenerate"), "{}", stderr(&o));
    let o = run(p, &["edit", "--table", "real.tbl", "--bank", "p.txt", "--set", "au1=+1", "--out", "e.tbl"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn collider_covariates_are_flagged() {
    let dir = setup();
    let o = run(dir.path(), &["fit-directions", "--table", "real.tbl", "--targets", "au1", "--covariates", "au2,age", "--out", "b.txt"]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("`age` is not an AU"), "{}", stderr(&o));
}

#[test]
fn learning_curve_reports_the_multiplier() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut pts = String::from("n\tscore\n");
    for n in [100.0f64, 200.0, 400.0, 800.0, 1600.0] {
        pts.push_str(&format!("{n}\t{}\n", 0.6 - 0.5 * n.powf(-0.4)));
    }
    std::fs::write(p.join("pts.tsv"), pts).unwrap();
    let reference = format!("{}", 0.6 - 0.5 * 4000f64.powf(-0.4));
    let o = run(p, &["metrics", "learning-curve", "--points", "pts.tsv", "--reference", &reference, "--n-current", "1000", "--out", "lc"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(p.join("lc/learning_curve.txt")).unwrap();
    let m: f64 = text.lines().find_map(|l| l.strip_prefix("data_multiplier: ")).unwrap().parse().unwrap();
    assert!((m - 4.0).abs() < 1e-6, "{text}");
    assert!(p.join("lc.provenance").exists());
}
