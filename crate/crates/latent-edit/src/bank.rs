//! Direction-bank text format.
//!
//! ```text
//! # direction-bank v1
//! dimension=3
//! direction au12
//! calibration=2.5
//! intercept=0.1
//! degenerate=false
//! conditioned=au6,au25
//! projected=eyeglasses
//! w=0.6 0.8 0
//! end
//! ```
//!
//! `conditioned=` appears at most once; `projected=` once per projection
//! step, in order.

use std::fmt::Write as _;
use std::path::Path;

use latent_edit_core::{Direction, DirectionBank, Provenance};

use crate::error::{Error, Result};
use crate::files;
use crate::num::{fmt_f64, join, parse_f64};

pub const MAGIC: &str = "# direction-bank v1";

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains(',') || name.chars().any(char::is_whitespace) {
        return Err(Error::Invalid(format!("name `{name}` cannot be stored (empty, comma or whitespace)")));
    }
    Ok(())
}

pub fn to_string(bank: &DirectionBank) -> Result<String> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    let _ = writeln!(out, "dimension={}", bank.dimension());
    for d in bank.iter() {
        check_name(d.name())?;
        let p = d.provenance();
        for n in p.conditioned_on.iter().chain(p.projected_against.iter().flatten()) {
            check_name(n)?;
        }
        let _ = writeln!(out, "direction {}", d.name());
        let _ = writeln!(out, "calibration={}", fmt_f64(d.calibration()));
        let _ = writeln!(out, "intercept={}", fmt_f64(d.intercept()));
        let _ = writeln!(out, "degenerate={}", d.is_degenerate());
        if !p.conditioned_on.is_empty() {
            let _ = writeln!(out, "conditioned={}", p.conditioned_on.join(","));
        }
        for group in &p.projected_against {
            let _ = writeln!(out, "projected={}", group.join(","));
        }
        let _ = writeln!(out, "w={}", join(d.w_hat()));
        out.push_str("end\n");
    }
    Ok(out)
}

fn names(v: &str) -> Vec<String> {
    v.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect()
}

#[derive(Default)]
struct Pending {
    name: String,
    line: usize,
    calibration: Option<f64>,
    intercept: Option<f64>,
    degenerate: Option<bool>,
    conditioned: Option<Vec<String>>,
    projected: Vec<Vec<String>>,
    w: Option<Vec<f64>>,
}

pub fn parse(text: &str, origin: &str) -> Result<DirectionBank> {
    let mut bank: Option<DirectionBank> = None;
    let mut cur: Option<Pending> = None;
    let num = |v: &str, no: usize| parse_f64(v).ok_or_else(|| Error::format(origin, no, format!("bad number `{v}`")));
    for (no, line) in files::content_lines(text) {
        let Some(b) = bank.as_mut() else {
            let v = line
                .strip_prefix("dimension=")
                .ok_or_else(|| Error::format(origin, no, "expected `dimension=` header"))?;
            let d = v.parse().map_err(|_| Error::format(origin, no, format!("bad dimension `{v}`")))?;
            bank = Some(DirectionBank::new(d));
            continue;
        };
        let Some(p) = cur.as_mut() else {
            let name = line
                .strip_prefix("direction ")
                .map(str::trim)
                .ok_or_else(|| Error::format(origin, no, format!("expected `direction <name>`, found `{line}`")))?;
            if b.contains(name) {
                return Err(Error::format(origin, no, format!("direction `{name}` listed twice")));
            }
            cur = Some(Pending { name: name.to_string(), line: no, ..Default::default() });
            continue;
        };
        if line == "end" {
            let p = cur.take().expect("open block");
            let missing = |what: &str| Error::format(origin, p.line, format!("direction `{}` lacks `{what}`", p.name));
            let w = p.w.ok_or_else(|| missing("w"))?;
            let provenance = Provenance { conditioned_on: p.conditioned.unwrap_or_default(), projected_against: p.projected };
            let dir = Direction::new(
                p.name.clone(),
                w,
                p.calibration.ok_or_else(|| missing("calibration"))?,
                provenance,
                p.intercept.ok_or_else(|| missing("intercept"))?,
                p.degenerate.ok_or_else(|| missing("degenerate"))?,
            )
            .map_err(|e| Error::format(origin, p.line, e.to_string()))?;
            b.insert(dir)?;
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| Error::format(origin, no, format!("expected `key=value`, found `{line}`")))?;
        let dup = || Error::format(origin, no, format!("`{key}` given twice"));
        match key {
            "calibration" if p.calibration.is_none() => p.calibration = Some(num(value, no)?),
            "intercept" if p.intercept.is_none() => p.intercept = Some(num(value, no)?),
            "degenerate" if p.degenerate.is_none() => {
                p.degenerate = Some(match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(Error::format(origin, no, format!("bad flag `{value}`"))),
                })
            }
            "conditioned" if p.conditioned.is_none() => p.conditioned = Some(names(value)),
            "projected" => p.projected.push(names(value)),
            "w" if p.w.is_none() => {
                let w = value.split_whitespace().map(|v| num(v, no)).collect::<Result<Vec<_>>>()?;
                if w.len() != b.dimension() {
                    return Err(Error::format(
                        origin,
                        no,
                        format!("direction `{}` has {} entries, bank dimension is {}", p.name, w.len(), b.dimension()),
                    ));
                }
                p.w = Some(w);
            }
            "calibration" | "intercept" | "degenerate" | "conditioned" | "w" => return Err(dup()),
            _ => return Err(Error::format(origin, no, format!("unknown key `{key}`"))),
        }
    }
    if let Some(p) = cur {
        return Err(Error::format(origin, p.line, format!("direction `{}` is not closed by `end`", p.name)));
    }
    bank.ok_or_else(|| Error::format(origin, 1, "missing `dimension=` header"))
}

pub fn load(path: &Path) -> Result<DirectionBank> {
    parse(&files::read_string(path)?, &path.display().to_string())
}

/// Loads a bank and checks it against an expected dimension.
pub fn load_expecting(path: &Path, dimension: usize) -> Result<DirectionBank> {
    let bank = load(path)?;
    if bank.dimension() != dimension {
        return Err(latent_edit_core::Error::DimensionMismatch { expected: dimension, found: bank.dimension() }.into());
    }
    Ok(bank)
}

pub fn save(bank: &DirectionBank, path: &Path) -> Result<()> {
    files::write(path, to_string(bank)?.as_bytes())
}
