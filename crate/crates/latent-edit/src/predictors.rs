//! Predictor-set text format used by demographic sampling.
//!
//! ```text
//! # predictor-set v1
//! dimension=3
//! predictor age
//! kind=ridge
//! alpha=10
//! intercept=0.5
//! covariates=
//! w=0.1 0.2 0.3
//! bins=0.4 0.6
//! end
//! ```

use std::fmt::Write as _;
use std::path::Path;

use latent_edit_core::linfit::{LinearPredictor, PredictorKind};
use latent_edit_core::sampler::PredictorSet;

use crate::error::{Error, Result};
use crate::files;
use crate::num::{fmt_f64, join, parse_f64};

pub const MAGIC: &str = "# predictor-set v1";

pub fn to_string(set: &PredictorSet) -> Result<String> {
    let d = set.predictors.first().map_or(0, LinearPredictor::dimension);
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    let _ = writeln!(out, "dimension={d}");
    for p in &set.predictors {
        if p.dimension() != d {
            return Err(Error::Invalid("predictors of a set must share one dimension".to_string()));
        }
        let _ = writeln!(out, "predictor {}", p.target);
        let _ = writeln!(out, "kind={}", p.kind.as_str());
        let _ = writeln!(out, "alpha={}", fmt_f64(p.ridge_alpha));
        let _ = writeln!(out, "intercept={}", fmt_f64(p.intercept));
        let _ = writeln!(out, "covariates={}", p.covariates.join(","));
        let _ = writeln!(out, "w={}", join(&p.weights));
        if let Ok(b) = set.boundaries(&p.target) {
            let _ = writeln!(out, "bins={}", join(b));
        }
        out.push_str("end\n");
    }
    for (name, _) in &set.binnings {
        if set.get(name).is_err() {
            return Err(Error::Invalid(format!("bins for `{name}` have no predictor")));
        }
    }
    Ok(out)
}

pub fn parse(text: &str, origin: &str) -> Result<PredictorSet> {
    let mut dimension: Option<usize> = None;
    let mut set = PredictorSet::default();
    let mut block: Option<(usize, String, Vec<(String, String)>)> = None;
    for (no, line) in files::content_lines(text) {
        let Some(d) = dimension else {
            let v = line
                .strip_prefix("dimension=")
                .ok_or_else(|| Error::format(origin, no, "expected `dimension=` header"))?;
            dimension = Some(v.parse().map_err(|_| Error::format(origin, no, format!("bad dimension `{v}`")))?);
            continue;
        };
        match block.as_mut() {
            None => {
                let name = line
                    .strip_prefix("predictor ")
                    .map(str::trim)
                    .ok_or_else(|| Error::format(origin, no, format!("expected `predictor <name>`, found `{line}`")))?;
                if set.get(name).is_ok() {
                    return Err(Error::format(origin, no, format!("predictor `{name}` listed twice")));
                }
                block = Some((no, name.to_string(), Vec::new()));
            }
            Some(_) if line == "end" => {
                let (start, name, fields) = block.take().expect("open block");
                let (pred, bins) = build(origin, start, &name, &fields, d)?;
                set.predictors.push(pred);
                if let Some(b) = bins {
                    set.binnings.push((name, b));
                }
            }
            Some((_, _, fields)) => {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::format(origin, no, format!("expected `key=value`, found `{line}`")))?;
                if fields.iter().any(|(f, _)| f == k) {
                    return Err(Error::format(origin, no, format!("`{k}` given twice")));
                }
                fields.push((k.to_string(), v.to_string()));
            }
        }
    }
    if let Some((start, name, _)) = block {
        return Err(Error::format(origin, start, format!("predictor `{name}` is not closed by `end`")));
    }
    if dimension.is_none() {
        return Err(Error::format(origin, 1, "missing `dimension=` header"));
    }
    Ok(set)
}

type Built = (LinearPredictor, Option<Vec<f64>>);

fn build(origin: &str, line: usize, name: &str, fields: &[(String, String)], d: usize) -> Result<Built> {
    let err = |m: String| Error::format(origin, line, m);
    let get = |k: &str| fields.iter().find(|(f, _)| f == k).map(|(_, v)| v.as_str());
    let need = |k: &str| get(k).ok_or_else(|| err(format!("predictor `{name}` lacks `{k}`")));
    let num = |v: &str| parse_f64(v).ok_or_else(|| err(format!("bad number `{v}`")));
    let list = |v: &str| v.split_whitespace().map(num).collect::<Result<Vec<f64>>>();
    if let Some((k, _)) = fields.iter().find(|(k, _)| !["kind", "alpha", "intercept", "covariates", "w", "bins"].contains(&k.as_str())) {
        return Err(err(format!("unknown key `{k}`")));
    }
    let kind = need("kind")?;
    let kind = PredictorKind::parse(kind).ok_or_else(|| err(format!("unknown predictor kind `{kind}`")))?;
    let covariates: Vec<String> = need("covariates")?.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect();
    let w = list(need("w")?)?;
    if w.len() != d + covariates.len() {
        return Err(err(format!("predictor `{name}` has {} weights, expected {}", w.len(), d + covariates.len())));
    }
    let pred = LinearPredictor::new(w, num(need("intercept")?)?, kind, name, covariates, num(need("alpha")?)?)
        .map_err(|e| err(e.to_string()))?;
    let bins = get("bins").map(list).transpose()?;
    if let Some(b) = &bins {
        if b.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(err(format!("bins of `{name}` are not strictly increasing")));
        }
    }
    Ok((pred, bins))
}

pub fn load(path: &Path) -> Result<PredictorSet> {
    parse(&files::read_string(path)?, &path.display().to_string())
}

pub fn save(set: &PredictorSet, path: &Path) -> Result<()> {
    files::write(path, to_string(set)?.as_bytes())
}
