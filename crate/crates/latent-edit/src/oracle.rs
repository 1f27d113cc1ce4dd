//! Oracle specification files (TOML).
//!
//! Either a built-in preset:
//!
//! ```toml
//! preset = "entangled"
//! seed = 3
//! ```
//!
//! or a full description:
//!
//! ```toml
//! dimension = 32
//! noise_sigma = 0.05
//! mixing_seed = 3            # or: mixing = [[...], ...] (d rows of k)
//! correlation = [[1.0, 0.6], [0.6, 1.0]]   # optional, identity if absent
//!
//! [[factor]]
//! name = "au1"
//! role = "AU"
//! kind = "continuous"
//! activation_rate = 0.5
//!
//! [observation]              # optional
//! hidden = 48
//! outputs = 48
//! gain = 1.5
//! seed = 7
//! ```

use std::fmt::Write as _;
use std::path::Path;

use latent_edit_core::sampler::{orthonormal_mixing, presets, FactorSpec, ObservationMap, OracleSpec};
use latent_edit_core::{AttributeKind, AttributeRole};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::files;
use crate::num::fmt_f64;

fn allow(table: &Table, keys: &[&str], at: &str) -> Result<()> {
    for k in table.keys() {
        if !keys.contains(&k.as_str()) {
            let key = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
            return Err(Error::config(&key, "unknown key"));
        }
    }
    Ok(())
}

fn need<'a>(table: &'a Table, key: &str, at: &str) -> Result<&'a Value> {
    table.get(key).ok_or_else(|| Error::config(&format!("{at}{key}"), "missing"))
}

fn float(v: &Value, key: &str) -> Result<f64> {
    match v {
        Value::Float(f) if f.is_finite() => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::config(key, format!("expected a number, found {v}"))),
    }
}

fn uint(v: &Value, key: &str) -> Result<u64> {
    v.as_integer().filter(|i| *i >= 0).map(|i| i as u64).ok_or_else(|| Error::config(key, format!("expected a non-negative integer, found {v}")))
}

fn text<'a>(v: &'a Value, key: &str) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::config(key, format!("expected a string, found {v}")))
}

fn matrix(v: &Value, key: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let bad = || Error::config(key, format!("expected {rows} rows of {cols} numbers"));
    let arr = v.as_array().ok_or_else(bad)?;
    if arr.len() != rows {
        return Err(bad());
    }
    let mut out = Vec::with_capacity(rows * cols);
    for row in arr {
        let r = row.as_array().filter(|r| r.len() == cols).ok_or_else(bad)?;
        for x in r {
            out.push(float(x, key)?);
        }
    }
    Ok(out)
}

pub fn parse(text_in: &str, origin: &str) -> Result<OracleSpec> {
    let doc: Table = text_in.parse().map_err(|e: toml::de::Error| Error::format(origin, 0, e.to_string()))?;
    if let Some(p) = doc.get("preset") {
        allow(&doc, &["preset", "seed"], "")?;
        let seed = doc.get("seed").map(|s| uint(s, "seed")).transpose()?.unwrap_or(0);
        return Ok(presets::by_name(text(p, "preset")?, seed)?);
    }
    allow(&doc, &["dimension", "noise_sigma", "mixing", "mixing_seed", "correlation", "factor", "observation"], "")?;
    let d = uint(need(&doc, "dimension", "")?, "dimension")? as usize;
    let noise = float(need(&doc, "noise_sigma", "")?, "noise_sigma")?;
    let factor_tables = need(&doc, "factor", "")?.as_array().ok_or_else(|| Error::config("factor", "expected [[factor]] tables"))?;
    let mut factors = Vec::new();
    for (i, f) in factor_tables.iter().enumerate() {
        let at = format!("factor[{i}].");
        let t = f.as_table().ok_or_else(|| Error::config(&format!("factor[{i}]"), "expected a table"))?;
        allow(t, &["name", "role", "kind", "activation_rate"], &format!("factor[{i}]"))?;
        let role_s = text(need(t, "role", &at)?, &format!("{at}role"))?;
        let kind_s = text(need(t, "kind", &at)?, &format!("{at}kind"))?;
        factors.push(FactorSpec::new(
            text(need(t, "name", &at)?, &format!("{at}name"))?,
            AttributeRole::parse(role_s).ok_or_else(|| Error::config(&format!("{at}role"), format!("unknown role `{role_s}`")))?,
            AttributeKind::parse(kind_s).ok_or_else(|| Error::config(&format!("{at}kind"), format!("unknown kind `{kind_s}`")))?,
            t.get("activation_rate").map(|v| float(v, &format!("{at}activation_rate"))).transpose()?.unwrap_or(1.0),
        ));
    }
    let k = factors.len();
    let correlation = match doc.get("correlation") {
        Some(v) => matrix(v, "correlation", k, k)?,
        None => (0..k * k).map(|i| if i % (k + 1) == 0 { 1.0 } else { 0.0 }).collect(),
    };
    let mixing = match (doc.get("mixing"), doc.get("mixing_seed")) {
        (Some(_), Some(_)) => return Err(Error::config("mixing", "give either `mixing` or `mixing_seed`, not both")),
        (Some(v), None) => matrix(v, "mixing", d, k)?,
        (None, Some(s)) => orthonormal_mixing(d, k, uint(s, "mixing_seed")?)?,
        (None, None) => return Err(Error::config("mixing", "missing (or give `mixing_seed`)")),
    };
    let mut observation = ObservationMap::default();
    if let Some(o) = doc.get("observation") {
        let t = o.as_table().ok_or_else(|| Error::config("observation", "expected a table"))?;
        allow(t, &["hidden", "outputs", "gain", "seed"], "observation")?;
        if let Some(v) = t.get("hidden") {
            observation.hidden = uint(v, "observation.hidden")? as usize;
        }
        if let Some(v) = t.get("outputs") {
            observation.outputs = uint(v, "observation.outputs")? as usize;
        }
        if let Some(v) = t.get("gain") {
            observation.gain = float(v, "observation.gain")?;
        }
        if let Some(v) = t.get("seed") {
            observation.seed = uint(v, "observation.seed")?;
        }
    }
    Ok(OracleSpec::new(factors, correlation, d, mixing, noise, observation)?)
}

/// Full description of `spec`; reloading it gives an equal spec.
pub fn to_string(spec: &OracleSpec) -> String {
    let k = spec.k();
    let d = spec.dimension();
    let mut s = String::new();
    let _ = writeln!(s, "dimension = {d}");
    let _ = writeln!(s, "noise_sigma = {}", toml_float(spec.noise_sigma()));
    let rows = |m: &[f64], r: usize, c: usize| -> String {
        let mut out = String::from("[\n");
        for i in 0..r {
            let cells: Vec<String> = m[i * c..(i + 1) * c].iter().map(|x| toml_float(*x)).collect();
            let _ = writeln!(out, "  [{}],", cells.join(", "));
        }
        out.push(']');
        out
    };
    let _ = writeln!(s, "correlation = {}", rows(spec.correlation(), k, k));
    let _ = writeln!(s, "mixing = {}", rows(spec.mixing(), d, k));
    let o = spec.observation();
    let _ = writeln!(s, "\n[observation]\nhidden = {}\noutputs = {}\ngain = {}\nseed = {}", o.hidden, o.outputs, toml_float(o.gain), o.seed);
    for f in spec.factors() {
        let _ = writeln!(
            s,
            "\n[[factor]]\nname = \"{}\"\nrole = \"{}\"\nkind = \"{}\"\nactivation_rate = {}",
            f.name,
            f.role.as_str(),
            f.kind.as_str(),
            toml_float(f.activation_rate)
        );
    }
    s
}

/// TOML needs a dot or exponent to read a float back as a float.
fn toml_float(x: f64) -> String {
    let s = fmt_f64(x);
    if s.contains(['.', 'e', 'E']) {
        s
    } else {
        format!("{s}.0")
    }
}

pub fn load(path: &Path) -> Result<OracleSpec> {
    parse(&files::read_string(path)?, &path.display().to_string())
}
