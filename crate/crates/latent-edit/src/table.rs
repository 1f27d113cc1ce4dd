//! Latent-table text format.
//!
//! ```text
//! # latent-table v1
//! dimension=4
//! attr au12 continuous AU
//! attr gender binary demographic
//! data
//! 0.12 -1.5 0.3 2 0.8 1 AAECAwQFBgc=
//! ```
//!
//! Each data row holds `d` latent values, then one label per attribute, then
//! an optional base64 stochastic tag.

use std::fmt::Write as _;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use latent_edit_core::{AttributeKind, AttributeMeta, AttributeRole, AttributeTable, TableBuilder};

use crate::error::{Error, Result};
use crate::files;
use crate::num::{fmt_f64, parse_f64};

pub const MAGIC: &str = "# latent-table v1";

pub fn to_string(table: &AttributeTable) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    let _ = writeln!(out, "dimension={}", table.dimension());
    for a in table.meta() {
        let _ = writeln!(out, "attr {} {} {}", a.name, a.kind.as_str(), a.role.as_str());
    }
    out.push_str("data\n");
    for r in 0..table.n_rows() {
        let mut first = true;
        for v in table.code(r).iter().chain(table.labels(r)) {
            if !first {
                out.push(' ');
            }
            first = false;
            out.push_str(&fmt_f64(*v));
        }
        if let Some(tag) = table.tag(r) {
            if !first {
                out.push(' ');
            }
            out.push_str(&STANDARD.encode(tag));
        }
        out.push('\n');
    }
    out
}

/// Parses a table; `origin` names the source in diagnostics.
pub fn parse(text: &str, origin: &str) -> Result<AttributeTable> {
    let mut lines = files::content_lines(text);
    let mut dimension = None;
    let mut meta = Vec::new();
    let mut in_data = false;
    for (no, line) in lines.by_ref() {
        if line == "data" {
            in_data = true;
            break;
        }
        if let Some(v) = line.strip_prefix("dimension=") {
            if dimension.is_some() {
                return Err(Error::format(origin, no, "dimension declared twice"));
            }
            let d: usize = v.trim().parse().map_err(|_| Error::format(origin, no, format!("bad dimension `{v}`")))?;
            dimension = Some(d);
        } else if let Some(rest) = line.strip_prefix("attr ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let [name, kind, role] = parts[..] else {
                return Err(Error::format(origin, no, "expected `attr <name> <kind> <role>`"));
            };
            let kind = AttributeKind::parse(kind)
                .ok_or_else(|| Error::format(origin, no, format!("unknown attribute kind `{kind}`")))?;
            let role = AttributeRole::parse(role)
                .ok_or_else(|| Error::format(origin, no, format!("unknown attribute role `{role}`")))?;
            meta.push(AttributeMeta::new(name, kind, role));
        } else {
            return Err(Error::format(origin, no, format!("unexpected header line `{line}`")));
        }
    }
    let d = dimension.ok_or_else(|| Error::format(origin, 1, "missing `dimension=` header"))?;
    if !in_data {
        return Err(Error::format(origin, 1, "missing `data` line"));
    }
    let m = meta.len();
    let mut builder = TableBuilder::new(d, meta).map_err(|e| Error::format(origin, 1, e.to_string()))?;
    let mut values = Vec::with_capacity(d + m);
    for (no, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let tag = match fields.len() {
            n if n == d + m => None,
            n if n == d + m + 1 => Some(
                STANDARD
                    .decode(fields[d + m])
                    .map_err(|e| Error::format(origin, no, format!("bad stochastic tag: {e}")))?,
            ),
            n => {
                return Err(Error::format(origin, no, format!("expected {} or {} fields, found {n}", d + m, d + m + 1)))
            }
        };
        values.clear();
        for f in &fields[..d + m] {
            values.push(parse_f64(f).ok_or_else(|| Error::format(origin, no, format!("bad number `{f}`")))?);
        }
        builder.push_raw(&values[..d], &values[d..], tag).map_err(|e| Error::format(origin, no, e.to_string()))?;
    }
    Ok(builder.finish())
}

pub fn load(path: &Path) -> Result<AttributeTable> {
    parse(&files::read_string(path)?, &path.display().to_string())
}

pub fn save(table: &AttributeTable, path: &Path) -> Result<()> {
    files::write(path, to_string(table).as_bytes())
}
