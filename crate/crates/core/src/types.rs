//! Latent codes, attribute tables and edit directions.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance on `‖w_hat‖ = 1` for non-degenerate directions.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// A semantic code `z` plus the generator's opaque stochastic code.
///
/// Only `z` is ever edited; the tag is carried through untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    z: Vec<f64>,
    tag: Option<Vec<u8>>,
}

impl LatentCode {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        Self::with_tag(z, None)
    }

    /// An empty tag carries no information and is stored as `None`.
    pub fn with_tag(z: Vec<f64>, tag: Option<Vec<u8>>) -> Result<Self> {
        if !linalg::all_finite(&z) {
            return Err(Error::NonFinite("latent code".to_string()));
        }
        let tag = tag.filter(|t| !t.is_empty());
        Ok(Self { z, tag })
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn tag(&self) -> Option<&[u8]> {
        self.tag.as_deref()
    }

    pub fn dimension(&self) -> usize {
        self.z.len()
    }

    /// Same tag, new semantic code.
    pub(crate) fn replaced(&self, z: Vec<f64>) -> Result<Self> {
        if !linalg::all_finite(&z) {
            return Err(Error::NonFinite("edited latent code".to_string()));
        }
        Ok(Self { z, tag: self.tag.clone() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttributeKind {
    /// Intensity on `[0, 1]`.
    Continuous,
    /// Exactly 0 or 1.
    Binary,
}

impl AttributeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttributeKind::Continuous => "continuous",
            AttributeKind::Binary => "binary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "continuous" => Some(AttributeKind::Continuous),
            "binary" => Some(AttributeKind::Binary),
            _ => None,
        }
    }

    pub fn admits(self, v: f64) -> bool {
        match self {
            AttributeKind::Continuous => (0.0..=1.0).contains(&v),
            AttributeKind::Binary => v == 0.0 || v == 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttributeRole {
    Au,
    Demographic,
    Nuisance,
}

impl AttributeRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AttributeRole::Au => "AU",
            AttributeRole::Demographic => "demographic",
            AttributeRole::Nuisance => "nuisance",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "AU" => Some(AttributeRole::Au),
            "demographic" => Some(AttributeRole::Demographic),
            "nuisance" => Some(AttributeRole::Nuisance),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeMeta {
    pub name: String,
    pub kind: AttributeKind,
    pub role: AttributeRole,
}

impl AttributeMeta {
    pub fn new(name: impl Into<String>, kind: AttributeKind, role: AttributeRole) -> Self {
        Self { name: name.into(), kind, role }
    }
}

/// Aligned codes (`n x d`) and labels (`n x m`), both stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeTable {
    dimension: usize,
    meta: Vec<AttributeMeta>,
    codes: Vec<f64>,
    labels: Vec<f64>,
    tags: Vec<Option<Vec<u8>>>,
}

impl AttributeTable {
    /// Validates and assembles a table from row-major blocks.
    pub fn new(
        dimension: usize,
        meta: Vec<AttributeMeta>,
        codes: Vec<f64>,
        labels: Vec<f64>,
        tags: Vec<Option<Vec<u8>>>,
    ) -> Result<Self> {
        let mut builder = TableBuilder::new(dimension, meta)?;
        let m = builder.meta.len();
        let n = tags.len();
        if codes.len() != n * dimension {
            return Err(Error::DimensionMismatch { expected: n * dimension, found: codes.len() });
        }
        if labels.len() != n * m {
            return Err(Error::DimensionMismatch { expected: n * m, found: labels.len() });
        }
        for (i, tag) in tags.into_iter().enumerate() {
            builder.push_raw(
                &codes[i * dimension..(i + 1) * dimension],
                &labels[i * m..(i + 1) * m],
                tag,
            )?;
        }
        Ok(builder.finish())
    }

    pub fn empty(dimension: usize, meta: Vec<AttributeMeta>) -> Result<Self> {
        Ok(TableBuilder::new(dimension, meta)?.finish())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn n_rows(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn n_attributes(&self) -> usize {
        self.meta.len()
    }

    pub fn meta(&self) -> &[AttributeMeta] {
        &self.meta
    }

    pub fn code(&self, row: usize) -> &[f64] {
        &self.codes[row * self.dimension..(row + 1) * self.dimension]
    }

    pub fn labels(&self, row: usize) -> &[f64] {
        let m = self.meta.len();
        &self.labels[row * m..(row + 1) * m]
    }

    pub fn tag(&self, row: usize) -> Option<&[u8]> {
        self.tags[row].as_deref()
    }

    pub fn latent(&self, row: usize) -> LatentCode {
        LatentCode { z: self.code(row).to_vec(), tag: self.tags[row].clone() }
    }

    pub fn codes_row_major(&self) -> &[f64] {
        &self.codes
    }

    pub fn labels_row_major(&self) -> &[f64] {
        &self.labels
    }

    pub fn attribute_index(&self, name: &str) -> Result<usize> {
        self.meta
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn attribute(&self, name: &str) -> Result<&AttributeMeta> {
        Ok(&self.meta[self.attribute_index(name)?])
    }

    pub fn column(&self, index: usize) -> Vec<f64> {
        let m = self.meta.len();
        (0..self.n_rows()).map(|r| self.labels[r * m + index]).collect()
    }

    /// Names of every attribute with `role`, in column order.
    pub fn names_with_role(&self, role: AttributeRole) -> Vec<String> {
        self.meta.iter().filter(|a| a.role == role).map(|a| a.name.clone()).collect()
    }

    pub fn indices_with_role(&self, role: AttributeRole) -> Vec<usize> {
        (0..self.meta.len()).filter(|&i| self.meta[i].role == role).collect()
    }

    /// Sub-table with the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut b = TableBuilder { dimension: self.dimension, meta: self.meta.clone(), ..Default::default() };
        for &r in rows {
            b.codes.extend_from_slice(self.code(r));
            b.labels.extend_from_slice(self.labels(r));
            b.tags.push(self.tags[r].clone());
        }
        b.finish()
    }

    /// Appends the rows of `other`, which must share dimension and metadata.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if other.dimension != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, found: other.dimension });
        }
        if other.meta != self.meta {
            return Err(Error::InvalidParameter("tables have different attribute metadata".to_string()));
        }
        let mut out = self.clone();
        out.codes.extend_from_slice(&other.codes);
        out.labels.extend_from_slice(&other.labels);
        out.tags.extend(other.tags.iter().cloned());
        Ok(out)
    }

    /// Adds one label column.
    pub fn with_attribute(&self, meta: AttributeMeta, values: &[f64]) -> Result<Self> {
        if values.len() != self.n_rows() {
            return Err(Error::DimensionMismatch { expected: self.n_rows(), found: values.len() });
        }
        let mut all_meta = self.meta.clone();
        all_meta.push(meta);
        let mut b = TableBuilder::new(self.dimension, all_meta)?;
        let mut row_labels = Vec::with_capacity(self.meta.len() + 1);
        for r in 0..self.n_rows() {
            row_labels.clear();
            row_labels.extend_from_slice(self.labels(r));
            row_labels.push(values[r]);
            b.push_raw(self.code(r), &row_labels, self.tags[r].clone())?;
        }
        Ok(b.finish())
    }
}

/// Incremental, validating table construction.
#[derive(Debug, Default)]
pub struct TableBuilder {
    dimension: usize,
    meta: Vec<AttributeMeta>,
    codes: Vec<f64>,
    labels: Vec<f64>,
    tags: Vec<Option<Vec<u8>>>,
}

impl TableBuilder {
    pub fn new(dimension: usize, meta: Vec<AttributeMeta>) -> Result<Self> {
        for (i, a) in meta.iter().enumerate() {
            if a.name.is_empty() || a.name.chars().any(char::is_whitespace) {
                return Err(Error::InvalidParameter("attribute names must be non-empty without whitespace".to_string()));
            }
            if meta[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::DuplicateAttribute(a.name.clone()));
            }
        }
        Ok(Self { dimension, meta, ..Default::default() })
    }

    pub fn meta(&self) -> &[AttributeMeta] {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn push(&mut self, code: &LatentCode, labels: &[f64]) -> Result<()> {
        self.push_raw(code.z(), labels, code.tag.clone())
    }

    pub fn push_raw(&mut self, z: &[f64], labels: &[f64], tag: Option<Vec<u8>>) -> Result<()> {
        let row = self.tags.len();
        if z.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, found: z.len() });
        }
        if labels.len() != self.meta.len() {
            return Err(Error::DimensionMismatch { expected: self.meta.len(), found: labels.len() });
        }
        if !linalg::all_finite(z) {
            return Err(Error::NonFinite(alloc::format!("latent code of row {row}")));
        }
        for (a, &v) in self.meta.iter().zip(labels) {
            if !a.kind.admits(v) {
                return Err(Error::LabelOutOfRange { name: a.name.clone(), kind: a.kind.as_str(), row, value: v });
            }
        }
        self.codes.extend_from_slice(z);
        self.labels.extend_from_slice(labels);
        self.tags.push(tag.filter(|t| !t.is_empty()));
        Ok(())
    }

    pub fn finish(self) -> AttributeTable {
        AttributeTable {
            dimension: self.dimension,
            meta: self.meta,
            codes: self.codes,
            labels: self.labels,
            tags: self.tags,
        }
    }
}

/// How a direction came to be.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    /// Covariates of the conditioned fit; empty for a plain fit.
    pub conditioned_on: Vec<String>,
    /// One entry per projection applied, in order.
    pub projected_against: Vec<Vec<String>>,
}

impl Provenance {
    pub fn is_base(&self) -> bool {
        self.conditioned_on.is_empty() && self.projected_against.is_empty()
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.conditioned_on.is_empty() {
            write!(f, "base")?;
        } else {
            write!(f, "conditioned({})", self.conditioned_on.join(","))?;
        }
        for p in &self.projected_against {
            write!(f, " projected({})", p.join(","))?;
        }
        Ok(())
    }
}

/// A named unit edit vector with its calibration.
///
/// `calibration` is the change of the fitted predictor's output per unit
/// step along the raw weight vector, i.e. `‖w‖` of the z-block.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub(crate) name: String,
    pub(crate) w_hat: Vec<f64>,
    pub(crate) calibration: f64,
    pub(crate) provenance: Provenance,
    pub(crate) intercept: f64,
    pub(crate) degenerate: bool,
}

impl Direction {
    /// Checks the unit-norm and calibration invariants.
    pub fn new(
        name: impl Into<String>,
        w_hat: Vec<f64>,
        calibration: f64,
        provenance: Provenance,
        intercept: f64,
        degenerate: bool,
    ) -> Result<Self> {
        let name = name.into();
        if !linalg::all_finite(&w_hat) || !calibration.is_finite() || !intercept.is_finite() {
            return Err(Error::NonFinite(alloc::format!("direction `{name}`")));
        }
        if !degenerate {
            let n = linalg::norm(&w_hat);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidParameter(alloc::format!(
                    "direction `{name}` has norm {n}, expected 1"
                )));
            }
            if calibration <= 0.0 {
                return Err(Error::InvalidParameter(alloc::format!(
                    "direction `{name}` has non-positive calibration {calibration}"
                )));
            }
        }
        Ok(Self { name, w_hat, calibration, provenance, intercept, degenerate })
    }

    pub(crate) fn degenerate(name: String, dimension: usize, provenance: Provenance, intercept: f64) -> Self {
        Self {
            name,
            w_hat: alloc::vec![0.0; dimension],
            calibration: 0.0,
            provenance,
            intercept,
            degenerate: true,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn w_hat(&self) -> &[f64] {
        &self.w_hat
    }

    pub fn calibration(&self) -> f64 {
        self.calibration
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn dimension(&self) -> usize {
        self.w_hat.len()
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

/// Directions keyed by name, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionBank {
    dimension: usize,
    directions: BTreeMap<String, Direction>,
}

impl DirectionBank {
    pub fn new(dimension: usize) -> Self {
        Self { dimension, directions: BTreeMap::new() }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// Adds or replaces a direction.
    pub fn insert(&mut self, direction: Direction) -> Result<()> {
        if direction.dimension() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, found: direction.dimension() });
        }
        self.directions.insert(direction.name.clone(), direction);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Direction> {
        self.directions.get(name).ok_or_else(|| Error::UnknownDirection(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.directions.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Direction> {
        self.directions.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.directions.keys().map(String::as_str)
    }
}
