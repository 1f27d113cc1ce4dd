//! Orthogonal projection of edit directions away from nuisance directions.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg;
use crate::types::Direction;

/// Default drop tolerance for Gram–Schmidt residuals.
pub const DEFAULT_DROP_TOL: f64 = 1e-8;
/// Residual norm under which a projected direction is degenerate.
pub const DEGENERATE_RESIDUAL: f64 = 1e-8;

/// Orthonormal basis spanning a set of nuisance directions.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceBasis {
    dimension: usize,
    source_names: Vec<String>,
    basis: Vec<Vec<f64>>,
    dropped: Vec<String>,
}

impl NuisanceBasis {
    pub fn empty(dimension: usize) -> Self {
        Self { dimension, source_names: Vec::new(), basis: Vec::new(), dropped: Vec::new() }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Every source, kept or dropped, in input order.
    pub fn source_names(&self) -> &[String] {
        &self.source_names
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    /// Sources whose residual fell under the tolerance.
    pub fn dropped(&self) -> &[String] {
        &self.dropped
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }
}

/// Removes from `v` its components along each (orthonormal) basis vector,
/// sequentially, twice.
fn subtract_span(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = linalg::dot(v, b);
            if c != 0.0 {
                linalg::axpy(-c, b, v);
            }
        }
    }
}

/// Modified Gram–Schmidt over the unit vectors of `directions`, in order.
pub fn orthonormalize(directions: &[&Direction], tol: f64) -> Result<NuisanceBasis> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(alloc::format!("drop tolerance must be positive, got {tol}")));
    }
    let Some(first) = directions.first() else {
        return Ok(NuisanceBasis::empty(0));
    };
    let dimension = first.dimension();
    let mut out = NuisanceBasis::empty(dimension);
    for dir in directions {
        if dir.dimension() != dimension {
            return Err(Error::DimensionMismatch { expected: dimension, found: dir.dimension() });
        }
        out.source_names.push(dir.name().to_string());
        let mut v = dir.w_hat().to_vec();
        subtract_span(&mut v, &out.basis);
        let r = linalg::norm(&v);
        if r < tol || out.basis.len() == dimension {
            out.dropped.push(dir.name().to_string());
            continue;
        }
        out.basis.push(v.iter().map(|x| x / r).collect());
    }
    Ok(out)
}

/// Same as [`orthonormalize`] for an empty direction list of known dimension.
pub fn orthonormalize_in(dimension: usize, directions: &[&Direction], tol: f64) -> Result<NuisanceBasis> {
    if directions.is_empty() {
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(alloc::format!("drop tolerance must be positive, got {tol}")));
        }
        return Ok(NuisanceBasis::empty(dimension));
    }
    let basis = orthonormalize(directions, tol)?;
    if basis.dimension != dimension {
        return Err(Error::DimensionMismatch { expected: dimension, found: basis.dimension });
    }
    Ok(basis)
}

/// Projects `dir` onto the orthogonal complement of `basis`.
///
/// The result is renormalized; its calibration is the original calibration
/// times the residual norm, so a step `s` still moves the original
/// predictor by `s`. A residual under [`DEGENERATE_RESIDUAL`] flags the
/// output degenerate.
pub fn project_out(dir: &Direction, basis: &NuisanceBasis) -> Result<Direction> {
    if !basis.is_empty() && basis.dimension != dir.dimension() {
        return Err(Error::DimensionMismatch { expected: basis.dimension, found: dir.dimension() });
    }
    let mut provenance = dir.provenance().clone();
    provenance.projected_against.push(basis.source_names.clone());
    if dir.is_degenerate() {
        return Ok(Direction::degenerate(dir.name().to_string(), dir.dimension(), provenance, dir.intercept()));
    }
    let mut v = dir.w_hat().to_vec();
    subtract_span(&mut v, &basis.basis);
    if v == dir.w_hat() {
        let mut out = dir.clone();
        out.provenance = provenance;
        return Ok(out);
    }
    let r = linalg::norm(&v);
    if r < DEGENERATE_RESIDUAL {
        return Ok(Direction::degenerate(dir.name().to_string(), dir.dimension(), provenance, dir.intercept()));
    }
    Direction::new(
        dir.name(),
        v.iter().map(|x| x / r).collect(),
        dir.calibration() * r.min(1.0),
        provenance,
        dir.intercept(),
        false,
    )
}

/// Residual norm `‖w_hat − P w_hat‖` that [`project_out`] would rescale by.
pub fn residual_norm(dir: &Direction, basis: &NuisanceBasis) -> f64 {
    let mut v = dir.w_hat().to_vec();
    subtract_span(&mut v, &basis.basis);
    linalg::norm(&v)
}
