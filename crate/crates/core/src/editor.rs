//! Calibrated edits: a step `s` moves the fitted predictor's output by `s`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg;
use crate::types::{Direction, DirectionBank, LatentCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditMode {
    /// Steps are offsets from the code's current attribute values.
    Relative,
    /// The code is neutral (all AUs at zero), so each step is the absolute
    /// target intensity and must lie in `[0, 1]`.
    AbsoluteAfterNeutralization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    pub targets: Vec<(String, f64)>,
    pub mode: EditMode,
}

impl EditRequest {
    pub fn relative(targets: Vec<(String, f64)>) -> Self {
        Self { targets, mode: EditMode::Relative }
    }

    /// Checks that every target resolves to a usable direction.
    pub fn validate(&self, bank: &DirectionBank) -> Result<()> {
        for (name, s) in &self.targets {
            if !s.is_finite() {
                return Err(Error::NonFinite(alloc::format!("edit step for `{name}`")));
            }
            if self.mode == EditMode::AbsoluteAfterNeutralization && !(0.0..=1.0).contains(s) {
                return Err(Error::InvalidParameter(alloc::format!(
                    "absolute edit target for `{name}` must lie in [0, 1], got {s}"
                )));
            }
            let dir = bank.get(name)?;
            if dir.is_degenerate() {
                return Err(Error::DegenerateDirection(name.clone()));
            }
        }
        Ok(())
    }
}

fn check(z: &LatentCode, dir: &Direction) -> Result<()> {
    if dir.is_degenerate() {
        return Err(Error::DegenerateDirection(dir.name().to_string()));
    }
    if dir.dimension() != z.dimension() {
        return Err(Error::DimensionMismatch { expected: dir.dimension(), found: z.dimension() });
    }
    Ok(())
}

/// `z' = z + (s / calibration) · w_hat`; the stochastic tag is untouched.
pub fn apply_edit(z: &LatentCode, dir: &Direction, s: f64) -> Result<LatentCode> {
    check(z, dir)?;
    if !s.is_finite() {
        return Err(Error::NonFinite("edit step".to_string()));
    }
    let mut out = z.z().to_vec();
    linalg::axpy(s / dir.calibration(), dir.w_hat(), &mut out);
    z.replaced(out)
}

/// Displacement `Σ (s_i / cal_i) · w_hat_i` of a multi-attribute request.
pub fn edit_displacement(bank: &DirectionBank, req: &EditRequest) -> Result<Vec<f64>> {
    req.validate(bank)?;
    let mut delta = alloc::vec![0.0; bank.dimension()];
    for (name, s) in &req.targets {
        let dir = bank.get(name)?;
        linalg::axpy(s / dir.calibration(), dir.w_hat(), &mut delta);
    }
    Ok(delta)
}

/// Applies every target as one summed displacement, so the result does not
/// depend on target order.
pub fn apply_multi_edit(z: &LatentCode, bank: &DirectionBank, req: &EditRequest) -> Result<LatentCode> {
    if z.dimension() != bank.dimension() {
        return Err(Error::DimensionMismatch { expected: bank.dimension(), found: z.dimension() });
    }
    let delta = edit_displacement(bank, req)?;
    let out: Vec<f64> = z.z().iter().zip(&delta).map(|(a, b)| a + b).collect();
    z.replaced(out)
}
