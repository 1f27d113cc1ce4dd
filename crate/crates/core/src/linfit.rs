//! Linear predictors on latent codes and the edit directions they induce.
//!
//! A predictor's design matrix is `[z | covariate labels]`. Only the
//! leading z-block of the weights becomes an edit direction; covariate
//! coefficients absorb the variation explained by peer attributes and are
//! dropped, since an edit moves `z` alone.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, sigmoid};
use crate::types::{AttributeKind, AttributeRole, AttributeTable, Direction, LatentCode, Provenance};

/// Gradient-norm tolerance of the logistic solver.
pub const LOGISTIC_GRAD_TOL: f64 = 1e-6;
const LOGISTIC_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorKind {
    Ridge,
    Logistic,
}

impl PredictorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictorKind::Ridge => "ridge",
            PredictorKind::Logistic => "logistic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ridge" => Some(PredictorKind::Ridge),
            "logistic" => Some(PredictorKind::Logistic),
            _ => None,
        }
    }
}

/// `y = [z | c] · w + w0`, optionally passed through a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub kind: PredictorKind,
    pub target: String,
    pub covariates: Vec<String>,
    /// L2 strength used for the fit.
    pub ridge_alpha: f64,
}

impl LinearPredictor {
    pub fn new(
        weights: Vec<f64>,
        intercept: f64,
        kind: PredictorKind,
        target: impl Into<String>,
        covariates: Vec<String>,
        ridge_alpha: f64,
    ) -> Result<Self> {
        let target = target.into();
        if !linalg::all_finite(&weights) || !intercept.is_finite() {
            return Err(Error::NonFinite(alloc::format!("predictor `{target}`")));
        }
        if covariates.contains(&target) {
            return Err(Error::TargetAsCovariate(target));
        }
        if weights.len() < covariates.len() {
            return Err(Error::DimensionMismatch { expected: covariates.len(), found: weights.len() });
        }
        Ok(Self { weights, intercept, kind, target, covariates, ridge_alpha })
    }

    /// Latent dimension `d` (weights minus covariate coefficients).
    pub fn dimension(&self) -> usize {
        self.weights.len() - self.covariates.len()
    }

    pub fn z_block(&self) -> &[f64] {
        &self.weights[..self.dimension()]
    }

    /// Affine score before any link function.
    pub fn affine(&self, z: &[f64], covariate_values: &[f64]) -> Result<f64> {
        let d = self.dimension();
        if z.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: z.len() });
        }
        if covariate_values.len() != self.covariates.len() {
            return Err(Error::DimensionMismatch { expected: self.covariates.len(), found: covariate_values.len() });
        }
        Ok(linalg::dot(&self.weights[..d], z) + linalg::dot(&self.weights[d..], covariate_values) + self.intercept)
    }
}

/// Ridge value for ridge predictors, probability for logistic ones.
pub fn predict(pred: &LinearPredictor, z: &LatentCode, covariate_values: &[f64]) -> Result<f64> {
    predict_raw(pred, z.z(), covariate_values)
}

pub fn predict_raw(pred: &LinearPredictor, z: &[f64], covariate_values: &[f64]) -> Result<f64> {
    let a = pred.affine(z, covariate_values)?;
    Ok(match pred.kind {
        PredictorKind::Ridge => a,
        PredictorKind::Logistic => sigmoid(a),
    })
}

struct Design {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

fn design(table: &AttributeTable, target: &str, covariates: &[String]) -> Result<Design> {
    let t = table.attribute_index(target)?;
    if covariates.iter().any(|c| c == target) {
        return Err(Error::TargetAsCovariate(target.to_string()));
    }
    let cov_idx = covariates.iter().map(|c| table.attribute_index(c)).collect::<Result<Vec<_>>>()?;
    let n = table.n_rows();
    if n == 0 {
        return Err(Error::Empty("table has no rows".to_string()));
    }
    let d = table.dimension();
    let p = d + cov_idx.len();
    let x = DMatrix::from_fn(n, p, |r, c| {
        if c < d {
            table.code(r)[c]
        } else {
            table.labels(r)[cov_idx[c - d]]
        }
    });
    let y = DVector::from_iterator(n, (0..n).map(|r| table.labels(r)[t]));
    Ok(Design { x, y })
}

/// Ridge regression with an unpenalized intercept, solved through the
/// centered normal equations `(XcᵀXc + αI) w = Xcᵀ yc`.
pub fn fit_ridge(table: &AttributeTable, target: &str, covariates: &[String], alpha: f64) -> Result<LinearPredictor> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(alloc::format!("ridge alpha must be non-negative, got {alpha}")));
    }
    if table.attribute(target)?.kind != AttributeKind::Continuous {
        return Err(Error::WrongAttributeKind { name: target.to_string(), expected: "continuous" });
    }
    let Design { x, y } = design(table, target, covariates)?;
    let (n, p) = x.shape();
    let x_mean = DVector::from_iterator(p, x.column_iter().map(|c| c.sum() / n as f64));
    let y_mean = y.sum() / n as f64;
    let mut xc = x;
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-x_mean[j]);
    }
    let yc = y.add_scalar(-y_mean);
    let mut gram = xc.tr_mul(&xc);
    for i in 0..p {
        gram[(i, i)] += alpha;
    }
    let rhs = xc.tr_mul(&yc);
    let w = linalg::spd_solve(gram, rhs)?;
    let intercept = y_mean - x_mean.dot(&w);
    LinearPredictor::new(w.as_slice().to_vec(), intercept, PredictorKind::Ridge, target, covariates.to_vec(), alpha)
}

/// L2-penalized logistic regression by damped Newton iteration.
///
/// Minimizes `-Σ log-likelihood + (l2 / 2)‖w‖²` with the intercept
/// unpenalized, until the gradient norm is below [`LOGISTIC_GRAD_TOL`].
pub fn fit_logistic(table: &AttributeTable, target: &str, covariates: &[String], l2: f64) -> Result<LinearPredictor> {
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::InvalidParameter(alloc::format!("l2 must be non-negative, got {l2}")));
    }
    if table.attribute(target)?.kind != AttributeKind::Binary {
        return Err(Error::WrongAttributeKind { name: target.to_string(), expected: "binary" });
    }
    let Design { x, y } = design(table, target, covariates)?;
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::SingleClass(target.to_string()));
    }
    let (n, p) = x.shape();
    // augmented design [X | 1]; parameter vector theta = [w; b]
    let xa = DMatrix::from_fn(n, p + 1, |r, c| if c < p { x[(r, c)] } else { 1.0 });
    let mut theta = DVector::<f64>::zeros(p + 1);

    let objective = |theta: &DVector<f64>| -> f64 {
        let a = &xa * theta;
        let mut nll = 0.0;
        for i in 0..n {
            // log(1 + e^a) - y a, evaluated stably
            let ai = a[i];
            let softplus = if ai > 0.0 { ai + libm::log1p(libm::exp(-ai)) } else { libm::log1p(libm::exp(ai)) };
            nll += softplus - y[i] * ai;
        }
        let w = theta.rows(0, p);
        nll + 0.5 * l2 * w.norm_squared()
    };

    let mut f = objective(&theta);
    let mut grad_norm = f64::INFINITY;
    for _ in 0..LOGISTIC_MAX_ITER {
        let a = &xa * &theta;
        let prob = a.map(sigmoid);
        let resid = &prob - &y;
        let mut grad = xa.tr_mul(&resid);
        for j in 0..p {
            grad[j] += l2 * theta[j];
        }
        grad_norm = grad.norm();
        if grad_norm <= LOGISTIC_GRAD_TOL {
            break;
        }
        let weights = prob.map(|q| q * (1.0 - q));
        let mut weighted = xa.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= weights[i];
        }
        let mut hess = xa.tr_mul(&weighted);
        for j in 0..p {
            hess[(j, j)] += l2;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                // tiny ridge on the curvature keeps a separable fit moving
                let scale = hess.diagonal().max().max(1.0);
                for j in 0..=p {
                    hess[(j, j)] += 1e-10 * scale;
                }
                hess.cholesky().ok_or(Error::Singular)?.solve(&grad)
            }
        };
        let mut t = 1.0;
        loop {
            let cand = &theta - &step * t;
            let fc = objective(&cand);
            if fc <= f || t < 1e-12 {
                theta = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
        if !f.is_finite() {
            return Err(Error::NonFinite("logistic objective".to_string()));
        }
    }
    if grad_norm > LOGISTIC_GRAD_TOL {
        return Err(Error::NotConverged { iterations: LOGISTIC_MAX_ITER, residual: grad_norm });
    }
    let weights = theta.rows(0, p).iter().copied().collect();
    LinearPredictor::new(weights, theta[p], PredictorKind::Logistic, target, covariates.to_vec(), l2)
}

/// Normalizes the z-block of a fitted predictor into an edit direction.
///
/// A zero z-block yields a direction flagged degenerate; callers that edit
/// with it get [`Error::DegenerateDirection`].
pub fn extract_direction(pred: &LinearPredictor) -> Direction {
    let w = pred.z_block();
    let provenance = Provenance { conditioned_on: pred.covariates.clone(), projected_against: Vec::new() };
    let cal = linalg::norm(w);
    if cal == 0.0 || !cal.is_finite() {
        return Direction::degenerate(pred.target.clone(), w.len(), provenance, pred.intercept);
    }
    Direction {
        name: pred.target.clone(),
        w_hat: w.iter().map(|x| x / cal).collect(),
        calibration: cal,
        provenance,
        intercept: pred.intercept,
        degenerate: false,
    }
}

/// Settings for fitting a batch of directions.
#[derive(Debug, Clone)]
pub struct DirectionFitConfig {
    pub alpha: f64,
    pub logistic_l2: f64,
    /// Condition each AU target on every other AU-role attribute.
    pub condition_on_peers: bool,
}

impl Default for DirectionFitConfig {
    fn default() -> Self {
        Self { alpha: 10.0, logistic_l2: 1.0, condition_on_peers: false }
    }
}

/// Covariates used for `target` under `config`.
pub fn peer_covariates(table: &AttributeTable, target: &str, config: &DirectionFitConfig) -> Result<Vec<String>> {
    let meta = table.attribute(target)?;
    if !config.condition_on_peers || meta.role != AttributeRole::Au {
        return Ok(Vec::new());
    }
    Ok(table.names_with_role(AttributeRole::Au).into_iter().filter(|n| n != target).collect())
}

/// Fits ridge (continuous targets) or logistic (binary targets) predictors
/// and extracts their directions.
pub fn fit_directions(
    table: &AttributeTable,
    targets: &[String],
    config: &DirectionFitConfig,
) -> Result<Vec<(LinearPredictor, Direction)>> {
    let mut out = Vec::with_capacity(targets.len());
    for target in targets {
        let covariates = peer_covariates(table, target, config)?;
        let pred = match table.attribute(target)?.kind {
            AttributeKind::Continuous => fit_ridge(table, target, &covariates, config.alpha)?,
            AttributeKind::Binary => fit_logistic(table, target, &covariates, config.logistic_l2)?,
        };
        let dir = extract_direction(&pred);
        out.push((pred, dir));
    }
    Ok(out)
}

/// Predictions of `pred` on every row of `table` (covariates read from the
/// table's labels).
pub fn predict_table(pred: &LinearPredictor, table: &AttributeTable) -> Result<Vec<f64>> {
    let idx = pred.covariates.iter().map(|c| table.attribute_index(c)).collect::<Result<Vec<_>>>()?;
    let mut cov = vec![0.0; idx.len()];
    (0..table.n_rows())
        .map(|r| {
            for (slot, &i) in cov.iter_mut().zip(&idx) {
                *slot = table.labels(r)[i];
            }
            predict_raw(pred, table.code(r), &cov)
        })
        .collect()
}
