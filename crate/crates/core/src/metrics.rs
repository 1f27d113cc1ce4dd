//! Evaluation battery. Matrices are row-major `n × m` slices with the column
//! count passed alongside.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

fn rows(values: &[f64], cols: usize) -> Result<usize> {
    if cols == 0 {
        return Err(Error::InvalidParameter("column count must be positive".to_string()));
    }
    if !values.len().is_multiple_of(cols) {
        return Err(Error::DimensionMismatch { expected: cols * (values.len() / cols + 1), found: values.len() });
    }
    Ok(values.len() / cols)
}

fn same_shape(a: &[f64], b: &[f64], cols: usize) -> Result<usize> {
    let n = rows(a, cols)?;
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    Ok(n)
}

/// `1.0` where `v ≥ threshold`, else `0.0`.
pub fn binarize(values: &[f64], threshold: f64) -> Vec<f64> {
    values.iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Report {
    pub per_attribute: Vec<f64>,
    /// Attributes with no positives in truth or prediction; their F1 is 1.
    pub vacuous: Vec<bool>,
    pub macro_f1: f64,
}

/// Per-column F1 after binarizing both inputs at `threshold`.
pub fn f1_scores(pred: &[f64], truth: &[f64], cols: usize, threshold: f64) -> Result<F1Report> {
    let n = same_shape(pred, truth, cols)?;
    let mut per_attribute = Vec::with_capacity(cols);
    let mut vacuous = Vec::with_capacity(cols);
    for j in 0..cols {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for i in 0..n {
            let p = pred[i * cols + j] >= threshold;
            let t = truth[i * cols + j] >= threshold;
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let empty = tp + fp + fn_ == 0;
        vacuous.push(empty);
        per_attribute.push(if empty { 1.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 });
    }
    let macro_f1 = per_attribute.iter().sum::<f64>() / cols as f64;
    Ok(F1Report { per_attribute, vacuous, macro_f1 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub size: usize,
    /// `None` where either column has zero variance.
    pub matrix: Vec<Option<f64>>,
    /// Mean `|r|` over unmasked off-diagonal entries.
    pub mean_abs_offdiag: Option<f64>,
}

impl CorrelationReport {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.matrix[i * self.size + j]
    }
}

/// Pearson correlation between every pair of columns.
pub fn correlation_matrix(values: &[f64], cols: usize) -> Result<CorrelationReport> {
    let n = rows(values, cols)?;
    if n < 2 {
        return Err(Error::Empty(alloc::format!("correlation needs at least 2 rows, got {n}")));
    }
    let means: Vec<f64> = (0..cols).map(|j| (0..n).map(|i| values[i * cols + j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![0.0; cols * cols];
    for i in 0..n {
        let row = &values[i * cols..(i + 1) * cols];
        for a in 0..cols {
            let da = row[a] - means[a];
            for b in a..cols {
                cov[a * cols + b] += da * (row[b] - means[b]);
            }
        }
    }
    let sd: Vec<f64> = (0..cols).map(|j| libm::sqrt(cov[j * cols + j])).collect();
    let mut matrix = vec![None; cols * cols];
    let mut total = 0.0;
    let mut count = 0usize;
    for a in 0..cols {
        for b in a..cols {
            if sd[a] == 0.0 || sd[b] == 0.0 {
                continue;
            }
            let r = if a == b { 1.0 } else { (cov[a * cols + b] / (sd[a] * sd[b])).clamp(-1.0, 1.0) };
            matrix[a * cols + b] = Some(r);
            matrix[b * cols + a] = Some(r);
            if a != b {
                total += 2.0 * r.abs();
                count += 2;
            }
        }
    }
    let mean_abs_offdiag = (count > 0).then(|| total / count as f64);
    Ok(CorrelationReport { size: cols, matrix, mean_abs_offdiag })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairFprReport {
    pub size: usize,
    /// `P(pred i = 1 | truth i = 0, truth j = 1)`; `None` without support
    /// and on the diagonal.
    pub fpr: Vec<Option<f64>>,
    pub support: Vec<usize>,
}

impl PairFprReport {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.fpr[i * self.size + j]
    }

    /// Mean over supported off-diagonal entries.
    pub fn mean(&self) -> Option<f64> {
        let v: Vec<f64> = self.fpr.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn check_binary(v: &[f64]) -> Result<()> {
    if v.iter().any(|&x| x != 0.0 && x != 1.0) {
        return Err(Error::InvalidParameter("pair FPR inputs must be 0 or 1".to_string()));
    }
    Ok(())
}

pub fn pair_fpr(pred_binary: &[f64], truth_binary: &[f64], cols: usize) -> Result<PairFprReport> {
    let n = same_shape(pred_binary, truth_binary, cols)?;
    check_binary(pred_binary)?;
    check_binary(truth_binary)?;
    let mut fp = vec![0usize; cols * cols];
    let mut support = vec![0usize; cols * cols];
    for r in 0..n {
        let t = &truth_binary[r * cols..(r + 1) * cols];
        let p = &pred_binary[r * cols..(r + 1) * cols];
        for i in 0..cols {
            if t[i] != 0.0 {
                continue;
            }
            for j in 0..cols {
                if j != i && t[j] == 1.0 {
                    support[i * cols + j] += 1;
                    if p[i] == 1.0 {
                        fp[i * cols + j] += 1;
                    }
                }
            }
        }
    }
    let fpr = fp
        .iter()
        .zip(&support)
        .map(|(&f, &s)| (s > 0).then(|| f as f64 / s as f64))
        .collect();
    Ok(PairFprReport { size: cols, fpr, support })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaeGroup {
    pub edited: usize,
    pub rows: usize,
    pub mae: f64,
    /// Standard error of the per-row MAE; `None` for a single row.
    pub se: Option<f64>,
}

/// Mean absolute error between aligned rows, grouped by the number of edited
/// attributes per row (ascending).
pub fn mae_to_target(pred_on_edit: &[f64], pred_on_target: &[f64], cols: usize, edited_counts: &[usize]) -> Result<Vec<MaeGroup>> {
    let n = same_shape(pred_on_edit, pred_on_target, cols)?;
    if edited_counts.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: edited_counts.len() });
    }
    let per_row: Vec<f64> = (0..n)
        .map(|r| {
            (0..cols).map(|j| (pred_on_edit[r * cols + j] - pred_on_target[r * cols + j]).abs()).sum::<f64>() / cols as f64
        })
        .collect();
    let mut keys: Vec<usize> = edited_counts.to_vec();
    keys.sort_unstable();
    keys.dedup();
    Ok(keys
        .into_iter()
        .map(|k| {
            let v: Vec<f64> = per_row.iter().zip(edited_counts).filter(|(_, &c)| c == k).map(|(x, _)| *x).collect();
            let (mean, sd) = mean_sd(&v);
            MaeGroup { edited: k, rows: v.len(), mae: mean, se: sd.map(|s| s / libm::sqrt(v.len() as f64)) }
        })
        .collect())
}

/// Mean and sample standard deviation (`None` below two values).
pub fn mean_sd(v: &[f64]) -> (f64, Option<f64>) {
    if v.is_empty() {
        return (f64::NAN, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, None);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some(libm::sqrt(var)))
}

/// `f(n) = a − b · n^(−c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pow3Fit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Sum of squared residuals.
    pub residual: f64,
    /// Scores were constant; `b` is 0 and `c` is meaningless.
    pub flat: bool,
}

impl Pow3Fit {
    pub fn eval(&self, n: f64) -> f64 {
        self.a - self.b * libm::pow(n, -self.c)
    }

    /// Sample size at which the curve reaches `y`.
    pub fn solve(&self, y: f64) -> Result<f64> {
        if self.flat || !(self.b > 0.0) || !(y < self.a) {
            return Err(Error::Unreachable { reference: y, asymptote: self.a });
        }
        Ok(libm::pow(self.b / (self.a - y), 1.0 / self.c))
    }
}

pub const POW3_C_MIN: f64 = 0.05;
pub const POW3_C_MAX: f64 = 2.0;
const POW3_GRID: usize = 391;

/// Closed-form `(a, b)` and squared residual for a fixed exponent.
fn pow3_given_c(points: &[(f64, f64)], c: f64) -> (f64, f64, f64) {
    let xs: Vec<f64> = points.iter().map(|(n, _)| libm::pow(*n, -c)).collect();
    let k = points.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = points.iter().map(|(_, y)| y).sum::<f64>() / k;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, (_, y)) in xs.iter().zip(points) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    // y = a + slope·x with slope = −b
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - slope * mx;
    let b = -slope;
    let res = xs.iter().zip(points).map(|(x, (_, y))| (y - (a - b * x)) * (y - (a - b * x))).sum();
    (a, b, res)
}

/// Least-squares POW3 fit: grid over `c`, then golden-section refinement
/// around the best grid cell.
pub fn fit_pow3(points: &[(f64, f64)]) -> Result<Pow3Fit> {
    if points.iter().any(|(n, y)| !(n.is_finite() && *n > 0.0) || !y.is_finite()) {
        return Err(Error::InvalidParameter("POW3 points need positive sizes and finite scores".to_string()));
    }
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InvalidParameter(alloc::format!(
            "POW3 needs at least 3 distinct sizes, got {}",
            distinct.len()
        )));
    }
    let y0 = points[0].1;
    if points.iter().all(|p| p.1 == y0) {
        return Ok(Pow3Fit { a: y0, b: 0.0, c: 1.0, residual: 0.0, flat: true });
    }
    let step = (POW3_C_MAX - POW3_C_MIN) / (POW3_GRID - 1) as f64;
    let mut best = (f64::INFINITY, POW3_C_MIN);
    for i in 0..POW3_GRID {
        let c = POW3_C_MIN + step * i as f64;
        let (_, _, r) = pow3_given_c(points, c);
        if r < best.0 {
            best = (r, c);
        }
    }
    let (grid_res, grid_c) = best;
    let (mut lo, mut hi) = ((grid_c - step).max(POW3_C_MIN), (grid_c + step).min(POW3_C_MAX));
    let phi = (libm::sqrt(5.0) - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = pow3_given_c(points, x1).2;
    let mut f2 = pow3_given_c(points, x2).2;
    for _ in 0..200 {
        if hi - lo < 1e-13 {
            break;
        }
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = pow3_given_c(points, x1).2;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = pow3_given_c(points, x2).2;
        }
    }
    let refined_c = 0.5 * (lo + hi);
    let refined = pow3_given_c(points, refined_c);
    let (c, (a, b, residual)) =
        if refined.2 <= grid_res { (refined_c, refined) } else { (grid_c, pow3_given_c(points, grid_c)) };
    Ok(Pow3Fit { a, b, c, residual, flat: false })
}

/// `n* / n_current` where the fitted curve reaches `reference_score` at `n*`.
pub fn data_multiplier(fit: &Pow3Fit, reference_score: f64, n_current: f64) -> Result<f64> {
    if !(n_current > 0.0) {
        return Err(Error::InvalidParameter("current size must be positive".to_string()));
    }
    Ok(fit.solve(reference_score)? / n_current)
}
