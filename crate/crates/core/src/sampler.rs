//! Synthetic ground-truth generator, draw sources and acceptance–rejection
//! sampling on demographic predictors.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, normal_cdf};
use crate::linfit::{fit_logistic, fit_ridge, predict_raw, predict_table, LinearPredictor, PredictorKind};
use crate::nn::{Activation, Dense};
use crate::types::{AttributeKind, AttributeMeta, AttributeRole, AttributeTable, LatentCode, TableBuilder};

/// Length of the opaque stochastic tag attached to oracle draws.
pub const ORACLE_TAG_BYTES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorSpec {
    pub name: String,
    pub role: AttributeRole,
    pub kind: AttributeKind,
    /// Marginal probability that the factor is non-zero (continuous) or 1
    /// (binary).
    pub activation_rate: f64,
}

impl FactorSpec {
    pub fn new(name: impl Into<String>, role: AttributeRole, kind: AttributeKind, activation_rate: f64) -> Self {
        Self { name: name.into(), role, kind, activation_rate }
    }

    /// Maps a uniform copula value to the factor's range.
    ///
    /// Continuous factors are zero below the `1 − p` quantile and rise
    /// linearly to 1 above it; binary factors are the indicator of the same
    /// event.
    pub fn squash(&self, u: f64) -> f64 {
        let p = self.activation_rate;
        match self.kind {
            AttributeKind::Continuous => ((u - (1.0 - p)) / p).clamp(0.0, 1.0),
            AttributeKind::Binary => {
                if u > 1.0 - p {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fixed random network `x = tanh(W2 tanh(W1 z))` used as the observation
/// model for downstream detectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMap {
    pub hidden: usize,
    pub outputs: usize,
    pub gain: f64,
    pub seed: u64,
}

impl Default for ObservationMap {
    fn default() -> Self {
        Self { hidden: 48, outputs: 48, gain: 1.5, seed: 0 }
    }
}

impl ObservationMap {
    fn build(&self, d: usize) -> (Dense, Dense) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut layer = |inputs: usize, outputs: usize| {
            let scale = self.gain / libm::sqrt(inputs as f64);
            let weights = (0..inputs * outputs)
                .map(|_| (rng.sample::<f64, _>(StandardNormal) * scale) as f32)
                .collect();
            Dense { inputs, outputs, activation: Activation::Tanh, weights, bias: vec![0.0; outputs] }
        };
        let first = layer(d, self.hidden);
        let second = layer(self.hidden, self.outputs);
        (first, second)
    }
}

/// Ground-truth factor model: Gaussian-copula factors squashed to `[0, 1]`,
/// mixed linearly into latent codes with isotropic noise.
#[derive(Debug, Clone)]
pub struct OracleSpec {
    factors: Vec<FactorSpec>,
    correlation: Vec<f64>,
    dimension: usize,
    mixing: Vec<f64>,
    noise_sigma: f64,
    observation: ObservationMap,
    corr_factor: Vec<f64>,
    pinv: Vec<f64>,
    obs_layers: (Dense, Dense),
}

impl PartialEq for OracleSpec {
    fn eq(&self, other: &Self) -> bool {
        self.factors == other.factors
            && self.correlation == other.correlation
            && self.dimension == other.dimension
            && self.mixing == other.mixing
            && self.noise_sigma == other.noise_sigma
            && self.observation == other.observation
    }
}

impl OracleSpec {
    /// Validates and precomputes the copula factor, the mixing pseudo-inverse
    /// and the observation network.
    ///
    /// `correlation` is `k × k` and `mixing` is `d × k`, both row-major.
    pub fn new(
        factors: Vec<FactorSpec>,
        correlation: Vec<f64>,
        dimension: usize,
        mixing: Vec<f64>,
        noise_sigma: f64,
        observation: ObservationMap,
    ) -> Result<Self> {
        let k = factors.len();
        if k == 0 {
            return Err(Error::Empty("oracle has no factors".to_string()));
        }
        let mut seen: Vec<&str> = Vec::new();
        for f in &factors {
            if f.name.is_empty() || f.name.chars().any(char::is_whitespace) {
                return Err(Error::InvalidParameter(alloc::format!("invalid factor name `{}`", f.name)));
            }
            if seen.contains(&f.name.as_str()) {
                return Err(Error::DuplicateAttribute(f.name.clone()));
            }
            seen.push(&f.name);
            if !(f.activation_rate > 0.0 && f.activation_rate <= 1.0) {
                return Err(Error::InvalidParameter(alloc::format!(
                    "activation rate of `{}` must lie in (0, 1], got {}",
                    f.name, f.activation_rate
                )));
            }
        }
        if correlation.len() != k * k {
            return Err(Error::DimensionMismatch { expected: k * k, found: correlation.len() });
        }
        if mixing.len() != dimension * k {
            return Err(Error::DimensionMismatch { expected: dimension * k, found: mixing.len() });
        }
        if !linalg::all_finite(&correlation) || !linalg::all_finite(&mixing) {
            return Err(Error::NonFinite("oracle matrices".to_string()));
        }
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(Error::InvalidParameter(alloc::format!("noise_sigma must be non-negative, got {noise_sigma}")));
        }
        if observation.hidden == 0 || observation.outputs == 0 || !(observation.gain > 0.0) {
            return Err(Error::InvalidParameter("observation map needs positive widths and gain".to_string()));
        }
        let corr_factor = copula_factor(&correlation, k)?;

        let m = linalg::from_row_major(dimension, k, &mixing);
        let svd = m.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if dimension < k || !(smin > 1e-10 * smax.max(1.0)) {
            return Err(Error::RankDeficient);
        }
        let gram = m.transpose() * &m;
        let chol = gram.cholesky().ok_or(Error::RankDeficient)?;
        let pinv_m = chol.solve(&m.transpose());
        let mut pinv = Vec::with_capacity(k * dimension);
        for r in 0..k {
            for c in 0..dimension {
                pinv.push(pinv_m[(r, c)]);
            }
        }
        let obs_layers = observation.build(dimension);
        Ok(Self { factors, correlation, dimension, mixing, noise_sigma, observation, corr_factor, pinv, obs_layers })
    }

    pub fn factors(&self) -> &[FactorSpec] {
        &self.factors
    }

    pub fn k(&self) -> usize {
        self.factors.len()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn correlation(&self) -> &[f64] {
        &self.correlation
    }

    pub fn mixing(&self) -> &[f64] {
        &self.mixing
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn observation(&self) -> &ObservationMap {
        &self.observation
    }

    /// Latent axis of factor `i` (column `i` of the mixing matrix).
    pub fn factor_axis(&self, i: usize) -> Vec<f64> {
        let k = self.k();
        (0..self.dimension).map(|r| self.mixing[r * k + i]).collect()
    }

    pub fn factor_index(&self, name: &str) -> Result<usize> {
        self.factors.iter().position(|f| f.name == name).ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn attribute_meta(&self) -> Vec<AttributeMeta> {
        self.factors.iter().map(|f| AttributeMeta::new(f.name.clone(), f.kind, f.role)).collect()
    }

    /// One factor vector from the copula.
    pub fn draw_factors<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let k = self.k();
        let eps: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        (0..k)
            .map(|i| {
                let g = linalg::dot(&self.corr_factor[i * k..(i + 1) * k], &eps);
                self.factors[i].squash(normal_cdf(g))
            })
            .collect()
    }

    /// `z = M f + σ ε`.
    pub fn encode<R: Rng>(&self, factors: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let k = self.k();
        if factors.len() != k {
            return Err(Error::DimensionMismatch { expected: k, found: factors.len() });
        }
        Ok((0..self.dimension)
            .map(|r| {
                let noise: f64 = rng.sample(StandardNormal);
                linalg::dot(&self.mixing[r * k..(r + 1) * k], factors) + self.noise_sigma * noise
            })
            .collect())
    }

    /// Full draw: factors, then a latent code carrying a random tag.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> (LatentCode, Vec<f64>) {
        let f = self.draw_factors(rng);
        let z = self.encode(&f, rng).expect("factor length matches");
        let mut tag = vec![0u8; ORACLE_TAG_BYTES];
        rng.fill(&mut tag[..]);
        (LatentCode::with_tag(z, Some(tag)).expect("oracle codes are finite"), f)
    }

    /// Least-squares factor estimate `M⁺ z`.
    pub fn recover_factors(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, found: z.len() });
        }
        let d = self.dimension;
        Ok((0..self.k()).map(|r| linalg::dot(&self.pinv[r * d..(r + 1) * d], z)).collect())
    }

    /// Observation vector for downstream detectors.
    pub fn observe(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, found: z.len() });
        }
        let h = self.obs_layers.0.forward(z);
        Ok(self.obs_layers.1.forward(&h.out).out)
    }

    pub fn observation_dimension(&self) -> usize {
        self.observation.outputs
    }
}

/// `L` with `L Lᵀ = C` from the eigendecomposition, accepting PSD input.
fn copula_factor(c: &[f64], k: usize) -> Result<Vec<f64>> {
    for i in 0..k {
        if (c[i * k + i] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidCorrelation(alloc::format!("diagonal entry {i} is {}", c[i * k + i])));
        }
        for j in 0..i {
            if (c[i * k + j] - c[j * k + i]).abs() > 1e-12 {
                return Err(Error::InvalidCorrelation(alloc::format!("not symmetric at ({i}, {j})")));
            }
            if c[i * k + j].abs() > 1.0 {
                return Err(Error::InvalidCorrelation(alloc::format!("entry ({i}, {j}) outside [-1, 1]")));
            }
        }
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(k, k, c));
    let mut out = vec![0.0; k * k];
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -1e-10 {
            return Err(Error::InvalidCorrelation(alloc::format!("negative eigenvalue {lambda}")));
        }
        let s = libm::sqrt(lambda.max(0.0));
        for i in 0..k {
            out[i * k + j] = eig.eigenvectors[(i, j)] * s;
        }
    }
    Ok(out)
}

/// `d × k` matrix with orthonormal columns (QR of a Gaussian draw), row-major.
pub fn orthonormal_mixing(d: usize, k: usize, seed: u64) -> Result<Vec<f64>> {
    if k > d {
        return Err(Error::RankDeficient);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let mut out = Vec::with_capacity(d * k);
    for r in 0..d {
        for c in 0..k {
            out.push(q[(r, c)]);
        }
    }
    Ok(out)
}

/// Identity correlation with the listed pairs set to `rho`.
pub fn pair_correlation(k: usize, pairs: &[(usize, usize)], rho: f64) -> Vec<f64> {
    let mut c = vec![0.0; k * k];
    for i in 0..k {
        c[i * k + i] = 1.0;
    }
    for &(a, b) in pairs {
        c[a * k + b] = rho;
        c[b * k + a] = rho;
    }
    c
}

/// `n` rows drawn from `spec`; labels are the factors themselves.
pub fn oracle_sample(spec: &OracleSpec, n: usize, seed: u64) -> Result<AttributeTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = TableBuilder::new(spec.dimension, spec.attribute_meta())?;
    for _ in 0..n {
        let (z, f) = spec.draw(&mut rng);
        b.push(&z, &f)?;
    }
    Ok(b.finish())
}

/// Named oracle configurations used by the tests and the experiment harness.
pub mod presets {
    use super::*;

    fn au_factors(rates: &[f64]) -> Vec<FactorSpec> {
        rates
            .iter()
            .enumerate()
            .map(|(i, &p)| FactorSpec::new(alloc::format!("au{}", i + 1), AttributeRole::Au, AttributeKind::Continuous, p))
            .collect()
    }

    fn demographics() -> [FactorSpec; 2] {
        [
            FactorSpec::new("gender", AttributeRole::Demographic, AttributeKind::Binary, 0.5),
            FactorSpec::new("age", AttributeRole::Demographic, AttributeKind::Continuous, 1.0),
        ]
    }

    fn build(factors: Vec<FactorSpec>, corr: Vec<f64>, d: usize, noise: f64, seed: u64) -> OracleSpec {
        let k = factors.len();
        let mixing = orthonormal_mixing(d, k, seed).expect("d >= k");
        let obs = ObservationMap { seed: seed ^ 0x6f62_7365_7276_6531, ..ObservationMap::default() };
        OracleSpec::new(factors, corr, d, mixing, noise, obs).expect("preset is valid")
    }

    /// Six independent continuous AU factors in `d = 32`, low noise.
    pub fn independent(seed: u64) -> OracleSpec {
        build(au_factors(&[1.0; 6]), pair_correlation(6, &[], 0.0), 32, 0.05, seed)
    }

    /// Six AU factors with `corr(au1, au2) = 0.6`, moderate noise.
    pub fn confounded(seed: u64) -> OracleSpec {
        build(au_factors(&[1.0; 6]), pair_correlation(6, &[(0, 1)], 0.6), 32, 0.2, seed)
    }

    /// Twelve long-tailed AUs (activation rates geometric from 2% to 40%) with
    /// pairs (au1, au2) and (au3, au4) at 0.6, plus gender and age.
    pub fn entangled(seed: u64) -> OracleSpec {
        let m = 12;
        let rates: Vec<f64> =
            (0..m).map(|i| 0.02 * libm::pow(0.4 / 0.02, i as f64 / (m - 1) as f64)).collect();
        let mut f = au_factors(&rates);
        f.extend(demographics());
        let k = f.len();
        build(f, pair_correlation(k, &[(0, 1), (2, 3)], 0.6), 32, 0.2, seed)
    }

    /// Twelve AUs in three co-activating groups of four (within-group
    /// correlation 0.7, activation rate 30%), plus gender and age.
    pub fn coactivation(seed: u64) -> OracleSpec {
        let mut f = au_factors(&[0.3; 12]);
        f.extend(demographics());
        let k = f.len();
        let mut pairs = Vec::new();
        for g in 0..3 {
            for a in 0..4 {
                for b in a + 1..4 {
                    pairs.push((4 * g + a, 4 * g + b));
                }
            }
        }
        build(f, pair_correlation(k, &pairs, 0.7), 32, 0.1, seed)
    }

    /// Six AUs active half the time plus gender and age, low noise.
    pub fn expressive(seed: u64) -> OracleSpec {
        let mut f = au_factors(&[0.5; 6]);
        f.extend(demographics());
        let k = f.len();
        build(f, pair_correlation(k, &[], 0.0), 32, 0.05, seed)
    }

    pub const NAMES: [&str; 5] = ["independent", "confounded", "entangled", "coactivation", "expressive"];

    pub fn by_name(name: &str, seed: u64) -> Result<OracleSpec> {
        Ok(match name {
            "independent" => independent(seed),
            "confounded" => confounded(seed),
            "entangled" => entangled(seed),
            "coactivation" => coactivation(seed),
            "expressive" => expressive(seed),
            _ => return Err(Error::InvalidParameter(alloc::format!("unknown oracle preset `{name}`"))),
        })
    }
}

/// Where candidate codes come from.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum GeneratorSource {
    Oracle { spec: OracleSpec, seed: u64 },
    /// Rows of a table, visited in order.
    Table(AttributeTable),
}

impl GeneratorSource {
    pub fn dimension(&self) -> usize {
        match self {
            GeneratorSource::Oracle { spec, .. } => spec.dimension(),
            GeneratorSource::Table(t) => t.dimension(),
        }
    }

    pub fn attribute_meta(&self) -> Vec<AttributeMeta> {
        match self {
            GeneratorSource::Oracle { spec, .. } => spec.attribute_meta(),
            GeneratorSource::Table(t) => t.meta().to_vec(),
        }
    }

    /// Stream of `(code, labels)` candidates.
    pub fn draws(&self) -> Box<dyn Iterator<Item = (LatentCode, Vec<f64>)> + '_> {
        match self {
            GeneratorSource::Oracle { spec, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Box::new(core::iter::repeat_with(move || spec.draw(&mut rng)))
            }
            GeneratorSource::Table(t) => Box::new((0..t.n_rows()).map(move |r| (t.latent(r), t.labels(r).to_vec()))),
        }
    }
}

/// Fitted demographic predictors and bin boundaries for continuous ones.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictorSet {
    pub predictors: Vec<LinearPredictor>,
    /// Inner bin boundaries (strictly increasing) for binned attributes.
    pub binnings: Vec<(String, Vec<f64>)>,
}

impl PredictorSet {
    pub fn get(&self, name: &str) -> Result<&LinearPredictor> {
        self.predictors.iter().find(|p| p.target == name).ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn boundaries(&self, name: &str) -> Result<&[f64]> {
        self.binnings
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    /// Logistic predictors for `binary` attributes and ridge predictors for
    /// `binned` ones, with bin boundaries at empirical quantiles of the
    /// training predictions.
    pub fn fit(table: &AttributeTable, binary: &[String], binned: &[(String, usize)], alpha: f64, l2: f64) -> Result<Self> {
        let mut out = Self::default();
        for name in binary {
            let meta = table.attribute(name)?;
            if meta.kind != AttributeKind::Binary {
                return Err(Error::WrongAttributeKind { name: name.clone(), expected: "binary" });
            }
            out.predictors.push(fit_logistic(table, name, &[], l2)?);
        }
        for (name, bins) in binned {
            let meta = table.attribute(name)?;
            if meta.kind != AttributeKind::Continuous {
                return Err(Error::WrongAttributeKind { name: name.clone(), expected: "continuous" });
            }
            let p = fit_ridge(table, name, &[], alpha)?;
            let preds = predict_table(&p, table)?;
            out.binnings.push((name.clone(), quantile_boundaries(&preds, *bins)?));
            out.predictors.push(p);
        }
        Ok(out)
    }
}

/// Inner boundaries splitting `values` into `bins` equal-count groups
/// (linear-interpolated empirical quantiles).
pub fn quantile_boundaries(values: &[f64], bins: usize) -> Result<Vec<f64>> {
    if bins < 2 {
        return Err(Error::InvalidParameter("need at least two bins".to_string()));
    }
    if values.len() < bins {
        return Err(Error::Empty(alloc::format!("{} values cannot fill {bins} bins", values.len())));
    }
    let mut v = values.to_vec();
    if !linalg::all_finite(&v) {
        return Err(Error::NonFinite("quantile input".to_string()));
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mut out = Vec::with_capacity(bins - 1);
    for q in 1..bins {
        let pos = q as f64 / bins as f64 * (n - 1) as f64;
        let lo = libm::floor(pos) as usize;
        let frac = pos - lo as f64;
        let b = if lo + 1 < n { v[lo] + frac * (v[lo + 1] - v[lo]) } else { v[lo] };
        if let Some(&prev) = out.last() {
            if !(b > prev) {
                return Err(Error::InvalidParameter("quantile boundaries collapse; predictions are too concentrated".to_string()));
            }
        }
        out.push(b);
    }
    Ok(out)
}

/// One acceptance rule.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterRule {
    /// Logistic probability `≥ 0.5` is class 1.
    Class { attribute: String, class: bool },
    /// Predictor output in `[b[index-1], b[index])`, open at the ends.
    Bin { attribute: String, boundaries: Vec<f64>, index: usize },
}

impl FilterRule {
    pub fn attribute(&self) -> &str {
        match self {
            FilterRule::Class { attribute, .. } | FilterRule::Bin { attribute, .. } => attribute,
        }
    }

    fn validate(&self) -> Result<()> {
        if let FilterRule::Bin { attribute, boundaries, index } = self {
            if *index > boundaries.len() {
                return Err(Error::InvalidParameter(alloc::format!("bin {index} out of range for `{attribute}`")));
            }
            if boundaries.windows(2).any(|w| !(w[0] < w[1])) || !linalg::all_finite(boundaries) {
                return Err(Error::InvalidParameter(alloc::format!("bins for `{attribute}` are not strictly ordered")));
            }
        }
        Ok(())
    }

    /// Whether predictor output `value` satisfies the rule.
    pub fn admits(&self, value: f64) -> bool {
        match self {
            FilterRule::Class { class, .. } => (value >= 0.5) == *class,
            FilterRule::Bin { boundaries, index, .. } => {
                let lo = if *index == 0 { f64::NEG_INFINITY } else { boundaries[index - 1] };
                let hi = boundaries.get(*index).copied().unwrap_or(f64::INFINITY);
                value >= lo && value < hi
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DemographicFilter {
    pub rules: Vec<FilterRule>,
}

impl DemographicFilter {
    pub fn vacuous() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        self.rules.iter().try_for_each(FilterRule::validate)
    }

    pub fn admits(&self, z: &[f64], predictors: &PredictorSet) -> Result<bool> {
        for rule in &self.rules {
            let p = predictors.get(rule.attribute())?;
            if !rule.admits(predict_raw(p, z, &[])?) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Short label such as `gender=1,age=2`.
    pub fn label(&self) -> String {
        let parts: Vec<String> = self
            .rules
            .iter()
            .map(|r| match r {
                FilterRule::Class { attribute, class } => alloc::format!("{attribute}={}", u8::from(*class)),
                FilterRule::Bin { attribute, index, .. } => alloc::format!("{attribute}={index}"),
            })
            .collect();
        parts.join(",")
    }
}

#[derive(Debug, Clone)]
pub struct Sampled {
    pub table: AttributeTable,
    pub draws: usize,
}

impl Sampled {
    pub fn acceptance_rate(&self) -> f64 {
        if self.draws == 0 {
            0.0
        } else {
            self.table.n_rows() as f64 / self.draws as f64
        }
    }
}

/// Default draw budget for a target count.
pub fn default_max_draws(n_target: usize) -> usize {
    n_target.saturating_mul(1000)
}

/// Draws from `source` until `n_target` candidates satisfy `filter` under
/// `predictors`. Accepted rows keep the source's labels.
pub fn accept_reject_sample(
    source: &GeneratorSource,
    filter: &DemographicFilter,
    predictors: &PredictorSet,
    n_target: usize,
    max_draws: usize,
) -> Result<Sampled> {
    filter.validate()?;
    for rule in &filter.rules {
        let p = predictors.get(rule.attribute())?;
        if !p.covariates.is_empty() {
            return Err(Error::InvalidParameter(alloc::format!(
                "filter predictor `{}` must not use covariates",
                p.target
            )));
        }
        if p.dimension() != source.dimension() {
            return Err(Error::DimensionMismatch { expected: source.dimension(), found: p.dimension() });
        }
        match rule {
            FilterRule::Class { .. } if p.kind != PredictorKind::Logistic => {
                return Err(Error::WrongAttributeKind { name: p.target.clone(), expected: "binary" })
            }
            FilterRule::Bin { .. } if p.kind != PredictorKind::Ridge => {
                return Err(Error::WrongAttributeKind { name: p.target.clone(), expected: "continuous" })
            }
            _ => {}
        }
    }
    let mut b = TableBuilder::new(source.dimension(), source.attribute_meta())?;
    let mut draws = 0usize;
    let mut stream = source.draws();
    while b.len() < n_target {
        if draws >= max_draws {
            break;
        }
        let Some((z, labels)) = stream.next() else { break };
        draws += 1;
        if filter.admits(z.z(), predictors)? {
            b.push(&z, &labels)?;
        }
    }
    if b.len() < n_target {
        let accepted = b.len();
        return Err(Error::DrawsExhausted {
            target: n_target,
            accepted,
            draws,
            rate: if draws == 0 { 0.0 } else { accepted as f64 / draws as f64 },
        });
    }
    Ok(Sampled { table: b.finish(), draws })
}

/// Cartesian product of demographic cells, each with quota `per_cell`.
///
/// Binary attributes contribute two cells (class 0, class 1); binned
/// attributes one cell per bin. The first attribute varies slowest.
pub fn balanced_demographic_plan(
    binary: &[String],
    binned: &[(String, Vec<f64>)],
    per_cell: usize,
) -> Result<Vec<(DemographicFilter, usize)>> {
    if binary.is_empty() && binned.is_empty() {
        return Err(Error::Empty("balanced plan needs at least one attribute".to_string()));
    }
    let mut axes: Vec<Vec<FilterRule>> = binary
        .iter()
        .map(|a| {
            [false, true].iter().map(|&class| FilterRule::Class { attribute: a.clone(), class }).collect()
        })
        .collect();
    for (a, boundaries) in binned {
        let axis: Vec<FilterRule> = (0..=boundaries.len())
            .map(|index| FilterRule::Bin { attribute: a.clone(), boundaries: boundaries.clone(), index })
            .collect();
        axis[0].validate()?;
        axes.push(axis);
    }
    let mut cells: Vec<Vec<FilterRule>> = vec![Vec::new()];
    for axis in &axes {
        cells = cells
            .iter()
            .flat_map(|prefix| {
                axis.iter().map(move |r| {
                    let mut c = prefix.clone();
                    c.push(r.clone());
                    c
                })
            })
            .collect();
    }
    Ok(cells.into_iter().map(|rules| (DemographicFilter { rules }, per_cell)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linfit::LinearPredictor;

    fn two_factor(rho: f64, noise: f64) -> OracleSpec {
        let f = vec![
            FactorSpec::new("a", AttributeRole::Au, AttributeKind::Continuous, 1.0),
            FactorSpec::new("b", AttributeRole::Au, AttributeKind::Continuous, 1.0),
        ];
        OracleSpec::new(f, pair_correlation(2, &[(0, 1)], rho), 4, orthonormal_mixing(4, 2, 1).unwrap(), noise, ObservationMap::default())
            .unwrap()
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let (ma, mb) = (linalg::mean(a), linalg::mean(b));
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / libm::sqrt(saa * sbb)
    }

    #[test]
    fn independent_factors_are_uncorrelated() {
        let t = oracle_sample(&two_factor(0.0, 0.0), 10_000, 3).unwrap();
        assert!(pearson(&t.column(0), &t.column(1)).abs() < 0.05);
    }

    #[test]
    fn copula_correlation_matches_design() {
        let t = oracle_sample(&two_factor(0.6, 0.0), 10_000, 4).unwrap();
        let r = pearson(&t.column(0), &t.column(1));
        // uniform marginals of a Gaussian copula: (6/π) asin(ρ/2)
        let expect = 6.0 / core::f64::consts::PI * libm::asin(0.3);
        assert!((0.5..=0.7).contains(&r), "{r}");
        assert!((r - expect).abs() < 0.03, "{r} vs {expect}");
    }

    #[test]
    fn sampling_is_deterministic_and_labels_are_factors() {
        let spec = two_factor(0.3, 0.0);
        let a = oracle_sample(&spec, 50, 9).unwrap();
        assert_eq!(a, oracle_sample(&spec, 50, 9).unwrap());
        assert_ne!(a, oracle_sample(&spec, 50, 10).unwrap());
        // with zero noise the codes are exactly M f
        for r in 0..50 {
            let rec = spec.recover_factors(a.code(r)).unwrap();
            for (x, y) in rec.iter().zip(a.labels(r)) {
                assert!((x - y).abs() < 1e-12);
            }
            assert_eq!(a.tag(r).unwrap().len(), ORACLE_TAG_BYTES);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let f = || vec![
            FactorSpec::new("a", AttributeRole::Au, AttributeKind::Continuous, 1.0),
            FactorSpec::new("b", AttributeRole::Au, AttributeKind::Continuous, 1.0),
        ];
        let mix = orthonormal_mixing(3, 2, 0).unwrap();
        let bad_corr = vec![1.0, 1.5, 1.5, 1.0];
        assert!(matches!(OracleSpec::new(f(), bad_corr, 3, mix.clone(), 0.0, ObservationMap::default()), Err(Error::InvalidCorrelation(_))));
        let not_psd = {
            let mut c = pair_correlation(3, &[(0, 1), (1, 2)], 0.9);
            c[2] = -0.9;
            c[6] = -0.9;
            c
        };
        let f3 = vec![
            FactorSpec::new("a", AttributeRole::Au, AttributeKind::Continuous, 1.0),
            FactorSpec::new("b", AttributeRole::Au, AttributeKind::Continuous, 1.0),
            FactorSpec::new("c", AttributeRole::Au, AttributeKind::Continuous, 1.0),
        ];
        assert!(matches!(
            OracleSpec::new(f3, not_psd, 3, orthonormal_mixing(3, 3, 0).unwrap(), 0.0, ObservationMap::default()),
            Err(Error::InvalidCorrelation(_))
        ));
        let dup = vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        assert!(matches!(OracleSpec::new(f(), pair_correlation(2, &[], 0.0), 3, dup, 0.0, ObservationMap::default()), Err(Error::RankDeficient)));
        assert!(OracleSpec::new(f(), pair_correlation(2, &[], 0.0), 3, mix, 0.0, ObservationMap::default()).is_ok());
    }

    #[test]
    fn presets_are_valid() {
        for name in presets::NAMES {
            let s = presets::by_name(name, 1).unwrap();
            let t = oracle_sample(&s, 20, 0).unwrap();
            assert_eq!(t.n_rows(), 20);
            assert_eq!(s.observe(t.code(0)).unwrap().len(), s.observation_dimension());
        }
        assert!(presets::by_name("nope", 0).is_err());
    }

    #[test]
    fn binary_factor_rate() {
        let f = vec![FactorSpec::new("g", AttributeRole::Demographic, AttributeKind::Binary, 0.3)];
        let s = OracleSpec::new(f, vec![1.0], 2, orthonormal_mixing(2, 1, 0).unwrap(), 0.1, ObservationMap::default()).unwrap();
        let t = oracle_sample(&s, 10_000, 1).unwrap();
        let rate = linalg::mean(&t.column(0));
        assert!((rate - 0.3).abs() < 3.0 * libm::sqrt(0.3 * 0.7 / 10_000.0) + 1e-3, "{rate}");
    }

    fn gender_predictor() -> PredictorSet {
        // logistic on the first latent coordinate
        let p = LinearPredictor::new(vec![4.0, 0.0], -1.0, PredictorKind::Logistic, "g", vec![], 1.0).unwrap();
        PredictorSet { predictors: vec![p], binnings: vec![] }
    }

    fn gender_source() -> GeneratorSource {
        let f = vec![
            FactorSpec::new("g", AttributeRole::Demographic, AttributeKind::Continuous, 1.0),
            FactorSpec::new("u", AttributeRole::Au, AttributeKind::Continuous, 1.0),
        ];
        let mix = vec![1.0, 0.0, 0.0, 1.0];
        let spec = OracleSpec::new(f, pair_correlation(2, &[], 0.0), 2, mix, 0.05, ObservationMap::default()).unwrap();
        GeneratorSource::Oracle { spec, seed: 17 }
    }

    #[test]
    fn vacuous_filter_accepts_everything() {
        let src = gender_source();
        let s = accept_reject_sample(&src, &DemographicFilter::vacuous(), &PredictorSet::default(), 25, 25).unwrap();
        assert_eq!(s.draws, 25);
        assert_eq!(s.acceptance_rate(), 1.0);
        let GeneratorSource::Oracle { spec, seed } = &src else { unreachable!() };
        assert_eq!(s.table, oracle_sample(spec, 25, *seed).unwrap());
    }

    #[test]
    fn acceptance_rate_matches_prevalence() {
        let src = gender_source();
        let preds = gender_predictor();
        let filter = DemographicFilter { rules: vec![FilterRule::Class { attribute: "g".into(), class: true }] };
        // prevalence measured by the predictor on an independent stream
        let GeneratorSource::Oracle { spec, .. } = &src else { unreachable!() };
        let probe = oracle_sample(spec, 10_000, 99).unwrap();
        let p = (0..probe.n_rows()).filter(|&r| filter.admits(probe.code(r), &preds).unwrap()).count() as f64 / 1e4;
        let s = accept_reject_sample(&src, &filter, &preds, 1_000_000, 10_000);
        let Err(Error::DrawsExhausted { draws, rate, .. }) = s else { panic!("expected exhaustion") };
        assert_eq!(draws, 10_000);
        let se = libm::sqrt(p * (1.0 - p) / 1e4);
        assert!((rate - p).abs() < 3.0 * libm::sqrt(2.0) * se, "{rate} vs {p}");
    }

    #[test]
    fn accepted_rows_satisfy_the_filter_and_leave_other_factors_alone() {
        let src = gender_source();
        let preds = gender_predictor();
        let filter = DemographicFilter { rules: vec![FilterRule::Class { attribute: "g".into(), class: true }] };
        let s = accept_reject_sample(&src, &filter, &preds, 2000, default_max_draws(2000)).unwrap();
        assert_eq!(s.table.n_rows(), 2000);
        for r in 0..s.table.n_rows() {
            assert!(predict_raw(&preds.predictors[0], s.table.code(r), &[]).unwrap() >= 0.5);
        }
        let GeneratorSource::Oracle { spec, .. } = &src else { unreachable!() };
        let reference = oracle_sample(spec, 2000, 5).unwrap();
        let ks = ks_statistic(&s.table.column(1), &reference.column(1));
        let crit = 1.628 * libm::sqrt(4000.0 / (2000.0 * 2000.0));
        assert!(ks < crit, "{ks} >= {crit}");
    }

    fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        while i < a.len() && j < b.len() {
            let x = a[i].min(b[j]);
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn impossible_class_exhausts_draws() {
        let p = LinearPredictor::new(vec![0.0, 0.0], -50.0, PredictorKind::Logistic, "g", vec![], 1.0).unwrap();
        let preds = PredictorSet { predictors: vec![p], binnings: vec![] };
        let filter = DemographicFilter { rules: vec![FilterRule::Class { attribute: "g".into(), class: true }] };
        let r = accept_reject_sample(&gender_source(), &filter, &preds, 3, 300);
        assert!(matches!(r, Err(Error::DrawsExhausted { accepted: 0, draws: 300, .. })));
        let missing = DemographicFilter { rules: vec![FilterRule::Class { attribute: "zz".into(), class: true }] };
        assert!(matches!(accept_reject_sample(&gender_source(), &missing, &preds, 3, 300), Err(Error::UnknownAttribute(_))));
    }

    #[test]
    fn table_source_runs_out() {
        let GeneratorSource::Oracle { spec, .. } = gender_source() else { unreachable!() };
        let t = oracle_sample(&spec, 5, 0).unwrap();
        let r = accept_reject_sample(&GeneratorSource::Table(t.clone()), &DemographicFilter::vacuous(), &PredictorSet::default(), 6, 100);
        assert!(matches!(r, Err(Error::DrawsExhausted { accepted: 5, draws: 5, .. })));
        let ok = accept_reject_sample(&GeneratorSource::Table(t.clone()), &DemographicFilter::vacuous(), &PredictorSet::default(), 5, 100).unwrap();
        assert_eq!(ok.table, t);
    }

    #[test]
    fn plan_shapes() {
        let plan = balanced_demographic_plan(&["gender".into()], &[("age".into(), vec![0.3, 0.6])], 5).unwrap();
        assert_eq!(plan.len(), 6);
        assert_eq!(plan.iter().map(|(_, n)| n).sum::<usize>(), 30);
        assert_eq!(plan[0].0.label(), "gender=0,age=0");
        assert_eq!(plan[5].0.label(), "gender=1,age=2");
        assert_eq!(balanced_demographic_plan(&["g".into()], &[], 1).unwrap().len(), 2);
        assert!(matches!(balanced_demographic_plan(&[], &[], 1), Err(Error::Empty(_))));
        assert!(balanced_demographic_plan(&[], &[("a".into(), vec![0.5, 0.2])], 1).is_err());
    }

    #[test]
    fn bins_partition_the_line() {
        let b = vec![-1.0, 2.0];
        let rules: Vec<FilterRule> = (0..3).map(|index| FilterRule::Bin { attribute: "a".into(), boundaries: b.clone(), index }).collect();
        for v in [-5.0, -1.0, 0.0, 2.0, 7.0] {
            assert_eq!(rules.iter().filter(|r| r.admits(v)).count(), 1, "{v}");
        }
        assert!(rules[1].admits(-1.0) && rules[2].admits(2.0));
    }

    #[test]
    fn terciles() {
        let v: Vec<f64> = (0..301).map(|i| i as f64).collect();
        assert_eq!(quantile_boundaries(&v, 3).unwrap(), vec![100.0, 200.0]);
        assert!(quantile_boundaries(&[1.0; 10], 3).is_err());
    }

    #[test]
    fn predictor_set_fits_demographics() {
        let spec = presets::expressive(2);
        let t = oracle_sample(&spec, 2000, 3).unwrap();
        let set = PredictorSet::fit(&t, &["gender".into()], &[("age".into(), 3)], 10.0, 1.0).unwrap();
        assert_eq!(set.boundaries("age").unwrap().len(), 2);
        assert_eq!(set.get("gender").unwrap().kind, PredictorKind::Logistic);
        assert!(PredictorSet::fit(&t, &["age".into()], &[], 10.0, 1.0).is_err());
    }
}
