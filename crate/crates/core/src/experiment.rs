//! Augmentation construction, downstream detector training and scenario
//! runs on the oracle generator.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::editor::apply_edit;
use crate::error::{Error, Result};
use crate::linalg::sigmoid;
use crate::linfit::{fit_directions, DirectionFitConfig};
use crate::metrics::{binarize, f1_scores, pair_fpr, PairFprReport};
use crate::neutralizer::{neutralize, predict_aus, train_neutralizer, NeutralizeConfig, NeutralizerConfig, NeutralizerModel};
use crate::nn::{permutation, Activation, AdamConfig, Dense, DenseCache, DenseGrad, Trainer};
use crate::sampler::{
    accept_reject_sample, balanced_demographic_plan, default_max_draws, oracle_sample, GeneratorSource, OracleSpec,
    PredictorSet,
};
use crate::types::{AttributeKind, AttributeMeta, AttributeRole, AttributeTable, DirectionBank, TableBuilder};

/// Name of the binary column marking synthetic rows.
pub const SYNTHETIC_COLUMN: &str = "synthetic";

/// Derives an independent stream seed.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut x = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    EditNeutrals,
    SynthesizeBalanced,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPlan {
    pub strategy: Strategy,
    /// Edited variants per AU per neutral source.
    pub copies_per_au: usize,
    /// Calibrated step applied to the activated AU.
    pub step: f64,
    /// AU labels below this count as inactive.
    pub threshold: f64,
}

impl Default for AugmentationPlan {
    fn default() -> Self {
        Self { strategy: Strategy::Both, copies_per_au: 1, step: 1.0, threshold: 0.1 }
    }
}

impl AugmentationPlan {
    fn validate(&self) -> Result<()> {
        if self.copies_per_au == 0 {
            return Err(Error::InvalidParameter("copies_per_au must be at least 1".to_string()));
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::InvalidParameter(alloc::format!("edit step must lie in (0, 1], got {}", self.step)));
        }
        Ok(())
    }
}

/// Rows whose AU labels are all below `threshold`.
pub fn neutral_rows(table: &AttributeTable, threshold: f64) -> Vec<usize> {
    let au = table.indices_with_role(AttributeRole::Au);
    (0..table.n_rows()).filter(|&r| au.iter().all(|&i| table.labels(r)[i] < threshold)).collect()
}

/// One edited variant per AU (times `copies_per_au`) of every row of
/// `table`, which must be neutral. The activated AU is labelled with the
/// step, the others 0; non-AU labels are copied.
pub fn build_edited_set(table: &AttributeTable, bank: &DirectionBank, plan: &AugmentationPlan) -> Result<AttributeTable> {
    plan.validate()?;
    let au = table.indices_with_role(AttributeRole::Au);
    let mut dirs = Vec::with_capacity(au.len());
    for &i in &au {
        let d = bank.get(&table.meta()[i].name)?;
        if d.is_degenerate() {
            return Err(Error::DegenerateDirection(d.name().to_string()));
        }
        if d.dimension() != table.dimension() {
            return Err(Error::DimensionMismatch { expected: table.dimension(), found: d.dimension() });
        }
        dirs.push(d);
    }
    let mut b = TableBuilder::new(table.dimension(), table.meta().to_vec())?;
    for r in 0..table.n_rows() {
        for &i in &au {
            let v = table.labels(r)[i];
            if v >= plan.threshold {
                return Err(Error::NonNeutralRow { row: r, attribute: table.meta()[i].name.clone(), value: v });
            }
        }
        let z = table.latent(r);
        for (k, dir) in dirs.iter().enumerate() {
            let edited = apply_edit(&z, dir, plan.step)?;
            let mut labels = table.labels(r).to_vec();
            for (j, &i) in au.iter().enumerate() {
                labels[i] = if j == k { plan.step } else { 0.0 };
            }
            for _ in 0..plan.copies_per_au {
                b.push(&edited, &labels)?;
            }
        }
    }
    Ok(b.finish())
}

/// Appends the binary nuisance column marking rows as synthetic or not.
pub fn mark_origin(table: &AttributeTable, synthetic: bool) -> Result<AttributeTable> {
    let v = vec![if synthetic { 1.0 } else { 0.0 }; table.n_rows()];
    table.with_attribute(AttributeMeta::new(SYNTHETIC_COLUMN, AttributeKind::Binary, AttributeRole::Nuisance), &v)
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub binary: Vec<String>,
    pub binned: Vec<String>,
    pub neutralize: NeutralizeConfig,
    /// Largest tolerated fraction of failed neutralizations.
    pub max_failure_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticSet {
    /// Edited neutral codes with the `synthetic` column set.
    pub table: AttributeTable,
    /// Neutralized codes before editing, one per accepted draw.
    pub neutral: AttributeTable,
    pub attempted: usize,
    pub failed: usize,
    pub draws: usize,
    pub cells: Vec<(String, usize)>,
}

/// Balanced demographic draws from the oracle, neutralized and then edited
/// into one variant per AU.
///
/// A neutralized code must have every AU prediction below the plan
/// threshold; failures are redrawn until more than `max_failure_rate` of the
/// planned total has failed.
pub fn build_synthetic_set(
    spec: &OracleSpec,
    predictors: &PredictorSet,
    neutralizer: &NeutralizerModel,
    bank: &DirectionBank,
    plan: &AugmentationPlan,
    per_cell: usize,
    config: &SyntheticConfig,
) -> Result<SyntheticSet> {
    plan.validate()?;
    if !(0.0..=1.0).contains(&config.max_failure_rate) {
        return Err(Error::InvalidParameter("max_failure_rate must lie in [0, 1]".to_string()));
    }
    if neutralizer.dimension() != spec.dimension() {
        return Err(Error::DimensionMismatch { expected: spec.dimension(), found: neutralizer.dimension() });
    }
    let binned = config
        .binned
        .iter()
        .map(|n| Ok((n.clone(), predictors.boundaries(n)?.to_vec())))
        .collect::<Result<Vec<_>>>()?;
    let cells = balanced_demographic_plan(&config.binary, &binned, per_cell)?;
    let total = cells.len() * per_cell;
    let budget = libm::floor(config.max_failure_rate * total as f64) as usize;

    let mut neutral = TableBuilder::new(spec.dimension(), spec.attribute_meta())?;
    let (mut attempted, mut failed, mut draws) = (0usize, 0usize, 0usize);
    let mut stream = 0u64;
    let mut summary = Vec::with_capacity(cells.len());
    for (filter, quota) in &cells {
        let mut done = 0usize;
        while done < *quota {
            stream += 1;
            let source = GeneratorSource::Oracle { spec: spec.clone(), seed: stream_seed(config.seed, stream) };
            let need = quota - done;
            let got = accept_reject_sample(&source, filter, predictors, need, default_max_draws(need))?;
            draws += got.draws;
            for r in 0..got.table.n_rows() {
                attempted += 1;
                let ncfg = NeutralizeConfig { seed: stream_seed(config.seed, (stream << 20) + r as u64), ..config.neutralize.clone() };
                let out = neutralize(&got.table.latent(r), neutralizer, &ncfg)?;
                if predict_aus(neutralizer, &out.code)?.iter().all(|&p| p < plan.threshold) {
                    neutral.push(&out.code, got.table.labels(r))?;
                    done += 1;
                } else {
                    failed += 1;
                    if failed > budget {
                        return Err(Error::NeutralizationFailures { failed, attempted, bound: config.max_failure_rate });
                    }
                }
            }
        }
        summary.push((filter.label(), *quota));
    }
    let neutral = neutral.finish();
    // labels of the neutral codes: AUs are zero by construction
    let au = neutral.indices_with_role(AttributeRole::Au);
    let mut zeroed = TableBuilder::new(neutral.dimension(), neutral.meta().to_vec())?;
    for r in 0..neutral.n_rows() {
        let mut l = neutral.labels(r).to_vec();
        for &i in &au {
            l[i] = 0.0;
        }
        zeroed.push(&neutral.latent(r), &l)?;
    }
    let neutral = zeroed.finish();
    let edited = build_edited_set(&neutral, bank, plan)?;
    Ok(SyntheticSet { table: mark_origin(&edited, true)?, neutral, attempted, failed, draws, cells: summary })
}

/// Observation/label pairs for the downstream detector (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorData {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl DetectorData {
    pub fn len(&self) -> usize {
        self.inputs.len().checked_div(self.input_dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Observations of every code through the oracle, AU labels as targets.
    pub fn from_table(spec: &OracleSpec, table: &AttributeTable, aus: &[String]) -> Result<Self> {
        let idx = aus.iter().map(|a| table.attribute_index(a)).collect::<Result<Vec<_>>>()?;
        let mut inputs = Vec::with_capacity(table.n_rows() * spec.observation_dimension());
        let mut targets = Vec::with_capacity(table.n_rows() * idx.len());
        for r in 0..table.n_rows() {
            inputs.extend(spec.observe(table.code(r))?);
            targets.extend(idx.iter().map(|&i| table.labels(r)[i]));
        }
        Ok(Self { inputs, targets, input_dim: spec.observation_dimension(), output_dim: idx.len() })
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.input_dim != other.input_dim || self.output_dim != other.output_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, found: other.input_dim });
        }
        let mut out = self.clone();
        out.inputs.extend_from_slice(&other.inputs);
        out.targets.extend_from_slice(&other.targets);
        Ok(out)
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        let mut out = Self { inputs: Vec::new(), targets: Vec::new(), input_dim: self.input_dim, output_dim: self.output_dim };
        for &r in rows {
            out.inputs.extend_from_slice(&self.inputs[r * self.input_dim..(r + 1) * self.input_dim]);
            out.targets.extend_from_slice(&self.targets[r * self.output_dim..(r + 1) * self.output_dim]);
        }
        out
    }

    fn input(&self, r: usize) -> &[f64] {
        &self.inputs[r * self.input_dim..(r + 1) * self.input_dim]
    }

    fn target(&self, r: usize) -> &[f64] {
        &self.targets[r * self.output_dim..(r + 1) * self.output_dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { hidden: 64, lr: 1e-3, batch_size: 64, max_epochs: 300, patience: 40, seed: 0 }
    }
}

/// `x -> tanh -> sigmoid` network predicting AU intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamDetector {
    pub hidden: Dense,
    pub output: Dense,
}

impl DownstreamDetector {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let h = self.hidden.forward(x);
        self.output.forward(&h.out).out.into_iter().map(sigmoid).collect()
    }

    /// Row-major predictions for every input row.
    pub fn predict_all(&self, data: &DetectorData) -> Vec<f64> {
        (0..data.len()).flat_map(|r| self.predict(data.input(r))).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedDetector {
    pub model: DownstreamDetector,
    /// `(train_loss, val_loss)` per epoch.
    pub history: Vec<(f64, f64)>,
    pub best_epoch: usize,
}

fn detector_loss(
    model: &DownstreamDetector,
    x: &[f64],
    y: &[f64],
    weights: &[f64],
    caches: &mut (DenseCache, DenseCache),
    d_out: &mut [f64],
) -> f64 {
    model.hidden.forward_into(x, &mut caches.0);
    model.output.forward_into(&caches.0.out, &mut caches.1);
    let m = y.len() as f64;
    let mut loss = 0.0;
    for k in 0..y.len() {
        let p = sigmoid(caches.1.out[k]);
        let e = p - y[k];
        loss += weights[k] * e * e / m;
        d_out[k] = 2.0 * weights[k] * e * p * (1.0 - p) / m;
    }
    loss
}

/// Adam on (optionally per-AU weighted) MSE with early stopping on the
/// unweighted validation MSE; returns the best checkpoint.
pub fn train_detector(
    train: &DetectorData,
    val: &DetectorData,
    config: &DetectorConfig,
    au_weights: Option<&[f64]>,
) -> Result<TrainedDetector> {
    if train.is_empty() {
        return Err(Error::Empty("detector training set".to_string()));
    }
    if val.is_empty() {
        return Err(Error::Empty("detector validation set".to_string()));
    }
    if train.input_dim != val.input_dim || train.output_dim != val.output_dim {
        return Err(Error::DimensionMismatch { expected: train.input_dim, found: val.input_dim });
    }
    if config.batch_size == 0 || config.hidden == 0 {
        return Err(Error::InvalidParameter("detector batch size and width must be positive".to_string()));
    }
    let m = train.output_dim;
    let weights = match au_weights {
        Some(w) if w.len() != m => return Err(Error::DimensionMismatch { expected: m, found: w.len() }),
        Some(w) => w.to_vec(),
        None => vec![1.0; m],
    };
    let ones = vec![1.0; m];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = DownstreamDetector {
        hidden: Dense::init(train.input_dim, config.hidden, Activation::Tanh, &mut rng),
        output: Dense::init(config.hidden, m, Activation::Identity, &mut rng),
    };
    let mut trainer = Trainer::new(AdamConfig::with_lr(config.lr), &[&model.hidden, &model.output]);
    let mut grads = [DenseGrad::zeros(&model.hidden), DenseGrad::zeros(&model.output)];
    let mut caches = (DenseCache::default(), DenseCache::default());
    let mut d_out = vec![0.0; m];
    let mut d_hidden = vec![0.0; config.hidden];

    let mut best = (model.clone(), f64::INFINITY, 0usize);
    let mut history = Vec::new();
    let mut stale = 0usize;
    for epoch in 1..=config.max_epochs {
        let perm = permutation(train.len(), &mut rng);
        let mut total = 0.0;
        for batch in perm.chunks(config.batch_size) {
            grads.iter_mut().for_each(DenseGrad::clear);
            for &r in batch {
                let x = train.input(r);
                total += detector_loss(&model, x, train.target(r), &weights, &mut caches, &mut d_out);
                d_hidden.iter_mut().for_each(|v| *v = 0.0);
                let (gh, go) = grads.split_at_mut(1);
                model.output.backward(&caches.0.out, &caches.1, &d_out, Some(&mut go[0]), Some(&mut d_hidden));
                model.hidden.backward(x, &caches.0, &d_hidden, Some(&mut gh[0]), None);
            }
            let s = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                g.weights.iter_mut().for_each(|v| *v *= s);
                g.bias.iter_mut().for_each(|v| *v *= s);
            }
            trainer.step(&mut [&mut model.hidden, &mut model.output], &grads);
        }
        let train_loss = total / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite("detector training loss".to_string()));
        }
        let val_loss = (0..val.len())
            .map(|r| detector_loss(&model, val.input(r), val.target(r), &ones, &mut caches, &mut d_out))
            .sum::<f64>()
            / val.len() as f64;
        history.push((train_loss, val_loss));
        if val_loss < best.1 {
            best = (model.clone(), val_loss, epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainedDetector { model: best.0, history, best_epoch: best.2 })
}

/// Inverse label frequency per AU (activation at `threshold`), normalized
/// to mean 1. AUs never active get the weight of a single occurrence.
pub fn inverse_frequency_weights(data: &DetectorData, threshold: f64) -> Vec<f64> {
    let n = data.len().max(1) as f64;
    let raw: Vec<f64> = (0..data.output_dim)
        .map(|k| {
            let c = (0..data.len()).filter(|&r| data.target(r)[k] >= threshold).count().max(1) as f64;
            n / c
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len().max(1) as f64;
    raw.iter().map(|w| w / mean).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scenario {
    Baseline,
    Augmented,
    Reweighted,
    EditedOnly,
    SyntheticOnly,
    Combined,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Baseline,
        Scenario::Augmented,
        Scenario::Reweighted,
        Scenario::EditedOnly,
        Scenario::SyntheticOnly,
        Scenario::Combined,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Baseline => "baseline",
            Scenario::Augmented => "augmented",
            Scenario::Reweighted => "reweighted",
            Scenario::EditedOnly => "edited_only",
            Scenario::SyntheticOnly => "synthetic_only",
            Scenario::Combined => "combined",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }

    pub fn uses_edited(self) -> bool {
        matches!(self, Scenario::Augmented | Scenario::EditedOnly | Scenario::Combined)
    }

    pub fn uses_synthetic(self) -> bool {
        matches!(self, Scenario::Augmented | Scenario::SyntheticOnly | Scenario::Combined)
    }

    pub fn reweights(self) -> bool {
        matches!(self, Scenario::Reweighted | Scenario::Combined)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub n_real: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub threshold: f64,
    pub directions: DirectionFitConfig,
    pub plan: AugmentationPlan,
    pub per_cell: usize,
    pub binary_demographics: Vec<String>,
    /// Continuous demographics and their bin counts.
    pub binned_demographics: Vec<(String, usize)>,
    pub neutralizer: NeutralizerConfig,
    pub neutralize: NeutralizeConfig,
    pub max_failure_rate: f64,
    pub detector: DetectorConfig,
    /// Fractions of the real training set for learning-curve points.
    pub curve_fractions: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_real: 600,
            n_val: 2000,
            n_test: 2000,
            threshold: 0.1,
            directions: DirectionFitConfig { condition_on_peers: true, ..DirectionFitConfig::default() },
            plan: AugmentationPlan::default(),
            per_cell: 2,
            binary_demographics: vec!["gender".to_string()],
            binned_demographics: vec![("age".to_string(), 3)],
            neutralizer: NeutralizerConfig {
                width: 64,
                head_width: 32,
                max_epochs: 100,
                ..NeutralizerConfig::default()
            },
            neutralize: NeutralizeConfig::default(),
            max_failure_rate: 0.5,
            detector: DetectorConfig::default(),
            curve_fractions: vec![0.05, 0.10, 0.25, 0.50, 1.0],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_real == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::InvalidParameter("real, validation and test sizes must be positive".to_string()));
        }
        if self.curve_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::InvalidParameter("curve fractions must lie in (0, 1]".to_string()));
        }
        self.plan.validate()
    }
}

/// Shared per-seed artifacts: real, validation and test draws, the fitted
/// bank and, when requested, the edited and synthetic sets.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub seed: u64,
    pub aus: Vec<String>,
    pub real: AttributeTable,
    pub val: AttributeTable,
    pub test: AttributeTable,
    pub bank: DirectionBank,
    pub edited: Option<AttributeTable>,
    pub synthetic: Option<SyntheticSet>,
    pub neutralizer: Option<NeutralizerModel>,
}

impl ExperimentData {
    pub fn generate(spec: &OracleSpec, config: &ExperimentConfig, seed: u64, edited: bool, synthetic: bool) -> Result<Self> {
        config.validate()?;
        let real = oracle_sample(spec, config.n_real, stream_seed(seed, 1))?;
        let val = oracle_sample(spec, config.n_val, stream_seed(seed, 2))?;
        let test = oracle_sample(spec, config.n_test, stream_seed(seed, 3))?;
        let aus = real.names_with_role(AttributeRole::Au);
        if aus.is_empty() {
            return Err(Error::Empty("oracle has no AU factors".to_string()));
        }
        let mut bank = DirectionBank::new(spec.dimension());
        for (_, d) in fit_directions(&real, &aus, &config.directions)? {
            bank.insert(d)?;
        }
        let edited_table = if edited {
            let neutral = real.select_rows(&neutral_rows(&real, config.plan.threshold));
            Some(build_edited_set(&neutral, &bank, &config.plan)?)
        } else {
            None
        };
        let (synthetic_set, neutralizer) = if synthetic {
            let binary = config.binary_demographics.clone();
            let predictors = PredictorSet::fit(
                &real,
                &binary,
                &config.binned_demographics,
                config.directions.alpha,
                config.directions.logistic_l2,
            )?;
            let ncfg = NeutralizerConfig { seed: stream_seed(seed, 4), ..config.neutralizer.clone() };
            let model = train_neutralizer(&real, &ncfg)?.model;
            let scfg = SyntheticConfig {
                binary,
                binned: config.binned_demographics.iter().map(|(n, _)| n.clone()).collect(),
                neutralize: config.neutralize.clone(),
                max_failure_rate: config.max_failure_rate,
                seed: stream_seed(seed, 5),
            };
            let set = build_synthetic_set(spec, &predictors, &model, &bank, &config.plan, config.per_cell, &scfg)?;
            (Some(set), Some(model))
        } else {
            (None, None)
        };
        Ok(Self { seed, aus, real, val, test, bank, edited: edited_table, synthetic: synthetic_set, neutralizer })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub fraction: f64,
    pub n_real: usize,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub aus: Vec<String>,
    pub real_rows: usize,
    pub edited_rows: usize,
    pub synthetic_rows: usize,
    pub train_rows: usize,
    pub macro_f1: f64,
    pub per_au_f1: Vec<f64>,
    pub pair_fpr: PairFprReport,
    pub mean_pair_fpr: Option<f64>,
    pub au_weights: Option<Vec<f64>>,
    pub best_epoch: usize,
    pub curve: Vec<CurvePoint>,
}

struct Evaluation {
    macro_f1: f64,
    per_au: Vec<f64>,
    fpr: PairFprReport,
    best_epoch: usize,
    weights: Option<Vec<f64>>,
}

fn train_and_evaluate(
    train: &DetectorData,
    val: &DetectorData,
    test: &DetectorData,
    scenario: Scenario,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Evaluation> {
    let weights = scenario.reweights().then(|| inverse_frequency_weights(train, config.threshold));
    let dcfg = DetectorConfig { seed, ..config.detector.clone() };
    let trained = train_detector(train, val, &dcfg, weights.as_deref())?;
    let pred = trained.model.predict_all(test);
    let f1 = f1_scores(&pred, &test.targets, test.output_dim, config.threshold)?;
    let fpr = pair_fpr(&binarize(&pred, config.threshold), &binarize(&test.targets, config.threshold), test.output_dim)?;
    Ok(Evaluation { macro_f1: f1.macro_f1, per_au: f1.per_attribute, fpr, best_epoch: trained.best_epoch, weights })
}

/// Trains the detector on the scenario's training set and evaluates it on
/// the held-out test draws.
pub fn run_scenario(spec: &OracleSpec, data: &ExperimentData, scenario: Scenario, config: &ExperimentConfig) -> Result<ScenarioReport> {
    let real = DetectorData::from_table(spec, &data.real, &data.aus)?;
    let val = DetectorData::from_table(spec, &data.val, &data.aus)?;
    let test = DetectorData::from_table(spec, &data.test, &data.aus)?;
    let edited = if scenario.uses_edited() {
        let t = data.edited.as_ref().ok_or_else(|| Error::InvalidParameter("edited set was not generated".to_string()))?;
        Some(DetectorData::from_table(spec, t, &data.aus)?)
    } else {
        None
    };
    let synthetic = if scenario.uses_synthetic() {
        let t = data.synthetic.as_ref().ok_or_else(|| Error::InvalidParameter("synthetic set was not generated".to_string()))?;
        Some(DetectorData::from_table(spec, &t.table, &data.aus)?)
    } else {
        None
    };
    let extra = match (&edited, &synthetic) {
        (Some(e), Some(s)) => Some(e.concat(s)?),
        (Some(e), None) => Some(e.clone()),
        (None, Some(s)) => Some(s.clone()),
        (None, None) => None,
    };
    let assemble = |real_part: &DetectorData| -> Result<DetectorData> {
        match (scenario, &extra) {
            (Scenario::EditedOnly | Scenario::SyntheticOnly, Some(x)) => Ok(x.clone()),
            (_, Some(x)) => real_part.concat(x),
            (_, None) => Ok(real_part.clone()),
        }
    };
    let train = assemble(&real)?;
    let eval = train_and_evaluate(&train, &val, &test, scenario, config, data.seed)?;

    let mut curve = Vec::with_capacity(config.curve_fractions.len());
    if !config.curve_fractions.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(data.seed, 6));
        let order = permutation(real.len(), &mut rng);
        for &f in &config.curve_fractions {
            let n = (libm::round(f * real.len() as f64) as usize).clamp(1, real.len());
            let subset = real.select(&order[..n]);
            let e = train_and_evaluate(&assemble(&subset)?, &val, &test, scenario, config, data.seed)?;
            curve.push(CurvePoint { fraction: f, n_real: n, macro_f1: e.macro_f1 });
        }
    }
    let mean_pair_fpr = eval.fpr.mean();
    Ok(ScenarioReport {
        scenario,
        seed: data.seed,
        aus: data.aus.clone(),
        real_rows: real.len(),
        edited_rows: edited.as_ref().map_or(0, DetectorData::len),
        synthetic_rows: synthetic.as_ref().map_or(0, DetectorData::len),
        train_rows: train.len(),
        macro_f1: eval.macro_f1,
        per_au_f1: eval.per_au,
        pair_fpr: eval.fpr,
        mean_pair_fpr,
        au_weights: eval.weights,
        best_epoch: eval.best_epoch,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::presets;

    fn bank_for(table: &AttributeTable) -> DirectionBank {
        let aus = table.names_with_role(AttributeRole::Au);
        let mut bank = DirectionBank::new(table.dimension());
        for (_, d) in fit_directions(table, &aus, &DirectionFitConfig::default()).unwrap() {
            bank.insert(d).unwrap();
        }
        bank
    }

    #[test]
    fn edited_set_is_balanced_and_reconstructs() {
        let spec = presets::entangled(0);
        let real = oracle_sample(&spec, 800, 1).unwrap();
        let bank = bank_for(&real);
        let neutral = real.select_rows(&neutral_rows(&real, 0.1));
        assert!(neutral.n_rows() > 0);
        let plan = AugmentationPlan::default();
        let e = build_edited_set(&neutral, &bank, &plan).unwrap();
        let aus = real.indices_with_role(AttributeRole::Au);
        assert_eq!(e.n_rows(), neutral.n_rows() * aus.len());
        let counts: Vec<usize> = aus.iter().map(|&i| (0..e.n_rows()).filter(|&r| e.labels(r)[i] >= 0.1).count()).collect();
        assert!(counts.iter().all(|&c| c == neutral.n_rows()));
        for r in 0..e.n_rows() {
            let positives = aus.iter().filter(|&&i| e.labels(r)[i] > 0.0).count();
            assert_eq!(positives, 1);
            let src = r / aus.len();
            let k = r % aus.len();
            let dir = bank.get(&real.meta()[aus[k]].name).unwrap();
            let expect = apply_edit(&neutral.latent(src), dir, 1.0).unwrap();
            assert_eq!(e.latent(r), expect);
            // demographics copied
            let g = real.attribute_index("gender").unwrap();
            assert_eq!(e.labels(r)[g], neutral.labels(src)[g]);
        }
    }

    #[test]
    fn edited_set_edge_cases() {
        let spec = presets::entangled(0);
        let real = oracle_sample(&spec, 300, 2).unwrap();
        let bank = bank_for(&real);
        let one = real.select_rows(&neutral_rows(&real, 0.1)[..1]);
        let e = build_edited_set(&one, &bank, &AugmentationPlan::default()).unwrap();
        assert_eq!(e.n_rows(), 12);
        let none = real.select_rows(&[]);
        assert_eq!(build_edited_set(&none, &bank, &AugmentationPlan::default()).unwrap().n_rows(), 0);
        let active: Vec<usize> = (0..real.n_rows()).filter(|r| !neutral_rows(&real, 0.1).contains(r)).take(1).collect();
        assert!(matches!(
            build_edited_set(&real.select_rows(&active), &bank, &AugmentationPlan::default()),
            Err(Error::NonNeutralRow { .. })
        ));
        let empty_bank = DirectionBank::new(real.dimension());
        assert!(matches!(build_edited_set(&one, &empty_bank, &AugmentationPlan::default()), Err(Error::UnknownDirection(_))));
    }

    #[test]
    fn weights_have_unit_mean_and_favor_rare_labels() {
        let data = DetectorData {
            inputs: vec![0.0; 4],
            targets: vec![1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0],
            input_dim: 1,
            output_dim: 2,
        };
        let w = inverse_frequency_weights(&data, 0.1);
        assert!((w.iter().sum::<f64>() / 2.0 - 1.0).abs() < 1e-15);
        assert!(w[0] > w[1]);
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(Scenario::parse(s.as_str()).unwrap(), s);
        }
        assert!(matches!(Scenario::parse("nncl"), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn detector_learns_a_realizable_target() {
        // targets are an exact function of the inputs
        let spec = presets::expressive(3);
        let t = oracle_sample(&spec, 1500, 4).unwrap();
        let aus = t.names_with_role(AttributeRole::Au);
        let full = DetectorData::from_table(&spec, &t, &aus).unwrap();
        let mut data = full.clone();
        let teacher = DownstreamDetector {
            hidden: Dense::init(full.input_dim, 8, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(1)),
            output: Dense::init(8, aus.len(), Activation::Identity, &mut ChaCha8Rng::seed_from_u64(2)),
        };
        let mut teacher = teacher;
        teacher.output.weights.iter_mut().for_each(|w| *w *= 12.0);
        data.targets = teacher.predict_all(&full);
        let train = data.select(&(0..1000).collect::<Vec<_>>());
        let val = data.select(&(1000..1500).collect::<Vec<_>>());
        let cfg = DetectorConfig { max_epochs: 150, lr: 5e-3, ..DetectorConfig::default() };
        let a = train_detector(&train, &val, &cfg, None).unwrap();
        let pred = a.model.predict_all(&val);
        let f1 = f1_scores(&pred, &val.targets, val.output_dim, 0.1).unwrap();
        assert!(f1.macro_f1 >= 0.9, "{}", f1.macro_f1);
        let b = train_detector(&train, &val, &cfg, None).unwrap();
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn synthetic_set_shape_and_neutrality() {
        let spec = presets::expressive(5);
        let real = oracle_sample(&spec, 800, 6).unwrap();
        let bank = bank_for(&real);
        let predictors =
            PredictorSet::fit(&real, &["gender".into()], &[("age".into(), 3)], 10.0, 1.0).unwrap();
        let ncfg = NeutralizerConfig { width: 32, head_width: 16, max_epochs: 40, seed: 1, ..Default::default() };
        let model = train_neutralizer(&real, &ncfg).unwrap().model;
        let scfg = SyntheticConfig {
            binary: vec!["gender".into()],
            binned: vec!["age".into()],
            neutralize: NeutralizeConfig::default(),
            max_failure_rate: 0.5,
            seed: 3,
        };
        let plan = AugmentationPlan::default();
        let set = build_synthetic_set(&spec, &predictors, &model, &bank, &plan, 2, &scfg).unwrap();
        let n_au = real.indices_with_role(AttributeRole::Au).len();
        assert_eq!(set.neutral.n_rows(), 12);
        assert_eq!(set.table.n_rows(), 12 * n_au);
        assert_eq!(set.cells.len(), 6);
        for r in 0..set.neutral.n_rows() {
            assert!(predict_aus(&model, &set.neutral.latent(r)).unwrap().iter().all(|&p| p < 0.1));
        }
        let syn = set.table.attribute_index(SYNTHETIC_COLUMN).unwrap();
        assert!((0..set.table.n_rows()).all(|r| set.table.labels(r)[syn] == 1.0));
        let strict = SyntheticConfig { max_failure_rate: 0.0, neutralize: NeutralizeConfig { lambda: 1e6, ..Default::default() }, ..scfg };
        assert!(matches!(
            build_synthetic_set(&spec, &predictors, &model, &bank, &plan, 2, &strict),
            Err(Error::NeutralizationFailures { .. })
        ));
    }

    #[test]
    fn stream_seeds_differ() {
        assert_ne!(stream_seed(1, 1), stream_seed(1, 2));
        assert_ne!(stream_seed(1, 1), stream_seed(2, 1));
    }
}
