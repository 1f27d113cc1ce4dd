//! The neutralization network and latent optimization toward a zero-AU state.
//!
//! The network has a shared trunk (`d -> W`, SiLU) that splits into a
//! dynamic branch feeding one head per AU and a static branch feeding one
//! head per static attribute. Each branch is `W -> W` with SiLU; each head
//! is `W -> H` with SiLU followed by a single linear output unit. AU heads
//! are read through a sigmoid. Static heads are read through a sigmoid
//! while training and as raw logits while neutralizing.
//!
//! Neutralization minimizes
//!
//! ```text
//! J(z) = Σ_au (σ(l_au(z)) − y*_au)² + Σ_static (l_s(z) − t_s)² + λ ‖z − z_sample‖²
//! ```
//!
//! with Adam on `z` while the network stays frozen. Inverted dropout is
//! applied to the network input at every gradient evaluation.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, sigmoid, softplus};
use crate::nn::{permutation, Activation, AdamConfig, AdamState, Dense, DenseCache, DenseGrad, Trainer};
use crate::types::{AttributeRole, AttributeTable, LatentCode};

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub hidden: Dense,
    pub output: Dense,
}

impl Head {
    fn init<R: Rng>(width: usize, head_width: usize, rng: &mut R) -> Self {
        Self {
            hidden: Dense::init(width, head_width, Activation::Silu, rng),
            output: Dense::init(head_width, 1, Activation::Identity, rng),
        }
    }
}

/// Two-branch network mapping a latent code to AU intensities and static
/// attribute logits.
#[derive(Debug, Clone, PartialEq)]
pub struct NeutralizerModel {
    dimension: usize,
    au_names: Vec<String>,
    static_names: Vec<String>,
    trunk: Dense,
    dynamic_branch: Dense,
    static_branch: Dense,
    au_heads: Vec<Head>,
    static_heads: Vec<Head>,
}

#[derive(Debug, Clone, Default)]
struct HeadCache {
    hidden: DenseCache,
    output: DenseCache,
}

#[derive(Debug, Clone, Default)]
struct ForwardCache {
    trunk: DenseCache,
    dynamic: DenseCache,
    statics: DenseCache,
    au: Vec<HeadCache>,
    st: Vec<HeadCache>,
}

impl NeutralizerModel {
    pub fn init<R: Rng>(
        dimension: usize,
        au_names: Vec<String>,
        static_names: Vec<String>,
        width: usize,
        head_width: usize,
        rng: &mut R,
    ) -> Self {
        let trunk = Dense::init(dimension, width, Activation::Silu, rng);
        let dynamic_branch = Dense::init(width, width, Activation::Silu, rng);
        let static_branch = Dense::init(width, width, Activation::Silu, rng);
        let au_heads = au_names.iter().map(|_| Head::init(width, head_width, rng)).collect();
        let static_heads = static_names.iter().map(|_| Head::init(width, head_width, rng)).collect();
        Self { dimension, au_names, static_names, trunk, dynamic_branch, static_branch, au_heads, static_heads }
    }

    /// Reassembles a model from layers in [`NeutralizerModel::layers`] order.
    pub fn from_layers(
        dimension: usize,
        au_names: Vec<String>,
        static_names: Vec<String>,
        layers: Vec<Dense>,
    ) -> Result<Self> {
        let expected = 3 + 2 * (au_names.len() + static_names.len());
        if layers.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: layers.len() });
        }
        let mut it = layers.into_iter();
        let trunk = it.next().unwrap();
        let dynamic_branch = it.next().unwrap();
        let static_branch = it.next().unwrap();
        let mut heads = |n: usize| -> Vec<Head> {
            (0..n).map(|_| Head { hidden: it.next().unwrap(), output: it.next().unwrap() }).collect()
        };
        let au_heads = heads(au_names.len());
        let static_heads = heads(static_names.len());
        let model = Self { dimension, au_names, static_names, trunk, dynamic_branch, static_branch, au_heads, static_heads };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let w = self.trunk.outputs;
        let bad = |l: &Dense, i: usize, o: usize| {
            l.inputs != i || l.outputs != o || l.weights.len() != i * o || l.bias.len() != o
        };
        let mut wrong = bad(&self.trunk, self.dimension, w)
            || bad(&self.dynamic_branch, w, w)
            || bad(&self.static_branch, w, w);
        for h in self.au_heads.iter().chain(&self.static_heads) {
            let hw = h.hidden.outputs;
            wrong |= bad(&h.hidden, w, hw) || bad(&h.output, hw, 1);
        }
        if wrong {
            return Err(Error::InvalidParameter("neutralizer layer shapes are inconsistent".to_string()));
        }
        if self.layers().iter().any(|l| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("neutralizer weights".to_string()));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn au_names(&self) -> &[String] {
        &self.au_names
    }

    pub fn static_names(&self) -> &[String] {
        &self.static_names
    }

    pub fn width(&self) -> usize {
        self.trunk.outputs
    }

    /// Trunk, dynamic branch, static branch, then (hidden, output) for every
    /// AU head followed by every static head.
    pub fn layers(&self) -> Vec<&Dense> {
        let mut out = vec![&self.trunk, &self.dynamic_branch, &self.static_branch];
        for h in self.au_heads.iter().chain(&self.static_heads) {
            out.push(&h.hidden);
            out.push(&h.output);
        }
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut out = vec![&mut self.trunk, &mut self.dynamic_branch, &mut self.static_branch];
        for h in self.au_heads.iter_mut().chain(self.static_heads.iter_mut()) {
            out.push(&mut h.hidden);
            out.push(&mut h.output);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(|l| l.n_params()).sum()
    }

    fn forward_cached(&self, z: &[f64], cache: &mut ForwardCache) {
        self.trunk.forward_into(z, &mut cache.trunk);
        self.dynamic_branch.forward_into(&cache.trunk.out, &mut cache.dynamic);
        self.static_branch.forward_into(&cache.trunk.out, &mut cache.statics);
        cache.au.resize_with(self.au_heads.len(), Default::default);
        cache.st.resize_with(self.static_heads.len(), Default::default);
        for (h, c) in self.au_heads.iter().zip(cache.au.iter_mut()) {
            h.hidden.forward_into(&cache.dynamic.out, &mut c.hidden);
            h.output.forward_into(&c.hidden.out, &mut c.output);
        }
        for (h, c) in self.static_heads.iter().zip(cache.st.iter_mut()) {
            h.hidden.forward_into(&cache.statics.out, &mut c.hidden);
            h.output.forward_into(&c.hidden.out, &mut c.output);
        }
    }

    fn au_logits(cache: &ForwardCache) -> impl Iterator<Item = f64> + '_ {
        cache.au.iter().map(|c| c.output.out[0])
    }

    fn static_logits(cache: &ForwardCache) -> impl Iterator<Item = f64> + '_ {
        cache.st.iter().map(|c| c.output.out[0])
    }

    /// Backpropagates logit gradients to parameters and/or the input.
    fn backward(
        &self,
        z: &[f64],
        cache: &ForwardCache,
        d_au: &[f64],
        d_static: &[f64],
        mut grads: Option<&mut [DenseGrad]>,
        grad_z: Option<&mut [f64]>,
    ) {
        let w = self.width();
        let mut g_dyn = vec![0.0; w];
        let mut g_stat = vec![0.0; w];
        let n_au = self.au_heads.len();
        let heads = self.au_heads.iter().zip(&cache.au).zip(d_au).map(|(hc, d)| (hc, d, &cache.dynamic.out))
            .chain(self.static_heads.iter().zip(&cache.st).zip(d_static).map(|(hc, d)| (hc, d, &cache.statics.out)));
        for (k, ((head, hc), &d, input)) in heads.enumerate() {
            if d == 0.0 {
                continue;
            }
            let mut g_hidden = vec![0.0; head.hidden.outputs];
            let target = if k < n_au { &mut g_dyn } else { &mut g_stat };
            match grads.as_deref_mut() {
                Some(g) => {
                    let (gh, go) = g[3 + 2 * k..3 + 2 * k + 2].split_at_mut(1);
                    head.output.backward(&hc.hidden.out, &hc.output, &[d], Some(&mut go[0]), Some(&mut g_hidden));
                    head.hidden.backward(input, &hc.hidden, &g_hidden, Some(&mut gh[0]), Some(target));
                }
                None => {
                    head.output.backward(&hc.hidden.out, &hc.output, &[d], None, Some(&mut g_hidden));
                    head.hidden.backward(input, &hc.hidden, &g_hidden, None, Some(target));
                }
            }
        }
        let mut g_trunk = vec![0.0; w];
        match grads {
            Some(g) => {
                let (head3, _) = g.split_at_mut(3);
                let (gt, rest) = head3.split_at_mut(1);
                let (gd, gs) = rest.split_at_mut(1);
                self.dynamic_branch.backward(&cache.trunk.out, &cache.dynamic, &g_dyn, Some(&mut gd[0]), Some(&mut g_trunk));
                self.static_branch.backward(&cache.trunk.out, &cache.statics, &g_stat, Some(&mut gs[0]), Some(&mut g_trunk));
                self.trunk.backward(z, &cache.trunk, &g_trunk, Some(&mut gt[0]), grad_z);
            }
            None => {
                self.dynamic_branch.backward(&cache.trunk.out, &cache.dynamic, &g_dyn, None, Some(&mut g_trunk));
                self.static_branch.backward(&cache.trunk.out, &cache.statics, &g_stat, None, Some(&mut g_trunk));
                self.trunk.backward(z, &cache.trunk, &g_trunk, None, grad_z);
            }
        }
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, found: z.len() });
        }
        Ok(())
    }

    /// AU intensities in `(0, 1)` and static-attribute logits.
    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_dim(z)?;
        let mut cache = ForwardCache::default();
        self.forward_cached(z, &mut cache);
        Ok((Self::au_logits(&cache).map(sigmoid).collect(), Self::static_logits(&cache).collect()))
    }
}

/// Deterministic AU intensities; no dropout.
pub fn predict_aus(model: &NeutralizerModel, z: &LatentCode) -> Result<Vec<f64>> {
    Ok(model.forward(z.z())?.0)
}

/// Gradient of AU output `au` (after the sigmoid) with respect to `z`.
pub fn au_gradient(model: &NeutralizerModel, z: &[f64], au: usize) -> Result<Vec<f64>> {
    model.check_dim(z)?;
    if au >= model.au_names.len() {
        return Err(Error::InvalidParameter(alloc::format!("AU index {au} out of range")));
    }
    let mut cache = ForwardCache::default();
    model.forward_cached(z, &mut cache);
    let p = sigmoid(cache.au[au].output.out[0]);
    let mut d_au = vec![0.0; model.au_names.len()];
    d_au[au] = p * (1.0 - p);
    let d_static = vec![0.0; model.static_names.len()];
    let mut g = vec![0.0; model.dimension];
    model.backward(z, &cache, &d_au, &d_static, None, Some(&mut g));
    Ok(g)
}

/// Training settings. Widths default to the 512-unit layout.
#[derive(Debug, Clone)]
pub struct NeutralizerConfig {
    pub width: usize,
    pub head_width: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub recall_threshold: f64,
    /// Epochs without a recall improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for NeutralizerConfig {
    fn default() -> Self {
        Self {
            width: 512,
            head_width: 512,
            lr: 1e-3,
            batch_size: 32,
            recall_threshold: 0.1,
            patience: 15,
            max_epochs: 300,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub recall: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedNeutralizer {
    pub model: NeutralizerModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_recall: f64,
}

/// Total AU recall over all (sample, AU) pairs, averaged over the two
/// classes: the fraction of active pairs predicted active and the fraction
/// of inactive pairs predicted inactive. `None` without active pairs; the
/// inactive half is skipped when every pair is active.
///
/// Averaging over classes keeps a network that predicts everything active
/// (as an untrained one does, its outputs sit near 0.5) from scoring 1.
pub fn total_recall(pred: &[f64], truth: &[f64], threshold: f64) -> Option<f64> {
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (p, t) in pred.iter().zip(truth) {
        let hit = *p >= threshold;
        if *t >= threshold {
            pos += 1;
            tp += usize::from(hit);
        } else {
            neg += 1;
            tn += usize::from(!hit);
        }
    }
    if pos == 0 {
        return None;
    }
    let active = tp as f64 / pos as f64;
    Some(if neg == 0 { active } else { 0.5 * (active + tn as f64 / neg as f64) })
}

struct Sample<'a> {
    z: &'a [f64],
    au: Vec<f64>,
    st: Vec<f64>,
}

/// Per-sample loss `mean_au (σ(l) − y)² + mean_static BCE(l, y)` and its
/// logit gradients.
fn sample_loss(model: &NeutralizerModel, cache: &ForwardCache, s: &Sample<'_>, d_au: &mut [f64], d_st: &mut [f64]) -> f64 {
    let n_au = model.au_names.len() as f64;
    let n_st = model.static_names.len().max(1) as f64;
    let mut loss = 0.0;
    for (k, l) in NeutralizerModel::au_logits(cache).enumerate() {
        let p = sigmoid(l);
        let e = p - s.au[k];
        loss += e * e / n_au;
        d_au[k] = 2.0 * e * p * (1.0 - p) / n_au;
    }
    for (k, l) in NeutralizerModel::static_logits(cache).enumerate() {
        let y = s.st[k];
        loss += (softplus(l) - y * l) / n_st;
        d_st[k] = (sigmoid(l) - y) / n_st;
    }
    loss
}

/// Trains the network with Adam on MSE (AUs) plus BCE (static attributes).
///
/// A validation split monitors total AU recall at `recall_threshold`; an
/// epoch improves on the best checkpoint when recall rises, or when recall
/// ties and the validation loss falls. Training stops after `patience`
/// epochs without improvement and returns the best checkpoint.
pub fn train_neutralizer(table: &AttributeTable, config: &NeutralizerConfig) -> Result<TrainedNeutralizer> {
    let au_idx = table.indices_with_role(AttributeRole::Au);
    if au_idx.is_empty() {
        return Err(Error::Empty("table has no AU attributes".to_string()));
    }
    let n = table.n_rows();
    if n == 0 {
        return Err(Error::Empty("table has no rows".to_string()));
    }
    if config.batch_size == 0 || n < config.batch_size {
        return Err(Error::InvalidParameter(alloc::format!(
            "batch size {} must be between 1 and the row count {n}",
            config.batch_size
        )));
    }
    if !(0.0 < config.validation_fraction && config.validation_fraction < 1.0) {
        return Err(Error::InvalidParameter("validation fraction must lie in (0, 1)".to_string()));
    }
    let st_idx: Vec<usize> = (0..table.n_attributes()).filter(|i| !au_idx.contains(i)).collect();
    let any_active = (0..n).any(|r| au_idx.iter().any(|&i| table.labels(r)[i] >= config.recall_threshold));
    if !any_active {
        return Err(Error::DegenerateLabels(alloc::format!(
            "no AU label reaches the recall threshold {}; recall is undefined",
            config.recall_threshold
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let au_names: Vec<String> = au_idx.iter().map(|&i| table.meta()[i].name.clone()).collect();
    let st_names: Vec<String> = st_idx.iter().map(|&i| table.meta()[i].name.clone()).collect();
    let mut model = NeutralizerModel::init(table.dimension(), au_names, st_names, config.width, config.head_width, &mut rng);

    let order = permutation(n, &mut rng);
    let n_val = (libm::round(n as f64 * config.validation_fraction) as usize).clamp(1, n - 1);
    let (val_rows, train_rows) = order.split_at(n_val);
    let sample = |r: usize| Sample {
        z: table.code(r),
        au: au_idx.iter().map(|&i| table.labels(r)[i]).collect(),
        st: st_idx.iter().map(|&i| table.labels(r)[i]).collect(),
    };
    let train: Vec<Sample<'_>> = train_rows.iter().map(|&r| sample(r)).collect();
    let val: Vec<Sample<'_>> = val_rows.iter().map(|&r| sample(r)).collect();
    let val_truth: Vec<f64> = val.iter().flat_map(|s| s.au.iter().copied()).collect();
    if total_recall(&val_truth, &val_truth, config.recall_threshold).is_none() {
        return Err(Error::DegenerateLabels("validation split has no active AU".to_string()));
    }

    let mut trainer = Trainer::new(AdamConfig::with_lr(config.lr), &model.layers());
    let mut grads: Vec<DenseGrad> = model.layers().iter().map(|l| DenseGrad::zeros(l)).collect();
    let mut cache = ForwardCache::default();
    let mut d_au = vec![0.0; au_idx.len()];
    let mut d_st = vec![0.0; st_idx.len()];

    let mut history = Vec::new();
    let mut best = (model.clone(), f64::NEG_INFINITY, f64::INFINITY, 0usize);
    let mut stale = 0usize;
    for epoch in 1..=config.max_epochs {
        let perm = permutation(train.len(), &mut rng);
        let mut epoch_loss = 0.0;
        for batch in perm.chunks(config.batch_size) {
            grads.iter_mut().for_each(DenseGrad::clear);
            for &i in batch {
                let s = &train[i];
                model.forward_cached(s.z, &mut cache);
                epoch_loss += sample_loss(&model, &cache, s, &mut d_au, &mut d_st);
                model.backward(s.z, &cache, &d_au, &d_st, Some(&mut grads), None);
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                g.weights.iter_mut().for_each(|v| *v *= scale);
                g.bias.iter_mut().for_each(|v| *v *= scale);
            }
            let mut layers = model.layers_mut();
            trainer.step(&mut layers, &grads);
        }
        let train_loss = epoch_loss / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite("neutralizer training loss".to_string()));
        }

        let mut val_loss = 0.0;
        let mut val_pred = Vec::with_capacity(val_truth.len());
        for s in &val {
            model.forward_cached(s.z, &mut cache);
            val_loss += sample_loss(&model, &cache, s, &mut d_au, &mut d_st);
            val_pred.extend(NeutralizerModel::au_logits(&cache).map(sigmoid));
        }
        val_loss /= val.len() as f64;
        let recall = total_recall(&val_pred, &val_truth, config.recall_threshold).unwrap_or(0.0);
        history.push(EpochRecord { epoch, train_loss, val_loss, recall });

        if recall > best.1 || (recall == best.1 && val_loss < best.2) {
            best = (model.clone(), recall, val_loss, epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainedNeutralizer { model: best.0, history, best_epoch: best.3, best_recall: best.1 })
}

/// Moving-average stop rule for the latent optimization.
///
/// After step `t` (one objective value per step) the optimization stops
/// once `t ≥ window + horizon` and the `window`-step moving average ending
/// at `t` is no more than `min_decrease` below the one ending at
/// `t − horizon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopPolicy {
    pub window: usize,
    pub horizon: usize,
    pub min_decrease: f64,
    pub max_steps: usize,
}

impl Default for StopPolicy {
    fn default() -> Self {
        Self { window: 50, horizon: 150, min_decrease: 0.002, max_steps: 5000 }
    }
}

impl StopPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window > self.horizon {
            return Err(Error::InvalidParameter("stop policy needs 0 < window <= horizon".to_string()));
        }
        if !(self.min_decrease > 0.0) {
            return Err(Error::InvalidParameter("stop policy min_decrease must be positive".to_string()));
        }
        Ok(())
    }

    /// Moving average of the `window` values ending at step `end` (exclusive index).
    pub fn moving_average(&self, trace: &[f64], end: usize) -> f64 {
        linalg::mean(&trace[end - self.window..end])
    }

    pub fn should_stop(&self, trace: &[f64]) -> bool {
        let t = trace.len();
        if t < self.window + self.horizon {
            return false;
        }
        let now = self.moving_average(trace, t);
        let then = self.moving_average(trace, t - self.horizon);
        then - now <= self.min_decrease
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxSteps,
}

#[derive(Debug, Clone)]
pub struct NeutralizeConfig {
    pub lambda: f64,
    pub dropout: f64,
    pub lr: f64,
    pub stop: StopPolicy,
    pub seed: u64,
}

impl Default for NeutralizeConfig {
    fn default() -> Self {
        Self { lambda: 0.004, dropout: 0.2, lr: 1e-2, stop: StopPolicy::default(), seed: 0 }
    }
}

/// Per-AU targets and static-attribute logit targets.
#[derive(Debug, Clone, PartialEq)]
pub struct NeutralizationTarget {
    pub y_star: Vec<f64>,
    pub static_targets: Vec<f64>,
}

impl NeutralizationTarget {
    /// All AUs at zero; static attributes held at the model's own logits on
    /// `z_sample`.
    pub fn neutral(model: &NeutralizerModel, z_sample: &[f64]) -> Result<Self> {
        let (_, static_targets) = model.forward(z_sample)?;
        Ok(Self { y_star: vec![0.0; model.au_names.len()], static_targets })
    }
}

/// Cross-entropy of logit `l` against the probability behind logit `t`,
/// shifted so the minimum (at `l = t`) is zero. Returns value and d/dl.
fn static_term(l: f64, t: f64) -> (f64, f64) {
    let p = sigmoid(t);
    let v = (softplus(l) - p * l) - (softplus(t) - p * t);
    (v, sigmoid(l) - p)
}

/// Objective value and gradient with respect to `z`.
///
/// `mask` multiplies the network input elementwise (dropout); the
/// proximity term always sees the unmasked code.
pub fn objective_gradient(
    model: &NeutralizerModel,
    z: &[f64],
    z_sample: &[f64],
    target: &NeutralizationTarget,
    lambda: f64,
    mask: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    model.check_dim(z)?;
    model.check_dim(z_sample)?;
    let input: Vec<f64> = match mask {
        Some(m) => z.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => z.to_vec(),
    };
    let mut cache = ForwardCache::default();
    model.forward_cached(&input, &mut cache);
    let mut value = 0.0;
    let d_au: Vec<f64> = NeutralizerModel::au_logits(&cache)
        .zip(&target.y_star)
        .map(|(l, y)| {
            let p = sigmoid(l);
            value += (p - y) * (p - y);
            2.0 * (p - y) * p * (1.0 - p)
        })
        .collect();
    let d_st: Vec<f64> = NeutralizerModel::static_logits(&cache)
        .zip(&target.static_targets)
        .map(|(l, t)| {
            let (v, g) = static_term(l, *t);
            value += v;
            g
        })
        .collect();
    let mut grad = vec![0.0; model.dimension];
    model.backward(&input, &cache, &d_au, &d_st, None, Some(&mut grad));
    if let Some(m) = mask {
        grad.iter_mut().zip(m).for_each(|(g, k)| *g *= k);
    }
    for i in 0..z.len() {
        let diff = z[i] - z_sample[i];
        value += lambda * diff * diff;
        grad[i] += 2.0 * lambda * diff;
    }
    Ok((value, grad))
}

pub fn objective_value(
    model: &NeutralizerModel,
    z: &[f64],
    z_sample: &[f64],
    target: &NeutralizationTarget,
    lambda: f64,
) -> Result<f64> {
    let (au, st) = model.forward(z)?;
    model.check_dim(z_sample)?;
    let mut v: f64 = au.iter().zip(&target.y_star).map(|(p, y)| (p - y) * (p - y)).sum();
    v += st.iter().zip(&target.static_targets).map(|(l, t)| static_term(*l, *t).0).sum::<f64>();
    v += lambda * z.iter().zip(z_sample).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct Neutralization {
    pub code: LatentCode,
    /// Dropout-free objective after every step.
    pub trace: Vec<f64>,
    pub stop_reason: StopReason,
}

/// Drives `z_sample` toward all-zero AU predictions.
pub fn neutralize(z_sample: &LatentCode, model: &NeutralizerModel, config: &NeutralizeConfig) -> Result<Neutralization> {
    let target = NeutralizationTarget::neutral(model, z_sample.z())?;
    optimize_towards(z_sample, model, &target, config)
}

/// Latent optimization toward an arbitrary target (AU targets in `[0, 1]`).
pub fn optimize_towards(
    z_sample: &LatentCode,
    model: &NeutralizerModel,
    target: &NeutralizationTarget,
    config: &NeutralizeConfig,
) -> Result<Neutralization> {
    model.check_dim(z_sample.z())?;
    config.stop.validate()?;
    if !(0.0..1.0).contains(&config.dropout) {
        return Err(Error::InvalidParameter(alloc::format!("dropout must lie in [0, 1), got {}", config.dropout)));
    }
    if !(config.lambda >= 0.0) || !(config.lr >= 0.0) {
        return Err(Error::InvalidParameter("lambda and learning rate must be non-negative".to_string()));
    }
    if target.y_star.len() != model.au_names.len() || target.static_targets.len() != model.static_names.len() {
        return Err(Error::DimensionMismatch { expected: model.au_names.len(), found: target.y_star.len() });
    }
    if target.y_star.iter().any(|y| !(0.0..=1.0).contains(y)) {
        return Err(Error::InvalidParameter("AU targets must lie in [0, 1]".to_string()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = model.dimension;
    let z0 = z_sample.z();
    let mut z = z0.to_vec();
    let mut adam = AdamState::new(d);
    let adam_cfg = AdamConfig::with_lr(config.lr);
    let keep = 1.0 - config.dropout;
    let mut mask = vec![1.0; d];
    let mut trace = Vec::new();
    let stop_reason = loop {
        let m = if config.dropout > 0.0 {
            for slot in mask.iter_mut() {
                *slot = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
            }
            Some(mask.as_slice())
        } else {
            None
        };
        let (_, grad) = objective_gradient(model, &z, z0, target, config.lambda, m)?;
        if !linalg::all_finite(&grad) {
            return Err(Error::NonFinite("neutralization gradient".to_string()));
        }
        adam.step(&adam_cfg, &mut z, &grad);
        trace.push(objective_value(model, &z, z0, target, config.lambda)?);
        if config.stop.should_stop(&trace) {
            break StopReason::Converged;
        }
        if trace.len() >= config.stop.max_steps {
            break StopReason::MaxSteps;
        }
    };
    Ok(Neutralization { code: z_sample.replaced(z)?, trace, stop_reason })
}
