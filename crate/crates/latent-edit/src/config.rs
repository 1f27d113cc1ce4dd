//! Run configuration: flat dotted keys, loaded from TOML and overridable
//! per key.

use std::path::Path;

use latent_edit_core::editor::EditMode;
use latent_edit_core::experiment::ExperimentConfig;
use latent_edit_core::linfit::DirectionFitConfig;
use latent_edit_core::neutralizer::{NeutralizeConfig, NeutralizerConfig};
use toml::Value;

use crate::error::{Error, Result};
use crate::files;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "LATENT_EDIT_CONFIG";

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub fit: DirectionFitConfig,
    /// Residual norm below which a nuisance direction is dropped.
    pub project_tol: f64,
    pub edit_mode: EditMode,
    pub threshold: f64,
    pub neutralizer: NeutralizerConfig,
    pub neutralize: NeutralizeConfig,
    /// Draw budget per requested sample.
    pub max_draws_per_target: usize,
    /// Oracle preset used when no oracle file is given.
    pub experiment_oracle: String,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            fit: DirectionFitConfig::default(),
            project_tol: 1e-8,
            edit_mode: EditMode::Relative,
            threshold: 0.1,
            neutralizer: NeutralizerConfig::default(),
            neutralize: NeutralizeConfig::default(),
            max_draws_per_target: 1000,
            experiment_oracle: "entangled".to_string(),
            experiment: ExperimentConfig::default(),
        }
    }
}

fn float(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) if f.is_finite() => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::config(key, format!("expected a number, found {v}"))),
    }
}

fn count(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(Error::config(key, format!("expected a non-negative integer, found {v}"))),
    }
}

fn flag(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| Error::config(key, format!("expected true or false, found {v}")))
}

fn text(key: &str, v: &Value) -> Result<String> {
    v.as_str().map(str::to_string).ok_or_else(|| Error::config(key, format!("expected a string, found {v}")))
}

fn list<T>(key: &str, v: &Value, item: impl Fn(&str, &Value) -> Result<T>) -> Result<Vec<T>> {
    let arr = v.as_array().ok_or_else(|| Error::config(key, format!("expected an array, found {v}")))?;
    arr.iter().map(|x| item(key, x)).collect()
}

fn binned(key: &str, v: &Value) -> Result<(String, usize)> {
    let s = text(key, v)?;
    let (name, bins) = s.split_once(':').ok_or_else(|| Error::config(key, format!("expected `name:bins`, found `{s}`")))?;
    let bins = bins.parse().map_err(|_| Error::config(key, format!("bad bin count in `{s}`")))?;
    Ok((name.to_string(), bins))
}

fn positive(key: &str, x: f64) -> Result<f64> {
    if x > 0.0 {
        Ok(x)
    } else {
        Err(Error::config(key, format!("must be positive, found {x}")))
    }
}

fn non_negative(key: &str, x: f64) -> Result<f64> {
    if x >= 0.0 {
        Ok(x)
    } else {
        Err(Error::config(key, format!("must be non-negative, found {x}")))
    }
}

fn unit(key: &str, x: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(Error::config(key, format!("must lie in [0, 1], found {x}")))
    }
}

fn int(x: usize) -> Value {
    Value::Integer(x as i64)
}

fn strings(v: &[String]) -> Value {
    Value::Array(v.iter().cloned().map(Value::String).collect())
}

impl RunConfig {
    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let e = &mut self.experiment;
        match key {
            "seed" => {
                let s = v.as_integer().filter(|i| *i >= 0).ok_or_else(|| Error::config(key, "expected a non-negative integer"))?;
                self.seed = Some(s as u64);
            }
            "fit.alpha" => self.fit.alpha = non_negative(key, float(key, v)?)?,
            "fit.logistic_l2" => self.fit.logistic_l2 = non_negative(key, float(key, v)?)?,
            "fit.condition_on_peers" => self.fit.condition_on_peers = flag(key, v)?,
            "project.tol" => self.project_tol = positive(key, float(key, v)?)?,
            "edit.mode" => {
                self.edit_mode = match text(key, v)?.as_str() {
                    "relative" => EditMode::Relative,
                    "absolute" => EditMode::AbsoluteAfterNeutralization,
                    other => return Err(Error::config(key, format!("expected `relative` or `absolute`, found `{other}`"))),
                }
            }
            "metrics.threshold" => self.threshold = unit(key, float(key, v)?)?,
            "neutralizer.width" => self.neutralizer.width = count(key, v)?,
            "neutralizer.head_width" => self.neutralizer.head_width = count(key, v)?,
            "neutralizer.lr" => self.neutralizer.lr = positive(key, float(key, v)?)?,
            "neutralizer.batch_size" => self.neutralizer.batch_size = count(key, v)?,
            "neutralizer.recall_threshold" => self.neutralizer.recall_threshold = unit(key, float(key, v)?)?,
            "neutralizer.patience" => self.neutralizer.patience = count(key, v)?,
            "neutralizer.max_epochs" => self.neutralizer.max_epochs = count(key, v)?,
            "neutralizer.validation_fraction" => self.neutralizer.validation_fraction = unit(key, float(key, v)?)?,
            "neutralize.lambda" => self.neutralize.lambda = non_negative(key, float(key, v)?)?,
            "neutralize.dropout" => self.neutralize.dropout = unit(key, float(key, v)?)?,
            "neutralize.lr" => self.neutralize.lr = non_negative(key, float(key, v)?)?,
            "neutralize.stop.window" => self.neutralize.stop.window = count(key, v)?,
            "neutralize.stop.horizon" => self.neutralize.stop.horizon = count(key, v)?,
            "neutralize.stop.min_decrease" => self.neutralize.stop.min_decrease = positive(key, float(key, v)?)?,
            "neutralize.stop.max_steps" => self.neutralize.stop.max_steps = count(key, v)?,
            "sampler.max_draws_per_target" => self.max_draws_per_target = count(key, v)?,
            "experiment.oracle" => self.experiment_oracle = text(key, v)?,
            "experiment.n_real" => e.n_real = count(key, v)?,
            "experiment.n_val" => e.n_val = count(key, v)?,
            "experiment.n_test" => e.n_test = count(key, v)?,
            "experiment.threshold" => {
                e.threshold = unit(key, float(key, v)?)?;
                e.plan.threshold = e.threshold;
            }
            "experiment.condition_on_peers" => e.directions.condition_on_peers = flag(key, v)?,
            "experiment.step" => e.plan.step = positive(key, float(key, v)?)?,
            "experiment.per_cell" => e.per_cell = count(key, v)?,
            "experiment.binary_demographics" => e.binary_demographics = list(key, v, text)?,
            "experiment.binned_demographics" => e.binned_demographics = list(key, v, binned)?,
            "experiment.max_failure_rate" => e.max_failure_rate = unit(key, float(key, v)?)?,
            "experiment.curve_fractions" => e.curve_fractions = list(key, v, float)?,
            "experiment.neutralizer.width" => e.neutralizer.width = count(key, v)?,
            "experiment.neutralizer.head_width" => e.neutralizer.head_width = count(key, v)?,
            "experiment.neutralizer.max_epochs" => e.neutralizer.max_epochs = count(key, v)?,
            "experiment.neutralizer.lr" => e.neutralizer.lr = positive(key, float(key, v)?)?,
            "experiment.detector.hidden" => e.detector.hidden = count(key, v)?,
            "experiment.detector.lr" => e.detector.lr = positive(key, float(key, v)?)?,
            "experiment.detector.batch_size" => e.detector.batch_size = count(key, v)?,
            "experiment.detector.max_epochs" => e.detector.max_epochs = count(key, v)?,
            "experiment.detector.patience" => e.detector.patience = count(key, v)?,
            _ => return Err(Error::config(key, "unknown parameter")),
        }
        Ok(())
    }

    /// Every key with its current value, sorted by key.
    pub fn entries(&self) -> Vec<(&'static str, Value)> {
        let e = &self.experiment;
        let mut out = vec![
            ("fit.alpha", Value::Float(self.fit.alpha)),
            ("fit.logistic_l2", Value::Float(self.fit.logistic_l2)),
            ("fit.condition_on_peers", Value::Boolean(self.fit.condition_on_peers)),
            ("project.tol", Value::Float(self.project_tol)),
            (
                "edit.mode",
                Value::String(
                    match self.edit_mode {
                        EditMode::Relative => "relative",
                        EditMode::AbsoluteAfterNeutralization => "absolute",
                    }
                    .to_string(),
                ),
            ),
            ("metrics.threshold", Value::Float(self.threshold)),
            ("neutralizer.width", int(self.neutralizer.width)),
            ("neutralizer.head_width", int(self.neutralizer.head_width)),
            ("neutralizer.lr", Value::Float(self.neutralizer.lr)),
            ("neutralizer.batch_size", int(self.neutralizer.batch_size)),
            ("neutralizer.recall_threshold", Value::Float(self.neutralizer.recall_threshold)),
            ("neutralizer.patience", int(self.neutralizer.patience)),
            ("neutralizer.max_epochs", int(self.neutralizer.max_epochs)),
            ("neutralizer.validation_fraction", Value::Float(self.neutralizer.validation_fraction)),
            ("neutralize.lambda", Value::Float(self.neutralize.lambda)),
            ("neutralize.dropout", Value::Float(self.neutralize.dropout)),
            ("neutralize.lr", Value::Float(self.neutralize.lr)),
            ("neutralize.stop.window", int(self.neutralize.stop.window)),
            ("neutralize.stop.horizon", int(self.neutralize.stop.horizon)),
            ("neutralize.stop.min_decrease", Value::Float(self.neutralize.stop.min_decrease)),
            ("neutralize.stop.max_steps", int(self.neutralize.stop.max_steps)),
            ("sampler.max_draws_per_target", int(self.max_draws_per_target)),
            ("experiment.oracle", Value::String(self.experiment_oracle.clone())),
            ("experiment.n_real", int(e.n_real)),
            ("experiment.n_val", int(e.n_val)),
            ("experiment.n_test", int(e.n_test)),
            ("experiment.threshold", Value::Float(e.threshold)),
            ("experiment.condition_on_peers", Value::Boolean(e.directions.condition_on_peers)),
            ("experiment.step", Value::Float(e.plan.step)),
            ("experiment.per_cell", int(e.per_cell)),
            ("experiment.binary_demographics", strings(&e.binary_demographics)),
            (
                "experiment.binned_demographics",
                strings(&e.binned_demographics.iter().map(|(n, b)| format!("{n}:{b}")).collect::<Vec<_>>()),
            ),
            ("experiment.max_failure_rate", Value::Float(e.max_failure_rate)),
            ("experiment.curve_fractions", Value::Array(e.curve_fractions.iter().map(|f| Value::Float(*f)).collect())),
            ("experiment.neutralizer.width", int(e.neutralizer.width)),
            ("experiment.neutralizer.head_width", int(e.neutralizer.head_width)),
            ("experiment.neutralizer.max_epochs", int(e.neutralizer.max_epochs)),
            ("experiment.neutralizer.lr", Value::Float(e.neutralizer.lr)),
            ("experiment.detector.hidden", int(e.detector.hidden)),
            ("experiment.detector.lr", Value::Float(e.detector.lr)),
            ("experiment.detector.batch_size", int(e.detector.batch_size)),
            ("experiment.detector.max_epochs", int(e.detector.max_epochs)),
            ("experiment.detector.patience", int(e.detector.patience)),
        ];
        if let Some(s) = self.seed {
            out.push(("seed", Value::Integer(s as i64)));
        }
        out.sort_by(|a, b| a.0.cmp(b.0));
        out
    }

    /// `key = value` lines, one per parameter, sorted.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v.to_string());
            s.push('\n');
        }
        s
    }

    /// Applies every key of a TOML document; nested tables become dotted
    /// keys.
    pub fn apply_toml(&mut self, text: &str, origin: &str) -> Result<()> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::format(origin, 0, e.to_string()))?;
        let mut flat = Vec::new();
        flatten("", &table, &mut flat);
        for (k, v) in flat {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_toml(&files::read_string(path)?, &path.display().to_string())
    }

    /// Applies `key=value`; the value is read as a TOML value, falling back
    /// to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("expected `key=value`, found `{assignment}`")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.set(key, &value)
    }

    /// The seed, which every stochastic command needs.
    pub fn require_seed(&self, command: &str) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Usage(format!("`{command}` needs a seed: pass --seed or set `seed` in the config")))
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            _ => out.push((key, v.clone())),
        }
    }
}
