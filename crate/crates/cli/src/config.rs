//! `key = value` settings files.

use std::collections::BTreeMap;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use genmania::audio::ClassifierConfig;
use genmania::placement::PlacementConfig;
use genmania::selector::TrainConfig;

pub const KEYS: &[&str] = &[
    "selector.learning_rate",
    "selector.batch_size",
    "selector.max_epochs",
    "selector.tolerance",
    "selector.patience",
    "selector.normalize",
    "selector.playable_weight",
    "selector.nonplayable_weight",
    "classifier.learning_rate",
    "classifier.batch_size",
    "classifier.epochs",
    "classifier.dropout",
    "placement.scratch_to_turntable",
    "baseline.random_p",
];

#[derive(Clone, Debug)]
pub struct Settings {
    pub selector: TrainConfig,
    pub classifier: ClassifierConfig,
    pub placement: PlacementConfig,
    pub random_p: f64,
    pub seed: u64,
}

impl Settings {
    pub fn new(seed: u64) -> Self {
        Settings {
            selector: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            classifier: ClassifierConfig {
                seed,
                ..ClassifierConfig::default()
            },
            placement: PlacementConfig::default(),
            random_p: 0.3,
            seed,
        }
    }

    /// Applies a settings file on top of the defaults.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (key, (line, value)) in parse_pairs(text)? {
            let ctx = || format!("line {line}: {key}");
            fn num<T: FromStr>(v: &str) -> Result<T> {
                v.parse().map_err(|_| anyhow!("`{v}` is not a valid number"))
            }
            match key.as_str() {
                "selector.learning_rate" => self.selector.learning_rate = positive(&value).with_context(ctx)?,
                "selector.batch_size" => self.selector.batch_size = at_least_one(&value).with_context(ctx)?,
                "selector.max_epochs" => self.selector.max_epochs = num(&value).with_context(ctx)?,
                "selector.tolerance" => self.selector.tolerance = num(&value).with_context(ctx)?,
                "selector.patience" => self.selector.patience = at_least_one(&value).with_context(ctx)?,
                "selector.normalize" => self.selector.normalize = flag(&value).with_context(ctx)?,
                "selector.playable_weight" => self.selector.weights.playable = positive(&value).with_context(ctx)?,
                "selector.nonplayable_weight" => {
                    self.selector.weights.nonplayable = positive(&value).with_context(ctx)?
                }
                "classifier.learning_rate" => self.classifier.learning_rate = positive(&value).with_context(ctx)?,
                "classifier.batch_size" => self.classifier.batch_size = at_least_one(&value).with_context(ctx)?,
                "classifier.epochs" => self.classifier.epochs = num(&value).with_context(ctx)?,
                "classifier.dropout" => {
                    let p: f64 = num(&value).with_context(ctx)?;
                    if !(0.0..1.0).contains(&p) {
                        bail!("line {line}: classifier.dropout must be in [0, 1)");
                    }
                    self.classifier.dropout = p;
                }
                "placement.scratch_to_turntable" => {
                    self.placement.scratch_to_turntable = flag(&value).with_context(ctx)?
                }
                "baseline.random_p" => {
                    let p: f64 = num(&value).with_context(ctx)?;
                    if !(0.0..=1.0).contains(&p) {
                        bail!("line {line}: baseline.random_p must be in [0, 1]");
                    }
                    self.random_p = p;
                }
                _ => bail!("line {line}: unknown setting `{key}` (known: {})", KEYS.join(", ")),
            }
        }
        Ok(())
    }
}

fn positive(v: &str) -> Result<f64> {
    match v.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        _ => bail!("`{v}` is not a positive number"),
    }
}

fn at_least_one(v: &str) -> Result<usize> {
    match v.parse::<usize>() {
        Ok(x) if x >= 1 => Ok(x),
        _ => bail!("`{v}` is not a positive integer"),
    }
}

fn flag(v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => bail!("`{v}` is not a boolean"),
    }
}

/// `key = value` lines; `#` starts a comment line. Later keys override earlier ones.
fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
        out.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
    }
    Ok(out)
}
