//! Playable / non-playable sample selection.
//!
//! A four-layer fully connected network (64, 32, 16, 2 units; ReLU on the
//! first three, linear output) scores every object. The first output is the
//! playable activation, the second the non-playable one; an object is playable
//! only when the first is strictly larger.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bms::{Chart, ObjectTiming, SampleId};
use crate::challenge::DifficultyCurve;
use crate::eval::{score_chart, ChartMetrics};
use crate::features::{
    build_features, FeatureError, FeatureVector, SummarySource, BEAT_OFFSET, DIFFICULTY_OFFSET, INSTRUMENT_OFFSET,
    SUMMARY_OFFSET,
};
use crate::instrument::InstrumentLabel;

pub const HIDDEN_WIDTHS: [usize; 3] = [64, 32, 16];

const MODEL_MAGIC: &[u8; 4] = b"GMSL";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("input has {got} values but the model expects {expected}")]
    WidthMismatch { got: usize, expected: usize },
    #[error("summary mode {mode:?} does not match a model trained {trained}")]
    ModeMismatch { mode: SummaryMode, trained: &'static str },
    #[error("{0} partition of the split is empty")]
    EmptyPartition(&'static str),
    #[error("song `{0}` has no partition in the split plan")]
    UnassignedSong(String),
    #[error("invalid layer stack: {0}")]
    BadLayers(String),
    #[error("model file: {0}")]
    Model(String),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where summary playability comes from when generating.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SummaryMode {
    /// Authored playability of the input chart.
    Truth,
    /// The model's own earlier predictions.
    SelfSummary,
    /// No summary (free generation).
    None,
}

/// Feature blocks fed to the network. Instrument one-hot and beat alignment
/// are always present; dropped blocks shrink the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FeatureSet {
    pub difficulty: bool,
    pub summary: bool,
}

impl FeatureSet {
    pub const FULL: FeatureSet = FeatureSet {
        difficulty: true,
        summary: true,
    };
    pub const NO_DIFFICULTY: FeatureSet = FeatureSet {
        difficulty: false,
        summary: true,
    };
    pub const NO_SUMMARY: FeatureSet = FeatureSet {
        difficulty: true,
        summary: false,
    };

    pub fn width(&self) -> usize {
        let mut w = SUMMARY_OFFSET - INSTRUMENT_OFFSET;
        if self.difficulty {
            w += 1;
        }
        if self.summary {
            w += crate::features::SUMMARY_WIDTH;
        }
        w
    }

    pub fn project(&self, fv: &FeatureVector) -> Vec<f64> {
        let v = fv.as_slice();
        let mut out = Vec::with_capacity(self.width());
        if self.difficulty {
            out.push(v[DIFFICULTY_OFFSET]);
        }
        out.extend_from_slice(&v[INSTRUMENT_OFFSET..=BEAT_OFFSET]);
        if self.summary {
            out.extend_from_slice(&v[SUMMARY_OFFSET..]);
        }
        out
    }

    fn tag(&self) -> u8 {
        u8::from(self.difficulty) | (u8::from(self.summary) << 1)
    }

    fn from_tag(tag: u8) -> Option<Self> {
        (tag < 4).then_some(FeatureSet {
            difficulty: tag & 1 != 0,
            summary: tag & 2 != 0,
        })
    }

    /// Checks that a summary mode can drive a model trained with these blocks.
    pub fn check_mode(&self, mode: SummaryMode) -> Result<(), SelectorError> {
        match (self.summary, mode) {
            (true, SummaryMode::None) => Err(SelectorError::ModeMismatch {
                mode,
                trained: "with summary input",
            }),
            (false, SummaryMode::Truth | SummaryMode::SelfSummary) => Err(SelectorError::ModeMismatch {
                mode,
                trained: "without summary input",
            }),
            _ => Ok(()),
        }
    }
}

/// Gradient of one layer: `(weights, biases)`.
pub type LayerGradient = (Vec<f64>, Vec<f64>);

/// Fully connected layer, weights stored row per output.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self, SelectorError> {
        if weights.len() != inputs * outputs || biases.len() != outputs {
            return Err(SelectorError::BadLayers(format!(
                "{inputs}x{outputs} layer with {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        Ok(DenseLayer {
            inputs,
            outputs,
            weights,
            biases,
        })
    }

    fn apply(&self, x: &[f64], relu: bool) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                let z = self.biases[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                if relu {
                    z.max(0.0)
                } else {
                    z
                }
            })
            .collect()
    }
}

/// Per-column affine input normalization, `(x - offset) * scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputScaling {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectorModel {
    pub features: FeatureSet,
    pub seed: u64,
    pub scaling: Option<InputScaling>,
    layers: Vec<DenseLayer>,
}

/// Both outputs of the network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Activations {
    pub playable: f64,
    pub nonplayable: f64,
}

impl Activations {
    /// Strictly greater playable activation; exact ties go to non-playable.
    pub fn is_playable(&self) -> bool {
        self.playable > self.nonplayable
    }
}

impl SelectorModel {
    /// Uniform fan-in initialization of a 64-32-16-2 stack.
    pub fn new(features: FeatureSet, seed: u64) -> Self {
        Self::with_input_width(features.width(), features, seed)
    }

    pub fn with_input_width(input: usize, features: FeatureSet, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![input];
        widths.extend(HIDDEN_WIDTHS);
        widths.push(2);
        let layers = widths
            .windows(2)
            .map(|w| {
                let limit = (6.0 / w[0] as f64).sqrt();
                DenseLayer {
                    inputs: w[0],
                    outputs: w[1],
                    weights: (0..w[0] * w[1]).map(|_| rng.gen_range(-limit..limit)).collect(),
                    biases: vec![0.0; w[1]],
                }
            })
            .collect();
        SelectorModel {
            features,
            seed,
            scaling: None,
            layers,
        }
    }

    /// Builds a model from explicit layers: four of them, chained, ending in 2 outputs.
    pub fn from_layers(features: FeatureSet, layers: Vec<DenseLayer>) -> Result<Self, SelectorError> {
        if layers.len() != 4 {
            return Err(SelectorError::BadLayers(format!(
                "expected 4 layers, got {}",
                layers.len()
            )));
        }
        if layers.windows(2).any(|w| w[0].outputs != w[1].inputs) {
            return Err(SelectorError::BadLayers("layer widths do not chain".into()));
        }
        if layers[3].outputs != 2 {
            return Err(SelectorError::BadLayers("final layer must have 2 outputs".into()));
        }
        Ok(SelectorModel {
            features,
            seed: 0,
            scaling: None,
            layers,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    fn scaled(&self, input: &[f64]) -> Vec<f64> {
        match &self.scaling {
            Some(s) => input
                .iter()
                .zip(s.offset.iter().zip(&s.scale))
                .map(|(x, (o, k))| (x - o) * k)
                .collect(),
            None => input.to_vec(),
        }
    }

    /// Forward pass on an already projected input.
    pub fn forward_raw(&self, input: &[f64]) -> Result<Activations, SelectorError> {
        if input.len() != self.input_width() {
            return Err(SelectorError::WidthMismatch {
                got: input.len(),
                expected: self.input_width(),
            });
        }
        let out = self.activations(&self.scaled(input)).pop().expect("four layers");
        Ok(Activations {
            playable: out[0],
            nonplayable: out[1],
        })
    }

    /// Forward pass on a full feature vector, keeping only the model's blocks.
    pub fn forward(&self, fv: &FeatureVector) -> Result<Activations, SelectorError> {
        self.forward_raw(&self.features.project(fv))
    }

    // outputs of every layer, input excluded
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &acts[i - 1] };
            let relu = i + 1 < self.layers.len();
            let out = layer.apply(input, relu);
            acts.push(out);
        }
        acts
    }

    /// Weighted squared error of one example and its gradient. The gradient
    /// has one `(weights, biases)` pair per layer. `input` is taken as the
    /// network sees it (after any scaling).
    pub fn loss_and_gradient(
        &self,
        input: &[f64],
        playable: bool,
        weights: &ClassWeights,
    ) -> (f64, Vec<LayerGradient>) {
        let mut grads: Vec<LayerGradient> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
            .collect();
        let loss = self.accumulate(input, playable, weights, &mut grads);
        (loss, grads)
    }

    fn accumulate(
        &self,
        input: &[f64],
        playable: bool,
        weights: &ClassWeights,
        grads: &mut [(Vec<f64>, Vec<f64>)],
    ) -> f64 {
        let acts = self.activations(input);
        let out = acts.last().expect("four layers");
        let pred = [out[0], out[1]];
        let loss = weighted_mse(pred, playable, weights);
        let target = one_hot(playable);
        let w = weights.of(playable);
        // d/dpred of w * mean((pred - t)^2) over two outputs
        let mut delta: Vec<f64> = (0..2).map(|k| w * (pred[k] - target[k])).collect();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let x = if li == 0 { input } else { &acts[li - 1] };
            let (gw, gb) = &mut grads[li];
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
                if d != 0.0 {
                    for (g, xi) in gw[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            if li == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (p, w) in prev
                        .iter_mut()
                        .zip(&layer.weights[o * layer.inputs..(o + 1) * layer.inputs])
                    {
                        *p += d * w;
                    }
                }
            }
            // ReLU derivative of the layer below
            for (p, a) in prev.iter_mut().zip(&acts[li - 1]) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        loss
    }

    /// Rounds every parameter to `f32`, the precision of the model file.
    pub fn quantize(&mut self) {
        for layer in &mut self.layers {
            for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *v = f64::from(*v as f32);
            }
        }
        if let Some(s) = &mut self.scaling {
            for v in s.offset.iter_mut().chain(s.scale.iter_mut()) {
                *v = f64::from(*v as f32);
            }
        }
    }

    /// Binary model file: magic `GMSL`, version, feature tag, seed, optional
    /// input scaling, then each layer's shape followed by its weights and
    /// biases as little-endian `f32`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), SelectorError> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&[self.features.tag()])?;
        w.write_all(&self.seed.to_le_bytes())?;
        match &self.scaling {
            Some(s) => {
                w.write_all(&[1])?;
                w.write_all(&(s.offset.len() as u32).to_le_bytes())?;
                for v in s.offset.iter().chain(&s.scale) {
                    w.write_all(&(*v as f32).to_le_bytes())?;
                }
            }
            None => w.write_all(&[0])?,
        }
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for layer in &self.layers {
            w.write_all(&(layer.inputs as u32).to_le_bytes())?;
            w.write_all(&(layer.outputs as u32).to_le_bytes())?;
            for v in layer.weights.iter().chain(&layer.biases) {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a vector cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, SelectorError> {
        fn u32_of<R: Read>(r: &mut R) -> Result<u32, SelectorError> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        }
        fn f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, SelectorError> {
            let mut b = [0u8; 4];
            (0..n)
                .map(|_| {
                    r.read_exact(&mut b)?;
                    Ok(f64::from(f32::from_le_bytes(b)))
                })
                .collect()
        }
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(SelectorError::Model("not a selector model file".into()));
        }
        if u32_of(&mut r)? != MODEL_VERSION {
            return Err(SelectorError::Model("unsupported selector model version".into()));
        }
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        let features = FeatureSet::from_tag(byte[0]).ok_or_else(|| SelectorError::Model("bad feature tag".into()))?;
        let mut long = [0u8; 8];
        r.read_exact(&mut long)?;
        let seed = u64::from_le_bytes(long);
        r.read_exact(&mut byte)?;
        let scaling = match byte[0] {
            0 => None,
            1 => {
                let n = u32_of(&mut r)? as usize;
                let all = f32s(&mut r, 2 * n)?;
                Some(InputScaling {
                    offset: all[..n].to_vec(),
                    scale: all[n..].to_vec(),
                })
            }
            _ => return Err(SelectorError::Model("bad scaling flag".into())),
        };
        let count = u32_of(&mut r)? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let inputs = u32_of(&mut r)? as usize;
            let outputs = u32_of(&mut r)? as usize;
            let weights = f32s(&mut r, inputs * outputs)?;
            let biases = f32s(&mut r, outputs)?;
            layers.push(DenseLayer::new(inputs, outputs, weights, biases)?);
        }
        let mut model = SelectorModel::from_layers(features, layers)?;
        model.seed = seed;
        if let Some(s) = &scaling {
            if s.offset.len() != model.input_width() {
                return Err(SelectorError::Model("scaling width does not match input".into()));
            }
        }
        model.scaling = scaling;
        Ok(model)
    }
}

/// Loss weight per target class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights {
    pub playable: f64,
    pub nonplayable: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights {
            playable: 1.0,
            nonplayable: 0.2,
        }
    }
}

impl ClassWeights {
    pub fn of(&self, playable: bool) -> f64 {
        if playable {
            self.playable
        } else {
            self.nonplayable
        }
    }
}

fn one_hot(playable: bool) -> [f64; 2] {
    if playable {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    }
}

/// Class-weighted mean squared error against the one-hot target.
pub fn weighted_mse(pred: [f64; 2], playable: bool, weights: &ClassWeights) -> f64 {
    let t = one_hot(playable);
    let mean = ((pred[0] - t[0]).powi(2) + (pred[1] - t[1]).powi(2)) / 2.0;
    weights.of(playable) * mean
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub weights: ClassWeights,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Minimum validation-loss improvement that counts as progress.
    pub tolerance: f64,
    /// Consecutive epochs without progress before stopping. Each such epoch
    /// also halves the learning rate.
    pub patience: usize,
    pub seed: u64,
    /// Standardize each input column using training-set statistics.
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            weights: ClassWeights::default(),
            learning_rate: 0.01,
            max_epochs: 100,
            tolerance: 1e-5,
            patience: 3,
            seed: 0,
            normalize: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept (lowest validation loss).
    pub best_epoch: usize,
}

impl TrainingReport {
    /// `epoch<TAB>train_loss<TAB>val_loss<TAB>val_f1` per line, with a header.
    pub fn to_text(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tval_loss\tval_f1\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.4}",
                e.epoch, e.train_loss, e.val_loss, e.val_f1
            )
            .unwrap();
        }
        out
    }
}

/// A labelled row: full feature vector plus authored playability.
pub type Row<'a> = (&'a FeatureVector, bool);

fn fit_scaling(inputs: &[Vec<f64>]) -> InputScaling {
    let width = inputs.first().map_or(0, Vec::len);
    let n = inputs.len().max(1) as f64;
    let mut offset = vec![0.0; width];
    for x in inputs {
        for (o, v) in offset.iter_mut().zip(x) {
            *o += v / n;
        }
    }
    let mut var = vec![0.0; width];
    for x in inputs {
        for ((s, v), o) in var.iter_mut().zip(x).zip(&offset) {
            *s += (v - o).powi(2) / n;
        }
    }
    let scale = var
        .into_iter()
        .map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 })
        .collect();
    InputScaling { offset, scale }
}

fn mean_loss(model: &SelectorModel, inputs: &[Vec<f64>], labels: &[bool], weights: &ClassWeights) -> f64 {
    if inputs.is_empty() {
        return 0.0;
    }
    let total: f64 = inputs
        .iter()
        .zip(labels)
        .map(|(x, &y)| {
            let out = model.activations(x).pop().unwrap();
            weighted_mse([out[0], out[1]], y, weights)
        })
        .sum();
    total / inputs.len() as f64
}

fn pooled_f1(model: &SelectorModel, inputs: &[Vec<f64>], labels: &[bool]) -> f64 {
    let predicted: Vec<bool> = inputs
        .iter()
        .map(|x| {
            let out = model.activations(x).pop().unwrap();
            out[0] > out[1]
        })
        .collect();
    score_chart(&predicted, labels).map_or(0.0, |m: ChartMetrics| m.f1)
}

/// Mini-batch gradient descent on the weighted squared error.
///
/// Rows are reshuffled every epoch. Training stops after `patience`
/// consecutive epochs whose validation loss fails to improve on the best by at
/// least `tolerance`, or after `max_epochs`. The weights with the lowest
/// validation loss are returned, rounded to `f32`.
pub fn train_on(
    train: &[Row<'_>],
    validation: &[Row<'_>],
    features: FeatureSet,
    cfg: &TrainConfig,
) -> Result<(SelectorModel, TrainingReport), SelectorError> {
    if train.is_empty() {
        return Err(SelectorError::EmptyPartition("training"));
    }
    if validation.is_empty() {
        return Err(SelectorError::EmptyPartition("validation"));
    }
    let mut model = SelectorModel::new(features, cfg.seed);
    let mut train_x: Vec<Vec<f64>> = train.iter().map(|(fv, _)| features.project(fv)).collect();
    let train_y: Vec<bool> = train.iter().map(|r| r.1).collect();
    let mut val_x: Vec<Vec<f64>> = validation.iter().map(|(fv, _)| features.project(fv)).collect();
    let val_y: Vec<bool> = validation.iter().map(|r| r.1).collect();
    if cfg.normalize {
        let scaling = fit_scaling(&train_x);
        model.scaling = Some(scaling);
        train_x = train_x.iter().map(|x| model.scaled(x)).collect();
        val_x = val_x.iter().map(|x| model.scaled(x)).collect();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut grads: Vec<(Vec<f64>, Vec<f64>)> = model
        .layers
        .iter()
        .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
        .collect();
    let mut lr = cfg.learning_rate;
    let mut best_loss = mean_loss(&model, &val_x, &val_y, &cfg.weights);
    let mut best_layers = model.layers.clone();
    let mut report = TrainingReport::default();
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            for (gw, gb) in grads.iter_mut() {
                gw.iter_mut().for_each(|g| *g = 0.0);
                gb.iter_mut().for_each(|g| *g = 0.0);
            }
            for &i in batch {
                total += model.accumulate(&train_x[i], train_y[i], &cfg.weights, &mut grads);
            }
            let step = lr / batch.len() as f64;
            for (layer, (gw, gb)) in model.layers.iter_mut().zip(&grads) {
                for (p, g) in layer.weights.iter_mut().zip(gw) {
                    *p -= step * g;
                }
                for (p, g) in layer.biases.iter_mut().zip(gb) {
                    *p -= step * g;
                }
            }
        }
        let val_loss = mean_loss(&model, &val_x, &val_y, &cfg.weights);
        report.epochs.push(EpochRecord {
            epoch,
            train_loss: total / train_x.len() as f64,
            val_loss,
            val_f1: pooled_f1(&model, &val_x, &val_y),
            learning_rate: lr,
        });
        if val_loss < best_loss {
            best_layers.clone_from(&model.layers);
            report.best_epoch = epoch;
        }
        if best_loss - val_loss >= cfg.tolerance && val_loss < best_loss {
            best_loss = val_loss;
            stale = 0;
        } else {
            best_loss = best_loss.min(val_loss);
            stale += 1;
            lr *= 0.5;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    model.layers = best_layers;
    model.quantize();
    Ok((model, report))
}

/// One chart prepared for training or evaluation.
#[derive(Clone, Debug)]
pub struct ChartData {
    pub song: String,
    pub name: String,
    /// Features built from authored playability.
    pub features: Vec<FeatureVector>,
    pub truth: Vec<bool>,
    pub overall_difficulty: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

/// Song-level 80/10/10 assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitPlan {
    assignment: BTreeMap<String, Partition>,
}

impl SplitPlan {
    /// Shuffles distinct songs with `seed` and assigns 10% (at least one) to
    /// test, 10% (at least one) to validation and the rest to training.
    pub fn by_song<'a>(songs: impl IntoIterator<Item = &'a str>, seed: u64) -> Result<Self, SelectorError> {
        let mut unique: Vec<&str> = songs.into_iter().collect();
        unique.sort_unstable();
        unique.dedup();
        let n = unique.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        unique.shuffle(&mut rng);
        let n_test = ((n as f64 * 0.1).round() as usize).max(1);
        let n_val = ((n as f64 * 0.1).round() as usize).max(1);
        if n < n_test + n_val + 1 {
            return Err(SelectorError::EmptyPartition(if n == 0 { "test" } else { "training" }));
        }
        let mut assignment = BTreeMap::new();
        for (i, song) in unique.into_iter().enumerate() {
            let part = if i < n_test {
                Partition::Test
            } else if i < n_test + n_val {
                Partition::Validation
            } else {
                Partition::Train
            };
            assignment.insert(song.to_string(), part);
        }
        Ok(SplitPlan { assignment })
    }

    pub fn from_assignment(assignment: BTreeMap<String, Partition>) -> Self {
        SplitPlan { assignment }
    }

    pub fn partition_of(&self, song: &str) -> Option<Partition> {
        self.assignment.get(song).copied()
    }

    pub fn songs_in(&self, part: Partition) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, p)| **p == part)
            .map(|(s, _)| s.as_str())
    }

    /// Charts of `part`, failing when any chart's song is unassigned.
    pub fn select<'a>(&self, charts: &'a [ChartData], part: Partition) -> Result<Vec<&'a ChartData>, SelectorError> {
        let mut out = Vec::new();
        for c in charts {
            match self.partition_of(&c.song) {
                Some(p) if p == part => out.push(c),
                Some(_) => {}
                None => return Err(SelectorError::UnassignedSong(c.song.clone())),
            }
        }
        Ok(out)
    }
}

fn rows_of<'a>(charts: &[&'a ChartData]) -> Vec<Row<'a>> {
    charts
        .iter()
        .flat_map(|c| c.features.iter().zip(c.truth.iter().copied()))
        .collect()
}

/// Trains on the training songs, early-stopping on the validation songs.
pub fn train(
    dataset: &[ChartData],
    split: &SplitPlan,
    features: FeatureSet,
    cfg: &TrainConfig,
) -> Result<(SelectorModel, TrainingReport), SelectorError> {
    let train_charts = split.select(dataset, Partition::Train)?;
    let val_charts = split.select(dataset, Partition::Validation)?;
    train_on(&rows_of(&train_charts), &rows_of(&val_charts), features, cfg)
}

/// Playable flags for precomputed features.
pub fn predict_rows(model: &SelectorModel, rows: &[FeatureVector]) -> Result<Vec<bool>, SelectorError> {
    rows.iter().map(|fv| Ok(model.forward(fv)?.is_playable())).collect()
}

/// Playable flags for every object of a chart.
///
/// `Truth` reads the chart's authored playability for summaries, `SelfSummary`
/// feeds each prediction back into later summaries, `None` runs without
/// summaries. The mode must match how the model was trained.
pub fn predict(
    model: &SelectorModel,
    chart: &Chart,
    timings: &[ObjectTiming],
    curve: &DifficultyCurve,
    labels: &BTreeMap<SampleId, InstrumentLabel>,
    mode: SummaryMode,
) -> Result<Vec<bool>, SelectorError> {
    model.features.check_mode(mode)?;
    match mode {
        SummaryMode::Truth => {
            let fvs = build_features(chart, timings, curve, labels, SummarySource::GroundTruth)?;
            predict_rows(model, &fvs)
        }
        SummaryMode::None => {
            let fvs = build_features(chart, timings, curve, labels, SummarySource::None)?;
            predict_rows(model, &fvs)
        }
        SummaryMode::SelfSummary => {
            let mut flags = Vec::with_capacity(chart.objects().len());
            let mut decide = |_: usize, fv: &FeatureVector| {
                let playable = model.forward(fv).map(|a| a.is_playable()).unwrap_or(false);
                flags.push(playable);
                playable
            };
            build_features(chart, timings, curve, labels, SummarySource::SelfSummary(&mut decide))?;
            Ok(flags)
        }
    }
}

/// Marks each object playable with probability `p`.
pub fn baseline_random(objects: usize, p: f64, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..objects).map(|_| rng.gen_bool(p)).collect()
}

pub fn baseline_all_playable(objects: usize) -> Vec<bool> {
    vec![true; objects]
}
