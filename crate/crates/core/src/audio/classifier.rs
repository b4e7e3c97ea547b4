//! Small convolutional instrument classifier.
//!
//! conv → ReLU → 2×2 max-pool → conv → ReLU → 2×2 max-pool → dropout →
//! fully connected → softmax. Trained with plain mini-batch gradient descent
//! on cross-entropy. All parameters live in one flat vector; the layout is
//! conv1 kernels, conv1 biases, conv2 kernels, conv2 biases, FC weights
//! (row per class), FC biases.

use std::io::{BufRead, Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AudioError, Spectrogram, BANDS, FRAMES};
use crate::instrument::{InstrumentLabel, Taxonomy, CATEGORY_COUNT};

const MODEL_MAGIC: &[u8; 4] = b"GMCL";
const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassifierShape {
    pub rows: usize,
    pub cols: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: usize,
    pub classes: usize,
}

impl Default for ClassifierShape {
    /// 16 then 32 filters of 5×5 over a full fingerprint, 27 outputs.
    fn default() -> Self {
        ClassifierShape {
            rows: FRAMES,
            cols: BANDS,
            conv1_filters: 16,
            conv2_filters: 32,
            kernel: 5,
            classes: CATEGORY_COUNT,
        }
    }
}

impl ClassifierShape {
    fn conv1_out(&self) -> (usize, usize) {
        (self.rows + 1 - self.kernel, self.cols + 1 - self.kernel)
    }

    fn pool1_out(&self) -> (usize, usize) {
        let (r, c) = self.conv1_out();
        (r / 2, c / 2)
    }

    fn conv2_out(&self) -> (usize, usize) {
        let (r, c) = self.pool1_out();
        (r + 1 - self.kernel, c + 1 - self.kernel)
    }

    fn pool2_out(&self) -> (usize, usize) {
        let (r, c) = self.conv2_out();
        (r / 2, c / 2)
    }

    fn flat(&self) -> usize {
        let (r, c) = self.pool2_out();
        self.conv2_filters * r * c
    }

    fn validate(&self) -> Result<(), AudioError> {
        let k = self.kernel;
        let ok = k >= 1
            && self.rows >= k
            && self.cols >= k
            && self.pool1_out().0 >= k
            && self.pool1_out().1 >= k
            && self.flat() > 0
            && self.classes > 0;
        if ok {
            Ok(())
        } else {
            Err(AudioError::Model(format!("degenerate classifier shape {self:?}")))
        }
    }

    // offsets into the flat parameter vector
    fn layout(&self) -> [usize; 7] {
        let k2 = self.kernel * self.kernel;
        let w1 = self.conv1_filters * k2;
        let b1 = self.conv1_filters;
        let w2 = self.conv2_filters * self.conv1_filters * k2;
        let b2 = self.conv2_filters;
        let wf = self.classes * self.flat();
        let bf = self.classes;
        let mut offsets = [0; 7];
        for (i, len) in [w1, b1, w2, b2, wf, bf].into_iter().enumerate() {
            offsets[i + 1] = offsets[i] + len;
        }
        offsets
    }

    pub fn param_count(&self) -> usize {
        self.layout()[6]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub shape: ClassifierShape,
    pub dropout: f64,
    pub seed: u64,
    params: Vec<f64>,
}

struct Cache {
    conv1: Vec<f64>,
    pool1: Vec<f64>,
    pool1_arg: Vec<usize>,
    conv2: Vec<f64>,
    pool2_arg: Vec<usize>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

fn conv2d(input: &[f64], in_c: usize, h: usize, w: usize, weights: &[f64], bias: &[f64], k: usize) -> Vec<f64> {
    let out_c = bias.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut out = vec![0.0; out_c * oh * ow];
    for o in 0..out_c {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..in_c {
            let src = &input[i * h * w..(i + 1) * h * w];
            for u in 0..k {
                for v in 0..k {
                    let wt = weights[((o * in_c + i) * k + u) * k + v];
                    for y in 0..oh {
                        let row = &src[(y + u) * w + v..(y + u) * w + v + ow];
                        let dst = &mut plane[y * ow..(y + 1) * ow];
                        for (d, s) in dst.iter_mut().zip(row) {
                            *d += wt * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a valid convolution. Accumulates into `dw`/`db` and, when
/// given, `dinput`.
#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    k: usize,
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dinput: Option<&mut [f64]>,
) {
    let out_c = db.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    for o in 0..out_c {
        let dplane = &dout[o * oh * ow..(o + 1) * oh * ow];
        db[o] += dplane.iter().sum::<f64>();
        for i in 0..in_c {
            let src = &input[i * h * w..(i + 1) * h * w];
            for u in 0..k {
                for v in 0..k {
                    let wi = ((o * in_c + i) * k + u) * k + v;
                    let mut acc = 0.0;
                    for y in 0..oh {
                        let row = &src[(y + u) * w + v..(y + u) * w + v + ow];
                        let drow = &dplane[y * ow..(y + 1) * ow];
                        acc += row.iter().zip(drow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    dw[wi] += acc;
                    if let Some(din) = dinput.as_deref_mut() {
                        let wt = weights[wi];
                        let plane = &mut din[i * h * w..(i + 1) * h * w];
                        for y in 0..oh {
                            let drow = &dplane[y * ow..(y + 1) * ow];
                            let dst = &mut plane[(y + u) * w + v..(y + u) * w + v + ow];
                            for (d, g) in dst.iter_mut().zip(drow) {
                                *d += wt * g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// ReLU then 2×2 max-pool. Returns pooled values and the flat index of each
/// winner in the input.
fn relu_pool(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ph * pw);
    let mut arg = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for y in 0..ph {
            for x in 0..pw {
                let mut best = ch * h * w + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ch * h * w + (2 * y + dy) * w + 2 * x + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best].max(0.0));
                arg.push(best);
            }
        }
    }
    (out, arg)
}

fn relu_pool_backward(pre: &[f64], arg: &[usize], dout: &[f64]) -> Vec<f64> {
    let mut din = vec![0.0; pre.len()];
    for (&idx, &g) in arg.iter().zip(dout) {
        if pre[idx] > 0.0 {
            din[idx] += g;
        }
    }
    din
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl ClassifierModel {
    /// He-uniform kernels and weights, zero biases.
    pub fn new(shape: ClassifierShape, dropout: f64, seed: u64) -> Result<Self, AudioError> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = shape.layout();
        let k2 = shape.kernel * shape.kernel;
        let mut params = vec![0.0; shape.param_count()];
        let fans = [
            (l[0]..l[1], k2),
            (l[2]..l[3], shape.conv1_filters * k2),
            (l[4]..l[5], shape.flat()),
        ];
        for (range, fan_in) in fans {
            let limit = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.gen_range(-limit..limit);
            }
        }
        Ok(ClassifierModel {
            shape,
            dropout,
            seed,
            params,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, s: &Spectrogram) -> Result<(), AudioError> {
        let expected = (self.shape.rows, self.shape.cols);
        if s.shape() != expected {
            return Err(AudioError::ShapeMismatch {
                got: s.shape(),
                expected,
            });
        }
        Ok(())
    }

    fn forward(&self, x: &[f64], mask: Option<&[f64]>) -> Cache {
        let s = &self.shape;
        let l = s.layout();
        let p = &self.params;
        let conv1 = conv2d(x, 1, s.rows, s.cols, &p[l[0]..l[1]], &p[l[1]..l[2]], s.kernel);
        let (c1r, c1c) = s.conv1_out();
        let (pool1, pool1_arg) = relu_pool(&conv1, s.conv1_filters, c1r, c1c);
        let (p1r, p1c) = s.pool1_out();
        let conv2 = conv2d(
            &pool1,
            s.conv1_filters,
            p1r,
            p1c,
            &p[l[2]..l[3]],
            &p[l[3]..l[4]],
            s.kernel,
        );
        let (c2r, c2c) = s.conv2_out();
        let (pool2, pool2_arg) = relu_pool(&conv2, s.conv2_filters, c2r, c2c);
        let hidden: Vec<f64> = match mask {
            Some(m) => pool2.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => pool2,
        };
        let flat = s.flat();
        let wf = &p[l[4]..l[5]];
        let bf = &p[l[5]..l[6]];
        let logits: Vec<f64> = (0..s.classes)
            .map(|c| {
                bf[c]
                    + wf[c * flat..(c + 1) * flat]
                        .iter()
                        .zip(&hidden)
                        .map(|(w, h)| w * h)
                        .sum::<f64>()
            })
            .collect();
        Cache {
            conv1,
            pool1,
            pool1_arg,
            conv2,
            pool2_arg,
            hidden,
            probs: softmax(&logits),
        }
    }

    /// Class probabilities with dropout disabled.
    pub fn probabilities(&self, s: &Spectrogram) -> Result<Vec<f64>, AudioError> {
        self.check_input(s)?;
        Ok(self.forward(&s.data, None).probs)
    }

    /// Cross-entropy of one example with dropout disabled.
    pub fn loss(&self, s: &Spectrogram, label: usize) -> Result<f64, AudioError> {
        Ok(-self.probabilities(s)?[label].max(f64::MIN_POSITIVE).ln())
    }

    /// Cross-entropy and its gradient with respect to every parameter.
    /// `mask` multiplies the FC input (dropout); `None` means no dropout.
    pub fn loss_and_gradient(
        &self,
        s: &Spectrogram,
        label: usize,
        mask: Option<&[f64]>,
    ) -> Result<(f64, Vec<f64>), AudioError> {
        self.check_input(s)?;
        if label >= self.shape.classes {
            return Err(AudioError::BadLabel(label));
        }
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate_gradient(&s.data, label, mask, &mut grad);
        Ok((loss, grad))
    }

    fn accumulate_gradient(&self, x: &[f64], label: usize, mask: Option<&[f64]>, grad: &mut [f64]) -> f64 {
        let s = &self.shape;
        let l = s.layout();
        let p = &self.params;
        let cache = self.forward(x, mask);
        let loss = -cache.probs[label].max(f64::MIN_POSITIVE).ln();
        let flat = s.flat();

        let mut dlogits = cache.probs.clone();
        dlogits[label] -= 1.0;
        let mut dhidden = vec![0.0; flat];
        {
            let (head, tail) = grad.split_at_mut(l[5]);
            let dwf = &mut head[l[4]..l[5]];
            let dbf = &mut tail[..s.classes];
            let wf = &p[l[4]..l[5]];
            for (c, &g) in dlogits.iter().enumerate() {
                dbf[c] += g;
                let row = c * flat..(c + 1) * flat;
                for ((dw, h), (w, dh)) in dwf[row.clone()]
                    .iter_mut()
                    .zip(&cache.hidden)
                    .zip(wf[row].iter().zip(dhidden.iter_mut()))
                {
                    *dw += g * h;
                    *dh += g * w;
                }
            }
        }
        if let Some(m) = mask {
            for (d, m) in dhidden.iter_mut().zip(m) {
                *d *= m;
            }
        }

        let dconv2 = relu_pool_backward(&cache.conv2, &cache.pool2_arg, &dhidden);
        let (p1r, p1c) = s.pool1_out();
        let mut dpool1 = vec![0.0; cache.pool1.len()];
        {
            let (head, tail) = grad.split_at_mut(l[3]);
            conv2d_backward(
                &cache.pool1,
                s.conv1_filters,
                p1r,
                p1c,
                &p[l[2]..l[3]],
                s.kernel,
                &dconv2,
                &mut head[l[2]..l[3]],
                &mut tail[..l[4] - l[3]],
                Some(&mut dpool1),
            );
        }
        let dconv1 = relu_pool_backward(&cache.conv1, &cache.pool1_arg, &dpool1);
        let (head, tail) = grad.split_at_mut(l[1]);
        conv2d_backward(
            x,
            1,
            s.rows,
            s.cols,
            &p[l[0]..l[1]],
            s.kernel,
            &dconv1,
            &mut head[l[0]..l[1]],
            &mut tail[..l[2] - l[1]],
            None,
        );
        loss
    }

    /// Most probable class index; ties go to the lower index.
    pub fn predict_index(&self, s: &Spectrogram) -> Result<usize, AudioError> {
        let probs = self.probabilities(s)?;
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), AudioError> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        let s = &self.shape;
        for dim in [s.rows, s.cols, s.conv1_filters, s.conv2_filters, s.kernel, s.classes] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        w.write_all(&self.dropout.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, AudioError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(AudioError::Model("not a classifier model file".into()));
        }
        let mut word = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<usize, AudioError> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word) as usize)
        };
        if read_u32(&mut r)? != MODEL_VERSION as usize {
            return Err(AudioError::Model("unsupported classifier model version".into()));
        }
        let shape = ClassifierShape {
            rows: read_u32(&mut r)?,
            cols: read_u32(&mut r)?,
            conv1_filters: read_u32(&mut r)?,
            conv2_filters: read_u32(&mut r)?,
            kernel: read_u32(&mut r)?,
            classes: read_u32(&mut r)?,
        };
        shape.validate()?;
        let mut long = [0u8; 8];
        r.read_exact(&mut long)?;
        let dropout = f64::from_le_bytes(long);
        r.read_exact(&mut long)?;
        let seed = u64::from_le_bytes(long);
        r.read_exact(&mut long)?;
        let count = u64::from_le_bytes(long) as usize;
        if count != shape.param_count() {
            return Err(AudioError::Model("parameter count does not match shape".into()));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut long)?;
            params.push(f64::from_le_bytes(long));
        }
        Ok(ClassifierModel {
            shape,
            dropout,
            seed,
            params,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            learning_rate: 0.01,
            dropout: 0.5,
            batch_size: 8,
            epochs: 30,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedClassifier {
    pub model: ClassifierModel,
    /// Accuracy on the held-out tenth of the corpus.
    pub test_accuracy: f64,
    /// Mean training loss per epoch (with dropout active).
    pub epoch_losses: Vec<f64>,
    /// Corpus indices of the held-out examples.
    pub test_indices: Vec<usize>,
}

/// Trains on 90% of `corpus` and reports accuracy on the remaining 10%.
pub fn train_classifier(
    corpus: &[(Spectrogram, InstrumentLabel)],
    shape: ClassifierShape,
    cfg: &ClassifierConfig,
) -> Result<TrainedClassifier, AudioError> {
    let test_len = corpus.len() / 10;
    if test_len == 0 {
        return Err(AudioError::CorpusTooSmall(corpus.len()));
    }
    for (s, label) in corpus {
        if label.index >= shape.classes {
            return Err(AudioError::BadLabel(label.index));
        }
        if s.shape() != (shape.rows, shape.cols) {
            return Err(AudioError::ShapeMismatch {
                got: s.shape(),
                expected: (shape.rows, shape.cols),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let (test_indices, train_indices) = order.split_at(test_len);
    let mut train_indices = train_indices.to_vec();

    let mut model = ClassifierModel::new(shape, cfg.dropout, cfg.seed)?;
    let flat = shape.flat();
    let keep = 1.0 - cfg.dropout;
    let mut grad = vec![0.0; model.params.len()];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        train_indices.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in train_indices.chunks(cfg.batch_size.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let mask: Option<Vec<f64>> = (cfg.dropout > 0.0).then(|| {
                    (0..flat)
                        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect()
                });
                let (s, label) = &corpus[i];
                total += model.accumulate_gradient(&s.data, label.index, mask.as_deref(), &mut grad);
            }
            let step = cfg.learning_rate / batch.len() as f64;
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
        epoch_losses.push(total / train_indices.len() as f64);
    }

    let mut correct = 0;
    for &i in test_indices {
        let (s, label) = &corpus[i];
        if model.predict_index(s)? == label.index {
            correct += 1;
        }
    }
    Ok(TrainedClassifier {
        model,
        test_accuracy: correct as f64 / test_len as f64,
        epoch_losses,
        test_indices: test_indices.to_vec(),
    })
}

/// Argmax category of a fingerprint, dropout off.
pub fn classify_sample(
    model: &ClassifierModel,
    s: &Spectrogram,
    taxonomy: &Taxonomy,
) -> Result<InstrumentLabel, AudioError> {
    let index = model.predict_index(s)?;
    if index >= taxonomy.names().len() {
        return Err(AudioError::BadLabel(index));
    }
    Ok(taxonomy.label(index))
}

/// `sample file<TAB>category` lines.
pub fn write_label_manifest<W: Write>(mut w: W, rows: &[(String, String)]) -> Result<(), AudioError> {
    for (file, category) in rows {
        writeln!(w, "{file}\t{category}")?;
    }
    Ok(())
}

pub fn read_label_manifest<R: BufRead>(r: R) -> Result<Vec<(String, String)>, AudioError> {
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (file, category) = line.split_once('\t').ok_or_else(|| AudioError::Manifest {
            line: i + 1,
            message: "expected `file<TAB>category`".into(),
        })?;
        rows.push((file.to_string(), category.trim().to_string()));
    }
    Ok(rows)
}
