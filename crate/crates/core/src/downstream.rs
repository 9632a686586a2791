//! Pointwise part classifier over per-point features, segmentation metrics
//! and the label-fraction study.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::nn::{prefixed, DenseBnRelu, DenseBnReluCache, GradientSet, Linear, Mode, Parameters, TensorRef};
use crate::rng;
use crate::train::{adam_step, AdamState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub in_dim: usize,
    pub num_classes: usize,
    /// Base width `W`; the hidden layers have `W/2`, `W/4`, `W/8` channels.
    /// Equal to `in_dim` for the standard classifier.
    pub width: usize,
    pub init_seed: u64,
}

impl ClassifierConfig {
    pub fn new(in_dim: usize, num_classes: usize) -> Self {
        Self {
            in_dim,
            num_classes,
            width: in_dim,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 {
            return Err(Error::InvalidConfig("classifier base width must be at least 8".into()));
        }
        if self.in_dim == 0 || self.num_classes == 0 {
            return Err(Error::InvalidConfig("classifier needs inputs and classes".into()));
        }
        Ok(())
    }

    /// Channel counts of every layer from input to logits.
    pub fn layer_widths(&self) -> Vec<usize> {
        vec![
            self.in_dim,
            self.width / 2,
            self.width / 4,
            self.width / 8,
            self.num_classes,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub config: ClassifierConfig,
    pub blocks: Vec<DenseBnRelu>,
    pub out: Linear,
}

pub struct ClassifierCache {
    blocks: Vec<DenseBnReluCache>,
    last_hidden: Array2<f64>,
    mode: Mode,
}

impl Classifier {
    pub fn new(config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(config.init_seed, &[0xc1a5]);
        let w = config.layer_widths();
        let blocks = (0..3).map(|i| DenseBnRelu::new(&mut rng, w[i], w[i + 1])).collect();
        let out = Linear::new(&mut rng, w[3], w[4]);
        Ok(Self { config, blocks, out })
    }

    pub fn forward(&self, x: &ArrayView2<f64>, mode: Mode) -> Result<(Array2<f64>, ClassifierCache)> {
        if x.ncols() != self.config.in_dim {
            return Err(Error::ShapeMismatch(format!(
                "classifier expects {} features, got {}",
                self.config.in_dim,
                x.ncols()
            )));
        }
        let mut h = x.to_owned();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, c) = b.forward(&h.view(), mode)?;
            caches.push(c);
            h = next;
        }
        let logits = self.out.forward(&h.view())?;
        Ok((
            logits,
            ClassifierCache {
                blocks: caches,
                last_hidden: h,
                mode,
            },
        ))
    }

    pub fn logits(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x, Mode::Eval)?.0)
    }

    /// Eval-mode argmax class per row; ties go to the lower class.
    pub fn predict(&self, x: &ArrayView2<f64>) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (c, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }

    pub fn backward(&self, cache: &ClassifierCache, dlogits: &ArrayView2<f64>) -> Result<GradientSet> {
        if cache.mode != Mode::Train {
            return Err(Error::ShapeMismatch("backward requires a train-mode cache".into()));
        }
        let (out_grads, mut dh) = self.out.backward(&cache.last_hidden.view(), dlogits);
        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for (i, (b, c)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let (g, dx) = b.backward(c, &dh.view(), i > 0)?;
            block_grads.push(g);
            if let Some(dx) = dx {
                dh = dx;
            }
        }
        block_grads.reverse();
        let mut tensors: Vec<Vec<f64>> = block_grads.into_iter().flatten().collect();
        tensors.extend(out_grads);
        Ok(GradientSet { tensors })
    }

    pub fn update_running_stats(&mut self, cache: &ClassifierCache) {
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            if let Some(s) = &c.stats {
                b.bn.update_running(s);
            }
        }
    }
}

impl Parameters for Classifier {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(prefixed(&format!("block.{i}"), b.tensors()));
        }
        v.extend(prefixed("out", self.out.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self.blocks.iter_mut().flat_map(|b| b.tensors_mut()).collect();
        v.extend(self.out.tensors_mut());
        v
    }

    fn buffers(&self) -> Vec<TensorRef<'_>> {
        let mut v = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(prefixed(&format!("block.{i}"), b.buffers()));
        }
        v
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        self.blocks.iter_mut().flat_map(|b| b.buffers_mut()).collect()
    }
}

/// Mean softmax cross-entropy over rows and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != labels.len() || logits.nrows() == 0 {
        return Err(Error::ShapeMismatch("logits and labels disagree".into()));
    }
    let c = logits.ncols();
    let b = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let y = labels[i];
        if y >= c {
            return Err(Error::LabelOutOfRange {
                label: y as i64,
                classes: c,
            });
        }
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        loss += sum.ln() + max - row[y];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - max).exp() / sum;
            grad[[i, j]] = (p - if j == y { 1.0 } else { 0.0 }) / b;
        }
    }
    Ok((loss / b, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 40,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// Train-mode accuracy over the epoch's batches.
    pub accuracy: f64,
}

fn checked_labels(labels: &[i64], classes: usize) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            if l < 0 || l as usize >= classes {
                Err(Error::LabelOutOfRange { label: l, classes })
            } else {
                Ok(l as usize)
            }
        })
        .collect()
}

/// Trains on the given rows (all rows if `None`); masked rows are dropped.
pub fn train_classifier(
    features: &FeatureMatrix,
    labels: &[i64],
    rows: Option<&[usize]>,
    cfg: &ClassifierConfig,
    tcfg: &ClassifierTrainConfig,
) -> Result<(Classifier, Vec<ClassifierEpochLog>)> {
    if labels.len() != features.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.len()
        )));
    }
    if tcfg.batch_size == 0 || !(tcfg.lr >= 0.0) {
        return Err(Error::InvalidConfig("batch_size must be positive and lr non-negative".into()));
    }
    let all: Vec<usize>;
    let rows = match rows {
        Some(r) => r,
        None => {
            all = (0..features.len()).collect();
            &all
        }
    };
    if let Some(&bad) = rows.iter().find(|&&r| r >= features.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: features.len(),
        });
    }
    let usable: Vec<usize> = rows.iter().copied().filter(|&r| features.valid[r]).collect();
    if usable.is_empty() {
        return Err(Error::AllMasked);
    }
    let y_all = checked_labels(labels, cfg.num_classes)?;
    let mut model = Classifier::new(*cfg)?;
    let mut adam = AdamState::new(&model);
    let mut log = Vec::with_capacity(tcfg.epochs);
    for epoch in 1..=tcfg.epochs {
        let mut order = usable.clone();
        order.shuffle(&mut rng::stream(tcfg.seed, &[0xc1a5, epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(tcfg.batch_size) {
            let x = features.data.select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&r| y_all[r]).collect();
            let (logits, cache) = model.forward(&x.view(), Mode::Train)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits.view(), &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: 0 });
            }
            loss_sum += loss * chunk.len() as f64;
            for (row, &t) in logits.rows().into_iter().zip(&y) {
                let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
                correct += usize::from(best == t);
            }
            let grads = model.backward(&cache, &dlogits.view())?;
            model.update_running_stats(&cache);
            adam_step(&mut model, &grads, &mut adam, tcfg.lr)?;
        }
        log.push(ClassifierEpochLog {
            epoch,
            loss: loss_sum / usable.len() as f64,
            accuracy: correct as f64 / usable.len() as f64,
        });
    }
    Ok((model, log))
}

/// `C × C` counts; rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if counts.iter().any(|r| r.len() != c) {
            return Err(Error::ShapeMismatch("confusion matrix must be square".into()));
        }
        Ok(Self { counts })
    }

    pub fn from_predictions(truth: &[usize], pred: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::ShapeMismatch("truth and predictions differ in length".into()));
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= classes || p >= classes {
                return Err(Error::LabelOutOfRange {
                    label: t.max(p) as i64,
                    classes,
                });
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("truth\\pred");
        for c in 0..self.classes() {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (t, row) in self.counts.iter().enumerate() {
            let _ = write!(s, "{t}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub miou: f64,
    pub macc: f64,
    pub oa: f64,
    /// `None` for classes absent from both truth and predictions.
    pub per_class_iou: Vec<Option<f64>>,
}

/// mIoU averages over classes that occur in the truth or the predictions;
/// mAcc averages recall over classes that occur in the truth.
pub fn segmentation_metrics(cm: &ConfusionMatrix) -> Result<SegMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyConfusion);
    }
    let c = cm.classes();
    let mut per_class_iou = Vec::with_capacity(c);
    let mut recalls = Vec::new();
    let mut trace = 0u64;
    for k in 0..c {
        let tp = cm.counts[k][k];
        let row: u64 = cm.counts[k].iter().sum();
        let col: u64 = cm.counts.iter().map(|r| r[k]).sum();
        trace += tp;
        let union = row + col - tp;
        per_class_iou.push((union > 0).then(|| tp as f64 / union as f64));
        if row > 0 {
            recalls.push(tp as f64 / row as f64);
        }
    }
    let ious: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    Ok(SegMetrics {
        miou: ious.iter().sum::<f64>() / ious.len() as f64,
        macc: recalls.iter().sum::<f64>() / recalls.len() as f64,
        oa: trace as f64 / total as f64,
        per_class_iou,
    })
}

/// Evaluates on the given rows, skipping masked ones.
pub fn evaluate_classifier(
    model: &Classifier,
    features: &FeatureMatrix,
    labels: &[i64],
    rows: &[usize],
) -> Result<(ConfusionMatrix, SegMetrics)> {
    let usable: Vec<usize> = rows.iter().copied().filter(|&r| features.valid[r]).collect();
    if usable.is_empty() {
        return Err(Error::AllMasked);
    }
    let classes = model.config.num_classes;
    let y_all = checked_labels(labels, classes)?;
    let x = features.data.select(Axis(0), &usable);
    let pred = model.predict(&x.view())?;
    let truth: Vec<usize> = usable.iter().map(|&r| y_all[r]).collect();
    let cm = ConfusionMatrix::from_predictions(&truth, &pred, classes)?;
    let m = segmentation_metrics(&cm)?;
    Ok((cm, m))
}

/// `⌈f · n_c⌉` rows of every class `c`, chosen by a seeded shuffle per
/// class and returned in ascending order. With `f = 1` this is every row.
pub fn stratified_subsample(
    labels: &[i64],
    rows: &[usize],
    fraction: f64,
    classes: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut by_class = vec![Vec::new(); classes];
    for &r in rows {
        let l = labels[r];
        if l < 0 || l as usize >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        by_class[l as usize].push(r);
    }
    let mut out = Vec::new();
    for (c, mut members) in by_class.into_iter().enumerate() {
        // Guard the ceiling against products like 0.1 · 30 = 3.0000000000000004.
        let take = ((fraction * members.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        if take == 0 {
            return Err(Error::EmptyClass { fraction, class: c });
        }
        if take < members.len() {
            members.shuffle(&mut rng::stream(seed, &[0x57a7, c as u64]));
            members.truncate(take);
        }
        out.extend(members);
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionResult {
    pub fraction: f64,
    pub train_points: usize,
    pub miou: f64,
    pub macc: f64,
    pub oa: f64,
}

/// One classifier per label fraction, all evaluated on `test_rows`.
pub fn label_fraction_study(
    features: &FeatureMatrix,
    labels: &[i64],
    train_rows: &[usize],
    test_rows: &[usize],
    fractions: &[f64],
    cfg: &ClassifierConfig,
    tcfg: &ClassifierTrainConfig,
) -> Result<Vec<FractionResult>> {
    let usable: Vec<usize> = train_rows.iter().copied().filter(|&r| features.valid[r]).collect();
    fractions
        .iter()
        .map(|&f| {
            let subset = stratified_subsample(labels, &usable, f, cfg.num_classes, tcfg.seed)?;
            let (model, _) = train_classifier(features, labels, Some(&subset), cfg, tcfg)?;
            let (_, m) = evaluate_classifier(&model, features, labels, test_rows)?;
            Ok(FractionResult {
                fraction: f,
                train_points: subset.len(),
                miou: m.miou,
                macc: m.macc,
                oa: m.oa,
            })
        })
        .collect()
}

pub fn fraction_table_csv(rows: &[FractionResult]) -> String {
    let mut s = String::from("fraction,train_points,miou,macc,oa\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6},{:.6},{:.6}", r.fraction, r.train_points, r.miou, r.macc, r.oa);
    }
    s
}
