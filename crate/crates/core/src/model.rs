//! The next-point regressor: a pointwise encoder stack, a multi-layer GRU
//! and a linear displacement head.

use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    prefixed, DenseBnRelu, DenseBnReluCache, GradientSet, GruCache, GruLayer, Linear, Mode,
    Parameters, TensorRef,
};
use crate::sequence::TrainingSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Sequence length; the model consumes `k - 1` points.
    pub k: usize,
    pub enc_layers: usize,
    pub enc_width: usize,
    pub gru_layers: usize,
    pub hidden: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 100,
            enc_layers: 2,
            enc_width: 64,
            gru_layers: 3,
            hidden: 200,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("k - 1", self.k.saturating_sub(1)),
            ("enc_layers", self.enc_layers),
            ("enc_width", self.enc_width),
            ("gru_layers", self.gru_layers),
            ("hidden", self.hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.k - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MortonNet {
    pub config: ModelConfig,
    pub encoder: Vec<DenseBnRelu>,
    pub gru: Vec<GruLayer>,
    pub head: Linear,
}

/// Everything a train-mode forward keeps for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub mode: Mode,
    pub steps: usize,
    pub batch: usize,
    enc: Vec<DenseBnReluCache>,
    gru: Vec<GruCache>,
    /// Final top-layer state per sample (`B × H`).
    pub h_top: Array2<f64>,
}

/// A batch of normalized sequences laid out time-major (`T*B × 3`).
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    pub steps: usize,
    pub batch: usize,
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl SeqBatch {
    pub fn from_samples(samples: &[&TrainingSample]) -> Result<Self> {
        let batch = samples.len();
        let steps = samples.first().map_or(0, |s| s.inputs.len());
        if let Some(bad) = samples.iter().find(|s| s.inputs.len() != steps) {
            return Err(Error::ShapeMismatch(format!(
                "mixed sequence lengths {} and {steps}",
                bad.inputs.len()
            )));
        }
        let mut inputs = Array2::zeros((steps * batch, 3));
        let mut targets = Array2::zeros((batch, 3));
        for (b, s) in samples.iter().enumerate() {
            for (t, p) in s.inputs.iter().enumerate() {
                for a in 0..3 {
                    inputs[[t * batch + b, a]] = p[a];
                }
            }
            for a in 0..3 {
                targets[[b, a]] = s.target[a];
            }
        }
        Ok(Self {
            steps,
            batch,
            inputs,
            targets,
        })
    }
}

impl MortonNet {
    /// Glorot-uniform weights, zero biases, identity batch norm.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut encoder = Vec::with_capacity(config.enc_layers);
        let mut width = 3;
        for _ in 0..config.enc_layers {
            encoder.push(DenseBnRelu::new(&mut rng, width, config.enc_width));
            width = config.enc_width;
        }
        let mut gru = Vec::with_capacity(config.gru_layers);
        for _ in 0..config.gru_layers {
            gru.push(GruLayer::new(&mut rng, width, config.hidden));
            width = config.hidden;
        }
        let head = Linear::new(&mut rng, config.hidden, 3);
        Ok(Self {
            config,
            encoder,
            gru,
            head,
        })
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    /// Pointwise encoder over a time-major input.
    pub fn encoder_forward(
        &self,
        x: &ArrayView2<f64>,
        mode: Mode,
    ) -> Result<(Array2<f64>, Vec<DenseBnReluCache>)> {
        let mut a = x.to_owned();
        let mut caches = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (out, cache) = layer.forward(&a.view(), mode)?;
            caches.push(cache);
            a = out;
        }
        Ok((a, caches))
    }

    /// Stacked GRU; returns the top layer's final state and per-layer caches.
    pub fn gru_forward(
        &self,
        v: &ArrayView2<f64>,
        steps: usize,
        batch: usize,
    ) -> Result<(Array2<f64>, Vec<GruCache>)> {
        let mut a = v.to_owned();
        let mut caches = Vec::with_capacity(self.gru.len());
        for layer in &self.gru {
            let (out, cache) = layer.forward(&a.view(), steps, batch)?;
            caches.push(cache);
            a = out;
        }
        let h_top = a.slice(s![(steps - 1) * batch.., ..]).to_owned();
        Ok((h_top, caches))
    }

    pub fn head_forward(&self, h: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.head.forward(h)
    }

    fn check_input(&self, x: &ArrayView2<f64>, batch: usize) -> Result<usize> {
        let steps = self.config.steps();
        if batch == 0 || x.ncols() != 3 || x.nrows() != steps * batch {
            return Err(Error::ShapeMismatch(format!(
                "expected {} × 3 input for batch {batch}, got {:?}",
                steps * batch,
                x.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("model input".into()));
        }
        Ok(steps)
    }

    /// Displacement predictions (`B × 3`) plus the cache for [`Self::backward`].
    pub fn forward(&self, x: &ArrayView2<f64>, batch: usize, mode: Mode) -> Result<(Array2<f64>, ForwardCache)> {
        let steps = self.check_input(x, batch)?;
        let (v, enc) = self.encoder_forward(x, mode)?;
        let (h_top, gru) = self.gru_forward(&v.view(), steps, batch)?;
        let y = self.head_forward(&h_top.view())?;
        Ok((
            y,
            ForwardCache {
                mode,
                steps,
                batch,
                enc,
                gru,
                h_top,
            },
        ))
    }

    /// Eval-mode final top-layer hidden states (`B × H`).
    pub fn hidden_states(&self, x: &ArrayView2<f64>, batch: usize) -> Result<Array2<f64>> {
        let steps = self.check_input(x, batch)?;
        let (v, _) = self.encoder_forward(x, Mode::Eval)?;
        Ok(self.gru_forward(&v.view(), steps, batch)?.0)
    }

    /// Eval-mode predictions.
    pub fn predict(&self, x: &ArrayView2<f64>, batch: usize) -> Result<Array2<f64>> {
        Ok(self.forward(x, batch, Mode::Eval)?.0)
    }

    /// Exact gradients of a scalar loss given `dL/dy`, through the head,
    /// every GRU layer over every step, and train-mode batch norm.
    pub fn backward(&self, cache: &ForwardCache, dy: &ArrayView2<f64>) -> Result<GradientSet> {
        if cache.mode != Mode::Train {
            return Err(Error::ShapeMismatch("backward requires a train-mode cache".into()));
        }
        if dy.dim() != (cache.batch, 3) {
            return Err(Error::ShapeMismatch(format!(
                "dL/dy must be {} × 3, got {:?}",
                cache.batch,
                dy.dim()
            )));
        }
        let (steps, batch) = (cache.steps, cache.batch);
        let (head_grads, dh) = self.head.backward(&cache.h_top.view(), dy);
        let mut upstream = Array2::zeros((steps * batch, self.hidden()));
        upstream.slice_mut(s![(steps - 1) * batch.., ..]).assign(&dh);

        let mut gru_grads = Vec::with_capacity(self.gru.len());
        for (layer, c) in self.gru.iter().zip(&cache.gru).rev() {
            let (g, dx) = layer.backward(c, &upstream.view(), true)?;
            gru_grads.push(g);
            upstream = dx.expect("requested");
        }
        gru_grads.reverse();

        let mut enc_grads = Vec::with_capacity(self.encoder.len());
        for (l, (layer, c)) in self.encoder.iter().zip(&cache.enc).enumerate().rev() {
            let (g, dx) = layer.backward(c, &upstream.view(), l > 0)?;
            enc_grads.push(g);
            if let Some(dx) = dx {
                upstream = dx;
            }
        }
        enc_grads.reverse();

        let tensors = enc_grads
            .into_iter()
            .flatten()
            .chain(gru_grads.into_iter().flatten())
            .chain(head_grads)
            .collect();
        Ok(GradientSet { tensors })
    }

    /// Folds the batch statistics of a train-mode forward into the running
    /// batch-norm estimates.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        for (layer, c) in self.encoder.iter_mut().zip(&cache.enc) {
            if let Some(stats) = &c.stats {
                layer.bn.update_running(stats);
            }
        }
    }
}

impl Parameters for MortonNet {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            v.extend(prefixed(&format!("encoder.{i}"), l.tensors()));
        }
        for (i, l) in self.gru.iter().enumerate() {
            v.extend(prefixed(&format!("gru.{i}"), l.tensors()));
        }
        v.extend(prefixed("head", self.head.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        for l in &mut self.encoder {
            v.extend(l.tensors_mut());
        }
        for l in &mut self.gru {
            v.extend(l.tensors_mut());
        }
        v.extend(self.head.tensors_mut());
        v
    }

    fn buffers(&self) -> Vec<TensorRef<'_>> {
        let mut v = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            v.extend(prefixed(&format!("encoder.{i}"), l.buffers()));
        }
        v
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        self.encoder.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }
}
