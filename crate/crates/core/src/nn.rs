//! Dense, batch-norm and GRU layers with hand-written reverse passes.
//!
//! Activations are row-major `Array2<f64>` with one sample per row. Sequence
//! tensors are stored time-major: row `t * batch + b` holds step `t` of
//! sample `b`, so each step is a contiguous row block.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Uniform `(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += alpha * a · b`.
#[inline]
fn gemm_acc(alpha: f64, a: &ArrayView2<f64>, b: &ArrayView2<f64>, out: &mut Array2<f64>) {
    general_mat_mul(alpha, a, b, 1.0, out);
}

fn check_cols(x: &ArrayView2<f64>, cols: usize, what: &str) -> Result<()> {
    if x.ncols() != cols {
        return Err(Error::ShapeMismatch(format!(
            "{what}: expected {cols} input columns, got {}",
            x.ncols()
        )));
    }
    Ok(())
}

/// A named, shaped view onto one parameter tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Parameter-holding module with a fixed tensor order.
pub trait Parameters {
    /// Trainable tensors, in canonical order.
    fn tensors(&self) -> Vec<TensorRef<'_>>;
    /// Same order as [`Parameters::tensors`].
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    /// Non-trainable state (batch-norm running statistics).
    fn buffers(&self) -> Vec<TensorRef<'_>> {
        Vec::new()
    }
    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        Vec::new()
    }
}

fn tref<'a, D: ndarray::Dimension>(
    prefix: &str,
    name: &str,
    a: &'a ndarray::Array<f64, D>,
) -> TensorRef<'a> {
    TensorRef {
        name: format!("{prefix}{name}"),
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("parameters are contiguous"),
    }
}

fn flat<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are contiguous")
}

/// Gradient tensors in a module's canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub tensors: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like<P: Parameters + ?Sized>(p: &P) -> Self {
        Self {
            tensors: p.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Affine layer `y = x Wᵀ + b`, weight stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new(rng: &mut ChaCha8Rng, inp: usize, out: usize) -> Self {
        Self {
            weight: glorot(rng, out, inp),
            bias: Array1::zeros(out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        check_cols(x, self.in_dim(), "linear")?;
        let mut y = Array2::zeros((x.nrows(), self.out_dim()));
        y += &self.bias;
        gemm_acc(1.0, x, &self.weight.t(), &mut y);
        Ok(y)
    }

    /// Returns `[dW, db]` and `dx`.
    pub fn backward(&self, x: &ArrayView2<f64>, dy: &ArrayView2<f64>) -> (Vec<Vec<f64>>, Array2<f64>) {
        let mut dw = Array2::zeros(self.weight.raw_dim());
        gemm_acc(1.0, &dy.t(), x, &mut dw);
        let db = dy.sum_axis(Axis(0));
        let dx = dy.dot(&self.weight);
        (vec![dw.into_iter().collect(), db.to_vec()], dx)
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![tref("", "weight", &self.weight), tref("", "bias", &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![flat(&mut self.weight), flat(&mut self.bias)]
    }
}

/// Per-channel batch normalization over all rows of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: BN_MOMENTUM,
        }
    }
}

/// Batch statistics seen by a train-mode forward.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Array1<f64>,
    /// Biased (population) variance.
    pub var: Array1<f64>,
    pub count: usize,
}

impl BatchNorm {
    /// Folds batch statistics into the running estimates. The running
    /// variance uses the unbiased estimate.
    pub fn update_running(&mut self, stats: &BnStats) {
        let m = self.momentum;
        let corr = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        Zip::from(&mut self.running_mean)
            .and(&stats.mean)
            .for_each(|r, &v| *r = (1.0 - m) * *r + m * v);
        Zip::from(&mut self.running_var)
            .and(&stats.var)
            .for_each(|r, &v| *r = (1.0 - m) * *r + m * v * corr);
    }
}

/// `ReLU(BN(x Wᵀ))`, the building block of the point encoder and the
/// downstream classifier. There is no pre-norm bias: the batch mean would
/// cancel it exactly, and `β` already provides the shift.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBnRelu {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone)]
pub struct DenseBnReluCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    /// Post-affine BN output, before the ReLU.
    pre_relu: Array2<f64>,
    pub stats: Option<BnStats>,
}

impl DenseBnRelu {
    pub fn new(rng: &mut ChaCha8Rng, inp: usize, out: usize) -> Self {
        Self {
            weight: glorot(rng, out, inp),
            bn: BatchNorm::new(out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &ArrayView2<f64>, mode: Mode) -> Result<(Array2<f64>, DenseBnReluCache)> {
        if x.ncols() != self.in_dim() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} input channels, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        let z = x.dot(&self.weight.t());
        let n = z.nrows();
        let (mean, var, stats) = match mode {
            Mode::Train => {
                if n == 0 {
                    return Err(Error::ShapeMismatch("batch norm over an empty batch".into()));
                }
                let mean = z.mean_axis(Axis(0)).expect("non-empty");
                let centered = &z - &mean;
                let var = (&centered * &centered).mean_axis(Axis(0)).expect("non-empty");
                let stats = BnStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count: n,
                };
                (mean, var, Some(stats))
            }
            Mode::Eval => (self.bn.running_mean.clone(), self.bn.running_var.clone(), None),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = (z - &mean) * &inv_std;
        let pre_relu = &xhat * &self.bn.gamma + &self.bn.beta;
        let out = pre_relu.mapv(|v| v.max(0.0));
        let cache = DenseBnReluCache {
            input: x.to_owned(),
            xhat,
            inv_std,
            pre_relu,
            stats,
        };
        Ok((out, cache))
    }

    /// Reverse pass through a train-mode forward. Returns gradients
    /// `[dW, dγ, dβ]` and, if requested, the input gradient.
    pub fn backward(
        &self,
        cache: &DenseBnReluCache,
        dout: &ArrayView2<f64>,
        need_dx: bool,
    ) -> Result<(Vec<Vec<f64>>, Option<Array2<f64>>)> {
        if cache.stats.is_none() {
            return Err(Error::ShapeMismatch("backward requires a train-mode cache".into()));
        }
        if dout.dim() != cache.pre_relu.dim() {
            return Err(Error::ShapeMismatch("upstream gradient shape".into()));
        }
        let n = cache.xhat.nrows() as f64;
        let mut dy = dout.to_owned();
        Zip::from(&mut dy)
            .and(&cache.pre_relu)
            .for_each(|g, &p| if p <= 0.0 { *g = 0.0 });
        let dgamma = (&dy * &cache.xhat).sum_axis(Axis(0));
        let dbeta = dy.sum_axis(Axis(0));
        let dxhat = dy * &self.bn.gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let mut dz = dxhat * n - &sum_dxhat - &(&cache.xhat * &sum_dxhat_xhat);
        dz *= &(&cache.inv_std / n);
        let mut dw = Array2::zeros(self.weight.raw_dim());
        gemm_acc(1.0, &dz.t(), &cache.input.view(), &mut dw);
        let dx = need_dx.then(|| dz.dot(&self.weight));
        Ok((
            vec![dw.into_iter().collect(), dgamma.to_vec(), dbeta.to_vec()],
            dx,
        ))
    }
}

impl Parameters for DenseBnRelu {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            tref("", "weight", &self.weight),
            tref("", "bn.gamma", &self.bn.gamma),
            tref("", "bn.beta", &self.bn.beta),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            flat(&mut self.weight),
            flat(&mut self.bn.gamma),
            flat(&mut self.bn.beta),
        ]
    }

    fn buffers(&self) -> Vec<TensorRef<'_>> {
        vec![
            tref("", "bn.running_mean", &self.bn.running_mean),
            tref("", "bn.running_var", &self.bn.running_var),
        ]
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        vec![flat(&mut self.bn.running_mean), flat(&mut self.bn.running_var)]
    }
}

/// One GRU layer. Gate blocks are stacked `[update; reset; candidate]`
/// along the rows of both weight matrices:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// h~ = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 - z) ⊙ h + z ⊙ h~
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    /// `3H × in`
    pub w_ih: Array2<f64>,
    /// `3H × H`
    pub w_hh: Array2<f64>,
    /// `3H`
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    steps: usize,
    batch: usize,
    input: Array2<f64>,
    /// Hidden state entering each step (`T*B × H`).
    h_prev: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    n: Array2<f64>,
}

impl GruLayer {
    pub fn new(rng: &mut ChaCha8Rng, inp: usize, hidden: usize) -> Self {
        let mut w_ih = Array2::zeros((3 * hidden, inp));
        let mut w_hh = Array2::zeros((3 * hidden, hidden));
        // each gate matrix is its own Glorot tensor
        for g in 0..3 {
            w_ih.slice_mut(s![g * hidden..(g + 1) * hidden, ..])
                .assign(&glorot(rng, hidden, inp));
        }
        for g in 0..3 {
            w_hh.slice_mut(s![g * hidden..(g + 1) * hidden, ..])
                .assign(&glorot(rng, hidden, hidden));
        }
        Self {
            w_ih,
            w_hh,
            bias: Array1::zeros(3 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    pub fn in_dim(&self) -> usize {
        self.w_ih.ncols()
    }

    /// Runs the recurrence from a zero state over a time-major input.
    /// Returns every step's output state (`T*B × H`).
    pub fn forward(&self, x: &ArrayView2<f64>, steps: usize, batch: usize) -> Result<(Array2<f64>, GruCache)> {
        check_cols(x, self.in_dim(), "gru")?;
        if x.nrows() != steps * batch {
            return Err(Error::ShapeMismatch(format!(
                "gru: {} rows for {steps} steps × {batch} samples",
                x.nrows()
            )));
        }
        let h = self.hidden();
        let mut gx = Array2::zeros((steps * batch, 3 * h));
        gx += &self.bias;
        gemm_acc(1.0, x, &self.w_ih.t(), &mut gx);
        let u_zr = self.w_hh.slice(s![..2 * h, ..]);
        let u_n = self.w_hh.slice(s![2 * h.., ..]);

        let mut out = Array2::zeros((steps * batch, h));
        let mut h_prev_all = Array2::zeros((steps * batch, h));
        let mut z_all = Array2::zeros((steps * batch, h));
        let mut r_all = Array2::zeros((steps * batch, h));
        let mut n_all = Array2::zeros((steps * batch, h));
        let mut state: Array2<f64> = Array2::zeros((batch, h));
        let mut gh_zr = Array2::zeros((batch, 2 * h));
        let mut gh_n = Array2::zeros((batch, h));
        for t in 0..steps {
            let rows = t * batch..(t + 1) * batch;
            let g = gx.slice(s![rows.clone(), ..]);
            general_mat_mul(1.0, &state, &u_zr.t(), 0.0, &mut gh_zr);
            let mut z = g.slice(s![.., ..h]).to_owned();
            z += &gh_zr.slice(s![.., ..h]);
            z.mapv_inplace(sigmoid);
            let mut r = g.slice(s![.., h..2 * h]).to_owned();
            r += &gh_zr.slice(s![.., h..]);
            r.mapv_inplace(sigmoid);
            let rh = &r * &state;
            general_mat_mul(1.0, &rh, &u_n.t(), 0.0, &mut gh_n);
            let mut n = g.slice(s![.., 2 * h..]).to_owned();
            n += &gh_n;
            n.mapv_inplace(f64::tanh);
            h_prev_all.slice_mut(s![rows.clone(), ..]).assign(&state);
            // h' = h + z ⊙ (n - h)
            Zip::from(&mut state)
                .and(&z)
                .and(&n)
                .for_each(|s, &zz, &nn| *s += zz * (nn - *s));
            out.slice_mut(s![rows.clone(), ..]).assign(&state);
            z_all.slice_mut(s![rows.clone(), ..]).assign(&z);
            r_all.slice_mut(s![rows.clone(), ..]).assign(&r);
            n_all.slice_mut(s![rows, ..]).assign(&n);
        }
        let cache = GruCache {
            steps,
            batch,
            input: x.to_owned(),
            h_prev: h_prev_all,
            z: z_all,
            r: r_all,
            n: n_all,
        };
        Ok((out, cache))
    }

    /// Full backpropagation through time. `dout` is the gradient with
    /// respect to every step's output state. Returns `[dW_ih, dW_hh, db]`
    /// and the input gradient when requested.
    pub fn backward(
        &self,
        cache: &GruCache,
        dout: &ArrayView2<f64>,
        need_dx: bool,
    ) -> Result<(Vec<Vec<f64>>, Option<Array2<f64>>)> {
        let h = self.hidden();
        let (steps, batch) = (cache.steps, cache.batch);
        if dout.dim() != (steps * batch, h) {
            return Err(Error::ShapeMismatch("gru upstream gradient shape".into()));
        }
        let u_zr = self.w_hh.slice(s![..2 * h, ..]);
        let u_n = self.w_hh.slice(s![2 * h.., ..]);
        let mut dgx = Array2::zeros((steps * batch, 3 * h));
        let mut dw_hh = Array2::zeros(self.w_hh.raw_dim());
        let mut dh_next: Array2<f64> = Array2::zeros((batch, h));
        for t in (0..steps).rev() {
            let rows = t * batch..(t + 1) * batch;
            let hp = cache.h_prev.slice(s![rows.clone(), ..]);
            let z = cache.z.slice(s![rows.clone(), ..]);
            let r = cache.r.slice(s![rows.clone(), ..]);
            let n = cache.n.slice(s![rows.clone(), ..]);
            let dh = &dout.slice(s![rows.clone(), ..]) + &dh_next;

            // pre-activation gradient of the candidate
            let mut dan = Array2::zeros((batch, h));
            Zip::from(&mut dan)
                .and(&dh)
                .and(&z)
                .and(&n)
                .for_each(|d, &g, &zz, &nn| *d = g * zz * (1.0 - nn * nn));
            let rh = &r * &hp;
            {
                let mut du_n = dw_hh.slice_mut(s![2 * h.., ..]);
                general_mat_mul(1.0, &dan.t(), &rh, 1.0, &mut du_n);
            }
            let drh = dan.dot(&u_n);

            let mut dazr = Array2::zeros((batch, 2 * h));
            {
                let (mut daz, mut dar) = dazr.multi_slice_mut((s![.., ..h], s![.., h..]));
                Zip::from(&mut daz)
                    .and(&dh)
                    .and(&z)
                    .and(&n)
                    .and(&hp)
                    .for_each(|d, &g, &zz, &nn, &hh| *d = g * (nn - hh) * zz * (1.0 - zz));
                Zip::from(&mut dar)
                    .and(&drh)
                    .and(&r)
                    .and(&hp)
                    .for_each(|d, &g, &rr, &hh| *d = g * hh * rr * (1.0 - rr));
            }
            {
                let mut du_zr = dw_hh.slice_mut(s![..2 * h, ..]);
                general_mat_mul(1.0, &dazr.t(), &hp, 1.0, &mut du_zr);
            }
            // state gradient flowing to step t - 1
            let mut dh_prev = dazr.dot(&u_zr);
            Zip::from(&mut dh_prev)
                .and(&dh)
                .and(&z)
                .and(&drh)
                .and(&r)
                .for_each(|d, &g, &zz, &grh, &rr| *d += g * (1.0 - zz) + grh * rr);
            dh_next = dh_prev;

            let mut dg = dgx.slice_mut(s![rows, ..]);
            dg.slice_mut(s![.., ..2 * h]).assign(&dazr);
            dg.slice_mut(s![.., 2 * h..]).assign(&dan);
        }
        let mut dw_ih = Array2::zeros(self.w_ih.raw_dim());
        gemm_acc(1.0, &dgx.t(), &cache.input.view(), &mut dw_ih);
        let db = dgx.sum_axis(Axis(0));
        let dx = need_dx.then(|| dgx.dot(&self.w_ih));
        Ok((
            vec![dw_ih.into_iter().collect(), dw_hh.into_iter().collect(), db.to_vec()],
            dx,
        ))
    }
}

impl Parameters for GruLayer {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            tref("", "w_ih", &self.w_ih),
            tref("", "w_hh", &self.w_hh),
            tref("", "bias", &self.bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![flat(&mut self.w_ih), flat(&mut self.w_hh), flat(&mut self.bias)]
    }
}

/// Prefixes tensor names of a sub-module.
pub fn prefixed<'a>(prefix: &str, mut v: Vec<TensorRef<'a>>) -> Vec<TensorRef<'a>> {
    for t in &mut v {
        t.name = format!("{prefix}.{}", t.name);
    }
    v
}
