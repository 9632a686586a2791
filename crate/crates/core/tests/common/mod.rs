//! Hand-computed oracles shared by the integration suites.
#![allow(dead_code)]

use std::cmp::Ordering;

use mortonnet::downstream::ConfusionMatrix;
use mortonnet::model::{ModelConfig, MortonNet};
use mortonnet::nn::{Mode, Parameters};
use mortonnet::train::mse_loss;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct MetricCase {
    pub name: &'static str,
    pub counts: Vec<Vec<u64>>,
    pub miou: f64,
    pub macc: f64,
    pub oa: f64,
}

/// Confusion matrices (rows truth, columns predictions) with metrics worked
/// out by hand. Classes absent from both truth and predictions are left
/// out of the mIoU mean; mAcc averages over classes present in the truth.
pub fn metric_cases() -> Vec<MetricCase> {
    vec![
        MetricCase {
            name: "symmetric two-class",
            counts: vec![vec![3, 1], vec![1, 3]],
            miou: 0.6,
            macc: 0.75,
            oa: 0.75,
        },
        MetricCase {
            name: "perfect",
            counts: vec![vec![5, 0, 0], vec![0, 2, 0], vec![0, 0, 7]],
            miou: 1.0,
            macc: 1.0,
            oa: 1.0,
        },
        MetricCase {
            name: "class absent everywhere",
            counts: vec![vec![4, 0, 0], vec![0, 0, 0], vec![0, 0, 6]],
            miou: 1.0,
            macc: 1.0,
            oa: 1.0,
        },
        MetricCase {
            // class 1 is predicted but never true: IoU 0 counts, recall is undefined
            name: "predicted but absent from truth",
            counts: vec![vec![2, 2], vec![0, 0]],
            miou: 0.25,
            macc: 0.5,
            oa: 0.5,
        },
        MetricCase {
            // IoUs 5/8, 3/7, 4/5; recalls 5/6, 3/6, 4/4
            name: "three-class mixed",
            counts: vec![vec![5, 1, 0], vec![2, 3, 1], vec![0, 0, 4]],
            miou: (5.0 / 8.0 + 3.0 / 7.0 + 4.0 / 5.0) / 3.0,
            macc: 7.0 / 9.0,
            oa: 0.75,
        },
        MetricCase {
            name: "all wrong",
            counts: vec![vec![0, 3], vec![2, 0]],
            miou: 0.0,
            macc: 0.0,
            oa: 0.0,
        },
        MetricCase {
            // IoUs 0/4, 5/5, 1/5; class 0 never true so recall covers 1 and 2
            name: "never-true class still predicted",
            counts: vec![vec![0, 0, 0], vec![0, 5, 0], vec![4, 0, 1]],
            miou: 0.4,
            macc: 0.6,
            oa: 0.6,
        },
    ]
}

pub fn matrix(case: &MetricCase) -> ConfusionMatrix {
    ConfusionMatrix::from_counts(case.counts.clone()).unwrap()
}

/// Metrics agree when they differ by at most a couple of rounding steps of
/// the oracle's own arithmetic.
pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 4.0 * f64::EPSILON * b.abs().max(1.0)
}

/// Z-order comparison without interleaving: scan bit planes from the top;
/// within a plane z outranks y outranks x.
pub fn msb_compare(a: [u32; 3], b: [u32; 3], bits: u32) -> Ordering {
    for bit in (0..bits).rev() {
        for axis in [2, 1, 0] {
            let (u, v) = ((a[axis] >> bit) & 1, (b[axis] >> bit) & 1);
            if u != v {
                return u.cmp(&v);
            }
        }
    }
    Ordering::Equal
}


pub fn tiny(seed: u64) -> MortonNet {
    MortonNet::new(ModelConfig {
        k: 8,
        enc_layers: 2,
        enc_width: 8,
        gru_layers: 3,
        hidden: 16,
        init_seed: seed,
    })
    .unwrap()
}

pub fn random_batch(rng: &mut ChaCha8Rng, steps: usize, batch: usize) -> (Array2<f64>, Array2<f64>) {
    let x = Array2::from_shape_fn((steps * batch, 3), |_| rng.random_range(-0.5..0.5));
    let t = Array2::from_shape_fn((batch, 3), |_| rng.random_range(-0.2..0.2));
    (x, t)
}

pub fn loss(model: &MortonNet, x: &Array2<f64>, t: &Array2<f64>, batch: usize) -> f64 {
    let (y, _) = model.forward(&x.view(), batch, Mode::Train).unwrap();
    mse_loss(&y.view(), &t.view()).unwrap().0
}

/// Largest relative error between the analytic gradient and central
/// differences over every parameter, with where it occurred.
pub fn max_relative_error(seed: u64) -> (f64, String) {
    let batch = 4;
    let mut model = tiny(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let (x, t) = random_batch(&mut rng, model.config.steps(), batch);
    let (y, cache) = model.forward(&x.view(), batch, Mode::Train).unwrap();
    let (_, dy) = mse_loss(&y.view(), &t.view()).unwrap();
    let grads = model.backward(&cache, &dy.view()).unwrap();

    let names: Vec<String> = model.tensors().iter().map(|t| t.name.clone()).collect();
    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    for (ti, name) in names.iter().enumerate() {
        let len = grads.tensors[ti].len();
        for j in 0..len {
            let orig = model.tensors_mut()[ti][j];
            model.tensors_mut()[ti][j] = orig + h;
            let lp = loss(&model, &x, &t, batch);
            model.tensors_mut()[ti][j] = orig - h;
            let lm = loss(&model, &x, &t, batch);
            model.tensors_mut()[ti][j] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let err = (grads.tensors[ti][j] - fd).abs() / fd.abs().max(1e-8);
            if err > worst.0 {
                worst = (err, format!("{name}[{j}] analytic {} fd {fd}", grads.tensors[ti][j]));
            }
        }
    }
    worst
}

