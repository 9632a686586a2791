//! End-to-end desk-scale studies: the ordering ablation, the sequence-length
//! comparison and the label-fraction study on multi-part shapes.

use std::fmt::Write as _;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::datagen::{generate_shape, to_unit_cube, ShapeKind, ShapeSpec};
use crate::downstream::{label_fraction_study, ClassifierConfig, ClassifierTrainConfig, FractionResult};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::{extract_features, FeatureMatrix};
use crate::model::{ModelConfig, MortonNet};
use crate::morton::{OrderingScheme, QuantSpec};
use crate::neighborhood::build_default_index;
use crate::rng;
use crate::sequence::{generate_for_centers, normalize_all, SequenceGenConfig, TrainingSample};
use crate::train::{eval_accuracy, split_train_val, train_loop, TrainConfig};

/// `count` distinct indices below `n`, seeded, ascending.
pub fn sample_centers(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    if count < n {
        all.shuffle(&mut rng::stream(seed, &[0xce47]));
        all.truncate(count);
        all.sort_unstable();
    }
    all
}

/// Normalized samples for a subset of centers of one cloud.
pub fn samples_for(
    cloud: &PointCloud,
    cfg: &SequenceGenConfig,
    centers: &[usize],
) -> Result<Vec<TrainingSample>> {
    let index = build_default_index(cloud)?;
    let spec = QuantSpec::for_cloud(cloud, 16)?;
    let set = generate_for_centers(cloud, cfg, &index, &spec, centers, Execution::Parallel)?;
    normalize_all(cloud, &set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub shape: ShapeKind,
    pub n_points: usize,
    pub noise_sigma: f64,
    /// Seed of the training cloud; the held-out cloud uses `cloud_seed + 1`.
    pub cloud_seed: u64,
    /// Rescale the clouds to `[0, 1]³` so ρ is a fraction of extent.
    pub unit_cube: bool,
    pub k: usize,
    pub m: usize,
    pub train_centers: usize,
    pub test_centers: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub schemes: Vec<OrderingScheme>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            shape: ShapeKind::Sphere,
            n_points: 20_000,
            noise_sigma: 0.0,
            cloud_seed: 1,
            unit_cube: true,
            k: 16,
            m: 5,
            train_centers: 800,
            test_centers: 400,
            model: ModelConfig {
                k: 16,
                enc_width: 32,
                hidden: 64,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 15,
                ..TrainConfig::default()
            },
            schemes: vec![
                OrderingScheme::Morton,
                OrderingScheme::Random { seed: 0 },
                OrderingScheme::CoordX,
                OrderingScheme::CoordY,
                OrderingScheme::CoordZ,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub scheme: OrderingScheme,
    pub k: usize,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub best_val_loss: f64,
    /// ρ-accuracy on the held-out cloud.
    pub test_accuracy: f64,
}

struct Clouds {
    train: PointCloud,
    test: PointCloud,
}

fn ablation_clouds(cfg: &AblationConfig) -> Result<Clouds> {
    let spec = |seed| ShapeSpec {
        kind: cfg.shape,
        n_points: cfg.n_points,
        noise_sigma: cfg.noise_sigma,
        seed,
    };
    let make = |seed| -> Result<PointCloud> {
        let c = generate_shape(&spec(seed))?.cloud;
        Ok(if cfg.unit_cube { to_unit_cube(&c) } else { c })
    };
    Ok(Clouds {
        train: make(cfg.cloud_seed)?,
        test: make(cfg.cloud_seed + 1)?,
    })
}

/// Trains one model for `(scheme, k)` at the shared budget and scores it
/// on the held-out cloud.
fn ablation_run(clouds: &Clouds, cfg: &AblationConfig, scheme: OrderingScheme, k: usize) -> Result<AblationRow> {
    let seq = SequenceGenConfig {
        k,
        m: cfg.m,
        scheme,
        seed: cfg.train.seed,
    };
    let train_c = sample_centers(clouds.train.len(), cfg.train_centers, cfg.train.seed);
    let test_c = sample_centers(clouds.test.len(), cfg.test_centers, cfg.train.seed ^ 1);
    let samples = samples_for(&clouds.train, &seq, &train_c)?;
    let test = samples_for(&clouds.test, &seq, &test_c)?;
    let (train, val) = split_train_val(&samples, cfg.train.val_fraction, cfg.train.seed)?;
    let model = MortonNet::new(ModelConfig { k, ..cfg.model })?;
    let out = train_loop(&train, &val, model, &cfg.train)?;
    Ok(AblationRow {
        scheme,
        k,
        train_sequences: train.len(),
        test_sequences: test.len(),
        best_val_loss: out.best.val_loss,
        test_accuracy: eval_accuracy(&out.best.model, &test, cfg.train.rho)?,
    })
}

/// One row per ordering scheme, all with identical data and budget.
pub fn run_ordering_ablation(cfg: &AblationConfig) -> Result<Vec<AblationRow>> {
    let clouds = ablation_clouds(cfg)?;
    cfg.schemes
        .iter()
        .map(|&s| ablation_run(&clouds, cfg, s, cfg.k))
        .collect()
}

/// Morton ordering at each sequence length, otherwise as the ablation.
pub fn run_length_study(cfg: &AblationConfig, ks: &[usize]) -> Result<Vec<AblationRow>> {
    let clouds = ablation_clouds(cfg)?;
    ks.iter()
        .map(|&k| ablation_run(&clouds, cfg, OrderingScheme::Morton, k))
        .collect()
}

pub fn ablation_table_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("scheme,k,train_sequences,test_sequences,best_val_loss,test_accuracy\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:e},{:.6}",
            r.scheme, r.k, r.train_sequences, r.test_sequences, r.best_val_loss, r.test_accuracy
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelStudyConfig {
    pub shape: ShapeKind,
    pub train_shapes: usize,
    pub test_shapes: usize,
    pub points_per_shape: usize,
    pub noise_sigma: f64,
    /// Apply a random rotation to every shape.
    pub random_pose: bool,
    pub shape_seed: u64,
    pub k: usize,
    pub m: usize,
    /// Sequence centers per training shape for self-supervised training.
    pub pretrain_centers: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub classifier: ClassifierTrainConfig,
    pub fractions: Vec<f64>,
}

impl Default for LabelStudyConfig {
    fn default() -> Self {
        Self {
            shape: ShapeKind::Composite,
            train_shapes: 4,
            test_shapes: 2,
            points_per_shape: 2000,
            noise_sigma: 0.0,
            random_pose: true,
            shape_seed: 100,
            k: 16,
            m: 5,
            pretrain_centers: 400,
            model: ModelConfig {
                k: 16,
                enc_width: 32,
                hidden: 64,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 15,
                ..TrainConfig::default()
            },
            classifier: ClassifierTrainConfig::default(),
            fractions: vec![1.0, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStudyRow {
    /// `"morton"` or `"xyz"`.
    pub features: String,
    pub result: FractionResult,
}

/// Everything the label study computes before the classifiers.
pub struct LabelStudyData {
    pub clouds: Vec<PointCloud>,
    pub model: MortonNet,
    pub morton: FeatureMatrix,
    pub xyz: FeatureMatrix,
    pub labels: Vec<i64>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

pub fn prepare_label_study(cfg: &LabelStudyConfig) -> Result<LabelStudyData> {
    let total = cfg.train_shapes + cfg.test_shapes;
    if cfg.train_shapes == 0 || cfg.test_shapes == 0 {
        return Err(Error::InvalidConfig("need at least one training and one test shape".into()));
    }
    let clouds: Vec<PointCloud> = (0..total)
        .map(|i| {
            let spec = ShapeSpec {
                kind: cfg.shape,
                n_points: cfg.points_per_shape,
                noise_sigma: cfg.noise_sigma,
                seed: cfg.shape_seed + i as u64,
            };
            let g = generate_shape(&spec)?;
            if cfg.random_pose {
                crate::datagen::random_pose(&g.cloud, spec.seed)
            } else {
                Ok(g.cloud)
            }
        })
        .collect::<Result<_>>()?;
    let seq = SequenceGenConfig {
        k: cfg.k,
        m: cfg.m,
        scheme: OrderingScheme::Morton,
        seed: cfg.train.seed,
    };
    let mut samples = Vec::new();
    for (i, c) in clouds[..cfg.train_shapes].iter().enumerate() {
        let centers = sample_centers(c.len(), cfg.pretrain_centers, cfg.train.seed + i as u64);
        let mut s = samples_for(c, &seq, &centers)?;
        // Keep center ids unique across shapes for the grouped split.
        for x in &mut s {
            x.center_index += i * cfg.points_per_shape;
        }
        samples.extend(s);
    }
    let (train, val) = split_train_val(&samples, cfg.train.val_fraction, cfg.train.seed)?;
    let model = train_loop(&train, &val, MortonNet::new(ModelConfig { k: cfg.k, ..cfg.model })?, &cfg.train)?
        .best
        .model;

    let mut blocks = Vec::with_capacity(total);
    let mut valid = Vec::new();
    let mut labels = Vec::new();
    for c in &clouds {
        let index = build_default_index(c)?;
        let spec = QuantSpec::for_cloud(c, 16)?;
        let f = extract_features(&model, c, &seq, &index, &spec)?;
        blocks.push(f.data);
        valid.extend(f.valid);
        labels.extend(c.labels.clone().ok_or_else(|| Error::InvalidConfig("shapes must carry labels".into()))?);
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let morton = FeatureMatrix {
        data: concatenate(Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))?,
        valid: valid.clone(),
    };
    let xyz_rows: Vec<[f64; 3]> = clouds.iter().flat_map(|c| c.points.iter().map(|p| p.to_array())).collect();
    let xyz = FeatureMatrix {
        data: Array2::from_shape_fn((xyz_rows.len(), 3), |(i, a)| xyz_rows[i][a]),
        valid,
    };
    let split = cfg.train_shapes * cfg.points_per_shape;
    Ok(LabelStudyData {
        clouds,
        model,
        morton,
        xyz,
        labels,
        train_rows: (0..split).collect(),
        test_rows: (split..total * cfg.points_per_shape).collect(),
    })
}

/// Label-fraction tables for Morton features and for raw coordinates fed
/// to a classifier with the same layer widths.
pub fn run_label_study(cfg: &LabelStudyConfig) -> Result<Vec<LabelStudyRow>> {
    let d = prepare_label_study(cfg)?;
    let classes = cfg.shape.num_parts();
    let morton_cfg = ClassifierConfig::new(d.morton.dim(), classes);
    let xyz_cfg = ClassifierConfig {
        in_dim: 3,
        ..morton_cfg
    };
    let mut rows = Vec::new();
    for (name, feats, ccfg) in [("morton", &d.morton, morton_cfg), ("xyz", &d.xyz, xyz_cfg)] {
        for r in label_fraction_study(feats, &d.labels, &d.train_rows, &d.test_rows, &cfg.fractions, &ccfg, &cfg.classifier)? {
            rows.push(LabelStudyRow {
                features: name.to_string(),
                result: r,
            });
        }
    }
    Ok(rows)
}

pub fn label_study_csv(rows: &[LabelStudyRow]) -> String {
    let mut s = String::from("features,fraction,train_points,miou,macc,oa\n");
    for r in rows {
        let x = &r.result;
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6}",
            r.features, x.fraction, x.train_points, x.miou, x.macc, x.oa
        );
    }
    s
}
