use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use mortonnet::datagen::{generate_shape, random_pose, ShapeSpec};
use mortonnet::downstream::{evaluate_classifier, train_classifier, ClassifierConfig};
use mortonnet::experiments::{
    ablation_table_csv, label_study_csv, run_label_study, run_length_study, run_ordering_ablation,
    sample_centers, AblationConfig, LabelStudyConfig,
};
use mortonnet::features::extract_features;
use mortonnet::io::{
    atomic_write, load_checkpoint, load_features, load_sequences, load_train_state, log_csv, read_xyz,
    save_checkpoint, save_features, save_sequences, save_train_state, write_xyz, SequenceDataset,
};
use mortonnet::model::MortonNet;
use mortonnet::morton::QuantSpec;
use mortonnet::neighborhood::build_default_index;
use mortonnet::rng;
use mortonnet::sequence::{generate_for_centers, normalize_all, SequenceGenConfig};
use mortonnet::train::{evaluate, resume_with_hook, split_train_val, TrainState};
use mortonnet::Execution;
use rand::seq::SliceRandom;

use crate::config::{self, ClassifyConfig, EvalConfig, ExtractConfig, GenConfig, SequencesConfig, TrainCmdConfig};
use crate::{AblateArgs, ClassifyArgs, Cli, Command, EvalArgs, ExtractArgs, GenArgs, LabelStudyArgs, SequencesArgs, TrainArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let cfg_path = cli.config.as_deref();
    match &cli.command {
        Command::Gen(a) => gen(a, cfg_path, cli.seed),
        Command::Sequences(a) => sequences(a, cfg_path, cli.seed),
        Command::Train(a) => train(a, cfg_path, cli.seed),
        Command::Eval(a) => eval(a, cfg_path),
        Command::Extract(a) => extract(a, cfg_path, cli.seed),
        Command::Classify(a) => classify(a, cfg_path, cli.seed),
        Command::AblateOrder(a) => ablate(a, cfg_path, cli.seed),
        Command::LabelStudy(a) => label_study(a, cfg_path, cli.seed),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn gen(a: &GenArgs, cfg_path: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut cfg: GenConfig = config::load(cfg_path)?;
    if let Some(s) = &a.shape {
        cfg.shape = s.parse()?;
    }
    if let Some(n) = a.n_points {
        cfg.n_points = n;
    }
    if let Some(v) = a.noise {
        cfg.noise_sigma = v;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let spec = ShapeSpec {
        kind: cfg.shape,
        n_points: cfg.n_points,
        noise_sigma: cfg.noise_sigma,
        seed: cfg.seed,
    };
    let mut cloud = generate_shape(&spec)?.cloud;
    if cfg.random_pose {
        cloud = random_pose(&cloud, cfg.seed)?;
    }
    write_xyz(&a.out, &cloud, Some(&config::echo("gen", &cfg)?))?;
    println!("wrote {} points to {}", cloud.len(), a.out.display());
    Ok(())
}

fn sequences(a: &SequencesArgs, cfg_path: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut cfg: SequencesConfig = config::load(cfg_path)?;
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(m) = a.m {
        cfg.m = m;
    }
    if let Some(s) = &a.scheme {
        cfg.scheme = s.parse()?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let cloud = read_xyz(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let gen_cfg = SequenceGenConfig {
        k: cfg.k,
        m: cfg.m,
        scheme: cfg.scheme,
        seed: cfg.seed,
    };
    let index = build_default_index(&cloud)?;
    let spec = QuantSpec::for_cloud(&cloud, cfg.bits)?;
    let centers = match cfg.centers {
        Some(c) => sample_centers(cloud.len(), c, cfg.seed),
        None => (0..cloud.len()).collect(),
    };
    let set = generate_for_centers(&cloud, &gen_cfg, &index, &spec, &centers, Execution::Parallel)?;
    let samples = normalize_all(&cloud, &set)?;
    let ds = SequenceDataset {
        config: gen_cfg,
        set,
        samples,
    };
    save_sequences(&a.out, &ds, &config::echo("sequences", &cfg)?)?;
    println!(
        "wrote {} sequences ({} centers skipped) to {}",
        ds.samples.len(),
        ds.set.skipped.len(),
        a.out.display()
    );
    Ok(())
}

fn train(a: &TrainArgs, cfg_path: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut cfg: TrainCmdConfig = config::load(cfg_path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
        cfg.model.init_seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let ds = load_sequences(&a.data)?;
    cfg.model.k = ds.config.k;
    let echo = config::echo("train", &cfg)?;
    let (train_set, val_set) = split_train_val(&ds.samples, cfg.train.val_fraction, cfg.train.seed)?;
    let state = match &a.resume {
        Some(p) => {
            let mut s = load_train_state(p)?;
            ensure!(
                s.model.config == cfg.model,
                "checkpoint model {:?} is incompatible with the configured model {:?}",
                s.model.config,
                cfg.model
            );
            let mut stored = s.config;
            stored.epochs = cfg.train.epochs;
            ensure!(stored == cfg.train, "checkpoint training config differs from the configured one");
            s.config = cfg.train;
            s
        }
        None => TrainState::new(MortonNet::new(cfg.model)?, cfg.train)?,
    };
    let state_dir = a.state_dir.clone();
    if let Some(d) = &state_dir {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let outcome = resume_with_hook(state, &train_set, &val_set, cfg.train.epochs, |s| {
        if let Some(d) = &state_dir {
            save_train_state(&d.join(format!("epoch_{:04}.mseq", s.epoch)), s, &echo)?;
        }
        let e = s.log.last().expect("hook runs after an epoch");
        eprintln!(
            "epoch {:>4}  train {:.6e}  val {:.6e}  lr {:.3e}  val_rho_acc {:.4}",
            e.epoch, e.train_loss, e.val_loss, e.lr, e.val_rho_acc
        );
        Ok(())
    })?;
    save_checkpoint(&a.out, &outcome.best, &echo)?;
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    write_text(&log_path, &log_csv(&outcome.log, &echo))?;
    println!(
        "best epoch {} val_loss {:e}; checkpoint {}",
        outcome.best.epoch,
        outcome.best.val_loss,
        a.out.display()
    );
    Ok(())
}

fn eval(a: &EvalArgs, cfg_path: Option<&Path>) -> Result<()> {
    let mut cfg: EvalConfig = config::load(cfg_path)?;
    if let Some(r) = a.rho {
        cfg.rho = r;
    }
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let ds = load_sequences(&a.data)?;
    ensure!(
        ckpt.model.config.k == ds.config.k,
        "checkpoint expects k = {}, dataset has k = {}",
        ckpt.model.config.k,
        ds.config.k
    );
    ensure!(!ds.samples.is_empty(), "dataset holds no sequences");
    let (loss, acc) = evaluate(&ckpt.model, &ds.samples, cfg.rho)?;
    println!("accuracy {acc:.6}");
    println!("loss {loss:e}");
    Ok(())
}

fn extract(a: &ExtractArgs, cfg_path: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut cfg: ExtractConfig = config::load(cfg_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let cloud = read_xyz(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let seq = SequenceGenConfig {
        k: ckpt.model.config.k,
        m: cfg.m,
        scheme: cfg.scheme,
        seed: cfg.seed,
    };
    let index = build_default_index(&cloud)?;
    let spec = QuantSpec::for_cloud(&cloud, cfg.bits)?;
    let fm = extract_features(&ckpt.model, &cloud, &seq, &index, &spec)?;
    save_features(&a.out, &fm, cloud.labels.as_deref(), &config::echo("extract", &cfg)?)?;
    println!(
        "wrote {} x {} features ({} valid) to {}",
        fm.len(),
        fm.dim(),
        fm.valid_count(),
        a.out.display()
    );
    Ok(())
}

fn classify(a: &ClassifyArgs, cfg_path: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut cfg: ClassifyConfig = config::load(cfg_path)?;
    if let Some(s) = seed {
        cfg.classifier.seed = s;
    }
    let (train_f, train_l) = load_features(&a.features)?;
    let Some(train_l) = train_l else {
        bail!("{} carries no labels", a.features.display());
    };
    let valid = train_f.valid_indices();
    let (test_f, test_l, train_rows, test_rows) = match &a.test {
        Some(p) => {
            let (f, l) = load_features(p)?;
            let Some(l) = l else {
                bail!("{} carries no labels", p.display());
            };
            let rows = (0..f.len()).collect();
            (f, l, valid, rows)
        }
        None => {
            ensure!(
                cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0,
                "test_fraction must lie in (0, 1)"
            );
            let mut shuffled = valid.clone();
            shuffled.shuffle(&mut rng::stream(cfg.classifier.seed, &[0x7e57]));
            let n_test = ((shuffled.len() as f64 * cfg.test_fraction).round() as usize).clamp(1, shuffled.len().max(2) - 1);
            let mut test_rows = shuffled[..n_test].to_vec();
            let mut train_rows = shuffled[n_test..].to_vec();
            test_rows.sort_unstable();
            train_rows.sort_unstable();
            (train_f.clone(), train_l.clone(), train_rows, test_rows)
        }
    };
    ensure!(
        test_f.dim() == train_f.dim(),
        "train and test features differ in width ({} vs {})",
        train_f.dim(),
        test_f.dim()
    );
    let classes = match cfg.num_classes {
        Some(c) => c,
        None => train_l.iter().chain(&test_l).copied().max().map_or(0, |m| m.max(0) as usize + 1),
    };
    let ccfg = ClassifierConfig {
        init_seed: cfg.classifier.seed,
        ..ClassifierConfig::new(train_f.dim(), classes)
    };
    let (model, _) = train_classifier(&train_f, &train_l, Some(&train_rows), &ccfg, &cfg.classifier)?;
    let (cm, m) = evaluate_classifier(&model, &test_f, &test_l, &test_rows)?;
    let echo = config::echo("classify", &cfg)?;
    let mut csv = format!("# config: {echo}\nmetric,value\n");
    let _ = writeln!(csv, "miou,{:.6}\nmacc,{:.6}\noa,{:.6}", m.miou, m.macc, m.oa);
    for (c, iou) in m.per_class_iou.iter().enumerate() {
        match iou {
            Some(v) => {
                let _ = writeln!(csv, "iou_class_{c},{v:.6}");
            }
            None => {
                let _ = writeln!(csv, "iou_class_{c},");
            }
        }
    }
    write_text(&a.out, &csv)?;
    write_text(&a.out.with_extension("confusion.csv"), &format!("# config: {echo}\n{}", cm.to_csv()))?;
    println!("mIoU {:.4}  mAcc {:.4}  OA {:.4}", m.miou, m.macc, m.oa);
    Ok(())
}

fn ablate(a: &AblateArgs, cfg_path: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut cfg: AblationConfig = config::load(cfg_path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
        cfg.model.init_seed = s;
    }
    let mut rows = run_ordering_ablation(&cfg)?;
    if !a.lengths.is_empty() {
        rows.extend(run_length_study(&cfg, &a.lengths)?);
    }
    let table = ablation_table_csv(&rows);
    write_text(&a.out, &format!("# config: {}\n{table}", config::echo("ablate-order", &cfg)?))?;
    print!("{table}");
    Ok(())
}

fn label_study(a: &LabelStudyArgs, cfg_path: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut cfg: LabelStudyConfig = config::load(cfg_path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
        cfg.model.init_seed = s;
        cfg.classifier.seed = s;
    }
    if !a.fractions.is_empty() {
        cfg.fractions = a.fractions.clone();
    }
    let rows = run_label_study(&cfg)?;
    let table = label_study_csv(&rows);
    write_text(&a.out, &format!("# config: {}\n{table}", config::echo("label-study", &cfg)?))?;
    print!("{table}");
    Ok(())
}
