use std::path::Path;

use mortonnet::features::FeatureMatrix;
use mortonnet::io::*;
use mortonnet::model::{ModelConfig, MortonNet};
use mortonnet::morton::{OrderingScheme, QuantSpec};
use mortonnet::neighborhood::build_default_index;
use mortonnet::sequence::{generate_sequences, normalize_all, SequenceGenConfig};
use mortonnet::train::{Checkpoint, TrainConfig};
use mortonnet::{Point3, PointCloud};
use ndarray::Array2;
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        -1.0f64..1.0,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn xyz_round_trip_is_exact(
        pts in prop::collection::vec((finite(), finite(), finite()), 0..40),
        labeled in any::<bool>(),
    ) {
        let points: Vec<Point3> = pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect();
        let cloud = if labeled {
            let labels = (0..points.len() as i64).map(|i| i * 7 - 20).collect();
            PointCloud::with_labels(points, labels).unwrap()
        } else {
            PointCloud::new(points)
        };
        let text = format_xyz(&cloud, Some("{\"a\":1}"));
        let back = parse_xyz(&text, Path::new("mem")).unwrap();
        prop_assert_eq!(back.points.len(), cloud.points.len());
        for (a, b) in back.points.iter().zip(&cloud.points) {
            for ax in 0..3 {
                prop_assert_eq!(a.axis(ax).to_bits(), b.axis(ax).to_bits());
            }
        }
        if !cloud.is_empty() {
            prop_assert_eq!(back.labels, cloud.labels);
        }
    }

    #[test]
    fn container_round_trip(
        dims in prop::collection::vec(0usize..4, 0..4),
        seed in any::<u64>(),
        name in "[a-z.]{1,12}",
    ) {
        let n: usize = dims.iter().product();
        let f: Vec<f64> = (0..n).map(|i| (i as f64 + seed as f64).sin()).collect();
        let g: Vec<f32> = f.iter().map(|&v| v as f32).collect();
        let h: Vec<i64> = (0..n as i64).map(|i| i.wrapping_mul(seed as i64)).collect();
        let mut c = TensorContainer::new();
        c.push_f64(format!("{name}/f"), dims.clone(), f).unwrap();
        c.push(format!("{name}/g"), dims.clone(), TensorData::F32(g)).unwrap();
        c.push_i64(format!("{name}/h"), dims.clone(), h).unwrap();
        c.push_text("text", "héllo").unwrap();
        let bytes = c.encode();
        let back = TensorContainer::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.encode(), bytes);
        prop_assert_eq!(back.text("text").unwrap(), "héllo");
    }
}

#[test]
fn empty_and_zero_sized_tensors() {
    let mut c = TensorContainer::new();
    c.push_f64("empty", vec![0, 5], vec![]).unwrap();
    c.push_i64("scalar", vec![], vec![42]).unwrap();
    let back = TensorContainer::decode(&c.encode()).unwrap();
    assert_eq!(back.f64s("empty").unwrap(), (&[0usize, 5][..], &[][..]));
    assert_eq!(back.scalar_i64("scalar").unwrap(), 42);
    assert!(back.f64s("scalar").is_err());
    assert!(back.get("missing").is_none());
    assert!(TensorContainer::decode(&TensorContainer::new().encode()).unwrap().tensors.is_empty());
}

#[test]
fn trailing_bytes_rejected() {
    let mut bytes = TensorContainer::new().encode();
    bytes.push(0);
    assert!(TensorContainer::decode(&bytes).is_err());
}

#[test]
fn atomic_write_replaces_and_leaves_no_temporaries() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("out.bin");
    atomic_write(&p, b"first").unwrap();
    atomic_write(&p, b"second").unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), b"second");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    assert!(atomic_write(&dir.path().join("missing/x"), b"").is_err());
}

#[test]
fn xyz_file_round_trip_with_echo() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.xyz");
    let cloud = PointCloud::with_labels(vec![Point3::new(0.1, -2.5, 1e-300)], vec![3]).unwrap();
    write_xyz(&p, &cloud, Some("{\"seed\":1}")).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("# config: {\"seed\":1}\n"));
    assert_eq!(read_xyz(&p).unwrap(), cloud);
    assert!(read_xyz(&dir.path().join("nope.xyz")).is_err());
}

fn small_dataset() -> (PointCloud, SequenceDataset) {
    let c = 1.0 / 64.0;
    let cloud = PointCloud::new(
        (0..120)
            .map(|i| Point3::new((i % 5) as f64 * c, ((i / 5) % 6) as f64 * c, (i / 30) as f64 * c))
            .collect(),
    );
    let cfg = SequenceGenConfig {
        k: 6,
        m: 2,
        scheme: OrderingScheme::Morton,
        seed: 3,
    };
    let idx = build_default_index(&cloud).unwrap();
    let spec = QuantSpec::for_cloud(&cloud, 16).unwrap();
    let set = generate_sequences(&cloud, &cfg, &idx, &spec).unwrap();
    let samples = normalize_all(&cloud, &set).unwrap();
    (cloud, SequenceDataset { config: cfg, set, samples })
}

#[test]
fn sequence_dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.mseq");
    let (_, ds) = small_dataset();
    assert!(!ds.set.skipped.is_empty());
    save_sequences(&p, &ds, "{}").unwrap();
    assert_eq!(load_sequences(&p).unwrap(), ds);
    assert_eq!(load_container(&p).unwrap().text(CONFIG_ECHO).unwrap(), "{}");
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.mseq");
    let mut model = MortonNet::new(ModelConfig {
        k: 6,
        enc_width: 8,
        hidden: 12,
        ..Default::default()
    })
    .unwrap();
    model.encoder[0].bn.running_mean.fill(0.25);
    let ckpt = Checkpoint {
        model,
        epoch: 3,
        val_loss: 0.125,
        config: TrainConfig::default(),
        rng_seed: 9,
    };
    save_checkpoint(&p, &ckpt, "{\"x\":2}").unwrap();
    let back = load_checkpoint(&p).unwrap();
    assert_eq!(back, ckpt);
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_checkpoint(&p).is_err());
}

#[test]
fn features_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.mseq");
    let fm = FeatureMatrix {
        data: Array2::from_shape_fn((4, 3), |(i, j)| i as f64 - j as f64 * 0.5),
        valid: vec![true, false, true, true],
    };
    save_features(&p, &fm, Some(&[0, 1, 1, 2]), "{}").unwrap();
    let (back, labels) = load_features(&p).unwrap();
    assert_eq!(back, fm);
    assert_eq!(labels, Some(vec![0, 1, 1, 2]));
    save_features(&p, &fm, None, "{}").unwrap();
    assert_eq!(load_features(&p).unwrap().1, None);
}
