use std::path::Path;

use probegen::models::{init_inr, model_forward, ArchitectureSpec, ProbedModel};
use probegen::rng::seeded;
use probegen::zoo::*;
use probegen::Error;

fn idx_images(n: u32, h: u32, w: u32, pixels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [0x0803u32, n, h, w] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend_from_slice(pixels);
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [0x0801u32, labels.len() as u32] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend_from_slice(labels);
    b
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, bytes).unwrap();
    p
}

#[test]
fn idx_pair_parses() {
    let dir = tempfile::tempdir().unwrap();
    let img = write(
        dir.path(),
        "img",
        &idx_images(2, 2, 2, &[0, 255, 255, 0, 0, 0, 255, 255]),
    );
    let lab = write(dir.path(), "lab", &idx_labels(&[3, 7]));
    let ds = ingest_idx(&img, &lab).unwrap();
    assert_eq!(ds.images.shape(), &[2, 1, 2, 2]);
    assert_eq!(ds.images.data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    assert_eq!(ds.labels, vec![3, 7]);
}

#[test]
fn idx_errors() {
    let dir = tempfile::tempdir().unwrap();
    let lab = write(dir.path(), "lab", &idx_labels(&[1]));
    let mut wrong = idx_images(1, 1, 1, &[9]);
    wrong[3] = 0x01;
    let bad = write(dir.path(), "bad", &wrong);
    assert!(matches!(ingest_idx(&bad, &lab), Err(Error::Format { .. })));

    let truncated = write(dir.path(), "trunc", &idx_images(1, 2, 2, &[1, 2, 3]));
    assert!(matches!(
        ingest_idx(&truncated, &lab),
        Err(Error::Format { .. })
    ));

    let two = write(dir.path(), "two", &idx_images(2, 1, 1, &[1, 2]));
    assert!(matches!(ingest_idx(&two, &lab), Err(Error::Data(_))));
}

#[test]
fn idx_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let img = write(dir.path(), "img", &idx_images(0, 28, 28, &[]));
    let lab = write(dir.path(), "lab", &idx_labels(&[]));
    let ds = ingest_idx(&img, &lab).unwrap();
    assert!(ds.is_empty());
    assert_eq!(ds.images.shape(), &[0, 1, 28, 28]);
}

fn cifar_record(label: u8, r: u8, g: u8, b: u8) -> Vec<u8> {
    let mut rec = vec![label];
    for v in [r, g, b] {
        rec.extend(std::iter::repeat_n(v, 1024));
    }
    rec
}

#[test]
fn cifar_record_parses() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "batch.bin", &cifar_record(7, 255, 255, 255));
    let ds = ingest_cifar_binary(&[&p], false).unwrap();
    assert_eq!(ds.images.shape(), &[1, 3, 32, 32]);
    assert!(ds.images.data().iter().all(|&v| v == 1.0));
    assert_eq!(ds.labels, vec![7]);

    let p = write(dir.path(), "gray.bin", &cifar_record(2, 128, 128, 128));
    let ds = ingest_cifar_binary(&[&p], true).unwrap();
    assert_eq!(ds.images.shape(), &[1, 1, 32, 32]);
    assert!(ds.images.data().iter().all(|&v| v == 128.0 / 255.0));
}

#[test]
fn cifar_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut rec = cifar_record(1, 0, 0, 0);
    rec.push(0);
    let p = write(dir.path(), "long.bin", &rec);
    assert!(matches!(
        ingest_cifar_binary(&[&p], false),
        Err(Error::Format { .. })
    ));
    let p = write(dir.path(), "label.bin", &cifar_record(10, 0, 0, 0));
    assert!(ingest_cifar_binary(&[&p], false).is_err());
}

#[test]
fn constant_image_inr_fit() {
    let cfg = InrFitConfig {
        steps: 300,
        ..Default::default()
    };
    let (w, mse) = fit_inr(&[0.5; 64], 8, 8, &cfg, 0).unwrap();
    assert!(mse < 1e-3);
    let m = ProbedModel::new("c", cfg.spec(), w).unwrap();
    let out = model_forward(&m, &coordinate_grid(8, 8)).unwrap();
    assert!(
        out.data().iter().all(|v| (v - 0.5).abs() <= 0.02),
        "{:?}",
        out.data()
    );
}

#[test]
fn empty_zoos_are_valid() {
    let ds = synthetic_glyphs(10, 8, 0).unwrap();
    let zoo = generate_inr_zoo(&ds, 0, &InrFitConfig::default(), 0).unwrap();
    assert!(zoo.is_empty());
    zoo.validate().unwrap();
    let zoo = generate_cnn_zoo(&ds, &ds, 0, &CnnZooConfig::default(), 0).unwrap();
    assert!(zoo.is_empty());
    let dir = tempfile::tempdir().unwrap();
    save_zoo(&zoo, dir.path()).unwrap();
    assert_eq!(load_zoo(dir.path()).unwrap(), zoo);
}

#[test]
fn untrained_cnns_score_chance() {
    let ds = synthetic_glyphs(300, 8, 3).unwrap();
    let (train, test) = ds.split_at(100);
    let cfg = CnnZooConfig {
        epochs: (0, 0),
        ..Default::default()
    };
    let zoo = generate_cnn_zoo(&train, &test, 6, &cfg, 1).unwrap();
    assert_eq!(zoo.len(), 6);
    for r in &zoo.records {
        assert!(
            (r.label - 0.1).abs() <= 0.05,
            "{} scored {}",
            r.model.id,
            r.label
        );
    }
}

#[test]
fn inr_zoo_labels_and_fit_quality() {
    let ds = synthetic_glyphs(6, 12, 0).unwrap();
    let cfg = InrFitConfig {
        steps: 150,
        ..Default::default()
    };
    let zoo = generate_inr_zoo(&ds, 6, &cfg, 4).unwrap();
    assert_eq!(zoo.len() + zoo.excluded.len(), 6);
    for r in &zoo.records {
        let i = r.meta.source_index.unwrap();
        assert_eq!(r.class(), ds.labels[i]);
        assert!(r.meta.fit_mse.unwrap() <= cfg.mse_ceiling);
    }
    assert_eq!(zoo, generate_inr_zoo(&ds, 6, &cfg, 4).unwrap());
}

#[test]
fn failed_fits_are_excluded() {
    let ds = synthetic_glyphs(3, 12, 0).unwrap();
    let cfg = InrFitConfig {
        steps: 0,
        mse_ceiling: 1e-6,
        ..Default::default()
    };
    let zoo = generate_inr_zoo(&ds, 3, &cfg, 0).unwrap();
    assert!(zoo.is_empty());
    assert_eq!(zoo.excluded.len(), 3);
}

fn small_zoo(n: usize) -> ModelZoo {
    let spec = ArchitectureSpec::default_inr();
    let splits = assign_splits(n, 0);
    let mut zoo = ModelZoo::empty(Family::Inr, 9, 10);
    for (i, split) in splits.into_iter().enumerate() {
        let w = init_inr(&spec, &mut seeded(i as u64));
        zoo.records.push(ZooRecord {
            model: ProbedModel::new(format!("m{}", i), spec.clone(), w).unwrap(),
            label: (i % 10) as f64,
            split,
            meta: RecordMeta {
                fit_mse: Some(0.001 * i as f64),
                ..Default::default()
            },
        });
    }
    zoo
}

#[test]
fn zoo_round_trip_is_exact() {
    let zoo = small_zoo(3);
    let dir = tempfile::tempdir().unwrap();
    save_zoo(&zoo, dir.path()).unwrap();
    let back = load_zoo(dir.path()).unwrap();
    assert_eq!(back, zoo);
    for (a, b) in back.records.iter().zip(&zoo.records) {
        assert_eq!(
            weight_bytes(&a.model.weights),
            weight_bytes(&b.model.weights)
        );
    }
    assert_eq!(verify_zoo(dir.path()).unwrap(), 3);
}

#[test]
fn cnn_zoo_round_trip_keeps_recipes() {
    let ds = synthetic_glyphs(80, 8, 3).unwrap();
    let (train, test) = ds.split_at(64);
    let cfg = CnnZooConfig {
        epochs: (1, 1),
        ..Default::default()
    };
    let zoo = generate_cnn_zoo(&train, &test, 2, &cfg, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_zoo(&zoo, dir.path()).unwrap();
    assert_eq!(load_zoo(dir.path()).unwrap(), zoo);
}

#[test]
fn corrupted_weight_file_is_named() {
    let zoo = small_zoo(3);
    let dir = tempfile::tempdir().unwrap();
    save_zoo(&zoo, dir.path()).unwrap();
    let target = dir.path().join("m1.pgzw");
    let mut bytes = std::fs::read(&target).unwrap();
    bytes[40] ^= 0x01;
    std::fs::write(&target, bytes).unwrap();
    match load_zoo(dir.path()) {
        Err(Error::Checksum { path, .. }) => assert!(path.ends_with("m1.pgzw")),
        other => panic!("expected checksum error, got {:?}", other),
    }
    assert!(matches!(
        verify_zoo(dir.path()),
        Err(Error::Checksum { .. })
    ));
}

#[test]
fn manifest_version_and_task_are_checked() {
    let zoo = small_zoo(2);
    let dir = tempfile::tempdir().unwrap();
    save_zoo(&zoo, dir.path()).unwrap();
    let manifest = dir.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest).unwrap();

    std::fs::write(
        &manifest,
        text.replace("version = \"1\"", "version = \"7\""),
    )
    .unwrap();
    match load_zoo(dir.path()) {
        Err(Error::Version { expected, found }) => {
            assert_eq!((expected.as_str(), found.as_str()), ("1", "7"))
        }
        other => panic!("expected version error, got {:?}", other),
    }

    std::fs::write(
        &manifest,
        text.replace("task = \"class-prediction\"", "task = \"segmentation\""),
    )
    .unwrap();
    assert!(matches!(load_zoo(dir.path()), Err(Error::Format { .. })));
}

#[test]
fn regression_labels_must_be_accuracies() {
    let ds = synthetic_glyphs(80, 8, 3).unwrap();
    let (train, test) = ds.split_at(64);
    let mut zoo = generate_cnn_zoo(&train, &test, 1, &CnnZooConfig::default(), 5).unwrap();
    zoo.records[0].label = 1.5;
    assert!(zoo.validate().is_err());
}
