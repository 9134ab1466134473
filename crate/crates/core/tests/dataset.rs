use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use ssnn::augment::AugmentPlan;
use ssnn::dataset::{
    build_dataset, fingerprint, load_dataset, save_dataset, series_hash, synthesize, synthesize_series, DatasetSpec, Split,
    SplitMode, SyntheticKind, SyntheticSpec,
};
use ssnn::signal::{series_to_images, StftConfig};
use ssnn::Error;

fn synth(dir: &Path, kind: SyntheticKind, per_class: usize, length: usize, seed: u64) {
    let spec = SyntheticSpec {
        kind,
        samples_per_class: per_class,
        length,
        noise_sigma: 0.5,
        seed,
    };
    synthesize(&spec, dir).unwrap();
}

fn spec(split: Split, mode: SplitMode, ratios: Vec<f64>, stft: StftConfig) -> DatasetSpec {
    DatasetSpec {
        class_names: Vec::new(),
        split,
        split_mode: mode,
        split_seed: 3,
        stft,
        augment: AugmentPlan::new(ratios),
        augment_seed: 3,
        positive_class: None,
    }
}

#[test]
fn univariate_build_counts_and_no_leakage() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), SyntheticKind::UnivariateBinary, 150, 128, 1);
    let s = spec(Split::TrainFraction(0.8), SplitMode::Random, vec![0.5, 0.6, 0.7], StftConfig::new(32, 24));
    let ds = build_dataset(dir.path(), &s).unwrap();
    assert_eq!((ds.train.len(), ds.test.len()), (960, 60));

    let train_hashes: HashSet<String> = ds.train.iter().map(|s| series_hash(&s.series)).collect();
    assert_eq!(train_hashes.len(), 240);
    assert!(ds.test.iter().all(|s| !train_hashes.contains(&series_hash(&s.series))));
    assert!(ds.test.iter().all(|s| s.provenance.variant_index == 0));

    let mut per_source: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for s in &ds.train {
        per_source.entry(&s.provenance.source_id).or_default().push(s.provenance.variant_index);
    }
    assert!(per_source.values().all(|v| v == &[0, 1, 2, 3]));
}

#[test]
fn test_images_are_unerased() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), SyntheticKind::UnivariateBinary, 5, 128, 2);
    let cfg = StftConfig::new(32, 24);
    let ds = build_dataset(dir.path(), &spec(Split::TrainPerClass(2), SplitMode::Sequential, vec![0.7], cfg)).unwrap();
    for s in &ds.test {
        assert_eq!(s.images, series_to_images(&s.series, &cfg).unwrap());
    }
    for s in ds.train.iter().filter(|s| s.provenance.variant_index == 0) {
        assert_eq!(s.images, series_to_images(&s.series, &cfg).unwrap());
    }
}

#[test]
fn multivariate_sequential_build() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), SyntheticKind::Multivariate4Class, 50, 128, 4);
    let s = spec(Split::TrainFraction(2.0 / 3.0), SplitMode::Sequential, vec![0.3, 0.4, 0.5, 0.6, 0.7], StftConfig::new(62, 56));
    let ds = build_dataset(dir.path(), &s).unwrap();
    assert_eq!((ds.train.len(), ds.test.len()), (792, 68));
    assert!(ds.train.iter().all(|s| s.images.len() == 9 && s.series.num_channels() == 9));
    assert_eq!(ds.class_names, vec!["burst", "normal", "shifted", "wobble"]);
}

#[test]
fn empty_plan_keeps_one_sample_per_source() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), SyntheticKind::UnivariateBinary, 10, 128, 5);
    let ds = build_dataset(dir.path(), &spec(Split::TrainPerClass(3), SplitMode::Random, vec![], StftConfig::new(32, 24))).unwrap();
    assert_eq!((ds.train.len(), ds.test.len()), (6, 14));
}

#[test]
fn builds_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), SyntheticKind::UnivariateBinary, 8, 128, 6);
    let s = spec(Split::TrainFraction(0.5), SplitMode::Random, vec![0.5], StftConfig::new(32, 24));
    let a = build_dataset(dir.path(), &s).unwrap();
    let b = build_dataset(dir.path(), &s).unwrap();
    assert_eq!(fingerprint(&a.train), fingerprint(&b.train));
    assert_eq!(fingerprint(&a.test), fingerprint(&b.test));
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    synth(&raw, SyntheticKind::UnivariateBinary, 4, 128, 7);
    let mut s = spec(Split::TrainPerClass(2), SplitMode::Sequential, vec![0.5], StftConfig::new(32, 24));
    s.positive_class = Some("modulated".into());
    let ds = build_dataset(&raw, &s).unwrap();
    assert_eq!(ds.positive_class, Some(0));
    let out = dir.path().join("processed");
    save_dataset(&out, &ds.class_names, ds.positive_class, &ds.train).unwrap();
    let back = load_dataset(&out).unwrap();
    assert_eq!(back.classes, ds.class_names);
    assert_eq!(back.positive_class, Some(0));
    assert_eq!(back.samples.len(), ds.train.len());
    for (a, b) in back.samples.iter().zip(&ds.train) {
        assert_eq!(a.images, b.images);
        assert_eq!(a.series.channels(), b.series.channels());
        assert_eq!((a.label, &a.provenance), (b.label, &b.provenance));
    }
    assert_eq!(fingerprint(&back.samples), fingerprint(&ds.train));
}

#[test]
fn load_errors() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    synth(&raw, SyntheticKind::UnivariateBinary, 3, 128, 8);
    let ds = build_dataset(&raw, &spec(Split::TrainPerClass(2), SplitMode::Sequential, vec![], StftConfig::new(32, 24))).unwrap();
    let out = dir.path().join("p");
    save_dataset(&out, &ds.class_names, None, &ds.test).unwrap();

    let manifest = out.join("manifest.json");
    let text = fs::read_to_string(&manifest).unwrap();
    let first_image = fs::read_dir(out.join("images")).unwrap().next().unwrap().unwrap().path();
    fs::remove_file(&first_image).unwrap();
    assert!(matches!(load_dataset(&out), Err(Error::MissingFile(p)) if p == first_image));

    fs::write(&manifest, text.replace("\"format_version\": 1", "\"format_version\": 2")).unwrap();
    assert!(matches!(load_dataset(&out), Err(Error::Version { found: 2, expected: 1 })));

    fs::write(&manifest, "{").unwrap();
    assert!(matches!(load_dataset(&out), Err(Error::Malformed { .. })));
    assert!(matches!(load_dataset(&dir.path().join("none")), Err(Error::MissingFile(_))));
}

#[test]
fn bad_raw_layouts_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(Split::TrainPerClass(1), SplitMode::Sequential, vec![], StftConfig::new(32, 24));
    fs::create_dir_all(dir.path().join("only")).unwrap();
    assert!(build_dataset(dir.path(), &s).is_err());

    let short = tempfile::tempdir().unwrap();
    synth(short.path(), SyntheticKind::UnivariateBinary, 2, 20, 1);
    assert!(matches!(build_dataset(short.path(), &s), Err(Error::SeriesTooShort { .. })));
}

#[test]
fn synthesis_writes_every_sample_deterministically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), SyntheticKind::Multivariate4Class, 3, 64, 9);
    synth(b.path(), SyntheticKind::Multivariate4Class, 3, 64, 9);
    for class in ["normal", "shifted", "burst", "wobble"] {
        for i in 0..3 {
            let rel = format!("{class}/{class}_{i:04}.csv");
            assert_eq!(fs::read(a.path().join(&rel)).unwrap(), fs::read(b.path().join(&rel)).unwrap());
        }
    }
}

/// A nearest-centroid baseline on per-row spectrogram statistics separates
/// the univariate classes well, though not perfectly: their tone bands
/// overlap on purpose.
#[test]
fn univariate_classes_are_learnable() {
    let spec = SyntheticSpec {
        kind: SyntheticKind::UnivariateBinary,
        samples_per_class: 100,
        length: 1024,
        noise_sigma: 0.5,
        seed: 10,
    };
    let cfg = StftConfig::new(64, 48);
    let profile = |class: usize, i: usize| -> Vec<f64> {
        let ts = synthesize_series(&spec, class, i).unwrap();
        let img = &series_to_images(&ts, &cfg).unwrap()[0];
        let w = img.width() as f64;
        let mut f = Vec::new();
        for y in 0..img.height() {
            let row: Vec<f64> = (0..img.width()).map(|x| img.get(x, y) as f64).collect();
            let mean = row.iter().sum::<f64>() / w;
            f.push(mean);
            f.push((row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w).sqrt());
        }
        f
    };
    let centroid = |class: usize| -> Vec<f64> {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| profile(class, i)).collect();
        (0..rows[0].len()).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / 50.0).collect()
    };
    let centroids = [centroid(0), centroid(1)];
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut correct = 0;
    for class in 0..2 {
        for i in 50..100 {
            let p = profile(class, i);
            let guess = usize::from(dist(&p, &centroids[1]) < dist(&p, &centroids[0]));
            correct += usize::from(guess == class);
        }
    }
    assert!(correct >= 85, "{correct}/100");
}
