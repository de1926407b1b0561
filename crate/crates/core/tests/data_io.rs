mod common;

use proptest::prelude::*;
use tle_core::dataset::{DATASET_MAGIC, DATASET_VERSION};
use tle_core::{read_dataset, synth_dataset, write_dataset, FeatureDataset, Shape, Split, StreamTag, SynthConfig, TleError};

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        classes: 2,
        videos_per_class: 1,
        frames: 3,
        shape: Shape::new(2, 2, 2).unwrap(),
        seed,
        ..Default::default()
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two.tlef");
    let ds = synth_dataset(&small(1), Split::Train).unwrap();
    assert_eq!(ds.len(), 2);
    write_dataset(&ds, &path).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), ds);
}

#[test]
fn header_layout_is_stable() {
    let ds = synth_dataset(&small(2), Split::Train).unwrap();
    let bytes = ds.to_bytes().unwrap();
    assert_eq!(&bytes[..4], DATASET_MAGIC);
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), DATASET_VERSION);
    assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 2);
    assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 2);
    // 2 videos × (id header + label + stream + count + shape + 3 maps × 8 f32)
    let per_video = |id: &str| 4 + id.len() + 4 + 1 + 4 + 12 + 3 * 8 * 4;
    let expected: usize = 14 + ds.videos().iter().map(|v| per_video(&v.id)).sum::<usize>();
    assert_eq!(bytes.len(), expected);
}

#[test]
fn malformed_files() {
    let ds = synth_dataset(&small(3), Split::Train).unwrap();
    let bytes = ds.to_bytes().unwrap();

    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"XXXX");
    assert!(matches!(FeatureDataset::from_bytes(&bad, Split::Train), Err(TleError::MagicMismatch { .. })));

    let cut = bytes.len() - 7;
    match FeatureDataset::from_bytes(&bytes[..cut], Split::Train) {
        Err(e @ TleError::Truncated { .. }) => assert!(e.to_string().contains("offset"), "{e}"),
        other => panic!("expected truncation, got {other:?}"),
    }

    // First video's map count set to u32::MAX with a huge shape.
    let mut bad = bytes.clone();
    let id_len = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
    let dims = 14 + 4 + id_len + 4 + 1 + 4;
    bad[dims..dims + 12].copy_from_slice(&[0xff; 12]);
    assert!(matches!(FeatureDataset::from_bytes(&bad, Split::Train), Err(TleError::ShapeOverflow { .. })));
}

#[test]
fn synth_is_deterministic_and_split_aware() {
    let cfg = SynthConfig::default();
    let a = synth_dataset(&cfg, Split::Train).unwrap();
    assert_eq!(a, synth_dataset(&cfg, Split::Train).unwrap());
    let t = synth_dataset(&cfg, Split::Test).unwrap();
    assert_ne!(a.videos()[0].maps(), t.videos()[0].maps());
    assert_eq!(a.len(), 100);
    assert_eq!(a.uniform_shape().unwrap(), Shape::new(4, 4, 8).unwrap());
}

#[test]
fn degenerate_synth_sizes_rejected() {
    for cfg in [
        SynthConfig { classes: 1, ..Default::default() },
        SynthConfig { videos_per_class: 0, ..Default::default() },
        SynthConfig { frames: 0, ..Default::default() },
        SynthConfig { difficulty: -1.0, ..Default::default() },
    ] {
        assert!(synth_dataset(&cfg, Split::Train).is_err());
    }
}

#[test]
fn noiseless_frames_equal_template() {
    let cfg = SynthConfig {
        difficulty: 0.0,
        ..Default::default()
    };
    let ds = synth_dataset(&cfg, Split::Train).unwrap();
    for v in ds.videos() {
        assert!(v.maps().iter().all(|m| m == &v.maps()[0]));
    }
    let same_class: Vec<_> = ds.videos().iter().filter(|v| v.label == 0).collect();
    assert_eq!(same_class[0].maps()[0], same_class[1].maps()[0]);
    let test = synth_dataset(&cfg, Split::Test).unwrap();
    let (tr, te) = common::oracle_accuracy(&ds, &test);
    assert_eq!((tr, te), (1.0, 1.0));
}

#[test]
fn default_dataset_is_separable_by_oracle() {
    let cfg = SynthConfig::default();
    let (tr, te) = common::oracle_accuracy(&synth_dataset(&cfg, Split::Train).unwrap(), &synth_dataset(&cfg, Split::Test).unwrap());
    assert!(tr >= 0.98 && te >= 0.98, "oracle {tr} / {te}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn generated_datasets_round_trip(
        classes in 2usize..5,
        per_class in 1usize..3,
        frames in 1usize..4,
        h in 1usize..3,
        w in 1usize..3,
        c in 1usize..4,
        difficulty in 0.0f64..3.0,
        seed in any::<u64>(),
        temporal in any::<bool>(),
        test in any::<bool>(),
    ) {
        let cfg = SynthConfig {
            classes,
            videos_per_class: per_class,
            frames,
            shape: Shape::new(h, w, c).unwrap(),
            difficulty,
            seed,
            stream: if temporal { StreamTag::Temporal } else { StreamTag::Spatial },
        };
        let split = if test { Split::Test } else { Split::Train };
        let ds = synth_dataset(&cfg, split).unwrap();
        let bytes = ds.to_bytes().unwrap();
        let back = FeatureDataset::from_bytes(&bytes, split).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}
