use std::collections::BTreeSet;
use std::path::PathBuf;

use omcl_core::data::{
    batch_indices, crop_offsets, encode_npy, epoch_permutation, flip_horizontal, load_dataset, load_npy,
    load_npz_member, make_splits, pad_crop, parse_npy, prepare_trial, save_npy, synthetic::GaussianMixture,
    AugmentConfig, ChannelStats, DataError, NpyArray, NpyData, NpzArchive, SplitFile,
};
use omcl_core::model::InputShape;
use omcl_core::rng::{stream_rng, Stream};
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Pixel formula used to write the fixture archive.
fn fixture_pixel(flat: usize, offset: usize) -> u8 {
    ((flat * 7 + offset) % 256) as u8
}

#[test]
fn reads_numpy_written_uint8() {
    let a = load_npy(&fixture("rgb_u8.npy")).unwrap();
    assert_eq!(a.shape, vec![2, 3, 3, 3]);
    let expected: Vec<u8> = (0..54).map(|i| i as u8).collect();
    assert_eq!(a.data, NpyData::U8(expected));
}

#[test]
fn reads_numpy_written_int64() {
    let a = load_npy(&fixture("labels_i8.npy")).unwrap();
    assert_eq!(a.shape, vec![4]);
    assert_eq!(a.data, NpyData::I64(vec![3, -1, 7, 0]));
}

#[test]
fn rejects_fortran_order() {
    assert_eq!(load_npy(&fixture("fortran.npy")), Err(DataError::UnsupportedOrder));
}

#[test]
fn rejects_bad_magic_and_version() {
    assert_eq!(parse_npy(b"not an npy file at all"), Err(DataError::BadMagic));
    let mut bytes = encode_npy(&NpyArray::u8(vec![1], vec![9]));
    bytes[6] = 2;
    assert_eq!(
        parse_npy(&bytes),
        Err(DataError::UnsupportedVersion { major: 2, minor: 0 })
    );
}

#[test]
fn npz_members_match_the_writer() {
    let path = fixture("tiny_dataset.npz");
    let mut npz = NpzArchive::open(&path).unwrap();
    assert!(npz.has("train_images") && npz.has("test_labels.npy"));
    let imgs = npz.member("train_images").unwrap();
    assert_eq!(imgs.shape, vec![12, 6, 6]);
    let NpyData::U8(px) = &imgs.data else { panic!("dtype") };
    assert!(px.iter().enumerate().all(|(i, p)| *p == fixture_pixel(i, 0)));
    assert!(matches!(npz.member("nope"), Err(DataError::MissingMember(_))));
    let labels = load_npz_member(&path, "test_labels").unwrap();
    assert_eq!(labels.shape, vec![8, 1]);
}

#[test]
fn dataset_from_npz_and_directory_agree() {
    let (train, test) = load_dataset(&fixture("tiny_dataset.npz")).unwrap();
    assert_eq!(train.len(), 12);
    assert_eq!(test.len(), 8);
    assert_eq!(train.shape, InputShape::new(6, 6, 1));
    assert_eq!(train.num_classes(), 4);
    assert_eq!(test.labels, vec![0, 1, 2, 3, 0, 1, 2, 3]);
    assert_eq!(test.image(1)[0], fixture_pixel(36, 3));

    let dir = tempfile::tempdir().unwrap();
    for (name, ds) in [("train", &train), ("test", &test)] {
        let n = ds.len();
        save_npy(
            &dir.path().join(format!("{name}_images.npy")),
            &NpyArray::u8(vec![n, 6, 6], ds.images.clone()),
        )
        .unwrap();
        let labels = ds.labels.iter().map(|&l| l as i64).collect();
        save_npy(
            &dir.path().join(format!("{name}_labels.npy")),
            &NpyArray::i64(vec![n], labels),
        )
        .unwrap();
    }
    let (train2, test2) = load_dataset(dir.path()).unwrap();
    assert_eq!(train2.images, train.images);
    assert_eq!(test2.labels, test.labels);
}

#[test]
fn missing_dataset_is_an_io_error() {
    assert!(matches!(
        load_dataset(&fixture("absent_dir")),
        Err(DataError::Io { .. })
    ));
}

#[test]
fn trial_view_uses_known_training_statistics() {
    let (train, test) = load_dataset(&fixture("tiny_dataset.npz")).unwrap();
    let split = make_splits(4, 1, 3, &[], None).unwrap().remove(0);
    let data = prepare_trial(&train, &test, &split).unwrap();
    assert_eq!(data.num_classes, 2);
    assert_eq!(data.train.len(), 6);
    assert!(data.train.labels.iter().all(|&l| l < 2));
    assert!(data.test_unknown.labels.iter().all(|&l| l == 2));
    assert_eq!(data.test_known.len() + data.test_unknown.len(), 8);

    let mut sum = 0.0;
    for i in 0..train.len() {
        if split.remap(train.labels[i]).is_some() {
            sum += train.image(i).iter().map(|p| f64::from(*p) / 255.0).sum::<f64>();
        }
    }
    let mean = sum / (6.0 * 36.0);
    assert!((data.stats.mean[0] - mean).abs() < 1e-12);

    let idx: Vec<usize> = (0..data.train.len()).collect();
    let batch = data.batch(&data.train, &idx, None);
    let avg = batch.images.data().iter().sum::<f64>() / batch.images.len() as f64;
    assert!(avg.abs() < 1e-9);
}

#[test]
fn crop_offsets_are_pinned_for_seed_7() {
    let mut rng = stream_rng(7, Stream::Augment, 0);
    let offsets: Vec<(usize, usize)> = (0..4).map(|_| crop_offsets(&mut rng, 4)).collect();
    assert_eq!(offsets, vec![(3, 5), (8, 5), (0, 3), (8, 4)]);
}

#[test]
fn augmentation_keeps_shape_and_zero_fills() {
    let shape = InputShape::new(6, 6, 3);
    let img: Vec<f64> = (0..shape.len()).map(|i| 1.0 + i as f64).collect();
    let stats = ChannelStats::identity(3);
    let mut rng = stream_rng(1, Stream::Augment, 0);
    for _ in 0..20 {
        let out = omcl_core::data::augment(&img, shape, &mut rng, &AugmentConfig::default(), &stats);
        assert_eq!(out.len(), img.len());
        // every value is either padding or a pixel of the source
        assert!(out.iter().all(|v| *v == 0.0 || img.contains(v)));
    }
}

#[test]
fn flip_then_crop_commutes_with_mirrored_crop() {
    let shape = InputShape::new(5, 5, 1);
    let img: Vec<f64> = (0..25).map(f64::from).collect();
    let a = flip_horizontal(&pad_crop(&img, shape, 2, 1, 3), shape);
    let b = pad_crop(&flip_horizontal(&img, shape), shape, 2, 1, 1);
    assert_eq!(a, b);
}

#[test]
fn synthetic_task_is_seeded_and_balanced() {
    let mix = GaussianMixture::default();
    let split = make_splits(8, 1, 0, &[], None).unwrap().remove(0);
    let a = mix.trial_data(5, &split);
    let b = mix.trial_data(5, &split);
    assert_eq!(a, b);
    assert_eq!(a.train.len(), 4 * 500);
    assert_eq!(a.test_known.len(), 4 * 500);
    assert_eq!(a.test_unknown.len(), 4 * 500);
    assert_ne!(a.train.values, mix.trial_data(6, &split).train.values);
}

#[test]
fn split_file_round_trip() {
    let splits = make_splits(8, 5, 2023, &[], None).unwrap();
    let file = SplitFile::new("bloodmnist", &splits);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("splits.json");
    file.save(&path).unwrap();
    let back = SplitFile::load(&path).unwrap();
    assert_eq!(back, file);
    assert_eq!(back.splits().unwrap(), splits);
    assert_eq!(back.trial(3).unwrap(), splits[3]);
    assert!(back.trial(5).is_err());
}

#[test]
fn inconsistent_split_file_is_rejected() {
    let splits = make_splits(6, 1, 1, &[], None).unwrap();
    let mut file = SplitFile::new("x", &splits);
    let moved = file.trials[0].unknown[0];
    file.trials[0].known.push(moved);
    assert!(file.splits().is_err());
}

#[test]
fn eight_classes_five_trials_are_distinct_halves() {
    let splits = make_splits(8, 5, 2023, &[], None).unwrap();
    let sets: BTreeSet<Vec<usize>> = splits.iter().map(|s| s.known.clone()).collect();
    assert_eq!(sets.len(), 5);
    assert!(splits.iter().all(|s| s.known.len() == 4 && s.unknown.len() == 4));
}

#[test]
fn pinned_classes_stay_known() {
    let splits = make_splits(4, 3, 9, &[1, 3], Some(2)).unwrap();
    assert!(splits.iter().all(|s| s.known == vec![1, 3]));
}

proptest! {
    #[test]
    fn npy_round_trip(shape in prop::collection::vec(0usize..5, 0..4), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let bytes: Vec<u8> = (0..n).map(|i| (seed as usize).wrapping_add(i * 31) as u8).collect();
        let a = NpyArray::u8(shape.clone(), bytes);
        prop_assert_eq!(parse_npy(&encode_npy(&a)).unwrap(), a);
        let ints: Vec<i64> = (0..n).map(|i| (seed as i64).wrapping_mul(i as i64 + 1)).collect();
        let b = NpyArray::i64(shape, ints);
        prop_assert_eq!(parse_npy(&encode_npy(&b)).unwrap(), b);
    }

    #[test]
    fn splits_partition_the_classes(classes in 2usize..12, trials in 1usize..8, seed in any::<u64>()) {
        let splits = make_splits(classes, trials, seed, &[], None).unwrap();
        prop_assert_eq!(splits.len(), trials);
        for s in &splits {
            let mut all: Vec<usize> = s.known.iter().chain(&s.unknown).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..classes).collect::<Vec<_>>());
            prop_assert_eq!(s.known.len(), classes.div_ceil(2));
            for (label, &c) in s.known.iter().enumerate() {
                prop_assert_eq!(s.remap(c), Some(label));
            }
        }
        prop_assert_eq!(make_splits(classes, trials, seed, &[], None).unwrap(), splits);
    }

    #[test]
    fn batches_cover_each_sample_once(n in 1usize..300, bs in 1usize..70, seed in any::<u64>(), epoch in 0u64..5) {
        let batches = batch_indices(n, bs, seed, epoch);
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= bs));
        let mut all: Vec<usize> = batches.concat();
        prop_assert_eq!(&all, &epoch_permutation(n, seed, epoch));
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}
