//! Checks against the real MNIST files. Skipped when they are not on disk.

use std::path::PathBuf;

use slstm::mnist::{subsample, MnistFiles};

fn data_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("SLSTM_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist")));
    MnistFiles::in_dir(&dir).all_present().then_some(dir)
}

#[test]
fn official_split_sizes_and_shapes() {
    let Some(dir) = data_dir() else {
        eprintln!("MNIST not found, skipping");
        return;
    };
    let files = MnistFiles::in_dir(dir);
    let train = files.load_train().unwrap();
    let test = files.load_test().unwrap();
    assert_eq!((train.len(), test.len()), (60_000, 10_000));
    assert_eq!((train.steps(), train.width()), (28, 28));
    // well-known first labels of each split
    assert_eq!(&train.labels()[..5], &[5, 0, 4, 1, 9]);
    assert_eq!(&test.labels()[..5], &[7, 2, 1, 0, 4]);
    assert_eq!(
        train.class_counts(),
        [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949]
    );
    let rows: Vec<&[f64]> = train.sequence(0).collect();
    assert_eq!(rows.len(), 28);
    assert!(rows
        .iter()
        .flat_map(|r| r.iter())
        .all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn desk_scale_subset_is_balanced() {
    let Some(dir) = data_dir() else {
        return;
    };
    let train = MnistFiles::in_dir(dir).load_train().unwrap();
    let sub = subsample(&train, 10_000, 0).unwrap();
    assert_eq!(sub.class_counts(), [1000; 10]);
    assert_eq!(subsample(&train, 10_000, 0).unwrap(), sub);
}
