mod common;

use std::collections::{BTreeSet, HashSet};

use common::*;
use plasticity_core::data::{
    build_stream, class_pair_task, class_pairs, parse_idx_images, parse_idx_labels, permute_task, MnistFiles,
    PermutationSeed, StreamConfig, StreamKind,
};

#[test]
fn raw_counts_and_shapes() {
    let files = MnistFiles::in_dir(mnist_dir());
    let imgs = parse_idx_images(&std::fs::read(&files.train_images).unwrap(), "train-images").unwrap();
    assert_eq!((imgs.count, imgs.rows, imgs.cols), (60_000, 28, 28));
    let labels = parse_idx_labels(&std::fs::read(&files.test_labels).unwrap(), "test-labels").unwrap();
    assert_eq!(labels.len(), 10_000);

    let data = load_mnist();
    assert_eq!(data.train.len(), 60_000);
    assert_eq!(data.test.len(), 10_000);
    assert_eq!(data.train.n_features(), 784);
    let hist = data.train.label_histogram();
    assert_eq!(hist.iter().sum::<usize>(), 60_000);
    assert!(hist.iter().all(|&c| (5_000..7_000).contains(&c)), "{hist:?}");
}

#[test]
fn permuted_tasks_preserve_labels_and_pixel_multisets() {
    let data = load_mnist();
    let task = permute_task(&data, PermutationSeed { master_seed: 3, index: 7 }, 1).unwrap();
    assert_eq!(task.train.labels(), data.train.labels());
    assert_eq!(task.test.labels(), data.test.labels());
    assert!(task.train.shares_storage_with(&data.train));
    let mut changed = 0;
    for i in (0..data.train.len()).step_by(601) {
        let (mut a, mut b) = (data.train.image_bytes(i), task.train.image_bytes(i));
        changed += usize::from(a != b);
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }
    assert!(changed > 0);
}

#[test]
fn forty_five_class_pairs() {
    let data = load_mnist();
    let pairs = class_pairs(10);
    assert_eq!(pairs.len(), 45);
    assert_eq!(pairs.iter().collect::<BTreeSet<_>>().len(), 45);
    let mut covered = 0usize;
    for &(lo, hi) in &pairs {
        let t = class_pair_task(&data, lo, hi, 1).unwrap();
        assert_eq!(t.train.n_classes(), 2);
        let labels: BTreeSet<usize> = t.train.labels().into_iter().collect();
        assert_eq!(labels, BTreeSet::from([0, 1]));
        let ratio = t.train.len() as f64 / t.test.len() as f64;
        assert!((5.5..=6.5).contains(&ratio), "({lo}, {hi}) ratio {ratio}");
        covered += t.train.len();
    }
    // each digit appears in 9 pairs
    assert_eq!(covered, 9 * 60_000);
}

#[test]
fn pair_one_two_size() {
    let data = load_mnist();
    let t = class_pair_task(&data, 1, 2, 1).unwrap();
    let hist = data.train.label_histogram();
    assert_eq!(t.train.len(), hist[1] + hist[2]);
    assert_eq!(t.train.len(), 12_700);
    for i in 0..t.train.len() {
        let img = t.train.image_bytes(i);
        assert!(img.len() == 784);
    }
}

#[test]
fn default_streams() {
    let data = load_mnist();
    let class = build_stream(&StreamConfig::new(StreamKind::Class), &data).unwrap();
    assert_eq!(class.len(), 45);
    let domain = build_stream(&StreamConfig::new(StreamKind::Domain), &data).unwrap();
    assert_eq!(domain.len(), 100);
    let perms: HashSet<Vec<u32>> = domain.iter().map(|t| t.train.permutation().unwrap().to_vec()).collect();
    assert_eq!(perms.len(), 100);
}

fn image_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

#[test]
fn train_and_test_images_are_disjoint() {
    let data = load_mnist();
    let train: HashSet<u64> = (0..data.train.len()).map(|i| image_hash(&data.train.image_bytes(i))).collect();
    let mut shared = 0;
    for i in (0..data.test.len()).step_by(7) {
        let bytes = data.test.image_bytes(i);
        if train.contains(&image_hash(&bytes)) {
            shared += 1;
        }
    }
    assert_eq!(shared, 0);
}
