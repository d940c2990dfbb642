//! Dataset ingestion and continual-learning task streams.

mod dataset;
mod idx;
mod tasks;

pub use dataset::{Dataset, RawSplit};
pub use idx::{
    encode_idx_images, encode_idx_labels, load_mnist_files, load_mnist_idx, parse_idx_images,
    parse_idx_labels, split_from_idx, IdxImages, MnistData, MnistFiles, IMAGES_MAGIC, LABELS_MAGIC,
};
pub use tasks::{
    build_stream, class_pair_task, class_pairs, permute_task, permute_task_with, PermutationSeed,
    Provenance, StreamConfig, StreamKind, Task, TaskOrder, CLASS_PAIR_COUNT, DEFAULT_DOMAIN_TASKS,
};
