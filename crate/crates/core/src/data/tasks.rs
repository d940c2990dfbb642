//! Continual-learning task construction: pixel-permuted (domain-incremental)
//! tasks and digit-pair (class-incremental) tasks.

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::idx::MnistData;
use crate::rng::rng_stream;
use crate::{Error, Result};

/// Number of distinct unordered digit pairs, `C(10, 2)`.
pub const CLASS_PAIR_COUNT: usize = 45;

pub const DEFAULT_DOMAIN_TASKS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    /// Fixed classes, pixel-permuted inputs.
    Domain,
    /// Digit pairs with binary labels.
    Class,
}

impl StreamKind {
    /// Width of the classifier head.
    pub fn n_outputs(self) -> usize {
        match self {
            StreamKind::Domain => 10,
            StreamKind::Class => 2,
        }
    }

    pub fn default_tasks(self) -> usize {
        match self {
            StreamKind::Domain => DEFAULT_DOMAIN_TASKS,
            StreamKind::Class => CLASS_PAIR_COUNT,
        }
    }
}

impl std::str::FromStr for StreamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "domain" => Ok(StreamKind::Domain),
            "class" => Ok(StreamKind::Class),
            other => Err(Error::Config(format!("unknown stream kind '{other}' (domain|class)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOrder {
    #[default]
    Lexicographic,
    Shuffled,
}

/// Identifies the random pixel permutation of a domain task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PermutationSeed {
    pub master_seed: u64,
    pub index: u64,
}

impl PermutationSeed {
    /// Fisher–Yates permutation of `0..n` drawn from the `"perm"` stream.
    pub fn draw(self, n: usize) -> Vec<usize> {
        rng_stream(self.master_seed, "perm", self.index).permutation(n)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Permutation(PermutationSeed),
    /// Explicit permutation supplied by the caller (test hook).
    FixedPermutation,
    ClassPair { low: usize, high: usize },
}

/// One continual-learning unit.
#[derive(Debug, Clone)]
pub struct Task {
    /// 1-based position in its stream.
    pub id: usize,
    pub kind: StreamKind,
    pub train: Dataset,
    pub test: Dataset,
    pub provenance: Provenance,
}

/// Domain task from an explicit pixel permutation applied identically to
/// train and test.
pub fn permute_task_with(base: &MnistData, perm: &[usize], id: usize) -> Result<Task> {
    Ok(Task {
        id,
        kind: StreamKind::Domain,
        train: base.train.permuted(perm)?,
        test: base.test.permuted(perm)?,
        provenance: Provenance::FixedPermutation,
    })
}

/// Domain task whose permutation is drawn from `seed`.
pub fn permute_task(base: &MnistData, seed: PermutationSeed, id: usize) -> Result<Task> {
    let perm = seed.draw(base.train.n_features());
    let mut task = permute_task_with(base, &perm, id)?;
    task.provenance = Provenance::Permutation(seed);
    Ok(task)
}

/// Binary task over digits `low < high`, labeled `low → 0`, `high → 1`.
pub fn class_pair_task(base: &MnistData, low: usize, high: usize, id: usize) -> Result<Task> {
    let classes = base.train.n_classes();
    if low >= high || high >= classes {
        return Err(Error::Config(format!(
            "class pair ({low}, {high}) must satisfy 0 <= low < high < {classes}"
        )));
    }
    Ok(Task {
        id,
        kind: StreamKind::Class,
        train: base.train.restrict_classes(&[low, high])?,
        test: base.test.restrict_classes(&[low, high])?,
        provenance: Provenance::ClassPair { low, high },
    })
}

/// All `(low, high)` digit pairs in lexicographic order.
pub fn class_pairs(n_classes: usize) -> Vec<(usize, usize)> {
    (0..n_classes)
        .flat_map(|a| (a + 1..n_classes).map(move |b| (a, b)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "StreamConfigRepr", into = "StreamConfigRepr")]
pub struct StreamConfig {
    pub kind: StreamKind,
    pub n_tasks: usize,
    pub master_seed: u64,
    /// Class streams only.
    pub task_order: TaskOrder,
}

/// Serialized form; a missing `n_tasks` means the kind's default.
#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StreamConfigRepr {
    kind: StreamKind,
    n_tasks: Option<usize>,
    master_seed: u64,
    task_order: TaskOrder,
}

impl Default for StreamConfigRepr {
    fn default() -> Self {
        Self {
            n_tasks: None,
            ..StreamConfig::default().into()
        }
    }
}

impl From<StreamConfigRepr> for StreamConfig {
    fn from(r: StreamConfigRepr) -> Self {
        Self {
            kind: r.kind,
            n_tasks: r.n_tasks.unwrap_or_else(|| r.kind.default_tasks()),
            master_seed: r.master_seed,
            task_order: r.task_order,
        }
    }
}

impl From<StreamConfig> for StreamConfigRepr {
    fn from(c: StreamConfig) -> Self {
        Self {
            kind: c.kind,
            n_tasks: Some(c.n_tasks),
            master_seed: c.master_seed,
            task_order: c.task_order,
        }
    }
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self::new(StreamKind::Domain)
    }
}

impl StreamConfig {
    pub fn new(kind: StreamKind) -> Self {
        Self {
            kind,
            n_tasks: kind.default_tasks(),
            master_seed: 0,
            task_order: TaskOrder::Lexicographic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 {
            return Err(Error::Config("a stream needs at least one task".into()));
        }
        if self.kind == StreamKind::Class && self.n_tasks > CLASS_PAIR_COUNT {
            return Err(Error::Config(format!(
                "class streams have at most {CLASS_PAIR_COUNT} tasks, asked for {}",
                self.n_tasks
            )));
        }
        Ok(())
    }
}

/// Builds the ordered task sequence.
///
/// Domain: task `t` (1-based) uses permutation seed
/// `(master_seed, t - 1)`. Class: the 45 pairs in lexicographic order,
/// optionally shuffled by the `"task-order"` stream, truncated to `n_tasks`.
pub fn build_stream(config: &StreamConfig, base: &MnistData) -> Result<Vec<Task>> {
    config.validate()?;
    match config.kind {
        StreamKind::Domain => (0..config.n_tasks)
            .map(|t| {
                let seed = PermutationSeed {
                    master_seed: config.master_seed,
                    index: t as u64,
                };
                permute_task(base, seed, t + 1)
            })
            .collect(),
        StreamKind::Class => {
            let mut pairs = class_pairs(base.train.n_classes());
            if pairs.len() < config.n_tasks {
                return Err(Error::Config(format!(
                    "only {} class pairs available, asked for {}",
                    pairs.len(),
                    config.n_tasks
                )));
            }
            if config.task_order == TaskOrder::Shuffled {
                rng_stream(config.master_seed, "task-order", 0).shuffle(&mut pairs);
            }
            pairs
                .into_iter()
                .take(config.n_tasks)
                .enumerate()
                .map(|(i, (lo, hi))| class_pair_task(base, lo, hi, i + 1))
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_base() -> MnistData {
        // 40 train / 10 test images of 6 pixels, labels cycling over 10 digits
        let train_px: Vec<u8> = (0..240).map(|i| (i * 7 % 256) as u8).collect();
        let train_lb: Vec<u8> = (0..40).map(|i| (i % 10) as u8).collect();
        let test_px: Vec<u8> = (0..60).map(|i| (i * 13 % 256) as u8).collect();
        let test_lb: Vec<u8> = (0..10).map(|i| (i % 10) as u8).collect();
        MnistData {
            train: Dataset::from_bytes(train_px, train_lb, 6, 10).unwrap(),
            test: Dataset::from_bytes(test_px, test_lb, 6, 10).unwrap(),
        }
    }

    #[test]
    fn identity_permutation_is_noop() {
        let base = toy_base();
        let t = permute_task_with(&base, &(0..6).collect::<Vec<_>>(), 1).unwrap();
        for i in 0..base.train.len() {
            assert_eq!(t.train.image_bytes(i), base.train.image_bytes(i));
        }
        assert_eq!(t.test.labels(), base.test.labels());
    }

    #[test]
    fn drawn_permutation_preserves_multisets_and_labels() {
        let base = toy_base();
        let seed = PermutationSeed { master_seed: 9, index: 2 };
        let t = permute_task(&base, seed, 3).unwrap();
        assert_eq!(t.provenance, Provenance::Permutation(seed));
        assert_eq!(t.train.labels(), base.train.labels());
        for i in 0..base.train.len() {
            let mut a = t.train.image_bytes(i);
            let mut b = base.train.image_bytes(i);
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
        // same permutation on train and test
        assert_eq!(t.train.permutation(), t.test.permutation());
        let again = permute_task(&base, seed, 3).unwrap();
        assert_eq!(again.train.permutation(), t.train.permutation());
    }

    #[test]
    fn class_pair_relabels() {
        let base = toy_base();
        let t = class_pair_task(&base, 1, 2, 1).unwrap();
        assert_eq!(t.train.len(), 8);
        assert_eq!(t.train.labels(), vec![0, 1, 0, 1, 0, 1, 0, 1]);
        assert_eq!(t.test.len(), 2);
        assert!(matches!(class_pair_task(&base, 3, 3, 1), Err(Error::Config(_))));
        assert!(matches!(class_pair_task(&base, 4, 2, 1), Err(Error::Config(_))));
        assert!(matches!(class_pair_task(&base, 4, 10, 1), Err(Error::Config(_))));
    }

    #[test]
    fn lexicographic_class_stream() {
        let base = toy_base();
        let s = build_stream(&StreamConfig::new(StreamKind::Class), &base).unwrap();
        assert_eq!(s.len(), 45);
        let firsts: Vec<_> = s.iter().take(3).map(|t| t.provenance.clone()).collect();
        assert_eq!(
            firsts,
            vec![
                Provenance::ClassPair { low: 0, high: 1 },
                Provenance::ClassPair { low: 0, high: 2 },
                Provenance::ClassPair { low: 0, high: 3 },
            ]
        );
        assert!(s.iter().enumerate().all(|(i, t)| t.id == i + 1));
    }

    #[test]
    fn shuffled_class_stream_is_seeded() {
        let base = toy_base();
        let cfg = StreamConfig {
            task_order: TaskOrder::Shuffled,
            master_seed: 5,
            n_tasks: 10,
            ..StreamConfig::new(StreamKind::Class)
        };
        let a: Vec<_> = build_stream(&cfg, &base).unwrap().into_iter().map(|t| t.provenance).collect();
        let b: Vec<_> = build_stream(&cfg, &base).unwrap().into_iter().map(|t| t.provenance).collect();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
    }

    #[test]
    fn too_many_class_tasks() {
        let cfg = StreamConfig {
            n_tasks: 46,
            ..StreamConfig::new(StreamKind::Class)
        };
        assert!(matches!(build_stream(&cfg, &toy_base()), Err(Error::Config(_))));
    }

    #[test]
    fn domain_stream_distinct_seeds() {
        let base = toy_base();
        let cfg = StreamConfig {
            n_tasks: 100,
            master_seed: 3,
            ..StreamConfig::new(StreamKind::Domain)
        };
        let s = build_stream(&cfg, &base).unwrap();
        assert_eq!(s.len(), 100);
        let mut seeds: Vec<_> = s
            .iter()
            .map(|t| match t.provenance {
                Provenance::Permutation(p) => p,
                _ => unreachable!(),
            })
            .collect();
        seeds.sort_by_key(|p| p.index);
        seeds.dedup();
        assert_eq!(seeds.len(), 100);
    }

    #[test]
    fn stream_kind_parses() {
        assert_eq!("class".parse::<StreamKind>().unwrap(), StreamKind::Class);
        assert!("cifar".parse::<StreamKind>().is_err());
    }
}
