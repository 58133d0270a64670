//! Dataset ingestion, synthetic data, heterogeneity partitioners, and
//! mini-batch sampling.

mod cifar;
mod idx;

pub use cifar::{load_cifar10_bin, parse_cifar10_records, CIFAR10_RECORD_LEN};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{rng_for, ParamVector, SeedPath};
use crate::objectives::Batch;

/// An in-memory labeled dataset with uniform feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>, // n_samples x feature_dim, row-major
    labels: Vec<usize>,
    feature_dim: usize,
    n_classes: usize,
    provenance: String,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        feature_dim: usize,
        n_classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if feature_dim == 0 && !labels.is_empty() {
            return Err(Error::config("dataset", "feature dimension must be positive"));
        }
        if labels.len() * feature_dim != features.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * feature_dim,
                got: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::config(
                "dataset",
                format!("label {bad} out of range for {n_classes} classes"),
            ));
        }
        if !features.iter().all(|f| f.is_finite()) {
            return Err(Error::NonFinite {
                context: "dataset features".to_string(),
            });
        }
        Ok(LabeledDataset {
            features,
            labels,
            feature_dim,
            n_classes,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Borrowing batch over the given sample indices.
    pub fn gather(&self, indices: &[usize]) -> Result<Batch<'_>> {
        let rows = indices.iter().map(|&i| self.feature(i)).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Batch::new(rows, labels)
    }

    /// Per-class sample counts.
    pub fn label_histogram(&self, indices: &[usize]) -> Vec<usize> {
        let mut hist = vec![0usize; self.n_classes];
        for &i in indices {
            hist[self.labels[i]] += 1;
        }
        hist
    }
}

/// How client datasets are carved out of one parent dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum PartitionScheme {
    /// Shuffle, then split into equal parts.
    Iid,
    /// Sort by label, split into equal contiguous parts: disjoint label sets
    /// when the class count divides the client count evenly.
    TotallyNonIid,
    /// Start totally non-IID, then extract fraction (1-p) of every client's
    /// data, pool, shuffle, and deal one equal share back to each client.
    /// p = 0.9 leaves each client with 10% homogeneous data.
    Mixed { p: f64 },
    /// Sort by label, cut into per_client * n_clients equal shards, deal
    /// per_client random shards to each client.
    Shards { per_client: usize },
}

#[derive(Debug, Clone)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub n_clients: usize,
    pub seed: SeedPath,
}

/// Per-client index lists into the parent dataset. Disjoint; the union drops
/// fewer than n_clients remainder samples.
#[derive(Debug, Clone)]
pub struct ClientSplit {
    clients: Vec<Vec<usize>>,
    note: String,
}

impl ClientSplit {
    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn client(&self, i: usize) -> &[usize] {
        &self.clients[i]
    }

    pub fn clients(&self) -> &[Vec<usize>] {
        &self.clients
    }

    /// Human-readable mode note recorded in run metadata.
    pub fn note(&self) -> &str {
        &self.note
    }

    pub fn total_assigned(&self) -> usize {
        self.clients.iter().map(|c| c.len()).sum()
    }
}

/// Sorts sample indices by label (stable: original order within a label).
fn sort_indices_by_label(ds: &LabeledDataset) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.sort_by_key(|&i| ds.label(i));
    idx
}

/// Splits an arranged index sequence into n equal parts, dropping the
/// remainder from the tail.
fn equal_chunks(mut arranged: Vec<usize>, n: usize) -> Vec<Vec<usize>> {
    let share = arranged.len() / n;
    arranged.truncate(share * n);
    arranged.chunks(share).map(|c| c.to_vec()).collect()
}

pub fn partition(ds: &LabeledDataset, spec: &PartitionSpec) -> Result<ClientSplit> {
    let n = spec.n_clients;
    if n == 0 {
        return Err(Error::Partition {
            constraint: "n_clients must be positive".to_string(),
        });
    }
    if ds.len() < n {
        return Err(Error::Partition {
            constraint: format!("dataset has {} samples for {} clients", ds.len(), n),
        });
    }
    match &spec.scheme {
        PartitionScheme::Iid => {
            let mut arranged: Vec<usize> = (0..ds.len()).collect();
            arranged.shuffle(&mut rng_for(&spec.seed.child("arrange", 0)));
            Ok(ClientSplit {
                clients: equal_chunks(arranged, n),
                note: "iid".to_string(),
            })
        }
        PartitionScheme::TotallyNonIid => {
            let (clients, note) = totally_noniid(ds, n);
            Ok(ClientSplit { clients, note })
        }
        PartitionScheme::Mixed { p } => {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Partition {
                    constraint: format!("mixed fraction p = {p} must be in [0, 1]"),
                });
            }
            let (mut clients, base_note) = totally_noniid(ds, n);
            // Extract a uniformly random (1-p) fraction from every client,
            // pool, shuffle, and deal equal shares back.
            let mut pool = Vec::new();
            let mut extract_per_client = 0usize;
            for (ci, client) in clients.iter_mut().enumerate() {
                let keep = (p * client.len() as f64).floor() as usize;
                let extract = client.len() - keep;
                extract_per_client = extract;
                if extract == 0 {
                    continue;
                }
                let mut order: Vec<usize> = (0..client.len()).collect();
                order.shuffle(&mut rng_for(&spec.seed.child("extract", ci as u64)));
                let mut marked: Vec<usize> = order[..extract].to_vec();
                marked.sort_unstable();
                for &pos in marked.iter().rev() {
                    pool.push(client.remove(pos));
                }
            }
            pool.shuffle(&mut rng_for(&spec.seed.child("pool", 0)));
            for (ci, client) in clients.iter_mut().enumerate() {
                let share = &pool[ci * extract_per_client..(ci + 1) * extract_per_client];
                client.extend_from_slice(share);
            }
            Ok(ClientSplit {
                clients,
                note: format!("mixed(p={p}) over {base_note}"),
            })
        }
        PartitionScheme::Shards { per_client } => {
            let k = *per_client;
            if k == 0 {
                return Err(Error::Partition {
                    constraint: "shards per client must be positive".to_string(),
                });
            }
            let total_shards = k * n;
            if ds.len() < total_shards {
                return Err(Error::Partition {
                    constraint: format!(
                        "dataset has {} samples but {total_shards} shards are required",
                        ds.len()
                    ),
                });
            }
            let arranged = sort_indices_by_label(ds);
            let shards = equal_chunks(arranged, total_shards);
            let mut order: Vec<usize> = (0..total_shards).collect();
            order.shuffle(&mut rng_for(&spec.seed.child("shards", 0)));
            let clients = (0..n)
                .map(|ci| {
                    let mut indices = Vec::new();
                    for &shard in &order[ci * k..(ci + 1) * k] {
                        indices.extend_from_slice(&shards[shard]);
                    }
                    indices
                })
                .collect();
            Ok(ClientSplit {
                clients,
                note: format!("shards(k={k})"),
            })
        }
    }
}

fn totally_noniid(ds: &LabeledDataset, n: usize) -> (Vec<Vec<usize>>, String) {
    let clients = equal_chunks(sort_indices_by_label(ds), n);
    // Divisible class counts with balanced classes give pairwise-disjoint
    // client label sets; otherwise this is the label-contiguous fallback.
    let sets: Vec<std::collections::BTreeSet<usize>> = clients
        .iter()
        .map(|c| c.iter().map(|&i| ds.label(i)).collect())
        .collect();
    let disjoint = sets.iter().enumerate().all(|(i, a)| {
        sets.iter()
            .skip(i + 1)
            .all(|b| a.intersection(b).next().is_none())
    });
    let note = if disjoint {
        "totally_noniid: disjoint client label sets".to_string()
    } else {
        "totally_noniid: label-contiguous fallback (client label sets overlap)".to_string()
    };
    (clients, note)
}

/// Isotropic Gaussian blob dataset: one unit-norm random center per class,
/// `per_class` samples per class with standard deviation `spread`.
///
/// Centers depend only on the seed path, not on `noise_tag`, so train and
/// eval sets drawn with different tags share the same class geometry.
pub fn gen_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: &SeedPath,
    noise_tag: u64,
) -> Result<LabeledDataset> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::config("data.blobs", "all counts must be positive"));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::config("data.blobs", "spread must be finite and >= 0"));
    }
    let mut centers_rng = rng_for(&seed.child("blobs-centers", 0));
    let mut centers = Vec::with_capacity(classes);
    for _ in 0..classes {
        loop {
            let v: Vec<f64> = (0..dim)
                .map(|_| centers_rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-6 {
                centers.push(v.into_iter().map(|a| a / norm).collect::<Vec<f64>>());
                break;
            }
        }
    }
    let mut noise_rng = rng_for(&seed.child("blobs-noise", noise_tag));
    let mut features = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &c in center {
                let noise: f64 = noise_rng.sample(StandardNormal);
                features.push(c + spread * noise);
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(
        features,
        labels,
        dim,
        classes,
        format!("blobs(classes={classes},per_class={per_class},dim={dim},spread={spread})"),
    )
}

/// Without-replacement mini-batch scheduler over one client's index list.
///
/// Each epoch is a fresh seeded permutation (the epoch index extends the
/// seed path); a final short batch is kept rather than dropped.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    indices: Vec<usize>,
    seed: SeedPath,
    epoch: u64,
    cursor: usize,
    order: Vec<usize>,
}

impl EpochSampler {
    pub fn new(indices: Vec<usize>, seed: SeedPath) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::config("sampler", "client split must be non-empty"));
        }
        let mut sampler = EpochSampler {
            indices,
            seed,
            epoch: 0,
            cursor: 0,
            order: Vec::new(),
        };
        sampler.reshuffle();
        Ok(sampler)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn epochs_completed(&self) -> u64 {
        self.epoch
    }

    fn reshuffle(&mut self) {
        self.order = self.indices.clone();
        self.order
            .shuffle(&mut rng_for(&self.seed.child("epoch", self.epoch)));
        self.cursor = 0;
    }

    /// Next batch of sample indices, at most `batch_size`, never empty.
    pub fn next_indices(&mut self, batch_size: usize) -> Result<Vec<usize>> {
        if batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.cursor >= self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let end = (self.cursor + batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Ok(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    pub(crate) fn toy_dataset(classes: usize, per_class: usize) -> LabeledDataset {
        // Feature = (label, serial) so tests can trace every sample.
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for c in 0..classes {
            for s in 0..per_class {
                features.push(c as f64);
                features.push(s as f64);
                labels.push(c);
            }
        }
        LabeledDataset::new(features, labels, 2, classes, "fixture").unwrap()
    }

    fn spec(scheme: PartitionScheme, n: usize, seed: u64) -> PartitionSpec {
        PartitionSpec {
            scheme,
            n_clients: n,
            seed: SeedPath::new(seed).child("partition", 0),
        }
    }

    #[test]
    fn totally_noniid_gives_disjoint_two_label_clients() {
        let ds = toy_dataset(10, 100);
        let split = partition(&ds, &spec(PartitionScheme::TotallyNonIid, 5, 1)).unwrap();
        let mut seen = HashSet::new();
        for ci in 0..5 {
            let hist = ds.label_histogram(split.client(ci));
            let present: Vec<usize> = hist
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(l, _)| l)
                .collect();
            assert_eq!(present.len(), 2, "client {ci} labels: {present:?}");
            for l in present {
                assert!(seen.insert(l), "label {l} appears on two clients");
            }
        }
        assert!(split.note().contains("disjoint"));
    }

    #[test]
    fn totally_noniid_flags_fallback_when_labels_overlap() {
        let ds = toy_dataset(3, 100);
        let split = partition(&ds, &spec(PartitionScheme::TotallyNonIid, 2, 1)).unwrap();
        assert!(split.note().contains("fallback"));
    }

    #[test]
    fn mixed_full_p_equals_totally_noniid() {
        let ds = toy_dataset(10, 40);
        let a = partition(&ds, &spec(PartitionScheme::TotallyNonIid, 5, 3)).unwrap();
        let b = partition(&ds, &spec(PartitionScheme::Mixed { p: 1.0 }, 5, 3)).unwrap();
        assert_eq!(a.clients(), b.clients());
    }

    #[test]
    fn mixed_retains_floor_p_share_of_original_indices() {
        let ds = toy_dataset(10, 100);
        let p = 0.9;
        let base = partition(&ds, &spec(PartitionScheme::TotallyNonIid, 5, 7)).unwrap();
        let mixed = partition(&ds, &spec(PartitionScheme::Mixed { p }, 5, 7)).unwrap();
        for ci in 0..5 {
            let orig: HashSet<usize> = base.client(ci).iter().copied().collect();
            let kept = mixed
                .client(ci)
                .iter()
                .filter(|i| orig.contains(i))
                .count();
            let share = base.client(ci).len();
            // Retained = floor(p * share); everything extra came from the pool
            // (minus pool items that happen to return home).
            assert!(kept >= (p * share as f64).floor() as usize);
            assert_eq!(mixed.client(ci).len(), share);
        }
    }

    #[test]
    fn shards_deal_exactly_k_per_client() {
        let ds = toy_dataset(10, 80); // 800 samples, 40 shards of 20
        let split = partition(&ds, &spec(PartitionScheme::Shards { per_client: 2 }, 20, 5)).unwrap();
        let mut all = Vec::new();
        for ci in 0..20 {
            assert_eq!(split.client(ci).len(), 40); // 2 shards x 20 samples
            all.extend_from_slice(split.client(ci));
        }
        let unique: HashSet<usize> = all.iter().copied().collect();
        assert_eq!(unique.len(), 800);
    }

    #[test]
    fn shards_infeasible_when_too_few_samples() {
        let ds = toy_dataset(2, 3); // 6 samples
        let err = partition(&ds, &spec(PartitionScheme::Shards { per_client: 4 }, 2, 5))
            .unwrap_err();
        assert!(matches!(err, Error::Partition { .. }));
    }

    #[test]
    fn partition_is_deterministic() {
        let ds = toy_dataset(4, 25);
        for scheme in [
            PartitionScheme::Iid,
            PartitionScheme::TotallyNonIid,
            PartitionScheme::Mixed { p: 0.7 },
            PartitionScheme::Shards { per_client: 2 },
        ] {
            let a = partition(&ds, &spec(scheme.clone(), 4, 9)).unwrap();
            let b = partition(&ds, &spec(scheme, 4, 9)).unwrap();
            assert_eq!(a.clients(), b.clients());
        }
    }

    #[test]
    fn blobs_shapes_and_determinism() {
        let seed = SeedPath::new(11);
        let a = gen_blobs(2, 50, 3, 0.5, &seed, 0).unwrap();
        let b = gen_blobs(2, 50, 3, 0.5, &seed, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        let hist = a.label_histogram(&(0..a.len()).collect::<Vec<_>>());
        assert_eq!(hist, vec![50, 50]);
    }

    #[test]
    fn blobs_zero_spread_collapses_to_centers() {
        let ds = gen_blobs(2, 5, 4, 0.0, &SeedPath::new(12), 0).unwrap();
        for i in 1..5 {
            assert_eq!(ds.feature(i), ds.feature(0));
        }
        assert_ne!(ds.feature(0), ds.feature(5));
        // Unit-norm centers.
        let norm: f64 = ds.feature(0).iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blobs_noise_tags_share_centers() {
        let seed = SeedPath::new(13);
        let train = gen_blobs(3, 10, 4, 0.0, &seed, 0).unwrap();
        let eval = gen_blobs(3, 10, 4, 0.0, &seed, 1).unwrap();
        assert_eq!(train.feature(0), eval.feature(0));
    }

    #[test]
    fn sampler_covers_epoch_without_replacement() {
        let seed = SeedPath::new(20).child("client", 0);
        let mut s = EpochSampler::new((0..10).collect(), seed).unwrap();
        let mut seen = Vec::new();
        seen.extend(s.next_indices(4).unwrap());
        seen.extend(s.next_indices(4).unwrap());
        let last = s.next_indices(4).unwrap();
        assert_eq!(last.len(), 2, "final short batch kept");
        seen.extend(last);
        let unique: HashSet<usize> = seen.iter().copied().collect();
        assert_eq!(unique.len(), 10);
        assert_eq!(s.epochs_completed(), 0);
        s.next_indices(4).unwrap();
        assert_eq!(s.epochs_completed(), 1);
    }

    #[test]
    fn sampler_epochs_use_distinct_permutations() {
        let seed = SeedPath::new(21).child("client", 3);
        let mut s = EpochSampler::new((0..64).collect(), seed).unwrap();
        let first = s.next_indices(64).unwrap();
        let second = s.next_indices(64).unwrap();
        assert_ne!(first, second);
        let a: HashSet<usize> = first.into_iter().collect();
        let b: HashSet<usize> = second.into_iter().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn sampler_whole_split_when_batch_exceeds_size() {
        let seed = SeedPath::new(22).child("client", 1);
        let mut s = EpochSampler::new(vec![3, 5, 9], seed).unwrap();
        assert_eq!(s.next_indices(100).unwrap().len(), 3);
    }

    #[test]
    fn sampler_rejects_zero_batch() {
        let seed = SeedPath::new(23);
        let mut s = EpochSampler::new(vec![0], seed).unwrap();
        assert!(matches!(
            s.next_indices(0).unwrap_err(),
            Error::Config { .. }
        ));
    }

    proptest! {
        // Conservation: every scheme assigns all but < n_clients samples,
        // with no index duplicated.
        #[test]
        fn partition_conserves_samples(
            classes in 2usize..6,
            per_class in 5usize..40,
            n in 2usize..6,
            seed in 0u64..500,
            scheme_pick in 0usize..4,
        ) {
            let ds = toy_dataset(classes, per_class);
            let scheme = match scheme_pick {
                0 => PartitionScheme::Iid,
                1 => PartitionScheme::TotallyNonIid,
                2 => PartitionScheme::Mixed { p: 0.8 },
                _ => PartitionScheme::Shards { per_client: 2 },
            };
            let result = partition(&ds, &spec(scheme.clone(), n, seed));
            if let Ok(split) = result {
                let mut all: Vec<usize> = split.clients().iter().flatten().copied().collect();
                let total = all.len();
                all.sort_unstable();
                all.dedup();
                prop_assert_eq!(all.len(), total, "duplicate indices");
                // Equal-chunk truncation: the remainder is bounded by the
                // number of chunks (n clients, or k*n shards).
                let divisor = match scheme {
                    PartitionScheme::Shards { per_client } => per_client * n,
                    _ => n,
                };
                prop_assert!(ds.len() - total < divisor,
                    "dropped {} of {}", ds.len() - total, ds.len());
                prop_assert!(total <= ds.len());
            }
        }
    }
}
