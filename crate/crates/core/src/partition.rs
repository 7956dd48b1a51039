//! Synthetic datasets and client partitioning.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LabeledExample;
use crate::seed::{rng_for, TAG_CENTROID, TAG_DATA, TAG_PARTITION};

/// Gaussian blobs, one per class, around centroids on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub examples_per_class: usize,
    pub cluster_spread: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn total_examples(&self) -> usize {
        self.num_classes * self.examples_per_class
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidInput("num_classes must be at least 2".into()));
        }
        if self.input_dim == 0 || self.examples_per_class == 0 {
            return Err(Error::InvalidInput(
                "input_dim and examples_per_class must be positive".into(),
            ));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::InvalidInput("cluster_spread must be positive".into()));
        }
        Ok(())
    }
}

/// Deterministic unit-norm centroid for `class`.
pub fn class_centroid(spec: &SyntheticSpec, class: usize) -> Vec<f64> {
    let mut rng = rng_for(spec.seed, &[TAG_CENTROID, class as u64]);
    loop {
        let v: Vec<f64> = (0..spec.input_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generates `examples_per_class` points per class, grouped by class in
/// ascending label order.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<LabeledExample>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.total_examples());
    for class in 0..spec.num_classes {
        let centroid = class_centroid(spec, class);
        let mut rng = rng_for(spec.seed, &[TAG_DATA, class as u64]);
        for _ in 0..spec.examples_per_class {
            let features = centroid
                .iter()
                .map(|c| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    c + spec.cluster_spread * noise
                })
                .collect();
            out.push(LabeledExample::new(features, class));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum PartitionScheme {
    Iid,
    LabelShard { classes_per_client: usize },
}

/// Per-client example indices. Assignments are disjoint and together cover
/// `0..n` exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub scheme: PartitionScheme,
    assignments: Vec<Vec<usize>>,
}

impl Partition {
    /// Builds a partition, checking the disjoint-cover invariant.
    pub fn new(scheme: PartitionScheme, assignments: Vec<Vec<usize>>) -> Result<Self> {
        let n: usize = assignments.iter().map(Vec::len).sum();
        let mut seen = vec![false; n];
        for idx in assignments.iter().flatten() {
            match seen.get_mut(*idx) {
                Some(slot) if !*slot => *slot = true,
                Some(_) => {
                    return Err(Error::InvalidInput(format!("index {idx} assigned twice")))
                }
                None => {
                    return Err(Error::InvalidInput(format!(
                        "index {idx} outside 0..{n}"
                    )))
                }
            }
        }
        Ok(Self { scheme, assignments })
    }

    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn num_examples(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn client(&self, client: usize) -> Option<&[usize]> {
        self.assignments.get(client).map(Vec::as_slice)
    }

    /// One line per client: `client_id: idx,idx,...`.
    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        for (client, idx) in self.assignments.iter().enumerate() {
            let joined = idx.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
            let _ = writeln!(out, "{client}: {joined}");
        }
        out
    }

    /// Parses a manifest written by [`Partition::to_manifest`]. Client ids
    /// must appear as `0, 1, 2, ...` in order.
    pub fn from_manifest(text: &str, scheme: PartitionScheme) -> Result<Self> {
        let mut assignments = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                line: lineno + 1,
                message: msg.to_string(),
            };
            let (id, rest) = line.split_once(':').ok_or_else(|| bad("missing `:`"))?;
            let id: usize = id.trim().parse().map_err(|_| bad("client id is not an integer"))?;
            if id != assignments.len() {
                return Err(bad("client ids must be consecutive from 0"));
            }
            let rest = rest.trim();
            let idx = if rest.is_empty() {
                Vec::new()
            } else {
                rest.split(',')
                    .map(|t| t.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("index is not an integer"))?
            };
            assignments.push(idx);
        }
        Self::new(scheme, assignments)
    }
}

/// Seeded global shuffle followed by round-robin dealing.
pub fn partition_iid(n_examples: usize, num_clients: usize, seed: u64) -> Result<Partition> {
    if num_clients == 0 {
        return Err(Error::InvalidInput("need at least one client".into()));
    }
    if num_clients > n_examples {
        return Err(Error::InvalidInput(format!(
            "{num_clients} clients but only {n_examples} examples"
        )));
    }
    let mut order: Vec<usize> = (0..n_examples).collect();
    order.shuffle(&mut rng_for(seed, &[TAG_PARTITION]));
    let mut assignments = vec![Vec::with_capacity(n_examples / num_clients + 1); num_clients];
    for (i, idx) in order.into_iter().enumerate() {
        assignments[i % num_clients].push(idx);
    }
    Partition::new(PartitionScheme::Iid, assignments)
}

/// Label-sorted shard partition.
///
/// `num_clients * classes_per_client` shards are cut so that no shard
/// crosses a class boundary: every class gets at least one shard and the
/// rest are handed out in proportion to class size (largest remainder).
/// Shards are then dealt to clients in a seeded random order,
/// `classes_per_client` each, which bounds every client's label set.
pub fn partition_label_shard(
    labels: &[usize],
    num_clients: usize,
    classes_per_client: usize,
    seed: u64,
) -> Result<Partition> {
    if num_clients == 0 || classes_per_client == 0 {
        return Err(Error::InvalidInput(
            "num_clients and classes_per_client must be at least 1".into(),
        ));
    }
    let mut sorted: Vec<usize> = (0..labels.len()).collect();
    sorted.sort_by_key(|&i| (labels[i], i));

    // contiguous runs of each class in label-sorted order
    let mut runs: Vec<&[usize]> = Vec::new();
    let mut start = 0;
    for end in 1..=sorted.len() {
        if end == sorted.len() || labels[sorted[end]] != labels[sorted[start]] {
            runs.push(&sorted[start..end]);
            start = end;
        }
    }
    let num_shards = num_clients * classes_per_client;
    if num_shards < runs.len() {
        return Err(Error::InvalidInput(format!(
            "{num_clients} clients x {classes_per_client} classes each cannot cover {} labels",
            runs.len()
        )));
    }

    let shards_per_class = allocate_shards(&runs, num_shards);
    let mut shards: Vec<Vec<usize>> = Vec::with_capacity(num_shards);
    for (run, &count) in runs.iter().zip(&shards_per_class) {
        for s in 0..count {
            let lo = s * run.len() / count;
            let hi = (s + 1) * run.len() / count;
            shards.push(run[lo..hi].to_vec());
        }
    }
    // only reachable when there are no labels at all
    shards.resize(num_shards, Vec::new());

    let mut shard_ids: Vec<usize> = (0..num_shards).collect();
    shard_ids.shuffle(&mut rng_for(seed, &[TAG_PARTITION]));
    let assignments = shard_ids
        .chunks(classes_per_client)
        .map(|chunk| {
            let mut mine = chunk.to_vec();
            mine.sort_unstable();
            mine.iter().flat_map(|&s| shards[s].iter().copied()).collect()
        })
        .collect();
    Partition::new(PartitionScheme::LabelShard { classes_per_client }, assignments)
}

fn allocate_shards(runs: &[&[usize]], num_shards: usize) -> Vec<usize> {
    let total: usize = runs.iter().map(|r| r.len()).sum();
    let mut counts = vec![1usize; runs.len()];
    if runs.is_empty() {
        return counts;
    }
    let extra = num_shards - runs.len();
    let mut remainders = Vec::with_capacity(runs.len());
    let mut handed = 0;
    for (c, run) in runs.iter().enumerate() {
        let q = extra * run.len();
        counts[c] += q / total;
        handed += q / total;
        remainders.push((q % total, c));
    }
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in remainders.iter().take(extra - handed) {
        counts[c] += 1;
    }
    counts
}

/// The examples owned by `client`, in assignment order.
pub fn client_dataset(
    partition: &Partition,
    dataset: &[LabeledExample],
    client: usize,
) -> Result<Vec<LabeledExample>> {
    let idx = partition.client(client).ok_or_else(|| {
        Error::InvalidInput(format!(
            "client {client} out of range for {} clients",
            partition.num_clients()
        ))
    })?;
    idx.iter()
        .map(|&i| {
            dataset.get(i).cloned().ok_or_else(|| {
                Error::InvalidInput(format!("example index {i} outside dataset"))
            })
        })
        .collect()
}

/// Distinct labels held by each client.
pub fn client_label_sets(partition: &Partition, labels: &[usize]) -> Vec<BTreeSet<usize>> {
    partition
        .assignments()
        .iter()
        .map(|idx| idx.iter().map(|&i| labels[i]).collect())
        .collect()
}

/// Uniform sample of `m` distinct indices below `n`, sorted ascending.
pub(crate) fn sample_sorted(n: usize, m: usize, rng: &mut crate::seed::SimRng) -> Vec<usize> {
    let mut picked = index::sample(rng, n, m).into_vec();
    picked.sort_unstable();
    picked
}
