//! Splitting sample indices across clients.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PartitionScheme {
    /// Uniformly shuffled, equal-size shards.
    Iid,
    /// Samples sorted by a key and cut into `n·shards_per_client` contiguous
    /// shards, which are shuffled and dealt out.
    SortedShards { shards_per_client: usize },
    /// Client proportions drawn from a symmetric Dirichlet(α).
    Dirichlet { alpha: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub scheme: PartitionScheme,
    /// Sample indices of each client, in ascending order.
    pub assignment: Vec<Vec<usize>>,
    /// Remainder samples left out so that every client holds the same count.
    pub dropped: Vec<usize>,
}

impl Partition {
    pub fn n_clients(&self) -> usize {
        self.assignment.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignment.iter().map(Vec::len).collect()
    }
}

/// Equal-size schemes drop `n_samples mod (n_clients·shards)` samples; the
/// Dirichlet scheme assigns every sample and guarantees each client at least
/// one. `keys` orders samples for `SortedShards` (sample index when absent).
pub fn partition_dataset(
    n_samples: usize,
    n_clients: usize,
    scheme: PartitionScheme,
    keys: Option<&[f64]>,
    stream: &RngStream,
) -> Result<Partition> {
    if n_clients == 0 || n_clients > n_samples {
        return Err(Error::InvalidScheme(format!(
            "need 1 <= clients <= samples (got {n_clients} clients, {n_samples} samples)"
        )));
    }
    let mut rng = stream.rng();
    let (mut assignment, dropped) = match scheme {
        PartitionScheme::Iid => {
            let mut idx: Vec<usize> = (0..n_samples).collect();
            idx.shuffle(&mut rng);
            deal_equal(&idx, n_clients, 1, &mut rng, false)
        }
        PartitionScheme::SortedShards { shards_per_client } => {
            if shards_per_client < 1 || n_clients * shards_per_client > n_samples {
                return Err(Error::InvalidScheme(format!(
                    "shards_per_client must be >= 1 with clients*shards <= samples (got {shards_per_client})"
                )));
            }
            let mut idx: Vec<usize> = (0..n_samples).collect();
            if let Some(k) = keys {
                if k.len() != n_samples {
                    return Err(Error::InvalidScheme(format!(
                        "{} keys for {n_samples} samples",
                        k.len()
                    )));
                }
                idx.sort_by(|&a, &b| k[a].total_cmp(&k[b]).then(a.cmp(&b)));
            }
            deal_equal(&idx, n_clients, shards_per_client, &mut rng, true)
        }
        PartitionScheme::Dirichlet { alpha } => {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::InvalidScheme(format!(
                    "Dirichlet alpha must be > 0 (got {alpha})"
                )));
            }
            (
                dirichlet(n_samples, n_clients, alpha, &mut rng)?,
                Vec::new(),
            )
        }
    };
    for a in &mut assignment {
        a.sort_unstable();
    }
    Ok(Partition {
        scheme,
        assignment,
        dropped,
    })
}

/// Cuts `order` into `n·shards` contiguous equal shards and gives each client
/// `shards` of them, optionally after shuffling the shard order.
fn deal_equal(
    order: &[usize],
    n: usize,
    shards: usize,
    rng: &mut impl Rng,
    shuffle_shards: bool,
) -> (Vec<Vec<usize>>, Vec<usize>) {
    let total = n * shards;
    let len = order.len() / total;
    let used = len * total;
    let mut ids: Vec<usize> = (0..total).collect();
    if shuffle_shards {
        ids.shuffle(rng);
    }
    let assignment = (0..n)
        .map(|c| {
            ids[c * shards..(c + 1) * shards]
                .iter()
                .flat_map(|&s| order[s * len..(s + 1) * len].iter().copied())
                .collect()
        })
        .collect();
    let mut dropped = order[used..].to_vec();
    dropped.sort_unstable();
    (assignment, dropped)
}

fn dirichlet(
    n_samples: usize,
    n: usize,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidScheme(e.to_string()))?;
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    // all draws can underflow for tiny alpha; fall back to uniform weights
    let weights: Vec<f64> = if total > 0.0 {
        draws.iter().map(|d| d / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    };
    let mut idx: Vec<usize> = (0..n_samples).collect();
    idx.shuffle(rng);
    let mut assignment: Vec<Vec<usize>> = idx[..n].iter().map(|&j| vec![j]).collect();
    for &j in &idx[n..] {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut c = n - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                c = i;
                break;
            }
        }
        assignment[c].push(j);
    }
    Ok(assignment)
}
