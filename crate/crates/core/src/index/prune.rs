//! Per-chunk diversity pruning and random subsampling of question indices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{distance_unchecked, Granularity, IndexEntry, VectorIndex};
use crate::error::{Error, Result};

/// Cosine-distance threshold below which two same-chunk questions are redundant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneConfig {
    tau: f64,
}

impl PruneConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(0.0..=2.0).contains(&tau) {
            return Err(Error::Invalid(format!("tau {tau} outside [0, 2]")));
        }
        Ok(PruneConfig { tau })
    }

    /// Clamps into `[0, 2]` instead of rejecting.
    pub fn clamped(tau: f64) -> Self {
        PruneConfig {
            tau: if tau.is_nan() { 0.0 } else { tau.clamp(0.0, 2.0) },
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Greedy min-pair elimination within one chunk.
///
/// Returns (position in `group`, pair distance) for each removal, in order,
/// until one entry is left. Each step takes the closest surviving pair
/// (first in row-major order on ties) and removes the member with the larger
/// (atom index, question index). Pair distances along the sequence never
/// decrease, so pruning at any threshold is a prefix of it.
fn elimination_order(entries: &[IndexEntry], group: &[usize]) -> Vec<(usize, f64)> {
    let n = group.len();
    if n < 2 {
        return Vec::new();
    }
    let mut dist = vec![0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = distance_unchecked(&entries[group[i]].vector, &entries[group[j]].vector);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut alive = vec![true; n];
    // nearest later survivor per row
    let mut nearest: Vec<Option<(f64, usize)>> = vec![None; n];
    let row_best = |i: usize, alive: &[bool]| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for j in i + 1..n {
            if alive[j] {
                let d = dist[i * n + j];
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
        }
        best
    };
    for (i, slot) in nearest.iter_mut().enumerate() {
        *slot = row_best(i, &alive);
    }

    let mut order = Vec::with_capacity(n - 1);
    for _ in 1..n {
        let mut pick: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            if let Some((d, j)) = nearest[i] {
                if pick.is_none_or(|(pd, _, _)| d < pd) {
                    pick = Some((d, i, j));
                }
            }
        }
        let (d, i, j) = pick.expect("two or more survivors means some pair exists");
        let victim = if entries[group[j]].ordinal() >= entries[group[i]].ordinal() {
            j
        } else {
            i
        };
        alive[victim] = false;
        order.push((victim, d));
        for r in 0..n {
            if alive[r] && nearest[r].is_some_and(|(_, c)| c == victim) {
                nearest[r] = row_best(r, &alive);
            }
        }
        nearest[victim] = None;
    }
    order
}

fn require_questions(index: &VectorIndex) -> Result<()> {
    if index.granularity() != Granularity::Question {
        return Err(Error::Invalid(format!(
            "pruning needs a question index, got {}",
            index.granularity()
        )));
    }
    Ok(())
}

struct Eliminations {
    groups: Vec<Vec<usize>>,
    orders: Vec<Vec<(usize, f64)>>,
}

impl Eliminations {
    fn compute(index: &VectorIndex) -> Self {
        use rayon::prelude::*;
        let groups = index.chunk_groups();
        let orders = groups
            .par_iter()
            .map(|g| elimination_order(index.entries(), g))
            .collect();
        Eliminations { groups, orders }
    }

    fn apply(&self, index: &VectorIndex, tau: f64) -> Result<VectorIndex> {
        let mut keep = vec![true; index.len()];
        for (group, order) in self.groups.iter().zip(&self.orders) {
            for &(victim, _) in order.iter().take_while(|(_, d)| *d < tau) {
                keep[group[victim]] = false;
            }
        }
        let entries = index
            .entries()
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(e, _)| e.clone())
            .collect();
        index.with_entries(entries)
    }
}

/// Within each chunk, repeatedly drops one member of the closest pair until
/// every surviving pair is at least `tau` apart. A chunk always keeps one question.
pub fn prune_questions(index: &VectorIndex, config: PruneConfig) -> Result<VectorIndex> {
    require_questions(index)?;
    Eliminations::compute(index).apply(index, config.tau())
}

/// Prunes at each threshold; thresholds must be ascending within `[0, 2]`.
pub fn sweep_tau(index: &VectorIndex, taus: &[f64]) -> Result<Vec<(f64, usize, VectorIndex)>> {
    require_questions(index)?;
    for t in taus {
        PruneConfig::new(*t)?;
    }
    if taus.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Invalid("tau values must be ascending".into()));
    }
    let elim = Eliminations::compute(index);
    taus.iter()
        .map(|&t| {
            let pruned = elim.apply(index, t)?;
            Ok((t, pruned.len(), pruned))
        })
        .collect()
}

/// Keeps `max(1, round(fraction * n))` uniformly sampled entries per chunk.
pub fn sample_questions(index: &VectorIndex, fraction: f64, seed: u64) -> Result<VectorIndex> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Invalid(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; index.len()];
    for group in index.chunk_groups() {
        let n = group.len();
        let m = ((fraction * n as f64).round() as usize).clamp(1, n);
        for pos in rand::seq::index::sample(&mut rng, n, m) {
            keep[group[pos]] = true;
        }
    }
    let entries = index
        .entries()
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(e, _)| e.clone())
        .collect();
    index.with_entries(entries)
}
