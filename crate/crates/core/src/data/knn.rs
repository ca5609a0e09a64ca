use rand::seq::index;
use rand::Rng as _;

use super::OfflineDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Exact nearest-neighbour index over actuated keys.
#[derive(Clone, Debug)]
pub struct KnnIndex {
    dim: usize,
    /// `rows × dim`, row-major.
    keys: Vec<f64>,
    /// `(trajectory, timestep)` of each row.
    refs: Vec<(usize, usize)>,
    /// Rows sorted by their first key coordinate, with that coordinate.
    by_x: Vec<(f64, usize)>,
}

impl KnnIndex {
    /// Indexes a uniform subsample of at most `max_points` observations.
    pub fn build(dataset: &OfflineDataset, max_points: usize, seed: u64) -> Result<Self> {
        if max_points == 0 {
            return Err(Error::Config("max_points must be at least 1".into()));
        }
        let all: Vec<(usize, usize)> = dataset
            .trajectories
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..=t.len()).map(move |s| (i, s)))
            .collect();
        if all.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let refs: Vec<(usize, usize)> = if max_points >= all.len() {
            all
        } else {
            let mut picked =
                index::sample(&mut crate::rng::seeded(seed), all.len(), max_points).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| all[i]).collect()
        };
        let dim = dataset.key_dim();
        let keys = refs
            .iter()
            .flat_map(|&(i, s)| dataset.trajectories[i].key(s).iter().map(|&v| f64::from(v)))
            .collect();
        Self::from_keys(dim, keys, refs)
    }

    pub fn from_keys(dim: usize, keys: Vec<f64>, refs: Vec<(usize, usize)>) -> Result<Self> {
        if keys.len() != refs.len() * dim {
            return Err(Error::shape("knn keys", refs.len() * dim, keys.len()));
        }
        if dim == 0 {
            return Err(Error::Config("knn keys need at least one dimension".into()));
        }
        let mut by_x: Vec<(f64, usize)> = keys.chunks_exact(dim).map(|k| k[0]).zip(0..).collect();
        by_x.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(Self {
            dim,
            keys,
            refs,
            by_x,
        })
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn key(&self, row: usize) -> &[f64] {
        &self.keys[row * self.dim..(row + 1) * self.dim]
    }

    pub fn refs(&self) -> &[(usize, usize)] {
        &self.refs
    }

    /// The `k` nearest rows to `query` under squared ℓ2, skipping rows from
    /// trajectory `exclude`. Sorted by distance, ties by row index. Returns
    /// every eligible row when fewer than `k` exist.
    pub fn nearest(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k == 0 {
            return Vec::new();
        }
        // Sorted buffer of the best rows under (distance, row). Candidates are
        // visited outward from the query along the first coordinate and the
        // scan stops once that coordinate alone rules out any improvement.
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        let visit = |x: f64, row: usize, best: &mut Vec<(f64, usize)>| -> bool {
            let dx = x - query[0];
            if best.len() == k && dx * dx > best[k - 1].0 {
                return false;
            }
            if Some(self.refs[row].0) != exclude {
                let d: f64 = self
                    .key(row)
                    .iter()
                    .zip(query)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let cand = (d, row);
                if best.len() < k || cmp(&cand, &best[k - 1]).is_lt() {
                    let pos = best.partition_point(|c| cmp(c, &cand).is_lt());
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            true
        };
        let start = self.by_x.partition_point(|c| c.0 < query[0]);
        for &(x, row) in &self.by_x[start..] {
            if !visit(x, row, &mut best) {
                break;
            }
        }
        for &(x, row) in self.by_x[..start].iter().rev() {
            if !visit(x, row, &mut best) {
                break;
            }
        }
        best
    }

    /// A uniformly chosen member of the `k` nearest rows from other
    /// trajectories, as `(trajectory, timestep)`.
    pub fn sample_negative_goal(
        &self,
        query: &[f64],
        k: usize,
        exclude: usize,
        rng: &mut Rng,
    ) -> Option<(usize, usize)> {
        let near = self.nearest(query, k.max(1), Some(exclude));
        if near.is_empty() {
            return None;
        }
        let (_, row) = near[rng.random_range(0..near.len())];
        Some(self.refs[row])
    }
}
