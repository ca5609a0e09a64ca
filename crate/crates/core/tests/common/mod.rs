#![allow(dead_code)]

use goalreach::data::{self, sample_geometric_offset, FilteredNoise, OfflineDataset};
use goalreach::rng::seeded;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson chi-square of `n` geometric offsets against `Geom(p)` on
/// `{1, 2, ...}`, with the tail past `bins` pooled. Returns `(statistic, p-value)`.
pub fn geometric_chi_square(p: f64, n: usize, bins: usize, seed: u64) -> (f64, f64) {
    let mut rng = seeded(seed);
    let mut counts = vec![0usize; bins + 1];
    for _ in 0..n {
        let k = sample_geometric_offset(p, &mut rng);
        counts[(k - 1).min(bins)] += 1;
    }
    let mut stat = 0.0;
    let mut mass = 0.0;
    for (i, &c) in counts.iter().enumerate() {
        let prob = if i < bins {
            p * (1.0 - p).powi(i as i32)
        } else {
            1.0 - mass
        };
        mass += prob;
        let expected = prob * n as f64;
        stat += (c as f64 - expected).powi(2) / expected;
    }
    let dof = bins as f64;
    (stat, 1.0 - ChiSquared::new(dof).unwrap().cdf(stat))
}

/// Sample mean, variance and lag-1 autocorrelation of one dimension of the
/// filtered noise process after discarding `burn_in` samples.
pub fn filtered_moments(stdev: f64, beta: f64, n: usize, seed: u64) -> (f64, f64, f64) {
    let mut rng = seeded(seed);
    let mut noise = FilteredNoise::new(vec![stdev], beta).unwrap();
    for _ in 0..100 {
        noise.sample(&mut rng);
    }
    let xs: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)[0]).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let cov = xs
        .windows(2)
        .map(|w| (w[0] - mean) * (w[1] - mean))
        .sum::<f64>()
        / (n - 1) as f64;
    (mean, var, cov / var)
}

/// Stationary variance `β σ² / (2 − β)` of `x_t = β u_t + (1 − β) x_{t−1}`.
pub fn filtered_variance(stdev: f64, beta: f64) -> f64 {
    beta * stdev * stdev / (2.0 - beta)
}

/// Saves, reloads and re-saves `dataset`; true when the reload equals the
/// stored data and both saves produce identical files.
pub fn round_trip_exact(dataset: &OfflineDataset) -> bool {
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = da.path().join("data.manifest");
    let b = db.path().join("data.manifest");
    data::save(dataset, &a).unwrap();
    let back = data::load(&a).unwrap();
    data::save(&back, &b).unwrap();
    let same_files = std::fs::read(data::blob_path(&a)).unwrap()
        == std::fs::read(data::blob_path(&b)).unwrap()
        && std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
    same_files && back == dataset.without_states()
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|x| (x - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
