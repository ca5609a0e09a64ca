mod common;

use common::*;
use goalreach::data::collect_random;
use goalreach::EnvConfig;

#[test]
fn geometric_offsets_fit_chi_square() {
    for (p, seed) in [(0.3, 1), (0.1, 2), (0.7, 3)] {
        let (stat, pval) = geometric_chi_square(p, 100_000, 15, seed);
        assert!(pval > 1e-3, "p = {p}: chi2 {stat:.1}, p-value {pval:.2e}");
    }
}

#[test]
fn filtered_noise_has_stationary_moments() {
    for (sd, beta) in [(0.6, 0.5), (1.0, 0.2), (0.3, 1.0)] {
        let (mean, var, rho) = filtered_moments(sd, beta, 100_000, 9);
        let v = filtered_variance(sd, beta);
        assert!(mean.abs() < 4.0 * (v / 1e4).sqrt(), "mean {mean}");
        assert!((var / v - 1.0).abs() < 0.05, "variance {var} vs {v}");
        assert!((rho - (1.0 - beta)).abs() < 0.02, "lag-1 {rho} vs {}", 1.0 - beta);
    }
}

#[test]
fn spearman_helper_handles_ties() {
    assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    let r = spearman(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]);
    assert!(r > 0.9 && r < 1.0);
}

#[test]
fn datasets_round_trip_for_every_environment() {
    for env in [
        EnvConfig::gridworld(5),
        EnvConfig::pointmass2d(),
        EnvConfig::planarpush(),
    ] {
        let data = collect_random(&env, 12, &[0.6, 0.6], 0.5, 4).unwrap();
        assert!(round_trip_exact(&data), "{:?}", env.kind);
    }
}

