//! Resampling statistics over boolean outcomes.
//!
//! Every resample draws from its own stream keyed by `(seed, index)`, so the
//! parallel loops below return exactly what a sequential loop would.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng;

fn successes(obs: &[bool]) -> usize {
    obs.iter().filter(|&&b| b).count()
}

pub fn accuracy(obs: &[bool]) -> f64 {
    successes(obs) as f64 / obs.len() as f64
}

/// Linear-interpolated quantile of sorted data (the "type 7" definition).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn percentile_interval(mut stats: Vec<f64>, level: f64) -> (f64, f64) {
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (quantile(&stats, tail), quantile(&stats, 1.0 - tail))
}

fn resampled_mean(obs: &[bool], rng: &mut rng::Pcg64) -> f64 {
    let n = obs.len();
    let hits = (0..n).filter(|_| obs[rng::below(rng, n)]).count();
    hits as f64 / n as f64
}

fn check(obs: &[bool], n_resamples: usize, level: f64) -> Result<()> {
    if obs.is_empty() {
        return Err(Error::InvalidInput("bootstrap needs at least one observation".into()));
    }
    if n_resamples == 0 {
        return Err(Error::InvalidInput("bootstrap needs at least one resample".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("confidence level {level} outside (0,1)")));
    }
    Ok(())
}

/// Percentile bootstrap interval for the accuracy of `obs`.
pub fn bootstrap_ci(obs: &[bool], n_resamples: usize, seed: u64, level: f64) -> Result<(f64, f64)> {
    check(obs, n_resamples, level)?;
    let stats: Vec<f64> = (0..n_resamples as u64)
        .into_par_iter()
        .map(|i| resampled_mean(obs, &mut rng::resample_stream(seed, "bootstrap", i)))
        .collect();
    Ok(percentile_interval(stats, level))
}

/// Percentile bootstrap interval for `accuracy(a) - accuracy(b)`, resampling
/// each group independently.
pub fn bootstrap_diff_ci(a: &[bool], b: &[bool], n_resamples: usize, seed: u64, level: f64) -> Result<(f64, f64)> {
    check(a, n_resamples, level)?;
    check(b, n_resamples, level)?;
    let stats: Vec<f64> = (0..n_resamples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::resample_stream(seed, "bootstrap-diff", i);
            resampled_mean(a, &mut rng) - resampled_mean(b, &mut rng)
        })
        .collect();
    Ok(percentile_interval(stats, level))
}

/// Two-sided label-shuffle permutation test on the accuracy difference.
///
/// `p = (1 + #{|perm stat| >= |observed stat|}) / (1 + n_permutations)`.
/// Statistics are compared as exact integer cross-products, so ties are
/// never lost to rounding.
pub fn permutation_test(a: &[bool], b: &[bool], n_permutations: usize, seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("permutation test needs two non-empty groups".into()));
    }
    let (na, nb) = (a.len() as i64, b.len() as i64);
    let total = successes(a) as i64 + successes(b) as i64;
    // |k_a/n_a - k_b/n_b| scaled by n_a * n_b
    let stat = |ka: i64| (ka * nb - (total - ka) * na).abs();
    let observed = stat(successes(a) as i64);
    let pooled: Vec<bool> = a.iter().chain(b).copied().collect();
    let extreme: usize = (0..n_permutations as u64)
        .into_par_iter()
        .map_init(
            || pooled.clone(),
            |buf, i| {
                let mut rng = rng::resample_stream(seed, "permutation", i);
                rng::partial_shuffle(&mut rng, buf, a.len());
                let ka = successes(&buf[..a.len()]) as i64;
                (stat(ka) >= observed) as usize
            },
        )
        .sum();
    Ok((1 + extreme) as f64 / (1 + n_permutations) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    pub p: f64,
    /// Pooled proportion was 0 or 1; `z` is reported as 0 by convention.
    pub degenerate: bool,
}

/// Pooled two-proportion z-test, two-sided.
pub fn two_proportion_ztest(k1: u64, n1: u64, k2: u64, n2: u64) -> Result<ZTest> {
    if n1 == 0 || n2 == 0 || k1 > n1 || k2 > n2 {
        return Err(Error::InvalidInput(format!("invalid counts {k1}/{n1} vs {k2}/{n2}")));
    }
    let (p1, p2) = (k1 as f64 / n1 as f64, k2 as f64 / n2 as f64);
    let pooled = (k1 + k2) as f64 / (n1 + n2) as f64;
    if pooled == 0.0 || pooled == 1.0 {
        return Ok(ZTest {
            z: 0.0,
            p: 1.0,
            degenerate: true,
        });
    }
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    let z = (p1 - p2) / se;
    Ok(ZTest {
        z,
        p: erfc(z.abs() / std::f64::consts::SQRT_2),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcomes(k: usize, n: usize) -> Vec<bool> {
        (0..n).map(|i| i < k).collect()
    }

    #[test]
    fn bootstrap_degenerate_and_deterministic() {
        assert_eq!(bootstrap_ci(&[true; 30], 500, 1, 0.95).unwrap(), (1.0, 1.0));
        let obs = outcomes(40, 90);
        let a = bootstrap_ci(&obs, 1000, 5, 0.95).unwrap();
        assert_eq!(a, bootstrap_ci(&obs, 1000, 5, 0.95).unwrap());
        assert_ne!(a, bootstrap_ci(&obs, 1000, 6, 0.95).unwrap());
        assert!(bootstrap_ci(&[], 10, 1, 0.95).is_err());
    }

    #[test]
    fn bootstrap_matches_reported_interval() {
        // 84 of 138 correct (60.9%); reported interval [52.9, 68.8]
        let (lo, hi) = bootstrap_ci(&outcomes(84, 138), 10_000, 42, 0.95).unwrap();
        assert!((lo * 100.0 - 52.9).abs() <= 1.0, "lo {lo}");
        assert!((hi * 100.0 - 68.8).abs() <= 1.0, "hi {hi}");
    }

    #[test]
    fn permutation_extremes() {
        let a = outcomes(20, 50);
        assert_eq!(permutation_test(&a, &a, 999, 3).unwrap(), 1.0);
        let p = permutation_test(&[true; 50], &[false; 50], 999, 3).unwrap();
        assert_eq!(p, 1.0 / 1000.0);
    }

    #[test]
    fn permutation_detects_known_gap() {
        // 60% vs 40% with 200 per side. Closed-form pooled z = 4.0, two-sided
        // normal p = 6.3e-5, far below 0.01.
        let z = two_proportion_ztest(120, 200, 80, 200).unwrap();
        assert!((z.z - 4.0).abs() < 1e-9 && z.p < 1e-4);
        let p = permutation_test(&outcomes(120, 200), &outcomes(80, 200), 2000, 11).unwrap();
        assert!(p < 0.01, "p = {p}");
    }

    #[test]
    fn overreliance_gap_is_significant() {
        // Top-2 84/138 vs baseline 60/138 on AI-correct items: +17.4pp.
        let p = permutation_test(&outcomes(84, 138), &outcomes(60, 138), 10_000, 42).unwrap();
        assert!(p < 0.02, "p = {p}");
        let diff = accuracy(&outcomes(84, 138)) - accuracy(&outcomes(60, 138));
        assert!((diff * 100.0 - 17.4).abs() < 0.05);
    }

    #[test]
    fn ztest_values() {
        let z = two_proportion_ztest(196, 513, 338, 1618).unwrap();
        assert!((z.z - 7.89).abs() <= 0.05, "z = {}", z.z);
        assert!(z.p < 0.001);
        assert_eq!(two_proportion_ztest(5, 10, 50, 100).unwrap().z, 0.0);
        // 8/10 vs 2/10: pooled 0.5, se = sqrt(0.25 * 0.2), z = 0.6 / sqrt(0.05)
        let z = two_proportion_ztest(8, 10, 2, 10).unwrap();
        assert!((z.z - 0.6 / 0.05f64.sqrt()).abs() < 1e-9);
        assert!((z.z - 2.683_281_572_999_748).abs() < 1e-9);
        let d = two_proportion_ztest(0, 10, 0, 20).unwrap();
        assert!(d.degenerate && d.z == 0.0);
    }
}
