//! Fits every calibrator to overconfident scores and compares test-set ECE,
//! Brier score and AUROC before and after.

use deferral_lab::calibrate::{auroc, brier, ece, fit_calibrator, reliability_curve, CalibratorKind, ScoredPair};
use deferral_lab::rng;

fn sample(seed: u64, n: usize) -> Vec<ScoredPair> {
    let mut r = rng::stream(seed, b"calibrate_scores");
    (0..n)
        .map(|_| {
            let score = rng::unit(&mut r);
            // the true hit rate is score squared, so raw scores run high
            ScoredPair::new(score, rng::unit(&mut r) < score * score)
        })
        .collect()
}

fn main() -> deferral_lab::Result<()> {
    let train = sample(1, 2000);
    let test = sample(2, 2000);
    println!("{:<12} {:>7} {:>7} {:>7}", "calibrator", "ECE", "Brier", "AUROC");
    for kind in CalibratorKind::ALL {
        let map = fit_calibrator(&train, kind)?;
        let mapped: Vec<ScoredPair> = test.iter().map(|p| ScoredPair::new(map.apply(p.score), p.label)).collect();
        println!(
            "{:<12} {:>7.4} {:>7.4} {:>7.4}",
            kind.name(),
            ece(&mapped, 10),
            brier(&mapped),
            auroc(&mapped).unwrap_or(f64::NAN)
        );
    }
    println!("\nraw reliability (bin mean score -> accuracy):");
    for p in reliability_curve(&test, 10) {
        println!("  {:.2} -> {:.2} (n={})", p.bin_mean_score, p.bin_accuracy, p.bin_count);
    }
    Ok(())
}
