//! Bootstrap intervals, a permutation test and a two-proportion z-test on
//! two groups of binary outcomes.

use deferral_lab::analyze::{accuracy, bootstrap_ci, bootstrap_diff_ci, permutation_test, two_proportion_ztest};

fn outcomes(correct: usize, n: usize) -> Vec<bool> {
    (0..n).map(|i| i < correct).collect()
}

fn main() -> deferral_lab::Result<()> {
    let baseline = outcomes(60, 138);
    let assisted = outcomes(84, 138);
    let (lo, hi) = bootstrap_ci(&assisted, 10_000, 42, 0.95)?;
    println!("assisted accuracy {:.1}% [{:.1}, {:.1}]", 100.0 * accuracy(&assisted), 100.0 * lo, 100.0 * hi);
    let (lo, hi) = bootstrap_diff_ci(&assisted, &baseline, 10_000, 43, 0.95)?;
    println!(
        "difference {:+.1}pp [{:+.1}, {:+.1}]",
        100.0 * (accuracy(&assisted) - accuracy(&baseline)),
        100.0 * lo,
        100.0 * hi
    );
    println!("permutation p = {:.4}", permutation_test(&assisted, &baseline, 10_000, 44)?);
    let z = two_proportion_ztest(84, 138, 60, 138)?;
    println!("z-test: z = {:.2}, p = {:.4}", z.z, z.p);
    Ok(())
}
