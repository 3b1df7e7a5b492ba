//! Sample statistics with an order-stable reduction.
//!
//! All sums use a fixed pairwise tree so that totals are bit-identical for a
//! given sample order, independent of how the samples were produced.

/// Pairwise tree sum with a small linear base case.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn mean(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "mean of empty sample");
    pairwise_sum(values) / values.len() as f64
}

/// Sample mean and standard error of the mean.
///
/// The standard error is zero when the sample is a single point or all
/// entries coincide exactly; callers are expected to fall back to exact
/// comparisons in that case.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n > 0, "statistics of empty sample");
    let m = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (m, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}
