//! Order-stable reductions.

use rayon::prelude::*;

/// Pairwise (tree) summation in index order.
///
/// The split points depend only on the length, so the result is bit-identical
/// no matter how the inputs were produced or how many threads computed them.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Maps `f` over `0..n` in parallel, then reduces with [`pairwise_sum`].
pub fn par_indexed_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let terms: Vec<f64> = (0..n).into_par_iter().map(f).collect();
    pairwise_sum(&terms)
}

/// Fallible variant of [`par_indexed_sum`]; the first error in index order wins.
pub fn try_par_indexed_sum<F, E>(n: usize, f: F) -> Result<f64, E>
where
    F: Fn(usize) -> Result<f64, E> + Sync + Send,
    E: Send,
{
    let terms: Vec<f64> = (0..n).into_par_iter().map(f).collect::<Result<_, E>>()?;
    Ok(pairwise_sum(&terms))
}

/// Sample mean and (n - 1)-denominator standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    // Constant inputs return themselves exactly rather than a rounded mean.
    if values.iter().all(|v| *v == values[0]) {
        return (values[0], 0.0);
    }
    let mean = pairwise_sum(values) / n as f64;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    (mean, (pairwise_sum(&sq) / (n - 1) as f64).sqrt())
}

/// `n` evenly spaced points covering `[lo, hi]`, with both endpoints exact.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
            v[n - 1] = hi;
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
        assert_eq!(par_indexed_sum(1000, |i| (i + 1) as f64), 500_500.0);
    }

    #[test]
    fn parallel_sum_is_bit_stable() {
        let f = |i: usize| ((i as f64) * 0.37).sin() / 3.0;
        let a = par_indexed_sum(10_007, f);
        let serial: Vec<f64> = (0..10_007).map(f).collect();
        assert_eq!(a.to_bits(), pairwise_sum(&serial).to_bits());
    }

    #[test]
    fn mean_std_small() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
        assert_eq!(mean_std(&[0.37; 3]), (0.37, 0.0));
    }

    #[test]
    fn linspace_endpoints() {
        let v = linspace(-0.3, 0.7, 11);
        assert_eq!(v[0], -0.3);
        assert_eq!(v[10], 0.7);
        assert_eq!(v.len(), 11);
    }
}
