//! Gini impurity and the information gain of a binary split.

pub fn gini(histogram: &[u32]) -> f64 {
    let n: u64 = histogram.iter().map(|&c| c as u64).sum();
    if n == 0 {
        return 0.0;
    }
    let sq: u64 = histogram.iter().map(|&c| (c as u64) * (c as u64)).sum();
    1.0 - sq as f64 / (n as f64 * n as f64)
}

/// `L(R) - |Rl|/|R| L(Rl) - |Rr|/|R| L(Rr)` with Gini impurity, where the
/// parent histogram is `left + right`.
///
/// Evaluated as the single rational
/// `(Sl/nl + Sr/nr - St/n) / n` (S = sum of squared class counts) in exact
/// integer arithmetic, so the result is never negative.
pub fn gini_gain(left: &[u32], right: &[u32]) -> f64 {
    debug_assert_eq!(left.len(), right.len());
    let nl: i128 = left.iter().map(|&c| c as i128).sum();
    let nr: i128 = right.iter().map(|&c| c as i128).sum();
    if nl == 0 || nr == 0 {
        return 0.0;
    }
    let n = nl + nr;
    let sq = |h: &mut dyn Iterator<Item = i128>| h.map(|c| c * c).sum::<i128>();
    let sl = sq(&mut left.iter().map(|&c| c as i128));
    let sr = sq(&mut right.iter().map(|&c| c as i128));
    let st = sq(&mut left.iter().zip(right).map(|(&a, &b)| a as i128 + b as i128));
    let numerator = sl * nr * n + sr * nl * n - st * nl * nr;
    let denominator = nl * nr * n * n;
    numerator as f64 / denominator as f64
}
