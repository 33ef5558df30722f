//! Summary statistics and the paired signed-rank test used by the seed
//! comparisons.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ranks of `xs` starting at 1, ties sharing their average rank.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Outcome of [`signed_rank_greater`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedRank {
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    /// Non-zero differences used.
    pub n: usize,
    pub p_value: f64,
}

/// Exact one-sided Wilcoxon signed-rank test of `x > y` on paired samples.
/// Zero differences are dropped; the null distribution is enumerated over
/// all sign assignments of the observed ranks, so ties are handled exactly.
///
/// # Panics
/// If the samples differ in length or more than 24 non-zero pairs remain.
pub fn signed_rank_greater(x: &[f64], y: &[f64]) -> SignedRank {
    assert_eq!(x.len(), y.len(), "paired samples");
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = d.len();
    assert!(n <= 24, "exact enumeration limited to 24 pairs");
    if n == 0 {
        return SignedRank {
            w_plus: 0.0,
            n,
            p_value: 1.0,
        };
    }
    let ranks = average_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let mut at_least = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w >= w_plus - 1e-9 {
            at_least += 1;
        }
    }
    SignedRank {
        w_plus,
        n,
        p_value: at_least as f64 / (1u64 << n) as f64,
    }
}
