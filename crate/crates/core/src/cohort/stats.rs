//! Small descriptive and test statistics used by the baseline table.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Quantile by linear interpolation between order statistics
/// (`h = (n - 1) p`). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// (Q1, median, Q3).
pub fn quartiles(values: &[f64]) -> (f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.75))
}

/// Mid-ranks (1-based) of the pooled sample, plus Σ(t³ - t) over tie groups.
pub fn midranks(pooled: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    (ranks, tie_term)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub degenerate: bool,
}

impl TestResult {
    fn degenerate() -> Self {
        Self { statistic: 0.0, p_value: 1.0, degenerate: true }
    }
}

/// Two-sided Wilcoxon rank-sum test, normal approximation with continuity and
/// tie correction. The statistic is U of the first sample.
pub fn rank_sum_test(a: &[f64], b: &[f64]) -> TestResult {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    if a.is_empty() || b.is_empty() {
        return TestResult::degenerate();
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, tie_term) = midranks(&pooled);
    let r1: f64 = ranks[..a.len()].iter().sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let n = n1 + n2;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return TestResult::degenerate();
    }
    let diff = (u - n1 * n2 / 2.0).abs();
    let z = (diff - 0.5).max(0.0) / var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let p = (2.0 * std.sf(z)).min(1.0);
    TestResult { statistic: u, p_value: p, degenerate: false }
}

/// Pearson chi-square test of independence on a groups × categories table
/// (no continuity correction). Empty columns are dropped.
pub fn chi_square_test(table: &[Vec<u64>]) -> TestResult {
    let ncol = table.first().map_or(0, Vec::len);
    let cols: Vec<usize> = (0..ncol).filter(|&j| table.iter().map(|r| r[j]).sum::<u64>() > 0).collect();
    let rows: Vec<&Vec<u64>> = table.iter().filter(|r| cols.iter().map(|&j| r[j]).sum::<u64>() > 0).collect();
    if cols.len() < 2 || rows.len() < 2 {
        return TestResult::degenerate();
    }
    let row_tot: Vec<f64> = rows.iter().map(|r| cols.iter().map(|&j| r[j] as f64).sum()).collect();
    let col_tot: Vec<f64> = cols.iter().map(|&j| rows.iter().map(|r| r[j] as f64).sum()).collect();
    let total: f64 = row_tot.iter().sum();
    let mut stat = 0.0;
    for (i, r) in rows.iter().enumerate() {
        for (jj, &j) in cols.iter().enumerate() {
            let e = row_tot[i] * col_tot[jj] / total;
            let d = r[j] as f64 - e;
            stat += d * d / e;
        }
    }
    let df = ((rows.len() - 1) * (cols.len() - 1)) as f64;
    let p = ChiSquared::new(df).expect("positive df").sf(stat);
    TestResult { statistic: stat, p_value: p, degenerate: false }
}
