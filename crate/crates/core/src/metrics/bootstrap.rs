use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MetricError, ScoredSet};
use crate::cohort::stats::quantile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    /// Resamples drawn again because the statistic was undefined.
    pub redrawn: usize,
}

/// Redraw budget per resample before giving up.
const MAX_REDRAWS: usize = 100;

/// Percentile interval from `n_resamples` label-stratified resamples. Resample
/// `r` draws from ChaCha8 seeded with `seed` on stream `r`, so the interval is
/// independent of thread scheduling.
pub fn bootstrap_ci<F>(
    set: &ScoredSet,
    statistic: F,
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi, MetricError>
where
    F: Fn(&ScoredSet) -> Result<f64, MetricError> + Sync,
{
    if set.is_empty() {
        return Err(MetricError::Empty);
    }
    if n_resamples == 0 || !(0.0 < level && level < 1.0) {
        return Err(MetricError::Invalid(format!("{n_resamples} resamples at level {level}")));
    }
    let pos: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i]).collect();
    let neg: Vec<usize> = (0..set.len()).filter(|&i| !set.labels[i]).collect();
    let draws: Vec<Result<(f64, usize), MetricError>> = (0..n_resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            for attempt in 0..=MAX_REDRAWS {
                let mut idx = Vec::with_capacity(set.len());
                for stratum in [&pos, &neg] {
                    for _ in 0..stratum.len() {
                        idx.push(stratum[rng.random_range(0..stratum.len())]);
                    }
                }
                if let Ok(v) = statistic(&set.subset(&idx)) {
                    return Ok((v, attempt));
                }
            }
            Err(MetricError::BootstrapExhausted(MAX_REDRAWS + 1))
        })
        .collect();
    let mut values = Vec::with_capacity(n_resamples);
    let mut redrawn = 0;
    for d in draws {
        let (v, extra) = d?;
        values.push(v);
        redrawn += extra;
    }
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapCi { lo: quantile_sorted(&values, tail), hi: quantile_sorted(&values, 1.0 - tail), level, redrawn })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{roc_auc, summarize, confusion};

    fn auc(s: &ScoredSet) -> Result<f64, MetricError> {
        Ok(roc_auc(s)?.1)
    }

    fn noisy(n: usize, seed: u64) -> ScoredSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let scores = labels.iter().map(|&l| (rng.random::<f64>() * 0.7 + if l { 0.3 } else { 0.0 }).min(1.0)).collect();
        ScoredSet::unnamed(scores, labels).unwrap()
    }

    #[test]
    fn deterministic_and_covers_point() {
        let set = noisy(200, 1);
        let a = bootstrap_ci(&set, auc, 300, 0.95, 42).unwrap();
        let b = bootstrap_ci(&set, auc, 300, 0.95, 42).unwrap();
        assert_eq!(a, b);
        let point = auc(&set).unwrap();
        assert!(a.lo <= point && point <= a.hi, "{a:?} {point}");
        assert_ne!(a, bootstrap_ci(&set, auc, 300, 0.95, 43).unwrap());
    }

    #[test]
    fn constant_set_collapses() {
        let set = ScoredSet::unnamed(vec![0.7; 30], vec![true; 30]).unwrap();
        let acc = |s: &ScoredSet| Ok(summarize(&confusion(s, 0.5)?).acc);
        let ci = bootstrap_ci(&set, acc, 100, 0.95, 1).unwrap();
        assert_eq!((ci.lo, ci.hi), (1.0, 1.0));
        assert!(matches!(bootstrap_ci(&set, auc, 10, 0.95, 1), Err(MetricError::BootstrapExhausted(_))));
    }

    #[test]
    fn width_shrinks_with_more_data() {
        let mut small = 0.0;
        let mut large = 0.0;
        for t in 0..20 {
            let s = bootstrap_ci(&noisy(60, t), auc, 200, 0.95, t).unwrap();
            let l = bootstrap_ci(&noisy(600, t + 100), auc, 200, 0.95, t).unwrap();
            small += s.hi - s.lo;
            large += l.hi - l.lo;
        }
        assert!(large < small, "{large} vs {small}");
    }
}
