use serde::{Deserialize, Serialize};

use super::{MetricError, ScoredSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Scores at or above `threshold` are called positive.
pub fn confusion(set: &ScoredSet, threshold: f64) -> Result<ConfusionCounts, MetricError> {
    if set.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut c = ConfusionCounts { tp: 0, fp: 0, tn: 0, fn_: 0 };
    for (&s, &l) in set.scores.iter().zip(&set.labels) {
        match (s >= threshold, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub acc: f64,
    pub f1: f64,
    pub spe: f64,
    pub sens: f64,
    pub ppv: f64,
    pub npv: f64,
    /// Metrics whose denominator was zero; each is reported as 0.
    pub degenerate: Vec<String>,
}

pub fn summarize(c: &ConfusionCounts) -> Summary {
    let mut degenerate = Vec::new();
    let mut ratio = |name: &str, num: u64, den: u64| {
        if den == 0 {
            degenerate.push(name.to_string());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let acc = ratio("acc", c.tp + c.tn, c.total());
    let sens = ratio("sens", c.tp, c.tp + c.fn_);
    let spe = ratio("spe", c.tn, c.tn + c.fp);
    let ppv = ratio("ppv", c.tp, c.tp + c.fp);
    let npv = ratio("npv", c.tn, c.tn + c.fn_);
    let f1 = if ppv + sens == 0.0 {
        degenerate.push("f1".to_string());
        0.0
    } else {
        2.0 * ppv * sens / (ppv + sens)
    };
    Summary { acc, f1, spe, sens, ppv, npv, degenerate }
}

/// Threshold maximizing sensitivity + specificity − 1 over the distinct
/// scores; ties keep the highest threshold.
pub fn youden_threshold(set: &ScoredSet) -> Result<f64, MetricError> {
    if set.n_pos() == 0 || set.n_neg() == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut cands = set.scores.clone();
    cands.sort_by(|a, b| b.total_cmp(a));
    cands.dedup();
    let mut best = (f64::NEG_INFINITY, cands[0]);
    for t in cands {
        let s = summarize(&confusion(set, t)?);
        let j = s.sens + s.spe - 1.0;
        if j > best.0 {
            best = (j, t);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counts() {
        let set = ScoredSet::unnamed(vec![0.9, 0.4, 0.6, 0.3], vec![true, true, false, false]).unwrap();
        let c = confusion(&set, 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fn_: 1, fp: 1, tn: 1 });
        let s = summarize(&c);
        for v in [s.acc, s.f1, s.spe, s.sens, s.ppv, s.npv] {
            assert_eq!(v, 0.5);
        }
        assert!(s.degenerate.is_empty());
    }

    #[test]
    fn symmetric_counts() {
        let s = summarize(&ConfusionCounts { tp: 25, fp: 25, tn: 25, fn_: 25 });
        assert_eq!([s.acc, s.f1, s.spe, s.sens, s.ppv, s.npv], [0.5; 6]);
    }

    #[test]
    fn all_positive() {
        let set = ScoredSet::unnamed(vec![1.0; 6], vec![true; 6]).unwrap();
        let c = confusion(&set, 0.5).unwrap();
        assert_eq!(c.tp, 6);
        let s = summarize(&c);
        assert_eq!(s.spe, 0.0);
        assert!(s.degenerate.contains(&"spe".to_string()) && s.degenerate.contains(&"npv".to_string()));
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let s = summarize(&ConfusionCounts { tp: 0, fp: 0, tn: 3, fn_: 2 });
        assert_eq!(s.ppv, 0.0);
        assert!(s.degenerate.contains(&"ppv".to_string()));
        assert!(s.degenerate.contains(&"f1".to_string()));
        assert_eq!(s.npv, 0.6);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(confusion(&ScoredSet::unnamed(vec![], vec![]).unwrap(), 0.5), Err(MetricError::Empty)));
    }

    #[test]
    fn sensitivity_is_exact_in_integers() {
        for (tp, fn_) in [(3u64, 7u64), (1, 2), (10, 0), (99, 1)] {
            let s = summarize(&ConfusionCounts { tp, fp: 1, tn: 1, fn_ });
            assert_eq!((s.sens * (tp + fn_) as f64).round() as u64, tp);
        }
    }

    #[test]
    fn youden_picks_separating_cut() {
        let set = ScoredSet::unnamed(vec![0.1, 0.2, 0.35, 0.7, 0.8], vec![false, false, false, true, true]).unwrap();
        assert_eq!(youden_threshold(&set).unwrap(), 0.7);
    }
}
