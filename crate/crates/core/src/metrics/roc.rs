use serde::{Deserialize, Serialize};

use super::{MetricError, ScoredSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// (fpr, tpr) from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (f, t) in &self.points {
            out.push_str(&format!("{f},{t}\n"));
        }
        out
    }
}

/// Sweeps thresholds from high to low, one step per distinct score, and
/// integrates with the trapezoid rule. Tied scores move diagonally, which gives
/// them half credit.
pub fn roc_auc(set: &ScoredSet) -> Result<(RocCurve, f64), MetricError> {
    let (np, nn) = (set.n_pos(), set.n_neg());
    if np == 0 || nn == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[b].total_cmp(&set.scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area2 = 0.0; // twice the area, in count units
    let mut i = 0;
    while i < order.len() {
        let s = set.scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && set.scores[order[i]] == s {
            if set.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - fp0) * (tp + tp0)) as f64;
        points.push((fp as f64 / nn as f64, tp as f64 / np as f64));
    }
    Ok((RocCurve { points }, area2 / (2.0 * np as f64 * nn as f64)))
}

/// Mean over all (positive, negative) pairs of 1[s⁺ > s⁻] + ½·1[s⁺ = s⁻].
pub fn auc_oracle(set: &ScoredSet) -> Result<f64, MetricError> {
    let pos: Vec<f64> = set.scores.iter().zip(&set.labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = set.scores.iter().zip(&set.labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(MetricError::SingleClass);
    }
    let mut credit = 0.0;
    for &p in &pos {
        for &n in &neg {
            credit += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(credit / (pos.len() * neg.len()) as f64)
}
