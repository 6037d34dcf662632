use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::{Cohort, Label};
use super::CohortError;

pub const N_FOLDS: usize = 5;
pub const TEST_FRACTION: f64 = 0.2;

/// Label-stratified train/test split with cross-validation folds over the train side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub folds: Vec<Vec<String>>,
    pub seed: u64,
}

pub fn make_splits(cohort: &Cohort, seed: u64) -> Result<SplitPlan, CohortError> {
    let mut classes: Vec<Vec<String>> = [Label::Mdd, Label::Hc]
        .iter()
        .map(|l| {
            cohort.records.iter().filter(|r| r.label == *l).map(|r| r.patient_id.clone()).collect()
        })
        .collect();
    let n: usize = classes.iter().map(Vec::len).sum();
    if n < 10 {
        return Err(CohortError::Split(format!("need at least 10 labeled records, have {n}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in &mut classes {
        c.sort();
        c.shuffle(&mut rng);
    }

    let n_test = (TEST_FRACTION * n as f64).round() as usize;
    let pos_test = ((TEST_FRACTION * classes[0].len() as f64).round() as usize).min(n_test);
    let neg_test = n_test - pos_test;
    if neg_test > classes[1].len() {
        return Err(CohortError::Split("not enough controls for the test split".into()));
    }
    let take = [pos_test, neg_test];

    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    let mut folds = vec![Vec::new(); N_FOLDS];
    let mut next_fold = 0;
    for (class, &k) in classes.iter().zip(&take) {
        let (test, train) = class.split_at(k);
        if train.len() < N_FOLDS {
            return Err(CohortError::Split(format!(
                "a label class has {} train members; {N_FOLDS} needed to stratify folds",
                train.len()
            )));
        }
        test_ids.extend_from_slice(test);
        for id in train {
            folds[next_fold].push(id.clone());
            next_fold = (next_fold + 1) % N_FOLDS;
        }
        train_ids.extend_from_slice(train);
    }
    train_ids.sort();
    test_ids.sort();
    for f in &mut folds {
        f.sort();
    }
    Ok(SplitPlan { train_ids, test_ids, folds, seed })
}

impl SplitPlan {
    /// (fit ids, validation ids) for cross-validation fold `k`.
    pub fn fold(&self, k: usize) -> (Vec<String>, Vec<String>) {
        let fit = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect::<Vec<_>>();
        let mut fit = fit;
        fit.sort();
        (fit, self.folds[k].clone())
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;
    use crate::cohort::record::{Provenance, Record};
    use crate::cohort::schema::Schema;

    fn cohort(n_pos: usize, n_neg: usize) -> Cohort {
        let mut records = Vec::new();
        for i in 0..n_pos + n_neg {
            let label = if i < n_pos { Label::Mdd } else { Label::Hc };
            records.push(Record::new(format!("id{i:04}"), label));
        }
        records.push(Record::new("unlabeled", Label::Unlabeled));
        Cohort::new(Schema::ukb16(), records, Provenance::Ingested { path: String::new() }).unwrap()
    }

    #[test]
    fn hundred_records() {
        let plan = make_splits(&cohort(30, 70), 7).unwrap();
        assert_eq!(plan.test_ids.len(), 20);
        assert!(plan.folds.iter().all(|f| f.len() == 16));
        assert_eq!(plan, make_splits(&cohort(30, 70), 7).unwrap());
        let train: HashSet<_> = plan.train_ids.iter().collect();
        let test: HashSet<_> = plan.test_ids.iter().collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), 100);
    }

    #[test]
    fn too_few_per_class() {
        assert!(make_splits(&cohort(5, 60), 1).is_err());
        assert!(make_splits(&cohort(3, 5), 1).is_err());
    }

    proptest! {
        #[test]
        fn fold_invariants(n_pos in 7usize..60, n_neg in 7usize..200, seed in 0u64..1000) {
            let c = cohort(n_pos, n_neg);
            let plan = make_splits(&c, seed).unwrap();
            let n = n_pos + n_neg;
            let expected = (0.2 * n as f64).round() as i64;
            prop_assert!((plan.test_ids.len() as i64 - expected).abs() <= 1);

            let mut union: Vec<String> = plan.folds.iter().flatten().cloned().collect();
            union.sort();
            prop_assert_eq!(&union, &plan.train_ids);

            let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let pos: Vec<usize> = plan
                .folds
                .iter()
                .map(|f| f.iter().filter(|id| c.get(id).unwrap().label == Label::Mdd).count())
                .collect();
            prop_assert!(pos.iter().max().unwrap() - pos.iter().min().unwrap() <= 1);
        }
    }
}
