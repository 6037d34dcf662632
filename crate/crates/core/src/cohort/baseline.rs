//! Baseline characteristics per label group: median (IQR) for numeric
//! features, counts (%) for categorical ones, each with a P value.

use serde::{Deserialize, Serialize};

use super::record::{Cohort, Label, Value};
use super::stats::{chi_square_test, quartiles, rank_sum_test};
use super::CohortError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericSummary {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: String,
    /// Counts and percentages indexed [HC, MDD].
    pub counts: [u64; 2],
    pub percents: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaselineRow {
    Numeric {
        feature: String,
        groups: [Option<NumericSummary>; 2],
        p_value: f64,
        degenerate: bool,
    },
    Categorical {
        feature: String,
        levels: Vec<LevelRow>,
        p_value: f64,
        degenerate: bool,
    },
}

impl BaselineRow {
    pub fn feature(&self) -> &str {
        match self {
            BaselineRow::Numeric { feature, .. } | BaselineRow::Categorical { feature, .. } => feature,
        }
    }

    pub fn p_value(&self) -> f64 {
        match self {
            BaselineRow::Numeric { p_value, .. } | BaselineRow::Categorical { p_value, .. } => *p_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineTable {
    /// Group sizes [HC, MDD].
    pub group_sizes: [usize; 2],
    pub rows: Vec<BaselineRow>,
}

pub const MISSING_LEVEL: &str = "Missing Value";

pub fn baseline_table(cohort: &Cohort) -> Result<BaselineTable, CohortError> {
    let groups = [Label::Hc, Label::Mdd];
    let members: Vec<Vec<_>> = groups
        .iter()
        .map(|g| cohort.records.iter().filter(|r| r.label == *g).collect())
        .collect();
    if members.iter().any(Vec::is_empty) {
        return Err(CohortError::EmptyGroup);
    }
    let group_sizes = [members[0].len(), members[1].len()];

    let mut rows = Vec::new();
    for spec in &cohort.schema.features {
        if spec.is_numeric() {
            let samples: Vec<Vec<f64>> = members
                .iter()
                .map(|m| {
                    m.iter()
                        .filter_map(|r| match r.get(&spec.name) {
                            Value::Numeric(n) => Some(n.value),
                            _ => None,
                        })
                        .collect()
                })
                .collect();
            let summarize = |s: &Vec<f64>| {
                (!s.is_empty()).then(|| {
                    let (q1, median, q3) = quartiles(s);
                    NumericSummary { n: s.len(), median, q1, q3 }
                })
            };
            let test = rank_sum_test(&samples[0], &samples[1]);
            rows.push(BaselineRow::Numeric {
                feature: spec.name.clone(),
                groups: [summarize(&samples[0]), summarize(&samples[1])],
                p_value: test.p_value,
                degenerate: test.degenerate,
            });
        } else {
            let k = spec.categories.len();
            // last column collects Missing
            let mut table = vec![vec![0u64; k + 1]; 2];
            for (g, m) in members.iter().enumerate() {
                for r in m {
                    let col = match r.get(&spec.name) {
                        Value::Category(c) => spec.category_index(c).unwrap_or(k),
                        _ => k,
                    };
                    table[g][col] += 1;
                }
            }
            let observed: Vec<Vec<u64>> = table.iter().map(|r| r[..k].to_vec()).collect();
            let test = chi_square_test(&observed);
            let mut levels: Vec<LevelRow> = spec
                .categories
                .iter()
                .enumerate()
                .map(|(j, c)| level_row(&c.code, [table[0][j], table[1][j]], group_sizes))
                .collect();
            if table[0][k] + table[1][k] > 0 {
                levels.push(level_row(MISSING_LEVEL, [table[0][k], table[1][k]], group_sizes));
            }
            rows.push(BaselineRow::Categorical {
                feature: spec.name.clone(),
                levels,
                p_value: test.p_value,
                degenerate: test.degenerate,
            });
        }
    }
    Ok(BaselineTable { group_sizes, rows })
}

fn level_row(level: &str, counts: [u64; 2], sizes: [usize; 2]) -> LevelRow {
    let pct = |g: usize| 100.0 * counts[g] as f64 / sizes[g] as f64;
    LevelRow { level: level.to_string(), counts, percents: [pct(0), pct(1)] }
}

/// Up to two decimals, trailing zeros dropped ("61", "26.96").
fn fmt_stat(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

fn fmt_count(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 { "< 0.001".to_string() } else { format!("{p:.3}") }
}

impl BaselineTable {
    /// Comma-separated report in the familiar "median (Q1 - Q3)" / "n (%)" layout.
    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = [
            "Characteristics".to_string(),
            format!("HC (n = {})", fmt_count(self.group_sizes[0] as u64)),
            format!("MDD (n = {})", fmt_count(self.group_sizes[1] as u64)),
            "P value".to_string(),
        ];
        w.write_record(&header).expect("in-memory");
        for row in &self.rows {
            match row {
                BaselineRow::Numeric { feature, groups, p_value, .. } => {
                    let cell = |s: &Option<NumericSummary>| match s {
                        Some(s) => format!("{} ({} - {})", fmt_stat(s.median), fmt_stat(s.q1), fmt_stat(s.q3)),
                        None => "-".to_string(),
                    };
                    w.write_record([feature.clone(), cell(&groups[0]), cell(&groups[1]), fmt_p(*p_value)])
                        .expect("in-memory");
                }
                BaselineRow::Categorical { feature, levels, p_value, .. } => {
                    w.write_record([format!("{feature} (%)"), String::new(), String::new(), fmt_p(*p_value)])
                        .expect("in-memory");
                    for l in levels {
                        let cell = |g: usize| format!("{} ({:.2})", fmt_count(l.counts[g]), l.percents[g]);
                        w.write_record([l.level.clone(), cell(0), cell(1), String::new()]).expect("in-memory");
                    }
                }
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::record::{Provenance, Record};
    use crate::cohort::schema::Schema;

    fn schema() -> Schema {
        Schema::from_toml_str(
            r#"
name = "t"
[[feature]]
name = "x"
kind = "numeric"
list_label = "X"
phrase = "x is {v}"
[[feature]]
name = "c"
kind = "categorical"
list_label = "C"
phrase = "c is {v}"
categories = [{ code = "a" }, { code = "b" }]
"#,
        )
        .unwrap()
    }

    fn cohort(rows: &[(f64, Option<&str>, Label)]) -> Cohort {
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, (x, c, l))| {
                let mut r = Record::new(format!("p{i}"), *l).with("x", Value::num(*x));
                if let Some(c) = c {
                    r.set("c", Value::cat(c));
                }
                r
            })
            .collect();
        Cohort::new(schema(), records, Provenance::Ingested { path: String::new() }).unwrap()
    }

    #[test]
    fn medians_and_counts() {
        let mut rows: Vec<(f64, Option<&str>, Label)> =
            (1..=9).map(|v| (v as f64, Some("a"), Label::Hc)).collect();
        rows.push((10.0, Some("b"), Label::Mdd));
        rows.push((12.0, None, Label::Mdd));
        let t = baseline_table(&cohort(&rows)).unwrap();
        match &t.rows[0] {
            BaselineRow::Numeric { groups, .. } => {
                let hc = groups[0].unwrap();
                assert_eq!((hc.median, hc.q1, hc.q3), (5.0, 3.0, 7.0));
            }
            _ => panic!(),
        }
        match &t.rows[1] {
            BaselineRow::Categorical { levels, .. } => {
                assert_eq!(levels.len(), 3);
                assert_eq!(levels[2].level, MISSING_LEVEL);
                assert_eq!(levels[2].counts, [0, 1]);
                for g in 0..2 {
                    let s: f64 = levels.iter().map(|l| l.percents[g]).sum();
                    assert!((s - 100.0).abs() < 0.05);
                }
            }
            _ => panic!(),
        }
        let csv = t.to_csv_string();
        assert!(csv.contains("5 (3 - 7)"), "{csv}");
    }

    #[test]
    fn single_value_feature_is_flagged() {
        let rows = vec![(1.0, Some("a"), Label::Hc), (1.0, Some("a"), Label::Mdd), (1.0, Some("a"), Label::Hc)];
        let t = baseline_table(&cohort(&rows)).unwrap();
        for row in &t.rows {
            match row {
                BaselineRow::Numeric { p_value, degenerate, .. }
                | BaselineRow::Categorical { p_value, degenerate, .. } => {
                    assert!(*degenerate);
                    assert_eq!(*p_value, 1.0);
                }
            }
        }
    }

    #[test]
    fn needs_both_groups() {
        let rows = vec![(1.0, Some("a"), Label::Hc)];
        assert!(matches!(baseline_table(&cohort(&rows)), Err(CohortError::EmptyGroup)));
    }

    #[test]
    fn number_formatting() {
        assert_eq!(fmt_count(140980), "140,980");
        assert_eq!(fmt_count(796), "796");
        assert_eq!(fmt_stat(61.0), "61");
        assert_eq!(fmt_stat(26.96), "26.96");
        assert_eq!(fmt_p(0.0004), "< 0.001");
        assert_eq!(fmt_p(0.051), "0.051");
    }
}
