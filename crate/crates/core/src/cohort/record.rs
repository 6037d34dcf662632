use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::schema::{FeatureKind, Schema};
use super::synth::SynthConfig;
use super::CohortError;

pub const DEFAULT_ID_COLUMN: &str = "patient_id";
pub const DEFAULT_LABEL_COLUMN: &str = "mdd";

/// A numeric cell keeps the literal it was read or generated with, so prompts
/// echo exactly what the table said.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Numeric {
    pub value: f64,
    pub literal: String,
}

impl Numeric {
    /// Shortest round-trip decimal.
    pub fn from_f64(value: f64) -> Self {
        Self { value, literal: format!("{value}") }
    }

    /// Fixed number of decimals, as produced by the synthetic generator.
    pub fn with_decimals(value: f64, decimals: usize) -> Self {
        let literal = format!("{value:.decimals$}");
        let value = literal.parse().expect("formatted float parses");
        Self { value, literal }
    }

    /// Accepts plain decimals and comma-grouped thousands ("18,000").
    pub fn parse(literal: &str) -> Option<Self> {
        let trimmed = literal.trim();
        let plain = if is_grouped(trimmed) { trimmed.replace(',', "") } else { trimmed.to_string() };
        let value: f64 = plain.parse().ok()?;
        value.is_finite().then(|| Self { value, literal: trimmed.to_string() })
    }
}

fn is_grouped(s: &str) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    let int = body.split('.').next().unwrap_or("");
    let mut groups = int.split(',');
    let Some(head) = groups.next() else { return false };
    let rest: Vec<&str> = groups.collect();
    !rest.is_empty()
        && (1..=3).contains(&head.len())
        && head.bytes().all(|b| b.is_ascii_digit())
        && rest.iter().all(|g| g.len() == 3 && g.bytes().all(|b| b.is_ascii_digit()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum Value {
    #[default]
    Missing,
    Numeric(Numeric),
    Category(String),
}

impl Value {
    pub fn num(value: f64) -> Self {
        Value::Numeric(Numeric::from_f64(value))
    }

    pub fn lit(literal: &str) -> Self {
        Value::Numeric(Numeric::parse(literal).expect("numeric literal"))
    }

    pub fn cat(code: &str) -> Self {
        Value::Category(code.to_string())
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    /// Table cell form; empty for Missing.
    pub fn cell(&self) -> &str {
        match self {
            Value::Missing => "",
            Value::Numeric(n) => &n.literal,
            Value::Category(c) => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Mdd,
    Hc,
    Unlabeled,
}

impl Label {
    pub fn as_bit(self) -> Option<u8> {
        match self {
            Label::Mdd => Some(1),
            Label::Hc => Some(0),
            Label::Unlabeled => None,
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Label::Unlabeled
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Mdd => "MDD",
            Label::Hc => "HC",
            Label::Unlabeled => "unlabeled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub patient_id: String,
    pub values: BTreeMap<String, Value>,
    pub label: Label,
}

impl Record {
    pub fn new(patient_id: impl Into<String>, label: Label) -> Self {
        Self { patient_id: patient_id.into(), values: BTreeMap::new(), label }
    }

    pub fn with(mut self, feature: &str, value: Value) -> Self {
        self.values.insert(feature.to_string(), value);
        self
    }

    /// Absent keys read as Missing.
    pub fn get(&self, feature: &str) -> &Value {
        static MISSING: Value = Value::Missing;
        self.values.get(feature).unwrap_or(&MISSING)
    }

    pub fn set(&mut self, feature: &str, value: Value) {
        self.values.insert(feature.to_string(), value);
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), CohortError> {
        for (name, value) in &self.values {
            let spec = schema
                .feature(name)
                .ok_or_else(|| CohortError::UnknownColumn(name.clone()))?;
            match (spec.kind, value) {
                (_, Value::Missing) => {}
                (FeatureKind::Numeric, Value::Numeric(n)) if n.value.is_finite() => {}
                (FeatureKind::Categorical | FeatureKind::Ordinal, Value::Category(c))
                    if spec.category(c).is_some() => {}
                _ => {
                    return Err(CohortError::InvalidValue {
                        patient_id: self.patient_id.clone(),
                        feature: name.clone(),
                        value: value.cell().to_string(),
                    })
                }
            }
        }
        Ok(())
    }

    /// Number of non-missing features.
    pub fn present(&self) -> usize {
        self.values.values().filter(|v| !v.is_missing()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Ingested { path: String },
    Synthetic { seed: u64, config: SynthConfig },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub schema: Schema,
    pub records: Vec<Record>,
    pub provenance: Provenance,
    /// True generating risk per record (synthetic cohorts only).
    pub oracle: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub id_column: String,
    pub label_column: String,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { id_column: DEFAULT_ID_COLUMN.into(), label_column: DEFAULT_LABEL_COLUMN.into() }
    }
}

impl Cohort {
    pub fn new(schema: Schema, records: Vec<Record>, provenance: Provenance) -> Result<Self, CohortError> {
        let mut ids = HashSet::new();
        for r in &records {
            if !ids.insert(r.patient_id.as_str()) {
                return Err(CohortError::DuplicateId(r.patient_id.clone()));
            }
            r.validate(&schema)?;
        }
        Ok(Self { schema, records, provenance, oracle: None })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, patient_id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.patient_id == patient_id)
    }

    /// Records whose ids are in `ids`, in cohort order.
    pub fn subset<'a>(&'a self, ids: &'a [String]) -> impl Iterator<Item = &'a Record> + 'a {
        let set: HashSet<&str> = ids.iter().map(String::as_str).collect();
        self.records.iter().filter(move |r| set.contains(r.patient_id.as_str()))
    }

    pub fn oracle_for(&self, patient_id: &str) -> Option<f64> {
        let oracle = self.oracle.as_ref()?;
        let idx = self.records.iter().position(|r| r.patient_id == patient_id)?;
        Some(oracle[idx])
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, &CsvOptions::default()).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn write_csv<W: Write>(&self, out: W, opts: &CsvOptions) -> Result<(), CohortError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![opts.id_column.clone()];
        header.extend(self.schema.features.iter().map(|f| f.name.clone()));
        header.push(opts.label_column.clone());
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.patient_id.clone()];
            row.extend(self.schema.features.iter().map(|f| r.get(&f.name).cell().to_string()));
            row.push(r.label.as_bit().map(|b| b.to_string()).unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| CohortError::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CohortError> {
        let f = std::fs::File::create(path).map_err(|e| CohortError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f), &CsvOptions::default())
    }

    /// SHA-256 of the canonical table emission and schema name.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.schema.name.as_bytes());
        h.update([0u8]);
        h.update(self.to_csv_string().as_bytes());
        hex::encode(h.finalize())
    }
}

/// Reads a delimited table with a header row into a cohort.
pub fn load_cohort(path: &Path, schema: &Schema) -> Result<Cohort, CohortError> {
    let f = std::fs::File::open(path).map_err(|e| CohortError::io(path, e))?;
    let mut cohort = read_cohort(f, schema, &CsvOptions::default())?;
    cohort.provenance = Provenance::Ingested { path: path.display().to_string() };
    Ok(cohort)
}

pub fn read_cohort<R: Read>(input: R, schema: &Schema, opts: &CsvOptions) -> Result<Cohort, CohortError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rdr.headers()?.clone();

    let mut id_col = None;
    let mut label_col = None;
    let mut feature_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        if h == opts.id_column {
            id_col = Some(i);
        } else if h == opts.label_column {
            label_col = Some(i);
        } else if let Some(fi) = schema.index_of(h) {
            feature_cols.push((i, fi));
        } else {
            return Err(CohortError::UnknownColumn(h.to_string()));
        }
    }
    let id_col = id_col.ok_or_else(|| CohortError::MissingColumn(opts.id_column.clone()))?;

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (row_idx, row) in rdr.records().enumerate() {
        let row_no = row_idx + 1;
        let row = row?;
        let pid = row.get(id_col).unwrap_or("").trim().to_string();
        if pid.is_empty() {
            return Err(CohortError::Row { row: row_no, message: "empty patient id".into() });
        }
        if !seen.insert(pid.clone()) {
            return Err(CohortError::DuplicateId(pid));
        }
        let label = match label_col.map(|c| row.get(c).unwrap_or("").trim()) {
            None | Some("") => Label::Unlabeled,
            Some("1") => Label::Mdd,
            Some("0") => Label::Hc,
            Some(other) => {
                return Err(CohortError::Row { row: row_no, message: format!("label {other:?} is not 0, 1 or empty") })
            }
        };
        let mut rec = Record::new(pid, label);
        for &(col, fi) in &feature_cols {
            let spec = &schema.features[fi];
            let cell = row.get(col).unwrap_or("").trim();
            let value = if schema.is_missing_code(cell) {
                Value::Missing
            } else if spec.is_numeric() {
                Value::Numeric(Numeric::parse(cell).ok_or_else(|| CohortError::Row {
                    row: row_no,
                    message: format!("{}: {cell:?} is not a finite number", spec.name),
                })?)
            } else if spec.category(cell).is_some() {
                Value::Category(cell.to_string())
            } else {
                return Err(CohortError::Row {
                    row: row_no,
                    message: format!(
                        "{}: {cell:?} is not one of {:?}",
                        spec.name,
                        spec.categories.iter().map(|c| c.code.as_str()).collect::<Vec<_>>()
                    ),
                });
            };
            rec.values.insert(spec.name.clone(), value);
        }
        records.push(rec);
    }
    Cohort::new(schema.clone(), records, Provenance::Ingested { path: String::new() })
}
