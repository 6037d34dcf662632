use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::narrative::{render_narrative, NarrativeMode};
use super::render::{render_list, render_text, Rendered};
use super::PromptError;
use crate::cohort::{Cohort, Label, Record, Schema};

/// The fixed system prompt of every training triple.
pub const INSTRUCTION: &str = "Predict if a patient has the major depressive disorder? Yes or no? \
Please answer with only yes or no and do not give any extra information.";

pub const YES: &str = "Yes";
pub const NO: &str = "No";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemplateKind {
    List,
    Text,
    Narrative,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 3] = [TemplateKind::List, TemplateKind::Text, TemplateKind::Narrative];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::List => "list",
            TemplateKind::Text => "text",
            TemplateKind::Narrative => "narrative",
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateKind {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "list" => Ok(TemplateKind::List),
            "text" => Ok(TemplateKind::Text),
            "narrative" | "gpt" => Ok(TemplateKind::Narrative),
            other => Err(PromptError::UnknownTemplate(other.to_string())),
        }
    }
}

/// One instruction/input/output training triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub patient_id: String,
    pub template: TemplateKind,
}

/// Prompt text handed to a language model: instruction, input and the answer cue.
pub fn format_prompt(instruction: &str, input: &str) -> String {
    format!("{instruction}\nInput: {input}\nAnswer:")
}

/// Continuation whose likelihood scores a class; the leading space suits
/// subword tokenizers of remote models.
pub fn verbalize(answer: &str) -> String {
    format!(" {answer}")
}

impl SftRecord {
    pub fn prompt(&self) -> String {
        format_prompt(&self.instruction, &self.input)
    }

    pub fn is_positive(&self) -> bool {
        self.output == YES
    }
}

pub fn render(record: &Record, schema: &Schema, template: TemplateKind, mode: &NarrativeMode<'_>) -> Result<Rendered, PromptError> {
    record.validate(schema).map_err(PromptError::Cohort)?;
    match template {
        TemplateKind::List => Ok(render_list(record, schema)),
        TemplateKind::Text => Ok(render_text(record, schema)),
        TemplateKind::Narrative => render_narrative(record, schema, mode),
    }
}

pub fn build_sft(record: &Record, schema: &Schema, template: TemplateKind, mode: &NarrativeMode<'_>) -> Result<SftRecord, PromptError> {
    let output = match record.label {
        Label::Mdd => YES,
        Label::Hc => NO,
        Label::Unlabeled => return Err(PromptError::Unlabeled(record.patient_id.clone())),
    };
    let rendered = render(record, schema, template, mode)?;
    for w in &rendered.warnings {
        log::warn!("{}: {w}", record.patient_id);
    }
    Ok(SftRecord {
        instruction: INSTRUCTION.to_string(),
        input: rendered.text,
        output: output.to_string(),
        patient_id: record.patient_id.clone(),
        template,
    })
}

/// Builds triples for `ids`, in the order given.
pub fn build_corpus(cohort: &Cohort, ids: &[String], template: TemplateKind, mode: &NarrativeMode<'_>) -> Result<Vec<SftRecord>, PromptError> {
    ids.iter()
        .map(|id| {
            let rec = cohort.get(id).ok_or_else(|| PromptError::UnknownId(id.clone()))?;
            build_sft(rec, &cohort.schema, template, mode)
        })
        .collect()
}

/// Writes one JSON object per line; returns the number of lines written.
pub fn emit_corpus(cohort: &Cohort, ids: &[String], template: TemplateKind, mode: &NarrativeMode<'_>, path: &Path) -> Result<usize, PromptError> {
    let corpus = build_corpus(cohort, ids, template, mode)?;
    write_corpus(&corpus, path)?;
    Ok(corpus.len())
}

pub fn write_corpus(corpus: &[SftRecord], path: &Path) -> Result<(), PromptError> {
    let f = std::fs::File::create(path).map_err(|e| PromptError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for rec in corpus {
        serde_json::to_writer(&mut w, &CorpusLine::from(rec)).expect("serializable");
        w.write_all(b"\n").map_err(|e| PromptError::io(path, e))?;
    }
    w.flush().map_err(|e| PromptError::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<SftRecord>, PromptError> {
    let f = std::fs::File::open(path).map_err(|e| PromptError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| PromptError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine =
            serde_json::from_str(&line).map_err(|e| PromptError::Corpus(format!("line {}: {e}", i + 1)))?;
        out.push(parsed.into_record()?);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct CorpusLine {
    instruction: String,
    input: String,
    output: String,
    patient_id: String,
    template: String,
}

impl From<&SftRecord> for CorpusLine {
    fn from(r: &SftRecord) -> Self {
        Self {
            instruction: r.instruction.clone(),
            input: r.input.clone(),
            output: r.output.clone(),
            patient_id: r.patient_id.clone(),
            template: r.template.as_str().to_string(),
        }
    }
}

impl CorpusLine {
    fn into_record(self) -> Result<SftRecord, PromptError> {
        Ok(SftRecord {
            template: self.template.parse()?,
            instruction: self.instruction,
            input: self.input,
            output: self.output,
            patient_id: self.patient_id,
        })
    }
}

/// Repeats positive (or negative) triples until the minority class reaches
/// `ratio` times the majority count. Deterministic: copies are appended in order.
pub fn oversample_minority(corpus: &[SftRecord], ratio: f64) -> Vec<SftRecord> {
    let (pos, neg): (Vec<&SftRecord>, Vec<&SftRecord>) = corpus.iter().partition(|r| r.is_positive());
    let (minority, majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let mut out = corpus.to_vec();
    if minority.is_empty() {
        return out;
    }
    let target = (ratio * majority.len() as f64).round() as usize;
    let mut i = 0;
    let mut have = minority.len();
    while have < target {
        out.push(minority[i % minority.len()].clone());
        i += 1;
        have += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Provenance, Value};

    fn record(label: Label) -> Record {
        Record::new("p1", label).with("age", Value::num(60.0))
    }

    #[test]
    fn labels_map_to_answers() {
        let s = Schema::ukb16();
        let yes = build_sft(&record(Label::Mdd), &s, TemplateKind::Text, &NarrativeMode::Fallback).unwrap();
        assert_eq!(yes.output, "Yes");
        assert_eq!(yes.instruction, INSTRUCTION);
        let no = build_sft(&record(Label::Hc), &s, TemplateKind::List, &NarrativeMode::Fallback).unwrap();
        assert_eq!(no.output, "No");
        assert!(matches!(
            build_sft(&record(Label::Unlabeled), &s, TemplateKind::Text, &NarrativeMode::Fallback),
            Err(PromptError::Unlabeled(_))
        ));
    }

    #[test]
    fn corpus_files() {
        let s = Schema::ukb16();
        let records: Vec<Record> = (0..100)
            .map(|i| {
                Record::new(format!("p{i}"), if i % 3 == 0 { Label::Mdd } else { Label::Hc })
                    .with("age", Value::num(40.0 + i as f64))
            })
            .collect();
        let cohort = Cohort::new(s, records, Provenance::Ingested { path: String::new() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<String> = cohort.records.iter().map(|r| r.patient_id.clone()).collect();
        let path = dir.path().join("c.jsonl");
        assert_eq!(emit_corpus(&cohort, &ids, TemplateKind::Text, &NarrativeMode::Fallback, &path).unwrap(), 100);
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 100);
        let back = read_corpus(&path).unwrap();
        assert_eq!(back.len(), 100);

        let empty = dir.path().join("e.jsonl");
        assert_eq!(emit_corpus(&cohort, &[], TemplateKind::Text, &NarrativeMode::Fallback, &empty).unwrap(), 0);
        assert_eq!(std::fs::read_to_string(&empty).unwrap(), "");

        let bad = dir.path().join("missing-dir").join("x.jsonl");
        assert!(emit_corpus(&cohort, &ids, TemplateKind::Text, &NarrativeMode::Fallback, &bad).is_err());
        assert!(matches!(
            emit_corpus(&cohort, &["nope".to_string()], TemplateKind::Text, &NarrativeMode::Fallback, &path),
            Err(PromptError::UnknownId(_))
        ));
    }

    #[test]
    fn oversampling_balances() {
        let mk = |i: usize, out: &str| SftRecord {
            instruction: INSTRUCTION.into(),
            input: String::new(),
            output: out.into(),
            patient_id: format!("p{i}"),
            template: TemplateKind::Text,
        };
        let corpus: Vec<SftRecord> = (0..10).map(|i| mk(i, if i < 2 { YES } else { NO })).collect();
        let out = oversample_minority(&corpus, 1.0);
        let pos = out.iter().filter(|r| r.is_positive()).count();
        assert_eq!(pos, 8);
        assert_eq!(out.len(), 16);
    }
}
