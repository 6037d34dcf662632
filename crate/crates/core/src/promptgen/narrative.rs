//! Narrative template: a free-form paraphrase of the record, either from a
//! remote chat model or from a frozen built-in template.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::render::{render_text, text_fragments, Rendered};
use super::PromptError;
use crate::backends::ChatModel;
use crate::cohort::{Record, Schema, Value};

/// Version tag of the built-in narrative template. Bump on any wording change.
pub const FALLBACK_VERSION: &str = "narrative-v1";

/// Conversion request sent to a chat model; `{text}` receives the Text Template output.
pub const META_PROMPT: &str = "Rewrite the following patient description as a short, fluent clinical narrative \
in plain English, written in the third person. Keep every number exactly as written, do not add facts, \
do not give a diagnosis.\n\nDescription: {text}";

pub enum NarrativeMode<'a> {
    Fallback,
    Remote { chat: &'a dyn ChatModel, cache_dir: &'a Path },
}

pub fn render_narrative(record: &Record, schema: &Schema, mode: &NarrativeMode<'_>) -> Result<Rendered, PromptError> {
    match mode {
        NarrativeMode::Fallback => Ok(fallback_narrative(record, schema)),
        NarrativeMode::Remote { chat, cache_dir } => {
            let text = render_text(record, schema).text;
            let prompt = META_PROMPT.replace("{text}", &text);
            let key = cache_key(record, schema, &prompt, chat.model_name());
            let path = cache_dir.join(format!("{key}.json"));
            let paraphrase = match read_cached(&path) {
                Some(hit) => hit,
                None => {
                    let out = chat.chat(&prompt).map_err(PromptError::Remote)?;
                    write_cached(cache_dir, &path, &NarrativeEntry { model: chat.model_name().to_string(), prompt, text: out.clone() })?;
                    out
                }
            };
            let warnings = coverage_warnings(record, schema, &paraphrase);
            Ok(Rendered { text: paraphrase, warnings })
        }
    }
}

#[derive(Serialize, Deserialize)]
struct NarrativeEntry {
    model: String,
    prompt: String,
    text: String,
}

fn read_cached(path: &Path) -> Option<String> {
    let raw = std::fs::read_to_string(path).ok()?;
    serde_json::from_str::<NarrativeEntry>(&raw).ok().map(|e| e.text)
}

fn write_cached(dir: &Path, path: &Path, entry: &NarrativeEntry) -> Result<(), PromptError> {
    std::fs::create_dir_all(dir).map_err(|e| PromptError::io(dir, e))?;
    // write-then-rename so concurrent readers never observe a partial file
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, serde_json::to_vec_pretty(entry).expect("serializable"))
        .map_err(|e| PromptError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| PromptError::io(path, e))
}

/// Content address of (record values, meta-prompt, model name).
pub fn cache_key(record: &Record, schema: &Schema, prompt: &str, model: &str) -> String {
    let mut h = Sha256::new();
    for spec in &schema.features {
        h.update(spec.name.as_bytes());
        h.update(b"=");
        h.update(record.get(&spec.name).cell().as_bytes());
        h.update(b"\n");
    }
    h.update([0u8]);
    h.update(prompt.as_bytes());
    h.update([0u8]);
    h.update(model.as_bytes());
    hex::encode(h.finalize())
}

/// Numeric values whose literal does not appear verbatim in `text`.
pub fn coverage_warnings(record: &Record, schema: &Schema, text: &str) -> Vec<String> {
    schema
        .features
        .iter()
        .filter_map(|spec| match record.get(&spec.name) {
            Value::Numeric(n) if !text.contains(&n.literal) => {
                Some(format!("value coverage: {} ({}) missing from narrative", spec.list_label, n.literal))
            }
            _ => None,
        })
        .collect()
}

const CONNECTIVES: [&str; 4] = ["Their record notes that", "It also shows that", "In addition,", "Finally,"];

fn join_and(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

fn fallback_narrative(record: &Record, schema: &Schema) -> Rendered {
    let mut sentences = Vec::new();
    let mut skip = Vec::new();

    let age = schema.index_of("age").and_then(|i| match record.get("age") {
        Value::Numeric(n) => Some((i, n.literal.clone())),
        _ => None,
    });
    let sex = schema.index_of("sex").and_then(|i| match record.get("sex") {
        Value::Category(c) => Some((i, schema.features[i].category(c).map_or(c.clone(), |c| c.text_form().to_string()))),
        _ => None,
    });
    let opening = match (&age, &sex) {
        (Some((_, a)), Some((_, s))) => Some(format!("The individual in question is a {a}-year-old {s}.")),
        (Some((_, a)), None) => Some(format!("The individual in question is {a} years old.")),
        (None, Some((_, s))) => Some(format!("The individual in question is {s}.")),
        (None, None) => None,
    };
    if let Some(o) = opening {
        sentences.push(o);
    }
    skip.extend(age.map(|(i, _)| i));
    skip.extend(sex.map(|(i, _)| i));

    let rest: Vec<String> =
        text_fragments(record, schema).into_iter().filter(|(i, _)| !skip.contains(i)).map(|(_, f)| f).collect();
    for (k, chunk) in rest.chunks(4).enumerate() {
        let lead = CONNECTIVES[k.min(CONNECTIVES.len() - 1)];
        sentences.push(format!("{lead} {}.", join_and(chunk)));
    }

    let text = sentences.join(" ");
    let mut warnings = coverage_warnings(record, schema, &text);
    if text.is_empty() {
        warnings.push("no feature present; input is empty".into());
    }
    Rendered { text, warnings }
}
