use tabdx_core::cohort::{Cohort, Label, Provenance, Record, Schema, Value};
use tabdx_core::promptgen::{
    build_sft, read_corpus, render_list, render_narrative, render_text, write_corpus, NarrativeMode, TemplateKind, INSTRUCTION,
};

const WORKED_INPUT: &str = "Age is 60, sex is female, body mass index (BMI) is 24.5018 kg/m², sometimes sleeplessness, sleep time is 6 hours, drink alcohol three times a week, never self-harmed, the employment status is in paid employment, the income is 45000 pound, work 38 hours per week, the education is o levels, not has long-standing illness, the hdl cholesterol is 2.075 mmol/l, the clinical ldl cholesterol is 2.6077 mmol/l, the triglycerides is 1.334 mmol/l, the total cholesterol is 4.7848 mmol/l";

const PANEL_TEXT: &str = "Age is 47,sex is male, body mass index (bmi) is 29.7973 kg/m², sometimes sleeplessness, sleep time is 9 hours, drink alcohol three or four times a week, never self-harmed, the employment status is in paid employment or self-employed, the income is less than 18,000 dollar, work 17 hours per week, the education is a levels/as levels or equivalent, not has long-standing illness, the hdl cholesterol is 1.507 mmol/l, the clinical ldl cholesterol is 2.3299 mmol/l, the triglycerides is 1.038 mmol/l, the total cholesterol is 4.7086 mmol/l.";

const PANEL_LIST: &str = "Age: 47, Sex: male, Sleepless: sometime, Sleep Times: 9 hours, Dring: 4 / week, Self-harmed: never, Employment: paid, Work Times: 17 h / week, Education: A level, Income: 18,000, HDLC: 1.507, CLDLC: 2.3299, TG: 1.038, TC: 4.7086.";

/// The worked example's table row, plus the sex and illness values its prompt mentions.
fn worked_record() -> Record {
    Record::new("T2", Label::Mdd)
        .with("age", Value::lit("60"))
        .with("sex", Value::cat("female"))
        .with("bmi", Value::lit("24.5018"))
        .with("sleeplessness", Value::cat("sometimes"))
        .with("sleep_duration", Value::lit("6"))
        .with("alcohol", Value::cat("3/week"))
        .with("self_harm", Value::cat("never"))
        .with("employment", Value::cat("paid"))
        .with("income", Value::lit("45000"))
        .with("work_hours", Value::lit("38"))
        .with("education", Value::cat("o_level"))
        .with("longstanding_illness", Value::cat("no"))
        .with("hdl", Value::lit("2.075"))
        .with("ldl", Value::lit("2.6077"))
        .with("triglycerides", Value::lit("1.334"))
        .with("total_cholesterol", Value::lit("4.7848"))
}

/// The comparison panel's table; BMI and illness appear only in its text panel.
fn panel_record() -> Record {
    Record::new("F3", Label::Hc)
        .with("age", Value::lit("47"))
        .with("sex", Value::cat("male"))
        .with("sleeplessness", Value::cat("sometimes"))
        .with("sleep_duration", Value::lit("9"))
        .with("alcohol", Value::cat("4/week"))
        .with("self_harm", Value::cat("never"))
        .with("employment", Value::cat("paid"))
        .with("work_hours", Value::lit("17"))
        .with("education", Value::cat("a_level"))
        .with("income", Value::lit("18,000"))
        .with("hdl", Value::lit("1.507"))
        .with("ldl", Value::lit("2.3299"))
        .with("triglycerides", Value::lit("1.038"))
        .with("total_cholesterol", Value::lit("4.7086"))
}

#[test]
fn worked_example_text_is_byte_exact() {
    let schema = Schema::ukb16();
    let r = worked_record();
    r.validate(&schema).unwrap();
    let out = render_text(&r, &schema);
    assert_eq!(out.text, WORKED_INPUT);
    assert!(out.warnings.is_empty());
}

#[test]
fn worked_example_triple() {
    let schema = Schema::ukb16();
    let sft = build_sft(&worked_record(), &schema, TemplateKind::Text, &NarrativeMode::Fallback).unwrap();
    assert_eq!(sft.instruction, "Predict if a patient has the major depressive disorder? Yes or no? Please answer with only yes or no and do not give any extra information.");
    assert_eq!(sft.instruction, INSTRUCTION);
    assert_eq!(sft.input, WORKED_INPUT);
    assert_eq!(sft.output, "Yes");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    write_corpus(std::slice::from_ref(&sft), &path).unwrap();
    assert_eq!(read_corpus(&path).unwrap(), vec![sft]);
}

#[test]
fn panel_list_is_byte_exact() {
    for name in ["ukb16", "figure3"] {
        let schema = Schema::builtin(name).unwrap();
        let r = panel_record();
        r.validate(&schema).unwrap();
        assert_eq!(render_list(&r, &schema).text, PANEL_LIST, "{name}");
    }
}

#[test]
fn panel_text_is_byte_exact() {
    let schema = Schema::builtin("figure3").unwrap();
    let r = panel_record().with("bmi", Value::lit("29.7973")).with("longstanding_illness", Value::cat("no"));
    r.validate(&schema).unwrap();
    assert_eq!(render_text(&r, &schema).text, PANEL_TEXT);
}

#[test]
fn rendering_ignores_insertion_order() {
    let schema = Schema::ukb16();
    let forward = worked_record();
    let mut reversed = Record::new("T2", Label::Mdd);
    for spec in schema.features.iter().rev() {
        reversed.set(&spec.name, forward.get(&spec.name).clone());
    }
    assert_eq!(render_text(&reversed, &schema), render_text(&forward, &schema));
    assert_eq!(render_list(&reversed, &schema), render_list(&forward, &schema));
}

#[test]
fn every_value_survives_rendering() {
    let schema = Schema::ukb16();
    let r = worked_record();
    let list = render_list(&r, &schema).text;
    let text = render_text(&r, &schema).text;
    let narrative = render_narrative(&r, &schema, &NarrativeMode::Fallback).unwrap();
    for spec in schema.features.iter().filter(|s| s.is_numeric()) {
        let lit = r.get(&spec.name).cell().to_string();
        assert!(list.contains(&lit), "list lacks {lit}");
        assert!(text.contains(&lit), "text lacks {lit}");
        assert!(narrative.text.contains(&lit), "narrative lacks {lit}");
    }
    assert!(narrative.warnings.is_empty(), "{:?}", narrative.warnings);
}

#[test]
fn corpus_covers_requested_ids() {
    let schema = Schema::ukb16();
    let records: Vec<Record> =
        (0..5).map(|i| Record::new(format!("P{i}"), if i % 2 == 0 { Label::Mdd } else { Label::Hc }).with("age", Value::num(40.0 + i as f64))).collect();
    let cohort = Cohort::new(schema, records, Provenance::Ingested { path: "mem".into() }).unwrap();
    let ids: Vec<String> = vec!["P1".into(), "P4".into()];
    let corpus = tabdx_core::promptgen::build_corpus(&cohort, &ids, TemplateKind::List, &NarrativeMode::Fallback).unwrap();
    assert_eq!(corpus.iter().map(|r| r.output.as_str()).collect::<Vec<_>>(), ["No", "Yes"]);
    assert_eq!(corpus[1].input, "Age: 44.");
}
