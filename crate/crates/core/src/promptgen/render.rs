use crate::cohort::{Record, Schema, Value};

/// Rendered prompt input plus any non-fatal findings about it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Rendered {
    pub text: String,
    pub warnings: Vec<String>,
}

impl Rendered {
    fn finish(text: String) -> Self {
        let warnings = if text.is_empty() { vec!["no feature present; input is empty".to_string()] } else { vec![] };
        Self { text, warnings }
    }
}

/// "Label: value" fragments in list order, Missing omitted.
pub fn render_list(record: &Record, schema: &Schema) -> Rendered {
    let parts: Vec<String> = schema
        .list_indices()
        .into_iter()
        .filter_map(|i| {
            let spec = &schema.features[i];
            let value = match record.get(&spec.name) {
                Value::Missing => return None,
                Value::Numeric(n) => format!("{}{}", n.literal, spec.list_suffix),
                Value::Category(c) => spec.category(c).map_or(c.as_str(), |c| c.list_form()).to_string(),
            };
            Some(format!("{}: {}", spec.list_label, value))
        })
        .collect();
    let mut text = parts.join(&schema.list_joiner);
    if !text.is_empty() {
        text.push_str(&schema.list_terminator);
    }
    Rendered::finish(text)
}

/// Text Template fragments for the present features, in schema order.
pub(crate) fn text_fragments(record: &Record, schema: &Schema) -> Vec<(usize, String)> {
    schema
        .features
        .iter()
        .enumerate()
        .filter_map(|(i, spec)| {
            let value = match record.get(&spec.name) {
                Value::Missing => return None,
                Value::Numeric(n) => n.literal.as_str(),
                Value::Category(c) => spec.category(c).map_or(c.as_str(), |c| c.text_form()),
            };
            Some((i, spec.fill(value)))
        })
        .collect()
}

/// One phrase per present feature joined by the schema's joiner.
pub fn render_text(record: &Record, schema: &Schema) -> Rendered {
    let mut text = String::new();
    for (n, (i, frag)) in text_fragments(record, schema).into_iter().enumerate() {
        if n > 0 {
            text.push_str(schema.features[i].text_sep.as_deref().unwrap_or(&schema.text_joiner));
        }
        text.push_str(&frag);
    }
    if !text.is_empty() {
        text.push_str(&schema.text_terminator);
    }
    Rendered::finish(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Label;

    #[test]
    fn single_feature_list() {
        let r = Record::new("a", Label::Hc).with("age", Value::num(60.0));
        assert_eq!(render_list(&r, &Schema::ukb16()).text, "Age: 60.");
    }

    #[test]
    fn single_feature_text() {
        let r = Record::new("a", Label::Hc).with("bmi", Value::lit("24.5"));
        assert_eq!(render_text(&r, &Schema::ukb16()).text, "body mass index (BMI) is 24.5 kg/m²");
    }

    #[test]
    fn all_missing_is_empty_with_warning() {
        let r = Record::new("a", Label::Hc).with("age", Value::Missing);
        for out in [render_list(&r, &Schema::ukb16()), render_text(&r, &Schema::ukb16())] {
            assert!(out.text.is_empty());
            assert_eq!(out.warnings.len(), 1);
        }
    }

    #[test]
    fn literal_is_echoed() {
        let r = Record::new("a", Label::Hc).with("hdl", Value::lit("2.0750"));
        assert_eq!(render_text(&r, &Schema::ukb16()).text, "the hdl cholesterol is 2.0750 mmol/l");
        let r = Record::new("a", Label::Hc).with("sleep_duration", Value::num(9.0));
        assert_eq!(render_list(&r, &Schema::ukb16()).text, "Sleep Times: 9 hours.");
    }
}
