//! Feature schema: what a cohort column means and how each template verbalizes it.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CohortError;

/// Placeholder substituted by the rendered value inside a phrase.
pub const PLACEHOLDER: &str = "{v}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
    Ordinal,
}

/// One allowed value of a categorical or ordinal feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    /// Value stored in tables and records.
    pub code: String,
    /// Surface form for the List Template. Defaults to the code.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub list: Option<String>,
    /// Surface form substituted into the Text Template phrase. Defaults to the code.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl Category {
    pub fn list_form(&self) -> &str {
        self.list.as_deref().unwrap_or(&self.code)
    }

    pub fn text_form(&self) -> &str {
        self.text.as_deref().unwrap_or(&self.code)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<Category>,
    pub phrase: String,
    pub list_label: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub list_suffix: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_sep: Option<String>,
}

impl FeatureSpec {
    pub fn is_numeric(&self) -> bool {
        self.kind == FeatureKind::Numeric
    }

    pub fn category(&self, code: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.code == code)
    }

    pub fn category_index(&self, code: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.code == code)
    }

    /// Phrase with the placeholder replaced by `value`.
    pub fn fill(&self, value: &str) -> String {
        self.phrase.replacen(PLACEHOLDER, value, 1)
    }
}

/// An ordered feature list plus the joiners used by the two plain templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub name: String,
    #[serde(default = "default_joiner")]
    pub text_joiner: String,
    #[serde(default)]
    pub text_terminator: String,
    #[serde(default = "default_joiner")]
    pub list_joiner: String,
    #[serde(default = "default_list_terminator")]
    pub list_terminator: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub list_order: Vec<String>,
    #[serde(default)]
    pub missing_codes: Vec<String>,
    #[serde(rename = "feature")]
    pub features: Vec<FeatureSpec>,
}

fn default_joiner() -> String {
    ", ".to_string()
}

fn default_list_terminator() -> String {
    ".".to_string()
}

const UKB16: &str = include_str!("../../schemas/ukb16.toml");
const FIGURE3: &str = include_str!("../../schemas/figure3.toml");
const CORRECTED: &str = include_str!("../../schemas/corrected.toml");

/// Names accepted by [`Schema::builtin`].
pub const BUILTIN_SCHEMAS: [&str; 3] = ["ukb16", "figure3", "corrected"];

impl Schema {
    pub fn from_toml_str(src: &str) -> Result<Self, CohortError> {
        let schema: Schema =
            toml::from_str(src).map_err(|e| CohortError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, CohortError> {
        let src = std::fs::read_to_string(path).map_err(|e| CohortError::io(path, e))?;
        Self::from_toml_str(&src)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("schema serializes")
    }

    pub fn builtin(name: &str) -> Result<Self, CohortError> {
        let src = match name {
            "ukb16" => UKB16,
            "figure3" => FIGURE3,
            "corrected" => CORRECTED,
            other => return Err(CohortError::Schema(format!("unknown built-in schema {other:?}"))),
        };
        Self::from_toml_str(src)
    }

    /// The default 16-feature schema.
    pub fn ukb16() -> Self {
        Self::builtin("ukb16").expect("built-in schema is valid")
    }

    /// Built-in name or a path to a schema file.
    pub fn resolve(name_or_path: &str) -> Result<Self, CohortError> {
        if BUILTIN_SCHEMAS.contains(&name_or_path) {
            Self::builtin(name_or_path)
        } else {
            Self::load(Path::new(name_or_path))
        }
    }

    pub fn validate(&self) -> Result<(), CohortError> {
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(CohortError::Schema(format!("duplicate feature name {:?}", f.name)));
            }
            if f.name.is_empty() {
                return Err(CohortError::Schema("empty feature name".into()));
            }
            match (f.kind, f.categories.is_empty()) {
                (FeatureKind::Numeric, false) => {
                    return Err(CohortError::Schema(format!(
                        "numeric feature {:?} declares categories",
                        f.name
                    )))
                }
                (FeatureKind::Categorical | FeatureKind::Ordinal, true) => {
                    return Err(CohortError::Schema(format!("feature {:?} has no categories", f.name)))
                }
                _ => {}
            }
            let mut codes = HashSet::new();
            for c in &f.categories {
                if !codes.insert(c.code.as_str()) {
                    return Err(CohortError::Schema(format!(
                        "feature {:?} repeats category {:?}",
                        f.name, c.code
                    )));
                }
            }
            if f.phrase.matches(PLACEHOLDER).count() != 1 {
                return Err(CohortError::Schema(format!(
                    "phrase of {:?} must contain exactly one {PLACEHOLDER}",
                    f.name
                )));
            }
        }
        if !self.list_order.is_empty() {
            let listed: HashSet<&str> = self.list_order.iter().map(String::as_str).collect();
            if listed.len() != self.list_order.len() || listed != seen {
                return Err(CohortError::Schema(
                    "list_order must name every feature exactly once".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Feature indices in List Template order.
    pub fn list_indices(&self) -> Vec<usize> {
        if self.list_order.is_empty() {
            (0..self.features.len()).collect()
        } else {
            self.list_order
                .iter()
                .map(|n| self.index_of(n).expect("validated list_order"))
                .collect()
        }
    }

    pub fn is_missing_code(&self, cell: &str) -> bool {
        cell.is_empty() || self.missing_codes.iter().any(|m| m == cell)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_with_sixteen_features() {
        for name in BUILTIN_SCHEMAS {
            let s = Schema::builtin(name).unwrap();
            assert_eq!(s.len(), 16, "{name}");
            assert_eq!(s.list_indices().len(), 16);
        }
    }

    #[test]
    fn builtin_variants_share_codes() {
        let a = Schema::builtin("ukb16").unwrap();
        for other in ["figure3", "corrected"] {
            let b = Schema::builtin(other).unwrap();
            for (fa, fb) in a.features.iter().zip(&b.features) {
                assert_eq!(fa.name, fb.name);
                let ca: Vec<_> = fa.categories.iter().map(|c| &c.code).collect();
                let cb: Vec<_> = fb.categories.iter().map(|c| &c.code).collect();
                assert_eq!(ca, cb);
            }
        }
    }

    #[test]
    fn rejects_bad_phrase_and_duplicates() {
        let bad = r#"
name = "x"
[[feature]]
name = "a"
kind = "numeric"
list_label = "A"
phrase = "a is {v} and {v}"
"#;
        assert!(matches!(Schema::from_toml_str(bad), Err(CohortError::Schema(_))));
        let dup = r#"
name = "x"
[[feature]]
name = "a"
kind = "numeric"
list_label = "A"
phrase = "a is {v}"
[[feature]]
name = "a"
kind = "numeric"
list_label = "A"
phrase = "a is {v}"
"#;
        assert!(Schema::from_toml_str(dup).is_err());
        let nocat = r#"
name = "x"
[[feature]]
name = "a"
kind = "categorical"
list_label = "A"
phrase = "a is {v}"
"#;
        assert!(Schema::from_toml_str(nocat).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let s = Schema::ukb16();
        let back = Schema::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, back);
    }
}
