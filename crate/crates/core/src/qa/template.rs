use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{is_language_code, PropertyId};

pub const ENTITY_NAME: &str = "entity_name";
pub const ENTITY_DESCRIPTION: &str = "entity_description";
pub const PROPERTY_VALUE: &str = "property_value";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TemplateScope {
    Property(PropertyId),
    Identity,
}

impl TryFrom<String> for TemplateScope {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        if s == "identity" {
            return Ok(TemplateScope::Identity);
        }
        PropertyId::new(s)
            .map(TemplateScope::Property)
            .map_err(|e| format!("scope must be `identity` or a property id: {e}"))
    }
}

impl From<TemplateScope> for String {
    fn from(s: TemplateScope) -> String {
        s.to_string()
    }
}

impl fmt::Display for TemplateScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplateScope::Property(p) => write!(f, "{p}"),
            TemplateScope::Identity => f.write_str("identity"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaTemplate {
    pub scope: TemplateScope,
    pub language: String,
    pub question_template: String,
    pub answer_template: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {scope}/{language}: {reason}")]
    Invalid {
        scope: String,
        language: String,
        reason: String,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate template for {scope}/{language}")]
    Duplicate { scope: String, language: String },
    #[error("unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("unclosed placeholder")]
    Unclosed,
}

/// A piece of a template: literal text or a `{name}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment<'a> {
    Literal(&'a str),
    Placeholder(&'a str),
}

/// Split on `{identifier}` placeholders. Braces that do not enclose an
/// identifier are literal text.
pub fn segments(template: &str) -> Result<Vec<Segment<'_>>, TemplateError> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after.find('}');
        let name = close.map(|c| &after[..c]);
        match name {
            Some(n) if !n.is_empty() && n.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') => {
                if open > 0 {
                    out.push(Segment::Literal(&rest[..open]));
                }
                out.push(Segment::Placeholder(n));
                rest = &after[n.len() + 1..];
            }
            _ => {
                out.push(Segment::Literal(&rest[..open + 1]));
                rest = after;
            }
        }
    }
    if !rest.is_empty() {
        out.push(Segment::Literal(rest));
    }
    Ok(out)
}

fn placeholders(template: &str) -> Vec<&str> {
    segments(template)
        .unwrap_or_default()
        .into_iter()
        .filter_map(|s| match s {
            Segment::Placeholder(p) => Some(p),
            Segment::Literal(_) => None,
        })
        .collect()
}

/// Single-pass substitution; substituted values are never re-scanned.
pub fn fill(template: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len() + 32);
    for seg in segments(template)? {
        match seg {
            Segment::Literal(s) => out.push_str(s),
            Segment::Placeholder(p) => match lookup(p) {
                Some(v) => out.push_str(&v),
                None => return Err(TemplateError::UnknownPlaceholder(p.to_owned())),
            },
        }
    }
    Ok(out)
}

impl QaTemplate {
    pub fn validate(&self) -> Result<(), TemplateError> {
        let invalid = |reason: &str| TemplateError::Invalid {
            scope: self.scope.to_string(),
            language: self.language.clone(),
            reason: reason.to_owned(),
        };
        if !is_language_code(&self.language) {
            return Err(invalid("language is not a lowercase tag"));
        }
        if self.question_template.trim().is_empty() || self.answer_template.trim().is_empty() {
            return Err(invalid("empty template text"));
        }
        if !placeholders(&self.question_template).is_empty() {
            return Err(invalid("question templates take no placeholders"));
        }
        let ans = placeholders(&self.answer_template);
        let allowed: &[&str] = match self.scope {
            TemplateScope::Property(_) => &[ENTITY_NAME, PROPERTY_VALUE],
            TemplateScope::Identity => &[ENTITY_NAME, ENTITY_DESCRIPTION],
        };
        if let Some(p) = ans.iter().find(|p| !allowed.contains(p)) {
            return Err(invalid(&format!("placeholder {{{p}}} not allowed here")));
        }
        for required in allowed {
            if !ans.contains(required) {
                return Err(invalid(&format!("answer template lacks {{{required}}}")));
            }
        }
        Ok(())
    }

    /// Name-only answer used when the entity has no description: the template
    /// text up to and including `{entity_name}`, then the template's closing
    /// punctuation.
    pub fn name_only_answer_template(&self) -> String {
        let tpl = &self.answer_template;
        let name_tok = "{entity_name}";
        let desc_tok = "{entity_description}";
        let name_at = tpl.find(name_tok).unwrap_or(0);
        let prefix = match tpl.find(desc_tok) {
            Some(d) if d < name_at => "",
            _ => &tpl[..name_at],
        };
        let tail_start = tpl
            .rfind('}')
            .map(|i| i + 1)
            .unwrap_or(tpl.len());
        let terminal: String = tpl[tail_start..]
            .chars()
            .filter(|c| !c.is_alphanumeric() && !c.is_whitespace())
            .filter(|c| !matches!(c, ')' | '）' | ']' | '」' | '"'))
            .collect();
        format!("{prefix}{name_tok}{terminal}")
    }
}

/// Templates keyed by (scope, language).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemplateStore {
    templates: BTreeMap<(TemplateScope, String), QaTemplate>,
}

impl TemplateStore {
    pub fn insert(&mut self, t: QaTemplate) -> Result<(), TemplateError> {
        t.validate()?;
        let key = (t.scope.clone(), t.language.clone());
        if self.templates.contains_key(&key) {
            return Err(TemplateError::Duplicate {
                scope: t.scope.to_string(),
                language: t.language,
            });
        }
        self.templates.insert(key, t);
        Ok(())
    }

    pub fn get(&self, scope: &TemplateScope, lang: &str) -> Option<&QaTemplate> {
        self.templates.get(&(scope.clone(), lang.to_owned()))
    }

    pub fn property(&self, p: &PropertyId, lang: &str) -> Option<&QaTemplate> {
        self.get(&TemplateScope::Property(p.clone()), lang)
    }

    pub fn identity(&self, lang: &str) -> Option<&QaTemplate> {
        self.get(&TemplateScope::Identity, lang)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &QaTemplate> {
        self.templates.values()
    }

    /// One JSON record per line; blank lines and `#` comments are skipped.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, TemplateError> {
        let mut store = TemplateStore::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| TemplateError::Parse { line: i + 1, reason: e.to_string() })?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let tpl: QaTemplate =
                serde_json::from_str(t).map_err(|e| TemplateError::Parse { line: i + 1, reason: e.to_string() })?;
            store.insert(tpl)?;
        }
        Ok(store)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in self.iter() {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn birth_en() -> QaTemplate {
        QaTemplate {
            scope: TemplateScope::Property(PropertyId::new("P19").unwrap()),
            language: "en".into(),
            question_template: "Where was this person born?".into(),
            answer_template: "{entity_name} was born in {property_value}.".into(),
        }
    }

    fn identity_en() -> QaTemplate {
        QaTemplate {
            scope: TemplateScope::Identity,
            language: "en".into(),
            question_template: "What is the entity shown in the image?".into(),
            answer_template: "{entity_name}, {entity_description}.".into(),
        }
    }

    #[test]
    fn valid_templates() {
        assert!(birth_en().validate().is_ok());
        assert!(identity_en().validate().is_ok());
    }

    #[test]
    fn question_must_not_name_entity() {
        let mut t = birth_en();
        t.question_template = "Where was {entity_name} born?".into();
        assert!(t.validate().is_err());
    }

    #[test]
    fn answer_needs_both_placeholders() {
        let mut t = birth_en();
        t.answer_template = "Born in {property_value}.".into();
        assert!(t.validate().is_err());
        let mut t = identity_en();
        t.answer_template = "{entity_name}, {property_value}.".into();
        assert!(t.validate().is_err());
    }

    #[test]
    fn fill_is_single_pass() {
        let out = fill("{entity_name} was born in {property_value}.", |k| match k {
            "entity_name" => Some("{property_value}".into()),
            "property_value" => Some("Ulm".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(out, "{property_value} was born in Ulm.");
        assert_eq!(fill("a {} b {X}", |_| None).unwrap(), "a {} b {X}");
    }

    #[test]
    fn name_only_forms() {
        assert_eq!(identity_en().name_only_answer_template(), "{entity_name}.");
        let mut t = identity_en();
        t.answer_template = "This is {entity_name}, {entity_description}.".into();
        assert_eq!(t.name_only_answer_template(), "This is {entity_name}.");
        t.answer_template = "{entity_name}（{entity_description}）。".into();
        assert_eq!(t.name_only_answer_template(), "{entity_name}。");
        t.answer_template = "{entity_description}: {entity_name}".into();
        assert_eq!(t.name_only_answer_template(), "{entity_name}");
    }

    #[test]
    fn store_jsonl() {
        let text = format!(
            "# comment\n{}\n\n{}\n",
            serde_json::to_string(&birth_en()).unwrap(),
            serde_json::to_string(&identity_en()).unwrap()
        );
        let store = TemplateStore::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(store.len(), 2);
        assert!(store.identity("en").is_some());
        assert!(store.property(&PropertyId::new("P19").unwrap(), "de").is_none());
        let dup = format!("{0}\n{0}\n", serde_json::to_string(&birth_en()).unwrap());
        assert!(matches!(TemplateStore::read_jsonl(dup.as_bytes()), Err(TemplateError::Duplicate { .. })));
        let mut buf = Vec::new();
        store.write_jsonl(&mut buf).unwrap();
        assert_eq!(TemplateStore::read_jsonl(buf.as_slice()).unwrap(), store);
    }
}
