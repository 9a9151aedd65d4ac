//! Parsers for the line-oriented response grammars, plus canonical renderers
//! that the parsers accept back unchanged.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinedQa {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub question: String,
    pub options: Vec<String>,
    pub correct_index: usize,
    pub explanation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TfForm {
    Statement,
    Question,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TfItem {
    pub text: String,
    pub form: TfForm,
    pub answer: bool,
    pub explanation: String,
}

/// Union of the issue vocabularies of both judge prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Issue {
    None,
    ImageMismatch,
    MixedLanguage,
    FactualError,
    QAMismatch,
    Unclear,
    CulturalMismatch,
    IncorrectAnswer,
    PoorQuestion,
    Other,
}

impl Issue {
    pub const ALL: [Issue; 10] = [
        Issue::None,
        Issue::ImageMismatch,
        Issue::MixedLanguage,
        Issue::FactualError,
        Issue::QAMismatch,
        Issue::Unclear,
        Issue::CulturalMismatch,
        Issue::IncorrectAnswer,
        Issue::PoorQuestion,
        Issue::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Issue::None => "None",
            Issue::ImageMismatch => "ImageMismatch",
            Issue::MixedLanguage => "MixedLanguage",
            Issue::FactualError => "FactualError",
            Issue::QAMismatch => "QAMismatch",
            Issue::Unclear => "Unclear",
            Issue::CulturalMismatch => "CulturalMismatch",
            Issue::IncorrectAnswer => "IncorrectAnswer",
            Issue::PoorQuestion => "PoorQuestion",
            Issue::Other => "Other",
        }
    }

    pub fn from_token(token: &str) -> Option<Issue> {
        Issue::ALL.into_iter().find(|i| i.as_str().eq_ignore_ascii_case(token))
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    VqaFilter,
    McqFilter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    #[serde(rename = "match")]
    pub is_match: bool,
    pub issue: Issue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub culturally_relevant: Option<bool>,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "kebab-case")]
pub enum MalformedReason {
    MissingSection(String),
    EmptyField(String),
    WrongCorrectLetter(String),
    DuplicateOptions,
    BadAnswerToken(String),
}

impl fmt::Display for MalformedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MalformedReason::MissingSection(s) => write!(f, "missing section {s}"),
            MalformedReason::EmptyField(s) => write!(f, "empty field {s}"),
            MalformedReason::WrongCorrectLetter(s) => write!(f, "correct letter {s:?} is not A"),
            MalformedReason::DuplicateOptions => f.write_str("duplicate options"),
            MalformedReason::BadAnswerToken(s) => write!(f, "bad answer token {s:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed response: {0}")]
pub struct Malformed(pub MalformedReason);

/// Recoverable oddities noticed while parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseWarning {
    SecondQuestionMarker,
    DuplicateSection(String),
    UnknownIssue(String),
    MissingIssue,
    InconsistentVerdict,
    MissingExplanation,
    BothTfLeads,
}

// ---- section splitting ----

fn strip_decoration(line: &str) -> &str {
    line.trim_start_matches(|c: char| c.is_whitespace() || c == '*' || c == '#')
}

/// If `line` opens with `key` (ASCII case-insensitive, `:` may be fullwidth),
/// the remainder after the key.
fn after_key<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let line = strip_decoration(line);
    let (stem, sep) = key.split_at(key.len() - 1);
    let head = line.get(..stem.len())?;
    if !head.eq_ignore_ascii_case(stem) {
        return None;
    }
    let rest = &line[stem.len()..];
    let rest = if sep == ":" {
        rest.strip_prefix(':').or_else(|| rest.strip_prefix('：'))?
    } else {
        rest.strip_prefix(sep)?
    };
    Some(rest.trim_start_matches('*'))
}

struct Sections {
    found: BTreeMap<&'static str, (usize, String)>,
    warnings: Vec<ParseWarning>,
}

impl Sections {
    fn get(&self, key: &str) -> Option<&str> {
        self.found.get(key).map(|(_, s)| s.as_str())
    }

    fn position(&self, key: &str) -> Option<usize> {
        self.found.get(key).map(|(i, _)| *i)
    }

    fn require(&self, key: &'static str) -> Result<&str, Malformed> {
        let s = self
            .get(key)
            .ok_or_else(|| Malformed(MalformedReason::MissingSection(key.trim_end_matches([':', ')']).to_owned())))?;
        Ok(s)
    }

    fn require_nonempty(&self, key: &'static str) -> Result<String, Malformed> {
        let s = self.require(key)?;
        if s.trim().is_empty() {
            return Err(Malformed(MalformedReason::EmptyField(key.trim_end_matches([':', ')']).to_owned())));
        }
        Ok(s.trim().to_owned())
    }
}

/// Split `text` into keyed sections. A section runs from its key to the next
/// line that starts with any key; after `terminal` everything belongs to it.
fn split_sections(text: &str, keys: &[&'static str], terminal: Option<&'static str>) -> Sections {
    let mut found: BTreeMap<&'static str, (usize, String)> = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut current: Option<(&'static str, Vec<&str>, bool)> = None;
    let mut order = 0;

    let mut flush = |cur: Option<(&'static str, Vec<&str>, bool)>, found: &mut BTreeMap<_, _>, warnings: &mut Vec<_>| {
        if let Some((key, lines, keep)) = cur {
            if keep {
                found.insert(key, (order, lines.join("\n").trim().to_owned()));
                order += 1;
            } else {
                warnings.push(ParseWarning::DuplicateSection(key.to_owned()));
            }
        }
    };

    for raw in text.split('\n') {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if let Some((key, ref mut lines, _)) = current {
            if Some(key) == terminal {
                if keys.iter().any(|k| *k == "Q:" && after_key(line, k).is_some()) {
                    warnings.push(ParseWarning::SecondQuestionMarker);
                }
                lines.push(line);
                continue;
            }
        }
        let hit = keys.iter().find_map(|k| after_key(line, k).map(|rest| (*k, rest)));
        match hit {
            Some((key, rest)) => {
                flush(current.take(), &mut found, &mut warnings);
                let keep = !found.contains_key(key);
                current = Some((key, vec![rest], keep));
            }
            None => {
                if let Some((_, ref mut lines, _)) = current {
                    lines.push(line);
                }
            }
        }
    }
    flush(current.take(), &mut found, &mut warnings);
    Sections { found, warnings }
}

fn bool_token(raw: &str) -> Option<bool> {
    let t = raw
        .trim()
        .trim_matches(|c: char| c == '[' || c == ']' || c == '*' || c == '.' || c == '!' || c.is_whitespace());
    let first = t.split_whitespace().next().unwrap_or("");
    if first.eq_ignore_ascii_case("true") {
        Some(true)
    } else if first.eq_ignore_ascii_case("false") {
        Some(false)
    } else {
        None
    }
}

// ---- refine ----

pub fn parse_refine_response_detailed(text: &str) -> Result<(RefinedQa, Vec<ParseWarning>), Malformed> {
    let s = split_sections(text, &["Q:", "A:"], Some("A:"));
    let question = s.require_nonempty("Q:")?;
    let answer = s.require_nonempty("A:")?;
    if s.position("A:") < s.position("Q:") {
        return Err(Malformed(MalformedReason::MissingSection("Q".into())));
    }
    Ok((RefinedQa { question, answer }, s.warnings))
}

pub fn parse_refine_response(text: &str) -> Result<RefinedQa, Malformed> {
    parse_refine_response_detailed(text).map(|(v, _)| v)
}

impl RefinedQa {
    pub fn to_canonical_text(&self) -> String {
        format!("Q: {}\nA: {}", self.question, self.answer)
    }
}

// ---- mcq ----

const OPTION_KEYS: [&str; 4] = ["A)", "B)", "C)", "D)"];

pub fn parse_mcq_response_detailed(text: &str) -> Result<(McqItem, Vec<ParseWarning>), Malformed> {
    let s = split_sections(text, &["Q:", "A)", "B)", "C)", "D)", "Correct:", "Explanation:"], None);
    let question = s.require_nonempty("Q:")?;
    let mut options = Vec::with_capacity(4);
    for key in OPTION_KEYS {
        options.push(s.require_nonempty(key)?);
    }
    let correct = s.require("Correct:")?.trim();
    let letter: String = correct
        .trim_matches(|c: char| c == '[' || c == ']' || c == '*' || c == '(' || c.is_whitespace())
        .chars()
        .take_while(|c| c.is_alphanumeric())
        .collect();
    if letter.is_empty() {
        return Err(Malformed(MalformedReason::MissingSection("Correct".into())));
    }
    if !letter.eq_ignore_ascii_case("a") {
        return Err(Malformed(MalformedReason::WrongCorrectLetter(letter)));
    }
    let explanation = s.require_nonempty("Explanation:")?;
    let normalized: Vec<String> = options.iter().map(|o| normalize_text(o)).collect();
    for i in 0..normalized.len() {
        if normalized[i + 1..].contains(&normalized[i]) {
            return Err(Malformed(MalformedReason::DuplicateOptions));
        }
    }
    Ok((McqItem { question, options, correct_index: 0, explanation }, s.warnings))
}

pub fn parse_mcq_response(text: &str) -> Result<McqItem, Malformed> {
    parse_mcq_response_detailed(text).map(|(v, _)| v)
}

impl McqItem {
    /// Generator format; only meaningful while option A is the correct one.
    pub fn to_canonical_text(&self) -> String {
        let mut out = format!("Q: {}\n", self.question);
        for (key, opt) in OPTION_KEYS.iter().zip(&self.options) {
            out.push_str(&format!("{key} {opt}\n"));
        }
        let letter = OPTION_KEYS.get(self.correct_index).map(|k| &k[..1]).unwrap_or("?");
        out.push_str(&format!("Correct: {letter}\nExplanation: {}", self.explanation));
        out
    }

    pub fn correct_option(&self) -> &str {
        &self.options[self.correct_index]
    }

    /// `A) x\nB) y ...` as shown to the judge.
    pub fn options_text(&self) -> String {
        OPTION_KEYS
            .iter()
            .zip(&self.options)
            .map(|(k, o)| format!("{k} {o}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

// ---- true/false ----

pub fn parse_tf_response_detailed(text: &str) -> Result<(TfItem, Vec<ParseWarning>), Malformed> {
    let mut s = split_sections(text, &["Statement:", "Question:", "Answer:", "Explanation:"], None);
    let (lead, form) = match (s.position("Statement:"), s.position("Question:")) {
        (Some(a), Some(b)) => {
            s.warnings.push(ParseWarning::BothTfLeads);
            if a < b {
                ("Statement:", TfForm::Statement)
            } else {
                ("Question:", TfForm::Question)
            }
        }
        (Some(_), None) => ("Statement:", TfForm::Statement),
        (None, Some(_)) => ("Question:", TfForm::Question),
        (None, None) => return Err(Malformed(MalformedReason::MissingSection("Statement".into()))),
    };
    let text_field = s.require_nonempty(lead)?;
    let raw_answer = s.require("Answer:")?;
    let answer = bool_token(raw_answer)
        .ok_or_else(|| Malformed(MalformedReason::BadAnswerToken(raw_answer.trim().to_owned())))?;
    let explanation = s.require_nonempty("Explanation:")?;
    Ok((TfItem { text: text_field, form, answer, explanation }, s.warnings))
}

pub fn parse_tf_response(text: &str) -> Result<TfItem, Malformed> {
    parse_tf_response_detailed(text).map(|(v, _)| v)
}

impl TfItem {
    pub fn to_canonical_text(&self) -> String {
        let lead = match self.form {
            TfForm::Statement => "Statement",
            TfForm::Question => "Question",
        };
        let ans = if self.answer { "True" } else { "False" };
        format!("{lead}: {}\nAnswer: {ans}\nExplanation: {}", self.text, self.explanation)
    }
}

// ---- filter verdicts ----

pub fn parse_filter_verdict_detailed(
    text: &str,
    kind: FilterKind,
) -> Result<(FilterVerdict, Vec<ParseWarning>), Malformed> {
    let mut s = split_sections(text, &["MATCH:", "CULTURALLY_RELEVANT:", "ISSUE:", "EXPLANATION:"], None);
    let raw_match = s.require("MATCH:")?;
    let is_match =
        bool_token(raw_match).ok_or_else(|| Malformed(MalformedReason::BadAnswerToken(raw_match.trim().to_owned())))?;
    let culturally_relevant = match kind {
        FilterKind::McqFilter => {
            let raw = s.require("CULTURALLY_RELEVANT:")?;
            Some(bool_token(raw).ok_or_else(|| Malformed(MalformedReason::BadAnswerToken(raw.trim().to_owned())))?)
        }
        FilterKind::VqaFilter => None,
    };
    let mut warnings = std::mem::take(&mut s.warnings);
    let mut issue = match s.get("ISSUE:") {
        Some(raw) => {
            let token = raw
                .trim()
                .trim_matches(|c: char| c == '[' || c == ']' || c == '*' || c == '.')
                .split(|c: char| c.is_whitespace() || c == ',' || c == '/')
                .next()
                .unwrap_or("");
            match Issue::from_token(token) {
                Some(i) => i,
                None => {
                    warnings.push(ParseWarning::UnknownIssue(raw.trim().to_owned()));
                    Issue::Other
                }
            }
        }
        None => {
            warnings.push(ParseWarning::MissingIssue);
            if is_match {
                Issue::None
            } else {
                Issue::Other
            }
        }
    };
    if kind == FilterKind::VqaFilter && issue == Issue::None && !is_match {
        warnings.push(ParseWarning::InconsistentVerdict);
        issue = Issue::Other;
    }
    let explanation = match s.get("EXPLANATION:") {
        Some(e) => e.trim().to_owned(),
        None => {
            warnings.push(ParseWarning::MissingExplanation);
            String::new()
        }
    };
    Ok((FilterVerdict { is_match, issue, culturally_relevant, explanation }, warnings))
}

pub fn parse_filter_verdict(text: &str, kind: FilterKind) -> Result<FilterVerdict, Malformed> {
    parse_filter_verdict_detailed(text, kind).map(|(v, _)| v)
}

impl FilterVerdict {
    pub fn to_canonical_text(&self) -> String {
        let tf = |b: bool| if b { "True" } else { "False" };
        let mut out = format!("MATCH: {}\n", tf(self.is_match));
        if let Some(c) = self.culturally_relevant {
            out.push_str(&format!("CULTURALLY_RELEVANT: {}\n", tf(c)));
        }
        out.push_str(&format!("ISSUE: {}\nEXPLANATION: {}", self.issue, self.explanation));
        out
    }

    /// Whether the record survives filtering.
    pub fn keeps(&self) -> bool {
        self.is_match && self.culturally_relevant != Some(false)
    }
}
