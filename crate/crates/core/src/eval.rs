//! Entity-recognition scoring at four tolerance levels.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_text;

pub use crate::dataset::{read_jsonl, JsonlError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldItem {
    pub id: String,
    pub language: String,
    pub target: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchLevel {
    Exact,
    ExactAlias,
    ExactTargetInPred,
    AllMethods,
}

impl MatchLevel {
    pub const ALL: [MatchLevel; 4] = [MatchLevel::Exact, MatchLevel::ExactAlias, MatchLevel::ExactTargetInPred, MatchLevel::AllMethods];

    pub fn title(self) -> &'static str {
        match self {
            MatchLevel::Exact => "Exact Match",
            MatchLevel::ExactAlias => "Exact + Alias",
            MatchLevel::ExactTargetInPred => "Exact + Target in Prediction",
            MatchLevel::AllMethods => "All Methods",
        }
    }
}

struct Normalized {
    pred: String,
    target: String,
}

fn alias_hit(pred: &str, gold: &GoldItem) -> bool {
    gold.aliases.iter().map(|a| normalize_text(a)).any(|a| !a.is_empty() && a == pred)
}

fn target_in_pred(n: &Normalized) -> bool {
    !n.target.is_empty() && n.pred.contains(&n.target)
}

/// Whether `pred` counts as correct at `level`. The reverse containment
/// (prediction inside the target) is never accepted.
pub fn match_at(level: MatchLevel, pred: &Prediction, gold: &GoldItem) -> bool {
    let n = Normalized { pred: normalize_text(&pred.text), target: normalize_text(&gold.target) };
    let exact = n.pred == n.target;
    match level {
        MatchLevel::Exact => exact,
        MatchLevel::ExactAlias => exact || alias_hit(&n.pred, gold),
        MatchLevel::ExactTargetInPred => exact || target_in_pred(&n),
        MatchLevel::AllMethods => exact || alias_hit(&n.pred, gold) || target_in_pred(&n),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("prediction id {0:?} appears more than once")]
    DuplicatePrediction(String),
    #[error("gold id {0:?} appears more than once")]
    DuplicateGold(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub n: usize,
    pub per_level: BTreeMap<MatchLevel, f64>,
    pub per_language: BTreeMap<String, BTreeMap<MatchLevel, f64>>,
    pub per_language_n: BTreeMap<String, usize>,
    /// Raw hit counts behind `per_level`.
    pub hits: BTreeMap<MatchLevel, usize>,
    /// Gold items without a prediction; scored as misses.
    pub missing: usize,
    /// Predictions whose id matches no gold item; ignored.
    pub orphans: Vec<String>,
}

/// Accuracy over gold items at every level, overall and per language.
pub fn score_predictions(preds: &[Prediction], golds: &[GoldItem]) -> Result<ScoreReport, EvalError> {
    let mut by_id: HashMap<&str, &Prediction> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(EvalError::DuplicatePrediction(p.id.clone()));
        }
    }
    let mut gold_ids = BTreeSet::new();
    for g in golds {
        if !gold_ids.insert(g.id.as_str()) {
            return Err(EvalError::DuplicateGold(g.id.clone()));
        }
    }
    let mut hits: BTreeMap<MatchLevel, usize> = MatchLevel::ALL.iter().map(|&l| (l, 0)).collect();
    let mut lang_hits: BTreeMap<String, BTreeMap<MatchLevel, usize>> = BTreeMap::new();
    let mut per_language_n: BTreeMap<String, usize> = BTreeMap::new();
    let mut missing = 0;
    for g in golds {
        *per_language_n.entry(g.language.clone()).or_default() += 1;
        let lh = lang_hits
            .entry(g.language.clone())
            .or_insert_with(|| MatchLevel::ALL.iter().map(|&l| (l, 0)).collect());
        let Some(p) = by_id.get(g.id.as_str()) else {
            missing += 1;
            continue;
        };
        for level in MatchLevel::ALL {
            if match_at(level, p, g) {
                *hits.get_mut(&level).expect("all levels") += 1;
                *lh.get_mut(&level).expect("all levels") += 1;
            }
        }
    }
    let ratio = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    let n = golds.len();
    let per_level = hits.iter().map(|(&l, &h)| (l, ratio(h, n))).collect();
    let per_language = lang_hits
        .iter()
        .map(|(lang, m)| (lang.clone(), m.iter().map(|(&l, &h)| (l, ratio(h, per_language_n[lang]))).collect()))
        .collect();
    let orphans = preds.iter().filter(|p| !gold_ids.contains(p.id.as_str())).map(|p| p.id.clone()).collect();
    Ok(ScoreReport { n, per_level, per_language, per_language_n, hits, missing, orphans })
}

/// One block per level; rows are systems, columns are languages plus the
/// overall average. Scores are percentages with two decimals.
pub fn report_table(systems: &[(String, ScoreReport)]) -> String {
    let langs: BTreeSet<&str> = systems.iter().flat_map(|(_, r)| r.per_language.keys().map(String::as_str)).collect();
    let name_w = systems.iter().map(|(s, _)| s.chars().count()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    for level in MatchLevel::ALL {
        let _ = writeln!(out, "{}", level.title());
        let _ = write!(out, "{:<name_w$}", "System");
        for l in &langs {
            let _ = write!(out, " {l:>7}");
        }
        let _ = writeln!(out, " {:>7}", "Avg");
        for (name, r) in systems {
            let _ = write!(out, "{name:<name_w$}");
            for l in &langs {
                match r.per_language.get(*l) {
                    Some(m) => {
                        let _ = write!(out, " {:>7.2}", 100.0 * m[&level]);
                    }
                    None => {
                        let _ = write!(out, " {:>7}", "-");
                    }
                }
            }
            let _ = writeln!(out, " {:>7.2}", 100.0 * r.per_level[&level]);
        }
        out.push('\n');
    }
    out
}
