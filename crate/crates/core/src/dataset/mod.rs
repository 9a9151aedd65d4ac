//! Pipeline records on disk, MCQ option shuffling, and dataset statistics.

mod io;
mod stats;

pub use io::*;
pub use stats::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{FilterVerdict, McqItem, TfItem};
use crate::images::ImageRef;
use crate::kg::{EntityId, PropertyId};
use crate::qa::{QaKind, VqaTriplet};
use crate::text::{stable_hash, stable_hash_u64};

/// Pipeline stage; only ever advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Templated,
    Refined,
    Filtered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordKind {
    Property,
    Identity,
    Mcq,
    Truefalse,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Property => "property",
            RecordKind::Identity => "identity",
            RecordKind::Mcq => "mcq",
            RecordKind::Truefalse => "truefalse",
        }
    }

    pub fn is_open_ended(self) -> bool {
        matches!(self, RecordKind::Property | RecordKind::Identity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub entity_id: EntityId,
    pub region: EntityId,
    pub language: String,
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property: Option<PropertyId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageRef>,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<FilterVerdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("record {id}: {reason}")]
pub struct RecordInvariant {
    pub id: String,
    pub reason: String,
}

/// Lineage id: hash of the templated-stage identity of a record.
pub fn record_id(
    entity: &EntityId,
    kind: RecordKind,
    property: Option<&PropertyId>,
    language: &str,
    image_title: Option<&str>,
    question: &str,
) -> String {
    stable_hash([
        entity.as_str(),
        kind.as_str(),
        property.map_or("", PropertyId::as_str),
        language,
        image_title.unwrap_or(""),
        question,
    ])
}

impl DatasetRecord {
    pub fn validate(&self) -> Result<(), RecordInvariant> {
        let bad = |reason: &str| Err(RecordInvariant { id: self.id.clone(), reason: reason.to_owned() });
        if self.id.is_empty() {
            return bad("empty id");
        }
        if self.question.trim().is_empty() || self.answer.trim().is_empty() {
            return bad("empty question or answer");
        }
        match self.kind {
            RecordKind::Mcq => match (&self.options, self.correct_index) {
                (Some(o), Some(i)) if o.len() == 4 && i < 4 => {}
                (Some(o), Some(_)) if o.len() != 4 => return bad("mcq needs exactly 4 options"),
                (Some(_), Some(_)) => return bad("correct_index out of range"),
                _ => return bad("mcq without options or correct_index"),
            },
            _ if self.options.is_some() || self.correct_index.is_some() => {
                return bad("options on a non-mcq record");
            }
            RecordKind::Property if self.property.is_none() => return bad("property record without property"),
            _ => {}
        }
        if self.kind == RecordKind::Identity && self.property.is_some() {
            return bad("property set on identity record");
        }
        if self.stage == Stage::Filtered && !self.verdict.as_ref().is_some_and(|v| v.is_match) {
            return bad("filtered record without a matching verdict");
        }
        Ok(())
    }

    pub fn image_title(&self) -> Option<&str> {
        self.image.as_ref().map(|i| i.commons_title.as_str())
    }

    /// Templated record for an image/QA triplet.
    pub fn from_triplet(t: &VqaTriplet) -> Self {
        let (kind, property) = match &t.qa.kind {
            QaKind::Property(p) => (RecordKind::Property, Some(p.clone())),
            QaKind::Identity => (RecordKind::Identity, None),
        };
        DatasetRecord {
            id: record_id(&t.qa.entity_id, kind, property.as_ref(), &t.qa.language, Some(&t.image.commons_title), &t.qa.question),
            entity_id: t.qa.entity_id.clone(),
            region: t.qa.region.clone(),
            language: t.qa.language.clone(),
            kind,
            property,
            image: Some(t.image.clone()),
            question: t.qa.question.clone(),
            answer: t.qa.answer.clone(),
            options: None,
            correct_index: None,
            explanation: None,
            stage: t.stage,
            verdict: None,
        }
    }

    /// Refined-stage MCQ derived from `source`; options in parser order (A correct).
    pub fn mcq_from(source: &DatasetRecord, item: &McqItem) -> Self {
        DatasetRecord {
            id: stable_hash([source.id.as_str(), RecordKind::Mcq.as_str()]),
            kind: RecordKind::Mcq,
            question: item.question.clone(),
            answer: item.correct_option().to_owned(),
            options: Some(item.options.clone()),
            correct_index: Some(item.correct_index),
            explanation: Some(item.explanation.clone()),
            stage: Stage::Refined,
            verdict: None,
            ..source.clone()
        }
    }

    pub fn truefalse_from(source: &DatasetRecord, item: &TfItem) -> Self {
        DatasetRecord {
            id: stable_hash([source.id.as_str(), RecordKind::Truefalse.as_str()]),
            kind: RecordKind::Truefalse,
            question: item.text.clone(),
            answer: if item.answer { "True" } else { "False" }.to_owned(),
            options: None,
            correct_index: None,
            explanation: Some(item.explanation.clone()),
            stage: Stage::Refined,
            verdict: None,
            ..source.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("record {0} is not a multiple-choice record")]
pub struct WrongKind(pub String);

/// The `k`-th permutation of `0..n` in lexicographic order (factorial number system).
pub fn nth_permutation(n: usize, mut k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let mut fact: usize = (1..n).product();
    let mut out = Vec::with_capacity(n);
    for remaining in (1..=n).rev() {
        let idx = k / fact.max(1);
        k %= fact.max(1);
        out.push(pool.remove(idx));
        if remaining > 1 {
            fact /= remaining - 1;
        }
    }
    out
}

/// Reorders the options by a seeded, uniformly drawn permutation; the draw
/// also depends on the record id so a corpus shuffled under one seed does not
/// move every record the same way. `correct_index` follows the correct text.
pub fn shuffle_mcq_options(r: &DatasetRecord, seed: u64) -> Result<DatasetRecord, WrongKind> {
    let (Some(options), Some(correct), RecordKind::Mcq) = (&r.options, r.correct_index, r.kind) else {
        return Err(WrongKind(r.id.clone()));
    };
    let seed_text = seed.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash_u64([seed_text.as_str(), r.id.as_str()]));
    let n = options.len();
    let total: usize = (1..=n).product();
    let perm = nth_permutation(n, rng.gen_range(0..total));
    let mut out = r.clone();
    // new position j holds old option perm[j]
    out.options = Some(perm.iter().map(|&i| options[i].clone()).collect());
    out.correct_index = Some(perm.iter().position(|&i| i == correct).expect("permutation covers all"));
    Ok(out)
}
