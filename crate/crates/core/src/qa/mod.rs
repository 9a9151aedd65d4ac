//! Multilingual property-level and identity QA from templates, and pairing
//! with entity images.

mod render;
mod template;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Stage;
use crate::gateway::RefinedQa;
use crate::images::{ImageManifest, ImageRef};
use crate::kg::{ClaimValue, EntityId, PropertyId};
use crate::select::SelectedEntity;

pub use render::{render_time, render_value, resolve_label, LabelResolver, RenderError, Rendered};
pub use template::{
    fill, segments, QaTemplate, Segment, TemplateError, TemplateScope, TemplateStore, ENTITY_DESCRIPTION,
    ENTITY_NAME, PROPERTY_VALUE,
};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QaKind {
    Property(PropertyId),
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplatedQa {
    pub entity_id: EntityId,
    pub region: EntityId,
    pub kind: QaKind,
    pub language: String,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QaError {
    #[error("no template for {scope}/{language}")]
    MissingTemplate { scope: TemplateScope, language: String },
    #[error("{entity} has no label in {language}")]
    MissingLabel { entity: EntityId, language: String },
    #[error("render: {0}")]
    Render(#[from] RenderError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

fn label_in<'a>(e: &'a SelectedEntity, lang: &str) -> Result<&'a str, QaError> {
    e.entity
        .label(lang)
        .filter(|l| !l.trim().is_empty())
        .ok_or_else(|| QaError::MissingLabel { entity: e.entity.id.clone(), language: lang.to_owned() })
}

/// Property-level pair. The question never names the entity; the answer
/// substitutes the entity label and the rendered value.
pub fn instantiate_property_qa(
    e: &SelectedEntity,
    p: &PropertyId,
    v: &ClaimValue,
    lang: &str,
    templates: &TemplateStore,
    labels: &dyn LabelResolver,
) -> Result<(TemplatedQa, Rendered), QaError> {
    let tpl = templates.property(p, lang).ok_or_else(|| QaError::MissingTemplate {
        scope: TemplateScope::Property(p.clone()),
        language: lang.to_owned(),
    })?;
    let name = label_in(e, lang)?;
    let value = render_value(v, lang, labels)?;
    let answer = fill(&tpl.answer_template, |k| match k {
        ENTITY_NAME => Some(name.to_owned()),
        PROPERTY_VALUE => Some(value.text.clone()),
        _ => None,
    })?;
    let qa = TemplatedQa {
        entity_id: e.entity.id.clone(),
        region: e.assigned_region().clone(),
        kind: QaKind::Property(p.clone()),
        language: lang.to_owned(),
        question: tpl.question_template.trim().to_owned(),
        answer: answer.trim().to_owned(),
    };
    Ok((qa, value))
}

/// Identity pair; degrades to the name-only answer when there is no
/// description in `lang`.
pub fn instantiate_entity_qa(e: &SelectedEntity, lang: &str, templates: &TemplateStore) -> Result<TemplatedQa, QaError> {
    let tpl = templates.identity(lang).ok_or_else(|| QaError::MissingTemplate {
        scope: TemplateScope::Identity,
        language: lang.to_owned(),
    })?;
    let name = label_in(e, lang)?;
    let desc = e.entity.description(lang).map(str::trim).filter(|d| !d.is_empty());
    let answer = match desc {
        Some(d) => fill(&tpl.answer_template, |k| match k {
            ENTITY_NAME => Some(name.to_owned()),
            ENTITY_DESCRIPTION => Some(d.to_owned()),
            _ => None,
        })?,
        None => fill(&tpl.name_only_answer_template(), |k| (k == ENTITY_NAME).then(|| name.to_owned()))?,
    };
    Ok(TemplatedQa {
        entity_id: e.entity.id.clone(),
        region: e.assigned_region().clone(),
        kind: QaKind::Identity,
        language: lang.to_owned(),
        question: tpl.question_template.trim().to_owned(),
        answer: answer.trim().to_owned(),
    })
}

/// Counts of skipped or degraded generations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QaDiagnostics {
    pub missing_template: BTreeMap<String, usize>,
    pub missing_label: usize,
    pub render_failure: usize,
    pub label_fallback: usize,
}

impl QaDiagnostics {
    pub fn merge(&mut self, other: QaDiagnostics) {
        for (k, v) in other.missing_template {
            *self.missing_template.entry(k).or_default() += v;
        }
        self.missing_label += other.missing_label;
        self.render_failure += other.render_failure;
        self.label_fallback += other.label_fallback;
    }

    fn note(&mut self, err: &QaError) {
        match err {
            QaError::MissingTemplate { scope, language } => {
                *self.missing_template.entry(format!("{scope}/{language}")).or_default() += 1
            }
            QaError::MissingLabel { .. } => self.missing_label += 1,
            QaError::Render(_) | QaError::Template(_) => self.render_failure += 1,
        }
    }
}

/// Every QA for one entity: per covered language with a label, one identity
/// pair then one pair per (eligible property, value).
pub fn generate_entity_qas(
    e: &SelectedEntity,
    templates: &TemplateStore,
    labels: &dyn LabelResolver,
) -> (Vec<TemplatedQa>, QaDiagnostics) {
    let mut out = Vec::new();
    let mut diag = QaDiagnostics::default();
    for lang in &e.covered_languages {
        if label_in(e, lang).is_err() {
            diag.missing_label += 1;
            continue;
        }
        match instantiate_entity_qa(e, lang, templates) {
            Ok(qa) => out.push(qa),
            Err(err) => diag.note(&err),
        }
        for p in &e.eligible_properties {
            for v in e.entity.claims.get(p).into_iter().flatten() {
                match instantiate_property_qa(e, p, v, lang, templates, labels) {
                    Ok((qa, rendered)) => {
                        if rendered.fallback_language.is_some() {
                            diag.label_fallback += 1;
                        }
                        if !out.contains(&qa) {
                            out.push(qa);
                        }
                    }
                    Err(err) => diag.note(&err),
                }
            }
        }
    }
    (out, diag)
}

/// An image bound to a QA pair, tagged with its pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaTriplet {
    pub image: ImageRef,
    pub qa: TemplatedQa,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined: Option<RefinedQa>,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("stage can only advance: {from:?} -> {to:?}")]
pub struct StageRegression {
    pub from: Stage,
    pub to: Stage,
}

impl VqaTriplet {
    pub fn advance(&mut self, to: Stage) -> Result<(), StageRegression> {
        if to <= self.stage {
            return Err(StageRegression { from: self.stage, to });
        }
        self.stage = to;
        Ok(())
    }
}

/// Cross product of each entity's images with its QA pairs, in QA order then
/// image order.
pub fn pair_images_with_qa<'a, I>(manifest: &'a ImageManifest, qas: I) -> impl Iterator<Item = VqaTriplet> + 'a
where
    I: IntoIterator<Item = TemplatedQa>,
    I::IntoIter: 'a,
{
    qas.into_iter().flat_map(move |qa| {
        manifest
            .images_of(&qa.entity_id)
            .iter()
            .map(move |img| VqaTriplet { image: img.clone(), qa: qa.clone(), refined: None, stage: Stage::Templated })
            .collect::<Vec<_>>()
    })
}
