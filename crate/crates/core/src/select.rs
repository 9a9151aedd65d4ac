//! Cultural entity selection and the per-entity property cap.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{is_language_code, Entity, EntityId, PropertyId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub display_name: String,
    pub qid: EntityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapMode {
    CountryMedian,
    Fixed(usize),
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub regions: Vec<RegionSpec>,
    pub languages: BTreeSet<String>,
    /// Priority order; also the truncation order for the property cap.
    #[serde(default = "default_properties")]
    pub properties: Vec<PropertyId>,
    #[serde(default = "default_cap_mode")]
    pub cap_mode: CapMode,
}

fn default_cap_mode() -> CapMode {
    CapMode::CountryMedian
}

/// Default culturally relevant properties, region-linking ones first.
pub const DEFAULT_PROPERTIES: &[&str] = &[
    "P17",   // country
    "P495",  // country of origin
    "P27",   // country of citizenship
    "P131",  // located in the administrative territorial entity
    "P19",   // place of birth
    "P276",  // location
    "P31",   // instance of
    "P361",  // part of
    "P140",  // religion or worldview
    "P149",  // architectural style
    "P1435", // heritage designation
    "P571",  // inception
    "P84",   // architect
    "P170",  // creator
    "P136",  // genre
    "P106",  // occupation
    "P69",   // educated at
    "P166",  // award received
    "P2048", // height
];

pub fn default_properties() -> Vec<PropertyId> {
    DEFAULT_PROPERTIES
        .iter()
        .map(|p| PropertyId::new(*p).expect("static property id"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectError {
    #[error("selection config: {0}")]
    Config(String),
    #[error("no selected entity matches region {0}")]
    EmptyRegion(EntityId),
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectError> {
        let bad = |m: &str| Err(SelectError::Config(m.to_owned()));
        if self.regions.is_empty() {
            return bad("regions must be non-empty");
        }
        if self.languages.is_empty() {
            return bad("languages must be non-empty");
        }
        if self.properties.is_empty() {
            return bad("properties must be non-empty");
        }
        if let Some(r) = self.regions.iter().find(|r| r.display_name.trim().is_empty()) {
            return Err(SelectError::Config(format!("region {} has an empty display name", r.qid)));
        }
        if let Some(l) = self.languages.iter().find(|l| !is_language_code(l)) {
            return Err(SelectError::Config(format!("bad language code {l:?}")));
        }
        if let CapMode::Fixed(0) = self.cap_mode {
            return bad("fixed cap must be >= 1");
        }
        Ok(())
    }

    pub fn region(&self, qid: &EntityId) -> Option<&RegionSpec> {
        self.regions.iter().find(|r| &r.qid == qid)
    }
}

/// Member of the selected set, with the evidence for its membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedEntity {
    pub entity: Entity,
    /// Ordered by region-list order, then property order.
    pub region_matches: Vec<(PropertyId, EntityId)>,
    pub covered_languages: BTreeSet<String>,
    pub eligible_properties: Vec<PropertyId>,
}

impl SelectedEntity {
    /// The single region used for sampling buckets: first match in region-list order.
    pub fn assigned_region(&self) -> &EntityId {
        &self.region_matches[0].1
    }

    /// Every distinct region the entity matched, in region-list order.
    pub fn matched_regions(&self) -> Vec<&EntityId> {
        let mut out: Vec<&EntityId> = Vec::new();
        for (_, r) in &self.region_matches {
            if !out.contains(&r) {
                out.push(r);
            }
        }
        out
    }
}

/// Precomputed lookup tables for one configuration.
pub struct Selector<'a> {
    cfg: &'a SelectionConfig,
    region_rank: HashMap<&'a EntityId, usize>,
}

impl<'a> Selector<'a> {
    pub fn new(cfg: &'a SelectionConfig) -> Self {
        let mut region_rank = HashMap::new();
        for (i, r) in cfg.regions.iter().enumerate() {
            region_rank.entry(&r.qid).or_insert(i);
        }
        Selector { cfg, region_rank }
    }

    pub fn select(&self, entity: Entity) -> Option<SelectedEntity> {
        let covered_languages: BTreeSet<String> = self
            .cfg
            .languages
            .iter()
            .filter(|l| entity.labels.contains_key(*l) || entity.descriptions.contains_key(*l))
            .cloned()
            .collect();
        if covered_languages.is_empty() {
            return None;
        }
        let mut matches: Vec<(usize, usize, PropertyId, EntityId)> = Vec::new();
        for (pi, p) in self.cfg.properties.iter().enumerate() {
            for id in entity.claims.get(p).into_iter().flatten().filter_map(|v| v.entity_ref()) {
                if let Some(&ri) = self.region_rank.get(id) {
                    if !matches.iter().any(|m| m.2 == *p && m.3 == *id) {
                        matches.push((ri, pi, p.clone(), id.clone()));
                    }
                }
            }
        }
        if matches.is_empty() {
            return None;
        }
        matches.sort_by_key(|m| (m.0, m.1));
        let eligible_properties = self
            .cfg
            .properties
            .iter()
            .filter(|p| entity.claims.contains_key(*p))
            .cloned()
            .collect();
        Some(SelectedEntity {
            entity,
            region_matches: matches.into_iter().map(|m| (m.2, m.3)).collect(),
            covered_languages,
            eligible_properties,
        })
    }
}

/// Entities with at least one in-scope region claim under an in-scope property
/// and a label or description in at least one configured language.
pub fn select_cultural_entities<'a, I>(
    entities: I,
    cfg: &'a SelectionConfig,
) -> impl Iterator<Item = SelectedEntity> + 'a
where
    I: IntoIterator<Item = Entity>,
    I::IntoIter: 'a,
{
    let selector = Selector::new(cfg);
    entities.into_iter().filter_map(move |e| selector.select(e))
}

/// Lower median of eligible-property counts over entities matched to `region`.
pub fn country_property_median(
    selected: &[SelectedEntity],
    region: &EntityId,
) -> Result<usize, SelectError> {
    let mut counts: Vec<usize> = selected
        .iter()
        .filter(|s| s.region_matches.iter().any(|(_, r)| r == region))
        .map(|s| s.eligible_properties.len())
        .collect();
    if counts.is_empty() {
        return Err(SelectError::EmptyRegion(region.clone()));
    }
    counts.sort_unstable();
    Ok(counts[(counts.len() - 1) / 2])
}

/// Keep the first `cap` eligible properties (already in config order).
pub fn cap_entity_properties(mut s: SelectedEntity, cap: usize) -> SelectedEntity {
    s.eligible_properties.truncate(cap.max(1));
    s
}

/// Apply the configured cap mode to a fully selected population.
///
/// In country-median mode an entity matched to several regions is capped at
/// the largest of those regions' medians, so every region keeps at least half
/// of its entities uncapped.
pub fn apply_property_cap(
    selected: Vec<SelectedEntity>,
    mode: CapMode,
) -> Result<(Vec<SelectedEntity>, BTreeMap<EntityId, usize>), SelectError> {
    match mode {
        CapMode::None => Ok((selected, BTreeMap::new())),
        CapMode::Fixed(cap) => Ok((
            selected.into_iter().map(|s| cap_entity_properties(s, cap)).collect(),
            BTreeMap::new(),
        )),
        CapMode::CountryMedian => {
            let regions: BTreeSet<EntityId> = selected
                .iter()
                .flat_map(|s| s.region_matches.iter().map(|(_, r)| r.clone()))
                .collect();
            let mut medians = BTreeMap::new();
            for r in regions {
                let m = country_property_median(&selected, &r)?;
                medians.insert(r, m);
            }
            let capped = selected
                .into_iter()
                .map(|s| {
                    let cap = s.matched_regions().iter().map(|r| medians[*r]).max().unwrap_or(1);
                    cap_entity_properties(s, cap)
                })
                .collect();
            Ok((capped, medians))
        }
    }
}
