use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use super::{DatasetRecord, Stage};
use crate::kg::Entity;

/// Record tallies by stream and stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub templated: u64,
    pub open_ended: u64,
    pub mcq: u64,
    pub open_ended_filtered: u64,
    pub mcq_filtered: u64,
}

impl StageCounts {
    pub fn tally(&mut self, r: &DatasetRecord) {
        let slot = match (r.kind.is_open_ended(), r.stage) {
            (true, Stage::Templated) => &mut self.templated,
            (true, Stage::Refined) => &mut self.open_ended,
            (true, Stage::Filtered) => &mut self.open_ended_filtered,
            // choice questions are born refined; a templated one cannot exist
            (false, Stage::Templated | Stage::Refined) => &mut self.mcq,
            (false, Stage::Filtered) => &mut self.mcq_filtered,
        };
        *slot += 1;
    }

    /// filtered <= refined <= templated on each stream.
    pub fn is_monotone(&self) -> bool {
        self.open_ended_filtered <= self.open_ended && self.open_ended <= self.templated && self.mcq_filtered <= self.mcq
    }
}

impl AddAssign for StageCounts {
    fn add_assign(&mut self, o: Self) {
        self.templated += o.templated;
        self.open_ended += o.open_ended;
        self.mcq += o.mcq;
        self.open_ended_filtered += o.open_ended_filtered;
        self.mcq_filtered += o.mcq_filtered;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionRow {
    pub entities: u64,
    pub images: u64,
    #[serde(flatten)]
    pub counts: StageCounts,
}

impl AddAssign for RegionRow {
    fn add_assign(&mut self, o: Self) {
        self.entities += o.entities;
        self.images += o.images;
        self.counts += o.counts;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub per_region: BTreeMap<String, RegionRow>,
    pub per_language: BTreeMap<String, StageCounts>,
    /// Keyed `region/language`.
    pub per_bucket: BTreeMap<String, StageCounts>,
    pub totals: RegionRow,
    /// outgoing entity-reference count -> number of entities
    pub connectivity: BTreeMap<usize, u64>,
    pub wikipedia_presence: f64,
    pub entity_count: u64,
}

pub fn bucket_key(region: &str, language: &str) -> String {
    format!("{region}/{language}")
}

/// Tallies records by region, language and bucket. Entity and image counts
/// are distinct ids/titles seen in a region's records; connectivity and
/// sitelink presence come from `entities`.
pub fn compute_stats<'a, R, E>(records: R, entities: E) -> StatsReport
where
    R: IntoIterator<Item = &'a DatasetRecord>,
    E: IntoIterator<Item = &'a Entity>,
{
    let mut per_region: BTreeMap<String, RegionRow> = BTreeMap::new();
    let mut per_language: BTreeMap<String, StageCounts> = BTreeMap::new();
    let mut per_bucket: BTreeMap<String, StageCounts> = BTreeMap::new();
    let mut seen_entities: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut seen_images: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();

    for r in records {
        let region = r.region.as_str();
        per_region.entry(region.to_owned()).or_default().counts.tally(r);
        per_language.entry(r.language.clone()).or_default().tally(r);
        per_bucket.entry(bucket_key(region, &r.language)).or_default().tally(r);
        seen_entities.entry(region.to_owned()).or_default().insert(r.entity_id.to_string());
        if let Some(t) = r.image_title() {
            seen_images.entry(region.to_owned()).or_default().insert(t.to_owned());
        }
    }
    for (region, row) in per_region.iter_mut() {
        row.entities = seen_entities.get(region).map_or(0, |s| s.len() as u64);
        row.images = seen_images.get(region).map_or(0, |s| s.len() as u64);
    }
    let mut totals = RegionRow::default();
    for row in per_region.values() {
        totals += *row;
    }

    let mut connectivity = BTreeMap::new();
    let (mut n, mut linked) = (0u64, 0u64);
    for e in entities {
        n += 1;
        linked += u64::from(!e.sitelinks.is_empty());
        *connectivity.entry(e.outgoing_links()).or_insert(0) += 1;
    }
    let wikipedia_presence = if n == 0 { 0.0 } else { linked as f64 / n as f64 };

    let report = StatsReport { per_region, per_language, per_bucket, totals, connectivity, wikipedia_presence, entity_count: n };
    debug_assert!(report.check_totals().is_ok());
    report
}

impl StatsReport {
    /// Every breakdown must sum to the totals row exactly.
    pub fn check_totals(&self) -> Result<(), String> {
        let sum = |rows: &mut dyn Iterator<Item = StageCounts>| {
            let mut acc = StageCounts::default();
            for r in rows {
                acc += r;
            }
            acc
        };
        let by_region = sum(&mut self.per_region.values().map(|r| r.counts));
        let by_language = sum(&mut self.per_language.values().copied());
        let by_bucket = sum(&mut self.per_bucket.values().copied());
        for (name, got) in [("region", by_region), ("language", by_language), ("bucket", by_bucket)] {
            if got != self.totals.counts {
                return Err(format!("per-{name} rows sum to {got:?}, totals are {:?}", self.totals.counts));
            }
        }
        let entities: u64 = self.per_region.values().map(|r| r.entities).sum();
        let images: u64 = self.per_region.values().map(|r| r.images).sum();
        if entities != self.totals.entities || images != self.totals.images {
            return Err("entity or image totals disagree with per-region rows".into());
        }
        Ok(())
    }

    /// Buckets violating filtered <= refined <= templated.
    pub fn non_monotone_buckets(&self) -> Vec<&str> {
        self.per_bucket.iter().filter(|(_, c)| !c.is_monotone()).map(|(k, _)| k.as_str()).collect()
    }

    /// Fixed-width table in the column order Entities, Images, Template QA,
    /// Open-Ended, MCQ, Open-Ended_F, MCQ_F. `names` maps region ids to
    /// display names; unknown ids print as-is.
    pub fn to_table(&self, names: &BTreeMap<String, String>) -> String {
        let header = ["Region", "Entities", "Images", "Template QA", "Open-Ended", "MCQ", "Open-Ended_F", "MCQ_F"];
        let mut rows: Vec<[String; 8]> = Vec::new();
        let cells = |label: String, r: &RegionRow| {
            [
                label,
                r.entities.to_string(),
                r.images.to_string(),
                r.counts.templated.to_string(),
                r.counts.open_ended.to_string(),
                r.counts.mcq.to_string(),
                r.counts.open_ended_filtered.to_string(),
                r.counts.mcq_filtered.to_string(),
            ]
        };
        for (region, row) in &self.per_region {
            rows.push(cells(names.get(region).cloned().unwrap_or_else(|| region.clone()), row));
        }
        rows.push(cells("Total".into(), &self.totals));
        let mut widths = header.map(str::len);
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[&str]| {
            for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
                if i == 0 {
                    let _ = write!(out, "{c:<w$}");
                } else {
                    let _ = write!(out, "  {c:>w$}");
                }
            }
            out.push('\n');
        };
        line(&mut out, &header);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
        for (i, r) in rows.iter().enumerate() {
            if i + 1 == rows.len() {
                line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
            }
            line(&mut out, &r.iter().map(String::as_str).collect::<Vec<_>>());
        }
        let _ = writeln!(out, "\nentities: {}  wikipedia presence: {:.4}", self.entity_count, self.wikipedia_presence);
        let _ = writeln!(out, "outgoing links histogram:");
        for (links, count) in &self.connectivity {
            let _ = writeln!(out, "  {links:>4}  {count}");
        }
        out
    }
}
