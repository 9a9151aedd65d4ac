//! Per-entity image references from the P18 claim and the entity's Commons
//! category.

mod commons;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::exec::{map_bounded, retry_with_backoff, Backoff};
use crate::kg::{ClaimValue, Entity, EntityId, PropertyId};
use crate::select::SelectedEntity;

pub use commons::{
    category_request_hash, normalize_category_title, parse_categorymembers_page,
    record_category_listing, CommonsClient, FetchError, MediaWikiClient, NoCommons,
    StaticCommonsClient, StoredCommonsClient, COMMONS_API,
};

pub const IMAGE_PROPERTY: &str = "P18";
pub const COMMONS_CATEGORY_PROPERTY: &str = "P373";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImageSource {
    P18,
    CommonsCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub commons_title: String,
    pub source: ImageSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_url: Option<String>,
}

/// `File:` form with MediaWiki title conventions: underscores as spaces,
/// single spaces, first letter uppercased. `None` for an empty name.
pub fn normalize_file_title(raw: &str) -> Option<String> {
    let t = raw.trim().replace('_', " ");
    let t = t.split_whitespace().collect::<Vec<_>>().join(" ");
    let name = match t.split_once(':') {
        Some((ns, rest)) if ns.eq_ignore_ascii_case("file") || ns.eq_ignore_ascii_case("image") => rest.trim(),
        _ => t.as_str(),
    };
    let mut chars = name.chars();
    let first = chars.next()?;
    Some(format!("File:{}{}", first.to_uppercase(), chars.as_str()))
}

fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~:(),".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

impl ImageRef {
    pub fn new(raw_title: &str, source: ImageSource) -> Option<Self> {
        Some(ImageRef {
            commons_title: normalize_file_title(raw_title)?,
            source,
            resolved_url: None,
        })
    }

    /// Redirecting download URL; no request is made.
    pub fn file_path_url(&self) -> String {
        let name = self.commons_title.trim_start_matches("File:").replace(' ', "_");
        format!("https://commons.wikimedia.org/wiki/Special:FilePath/{}", percent_encode(&name))
    }

    pub fn with_resolved_url(mut self) -> Self {
        self.resolved_url = Some(self.file_path_url());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageManifest {
    pub entries: BTreeMap<EntityId, Vec<ImageRef>>,
}

impl ImageManifest {
    pub fn images_of(&self, id: &EntityId) -> &[ImageRef] {
        self.entries.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn total_images(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }
}

pub fn primary_image_of(e: &Entity) -> Option<ImageRef> {
    let p18 = PropertyId::new(IMAGE_PROPERTY).expect("static id");
    e.claims.get(&p18)?.iter().find_map(|v| match v {
        ClaimValue::Text { text } => ImageRef::new(text, ImageSource::P18),
        _ => None,
    })
}

/// The entity's Commons category: P373 text first, then a `commonswiki`
/// sitelink that points at a category page.
pub fn commons_category_of(e: &Entity) -> Option<String> {
    let p373 = PropertyId::new(COMMONS_CATEGORY_PROPERTY).expect("static id");
    let from_claim = e.claims.get(&p373).and_then(|vs| {
        vs.iter().find_map(|v| match v {
            ClaimValue::Text { text } if !text.trim().is_empty() => Some(normalize_category_title(text)),
            _ => None,
        })
    });
    from_claim.or_else(|| {
        e.sitelinks
            .get("commonswiki")
            .filter(|t| t.trim_start().to_ascii_lowercase().starts_with("category:"))
            .map(|t| normalize_category_title(t))
    })
}

/// File members of the entity's Commons category, deduplicated by
/// normalized title.
pub fn commons_category_images(e: &Entity, client: &dyn CommonsClient) -> Result<Vec<ImageRef>, FetchError> {
    let Some(category) = commons_category_of(e) else {
        return Ok(Vec::new());
    };
    let titles = client.list_category_files(&category)?;
    let mut seen = HashSet::new();
    Ok(titles
        .iter()
        .filter(|t| {
            let t = t.trim_start();
            t.len() > 5 && t[..5].eq_ignore_ascii_case("file:")
        })
        .filter_map(|t| ImageRef::new(t, ImageSource::CommonsCategory))
        .filter(|r| seen.insert(r.commons_title.clone()))
        .collect())
}

#[derive(Debug, Clone, Copy)]
pub struct ManifestOptions {
    pub max_per_entity: usize,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff: Backoff,
}

impl Default for ManifestOptions {
    fn default() -> Self {
        ManifestOptions {
            max_per_entity: 3,
            max_in_flight: 4,
            max_retries: 2,
            backoff: Backoff::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestReport {
    pub entities: usize,
    pub entities_with_images: usize,
    pub images: usize,
    pub failures: Vec<(EntityId, String)>,
}

fn entity_images(e: &Entity, client: &dyn CommonsClient, opts: &ManifestOptions) -> (Vec<ImageRef>, Option<String>) {
    let mut out: Vec<ImageRef> = primary_image_of(e).into_iter().collect();
    let fetched = retry_with_backoff(opts.max_retries, opts.backoff, FetchError::is_retryable, |_| {
        commons_category_images(e, client)
    });
    let failure = match fetched {
        Ok(refs) => {
            for r in refs {
                if !out.iter().any(|x| x.commons_title == r.commons_title) {
                    out.push(r);
                }
            }
            None
        }
        Err(err) => Some(err.to_string()),
    };
    out.truncate(opts.max_per_entity.max(1));
    (out.into_iter().map(ImageRef::with_resolved_url).collect(), failure)
}

/// P18 image first, then category images, deduplicated and truncated.
/// Fetch failures are collected in the report; the entity keeps its P18 image.
pub fn build_image_manifest(
    selected: &[SelectedEntity],
    client: &dyn CommonsClient,
    opts: &ManifestOptions,
) -> (ImageManifest, ManifestReport) {
    let results = map_bounded(selected, opts.max_in_flight, |s| entity_images(&s.entity, client, opts));
    let mut manifest = ImageManifest::default();
    let mut report = ManifestReport {
        entities: selected.len(),
        ..Default::default()
    };
    for (s, (images, failure)) in selected.iter().zip(results) {
        if let Some(f) = failure {
            report.failures.push((s.entity.id.clone(), f));
        }
        if !images.is_empty() {
            report.images += images.len();
            manifest.entries.insert(s.entity.id.clone(), images);
        }
    }
    report.entities_with_images = manifest.entries.len();
    report.failures.sort();
    (manifest, report)
}
