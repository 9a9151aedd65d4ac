//! Two-stage temperature sampling (regions, then languages within each
//! region) and record deduplication.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetRecord;
use crate::kg::EntityId;
use crate::text::{normalize_text, stable_hash, stable_hash_u64};

pub const DEFAULT_T_REGION: f64 = 4.0;
pub const DEFAULT_T_LANG: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleError {
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("every bucket count is zero")]
    AllZero,
}

/// `p_i = n_i^(1/T) / sum_j n_j^(1/T)`. Counts are scaled by their maximum
/// first, so huge counts with large exponents cannot overflow and the result
/// is invariant to rescaling all counts.
pub fn temperature_weights<K: Ord + Clone>(counts: &BTreeMap<K, u64>, t: f64) -> Result<BTreeMap<K, f64>, SampleError> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(SampleError::Temperature(t));
    }
    let max = counts.values().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(SampleError::AllZero);
    }
    let raw: BTreeMap<K, f64> = counts
        .iter()
        .map(|(k, &n)| (k.clone(), if n == 0 { 0.0 } else { (n as f64 / max as f64).powf(1.0 / t) }))
        .collect();
    let z: f64 = raw.values().sum();
    Ok(raw.into_iter().map(|(k, w)| (k, w / z)).collect())
}

/// Largest-remainder split of `total` over `weights`; leftover units go by
/// descending fractional part, then ascending key.
fn largest_remainder<K: Ord + Clone>(weights: &BTreeMap<K, f64>, total: u64) -> BTreeMap<K, u64> {
    let z: f64 = weights.values().sum();
    let uniform = z <= 0.0;
    let n = weights.len() as f64;
    let mut out = BTreeMap::new();
    let mut fracs = Vec::with_capacity(weights.len());
    let mut assigned = 0u64;
    for (k, &w) in weights {
        let share = if uniform { 1.0 / n } else { w / z };
        let exact = total as f64 * share;
        let floor = (exact.floor() as u64).min(total);
        assigned += floor;
        out.insert(k.clone(), floor);
        fracs.push((exact - floor as f64, k.clone()));
    }
    // floors can overshoot only through rounding noise; trim from the smallest fractions
    while assigned > total {
        fracs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.cmp(&a.1)));
        for (_, k) in &fracs {
            if assigned == total {
                break;
            }
            let q = out.get_mut(k).expect("key present");
            if *q > 0 {
                *q -= 1;
                assigned -= 1;
            }
        }
    }
    fracs.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let mut i = 0;
    while assigned < total && !fracs.is_empty() {
        *out.get_mut(&fracs[i % fracs.len()].1).expect("key present") += 1;
        assigned += 1;
        i += 1;
    }
    out
}

/// Integer quotas summing to `min(budget, sum(available))`, never above a
/// bucket's availability. Buckets that would overflow are pinned at their
/// availability and the freed budget is re-apportioned among the rest with
/// renormalized weights.
pub fn allocate_quotas<K: Ord + Clone>(
    weights: &BTreeMap<K, f64>,
    budget: u64,
    available: &BTreeMap<K, u64>,
) -> BTreeMap<K, u64> {
    let avail = |k: &K| available.get(k).copied().unwrap_or(0);
    let mut quotas: BTreeMap<K, u64> = weights.keys().chain(available.keys()).map(|k| (k.clone(), 0)).collect();
    let target = budget.min(available.values().sum());
    let mut pinned: BTreeMap<K, u64> = BTreeMap::new();
    loop {
        let remaining = target - pinned.values().sum::<u64>();
        let mut active: BTreeMap<K, f64> = quotas
            .keys()
            .filter(|k| !pinned.contains_key(*k) && avail(k) > 0)
            .map(|k| (k.clone(), weights.get(k).copied().unwrap_or(0.0)))
            .collect();
        // positive weights take precedence; zero-weight buckets only absorb
        // what the weighted ones cannot hold
        if active.values().any(|&w| w > 0.0) {
            active.retain(|_, w| *w > 0.0);
        }
        let shares = largest_remainder(&active, remaining);
        let over: Vec<K> = shares.iter().filter(|(k, &q)| q > avail(k)).map(|(k, _)| k.clone()).collect();
        let saturated = over.is_empty() && shares.values().sum::<u64>() < remaining;
        if over.is_empty() && !saturated {
            for (k, q) in pinned.into_iter().chain(shares) {
                quotas.insert(k, q);
            }
            return quotas;
        }
        if saturated || active.is_empty() {
            // unreachable when target <= sum(available); kept as a guard
            for (k, q) in pinned.into_iter().chain(shares) {
                quotas.insert(k, q);
            }
            return quotas;
        }
        for k in over {
            let a = avail(&k);
            pinned.insert(k, a);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub t_region: f64,
    pub t_lang: f64,
    /// `None` keeps everything (quota = availability).
    pub budget: Option<u64>,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams { t_region: DEFAULT_T_REGION, t_lang: DEFAULT_T_LANG, budget: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub t_region: f64,
    pub t_lang: f64,
    pub seed: u64,
    pub budget: u64,
    pub region_available: BTreeMap<EntityId, u64>,
    pub region_quota: BTreeMap<EntityId, u64>,
    pub language_available: BTreeMap<EntityId, BTreeMap<String, u64>>,
    pub language_quota: BTreeMap<EntityId, BTreeMap<String, u64>>,
}

impl SamplingPlan {
    /// Checks conservation and availability bounds.
    pub fn check(&self) -> Result<(), String> {
        let avail: u64 = self.region_available.values().sum();
        let total: u64 = self.region_quota.values().sum();
        if total != self.budget.min(avail) {
            return Err(format!("region quotas sum to {total}, expected {}", self.budget.min(avail)));
        }
        for (region, q) in &self.region_quota {
            if *q > self.region_available.get(region).copied().unwrap_or(0) {
                return Err(format!("region {region} quota exceeds availability"));
            }
            let langs = self.language_quota.get(region).cloned().unwrap_or_default();
            let lang_sum: u64 = langs.values().sum();
            if lang_sum != *q {
                return Err(format!("languages of {region} sum to {lang_sum}, region quota is {q}"));
            }
            for (lang, lq) in &langs {
                let a = self.language_available.get(region).and_then(|m| m.get(lang)).copied().unwrap_or(0);
                if *lq > a {
                    return Err(format!("{region}/{lang} quota exceeds availability"));
                }
            }
        }
        Ok(())
    }

    /// Plain-text report of available / quota per region and per language.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "t_region={} t_lang={} seed={} budget={}", self.t_region, self.t_lang, self.seed, self.budget);
        let _ = writeln!(out, "{:<16} {:<10} {:>10} {:>10}", "region", "language", "available", "selected");
        for (region, avail) in &self.region_available {
            let q = self.region_quota.get(region).copied().unwrap_or(0);
            let _ = writeln!(out, "{:<16} {:<10} {avail:>10} {q:>10}", region.as_str(), "*");
            if let Some(langs) = self.language_available.get(region) {
                for (lang, a) in langs {
                    let lq = self.language_quota.get(region).and_then(|m| m.get(lang)).copied().unwrap_or(0);
                    let _ = writeln!(out, "{:<16} {lang:<10} {a:>10} {lq:>10}", "");
                }
            }
        }
        out
    }
}

/// Region quotas from per-region record counts at `t_region`, then language
/// quotas within each region at `t_lang`, then a seeded uniform draw without
/// replacement inside each (region, language) bucket. Output is grouped by
/// region then language; within a bucket the input order is kept.
pub fn hybrid_sample(records: Vec<DatasetRecord>, params: &SamplingParams) -> Result<(SamplingPlan, Vec<DatasetRecord>), SampleError> {
    for t in [params.t_region, params.t_lang] {
        if !(t > 0.0 && t.is_finite()) {
            return Err(SampleError::Temperature(t));
        }
    }
    let mut buckets: BTreeMap<EntityId, BTreeMap<String, Vec<DatasetRecord>>> = BTreeMap::new();
    for r in records {
        buckets.entry(r.region.clone()).or_default().entry(r.language.clone()).or_default().push(r);
    }
    let language_available: BTreeMap<EntityId, BTreeMap<String, u64>> = buckets
        .iter()
        .map(|(reg, langs)| (reg.clone(), langs.iter().map(|(l, v)| (l.clone(), v.len() as u64)).collect()))
        .collect();
    let region_available: BTreeMap<EntityId, u64> =
        language_available.iter().map(|(r, m)| (r.clone(), m.values().sum())).collect();
    let total: u64 = region_available.values().sum();
    let budget = params.budget.unwrap_or(total);

    let mut plan = SamplingPlan {
        t_region: params.t_region,
        t_lang: params.t_lang,
        seed: params.seed,
        budget,
        region_available,
        region_quota: BTreeMap::new(),
        language_available,
        language_quota: BTreeMap::new(),
    };
    if total == 0 {
        return Ok((plan, Vec::new()));
    }
    let rw = temperature_weights(&plan.region_available, params.t_region)?;
    plan.region_quota = allocate_quotas(&rw, budget, &plan.region_available);
    for (region, langs) in &plan.language_available {
        let q = plan.region_quota[region];
        let lq = match temperature_weights(langs, params.t_lang) {
            Ok(lw) => allocate_quotas(&lw, q, langs),
            Err(_) => langs.keys().map(|l| (l.clone(), 0)).collect(),
        };
        plan.language_quota.insert(region.clone(), lq);
    }

    let mut out = Vec::with_capacity(plan.region_quota.values().sum::<u64>() as usize);
    let seed = params.seed.to_string();
    for (region, langs) in buckets {
        for (lang, recs) in langs {
            let k = plan.language_quota[&region][&lang] as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(stable_hash_u64([seed.as_str(), region.as_str(), lang.as_str()]));
            let mut picked = rand::seq::index::sample(&mut rng, recs.len(), k).into_vec();
            picked.sort_unstable();
            let mut recs: Vec<Option<DatasetRecord>> = recs.into_iter().map(Some).collect();
            out.extend(picked.into_iter().map(|i| recs[i].take().expect("distinct indices")));
        }
    }
    Ok((plan, out))
}

/// Duplicate key: entity, kind, property, language, image title and a hash of
/// the normalized question.
pub fn dedup_key(r: &DatasetRecord) -> String {
    let q = normalize_text(&r.question);
    stable_hash([
        r.entity_id.as_str(),
        r.kind.as_str(),
        r.property.as_ref().map_or("", |p| p.as_str()),
        r.language.as_str(),
        r.image_title().unwrap_or(""),
        stable_hash([q.as_str()]).as_str(),
    ])
}

/// Keeps the first record for each [`dedup_key`].
pub fn dedup_records<I: IntoIterator<Item = DatasetRecord>>(records: I) -> impl Iterator<Item = DatasetRecord> {
    let mut seen = HashSet::new();
    records.into_iter().filter(move |r| seen.insert(dedup_key(r)))
}
