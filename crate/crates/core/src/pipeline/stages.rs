use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, BufReader, Cursor};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::*;
use crate::dataset::{
    compute_stats, shuffle_mcq_options, DatasetRecord, RecordKind, Stage, StatsReport,
};
use crate::eval::{report_table, score_predictions, GoldItem, Prediction};
use crate::exec::{map_bounded, Backoff};
use crate::gateway::{
    leakage_check, parse_filter_verdict, parse_mcq_response, parse_refine_response, parse_tf_response,
    render_prompt, ClientRouter, DispatchFailure, FilterKind, Gateway, GatewayError, Malformed, PromptContext,
    PromptKind, PromptMeta, PromptRequest,
};
use crate::images::{
    build_image_manifest, CommonsClient, ImageManifest, ManifestOptions, MediaWikiClient, NoCommons,
    StoredCommonsClient,
};
use crate::kg::{line_aligned_shards, parse_dump_range, ClaimValue, DumpItem, DumpOptions, Entity, EntityId, ParseDiagnostic};
use crate::qa::{generate_entity_qas, pair_images_with_qa, QaDiagnostics, TemplateStore};
use crate::replay::{Mode, ReplayStore};
use crate::sampler::{dedup_records, hybrid_sample};
use crate::select::{apply_property_cap, SelectedEntity, Selector};
use crate::text::stable_hash_u64;

const DIAGNOSTIC_SAMPLE: usize = 20;

fn workers() -> usize {
    std::thread::available_parallelism().map_or(4, |n| n.get())
}

fn counts<const N: usize>(pairs: [(&str, usize); N]) -> BTreeMap<String, u64> {
    pairs.into_iter().map(|(k, v)| (k.to_owned(), v as u64)).collect()
}

// ---- select ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueLabels {
    pub id: EntityId,
    pub labels: BTreeMap<String, String>,
}

struct ShardScan<T> {
    found: Vec<T>,
    read: u64,
    diagnostics: Vec<ParseDiagnostic>,
}

/// Parse every shard of the dump in parallel, keeping what `pick` returns.
fn scan_dump<T: Send>(
    ctx: &StageCtx,
    pick: impl Fn(Entity) -> Option<T> + Sync,
) -> StageResult<ShardScan<T>> {
    let dump = &ctx.cfg.paths.dump;
    ctx.require(dump)?;
    let shards = line_aligned_shards(dump, workers() * 4).map_err(|e| ctx.io(dump, e))?;
    let results = map_bounded(&shards, workers(), |range| -> io::Result<ShardScan<T>> {
        let mut out = ShardScan { found: Vec::new(), read: 0, diagnostics: Vec::new() };
        for item in parse_dump_range(dump, range.clone(), DumpOptions::default())? {
            match item? {
                DumpItem::Entity(e) => {
                    out.read += 1;
                    out.found.extend(pick(*e));
                }
                DumpItem::Diagnostic(d) => out.diagnostics.push(d),
            }
        }
        Ok(out)
    });
    let mut all = ShardScan { found: Vec::new(), read: 0, diagnostics: Vec::new() };
    for r in results {
        let r = r.map_err(|e| ctx.io(dump, e))?;
        all.found.extend(r.found);
        all.read += r.read;
        all.diagnostics.extend(r.diagnostics);
    }
    Ok(all)
}

fn referenced_ids(s: &SelectedEntity) -> impl Iterator<Item = &EntityId> {
    s.eligible_properties
        .iter()
        .chain(s.region_matches.iter().map(|(p, _)| p))
        .flat_map(|p| s.entity.claims.get(p).into_iter().flatten())
        .filter_map(|v| match v {
            ClaimValue::EntityRef { id } => Some(id),
            ClaimValue::Quantity { unit, .. } => unit.as_ref(),
            _ => None,
        })
}

pub(super) fn select(ctx: &StageCtx) -> StageResult<StageReport> {
    let cfg = &ctx.cfg.selection;
    let selector = Selector::new(cfg);
    let pass1 = scan_dump(ctx, |e| selector.select(e))?;
    let matched = pass1.found.len();
    let (selected, medians) =
        apply_property_cap(pass1.found, cfg.cap_mode).map_err(|e| ctx.fail(FailureKind::Invariant(e.to_string())))?;

    let wanted: BTreeSet<EntityId> = selected.iter().flat_map(referenced_ids).cloned().collect();
    let pass2 = scan_dump(ctx, |e| {
        if wanted.contains(&e.id) { Some(ValueLabels { id: e.id, labels: e.labels }) } else { None }
    })?;
    let mut labels = pass2.found;
    labels.sort_by(|a, b| a.id.cmp(&b.id));
    labels.dedup_by(|a, b| a.id == b.id);

    let mut per_region: BTreeMap<String, usize> = BTreeMap::new();
    for s in &selected {
        *per_region.entry(s.assigned_region().to_string()).or_default() += 1;
    }
    let mut diagnostics = pass1.diagnostics;
    diagnostics.sort_by_key(|d| d.byte_offset);

    ctx.write_jsonl(SELECTED, &selected)?;
    ctx.write_jsonl(VALUE_LABELS, &labels)?;

    let mut report = StageReport::new(ctx.stage);
    report.inputs = counts([("entities", pass1.read as usize)]);
    report.outputs = counts([("selected", selected.len()), ("value_labels", labels.len())]);
    report.rejects = counts([("malformed_lines", diagnostics.len())]);
    report.details = json!({
        "matched": matched,
        "per_region": per_region,
        "property_cap_medians": medians,
        "unresolved_values": wanted.len() - labels.len(),
        "diagnostics": &diagnostics[..diagnostics.len().min(DIAGNOSTIC_SAMPLE)],
    });
    Ok(report)
}

fn read_selected(ctx: &StageCtx) -> StageResult<Vec<SelectedEntity>> {
    ctx.read_jsonl(&ctx.path(SELECTED))
}

// ---- images ----

pub(super) fn images(ctx: &StageCtx) -> StageResult<StageReport> {
    let selected = read_selected(ctx)?;
    let ic = &ctx.cfg.images;
    let opts = ManifestOptions {
        max_per_entity: ic.max_per_entity,
        max_in_flight: ic.max_in_flight,
        max_retries: ic.max_retries,
        backoff: Backoff::default(),
    };
    let store_mode = match ic.commons {
        CommonsMode::Replay => Some(Mode::Replay),
        CommonsMode::Record => Some(Mode::Record),
        CommonsMode::Live => Some(Mode::Live),
        CommonsMode::None => None,
    };
    let (manifest, mreport) = match store_mode {
        None => build_image_manifest(&selected, &NoCommons, &opts),
        Some(mode) => {
            let path = ctx.cfg.commons_replay_path();
            let store = Arc::new(ReplayStore::open(&path).map_err(|e| ctx.io(&path, e))?);
            let live = (mode != Mode::Replay).then(|| MediaWikiClient::new(&ic.endpoint, &ic.user_agent));
            let client = StoredCommonsClient::new(live, store, mode);
            build_image_manifest(&selected, &client as &dyn CommonsClient, &opts)
        }
    };
    // a replay run must reproduce the recorded listings exactly
    if ic.commons == CommonsMode::Replay {
        if let Some((id, why)) = mreport.failures.first() {
            return Err(ctx.fail(FailureKind::Gateway(format!(
                "{} category listings unavailable in replay, first {id}: {why}",
                mreport.failures.len()
            ))));
        }
    }
    ctx.write_json(IMAGES, &manifest)?;
    let mut report = StageReport::new(ctx.stage);
    report.inputs = counts([("selected", selected.len())]);
    report.outputs = counts([("entities_with_images", mreport.entities_with_images), ("images", mreport.images)]);
    report.rejects = counts([
        ("without_images", selected.len() - mreport.entities_with_images),
        ("fetch_failures", mreport.failures.len()),
    ]);
    report.details = json!({ "failures": &mreport.failures[..mreport.failures.len().min(DIAGNOSTIC_SAMPLE)] });
    Ok(report)
}

// ---- generate ----

fn load_templates(ctx: &StageCtx) -> StageResult<TemplateStore> {
    let parsed = match &ctx.cfg.paths.templates {
        Some(p) => {
            ctx.require(p)?;
            let f = std::fs::File::open(p).map_err(|e| ctx.io(p, e))?;
            TemplateStore::read_jsonl(BufReader::new(f))
        }
        None => TemplateStore::read_jsonl(Cursor::new(BUILTIN_TEMPLATES)),
    };
    parsed.map_err(|e| ctx.fail(FailureKind::Config(format!("templates: {e}"))))
}

pub(super) fn generate(ctx: &StageCtx) -> StageResult<StageReport> {
    let templates = load_templates(ctx)?;
    let selected = read_selected(ctx)?;
    let labels: HashMap<EntityId, BTreeMap<String, String>> = ctx
        .read_jsonl::<ValueLabels>(&ctx.path(VALUE_LABELS))?
        .into_iter()
        .map(|v| (v.id, v.labels))
        .collect();
    let manifest: ImageManifest = ctx.read_json(IMAGES)?;

    let mut diag = QaDiagnostics::default();
    let mut qa_count = 0;
    let mut without_images = 0;
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for s in &selected {
        let (qas, d) = generate_entity_qas(s, &templates, &labels);
        diag.merge(d);
        qa_count += qas.len();
        if manifest.images_of(&s.entity.id).is_empty() {
            without_images += qas.len();
            continue;
        }
        for t in pair_images_with_qa(&manifest, qas) {
            let r = DatasetRecord::from_triplet(&t);
            if seen.insert(r.id.clone()) {
                records.push(r);
            }
        }
    }
    ctx.write_records(TEMPLATED, &records)?;
    let mut report = StageReport::new(ctx.stage);
    report.inputs = counts([("selected", selected.len()), ("images", manifest.total_images())]);
    report.outputs = counts([("qa_pairs", qa_count), ("records", records.len())]);
    report.rejects = counts([
        ("qa_without_image", without_images),
        ("missing_label", diag.missing_label),
        ("render_failure", diag.render_failure),
        ("missing_template", diag.missing_template.values().sum()),
    ]);
    report.details = json!({ "label_fallbacks": diag.label_fallback, "missing_template": diag.missing_template });
    Ok(report)
}

// ---- model stages ----

struct ModelStage<'a> {
    ctx: &'a StageCtx<'a>,
    gateway: Gateway,
    router: ClientRouter,
    entities: HashMap<EntityId, Entity>,
}

/// A model call either produced a value or a reason to drop the item.
enum Outcome<T> {
    Ok(T),
    Rejected { reason: String, raw: Option<String> },
}

impl<'a> ModelStage<'a> {
    fn open(ctx: &'a StageCtx<'a>) -> StageResult<Self> {
        let path = ctx.cfg.replay_path();
        let store = ReplayStore::open(&path).map_err(|e| ctx.io(&path, e))?;
        let router = ctx.cfg.gateway.router().map_err(|e| ctx.fail(FailureKind::Config(e)))?;
        let entities = read_selected(ctx)?.into_iter().map(|s| (s.entity.id.clone(), s.entity)).collect();
        Ok(ModelStage { ctx, gateway: Gateway::new(ctx.cfg.gateway.policy(), Arc::new(store)), router, entities })
    }

    fn entity(&self, id: &EntityId) -> StageResult<&Entity> {
        self.entities
            .get(id)
            .ok_or_else(|| self.ctx.fail(FailureKind::Invariant(format!("record refers to unselected entity {id}"))))
    }

    /// Fields shared by every prompt.
    fn context(&self, r: &DatasetRecord) -> StageResult<PromptContext> {
        let e = self.entity(&r.entity_id)?;
        let label = e.label(&r.language).or_else(|| e.label("en")).unwrap_or(e.id.as_str());
        let description = e.description(&r.language).or_else(|| e.description("en")).unwrap_or("");
        let language_name = self.ctx.cfg.language_name(&r.language);
        Ok([
            ("language_name", language_name.clone()),
            ("language", language_name),
            ("label", label.to_owned()),
            ("description", description.to_owned()),
            ("region", self.ctx.cfg.region_name(r.region.as_str())),
            ("question", r.question.clone()),
            ("answer", r.answer.clone()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect())
    }

    fn request(&self, kind: PromptKind, ctx: &PromptContext, r: &DatasetRecord, image: bool) -> StageResult<PromptRequest> {
        let req = render_prompt(kind, ctx)
            .and_then(|q| q.with_image(if image { r.image.clone() } else { None }))
            .map_err(|e| self.ctx.fail(FailureKind::Invariant(e.to_string())))?;
        Ok(req.with_meta(PromptMeta {
            entity_id: r.entity_id.to_string(),
            language: r.language.clone(),
            region: r.region.to_string(),
            qa_ids: vec![r.id.clone()],
        }))
    }

    /// Refusals and malformed responses drop the item; anything that makes
    /// the run irreproducible (a replay miss, exhausted retries, a store
    /// failure) fails the stage.
    fn call<T>(&self, req: &PromptRequest, parse: impl Fn(&str) -> Result<T, Malformed>) -> StageResult<Outcome<T>> {
        let client = self.router.route(&req.meta.region, &req.meta.language);
        match self.gateway.dispatch_parsed(req, client, parse) {
            Ok(v) => Ok(Outcome::Ok(v)),
            Err(DispatchFailure::Malformed { reason, raw }) => {
                Ok(Outcome::Rejected { reason: format!("malformed: {}", reason.0), raw: Some(raw) })
            }
            Err(DispatchFailure::Gateway(GatewayError::Refusal(r))) => {
                Ok(Outcome::Rejected { reason: format!("refusal: {r}"), raw: None })
            }
            Err(DispatchFailure::Gateway(e)) => Err(self.ctx.fail(FailureKind::Gateway(e.to_string()))),
        }
    }

    fn workers(&self) -> usize {
        self.ctx.cfg.gateway.max_in_flight
    }

    fn details(&self) -> serde_json::Value {
        json!({ "client_calls": self.gateway.client_calls(), "mode": self.ctx.cfg.gateway.mode })
    }
}

fn reject(r: &DatasetRecord, reason: String, raw: Option<String>) -> RejectRecord {
    RejectRecord { id: r.id.clone(), entity_id: r.entity_id.to_string(), language: r.language.clone(), reason, raw }
}

/// Key for "the same QA pair", ignoring which image it is bound to.
fn qa_key(r: &DatasetRecord) -> (String, RecordKind, String, String, String, String) {
    (
        r.entity_id.to_string(),
        r.kind,
        r.property.as_ref().map_or_else(String::new, |p| p.to_string()),
        r.language.clone(),
        r.question.clone(),
        r.answer.clone(),
    )
}

/// First record of each distinct QA pair, in file order.
fn distinct_qas(records: &[DatasetRecord]) -> Vec<&DatasetRecord> {
    let mut seen = BTreeSet::new();
    records.iter().filter(|r| seen.insert(qa_key(r))).collect()
}

fn reason_counts(rejects: &[RejectRecord]) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for r in rejects {
        let head = r.reason.split(':').next().unwrap_or(&r.reason).to_owned();
        *out.entry(head).or_default() += 1;
    }
    out
}

/// Share of sources turned into true/false rather than four-option items.
fn wants_truefalse(source_id: &str, fraction: f64) -> bool {
    let h = stable_hash_u64([source_id, "truefalse"]);
    ((h % 1_000_000) as f64) < fraction * 1_000_000.0
}

pub(super) fn mcq(ctx: &StageCtx) -> StageResult<StageReport> {
    let templated = ctx.read_records(TEMPLATED)?;
    let ms = ModelStage::open(ctx)?;
    let sources = distinct_qas(&templated);
    let fraction = ctx.cfg.gateway.truefalse_fraction;
    let results = map_bounded(&sources, ms.workers(), |r| -> StageResult<Result<DatasetRecord, RejectRecord>> {
        let pctx = ms.context(r)?;
        let tf = wants_truefalse(&r.id, fraction);
        let kind = if tf { PromptKind::Truefalse } else { PromptKind::Mcq };
        let req = ms.request(kind, &pctx, r, false)?;
        let out = if tf {
            match ms.call(&req, parse_tf_response)? {
                Outcome::Ok(item) => Ok(DatasetRecord::truefalse_from(r, &item)),
                Outcome::Rejected { reason, raw } => Err(reject(r, reason, raw)),
            }
        } else {
            match ms.call(&req, parse_mcq_response)? {
                Outcome::Ok(item) => Ok(DatasetRecord::mcq_from(r, &item)),
                Outcome::Rejected { reason, raw } => Err(reject(r, reason, raw)),
            }
        };
        Ok(out)
    });
    let (mut kept, mut rejects) = (Vec::new(), Vec::new());
    for res in results {
        match res? {
            Ok(r) => kept.push(r),
            Err(j) => rejects.push(j),
        }
    }
    ctx.write_records(MCQ, &kept)?;
    ctx.write_jsonl(MCQ_REJECTS, &rejects)?;
    let n_tf = kept.iter().filter(|r| r.kind == RecordKind::Truefalse).count();
    let mut report = StageReport::new(ctx.stage);
    report.inputs = counts([("templated", templated.len()), ("distinct_qa", sources.len())]);
    report.outputs = counts([("mcq", kept.len() - n_tf), ("truefalse", n_tf)]);
    report.rejects = reason_counts(&rejects);
    report.details = ms.details();
    Ok(report)
}

pub(super) fn refine(ctx: &StageCtx) -> StageResult<StageReport> {
    let templated = ctx.read_records(TEMPLATED)?;
    let ms = ModelStage::open(ctx)?;
    let sources = distinct_qas(&templated);
    let results = map_bounded(&sources, ms.workers(), |r| -> StageResult<Result<(String, String), String>> {
        let req = ms.request(PromptKind::Refine, &ms.context(r)?, r, false)?;
        Ok(match ms.call(&req, parse_refine_response)? {
            Outcome::Ok(q) if leakage_check(&q.question, ms.entity(&r.entity_id)?, &r.language) => {
                Err("leakage: question names the entity".to_owned())
            }
            Outcome::Ok(q) => Ok((q.question, q.answer)),
            Outcome::Rejected { reason, .. } => Err(reason),
        })
    });
    let mut outcome = HashMap::new();
    for (src, res) in sources.iter().zip(results) {
        outcome.insert(qa_key(src), res?);
    }
    // one decision per distinct pair, applied to every image it is bound to
    let (mut kept, mut rejects) = (Vec::new(), Vec::new());
    for r in &templated {
        match &outcome[&qa_key(r)] {
            Ok((q, a)) => kept.push(DatasetRecord { question: q.clone(), answer: a.clone(), stage: Stage::Refined, ..r.clone() }),
            Err(reason) => rejects.push(reject(r, reason.clone(), None)),
        }
    }
    ctx.write_records(REFINED, &kept)?;
    ctx.write_jsonl(REFINE_REJECTS, &rejects)?;
    let mut report = StageReport::new(ctx.stage);
    report.inputs = counts([("templated", templated.len()), ("distinct_qa", sources.len())]);
    report.outputs = counts([("refined", kept.len())]);
    report.rejects = reason_counts(&rejects);
    report.details = ms.details();
    Ok(report)
}

fn judge_request(ms: &ModelStage, r: &DatasetRecord) -> StageResult<(PromptRequest, FilterKind)> {
    let mut pctx = ms.context(r)?;
    if r.kind.is_open_ended() {
        return Ok((ms.request(PromptKind::VqaFilter, &pctx, r, true)?, FilterKind::VqaFilter));
    }
    let (question_type, options_text) = match &r.options {
        Some(opts) => (
            "Multiple Choice",
            ["A)", "B)", "C)", "D)"].iter().zip(opts).map(|(k, o)| format!("{k} {o}")).collect::<Vec<_>>().join("\n"),
        ),
        None => ("True/False", "True / False".to_owned()),
    };
    pctx.insert("question_type".into(), question_type.into());
    pctx.insert("options_text".into(), options_text);
    pctx.insert("correct_answer".into(), r.answer.clone());
    pctx.insert("explanation".into(), r.explanation.clone().unwrap_or_default());
    Ok((ms.request(PromptKind::McqFilter, &pctx, r, true)?, FilterKind::McqFilter))
}

pub(super) fn filter(ctx: &StageCtx) -> StageResult<StageReport> {
    let mut input = ctx.read_records(REFINED)?;
    let n_open = input.len();
    input.extend(ctx.read_records(MCQ)?);
    let ms = ModelStage::open(ctx)?;
    let results = map_bounded(&input, ms.workers(), |r| -> StageResult<Result<DatasetRecord, RejectRecord>> {
        let (req, kind) = judge_request(&ms, r)?;
        Ok(match ms.call(&req, |t| parse_filter_verdict(t, kind))? {
            Outcome::Ok(v) if v.keeps() => Ok(DatasetRecord { stage: Stage::Filtered, verdict: Some(v), ..r.clone() }),
            Outcome::Ok(v) => {
                let why = if v.is_match { "not culturally relevant" } else { "no match" };
                Err(reject(r, format!("{}: {why}", v.issue), Some(v.to_canonical_text())))
            }
            Outcome::Rejected { reason, raw } => Err(reject(r, reason, raw)),
        })
    });
    let (mut kept, mut rejects) = (Vec::new(), Vec::new());
    for res in results {
        match res? {
            Ok(r) => kept.push(r),
            Err(j) => rejects.push(j),
        }
    }
    ctx.write_records(FILTERED, &kept)?;
    ctx.write_jsonl(FILTER_REJECTS, &rejects)?;
    let kept_open = kept.iter().filter(|r| r.kind.is_open_ended()).count();
    let mut report = StageReport::new(ctx.stage);
    report.inputs = counts([("open_ended", n_open), ("mcq", input.len() - n_open)]);
    report.outputs = counts([("open_ended", kept_open), ("mcq", kept.len() - kept_open)]);
    report.rejects = reason_counts(&rejects);
    report.details = ms.details();
    Ok(report)
}

// ---- sample, stats, eval ----

pub(super) fn sample(ctx: &StageCtx) -> StageResult<StageReport> {
    let filtered = ctx.read_records(FILTERED)?;
    let n_in = filtered.len();
    let unique: Vec<DatasetRecord> = dedup_records(filtered).collect();
    let n_unique = unique.len();
    let params = ctx.cfg.sampling.params();
    let (plan, picked) = hybrid_sample(unique, &params).map_err(|e| ctx.fail(FailureKind::Config(e.to_string())))?;
    plan.check().map_err(|e| ctx.fail(FailureKind::Invariant(e)))?;
    let sampled = picked
        .into_iter()
        .map(|r| if r.kind == RecordKind::Mcq { shuffle_mcq_options(&r, params.seed).expect("checked kind") } else { r })
        .collect::<Vec<_>>();
    ctx.write_records(SAMPLED, &sampled)?;
    ctx.write_json(SAMPLING_PLAN_JSON, &plan)?;
    ctx.write_text(SAMPLING_PLAN_TXT, &plan.report())?;
    let mut report = StageReport::new(ctx.stage);
    report.inputs = counts([("filtered", n_in)]);
    report.outputs = counts([("sampled", sampled.len())]);
    report.rejects = counts([("duplicates", n_in - n_unique), ("over_quota", n_unique - sampled.len())]);
    report.details = json!({ "budget": plan.budget, "t_region": plan.t_region, "t_lang": plan.t_lang, "seed": plan.seed });
    Ok(report)
}

pub(super) fn stats(ctx: &StageCtx) -> StageResult<StageReport> {
    let mut records = Vec::new();
    let mut inputs = BTreeMap::new();
    for name in [TEMPLATED, REFINED, MCQ, FILTERED] {
        let rs = ctx.read_records(name)?;
        inputs.insert(name.trim_end_matches(".jsonl").to_owned(), rs.len() as u64);
        records.extend(rs);
    }
    let selected = read_selected(ctx)?;
    let report_data: StatsReport = compute_stats(&records, selected.iter().map(|s| &s.entity));
    report_data.check_totals().map_err(|e| ctx.fail(FailureKind::Invariant(e)))?;
    let bad = report_data.non_monotone_buckets();
    if !bad.is_empty() {
        return Err(ctx.fail(FailureKind::Invariant(format!("stage counts grow in buckets {}", bad.join(", ")))));
    }
    let names: BTreeMap<String, String> =
        ctx.cfg.selection.regions.iter().map(|r| (r.qid.to_string(), r.display_name.clone())).collect();
    ctx.write_json(STATS_JSON, &report_data)?;
    ctx.write_text(STATS_TXT, &report_data.to_table(&names))?;
    let t = report_data.totals;
    let mut report = StageReport::new(ctx.stage);
    report.inputs = inputs;
    report.outputs = counts([("regions", report_data.per_region.len()), ("entities", t.entities as usize), ("images", t.images as usize)]);
    report.details = serde_json::to_value(t.counts).expect("counts serialize");
    Ok(report)
}

/// Identity questions of the sampled set, targeting the entity label.
fn gold_from_sampled(ctx: &StageCtx) -> StageResult<Vec<GoldItem>> {
    let entities: HashMap<EntityId, Entity> =
        read_selected(ctx)?.into_iter().map(|s| (s.entity.id.clone(), s.entity)).collect();
    let mut gold = Vec::new();
    for r in ctx.read_records(SAMPLED)? {
        if r.kind != RecordKind::Identity {
            continue;
        }
        let Some(e) = entities.get(&r.entity_id) else { continue };
        let Some(target) = e.label(&r.language) else { continue };
        let aliases = e.aliases.get(&r.language).cloned().unwrap_or_default();
        gold.push(GoldItem { id: r.id, language: r.language, target: target.to_owned(), aliases });
    }
    Ok(gold)
}

pub(super) fn eval(ctx: &StageCtx) -> StageResult<StageReport> {
    let ec = &ctx.cfg.eval;
    if ec.systems.is_empty() {
        return Err(ctx.fail(FailureKind::Config("eval.systems is empty".into())));
    }
    let gold = match &ec.gold {
        Some(p) => ctx.read_jsonl::<GoldItem>(p)?,
        None => gold_from_sampled(ctx)?,
    };
    let mut scored = Vec::new();
    let mut orphans = 0;
    for s in &ec.systems {
        let preds: Vec<Prediction> = ctx.read_jsonl(&s.predictions)?;
        let r = score_predictions(&preds, &gold).map_err(|e| {
            ctx.fail(FailureKind::Corrupt { file: s.predictions.clone(), line: 0, reason: e.to_string() })
        })?;
        orphans += r.orphans.len();
        scored.push((s.name.clone(), r));
    }
    let as_map: BTreeMap<&str, _> = scored.iter().map(|(n, r)| (n.as_str(), r)).collect();
    ctx.write_json(EVAL_JSON, &as_map)?;
    ctx.write_text(EVAL_TXT, &report_table(&scored))?;
    let mut report = StageReport::new(ctx.stage);
    report.inputs = counts([("gold", gold.len()), ("systems", scored.len())]);
    report.outputs = counts([("scored", scored.len())]);
    report.rejects = counts([("orphan_predictions", orphans)]);
    report.details = json!(scored
        .iter()
        .map(|(n, r)| (n.clone(), r.per_level.iter().map(|(l, v)| (format!("{l:?}"), *v)).collect::<BTreeMap<_, _>>()))
        .collect::<BTreeMap<_, _>>());
    Ok(report)
}

