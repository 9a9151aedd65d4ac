//! Seeded synthetic knowledge graphs, dump writers and an offline model.
//! Used by fixtures, tests and throughput checks.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::gateway::{ModelClient, ModelError, PromptKind};
use crate::images::{record_category_listing, CommonsClient, ImageRef, StaticCommonsClient};
use crate::pipeline::{
    run_pipeline, ClientSpec, EvalConfig, GatewayConfig, ImageConfig, Paths, PipelineConfig, RunManifest, SamplingConfig,
};
use crate::replay::{Mode, ReplayStore};
use crate::kg::{ClaimValue, Entity, EntityId, PropertyId};
use crate::select::{CapMode, RegionSpec, SelectionConfig};
use crate::text::stable_hash_u64;

pub const SYNTH_LANGUAGES: [&str; 6] = ["en", "es", "fr", "de", "hi", "ja"];
const OUT_OF_SCOPE_LANGUAGES: [&str; 2] = ["it", "pt"];
pub const SYNTH_PROPERTIES: [&str; 8] = ["P17", "P131", "P19", "P27", "P31", "P571", "P84", "P2048"];
const SYNTH_REGIONS: [(&str, &str); 8] = [
    ("Q668", "India"),
    ("Q17", "Japan"),
    ("Q29", "Spain"),
    ("Q142", "France"),
    ("Q183", "Germany"),
    ("Q96", "Mexico"),
    ("Q155", "Brazil"),
    ("Q79", "Egypt"),
];
const METRE: &str = "Q11573";

fn q(s: impl Into<String>) -> EntityId {
    EntityId::new(s).expect("synthetic id")
}

fn p(s: &str) -> PropertyId {
    PropertyId::new(s).expect("synthetic property")
}

fn noun(lang: &str, kind: &str) -> &'static str {
    match (kind, lang) {
        ("place", "es") => "Lugar",
        ("place", "fr") => "Lieu",
        ("place", "de") => "Ort",
        ("place", "hi") => "स्थान",
        ("place", "ja") => "場所",
        ("place", _) => "Place",
        ("class", "es") => "Tipo",
        ("class", "fr") => "Type",
        ("class", "de") => "Art",
        ("class", "hi") => "प्रकार",
        ("class", "ja") => "種類",
        ("class", _) => "Kind",
        ("person", "hi") => "व्यक्ति",
        ("person", "ja") => "人物",
        ("person", _) => "Person",
        ("thing", "es") => "Sitio",
        ("thing", "fr") => "Site",
        ("thing", "de") => "Stätte",
        ("thing", "hi") => "धरोहर",
        ("thing", "ja") => "名所",
        (_, _) => "Site",
    }
}

/// A generated graph plus the selection configuration it was built for.
#[derive(Debug, Clone)]
pub struct SynthKg {
    pub entities: Vec<Entity>,
    pub config: SelectionConfig,
}

#[derive(Debug, Clone, Copy)]
pub struct SynthParams {
    pub subjects: usize,
    pub regions: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { subjects: 200, regions: 5, seed: 7 }
    }
}

fn add_claim(e: &mut Entity, prop: &str, v: ClaimValue) {
    e.claims.entry(p(prop)).or_default().push(v);
}

fn value_entity(id: u32, kind: &str, rng: &mut ChaCha8Rng, regions: &[EntityId]) -> Entity {
    let mut e = Entity::new(q(format!("Q{id}")));
    for lang in SYNTH_LANGUAGES {
        // a few value entities lack labels outside English to exercise fallback
        if lang == "en" || rng.gen_bool(0.85) {
            e.labels.insert(lang.into(), format!("{} {id}", noun(lang, kind)));
        }
    }
    if kind == "place" && rng.gen_bool(0.5) {
        add_claim(&mut e, "P17", ClaimValue::EntityRef { id: regions[rng.gen_range(0..regions.len())].clone() });
    }
    e
}

/// Subjects, region entities and referenced value entities. Subjects mix
/// in-scope and out-of-scope regions, properties and languages so selection
/// has real work to do.
pub fn synthetic_kg(params: SynthParams) -> SynthKg {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_regions = params.regions.clamp(1, SYNTH_REGIONS.len());
    let regions: Vec<EntityId> = SYNTH_REGIONS[..n_regions].iter().map(|(id, _)| q(*id)).collect();
    let foreign: Vec<EntityId> = (9001..9004).map(|n| q(format!("Q{n}"))).collect();
    let mut entities = Vec::new();

    for (id, name) in SYNTH_REGIONS.iter().take(n_regions) {
        let mut e = Entity::new(q(*id));
        e.labels.insert("en".into(), (*name).into());
        entities.push(e);
    }
    for f in &foreign {
        let mut e = Entity::new(f.clone());
        e.labels.insert("en".into(), format!("Faraway {}", f.as_str()));
        entities.push(e);
    }
    let mut metre = Entity::new(q(METRE));
    metre.labels.insert("en".into(), "metre".into());
    metre.labels.insert("es".into(), "metro".into());
    entities.push(metre);

    let places: Vec<u32> = (5000..5040).collect();
    let classes: Vec<u32> = (6000..6010).collect();
    let people: Vec<u32> = (7000..7015).collect();
    for &id in &places {
        entities.push(value_entity(id, "place", &mut rng, &regions));
    }
    for &id in &classes {
        entities.push(value_entity(id, "class", &mut rng, &regions));
    }
    for &id in &people {
        entities.push(value_entity(id, "person", &mut rng, &regions));
    }

    for i in 0..params.subjects {
        let id = 100_000 + i as u32;
        let mut e = Entity::new(q(format!("Q{id}")));
        for lang in SYNTH_LANGUAGES {
            if rng.gen_bool(0.55) {
                e.labels.insert(lang.into(), format!("{} {id}", noun(lang, "thing")));
            }
            if rng.gen_bool(0.45) {
                e.descriptions.insert(lang.into(), format!("{} {}", noun(lang, "class"), i % 13));
            }
        }
        for lang in OUT_OF_SCOPE_LANGUAGES {
            if rng.gen_bool(0.3) {
                e.labels.insert(lang.into(), format!("Luogo {id}"));
            }
        }
        if rng.gen_bool(0.25) {
            e.aliases.insert("en".into(), vec![format!("S{id}"), format!("The {id} site")]);
        }
        let region = |rng: &mut ChaCha8Rng| regions[rng.gen_range(0..regions.len())].clone();
        for prop in SYNTH_PROPERTIES {
            if !rng.gen_bool(0.4) {
                continue;
            }
            for _ in 0..rng.gen_range(1..=2) {
                let v = match prop {
                    "P17" | "P27" => {
                        if rng.gen_bool(0.7) {
                            ClaimValue::EntityRef { id: region(&mut rng) }
                        } else {
                            ClaimValue::EntityRef { id: foreign[rng.gen_range(0..foreign.len())].clone() }
                        }
                    }
                    "P131" | "P19" => {
                        if rng.gen_bool(0.2) {
                            ClaimValue::EntityRef { id: region(&mut rng) }
                        } else {
                            ClaimValue::EntityRef { id: q(format!("Q{}", places[rng.gen_range(0..places.len())])) }
                        }
                    }
                    "P31" => ClaimValue::EntityRef { id: q(format!("Q{}", classes[rng.gen_range(0..classes.len())])) },
                    "P84" => ClaimValue::EntityRef { id: q(format!("Q{}", people[rng.gen_range(0..people.len())])) },
                    "P571" => ClaimValue::Time { time: format!("+{}-00-00T00:00:00Z", rng.gen_range(1100..2020)), precision: 9 },
                    _ => ClaimValue::Quantity { amount: format!("{}.5", rng.gen_range(3..300)), unit: Some(q(METRE)) },
                };
                if !e.claims.get(&p(prop)).is_some_and(|vs| vs.contains(&v)) {
                    add_claim(&mut e, prop, v);
                }
            }
        }
        // region link under a property outside the configured set
        if rng.gen_bool(0.15) {
            add_claim(&mut e, "P1001", ClaimValue::EntityRef { id: region(&mut rng) });
        }
        if rng.gen_bool(0.6) {
            add_claim(&mut e, "P18", ClaimValue::text(format!("Site {id} main.jpg")));
        }
        if rng.gen_bool(0.35) {
            add_claim(&mut e, "P373", ClaimValue::text(format!("Site {id}")));
        }
        if rng.gen_bool(0.4) {
            e.sitelinks.insert("enwiki".into(), format!("Site {id}"));
        }
        if rng.gen_bool(0.1) {
            e.sitelinks.insert("commonswiki".into(), format!("Category:Site {id} views"));
        }
        entities.push(e);
    }

    let config = SelectionConfig {
        regions: SYNTH_REGIONS[..n_regions]
            .iter()
            .map(|(id, name)| RegionSpec { display_name: (*name).into(), qid: q(*id) })
            .collect(),
        languages: SYNTH_LANGUAGES.iter().map(|s| s.to_string()).collect(),
        properties: SYNTH_PROPERTIES.iter().map(|s| p(s)).collect(),
        cap_mode: CapMode::CountryMedian,
    };
    SynthKg { entities, config }
}

/// Category listings for every category the graph references, 0..=4 files
/// each, with an occasional duplicate entry.
pub fn synthetic_commons(entities: &[Entity], seed: u64) -> StaticCommonsClient {
    let mut client = StaticCommonsClient::default();
    for e in entities {
        let Some(cat) = crate::images::commons_category_of(e) else { continue };
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash_u64([cat.as_str(), seed.to_string().as_str()]));
        let n = rng.gen_range(0..=4);
        let mut files: Vec<String> = (0..n).map(|k| format!("File:{} view {k}.jpg", e.id)).collect();
        if n > 1 && rng.gen_bool(0.3) {
            files.push(files[0].clone());
        }
        let refs: Vec<&str> = files.iter().map(String::as_str).collect();
        client.insert(&cat, &refs);
    }
    client
}

fn datavalue(v: &ClaimValue) -> Value {
    match v {
        ClaimValue::EntityRef { id } => {
            let numeric: u64 = id.as_str()[1..].parse().unwrap_or(0);
            json!({"type": "wikibase-entityid", "value": {"entity-type": "item", "numeric-id": numeric, "id": id.as_str()}})
        }
        ClaimValue::Text { text } => json!({"type": "string", "value": text}),
        ClaimValue::Quantity { amount, unit } => {
            let unit = unit.as_ref().map_or("1".to_owned(), |u| format!("http://www.wikidata.org/entity/{u}"));
            let amount = if amount.starts_with('-') { amount.clone() } else { format!("+{amount}") };
            json!({"type": "quantity", "value": {"amount": amount, "unit": unit}})
        }
        ClaimValue::Time { time, precision } => {
            json!({"type": "time", "value": {"time": time, "precision": precision, "calendarmodel": "http://www.wikidata.org/entity/Q1985727"}})
        }
        ClaimValue::Coordinate { lat, lon } => {
            json!({"type": "globecoordinate", "value": {"latitude": lat, "longitude": lon, "globe": "http://www.wikidata.org/entity/Q2"}})
        }
        ClaimValue::Other { raw } => serde_json::from_str(raw).unwrap_or_else(|_| json!({"type": "unknown", "value": raw})),
    }
}

/// Wikidata dump JSON for one entity.
pub fn entity_to_dump_json(e: &Entity) -> Value {
    let term = |lang: &String, value: &String| json!({"language": lang, "value": value});
    let labels: serde_json::Map<String, Value> = e.labels.iter().map(|(l, v)| (l.clone(), term(l, v))).collect();
    let descriptions: serde_json::Map<String, Value> = e.descriptions.iter().map(|(l, v)| (l.clone(), term(l, v))).collect();
    let aliases: serde_json::Map<String, Value> = e
        .aliases
        .iter()
        .map(|(l, vs)| (l.clone(), Value::Array(vs.iter().map(|v| term(l, v)).collect())))
        .collect();
    let claims: serde_json::Map<String, Value> = e
        .claims
        .iter()
        .map(|(prop, vs)| {
            let statements = vs
                .iter()
                .map(|v| {
                    json!({
                        "mainsnak": {"snaktype": "value", "property": prop.as_str(), "datavalue": datavalue(v)},
                        "type": "statement",
                        "rank": "normal"
                    })
                })
                .collect();
            (prop.to_string(), Value::Array(statements))
        })
        .collect();
    let sitelinks: serde_json::Map<String, Value> = e
        .sitelinks
        .iter()
        .map(|(site, title)| (site.clone(), json!({"site": site, "title": title, "badges": []})))
        .collect();
    let empty_as_array = |m: serde_json::Map<String, Value>| if m.is_empty() { json!([]) } else { Value::Object(m) };
    json!({
        "type": "item",
        "id": e.id.as_str(),
        "labels": empty_as_array(labels),
        "descriptions": empty_as_array(descriptions),
        "aliases": empty_as_array(aliases),
        "claims": empty_as_array(claims),
        "sitelinks": empty_as_array(sitelinks),
    })
}

/// Writes entities one per line, optionally inside the `[`/`]` wrapper with
/// trailing commas used by full dumps. Returns bytes written.
pub fn write_dump<'a, W: Write>(entities: impl IntoIterator<Item = &'a Entity>, mut w: W, array_wrapper: bool) -> io::Result<u64> {
    let mut bytes = 0u64;
    let mut emit = |w: &mut W, s: &[u8]| -> io::Result<()> {
        bytes += s.len() as u64;
        w.write_all(s)
    };
    if array_wrapper {
        emit(&mut w, b"[\n")?;
    }
    let mut first = true;
    for e in entities {
        if array_wrapper && !first {
            emit(&mut w, b",\n")?;
        }
        first = false;
        emit(&mut w, serde_json::to_string(&entity_to_dump_json(e)).map_err(io::Error::other)?.as_bytes())?;
        if !array_wrapper {
            emit(&mut w, b"\n")?;
        }
    }
    if array_wrapper {
        emit(&mut w, b"\n]\n")?;
    }
    w.flush()?;
    Ok(bytes)
}

/// Totals a whole-file loader would report for a generated dump.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DumpTally {
    pub entities: u64,
    pub claims: u64,
    pub bytes: u64,
}

/// Streams synthetic entities into `w` until at least `target_bytes` are
/// written. Memory stays flat regardless of the target.
pub fn write_sized_dump<W: Write>(mut w: W, target_bytes: u64, seed: u64) -> io::Result<DumpTally> {
    let mut tally = DumpTally::default();
    let mut batch = 0u64;
    while tally.bytes < target_bytes {
        let kg = synthetic_kg(SynthParams { subjects: 500, regions: 5, seed: seed.wrapping_add(batch) });
        for mut e in kg.entities {
            // distinct ids across batches
            e.id = q(format!("Q{}", e.id.as_str()[1..].parse::<u64>().unwrap_or(0) + batch * 1_000_000));
            let line = serde_json::to_string(&entity_to_dump_json(&e)).map_err(io::Error::other)?;
            w.write_all(line.as_bytes())?;
            w.write_all(b"\n")?;
            tally.entities += 1;
            tally.claims += e.claim_count() as u64;
            tally.bytes += line.len() as u64 + 1;
            if tally.bytes >= target_bytes {
                break;
            }
        }
        batch += 1;
    }
    w.flush()?;
    Ok(tally)
}

// ---- offline model ----

/// Deterministic stand-in for the hosted models. It reads the fields a prompt
/// carries and answers in the expected grammar. A hash of the prompt decides
/// the small share of leaky, malformed or rejecting responses, so every
/// downstream rejection path is exercised.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicModel;

fn field<'a>(user: &'a str, keys: &[&str]) -> &'a str {
    for line in user.lines() {
        for k in keys {
            if let Some(rest) = line.strip_prefix(k) {
                return rest.trim();
            }
        }
    }
    ""
}

fn kind_of(system: &str) -> Option<PromptKind> {
    PromptKind::ALL.into_iter().find(|k| k.system_text() == system)
}

impl ModelClient for HeuristicModel {
    fn complete(&self, system: &str, user: &str, image: Option<&ImageRef>) -> Result<String, ModelError> {
        let kind = kind_of(system).ok_or_else(|| ModelError::Refusal("unknown system prompt".into()))?;
        let h = stable_hash_u64([user, image.map_or("", |i| i.commons_title.as_str())]);
        let label = field(user, &["Entity: ", "Label: "]);
        let question = field(user, &["Original Question: ", "Question: "]);
        let answer = field(user, &["Original Answer: ", "Answer: "]);
        let out = match kind {
            PromptKind::Refine => match h % 20 {
                0 => format!("Q: {} ({label})\nA: {answer}", question.trim_end_matches(['?', '？'])),
                1 => "I cannot help with that.".to_owned(),
                _ => format!("Q: {question}\nA: {answer}"),
            },
            PromptKind::Mcq => {
                let letter = if h % 17 == 0 { "C" } else { "A" };
                format!(
                    "Q: {question}\nA) {answer}\nB) Not {label}\nC) A different landmark\nD) None of the above\nCorrect: {letter}\nExplanation: {answer}"
                )
            }
            PromptKind::Truefalse => {
                let lead = if h % 2 == 0 { "Statement" } else { "Question" };
                format!("{lead}: {answer}\nAnswer: True\nExplanation: Given in the entity record.")
            }
            PromptKind::VqaFilter => {
                if h % 9 == 0 {
                    "MATCH: False\nISSUE: ImageMismatch\nEXPLANATION: The image shows something else.".to_owned()
                } else {
                    "MATCH: True\nISSUE: None\nEXPLANATION: The image is consistent with the entity.".to_owned()
                }
            }
            PromptKind::McqFilter => {
                let relevant = if h % 11 == 0 { "False" } else { "True" };
                let issue = if relevant == "True" { "None" } else { "CulturalMismatch" };
                format!("MATCH: True\nCULTURALLY_RELEVANT: {relevant}\nISSUE: {issue}\nEXPLANATION: Checked against the entity.")
            }
        };
        Ok(out)
    }
}

/// Distinct region ids in a configuration.
pub fn config_regions(cfg: &SelectionConfig) -> BTreeSet<EntityId> {
    cfg.regions.iter().map(|r| r.qid.clone()).collect()
}

/// English labels by id, for display tables.
pub fn english_names(entities: &[Entity]) -> BTreeMap<String, String> {
    entities
        .iter()
        .filter_map(|e| e.label("en").map(|l| (e.id.to_string(), l.to_owned())))
        .collect()
}

/// Writes a self-contained offline fixture into `dir`: `dump.jsonl`,
/// recorded Commons listings and model responses, and a `config.toml` that
/// replays them with no live client. Recording runs the full pipeline once
/// against [`HeuristicModel`] in a scratch work directory that is removed.
pub fn record_fixture(dir: &Path, params: SynthParams) -> Result<RunManifest, String> {
    let err = |e: io::Error| e.to_string();
    std::fs::create_dir_all(dir).map_err(err)?;
    let kg = synthetic_kg(params);
    let dump = std::fs::File::create(dir.join("dump.jsonl")).map_err(err)?;
    write_dump(&kg.entities, io::BufWriter::new(dump), true).map_err(err)?;

    let listings = synthetic_commons(&kg.entities, params.seed);
    let commons_path = dir.join("commons_replay.jsonl");
    let _ = std::fs::remove_file(&commons_path);
    let store = ReplayStore::open(&commons_path).map_err(err)?;
    for e in &kg.entities {
        if let Some(cat) = crate::images::commons_category_of(e) {
            let files = listings.list_category_files(&cat).map_err(|e| e.to_string())?;
            record_category_listing(&store, &cat, &files).map_err(err)?;
        }
    }
    let _ = std::fs::remove_file(dir.join("replay.jsonl"));

    let mut cfg = PipelineConfig {
        selection: kg.config,
        images: ImageConfig::default(),
        gateway: GatewayConfig::default(),
        sampling: SamplingConfig { seed: params.seed, budget: Some(600), ..Default::default() },
        paths: Paths {
            dump: "dump.jsonl".into(),
            workdir: "work".into(),
            replay: Some("replay.jsonl".into()),
            commons_replay: Some("commons_replay.jsonl".into()),
            templates: None,
        },
        eval: EvalConfig::default(),
        language_names: BTreeMap::new(),
    };
    let replay_cfg = cfg.clone();
    cfg.gateway.mode = Mode::Record;
    cfg.gateway.clients = BTreeMap::from([("heuristic".to_owned(), ClientSpec::Heuristic)]);
    cfg.gateway.default_client = "heuristic".into();
    cfg.paths.workdir = "record-work".into();
    cfg.resolve_paths(dir);
    let (_, manifest) = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    std::fs::remove_dir_all(&cfg.paths.workdir).map_err(err)?;

    let text = toml::to_string(&replay_cfg).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("config.toml"), text).map_err(err)?;
    Ok(manifest)
}
