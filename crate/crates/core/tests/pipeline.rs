use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use kultur::dataset::{read_records, DatasetRecord, Stage};
use kultur::gateway::leakage_check;
use kultur::pipeline::*;
use kultur::select::SelectedEntity;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny")
}

fn fixture_config(workdir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(&fixture_dir().join("config.toml")).unwrap();
    cfg.paths.workdir = workdir.to_owned();
    cfg
}

fn records(dir: &Path, name: &str) -> Vec<DatasetRecord> {
    let f = fs::File::open(dir.join(name)).unwrap();
    read_records(std::io::BufReader::new(f)).map(|r| r.unwrap().record().unwrap()).collect()
}

#[test]
fn replay_run_needs_no_model() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture_config(tmp.path());
    let (reports, manifest) = run_pipeline(&cfg).unwrap();
    for r in &reports {
        if let Some(calls) = r.details.get("client_calls") {
            assert_eq!(calls, 0, "{}", r.stage);
        }
        assert!(!r.rejects.contains_key("refusal"), "{}: {:?}", r.stage, r.rejects);
    }
    assert_eq!(manifest.stage_counts["sampled"], 600);
    assert!(manifest.stage_counts["mcq_filtered"] > 0);
    assert!(tmp.path().join("reports/select.json").is_file());
    assert!(tmp.path().join(MANIFEST).is_file());
}

#[test]
fn runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, ma) = run_pipeline(&fixture_config(a.path())).unwrap();
    let (_, mb) = run_pipeline(&fixture_config(b.path())).unwrap();
    assert_eq!(ma, mb);
    for stage in StageName::PIPELINE {
        let name = format!("reports/{stage}.json");
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name}");
    }
}

#[test]
fn stage_outputs_are_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture_config(tmp.path());
    run_pipeline(&cfg).unwrap();
    let dir = tmp.path();

    let templated = records(dir, TEMPLATED);
    let refined = records(dir, REFINED);
    let filtered = records(dir, FILTERED);
    assert!(templated.iter().all(|r| r.stage == Stage::Templated));
    assert!(refined.iter().all(|r| r.stage == Stage::Refined && r.kind.is_open_ended()));
    assert!(filtered.iter().all(|r| r.stage == Stage::Filtered && r.verdict.as_ref().unwrap().keeps()));

    // every refined record descends from a templated one with the same id
    let ids: BTreeMap<&str, &DatasetRecord> = templated.iter().map(|r| (r.id.as_str(), r)).collect();
    for r in &refined {
        let t = ids[r.id.as_str()];
        assert_eq!((&t.entity_id, &t.image, t.kind), (&r.entity_id, &r.image, r.kind));
    }

    let selected: Vec<SelectedEntity> = kultur::dataset::read_jsonl(std::io::BufReader::new(
        fs::File::open(dir.join(SELECTED)).unwrap(),
    ))
    .unwrap();
    let by_id: BTreeMap<_, _> = selected.iter().map(|s| (s.entity.id.clone(), &s.entity)).collect();
    for r in &refined {
        assert!(!leakage_check(&r.question, by_id[&r.entity_id], &r.language), "{}", r.question);
    }

    let rejected: Vec<RejectRecord> =
        kultur::dataset::read_jsonl(std::io::BufReader::new(fs::File::open(dir.join(REFINE_REJECTS)).unwrap())).unwrap();
    assert_eq!(refined.len() + rejected.len(), templated.len());
    assert!(rejected.iter().any(|r| r.reason.starts_with("leakage")));
    assert!(rejected.iter().any(|r| r.reason.starts_with("malformed")));
}

#[test]
fn single_stage_rerun_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture_config(tmp.path());
    run_pipeline(&cfg).unwrap();
    let before = fs::read(tmp.path().join(SAMPLED)).unwrap();
    run_stage(StageName::Sample, &cfg).unwrap();
    assert_eq!(before, fs::read(tmp.path().join(SAMPLED)).unwrap());
    assert!(!tmp.path().join("sampled.partial").exists());
}

#[test]
fn missing_input_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let err = run_stage(StageName::Generate, &fixture_config(tmp.path())).unwrap_err();
    assert_eq!(err.stage, StageName::Generate);
    match err.kind {
        FailureKind::MissingInput(ref p) => assert!(p.ends_with(SELECTED), "{p:?}"),
        other => panic!("{other:?}"),
    }
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn corrupt_line_is_reported_with_position() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture_config(tmp.path());
    for s in [StageName::Select, StageName::Images, StageName::Generate] {
        run_stage(s, &cfg).unwrap();
    }
    let path = tmp.path().join(TEMPLATED);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{\"id\": broken";
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let err = run_stage(StageName::Refine, &cfg).unwrap_err();
    match err.kind {
        FailureKind::Corrupt { line, .. } => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn replay_miss_fails_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config(tmp.path());
    for s in [StageName::Select, StageName::Images, StageName::Generate] {
        run_stage(s, &cfg).unwrap();
    }
    cfg.paths.replay = Some(tmp.path().join("empty_replay.jsonl"));
    let err = run_stage(StageName::Refine, &cfg).unwrap_err();
    assert!(matches!(err.kind, FailureKind::Gateway(_)), "{err}");
    assert_eq!(err.exit_code(), 5);
    assert!(!tmp.path().join(REFINED).exists());
}

#[test]
fn eval_stage_scores_configured_systems() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config(tmp.path());
    run_pipeline(&cfg).unwrap();
    // a system that answers with the label scores perfectly on the derived gold
    let selected: Vec<SelectedEntity> =
        kultur::dataset::read_jsonl(std::io::BufReader::new(fs::File::open(tmp.path().join(SELECTED)).unwrap())).unwrap();
    let labels: BTreeMap<_, _> = selected.iter().map(|s| (s.entity.id.clone(), &s.entity)).collect();
    let mut preds = String::new();
    for r in records(tmp.path(), SAMPLED).iter().filter(|r| r.kind == kultur::dataset::RecordKind::Identity) {
        let text = labels[&r.entity_id].label(&r.language).unwrap();
        preds.push_str(&serde_json::json!({"id": r.id, "text": text}).to_string());
        preds.push('\n');
    }
    let pred_path = tmp.path().join("oracle_preds.jsonl");
    fs::write(&pred_path, preds).unwrap();
    cfg.eval.systems.push(EvalSystem { name: "oracle".into(), predictions: pred_path });
    let report = run_stage(StageName::Eval, &cfg).unwrap();
    assert!(report.inputs["gold"] > 0);
    let scores: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join(EVAL_JSON)).unwrap()).unwrap();
    for level in ["exact", "exact_alias", "exact_target_in_pred", "all_methods"] {
        assert_eq!(scores["oracle"]["per_level"][level], 1.0, "{level}");
    }
}

#[test]
fn config_errors_map_to_exit_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config(tmp.path());
    cfg.sampling.t_region = 0.0;
    let err = run_stage(StageName::Sample, &cfg).unwrap_err();
    assert!(matches!(err.kind, FailureKind::Config(_)));
    assert_eq!(err.exit_code(), 2);
}
