//! Stage orchestration over record files in a work directory.
//!
//! Every stage reads the files written by earlier stages and writes its own,
//! so each can be rerun on its own. Writes go to a temporary file that is
//! renamed into place.

mod config;
mod stages;

pub use config::*;
pub use stages::ValueLabels;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{read_records, write_records, DatasetRecord, ReadItem, StatsReport};

pub const SELECTED: &str = "selected.jsonl";
pub const VALUE_LABELS: &str = "value_labels.jsonl";
pub const IMAGES: &str = "images.json";
pub const TEMPLATED: &str = "templated.jsonl";
pub const MCQ: &str = "mcq.jsonl";
pub const MCQ_REJECTS: &str = "mcq_rejects.jsonl";
pub const REFINED: &str = "refined.jsonl";
pub const REFINE_REJECTS: &str = "refine_rejects.jsonl";
pub const FILTERED: &str = "filtered.jsonl";
pub const FILTER_REJECTS: &str = "filter_rejects.jsonl";
pub const SAMPLED: &str = "sampled.jsonl";
pub const SAMPLING_PLAN_JSON: &str = "sampling_plan.json";
pub const SAMPLING_PLAN_TXT: &str = "sampling_plan.txt";
pub const STATS_JSON: &str = "stats.json";
pub const STATS_TXT: &str = "stats.txt";
pub const EVAL_JSON: &str = "eval.json";
pub const EVAL_TXT: &str = "eval.txt";
pub const MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageName {
    Select,
    Images,
    Generate,
    Mcq,
    Refine,
    Filter,
    Sample,
    Stats,
    Eval,
}

impl StageName {
    pub const ALL: [StageName; 9] = [
        StageName::Select,
        StageName::Images,
        StageName::Generate,
        StageName::Mcq,
        StageName::Refine,
        StageName::Filter,
        StageName::Sample,
        StageName::Stats,
        StageName::Eval,
    ];

    /// Order used by [`run_pipeline`]; evaluation runs separately.
    pub const PIPELINE: [StageName; 8] = [
        StageName::Select,
        StageName::Images,
        StageName::Generate,
        StageName::Mcq,
        StageName::Refine,
        StageName::Filter,
        StageName::Sample,
        StageName::Stats,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Select => "select",
            StageName::Images => "images",
            StageName::Generate => "generate",
            StageName::Mcq => "mcq",
            StageName::Refine => "refine",
            StageName::Filter => "filter",
            StageName::Sample => "sample",
            StageName::Stats => "stats",
            StageName::Eval => "eval",
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        StageName::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Error)]
pub enum FailureKind {
    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}:{line}: {reason}", file.display())]
    Corrupt { file: PathBuf, line: usize, reason: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("model gateway: {0}")]
    Gateway(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Error)]
#[error("stage {stage} failed: {kind}")]
pub struct PipelineError {
    pub stage: StageName,
    pub kind: FailureKind,
}

impl PipelineError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            FailureKind::Config(_) => 2,
            FailureKind::MissingInput(_) => 3,
            FailureKind::Corrupt { .. } | FailureKind::Invariant(_) => 4,
            FailureKind::Gateway(_) => 5,
            FailureKind::Io { .. } => 1,
        }
    }
}

pub type StageResult<T> = Result<T, PipelineError>;

/// Input/output/reject counts plus stage-specific details.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: StageName,
    pub inputs: BTreeMap<String, u64>,
    pub outputs: BTreeMap<String, u64>,
    pub rejects: BTreeMap<String, u64>,
    #[serde(default)]
    pub details: serde_json::Value,
}

impl StageReport {
    fn new(stage: StageName) -> Self {
        StageReport { stage, inputs: BTreeMap::new(), outputs: BTreeMap::new(), rejects: BTreeMap::new(), details: serde_json::Value::Null }
    }

    pub fn summary(&self) -> String {
        let fmt_map = |m: &BTreeMap<String, u64>| m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
        let mut s = format!("{}: in [{}] out [{}]", self.stage, fmt_map(&self.inputs), fmt_map(&self.outputs));
        if !self.rejects.is_empty() {
            s.push_str(&format!(" rejected [{}]", fmt_map(&self.rejects)));
        }
        s
    }
}

/// Why a record left the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectRecord {
    pub id: String,
    pub entity_id: String,
    pub language: String,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

/// File access for one stage; errors carry the stage name.
pub(crate) struct StageCtx<'a> {
    pub cfg: &'a PipelineConfig,
    pub stage: StageName,
}

impl<'a> StageCtx<'a> {
    pub fn fail(&self, kind: FailureKind) -> PipelineError {
        PipelineError { stage: self.stage, kind }
    }

    pub fn io(&self, path: &Path, source: io::Error) -> PipelineError {
        self.fail(FailureKind::Io { path: path.to_owned(), source })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.paths.workdir.join(name)
    }

    pub fn require(&self, path: &Path) -> StageResult<()> {
        if path.is_file() {
            Ok(())
        } else {
            Err(self.fail(FailureKind::MissingInput(path.to_owned())))
        }
    }

    fn open(&self, path: &Path) -> StageResult<BufReader<File>> {
        self.require(path)?;
        File::open(path).map(BufReader::new).map_err(|e| self.io(path, e))
    }

    /// Strict read of a record file in the work directory.
    pub fn read_records(&self, name: &str) -> StageResult<Vec<DatasetRecord>> {
        let path = self.path(name);
        let mut out = Vec::new();
        for item in read_records(self.open(&path)?) {
            match item.map_err(|e| self.io(&path, e))? {
                ReadItem::Record(r) => out.push(r),
                ReadItem::Diagnostic(d) => {
                    return Err(self.fail(FailureKind::Corrupt { file: path, line: d.line, reason: d.reason }));
                }
            }
        }
        Ok(out)
    }

    pub fn read_jsonl<T: DeserializeOwned>(&self, path: &Path) -> StageResult<Vec<T>> {
        let reader = self.open(path)?;
        crate::dataset::read_jsonl(reader).map_err(|e| match e {
            crate::dataset::JsonlError::Parse { line, source } => {
                self.fail(FailureKind::Corrupt { file: path.to_owned(), line, reason: source.to_string() })
            }
            crate::dataset::JsonlError::Io(e) => self.io(path, e),
        })
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> StageResult<T> {
        let path = self.path(name);
        let reader = self.open(&path)?;
        serde_json::from_reader(reader).map_err(|e| {
            self.fail(FailureKind::Corrupt { file: path.clone(), line: e.line(), reason: e.to_string() })
        })
    }

    /// Write via a temporary sibling and rename, so readers never see a
    /// half-written file.
    pub fn write_with(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> StageResult<()> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| self.io(dir, e))?;
        }
        let tmp = path.with_extension("partial");
        let run = || -> io::Result<()> {
            let mut w = BufWriter::new(File::create(&tmp)?);
            f(&mut w)?;
            w.flush()?;
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
            std::fs::rename(&tmp, &path)
        };
        run().map_err(|e| self.io(&path, e))
    }

    pub fn write_records(&self, name: &str, records: &[DatasetRecord]) -> StageResult<()> {
        let mut invalid = None;
        self.write_with(name, |w| match write_records(records, w) {
            Ok(_) => Ok(()),
            Err(crate::dataset::WriteError::Io(e)) => Err(e),
            Err(crate::dataset::WriteError::Invalid(e)) => {
                invalid = Some(e);
                Err(io::Error::other("invalid record"))
            }
        })
        .map_err(|err| match invalid.take() {
            Some(e) => self.fail(FailureKind::Invariant(e.to_string())),
            None => err,
        })
    }

    pub fn write_jsonl<T: Serialize>(&self, name: &str, items: &[T]) -> StageResult<()> {
        self.write_with(name, |w| {
            for it in items {
                serde_json::to_writer(&mut *w, it).map_err(io::Error::other)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> StageResult<()> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(io::Error::other)?;
            w.write_all(b"\n")
        })
    }

    pub fn write_text(&self, name: &str, text: &str) -> StageResult<()> {
        self.write_with(name, |w| w.write_all(text.as_bytes()))
    }
}

/// Run one stage and write `reports/<stage>.json`.
pub fn run_stage(stage: StageName, cfg: &PipelineConfig) -> StageResult<StageReport> {
    let ctx = StageCtx { cfg, stage };
    cfg.validate().map_err(|e| ctx.fail(FailureKind::Config(e)))?;
    let report = match stage {
        StageName::Select => stages::select(&ctx)?,
        StageName::Images => stages::images(&ctx)?,
        StageName::Generate => stages::generate(&ctx)?,
        StageName::Mcq => stages::mcq(&ctx)?,
        StageName::Refine => stages::refine(&ctx)?,
        StageName::Filter => stages::filter(&ctx)?,
        StageName::Sample => stages::sample(&ctx)?,
        StageName::Stats => stages::stats(&ctx)?,
        StageName::Eval => stages::eval(&ctx)?,
    };
    ctx.write_json(&format!("reports/{stage}.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    /// Lines for line-delimited files, `None` otherwise.
    pub records: Option<u64>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifacts: Vec<ArtifactEntry>,
    /// Record counts per stage stream, reconciled against the stats totals.
    pub stage_counts: BTreeMap<String, u64>,
}

fn hash_file(path: &Path) -> io::Result<(String, u64)> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut lines = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        lines += buf[..n].iter().filter(|&&b| b == b'\n').count() as u64;
        h.update(&buf[..n]);
    }
    Ok((hex::encode(h.finalize()), lines))
}

fn count_lines(path: &Path) -> io::Result<u64> {
    let mut n = 0;
    for line in BufReader::new(File::open(path)?).lines() {
        if !line?.trim().is_empty() {
            n += 1;
        }
    }
    Ok(n)
}

/// Builds the manifest of every artifact and checks that the per-stage record
/// counts equal the totals in `stats.json`.
pub fn build_manifest(cfg: &PipelineConfig) -> StageResult<RunManifest> {
    let ctx = StageCtx { cfg, stage: StageName::Stats };
    let files = [
        SELECTED, VALUE_LABELS, IMAGES, TEMPLATED, MCQ, MCQ_REJECTS, REFINED, REFINE_REJECTS, FILTERED,
        FILTER_REJECTS, SAMPLED, SAMPLING_PLAN_JSON, SAMPLING_PLAN_TXT, STATS_JSON, STATS_TXT,
    ];
    let mut artifacts = Vec::new();
    for name in files {
        let path = ctx.path(name);
        if !path.is_file() {
            continue;
        }
        let (sha256, lines) = hash_file(&path).map_err(|e| ctx.io(&path, e))?;
        let records = name.ends_with(".jsonl").then_some(lines);
        artifacts.push(ArtifactEntry { file: name.to_owned(), records, sha256 });
    }
    let count = |name: &str| -> StageResult<u64> {
        let p = ctx.path(name);
        ctx.require(&p)?;
        count_lines(&p).map_err(|e| ctx.io(&p, e))
    };
    let filtered = ctx.read_records(FILTERED)?;
    let open_f = filtered.iter().filter(|r| r.kind.is_open_ended()).count() as u64;
    let stage_counts = BTreeMap::from([
        ("selected".to_owned(), count(SELECTED)?),
        ("templated".to_owned(), count(TEMPLATED)?),
        ("open_ended".to_owned(), count(REFINED)?),
        ("mcq".to_owned(), count(MCQ)?),
        ("open_ended_filtered".to_owned(), open_f),
        ("mcq_filtered".to_owned(), filtered.len() as u64 - open_f),
        ("sampled".to_owned(), count(SAMPLED)?),
    ]);
    let stats: StatsReport = ctx.read_json(STATS_JSON)?;
    let t = &stats.totals.counts;
    let expected = [
        ("templated", t.templated),
        ("open_ended", t.open_ended),
        ("mcq", t.mcq),
        ("open_ended_filtered", t.open_ended_filtered),
        ("mcq_filtered", t.mcq_filtered),
    ];
    for (k, v) in expected {
        if stage_counts[k] != v {
            return Err(ctx.fail(FailureKind::Invariant(format!("manifest {k}={} but stats total is {v}", stage_counts[k]))));
        }
    }
    Ok(RunManifest { artifacts, stage_counts })
}

/// Every pipeline stage in order, stopping at the first failure, then the
/// run manifest.
pub fn run_pipeline(cfg: &PipelineConfig) -> StageResult<(Vec<StageReport>, RunManifest)> {
    let mut reports = Vec::new();
    for stage in StageName::PIPELINE {
        reports.push(run_stage(stage, cfg)?);
    }
    let manifest = build_manifest(cfg)?;
    StageCtx { cfg, stage: StageName::Stats }.write_json(MANIFEST, &manifest)?;
    Ok((reports, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in StageName::ALL {
            assert_eq!(s.as_str().parse::<StageName>().unwrap(), s);
        }
        assert!("publish".parse::<StageName>().is_err());
        assert_eq!(StageName::PIPELINE.last(), Some(&StageName::Stats));
    }

    #[test]
    fn summary_lists_counts() {
        let mut r = StageReport::new(StageName::Refine);
        r.inputs.insert("templated".into(), 10);
        r.outputs.insert("refined".into(), 8);
        assert_eq!(r.summary(), "refine: in [templated=10] out [refined=8]");
        r.rejects.insert("leakage".into(), 2);
        assert!(r.summary().ends_with("rejected [leakage=2]"));
    }

    #[test]
    fn failed_write_leaves_no_file() {
        let tmp = tempfile::tempdir().unwrap();
        let toml = format!(
            "[selection]\nlanguages = [\"en\"]\n[[selection.regions]]\ndisplay_name = \"India\"\nqid = \"Q668\"\n[paths]\nworkdir = {:?}\n",
            tmp.path()
        );
        let cfg: PipelineConfig = toml::from_str(&toml).unwrap();
        let ctx = StageCtx { cfg: &cfg, stage: StageName::Stats };
        let err = ctx.write_with("x.txt", |w| {
            w.write_all(b"half")?;
            Err(io::Error::other("boom"))
        });
        assert!(err.is_err());
        assert!(!tmp.path().join("x.txt").exists());
        ctx.write_text("x.txt", "whole").unwrap();
        assert_eq!(std::fs::read_to_string(tmp.path().join("x.txt")).unwrap(), "whole");
    }

    #[test]
    fn invalid_record_is_an_invariant_failure() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg: PipelineConfig = toml::from_str(
            "[selection]\nlanguages = [\"en\"]\n[[selection.regions]]\ndisplay_name = \"India\"\nqid = \"Q668\"\n",
        )
        .unwrap();
        cfg.paths.workdir = tmp.path().to_owned();
        let ctx = StageCtx { cfg: &cfg, stage: StageName::Generate };
        let bad: DatasetRecord = serde_json::from_value(serde_json::json!({
            "id": "", "entity_id": "Q1", "region": "Q668", "language": "en", "kind": "identity",
            "question": "q", "answer": "a", "stage": "templated"
        }))
        .unwrap();
        let err = ctx.write_records("t.jsonl", &[bad]).unwrap_err();
        assert!(matches!(err.kind, FailureKind::Invariant(_)), "{err}");
        assert_eq!(err.exit_code(), 4);
    }
}
