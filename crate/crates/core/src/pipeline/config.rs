use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::exec::Backoff;
use crate::gateway::{ChatCompletionsClient, ClientRouter, GatewayPolicy, ModelClient, OfflineClient, Route};
use crate::replay::Mode;
use crate::sampler::{SamplingParams, DEFAULT_T_LANG, DEFAULT_T_REGION};
use crate::select::SelectionConfig;
use crate::synth::HeuristicModel;

/// Template file shipped with the crate; used when no path is configured.
pub const BUILTIN_TEMPLATES: &str = include_str!("../../data/templates.jsonl");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommonsMode {
    /// Category listings come only from the stored responses.
    #[default]
    Replay,
    Record,
    Live,
    /// P18 images only.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageConfig {
    pub max_per_entity: usize,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub commons: CommonsMode,
    pub endpoint: String,
    pub user_agent: String,
}

impl Default for ImageConfig {
    fn default() -> Self {
        ImageConfig {
            max_per_entity: 3,
            max_in_flight: 4,
            max_retries: 2,
            commons: CommonsMode::Replay,
            endpoint: "https://commons.wikimedia.org/w/api.php".into(),
            user_agent: concat!("kultur/", env!("CARGO_PKG_VERSION")).into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClientSpec {
    ChatCompletions {
        base_url: String,
        model: String,
        /// Name of the environment variable holding the API key.
        #[serde(default)]
        api_key_env: Option<String>,
    },
    /// Built-in deterministic model for offline runs and fixtures.
    Heuristic,
    /// Fails every call; for strict replay runs.
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub mode: Mode,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff: Backoff,
    pub clients: BTreeMap<String, ClientSpec>,
    pub routes: Vec<Route>,
    pub default_client: String,
    /// Share of choice questions generated as true/false.
    pub truefalse_fraction: f64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            mode: Mode::Replay,
            max_in_flight: 8,
            max_retries: 3,
            backoff: Backoff::default(),
            clients: BTreeMap::from([("offline".to_owned(), ClientSpec::Offline)]),
            routes: Vec::new(),
            default_client: "offline".into(),
            truefalse_fraction: 0.4,
        }
    }
}

impl GatewayConfig {
    pub fn policy(&self) -> GatewayPolicy {
        GatewayPolicy { max_in_flight: self.max_in_flight, max_retries: self.max_retries, backoff: self.backoff, mode: self.mode }
    }

    pub fn router(&self) -> Result<ClientRouter, String> {
        let clients = self
            .clients
            .iter()
            .map(|(name, spec)| {
                let c: Arc<dyn ModelClient> = match spec {
                    ClientSpec::ChatCompletions { base_url, model, api_key_env } => {
                        Arc::new(ChatCompletionsClient::new(base_url, model, api_key_env.as_deref()))
                    }
                    ClientSpec::Heuristic => Arc::new(HeuristicModel),
                    ClientSpec::Offline => Arc::new(OfflineClient),
                };
                (name.clone(), c)
            })
            .collect();
        ClientRouter::new(clients, self.routes.clone(), &self.default_client).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub t_region: f64,
    pub t_lang: f64,
    pub budget: Option<u64>,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { t_region: DEFAULT_T_REGION, t_lang: DEFAULT_T_LANG, budget: None, seed: 0 }
    }
}

impl SamplingConfig {
    pub fn params(&self) -> SamplingParams {
        SamplingParams { t_region: self.t_region, t_lang: self.t_lang, budget: self.budget, seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub dump: PathBuf,
    pub workdir: PathBuf,
    /// Model response store.
    pub replay: Option<PathBuf>,
    /// Commons category listing store.
    pub commons_replay: Option<PathBuf>,
    /// `None` uses the built-in templates.
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSystem {
    pub name: String,
    pub predictions: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub gold: Option<PathBuf>,
    pub systems: Vec<EvalSystem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub selection: SelectionConfig,
    #[serde(default)]
    pub images: ImageConfig,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Language code -> name used in prompts; unknown codes fall back to a
    /// built-in table, then the code itself.
    #[serde(default)]
    pub language_names: BTreeMap<String, String>,
}

const LANGUAGE_NAMES: &[(&str, &str)] = &[
    ("am", "Amharic"), ("ar", "Arabic"), ("bn", "Bengali"), ("de", "German"), ("el", "Greek"),
    ("en", "English"), ("es", "Spanish"), ("fa", "Persian"), ("fil", "Filipino"), ("fr", "French"),
    ("ha", "Hausa"), ("he", "Hebrew"), ("hi", "Hindi"), ("id", "Indonesian"), ("it", "Italian"),
    ("ja", "Japanese"), ("ko", "Korean"), ("mr", "Marathi"), ("ms", "Malay"), ("ne", "Nepali"),
    ("nl", "Dutch"), ("pa", "Punjabi"), ("pl", "Polish"), ("pt", "Portuguese"), ("ro", "Romanian"),
    ("ru", "Russian"), ("si", "Sinhala"), ("sr", "Serbian"), ("sw", "Swahili"), ("ta", "Tamil"),
    ("te", "Telugu"), ("th", "Thai"), ("tr", "Turkish"), ("uk", "Ukrainian"), ("ur", "Urdu"),
    ("vi", "Vietnamese"), ("yo", "Yoruba"), ("zh", "Chinese"), ("zu", "Zulu"),
];

impl PipelineConfig {
    /// Parse a TOML file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg = Self::load_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Parse TOML text; paths stay as written.
    pub fn load_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.dump);
        fix(&mut self.paths.workdir);
        for p in [&mut self.paths.replay, &mut self.paths.commons_replay, &mut self.paths.templates, &mut self.eval.gold]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for s in &mut self.eval.systems {
            fix(&mut s.predictions);
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.selection.validate().map_err(|e| e.to_string())?;
        for (name, t) in [("t_region", self.sampling.t_region), ("t_lang", self.sampling.t_lang)] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(format!("{name} must be positive, got {t}"));
            }
        }
        if self.gateway.max_in_flight == 0 {
            return Err("gateway.max_in_flight must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gateway.truefalse_fraction) {
            return Err("gateway.truefalse_fraction must lie in [0, 1]".into());
        }
        if self.images.max_per_entity == 0 {
            return Err("images.max_per_entity must be at least 1".into());
        }
        if self.paths.workdir.as_os_str().is_empty() {
            return Err("paths.workdir is not set".into());
        }
        if let Some(t) = self.paths.templates.as_ref().filter(|t| !t.is_file()) {
            return Err(format!("template file {} does not exist", t.display()));
        }
        self.gateway.router().map(|_| ())
    }

    pub fn language_name(&self, code: &str) -> String {
        self.language_names
            .get(code)
            .cloned()
            .or_else(|| LANGUAGE_NAMES.iter().find(|(c, _)| *c == code).map(|(_, n)| n.to_string()))
            .unwrap_or_else(|| code.to_owned())
    }

    pub fn region_name(&self, qid: &str) -> String {
        self.selection
            .regions
            .iter()
            .find(|r| r.qid.as_str() == qid)
            .map_or_else(|| qid.to_owned(), |r| r.display_name.clone())
    }

    pub fn replay_path(&self) -> PathBuf {
        self.paths.replay.clone().unwrap_or_else(|| self.paths.workdir.join("replay.jsonl"))
    }

    pub fn commons_replay_path(&self) -> PathBuf {
        self.paths.commons_replay.clone().unwrap_or_else(|| self.paths.workdir.join("commons_replay.jsonl"))
    }
}
