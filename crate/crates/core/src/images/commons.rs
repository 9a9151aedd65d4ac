//! Commons category listing: the client contract, a MediaWiki API
//! implementation, and a record/replay wrapper.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use crate::replay::{Mode, ReplayStore};
use crate::text::stable_hash;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("api: {0}")]
    Api(String),
    #[error("replay miss for category {category} (hash {hash})")]
    ReplayMiss { category: String, hash: String },
}

impl FetchError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, FetchError::Transport(_))
    }
}

pub trait CommonsClient: Sync {
    /// File titles that are direct members of `category_title`. A category
    /// that does not exist yields an empty list.
    fn list_category_files(&self, category_title: &str) -> Result<Vec<String>, FetchError>;
}

/// `Category:Foo bar` form: underscores to spaces, prefix added if absent.
pub fn normalize_category_title(title: &str) -> String {
    let t = title.trim().replace('_', " ");
    let t = t.split_whitespace().collect::<Vec<_>>().join(" ");
    match t.split_once(':') {
        Some((ns, rest)) if ns.eq_ignore_ascii_case("category") => format!("Category:{}", rest.trim()),
        _ => format!("Category:{t}"),
    }
}

/// One page of a `list=categorymembers` response: member titles in the File
/// namespace and the continuation token, if any.
pub fn parse_categorymembers_page(body: &Value) -> Result<(Vec<String>, Option<String>), FetchError> {
    if let Some(err) = body.get("error") {
        let code = err.get("code").and_then(Value::as_str).unwrap_or("unknown");
        return Err(FetchError::Api(code.to_owned()));
    }
    let members = body
        .pointer("/query/categorymembers")
        .and_then(Value::as_array)
        .ok_or_else(|| FetchError::Api("response without query.categorymembers".into()))?;
    let titles = members
        .iter()
        .filter(|m| m.get("ns").and_then(Value::as_i64).is_none_or(|ns| ns == 6))
        .filter_map(|m| m.get("title").and_then(Value::as_str).map(str::to_owned))
        .collect();
    let cont = body
        .pointer("/continue/cmcontinue")
        .and_then(Value::as_str)
        .map(str::to_owned);
    Ok((titles, cont))
}

/// Live client against a MediaWiki `api.php` endpoint.
pub struct MediaWikiClient {
    endpoint: String,
    agent: ureq::Agent,
    user_agent: String,
}

pub const COMMONS_API: &str = "https://commons.wikimedia.org/w/api.php";

impl MediaWikiClient {
    pub fn new(endpoint: impl Into<String>, user_agent: impl Into<String>) -> Self {
        MediaWikiClient {
            endpoint: endpoint.into(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build(),
            user_agent: user_agent.into(),
        }
    }

    pub fn commons() -> Self {
        Self::new(COMMONS_API, concat!("kultur/", env!("CARGO_PKG_VERSION")))
    }
}

impl CommonsClient for MediaWikiClient {
    fn list_category_files(&self, category_title: &str) -> Result<Vec<String>, FetchError> {
        let title = normalize_category_title(category_title);
        let mut out = Vec::new();
        let mut cont: Option<String> = None;
        loop {
            let mut req = self
                .agent
                .get(&self.endpoint)
                .set("User-Agent", &self.user_agent)
                .query("action", "query")
                .query("list", "categorymembers")
                .query("cmtitle", &title)
                .query("cmtype", "file")
                .query("cmlimit", "500")
                .query("format", "json")
                .query("formatversion", "2");
            if let Some(c) = &cont {
                req = req.query("cmcontinue", c);
            }
            let body: Value = match req.call() {
                Ok(resp) => {
                    let text = resp.into_string().map_err(|e| FetchError::Transport(e.to_string()))?;
                    serde_json::from_str(&text).map_err(|e| FetchError::Api(format!("bad json: {e}")))?
                }
                Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                    return Err(FetchError::Transport(format!("http {code}")))
                }
                Err(ureq::Error::Status(code, _)) => return Err(FetchError::Api(format!("http {code}"))),
                Err(e) => return Err(FetchError::Transport(e.to_string())),
            };
            let (titles, next) = parse_categorymembers_page(&body)?;
            out.extend(titles);
            match next {
                Some(c) => cont = Some(c),
                None => return Ok(out),
            }
        }
    }
}

/// Wraps a live client with the record/replay store.
pub struct StoredCommonsClient<C> {
    inner: Option<C>,
    store: Arc<ReplayStore>,
    mode: Mode,
}

pub fn category_request_hash(category_title: &str) -> String {
    stable_hash(["commons.categorymembers", &normalize_category_title(category_title)])
}

impl<C: CommonsClient> StoredCommonsClient<C> {
    pub fn new(inner: Option<C>, store: Arc<ReplayStore>, mode: Mode) -> Self {
        StoredCommonsClient { inner, store, mode }
    }

    fn live(&self, category: &str) -> Result<Vec<String>, FetchError> {
        match &self.inner {
            Some(c) => c.list_category_files(category),
            None => Err(FetchError::Transport("no live client configured".into())),
        }
    }
}

impl<C: CommonsClient> CommonsClient for StoredCommonsClient<C> {
    fn list_category_files(&self, category_title: &str) -> Result<Vec<String>, FetchError> {
        let hash = category_request_hash(category_title);
        let decode = |s: String| {
            serde_json::from_str::<Vec<String>>(&s).map_err(|e| FetchError::Api(format!("stored entry {hash}: {e}")))
        };
        match self.mode {
            Mode::Live => self.live(category_title),
            Mode::Replay => match self.store.get(&hash) {
                Some(s) => decode(s),
                None => Err(FetchError::ReplayMiss {
                    category: normalize_category_title(category_title),
                    hash,
                }),
            },
            Mode::Record => {
                if let Some(s) = self.store.get(&hash) {
                    return decode(s);
                }
                let files = self.live(category_title)?;
                let body = serde_json::to_string(&files).expect("string list serializes");
                self.store
                    .append(&hash, &body)
                    .map_err(|e| FetchError::Transport(format!("replay store write: {e}")))?;
                Ok(files)
            }
        }
    }
}

/// Seed a store with category listings, e.g. for offline fixtures.
pub fn record_category_listing(store: &ReplayStore, category: &str, files: &[String]) -> std::io::Result<()> {
    let body = serde_json::to_string(files).expect("string list serializes");
    store.append(&category_request_hash(category), &body)
}

/// Fixed in-memory listing keyed by normalized category title.
#[derive(Debug, Default, Clone)]
pub struct StaticCommonsClient {
    pub categories: HashMap<String, Vec<String>>,
}

impl StaticCommonsClient {
    pub fn insert(&mut self, category: &str, files: &[&str]) {
        self.categories.insert(
            normalize_category_title(category),
            files.iter().map(|s| s.to_string()).collect(),
        );
    }
}

impl CommonsClient for StaticCommonsClient {
    fn list_category_files(&self, category_title: &str) -> Result<Vec<String>, FetchError> {
        Ok(self
            .categories
            .get(&normalize_category_title(category_title))
            .cloned()
            .unwrap_or_default())
    }
}

/// Client that is never expected to be called.
pub struct NoCommons;

impl CommonsClient for NoCommons {
    fn list_category_files(&self, _: &str) -> Result<Vec<String>, FetchError> {
        Err(FetchError::Transport("live commons access disabled".into()))
    }
}
