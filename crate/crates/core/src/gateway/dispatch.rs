use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::client::{ModelClient, ModelError};
use super::parse::Malformed;
use super::prompts::PromptRequest;
use crate::exec::{retry_with_backoff, Backoff, Semaphore};
use crate::replay::{Mode, ReplayStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatewayPolicy {
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff: Backoff,
    pub mode: Mode,
}

impl Default for GatewayPolicy {
    fn default() -> Self {
        GatewayPolicy {
            max_in_flight: 8,
            max_retries: 3,
            backoff: Backoff::default(),
            mode: Mode::Replay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("transport failed after {attempts} attempts: {last}")]
    TransportExhausted { attempts: u32, last: String },
    #[error("replay miss for request {hash}")]
    ReplayMiss { hash: String },
    #[error("model refused: {0}")]
    Refusal(String),
    #[error("replay store: {0}")]
    Store(String),
}

/// Outcome of a dispatch whose response must also parse.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DispatchFailure {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{reason} (after retry)")]
    Malformed { reason: Malformed, raw: String },
}

/// Shared dispatcher: global in-flight limit, retries, record/replay.
pub struct Gateway {
    policy: GatewayPolicy,
    store: Arc<ReplayStore>,
    permits: Semaphore,
    client_calls: AtomicUsize,
}

impl Gateway {
    pub fn new(policy: GatewayPolicy, store: Arc<ReplayStore>) -> Self {
        Gateway {
            permits: Semaphore::new(policy.max_in_flight),
            policy,
            store,
            client_calls: AtomicUsize::new(0),
        }
    }

    pub fn policy(&self) -> &GatewayPolicy {
        &self.policy
    }

    /// Number of times a model client was actually invoked.
    pub fn client_calls(&self) -> usize {
        self.client_calls.load(Ordering::Relaxed)
    }

    pub fn dispatch(&self, req: &PromptRequest, client: &dyn ModelClient) -> Result<String, GatewayError> {
        self.dispatch_attempt(req, client, 0)
    }

    fn call_client(&self, req: &PromptRequest, client: &dyn ModelClient) -> Result<String, GatewayError> {
        let mut attempts = 0;
        let out = retry_with_backoff(self.policy.max_retries, self.policy.backoff, ModelError::is_transport, |_| {
            attempts += 1;
            let _permit = self.permits.acquire();
            self.client_calls.fetch_add(1, Ordering::Relaxed);
            client.complete(&req.system_text, &req.user_text, req.image.as_ref())
        });
        out.map_err(|e| match e {
            ModelError::Transport(last) => GatewayError::TransportExhausted { attempts, last },
            ModelError::Refusal(r) => GatewayError::Refusal(r),
        })
    }

    fn dispatch_attempt(&self, req: &PromptRequest, client: &dyn ModelClient, attempt: u32) -> Result<String, GatewayError> {
        match self.policy.mode {
            Mode::Live => self.call_client(req, client),
            Mode::Replay => {
                let hash = req.request_hash(attempt);
                self.store.get(&hash).ok_or(GatewayError::ReplayMiss { hash })
            }
            Mode::Record => {
                let hash = req.request_hash(attempt);
                if let Some(hit) = self.store.get(&hash) {
                    return Ok(hit);
                }
                let text = self.call_client(req, client)?;
                self.store
                    .append(&hash, &text)
                    .map_err(|e| GatewayError::Store(e.to_string()))?;
                Ok(text)
            }
        }
    }

    /// Dispatch and parse; a malformed response is retried once with the
    /// identical prompt before giving up.
    pub fn dispatch_parsed<T>(
        &self,
        req: &PromptRequest,
        client: &dyn ModelClient,
        parse: impl Fn(&str) -> Result<T, Malformed>,
    ) -> Result<T, DispatchFailure> {
        let first = self.dispatch_attempt(req, client, 0)?;
        match parse(&first) {
            Ok(v) => Ok(v),
            Err(_) => {
                let second = self.dispatch_attempt(req, client, 1)?;
                parse(&second).map_err(|reason| DispatchFailure::Malformed { reason, raw: second })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::map_bounded;
    use crate::gateway::parse::parse_refine_response;
    use crate::gateway::prompts::{render_prompt, PromptKind};
    use crate::images::ImageRef;
    use std::sync::Mutex;
    use std::time::Duration;

    fn req(n: usize) -> PromptRequest {
        let ctx = ["language_name", "label", "description", "region", "question", "answer"]
            .iter()
            .map(|k| (k.to_string(), format!("{k}-{n}")))
            .collect();
        render_prompt(PromptKind::Refine, &ctx).unwrap()
    }

    fn instant() -> Backoff {
        Backoff { initial_ms: 0, multiplier: 1.0, max_ms: 0 }
    }

    struct Occupancy {
        live: AtomicUsize,
        peak: AtomicUsize,
    }

    impl ModelClient for Occupancy {
        fn complete(&self, _: &str, _: &str, _: Option<&ImageRef>) -> Result<String, ModelError> {
            let now = self.live.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(2));
            self.live.fetch_sub(1, Ordering::SeqCst);
            Ok("Q: q\nA: a".into())
        }
    }

    #[test]
    fn in_flight_bound_holds() {
        let policy = GatewayPolicy { max_in_flight: 8, mode: Mode::Live, backoff: instant(), ..Default::default() };
        let gw = Gateway::new(policy, Arc::new(ReplayStore::in_memory()));
        let client = Occupancy { live: AtomicUsize::new(0), peak: AtomicUsize::new(0) };
        let reqs: Vec<_> = (0..100).map(req).collect();
        let out = map_bounded(&reqs, 32, |r| gw.dispatch(r, &client));
        assert!(out.iter().all(Result::is_ok));
        let peak = client.peak.load(Ordering::SeqCst);
        assert!(peak <= 8, "peak occupancy {peak}");
        assert!(peak >= 2, "expected some concurrency, saw {peak}");
        assert_eq!(gw.client_calls(), 100);
    }

    #[test]
    fn replay_hit_and_miss() {
        let store = Arc::new(ReplayStore::in_memory());
        let r = req(1);
        store.append(&r.request_hash(0), "stored").unwrap();
        let gw = Gateway::new(GatewayPolicy::default(), store);
        assert_eq!(gw.dispatch(&r, &super::super::client::OfflineClient).unwrap(), "stored");
        let miss = gw.dispatch(&req(2), &super::super::client::OfflineClient);
        assert_eq!(miss, Err(GatewayError::ReplayMiss { hash: req(2).request_hash(0) }));
        assert_eq!(gw.client_calls(), 0);
    }

    struct Flaky {
        failures_left: Mutex<u32>,
    }

    impl ModelClient for Flaky {
        fn complete(&self, _: &str, _: &str, _: Option<&ImageRef>) -> Result<String, ModelError> {
            let mut n = self.failures_left.lock().unwrap();
            if *n > 0 {
                *n -= 1;
                return Err(ModelError::Transport("reset".into()));
            }
            Ok("Q: q\nA: a".into())
        }
    }

    #[test]
    fn transport_retries_then_exhausts() {
        let policy = GatewayPolicy { max_retries: 2, mode: Mode::Live, backoff: instant(), ..Default::default() };
        let gw = Gateway::new(policy, Arc::new(ReplayStore::in_memory()));
        assert!(gw.dispatch(&req(1), &Flaky { failures_left: Mutex::new(2) }).is_ok());
        let err = gw.dispatch(&req(1), &Flaky { failures_left: Mutex::new(5) });
        assert_eq!(err, Err(GatewayError::TransportExhausted { attempts: 3, last: "reset".into() }));
    }

    #[test]
    fn record_mode_persists_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.jsonl");
        let policy = GatewayPolicy { mode: Mode::Record, backoff: instant(), ..Default::default() };
        let gw = Gateway::new(policy, Arc::new(ReplayStore::open(&path).unwrap()));
        let client = Flaky { failures_left: Mutex::new(0) };
        gw.dispatch(&req(1), &client).unwrap();
        gw.dispatch(&req(1), &client).unwrap();
        assert_eq!(gw.client_calls(), 1);
        let replay = Gateway::new(GatewayPolicy::default(), Arc::new(ReplayStore::open(&path).unwrap()));
        assert_eq!(replay.dispatch(&req(1), &super::super::client::OfflineClient).unwrap(), "Q: q\nA: a");
    }

    struct Sequence(Mutex<Vec<&'static str>>);
    impl ModelClient for Sequence {
        fn complete(&self, _: &str, _: &str, _: Option<&ImageRef>) -> Result<String, ModelError> {
            Ok(self.0.lock().unwrap().remove(0).to_owned())
        }
    }

    #[test]
    fn malformed_is_retried_once() {
        let policy = GatewayPolicy { mode: Mode::Live, backoff: instant(), ..Default::default() };
        let gw = Gateway::new(policy, Arc::new(ReplayStore::in_memory()));
        let ok = gw.dispatch_parsed(&req(1), &Sequence(Mutex::new(vec!["garbage", "Q: q\nA: a"])), parse_refine_response);
        assert!(ok.is_ok());
        let bad = gw.dispatch_parsed(&req(1), &Sequence(Mutex::new(vec!["garbage", "still garbage"])), parse_refine_response);
        assert!(matches!(bad, Err(DispatchFailure::Malformed { .. })));
        assert_eq!(gw.client_calls(), 4);
    }
}
