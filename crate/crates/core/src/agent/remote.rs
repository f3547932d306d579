//! HTTP decision backend: `POST {endpoint}/decide` with a [`ModelRequest`] body, answered by
//! `{"text": "..."}`.

use std::sync::{Arc, LazyLock, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::Deserialize;

use super::{AgentError, Decomposer, ModelRequest, Part, Policy, PolicyContext, SubtaskList};

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// Enforces a minimum interval between calls, shared across threads.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_second(calls: f64) -> Self {
        let interval = if calls > 0.0 { Duration::from_secs_f64(1.0 / calls) } else { Duration::ZERO };
        Self { interval, last: Mutex::new(None) }
    }

    pub fn acquire(&self) {
        let mut last = self.last.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(prev) = *last {
            let ready = prev + self.interval;
            let now = Instant::now();
            if ready > now {
                std::thread::sleep(ready - now);
            }
        }
        *last = Some(Instant::now());
    }
}

#[derive(Debug, Deserialize)]
struct DecideResponse {
    text: Option<String>,
}

pub(crate) fn http_agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

pub(crate) fn join_url(endpoint: &str, path: &str) -> String {
    format!("{}/{}", endpoint.trim_end_matches('/'), path.trim_start_matches('/'))
}

#[derive(Debug, Clone)]
pub struct RemotePolicy {
    endpoint: String,
    timeout: Duration,
    limiter: Option<Arc<RateLimiter>>,
}

impl RemotePolicy {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self { endpoint: endpoint.into(), timeout: DEFAULT_TIMEOUT, limiter: None }
    }

    pub fn with_timeout(mut self, t: Duration) -> Self {
        self.timeout = t;
        self
    }

    pub fn with_rate_limiter(mut self, l: Arc<RateLimiter>) -> Self {
        self.limiter = Some(l);
        self
    }

    /// Sends the request, retrying once on transport failure or a non-2xx status.
    pub fn call(&self, request: &ModelRequest) -> Result<String, AgentError> {
        let body = request.to_json().map_err(|e| AgentError::Config(format!("serialize request: {e}")))?;
        let agent = http_agent(self.timeout);
        let url = join_url(&self.endpoint, "decide");
        let mut last_err = String::new();
        for attempt in 0..2 {
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            let result = agent.post(&url).header("content-type", "application/json").send(&body[..]);
            match result {
                Ok(mut resp) if resp.status().is_success() => {
                    let bytes = match resp.body_mut().read_to_vec() {
                        Ok(b) => b,
                        Err(e) => {
                            last_err = format!("{url}: reading body: {e}");
                            log::warn!("decide call failed (attempt {}): {last_err}", attempt + 1);
                            continue;
                        }
                    };
                    let parsed: DecideResponse = serde_json::from_slice(&bytes)
                        .map_err(|e| AgentError::ModelRefusal(format!("bad response body: {e}")))?;
                    return match parsed.text {
                        Some(t) if !t.trim().is_empty() => Ok(t),
                        _ => Err(AgentError::ModelRefusal("empty text".into())),
                    };
                }
                Ok(resp) => last_err = format!("{url}: http status {}", resp.status()),
                Err(e) => last_err = format!("{url}: {e}"),
            }
            log::warn!("decide call failed (attempt {}): {last_err}", attempt + 1);
        }
        Err(AgentError::EndpointUnreachable(last_err))
    }
}

impl Policy for RemotePolicy {
    fn decide(&mut self, request: &ModelRequest, _ctx: &PolicyContext<'_>) -> Result<String, AgentError> {
        self.call(request)
    }
}

static SUBTASK_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<subtask>(.*?)</subtask>").unwrap());

/// Asks the decision endpoint to split an instruction; the reply lists subtasks as
/// `<subtask>...</subtask>` pairs.
#[derive(Debug, Clone)]
pub struct RemoteDecomposer {
    policy: RemotePolicy,
}

impl RemoteDecomposer {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self { policy: RemotePolicy::new(endpoint) }
    }
}

impl Decomposer for RemoteDecomposer {
    fn decompose(&self, instruction: &str) -> Result<SubtaskList, AgentError> {
        if instruction.trim().is_empty() {
            return Err(AgentError::EmptyInstruction);
        }
        let request = ModelRequest {
            system: "Split the navigation instruction into ordered subtasks. Wrap each subtask in \
                     <subtask></subtask> and output nothing else."
                .into(),
            parts: vec![Part::Text(instruction.to_string())],
        };
        let text = self.policy.call(&request)?;
        let subtasks: Vec<String> = SUBTASK_TAG
            .captures_iter(&text)
            .map(|c| c[1].trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if subtasks.is_empty() {
            return Err(AgentError::ModelRefusal("no <subtask> sections".into()));
        }
        SubtaskList::new(subtasks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_joining() {
        assert_eq!(join_url("http://h:1/", "/decide"), "http://h:1/decide");
        assert_eq!(join_url("http://h:1/api", "decide"), "http://h:1/api/decide");
    }

    #[test]
    fn rate_limiter_spaces_calls() {
        let l = RateLimiter::per_second(50.0);
        let t0 = Instant::now();
        for _ in 0..4 {
            l.acquire();
        }
        assert!(t0.elapsed() >= Duration::from_millis(55));
    }

    #[test]
    fn unreachable_endpoint() {
        // Port 9 on localhost is closed in the sandbox; the call fails fast after one retry.
        let p = RemotePolicy::new("http://127.0.0.1:9").with_timeout(Duration::from_secs(2));
        let req = ModelRequest { system: String::new(), parts: vec![] };
        assert!(matches!(p.call(&req), Err(AgentError::EndpointUnreachable(_))));
    }
}
