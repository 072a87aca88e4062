//! Blocking JSON POST with exponential backoff and full jitter.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Attempt, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 4,
            base_backoff_ms: 500,
            timeout_secs: 120,
        }
    }
}

/// Delay before retry number `attempt` (0-based): uniform in
/// `[0, base_ms * 2^attempt]`.
pub fn backoff_delay<R: Rng + ?Sized>(attempt: u32, base_ms: u64, rng: &mut R) -> Duration {
    let cap = base_ms.saturating_mul(1u64 << attempt.min(32));
    Duration::from_millis(rng.gen_range(0..=cap))
}

enum Failure {
    Transient(String),
    Fatal(String),
}

pub(crate) struct JsonClient {
    agent: ureq::Agent,
    policy: RetryPolicy,
}

impl JsonClient {
    pub fn new(policy: RetryPolicy) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(policy.timeout_secs)))
            .http_status_as_error(false)
            .build();
        JsonClient {
            agent: ureq::Agent::new_with_config(config),
            policy,
        }
    }

    fn post_once(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, Failure> {
        let mut req = self.agent.post(url);
        if let Some(key) = bearer {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| Failure::Transient(format!("transport: {e}")))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Failure::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Failure::Fatal(format!("HTTP {status}: {text}")));
        }
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| Failure::Fatal(format!("bad response body: {e}")))
    }

    /// Returns the parsed JSON body and the log of every attempt made.
    pub fn post(&self, url: &str, bearer: Option<&str>, body: &Value) -> (Result<Value>, Vec<Attempt>) {
        let mut log = Vec::new();
        let mut rng = rand::thread_rng();
        let mut waited = 0u64;
        for attempt in 0..=self.policy.max_retries {
            match self.post_once(url, bearer, body) {
                Ok(v) => {
                    log.push(Attempt {
                        attempt: attempt + 1,
                        outcome: "ok".into(),
                        waited_ms: waited,
                    });
                    return (Ok(v), log);
                }
                Err(Failure::Fatal(msg)) => {
                    log.push(Attempt {
                        attempt: attempt + 1,
                        outcome: msg.clone(),
                        waited_ms: waited,
                    });
                    let err = Error::Backend {
                        message: msg,
                        ids: Vec::new(),
                        attempts: log.clone(),
                    };
                    return (Err(err), log);
                }
                Err(Failure::Transient(msg)) => {
                    log.push(Attempt {
                        attempt: attempt + 1,
                        outcome: msg,
                        waited_ms: waited,
                    });
                    if attempt < self.policy.max_retries {
                        let d = backoff_delay(attempt, self.policy.base_backoff_ms, &mut rng);
                        waited = d.as_millis() as u64;
                        std::thread::sleep(d);
                    }
                }
            }
        }
        let err = Error::Backend {
            message: format!("retries exhausted after {} attempts", log.len()),
            ids: Vec::new(),
            attempts: log.clone(),
        };
        (Err(err), log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn backoff_within_bounds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for attempt in 0..8 {
            let cap = 100u64 << attempt;
            let mut max_seen = 0;
            for _ in 0..500 {
                let d = backoff_delay(attempt, 100, &mut rng).as_millis() as u64;
                assert!(d <= cap);
                max_seen = max_seen.max(d);
            }
            // full jitter spreads over the whole window
            assert!(max_seen > cap / 2);
        }
    }

    #[test]
    fn zero_base_means_no_wait() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert_eq!(backoff_delay(5, 0, &mut rng), Duration::ZERO);
    }
}
