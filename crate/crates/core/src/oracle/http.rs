use std::time::Duration;

use serde::Deserialize;

use super::{Backend, BackendConfig, OracleError, TOKEN_ENV};
use crate::toylm::DecodeParams;

/// `POST {endpoint}/v1/generate` with a JSON body; expects `{"text": …}`.
pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    model: String,
    max_retries: u32,
    backoff: Duration,
}

#[derive(Deserialize)]
struct Reply {
    text: String,
}

enum Attempt {
    Done(Result<String, OracleError>),
    Retry(OracleError),
}

impl HttpBackend {
    pub fn new(cfg: &BackendConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url: format!("{}/v1/generate", cfg.endpoint.trim_end_matches('/')),
            model: cfg.model.clone(),
            max_retries: cfg.max_retries,
            backoff: Duration::from_millis(cfg.backoff_ms),
        }
    }

    fn attempt(&self, body: &[u8]) -> Attempt {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Ok(token) = std::env::var(TOKEN_ENV) {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(OracleError::Timeout { attempts: 1 }),
            Err(e) => return Attempt::Done(Err(OracleError::BackendUnavailable(e.to_string()))),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(OracleError::Timeout { attempts: 1 }),
            Err(e) => return Attempt::Done(Err(OracleError::MalformedResponse(e.to_string()))),
        };
        if (500..600).contains(&status) {
            return Attempt::Retry(OracleError::BackendUnavailable(format!("status {status}")));
        }
        if !(200..300).contains(&status) {
            return Attempt::Done(Err(OracleError::MalformedResponse(format!("status {status}"))));
        }
        Attempt::Done(
            serde_json::from_str::<Reply>(&text)
                .map(|r| r.text)
                .map_err(|e| OracleError::MalformedResponse(e.to_string())),
        )
    }
}

impl Backend for HttpBackend {
    fn complete(&self, prompt: &str, dp: &DecodeParams) -> Result<String, OracleError> {
        let body = serde_json::json!({
            "model": self.model,
            "prompt": prompt,
            "max_tokens": dp.max_new_tokens,
            "temperature": 0.0,
            "stop": dp.stop,
        })
        .to_string();
        let mut delay = self.backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(body.as_bytes()) {
                Attempt::Done(r) => return r,
                Attempt::Retry(err) => {
                    if attempts > self.max_retries {
                        return Err(match err {
                            OracleError::Timeout { .. } => OracleError::Timeout { attempts },
                            other => other,
                        });
                    }
                    log::warn!("oracle attempt {attempts} failed ({err}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
    }
}
