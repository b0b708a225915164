//! HTTP client for a remote policy backend.
//!
//! Wire protocol: `POST /v1/next_dist` with `{"tokens": [...], "top_k": n}`,
//! answered by `{"token_ids": [...], "logprobs": [...]}` covering at least
//! the smallest set reaching cumulative probability 0.999. Missing tokens
//! get zero mass; the dense vector is renormalized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{Token, VOCAB_SIZE};

#[derive(Debug, Clone)]
pub struct RemoteEndpoint {
    pub url: String,
    pub timeout_ms: u64,
    pub retries: u32,
    pub top_k: usize,
    pub context_k: usize,
}

impl RemoteEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        RemoteEndpoint {
            url: url.into(),
            timeout_ms: 2_000,
            retries: 2,
            top_k: VOCAB_SIZE,
            context_k: crate::policy::DEFAULT_CONTEXT_K,
        }
    }
}

#[derive(Serialize)]
struct NextDistRequest<'a> {
    tokens: &'a [u16],
    top_k: usize,
}

#[derive(Deserialize)]
struct NextDistResponse {
    token_ids: Vec<u16>,
    logprobs: Vec<f64>,
}

impl RemoteEndpoint {
    /// Fetches the next-token distribution for a token prefix, retrying on
    /// transport failures. Temperature is applied to the returned logprobs.
    pub fn next_dist(&self, tokens: &[Token], temperature: f64) -> Result<Vec<f64>> {
        let ids: Vec<u16> = tokens.iter().map(|t| t.0).collect();
        let body = serde_json::to_string(&NextDistRequest {
            tokens: &ids,
            top_k: self.top_k,
        })
        .expect("request serializes");

        let mut last_err = String::from("no attempts made");
        for _ in 0..=self.retries {
            let attempt = ureq::post(&self.url)
                .timeout(std::time::Duration::from_millis(self.timeout_ms))
                .set("content-type", "application/json")
                .send_string(&body);
            match attempt {
                Ok(resp) => {
                    let text = resp.into_string().map_err(|e| Error::RemoteUnavailable {
                        msg: format!("bad response body: {e}"),
                    })?;
                    let parsed: NextDistResponse =
                        serde_json::from_str(&text).map_err(|e| Error::RemoteUnavailable {
                            msg: format!("malformed response: {e}"),
                        })?;
                    return dense_dist(&parsed, temperature);
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::RemoteUnavailable { msg: last_err })
    }
}

fn dense_dist(resp: &NextDistResponse, temperature: f64) -> Result<Vec<f64>> {
    if resp.token_ids.len() != resp.logprobs.len() || resp.token_ids.is_empty() {
        return Err(Error::RemoteUnavailable {
            msg: "token_ids and logprobs length mismatch".to_string(),
        });
    }
    let mut dense = vec![0.0f64; VOCAB_SIZE];
    for (&id, &lp) in resp.token_ids.iter().zip(&resp.logprobs) {
        if (id as usize) >= VOCAB_SIZE || !lp.is_finite() {
            return Err(Error::RemoteUnavailable {
                msg: format!("invalid entry: token {id}, logprob {lp}"),
            });
        }
        dense[id as usize] = (lp / temperature).exp();
    }
    let sum: f64 = dense.iter().sum();
    if !(sum.is_finite() && sum > 0.0) {
        return Err(Error::RemoteUnavailable {
            msg: "response mass is degenerate".to_string(),
        });
    }
    for v in &mut dense {
        *v /= sum;
    }
    Ok(dense)
}
