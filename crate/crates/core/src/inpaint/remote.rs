//! HTTP client for an external inpainting service.
//!
//! Endpoints:
//! - `POST /concept/learn`: multipart `images[]` (PNG), `fused_masks[]`
//!   (8-bit PNG, `round(255 M′)`), fields `steps`, `token_count`; replies
//!   `{"concept_id": ...}`.
//! - `POST /inpaint`: multipart `image`, `fused_mask`, fields `concept_id`,
//!   `strength`, `steps`, `seed`; replies with a PNG of the same size.
//!
//! Errors come back as JSON `{error, detail}` with status 400, 404 or 503.

use std::thread;
use std::time::Duration;

use serde::Deserialize;
use ureq::Agent;

use super::backend::{InpaintBackend, InpaintRequest};
use super::ConceptHandle;
use crate::error::{Error, Result};
use crate::scene::{ImageBuffer, MaskMap};

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Textual-inversion steps requested from the service.
    pub learn_steps: usize,
    pub token_count: usize,
    /// Extra attempts after a network failure or a 503.
    pub retries: usize,
    /// First retry delay; doubles on each further attempt.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            learn_steps: 3000,
            token_count: 1,
            retries: 3,
            backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(600),
        }
    }
}

pub struct RemoteBackend {
    base: String,
    agent: Agent,
    config: RemoteConfig,
}

/// Hand-assembled `multipart/form-data` body.
struct Multipart {
    boundary: String,
    body: Vec<u8>,
}

impl Multipart {
    fn new() -> Self {
        Multipart {
            boundary: "vista-form-boundary-7MA4YWxkTrZu0gW".to_string(),
            body: Vec::new(),
        }
    }

    fn text(&mut self, name: &str, value: impl ToString) {
        self.body.extend_from_slice(
            format!(
                "--{}\r\nContent-Disposition: form-data; name=\"{}\"\r\n\r\n{}\r\n",
                self.boundary,
                name,
                value.to_string()
            )
            .as_bytes(),
        );
    }

    fn png(&mut self, name: &str, filename: &str, bytes: &[u8]) {
        self.body.extend_from_slice(
            format!(
                "--{}\r\nContent-Disposition: form-data; name=\"{}\"; filename=\"{}\"\r\nContent-Type: image/png\r\n\r\n",
                self.boundary, name, filename
            )
            .as_bytes(),
        );
        self.body.extend_from_slice(bytes);
        self.body.extend_from_slice(b"\r\n");
    }

    fn finish(mut self) -> (String, Vec<u8>) {
        self.body.extend_from_slice(format!("--{}--\r\n", self.boundary).as_bytes());
        (format!("multipart/form-data; boundary={}", self.boundary), self.body)
    }
}

#[derive(Deserialize)]
struct LearnResponse {
    concept_id: String,
}

impl RemoteBackend {
    pub fn new(base_url: &str) -> Self {
        Self::with_config(base_url, RemoteConfig::default())
    }

    pub fn with_config(base_url: &str, config: RemoteConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        RemoteBackend {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
            config,
        }
    }

    /// POSTs the form, retrying network failures and 503s; returns the
    /// body of a 2xx response.
    fn post(&self, path: &str, form: Multipart) -> Result<Vec<u8>> {
        let url = format!("{}{}", self.base, path);
        let (content_type, body) = form.finish();
        let mut delay = self.config.backoff;
        let mut attempt = 0;
        loop {
            let outcome = self
                .agent
                .post(&url)
                .header("Content-Type", &content_type)
                .send(&body[..]);
            let retryable = match outcome {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let bytes = resp.body_mut().read_to_vec().map_err(|e| Error::Network(e.to_string()))?;
                    if (200..300).contains(&status) {
                        return Ok(bytes);
                    }
                    let err = Error::Protocol {
                        status,
                        body: String::from_utf8_lossy(&bytes).into_owned(),
                    };
                    if status != 503 {
                        return Err(err);
                    }
                    err
                }
                Err(e) => Error::Network(e.to_string()),
            };
            if attempt >= self.config.retries {
                return Err(retryable);
            }
            log::warn!("{url}: {retryable}; retrying in {delay:?}");
            thread::sleep(delay);
            delay *= 2;
            attempt += 1;
        }
    }
}

impl InpaintBackend for RemoteBackend {
    fn name(&self) -> &str {
        &self.base
    }

    fn learn_concept(&self, images: &[ImageBuffer], masks: &[MaskMap]) -> Result<ConceptHandle> {
        if images.len() != masks.len() {
            return Err(Error::CountMismatch {
                expected: images.len(),
                found: masks.len(),
            });
        }
        let mut form = Multipart::new();
        for (i, (img, mask)) in images.iter().zip(masks).enumerate() {
            form.png("images[]", &format!("image_{i:04}.png"), &img.encode_png()?);
            form.png("fused_masks[]", &format!("mask_{i:04}.png"), &mask.encode_png()?);
        }
        form.text("steps", self.config.learn_steps);
        form.text("token_count", self.config.token_count);
        let bytes = self.post("/concept/learn", form)?;
        let parsed: LearnResponse =
            serde_json::from_slice(&bytes).map_err(|e| Error::ContractViolation(format!("bad concept response: {e}")))?;
        ConceptHandle::new(parsed.concept_id).map_err(|_| Error::ContractViolation("empty concept id".into()))
    }

    fn inpaint(&self, request: &InpaintRequest<'_>) -> Result<ImageBuffer> {
        let mut form = Multipart::new();
        form.png("image", "image.png", &request.image.encode_png()?);
        form.png("fused_mask", "fused_mask.png", &request.mask.encode_png()?);
        form.text("concept_id", request.concept.as_str());
        form.text("strength", request.strength);
        form.text("steps", request.steps);
        form.text("seed", request.seed);
        let bytes = self.post("/inpaint", form)?;
        ImageBuffer::decode_png(&bytes).map_err(|e| Error::ContractViolation(format!("response is not a png: {e}")))
    }
}
