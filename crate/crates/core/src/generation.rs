//! Client side of the edge-conditioned diffusion backend.
//!
//! Wire protocol (JSON over HTTP):
//!
//! ```text
//! POST {base}/generate
//! {"prompt": str, "seed": u64, "steps": u32, "guidance_scale": f64,
//!  "conditioning_scale": f64, "edge_map_png_base64": str}
//! -> 200 {"image_png_base64": str}
//! ```
//!
//! The returned image must have the edge map's dimensions.

use std::fmt;
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::edges::{EdgeMap, EDGE};
use crate::gate::InFlightGate;
use crate::imaging::{self, ImageIoError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub steps: u32,
    pub guidance_scale: f64,
    pub conditioning_scale: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self { steps: 30, guidance_scale: 7.5, conditioning_scale: 1.0 }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.steps < 1 {
            return Err(GenerationError::InvalidRequest("steps must be >= 1".into()));
        }
        for (name, v) in [("guidance_scale", self.guidance_scale), ("conditioning_scale", self.conditioning_scale)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(GenerationError::InvalidRequest(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub edge_map: EdgeMap,
    pub prompt: String,
    pub seed: u64,
    pub params: GenerationParams,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn to_png(&self) -> Result<Vec<u8>, ImageIoError> {
        imaging::encode_rgb(self.width, self.height, &self.pixels)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, ImageIoError> {
        let (width, height, pixels) = imaging::decode_rgb(bytes)?;
        Ok(Self { width, height, pixels })
    }
}

/// Failure classes, used as the `failed:<category>` status in manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCategory {
    Connect,
    Timeout,
    Http,
    Decode,
    Dimension,
    Invalid,
}

impl ErrorCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Connect => "connect",
            Self::Timeout => "timeout",
            Self::Http => "http",
            Self::Decode => "decode",
            Self::Dimension => "dimension",
            Self::Invalid => "invalid",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("cannot connect to backend: {0}")]
    Connect(String),
    #[error("backend request timed out: {0}")]
    Timeout(String),
    #[error("backend returned HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Decode(String),
    #[error("backend image is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch { got_w: u32, got_h: u32, want_w: u32, want_h: u32 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GenerationError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Self::Connect(_) => ErrorCategory::Connect,
            Self::Timeout(_) => ErrorCategory::Timeout,
            Self::HttpStatus { .. } => ErrorCategory::Http,
            Self::Decode(_) => ErrorCategory::Decode,
            Self::DimensionMismatch { .. } => ErrorCategory::Dimension,
            Self::InvalidRequest(_) => ErrorCategory::Invalid,
        }
    }

    /// Transient failures worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Connect(_) | Self::Timeout(_) => true,
            Self::HttpStatus { status, .. } => *status >= 500 || *status == 408 || *status == 429,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub prompt: String,
    pub seed: u64,
    pub steps: u32,
    pub guidance_scale: f64,
    pub conditioning_scale: f64,
    pub edge_map_png_base64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub image_png_base64: String,
}

impl WireRequest {
    pub fn from_request(req: &GenerationRequest) -> Result<Self, GenerationError> {
        let png = req.edge_map.to_png().map_err(|e| GenerationError::InvalidRequest(e.to_string()))?;
        Ok(Self {
            prompt: req.prompt.clone(),
            seed: req.seed,
            steps: req.params.steps,
            guidance_scale: req.params.guidance_scale,
            conditioning_scale: req.params.conditioning_scale,
            edge_map_png_base64: BASE64.encode(png),
        })
    }

    pub fn into_request(self) -> Result<GenerationRequest, GenerationError> {
        let png = BASE64.decode(&self.edge_map_png_base64).map_err(|e| GenerationError::Decode(e.to_string()))?;
        let edge_map = EdgeMap::from_png(&png).map_err(|e| GenerationError::Decode(e.to_string()))?;
        let req = GenerationRequest {
            edge_map,
            prompt: self.prompt,
            seed: self.seed,
            params: GenerationParams {
                steps: self.steps,
                guidance_scale: self.guidance_scale,
                conditioning_scale: self.conditioning_scale,
            },
        };
        req.params.validate()?;
        Ok(req)
    }
}

pub fn encode_request(req: &GenerationRequest) -> Result<String, GenerationError> {
    let wire = WireRequest::from_request(req)?;
    serde_json::to_string(&wire).map_err(|e| GenerationError::InvalidRequest(e.to_string()))
}

pub fn decode_request(json: &str) -> Result<GenerationRequest, GenerationError> {
    let wire: WireRequest = serde_json::from_str(json).map_err(|e| GenerationError::Decode(e.to_string()))?;
    wire.into_request()
}

pub fn encode_response(img: &RgbImage) -> Result<String, GenerationError> {
    let png = img.to_png().map_err(|e| GenerationError::InvalidRequest(e.to_string()))?;
    serde_json::to_string(&WireResponse { image_png_base64: BASE64.encode(png) })
        .map_err(|e| GenerationError::InvalidRequest(e.to_string()))
}

pub fn decode_response(json: &str) -> Result<RgbImage, GenerationError> {
    let wire: WireResponse = serde_json::from_str(json).map_err(|e| GenerationError::Decode(e.to_string()))?;
    let png = BASE64.decode(&wire.image_png_base64).map_err(|e| GenerationError::Decode(e.to_string()))?;
    RgbImage::from_png(&png).map_err(|e| GenerationError::Decode(e.to_string()))
}

pub trait DiffusionBackend: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<RgbImage, GenerationError>;
}

/// Deterministic stand-in: seeded per-pixel noise with edge pixels darkened.
///
/// The noise stream is keyed by `sha256(edge map bytes ‖ prompt ‖ seed)`, so the
/// output is a pure function of those three inputs.
#[derive(Debug, Clone, Default)]
pub struct MockDiffusion {
    /// Artificial per-request latency.
    pub latency: Duration,
}

impl MockDiffusion {
    pub const NOISE_MIN: u8 = 96;
    /// Edge pixels are scaled by this factor.
    pub const EDGE_DARKEN: u8 = 4;

    pub fn with_latency(latency: Duration) -> Self {
        Self { latency }
    }

    pub fn noise_seed(req: &GenerationRequest) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(req.edge_map.width().to_le_bytes());
        h.update(req.edge_map.height().to_le_bytes());
        h.update(req.edge_map.pixels());
        h.update((req.prompt.len() as u64).to_le_bytes());
        h.update(req.prompt.as_bytes());
        h.update(req.seed.to_le_bytes());
        h.finalize().into()
    }
}

impl DiffusionBackend for MockDiffusion {
    fn generate(&self, req: &GenerationRequest) -> Result<RgbImage, GenerationError> {
        req.params.validate()?;
        if !self.latency.is_zero() {
            thread::sleep(self.latency);
        }
        let mut rng = ChaCha8Rng::from_seed(Self::noise_seed(req));
        let (w, h) = (req.edge_map.width(), req.edge_map.height());
        let mut pixels = Vec::with_capacity(w as usize * h as usize * 3);
        for &e in req.edge_map.pixels() {
            for _ in 0..3 {
                let noise: u8 = rng.random_range(Self::NOISE_MIN..=u8::MAX);
                pixels.push(if e == EDGE { noise / Self::EDGE_DARKEN } else { noise });
            }
        }
        Ok(RgbImage { width: w, height: h, pixels })
    }
}

/// Talks to a remote backend over the wire protocol.
pub struct HttpDiffusion {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpDiffusion {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, GenerationError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .connect_timeout(timeout.min(Duration::from_secs(10)))
            .build()
            .map_err(|e| GenerationError::InvalidRequest(format!("client setup: {e}")))?;
        Ok(Self { endpoint: format!("{}/generate", base_url.trim_end_matches('/')), client })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

fn classify(e: reqwest::Error) -> GenerationError {
    if e.is_timeout() {
        GenerationError::Timeout(e.to_string())
    } else if e.is_connect() {
        GenerationError::Connect(e.to_string())
    } else if e.is_decode() || e.is_body() {
        GenerationError::Decode(e.to_string())
    } else {
        GenerationError::Connect(e.to_string())
    }
}

impl DiffusionBackend for HttpDiffusion {
    fn generate(&self, req: &GenerationRequest) -> Result<RgbImage, GenerationError> {
        req.params.validate()?;
        let body = encode_request(req)?;
        let resp = self
            .client
            .post(&self.endpoint)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body)
            .send()
            .map_err(classify)?;
        let status = resp.status();
        let text = resp.text().map_err(classify)?;
        if !status.is_success() {
            let body: String = text.chars().take(200).collect();
            return Err(GenerationError::HttpStatus { status: status.as_u16(), body });
        }
        let img = decode_response(&text)?;
        if (img.width, img.height) != (req.edge_map.width(), req.edge_map.height()) {
            return Err(GenerationError::DimensionMismatch {
                got_w: img.width,
                got_h: img.height,
                want_w: req.edge_map.width(),
                want_h: req.edge_map.height(),
            });
        }
        Ok(img)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Attempts after the first one.
    pub retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { retries: 3, base_delay: Duration::from_millis(500), max_delay: Duration::from_secs(30) }
    }
}

impl RetryPolicy {
    /// Delay before retry number `n` (1-based): `base · 2^(n-1)`, capped.
    pub fn delay(&self, n: u32) -> Duration {
        let factor = 1u32.checked_shl(n.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// A request that exhausted its attempts.
#[derive(Debug)]
pub struct FailedGeneration {
    pub category: ErrorCategory,
    pub attempts: u32,
    pub last_error: GenerationError,
}

/// Shared front-end for a backend: bounds in-flight requests and retries
/// transient failures with exponential backoff.
pub struct GenerationClient {
    backend: Box<dyn DiffusionBackend>,
    policy: RetryPolicy,
    gate: InFlightGate,
}

impl GenerationClient {
    pub fn new(backend: Box<dyn DiffusionBackend>, policy: RetryPolicy, max_in_flight: usize) -> Self {
        Self { backend, policy, gate: InFlightGate::new(max_in_flight) }
    }

    pub fn max_in_flight(&self) -> usize {
        self.gate.capacity()
    }

    pub fn generate(&self, req: &GenerationRequest) -> Result<RgbImage, FailedGeneration> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.gate.acquire();
                self.backend.generate(req)
            };
            match result {
                Ok(img) => {
                    if (img.width, img.height) != (req.edge_map.width(), req.edge_map.height()) {
                        let err = GenerationError::DimensionMismatch {
                            got_w: img.width,
                            got_h: img.height,
                            want_w: req.edge_map.width(),
                            want_h: req.edge_map.height(),
                        };
                        return Err(FailedGeneration { category: err.category(), attempts: attempt, last_error: err });
                    }
                    return Ok(img);
                }
                Err(err) if err.is_retryable() && attempt <= self.policy.retries => {
                    log::warn!("generation attempt {attempt} failed ({err}); retrying");
                    thread::sleep(self.policy.delay(attempt));
                }
                Err(err) => {
                    return Err(FailedGeneration { category: err.category(), attempts: attempt, last_error: err });
                }
            }
        }
    }
}

/// `generate_image` as a free function, without retries.
pub fn generate_image(backend: &dyn DiffusionBackend, req: &GenerationRequest) -> Result<RgbImage, GenerationError> {
    backend.generate(req)
}
