//! TOML pipeline configuration.
//!
//! Relative paths resolve against the directory of the config file; model paths
//! additionally resolve against `mesh_root` when one is given. Only backend
//! endpoints can be overridden from the environment.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::edges::CannyParams;
use crate::generation::{GenerationParams, RetryPolicy};
use crate::geometry::{CameraIntrinsics, DEFAULT_FOCAL_LENGTH_MM, DEFAULT_IMAGE_SIZE, DEFAULT_SENSOR_WIDTH_MM};
use crate::prompt::{DEFAULT_INSTRUCTION, DEFAULT_TEMPLATE};
use crate::sampling::{RuleTable, ViewpointRule};

pub const ENV_DIFFUSION_URL: &str = "DSTGEN_DIFFUSION_URL";
pub const ENV_LLM_URL: &str = "DSTGEN_LLM_URL";
pub const DEFAULT_IMAGES_PER_CLASS: u32 = 2500;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default = "default_dataset")]
    dataset: String,
    #[serde(default)]
    mesh_root: Option<PathBuf>,
    #[serde(default = "default_output")]
    output_dir: PathBuf,
    #[serde(default = "default_images_per_class")]
    images_per_class: u32,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_workers")]
    workers: usize,
    #[serde(default = "default_template")]
    prompt_template: String,
    #[serde(default)]
    camera: RawCamera,
    #[serde(default)]
    canny: CannyParams,
    #[serde(default)]
    generation: GenerationParams,
    #[serde(default)]
    backend: RawBackend,
    #[serde(default)]
    viewpoint_rules: RawRules,
    #[serde(default)]
    classes: Vec<RawClass>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawCamera {
    focal_length_mm: f64,
    sensor_width_mm: f64,
    image_width: u32,
    image_height: u32,
}

impl Default for RawCamera {
    fn default() -> Self {
        Self {
            focal_length_mm: DEFAULT_FOCAL_LENGTH_MM,
            sensor_width_mm: DEFAULT_SENSOR_WIDTH_MM,
            image_width: DEFAULT_IMAGE_SIZE,
            image_height: DEFAULT_IMAGE_SIZE,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawBackend {
    diffusion_url: Option<String>,
    llm_url: Option<String>,
    mock_diffusion: bool,
    mock_llm: bool,
    mock_latency_ms: u64,
    timeout_secs: f64,
    retries: u32,
    retry_base_ms: u64,
    max_in_flight: usize,
    llm_max_tokens: u32,
    llm_instruction: String,
}

impl Default for RawBackend {
    fn default() -> Self {
        Self {
            diffusion_url: None,
            llm_url: None,
            mock_diffusion: false,
            mock_llm: false,
            mock_latency_ms: 0,
            timeout_secs: 120.0,
            retries: 3,
            retry_base_ms: 500,
            max_in_flight: 4,
            llm_max_tokens: 60,
            llm_instruction: DEFAULT_INSTRUCTION.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRules {
    #[serde(default)]
    default: Option<ViewpointRule>,
    #[serde(default)]
    classes: BTreeMap<String, ViewpointRule>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClass {
    name: String,
    #[serde(default)]
    keywords: Vec<String>,
    #[serde(default)]
    models: Vec<RawModel>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    #[serde(default)]
    id: Option<String>,
    path: PathBuf,
    #[serde(default)]
    keywords: Vec<String>,
}

fn default_dataset() -> String {
    "dataset".into()
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_images_per_class() -> u32 {
    DEFAULT_IMAGES_PER_CLASS
}
fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8)
}
fn default_template() -> String {
    DEFAULT_TEMPLATE.into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub id: String,
    pub path: PathBuf,
    /// Merged class and model keywords, class keywords first.
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassConfig {
    pub name: String,
    pub models: Vec<ModelConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub diffusion_url: Option<String>,
    pub llm_url: Option<String>,
    pub mock_diffusion: bool,
    pub mock_llm: bool,
    pub mock_latency: Duration,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub llm_max_tokens: u32,
    pub llm_instruction: String,
}

/// Validated configuration with absolute paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub dataset: String,
    pub output_dir: PathBuf,
    pub images_per_class: u32,
    pub seed: u64,
    pub workers: usize,
    pub prompt_template: String,
    pub intrinsics: CameraIntrinsics,
    pub canny: CannyParams,
    pub generation: GenerationParams,
    pub backend: BackendConfig,
    pub rules: RuleTable,
    pub classes: Vec<ClassConfig>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        Self::from_toml(&text, &base)
    }

    /// Parses and validates; relative paths are taken against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut problems = Vec::new();

        if raw.images_per_class < 1 {
            problems.push("images_per_class must be >= 1".to_string());
        }
        if raw.workers < 1 {
            problems.push("workers must be >= 1".to_string());
        }
        if raw.classes.is_empty() {
            problems.push("at least one [[classes]] entry is required".to_string());
        }
        let intrinsics = CameraIntrinsics::centered(
            raw.camera.focal_length_mm,
            raw.camera.sensor_width_mm,
            raw.camera.image_width,
            raw.camera.image_height,
        )
        .map_err(|e| problems.push(format!("camera: {e}")))
        .ok();
        if raw.camera.image_width < 3 || raw.camera.image_height < 3 {
            problems.push("camera image must be at least 3x3".to_string());
        }
        if let Err(e) = raw.canny.validate() {
            problems.push(format!("canny: {e}"));
        }
        if let Err(e) = raw.generation.validate() {
            problems.push(format!("generation: {e}"));
        }
        let b = &raw.backend;
        if !(b.timeout_secs.is_finite() && b.timeout_secs > 0.0) {
            problems.push("backend.timeout_secs must be > 0".to_string());
        }
        if b.max_in_flight < 1 {
            problems.push("backend.max_in_flight must be >= 1".to_string());
        }

        let mut rules = RuleTable::builtin();
        if let Some(d) = raw.viewpoint_rules.default {
            rules.default = d;
        }
        for (name, rule) in &raw.viewpoint_rules.classes {
            rules.insert(name, *rule);
        }
        if let Err(e) = rules.validate() {
            problems.push(format!("viewpoint_rules: {e}"));
        }

        let mesh_root = raw.mesh_root.as_ref().map(|r| resolve(base, r)).unwrap_or_else(|| base.to_path_buf());
        let mut class_names = BTreeSet::new();
        let mut classes = Vec::new();
        for (ci, c) in raw.classes.iter().enumerate() {
            let name = c.name.trim().to_string();
            if name.is_empty() {
                problems.push(format!("classes[{ci}]: name is empty"));
                continue;
            }
            if !class_names.insert(name.to_lowercase()) {
                problems.push(format!("class {name:?} is listed twice"));
            }
            if c.models.is_empty() {
                problems.push(format!("class {name:?} has no CAD models"));
            }
            let mut ids = BTreeSet::new();
            let mut models = Vec::new();
            for m in &c.models {
                let id =
                    m.id.clone()
                        .or_else(|| m.path.file_stem().map(|s| s.to_string_lossy().into_owned()))
                        .unwrap_or_default();
                if id.trim().is_empty() {
                    problems.push(format!("class {name:?}: model {} has no id", m.path.display()));
                    continue;
                }
                if id.contains('/') {
                    problems.push(format!("class {name:?}: model id {id:?} must not contain '/'"));
                }
                if !ids.insert(id.clone()) {
                    problems.push(format!("class {name:?}: model id {id:?} is used twice"));
                }
                let mut keywords = c.keywords.clone();
                keywords.extend(m.keywords.iter().cloned());
                models.push(ModelConfig { id, path: resolve(&mesh_root, &m.path), keywords });
            }
            classes.push(ClassConfig { name, models });
        }

        let backend = BackendConfig {
            diffusion_url: b.diffusion_url.clone(),
            llm_url: b.llm_url.clone(),
            mock_diffusion: b.mock_diffusion,
            mock_llm: b.mock_llm,
            mock_latency: Duration::from_millis(b.mock_latency_ms),
            timeout: Duration::from_secs_f64(if b.timeout_secs > 0.0 && b.timeout_secs.is_finite() {
                b.timeout_secs
            } else {
                1.0
            }),
            retry: RetryPolicy {
                retries: b.retries,
                base_delay: Duration::from_millis(b.retry_base_ms),
                ..RetryPolicy::default()
            },
            max_in_flight: b.max_in_flight.max(1),
            llm_max_tokens: b.llm_max_tokens,
            llm_instruction: b.llm_instruction.clone(),
        };

        if !problems.is_empty() {
            return Err(ConfigError::Invalid(problems));
        }
        Ok(Self {
            dataset: raw.dataset,
            output_dir: resolve(base, &raw.output_dir),
            images_per_class: raw.images_per_class,
            seed: raw.seed,
            workers: raw.workers,
            prompt_template: raw.prompt_template,
            intrinsics: intrinsics.expect("validated above"),
            canny: raw.canny,
            generation: raw.generation,
            backend,
            rules,
            classes,
        })
    }

    /// Applies endpoint overrides from the environment.
    pub fn apply_env(&mut self) {
        self.apply_env_from(|k| std::env::var(k).ok());
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(url) = get(ENV_DIFFUSION_URL).filter(|s| !s.trim().is_empty()) {
            self.backend.diffusion_url = Some(url);
        }
        if let Some(url) = get(ENV_LLM_URL).filter(|s| !s.trim().is_empty()) {
            self.backend.llm_url = Some(url);
        }
    }

    /// Checks that a diffusion backend is configured. A missing LLM endpoint
    /// without the mock only means prompts carry no description.
    pub fn check_backends(&self) -> Result<(), ConfigError> {
        if !self.backend.mock_diffusion && self.backend.diffusion_url.is_none() {
            return Err(ConfigError::Invalid(vec![format!(
                "no diffusion backend: set backend.diffusion_url, {ENV_DIFFUSION_URL}, or use --mock-diffusion"
            )]));
        }
        Ok(())
    }

    pub fn total_items(&self) -> usize {
        self.classes.len() * self.images_per_class as usize
    }
}
