//! Text prompts: template + class name + keywords + optional scene description.
//!
//! Scene descriptions come from a [`DescriptionSource`]: either an HTTP text
//! completion endpoint or a deterministic mock drawing from a built-in bank.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gate::InFlightGate;

pub const MAX_PROMPT_CHARS: usize = 500;
pub const DEFAULT_TEMPLATE: &str = "a photo of {w}";
pub const DEFAULT_INSTRUCTION: &str = "Write a one-sentence description of a plausible scene for \"{prompt}\", \
including background, colors, or weather. Object: {w}. Keywords: {k}.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("class name is empty")]
    EmptyClassName,
    #[error("prompt exceeds {MAX_PROMPT_CHARS} characters even without keywords and description")]
    TooLong,
    #[error("description unavailable: {0}")]
    DescriptionUnavailable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub template: String,
    pub class_name: String,
    pub keywords: Vec<String>,
    pub llm_description: Option<String>,
    pub rendered: String,
}

/// Collapses whitespace and comma runs, and trims separators at both ends.
fn clean_piece(s: &str) -> String {
    let spaced = s.split_whitespace().collect::<Vec<_>>().join(" ");
    let parts: Vec<&str> = spaced.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    parts.join(", ")
}

fn truncate_chars(s: &str, max: usize) -> String {
    s.chars().take(max).collect()
}

/// Assembles the final prompt.
///
/// `rendered = template[{w} := class] + ", " + keywords.join(", ") + ", " + desc`,
/// skipping empty parts and normalizing whitespace. A template without `{w}` gets
/// the class name appended. Over the character cap the description is truncated
/// first, then trailing keywords are dropped.
pub fn build_prompt(
    template: &str,
    class_name: &str,
    keywords: &[String],
    desc: Option<&str>,
) -> Result<Prompt, PromptError> {
    let w = clean_piece(class_name);
    if w.is_empty() {
        return Err(PromptError::EmptyClassName);
    }
    let head = if template.contains("{w}") { template.replace("{w}", &w) } else { format!("{template} {w}") };
    let head = clean_piece(&head);
    let mut kws: Vec<String> = keywords.iter().map(|k| clean_piece(k)).filter(|k| !k.is_empty()).collect();
    let desc = desc.map(clean_piece).filter(|d| !d.is_empty());

    let join = |kws: &[String]| {
        let mut s = head.clone();
        for k in kws {
            s.push_str(", ");
            s.push_str(k);
        }
        s
    };
    let mut base = join(&kws);
    while base.chars().count() > MAX_PROMPT_CHARS {
        if kws.pop().is_none() {
            return Err(PromptError::TooLong);
        }
        base = join(&kws);
    }
    let mut rendered = base.clone();
    let mut kept_desc = None;
    if let Some(d) = desc {
        let room = MAX_PROMPT_CHARS.saturating_sub(base.chars().count() + 2);
        let d = clean_piece(&truncate_chars(&d, room));
        if !d.is_empty() {
            rendered.push_str(", ");
            rendered.push_str(&d);
            kept_desc = Some(d);
        }
    }
    Ok(Prompt { template: template.to_string(), class_name: w, keywords: kws, llm_description: kept_desc, rendered })
}

/// Inputs for one description request.
#[derive(Debug, Clone)]
pub struct DescriptionRequest<'a> {
    pub template: &'a str,
    pub class_name: &'a str,
    pub keywords: &'a [String],
    pub seed: u64,
}

pub trait DescriptionSource: Send + Sync {
    fn describe(&self, req: &DescriptionRequest<'_>) -> Result<String, PromptError>;
}

/// `request_description` as a free function.
pub fn request_description(
    client: &dyn DescriptionSource,
    template: &str,
    class_name: &str,
    keywords: &[String],
    seed: u64,
) -> Result<String, PromptError> {
    client.describe(&DescriptionRequest { template, class_name, keywords, seed })
}

/// Picks a bank entry from `sha256(seed_le ‖ class_name)`.
#[derive(Debug, Clone)]
pub struct MockDescriber {
    bank: Vec<String>,
}

impl MockDescriber {
    pub fn new() -> Self {
        Self { bank: DESCRIPTION_BANK.iter().map(|s| s.to_string()).collect() }
    }

    pub fn with_bank(bank: Vec<String>) -> Self {
        assert!(!bank.is_empty(), "description bank must not be empty");
        Self { bank }
    }

    pub fn bank(&self) -> &[String] {
        &self.bank
    }

    pub fn index_for(&self, seed: u64, class_name: &str) -> usize {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(class_name.as_bytes());
        let digest = h.finalize();
        let mut first = [0u8; 8];
        first.copy_from_slice(&digest[..8]);
        (u64::from_le_bytes(first) % self.bank.len() as u64) as usize
    }
}

impl Default for MockDescriber {
    fn default() -> Self {
        Self::new()
    }
}

impl DescriptionSource for MockDescriber {
    fn describe(&self, req: &DescriptionRequest<'_>) -> Result<String, PromptError> {
        Ok(self.bank[self.index_for(req.seed, req.class_name)].clone())
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct DescribeWireRequest {
    pub instruction: String,
    pub max_tokens: u32,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct DescribeWireResponse {
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct HttpDescriberConfig {
    /// Base URL; requests go to `{base}/describe`.
    pub base_url: String,
    pub instruction_template: String,
    pub max_tokens: u32,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

/// Client for the text-completion endpoint.
pub struct HttpDescriber {
    config: HttpDescriberConfig,
    client: reqwest::blocking::Client,
    gate: InFlightGate,
}

impl HttpDescriber {
    pub fn new(config: HttpDescriberConfig) -> Result<Self, PromptError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| PromptError::DescriptionUnavailable(format!("client setup: {e}")))?;
        let gate = InFlightGate::new(config.max_in_flight);
        Ok(Self { config, client, gate })
    }

    pub fn instruction(&self, req: &DescriptionRequest<'_>) -> String {
        let simple = build_prompt(req.template, req.class_name, req.keywords, None)
            .map(|p| p.rendered)
            .unwrap_or_else(|_| req.class_name.to_string());
        self.config
            .instruction_template
            .replace("{prompt}", &simple)
            .replace("{t}", req.template)
            .replace("{w}", req.class_name)
            .replace("{k}", &req.keywords.join(", "))
    }

    fn endpoint(&self) -> String {
        format!("{}/describe", self.config.base_url.trim_end_matches('/'))
    }
}

impl DescriptionSource for HttpDescriber {
    fn describe(&self, req: &DescriptionRequest<'_>) -> Result<String, PromptError> {
        let body = DescribeWireRequest {
            instruction: self.instruction(req),
            max_tokens: self.config.max_tokens,
            seed: req.seed,
        };
        let unavailable = |m: String| PromptError::DescriptionUnavailable(m);
        let _permit = self.gate.acquire();
        let resp = self.client.post(self.endpoint()).json(&body).send().map_err(|e| unavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(unavailable(format!("HTTP {status}")));
        }
        let parsed: DescribeWireResponse = resp.json().map_err(|e| unavailable(format!("malformed response: {e}")))?;
        let text = clean_piece(&parsed.text);
        if text.is_empty() {
            return Err(unavailable("empty description".into()));
        }
        Ok(text)
    }
}

/// Scene descriptions for offline runs: backgrounds, weather, lighting and colors.
pub static DESCRIPTION_BANK: &[&str] = &[
    "standing in tall savanna grass at dusk",
    "on a rain-soaked city street with neon reflections",
    "in a sunlit kitchen with white marble counters",
    "on a snowy mountain road under a pale blue sky",
    "in a dim warehouse lit by a single hanging lamp",
    "beside a calm lake at sunrise with mist on the water",
    "on a wooden dock under heavy grey storm clouds",
    "in a lush green park on a bright spring afternoon",
    "on a dusty desert highway in harsh midday sun",
    "in a cozy living room with warm amber lighting",
    "against a plain studio backdrop in soft diffuse light",
    "on a cobblestone square during light autumn drizzle",
    "in a busy market with colorful awnings overhead",
    "on a beach with turquoise water and white sand",
    "in a foggy forest clearing with tall pine trees",
    "on a rooftop terrace at golden hour",
    "in a red brick alley covered in street art",
    "on a frozen lake surrounded by snow-covered firs",
    "in a modern office with glass walls and blue accents",
    "at a rural farm with rolling yellow wheat fields",
    "under a starry night sky lit by a campfire",
    "in a flooded parking lot reflecting orange street lights",
    "on a suburban driveway on a cloudy morning",
    "in a classroom with chalkboards and wooden desks",
    "on a mossy riverbank under dappled shade",
    "in a train station with steel beams and bright skylights",
    "on a gravel path lined with cherry blossoms",
    "in a cluttered garage with tools on pegboard walls",
    "at the edge of a cliff overlooking a stormy sea",
    "in a hotel lobby with polished black floors",
    "on a city bridge during a pink and purple sunset",
    "in a sandy canyon with red rock walls",
    "beside a country road in heavy morning fog",
    "in a greenhouse full of tropical plants and humid air",
    "on a basketball court under floodlights at night",
    "in an antique shop with dusty shelves and brass lamps",
    "on a harbor pier with fishing boats and seagulls",
    "in a bright art studio with splattered paint on the floor",
    "during a blizzard with swirling white snow",
    "in a quiet library with tall oak bookcases",
    "on a muddy trail after a summer thunderstorm",
    "in a parking garage lit by flickering fluorescent tubes",
    "on a lawn covered in fallen orange maple leaves",
    "in a minimalist room with concrete walls and a single window",
    "at a seaside boardwalk with pastel-colored shops",
    "in a sunflower field under a vivid blue sky",
    "on a dark cobbled street lit by old gas lamps",
    "in a mountain cabin with a stone fireplace",
    "beside a highway overpass on a hazy afternoon",
    "in a tropical rainforest with dense green foliage",
    "on a windy hilltop with scattered wildflowers",
    "in a shopping mall atrium with bright white tiles",
    "on a quiet village street after fresh snowfall",
    "in a laboratory with stainless steel benches",
    "at an airport apron under an overcast sky",
    "in a vineyard with rows of grapevines at harvest time",
    "on a volcanic black sand beach with crashing waves",
    "in a subway car with yellow handrails",
    "beside a waterfall with sunlight breaking through spray",
    "in a backyard garden with a white picket fence",
];
