//! Randomized viewpoints following per-class sampling rules.
//!
//! Azimuth is uniform (over the full circle, or a frontal band), elevation and
//! in-plane roll are truncated Gaussians, distance is uniform. Truncation is done by
//! rejection so bounds hold exactly.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_6, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Viewpoint;

const PI_18: f64 = PI / 18.0;
const PI_36: f64 = PI / 36.0;
const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SamplingError {
    #[error("invalid viewpoint rule: {0}")]
    InvalidRule(String),
}

/// Deterministic generator: ChaCha8 keyed through `SeedableRng::seed_from_u64`.
/// The stream for a given seed is fixed across platforms.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Normal(mean, std) restricted to `[lo, hi]` (or `(lo, hi)` when `open`).
    pub fn truncated_normal(&mut self, mean: f64, std: f64, lo: f64, hi: f64, open: bool) -> f64 {
        for _ in 0..MAX_REJECTIONS {
            let x = mean + std * self.standard_normal();
            let inside = if open { x > lo && x < hi } else { x >= lo && x <= hi };
            if inside {
                return x;
            }
        }
        // Only reachable with bounds many standard deviations from the mean.
        mean.clamp(lo, hi)
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AzimuthMode {
    All,
    Front,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElevationMode {
    All,
    Top,
}

/// Numeric meaning of the `front` / `top` bands and the elevation Gaussians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingBands {
    /// `front` azimuth is uniform in `(-w, w)`.
    pub front_half_width: f64,
    pub elevation_std: f64,
    pub all_elevation_mean: f64,
    pub all_elevation_range: (f64, f64),
    pub top_elevation_mean: f64,
    pub top_elevation_range: (f64, f64),
    /// Theta is truncated to `(-limit, limit)`.
    pub theta_limit: f64,
}

impl Default for SamplingBands {
    fn default() -> Self {
        Self {
            front_half_width: FRAC_PI_3,
            elevation_std: PI_18,
            all_elevation_mean: 0.0,
            all_elevation_range: (-FRAC_PI_6, FRAC_PI_3),
            top_elevation_mean: FRAC_PI_6,
            top_elevation_range: (PI_36, FRAC_PI_2),
            theta_limit: FRAC_PI_2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewpointRule {
    pub azimuth: AzimuthMode,
    pub elevation: ElevationMode,
    #[serde(default = "default_theta_std")]
    pub theta_std: f64,
    #[serde(default = "default_distance_range")]
    pub distance_range: (f64, f64),
    #[serde(default)]
    pub bands: SamplingBands,
}

fn default_theta_std() -> f64 {
    PI_18
}

fn default_distance_range() -> (f64, f64) {
    (4.0, 8.0)
}

impl ViewpointRule {
    pub fn new(azimuth: AzimuthMode, elevation: ElevationMode) -> Self {
        Self {
            azimuth,
            elevation,
            theta_std: default_theta_std(),
            distance_range: default_distance_range(),
            bands: SamplingBands::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        let err = |m: String| Err(SamplingError::InvalidRule(m));
        if !(self.theta_std.is_finite() && self.theta_std > 0.0) {
            return err(format!("theta_std must be positive, got {}", self.theta_std));
        }
        let (dmin, dmax) = self.distance_range;
        if !(dmin.is_finite() && dmax.is_finite() && 0.0 < dmin && dmin < dmax) {
            return err(format!("distance range must satisfy 0 < min < max, got ({dmin}, {dmax})"));
        }
        let b = &self.bands;
        if !(b.front_half_width > 0.0 && b.front_half_width <= PI) {
            return err(format!("front_half_width must be in (0, π], got {}", b.front_half_width));
        }
        if !(b.elevation_std.is_finite() && b.elevation_std > 0.0) {
            return err(format!("elevation_std must be positive, got {}", b.elevation_std));
        }
        for (name, mean, (lo, hi)) in
            [("all", b.all_elevation_mean, b.all_elevation_range), ("top", b.top_elevation_mean, b.top_elevation_range)]
        {
            if !(-FRAC_PI_2 <= lo && lo < hi && hi <= FRAC_PI_2 && lo <= mean && mean <= hi) {
                return err(format!("{name} elevation band ({lo}, {hi}) with mean {mean} is invalid"));
            }
        }
        if !(b.theta_limit > 0.0 && b.theta_limit <= PI) {
            return err(format!("theta_limit must be in (0, π], got {}", b.theta_limit));
        }
        Ok(())
    }
}

/// Draws one viewpoint. Draw order is azimuth, elevation, theta, distance.
pub fn sample_viewpoint(rule: &ViewpointRule, rng: &mut SeededRng) -> Viewpoint {
    let b = &rule.bands;
    let azimuth = match rule.azimuth {
        AzimuthMode::All => rng.uniform(0.0, TAU),
        AzimuthMode::Front => loop {
            // Open interval; the endpoint has probability zero but is excluded exactly.
            let a = rng.uniform(-b.front_half_width, b.front_half_width);
            if a > -b.front_half_width {
                break a;
            }
        },
    };
    let (mean, (lo, hi)) = match rule.elevation {
        ElevationMode::All => (b.all_elevation_mean, b.all_elevation_range),
        ElevationMode::Top => (b.top_elevation_mean, b.top_elevation_range),
    };
    let elevation = rng.truncated_normal(mean, b.elevation_std, lo, hi, false);
    let theta = rng.truncated_normal(0.0, rule.theta_std, -b.theta_limit, b.theta_limit, true);
    let (dmin, dmax) = rule.distance_range;
    let distance = rng.uniform(dmin, dmax);
    Viewpoint::new(azimuth, elevation, theta, distance).expect("sampled values satisfy viewpoint invariants")
}

/// Class → rule lookup with a fallback. Class names match case-insensitively
/// after trimming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    pub default: ViewpointRule,
    #[serde(default)]
    pub classes: BTreeMap<String, ViewpointRule>,
}

fn class_key(name: &str) -> String {
    name.trim().to_lowercase()
}

impl RuleTable {
    pub fn new(default: ViewpointRule) -> Self {
        Self { default, classes: BTreeMap::new() }
    }

    /// Built-in rules for the 32 classification classes with known viewpoint
    /// priors; everything else samples the full sphere band.
    pub fn builtin() -> Self {
        use AzimuthMode as A;
        use ElevationMode as E;
        let groups: [(A, E, &[&str]); 4] = [
            (
                A::All,
                E::All,
                &[
                    "airliner",
                    "beach wagon",
                    "cab",
                    "coffee mug",
                    "dining table",
                    "piano",
                    "bicycle",
                    "pillow",
                    "police van",
                    "pot",
                    "school bus",
                    "warplane",
                    "bottle",
                    "bench",
                    "birdhouse",
                    "ambulance",
                    "trolleybus",
                ],
            ),
            (
                A::Front,
                E::All,
                &["cellular phone", "laptop", "mailbox", "microwave", "remote control", "washer", "bag"],
            ),
            (A::All, E::Top, &["keyboard", "table lamp", "trash can", "bathtub", "couch", "soup bowl"]),
            (A::Front, E::Top, &["printer", "stove"]),
        ];
        let mut table = Self::new(ViewpointRule::new(A::All, E::All));
        for (az, el, names) in groups {
            for name in names {
                table.insert(name, ViewpointRule::new(az, el));
            }
        }
        table
    }

    pub fn insert(&mut self, class_name: &str, rule: ViewpointRule) {
        self.classes.insert(class_key(class_name), rule);
    }

    pub fn rule_for_class(&self, class_name: &str) -> &ViewpointRule {
        self.classes.get(&class_key(class_name)).unwrap_or(&self.default)
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        self.default.validate()?;
        for (name, rule) in &self.classes {
            rule.validate().map_err(|e| SamplingError::InvalidRule(format!("class {name:?}: {e}")))?;
        }
        Ok(())
    }
}

impl Default for RuleTable {
    fn default() -> Self {
        Self::builtin()
    }
}

pub fn rule_for_class<'a>(class_name: &str, table: &'a RuleTable) -> &'a ViewpointRule {
    table.rule_for_class(class_name)
}
