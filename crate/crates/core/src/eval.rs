//! Geodesic pose error, threshold accuracies and top-1 classification accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Manifest;
use crate::geometry::{GeometryError, RotationMatrix};

/// Rotations in prediction files may deviate from orthonormality by this much.
pub const PREDICTION_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_THRESHOLDS: [f64; 2] = [PI / 6.0, PI / 18.0];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("accuracy is undefined for an empty error list")]
    Empty,
    #[error("threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("cannot parse threshold {0:?} (use radians or forms like pi/6)")]
    ThresholdSyntax(String),
    #[error(transparent)]
    InvalidRotation(#[from] GeometryError),
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("duplicate prediction id {0}")]
    DuplicateId(String),
    #[error("prediction file mixes rotations and labels")]
    MixedKinds,
    #[error("prediction file is empty")]
    NoPredictions,
    #[error("missing predictions for {} ids: {}", .0.len(), .0.join(", "))]
    Coverage(Vec<String>),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Angle of `R_predᵀ R_gt`, in `[0, π]`; equals `‖logm(R_predᵀ R_gt)‖_F / √2`.
pub fn pose_error(pred: &RotationMatrix, gt: &RotationMatrix) -> f64 {
    pred.transpose().compose(gt).angle()
}

/// Validating variant for raw matrices.
pub fn pose_error_raw(pred: &Matrix3<f64>, gt: &Matrix3<f64>) -> Result<f64, EvalError> {
    Ok(pose_error(&RotationMatrix::new(*pred)?, &RotationMatrix::new(*gt)?))
}

/// Fraction of errors strictly below `threshold`.
pub fn accuracy_at(errors: &[f64], threshold: f64) -> Result<f64, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::Empty);
    }
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(EvalError::InvalidThreshold(threshold));
    }
    let hits = errors.iter().filter(|&&e| e < threshold).count();
    Ok(hits as f64 / errors.len() as f64)
}

/// Parses radians (`0.5236`), `pi`, `pi/6`, `2pi/3`, `2*pi/3` or degrees (`30deg`).
pub fn parse_threshold(s: &str) -> Result<f64, EvalError> {
    let err = || EvalError::ThresholdSyntax(s.to_string());
    let t = s.trim().to_ascii_lowercase().replace(' ', "").replace('π', "pi");
    let value = if let Some(deg) = t.strip_suffix("deg") {
        deg.parse::<f64>().map_err(|_| err())?.to_radians()
    } else if let Some(pos) = t.find("pi") {
        let (coef, rest) = (&t[..pos], &t[pos + 2..]);
        let coef = coef.trim_end_matches('*');
        let c = if coef.is_empty() { 1.0 } else { coef.parse::<f64>().map_err(|_| err())? };
        let d = match rest.strip_prefix('/') {
            Some(d) => d.parse::<f64>().map_err(|_| err())?,
            None if rest.is_empty() => 1.0,
            None => return Err(err()),
        };
        c * PI / d
    } else {
        t.parse::<f64>().map_err(|_| err())?
    };
    if !(value.is_finite() && value > 0.0) {
        return Err(EvalError::InvalidThreshold(value));
    }
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictionValue {
    Rotation(RotationMatrix),
    Label(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrediction {
    id: String,
    #[serde(default)]
    rotation: Option<[f64; 9]>,
    #[serde(default)]
    label: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RotationPredictionLine<'a> {
    pub id: &'a str,
    pub rotation: [f64; 9],
}

#[derive(Debug, Clone, Serialize)]
pub struct LabelPredictionLine<'a> {
    pub id: &'a str,
    pub label: &'a str,
}

/// Predictions keyed by item id; all of one kind.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictionFile {
    Rotations(BTreeMap<String, RotationMatrix>),
    Labels(BTreeMap<String, String>),
}

impl PredictionFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self, EvalError> {
        let malformed = |line: usize, message: String| EvalError::Malformed { path: path.to_path_buf(), line, message };
        let mut rotations = BTreeMap::new();
        let mut labels = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 1;
            let raw: RawPrediction = serde_json::from_str(line).map_err(|e| malformed(lineno, e.to_string()))?;
            if rotations.contains_key(&raw.id) || labels.contains_key(&raw.id) {
                return Err(EvalError::DuplicateId(raw.id));
            }
            match (raw.rotation, raw.label) {
                (Some(r), None) => {
                    let m = Matrix3::from_row_slice(&r);
                    let rot = RotationMatrix::reorthonormalize(m, PREDICTION_TOLERANCE)
                        .map_err(|e| malformed(lineno, e.to_string()))?;
                    rotations.insert(raw.id, rot);
                }
                (None, Some(l)) => {
                    labels.insert(raw.id, l);
                }
                _ => return Err(malformed(lineno, "expected exactly one of `rotation` or `label`".into())),
            }
        }
        match (rotations.is_empty(), labels.is_empty()) {
            (true, true) => Err(EvalError::NoPredictions),
            (false, false) => Err(EvalError::MixedKinds),
            (false, true) => Ok(Self::Rotations(rotations)),
            (true, false) => Ok(Self::Labels(labels)),
        }
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, path)
    }
}

fn missing_ids<'a, V>(gt_ids: impl Iterator<Item = &'a str>, preds: &BTreeMap<String, V>) -> Vec<String> {
    gt_ids.filter(|id| !preds.contains_key(*id)).map(str::to_string).collect()
}

/// Per-item errors plus accuracies at each threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoseErrorReport {
    pub count: usize,
    pub thresholds: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub median_error: f64,
    #[serde(skip)]
    pub errors: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Top1Report {
    pub count: usize,
    pub top1_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum EvalReport {
    Pose(PoseErrorReport),
    Top1(Top1Report),
}

/// Accuracies over the manifest's ok records. Predictions for other ids are ignored.
pub fn evaluate_pose(
    preds: &BTreeMap<String, RotationMatrix>,
    gt: &Manifest,
    thresholds: &[f64],
) -> Result<PoseErrorReport, EvalError> {
    let missing = missing_ids(gt.ok_records().map(|r| r.id.as_str()), preds);
    if !missing.is_empty() {
        return Err(EvalError::Coverage(missing));
    }
    let errors: BTreeMap<String, f64> =
        gt.ok_records().map(|r| (r.id.clone(), pose_error(&preds[&r.id], &r.rotation))).collect();
    let list: Vec<f64> = errors.values().copied().collect();
    let accuracies = thresholds.iter().map(|&t| accuracy_at(&list, t)).collect::<Result<Vec<_>, _>>()?;
    let mut sorted = list.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median_error = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    Ok(PoseErrorReport { count: n, thresholds: thresholds.to_vec(), accuracies, median_error, errors })
}

pub fn top1_accuracy(preds: &BTreeMap<String, String>, gt: &Manifest) -> Result<f64, EvalError> {
    let missing = missing_ids(gt.ok_records().map(|r| r.id.as_str()), preds);
    if !missing.is_empty() {
        return Err(EvalError::Coverage(missing));
    }
    let (mut n, mut hits) = (0usize, 0usize);
    for r in gt.ok_records() {
        n += 1;
        hits += usize::from(preds[&r.id] == r.class_name);
    }
    if n == 0 {
        return Err(EvalError::Empty);
    }
    Ok(hits as f64 / n as f64)
}

pub fn evaluate(preds: &PredictionFile, gt: &Manifest, thresholds: &[f64]) -> Result<EvalReport, EvalError> {
    match preds {
        PredictionFile::Rotations(r) => evaluate_pose(r, gt, thresholds).map(EvalReport::Pose),
        PredictionFile::Labels(l) => {
            let ids: BTreeSet<&str> = gt.ok_records().map(|r| r.id.as_str()).collect();
            Ok(EvalReport::Top1(Top1Report { count: ids.len(), top1_accuracy: top1_accuracy(l, gt)? }))
        }
    }
}

/// Renders `π`-fractions where exact, otherwise radians.
pub fn format_threshold(t: f64) -> String {
    for d in 1..=36u32 {
        let n = t * d as f64 / PI;
        let r = n.round();
        if r >= 1.0 && (n - r).abs() < 1e-9 {
            let num = if r == 1.0 { String::new() } else { format!("{r}") };
            return if d == 1 { format!("{num}π") } else { format!("{num}π/{d}") };
        }
    }
    format!("{t:.6}")
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        match self {
            EvalReport::Pose(p) => {
                let _ = writeln!(s, "{:<12} {:>10}", "metric", "value");
                let _ = writeln!(s, "{:<12} {:>10}", "count", p.count);
                for (t, a) in p.thresholds.iter().zip(&p.accuracies) {
                    let _ = writeln!(s, "{:<12} {:>10.4}", format!("Acc@{}", format_threshold(*t)), a);
                }
                let _ = writeln!(s, "{:<12} {:>10.4}", "median(deg)", p.median_error.to_degrees());
            }
            EvalReport::Top1(t) => {
                let _ = writeln!(s, "{:<12} {:>10}", "metric", "value");
                let _ = writeln!(s, "{:<12} {:>10}", "count", t.count);
                let _ = writeln!(s, "{:<12} {:>10.4}", "top-1", t.top1_accuracy);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_zero_error() {
        let i = RotationMatrix::identity();
        assert_eq!(pose_error(&i, &i), 0.0);
    }

    #[test]
    fn z_rotation_error() {
        let e = pose_error(&RotationMatrix::identity(), &RotationMatrix::about_z(PI / 6.0));
        assert!((e - PI / 6.0).abs() < 1e-9);
    }

    #[test]
    fn strict_threshold_count() {
        assert_eq!(accuracy_at(&[PI / 12.0, PI / 5.0], PI / 6.0).unwrap(), 0.5);
        assert_eq!(accuracy_at(&[PI / 6.0], PI / 6.0).unwrap(), 0.0);
        assert_eq!(accuracy_at(&[PI, 0.0], PI + 1e-12).unwrap(), 1.0);
        assert!(matches!(accuracy_at(&[], 1.0), Err(EvalError::Empty)));
        assert!(accuracy_at(&[0.1], 0.0).is_err());
    }

    #[test]
    fn threshold_parsing() {
        assert_eq!(parse_threshold("pi/6").unwrap(), PI / 6.0);
        assert_eq!(parse_threshold("π/18").unwrap(), PI / 18.0);
        assert_eq!(parse_threshold("2*pi/3").unwrap(), 2.0 * PI / 3.0);
        assert_eq!(parse_threshold("pi").unwrap(), PI);
        assert_eq!(parse_threshold("0.25").unwrap(), 0.25);
        assert!((parse_threshold("30deg").unwrap() - PI / 6.0).abs() < 1e-15);
        assert!(parse_threshold("pie").is_err());
        assert!(parse_threshold("-1").is_err());
    }

    #[test]
    fn threshold_formatting() {
        assert_eq!(format_threshold(PI / 6.0), "π/6");
        assert_eq!(format_threshold(PI / 18.0), "π/18");
        assert_eq!(format_threshold(PI), "π");
        assert_eq!(format_threshold(0.1), "0.100000");
    }

    #[test]
    fn prediction_parsing() {
        let p = Path::new("p.jsonl");
        let text = "{\"id\":\"a\",\"rotation\":[1,0,0,0,1,0,0,0,1]}\n\n{\"id\":\"b\",\"rotation\":[1,0,0,0,1,0,0,0,1.0000001]}\n";
        let PredictionFile::Rotations(r) = PredictionFile::parse(text, p).unwrap() else { panic!() };
        assert_eq!(r.len(), 2);
        let bad = "{\"id\":\"a\",\"rotation\":[1,0,0,0,1,0,0,0,1]}\n{\"id\":\"b\",\"rotation\":[2,0,0,0,1,0,0,0,1]}\n";
        assert!(matches!(PredictionFile::parse(bad, p), Err(EvalError::Malformed { line: 2, .. })));
        let dup = "{\"id\":\"a\",\"label\":\"x\"}\n{\"id\":\"a\",\"label\":\"y\"}\n";
        assert!(matches!(PredictionFile::parse(dup, p), Err(EvalError::DuplicateId(_))));
        let mixed = "{\"id\":\"a\",\"label\":\"x\"}\n{\"id\":\"b\",\"rotation\":[1,0,0,0,1,0,0,0,1]}\n";
        assert!(matches!(PredictionFile::parse(mixed, p), Err(EvalError::MixedKinds)));
        assert!(matches!(PredictionFile::parse("oops\n", p), Err(EvalError::Malformed { line: 1, .. })));
    }
}
