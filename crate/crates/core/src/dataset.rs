//! Annotation records and the JSON-lines manifest.
//!
//! `manifest.jsonl` holds one header object followed by one record per line,
//! sorted by `(class_name, seq)`. Floats use the shortest representation that
//! parses back to the identical `f64`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::edges::{canny, CannyParams, EdgeMap, EdgeMapDecodeError};
use crate::generation::{ErrorCategory, GenerationParams};
use crate::geometry::{CameraIntrinsics, Mesh, MeshError, RotationMatrix, Viewpoint};
use crate::imaging::ImageIoError;
use crate::render::{render_sketch, RenderError, VisibleVertex};

pub const SCHEMA_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
/// Maximum allowed disagreement between a claimed and a recomputed rotation.
pub const CONSISTENCY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("manifest schema version {found:?} is not supported (expected {expected:?})")]
    SchemaVersion { found: String, expected: String },
    #[error("manifest header counts {expected} records but {found} are present")]
    CountMismatch { expected: usize, found: usize },
    #[error("duplicate record id {0}")]
    DuplicateId(String),
    #[error("inconsistent annotation: {0}")]
    Consistency(String),
    #[error("no mesh for class {class:?}, model {cad:?}")]
    MissingMesh { class: String, cad: String },
    #[error("record {0} has no usable edge map (status is not ok)")]
    NotOk(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Edge(#[from] crate::edges::EdgeError),
    #[error(transparent)]
    Image(#[from] ImageIoError),
}

impl From<EdgeMapDecodeError> for DatasetError {
    fn from(e: EdgeMapDecodeError) -> Self {
        match e {
            EdgeMapDecodeError::Image(ImageIoError::Missing(p)) => DatasetError::MissingFile(p),
            EdgeMapDecodeError::Image(e) => DatasetError::Image(e),
            EdgeMapDecodeError::Edge(e) => DatasetError::Edge(e),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    if source.kind() == std::io::ErrorKind::NotFound {
        DatasetError::MissingFile(path.to_path_buf())
    } else {
        DatasetError::Io { path: path.to_path_buf(), source }
    }
}

/// `ok`, or `failed:<category>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordStatus {
    Ok,
    Failed(String),
}

impl RecordStatus {
    pub fn failed(category: ErrorCategory) -> Self {
        Self::Failed(category.as_str().to_string())
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, Self::Ok)
    }
}

impl fmt::Display for RecordStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ok => f.write_str("ok"),
            Self::Failed(c) => write!(f, "failed:{c}"),
        }
    }
}

impl Serialize for RecordStatus {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RecordStatus {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "ok" => Ok(Self::Ok),
            other => match other.strip_prefix("failed:") {
                Some(c) if !c.is_empty() => Ok(Self::Failed(c.to_string())),
                _ => Err(serde::de::Error::custom(format!("invalid status {s:?}"))),
            },
        }
    }
}

/// A visible mesh vertex and its pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub vertex: usize,
    pub u: f64,
    pub v: f64,
}

impl From<VisibleVertex> for Keypoint {
    fn from(v: VisibleVertex) -> Self {
        Self { vertex: v.index, u: v.u, v: v.v }
    }
}

/// The ground-truth annotation for one generated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    /// `<class>/<cad_id>/<seq>`; unique within a manifest.
    pub id: String,
    /// Index of the item within its class.
    pub seq: u32,
    pub image_path: Option<String>,
    pub edge_map_path: Option<String>,
    pub class_name: String,
    pub cad_source_id: String,
    pub viewpoint: Viewpoint,
    /// Row-major world-to-camera rotation.
    pub rotation: RotationMatrix,
    pub intrinsics: CameraIntrinsics,
    pub visible_keypoints: Vec<Keypoint>,
    pub prompt: String,
    pub seed: u64,
    pub generator_params: GenerationParams,
    pub canny: CannyParams,
    pub status: RecordStatus,
}

impl AnnotationRecord {
    pub fn key(&self) -> (&str, u32) {
        (&self.class_name, self.seq)
    }
}

pub fn record_id(class_name: &str, cad_id: &str, seq: u32) -> String {
    format!("{class_name}/{cad_id}/{seq}")
}

/// Lowercase ASCII alphanumerics, everything else mapped to `_`.
pub fn slug(s: &str) -> String {
    let out: String = s
        .trim()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c.to_ascii_lowercase() } else { '_' })
        .collect();
    if out.is_empty() {
        "_".into()
    } else {
        out
    }
}

/// Relative paths of one item's outputs, with `/` separators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemPaths {
    pub image: String,
    pub edge_map: String,
}

impl ItemPaths {
    pub fn layout(class_name: &str, cad_id: &str, seq: u32) -> Self {
        let dir = format!("{}/{}", slug(class_name), slug(cad_id));
        Self { image: format!("{dir}/{seq:05}.png"), edge_map: format!("{dir}/{seq:05}.edge.png") }
    }
}

/// Everything needed to build a record. `claimed_rotation`, when present, is
/// checked against the rotation recomputed from the viewpoint.
#[derive(Debug, Clone)]
pub struct AnnotationInput<'a> {
    pub mesh: &'a Mesh,
    pub seq: u32,
    pub viewpoint: Viewpoint,
    pub claimed_rotation: Option<RotationMatrix>,
    pub intrinsics: CameraIntrinsics,
    pub keypoints: &'a [VisibleVertex],
    pub prompt: &'a str,
    pub seed: u64,
    pub generator_params: GenerationParams,
    pub canny: CannyParams,
    pub image_path: Option<String>,
    pub edge_map_path: Option<String>,
    pub status: RecordStatus,
}

pub fn make_annotation(input: &AnnotationInput<'_>) -> Result<AnnotationRecord, DatasetError> {
    let rotation = input.viewpoint.to_extrinsics().rotation;
    if let Some(claimed) = &input.claimed_rotation {
        let diff = claimed.max_abs_diff(&rotation);
        if !(diff <= CONSISTENCY_TOLERANCE) {
            return Err(DatasetError::Consistency(format!(
                "claimed rotation differs from the viewpoint's by {diff:e}"
            )));
        }
    }
    let (w, h) = (input.intrinsics.width() as f64, input.intrinsics.height() as f64);
    for kp in input.keypoints {
        if kp.index >= input.mesh.vertices.len() {
            return Err(DatasetError::Consistency(format!("keypoint vertex {} out of range", kp.index)));
        }
        if !(kp.u >= 0.0 && kp.v >= 0.0 && kp.u < w && kp.v < h) {
            return Err(DatasetError::Consistency(format!("keypoint ({}, {}) outside the frame", kp.u, kp.v)));
        }
    }
    if input.status.is_ok() && (input.image_path.is_none() || input.edge_map_path.is_none()) {
        return Err(DatasetError::Consistency("ok record needs image and edge map paths".into()));
    }
    Ok(AnnotationRecord {
        id: record_id(&input.mesh.class_name, &input.mesh.source_id, input.seq),
        seq: input.seq,
        image_path: input.image_path.clone(),
        edge_map_path: input.edge_map_path.clone(),
        class_name: input.mesh.class_name.clone(),
        cad_source_id: input.mesh.source_id.clone(),
        viewpoint: input.viewpoint,
        rotation,
        intrinsics: input.intrinsics,
        visible_keypoints: input.keypoints.iter().copied().map(Keypoint::from).collect(),
        prompt: input.prompt.to_string(),
        seed: input.seed,
        generator_params: input.generator_params,
        canny: input.canny,
        status: input.status.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: String,
    pub dataset: String,
    pub class_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<AnnotationRecord>,
}

impl Manifest {
    /// Sorts records by `(class_name, seq)` and derives per-class counts.
    pub fn from_records(dataset: impl Into<String>, mut records: Vec<AnnotationRecord>) -> Self {
        records.sort_by(|a, b| a.key().cmp(&b.key()));
        let mut class_counts = BTreeMap::new();
        for r in &records {
            *class_counts.entry(r.class_name.clone()).or_insert(0) += 1;
        }
        Self {
            header: ManifestHeader { schema_version: SCHEMA_VERSION.into(), dataset: dataset.into(), class_counts },
            records,
        }
    }

    pub fn ok_records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.records.iter().filter(|r| r.status.is_ok())
    }

    pub fn failed_count(&self) -> usize {
        self.records.iter().filter(|r| !r.status.is_ok()).count()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, DatasetError> {
        let malformed =
            |line: usize, message: String| DatasetError::Malformed { path: path.to_path_buf(), line, message };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, htext) = lines.next().ok_or_else(|| malformed(1, "empty manifest".into()))?;
        let raw: serde_json::Value = serde_json::from_str(htext).map_err(|e| malformed(hline + 1, e.to_string()))?;
        let found = raw.get("schema_version").and_then(|v| v.as_str()).unwrap_or("").to_string();
        if found != SCHEMA_VERSION {
            return Err(DatasetError::SchemaVersion { found, expected: SCHEMA_VERSION.into() });
        }
        let header: ManifestHeader = serde_json::from_value(raw).map_err(|e| malformed(hline + 1, e.to_string()))?;
        let mut records = Vec::new();
        let mut ids = BTreeSet::new();
        for (i, line) in lines {
            let r: AnnotationRecord = serde_json::from_str(line).map_err(|e| malformed(i + 1, e.to_string()))?;
            if !ids.insert(r.id.clone()) {
                return Err(DatasetError::DuplicateId(r.id));
            }
            records.push(r);
        }
        let expected: usize = header.class_counts.values().sum();
        if expected != records.len() {
            return Err(DatasetError::CountMismatch { expected, found: records.len() });
        }
        Ok(Self { header, records })
    }
}

/// Writes `out_dir/manifest.jsonl` atomically (temp file plus rename).
pub fn write_manifest(manifest: &Manifest, out_dir: &Path) -> Result<PathBuf, DatasetError> {
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let path = out_dir.join(MANIFEST_FILE);
    let tmp = out_dir.join(format!("{MANIFEST_FILE}.tmp"));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(manifest.to_jsonl().as_bytes()).map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Accepts either the manifest file or the directory containing it.
pub fn read_manifest(path: &Path) -> Result<Manifest, DatasetError> {
    let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    Manifest::parse(&text, &path)
}

/// Meshes keyed by `(class_name, cad_source_id)`.
#[derive(Debug, Clone, Default)]
pub struct MeshRepository {
    meshes: BTreeMap<(String, String), Mesh>,
}

impl MeshRepository {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, mesh: Mesh) {
        self.meshes.insert((mesh.class_name.clone(), mesh.source_id.clone()), mesh);
    }

    pub fn get(&self, class_name: &str, cad_id: &str) -> Option<&Mesh> {
        self.meshes.get(&(class_name.to_string(), cad_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.meshes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meshes.is_empty()
    }
}

/// Re-renders the record's view, re-runs edge detection with the stored
/// parameters, and compares with the stored edge map byte for byte.
pub fn verify_roundtrip(record: &AnnotationRecord, repo: &MeshRepository, root: &Path) -> Result<bool, DatasetError> {
    if !record.status.is_ok() {
        return Err(DatasetError::NotOk(record.id.clone()));
    }
    let rel = record.edge_map_path.as_deref().ok_or_else(|| DatasetError::NotOk(record.id.clone()))?;
    let mesh = repo.get(&record.class_name, &record.cad_source_id).ok_or_else(|| DatasetError::MissingMesh {
        class: record.class_name.clone(),
        cad: record.cad_source_id.clone(),
    })?;
    let stored = EdgeMap::load_png(&root.join(rel))?;
    let sketch = match render_sketch(mesh, &record.intrinsics, &record.viewpoint.to_extrinsics()) {
        Ok(img) => img,
        Err(RenderError::EmptyRender) => return Ok(false),
        Err(e) => return Err(e.into()),
    };
    let edges = canny(&sketch, &record.canny)?;
    Ok(edges == stored)
}
