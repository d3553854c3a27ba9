//! End-to-end generation, evaluation and inspection commands.
//!
//! Generation runs three stages connected by bounded channels:
//! CPU workers (sample, render, edges, prompt) → generation threads (at most
//! `max_in_flight` backend calls) → one writer that persists files, appends the
//! resume journal and finally writes the manifest.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::{
    make_annotation, read_manifest, write_manifest, AnnotationInput, AnnotationRecord, DatasetError, ItemPaths,
    Manifest, MeshRepository, RecordStatus, MANIFEST_FILE,
};
use crate::edges::{canny, EdgeMap};
use crate::eval::{evaluate, EvalError, EvalReport, PredictionFile};
use crate::generation::{
    DiffusionBackend, GenerationClient, GenerationParams, GenerationRequest, HttpDiffusion, MockDiffusion, RgbImage,
};
use crate::geometry::{load_mesh, Mesh, MeshError, Viewpoint};
use crate::imaging::ImageIoError;
use crate::prompt::{
    build_prompt, request_description, DescriptionSource, HttpDescriber, HttpDescriberConfig, MockDescriber,
};
use crate::render::{rasterize, visible_vertices_in, VisibleVertex};
use crate::sampling::{sample_viewpoint, SeededRng};

pub const JOURNAL_FILE: &str = "progress.jsonl";
/// Item seeds stay below 2^53 so they survive any JSON reader as exact integers.
pub const SEED_MASK: u64 = (1 << 53) - 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("failed to load CAD model {path} for class {class:?}: {source}")]
    Mesh {
        class: String,
        path: PathBuf,
        #[source]
        source: MeshError,
    },
    #[error("backend setup failed: {0}")]
    Backend(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Empty(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

/// Seed for one item, a pure function of `(base_seed, class, seq)` so results do
/// not depend on scheduling or on which items a resumed run still has to do.
pub fn item_seed(base_seed: u64, class_name: &str, seq: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    h.update((class_name.len() as u64).to_le_bytes());
    h.update(class_name.as_bytes());
    h.update(seq.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) & SEED_MASK
}

/// Loads every configured model, labeled with its class, id and keywords.
pub fn load_repository(config: &PipelineConfig) -> Result<MeshRepository, PipelineError> {
    let mut repo = MeshRepository::new();
    for class in &config.classes {
        for model in &class.models {
            let mesh = load_mesh(&model.path).map_err(|source| PipelineError::Mesh {
                class: class.name.clone(),
                path: model.path.clone(),
                source,
            })?;
            repo.insert(mesh.with_labels(class.name.clone(), model.keywords.clone()).with_source_id(model.id.clone()));
        }
    }
    Ok(repo)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GenerateOptions {
    /// Discard previous progress instead of resuming.
    pub fresh: bool,
}

#[derive(Debug)]
pub struct GenerateSummary {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub generated: usize,
    pub reused: usize,
    pub failed: usize,
}

impl GenerateSummary {
    /// 0 when every record is ok, 2 for partial failure.
    pub fn exit_code(&self) -> i32 {
        if self.failed == 0 {
            0
        } else {
            2
        }
    }
}

#[derive(Debug, Clone)]
struct Job {
    mesh: Arc<Mesh>,
    seq: u32,
    seed: u64,
}

struct Prepared {
    job: Job,
    viewpoint: Viewpoint,
    keypoints: Vec<VisibleVertex>,
    edge: EdgeMap,
    prompt: String,
}

enum Outcome {
    Generated { prep: Prepared, image: Result<RgbImage, String> },
    RenderFailed { job: Job, viewpoint: Viewpoint, prompt: String, reason: String },
}

fn build_backends(
    config: &PipelineConfig,
) -> Result<(GenerationClient, Option<Box<dyn DescriptionSource>>), PipelineError> {
    let b = &config.backend;
    let diffusion: Box<dyn DiffusionBackend> = if b.mock_diffusion {
        Box::new(MockDiffusion::with_latency(b.mock_latency))
    } else {
        let url = b.diffusion_url.as_deref().ok_or_else(|| PipelineError::Backend("no diffusion endpoint".into()))?;
        Box::new(HttpDiffusion::new(url, b.timeout).map_err(|e| PipelineError::Backend(e.to_string()))?)
    };
    let client = GenerationClient::new(diffusion, b.retry, b.max_in_flight);
    let describer: Option<Box<dyn DescriptionSource>> = if b.mock_llm {
        Some(Box::new(MockDescriber::new()))
    } else if let Some(url) = &b.llm_url {
        let cfg = HttpDescriberConfig {
            base_url: url.clone(),
            instruction_template: b.llm_instruction.clone(),
            max_tokens: b.llm_max_tokens,
            timeout: b.timeout,
            max_in_flight: b.max_in_flight,
        };
        Some(Box::new(HttpDescriber::new(cfg).map_err(|e| PipelineError::Backend(e.to_string()))?))
    } else {
        None
    };
    Ok((client, describer))
}

fn plan_jobs(config: &PipelineConfig, repo: &MeshRepository) -> Vec<Job> {
    let mut jobs = Vec::with_capacity(config.total_items());
    for class in &config.classes {
        let meshes: Vec<Arc<Mesh>> =
            class.models.iter().map(|m| Arc::new(repo.get(&class.name, &m.id).expect("loaded").clone())).collect();
        for seq in 0..config.images_per_class {
            jobs.push(Job {
                mesh: Arc::clone(&meshes[seq as usize % meshes.len()]),
                seq,
                seed: item_seed(config.seed, &class.name, seq),
            });
        }
    }
    jobs
}

/// A previous record is reused only if it is ok, matches the job exactly and its
/// files are still on disk.
fn reusable(r: &AnnotationRecord, job: &Job, config: &PipelineConfig, out: &Path) -> bool {
    let files_exist = |p: &Option<String>| p.as_deref().is_some_and(|p| out.join(p).is_file());
    r.status.is_ok()
        && r.cad_source_id == job.mesh.source_id
        && r.seed == job.seed
        && r.intrinsics == config.intrinsics
        && r.canny == config.canny
        && r.generator_params == config.generation
        && files_exist(&r.image_path)
        && files_exist(&r.edge_map_path)
}

/// Previous records from the final manifest and the journal; malformed journal
/// lines (e.g. a torn last write) are skipped.
fn previous_records(out: &Path) -> Vec<AnnotationRecord> {
    let mut records = Vec::new();
    if out.join(MANIFEST_FILE).is_file() {
        match read_manifest(&out.join(MANIFEST_FILE)) {
            Ok(m) => records.extend(m.records),
            Err(e) => log::warn!("ignoring unreadable previous manifest: {e}"),
        }
    }
    if let Ok(text) = fs::read_to_string(out.join(JOURNAL_FILE)) {
        for (i, line) in text.lines().enumerate() {
            match serde_json::from_str::<AnnotationRecord>(line) {
                Ok(r) => records.push(r),
                Err(e) => log::warn!("skipping journal line {}: {e}", i + 1),
            }
        }
    }
    records
}

/// Early failures come back as finished outcomes for the writer.
#[allow(clippy::result_large_err)]
fn prepare(job: Job, config: &PipelineConfig, describer: Option<&dyn DescriptionSource>) -> Result<Prepared, Outcome> {
    let mesh = Arc::clone(&job.mesh);
    let mut rng = SeededRng::new(job.seed);
    let viewpoint = sample_viewpoint(config.rules.rule_for_class(&mesh.class_name), &mut rng);
    let xi = viewpoint.to_extrinsics();
    let simple_prompt = || {
        build_prompt(&config.prompt_template, &mesh.class_name, &mesh.keywords, None)
            .map(|p| p.rendered)
            .unwrap_or_else(|_| mesh.class_name.clone())
    };
    let raster = match rasterize(&mesh, &config.intrinsics, &xi) {
        Ok(r) => r,
        Err(e) => {
            let prompt = simple_prompt();
            return Err(Outcome::RenderFailed { job, viewpoint, prompt, reason: e.to_string() });
        }
    };
    let keypoints = visible_vertices_in(&raster, &mesh, &config.intrinsics, &xi);
    let edge = match canny(&raster.to_image(), &config.canny) {
        Ok(e) => e,
        Err(e) => {
            let prompt = simple_prompt();
            return Err(Outcome::RenderFailed { job, viewpoint, prompt, reason: e.to_string() });
        }
    };
    let desc = describer.and_then(|d| {
        request_description(d, &config.prompt_template, &mesh.class_name, &mesh.keywords, job.seed)
            .map_err(|e| log::warn!("{}/{}: {e}; continuing without description", mesh.class_name, job.seq))
            .ok()
    });
    let prompt = build_prompt(&config.prompt_template, &mesh.class_name, &mesh.keywords, desc.as_deref())
        .map(|p| p.rendered)
        .unwrap_or_else(|_| simple_prompt());
    Ok(Prepared { job, viewpoint, keypoints, edge, prompt })
}

struct Writer<'a> {
    config: &'a PipelineConfig,
    out: &'a Path,
    journal: BufWriter<File>,
}

impl Writer<'_> {
    fn annotate(
        &self,
        job: &Job,
        viewpoint: Viewpoint,
        keypoints: &[VisibleVertex],
        prompt: &str,
        paths: (Option<String>, Option<String>),
        status: RecordStatus,
    ) -> Result<AnnotationRecord, PipelineError> {
        Ok(make_annotation(&AnnotationInput {
            mesh: &job.mesh,
            seq: job.seq,
            viewpoint,
            claimed_rotation: None,
            intrinsics: self.config.intrinsics,
            keypoints,
            prompt,
            seed: job.seed,
            generator_params: self.config.generation,
            canny: self.config.canny,
            image_path: paths.0,
            edge_map_path: paths.1,
            status,
        })?)
    }

    fn persist(&mut self, outcome: Outcome) -> Result<AnnotationRecord, PipelineError> {
        let record = match outcome {
            Outcome::RenderFailed { job, viewpoint, prompt, reason } => {
                log::warn!("{}/{}/{}: render failed: {reason}", job.mesh.class_name, job.mesh.source_id, job.seq);
                self.annotate(&job, viewpoint, &[], &prompt, (None, None), RecordStatus::Failed("render".into()))?
            }
            Outcome::Generated { prep, image } => {
                let job = &prep.job;
                let paths = ItemPaths::layout(&job.mesh.class_name, &job.mesh.source_id, job.seq);
                prep.edge.save_png(&self.out.join(&paths.edge_map))?;
                let (image_path, status) = match image {
                    Ok(img) => {
                        crate::imaging::save_rgb(&self.out.join(&paths.image), img.width, img.height, &img.pixels)?;
                        (Some(paths.image), RecordStatus::Ok)
                    }
                    Err(category) => (None, RecordStatus::Failed(category)),
                };
                self.annotate(
                    job,
                    prep.viewpoint,
                    &prep.keypoints,
                    &prep.prompt,
                    (image_path, Some(paths.edge_map)),
                    status,
                )?
            }
        };
        self.append(&record)?;
        Ok(record)
    }

    fn append(&mut self, record: &AnnotationRecord) -> Result<(), PipelineError> {
        let path = self.out.join(JOURNAL_FILE);
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.journal, "{line}").map_err(io_err(&path))?;
        self.journal.flush().map_err(io_err(&path))
    }
}

/// Runs generation for every `(class, seq)` item, resuming from earlier progress
/// in the output directory unless `opts.fresh` is set.
pub fn cmd_generate(config: &PipelineConfig, opts: &GenerateOptions) -> Result<GenerateSummary, PipelineError> {
    config.check_backends()?;
    let repo = load_repository(config)?;
    let (client, describer) = build_backends(config)?;
    let out = config.output_dir.as_path();
    fs::create_dir_all(out).map_err(io_err(out))?;
    let journal_path = out.join(JOURNAL_FILE);
    if opts.fresh {
        for p in [journal_path.clone(), out.join(MANIFEST_FILE)] {
            if p.exists() {
                fs::remove_file(&p).map_err(io_err(&p))?;
            }
        }
    }

    let jobs = plan_jobs(config, &repo);
    let previous: BTreeMap<(String, u32), AnnotationRecord> =
        previous_records(out).into_iter().map(|r| ((r.class_name.clone(), r.seq), r)).collect();
    let mut done = Vec::new();
    let mut todo = Vec::new();
    for job in jobs {
        match previous.get(&(job.mesh.class_name.clone(), job.seq)) {
            Some(r) if reusable(r, &job, config, out) => done.push(r.clone()),
            _ => todo.push(job),
        }
    }
    let reused = done.len();
    log::info!("{} items: {} reused, {} to generate", reused + todo.len(), reused, todo.len());

    // Rewrite the journal with only the records being kept, dropping any torn line.
    let tmp = out.join(format!("{JOURNAL_FILE}.tmp"));
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io_err(&tmp))?);
        for r in &done {
            writeln!(w, "{}", serde_json::to_string(r).expect("record serializes")).map_err(io_err(&tmp))?;
        }
        w.into_inner()
            .map_err(|e| PipelineError::Io { path: tmp.clone(), source: e.into_error() })?
            .sync_all()
            .map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, &journal_path).map_err(io_err(&journal_path))?;
    let journal = OpenOptions::new().append(true).open(&journal_path).map_err(io_err(&journal_path))?;
    let mut writer = Writer { config, out, journal: BufWriter::new(journal) };

    let total_todo = todo.len();
    let (job_tx, job_rx) = unbounded::<Job>();
    for job in todo {
        job_tx.send(job).expect("receiver alive");
    }
    drop(job_tx);
    let in_flight = client.max_in_flight();
    let (gen_tx, gen_rx) = bounded::<Prepared>(in_flight * 2);
    let (out_tx, out_rx) = bounded::<Outcome>(in_flight * 2);

    let describer_ref = describer.as_deref();
    let client_ref = &client;
    let generated = std::thread::scope(|s| -> Result<Vec<AnnotationRecord>, PipelineError> {
        for _ in 0..config.workers.max(1) {
            let (job_rx, gen_tx, out_tx) = (job_rx.clone(), gen_tx.clone(), out_tx.clone());
            s.spawn(move || worker_loop(job_rx, gen_tx, out_tx, config, describer_ref));
        }
        for _ in 0..in_flight {
            let (gen_rx, out_tx) = (gen_rx.clone(), out_tx.clone());
            s.spawn(move || generation_loop(gen_rx, out_tx, client_ref, config.generation));
        }
        drop((job_rx, gen_tx, gen_rx, out_tx));
        let mut records = Vec::with_capacity(total_todo);
        for outcome in out_rx.iter() {
            records.push(writer.persist(outcome)?);
            if records.len() % 50 == 0 {
                log::info!("{}/{} items written", records.len(), total_todo);
            }
        }
        Ok(records)
    })?;

    let generated_count = generated.len();
    done.extend(generated);
    let manifest = Manifest::from_records(config.dataset.clone(), done);
    let manifest_path = write_manifest(&manifest, out)?;
    drop(writer);
    fs::remove_file(&journal_path).map_err(io_err(&journal_path))?;
    let failed = manifest.failed_count();
    Ok(GenerateSummary { manifest, manifest_path, generated: generated_count, reused, failed })
}

fn worker_loop(
    jobs: Receiver<Job>,
    gen_tx: Sender<Prepared>,
    out_tx: Sender<Outcome>,
    config: &PipelineConfig,
    describer: Option<&dyn DescriptionSource>,
) {
    for job in jobs.iter() {
        let sent = match prepare(job, config, describer) {
            Ok(prep) => gen_tx.send(prep).is_ok(),
            Err(failed) => out_tx.send(failed).is_ok(),
        };
        if !sent {
            return;
        }
    }
}

fn generation_loop(
    rx: Receiver<Prepared>,
    out_tx: Sender<Outcome>,
    client: &GenerationClient,
    params: GenerationParams,
) {
    for prep in rx.iter() {
        let req =
            GenerationRequest { edge_map: prep.edge.clone(), prompt: prep.prompt.clone(), seed: prep.job.seed, params };
        let image = client.generate(&req).map_err(|f| {
            log::warn!(
                "{}/{}/{}: generation failed after {} attempt(s): {}",
                prep.job.mesh.class_name,
                prep.job.mesh.source_id,
                prep.job.seq,
                f.attempts,
                f.last_error
            );
            f.category.as_str().to_string()
        });
        if out_tx.send(Outcome::Generated { prep, image }).is_err() {
            return;
        }
    }
}

/// Evaluates a prediction file against a manifest.
pub fn cmd_eval(manifest: &Path, predictions: &Path, thresholds: &[f64]) -> Result<EvalReport, PipelineError> {
    let gt = read_manifest(manifest)?;
    let preds = PredictionFile::load(predictions)?;
    Ok(evaluate(&preds, &gt, thresholds)?)
}

/// Checks the configuration and that every CAD model loads.
pub fn cmd_validate_config(config: &PipelineConfig) -> Result<MeshRepository, PipelineError> {
    load_repository(config)
}

/// Writes a grid of `n` sampled (edge map, image) pairs to `out_png`.
pub fn cmd_contact_sheet(
    manifest: &Path,
    out_png: &Path,
    n: usize,
    tile: u32,
) -> Result<crate::sheet::SheetLayout, PipelineError> {
    let m = read_manifest(manifest)?;
    let root = if manifest.is_dir() {
        manifest.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).to_path_buf()
    };
    let picks = crate::sheet::sample_records(&m, n.max(1));
    if picks.is_empty() {
        return Err(PipelineError::Empty("manifest has no ok records".into()));
    }
    let sheet = crate::sheet::build_contact_sheet(&picks, &root, tile)?;
    crate::imaging::save_rgb(out_png, sheet.width(), sheet.height(), sheet.as_raw())?;
    Ok(crate::sheet::SheetLayout::for_items(picks.len(), tile))
}
