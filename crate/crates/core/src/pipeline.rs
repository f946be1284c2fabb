//! End-to-end operations behind the command-line tool: build a dataset,
//! emit instructions, validate captions, score predictions, and count.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::DynamicImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption::{caption_for, validate_corpus, CaptionError, SynonymPools, ValidationReport};
use crate::composer::{compose_scene, enumerate_grid, ComposeConfig, ComposeError, ProtocolConfig};
use crate::eval::{evaluate, EvalError, EvalReport, Prediction};
use crate::instruct::{emit_task, gen_vqa_freeform, InstructError, InstructionRecord, Task};
use crate::llm::{EndpointConfig, LlmClient, LlmError};
use crate::manifest::{read_jsonl, read_manifest, scene_id, write_jsonl, ManifestRecord};
use crate::render::{bbox_of, render_volume, RenderConfig, RenderError};
use crate::scene::SceneSpec;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error("scene {id}: {source}")]
    Render { id: String, source: RenderError },
    #[error(transparent)]
    Caption(#[from] CaptionError),
    #[error(transparent)]
    Instruct(#[from] InstructError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

impl PipelineError {
    /// 1 for data that fails a check, 2 for bad configuration, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Compose(_) | PipelineError::Llm(LlmError::InvalidConfig(_)) => 2,
            PipelineError::Io { .. } | PipelineError::Eval(EvalError::IoFailure(_)) | PipelineError::Caption(CaptionError::Io(_)) => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderToggles {
    /// Pseudo-colour images; grayscale low-energy transmittance otherwise.
    pub colorize: bool,
    /// Write one PNG mask per threat.
    pub masks: bool,
}

impl Default for RenderToggles {
    fn default() -> Self {
        RenderToggles { colorize: true, masks: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstructConfig {
    pub tasks: Vec<Task>,
    pub seed: u64,
}

impl Default for InstructConfig {
    fn default() -> Self {
        InstructConfig { tasks: Task::ALL.to_vec(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub output_dir: PathBuf,
    pub protocol: ProtocolConfig,
    pub compose: ComposeConfig,
    pub render: RenderToggles,
    /// JSON synonym pools; the built-in pools when absent.
    pub caption_pools: Option<PathBuf>,
    pub caption_seed: u64,
    pub instruct: InstructConfig,
    /// Chat endpoint for free-form VQA; disabled when absent.
    pub vqa_freeform: Option<EndpointConfig>,
    /// Worker threads for the build; 0 uses one per core.
    pub workers: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            output_dir: PathBuf::from("stcray_out"),
            protocol: ProtocolConfig::default(),
            compose: ComposeConfig::default(),
            render: RenderToggles::default(),
            caption_pools: None,
            caption_seed: 0,
            instruct: InstructConfig::default(),
            vqa_freeform: None,
            workers: 0,
        }
    }
}

impl BuildConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let [w, h] = self.protocol.image_size;
        if w < 64 || h < 64 {
            return Err(PipelineError::Config(format!("image_size {w}x{h}: each side must be at least 64")));
        }
        self.protocol.validate()?;
        if let Some(e) = &self.vqa_freeform {
            e.validate()?;
        }
        Ok(())
    }

    pub fn pools(&self) -> Result<SynonymPools, PipelineError> {
        let pools = match &self.caption_pools {
            Some(p) => SynonymPools::load(p)?,
            None => SynonymPools::default(),
        };
        pools.validate()?;
        Ok(pools)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub scenes: usize,
    /// Scenes reused from an interrupted earlier run.
    pub resumed: usize,
    pub manifest: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn save_png(img: DynamicImage, path: &Path) -> Result<(), PipelineError> {
    let mut bytes = Vec::new();
    img.write_to(&mut io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| PipelineError::Io { path: path.to_path_buf(), source: io::Error::other(e) })?;
    write_atomic(path, &bytes)
}

/// Compose, render and caption one scene, writing its image and masks.
fn build_scene(
    index: usize,
    spec: &SceneSpec,
    cfg: &BuildConfig,
    pools: &SynonymPools,
    root: &Path,
) -> Result<ManifestRecord, PipelineError> {
    let id = scene_id(index as u64);
    let scene = compose_scene(spec, &cfg.compose)?;
    let size = (spec.image_size[0] as usize, spec.image_size[1] as usize);
    let render_cfg = RenderConfig { mask_eps: cfg.compose.mask_eps, ..RenderConfig::default() };
    let scan = render_volume(&scene.volume, size, &render_cfg);

    let image_path = format!("images/{id}.png");
    let img = if cfg.render.colorize {
        DynamicImage::ImageRgb8(scan.rgb)
    } else {
        DynamicImage::ImageLuma8(scan.low.to_gray8())
    };
    save_png(img, &root.join(&image_path))?;

    let mut mask_paths = Vec::new();
    let mut boxes_px = Vec::new();
    for (k, mask) in scene.threat_masks.iter().enumerate() {
        let b = bbox_of(mask).map_err(|source| PipelineError::Render { id: id.clone(), source })?;
        boxes_px.push(b.to_array());
        if cfg.render.masks {
            let p = format!("masks/{id}_{k}.png");
            save_png(DynamicImage::ImageLuma8(mask.to_gray8()), &root.join(&p))?;
            mask_paths.push(p);
        }
    }
    let caption = caption_for(&scene.metadata, pools, cfg.caption_seed, index as u64);
    Ok(ManifestRecord {
        id,
        index: index as u64,
        spec: spec.clone(),
        metadata: scene.metadata,
        image_path,
        mask_paths,
        boxes_px,
        caption: caption.text,
        caption_spans: caption.spans,
    })
}

/// A finished scene from an earlier run, if its record matches `spec` and
/// its files are present.
fn resume_scene(root: &Path, index: usize, spec: &SceneSpec, cfg: &BuildConfig) -> Option<ManifestRecord> {
    let path = root.join("records").join(format!("{}.json", scene_id(index as u64)));
    let rec: ManifestRecord = serde_json::from_slice(&fs::read(path).ok()?).ok()?;
    let files_ok = root.join(&rec.image_path).is_file() && rec.mask_paths.iter().all(|p| root.join(p).is_file());
    let masks_ok = rec.mask_paths.len() == if cfg.render.masks { rec.boxes_px.len() } else { 0 };
    (rec.spec == *spec && rec.index == index as u64 && files_ok && masks_ok).then_some(rec)
}

/// Build the dataset described by `cfg`.
///
/// Scenes run on a bounded pool of `cfg.workers` threads. Each scene's record
/// is committed to `records/` after its image and masks, so an interrupted
/// build resumes at the first unfinished cell. The manifest is written last,
/// in cell order, and does not depend on the worker count.
pub fn build(cfg: &BuildConfig, progress: &(dyn Fn(usize, usize) + Sync)) -> Result<BuildSummary, PipelineError> {
    cfg.validate()?;
    let root = &cfg.output_dir;
    for sub in ["images", "masks", "records"] {
        let d = root.join(sub);
        fs::create_dir_all(&d).map_err(|e| PipelineError::Config(format!("output_dir {}: {e}", d.display())))?;
    }
    let pools = cfg.pools()?;
    let specs = enumerate_grid(&cfg.protocol)?;
    let total = specs.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let resumed = std::sync::atomic::AtomicUsize::new(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
    let records: Vec<ManifestRecord> = pool.install(|| {
        specs
            .par_iter()
            .enumerate()
            .map(|(i, spec)| {
                let rec = match resume_scene(root, i, spec, cfg) {
                    Some(r) => {
                        resumed.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        r
                    }
                    None => {
                        let r = build_scene(i, spec, cfg, &pools, root)?;
                        let path = root.join("records").join(format!("{}.json", r.id));
                        let json = serde_json::to_vec(&r).expect("record serializes");
                        write_atomic(&path, &json)?;
                        r
                    }
                };
                let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                progress(n, total);
                Ok(rec)
            })
            .collect::<Result<Vec<_>, PipelineError>>()
    })?;
    let manifest = root.join("manifest.jsonl");
    write_jsonl(&manifest, &records).map_err(io_err(&manifest))?;
    Ok(BuildSummary {
        scenes: records.len(),
        resumed: resumed.into_inner(),
        manifest,
    })
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRecord>, PipelineError> {
    read_manifest(path).map_err(io_err(path))
}

pub fn instruction_path(dir: &Path, task: Task) -> PathBuf {
    dir.join(format!("instructions_{}.jsonl", task.name()))
}

/// Write `instructions_{task}.jsonl` for each task; returns lines per task.
pub fn instruct(
    records: &[ManifestRecord],
    tasks: &[Task],
    seed: u64,
    out_dir: &Path,
) -> Result<BTreeMap<Task, usize>, PipelineError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut counts = BTreeMap::new();
    for &task in tasks {
        let recs = emit_task(records, task, seed)?;
        let path = instruction_path(out_dir, task);
        write_jsonl(&path, &recs).map_err(io_err(&path))?;
        counts.insert(task, recs.len());
    }
    Ok(counts)
}

/// Free-form conversations from a chat endpoint, one per threat scene.
pub fn instruct_freeform(
    records: &[ManifestRecord],
    endpoint: &EndpointConfig,
    out_dir: &Path,
) -> Result<usize, PipelineError> {
    let client = LlmClient::new(endpoint.clone())?;
    let mut out = Vec::new();
    for r in records.iter().filter(|r| !r.metadata.is_nonthreat()) {
        let turns = gen_vqa_freeform(&r.caption, &client)?;
        out.push(InstructionRecord {
            id: format!("{}_chat", r.id),
            image: r.image_path.clone(),
            task: Task::Vqa,
            conversations: turns,
            answer_key: None,
        });
    }
    let path = out_dir.join("instructions_vqa_freeform.jsonl");
    write_jsonl(&path, &out).map_err(io_err(&path))?;
    Ok(out.len())
}

pub fn validate(
    records: &[ManifestRecord],
    pools: &SynonymPools,
    pool_seed: u64,
    threshold: f64,
) -> ValidationReport {
    validate_corpus(records, pools, pool_seed, threshold)
}

/// Load ground-truth instruction records for `tasks` from `dir`, skipping
/// tasks whose file is absent.
pub fn load_instructions(dir: &Path, tasks: &[Task]) -> Result<Vec<InstructionRecord>, PipelineError> {
    let mut out = Vec::new();
    for &t in tasks {
        let path = instruction_path(dir, t);
        if path.is_file() {
            out.extend(read_jsonl::<InstructionRecord>(&path).map_err(io_err(&path))?);
        }
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, PipelineError> {
    read_jsonl(path).map_err(io_err(path))
}

/// Score predictions and write `report.json` and `report.md` to `out_dir`.
pub fn eval(gt: &[InstructionRecord], preds: &[Prediction], out_dir: &Path) -> Result<EvalReport, PipelineError> {
    let report = evaluate(gt, preds)?;
    report.emit(out_dir)?;
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub images: usize,
    pub nonthreat_images: usize,
    pub single_threat_images: usize,
    pub multi_threat_images: usize,
    pub threat_instances: usize,
    /// Instances per category id.
    pub per_category: BTreeMap<String, usize>,
}

pub fn stats(records: &[ManifestRecord]) -> DatasetStats {
    let mut s = DatasetStats { images: records.len(), ..Default::default() };
    for r in records {
        match r.metadata.threats.len() {
            0 => s.nonthreat_images += 1,
            1 => s.single_threat_images += 1,
            _ => s.multi_threat_images += 1,
        }
        for t in &r.metadata.threats {
            s.threat_instances += 1;
            *s.per_category.entry(t.category.id().to_string()).or_default() += 1;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{LocationLabel, OrientationLabel, ThreatCategory};

    fn tiny(dir: &Path) -> BuildConfig {
        let mut cfg = BuildConfig { output_dir: dir.to_path_buf(), ..Default::default() };
        cfg.protocol.categories = vec![ThreatCategory::Pliers];
        cfg.protocol.locations = vec![LocationLabel::Center];
        cfg.protocol.poses = vec![OrientationLabel::Horizontal];
        cfg.protocol.clutter_levels = vec![crate::scene::ClutterLevel::Limited];
        cfg.protocol.sublevels = vec![1, 2];
        cfg.protocol.baggage_types = vec![crate::scene::BaggageType::Suitcase];
        cfg.protocol.nonthreat_fraction = 0.0;
        cfg.protocol.image_size = [64, 64];
        cfg.protocol.volume_depth = 16;
        cfg
    }

    #[test]
    fn tiny_build_writes_files_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let s = build(&cfg, &|_, _| {}).unwrap();
        assert_eq!((s.scenes, s.resumed), (2, 0));
        let recs = load_manifest(&s.manifest).unwrap();
        assert_eq!(recs.len(), 2);
        for r in &recs {
            assert!(dir.path().join(&r.image_path).is_file());
            assert_eq!(r.mask_paths.len(), 1);
            assert_eq!(r.boxes_px.len(), 1);
        }
        let first = fs::read(&s.manifest).unwrap();
        fs::remove_file(dir.path().join("records/stcray_000001.json")).unwrap();
        let again = build(&cfg, &|_, _| {}).unwrap();
        assert_eq!(again.resumed, 1);
        assert_eq!(fs::read(&again.manifest).unwrap(), first);
    }

    #[test]
    fn small_images_are_rejected() {
        let mut cfg = tiny(Path::new("unused"));
        cfg.protocol.image_size = [32, 64];
        assert_eq!(build(&cfg, &|_, _| {}).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn stats_counts() {
        assert_eq!(stats(&[]), DatasetStats::default());
        let dir = tempfile::tempdir().unwrap();
        let s = build(&tiny(dir.path()), &|_, _| {}).unwrap();
        let st = stats(&load_manifest(&s.manifest).unwrap());
        assert_eq!((st.images, st.single_threat_images, st.multi_threat_images), (2, 2, 0));
        assert_eq!(st.per_category.values().sum::<usize>(), st.threat_instances);
    }
}
