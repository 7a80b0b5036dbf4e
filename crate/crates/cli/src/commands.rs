//! One function per subcommand. Each returns the run report it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use facerep_core::data::{
    curate_manifest, curate_sharded, fewshot_subset, load_task_samples, mix_face_ratio, read_manifest, read_ndjson,
    write_manifest, write_ndjson, write_rejects, CurateConfig, DatasetSplit, ManifestDetector, ManifestReader,
    ManifestRecord, TaskRecord, TaskSample, resize_labels,
};
use facerep_core::encoders::{EncoderConfig, VisionConfig};
use facerep_core::geometry::{resize_image, MeanFace, Point};
use facerep_core::heads::{cosine_to_zero, HeadTrainer, Prediction, TaskSpec, TaskTargets, TrainMode};
use facerep_core::image::{ImageTensor, LabelMap};
use facerep_core::interpret::gradcam;
use facerep_core::metrics::MetricReport;
use facerep_core::params::{file_hash, read_checkpoint_metadata, ParamStore};
use facerep_core::pretraining::{
    epoch_order, steps_per_epoch, BatchLoader, CropMode, DualEncoder, LoaderPlan, LossLog, Pretrainer, BACKBONE_PREFIX,
};
use facerep_core::{Error, Result};
use serde::Serialize;

use crate::config::{HeadSection, RunConfig};
use crate::report::RunReport;

pub const CHECKPOINT: &str = "checkpoint.safetensors";
pub const HEAD_CHECKPOINT: &str = "head.safetensors";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const HEAD_LOG: &str = "head_log.jsonl";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const METRICS: &str = "metrics.json";
pub const REPORT: &str = "run_report.json";

/// A validated config plus the directory its relative paths start from.
pub struct Context {
    pub cfg: RunConfig,
    pub base: PathBuf,
}

impl Context {
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn report(&self, command: &str) -> RunReport {
        RunReport::new(command, &self.cfg)
    }

    fn finish(&self, mut report: RunReport, started: Instant, dir: &Path) -> Result<RunReport> {
        if !self.cfg.deterministic {
            report.wall_clock_secs = Some(started.elapsed().as_secs_f64());
        }
        report.save(&dir.join(REPORT))?;
        Ok(report)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn parent_of(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn curate(ctx: &Context) -> Result<RunReport> {
    let started = Instant::now();
    let sec = ctx.cfg.curate()?;
    let input = ctx.path(&sec.input);
    let output = ctx.path(&sec.output);
    let rejects = sec.rejects.as_ref().map(|r| ctx.path(r)).unwrap_or_else(|| sibling(&output, ".rejects.jsonl"));
    require(&input)?;
    let cc = CurateConfig { threshold: sec.threshold, target_size: sec.target_size, seed: ctx.cfg.seed };
    let outcome = if sec.shards <= 1 {
        curate_manifest(ManifestReader::open(&input)?, &cc, &ManifestDetector)?
    } else {
        let k = sec.shards;
        let shards = (0..k)
            .map(|s| Ok(ManifestReader::open(&input)?.enumerate().filter(move |(i, _)| i % k == s).map(|(_, r)| r)))
            .collect::<Result<Vec<_>>>()?;
        curate_sharded(shards, &cc, &ManifestDetector)?
    };
    if let Some(dir) = output.parent() {
        create_dir(dir)?;
    }
    let records = rebased(outcome.records, &parent_of(&input), &parent_of(&output))?;
    write_manifest(&output, Some(&outcome.header), &records)?;
    write_rejects(&rejects, &outcome.rejects)?;
    tracing::info!(
        kept = records.len(),
        seen = outcome.header.seen,
        rejected = outcome.rejects.len(),
        "curated {}",
        output.display()
    );
    let mut report = ctx.report("curate");
    report.notes = outcome.warnings.clone();
    report.add_artifact("manifest", &output)?;
    report.add_artifact("rejects", &rejects)?;
    report.summary.insert("records".into(), records.len() as f64);
    report.summary.insert("rejected".into(), outcome.rejects.len() as f64);
    report.summary.insert("peak_held".into(), outcome.peak_held as f64);
    ctx.finish(report, started, &parent_of(&output))
}

/// Re-expresses relative image references, written against `from`, so they
/// resolve from `to`.
fn rebased(mut records: Vec<ManifestRecord>, from: &Path, to: &Path) -> Result<Vec<ManifestRecord>> {
    let abs = |p: &Path| std::path::absolute(p).map_err(|e| Error::io(p, e));
    let (from, to) = (abs(from)?, abs(to)?);
    if from == to {
        return Ok(records);
    }
    for r in &mut records {
        if Path::new(&r.image_ref).is_absolute() {
            continue;
        }
        let target = from.join(&r.image_ref);
        if let Some(rel) = pathdiff::diff_paths(&target, &to) {
            r.image_ref = rel.to_string_lossy().into_owned();
        }
    }
    Ok(records)
}

/// Rewrites image references so they resolve from the working directory.
fn anchored(records: Vec<ManifestRecord>, manifest: &Path) -> Vec<ManifestRecord> {
    let base = parent_of(manifest);
    records
        .into_iter()
        .map(|mut r| {
            r.image_ref = TaskRecord::resolve(&base, &r.image_ref).to_string_lossy().into_owned();
            r
        })
        .collect()
}

pub fn pretrain(ctx: &Context) -> Result<RunReport> {
    let started = Instant::now();
    let sec = ctx.cfg.pretrain()?;
    let enc = ctx.cfg.model.encoder();
    let manifest = ctx.path(&sec.manifest);
    require(&manifest)?;
    let (_, faces) = read_manifest(&manifest)?;
    let mut records = anchored(faces, &manifest);
    if let Some(ratio) = sec.face_ratio {
        let nonface = match &sec.nonface_manifest {
            Some(p) => {
                let p = ctx.path(p);
                require(&p)?;
                anchored(read_manifest(&p)?.1, &p)
            }
            None => Vec::new(),
        };
        let size = sec.mix_size.unwrap_or(records.len());
        records = mix_face_ratio(&records, &nonface, ratio, size, ctx.cfg.seed)?;
    }
    if records.is_empty() {
        return Err(Error::input(format!("{} has no records to train on", manifest.display())));
    }
    let training = &sec.training;
    let mode = if training.toggles.align {
        if let Some(r) = records.iter().find(|r| r.face_count == 0) {
            return Err(Error::config(format!("ALIGN needs faces but {} has none", r.image_ref)));
        }
        let template = match &sec.template {
            Some(p) => MeanFace::load(&ctx.path(p))?,
            None => MeanFace::default(),
        };
        CropMode::Align(template)
    } else {
        CropMode::Random { min_frac: sec.random_crop_min }
    };
    let batch = training.schedule.batch_size.min(records.len());
    let per_epoch = steps_per_epoch(records.len(), batch);
    let steps = sec.steps.unwrap_or_else(|| training.schedule.total_steps(per_epoch));
    let mut trainer = Pretrainer::new(&enc, training.clone(), ctx.cfg.seed, per_epoch)?;
    let out = ctx.path(&sec.output_dir);
    create_dir(&out)?;
    let mut log = LossLog::create(&out.join(TRAIN_LOG))?;
    let plan = LoaderPlan {
        batch_size: batch,
        image_size: enc.image.image_size,
        steps,
        seed: ctx.cfg.seed,
        prefetch: if ctx.cfg.deterministic { 1 } else { sec.prefetch.max(1) },
    };
    tracing::info!(records = records.len(), steps, toggles = %training.toggles, "pre-training");
    let loader = BatchLoader::spawn(Arc::new(records), PathBuf::new(), mode, plan)?;
    let (mut first, mut last) = (None, None);
    for b in loader {
        let rec = trainer.step(&b?)?;
        log.append(&rec)?;
        first.get_or_insert(rec.total);
        last = Some(rec.total);
        if rec.step % 10 == 0 {
            tracing::info!(step = rec.step, loss = rec.total, lr = rec.lr, "step");
        }
    }
    if trainer.steps_taken() != steps {
        return Err(Error::input(format!("loader produced {} of {steps} batches", trainer.steps_taken())));
    }
    let mut meta = BTreeMap::new();
    meta.insert("encoder".to_string(), serde_json::to_string(&enc)?);
    meta.insert("toggles".to_string(), training.toggles.to_string());
    meta.insert("seed".to_string(), ctx.cfg.seed.to_string());
    meta.insert("steps".to_string(), steps.to_string());
    let ckpt = out.join(CHECKPOINT);
    trainer.store.save(&ckpt, &meta)?;
    // hash the weights as stored, so later runs that load them agree
    trainer.store.load(&ckpt)?;
    let mut report = ctx.report("pretrain");
    report.variant = Some(training.toggles.to_string());
    report.checkpoint_hash = Some(file_hash(&ckpt)?);
    report.backbone_hash = Some(trainer.store.content_hash(BACKBONE_PREFIX)?);
    report.add_artifact("checkpoint", &ckpt)?;
    report.add_artifact("log", &out.join(TRAIN_LOG))?;
    report.summary.insert("steps".into(), steps as f64);
    if let (Some(f), Some(l)) = (first, last) {
        report.summary.insert("first_loss".into(), f);
        report.summary.insert("last_loss".into(), l);
    }
    ctx.finish(report, started, &out)
}

/// Encoder settings stored in a checkpoint, when present.
fn checkpoint_encoder(path: &Path) -> Result<(Option<EncoderConfig>, BTreeMap<String, String>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let meta = read_checkpoint_metadata(&bytes)?;
    let enc = match meta.get("encoder") {
        Some(s) => Some(serde_json::from_str(s)?),
        None => None,
    };
    Ok((enc, meta))
}

enum Targets {
    Parsing(Vec<LabelMap>),
    Alignment(Vec<Vec<Point>>),
    Attributes(Vec<Vec<bool>>),
}

fn targets(task: &TaskSpec, samples: &[TaskSample]) -> Result<Targets> {
    let missing = |s: &TaskSample, what: &str| Error::input(format!("sample {} lacks {what}", s.id));
    Ok(match task {
        TaskSpec::Parsing { classes } => Targets::Parsing(
            samples
                .iter()
                .map(|s| {
                    let l = s.labels.clone().ok_or_else(|| missing(s, "a label map"))?;
                    if l.labels().iter().any(|&v| v as usize >= *classes) {
                        return Err(Error::input(format!("sample {} has labels outside {classes} classes", s.id)));
                    }
                    Ok(l)
                })
                .collect::<Result<_>>()?,
        ),
        TaskSpec::Alignment { landmarks, .. } => Targets::Alignment(
            samples
                .iter()
                .map(|s| {
                    let p = s.landmarks.clone().ok_or_else(|| missing(s, "landmarks"))?;
                    if p.len() != *landmarks {
                        return Err(Error::input(format!("sample {} has {} landmarks, expected {landmarks}", s.id, p.len())));
                    }
                    Ok(p)
                })
                .collect::<Result<_>>()?,
        ),
        TaskSpec::Attributes { count } => Targets::Attributes(
            samples
                .iter()
                .map(|s| {
                    let a = s.attributes.clone().ok_or_else(|| missing(s, "attributes"))?;
                    if a.len() != *count {
                        return Err(Error::input(format!("sample {} has {} attributes, expected {count}", s.id, a.len())));
                    }
                    Ok(a)
                })
                .collect::<Result<_>>()?,
        ),
    })
}

fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

#[derive(Serialize)]
struct HeadLogLine {
    step: usize,
    epoch: usize,
    lr: f64,
    loss: f64,
}

fn train_head(trainer: &mut HeadTrainer, sec: &HeadSection, samples: &[TaskSample], seed: u64, log: &Path) -> Result<usize> {
    let t = targets(&sec.task, samples)?;
    let n = samples.len();
    let b = sec.training.batch_size.min(n);
    let per_epoch = n.div_ceil(b);
    let total = per_epoch * sec.training.epochs;
    trainer.set_total_steps(total);
    let images: Vec<ImageTensor> = samples.iter().map(|s| s.image.clone()).collect();
    let mut lines = Vec::with_capacity(total);
    let mut step = 0;
    for epoch in 0..sec.training.epochs {
        let order = epoch_order(n, seed, epoch as u64);
        for idx in order.chunks(b) {
            let ims = pick(&images, idx);
            let lr = cosine_to_zero(step, total, trainer.peak_lr());
            let loss = match &t {
                Targets::Parsing(v) => trainer.step(&ims, TaskTargets::Parsing(&pick(v, idx)))?,
                Targets::Alignment(v) => trainer.step(&ims, TaskTargets::Alignment(&pick(v, idx)))?,
                Targets::Attributes(v) => trainer.step(&ims, TaskTargets::Attributes(&pick(v, idx)))?,
            };
            lines.push(HeadLogLine { step, epoch, lr, loss });
            step += 1;
        }
        tracing::info!(epoch, loss = lines.last().map(|l| l.loss), "head epoch");
    }
    write_ndjson(log, &lines)?;
    Ok(step)
}

/// Predicts every sample and writes prediction records in the source frame.
fn predict_split(trainer: &HeadTrainer, samples: &[TaskSample], batch: usize, out: &Path) -> Result<Vec<TaskRecord>> {
    let size = trainer.image_size();
    let mut records = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let ims: Vec<ImageTensor> = chunk.iter().map(|s| s.image.clone()).collect();
        match trainer.predict(&ims)? {
            Prediction::Parsing(maps) => {
                let dir = out.join("predictions");
                create_dir(&dir)?;
                for (s, m) in chunk.iter().zip(maps) {
                    let name = format!("predictions/{}.png", s.id);
                    resize_labels(&m, s.source_size)?.save(&out.join(&name))?;
                    let mut r = TaskRecord::new(s.id.clone());
                    r.labels = Some(name);
                    records.push(r);
                }
            }
            Prediction::Alignment(pts) => {
                for (s, p) in chunk.iter().zip(pts) {
                    let model_frame: Vec<Point> = p.iter().map(|d| d.point).collect();
                    let mut r = TaskRecord::new(s.id.clone());
                    r.landmarks = Some(facerep_core::data::task::flatten_points(&s.to_source(&model_frame, size)));
                    records.push(r);
                }
            }
            Prediction::Attributes(bits) => {
                for (s, a) in chunk.iter().zip(bits) {
                    let mut r = TaskRecord::new(s.id.clone());
                    r.attributes = Some(a.into_iter().map(u8::from).collect());
                    records.push(r);
                }
            }
        }
    }
    Ok(records)
}

fn write_metrics(metrics: &MetricReport, dir: &Path) -> Result<()> {
    metrics.save(&dir.join(METRICS))?;
    let txt = dir.join("metrics.txt");
    std::fs::write(&txt, metrics.table()).map_err(|e| Error::io(&txt, e))
}

/// Probing (frozen backbone) or fine-tuning of one downstream head.
pub fn head(ctx: &Context, mode: TrainMode) -> Result<RunReport> {
    let started = Instant::now();
    let sec = ctx.cfg.head()?;
    let backbone = ctx.path(&sec.backbone);
    require(&backbone)?;
    let (stored, meta) = checkpoint_encoder(&backbone)?;
    let vision: VisionConfig = ctx.cfg.model.encoder().image;
    if let Some(enc) = stored {
        if enc.image != vision {
            return Err(Error::config(format!("{} was trained with a different image encoder", backbone.display())));
        }
    }
    let mut trainer = HeadTrainer::new(&vision, sec.task.clone(), sec.training.clone(), mode, ctx.cfg.seed)?;
    trainer.load_backbone(&backbone)?;
    if let Some(r) = sec.resolution.filter(|&r| r != vision.image_size) {
        if mode == TrainMode::Probe {
            return Err(Error::config("probing keeps the pre-training resolution; use finetune for other sizes"));
        }
        trainer.regrid(r)?;
    }
    let before = trainer.backbone_hash()?;
    let out = ctx.path(&sec.output_dir);
    create_dir(&out)?;
    let samples = load_task_samples(&ctx.path(&sec.train), trainer.image_size())?;
    tracing::info!(task = sec.task.name(), samples = samples.len(), ?mode, "training head");
    let steps = train_head(&mut trainer, sec, &samples, ctx.cfg.seed, &out.join(HEAD_LOG))?;
    let after = trainer.backbone_hash()?;
    let mut ckpt_meta = BTreeMap::new();
    ckpt_meta.insert("task".to_string(), serde_json::to_string(&sec.task)?);
    ckpt_meta.insert("mode".to_string(), serde_json::to_string(&mode)?);
    ckpt_meta.insert("backbone_hash".to_string(), after.clone());
    ckpt_meta.insert("image_size".to_string(), trainer.image_size().to_string());
    let ckpt = out.join(HEAD_CHECKPOINT);
    trainer.save(&ckpt, &ckpt_meta)?;

    let command = match mode {
        TrainMode::Probe => "probe",
        TrainMode::Finetune => "finetune",
    };
    let mut report = ctx.report(command);
    report.variant = meta.get("toggles").cloned();
    report.backbone_hash_before = Some(before);
    report.backbone_hash = Some(after);
    report.checkpoint_hash = Some(file_hash(&ckpt)?);
    report.add_artifact("checkpoint", &ckpt)?;
    report.add_artifact("log", &out.join(HEAD_LOG))?;
    report.summary.insert("steps".into(), steps as f64);
    if let Some(test) = &sec.test {
        let test = ctx.path(test);
        let test_samples = load_task_samples(&test, trainer.image_size())?;
        let preds = predict_split(&trainer, &test_samples, sec.training.batch_size, &out)?;
        write_ndjson(&out.join(PREDICTIONS), &preds)?;
        let gts: Vec<TaskRecord> = read_ndjson(&test)?;
        let metrics = crate::evaluate::evaluate(&sec.task, &preds, &out, &gts, &parent_of(&test), &sec.eval)?;
        write_metrics(&metrics, &out)?;
        println!("{}", metrics.table());
        report.add_artifact("predictions", &out.join(PREDICTIONS))?;
        report.metrics = Some(metrics);
    }
    ctx.finish(report, started, &out)
}

pub fn eval(ctx: &Context) -> Result<RunReport> {
    let started = Instant::now();
    let sec = ctx.cfg.eval()?;
    let preds_path = ctx.path(&sec.predictions);
    let gt_path = ctx.path(&sec.ground_truth);
    require(&preds_path)?;
    require(&gt_path)?;
    let preds: Vec<TaskRecord> = read_ndjson(&preds_path)?;
    let gts: Vec<TaskRecord> = read_ndjson(&gt_path)?;
    let metrics =
        crate::evaluate::evaluate(&sec.task, &preds, &parent_of(&preds_path), &gts, &parent_of(&gt_path), &sec.metrics)?;
    let out = ctx.path(&sec.output_dir);
    create_dir(&out)?;
    write_metrics(&metrics, &out)?;
    println!("{}", metrics.table());
    let mut report = ctx.report("eval");
    report.add_artifact("metrics", &out.join(METRICS))?;
    report.metrics = Some(metrics);
    ctx.finish(report, started, &out)
}

#[derive(Serialize)]
struct SplitInfo<'a> {
    parent: &'a str,
    parent_count: usize,
    count: usize,
    seed: Option<u64>,
    fraction: f64,
}

pub fn fewshot(ctx: &Context) -> Result<RunReport> {
    let started = Instant::now();
    let sec = ctx.cfg.fewshot()?;
    let input = ctx.path(&sec.input);
    let output = ctx.path(&sec.output);
    require(&input)?;
    let text = std::fs::read_to_string(&input).map_err(|e| Error::io(&input, e))?;
    let lines: Vec<String> =
        text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).map(str::to_string).collect();
    let subset = fewshot_subset(&DatasetSplit::full(lines), sec.fraction, ctx.cfg.seed)?;
    if let Some(dir) = output.parent() {
        create_dir(dir)?;
    }
    let mut body = subset.records.join("\n");
    body.push('\n');
    std::fs::write(&output, body).map_err(|e| Error::io(&output, e))?;
    let info_path = sibling(&output, ".split.json");
    let info = SplitInfo {
        parent: &sec.input.to_string_lossy(),
        parent_count: text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).count(),
        count: subset.len(),
        seed: subset.seed,
        fraction: subset.fraction,
    };
    std::fs::write(&info_path, serde_json::to_string_pretty(&info)?).map_err(|e| Error::io(&info_path, e))?;
    let mut report = ctx.report("fewshot");
    if parent_of(&input) != parent_of(&output) {
        report.notes.push("subset written to another directory; relative paths in its records still point at the parent's".into());
    }
    report.add_artifact("subset", &output)?;
    report.summary.insert("records".into(), subset.len() as f64);
    ctx.finish(report, started, &parent_of(&output))
}

#[derive(Serialize)]
struct CamEntry {
    image: String,
    query: String,
    score: f64,
    degenerate: bool,
    overlay: String,
    grid: String,
}

pub fn gradcam_cmd(ctx: &Context) -> Result<RunReport> {
    let started = Instant::now();
    let sec = ctx.cfg.gradcam()?;
    let ckpt = ctx.path(&sec.checkpoint);
    require(&ckpt)?;
    let (stored, _) = checkpoint_encoder(&ckpt)?;
    let enc = stored.unwrap_or_else(|| ctx.cfg.model.encoder());
    let mut store = ParamStore::new(facerep_core::DType::F64, ctx.cfg.seed);
    let model = DualEncoder::new(&mut store, &enc)?;
    for prefix in ["image.", "text.", "image_proj.", "text_proj.", "log_sigma"] {
        store.load_prefixed(&ckpt, prefix)?;
    }
    let out = ctx.path(&sec.output_dir);
    create_dir(&out)?;
    let mut entries = Vec::new();
    for (i, p) in sec.images.iter().enumerate() {
        let path = ctx.path(p);
        let mut image = ImageTensor::load(&path)?;
        if image.width() != enc.image.image_size || image.height() != enc.image.image_size {
            image = resize_image(&image, enc.image.image_size)?;
        }
        for (j, q) in sec.queries.iter().enumerate() {
            let cam = gradcam(&model, &image, q)?;
            let stem = format!("img{i}_q{j}");
            cam.save(&image, &out, &stem)?;
            if cam.map.is_degenerate() {
                tracing::warn!(image = %path.display(), query = q.as_str(), "saliency map is constant");
            }
            entries.push(CamEntry {
                image: p.to_string_lossy().into_owned(),
                query: q.clone(),
                score: cam.score,
                degenerate: cam.map.is_degenerate(),
                overlay: format!("{stem}.png"),
                grid: format!("{stem}.txt"),
            });
        }
    }
    let index = out.join("gradcam.json");
    std::fs::write(&index, serde_json::to_string_pretty(&entries)?).map_err(|e| Error::io(&index, e))?;
    let mut report = ctx.report("gradcam");
    report.add_artifact("index", &index)?;
    report.summary.insert("maps".into(), entries.len() as f64);
    ctx.finish(report, started, &out)
}

/// Builds the comparison table over labelled groups of run reports.
pub fn report(ctx: &Context) -> Result<String> {
    let sec = ctx.cfg.report()?;
    let mut rows: Vec<(String, Option<f64>, Option<(String, f64)>, Option<f64>)> = Vec::new();
    for row in &sec.rows {
        let (mut f1, mut nme, mut macc) = (None, None, None);
        for p in &row.runs {
            let path = ctx.path(p);
            require(&path)?;
            let r = RunReport::load(&path)?;
            if let Some(m) = &r.metrics {
                if let Some(s) = &m.segmentation {
                    f1 = f1.or(s.mean_f1);
                }
                if let Some(l) = &m.landmarks {
                    nme = nme.or(Some((l.normalizer.label().to_string(), 100.0 * l.nme)));
                }
                if let Some(a) = &m.attributes {
                    macc = macc.or(Some(a.mean_accuracy));
                }
            }
        }
        rows.push((row.label.clone(), f1, nme, macc));
    }
    let nme_label = rows.iter().find_map(|r| r.2.as_ref().map(|x| x.0.clone())).unwrap_or_else(|| "NME".into());
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(7);
    let fmt = |v: Option<f64>, prec: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"));
    let mut table = format!("{:<width$} | {:>8} | {:>16} | {:>8}\n", "variant", "F1-mean", format!("{nme_label} (%)"), "mAcc");
    table.push_str(&format!("{}\n", "-".repeat(width + 42)));
    for (label, f1, nme, macc) in &rows {
        table.push_str(&format!(
            "{label:<width$} | {:>8} | {:>16} | {:>8}\n",
            fmt(*f1, 2),
            fmt(nme.as_ref().map(|x| x.1), 3),
            fmt(*macc, 2)
        ));
    }
    if let Some(o) = &sec.output {
        let o = ctx.path(o);
        if let Some(dir) = o.parent() {
            create_dir(dir)?;
        }
        std::fs::write(&o, &table).map_err(|e| Error::io(&o, e))?;
    }
    Ok(table)
}
