//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Tolerances and runtime budgets are the
//! constants next to each check.

use std::alloc::{GlobalAlloc, Layout, System};
use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor, Var};
use facerep_cli::report::RunReport;
use facerep_core::data::{
    curate_manifest, fewshot_count, fewshot_subset, manifest::manifest_to_string, mix_face_ratio, to_ndjson,
    CurateConfig, DatasetSplit, ManifestDetector, ManifestRecord, TaskRecord,
};
use facerep_core::encoders::{EncoderConfig, PatchSequence};
use facerep_core::geometry::{decode_heatmap, estimate_similarity, render_heatmap, tanh_alpha, Point, SimilarityTransform};
use facerep_core::gradcheck::{check_gradients, worst};
use facerep_core::heads::{
    attribute_bce, pixel_accuracy, pixel_cross_entropy, soft_label_ce, AlignmentHead, AttributeHead, FusionConfig,
    HeadConfig, HeadTrainer, MultiLevelFeatures, ParsingHead, Prediction, TaskSpec, TaskTargets, TrainMode,
};
use facerep_core::image::{images_to_tensor, LabelMap};
use facerep_core::interpret::{hook_similarity, text_embedding};
use facerep_core::metrics::{
    auc_ced, f1_scores, failure_rate, group_discrepancy, mean_accuracy, nme, GroupAccuracy, Normalizer,
    NormalizerKind,
};
use facerep_core::params::ParamStore;
use facerep_core::pretraining::{
    apply_mask, itc_loss, lr_at_step, sample_mask, DualEncoder, MaskSet, MaskToken, MimHead, PretrainBatch,
    PretrainConfig, Pretrainer, ScheduleConfig, TemperatureParam,
};
use facerep_core::synthetic::{aligned_face, write_raw_corpus, write_task_corpus, PARSING_CLASSES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- allocator

struct Counting;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = LIVE.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            if new_size >= layout.size() {
                let now = LIVE.fetch_add(new_size - layout.size(), Ordering::Relaxed) + new_size - layout.size();
                PEAK.fetch_max(now, Ordering::Relaxed);
            } else {
                LIVE.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

/// Peak live heap bytes above the level at entry while `f` runs.
fn peak_during<T>(f: impl FnOnce() -> T) -> (T, usize) {
    let base = LIVE.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    let out = f();
    (out, PEAK.load(Ordering::Relaxed) - base)
}

// ---------------------------------------------------------------- helpers

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn scalar(t: &Tensor) -> Result<f64, String> {
    ok(t.to_dtype(DType::F64).and_then(|t| t.to_scalar::<f64>()))
}

fn matrix(rows: &[Vec<f64>]) -> Tensor {
    let n = rows[0].len();
    Tensor::from_vec(rows.concat(), (rows.len(), n), &Device::Cpu).unwrap()
}

fn random_features(b: usize, grid: usize, dim: usize) -> (MultiLevelFeatures, Vec<(String, Var)>) {
    let mut vars = Vec::new();
    let (mut cls, mut tokens) = (Vec::new(), Vec::new());
    for i in 0..4 {
        let c = Var::from_tensor(&Tensor::randn(0f64, 1.0, (b, dim), &Device::Cpu).unwrap()).unwrap();
        let t = Var::from_tensor(&Tensor::randn(0f64, 1.0, (b, grid * grid, dim), &Device::Cpu).unwrap()).unwrap();
        cls.push(c.as_tensor().clone());
        tokens.push(t.as_tensor().clone());
        vars.push((format!("cls.{i}"), c));
        vars.push((format!("tokens.{i}"), t));
    }
    (MultiLevelFeatures { cls, tokens, grid }, vars)
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

// ---------------------------------------------------------------- 1. ITC

fn itc_closed_forms() -> Check {
    const TOL_LOG_B: f64 = 1e-9;
    const TOL_PAIR: f64 = 1e-6;
    let temp = |s: f64| TemperatureParam::from_tensor(Tensor::new(s.ln(), &Device::Cpu).unwrap());
    let total = |a: &Tensor, b: &Tensor, s: f64| -> Result<f64, String> { scalar(&ok(ok(itc_loss(a, b, &temp(s)))?.total())?) };

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..20 {
        let a = matrix(&unit_rows(&mut rng, 1, 8));
        let b = matrix(&unit_rows(&mut rng, 1, 8));
        let l = total(&a, &b, 0.07)?;
        ensure!(l == 0.0, "B = 1 gave {l}");
    }
    let mut worst_log_b: f64 = 0.0;
    for b in 2..=16 {
        let row = unit_rows(&mut rng, 1, 8).remove(0);
        let x = matrix(&vec![row; b]);
        let l = ok(itc_loss(&x, &x, &temp(0.07)))?;
        for dir in [&l.image_to_text, &l.text_to_image] {
            worst_log_b = worst_log_b.max((scalar(dir)? - (b as f64).ln()).abs());
        }
    }
    ensure!(worst_log_b < TOL_LOG_B, "identical pairs off ln B by {worst_log_b:e}");
    let x = matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let l = total(&x, &x, 1.0)?;
    // two orthogonal unit pairs at unit temperature: ln(1 + e^-1) = 0.31326...
    let closed = (1.0 + (-1f64).exp()).ln();
    ensure!((closed - 0.31326).abs() < 5e-6, "closed form {closed}");
    ensure!((l - closed).abs() < TOL_PAIR, "orthogonal pair gave {l}, closed form {closed}");
    Ok(format!("ln B err {worst_log_b:.1e}; B=2 orthogonal {l:.6}"))
}

// ---------------------------------------------------------------- 2. gradients

fn gradient_suite() -> Check {
    const TOL: f64 = 1e-3;
    let mut errors: Vec<(&str, f64)> = Vec::new();

    // ITC over embeddings and the log-temperature
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = Var::from_tensor(&matrix(&unit_rows(&mut rng, 4, 6))).unwrap();
    let txt = Var::from_tensor(&matrix(&unit_rows(&mut rng, 4, 6))).unwrap();
    let log_sigma = Var::from_tensor(&Tensor::new(0.2f64.ln(), &Device::Cpu).unwrap()).unwrap();
    let temperature = TemperatureParam::from_tensor(log_sigma.as_tensor().clone());
    let vars = vec![("image".into(), img.clone()), ("text".into(), txt.clone()), ("log_sigma".into(), log_sigma.clone())];
    let checks = ok(check_gradients(&vars, || itc_loss(img.as_tensor(), txt.as_tensor(), &temperature)?.total(), 1e-5, 64, 0))?;
    errors.push(("itc", worst(&checks)));

    // MIM head and features
    let mut store = ParamStore::new(DType::F64, 3);
    let head = ok(MimHead::new(&mut store, "mim", 8, 2, 1, 16))?;
    let feats = Var::from_tensor(&Tensor::randn(0f64, 1.0, (2, 5, 8), &Device::Cpu).unwrap()).unwrap();
    let masks = vec![ok(MaskSet::new(vec![1, 3], 4))?, ok(MaskSet::new(vec![2], 4))?];
    let targets = vec![vec![1, 2, 3, 4], vec![15, 0, 7, 9]];
    let mut vars = store.all_vars();
    vars.push(("features".into(), feats.clone()));
    let checks = ok(check_gradients(&vars, || head.loss(feats.as_tensor(), &masks, &targets), 1e-5, 24, 1))?;
    errors.push(("mim", worst(&checks)));

    // soft-label cross-entropy on raw logits
    let logits = Var::from_tensor(&Tensor::randn(0f64, 1.0, (2, 3, 6, 6), &Device::Cpu).unwrap()).unwrap();
    let hm = [render_heatmap(&[[1.0, 2.0], [4.5, 3.2], [2.2, 2.2]], 6), render_heatmap(&[[3.0, 0.0], [1.5, 1.5], [5.1, 0.9]], 6)];
    let vars = vec![("logits".into(), logits.clone())];
    let checks = ok(check_gradients(&vars, || Ok(soft_label_ce(logits.as_tensor(), &hm)?.loss), 1e-5, 128, 0))?;
    errors.push(("soft_label_ce", worst(&checks)));

    // parsing head
    let mut store = ParamStore::new(DType::F64, 1);
    let head = ok(ParsingHead::new(&mut store, "head", 6, 3, &FusionConfig { width: 4, pool_scales: vec![1, 2] }))?;
    let (feats, fvars) = random_features(1, 2, 6);
    let labels = [ok(LabelMap::new(12, 12, (0..144).map(|i| (i % 7 % 3) as u8).collect()))?];
    let mut vars = store.all_vars();
    vars.extend(fvars);
    let checks = ok(check_gradients(&vars, || pixel_cross_entropy(&head.forward(&feats, 12)?, &labels), 1e-5, 6, 2))?;
    errors.push(("parsing head", worst(&checks)));

    // alignment head
    let mut store = ParamStore::new(DType::F64, 2);
    let head = ok(AlignmentHead::new(&mut store, "head", 6, 2, 8, &FusionConfig { width: 4, pool_scales: vec![1, 2] }))?;
    let (feats, fvars) = random_features(1, 2, 6);
    let target = [render_heatmap(&[[2.3, 5.1], [6.0, 1.5]], 8)];
    let mut vars = store.all_vars();
    vars.extend(fvars);
    let checks = ok(check_gradients(&vars, || Ok(soft_label_ce(&head.forward(&feats)?, &target)?.loss), 1e-5, 6, 3))?;
    errors.push(("alignment head", worst(&checks)));

    // attribute head
    let mut store = ParamStore::new(DType::F64, 4);
    let head = ok(AttributeHead::new(&mut store, "head", 6, 4, 5))?;
    let (feats, fvars) = random_features(2, 2, 6);
    let y: Vec<Vec<bool>> = (0..2).map(|i| (0..5).map(|j| (i + j) % 2 == 0).collect()).collect();
    let mut vars = store.all_vars();
    vars.extend(fvars);
    let checks = ok(check_gradients(&vars, || attribute_bce(&head.forward(&feats)?, &y), 1e-5, 12, 5))?;
    errors.push(("attribute head", worst(&checks)));

    // Grad-CAM hook on the miniature dual encoder
    let mut store = ParamStore::new(DType::F64, 2);
    let model = ok(DualEncoder::new(&mut store, &EncoderConfig::miniature()))?;
    let face = ok(aligned_face(32, &mut ChaCha8Rng::seed_from_u64(2)))?;
    let et = ok(text_embedding(&model, "a face with an open mouth"))?;
    let x = ok(images_to_tensor(&[face.image], DType::F64, &Device::Cpu))?;
    let hooked = ok(model.image.forward_hooked(&x))?;
    let vars = vec![("hook".into(), hooked.activation.clone())];
    let checks = ok(check_gradients(
        &vars,
        || hook_similarity(&model, &hooked.residual, hooked.activation.as_tensor(), &et),
        1e-5,
        64,
        0,
    ))?;
    errors.push(("grad-cam hook", worst(&checks)));

    let (name, max) = errors.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    ensure!(max < TOL, "{name} relative error {max:e} (all: {errors:?})");
    Ok(format!("worst relative error {max:.1e} ({name}) over {} checks", errors.len()))
}

// ---------------------------------------------------------------- 3. tanh_alpha

fn tanh_alpha_suite() -> Check {
    const TOL_TANH: f64 = 1e-12;
    const TOL_C1: f64 = 1e-6;
    const TOL_VALUE: f64 = 1e-6;
    let f = |x: f64, a: f64| tanh_alpha(x, a).map_err(|e| e.to_string());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let x: f64 = rng.random_range(-5.0..5.0);
        ensure!((f(x, 1.0)? - x.tanh()).abs() < TOL_TANH, "alpha = 1 differs from tanh at {x}");
    }
    for &a in &[0.1, 0.25, 0.5, 0.75, 0.9] {
        for _ in 0..200 {
            let x: f64 = rng.random_range(-(1.0 - a)..=(1.0 - a));
            ensure!(f(x, a)? == x, "alpha = {a} not identity at {x}");
            let y: f64 = rng.random_range(-4.0..4.0);
            ensure!(f(-y, a)? == -f(y, a)?, "alpha = {a} not odd at {y}");
        }
        let h = 1e-5;
        for b in [1.0 - a, -(1.0 - a)] {
            ensure!(f(b, a)? == b, "alpha = {a} jumps at {b}");
            let left = (f(b, a)? - f(b - h, a)?) / h;
            let right = (f(b + h, a)? - f(b, a)?) / h;
            ensure!((left - right).abs() < TOL_C1, "alpha = {a} slopes {left} / {right} at {b}");
        }
    }
    let v = f(1.0, 0.5)?;
    ensure!((v - 0.880797).abs() < TOL_VALUE, "tanh_0.5(1) = {v}");
    Ok(format!("tanh_0.5(1) = {v:.6}"))
}

// ---------------------------------------------------------------- 4. geometry

fn geometry_round_trips() -> Check {
    const TOL_FROB: f64 = 1e-6;
    const TOL_PX: f64 = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_frob: f64 = 0.0;
    for _ in 0..1000 {
        let truth = SimilarityTransform::from_params(
            rng.random_range(0.2..5.0),
            rng.random_range(-3.1..3.1),
            [rng.random_range(-200.0..200.0), rng.random_range(-200.0..200.0)],
        );
        let src: Vec<Point> = (0..5).map(|_| [rng.random_range(0.0..224.0), rng.random_range(0.0..224.0)]).collect();
        let dst: Vec<Point> = src.iter().map(|&p| truth.apply(p)).collect();
        let est = ok(estimate_similarity(&src, &dst))?;
        worst_frob = worst_frob.max(est.frobenius_distance(&truth));
    }
    ensure!(worst_frob < TOL_FROB, "similarity recovery error {worst_frob:e}");
    let size = 128;
    let mut worst_px: f64 = 0.0;
    for _ in 0..1000 {
        let p = [rng.random_range(0.0..(size - 1) as f64), rng.random_range(0.0..(size - 1) as f64)];
        let got = ok(decode_heatmap(&render_heatmap(&[p], size)))?[0].point;
        worst_px = worst_px.max((got[0] - p[0]).hypot(got[1] - p[1]));
    }
    ensure!(worst_px < TOL_PX, "heatmap decode error {worst_px} px");
    Ok(format!("Frobenius {worst_frob:.1e}; heatmap {worst_px:.3} px"))
}

// ---------------------------------------------------------------- 5. metrics

fn metric_oracles() -> Check {
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        // F1: per-class counts by brute force, background excluded from the mean
        let (h, w, k) = (rng.random_range(1..7), rng.random_range(1..7), rng.random_range(2..6usize));
        let p: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..k as u8)).collect();
        let g: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..k as u8)).collect();
        let got = ok(f1_scores(&ok(LabelMap::new(h, w, p.clone()))?, &ok(LabelMap::new(h, w, g.clone()))?, k))?;
        let mut defined = Vec::new();
        for c in 0..k {
            let tp = p.iter().zip(&g).filter(|(a, b)| **a as usize == c && **b as usize == c).count();
            let np = p.iter().filter(|a| **a as usize == c).count();
            let ng = g.iter().filter(|b| **b as usize == c).count();
            let want = if np + ng == 0 { None } else { Some(200.0 * tp as f64 / (np + ng) as f64) };
            match (got.per_class[c], want) {
                (None, None) => {}
                (Some(a), Some(b)) => ensure!((a - b).abs() < TOL, "F1 class {c}: {a} vs {b}"),
                other => return Err(format!("F1 class {c} definedness {other:?}")),
            }
            if c > 0 {
                if let Some(v) = want {
                    defined.push(v);
                }
            }
        }
        let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        ensure!(
            match (got.mean, mean) {
                (Some(a), Some(b)) => (a - b).abs() < TOL,
                (a, b) => a == b,
            },
            "F1 mean {:?} vs {mean:?}",
            got.mean
        );

        // NME under each normaliser
        let l = rng.random_range(2..8);
        let gt: Vec<Point> = (0..l).map(|_| [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)]).collect();
        let pred: Vec<Point> = gt.iter().map(|q| [q[0] + rng.random_range(-5.0..5.0), q[1] + rng.random_range(-5.0..5.0)]).collect();
        let bbox: [f64; 4] = [rng.random_range(0.0..20.0), rng.random_range(0.0..20.0), rng.random_range(40.0..120.0), rng.random_range(40.0..120.0)];
        let mean_err: f64 = pred.iter().zip(&gt).map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()).sum::<f64>() / l as f64;
        let (bw, bh) = (bbox[2] - bbox[0], bbox[3] - bbox[1]);
        let eyes = (0, 1);
        let iod = ((gt[0][0] - gt[1][0]).powi(2) + (gt[0][1] - gt[1][1]).powi(2)).sqrt();
        for (kind, d) in [
            (NormalizerKind::Diag, (bw * bw + bh * bh).sqrt()),
            (NormalizerKind::Box, (bw * bh).sqrt()),
            (NormalizerKind::InterOcular, iod),
        ] {
            let norm = ok(Normalizer::for_sample(kind, Some(bbox), eyes))?;
            let v = ok(nme(&pred, &gt, &norm))?;
            ensure!((v - mean_err / d).abs() < TOL, "NME {kind:?}: {v} vs {}", mean_err / d);
        }

        // FR counts exactly; AUC against a fine step integral of the CED
        let n = rng.random_range(1..30);
        let nmes: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.2)).collect();
        let tau = 0.1;
        let fails = nmes.iter().filter(|&&e| e > tau).count();
        let fr = ok(failure_rate(&nmes, tau))?;
        ensure!(fr == 100.0 * fails as f64 / n as f64, "FR {fr} vs {fails}/{n}");
        let auc = ok(auc_ced(&nmes, tau))?;
        let mut sorted = nmes.clone();
        sorted.sort_by(f64::total_cmp);
        let mut cuts: Vec<f64> = sorted.iter().cloned().filter(|&e| e < tau).collect();
        cuts.insert(0, 0.0);
        cuts.push(tau);
        let mut area = 0.0;
        for win in cuts.windows(2) {
            let below = nmes.iter().filter(|&&e| e <= win[0]).count() as f64 / n as f64;
            area += below * (win[1] - win[0]);
        }
        ensure!((auc - 100.0 * area / tau).abs() < TOL, "AUC {auc} vs {}", 100.0 * area / tau);

        // mAcc and the group discrepancy
        let (b, a) = (rng.random_range(1..12), rng.random_range(1..10));
        let pb: Vec<Vec<bool>> = (0..b).map(|_| (0..a).map(|_| rng.random()).collect()).collect();
        let gb: Vec<Vec<bool>> = (0..b).map(|_| (0..a).map(|_| rng.random()).collect()).collect();
        let mut per = vec![0usize; a];
        for i in 0..b {
            for j in 0..a {
                per[j] += usize::from(pb[i][j] == gb[i][j]);
            }
        }
        let want = 100.0 * per.iter().map(|&c| c as f64 / b as f64).sum::<f64>() / a as f64;
        let got = ok(mean_accuracy(&pb, &gb))?;
        ensure!((got - want).abs() < TOL, "mAcc {got} vs {want}");

        let names = ["r", "x", "y", "z"];
        let groups: BTreeMap<String, GroupAccuracy> = names
            .iter()
            .map(|s| (s.to_string(), GroupAccuracy { accuracy: rng.random_range(50.0..100.0), samples: rng.random_range(1..500) }))
            .collect();
        let pooled: Vec<String> = names[1..].iter().map(|s| s.to_string()).collect();
        let d = ok(group_discrepancy(&groups, "r", &pooled))?;
        let (num, den) = pooled.iter().fold((0.0, 0.0), |(n, d), k| {
            let g = &groups[k];
            (n + g.accuracy * g.samples as f64, d + g.samples as f64)
        });
        ensure!((d.difference - (num / den - groups["r"].accuracy)).abs() < TOL, "discrepancy {}", d.difference);
    }
    let published: BTreeMap<String, GroupAccuracy> = [("White", 94.15), ("Non-White", 94.41)]
        .iter()
        .map(|(k, v)| (k.to_string(), GroupAccuracy { accuracy: *v, samples: 1 }))
        .collect();
    let d = ok(group_discrepancy(&published, "White", &["Non-White".to_string()]))?;
    ensure!((d.difference - 0.26).abs() < TOL, "published gap gave {}", d.difference);
    Ok(format!("1000 instances; published gap {:+.2}", d.difference))
}

// ---------------------------------------------------------------- 6. masking

fn masking_contract() -> Check {
    let (n, d) = (196, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let token = MaskToken::from_tensor(Tensor::new(&[9.0f64, -9.0, 0.5, 2.0], &Device::Cpu).unwrap());
    let seq = PatchSequence {
        patches: Tensor::randn(0f64, 1.0, (1, n, d), &Device::Cpu).unwrap(),
        cls: Tensor::randn(0f64, 1.0, d, &Device::Cpu).unwrap(),
        pos: Tensor::randn(0f64, 1.0, (n + 1, d), &Device::Cpu).unwrap(),
    };
    let orig = ok(seq.patches.squeeze(0).and_then(|t| t.to_vec2::<f64>()))?;
    let (mut lo, mut hi) = (usize::MAX, 0);
    for _ in 0..10_000 {
        let m = ok(sample_mask(n, 75, &mut rng))?;
        ensure!((1..=75).contains(&m.len()), "|M| = {}", m.len());
        ensure!(!m.contains(0) && m.positions().iter().all(|&p| (1..=n).contains(&p)), "mask touches cls or leaves the grid");
        lo = lo.min(m.len());
        hi = hi.max(m.len());
        let out = ok(apply_mask(&seq, std::slice::from_ref(&m), &token))?;
        ensure!(out.cls.to_vec1::<f64>().unwrap() == seq.cls.to_vec1::<f64>().unwrap(), "cls changed");
        let got = ok(out.patches.squeeze(0).and_then(|t| t.to_vec2::<f64>()))?;
        for i in 0..n {
            if m.contains(i + 1) {
                ensure!(got[i] == vec![9.0, -9.0, 0.5, 2.0], "masked patch {i} is not the token");
            } else {
                let same = got[i].iter().zip(&orig[i]).all(|(a, b)| a.to_bits() == b.to_bits());
                ensure!(same, "unmasked patch {i} changed");
            }
        }
    }
    Ok(format!("10000 masks, |M| in [{lo}, {hi}]"))
}

// ---------------------------------------------------------------- 7. schedule

fn schedule() -> Check {
    const TOL: f64 = 1e-9;
    let cfg = ScheduleConfig::default();
    let spe = 1000;
    let warm = cfg.warmup_steps(spe) as usize;
    let end = cfg.total_steps(spe);
    let (a, b, c) = (lr_at_step(0, spe, &cfg), lr_at_step(warm, spe, &cfg), lr_at_step(end, spe, &cfg));
    ensure!((a - 1e-6).abs() < TOL && (b - 1e-3).abs() < TOL && (c - 9e-4).abs() < TOL, "lr endpoints {a} {b} {c}");
    let before = lr_at_step(warm - 1, spe, &cfg);
    let after = lr_at_step(warm + 1, spe, &cfg);
    let slope = (1e-3 - 1e-6) / warm as f64;
    ensure!((b - before - slope).abs() < TOL && (b - after).abs() < slope, "discontinuity at the warm-up boundary");
    ensure!(lr_at_step(end + 500, spe, &cfg) == c, "rate moves past the end");
    Ok(format!("lr(0) {a:e}, lr(warm-up) {b:e}, lr(end) {c:e}"))
}

// ---------------------------------------------------------------- 8. training sanity

fn training_sanity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut images, mut captions) = (Vec::new(), Vec::<String>::new());
    while images.len() < 8 {
        let f = ok(aligned_face(32, &mut rng))?;
        if !captions.contains(&f.caption()) {
            captions.push(f.caption());
            images.push(f.image);
        }
    }
    let batch = PretrainBatch { id: 0, images, captions };
    let steps = 300;
    let spe = steps / 16;
    let mut t = ok(Pretrainer::new(&EncoderConfig::miniature(), PretrainConfig::default(), 3, spe))?;
    let first = ok(t.step(&batch))?.total;
    let mut last = Vec::new();
    for _ in 1..steps {
        last.push(ok(t.step(&batch))?.total);
    }
    let tail = last[last.len() - 10..].iter().sum::<f64>() / 10.0;
    let drop = 1.0 - tail / first;
    ensure!(drop >= 0.5, "ITC+MIM loss fell {:.1}% ({first:.3} -> {tail:.3})", 100.0 * drop);

    let faces: Vec<_> = {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        (0..8).map(|_| aligned_face(32, &mut rng).unwrap()).collect()
    };
    let trainer = |task: TaskSpec, width: usize| {
        let cfg = HeadConfig { fusion: FusionConfig { width, pool_scales: vec![1, 2] }, ..Default::default() };
        HeadTrainer::new(&EncoderConfig::miniature().image, task, cfg, TrainMode::Probe, 1)
    };
    let four: Vec<_> = faces[..4].iter().map(|f| f.image.clone()).collect();

    let labels: Vec<_> = faces[..4].iter().map(|f| f.labels.clone()).collect();
    let mut p = ok(trainer(TaskSpec::Parsing { classes: PARSING_CLASSES }, 32))?;
    for _ in 0..100 {
        ok(p.step(&four, TaskTargets::Parsing(&labels)))?;
    }
    let Prediction::Parsing(pred) = ok(p.predict(&four))? else { return Err("parsing prediction kind".into()) };
    let acc = pixel_accuracy(&pred, &labels);
    ensure!(acc > 0.95, "parsing pixel accuracy {acc}");

    let points: Vec<_> = faces[..4].iter().map(|f| f.landmarks.clone()).collect();
    let mut a = ok(trainer(TaskSpec::Alignment { landmarks: 5, heatmap_size: 32 }, 16))?;
    for _ in 0..100 {
        ok(a.step(&four, TaskTargets::Alignment(&points)))?;
    }
    let Prediction::Alignment(pred) = ok(a.predict(&four))? else { return Err("alignment prediction kind".into()) };
    let err = pred.iter().zip(&points).flat_map(|(p, g)| p.iter().zip(g).map(|(a, b)| (a.point[0] - b[0]).hypot(a.point[1] - b[1]))).sum::<f64>() / 20.0;
    ensure!(err < 1.0, "alignment mean error {err} px");

    let eight: Vec<_> = faces.iter().map(|f| f.image.clone()).collect();
    let attrs: Vec<_> = faces.iter().map(|f| f.attributes()).collect();
    let mut c = ok(trainer(TaskSpec::Attributes { count: 40 }, 16))?;
    for _ in 0..100 {
        ok(c.step(&eight, TaskTargets::Attributes(&attrs)))?;
    }
    let Prediction::Attributes(pred) = ok(c.predict(&eight))? else { return Err("attribute prediction kind".into()) };
    let macc = ok(mean_accuracy(&pred, &attrs))?;
    ensure!(macc == 100.0, "attribute accuracy {macc}");
    Ok(format!("loss -{:.0}% over {steps} steps; parsing {:.1}%, landmarks {err:.2} px, attributes {macc:.0}%", 100.0 * drop, 100.0 * acc))
}

// ---------------------------------------------------------------- 9. pipeline

fn record(i: usize, score: f64) -> ManifestRecord {
    let face: Vec<Point> = (0..5).map(|k| [10.0 + k as f64, 20.0 + (i % 7) as f64]).collect();
    ManifestRecord::new(format!("img/{i:08}.png"), format!("caption number {i}"), score, &[face])
}

fn stream(n: usize, seed: u64) -> impl Iterator<Item = Result<ManifestRecord, facerep_core::data::Reject>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(move |i| Ok(record(i, rng.random_range(0.5..1.0))))
}

fn pipeline_determinism() -> Check {
    // exact threshold, determinism and the few-shot count
    let mut records: Vec<ManifestRecord> = stream(2000, 9).map(Result::unwrap).collect();
    records[3].face_score = 0.9;
    let cfg = CurateConfig { threshold: 0.9, target_size: 300, seed: 11 };
    let curate = |cfg: &CurateConfig| -> Result<String, String> {
        let out = ok(curate_manifest(records.iter().cloned().map(Ok), cfg, &ManifestDetector))?;
        Ok(manifest_to_string(Some(&out.header), &out.records))
    };
    let a = curate(&cfg)?;
    ensure!(a == curate(&cfg)?, "curation is not reproducible");
    ensure!(a != curate(&CurateConfig { seed: 12, ..cfg.clone() })?, "curation ignores its seed");
    let kept = ok(curate_manifest(records.iter().cloned().map(Ok), &cfg, &ManifestDetector))?;
    ensure!(kept.records.len() == 300, "kept {} of 300", kept.records.len());
    ensure!(kept.records.iter().all(|r| r.face_score > 0.9), "a record at or below 0.9 was kept");
    let qualifying = records.iter().filter(|r| r.face_score > 0.9).count() as u64;
    ensure!(kept.header.qualifying == qualifying, "qualifying {} vs {qualifying}", kept.header.qualifying);

    let tasks: Vec<TaskRecord> = (0..500).map(|i| TaskRecord::new(format!("t{i}"))).collect();
    let split = DatasetSplit::full(tasks);
    let fs = |seed| -> Result<String, String> { Ok(to_ndjson(&ok(fewshot_subset(&split, 0.1, seed))?.records)) };
    ensure!(fs(1)? == fs(1)? && fs(1)? != fs(2)?, "few-shot subset is not a function of the seed");
    let faces: Vec<_> = records[..400].to_vec();
    let nonface: Vec<_> = records[400..800].to_vec();
    let mix = |seed| -> Result<String, String> { Ok(manifest_to_string(None, &ok(mix_face_ratio(&faces, &nonface, 0.5, 200, seed))?)) };
    ensure!(mix(4)? == mix(4)?, "face-ratio mix is not reproducible");
    let n = ok(fewshot_count(162_770, 0.002))?;
    ensure!(n == 325, "0.002 of 162,770 gave {n}");

    // reservoir memory: peak heap must track the target size, not the stream length
    let k = 16;
    let measure = |n: usize, k: usize| {
        let cfg = CurateConfig { threshold: 0.9, target_size: k, seed: 1 };
        let (out, peak) = peak_during(|| curate_manifest(stream(n, 5), &cfg, &ManifestDetector).map(|o| o.peak_held));
        (out.unwrap(), peak)
    };
    let (held_small, small) = measure(2_000, k);
    let (held_large, large) = measure(100_000, k);
    let (_, wide) = measure(100_000, 64 * k);
    ensure!(held_small <= k && held_large <= k, "reservoir held {held_large} > {k}");
    ensure!(large <= small + small / 4 + 16 * 1024, "peak heap grew with the stream: {small} -> {large} bytes");
    ensure!(wide > large, "harness does not see the reservoir ({wide} vs {large})");
    Ok(format!("325 records; peak heap {small} B at 2k records, {large} B at 100k (K = {k})"))
}

// ---------------------------------------------------------------- 10. end to end

fn run_cli(args: &[&str]) -> Result<(), String> {
    let argv = std::iter::once("facerep").chain(args.iter().copied());
    match facerep_cli::run(argv) {
        0 => Ok(()),
        code => Err(format!("facerep {args:?} exited with {code}")),
    }
}

fn end_to_end() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    ok(write_raw_corpus(&d.join("raw"), 64, 32, 0.8, 0))?;
    ok(write_task_corpus(&d.join("train"), 256, 32, 1))?;
    ok(write_task_corpus(&d.join("test"), 64, 32, 2))?;
    let cfg = d.join("run.toml");
    std::fs::write(
        &cfg,
        r#"
seed = 0
deterministic = true

[curate]
input = "raw/raw.jsonl"
output = "curated.jsonl"
target_size = 64

[pretrain]
manifest = "curated.jsonl"
output_dir = "pre"
steps = 50

[pretrain.training]
toggles = "ITC+MIM1+ALIGN"

[head]
train = "train/tasks.jsonl"
test = "test/tasks.jsonl"
backbone = "pre/checkpoint.safetensors"
output_dir = "probe"

[head.task]
kind = "attributes"
count = 40

[head.training]
epochs = 20
batch_size = 8
lr = 0.03
"#,
    )
    .map_err(|e| e.to_string())?;
    let cfg = cfg.to_str().unwrap();
    for cmd in ["curate", "pretrain", "probe"] {
        run_cli(&[cmd, "--config", cfg])?;
    }
    let pre = ok(RunReport::load(&d.join("pre/run_report.json")))?;
    let probe = ok(RunReport::load(&d.join("probe/run_report.json")))?;
    ensure!(
        probe.backbone_hash.is_some() && probe.backbone_hash == probe.backbone_hash_before && probe.backbone_hash == pre.backbone_hash,
        "backbone moved during probing"
    );
    let macc = probe.metrics.and_then(|m| m.attributes).map(|a| a.mean_accuracy).ok_or("no attribute metrics")?;
    ensure!(macc > 90.0, "held-out mAcc {macc:.2}%");
    log_lines(&d.join("pre/train_log.jsonl"), 50)?;
    Ok(format!("held-out mAcc {macc:.2}%, backbone hash unchanged"))
}

fn log_lines(path: &Path, want: usize) -> Result<(), String> {
    let n = std::fs::read_to_string(path).map_err(|e| e.to_string())?.lines().count();
    ensure!(n == want, "{} has {n} lines, expected {want}", path.display());
    Ok(())
}

// ---------------------------------------------------------------- driver

fn main() {
    let criteria: [(&str, fn() -> Check, Duration); 10] = [
        ("ITC closed forms", itc_closed_forms, Duration::from_secs(1)),
        ("gradient suite", gradient_suite, Duration::from_secs(300)),
        ("tanh_alpha", tanh_alpha_suite, Duration::from_secs(60)),
        ("geometry round-trips", geometry_round_trips, Duration::from_secs(60)),
        ("metric oracles", metric_oracles, Duration::from_secs(60)),
        ("masking contract", masking_contract, Duration::from_secs(120)),
        ("schedule", schedule, Duration::from_secs(1)),
        ("training sanity", training_sanity, Duration::from_secs(600)),
        ("pipeline determinism", pipeline_determinism, Duration::from_secs(120)),
        ("end-to-end smoke", end_to_end, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(_) if took > *budget => Err(format!("took {:.1} s, budget {} s", took.as_secs_f64(), budget.as_secs())),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name:<22} {:>7.2} s  {detail}", i + 1, took.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name:<22} {:>7.2} s  {detail}", i + 1, took.as_secs_f64());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
