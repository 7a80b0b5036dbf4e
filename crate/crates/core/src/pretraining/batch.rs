//! Image-text batches for pre-training and a prefetching loader.

use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{select_face, ManifestRecord};
use crate::error::{Error, Result};
use crate::geometry::{warp_image, MeanFace, SimilarityTransform, WarpConfig};
use crate::image::ImageTensor;

#[derive(Debug, Clone)]
pub struct PretrainBatch {
    /// Global batch index; reported when a step fails.
    pub id: u64,
    pub images: Vec<ImageTensor>,
    pub captions: Vec<String>,
}

impl PretrainBatch {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// How a crop is cut from the source image.
#[derive(Debug, Clone)]
pub enum CropMode {
    /// Similarity-align one randomly selected face onto the mean face.
    Align(MeanFace),
    /// Square crop with side in `[min_frac, 1] · min(H, W)` at a random offset.
    Random { min_frac: f64 },
}

/// Produces the `size × size` input crop for one record.
pub fn prepare_crop<R: Rng + ?Sized>(
    image: &ImageTensor,
    record: &ManifestRecord,
    mode: &CropMode,
    size: usize,
    rng: &mut R,
) -> Result<ImageTensor> {
    let t = match mode {
        CropMode::Align(template) => {
            let face = select_face(record, rng)?;
            template.alignment(&face, size)?
        }
        CropMode::Random { min_frac } => {
            let short = image.height().min(image.width()) as f64;
            let side = short * rng.random_range(min_frac.clamp(0.05, 1.0)..=1.0);
            let x0 = rng.random_range(0.0..=(image.width() as f64 - side));
            let y0 = rng.random_range(0.0..=(image.height() as f64 - side));
            let k = size as f64 / side;
            SimilarityTransform::from_params(k, 0.0, [(0.5 - x0) * k - 0.5, (0.5 - y0) * k - 0.5])
        }
    };
    warp_image(image, &t, &WarpConfig::disabled(size))
}

#[derive(Debug, Clone)]
pub struct LoaderPlan {
    pub batch_size: usize,
    pub image_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub prefetch: usize,
}

/// Number of full batches per pass over `n` records.
pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    (n / batch_size.max(1)).max(1)
}

fn batch_seed(seed: u64, id: u64) -> u64 {
    seed ^ id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn build_batch(
    id: u64,
    records: &[ManifestRecord],
    order: &[usize],
    base: &Path,
    mode: &CropMode,
    plan: &LoaderPlan,
) -> Result<PretrainBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(batch_seed(plan.seed, id));
    let mut images = Vec::with_capacity(order.len());
    let mut captions = Vec::with_capacity(order.len());
    for &i in order {
        let rec = &records[i];
        let image = ImageTensor::load(&base.join(&rec.image_ref))?;
        images.push(prepare_crop(&image, rec, mode, plan.image_size, &mut rng)?);
        captions.push(rec.caption.clone());
    }
    Ok(PretrainBatch { id, images, captions })
}

/// Shuffled epoch order; depends only on the seed and the epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch.wrapping_mul(0xA076_1D64_78BD_642F))));
    order
}

/// Background thread decoding and cropping batches ahead of the trainer.
/// Batch contents depend only on the plan's seed and the batch index.
pub struct BatchLoader {
    rx: Receiver<Result<PretrainBatch>>,
    handle: Option<JoinHandle<()>>,
}

impl BatchLoader {
    pub fn spawn(records: Arc<Vec<ManifestRecord>>, base: PathBuf, mode: CropMode, plan: LoaderPlan) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::input("no records to train on"));
        }
        let (tx, rx) = sync_channel(plan.prefetch.max(1));
        let handle = std::thread::spawn(move || {
            let b = plan.batch_size.clamp(1, records.len());
            let per_epoch = steps_per_epoch(records.len(), b);
            let mut order = Vec::new();
            for step in 0..plan.steps {
                let epoch = (step / per_epoch) as u64;
                if step % per_epoch == 0 {
                    order = epoch_order(records.len(), plan.seed, epoch);
                }
                let k = step % per_epoch;
                let batch = build_batch(step as u64, &records, &order[k * b..(k + 1) * b], &base, &mode, &plan);
                let failed = batch.is_err();
                if tx.send(batch).is_err() || failed {
                    return;
                }
            }
        });
        Ok(Self { rx, handle: Some(handle) })
    }
}

impl Iterator for BatchLoader {
    type Item = Result<PretrainBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.rx.recv() {
            Ok(b) => Some(b),
            Err(_) => {
                if let Some(h) = self.handle.take() {
                    let _ = h.join();
                }
                None
            }
        }
    }
}
