//! Procedural face-like fixtures: images with matching captions, five-point
//! landmarks, part label maps and attribute bits.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::manifest::ManifestRecord;
use crate::data::task::{flatten_points, TaskRecord};
use crate::error::Result;
use crate::geometry::{Point, SimilarityTransform};
use crate::image::{ImageTensor, LabelMap};

pub const NUM_ATTRIBUTES: usize = 40;
pub const NUM_FACTORS: usize = 6;

/// Background, skin, eyes, nose, mouth.
pub const PARSING_CLASSES: usize = 5;

/// Canonical landmarks in the unit face box: eye centres, nose tip, mouth
/// corners.
pub const CANONICAL_LANDMARKS: [Point; 5] = [[0.36, 0.40], [0.64, 0.40], [0.50, 0.56], [0.39, 0.72], [0.61, 0.72]];

/// Binary appearance factors driving colour, parts, caption and attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceFactors {
    pub bright_background: bool,
    pub tan_skin: bool,
    pub glasses: bool,
    pub open_mouth: bool,
    pub hat: bool,
    pub woman: bool,
}

impl FaceFactors {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            bright_background: rng.random(),
            tan_skin: rng.random(),
            glasses: rng.random(),
            open_mouth: rng.random(),
            hat: rng.random(),
            woman: rng.random(),
        }
    }

    pub fn bits(&self) -> [bool; NUM_FACTORS] {
        [self.bright_background, self.tan_skin, self.glasses, self.open_mouth, self.hat, self.woman]
    }

    /// Attribute `j` is factor `j mod 6`, negated on alternate blocks of six.
    pub fn attributes(&self) -> Vec<bool> {
        let bits = self.bits();
        (0..NUM_ATTRIBUTES).map(|j| bits[j % NUM_FACTORS] ^ ((j / NUM_FACTORS) % 2 == 1)).collect()
    }

    pub fn caption(&self) -> String {
        let mut words = vec!["a photo of a"];
        words.push(if self.tan_skin { "tan" } else { "pale" });
        words.push(if self.woman { "woman" } else { "man" });
        if self.glasses {
            words.push("with glasses");
        }
        words.push(if self.open_mouth { "smiling with open mouth" } else { "with closed mouth" });
        if self.hat {
            words.push("wearing a hat");
        }
        words.push(if self.bright_background { "on a bright background" } else { "on a dark background" });
        words.join(" ")
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFace {
    pub image: ImageTensor,
    pub labels: LabelMap,
    pub landmarks: Vec<Point>,
    pub factors: FaceFactors,
    /// Unit face box → image pixels.
    pub placement: SimilarityTransform,
}

impl SyntheticFace {
    pub fn caption(&self) -> String {
        self.factors.caption()
    }

    pub fn attributes(&self) -> Vec<bool> {
        self.factors.attributes()
    }

    /// Axis-aligned bounds of the face box corners, `[x0, y0, x1, y1]`.
    pub fn bbox(&self) -> [f64; 4] {
        let corners = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]].map(|c| self.placement.apply(c));
        let xs = corners.map(|c| c[0]);
        let ys = corners.map(|c| c[1]);
        let min = |v: [f64; 4]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = |v: [f64; 4]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        [min(xs), min(ys), max(xs), max(ys)]
    }
}

fn inside_ellipse(u: f64, v: f64, c: Point, r: Point) -> bool {
    ((u - c[0]) / r[0]).powi(2) + ((v - c[1]) / r[1]).powi(2) <= 1.0
}

/// Renders a face at `placement` (unit face box → pixels) into a
/// `size × size` image.
pub fn render_face<R: Rng + ?Sized>(
    size: usize,
    placement: SimilarityTransform,
    factors: FaceFactors,
    rng: &mut R,
) -> Result<SyntheticFace> {
    let inv = placement.inverse()?;
    let jitter = |rng: &mut R| rng.random_range(-0.04..0.04);
    let bg = if factors.bright_background { [0.85, 0.85, 0.80] } else { [0.12, 0.14, 0.20] }.map(|c: f64| c + jitter(rng));
    let skin = if factors.tan_skin { [0.62, 0.42, 0.28] } else { [0.95, 0.80, 0.70] }.map(|c: f64| c + jitter(rng));
    let eye = [0.10, 0.25, 0.45];
    let nose = skin.map(|c| c * 0.75);
    let mouth = if factors.open_mouth { [0.35, 0.05, 0.08] } else { [0.80, 0.20, 0.25] };
    let hat = [0.20, 0.55, 0.25];
    let lens = [0.05, 0.05, 0.05];
    let hair = [0.30, 0.18, 0.10];
    let mouth_half_height = if factors.open_mouth { 0.09 } else { 0.03 };
    let eye_radius = if factors.woman { 0.065 } else { 0.05 };

    let mut data = Vec::with_capacity(size * size * 3);
    let mut labels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let [u, v] = inv.apply([x as f64, y as f64]);
            let mut colour = bg;
            let mut label = 0u8;
            if inside_ellipse(u, v, [0.5, 0.52], [0.34, 0.46]) {
                colour = skin;
                label = 1;
                let (le, re) = (CANONICAL_LANDMARKS[0], CANONICAL_LANDMARKS[1]);
                if (u - le[0]).hypot(v - le[1]) <= eye_radius || (u - re[0]).hypot(v - re[1]) <= eye_radius {
                    colour = eye;
                    label = 2;
                } else if factors.glasses && (v - 0.40).abs() <= 0.09 && (0.2..=0.8).contains(&u) {
                    colour = lens;
                }
                let n = CANONICAL_LANDMARKS[2];
                if (u - n[0]).abs() <= 0.05 && (n[1] - 0.12..=n[1]).contains(&v) {
                    colour = nose;
                    label = 3;
                }
                if inside_ellipse(u, v, [0.5, 0.72], [0.13, mouth_half_height]) {
                    colour = mouth;
                    label = 4;
                }
                if factors.hat && v < 0.22 {
                    colour = hat;
                    label = 0;
                }
            } else if factors.hat && v < 0.22 && (0.08..=0.92).contains(&u) && v > -0.05 {
                colour = hat;
            } else if factors.woman && v > 0.1 && inside_ellipse(u, v, [0.5, 0.55], [0.46, 0.52]) {
                colour = hair;
            }
            data.extend(colour.map(|c| c.clamp(0.0, 1.0)));
            labels.push(label);
        }
    }
    Ok(SyntheticFace {
        image: ImageTensor::new(size, size, data)?,
        labels: LabelMap::new(size, size, labels)?,
        landmarks: CANONICAL_LANDMARKS.iter().map(|&p| placement.apply(p)).collect(),
        factors,
        placement,
    })
}

/// A face with random factors placed with random scale, rotation and offset.
pub fn random_face<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Result<SyntheticFace> {
    let s = size as f64;
    let scale = s * rng.random_range(0.5..0.7);
    let theta = rng.random_range(-15.0f64..15.0).to_radians();
    let centre = [s / 2.0 + rng.random_range(-0.08..0.08) * s, s / 2.0 + rng.random_range(-0.08..0.08) * s];
    let factors = FaceFactors::random(rng);
    render_face(size, placement_about(centre, scale, theta), factors, rng)
}

/// A near-frontal face filling most of the frame, as after alignment.
pub fn aligned_face<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Result<SyntheticFace> {
    let s = size as f64;
    let scale = s * rng.random_range(0.82..0.92);
    let theta = rng.random_range(-4.0f64..4.0).to_radians();
    let centre = [
        (s - 1.0) / 2.0 + rng.random_range(-0.04..0.04) * s,
        (s - 1.0) / 2.0 + rng.random_range(-0.04..0.04) * s,
    ];
    let factors = FaceFactors::random(rng);
    render_face(size, placement_about(centre, scale, theta), factors, rng)
}

/// Unit face box centred on `centre` with side `scale` pixels.
fn placement_about(centre: Point, scale: f64, theta: f64) -> SimilarityTransform {
    let rs = SimilarityTransform::from_params(scale, theta, [0.0, 0.0]);
    let c = rs.apply([0.5, 0.5]);
    SimilarityTransform { tx: centre[0] - c[0], ty: centre[1] - c[1], ..rs }
}

/// Stripes and gradients without any face.
pub fn nonface_image<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Result<ImageTensor> {
    let base = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
    let freq = rng.random_range(0.05..0.4);
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let w = 0.5 + 0.5 * ((x as f64 * freq).sin() * (y as f64 * freq * 0.7).cos());
            data.extend(base.map(|b: f64| (b * 0.6 + 0.4 * w).clamp(0.0, 1.0)));
        }
    }
    ImageTensor::new(size, size, data)
}

pub const NONFACE_CAPTIONS: [&str; 4] = [
    "a street at night",
    "a painting of a park",
    "stock vector illustration",
    "an outdoor event stage",
];

/// The landmark set averaged into the bundled mean-face template.
pub fn template_fixtures() -> Result<Vec<Vec<Point>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2022);
    (0..256).map(|_| Ok(random_face(224, &mut rng)?.landmarks)).collect()
}

/// Writes `n` images plus a raw (uncurated) manifest into `dir`. Roughly
/// `face_fraction` of the records contain faces with scores above 0.9; the
/// rest are low-score faces or face-free images. Landmarks of multi-face
/// records list the real face first, then jittered decoys.
pub fn write_raw_corpus(dir: &Path, n: usize, size: usize, face_fraction: f64, seed: u64) -> Result<Vec<ManifestRecord>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let name = format!("{i:05}.png");
        let path = dir.join(&name);
        if rng.random_bool(face_fraction.clamp(0.0, 1.0)) {
            let face = random_face(size, &mut rng)?;
            face.image.save(&path)?;
            let score = rng.random_range(0.91..1.0);
            let mut faces = vec![face.landmarks.clone()];
            if rng.random_bool(0.25) {
                let shift = rng.random_range(-2.0..2.0);
                faces.push(face.landmarks.iter().map(|p| [p[0] + shift, p[1] - shift]).collect());
            }
            records.push(ManifestRecord::new(name, face.caption(), score, &faces));
        } else if rng.random_bool(0.5) {
            let face = random_face(size, &mut rng)?;
            face.image.save(&path)?;
            records.push(ManifestRecord::new(name, face.caption(), rng.random_range(0.3..0.9), &[face.landmarks]));
        } else {
            nonface_image(size, &mut rng)?.save(&path)?;
            let caption = NONFACE_CAPTIONS[rng.random_range(0..NONFACE_CAPTIONS.len())];
            records.push(ManifestRecord::new(name, caption, rng.random_range(0.0..0.2), &[]));
        }
    }
    crate::data::manifest::write_manifest(&dir.join("raw.jsonl"), None, &records)?;
    Ok(records)
}

/// Writes `n` aligned faces as a downstream task set: image, part label
/// map, landmarks, box, attribute bits and a two-way group tag derived from
/// skin tone. The records are also written to `tasks.jsonl`.
pub fn write_task_corpus(dir: &Path, n: usize, size: usize, seed: u64) -> Result<Vec<TaskRecord>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let face = aligned_face(size, &mut rng)?;
        let image = format!("face{i:05}.png");
        let labels = format!("face{i:05}_labels.png");
        face.image.save(&dir.join(&image))?;
        face.labels.save(&dir.join(&labels))?;
        let mut r = TaskRecord::new(format!("face{i:05}"));
        r.image = Some(image);
        r.labels = Some(labels);
        r.landmarks = Some(flatten_points(&face.landmarks));
        r.bbox = Some(face.bbox());
        r.attributes = Some(face.attributes().into_iter().map(u8::from).collect());
        r.group = Some(if face.factors.tan_skin { "tan" } else { "pale" }.to_string());
        records.push(r);
    }
    crate::data::write_ndjson(&dir.join("tasks.jsonl"), &records)?;
    Ok(records)
}
