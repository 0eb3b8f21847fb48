//! Reproducible synthetic detection scenes with controllable annotation noise.
//!
//! Scenes are colored shapes (rectangle, disk, triangle) on a dark background;
//! targets are the exact tight bounding boxes of the rendered shapes. Noise
//! injection drops annotations at a configurable rate and jitters surviving
//! box corners, while the clean annotations are retained for evaluation.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};
use crate::rng::{mix, stream};

/// Where an annotation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Human,
    Pseudo,
}

/// A training target: box, category and provenance. Pseudo boxes always
/// carry the teacher score that retained them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    bbox: BBox,
    category: usize,
    provenance: Provenance,
    score: Option<f64>,
}

impl LabeledBox {
    pub fn human(bbox: BBox, category: usize) -> Self {
        Self {
            bbox,
            category,
            provenance: Provenance::Human,
            score: None,
        }
    }

    pub fn pseudo(bbox: BBox, category: usize, score: f64) -> Result<Self> {
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidScore(score));
        }
        Ok(Self {
            bbox,
            category,
            provenance: Provenance::Pseudo,
            score: Some(score),
        })
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn category(&self) -> usize {
        self.category
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn score(&self) -> Option<f64> {
        self.score
    }

    /// Same label with a different box (augmentation remapping).
    pub fn with_bbox(&self, bbox: BBox) -> Self {
        Self { bbox, ..*self }
    }
}

/// An image with its labeled targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub image: Image,
    pub targets: Vec<LabeledBox>,
}

/// Scene generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Image height and width in pixels.
    pub image_size: (usize, usize),
    /// Inclusive range for the number of shapes per image.
    pub shapes_per_image: (usize, usize),
    /// Number of categories; shape kinds are rectangle, disk, triangle.
    pub categories: usize,
    /// Inclusive range for shape bounding-box sides in pixels.
    pub size_range: (f64, f64),
    /// Maximum allowed IoU between true boxes of one scene.
    pub max_overlap_iou: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: (64, 64),
            shapes_per_image: (2, 5),
            categories: 3,
            size_range: (10.0, 26.0),
            max_overlap_iou: 0.4,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h < 32 || w < 32 {
            return Err(Error::InvalidConfig(format!(
                "image size {h}x{w} below the 32-px minimum"
            )));
        }
        if !(2..=3).contains(&self.categories) {
            return Err(Error::InvalidConfig(format!(
                "categories must be 2 or 3 (shape kinds), got {}",
                self.categories
            )));
        }
        if self.size_range.0 < 4.0 {
            return Err(Error::InvalidConfig(format!(
                "minimum shape size {} px is below 4 px",
                self.size_range.0
            )));
        }
        if self.size_range.0 > self.size_range.1 {
            return Err(Error::InvalidConfig("empty shape size range".into()));
        }
        if self.size_range.1 > (h.min(w) as f64) {
            return Err(Error::InvalidConfig(
                "maximum shape size exceeds image".into(),
            ));
        }
        if self.shapes_per_image.0 > self.shapes_per_image.1 || self.shapes_per_image.0 == 0 {
            return Err(Error::InvalidConfig("bad shapes-per-image range".into()));
        }
        Ok(())
    }
}

/// Annotation noise parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Probability that a true box is dropped from the annotations.
    pub p_miss: f64,
    /// Standard deviation of Gaussian corner jitter, in pixels.
    pub sigma_loc: f64,
    /// Base seed of the noise stream.
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            p_miss: 0.3,
            sigma_loc: 2.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p_miss) && self.p_miss != 0.0 {
            return Err(Error::InvalidConfig(format!(
                "p_miss {} outside [0, 1)",
                self.p_miss
            )));
        }
        if self.sigma_loc < 0.0 || !self.sigma_loc.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "sigma_loc {} must be a finite non-negative value",
                self.sigma_loc
            )));
        }
        Ok(())
    }

    /// Identity noise: nothing dropped, nothing jittered.
    pub fn none() -> Self {
        Self {
            p_miss: 0.0,
            sigma_loc: 0.0,
            seed: 0,
        }
    }
}

const BACKGROUND: f32 = 0.1;

/// Shape geometry in continuous image coordinates.
#[derive(Debug, Clone, Copy)]
pub(crate) enum ShapeGeom {
    Rect {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
    Disk {
        cx: f64,
        cy: f64,
        r: f64,
    },
    /// Apex on the top edge of the bounding box, base along the bottom.
    Triangle {
        apex: (f64, f64),
        left: (f64, f64),
        right: (f64, f64),
    },
}

impl ShapeGeom {
    pub(crate) fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            ShapeGeom::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            ShapeGeom::Disk { cx, cy, r } => {
                let dx = x - cx;
                let dy = y - cy;
                dx * dx + dy * dy <= r * r
            }
            ShapeGeom::Triangle { apex, left, right } => {
                let sign = |p: (f64, f64), q: (f64, f64)| {
                    (x - q.0) * (p.1 - q.1) - (p.0 - q.0) * (y - q.1)
                };
                let d1 = sign(apex, left);
                let d2 = sign(left, right);
                let d3 = sign(right, apex);
                let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(has_neg && has_pos)
            }
        }
    }

    pub(crate) fn bbox(&self) -> BBox {
        match *self {
            ShapeGeom::Rect { x0, y0, x1, y1 } => BBox::new(x0, y0, x1, y1),
            ShapeGeom::Disk { cx, cy, r } => BBox::new(cx - r, cy - r, cx + r, cy + r),
            ShapeGeom::Triangle { apex, left, right } => {
                let xs = [apex.0, left.0, right.0];
                let ys = [apex.1, left.1, right.1];
                let min = |v: [f64; 3]| v.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = |v: [f64; 3]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                BBox::new(min(xs), min(ys), max(xs), max(ys))
            }
        }
        .expect("shape extents are positive by construction")
    }
}

const PLACEMENT_ATTEMPTS: usize = 40;

/// Renders one scene deterministically from a seed. Targets are the exact
/// tight bounding boxes of the shapes, in paint order, provenance human.
pub fn render_scene(seed: u64, cfg: &SceneConfig) -> Result<Sample> {
    render_scene_detailed(seed, cfg).map(|(sample, _)| sample)
}

/// As [`render_scene`] but also returns the shape geometry, for mask-based
/// verification.
pub(crate) fn render_scene_detailed(
    seed: u64,
    cfg: &SceneConfig,
) -> Result<(Sample, Vec<ShapeGeom>)> {
    cfg.validate()?;
    let (h, w) = cfg.image_size;
    let mut rng = stream(mix(seed, 0x5CE4E));
    let n_shapes = rng.random_range(cfg.shapes_per_image.0..=cfg.shapes_per_image.1);

    let mut shapes: Vec<ShapeGeom> = Vec::with_capacity(n_shapes);
    let mut colors: Vec<[f32; 3]> = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        for _attempt in 0..PLACEMENT_ATTEMPTS {
            let kind = rng.random_range(0..cfg.categories);
            let geom = sample_shape(&mut rng, kind, cfg, w as f64, h as f64);
            let bbox = geom.bbox();
            let overlaps = shapes
                .iter()
                .any(|s| s.bbox().iou(&bbox) > cfg.max_overlap_iou);
            if !overlaps {
                let color = [
                    rng.random_range(0.25..1.0f32),
                    rng.random_range(0.25..1.0f32),
                    rng.random_range(0.25..1.0f32),
                ];
                shapes.push(geom);
                colors.push(color);
                break;
            }
        }
    }

    let mut image = Image::new(h, w, BACKGROUND);
    for (geom, color) in shapes.iter().zip(&colors) {
        paint(&mut image, geom, *color);
    }

    let targets = shapes
        .iter()
        .map(|g| LabeledBox::human(g.bbox(), category_of(g)))
        .collect();

    Ok((
        Sample {
            id: seed,
            image,
            targets,
        },
        shapes,
    ))
}

fn category_of(g: &ShapeGeom) -> usize {
    match g {
        ShapeGeom::Rect { .. } => 0,
        ShapeGeom::Disk { .. } => 1,
        ShapeGeom::Triangle { .. } => 2,
    }
}

fn sample_shape(
    rng: &mut impl Rng,
    kind: usize,
    cfg: &SceneConfig,
    w: f64,
    h: f64,
) -> ShapeGeom {
    let (lo, hi) = cfg.size_range;
    match kind {
        0 => {
            let sw = rng.random_range(lo..=hi);
            let sh = rng.random_range(lo..=hi);
            let x0 = rng.random_range(0.0..=(w - sw));
            let y0 = rng.random_range(0.0..=(h - sh));
            ShapeGeom::Rect {
                x0,
                y0,
                x1: x0 + sw,
                y1: y0 + sh,
            }
        }
        1 => {
            let d = rng.random_range(lo..=hi);
            let r = d / 2.0;
            let cx = rng.random_range(r..=(w - r));
            let cy = rng.random_range(r..=(h - r));
            ShapeGeom::Disk { cx, cy, r }
        }
        _ => {
            let sw = rng.random_range(lo..=hi);
            let sh = rng.random_range(lo..=hi);
            let x0 = rng.random_range(0.0..=(w - sw));
            let y0 = rng.random_range(0.0..=(h - sh));
            let apex_x = x0 + rng.random_range(0.15..=0.85) * sw;
            ShapeGeom::Triangle {
                apex: (apex_x, y0),
                left: (x0, y0 + sh),
                right: (x0 + sw, y0 + sh),
            }
        }
    }
}

fn paint(image: &mut Image, geom: &ShapeGeom, color: [f32; 3]) {
    let bbox = geom.bbox();
    let y0 = bbox.y_min().floor().max(0.0) as usize;
    let y1 = (bbox.y_max().ceil() as usize).min(image.height());
    let x0 = bbox.x_min().floor().max(0.0) as usize;
    let x1 = (bbox.x_max().ceil() as usize).min(image.width());
    for y in y0..y1 {
        for x in x0..x1 {
            if geom.contains(x as f64 + 0.5, y as f64 + 0.5) {
                image.set_pixel(y, x, color);
            }
        }
    }
}

/// Applies annotation noise: each target is independently dropped with
/// `p_miss`; survivors get i.i.d. Gaussian corner jitter, clipped to the
/// image. Jitter that would invert a box is resampled. Deterministic given
/// the sample id and noise seed.
pub fn corrupt_annotations(sample: &Sample, noise: &NoiseConfig) -> Result<Sample> {
    noise.validate()?;
    let mut rng = stream(mix(noise.seed, mix(sample.id, 0xA07)));
    let (h, w) = (sample.image.height() as f64, sample.image.width() as f64);
    let normal = if noise.sigma_loc > 0.0 {
        Some(Normal::new(0.0, noise.sigma_loc).expect("validated sigma"))
    } else {
        None
    };

    let mut noisy = Vec::with_capacity(sample.targets.len());
    for target in &sample.targets {
        if rng.random::<f64>() < noise.p_miss {
            continue;
        }
        let Some(normal) = &normal else {
            noisy.push(*target);
            continue;
        };
        let b = target.bbox();
        let mut jittered = None;
        for _ in 0..1000 {
            let x0 = (b.x_min() + normal.sample(&mut rng)).clamp(0.0, w);
            let y0 = (b.y_min() + normal.sample(&mut rng)).clamp(0.0, h);
            let x1 = (b.x_max() + normal.sample(&mut rng)).clamp(0.0, w);
            let y1 = (b.y_max() + normal.sample(&mut rng)).clamp(0.0, h);
            if let Ok(bb) = BBox::new(x0, y0, x1, y1) {
                jittered = Some(bb);
                break;
            }
        }
        // The resample loop failing 1000 times is not reachable for any
        // realistic sigma; keep the original box rather than lose the object.
        let bbox = jittered.unwrap_or(*b);
        noisy.push(target.with_bbox(bbox));
    }

    Ok(Sample {
        id: sample.id,
        image: sample.image.clone(),
        targets: noisy,
    })
}

/// One dataset entry: the training sample carries the noisy annotations,
/// the clean ones are retained for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub sample: Sample,
    pub clean_targets: Vec<LabeledBox>,
}

/// An in-memory detection dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub entries: Vec<DatasetEntry>,
    pub scene: SceneConfig,
}

impl Dataset {
    /// Generates `count` scenes with stable per-sample seeds derived from
    /// `base_seed`, applying the given annotation noise.
    pub fn generate(
        count: usize,
        scene: &SceneConfig,
        noise: &NoiseConfig,
        base_seed: u64,
    ) -> Result<Dataset> {
        if count == 0 {
            return Err(Error::InvalidConfig("dataset count must be >= 1".into()));
        }
        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            let clean = {
                let mut s = render_scene(mix(base_seed, i as u64), scene)?;
                s.id = i as u64;
                s
            };
            let noisy = corrupt_annotations(&clean, noise)?;
            entries.push(DatasetEntry {
                sample: noisy,
                clean_targets: clean.targets,
            });
        }
        Ok(Dataset {
            entries,
            scene: scene.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.scene.image_size
    }
}

#[derive(Serialize, Deserialize)]
struct AnnotationsFile {
    samples: Vec<SampleAnnotations>,
}

#[derive(Serialize, Deserialize)]
struct SampleAnnotations {
    id: u64,
    raster: String,
    noisy: Vec<[f64; 5]>,
    clean: Vec<[f64; 5]>,
}

fn boxes_to_rows(targets: &[LabeledBox]) -> Vec<[f64; 5]> {
    targets
        .iter()
        .map(|t| {
            let b = t.bbox();
            [
                b.x_min(),
                b.y_min(),
                b.x_max(),
                b.y_max(),
                t.category() as f64,
            ]
        })
        .collect()
}

fn rows_to_boxes(rows: &[[f64; 5]]) -> Result<Vec<LabeledBox>> {
    rows.iter()
        .map(|r| Ok(LabeledBox::human(BBox::new(r[0], r[1], r[2], r[3])?, r[4] as usize)))
        .collect()
}

/// Writes the dataset as one binary raster per sample (header H, W, C as
/// little-endian u32 followed by f32 pixels) plus `annotations.json` holding
/// the noisy and clean boxes of every sample.
pub fn export_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut samples = Vec::with_capacity(dataset.entries.len());
    for entry in &dataset.entries {
        let raster = format!("sample_{:05}.bin", entry.sample.id);
        let path = dir.join(&raster);
        write_raster(&entry.sample.image, &path)?;
        samples.push(SampleAnnotations {
            id: entry.sample.id,
            raster,
            noisy: boxes_to_rows(&entry.sample.targets),
            clean: boxes_to_rows(&entry.clean_targets),
        });
    }
    let ann_path = dir.join("annotations.json");
    let file = AnnotationsFile { samples };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::json(&ann_path, e))?;
    fs::write(&ann_path, json).map_err(|e| Error::io(&ann_path, e))?;

    let scene_path = dir.join("scene.json");
    let json = serde_json::to_string_pretty(&dataset.scene).map_err(|e| Error::json(&scene_path, e))?;
    fs::write(&scene_path, json).map_err(|e| Error::io(&scene_path, e))?;
    Ok(())
}

/// Reads a dataset written by [`export_dataset`].
pub fn import_dataset(dir: &Path) -> Result<Dataset> {
    let ann_path = dir.join("annotations.json");
    let json = fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let file: AnnotationsFile =
        serde_json::from_str(&json).map_err(|e| Error::json(&ann_path, e))?;

    let scene_path = dir.join("scene.json");
    let scene: SceneConfig = {
        let json = fs::read_to_string(&scene_path).map_err(|e| Error::io(&scene_path, e))?;
        serde_json::from_str(&json).map_err(|e| Error::json(&scene_path, e))?
    };

    let mut entries = Vec::with_capacity(file.samples.len());
    for s in &file.samples {
        let image = read_raster(&dir.join(&s.raster))?;
        entries.push(DatasetEntry {
            sample: Sample {
                id: s.id,
                image,
                targets: rows_to_boxes(&s.noisy)?,
            },
            clean_targets: rows_to_boxes(&s.clean)?,
        });
    }
    Ok(Dataset { entries, scene })
}

fn write_raster(image: &Image, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + image.data().len() * 4);
    buf.extend_from_slice(&(image.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(image.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(CHANNELS as u32).to_le_bytes());
    for &v in image.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_raster(path: &Path) -> Result<Image> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 12];
    f.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    let h = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    if c != CHANNELS {
        return Err(Error::Format(format!(
            "{}: expected {CHANNELS} channels, got {c}",
            path.display()
        )));
    }
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != h * w * c * 4 {
        return Err(Error::Format(format!(
            "{}: raster payload has {} bytes, expected {}",
            path.display(),
            bytes.len(),
            h * w * c * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|ch| f32::from_le_bytes(ch.try_into().unwrap()))
        .collect();
    Image::from_data(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::mix;

    #[test]
    fn render_is_deterministic() {
        let cfg = SceneConfig::default();
        let a = render_scene(7, &cfg).unwrap();
        let b = render_scene(7, &cfg).unwrap();
        assert_eq!(a, b);
        let c = render_scene(8, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_range_renders_one_shape() {
        let cfg = SceneConfig {
            shapes_per_image: (1, 1),
            ..SceneConfig::default()
        };
        for seed in 0..20 {
            let s = render_scene(seed, &cfg).unwrap();
            assert_eq!(s.targets.len(), 1);
        }
    }

    #[test]
    fn rejects_tiny_shapes_and_bad_category_count() {
        let mut cfg = SceneConfig {
            size_range: (3.0, 20.0),
            ..SceneConfig::default()
        };
        assert!(render_scene(0, &cfg).is_err());
        cfg.size_range = (10.0, 20.0);
        cfg.categories = 1;
        assert!(render_scene(0, &cfg).is_err());
        cfg.categories = 4;
        assert!(render_scene(0, &cfg).is_err());
    }

    /// Mask containment oracle: every pixel whose center lies inside a shape
    /// must lie inside that shape's reported bounding box.
    #[test]
    fn rendered_pixels_contained_in_boxes() {
        let cfg = SceneConfig::default();
        for seed in 0..10 {
            let (sample, shapes) = render_scene_detailed(seed, &cfg).unwrap();
            for (geom, target) in shapes.iter().zip(&sample.targets) {
                let b = target.bbox();
                for y in 0..sample.image.height() {
                    for x in 0..sample.image.width() {
                        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                        if geom.contains(px, py) {
                            assert!(
                                px >= b.x_min() && px <= b.x_max() && py >= b.y_min() && py <= b.y_max(),
                                "pixel ({px}, {py}) escapes bbox of {geom:?}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn identity_noise_is_identity() {
        let cfg = SceneConfig::default();
        let s = render_scene(3, &cfg).unwrap();
        let noisy = corrupt_annotations(&s, &NoiseConfig::none()).unwrap();
        assert_eq!(s, noisy);
    }

    #[test]
    fn drop_all_keeps_clean_copy() {
        let cfg = SceneConfig::default();
        let s = render_scene(3, &cfg).unwrap();
        let noise = NoiseConfig {
            p_miss: 0.999_999_999,
            sigma_loc: 0.0,
            seed: 1,
        };
        let noisy = corrupt_annotations(&s, &noise).unwrap();
        assert!(noisy.targets.is_empty());
        assert!(!s.targets.is_empty());
    }

    #[test]
    fn noisy_count_never_exceeds_clean_and_sigma_zero_is_exact() {
        let cfg = SceneConfig::default();
        let noise = NoiseConfig {
            p_miss: 0.3,
            sigma_loc: 0.0,
            seed: 5,
        };
        for seed in 0..50 {
            let s = render_scene(seed, &cfg).unwrap();
            let noisy = corrupt_annotations(&s, &noise).unwrap();
            assert!(noisy.targets.len() <= s.targets.len());
            // With sigma 0 every survivor equals some clean target exactly.
            for t in &noisy.targets {
                assert!(s.targets.contains(t));
            }
        }
    }

    /// Monte-Carlo drop rate over >= 10^4 boxes concentrates around p_miss.
    #[test]
    fn empirical_drop_rate_matches_p_miss() {
        let cfg = SceneConfig::default();
        let noise = NoiseConfig {
            p_miss: 0.3,
            sigma_loc: 0.0,
            seed: 11,
        };
        let mut total = 0usize;
        let mut dropped = 0usize;
        let mut seed = 0u64;
        while total < 10_000 {
            let s = render_scene(mix(99, seed), &cfg).unwrap();
            let noisy = corrupt_annotations(&s, &noise).unwrap();
            total += s.targets.len();
            dropped += s.targets.len() - noisy.targets.len();
            seed += 1;
        }
        let rate = dropped as f64 / total as f64;
        assert!(
            (0.28..=0.32).contains(&rate),
            "drop rate {rate} over {total} boxes"
        );
    }

    #[test]
    fn jittered_boxes_stay_valid_and_clipped() {
        let cfg = SceneConfig::default();
        let noise = NoiseConfig {
            p_miss: 0.0,
            sigma_loc: 6.0,
            seed: 2,
        };
        for seed in 0..30 {
            let s = render_scene(seed, &cfg).unwrap();
            let noisy = corrupt_annotations(&s, &noise).unwrap();
            assert_eq!(noisy.targets.len(), s.targets.len());
            for t in &noisy.targets {
                let b = t.bbox();
                assert!(b.x_min() >= 0.0 && b.y_min() >= 0.0);
                assert!(b.x_max() <= 64.0 && b.y_max() <= 64.0);
            }
        }
    }

    #[test]
    fn dataset_ids_and_determinism() {
        let scene = SceneConfig::default();
        let noise = NoiseConfig::default();
        let d1 = Dataset::generate(3, &scene, &noise, 42).unwrap();
        let d2 = Dataset::generate(3, &scene, &noise, 42).unwrap();
        assert_eq!(d1, d2);
        let ids: Vec<u64> = d1.entries.iter().map(|e| e.sample.id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn dataset_clean_targets_match_fresh_render() {
        let scene = SceneConfig::default();
        let noise = NoiseConfig::default();
        let d = Dataset::generate(4, &scene, &noise, 42).unwrap();
        for (i, entry) in d.entries.iter().enumerate() {
            let fresh = render_scene(mix(42, i as u64), &scene).unwrap();
            assert_eq!(entry.clean_targets, fresh.targets);
            assert_eq!(entry.sample.image, fresh.image);
        }
    }

    #[test]
    fn export_import_round_trip() {
        let scene = SceneConfig::default();
        let noise = NoiseConfig::default();
        let d = Dataset::generate(3, &scene, &noise, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&d, dir.path()).unwrap();
        let back = import_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), d.len());
        for (a, b) in d.entries.iter().zip(&back.entries) {
            assert_eq!(a.sample.image, b.sample.image);
            assert_eq!(a.sample.targets.len(), b.sample.targets.len());
            for (ta, tb) in a.sample.targets.iter().zip(&b.sample.targets) {
                assert_eq!(ta.bbox(), tb.bbox());
                assert_eq!(ta.category(), tb.category());
            }
            assert_eq!(a.clean_targets.len(), b.clean_targets.len());
        }
    }
}
