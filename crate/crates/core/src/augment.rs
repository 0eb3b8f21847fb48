//! Normal and strong augmentation pipelines with exact bounding-box
//! remapping.
//!
//! The normal pipeline is scale jitter plus four photometric jitters; the
//! strong pipeline adds translation, rotation, shear and cutout. Geometric
//! transforms resample the image with nearest-neighbor lookup and remap every
//! box by transforming its corners and taking the axis-aligned hull. Boxes
//! that lose more than 75% of their area to clipping (or fall below 4 px^2)
//! are dropped and recorded.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::synth::{LabeledBox, Sample};

/// Pipeline strength.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strength {
    Normal,
    Strong,
}

/// The transformations of the augmentation pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    ScaleJitter,
    Solarize,
    Brightness,
    Contrast,
    Sharpness,
    Translate,
    Rotate,
    Shear,
    Cutout,
}

impl TransformKind {
    /// Geometric transforms move pixels and therefore remap boxes.
    pub fn is_geometric(&self) -> bool {
        matches!(
            self,
            TransformKind::ScaleJitter
                | TransformKind::Translate
                | TransformKind::Rotate
                | TransformKind::Shear
        )
    }
}

/// One pipeline entry: a transform, its firing probability and the range its
/// magnitude is sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub probability: f64,
    pub magnitude_range: (f64, f64),
}

/// An augmentation pipeline: ordered transform specs at a given strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub strength: Strength,
    pub specs: Vec<TransformSpec>,
}

/// Number of cutout patches is drawn uniformly from 1..=5.
pub const CUTOUT_MAX_PATCHES: u32 = 5;

/// Builds the fixed pipeline for a strength level.
///
/// Normal: always-on scale jitter (factor in (0.5, 1.5)) plus solarize,
/// brightness, contrast and sharpness jitter, each with p = 0.25 and ratio in
/// (0, 1). Strong additionally applies translation (p = 0.3, ratio in
/// (0, 0.1)), rotation and shear (p = 0.3, angle in (0, 30) degrees) and
/// always-on cutout (1..=5 patches, side ratio in (0.05, 0.2)).
pub fn build_pipeline(strength: Strength) -> Pipeline {
    let mut specs = vec![
        TransformSpec {
            kind: TransformKind::ScaleJitter,
            probability: 1.0,
            magnitude_range: (0.5, 1.5),
        },
        TransformSpec {
            kind: TransformKind::Solarize,
            probability: 0.25,
            magnitude_range: (0.0, 1.0),
        },
        TransformSpec {
            kind: TransformKind::Brightness,
            probability: 0.25,
            magnitude_range: (0.0, 1.0),
        },
        TransformSpec {
            kind: TransformKind::Contrast,
            probability: 0.25,
            magnitude_range: (0.0, 1.0),
        },
        TransformSpec {
            kind: TransformKind::Sharpness,
            probability: 0.25,
            magnitude_range: (0.0, 1.0),
        },
    ];
    if strength == Strength::Strong {
        specs.extend([
            TransformSpec {
                kind: TransformKind::Translate,
                probability: 0.3,
                magnitude_range: (0.0, 0.1),
            },
            TransformSpec {
                kind: TransformKind::Rotate,
                probability: 0.3,
                magnitude_range: (0.0, 30.0),
            },
            TransformSpec {
                kind: TransformKind::Shear,
                probability: 0.3,
                magnitude_range: (0.0, 30.0),
            },
            TransformSpec {
                kind: TransformKind::Cutout,
                probability: 1.0,
                magnitude_range: (0.05, 0.2),
            },
        ]);
    }
    Pipeline { strength, specs }
}

/// Shear/translation axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

/// One applied transform, as recorded for replay diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugEvent {
    pub kind: TransformKind,
    /// Sampled magnitude: factor, photometric ratio, signed translation
    /// ratio, signed angle in degrees, or cutout patch count.
    pub magnitude: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub axis: Option<Axis>,
}

/// What an augmentation pipeline did to a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugRecord {
    pub strength: Strength,
    pub applied: Vec<AugEvent>,
    /// Input-target indices that survived remapping, in output order.
    pub kept_targets: Vec<usize>,
    /// Input-target indices dropped by the clipped-area rule.
    pub dropped_targets: Vec<usize>,
    pub input_target_count: usize,
}

impl AugRecord {
    /// True when the sample had targets and augmentation dropped all of them.
    pub fn all_targets_dropped(&self) -> bool {
        self.input_target_count > 0 && self.kept_targets.is_empty()
    }

    /// Single-line JSON form for debugging replay logs.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// A concrete geometric transform with sampled parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeoTransform {
    /// Uniform rescale of canvas and coordinates.
    Scale { factor: f64 },
    /// Pixel shift.
    Translate { dx: f64, dy: f64 },
    /// Rotation about the canvas center, degrees.
    Rotate { degrees: f64 },
    /// Shear about the canvas center, degrees converted to a slope.
    Shear { degrees: f64, axis: Axis },
}

/// Row-major 2x3 affine map (x, y) -> (a x + b y + tx, c x + d y + ty).
#[derive(Debug, Clone, Copy)]
struct Affine {
    a: f64,
    b: f64,
    tx: f64,
    c: f64,
    d: f64,
    ty: f64,
}

impl Affine {
    fn translation(dx: f64, dy: f64) -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            tx: dx,
            c: 0.0,
            d: 1.0,
            ty: dy,
        }
    }

    fn scale(s: f64) -> Self {
        Self {
            a: s,
            b: 0.0,
            tx: 0.0,
            c: 0.0,
            d: s,
            ty: 0.0,
        }
    }

    fn rotation_about(cx: f64, cy: f64, radians: f64) -> Self {
        let (sin, cos) = radians.sin_cos();
        Self {
            a: cos,
            b: -sin,
            tx: cx - cos * cx + sin * cy,
            c: sin,
            d: cos,
            ty: cy - sin * cx - cos * cy,
        }
    }

    fn shear_about(cx: f64, cy: f64, slope: f64, axis: Axis) -> Self {
        match axis {
            Axis::X => Self {
                a: 1.0,
                b: slope,
                tx: -slope * cy,
                c: 0.0,
                d: 1.0,
                ty: 0.0,
            },
            Axis::Y => Self {
                a: 1.0,
                b: 0.0,
                tx: 0.0,
                c: slope,
                d: 1.0,
                ty: -slope * cx,
            },
        }
    }

    #[inline]
    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a * x + self.b * y + self.tx,
            self.c * x + self.d * y + self.ty,
        )
    }

    fn inverse(&self) -> Affine {
        let det = self.a * self.d - self.b * self.c;
        let (ia, ib, ic, id) = (self.d / det, -self.b / det, -self.c / det, self.a / det);
        Affine {
            a: ia,
            b: ib,
            tx: -(ia * self.tx + ib * self.ty),
            c: ic,
            d: id,
            ty: -(ic * self.tx + id * self.ty),
        }
    }
}

impl GeoTransform {
    fn affine(&self, width: f64, height: f64) -> Affine {
        let (cx, cy) = (width / 2.0, height / 2.0);
        match *self {
            GeoTransform::Scale { factor } => Affine::scale(factor),
            GeoTransform::Translate { dx, dy } => Affine::translation(dx, dy),
            GeoTransform::Rotate { degrees } => {
                Affine::rotation_about(cx, cy, degrees.to_radians())
            }
            GeoTransform::Shear { degrees, axis } => {
                Affine::shear_about(cx, cy, degrees.to_radians().tan(), axis)
            }
        }
    }

    fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        match *self {
            GeoTransform::Scale { factor } => (
                ((height as f64 * factor).round() as usize).max(1),
                ((width as f64 * factor).round() as usize).max(1),
            ),
            _ => (height, width),
        }
    }
}

const MIN_BOX_AREA: f64 = 4.0;
const MIN_AREA_FRACTION: f64 = 0.25;

/// Which input targets survived a remapping, by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RemapOutcome {
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

fn remap_targets(
    targets: &[LabeledBox],
    affine: &Affine,
    out_width: f64,
    out_height: f64,
) -> (Vec<LabeledBox>, RemapOutcome) {
    let mut out = Vec::with_capacity(targets.len());
    let mut outcome = RemapOutcome::default();
    for (i, t) in targets.iter().enumerate() {
        let b = t.bbox();
        let corners = [
            affine.apply(b.x_min(), b.y_min()),
            affine.apply(b.x_max(), b.y_min()),
            affine.apply(b.x_min(), b.y_max()),
            affine.apply(b.x_max(), b.y_max()),
        ];
        let xs = corners.map(|(x, _)| x);
        let ys = corners.map(|(_, y)| y);
        let hull = BBox::new(
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            ys.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        let clipped = hull
            .ok()
            .and_then(|h| h.clip(0.0, 0.0, out_width, out_height));
        match clipped {
            Some(c) if c.area() >= MIN_AREA_FRACTION * b.area() && c.area() >= MIN_BOX_AREA => {
                out.push(t.with_bbox(c));
                outcome.kept.push(i);
            }
            _ => outcome.dropped.push(i),
        }
    }
    (out, outcome)
}

fn resample(image: &Image, inverse: &Affine, out_h: usize, out_w: usize) -> Image {
    let fill = image.mean();
    let mut out = Image::new(out_h, out_w, fill);
    let (h, w) = (image.height() as isize, image.width() as isize);
    for y in 0..out_h {
        for x in 0..out_w {
            let (sx, sy) = inverse.apply(x as f64 + 0.5, y as f64 + 0.5);
            let ix = sx.floor() as isize;
            let iy = sy.floor() as isize;
            if ix >= 0 && ix < w && iy >= 0 && iy < h {
                out.set_pixel(y, x, image.pixel(iy as usize, ix as usize));
            }
        }
    }
    out
}

/// Applies a geometric transform: nearest-neighbor image resampling with
/// mean-fill background, and corner-hull box remapping with the clipped-area
/// survival rule.
pub fn apply_geometric(sample: &Sample, transform: &GeoTransform) -> (Sample, RemapOutcome) {
    let (h, w) = (sample.image.height(), sample.image.width());
    let (out_h, out_w) = transform.output_size(h, w);
    let affine = transform.affine(w as f64, h as f64);
    let image = resample(&sample.image, &affine.inverse(), out_h, out_w);
    let (targets, outcome) = remap_targets(&sample.targets, &affine, out_w as f64, out_h as f64);
    (
        Sample {
            id: sample.id,
            image,
            targets,
        },
        outcome,
    )
}

/// Applies a photometric transform with magnitude `r` in (0, 1). Boxes are
/// untouched by construction; input pixels must lie in [0, 1].
pub fn apply_photometric(image: &Image, kind: TransformKind, r: f64) -> Result<Image> {
    image.validate_range()?;
    let r = r as f32;
    let mut out = image.clone();
    match kind {
        TransformKind::Solarize => {
            for v in out.data_mut() {
                if *v > r {
                    *v = 1.0 - *v;
                }
            }
        }
        TransformKind::Brightness => {
            let f = 0.5 + r;
            for v in out.data_mut() {
                *v = (*v * f).clamp(0.0, 1.0);
            }
        }
        TransformKind::Contrast => {
            let f = 0.5 + r;
            let mean = image.mean();
            for v in out.data_mut() {
                *v = (mean + f * (*v - mean)).clamp(0.0, 1.0);
            }
        }
        TransformKind::Sharpness => {
            let blurred = box_blur_3x3(image);
            for (v, &b) in out.data_mut().iter_mut().zip(blurred.data()) {
                *v = (*v + r * (*v - b)).clamp(0.0, 1.0);
            }
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "{other:?} is not a photometric transform"
            )))
        }
    }
    Ok(out)
}

/// 3x3 box blur per channel; border pixels average their in-image neighbors.
fn box_blur_3x3(image: &Image) -> Image {
    let (h, w) = (image.height() as isize, image.width() as isize);
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            let mut n = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && yy < h && xx >= 0 && xx < w {
                        let p = image.pixel(yy as usize, xx as usize);
                        acc[0] += p[0];
                        acc[1] += p[1];
                        acc[2] += p[2];
                        n += 1;
                    }
                }
            }
            out.set_pixel(
                y as usize,
                x as usize,
                [acc[0] / n as f32, acc[1] / n as f32, acc[2] / n as f32],
            );
        }
    }
    out
}

/// Fills 1..=5 random square patches with the image mean. Annotations are
/// never edited by cutout.
pub fn apply_cutout(sample: &Sample, rng: &mut impl Rng, ratio_range: (f64, f64)) -> (Sample, u32) {
    let mut image = sample.image.clone();
    let fill = image.mean();
    let (h, w) = (image.height(), image.width());
    let min_side = h.min(w) as f64;
    let count = rng.random_range(1..=CUTOUT_MAX_PATCHES);
    for _ in 0..count {
        let side = (rng.random_range(ratio_range.0..ratio_range.1) * min_side).round() as usize;
        let side = side.clamp(1, h.min(w));
        let y0 = rng.random_range(0..=(h - side));
        let x0 = rng.random_range(0..=(w - side));
        image.fill_rect(y0, x0, y0 + side, x0 + side, [fill, fill, fill]);
    }
    (
        Sample {
            id: sample.id,
            image,
            targets: sample.targets.clone(),
        },
        count,
    )
}

/// Fits a sample onto a fixed canvas: content is pasted at the origin,
/// cropped if larger, mean-filled if smaller; boxes are clipped under the
/// usual survival rule. Identity when the size already matches.
pub fn fit_to_canvas(sample: &Sample, height: usize, width: usize) -> (Sample, RemapOutcome) {
    let (h, w) = (sample.image.height(), sample.image.width());
    if (h, w) == (height, width) {
        let outcome = RemapOutcome {
            kept: (0..sample.targets.len()).collect(),
            dropped: Vec::new(),
        };
        return (sample.clone(), outcome);
    }
    let fill = sample.image.mean();
    let mut image = Image::new(height, width, fill);
    for y in 0..h.min(height) {
        for x in 0..w.min(width) {
            image.set_pixel(y, x, sample.image.pixel(y, x));
        }
    }
    let identity = Affine::translation(0.0, 0.0);
    let (targets, outcome) =
        remap_targets(&sample.targets, &identity, width as f64, height as f64);
    (
        Sample {
            id: sample.id,
            image,
            targets,
        },
        outcome,
    )
}

/// Runs a pipeline over a sample. Every spec draws its firing coin in the
/// fixed pipeline order, so results are reproducible from the RNG seed alone.
pub fn apply_pipeline(
    sample: &Sample,
    pipeline: &Pipeline,
    rng: &mut impl Rng,
) -> Result<(Sample, AugRecord)> {
    let input_target_count = sample.targets.len();
    let mut current = sample.clone();
    // orig_index[i] is the input index of current.targets[i].
    let mut orig_index: Vec<usize> = (0..input_target_count).collect();
    let mut dropped: Vec<usize> = Vec::new();
    let mut applied: Vec<AugEvent> = Vec::new();

    for spec in &pipeline.specs {
        let fired = rng.random::<f64>() < spec.probability;
        if !fired {
            continue;
        }
        let (lo, hi) = spec.magnitude_range;
        match spec.kind {
            TransformKind::ScaleJitter => {
                let factor = rng.random_range(lo..hi);
                let (next, outcome) = apply_geometric(&current, &GeoTransform::Scale { factor });
                advance(&mut current, next, &mut orig_index, &mut dropped, &outcome);
                applied.push(AugEvent {
                    kind: spec.kind,
                    magnitude: factor,
                    axis: None,
                });
            }
            TransformKind::Solarize
            | TransformKind::Brightness
            | TransformKind::Contrast
            | TransformKind::Sharpness => {
                let r = rng.random_range(lo..hi);
                current.image = apply_photometric(&current.image, spec.kind, r)?;
                applied.push(AugEvent {
                    kind: spec.kind,
                    magnitude: r,
                    axis: None,
                });
            }
            TransformKind::Translate => {
                let ratio = rng.random_range(lo..hi);
                let signed = if rng.random::<bool>() { ratio } else { -ratio };
                let axis = if rng.random::<bool>() { Axis::X } else { Axis::Y };
                let (dx, dy) = match axis {
                    Axis::X => (signed * current.image.width() as f64, 0.0),
                    Axis::Y => (0.0, signed * current.image.height() as f64),
                };
                let (next, outcome) =
                    apply_geometric(&current, &GeoTransform::Translate { dx, dy });
                advance(&mut current, next, &mut orig_index, &mut dropped, &outcome);
                applied.push(AugEvent {
                    kind: spec.kind,
                    magnitude: signed,
                    axis: Some(axis),
                });
            }
            TransformKind::Rotate => {
                let deg = rng.random_range(lo..hi);
                let signed = if rng.random::<bool>() { deg } else { -deg };
                let (next, outcome) =
                    apply_geometric(&current, &GeoTransform::Rotate { degrees: signed });
                advance(&mut current, next, &mut orig_index, &mut dropped, &outcome);
                applied.push(AugEvent {
                    kind: spec.kind,
                    magnitude: signed,
                    axis: None,
                });
            }
            TransformKind::Shear => {
                let deg = rng.random_range(lo..hi);
                let signed = if rng.random::<bool>() { deg } else { -deg };
                let axis = if rng.random::<bool>() { Axis::X } else { Axis::Y };
                let (next, outcome) = apply_geometric(
                    &current,
                    &GeoTransform::Shear {
                        degrees: signed,
                        axis,
                    },
                );
                advance(&mut current, next, &mut orig_index, &mut dropped, &outcome);
                applied.push(AugEvent {
                    kind: spec.kind,
                    magnitude: signed,
                    axis: Some(axis),
                });
            }
            TransformKind::Cutout => {
                let (next, count) = apply_cutout(&current, rng, spec.magnitude_range);
                current = next;
                applied.push(AugEvent {
                    kind: spec.kind,
                    magnitude: count as f64,
                    axis: None,
                });
            }
        }
    }

    let record = AugRecord {
        strength: pipeline.strength,
        applied,
        kept_targets: orig_index,
        dropped_targets: dropped,
        input_target_count,
    };
    Ok((current, record))
}

fn advance(
    current: &mut Sample,
    next: Sample,
    orig_index: &mut Vec<usize>,
    dropped: &mut Vec<usize>,
    outcome: &RemapOutcome,
) {
    dropped.extend(outcome.dropped.iter().map(|&i| orig_index[i]));
    *orig_index = outcome.kept.iter().map(|&i| orig_index[i]).collect();
    *current = next;
}
