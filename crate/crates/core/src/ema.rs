//! The exponential-moving-average teacher.
//!
//! The teacher holds a shadow copy of the student parameters, updated as
//! `theta_t <- m * theta_t + (1 - m) * theta_s` after every optimizer step.
//! One teacher forward per image serves both pseudo-box generation and
//! target scoring; [`TeacherInference`] can only be built through that single
//! forward, which is counted for verification.

use std::cell::Cell;

use crate::boxes::BBox;
use crate::detector::{
    decode_detections, forward, forward_flexible, proposals_from, DetectorConfig, ModelParams,
    Proposals,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::synth::LabeledBox;

/// EMA state: shadow parameters, momentum and bookkeeping.
#[derive(Debug, Clone)]
pub struct EmaTeacher {
    params: ModelParams,
    momentum: f64,
    update_count: u64,
    forward_count: Cell<u64>,
}

impl EmaTeacher {
    /// The teacher starts as a copy of the student.
    pub fn new(student: &ModelParams, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!(
                "EMA momentum {momentum} outside [0, 1]"
            )));
        }
        Ok(Self {
            params: student.clone(),
            momentum,
            update_count: 0,
            forward_count: Cell::new(0),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    /// Teacher forwards performed so far (instrumentation).
    pub fn forward_count(&self) -> u64 {
        self.forward_count.get()
    }

    /// Restores a teacher from persisted parameters.
    pub fn from_params(params: ModelParams, momentum: f64, update_count: u64) -> Self {
        Self {
            params,
            momentum,
            update_count,
            forward_count: Cell::new(0),
        }
    }

    /// One EMA update from the current student parameters.
    pub fn update(&mut self, student: &ModelParams) -> Result<()> {
        if student.len() != self.params.len() {
            return Err(Error::LengthMismatch(format!(
                "student has {} parameters, teacher has {}",
                student.len(),
                self.params.len()
            )));
        }
        let m = self.momentum;
        for (t, &s) in self.params.values_mut().iter_mut().zip(student.values()) {
            *t = m * *t + (1.0 - m) * s;
        }
        self.update_count += 1;
        Ok(())
    }

    /// Runs the single teacher forward on a raw image.
    pub fn infer(&self, cfg: &DetectorConfig, image: &Image) -> Result<TeacherInference> {
        self.forward_count.set(self.forward_count.get() + 1);
        let pass = forward(cfg, &self.params, image)?;
        Ok(TeacherInference {
            cfg: cfg.clone(),
            proposals: proposals_from(cfg, &pass),
            scale_back: 1.0,
            original_width: image.width() as f64,
            original_height: image.height() as f64,
        })
    }

    /// Teacher forward on a scale-jittered copy of the image; output boxes
    /// are mapped back to original image coordinates. The realized factor is
    /// quantized so the jittered size stays divisible by the downsampling
    /// factor.
    pub fn infer_scaled(
        &self,
        cfg: &DetectorConfig,
        image: &Image,
        factor: f64,
    ) -> Result<TeacherInference> {
        let quantize = |v: usize| -> usize {
            let scaled = (v as f64 * factor / 4.0).round().max(1.0) as usize;
            scaled * 4
        };
        let (jh, jw) = (quantize(image.height()), quantize(image.width()));
        self.forward_count.set(self.forward_count.get() + 1);
        let jittered = image.resize_nearest(jh, jw);
        let pass = forward_flexible(cfg, &self.params, &jittered)?;
        Ok(TeacherInference {
            cfg: cfg.clone(),
            proposals: proposals_from(cfg, &pass),
            scale_back: image.width() as f64 / jw as f64,
            original_width: image.width() as f64,
            original_height: image.height() as f64,
        })
    }
}

/// The outputs of one teacher forward, shared between pseudo-box generation
/// and target scoring.
pub struct TeacherInference {
    cfg: DetectorConfig,
    proposals: Proposals,
    /// Multiplier mapping teacher-input coordinates back to the original
    /// image (1.0 without scale jitter).
    scale_back: f64,
    original_width: f64,
    original_height: f64,
}

impl TeacherInference {
    pub fn proposals(&self) -> &Proposals {
        &self.proposals
    }

    /// Pseudo boxes: decoded detections above the score threshold,
    /// deduplicated by NMS, mapped back to original image coordinates.
    pub fn pseudo_boxes(&self, score_threshold: f64, nms_threshold: f64) -> Vec<LabeledBox> {
        let dets = decode_detections(&self.cfg, &self.proposals, score_threshold, nms_threshold);
        dets.into_iter()
            .filter_map(|d| {
                let b = d.bbox();
                let mapped = BBox::new(
                    b.x_min() * self.scale_back,
                    b.y_min() * self.scale_back,
                    b.x_max() * self.scale_back,
                    b.y_max() * self.scale_back,
                )
                .ok()?
                .clip(0.0, 0.0, self.original_width, self.original_height)?;
                LabeledBox::pseudo(mapped, d.category(), d.score()).ok()
            })
            .collect()
    }

    /// Foreground score of each target: the teacher's softmax probability
    /// for the target's category at the proposal whose predicted box best
    /// overlaps the target.
    pub fn score_targets(&self, targets: &[LabeledBox]) -> Vec<f64> {
        targets
            .iter()
            .map(|t| {
                let tb = t.bbox();
                // Map the target into teacher-input coordinates when jittered.
                let s = 1.0 / self.scale_back;
                let scaled = BBox::new(
                    tb.x_min() * s,
                    tb.y_min() * s,
                    tb.x_max() * s,
                    tb.y_max() * s,
                )
                .expect("uniform scaling preserves validity");
                let (mut best_i, mut best_iou) = (0usize, f64::NEG_INFINITY);
                for i in 0..self.proposals.len() {
                    let pb = self
                        .proposals
                        .predicted_box(i)
                        .unwrap_or(*self.proposals.anchor(i));
                    let v = pb.iou(&scaled);
                    if v > best_iou {
                        best_i = i;
                        best_iou = v;
                    }
                }
                self.proposals.softmax(best_i)[t.category()]
            })
            .collect()
    }
}
