//! A minimal proposal-grid detector: explicit forward/backward passes,
//! IoU-based label assignment with a forced-best rule, a per-target-weighted
//! detection loss, and SGD with momentum.
//!
//! One proposal per grid cell. The anchor of a cell is a square box centered
//! on the cell, with side `anchor_scale` times the downsampling stride. Box
//! deltas use the usual anchor-relative parameterization: center offsets
//! divided by anchor size, log-scale width and height.

mod net;

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::{nms, BBox, ScoredBox};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::stream;
use crate::synth::LabeledBox;

pub use net::ForwardPass;
use net::{forward_any, Layout};

/// Static configuration of the detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub image_height: usize,
    pub image_width: usize,
    /// Convolution feature width.
    pub features: usize,
    /// Number of foreground categories; the head adds one background class.
    pub categories: usize,
    /// Anchor side as a multiple of the grid stride.
    pub anchor_scale: f64,
    /// Foreground IoU threshold for label assignment.
    pub fg_iou_threshold: f64,
    /// Weight of the box-regression term in the loss.
    pub reg_weight: f64,
    /// Smooth-L1 transition point.
    pub smooth_l1_delta: f64,
    /// Category-agnostic NMS in decoding (off by default).
    pub class_agnostic_nms: bool,
    /// Cap on decoded detections per image.
    pub max_detections: usize,
}

/// Total downsampling factor of the two stride-2 stages.
pub const DOWNSAMPLE: usize = 4;

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            image_height: 64,
            image_width: 64,
            features: 16,
            categories: 3,
            anchor_scale: 4.0,
            fg_iou_threshold: 0.5,
            reg_weight: 1.0,
            smooth_l1_delta: 1.0,
            class_agnostic_nms: false,
            max_detections: 100,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_height % DOWNSAMPLE != 0
            || self.image_width % DOWNSAMPLE != 0
            || self.image_height < DOWNSAMPLE
            || self.image_width < DOWNSAMPLE
        {
            return Err(Error::InvalidConfig(format!(
                "image size {}x{} must be a positive multiple of {DOWNSAMPLE}",
                self.image_height, self.image_width
            )));
        }
        if self.features == 0 || self.categories == 0 {
            return Err(Error::InvalidConfig(
                "features and categories must be positive".into(),
            ));
        }
        if self.anchor_scale <= 0.0 {
            return Err(Error::InvalidConfig("anchor_scale must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.fg_iou_threshold) {
            return Err(Error::InvalidConfig(
                "fg_iou_threshold must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn grid_height(&self) -> usize {
        self.image_height / DOWNSAMPLE
    }

    pub fn grid_width(&self) -> usize {
        self.image_width / DOWNSAMPLE
    }

    pub fn proposal_count(&self) -> usize {
        self.grid_height() * self.grid_width()
    }

    /// Classes including background.
    pub fn num_classes(&self) -> usize {
        self.categories + 1
    }

    pub fn background_class(&self) -> usize {
        self.categories
    }

    /// Head outputs per cell: logits plus 4 deltas.
    pub fn head_dim(&self) -> usize {
        self.num_classes() + 4
    }

    pub fn param_len(&self) -> usize {
        Layout::of(self).total
    }
}

/// Flat parameter vector of the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(cfg: &DetectorConfig) -> Self {
        Self {
            values: vec![0.0; cfg.param_len()],
        }
    }

    /// Uniform(-a, a) initialization per layer with a = sqrt(6 / (fan_in +
    /// fan_out)); biases start at zero.
    pub fn init(cfg: &DetectorConfig, seed: u64) -> Self {
        let mut rng = stream(seed);
        let layout = Layout::of(cfg);
        let f = cfg.features;
        let mut values = vec![0.0; layout.total];

        let k2 = net::KERNEL * net::KERNEL;
        let spans = [
            (
                layout.conv1_w..layout.conv1_b,
                net::IN_CHANNELS * k2,
                f * k2,
            ),
            (layout.conv2_w..layout.conv2_b, f * k2, f * k2),
            (layout.head_w..layout.head_b, f, cfg.head_dim()),
        ];
        for (range, fan_in, fan_out) in spans {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut values[range] {
                *v = rng.random_range(-a..a);
            }
        }
        Self { values }
    }

    pub fn from_values(cfg: &DetectorConfig, values: Vec<f64>) -> Result<Self> {
        if values.len() != cfg.param_len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", cfg.param_len()),
                got: format!("{}", values.len()),
            });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-cell predictions plus anchors, the unit consumed by assignment, loss
/// and decoding.
#[derive(Debug, Clone)]
pub struct Proposals {
    count: usize,
    num_classes: usize,
    anchors: Vec<BBox>,
    logits: Vec<f64>,
    deltas: Vec<f64>,
    image_width: f64,
    image_height: f64,
}

/// Read-only view of one proposal.
#[derive(Debug, Clone, Copy)]
pub struct Proposal<'a> {
    pub index: usize,
    pub anchor: &'a BBox,
    pub logits: &'a [f64],
    pub deltas: &'a [f64],
}

impl Proposals {
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn anchor(&self, i: usize) -> &BBox {
        &self.anchors[i]
    }

    pub fn logits(&self, i: usize) -> &[f64] {
        &self.logits[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn deltas(&self, i: usize) -> &[f64] {
        &self.deltas[i * 4..(i + 1) * 4]
    }

    pub fn get(&self, i: usize) -> Proposal<'_> {
        Proposal {
            index: i,
            anchor: self.anchor(i),
            logits: self.logits(i),
            deltas: self.deltas(i),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Proposal<'_>> {
        (0..self.count).map(move |i| self.get(i))
    }

    /// Softmax over all classes (background included) of one proposal.
    pub fn softmax(&self, i: usize) -> Vec<f64> {
        softmax(self.logits(i))
    }

    /// The predicted box of a proposal: deltas decoded against the anchor,
    /// clipped to the image. `None` when clipping removes it entirely.
    pub fn predicted_box(&self, i: usize) -> Option<BBox> {
        let d = self.deltas(i);
        decode_box(&[d[0], d[1], d[2], d[3]], self.anchor(i))
            .ok()
            .and_then(|b| b.clip(0.0, 0.0, self.image_width, self.image_height))
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln()
}

/// Square anchor boxes, one per grid cell, in row-major cell order.
pub fn anchor_grid(grid_h: usize, grid_w: usize, stride: f64, anchor_scale: f64) -> Vec<BBox> {
    let side = anchor_scale * stride;
    let half = side / 2.0;
    let mut anchors = Vec::with_capacity(grid_h * grid_w);
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let cx = (gx as f64 + 0.5) * stride;
            let cy = (gy as f64 + 0.5) * stride;
            anchors.push(
                BBox::new(cx - half, cy - half, cx + half, cy + half)
                    .expect("anchor side is positive"),
            );
        }
    }
    anchors
}

/// Runs the network on an image of the configured size.
pub fn forward(cfg: &DetectorConfig, params: &ModelParams, image: &Image) -> Result<ForwardPass> {
    if image.height() != cfg.image_height || image.width() != cfg.image_width {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", cfg.image_height, cfg.image_width),
            got: format!("{}x{}", image.height(), image.width()),
        });
    }
    forward_any(cfg, params, image)
}

/// Runs the network on an image whose size may differ from the configured
/// one (used for the teacher's scale-jittered inputs); the grid adapts to
/// the actual input size.
pub fn forward_flexible(
    cfg: &DetectorConfig,
    params: &ModelParams,
    image: &Image,
) -> Result<ForwardPass> {
    forward_any(cfg, params, image)
}

/// Extracts proposals (anchors, logits, deltas) from a forward pass.
pub fn proposals_from(cfg: &DetectorConfig, pass: &ForwardPass) -> Proposals {
    let (grid_h, grid_w) = pass.grid();
    let num_classes = cfg.num_classes();
    let head_dim = cfg.head_dim();
    let count = pass.proposal_count();
    let mut logits = Vec::with_capacity(count * num_classes);
    let mut deltas = Vec::with_capacity(count * 4);
    for i in 0..count {
        let h = pass.head_slice(i, head_dim);
        logits.extend_from_slice(&h[..num_classes]);
        deltas.extend_from_slice(&h[num_classes..]);
    }
    Proposals {
        count,
        num_classes,
        anchors: anchor_grid(grid_h, grid_w, DOWNSAMPLE as f64, cfg.anchor_scale),
        logits,
        deltas,
        image_width: (grid_w * DOWNSAMPLE) as f64,
        image_height: (grid_h * DOWNSAMPLE) as f64,
    }
}

/// Encodes a target box against an anchor: center offsets over anchor size,
/// log-scale width and height.
pub fn encode_box(target: &BBox, anchor: &BBox) -> [f64; 4] {
    let (tcx, tcy) = target.center();
    let (acx, acy) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    [
        (tcx - acx) / aw,
        (tcy - acy) / ah,
        (target.width() / aw).ln(),
        (target.height() / ah).ln(),
    ]
}

/// Inverse of [`encode_box`]; does not clip.
pub fn decode_box(deltas: &[f64; 4], anchor: &BBox) -> Result<BBox> {
    let (acx, acy) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let cx = acx + deltas[0] * aw;
    let cy = acy + deltas[1] * ah;
    let w = deltas[2].exp() * aw;
    let h = deltas[3].exp() * ah;
    BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
}

/// What a proposal trains against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalTarget {
    Background,
    Foreground {
        target: usize,
        /// Set when the forced-best rule assigned this proposal even though
        /// its anchor IoU is below the foreground threshold.
        forced: bool,
    },
}

/// Proposal-to-target mapping plus per-target loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub proposal_targets: Vec<ProposalTarget>,
    /// Per-target weight in {0, 1}; background terms always weigh 1.
    pub target_weights: Vec<f64>,
}

/// Maps each proposal to its max-IoU target when that IoU reaches the
/// foreground threshold, else background. Additionally the highest-IoU
/// proposal of every target is force-assigned to it (in target order,
/// skipping proposals claimed by earlier targets), so no target is ever left
/// without a proposal. Weights start at 1 and never remove targets from the
/// assignment.
pub fn assign_labels(
    proposals: &Proposals,
    targets: &[LabeledBox],
    fg_iou_threshold: f64,
) -> Assignment {
    let n = proposals.len();
    let mut proposal_targets = vec![ProposalTarget::Background; n];
    if targets.is_empty() {
        return Assignment {
            proposal_targets,
            target_weights: Vec::new(),
        };
    }

    // IoU matrix, proposals x targets.
    let mut ious = vec![0.0f64; n * targets.len()];
    for i in 0..n {
        let anchor = proposals.anchor(i);
        for (t, target) in targets.iter().enumerate() {
            ious[i * targets.len() + t] = anchor.iou(target.bbox());
        }
    }

    for i in 0..n {
        let row = &ious[i * targets.len()..(i + 1) * targets.len()];
        let (mut best_t, mut best_iou) = (0usize, row[0]);
        for (t, &v) in row.iter().enumerate().skip(1) {
            if v > best_iou {
                best_t = t;
                best_iou = v;
            }
        }
        if best_iou >= fg_iou_threshold {
            proposal_targets[i] = ProposalTarget::Foreground {
                target: best_t,
                forced: false,
            };
        }
    }

    // Forced-best pass: every target claims its best unclaimed proposal.
    let mut claimed = vec![false; n];
    for t in 0..targets.len() {
        let (mut best_i, mut best_iou) = (usize::MAX, f64::NEG_INFINITY);
        for i in 0..n {
            if claimed[i] {
                continue;
            }
            let v = ious[i * targets.len() + t];
            if v > best_iou {
                best_i = i;
                best_iou = v;
            }
        }
        if best_i != usize::MAX {
            claimed[best_i] = true;
            proposal_targets[best_i] = ProposalTarget::Foreground {
                target: t,
                forced: best_iou < fg_iou_threshold,
            };
        }
    }

    Assignment {
        proposal_targets,
        target_weights: vec![1.0; targets.len()],
    }
}

/// Loss value with per-proposal terms and the gradients needed by backprop.
#[derive(Debug, Clone)]
pub struct DetectionLoss {
    pub total: f64,
    /// Weighted contribution of each proposal to the total.
    pub per_proposal: Vec<f64>,
    d_logits: Vec<f64>,
    d_deltas: Vec<f64>,
}

impl DetectionLoss {
    /// Gradient of the total with respect to the head output, laid out like
    /// the forward head buffer.
    fn head_gradient(&self, num_classes: usize) -> Vec<f64> {
        let count = self.per_proposal.len();
        let head_dim = num_classes + 4;
        let mut d_head = vec![0.0; count * head_dim];
        for i in 0..count {
            let dst = &mut d_head[i * head_dim..(i + 1) * head_dim];
            dst[..num_classes]
                .copy_from_slice(&self.d_logits[i * num_classes..(i + 1) * num_classes]);
            dst[num_classes..].copy_from_slice(&self.d_deltas[i * 4..(i + 1) * 4]);
        }
        d_head
    }
}

fn smooth_l1(x: f64, delta: f64) -> (f64, f64) {
    if x.abs() <= delta {
        (0.5 * x * x / delta, x / delta)
    } else {
        (x.abs() - 0.5 * delta, x.signum())
    }
}

/// Weighted detection loss: for assigned proposals, cross-entropy on the
/// target category plus smooth-L1 on encoded deltas, weighted by the
/// target's weight; for background proposals, cross-entropy on the
/// background class with weight 1.
pub fn detection_loss(
    cfg: &DetectorConfig,
    proposals: &Proposals,
    assignment: &Assignment,
    targets: &[LabeledBox],
) -> DetectionLoss {
    let nc = proposals.num_classes();
    let n = proposals.len();
    let mut total = 0.0;
    let mut per_proposal = vec![0.0; n];
    let mut d_logits = vec![0.0; n * nc];
    let mut d_deltas = vec![0.0; n * 4];

    for i in 0..n {
        let logits = proposals.logits(i);
        let lse = log_sum_exp(logits);
        let (class, weight) = match assignment.proposal_targets[i] {
            ProposalTarget::Background => (cfg.background_class(), 1.0),
            ProposalTarget::Foreground { target, .. } => (
                targets[target].category(),
                assignment.target_weights[target],
            ),
        };
        if weight == 0.0 {
            continue;
        }

        let ce = lse - logits[class];
        let mut term = ce;
        let dl = &mut d_logits[i * nc..(i + 1) * nc];
        for (c, slot) in dl.iter_mut().enumerate() {
            let p = (logits[c] - lse).exp();
            *slot = weight * (p - if c == class { 1.0 } else { 0.0 });
        }

        if let ProposalTarget::Foreground { target, .. } = assignment.proposal_targets[i] {
            let encoded = encode_box(targets[target].bbox(), proposals.anchor(i));
            let pred = proposals.deltas(i);
            let dd = &mut d_deltas[i * 4..(i + 1) * 4];
            let mut reg = 0.0;
            for k in 0..4 {
                let (v, g) = smooth_l1(pred[k] - encoded[k], cfg.smooth_l1_delta);
                reg += v;
                dd[k] = weight * cfg.reg_weight * g;
            }
            term += cfg.reg_weight * reg;
        }

        let weighted = weight * term;
        per_proposal[i] = weighted;
        total += weighted;
    }

    DetectionLoss {
        total,
        per_proposal,
        d_logits,
        d_deltas,
    }
}

/// Backpropagates a detection loss to a full parameter gradient.
pub fn backward(
    cfg: &DetectorConfig,
    params: &ModelParams,
    pass: &ForwardPass,
    loss: &DetectionLoss,
) -> Result<Vec<f64>> {
    let d_head = loss.head_gradient(cfg.num_classes());
    net::backward(cfg, params, pass, &d_head)
}

/// SGD with classical momentum: v <- m v + g; theta <- theta - lr v.
#[derive(Debug, Clone)]
pub struct SgdOptimizer {
    velocity: Vec<f64>,
    momentum: f64,
}

impl SgdOptimizer {
    pub fn new(param_len: usize, momentum: f64) -> Self {
        Self {
            velocity: vec![0.0; param_len],
            momentum,
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: Vec<f64>) -> Result<()> {
        if velocity.len() != self.velocity.len() {
            return Err(Error::LengthMismatch(format!(
                "velocity has {} entries, expected {}",
                velocity.len(),
                self.velocity.len()
            )));
        }
        self.velocity = velocity;
        Ok(())
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != params.len() {
            return Err(Error::LengthMismatch(format!(
                "gradient has {} entries, expected {}",
                grad.len(),
                params.len()
            )));
        }
        for ((v, &g), p) in self
            .velocity
            .iter_mut()
            .zip(grad)
            .zip(params.values_mut().iter_mut())
        {
            *v = self.momentum * *v + g;
            *p -= lr * *v;
        }
        Ok(())
    }
}

/// Decodes detections: per proposal, the best non-background category with
/// its softmax probability; boxes decoded and clipped; filtered by score,
/// then per-category NMS and a per-image cap.
pub fn decode_detections(
    cfg: &DetectorConfig,
    proposals: &Proposals,
    score_threshold: f64,
    nms_threshold: f64,
) -> Vec<ScoredBox> {
    let mut dets = Vec::new();
    for i in 0..proposals.len() {
        let probs = proposals.softmax(i);
        let (mut best_c, mut best_p) = (0usize, probs[0]);
        for (c, &p) in probs.iter().enumerate().take(cfg.categories).skip(1) {
            if p > best_p {
                best_c = c;
                best_p = p;
            }
        }
        if best_p <= score_threshold {
            continue;
        }
        if let Some(bbox) = proposals.predicted_box(i) {
            dets.push(ScoredBox::new(bbox, best_p, best_c).expect("softmax prob in range"));
        }
    }
    let mut kept = nms(&dets, nms_threshold, cfg.class_agnostic_nms);
    kept.truncate(cfg.max_detections);
    kept
}

/// Checkpoint sidecar: grid size, feature width, categories, image size and
/// training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(rename = "S")]
    pub grid: usize,
    #[serde(rename = "F")]
    pub features: usize,
    #[serde(rename = "C")]
    pub categories: usize,
    #[serde(rename = "H")]
    pub image_height: usize,
    #[serde(rename = "W")]
    pub image_width: usize,
    pub iteration: u64,
}

impl CheckpointMeta {
    pub fn of(cfg: &DetectorConfig, iteration: u64) -> Self {
        Self {
            grid: cfg.grid_height(),
            features: cfg.features,
            categories: cfg.categories,
            image_height: cfg.image_height,
            image_width: cfg.image_width,
            iteration,
        }
    }

    /// Checks the sidecar against a detector configuration.
    pub fn matches(&self, cfg: &DetectorConfig) -> Result<()> {
        let expected = CheckpointMeta::of(cfg, self.iteration);
        if *self != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected:?}"),
                got: format!("{self:?}"),
            });
        }
        Ok(())
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the parameter vector as little-endian f32 plus a JSON sidecar.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    cfg: &DetectorConfig,
    iteration: u64,
) -> Result<()> {
    let mut buf = Vec::with_capacity(params.len() * 4);
    for &v in params.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))?;

    let meta = CheckpointMeta::of(cfg, iteration);
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&side, e))?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(Vec<f64>, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "{}: length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|ch| f32::from_le_bytes(ch.try_into().unwrap()) as f64)
        .collect();

    let side = sidecar_path(path);
    let json = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&json).map_err(|e| Error::json(&side, e))?;
    Ok((values, meta))
}
