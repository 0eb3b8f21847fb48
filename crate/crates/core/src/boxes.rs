//! Axis-aligned box arithmetic: area, intersection-over-union and
//! non-maximum suppression.
//!
//! Boxes are validated at construction (positive extent, finite coordinates)
//! so that IoU is total and never divides by zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An axis-aligned rectangle in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBox(f64, f64, f64, f64);

impl TryFrom<RawBox> for BBox {
    type Error = Error;
    fn try_from(r: RawBox) -> Result<Self> {
        BBox::new(r.0, r.1, r.2, r.3)
    }
}

impl From<BBox> for RawBox {
    fn from(b: BBox) -> Self {
        RawBox(b.x_min, b.y_min, b.x_max, b.y_max)
    }
}

impl BBox {
    /// Creates a box, rejecting zero or negative extent and non-finite
    /// coordinates.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let finite = x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite();
        if !finite {
            return Err(Error::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
                reason: "non-finite coordinate",
            });
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
                reason: "empty extent (min must be < max)",
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Box area, strictly positive by the construction invariant.
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Intersection area with another box; zero when interiors are disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection over union. Always in [0, 1]; exactly 1 for `a == a`.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }

    /// Intersection of this box with a clip window, if non-empty.
    pub fn clip(&self, x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Option<BBox> {
        BBox::new(
            self.x_min.max(x_min),
            self.y_min.max(y_min),
            self.x_max.min(x_max),
            self.y_max.min(y_max),
        )
        .ok()
    }

    /// Box scaled about the origin, e.g. for resize remapping.
    pub fn scaled(&self, sx: f64, sy: f64) -> Result<BBox> {
        BBox::new(
            self.x_min * sx,
            self.y_min * sy,
            self.x_max * sx,
            self.y_max * sy,
        )
    }
}

/// Convenience free function mirroring [`BBox::area`].
pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Convenience free function mirroring [`BBox::iou`].
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// A box with a detection score and category id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    bbox: BBox,
    score: f64,
    category: usize,
}

impl ScoredBox {
    pub fn new(bbox: BBox, score: f64, category: usize) -> Result<Self> {
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidScore(score));
        }
        Ok(Self {
            bbox,
            score,
            category,
        })
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn category(&self) -> usize {
        self.category
    }
}

/// Greedy non-maximum suppression.
///
/// Keeps boxes in descending score order (ties broken by input index) and
/// suppresses any remaining box whose IoU with an already-kept box exceeds
/// `iou_threshold`. Suppression is restricted to boxes of the same category
/// unless `class_agnostic` is set.
pub fn nms(dets: &[ScoredBox], iou_threshold: f64, class_agnostic: bool) -> Vec<ScoredBox> {
    assert!(
        iou_threshold > 0.0 && iou_threshold <= 1.0,
        "NMS IoU threshold must be in (0, 1], got {iou_threshold}"
    );

    let mut order: Vec<usize> = (0..dets.len()).collect();
    // Descending score, ties by smaller input index (sort_by is stable).
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());

    let mut kept: Vec<ScoredBox> = Vec::new();
    'candidates: for &i in &order {
        let cand = &dets[i];
        for k in &kept {
            if !class_agnostic && k.category != cand.category {
                continue;
            }
            if k.bbox.iou(&cand.bbox) > iou_threshold {
                continue 'candidates;
            }
        }
        kept.push(*cand);
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn area_examples() {
        assert_eq!(b(0.0, 0.0, 1.0, 1.0).area(), 1.0);
        assert_eq!(b(0.0, 0.0, 2.0, 3.0).area(), 6.0);
        assert_eq!(b(2.0, 5.0, 4.0, 9.0).area(), 8.0);
    }

    #[test]
    fn zero_area_rejected_at_construction() {
        assert!(BBox::new(1.0, 1.0, 1.0, 2.0).is_err());
        assert!(BBox::new(1.0, 1.0, 2.0, 1.0).is_err());
        assert!(BBox::new(2.0, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(0.0, f64::NAN, 1.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(b(0.0, 0.0, 1.0, 1.0).iou(&b(5.0, 5.0, 6.0, 6.0)), 0.0);
        let v = b(0.0, 0.0, 2.0, 2.0).iou(&b(1.0, 1.0, 3.0, 3.0));
        assert!((v - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn iou_touching_edges_is_zero() {
        // Shared edge only: zero-area intersection.
        assert_eq!(b(0.0, 0.0, 1.0, 1.0).iou(&b(1.0, 0.0, 2.0, 1.0)), 0.0);
    }

    #[test]
    fn nms_empty_input() {
        assert!(nms(&[], 0.5, false).is_empty());
    }

    #[test]
    fn nms_suppresses_same_category_overlap() {
        // IoU(b1, b2) = 81 / 119 > 0.5 so the lower-scored b2 goes.
        let dets = vec![
            ScoredBox::new(b(0.0, 0.0, 10.0, 10.0), 0.95, 0).unwrap(),
            ScoredBox::new(b(1.0, 1.0, 11.0, 11.0), 0.90, 0).unwrap(),
            ScoredBox::new(b(20.0, 20.0, 30.0, 30.0), 0.80, 0).unwrap(),
        ];
        assert!((dets[0].bbox().iou(dets[1].bbox()) - 81.0 / 119.0).abs() < 1e-12);

        let kept = nms(&dets, 0.5, false);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0], dets[0]);
        assert_eq!(kept[1], dets[2]);
    }

    #[test]
    fn nms_is_per_category_by_default() {
        let dets = vec![
            ScoredBox::new(b(0.0, 0.0, 10.0, 10.0), 0.95, 0).unwrap(),
            ScoredBox::new(b(1.0, 1.0, 11.0, 11.0), 0.90, 1).unwrap(),
            ScoredBox::new(b(20.0, 20.0, 30.0, 30.0), 0.80, 0).unwrap(),
        ];
        assert_eq!(nms(&dets, 0.5, false).len(), 3);
        assert_eq!(nms(&dets, 0.5, true).len(), 2);
    }

    #[test]
    fn nms_score_ties_break_by_input_index() {
        let dets = vec![
            ScoredBox::new(b(0.0, 0.0, 10.0, 10.0), 0.9, 0).unwrap(),
            ScoredBox::new(b(0.5, 0.5, 10.5, 10.5), 0.9, 0).unwrap(),
        ];
        let kept = nms(&dets, 0.5, false);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0], dets[0]);
    }

    /// Pixel-rasterization IoU oracle: counts 0.1-px cells whose centers fall
    /// inside each box.
    fn raster_iou(a: &BBox, b: &BBox, lo: f64, hi: f64) -> f64 {
        let res = 0.1;
        let n = ((hi - lo) / res).round() as usize;
        let mut inter = 0u64;
        let mut union = 0u64;
        for iy in 0..n {
            let y = lo + (iy as f64 + 0.5) * res;
            for ix in 0..n {
                let x = lo + (ix as f64 + 0.5) * res;
                let in_a = x > a.x_min() && x < a.x_max() && y > a.y_min() && y < a.y_max();
                let in_b = x > b.x_min() && x < b.x_max() && y > b.y_min() && y < b.y_max();
                if in_a && in_b {
                    inter += 1;
                }
                if in_a || in_b {
                    union += 1;
                }
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    prop_compose! {
        /// Random boxes in [0, 64]^2 with sides of at least 8 px, so the
        /// raster oracle has enough cells per side.
        fn arb_box()(x0 in 0.0..48.0f64, y0 in 0.0..48.0f64,
                     w in 8.0..16.0f64, h in 8.0..16.0f64) -> BBox {
            BBox::new(x0, y0, (x0 + w).min(64.0), (y0 + h).min(64.0)).unwrap()
        }
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = a.iou(&b);
            let ba = b.iou(&a);
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(a.iou(&a), 1.0);
        }

        #[test]
        fn iou_matches_raster_oracle(a in arb_box(), b in arb_box()) {
            let exact = a.iou(&b);
            let raster = raster_iou(&a, &b, 0.0, 64.0);
            prop_assert!((exact - raster).abs() <= 2e-2,
                "exact {} vs raster {}", exact, raster);
        }
    }

    prop_compose! {
        fn arb_scored()(bx in arb_box(), s in 0.0..=1.0f64, c in 0usize..3) -> ScoredBox {
            ScoredBox::new(bx, s, c).unwrap()
        }
    }

    proptest! {
        #[test]
        fn nms_subset_sorted_idempotent(dets in prop::collection::vec(arb_scored(), 0..12),
                                        thr in 0.1..1.0f64) {
            let kept = nms(&dets, thr, false);
            // Subset of input.
            for k in &kept {
                prop_assert!(dets.iter().any(|d| d == k));
            }
            // Sorted by descending score.
            for w in kept.windows(2) {
                prop_assert!(w[0].score() >= w[1].score());
            }
            // No same-category pair above threshold survives.
            for i in 0..kept.len() {
                for j in (i + 1)..kept.len() {
                    if kept[i].category() == kept[j].category() {
                        prop_assert!(kept[i].bbox().iou(kept[j].bbox()) <= thr);
                    }
                }
            }
            // Idempotent.
            prop_assert_eq!(nms(&kept, thr, false), kept);
        }

        #[test]
        fn nms_suppressed_have_kept_witness(dets in prop::collection::vec(arb_scored(), 0..12),
                                            thr in 0.1..1.0f64) {
            let kept = nms(&dets, thr, false);
            for d in &dets {
                let survived = kept.iter().any(|k| k == d);
                if !survived {
                    let witness = kept.iter().any(|k| {
                        k.category() == d.category()
                            && k.score() >= d.score()
                            && k.bbox().iou(d.bbox()) > thr
                    });
                    prop_assert!(witness, "suppressed box without higher-scored overlap");
                }
            }
        }
    }
}
