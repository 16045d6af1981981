//! Multi-object tracking and its evaluation.

pub mod hungarian;
pub mod kalman;
pub mod metrics;
pub mod tracker;

pub use hungarian::hungarian_min_cost;
pub use metrics::{eval_clear, eval_hota, eval_idf1, evaluate, MotMetrics, Sequence, DEFAULT_MATCH_IOU};
pub use tracker::{
    associate_two_stage, run_tracker, Association, Detection, TrackState, TrackStatus, Tracker, TrackerConfig,
};

use crate::datamodel::mot::BBox;

/// Intersection over union of two boxes; 0 when either is degenerate.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_cases() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert!((iou(&a, &BBox::new(1.0, 1.0, 2.0, 2.0)) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(iou(&a, &BBox::new(2.0, 0.0, 2.0, 2.0)), 0.0);
    }
}
