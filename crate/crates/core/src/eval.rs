//! Segmentation and reconstruction metrics: per-image mean IoU, per-class
//! pooled IoU, PSNR, and a cross-view label-consistency rate.

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::math::Vec3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

/// One image's predicted and ground-truth class masks, equal length.
#[derive(Clone, Debug)]
pub struct SegPair {
    pub pred: Vec<u8>,
    pub gt: Vec<u8>,
}

fn validate_pairs(pairs: &[SegPair], classes: usize) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("metric needs at least one image".into()));
    }
    for (i, p) in pairs.iter().enumerate() {
        if p.pred.len() != p.gt.len() {
            return Err(Error::ShapeMismatch {
                op: "segmentation_metric",
                detail: format!("image {i}: pred {} px vs gt {} px", p.pred.len(), p.gt.len()),
            });
        }
        for &v in p.pred.iter().chain(&p.gt) {
            if v as usize >= classes {
                return Err(Error::ClassOutOfRange { index: v as usize, classes });
            }
        }
    }
    Ok(())
}

/// Per-image intersection and union pixel counts for every class.
fn count_per_class(pair: &SegPair, classes: usize) -> (Vec<u64>, Vec<u64>) {
    let mut inter = vec![0u64; classes];
    let mut union = vec![0u64; classes];
    for (&p, &g) in pair.pred.iter().zip(&pair.gt) {
        if p == g {
            inter[p as usize] += 1;
            union[p as usize] += 1;
        } else {
            union[p as usize] += 1;
            union[g as usize] += 1;
        }
    }
    (inter, union)
}

/// Mean IoU: per image, the mean IoU over classes present in GT or
/// prediction; then the unweighted mean over images. With
/// `ignore_background`, class 0 is dropped from every per-image class set.
pub fn miou(pairs: &[SegPair], classes: usize, ignore_background: bool) -> Result<f64> {
    validate_pairs(pairs, classes)?;
    let start = usize::from(ignore_background);
    let mut total = 0.0;
    for pair in pairs {
        let (inter, union) = count_per_class(pair, classes);
        let mut sum = 0.0;
        let mut present = 0;
        for c in start..classes {
            if union[c] > 0 {
                sum += inter[c] as f64 / union[c] as f64;
                present += 1;
            }
        }
        if present > 0 {
            total += sum / present as f64;
        } else {
            // No class under consideration appears at all; the image is
            // trivially correct.
            total += 1.0;
        }
    }
    Ok(total / pairs.len() as f64)
}

/// Shape mIoU: intersection and union counts pooled over all images per
/// class, IoU per class, mean over classes with nonzero pooled union.
pub fn shape_miou(pairs: &[SegPair], classes: usize, ignore_background: bool) -> Result<f64> {
    validate_pairs(pairs, classes)?;
    let start = usize::from(ignore_background);
    let mut inter = vec![0u64; classes];
    let mut union = vec![0u64; classes];
    for pair in pairs {
        let (i, u) = count_per_class(pair, classes);
        for c in 0..classes {
            inter[c] += i[c];
            union[c] += u[c];
        }
    }
    let mut sum = 0.0;
    let mut counted = 0;
    for c in start..classes {
        if union[c] > 0 {
            sum += inter[c] as f64 / union[c] as f64;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::InvalidArgument("no class has nonzero union".into()));
    }
    Ok(sum / counted as f64)
}

/// `10*log10(1/MSE)` over values in [0,1]; +infinity when identical.
pub fn psnr(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "psnr",
            detail: format!("{} vs {} values", pred.len(), gt.len()),
        });
    }
    let mse: f64 =
        pred.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// One view's data for the cross-view consistency check.
pub struct ConsistencyView<'a> {
    pub view: &'a CameraView,
    /// Exact per-pixel ground-truth depth (ray parameter), `inf` = miss.
    pub gt_depth: &'a [f64],
    /// Predicted per-pixel class ids.
    pub pred_classes: &'a [u8],
}

/// Occlusion tolerance in world units for the visibility test.
pub const CONSISTENCY_DEPTH_TOL: f64 = 0.02;

/// Samples up to `samples` ground-truth foreground surface points from
/// view `a`, keeps those visible in view `b` (projection inside the image
/// and GT depth agreement within [`CONSISTENCY_DEPTH_TOL`]), and returns
/// `(agreements, visible)` where an agreement means both views' predicted
/// classes match at the corresponding pixels.
pub fn consistency_counts(
    a: &ConsistencyView,
    b: &ConsistencyView,
    samples: usize,
    seed: u64,
) -> (usize, usize) {
    let foreground: Vec<usize> =
        (0..a.gt_depth.len()).filter(|&i| a.gt_depth[i].is_finite()).collect();
    if foreground.is_empty() {
        return (0, 0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0;
    let mut visible = 0;
    for _ in 0..samples {
        let idx = foreground[rng.gen_range(0..foreground.len())];
        let (u, v) = (idx % a.view.width, idx / a.view.width);
        let ray = a.view.ray_for_pixel(u, v);
        let p = ray.origin + ray.direction * a.gt_depth[idx];
        if let Some(bidx) = project_pixel(b.view, p) {
            let dist = (p - b.view.pose.translation).norm();
            if (b.gt_depth[bidx] - dist).abs() <= CONSISTENCY_DEPTH_TOL {
                visible += 1;
                if a.pred_classes[idx] == b.pred_classes[bidx] {
                    agree += 1;
                }
            }
        }
    }
    (agree, visible)
}

/// Pixel index of a world point's projection, if inside the image and in
/// front of the camera.
pub fn project_pixel(view: &CameraView, p: Vec3) -> Option<usize> {
    let inv = view.pose.inverse();
    let c = inv.rotation.mul_vec(p) + inv.translation;
    if c.z <= 0.0 {
        return None;
    }
    let k = &view.intrinsics;
    let u = (k.fx * c.x / c.z + k.cx).floor();
    let v = (k.fy * c.y / c.z + k.cy).floor();
    if u < 0.0 || v < 0.0 || u >= view.width as f64 || v >= view.height as f64 {
        return None;
    }
    Some(v as usize * view.width + u as usize)
}

/// Aggregates [`consistency_counts`] over view pairs into a rate.
pub fn consistency_rate(
    pairs: &[(ConsistencyView<'_>, ConsistencyView<'_>)],
    samples_per_pair: usize,
    seed: u64,
) -> Result<f64> {
    let mut agree = 0;
    let mut visible = 0;
    for (i, (a, b)) in pairs.iter().enumerate() {
        let (ag, vi) = consistency_counts(a, b, samples_per_pair, seed.wrapping_add(i as u64));
        agree += ag;
        visible += vi;
    }
    if visible == 0 {
        return Err(Error::InvalidArgument("no mutually visible surface samples".into()));
    }
    Ok(agree as f64 / visible as f64)
}

/// Summary emitted by evaluation runs, serialized as `key=value` lines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub miou: f64,
    pub shape_miou: f64,
    pub psnr_mean: f64,
    pub consistency_rate: Option<f64>,
}

impl MetricReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "miou={}", self.miou);
        let _ = writeln!(s, "shape_miou={}", self.shape_miou);
        let _ = writeln!(s, "psnr_mean={}", self.psnr_mean);
        if let Some(c) = self.consistency_rate {
            let _ = writeln!(s, "consistency_rate={c}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{rays_for_view, Intrinsics, Pose};
    use crate::synthetic::{make_block_object, reference_render, Template};

    /// Brute-force IoU via explicit pixel index sets, written independently
    /// of the counting implementation.
    fn oracle_iou_sets(pred: &[u8], gt: &[u8], class: u8) -> Option<f64> {
        let pred_set: Vec<usize> =
            (0..pred.len()).filter(|&i| pred[i] == class).collect();
        let gt_set: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] == class).collect();
        let inter = pred_set.iter().filter(|i| gt_set.contains(i)).count();
        let union = pred_set.len() + gt_set.len() - inter;
        if union == 0 {
            None
        } else {
            Some(inter as f64 / union as f64)
        }
    }

    fn oracle_miou(pairs: &[SegPair], classes: usize) -> f64 {
        let mut total = 0.0;
        for p in pairs {
            let ious: Vec<f64> = (0..classes as u8)
                .filter_map(|c| oracle_iou_sets(&p.pred, &p.gt, c))
                .collect();
            total += if ious.is_empty() {
                1.0
            } else {
                ious.iter().sum::<f64>() / ious.len() as f64
            };
        }
        total / pairs.len() as f64
    }

    fn oracle_shape_miou(pairs: &[SegPair], classes: usize) -> f64 {
        let mut ious = Vec::new();
        for c in 0..classes as u8 {
            let mut inter = 0usize;
            let mut union = 0usize;
            for p in pairs {
                let pred_set: Vec<usize> =
                    (0..p.pred.len()).filter(|&i| p.pred[i] == c).collect();
                let gt_set: Vec<usize> = (0..p.gt.len()).filter(|&i| p.gt[i] == c).collect();
                let i = pred_set.iter().filter(|x| gt_set.contains(x)).count();
                inter += i;
                union += pred_set.len() + gt_set.len() - i;
            }
            if union > 0 {
                ious.push(inter as f64 / union as f64);
            }
        }
        ious.iter().sum::<f64>() / ious.len() as f64
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gt = vec![0u8, 1, 2, 1, 0, 2];
        let pairs = [SegPair { pred: gt.clone(), gt }];
        assert_eq!(miou(&pairs, 3, false).unwrap(), 1.0);
        assert_eq!(shape_miou(&pairs, 3, false).unwrap(), 1.0);
    }

    #[test]
    fn two_by_two_hand_computed() {
        let pairs = [SegPair { pred: vec![0, 1, 1, 1], gt: vec![0, 0, 1, 1] }];
        // class 0: inter 1, union 2; class 1: inter 2, union 3.
        let got = miou(&pairs, 2, false).unwrap();
        assert!((got - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_prediction_scores_zero() {
        let pairs = [SegPair { pred: vec![0; 8], gt: vec![1; 8] }];
        assert_eq!(miou(&pairs, 2, false).unwrap(), 0.0);
        assert_eq!(shape_miou(&pairs, 2, false).unwrap(), 0.0);
    }

    #[test]
    fn rare_class_drags_shape_miou_below_miou() {
        // Class 2 appears once across 10 images and is always mispredicted;
        // everything else is perfect.
        let mut pairs = Vec::new();
        for i in 0..10 {
            let mut gt = vec![0u8, 0, 1, 1];
            let mut pred = gt.clone();
            if i == 0 {
                gt[0] = 2;
                pred[0] = 0;
            }
            pairs.push(SegPair { pred, gt });
        }
        let m = miou(&pairs, 3, false).unwrap();
        let s = shape_miou(&pairs, 3, false).unwrap();
        assert!(s < m, "shape {s} vs image {m}");
        // The dead class contributes a full zero share to the class mean.
        assert!(s < 0.7);
    }

    #[test]
    fn matches_brute_force_oracle_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..100 {
            let pairs: Vec<SegPair> = (0..3)
                .map(|_| SegPair {
                    pred: (0..64).map(|_| rng.gen_range(0..5u8)).collect(),
                    gt: (0..64).map(|_| rng.gen_range(0..5u8)).collect(),
                })
                .collect();
            let fast = miou(&pairs, 5, false).unwrap();
            let slow = oracle_miou(&pairs, 5);
            assert!((fast - slow).abs() < 1e-12, "trial {trial}: miou {fast} vs {slow}");
            let fast = shape_miou(&pairs, 5, false).unwrap();
            let slow = oracle_shape_miou(&pairs, 5);
            assert!((fast - slow).abs() < 1e-12, "trial {trial}: shape {fast} vs {slow}");
        }
    }

    #[test]
    fn invariant_under_class_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let pairs: Vec<SegPair> = (0..2)
                .map(|_| SegPair {
                    pred: (0..36).map(|_| rng.gen_range(0..4u8)).collect(),
                    gt: (0..36).map(|_| rng.gen_range(0..4u8)).collect(),
                })
                .collect();
            // Random permutation of class ids 0..4.
            let mut perm = [0u8, 1, 2, 3];
            for i in (1..4).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let mapped: Vec<SegPair> = pairs
                .iter()
                .map(|p| SegPair {
                    pred: p.pred.iter().map(|&v| perm[v as usize]).collect(),
                    gt: p.gt.iter().map(|&v| perm[v as usize]).collect(),
                })
                .collect();
            let a = miou(&pairs, 4, false).unwrap();
            let b = miou(&mapped, 4, false).unwrap();
            assert!((a - b).abs() < 1e-12);
            let a = shape_miou(&pairs, 4, false).unwrap();
            let b = shape_miou(&mapped, 4, false).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn miou_equals_shape_miou_for_homogeneous_images() {
        // Every image contains every class with identical per-class counts
        // and identical confusion, so pooling changes nothing.
        let img = SegPair { pred: vec![0, 0, 1, 1, 2, 2], gt: vec![0, 1, 1, 2, 2, 0] };
        let pairs = vec![img.clone(), img.clone(), img];
        let m = miou(&pairs, 3, false).unwrap();
        let s = shape_miou(&pairs, 3, false).unwrap();
        assert!((m - s).abs() < 1e-12);
    }

    #[test]
    fn metrics_reject_empty_and_bad_ids() {
        assert!(miou(&[], 3, false).is_err());
        let bad = [SegPair { pred: vec![3], gt: vec![0] }];
        assert!(miou(&bad, 3, false).is_err());
        let mismatched = [SegPair { pred: vec![0, 1], gt: vec![0] }];
        assert!(shape_miou(&mismatched, 3, false).is_err());
    }

    #[test]
    fn psnr_cases() {
        let a = vec![0.3, 0.7, 0.5];
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let zeros = vec![0.0; 10];
        let tenth = vec![0.1; 10];
        assert!((psnr(&zeros, &tenth).unwrap() - 20.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mse = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 50.0;
        let direct = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&x, &y).unwrap() - direct).abs() < 1e-9);
    }

    #[test]
    fn self_consistency_is_perfect() {
        let scene = make_block_object(Template::Chair, 4);
        let pose = Pose::look_at(Vec3::new(1.5, 1.0, -1.5), Vec3::ZERO);
        let view = CameraView::new(Intrinsics::centered(24), pose, 24, 24).unwrap();
        let gt = reference_render(&scene, &view);
        let cv = ConsistencyView { view: &view, gt_depth: &gt.depth, pred_classes: &gt.mask };
        let cv2 = ConsistencyView { view: &view, gt_depth: &gt.depth, pred_classes: &gt.mask };
        let (agree, visible) = consistency_counts(&cv, &cv2, 200, 1);
        assert!(visible > 0);
        assert_eq!(agree, visible);
    }

    #[test]
    fn ground_truth_masks_are_cross_view_consistent() {
        let scene = make_block_object(Template::Chair, 6);
        let pa = Pose::look_at(Vec3::new(1.8, 1.2, -1.0), Vec3::ZERO);
        let pb = Pose::look_at(Vec3::new(1.2, 1.5, 1.4), Vec3::ZERO);
        let va = CameraView::new(Intrinsics::centered(48), pa, 48, 48).unwrap();
        let vb = CameraView::new(Intrinsics::centered(48), pb, 48, 48).unwrap();
        let ga = reference_render(&scene, &va);
        let gb = reference_render(&scene, &vb);
        let ca = ConsistencyView { view: &va, gt_depth: &ga.depth, pred_classes: &ga.mask };
        let cb = ConsistencyView { view: &vb, gt_depth: &gb.depth, pred_classes: &gb.mask };
        let (agree, visible) = consistency_counts(&ca, &cb, 400, 5);
        assert!(visible > 50, "only {visible} visible");
        // GT labels at the same surface point agree up to pixel-quantization
        // effects at part boundaries.
        assert!(agree as f64 / visible as f64 > 0.9, "{agree}/{visible}");
    }

    #[test]
    fn random_predictions_agree_near_chance() {
        let scene = make_block_object(Template::Chair, 8);
        let pa = Pose::look_at(Vec3::new(1.5, 0.8, -1.6), Vec3::ZERO);
        let pb = Pose::look_at(Vec3::new(1.7, 1.0, 1.2), Vec3::ZERO);
        let va = CameraView::new(Intrinsics::centered(32), pa, 32, 32).unwrap();
        let vb = CameraView::new(Intrinsics::centered(32), pb, 32, 32).unwrap();
        let ga = reference_render(&scene, &va);
        let gb = reference_render(&scene, &vb);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ra: Vec<u8> = (0..32 * 32).map(|_| rng.gen_range(0..4u8)).collect();
        let rb: Vec<u8> = (0..32 * 32).map(|_| rng.gen_range(0..4u8)).collect();
        let ca = ConsistencyView { view: &va, gt_depth: &ga.depth, pred_classes: &ra };
        let cb = ConsistencyView { view: &vb, gt_depth: &gb.depth, pred_classes: &rb };
        let (agree, visible) = consistency_counts(&ca, &cb, 1000, 13);
        let rate = agree as f64 / visible as f64;
        // Uniform over 4 classes: chance agreement 0.25.
        assert!(rate > 0.1 && rate < 0.45, "rate {rate} ({agree}/{visible})");
    }

    #[test]
    fn projection_recovers_source_pixel() {
        let pose = Pose::look_at(Vec3::new(0.5, 2.0, -1.2), Vec3::ZERO);
        let view = CameraView::new(Intrinsics::centered(16), pose, 16, 16).unwrap();
        for (i, ray) in rays_for_view(&view).iter().enumerate() {
            let p = ray.origin + ray.direction * 2.0;
            assert_eq!(project_pixel(&view, p), Some(i));
        }
    }

    #[test]
    fn consistency_rejects_no_visible_samples() {
        let pose = Pose::look_at(Vec3::new(0.0, 0.0, -2.5), Vec3::ZERO);
        let view = CameraView::new(Intrinsics::centered(4), pose, 4, 4).unwrap();
        let depth = vec![f64::INFINITY; 16];
        let classes = vec![0u8; 16];
        let a = ConsistencyView { view: &view, gt_depth: &depth, pred_classes: &classes };
        let b = ConsistencyView { view: &view, gt_depth: &depth, pred_classes: &classes };
        assert!(consistency_rate(&[(a, b)], 100, 0).is_err());
    }

    #[test]
    fn report_text_round_trip_fields() {
        let r = MetricReport {
            miou: 0.625,
            shape_miou: 0.5,
            psnr_mean: 31.25,
            consistency_rate: Some(0.9375),
        };
        let text = r.to_text();
        assert!(text.contains("miou=0.625"));
        assert!(text.contains("shape_miou=0.5"));
        assert!(text.contains("psnr_mean=31.25"));
        assert!(text.contains("consistency_rate=0.9375"));
    }
}
