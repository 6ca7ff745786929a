//! Scalar loss functions for the pair classifier and the head-pose regressor.
//!
//! Angles inside the pose loss are normalized to `[-1, 1]` first (yaw and
//! roll divided by 180, pitch by 90), so the unit knee of the smooth-L1 loss
//! sits at 180 (resp. 90) degrees of error.

use crate::domain::HeadPose;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// Ground-truth class and predicted probability of the LAEO class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSample {
    /// 1 for LAEO, 0 for not LAEO.
    pub class: u8,
    pub p_laeo: f64,
}

/// Binary cross entropy `-(c log p + (1 - c) log(1 - p))`.
pub fn laeo_loss(s: LossSample) -> f64 {
    let p = s.p_laeo.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let c = s.class as f64;
    -(c * libm::log(p) + (1.0 - c) * libm::log(1.0 - p))
}

/// Derivative of [`laeo_loss`] with respect to `p_laeo`; zero where the clamp
/// is active.
pub fn laeo_loss_grad(s: LossSample) -> f64 {
    if s.p_laeo < PROB_EPS || s.p_laeo > 1.0 - PROB_EPS {
        return 0.0;
    }
    let c = s.class as f64;
    -c / s.p_laeo + (1.0 - c) / (1.0 - s.p_laeo)
}

pub fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

pub fn smooth_l1_grad(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Penalty for predicting the wrong side of the yaw:
/// `max(0, -sign(gt) * tanh(k * pred))`, both angles normalized.
pub fn sign_loss(pred_yaw: f64, gt_yaw: f64, k: f64) -> f64 {
    (-sign(gt_yaw) * libm::tanh(k * pred_yaw)).max(0.0)
}

pub fn sign_loss_grad(pred_yaw: f64, gt_yaw: f64, k: f64) -> f64 {
    let t = libm::tanh(k * pred_yaw);
    if -sign(gt_yaw) * t > 0.0 {
        -sign(gt_yaw) * k * (1.0 - t * t)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseLossWeights {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub sign: f64,
}

impl Default for PoseLossWeights {
    fn default() -> Self {
        PoseLossWeights {
            yaw: 0.6,
            pitch: 0.3,
            roll: 0.1,
            sign: 0.1,
        }
    }
}

/// Weighted pose loss on normalized angles `[yaw, pitch, roll]`.
pub fn pose_loss_normalized(pred: [f64; 3], gt: [f64; 3], w: &PoseLossWeights, k: f64) -> f64 {
    w.yaw * smooth_l1(pred[0] - gt[0])
        + w.pitch * smooth_l1(pred[1] - gt[1])
        + w.roll * smooth_l1(pred[2] - gt[2])
        + w.sign * sign_loss(pred[0], gt[0], k)
}

/// Gradient of [`pose_loss_normalized`] with respect to `pred`.
pub fn pose_loss_normalized_grad(pred: [f64; 3], gt: [f64; 3], w: &PoseLossWeights, k: f64) -> [f64; 3] {
    [
        w.yaw * smooth_l1_grad(pred[0] - gt[0]) + w.sign * sign_loss_grad(pred[0], gt[0], k),
        w.pitch * smooth_l1_grad(pred[1] - gt[1]),
        w.roll * smooth_l1_grad(pred[2] - gt[2]),
    ]
}

/// Head-pose loss between two poses given in degrees.
pub fn head_pose_loss(pred: &HeadPose, gt: &HeadPose, w: &PoseLossWeights, k: f64) -> f64 {
    pose_loss_normalized(pred.normalized(), gt.normalized(), w, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::LN_2;

    #[test]
    fn laeo_loss_values() {
        assert!(laeo_loss(LossSample { class: 1, p_laeo: 1.0 }) < 1e-6);
        assert!((laeo_loss(LossSample { class: 1, p_laeo: 0.5 }) - LN_2).abs() < 1e-12);
        assert!((laeo_loss(LossSample { class: 0, p_laeo: 0.5 }) - LN_2).abs() < 1e-12);
        // clamped, finite
        assert!(laeo_loss(LossSample { class: 1, p_laeo: 0.0 }).is_finite());
    }

    #[test]
    fn smooth_l1_values() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
    }

    #[test]
    fn sign_loss_cases() {
        assert!(sign_loss(5.0, 0.5, 1.0) == 0.0);
        assert!(sign_loss(-20.0, 0.5, 1.0) > 0.999);
        for pred in [-3.0, -0.1, 0.0, 0.7] {
            assert_eq!(sign_loss(pred, 0.0, 1.0), 0.0);
        }
    }

    #[test]
    fn pose_loss_compositions() {
        let w = PoseLossWeights::default();
        let gt = HeadPose::new(45.0, 10.0, -5.0).unwrap();
        assert_eq!(head_pose_loss(&gt, &gt, &w, 1.0), 0.0);

        // yaw off by 0.5 normalized on the same side: only the smooth-L1 term
        let pred = HeadPose { yaw: 135.0, ..gt };
        assert!((head_pose_loss(&pred, &gt, &w, 1.0) - 0.6 * 0.125).abs() < 1e-12);

        // yaw off by 0.5 across zero: smooth-L1 plus the sign term
        let gt = HeadPose::new(-45.0, 0.0, 0.0).unwrap();
        let pred = HeadPose::new(45.0, 0.0, 0.0).unwrap();
        let expected = 0.6 * 0.125 + 0.1 * libm::tanh(0.25);
        assert!((head_pose_loss(&pred, &gt, &w, 1.0) - expected).abs() < 1e-12);

        let doubled = PoseLossWeights {
            yaw: 1.2,
            pitch: 0.6,
            roll: 0.2,
            sign: 0.2,
        };
        let l1 = head_pose_loss(&pred, &gt, &w, 1.0);
        let l2 = head_pose_loss(&pred, &gt, &doubled, 1.0);
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
    }
}
