//! Apparent-size estimation from a 2D skeleton.
//!
//! Each present principal bone gives one estimate of the pixel length of a
//! model unit: its pixel length divided by its canonical length. Foreshortening
//! only shrinks a bone, so the largest estimate is the most credible one.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BoneId, EngineConfig, Skeleton2D};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoneMeasurement {
    pub bone: BoneId,
    pub pixel_length: f64,
    pub canonical_length: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleEstimate {
    pub pixels_per_unit: f64,
    pub contributing_bone: BoneId,
    pub per_bone_estimates: Vec<BoneMeasurement>,
}

/// Maximum pixels-per-unit ratio over present limb bones and quadrilateral
/// sides. Ties keep the first bone in declaration order.
pub fn estimate_scale(skeleton: &Skeleton2D) -> Result<ScaleEstimate> {
    let per_bone_estimates: Vec<BoneMeasurement> = skeleton
        .bones()
        .iter()
        .filter_map(|bone| {
            let (a, b) = skeleton.bone_segment(bone.id)?;
            let pixel_length = a.distance(b);
            Some(BoneMeasurement {
                bone: bone.id,
                pixel_length,
                canonical_length: bone.canonical_length,
                ratio: pixel_length / bone.canonical_length,
            })
        })
        .collect();

    let best = per_bone_estimates
        .iter()
        .fold(None::<&BoneMeasurement>, |best, m| match best {
            Some(b) if b.ratio >= m.ratio => Some(b),
            _ => Some(m),
        })
        .ok_or(Error::ScaleUnavailable)?;

    Ok(ScaleEstimate {
        pixels_per_unit: best.ratio,
        contributing_bone: best.bone,
        per_bone_estimates: per_bone_estimates.clone(),
    })
}

/// Capsule radius in pixels: `delta * pixels_per_unit`.
pub fn capsule_radius(scale: &ScaleEstimate, config: &EngineConfig) -> f64 {
    config.delta * scale.pixels_per_unit
}

/// Apparent height in pixels: `pixels_per_unit * canonical_height`.
pub fn estimate_height(skeleton: &Skeleton2D, config: &EngineConfig) -> Result<f64> {
    Ok(estimate_scale(skeleton)?.pixels_per_unit * config.canonical_height)
}

/// One row of a height track.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HeightSample {
    pub frame: usize,
    pub pixels_per_unit: Option<f64>,
    pub height_px: Option<f64>,
}

/// Per-frame height estimates; frames without a present bone yield `None`.
pub fn track_height(frames: &[Skeleton2D], config: &EngineConfig) -> Vec<HeightSample> {
    frames
        .iter()
        .enumerate()
        .map(|(frame, skel)| match estimate_scale(skel) {
            Ok(s) => HeightSample {
                frame,
                pixels_per_unit: Some(s.pixels_per_unit),
                height_px: Some(s.pixels_per_unit * config.canonical_height),
            },
            Err(_) => HeightSample {
                frame,
                pixels_per_unit: None,
                height_px: None,
            },
        })
        .collect()
}

/// Coefficient of variation (population std / mean) of the defined heights.
pub fn coefficient_of_variation(samples: &[HeightSample]) -> Option<f64> {
    let h: Vec<f64> = samples.iter().filter_map(|s| s.height_px).collect();
    if h.is_empty() {
        return None;
    }
    let mean = h.iter().sum::<f64>() / h.len() as f64;
    let var = h.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / h.len() as f64;
    Some(var.sqrt() / mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{coco, BoneLengths, Keypoint, SkeletonKind};

    fn skeleton(points: &[(usize, f64, f64)], lengths: &BoneLengths) -> Skeleton2D {
        let mut kps = vec![Keypoint::absent(); 17];
        for &(i, x, y) in points {
            kps[i] = Keypoint::new(x, y, 1.0, 0.3);
        }
        Skeleton2D::new(SkeletonKind::Coco17, kps, lengths).unwrap()
    }

    #[test]
    fn maximum_ratio_wins() {
        let mut lengths = BoneLengths::uniform(1.0);
        lengths.0.insert(BoneId::LeftArm, 0.5);
        lengths.0.insert(BoneId::LeftThigh, 0.25);
        let skel = skeleton(
            &[
                (coco::LEFT_SHOULDER, 0.0, 0.0),
                (coco::LEFT_ELBOW, 0.0, 100.0),
                (coco::LEFT_HIP, 50.0, 0.0),
                (coco::LEFT_KNEE, 50.0, 40.0),
            ],
            &lengths,
        );
        let s = estimate_scale(&skel).unwrap();
        assert_eq!(s.pixels_per_unit, 200.0);
        assert_eq!(s.contributing_bone, BoneId::LeftArm);
        let thigh = s
            .per_bone_estimates
            .iter()
            .find(|m| m.bone == BoneId::LeftThigh)
            .unwrap();
        assert_eq!(thigh.ratio, 160.0);
    }

    #[test]
    fn single_bone() {
        let mut lengths = BoneLengths::uniform(1.0);
        lengths.0.insert(BoneId::RightShin, 0.3);
        let skel = skeleton(
            &[(coco::RIGHT_KNEE, 0.0, 0.0), (coco::RIGHT_ANKLE, 18.0, 24.0)],
            &lengths,
        );
        let s = estimate_scale(&skel).unwrap();
        assert!((s.pixels_per_unit - 100.0).abs() < 1e-12);
        assert_eq!(s.per_bone_estimates.len(), 1);
    }

    #[test]
    fn ties_keep_declaration_order() {
        let lengths = BoneLengths::uniform(1.0);
        let skel = skeleton(
            &[
                (coco::RIGHT_SHOULDER, 0.0, 0.0),
                (coco::RIGHT_ELBOW, 0.0, 10.0),
                (coco::LEFT_SHOULDER, 50.0, 0.0),
                (coco::LEFT_ELBOW, 50.0, 10.0),
            ],
            &lengths,
        );
        // Shoulders bone is 50 px; take it away by giving it a long canonical length.
        let mut lengths2 = lengths.clone();
        lengths2.0.insert(BoneId::Shoulders, 100.0);
        let skel = Skeleton2D::new(SkeletonKind::Coco17, skel.keypoints().to_vec(), &lengths2).unwrap();
        assert_eq!(estimate_scale(&skel).unwrap().contributing_bone, BoneId::LeftArm);
    }

    #[test]
    fn no_bones_is_an_error() {
        let skel = skeleton(&[(coco::NOSE, 1.0, 1.0)], &BoneLengths::uniform(1.0));
        assert!(matches!(estimate_scale(&skel), Err(Error::ScaleUnavailable)));
        assert!(estimate_height(&skel, &EngineConfig::default()).is_err());
    }

    #[test]
    fn radius_and_height() {
        let scale = ScaleEstimate {
            pixels_per_unit: 258.0,
            contributing_bone: BoneId::LeftArm,
            per_bone_estimates: vec![],
        };
        let cfg = EngineConfig::default();
        assert!((capsule_radius(&scale, &cfg) - 20.64).abs() < 1e-9);
        let zero = EngineConfig { delta: 0.0, ..cfg };
        assert_eq!(capsule_radius(&scale, &zero), 0.0);
        assert!((scale.pixels_per_unit * cfg.canonical_height - 438.6).abs() < 1e-9);
    }
}
