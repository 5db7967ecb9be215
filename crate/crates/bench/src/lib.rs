//! Shared workloads for the criterion benches.

use pccse_core::fixtures::{make_instance, mannequin, Camera, InstanceSpec, Mannequin, Pose};
use pccse_core::geometry::LabelMap;
use pccse_core::pipeline::{compute_regions, RadiusSpec};
use pccse_core::{EngineConfig, InstanceInput, SkeletonKind};

pub struct Workload {
    pub mannequin: Mannequin,
    pub instance: InstanceInput,
    pub labels: LabelMap,
    pub config: EngineConfig,
}

/// One rendered mannequin instance with its proximal-region labels.
pub fn workload() -> Workload {
    let mannequin = mannequin();
    let spec = InstanceSpec {
        id: "bench".into(),
        pose: Pose {
            arm_abduction: 0.3,
            knee_bend: 0.2,
            ..Pose::default()
        },
        camera: Camera::standard(),
        kind: SkeletonKind::Coco17,
        noise: 0.03,
        swap: None,
        points_per_part: 5,
        detection_score: 1.0,
        seed: 1,
    };
    let instance = make_instance(&mannequin, &spec);
    let config = EngineConfig::default();
    let labels = compute_regions(&instance, &config, RadiusSpec::Delta(config.delta)).labels;
    Workload {
        mannequin,
        instance,
        labels,
        config,
    }
}
