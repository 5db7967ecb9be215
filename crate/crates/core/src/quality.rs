//! Ground-truth consistency auditing.
//!
//! Each annotated instance is scored with a few cheap consistency metrics:
//! how much of the mask lies in the bounding box, how many dense points land
//! on the mask, and how far each body part's points lie from the matching
//! skeleton bone (in model units). Suspicious body parts are removed as a
//! whole, both sides at once; the ground truth itself is never edited.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{extremity_segments, point_segment_distance, polygon_contains};
use crate::model::{
    coco, BodyPart, BoneId, CanonicalMesh, GtPoint, InstanceInput, PartGroup, Point2, Skeleton2D, SkeletonKind,
};
use crate::scale::estimate_scale;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditThresholds {
    /// Largest admissible mean point-to-bone distance, model units.
    pub bone_distance_max: f64,
    pub mask_in_bbox_min: f64,
    /// Minimum fraction of points on the mask, per part and per instance.
    pub points_in_mask_min: f64,
}

impl Default for AuditThresholds {
    fn default() -> Self {
        Self {
            bone_distance_max: 0.25,
            mask_in_bbox_min: 0.8,
            points_in_mask_min: 0.8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagCode {
    /// Mean point-to-bone distance above threshold.
    BoneDistance,
    /// Points sit closer to the opposite side's bone than to their own.
    Laterality,
    /// Too few of the part's points fall inside the mask.
    PointsOutsideMask,
    /// Too little of the mask lies inside the bounding box.
    BboxMismatch,
    IsCrowd,
    /// Other people overlap the box and the points miss the mask.
    MultiPerson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartAudit {
    pub part: BodyPart,
    pub points: usize,
    pub points_in_mask_ratio: f64,
    /// Mean normalized distance to the part's own bone.
    pub mean_bone_distance: Option<f64>,
    /// Mean normalized distance to the opposite side's bone.
    pub mirror_bone_distance: Option<f64>,
    pub flags: Vec<FlagCode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub instance_id: String,
    pub auditable: bool,
    pub point_count: usize,
    pub mask_in_bbox_ratio: Option<f64>,
    pub points_in_mask_ratio: Option<f64>,
    pub pixels_per_unit: Option<f64>,
    pub parts: Vec<PartAudit>,
    pub instance_flags: Vec<FlagCode>,
    /// Checks that could not run for lack of input data.
    pub not_auditable: Vec<FlagCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference_gps: Option<f64>,
}

impl ConsistencyReport {
    pub fn is_flagged(&self) -> bool {
        !self.instance_flags.is_empty() || self.parts.iter().any(|p| !p.flags.is_empty())
    }

    /// Flags keyed by part, for comparisons.
    pub fn part_flags(&self) -> Vec<(BodyPart, Vec<FlagCode>)> {
        self.parts
            .iter()
            .filter(|p| !p.flags.is_empty())
            .map(|p| (p.part, p.flags.clone()))
            .collect()
    }
}

enum Anchor {
    Segments(Vec<(Point2, Point2)>),
    Polygon([Point2; 4]),
}

impl Anchor {
    fn distance(&self, p: Point2) -> f64 {
        match self {
            Anchor::Segments(segs) => segs
                .iter()
                .map(|&(a, b)| point_segment_distance(p, a, b))
                .fold(f64::INFINITY, f64::min),
            Anchor::Polygon(quad) => {
                if polygon_contains(quad, p) {
                    0.0
                } else {
                    (0..4)
                        .map(|i| point_segment_distance(p, quad[i], quad[(i + 1) % 4]))
                        .fold(f64::INFINITY, f64::min)
                }
            }
        }
    }
}

fn anchor(skeleton: &Skeleton2D, part: BodyPart) -> Option<Anchor> {
    use BodyPart::*;
    let bone = |id: BoneId| skeleton.bone_segment(id).map(|s| Anchor::Segments(vec![s]));
    match part {
        LeftArm => bone(BoneId::LeftArm),
        RightArm => bone(BoneId::RightArm),
        LeftForearm => bone(BoneId::LeftForearm),
        RightForearm => bone(BoneId::RightForearm),
        LeftThigh => bone(BoneId::LeftThigh),
        RightThigh => bone(BoneId::RightThigh),
        LeftShin => bone(BoneId::LeftShin),
        RightShin => bone(BoneId::RightShin),
        LeftHand | RightHand | LeftFoot | RightFoot => {
            let kp = match part {
                LeftHand => coco::LEFT_WRIST,
                RightHand => coco::RIGHT_WRIST,
                LeftFoot => coco::LEFT_ANKLE,
                _ => coco::RIGHT_ANKLE,
            };
            let center = skeleton.point(kp)?;
            let segs = match skeleton.kind() {
                SkeletonKind::WholeBody133 => extremity_segments(skeleton, part, kp),
                SkeletonKind::Coco17 => Vec::new(),
            };
            Some(Anchor::Segments(if segs.is_empty() {
                vec![(center, center)]
            } else {
                segs
            }))
        }
        TorsoFront | TorsoBack => Some(Anchor::Polygon([
            skeleton.point(coco::LEFT_SHOULDER)?,
            skeleton.point(coco::RIGHT_SHOULDER)?,
            skeleton.point(coco::RIGHT_HIP)?,
            skeleton.point(coco::LEFT_HIP)?,
        ])),
        Head => None,
    }
}

/// Pixel distance from `p` to the skeleton geometry of `part`: its bone, its
/// hand or foot chain, or the torso quadrilateral (0 inside). `None` for the
/// head or when the needed keypoints are absent.
pub fn distance_to_part(skeleton: &Skeleton2D, part: BodyPart, p: Point2) -> Option<f64> {
    anchor(skeleton, part).map(|a| a.distance(p))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn insert_flag(flags: &mut Vec<FlagCode>, f: FlagCode) {
    if !flags.contains(&f) {
        flags.push(f);
        flags.sort();
    }
}

/// Computes consistency metrics and flags for one instance.
///
/// The mesh must use the default human partitioning; it maps each dense
/// point's vertex to a body part.
pub fn audit_instance(
    instance: &InstanceInput,
    mesh: &CanonicalMesh,
    thresholds: &AuditThresholds,
) -> Result<ConsistencyReport> {
    mesh.ensure_human_partitioning()?;
    let mut report = ConsistencyReport {
        instance_id: instance.id.clone(),
        auditable: false,
        point_count: 0,
        mask_in_bbox_ratio: None,
        points_in_mask_ratio: None,
        pixels_per_unit: None,
        parts: Vec::new(),
        instance_flags: Vec::new(),
        not_auditable: Vec::new(),
        inference_gps: instance.annotations.inference_gps,
    };
    let points: &[GtPoint] = match &instance.gt_points {
        Some(p) if !p.is_empty() => p,
        _ => return Ok(report),
    };
    report.auditable = true;
    report.point_count = points.len();

    let mask = &instance.mask;
    let (mut fg, mut fg_in_box) = (0usize, 0usize);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                fg += 1;
                if instance.bbox.contains(Point2::new(x as f64, y as f64)) {
                    fg_in_box += 1;
                }
            }
        }
    }
    let mask_in_bbox = if fg == 0 { 0.0 } else { fg_in_box as f64 / fg as f64 };
    report.mask_in_bbox_ratio = Some(mask_in_bbox);
    let in_mask = points.iter().filter(|p| mask.contains_point(p.position())).count();
    let points_in_mask = in_mask as f64 / points.len() as f64;
    report.points_in_mask_ratio = Some(points_in_mask);

    let scale = estimate_scale(&instance.skeleton).ok().map(|s| s.pixels_per_unit);
    report.pixels_per_unit = scale;
    if scale.is_none() {
        report.not_auditable.push(FlagCode::BoneDistance);
        report.not_auditable.push(FlagCode::Laterality);
    }

    for part in BodyPart::ALL {
        let part_points: Vec<Point2> = points
            .iter()
            .filter(|p| mesh.body_part_of(p.vertex) == Some(part))
            .map(GtPoint::position)
            .collect();
        if part_points.is_empty() {
            continue;
        }
        let ratio = part_points.iter().filter(|&&p| mask.contains_point(p)).count() as f64 / part_points.len() as f64;
        let mut audit = PartAudit {
            part,
            points: part_points.len(),
            points_in_mask_ratio: ratio,
            mean_bone_distance: None,
            mirror_bone_distance: None,
            flags: Vec::new(),
        };
        if ratio < thresholds.points_in_mask_min {
            insert_flag(&mut audit.flags, FlagCode::PointsOutsideMask);
        }
        if let Some(ppu) = scale {
            let dist_to = |a: &Anchor| mean(part_points.iter().map(|&p| a.distance(p) / ppu));
            audit.mean_bone_distance = anchor(&instance.skeleton, part).and_then(|a| dist_to(&a));
            if part.side().is_some() {
                audit.mirror_bone_distance = anchor(&instance.skeleton, part.mirror()).and_then(|a| dist_to(&a));
            }
            if audit
                .mean_bone_distance
                .is_some_and(|d| d > thresholds.bone_distance_max)
            {
                insert_flag(&mut audit.flags, FlagCode::BoneDistance);
            }
            if let (Some(own), Some(other)) = (audit.mean_bone_distance, audit.mirror_bone_distance) {
                if other < own {
                    insert_flag(&mut audit.flags, FlagCode::Laterality);
                }
            }
        }
        report.parts.push(audit);
    }

    if mask_in_bbox < thresholds.mask_in_bbox_min {
        insert_flag(&mut report.instance_flags, FlagCode::BboxMismatch);
    }
    match instance.annotations.is_crowd {
        Some(true) => insert_flag(&mut report.instance_flags, FlagCode::IsCrowd),
        Some(false) => {}
        None => report.not_auditable.push(FlagCode::IsCrowd),
    }
    match instance.annotations.overlapping_instances {
        Some(n) => {
            if n > 0 && points_in_mask < thresholds.points_in_mask_min {
                insert_flag(&mut report.instance_flags, FlagCode::MultiPerson);
            }
        }
        None => report.not_auditable.push(FlagCode::MultiPerson),
    }
    report.not_auditable.sort();
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalEntry {
    pub instance_id: String,
    /// Body-part groups whose points are removed, both sides.
    pub groups: Vec<PartGroup>,
    /// Every point of the instance is removed.
    pub all_points: bool,
    pub removed_points: usize,
    pub total_points: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RemovalSummary {
    pub total_points: usize,
    pub removed_points: usize,
    pub total_instances: usize,
    pub affected_instances: usize,
    pub fraction_points: f64,
    pub fraction_instances: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RemovalList {
    pub entries: Vec<RemovalEntry>,
    pub summary: RemovalSummary,
}

impl RemovalList {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, instance_id: &str) -> Option<&RemovalEntry> {
        self.entries.iter().find(|e| e.instance_id == instance_id)
    }

    /// Ground-truth points of `instance` that survive the removal.
    pub fn surviving_points(&self, instance: &InstanceInput, mesh: &CanonicalMesh) -> Option<Vec<GtPoint>> {
        let points = instance.gt_points.as_ref()?;
        let Some(entry) = self.entry(&instance.id) else {
            return Some(points.clone());
        };
        if entry.all_points {
            return Some(Vec::new());
        }
        Some(
            points
                .iter()
                .filter(|p| {
                    mesh.body_part_of(p.vertex)
                        .is_none_or(|part| !entry.groups.contains(&part.group()))
                })
                .copied()
                .collect(),
        )
    }

    /// A copy of `instance` with the removed points dropped.
    pub fn apply(&self, instance: &InstanceInput, mesh: &CanonicalMesh) -> InstanceInput {
        InstanceInput {
            gt_points: self.surviving_points(instance, mesh),
            ..instance.clone()
        }
    }
}

/// Aggregates report flags into per-group removals.
pub fn build_removal_list(reports: &[ConsistencyReport]) -> RemovalList {
    let mut entries = Vec::new();
    let mut summary = RemovalSummary {
        total_instances: reports.len(),
        ..Default::default()
    };
    for r in reports {
        summary.total_points += r.point_count;
        if !r.is_flagged() {
            continue;
        }
        let all_points = !r.instance_flags.is_empty();
        let mut groups: Vec<PartGroup> = r
            .parts
            .iter()
            .filter(|p| !p.flags.is_empty())
            .map(|p| p.part.group())
            .collect();
        groups.sort();
        groups.dedup();
        let removed_points = if all_points {
            r.point_count
        } else {
            r.parts
                .iter()
                .filter(|p| groups.contains(&p.part.group()))
                .map(|p| p.points)
                .sum()
        };
        summary.removed_points += removed_points;
        summary.affected_instances += 1;
        entries.push(RemovalEntry {
            instance_id: r.instance_id.clone(),
            groups,
            all_points,
            removed_points,
            total_points: r.point_count,
        });
    }
    if summary.total_points > 0 {
        summary.fraction_points = summary.removed_points as f64 / summary.total_points as f64;
    }
    if summary.total_instances > 0 {
        summary.fraction_instances = summary.affected_instances as f64 / summary.total_instances as f64;
    }
    RemovalList { entries, summary }
}
