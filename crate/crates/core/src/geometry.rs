//! Pose-induced proximal regions and their rasterization into a [`LabelMap`].
//!
//! Every present limb bone is inflated into a capsule that admits the bone's
//! partition. The torso is the shoulder-hip quadrilateral merged with capsules
//! along its two lateral sides; inside the quadrilateral only the visible
//! torso side is admitted. Hands and feet get discs (COCO-17) or unions of
//! capsules along the finger and toe chains (whole-body). The head and every
//! part with a missing keypoint are admitted everywhere, and a pixel covered
//! by no region admits every partition.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{coco, wholebody, BodyPart, BoneId, Mask, PartSet, Point2, Skeleton2D, SkeletonKind};

/// Distance from `p` to the closed segment `ab`. `a == b` gives point distance.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    // Fixed endpoint order makes the result exactly symmetric in a and b.
    let (a, b) = if (b.x, b.y) < (a.x, a.y) { (b, a) } else { (a, b) };
    let ab = b - a;
    let len_sq = ab.dot(ab);
    if len_sq == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    p.distance(a + ab.scale(t))
}

/// Set of points within `radius` of the segment `endpoint_a`-`endpoint_b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    pub endpoint_a: Point2,
    pub endpoint_b: Point2,
    pub radius: f64,
}

impl Capsule {
    pub fn new(endpoint_a: Point2, endpoint_b: Point2, radius: f64) -> Self {
        Self {
            endpoint_a,
            endpoint_b,
            radius: radius.max(0.0),
        }
    }

    pub fn disc(center: Point2, radius: f64) -> Self {
        Self::new(center, center, radius)
    }

    /// Closed membership. A zero-radius capsule is empty.
    pub fn contains(&self, p: Point2) -> bool {
        self.radius > 0.0 && point_segment_distance(p, self.endpoint_a, self.endpoint_b) <= self.radius
    }

    /// `(min_x, min_y, max_x, max_y)` of the capsule.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let (a, b, r) = (self.endpoint_a, self.endpoint_b, self.radius);
        (a.x.min(b.x) - r, a.y.min(b.y) - r, a.x.max(b.x) + r, a.y.max(b.y) + r)
    }
}

/// Which side of the torso faces the camera.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Facing {
    Frontal,
    Dorsal,
    Indeterminate,
}

/// Shoelace signed area of a polygon in image coordinates (y down).
pub fn signed_area(polygon: &[Point2]) -> f64 {
    let n = polygon.len();
    0.5 * (0..n).map(|i| polygon[i].cross(polygon[(i + 1) % n])).sum::<f64>()
}

/// Below this absolute area (px^2) the quadrilateral is treated as collinear.
pub const MIN_QUAD_AREA: f64 = 1.0;

/// Classifies the view from the polygon LS -> RS -> RH -> LH: negative signed
/// area is frontal, positive dorsal. Missing or collinear corners give
/// [`Facing::Indeterminate`].
pub fn quadrilateral_facing(
    left_shoulder: Option<Point2>,
    right_shoulder: Option<Point2>,
    right_hip: Option<Point2>,
    left_hip: Option<Point2>,
) -> Facing {
    let (Some(ls), Some(rs), Some(rh), Some(lh)) = (left_shoulder, right_shoulder, right_hip, left_hip) else {
        return Facing::Indeterminate;
    };
    let area = signed_area(&[ls, rs, rh, lh]);
    if area.abs() < MIN_QUAD_AREA {
        Facing::Indeterminate
    } else if area < 0.0 {
        Facing::Frontal
    } else {
        Facing::Dorsal
    }
}

/// Closed point-in-polygon test (even-odd rule, boundary included).
pub fn polygon_contains(polygon: &[Point2], p: Point2) -> bool {
    let n = polygon.len();
    let mut inside = false;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        if point_segment_distance(p, a, b) <= 1e-9 {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Per-pixel admissible partitions. Background pixels hold the empty set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    allowed: Vec<PartSet>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, allowed: Vec<PartSet>) -> Result<Self> {
        if allowed.len() != width * height {
            return Err(Error::ShapeMismatch {
                left_name: "label data".into(),
                left: vec![allowed.len()],
                right_name: "width x height".into(),
                right: vec![height, width],
            });
        }
        Ok(Self { width, height, allowed })
    }

    /// `labels` at every foreground pixel.
    pub fn uniform(mask: &Mask, labels: PartSet) -> Self {
        let allowed = mask
            .as_slice()
            .iter()
            .map(|&fg| if fg { labels } else { PartSet::EMPTY })
            .collect();
        Self {
            width: mask.width(),
            height: mask.height(),
            allowed,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> PartSet {
        self.allowed[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[PartSet] {
        &self.allowed
    }

    pub fn raw(&self) -> Vec<u16> {
        self.allowed.iter().map(|s| s.bits()).collect()
    }
}

#[derive(Clone, Debug)]
struct Region {
    capsule: Capsule,
    parts: PartSet,
    bounds: (f64, f64, f64, f64),
}

impl Region {
    fn new(capsule: Capsule, parts: PartSet) -> Self {
        Self {
            bounds: capsule.bounds(),
            capsule,
            parts,
        }
    }

    fn contains(&self, p: Point2) -> bool {
        let (x0, y0, x1, y1) = self.bounds;
        p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1 && self.capsule.contains(p)
    }
}

#[derive(Clone, Debug)]
struct TorsoRegion {
    quad: [Point2; 4],
    sides: [Region; 2],
    facing: Facing,
}

impl TorsoRegion {
    fn parts_at(&self, p: Point2) -> PartSet {
        let both = BodyPart::TorsoFront.bit().union(BodyPart::TorsoBack.bit());
        if polygon_contains(&self.quad, p) {
            match self.facing {
                Facing::Frontal => BodyPart::TorsoFront.bit(),
                Facing::Dorsal => BodyPart::TorsoBack.bit(),
                Facing::Indeterminate => both,
            }
        } else if self.sides.iter().any(|s| s.contains(p)) {
            both
        } else {
            PartSet::EMPTY
        }
    }
}

/// The proximal regions induced by one skeleton at one radius.
#[derive(Clone, Debug)]
pub struct RegionPlan {
    regions: Vec<Region>,
    torso: Option<TorsoRegion>,
    free: PartSet,
}

impl RegionPlan {
    /// Builds the regions. A non-positive radius yields no regions at all,
    /// so every pixel admits every partition.
    pub fn new(skeleton: &Skeleton2D, radius: f64, hand_foot_radius_factor: f64) -> Self {
        let mut plan = RegionPlan {
            regions: Vec::new(),
            torso: None,
            free: BodyPart::Head.bit(),
        };
        if !(radius.is_finite() && radius > 0.0) {
            plan.free = PartSet::HUMAN;
            return plan;
        }

        for bone in BoneId::ALL {
            let Some(part) = bone.part() else { continue };
            match skeleton.bone_segment(bone) {
                Some((a, b)) => plan.regions.push(Region::new(Capsule::new(a, b, radius), part.bit())),
                None => plan.free.insert(part.id()),
            }
        }

        plan.add_torso(skeleton, radius);

        let extremities = [
            (BodyPart::LeftHand, coco::LEFT_WRIST),
            (BodyPart::RightHand, coco::RIGHT_WRIST),
            (BodyPart::LeftFoot, coco::LEFT_ANKLE),
            (BodyPart::RightFoot, coco::RIGHT_ANKLE),
        ];
        for (part, anchor) in extremities {
            let Some(center) = skeleton.point(anchor) else {
                plan.free.insert(part.id());
                continue;
            };
            let chains = match skeleton.kind() {
                SkeletonKind::WholeBody133 => extremity_segments(skeleton, part, anchor),
                SkeletonKind::Coco17 => Vec::new(),
            };
            if chains.is_empty() {
                let disc = Capsule::disc(center, hand_foot_radius_factor * radius);
                plan.regions.push(Region::new(disc, part.bit()));
            } else {
                for (a, b) in chains {
                    plan.regions.push(Region::new(Capsule::new(a, b, radius), part.bit()));
                }
            }
        }
        plan
    }

    fn add_torso(&mut self, skeleton: &Skeleton2D, radius: f64) {
        let corners = [
            skeleton.point(coco::LEFT_SHOULDER),
            skeleton.point(coco::RIGHT_SHOULDER),
            skeleton.point(coco::RIGHT_HIP),
            skeleton.point(coco::LEFT_HIP),
        ];
        let [Some(ls), Some(rs), Some(rh), Some(lh)] = corners else {
            self.free.insert(BodyPart::TorsoFront.id());
            self.free.insert(BodyPart::TorsoBack.id());
            return;
        };
        let facing = quadrilateral_facing(Some(ls), Some(rs), Some(rh), Some(lh));
        let both = BodyPart::TorsoFront.bit().union(BodyPart::TorsoBack.bit());
        self.torso = Some(TorsoRegion {
            quad: [ls, rs, rh, lh],
            sides: [
                Region::new(Capsule::new(ls, lh, radius), both),
                Region::new(Capsule::new(rs, rh, radius), both),
            ],
            facing,
        });
    }

    /// Parts admitted everywhere: the head and every missing part.
    pub fn free(&self) -> PartSet {
        self.free
    }

    pub fn facing(&self) -> Option<Facing> {
        self.torso.as_ref().map(|t| t.facing)
    }

    /// Union of the parts whose regions contain `p`.
    pub fn covered_at(&self, p: Point2) -> PartSet {
        let mut set = self
            .regions
            .iter()
            .filter(|r| r.contains(p))
            .fold(PartSet::EMPTY, |s, r| s.union(r.parts));
        if let Some(torso) = &self.torso {
            set = set.union(torso.parts_at(p));
        }
        set
    }

    /// Final label set at `p` for a foreground pixel.
    pub fn labels_at(&self, p: Point2) -> PartSet {
        let covered = self.covered_at(p);
        if covered.is_empty() {
            PartSet::HUMAN
        } else {
            covered.union(self.free)
        }
    }

    /// Label sets for every foreground pixel of `mask`.
    pub fn rasterize(&self, mask: &Mask) -> LabelMap {
        let width = mask.width();
        let mut allowed = vec![PartSet::EMPTY; width * mask.height()];
        if width > 0 {
            allowed.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
                for (x, cell) in row.iter_mut().enumerate() {
                    if mask.get(x, y) {
                        *cell = self.labels_at(Point2::new(x as f64, y as f64));
                    }
                }
            });
        }
        LabelMap {
            width,
            height: mask.height(),
            allowed,
        }
    }
}

/// Segments spanning a hand or foot from its body anchor through the extra
/// whole-body keypoints. Absent keypoints are skipped along each chain.
pub(crate) fn extremity_segments(skeleton: &Skeleton2D, part: BodyPart, anchor: usize) -> Vec<(Point2, Point2)> {
    let chains: Vec<Vec<usize>> = match part {
        BodyPart::LeftHand | BodyPart::RightHand => {
            let root = if part == BodyPart::LeftHand {
                wholebody::LEFT_HAND_ROOT
            } else {
                wholebody::RIGHT_HAND_ROOT
            };
            wholebody::finger_chains(root)
                .iter()
                .map(|c| std::iter::once(anchor).chain(c.iter().copied()).collect())
                .collect()
        }
        BodyPart::LeftFoot => [wholebody::LEFT_BIG_TOE, wholebody::LEFT_SMALL_TOE, wholebody::LEFT_HEEL]
            .iter()
            .map(|&t| vec![anchor, t])
            .collect(),
        BodyPart::RightFoot => [
            wholebody::RIGHT_BIG_TOE,
            wholebody::RIGHT_SMALL_TOE,
            wholebody::RIGHT_HEEL,
        ]
        .iter()
        .map(|&t| vec![anchor, t])
        .collect(),
        _ => Vec::new(),
    };
    let mut segments = Vec::new();
    for chain in chains {
        let points: Vec<Point2> = chain.iter().filter_map(|&i| skeleton.point(i)).collect();
        for w in points.windows(2) {
            if !segments.contains(&(w[0], w[1])) {
                segments.push((w[0], w[1]));
            }
        }
    }
    segments
}

/// Rasterizes the proximal regions of `skeleton` over the foreground of `mask`.
///
/// `radius` is the limb capsule radius in pixels; hand and foot discs use
/// `hand_foot_radius_factor * radius`.
pub fn build_proximal_regions(
    skeleton: &Skeleton2D,
    radius: f64,
    mask: &Mask,
    hand_foot_radius_factor: f64,
) -> LabelMap {
    RegionPlan::new(skeleton, radius, hand_foot_radius_factor).rasterize(mask)
}
