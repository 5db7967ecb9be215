//! Procedural mannequin and synthetic instance corpus.
//!
//! The mannequin is a low-poly human (about 320 vertices) made of hexagonal
//! tubes for the limbs, an elliptic torso split front/back, and a sphere for
//! the head, partitioned with the default 15-part layout. Its vertex
//! embeddings are random Fourier features of `(|x|, y, z)` plus one small
//! component proportional to `x`, so left and right twins are near-identical,
//! as with learned embeddings.
//!
//! Instances are rendered orthographically with a z-buffer; every foreground
//! pixel knows its ground-truth vertex, and its embedding is that vertex's
//! embedding plus Gaussian noise. Model axes: `+x` is the person's left, `+y`
//! up, `+z` the direction the person faces.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::LabelMap;
use crate::io::{write_embeddings, write_instance, write_json, write_mesh, FramesJson, MeshBundle};
use crate::model::{
    coco, wholebody, Annotations, BBox, BodyPart, BoneId, BoneLengths, CanonicalMesh, EmbeddingSet, GtPoint,
    InstanceInput, Keypoint, Mask, PartGroup, PartSet, PixelEmbeddings, Point2, Skeleton2D, SkeletonKind,
};

pub const EMBEDDING_DIM: usize = 16;
const EMBEDDING_SEED: u64 = 0x5eed_cafe;
const ANTISYMMETRIC_WEIGHT: f64 = 1.5;
const FEATURE_FREQUENCY: f64 = 4.0;
/// Keypoint confidence written by the renderer.
pub const KEYPOINT_CONFIDENCE: f64 = 0.9;

type V3 = [f64; 3];

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn mul(a: V3, k: f64) -> V3 {
    [a[0] * k, a[1] * k, a[2] * k]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: V3) -> V3 {
    mul(a, 1.0 / dot(a, a).sqrt())
}

fn dist(a: V3, b: V3) -> f64 {
    let d = sub(a, b);
    dot(d, d).sqrt()
}

#[derive(Clone, Copy, Debug)]
struct Mat3([[f64; 3]; 3]);

impl Mat3 {
    const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    fn rx(a: f64) -> Mat3 {
        let (s, c) = a.sin_cos();
        Mat3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    fn ry(a: f64) -> Mat3 {
        let (s, c) = a.sin_cos();
        Mat3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    fn rz(a: f64) -> Mat3 {
        let (s, c) = a.sin_cos();
        Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    fn apply(&self, v: V3) -> V3 {
        let m = &self.0;
        [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
    }

    fn then(&self, other: &Mat3) -> Mat3 {
        // other * self
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| other.0[i][k] * self.0[k][j]).sum();
            }
        }
        Mat3(out)
    }
}

/// Rest-pose joints; index 0 is the left side (`+x`), 1 the right.
#[derive(Clone, Debug)]
struct Joints {
    shoulder: [V3; 2],
    elbow: [V3; 2],
    wrist: [V3; 2],
    hand_tip: [V3; 2],
    hip: [V3; 2],
    knee: [V3; 2],
    ankle: [V3; 2],
    toe: [V3; 2],
}

const HEAD_CENTER: V3 = [0.0, 1.57, 0.0];
const HEAD_RADIUS: f64 = 0.11;

fn rest_joints() -> Joints {
    let pair = |x: f64, y: f64, z: f64| [[x, y, z], [-x, y, z]];
    Joints {
        shoulder: pair(0.18, 1.40, 0.0),
        elbow: pair(0.26, 1.12, 0.0),
        wrist: pair(0.32, 0.86, 0.0),
        hand_tip: pair(0.35, 0.70, 0.0),
        hip: pair(0.09, 0.92, 0.0),
        knee: pair(0.10, 0.50, 0.0),
        ankle: pair(0.10, 0.08, 0.0),
        toe: pair(0.10, 0.02, 0.14),
    }
}

struct MeshBuilder {
    vertices: Vec<V3>,
    faces: Vec<[u32; 3]>,
    uv: Vec<[f64; 2]>,
    partition_of: Vec<u16>,
}

impl MeshBuilder {
    fn push(&mut self, p: V3, part: BodyPart, s: f64, t: f64) -> u32 {
        let id = part.id();
        let (tx, ty) = ((id % 4) as f64, (id / 4) as f64);
        self.vertices.push(p);
        self.uv.push([(tx + 0.1 + 0.8 * s) / 4.0, (ty + 0.1 + 0.8 * t) / 4.0]);
        self.partition_of.push(id as u16);
        (self.vertices.len() - 1) as u32
    }

    fn quad(&mut self, a: u32, b: u32, c: u32, d: u32) {
        self.faces.push([a, b, c]);
        self.faces.push([a, c, d]);
    }

    fn band(&mut self, lower: &[u32], upper: &[u32]) {
        let n = lower.len();
        for k in 0..n {
            self.quad(lower[k], lower[(k + 1) % n], upper[(k + 1) % n], upper[k]);
        }
    }

    fn fan(&mut self, ring: &[u32], center: u32) {
        let n = ring.len();
        for k in 0..n {
            self.faces.push([ring[k], ring[(k + 1) % n], center]);
        }
    }

    fn nearest(&self, v: u32, candidates: &[u32]) -> u32 {
        let p = self.vertices[v as usize];
        *candidates
            .iter()
            .min_by(|&&a, &&b| dist(p, self.vertices[a as usize]).total_cmp(&dist(p, self.vertices[b as usize])))
            .expect("non-empty candidates")
    }

    /// Joins a ring to the closest vertices of another surface.
    fn stitch(&mut self, ring: &[u32], candidates: &[u32]) {
        let n = ring.len();
        for k in 0..n {
            let (a, b) = (ring[k], ring[(k + 1) % n]);
            let (na, nb) = (self.nearest(a, candidates), self.nearest(b, candidates));
            self.faces.push([a, b, na]);
            if na != nb {
                self.faces.push([b, nb, na]);
            }
        }
    }

    /// Hexagonal tube from `a` to `b`; returns its rings, first to last.
    fn tube(&mut self, part: BodyPart, a: V3, b: V3, radius: f64, rings: usize, tip: bool) -> Vec<Vec<u32>> {
        const SIDES: usize = 6;
        let d = normalize(sub(b, a));
        let z = [0.0, 0.0, 1.0];
        let e1 = normalize(sub(z, mul(d, dot(z, d))));
        let e2 = cross(d, e1);
        let mut out = Vec::with_capacity(rings);
        for j in 0..rings {
            let t = (j as f64 + 0.5) / rings as f64;
            let c = add(a, mul(sub(b, a), t));
            let ring: Vec<u32> = (0..SIDES)
                .map(|k| {
                    let phi = 2.0 * PI * k as f64 / SIDES as f64;
                    let p = add(c, add(mul(e1, radius * phi.cos()), mul(e2, radius * phi.sin())));
                    self.push(p, part, k as f64 / SIDES as f64, t)
                })
                .collect();
            if let Some(prev) = out.last() {
                let prev: &Vec<u32> = prev;
                let prev = prev.clone();
                self.band(&prev, &ring);
            }
            out.push(ring);
        }
        if tip {
            let v = self.push(b, part, 0.5, 1.0);
            let last = out.last().expect("rings").clone();
            self.fan(&last, v);
        }
        out
    }
}

/// The mannequin with its embeddings and left/right vertex map.
#[derive(Clone, Debug)]
pub struct Mannequin {
    pub bundle: MeshBundle,
    pub embeddings: EmbeddingSet,
    joints: Joints,
}

impl Mannequin {
    pub fn mesh(&self) -> &CanonicalMesh {
        &self.bundle.mesh
    }

    pub fn mirror_of(&self) -> &[u32] {
        self.bundle.mirror_of.as_deref().expect("mannequin has a mirror map")
    }

    pub fn bone_lengths(&self) -> &BoneLengths {
        &self.bundle.bone_lengths
    }
}

/// Builds the mannequin. Deterministic.
pub fn mannequin() -> Mannequin {
    let j = rest_joints();
    let mut b = MeshBuilder {
        vertices: Vec::new(),
        faces: Vec::new(),
        uv: Vec::new(),
        partition_of: Vec::new(),
    };

    // Torso: elliptic cylinder, 12 sides offset by 15 degrees so no vertex
    // sits on the sagittal plane.
    let (y0, y1, ax, az) = (0.92, 1.42, 0.17, 0.10);
    let mut torso_rings = Vec::new();
    for r in 0..5 {
        let t = r as f64 / 4.0;
        let y = y0 + (y1 - y0) * t;
        let ring: Vec<u32> = (0..12)
            .map(|k| {
                let th = (15.0 + 30.0 * k as f64).to_radians();
                let part = if th.sin() > 0.0 {
                    BodyPart::TorsoFront
                } else {
                    BodyPart::TorsoBack
                };
                b.push([ax * th.cos(), y, az * th.sin()], part, k as f64 / 12.0, t)
            })
            .collect();
        if let Some(prev) = torso_rings.last() {
            let prev: &Vec<u32> = prev;
            let prev = prev.clone();
            b.band(&prev, &ring);
        }
        torso_rings.push(ring);
    }
    let top = b.push([0.0, y1, 0.0], BodyPart::TorsoFront, 0.5, 1.0);
    let bottom = b.push([0.0, y0, 0.0], BodyPart::TorsoBack, 0.5, 0.0);
    b.fan(&torso_rings[4], top);
    b.fan(&torso_rings[0], bottom);
    let torso_all: Vec<u32> = torso_rings.iter().flatten().copied().collect();

    // Head: 4 latitude rings of 8, plus poles.
    let mut head_rings = Vec::new();
    for (r, lat) in [-60.0f64, -20.0, 20.0, 60.0].iter().enumerate() {
        let lat = lat.to_radians();
        let ring: Vec<u32> = (0..8)
            .map(|k| {
                let lon = (45.0 * k as f64).to_radians();
                let p = add(
                    HEAD_CENTER,
                    [
                        HEAD_RADIUS * lat.cos() * lon.cos(),
                        HEAD_RADIUS * lat.sin(),
                        HEAD_RADIUS * lat.cos() * lon.sin(),
                    ],
                );
                b.push(p, BodyPart::Head, k as f64 / 8.0, (r + 1) as f64 / 5.0)
            })
            .collect();
        if let Some(prev) = head_rings.last() {
            let prev: &Vec<u32> = prev;
            let prev = prev.clone();
            b.band(&prev, &ring);
        }
        head_rings.push(ring);
    }
    let crown = b.push(add(HEAD_CENTER, [0.0, HEAD_RADIUS, 0.0]), BodyPart::Head, 0.5, 1.0);
    let chin = b.push(add(HEAD_CENTER, [0.0, -HEAD_RADIUS, 0.0]), BodyPart::Head, 0.5, 0.0);
    b.fan(&head_rings[3], crown);
    b.fan(&head_rings[0], chin);
    b.stitch(&head_rings[0], &torso_rings[4]);

    use BodyPart::*;
    for s in 0..2 {
        let pick = |l: BodyPart, r: BodyPart| if s == 0 { l } else { r };
        let arm = b.tube(pick(LeftArm, RightArm), j.shoulder[s], j.elbow[s], 0.045, 3, false);
        let fore = b.tube(pick(LeftForearm, RightForearm), j.elbow[s], j.wrist[s], 0.04, 3, false);
        let hand = b.tube(pick(LeftHand, RightHand), j.wrist[s], j.hand_tip[s], 0.03, 2, true);
        b.stitch(&arm[0], &torso_all);
        b.band(&arm[2], &fore[0]);
        b.band(&fore[2], &hand[0]);

        let thigh = b.tube(pick(LeftThigh, RightThigh), j.hip[s], j.knee[s], 0.065, 3, false);
        let shin = b.tube(pick(LeftShin, RightShin), j.knee[s], j.ankle[s], 0.05, 3, false);
        let foot = b.tube(pick(LeftFoot, RightFoot), j.ankle[s], j.toe[s], 0.035, 2, true);
        b.stitch(&thigh[0], &torso_all);
        b.band(&thigh[2], &shin[0]);
        b.band(&shin[2], &foot[0]);
    }

    let mirror_of: Vec<u32> = b
        .vertices
        .iter()
        .map(|&p| {
            let q = [-p[0], p[1], p[2]];
            let (i, d) = b
                .vertices
                .iter()
                .enumerate()
                .map(|(i, &v)| (i, dist(v, q)))
                .min_by(|a, c| a.1.total_cmp(&c.1))
                .expect("vertices");
            debug_assert!(d < 1e-9, "mannequin is not mirror-symmetric");
            i as u32
        })
        .collect();

    let mut lengths = BTreeMap::new();
    for bone in BoneId::ALL {
        let (a, c) = match bone {
            BoneId::LeftArm => (j.shoulder[0], j.elbow[0]),
            BoneId::RightArm => (j.shoulder[1], j.elbow[1]),
            BoneId::LeftForearm => (j.elbow[0], j.wrist[0]),
            BoneId::RightForearm => (j.elbow[1], j.wrist[1]),
            BoneId::LeftThigh => (j.hip[0], j.knee[0]),
            BoneId::RightThigh => (j.hip[1], j.knee[1]),
            BoneId::LeftShin => (j.knee[0], j.ankle[0]),
            BoneId::RightShin => (j.knee[1], j.ankle[1]),
            BoneId::Shoulders => (j.shoulder[0], j.shoulder[1]),
            BoneId::LeftSide => (j.shoulder[0], j.hip[0]),
            BoneId::Hips => (j.hip[0], j.hip[1]),
            BoneId::RightSide => (j.shoulder[1], j.hip[1]),
        };
        lengths.insert(bone, dist(a, c));
    }

    let embeddings = mannequin_embeddings(&b.vertices);
    let mesh = CanonicalMesh {
        vertices: b.vertices,
        faces: b.faces,
        uv: b.uv,
        partition_of: b.partition_of,
        partition_names: BodyPart::ALL.iter().map(|p| p.name().to_string()).collect(),
    };
    Mannequin {
        bundle: MeshBundle {
            mesh,
            bone_lengths: BoneLengths(lengths),
            canonical_height: 1.7,
            mirror_of: Some(mirror_of),
        },
        embeddings,
        joints: j,
    }
}

fn mannequin_embeddings(vertices: &[V3]) -> EmbeddingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(EMBEDDING_SEED);
    let normal = Normal::new(0.0, FEATURE_FREQUENCY).expect("valid normal");
    let features: Vec<(V3, f64)> = (0..EMBEDDING_DIM - 1)
        .map(|_| {
            let w = [
                normal.sample(&mut rng),
                normal.sample(&mut rng),
                normal.sample(&mut rng),
            ];
            (w, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let mut data = Vec::with_capacity(vertices.len() * EMBEDDING_DIM);
    for &p in vertices {
        let q = [p[0].abs(), p[1], p[2]];
        let mut row: Vec<f64> = features.iter().map(|&(w, b)| (dot(w, q) + b).cos()).collect();
        row.push(ANTISYMMETRIC_WEIGHT * p[0]);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(row.iter().map(|v| (v / n) as f32));
    }
    EmbeddingSet::new(EMBEDDING_DIM, data).expect("whole rows")
}

/// Articulation of the mannequin. Angles in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Arms raised sideways in the frontal plane.
    pub arm_abduction: f64,
    /// Extra frontal-plane rotation of the forearms.
    pub elbow_bend: f64,
    /// Legs spread sideways; negative brings them together.
    pub leg_abduction: f64,
    /// Shins rotated backwards.
    pub knee_bend: f64,
    /// Rotation about the vertical axis.
    pub yaw: f64,
    /// Seen from behind.
    pub dorsal: bool,
}

/// Orthographic camera: image `x = cx + s X`, `y = cy - s Y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub pixels_per_unit: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    pub fn standard() -> Camera {
        Camera {
            width: 96,
            height: 112,
            pixels_per_unit: 60.0,
            cx: 47.5,
            cy: 106.0,
        }
    }

    fn project(&self, p: V3) -> (f64, f64, f64) {
        (
            self.cx + self.pixels_per_unit * p[0],
            self.cy - self.pixels_per_unit * p[1],
            p[2],
        )
    }
}

/// Rigid transform per body part for a pose: `p' = to + R (p - from)`.
#[derive(Clone, Copy, Debug)]
struct PartTransform {
    from: V3,
    to: V3,
    rot: Mat3,
}

impl PartTransform {
    fn apply(&self, p: V3) -> V3 {
        add(self.to, self.rot.apply(sub(p, self.from)))
    }
}

fn part_transforms(j: &Joints, pose: &Pose) -> [PartTransform; BodyPart::COUNT] {
    let id = PartTransform {
        from: [0.0; 3],
        to: [0.0; 3],
        rot: Mat3::IDENTITY,
    };
    let mut out = [id; BodyPart::COUNT];
    for s in 0..2 {
        let sigma = if s == 0 { 1.0 } else { -1.0 };
        let r_arm = Mat3::rz(sigma * pose.arm_abduction);
        let r_fore = Mat3::rz(sigma * (pose.arm_abduction + pose.elbow_bend));
        let elbow = add(j.shoulder[s], r_arm.apply(sub(j.elbow[s], j.shoulder[s])));
        let wrist = add(elbow, r_fore.apply(sub(j.wrist[s], j.elbow[s])));
        let r_thigh = Mat3::rz(sigma * pose.leg_abduction);
        let r_shin = Mat3::rx(pose.knee_bend).then(&r_thigh);
        let knee = add(j.hip[s], r_thigh.apply(sub(j.knee[s], j.hip[s])));
        let ankle = add(knee, r_shin.apply(sub(j.ankle[s], j.knee[s])));
        let parts = if s == 0 {
            [
                BodyPart::LeftArm,
                BodyPart::LeftForearm,
                BodyPart::LeftHand,
                BodyPart::LeftThigh,
                BodyPart::LeftShin,
                BodyPart::LeftFoot,
            ]
        } else {
            [
                BodyPart::RightArm,
                BodyPart::RightForearm,
                BodyPart::RightHand,
                BodyPart::RightThigh,
                BodyPart::RightShin,
                BodyPart::RightFoot,
            ]
        };
        let t = [
            (j.shoulder[s], j.shoulder[s], r_arm),
            (j.elbow[s], elbow, r_fore),
            (j.wrist[s], wrist, r_fore),
            (j.hip[s], j.hip[s], r_thigh),
            (j.knee[s], knee, r_shin),
            (j.ankle[s], ankle, r_shin),
        ];
        for (part, (from, to, rot)) in parts.into_iter().zip(t) {
            out[part.id()] = PartTransform { from, to, rot };
        }
    }
    out
}

fn global_rotation(pose: &Pose) -> Mat3 {
    Mat3::ry(pose.yaw + if pose.dorsal { PI } else { 0.0 })
}

/// Whole-body keypoints of the rest pose with the part that carries each.
fn rest_keypoints(j: &Joints) -> Vec<(V3, BodyPart)> {
    use BodyPart::*;
    let h = HEAD_CENTER;
    let mut k = vec![([0.0; 3], Head); 133];
    k[coco::NOSE] = (add(h, [0.0, 0.0, HEAD_RADIUS]), Head);
    k[coco::LEFT_EYE] = (add(h, [0.035, 0.03, 0.095]), Head);
    k[coco::RIGHT_EYE] = (add(h, [-0.035, 0.03, 0.095]), Head);
    k[coco::LEFT_EAR] = (add(h, [HEAD_RADIUS, 0.0, 0.0]), Head);
    k[coco::RIGHT_EAR] = (add(h, [-HEAD_RADIUS, 0.0, 0.0]), Head);
    for s in 0..2 {
        let l = s == 0;
        let sel = |a: usize, b: usize| if l { a } else { b };
        let part = |a: BodyPart, b: BodyPart| if l { a } else { b };
        k[sel(coco::LEFT_SHOULDER, coco::RIGHT_SHOULDER)] = (j.shoulder[s], part(LeftArm, RightArm));
        k[sel(coco::LEFT_ELBOW, coco::RIGHT_ELBOW)] = (j.elbow[s], part(LeftForearm, RightForearm));
        k[sel(coco::LEFT_WRIST, coco::RIGHT_WRIST)] = (j.wrist[s], part(LeftHand, RightHand));
        k[sel(coco::LEFT_HIP, coco::RIGHT_HIP)] = (j.hip[s], part(LeftThigh, RightThigh));
        k[sel(coco::LEFT_KNEE, coco::RIGHT_KNEE)] = (j.knee[s], part(LeftShin, RightShin));
        k[sel(coco::LEFT_ANKLE, coco::RIGHT_ANKLE)] = (j.ankle[s], part(LeftFoot, RightFoot));

        let sigma = if l { 1.0 } else { -1.0 };
        let foot = part(LeftFoot, RightFoot);
        let toe = j.toe[s];
        k[sel(wholebody::LEFT_BIG_TOE, wholebody::RIGHT_BIG_TOE)] = (add(toe, [-sigma * 0.02, 0.0, 0.0]), foot);
        k[sel(wholebody::LEFT_SMALL_TOE, wholebody::RIGHT_SMALL_TOE)] = (add(toe, [sigma * 0.025, 0.0, -0.02]), foot);
        k[sel(wholebody::LEFT_HEEL, wholebody::RIGHT_HEEL)] = (add(j.ankle[s], [0.0, -0.06, -0.04]), foot);

        let hand = part(LeftHand, RightHand);
        let root = sel(wholebody::LEFT_HAND_ROOT, wholebody::RIGHT_HAND_ROOT);
        let (w, t) = (j.wrist[s], j.hand_tip[s]);
        let d = sub(t, w);
        let perp = mul(normalize([-d[1], d[0], 0.0]), sigma);
        k[root] = (w, hand);
        for f in 0..5 {
            for jj in 1..=4 {
                let along = 0.3 + 0.7 * jj as f64 / 4.0;
                let lateral = (f as f64 - 2.0) * 0.012 * jj as f64 / 4.0;
                k[root + 1 + 4 * f + (jj - 1)] = (add(add(w, mul(d, along)), mul(perp, lateral)), hand);
            }
        }
    }
    for i in 0..wholebody::FACE_COUNT {
        let a = 2.0 * PI * i as f64 / wholebody::FACE_COUNT as f64;
        k[wholebody::FACE_START + i] = (add(h, [0.06 * a.cos(), 0.06 * a.sin(), 0.09]), Head);
    }
    k
}

/// A rendered pose: silhouette, per-pixel ground truth and projected keypoints.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub mask: Mask,
    /// Ground-truth vertex per pixel, `u32::MAX` on background.
    pub gt_vertex: Vec<u32>,
    /// Whole-body keypoints in image coordinates.
    pub keypoints: Vec<Point2>,
}

/// Rasterizes the posed mannequin with a z-buffer; the ground-truth vertex of
/// a pixel is the corner with the largest barycentric weight.
pub fn render_pose(m: &Mannequin, pose: &Pose, cam: &Camera) -> Rendered {
    let mesh = m.mesh();
    let transforms = part_transforms(&m.joints, pose);
    let g = global_rotation(pose);
    let posed: Vec<(f64, f64, f64)> = mesh
        .vertices
        .iter()
        .zip(&mesh.partition_of)
        .map(|(&v, &p)| cam.project(g.apply(transforms[p as usize].apply(v))))
        .collect();
    let (w, h) = (cam.width, cam.height);
    let mut depth = vec![f64::NEG_INFINITY; w * h];
    let mut gt = vec![u32::MAX; w * h];
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| posed[i as usize]);
        let area = (b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1);
        if area.abs() < 1e-12 {
            continue;
        }
        let x0 = a.0.min(b.0).min(c.0).floor().max(0.0) as usize;
        let x1 = (a.0.max(b.0).max(c.0).ceil().max(0.0) as usize).min(w.saturating_sub(1));
        let y0 = a.1.min(b.1).min(c.1).floor().max(0.0) as usize;
        let y1 = (a.1.max(b.1).max(c.1).ceil().max(0.0) as usize).min(h.saturating_sub(1));
        for py in y0..=y1 {
            for px in x0..=x1 {
                let (x, y) = (px as f64, py as f64);
                let l0 = ((b.0 - x) * (c.1 - y) - (c.0 - x) * (b.1 - y)) / area;
                let l1 = ((c.0 - x) * (a.1 - y) - (a.0 - x) * (c.1 - y)) / area;
                let l2 = 1.0 - l0 - l1;
                if l0 < -1e-9 || l1 < -1e-9 || l2 < -1e-9 {
                    continue;
                }
                let z = l0 * a.2 + l1 * b.2 + l2 * c.2;
                let i = py * w + px;
                if z > depth[i] {
                    depth[i] = z;
                    let weights = [l0, l1, l2];
                    let mut best = 0;
                    for k in 1..3 {
                        if weights[k] > weights[best] {
                            best = k;
                        }
                    }
                    gt[i] = f[best];
                }
            }
        }
    }
    let mask = Mask::new(w, h, gt.iter().map(|&v| v != u32::MAX).collect()).expect("shape");
    let keypoints = rest_keypoints(&m.joints)
        .into_iter()
        .map(|(p, part)| {
            let (x, y, _) = cam.project(g.apply(transforms[part.id()].apply(p)));
            Point2::new(x, y)
        })
        .collect();
    Rendered {
        mask,
        gt_vertex: gt,
        keypoints,
    }
}

/// Builds a skeleton of `kind` from projected whole-body keypoints.
pub fn skeleton_from_points(points: &[Point2], kind: SkeletonKind, lengths: &BoneLengths) -> Skeleton2D {
    let kps = points[..kind.keypoint_count()]
        .iter()
        .map(|p| Keypoint::new(p.x, p.y, KEYPOINT_CONFIDENCE, 0.0))
        .collect();
    Skeleton2D::new(kind, kps, lengths).expect("valid skeleton")
}

/// Recipe for one synthetic instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub id: String,
    pub pose: Pose,
    pub camera: Camera,
    pub kind: SkeletonKind,
    /// Per-component Gaussian noise on pixel embeddings.
    pub noise: f64,
    /// Limb group whose pixels carry the opposite side's embeddings.
    pub swap: Option<PartGroup>,
    /// Ground-truth points sampled per visible body part.
    pub points_per_part: usize,
    pub detection_score: f64,
    pub seed: u64,
}

pub fn make_instance(m: &Mannequin, spec: &InstanceSpec) -> InstanceInput {
    let mesh = m.mesh();
    let mirror = m.mirror_of();
    let r = render_pose(m, &spec.pose, &spec.camera);
    let (w, h) = (spec.camera.width, spec.camera.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("valid noise");
    let d = m.embeddings.dim();
    let mut data = vec![0.0f32; w * h * d];
    let mut by_part: Vec<Vec<usize>> = vec![Vec::new(); BodyPart::COUNT];
    for (i, &v) in r.gt_vertex.iter().enumerate() {
        if v == u32::MAX {
            continue;
        }
        let part = mesh.partition_of[v as usize] as usize;
        by_part[part].push(i);
        let swapped = spec.swap.is_some_and(|g| g.parts().iter().any(|p| p.id() == part));
        let src = if swapped { mirror[v as usize] } else { v };
        let row = m.embeddings.row(src as usize);
        for k in 0..d {
            let n = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            data[i * d + k] = (f64::from(row[k]) + n) as f32;
        }
    }
    let embeddings = PixelEmbeddings::new(w, h, d, data).expect("shape");

    let mut gt_points = Vec::new();
    for pixels in &by_part {
        let take = spec.points_per_part.min(pixels.len());
        let mut chosen: Vec<usize> = sample(&mut rng, pixels.len(), take)
            .into_iter()
            .map(|k| pixels[k])
            .collect();
        chosen.sort_unstable();
        gt_points.extend(chosen.into_iter().map(|i| GtPoint {
            x: (i % w) as f64,
            y: (i / w) as f64,
            vertex: r.gt_vertex[i],
        }));
    }
    gt_points.sort_by(|a, b| (a.y, a.x).partial_cmp(&(b.y, b.x)).expect("finite"));

    let skeleton = skeleton_from_points(&r.keypoints, spec.kind, m.bone_lengths());
    InstanceInput {
        id: spec.id.clone(),
        bbox: mask_bbox(&r.mask),
        mask: r.mask,
        embeddings,
        skeleton,
        gt_points: Some(gt_points),
        detection_score: spec.detection_score,
        annotations: Annotations {
            is_crowd: Some(false),
            overlapping_instances: Some(0),
            inference_gps: None,
        },
    }
}

/// Tight closed box around the foreground; the whole image if empty.
pub fn mask_bbox(mask: &Mask) -> BBox {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return BBox::new(0.0, 0.0, mask.width() as f64, mask.height() as f64);
    }
    BBox::new(x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0) as f64)
}

/// Default noise level of the synthetic suites.
pub const SUITE_NOISE: f64 = 0.03;

fn suite_pose(i: usize, rng: &mut ChaCha8Rng) -> Pose {
    Pose {
        arm_abduction: rng.random_range(0.0..0.5),
        elbow_bend: rng.random_range(-0.2..0.6),
        leg_abduction: rng.random_range(-0.03..0.08),
        knee_bend: rng.random_range(0.0..0.6),
        yaw: rng.random_range(-0.35..0.35),
        dorsal: i % 4 == 3,
    }
}

/// Instances whose embeddings on one limb pair are mirrored: the baseline
/// assigns those pixels to the opposite side of the body.
pub fn swapped_limb_suite(m: &Mannequin, count: usize) -> Vec<InstanceInput> {
    let groups = [
        PartGroup::Forearms,
        PartGroup::Shins,
        PartGroup::Thighs,
        PartGroup::Arms,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a5a_0001);
    (0..count)
        .map(|i| {
            let pose = suite_pose(i, &mut rng);
            let spec = InstanceSpec {
                id: format!("swap_{i:03}"),
                pose,
                camera: Camera::standard(),
                kind: if i % 3 == 2 {
                    SkeletonKind::WholeBody133
                } else {
                    SkeletonKind::Coco17
                },
                noise: SUITE_NOISE,
                swap: Some(groups[i % groups.len()]),
                points_per_part: 5,
                detection_score: rng.random_range(0.3..1.0),
                seed: 1000 + i as u64,
            };
            make_instance(m, &spec)
        })
        .collect()
}

/// Uncorrupted instances.
pub fn clean_suite(m: &Mannequin, count: usize) -> Vec<InstanceInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a5a_0002);
    (0..count)
        .map(|i| {
            let pose = suite_pose(i, &mut rng);
            let spec = InstanceSpec {
                id: format!("clean_{i:03}"),
                pose,
                camera: Camera::standard(),
                kind: if i % 2 == 1 {
                    SkeletonKind::WholeBody133
                } else {
                    SkeletonKind::Coco17
                },
                noise: SUITE_NOISE,
                swap: None,
                points_per_part: 5,
                detection_score: rng.random_range(0.3..1.0),
                seed: 2000 + i as u64,
            };
            make_instance(m, &spec)
        })
        .collect()
}

/// Relabels every ground-truth point on a lateral body part with its
/// opposite-side twin vertex, as an annotator confusing left and right would.
pub fn swap_annotation_sides(instance: &InstanceInput, mesh: &CanonicalMesh, mirror_of: &[u32]) -> InstanceInput {
    let gt_points = instance.gt_points.as_ref().map(|pts| {
        pts.iter()
            .map(|p| match mesh.body_part_of(p.vertex) {
                Some(part) if part.side().is_some() => GtPoint {
                    vertex: mirror_of[p.vertex as usize],
                    ..*p
                },
                _ => *p,
            })
            .collect()
    });
    InstanceInput {
        id: format!("{}_sides_swapped", instance.id),
        gt_points,
        ..instance.clone()
    }
}

/// Horizontal flip of a whole instance: image, skeleton labels, ground truth.
pub fn mirror_instance(instance: &InstanceInput, mirror_of: &[u32]) -> InstanceInput {
    let w = instance.width();
    let wf = w as f64 - 1.0;
    let b = instance.bbox;
    InstanceInput {
        id: format!("{}_mirrored", instance.id),
        bbox: BBox::new(wf - (b.x + b.w), b.y, b.w, b.h),
        mask: instance.mask.mirrored(),
        embeddings: instance.embeddings.mirrored(),
        skeleton: instance.skeleton.mirrored(w),
        gt_points: instance.gt_points.as_ref().map(|pts| {
            pts.iter()
                .map(|p| GtPoint {
                    x: wf - p.x,
                    y: p.y,
                    vertex: mirror_of[p.vertex as usize],
                })
                .collect()
        }),
        detection_score: instance.detection_score,
        annotations: instance.annotations.clone(),
    }
}

/// Camera for the height track: larger scale, no rendering.
pub fn track_camera() -> Camera {
    Camera {
        width: 400,
        height: 480,
        pixels_per_unit: 200.0,
        cx: 200.0,
        cy: 440.0,
    }
}

/// A fixed-camera sequence of one person moving, with keypoints jittered
/// uniformly by up to `jitter_px` pixels per coordinate.
pub fn height_track_frames(m: &Mannequin, frames: usize, jitter_px: f64, seed: u64) -> Vec<Skeleton2D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = track_camera();
    let transforms_kp = rest_keypoints(&m.joints);
    (0..frames)
        .map(|f| {
            let t = f as f64 / frames.max(1) as f64 * 2.0 * PI;
            let pose = Pose {
                arm_abduction: 0.3 + 0.25 * (2.0 * t).sin(),
                elbow_bend: 0.3 * (3.0 * t).sin().abs(),
                leg_abduction: 0.05 * t.cos(),
                knee_bend: 0.4 * (2.0 * t).sin().abs(),
                yaw: 0.3 * t.sin(),
                dorsal: false,
            };
            let tr = part_transforms(&m.joints, &pose);
            let g = global_rotation(&pose);
            let points: Vec<Point2> = transforms_kp
                .iter()
                .map(|&(p, part)| {
                    let (x, y, _) = cam.project(g.apply(tr[part.id()].apply(p)));
                    let jx = if jitter_px > 0.0 {
                        rng.random_range(-jitter_px..=jitter_px)
                    } else {
                        0.0
                    };
                    let jy = if jitter_px > 0.0 {
                        rng.random_range(-jitter_px..=jitter_px)
                    } else {
                        0.0
                    };
                    Point2::new(x + jx, y + jy)
                })
                .collect();
            skeleton_from_points(&points, SkeletonKind::Coco17, m.bone_lengths())
        })
        .collect()
}

/// Height of the standing rest pose under [`track_camera`], in pixels.
pub fn track_reference_height(m: &Mannequin) -> f64 {
    track_camera().pixels_per_unit * m.bundle.canonical_height
}

/// A small random assignment problem with deliberate score ties.
#[derive(Clone, Debug)]
pub struct AssignmentCase {
    pub instance: InstanceInput,
    pub mesh: CanonicalMesh,
    pub embeddings: EmbeddingSet,
    pub labels: LabelMap,
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize, quantize: bool) -> Vec<f32> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if quantize {
            for x in &mut v {
                *x = (*x * 2.0).round() / 2.0;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

/// Mesh up to 300 vertices, image up to 32x32, dimension up to 32. Vertex
/// rows come from a small quantized pool so exact ties are common.
pub fn random_assignment_case(seed: u64) -> AssignmentCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=300usize);
    let dim = rng.random_range(1..=32usize);
    let (w, h) = (rng.random_range(1..=32usize), rng.random_range(1..=32usize));
    let pool_size = rng.random_range(1..=n.div_ceil(3).max(1));
    let quantize = rng.random_bool(0.5);
    let pool: Vec<Vec<f32>> = (0..pool_size).map(|_| random_unit(&mut rng, dim, quantize)).collect();
    let rows: Vec<Vec<f32>> = (0..n).map(|_| pool[rng.random_range(0..pool_size)].clone()).collect();
    let partition_of: Vec<u16> = (0..n).map(|_| rng.random_range(0..BodyPart::COUNT as u16)).collect();
    let mesh = CanonicalMesh {
        vertices: vec![[0.0; 3]; n],
        faces: Vec::new(),
        uv: (0..n).map(|i| [i as f64 / n as f64, 0.5]).collect(),
        partition_of,
        partition_names: BodyPart::ALL.iter().map(|p| p.name().to_string()).collect(),
    };
    let populated: Vec<usize> = {
        let mut p: Vec<usize> = mesh.partition_of.iter().map(|&p| p as usize).collect();
        p.sort_unstable();
        p.dedup();
        p
    };
    let density = rng.random_range(0.3..=1.0);
    let mask = Mask::new(w, h, (0..w * h).map(|_| rng.random_bool(density)).collect()).expect("shape");
    let mut data = Vec::with_capacity(w * h * dim);
    for _ in 0..w * h {
        if rng.random_bool(0.3) {
            data.extend_from_slice(&pool[rng.random_range(0..pool_size)]);
        } else {
            data.extend(random_unit(&mut rng, dim, quantize));
        }
    }
    let embeddings = PixelEmbeddings::new(w, h, dim, data).expect("shape");
    let labels: Vec<PartSet> = (0..w * h)
        .map(|i| {
            if !mask.as_slice()[i] {
                return PartSet::EMPTY;
            }
            let mut s = PartSet(rng.random_range(0..=PartSet::HUMAN.bits()));
            if !populated.iter().any(|&p| s.contains(p)) {
                s.insert(populated[rng.random_range(0..populated.len())]);
            }
            s
        })
        .collect();
    let labels = LabelMap::new(w, h, labels).expect("shape");
    let skeleton = Skeleton2D::new(
        SkeletonKind::Coco17,
        vec![Keypoint::absent(); 17],
        &BoneLengths::uniform(1.0),
    )
    .expect("valid skeleton");
    AssignmentCase {
        instance: InstanceInput {
            id: format!("random_{seed}"),
            bbox: BBox::new(0.0, 0.0, w as f64, h as f64),
            mask,
            embeddings,
            skeleton,
            gt_points: None,
            detection_score: 1.0,
            annotations: Annotations::default(),
        },
        mesh,
        embeddings: EmbeddingSet::from_rows(&rows).expect("rows"),
        labels,
    }
}

/// Random keypoints inside a `w x h` image, each present with probability `presence`.
pub fn random_skeleton(seed: u64, kind: SkeletonKind, w: usize, h: usize, presence: f64) -> Skeleton2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kps = (0..kind.keypoint_count())
        .map(|_| {
            if rng.random_bool(presence) {
                Keypoint::new(
                    rng.random_range(0.0..w as f64),
                    rng.random_range(0.0..h as f64),
                    1.0,
                    0.5,
                )
            } else {
                Keypoint::absent()
            }
        })
        .collect();
    Skeleton2D::new(kind, kps, &BoneLengths::uniform(0.3)).expect("valid skeleton")
}

pub fn random_mask(seed: u64, w: usize, h: usize, density: f64) -> Mask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mask::new(w, h, (0..w * h).map(|_| rng.random_bool(density)).collect()).expect("shape")
}

/// Paths of a corpus written by [`write_corpus`].
#[derive(Clone, Debug, Serialize)]
pub struct CorpusPaths {
    pub mesh: PathBuf,
    pub embeddings: PathBuf,
    /// Swapped-limb suite.
    pub swap_set: PathBuf,
    /// Clean suite plus the same instances with left/right annotations swapped.
    pub audit_set: PathBuf,
    pub instance_dir: PathBuf,
    pub frames: PathBuf,
}

pub const CORPUS_SWAP_COUNT: usize = 24;
pub const CORPUS_CLEAN_COUNT: usize = 12;

/// Writes the mannequin, both suites and a height-track sequence under `dir`.
pub fn write_corpus(dir: &Path) -> Result<CorpusPaths> {
    let m = mannequin();
    let mesh = dir.join("mesh.json");
    let embeddings = dir.join("embeddings.pct");
    write_mesh(&mesh, &m.bundle)?;
    write_embeddings(&embeddings, &m.embeddings)?;

    let instance_dir = dir.join("instances");
    let mut swap_entries = Vec::new();
    for inst in swapped_limb_suite(&m, CORPUS_SWAP_COUNT) {
        let p = write_instance(&instance_dir, &inst)?;
        swap_entries.push(Path::new("instances").join(p.file_name().expect("file name")));
    }
    let audit_dir = dir.join("audit");
    let mut audit_entries = Vec::new();
    for inst in clean_suite(&m, CORPUS_CLEAN_COUNT) {
        let swapped = swap_annotation_sides(&inst, m.mesh(), m.mirror_of());
        for i in [inst, swapped] {
            let p = write_instance(&audit_dir, &i)?;
            audit_entries.push(Path::new("audit").join(p.file_name().expect("file name")));
        }
    }
    let set = |entries: Vec<PathBuf>| serde_json::json!({ "instances": entries });
    let swap_set = dir.join("swap_set.json");
    let audit_set = dir.join("audit_set.json");
    write_json(&swap_set, &set(swap_entries))?;
    write_json(&audit_set, &set(audit_entries))?;

    let frames = dir.join("frames.json");
    write_json(
        &frames,
        &FramesJson {
            kind: SkeletonKind::Coco17.name().into(),
            frames: height_track_frames(&m, 48, 2.0, 7)
                .iter()
                .map(Skeleton2D::triplets)
                .collect(),
        },
    )?;
    Ok(CorpusPaths {
        mesh,
        embeddings,
        swap_set,
        audit_set,
        instance_dir,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_mesh;

    #[test]
    fn mannequin_is_valid_and_small() {
        let m = mannequin();
        assert!(m.mesh().vertex_count() < 500);
        let report = validate_mesh(m.mesh(), &m.embeddings);
        assert!(report.is_empty(), "{:?}", report.issues);
        assert!(m.mesh().has_human_partitioning());
    }

    #[test]
    fn mirror_map_is_an_involution_swapping_sides() {
        let m = mannequin();
        let mesh = m.mesh();
        for (v, &w) in m.mirror_of().iter().enumerate() {
            assert_eq!(m.mirror_of()[w as usize] as usize, v);
            let (a, b) = (mesh.body_part_of(v as u32).unwrap(), mesh.body_part_of(w).unwrap());
            assert_eq!(a.mirror(), b);
        }
    }

    #[test]
    fn rendering_is_deterministic_and_covers_the_body() {
        let m = mannequin();
        let spec = InstanceSpec {
            id: "t".into(),
            pose: Pose::default(),
            camera: Camera::standard(),
            kind: SkeletonKind::Coco17,
            noise: 0.03,
            swap: None,
            points_per_part: 3,
            detection_score: 1.0,
            seed: 9,
        };
        let a = make_instance(&m, &spec);
        let b = make_instance(&m, &spec);
        assert_eq!(a, b);
        assert!(a.mask.count() > 500);
        let pts = a.gt_points.as_ref().unwrap();
        let parts: std::collections::BTreeSet<_> =
            pts.iter().map(|p| m.mesh().body_part_of(p.vertex).unwrap()).collect();
        assert_eq!(parts.len(), BodyPart::COUNT);
        a.validate(Some(m.mesh().vertex_count())).unwrap();
    }

    #[test]
    fn frontal_and_dorsal_facing() {
        use crate::geometry::{quadrilateral_facing, Facing};
        let m = mannequin();
        for (dorsal, want) in [(false, Facing::Frontal), (true, Facing::Dorsal)] {
            let r = render_pose(
                &m,
                &Pose {
                    dorsal,
                    ..Pose::default()
                },
                &Camera::standard(),
            );
            let k = &r.keypoints;
            let f = quadrilateral_facing(
                Some(k[coco::LEFT_SHOULDER]),
                Some(k[coco::RIGHT_SHOULDER]),
                Some(k[coco::RIGHT_HIP]),
                Some(k[coco::LEFT_HIP]),
            );
            assert_eq!(f, want);
        }
    }
}
