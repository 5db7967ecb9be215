//! Core domain types: meshes, partitions, embeddings, skeletons and instances.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on partitions per mesh; label sets are 16-bit masks.
pub const MAX_PARTITIONS: usize = 16;

/// Tolerance on the L2 norm of each vertex embedding row.
pub const EMBEDDING_NORM_TOLERANCE: f64 = 1e-4;

/// A 2D point in pixel coordinates. Pixel `(col, row)` sits at `(col, row)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn scale(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;

    fn add(self, other: Point2) -> Point2 {
        Point2::new(self.x + other.x, self.y + other.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;

    fn sub(self, other: Point2) -> Point2 {
        Point2::new(self.x - other.x, self.y - other.y)
    }
}

/// The default human partitioning, in label-id order.
///
/// The discriminant is the partition label id and the bit index in a
/// [`PartSet`]. The order is part of the file formats and never changes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPart {
    LeftArm = 0,
    RightArm,
    LeftForearm,
    RightForearm,
    LeftHand,
    RightHand,
    LeftThigh,
    RightThigh,
    LeftShin,
    RightShin,
    LeftFoot,
    RightFoot,
    TorsoFront,
    TorsoBack,
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// A body part with laterality removed. Annotation removal works at this
/// granularity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartGroup {
    Arms,
    Forearms,
    Hands,
    Thighs,
    Shins,
    Feet,
    Torso,
    Head,
}

impl BodyPart {
    pub const COUNT: usize = 15;

    pub const ALL: [BodyPart; 15] = [
        BodyPart::LeftArm,
        BodyPart::RightArm,
        BodyPart::LeftForearm,
        BodyPart::RightForearm,
        BodyPart::LeftHand,
        BodyPart::RightHand,
        BodyPart::LeftThigh,
        BodyPart::RightThigh,
        BodyPart::LeftShin,
        BodyPart::RightShin,
        BodyPart::LeftFoot,
        BodyPart::RightFoot,
        BodyPart::TorsoFront,
        BodyPart::TorsoBack,
        BodyPart::Head,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<BodyPart> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BodyPart::LeftArm => "left_arm",
            BodyPart::RightArm => "right_arm",
            BodyPart::LeftForearm => "left_forearm",
            BodyPart::RightForearm => "right_forearm",
            BodyPart::LeftHand => "left_hand",
            BodyPart::RightHand => "right_hand",
            BodyPart::LeftThigh => "left_thigh",
            BodyPart::RightThigh => "right_thigh",
            BodyPart::LeftShin => "left_shin",
            BodyPart::RightShin => "right_shin",
            BodyPart::LeftFoot => "left_foot",
            BodyPart::RightFoot => "right_foot",
            BodyPart::TorsoFront => "torso_front",
            BodyPart::TorsoBack => "torso_back",
            BodyPart::Head => "head",
        }
    }

    pub fn from_name(name: &str) -> Option<BodyPart> {
        Self::ALL.iter().copied().find(|p| p.name() == name)
    }

    pub fn side(self) -> Option<Side> {
        match self {
            BodyPart::TorsoFront | BodyPart::TorsoBack | BodyPart::Head => None,
            p if p.id() % 2 == 0 => Some(Side::Left),
            _ => Some(Side::Right),
        }
    }

    /// Left/right counterpart; non-lateral parts map to themselves.
    pub fn mirror(self) -> BodyPart {
        match self.side() {
            None => self,
            Some(Side::Left) => Self::ALL[self.id() + 1],
            Some(Side::Right) => Self::ALL[self.id() - 1],
        }
    }

    pub fn group(self) -> PartGroup {
        use BodyPart::*;
        match self {
            LeftArm | RightArm => PartGroup::Arms,
            LeftForearm | RightForearm => PartGroup::Forearms,
            LeftHand | RightHand => PartGroup::Hands,
            LeftThigh | RightThigh => PartGroup::Thighs,
            LeftShin | RightShin => PartGroup::Shins,
            LeftFoot | RightFoot => PartGroup::Feet,
            TorsoFront | TorsoBack => PartGroup::Torso,
            Head => PartGroup::Head,
        }
    }

    pub fn bit(self) -> PartSet {
        PartSet::single(self.id())
    }
}

impl fmt::Display for BodyPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl PartGroup {
    pub fn parts(self) -> &'static [BodyPart] {
        use BodyPart::*;
        match self {
            PartGroup::Arms => &[LeftArm, RightArm],
            PartGroup::Forearms => &[LeftForearm, RightForearm],
            PartGroup::Hands => &[LeftHand, RightHand],
            PartGroup::Thighs => &[LeftThigh, RightThigh],
            PartGroup::Shins => &[LeftShin, RightShin],
            PartGroup::Feet => &[LeftFoot, RightFoot],
            PartGroup::Torso => &[TorsoFront, TorsoBack],
            PartGroup::Head => &[Head],
        }
    }
}

/// A set of partition label ids, stored as a 16-bit mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartSet(pub u16);

impl PartSet {
    pub const EMPTY: PartSet = PartSet(0);

    /// Every label of the default human partitioning.
    pub const HUMAN: PartSet = PartSet((1 << BodyPart::COUNT) - 1);

    /// The first `n` labels.
    pub fn all(n: usize) -> PartSet {
        assert!(n <= MAX_PARTITIONS, "at most {MAX_PARTITIONS} partitions");
        if n == MAX_PARTITIONS {
            PartSet(u16::MAX)
        } else {
            PartSet((1u16 << n) - 1)
        }
    }

    pub fn single(id: usize) -> PartSet {
        PartSet(1 << id)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn contains(self, id: usize) -> bool {
        id < MAX_PARTITIONS && self.0 & (1 << id) != 0
    }

    pub fn insert(&mut self, id: usize) {
        self.0 |= 1 << id;
    }

    pub fn union(self, other: PartSet) -> PartSet {
        PartSet(self.0 | other.0)
    }

    pub fn intersection(self, other: PartSet) -> PartSet {
        PartSet(self.0 & other.0)
    }

    pub fn without(self, other: PartSet) -> PartSet {
        PartSet(self.0 & !other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..MAX_PARTITIONS).filter(move |&i| self.contains(i))
    }
}

impl From<BodyPart> for PartSet {
    fn from(p: BodyPart) -> Self {
        p.bit()
    }
}

impl FromIterator<BodyPart> for PartSet {
    fn from_iter<I: IntoIterator<Item = BodyPart>>(iter: I) -> Self {
        iter.into_iter().fold(PartSet::EMPTY, |s, p| s.union(p.bit()))
    }
}

/// Discretized canonical body surface.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub uv: Vec<[f64; 2]>,
    pub partition_of: Vec<u16>,
    pub partition_names: Vec<String>,
}

impl CanonicalMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn partition_count(&self) -> usize {
        self.partition_names.len()
    }

    /// Vertex ids of every partition, each list ascending.
    pub fn partition_members(&self) -> Vec<Vec<u32>> {
        let mut members = vec![Vec::new(); self.partition_count()];
        for (v, &p) in self.partition_of.iter().enumerate() {
            if let Some(list) = members.get_mut(p as usize) {
                list.push(v as u32);
            }
        }
        members
    }

    /// Unique undirected edges of the face graph, `a < b`, sorted.
    /// Faces with out-of-range indices are skipped.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let n = self.vertex_count() as u32;
        let mut edges: Vec<(u32, u32)> = self
            .faces
            .iter()
            .filter(|f| f.iter().all(|&i| i < n))
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Connected-component id for every vertex of the edge graph.
    pub fn components(&self) -> Vec<usize> {
        let n = self.vertex_count();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (a, b) in self.edges() {
            let ra = find(&mut parent, a as usize);
            let rb = find(&mut parent, b as usize);
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut ids = vec![usize::MAX; n];
        let mut next = 0;
        for v in 0..n {
            let r = find(&mut parent, v);
            if ids[r] == usize::MAX {
                ids[r] = next;
                next += 1;
            }
            ids[v] = ids[r];
        }
        ids
    }

    /// True when the partition names are exactly the default human
    /// partitioning in label-id order.
    pub fn has_human_partitioning(&self) -> bool {
        self.partition_names.len() == BodyPart::COUNT
            && self
                .partition_names
                .iter()
                .zip(BodyPart::ALL)
                .all(|(n, p)| n == p.name())
    }

    pub fn ensure_human_partitioning(&self) -> Result<()> {
        if self.has_human_partitioning() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "mesh partitions {:?} are not the default human partitioning",
                self.partition_names
            )))
        }
    }

    pub fn body_part_of(&self, vertex: u32) -> Option<BodyPart> {
        let p = *self.partition_of.get(vertex as usize)? as usize;
        if self.has_human_partitioning() {
            BodyPart::from_id(p)
        } else {
            None
        }
    }
}

/// Unit-norm vertex embeddings, one row per mesh vertex, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput(format!(
                "embedding data of length {} is not a whole number of rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("ragged embedding rows".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Named sticks of the skeleton used for regions and scale.
///
/// Declaration order is the tie-break order of the scale estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoneId {
    LeftArm,
    RightArm,
    LeftForearm,
    RightForearm,
    LeftThigh,
    RightThigh,
    LeftShin,
    RightShin,
    /// Left shoulder to right shoulder.
    Shoulders,
    /// Left shoulder to left hip.
    LeftSide,
    /// Left hip to right hip.
    Hips,
    /// Right shoulder to right hip.
    RightSide,
}

impl BoneId {
    pub const ALL: [BoneId; 12] = [
        BoneId::LeftArm,
        BoneId::RightArm,
        BoneId::LeftForearm,
        BoneId::RightForearm,
        BoneId::LeftThigh,
        BoneId::RightThigh,
        BoneId::LeftShin,
        BoneId::RightShin,
        BoneId::Shoulders,
        BoneId::LeftSide,
        BoneId::Hips,
        BoneId::RightSide,
    ];

    /// COCO keypoint indices of the two endpoints.
    pub fn endpoints(self) -> (usize, usize) {
        use coco::*;
        match self {
            BoneId::LeftArm => (LEFT_SHOULDER, LEFT_ELBOW),
            BoneId::RightArm => (RIGHT_SHOULDER, RIGHT_ELBOW),
            BoneId::LeftForearm => (LEFT_ELBOW, LEFT_WRIST),
            BoneId::RightForearm => (RIGHT_ELBOW, RIGHT_WRIST),
            BoneId::LeftThigh => (LEFT_HIP, LEFT_KNEE),
            BoneId::RightThigh => (RIGHT_HIP, RIGHT_KNEE),
            BoneId::LeftShin => (LEFT_KNEE, LEFT_ANKLE),
            BoneId::RightShin => (RIGHT_KNEE, RIGHT_ANKLE),
            BoneId::Shoulders => (LEFT_SHOULDER, RIGHT_SHOULDER),
            BoneId::LeftSide => (LEFT_SHOULDER, LEFT_HIP),
            BoneId::Hips => (LEFT_HIP, RIGHT_HIP),
            BoneId::RightSide => (RIGHT_SHOULDER, RIGHT_HIP),
        }
    }

    /// The limb partition this bone delineates; quadrilateral sides have none.
    pub fn part(self) -> Option<BodyPart> {
        match self {
            BoneId::LeftArm => Some(BodyPart::LeftArm),
            BoneId::RightArm => Some(BodyPart::RightArm),
            BoneId::LeftForearm => Some(BodyPart::LeftForearm),
            BoneId::RightForearm => Some(BodyPart::RightForearm),
            BoneId::LeftThigh => Some(BodyPart::LeftThigh),
            BoneId::RightThigh => Some(BodyPart::RightThigh),
            BoneId::LeftShin => Some(BodyPart::LeftShin),
            BoneId::RightShin => Some(BodyPart::RightShin),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BoneId::LeftArm => "left_arm",
            BoneId::RightArm => "right_arm",
            BoneId::LeftForearm => "left_forearm",
            BoneId::RightForearm => "right_forearm",
            BoneId::LeftThigh => "left_thigh",
            BoneId::RightThigh => "right_thigh",
            BoneId::LeftShin => "left_shin",
            BoneId::RightShin => "right_shin",
            BoneId::Shoulders => "shoulders",
            BoneId::LeftSide => "left_side",
            BoneId::Hips => "hips",
            BoneId::RightSide => "right_side",
        }
    }
}

impl fmt::Display for BoneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Canonical (model-unit) length of every principal bone.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoneLengths(pub BTreeMap<BoneId, f64>);

impl BoneLengths {
    /// Every bone with the same length; handy when only geometry matters.
    pub fn uniform(length: f64) -> Self {
        Self(BoneId::ALL.iter().map(|&b| (b, length)).collect())
    }

    pub fn get(&self, bone: BoneId) -> Option<f64> {
        self.0.get(&bone).copied()
    }

    pub fn validate(&self) -> Result<()> {
        for bone in BoneId::ALL {
            match self.get(bone) {
                Some(l) if l.is_finite() && l > 0.0 => {}
                Some(l) => {
                    return Err(Error::InvalidConfig(format!(
                        "canonical length of bone {bone} must be positive, got {l}"
                    )))
                }
                None => {
                    return Err(Error::InvalidConfig(format!(
                        "missing canonical length for bone {bone}"
                    )))
                }
            }
        }
        Ok(())
    }
}

/// COCO-17 keypoint indices; the same indices open the whole-body layout.
pub mod coco {
    pub const NOSE: usize = 0;
    pub const LEFT_EYE: usize = 1;
    pub const RIGHT_EYE: usize = 2;
    pub const LEFT_EAR: usize = 3;
    pub const RIGHT_EAR: usize = 4;
    pub const LEFT_SHOULDER: usize = 5;
    pub const RIGHT_SHOULDER: usize = 6;
    pub const LEFT_ELBOW: usize = 7;
    pub const RIGHT_ELBOW: usize = 8;
    pub const LEFT_WRIST: usize = 9;
    pub const RIGHT_WRIST: usize = 10;
    pub const LEFT_HIP: usize = 11;
    pub const RIGHT_HIP: usize = 12;
    pub const LEFT_KNEE: usize = 13;
    pub const RIGHT_KNEE: usize = 14;
    pub const LEFT_ANKLE: usize = 15;
    pub const RIGHT_ANKLE: usize = 16;
}

/// COCO-WholeBody extra keypoint layout (indices 17..133).
pub mod wholebody {
    pub const LEFT_BIG_TOE: usize = 17;
    pub const LEFT_SMALL_TOE: usize = 18;
    pub const LEFT_HEEL: usize = 19;
    pub const RIGHT_BIG_TOE: usize = 20;
    pub const RIGHT_SMALL_TOE: usize = 21;
    pub const RIGHT_HEEL: usize = 22;
    pub const FACE_START: usize = 23;
    pub const FACE_COUNT: usize = 68;
    /// Hand root; fingers follow in blocks of four (thumb..pinky).
    pub const LEFT_HAND_ROOT: usize = 91;
    pub const RIGHT_HAND_ROOT: usize = 112;
    pub const HAND_COUNT: usize = 21;

    /// Keypoint chains (excluding the body wrist) spanning one hand.
    pub fn finger_chains(root: usize) -> [[usize; 5]; 5] {
        let mut chains = [[0; 5]; 5];
        for (f, chain) in chains.iter_mut().enumerate() {
            chain[0] = root;
            for j in 0..4 {
                chain[j + 1] = root + 1 + 4 * f + j;
            }
        }
        chains
    }

    /// Mirror permutation of the 68-point face layout.
    pub(crate) fn mirror_face(i: usize) -> usize {
        const PAIRS: &[(usize, usize)] = &[
            (17, 26),
            (18, 25),
            (19, 24),
            (20, 23),
            (21, 22),
            (31, 35),
            (32, 34),
            (36, 45),
            (37, 44),
            (38, 43),
            (39, 42),
            (40, 47),
            (41, 46),
            (48, 54),
            (49, 53),
            (50, 52),
            (55, 59),
            (56, 58),
            (60, 64),
            (61, 63),
            (65, 67),
        ];
        if i <= 16 {
            return 16 - i;
        }
        for &(a, b) in PAIRS {
            if i == a {
                return b;
            }
            if i == b {
                return a;
            }
        }
        i
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SkeletonKind {
    #[serde(rename = "coco17")]
    Coco17,
    #[serde(rename = "wholebody133")]
    WholeBody133,
}

impl SkeletonKind {
    pub fn keypoint_count(self) -> usize {
        match self {
            SkeletonKind::Coco17 => 17,
            SkeletonKind::WholeBody133 => 133,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SkeletonKind::Coco17 => "coco17",
            SkeletonKind::WholeBody133 => "wholebody133",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "coco17" => Ok(SkeletonKind::Coco17),
            "wholebody133" => Ok(SkeletonKind::WholeBody133),
            other => Err(Error::UnknownSkeletonKind(other.to_string())),
        }
    }

    /// Index of the left/right counterpart of keypoint `i`.
    pub fn mirror_index(self, i: usize) -> usize {
        use wholebody::*;
        match i {
            0 => 0,
            1..=16 => {
                if i % 2 == 1 {
                    i + 1
                } else {
                    i - 1
                }
            }
            17..=19 => i + 3,
            20..=22 => i - 3,
            _ if (FACE_START..FACE_START + FACE_COUNT).contains(&i) => FACE_START + mirror_face(i - FACE_START),
            _ if (LEFT_HAND_ROOT..RIGHT_HAND_ROOT).contains(&i) => i + HAND_COUNT,
            _ if (RIGHT_HAND_ROOT..RIGHT_HAND_ROOT + HAND_COUNT).contains(&i) => i - HAND_COUNT,
            _ => i,
        }
    }
}

impl fmt::Display for SkeletonKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub position: Point2,
    pub confidence: f64,
    pub present: bool,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, confidence: f64, presence_threshold: f64) -> Self {
        let present = x.is_finite() && y.is_finite() && confidence >= presence_threshold;
        Self {
            position: Point2::new(x, y),
            confidence,
            present,
        }
    }

    pub fn absent() -> Self {
        Self {
            position: Point2::default(),
            confidence: 0.0,
            present: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrincipalBone {
    pub id: BoneId,
    pub from: usize,
    pub to: usize,
    pub part: Option<BodyPart>,
    pub canonical_length: f64,
}

/// A 2D skeleton together with its principal bones.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton2D {
    kind: SkeletonKind,
    keypoints: Vec<Keypoint>,
    bones: Vec<PrincipalBone>,
}

impl Skeleton2D {
    pub fn new(kind: SkeletonKind, keypoints: Vec<Keypoint>, lengths: &BoneLengths) -> Result<Self> {
        if keypoints.len() != kind.keypoint_count() {
            return Err(Error::InvalidInput(format!(
                "{kind} skeleton needs {} keypoints, got {}",
                kind.keypoint_count(),
                keypoints.len()
            )));
        }
        lengths.validate()?;
        let bones = BoneId::ALL
            .iter()
            .map(|&id| {
                let (from, to) = id.endpoints();
                PrincipalBone {
                    id,
                    from,
                    to,
                    part: id.part(),
                    canonical_length: lengths.get(id).unwrap_or(f64::NAN),
                }
            })
            .collect();
        Ok(Self { kind, keypoints, bones })
    }

    /// Builds a skeleton from flat `(x, y, confidence)` triplets.
    pub fn from_triplets(
        kind: SkeletonKind,
        triplets: &[f64],
        presence_threshold: f64,
        lengths: &BoneLengths,
    ) -> Result<Self> {
        if triplets.len() != 3 * kind.keypoint_count() {
            return Err(Error::InvalidInput(format!(
                "{kind} skeleton needs {} values, got {}",
                3 * kind.keypoint_count(),
                triplets.len()
            )));
        }
        let keypoints = triplets
            .chunks_exact(3)
            .map(|t| Keypoint::new(t[0], t[1], t[2], presence_threshold))
            .collect();
        Self::new(kind, keypoints, lengths)
    }

    pub fn kind(&self) -> SkeletonKind {
        self.kind
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn bones(&self) -> &[PrincipalBone] {
        &self.bones
    }

    pub fn bone(&self, id: BoneId) -> &PrincipalBone {
        &self.bones[BoneId::ALL.iter().position(|&b| b == id).unwrap_or(0)]
    }

    /// Position of keypoint `i` if present.
    pub fn point(&self, i: usize) -> Option<Point2> {
        self.keypoints.get(i).filter(|k| k.present).map(|k| k.position)
    }

    /// Both endpoints of a bone, if present.
    pub fn bone_segment(&self, id: BoneId) -> Option<(Point2, Point2)> {
        let (a, b) = id.endpoints();
        Some((self.point(a)?, self.point(b)?))
    }

    pub fn present_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.present).count()
    }

    /// Flat `(x, y, confidence)` triplets.
    pub fn triplets(&self) -> Vec<f64> {
        self.keypoints
            .iter()
            .flat_map(|k| [k.position.x, k.position.y, k.confidence])
            .collect()
    }

    /// Recomputes presence flags against a new threshold.
    pub fn with_presence_threshold(mut self, threshold: f64) -> Self {
        for k in &mut self.keypoints {
            k.present = k.position.x.is_finite() && k.position.y.is_finite() && k.confidence >= threshold;
        }
        self
    }

    /// Keeps the COCO-17 body subset of a whole-body skeleton.
    pub fn to_coco17(&self) -> Skeleton2D {
        Skeleton2D {
            kind: SkeletonKind::Coco17,
            keypoints: self.keypoints[..17].to_vec(),
            bones: self.bones.clone(),
        }
    }

    /// Applies `f` to every keypoint position.
    pub fn map_points(&self, f: impl Fn(Point2) -> Point2) -> Skeleton2D {
        let mut out = self.clone();
        for k in &mut out.keypoints {
            k.position = f(k.position);
        }
        out
    }

    /// Left/right mirror inside an image `width` pixels wide: `x -> width - 1 - x`
    /// and every keypoint swapped with its counterpart.
    pub fn mirrored(&self, width: usize) -> Skeleton2D {
        let w = width as f64 - 1.0;
        let mut keypoints = self.keypoints.clone();
        for (i, k) in self.keypoints.iter().enumerate() {
            let j = self.kind.mirror_index(i);
            keypoints[j] = Keypoint {
                position: Point2::new(w - k.position.x, k.position.y),
                ..*k
            };
        }
        Skeleton2D {
            kind: self.kind,
            keypoints,
            bones: self.bones.clone(),
        }
    }
}

/// Axis-aligned box `(x, y, w, h)` in pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// Closed containment test.
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x && p.x <= self.x + self.w && p.y >= self.y && p.y <= self.y + self.h
    }
}

/// Binary foreground raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                left_name: "mask data".into(),
                left: vec![data.len()],
                right_name: "width x height".into(),
                right: vec![height, width],
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.data[y * self.width + x]
    }

    /// Foreground test for a continuous point (floor to the pixel grid).
    pub fn contains_point(&self, p: Point2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && self.get(p.x.floor() as usize, p.y.floor() as usize)
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn mirrored(&self) -> Mask {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.data[y * self.width + x] = self.data[y * self.width + (self.width - 1 - x)];
            }
        }
        out
    }
}

/// Per-pixel embeddings `H x W x D`, row-major, unit norm per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelEmbeddings {
    width: usize,
    height: usize,
    dim: usize,
    data: Vec<f32>,
}

impl PixelEmbeddings {
    /// Takes raw embeddings and L2-normalizes every pixel.
    ///
    /// Rows already within 1e-6 of unit norm are left untouched, so
    /// normalization is idempotent bit-for-bit. All-zero rows stay zero.
    pub fn new(width: usize, height: usize, dim: usize, mut data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() != width * height * dim {
            return Err(Error::ShapeMismatch {
                left_name: "embedding data".into(),
                left: vec![data.len()],
                right_name: "height x width x dim".into(),
                right: vec![height, width, dim],
            });
        }
        for row in data.chunks_exact_mut(dim) {
            normalize_row(row);
        }
        Ok(Self {
            width,
            height,
            dim,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn mirrored(&self) -> PixelEmbeddings {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let dst = (y * self.width + x) * self.dim;
                let src = (y * self.width + (self.width - 1 - x)) * self.dim;
                out.data[dst..dst + self.dim].copy_from_slice(&self.data[src..src + self.dim]);
            }
        }
        out
    }
}

pub(crate) fn normalize_row(row: &mut [f32]) {
    let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
    if norm > 0.0 && (norm - 1.0).abs() > 1e-6 {
        for v in row {
            *v = (f64::from(*v) / norm) as f32;
        }
    }
}

/// A ground-truth correspondence: pixel position and mesh vertex.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtPoint {
    pub x: f64,
    pub y: f64,
    pub vertex: u32,
}

impl GtPoint {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Optional annotation fields consumed by the auditor.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_crowd: Option<bool>,
    /// Number of other annotated people overlapping the bounding box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlapping_instances: Option<u32>,
    /// Externally computed GPS of a model prediction, used for ranking.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference_gps: Option<f64>,
}

/// Everything known about one person.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceInput {
    pub id: String,
    pub bbox: BBox,
    pub mask: Mask,
    pub embeddings: PixelEmbeddings,
    pub skeleton: Skeleton2D,
    pub gt_points: Option<Vec<GtPoint>>,
    pub detection_score: f64,
    pub annotations: Annotations,
}

impl InstanceInput {
    /// Checks the cross-field invariants. `vertex_count` bounds gt vertices.
    pub fn validate(&self, vertex_count: Option<usize>) -> Result<()> {
        let (mw, mh) = (self.mask.width(), self.mask.height());
        let (ew, eh) = (self.embeddings.width(), self.embeddings.height());
        if (mw, mh) != (ew, eh) {
            return Err(Error::ShapeMismatch {
                left_name: "mask".into(),
                left: vec![mh, mw],
                right_name: "pixel embeddings".into(),
                right: vec![eh, ew, self.embeddings.dim()],
            });
        }
        for (i, p) in self.gt_points.iter().flatten().enumerate() {
            if !self.bbox.contains(p.position()) {
                return Err(Error::InvalidInput(format!(
                    "gt point {i} at ({}, {}) lies outside the bounding box",
                    p.x, p.y
                )));
            }
            if let Some(n) = vertex_count {
                if p.vertex as usize >= n {
                    return Err(Error::InvalidInput(format!(
                        "gt point {i} references vertex {} but the mesh has {n}",
                        p.vertex
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }
}

/// Engine parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Bone-width factor: capsule radius = delta x pixels-per-unit.
    pub delta: f64,
    pub presence_threshold: f64,
    /// GPS normalization constant, model units.
    pub kappa: f64,
    /// Height of the canonical body, model units.
    pub canonical_height: f64,
    pub hand_foot_radius_factor: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            delta: 0.08,
            presence_threshold: 0.3,
            kappa: 0.255,
            canonical_height: 1.7,
            hand_foot_radius_factor: 2.0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return bad(format!("delta must be >= 0, got {}", self.delta));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return bad(format!("kappa must be > 0, got {}", self.kappa));
        }
        if !(0.0..=1.0).contains(&self.presence_threshold) {
            return bad(format!(
                "presence_threshold must lie in [0, 1], got {}",
                self.presence_threshold
            ));
        }
        if !(self.canonical_height.is_finite() && self.canonical_height > 0.0) {
            return bad(format!("canonical_height must be > 0, got {}", self.canonical_height));
        }
        if !(self.hand_foot_radius_factor.is_finite() && self.hand_foot_radius_factor >= 1.0) {
            return bad(format!(
                "hand_foot_radius_factor must be >= 1, got {}",
                self.hand_foot_radius_factor
            ));
        }
        Ok(())
    }
}

/// One violated mesh or embedding invariant.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum ValidationIssue {
    FaceIndexOutOfRange { face: usize, index: u32 },
    UvCountMismatch { uvs: usize, vertices: usize },
    UvOutOfRange { vertex: usize },
    PartitionCountMismatch { labels: usize, vertices: usize },
    TooManyPartitions { count: usize },
    PartitionLabelOutOfRange { vertex: usize, label: u16 },
    EmptyPartition { partition: usize, name: String },
    DisconnectedGraph { components: usize },
    EmbeddingRowCountMismatch { rows: usize, vertices: usize },
    NonUnitEmbeddingRow { row: usize, norm: f64 },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::FaceIndexOutOfRange { face, index } => {
                write!(f, "face index out of range: face {face} references vertex {index}")
            }
            ValidationIssue::UvCountMismatch { uvs, vertices } => {
                write!(f, "uv count {uvs} differs from vertex count {vertices}")
            }
            ValidationIssue::UvOutOfRange { vertex } => {
                write!(f, "uv of vertex {vertex} lies outside [0,1]^2")
            }
            ValidationIssue::PartitionCountMismatch { labels, vertices } => {
                write!(f, "partition label count {labels} differs from vertex count {vertices}")
            }
            ValidationIssue::TooManyPartitions { count } => {
                write!(f, "{count} partitions declared, at most {MAX_PARTITIONS} supported")
            }
            ValidationIssue::PartitionLabelOutOfRange { vertex, label } => {
                write!(f, "vertex {vertex} carries undeclared partition label {label}")
            }
            ValidationIssue::EmptyPartition { partition, name } => {
                write!(f, "empty partition {partition} ({name})")
            }
            ValidationIssue::DisconnectedGraph { components } => {
                write!(f, "disconnected edge graph: {components} components")
            }
            ValidationIssue::EmbeddingRowCountMismatch { rows, vertices } => {
                write!(f, "embedding row count {rows} differs from vertex count {vertices}")
            }
            ValidationIssue::NonUnitEmbeddingRow { row, norm } => {
                write!(f, "non-unit embedding row {row}: norm {norm}")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = self.issues.iter().map(ToString::to_string).collect();
            Err(Error::InvalidInput(msgs.join("; ")))
        }
    }
}

/// Lists every violated invariant of a mesh and its embeddings. Never aborts.
pub fn validate_mesh(mesh: &CanonicalMesh, embeddings: &EmbeddingSet) -> ValidationReport {
    let n = mesh.vertex_count();
    let mut issues = Vec::new();

    for (fi, face) in mesh.faces.iter().enumerate() {
        for &index in face {
            if index as usize >= n {
                issues.push(ValidationIssue::FaceIndexOutOfRange { face: fi, index });
            }
        }
    }

    if mesh.uv.len() != n {
        issues.push(ValidationIssue::UvCountMismatch {
            uvs: mesh.uv.len(),
            vertices: n,
        });
    }
    for (v, uv) in mesh.uv.iter().enumerate() {
        if !uv.iter().all(|c| (0.0..=1.0).contains(c)) {
            issues.push(ValidationIssue::UvOutOfRange { vertex: v });
        }
    }

    let np = mesh.partition_count();
    if np > MAX_PARTITIONS {
        issues.push(ValidationIssue::TooManyPartitions { count: np });
    }
    if mesh.partition_of.len() != n {
        issues.push(ValidationIssue::PartitionCountMismatch {
            labels: mesh.partition_of.len(),
            vertices: n,
        });
    }
    let mut counts = vec![0usize; np];
    for (v, &label) in mesh.partition_of.iter().enumerate() {
        match counts.get_mut(label as usize) {
            Some(c) => *c += 1,
            None => issues.push(ValidationIssue::PartitionLabelOutOfRange { vertex: v, label }),
        }
    }
    for (p, &c) in counts.iter().enumerate() {
        if c == 0 {
            issues.push(ValidationIssue::EmptyPartition {
                partition: p,
                name: mesh.partition_names[p].clone(),
            });
        }
    }

    if n > 0 {
        let components = mesh.components().into_iter().max().map_or(0, |m| m + 1);
        if components > 1 {
            issues.push(ValidationIssue::DisconnectedGraph { components });
        }
    }

    if embeddings.len() != n {
        issues.push(ValidationIssue::EmbeddingRowCountMismatch {
            rows: embeddings.len(),
            vertices: n,
        });
    }
    for row in 0..embeddings.len() {
        let norm = embeddings
            .row(row)
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if (norm - 1.0).abs() > EMBEDDING_NORM_TOLERANCE {
            issues.push(ValidationIssue::NonUnitEmbeddingRow { row, norm });
        }
    }

    ValidationReport { issues }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetrahedron() -> (CanonicalMesh, EmbeddingSet) {
        let mesh = CanonicalMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            faces: vec![[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]],
            uv: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            partition_of: vec![0, 0, 1, 1],
            partition_names: vec!["a".into(), "b".into()],
        };
        let emb = EmbeddingSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        (mesh, emb)
    }

    #[test]
    fn well_formed_tetrahedron_passes() {
        let (mesh, emb) = tetrahedron();
        assert!(validate_mesh(&mesh, &emb).is_empty());
    }

    #[test]
    fn scaled_row_is_reported_once() {
        let (mesh, _) = tetrahedron();
        let emb = EmbeddingSet::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let report = validate_mesh(&mesh, &emb);
        assert_eq!(
            report.issues,
            vec![ValidationIssue::NonUnitEmbeddingRow { row: 0, norm: 2.0 }]
        );
        assert!(report.issues[0].to_string().contains("non-unit embedding row"));
    }

    #[test]
    fn out_of_range_face_is_reported() {
        let (mut mesh, emb) = tetrahedron();
        mesh.faces.push([0, 1, 99]);
        let report = validate_mesh(&mesh, &emb);
        assert!(report
            .issues
            .iter()
            .any(|i| i.to_string().contains("face index out of range")));
    }

    #[test]
    fn disconnected_and_empty_partition_are_reported() {
        let (mut mesh, emb) = tetrahedron();
        mesh.faces = vec![[0, 1, 2]];
        mesh.partition_names.push("c".into());
        let report = validate_mesh(&mesh, &emb);
        assert!(report
            .issues
            .contains(&ValidationIssue::DisconnectedGraph { components: 2 }));
        assert!(report
            .issues
            .iter()
            .any(|i| matches!(i, ValidationIssue::EmptyPartition { partition: 2, .. })));
    }

    #[test]
    fn human_partitioning_order_is_fixed() {
        let names: Vec<&str> = BodyPart::ALL.iter().map(|p| p.name()).collect();
        assert_eq!(
            names,
            [
                "left_arm",
                "right_arm",
                "left_forearm",
                "right_forearm",
                "left_hand",
                "right_hand",
                "left_thigh",
                "right_thigh",
                "left_shin",
                "right_shin",
                "left_foot",
                "right_foot",
                "torso_front",
                "torso_back",
                "head"
            ]
        );
        for p in BodyPart::ALL {
            assert_eq!(BodyPart::from_id(p.id()), Some(p));
            assert_eq!(p.mirror().mirror(), p);
            assert_eq!(p.mirror().group(), p.group());
        }
        assert_eq!(PartSet::HUMAN.len(), 15);
    }

    #[test]
    fn presence_follows_threshold() {
        let k = Keypoint::new(3.0, 4.0, 0.1, 0.3);
        assert!(!k.present);
        assert!(Keypoint::new(3.0, 4.0, 0.3, 0.3).present);
    }

    #[test]
    fn mirror_index_is_an_involution() {
        for kind in [SkeletonKind::Coco17, SkeletonKind::WholeBody133] {
            for i in 0..kind.keypoint_count() {
                let j = kind.mirror_index(i);
                assert!(j < kind.keypoint_count());
                assert_eq!(kind.mirror_index(j), i, "{kind} keypoint {i}");
            }
        }
        assert_eq!(SkeletonKind::Coco17.mirror_index(coco::LEFT_WRIST), coco::RIGHT_WRIST);
    }

    #[test]
    fn pixel_normalization_is_idempotent() {
        let e = PixelEmbeddings::new(1, 1, 3, vec![3.0, 4.0, 12.0]).unwrap();
        let again = PixelEmbeddings::new(1, 1, 3, e.as_slice().to_vec()).unwrap();
        assert_eq!(e, again);
        let norm: f64 = e.pixel(0, 0).iter().map(|&v| f64::from(v).powi(2)).sum();
        assert!((norm.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(EngineConfig::default().validate().is_ok());
        let mut c = EngineConfig {
            kappa: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c = EngineConfig::default();
        c.hand_foot_radius_factor = 0.5;
        assert!(c.validate().is_err());
    }
}
