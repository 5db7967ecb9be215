//! Pixel-to-vertex assignment kernels.
//!
//! All three kernels score a pixel against a vertex with the same f64 inner
//! product of the stored f32 embeddings, and break ties towards the smaller
//! vertex index. That makes the blocked per-partition form index-identical to
//! the flat constrained argmax.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::LabelMap;
use crate::model::{CanonicalMesh, EmbeddingSet, InstanceInput, PartSet, MAX_PARTITIONS};

/// `vertex_of` value of background pixels.
pub const BACKGROUND: u32 = u32::MAX;

/// Per-pixel vertex assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct UvMap {
    pub width: usize,
    pub height: usize,
    pub vertex_of: Vec<u32>,
    pub uv_of: Vec<[f64; 2]>,
    /// Winning cosine similarity; 0 on background.
    pub score_of: Vec<f32>,
}

impl UvMap {
    /// Rebuilds a map from vertex and score rasters, looking UVs up in `mesh`.
    pub fn from_rasters(
        width: usize,
        height: usize,
        vertex_of: Vec<u32>,
        score_of: Vec<f32>,
        mesh: &CanonicalMesh,
    ) -> Result<Self> {
        if vertex_of.len() != width * height || score_of.len() != width * height {
            return Err(Error::ShapeMismatch {
                left_name: "uv map rasters".into(),
                left: vec![vertex_of.len(), score_of.len()],
                right_name: "width x height".into(),
                right: vec![height, width],
            });
        }
        let uv_of = vertex_of
            .iter()
            .map(|&v| {
                if v == BACKGROUND {
                    Ok([0.0, 0.0])
                } else {
                    mesh.uv.get(v as usize).copied().ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "uv map references vertex {v} but the mesh has {}",
                            mesh.vertex_count()
                        ))
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            width,
            height,
            vertex_of,
            uv_of,
            score_of,
        })
    }

    pub fn vertex(&self, x: usize, y: usize) -> Option<u32> {
        if x >= self.width || y >= self.height {
            return None;
        }
        match self.vertex_of[y * self.width + x] {
            BACKGROUND => None,
            v => Some(v),
        }
    }

    pub fn foreground_count(&self) -> usize {
        self.vertex_of.iter().filter(|&&v| v != BACKGROUND).count()
    }
}

#[inline]
pub(crate) fn similarity(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

fn check_inputs(instance: &InstanceInput, mesh: &CanonicalMesh, emb: &EmbeddingSet) -> Result<()> {
    if emb.dim() != instance.embeddings.dim() {
        return Err(Error::ShapeMismatch {
            left_name: "vertex embedding dim".into(),
            left: vec![emb.dim()],
            right_name: "pixel embedding dim".into(),
            right: vec![instance.embeddings.dim()],
        });
    }
    if emb.len() != mesh.vertex_count() {
        return Err(Error::ShapeMismatch {
            left_name: "vertex embeddings".into(),
            left: vec![emb.len(), emb.dim()],
            right_name: "mesh vertices".into(),
            right: vec![mesh.vertex_count()],
        });
    }
    if mesh.partition_count() > MAX_PARTITIONS {
        return Err(Error::InvalidInput(format!(
            "{} partitions exceed the supported {MAX_PARTITIONS}",
            mesh.partition_count()
        )));
    }
    let (w, h) = (instance.width(), instance.height());
    if (instance.embeddings.width(), instance.embeddings.height()) != (w, h) {
        return Err(Error::ShapeMismatch {
            left_name: "mask".into(),
            left: vec![h, w],
            right_name: "pixel embeddings".into(),
            right: vec![instance.embeddings.height(), instance.embeddings.width()],
        });
    }
    Ok(())
}

fn check_labels(instance: &InstanceInput, labels: &LabelMap) -> Result<()> {
    if (labels.width(), labels.height()) != (instance.width(), instance.height()) {
        return Err(Error::ShapeMismatch {
            left_name: "label map".into(),
            left: vec![labels.height(), labels.width()],
            right_name: "mask".into(),
            right: vec![instance.height(), instance.width()],
        });
    }
    Ok(())
}

/// Runs `pick` on every foreground pixel, row-parallel, and assembles a UvMap.
fn assemble<F>(instance: &InstanceInput, mesh: &CanonicalMesh, pick: F) -> Result<UvMap>
where
    F: Fn(usize, usize, &[f32]) -> Result<(u32, f64)> + Sync,
{
    let (w, h) = (instance.width(), instance.height());
    let rows: Vec<Vec<(u32, f32)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    if instance.mask.get(x, y) {
                        pick(x, y, instance.embeddings.pixel(x, y)).map(|(v, s)| (v, s as f32))
                    } else {
                        Ok((BACKGROUND, 0.0))
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut vertex_of = Vec::with_capacity(w * h);
    let mut score_of = Vec::with_capacity(w * h);
    for (v, s) in rows.into_iter().flatten() {
        vertex_of.push(v);
        score_of.push(s);
    }
    UvMap::from_rasters(w, h, vertex_of, score_of, mesh)
}

/// Best vertex over the whole mesh for every foreground pixel.
pub fn assign_unconstrained(instance: &InstanceInput, mesh: &CanonicalMesh, emb: &EmbeddingSet) -> Result<UvMap> {
    check_inputs(instance, mesh, emb)?;
    let n = mesh.vertex_count();
    if n == 0 {
        return Err(Error::InvalidInput("mesh has no vertices".into()));
    }
    assemble(instance, mesh, |_, _, phi| {
        let mut best = (0u32, f64::NEG_INFINITY);
        for i in 0..n {
            let s = similarity(emb.row(i), phi);
            if s > best.1 {
                best = (i as u32, s);
            }
        }
        Ok(best)
    })
}

/// Best vertex among the partitions admitted at each pixel.
pub fn assign_constrained(
    instance: &InstanceInput,
    mesh: &CanonicalMesh,
    emb: &EmbeddingSet,
    labels: &LabelMap,
) -> Result<UvMap> {
    check_inputs(instance, mesh, emb)?;
    check_labels(instance, labels)?;
    let existing = PartSet::all(mesh.partition_count());
    assemble(instance, mesh, |x, y, phi| {
        let allowed = labels.get(x, y).intersection(existing);
        if allowed.is_empty() {
            return Err(Error::EmptyLabelSet { x, y });
        }
        let mut best: Option<(u32, f64)> = None;
        for (i, &p) in mesh.partition_of.iter().enumerate() {
            if !allowed.contains(p as usize) {
                continue;
            }
            let s = similarity(emb.row(i), phi);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i as u32, s));
            }
        }
        best.ok_or(Error::EmptyLabelSet { x, y })
    })
}

/// The blocked per-partition tables for every pixel.
///
/// Row-major over pixels, `partitions` entries per pixel. Background pixels
/// hold `B = false`, `S = S' = -inf` and `V = BACKGROUND`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionTables {
    pub width: usize,
    pub height: usize,
    pub partitions: usize,
    /// `B(x, p)`: partition admissible at the pixel.
    pub admissible: Vec<bool>,
    /// `S(x, p)`: best similarity inside the partition.
    pub best_score: Vec<f64>,
    /// `V(x, p)`: smallest-index vertex attaining `S(x, p)`.
    pub best_vertex: Vec<u32>,
    /// `S'(x, p)`: `S` where admissible, `-inf` elsewhere.
    pub masked_score: Vec<f64>,
}

impl PartitionTables {
    fn index(&self, x: usize, y: usize, p: usize) -> usize {
        (y * self.width + x) * self.partitions + p
    }

    pub fn score(&self, x: usize, y: usize, p: usize) -> f64 {
        self.best_score[self.index(x, y, p)]
    }

    pub fn vertex(&self, x: usize, y: usize, p: usize) -> u32 {
        self.best_vertex[self.index(x, y, p)]
    }

    /// `argmax_p S'(x, p)`, ties towards the smaller `V(x, p)`.
    pub fn select(&self, x: usize, y: usize) -> Option<(usize, u32, f64)> {
        let base = self.index(x, y, 0);
        let mut best: Option<(usize, u32, f64)> = None;
        for p in 0..self.partitions {
            let s = self.masked_score[base + p];
            if s == f64::NEG_INFINITY {
                continue;
            }
            let v = self.best_vertex[base + p];
            let better = match best {
                None => true,
                Some((_, bv, bs)) => s > bs || (s == bs && v < bv),
            };
            if better {
                best = Some((p, v, s));
            }
        }
        best
    }
}

/// Builds `B`, `S`, `V` and `S'` for every pixel.
pub fn build_partition_tables(
    instance: &InstanceInput,
    mesh: &CanonicalMesh,
    emb: &EmbeddingSet,
    labels: &LabelMap,
) -> Result<PartitionTables> {
    check_inputs(instance, mesh, emb)?;
    check_labels(instance, labels)?;
    let (w, h) = (instance.width(), instance.height());
    let np = mesh.partition_count();
    let members = mesh.partition_members();

    let cells: Vec<(bool, f64, u32, f64)> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let members = &members;
            (0..w).flat_map(move |x| {
                let fg = instance.mask.get(x, y);
                let allowed = labels.get(x, y);
                let phi = instance.embeddings.pixel(x, y);
                (0..np).map(move |p| {
                    if !fg {
                        return (false, f64::NEG_INFINITY, BACKGROUND, f64::NEG_INFINITY);
                    }
                    let mut best = (BACKGROUND, f64::NEG_INFINITY);
                    for &i in &members[p] {
                        let s = similarity(emb.row(i as usize), phi);
                        if best.0 == BACKGROUND || s > best.1 {
                            best = (i, s);
                        }
                    }
                    let b = allowed.contains(p) && best.0 != BACKGROUND;
                    (b, best.1, best.0, if b { best.1 } else { f64::NEG_INFINITY })
                })
            })
        })
        .collect();

    let mut tables = PartitionTables {
        width: w,
        height: h,
        partitions: np,
        admissible: Vec::with_capacity(cells.len()),
        best_score: Vec::with_capacity(cells.len()),
        best_vertex: Vec::with_capacity(cells.len()),
        masked_score: Vec::with_capacity(cells.len()),
    };
    for (b, s, v, sm) in cells {
        tables.admissible.push(b);
        tables.best_score.push(s);
        tables.best_vertex.push(v);
        tables.masked_score.push(sm);
    }
    Ok(tables)
}

/// Constrained assignment through the per-partition tables: pick the best
/// admissible partition, then its best vertex.
pub fn assign_constrained_blocked(
    instance: &InstanceInput,
    mesh: &CanonicalMesh,
    emb: &EmbeddingSet,
    labels: &LabelMap,
) -> Result<UvMap> {
    let tables = build_partition_tables(instance, mesh, emb, labels)?;
    assemble(instance, mesh, |x, y, _| {
        tables
            .select(x, y)
            .map(|(_, v, s)| (v, s))
            .ok_or(Error::EmptyLabelSet { x, y })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, BoneLengths, Keypoint, Mask, PixelEmbeddings, Skeleton2D, SkeletonKind};

    fn mesh(partition_of: Vec<u16>, names: usize) -> CanonicalMesh {
        let n = partition_of.len();
        CanonicalMesh {
            vertices: (0..n).map(|i| [i as f64, 0.0, 0.0]).collect(),
            faces: (0..n.saturating_sub(2))
                .map(|i| [i as u32, i as u32 + 1, i as u32 + 2])
                .collect(),
            uv: (0..n).map(|i| [i as f64 / n as f64, 0.5]).collect(),
            partition_of,
            partition_names: (0..names).map(|i| format!("p{i}")).collect(),
        }
    }

    fn instance(pixels: Vec<Vec<f32>>) -> InstanceInput {
        let dim = pixels[0].len();
        let w = pixels.len();
        InstanceInput {
            id: "t".into(),
            bbox: BBox::new(0.0, 0.0, w as f64, 1.0),
            mask: Mask::filled(w, 1, true),
            embeddings: PixelEmbeddings::new(w, 1, dim, pixels.concat()).unwrap(),
            skeleton: Skeleton2D::new(
                SkeletonKind::Coco17,
                vec![Keypoint::absent(); 17],
                &BoneLengths::uniform(1.0),
            )
            .unwrap(),
            gt_points: None,
            detection_score: 1.0,
            annotations: Default::default(),
        }
    }

    fn basis(dim: usize, i: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn self_match_scores_one() {
        let rows: Vec<Vec<f32>> = (0..10).map(|i| basis(10, i)).collect();
        let emb = EmbeddingSet::from_rows(&rows).unwrap();
        let m = mesh(vec![0; 10], 1);
        let inst = instance(vec![basis(10, 7)]);
        let uv = assign_unconstrained(&inst, &m, &emb).unwrap();
        assert_eq!(uv.vertex_of, vec![7]);
        assert_eq!(uv.score_of, vec![1.0]);
        assert_eq!(uv.uv_of[0], m.uv[7]);
    }

    #[test]
    fn unique_positive_maximum() {
        // Pixel orthogonal to every row except row 3, with similarity 0.2.
        let mut rows: Vec<Vec<f32>> = (0..5).map(|i| basis(6, i)).collect();
        let s = 0.2f32;
        rows[3] = vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let phi = vec![0.0, 0.0, 0.0, 0.0, (1.0 - s * s).sqrt(), s];
        rows[4] = basis(6, 0);
        let emb = EmbeddingSet::from_rows(&rows).unwrap();
        let inst = instance(vec![phi]);
        let uv = assign_unconstrained(&inst, &mesh(vec![0; 5], 1), &emb).unwrap();
        assert_eq!(uv.vertex_of, vec![3]);
    }

    #[test]
    fn forbidden_best_falls_back_to_second() {
        let rows = vec![vec![1.0, 0.0], vec![0.8, 0.6], vec![0.0, 1.0]];
        let emb = EmbeddingSet::from_rows(&rows).unwrap();
        let m = mesh(vec![0, 1, 1], 2);
        let inst = instance(vec![vec![1.0, 0.0]]);
        let labels = LabelMap::new(1, 1, vec![PartSet::single(1)]).unwrap();
        assert_eq!(assign_unconstrained(&inst, &m, &emb).unwrap().vertex_of, vec![0]);
        assert_eq!(assign_constrained(&inst, &m, &emb, &labels).unwrap().vertex_of, vec![1]);
        assert_eq!(
            assign_constrained_blocked(&inst, &m, &emb, &labels).unwrap().vertex_of,
            vec![1]
        );
    }

    #[test]
    fn partition_ties_pick_smaller_vertex() {
        let mut rows: Vec<Vec<f32>> = (0..50).map(|_| vec![0.0, 1.0]).collect();
        rows[12] = vec![1.0, 0.0];
        rows[40] = vec![1.0, 0.0];
        let emb = EmbeddingSet::from_rows(&rows).unwrap();
        let partition_of = (0..50).map(|i| if i < 20 { 0 } else { 1 }).collect();
        let m = mesh(partition_of, 2);
        let inst = instance(vec![vec![1.0, 0.0]]);
        let labels = LabelMap::new(1, 1, vec![PartSet::all(2)]).unwrap();
        let tables = build_partition_tables(&inst, &m, &emb, &labels).unwrap();
        assert_eq!(tables.vertex(0, 0, 0), 12);
        assert_eq!(tables.vertex(0, 0, 1), 40);
        assert_eq!(tables.score(0, 0, 0), tables.score(0, 0, 1));
        assert_eq!(
            assign_constrained_blocked(&inst, &m, &emb, &labels).unwrap().vertex_of,
            vec![12]
        );
        assert_eq!(
            assign_constrained(&inst, &m, &emb, &labels).unwrap().vertex_of,
            vec![12]
        );
    }

    #[test]
    fn negative_scores_survive_masking() {
        // Every admissible score is negative; a zero-masked formulation would
        // pick the forbidden partition.
        let rows = vec![vec![0.0, 1.0], vec![-0.6, -0.8]];
        let emb = EmbeddingSet::from_rows(&rows).unwrap();
        let m = mesh(vec![0, 1], 2);
        let inst = instance(vec![vec![1.0, 0.0]]);
        let labels = LabelMap::new(1, 1, vec![PartSet::single(1)]).unwrap();
        let uv = assign_constrained_blocked(&inst, &m, &emb, &labels).unwrap();
        assert_eq!(uv.vertex_of, vec![1]);
        assert!(uv.score_of[0] < 0.0);
    }

    #[test]
    fn empty_label_set_is_an_error() {
        let emb = EmbeddingSet::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let m = mesh(vec![0], 1);
        let inst = instance(vec![vec![1.0, 0.0]]);
        let labels = LabelMap::new(1, 1, vec![PartSet::single(3)]).unwrap();
        assert!(matches!(
            assign_constrained(&inst, &m, &emb, &labels),
            Err(Error::EmptyLabelSet { x: 0, y: 0 })
        ));
        assert!(matches!(
            assign_constrained_blocked(&inst, &m, &emb, &labels),
            Err(Error::EmptyLabelSet { x: 0, y: 0 })
        ));
    }

    #[test]
    fn single_partition_blocked_matches_unconstrained() {
        let rows: Vec<Vec<f32>> = (0..8)
            .map(|i| {
                let a = i as f32 * 0.7;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let emb = EmbeddingSet::from_rows(&rows).unwrap();
        let m = mesh(vec![0; 8], 1);
        let inst = instance((0..5).map(|i| vec![(i as f32).cos(), (i as f32).sin()]).collect());
        let labels = LabelMap::uniform(&inst.mask, PartSet::all(1));
        assert_eq!(
            assign_constrained_blocked(&inst, &m, &emb, &labels).unwrap(),
            assign_unconstrained(&inst, &m, &emb).unwrap()
        );
    }
}
