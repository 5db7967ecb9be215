//! Mesh geodesics, Geodesic Point Similarity and average precision.
//!
//! Geodesics are shortest paths over the mesh edge graph with Euclidean edge
//! weights. This overestimates true surface geodesics slightly on coarse
//! meshes and converges as the mesh is refined.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::Serialize;

use crate::assign::UvMap;
use crate::error::{Error, Result};
use crate::model::{CanonicalMesh, GtPoint};

/// Shortest-path distances from a set of source vertices.
#[derive(Clone, Debug)]
pub struct GeodesicOracle {
    vertex_count: usize,
    adjacency: Vec<Vec<(u32, f64)>>,
    distances: BTreeMap<u32, Vec<f64>>,
}

#[derive(PartialEq)]
struct State {
    dist: f64,
    vertex: u32,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl GeodesicOracle {
    /// Builds the edge graph. Fails if the mesh is disconnected.
    pub fn new(mesh: &CanonicalMesh) -> Result<Self> {
        let n = mesh.vertex_count();
        if let Some(bad) = mesh.faces.iter().flatten().find(|&&i| i as usize >= n) {
            return Err(Error::InvalidInput(format!(
                "face references vertex {bad} but the mesh has {n}"
            )));
        }
        let components = mesh.components();
        let count = components.iter().max().map_or(0, |m| m + 1);
        if count > 1 {
            let unreachable_vertex = components.iter().position(|&c| c != 0).unwrap_or(0);
            let target = components[unreachable_vertex];
            return Err(Error::DisconnectedMesh {
                components: count,
                unreachable_vertex,
                component_size: components.iter().filter(|&&c| c == target).count(),
            });
        }
        let mut adjacency = vec![Vec::new(); n];
        for (a, b) in mesh.edges() {
            let pa = mesh.vertices[a as usize];
            let pb = mesh.vertices[b as usize];
            let w = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2)).sqrt();
            adjacency[a as usize].push((b, w));
            adjacency[b as usize].push((a, w));
        }
        Ok(Self {
            vertex_count: n,
            adjacency,
            distances: BTreeMap::new(),
        })
    }

    /// Runs Dijkstra from every source not yet cached.
    pub fn add_sources(&mut self, sources: impl IntoIterator<Item = u32>) -> Result<()> {
        for s in sources {
            if s as usize >= self.vertex_count {
                return Err(Error::InvalidInput(format!(
                    "source vertex {s} out of range (mesh has {})",
                    self.vertex_count
                )));
            }
            if !self.distances.contains_key(&s) {
                let d = self.dijkstra(s);
                self.distances.insert(s, d);
            }
        }
        Ok(())
    }

    fn dijkstra(&self, source: u32) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.vertex_count];
        let mut heap = BinaryHeap::new();
        dist[source as usize] = 0.0;
        heap.push(State {
            dist: 0.0,
            vertex: source,
        });
        while let Some(State { dist: d, vertex }) = heap.pop() {
            if d > dist[vertex as usize] {
                continue;
            }
            for &(next, w) in &self.adjacency[vertex as usize] {
                let nd = d + w;
                if nd < dist[next as usize] {
                    dist[next as usize] = nd;
                    heap.push(State { dist: nd, vertex: next });
                }
            }
        }
        dist
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn sources(&self) -> impl Iterator<Item = u32> + '_ {
        self.distances.keys().copied()
    }

    /// Distance array from a cached source.
    pub fn from_source(&self, source: u32) -> Option<&[f64]> {
        self.distances.get(&source).map(Vec::as_slice)
    }

    /// `g(a, b)`; either endpoint must be a cached source.
    pub fn distance(&self, a: u32, b: u32) -> Result<f64> {
        if let Some(d) = self.distances.get(&a) {
            return d
                .get(b as usize)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("vertex {b} out of range")));
        }
        if let Some(d) = self.distances.get(&b) {
            return d
                .get(a as usize)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("vertex {a} out of range")));
        }
        Err(Error::NotASource(a))
    }
}

/// Geodesic distances over the edge graph from each of `sources`.
pub fn geodesic_distances(mesh: &CanonicalMesh, sources: &[u32]) -> Result<GeodesicOracle> {
    let mut oracle = GeodesicOracle::new(mesh)?;
    oracle.add_sources(sources.iter().copied())?;
    Ok(oracle)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GpsResult {
    pub per_point: Vec<f64>,
    pub score: f64,
}

/// Similarity of one prediction at geodesic distance `g`.
pub fn point_similarity(g: f64, kappa: f64) -> f64 {
    (-(g * g) / (2.0 * kappa * kappa)).exp()
}

/// Mean per-point similarity `exp(-g^2 / 2 kappa^2)` between each ground-truth
/// vertex and the vertex predicted at its pixel. Points that land on
/// background or outside the raster score 0.
pub fn gps(gt_points: &[GtPoint], uvmap: &UvMap, oracle: &GeodesicOracle, kappa: f64) -> Result<GpsResult> {
    if gt_points.is_empty() {
        return Err(Error::NoEvaluablePoints);
    }
    let per_point = gt_points
        .iter()
        .map(|p| {
            if p.x < 0.0 || p.y < 0.0 {
                return Ok(0.0);
            }
            match uvmap.vertex(p.x.floor() as usize, p.y.floor() as usize) {
                None => Ok(0.0),
                Some(pred) => Ok(point_similarity(oracle.distance(p.vertex, pred)?, kappa)),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let score = per_point.iter().sum::<f64>() / per_point.len() as f64;
    Ok(GpsResult { per_point, score })
}

/// GPS thresholds 0.50, 0.55, ..., 0.95.
pub fn gps_thresholds() -> Vec<f64> {
    (0..10).map(|k| f64::from(50 + 5 * k) / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApResult {
    pub thresholds: Vec<f64>,
    /// Interpolated average precision at each threshold, in [0, 1].
    pub precision: Vec<f64>,
    /// Mean over thresholds, in [0, 100].
    pub ap: f64,
}

/// Average precision over GPS thresholds.
///
/// Each entry is one detection matched to its own ground-truth instance, so
/// the ground-truth count equals the detection count. Detections are ranked
/// by score (stable on ties); at threshold `t` a detection is a true
/// positive iff its GPS is at least `t`. Per threshold, precision is
/// interpolated (running maximum from the right) and sampled at the 101
/// recall points 0.00..1.00, as in the COCO protocol.
pub fn average_precision(instances: &[(GpsResult, f64)]) -> ApResult {
    let pairs: Vec<(f64, f64)> = instances.iter().map(|(g, s)| (g.score, *s)).collect();
    average_precision_scores(&pairs)
}

/// [`average_precision`] on bare `(gps, detection score)` pairs.
pub fn average_precision_scores(instances: &[(f64, f64)]) -> ApResult {
    let thresholds = gps_thresholds();
    let n = instances.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| instances[b].1.total_cmp(&instances[a].1));

    let precision: Vec<f64> = thresholds
        .iter()
        .map(|&t| {
            if n == 0 {
                return 0.0;
            }
            let mut tp = 0usize;
            let mut recall = Vec::with_capacity(n);
            let mut prec = Vec::with_capacity(n);
            for (rank, &i) in order.iter().enumerate() {
                if instances[i].0 >= t {
                    tp += 1;
                }
                recall.push(tp as f64 / n as f64);
                prec.push(tp as f64 / (rank + 1) as f64);
            }
            for k in (0..n.saturating_sub(1)).rev() {
                prec[k] = prec[k].max(prec[k + 1]);
            }
            let sampled: f64 = (0..=100)
                .map(|k| {
                    let r = f64::from(k) / 100.0;
                    recall.iter().position(|&rc| rc >= r).map_or(0.0, |j| prec[j])
                })
                .sum();
            sampled / 101.0
        })
        .collect();
    let ap = 100.0 * precision.iter().sum::<f64>() / thresholds.len() as f64;
    ApResult {
        thresholds,
        precision,
        ap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_mesh() -> CanonicalMesh {
        // Four vertices on a line, unit spacing, joined by degenerate-free
        // triangles through an apex far away.
        CanonicalMesh {
            vertices: vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [2.0, 0.0, 0.0],
                [3.0, 0.0, 0.0],
                [1.5, 100.0, 0.0],
            ],
            faces: vec![[0, 1, 4], [1, 2, 4], [2, 3, 4]],
            uv: vec![[0.0, 0.0]; 5],
            partition_of: vec![0; 5],
            partition_names: vec!["all".into()],
        }
    }

    #[test]
    fn chain_distance() {
        let oracle = geodesic_distances(&path_mesh(), &[0, 1, 2, 3]).unwrap();
        assert_eq!(oracle.distance(0, 3).unwrap(), 3.0);
        for i in 0..4 {
            assert_eq!(oracle.distance(i, i).unwrap(), 0.0);
        }
        assert_eq!(oracle.distance(3, 0).unwrap(), oracle.distance(0, 3).unwrap());
    }

    #[test]
    fn disconnected_mesh_is_rejected() {
        let mut mesh = path_mesh();
        mesh.vertices.push([9.0, 9.0, 9.0]);
        mesh.uv.push([0.0, 0.0]);
        mesh.partition_of.push(0);
        let err = GeodesicOracle::new(&mesh).unwrap_err();
        assert!(matches!(
            err,
            Error::DisconnectedMesh {
                components: 2,
                unreachable_vertex: 5,
                component_size: 1
            }
        ));
    }

    #[test]
    fn unknown_source_is_an_error() {
        let oracle = geodesic_distances(&path_mesh(), &[0]).unwrap();
        assert!(oracle.distance(1, 2).is_err());
        assert!(oracle.distance(2, 0).is_ok());
    }

    #[test]
    fn similarity_half_point() {
        let kappa = 0.255;
        let g = kappa * (2.0 * 2f64.ln()).sqrt();
        assert!((point_similarity(g, kappa) - 0.5).abs() < 1e-12);
        assert_eq!(point_similarity(0.0, kappa), 1.0);
    }

    #[test]
    fn gps_empty_is_an_error() {
        let oracle = geodesic_distances(&path_mesh(), &[0]).unwrap();
        let uv = UvMap {
            width: 1,
            height: 1,
            vertex_of: vec![0],
            uv_of: vec![[0.0, 0.0]],
            score_of: vec![1.0],
        };
        assert!(matches!(gps(&[], &uv, &oracle, 0.255), Err(Error::NoEvaluablePoints)));
    }

    #[test]
    fn ap_extremes() {
        assert_eq!(average_precision_scores(&[(1.0, 0.9), (1.0, 0.5)]).ap, 100.0);
        assert_eq!(average_precision_scores(&[(0.0, 0.9), (0.0, 0.5)]).ap, 0.0);
        assert_eq!(average_precision_scores(&[]).ap, 0.0);
    }

    #[test]
    fn thresholds_are_exact() {
        let t = gps_thresholds();
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.5);
        assert_eq!(t[9], 0.95);
    }
}
