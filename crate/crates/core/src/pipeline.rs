//! End-to-end composition: skeleton → scale → regions → assignment → metrics.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assign::{assign_constrained, assign_unconstrained, UvMap, BACKGROUND};
use crate::error::{Error, Result};
use crate::eval::{average_precision, gps, ApResult, GeodesicOracle, GpsResult};
use crate::geometry::{build_proximal_regions, LabelMap};
use crate::io::UvMapSummary;
use crate::model::{CanonicalMesh, EmbeddingSet, EngineConfig, InstanceInput, PartSet, Point2, Skeleton2D};
use crate::quality::{distance_to_part, RemovalList};
use crate::scale::{estimate_scale, ScaleEstimate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    Constrained,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Constrained => "constrained",
        }
    }
}

/// How the capsule radius is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RadiusSpec {
    /// `delta` model units, converted with the instance's scale.
    Delta(f64),
    /// The image diagonal in pixels: every capsule covers the whole image.
    Diagonal,
}

impl RadiusSpec {
    /// Parses a number or the token `diag`.
    pub fn parse(token: &str) -> Result<Self> {
        let t = token.trim();
        if t.eq_ignore_ascii_case("diag") {
            return Ok(RadiusSpec::Diagonal);
        }
        match t.parse::<f64>() {
            Ok(d) if d.is_finite() && d >= 0.0 => Ok(RadiusSpec::Delta(d)),
            _ => Err(Error::InvalidInput(format!("`{t}` is neither a delta >= 0 nor `diag`"))),
        }
    }

    pub fn label(self) -> String {
        match self {
            RadiusSpec::Delta(d) => format!("{d}"),
            RadiusSpec::Diagonal => "diag".into(),
        }
    }
}

/// Where constrained mode takes its label sets from.
#[derive(Clone, Debug, Default)]
pub enum LabelSource {
    /// Build proximal regions from the skeleton.
    #[default]
    Regions,
    /// Every partition everywhere.
    AllBits,
    /// A precomputed label map.
    Given(LabelMap),
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub mode: Mode,
    pub radius: RadiusSpec,
    pub labels: LabelSource,
}

impl RunOptions {
    pub fn new(mode: Mode, config: &EngineConfig) -> Self {
        Self {
            mode,
            radius: RadiusSpec::Delta(config.delta),
            labels: LabelSource::Regions,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RegionOutput {
    pub labels: LabelMap,
    pub scale: Option<ScaleEstimate>,
    pub radius: Option<f64>,
}

/// Label sets for `instance`. Without a usable scale every partition is allowed.
pub fn compute_regions(instance: &InstanceInput, config: &EngineConfig, radius: RadiusSpec) -> RegionOutput {
    let scale = estimate_scale(&instance.skeleton).ok();
    let radius_px = match (radius, &scale) {
        (RadiusSpec::Diagonal, _) => {
            let (w, h) = (instance.width() as f64, instance.height() as f64);
            Some((w * w + h * h).sqrt())
        }
        (RadiusSpec::Delta(d), Some(s)) => Some(d * s.pixels_per_unit),
        (RadiusSpec::Delta(_), None) => None,
    };
    let labels = match radius_px {
        Some(r) => build_proximal_regions(&instance.skeleton, r, &instance.mask, config.hand_foot_radius_factor),
        None => LabelMap::uniform(&instance.mask, PartSet::HUMAN),
    };
    RegionOutput {
        labels,
        scale,
        radius: radius_px,
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub uvmap: UvMap,
    pub labels: Option<LabelMap>,
    pub scale: Option<ScaleEstimate>,
    pub radius: Option<f64>,
}

/// Assigns every foreground pixel of `instance`.
pub fn run(
    instance: &InstanceInput,
    mesh: &CanonicalMesh,
    emb: &EmbeddingSet,
    config: &EngineConfig,
    options: &RunOptions,
) -> Result<RunOutput> {
    match options.mode {
        Mode::Baseline => Ok(RunOutput {
            uvmap: assign_unconstrained(instance, mesh, emb)?,
            labels: None,
            scale: estimate_scale(&instance.skeleton).ok(),
            radius: None,
        }),
        Mode::Constrained => {
            let (labels, scale, radius) = match &options.labels {
                LabelSource::Regions => {
                    mesh.ensure_human_partitioning()?;
                    let r = compute_regions(instance, config, options.radius);
                    (r.labels, r.scale, r.radius)
                }
                LabelSource::AllBits => (
                    LabelMap::uniform(&instance.mask, PartSet::all(mesh.partition_count())),
                    estimate_scale(&instance.skeleton).ok(),
                    None,
                ),
                LabelSource::Given(l) => (l.clone(), estimate_scale(&instance.skeleton).ok(), None),
            };
            let uvmap = assign_constrained(instance, mesh, emb, &labels)?;
            Ok(RunOutput {
                uvmap,
                labels: Some(labels),
                scale,
                radius,
            })
        }
    }
}

/// Foreground pixels assigned to a lateral body part that lie closer to the
/// opposite side's skeleton geometry than to their own part's.
pub fn cross_laterality_pixels(uvmap: &UvMap, mesh: &CanonicalMesh, skeleton: &Skeleton2D) -> usize {
    let mut count = 0;
    for y in 0..uvmap.height {
        for x in 0..uvmap.width {
            let Some(v) = uvmap.vertex(x, y) else { continue };
            let Some(part) = mesh.body_part_of(v) else { continue };
            if part.side().is_none() {
                continue;
            }
            let p = Point2::new(x as f64, y as f64);
            if let (Some(own), Some(other)) = (
                distance_to_part(skeleton, part, p),
                distance_to_part(skeleton, part.mirror(), p),
            ) {
                if other < own {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Foreground pixel count per partition name.
pub fn partition_histogram(uvmap: &UvMap, mesh: &CanonicalMesh) -> BTreeMap<String, usize> {
    let mut hist: BTreeMap<String, usize> = mesh.partition_names.iter().map(|n| (n.clone(), 0)).collect();
    for &v in &uvmap.vertex_of {
        if v == BACKGROUND {
            continue;
        }
        if let Some(name) = mesh
            .partition_of
            .get(v as usize)
            .and_then(|&p| mesh.partition_names.get(p as usize))
        {
            *hist.entry(name.clone()).or_default() += 1;
        }
    }
    hist
}

/// The sidecar describing one run. It holds no mode or flag values, so two
/// runs that assign identically write identical files.
pub fn summarize(instance: &InstanceInput, mesh: &CanonicalMesh, out: &RunOutput) -> UvMapSummary {
    UvMapSummary {
        instance_id: instance.id.clone(),
        width: out.uvmap.width,
        height: out.uvmap.height,
        background_vertex: BACKGROUND,
        radius: out.radius,
        pixels_per_unit: out.scale.as_ref().map(|s| s.pixels_per_unit),
        contributing_bone: out.scale.as_ref().map(|s| s.contributing_bone),
        foreground_pixels: out.uvmap.foreground_count(),
        partition_histogram: partition_histogram(&out.uvmap, mesh),
        cross_laterality_pixels: mesh
            .has_human_partitioning()
            .then(|| cross_laterality_pixels(&out.uvmap, mesh, &instance.skeleton)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceScore {
    pub id: String,
    pub detection_score: f64,
    pub evaluated_points: usize,
    /// `None` when no ground-truth point survives.
    pub gps: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub per_point: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub mode: Mode,
    pub radius: String,
    pub instances: Vec<InstanceScore>,
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub ap: f64,
}

/// A geodesic oracle seeded with every ground-truth vertex of `instances`.
pub fn oracle_for(mesh: &CanonicalMesh, instances: &[InstanceInput]) -> Result<GeodesicOracle> {
    let mut oracle = GeodesicOracle::new(mesh)?;
    oracle.add_sources(
        instances
            .iter()
            .flat_map(|i| i.gt_points.iter().flatten().map(|p| p.vertex)),
    )?;
    Ok(oracle)
}

/// Runs every instance, scores it with GPS and aggregates AP. Instances with
/// no surviving ground-truth point are reported but not ranked.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_set(
    instances: &[InstanceInput],
    mesh: &CanonicalMesh,
    emb: &EmbeddingSet,
    oracle: &GeodesicOracle,
    config: &EngineConfig,
    options: &RunOptions,
    removal: Option<&RemovalList>,
) -> Result<EvaluationReport> {
    let scored: Vec<(InstanceScore, Option<GpsResult>)> = instances
        .par_iter()
        .map(|instance| {
            let points = match removal {
                Some(r) => r.surviving_points(instance, mesh),
                None => instance.gt_points.clone(),
            }
            .unwrap_or_default();
            let result = if points.is_empty() {
                None
            } else {
                let out = run(instance, mesh, emb, config, options)?;
                Some(gps(&points, &out.uvmap, oracle, config.kappa)?)
            };
            Ok((
                InstanceScore {
                    id: instance.id.clone(),
                    detection_score: instance.detection_score,
                    evaluated_points: points.len(),
                    gps: result.as_ref().map(|g| g.score),
                    per_point: result.as_ref().map(|g| g.per_point.clone()).unwrap_or_default(),
                },
                result,
            ))
        })
        .collect::<Result<_>>()?;
    let ranked: Vec<(GpsResult, f64)> = scored
        .iter()
        .filter_map(|(s, g)| g.clone().map(|g| (g, s.detection_score)))
        .collect();
    let ApResult {
        thresholds,
        precision,
        ap,
    } = average_precision(&ranked);
    Ok(EvaluationReport {
        mode: options.mode,
        radius: options.radius.label(),
        instances: scored.into_iter().map(|(s, _)| s).collect(),
        thresholds,
        precision,
        ap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_tokens() {
        assert_eq!(RadiusSpec::parse("0.08").unwrap(), RadiusSpec::Delta(0.08));
        assert_eq!(RadiusSpec::parse(" diag ").unwrap(), RadiusSpec::Diagonal);
        assert!(RadiusSpec::parse("-1").is_err());
        assert!(RadiusSpec::parse("wide").is_err());
    }
}
