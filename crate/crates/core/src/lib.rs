//! Pose-constrained pixel-to-vertex assignment.
//!
//! Dense correspondence models assign every foreground pixel the mesh vertex
//! whose embedding is most similar to the pixel embedding. This crate
//! restricts that search to the body-part partitions that a 2D skeleton
//! allows at each pixel, and ships the evaluation and annotation-audit tools
//! used to measure the effect.
//!
//! Module map:
//!
//! - [`model`]: meshes, embeddings, skeletons, instances and engine config.
//! - [`geometry`]: capsules, torso facing, and the per-pixel [`LabelMap`].
//! - [`scale`]: pixels-per-unit estimation, capsule radius, height tracking.
//! - [`assign`]: unconstrained, constrained and blocked assignment kernels.
//! - [`eval`]: mesh geodesics, GPS and average precision.
//! - [`quality`]: annotation consistency auditing and removal lists.
//! - [`io`], [`config`], [`render`]: file formats, configuration, UV rendering.
//! - [`pipeline`]: the end-to-end composition used by the CLI.
//! - [`fixtures`]: the procedural mannequin and synthetic instance corpus.

pub mod assign;
pub mod config;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod geometry;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod quality;
pub mod render;
pub mod scale;

pub use assign::{
    assign_constrained, assign_constrained_blocked, assign_unconstrained, build_partition_tables, PartitionTables,
    UvMap,
};
pub use error::{Error, Result};
pub use eval::{average_precision, geodesic_distances, gps, ApResult, GeodesicOracle, GpsResult};
pub use geometry::{build_proximal_regions, point_segment_distance, quadrilateral_facing, Capsule, Facing, LabelMap};
pub use model::{
    validate_mesh, BBox, BodyPart, BoneId, BoneLengths, CanonicalMesh, EmbeddingSet, EngineConfig, GtPoint,
    InstanceInput, Keypoint, Mask, PartSet, PixelEmbeddings, Point2, Skeleton2D, SkeletonKind, ValidationIssue,
    ValidationReport,
};
pub use quality::{audit_instance, build_removal_list, AuditThresholds, ConsistencyReport, RemovalList};
pub use scale::{capsule_radius, estimate_height, estimate_scale, ScaleEstimate};
