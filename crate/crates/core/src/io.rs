//! File formats: the PCT1 tensor container, masks, instance, mesh and UV-map files.
//!
//! PCT1 layout, all little-endian: the magic `PCT1`, a `u8` dtype code
//! (1 = f32, 2 = u32, 3 = u16), a `u8` dimension count, one `u32` per
//! dimension, then the row-major payload.
//!
//! Paths inside JSON documents are resolved relative to the document.

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assign::{UvMap, BACKGROUND};
use crate::error::{Error, Result};
use crate::geometry::LabelMap;
use crate::model::{
    Annotations, BBox, BoneId, BoneLengths, CanonicalMesh, EmbeddingSet, GtPoint, InstanceInput, Mask, PartSet,
    PixelEmbeddings, Skeleton2D, SkeletonKind,
};

pub const TENSOR_MAGIC: [u8; 4] = *b"PCT1";

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U32(Vec<u32>),
    U16(Vec<u16>),
}

impl TensorData {
    pub fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 1,
            TensorData::U32(_) => 2,
            TensorData::U16(_) => 3,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U32(v) => v.len(),
            TensorData::U16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn element_size(code: u8) -> Option<usize> {
        match code {
            1 | 2 => Some(4),
            3 => Some(2),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                left_name: "tensor payload".into(),
                left: vec![data.len()],
                right_name: "tensor dims".into(),
                right: dims,
            });
        }
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&TENSOR_MAGIC);
        out.push(self.data.code());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    /// Parses a PCT1 buffer; `file` names the source in errors.
    pub fn from_bytes(bytes: &[u8], file: &str) -> Result<Self> {
        let bad = |field: &str, msg: String| Error::format(file, field, msg);
        if bytes.len() < 6 || bytes[..4] != TENSOR_MAGIC {
            return Err(bad("magic", "expected PCT1".into()));
        }
        let code = bytes[4];
        let size = TensorData::element_size(code).ok_or_else(|| bad("dtype", format!("unknown dtype code {code}")))?;
        let ndim = bytes[5] as usize;
        let header = 6 + 4 * ndim;
        if bytes.len() < header {
            return Err(bad("dims", format!("truncated header for {ndim} dims")));
        }
        let dims: Vec<usize> = bytes[6..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let expected = n.and_then(|n| n.checked_mul(size));
        let payload = &bytes[header..];
        if expected != Some(payload.len()) {
            return Err(bad(
                "payload",
                format!("dims {dims:?} need {expected:?} bytes, found {}", payload.len()),
            ));
        }
        let data = match code {
            1 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            2 => TensorData::U32(
                payload
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            _ => TensorData::U16(
                payload
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
        };
        Ok(Self { dims, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    fn expect_f32(self, file: &str, field: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        match self.data {
            TensorData::F32(v) => Ok((self.dims, v)),
            other => Err(Error::format(
                file,
                field,
                format!("expected f32 tensor, found dtype {}", other.code()),
            )),
        }
    }
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Serializes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path.display().to_string(), "json", e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = match e.path().to_string() {
            p if p == "." => "json".to_string(),
            p => p,
        };
        Error::format(path.display().to_string(), field, e.into_inner().to_string())
    })
}

/// Deterministic PNG encoding of 8-bit rows.
pub(crate) fn encode_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        writer.write_image_data(data).map_err(|e| Error::Png(e.to_string()))?;
        writer.finish().map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

/// Reads an 8-bit grayscale PNG; nonzero samples are foreground.
pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let file = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec
        .read_info()
        .map_err(|e| Error::format(&file, "png", e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(
            &file,
            "png",
            format!(
                "expected 8-bit grayscale, found {:?} {:?}",
                info.color_type, info.bit_depth
            ),
        ));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(&file, "png", "image too large"))?;
    let mut buf = vec![0u8; size];
    let out = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(&file, "png", e.to_string()))?;
    let (w, h) = (out.width as usize, out.height as usize);
    let mut data = Vec::with_capacity(w * h);
    for row in buf.chunks(out.line_size).take(h) {
        data.extend(row[..w].iter().map(|&v| v != 0));
    }
    Mask::new(w, h, data)
}

/// Writes `mask` as 8-bit grayscale, foreground 255.
pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let data: Vec<u8> = mask.as_slice().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_bytes(
        path,
        &encode_png(mask.width(), mask.height(), png::ColorType::Grayscale, &data)?,
    )
}

/// Uncompressed run-length encoding: column-major runs, the first counting
/// background pixels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// `[height, width]`.
    pub size: [usize; 2],
    pub counts: Vec<usize>,
}

impl Rle {
    pub fn encode(mask: &Mask) -> Rle {
        let (w, h) = (mask.width(), mask.height());
        let mut counts = Vec::new();
        let (mut current, mut run) = (false, 0usize);
        for x in 0..w {
            for y in 0..h {
                let v = mask.get(x, y);
                if v != current {
                    counts.push(run);
                    current = v;
                    run = 0;
                }
                run += 1;
            }
        }
        counts.push(run);
        Rle { size: [h, w], counts }
    }

    pub fn decode(&self, file: &str) -> Result<Mask> {
        let [h, w] = self.size;
        let total: usize = self.counts.iter().sum();
        if total != w * h {
            return Err(Error::format(
                file,
                "mask.rle.counts",
                format!("runs sum to {total} but size is {h}x{w}"),
            ));
        }
        let mut data = vec![false; w * h];
        let (mut i, mut value) = (0usize, false);
        for &run in &self.counts {
            for k in i..i + run {
                let (x, y) = (k / h, k % h);
                data[y * w + x] = value;
            }
            i += run;
            value = !value;
        }
        Mask::new(w, h, data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskRef {
    Png(PathBuf),
    Rle(Rle),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonJson {
    pub kind: String,
    /// Flat `(x, y, confidence)` triplets.
    pub keypoints: Vec<f64>,
}

/// On-disk description of one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceJson {
    pub id: String,
    /// `[x, y, w, h]`.
    pub bbox: [f64; 4],
    #[serde(default = "default_score")]
    pub detection_score: f64,
    pub skeleton: SkeletonJson,
    pub mask: MaskRef,
    /// PCT1 f32 tensor `[H, W, D]`.
    pub embeddings: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_points: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    pub annotations: Annotations,
}

fn default_score() -> f64 {
    1.0
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new("")).join(p)
    }
}

/// Skeleton construction parameters that do not live in the instance file.
#[derive(Clone, Debug)]
pub struct InstanceContext<'a> {
    pub bone_lengths: &'a BoneLengths,
    pub presence_threshold: f64,
    /// Reinterpret the skeleton as this kind (whole-body down to COCO only).
    pub skeleton_override: Option<SkeletonKind>,
}

impl InstanceJson {
    /// Materializes the instance; `source` is the path of the JSON document.
    pub fn load(&self, source: &Path, ctx: &InstanceContext) -> Result<InstanceInput> {
        let file = source.display().to_string();
        let mask = match &self.mask {
            MaskRef::Png(p) => read_mask_png(&resolve(source, p))?,
            MaskRef::Rle(r) => r.decode(&file)?,
        };
        let emb_path = resolve(source, &self.embeddings);
        let (dims, data) = Tensor::read(&emb_path)?.expect_f32(&emb_path.display().to_string(), "dtype")?;
        if dims.len() != 3 || dims[0] != mask.height() || dims[1] != mask.width() {
            return Err(Error::format(
                &file,
                "embeddings",
                Error::ShapeMismatch {
                    left_name: "embeddings".into(),
                    left: dims,
                    right_name: "mask".into(),
                    right: vec![mask.height(), mask.width()],
                }
                .to_string(),
            ));
        }
        let embeddings = PixelEmbeddings::new(dims[1], dims[0], dims[2], data)?;
        let kind = SkeletonKind::parse(&self.skeleton.kind)?;
        let mut skeleton =
            Skeleton2D::from_triplets(kind, &self.skeleton.keypoints, ctx.presence_threshold, ctx.bone_lengths)
                .map_err(|e| Error::format(&file, "skeleton.keypoints", e.to_string()))?;
        match (kind, ctx.skeleton_override) {
            (SkeletonKind::WholeBody133, Some(SkeletonKind::Coco17)) => skeleton = skeleton.to_coco17(),
            (SkeletonKind::Coco17, Some(SkeletonKind::WholeBody133)) => {
                return Err(Error::format(
                    &file,
                    "skeleton.kind",
                    "a coco17 skeleton cannot be read as wholebody133",
                ))
            }
            _ => {}
        }
        let gt_points = self.gt_points.as_ref().map(|pts| {
            pts.iter()
                .map(|&[x, y, v]| GtPoint { x, y, vertex: v as u32 })
                .collect::<Vec<_>>()
        });
        let [x, y, w, h] = self.bbox;
        let instance = InstanceInput {
            id: self.id.clone(),
            bbox: BBox::new(x, y, w, h),
            mask,
            embeddings,
            skeleton,
            gt_points,
            detection_score: self.detection_score,
            annotations: self.annotations.clone(),
        };
        instance
            .validate(None)
            .map_err(|e| Error::format(&file, "instance", e.to_string()))?;
        Ok(instance)
    }
}

pub fn load_instance(path: &Path, ctx: &InstanceContext) -> Result<InstanceInput> {
    read_json::<InstanceJson>(path)?.load(path, ctx)
}

/// Writes `instance` as `<dir>/<id>.json` with an RLE mask and
/// `<dir>/<id>.emb.pct` embeddings. Returns the JSON path.
pub fn write_instance(dir: &Path, instance: &InstanceInput) -> Result<PathBuf> {
    let emb_name = format!("{}.emb.pct", instance.id);
    let e = &instance.embeddings;
    Tensor::new(
        vec![e.height(), e.width(), e.dim()],
        TensorData::F32(e.as_slice().to_vec()),
    )?
    .write(&dir.join(&emb_name))?;
    let b = instance.bbox;
    let doc = InstanceJson {
        id: instance.id.clone(),
        bbox: [b.x, b.y, b.w, b.h],
        detection_score: instance.detection_score,
        skeleton: SkeletonJson {
            kind: instance.skeleton.kind().name().into(),
            keypoints: instance.skeleton.triplets(),
        },
        mask: MaskRef::Rle(Rle::encode(&instance.mask)),
        embeddings: emb_name.into(),
        gt_points: instance
            .gt_points
            .as_ref()
            .map(|p| p.iter().map(|g| [g.x, g.y, g.vertex as f64]).collect()),
        annotations: instance.annotations.clone(),
    };
    let path = dir.join(format!("{}.json", instance.id));
    write_json(&path, &doc)?;
    Ok(path)
}

/// Instance-set entries: a path to an instance file or an inline instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceEntry {
    Path(PathBuf),
    Inline(Box<InstanceJson>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSetJson {
    pub instances: Vec<InstanceEntry>,
}

/// Loads every instance of a set file, in file order.
pub fn load_instance_set(path: &Path, ctx: &InstanceContext) -> Result<Vec<InstanceInput>> {
    let set: InstanceSetJson = read_json(path)?;
    set.instances
        .iter()
        .map(|entry| match entry {
            InstanceEntry::Path(p) => load_instance(&resolve(path, p), ctx),
            InstanceEntry::Inline(doc) => doc.load(path, ctx),
        })
        .collect()
}

/// Mesh file: geometry, partitioning and the canonical skeleton table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshJson {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub uv: Vec<[f64; 2]>,
    pub partition_of: Vec<u16>,
    pub partition_names: Vec<String>,
    pub bone_lengths: BoneLengths,
    pub canonical_height: f64,
    /// Left/right vertex correspondence, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mirror_of: Option<Vec<u32>>,
}

/// A loaded mesh file.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshBundle {
    pub mesh: CanonicalMesh,
    pub bone_lengths: BoneLengths,
    pub canonical_height: f64,
    pub mirror_of: Option<Vec<u32>>,
}

impl MeshBundle {
    pub fn to_json(&self) -> MeshJson {
        MeshJson {
            vertices: self.mesh.vertices.clone(),
            faces: self.mesh.faces.clone(),
            uv: self.mesh.uv.clone(),
            partition_of: self.mesh.partition_of.clone(),
            partition_names: self.mesh.partition_names.clone(),
            bone_lengths: self.bone_lengths.clone(),
            canonical_height: self.canonical_height,
            mirror_of: self.mirror_of.clone(),
        }
    }
}

pub fn load_mesh(path: &Path) -> Result<MeshBundle> {
    let file = path.display().to_string();
    let doc: MeshJson = read_json(path)?;
    doc.bone_lengths
        .validate()
        .map_err(|e| Error::format(&file, "bone_lengths", e.to_string()))?;
    let n = doc.vertices.len();
    for (field, len) in [("uv", doc.uv.len()), ("partition_of", doc.partition_of.len())] {
        if len != n {
            return Err(Error::format(
                &file,
                field,
                format!("has {len} entries for {n} vertices"),
            ));
        }
    }
    if let Some(m) = &doc.mirror_of {
        if m.len() != n || m.iter().any(|&v| v as usize >= n) {
            return Err(Error::format(&file, "mirror_of", "must map every vertex to a vertex"));
        }
    }
    Ok(MeshBundle {
        mesh: CanonicalMesh {
            vertices: doc.vertices,
            faces: doc.faces,
            uv: doc.uv,
            partition_of: doc.partition_of,
            partition_names: doc.partition_names,
        },
        bone_lengths: doc.bone_lengths,
        canonical_height: doc.canonical_height,
        mirror_of: doc.mirror_of,
    })
}

pub fn write_mesh(path: &Path, bundle: &MeshBundle) -> Result<()> {
    write_json(path, &bundle.to_json())
}

/// Vertex embeddings as a PCT1 f32 tensor `[N, D]`.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let file = path.display().to_string();
    let (dims, data) = Tensor::read(path)?.expect_f32(&file, "dtype")?;
    if dims.len() != 2 {
        return Err(Error::format(&file, "dims", format!("expected [N, D], found {dims:?}")));
    }
    EmbeddingSet::new(dims[1], data).map_err(|e| Error::format(&file, "payload", e.to_string()))
}

pub fn write_embeddings(path: &Path, emb: &EmbeddingSet) -> Result<()> {
    Tensor::new(vec![emb.len(), emb.dim()], TensorData::F32(emb.as_slice().to_vec()))?.write(path)
}

/// JSON sidecar written next to the UV-map rasters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UvMapSummary {
    pub instance_id: String,
    pub width: usize,
    pub height: usize,
    pub background_vertex: u32,
    /// Capsule radius in pixels; absent when no regions were built.
    pub radius: Option<f64>,
    pub pixels_per_unit: Option<f64>,
    pub contributing_bone: Option<BoneId>,
    pub foreground_pixels: usize,
    pub partition_histogram: BTreeMap<String, usize>,
    pub cross_laterality_pixels: Option<usize>,
}

pub const UV_VERTICES_FILE: &str = "vertices.pct";
pub const UV_SCORES_FILE: &str = "scores.pct";
pub const UV_SUMMARY_FILE: &str = "uvmap.json";

/// Writes the vertex raster (u32 `[H, W]`), the score raster (f32 `[H, W]`)
/// and the sidecar into `dir`.
pub fn write_uvmap(dir: &Path, uvmap: &UvMap, summary: &UvMapSummary) -> Result<()> {
    let dims = vec![uvmap.height, uvmap.width];
    Tensor::new(dims.clone(), TensorData::U32(uvmap.vertex_of.clone()))?.write(&dir.join(UV_VERTICES_FILE))?;
    Tensor::new(dims, TensorData::F32(uvmap.score_of.clone()))?.write(&dir.join(UV_SCORES_FILE))?;
    write_json(&dir.join(UV_SUMMARY_FILE), summary)
}

pub fn load_uvmap(dir: &Path, mesh: &CanonicalMesh) -> Result<UvMap> {
    let vpath = dir.join(UV_VERTICES_FILE);
    let vfile = vpath.display().to_string();
    let v = Tensor::read(&vpath)?;
    let (dims, vertex_of) = match v.data {
        TensorData::U32(d) if v.dims.len() == 2 => (v.dims, d),
        _ => return Err(Error::format(&vfile, "dtype", "expected u32 [H, W]")),
    };
    let spath = dir.join(UV_SCORES_FILE);
    let (sdims, score_of) = Tensor::read(&spath)?.expect_f32(&spath.display().to_string(), "dtype")?;
    if sdims != dims {
        return Err(Error::ShapeMismatch {
            left_name: "vertex raster".into(),
            left: dims,
            right_name: "score raster".into(),
            right: sdims,
        });
    }
    let map = UvMap::from_rasters(dims[1], dims[0], vertex_of, score_of, mesh)?;
    debug_assert!(map
        .vertex_of
        .iter()
        .all(|&v| v == BACKGROUND || (v as usize) < mesh.vertex_count()));
    Ok(map)
}

/// LabelMap as a u16 PCT1 raster `[H, W]` of partition bitmasks.
pub fn write_label_map(path: &Path, labels: &LabelMap) -> Result<()> {
    Tensor::new(vec![labels.height(), labels.width()], TensorData::U16(labels.raw()))?.write(path)
}

pub fn load_label_map(path: &Path) -> Result<LabelMap> {
    let t = Tensor::read(path)?;
    match t.data {
        TensorData::U16(raw) if t.dims.len() == 2 => {
            LabelMap::new(t.dims[1], t.dims[0], raw.into_iter().map(PartSet).collect())
        }
        _ => Err(Error::format(
            path.display().to_string(),
            "dtype",
            "expected u16 [H, W]",
        )),
    }
}

/// A sequence of skeletons for height tracking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramesJson {
    pub kind: String,
    /// One flat `(x, y, confidence)` triplet list per frame.
    pub frames: Vec<Vec<f64>>,
}
