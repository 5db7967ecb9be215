use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use pccse_core::config::{AuditLayer, ConfigLayer, Settings};
use pccse_core::io::{self, FramesJson, InstanceContext, MeshBundle};
use pccse_core::pipeline::{self, LabelSource, Mode, RadiusSpec, RunOptions};
use pccse_core::quality::{audit_instance, build_removal_list, ConsistencyReport, RemovalList};
use pccse_core::scale::track_height;
use pccse_core::{validate_mesh, EmbeddingSet, InstanceInput, Skeleton2D, SkeletonKind};

use crate::{
    AblateArgs, AssignArgs, CheckArgs, Command, EngineArgs, EvaluateArgs, FixturesArgs, HeightArgs, RegionsArgs,
    RenderArgs, SkeletonArg,
};

/// A failure attributable to one command-line flag.
#[derive(Debug)]
pub struct FlagError {
    pub flag: &'static str,
    pub message: String,
}

impl std::fmt::Display for FlagError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.flag, self.message)
    }
}

impl std::error::Error for FlagError {}

impl FlagError {
    /// Context for a failure reading the file passed to `flag`. The
    /// underlying error already names the path.
    fn load(flag: &'static str) -> Self {
        FlagError {
            flag,
            message: "cannot load".into(),
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Assign(a) => assign(a),
        Command::Regions(a) => regions(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Check(a) => check(a),
        Command::Render(a) => render(a),
        Command::AblateDelta(a) => ablate(a),
        Command::HeightTrack(a) => height_track(a),
        Command::Fixtures(a) => fixtures(a),
    }
}

fn load_mesh(path: &Path) -> Result<MeshBundle> {
    io::load_mesh(path).with_context(|| FlagError::load("--mesh"))
}

fn load_embeddings(path: &Path, bundle: &MeshBundle) -> Result<EmbeddingSet> {
    let emb = io::load_embeddings(path).with_context(|| FlagError::load("--embeddings"))?;
    validate_mesh(&bundle.mesh, &emb)
        .into_result()
        .with_context(|| FlagError {
            flag: "--embeddings",
            message: format!("{} does not fit the mesh", path.display()),
        })?;
    Ok(emb)
}

fn settings(engine: &EngineArgs, audit: Option<AuditLayer>, bundle: &MeshBundle) -> Result<Settings> {
    let layer = ConfigLayer {
        audit,
        ..engine.layer()
    };
    Ok(Settings::resolve(engine.config.as_deref(), &layer)
        .context("configuration")?
        .with_mesh_height(Some(bundle.canonical_height)))
}

fn context<'a>(bundle: &'a MeshBundle, s: &Settings, skeleton: Option<SkeletonArg>) -> InstanceContext<'a> {
    InstanceContext {
        bone_lengths: &bundle.bone_lengths,
        presence_threshold: s.engine.presence_threshold,
        skeleton_override: skeleton.map(SkeletonKind::from),
    }
}

/// Instance files named by `--instance`: the file itself, or every `.json`
/// in the directory, sorted by name.
fn instance_paths(path: &Path) -> Result<(bool, Vec<PathBuf>)> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| FlagError::load("--instance"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        files.sort();
        Ok((true, files))
    } else if path.exists() {
        Ok((false, vec![path.to_path_buf()]))
    } else {
        Err(FlagError {
            flag: "--instance",
            message: format!("{} does not exist", path.display()),
        }
        .into())
    }
}

fn load_set(path: &Path, ctx: &InstanceContext) -> Result<Vec<InstanceInput>> {
    io::load_instance_set(path, ctx).with_context(|| FlagError::load("--set"))
}

fn assign(a: AssignArgs) -> Result<()> {
    let bundle = load_mesh(&a.mesh)?;
    let emb = load_embeddings(&a.embeddings, &bundle)?;
    let s = settings(&a.engine, None, &bundle)?;
    let ctx = context(&bundle, &s, a.skeleton);
    let (is_dir, paths) = instance_paths(&a.instance)?;
    let labels = match (&a.labels, a.all_labels) {
        (Some(_), _) if is_dir => {
            bail!(FlagError {
                flag: "--labels",
                message: "a label map applies to a single instance only".into(),
            })
        }
        (Some(p), _) => LabelSource::Given(io::load_label_map(p).with_context(|| FlagError::load("--labels"))?),
        (None, true) => LabelSource::AllBits,
        (None, false) => LabelSource::Regions,
    };
    let mode: Mode = a.mode.into();
    let options = RunOptions {
        labels,
        ..RunOptions::new(mode, &s.engine)
    };
    paths.par_iter().try_for_each(|path| -> Result<()> {
        let instance = io::load_instance(path, &ctx).with_context(|| FlagError::load("--instance"))?;
        let out = pipeline::run(&instance, &bundle.mesh, &emb, &s.engine, &options)
            .with_context(|| format!("instance {}", instance.id))?;
        let summary = pipeline::summarize(&instance, &bundle.mesh, &out);
        let dir = if is_dir {
            a.out.join(&instance.id)
        } else {
            a.out.clone()
        };
        io::write_uvmap(&dir, &out.uvmap, &summary)?;
        Ok(())
    })
}

fn regions(a: RegionsArgs) -> Result<()> {
    let bundle = load_mesh(&a.mesh)?;
    let s = settings(&a.engine, None, &bundle)?;
    let ctx = context(&bundle, &s, a.skeleton);
    let (is_dir, paths) = instance_paths(&a.instance)?;
    paths.par_iter().try_for_each(|path| -> Result<()> {
        let instance = io::load_instance(path, &ctx).with_context(|| FlagError::load("--instance"))?;
        let r = pipeline::compute_regions(&instance, &s.engine, RadiusSpec::Delta(s.engine.delta));
        let out = if is_dir {
            a.out.join(format!("{}.labels.pct", instance.id))
        } else {
            a.out.clone()
        };
        io::write_label_map(&out, &r.labels)?;
        Ok(())
    })
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let bundle = load_mesh(&a.mesh)?;
    let emb = load_embeddings(&a.embeddings, &bundle)?;
    let s = settings(&a.engine, None, &bundle)?;
    let instances = load_set(&a.set, &context(&bundle, &s, a.skeleton))?;
    let removal: Option<RemovalList> = a
        .ignore_flagged
        .as_deref()
        .map(|p| io::read_json(p).with_context(|| FlagError::load("--ignore-flagged")))
        .transpose()?;
    let oracle = pipeline::oracle_for(&bundle.mesh, &instances)?;
    let options = RunOptions::new(a.mode.into(), &s.engine);
    let report = pipeline::evaluate_set(
        &instances,
        &bundle.mesh,
        &emb,
        &oracle,
        &s.engine,
        &options,
        removal.as_ref(),
    )?;
    io::write_json(&a.out, &report)?;
    Ok(())
}

#[derive(Serialize)]
struct CheckReport<'a> {
    thresholds: pccse_core::AuditThresholds,
    reports: &'a [ConsistencyReport],
}

fn check(a: CheckArgs) -> Result<()> {
    let bundle = load_mesh(&a.mesh)?;
    let audit = AuditLayer {
        bone_distance_max: a.bone_distance_max,
        mask_in_bbox_min: a.mask_in_bbox_min,
        points_in_mask_min: a.points_in_mask_min,
    };
    let s = settings(&a.engine, Some(audit), &bundle)?;
    let instances = load_set(&a.set, &context(&bundle, &s, None))?;
    let reports = instances
        .par_iter()
        .map(|i| audit_instance(i, &bundle.mesh, &s.audit))
        .collect::<pccse_core::Result<Vec<_>>>()?;
    let removal = build_removal_list(&reports);
    io::write_json(
        &a.report,
        &CheckReport {
            thresholds: s.audit,
            reports: &reports,
        },
    )?;
    io::write_json(&a.removal, &removal)?;
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let bundle = load_mesh(&a.mesh)?;
    let uvmap = io::load_uvmap(&a.uvmap, &bundle.mesh).with_context(|| FlagError::load("--uvmap"))?;
    pccse_core::render::render_uvmap(&uvmap, &a.out)?;
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let specs: Vec<RadiusSpec> = a
        .deltas
        .iter()
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            RadiusSpec::parse(t).map_err(|e| FlagError {
                flag: "--deltas",
                message: e.to_string(),
            })
        })
        .collect::<Result<_, _>>()?;
    if specs.is_empty() {
        bail!(FlagError {
            flag: "--deltas",
            message: "empty delta list".into(),
        });
    }
    let bundle = load_mesh(&a.mesh)?;
    let emb = load_embeddings(&a.embeddings, &bundle)?;
    let s = settings(&a.engine, None, &bundle)?;
    let instances = load_set(&a.set, &context(&bundle, &s, a.skeleton))?;
    let oracle = pipeline::oracle_for(&bundle.mesh, &instances)?;
    let mut csv = String::from("delta,ap\n");
    for spec in specs {
        let options = RunOptions {
            radius: spec,
            ..RunOptions::new(Mode::Constrained, &s.engine)
        };
        let r = pipeline::evaluate_set(&instances, &bundle.mesh, &emb, &oracle, &s.engine, &options, None)?;
        writeln!(csv, "{},{}", spec.label(), r.ap)?;
    }
    write_text(&a.out, &csv)
}

fn height_track(a: HeightArgs) -> Result<()> {
    let bundle = load_mesh(&a.mesh)?;
    let s = settings(&a.engine, None, &bundle)?;
    let doc: FramesJson = io::read_json(&a.frames).with_context(|| FlagError::load("--frames"))?;
    let kind = SkeletonKind::parse(&doc.kind).with_context(|| FlagError::load("--frames"))?;
    let frames = doc
        .frames
        .iter()
        .enumerate()
        .map(|(i, t)| {
            Skeleton2D::from_triplets(kind, t, s.engine.presence_threshold, &bundle.bone_lengths)
                .with_context(|| format!("--frames {}: frame {i}", a.frames.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("frame,pixels_per_unit,height_px\n");
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for sample in track_height(&frames, &s.engine) {
        writeln!(
            csv,
            "{},{},{}",
            sample.frame,
            cell(sample.pixels_per_unit),
            cell(sample.height_px)
        )?;
    }
    write_text(&a.out, &csv)
}

fn fixtures(a: FixturesArgs) -> Result<()> {
    let paths = pccse_core::fixtures::write_corpus(&a.out)?;
    println!("{}", serde_json::to_string_pretty(&paths)?);
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    fs::write(path, text).with_context(|| path.display().to_string())
}
