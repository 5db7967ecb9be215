use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn pccse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pccse"))
        .args(args)
        .env_remove("PCCSE_CONFIG")
        .output()
        .expect("spawn pccse")
}

fn ok(args: &[&str]) {
    let out = pccse(args);
    assert!(
        out.status.success(),
        "pccse {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_of(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stderr).expect("error JSON on stderr");
    v["error"].clone()
}

struct Corpus {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

fn corpus() -> &'static Corpus {
    static C: OnceLock<Corpus> = OnceLock::new();
    C.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("corpus");
        ok(&["fixtures", "--out", root.to_str().unwrap()]);
        Corpus { _dir: dir, root }
    })
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

impl Corpus {
    fn path(&self, rel: &str) -> String {
        s(&self.root.join(rel))
    }
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let c = corpus();
    let out = pccse(&[
        "assign",
        "--instance",
        &c.path("instances/swap_000.json"),
        "--embeddings",
        "e",
        "--out",
        "o",
    ]);
    let err = error_of(&out);
    assert_eq!(err["kind"], "usage");
    assert_eq!(err["flag"], "--mesh");
    assert!(err["message"].as_str().unwrap().contains("--mesh"));
}

#[test]
fn empty_delta_list_is_rejected() {
    let c = corpus();
    let out = pccse(&[
        "ablate-delta",
        "--set",
        &c.path("swap_set.json"),
        "--mesh",
        &c.path("mesh.json"),
        "--embeddings",
        &c.path("embeddings.pct"),
        "--deltas",
        "--out",
        "x.csv",
    ]);
    assert_eq!(error_of(&out)["flag"], "--deltas");
}

#[test]
fn broken_instance_names_file_and_field() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = fs::read_to_string(c.root.join("instances/swap_000.json")).unwrap();
    let mut doc: Value = serde_json::from_str(&text).unwrap();
    doc["bbox"] = serde_json::json!([0, 0, 10]);
    fs::write(&bad, doc.to_string()).unwrap();
    let out = pccse(&[
        "assign",
        "--instance",
        &s(&bad),
        "--mesh",
        &c.path("mesh.json"),
        "--embeddings",
        &c.path("embeddings.pct"),
        "--out",
        &s(&dir.path().join("o")),
    ]);
    let err = error_of(&out);
    assert_eq!(err["flag"], "--instance");
    let msg = err["message"].as_str().unwrap();
    assert!(msg.contains("bad.json") && msg.contains("bbox"), "{msg}");
}

#[test]
fn baseline_equals_all_labels() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let common = [
        "--instance",
        &c.path("instances/swap_001.json"),
        "--mesh",
        &c.path("mesh.json"),
    ];
    let emb = c.path("embeddings.pct");
    ok(&[
        &["assign"][..],
        &common,
        &["--embeddings", &emb, "--mode", "baseline", "--out", &s(&a)],
    ]
    .concat());
    ok(&[
        &["assign"][..],
        &common,
        &["--embeddings", &emb, "--all-labels", "--out", &s(&b)],
    ]
    .concat());
    for f in ["vertices.pct", "scores.pct", "uvmap.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn constraints_reduce_cross_laterality() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let mut totals = [0u64; 2];
    for (k, mode) in ["baseline", "constrained"].into_iter().enumerate() {
        let out = dir.path().join(mode);
        ok(&[
            "assign",
            "--instance",
            &c.path("instances"),
            "--mesh",
            &c.path("mesh.json"),
            "--embeddings",
            &c.path("embeddings.pct"),
            "--mode",
            mode,
            "--out",
            &s(&out),
        ]);
        for entry in fs::read_dir(&out).unwrap() {
            let summary: Value =
                serde_json::from_slice(&fs::read(entry.unwrap().path().join("uvmap.json")).unwrap()).unwrap();
            totals[k] += summary["cross_laterality_pixels"].as_u64().unwrap();
        }
    }
    assert!(totals[1] < totals[0], "{totals:?}");
}

#[test]
fn precomputed_regions_match_fused_run() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let inst = c.path("instances/swap_003.json");
    let labels = s(&dir.path().join("l.pct"));
    ok(&[
        "regions",
        "--instance",
        &inst,
        "--mesh",
        &c.path("mesh.json"),
        "--out",
        &labels,
    ]);
    let base = ["assign", "--instance", &inst, "--mesh", &c.path("mesh.json")];
    let emb = c.path("embeddings.pct");
    let (x, y) = (dir.path().join("x"), dir.path().join("y"));
    ok(&[&base[..], &["--embeddings", &emb, "--labels", &labels, "--out", &s(&x)]].concat());
    ok(&[&base[..], &["--embeddings", &emb, "--out", &s(&y)]].concat());
    for f in ["vertices.pct", "scores.pct"] {
        assert_eq!(fs::read(x.join(f)).unwrap(), fs::read(y.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn zero_delta_ablation_equals_baseline() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ab.csv");
    let eval = dir.path().join("eval.json");
    let set = ["--set", &c.path("swap_set.json"), "--mesh", &c.path("mesh.json")];
    let emb = c.path("embeddings.pct");
    ok(&[
        &["ablate-delta"][..],
        &set,
        &["--embeddings", &emb, "--deltas", "0,0.08", "--out", &s(&csv)],
    ]
    .concat());
    ok(&[
        &["evaluate"][..],
        &set,
        &["--embeddings", &emb, "--mode", "baseline", "--out", &s(&eval)],
    ]
    .concat());
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<(&str, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let (d, ap) = l.split_once(',').unwrap();
            (d, ap.parse().unwrap())
        })
        .collect();
    let report: Value = serde_json::from_slice(&fs::read(&eval).unwrap()).unwrap();
    let baseline = report["ap"].as_f64().unwrap();
    assert_eq!(rows[0], ("0", baseline));
    assert!(rows[1].1 > baseline);
}

#[test]
fn check_then_filtered_evaluation() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let (report, removal) = (dir.path().join("r.json"), dir.path().join("rm.json"));
    ok(&[
        "check",
        "--set",
        &c.path("audit_set.json"),
        "--mesh",
        &c.path("mesh.json"),
        "--report",
        &s(&report),
        "--removal",
        &s(&removal),
    ]);
    let list: Value = serde_json::from_slice(&fs::read(&removal).unwrap()).unwrap();
    let ids: Vec<&str> = list["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["instance_id"].as_str().unwrap())
        .collect();
    assert!(!ids.is_empty());
    assert!(ids.iter().all(|id| id.ends_with("_sides_swapped")), "{ids:?}");

    let eval = dir.path().join("e.json");
    ok(&[
        "evaluate",
        "--set",
        &c.path("audit_set.json"),
        "--mesh",
        &c.path("mesh.json"),
        "--embeddings",
        &c.path("embeddings.pct"),
        "--ignore-flagged",
        &s(&removal),
        "--out",
        &s(&eval),
    ]);
    let v: Value = serde_json::from_slice(&fs::read(&eval).unwrap()).unwrap();
    let flagged = v["instances"]
        .as_array()
        .unwrap()
        .iter()
        .find(|i| i["id"] == ids[0])
        .unwrap()
        .clone();
    let entry = &list["entries"][0];
    assert_eq!(
        flagged["evaluated_points"].as_u64().unwrap(),
        entry["total_points"].as_u64().unwrap() - entry["removed_points"].as_u64().unwrap()
    );
}

#[test]
fn height_track_and_render() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("h.csv");
    ok(&[
        "height-track",
        "--frames",
        &c.path("frames.json"),
        "--mesh",
        &c.path("mesh.json"),
        "--out",
        &s(&csv),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("frame,pixels_per_unit,height_px"));
    assert_eq!(text.lines().count(), 49);

    let uv = dir.path().join("uv");
    let png = dir.path().join("uv.png");
    ok(&[
        "assign",
        "--instance",
        &c.path("instances/swap_000.json"),
        "--mesh",
        &c.path("mesh.json"),
        "--embeddings",
        &c.path("embeddings.pct"),
        "--out",
        &s(&uv),
    ]);
    ok(&[
        "render",
        "--uvmap",
        &s(&uv),
        "--mesh",
        &c.path("mesh.json"),
        "--out",
        &s(&png),
    ]);
    assert_eq!(&fs::read(&png).unwrap()[1..4], b"PNG");
}
