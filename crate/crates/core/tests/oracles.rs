//! Independent reference implementations checked against the library.

use pccse_core::eval::{average_precision_scores, point_similarity};
use pccse_core::fixtures::{self, AssignmentCase};
use pccse_core::pipeline::{self, Mode, RunOptions};
use pccse_core::{
    assign_constrained, assign_constrained_blocked, assign_unconstrained, geodesic_distances, gps, CanonicalMesh,
    EngineConfig, GtPoint,
};

/// All-pairs shortest paths over the edge graph, computed densely.
pub fn floyd_warshall(mesh: &CanonicalMesh) -> Vec<Vec<f64>> {
    let n = mesh.vertex_count();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k] as usize, f[(k + 1) % 3] as usize);
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            let w = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2)).sqrt();
            if w < d[a][b] {
                d[a][b] = w;
                d[b][a] = w;
            }
        }
    }
    for k in 0..n {
        let dk = d[k].clone();
        for row in d.iter_mut() {
            let dik = row[k];
            if dik == f64::INFINITY {
                continue;
            }
            for (j, &dkj) in dk.iter().enumerate() {
                let via = dik + dkj;
                if via < row[j] {
                    row[j] = via;
                }
            }
        }
    }
    d
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        s += a[i] as f64 * b[i] as f64;
    }
    s
}

/// Exhaustive loop over the vertices admitted at each pixel; first maximum wins.
fn brute_force(case: &AssignmentCase, constrained: bool) -> Vec<u32> {
    let inst = &case.instance;
    let (w, h) = (inst.width(), inst.height());
    let mut out = vec![u32::MAX; w * h];
    for y in 0..h {
        for x in 0..w {
            if !inst.mask.get(x, y) {
                continue;
            }
            let allowed = case.labels.get(x, y);
            let phi = inst.embeddings.pixel(x, y);
            let mut best: Option<(u32, f64)> = None;
            for v in 0..case.mesh.vertex_count() {
                if constrained && !allowed.contains(case.mesh.partition_of[v] as usize) {
                    continue;
                }
                let s = dot(case.embeddings.row(v), phi);
                if best.is_none() || s > best.unwrap().1 {
                    best = Some((v as u32, s));
                }
            }
            out[y * w + x] = best.expect("admissible vertex").0;
        }
    }
    out
}

#[test]
fn kernels_match_brute_force() {
    for seed in 0..40 {
        let case = fixtures::random_assignment_case(seed);
        let expect = brute_force(&case, true);
        let flat = assign_constrained(&case.instance, &case.mesh, &case.embeddings, &case.labels).unwrap();
        let blocked = assign_constrained_blocked(&case.instance, &case.mesh, &case.embeddings, &case.labels).unwrap();
        assert_eq!(flat.vertex_of, expect, "flat, seed {seed}");
        assert_eq!(blocked.vertex_of, expect, "blocked, seed {seed}");
        let free = assign_unconstrained(&case.instance, &case.mesh, &case.embeddings).unwrap();
        assert_eq!(free.vertex_of, brute_force(&case, false), "unconstrained, seed {seed}");
    }
}

#[test]
fn geodesics_match_floyd_warshall() {
    let m = fixtures::mannequin();
    let fw = floyd_warshall(m.mesh());
    let sources: Vec<u32> = (0..m.mesh().vertex_count() as u32).step_by(7).collect();
    let oracle = geodesic_distances(m.mesh(), &sources).unwrap();
    for &s in &sources {
        let d = oracle.from_source(s).unwrap();
        for (t, &dt) in d.iter().enumerate() {
            assert!(
                (dt - fw[s as usize][t]).abs() <= 1e-9,
                "{s} -> {t}: {dt} vs {}",
                fw[s as usize][t]
            );
        }
    }
}

#[test]
fn gps_matches_scalar_recomputation() {
    let m = fixtures::mannequin();
    let config = EngineConfig::default();
    let fw = floyd_warshall(m.mesh());
    let suite = fixtures::swapped_limb_suite(&m, 6);
    for inst in &suite {
        let uv = pipeline::run(
            inst,
            m.mesh(),
            &m.embeddings,
            &config,
            &RunOptions::new(Mode::Baseline, &config),
        )
        .unwrap()
        .uvmap;
        let points: &[GtPoint] = inst.gt_points.as_deref().unwrap();
        let oracle = pipeline::oracle_for(m.mesh(), std::slice::from_ref(inst)).unwrap();
        let got = gps(points, &uv, &oracle, config.kappa).unwrap();

        let k = config.kappa;
        let mut total = 0.0;
        let mut exact = 0;
        for p in points {
            let (x, y) = (p.x as usize, p.y as usize);
            let pred = uv.vertex_of[y * uv.width + x];
            if pred == u32::MAX {
                continue;
            }
            let g = fw[p.vertex as usize][pred as usize];
            if g == 0.0 {
                exact += 1;
            }
            total += (-g * g / (2.0 * k * k)).exp();
        }
        let expect = total / points.len() as f64;
        assert!(
            (got.score - expect).abs() <= 1e-9,
            "{}: {} vs {expect}",
            inst.id,
            got.score
        );
        // The fixture should mix hits and misses for this check to mean anything.
        assert!(
            exact > 0 && exact < points.len(),
            "{}: {exact} of {}",
            inst.id,
            points.len()
        );
    }
}

#[test]
fn gps_closed_forms() {
    let k = 0.255;
    assert_eq!(point_similarity(0.0, k), 1.0);
    let g = k * (2.0 * 2f64.ln()).sqrt();
    assert!((point_similarity(g, k) - 0.5).abs() <= 1e-9);
}

/// COCO-style AP written out threshold by threshold.
fn ap_reference(gps: &[f64], scores: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..gps.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut total = 0.0;
    for step in 0..10 {
        let t = (50 + 5 * step) as f64 / 100.0;
        let hits: Vec<bool> = idx.iter().map(|&i| gps[i] >= t).collect();
        let n = gps.len() as f64;
        let mut pr = Vec::new();
        let mut tp = 0.0;
        for (r, &h) in hits.iter().enumerate() {
            if h {
                tp += 1.0;
            }
            pr.push((tp / n, tp / (r as f64 + 1.0)));
        }
        let mut sum = 0.0;
        for k in 0..=100 {
            let r = k as f64 / 100.0;
            // Best precision at any rank reaching this recall.
            let p = pr
                .iter()
                .filter(|(rc, _)| *rc >= r)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max);
            sum += p;
        }
        total += sum / 101.0;
    }
    100.0 * total / 10.0
}

#[test]
fn ap_hand_enumerated() {
    // Thresholds passed: 9 by 0.93, 5 by 0.72, 1 by 0.51. Ranked in that
    // order the precision ladders give 1, 4 x 67/101, 4 x 34/101 and 0,
    // which sum to exactly 5.
    let r = average_precision_scores(&[(0.93, 0.9), (0.72, 0.8), (0.51, 0.7)]);
    assert!((r.ap - 50.0).abs() < 1e-12, "{}", r.ap);
    let cells: usize = [0.93, 0.72, 0.51]
        .iter()
        .map(|g| r.thresholds.iter().filter(|&&t| *g >= t).count())
        .sum();
    assert_eq!(cells, 15);
    assert_eq!(average_precision_scores(&[(1.0, 0.5), (1.0, 0.2)]).ap, 100.0);
    assert_eq!(average_precision_scores(&[(0.0, 0.5), (0.0, 0.2)]).ap, 0.0);
}

#[test]
fn ap_matches_reference_on_random_sets() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.random_range(1..12);
        let gps: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let pairs: Vec<(f64, f64)> = gps.iter().copied().zip(scores.iter().copied()).collect();
        let got = average_precision_scores(&pairs);
        assert!((got.ap - ap_reference(&gps, &scores)).abs() < 1e-9);
        assert!(got.precision.windows(2).all(|w| w[0] >= w[1]));
    }
}
