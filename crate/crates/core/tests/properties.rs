use proptest::prelude::*;

use pccse_core::fixtures;
use pccse_core::geometry::RegionPlan;
use pccse_core::io::Rle;
use pccse_core::model::{BodyPart, PartSet, Point2};
use pccse_core::quality::FlagCode;
use pccse_core::{
    assign_constrained, assign_constrained_blocked, audit_instance, build_proximal_regions, build_removal_list,
    estimate_scale, gps, point_segment_distance, quadrilateral_facing, AuditThresholds, Facing, SkeletonKind,
};

fn point() -> impl Strategy<Value = Point2> {
    (-100.0..100.0f64, -100.0..100.0f64).prop_map(|(x, y)| Point2::new(x, y))
}

fn kind() -> impl Strategy<Value = SkeletonKind> {
    prop_oneof![Just(SkeletonKind::Coco17), Just(SkeletonKind::WholeBody133)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn facing_flips_under_reflection(a in point(), b in point(), c in point(), d in point()) {
        let f = quadrilateral_facing(Some(a), Some(b), Some(c), Some(d));
        let r = |p: Point2| Point2::new(-p.x, p.y);
        let g = quadrilateral_facing(Some(r(a)), Some(r(b)), Some(r(c)), Some(r(d)));
        let expect = match f {
            Facing::Frontal => Facing::Dorsal,
            Facing::Dorsal => Facing::Frontal,
            Facing::Indeterminate => Facing::Indeterminate,
        };
        prop_assert_eq!(g, expect);
    }

    #[test]
    fn segment_distance_bounds(p in point(), a in point(), b in point()) {
        let d = point_segment_distance(p, a, b);
        prop_assert!(d >= 0.0);
        prop_assert!(d <= p.distance(a) + 1e-9 && d <= p.distance(b) + 1e-9);
        prop_assert!((d - point_segment_distance(p, b, a)).abs() < 1e-9);
    }

    #[test]
    fn label_sets_hold_the_head(seed in any::<u64>(), k in kind(), presence in 0.0..=1.0f64,
                                radius in 0.0..20.0f64, w in 1usize..40, h in 1usize..40) {
        let skel = fixtures::random_skeleton(seed, k, w, h, presence);
        let mask = fixtures::random_mask(seed ^ 0x55, w, h, 0.6);
        let labels = build_proximal_regions(&skel, radius, &mask, 2.0);
        for y in 0..h {
            for x in 0..w {
                let l = labels.get(x, y);
                if mask.get(x, y) {
                    prop_assert!(!l.is_empty());
                    prop_assert!(l.contains(BodyPart::Head.id()));
                    prop_assert_eq!(l.without(PartSet::HUMAN), PartSet::EMPTY);
                } else {
                    prop_assert!(l.is_empty());
                }
            }
        }
    }

    #[test]
    fn regions_grow_with_radius(seed in any::<u64>(), r in 0.5..10.0f64, extra in 0.0..10.0f64) {
        let skel = fixtures::random_skeleton(seed, SkeletonKind::Coco17, 30, 30, 0.9);
        let small = RegionPlan::new(&skel, r, 2.0);
        let large = RegionPlan::new(&skel, r + extra, 2.0);
        for y in 0..30 {
            for x in 0..30 {
                let p = Point2::new(x as f64, y as f64);
                let (cs, cl) = (small.covered_at(p), large.covered_at(p));
                prop_assert_eq!(cs.intersection(cl), cs);
            }
        }
    }

    #[test]
    fn scale_is_rigid_invariant(seed in any::<u64>(), angle in -3.2..3.2f64,
                                tx in -500.0..500.0f64, ty in -500.0..500.0f64, s in 0.1..10.0f64) {
        let skel = fixtures::random_skeleton(seed, SkeletonKind::Coco17, 200, 200, 0.8);
        let Ok(base) = estimate_scale(&skel) else { return Ok(()) };
        let (sin, cos) = angle.sin_cos();
        let moved = skel.map_points(|p| Point2::new(cos * p.x - sin * p.y + tx, sin * p.x + cos * p.y + ty));
        let rigid = estimate_scale(&moved).unwrap().pixels_per_unit;
        prop_assert!((rigid - base.pixels_per_unit).abs() <= 1e-9 * base.pixels_per_unit.max(1.0));
        let scaled = estimate_scale(&skel.map_points(|p| p.scale(s))).unwrap().pixels_per_unit;
        prop_assert!((scaled - s * base.pixels_per_unit).abs() <= 1e-9 * scaled.max(1.0));
    }

    #[test]
    fn blocked_equals_flat(seed in any::<u64>()) {
        let case = fixtures::random_assignment_case(seed);
        let a = assign_constrained(&case.instance, &case.mesh, &case.embeddings, &case.labels).unwrap();
        let b = assign_constrained_blocked(&case.instance, &case.mesh, &case.embeddings, &case.labels).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rle_round_trip(seed in any::<u64>(), w in 1usize..30, h in 1usize..30, density in 0.0..=1.0f64) {
        let m = fixtures::random_mask(seed, w, h, density);
        prop_assert_eq!(Rle::encode(&m).decode("mem").unwrap(), m);
    }
}

#[test]
fn gps_ignores_point_order_and_rewards_closer_predictions() {
    let m = fixtures::mannequin();
    let config = pccse_core::EngineConfig::default();
    let inst = fixtures::swapped_limb_suite(&m, 1).remove(0);
    let out = pccse_core::pipeline::run(
        &inst,
        m.mesh(),
        &m.embeddings,
        &config,
        &pccse_core::pipeline::RunOptions::new(pccse_core::pipeline::Mode::Baseline, &config),
    )
    .unwrap();
    let mut points = inst.gt_points.clone().unwrap();
    let oracle = pccse_core::pipeline::oracle_for(m.mesh(), std::slice::from_ref(&inst)).unwrap();
    let a = gps(&points, &out.uvmap, &oracle, config.kappa).unwrap();
    points.reverse();
    let b = gps(&points, &out.uvmap, &oracle, config.kappa).unwrap();
    assert!((a.score - b.score).abs() < 1e-12);

    // Moving each wrong prediction onto the ground truth never lowers the score.
    let mut uv = out.uvmap.clone();
    let mut last = b.score;
    for p in &points {
        let i = p.y as usize * uv.width + p.x as usize;
        if uv.vertex_of[i] != u32::MAX && uv.vertex_of[i] != p.vertex {
            uv.vertex_of[i] = p.vertex;
            let s = gps(&points, &uv, &oracle, config.kappa).unwrap().score;
            assert!(s >= last);
            last = s;
        }
    }
    assert!(last > b.score);
}

#[test]
fn removal_is_idempotent() {
    let m = fixtures::mannequin();
    let th = AuditThresholds::default();
    let mut set = fixtures::clean_suite(&m, 6);
    let swapped: Vec<_> = set
        .iter()
        .map(|i| fixtures::swap_annotation_sides(i, m.mesh(), m.mirror_of()))
        .collect();
    set.extend(swapped);
    let reports: Vec<_> = set.iter().map(|i| audit_instance(i, m.mesh(), &th).unwrap()).collect();
    let list = build_removal_list(&reports);
    assert!(!list.is_empty());
    for inst in &set {
        let once = list.apply(inst, m.mesh());
        let twice = list.apply(&once, m.mesh());
        assert_eq!(once, twice);
    }
    // Auditing the cleaned set leaves nothing further to remove.
    let cleaned: Vec<_> = set.iter().map(|i| list.apply(i, m.mesh())).collect();
    let again: Vec<_> = cleaned
        .iter()
        .map(|i| audit_instance(i, m.mesh(), &th).unwrap())
        .collect();
    let second = build_removal_list(&again);
    assert!(second.is_empty(), "{:?}", second.entries);
}

#[test]
fn audit_flags_mirror_with_the_instance() {
    let m = fixtures::mannequin();
    let th = AuditThresholds::default();
    for inst in fixtures::clean_suite(&m, 4) {
        let swapped = fixtures::swap_annotation_sides(&inst, m.mesh(), m.mirror_of());
        for i in [inst, swapped] {
            let a = audit_instance(&i, m.mesh(), &th).unwrap();
            let b = audit_instance(&fixtures::mirror_instance(&i, m.mirror_of()), m.mesh(), &th).unwrap();
            let lat = |r: &pccse_core::ConsistencyReport, mirror: bool| {
                let mut v: Vec<BodyPart> = r
                    .parts
                    .iter()
                    .filter(|p| p.flags.contains(&FlagCode::Laterality))
                    .map(|p| if mirror { p.part.mirror() } else { p.part })
                    .collect();
                v.sort_by_key(|p| p.id());
                v
            };
            assert_eq!(lat(&a, false), lat(&b, true), "{}", i.id);
        }
    }
}
