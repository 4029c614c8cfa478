use std::f64::consts::PI;

use framelab::dsl::{BuiltinFamily, Interval, MetricSpec};
use framelab::gh::*;
use nalgebra::DMatrix;

fn flat() -> MetricSpec {
    BuiltinFamily::FlatEuclidean { n: 2 }.instantiate().unwrap()
}

fn annulus(lo: f64, hi: f64) -> Vec<Interval> {
    vec![Interval::new(lo, hi), Interval::new(0.0, 2.0 * PI)]
}

#[test]
fn flat_square_graph_distances_are_nearly_euclidean() {
    let region = vec![Interval::new(0.0, 1.0); 2];
    let s = sample_space(&flat(), &region, 100, SampleOptions::default()).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        for j in 0..100 {
            let (p, q) = (&s.points[i], &s.points[j]);
            let e = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            if e > 0.2 {
                worst = worst.max((s.space.dist[(i, j)] - e) / e);
            }
            assert!(s.space.dist[(i, j)] >= e - 1e-12);
        }
    }
    assert!(worst <= 0.03, "relative excess {worst}");
    assert!(s.space.triangle_violation() <= 1e-9);
}

#[test]
fn rescaling_the_metric_scales_graph_distances() {
    let m = BuiltinFamily::SmoothedCone { a: 0.6, eps: 0.1 }.instantiate().unwrap();
    let s = sample_space(&m, &annulus(0.3, 1.0), 80, SampleOptions::default()).unwrap();
    for lam in [0.5, 3.0] {
        let r = graph_space(&m.rescaled(lam).unwrap(), &s.points, &s.edges).unwrap();
        let err = (&r.dist - &s.space.dist * lam).amax() / (lam * s.space.diameter());
        assert!(err <= 1e-12, "{err}");
    }
}

#[test]
fn cone_annulus_antipodes_match_the_unrolled_cone() {
    let a = 0.7;
    let m = exact_cone(a).unwrap();
    let s = sample_space(&m, &annulus(0.3, 1.0), 200, SampleOptions::default()).unwrap();
    // outer-boundary pairs closest to antipodal
    let outer: Vec<usize> = (0..s.points.len()).filter(|&i| s.points[i][0] > 0.93).collect();
    let mut checked = 0;
    for &i in &outer {
        for &j in &outer {
            let dphi = (s.points[i][1] - s.points[j][1]).rem_euclid(2.0 * PI);
            if (dphi - PI).abs() < 0.3 {
                let exact = cone_distance(a, &s.points[i], &s.points[j]);
                assert!((s.space.dist[(i, j)] - exact).abs() <= 0.03 * exact, "{} vs {exact}", s.space.dist[(i, j)]);
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn smoothed_cone_matches_exact_cone_outside_the_cap() {
    let a = 2f64.sqrt() - 1.0;
    let exact = exact_cone(a).unwrap();
    let smooth = BuiltinFamily::SmoothedCone { a, eps: 0.1 }.instantiate().unwrap();
    let s = sample_space(&exact, &annulus(0.3, 1.0), 120, SampleOptions::default()).unwrap();
    let t = graph_space(&smooth, &s.points, &s.edges).unwrap();
    let corr = Correspondence::identity(s.points.len());
    let up = gh_upper(&t, &s.space, &corr).unwrap();
    assert!(up <= 1e-9);
    assert!(gh_lower(&t, &s.space) <= up);
    // a genuinely different pair keeps the ordering of the bounds
    let other = graph_space(&exact_cone(0.9).unwrap(), &s.points, &s.edges).unwrap();
    let (u2, l2) = (gh_upper(&other, &s.space, &corr).unwrap(), gh_lower(&other, &s.space));
    assert!(l2 <= u2 && u2 > 0.01);
}

#[test]
fn frame_bundle_sample_of_flat_torus_is_a_product() {
    let torus = BuiltinFamily::FlatTorus { length: 1.0 }.instantiate().unwrap();
    let region = vec![Interval::new(0.0, 1.0); 2];
    let base = sample_space(&torus, &region, 20, SampleOptions::default()).unwrap();
    let fiber = o2_grid(8, true);
    let fm = sample_frame_bundle(&torus, &torus, &base, &fiber, 2).unwrap();
    assert!(fm.submersion_violation <= 1e-12);
    for a in 0..fm.index.len() {
        for b in 0..fm.index.len() {
            let ((i, k), (j, l)) = (fm.index[a], fm.index[b]);
            if k == l {
                assert!((fm.space.dist[(a, b)] - base.space.dist[(i, j)]).abs() <= 1e-6);
            }
            if (k < 8) != (l < 8) {
                assert!(fm.space.dist[(a, b)].is_infinite());
            }
        }
    }
}

#[test]
fn cone_fibers_shrink_towards_the_vertex() {
    let a = 0.5;
    let m = BuiltinFamily::SmoothedCone { a, eps: 0.05 }.instantiate().unwrap();
    let base = sample_space(&m, &annulus(0.1, 1.0), 40, SampleOptions::default()).unwrap();
    let fiber = o2_grid(12, false);
    let fm = sample_frame_bundle(&m, &m, &base, &fiber, 2).unwrap();
    assert!(fm.submersion_violation <= 1e-12);
    let fiber_diam = |i: usize| {
        let idx: Vec<usize> = (0..fm.index.len()).filter(|&x| fm.index[x].0 == i).collect();
        idx.iter().flat_map(|&x| idx.iter().map(move |&y| (x, y))).map(|(x, y)| fm.space.dist[(x, y)]).fold(0.0, f64::max)
    };
    let inner = (0..base.points.len()).min_by(|&x, &y| base.points[x][0].total_cmp(&base.points[y][0])).unwrap();
    let outer = (0..base.points.len()).max_by(|&x, &y| base.points[x][0].total_cmp(&base.points[y][0])).unwrap();
    assert!(fiber_diam(inner) < fiber_diam(outer), "{} {}", fiber_diam(inner), fiber_diam(outer));
}

#[test]
fn irrational_cone_fibers_collapse() {
    let rep = fiber_collapse_experiment(2f64.sqrt() - 1.0, &[0.1, 0.05, 0.02, 0.01], CollapseOptions::default()).unwrap();
    assert!(rep.strictly_decreasing, "{:?}", rep.rows);
    let (first, last) = (rep.rows[0].d_max, rep.rows[3].d_max);
    assert!(last <= 0.5 * first, "{first} {last}");
    assert!(rep.rows.iter().all(|r| r.reflection.is_infinite()));
    assert!(rep.rational_order.is_none());
}

#[test]
fn rational_cone_fibers_stop_at_the_cyclic_quotient() {
    let rep = fiber_collapse_experiment(1.0 / 3.0, &[0.1, 0.05, 0.02, 0.01], CollapseOptions::default()).unwrap();
    assert_eq!(rep.rational_order, Some(3));
    let target = rep.quotient_diameter.unwrap();
    assert!((rep.rows[3].d_max - target).abs() <= 1e-2);
    let flat = fiber_collapse_experiment(1.0, &[0.1, 0.01], CollapseOptions::default()).unwrap();
    for r in &flat.rows {
        assert!((r.d_max - 2f64.sqrt() * PI).abs() < 1e-9);
    }
}

#[test]
fn quotient_diameters_are_strictly_ordered() {
    let q = quotient_gap(framelab::lie::Chirality::SelfDual, 200, 3);
    assert_eq!(q.full, 0.0);
    assert!(q.su2 > 0.0 && q.gap > 0.0, "{q:?}");
    let _ = DMatrix::<f64>::identity(1, 1);
}
