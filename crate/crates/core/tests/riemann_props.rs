use framelab::dsl::{BuiltinFamily, MetricSpec};
use framelab::riemann::{christoffel, exp_map, ricci, Geodesic, Geometry};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn families() -> Vec<(BuiltinFamily, f64)> {
    vec![
        (BuiltinFamily::FlatEuclidean { n: 3 }, 0.01),
        (BuiltinFamily::FlatTorus { length: 2.0 }, 0.01),
        (BuiltinFamily::RoundSphere { radius: 1.3 }, 0.05),
        (BuiltinFamily::SmoothedCone { a: 2f64.sqrt() - 1.0, eps: 0.2 }, 0.01),
        (BuiltinFamily::EguchiHanson { a_eh: 1.0, margin: 0.05 }, 0.05),
    ]
}

fn cap_domain(m: &MetricSpec) -> MetricSpec {
    // keep the cone near its cap so the smoothed region is exercised
    let mut d = m.domain().to_vec();
    if m.coords()[0] == "r" && m.dim() == 2 {
        d[0].hi = 1.0;
    }
    m.with_domain(d).unwrap()
}

#[test]
fn algebraic_and_bianchi_identities_on_builtins() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (fam, frac) in families() {
        let m = cap_domain(&fam.instantiate().unwrap());
        let n = m.dim();
        for _ in 0..20 {
            let p = m.random_point(&mut rng, frac);
            let geo = Geometry::at(&m, &p, 3).unwrap();
            // metric compatibility and symmetry of Γ
            let jet = m.jet(&p, 1).unwrap();
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        assert_eq!(geo.gamma(k, i, j), geo.gamma(k, j, i));
                        let mut c = jet.dg(k, i, j);
                        for l in 0..n {
                            c -= geo.gamma(l, k, i) * geo.g[(l, j)] + geo.gamma(l, k, j) * geo.g[(i, l)];
                        }
                        assert!(c.abs() < 1e-9, "{} compatibility {c}", fam.id());
                    }
                }
            }
            // flat regions leave only roundoff, hence the absolute floor
            let scale = geo.curvature(&p).lower.max_abs();
            let tol = 1e-9 * scale + 1e-14;
            let gtol = 1e-8 * geo.gradient(&p).tensor.max_abs().max(scale) + 1e-13;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for l in 0..n {
                            let r = geo.riemann(i, j, k, l);
                            assert!((r + geo.riemann(j, i, k, l)).abs() <= tol, "{}", fam.id());
                            assert!((r + geo.riemann(i, j, l, k)).abs() <= tol, "{}", fam.id());
                            assert!((r - geo.riemann(k, l, i, j)).abs() <= tol, "{}", fam.id());
                            let b1 = r + geo.riemann(j, k, i, l) + geo.riemann(k, i, j, l);
                            assert!(b1.abs() <= tol, "{} first Bianchi {b1}", fam.id());
                            for mm in 0..n {
                                let b2 = geo.nabla_riemann(mm, i, j, k, l)
                                    + geo.nabla_riemann(i, j, mm, k, l)
                                    + geo.nabla_riemann(j, mm, i, k, l);
                                assert!(b2.abs() <= gtol, "{} second Bianchi {b2} at {p:?}", fam.id());
                            }
                        }
                    }
                }
            }
            let ric = geo.ricci();
            assert!((&ric - ric.transpose()).abs().max() <= 1e-10 * (1.0 + scale));
        }
    }
}

#[test]
fn eguchi_hanson_is_ricci_flat_but_curved() {
    let m = BuiltinFamily::EguchiHanson { a_eh: 1.0, margin: 0.05 }.instantiate().unwrap();
    for r in [1.5, 2.0, 5.0] {
        let p = [r, 1.1, 0.4, 2.0];
        let ric = ricci(&m, &p).unwrap();
        assert!(ric.abs().max() <= 1e-8, "r = {r}: {ric}");
    }
    let geo = Geometry::at(&m, &[1.5, 1.1, 0.4, 2.0], 2).unwrap();
    assert!(geo.curvature(&[]).lower.norm(&geo.g).unwrap() > 0.1);
}

#[test]
fn sphere_christoffel_against_finite_differences() {
    let m = BuiltinFamily::RoundSphere { radius: 1.0 }.instantiate().unwrap();
    let th: f64 = 0.9;
    let h = 1e-5;
    // Γ^θ_φφ = −½ ∂_θ g_φφ / g_θθ
    let gpp = |t: f64| m.eval_metric(&[t, 0.0])[(1, 1)];
    let fd = -0.5 * (gpp(th + h) - gpp(th - h)) / (2.0 * h);
    let c = christoffel(&m, &[th, 0.0]).unwrap();
    assert!((c.get(0, 1, 1) - fd).abs() < 1e-9);
}

#[test]
fn round_sphere_sectional_curvature_is_one() {
    let m = BuiltinFamily::RoundSphere { radius: 1.0 }.instantiate().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let p = m.random_point(&mut rng, 0.05);
        let geo = Geometry::at(&m, &p, 2).unwrap();
        let k = geo.riemann(0, 1, 1, 0) / geo.g.determinant();
        assert!((k - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn scaling_laws_under_rescaling() {
    let lambda: f64 = 2.5;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for fam in [
        BuiltinFamily::RoundSphere { radius: 1.0 },
        BuiltinFamily::SmoothedCone { a: 0.6, eps: 0.3 },
        BuiltinFamily::EguchiHanson { a_eh: 1.0, margin: 0.05 },
    ] {
        let base = fam.instantiate().unwrap();
        let big = BuiltinFamily::Rescaled { base: Box::new(fam.clone()), lambda }.instantiate().unwrap();
        for _ in 0..3 {
            let mut p = base.random_point(&mut rng, 0.05);
            if base.dim() == 2 && base.coords()[0] == "r" {
                p[0] = p[0].min(0.5);
            }
            let g0 = Geometry::at(&base, &p, 3).unwrap();
            let g1 = Geometry::at(&big, &p, 3).unwrap();
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
            let gm = g0.connection(&p).gamma.max_abs();
            for (a, b) in g0.connection(&p).gamma.data.iter().zip(&g1.connection(&p).gamma.data) {
                assert!((a - b).abs() <= 1e-9 * gm.max(1.0));
            }
            let r0 = g0.curvature(&p).lower;
            let r1 = g1.curvature(&p).lower;
            let rm = r0.max_abs();
            for (a, b) in r0.data.iter().zip(&r1.data) {
                assert!((b - lambda * lambda * a).abs() <= 1e-9 * lambda * lambda * rm);
            }
            assert!(rel(g1.sectional_sup() * lambda * lambda, g0.sectional_sup()) <= 1e-9);
            let n0 = g0.gradient(&p).tensor.norm(&g0.g).unwrap();
            let n1 = g1.gradient(&p).tensor.norm(&g1.g).unwrap();
            if n0 > 1e-9 {
                assert!(rel(n1 * lambda.powi(3), n0) <= 1e-9, "{} {n0} {n1}", fam.id());
            }
        }
    }
}

#[test]
fn geodesic_speed_is_conserved() {
    let m = BuiltinFamily::EguchiHanson { a_eh: 1.0, margin: 0.05 }.instantiate().unwrap();
    let p = [2.0, 1.2, 0.5, 0.5];
    let v = [0.3, 0.4, -0.2, 0.7];
    let speed = |x: &[f64], v: &[f64]| {
        let g = m.eval_metric(x);
        let v = nalgebra::DVector::from_column_slice(v);
        v.dot(&(&g * &v)).sqrt()
    };
    let s0 = speed(&p, &v);
    let mut worst: f64 = 0.0;
    let n = m.dim();
    Geodesic::new(&m)
        .flow_observed(&p, &v, 1.5, |_, y| worst = worst.max((speed(&y[..n], &y[n..]) - s0).abs()))
        .unwrap();
    assert!(worst <= 1e-8, "{worst}");
}

#[test]
fn flat_exp_is_straight_line() {
    let m = BuiltinFamily::FlatEuclidean { n: 2 }.instantiate().unwrap();
    let q = exp_map(&m, &[1.0, 2.0], &[0.5, -1.5], 2.0).unwrap();
    assert!((q[0] - 2.0).abs() < 1e-12 && (q[1] + 1.0).abs() < 1e-12);
}
