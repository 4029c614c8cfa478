use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::expr::Expr;
use super::metric::{Interval, MetricSpec};
use super::DslError;

/// Named metric families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum BuiltinFamily {
    FlatEuclidean { n: usize },
    FlatTorus { length: f64 },
    RoundSphere { radius: f64 },
    /// `dr^2 + f(r)^2 dphi^2` with `f(r) = a r` for `r >= 2 eps`.
    SmoothedCone { a: f64, eps: f64 },
    EguchiHanson { a_eh: f64, margin: f64 },
    Rescaled { base: Box<BuiltinFamily>, lambda: f64 },
}

fn v(name: &str) -> Expr {
    Expr::var(name)
}

fn c(x: f64) -> Expr {
    Expr::num(x)
}

/// Cap profile `f(r) = r (1 + (a - 1)(1 - (1 - u^2)^3))`, `u = r / (2 eps)`.
///
/// Odd in `r` with `f'(0) = 1`, and matches `a r` with its first two
/// derivatives at `u = 1`.
pub(crate) fn cap_profile(r: &Expr, a: &Expr, eps: &Expr) -> Expr {
    let u = r.clone() / (c(2.0) * eps.clone());
    let w = c(1.0) - (c(1.0) - u.powi(2)).powi(3);
    r.clone() * (c(1.0) + (a.clone() - c(1.0)) * w)
}

impl BuiltinFamily {
    pub fn id(&self) -> String {
        match self {
            BuiltinFamily::FlatEuclidean { .. } => "flat-euclidean".into(),
            BuiltinFamily::FlatTorus { .. } => "flat-torus".into(),
            BuiltinFamily::RoundSphere { .. } => "round-sphere".into(),
            BuiltinFamily::SmoothedCone { .. } => "smoothed-cone".into(),
            BuiltinFamily::EguchiHanson { .. } => "eguchi-hanson".into(),
            BuiltinFamily::Rescaled { base, .. } => format!("rescaled({})", base.id()),
        }
    }

    pub fn instantiate(&self) -> Result<MetricSpec, DslError> {
        match self {
            BuiltinFamily::FlatEuclidean { n } => {
                if *n == 0 {
                    return Err(DslError::OutOfRange("dimension must be positive".into()));
                }
                let names: Vec<String> = match n {
                    1 => vec!["x".into()],
                    2 => vec!["x".into(), "y".into()],
                    3 => vec!["x".into(), "y".into(), "z".into()],
                    _ => (1..=*n).map(|i| format!("x{i}")).collect(),
                };
                let comps = (0..*n).map(|i| (0..*n).map(|j| c(if i == j { 1.0 } else { 0.0 })).collect()).collect();
                MetricSpec::new(names, vec![], vec![Interval::unbounded(); *n], vec![None; *n], comps)
            }
            BuiltinFamily::FlatTorus { length } => {
                if !(*length > 0.0) {
                    return Err(DslError::OutOfRange(format!("torus side {length} must be positive")));
                }
                let comps = vec![vec![c(1.0), c(0.0)], vec![c(0.0), c(1.0)]];
                MetricSpec::new(
                    vec!["x".into(), "y".into()],
                    vec![],
                    vec![Interval::new(0.0, *length); 2],
                    vec![Some(*length); 2],
                    comps,
                )
            }
            BuiltinFamily::RoundSphere { radius } => {
                if !(*radius > 0.0) {
                    return Err(DslError::OutOfRange(format!("radius {radius} must be positive")));
                }
                let r2 = v("R").powi(2);
                let comps = vec![vec![r2.clone(), c(0.0)], vec![c(0.0), r2 * v("th").sin().powi(2)]];
                MetricSpec::new(
                    vec!["th".into(), "ph".into()],
                    vec![("R".into(), *radius)],
                    vec![Interval::new(0.0, PI), Interval::new(0.0, 2.0 * PI)],
                    vec![None, Some(2.0 * PI)],
                    comps,
                )
            }
            BuiltinFamily::SmoothedCone { a, eps } => {
                if !(*a > 0.0 && *a <= 1.0) {
                    return Err(DslError::OutOfRange(format!("cone factor a = {a} must lie in (0, 1]")));
                }
                if !(*eps > 0.0) {
                    return Err(DslError::OutOfRange(format!("cap scale {eps} must be positive")));
                }
                let (r, av, ev) = (v("r"), v("a"), v("eps"));
                let gpp = Expr::piecewise(
                    &(r.clone() - c(2.0) * ev.clone()),
                    &cap_profile(&r, &av, &ev).powi(2),
                    &(av * r).powi(2),
                );
                let comps = vec![vec![c(1.0), c(0.0)], vec![c(0.0), gpp]];
                MetricSpec::new(
                    vec!["r".into(), "ph".into()],
                    vec![("a".into(), *a), ("eps".into(), *eps)],
                    vec![Interval::new(0.0, f64::INFINITY), Interval::new(0.0, 2.0 * PI)],
                    vec![None, Some(2.0 * PI)],
                    comps,
                )
            }
            BuiltinFamily::EguchiHanson { a_eh, margin } => {
                if !(*a_eh > 0.0) {
                    return Err(DslError::OutOfRange(format!("a_EH = {a_eh} must be positive")));
                }
                if !(*margin > 0.0) {
                    return Err(DslError::OutOfRange(format!("bolt margin {margin} must be positive")));
                }
                let (r, th) = (v("r"), v("th"));
                let f = c(1.0) - (v("aeh") / r.clone()).powi(4);
                let q = r.powi(2) / c(4.0);
                let (s, co) = (th.sin(), th.cos());
                let z = c(0.0);
                // (dr^2)/F + q (dth^2 + sin^2 th dph^2) + q F (dps + cos th dph)^2
                let g_pp = q.clone() * (s.powi(2) + f.clone() * co.powi(2));
                let g_ps = q.clone() * f.clone() * co;
                let comps = vec![
                    vec![c(1.0) / f.clone(), z.clone(), z.clone(), z.clone()],
                    vec![z.clone(), q.clone(), z.clone(), z.clone()],
                    vec![z.clone(), z.clone(), g_pp, g_ps.clone()],
                    vec![z.clone(), z, g_ps, q * f],
                ];
                MetricSpec::new(
                    vec!["r".into(), "th".into(), "ph".into(), "ps".into()],
                    vec![("aeh".into(), *a_eh)],
                    vec![
                        Interval::new(a_eh * (1.0 + margin), f64::INFINITY),
                        Interval::new(0.0, PI),
                        Interval::new(0.0, 2.0 * PI),
                        Interval::new(0.0, 2.0 * PI),
                    ],
                    vec![None, None, Some(2.0 * PI), Some(2.0 * PI)],
                    comps,
                )
            }
            BuiltinFamily::Rescaled { base, lambda } => base.instantiate()?.rescaled(*lambda),
        }
    }

    /// Parses `name[:key=value,...]`, e.g. `smoothed-cone:a=0.7,eps=0.1` or
    /// `eguchi-hanson:a=1,scale=0.25`. A `scale` key wraps the family in
    /// [`BuiltinFamily::Rescaled`].
    pub fn from_id(spec: &str) -> Result<Self, DslError> {
        let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let mut kv = std::collections::BTreeMap::new();
        for item in rest.split(',').filter(|s| !s.trim().is_empty()) {
            let (k, val) = item
                .split_once('=')
                .ok_or_else(|| DslError::OutOfRange(format!("expected key=value, got `{item}`")))?;
            let x: f64 = val
                .trim()
                .parse()
                .map_err(|_| DslError::OutOfRange(format!("`{val}` is not a number")))?;
            kv.insert(k.trim().to_string(), x);
        }
        let get = |k: &str, d: f64| kv.get(k).copied().unwrap_or(d);
        let fam = match name.trim() {
            "flat-euclidean" => BuiltinFamily::FlatEuclidean { n: get("n", 2.0) as usize },
            "flat-torus" => BuiltinFamily::FlatTorus { length: get("length", 1.0) },
            "round-sphere" => BuiltinFamily::RoundSphere { radius: get("radius", 1.0) },
            "smoothed-cone" => BuiltinFamily::SmoothedCone { a: get("a", 0.5), eps: get("eps", 0.1) },
            "eguchi-hanson" => BuiltinFamily::EguchiHanson { a_eh: get("a", 1.0), margin: get("margin", 0.05) },
            other => return Err(DslError::OutOfRange(format!("unknown builtin family `{other}`"))),
        };
        let allowed: &[&str] = match name.trim() {
            "flat-euclidean" => &["n", "scale"],
            "flat-torus" => &["length", "scale"],
            "round-sphere" => &["radius", "scale"],
            "smoothed-cone" => &["a", "eps", "scale"],
            _ => &["a", "margin", "scale"],
        };
        if let Some(k) = kv.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(DslError::OutOfRange(format!("unknown parameter `{k}` for {name}")));
        }
        Ok(match kv.get("scale") {
            Some(&lambda) => BuiltinFamily::Rescaled { base: Box::new(fam), lambda },
            None => fam,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_families() -> Vec<BuiltinFamily> {
        vec![
            BuiltinFamily::FlatEuclidean { n: 2 },
            BuiltinFamily::FlatEuclidean { n: 3 },
            BuiltinFamily::FlatTorus { length: 1.0 },
            BuiltinFamily::RoundSphere { radius: 1.0 },
            BuiltinFamily::SmoothedCone { a: 2f64.sqrt() - 1.0, eps: 0.1 },
            BuiltinFamily::SmoothedCone { a: 1.0, eps: 0.1 },
            BuiltinFamily::EguchiHanson { a_eh: 1.0, margin: 0.05 },
            BuiltinFamily::Rescaled { base: Box::new(BuiltinFamily::RoundSphere { radius: 1.0 }), lambda: 2.5 },
        ]
    }

    #[test]
    fn every_family_is_positive_on_a_full_grid() {
        for f in all_families() {
            let m = f.instantiate().unwrap();
            m.check_spd_grid(10).unwrap_or_else(|e| panic!("{}: {e}", f.id()));
        }
    }

    #[test]
    fn flat_cone_is_polar_plane() {
        let m = BuiltinFamily::SmoothedCone { a: 1.0, eps: 0.1 }.instantiate().unwrap();
        let g = m.eval_metric(&[1.0, 0.3]);
        assert_eq!(g[(0, 0)], 1.0);
        assert_eq!(g[(1, 1)], 1.0);
        let g = m.eval_metric(&[0.05, 0.3]);
        assert!((g[(1, 1)] - 0.05f64.powi(2)).abs() < 1e-17);
    }

    #[test]
    fn cap_is_c2_matched() {
        let a = 0.6;
        let eps = 0.1;
        let m = BuiltinFamily::SmoothedCone { a, eps }.instantiate().unwrap();
        let r0 = 2.0 * eps;
        let below = m.jet(&[r0 - 1e-12, 0.0], 2).unwrap();
        let above = m.jet(&[r0 + 1e-12, 0.0], 2).unwrap();
        assert!((below.g()[3] - above.g()[3]).abs() < 1e-12);
        assert!((below.dg(0, 1, 1) - above.dg(0, 1, 1)).abs() < 1e-10);
        assert!((below.d2g(0, 0, 1, 1) - above.d2g(0, 0, 1, 1)).abs() < 1e-8);
    }

    #[test]
    fn out_of_range_parameters() {
        assert!(BuiltinFamily::SmoothedCone { a: 1.5, eps: 0.1 }.instantiate().is_err());
        assert!(BuiltinFamily::SmoothedCone { a: 0.5, eps: 0.0 }.instantiate().is_err());
        assert!(BuiltinFamily::EguchiHanson { a_eh: -1.0, margin: 0.05 }.instantiate().is_err());
        assert!(BuiltinFamily::Rescaled { base: Box::new(BuiltinFamily::FlatTorus { length: 1.0 }), lambda: 0.0 }
            .instantiate()
            .is_err());
    }

    #[test]
    fn ids_parse() {
        assert_eq!(
            BuiltinFamily::from_id("smoothed-cone:a=0.7,eps=0.2").unwrap(),
            BuiltinFamily::SmoothedCone { a: 0.7, eps: 0.2 }
        );
        assert!(matches!(
            BuiltinFamily::from_id("eguchi-hanson:scale=0.25").unwrap(),
            BuiltinFamily::Rescaled { lambda, .. } if lambda == 0.25
        ));
        assert!(BuiltinFamily::from_id("klein-bottle").is_err());
        assert!(BuiltinFamily::from_id("round-sphere:eps=1").is_err());
    }
}
