use std::f64::consts::PI;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use super::output::{Check, Outcome, Table};
use super::{CliError, Command, Common, Experiment};
use crate::dsl::{parse_metric, BuiltinFamily, Interval, MetricSpec};
use crate::frame::{canonical_lifting_metric, FramePoint, LiftedMetricChart};
use crate::gh::{
    eguchi_hanson_experiment, fiber_collapse_experiment, gh_lower, gh_upper, graph_space, sample_space, CollapseOptions,
    Correspondence, EguchiHansonOptions, SampleOptions,
};
use crate::holonomy::{
    fiber_distance, holonomy_samples, read_samples, rotation_angle, write_samples, HolonomySample, LoopFamily, SampleBudget,
    Transporter,
};
use crate::lie::{self, classify_subgroup, group_distance, ClassifyOptions, SubgroupClass};
use crate::oneill::{ricci_bound_report, ONeillContext};
use crate::riemann::Geometry;

type Res<T> = Result<T, CliError>;

fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// `builtin:<id>` or a path to a `.gmet` file.
pub fn load_metric(src: &str) -> Res<MetricSpec> {
    if let Some(id) = src.strip_prefix("builtin:") {
        return Ok(BuiltinFamily::from_id(id)?.instantiate()?);
    }
    let text = fs::read_to_string(src).map_err(|e| config(format!("{src}: {e}")))?;
    Ok(parse_metric(&text)?)
}

/// A number, optionally written as a multiple of `pi` (`pi`, `2pi`, `-0.5pi`).
fn number(s: &str) -> Res<f64> {
    let t = s.trim();
    let bad = || config(format!("`{t}` is not a number"));
    if let Some(k) = t.strip_suffix("pi") {
        let k = k.trim().trim_end_matches('*');
        let f = match k {
            "" | "+" => 1.0,
            "-" => -1.0,
            _ => k.parse::<f64>().map_err(|_| bad())?,
        };
        return Ok(f * PI);
    }
    t.parse().map_err(|_| bad())
}

fn list(s: &str) -> Res<Vec<f64>> {
    s.split(',').filter(|x| !x.trim().is_empty()).map(number).collect()
}

/// `lo:hi,lo:hi,...`.
fn region(s: &str) -> Res<Vec<Interval>> {
    s.split(',')
        .map(|part| {
            let (lo, hi) = part.split_once(':').ok_or_else(|| config(format!("region entry `{part}` is not lo:hi")))?;
            let (lo, hi) = (number(lo)?, number(hi)?);
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(config(format!("region entry `{part}` is not a bounded interval")));
            }
            Ok(Interval::new(lo, hi))
        })
        .collect()
}

fn point(s: &str, dims: &[usize]) -> Res<Vec<f64>> {
    let p = list(s)?;
    if !dims.contains(&p.len()) {
        return Err(config(format!("expected a point with {dims:?} coordinates, got {}", p.len())));
    }
    Ok(p)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Sampling box: the given region, or the metric domain pulled in by a
/// tenth of its width.
fn sample_box(m: &MetricSpec, reg: Option<&str>) -> Res<Vec<Interval>> {
    match reg {
        Some(r) => {
            let b = region(r)?;
            if b.len() != m.dim() {
                return Err(config(format!("region has {} intervals for a {}-dimensional metric", b.len(), m.dim())));
            }
            Ok(b)
        }
        None => Ok(m.domain().iter().map(|iv| iv.interior(0.1)).collect()),
    }
}

fn random_in(b: &[Interval], rng: &mut ChaCha8Rng) -> Vec<f64> {
    b.iter().map(|iv| if iv.lo < iv.hi { rng.gen_range(iv.lo..iv.hi) } else { iv.lo }).collect()
}

struct Metrics {
    list: Vec<(String, String)>,
}

impl Metrics {
    fn new() -> Self {
        Metrics { list: Vec::new() }
    }

    fn load(&mut self, src: &str) -> Res<MetricSpec> {
        let m = load_metric(src)?;
        self.list.push((src.to_string(), m.to_gmet()));
        Ok(m)
    }
}

fn loop_family(spec: &str, base: &[f64], seed: u64) -> Res<LoopFamily> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut kv = std::collections::BTreeMap::new();
    for item in rest.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = item.split_once('=').ok_or_else(|| config(format!("expected key=value, got `{item}`")))?;
        kv.insert(k.trim().to_string(), number(v)?);
    }
    let get = |k: &str, d: f64| kv.get(k).copied().unwrap_or(d);
    let index = |k: &str, d: usize| -> Res<usize> {
        let v = get(k, d as f64);
        if v < 0.0 || v.fract() != 0.0 || v as usize >= base.len() {
            return Err(config(format!("`{k}` must be a coordinate index below {}", base.len())));
        }
        Ok(v as usize)
    };
    match kind.trim() {
        "lasso" => {
            let radial = index("radial", 0)?;
            Ok(LoopFamily::Lassos {
                radial,
                angular: index("angular", 1)?,
                levels: vec![get("level", base[radial])],
                sweep: get("sweep", 2.0 * PI),
            })
        }
        "triangles" => Ok(LoopFamily::Triangles {
            count: get("count", 30.0).max(1.0) as usize,
            size: get("size", 0.3),
            seed,
        }),
        _ => {
            let text = fs::read_to_string(spec).map_err(|e| config(format!("loop family `{spec}`: {e}")))?;
            serde_json::from_str(&text).map_err(|e| config(format!("loop family `{spec}`: {e}")))
        }
    }
}

fn saved_samples(path: &Path) -> Res<Vec<HolonomySample>> {
    let f = fs::File::open(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
    read_samples(BufReader::new(f)).map_err(|e| config(format!("{}: {e}", path.display())))
}

fn samples_jsonl(samples: &[HolonomySample]) -> Res<Vec<u8>> {
    let mut buf = Vec::new();
    write_samples(&mut buf, samples)?;
    Ok(buf)
}

pub fn execute(cmd: &Command, common: &Common) -> Res<Outcome> {
    let seed = common.seed;
    let mut metrics = Metrics::new();
    let mut out = match cmd {
        Command::ParseCheck { metric } => {
            let m = metrics.load(metric)?;
            m.check_spd_grid(6)?;
            Outcome::new(
                "parse-check",
                json!({ "dim": m.dim(), "coords": m.coords(), "params": m.params(), "canonical": m.to_gmet() }),
            )?
        }
        Command::Curvature { metric, at } => {
            let m = metrics.load(metric)?;
            let p = point(at, &[m.dim()])?;
            curvature(&m, &p)?
        }
        Command::Lift { metric, metric2, at, region: reg, samples } => {
            let g = metrics.load(metric)?;
            let gp = match metric2 {
                Some(s) => metrics.load(s)?,
                None => g.clone(),
            };
            lift(&g, &gp, at.as_deref(), reg.as_deref(), *samples)?
        }
        Command::OneillCheck { metric, metric2, samples, region: reg, tol } => {
            let g = metrics.load(metric)?;
            let ge = match metric2 {
                Some(s) => metrics.load(s)?,
                None => g.clone(),
            };
            oneill_check(&g, &ge, *samples, reg.as_deref(), *tol, seed)?
        }
        Command::Holonomy { metric, metric2, at, loops, word_length, samples, resume } => {
            let m = metrics.load(metric)?;
            let lm = match metric2 {
                Some(s) => Some(metrics.load(s)?),
                None => None,
            };
            let p = point(at, &[m.dim()])?;
            let budget = SampleBudget { max_word: *word_length, max_samples: *samples };
            let set = match resume {
                Some(path) => saved_samples(path)?,
                None => {
                    let mut t = Transporter::new(&m);
                    if let Some(lm) = &lm {
                        t = t.with_length_metric(lm)?;
                    }
                    holonomy_samples(&t, &p, &loop_family(loops, &p, seed)?, budget)?
                }
            };
            holonomy_report(m.dim(), set)?
        }
        Command::FiberDist { metric, at, loops, word_length, samples, resume } => {
            let m = metrics.load(metric)?;
            let p = point(at, &[m.dim()])?;
            let set = match resume {
                Some(path) => saved_samples(path)?,
                None => {
                    let budget = SampleBudget { max_word: *word_length, max_samples: 4 * word_length + 2000 };
                    holonomy_samples(&Transporter::new(&m), &p, &loop_family(loops, &p, seed)?, budget)?
                }
            };
            fiber_dist(m.dim(), &set, *samples, seed)?
        }
        Command::BoundReport { metric, metric2, region: reg, samples } => {
            let g = metrics.load(metric)?;
            let ge = match metric2 {
                Some(s) => metrics.load(s)?,
                None => g.clone(),
            };
            let b = sample_box(&g, Some(reg))?;
            let rep = ricci_bound_report(&g, &ge, &b, *samples, seed)?;
            let mut t = Table::new(&["eps_hat", "delta_hat", "k_hat", "kk_hat", "sup_ricci"]);
            let h = &rep.hypotheses;
            t.push(vec![h.eps_hat, h.delta_hat, h.k_hat, h.kk_hat, rep.sup_ricci]);
            let mut o = Outcome::new("bound-report", &rep)?;
            o.checks.push(Check::holds("curvature below blow-up threshold", !rep.flagged));
            o.table = Some(t);
            o
        }
        Command::Gh { metric, metric2, region: reg, samples } => {
            let a = metrics.load(metric)?;
            let b = metrics.load(metric2)?;
            if a.dim() != b.dim() {
                return Err(config("--metric and --metric2 must share a chart"));
            }
            gh(&a, &b, &sample_box(&a, Some(reg))?, *samples)?
        }
        Command::Experiment(e) => experiment(e, seed, &mut metrics)?,
    };
    out.metrics = metrics.list;
    Ok(out)
}

fn curvature(m: &MetricSpec, p: &[f64]) -> Res<Outcome> {
    let geo = Geometry::at(m, p, 2)?;
    let con = geo.connection(p);
    let cur = geo.curvature(p);
    Outcome::new(
        "curvature",
        json!({
            "point": p,
            "metric": rows(&geo.g),
            "christoffel": con.gamma,
            "riemann": cur.lower,
            "ricci": rows(&geo.ricci()),
            "scalar": geo.scalar(),
        }),
    )
}

fn lift(g: &MetricSpec, gp: &MetricSpec, at: Option<&str>, reg: Option<&str>, k: usize) -> Res<Outcome> {
    let n = g.dim();
    let chart = LiftedMetricChart::new(g, gp, DMatrix::identity(n, n))?;
    let d = chart.total_dim();
    match (at, reg) {
        (Some(at), None) => {
            let mut y = point(at, &[n, d])?;
            y.resize(d, 0.0);
            let gt = chart.metric(&y)?;
            Outcome::new("lift", json!({ "point": y, "total_dim": d, "metric": rows(&gt) }))
        }
        (None, Some(r)) => {
            let mut b = region(r)?;
            if b.len() == n {
                b.extend(std::iter::repeat(Interval::new(-0.5, 0.5)).take(d - n));
            }
            if b.len() != d {
                return Err(config(format!("region needs {n} or {d} intervals")));
            }
            let lo: Vec<f64> = b.iter().map(|iv| iv.lo).collect();
            let hi: Vec<f64> = b.iter().map(|iv| iv.hi).collect();
            let grid = chart.export_grid(&lo, &hi, k)?;
            let mut o = Outcome::new("lift", json!({ "total_dim": d, "nodes_per_axis": k, "region": b, "file": "lift.dat" }))?;
            o.raw_dat = Some(grid);
            Ok(o)
        }
        _ => Err(config("lift takes exactly one of --at and --region")),
    }
}

fn unit_direction(ctx: &ONeillContext, rng: &mut ChaCha8Rng, kind: usize) -> Res<Vec<f64>> {
    let y0 = ctx.chart_point();
    let fr = ctx.chart.adapted_frame(&y0)?;
    let n = ctx.dim();
    let d = ctx.chart.total_dim();
    // alternate horizontal, vertical and mixed directions
    let mut c = DVector::from_fn(d, |i, _| match (kind % 3, i < n) {
        (0, false) | (1, true) => 0.0,
        _ => rng.gen_range(-1.0..1.0),
    });
    c /= c.norm();
    Ok((fr * c).iter().copied().collect())
}

fn oneill_check(g: &MetricSpec, ge: &MetricSpec, count: usize, reg: Option<&str>, tol: f64, seed: u64) -> Res<Outcome> {
    if g.dim() != ge.dim() {
        return Err(config("--metric and --metric2 must share a chart"));
    }
    let n = g.dim();
    let b = sample_box(g, reg)?;
    let reports = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let p = random_in(&b, &mut rng);
            let det = if k % 2 == 0 { 1.0 } else { -1.0 };
            let ctx = ONeillContext::new(g, ge, FramePoint::new(p, lie::random_orthogonal(n, &mut rng, det))?)?;
            let x = unit_direction(&ctx, &mut rng, k)?;
            Ok(ctx.ricci_oneill(&x, true)?)
        })
        .collect::<Res<Vec<_>>>()?;
    let mut t = Table::new(&["index", "ricci_formula", "ricci_direct", "relative_error"]);
    let mut worst: f64 = 0.0;
    for (k, r) in reports.iter().enumerate() {
        let direct = r.ricci_direct.unwrap_or(f64::NAN);
        let err = (r.ricci_formula - direct).abs() / (1.0 + direct.abs());
        worst = worst.max(err);
        t.push(vec![k as f64, r.ricci_formula, direct, err]);
    }
    let mut o = Outcome::new("oneill-check", json!({ "pairs": count, "max_relative_error": worst, "reports": reports }))?;
    o.checks.push(Check::at_most("formula against direct Ricci", worst, tol));
    o.table = Some(t);
    Ok(o)
}

fn holonomy_report(n: usize, set: Vec<HolonomySample>) -> Res<Outcome> {
    let pairs: Vec<(DMatrix<f64>, f64)> = set.iter().map(|s| (s.element.clone(), s.length)).collect();
    let est = classify_subgroup(&pairs, &ClassifyOptions::default())?;
    let id = DMatrix::identity(n, n);
    let mut t = Table::new(&["index", "length", "distance_to_identity", "angle"]);
    let mut drift: f64 = 0.0;
    for (k, s) in set.iter().enumerate() {
        let angle = if n == 2 { rotation_angle(&s.element) } else { f64::NAN };
        t.push(vec![k as f64, s.length, group_distance(&id, &s.element), angle]);
        drift = drift.max((s.element.transpose() * &s.element - &id).amax());
    }
    let mut o = Outcome::new(
        "holonomy",
        json!({ "samples": set.len(), "estimate": est, "file": "holonomy.jsonl" }),
    )?;
    o.checks.push(Check::at_most("samples are orthogonal", drift, 1e-8));
    o.files.push(("holonomy.jsonl".into(), samples_jsonl(&set)?));
    o.table = Some(t);
    Ok(o)
}

fn fiber_dist(n: usize, set: &[HolonomySample], count: usize, seed: u64) -> Res<Outcome> {
    let id = DMatrix::identity(n, n);
    let mut t;
    let targets: Vec<(f64, DMatrix<f64>)> = if n == 2 {
        t = Table::new(&["theta", "distance"]);
        (0..count).map(|k| 2.0 * PI * k as f64 / count as f64).map(|th| (th, lie::rotation2(th))).collect()
    } else {
        t = Table::new(&["index", "distance"]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|k| (k as f64, lie::random_orthogonal(n, &mut rng, 1.0))).collect()
    };
    let dist: Vec<f64> = targets.par_iter().map(|(_, e)| fiber_distance(set, &id, e)).collect();
    let mut d_max: f64 = 0.0;
    for ((x, _), d) in targets.iter().zip(&dist) {
        d_max = d_max.max(*d);
        t.push(vec![*x, *d]);
    }
    let mut reflection = id.clone();
    reflection[(0, 0)] = -1.0;
    let refl = fiber_distance(set, &id, &reflection);
    let mut o = Outcome::new(
        "fiber-dist",
        json!({ "samples": set.len(), "targets": count, "d_max": d_max, "reflection": refl, "reflection_connected": refl.is_finite() }),
    )?;
    o.table = Some(t);
    Ok(o)
}

fn gh(a: &MetricSpec, b: &MetricSpec, reg: &[Interval], count: usize) -> Res<Outcome> {
    let s = sample_space(a, reg, count, SampleOptions::default())?;
    let sb = graph_space(b, &s.points, &s.edges)?;
    let corr = Correspondence::identity(s.points.len());
    let up = gh_upper(&s.space, &sb, &corr)?;
    let lo = gh_lower(&s.space, &sb);
    let (va, vb) = (s.space.triangle_violation(), sb.triangle_violation());
    let mut t = Table::new(&["gh_upper", "gh_lower", "diameter_a", "diameter_b", "fill_radius"]);
    t.push(vec![up, lo, s.space.diameter(), sb.diameter(), s.fill_radius]);
    let mut o = Outcome::new(
        "gh",
        json!({
            "points": s.points,
            "edges": s.edges.len(),
            "gh_upper": up,
            "gh_lower": lo,
            "diameter_a": s.space.diameter(),
            "diameter_b": sb.diameter(),
            "fill_radius": s.fill_radius,
        }),
    )?;
    o.checks.push(Check::at_most("gh_lower - gh_upper", lo - up, 0.0));
    o.checks.push(Check::at_most("triangle violation", va.max(vb), 1e-9));
    for (name, sp) in [("gh_a", &s.space), ("gh_b", &sb)] {
        let mut csv = Vec::new();
        sp.write_csv(&mut csv)?;
        o.files.push((format!("{name}.csv"), csv));
        let mut bin = Vec::new();
        sp.write_fms1(&mut bin)?;
        o.files.push((format!("{name}.fms1"), bin));
    }
    o.table = Some(t);
    Ok(o)
}

fn experiment(e: &Experiment, seed: u64, metrics: &mut Metrics) -> Res<Outcome> {
    match e {
        Experiment::ConeCollapse { a, caps, word_length, samples } => {
            let caps = list(caps)?;
            if caps.is_empty() || caps.iter().any(|c| *c <= 0.0) {
                return Err(config("--caps must be a list of positive cap scales"));
            }
            let rep = fiber_collapse_experiment(*a, &caps, CollapseOptions { max_word: *word_length, theta_grid: *samples })?;
            let mut t = Table::new(&["eps", "base_r", "loop_length", "samples", "d_max", "reflection"]);
            for r in &rep.rows {
                t.push(vec![r.eps, r.base_r, r.loop_length, r.samples as f64, r.d_max, r.reflection]);
            }
            let mut o = Outcome::new("cone-collapse", &rep)?;
            o.checks.push(Check::holds("reflection component disconnected", rep.rows.iter().all(|r| r.reflection.is_infinite())));
            match rep.quotient_diameter {
                Some(q) => {
                    let last = rep.rows.last().map_or(f64::NAN, |r| r.d_max);
                    o.checks.push(Check::at_most("final D against the cyclic quotient diameter", (last - q).abs(), 1e-2));
                }
                None => o.checks.push(Check::holds("D strictly decreasing", rep.strictly_decreasing)),
            }
            o.table = Some(t);
            Ok(o)
        }
        Experiment::EguchiHanson { scales, gh_scales, loops, samples } => {
            let opts = EguchiHansonOptions {
                holonomy_scales: list(scales)?,
                gh_scales: list(gh_scales)?,
                triangles: *loops,
                base_samples: *samples,
                seed,
                ..EguchiHansonOptions::default()
            };
            if opts.holonomy_scales.is_empty() || opts.gh_scales.is_empty() {
                return Err(config("--scales and --gh-scales must be nonempty"));
            }
            let rep = eguchi_hanson_experiment(&opts)?;
            let mut t = Table::new(&["scale", "gh_upper", "gh_lower", "closed_form_gap"]);
            for r in &rep.gh {
                t.push(vec![r.scale, r.gh_upper, r.gh_lower, r.closed_form_gap]);
            }
            let mut o = Outcome::new("eguchi-hanson", &rep)?;
            let su2 = matches!(rep.h0.estimate.class, SubgroupClass::Su2InSo4 { .. });
            o.checks.push(Check::holds("H0 ladder is SU(2) and stable", su2 && rep.h0.stable));
            o.checks.push(Check::at_most("chirality residual", rep.h0.estimate.residuals.chirality, 1e-5));
            let worst = rep.gh.iter().map(|r| r.gh_lower - r.gh_upper).fold(f64::NEG_INFINITY, f64::max);
            o.checks.push(Check::at_most("gh_lower - gh_upper", worst, 0.0));
            if let Some(last) = rep.gh.iter().find(|r| r.scale == 8.0) {
                o.checks.push(Check::at_most("gh_upper at scale 8", last.gh_upper, 0.05));
            }
            o.table = Some(t);
            Ok(o)
        }
        Experiment::CanonicalRecovery { metric, samples, tol } => {
            let m = metrics.load(metric)?;
            canonical_recovery(&m, *samples, *tol, seed)
        }
    }
}

fn canonical_recovery(m: &MetricSpec, count: usize, tol: f64, seed: u64) -> Res<Outcome> {
    let n = m.dim();
    let b = sample_box(m, None)?;
    let errs = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let det = if k % 2 == 0 { 1.0 } else { -1.0 };
            let anchor = lie::random_orthogonal(n, &mut rng, det);
            let mut y = random_in(&b, &mut rng);
            y.extend((0..lie::algebra_dim(n)).map(|_| rng.gen_range(-0.7..0.7)));
            let chart = LiftedMetricChart::new(m, m, anchor.clone())?;
            let gt = chart.metric(&y)?;
            let oracle = canonical_lifting_metric(m, &anchor, &y)?;
            Ok((&gt - &oracle).amax() / gt.amax())
        })
        .collect::<Res<Vec<f64>>>()?;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    let mut t = Table::new(&["index", "relative_error"]);
    for (k, e) in errs.iter().enumerate() {
        t.push(vec![k as f64, *e]);
    }
    let mut o = Outcome::new("canonical-recovery", json!({ "samples": count, "max_relative_error": worst }))?;
    o.checks.push(Check::at_most("lifted against canonical lifting metric", worst, tol));
    o.table = Some(t);
    Ok(o)
}
