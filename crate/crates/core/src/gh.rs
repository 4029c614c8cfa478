//! Finite metric spaces, Gromov–Hausdorff bounds, and the collapse and
//! Eguchi–Hanson experiments.
//!
//! Sampled spaces are geodesic graphs: farthest-point samples of a Halton
//! pool joined to their `k` nearest neighbours and, by default, to every
//! other sample whose straight coordinate segment stays in the domain. Edge
//! weights are Gauss–Legendre lengths of those segments, so graph distances
//! bound the true distances from above.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dsl::{parse_metric, BuiltinFamily, Interval, MetricSpec};
use crate::error::{Error, Result};
use crate::holonomy::{
    estimate_h0, fiber_distance, holonomy_samples, Curve, H0Report, HolonomySample, LoopFamily, SampleBudget, ScaleLevel,
    Transporter,
};
use crate::lie::{self, group_distance, quotient_distance, Chirality, ClassifyOptions, SubgroupClass, SubgroupEstimate};
use crate::oneill::halton_point;

/// Magic bytes of the binary distance-matrix layout.
pub const FMS1_MAGIC: &[u8; 4] = b"FMS1";

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMetricSpace {
    pub labels: Vec<String>,
    pub dist: DMatrix<f64>,
    pub basepoint: Option<usize>,
}

impl FiniteMetricSpace {
    /// Checks shape, zero diagonal, symmetry and nonnegativity. Infinite
    /// entries separate components.
    pub fn new(labels: Vec<String>, dist: DMatrix<f64>) -> Result<Self> {
        let n = labels.len();
        if dist.nrows() != n || dist.ncols() != n {
            return Err(Error::Invalid(format!("{n} labels for a {}x{} matrix", dist.nrows(), dist.ncols())));
        }
        for i in 0..n {
            if dist[(i, i)] != 0.0 {
                return Err(Error::Invalid(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let (a, b) = (dist[(i, j)], dist[(j, i)]);
                if a.is_nan() || a < 0.0 || !(a == b || (a - b).abs() <= 1e-12 * a.max(b)) {
                    return Err(Error::Invalid(format!("entries ({i}, {j}) are negative or asymmetric")));
                }
            }
        }
        Ok(FiniteMetricSpace { labels, dist, basepoint: None })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn diameter(&self) -> f64 {
        self.dist.iter().copied().fold(0.0, f64::max)
    }

    /// Largest `d(i, k) − d(i, j) − d(j, k)` over all triples.
    pub fn triangle_violation(&self) -> f64 {
        let n = self.len();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut worst = f64::NEG_INFINITY;
                for j in 0..n {
                    for k in 0..n {
                        let v = self.dist[(i, k)] - self.dist[(i, j)] - self.dist[(j, k)];
                        if !v.is_nan() {
                            worst = worst.max(v);
                        }
                    }
                }
                worst
            })
            .reduce(|| f64::NEG_INFINITY, f64::max)
            .max(0.0)
    }

    pub fn rescaled(&self, lambda: f64) -> Self {
        FiniteMetricSpace { labels: self.labels.clone(), dist: &self.dist * lambda, basepoint: self.basepoint }
    }

    /// CSV with a header row `label,<labels>` and one row per point.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Invalid(e.to_string());
        let mut header = vec!["label".to_string()];
        header.extend(self.labels.iter().cloned());
        wr.write_record(&header).map_err(csv_err)?;
        for (i, l) in self.labels.iter().enumerate() {
            let mut row = vec![l.clone()];
            row.extend(self.dist.row(i).iter().map(|d| format!("{d:e}")));
            wr.write_record(&row).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let csv_err = |e: csv::Error| Error::Invalid(e.to_string());
        let header = rd.headers().map_err(csv_err)?.clone();
        let labels: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let n = labels.len();
        let mut dist = DMatrix::zeros(n, n);
        let mut rows = 0;
        for (i, rec) in rd.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if i >= n || rec.len() != n + 1 {
                return Err(Error::Invalid(format!("CSV row {} has the wrong shape", i + 1)));
            }
            for j in 0..n {
                dist[(i, j)] = rec[j + 1]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Invalid(format!("CSV row {} column {}: {e}", i + 1, j + 2)))?;
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Invalid(format!("CSV has {rows} rows for {n} labels")));
        }
        Self::new(labels, dist)
    }

    /// `FMS1`, `u64` point count, then the strict upper triangle row-major,
    /// all little-endian. Labels are not stored.
    pub fn write_fms1<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.len();
        w.write_all(FMS1_MAGIC)?;
        w.write_all(&(n as u64).to_le_bytes())?;
        for i in 0..n {
            for j in i + 1..n {
                w.write_all(&self.dist[(i, j)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_fms1<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FMS1_MAGIC {
            return Err(Error::Invalid("missing FMS1 magic".into()));
        }
        let mut nb = [0u8; 8];
        r.read_exact(&mut nb)?;
        let n = usize::try_from(u64::from_le_bytes(nb)).map_err(|_| Error::Invalid("point count overflows".into()))?;
        let mut dist = DMatrix::zeros(n, n);
        let mut buf = [0u8; 8];
        for i in 0..n {
            for j in i + 1..n {
                r.read_exact(&mut buf)?;
                let d = f64::from_le_bytes(buf);
                dist[(i, j)] = d;
                dist[(j, i)] = d;
            }
        }
        Self::new((0..n).map(|i| i.to_string()).collect(), dist)
    }
}

/// Relation between two finite spaces covering both sides.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Correspondence {
    pub pairs: Vec<(usize, usize)>,
}

impl Correspondence {
    pub fn identity(n: usize) -> Self {
        Correspondence { pairs: (0..n).map(|i| (i, i)).collect() }
    }

    pub fn validate(&self, na: usize, nb: usize) -> Result<()> {
        let mut seen_a = vec![false; na];
        let mut seen_b = vec![false; nb];
        for &(i, j) in &self.pairs {
            if i >= na || j >= nb {
                return Err(Error::Invalid(format!("pair ({i}, {j}) is out of range")));
            }
            seen_a[i] = true;
            seen_b[j] = true;
        }
        if seen_a.iter().chain(&seen_b).all(|&s| s) {
            Ok(())
        } else {
            Err(Error::Invalid("correspondence does not cover both spaces".into()))
        }
    }
}

fn gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

/// Half the distortion of `corr`, an upper bound on `GH(A, B)`.
pub fn gh_upper(a: &FiniteMetricSpace, b: &FiniteMetricSpace, corr: &Correspondence) -> Result<f64> {
    corr.validate(a.len(), b.len())?;
    let p = &corr.pairs;
    let dis = p
        .par_iter()
        .map(|&(i, j)| p.iter().map(|&(k, l)| gap(a.dist[(i, k)], b.dist[(j, l)])).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max);
    Ok(0.5 * dis)
}

/// Size of a greedy `r`-separated subset (pairwise distances `> r`).
fn greedy_packing(s: &FiniteMetricSpace, r: f64) -> usize {
    let mut chosen: Vec<usize> = Vec::new();
    for i in 0..s.len() {
        if chosen.iter().all(|&c| s.dist[(i, c)] > r) {
            chosen.push(i);
        }
    }
    chosen.len()
}

/// Size of a greedy cover by closed balls of radius `r`.
fn greedy_cover(s: &FiniteMetricSpace, r: f64) -> usize {
    let n = s.len();
    let mut covered = vec![false; n];
    let mut count = 0;
    for i in 0..n {
        if covered[i] {
            continue;
        }
        count += 1;
        for j in 0..n {
            if s.dist[(i, j)] <= r {
                covered[j] = true;
            }
        }
    }
    count
}

/// Largest `δ` certified by: a greedy `(2ρ + 2δ)`-packing of `a` larger
/// than a greedy `ρ`-cover of `b` forces `GH ≥ δ`.
fn packing_bound(a: &FiniteMetricSpace, b: &FiniteMetricSpace) -> f64 {
    let mut vals: Vec<f64> = a.dist.iter().copied().filter(|d| d.is_finite() && *d > 0.0).collect();
    if vals.is_empty() {
        return 0.0;
    }
    vals.sort_by(f64::total_cmp);
    let mut best: f64 = 0.0;
    for q in 0..24 {
        let r = vals[(q * (vals.len() - 1)) / 23];
        let pack = greedy_packing(a, r);
        let holds = |delta: f64| greedy_cover(b, 0.5 * r - delta) < pack;
        if pack < 2 || !holds(0.0) {
            continue;
        }
        let (mut lo, mut hi) = (0.0, 0.5 * r);
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            if holds(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        best = best.max(lo);
    }
    best
}

/// Lower bound on `GH(A, B)`: half the diameter gap and the packing bound in
/// both directions.
pub fn gh_lower(a: &FiniteMetricSpace, b: &FiniteMetricSpace) -> f64 {
    let (da, db) = (a.diameter(), b.diameter());
    let diam = if da.is_finite() && db.is_finite() { 0.5 * (da - db).abs() } else { 0.0 };
    diam.max(packing_bound(a, b)).max(packing_bound(b, a))
}

const GL_NODES: [f64; 6] = [
    -0.932_469_514_203_152,
    -0.661_209_386_466_264_5,
    -0.238_619_186_083_196_9,
    0.238_619_186_083_196_9,
    0.661_209_386_466_264_5,
    0.932_469_514_203_152,
];
const GL_WEIGHTS: [f64; 6] = [
    0.171_324_492_379_170_3,
    0.360_761_573_048_138_6,
    0.467_913_934_572_691,
    0.467_913_934_572_691,
    0.360_761_573_048_138_6,
    0.171_324_492_379_170_3,
];

/// Length of the straight coordinate segment from `p` along the shortest
/// periodic displacement to `q`.
pub fn segment_length(m: &MetricSpec, p: &[f64], q: &[f64]) -> Result<f64> {
    let d = DVector::from_vec(m.displacement(p, q));
    let mut len = 0.0;
    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
        let s = 0.5 * (x + 1.0);
        let pt: Vec<f64> = p.iter().zip(d.iter()).map(|(a, b)| a + s * b).collect();
        m.check_domain(&pt)?;
        len += 0.5 * w * d.dot(&(m.eval_metric(&pt) * &d)).max(0.0).sqrt();
    }
    Ok(len)
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], src: usize) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    d[src] = 0.0;
    heap.push(Entry(0.0, src));
    while let Some(Entry(du, u)) = heap.pop() {
        if du > d[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = du + w;
            if nd < d[v] {
                d[v] = nd;
                heap.push(Entry(nd, v));
            }
        }
    }
    d
}

/// All-pairs shortest paths of a weighted undirected graph.
pub fn graph_distances(n: usize, edges: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j, w) in edges {
        adj[i].push((j, w));
        adj[j].push((i, w));
    }
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| dijkstra(&adj, s)).collect();
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { rows[i][j].min(rows[j][i]) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SampleOptions {
    pub neighbours: usize,
    /// Halton pool size as a multiple of the sample count.
    pub pool_factor: usize,
    /// Also join every pair by its straight coordinate segment when that
    /// segment stays in the domain.
    pub direct_segments: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions { neighbours: 12, pool_factor: 8, direct_segments: true }
    }
}

/// A geodesic-graph sample of a metric.
#[derive(Clone, Debug)]
pub struct SampledSpace {
    pub space: FiniteMetricSpace,
    pub points: Vec<Vec<f64>>,
    /// Edges of the distance graph.
    pub edges: Vec<(usize, usize)>,
    /// The `k`-nearest-neighbour edges alone.
    pub neighbours: Vec<(usize, usize)>,
    /// Largest distance from a pool point to the sample, in the local
    /// metric approximation.
    pub fill_radius: f64,
}

fn local_distance(m: &MetricSpec, gp: &DMatrix<f64>, gq: &DMatrix<f64>, p: &[f64], q: &[f64]) -> f64 {
    let d = DVector::from_vec(m.displacement(p, q));
    (0.5 * d.dot(&((gp + gq) * &d))).max(0.0).sqrt()
}

/// Samples `count` points of `region` by farthest-point selection from a
/// Halton pool and builds the `k`-nearest-neighbour geodesic graph.
pub fn sample_space(m: &MetricSpec, region: &[Interval], count: usize, opts: SampleOptions) -> Result<SampledSpace> {
    let n = m.dim();
    if region.len() != n || region.iter().any(|iv| !(iv.lo.is_finite() && iv.hi.is_finite() && iv.lo < iv.hi)) {
        return Err(Error::Invalid("region must be a bounded box in the chart".into()));
    }
    if count < 2 {
        return Err(Error::Invalid("need at least two sample points".into()));
    }
    let pool: Vec<Vec<f64>> = (0..count * opts.pool_factor.max(1))
        .map(|i| halton_point(region, i))
        .filter(|p| m.contains(p) && m.is_spd_at(p))
        .collect();
    if pool.len() < count {
        return Err(Error::Invalid(format!("region too small for {count} points ({} admissible pool points)", pool.len())));
    }
    let gs: Vec<DMatrix<f64>> = pool.iter().map(|p| m.eval_metric(p)).collect();
    let mut nearest = vec![f64::INFINITY; pool.len()];
    let mut chosen = vec![0usize];
    loop {
        let last = *chosen.last().expect("nonempty");
        nearest.par_iter_mut().enumerate().for_each(|(i, d)| {
            *d = d.min(local_distance(m, &gs[i], &gs[last], &pool[i], &pool[last]));
        });
        if chosen.len() == count {
            break;
        }
        let (next, _) = nearest.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty pool");
        chosen.push(next);
    }
    let fill_radius = nearest.iter().copied().fold(0.0, f64::max);
    let points: Vec<Vec<f64>> = chosen.iter().map(|&i| pool[i].clone()).collect();
    let cg: Vec<&DMatrix<f64>> = chosen.iter().map(|&i| &gs[i]).collect();
    let k = opts.neighbours.min(count - 1);
    let mut edges: Vec<(usize, usize)> = (0..count)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut d: Vec<(f64, usize)> = (0..count)
                .filter(|&j| j != i)
                .map(|j| (local_distance(m, cg[i], cg[j], &points[i], &points[j]), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0));
            d.into_iter().take(k).map(move |(_, j)| (i.min(j), i.max(j)))
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    let neighbours = edges.clone();
    if opts.direct_segments {
        let knn = neighbours.clone();
        let extra: Vec<(usize, usize)> = (0..count)
            .into_par_iter()
            .flat_map_iter(|i| (i + 1..count).map(move |j| (i, j)))
            .filter(|e| knn.binary_search(e).is_err() && segment_length(m, &points[e.0], &points[e.1]).is_ok())
            .collect();
        edges.extend(extra);
        edges.sort_unstable();
    }
    let space = graph_space(m, &points, &edges)?;
    if space.dist.iter().any(|d| d.is_infinite()) {
        return Err(Error::Invalid("sample graph is disconnected; raise the sample count or neighbours".into()));
    }
    Ok(SampledSpace { space, points, edges, neighbours, fill_radius })
}

/// Graph distances on fixed points and edges under the metric `m`.
pub fn graph_space(m: &MetricSpec, points: &[Vec<f64>], edges: &[(usize, usize)]) -> Result<FiniteMetricSpace> {
    let weighted: Vec<(usize, usize, f64)> = edges
        .par_iter()
        .map(|&(i, j)| Ok((i, j, segment_length(m, &points[i], &points[j])?)))
        .collect::<Result<_>>()?;
    let labels = (0..points.len()).map(|i| format!("p{i}")).collect();
    FiniteMetricSpace::new(labels, graph_distances(points.len(), &weighted))
}

/// Distance on the Euclidean cone `C(S¹_a)` in polar coordinates.
pub fn cone_distance(a: f64, p: &[f64], q: &[f64]) -> f64 {
    let dphi = (p[1] - q[1]).rem_euclid(2.0 * PI);
    let ang = a * dphi.min(2.0 * PI - dphi);
    if ang >= PI {
        p[0] + q[0]
    } else {
        (p[0] * p[0] + q[0] * q[0] - 2.0 * p[0] * q[0] * ang.cos()).max(0.0).sqrt()
    }
}

/// Euler-angle map `(r, θ, φ, ψ) ↦ ℝ⁴` of the flat metric
/// `dr² + r²/4 (σ₁² + σ₂² + σ₃²)`.
pub fn euler_point(p: &[f64]) -> [f64; 4] {
    let (r, th, ph, ps) = (p[0], p[1], p[2], p[3]);
    let (c, s) = ((th / 2.0).cos(), (th / 2.0).sin());
    let (a1, a2) = ((ps + ph) / 2.0, (ps - ph) / 2.0);
    [r * c * a1.cos(), r * c * a1.sin(), r * s * a2.cos(), r * s * a2.sin()]
}

/// Distance on `ℝ⁴/{±1} = C(ℝP³)` between points in Euler coordinates with
/// `ψ` of period `2π`.
pub fn rp3_cone_distance(p: &[f64], q: &[f64]) -> f64 {
    let (x, y) = (euler_point(p), euler_point(q));
    let minus: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
    let plus: f64 = x.iter().zip(&y).map(|(a, b)| (a + b).powi(2)).sum();
    minus.min(plus).sqrt()
}

/// The exact cone `dr² + a²r² dφ²`.
pub fn exact_cone(a: f64) -> Result<MetricSpec> {
    Ok(parse_metric(&format!(
        "coords r ph; params a = {a:e}; domain r in [0, inf] ph in [0, 2*pi]; periodic ph = 2*pi; g = [[1, 0], [0, a^2*r^2]]"
    ))?)
}

/// Flat `ℝ⁴/{±1}` in the Eguchi–Hanson chart.
pub fn flat_rp3_cone() -> Result<MetricSpec> {
    Ok(parse_metric(
        "coords r th ph ps; domain r in [0, inf] th in [0, pi] ph in [0, 2*pi] ps in [0, 2*pi]; \
         periodic ph = 2*pi ps = 2*pi; \
         g = [[1, 0, 0, 0], [0, r^2/4, 0, 0], [0, 0, r^2/4, r^2/4*cos(th)], [0, 0, r^2/4*cos(th), r^2/4]]",
    )?)
}

/// Product-style sample of `FM`.
#[derive(Clone, Debug)]
pub struct FrameBundleSample {
    pub space: FiniteMetricSpace,
    /// Base index and fiber index of each point.
    pub index: Vec<(usize, usize)>,
    pub fiber: Vec<DMatrix<f64>>,
    /// Largest `d_M(p, q) − d_FM((p, e), (q, e'))`; nonpositive when the
    /// submersion bound holds.
    pub submersion_violation: f64,
}

/// Frames `(p_i, e_k)` joined by vertical `d_b` edges and by horizontal
/// moves `√(l² + d_b(P e_k, e_m)²)` to the `nearest` fiber points over
/// base points joined in the sample graph. `P` is transport for `connection` along the
/// base edge; lengths use `base_metric`.
pub fn sample_frame_bundle(
    base_metric: &MetricSpec,
    connection: &MetricSpec,
    base: &SampledSpace,
    fiber: &[DMatrix<f64>],
    nearest: usize,
) -> Result<FrameBundleSample> {
    let nb = base.points.len();
    let nf = fiber.len();
    if nf == 0 {
        return Err(Error::Invalid("empty fiber sample".into()));
    }
    let tr = Transporter::new(connection).with_length_metric(base_metric)?;
    let transports: Vec<(usize, usize, f64, DMatrix<f64>)> = base
        .edges
        .par_iter()
        .map(|&(i, j)| {
            let (p, q) = (&base.points[i], &base.points[j]);
            let step = connection.displacement(p, q);
            let end: Vec<f64> = p.iter().zip(&step).map(|(a, b)| a + b).collect();
            let c = Curve::polyline(&[p.clone(), end], "edge")?;
            let t = tr.transport(&c, &DMatrix::identity(p.len(), p.len()))?;
            Ok((i, j, t.length, t.element))
        })
        .collect::<Result<_>>()?;
    let node = |i: usize, k: usize| i * nf + k;
    let mut edges = Vec::new();
    for i in 0..nb {
        for k in 0..nf {
            for m in k + 1..nf {
                let d = group_distance(&fiber[k], &fiber[m]);
                if d.is_finite() {
                    edges.push((node(i, k), node(i, m), d));
                }
            }
        }
    }
    let nearest = nearest.max(1).min(nf);
    for (i, j, l, h) in &transports {
        for (from, to, map) in [(*i, *j, h.clone()), (*j, *i, h.transpose())] {
            for k in 0..nf {
                let moved = &map * &fiber[k];
                let mut cand: Vec<(f64, usize)> = (0..nf).map(|m| (group_distance(&moved, &fiber[m]), m)).collect();
                cand.sort_by(|a, b| a.0.total_cmp(&b.0));
                for &(d, m) in cand.iter().take(nearest).filter(|c| c.0.is_finite()) {
                    edges.push((node(from, k), node(to, m), l.hypot(d)));
                }
            }
        }
    }
    let dist = graph_distances(nb * nf, &edges);
    let index: Vec<(usize, usize)> = (0..nb).flat_map(|i| (0..nf).map(move |k| (i, k))).collect();
    let mut violation = f64::NEG_INFINITY;
    for (a, &(i, _)) in index.iter().enumerate() {
        for (b, &(j, _)) in index.iter().enumerate() {
            if dist[(a, b)].is_finite() {
                violation = violation.max(base.space.dist[(i, j)] - dist[(a, b)]);
            }
        }
    }
    let labels = index.iter().map(|(i, k)| format!("p{i}e{k}")).collect();
    Ok(FrameBundleSample { space: FiniteMetricSpace::new(labels, dist)?, index, fiber: fiber.to_vec(), submersion_violation: violation })
}

/// Evenly spaced rotations, optionally with the reflected component.
pub fn o2_grid(count: usize, with_reflections: bool) -> Vec<DMatrix<f64>> {
    let refl = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    let mut out: Vec<DMatrix<f64>> = (0..count).map(|k| lie::rotation2(2.0 * PI * k as f64 / count as f64)).collect();
    if with_reflections {
        out.extend((0..count).map(|k| lie::rotation2(2.0 * PI * k as f64 / count as f64) * &refl));
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct CollapseRow {
    pub eps: f64,
    pub base_r: f64,
    /// Length of the single circle at the basepoint.
    pub loop_length: f64,
    pub samples: usize,
    /// `max_θ fiber_distance(I, rot θ)`.
    pub d_max: f64,
    /// Fiber distance from the identity to a reflection.
    pub reflection: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CollapseReport {
    pub a: f64,
    pub rows: Vec<CollapseRow>,
    pub strictly_decreasing: bool,
    /// Least-squares slope of `log D` against `log ε`.
    pub decay_slope: f64,
    /// `q` when `a = p/q` with `q ≤ 64`.
    pub rational_order: Option<usize>,
    /// `√2 π / q`, the diameter of `SO(2)/ℤ_q` under `d_b`.
    pub quotient_diameter: Option<f64>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CollapseOptions {
    pub max_word: usize,
    pub theta_grid: usize,
}

impl Default for CollapseOptions {
    fn default() -> Self {
        CollapseOptions { max_word: 50, theta_grid: 360 }
    }
}

fn rational_order(a: f64) -> Option<usize> {
    (1..=64).find(|&q| {
        let x = a * q as f64;
        (x - x.round()).abs() < 1e-9
    })
}

fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> =
        xs.iter().zip(ys).filter(|(x, y)| **x > 0.0 && **y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let m = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let (num, den) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mx) * (p.1 - my), a.1 + (p.0 - mx).powi(2)));
    num / den
}

/// Fiber collapse on smoothed cones: at the basepoint `r = 2ε` (the edge
/// of the cap), powers of the circle loop bound the restricted fiber
/// distance from the identity to each rotation.
pub fn fiber_collapse_experiment(a: f64, caps: &[f64], opts: CollapseOptions) -> Result<CollapseReport> {
    if caps.is_empty() {
        return Err(Error::Invalid("cap ladder is empty".into()));
    }
    let refl = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    let id = DMatrix::identity(2, 2);
    let rows: Vec<CollapseRow> = caps
        .iter()
        .map(|&eps| {
            let m = BuiltinFamily::SmoothedCone { a, eps }.instantiate()?;
            let r = 2.0 * eps;
            let fam = LoopFamily::Lassos { radial: 0, angular: 1, levels: vec![r], sweep: -2.0 * PI };
            let budget = SampleBudget { max_word: opts.max_word, max_samples: 4 * opts.max_word + 8 };
            let samples = holonomy_samples(&Transporter::new(&m), &[r, 0.0], &fam, budget)?;
            let loop_length = samples.iter().map(|s| s.length).filter(|l| *l > 0.0).fold(f64::INFINITY, f64::min);
            let d_max = (0..opts.theta_grid)
                .into_par_iter()
                .map(|k| fiber_distance(&samples, &id, &lie::rotation2(2.0 * PI * k as f64 / opts.theta_grid as f64)))
                .reduce(|| 0.0, f64::max);
            Ok(CollapseRow {
                eps,
                base_r: r,
                loop_length,
                samples: samples.len(),
                d_max,
                reflection: fiber_distance(&samples, &id, &refl),
            })
        })
        .collect::<Result<_>>()?;
    let strictly_decreasing = rows.windows(2).all(|w| w[1].d_max < w[0].d_max);
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let d: Vec<f64> = rows.iter().map(|r| r.d_max).collect();
    let q = rational_order(a);
    Ok(CollapseReport {
        a,
        decay_slope: log_slope(&eps, &d),
        rows,
        strictly_decreasing,
        rational_order: q,
        quotient_diameter: q.map(|q| 2f64.sqrt() * PI / q as f64),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct QuotientGap {
    pub pairs: usize,
    /// Sampled diameter of `SO(4)/SU(2)`.
    pub su2: f64,
    /// Sampled diameter of `SO(4)/{±I}`.
    pub plus_minus: f64,
    pub full: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GhRow {
    pub scale: f64,
    pub gh_upper: f64,
    pub gh_lower: f64,
    /// Largest gap between the flat graph distances and the closed form
    /// on `ℝ⁴/{±1}`; a measure of graph error only.
    pub closed_form_gap: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EguchiHansonReport {
    pub h0: H0Report,
    pub chirality: Option<Chirality>,
    pub quotient: QuotientGap,
    pub gh: Vec<GhRow>,
    pub gh_decreasing: bool,
    pub fill_radius: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EguchiHansonOptions {
    /// `λ` of the holonomy ladder `λ⁻²g`.
    pub holonomy_scales: Vec<f64>,
    /// `λ` values of the annulus comparison.
    pub gh_scales: Vec<f64>,
    pub triangles: usize,
    pub base_samples: usize,
    pub quotient_pairs: usize,
    pub seed: u64,
}

impl Default for EguchiHansonOptions {
    fn default() -> Self {
        EguchiHansonOptions {
            holonomy_scales: vec![4.0, 16.0, 64.0],
            gh_scales: vec![2.0, 4.0, 8.0],
            triangles: 30,
            base_samples: 240,
            quotient_pairs: 400,
            seed: 1,
        }
    }
}

/// Rescaled Eguchi–Hanson: holonomy ladder, quotient diameters, and base
/// annulus `ρ ∈ [1, 2]` against the flat cone `C(ℝP³)`.
///
/// `λ⁻²g` in the chart `ρ = r/λ` is Eguchi–Hanson with parameter `1/λ`,
/// which is how the annulus metrics are built.
pub fn eguchi_hanson_experiment(opts: &EguchiHansonOptions) -> Result<EguchiHansonReport> {
    let eh = BuiltinFamily::EguchiHanson { a_eh: 1.0, margin: 0.05 };
    let levels: Vec<ScaleLevel> = opts
        .holonomy_scales
        .iter()
        .map(|&lam| {
            Ok(ScaleLevel {
                scale: lam,
                connection: BuiltinFamily::Rescaled { base: Box::new(eh.clone()), lambda: 1.0 / lam }.instantiate()?,
                length_metric: None,
                basepoint: vec![1.5, 1.2, 0.5, 0.2],
                family: LoopFamily::Triangles { count: opts.triangles, size: 0.3, seed: opts.seed },
                budget: SampleBudget { max_word: 1, max_samples: 4 * opts.triangles + 4 },
            })
        })
        .collect::<Result<_>>()?;
    let (h0, _) = estimate_h0(&levels, 2.0, &ClassifyOptions::default())?;
    let chirality = match h0.estimate.class {
        SubgroupClass::Su2InSo4 { chirality } => Some(chirality),
        _ => None,
    };
    let quotient = quotient_gap(chirality.unwrap_or(Chirality::SelfDual), opts.quotient_pairs, opts.seed);

    let region = vec![Interval::new(1.0, 2.0), Interval::new(0.3, PI - 0.3), Interval::new(0.0, 2.0 * PI), Interval::new(0.0, 2.0 * PI)];
    let flat = flat_rp3_cone()?;
    let sample = sample_space(&flat, &region, opts.base_samples, SampleOptions::default())?;
    let flat_space = &sample.space;
    let n = sample.points.len();
    let mut closed_form_gap: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            closed_form_gap = closed_form_gap.max((flat_space.dist[(i, j)] - rp3_cone_distance(&sample.points[i], &sample.points[j])).abs());
        }
    }
    let gh = opts
        .gh_scales
        .iter()
        .map(|&lam| {
            let m = BuiltinFamily::EguchiHanson { a_eh: 1.0 / lam, margin: 0.05 }.instantiate()?;
            let s = graph_space(&m, &sample.points, &sample.edges)?;
            Ok(GhRow {
                scale: lam,
                gh_upper: gh_upper(&s, flat_space, &Correspondence::identity(n))?,
                gh_lower: gh_lower(&s, flat_space),
                closed_form_gap,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let gh_decreasing = gh.windows(2).all(|w| w[1].gh_upper < w[0].gh_upper);
    Ok(EguchiHansonReport { h0, chirality, quotient, gh, gh_decreasing, fill_radius: sample.fill_radius })
}

/// Sampled diameters of `SO(4)` modulo `SU(2)`, `{±I}` and itself.
pub fn quotient_gap(ch: Chirality, pairs: usize, seed: u64) -> QuotientGap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let su2 = SubgroupEstimate::of_class(4, SubgroupClass::Su2InSo4 { chirality: ch });
    let full = SubgroupEstimate::of_class(4, SubgroupClass::FullSo { n: 4 });
    let minus = -DMatrix::<f64>::identity(4, 4);
    let (mut a, mut b, mut c): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..pairs {
        let u = lie::random_orthogonal(4, &mut rng, 1.0);
        let v = lie::random_orthogonal(4, &mut rng, 1.0);
        a = a.max(quotient_distance(&u, &v, &su2));
        b = b.max(group_distance(&u, &v).min(group_distance(&(&minus * &u), &v)));
        c = c.max(quotient_distance(&u, &v, &full));
    }
    QuotientGap { pairs, su2: a, plus_minus: b, full: c, gap: b - a }
}

/// Holonomy samples at the cone edge basepoint, for callers that need them
/// directly.
pub fn cone_edge_samples(a: f64, eps: f64, max_word: usize) -> Result<Vec<HolonomySample>> {
    let m = BuiltinFamily::SmoothedCone { a, eps }.instantiate()?;
    let r = 2.0 * eps;
    let fam = LoopFamily::Lassos { radial: 0, angular: 1, levels: vec![r], sweep: -2.0 * PI };
    holonomy_samples(&Transporter::new(&m), &[r, 0.0], &fam, SampleBudget { max_word, max_samples: 4 * max_word + 8 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> FiniteMetricSpace {
        let n = points.len();
        FiniteMetricSpace::new(
            (0..n).map(|i| i.to_string()).collect(),
            DMatrix::from_fn(n, n, |i, j| (points[i] - points[j]).abs()),
        )
        .unwrap()
    }

    #[test]
    fn lower_bounds_on_simple_pairs() {
        let point = line(&[0.0]);
        let interval = line(&(0..=20).map(|i| i as f64 / 20.0).collect::<Vec<_>>());
        assert!(gh_lower(&point, &interval) >= 0.25);
        let two = line(&[0.0, 3.0]);
        assert!(gh_lower(&two, &point) >= 0.75);
        assert_eq!(gh_lower(&interval, &interval), 0.0);
    }

    #[test]
    fn upper_bound_of_identity_and_rescaling() {
        let a = line(&[0.0, 0.3, 1.0, 2.0]);
        assert_eq!(gh_upper(&a, &a, &Correspondence::identity(4)).unwrap(), 0.0);
        let delta = 0.1;
        let b = a.rescaled(1.0 + delta);
        assert!(gh_upper(&a, &b, &Correspondence::identity(4)).unwrap() <= delta * a.diameter() / 2.0 + 1e-15);
        assert!(gh_upper(&a, &b, &Correspondence { pairs: vec![(0, 0)] }).is_err());
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let a = line(&[0.0, 0.25, 1.5]);
        let mut buf = Vec::new();
        a.write_fms1(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"FMS1");
        assert_eq!(FiniteMetricSpace::read_fms1(&buf[..]).unwrap().dist, a.dist);
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        assert_eq!(FiniteMetricSpace::read_csv(&csv[..]).unwrap(), a);
    }

    #[test]
    fn rejects_asymmetric_matrices() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(FiniteMetricSpace::new(vec!["a".into(), "b".into()], d).is_err());
    }

    #[test]
    fn closed_form_cone_distance() {
        assert!((cone_distance(1.0, &[1.0, 0.0], &[1.0, PI]) - 2.0).abs() < 1e-12);
        assert!((cone_distance(0.5, &[1.0, 0.0], &[1.0, PI]) - 2f64.sqrt()).abs() < 1e-12);
        assert!((cone_distance(0.25, &[1.0, 0.5], &[2.0, 0.5]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rp3_identifies_antipodes() {
        let p = [1.0, 1.0, 0.3, 0.2];
        let q = [1.0, 1.0, 0.3, 0.2 + 2.0 * PI];
        assert!(rp3_cone_distance(&p, &q) < 1e-12);
        let x = euler_point(&p);
        let y = euler_point(&[1.0, 1.0, 0.3, 0.2 + PI]);
        assert!(x.iter().zip(&y).map(|(a, b)| (a + b).abs()).sum::<f64>() > 0.1);
    }

    #[test]
    fn su2_quotient_distance_is_the_other_factor() {
        let su2 = SubgroupEstimate::of_class(4, SubgroupClass::Su2InSo4 { chirality: Chirality::SelfDual });
        let x = &lie::chiral_basis(Chirality::AntiSelfDual)[0];
        let y = &lie::chiral_basis(Chirality::SelfDual)[1];
        let w = lie::group_exp(&(x * 0.5 + y * 0.7));
        let id = DMatrix::identity(4, 4);
        assert!((quotient_distance(&id, &w, &su2) - 0.5).abs() < 1e-9);
    }
}
