//! Parallel transport, holonomy sampling and the restricted fiber distance.
//!
//! Transport integrates `ė_λ + Γ(ẋ, e_λ) = 0` for the columns of a
//! coordinate frame `E`. Results are reported in the gauge of the reference
//! section: a frame `s(p) A` transported along a loop at `p` returns as
//! `s(p) H A`, and `H` is the holonomy element. Loops traversed in sequence
//! compose as `H(γ₁·γ₂) = H(γ₂) H(γ₁)`.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsl::MetricSpec;
use crate::error::{Error, Result};
use crate::frame::reference_section;
use crate::lie::{self, classify_subgroup, group_distance, ClassifyOptions, SubgroupClass, SubgroupEstimate};
use crate::ode::{Dopri, OdeError};
use crate::riemann::Geometry;

/// Samples closer than this in Frobenius norm are merged.
pub const DEDUP_TOL: f64 = 1e-6;

/// Tolerance of the closed-loop test.
pub const CLOSURE_TOL: f64 = 1e-10;

/// One piece of a curve, parametrised from the end of the previous piece.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Segment {
    /// `s ↦ x₀ + s·delta` for `s ∈ [0, 1]`.
    Line { delta: Vec<f64> },
    /// Geodesic of the connection metric with initial velocity `velocity`,
    /// followed for parameter time `param`.
    Geodesic { velocity: Vec<f64>, param: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub start: Vec<f64>,
    pub segments: Vec<Segment>,
    pub label: String,
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

impl Curve {
    pub fn constant(p: &[f64]) -> Curve {
        Curve { start: p.to_vec(), segments: vec![], label: "const".into() }
    }

    /// Straight coordinate segments through `points`.
    pub fn polyline(points: &[Vec<f64>], label: &str) -> Result<Curve> {
        let first = points.first().ok_or_else(|| Error::Invalid("polyline needs a point".into()))?;
        if points.iter().any(|q| q.len() != first.len()) {
            return Err(Error::Invalid("polyline points differ in dimension".into()));
        }
        let segments = points.windows(2).map(|w| Segment::Line { delta: sub(&w[1], &w[0]) }).collect();
        Ok(Curve { start: first.clone(), segments, label: label.into() })
    }

    /// The loop that advances coordinate `angular` by `sweep` with all other
    /// coordinates fixed.
    pub fn coordinate_circle(p: &[f64], angular: usize, sweep: f64) -> Curve {
        let mut delta = vec![0.0; p.len()];
        delta[angular] = sweep;
        Curve { start: p.to_vec(), segments: vec![Segment::Line { delta }], label: format!("circle[{angular}:{sweep:.6}]") }
    }

    /// Moves coordinate `radial` to `level`, sweeps `angular`, and returns.
    pub fn lasso(p: &[f64], radial: usize, angular: usize, level: f64, sweep: f64) -> Curve {
        let n = p.len();
        let mut out = vec![0.0; n];
        out[radial] = level - p[radial];
        let mut around = vec![0.0; n];
        around[angular] = sweep;
        let back: Vec<f64> = out.iter().map(|x| -x).collect();
        let mut segments = Vec::new();
        if out[radial] != 0.0 {
            segments.push(Segment::Line { delta: out });
        }
        segments.push(Segment::Line { delta: around });
        if back[radial] != 0.0 {
            segments.push(Segment::Line { delta: back });
        }
        Curve { start: p.to_vec(), segments, label: format!("lasso[{radial}={level:.6},{angular}:{sweep:.6}]") }
    }

    pub fn is_polyline(&self) -> bool {
        self.segments.iter().all(|s| matches!(s, Segment::Line { .. }))
    }

    /// Coordinate endpoint, available for polylines.
    pub fn polyline_end(&self) -> Option<Vec<f64>> {
        let mut x = self.start.clone();
        for s in &self.segments {
            match s {
                Segment::Line { delta } => x.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
                Segment::Geodesic { .. } => return None,
            }
        }
        Some(x)
    }

    /// `self` followed by `other`; `other` must start where `self` ends.
    pub fn then(&self, other: &Curve) -> Result<Curve> {
        if let Some(end) = self.polyline_end() {
            if sub(&end, &other.start).iter().any(|d| d.abs() > CLOSURE_TOL * (1.0 + end.iter().map(|x| x.abs()).sum::<f64>())) {
                return Err(Error::Invalid(format!("curve `{}` does not start where `{}` ends", other.label, self.label)));
            }
        }
        let mut segments = self.segments.clone();
        segments.extend(other.segments.iter().cloned());
        Ok(Curve { start: self.start.clone(), segments, label: format!("{}+{}", self.label, other.label) })
    }

    pub fn reversed(&self) -> Result<Curve> {
        let end = self.polyline_end().ok_or_else(|| Error::Invalid("only polylines can be reversed".into()))?;
        let segments = self
            .segments
            .iter()
            .rev()
            .map(|s| match s {
                Segment::Line { delta } => Segment::Line { delta: delta.iter().map(|d| -d).collect() },
                Segment::Geodesic { .. } => unreachable!("checked above"),
            })
            .collect();
        Ok(Curve { start: end, segments, label: format!("rev({})", self.label) })
    }

    /// `k`-fold repetition of a loop.
    pub fn power(&self, k: usize) -> Curve {
        let mut segments = Vec::with_capacity(self.segments.len() * k);
        for _ in 0..k {
            segments.extend(self.segments.iter().cloned());
        }
        Curve { start: self.start.clone(), segments, label: format!("({})^{k}", self.label) }
    }
}

/// Result of transporting a frame along a curve.
#[derive(Clone, Debug)]
pub struct Transported {
    pub end: Vec<f64>,
    /// Final frame relative to `s(end)`, polar-projected.
    pub element: DMatrix<f64>,
    /// Raw final frame in coordinates.
    pub frame: DMatrix<f64>,
    pub length: f64,
    /// Largest `‖EᵀG E − I‖` seen at accepted steps.
    pub drift: f64,
}

/// Parallel transport for the Levi-Civita connection of `connection`, with
/// lengths measured in `length_metric`.
#[derive(Clone, Debug)]
pub struct Transporter<'a> {
    pub connection: &'a MetricSpec,
    pub length_metric: &'a MetricSpec,
    pub ode: Dopri,
}

impl<'a> Transporter<'a> {
    pub fn new(connection: &'a MetricSpec) -> Self {
        Transporter { connection, length_metric: connection, ode: Dopri { atol: 1e-12, rtol: 1e-12, ..Dopri::default() } }
    }

    pub fn with_length_metric(mut self, g: &'a MetricSpec) -> Result<Self> {
        if g.dim() != self.connection.dim() {
            return Err(Error::Invalid("length metric and connection live on different charts".into()));
        }
        self.length_metric = g;
        Ok(self)
    }

    fn drift(&self, x: &[f64], e: &[f64]) -> f64 {
        let n = x.len();
        let em = DMatrix::from_column_slice(n, n, e);
        let g = self.connection.eval_metric(x);
        (em.transpose() * g * em - DMatrix::identity(n, n)).amax()
    }

    /// Transports the frame `s(start) A₀` along `curve`. Transport is
    /// linear, so `s(start)` is integrated and `A₀` applied at the end.
    pub fn transport(&self, curve: &Curve, frame0: &DMatrix<f64>) -> Result<Transported> {
        let n = self.connection.dim();
        if curve.start.len() != n || frame0.nrows() != n || !lie::is_orthogonal(frame0, 1e-10) {
            return Err(Error::Invalid("curve or initial frame has the wrong shape".into()));
        }
        let e0 = reference_section(self.connection, &curve.start)?;
        // state: x, v, E (column-major), length
        let mut state: Vec<f64> = curve.start.clone();
        state.extend(std::iter::repeat(0.0).take(n));
        state.extend(e0.iter().copied());
        state.push(0.0);
        let mut drift = self.drift(&curve.start, &state[2 * n..2 * n + n * n]);
        for seg in &curve.segments {
            let (velocity, span, geodesic) = match seg {
                Segment::Line { delta } => (delta, 1.0, false),
                Segment::Geodesic { velocity, param } => (velocity, *param, true),
            };
            if velocity.len() != n {
                return Err(Error::Invalid("segment has the wrong dimension".into()));
            }
            state[n..2 * n].copy_from_slice(velocity);
            let rhs = |_s: f64, y: &[f64], dy: &mut [f64]| -> bool {
                let (x, rest) = y.split_at(n);
                let (v, rest) = rest.split_at(n);
                let geo = match Geometry::at(self.connection, x, 1) {
                    Ok(geo) => geo,
                    Err(_) => return false,
                };
                dy[..n].copy_from_slice(v);
                if geodesic {
                    let acc = geo.gamma_on(v, v);
                    for k in 0..n {
                        dy[n + k] = -acc[k];
                    }
                } else {
                    dy[n..2 * n].iter_mut().for_each(|d| *d = 0.0);
                }
                for j in 0..n {
                    let col = &rest[j * n..(j + 1) * n];
                    let r = geo.gamma_on(v, col);
                    for k in 0..n {
                        dy[2 * n + j * n + k] = -r[k];
                    }
                }
                let gl = self.length_metric.eval_metric(x);
                let vv = DVector::from_column_slice(v);
                dy[2 * n + n * n] = vv.dot(&(gl * &vv)).max(0.0).sqrt();
                true
            };
            let observe = |_s: f64, y: &[f64]| drift = drift.max(self.drift(&y[..n], &y[2 * n..2 * n + n * n]));
            state = self.ode.integrate_observed(rhs, 0.0, span, &state, observe).map_err(|e| match e {
                OdeError::StepLimit(k) => Error::StepLimit(k),
                OdeError::Rejected { t, y } => Error::DomainExit { s: t, point: y[..n].to_vec() },
            })?;
        }
        let end = state[..n].to_vec();
        let frame = DMatrix::from_column_slice(n, n, &state[2 * n..2 * n + n * n]) * frame0;
        let s_end = reference_section(self.connection, &end)?;
        let raw = s_end.try_inverse().ok_or_else(|| Error::NotSpd { point: end.clone(), cond: f64::INFINITY })? * &frame;
        Ok(Transported { element: lie::polar(&raw), frame, length: state[2 * n + n * n], drift, end })
    }

    /// Holonomy of a closed curve, in the reference gauge at its start.
    pub fn holonomy(&self, curve: &Curve) -> Result<HolonomySample> {
        let n = self.connection.dim();
        let t = self.transport(curve, &DMatrix::identity(n, n))?;
        let gap = self.connection.displacement(&curve.start, &t.end);
        let scale = 1.0 + curve.start.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let tol = if curve.is_polyline() { CLOSURE_TOL } else { 1e-7 };
        if gap.iter().any(|d| d.abs() > tol * scale) {
            return Err(Error::Invalid(format!("curve `{}` is not closed (gap {gap:?})", curve.label)));
        }
        Ok(HolonomySample { element: t.element, length: t.length, descriptor: curve.label.clone() })
    }
}

/// Transport of `frame0` (relative to `s(start)`) along `curve`, relative to
/// `s(end)`.
pub fn parallel_transport(connection: &MetricSpec, curve: &Curve, frame0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(Transporter::new(connection).transport(curve, frame0)?.element)
}

/// Angle by which `e₁` turns towards `e₂` under a planar element.
pub fn rotation_angle(h: &DMatrix<f64>) -> f64 {
    h[(1, 0)].atan2(h[(0, 0)])
}

/// Difference of two angles reduced to `(-π, π]`.
pub fn angle_gap(a: f64, b: f64) -> f64 {
    use std::f64::consts::PI;
    let d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        d - 2.0 * PI
    } else {
        d
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HolonomySample {
    pub element: DMatrix<f64>,
    pub length: f64,
    pub descriptor: String,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    matrix: Vec<Vec<f64>>,
    length: f64,
    #[serde(rename = "loop")]
    descriptor: String,
}

impl HolonomySample {
    pub fn identity(n: usize) -> Self {
        HolonomySample { element: DMatrix::identity(n, n), length: 0.0, descriptor: "const".into() }
    }

    /// The reversed loop.
    pub fn inverse(&self) -> Self {
        HolonomySample { element: self.element.transpose(), length: self.length, descriptor: format!("rev({})", self.descriptor) }
    }

    /// `self` traversed first, then `next`.
    pub fn then(&self, next: &HolonomySample) -> Self {
        HolonomySample {
            element: &next.element * &self.element,
            length: self.length + next.length,
            descriptor: format!("{}+{}", self.descriptor, next.descriptor),
        }
    }

    fn record(&self) -> SampleRecord {
        let n = self.element.nrows();
        SampleRecord {
            matrix: (0..n).map(|i| self.element.row(i).iter().copied().collect()).collect(),
            length: self.length,
            descriptor: self.descriptor.clone(),
        }
    }
}

/// Writes samples as JSON lines `{matrix, length, loop}`.
pub fn write_samples<W: Write>(mut w: W, samples: &[HolonomySample]) -> Result<()> {
    for s in samples {
        let line = serde_json::to_string(&s.record()).map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_samples<R: BufRead>(r: R) -> Result<Vec<HolonomySample>> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| Error::Invalid(format!("sample line {}: {e}", k + 1)))?;
        let n = rec.matrix.len();
        if rec.matrix.iter().any(|row| row.len() != n) {
            return Err(Error::Invalid(format!("sample line {}: matrix is not square", k + 1)));
        }
        let element = DMatrix::from_fn(n, n, |i, j| rec.matrix[i][j]);
        if !lie::is_orthogonal(&element, 1e-8) {
            return Err(Error::Invalid(format!("sample line {}: matrix is not orthogonal", k + 1)));
        }
        out.push(HolonomySample { element, length: rec.length, descriptor: rec.descriptor });
    }
    Ok(out)
}

/// Generators of loops at a basepoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LoopFamily {
    /// One lasso per level of the `radial` coordinate.
    Lassos { radial: usize, angular: usize, levels: Vec<f64>, sweep: f64 },
    /// Coordinate triangles with random vertices within `size` of the
    /// basepoint in each coordinate.
    Triangles { count: usize, size: f64, seed: u64 },
    Explicit { curves: Vec<Curve> },
}

impl LoopFamily {
    pub fn curves(&self, metric: &MetricSpec, base: &[f64]) -> Result<Vec<Curve>> {
        match self {
            LoopFamily::Lassos { radial, angular, levels, sweep } => {
                let n = base.len();
                if *radial >= n || *angular >= n {
                    return Err(Error::Invalid("lasso coordinates out of range".into()));
                }
                Ok(levels.iter().map(|&l| Curve::lasso(base, *radial, *angular, l, *sweep)).collect())
            }
            LoopFamily::Triangles { count, size, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut out = Vec::with_capacity(*count);
                let mut attempts = 0;
                while out.len() < *count {
                    attempts += 1;
                    if attempts > 100 * count + 100 {
                        return Err(Error::Invalid("triangle vertices keep leaving the domain".into()));
                    }
                    let mut vertex = || -> Vec<f64> { base.iter().map(|x| x + rng.gen_range(-size..*size)).collect() };
                    let (q1, q2) = (vertex(), vertex());
                    if !metric.contains(&q1) || !metric.contains(&q2) {
                        continue;
                    }
                    let label = format!("tri{}", out.len());
                    out.push(Curve::polyline(&[base.to_vec(), q1, q2, base.to_vec()], &label)?);
                }
                Ok(out)
            }
            LoopFamily::Explicit { curves } => Ok(curves.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBudget {
    /// Longest word in the generating loops.
    pub max_word: usize,
    pub max_samples: usize,
}

impl Default for SampleBudget {
    fn default() -> Self {
        SampleBudget { max_word: 6, max_samples: 2000 }
    }
}

/// Inserts `s`, merging with a sample closer than [`DEDUP_TOL`]. Returns
/// whether a new element was added.
fn insert_dedup(set: &mut Vec<HolonomySample>, s: HolonomySample) -> bool {
    for t in set.iter_mut() {
        if (&t.element - &s.element).norm() < DEDUP_TOL {
            if s.length < t.length {
                *t = s;
            }
            return false;
        }
    }
    set.push(s);
    true
}

/// Deduplicated holonomy samples of the loops in `family` and their words,
/// always containing the identity (constant loop) and closed under inverses.
pub fn holonomy_samples(
    transporter: &Transporter,
    base: &[f64],
    family: &LoopFamily,
    budget: SampleBudget,
) -> Result<Vec<HolonomySample>> {
    let n = transporter.connection.dim();
    let curves = family.curves(transporter.connection, base)?;
    let loops: Vec<HolonomySample> = curves.par_iter().map(|c| transporter.holonomy(c)).collect::<Result<_>>()?;
    Ok(close_words(n, loops, budget))
}

/// Dedup of `loops` and their inverses, extended by words up to
/// `budget.max_word` letters.
pub fn close_words(n: usize, loops: Vec<HolonomySample>, budget: SampleBudget) -> Vec<HolonomySample> {
    let mut set = vec![HolonomySample::identity(n)];
    let mut gens = Vec::new();
    for s in loops {
        for t in [s.inverse(), s] {
            if insert_dedup(&mut set, t.clone()) {
                gens.push(t);
            }
        }
    }
    let mut frontier = gens.clone();
    for _ in 1..budget.max_word {
        let mut next = Vec::new();
        'outer: for w in &frontier {
            for g in &gens {
                if set.len() >= budget.max_samples {
                    break 'outer;
                }
                let s = w.then(g);
                if insert_dedup(&mut set, s.clone()) {
                    next.push(s);
                }
            }
        }
        if next.is_empty() || set.len() >= budget.max_samples {
            break;
        }
        frontier = next;
    }
    set
}

/// Upper bound on `L(a)`: shortest sample within `tol` of `target`.
pub fn min_loop_length(samples: &[HolonomySample], target: &DMatrix<f64>, tol: f64) -> f64 {
    let n = target.nrows();
    let mut best = if group_distance(&DMatrix::identity(n, n), target) <= tol { 0.0 } else { f64::INFINITY };
    for s in samples {
        if s.length < best && group_distance(&s.element, target) <= tol {
            best = s.length;
        }
    }
    best
}

/// `min_a √(L(a)² + d_b(a e, e')²)` over the samples and the constant loop.
pub fn fiber_distance(samples: &[HolonomySample], e: &DMatrix<f64>, e2: &DMatrix<f64>) -> f64 {
    let mut best = group_distance(e, e2);
    for s in samples {
        if s.length >= best {
            continue;
        }
        let d = group_distance(&(&s.element * e), e2);
        best = best.min(s.length.hypot(d));
    }
    best
}

/// One rung of a scale ladder for [`estimate_h0`].
#[derive(Clone, Debug)]
pub struct ScaleLevel {
    /// `λ` of the rescaling `λ⁻²g`, or `1/ε` for cap ladders.
    pub scale: f64,
    pub connection: MetricSpec,
    pub length_metric: Option<MetricSpec>,
    pub basepoint: Vec<f64>,
    pub family: LoopFamily,
    pub budget: SampleBudget,
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelReport {
    pub scale: f64,
    pub threshold: f64,
    pub samples: usize,
    pub kept: usize,
    /// Shortest loop with a non-identity element.
    pub shortest_nontrivial: f64,
    pub estimate: SubgroupEstimate,
}

#[derive(Clone, Debug, Serialize)]
pub struct H0Report {
    pub levels: Vec<LevelReport>,
    pub estimate: SubgroupEstimate,
    /// Same label over the last three levels (or all, if fewer).
    pub stable: bool,
}

/// Estimates `H₀` from a scale ladder, keeping loops of length at most
/// `λ^{-1/2}·diam` at each level.
pub fn estimate_h0(levels: &[ScaleLevel], diam: f64, opts: &ClassifyOptions) -> Result<(H0Report, Vec<Vec<HolonomySample>>)> {
    if levels.is_empty() {
        return Err(Error::Invalid("scale ladder is empty".into()));
    }
    let mut reports = Vec::new();
    let mut all = Vec::new();
    for lv in levels {
        let mut tr = Transporter::new(&lv.connection);
        if let Some(g) = &lv.length_metric {
            tr = tr.with_length_metric(g)?;
        }
        let samples = holonomy_samples(&tr, &lv.basepoint, &lv.family, lv.budget)?;
        let threshold = diam / lv.scale.sqrt();
        let n = lv.connection.dim();
        let id = DMatrix::identity(n, n);
        let pairs: Vec<(DMatrix<f64>, f64)> = samples.iter().map(|s| (s.element.clone(), s.length)).collect();
        let level_opts = ClassifyOptions { length_threshold: threshold, ..*opts };
        let estimate = classify_subgroup(&pairs, &level_opts)?;
        let shortest_nontrivial = samples
            .iter()
            .filter(|s| group_distance(&id, &s.element) > opts.power_tol)
            .map(|s| s.length)
            .fold(f64::INFINITY, f64::min);
        reports.push(LevelReport {
            scale: lv.scale,
            threshold,
            samples: samples.len(),
            kept: estimate.samples_used,
            shortest_nontrivial,
            estimate,
        });
        all.push(samples);
    }
    let tail = &reports[reports.len().saturating_sub(3)..];
    let stable = tail.iter().all(|r| r.estimate.label == tail[0].estimate.label);
    let mut estimate = reports.last().expect("nonempty").estimate.clone();
    if !stable {
        estimate.class = SubgroupClass::Other;
        estimate.label = estimate.class.label();
    }
    Ok((H0Report { levels: reports, estimate, stable }, all))
}

/// Sasaki-type metric on `TM` from a base metric and the Levi-Civita
/// connection of `connection`, whose metric also serves as fiber metric.
#[derive(Clone, Debug)]
pub struct SasakiSpec {
    pub base: MetricSpec,
    pub connection: MetricSpec,
}

#[derive(Clone, Debug)]
pub struct SasakiResult {
    pub value: f64,
    pub path: Curve,
    pub candidates: usize,
}

impl SasakiSpec {
    pub fn new(base: MetricSpec, connection: MetricSpec) -> Result<Self> {
        if base.dim() != connection.dim() {
            return Err(Error::Invalid("Sasaki data live on charts of different dimension".into()));
        }
        Ok(SasakiSpec { base, connection })
    }

    /// Transport as a linear map on coordinate vectors, with the length.
    fn transport_map(&self, curve: &Curve) -> Result<(DMatrix<f64>, f64, Vec<f64>)> {
        let n = self.base.dim();
        let tr = Transporter::new(&self.connection).with_length_metric(&self.base)?;
        let t = tr.transport(curve, &DMatrix::identity(n, n))?;
        let s0 = reference_section(&self.connection, &curve.start)?;
        let inv = s0.try_inverse().ok_or_else(|| Error::Invalid("degenerate reference section".into()))?;
        Ok((t.frame * inv, t.length, t.end))
    }

    fn norm_at(&self, q: &[f64], w: &DVector<f64>) -> f64 {
        w.dot(&(self.connection.eval_metric(q) * w)).max(0.0).sqrt()
    }

    /// Upper bound on the distance from `(p, v)` to `(q, u)`: the straight
    /// coordinate segment, optionally preceded by a loop at `p` from
    /// `detours`.
    pub fn distance(&self, p: &[f64], v: &[f64], q: &[f64], u: &[f64], detours: &[Curve]) -> Result<SasakiResult> {
        let n = self.base.dim();
        if [p, v, q, u].iter().any(|x| x.len() != n) {
            return Err(Error::Invalid("Sasaki endpoints have the wrong dimension".into()));
        }
        let step = self.connection.displacement(p, q);
        let target: Vec<f64> = p.iter().zip(&step).map(|(a, d)| a + d).collect();
        let straight = Curve::polyline(&[p.to_vec(), target], "segment")?;
        let (m, l, end) = self.transport_map(&straight)?;
        let (vv, uu) = (DVector::from_column_slice(v), DVector::from_column_slice(u));
        let value = |pre: &DMatrix<f64>, lp: f64| (lp + l).hypot(self.norm_at(&end, &(&m * pre * &vv - &uu)));
        let mut best = SasakiResult { value: value(&DMatrix::identity(n, n), 0.0), path: straight.clone(), candidates: 1 };
        let tried: Vec<Result<(f64, usize)>> = detours
            .par_iter()
            .enumerate()
            .map(|(k, c)| {
                if c.start.len() != n || self.connection.displacement(&c.start, p).iter().any(|d| d.abs() > CLOSURE_TOL) {
                    return Err(Error::Invalid(format!("detour `{}` is not based at p", c.label)));
                }
                let (h, lh, e) = self.transport_map(c)?;
                if self.connection.displacement(&e, p).iter().any(|d| d.abs() > 1e-7) {
                    return Err(Error::Invalid(format!("detour `{}` is not closed", c.label)));
                }
                Ok((value(&h, lh), k))
            })
            .collect();
        for r in tried {
            let (val, k) = r?;
            best.candidates += 1;
            if val < best.value {
                best.value = val;
                best.path = detours[k].then(&straight).unwrap_or_else(|_| detours[k].clone());
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::BuiltinFamily;
    use std::f64::consts::PI;

    fn sphere() -> MetricSpec {
        BuiltinFamily::RoundSphere { radius: 1.0 }.instantiate().unwrap()
    }

    #[test]
    fn latitude_holonomy_matches_closed_form() {
        let m = sphere();
        for th in [0.3, 1.0, PI / 2.0, 2.2] {
            let h = Transporter::new(&m).holonomy(&Curve::coordinate_circle(&[th, 0.5], 1, 2.0 * PI)).unwrap();
            let expected = 2.0 * PI * (1.0 - th.cos());
            assert!(angle_gap(rotation_angle(&h.element), expected).abs() < 1e-7, "{th}");
            assert!((h.length - 2.0 * PI * th.sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn flat_loops_are_trivial() {
        let m = BuiltinFamily::FlatEuclidean { n: 2 }.instantiate().unwrap();
        let fam = LoopFamily::Triangles { count: 5, size: 1.0, seed: 3 };
        let s = holonomy_samples(&Transporter::new(&m), &[0.0, 0.0], &fam, SampleBudget::default()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].length, 0.0);
    }

    #[test]
    fn words_of_a_rational_rotation_close_up() {
        let g = HolonomySample { element: lie::rotation2(2.0 * PI / 3.0), length: 1.0, descriptor: "g".into() };
        let s = close_words(2, vec![g], SampleBudget { max_word: 6, max_samples: 100 });
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|x| x.length <= 1.0));
    }

    #[test]
    fn fiber_distance_respects_components() {
        let samples = vec![HolonomySample::identity(2)];
        let refl = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(fiber_distance(&samples, &DMatrix::identity(2, 2), &refl).is_infinite());
        let r = lie::rotation2(0.4);
        assert!((fiber_distance(&samples, &DMatrix::identity(2, 2), &r) - 0.4 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn jsonl_round_trip() {
        let s = vec![HolonomySample { element: lie::rotation2(0.3), length: 1.5, descriptor: "c".into() }];
        let mut buf = Vec::new();
        write_samples(&mut buf, &s).unwrap();
        let back = read_samples(&buf[..]).unwrap();
        assert_eq!(back[0].descriptor, "c");
        assert!((&back[0].element - &s[0].element).amax() < 1e-15);
    }

    #[test]
    fn reversal_and_powers_of_polylines() {
        let c = Curve::lasso(&[0.5, 0.0], 0, 1, 0.3, 2.0 * PI);
        let r = c.reversed().unwrap();
        assert_eq!(r.start, vec![0.5, 2.0 * PI]);
        assert!(r.polyline_end().unwrap().iter().zip([0.5, 0.0]).all(|(a, b)| (a - b).abs() < 1e-15));
        assert_eq!(c.power(3).segments.len(), 9);
        assert!(c.then(&Curve::constant(&[0.5, 0.0])).is_err());
    }
}
