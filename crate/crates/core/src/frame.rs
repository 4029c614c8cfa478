//! Orthonormal frame bundles and the lifting metric `g̃`.
//!
//! A frame over `p` is stored as an orthogonal matrix `A` relative to the
//! reference section `s(p)`, the Gram–Schmidt orthonormalisation of the
//! coordinate vectors with respect to the connection metric `g'`. The chart
//! on `FM` uses coordinates `(x, t)` with frame `s(x) A₀ exp(τ(t))`, where
//! `τ(t) = Σ t^{λμ} e^{λμ}` over `λ < μ`.
//!
//! For a curve `(x(s), t(s))` the connection form is
//! `ω = A⁻¹ θ(ẋ) A + J(ṫ)` with `θ_m = s⁻¹(∂_m s + Γ'_m s)` and `J` the
//! left-trivialised differential of `exp` at `τ`. The lifting metric is
//! `g̃ = π*g + b(ω, ω)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::f64::consts::FRAC_PI_2;

use crate::dsl::MetricSpec;
use crate::error::{Error, Result};
use crate::lie::{self, b};
use crate::riemann::{checked_inverse, finite_difference_jet, CoordinateMetric, Geometry, MetricJet};

/// Largest total dimension accepted for direct curvature of `g̃`.
pub const DIRECT_CURVATURE_BUDGET: usize = 10;

/// Fiber coordinates are valid for `‖t‖_b` below this.
pub const FIBER_CHART_RADIUS: f64 = FRAC_PI_2;

/// Difference step for jets of `g̃`.
pub const JET_STEP: f64 = 2e-3;

/// A point of `FM`: base coordinates and the frame relative to `s(p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePoint {
    pub base: Vec<f64>,
    pub frame: DMatrix<f64>,
}

impl FramePoint {
    pub fn new(base: Vec<f64>, frame: DMatrix<f64>) -> Result<Self> {
        if frame.nrows() != base.len() || !lie::is_orthogonal(&frame, 1e-10) {
            return Err(Error::Invalid("frame matrix is not orthogonal of the base dimension".into()));
        }
        Ok(FramePoint { base, frame })
    }

    pub fn identity(base: Vec<f64>) -> Self {
        let n = base.len();
        FramePoint { base, frame: DMatrix::identity(n, n) }
    }

    /// Frame vectors as coordinate columns, `s(p) A`.
    pub fn vectors(&self, gp: &MetricSpec) -> Result<DMatrix<f64>> {
        Ok(reference_section(gp, &self.base)? * &self.frame)
    }
}

fn cholesky(g: &DMatrix<f64>, p: &[f64]) -> Result<DMatrix<f64>> {
    checked_inverse(g, p)?;
    Ok(g.clone().cholesky().ok_or_else(|| Error::NotSpd { point: p.to_vec(), cond: f64::INFINITY })?.l())
}

fn upper_inverse_transpose(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let linv = l.solve_lower_triangular(&DMatrix::identity(n, n)).expect("Cholesky factor is invertible");
    linv.transpose()
}

/// Reference orthonormal section: Gram–Schmidt of `∂_1, …, ∂_n` under `g'`,
/// which is `L^{-T}` for the Cholesky factor `g' = L Lᵀ`.
pub fn reference_section(gp: &MetricSpec, p: &[f64]) -> Result<DMatrix<f64>> {
    gp.check_domain(p)?;
    Ok(upper_inverse_transpose(&cholesky(&gp.eval_metric(p), p)?))
}

/// `α^{1/2}` for `α = g⁻¹g'`: the `g`-self-adjoint positive root with
/// `g'(v, w) = g(α^{1/2}v, α^{1/2}w)`.
pub fn transfer_map(g: &MetricSpec, gp: &MetricSpec, p: &[f64]) -> Result<DMatrix<f64>> {
    if g.dim() != gp.dim() {
        return Err(Error::Invalid("metrics live on charts of different dimension".into()));
    }
    g.check_domain(p)?;
    gp.check_domain(p)?;
    let l = cholesky(&g.eval_metric(p), p)?;
    cholesky(&gp.eval_metric(p), p)?;
    let n = g.dim();
    let linv = l.solve_lower_triangular(&DMatrix::identity(n, n)).expect("invertible");
    let m = &linv * gp.eval_metric(p) * linv.transpose();
    let eig = SymmetricEigen::new(0.5 * (&m + m.transpose()));
    let root = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()))
        * eig.eigenvectors.transpose();
    Ok(linv.transpose() * root * l.transpose())
}

/// `J(a) = Σ_k (−1)^k/(k+1)! ad_τ^k(a)`, so that `exp(−τ) d exp(τ)[a] = J(a)`.
pub fn dexp_left(tau: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut term = a.clone();
    let mut sum = a.clone();
    for k in 1..80 {
        term = lie::bracket(tau, &term) * (-1.0 / (k as f64 + 1.0));
        sum += &term;
        if term.amax() < 1e-18 * (1.0 + sum.amax()) {
            break;
        }
    }
    sum
}

/// Section and its connection-twisted derivatives at one base point.
struct SectionJet {
    /// `θ_m`, skew.
    theta: Vec<DMatrix<f64>>,
}

fn section_jet(gp: &MetricSpec, x: &[f64]) -> Result<SectionJet> {
    let n = gp.dim();
    let jet = gp.jet_unchecked(x, 1)?;
    let l = cholesky(&jet.metric(), x)?;
    let s = upper_inverse_transpose(&l);
    let linv = s.transpose();
    let geo = Geometry::from_jet(&jet, x)?;
    let mut theta = Vec::with_capacity(n);
    for m in 0..n {
        let dg = DMatrix::from_fn(n, n, |i, j| jet.dg(m, i, j));
        let xm = &linv * dg * linv.transpose();
        let phi = DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => xm[(i, j)],
            std::cmp::Ordering::Equal => 0.5 * xm[(i, i)],
            std::cmp::Ordering::Less => 0.0,
        });
        let dl = &l * phi;
        let gam = DMatrix::from_fn(n, n, |k, j| geo.gamma(k, m, j));
        let th = -dl.transpose() * &s + l.transpose() * gam * &s;
        debug_assert!(lie::skew_residual(&th) <= 1e-8 * (1.0 + th.amax()), "θ not skew: {th}");
        theta.push(lie::skew_part(&th));
    }
    Ok(SectionJet { theta })
}

/// Everything the chart needs at one point `(x, t)`.
struct Local {
    g: DMatrix<f64>,
    sec: SectionJet,
    /// `A₀ exp(τ)`.
    a: DMatrix<f64>,
    /// `J(e^α)` for each basis element.
    j: Vec<DMatrix<f64>>,
    /// Columns are the `e^α`-coordinates of `J(e^α)`.
    jmat: DMatrix<f64>,
}

/// Coordinate representation of `g̃` on `chart × exp-coordinates of O(n)`.
#[derive(Clone, Debug)]
pub struct LiftedMetricChart {
    g: MetricSpec,
    gp: MetricSpec,
    anchor: DMatrix<f64>,
    n: usize,
    m: usize,
    basis: Vec<DMatrix<f64>>,
}

impl LiftedMetricChart {
    /// Chart of `(FM^{g'}, g̃(g, g'))` around frames `s(x) A₀ exp(τ)`.
    pub fn new(g: &MetricSpec, gp: &MetricSpec, anchor: DMatrix<f64>) -> Result<Self> {
        let n = g.dim();
        if gp.dim() != n || g.coords() != gp.coords() {
            return Err(Error::Invalid("the two metrics must share one chart".into()));
        }
        if anchor.nrows() != n || !lie::is_orthogonal(&anchor, 1e-10) {
            return Err(Error::Invalid("anchor frame is not orthogonal".into()));
        }
        Ok(LiftedMetricChart { g: g.clone(), gp: gp.clone(), anchor, n, m: lie::algebra_dim(n), basis: lie::basis(n) })
    }

    pub fn base_metric(&self) -> &MetricSpec {
        &self.g
    }

    pub fn connection_metric(&self) -> &MetricSpec {
        &self.gp
    }

    pub fn anchor(&self) -> &DMatrix<f64> {
        &self.anchor
    }

    pub fn base_dim(&self) -> usize {
        self.n
    }

    pub fn fiber_dim(&self) -> usize {
        self.m
    }

    pub fn total_dim(&self) -> usize {
        self.n + self.m
    }

    /// `τ(t)`.
    pub fn tau(&self, t: &[f64]) -> DMatrix<f64> {
        lie::from_coords(self.n, t)
    }

    /// Frame matrix `A₀ exp(τ(t))` relative to the reference section.
    pub fn frame(&self, t: &[f64]) -> DMatrix<f64> {
        &self.anchor * lie::group_exp(&self.tau(t))
    }

    pub fn frame_point(&self, y: &[f64]) -> FramePoint {
        FramePoint { base: y[..self.n].to_vec(), frame: self.frame(&y[self.n..]) }
    }

    /// Chart coordinates of a frame point, if it lies in this chart.
    pub fn chart_point(&self, fp: &FramePoint) -> Result<Vec<f64>> {
        let rel = self.anchor.transpose() * &fp.frame;
        let tau = lie::group_log(&rel)?;
        if lie::b_norm(&tau) >= FIBER_CHART_RADIUS {
            return Err(Error::OutsideDomain(fp.base.clone()));
        }
        Ok(fp.base.iter().copied().chain(lie::coords(&tau).iter().copied()).collect())
    }

    fn check(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.total_dim() {
            return Err(Error::Invalid(format!("chart point has {} coordinates, expected {}", y.len(), self.total_dim())));
        }
        let x = &y[..self.n];
        self.g.check_domain(x)?;
        self.gp.check_domain(x)?;
        if lie::b_norm(&self.tau(&y[self.n..])) >= FIBER_CHART_RADIUS {
            return Err(Error::OutsideDomain(y.to_vec()));
        }
        Ok(())
    }

    fn local(&self, y: &[f64]) -> Result<Local> {
        let (x, t) = y.split_at(self.n);
        let tau = self.tau(t);
        let j: Vec<DMatrix<f64>> = self.basis.iter().map(|e| dexp_left(&tau, e)).collect();
        let mut jmat = DMatrix::zeros(self.m, self.m);
        for (col, ja) in j.iter().enumerate() {
            jmat.set_column(col, &lie::coords(ja));
        }
        Ok(Local {
            g: self.g.eval_metric(x),
            sec: section_jet(&self.gp, x)?,
            a: &self.anchor * lie::group_exp(&tau),
            j,
            jmat,
        })
    }

    fn theta_of(loc: &Local, v: &[f64]) -> DMatrix<f64> {
        let n = loc.a.nrows();
        let mut th = DMatrix::zeros(n, n);
        for (m, vm) in v.iter().enumerate() {
            th += &loc.sec.theta[m] * *vm;
        }
        th
    }

    fn omega(&self, loc: &Local, v: &[f64]) -> DMatrix<f64> {
        let (vx, vt) = v.split_at(self.n);
        let mut w = loc.a.transpose() * Self::theta_of(loc, vx) * &loc.a;
        for (ja, c) in loc.j.iter().zip(vt) {
            w += ja * *c;
        }
        w
    }

    fn fiber_coords_for(&self, loc: &Local, target: &DMatrix<f64>) -> Result<DVector<f64>> {
        loc.jmat
            .clone()
            .lu()
            .solve(&lie::coords(target))
            .ok_or_else(|| Error::Invalid("exponential chart is singular here".into()))
    }

    /// `ω(X)` for a chart tangent `X = (ẋ, ṫ)`.
    pub fn connection_form(&self, y: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
        self.check(y)?;
        if v.len() != self.total_dim() {
            return Err(Error::Invalid("tangent has the wrong number of components".into()));
        }
        Ok(self.omega(&self.local(y)?, v))
    }

    /// Horizontal lift of a base tangent `v`.
    pub fn horizontal_lift(&self, y: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check(y)?;
        let loc = self.local(y)?;
        let target = -(loc.a.transpose() * Self::theta_of(&loc, v) * &loc.a);
        let vt = self.fiber_coords_for(&loc, &target)?;
        Ok(v.iter().copied().chain(vt.iter().copied()).collect())
    }

    /// Fundamental vector field of the skew matrix `a` at `y`.
    pub fn fundamental(&self, y: &[f64], a: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check(y)?;
        let loc = self.local(y)?;
        let vt = self.fiber_coords_for(&loc, a)?;
        Ok(std::iter::repeat(0.0).take(self.n).chain(vt.iter().copied()).collect())
    }

    /// Matrix of the vertical projection `X ↦ ω(X)^*` in chart coordinates.
    pub fn vertical_projection(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        self.check(y)?;
        self.vertical_projection_unchecked(y)
    }

    pub(crate) fn vertical_projection_unchecked(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        let loc = self.local(y)?;
        let d = self.total_dim();
        let inv = loc.jmat.clone().try_inverse().ok_or_else(|| Error::Invalid("exponential chart is singular here".into()))?;
        let mut out = DMatrix::zeros(d, d);
        for c in 0..d {
            let mut v = vec![0.0; d];
            v[c] = 1.0;
            let vt = &inv * lie::coords(&self.omega(&loc, &v));
            for k in 0..self.m {
                out[(self.n + k, c)] = vt[k];
            }
        }
        Ok(out)
    }

    fn assemble(&self, loc: &Local) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        let mut out = DMatrix::zeros(n + m, n + m);
        let th = &loc.sec.theta;
        let conj: Vec<DMatrix<f64>> = loc.j.iter().map(|ja| &loc.a * ja * loc.a.transpose()).collect();
        for p in 0..n {
            for q in p..n {
                let v = loc.g[(p, q)] + b(&th[p], &th[q]);
                out[(p, q)] = v;
                out[(q, p)] = v;
            }
            for (al, c) in conj.iter().enumerate() {
                let v = b(&th[p], c);
                out[(p, n + al)] = v;
                out[(n + al, p)] = v;
            }
        }
        for al in 0..m {
            for be in al..m {
                let v = b(&loc.j[al], &loc.j[be]);
                out[(n + al, n + be)] = v;
                out[(n + be, n + al)] = v;
            }
        }
        out
    }

    /// `g̃` components in chart coordinates.
    pub fn metric(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        self.check(y)?;
        Ok(self.assemble(&self.local(y)?))
    }

    fn metric_unchecked(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.assemble(&self.local(y)?))
    }

    /// Columns `E_1..E_n` (lifts of the `g`-orthonormal Gram–Schmidt frame)
    /// followed by `U_α = (e^α)^*/√2`.
    pub fn adapted_frame(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        self.check(y)?;
        let loc = self.local(y)?;
        let (n, m) = (self.n, self.m);
        let eps = upper_inverse_transpose(&cholesky(&loc.g, &y[..n])?);
        let mut out = DMatrix::zeros(n + m, n + m);
        for i in 0..n {
            let v: Vec<f64> = eps.column(i).iter().copied().collect();
            let target = -(loc.a.transpose() * Self::theta_of(&loc, &v) * &loc.a);
            let vt = self.fiber_coords_for(&loc, &target)?;
            for k in 0..n {
                out[(k, i)] = v[k];
            }
            for k in 0..m {
                out[(n + k, i)] = vt[k];
            }
        }
        for (al, e) in self.basis.iter().enumerate() {
            let vt = self.fiber_coords_for(&loc, &(e / 2f64.sqrt()))?;
            for k in 0..m {
                out[(n + k, n + al)] = vt[k];
            }
        }
        Ok(out)
    }

    /// Jet of `g̃` by Richardson-extrapolated differences of the exact
    /// first-order construction.
    pub fn jet(&self, y: &[f64], order: usize) -> Result<MetricJet> {
        self.check(y)?;
        finite_difference_jet(|q| self.metric_unchecked(q), y, order, JET_STEP)
    }

    fn budget(&self) -> Result<()> {
        if self.total_dim() > DIRECT_CURVATURE_BUDGET {
            return Err(Error::Budget(self.total_dim(), DIRECT_CURVATURE_BUDGET));
        }
        Ok(())
    }

    /// Jet of `g̃` without the chart-domain test, for nested stencils.
    pub(crate) fn jet_unchecked(&self, y: &[f64], order: usize) -> Result<MetricJet> {
        finite_difference_jet(|q| self.metric_unchecked(q), y, order, JET_STEP)
    }

    /// Direct curvature data of `g̃` at a chart point.
    pub fn geometry_at(&self, y: &[f64], order: usize) -> Result<Geometry> {
        if order >= 2 {
            self.budget()?;
        }
        Geometry::from_jet(&self.jet(y, order)?, y)
    }

    /// Ricci tensor of `g̃` in chart coordinates.
    pub fn ricci_direct(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.geometry_at(y, 2)?.ricci())
    }

    /// Samples `g̃` on a `k^d` lattice spanning the given boxes, in the
    /// plain-text grid layout: a header line, then one line per node with
    /// coordinates followed by the upper-triangular components.
    pub fn export_grid(&self, lo: &[f64], hi: &[f64], k: usize) -> Result<String> {
        let d = self.total_dim();
        if lo.len() != d || hi.len() != d || k < 2 {
            return Err(Error::Invalid("grid box must match the chart dimension and use k >= 2".into()));
        }
        let mut out = String::new();
        out.push_str(&format!("# framelab lifted-metric grid dim={d} k={k}\n"));
        let total = k.pow(d as u32);
        for idx in 0..total {
            let mut rem = idx;
            let mut y = vec![0.0; d];
            for a in (0..d).rev() {
                let i = rem % k;
                rem /= k;
                y[a] = lo[a] + (hi[a] - lo[a]) * i as f64 / (k - 1) as f64;
            }
            let gt = self.metric(&y)?;
            let mut cols: Vec<String> = y.iter().map(|v| format!("{v:.17e}")).collect();
            for i in 0..d {
                for j in i..d {
                    cols.push(format!("{:.17e}", gt[(i, j)]));
                }
            }
            out.push_str(&cols.join(" "));
            out.push('\n');
        }
        Ok(out)
    }
}

impl CoordinateMetric for LiftedMetricChart {
    fn dim(&self) -> usize {
        self.total_dim()
    }

    fn geometry(&self, p: &[f64], order: usize) -> Result<Geometry> {
        self.geometry_at(p, order)
    }

    fn metric_at(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        self.metric(p)
    }
}

/// Canonical lifting metric `g(ẋ, ẋ) + Σ_j |∇_X e_j|²_g` at chart point `y`,
/// built from `g`'s own Levi-Civita connection and a differentiated frame
/// field rather than from the connection form.
pub fn canonical_lifting_metric(m: &MetricSpec, anchor: &DMatrix<f64>, y: &[f64]) -> Result<DMatrix<f64>> {
    let n = m.dim();
    let d = n + lie::algebra_dim(n);
    if y.len() != d || anchor.nrows() != n {
        return Err(Error::Invalid(format!("expected a chart point of length {d} and an {n}x{n} anchor")));
    }
    let gram_schmidt = |g: &DMatrix<f64>| {
        let ip = |u: &DVector<f64>, v: &DVector<f64>| u.dot(&(g * v));
        let mut out: Vec<DVector<f64>> = Vec::new();
        for k in 0..n {
            let mut v = DVector::from_fn(n, |i, _| if i == k { 1.0 } else { 0.0 });
            for e in &out {
                v -= e * ip(e, &v);
            }
            let nv = ip(&v, &v).sqrt();
            out.push(v / nv);
        }
        DMatrix::from_columns(&out)
    };
    let frame = |q: &[f64]| gram_schmidt(&m.eval_metric(&q[..n])) * anchor * lie::group_exp(&lie::from_coords(n, &q[n..]));
    let h = 1e-3;
    let deriv = |a: usize| {
        let shifted = |s: f64| {
            let mut q = y.to_vec();
            q[a] += s;
            frame(&q)
        };
        let d1 = (shifted(h) - shifted(-h)) / (2.0 * h);
        let d2 = (shifted(h / 2.0) - shifted(-h / 2.0)) / h;
        (d2 * 4.0 - d1) / 3.0
    };
    m.check_domain(&y[..n])?;
    let e = frame(y);
    let geo = Geometry::at(m, &y[..n], 1)?;
    let g = m.eval_metric(&y[..n]);
    let cov: Vec<DMatrix<f64>> = (0..d)
        .map(|a| {
            let mut de = deriv(a);
            if a < n {
                for j in 0..n {
                    for k in 0..n {
                        de[(k, j)] += (0..n).map(|l| geo.gamma(k, a, l) * e[(l, j)]).sum::<f64>();
                    }
                }
            }
            de
        })
        .collect();
    Ok(DMatrix::from_fn(d, d, |a, c| {
        let base = if a < n && c < n { g[(a, c)] } else { 0.0 };
        let fib: f64 = (0..n).map(|j| cov[a].column(j).dot(&(&g * cov[c].column(j)))).sum();
        base + fib
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_metric, BuiltinFamily};
    use crate::lie::{random_orthogonal, random_skew};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere() -> MetricSpec {
        BuiltinFamily::RoundSphere { radius: 1.0 }.instantiate().unwrap()
    }

    fn quad(m: &DMatrix<f64>, u: &[f64], v: &[f64]) -> f64 {
        DVector::from_column_slice(u).dot(&(m * DVector::from_column_slice(v)))
    }

    #[test]
    fn transfer_map_identities() {
        let s = sphere();
        let p = [1.0, 0.5];
        assert!((transfer_map(&s, &s, &p).unwrap() - DMatrix::identity(2, 2)).amax() < 1e-12);
        let big = s.rescaled(3.0).unwrap();
        assert!((transfer_map(&s, &big, &p).unwrap() - DMatrix::identity(2, 2) * 3.0).amax() < 1e-12);
        let g = parse_metric("coords x y z; domain x in [-0.5, 0.5] y in [-1, 1] z in [0, 1]; g = [[2, 0.3, x], [0.3, 1 + y^2, 0.1], [x, 0.1, 3]]").unwrap();
        let gp = parse_metric("coords x y z; domain x in [-0.5, 0.5] y in [-1, 1] z in [0, 1]; g = [[1, 0, 0.2], [0, 2 + z, 0.4 * y], [0.2, 0.4 * y, 1.5]]").unwrap();
        let q = [0.2, -0.4, 0.6];
        let al = transfer_map(&g, &gp, &q).unwrap();
        let (gm, gpm) = (g.eval_metric(&q), gp.eval_metric(&q));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let av: Vec<f64> = (&al * DVector::from_column_slice(&v)).iter().copied().collect();
            let aw: Vec<f64> = (&al * DVector::from_column_slice(&w)).iter().copied().collect();
            assert!((quad(&gpm, &v, &w) - quad(&gm, &av, &aw)).abs() < 1e-10);
        }
    }

    #[test]
    fn reference_section_is_orthonormal() {
        let s = sphere();
        let e = reference_section(&s, &[0.7, 0.0]).unwrap();
        let gram = e.transpose() * s.eval_metric(&[0.7, 0.0]) * &e;
        assert!((gram - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn dexp_matches_difference_quotient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tau = random_skew(3, &mut rng, 0.4);
        let a = random_skew(3, &mut rng, 1.0);
        let h = 1e-6;
        let fd = (lie::group_exp(&(&tau + &a * h)) - lie::group_exp(&(&tau - &a * h))) / (2.0 * h);
        let lhs = lie::group_exp(&-&tau) * fd;
        assert!((lhs - dexp_left(&tau, &a)).amax() < 1e-8);
    }

    #[test]
    fn flat_plane_lift_is_a_product() {
        let m = BuiltinFamily::FlatEuclidean { n: 2 }.instantiate().unwrap();
        let c = LiftedMetricChart::new(&m, &m, DMatrix::identity(2, 2)).unwrap();
        let y = [0.3, -0.2, 0.4];
        let gt = c.metric(&y).unwrap();
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 2.0]));
        assert!((gt - expect).amax() < 1e-14);
        let w = c.connection_form(&y, &[0.0, 0.0, 1.0]).unwrap();
        assert!((w - lie::basis_element(2, 0, 1)).amax() < 1e-14);
        let lift = c.horizontal_lift(&y, &[1.0, 0.0]).unwrap();
        assert!(lift[2].abs() < 1e-15);
        let geo = c.geometry_at(&y, 1).unwrap();
        assert!(geo.connection(&y).gamma.max_abs() < 1e-12);
    }

    #[test]
    fn connection_form_defining_properties() {
        let s = sphere();
        let cone = BuiltinFamily::SmoothedCone { a: 0.6, eps: 0.2 }.instantiate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (g, gp) in [(&s, &s), (&cone, &cone.rescaled(1.3).unwrap())] {
            let c = LiftedMetricChart::new(g, gp, random_orthogonal(2, &mut rng, -1.0)).unwrap();
            let y = [0.35, 0.4, 0.3];
            let v = [0.7, -1.1];
            let lift = c.horizontal_lift(&y, &v).unwrap();
            assert_eq!(&lift[..2], &v);
            assert!(c.connection_form(&y, &lift).unwrap().amax() < 1e-12);
            let e12 = lie::basis_element(2, 0, 1);
            let star = c.fundamental(&y, &e12).unwrap();
            assert!((c.connection_form(&y, &star).unwrap() - &e12).amax() < 1e-12);
        }
    }

    #[test]
    fn vertical_block_is_b_in_the_fundamental_basis() {
        let s = sphere();
        let cone_a = BuiltinFamily::SmoothedCone { a: 0.5, eps: 0.1 }.instantiate().unwrap();
        let cone_b = BuiltinFamily::SmoothedCone { a: 0.5, eps: 0.2 }.instantiate().unwrap();
        let g3 = BuiltinFamily::FlatEuclidean { n: 3 }.instantiate().unwrap();
        let g3p = parse_metric("coords x y z; domain x in [-1, 1] y in [-1, 1] z in [-1, 1]; g = [[1 + 0.2*y^2, 0.1*z, 0], [0.1*z, 1, 0.05*x], [0, 0.05*x, 2]]").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cases: Vec<(&MetricSpec, &MetricSpec, Vec<f64>)> =
            vec![(&s, &s, vec![1.1, 0.2, 0.5]), (&cone_a, &cone_b, vec![0.15, 1.0, -0.6]), (&g3, &g3p, vec![0.2, -0.3, 0.5, 0.3, -0.2, 0.4])];
        for (g, gp, y) in cases {
            let n = g.dim();
            let c = LiftedMetricChart::new(g, gp, random_orthogonal(n, &mut rng, 1.0)).unwrap();
            let gt = c.metric(&y).unwrap();
            let fr = c.adapted_frame(&y).unwrap();
            let gram = fr.transpose() * &gt * &fr;
            assert!((&gram - DMatrix::identity(c.total_dim(), c.total_dim())).amax() < 1e-9, "{gram}");
            // fundamental fields of e^{λμ} have Gram matrix 2I
            let t2 = &fr.columns(n, c.fiber_dim()) * 2f64.sqrt();
            let vv = t2.transpose() * &gt * &t2;
            assert!((vv - DMatrix::identity(c.fiber_dim(), c.fiber_dim()) * 2.0).amax() < 1e-9);
            // horizontal block is the pullback of g
            let h = fr.columns(0, n).into_owned();
            let pulled = h.rows(0, n).transpose() * g.eval_metric(&y[..n]) * h.rows(0, n);
            assert!((h.transpose() * &gt * &h - pulled).amax() < 1e-9);
        }
    }

    #[test]
    fn over_budget_direct_curvature_is_rejected() {
        let m = BuiltinFamily::FlatEuclidean { n: 5 }.instantiate().unwrap();
        let c = LiftedMetricChart::new(&m, &m, DMatrix::identity(5, 5)).unwrap();
        let y = vec![0.0; 15];
        assert!(matches!(c.ricci_direct(&y), Err(Error::Budget(15, 10))));
        assert!(c.metric(&y).is_ok());
    }

    #[test]
    fn chart_point_round_trip() {
        let s = sphere();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = LiftedMetricChart::new(&s, &s, random_orthogonal(2, &mut rng, 1.0)).unwrap();
        let y = [0.8, 2.0, -0.7];
        let back = c.chart_point(&c.frame_point(&y)).unwrap();
        for (a, b) in y.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_export_has_one_line_per_node() {
        let m = BuiltinFamily::FlatEuclidean { n: 2 }.instantiate().unwrap();
        let c = LiftedMetricChart::new(&m, &m, DMatrix::identity(2, 2)).unwrap();
        let txt = c.export_grid(&[0.0, 0.0, 0.0], &[1.0, 1.0, 0.5], 3).unwrap();
        assert_eq!(txt.lines().count(), 1 + 27);
    }
}
