//! Curvature of `(FM^{g_ε}, g̃)` through O'Neill's formulas.
//!
//! Vertical quantities are reported as `ω`-values, skew matrices in `o(n)`.
//! With the curvature conventions of [`crate::riemann`]:
//!
//! * `ω(A_X Y) = a(x, y)` with `a_{λμ} = ½ R_ε(x, y, e_λ, e_μ)`;
//! * `ω((∇̃_Z A)_X Y)^V = c(z, x, y)` with
//!   `c_{λμ} = ½[(∇R_ε)(z, x, y, e_λ, e_μ) + R_ε(x, y, D(z, e_λ), e_μ) + R_ε(x, y, e_λ, D(z, e_μ))]`,
//!   `∇` the Levi-Civita connection of `g` and `D = ∇ − ∇^ε`.
//!
//! Relative to the unit vertical fields `U_{λμ} = (e^{λμ})^*/√2` the
//! components are `√2 a_{λμ}` and `√2 c_{λμ}`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dsl::{Interval, MetricSpec};
use crate::error::{Error, Result};
use crate::frame::{FramePoint, LiftedMetricChart, JET_STEP};
use crate::lie::{self, b};
use crate::riemann::{Geometry, Tensor};

/// Sign of the horizontal–vertical Ricci block in
/// `Ric̃(E_i, U) = CROSS_SIGN · Σ_k b(c(ε_k, ε_k, ε_i), ω(U))`.
pub const CROSS_SIGN: f64 = 1.0;

/// Curvature-hypothesis magnitudes above this are flagged.
pub const BLOWUP: f64 = 1e6;

/// Curvature data of both metrics at one frame point.
pub struct ONeillContext {
    pub g: MetricSpec,
    pub ge: MetricSpec,
    pub point: FramePoint,
    pub chart: LiftedMetricChart,
    geo_g: Geometry,
    geo_e: Geometry,
    /// `D^k_{ij}` flattened `[k, i, j]`.
    diff: Vec<f64>,
    /// `g_ε`-orthonormal frame `e = s(p) A`, as columns.
    pub e: DMatrix<f64>,
    /// `g`-orthonormal base frame `ε_i`, as columns.
    pub eps: DMatrix<f64>,
    n: usize,
}

/// Term-by-term assembly of `Ric̃(X, X)`.
#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct RicciTerms {
    pub hh: f64,
    pub hv_mixed: f64,
    pub vv: f64,
    pub cross: f64,
}

/// Pointwise sizes of the hypotheses of the Ricci bound.
#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct Hypotheses {
    /// `|g − g_ε|_g`.
    pub eps_hat: f64,
    /// `|∇ − ∇^ε|_g`.
    pub delta_hat: f64,
    /// `sup |sec_{g_ε}|`.
    pub k_hat: f64,
    /// `|∇^ε R^ε|_{g_ε}`.
    pub kk_hat: f64,
}

impl Hypotheses {
    fn sup(&self, o: &Hypotheses) -> Hypotheses {
        Hypotheses {
            eps_hat: self.eps_hat.max(o.eps_hat),
            delta_hat: self.delta_hat.max(o.delta_hat),
            k_hat: self.k_hat.max(o.k_hat),
            kk_hat: self.kk_hat.max(o.kk_hat),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RicciReport {
    /// Chart coordinates `(x, t)` of the frame point.
    pub point: Vec<f64>,
    /// Direction in chart coordinates.
    pub direction: Vec<f64>,
    pub ricci_formula: f64,
    pub ricci_direct: Option<f64>,
    pub terms: RicciTerms,
    pub hypotheses: Hypotheses,
    pub conventions: &'static str,
}

pub const CONVENTIONS: &str = "R(X,Y)Z = [∇X,∇Y]Z − ∇[X,Y]Z; R(X,Y,Z,W) = <R(X,Y)Z,W>; sec = R(X,Y,Y,X)/|X∧Y|²; \
     ω(A_X Y) = ½R_ε(x,y,e_λ,e_μ); Ric̃(E_i,U) = Σ_k b(c(ε_k,ε_k,ε_i),ω(U))";

fn cholesky_frame(g: &DMatrix<f64>, p: &[f64]) -> Result<DMatrix<f64>> {
    crate::riemann::orthonormal_frame(g).ok_or_else(|| Error::NotSpd { point: p.to_vec(), cond: f64::INFINITY })
}

fn col(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
    m.column(j).iter().copied().collect()
}

impl ONeillContext {
    pub fn new(g: &MetricSpec, ge: &MetricSpec, point: FramePoint) -> Result<Self> {
        let p = point.base.clone();
        let chart = LiftedMetricChart::new(g, ge, point.frame.clone())?;
        let geo_g = Geometry::at(g, &p, 2)?;
        let geo_e = Geometry::at(ge, &p, 3)?;
        let n = g.dim();
        let mut diff = vec![0.0; n * n * n];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    diff[(k * n + i) * n + j] = geo_g.gamma(k, i, j) - geo_e.gamma(k, i, j);
                }
            }
        }
        let e = point.vectors(ge)?;
        let eps = cholesky_frame(&geo_g.g, &p)?;
        Ok(ONeillContext { g: g.clone(), ge: ge.clone(), point, chart, geo_g, geo_e, diff, e, eps, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Chart coordinates of the context point (fiber coordinate 0).
    pub fn chart_point(&self) -> Vec<f64> {
        let mut y = self.point.base.clone();
        y.extend(std::iter::repeat(0.0).take(lie::algebra_dim(self.n)));
        y
    }

    /// `D(z, w) = (∇ − ∇^ε)_z w`.
    pub fn connection_difference(&self, z: &[f64], w: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|k| {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        s += self.diff[(k * n + i) * n + j] * z[i] * w[j];
                    }
                }
                s
            })
            .collect()
    }

    /// `(∇R_ε)(z, x, y, u, w)` with `∇` the Levi-Civita connection of `g`.
    fn nabla_g_riemann_e(&self, z: &[f64], x: &[f64], y: &[f64], u: &[f64], w: &[f64]) -> f64 {
        let r = |a: &[f64], b: &[f64], c: &[f64], d: &[f64]| self.geo_e.riemann_on(a, b, c, d);
        let dz = |v: &[f64]| self.connection_difference(z, v);
        self.geo_e.nabla_riemann_on(z, x, y, u, w)
            - r(&dz(x), y, u, w)
            - r(x, &dz(y), u, w)
            - r(x, y, &dz(u), w)
            - r(x, y, u, &dz(w))
    }

    /// `ω(A_X Y)` for horizontal `X, Y` given by their projections.
    pub fn a_base(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |l, m| 0.5 * self.geo_e.riemann_on(x, y, &col(&self.e, l), &col(&self.e, m)))
    }

    /// Vertical part of `(∇̃_Z A)_X Y` as an `ω`-value, for horizontal
    /// `Z, X, Y` given by their projections.
    pub fn covariant_a_base(&self, z: &[f64], x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let r = |a: &[f64], b: &[f64], c: &[f64], d: &[f64]| self.geo_e.riemann_on(a, b, c, d);
        DMatrix::from_fn(n, n, |l, m| {
            let el = col(&self.e, l);
            let em = col(&self.e, m);
            0.5 * (self.nabla_g_riemann_e(z, x, y, &el, &em)
                + r(x, y, &self.connection_difference(z, &el), &em)
                + r(x, y, &el, &self.connection_difference(z, &em)))
        })
    }

    fn horizontal_part(&self, v: &[f64]) -> Result<Vec<f64>> {
        let y0 = self.chart_point();
        if v.len() != self.chart.total_dim() {
            return Err(Error::Invalid("tangent has the wrong number of components".into()));
        }
        let w = self.chart.connection_form(&y0, v)?;
        let scale = v.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if w.amax() > 1e-9 * (1.0 + scale) {
            return Err(Error::Invalid(format!("tangent is not horizontal: |ω| = {:.3e}", w.amax())));
        }
        Ok(v[..self.n].to_vec())
    }

    /// `ω((∇̃_X Y)^V)` for horizontal chart tangents.
    pub fn a_tensor_vertical(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.a_base(&self.horizontal_part(x)?, &self.horizontal_part(y)?))
    }

    pub fn covariant_a_horizontal(&self, z: &[f64], x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.covariant_a_base(&self.horizontal_part(z)?, &self.horizontal_part(x)?, &self.horizontal_part(y)?))
    }

    /// Ricci tensor of `g̃` in the adapted frame `(E_1..E_n, U_1..U_m)`.
    pub fn ricci_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let m = lie::algebra_dim(n);
        let basis = lie::basis(n);
        let u: Vec<DMatrix<f64>> = basis.iter().map(|e| e / 2f64.sqrt()).collect();
        let eps: Vec<Vec<f64>> = (0..n).map(|i| col(&self.eps, i)).collect();
        let a: Vec<Vec<DMatrix<f64>>> = (0..n).map(|i| (0..n).map(|k| self.a_base(&eps[i], &eps[k])).collect()).collect();
        let ric_g = &self.eps.transpose() * self.geo_g.ricci() * &self.eps;
        let mut out = DMatrix::zeros(n + m, n + m);
        for i in 0..n {
            for j in 0..n {
                let s: f64 = (0..n).map(|k| b(&a[i][k], &a[j][k])).sum();
                out[(i, j)] = ric_g[(i, j)] - 2.0 * s;
            }
        }
        let ricci_fiber = (n as f64 - 2.0) / 4.0;
        for al in 0..m {
            for be in 0..m {
                let mut s = if al == be { ricci_fiber } else { 0.0 };
                for k in 0..n {
                    for l in 0..n {
                        s += b(&u[al], &a[k][l]) * b(&u[be], &a[k][l]);
                    }
                }
                out[(n + al, n + be)] = s;
            }
        }
        for i in 0..n {
            let mut c = DMatrix::zeros(n, n);
            for k in 0..n {
                c += self.covariant_a_base(&eps[k], &eps[k], &eps[i]);
            }
            for al in 0..m {
                let v = CROSS_SIGN * b(&c, &u[al]);
                out[(i, n + al)] = v;
                out[(n + al, i)] = v;
            }
        }
        out
    }

    /// Adapted-frame components `(h, v)` of a chart tangent.
    pub fn adapted_components(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let y0 = self.chart_point();
        let w = self.chart.connection_form(&y0, x)?;
        let h = self.eps.clone().lu().solve(&DVector::from_column_slice(&x[..self.n])).expect("frame is invertible");
        let v = lie::coords(&w) * 2f64.sqrt();
        Ok((h.iter().copied().collect(), v.iter().copied().collect()))
    }

    /// Term breakdown of `Ric̃(X, X)`.
    pub fn ricci_terms(&self, x: &[f64]) -> Result<RicciTerms> {
        let n = self.n;
        let (h, v) = self.adapted_components(x)?;
        let xb: Vec<f64> = (&self.eps * DVector::from_column_slice(&h)).iter().copied().collect();
        let omega = lie::from_coords(n, &v.iter().map(|c| c / 2f64.sqrt()).collect::<Vec<_>>());
        let eps: Vec<Vec<f64>> = (0..n).map(|i| col(&self.eps, i)).collect();
        let mut big_s = 0.0;
        for e in &eps {
            let a = self.a_base(&xb, e);
            big_s += 4.0 * b(&a, &a);
        }
        let ric = DVector::from_column_slice(&xb).dot(&(self.geo_g.ricci() * DVector::from_column_slice(&xb)));
        let mut hv = 0.25 * big_s;
        for k in 0..n {
            for l in 0..n {
                hv += b(&omega, &self.a_base(&eps[k], &eps[l])).powi(2);
            }
        }
        let mut c = DMatrix::zeros(n, n);
        for e in &eps {
            c += self.covariant_a_base(e, e, &xb);
        }
        Ok(RicciTerms {
            hh: ric - 0.75 * big_s,
            hv_mixed: hv,
            vv: (n as f64 - 2.0) / 4.0 * b(&omega, &omega),
            cross: 2.0 * CROSS_SIGN * b(&c, &omega),
        })
    }

    pub fn hypotheses(&self) -> Result<Hypotheses> {
        let p = &self.point.base;
        let n = self.n;
        let gdiff = &self.geo_g.g - &self.geo_e.g;
        let tg = Tensor { n, slots: vec![crate::riemann::Slot::Down; 2], data: gdiff.transpose().iter().copied().collect() };
        let td = Tensor {
            n,
            slots: vec![crate::riemann::Slot::Up, crate::riemann::Slot::Down, crate::riemann::Slot::Down],
            data: self.diff.clone(),
        };
        Ok(Hypotheses {
            eps_hat: tg.norm(&self.geo_g.g)?,
            delta_hat: td.norm(&self.geo_g.g)?,
            k_hat: sectional_sup(&self.geo_e, &self.e),
            kk_hat: self.geo_e.gradient(p).tensor.norm(&self.geo_e.g)?,
        })
    }

    /// Formula value of `Ric̃(X, X)` with the direct value when the
    /// dimension budget allows it.
    pub fn ricci_oneill(&self, x: &[f64], direct: bool) -> Result<RicciReport> {
        let y0 = self.chart_point();
        let gt = self.chart.metric(&y0)?;
        let xv = DVector::from_column_slice(x);
        let norm = xv.dot(&(&gt * &xv));
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::Invalid(format!("direction is not g̃-unit: |X|² = {norm}")));
        }
        let terms = self.ricci_terms(x)?;
        let ricci_direct = if direct { Some(ricci_direct(&self.chart, &y0, x)?) } else { None };
        Ok(RicciReport {
            point: y0,
            direction: x.to_vec(),
            ricci_formula: terms.hh + terms.hv_mixed + terms.vv + terms.cross,
            ricci_direct,
            terms,
            hypotheses: self.hypotheses()?,
            conventions: CONVENTIONS,
        })
    }
}

/// `sup |sec|` over 2-planes: exact through the curvature operator for
/// `n ≤ 3`, otherwise over frame planes and a fixed family of random planes.
fn sectional_sup(geo: &Geometry, frame: &DMatrix<f64>) -> f64 {
    let n = geo.n;
    if n < 2 {
        return 0.0;
    }
    let e: Vec<Vec<f64>> = (0..n).map(|i| col(frame, i)).collect();
    let pairs = lie::pairs(n);
    if n <= 3 {
        let op = DMatrix::from_fn(pairs.len(), pairs.len(), |p, q| {
            let (i, j) = pairs[p];
            let (k, l) = pairs[q];
            geo.riemann_on(&e[i], &e[j], &e[l], &e[k])
        });
        return SymmetricEigen::new(op).eigenvalues.amax();
    }
    let mut best: f64 = 0.0;
    for &(i, j) in &pairs {
        best = best.max(geo.sectional(&e[i], &e[j]).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ec);
    for _ in 0..64 {
        let q = lie::random_orthogonal(n, &mut rng, 1.0);
        let x: Vec<f64> = (frame * q.column(0)).iter().copied().collect();
        let y: Vec<f64> = (frame * q.column(1)).iter().copied().collect();
        best = best.max(geo.sectional(&x, &y).abs());
    }
    best
}

/// `Ric̃(X, X)` from direct curvature of the coordinate metric `g̃`.
pub fn ricci_direct(chart: &LiftedMetricChart, y: &[f64], x: &[f64]) -> Result<f64> {
    let ric = chart.ricci_direct(y)?;
    let xv = DVector::from_column_slice(x);
    Ok(xv.dot(&(ric * &xv)))
}

/// `O'Neill A` tensor field `A^k_{ij}` of `g̃` from the direct connection,
/// flattened `[k, i, j]`.
fn a_field(chart: &LiftedMetricChart, y: &[f64]) -> Result<Vec<f64>> {
    let d = chart.total_dim();
    let geo = Geometry::from_jet(&chart.jet_unchecked(y, 1)?, y)?;
    let pv = chart.vertical_projection_unchecked(y)?;
    let ph = DMatrix::identity(d, d) - &pv;
    let dpv = difference(|q| chart.vertical_projection_unchecked(q), y)?;
    let gam = |e: &DVector<f64>, w: &DVector<f64>| -> DVector<f64> {
        let ev: Vec<f64> = e.iter().copied().collect();
        let wv: Vec<f64> = w.iter().copied().collect();
        geo.gamma_on(&ev, &wv)
    };
    let mut out = vec![0.0; d * d * d];
    for i in 0..d {
        let e = ph.column(i).into_owned();
        let mut de = DMatrix::zeros(d, d);
        for c in 0..d {
            de += &dpv[c] * e[c];
        }
        for j in 0..d {
            let vj = pv.column(j).into_owned();
            let hj = ph.column(j).into_owned();
            let dvj = de.column(j).into_owned();
            let a = &ph * (&dvj + gam(&e, &vj)) + &pv * (-&dvj + gam(&e, &hj));
            for k in 0..d {
                out[(k * d + i) * d + j] = a[k];
            }
        }
    }
    Ok(out)
}

/// Richardson-extrapolated central differences of a matrix field, one
/// matrix per coordinate direction.
fn difference<F>(f: F, y: &[f64]) -> Result<Vec<DMatrix<f64>>>
where
    F: Fn(&[f64]) -> Result<DMatrix<f64>>,
{
    let h = JET_STEP;
    let mut out = Vec::new();
    for c in 0..y.len() {
        let mut est = Vec::new();
        for s in [h, 0.5 * h] {
            let mut p = y.to_vec();
            let mut q = y.to_vec();
            p[c] += s;
            q[c] -= s;
            est.push((f(&p)? - f(&q)?) / (2.0 * s));
        }
        out.push((&est[1] * 4.0 - &est[0]) / 3.0);
    }
    Ok(out)
}

/// `(∇̃_Z A)_X Y` in chart coordinates, by differences of the direct `A`.
pub fn covariant_a_direct(chart: &LiftedMetricChart, y: &[f64], z: &[f64], x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let d = chart.total_dim();
    let a0 = a_field(chart, y)?;
    let geo = Geometry::from_jet(&chart.jet_unchecked(y, 1)?, y)?;
    let da = difference(
        |q| {
            let a = a_field(chart, q)?;
            Ok(DMatrix::from_column_slice(a.len(), 1, &a))
        },
        y,
    )?;
    let at = |k: usize, i: usize, j: usize| a0[(k * d + i) * d + j];
    let mut out = vec![0.0; d];
    for c in 0..d {
        if z[c] == 0.0 {
            continue;
        }
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    let mut v = da[c][((k * d + i) * d + j, 0)];
                    for l in 0..d {
                        v += geo.gamma(k, c, l) * at(l, i, j) - geo.gamma(l, c, i) * at(k, l, j) - geo.gamma(l, c, j) * at(k, i, l);
                    }
                    out[k] += z[c] * x[i] * w[j] * v;
                }
            }
        }
    }
    Ok(out)
}

/// `max |g̃((∇̃_T A)_X X, T')|` over the unit vertical frame `T'`.
pub fn covariant_a_vertical_vanishes(ctx: &ONeillContext, t: &[f64], x: &[f64]) -> Result<f64> {
    let y0 = ctx.chart_point();
    let v = covariant_a_direct(&ctx.chart, &y0, t, x, x)?;
    let gt = ctx.chart.metric(&y0)?;
    let fr = ctx.chart.adapted_frame(&y0)?;
    let n = ctx.dim();
    let gv = &gt * DVector::from_vec(v);
    let mut worst: f64 = 0.0;
    for al in n..ctx.chart.total_dim() {
        worst = worst.max(fr.column(al).dot(&gv).abs());
    }
    Ok(worst)
}

/// Aggregate over a sample of base points and frames.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub samples: usize,
    pub region: Vec<Interval>,
    pub hypotheses: Hypotheses,
    /// `sup |Ric̃|` over sampled frame points and unit directions.
    pub sup_ricci: f64,
    pub flagged: bool,
    pub conventions: &'static str,
}

/// Radical inverse of `i` in base `p`.
pub fn halton(i: usize, p: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let mut k = i;
    while k > 0 {
        f /= p as f64;
        r += f * (k % p) as f64;
        k /= p;
    }
    r
}

const PRIMES: [usize; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

/// `i`-th Halton point (1-based internally) in a coordinate box.
pub fn halton_point(region: &[Interval], i: usize) -> Vec<f64> {
    region.iter().enumerate().map(|(k, iv)| iv.lo + (iv.hi - iv.lo) * halton(i + 1, PRIMES[k % PRIMES.len()])).collect()
}

/// Hypothesis sizes and `sup |Ric̃|` over Halton base points, each with a
/// seeded random frame.
pub fn ricci_bound_report(g: &MetricSpec, ge: &MetricSpec, region: &[Interval], samples: usize, seed: u64) -> Result<BoundReport> {
    let n = g.dim();
    if region.len() != n || region.iter().any(|iv| !(iv.lo.is_finite() && iv.hi.is_finite() && iv.lo <= iv.hi)) {
        return Err(Error::Invalid("region must be a bounded box in the base chart".into()));
    }
    let results: Vec<Result<(Hypotheses, f64)>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let p = halton_point(region, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let frame = lie::random_orthogonal(n, &mut rng, 1.0);
            let ctx = ONeillContext::new(g, ge, FramePoint { base: p, frame })?;
            let ric = ctx.ricci_matrix();
            Ok((ctx.hypotheses()?, ric.symmetric_eigenvalues().amax()))
        })
        .collect();
    let mut hyp = Hypotheses::default();
    let mut sup = 0.0f64;
    for r in results {
        let (h, s) = r?;
        hyp = hyp.sup(&h);
        sup = sup.max(s);
    }
    let flagged = hyp.k_hat > BLOWUP || hyp.kk_hat > BLOWUP;
    Ok(BoundReport { samples, region: region.to_vec(), hypotheses: hyp, sup_ricci: sup, flagged, conventions: CONVENTIONS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::BuiltinFamily;

    fn sphere() -> MetricSpec {
        BuiltinFamily::RoundSphere { radius: 1.0 }.instantiate().unwrap()
    }

    #[test]
    fn sphere_a_tensor_component() {
        let s = sphere();
        let ctx = ONeillContext::new(&s, &s, FramePoint::identity(vec![1.0, 0.3])).unwrap();
        let y0 = ctx.chart_point();
        let e1 = ctx.chart.horizontal_lift(&y0, &col(&ctx.eps, 0)).unwrap();
        let e2 = ctx.chart.horizontal_lift(&y0, &col(&ctx.eps, 1)).unwrap();
        let a = ctx.a_tensor_vertical(&e1, &e2).unwrap();
        // unit-vertical component √2·a_12 = R(e1,e2,e1,e2)/√2 = −1/√2 here
        assert!((2f64.sqrt() * a[(0, 1)] + 1.0 / 2f64.sqrt()).abs() < 1e-12);
        let b21 = ctx.a_tensor_vertical(&e2, &e1).unwrap();
        assert!((a + b21).amax() < 1e-14);
        assert!(ctx.a_tensor_vertical(&[0.0, 0.0, 1.0], &e1).is_err());
    }

    #[test]
    fn flat_everything_vanishes() {
        let m = BuiltinFamily::FlatEuclidean { n: 2 }.instantiate().unwrap();
        let ctx = ONeillContext::new(&m, &m, FramePoint::identity(vec![0.2, 0.1])).unwrap();
        assert_eq!(ctx.ricci_matrix().amax(), 0.0);
        let h = ctx.hypotheses().unwrap();
        assert_eq!(h, Hypotheses::default());
    }

    #[test]
    fn sphere_covariant_a_vanishes() {
        let s = sphere();
        let ctx = ONeillContext::new(&s, &s, FramePoint::identity(vec![1.2, 0.0])).unwrap();
        let c = ctx.covariant_a_base(&[0.3, 1.0], &[1.0, -0.2], &[0.5, 0.5]);
        assert!(c.amax() < 1e-12);
    }

    #[test]
    fn halton_is_van_der_corput_in_base_two() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(2, 2), 0.25);
        assert_eq!(halton(3, 2), 0.75);
        assert!((halton(1, 3) - 1.0 / 3.0).abs() < 1e-15);
    }
}
