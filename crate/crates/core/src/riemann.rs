//! Connection, curvature and geodesics of a coordinate metric.
//!
//! Conventions: `R^l_{ijk}` is the `l`-component of `R(∂_i, ∂_j)∂_k` with
//! `R(X, Y) = ∇_X∇_Y − ∇_Y∇_X − ∇_[X,Y]`; the lowered tensor is
//! `R_{ijkl} = <R(∂_i, ∂_j)∂_k, ∂_l>`; `Ric_{jk} = R^i_{ijk}` and the
//! sectional curvature of the plane `X ∧ Y` is `R(X, Y, Y, X) / |X ∧ Y|^2`.
//! The unit sphere has `Ric = g` and sectional curvature `+1`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::dsl::MetricSpec;
use crate::error::{Error, Result};
use crate::ode::{Dopri, OdeError};

/// Condition numbers above this are treated as a degenerate metric.
pub const MAX_CONDITION: f64 = 1e12;

/// A metric and its partial derivatives up to some order at one point.
#[derive(Clone, Debug)]
pub struct MetricJet {
    n: usize,
    order: usize,
    g: Vec<f64>,
    dg: Vec<f64>,
    d2g: Vec<f64>,
    d3g: Vec<f64>,
}

impl MetricJet {
    pub fn zeros(n: usize, order: usize) -> Self {
        let size = |k: u32| if order >= k as usize { n.pow(k + 2) } else { 0 };
        MetricJet { n, order, g: vec![0.0; n * n], dg: vec![0.0; size(1)], d2g: vec![0.0; size(2)], d3g: vec![0.0; size(3)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Stores `∂_mi g_ij` in every slot related by symmetry.
    pub fn set_sym(&mut self, mi: &[usize], i: usize, j: usize, v: f64) {
        let n = self.n;
        let put = |buf: &mut Vec<f64>, pre: usize| {
            buf[(pre * n + i) * n + j] = v;
            buf[(pre * n + j) * n + i] = v;
        };
        match *mi {
            [] => put(&mut self.g, 0),
            [a] => put(&mut self.dg, a),
            [a, b] => {
                put(&mut self.d2g, a * n + b);
                put(&mut self.d2g, b * n + a);
            }
            [a, b, c] => {
                for (x, y, z) in [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)] {
                    put(&mut self.d3g, (x * n + y) * n + z);
                }
            }
            _ => panic!("jets stop at order 3"),
        }
    }

    /// Row-major `g_ij`.
    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn metric(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.g)
    }

    pub fn dg(&self, a: usize, i: usize, j: usize) -> f64 {
        self.dg[(a * self.n + i) * self.n + j]
    }

    pub fn d2g(&self, a: usize, b: usize, i: usize, j: usize) -> f64 {
        let n = self.n;
        self.d2g[((a * n + b) * n + i) * n + j]
    }

    pub fn d3g(&self, a: usize, b: usize, c: usize, i: usize, j: usize) -> f64 {
        let n = self.n;
        self.d3g[(((a * n + b) * n + c) * n + i) * n + j]
    }
}

/// Index position of a tensor slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Slot {
    Up,
    Down,
}

/// Dense tensor in coordinate components, row-major over its slots.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tensor {
    pub n: usize,
    pub slots: Vec<Slot>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, slots: &[Slot]) -> Self {
        Tensor { n, slots: slots.to_vec(), data: vec![0.0; n.pow(slots.len() as u32)] }
    }

    pub fn rank(&self) -> usize {
        self.slots.len()
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank());
        idx.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Applies `m` to slot `s`: `T'[.., a, ..] = Σ_b m[a][b] T[.., b, ..]`.
    fn apply_slot(&mut self, s: usize, m: &DMatrix<f64>) {
        let n = self.n;
        let inner = n.pow((self.rank() - s - 1) as u32);
        let outer = n.pow(s as u32);
        let mut out = vec![0.0; self.data.len()];
        for o in 0..outer {
            for a in 0..n {
                for b in 0..n {
                    let w = m[(a, b)];
                    if w == 0.0 {
                        continue;
                    }
                    let src = (o * n + b) * inner;
                    let dst = (o * n + a) * inner;
                    for r in 0..inner {
                        out[dst + r] += w * self.data[src + r];
                    }
                }
            }
        }
        self.data = out;
    }

    /// Components in the orthonormal frame obtained from `g` by Cholesky.
    pub fn orthonormal(&self, g: &DMatrix<f64>) -> Result<Tensor> {
        if g.nrows() != self.n {
            return Err(Error::Invalid(format!("tensor dimension {} against a {}-dimensional metric", self.n, g.nrows())));
        }
        let l = g.clone().cholesky().ok_or_else(|| Error::NotSpd { point: vec![], cond: f64::INFINITY })?.l();
        let linv = l.clone().try_inverse().ok_or_else(|| Error::NotSpd { point: vec![], cond: f64::INFINITY })?;
        let lt = l.transpose();
        let mut t = self.clone();
        for s in 0..self.rank() {
            match self.slots[s] {
                Slot::Down => t.apply_slot(s, &linv),
                Slot::Up => t.apply_slot(s, &lt),
            }
        }
        Ok(t)
    }

    /// Full contraction of `T ⊗ T` with `g` on upper and `g^{-1}` on lower
    /// slots, square-rooted.
    pub fn norm(&self, g: &DMatrix<f64>) -> Result<f64> {
        Ok(self.orthonormal(g)?.data.iter().map(|v| v * v).sum::<f64>().sqrt())
    }
}

/// `Γ^k_{ij}` at a point, stored as a `(1,2)` tensor indexed `[k, i, j]`.
#[derive(Clone, Debug, Serialize)]
pub struct ConnectionCoeffs {
    pub point: Vec<f64>,
    pub gamma: Tensor,
}

impl ConnectionCoeffs {
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.gamma.get(&[k, i, j])
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CurvatureTensor {
    pub point: Vec<f64>,
    /// `R_{ijkl}`.
    pub lower: Tensor,
    /// `R^l_{ijk}` indexed `[l, i, j, k]`.
    pub upper: Tensor,
}

#[derive(Clone, Debug, Serialize)]
pub struct CurvatureGradient {
    pub point: Vec<f64>,
    /// `∇_m R_{ijkl}` indexed `[m, i, j, k, l]`.
    pub tensor: Tensor,
}

/// Everything derivable from a jet: connection, curvature and its gradient.
#[derive(Clone, Debug)]
pub struct Geometry {
    pub n: usize,
    pub g: DMatrix<f64>,
    pub ginv: DMatrix<f64>,
    gamma: Vec<f64>,
    dgamma: Vec<f64>,
    d2gamma: Vec<f64>,
    riem_up: Vec<f64>,
    riem_down: Vec<f64>,
    nabla_riem: Vec<f64>,
    order: usize,
}

/// Inverse of an SPD matrix with the conditioning test.
pub fn checked_inverse(g: &DMatrix<f64>, point: &[f64]) -> Result<DMatrix<f64>> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotSpd { point: point.to_vec(), cond: f64::INFINITY });
    }
    let eig = SymmetricEigen::new(g.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::NotSpd { point: point.to_vec(), cond });
    }
    g.clone().lu().try_inverse().ok_or(Error::NotSpd { point: point.to_vec(), cond })
}

impl Geometry {
    /// Builds the geometric data supported by the jet's order: `Γ` needs
    /// order 1, curvature order 2, and `∇R` order 3.
    pub fn from_jet(jet: &MetricJet, point: &[f64]) -> Result<Self> {
        let n = jet.n;
        let g = jet.metric();
        let ginv = checked_inverse(&g, point)?;
        let mut geo = Geometry {
            n,
            g,
            ginv,
            gamma: vec![],
            dgamma: vec![],
            d2gamma: vec![],
            riem_up: vec![],
            riem_down: vec![],
            nabla_riem: vec![],
            order: jet.order,
        };
        if jet.order >= 1 {
            geo.build_gamma(jet);
        }
        if jet.order >= 2 {
            geo.build_riemann();
        }
        if jet.order >= 3 {
            geo.build_nabla_riemann(jet);
        }
        Ok(geo)
    }

    pub fn at(m: &MetricSpec, p: &[f64], order: usize) -> Result<Self> {
        Self::from_jet(&m.jet(p, order)?, p)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    fn i3(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.n + b) * self.n + c
    }

    #[inline]
    fn i4(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        self.i3(a, b, c) * self.n + d
    }

    #[inline]
    fn i5(&self, a: usize, b: usize, c: usize, d: usize, e: usize) -> usize {
        self.i4(a, b, c, d) * self.n + e
    }

    /// `Γ^k_{ij}`.
    pub fn gamma(&self, k: usize, i: usize, j: usize) -> f64 {
        self.gamma[self.i3(k, i, j)]
    }

    /// `∂_a Γ^k_{ij}`.
    pub fn dgamma(&self, a: usize, k: usize, i: usize, j: usize) -> f64 {
        self.dgamma[self.i4(a, k, i, j)]
    }

    /// `R^l_{ijk}`.
    pub fn riemann_up(&self, l: usize, i: usize, j: usize, k: usize) -> f64 {
        self.riem_up[self.i4(l, i, j, k)]
    }

    /// `R_{ijkl}`.
    pub fn riemann(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.riem_down[self.i4(i, j, k, l)]
    }

    /// `∇_m R_{ijkl}`.
    pub fn nabla_riemann(&self, m: usize, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.nabla_riem[self.i5(m, i, j, k, l)]
    }

    fn build_gamma(&mut self, jet: &MetricJet) {
        let n = self.n;
        // first kind: Γ_{lij} = ½(∂_i g_jl + ∂_j g_il − ∂_l g_ij)
        let mut first = vec![0.0; n * n * n];
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    first[self.i3(l, i, j)] = 0.5 * (jet.dg(i, j, l) + jet.dg(j, i, l) - jet.dg(l, i, j));
                }
            }
        }
        let mut gamma = vec![0.0; n * n * n];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    gamma[self.i3(k, i, j)] = (0..n).map(|l| self.ginv[(k, l)] * first[self.i3(l, i, j)]).sum();
                }
            }
        }
        self.gamma = gamma;
        if jet.order < 2 {
            return;
        }
        // ∂_a Γ^k_ij = g^{kl}(∂_a Γ_lij − ∂_a g_lm Γ^m_ij)
        let mut dfirst = vec![0.0; n.pow(4)];
        let mut dgamma = vec![0.0; n.pow(4)];
        for a in 0..n {
            for l in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        dfirst[self.i4(a, l, i, j)] =
                            0.5 * (jet.d2g(a, i, j, l) + jet.d2g(a, j, i, l) - jet.d2g(a, l, i, j));
                    }
                }
            }
        }
        let mut tmp = vec![0.0; n];
        for a in 0..n {
            for i in 0..n {
                for j in 0..n {
                    for (l, t) in tmp.iter_mut().enumerate() {
                        *t = dfirst[self.i4(a, l, i, j)]
                            - (0..n).map(|m| jet.dg(a, l, m) * self.gamma[self.i3(m, i, j)]).sum::<f64>();
                    }
                    for k in 0..n {
                        dgamma[self.i4(a, k, i, j)] = (0..n).map(|l| self.ginv[(k, l)] * tmp[l]).sum();
                    }
                }
            }
        }
        self.dgamma = dgamma;
        if jet.order < 3 {
            return;
        }
        // ∂_b∂_a Γ^k_ij = g^{kl}(∂_b∂_a Γ_lij − ∂_ab g_lm Γ^m − ∂_a g_lm ∂_b Γ^m − ∂_b g_lm ∂_a Γ^m)
        let mut d2gamma = vec![0.0; n.pow(5)];
        for b in 0..n {
            for a in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        for (l, t) in tmp.iter_mut().enumerate() {
                            let d2f = 0.5 * (jet.d3g(b, a, i, j, l) + jet.d3g(b, a, j, i, l) - jet.d3g(b, a, l, i, j));
                            let mut s = d2f;
                            for m in 0..n {
                                s -= jet.d2g(b, a, l, m) * self.gamma[self.i3(m, i, j)]
                                    + jet.dg(a, l, m) * self.dgamma[self.i4(b, m, i, j)]
                                    + jet.dg(b, l, m) * self.dgamma[self.i4(a, m, i, j)];
                            }
                            *t = s;
                        }
                        for k in 0..n {
                            d2gamma[self.i5(b, a, k, i, j)] = (0..n).map(|l| self.ginv[(k, l)] * tmp[l]).sum();
                        }
                    }
                }
            }
        }
        self.d2gamma = d2gamma;
    }

    fn build_riemann(&mut self) {
        let n = self.n;
        let mut up = vec![0.0; n.pow(4)];
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let mut v = self.dgamma[self.i4(i, l, j, k)] - self.dgamma[self.i4(j, l, i, k)];
                        for m in 0..n {
                            v += self.gamma[self.i3(l, i, m)] * self.gamma[self.i3(m, j, k)]
                                - self.gamma[self.i3(l, j, m)] * self.gamma[self.i3(m, i, k)];
                        }
                        up[self.i4(l, i, j, k)] = v;
                    }
                }
            }
        }
        let mut down = vec![0.0; n.pow(4)];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        down[self.i4(i, j, k, l)] = (0..n).map(|m| self.g[(l, m)] * up[self.i4(m, i, j, k)]).sum();
                    }
                }
            }
        }
        self.riem_up = up;
        self.riem_down = down;
    }

    fn build_nabla_riemann(&mut self, jet: &MetricJet) {
        let n = self.n;
        // ∂_m R^p_ijk
        let mut dup = vec![0.0; n.pow(5)];
        for m in 0..n {
            for p in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            let mut v = self.d2gamma[self.i5(m, i, p, j, k)] - self.d2gamma[self.i5(m, j, p, i, k)];
                            for q in 0..n {
                                v += self.dgamma[self.i4(m, p, i, q)] * self.gamma[self.i3(q, j, k)]
                                    + self.gamma[self.i3(p, i, q)] * self.dgamma[self.i4(m, q, j, k)]
                                    - self.dgamma[self.i4(m, p, j, q)] * self.gamma[self.i3(q, i, k)]
                                    - self.gamma[self.i3(p, j, q)] * self.dgamma[self.i4(m, q, i, k)];
                            }
                            dup[self.i5(m, p, i, j, k)] = v;
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0; n.pow(5)];
        for m in 0..n {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for l in 0..n {
                            let mut v = 0.0;
                            for p in 0..n {
                                // ∂_m R_ijkl = ∂_m g_lp R^p_ijk + g_lp ∂_m R^p_ijk
                                v += jet.dg(m, l, p) * self.riem_up[self.i4(p, i, j, k)]
                                    + self.g[(l, p)] * dup[self.i5(m, p, i, j, k)];
                                v -= self.gamma[self.i3(p, m, i)] * self.riem_down[self.i4(p, j, k, l)]
                                    + self.gamma[self.i3(p, m, j)] * self.riem_down[self.i4(i, p, k, l)]
                                    + self.gamma[self.i3(p, m, k)] * self.riem_down[self.i4(i, j, p, l)]
                                    + self.gamma[self.i3(p, m, l)] * self.riem_down[self.i4(i, j, k, p)];
                            }
                            out[self.i5(m, i, j, k, l)] = v;
                        }
                    }
                }
            }
        }
        self.nabla_riem = out;
    }

    /// `Ric_{jk} = R^i_{ijk}`.
    pub fn ricci(&self) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |j, k| (0..n).map(|i| self.riemann_up(i, i, j, k)).sum())
    }

    pub fn scalar(&self) -> f64 {
        (self.ginv.component_mul(&self.ricci())).sum()
    }

    /// `R(x, y, z, w)` on coordinate vectors.
    pub fn riemann_on(&self, x: &[f64], y: &[f64], z: &[f64], w: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                if y[j] == 0.0 {
                    continue;
                }
                for k in 0..n {
                    if z[k] == 0.0 {
                        continue;
                    }
                    for l in 0..n {
                        s += x[i] * y[j] * z[k] * w[l] * self.riemann(i, j, k, l);
                    }
                }
            }
        }
        s
    }

    /// `R(x, y)z` as a coordinate vector.
    pub fn riemann_apply(&self, x: &[f64], y: &[f64], z: &[f64]) -> DVector<f64> {
        let n = self.n;
        DVector::from_fn(n, |l, _| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        s += x[i] * y[j] * z[k] * self.riemann_up(l, i, j, k);
                    }
                }
            }
            s
        })
    }

    /// `(∇_z R)(x, y, u, w)`.
    pub fn nabla_riemann_on(&self, z: &[f64], x: &[f64], y: &[f64], u: &[f64], w: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for m in 0..n {
            if z[m] == 0.0 {
                continue;
            }
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for l in 0..n {
                            s += z[m] * x[i] * y[j] * u[k] * w[l] * self.nabla_riemann(m, i, j, k, l);
                        }
                    }
                }
            }
        }
        s
    }

    /// `Γ(x, y)^k = Γ^k_ij x^i y^j`.
    pub fn gamma_on(&self, x: &[f64], y: &[f64]) -> DVector<f64> {
        let n = self.n;
        DVector::from_fn(n, |k, _| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += self.gamma(k, i, j) * x[i] * y[j];
                }
            }
            s
        })
    }

    pub fn sectional(&self, x: &[f64], y: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let yv = DVector::from_column_slice(y);
        let gxx = xv.dot(&(&self.g * &xv));
        let gyy = yv.dot(&(&self.g * &yv));
        let gxy = xv.dot(&(&self.g * &yv));
        self.riemann_on(x, y, y, x) / (gxx * gyy - gxy * gxy)
    }

    /// Largest `|K|` over coordinate 2-planes.
    pub fn sectional_sup(&self) -> f64 {
        let n = self.n;
        let mut best: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let k = (self.riemann(i, j, j, i)) / (self.g[(i, i)] * self.g[(j, j)] - self.g[(i, j)].powi(2));
                best = best.max(k.abs());
            }
        }
        best
    }

    pub fn connection(&self, point: &[f64]) -> ConnectionCoeffs {
        ConnectionCoeffs {
            point: point.to_vec(),
            gamma: Tensor { n: self.n, slots: vec![Slot::Up, Slot::Down, Slot::Down], data: self.gamma.clone() },
        }
    }

    pub fn curvature(&self, point: &[f64]) -> CurvatureTensor {
        CurvatureTensor {
            point: point.to_vec(),
            lower: Tensor { n: self.n, slots: vec![Slot::Down; 4], data: self.riem_down.clone() },
            upper: Tensor {
                n: self.n,
                slots: vec![Slot::Up, Slot::Down, Slot::Down, Slot::Down],
                data: self.riem_up.clone(),
            },
        }
    }

    pub fn gradient(&self, point: &[f64]) -> CurvatureGradient {
        CurvatureGradient {
            point: point.to_vec(),
            tensor: Tensor { n: self.n, slots: vec![Slot::Down; 5], data: self.nabla_riem.clone() },
        }
    }
}

pub fn christoffel(m: &MetricSpec, p: &[f64]) -> Result<ConnectionCoeffs> {
    Ok(Geometry::at(m, p, 1)?.connection(p))
}

pub fn riemann(m: &MetricSpec, p: &[f64]) -> Result<CurvatureTensor> {
    Ok(Geometry::at(m, p, 2)?.curvature(p))
}

pub fn ricci(m: &MetricSpec, p: &[f64]) -> Result<DMatrix<f64>> {
    Ok(Geometry::at(m, p, 2)?.ricci())
}

pub fn curvature_gradient(m: &MetricSpec, p: &[f64]) -> Result<CurvatureGradient> {
    Ok(Geometry::at(m, p, 3)?.gradient(p))
}

/// `g`-norm of a coordinate tensor at `p`.
pub fn tensor_norm(t: &Tensor, m: &MetricSpec, p: &[f64]) -> Result<f64> {
    m.check_domain(p)?;
    if t.n != m.dim() {
        return Err(Error::Invalid(format!("valence mismatch: {}-dimensional tensor on a {}-manifold", t.n, m.dim())));
    }
    t.norm(&m.eval_metric(p))
}

/// Difference tensor `Γ_g − Γ_h` at `p`, indexed `[k, i, j]`.
pub fn connection_difference(g: &MetricSpec, h: &MetricSpec, p: &[f64]) -> Result<Tensor> {
    let a = christoffel(g, p)?;
    let b = christoffel(h, p)?;
    let mut t = a.gamma.clone();
    for (x, y) in t.data.iter_mut().zip(&b.gamma.data) {
        *x -= y;
    }
    Ok(t)
}

/// Jet of a matrix field up to order 2 from central differences at steps
/// `h` and `h/2`, combined by Richardson extrapolation.
pub fn finite_difference_jet<F>(f: F, p: &[f64], order: usize, h: f64) -> Result<MetricJet>
where
    F: Fn(&[f64]) -> Result<DMatrix<f64>>,
{
    assert!(order <= 2, "difference jets stop at order 2");
    let n = p.len();
    let g0 = f(p)?;
    let mut jet = MetricJet::zeros(n, order);
    let at = |shift: &[(usize, f64)]| {
        let mut q = p.to_vec();
        for &(a, d) in shift {
            q[a] += d;
        }
        f(&q)
    };
    let sym = |jet: &mut MetricJet, mi: &[usize], m: &DMatrix<f64>| {
        for i in 0..n {
            for j in i..n {
                jet.set_sym(mi, i, j, 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
    };
    sym(&mut jet, &[], &g0);
    if order == 0 {
        return Ok(jet);
    }
    let rich = |coarse: DMatrix<f64>, fine: DMatrix<f64>| (fine * 4.0 - coarse) / 3.0;
    let mut plus = Vec::with_capacity(n);
    for a in 0..n {
        let mut d1 = Vec::new();
        let mut d2 = Vec::new();
        for s in [h, 0.5 * h] {
            let fp = at(&[(a, s)])?;
            let fm = at(&[(a, -s)])?;
            d1.push((&fp - &fm) / (2.0 * s));
            d2.push((&fp + &fm - &g0 * 2.0) / (s * s));
        }
        let d2f = d2.pop().unwrap();
        let d1f = d1.pop().unwrap();
        sym(&mut jet, &[a], &rich(d1.pop().unwrap(), d1f));
        plus.push(rich(d2.pop().unwrap(), d2f));
    }
    if order == 2 {
        for a in 0..n {
            sym(&mut jet, &[a, a], &plus[a]);
            for b in a + 1..n {
                let mut est = Vec::new();
                for s in [h, 0.5 * h] {
                    let v = at(&[(a, s), (b, s)])? - at(&[(a, s), (b, -s)])? - at(&[(a, -s), (b, s)])?
                        + at(&[(a, -s), (b, -s)])?;
                    est.push(v / (4.0 * s * s));
                }
                let fine = est.pop().unwrap();
                sym(&mut jet, &[a, b], &rich(est.pop().unwrap(), fine));
            }
        }
    }
    Ok(jet)
}

/// A coordinate metric whose connection can be evaluated pointwise.
pub trait CoordinateMetric: Sync {
    fn dim(&self) -> usize;
    fn geometry(&self, p: &[f64], order: usize) -> Result<Geometry>;
    fn metric_at(&self, p: &[f64]) -> Result<DMatrix<f64>>;
}

impl CoordinateMetric for MetricSpec {
    fn dim(&self) -> usize {
        MetricSpec::dim(self)
    }

    fn geometry(&self, p: &[f64], order: usize) -> Result<Geometry> {
        Geometry::at(self, p, order)
    }

    fn metric_at(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        self.check_domain(p)?;
        Ok(self.eval_metric(p))
    }
}

/// Geodesic integrator over a [`CoordinateMetric`].
#[derive(Clone, Debug)]
pub struct Geodesic<'a, M: ?Sized> {
    pub metric: &'a M,
    pub ode: Dopri,
}

impl<'a, M: CoordinateMetric + ?Sized> Geodesic<'a, M> {
    pub fn new(metric: &'a M) -> Self {
        Geodesic { metric, ode: Dopri::default() }
    }

    fn rhs(&self) -> impl Fn(f64, &[f64], &mut [f64]) -> bool + '_ {
        let n = self.metric.dim();
        move |_s, y, dy| {
            let (x, v) = y.split_at(n);
            let geo = match self.metric.geometry(x, 1) {
                Ok(geo) => geo,
                Err(_) => return false,
            };
            let acc = geo.gamma_on(v, v);
            dy[..n].copy_from_slice(v);
            for k in 0..n {
                dy[n + k] = -acc[k];
            }
            true
        }
    }

    /// Position and velocity at parameter `t`, recording accepted steps.
    pub fn flow_observed(
        &self,
        p: &[f64],
        v: &[f64],
        t: f64,
        observe: impl FnMut(f64, &[f64]),
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.metric.dim();
        self.metric.metric_at(p)?;
        if v.len() != n {
            return Err(Error::Invalid(format!("tangent vector has {} components, expected {n}", v.len())));
        }
        let y0: Vec<f64> = p.iter().chain(v).copied().collect();
        let y = self.ode.integrate_observed(self.rhs(), 0.0, t, &y0, observe).map_err(|e| match e {
            OdeError::StepLimit(k) => Error::StepLimit(k),
            OdeError::Rejected { t, y } => Error::DomainExit { s: t, point: y[..n].to_vec() },
        })?;
        Ok((y[..n].to_vec(), y[n..].to_vec()))
    }

    pub fn flow(&self, p: &[f64], v: &[f64], t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.flow_observed(p, v, t, |_, _| {})
    }
}

/// Endpoint of the geodesic `s ↦ exp_p(s v)` at `s = t`.
pub fn exp_map(m: &MetricSpec, p: &[f64], v: &[f64], t: f64) -> Result<Vec<f64>> {
    Ok(Geodesic::new(m).flow(p, v, t)?.0)
}

/// Orthonormal frame of `g`: columns `E = L^{-T}` where `g = L L^T`.
pub fn orthonormal_frame(g: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let l = g.clone().cholesky()?.l();
    Some(l.transpose().try_inverse()?)
}
