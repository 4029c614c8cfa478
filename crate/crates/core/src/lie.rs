//! The orthogonal group with the bi-invariant metric `b(a, c) = −tr(ac)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

const SKEW_TOL: f64 = 1e-10;

/// Index pairs `(λ, μ)`, `λ < μ`, in lexicographic order.
pub fn pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for l in 0..n {
        for m in l + 1..n {
            out.push((l, m));
        }
    }
    out
}

pub fn algebra_dim(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// `e^{λμ}`: `+1` at `(λ, μ)` and `−1` at `(μ, λ)`.
pub fn basis_element(n: usize, l: usize, m: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, n);
    e[(l, m)] = 1.0;
    e[(m, l)] = -1.0;
    e
}

pub fn basis(n: usize) -> Vec<DMatrix<f64>> {
    pairs(n).into_iter().map(|(l, m)| basis_element(n, l, m)).collect()
}

/// Coefficients of `a` on the `e^{λμ}`, i.e. the entries `a_{λμ}`.
pub fn coords(a: &DMatrix<f64>) -> DVector<f64> {
    let ps = pairs(a.nrows());
    DVector::from_iterator(ps.len(), ps.iter().map(|&(l, m)| a[(l, m)]))
}

pub fn from_coords(n: usize, c: &[f64]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for (&(l, m), &v) in pairs(n).iter().zip(c) {
        a[(l, m)] = v;
        a[(m, l)] = -v;
    }
    a
}

/// Coordinates in the `b`-orthonormal basis `e^{λμ}/√2`.
pub fn orthonormal_coords(a: &DMatrix<f64>) -> DVector<f64> {
    coords(a) * 2f64.sqrt()
}

pub fn skew_residual(a: &DMatrix<f64>) -> f64 {
    (a + a.transpose()).abs().max()
}

pub fn skew_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a - a.transpose()) * 0.5
}

/// `b(a₁, a₂) = −tr(a₁a₂)`.
pub fn biinvariant_inner(a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> Result<f64> {
    let scale = 1.0 + a1.abs().max().max(a2.abs().max());
    if skew_residual(a1) > SKEW_TOL * scale || skew_residual(a2) > SKEW_TOL * scale {
        return Err(Error::Invalid("b is defined on skew-symmetric matrices only".into()));
    }
    Ok(b(a1, a2))
}

/// `b` without the skew check.
pub fn b(a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> f64 {
    -a1.component_mul(&a2.transpose()).sum()
}

pub fn b_norm(a: &DMatrix<f64>) -> f64 {
    b(a, a).max(0.0).sqrt()
}

pub fn bracket(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    a * c - c * a
}

/// Sectional curvature of `(O(n), b)` on the plane spanned by `a₁, a₂`.
pub fn biinvariant_sectional(a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> f64 {
    let br = bracket(a1, a2);
    let den = b(a1, a1) * b(a2, a2) - b(a1, a2).powi(2);
    0.25 * b(&br, &br) / den
}

pub fn is_orthogonal(a: &DMatrix<f64>, tol: f64) -> bool {
    a.is_square() && (a.transpose() * a - DMatrix::identity(a.nrows(), a.nrows())).abs().max() <= tol
}

pub fn det_sign(a: &DMatrix<f64>) -> f64 {
    a.determinant().signum()
}

/// `exp(a) = cos(√(−a²)) + sinc(√(−a²)) a` by the spectral decomposition of
/// `−a²`.
pub fn group_exp(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eig = SymmetricEigen::new(-(a * a));
    let q = &eig.eigenvectors;
    let mut cosd = DMatrix::zeros(n, n);
    let mut sincd = DMatrix::zeros(n, n);
    for k in 0..n {
        let th = eig.eigenvalues[k].max(0.0).sqrt();
        cosd[(k, k)] = th.cos();
        sincd[(k, k)] = if th < 1e-4 { 1.0 - th * th / 6.0 + th.powi(4) / 120.0 } else { th.sin() / th };
    }
    let c = q * cosd * q.transpose();
    let s = q * sincd * q.transpose();
    let out = c + s * a;
    polar(&out)
}

/// Real Schur form `w = q t qᵀ` of an orthogonal matrix, read off as signed
/// plane angles: a 2×2 block contributes its rotation angle and a `−1`
/// eigenvalue contributes `π` on its own.
struct PlaneAngles {
    q: DMatrix<f64>,
    /// `(first index, block size, signed angle)`.
    blocks: Vec<(usize, usize, f64)>,
}

impl PlaneAngles {
    fn new(w: &DMatrix<f64>) -> Self {
        let n = w.nrows();
        let (q, t) = nalgebra::linalg::Schur::new(w.clone()).unpack();
        let mut blocks = Vec::new();
        let mut i = 0;
        while i < n {
            if i + 1 < n && t[(i + 1, i)] != 0.0 {
                let c = 0.5 * (t[(i, i)] + t[(i + 1, i + 1)]);
                let s = 0.5 * (t[(i, i + 1)] - t[(i + 1, i)]);
                blocks.push((i, 2, s.atan2(c)));
                i += 2;
            } else {
                blocks.push((i, 1, if t[(i, i)] < 0.0 { PI } else { 0.0 }));
                i += 1;
            }
        }
        PlaneAngles { q, blocks }
    }

    /// `b(log w, log w)` for the minimal logarithm.
    fn norm_sq(&self) -> f64 {
        self.blocks.iter().map(|&(_, size, th)| if size == 2 { 2.0 * th * th } else { th * th }).sum()
    }

    fn max(&self) -> f64 {
        self.blocks.iter().map(|b| b.2.abs()).fold(0.0, f64::max)
    }
}

/// Largest rotation angle of an orthogonal matrix.
pub fn max_angle(w: &DMatrix<f64>) -> f64 {
    PlaneAngles::new(w).max()
}

/// Principal logarithm; fails on reflections and at rotation angle `π`.
pub fn group_log(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = w.nrows();
    if det_sign(w) < 0.0 {
        return Err(Error::LogBranch(PI));
    }
    let pa = PlaneAngles::new(w);
    let mut l = DMatrix::zeros(n, n);
    for &(i, size, th) in &pa.blocks {
        if th.abs() > PI - 1e-7 {
            return Err(Error::LogBranch(th.abs()));
        }
        if size == 2 {
            l[(i, i + 1)] = th;
            l[(i + 1, i)] = -th;
        }
    }
    Ok(skew_part(&(&pa.q * l * pa.q.transpose())))
}

/// Intrinsic distance of `(O(n), b)`; `+∞` between components.
pub fn group_distance(u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    if det_sign(u) != det_sign(v) {
        return f64::INFINITY;
    }
    PlaneAngles::new(&(v * u.transpose())).norm_sq().sqrt()
}

/// Nearest orthogonal matrix (polar factor).
pub fn polar(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => u * vt,
        _ => a.clone(),
    }
}

/// Haar-distributed element of `O(n)` with the requested determinant sign.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R, det: f64) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut q = q * DMatrix::from_diagonal(&r.diagonal().map(|x| x.signum()));
    if det_sign(&q) != det.signum() {
        for i in 0..n {
            q[(i, 0)] = -q[(i, 0)];
        }
    }
    q
}

pub fn random_skew<R: Rng + ?Sized>(n: usize, rng: &mut R, scale: f64) -> DMatrix<f64> {
    let c: Vec<f64> = (0..algebra_dim(n)).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    from_coords(n, &c)
}

/// `rot(θ) = exp(θ e^{12})`.
pub fn rotation2(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, s, -s, c])
}

/// Angle in `(−π, π]` of an element of `SO(2)`, inverse to [`rotation2`].
pub fn angle2(w: &DMatrix<f64>) -> f64 {
    w[(0, 1)].atan2(w[(0, 0)])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Chirality {
    SelfDual,
    AntiSelfDual,
}

impl Chirality {
    pub fn other(self) -> Self {
        match self {
            Chirality::SelfDual => Chirality::AntiSelfDual,
            Chirality::AntiSelfDual => Chirality::SelfDual,
        }
    }
}

/// Hodge star on 2-forms of `R⁴`: `(*a)_ij = ½ ε_ijkl a_kl`.
pub fn hodge_star(a: &DMatrix<f64>) -> DMatrix<f64> {
    // (01)↔(23), (02)↔−(13), (03)↔(12)
    let c = coords(a);
    // coords order: 01 02 03 12 13 23
    from_coords(4, &[c[5], -c[4], c[3], c[2], -c[1], c[0]])
}

/// `b`-orthonormal basis of `Λ²₊` or `Λ²₋` in `o(4)`.
pub fn chiral_basis(ch: Chirality) -> [DMatrix<f64>; 3] {
    let e = |l, m| basis_element(4, l, m);
    let sg = if ch == Chirality::SelfDual { 1.0 } else { -1.0 };
    [
        (e(0, 1) + e(2, 3) * sg) * 0.5,
        (e(0, 2) - e(1, 3) * sg) * 0.5,
        (e(0, 3) + e(1, 2) * sg) * 0.5,
    ]
}

/// Matrix of `Ad_w` restricted to one chiral factor, in [`chiral_basis`].
pub fn chiral_action(w: &DMatrix<f64>, ch: Chirality) -> DMatrix<f64> {
    let basis = chiral_basis(ch);
    let wt = w.transpose();
    DMatrix::from_fn(3, 3, |i, j| b(&basis[i], &(w * &basis[j] * &wt)))
}

/// Distance of `w` from the subgroup `exp(Λ²_ch)`: the failure of `w` to act
/// trivially on the other chiral factor.
pub fn chirality_residual(w: &DMatrix<f64>, ch: Chirality) -> f64 {
    (chiral_action(w, ch.other()) - DMatrix::identity(3, 3)).norm()
}

/// Rotation angle in `[0, π]` of an element of `SO(3)`.
fn so3_angle(r: &DMatrix<f64>) -> f64 {
    let s = skew_part(r);
    let sn = (s[(2, 1)].powi(2) + s[(0, 2)].powi(2) + s[(1, 0)].powi(2)).sqrt();
    sn.atan2(0.5 * (r.trace() - 1.0))
}

/// Subgroup classes recognised by [`classify_subgroup`].
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SubgroupClass {
    Trivial,
    FiniteCyclic { order: usize },
    So2Circle,
    Su2InSo4 { chirality: Chirality },
    FullSo { n: usize },
    Other,
}

impl SubgroupClass {
    pub fn label(&self) -> String {
        match self {
            SubgroupClass::Trivial => "trivial".into(),
            SubgroupClass::FiniteCyclic { order } => format!("finite-cyclic({order})"),
            SubgroupClass::So2Circle => "SO(2)-circle".into(),
            SubgroupClass::Su2InSo4 { .. } => "SU(2)-in-SO(4)".into(),
            SubgroupClass::FullSo { n } => format!("full-SO({n})"),
            SubgroupClass::Other => "other".into(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Residuals {
    /// Largest out-of-span component of a bracket of basis elements.
    pub closure: f64,
    /// Largest chirality residual over samples (SU(2) class only).
    pub chirality: f64,
    /// Largest distance of a sample from the reported structure.
    pub membership: f64,
    pub singular_values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SubgroupEstimate {
    pub class: SubgroupClass,
    pub label: String,
    pub n: usize,
    pub rank: usize,
    /// `b`-orthonormal Lie algebra basis.
    #[serde(serialize_with = "ser_mats")]
    pub generators: Vec<DMatrix<f64>>,
    #[serde(serialize_with = "ser_mats")]
    pub finite_generators: Vec<DMatrix<f64>>,
    pub residuals: Residuals,
    pub samples_used: usize,
}

fn ser_mats<S: serde::Serializer>(m: &[DMatrix<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.len()))?;
    for a in m {
        let rows: Vec<f64> = a.transpose().iter().copied().collect();
        seq.serialize_element(&rows)?;
    }
    seq.end()
}

impl SubgroupEstimate {
    pub fn trivial(n: usize) -> Self {
        SubgroupEstimate {
            class: SubgroupClass::Trivial,
            label: SubgroupClass::Trivial.label(),
            n,
            rank: 0,
            generators: vec![],
            finite_generators: vec![],
            residuals: Residuals::default(),
            samples_used: 0,
        }
    }

    pub fn of_class(n: usize, class: SubgroupClass) -> Self {
        let mut e = Self::trivial(n);
        match &class {
            SubgroupClass::So2Circle => {
                e.generators = vec![basis_element(n, 0, 1) / 2f64.sqrt()];
            }
            SubgroupClass::FullSo { .. } => {
                e.generators = basis(n).into_iter().map(|x| x / 2f64.sqrt()).collect();
            }
            SubgroupClass::Su2InSo4 { chirality } => e.generators = chiral_basis(*chirality).to_vec(),
            SubgroupClass::FiniteCyclic { order } => e.finite_generators = vec![rotation2(2.0 * PI / *order as f64)],
            _ => {}
        }
        e.rank = e.generators.len();
        e.label = class.label();
        e.class = class;
        e
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifyOptions {
    /// Only samples whose loop length is at most this enter the estimate.
    pub length_threshold: f64,
    /// Samples within this `b`-distance of the identity are logged.
    pub log_radius: f64,
    /// Relative singular-value cutoff of the rank test.
    pub rank_tol: f64,
    /// Tolerance of the finite-cyclic power test.
    pub power_tol: f64,
    /// Tolerance of the chirality and closure tests.
    pub structure_tol: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions { length_threshold: f64::INFINITY, log_radius: 1.0, rank_tol: 1e-6, power_tol: 1e-6, structure_tol: 1e-5 }
    }
}

/// Finite cyclic subgroup of `SO(2)` generated by the samples, if any.
fn finite_cyclic(samples: &[&DMatrix<f64>], tol: f64) -> Option<(usize, DMatrix<f64>, f64)> {
    let angs: Vec<f64> = samples.iter().filter(|w| det_sign(w) > 0.0).map(|w| angle2(w).rem_euclid(2.0 * PI)).collect();
    if angs.len() != samples.len() {
        return None;
    }
    let th = angs.iter().map(|&a| a.min(2.0 * PI - a)).filter(|&a| a > tol).fold(f64::INFINITY, f64::min);
    if !th.is_finite() {
        return None;
    }
    let k = (2.0 * PI / th).round();
    if (k * th - 2.0 * PI).abs() > tol * k || k < 2.0 {
        return None;
    }
    let step = 2.0 * PI / k;
    let mut worst: f64 = 0.0;
    for &a in &angs {
        let j = (a / step).round();
        worst = worst.max((a - j * step).abs());
    }
    (worst <= tol).then(|| (k as usize, rotation2(step), worst))
}

/// Generated Lie algebra of the span of `gens`, closed under brackets.
fn close_algebra(mut gens: Vec<DMatrix<f64>>, tol: f64) -> (Vec<DMatrix<f64>>, f64) {
    let mut first_residual = None;
    loop {
        let mut added = false;
        let mut worst: f64 = 0.0;
        let count = gens.len();
        for i in 0..count {
            for j in i + 1..count {
                let mut r = bracket(&gens[i], &gens[j]);
                for g in &gens {
                    r -= g * b(&r, g);
                }
                let rn = b_norm(&r);
                worst = worst.max(rn);
                if rn > tol {
                    gens.push(r / rn);
                    added = true;
                }
            }
        }
        first_residual.get_or_insert(worst);
        if !added {
            return (gens, first_residual.unwrap_or(0.0));
        }
    }
}

/// Estimates the closed subgroup generated by small-loop holonomy samples.
pub fn classify_subgroup(samples: &[(DMatrix<f64>, f64)], opts: &ClassifyOptions) -> Result<SubgroupEstimate> {
    if samples.is_empty() {
        return Err(Error::Invalid("cannot classify an empty sample set".into()));
    }
    let n = samples[0].0.nrows();
    if samples.iter().any(|(w, _)| !is_orthogonal(w, 1e-8) || w.nrows() != n) {
        return Err(Error::Invalid("samples must be orthogonal matrices of one size".into()));
    }
    let used: Vec<&DMatrix<f64>> =
        samples.iter().filter(|(_, len)| *len <= opts.length_threshold).map(|(w, _)| w).collect();
    let mut est = SubgroupEstimate::trivial(n);
    est.samples_used = used.len();
    let id = DMatrix::identity(n, n);
    let nontrivial: Vec<&DMatrix<f64>> = used.iter().copied().filter(|w| group_distance(&id, w) > opts.power_tol).collect();
    if nontrivial.is_empty() {
        return Ok(est);
    }
    if n == 2 {
        if let Some((k, g, worst)) = finite_cyclic(&used, opts.power_tol) {
            est.class = SubgroupClass::FiniteCyclic { order: k };
            est.finite_generators = vec![g];
            est.residuals.membership = worst;
            est.label = est.class.label();
            return Ok(est);
        }
    }
    let logs: Vec<DVector<f64>> = nontrivial
        .iter()
        .filter(|w| group_distance(&id, w) <= opts.log_radius)
        .filter_map(|w| group_log(w).ok())
        .map(|a| orthonormal_coords(&a))
        .collect();
    let dim = algebra_dim(n);
    let mut gens = Vec::new();
    if !logs.is_empty() {
        let m = DMatrix::from_fn(logs.len(), dim, |i, j| logs[i][j]);
        let svd = m.svd(false, true);
        let vt = svd.v_t.expect("requested");
        let smax = svd.singular_values.max();
        let mut sv: Vec<(f64, usize)> = svd.singular_values.iter().copied().zip(0..).collect();
        sv.sort_by(|a, b| b.0.total_cmp(&a.0));
        est.residuals.singular_values = sv.iter().map(|s| s.0).collect();
        for &(s, k) in &sv {
            if s > opts.rank_tol * smax && s > 1e-12 {
                let c: Vec<f64> = vt.row(k).iter().map(|x| x / 2f64.sqrt()).collect();
                gens.push(from_coords(n, &c));
            }
        }
    }
    if gens.is_empty() {
        est.class = SubgroupClass::Other;
        est.finite_generators = nontrivial.into_iter().cloned().collect();
        est.label = est.class.label();
        return Ok(est);
    }
    let (gens, closure) = close_algebra(gens, opts.structure_tol);
    est.residuals.closure = closure;
    est.rank = gens.len();
    est.class = if n == 2 && est.rank == 1 {
        SubgroupClass::So2Circle
    } else if n == 4 && est.rank == 3 {
        let mut found = SubgroupClass::Other;
        for ch in [Chirality::SelfDual, Chirality::AntiSelfDual] {
            let span = chiral_basis(ch);
            let off: f64 = gens
                .iter()
                .map(|g| {
                    let mut r = g.clone();
                    for s in &span {
                        r -= s * b(g, s);
                    }
                    b_norm(&r)
                })
                .fold(0.0, f64::max);
            if off <= opts.structure_tol {
                est.residuals.chirality = used.iter().map(|w| chirality_residual(w, ch)).fold(0.0, f64::max);
                if est.residuals.chirality <= opts.structure_tol {
                    found = SubgroupClass::Su2InSo4 { chirality: ch };
                }
            }
        }
        found
    } else if est.rank == dim {
        SubgroupClass::FullSo { n }
    } else {
        SubgroupClass::Other
    };
    est.generators = gens;
    est.label = est.class.label();
    Ok(est)
}

/// `inf_{h ∈ H} d_b(hu, v)`.
pub fn quotient_distance(u: &DMatrix<f64>, v: &DMatrix<f64>, h: &SubgroupEstimate) -> f64 {
    if det_sign(u) != det_sign(v) {
        return f64::INFINITY;
    }
    match &h.class {
        SubgroupClass::Trivial => group_distance(u, v),
        SubgroupClass::FullSo { .. } => 0.0,
        SubgroupClass::So2Circle if u.nrows() == 2 => 0.0,
        SubgroupClass::Su2InSo4 { chirality } => so3_angle(&chiral_action(&(v * u.transpose()), chirality.other())),
        SubgroupClass::FiniteCyclic { order } => {
            let g = h.finite_generators.first().cloned().unwrap_or_else(|| rotation2(2.0 * PI / *order as f64));
            let mut p = DMatrix::identity(u.nrows(), u.nrows());
            let mut best = f64::INFINITY;
            for _ in 0..*order {
                best = best.min(group_distance(&(&p * u), v));
                p = &g * p;
            }
            best
        }
        _ => generic_quotient_distance(u, v, h),
    }
}

/// Minimises over `exp(Σ t_i X_i)` and finite generators by grid search and
/// coordinate refinement.
fn generic_quotient_distance(u: &DMatrix<f64>, v: &DMatrix<f64>, h: &SubgroupEstimate) -> f64 {
    let mut best = group_distance(u, v);
    for f in &h.finite_generators {
        best = best.min(group_distance(&(f * u), v));
    }
    let r = h.generators.len();
    if r == 0 {
        return best;
    }
    let eval = |t: &[f64]| {
        let mut a = DMatrix::zeros(u.nrows(), u.nrows());
        for (ti, g) in t.iter().zip(&h.generators) {
            a += g * *ti;
        }
        group_distance(&(group_exp(&a) * u), v)
    };
    let per = match r {
        1 => 64,
        2 => 16,
        3 => 8,
        _ => 4,
    };
    let span = 2.0 * PI;
    let mut t = vec![0.0; r];
    let total = (per as usize).pow(r as u32);
    let mut best_t = t.clone();
    for idx in 0..total.min(50_000) {
        let mut k = idx;
        for ti in t.iter_mut() {
            *ti = -span / 2.0 + span * (k % per) as f64 / per as f64;
            k /= per;
        }
        let d = eval(&t);
        if d < best {
            best = d;
            best_t = t.clone();
        }
    }
    let mut step = span / per as f64;
    while step > 1e-9 {
        let mut improved = false;
        for i in 0..r {
            for sgn in [-1.0, 1.0] {
                let mut tt = best_t.clone();
                tt[i] += sgn * step;
                let d = eval(&tt);
                if d < best {
                    best = d;
                    best_t = tt;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basis_is_b_orthogonal() {
        let bs = basis(4);
        for (i, x) in bs.iter().enumerate() {
            for (j, y) in bs.iter().enumerate() {
                assert_eq!(b(x, y), if i == j { 2.0 } else { 0.0 });
            }
        }
        assert!(biinvariant_inner(&DMatrix::identity(2, 2), &bs[0]).is_err());
    }

    #[test]
    fn exp_of_rotation_generator() {
        let th = 1.234;
        let w = group_exp(&(basis_element(2, 0, 1) * th));
        assert!((w - rotation2(th)).abs().max() < 1e-15);
        assert_eq!(group_exp(&DMatrix::zeros(3, 3)), DMatrix::identity(3, 3));
    }

    #[test]
    fn log_round_trip() {
        let a = basis_element(3, 0, 1) * 0.3 + basis_element(3, 0, 2) * 0.1;
        let back = group_log(&group_exp(&a)).unwrap();
        assert!((back - a).abs().max() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 2..6 {
            for _ in 0..20 {
                let mut a = random_skew(n, &mut rng, 1.0);
                let nb = b_norm(&a);
                if nb >= PI {
                    a *= 2.5 / nb;
                }
                let back = group_log(&group_exp(&a)).unwrap();
                assert!((back - &a).abs().max() < 1e-10, "{n}");
            }
        }
    }

    #[test]
    fn log_refuses_half_turn() {
        assert!(matches!(group_log(&rotation2(PI)), Err(Error::LogBranch(_))));
        assert!(group_log(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]))).is_err());
    }

    #[test]
    fn distances_in_o2() {
        let id = DMatrix::identity(2, 2);
        assert_eq!(group_distance(&id, &id), 0.0);
        for th in [0.1, 1.0, 3.0, PI] {
            assert!((group_distance(&id, &rotation2(th)) - 2f64.sqrt() * th).abs() < 1e-12, "{th}");
        }
        let refl = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(group_distance(&id, &refl).is_infinite());
    }

    #[test]
    fn hodge_star_squares_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_skew(4, &mut rng, 1.0);
        assert!((hodge_star(&hodge_star(&a)) - &a).abs().max() < 1e-15);
        for ch in [Chirality::SelfDual, Chirality::AntiSelfDual] {
            let sg = if ch == Chirality::SelfDual { 1.0 } else { -1.0 };
            for x in chiral_basis(ch) {
                assert!((hodge_star(&x) - &x * sg).abs().max() < 1e-15);
                assert!((b(&x, &x) - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn chiral_factors_commute() {
        for x in chiral_basis(Chirality::SelfDual) {
            for y in chiral_basis(Chirality::AntiSelfDual) {
                assert!(bracket(&x, &y).abs().max() < 1e-15);
            }
        }
    }

    #[test]
    fn classify_basic_cases() {
        let opts = ClassifyOptions::default();
        let id = DMatrix::identity(2, 2);
        assert_eq!(classify_subgroup(&[(id.clone(), 0.0)], &opts).unwrap().class, SubgroupClass::Trivial);
        let z3: Vec<_> = (0..5).map(|k| (rotation2(2.0 * PI * k as f64 / 3.0), 1.0)).collect();
        assert_eq!(classify_subgroup(&z3, &opts).unwrap().class, SubgroupClass::FiniteCyclic { order: 3 });
        let a = 2f64.sqrt() - 1.0;
        let irr: Vec<_> = (1..=50).map(|k| (rotation2(2.0 * PI * a * k as f64), 0.01 * k as f64)).collect();
        assert_eq!(classify_subgroup(&irr, &opts).unwrap().class, SubgroupClass::So2Circle);
        assert!(classify_subgroup(&[], &opts).is_err());
    }

    #[test]
    fn classify_su2_and_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let basis = chiral_basis(Chirality::AntiSelfDual);
        let su2: Vec<_> = (0..12)
            .map(|_| {
                let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
                let a = &basis[0] * c[0] + &basis[1] * c[1] + &basis[2] * c[2];
                (group_exp(&a), 0.1)
            })
            .collect();
        let est = classify_subgroup(&su2, &ClassifyOptions::default()).unwrap();
        assert_eq!(est.class, SubgroupClass::Su2InSo4 { chirality: Chirality::AntiSelfDual });
        assert!(est.residuals.chirality < 1e-12);
        let full: Vec<_> = (0..20).map(|_| (group_exp(&random_skew(3, &mut rng, 0.2)), 0.1)).collect();
        assert_eq!(classify_subgroup(&full, &ClassifyOptions::default()).unwrap().class, SubgroupClass::FullSo { n: 3 });
    }

    #[test]
    fn quotient_diameters_in_o4() {
        let su2 = SubgroupEstimate::of_class(4, SubgroupClass::Su2InSo4 { chirality: Chirality::SelfDual });
        let id = DMatrix::identity(4, 4);
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1.0, 1.0, 1.0]));
        // w lies in neither factor; ±I lies in both
        assert!((quotient_distance(&id, &(-&id), &su2)).abs() < 1e-12);
        assert!((quotient_distance(&id, &w, &su2) - PI).abs() < 1e-9);
    }

    #[test]
    fn quotient_by_circle_in_o2() {
        let h = SubgroupEstimate::of_class(2, SubgroupClass::So2Circle);
        assert_eq!(quotient_distance(&rotation2(0.3), &rotation2(2.0), &h), 0.0);
        let refl = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(quotient_distance(&rotation2(0.3), &refl, &h).is_infinite());
        let t = SubgroupEstimate::trivial(2);
        assert_eq!(quotient_distance(&rotation2(0.3), &rotation2(1.0), &t), group_distance(&rotation2(0.3), &rotation2(1.0)));
    }
}
