use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

use super::expr::Expr;
use super::tape::{Binding, Tape};
use super::DslError;
use crate::error::{Error, Result};
use crate::riemann::MetricJet;

/// Closed coordinate interval; either end may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn unbounded() -> Self {
        Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY }
    }

    /// Finite sub-interval shrunk by `frac` of its width at each end; infinite
    /// ends are clipped to a window of width 10.
    pub fn interior(&self, frac: f64) -> Interval {
        let (lo, hi) = match (self.lo.is_finite(), self.hi.is_finite()) {
            (true, true) => (self.lo, self.hi),
            (true, false) => (self.lo, self.lo + 10.0),
            (false, true) => (self.hi - 10.0, self.hi),
            (false, false) => (-5.0, 5.0),
        };
        let w = hi - lo;
        Interval::new(lo + frac * w, hi - frac * w)
    }

    /// Interior sample abscissae used by positivity checks; infinite ends are
    /// clipped to a window of width 10.
    fn grid(&self, k: usize) -> Vec<f64> {
        let Interval { lo, hi } = self.interior(0.0);
        (0..k).map(|i| lo + (i as f64 + 0.5) * (hi - lo) / k as f64).collect()
    }
}

/// Symbolic metric tensor on a single coordinate chart.
#[derive(Clone)]
pub struct MetricSpec {
    coords: Vec<String>,
    params: Vec<(String, f64)>,
    domain: Vec<Interval>,
    periods: Vec<Option<f64>>,
    components: Vec<Vec<Expr>>,
    tapes: Arc<[OnceLock<Tape>; 4]>,
}

impl std::fmt::Debug for MetricSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MetricSpec({})", self.to_gmet().replace('\n', " "))
    }
}

const SPD_RATIO: f64 = 1e-12;

impl MetricSpec {
    pub fn new(
        coords: Vec<String>,
        params: Vec<(String, f64)>,
        domain: Vec<Interval>,
        periods: Vec<Option<f64>>,
        components: Vec<Vec<Expr>>,
    ) -> Result<Self, DslError> {
        let n = coords.len();
        if n == 0 || components.len() != n || components.iter().any(|r| r.len() != n) {
            return Err(DslError::DimMismatch(format!("expected a {n}x{n} component matrix")));
        }
        if domain.len() != n || periods.len() != n {
            return Err(DslError::DimMismatch("domain and periods need one entry per coordinate".into()));
        }
        for i in 0..n {
            for j in i + 1..n {
                if components[i][j] != components[j][i] {
                    return Err(DslError::NonSymmetric(i, j));
                }
            }
        }
        for (iv, c) in domain.iter().zip(&coords) {
            if iv.lo.is_nan() || iv.hi.is_nan() || iv.lo >= iv.hi {
                return Err(DslError::Domain(format!("empty interval for `{c}`")));
            }
        }
        for (p, c) in periods.iter().zip(&coords) {
            if let Some(p) = p {
                if !(p.is_finite() && *p > 0.0) {
                    return Err(DslError::Domain(format!("period of `{c}` must be positive")));
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for name in coords.iter().chain(params.iter().map(|(p, _)| p)) {
            if !seen.insert(name.as_str()) {
                return Err(DslError::Domain(format!("`{name}` declared twice")));
            }
        }
        for row in &components {
            for e in row {
                for v in e.variables() {
                    if !seen.contains(v.as_str()) {
                        return Err(DslError::Unbound { name: v, line: 0, col: 0 });
                    }
                }
            }
        }
        let m = MetricSpec { coords, params, domain, periods, components, tapes: Arc::new(Default::default()) };
        m.check_spd_grid(m.default_grid())?;
        Ok(m)
    }

    fn default_grid(&self) -> usize {
        match self.dim() {
            1 | 2 => 6,
            3 => 4,
            _ => 3,
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(p, _)| p == name).map(|(_, v)| *v)
    }

    pub fn domain(&self) -> &[Interval] {
        &self.domain
    }

    pub fn periods(&self) -> &[Option<f64>] {
        &self.periods
    }

    pub fn component(&self, i: usize, j: usize) -> &Expr {
        &self.components[i][j]
    }

    pub fn components(&self) -> &[Vec<Expr>] {
        &self.components
    }

    /// Same metric with a different domain.
    /// Uniform random interior point, keeping `frac` of each width clear of
    /// the boundary.
    pub fn random_point<R: rand::Rng + ?Sized>(&self, rng: &mut R, frac: f64) -> Vec<f64> {
        self.domain
            .iter()
            .map(|iv| {
                let Interval { lo, hi } = iv.interior(frac);
                rng.gen_range(lo..hi)
            })
            .collect()
    }

    pub fn with_domain(&self, domain: Vec<Interval>) -> Result<Self, DslError> {
        MetricSpec::new(self.coords.clone(), self.params.clone(), domain, self.periods.clone(), self.components.clone())
    }

    /// Components multiplied by `lambda^2`.
    pub fn rescaled(&self, lambda: f64) -> Result<Self, DslError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(DslError::OutOfRange(format!("rescale factor {lambda} must be positive")));
        }
        let s = Expr::num(lambda * lambda);
        let comps = self.map_components(|e| s.clone() * e.clone());
        MetricSpec::new(self.coords.clone(), self.params.clone(), self.domain.clone(), self.periods.clone(), comps)
    }

    /// `g + delta * h` for a symmetric perturbation `h` over the same names.
    pub fn perturbed(&self, h: &[Vec<Expr>], delta: f64) -> Result<Self, DslError> {
        let n = self.dim();
        let d = Expr::num(delta);
        let mut comps = self.components.clone();
        for i in 0..n {
            for j in i..n {
                let e = self.components[i][j].clone() + d.clone() * h[i][j].clone();
                comps[i][j] = e.clone();
                comps[j][i] = e;
            }
        }
        MetricSpec::new(self.coords.clone(), self.params.clone(), self.domain.clone(), self.periods.clone(), comps)
    }

    fn map_components(&self, f: impl Fn(&Expr) -> Expr) -> Vec<Vec<Expr>> {
        let n = self.dim();
        let mut comps = self.components.clone();
        for i in 0..n {
            for j in i..n {
                let e = f(&self.components[i][j]);
                comps[i][j] = e.clone();
                comps[j][i] = e;
            }
        }
        comps
    }

    /// Reduces periodic coordinates into their domain interval.
    pub fn wrap(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(&self.periods)
            .zip(&self.domain)
            .map(|((&x, per), iv)| match per {
                Some(per) if iv.lo.is_finite() => iv.lo + (x - iv.lo).rem_euclid(*per),
                Some(per) => x.rem_euclid(*per),
                None => x,
            })
            .collect()
    }

    /// Shortest coordinate displacement from `p` to `q`, using periods.
    pub fn displacement(&self, p: &[f64], q: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(q)
            .zip(&self.periods)
            .map(|((a, b), per)| {
                let d = b - a;
                match per {
                    Some(per) => d - per * (d / per).round(),
                    None => d,
                }
            })
            .collect()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        if p.len() != self.dim() || p.iter().any(|x| !x.is_finite()) {
            return false;
        }
        let w = self.wrap(p);
        w.iter().zip(&self.domain).all(|(x, iv)| {
            let tol = 1e-12 * (1.0 + x.abs());
            *x >= iv.lo - tol && *x <= iv.hi + tol
        })
    }

    pub fn check_domain(&self, p: &[f64]) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::OutsideDomain(p.to_vec()))
        }
    }

    fn tape(&self, order: usize) -> &Tape {
        self.tapes[order].get_or_init(|| self.build_tape(order))
    }

    fn multi_indices(n: usize, order: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        let mut layer: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..order {
            let mut next = Vec::new();
            for mi in &layer {
                let start = mi.last().copied().unwrap_or(0);
                for a in start..n {
                    let mut m = mi.clone();
                    m.push(a);
                    next.push(m);
                }
            }
            out.extend(next.iter().cloned());
            layer = next;
        }
        out
    }

    fn build_tape(&self, order: usize) -> Tape {
        let n = self.dim();
        let mut exprs = Vec::new();
        for mi in Self::multi_indices(n, order) {
            for i in 0..n {
                for j in i..n {
                    exprs.push(self.derivative(i, j, &mi));
                }
            }
        }
        let bind = |name: &str| {
            if let Some(i) = self.coords.iter().position(|c| c == name) {
                return Some(Binding::Slot(i));
            }
            self.param(name).map(Binding::Value)
        };
        Tape::compile(&exprs, n, &bind).expect("names validated at construction")
    }

    /// Symbolic mixed partial of `g_ij`.
    pub fn derivative(&self, i: usize, j: usize, mi: &[usize]) -> Expr {
        let mut e = self.components[i][j].clone();
        for &a in mi {
            e = e.differentiate(&self.coords[a]);
        }
        e
    }

    /// Metric matrix at `p`, without domain or positivity checks.
    pub fn eval_metric(&self, p: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let vals = self.tape(0).eval(p);
        let mut g = DMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                g[(i, j)] = vals[k];
                g[(j, i)] = vals[k];
                k += 1;
            }
        }
        g
    }

    /// Metric and its partial derivatives up to `order` (at most 3).
    pub fn jet(&self, p: &[f64], order: usize) -> Result<MetricJet> {
        self.check_domain(p)?;
        self.jet_unchecked(p, order)
    }

    /// [`MetricSpec::jet`] without the domain test, for stencils that may
    /// straddle a boundary.
    pub fn jet_unchecked(&self, p: &[f64], order: usize) -> Result<MetricJet> {
        assert!(order <= 3, "jets are available up to order 3");
        let n = self.dim();
        let vals = self.tape(order).eval(p);
        let mut jet = MetricJet::zeros(n, order);
        let npairs = n * (n + 1) / 2;
        for (block, mi) in Self::multi_indices(n, order).iter().enumerate() {
            let base = block * npairs;
            let mut k = 0;
            for i in 0..n {
                for j in i..n {
                    jet.set_sym(mi, i, j, vals[base + k]);
                    k += 1;
                }
            }
        }
        if jet.g().iter().any(|v| !v.is_finite()) {
            return Err(Error::NotSpd { point: p.to_vec(), cond: f64::INFINITY });
        }
        Ok(jet)
    }

    /// True when the metric at `p` passes the eigenvalue-ratio test.
    pub fn is_spd_at(&self, p: &[f64]) -> bool {
        spd_ok(&self.eval_metric(p))
    }

    /// Positivity check on a `k^n` interior grid of the domain.
    pub fn check_spd_grid(&self, k: usize) -> Result<(), DslError> {
        let axes: Vec<Vec<f64>> = self.domain.iter().map(|iv| iv.grid(k)).collect();
        let n = self.dim();
        let total = k.pow(n as u32);
        let mut p = vec![0.0; n];
        for idx in 0..total {
            let mut r = idx;
            for a in 0..n {
                p[a] = axes[a][r % k];
                r /= k;
            }
            if !self.is_spd_at(&p) {
                return Err(DslError::NotPositiveDefinite { point: p.clone() });
            }
        }
        Ok(())
    }

    /// Canonical `.gmet` text.
    pub fn to_gmet(&self) -> String {
        let mut s = String::new();
        let n = self.dim();
        let _ = writeln!(s, "dim {n};");
        let _ = writeln!(s, "coords {};", self.coords.join(" "));
        if !self.params.is_empty() {
            let ps: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={}", Expr::num(*v))).collect();
            let _ = writeln!(s, "params {};", ps.join(" "));
        }
        let dom: Vec<String> = self
            .coords
            .iter()
            .zip(&self.domain)
            .filter(|(_, iv)| iv.lo.is_finite() || iv.hi.is_finite())
            .map(|(c, iv)| format!("{c} in [{}, {}]", Expr::num(iv.lo), Expr::num(iv.hi)))
            .collect();
        if !dom.is_empty() {
            let _ = writeln!(s, "domain {};", dom.join(" "));
        }
        let per: Vec<String> = self
            .coords
            .iter()
            .zip(&self.periods)
            .filter_map(|(c, p)| p.map(|p| format!("{c}={}", Expr::num(p))))
            .collect();
        if !per.is_empty() {
            let _ = writeln!(s, "periodic {};", per.join(" "));
        }
        let rows: Vec<String> = self
            .components
            .iter()
            .map(|r| format!("[{}]", r.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(", ")))
            .collect();
        let _ = writeln!(s, "g = [{}];", rows.join(",\n     "));
        s
    }

    /// Variable bindings for evaluating component expressions by name.
    pub fn env<'a>(&'a self, p: &'a [f64]) -> impl Fn(&str) -> Option<f64> + 'a {
        move |name: &str| {
            if let Some(i) = self.coords.iter().position(|c| c == name) {
                return Some(p[i]);
            }
            self.param(name)
        }
    }

    /// Parameter map used for substitution into expressions.
    pub fn param_map(&self) -> HashMap<String, Expr> {
        self.params.iter().map(|(k, v)| (k.clone(), Expr::num(*v))).collect()
    }
}

pub(crate) fn spd_ok(g: &DMatrix<f64>) -> bool {
    if g.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let eig = SymmetricEigen::new(g.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    max > 0.0 && min > SPD_RATIO * max
}

#[cfg(test)]
mod tests {
    use super::super::parse_metric;
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sample_points(m: &MetricSpec, k: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..k)
            .map(|_| {
                m.domain()
                    .iter()
                    .map(|iv| {
                        let lo = if iv.lo.is_finite() { iv.lo } else { -3.0 };
                        let hi = if iv.hi.is_finite() { iv.hi } else { lo + 6.0 };
                        rng.gen_range(lo + 0.01 * (hi - lo)..hi - 0.01 * (hi - lo))
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn jet_matches_symbolic_derivatives() {
        let m = parse_metric("coords x y; domain x in [-1, 1] y in [-1, 1]; g = [[1 + x^2, x*y], [x*y, 2 + sin(y)]]").unwrap();
        let jet = m.jet(&[0.3, 0.7], 3).unwrap();
        assert!((jet.dg(0, 0, 0) - 0.6).abs() < 1e-15);
        assert!((jet.d2g(1, 0, 0, 1) - 1.0).abs() < 1e-15);
        assert!((jet.d3g(1, 1, 1, 1, 1) + 0.7f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn pretty_print_round_trip() {
        let src = "dim 2; coords r ph; params a=0.41421356237309503 eps=0.1;
            domain r in [0, inf] ph in [0, 2*pi]; periodic ph = 2*pi;
            g = [[1, 0], [0, piecewise(r - 2*eps, (r*(1 + (a - 1)*(1 - (1 - (r/(2*eps))^2)^3)))^2, (a*r)^2)]];";
        let m = parse_metric(src).unwrap();
        let m2 = parse_metric(&m.to_gmet()).unwrap();
        assert_eq!(m.to_gmet(), m2.to_gmet());
        for p in sample_points(&m.with_domain(vec![Interval::new(0.01, 2.0), Interval::new(0.0, 6.0)]).unwrap(), 100, 3) {
            let d = (m.eval_metric(&p) - m2.eval_metric(&p)).abs().max();
            assert!(d <= 1e-14, "{d}");
        }
    }

    #[test]
    fn wrap_and_displacement() {
        let m = parse_metric("coords x y; domain x in [0, 1] y in [0, 1]; periodic x = 1 y = 1; g = [[1,0],[0,1]]").unwrap();
        assert!(m.contains(&[3.25, -0.5]));
        let d = m.displacement(&[0.9, 0.1], &[0.1, 0.9]);
        assert!((d[0] - 0.2).abs() < 1e-15 && (d[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn rescaled_components_are_products() {
        let m = parse_metric("coords x y; g = [[1,0],[0,1 + x^2]]").unwrap();
        let r = m.rescaled(3.0).unwrap();
        assert_eq!(*r.component(1, 1), Expr::num(9.0) * m.component(1, 1).clone());
    }
}
