//! Dormand–Prince 5(4) integrator with adaptive steps.

#[derive(Clone, Copy, Debug)]
pub struct Dopri {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
    /// Upper bound on the step size; 0 means unbounded.
    pub h_max: f64,
}

impl Default for Dopri {
    fn default() -> Self {
        Dopri { atol: 1e-10, rtol: 1e-10, max_steps: 1_000_000, h_max: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OdeError {
    StepLimit(usize),
    /// The right-hand side refused the state; `t` and `y` are the last
    /// accepted values.
    Rejected { t: f64, y: Vec<f64> },
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

impl Dopri {
    pub fn integrate<F>(&self, f: F, t0: f64, t1: f64, y0: &[f64]) -> Result<Vec<f64>, OdeError>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> bool,
    {
        self.integrate_observed(f, t0, t1, y0, |_, _| {})
    }

    /// Integrates from `t0` to `t1`, calling `observe` after every accepted
    /// step. `f` returns `false` when the state is not admissible.
    pub fn integrate_observed<F, O>(
        &self,
        mut f: F,
        t0: f64,
        t1: f64,
        y0: &[f64],
        mut observe: O,
    ) -> Result<Vec<f64>, OdeError>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> bool,
        O: FnMut(f64, &[f64]),
    {
        let dim = y0.len();
        let mut y = y0.to_vec();
        if t1 == t0 {
            return Ok(y);
        }
        let dir = (t1 - t0).signum();
        let span = (t1 - t0).abs();
        let h_cap = if self.h_max > 0.0 { self.h_max.min(span) } else { span };
        let mut k = vec![vec![0.0; dim]; 7];
        let mut ytmp = vec![0.0; dim];
        let mut ynew = vec![0.0; dim];
        let mut t = t0;
        if !f(t, &y, &mut k[0]) {
            return Err(OdeError::Rejected { t, y });
        }
        let mut h = (0.01 * span).min(h_cap);
        let h_min = 1e-14 * span.max(1.0);
        let mut steps = 0;
        observe(t, &y);
        while (t1 - t) * dir > 0.0 {
            if steps >= self.max_steps {
                return Err(OdeError::StepLimit(self.max_steps));
            }
            steps += 1;
            let last = (t1 - t) * dir <= h;
            let hs = if last { (t1 - t) * dir } else { h };
            let hd = hs * dir;
            let mut ok = true;
            for s in 1..7 {
                for i in 0..dim {
                    let mut acc = y[i];
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += hd * A[s][j] * kj[i];
                    }
                    ytmp[i] = acc;
                }
                if !f(t + C[s] * hd, &ytmp, &mut k[s]) {
                    ok = false;
                    break;
                }
                if s == 6 {
                    ynew.copy_from_slice(&ytmp);
                }
            }
            if !ok {
                h = hs * 0.25;
                if h < h_min {
                    return Err(OdeError::Rejected { t, y });
                }
                continue;
            }
            let mut err: f64 = 0.0;
            for i in 0..dim {
                let mut e = 0.0;
                for s in 0..7 {
                    e += (B5[s] - B4[s]) * k[s][i];
                }
                let sc = self.atol + self.rtol * y[i].abs().max(ynew[i].abs());
                err = err.max((hd * e).abs() / sc);
            }
            if err <= 1.0 {
                t = if last { t1 } else { t + hd };
                y.copy_from_slice(&ynew);
                k.swap(0, 6);
                observe(t, &y);
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h = (hs * fac).min(h_cap);
            } else {
                h = hs * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                if h < h_min {
                    return Err(OdeError::Rejected { t, y });
                }
            }
        }
        Ok(y)
    }
}
