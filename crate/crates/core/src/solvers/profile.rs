use crate::error::{invalid, Error, Result};

/// Minimum of `∫_0^L ((1 - v)^p + |v'|^p)` over `v(0) = 0`, `v(L) = 1` on an
/// `N`-node grid (trapezoidal rule for the potential, exact difference
/// quotients for the gradient), solved by damped Newton iterations.
///
/// For `p < 2` the power is not twice differentiable at 0 and the optimal
/// profile reaches 1 at a finite distance, so Newton runs on the smoothed
/// power `(x² + δ²)^{p/2} - δ^p` with `δ` driven down to `1e-10`.
pub fn profile_1d_value(p: f64, length: f64, nodes: usize) -> Result<f64> {
    if !(p.is_finite() && p > 1.0) {
        return invalid(format!("exponent p must be > 1, got {p}"));
    }
    if !(length.is_finite() && length > 0.0) {
        return invalid("interval length must be positive");
    }
    if nodes < 3 {
        return invalid("at least three nodes are required");
    }
    let problem = Profile {
        p,
        h: length / (nodes - 1) as f64,
        n: nodes,
    };
    // initial guess: linear ramp (strictly increasing, so every difference
    // quotient is away from the kink at 0)
    let mut v: Vec<f64> = (0..nodes).map(|i| i as f64 / (nodes - 1) as f64).collect();
    let deltas: Vec<f64> = if p < 2.0 {
        (1..=10).map(|k| 10f64.powi(-k)).collect()
    } else {
        vec![0.0]
    };
    let mut converged = false;
    for delta in deltas {
        converged = problem.newton(&mut v, delta)?;
    }
    if !converged {
        return Err(Error::Solver(format!(
            "profile Newton iteration did not converge (p = {p}, L = {length}, N = {nodes})"
        )));
    }
    Ok(problem.energy(&v, 0.0))
}

struct Profile {
    p: f64,
    h: f64,
    n: usize,
}

impl Profile {
    /// `(x² + δ²)^{p/2} - δ^p` and its first two derivatives.
    fn power(&self, x: f64, delta: f64) -> (f64, f64, f64) {
        let p = self.p;
        if delta == 0.0 {
            let a = x.abs();
            return (
                a.powf(p),
                p * a.powf(p - 1.0) * x.signum(),
                (p * (p - 1.0) * a.powf(p - 2.0)).min(1e12),
            );
        }
        let s = x * x + delta * delta;
        (
            s.powf(0.5 * p) - delta.powf(p),
            p * x * s.powf(0.5 * p - 1.0),
            p * s.powf(0.5 * p - 2.0) * ((p - 1.0) * x * x + delta * delta),
        )
    }

    fn weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.n - 1 {
            0.5 * self.h
        } else {
            self.h
        }
    }

    fn energy(&self, v: &[f64], delta: f64) -> f64 {
        let pot: f64 = (0..self.n)
            .map(|i| self.weight(i) * self.power(1.0 - v[i], delta).0)
            .sum();
        let grad: f64 = v
            .windows(2)
            .map(|w| self.h * self.power((w[1] - w[0]) / self.h, delta).0)
            .sum();
        pot + grad
    }

    /// Newton on the interior nodes; true once the scaled gradient is below
    /// `1e-10` or the squared Newton decrement below `1e-14`.
    fn newton(&self, v: &mut Vec<f64>, delta: f64) -> Result<bool> {
        let (n, h) = (self.n, self.h);
        let m = n - 2;
        let mut e = self.energy(v, delta);
        for _ in 0..500 {
            let mut g = vec![0.0; m];
            let mut diag = vec![0.0; m];
            let mut off = vec![0.0; m.saturating_sub(1)];
            for k in 0..m {
                let i = k + 1;
                let (_, d1, d2) = self.power(1.0 - v[i], delta);
                g[k] -= self.weight(i) * d1;
                diag[k] += self.weight(i) * d2;
            }
            for i in 0..n - 1 {
                let (_, d1, d2) = self.power((v[i + 1] - v[i]) / h, delta);
                let dh = d2 / h;
                if i >= 1 {
                    g[i - 1] -= d1;
                    diag[i - 1] += dh;
                }
                if i < m {
                    g[i] += d1;
                    diag[i] += dh;
                }
                if i >= 1 && i < m {
                    off[i - 1] -= dh;
                }
            }
            let g_norm = g.iter().fold(0.0f64, |a, b| a.max(b.abs())) / h;
            if g_norm <= 1e-10 {
                return Ok(true);
            }
            let floor = 1e-14 * diag.iter().fold(0.0f64, |a, b| a.max(*b));
            diag.iter_mut().for_each(|d| *d = d.max(floor));
            let step = solve_tridiagonal(&off, &diag, &off, &g)
                .ok_or_else(|| Error::Solver("singular profile Hessian".into()))?;
            let slope: f64 = -g.iter().zip(&step).map(|(a, b)| a * b).sum::<f64>();
            // squared Newton decrement: twice the predicted energy gap
            if -slope <= 1e-14 {
                return Ok(true);
            }
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let mut trial = v.clone();
                for k in 0..m {
                    trial[k + 1] -= t * step[k];
                }
                let et = self.energy(&trial, delta);
                if et <= e + 1e-4 * t * slope {
                    *v = trial;
                    e = et;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                return Ok(false);
            }
        }
        Ok(false)
    }
}

/// Thomas algorithm for `lower_{i-1} x_{i-1} + diag_i x_i + upper_i x_{i+1} = rhs_i`.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return None;
    }
    if n > 1 {
        c[0] = upper[0] / denom;
    }
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i - 1] * c[i - 1];
        if denom == 0.0 {
            return None;
        }
        if i < n - 1 {
            c[i] = upper[i] / denom;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}
