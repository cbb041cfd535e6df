//! Limited-memory BFGS with a backtracking Armijo line search.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    pub max_evals: usize,
    /// Stop when the infinity norm of the gradient falls below this.
    pub grad_tol: f64,
    /// Stop when an iteration lowers `f` by less than `rel_tol * max(1, |f|)`.
    pub rel_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 8,
            max_iter: 100,
            max_evals: 400,
            grad_tol: 1e-8,
            rel_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStatus {
    GradientSmall,
    Stalled,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `f`, which writes its gradient into the second argument and
/// returns the value.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, cfg: &LbfgsConfig) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evals = 1;
    let mut s_hist: Vec<Vec<f64>> = Vec::with_capacity(cfg.memory);
    let mut y_hist: Vec<Vec<f64>> = Vec::with_capacity(cfg.memory);
    let mut rho_hist: Vec<f64> = Vec::with_capacity(cfg.memory);
    let mut d = vec![0.0; n];
    let mut alpha = vec![0.0; cfg.memory];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    let mut status = LbfgsStatus::MaxIterations;
    let mut iter = 0;
    while iter < cfg.max_iter {
        if !fx.is_finite() {
            status = LbfgsStatus::LineSearchFailed;
            break;
        }
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < cfg.grad_tol {
            status = LbfgsStatus::GradientSmall;
            break;
        }
        // two-loop recursion
        d.copy_from_slice(&g);
        let m = s_hist.len();
        for i in (0..m).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &d);
            for (dj, yj) in d.iter_mut().zip(&y_hist[i]) {
                *dj -= alpha[i] * yj;
            }
        }
        let gamma = if m > 0 {
            dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1])
        } else {
            1.0 / dot(&g, &g).sqrt().max(1e-300)
        };
        for dj in d.iter_mut() {
            *dj *= gamma;
        }
        for i in 0..m {
            let b = rho_hist[i] * dot(&y_hist[i], &d);
            for (dj, sj) in d.iter_mut().zip(&s_hist[i]) {
                *dj += (alpha[i] - b) * sj;
            }
        }
        for dj in d.iter_mut() {
            *dj = -*dj;
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            // not a descent direction: restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            let scale = 1.0 / dot(&g, &g).sqrt().max(1e-300);
            for (dj, gj) in d.iter_mut().zip(&g) {
                *dj = -gj * scale;
            }
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = false;
        let mut f_new = fx;
        while evals < cfg.max_evals {
            for ((xn, xi), di) in x_new.iter_mut().zip(&x).zip(&d) {
                *xn = xi + step * di;
            }
            f_new = f(&x_new, &mut g_new);
            evals += 1;
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= if f_new.is_finite() { 0.5 } else { 0.1 };
            if step < 1e-12 {
                break;
            }
        }
        if !accepted && !s_hist.is_empty() && evals < cfg.max_evals {
            // the curvature model went stale: retry along the steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            continue;
        }
        if !accepted {
            status = if evals >= cfg.max_evals {
                LbfgsStatus::MaxIterations
            } else {
                LbfgsStatus::LineSearchFailed
            };
            break;
        }
        iter += 1;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if s_hist.len() == cfg.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
        }
        let decrease = fx - f_new;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;
        if decrease <= cfg.rel_tol * fx.abs().max(1.0) {
            status = LbfgsStatus::Stalled;
            break;
        }
        if evals >= cfg.max_evals {
            break;
        }
    }
    LbfgsResult {
        x,
        f: fx,
        iterations: iter,
        evaluations: evals,
        status,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let cfg = LbfgsConfig {
            max_iter: 500,
            max_evals: 5000,
            ..Default::default()
        };
        let r = minimize(f, vec![-1.2, 1.0], &cfg);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{r:?}");
    }

    #[test]
    fn ill_conditioned_quadratic() {
        let w: Vec<f64> = (0..20).map(|i| 10f64.powf(i as f64 / 5.0)).collect();
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..x.len() {
                g[i] = w[i] * (x[i] - 1.0);
                v += 0.5 * w[i] * (x[i] - 1.0).powi(2);
            }
            v
        };
        let cfg = LbfgsConfig {
            max_iter: 1000,
            max_evals: 5000,
            grad_tol: 1e-9,
            rel_tol: 0.0,
            ..Default::default()
        };
        let r = minimize(f, vec![0.0; 20], &cfg);
        assert!(r.x.iter().all(|v| (v - 1.0).abs() < 1e-6), "{:?}", r.status);
    }

    #[test]
    fn evaluation_cap_is_respected() {
        let mut calls = 0;
        let f = |x: &[f64], g: &mut [f64]| {
            calls += 1;
            g[0] = 2.0 * x[0];
            x[0] * x[0]
        };
        let cfg = LbfgsConfig {
            max_evals: 3,
            ..Default::default()
        };
        let r = minimize(f, vec![10.0], &cfg);
        assert!(r.evaluations <= 3);
        assert_eq!(calls, r.evaluations);
    }
}
