//! Derivative-free simplex minimizer with restarts.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NelderMeadConfig {
    /// Budget shared by all restarts.
    pub max_evaluations: usize,
    /// Converged when `max f - min f` over the simplex falls below this.
    pub tolerance: f64,
    pub initial_step: f64,
    pub max_restarts: usize,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_evaluations: 2000,
            tolerance: 1e-8,
            initial_step: 1.0,
            max_restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub restarts: usize,
    pub converged: bool,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Minimizes `f` from `start`. Non-finite values are treated as `+inf`.
pub fn minimize<F: FnMut(&[f64]) -> f64>(f: F, start: &[f64], config: &NelderMeadConfig) -> Minimum {
    let mut obj = Counted { f, evals: 0 };
    let n = start.len();
    let mut best_x = start.to_vec();
    let mut best_f = obj.call(start);
    if n == 0 {
        return Minimum { x: best_x, value: best_f, evaluations: obj.evals, restarts: 0, converged: true };
    }

    let mut converged;
    let mut restarts = 0;
    loop {
        let (x, fx, ok) = simplex_run(&mut obj, &best_x, best_f, config);
        let improvement = best_f - fx;
        if fx <= best_f {
            best_x = x;
            best_f = fx;
        }
        converged = ok;
        if !ok || obj.evals >= config.max_evaluations {
            break;
        }
        // a restart that gains nothing confirms the minimum
        if improvement.abs() < config.tolerance || restarts >= config.max_restarts {
            break;
        }
        restarts += 1;
    }
    Minimum { x: best_x, value: best_f, evaluations: obj.evals, restarts, converged }
}

fn simplex_run<F: FnMut(&[f64]) -> f64>(
    obj: &mut Counted<F>,
    start: &[f64],
    f_start: f64,
    config: &NelderMeadConfig,
) -> (Vec<f64>, f64, bool) {
    let n = start.len();
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut vals: Vec<f64> = Vec::with_capacity(n + 1);
    pts.push(start.to_vec());
    vals.push(f_start);
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] += config.initial_step;
        vals.push(obj.call(&p));
        pts.push(p);
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    loop {
        // stable ordering keeps runs reproducible when values tie
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[n] - vals[0];
        if spread.is_finite() && spread < config.tolerance {
            return (pts[0].clone(), vals[0], true);
        }
        let diameter = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if diameter < 1e-12 && vals[0].is_finite() {
            return (pts[0].clone(), vals[0], true);
        }
        if obj.evals >= config.max_evaluations {
            return (pts[0].clone(), vals[0], false);
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&pts[n]).map(|(c, w)| c + t * (c - w)).collect()
        };

        let xr = along(alpha);
        let fr = obj.call(&xr);
        if fr < vals[0] {
            let xe = along(gamma);
            let fe = obj.call(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let xc = along(rho * alpha);
            let fc = obj.call(&xc);
            (xc, fc.min(f64::INFINITY))
        } else {
            let xc = along(-rho);
            let fc = obj.call(&xc);
            (xc, fc)
        };
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        // shrink towards the best vertex
        for i in 1..=n {
            let p: Vec<f64> = pts[0].iter().zip(&pts[i]).map(|(b, x)| b + sigma * (x - b)).collect();
            vals[i] = obj.call(&p);
            pts[i] = p;
        }
    }
}
