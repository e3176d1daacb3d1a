//! Derivative-free minimization (Nelder–Mead with restarts).

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when (f_worst - f_best) <= f_rel_tol * |f_best| ...
    pub f_rel_tol: f64,
    /// ... and every vertex is within x_tol of the best one (max-norm).
    pub x_tol: f64,
    /// Relative size of the initial simplex.
    pub initial_step: f64,
    /// Restarts from the best point after a convergence.
    pub max_restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 10_000,
            f_rel_tol: 1e-10,
            x_tol: 1e-8,
            initial_step: 0.25,
            max_restarts: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
    pub restarts: usize,
}

struct Counter<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counter<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum {
    let mut counter = Counter { f, evals: 0 };
    let mut best_x = x0.to_vec();
    let mut best_f = counter.eval(&best_x);
    let mut restarts = 0;
    loop {
        let (x, fx, converged) = run_simplex(&mut counter, &best_x, opts);
        let improved = best_f - fx > opts.f_rel_tol * fx.abs().max(f64::MIN_POSITIVE);
        if fx <= best_f {
            best_x = x;
            best_f = fx;
        }
        if !converged {
            return Minimum {
                x: best_x,
                f: best_f,
                evals: counter.evals,
                converged: false,
                restarts,
            };
        }
        if restarts > 0 && !improved || restarts >= opts.max_restarts {
            return Minimum {
                x: best_x,
                f: best_f,
                evals: counter.evals,
                converged: true,
                restarts,
            };
        }
        restarts += 1;
    }
}

fn run_simplex<F: FnMut(&[f64]) -> f64>(
    counter: &mut Counter<F>,
    start: &[f64],
    opts: &NelderMeadOptions,
) -> (Vec<f64>, f64, bool) {
    let n = start.len();
    if n == 0 {
        let f = counter.eval(start);
        return (Vec::new(), f, true);
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), counter.eval(start)));
    for i in 0..n {
        let mut v = start.to_vec();
        let step = if v[i] != 0.0 {
            opts.initial_step * v[i].abs()
        } else {
            opts.initial_step * 0.4
        };
        v[i] += step;
        let fv = counter.eval(&v);
        simplex.push((v, fv));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_best = simplex[0].1;
        let f_worst = simplex[n].1;
        let spread = simplex
            .iter()
            .skip(1)
            .flat_map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let f_ok = (f_worst - f_best) <= opts.f_rel_tol * f_best.abs().max(f64::MIN_POSITIVE);
        if f_ok && spread <= opts.x_tol {
            return (simplex[0].0.clone(), f_best, true);
        }
        if counter.evals >= opts.max_evals {
            return (simplex[0].0.clone(), f_best, false);
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(v, _)| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(alpha);
        let fr = counter.eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(gamma);
            let fe = counter.eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(rho);
            let fc = counter.eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = counter.eval(&xc);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            for (v, b) in vertex.0.iter_mut().zip(&best) {
                *v = b + sigma * (*v - b);
            }
            vertex.1 = counter.eval(&vertex.0);
        }
    }
}
