//! Derivative-free minimisation with the Nelder–Mead simplex.

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_iter: usize,
    /// Converged once vertex objectives differ by at most this much…
    pub f_tol: f64,
    /// …and vertices are within this (relative) distance of the best one.
    pub x_tol: f64,
    /// Fresh simplices built around the incumbent after convergence.
    pub restarts: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_iter: 2000,
            f_tol: 1e-22,
            x_tol: 1e-10,
            restarts: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn run_once<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], steps: &[f64], opts: &SimplexOptions) -> SimplexResult {
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += steps[i];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        // stable sort keeps earlier vertices first among equal values
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let f_spread = (vals[n] - vals[0]).abs();
        let x_spread = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs() / (1.0 + b.abs())))
            .fold(0.0, f64::max);
        if f_spread <= opts.f_tol && x_spread <= opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n).map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (pts[n][j] - centroid[j])).collect() };

        let xr = along(-alpha);
        let fr = eval(&xr);
        if fr < vals[0] {
            let xe = along(-gamma);
            let fe = eval(&xe);
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
        // outside contraction when the reflection beat the worst vertex
        let outside = fr < vals[n];
        let xc = along(if outside { -rho } else { rho });
        let fc = eval(&xc);
        if (outside && fc <= fr) || (!outside && fc < vals[n]) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            for j in 0..n {
                pts[i][j] = pts[0][j] + sigma * (pts[i][j] - pts[0][j]);
            }
            vals[i] = eval(&pts[i]);
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    SimplexResult {
        x: pts[best].clone(),
        f: vals[best],
        iterations,
        converged,
    }
}

/// Minimises `f` from `x0` with an initial simplex of per-coordinate
/// `steps`. After each run a new simplex is built around the best point
/// (steps scaled down) until a restart stops improving.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], steps: &[f64], opts: &SimplexOptions) -> SimplexResult {
    assert_eq!(x0.len(), steps.len());
    let mut best = run_once(&f, x0, steps, opts);
    let mut total = best.iterations;
    let mut scale = 1.0;
    for _ in 0..opts.restarts {
        scale *= 0.1;
        let s: Vec<f64> = steps.iter().map(|v| v * scale).collect();
        let next = run_once(&f, &best.x, &s, opts);
        total += next.iterations;
        let improved = next.f < best.f;
        if improved {
            best = next;
        }
        if !improved || best.f <= opts.f_tol {
            break;
        }
    }
    best.iterations = total;
    best
}
