//! Derivative-free Nelder–Mead minimization.

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Offset of each non-start vertex along its coordinate axis.
    pub initial_step: f64,
    /// Stop once the spread of vertex values falls below this.
    pub f_tol: f64,
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            initial_step: 1.0,
            f_tol: 1e-10,
            x_tol: 1e-10,
        }
    }
}

/// Minimizes `f` from `start`, returning the best vertex and its value.
/// Non-finite objective values are treated as `+∞`.
pub fn nelder_mead<F>(f: &F, start: &[f64], options: &NelderMeadOptions) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), eval(start)));
    for i in 0..n {
        let mut x = start.to_vec();
        x[i] += options.initial_step;
        let v = eval(&x);
        simplex.push((x, v));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    for _ in 0..options.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = simplex
            .iter()
            .skip(1)
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if best.is_finite() && (worst - best).abs() <= options.f_tol && spread <= options.x_tol {
            break;
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let reflected = along(-alpha);
        let fr = eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(-alpha * gamma);
            let fe = eval(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < simplex[n].1 {
            let x = along(-alpha * rho);
            let v = eval(&x);
            (x, v)
        } else {
            let x = along(rho);
            let v = eval(&x);
            (x, v)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (contracted, fc);
            continue;
        }
        let best_x = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = best_x
                .iter()
                .zip(&vertex.0)
                .map(|(b, v)| b + sigma * (v - b))
                .collect();
            let v = eval(&x);
            *vertex = (x, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions {
            max_iter: 2000,
            initial_step: 0.5,
            ..Default::default()
        };
        let (x, v) = nelder_mead(&f, &[-1.2, 1.0], &opts);
        assert!(v < 1e-8, "{v}");
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn nan_is_treated_as_worst() {
        let f = |x: &[f64]| if x[0] > 0.5 { f64::NAN } else { (x[0] + 1.0).powi(2) };
        let (x, v) = nelder_mead(&f, &[0.0], &NelderMeadOptions::default());
        assert!(v < 1e-8);
        assert!((x[0] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn scaling_objective_preserves_path() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + (x[1] + 2.0).powi(4);
        let g = |x: &[f64]| 2.0 * f(x);
        let opts = NelderMeadOptions::default();
        let (xf, _) = nelder_mead(&f, &[1.0, 1.0], &opts);
        let (xg, _) = nelder_mead(&g, &[1.0, 1.0], &opts);
        assert_eq!(xf, xg);
    }
}
