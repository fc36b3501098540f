//! Composite trapezoid rules on uniform tensor grids over a [`Domain`].

use crate::error::{Error, Result};
use crate::hilbert_gp::Domain;

/// Visits every node of a uniform `points`-per-dimension tensor grid over
/// `domain` with its composite-trapezoid weight.
pub fn for_each_node<F>(domain: &Domain, points: usize, mut visit: F) -> Result<()>
where
    F: FnMut(&[f64], f64),
{
    if points < 2 {
        return Err(Error::input(format!("trapezoid rule needs at least 2 points, got {points}")));
    }
    let dim = domain.dim();
    let steps: Vec<f64> = (0..dim)
        .map(|i| (domain.upper()[i] - domain.lower()[i]) / (points - 1) as f64)
        .collect();
    let mut counter = vec![0usize; dim];
    let mut x = vec![0.0; dim];
    loop {
        let mut weight = 1.0;
        for i in 0..dim {
            // Pin the last node to the upper bound exactly.
            x[i] = if counter[i] == points - 1 {
                domain.upper()[i]
            } else {
                domain.lower()[i] + counter[i] as f64 * steps[i]
            };
            let end = counter[i] == 0 || counter[i] == points - 1;
            weight *= if end { 0.5 * steps[i] } else { steps[i] };
        }
        visit(&x, weight);

        let mut i = 0;
        loop {
            counter[i] += 1;
            if counter[i] < points {
                break;
            }
            counter[i] = 0;
            i += 1;
            if i == dim {
                return Ok(());
            }
        }
    }
}

/// `∫_Ω f(x) dx` by the composite trapezoid rule.
pub fn integrate<F>(domain: &Domain, points: usize, mut f: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut acc = 0.0;
    for_each_node(domain, points, |x, w| acc += w * f(x))?;
    Ok(acc)
}

/// Uniform grid of `points` values on `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|k| {
                if k == points - 1 {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / (points - 1) as f64
                }
            })
            .collect(),
    }
}
