//! Independent checks of the tree expansion: a spectral Galerkin–Newton solve
//! of the range equation, the plain Lindstedt series, and direct integration
//! of the equations of motion.

mod galerkin;
mod lindstedt;
mod ode;
pub mod rkf78;

pub use galerkin::{galerkin_newton, GalerkinOptions, GalerkinSolution};
pub use lindstedt::lindstedt_expand;
pub use ode::{ode_residual, OdeOptions, OdeReport};

use std::collections::BTreeMap;

use crate::lattice::Mode;

/// Real Fourier coefficients `b_{nu j}` keyed by mode, one entry per component.
pub type Coefficients = BTreeMap<Mode, Vec<f64>>;

/// Largest `|a_{nu j} - b_{nu j}|` over modes present in both tables.
pub fn shared_mode_gap(a: &Coefficients, b: &Coefficients) -> f64 {
    let mut gap = 0.0f64;
    for (m, va) in a {
        if let Some(vb) = b.get(m) {
            for (x, y) in va.iter().zip(vb) {
                gap = gap.max((x - y).abs());
            }
        }
    }
    gap
}

/// Largest `|a_{nu j} - b_{nu j}|` over the union of modes (missing entries read as 0).
pub fn total_gap(a: &Coefficients, b: &Coefficients) -> f64 {
    let mut gap = shared_mode_gap(a, b);
    for (x, y) in [(a, b), (b, a)] {
        for (m, v) in x {
            if !y.contains_key(m) {
                gap = v.iter().fold(gap, |g, c| g.max(c.abs()));
            }
        }
    }
    gap
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1e-3, 3e-3, 1e-2].iter().map(|&e| (e, 7.0 * e * e * e)).collect();
        assert!((loglog_slope(&pts) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gaps() {
        let mut a = Coefficients::new();
        let mut b = Coefficients::new();
        a.insert(Mode::new(&[1, 0]), vec![1.0]);
        b.insert(Mode::new(&[1, 0]), vec![0.5]);
        b.insert(Mode::new(&[2, 0]), vec![-2.0]);
        assert_eq!(shared_mode_gap(&a, &b), 0.5);
        assert_eq!(total_gap(&a, &b), 2.0);
    }
}
