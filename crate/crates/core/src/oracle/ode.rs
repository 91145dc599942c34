use std::f64::consts::{PI, TAU};

use super::rkf78::Rkf78;
use super::Coefficients;
use crate::error::{Error, Result};
use crate::forcing::ForcingModel;
use crate::frequency::FrequencyVector;

#[derive(Debug, Clone)]
pub struct OdeOptions {
    pub horizon: f64,
    pub tol: f64,
    pub h_max: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { horizon: 1e3, tol: 1e-12, h_max: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct OdeReport {
    /// `sup_t` of the componentwise angular distance to `beta0 + b(w t)`.
    pub distance: f64,
    /// Time at which the supremum was attained.
    pub worst_time: f64,
    pub steps: usize,
}

/// Distance on the circle between two angles.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        TAU - d
    } else {
        d
    }
}

/// `beta0 + b(alpha)` and its time derivative along `alpha = w t` (`b` is even in `alpha`).
fn torus_point(coeffs: &Coefficients, omega: &[f64], beta0: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let mut beta = beta0.to_vec();
    let mut vel = vec![0.0; beta0.len()];
    for (m, v) in coeffs {
        let x = m.dot(omega);
        let (s, c) = (x * t).sin_cos();
        for j in 0..beta.len() {
            beta[j] += v[j] * c;
            vel[j] -= v[j] * x * s;
        }
    }
    (beta, vel)
}

/// Integrate `beta'' = -eps d_beta f(w t, beta)` from the torus data at `t = 0` and
/// compare with `beta0 + b(w t)` at every accepted step.
pub fn ode_residual(
    model: &ForcingModel,
    omega: &FrequencyVector,
    eps: f64,
    beta0: &[f64],
    coeffs: &Coefficients,
    opts: &OdeOptions,
) -> Result<OdeReport> {
    let r = model.r();
    if beta0.len() != r {
        return Err(Error::Invalid(format!("beta0 has {} components, expected {}", beta0.len(), r)));
    }
    let w = omega.components().to_vec();
    let (b0, v0) = torus_point(coeffs, &w, beta0, 0.0);
    let mut y0 = b0;
    y0.extend(v0);
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let alpha: Vec<f64> = w.iter().map(|c| c * t).collect();
        dy[..r].copy_from_slice(&y[r..]);
        model.grad_beta(&alpha, &y[..r], &mut dy[r..]);
        for v in &mut dy[r..] {
            *v *= -eps;
        }
    };
    let mut report = OdeReport { distance: 0.0, worst_time: 0.0, steps: 0 };
    let integrator = Rkf78 { tol: opts.tol, h_max: opts.h_max, ..Default::default() };
    integrator.integrate(rhs, 0.0, &y0, opts.horizon, |t, y| {
        report.steps += 1;
        let (target, _) = torus_point(coeffs, &w, beta0, t);
        for j in 0..r {
            let d = angular_distance(y[j], target[j]);
            if d > report.distance {
                report.distance = d;
                report.worst_time = t;
            }
        }
    })?;
    report.steps -= 1;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Mode;
    use crate::models;

    #[test]
    fn angular_metric() {
        assert!((angular_distance(0.1, TAU - 0.1) - 0.2).abs() < 1e-15);
        assert!((angular_distance(3.0, -3.0) - (TAU - 6.0)).abs() < 1e-15);
        assert_eq!(angular_distance(1.0, 1.0), 0.0);
    }

    #[test]
    fn free_rotator_stays_put() {
        let rep = ode_residual(
            &models::single_mode(),
            &models::golden(),
            0.0,
            &[0.4],
            &Coefficients::new(),
            &OdeOptions { horizon: 50.0, ..Default::default() },
        )
        .unwrap();
        assert_eq!(rep.distance, 0.0);
    }

    #[test]
    fn fixed_point_of_cosine_rotator() {
        let rep = ode_residual(
            &models::cosine_rotator(),
            &models::golden(),
            1e-3,
            &[0.0],
            &Coefficients::new(),
            &OdeOptions { horizon: 100.0, ..Default::default() },
        )
        .unwrap();
        assert!(rep.distance <= 1e-12);
    }

    #[test]
    fn wrong_torus_drifts() {
        // b = 0 is not a solution for f = cos a1 cos b1 at b0 = 1
        let mut c = Coefficients::new();
        c.insert(Mode::new(&[1, 0]), vec![0.0]);
        let rep = ode_residual(
            &models::single_mode(),
            &models::golden(),
            1e-2,
            &[1.0],
            &c,
            &OdeOptions { horizon: 20.0, ..Default::default() },
        )
        .unwrap();
        assert!(rep.distance > 1e-3);
    }
}
