//! Runge–Kutta–Fehlberg 7(8) with adaptive steps; the eighth-order solution is propagated.

use crate::error::{Error, Result};

pub const C: [f64; 13] =
    [0.0, 2.0 / 27.0, 1.0 / 9.0, 1.0 / 6.0, 5.0 / 12.0, 0.5, 5.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0, 1.0 / 3.0, 1.0, 0.0, 1.0];

pub const A: [[f64; 12]; 13] = [
    [0.0; 12],
    [2.0 / 27.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 36.0, 1.0 / 12.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 24.0, 0.0, 1.0 / 8.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [5.0 / 12.0, 0.0, -25.0 / 16.0, 25.0 / 16.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 20.0, 0.0, 0.0, 1.0 / 4.0, 1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-25.0 / 108.0, 0.0, 0.0, 125.0 / 108.0, -65.0 / 27.0, 125.0 / 54.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [31.0 / 300.0, 0.0, 0.0, 0.0, 61.0 / 225.0, -2.0 / 9.0, 13.0 / 900.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [2.0, 0.0, 0.0, -53.0 / 6.0, 704.0 / 45.0, -107.0 / 9.0, 67.0 / 90.0, 3.0, 0.0, 0.0, 0.0, 0.0],
    [-91.0 / 108.0, 0.0, 0.0, 23.0 / 108.0, -976.0 / 135.0, 311.0 / 54.0, -19.0 / 60.0, 17.0 / 6.0, -1.0 / 12.0, 0.0, 0.0, 0.0],
    [
        2383.0 / 4100.0,
        0.0,
        0.0,
        -341.0 / 164.0,
        4496.0 / 1025.0,
        -301.0 / 82.0,
        2133.0 / 4100.0,
        45.0 / 82.0,
        45.0 / 164.0,
        18.0 / 41.0,
        0.0,
        0.0,
    ],
    [3.0 / 205.0, 0.0, 0.0, 0.0, 0.0, -6.0 / 41.0, -3.0 / 205.0, -3.0 / 41.0, 3.0 / 41.0, 6.0 / 41.0, 0.0, 0.0],
    [
        -1777.0 / 4100.0,
        0.0,
        0.0,
        -341.0 / 164.0,
        4496.0 / 1025.0,
        -289.0 / 82.0,
        2193.0 / 4100.0,
        51.0 / 82.0,
        33.0 / 164.0,
        12.0 / 41.0,
        0.0,
        1.0,
    ],
];

/// Eighth-order weights.
pub const B8: [f64; 13] = [
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    34.0 / 105.0,
    9.0 / 35.0,
    9.0 / 35.0,
    9.0 / 280.0,
    9.0 / 280.0,
    0.0,
    41.0 / 840.0,
    41.0 / 840.0,
];

/// Seventh-order weights.
pub const B7: [f64; 13] = [
    41.0 / 840.0,
    0.0,
    0.0,
    0.0,
    0.0,
    34.0 / 105.0,
    9.0 / 35.0,
    9.0 / 35.0,
    9.0 / 280.0,
    9.0 / 280.0,
    41.0 / 840.0,
    0.0,
    0.0,
];

/// Adaptive integrator for `y' = f(t, y)`.
pub struct Rkf78 {
    pub tol: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for Rkf78 {
    fn default() -> Self {
        Self { tol: 1e-12, h_min: 1e-10, h_max: 1.0, max_steps: 10_000_000 }
    }
}

impl Rkf78 {
    /// Integrate from `t0` to `t1`, calling `observe(t, y)` after every accepted step.
    pub fn integrate<F, O>(&self, f: F, t0: f64, y0: &[f64], t1: f64, mut observe: O) -> Result<Vec<f64>>
    where
        F: Fn(f64, &[f64], &mut [f64]),
        O: FnMut(f64, &[f64]),
    {
        let n = y0.len();
        let mut y = y0.to_vec();
        let mut t = t0;
        let mut h = self.h_max.min((t1 - t0).abs()).max(self.h_min);
        let mut k = vec![vec![0.0; n]; 13];
        let mut stage = vec![0.0; n];
        let mut steps = 0;
        observe(t, &y);
        while t < t1 {
            if steps == self.max_steps {
                return Err(Error::Integrator(format!("step limit reached at t = {t}")));
            }
            steps += 1;
            h = h.min(t1 - t);
            for s in 0..13 {
                for i in 0..n {
                    let mut acc = y[i];
                    for (j, kj) in k.iter().enumerate().take(s) {
                        let a = A[s][j];
                        if a != 0.0 {
                            acc += h * a * kj[i];
                        }
                    }
                    stage[i] = acc;
                }
                let (before, rest) = k.split_at_mut(s);
                let _ = before;
                f(t + C[s] * h, &stage, &mut rest[0]);
            }
            let mut err = 0.0f64;
            let mut scale = 1.0f64;
            for i in 0..n {
                let e = 41.0 / 840.0 * (k[0][i] + k[10][i] - k[11][i] - k[12][i]) * h;
                err = err.max(e.abs());
                scale = scale.max(y[i].abs());
            }
            let tol = self.tol * scale;
            if err <= tol || h <= self.h_min {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (s, ks) in k.iter().enumerate() {
                        acc += B8[s] * ks[i];
                    }
                    y[i] += h * acc;
                }
                t += h;
                observe(t, &y);
            }
            if !err.is_finite() {
                return Err(Error::Integrator(format!("non-finite error estimate at t = {t}")));
            }
            let factor = if err == 0.0 { 4.0 } else { (0.9 * (tol / err).powf(1.0 / 8.0)).clamp(0.1, 4.0) };
            h = (h * factor).clamp(self.h_min, self.h_max);
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tableau_consistency() {
        for s in 0..13 {
            let row: f64 = A[s].iter().sum();
            assert!((row - C[s]).abs() < 1e-14, "row {s}");
        }
        assert!((B8.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((B7.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // quadrature conditions sum b c^q = 1 / (q + 1)
        for q in 0..8 {
            let v: f64 = B8.iter().zip(C.iter()).map(|(b, c)| b * c.powi(q)).sum();
            assert!((v - 1.0 / (q as f64 + 1.0)).abs() < 1e-14, "q = {q}");
        }
    }

    #[test]
    fn harmonic_oscillator() {
        let rk = Rkf78::default();
        let y = rk
            .integrate(
                |_, y, dy| {
                    dy[0] = y[1];
                    dy[1] = -y[0];
                },
                0.0,
                &[1.0, 0.0],
                20.0,
                |_, _| {},
            )
            .unwrap();
        assert!((y[0] - 20f64.cos()).abs() < 1e-10);
        assert!((y[1] + 20f64.sin()).abs() < 1e-10);
    }

    #[test]
    fn exponential_growth() {
        let rk = Rkf78::default();
        let y = rk.integrate(|_, y, dy| dy[0] = y[0], 0.0, &[1.0], 3.0, |_, _| {}).unwrap();
        assert!((y[0] / 3f64.exp() - 1.0).abs() < 1e-11);
    }
}
