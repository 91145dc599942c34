use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::Coefficients;
use crate::error::{Error, Result};
use crate::forcing::ForcingModel;
use crate::frequency::FrequencyVector;
use crate::lattice::{ball, Mode};
use crate::trees::RESONANCE_TOL;
use crate::trig::{compose, Convolver, TrigPoly};

#[derive(Debug, Clone)]
pub struct GalerkinOptions {
    /// l1 cutoff on the unknown modes.
    pub mode_radius: u32,
    pub newton_tol: f64,
    pub max_iter: usize,
    /// Starting coefficients; missing modes start at zero.
    pub warm_start: Option<Coefficients>,
}

impl Default for GalerkinOptions {
    fn default() -> Self {
        Self { mode_radius: 8, newton_tol: 1e-15, max_iter: 6, warm_start: None }
    }
}

#[derive(Debug, Clone)]
pub struct GalerkinSolution {
    /// Real parts of `b_{nu j}` for every `nu != 0` with `|nu| <= N`.
    pub coeffs: Coefficients,
    /// Largest imaginary part, zero for forcing with the parity symmetry.
    pub imag_max: f64,
    pub iterations: usize,
    /// Max-norm of the projected range residual.
    pub residual: f64,
    /// 2-norm condition number of the last Jacobian.
    pub condition: f64,
    pub composition_tail: f64,
}

/// Modes with `0 < |nu|_1 <= radius` whose first nonzero component is positive.
fn half_ball(d: usize, radius: u32) -> Vec<Mode> {
    ball(d, radius).into_iter().filter(|m| m.0.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0)).collect()
}

struct System<'a> {
    model: &'a ForcingModel,
    beta0: &'a [f64],
    eps: f64,
    modes: Vec<Mode>,
    x2: Vec<f64>,
    conv: Convolver,
}

impl System<'_> {
    fn r(&self) -> usize {
        self.model.r()
    }

    fn index(&self, i: usize, j: usize, imag: bool) -> usize {
        (i * self.r() + j) * 2 + imag as usize
    }

    fn polys(&self, z: &DVector<f64>) -> Vec<TrigPoly> {
        let r = self.r();
        let mut b = vec![TrigPoly::zero(); r];
        for (i, m) in self.modes.iter().enumerate() {
            for (j, bj) in b.iter_mut().enumerate() {
                let c = Complex64::new(z[self.index(i, j, false)], z[self.index(i, j, true)]);
                if c != Complex64::new(0.0, 0.0) {
                    bj.add_term(*m, c);
                    bj.add_term(-*m, c.conj());
                }
            }
        }
        b
    }

    /// Residual `-(w.nu)^2 b_nu + eps [d f]_nu` and its exact Jacobian.
    fn evaluate(&mut self, z: &DVector<f64>, jacobian: bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>, f64)> {
        let r = self.r();
        let n = z.len();
        let b = self.polys(z);
        let comp = compose(self.model, &b, self.beta0, &mut self.conv, jacobian)?;
        let mut f = DVector::zeros(n);
        for (i, m) in self.modes.iter().enumerate() {
            for j in 0..r {
                let b_nu = Complex64::new(z[self.index(i, j, false)], z[self.index(i, j, true)]);
                let v = -self.x2[i] * b_nu + self.eps * comp.grad[j].get(m);
                f[self.index(i, j, false)] = v.re;
                f[self.index(i, j, true)] = v.im;
            }
        }
        if !jacobian {
            return Ok((f, None, comp.tail));
        }
        let mut jac = DMatrix::zeros(n, n);
        for (i, m) in self.modes.iter().enumerate() {
            for (k, mk) in self.modes.iter().enumerate() {
                let (minus, plus) = (*m - *mk, *m + *mk);
                for j in 0..r {
                    for l in 0..r {
                        let h = &comp.hess[j * r + l];
                        let (hm, hp) = (h.get(&minus), h.get(&plus));
                        let d_re = (hm + hp) * self.eps;
                        let d_im = (hm - hp) * Complex64::new(0.0, self.eps);
                        let row_re = self.index(i, j, false);
                        let row_im = self.index(i, j, true);
                        let col_re = self.index(k, l, false);
                        let col_im = self.index(k, l, true);
                        jac[(row_re, col_re)] += d_re.re;
                        jac[(row_im, col_re)] += d_re.im;
                        jac[(row_re, col_im)] += d_im.re;
                        jac[(row_im, col_im)] += d_im.im;
                    }
                }
            }
            for j in 0..r {
                for imag in [false, true] {
                    let a = self.index(i, j, imag);
                    jac[(a, a)] -= self.x2[i];
                }
            }
        }
        Ok((f, Some(jac), comp.tail))
    }
}

/// Solve the projected range equation by Newton's method on the real and imaginary parts
/// of `b_nu`, `nu` in a half ball (the other half follows from reality).
pub fn galerkin_newton(
    model: &ForcingModel,
    omega: &FrequencyVector,
    eps: f64,
    beta0: &[f64],
    opts: &GalerkinOptions,
) -> Result<GalerkinSolution> {
    if beta0.len() != model.r() {
        return Err(Error::Invalid(format!("beta0 has {} components, expected {}", beta0.len(), model.r())));
    }
    let modes = half_ball(model.d(), opts.mode_radius);
    let mut x2 = Vec::with_capacity(modes.len());
    for m in &modes {
        let x = omega.divisor(m);
        if x.abs() < RESONANCE_TOL {
            return Err(Error::Resonance { nu: m.to_vec(model.d()), divisor: x.abs() });
        }
        x2.push(x * x);
    }
    let r = model.r();
    let conv = Convolver::new(model.d(), 2 * opts.mode_radius)?;
    let mut sys = System { model, beta0, eps, modes, x2, conv };
    let n = sys.modes.len() * r * 2;
    let mut z = DVector::zeros(n);
    if let Some(start) = &opts.warm_start {
        for (i, m) in sys.modes.iter().enumerate() {
            if let Some(v) = start.get(m) {
                for j in 0..r {
                    z[sys.index(i, j, false)] = v[j];
                }
            }
        }
    }
    let mut iterations = 0;
    let mut condition = 1.0;
    let (mut f, _, mut tail) = sys.evaluate(&z, false)?;
    let mut residual = f.amax();
    while residual > opts.newton_tol {
        if iterations == opts.max_iter {
            return Err(Error::NoConvergence { iterations, residual });
        }
        iterations += 1;
        let (_, jac, _) = sys.evaluate(&z, true)?;
        let jac = jac.expect("jacobian requested");
        let sv = jac.clone().singular_values();
        condition = sv.max() / sv.min();
        let step = jac.lu().solve(&(-&f)).ok_or_else(|| Error::Invalid("singular Galerkin Jacobian".into()))?;
        z += &step;
        let next = sys.evaluate(&z, false)?;
        f = next.0;
        tail = next.2;
        let prev = residual;
        residual = f.amax();
        // rounding floor: further steps cannot reduce the residual
        if step.amax() <= f64::EPSILON * z.amax().max(f64::MIN_POSITIVE) || residual >= prev {
            break;
        }
    }
    let mut coeffs = Coefficients::new();
    let mut imag_max = 0.0f64;
    for (i, m) in sys.modes.iter().enumerate() {
        let re: Vec<f64> = (0..r).map(|j| z[sys.index(i, j, false)]).collect();
        for j in 0..r {
            imag_max = imag_max.max(z[sys.index(i, j, true)].abs());
        }
        coeffs.insert(-*m, re.clone());
        coeffs.insert(*m, re);
    }
    Ok(GalerkinSolution { coeffs, imag_max, iterations, residual, condition, composition_tail: tail })
}
