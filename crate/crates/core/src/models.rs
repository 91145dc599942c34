//! Reference forcings and frequencies used in tests, benches and examples.

use num_complex::Complex64;

use crate::forcing::{ForcingModel, ForcingTerm};
use crate::frequency::FrequencyVector;
use crate::lattice::Mode;

/// Golden-mean frequency `(1, (sqrt(5) - 1) / 2)`.
pub fn golden() -> FrequencyVector {
    FrequencyVector::new(vec![1.0, (5f64.sqrt() - 1.0) / 2.0]).expect("golden mean is non-resonant")
}

/// Terms of `amp * cos(nu.alpha) * cos(mu.beta)`.
pub fn cos_cos(nu: &[i32], mu: &[i32], amp: f64) -> Vec<ForcingTerm> {
    let (nu, mu) = (Mode::new(nu), Mode::new(mu));
    let mut out = Vec::with_capacity(4);
    for a in [nu, -nu] {
        for b in [mu, -mu] {
            out.push(ForcingTerm { nu: a, mu: b, coeff: Complex64::new(amp / 4.0, 0.0) });
        }
    }
    out
}

/// Terms of `amp * cos(nu.alpha) * sin(mu.beta)`.
pub fn cos_sin(nu: &[i32], mu: &[i32], amp: f64) -> Vec<ForcingTerm> {
    let (nu, mu) = (Mode::new(nu), Mode::new(mu));
    let mut out = Vec::with_capacity(4);
    for a in [nu, -nu] {
        out.push(ForcingTerm { nu: a, mu, coeff: Complex64::new(0.0, -amp / 4.0) });
        out.push(ForcingTerm { nu: a, mu: -mu, coeff: Complex64::new(0.0, amp / 4.0) });
    }
    out
}

fn build(d: usize, r: usize, parts: Vec<Vec<ForcingTerm>>) -> ForcingModel {
    ForcingModel::validated(d, r, parts.into_iter().flatten()).expect("reference model is valid")
}

/// `f = cos(beta_1)` with `d = 2`, `r = 1`: no dependence on the angles `alpha`.
pub fn cosine_rotator() -> ForcingModel {
    build(2, 1, vec![cos_cos(&[0, 0], &[1], 1.0)])
}

/// `f = cos(alpha_1) cos(beta_1)` with `d = 2`, `r = 1`.
pub fn single_mode() -> ForcingModel {
    build(2, 1, vec![cos_cos(&[1, 0], &[1], 1.0)])
}

/// Two forcing harmonics and two rotators with vanishing average part:
/// `f = cos(alpha_1) cos(beta_1) + cos(alpha_1 - alpha_2) cos(beta_1 + beta_2) / 2`.
pub fn two_mode_benchmark() -> ForcingModel {
    build(2, 2, vec![cos_cos(&[1, 0], &[1, 0], 1.0), cos_cos(&[1, -1], &[1, 1], 0.5)])
}

/// The two-mode benchmark plus a `beta`-dependent average part, so that the
/// scale `-1` self-energy does not vanish.
pub fn two_mode_generic() -> ForcingModel {
    build(
        2,
        2,
        vec![
            cos_cos(&[1, 0], &[1, 0], 1.0),
            cos_cos(&[1, -1], &[1, 1], 0.5),
            cos_cos(&[0, 0], &[0, 1], 0.3),
            cos_sin(&[0, 0], &[1, 0], 0.2),
        ],
    )
}

/// Forcing with one harmonic whose divisor falls on scale 1 for the golden mean.
pub fn multiscale(amp: f64) -> ForcingModel {
    build(2, 1, vec![cos_cos(&[1, 0], &[1], 1.0), cos_cos(&[8, -13], &[1], amp)])
}
