use std::collections::BTreeMap;

use num_complex::Complex64;

use super::Coefficients;
use crate::error::{Error, Result};
use crate::forcing::ForcingModel;
use crate::frequency::FrequencyVector;
use crate::lattice::Mode;
use crate::trees::RESONANCE_TOL;
use crate::trig::{Convolver, TrigPoly};

/// Order-by-order coefficients `b^(k)` (without the factor `eps^k`), `k = 1..=K`.
#[derive(Debug, Clone)]
pub struct LindstedtSeries {
    pub orders: Vec<Coefficients>,
    /// l1 mass dropped by the mode cutoff.
    pub dropped: f64,
}

impl LindstedtSeries {
    /// `sum_{k <= order} eps^k b^(k)`.
    pub fn partial_sum(&self, eps: f64, order: usize) -> Coefficients {
        let mut out = Coefficients::new();
        for (k, table) in self.orders.iter().enumerate().take(order) {
            let w = eps.powi(k as i32 + 1);
            for (m, v) in table {
                let slot = out.entry(*m).or_insert_with(|| vec![0.0; v.len()]);
                for (s, c) in slot.iter_mut().zip(v) {
                    *s += w * c;
                }
            }
        }
        out
    }
}

/// Expand `b = sum_k eps^k b^(k)` for the range equation at fixed `beta0`, keeping modes
/// with `|nu|_1 <= radius`.
///
/// With `E_mu = exp(i mu.b) = sum_n eps^n E_mu^(n)` the recursion
/// `n E^(n) = sum_{k=1}^{n} k (i mu.b^(k)) E^(n-k)` gives every order of `d f(beta0 + b)`,
/// and `(w.nu)^2 b^(k)_nu = [d f]^(k-1)_nu` for `nu != 0`.
pub fn lindstedt_expand(
    model: &ForcingModel,
    omega: &FrequencyVector,
    beta0: &[f64],
    order: usize,
    radius: u32,
) -> Result<LindstedtSeries> {
    let r = model.r();
    if beta0.len() != r {
        return Err(Error::Invalid(format!("beta0 has {} components, expected {}", beta0.len(), r)));
    }
    let mut conv = Convolver::new(model.d(), radius)?;
    let mut by_mu: BTreeMap<Mode, TrigPoly> = BTreeMap::new();
    for t in model.terms() {
        by_mu.entry(t.mu).or_default().add_term(t.nu, t.coeff);
    }
    // E_mu^(n) per mu, b^(k) per component as polynomials
    let mut exps: Vec<Vec<TrigPoly>> = by_mu.keys().map(|_| vec![TrigPoly::constant(Complex64::new(1.0, 0.0))]).collect();
    let mut b: Vec<Vec<TrigPoly>> = Vec::new();
    let mut orders = Vec::with_capacity(order);
    let mut dropped = 0.0;
    for k in 1..=order {
        // [d_j f]^(k-1) = sum_mu i mu_j e^{i mu.beta0} S_mu E_mu^(k-1)
        let mut grad = vec![TrigPoly::zero(); r];
        for ((mu, s_mu), e) in by_mu.iter().zip(&exps) {
            let (prod, t) = conv.mul(s_mu, &e[k - 1]);
            dropped += t;
            let phase = Complex64::from_polar(1.0, mu.dot(beta0));
            for (j, g) in grad.iter_mut().enumerate() {
                if mu.get(j) != 0 {
                    g.add_scaled(&prod, phase * Complex64::new(0.0, mu.get(j) as f64));
                }
            }
        }
        let mut bk = vec![TrigPoly::zero(); r];
        let mut table = Coefficients::new();
        for (j, g) in grad.iter().enumerate() {
            for (m, c) in g.iter() {
                if m.is_zero() {
                    continue;
                }
                let x = omega.divisor(m);
                if x.abs() < RESONANCE_TOL {
                    return Err(Error::Resonance { nu: m.to_vec(model.d()), divisor: x.abs() });
                }
                let v = *c / (x * x);
                bk[j].add_term(*m, v);
                table.entry(*m).or_insert_with(|| vec![0.0; r])[j] = v.re;
            }
        }
        b.push(bk);
        orders.push(table);
        if k == order {
            break;
        }
        // E_mu^(k) = (1/k) sum_{l=1}^{k} l (i mu.b^(l)) E_mu^(k-l)
        for (mu, e) in by_mu.keys().zip(exps.iter_mut()) {
            let mut next = TrigPoly::zero();
            for l in 1..=k {
                let mut phase = TrigPoly::zero();
                for (j, bl) in b[l - 1].iter().enumerate() {
                    if mu.get(j) != 0 {
                        phase.add_scaled(bl, Complex64::new(0.0, mu.get(j) as f64));
                    }
                }
                if phase.is_empty() {
                    continue;
                }
                let (prod, t) = conv.mul(&phase, &e[k - l]);
                dropped += t;
                next.add_scaled(&prod, Complex64::new(l as f64 / k as f64, 0.0));
            }
            e.push(next);
        }
    }
    Ok(LindstedtSeries { orders, dropped })
}
