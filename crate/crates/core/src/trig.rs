//! Sparse trigonometric polynomials on `T^d` and composition `f(alpha, beta0 + b(alpha))`.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::forcing::ForcingModel;
use crate::lattice::Mode;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Finite sum `sum_nu c_nu e^{i nu.alpha}` with modes kept in canonical order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrigPoly {
    terms: BTreeMap<Mode, Complex64>,
}

impl TrigPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: Complex64) -> Self {
        let mut p = Self::zero();
        p.add_term(Mode::ZERO, c);
        p
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (Mode, Complex64)>) -> Self {
        let mut p = Self::zero();
        for (m, c) in terms {
            p.add_term(m, c);
        }
        p
    }

    pub fn add_term(&mut self, mode: Mode, c: Complex64) {
        if c == ZERO {
            return;
        }
        let entry = self.terms.entry(mode).or_insert(ZERO);
        *entry += c;
        if *entry == ZERO {
            self.terms.remove(&mode);
        }
    }

    pub fn get(&self, mode: &Mode) -> Complex64 {
        self.terms.get(mode).copied().unwrap_or(ZERO)
    }

    /// Average over the torus (the zero mode).
    pub fn mean(&self) -> Complex64 {
        self.get(&Mode::ZERO)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Mode, &Complex64)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn l1_norm(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).sum()
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Self::from_terms(self.terms.iter().map(|(m, c)| (*m, *c * s)))
    }

    pub fn add_scaled(&mut self, other: &TrigPoly, s: Complex64) {
        for (m, c) in other.iter() {
            self.add_term(*m, *c * s);
        }
    }

    /// Evaluate at `alpha`.
    pub fn eval(&self, alpha: &[f64]) -> Complex64 {
        self.terms.iter().map(|(m, c)| *c * Complex64::from_polar(1.0, m.dot(alpha))).sum()
    }
}

/// Dense scratch buffer for products truncated to an l1 ball.
pub struct Convolver {
    d: usize,
    radius: i32,
    width: usize,
    buf: Vec<Complex64>,
    touched: Vec<usize>,
}

/// Largest dense buffer the convolver allocates.
const MAX_BOX: usize = 1 << 24;

impl Convolver {
    pub fn new(d: usize, radius: u32) -> Result<Self> {
        let width = 2 * radius as usize + 1;
        let size = width.checked_pow(d as u32).filter(|s| *s <= MAX_BOX).ok_or_else(|| {
            Error::Budget(format!("mode radius {radius} in dimension {d} exceeds the dense buffer limit"))
        })?;
        Ok(Self { d, radius: radius as i32, width, buf: vec![ZERO; size], touched: Vec::new() })
    }

    pub fn radius(&self) -> u32 {
        self.radius as u32
    }

    fn index(&self, m: &Mode) -> Option<usize> {
        if m.l1() > self.radius as u32 {
            return None;
        }
        let mut idx = 0usize;
        for i in 0..self.d {
            idx = idx * self.width + (m.get(i) + self.radius) as usize;
        }
        Some(idx)
    }

    fn mode_at(&self, mut idx: usize) -> Mode {
        let mut out = [0i32; crate::lattice::MAX_DIM];
        for i in (0..self.d).rev() {
            out[i] = (idx % self.width) as i32 - self.radius;
            idx /= self.width;
        }
        Mode(out)
    }

    /// Product `a * b` truncated to the ball; returns the l1 mass that was dropped.
    pub fn mul(&mut self, a: &TrigPoly, b: &TrigPoly) -> (TrigPoly, f64) {
        let mut dropped = 0.0;
        for (ma, ca) in a.iter() {
            for (mb, cb) in b.iter() {
                let v = *ca * *cb;
                match self.index(&(*ma + *mb)) {
                    Some(i) => {
                        if self.buf[i] == ZERO {
                            self.touched.push(i);
                        }
                        self.buf[i] += v;
                        if self.buf[i] == ZERO {
                            // keep the slot registered; it is filtered on drain
                            self.buf[i] = Complex64::new(0.0, -0.0);
                        }
                    }
                    None => dropped += v.norm(),
                }
            }
        }
        (self.drain(), dropped)
    }

    fn drain(&mut self) -> TrigPoly {
        self.touched.sort_unstable();
        let mut terms = BTreeMap::new();
        for &i in &self.touched {
            let c = std::mem::replace(&mut self.buf[i], ZERO);
            if c.re != 0.0 || c.im != 0.0 {
                terms.insert(self.mode_at(i), c);
            }
        }
        self.touched.clear();
        TrigPoly { terms }
    }

    /// `exp(i p)` by its Taylor series, truncated to the ball.
    ///
    /// Terms are added until their l1 norm falls below `tol`; the returned
    /// indicator adds the dropped mass and the size of the first omitted term.
    pub fn exp_i(&mut self, p: &TrigPoly, tol: f64) -> Result<(TrigPoly, f64)> {
        let ip = p.scaled(Complex64::new(0.0, 1.0));
        let mut sum = TrigPoly::constant(Complex64::new(1.0, 0.0));
        let mut term = sum.clone();
        let mut tail = 0.0;
        let norm = p.l1_norm();
        for n in 1..400 {
            let (next, dropped) = self.mul(&term, &ip);
            tail += dropped;
            term = next.scaled(Complex64::new(1.0 / n as f64, 0.0));
            sum.add_scaled(&term, Complex64::new(1.0, 0.0));
            let size = term.l1_norm();
            if size < tol && (n as f64) > norm {
                return Ok((sum, tail + size));
            }
        }
        Err(Error::Budget(format!("exponential series did not converge (|p|_1 = {norm})")))
    }
}

/// `f`, `grad_beta f` and optionally `hess_beta f` along `beta = beta0 + b(alpha)`.
#[derive(Debug, Clone)]
pub struct Composition {
    pub f: TrigPoly,
    pub grad: Vec<TrigPoly>,
    /// Row-major `r x r`; empty unless requested.
    pub hess: Vec<TrigPoly>,
    /// Dropped l1 mass from the radius truncation and series tails.
    pub tail: f64,
}

/// Compose the forcing with `beta0 + b(alpha)`, `b` given per component.
pub fn compose(
    model: &ForcingModel,
    b: &[TrigPoly],
    beta0: &[f64],
    conv: &mut Convolver,
    want_hess: bool,
) -> Result<Composition> {
    let r = model.r();
    // group the terms by mu: S_mu(alpha) = sum_nu c_{nu,mu} e^{i nu.alpha}
    let mut by_mu: BTreeMap<Mode, TrigPoly> = BTreeMap::new();
    for t in model.terms() {
        by_mu.entry(t.mu).or_default().add_term(t.nu, t.coeff);
    }
    let mut f = TrigPoly::zero();
    let mut grad = vec![TrigPoly::zero(); r];
    let mut hess = if want_hess { vec![TrigPoly::zero(); r * r] } else { Vec::new() };
    let mut tail = 0.0;
    for (mu, s_mu) in &by_mu {
        let mut phase = TrigPoly::zero();
        for (j, bj) in b.iter().enumerate() {
            if mu.get(j) != 0 {
                phase.add_scaled(bj, Complex64::new(mu.get(j) as f64, 0.0));
            }
        }
        let (e, t1) = if phase.is_empty() {
            (TrigPoly::constant(Complex64::new(1.0, 0.0)), 0.0)
        } else {
            conv.exp_i(&phase, 1e-22)?
        };
        let (prod, t2) = conv.mul(s_mu, &e);
        let prod = prod.scaled(Complex64::from_polar(1.0, mu.dot(beta0)));
        let weight: f64 = s_mu.l1_norm();
        tail += weight * t1 + t2;
        f.add_scaled(&prod, Complex64::new(1.0, 0.0));
        for j in 0..r {
            let mj = mu.get(j) as f64;
            if mj != 0.0 {
                grad[j].add_scaled(&prod, Complex64::new(0.0, mj));
            }
            if want_hess {
                for k in 0..r {
                    let mk = mu.get(k) as f64;
                    if mj * mk != 0.0 {
                        hess[j * r + k].add_scaled(&prod, Complex64::new(-mj * mk, 0.0));
                    }
                }
            }
        }
    }
    Ok(Composition { f, grad, hess, tail })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::ForcingTerm;

    fn m(v: &[i32]) -> Mode {
        Mode::new(v)
    }

    #[test]
    fn product_matches_pointwise() {
        let a = TrigPoly::from_terms([(m(&[1, 0]), Complex64::new(0.5, 0.1)), (m(&[0, -1]), Complex64::new(-0.2, 0.0))]);
        let b = TrigPoly::from_terms([(m(&[-1, 1]), Complex64::new(0.3, 0.0)), (m(&[0, 0]), Complex64::new(1.0, -0.4))]);
        let mut conv = Convolver::new(2, 4).unwrap();
        let (p, dropped) = conv.mul(&a, &b);
        assert_eq!(dropped, 0.0);
        for alpha in [[0.1, 0.2], [2.0, -1.3]] {
            assert!((p.eval(&alpha) - a.eval(&alpha) * b.eval(&alpha)).norm() < 1e-14);
        }
        let mut small = Convolver::new(2, 0).unwrap();
        let (_, dropped) = small.mul(&a, &b);
        assert!(dropped > 0.0);
    }

    #[test]
    fn exponential_matches_pointwise() {
        let b = TrigPoly::from_terms([(m(&[1, 0]), Complex64::new(0.3, 0.0)), (m(&[-1, 0]), Complex64::new(0.3, 0.0))]);
        let mut conv = Convolver::new(2, 30).unwrap();
        let (e, tail) = conv.exp_i(&b, 1e-20).unwrap();
        assert!(tail < 1e-18);
        for alpha in [[0.0, 0.0], [1.1, 0.0], [2.5, 0.3]] {
            let expected = Complex64::new(0.0, b.eval(&alpha).re).exp();
            assert!((e.eval(&alpha) - expected).norm() < 1e-14);
        }
        // mean of e^{i 0.6 cos a} is J_0(0.6)
        assert!((e.mean().re - 0.912_004_863_497_211).abs() < 1e-14);
    }

    #[test]
    fn composition_matches_pointwise() {
        let terms = [
            ([1, 0], [1], 0.25),
            ([-1, 0], [1], 0.25),
            ([1, 0], [-1], 0.25),
            ([-1, 0], [-1], 0.25),
            ([0, 0], [2], 0.1),
            ([0, 0], [-2], 0.1),
        ]
        .map(|(nu, mu, c)| ForcingTerm { nu: m(&nu), mu: m(&mu), coeff: Complex64::new(c, 0.0) });
        let model = ForcingModel::validated(2, 1, terms).unwrap();
        let b = vec![TrigPoly::from_terms([
            (m(&[1, 1]), Complex64::new(0.05, 0.0)),
            (m(&[-1, -1]), Complex64::new(0.05, 0.0)),
        ])];
        let mut conv = Convolver::new(2, 40).unwrap();
        let comp = compose(&model, &b, &[0.4], &mut conv, true).unwrap();
        for alpha in [[0.3, 0.7], [2.0, -1.0]] {
            let beta = 0.4 + b[0].eval(&alpha).re;
            assert!((comp.f.eval(&alpha).re - model.eval(&alpha, &[beta])).abs() < 1e-14);
            let mut g = [0.0];
            model.grad_beta(&alpha, &[beta], &mut g);
            assert!((comp.grad[0].eval(&alpha).re - g[0]).abs() < 1e-14);
        }
    }
}
