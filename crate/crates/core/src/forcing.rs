//! Finite Fourier representation of the forcing `f(alpha, beta)` and node factors.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Mode, MAX_DIM};

/// Relative tolerance used when matching conjugate and parity partners.
const PAIR_TOL: f64 = 1e-12;

/// One Fourier term `c e^{i(nu.alpha + mu.beta)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForcingTerm {
    pub nu: Mode,
    pub mu: Mode,
    pub coeff: Complex64,
}

/// `f(alpha, beta) = sum c_{nu,mu} e^{i(nu.alpha + mu.beta)}` on `T^{d+r}`.
#[derive(Debug, Clone)]
pub struct ForcingModel {
    d: usize,
    r: usize,
    pub decay_xi: f64,
    pub phi0: f64,
    terms: Vec<ForcingTerm>,
    by_nu: BTreeMap<Mode, Vec<(Mode, Complex64)>>,
}

/// Outcome of [`ForcingModel::validate`].
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub parity_violations: Vec<Vec<i32>>,
    pub reality_violations: Vec<(Vec<i32>, Vec<i32>)>,
    pub decay_warnings: Vec<(Vec<i32>, Vec<i32>)>,
}

impl ValidationReport {
    pub fn passes(&self) -> bool {
        self.parity_violations.is_empty() && self.reality_violations.is_empty()
    }
}

impl ForcingModel {
    /// Collect terms, merging repeated `(nu, mu)` pairs and dropping zero coefficients.
    pub fn new(d: usize, r: usize, terms: impl IntoIterator<Item = ForcingTerm>) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&d) || !(1..=MAX_DIM).contains(&r) {
            return Err(Error::Invalid(format!("dimensions d = {d}, r = {r} unsupported")));
        }
        let mut merged: BTreeMap<(Mode, Mode), Complex64> = BTreeMap::new();
        for t in terms {
            if t.nu.0[d..].iter().any(|&c| c != 0) || t.mu.0[r..].iter().any(|&c| c != 0) {
                return Err(Error::Invalid(format!("term {:?} x {:?} exceeds declared dimensions", t.nu, t.mu)));
            }
            if !t.coeff.re.is_finite() || !t.coeff.im.is_finite() {
                return Err(Error::Invalid("non-finite coefficient".into()));
            }
            *merged.entry((t.nu, t.mu)).or_default() += t.coeff;
        }
        let terms: Vec<ForcingTerm> = merged
            .into_iter()
            .filter(|(_, c)| *c != Complex64::new(0.0, 0.0))
            .map(|((nu, mu), coeff)| ForcingTerm { nu, mu, coeff })
            .collect();
        let mut by_nu: BTreeMap<Mode, Vec<(Mode, Complex64)>> = BTreeMap::new();
        for t in &terms {
            by_nu.entry(t.nu).or_default().push((t.mu, t.coeff));
        }
        Ok(Self { d, r, decay_xi: 1.0, phi0: f64::INFINITY, terms, by_nu })
    }

    /// Build and reject models that fail the reality or parity checks.
    pub fn validated(d: usize, r: usize, terms: impl IntoIterator<Item = ForcingTerm>) -> Result<Self> {
        let model = Self::new(d, r, terms)?;
        let report = model.validate();
        if !report.parity_violations.is_empty() {
            return Err(Error::Parity(report.parity_violations));
        }
        if !report.reality_violations.is_empty() {
            return Err(Error::Reality(report.reality_violations));
        }
        Ok(model)
    }

    pub fn with_decay(mut self, phi0: f64, xi: f64) -> Self {
        self.phi0 = phi0;
        self.decay_xi = xi;
        self
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn terms(&self) -> &[ForcingTerm] {
        &self.terms
    }

    fn coeff(&self, nu: Mode, mu: Mode) -> Complex64 {
        self.by_nu
            .get(&nu)
            .and_then(|v| v.iter().find(|(m, _)| *m == mu))
            .map_or(Complex64::new(0.0, 0.0), |(_, c)| *c)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let close = |a: Complex64, b: Complex64| (a - b).norm() <= PAIR_TOL * a.norm().max(b.norm()).max(1e-300);
        for t in &self.terms {
            if !close(t.coeff.conj(), self.coeff(-t.nu, -t.mu)) {
                report.reality_violations.push((t.nu.to_vec(self.d), t.mu.to_vec(self.r)));
            }
            if !close(t.coeff, self.coeff(-t.nu, t.mu)) {
                let nu = t.nu.to_vec(self.d);
                if !report.parity_violations.contains(&nu) {
                    report.parity_violations.push(nu);
                }
            }
            let bound = self.phi0 * (-self.decay_xi * (t.nu.l1() + t.mu.l1()) as f64).exp();
            if t.coeff.norm() > bound {
                report.decay_warnings.push((t.nu.to_vec(self.d), t.mu.to_vec(self.r)));
            }
        }
        report
    }

    /// Modes `nu` with `f_nu` not identically zero, in canonical order.
    pub fn modes(&self) -> Vec<Mode> {
        self.by_nu.keys().copied().collect()
    }

    /// `(mu, c_{nu,mu})` pairs of `f_nu`.
    pub fn terms_of(&self, nu: &Mode) -> &[(Mode, Complex64)] {
        self.by_nu.get(nu).map_or(&[], |v| v.as_slice())
    }

    /// Largest `|nu|_1` in the support.
    pub fn max_mode_norm(&self) -> u32 {
        self.by_nu.keys().map(|m| m.l1()).max().unwrap_or(0)
    }

    /// `d^{derivs} f_nu(beta) = sum_mu c (i mu)^{derivs} e^{i mu.beta}`.
    pub fn f_nu_deriv(&self, nu: &Mode, derivs: &[usize], beta: &[f64]) -> Complex64 {
        let mut total = Complex64::new(0.0, 0.0);
        for (mu, c) in self.terms_of(nu) {
            let mut factor = *c * Complex64::from_polar(1.0, mu.dot(beta));
            for &k in derivs {
                factor *= Complex64::new(0.0, mu.get(k) as f64);
            }
            total += factor;
        }
        total
    }

    /// Node factor `(1/s!) d_{u} prod_w d_{e_w} f_nu(beta0)`.
    pub fn node_factor(&self, nu: &Mode, u: usize, e_list: &[usize], beta0: &[f64]) -> f64 {
        let mut derivs = Vec::with_capacity(e_list.len() + 1);
        derivs.push(u);
        derivs.extend_from_slice(e_list);
        let value = self.f_nu_deriv(nu, &derivs, beta0) / factorial(e_list.len());
        debug_assert!(
            value.im.abs() <= 1e-12 * value.norm().max(1.0),
            "node factor has imaginary part {}",
            value.im
        );
        value.re
    }

    /// Evaluate `f` at a point of `T^{d+r}`.
    pub fn eval(&self, alpha: &[f64], beta: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| (t.coeff * Complex64::from_polar(1.0, t.nu.dot(alpha) + t.mu.dot(beta))).re)
            .sum()
    }

    /// `d_{beta_j} f` at a point of `T^{d+r}`.
    pub fn grad_beta(&self, alpha: &[f64], beta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for t in &self.terms {
            let z = t.coeff * Complex64::from_polar(1.0, t.nu.dot(alpha) + t.mu.dot(beta));
            for (j, o) in out.iter_mut().enumerate() {
                *o += (z * Complex64::new(0.0, t.mu.get(j) as f64)).re;
            }
        }
    }

    /// Cache of `c_{nu,mu} e^{i mu.beta0}` per mode for repeated contractions.
    pub fn at(&self, beta0: &[f64]) -> ForcingAt {
        let per_mode = self
            .by_nu
            .iter()
            .map(|(nu, list)| {
                let phased = list
                    .iter()
                    .map(|(mu, c)| {
                        let m: Vec<f64> = (0..self.r).map(|j| mu.get(j) as f64).collect();
                        (m, *c * Complex64::from_polar(1.0, mu.dot(beta0)))
                    })
                    .collect();
                (*nu, phased)
            })
            .collect();
        ForcingAt { r: self.r, per_mode }
    }
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Forcing with phases `e^{i mu.beta0}` folded in.
#[derive(Debug, Clone)]
pub struct ForcingAt {
    r: usize,
    per_mode: BTreeMap<Mode, Vec<(Vec<f64>, Complex64)>>,
}

impl ForcingAt {
    pub fn r(&self) -> usize {
        self.r
    }

    /// Vector `W_u = sum_mu c e^{i mu.beta0} (i mu_u) prod_k (i mu . legs_k)`, real part.
    ///
    /// This is the node factor contracted with the entering-line vectors, without `1/s!`.
    pub fn contract(&self, nu: &Mode, legs: &[&[f64]]) -> Vec<f64> {
        let mut out = vec![0.0; self.r];
        let Some(list) = self.per_mode.get(nu) else { return out };
        for (mu, c) in list {
            let mut common = *c;
            for leg in legs {
                let dot: f64 = mu.iter().zip(leg.iter()).map(|(a, b)| a * b).sum();
                common *= Complex64::new(0.0, dot);
            }
            for (u, o) in out.iter_mut().enumerate() {
                *o += (common * Complex64::new(0.0, mu[u])).re;
            }
        }
        out
    }

    /// Matrix `N_{u,e} = sum_mu c e^{i mu.beta0} (i mu_u)(i mu_e) prod_k (i mu . legs_k)`, row-major.
    pub fn contract_matrix(&self, nu: &Mode, legs: &[&[f64]]) -> Vec<f64> {
        let r = self.r;
        let mut out = vec![0.0; r * r];
        let Some(list) = self.per_mode.get(nu) else { return out };
        for (mu, c) in list {
            let mut common = -*c;
            for leg in legs {
                let dot: f64 = mu.iter().zip(leg.iter()).map(|(a, b)| a * b).sum();
                common *= Complex64::new(0.0, dot);
            }
            for u in 0..r {
                for e in 0..r {
                    out[u * r + e] += (common * (mu[u] * mu[e])).re;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn term(nu: &[i32], mu: &[i32], re: f64, im: f64) -> ForcingTerm {
        ForcingTerm { nu: Mode::new(nu), mu: Mode::new(mu), coeff: Complex64::new(re, im) }
    }

    /// `cos(alpha_1) cos(beta_1)` on `T^{2+1}`.
    fn coscos() -> Vec<ForcingTerm> {
        let mut v = Vec::new();
        for a in [-1, 1] {
            for b in [-1, 1] {
                v.push(term(&[a, 0], &[b], 0.25, 0.0));
            }
        }
        v
    }

    fn random_model(seed: u64) -> ForcingModel {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut terms = Vec::new();
        for _ in 0..5 {
            let nu = [rng.random_range(-2..=2), rng.random_range(-2..=2)];
            let mu = [rng.random_range(-2..=2), rng.random_range(-2..=2)];
            let c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            for (n, m, cc) in [
                (nu, mu, c),
                ([-nu[0], -nu[1]], mu, c),
                ([-nu[0], -nu[1]], [-mu[0], -mu[1]], c.conj()),
                (nu, [-mu[0], -mu[1]], c.conj()),
            ] {
                terms.push(ForcingTerm { nu: Mode::new(&n), mu: Mode::new(&m), coeff: cc });
            }
        }
        ForcingModel::validated(2, 2, terms).unwrap()
    }

    #[test]
    fn validation_examples() {
        assert!(ForcingModel::validated(2, 1, coscos()).is_ok());
        // sin(alpha_1) cos(beta_1) = sum over signs of (+-i/4)...
        let mut sin = Vec::new();
        for a in [-1i32, 1] {
            for b in [-1, 1] {
                sin.push(term(&[a, 0], &[b], 0.0, -0.25 * a as f64));
            }
        }
        match ForcingModel::validated(2, 1, sin) {
            Err(Error::Parity(nus)) => assert!(nus.contains(&vec![1, 0])),
            other => panic!("expected parity violation, got {other:?}"),
        }
        let cos_beta = vec![term(&[0, 0], &[1], 0.5, 0.0), term(&[0, 0], &[-1], 0.5, 0.0)];
        assert!(ForcingModel::validated(2, 1, cos_beta).is_ok());
        let lopsided = vec![term(&[0, 0], &[1], 0.5, 0.0)];
        assert!(matches!(ForcingModel::validated(2, 1, lopsided), Err(Error::Reality(_))));
    }

    #[test]
    fn derivative_examples() {
        let cos_beta = ForcingModel::validated(
            2,
            1,
            vec![term(&[0, 0], &[1], 0.5, 0.0), term(&[0, 0], &[-1], 0.5, 0.0)],
        )
        .unwrap();
        assert!((cos_beta.f_nu_deriv(&Mode::ZERO, &[0, 0], &[0.0]).re + 1.0).abs() < 1e-15);
        assert_eq!(cos_beta.node_factor(&Mode::ZERO, 0, &[], &[0.0]), 0.0);
        assert!((cos_beta.node_factor(&Mode::ZERO, 0, &[], &[std::f64::consts::FRAC_PI_2]) + 1.0).abs() < 1e-15);
        assert!(cos_beta.node_factor(&Mode::ZERO, 0, &[0, 0], &[0.0]).abs() < 1e-15);

        let cc = ForcingModel::validated(2, 1, coscos()).unwrap();
        let nu = Mode::new(&[1, 0]);
        assert!((cc.f_nu_deriv(&nu, &[], &[0.3]).re - 0.3f64.cos() / 2.0).abs() < 1e-15);
        assert!(cc.f_nu_deriv(&nu, &[0], &[0.0]).norm() < 1e-15);

        let constant = ForcingModel::validated(2, 1, vec![term(&[1, 0], &[0], 0.5, 0.0), term(&[-1, 0], &[0], 0.5, 0.0)])
            .unwrap();
        for u in 0..1 {
            assert_eq!(constant.node_factor(&Mode::new(&[1, 0]), u, &[], &[0.4]), 0.0);
        }
    }

    #[test]
    fn finite_difference_oracle() {
        let model = random_model(7);
        let beta = [0.37, -1.21];
        let h = 1e-5;
        for nu in model.modes() {
            for j in 0..2 {
                let mut bp = beta;
                let mut bm = beta;
                bp[j] += h;
                bm[j] -= h;
                let fd = (model.f_nu_deriv(&nu, &[], &bp) - model.f_nu_deriv(&nu, &[], &bm)) / (2.0 * h);
                let exact = model.f_nu_deriv(&nu, &[j], &beta);
                assert!((fd - exact).norm() < 1e-9, "{nu:?} {j}: {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn node_factor_properties() {
        let model = random_model(11);
        let beta = [0.9, 2.2];
        for nu in model.modes() {
            let a = model.node_factor(&nu, 1, &[0, 1, 1], &beta);
            let b = model.node_factor(&nu, 1, &[1, 0, 1], &beta);
            assert!((a - b).abs() < 1e-13);
            let z = model.f_nu_deriv(&nu, &[1, 0, 1, 1], &beta);
            assert!(z.im.abs() < 1e-14 * z.norm().max(1.0));
            let zm = model.f_nu_deriv(&(-nu), &[0, 1], &beta);
            let zp = model.f_nu_deriv(&nu, &[0, 1], &beta);
            assert!((zm - zp.conj()).norm() < 1e-13);
        }
    }

    #[test]
    fn contraction_matches_node_factor() {
        let model = random_model(3);
        let beta = [0.1, -0.4];
        let at = model.at(&beta);
        let e1: [f64; 2] = [1.0, 0.0];
        let e2: [f64; 2] = [0.0, 1.0];
        for nu in model.modes() {
            let w = at.contract(&nu, &[&e1, &e2]);
            let m = at.contract_matrix(&nu, &[&e2]);
            for u in 0..2 {
                let direct = model.node_factor(&nu, u, &[0, 1], &beta) * 2.0;
                assert!((w[u] - direct).abs() < 1e-13);
                assert!((m[u * 2] - direct).abs() < 1e-13);
            }
        }
    }
}
