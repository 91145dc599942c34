//! Small-divisor sequences, the Bryuno sum and the multiscale sequences
//! `m_n`, `p_n`, `rho_n` derived from a frequency vector.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Mode, MAX_DIM};
use crate::par;

/// Radius of the l1 ball checked by the rational-independence screen.
pub const SCREEN_RADIUS: u32 = 1000;
/// Divisors below this value are treated as exact resonances.
pub const SCREEN_TOL: f64 = 1e-13;
/// Default number of lattice points the exhaustive search may visit.
pub const DEFAULT_NODE_LIMIT: u64 = 2_000_000_000;

/// Frequency vector `omega` of the quasi-periodic forcing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyVector {
    components: Vec<f64>,
}

impl FrequencyVector {
    /// Validate `components` and run the rational-independence screen.
    pub fn new(components: Vec<f64>) -> Result<Self> {
        let omega = Self::unscreened(components)?;
        let budget = LatticeBudget::default();
        let (value, nu) = min_divisor(&omega, SCREEN_RADIUS, &budget)?;
        if value < SCREEN_TOL {
            return Err(Error::Resonance { nu: nu.to_vec(omega.dim()), divisor: value });
        }
        Ok(omega)
    }

    /// Validate shape and signs only, skipping the resonance screen.
    pub fn unscreened(components: Vec<f64>) -> Result<Self> {
        let d = components.len();
        if d < 2 || d > MAX_DIM {
            return Err(Error::Invalid(format!("frequency dimension {d} outside 2..={MAX_DIM}")));
        }
        if components.iter().any(|c| !c.is_finite() || *c == 0.0) {
            return Err(Error::Invalid("frequency components must be finite and nonzero".into()));
        }
        Ok(Self { components })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    /// `omega . nu`.
    pub fn divisor(&self, nu: &Mode) -> f64 {
        nu.dot(&self.components)
    }
}

/// Upper bound on lattice points visited by one exhaustive search.
#[derive(Debug, Clone, Copy)]
pub struct LatticeBudget {
    pub node_limit: u64,
}

impl Default for LatticeBudget {
    fn default() -> Self {
        Self { node_limit: DEFAULT_NODE_LIMIT }
    }
}

/// Number of prefixes `(nu_1, ..., nu_{d-1})` with `nu_1 >= 0` in the l1 ball.
fn prefix_count(d: usize, radius: u64) -> u64 {
    // points of Z^k with l1 norm <= R, counted recursively; saturating
    fn ball(k: usize, r: u64) -> u64 {
        if k == 0 {
            return 1;
        }
        let mut total: u64 = ball(k - 1, r);
        for t in 1..=r {
            total = total.saturating_add(ball(k - 1, r - t).saturating_mul(2));
            if total == u64::MAX {
                break;
            }
        }
        total
    }
    let mut total = 0u64;
    for t in 0..=radius {
        total = total.saturating_add(ball(d - 2, radius - t));
    }
    total
}

/// Exact minimum of `|omega . nu|` over `0 < |nu|_1 <= radius`, with a minimiser.
///
/// The first `d - 1` coordinates are enumerated with `nu_1 >= 0` (the ball is
/// symmetric under `nu -> -nu`); the last coordinate is chosen optimally in
/// closed form. Branches whose partial sum cannot beat the incumbent are cut.
pub fn min_divisor(omega: &FrequencyVector, radius: u32, budget: &LatticeBudget) -> Result<(f64, Mode)> {
    let d = omega.dim();
    let nodes = prefix_count(d, radius as u64);
    if nodes > budget.node_limit {
        return Err(Error::Budget(format!(
            "lattice ball of radius {radius} in dimension {d} needs {nodes} nodes (limit {})",
            budget.node_limit
        )));
    }
    let w = omega.components();
    let tail_max: Vec<f64> = (0..d)
        .map(|i| w[i..].iter().fold(0.0f64, |m, c| m.max(c.abs())))
        .collect();

    let r = radius as i32;
    let per_first = par::map_range(radius as usize + 1, |first| {
        let mut best = (f64::INFINITY, Mode::ZERO);
        let mut prefix = [0i32; MAX_DIM];
        prefix[0] = first as i32;
        search(w, &tail_max, 1, &mut prefix, first as f64 * w[0], r - first as i32, &mut best);
        best
    });
    let best = per_first
        .into_iter()
        .fold((f64::INFINITY, Mode::ZERO), |acc, cand| if better(cand, acc) { cand } else { acc });
    if !best.0.is_finite() {
        return Err(Error::Invalid("empty lattice ball".into()));
    }
    Ok(best)
}

fn better(a: (f64, Mode), b: (f64, Mode)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn search(
    w: &[f64],
    tail_max: &[f64],
    idx: usize,
    prefix: &mut [i32; MAX_DIM],
    partial: f64,
    rem: i32,
    best: &mut (f64, Mode),
) {
    let d = w.len();
    if partial.abs() - rem as f64 * tail_max[idx] > best.0 {
        return;
    }
    if idx == d - 1 {
        let target = -partial / w[idx];
        let prefix_zero = prefix[..idx].iter().all(|&c| c == 0);
        let mut candidates = [target.floor(), target.ceil()];
        for c in candidates.iter_mut() {
            *c = c.clamp(-(rem as f64), rem as f64);
        }
        for &t in candidates.iter() {
            let mut t = t as i32;
            if prefix_zero && t == 0 {
                // nu = 0 excluded; nearest admissible last coordinates are +-1
                if rem == 0 {
                    continue;
                }
                t = if target >= 0.0 { 1 } else { -1 };
            }
            // with the prefix zero, nu and -nu are both enumerated; keep the positive one
            if prefix_zero && t < 0 {
                t = -t;
            }
            prefix[idx] = t;
            let value = (partial + t as f64 * w[idx]).abs();
            let cand = (value, Mode(*prefix));
            if better(cand, *best) {
                *best = cand;
            }
        }
        prefix[idx] = 0;
        return;
    }
    for c in -rem..=rem {
        prefix[idx] = c;
        search(w, tail_max, idx + 1, prefix, partial + c as f64 * w[idx], rem - c.abs(), best);
    }
    prefix[idx] = 0;
}

/// `alpha_m(omega)`: minimum divisor over the l1 ball of radius `2^m`.
pub fn alpha_m(omega: &FrequencyVector, m: u32, budget: &LatticeBudget) -> Result<f64> {
    if m > 30 {
        return Err(Error::Budget(format!("m = {m} exceeds the supported range")));
    }
    Ok(min_divisor(omega, 1 << m, budget)?.0)
}

/// Table of `alpha_m` for `m = 0..=m_max` together with minimisers.
#[derive(Debug, Clone, Serialize)]
pub struct AlphaTable {
    pub alpha: Vec<f64>,
    pub argmin: Vec<Vec<i32>>,
}

impl AlphaTable {
    pub fn compute(omega: &FrequencyVector, m_max: u32, budget: &LatticeBudget) -> Result<Self> {
        let mut alpha = Vec::with_capacity(m_max as usize + 1);
        let mut argmin = Vec::with_capacity(m_max as usize + 1);
        for m in 0..=m_max {
            if m > 30 {
                return Err(Error::Budget(format!("m = {m} exceeds the supported range")));
            }
            let (a, nu) = min_divisor(omega, 1 << m, budget)?;
            alpha.push(a);
            argmin.push(nu.to_vec(omega.dim()));
        }
        Ok(Self { alpha, argmin })
    }

    /// Build from explicit values (tests and synthetic sequences).
    pub fn from_values(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() || alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::Invalid("alpha values must be positive".into()));
        }
        if alpha.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Invalid("alpha values must be non-increasing".into()));
        }
        let argmin = vec![Vec::new(); alpha.len()];
        Ok(Self { alpha, argmin })
    }

    pub fn m_max(&self) -> usize {
        self.alpha.len() - 1
    }

    /// CSV rows `(m, alpha_m)`.
    pub fn csv_rows(&self) -> Vec<(usize, f64)> {
        self.alpha.iter().copied().enumerate().collect()
    }
}

/// Truncated Bryuno sum with the size of its last term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BryunoSum {
    pub partial: f64,
    pub last_term: f64,
}

pub fn bryuno_sum(table: &AlphaTable) -> BryunoSum {
    let mut partial = 0.0;
    let mut last_term = 0.0;
    for (m, a) in table.alpha.iter().enumerate() {
        last_term = (1.0 / a).ln() / 2f64.powi(m as i32);
        partial += last_term;
    }
    BryunoSum { partial, last_term: last_term.abs() }
}

/// Multiscale sequences `m_n`, `p_n`, `rho_n`.
#[derive(Debug, Clone, Serialize)]
pub struct ScaleSequences {
    pub alpha: Vec<f64>,
    pub m: Vec<usize>,
    pub p: Vec<usize>,
    pub rho: Vec<f64>,
}

impl ScaleSequences {
    /// Resolve `m_n`, `rho_n` for `n <= n_max` (and `p_n` for `n < n_max`).
    ///
    /// Fails with [`Error::ScaleCap`] when some `p_n` needs `alpha_m` beyond the table.
    pub fn resolve(table: &AlphaTable, n_max: usize) -> Result<Self> {
        let m_max = table.m_max();
        let a = &table.alpha;
        let mut m = vec![0usize];
        let mut p = Vec::new();
        for n in 0..n_max {
            let mn = m[n];
            let cap = m_max - mn;
            let mut q = 0;
            while q < cap && a[mn] < 2.0 * a[mn + q + 1] {
                q += 1;
            }
            // q == cap with the next comparison unavailable: p_n not determined
            if q == cap {
                return Err(Error::ScaleCap { m_max, resolved: n });
            }
            p.push(q);
            m.push(mn + q + 1);
        }
        let rho = m.iter().map(|&mn| a[mn] / 8.0).collect();
        Ok(Self { alpha: a.clone(), m, p, rho })
    }

    /// Resolve as many scales as the table allows, up to `n_max`.
    pub fn resolve_available(table: &AlphaTable, n_max: usize) -> Self {
        match Self::resolve(table, n_max) {
            Ok(s) => s,
            Err(Error::ScaleCap { resolved, .. }) => {
                Self::resolve(table, resolved).expect("resolved prefix is resolvable")
            }
            Err(e) => unreachable!("unexpected error {e}"),
        }
    }

    /// Largest `n` with `rho_n` available.
    pub fn n_max(&self) -> usize {
        self.m.len() - 1
    }

    /// `alpha_{m_n}`.
    pub fn alpha_at_scale(&self, n: usize) -> f64 {
        self.alpha[self.m[n]]
    }

    /// CSV rows `(n, m_n, p_n, rho_n)`; `p_n` is `None` for the last stored `n`.
    pub fn csv_rows(&self) -> Vec<(usize, usize, Option<usize>, f64)> {
        (0..self.m.len()).map(|n| (n, self.m[n], self.p.get(n).copied(), self.rho[n])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden() -> FrequencyVector {
        FrequencyVector::new(vec![1.0, (5f64.sqrt() - 1.0) / 2.0]).unwrap()
    }

    fn brute(omega: &FrequencyVector, radius: i32) -> f64 {
        let w = omega.components();
        let mut best = f64::INFINITY;
        for a in -radius..=radius {
            for b in -(radius - a.abs())..=(radius - a.abs()) {
                if a == 0 && b == 0 {
                    continue;
                }
                best = best.min((a as f64 * w[0] + b as f64 * w[1]).abs());
            }
        }
        best
    }

    #[test]
    fn golden_alpha_values() {
        let b = LatticeBudget::default();
        let g = golden();
        assert!((alpha_m(&g, 0, &b).unwrap() - 0.6180339887).abs() < 1e-10);
        assert!((alpha_m(&g, 1, &b).unwrap() - 0.3819660113).abs() < 1e-10);
        assert!((alpha_m(&g, 2, &b).unwrap() - 0.2360679775).abs() < 1e-10);
        let (_, nu) = min_divisor(&g, 2, &b).unwrap();
        assert_eq!(nu.to_vec(2), vec![1, -1]);
        let (_, nu) = min_divisor(&g, 4, &b).unwrap();
        assert_eq!(nu.to_vec(2), vec![1, -2]);
    }

    #[test]
    fn matches_brute_force_d2() {
        let b = LatticeBudget::default();
        for w in [vec![1.0, 2f64.sqrt()], vec![0.3, -1.7], golden().components().to_vec()] {
            let om = FrequencyVector::unscreened(w).unwrap();
            for radius in [1, 2, 3, 7, 16, 33] {
                let fast = min_divisor(&om, radius, &b).unwrap().0;
                assert_eq!(fast, brute(&om, radius as i32));
            }
        }
    }

    #[test]
    fn matches_brute_force_d3() {
        let om = FrequencyVector::unscreened(vec![1.0, 2f64.sqrt(), 3f64.sqrt()]).unwrap();
        for radius in [1u32, 2, 5, 9] {
            let r = radius as i32;
            let mut best = f64::INFINITY;
            for a in -r..=r {
                for b in -r..=r {
                    for c in -r..=r {
                        if (a, b, c) == (0, 0, 0) || a.abs() + b.abs() + c.abs() > r {
                            continue;
                        }
                        let w = om.components();
                        best = best.min((a as f64 * w[0] + b as f64 * w[1] + c as f64 * w[2]).abs());
                    }
                }
            }
            assert_eq!(min_divisor(&om, radius, &LatticeBudget::default()).unwrap().0, best);
        }
    }

    #[test]
    fn screen_rejects_resonant() {
        assert!(matches!(FrequencyVector::new(vec![1.0, 0.5]), Err(Error::Resonance { .. })));
        assert!(FrequencyVector::new(vec![1.0]).is_err());
        assert!(FrequencyVector::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn budget_is_enforced() {
        let g = golden();
        let tiny = LatticeBudget { node_limit: 10 };
        assert!(matches!(alpha_m(&g, 6, &tiny), Err(Error::Budget(_))));
    }

    #[test]
    fn bryuno_trivial_cases() {
        let t = AlphaTable::from_values(vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(bryuno_sum(&t).partial, 0.0);
        let t = AlphaTable::from_values(vec![0.25]).unwrap();
        assert_eq!(bryuno_sum(&t).partial, 4f64.ln());
    }

    #[test]
    fn p_n_trivial_example() {
        let t = AlphaTable::from_values(vec![1.0, 0.4, 0.1]).unwrap();
        let s = ScaleSequences::resolve(&t, 1).unwrap();
        assert_eq!(s.p[0], 0);
        assert_eq!(s.m[1], 1);
        let s0 = ScaleSequences::resolve(&t, 0).unwrap();
        assert_eq!(s0.m, vec![0]);
        assert_eq!(s0.rho, vec![1.0 / 8.0]);
    }

    #[test]
    fn cap_reports_resolved_prefix() {
        let t = AlphaTable::from_values(vec![1.0, 0.9, 0.8]).unwrap();
        match ScaleSequences::resolve(&t, 3) {
            Err(Error::ScaleCap { resolved, .. }) => assert_eq!(resolved, 0),
            other => panic!("expected cap error, got {other:?}"),
        }
    }
}
