//! Smooth partition of unity on divisor magnitudes and eigenvalue cutoffs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::frequency::ScaleSequences;

/// Default shape parameter `s` of `g(t) = exp(-s / t)`.
pub const DEFAULT_SHARPNESS: f64 = 1.0;

fn g(t: f64, sharpness: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-sharpness / t).exp()
    }
}

/// Smooth step `h(t) = g(t) / (g(t) + g(1 - t))`: 0 for `t <= 0`, 1 for `t >= 1`.
pub fn smooth_step(t: f64, sharpness: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = g(t, sharpness);
    let b = g(1.0 - t, sharpness);
    a / (a + b)
}

/// Even bump: 1 on `|x| <= 1/2`, 0 on `|x| >= 1`, smooth in between.
pub fn mollifier_chi(x: f64) -> f64 {
    mollifier_chi_with(x, DEFAULT_SHARPNESS)
}

pub fn mollifier_chi_with(x: f64, sharpness: f64) -> f64 {
    let a = x.abs();
    if a <= 0.5 {
        1.0
    } else if a >= 1.0 {
        0.0
    } else {
        smooth_step(2.0 * (1.0 - a), sharpness)
    }
}

/// Radii `rho_n` together with the bump shape.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionParams {
    pub rho: Vec<f64>,
    pub mollifier_sharpness: f64,
}

impl PartitionParams {
    pub fn new(rho: Vec<f64>, mollifier_sharpness: f64) -> Result<Self> {
        if rho.is_empty() || !(mollifier_sharpness > 0.0) {
            return Err(Error::Invalid("partition needs at least one radius and positive sharpness".into()));
        }
        if rho.windows(2).any(|w| w[1] > 0.5 * w[0]) || rho.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Invalid("radii must be positive with rho_{n+1} <= rho_n / 2".into()));
        }
        Ok(Self { rho, mollifier_sharpness })
    }

    pub fn from_sequences(seq: &ScaleSequences) -> Result<Self> {
        Self::new(seq.rho.clone(), DEFAULT_SHARPNESS)
    }

    /// Largest scale with a resolved radius.
    pub fn max_scale(&self) -> i32 {
        self.rho.len() as i32 - 1
    }

    /// `chi_n(x) = chi(x / rho_n)`, with `chi_{-1} = 1` and `chi_{-2} = 1`.
    pub fn chi_n(&self, n: i32, x: f64) -> Result<f64> {
        if n < 0 {
            return Ok(1.0);
        }
        let rho = self.rho.get(n as usize).ok_or(Error::ScaleOutOfRange {
            requested: n,
            resolved: self.max_scale(),
        })?;
        Ok(mollifier_chi_with(x / rho, self.mollifier_sharpness))
    }

    /// `Psi_n = chi_{n-1} - chi_n`; `Psi_{-1}` vanishes identically.
    pub fn psi_n(&self, n: i32, x: f64) -> Result<f64> {
        if n < -1 {
            return Err(Error::ScaleOutOfRange { requested: n, resolved: self.max_scale() });
        }
        Ok(self.chi_n(n - 1, x)? - self.chi_n(n, x)?)
    }

    /// Scales `n` in `0..=cap` with `Psi_n(x) > 0`, paired with `Psi_n(x)`.
    ///
    /// Lines whose divisor only admits scales beyond `cap` get an empty list.
    pub fn scales_up_to(&self, x: f64, cap: i32) -> Result<Vec<(i32, f64)>> {
        if cap > self.max_scale() {
            return Err(Error::ScaleOutOfRange { requested: cap, resolved: self.max_scale() });
        }
        let mut out = Vec::with_capacity(2);
        let mut prev = 1.0;
        for n in 0..=cap {
            let cur = self.chi_n(n, x)?;
            let psi = prev - cur;
            if psi > 0.0 {
                out.push((n, psi));
            }
            if cur == 0.0 {
                break;
            }
            prev = cur;
        }
        Ok(out)
    }

    /// `{ n >= 0 : Psi_n(x) > 0 }`.
    pub fn scales_of(&self, x: f64) -> Result<Vec<i32>> {
        if x == 0.0 {
            return Err(Error::ZeroDivisor);
        }
        let n_max = self.max_scale();
        if self.chi_n(n_max, x)? > 0.0 {
            // scales beyond the resolved range may be active
            return Err(Error::ScaleOutOfRange { requested: n_max + 1, resolved: n_max });
        }
        Ok(self.scales_up_to(x, n_max)?.into_iter().map(|(n, _)| n).collect())
    }
}

/// Plateau thresholds of the cutoff `xi_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffThresholds {
    pub hi: f64,
    pub lo: f64,
}

impl CutoffThresholds {
    /// `hi = alpha^2 / 2^11`, `lo = alpha^2 / 2^12` with `alpha = alpha_{m_{n+1}}`.
    pub fn from_alpha(alpha_next: f64) -> Self {
        let a2 = alpha_next * alpha_next;
        Self { hi: a2 / 2048.0, lo: a2 / 4096.0 }
    }

    pub fn for_scale(seq: &ScaleSequences, n: usize) -> Result<Self> {
        if n + 1 > seq.n_max() {
            return Err(Error::ScaleOutOfRange { requested: n as i32 + 1, resolved: seq.n_max() as i32 });
        }
        Ok(Self::from_alpha(seq.alpha_at_scale(n + 1)))
    }
}

/// `xi_n(lambda)`: product of per-eigenvalue smooth steps; `None` stands for `xi_{-1} = 1`.
pub fn cutoff_xi(lambda: &[f64], thresholds: Option<&CutoffThresholds>) -> f64 {
    cutoff_xi_with(lambda, thresholds, DEFAULT_SHARPNESS)
}

pub fn cutoff_xi_with(lambda: &[f64], thresholds: Option<&CutoffThresholds>, sharpness: f64) -> f64 {
    let Some(th) = thresholds else { return 1.0 };
    lambda
        .iter()
        .map(|&l| {
            if l <= th.lo {
                1.0
            } else if l >= th.hi {
                0.0
            } else {
                smooth_step((th.hi - l) / (th.hi - th.lo), sharpness)
            }
        })
        .product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> PartitionParams {
        // golden-mean radii alpha_{m_n} / 8
        PartitionParams::new(vec![0.618034 / 8.0, 0.236068 / 8.0, 0.090170 / 8.0, 0.034442 / 8.0, 0.013156 / 8.0], 1.0)
            .unwrap()
    }

    #[test]
    fn plateaus() {
        assert_eq!(mollifier_chi(0.25), 1.0);
        assert_eq!(mollifier_chi(1.5), 0.0);
        let v = mollifier_chi(0.75);
        assert!(v > 0.0 && v < 1.0);
        assert_eq!(v, mollifier_chi(-0.75));
        // symmetric profile: midpoint of the transition is 1/2
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn psi_examples() {
        let p = params();
        let x = 2.0 * p.rho[0];
        assert_eq!(p.psi_n(0, x).unwrap(), 1.0);
        for n in 1..=4 {
            assert_eq!(p.psi_n(n, x).unwrap(), 0.0);
        }
        for n in 0..=4 {
            assert_eq!(p.psi_n(n, 0.0).unwrap(), 0.0);
        }
        assert_eq!(p.psi_n(-1, 0.3).unwrap(), 0.0);
        let x = 0.7 * p.rho[1];
        let s = p.psi_n(1, x).unwrap() + p.psi_n(2, x).unwrap();
        assert!((s - (1.0 - p.chi_n(2, x).unwrap())).abs() < 1e-15);
        assert!(matches!(p.psi_n(9, x), Err(Error::ScaleOutOfRange { .. })));
    }

    #[test]
    fn scales_of_examples() {
        let p = params();
        assert_eq!(p.scales_of(p.rho[0] * 1.01).unwrap(), vec![0]);
        // n = 2 plateau gap: chi_1 = 1 and chi_2 = 0
        let x = 0.5 * p.rho[1] * 0.999;
        assert!(x >= p.rho[2]);
        assert_eq!(p.scales_of(x).unwrap(), vec![2]);
        let x = 0.75 * p.rho[2];
        assert_eq!(p.scales_of(x).unwrap(), vec![2, 3]);
        assert!(matches!(p.scales_of(0.0), Err(Error::ZeroDivisor)));
        assert!(p.scales_of(1e-9).is_err());
    }

    #[test]
    fn cutoff_examples() {
        let th = CutoffThresholds::from_alpha(0.09);
        assert!(th.lo < th.hi && th.lo > 0.0);
        assert_eq!(cutoff_xi(&[-1.0, -2.0], Some(&th)), 1.0);
        assert_eq!(cutoff_xi(&[-1.0, 2.0 * th.hi], Some(&th)), 0.0);
        let v = cutoff_xi(&[0.5 * (th.lo + th.hi)], Some(&th));
        assert!(v > 0.0 && v < 1.0);
        assert_eq!(cutoff_xi(&[1e9], None), 1.0);
    }

    #[test]
    fn chi_has_no_jumps() {
        let h = 1e-4;
        let mut x = 0.3;
        while x < 1.2 {
            assert!((mollifier_chi(x + h) - mollifier_chi(x)).abs() < 1e-3);
            x += h;
        }
        for join in [0.5, 1.0] {
            assert!((mollifier_chi(join + h) - mollifier_chi(join - h)).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn partition_sums_to_one(u in 0.0f64..1.0, sign in proptest::bool::ANY) {
            let p = params();
            let n = p.max_scale();
            let lo = p.rho[n as usize] / 2.0;
            let hi = 2.0 * p.rho[0];
            let mut x = lo * (hi / lo).powf(u);
            if x <= lo { x = lo * (1.0 + 1e-12); }
            if sign { x = -x; }
            let mut total = p.chi_n(n, x).unwrap();
            for k in 0..=n {
                total += p.psi_n(k, x).unwrap();
            }
            prop_assert!((total - 1.0).abs() < 1e-14);
        }

        #[test]
        fn psi_support(u in 0.0f64..1.0) {
            let p = params();
            let x = 1e-4 * (1.0f64 / 1e-4).powf(u);
            for n in 0..=p.max_scale() {
                if p.psi_n(n, x).unwrap() != 0.0 {
                    let upper = if n == 0 { f64::INFINITY } else { p.rho[n as usize - 1] };
                    prop_assert!(x >= p.rho[n as usize] / 2.0 && x <= upper);
                }
            }
        }

        #[test]
        fn at_most_two_consecutive_scales(u in 0.0f64..1.0) {
            let p = params();
            let x = p.rho[4] * (1.0 / p.rho[4]).powf(u);
            if let Ok(s) = p.scales_of(x) {
                prop_assert!(!s.is_empty() && s.len() <= 2);
                if s.len() == 2 { prop_assert_eq!(s[1], s[0] + 1); }
            }
        }

        #[test]
        fn cutoff_monotone(l0 in -1e-5f64..1e-5, l1 in -1e-5f64..1e-5, bump in 0.0f64..1e-5) {
            let th = CutoffThresholds::from_alpha(0.09);
            let base = cutoff_xi(&[l0, l1], Some(&th));
            let raised = cutoff_xi(&[l0 + bump, l1], Some(&th));
            prop_assert!(raised <= base);
        }
    }
}
