//! Integer lattice vectors used as Fourier modes.

use std::fmt;
use std::ops::{Add, AddAssign, Neg, Sub};

/// Largest supported torus dimension (both `d` and `r`).
pub const MAX_DIM: usize = 4;

/// Integer vector in `Z^n` with `n <= MAX_DIM`; unused trailing slots are zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Mode(pub [i32; MAX_DIM]);

impl Mode {
    pub const ZERO: Mode = Mode([0; MAX_DIM]);

    pub fn new(components: &[i32]) -> Mode {
        assert!(components.len() <= MAX_DIM, "mode dimension exceeds {MAX_DIM}");
        let mut out = [0; MAX_DIM];
        out[..components.len()].copy_from_slice(components);
        Mode(out)
    }

    pub fn unit(i: usize) -> Mode {
        let mut out = [0; MAX_DIM];
        out[i] = 1;
        Mode(out)
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0; MAX_DIM]
    }

    /// l1 norm `|nu_1| + ... + |nu_d|`.
    pub fn l1(&self) -> u32 {
        self.0.iter().map(|c| c.unsigned_abs()).sum()
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        v.iter().zip(self.0.iter()).map(|(a, &b)| a * b as f64).sum()
    }

    pub fn to_vec(&self, dim: usize) -> Vec<i32> {
        self.0[..dim].to_vec()
    }

    pub fn get(&self, i: usize) -> i32 {
        self.0[i]
    }
}

impl Add for Mode {
    type Output = Mode;
    fn add(mut self, rhs: Mode) -> Mode {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
        self
    }
}

impl AddAssign for Mode {
    fn add_assign(&mut self, rhs: Mode) {
        *self = *self + rhs;
    }
}

impl Sub for Mode {
    type Output = Mode;
    fn sub(self, rhs: Mode) -> Mode {
        self + (-rhs)
    }
}

impl Neg for Mode {
    type Output = Mode;
    fn neg(mut self) -> Mode {
        for a in self.0.iter_mut() {
            *a = -*a;
        }
        self
    }
}

impl fmt::Debug for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let last = self.0.iter().rposition(|&c| c != 0).map_or(1, |i| i + 1);
        write!(f, "{:?}", &self.0[..last.max(1)])
    }
}

/// Nonzero modes with `|nu|_1 <= radius` in dimension `d`, sorted.
pub fn ball(d: usize, radius: u32) -> Vec<Mode> {
    let n = radius as i32;
    let width = (2 * n + 1) as usize;
    let mut out = Vec::new();
    for idx in 0..width.pow(d as u32) {
        let mut rem = idx;
        let mut c = [0i32; MAX_DIM];
        for slot in c[..d].iter_mut().rev() {
            *slot = (rem % width) as i32 - n;
            rem /= width;
        }
        let m = Mode(c);
        if m.l1() != 0 && m.l1() <= radius {
            out.push(m);
        }
    }
    out.sort();
    out
}
