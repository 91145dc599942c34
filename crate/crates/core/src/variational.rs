//! Averaged vector field and Lagrangian, the bifurcation solve and the
//! variational identities.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::Mode;
use crate::par;
use crate::problem::Problem;
use crate::renorm::{Expansion, ResummedSolution, BETA_STEP};
use crate::trees::TreePool;
use crate::trig::{compose, Convolver, TrigPoly};

type Matrix = DMatrix<f64>;

/// Fourier series `b_j(alpha)` of a solution, one per component.
pub fn coefficient_polys(sol: &ResummedSolution) -> Vec<TrigPoly> {
    let r = sol.r();
    (0..r)
        .map(|j| TrigPoly::from_terms(sol.coeffs.iter().map(|(m, v)| (*m, Complex64::new(v[j], 0.0)))))
        .collect()
}

/// `(up - down) / h` per component.
pub fn coefficient_difference(up: &ResummedSolution, down: &ResummedSolution, h: f64) -> Vec<TrigPoly> {
    let mut a = coefficient_polys(up);
    let b = coefficient_polys(down);
    for (aj, bj) in a.iter_mut().zip(&b) {
        aj.add_scaled(bj, Complex64::new(-1.0, 0.0));
        *aj = aj.scaled(Complex64::new(1.0 / h, 0.0));
    }
    a
}

/// Averages along `beta0 + b(alpha)`.
#[derive(Debug, Clone)]
pub struct Averages {
    /// `G = [eps d_beta f]_0`.
    pub g: Vec<f64>,
    /// `L = [-(omega.d_alpha b)^2 / 2 + eps f]_0`.
    pub l: f64,
    /// `d_beta0 G`, symmetrised; only when `d b / d beta0` was supplied.
    pub hessian: Option<Matrix>,
    /// Largest `|-(omega.nu)^2 b_nu + eps [d_beta f]_nu|` over `nu != 0`.
    pub residual: f64,
    /// Truncation indicator of the composition, scaled by `eps`.
    pub tail: f64,
}

/// `[a b]_0 = sum_nu a_nu b_{-nu}`.
fn mean_of_product(a: &TrigPoly, b: &TrigPoly) -> Complex64 {
    a.iter().map(|(m, c)| *c * b.get(&-*m)).sum()
}

/// Compose the forcing with a solution and average. `db[i][j]` is `d b_j / d beta0_i`.
pub fn averages(problem: &Problem, sol: &ResummedSolution, db: Option<&[Vec<TrigPoly>]>) -> Result<Averages> {
    let r = problem.r();
    let eps = sol.eps;
    let b = coefficient_polys(sol);
    let mut conv = Convolver::new(problem.d(), problem.mode_radius())?;
    let comp = compose(&problem.model, &b, &sol.beta0, &mut conv, db.is_some())?;
    let g: Vec<f64> = comp.grad.iter().map(|p| eps * p.mean().re).collect();
    let mut kinetic = 0.0;
    for (nu, v) in &sol.coeffs {
        let x = problem.omega.divisor(nu);
        for j in 0..r {
            kinetic += x * x * v[j] * sol.coeff(&-*nu, j);
        }
    }
    let l = -0.5 * kinetic + eps * comp.f.mean().re;

    let mut residual = 0.0f64;
    let mut modes: Vec<Mode> = sol.coeffs.keys().copied().collect();
    for p in &comp.grad {
        modes.extend(p.iter().map(|(m, _)| *m));
    }
    modes.sort();
    modes.dedup();
    for nu in modes.iter().filter(|m| !m.is_zero()) {
        let x = problem.omega.divisor(nu);
        for j in 0..r {
            let res = -x * x * sol.coeff(nu, j) + eps * comp.grad[j].get(nu).re;
            residual = residual.max(res.abs());
        }
    }

    let hessian = db.map(|db| {
        let mut h = Matrix::zeros(r, r);
        for j in 0..r {
            for k in 0..r {
                let mut v = comp.hess[j * r + k].mean().re;
                for l in 0..r {
                    v += mean_of_product(&comp.hess[j * r + l], &db[k][l]).re;
                }
                h[(j, k)] = eps * v;
            }
        }
        (&h + h.transpose()) * 0.5
    });
    Ok(Averages { g, l, hessian, residual, tail: eps * comp.tail })
}

/// Which propagators the objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Objective {
    Plain,
    Auxiliary,
}

/// Averaged quantities at one point.
#[derive(Debug, Clone, Serialize)]
pub struct VariationalReport {
    pub g: Vec<f64>,
    pub l: f64,
    pub hess_l: Vec<Vec<f64>>,
    /// Ascending eigenvalues of `hess_l`.
    pub lambda: Vec<f64>,
    pub residual_norm: f64,
    pub composition_tail: f64,
    pub identity_gaps: Option<IdentityGaps>,
}

/// Gaps in the two variational identities.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IdentityGaps {
    /// `|script M^[n](0) - d_beta0 G^{<=n}|`.
    pub self_energy_vs_gradient: f64,
    /// `|G^{<=n} - d_beta0 L^{<=n}|`.
    pub gradient_vs_lagrangian: f64,
}

/// Locked point of the bifurcation equation.
#[derive(Debug, Clone, Serialize)]
pub struct LockedPoint {
    pub beta0_star: Vec<f64>,
    pub eps: f64,
    pub l_value: f64,
    pub lambda: Vec<f64>,
    pub g_norm: f64,
    pub newton_iterations: usize,
    pub degenerate: bool,
    pub objective: Objective,
}

/// Values of `L` on a uniform grid; failed points keep their error.
#[derive(Debug, Clone)]
pub struct LagrangianGrid {
    pub step: f64,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<Result<f64>>,
}

/// Settings of the grid-then-Newton maximisation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolveOptions {
    pub grid: usize,
    pub g_tol: Option<f64>,
    pub h_tol: f64,
    pub max_newton: usize,
    /// Offset of the grid in units of the grid spacing (deterministic jitter).
    pub grid_offset: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { grid: 64, g_tol: None, h_tol: 1e-9, max_newton: 40, grid_offset: 0.0 }
    }
}

impl SolveOptions {
    pub fn g_tol(&self, eps: f64) -> f64 {
        self.g_tol.unwrap_or(1e-9 * eps.abs().max(1e-12))
    }
}

fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn wrap(beta: &mut [f64]) {
    for b in beta {
        *b = b.rem_euclid(std::f64::consts::TAU);
    }
}

/// Averaged quantities on a fixed problem, truncated at lines of scale `<= max_scale`.
pub struct Variational<'p> {
    pub problem: &'p Problem,
    pub pool: &'p TreePool,
    pub objective: Objective,
    pub max_scale: i32,
}

impl<'p> Variational<'p> {
    pub fn new(problem: &'p Problem, pool: &'p TreePool, objective: Objective) -> Self {
        Self { problem, pool, objective, max_scale: problem.p_max() }
    }

    pub fn expansion(&self, eps: f64, beta0: &[f64]) -> Result<Expansion<'p>> {
        match self.objective {
            Objective::Plain => Expansion::new(self.problem, self.pool, eps, beta0),
            Objective::Auxiliary => Expansion::auxiliary(self.problem, self.pool, eps, beta0),
        }
    }

    pub fn solution(&self, eps: f64, beta0: &[f64]) -> Result<ResummedSolution> {
        self.expansion(eps, beta0)?.solution(self.max_scale)
    }

    /// `d b / d beta0` by central differences.
    pub fn solution_derivative(&self, eps: f64, beta0: &[f64]) -> Result<Vec<Vec<TrigPoly>>> {
        let mut db = Vec::with_capacity(beta0.len());
        for i in 0..beta0.len() {
            let mut up = beta0.to_vec();
            let mut down = beta0.to_vec();
            up[i] += BETA_STEP;
            down[i] -= BETA_STEP;
            db.push(coefficient_difference(
                &self.solution(eps, &up)?,
                &self.solution(eps, &down)?,
                2.0 * BETA_STEP,
            ));
        }
        Ok(db)
    }

    /// `L` at one point (no derivatives).
    pub fn lagrangian(&self, eps: f64, beta0: &[f64]) -> Result<f64> {
        Ok(averages(self.problem, &self.solution(eps, beta0)?, None)?.l)
    }

    /// `G` at one point.
    pub fn gradient(&self, eps: f64, beta0: &[f64]) -> Result<Vec<f64>> {
        Ok(averages(self.problem, &self.solution(eps, beta0)?, None)?.g)
    }

    /// `G`, `L`, Hessian, eigenvalues and range residual at one point.
    pub fn report(&self, eps: f64, beta0: &[f64]) -> Result<VariationalReport> {
        let sol = self.solution(eps, beta0)?;
        let db = self.solution_derivative(eps, beta0)?;
        let avg = averages(self.problem, &sol, Some(&db))?;
        let h = avg.hessian.expect("requested");
        let mut lambda: Vec<f64> = h.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        lambda.sort_by(f64::total_cmp);
        Ok(VariationalReport {
            g: avg.g,
            l: avg.l,
            hess_l: (0..h.nrows()).map(|i| h.row(i).iter().copied().collect()).collect(),
            lambda,
            residual_norm: avg.residual,
            composition_tail: avg.tail,
            identity_gaps: None,
        })
    }

    /// Range residual of `b^{<=p}` in the max norm over modes.
    ///
    /// The dropped composition mass bounds the error of the reported value; the call
    /// fails when it exceeds `rel_tail` times the residual.
    pub fn range_residual(&self, eps: f64, beta0: &[f64], rel_tail: f64) -> Result<f64> {
        let avg = averages(self.problem, &self.solution(eps, beta0)?, None)?;
        let tol = rel_tail * avg.residual;
        if avg.tail > tol {
            return Err(Error::ModeRadius { radius: self.problem.mode_radius() as i32, tail: avg.tail, tol });
        }
        Ok(avg.residual)
    }

    /// Both variational identities at scale `n`, derivatives by central differences of step `h`.
    pub fn identity_checks(&self, eps: f64, beta0: &[f64], n: i32, h: f64) -> Result<IdentityGaps> {
        let r = self.problem.r();
        let truncated = Variational { max_scale: n, ..*self };
        let plain = Expansion::new(self.problem, self.pool, eps, beta0)?;
        let m0 = plain.plain_chain(n, 0.0)?;
        let g0 = truncated.gradient(eps, beta0)?;
        let mut dg = Matrix::zeros(r, r);
        let mut dl = vec![0.0; r];
        for i in 0..r {
            let mut up = beta0.to_vec();
            let mut down = beta0.to_vec();
            up[i] += h;
            down[i] -= h;
            let (gu, gd) = (truncated.gradient(eps, &up)?, truncated.gradient(eps, &down)?);
            for j in 0..r {
                dg[(j, i)] = (gu[j] - gd[j]) / (2.0 * h);
            }
            dl[i] = (truncated.lagrangian(eps, &up)? - truncated.lagrangian(eps, &down)?) / (2.0 * h);
        }
        let gap1 = (m0 - dg).norm();
        let gap2 = vec_norm(&g0.iter().zip(&dl).map(|(a, b)| a - b).collect::<Vec<_>>());
        Ok(IdentityGaps { self_energy_vs_gradient: gap1, gradient_vs_lagrangian: gap2 })
    }

    /// `L` on the `grid^r` lattice of `T^r` shifted by `grid_offset` cells.
    pub fn lagrangian_grid(&self, eps: f64, opts: &SolveOptions) -> Result<LagrangianGrid> {
        let r = self.problem.r();
        let n = opts.grid.max(1);
        let total = n.checked_pow(r as u32).ok_or_else(|| Error::Budget("grid too large".into()))?;
        let step = std::f64::consts::TAU / n as f64;
        let points: Vec<Vec<f64>> = (0..total)
            .map(|idx| {
                let mut rem = idx;
                let mut beta = vec![0.0; r];
                for j in (0..r).rev() {
                    beta[j] = ((rem % n) as f64 + opts.grid_offset) * step;
                    rem /= n;
                }
                beta
            })
            .collect();
        let values = par::map(&points, |b| self.lagrangian(eps, b));
        Ok(LagrangianGrid { step, points, values })
    }

    /// Maximise `L` on a grid over `T^r`, then refine `G = 0` by Newton's method.
    pub fn solve_bifurcation(&self, eps: f64, opts: &SolveOptions) -> Result<LockedPoint> {
        let grid = self.lagrangian_grid(eps, opts)?;
        self.solve_from_grid(eps, opts, &grid)
    }

    /// Newton refinement started from the best point of a precomputed grid.
    pub fn solve_from_grid(&self, eps: f64, opts: &SolveOptions, grid: &LagrangianGrid) -> Result<LockedPoint> {
        let r = self.problem.r();
        let step = grid.step;
        let mut best: Option<(usize, f64)> = None;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut first_error = None;
        for (idx, v) in grid.values.iter().enumerate() {
            match v {
                Ok(l) => {
                    let l = *l;
                    lo = lo.min(l);
                    hi = hi.max(l);
                    if best.map_or(true, |(_, b)| l > b) {
                        best = Some((idx, l));
                    }
                }
                Err(e) => {
                    // plain objective: points outside the property-1 region are skipped
                    if first_error.is_none() {
                        first_error = Some(e.clone());
                    }
                }
            }
        }
        let Some((idx, _)) = best else {
            return Err(first_error.unwrap_or_else(|| Error::Invalid("empty grid".into())));
        };
        let mut beta = grid.points[idx].clone();
        let scale = hi.abs().max(lo.abs());
        let degenerate = hi - lo <= 1e-13 * scale.max(f64::MIN_POSITIVE) || scale == 0.0;
        let g_tol = opts.g_tol(eps);
        if degenerate {
            let rep = self.report(eps, &beta)?;
            return Ok(LockedPoint {
                beta0_star: beta,
                eps,
                l_value: rep.l,
                lambda: rep.lambda,
                g_norm: vec_norm(&rep.g),
                newton_iterations: 0,
                degenerate: true,
                objective: self.objective,
            });
        }
        let mut iterations = 0;
        let mut rep = self.report(eps, &beta)?;
        while vec_norm(&rep.g) > g_tol {
            if iterations == opts.max_newton {
                return Err(Error::NoConvergence { iterations, residual: vec_norm(&rep.g) });
            }
            let h = Matrix::from_fn(r, r, |i, j| rep.hess_l[i][j]);
            let g = DVector::from_column_slice(&rep.g);
            let svd = h.svd(true, true);
            let cutoff = 1e-12 * svd.singular_values.max();
            let delta = svd.solve(&g, cutoff).map_err(|e| Error::Invalid(e.to_string()))?;
            // damp steps longer than a grid cell
            let len = delta.norm();
            let factor = if len > step { step / len } else { 1.0 };
            for j in 0..r {
                beta[j] -= factor * delta[j];
            }
            wrap(&mut beta);
            rep = self.report(eps, &beta)?;
            iterations += 1;
        }
        Ok(LockedPoint {
            beta0_star: beta,
            eps,
            l_value: rep.l,
            lambda: rep.lambda.clone(),
            g_norm: vec_norm(&rep.g),
            newton_iterations: iterations,
            degenerate: false,
            objective: self.objective,
        })
    }

    /// Phase-locking checks at the maximiser of the auxiliary Lagrangian.
    pub fn phase_lock_verify(&self, eps: f64, opts: &SolveOptions, tol: f64) -> Result<PhaseLockReport> {
        let aux = Variational { objective: Objective::Auxiliary, ..*self };
        let locked = aux.solve_bifurcation(eps, opts)?;
        let beta = locked.beta0_star.clone();
        let p_max = self.max_scale;
        let aux_exp = Expansion::auxiliary(self.problem, self.pool, eps, &beta)?;
        let plain_exp = Expansion::new(self.problem, self.pool, eps, &beta)?;

        let mut xi_values = Vec::new();
        for n in 0..=p_max {
            let (_, xi) = aux_exp.aux_self_energy(n, 1.0)?;
            xi_values.push((n, xi));
            let alpha = self.problem.sequences.alpha_at_scale(n as usize + 1);
            let radius = alpha * alpha;
            for j in 0..beta.len() {
                for sign in [-1.0, 1.0] {
                    let mut b = beta.clone();
                    b[j] += sign * radius;
                    let nearby = Expansion::auxiliary(self.problem, self.pool, eps, &b)?;
                    xi_values.push((n, nearby.aux_self_energy(n, 1.0)?.1));
                }
            }
        }
        let cutoffs_ok = xi_values.iter().all(|(_, xi)| *xi == 1.0);

        let mut self_energy_gap = 0.0f64;
        let grid = plain_exp.divisor_grid();
        let samples: Vec<f64> = grid.iter().copied().step_by((grid.len() / 12).max(1)).chain([0.0]).collect();
        for n in -1..=p_max {
            for &x in &samples {
                let (mbar, _) = aux_exp.aux_self_energy(n, x)?;
                let m = plain_exp.plain_chain(n, x)?;
                self_energy_gap = self_energy_gap.max((mbar - m).norm());
            }
        }

        let b_aux = aux_exp.solution(p_max)?;
        let b_plain = plain_exp.solution(p_max)?;
        let mut keys: Vec<&Mode> = b_aux.coeffs.keys().chain(b_plain.coeffs.keys()).collect();
        keys.sort();
        keys.dedup();
        let mut coefficient_gap = 0.0f64;
        for nu in keys {
            for j in 0..beta.len() {
                coefficient_gap = coefficient_gap.max((b_aux.coeff(nu, j) - b_plain.coeff(nu, j)).abs());
            }
        }
        Ok(PhaseLockReport {
            locked,
            xi_values,
            cutoffs_ok,
            self_energy_gap,
            self_energy_ok: self_energy_gap <= tol,
            coefficient_gap,
            coefficients_ok: coefficient_gap <= tol,
        })
    }
}

/// Outcome of [`Variational::phase_lock_verify`].
#[derive(Debug, Clone, Serialize)]
pub struct PhaseLockReport {
    pub locked: LockedPoint,
    /// `(n, xi_n)` at the locked point and at nearby samples.
    pub xi_values: Vec<(i32, f64)>,
    pub cutoffs_ok: bool,
    pub self_energy_gap: f64,
    pub self_energy_ok: bool,
    pub coefficient_gap: f64,
    pub coefficients_ok: bool,
}

impl PhaseLockReport {
    pub fn passes(&self) -> bool {
        self.cutoffs_ok && self.self_energy_ok && self.coefficients_ok
    }
}

/// Coefficient table of a solution keyed by `(nu, j)`.
pub fn coefficient_table(sol: &ResummedSolution) -> BTreeMap<(Mode, usize), f64> {
    let mut out = BTreeMap::new();
    for (m, v) in &sol.coeffs {
        for (j, c) in v.iter().enumerate() {
            out.insert((*m, j), *c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::problem::Truncation;

    fn setup(model: crate::forcing::ForcingModel, k: usize, p: i32) -> (Problem, TreePool) {
        let t = Truncation { max_order: k, p_max: p, ..Default::default() };
        let prob = Problem::new(models::golden(), model, t).unwrap();
        let pool = TreePool::build(&prob).unwrap();
        (prob, pool)
    }

    #[test]
    fn cosine_rotator_closed_form() {
        let (prob, pool) = setup(models::cosine_rotator(), 3, 1);
        let v = Variational::new(&prob, &pool, Objective::Plain);
        let eps = 1e-2;
        let lp = v.solve_bifurcation(eps, &SolveOptions { grid: 16, ..Default::default() }).unwrap();
        assert!(lp.beta0_star[0].abs() < 1e-12);
        assert!((lp.l_value - eps).abs() < 1e-12);
        assert!((lp.lambda[0] + eps).abs() < 1e-12);
        let sol = v.solution(eps, &lp.beta0_star).unwrap();
        assert!(sol.sup_norm() < 1e-12);
    }

    #[test]
    fn zero_coupling_is_degenerate() {
        let (prob, pool) = setup(models::single_mode(), 2, 1);
        let v = Variational::new(&prob, &pool, Objective::Plain);
        let rep = v.report(0.0, &[0.3]).unwrap();
        assert_eq!(rep.l, 0.0);
        assert_eq!(rep.g, vec![0.0]);
        let lp = v.solve_bifurcation(0.0, &SolveOptions { grid: 8, ..Default::default() }).unwrap();
        assert!(lp.degenerate);
    }

    #[test]
    fn lagrangian_is_periodic() {
        let (prob, pool) = setup(models::two_mode_generic(), 3, 1);
        let v = Variational::new(&prob, &pool, Objective::Plain);
        let a = v.lagrangian(1e-3, &[0.7, 1.3]).unwrap();
        let b = v.lagrangian(1e-3, &[0.7 + std::f64::consts::TAU, 1.3 - std::f64::consts::TAU]).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn gradient_and_self_energy_identities() {
        let (prob, pool) = setup(models::two_mode_generic(), 3, 1);
        let v = Variational::new(&prob, &pool, Objective::Plain);
        for n in 0..=1 {
            let gaps = v.identity_checks(1e-3, &[0.7, 1.3], n, 1e-4).unwrap();
            assert!(gaps.self_energy_vs_gradient < 1e-10, "{gaps:?}");
            assert!(gaps.gradient_vs_lagrangian < 1e-10, "{gaps:?}");
        }
    }

    #[test]
    fn first_order_lagrangian_is_the_average() {
        // L = eps f_0(beta0) + O(eps^2)
        let (prob, pool) = setup(models::two_mode_generic(), 1, 0);
        let v = Variational::new(&prob, &pool, Objective::Plain);
        let beta = [0.4f64, -1.1];
        let eps = 1e-6;
        let f0 = 0.3 * beta[1].cos() + 0.2 * beta[0].sin();
        assert!((v.lagrangian(eps, &beta).unwrap() - eps * f0).abs() < 1e2 * eps * eps);
    }
}
