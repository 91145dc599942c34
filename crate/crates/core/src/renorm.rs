//! Self-energies, resummed propagators, tree values and the truncated solution.
//!
//! An [`Expansion`] fixes `(eps, beta0)` and evaluates everything lazily:
//! subtree values, self-energy matrices `M^[q](x)` and propagators are
//! memoised on first use. Memo slots are filled without holding locks during
//! computation, so nested data-parallel evaluation cannot deadlock.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forcing::ForcingAt;
use crate::lattice::Mode;
use crate::par;
use crate::problem::Problem;
use crate::scalefun::cutoff_xi;
use crate::trees::{ClusterShape, LabelledTree, TreePool};
use crate::variational;

type Matrix = DMatrix<f64>;

/// Which self-energies enter the propagators.
#[derive(Clone)]
enum Chain<'p> {
    /// `x^2 - sum_q chi_q(x) M^[q](x)`.
    Plain,
    /// `x^2 - Mbar^[n-1](x) xi_{n-1}`.
    Aux(Arc<AuxChain<'p>>),
}

/// Lazily evaluated resummed expansion at fixed `(eps, beta0)`.
pub struct Expansion<'p> {
    problem: &'p Problem,
    pool: &'p TreePool,
    eps: f64,
    beta0: Vec<f64>,
    at: ForcingAt,
    chain: Chain<'p>,
    values: Vec<OnceLock<Result<Vec<f64>>>>,
    deco_matrices: Vec<OnceLock<Result<Matrix>>>,
    self_energies: Mutex<HashMap<(i32, u64), Result<Matrix>>>,
    propagators: Mutex<HashMap<(i32, u64), Result<Matrix>>>,
}

/// Truncated solution `b^{<=p}` with the averaged vector field from trees.
#[derive(Debug, Clone, Serialize)]
pub struct ResummedSolution {
    pub eps: f64,
    pub beta0: Vec<f64>,
    pub max_order: usize,
    pub max_scale: i32,
    /// `b_{nu}` per component, summed over orders.
    #[serde(serialize_with = "serialize_modes")]
    pub coeffs: BTreeMap<Mode, Vec<f64>>,
    /// `eps^k b^[k]_nu` for `k = 1..=K` (index `k - 1`).
    #[serde(serialize_with = "serialize_orders")]
    pub per_order: Vec<BTreeMap<Mode, Vec<f64>>>,
    /// `sum_k eps^{k+1} G^[k]` from trees with vanishing total momentum.
    pub g_trees: Vec<f64>,
}

fn serialize_modes<S: serde::Serializer>(map: &BTreeMap<Mode, Vec<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(map.len()))?;
    for (m, v) in map {
        seq.serialize_element(&(m.0.to_vec(), v))?;
    }
    seq.end()
}

fn serialize_orders<S: serde::Serializer>(
    maps: &[BTreeMap<Mode, Vec<f64>>],
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(maps.len()))?;
    for map in maps {
        let flat: Vec<(Vec<i32>, &Vec<f64>)> = map.iter().map(|(m, v)| (m.0.to_vec(), v)).collect();
        seq.serialize_element(&flat)?;
    }
    seq.end()
}

impl ResummedSolution {
    pub fn r(&self) -> usize {
        self.beta0.len()
    }

    /// Largest `|b_{nu j}|`.
    pub fn sup_norm(&self) -> f64 {
        self.coeffs.values().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn coeff(&self, nu: &Mode, j: usize) -> f64 {
        self.coeffs.get(nu).map_or(0.0, |v| v[j])
    }
}

/// Outcome of a property-1 scan.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Property1Report {
    /// Smallest `sigma_min(x^2 - M^[n](x)) / x^2` per scale `n`, over the grid points checked.
    pub margins: Vec<(i32, f64)>,
    /// `(n, x, sigma_min)` with `sigma_min < x^2 / 2`, or `NaN` when the chain itself failed.
    pub failures: Vec<(i32, f64, f64)>,
}

impl Property1Report {
    pub fn passes(&self) -> bool {
        self.failures.is_empty()
    }
}

fn smallest_singular_value(a: &Matrix) -> f64 {
    a.clone().singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

fn matrix_from_row_major(r: usize, data: &[f64]) -> Matrix {
    Matrix::from_row_slice(r, r, data)
}

impl<'p> Expansion<'p> {
    /// Expansion with the plain resummed propagators.
    pub fn new(problem: &'p Problem, pool: &'p TreePool, eps: f64, beta0: &[f64]) -> Result<Self> {
        Self::with_chain(problem, pool, eps, beta0, Chain::Plain)
    }

    /// Expansion with the auxiliary (cut-off) propagators.
    pub fn auxiliary(problem: &'p Problem, pool: &'p TreePool, eps: f64, beta0: &[f64]) -> Result<Self> {
        let chain = AuxChain::new(problem, pool, eps, beta0)?;
        Self::with_chain(problem, pool, eps, beta0, Chain::Aux(Arc::new(chain)))
    }

    fn with_chain(problem: &'p Problem, pool: &'p TreePool, eps: f64, beta0: &[f64], chain: Chain<'p>) -> Result<Self> {
        if beta0.len() != problem.r() {
            return Err(Error::Invalid(format!("beta0 has {} components, expected {}", beta0.len(), problem.r())));
        }
        if !eps.is_finite() || beta0.iter().any(|b| !b.is_finite()) {
            return Err(Error::Invalid("eps and beta0 must be finite".into()));
        }
        Ok(Self {
            problem,
            pool,
            eps,
            beta0: beta0.to_vec(),
            at: problem.model.at(beta0),
            chain,
            values: (0..pool.subtrees.len()).map(|_| OnceLock::new()).collect(),
            deco_matrices: (0..pool.decorations.len()).map(|_| OnceLock::new()).collect(),
            self_energies: Mutex::new(HashMap::new()),
            propagators: Mutex::new(HashMap::new()),
        })
    }

    pub fn problem(&self) -> &'p Problem {
        self.problem
    }

    pub fn pool(&self) -> &'p TreePool {
        self.pool
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn beta0(&self) -> &[f64] {
        &self.beta0
    }

    pub fn is_auxiliary(&self) -> bool {
        matches!(self.chain, Chain::Aux(_))
    }

    fn r(&self) -> usize {
        self.problem.r()
    }

    /// `M^[-1] = eps d^2 f_0(beta0)`.
    pub fn scale_minus_one(&self) -> Matrix {
        let r = self.r();
        matrix_from_row_major(r, &self.at.contract_matrix(&Mode::ZERO, &[])) * self.eps
    }

    /// Self-energy `M^[q](x)`: sum over renormalised clusters on scale `q` of order `<= K`.
    pub fn self_energy(&self, q: i32, x: f64) -> Result<Matrix> {
        if q < -1 {
            return Err(Error::ScaleOutOfRange { requested: q, resolved: self.problem.partition.max_scale() });
        }
        if q == -1 {
            return Ok(self.scale_minus_one());
        }
        if q > self.pool.p_max() {
            return Err(Error::ScaleOutOfRange { requested: q, resolved: self.pool.p_max() });
        }
        let key = (q, x.to_bits());
        if let Some(v) = self.self_energies.lock().expect("cache lock").get(&key) {
            return v.clone();
        }
        let value = self.compute_self_energy(q, x);
        self.self_energies.lock().expect("cache lock").entry(key).or_insert(value).clone()
    }

    fn compute_self_energy(&self, q: i32, x: f64) -> Result<Matrix> {
        let r = self.r();
        let shapes: Vec<&ClusterShape> = self.pool.shapes.iter().filter(|s| s.side_max_scale <= q).collect();
        let parts = par::map(&shapes, |shape| self.shape_contribution(shape, q, x));
        let mut total = Matrix::zeros(r, r);
        for part in parts {
            total += part?;
        }
        Ok(total)
    }

    /// Sum over scale assignments of the path lines of one cluster skeleton.
    fn shape_contribution(&self, shape: &ClusterShape, q: i32, x: f64) -> Result<Matrix> {
        let r = self.r();
        let mut total = Matrix::zeros(r, r);
        let divisors: Vec<f64> = shape.offsets.iter().map(|o| self.problem.omega.divisor(o) + x).collect();
        let mut choices = Vec::with_capacity(divisors.len());
        for &dv in &divisors {
            let c = self.problem.partition.scales_up_to(dv, q)?;
            if c.is_empty() {
                return Ok(total);
            }
            choices.push(c);
        }
        let nodes: Vec<Matrix> =
            shape.path.iter().map(|&d| self.decoration_matrix(d as usize)).collect::<Result<_>>()?;
        let weight = self.eps.powi(shape.order as i32);
        let mut index = vec![0usize; choices.len()];
        loop {
            let scales: Vec<i32> = index.iter().zip(&choices).map(|(&i, c)| c[i].0).collect();
            let top = scales.iter().copied().max().unwrap_or(-1).max(shape.side_max_scale);
            if top == q && !self.pool.path_has_subcluster(shape, &scales, q) {
                let mut acc = nodes[0].clone();
                for (i, &s) in scales.iter().enumerate() {
                    acc = acc * self.propagator(s, divisors[i])? * &nodes[i + 1];
                }
                total += acc * weight;
            }
            // odometer over the admissible scales
            let mut k = 0;
            loop {
                if k == index.len() {
                    return Ok(total);
                }
                index[k] += 1;
                if index[k] < choices[k].len() {
                    break;
                }
                index[k] = 0;
                k += 1;
            }
        }
    }

    /// `symmetry * N(mode; side values)` for a decorated path node (row `u`, column `e`).
    fn decoration_matrix(&self, id: usize) -> Result<Matrix> {
        if let Some(v) = self.deco_matrices[id].get() {
            return v.clone();
        }
        let value = (|| {
            let deco = &self.pool.decorations[id];
            let sides: Vec<Vec<f64>> = deco.side.iter().map(|&c| self.subtree_value(c)).collect::<Result<_>>()?;
            let legs: Vec<&[f64]> = sides.iter().map(|v| v.as_slice()).collect();
            Ok(matrix_from_row_major(self.r(), &self.at.contract_matrix(&deco.mode, &legs)) * deco.symmetry)
        })();
        let _ = self.deco_matrices[id].set(value.clone());
        value
    }

    /// `script M^[n](x)`: the plain chain `sum_{q=-1}^{n} chi_q(x) M^[q](x)`.
    pub fn plain_chain(&self, n: i32, x: f64) -> Result<Matrix> {
        let mut total = self.scale_minus_one();
        for q in 0..=n {
            let chi = self.problem.partition.chi_n(q, x)?;
            if chi != 0.0 {
                total += self.self_energy(q, x)? * chi;
            }
        }
        Ok(total)
    }

    /// Matrix subtracted from `x^2` in the propagator of scale `n`.
    fn chain_matrix(&self, n: i32, x: f64) -> Result<Matrix> {
        match &self.chain {
            Chain::Plain => self.plain_chain(n - 1, x),
            Chain::Aux(aux) => aux.cut_matrix(n - 1, x),
        }
    }

    /// Propagator `G^[n](x) = Psi_n(x) (x^2 - M)^{-1}`.
    pub fn propagator(&self, n: i32, x: f64) -> Result<Matrix> {
        let key = (n, x.to_bits());
        if let Some(v) = self.propagators.lock().expect("cache lock").get(&key) {
            return v.clone();
        }
        let value = self.compute_propagator(n, x);
        self.propagators.lock().expect("cache lock").entry(key).or_insert(value).clone()
    }

    fn compute_propagator(&self, n: i32, x: f64) -> Result<Matrix> {
        let r = self.r();
        let psi = self.problem.partition.psi_n(n, x)?;
        if psi == 0.0 {
            return Ok(Matrix::zeros(r, r));
        }
        let a = Matrix::identity(r, r) * (x * x) - self.chain_matrix(n, x)?;
        let sigma = smallest_singular_value(&a);
        if !(sigma >= 0.5 * x * x) {
            return Err(Error::NearSingular { scale: n, x, sigma });
        }
        let inv = a.try_inverse().ok_or(Error::NearSingular { scale: n, x, sigma })?;
        Ok(inv * psi)
    }

    /// Value of a pool subtree without the `eps^k` prefactor: the vector on its outgoing line.
    pub fn subtree_value(&self, id: u32) -> Result<Vec<f64>> {
        let slot = &self.values[id as usize];
        if let Some(v) = slot.get() {
            return v.clone();
        }
        let value = self.compute_subtree_value(id);
        let _ = slot.set(value.clone());
        value
    }

    fn compute_subtree_value(&self, id: u32) -> Result<Vec<f64>> {
        let s = &self.pool.subtrees[id as usize];
        let kids: Vec<Vec<f64>> = s.children.iter().map(|&c| self.subtree_value(c)).collect::<Result<_>>()?;
        let legs: Vec<&[f64]> = kids.iter().map(|v| v.as_slice()).collect();
        let w = nalgebra::DVector::from_vec(self.at.contract(&s.mode, &legs)) * s.symmetry;
        let g = self.propagator(s.scale, s.divisor)?;
        Ok((g * w).as_slice().to_vec())
    }

    /// Evaluate all subtree values, order by order, in parallel within each order.
    pub fn evaluate_all(&self) -> Result<()> {
        for k in 1..=self.pool.max_order() {
            let ids: Vec<u32> = self.pool.of_order(k).map(|i| i as u32).collect();
            for v in par::map(&ids, |&id| self.subtree_value(id)) {
                v?;
            }
        }
        Ok(())
    }

    /// `b^{<=n}` and the tree form of the averaged vector field, lines restricted to scales `<= n`.
    pub fn solution(&self, max_scale: i32) -> Result<ResummedSolution> {
        self.evaluate_all()?;
        let r = self.r();
        let k_max = self.pool.max_order();
        let mut per_order = vec![BTreeMap::<Mode, Vec<f64>>::new(); k_max];
        let mut coeffs = BTreeMap::<Mode, Vec<f64>>::new();
        for (id, s) in self.pool.subtrees.iter().enumerate() {
            if s.max_scale > max_scale {
                continue;
            }
            let v = self.subtree_value(id as u32)?;
            let w = self.eps.powi(s.order as i32);
            let slot = per_order[s.order as usize - 1].entry(s.momentum).or_insert_with(|| vec![0.0; r]);
            for (a, b) in slot.iter_mut().zip(&v) {
                *a += w * b;
            }
        }
        for map in &per_order {
            for (m, v) in map {
                let slot = coeffs.entry(*m).or_insert_with(|| vec![0.0; r]);
                for (a, b) in slot.iter_mut().zip(v) {
                    *a += b;
                }
            }
        }
        let mut g_trees = vec![0.0; r];
        for &z in &self.pool.zero_trees {
            let deco = &self.pool.decorations[z as usize];
            if deco.side_max_scale > max_scale {
                continue;
            }
            let sides: Vec<Vec<f64>> = deco.side.iter().map(|&c| self.subtree_value(c)).collect::<Result<_>>()?;
            let legs: Vec<&[f64]> = sides.iter().map(|v| v.as_slice()).collect();
            let w = self.at.contract(&deco.mode, &legs);
            let weight = self.eps.powi(deco.order as i32) * deco.symmetry;
            for (a, b) in g_trees.iter_mut().zip(&w) {
                *a += weight * b;
            }
        }
        Ok(ResummedSolution {
            eps: self.eps,
            beta0: self.beta0.clone(),
            max_order: k_max,
            max_scale,
            coeffs,
            per_order,
            g_trees,
        })
    }

    /// Value of an explicit labelled tree: product of node factors and propagator entries.
    pub fn tree_value(&self, tree: &LabelledTree) -> Result<f64> {
        let model = &self.problem.model;
        let mut value = 1.0;
        for v in 0..tree.order() {
            let labels = tree.labels(v);
            value *= model.node_factor(&tree.modes[v], labels.u, &labels.e_list, &self.beta0);
            let line = &tree.lines[v];
            if line.scale == -1 {
                if line.e != line.u {
                    return Ok(0.0);
                }
            } else {
                let x = self.problem.omega.divisor(&line.momentum);
                value *= self.propagator(line.scale, x)?[(line.e, line.u)];
            }
        }
        Ok(value)
    }

    /// Property 1-`p` on `x_grid`: `sigma_min(x^2 - script M^[n](x)) >= x^2 / 2` for `n < p`
    /// wherever `Psi_{n+1}(x) > 0`.
    pub fn property1_check(&self, p: i32, x_grid: &[f64]) -> Property1Report {
        let mut report = Property1Report::default();
        let r = self.r();
        for n in -1..p {
            let mut worst = f64::INFINITY;
            for &x in x_grid {
                match self.problem.partition.psi_n(n + 1, x) {
                    Ok(psi) if psi > 0.0 => {}
                    _ => continue,
                }
                match self.plain_chain(n, x) {
                    Ok(m) => {
                        let sigma = smallest_singular_value(&(Matrix::identity(r, r) * (x * x) - m));
                        worst = worst.min(sigma / (x * x));
                        if !(sigma >= 0.5 * x * x) {
                            report.failures.push((n, x, sigma));
                        }
                    }
                    Err(_) => report.failures.push((n, x, f64::NAN)),
                }
            }
            if worst.is_finite() {
                report.margins.push((n, worst));
            }
        }
        report
    }

    /// Divisors of all pool lines: the grid on which propagators are evaluated.
    pub fn divisor_grid(&self) -> Vec<f64> {
        let mut xs: Vec<f64> = self.pool.subtrees.iter().map(|s| s.divisor).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs
    }

    /// Auxiliary `Mbar^[n](x)` and `xi_n`, if this is an auxiliary expansion.
    pub fn aux_self_energy(&self, n: i32, x: f64) -> Result<(Matrix, f64)> {
        match &self.chain {
            Chain::Aux(aux) => aux.self_energy(n, x),
            Chain::Plain => Err(Error::Invalid("plain expansion has no auxiliary self-energies".into())),
        }
    }
}

/// Step of the central differences in `beta0` used for `d b / d beta0`.
pub const BETA_STEP: f64 = 1e-5;

/// Data of the auxiliary construction at one scale.
#[derive(Debug, Clone)]
struct AuxLevel {
    hessian: Matrix,
    xi: f64,
    correction_active: bool,
}

/// Auxiliary self-energies `Mbar^[n] = d^2 Lbar^[n] + R^[n](x)` with cutoffs `xi_n`.
pub struct AuxChain<'p> {
    problem: &'p Problem,
    pool: &'p TreePool,
    eps: f64,
    beta0: Vec<f64>,
    plain: Expansion<'p>,
    levels: Mutex<HashMap<i32, Result<Arc<AuxLevel>>>>,
    shifted: Mutex<HashMap<(usize, bool), Arc<Expansion<'p>>>>,
}

impl<'p> AuxChain<'p> {
    fn new(problem: &'p Problem, pool: &'p TreePool, eps: f64, beta0: &[f64]) -> Result<Self> {
        Ok(Self {
            problem,
            pool,
            eps,
            beta0: beta0.to_vec(),
            plain: Expansion::new(problem, pool, eps, beta0)?,
            levels: Mutex::new(HashMap::new()),
            shifted: Mutex::new(HashMap::new()),
        })
    }

    fn shifted(&self, i: usize, up: bool) -> Result<Arc<Expansion<'p>>> {
        if let Some(e) = self.shifted.lock().expect("cache lock").get(&(i, up)) {
            return Ok(e.clone());
        }
        let mut b = self.beta0.clone();
        b[i] += if up { BETA_STEP } else { -BETA_STEP };
        let e = Arc::new(Expansion::auxiliary(self.problem, self.pool, self.eps, &b)?);
        Ok(self.shifted.lock().expect("cache lock").entry((i, up)).or_insert(e).clone())
    }

    fn level(&self, n: i32) -> Result<Arc<AuxLevel>> {
        if let Some(v) = self.levels.lock().expect("cache lock").get(&n) {
            return v.clone();
        }
        let value = self.compute_level(n).map(Arc::new);
        self.levels.lock().expect("cache lock").entry(n).or_insert(value).clone()
    }

    fn compute_level(&self, n: i32) -> Result<AuxLevel> {
        let r = self.problem.r();
        let center = Expansion::auxiliary(self.problem, self.pool, self.eps, &self.beta0)?.solution(n)?;
        let mut db = Vec::with_capacity(r);
        for i in 0..r {
            let up = self.shifted(i, true)?.solution(n)?;
            let down = self.shifted(i, false)?.solution(n)?;
            db.push(variational::coefficient_difference(&up, &down, 2.0 * BETA_STEP));
        }
        let avg = variational::averages(self.problem, &center, Some(&db))?;
        let hessian = avg.hessian.expect("requested");
        let lambda: Vec<f64> = hessian.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        let xi = cutoff_xi(&lambda, self.problem.cutoff(n)?.as_ref());
        let grid = self.plain.divisor_grid();
        let correction_active = self.plain.property1_check(n + 1, &grid).passes();
        Ok(AuxLevel { hessian, xi, correction_active })
    }

    /// `Mbar^[n](x)` and `xi_n`.
    pub fn self_energy(&self, n: i32, x: f64) -> Result<(Matrix, f64)> {
        if n < 0 {
            return Ok((self.plain.scale_minus_one(), 1.0));
        }
        let level = self.level(n)?;
        let mut m = level.hessian.clone();
        if level.correction_active {
            if let (Ok(a), Ok(b)) = (self.plain.plain_chain(n, x), self.plain.plain_chain(n, 0.0)) {
                m += a - b;
            }
        }
        Ok((m, level.xi))
    }

    /// `Mbar^[n](x) xi_n`.
    fn cut_matrix(&self, n: i32, x: f64) -> Result<Matrix> {
        let (m, xi) = self.self_energy(n, x)?;
        Ok(m * xi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::problem::Truncation;

    fn problem(model: crate::forcing::ForcingModel, k: usize, p_max: i32) -> Problem {
        let t = Truncation { max_order: k, p_max, m_max: 10, ..Default::default() };
        Problem::new(models::golden(), model, t).unwrap()
    }

    #[test]
    fn closed_form_single_node() {
        let p = problem(models::cosine_rotator(), 1, 0);
        let pool = TreePool::build(&p).unwrap();
        let eps = 1e-2;
        let e = Expansion::new(&p, &pool, eps, &[0.0]).unwrap();
        assert!((e.scale_minus_one()[(0, 0)] + eps).abs() < 1e-16);
        for x in [0.3, 0.09, -0.5] {
            let g = e.propagator(0, x).unwrap()[(0, 0)];
            let psi = p.partition.psi_n(0, x).unwrap();
            assert!((g - psi / (x * x + eps)).abs() < 1e-14);
        }
        let zero = Expansion::new(&p, &pool, 0.0, &[0.0]).unwrap();
        assert!((zero.propagator(0, 0.3).unwrap()[(0, 0)] - 1.0 / 0.09).abs() < 1e-12);
        // psi = 0 gives the zero matrix
        assert_eq!(e.propagator(1, 0.5).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn beta_independent_forcing_gives_zero() {
        let model = crate::forcing::ForcingModel::validated(2, 1, models::cos_cos(&[1, 0], &[0], 1.0)).unwrap();
        let p = problem(model, 3, 0);
        let pool = TreePool::build(&p).unwrap();
        let e = Expansion::new(&p, &pool, 0.1, &[0.2]).unwrap();
        assert_eq!(e.solution(0).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn vanishes_at_zero_coupling() {
        let p = problem(models::two_mode_generic(), 3, 1);
        let pool = TreePool::build(&p).unwrap();
        let e = Expansion::new(&p, &pool, 0.0, &[0.3, 1.0]).unwrap();
        let s = e.solution(1).unwrap();
        assert_eq!(s.sup_norm(), 0.0);
        assert!(s.g_trees.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn single_mode_first_order() {
        // b_{+-(1,0)} = Psi_0(x) f'_nu(beta0) / (x^2 + eps cos beta0) with f_0 = 0 ... here f_0 = 0
        let p = problem(models::single_mode(), 1, 0);
        let pool = TreePool::build(&p).unwrap();
        let (eps, b0) = (1e-3, 0.7);
        let s = Expansion::new(&p, &pool, eps, &[b0]).unwrap().solution(0).unwrap();
        let nu = Mode::new(&[1, 0]);
        // f_nu(beta) = cos(beta) / 2, node factor d_beta f_nu = -sin(beta0) / 2, M^[-1] = 0
        let expected = eps * (-b0.sin() / 2.0) / 1.0;
        assert!((s.coeff(&nu, 0) - expected).abs() < 1e-16);
        assert_eq!(s.coeff(&nu, 0), s.coeff(&-nu, 0));
    }

    #[test]
    fn q0_self_energy_vanishes_at_first_order() {
        let p = problem(models::two_mode_generic(), 1, 1);
        let pool = TreePool::build(&p).unwrap();
        let e = Expansion::new(&p, &pool, 0.01, &[0.3, 0.2]).unwrap();
        assert_eq!(e.self_energy(0, 0.01).unwrap().abs().max(), 0.0);
    }

    #[test]
    fn labelled_trees_reproduce_contraction() {
        let p = problem(models::two_mode_generic(), 3, 0);
        let pool = TreePool::build(&p).unwrap();
        let (eps, beta0) = (2e-3, [0.4, -0.9]);
        let e = Expansion::new(&p, &pool, eps, &beta0).unwrap();
        let s = e.solution(0).unwrap();
        for k in 1..=3 {
            for (nu, v) in &s.per_order[k - 1] {
                for j in 0..2 {
                    let mut total = 0.0;
                    for t in pool.enumerate_trees(&p, k, *nu, j, 1_000_000).unwrap() {
                        total += t.planar_orderings() * e.tree_value(&t).unwrap();
                    }
                    let expected = v[j] / eps.powi(k as i32);
                    assert!((total - expected).abs() <= 1e-12 * expected.abs().max(1.0), "{nu:?} {j}");
                }
            }
        }
        for j in 0..2 {
            let mut total = 0.0;
            for k in 1..=3 {
                for t in pool.enumerate_trees(&p, k, Mode::ZERO, j, 1_000_000).unwrap() {
                    total += eps.powi(k as i32) * t.planar_orderings() * e.tree_value(&t).unwrap();
                }
            }
            assert!((total - s.g_trees[j]).abs() < 1e-15, "{total} vs {}", s.g_trees[j]);
        }
    }

    #[test]
    fn even_coefficients() {
        let p = problem(models::two_mode_generic(), 4, 1);
        let pool = TreePool::build(&p).unwrap();
        let s = Expansion::new(&p, &pool, 1e-3, &[0.4, -0.9]).unwrap().solution(1).unwrap();
        for (nu, v) in &s.coeffs {
            assert!(!nu.is_zero());
            for j in 0..2 {
                assert!((v[j] - s.coeff(&-*nu, j)).abs() <= 1e-14 * v[j].abs().max(1e-300));
            }
        }
    }
}
