//! Renormalised trees, self-energy cluster skeletons and the counting checks.
//!
//! Trees are stored canonically in a [`TreePool`]: each entry is a node with a
//! multiset of child entries (sorted pool ids) and the scale of its outgoing
//! line. Component labels are not stored; they are summed by contraction when
//! values are computed. Every canonical entry stands for all planar drawings of
//! the same tree, which is why values carry the weight `1 / prod(mult!)` of
//! repeated identical children at each node (see [`Subtree::symmetry`]).

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::Mode;
use crate::problem::Problem;

/// Divisors below this are treated as exact resonances.
pub const RESONANCE_TOL: f64 = 1e-13;

/// Canonical subtree: a node with its entering subtrees and outgoing line.
#[derive(Debug, Clone)]
pub struct Subtree {
    pub mode: Mode,
    /// Pool ids of the entering subtrees, non-decreasing.
    pub children: Vec<u32>,
    /// Scale of the outgoing line.
    pub scale: i32,
    pub order: u32,
    pub momentum: Mode,
    pub divisor: f64,
    /// `Psi_scale(divisor)`.
    pub psi: f64,
    /// Largest scale over all lines, the outgoing one included.
    pub max_scale: i32,
    /// `K = sum |nu_v|` over the nodes.
    pub mode_l1: u32,
    /// `1 / prod(mult!)` over groups of identical children at the top node.
    pub symmetry: f64,
    /// Number of lines on each scale `0..=p_max`, the outgoing one included.
    pub lines_by_scale: Vec<u16>,
}

/// Node carrying side subtrees, used for zero-momentum trees and cluster paths.
#[derive(Debug, Clone)]
pub struct Decoration {
    pub mode: Mode,
    pub side: Vec<u32>,
    pub order: u32,
    /// Node mode plus the momenta of the side subtrees.
    pub mode_sum: Mode,
    /// Largest scale among side subtrees, `-1` if there are none.
    pub side_max_scale: i32,
    pub mode_l1: u32,
    pub symmetry: f64,
}

/// Skeleton of a self-energy cluster: a path of decorated nodes from the exit
/// node (index 0) to the entry node (last), which also receives the entering line.
#[derive(Debug, Clone)]
pub struct ClusterShape {
    pub path: Vec<u32>,
    /// Momentum of path line `i` (from node `i + 1` to node `i`) minus the entering momentum.
    pub offsets: Vec<Mode>,
    pub order: u32,
    pub side_max_scale: i32,
    pub mode_l1: u32,
}

/// All canonical objects up to the truncation order.
#[derive(Debug, Clone)]
pub struct TreePool {
    pub subtrees: Vec<Subtree>,
    /// `order_start[k]` is the first id of order `k` (index 0 unused).
    order_start: Vec<usize>,
    pub decorations: Vec<Decoration>,
    /// Decorations with zero mode sum: trees with vanishing total momentum.
    pub zero_trees: Vec<u32>,
    pub shapes: Vec<ClusterShape>,
    p_max: i32,
}

fn symmetry_weight(children: &[u32]) -> f64 {
    let mut weight = 1.0;
    let mut run = 1usize;
    for w in children.windows(2) {
        if w[0] == w[1] {
            run += 1;
            weight /= run as f64;
        } else {
            run = 1;
        }
    }
    weight
}

/// Visit every non-decreasing multiset of ids with total order `target`.
fn for_each_multiset(
    pool: &[Subtree],
    order_start: &[usize],
    target: u32,
    min_id: usize,
    current: &mut Vec<u32>,
    visit: &mut dyn FnMut(&[u32]) -> Result<()>,
) -> Result<()> {
    if target == 0 {
        return visit(current);
    }
    let end = order_start[(target as usize + 1).min(order_start.len() - 1)];
    for id in min_id..end {
        let o = pool[id].order;
        if o > target {
            break;
        }
        current.push(id as u32);
        for_each_multiset(pool, order_start, target - o, id, current, visit)?;
        current.pop();
    }
    Ok(())
}

/// Aggregate data of a connected component of lines with scale `<= q`.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Component {
    pub entering: u32,
    pub mode_sum: Mode,
    pub has_scale: bool,
}

impl TreePool {
    /// Walk the component below a node through its children `children`.
    pub(crate) fn absorb_children(&self, children: &[u32], q: i32, acc: &mut Component) {
        for &c in children {
            let sub = &self.subtrees[c as usize];
            if sub.scale <= q {
                acc.has_scale |= sub.scale == q;
                acc.mode_sum += sub.mode;
                self.absorb_children(&sub.children, q, acc);
            } else {
                acc.entering += 1;
            }
            if acc.entering > 1 {
                return;
            }
        }
    }

    /// Whether a node with `mode` and `children` and outgoing scale `s` closes a self-energy cluster.
    fn closes_self_energy(&self, mode: Mode, children: &[u32], s: i32) -> bool {
        if mode.is_zero() && children.len() == 1 {
            return true;
        }
        for q in 0..s {
            let mut acc = Component { mode_sum: mode, ..Default::default() };
            self.absorb_children(children, q, &mut acc);
            if acc.entering == 1 && acc.mode_sum.is_zero() && acc.has_scale {
                return true;
            }
        }
        false
    }

    /// Generate every renormalised canonical subtree with lines on scales `<= p_max`.
    pub fn build(problem: &Problem) -> Result<Self> {
        let k_max = problem.max_order() as u32;
        let p_max = problem.p_max();
        let cap = problem.truncation.max_count;
        let alphabet = problem.model.modes();
        let mut pool = TreePool {
            subtrees: Vec::new(),
            order_start: vec![0, 0],
            decorations: Vec::new(),
            zero_trees: Vec::new(),
            shapes: Vec::new(),
            p_max,
        };
        for k in 1..=k_max {
            let mut fresh: Vec<Subtree> = Vec::new();
            for &mode in &alphabet {
                let mut current = Vec::new();
                let pool_ref = &pool;
                for_each_multiset(&pool_ref.subtrees, &pool_ref.order_start, k - 1, 0, &mut current, &mut |children| {
                    let momentum =
                        children.iter().fold(mode, |m, &c| m + pool_ref.subtrees[c as usize].momentum);
                    if momentum.is_zero() {
                        return Ok(());
                    }
                    let divisor = problem.omega.divisor(&momentum);
                    if divisor.abs() < RESONANCE_TOL {
                        return Err(Error::Resonance { nu: momentum.to_vec(problem.d()), divisor: divisor.abs() });
                    }
                    for (s, psi) in problem.partition.scales_up_to(divisor, p_max)? {
                        if pool_ref.closes_self_energy(mode, children, s) {
                            continue;
                        }
                        let mut lines_by_scale = vec![0u16; p_max as usize + 1];
                        lines_by_scale[s as usize] += 1;
                        let mut max_scale = s;
                        let mut mode_l1 = mode.l1();
                        for &c in children {
                            let sub = &pool_ref.subtrees[c as usize];
                            for (a, b) in lines_by_scale.iter_mut().zip(&sub.lines_by_scale) {
                                *a += b;
                            }
                            max_scale = max_scale.max(sub.max_scale);
                            mode_l1 += sub.mode_l1;
                        }
                        fresh.push(Subtree {
                            mode,
                            children: children.to_vec(),
                            scale: s,
                            order: k,
                            momentum,
                            divisor,
                            psi,
                            max_scale,
                            mode_l1,
                            symmetry: symmetry_weight(children),
                            lines_by_scale,
                        });
                    }
                    if pool_ref.subtrees.len() + fresh.len() > cap {
                        return Err(Error::Budget(format!("more than {cap} subtrees at order {k}")));
                    }
                    Ok(())
                })?;
            }
            pool.subtrees.extend(fresh);
            pool.order_start.push(pool.subtrees.len());
        }
        pool.build_decorations(problem, &alphabet)?;
        pool.build_shapes(problem)?;
        Ok(pool)
    }

    fn build_decorations(&mut self, problem: &Problem, alphabet: &[Mode]) -> Result<()> {
        let k_max = problem.max_order() as u32;
        let cap = problem.truncation.max_count;
        let mut decorations = Vec::new();
        for k in 1..=k_max {
            for &mode in alphabet {
                let mut current = Vec::new();
                let pool = &self.subtrees;
                for_each_multiset(pool, &self.order_start, k - 1, 0, &mut current, &mut |side| {
                    let mode_sum = side.iter().fold(mode, |m, &c| m + pool[c as usize].momentum);
                    decorations.push(Decoration {
                        mode,
                        side: side.to_vec(),
                        order: k,
                        mode_sum,
                        side_max_scale: side.iter().map(|&c| pool[c as usize].max_scale).max().unwrap_or(-1),
                        mode_l1: mode.l1() + side.iter().map(|&c| pool[c as usize].mode_l1).sum::<u32>(),
                        symmetry: symmetry_weight(side),
                    });
                    if decorations.len() > cap {
                        return Err(Error::Budget(format!("more than {cap} decorated nodes")));
                    }
                    Ok(())
                })?;
            }
        }
        self.zero_trees =
            (0..decorations.len() as u32).filter(|&i| decorations[i as usize].mode_sum.is_zero()).collect();
        self.decorations = decorations;
        Ok(())
    }

    fn build_shapes(&mut self, problem: &Problem) -> Result<()> {
        let k_max = problem.max_order() as u32;
        let cap = problem.truncation.max_count;
        let max_norm = problem.model.max_mode_norm();
        // a zero-mode node with nothing attached but the path forms a scale -1 cluster
        let usable: Vec<u32> = (0..self.decorations.len() as u32)
            .filter(|&i| {
                let d = &self.decorations[i as usize];
                !(d.mode.is_zero() && d.side.is_empty())
            })
            .collect();
        let mut by_order: Vec<Vec<u32>> = vec![Vec::new(); k_max as usize + 1];
        for &i in &usable {
            by_order[self.decorations[i as usize].order as usize].push(i);
        }
        let mut shapes = Vec::new();
        let mut path = Vec::new();
        self.extend_path(&by_order, k_max, max_norm, Mode::ZERO, &mut path, &mut shapes, cap)?;
        self.shapes = shapes;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn extend_path(
        &self,
        by_order: &[Vec<u32>],
        budget: u32,
        max_norm: u32,
        sum: Mode,
        path: &mut Vec<u32>,
        out: &mut Vec<ClusterShape>,
        cap: usize,
    ) -> Result<()> {
        if !path.is_empty() && sum.is_zero() {
            out.push(self.make_shape(path));
            if out.len() > cap {
                return Err(Error::Budget(format!("more than {cap} cluster skeletons")));
            }
        }
        if budget == 0 {
            return Ok(());
        }
        for (o, ids) in by_order.iter().enumerate().take(budget as usize + 1).skip(1) {
            for &i in ids {
                let next = sum + self.decorations[i as usize].mode_sum;
                let rest = budget - o as u32;
                if next.l1() > rest * max_norm {
                    continue;
                }
                path.push(i);
                self.extend_path(by_order, rest, max_norm, next, path, out, cap)?;
                path.pop();
            }
        }
        Ok(())
    }

    fn make_shape(&self, path: &[u32]) -> ClusterShape {
        let decos: Vec<&Decoration> = path.iter().map(|&i| &self.decorations[i as usize]).collect();
        let mut offsets = vec![Mode::ZERO; path.len() - 1];
        let mut acc = Mode::ZERO;
        for i in (0..path.len() - 1).rev() {
            acc += decos[i + 1].mode_sum;
            offsets[i] = acc;
        }
        ClusterShape {
            path: path.to_vec(),
            offsets,
            order: decos.iter().map(|d| d.order).sum(),
            side_max_scale: decos.iter().map(|d| d.side_max_scale).max().unwrap_or(-1),
            mode_l1: decos.iter().map(|d| d.mode_l1).sum(),
        }
    }

    /// Whether some path node of `shape` exits a self-energy sub-cluster.
    ///
    /// `path_scales[i]` is the scale of path line `i`; the cluster itself has scale `q`.
    pub fn path_has_subcluster(&self, shape: &ClusterShape, path_scales: &[i32], q: i32) -> bool {
        let n = shape.path.len();
        for i in 0..n {
            let top = if i == 0 { q } else { path_scales[i - 1] };
            for qq in 0..top {
                let mut acc = Component::default();
                let mut j = i;
                loop {
                    let deco = &self.decorations[shape.path[j] as usize];
                    acc.mode_sum += deco.mode;
                    self.absorb_children(&deco.side, qq, &mut acc);
                    if j + 1 == n {
                        acc.entering += 1;
                        break;
                    }
                    if path_scales[j] <= qq {
                        acc.has_scale |= path_scales[j] == qq;
                        j += 1;
                    } else {
                        acc.entering += 1;
                        break;
                    }
                }
                if acc.entering == 1 && acc.mode_sum.is_zero() && acc.has_scale {
                    return true;
                }
            }
        }
        false
    }

    pub fn p_max(&self) -> i32 {
        self.p_max
    }

    /// Ids of subtrees of order `k`.
    pub fn of_order(&self, k: usize) -> std::ops::Range<usize> {
        if k == 0 || k + 1 >= self.order_start.len() {
            return 0..0;
        }
        self.order_start[k]..self.order_start[k + 1]
    }

    pub fn max_order(&self) -> usize {
        self.order_start.len() - 2
    }

    /// Structured text form `mode@scale[children]` of a subtree.
    pub fn encode(&self, id: u32, d: usize) -> String {
        let mut out = String::new();
        self.encode_into(id, d, &mut out);
        out
    }

    fn encode_into(&self, id: u32, d: usize, out: &mut String) {
        let s = &self.subtrees[id as usize];
        let _ = write!(out, "{:?}@{}", s.mode.to_vec(d), s.scale);
        if !s.children.is_empty() {
            out.push('[');
            for (i, &c) in s.children.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                self.encode_into(c, d, out);
            }
            out.push(']');
        }
    }

    /// Counting check `N_n <= 2^{2 - m_n} K` on every subtree viewed as a tree.
    pub fn siegel_bryuno_trees(&self, problem: &Problem) -> SiegelBryunoReport {
        let mut report = SiegelBryunoReport::default();
        for (id, s) in self.subtrees.iter().enumerate() {
            report.checked += 1;
            let k = s.mode_l1 as f64;
            let mut above = 0u32;
            for n in (0..=self.p_max).rev() {
                above += s.lines_by_scale[n as usize] as u32;
                let bound = 2f64.powi(2 - problem.sequences.m[n as usize] as i32) * k;
                if above as f64 > bound {
                    report.violations.push(format!(
                        "tree {}: N_{n} = {above} > {bound}",
                        self.encode(id as u32, problem.d())
                    ));
                }
            }
        }
        report
    }

    /// Counting check on the cluster skeletons: for every cluster scale `q`, every entering
    /// momentum on a scale above `q` (pool subtree momenta and the lattice ball of
    /// `lattice_radius`), and every admissible assignment of path scales,
    /// `K(T) >= 2^(m_q - 1)` and `N_p(T) <= 2^(2 - m_p) K(T)` for `p <= q`.
    pub fn siegel_bryuno_clusters(&self, problem: &Problem, lattice_radius: u32) -> Result<SiegelBryunoReport> {
        let mut report = SiegelBryunoReport::default();
        let p_len = self.p_max as usize + 1;
        for q in 0..=self.p_max {
            let mut entering: Vec<f64> = self.subtrees.iter().filter(|s| s.scale > q).map(|s| s.divisor).collect();
            for m in crate::lattice::ball(problem.d(), lattice_radius) {
                let x = problem.omega.divisor(&m);
                if problem.partition.chi_n(q, x)? > 0.0 {
                    entering.push(x);
                }
            }
            entering.sort_by(f64::total_cmp);
            entering.dedup();
            let m_q = problem.sequences.m[q as usize] as i32;
            for shape in self.shapes.iter().filter(|s| s.side_max_scale <= q) {
                let mut side = vec![0u32; p_len];
                for &d in &shape.path {
                    for &c in &self.decorations[d as usize].side {
                        for (a, b) in side.iter_mut().zip(&self.subtrees[c as usize].lines_by_scale) {
                            *a += *b as u32;
                        }
                    }
                }
                let k = shape.mode_l1 as f64;
                for &x in &entering {
                    let mut choices = Vec::with_capacity(shape.offsets.len());
                    for o in &shape.offsets {
                        choices.push(problem.partition.scales_up_to(problem.omega.divisor(o) + x, q)?);
                    }
                    if choices.iter().any(|c| c.is_empty()) {
                        continue;
                    }
                    let mut index = vec![0usize; choices.len()];
                    loop {
                        let scales: Vec<i32> = index.iter().zip(&choices).map(|(&i, c)| c[i].0).collect();
                        let top = scales.iter().copied().max().unwrap_or(-1).max(shape.side_max_scale);
                        if top == q && !self.path_has_subcluster(shape, &scales, q) {
                            report.checked += 1;
                            let label = || format!("cluster {:?} at x = {x:e}, path scales {scales:?}", shape.path);
                            if k < 2f64.powi(m_q - 1) {
                                report.violations.push(format!("{}: K = {k} < 2^(m_{q} - 1)", label()));
                            }
                            let mut above = 0u32;
                            for p in (0..=q).rev() {
                                above += side[p as usize] + scales.iter().filter(|&&s| s == p).count() as u32;
                                let bound = 2f64.powi(2 - problem.sequences.m[p as usize] as i32) * k;
                                if above as f64 > bound {
                                    report.violations.push(format!("{}: N_{p} = {above} > {bound}", label()));
                                }
                            }
                        }
                        let mut i = 0;
                        while i < index.len() {
                            index[i] += 1;
                            if index[i] < choices[i].len() {
                                break;
                            }
                            index[i] = 0;
                            i += 1;
                        }
                        if i == index.len() {
                            break;
                        }
                    }
                }
            }
        }
        Ok(report)
    }
}

/// Outcome of the counting checks.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SiegelBryunoReport {
    pub checked: usize,
    pub violations: Vec<String>,
}

impl SiegelBryunoReport {
    pub fn passes(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(&mut self, other: SiegelBryunoReport) {
        self.checked += other.checked;
        self.violations.extend(other.violations);
    }
}

/// Labels attached to one node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeLabels {
    pub nu_v: Vec<i32>,
    pub s_v: usize,
    pub u: usize,
    pub e_list: Vec<usize>,
}

/// Line leaving node `from` (same index) toward `to` (`None` for the root line).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    pub to: Option<usize>,
    pub momentum: Mode,
    pub e: usize,
    pub u: usize,
    pub scale: i32,
}

/// Explicit labelled tree; node `v` owns line `v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelledTree {
    pub modes: Vec<Mode>,
    pub children: Vec<Vec<usize>>,
    pub lines: Vec<Line>,
    pub root: usize,
}

/// Self-energy cluster found inside a labelled tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelfEnergyCluster {
    pub nodes: Vec<usize>,
    pub internal_lines: Vec<usize>,
    pub entering: usize,
    pub exiting: usize,
    pub scale: i32,
    /// Lines on the path from the entering line to the exiting one.
    pub path: Vec<usize>,
}

impl LabelledTree {
    pub fn order(&self) -> usize {
        self.modes.len()
    }

    pub fn labels(&self, v: usize) -> NodeLabels {
        NodeLabels {
            nu_v: self.modes[v].0.to_vec(),
            s_v: self.children[v].len(),
            u: self.lines[v].u,
            e_list: self.children[v].iter().map(|&w| self.lines[w].e).collect(),
        }
    }

    /// Conservation law: each line carries the sum of the modes above it.
    pub fn conserves_momentum(&self) -> bool {
        (0..self.order()).all(|v| {
            let expected = self.children[v].iter().fold(self.modes[v], |m, &w| m + self.lines[w].momentum);
            expected == self.lines[v].momentum
        })
    }

    /// `K = sum |nu_v|`.
    pub fn mode_l1(&self) -> u32 {
        self.modes.iter().map(|m| m.l1()).sum()
    }

    /// Canonical encoding with children sorted, independent of node numbering.
    pub fn canonical(&self) -> String {
        self.canonical_at(self.root)
    }

    fn canonical_at(&self, v: usize) -> String {
        let l = &self.lines[v];
        let mut kids: Vec<String> = self.children[v].iter().map(|&w| self.canonical_at(w)).collect();
        kids.sort();
        format!("({:?}|{},{},{}|{})", self.modes[v], l.e, l.u, l.scale, kids.join(""))
    }

    /// Number of planar drawings: `prod_v s_v! / prod(mult!)`.
    pub fn planar_orderings(&self) -> f64 {
        let mut total = 1.0;
        for v in 0..self.order() {
            let mut kids: Vec<String> = self.children[v].iter().map(|&w| self.canonical_at(w)).collect();
            kids.sort();
            total *= crate::forcing::factorial(kids.len());
            let mut run = 1usize;
            for w in kids.windows(2) {
                if w[0] == w[1] {
                    run += 1;
                    total /= run as f64;
                } else {
                    run = 1;
                }
            }
        }
        total
    }

    fn component(&self, v: usize, q: i32) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let mut nodes = vec![v];
        let mut internal = Vec::new();
        let mut entering = Vec::new();
        let mut stack = vec![v];
        while let Some(w) = stack.pop() {
            for &c in &self.children[w] {
                if self.lines[c].scale <= q {
                    nodes.push(c);
                    internal.push(c);
                    stack.push(c);
                } else {
                    entering.push(c);
                }
            }
        }
        nodes.sort_unstable();
        internal.sort_unstable();
        (nodes, internal, entering)
    }

    /// All self-energy clusters of the tree.
    pub fn find_self_energy_clusters(&self) -> Vec<SelfEnergyCluster> {
        let mut out = Vec::new();
        for v in 0..self.order() {
            for q in -1..self.lines[v].scale {
                let (nodes, internal, entering) = self.component(v, q);
                if entering.len() != 1 {
                    continue;
                }
                let sum = nodes.iter().fold(Mode::ZERO, |m, &w| m + self.modes[w]);
                let valid = if q == -1 { nodes.len() == 1 } else { internal.iter().any(|&l| self.lines[l].scale == q) };
                if !sum.is_zero() || !valid {
                    continue;
                }
                let mut path = Vec::new();
                let mut w = self.lines[entering[0]].to.expect("entering line has an end node");
                while w != v {
                    path.push(w);
                    w = self.lines[w].to.expect("path stays inside the cluster");
                }
                out.push(SelfEnergyCluster {
                    nodes,
                    internal_lines: internal,
                    entering: entering[0],
                    exiting: v,
                    scale: q,
                    path,
                });
            }
        }
        out
    }

    /// Counting check on the tree.
    pub fn siegel_bryuno(&self, problem: &Problem) -> SiegelBryunoReport {
        let mut report = SiegelBryunoReport { checked: 1, violations: Vec::new() };
        let k = self.mode_l1() as f64;
        for n in 0..=problem.p_max() {
            let count = self.lines.iter().filter(|l| l.scale >= n).count();
            let bound = 2f64.powi(2 - problem.sequences.m[n as usize] as i32) * k;
            if count as f64 > bound {
                report.violations.push(format!("{}: N_{n} = {count} > {bound}", self.canonical()));
            }
        }
        report
    }
}

impl TreePool {
    /// Labelled trees of order `k`, total momentum `nu`, root component `j`.
    ///
    /// Every equivalence class of labelled trees appears exactly once; trees
    /// with zero momentum carry a root line of scale `-1`.
    pub fn enumerate_trees(&self, problem: &Problem, k: usize, nu: Mode, j: usize, cap: usize) -> Result<Vec<LabelledTree>> {
        let r = problem.r();
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut push_all = |skeleton: LabelledTree| -> Result<()> {
            let n = skeleton.order();
            let free = 2 * n - 1;
            let total = (r as u64).pow(free as u32);
            for code in 0..total {
                let mut t = skeleton.clone();
                let mut c = code;
                for v in 0..n {
                    t.lines[v].u = (c % r as u64) as usize;
                    c /= r as u64;
                    if v == t.root {
                        t.lines[v].e = j;
                    } else {
                        t.lines[v].e = (c % r as u64) as usize;
                        c /= r as u64;
                    }
                }
                if seen.insert(t.canonical()) {
                    out.push(t);
                    if out.len() > cap {
                        return Err(Error::Budget(format!("more than {cap} labelled trees")));
                    }
                }
            }
            Ok(())
        };
        if nu.is_zero() {
            for &z in &self.zero_trees {
                let deco = &self.decorations[z as usize];
                if deco.order as usize == k {
                    push_all(self.skeleton_from_decoration(deco))?;
                }
            }
        } else {
            for id in self.of_order(k) {
                if self.subtrees[id].momentum == nu {
                    push_all(self.skeleton(id as u32))?;
                }
            }
        }
        Ok(out)
    }

    /// Labelled tree of a subtree with all component labels set to 0.
    pub fn skeleton(&self, id: u32) -> LabelledTree {
        let mut t = LabelledTree { modes: Vec::new(), children: Vec::new(), lines: Vec::new(), root: 0 };
        self.attach(id, None, &mut t);
        t
    }

    fn skeleton_from_decoration(&self, deco: &Decoration) -> LabelledTree {
        let mut t = LabelledTree {
            modes: vec![deco.mode],
            children: vec![Vec::new()],
            lines: vec![Line { to: None, momentum: Mode::ZERO, e: 0, u: 0, scale: -1 }],
            root: 0,
        };
        for &c in &deco.side {
            let w = self.attach(c, Some(0), &mut t);
            t.children[0].push(w);
        }
        t
    }

    fn attach(&self, id: u32, parent: Option<usize>, t: &mut LabelledTree) -> usize {
        let s = &self.subtrees[id as usize];
        let v = t.modes.len();
        t.modes.push(s.mode);
        t.children.push(Vec::new());
        t.lines.push(Line { to: parent, momentum: s.momentum, e: 0, u: 0, scale: s.scale });
        for &c in &s.children {
            let w = self.attach(c, Some(v), t);
            t.children[v].push(w);
        }
        v
    }
}

/// Canonical unlabelled rooted shapes with `k` nodes, as nested sorted child lists.
pub fn unlabelled_shapes(k: usize) -> Vec<String> {
    fn shapes(k: usize) -> Vec<String> {
        if k == 1 {
            return vec!["()".into()];
        }
        let mut out = BTreeSet::new();
        // multisets of child shapes with total size k - 1
        fn rec(rem: usize, min: &str, acc: &mut Vec<String>, out: &mut BTreeSet<String>) {
            if rem == 0 {
                out.insert(format!("({})", acc.join("")));
                return;
            }
            for size in 1..=rem {
                for s in shapes(size) {
                    if s.as_str() < min {
                        continue;
                    }
                    acc.push(s.clone());
                    rec(rem - size, &s, acc, out);
                    acc.pop();
                }
            }
        }
        let mut acc = Vec::new();
        rec(k - 1, "", &mut acc, &mut out);
        out.into_iter().collect()
    }
    shapes(k)
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

    /// Rooted unlabelled trees by node count, from the Euler transform recurrence.
    fn rooted_tree_counts(n: usize) -> Vec<u64> {
        let mut a = vec![0u64; n + 1];
        a[1] = 1;
        for m in 1..n {
            let mut total = 0u64;
            for k in 1..=m {
                let s: u64 = (1..=k).filter(|d| k % d == 0).map(|d| d as u64 * a[d]).sum();
                total += s * a[m - k + 1];
            }
            a[m + 1] = total / m as u64;
        }
        a
    }

    #[test]
    fn shape_counts() {
        let counts = rooted_tree_counts(7);
        assert_eq!(&counts[1..5], &[1, 1, 2, 4]);
        for k in 1..=7 {
            assert_eq!(unlabelled_shapes(k).len() as u64, counts[k], "k = {k}");
        }
    }

    #[test]
    fn two_node_chain_label_count() {
        let model = crate::forcing::ForcingModel::validated(2, 2, models::cos_cos(&[1, 0], &[1, 1], 1.0)).unwrap();
        let p = problem(model, 2, 1);
        let pool = TreePool::build(&p).unwrap();
        let trees = pool.enumerate_trees(&p, 2, Mode::new(&[2, 0]), 0, 1000).unwrap();
        // brute force: root u, inner e and inner u are free
        let mut brute = BTreeSet::new();
        for u_root in 0..2 {
            for e in 0..2 {
                for u in 0..2 {
                    brute.insert((u_root, e, u));
                }
            }
        }
        assert_eq!(trees.len(), brute.len());
        assert_eq!(trees.len(), 8);
        for t in &trees {
            assert_eq!(t.order(), 2);
            assert!(t.conserves_momentum());
        }
    }

    #[test]
    fn single_node_trees() {
        let p = problem(models::single_mode(), 1, 0);
        let pool = TreePool::build(&p).unwrap();
        let trees = pool.enumerate_trees(&p, 1, Mode::new(&[1, 0]), 0, 10).unwrap();
        assert_eq!(trees.len(), 1);
        assert!(trees[0].find_self_energy_clusters().is_empty());
    }

    #[test]
    fn enumerated_trees_are_renormalised() {
        let p = problem(models::two_mode_generic(), 4, 1);
        let pool = TreePool::build(&p).unwrap();
        let mut total = 0;
        for k in 1..=4 {
            let mut momenta: BTreeSet<Mode> = pool.of_order(k).map(|i| pool.subtrees[i].momentum).collect();
            momenta.insert(Mode::ZERO);
            for nu in momenta {
                for t in pool.enumerate_trees(&p, k, nu, 1, 1_000_000).unwrap() {
                    assert!(t.conserves_momentum());
                    assert!(t.find_self_energy_clusters().is_empty(), "{}", t.canonical());
                    for (v, l) in t.lines.iter().enumerate() {
                        if v == t.root && nu.is_zero() {
                            assert_eq!(l.scale, -1);
                        } else {
                            assert!(!l.momentum.is_zero());
                            let x = p.omega.divisor(&l.momentum);
                            assert!(p.partition.psi_n(l.scale, x).unwrap() > 0.0);
                        }
                    }
                    total += 1;
                }
            }
        }
        assert!(total > 100);
    }

    #[test]
    fn zero_mode_chain_has_scale_minus_one_cluster() {
        let z = Mode::ZERO;
        let nu = Mode::new(&[1, 0]);
        let line = |to, momentum, scale| Line { to, momentum, e: 0, u: 0, scale };
        // v2 -> v1 -> root with nu_{v1} = 0
        let t = LabelledTree {
            modes: vec![z, nu],
            children: vec![vec![1], vec![]],
            lines: vec![line(None, nu, 0), line(Some(0), nu, 0)],
            root: 0,
        };
        let clusters = t.find_self_energy_clusters();
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].scale, -1);
        assert_eq!(clusters[0].nodes, vec![0]);
        // opposite nonzero modes: the inner node is not a cluster
        let t2 = LabelledTree {
            modes: vec![-nu, nu + nu],
            children: vec![vec![1], vec![]],
            lines: vec![line(None, nu, 0), line(Some(0), nu + nu, 0)],
            root: 0,
        };
        assert!(t2.find_self_energy_clusters().is_empty());
    }

    #[test]
    fn cluster_path_reported() {
        let a = Mode::new(&[1, 0]);
        let line = |to, momentum, scale| Line { to, momentum, e: 0, u: 0, scale };
        // root(a) <- v1(-a) <- v2(a) <- v3(a): {v1, v2} has one entering line and zero sum
        let t = LabelledTree {
            modes: vec![a, -a, a, a],
            children: vec![vec![1], vec![2], vec![3], vec![]],
            lines: vec![line(None, a + a, 2), line(Some(0), a, 2), line(Some(1), a + a, 0), line(Some(2), a, 2)],
            root: 0,
        };
        let clusters = t.find_self_energy_clusters();
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].scale, 0);
        assert_eq!(clusters[0].nodes, vec![1, 2]);
        assert_eq!(clusters[0].entering, 3);
        assert_eq!(clusters[0].exiting, 1);
        assert_eq!(clusters[0].path, vec![2]);
    }

    #[test]
    fn deterministic_encoding() {
        let p = problem(models::two_mode_generic(), 4, 1);
        let a = TreePool::build(&p).unwrap();
        let b = TreePool::build(&p).unwrap();
        let enc = |pool: &TreePool| (0..pool.subtrees.len() as u32).map(|i| pool.encode(i, 2)).collect::<Vec<_>>();
        assert_eq!(enc(&a), enc(&b));
        assert_eq!(a.shapes.len(), b.shapes.len());
        let distinct: BTreeSet<String> = enc(&a).into_iter().collect();
        assert_eq!(distinct.len(), a.subtrees.len());
    }

    #[test]
    fn counting_lemma_on_trees() {
        for (model, p_max) in [(models::two_mode_generic(), 1), (models::multiscale(0.05), 2)] {
            let p = problem(model, 4, p_max);
            let pool = TreePool::build(&p).unwrap();
            let report = pool.siegel_bryuno_trees(&p);
            assert!(report.passes(), "{:?}", report.violations);
            assert_eq!(report.checked, pool.subtrees.len());
        }
    }

    #[test]
    fn counting_lemma_on_clusters() {
        let p = problem(models::multiscale(0.05), 4, 2);
        let pool = TreePool::build(&p).unwrap();
        let report = pool.siegel_bryuno_clusters(&p, 30).unwrap();
        assert!(report.passes(), "{:?}", report.violations);
        assert!(report.checked > 0);
    }

    #[test]
    fn symmetry_weights() {
        assert_eq!(symmetry_weight(&[]), 1.0);
        assert_eq!(symmetry_weight(&[1, 2, 3]), 1.0);
        assert_eq!(symmetry_weight(&[1, 1, 3]), 0.5);
        assert_eq!(symmetry_weight(&[4, 4, 4]), 1.0 / 6.0);
        assert_eq!(symmetry_weight(&[1, 1, 2, 2]), 0.25);
    }
}
