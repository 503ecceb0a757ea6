//! Self-financing portfolio processes and the polyhedron of attainable
//! terminal positions.
//!
//! A portfolio increment at node `n` is parametrised by nonnegative generator
//! weights: transfers `a^{ij}(n)` (units of asset `j` bought for
//! `pi^{ij}(n)` units of asset `i` each) and disposals `dsp^i(n)`. The
//! terminal position at a leaf is the endowment plus the increments along its
//! path, which is affine in the weights.

use std::collections::BTreeMap;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::cones::{BidAskMatrix, BidAskProcess};
use crate::error::{Error, Result};
use crate::lp::{solve_lp, Direction, LinearProgram, LpStatus, Sense};
use crate::tree::{Adapted, ScenarioTree};

/// Residual tolerance of [`increment_in_cone`].
pub const INCREMENT_TOL: f64 = 1e-8;

/// Generator weights of a self-financing portfolio process.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferPlan {
    dim: usize,
    /// Row-major `d x d` per node; the diagonal stays zero.
    transfers: Adapted<Vec<f64>>,
    disposals: Adapted<Vec<f64>>,
}

/// JSON form of one node of a plan: `{"node": id, "a": {"i,j": amt}, "dsp": [..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub node: String,
    #[serde(default)]
    pub a: BTreeMap<String, f64>,
    #[serde(default)]
    pub dsp: Vec<f64>,
}

impl TransferPlan {
    pub fn zero(tree: &ScenarioTree, dim: usize) -> Self {
        Self {
            dim,
            transfers: Adapted::constant(tree, vec![0.0; dim * dim]),
            disposals: Adapted::constant(tree, vec![0.0; dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.disposals.len()
    }

    pub fn transfer(&self, node: usize, i: usize, j: usize) -> f64 {
        self.transfers[node][i * self.dim + j]
    }

    pub fn set_transfer(&mut self, node: usize, i: usize, j: usize, amount: f64) {
        assert!(i != j, "transfers need distinct assets");
        self.transfers[node][i * self.dim + j] = amount;
    }

    pub fn disposal(&self, node: usize, i: usize) -> f64 {
        self.disposals[node][i]
    }

    pub fn set_disposal(&mut self, node: usize, i: usize, amount: f64) {
        self.disposals[node][i] = amount;
    }

    /// Smallest entry; a valid plan has this `>= 0`.
    pub fn min_entry(&self) -> f64 {
        self.transfers
            .iter()
            .flatten()
            .chain(self.disposals.iter().flatten())
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_entry(&self) -> f64 {
        self.transfers
            .iter()
            .flatten()
            .chain(self.disposals.iter().flatten())
            .copied()
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.max_entry() == 0.0 && self.min_entry() == 0.0
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &TransferPlan, beta: f64) -> Result<TransferPlan> {
        if self.dim != other.dim || self.num_nodes() != other.num_nodes() {
            return Err(Error::Dimension { expected: self.num_nodes(), got: other.num_nodes() });
        }
        let mix = |a: &Adapted<Vec<f64>>, b: &Adapted<Vec<f64>>| Adapted {
            values: a
                .iter()
                .zip(b.iter())
                .map(|(u, v)| u.iter().zip(v).map(|(p, q)| alpha * p + beta * q).collect())
                .collect(),
        };
        Ok(TransferPlan {
            dim: self.dim,
            transfers: mix(&self.transfers, &other.transfers),
            disposals: mix(&self.disposals, &other.disposals),
        })
    }

    pub fn scaled(&self, alpha: f64) -> TransferPlan {
        self.combine(alpha, self, 0.0).expect("same shape")
    }

    /// Concatenation of two trading strategies (weights add).
    pub fn plus(&self, other: &TransferPlan) -> Result<TransferPlan> {
        self.combine(1.0, other, 1.0)
    }

    pub fn to_records(&self, tree: &ScenarioTree) -> Vec<PlanRecord> {
        let d = self.dim;
        (0..tree.len())
            .map(|n| {
                let mut a = BTreeMap::new();
                for i in 0..d {
                    for j in 0..d {
                        let v = self.transfer(n, i, j);
                        if i != j && v != 0.0 {
                            a.insert(format!("{i},{j}"), v);
                        }
                    }
                }
                PlanRecord { node: tree.node(n).id.clone(), a, dsp: self.disposals[n].clone() }
            })
            .collect()
    }

    /// Nodes missing from `records` get zero weights.
    pub fn from_records(tree: &ScenarioTree, dim: usize, records: &[PlanRecord]) -> Result<TransferPlan> {
        let mut plan = TransferPlan::zero(tree, dim);
        for rec in records {
            let n = tree.lookup(&rec.node)?;
            for (key, &v) in &rec.a {
                let (i, j) = parse_pair(key, dim)?;
                check_weight(v, &rec.node)?;
                plan.set_transfer(n, i, j, v);
            }
            if !rec.dsp.is_empty() {
                if rec.dsp.len() != dim {
                    return Err(Error::Dimension { expected: dim, got: rec.dsp.len() });
                }
                for (i, &v) in rec.dsp.iter().enumerate() {
                    check_weight(v, &rec.node)?;
                    plan.set_disposal(n, i, v);
                }
            }
        }
        Ok(plan)
    }
}

fn check_weight(v: f64, node: &str) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::InvalidParameter(format!("plan weight {v} at node {node} is not a finite nonnegative number")));
    }
    Ok(())
}

fn parse_pair(key: &str, dim: usize) -> Result<(usize, usize)> {
    let bad = || Error::InvalidParameter(format!("transfer key {key:?} is not \"i,j\" with distinct 0-based assets < {dim}"));
    let (a, b) = key.split_once(',').ok_or_else(bad)?;
    let i: usize = a.trim().parse().map_err(|_| bad())?;
    let j: usize = b.trim().parse().map_err(|_| bad())?;
    if i >= dim || j >= dim || i == j {
        return Err(bad());
    }
    Ok((i, j))
}

/// Portfolio process and terminal positions of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    /// `v_t(n)` including the endowment.
    pub portfolio: Adapted<Vec<f64>>,
    /// `X_T` per leaf, in the order of [`ScenarioTree::leaves`].
    pub terminal: Vec<Vec<f64>>,
}

/// Portfolio increment of node `n`'s weights under `pi`.
pub fn node_increment(plan: &TransferPlan, n: usize, pi: &BidAskMatrix) -> Vec<f64> {
    let d = plan.dim;
    let mut inc = vec![0.0; d];
    for i in 0..d {
        inc[i] -= plan.disposal(n, i);
        for j in 0..d {
            if i != j {
                let a = plan.transfer(n, i, j);
                if a != 0.0 {
                    inc[i] -= pi.get(i, j) * a;
                    inc[j] += a;
                }
            }
        }
    }
    inc
}

fn check_shapes(plan: &TransferPlan, tree: &ScenarioTree, process: &BidAskProcess, x: &[f64]) -> Result<()> {
    if plan.num_nodes() != tree.len() {
        return Err(Error::Dimension { expected: tree.len(), got: plan.num_nodes() });
    }
    if process.matrices().len() != tree.len() {
        return Err(Error::Dimension { expected: tree.len(), got: process.matrices().len() });
    }
    if plan.dim != process.dim() {
        return Err(Error::Dimension { expected: process.dim(), got: plan.dim });
    }
    if x.len() != process.dim() {
        return Err(Error::Dimension { expected: process.dim(), got: x.len() });
    }
    Ok(())
}

/// Runs the plan forward from endowment `x`.
pub fn realize(plan: &TransferPlan, tree: &ScenarioTree, process: &BidAskProcess, x: &[f64]) -> Result<Realization> {
    check_shapes(plan, tree, process, x)?;
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); tree.len()];
    for n in 0..tree.len() {
        let base = match tree.node(n).parent {
            Some(p) => values[p].clone(),
            None => x.to_vec(),
        };
        let inc = node_increment(plan, n, process.at(n));
        values[n] = base.iter().zip(&inc).map(|(b, d)| b + d).collect();
    }
    let terminal = tree.leaves().iter().map(|&l| values[l].clone()).collect();
    Ok(Realization { portfolio: Adapted { values }, terminal })
}

/// Whether `delta` lies in `-K(pi)`, decided by LP feasibility over the
/// generator weights.
pub fn increment_in_cone(delta: &[f64], pi: &BidAskMatrix) -> Result<bool> {
    let d = pi.dim();
    if delta.len() != d {
        return Err(Error::Dimension { expected: d, got: delta.len() });
    }
    let mut lp = LinearProgram::new(d * d, Direction::Minimize);
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); d];
    let mut var = 0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                rows[i].push((var, -pi.get(i, j)));
                rows[j].push((var, 1.0));
                var += 1;
            }
        }
    }
    for (i, row) in rows.iter_mut().enumerate() {
        row.push((var + i, -1.0));
    }
    for (i, row) in rows.into_iter().enumerate() {
        lp.add_row(row, Sense::Eq, delta[i]);
    }
    let out = solve_lp(&lp)?;
    Ok(out.status == LpStatus::Optimal && lp.primal_residual(&out.primal) <= INCREMENT_TOL)
}

/// Variable layout of plans inside linear programs: per node, the `d(d-1)`
/// transfers in lexicographic `(i, j)` order, then the `d` disposals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanLayout {
    pub dim: usize,
    pub nodes: usize,
}

impl PlanLayout {
    pub fn block(&self) -> usize {
        self.dim * self.dim
    }

    pub fn num_vars(&self) -> usize {
        self.nodes * self.block()
    }

    pub fn transfer_var(&self, node: usize, i: usize, j: usize) -> usize {
        debug_assert!(i != j);
        let d = self.dim;
        node * self.block() + i * (d - 1) + if j > i { j - 1 } else { j }
    }

    pub fn disposal_var(&self, node: usize, i: usize) -> usize {
        node * self.block() + self.dim * (self.dim - 1) + i
    }

    pub fn is_disposal(&self, var: usize) -> bool {
        var % self.block() >= self.dim * (self.dim - 1)
    }

    pub fn to_vector(&self, plan: &TransferPlan) -> Vec<f64> {
        let d = self.dim;
        let mut v = vec![0.0; self.num_vars()];
        for n in 0..self.nodes {
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        v[self.transfer_var(n, i, j)] = plan.transfer(n, i, j);
                    }
                }
                v[self.disposal_var(n, i)] = plan.disposal(n, i);
            }
        }
        v
    }

    /// Tiny negative round-off from the solver is clamped to zero.
    pub fn to_plan(&self, tree: &ScenarioTree, v: &[f64]) -> TransferPlan {
        let d = self.dim;
        let mut plan = TransferPlan::zero(tree, d);
        for n in 0..self.nodes {
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        plan.set_transfer(n, i, j, v[self.transfer_var(n, i, j)].max(0.0));
                    }
                }
                plan.set_disposal(n, i, v[self.disposal_var(n, i)].max(0.0));
            }
        }
        plan
    }
}

/// The affine map from plan variables to terminal positions, with the
/// constraint rows `X_T(leaf) >= 0` and the transfer box.
#[derive(Debug, Clone)]
pub struct Skeleton {
    pub layout: PlanLayout,
    /// Endowment.
    pub x: Vec<f64>,
    /// Upper bound on every transfer variable.
    pub box_bound: f64,
    /// Sparse coefficients of `X_T^i(leaf) - x^i`, indexed `leaf_pos * d + i`.
    pub terminal_rows: Vec<Vec<(usize, f64)>>,
    /// Feasibility system: rows `terminal_rows[r] >= -x^i` in the same order;
    /// zero objective, maximisation.
    pub lp: LinearProgram,
}

impl Skeleton {
    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn num_leaves(&self) -> usize {
        self.terminal_rows.len() / self.layout.dim.max(1)
    }

    /// Terminal positions (leaf-major, `leaf_pos * d + i`) at plan vector `v`.
    pub fn terminal(&self, v: &[f64]) -> Vec<f64> {
        let d = self.layout.dim;
        self.terminal_rows
            .iter()
            .enumerate()
            .map(|(r, row)| self.x[r % d] + row.iter().map(|&(k, a)| a * v[k]).sum::<f64>())
            .collect()
    }

    /// Pulls a terminal-space linear functional back to plan variables:
    /// `c_k = sum_r g_r * d X_r / d v_k`.
    pub fn pullback(&self, g: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.layout.num_vars()];
        for (r, row) in self.terminal_rows.iter().enumerate() {
            if g[r] != 0.0 {
                for &(k, a) in row {
                    c[k] += g[r] * a;
                }
            }
        }
        c
    }

    /// Same skeleton with a linear objective on the plan variables.
    pub fn lp_with_objective(&self, c: Vec<f64>) -> LinearProgram {
        let mut lp = self.lp.clone();
        lp.objective = c;
        lp
    }
}

/// The documented box bound `(sum_i x^i) * (max pi)^{T+1} * d`; a unit box is
/// used for zero endowment, where only the sign of the objective matters.
pub fn box_bound(tree: &ScenarioTree, process: &BidAskProcess, x: &[f64]) -> f64 {
    let total: f64 = x.iter().sum();
    if total <= 0.0 {
        return 1.0;
    }
    total * process.max_entry().powi(tree.horizon() as i32 + 1) * process.dim() as f64
}

/// Builds the polyhedral representation of the attainable set from `x`.
pub fn assemble_constraints(tree: &ScenarioTree, process: &BidAskProcess, x: &[f64]) -> Result<Skeleton> {
    let d = process.dim();
    if x.len() != d {
        return Err(Error::Dimension { expected: d, got: x.len() });
    }
    if x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParameter(format!("endowment {x:?} must be finite and nonnegative")));
    }
    if process.matrices().len() != tree.len() {
        return Err(Error::Dimension { expected: tree.len(), got: process.matrices().len() });
    }
    let layout = PlanLayout { dim: d, nodes: tree.len() };
    let m_box = box_bound(tree, process, x);
    debug!("attainable skeleton: {} nodes, d = {d}, transfer box {m_box}", tree.len());

    let mut terminal_rows = Vec::with_capacity(tree.leaves().len() * d);
    for &leaf in tree.leaves() {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); d];
        let mut path: Vec<usize> = tree.path_to_root(leaf).collect();
        path.reverse();
        for n in path {
            let pi = process.at(n);
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        let k = layout.transfer_var(n, i, j);
                        rows[i].push((k, -pi.get(i, j)));
                        rows[j].push((k, 1.0));
                    }
                }
                rows[i].push((layout.disposal_var(n, i), -1.0));
            }
        }
        for row in &mut rows {
            row.sort_by_key(|&(k, _)| k);
        }
        terminal_rows.extend(rows);
    }

    let mut lp = LinearProgram::new(layout.num_vars(), Direction::Maximize);
    for n in 0..tree.len() {
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    lp.set_bounds(layout.transfer_var(n, i, j), 0.0, m_box);
                }
            }
        }
    }
    for (r, row) in terminal_rows.iter().enumerate() {
        lp.add_row(row.clone(), Sense::Ge, -x[r % d]);
    }
    Ok(Skeleton { layout, x: x.to_vec(), box_bound: m_box, terminal_rows, lp })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::two_leaf;

    fn frictionless_two_asset(tree: &ScenarioTree) -> BidAskProcess {
        BidAskProcess::constant(tree, BidAskMatrix::frictionless(2))
    }

    #[test]
    fn realize_examples() {
        let tree = two_leaf(0.5);
        let pi = frictionless_two_asset(&tree);
        let zero = TransferPlan::zero(&tree, 2);
        let r = realize(&zero, &tree, &pi, &[1.0, 1.0]).unwrap();
        assert!(r.terminal.iter().all(|v| v == &vec![1.0, 1.0]));

        let mut plan = TransferPlan::zero(&tree, 2);
        plan.set_transfer(0, 0, 1, 1.0);
        let r = realize(&plan, &tree, &pi, &[1.0, 0.0]).unwrap();
        assert_eq!(r.portfolio[0], vec![0.0, 1.0]);
        assert!(r.terminal.iter().all(|v| v == &vec![0.0, 1.0]));

        let pi2 = BidAskProcess::constant(&tree, BidAskMatrix::from_rows(&[vec![1.0, 2.0], vec![0.5, 1.0]]).unwrap());
        let r = realize(&plan, &tree, &pi2, &[2.0, 0.0]).unwrap();
        assert!(r.terminal.iter().all(|v| v == &vec![0.0, 1.0]));
    }

    #[test]
    fn realize_shape_errors() {
        let tree = two_leaf(0.5);
        let pi = frictionless_two_asset(&tree);
        let plan = TransferPlan::zero(&tree, 3);
        assert!(matches!(realize(&plan, &tree, &pi, &[1.0, 1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn increment_membership_examples() {
        let pi = BidAskMatrix::from_rows(&[vec![1.0, 2.0], vec![0.5, 1.0]]).unwrap();
        assert!(increment_in_cone(&[-1.0, 0.0], &pi).unwrap());
        assert!(increment_in_cone(&[-2.0, 1.0], &pi).unwrap());
        assert!(!increment_in_cone(&[-1.0, 1.0], &pi).unwrap());
        assert!(increment_in_cone(&[0.0, 0.0], &pi).unwrap());
    }

    #[test]
    fn skeleton_matches_realize() {
        let tree = two_leaf(0.3);
        let pi = BidAskProcess::new(
            &tree,
            vec![
                BidAskMatrix::from_rows(&[vec![1.0, 1.2], vec![0.9, 1.0]]).unwrap(),
                BidAskMatrix::from_rows(&[vec![1.0, 2.1], vec![0.5, 1.0]]).unwrap(),
                BidAskMatrix::from_rows(&[vec![1.0, 0.8], vec![1.4, 1.0]]).unwrap(),
            ],
        )
        .unwrap();
        let x = [1.0, 0.5];
        let sk = assemble_constraints(&tree, &pi, &x).unwrap();
        let mut plan = TransferPlan::zero(&tree, 2);
        plan.set_transfer(0, 0, 1, 0.3);
        plan.set_transfer(1, 1, 0, 0.2);
        plan.set_disposal(2, 0, 0.1);
        let v = sk.layout.to_vector(&plan);
        assert_eq!(sk.layout.to_plan(&tree, &v), plan);
        let flat = sk.terminal(&v);
        let r = realize(&plan, &tree, &pi, &x).unwrap();
        for (l, term) in r.terminal.iter().enumerate() {
            for i in 0..2 {
                assert!((flat[l * 2 + i] - term[i]).abs() < 1e-14);
            }
        }
        assert_eq!(sk.box_bound, 1.5 * 2.1f64.powi(2) * 2.0);
    }

    #[test]
    fn single_asset_has_only_disposals() {
        let tree = two_leaf(0.5);
        let pi = BidAskProcess::constant(&tree, BidAskMatrix::frictionless(1));
        let sk = assemble_constraints(&tree, &pi, &[1.0]).unwrap();
        assert_eq!(sk.layout.num_vars(), tree.len());
        assert!((0..sk.layout.num_vars()).all(|k| sk.layout.is_disposal(k)));
        assert_eq!(sk.lp.primal_residual(&vec![0.0; sk.layout.num_vars()]), 0.0);
    }

    #[test]
    fn plan_json_round_trip() {
        let tree = two_leaf(0.5);
        let mut plan = TransferPlan::zero(&tree, 2);
        plan.set_transfer(1, 1, 0, 0.25);
        plan.set_disposal(0, 1, 2.0);
        let recs = plan.to_records(&tree);
        let json = serde_json::to_string(&recs).unwrap();
        let back: Vec<PlanRecord> = serde_json::from_str(&json).unwrap();
        assert_eq!(TransferPlan::from_records(&tree, 2, &back).unwrap(), plan);
        let bad = vec![PlanRecord { node: "root".into(), a: [("0,0".to_string(), 1.0)].into(), dsp: vec![] }];
        assert!(TransferPlan::from_records(&tree, 2, &bad).is_err());
    }

    #[test]
    fn linearity_and_disposal_monotonicity() {
        use rand::{Rng, SeedableRng};
        let tree = two_leaf(0.4);
        let pi = BidAskProcess::constant(&tree, BidAskMatrix::from_rows(&[vec![1.0, 1.3], vec![0.9, 1.0]]).unwrap());
        let x = [1.0, 2.0];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let layout = PlanLayout { dim: 2, nodes: tree.len() };
        for _ in 0..50 {
            let p = layout.to_plan(&tree, &(0..layout.num_vars()).map(|_| rng.gen::<f64>()).collect::<Vec<_>>());
            let q = layout.to_plan(&tree, &(0..layout.num_vars()).map(|_| rng.gen::<f64>()).collect::<Vec<_>>());
            let a: f64 = rng.gen::<f64>() * 0.5;
            let b: f64 = rng.gen::<f64>() * 0.5;
            let mix = p.combine(a, &q, b).unwrap();
            let rm = realize(&mix, &tree, &pi, &x).unwrap();
            let rp = realize(&p, &tree, &pi, &x).unwrap();
            let rq = realize(&q, &tree, &pi, &x).unwrap();
            for l in 0..2 {
                for i in 0..2 {
                    let affine = a * rp.terminal[l][i] + b * rq.terminal[l][i] + (1.0 - a - b) * x[i];
                    assert!((rm.terminal[l][i] - affine).abs() < 1e-12);
                }
            }
            let mut more = p.clone();
            let n = rng.gen_range(0..tree.len());
            let i = rng.gen_range(0..2);
            more.set_disposal(n, i, p.disposal(n, i) + rng.gen::<f64>());
            let rmore = realize(&more, &tree, &pi, &x).unwrap();
            for l in 0..2 {
                for i in 0..2 {
                    assert!(rmore.terminal[l][i] <= rp.terminal[l][i] + 1e-15);
                }
            }
        }
    }
}
