//! Finite filtered probability spaces as rooted scenario trees.
//!
//! Nodes at depth `t` are the atoms of the time-`t` sigma-algebra, so a value
//! stored per node is adapted by construction. Each node keeps the transition
//! probability from its parent; unconditional node probabilities are the
//! products along the root path.

use std::collections::HashMap;
use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::ValidationReport;

/// Probability floor used when generating random trees.
pub const PROBABILITY_FLOOR: f64 = 0.05;

const PROBABILITY_TOL: f64 = 1e-12;

/// On-disk node record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub t: usize,
    pub parent: Option<String>,
    pub p: Option<f64>,
}

/// On-disk tree: `{"T": int, "nodes": [{"id", "t", "parent", "p"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFile {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub t: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Transition probability from the parent; 1 at the root.
    pub p: f64,
}

/// Immutable scenario tree. Node indices are dense, parents precede children.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    horizon: usize,
    nodes: Vec<Node>,
    leaves: Vec<usize>,
    by_time: Vec<Vec<usize>>,
    node_prob: Vec<f64>,
    leaf_pos: Vec<Option<usize>>,
    index: HashMap<String, usize>,
}

/// Checks every structural rule on a raw tree file.
pub fn validate_tree(file: &TreeFile) -> ValidationReport {
    let mut report = ValidationReport::default();
    if file.horizon < 1 {
        report.push("tree", "horizon", format!("T = {} must be at least 1", file.horizon));
    }

    let mut index: HashMap<&str, usize> = HashMap::new();
    for (k, n) in file.nodes.iter().enumerate() {
        if index.insert(n.id.as_str(), k).is_some() {
            report.push(&n.id, "duplicate id", "node id appears more than once");
        }
    }

    let roots: Vec<&NodeRecord> = file.nodes.iter().filter(|n| n.parent.is_none()).collect();
    match roots.len() {
        0 => report.push("tree", "root", "no node without parent"),
        1 => {
            let r = roots[0];
            if r.t != 0 {
                report.push(&r.id, "root time", format!("root has t = {}, expected 0", r.t));
            }
            if r.p.is_some() {
                report.push(&r.id, "root probability", "root must have p = null");
            }
        }
        _ => {
            let ids: Vec<&str> = roots.iter().map(|n| n.id.as_str()).collect();
            report.push("tree", "root", format!("multiple roots: {}", ids.join(", ")));
        }
    }

    let mut children: HashMap<&str, Vec<&NodeRecord>> = HashMap::new();
    for n in &file.nodes {
        let Some(parent) = n.parent.as_deref() else { continue };
        match index.get(parent) {
            None => report.push(&n.id, "unknown parent", format!("parent `{parent}` does not exist")),
            Some(&pk) => {
                let pt = file.nodes[pk].t;
                if n.t != pt + 1 {
                    report.push(
                        &n.id,
                        "time gap",
                        format!("node has t = {} under parent `{parent}` with t = {pt}", n.t),
                    );
                }
                children.entry(parent).or_default().push(n);
            }
        }
        match n.p {
            None => report.push(&n.id, "missing probability", "non-root node needs p"),
            Some(p) if !(p > 0.0 && p <= 1.0 + PROBABILITY_TOL) => {
                report.push(&n.id, "probability range", format!("p = {p} outside (0, 1]"))
            }
            _ => {}
        }
    }

    for n in &file.nodes {
        match children.get(n.id.as_str()) {
            Some(kids) => {
                if n.t >= file.horizon {
                    report.push(&n.id, "beyond horizon", format!("node at t = {} has children", n.t));
                }
                let sum: f64 = kids.iter().filter_map(|c| c.p).sum();
                if kids.iter().all(|c| c.p.is_some()) && (sum - 1.0).abs() > PROBABILITY_TOL {
                    report.push(
                        &n.id,
                        "probability sum",
                        format!("probabilities sum to {sum} \u{2260} 1 at node {}", n.id),
                    );
                }
            }
            None => {
                if n.t != file.horizon {
                    report.push(&n.id, "early leaf", format!("leaf at t = {}, expected T = {}", n.t, file.horizon));
                }
            }
        }
    }

    // Reachability: every node must hang off the root through valid parents.
    if roots.len() == 1 && report.is_ok() {
        let mut seen = 0usize;
        let mut stack = vec![roots[0].id.as_str()];
        while let Some(id) = stack.pop() {
            seen += 1;
            if let Some(kids) = children.get(id) {
                stack.extend(kids.iter().map(|c| c.id.as_str()));
            }
        }
        if seen != file.nodes.len() {
            report.push("tree", "unreachable", format!("{} nodes not reachable from root", file.nodes.len() - seen));
        }
    }
    report
}

impl ScenarioTree {
    /// Builds a tree from its file form, rejecting invalid input.
    pub fn from_file(file: &TreeFile) -> Result<Self> {
        let report = validate_tree(file);
        if !report.is_ok() {
            return Err(Error::InvalidTree(report.to_string()));
        }
        // Order nodes by time, keeping file order within a level.
        let mut order: Vec<usize> = (0..file.nodes.len()).collect();
        order.sort_by_key(|&k| file.nodes[k].t);
        let index: HashMap<String, usize> =
            order.iter().enumerate().map(|(new, &old)| (file.nodes[old].id.clone(), new)).collect();
        let mut nodes: Vec<Node> = order
            .iter()
            .map(|&old| {
                let r = &file.nodes[old];
                Node {
                    id: r.id.clone(),
                    t: r.t,
                    parent: r.parent.as_ref().map(|p| index[p]),
                    children: Vec::new(),
                    p: r.p.unwrap_or(1.0),
                }
            })
            .collect();
        for k in 0..nodes.len() {
            if let Some(par) = nodes[k].parent {
                nodes[par].children.push(k);
            }
        }
        Ok(Self::assemble(file.horizon, nodes, index))
    }

    fn assemble(horizon: usize, nodes: Vec<Node>, index: HashMap<String, usize>) -> Self {
        let mut node_prob = vec![1.0; nodes.len()];
        let mut by_time = vec![Vec::new(); horizon + 1];
        let mut leaves = Vec::new();
        let mut leaf_pos = vec![None; nodes.len()];
        for (k, n) in nodes.iter().enumerate() {
            if let Some(par) = n.parent {
                node_prob[k] = node_prob[par] * n.p;
            }
            by_time[n.t].push(k);
            if n.children.is_empty() {
                leaf_pos[k] = Some(leaves.len());
                leaves.push(k);
            }
        }
        Self { horizon, nodes, leaves, by_time, node_prob, leaf_pos, index }
    }

    pub fn to_file(&self) -> TreeFile {
        TreeFile {
            horizon: self.horizon,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id.clone(),
                    t: n.t,
                    parent: n.parent.map(|p| self.nodes[p].id.clone()),
                    p: n.parent.map(|_| n.p),
                })
                .collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, k: usize) -> &Node {
        &self.nodes[k]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Leaf node indices in tree order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    /// Position of node `k` among the leaves, if it is a leaf.
    pub fn leaf_position(&self, k: usize) -> Option<usize> {
        self.leaf_pos[k]
    }

    pub fn nodes_at(&self, t: usize) -> &[usize] {
        &self.by_time[t]
    }

    pub fn lookup(&self, id: &str) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn node_probability(&self, id: &str) -> Result<f64> {
        Ok(self.node_prob[self.lookup(id)?])
    }

    /// Unconditional probability of node `k`.
    pub fn prob(&self, k: usize) -> f64 {
        self.node_prob[k]
    }

    /// Node `k` followed by its ancestors up to the root.
    pub fn path_to_root(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(Some(k), move |&n| self.nodes[n].parent)
    }

    /// Leaf positions in the subtree of `k`, as a contiguous-free list.
    pub fn leaves_under(&self, k: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![k];
        while let Some(n) = stack.pop() {
            match self.leaf_pos[n] {
                Some(pos) => out.push(pos),
                None => stack.extend(self.nodes[n].children.iter().rev()),
            }
        }
        out.sort_unstable();
        out
    }

    /// Converts an id-keyed terminal map into leaf order.
    pub fn terminal_from_map(&self, values: &HashMap<String, f64>) -> Result<Vec<f64>> {
        self.leaves
            .iter()
            .map(|&k| {
                let id = &self.nodes[k].id;
                values.get(id).copied().ok_or_else(|| Error::MissingLeafValue(id.clone()))
            })
            .collect()
    }

    /// Conditional expectations of a leaf-indexed random variable at every node.
    ///
    /// Backward recursion: each node averages its children with the transition
    /// probabilities, so the tower property holds by construction.
    pub fn conditional_expectation_all(&self, terminal: &[f64]) -> Result<Adapted<f64>> {
        if terminal.len() != self.leaves.len() {
            return Err(Error::Dimension { expected: self.leaves.len(), got: terminal.len() });
        }
        let mut values = vec![0.0; self.nodes.len()];
        for (pos, &k) in self.leaves.iter().enumerate() {
            values[k] = terminal[pos];
        }
        for t in (0..self.horizon).rev() {
            for &k in &self.by_time[t] {
                values[k] = self.nodes[k].children.iter().map(|&c| self.nodes[c].p * values[c]).sum();
            }
        }
        Ok(Adapted { values })
    }

    /// `E[terminal | F_t]`, aligned with `nodes_at(t)`.
    pub fn conditional_expectation(&self, terminal: &[f64], t: usize) -> Result<Vec<f64>> {
        if t > self.horizon {
            return Err(Error::InvalidParameter(format!("t = {t} exceeds horizon {}", self.horizon)));
        }
        let all = self.conditional_expectation_all(terminal)?;
        Ok(self.by_time[t].iter().map(|&k| all[k]).collect())
    }

    /// Expectation of a leaf-indexed random variable.
    pub fn expectation(&self, terminal: &[f64]) -> f64 {
        self.leaves.iter().zip(terminal).map(|(&k, v)| self.node_prob[k] * v).sum()
    }
}

/// Random tree with `2..=branching` children per node (exactly one when
/// `branching == 1`) and transition probabilities floored at 0.05.
pub fn generate_random_tree(seed: u64, branching: usize, horizon: usize) -> Result<ScenarioTree> {
    if branching < 1 || horizon < 1 {
        return Err(Error::InvalidParameter("branching and T must be at least 1".into()));
    }
    if (branching as f64) * PROBABILITY_FLOOR > 1.0 {
        return Err(Error::InvalidParameter(format!(
            "branching {branching} incompatible with probability floor {PROBABILITY_FLOOR}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = vec![Node { id: "r".into(), t: 0, parent: None, children: Vec::new(), p: 1.0 }];
    let mut frontier = vec![0usize];
    for t in 1..=horizon {
        let mut next = Vec::new();
        for &par in &frontier {
            let k = if branching == 1 { 1 } else { rng.gen_range(2..=branching) };
            let probs = floored_probabilities(&mut rng, k);
            for (c, p) in probs.into_iter().enumerate() {
                let id = format!("{}.{c}", nodes[par].id);
                let idx = nodes.len();
                nodes.push(Node { id, t, parent: Some(par), children: Vec::new(), p });
                nodes[par].children.push(idx);
                next.push(idx);
            }
        }
        frontier = next;
    }
    let index = nodes.iter().enumerate().map(|(k, n)| (n.id.clone(), k)).collect();
    Ok(ScenarioTree::assemble(horizon, nodes, index))
}

fn floored_probabilities(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0) + 1e-3).collect();
    let total: f64 = w.iter().sum();
    let free = 1.0 - k as f64 * PROBABILITY_FLOOR;
    let mut p: Vec<f64> = w.iter().map(|wi| PROBABILITY_FLOOR + free * wi / total).collect();
    let head: f64 = p[..k - 1].iter().sum();
    p[k - 1] = 1.0 - head;
    p
}

/// One value per tree node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adapted<T> {
    pub values: Vec<T>,
}

impl<T: Clone> Adapted<T> {
    pub fn constant(tree: &ScenarioTree, value: T) -> Self {
        Self { values: vec![value; tree.len()] }
    }
}

impl<T> Adapted<T> {
    pub fn from_fn(tree: &ScenarioTree, f: impl FnMut(usize) -> T) -> Self {
        Self { values: (0..tree.len()).map(f).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.values.iter()
    }
}

impl<T> Index<usize> for Adapted<T> {
    type Output = T;
    fn index(&self, k: usize) -> &T {
        &self.values[k]
    }
}

impl<T> IndexMut<usize> for Adapted<T> {
    fn index_mut(&mut self, k: usize) -> &mut T {
        &mut self.values[k]
    }
}

#[cfg(test)]
pub(crate) fn two_leaf(p_up: f64) -> ScenarioTree {
    let file = TreeFile {
        horizon: 1,
        nodes: vec![
            NodeRecord { id: "root".into(), t: 0, parent: None, p: None },
            NodeRecord { id: "u".into(), t: 1, parent: Some("root".into()), p: Some(p_up) },
            NodeRecord { id: "d".into(), t: 1, parent: Some("root".into()), p: Some(1.0 - p_up) },
        ],
    };
    ScenarioTree::from_file(&file).unwrap()
}
