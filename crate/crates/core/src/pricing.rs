//! Price processes built from Pareto maximisers, and their verification.
//!
//! At a maximiser `X` of `<lambda, E U(X_T)>` the process
//! `Z_t^i = lambda^i E[U_i'(X_T^i) | F_t]` is consistent; when the maximiser
//! is computed under strictly smaller spreads it is strictly consistent for
//! the original market.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::arbitrage::{check_nar_with, PriceProcess};
use crate::cones::{polar_slack, shrink_spreads, strict_margin, BidAskProcess};
use crate::error::{Error, Result};
use crate::pareto::{solve_scalarized_in, ParetoSolution, Problem};
use crate::tolerance::Tolerances;
use crate::tree::{Adapted, ScenarioTree};
use crate::utility::UtilitySpec;

/// Terminal holdings down to this far below zero are read as zero.
const NEGATIVE_HOLDING_TOL: f64 = 1e-8;

/// `Z` from a solution, using its weights as supplied.
pub fn price_from_maximizer(tree: &ScenarioTree, spec: &UtilitySpec, solution: &ParetoSolution) -> Result<PriceProcess> {
    price_from_terminal(tree, spec, &solution.lambda_raw, &solution.terminal)
}

/// `Z_t^i = lambda^i E[U_i'(X^i) | F_t]` for nonnegative, nonzero `lambda`.
/// The right derivative is used where a holding is zero.
pub fn price_from_terminal(
    tree: &ScenarioTree,
    spec: &UtilitySpec,
    lambda: &[f64],
    terminal: &[Vec<f64>],
) -> Result<PriceProcess> {
    let d = spec.dim();
    if lambda.len() != d {
        return Err(Error::Dimension { expected: d, got: lambda.len() });
    }
    if lambda.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || lambda.iter().all(|w| *w == 0.0) {
        return Err(Error::InvalidParameter(format!("weights {lambda:?} must be nonnegative, finite and not all zero")));
    }
    crate::utility::check_terminal(tree, terminal, spec)?;
    let mut per_asset = Vec::with_capacity(d);
    for (i, u) in spec.assets.iter().enumerate() {
        let mut leaf_values = Vec::with_capacity(terminal.len());
        for (pos, v) in terminal.iter().enumerate() {
            if !(v[i] >= -NEGATIVE_HOLDING_TOL) {
                return Err(Error::NegativeHolding { leaf: tree.node(tree.leaves()[pos]).id.clone(), asset: i, value: v[i] });
            }
            leaf_values.push(lambda[i] * u.derivative(v[i].max(0.0)));
        }
        per_asset.push(tree.conditional_expectation_all(&leaf_values)?);
    }
    Ok(PriceProcess { dim: d, values: Adapted::from_fn(tree, |n| (0..d).map(|i| per_asset[i][n]).collect()) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    StrictlyConsistent,
    Consistent,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeValue {
    pub node: String,
    pub value: f64,
}

/// Strictness margin at a node; `None` when a frictionless pair's equality
/// is broken, which no margin can repair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMargin {
    pub node: String,
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorViolation {
    pub leaf: String,
    pub asset: usize,
    pub value: f64,
    pub floor: f64,
}

/// Whether the terminal holdings stay at or above the floor `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorCheck {
    pub delta: Vec<f64>,
    pub met: bool,
    pub violations: Vec<FloorViolation>,
}

/// Full residual report of a candidate price process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub verdict: Verdict,
    pub strict_requested: bool,
    /// Max-norm martingale residual per non-leaf node.
    pub martingale: Vec<NodeValue>,
    /// Largest inner product with a generator of `-K`; `<= 0` is membership.
    pub polar_slack: Vec<NodeValue>,
    /// Per-node strictness margins, when strict verification was requested.
    pub margins: Option<Vec<NodeMargin>>,
    /// `sum_i Z^i` per node; a node with zero mass is not a price.
    pub mass: Vec<NodeValue>,
    /// `(node, asset)` pairs with an identically-zero price coordinate.
    pub zero_coordinates: Vec<(String, usize)>,
    /// Absent when no terminal holdings were supplied.
    pub floor: Option<FloorCheck>,
    /// Human-readable reasons for failures and unmet strictness.
    pub notes: Vec<String>,
}

impl ConsistencyReport {
    pub fn max_martingale_residual(&self) -> f64 {
        self.martingale.iter().map(|v| v.value).fold(0.0, f64::max)
    }

    pub fn max_polar_slack(&self) -> f64 {
        self.polar_slack.iter().map(|v| v.value).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest strictness margin, `-inf` when some node has none.
    pub fn min_margin(&self) -> Option<f64> {
        self.margins.as_ref().map(|m| m.iter().map(|v| v.margin.unwrap_or(f64::NEG_INFINITY)).fold(f64::INFINITY, f64::min))
    }

    /// Verdict matches what was asked for: strict consistency when strict
    /// verification was requested, consistency otherwise.
    pub fn meets_request(&self) -> bool {
        match self.verdict {
            Verdict::StrictlyConsistent => true,
            Verdict::Consistent => !self.strict_requested,
            Verdict::Failed => false,
        }
    }

    /// False only when a floor was checked and missed.
    pub fn precondition_met(&self) -> bool {
        self.floor.as_ref().is_none_or(|f| f.met)
    }
}

/// Checks `z` against `process`: martingale residuals and polar membership
/// within `tol.membership`, nonzero mass at every node, strict margins above
/// `tol.strict_margin` when `strict`, and `terminal >= delta` when holdings
/// are supplied. Never fails on numerical content; shape errors only.
pub fn verify_consistency(
    z: &PriceProcess,
    tree: &ScenarioTree,
    process: &BidAskProcess,
    delta: &[f64],
    terminal: Option<&[Vec<f64>]>,
    strict: bool,
    tol: &Tolerances,
) -> Result<ConsistencyReport> {
    let d = process.dim();
    if z.dim != d || z.values.len() != tree.len() {
        return Err(Error::Dimension { expected: d, got: z.dim });
    }
    if delta.len() != d {
        return Err(Error::Dimension { expected: d, got: delta.len() });
    }
    let id = |n: usize| tree.node(n).id.clone();
    let mut notes = Vec::new();
    let mut failed = false;

    let residuals = z.martingale_residuals(tree);
    let mut martingale = Vec::new();
    for n in 0..tree.len() {
        if tree.node(n).children.is_empty() {
            continue;
        }
        let r = residuals[n];
        if !(r <= tol.membership) {
            failed = true;
            notes.push(format!("node {}: martingale residual {r:e}", id(n)));
        }
        martingale.push(NodeValue { node: id(n), value: r });
    }

    let mut slacks = Vec::with_capacity(tree.len());
    let mut mass = Vec::with_capacity(tree.len());
    let mut zero_coordinates = Vec::new();
    for n in 0..tree.len() {
        let w = z.at(n);
        let s = polar_slack(process.at(n), w)?;
        if !(s <= tol.membership) {
            failed = true;
            notes.push(format!("node {}: polar slack {s:e}", id(n)));
        }
        slacks.push(NodeValue { node: id(n), value: s });
        let m: f64 = w.iter().sum();
        if !(m > 0.0) {
            failed = true;
            notes.push(format!("node {}: zero price vector", id(n)));
        }
        mass.push(NodeValue { node: id(n), value: m });
        zero_coordinates.extend(w.iter().enumerate().filter(|(_, v)| **v == 0.0).map(|(i, _)| (id(n), i)));
    }
    if !zero_coordinates.is_empty() {
        notes.push(format!("{} zero price coordinates", zero_coordinates.len()));
    }

    let mut strictly = strict;
    let margins = if strict {
        let mut out = Vec::with_capacity(tree.len());
        for n in 0..tree.len() {
            let m = strict_margin(process.at(n), z.at(n))?;
            if !m.is_some_and(|m| m > tol.strict_margin) {
                strictly = false;
                notes.push(match m {
                    Some(m) => format!("node {}: strict margin {m:e}", id(n)),
                    None => format!("node {}: frictionless pair off its price ratio", id(n)),
                });
            }
            out.push(NodeMargin { node: id(n), margin: m });
        }
        Some(out)
    } else {
        None
    };

    let floor = match terminal {
        Some(terminal) => Some(floor_check(tree, terminal, delta)?),
        None => None,
    };
    if let Some(f) = floor.as_ref().filter(|f| !f.met) {
        notes.push(format!("terminal holdings below the floor at {} (leaf, asset) pairs", f.violations.len()));
    }

    let verdict = if failed {
        Verdict::Failed
    } else if strictly {
        Verdict::StrictlyConsistent
    } else {
        Verdict::Consistent
    };
    Ok(ConsistencyReport {
        verdict,
        strict_requested: strict,
        martingale,
        polar_slack: slacks,
        margins,
        mass,
        zero_coordinates,
        floor,
        notes,
    })
}

fn floor_check(tree: &ScenarioTree, terminal: &[Vec<f64>], delta: &[f64]) -> Result<FloorCheck> {
    if terminal.len() != tree.leaves().len() {
        return Err(Error::Dimension { expected: tree.leaves().len(), got: terminal.len() });
    }
    let mut violations = Vec::new();
    for (&leaf, v) in tree.leaves().iter().zip(terminal) {
        if v.len() != delta.len() {
            return Err(Error::Dimension { expected: delta.len(), got: v.len() });
        }
        for (i, (&x, &f)) in v.iter().zip(delta).enumerate() {
            if !(x >= f) {
                violations.push(FloorViolation { leaf: tree.node(leaf).id.clone(), asset: i, value: x, floor: f });
            }
        }
    }
    Ok(FloorCheck { delta: delta.to_vec(), met: violations.is_empty(), violations })
}

/// Result of [`strict_pipeline`]; emitted even when the floor is missed.
#[derive(Debug, Clone)]
pub struct StrictPipeline {
    pub z: PriceProcess,
    pub report: ConsistencyReport,
    pub shrunk: BidAskProcess,
    pub solution: ParetoSolution,
}

pub fn strict_pipeline(
    tree: &ScenarioTree,
    process: &BidAskProcess,
    theta: f64,
    x: &[f64],
    spec: &UtilitySpec,
    lambda: &[f64],
    delta: &[f64],
) -> Result<StrictPipeline> {
    strict_pipeline_with(tree, process, theta, x, spec, lambda, delta, &Tolerances::default())
}

/// Refuses unless NA^r holds; then shrinks spreads by `theta`, maximises
/// under the shrunk market, builds `Z` from the maximiser and verifies it
/// strictly against the original `process`.
#[allow(clippy::too_many_arguments)]
pub fn strict_pipeline_with(
    tree: &ScenarioTree,
    process: &BidAskProcess,
    theta: f64,
    x: &[f64],
    spec: &UtilitySpec,
    lambda: &[f64],
    delta: &[f64],
    tol: &Tolerances,
) -> Result<StrictPipeline> {
    if lambda.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidParameter(format!("weights {lambda:?} must be strictly positive")));
    }
    if !check_nar_with(tree, process, tol)?.holds {
        return Err(Error::NoRobustNoArbitrage);
    }
    let shrunk = shrink_spreads(tree, process, theta)?;
    let problem = Problem::new(tree, &shrunk, x, spec, tol)?;
    let solution = solve_scalarized_in(&problem, lambda, tol.fw_gap)?;
    let z = price_from_maximizer(tree, spec, &solution)?;
    let report = verify_consistency(&z, tree, process, delta, Some(&solution.terminal), true, tol)?;
    debug!(
        "strict pipeline: verdict {:?}, min margin {:?}, floor met {}",
        report.verdict,
        report.min_margin(),
        report.precondition_met()
    );
    Ok(StrictPipeline { z, report, shrunk, solution })
}
