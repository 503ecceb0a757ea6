//! Vector expected-utility maximisation by scalarisation, Pareto
//! maximality, domination and the arbitrage improvement construction.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arbitrage::{check_na_with, ArbitrageCertificate};
use crate::attainable::{assemble_constraints, realize, Skeleton, TransferPlan};
use crate::cones::BidAskProcess;
use crate::error::{Error, Result};
use crate::fw::{maximize, Atom, Barrier, FwState, Objective, Oracle, UtilityField, Weighted};
use crate::lp::{solve_lp_with, Direction, LinearProgram, LpStatus, Sense};
use crate::tolerance::Tolerances;
use crate::tree::ScenarioTree;
use crate::utility::{check_terminal, expected_utility_difference, expected_utility_unchecked, UtilitySpec};

/// Decreases in any component of an improvement beyond this count as losses.
pub const IMPROVEMENT_NO_LOSS: f64 = 1e-12;
/// Target utility gain when scaling an arbitrage certificate.
pub const IMPROVEMENT_TARGET: f64 = 1e-6;
/// Barrier weights, from coarse to fine.
const BARRIER_SCHEDULE: [f64; 8] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9];
/// Relaxation of the barrier's lower-bound rows.
const BARRIER_ETA: f64 = 1e-12;

/// A (near-)maximiser of a scalarised problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoSolution {
    /// Weights as supplied.
    pub lambda_raw: Vec<f64>,
    /// Weights normalised to sum to one (the weights actually solved with).
    pub lambda: Vec<f64>,
    pub plan: TransferPlan,
    /// `X_T` per leaf, in leaf order.
    pub terminal: Vec<Vec<f64>>,
    pub utilities: Vec<f64>,
    /// Final Frank–Wolfe gap of the normalised scalarised objective.
    pub gap: f64,
    pub iterations: usize,
}

/// Everything the solvers need about one `(tree, Pi, x, U)` problem.
pub struct Problem<'a> {
    pub tree: &'a ScenarioTree,
    pub process: &'a BidAskProcess,
    pub x: Vec<f64>,
    pub spec: &'a UtilitySpec,
    pub skeleton: Skeleton,
    pub field: UtilityField,
    pub tol: Tolerances,
}

impl<'a> Problem<'a> {
    pub fn new(
        tree: &'a ScenarioTree,
        process: &'a BidAskProcess,
        x: &[f64],
        spec: &'a UtilitySpec,
        tol: &Tolerances,
    ) -> Result<Self> {
        spec.validate()?;
        if spec.dim() != process.dim() {
            return Err(Error::Dimension { expected: process.dim(), got: spec.dim() });
        }
        let skeleton = assemble_constraints(tree, process, x)?;
        let field = UtilityField {
            dim: process.dim(),
            probs: tree.leaves().iter().map(|&l| tree.prob(l)).collect(),
            assets: spec.assets.clone(),
        };
        Ok(Self { tree, process, x: x.to_vec(), spec, skeleton, field, tol: *tol })
    }

    pub fn dim(&self) -> usize {
        self.field.dim
    }

    pub fn flatten(&self, terminal: &[Vec<f64>]) -> Vec<f64> {
        terminal.iter().flatten().copied().collect()
    }

    pub fn unflatten(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        flat.chunks(self.dim()).map(<[f64]>::to_vec).collect()
    }

    pub fn zero_atom(&self) -> Atom {
        let v = vec![0.0; self.skeleton.layout.num_vars()];
        let x = self.skeleton.terminal(&v);
        Atom { v, x }
    }

    /// A plan reaching exactly `terminal` (least total weight), with no box
    /// on transfers.
    pub fn plan_for(&self, terminal: &[Vec<f64>]) -> Result<Atom> {
        check_terminal(self.tree, terminal, self.spec)?;
        let flat = self.flatten(terminal);
        let n = self.skeleton.layout.num_vars();
        let mut lp = LinearProgram::new(n, Direction::Minimize);
        lp.objective = vec![1.0; n];
        for (r, row) in self.skeleton.terminal_rows.iter().enumerate() {
            lp.add_row(row.clone(), Sense::Eq, flat[r] - self.x[r % self.dim()]);
        }
        let out = solve_lp_with(&lp, &self.tol)?;
        if out.status != LpStatus::Optimal || lp.primal_residual(&out.primal) > 1e-8 {
            return Err(Error::NotAttainable(format!("no self-financing plan reaches the position ({:?})", out.status)));
        }
        let v: Vec<f64> = out.primal.into_iter().map(|a| a.max(0.0)).collect();
        Ok(Atom { v, x: flat })
    }

    fn solution(&self, raw: &[f64], lambda: Vec<f64>, state: &FwState, gap: f64) -> ParetoSolution {
        let v = state.plan_vector();
        let plan = self.skeleton.layout.to_plan(self.tree, &v);
        let terminal: Vec<Vec<f64>> = realize(&plan, self.tree, self.process, &self.x)
            .map(|r| r.terminal)
            .unwrap_or_else(|_| self.unflatten(&state.x))
            .into_iter()
            .map(|v| v.into_iter().map(|c| c.max(0.0)).collect())
            .collect();
        let utilities = expected_utility_unchecked(self.tree, &terminal, self.spec);
        ParetoSolution { lambda_raw: raw.to_vec(), lambda, plan, terminal, utilities, gap, iterations: state.iterations }
    }
}

fn normalize(lambda: &[f64], d: usize) -> Result<Vec<f64>> {
    if lambda.len() != d {
        return Err(Error::Dimension { expected: d, got: lambda.len() });
    }
    if lambda.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidParameter(format!("weights {lambda:?} must be finite and strictly positive")));
    }
    let s: f64 = lambda.iter().sum();
    Ok(lambda.iter().map(|w| w / s).collect())
}

pub fn solve_scalarized(
    tree: &ScenarioTree,
    process: &BidAskProcess,
    x: &[f64],
    spec: &UtilitySpec,
    lambda: &[f64],
    tol: f64,
) -> Result<ParetoSolution> {
    let problem = Problem::new(tree, process, x, spec, &Tolerances::default())?;
    solve_scalarized_in(&problem, lambda, tol)
}

/// Maximises `<lambda, E U(X_T)>` over attainable `X_T` by conditional
/// gradient from the zero plan; fails with [`Error::NotConverged`] when the
/// gap stays above `tol` after the iteration cap.
pub fn solve_scalarized_in(problem: &Problem, lambda: &[f64], tol: f64) -> Result<ParetoSolution> {
    let weights = normalize(lambda, problem.dim())?;
    let obj = Weighted { field: &problem.field, weights: weights.clone() };
    let mut oracle = Oracle::new(&problem.skeleton, &problem.tol);
    let state = maximize(&obj, &mut oracle, FwState::from_atom(problem.zero_atom()), tol)?;
    if !state.converged {
        return Err(Error::NotConverged { iterations: state.iterations, gap: state.gap });
    }
    debug!("scalarized solve: {} iterations, gap {:e}", state.iterations, state.gap);
    Ok(problem.solution(lambda, weights, &state, state.gap))
}

/// Frank–Wolfe gap of the normalised scalarised objective at `plan`,
/// recomputed from scratch with a fresh oracle call.
pub fn fw_gap_at(problem: &Problem, lambda: &[f64], plan: &TransferPlan) -> Result<f64> {
    let weights = normalize(lambda, problem.dim())?;
    let obj = Weighted { field: &problem.field, weights };
    let v = problem.skeleton.layout.to_vector(plan);
    let x = problem.skeleton.terminal(&v);
    let mut oracle = Oracle::new(&problem.skeleton, &problem.tol);
    Ok(oracle.gap(&obj, &x)?.0)
}

/// Outcome of [`is_pareto_maximal`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoCheck {
    pub maximal: bool,
    /// Upper bound on the total componentwise improvement, from the
    /// linearisation of the concave utilities at the candidate. Infinite
    /// when the market admits arbitrage.
    pub bound: f64,
    /// Total improvement achieved by the dominator (zero if none).
    pub improvement: f64,
    pub dominator: Option<Vec<Vec<f64>>>,
}

pub fn is_pareto_maximal(
    tree: &ScenarioTree,
    process: &BidAskProcess,
    x: &[f64],
    spec: &UtilitySpec,
    candidate: &[Vec<f64>],
    tol: f64,
) -> Result<ParetoCheck> {
    let problem = Problem::new(tree, process, x, spec, &Tolerances::default())?;
    is_pareto_maximal_in(&problem, candidate, tol)
}

/// Decides Pareto maximality of `candidate` up to `tol` in total improvement.
///
/// 1. When NA fails, nothing is maximal: the arbitrage improvement is the
///    dominator.
/// 2. The LP `max sum s_i` subject to `grad h_i(X_c) . (Y - X_c) >= s_i`,
///    `s >= 0`, `Y` attainable, bounds the improvement problem from above by
///    concavity; a value at most `tol` certifies maximality.
/// 3. Otherwise the improvement problem `max sum_i h_i(Y)` subject to
///    `h_i(Y) >= h_i(X_c)` is solved by a barrier method and the achieved
///    improvement decides.
pub fn is_pareto_maximal_in(problem: &Problem, candidate: &[Vec<f64>], tol: f64) -> Result<ParetoCheck> {
    check_candidate(problem, candidate)?;
    let na = check_na_with(problem.tree, problem.process, &problem.tol)?;
    if let Some(cert) = na.certificate {
        let imp = improvement_from_arbitrage_in(problem, candidate, &cert)?;
        let improvement = imp.gains.iter().sum();
        return Ok(ParetoCheck { maximal: false, bound: f64::INFINITY, improvement, dominator: Some(imp.terminal) });
    }
    let bound = linearized_improvement_bound(problem, candidate)?;
    if bound <= tol {
        return Ok(ParetoCheck { maximal: true, bound, improvement: 0.0, dominator: None });
    }
    let start = problem.plan_for(candidate)?;
    let (state, _) = barrier_solve(problem, start, 0.1 * tol)?;
    let y = problem.unflatten(&state.x.iter().map(|c| c.max(0.0)).collect::<Vec<_>>());
    let gains = expected_utility_difference(problem.tree, candidate, &y, problem.spec)?;
    let improvement: f64 = gains.iter().sum();
    let dominates = gains.iter().all(|g| *g >= -IMPROVEMENT_NO_LOSS);
    if improvement > tol && dominates {
        return Ok(ParetoCheck { maximal: false, bound, improvement, dominator: Some(y) });
    }
    if !state.converged {
        return Err(Error::NotConverged { iterations: state.iterations, gap: state.gap });
    }
    Ok(ParetoCheck { maximal: true, bound, improvement: improvement.max(0.0), dominator: None })
}

fn check_candidate(problem: &Problem, candidate: &[Vec<f64>]) -> Result<()> {
    check_terminal(problem.tree, candidate, problem.spec)?;
    for (pos, v) in candidate.iter().enumerate() {
        if let Some((i, c)) = v.iter().enumerate().find(|(_, c)| !(**c >= -1e-9)) {
            return Err(Error::NegativeHolding {
                leaf: problem.tree.node(problem.tree.leaves()[pos]).id.clone(),
                asset: i,
                value: *c,
            });
        }
    }
    Ok(())
}

/// Optimal value of the one-cut linearisation of the improvement problem.
pub fn linearized_improvement_bound(problem: &Problem, candidate: &[Vec<f64>]) -> Result<f64> {
    let d = problem.dim();
    let sk = &problem.skeleton;
    let flat = problem.flatten(candidate);
    let grads = problem.field.marginals(&flat);
    let n = sk.layout.num_vars();
    let mut lp = sk.lp.clone();
    lp.objective = vec![0.0; n];
    let s: Vec<usize> = (0..d).map(|_| lp.add_var(1.0, 0.0, f64::INFINITY)).collect();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); d];
    let mut rhs = vec![0.0; d];
    let pulled: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let g: Vec<f64> = grads.iter().enumerate().map(|(r, &v)| if r % d == i { v } else { 0.0 }).collect();
            rhs[i] = g.iter().enumerate().map(|(r, gv)| gv * (flat[r] - problem.x[r % d])).sum();
            sk.pullback(&g)
        })
        .collect();
    for i in 0..d {
        rows[i] = pulled[i].iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(k, c)| (k, *c)).collect();
        rows[i].push((s[i], -1.0));
    }
    for (i, row) in rows.into_iter().enumerate() {
        lp.add_row(row, Sense::Ge, rhs[i]);
    }
    let out = solve_lp_with(&lp, &problem.tol)?;
    match out.status {
        LpStatus::Optimal => Ok(out.objective.max(0.0)),
        LpStatus::Unbounded => Ok(f64::INFINITY),
        LpStatus::Infeasible => Err(Error::NotAttainable("candidate lies outside the attainable polytope".into())),
    }
}

/// Barrier continuation for the improvement problem from `start`; returns
/// the final state and barrier weights.
fn barrier_solve(problem: &Problem, start: Atom, final_gap: f64) -> Result<(FwState, Vec<f64>)> {
    let base = start.x.clone();
    let mut state = FwState::from_atom(start);
    let mut oracle = Oracle::new(&problem.skeleton, &problem.tol);
    let mut weights = vec![1.0; problem.dim()];
    for (k, &tau) in BARRIER_SCHEDULE.iter().enumerate() {
        let obj = Barrier { field: &problem.field, base: base.clone(), tau, eta: BARRIER_ETA };
        let last = k + 1 == BARRIER_SCHEDULE.len();
        let gap_tol = if last { final_gap } else { final_gap.max(tau * 1e-2) };
        state.converged = false;
        state = maximize(&obj, &mut oracle, state, gap_tol)?;
        weights = obj.weights(&state.x);
        debug_assert!(obj.value(&state.x).is_some());
    }
    Ok((state, weights))
}

pub fn domination_point(
    tree: &ScenarioTree,
    process: &BidAskProcess,
    x: &[f64],
    spec: &UtilitySpec,
    terminal: &[Vec<f64>],
    tol: f64,
) -> Result<ParetoSolution> {
    let problem = Problem::new(tree, process, x, spec, &Tolerances::default())?;
    domination_point_in(&problem, terminal, tol)
}

/// A Pareto maximiser dominating `terminal`: the solution of the
/// improvement problem, which maximises `sum_i w_i h_i` for the barrier
/// multipliers `w >= 1`; those weights (normalised) are reported as lambda.
pub fn domination_point_in(problem: &Problem, terminal: &[Vec<f64>], tol: f64) -> Result<ParetoSolution> {
    check_candidate(problem, terminal)?;
    let na = check_na_with(problem.tree, problem.process, &problem.tol)?;
    if !na.holds {
        return Err(Error::Arbitrage("no Pareto maximiser exists; every position can be improved".into()));
    }
    let start = problem.plan_for(terminal)?;
    let (state, weights) = barrier_solve(problem, start, 0.1 * tol)?;
    if !state.converged {
        return Err(Error::NotConverged { iterations: state.iterations, gap: state.gap });
    }
    let total: f64 = weights.iter().sum();
    let lambda: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let obj = Weighted { field: &problem.field, weights: lambda.clone() };
    let mut oracle = Oracle::new(&problem.skeleton, &problem.tol);
    let gap = oracle.gap(&obj, &state.x)?.0;
    Ok(problem.solution(&weights, lambda, &state, gap))
}

/// Candidate plus a scaled arbitrage.
#[derive(Debug, Clone, PartialEq)]
pub struct Improvement {
    /// `X_c + scale * X_arb`, per leaf.
    pub terminal: Vec<Vec<f64>>,
    pub scale: f64,
    /// `E U(improved) - E U(candidate)`, componentwise.
    pub gains: Vec<f64>,
}

impl Improvement {
    /// The concatenated plan: the candidate's plan plus the scaled arbitrage.
    pub fn plan(&self, candidate_plan: &TransferPlan, cert: &ArbitrageCertificate) -> Result<TransferPlan> {
        candidate_plan.plus(&cert.plan.scaled(self.scale))
    }
}

pub fn improvement_from_arbitrage(
    tree: &ScenarioTree,
    process: &BidAskProcess,
    x: &[f64],
    spec: &UtilitySpec,
    candidate: &[Vec<f64>],
    cert: &ArbitrageCertificate,
) -> Result<Improvement> {
    let problem = Problem::new(tree, process, x, spec, &Tolerances::default())?;
    improvement_from_arbitrage_in(&problem, candidate, cert)
}

/// Adds the certificate's terminal position to the candidate, doubling its
/// scale until some component gains at least [`IMPROVEMENT_TARGET`].
pub fn improvement_from_arbitrage_in(
    problem: &Problem,
    candidate: &[Vec<f64>],
    cert: &ArbitrageCertificate,
) -> Result<Improvement> {
    check_candidate(problem, candidate)?;
    cert.validate(problem.tree, problem.process)?;
    let gain_at = |scale: f64| -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let terminal: Vec<Vec<f64>> = candidate
            .iter()
            .zip(&cert.terminal)
            .map(|(c, a)| c.iter().zip(a).map(|(u, v)| u + scale * v).collect())
            .collect();
        let gains = expected_utility_difference(problem.tree, candidate, &terminal, problem.spec)?;
        Ok((terminal, gains))
    };
    let mut scale = 1.0;
    let (mut terminal, mut gains) = gain_at(scale)?;
    for _ in 0..64 {
        if gains.iter().copied().fold(f64::NEG_INFINITY, f64::max) >= IMPROVEMENT_TARGET {
            break;
        }
        scale *= 2.0;
        (terminal, gains) = gain_at(scale)?;
    }
    Ok(Improvement { terminal, scale, gains })
}

/// One entry of a weight sweep.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub lambda: Vec<f64>,
    pub result: std::result::Result<ParetoSolution, String>,
}

/// Interior points of the simplex grid `{m in Z^d_{>0} : sum m = N}` for the
/// smallest `N` with at least `n` points; the first `n` in lexicographic
/// order, normalised.
pub fn simplex_grid(d: usize, n: usize) -> Vec<Vec<f64>> {
    if d == 0 || n == 0 {
        return Vec::new();
    }
    if d == 1 {
        return vec![vec![1.0]];
    }
    let mut total = d;
    loop {
        let mut points = Vec::new();
        let mut cur = vec![0usize; d];
        compositions(total, 0, &mut cur, &mut points);
        if points.len() >= n {
            points.truncate(n);
            return points.into_iter().map(|m| m.iter().map(|&k| k as f64 / total as f64).collect()).collect();
        }
        total += 1;
    }
}

fn compositions(remaining: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let d = cur.len();
    if k + 1 == d {
        if remaining >= 1 {
            cur[k] = remaining;
            out.push(cur.clone());
        }
        return;
    }
    for m in 1..=remaining.saturating_sub(d - k - 1) {
        cur[k] = m;
        compositions(remaining - m, k + 1, cur, out);
    }
}

/// One scalarised solve per weight vector, in parallel; sorted by weights.
pub fn pareto_front_sweep(
    tree: &ScenarioTree,
    process: &BidAskProcess,
    x: &[f64],
    spec: &UtilitySpec,
    grid: &[Vec<f64>],
    tol: f64,
) -> Result<Vec<SweepEntry>> {
    pareto_front_sweep_with(tree, process, x, spec, grid, tol, &Tolerances::default())
}

pub fn pareto_front_sweep_with(
    tree: &ScenarioTree,
    process: &BidAskProcess,
    x: &[f64],
    spec: &UtilitySpec,
    grid: &[Vec<f64>],
    tol: f64,
    tols: &Tolerances,
) -> Result<Vec<SweepEntry>> {
    // Validate the shared inputs once.
    Problem::new(tree, process, x, spec, tols)?;
    let mut entries: Vec<SweepEntry> = grid
        .par_iter()
        .map(|lambda| {
            let result = Problem::new(tree, process, x, spec, tols)
                .and_then(|p| solve_scalarized_in(&p, lambda, tol))
                .map_err(|e| e.to_string());
            SweepEntry { lambda: lambda.clone(), result }
        })
        .collect();
    entries.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).unwrap_or(std::cmp::Ordering::Equal));
    Ok(entries)
}

/// Whether `a` dominates `b` by more than `tol`: `a >= b - tol`
/// componentwise with some component larger by more than `tol`.
pub fn dominates(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| *x >= y - tol) && a.iter().zip(b).any(|(x, y)| *x > y + tol)
}

/// JSON summary of a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub lambda_raw: Vec<f64>,
    pub lambda: Vec<f64>,
    pub utilities: Vec<f64>,
    pub gap: f64,
    pub iterations: usize,
}

impl From<&ParetoSolution> for SolutionSummary {
    fn from(s: &ParetoSolution) -> Self {
        Self {
            lambda_raw: s.lambda_raw.clone(),
            lambda: s.lambda.clone(),
            utilities: s.utilities.clone(),
            gap: s.gap,
            iterations: s.iterations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arbitrage::check_na;
    use crate::arbitrage::fixtures::frictionless;
    use crate::cones::BidAskMatrix;
    use crate::tree::two_leaf;
    use crate::utility::AssetUtility;

    fn exp_spec(d: usize) -> UtilitySpec {
        UtilitySpec::uniform(d, AssetUtility::exp(1.0)).unwrap()
    }

    #[test]
    fn single_asset_keeps_endowment() {
        let tree = two_leaf(0.5);
        let pi = BidAskProcess::constant(&tree, BidAskMatrix::frictionless(1));
        let sol = solve_scalarized(&tree, &pi, &[1.0], &exp_spec(1), &[3.0], 1e-6).unwrap();
        assert_eq!(sol.gap, 0.0);
        assert_eq!(sol.iterations, 0);
        assert!(sol.terminal.iter().all(|v| v == &vec![1.0]));
        assert_eq!(sol.lambda, vec![1.0]);
    }

    #[test]
    fn deterministic_reallocation_equalizes() {
        let tree = ScenarioTree::from_file(&crate::tree::TreeFile {
            horizon: 1,
            nodes: vec![
                crate::tree::NodeRecord { id: "r".into(), t: 0, parent: None, p: None },
                crate::tree::NodeRecord { id: "r.0".into(), t: 1, parent: Some("r".into()), p: Some(1.0) },
            ],
        })
        .unwrap();
        let pi = BidAskProcess::constant(&tree, BidAskMatrix::frictionless(2));
        let sol = solve_scalarized(&tree, &pi, &[2.0, 0.0], &exp_spec(2), &[1.0, 1.0], 1e-9).unwrap();
        assert!((sol.terminal[0][0] - 1.0).abs() < 1e-4 && (sol.terminal[0][1] - 1.0).abs() < 1e-4);
        let target = 1.0 - (-1.0f64).exp();
        assert!(sol.utilities.iter().all(|u| (u - target).abs() < 1e-8));
    }

    #[test]
    fn frictionless_two_leaf_solve_and_pareto() {
        let (tree, pi) = frictionless(1.0, 2.0, 0.5);
        let spec = exp_spec(2);
        let x = [1.0, 1.0];
        let sol = solve_scalarized(&tree, &pi, &x, &spec, &[1.0, 1.0], 1e-6).unwrap();
        assert!(sol.gap <= 1e-6);
        let no_trade = expected_vector_utility_of(&tree, &spec, &vec![x.to_vec(); 2]);
        assert!(sol.utilities.iter().sum::<f64>() >= no_trade.iter().sum::<f64>() - 1e-12);
        let problem = Problem::new(&tree, &pi, &x, &spec, &Tolerances::default()).unwrap();
        assert!(fw_gap_at(&problem, &[1.0, 1.0], &sol.plan).unwrap() <= 1e-6 + 1e-12);
        let check = is_pareto_maximal(&tree, &pi, &x, &spec, &sol.terminal, 1e-5).unwrap();
        assert!(check.maximal, "bound {}", check.bound);

        // No trade is dominated here: prices move, so reallocating helps.
        let check = is_pareto_maximal(&tree, &pi, &x, &spec, &vec![x.to_vec(); 2], 1e-5).unwrap();
        assert!(!check.maximal);
        let dom = check.dominator.unwrap();
        let gains = expected_utility_difference(&tree, &vec![x.to_vec(); 2], &dom, &spec).unwrap();
        assert!(gains.iter().all(|g| *g >= -1e-12) && gains.iter().sum::<f64>() > 1e-5);

        let dp = domination_point(&tree, &pi, &x, &spec, &vec![x.to_vec(); 2], 1e-5).unwrap();
        let gains = expected_utility_difference(&tree, &vec![x.to_vec(); 2], &dp.terminal, &spec).unwrap();
        assert!(gains.iter().all(|g| *g >= -1e-7) && gains.iter().any(|g| *g > 1e-6));
        assert!(is_pareto_maximal(&tree, &pi, &x, &spec, &dp.terminal, 1e-5).unwrap().maximal);
    }

    fn expected_vector_utility_of(tree: &ScenarioTree, spec: &UtilitySpec, t: &[Vec<f64>]) -> Vec<f64> {
        crate::utility::expected_vector_utility(tree, t, spec).unwrap()
    }

    #[test]
    fn wasteful_disposal_is_not_maximal() {
        let (tree, pi) = frictionless(1.0, 2.0, 0.5);
        let spec = exp_spec(2);
        let x = [1.0, 1.0];
        let sol = solve_scalarized(&tree, &pi, &x, &spec, &[1.0, 1.0], 1e-7).unwrap();
        let mut wasted = sol.plan.clone();
        wasted.set_disposal(0, 0, 0.3);
        let t = realize(&wasted, &tree, &pi, &x).unwrap().terminal;
        let check = is_pareto_maximal(&tree, &pi, &x, &spec, &t, 1e-5).unwrap();
        assert!(!check.maximal && check.improvement > 1e-5);
    }

    #[test]
    fn arbitrage_improves_everything() {
        let (tree, pi) = frictionless(1.0, 2.0, 1.5);
        let spec = exp_spec(2);
        let x = [1.0, 1.0];
        let cert = check_na(&tree, &pi).unwrap().certificate.unwrap();
        let candidate = vec![x.to_vec(); 2];
        let imp = improvement_from_arbitrage(&tree, &pi, &x, &spec, &candidate, &cert).unwrap();
        assert!(imp.gains.iter().all(|g| *g >= -1e-12));
        assert!(imp.gains.iter().any(|g| *g >= 1e-9));
        let plan = imp.plan(&TransferPlan::zero(&tree, 2), &cert).unwrap();
        let replay = realize(&plan, &tree, &pi, &x).unwrap().terminal;
        for (a, b) in replay.iter().flatten().zip(imp.terminal.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
        let check = is_pareto_maximal(&tree, &pi, &x, &spec, &candidate, 1e-5).unwrap();
        assert!(!check.maximal && check.bound.is_infinite());
        assert!(domination_point(&tree, &pi, &x, &spec, &candidate, 1e-5).is_err());

        let forged = ArbitrageCertificate { plan: TransferPlan::zero(&tree, 2), terminal: vec![vec![0.0; 2]; 2], gains: vec![] };
        assert!(matches!(
            improvement_from_arbitrage(&tree, &pi, &x, &spec, &candidate, &forged),
            Err(Error::InvalidCertificate(_))
        ));
    }

    #[test]
    fn sweep_is_mutually_non_dominating() {
        let (tree, pi) = frictionless(1.0, 2.0, 0.5);
        let spec = exp_spec(2);
        let grid = simplex_grid(2, 5);
        assert_eq!(grid.len(), 5);
        let out = pareto_front_sweep(&tree, &pi, &[1.0, 1.0], &spec, &grid, 1e-7).unwrap();
        let utils: Vec<Vec<f64>> = out.iter().map(|e| e.result.as_ref().unwrap().utilities.clone()).collect();
        for a in &utils {
            for b in &utils {
                assert!(!dominates(a, b, 1e-6));
            }
        }
        // More weight on asset 1 never lowers its utility.
        assert!(utils.windows(2).all(|w| w[0][0] <= w[1][0] + 1e-6));
    }

    #[test]
    fn scaling_lambda_leaves_solution() {
        let (tree, pi) = frictionless(1.0, 2.0, 0.5);
        let spec = exp_spec(2);
        let a = solve_scalarized(&tree, &pi, &[1.0, 1.0], &spec, &[1.0, 1.0], 1e-7).unwrap();
        let b = solve_scalarized(&tree, &pi, &[1.0, 1.0], &spec, &[2.0, 2.0], 1e-7).unwrap();
        assert_eq!(a.utilities, b.utilities);
        assert_eq!(b.lambda_raw, vec![2.0, 2.0]);
        assert!(solve_scalarized(&tree, &pi, &[1.0, 1.0], &spec, &[1.0, 0.0], 1e-7).is_err());
    }

    #[test]
    fn grid_shapes() {
        assert_eq!(simplex_grid(1, 3), vec![vec![1.0]]);
        let g = simplex_grid(3, 4);
        assert_eq!(g.len(), 4);
        assert!(g.iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-12 && p.iter().all(|w| *w > 0.0)));
    }
}
