//! No-arbitrage (NA) and robust no-arbitrage (NA^r) decisions.
//!
//! NA is decided by maximising the total terminal mass over attainable
//! positions from zero endowment; a positive value comes with a replayable
//! arbitrage plan. NA^r is decided through the existence of a strictly
//! consistent price process, found by an LP over per-node price vectors with
//! martingale and polar-cone rows and a maximised uniform margin.

use serde::{Deserialize, Serialize};

use crate::attainable::{assemble_constraints, realize, TransferPlan};
use crate::cones::{polar_slack, BidAskProcess};
use crate::error::{Error, Result};
use crate::lp::{feasibility_with_margin_tol, solve_lp_with, Direction, LinearProgram, LpStatus, Sense};
use crate::tolerance::Tolerances;
use crate::tree::{Adapted, ScenarioTree};

/// Replay tolerance of certificates.
pub const REPLAY_TOL: f64 = 1e-8;
/// A certificate must pay at least this much in some leaf component.
pub const CERTIFICATE_MIN_GAIN: f64 = 1e-6;

/// Adapted process of price vectors `Z_t(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceProcess {
    pub dim: usize,
    pub values: Adapted<Vec<f64>>,
}

/// JSON form of one node of a price process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceRecord {
    pub node: String,
    pub z: Vec<f64>,
}

impl PriceProcess {
    pub fn at(&self, node: usize) -> &[f64] {
        &self.values[node]
    }

    /// `max_i |sum_c p(c|n) Z(c)^i - Z(n)^i|` per node; zero at leaves.
    pub fn martingale_residuals(&self, tree: &ScenarioTree) -> Vec<f64> {
        (0..tree.len())
            .map(|n| {
                let node = tree.node(n);
                if node.children.is_empty() {
                    return 0.0;
                }
                (0..self.dim)
                    .map(|i| {
                        let avg: f64 = node.children.iter().map(|&c| tree.node(c).p * self.values[c][i]).sum();
                        (avg - self.values[n][i]).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn max_martingale_residual(&self, tree: &ScenarioTree) -> f64 {
        self.martingale_residuals(tree).into_iter().fold(0.0, f64::max)
    }

    /// Leaf values in the order of [`ScenarioTree::leaves`].
    pub fn terminal(&self, tree: &ScenarioTree) -> Vec<Vec<f64>> {
        tree.leaves().iter().map(|&l| self.values[l].clone()).collect()
    }

    pub fn to_records(&self, tree: &ScenarioTree) -> Vec<PriceRecord> {
        (0..tree.len()).map(|n| PriceRecord { node: tree.node(n).id.clone(), z: self.values[n].clone() }).collect()
    }

    pub fn from_records(tree: &ScenarioTree, dim: usize, records: &[PriceRecord]) -> Result<Self> {
        let mut values: Vec<Option<Vec<f64>>> = vec![None; tree.len()];
        for rec in records {
            let n = tree.lookup(&rec.node)?;
            if rec.z.len() != dim {
                return Err(Error::Dimension { expected: dim, got: rec.z.len() });
            }
            values[n] = Some(rec.z.clone());
        }
        let values = values
            .into_iter()
            .enumerate()
            .map(|(n, v)| v.ok_or_else(|| Error::UnknownNode(format!("price process lacks node {}", tree.node(n).id))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, values: Adapted { values } })
    }
}

/// Witness that NA fails: a plan from zero endowment whose terminal position
/// is nonnegative and nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct ArbitrageCertificate {
    pub plan: TransferPlan,
    /// `X_T` per leaf, in leaf order.
    pub terminal: Vec<Vec<f64>>,
    /// `(leaf id, asset, value)` for every component that pays at least
    /// [`CERTIFICATE_MIN_GAIN`].
    pub gains: Vec<(String, usize, f64)>,
}

impl ArbitrageCertificate {
    /// Builds a certificate from a plan, normalising so the largest terminal
    /// component equals one.
    pub fn from_plan(tree: &ScenarioTree, process: &BidAskProcess, plan: TransferPlan) -> Result<Self> {
        let zero = vec![0.0; process.dim()];
        let raw = realize(&plan, tree, process, &zero)?;
        let peak = raw.terminal.iter().flatten().copied().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Err(Error::InvalidCertificate("plan pays nothing at any leaf".into()));
        }
        let plan = plan.scaled(1.0 / peak);
        let terminal = realize(&plan, tree, process, &zero)?.terminal;
        let gains = gains_of(tree, &terminal);
        Ok(Self { plan, terminal, gains })
    }

    /// Replays the plan from zero endowment and checks every certificate
    /// invariant.
    pub fn validate(&self, tree: &ScenarioTree, process: &BidAskProcess) -> Result<()> {
        if self.plan.min_entry() < 0.0 {
            return Err(Error::InvalidCertificate("plan has negative weights".into()));
        }
        let zero = vec![0.0; process.dim()];
        let replay = realize(&self.plan, tree, process, &zero)?;
        if replay.terminal.len() != self.terminal.len() {
            return Err(Error::InvalidCertificate("terminal map has the wrong number of leaves".into()));
        }
        for (l, (a, b)) in replay.terminal.iter().zip(&self.terminal).enumerate() {
            for (i, (u, v)) in a.iter().zip(b).enumerate() {
                if (u - v).abs() > REPLAY_TOL {
                    return Err(Error::InvalidCertificate(format!(
                        "leaf {} asset {i}: replay gives {u}, certificate says {v}",
                        tree.node(tree.leaves()[l]).id
                    )));
                }
                if *u < -REPLAY_TOL {
                    return Err(Error::InvalidCertificate(format!(
                        "leaf {} asset {i}: terminal value {u} is negative",
                        tree.node(tree.leaves()[l]).id
                    )));
                }
            }
        }
        let pays = tree
            .leaves()
            .iter()
            .zip(&replay.terminal)
            .any(|(&l, v)| tree.prob(l) > 0.0 && v.iter().any(|&c| c >= CERTIFICATE_MIN_GAIN));
        if !pays {
            return Err(Error::InvalidCertificate("no leaf component reaches the minimum gain".into()));
        }
        Ok(())
    }
}

fn gains_of(tree: &ScenarioTree, terminal: &[Vec<f64>]) -> Vec<(String, usize, f64)> {
    let mut out = Vec::new();
    for (l, v) in terminal.iter().enumerate() {
        for (i, &c) in v.iter().enumerate() {
            if c >= CERTIFICATE_MIN_GAIN {
                out.push((tree.node(tree.leaves()[l]).id.clone(), i, c));
            }
        }
    }
    out
}

/// Outcome of [`check_na`].
#[derive(Debug, Clone, PartialEq)]
pub struct NaVerdict {
    pub holds: bool,
    /// Optimal total terminal mass over the unit-box arbitrage LP.
    pub value: f64,
    pub certificate: Option<ArbitrageCertificate>,
}

fn check_inputs(tree: &ScenarioTree, process: &BidAskProcess) -> Result<()> {
    if process.matrices().len() != tree.len() {
        return Err(Error::Dimension { expected: tree.len(), got: process.matrices().len() });
    }
    Ok(())
}

pub fn check_na(tree: &ScenarioTree, process: &BidAskProcess) -> Result<NaVerdict> {
    check_na_with(tree, process, &Tolerances::default())
}

/// Decides NA: maximise `sum_leaves sum_i X_T^i` over attainable positions
/// from zero endowment. NA holds iff the value is at most `tol.arbitrage`.
pub fn check_na_with(tree: &ScenarioTree, process: &BidAskProcess, tol: &Tolerances) -> Result<NaVerdict> {
    check_inputs(tree, process)?;
    let d = process.dim();
    let sk = assemble_constraints(tree, process, &vec![0.0; d])?;
    let ones = vec![1.0; sk.terminal_rows.len()];
    let lp = sk.lp_with_objective(sk.pullback(&ones));
    let out = solve_lp_with(&lp, tol)?;
    let (vector, value) = match out.status {
        LpStatus::Optimal => (out.primal.clone(), out.objective),
        LpStatus::Unbounded => {
            let ray = out.ray.clone().unwrap_or_default();
            let v: Vec<f64> = out.primal.iter().zip(&ray).map(|(p, r)| p + r).collect();
            (v, f64::INFINITY)
        }
        LpStatus::Infeasible => {
            return Err(Error::Lp("arbitrage LP infeasible although the zero plan is feasible".into()));
        }
    };
    if value <= tol.arbitrage {
        return Ok(NaVerdict { holds: true, value: value.max(0.0), certificate: None });
    }
    let plan = sk.layout.to_plan(tree, &vector);
    let cert = ArbitrageCertificate::from_plan(tree, process, plan)?;
    Ok(NaVerdict { holds: false, value, certificate: Some(cert) })
}

/// Outcome of [`find_price_process`].
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSearch {
    pub status: LpStatus,
    pub z: Option<PriceProcess>,
    /// Strict search: the maximal uniform margin. Non-strict search: the
    /// smallest per-node total price mass. Zero when infeasible.
    pub margin: f64,
}

pub fn find_price_process(tree: &ScenarioTree, process: &BidAskProcess, strict: bool) -> Result<PriceSearch> {
    find_price_process_with(tree, process, strict, &Tolerances::default())
}

/// LP search for a (strictly) consistent price process.
///
/// Variables `Z(n)^i >= 0`; martingale equalities at every non-leaf node;
/// polar rows `Z^j - pi^{ij} Z^i <= 0`; normalisation `sum_i Z_0^i = 1`. The
/// strict search maximises a margin `eps` added to nondegenerate polar rows
/// and to rows `-Z^i <= 0`. The non-strict search requires
/// `sum_i Z(n)^i >= tol.nonzero_mass` at every node.
pub fn find_price_process_with(
    tree: &ScenarioTree,
    process: &BidAskProcess,
    strict: bool,
    tol: &Tolerances,
) -> Result<PriceSearch> {
    check_inputs(tree, process)?;
    let d = process.dim();
    let var = |n: usize, i: usize| n * d + i;
    let mut lp = LinearProgram::new(tree.len() * d, Direction::Maximize);
    for n in 0..tree.len() {
        let node = tree.node(n);
        if node.children.is_empty() {
            continue;
        }
        for i in 0..d {
            let mut row: Vec<(usize, f64)> = node.children.iter().map(|&c| (var(c, i), tree.node(c).p)).collect();
            row.push((var(n, i), -1.0));
            lp.add_row(row, Sense::Eq, 0.0);
        }
    }
    let mut margin_rows = Vec::new();
    for n in 0..tree.len() {
        let pi = process.at(n);
        for i in 0..d {
            for j in 0..d {
                if i == j {
                    continue;
                }
                let r = lp.add_row(vec![(var(n, j), 1.0), (var(n, i), -pi.get(i, j))], Sense::Le, 0.0);
                if strict && !pi.is_degenerate(i, j) {
                    margin_rows.push(r);
                }
            }
        }
        if strict {
            for i in 0..d {
                margin_rows.push(lp.add_row(vec![(var(n, i), -1.0)], Sense::Le, 0.0));
            }
        } else {
            lp.add_row((0..d).map(|i| (var(n, i), 1.0)).collect(), Sense::Ge, tol.nonzero_mass);
        }
    }
    lp.add_row((0..d).map(|i| (var(tree.root(), i), 1.0)).collect(), Sense::Eq, 1.0);

    let to_process = |point: &[f64]| PriceProcess {
        dim: d,
        values: Adapted::from_fn(tree, |n| (0..d).map(|i| point[var(n, i)].max(0.0)).collect()),
    };
    if strict {
        let out = feasibility_with_margin_tol(&lp, &margin_rows, tol)?;
        Ok(match out.status {
            LpStatus::Infeasible => PriceSearch { status: out.status, z: None, margin: 0.0 },
            status => PriceSearch { status, z: Some(to_process(&out.point)), margin: out.epsilon },
        })
    } else {
        let out = solve_lp_with(&lp, tol)?;
        Ok(match out.status {
            LpStatus::Infeasible => PriceSearch { status: out.status, z: None, margin: 0.0 },
            status => {
                let z = to_process(&out.primal);
                let margin = z.values.iter().map(|v| v.iter().sum::<f64>()).fold(f64::INFINITY, f64::min);
                PriceSearch { status, z: Some(z), margin }
            }
        })
    }
}

/// Outcome of [`check_nar`].
#[derive(Debug, Clone, PartialEq)]
pub struct NarVerdict {
    pub holds: bool,
    pub margin: f64,
    /// Threshold the margin was compared against.
    pub threshold: f64,
    /// A strictly consistent price process when NA^r holds.
    pub certificate: Option<PriceProcess>,
}

pub fn check_nar(tree: &ScenarioTree, process: &BidAskProcess) -> Result<NarVerdict> {
    check_nar_with(tree, process, &Tolerances::default())
}

/// NA^r holds iff the strict price search reaches a margin above
/// `tol.strict_margin`.
pub fn check_nar_with(tree: &ScenarioTree, process: &BidAskProcess, tol: &Tolerances) -> Result<NarVerdict> {
    let search = find_price_process_with(tree, process, true, tol)?;
    let holds = search.margin > tol.strict_margin && search.z.is_some();
    Ok(NarVerdict {
        holds,
        margin: search.margin,
        threshold: tol.strict_margin,
        certificate: if holds { search.z } else { None },
    })
}

/// Residual report of the budget inequality `E<Z_T, X_T> <= <Z_0, x>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    /// `E_P<Z_T, X_T> - <Z_0, x>`.
    pub residual: f64,
    /// `E_{Q^i} X_T^i` with density `Z_T^i / Z_0^i`; `None` when `Z_0^i = 0`.
    pub expectations: Vec<Option<f64>>,
    /// `<Z_0, x> / Z_0^i`; `None` when `Z_0^i = 0`.
    pub bounds: Vec<Option<f64>>,
    /// Whether the residual is at most the accepted slack.
    pub holds: bool,
}

pub const BUDGET_TOL: f64 = 1e-7;

pub fn budget_bound(z: &PriceProcess, x: &[f64], terminal: &[Vec<f64>], tree: &ScenarioTree) -> BudgetReport {
    let d = z.dim;
    let z0 = z.at(tree.root());
    let wealth0: f64 = z0.iter().zip(x).map(|(a, b)| a * b).sum();
    let mut value = 0.0;
    let mut expectations = vec![0.0; d];
    for (pos, &leaf) in tree.leaves().iter().enumerate() {
        let p = tree.prob(leaf);
        let zl = z.at(leaf);
        for i in 0..d {
            value += p * zl[i] * terminal[pos][i];
            expectations[i] += p * zl[i] * terminal[pos][i];
        }
    }
    let residual = value - wealth0;
    let applicable = |i: usize| z0[i] > 0.0;
    BudgetReport {
        residual,
        expectations: (0..d).map(|i| applicable(i).then(|| expectations[i] / z0[i])).collect(),
        bounds: (0..d).map(|i| applicable(i).then(|| wealth0 / z0[i])).collect(),
        holds: residual <= BUDGET_TOL,
    }
}

/// Largest polar-membership violation of `z` over all nodes.
pub fn max_polar_slack(z: &PriceProcess, process: &BidAskProcess) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for (n, w) in z.values.iter().enumerate() {
        worst = worst.max(polar_slack(process.at(n), w)?);
    }
    Ok(worst)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::cones::{BidAskMatrix, BidAskProcess};
    use crate::tree::{two_leaf, ScenarioTree};

    /// Frictionless two-asset market with asset-2 price `s0` at the root and
    /// `up`/`down` at the leaves.
    pub fn frictionless(s0: f64, up: f64, down: f64) -> (ScenarioTree, BidAskProcess) {
        let tree = two_leaf(0.5);
        let m = |s: f64| BidAskMatrix::from_prices(&[1.0, s]);
        let process = BidAskProcess::new(&tree, vec![m(s0), m(up), m(down)]).unwrap();
        (tree, process)
    }

    /// Frictionless root at price 1; at both leaves the bid of asset 2 is 1
    /// and the ask 1.5. Consistent prices exist, but the martingale forces
    /// the leaf price ratio onto the bid, a face of the polar cone.
    pub fn boundary() -> (ScenarioTree, BidAskProcess) {
        let tree = two_leaf(0.5);
        let root = BidAskMatrix::frictionless(2);
        let leaf = BidAskMatrix::from_rows(&[vec![1.0, 1.5], vec![1.0, 1.0]]).unwrap();
        let process = BidAskProcess::new(&tree, vec![root, leaf.clone(), leaf]).unwrap();
        (tree, process)
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::cones::{shrink_spreads, BidAskMatrix};

    #[test]
    fn na_examples() {
        let (tree, pi) = frictionless(1.0, 2.0, 0.5);
        let v = check_na(&tree, &pi).unwrap();
        assert!(v.holds && v.certificate.is_none());

        let (tree, pi) = frictionless(1.0, 2.0, 1.5);
        let v = check_na(&tree, &pi).unwrap();
        assert!(!v.holds);
        let cert = v.certificate.unwrap();
        cert.validate(&tree, &pi).unwrap();
        assert!(!cert.gains.is_empty());
        assert!(cert.terminal.iter().flatten().all(|&v| v >= -1e-8));

        let tree = crate::tree::two_leaf(0.5);
        let pi = BidAskProcess::constant(&tree, BidAskMatrix::frictionless(1));
        assert!(check_na(&tree, &pi).unwrap().holds);
    }

    #[test]
    fn explicit_certificate_replays() {
        let (tree, pi) = frictionless(1.0, 2.0, 1.5);
        let mut plan = TransferPlan::zero(&tree, 2);
        plan.set_transfer(0, 0, 1, 1.0);
        plan.set_transfer(1, 1, 0, 2.0);
        plan.set_transfer(2, 1, 0, 1.5);
        let r = realize(&plan, &tree, &pi, &[0.0, 0.0]).unwrap();
        assert!((r.terminal[0][0] - 1.0).abs() < 1e-12 && (r.terminal[1][0] - 0.5).abs() < 1e-12);
        let cert = ArbitrageCertificate::from_plan(&tree, &pi, plan).unwrap();
        cert.validate(&tree, &pi).unwrap();
        assert_eq!(cert.gains.len(), 2);

        let zero = ArbitrageCertificate::from_plan(&tree, &pi, TransferPlan::zero(&tree, 2));
        assert!(matches!(zero, Err(Error::InvalidCertificate(_))));
        let forged = ArbitrageCertificate {
            plan: TransferPlan::zero(&tree, 2),
            terminal: vec![vec![1.0, 0.0], vec![0.0, 0.0]],
            gains: vec![],
        };
        assert!(forged.validate(&tree, &pi).is_err());
    }

    #[test]
    fn price_process_examples() {
        let (tree, pi) = frictionless(1.0, 2.0, 0.5);
        let s = find_price_process(&tree, &pi, false).unwrap();
        let z = s.z.unwrap();
        // Z^2 / Z^1 must equal the price; the martingale fixes q = 1/3 under asset 1.
        assert!(z.max_martingale_residual(&tree) <= 1e-12);
        for n in 0..3 {
            let s = [1.0, 2.0, 0.5][n];
            assert!((z.at(n)[1] - s * z.at(n)[0]).abs() <= 1e-9);
        }
        assert!((z.at(0)[0] - 0.5).abs() < 1e-9 && (z.at(0)[1] - 0.5).abs() < 1e-9);

        let v = check_nar(&tree, &pi).unwrap();
        assert!(v.holds && v.margin > 1e-7);
        let cert = v.certificate.unwrap();
        assert!(max_polar_slack(&cert, &pi).unwrap() <= 1e-9);

        let (tree, pi) = frictionless(1.0, 2.0, 1.5);
        assert!(find_price_process(&tree, &pi, true).unwrap().z.is_none());
        assert!(!check_nar(&tree, &pi).unwrap().holds);

        let tree = crate::tree::two_leaf(0.5);
        let pi = BidAskProcess::constant(&tree, BidAskMatrix::frictionless(1));
        let v = check_nar(&tree, &pi).unwrap();
        assert!(v.holds);
        let z = v.certificate.unwrap();
        assert!(z.values.iter().all(|w| (w[0] - 1.0).abs() < 1e-9));
    }

    #[test]
    fn boundary_instance_separates_na_and_nar() {
        let (tree, pi) = boundary();
        assert!(pi.validate(&tree).is_ok());
        assert!(check_na(&tree, &pi).unwrap().holds);
        let v = check_nar(&tree, &pi).unwrap();
        assert!(!v.holds, "margin {}", v.margin);
        assert!(v.margin.abs() <= 1e-9);
    }

    #[test]
    fn budget_examples() {
        let (tree, pi) = frictionless(1.0, 2.0, 0.5);
        let z = check_nar(&tree, &pi).unwrap().certificate.unwrap();
        let x = [1.0, 1.0];
        let zero = realize(&TransferPlan::zero(&tree, 2), &tree, &pi, &x).unwrap();
        let rep = budget_bound(&z, &x, &zero.terminal, &tree);
        assert!(rep.residual.abs() <= 1e-12 && rep.holds);
        let mut plan = TransferPlan::zero(&tree, 2);
        plan.set_disposal(1, 0, 0.5);
        let r = realize(&plan, &tree, &pi, &x).unwrap();
        let rep = budget_bound(&z, &x, &r.terminal, &tree);
        assert!(rep.residual < 0.0);
        assert!(rep.expectations.iter().all(Option::is_some));
    }

    #[test]
    fn nar_survives_shrinking() {
        let (tree, pi) = frictionless(1.0, 2.0, 0.5);
        let mut m = pi.matrices().to_vec();
        m[0] = BidAskMatrix::from_rows(&[vec![1.0, 1.2], vec![1.0 / 0.9, 1.0]]).unwrap();
        let pi = BidAskProcess::new(&tree, m).unwrap();
        assert!(check_nar(&tree, &pi).unwrap().holds);
        for theta in [0.25, 0.5] {
            let shrunk = shrink_spreads(&tree, &pi, theta).unwrap();
            assert!(check_na(&tree, &shrunk).unwrap().holds);
        }
    }

    #[test]
    fn price_records_round_trip() {
        let (tree, pi) = frictionless(1.0, 2.0, 0.5);
        let z = check_nar(&tree, &pi).unwrap().certificate.unwrap();
        let recs = z.to_records(&tree);
        assert_eq!(PriceProcess::from_records(&tree, 2, &recs).unwrap(), z);
        assert!(PriceProcess::from_records(&tree, 2, &recs[..2]).is_err());
    }
}
