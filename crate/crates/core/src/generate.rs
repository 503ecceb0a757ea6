//! Seeded random instances, stratified by construction.
//!
//! * `roundtrip`: a random strictly positive martingale `Z` and spreads
//!   `pi^{ij} = (Z^j / Z^i)(1 + s)` around its ratios, closed under the
//!   triangle axiom. `Z` is strictly consistent, so NA^r holds.
//! * `arbitrage`: a round-trip instance whose asset-`j` price jumps on every
//!   branch after one node, so that the bid at every child exceeds the ask at
//!   the node. NA fails.
//! * `boundary`: one pair is frictionless at a node, and at every child the
//!   bid equals the node's price. Consistent prices exist but all of them sit
//!   on a face of the polar cone: NA holds, NA^r fails.
//! * `free`: random prices and spreads with no guarantee either way.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arbitrage::PriceProcess;
use crate::attainable::{realize, PlanLayout, TransferPlan};
use crate::cones::{triangle_closure, BidAskMatrix, BidAskProcess};
use crate::error::{Error, Result};
use crate::tree::{generate_random_tree, Adapted, ScenarioTree};

/// Round-trip spreads are drawn from this range.
pub const SPREAD_RANGE: (f64, f64) = (0.05, 0.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceKind {
    Free,
    Arbitrage,
    Boundary,
    Roundtrip,
}

impl InstanceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            InstanceKind::Free => "free",
            InstanceKind::Arbitrage => "arbitrage",
            InstanceKind::Boundary => "boundary",
            InstanceKind::Roundtrip => "roundtrip",
        }
    }
}

impl std::str::FromStr for InstanceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(Self::Free),
            "arbitrage" => Ok(Self::Arbitrage),
            "boundary" => Ok(Self::Boundary),
            "roundtrip" => Ok(Self::Roundtrip),
            other => Err(Error::InvalidParameter(format!("unknown instance kind `{other}`"))),
        }
    }
}

/// Shape of a generated instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub d: usize,
    pub horizon: usize,
    pub branching: usize,
}

/// A generated market with what its construction guarantees.
#[derive(Debug, Clone)]
pub struct Generated {
    pub kind: InstanceKind,
    pub seed: u64,
    pub tree: ScenarioTree,
    pub process: BidAskProcess,
    /// The price process used by the construction (strictly consistent for
    /// round-trip, consistent for boundary).
    pub witness: Option<PriceProcess>,
    /// Node and pair the arbitrage/boundary construction acts on.
    pub focus: Option<(String, usize, usize)>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random strictly positive martingale: leaf values `exp(U(-0.7, 0.7))` per
/// asset, interior values by conditional expectation.
pub fn random_martingale(tree: &ScenarioTree, d: usize, rng: &mut impl Rng) -> Result<PriceProcess> {
    let leaves = tree.leaves().len();
    let per_asset: Vec<Vec<f64>> =
        (0..d).map(|_| (0..leaves).map(|_| rng.gen_range(-0.7..0.7f64).exp()).collect()).collect();
    let cond = per_asset.iter().map(|v| tree.conditional_expectation_all(v)).collect::<Result<Vec<_>>>()?;
    Ok(PriceProcess { dim: d, values: Adapted::from_fn(tree, |n| (0..d).map(|i| cond[i][n]).collect()) })
}

/// Spreads around the ratios of `z`: `pi^{ij} = (z^j / z^i)(1 + s_{ij})` with
/// `s_{ij} = s_{ji}` drawn per unordered pair, then closure.
fn spreads_around(z: &[f64], rng: &mut impl Rng) -> Result<(BidAskMatrix, Vec<Vec<f64>>)> {
    let d = z.len();
    let mut s = vec![vec![0.0; d]; d];
    let mut pi = BidAskMatrix::frictionless(d);
    for i in 0..d {
        for j in i + 1..d {
            let sij = rng.gen_range(SPREAD_RANGE.0..SPREAD_RANGE.1);
            s[i][j] = sij;
            s[j][i] = sij;
            pi.set(i, j, z[j] / z[i] * (1.0 + sij));
            pi.set(j, i, z[i] / z[j] * (1.0 + sij));
        }
    }
    Ok((triangle_closure(&pi)?, s))
}

fn check_shape(shape: &Shape) -> Result<()> {
    if shape.d < 1 || shape.horizon < 1 || shape.branching < 1 {
        return Err(Error::InvalidParameter("d, T and branching must all be at least 1".into()));
    }
    Ok(())
}

pub fn generate(seed: u64, kind: InstanceKind, shape: Shape) -> Result<Generated> {
    check_shape(&shape)?;
    if matches!(kind, InstanceKind::Arbitrage | InstanceKind::Boundary) && shape.d < 2 {
        return Err(Error::InvalidParameter(format!("{} instances need at least two assets", kind.as_str())));
    }
    let tree = generate_random_tree(seed, shape.branching, shape.horizon)?;
    let mut rng = rng_for(seed, 1 + kind as u64);
    let d = shape.d;
    match kind {
        InstanceKind::Free => {
            let matrices = (0..tree.len())
                .map(|_| {
                    let prices: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.7..0.7f64).exp()).collect();
                    let mut pi = BidAskMatrix::frictionless(d);
                    for i in 0..d {
                        for j in 0..d {
                            if i != j {
                                let s = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..0.3) };
                                pi.set(i, j, prices[j] / prices[i] * (1.0 + s));
                            }
                        }
                    }
                    triangle_closure(&pi)
                })
                .collect::<Result<Vec<_>>>()?;
            let process = BidAskProcess::new(&tree, matrices)?;
            Ok(Generated { kind, seed, tree, process, witness: None, focus: None })
        }
        InstanceKind::Roundtrip => {
            let z = random_martingale(&tree, d, &mut rng)?;
            let matrices = (0..tree.len()).map(|n| spreads_around(z.at(n), &mut rng).map(|p| p.0)).collect::<Result<Vec<_>>>()?;
            let process = BidAskProcess::new(&tree, matrices)?;
            Ok(Generated { kind, seed, tree, process, witness: Some(z), focus: None })
        }
        InstanceKind::Arbitrage => {
            let mut z = random_martingale(&tree, d, &mut rng)?;
            let inner: Vec<usize> = (0..tree.len()).filter(|&n| !tree.node(n).children.is_empty()).collect();
            let n = inner[rng.gen_range(0..inner.len())];
            let i = rng.gen_range(0..d);
            let j = (i + rng.gen_range(1..d)) % d;
            let spreads: Vec<f64> = (0..tree.len()).map(|_| rng.gen_range(SPREAD_RANGE.0..SPREAD_RANGE.1)).collect();
            // Scale asset j below n so every child's bid exceeds twice n's ask.
            let ask = z.at(n)[j] / z.at(n)[i] * (1.0 + spreads[n]);
            let k = 2.0
                * tree
                    .node(n)
                    .children
                    .iter()
                    .map(|&c| ask * (1.0 + spreads[c]) * z.at(c)[i] / z.at(c)[j])
                    .fold(0.0, f64::max);
            for &c in &tree.node(n).children {
                for m in subtree(&tree, c) {
                    z.values[m][j] *= k;
                }
            }
            let matrices = (0..tree.len())
                .map(|m| {
                    let w = z.at(m);
                    let mut pi = BidAskMatrix::frictionless(d);
                    for a in 0..d {
                        for b in 0..d {
                            if a != b {
                                pi.set(a, b, w[b] / w[a] * (1.0 + spreads[m]));
                            }
                        }
                    }
                    triangle_closure(&pi)
                })
                .collect::<Result<Vec<_>>>()?;
            let process = BidAskProcess::new(&tree, matrices)?;
            let focus = Some((tree.node(n).id.clone(), i, j));
            Ok(Generated { kind, seed, tree, process, witness: None, focus })
        }
        InstanceKind::Boundary => {
            let mut z = random_martingale(&tree, d, &mut rng)?;
            let inner: Vec<usize> = (0..tree.len()).filter(|&n| !tree.node(n).children.is_empty()).collect();
            let n = inner[rng.gen_range(0..inner.len())];
            let i = rng.gen_range(0..d);
            let j = (i + rng.gen_range(1..d)) % d;
            let k = rng.gen_range(-0.7..0.7f64).exp();
            for m in 0..tree.len() {
                z.values[m][j] = k * z.values[m][i];
            }
            let mut matrices = Vec::with_capacity(tree.len());
            for m in 0..tree.len() {
                let (mut pi, s) = spreads_around(z.at(m), &mut rng)?;
                if m == n {
                    pi.set(i, j, k);
                    pi.set(j, i, 1.0 / k);
                } else if tree.node(m).parent == Some(n) {
                    pi.set(j, i, 1.0 / k);
                    pi.set(i, j, k * (1.0 + s[i][j]));
                }
                matrices.push(triangle_closure(&pi)?);
            }
            let process = BidAskProcess::new(&tree, matrices)?;
            let focus = Some((tree.node(n).id.clone(), i, j));
            Ok(Generated { kind, seed, tree, process, witness: Some(z), focus })
        }
    }
}

fn subtree(tree: &ScenarioTree, root: usize) -> Vec<usize> {
    let mut out = vec![root];
    let mut k = 0;
    while k < out.len() {
        out.extend(tree.node(out[k]).children.iter().copied());
        k += 1;
    }
    out
}

/// Stratified kind for a seed of the equivalence experiment: half
/// round-trip, a quarter each arbitrage and boundary.
pub fn stratified_kind(seed: u64) -> InstanceKind {
    match seed % 4 {
        0 | 2 => InstanceKind::Roundtrip,
        1 => InstanceKind::Arbitrage,
        _ => InstanceKind::Boundary,
    }
}

/// Random feasible plan from endowment `x`: sparse random weights, scaled by
/// the largest `t` in `[0, 1]` that keeps every terminal holding nonnegative.
pub fn random_feasible_plan(
    tree: &ScenarioTree,
    process: &BidAskProcess,
    x: &[f64],
    rng: &mut impl Rng,
) -> Result<TransferPlan> {
    let layout = PlanLayout { dim: process.dim(), nodes: tree.len() };
    let raw: Vec<f64> = (0..layout.num_vars())
        .map(|k| {
            let density = if layout.is_disposal(k) { 0.1 } else { 0.4 };
            if rng.gen_bool(density) {
                rng.gen_range(0.0..1.0)
            } else {
                0.0
            }
        })
        .collect();
    let plan = layout.to_plan(tree, &raw);
    let zero = vec![0.0; process.dim()];
    let delta = realize(&plan, tree, process, &zero)?.terminal;
    let mut t: f64 = 1.0;
    for leaf in &delta {
        for (i, &dv) in leaf.iter().enumerate() {
            if dv < 0.0 {
                t = t.min(x[i] / -dv);
            }
        }
    }
    let t = t * rng.gen_range(0.5..=1.0);
    Ok(plan.scaled(t))
}
