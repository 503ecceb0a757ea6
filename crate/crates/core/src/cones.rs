//! Bid-ask matrices, their solvency cones and polar cones.
//!
//! `pi[i][j]` is the number of units of asset `i` paid for one unit of asset
//! `j`. The solvency cone `-K(pi)` is generated by the disposals `-e^i` and the
//! exchanges `-pi[i][j] e^i + e^j`; its polar is
//! `K*(pi) = { w : w >= 0, w^j <= pi[i][j] w^i }`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::ValidationReport;
use crate::tree::{Adapted, ScenarioTree};

/// Relative tolerance of the triangle axiom.
pub const TRIANGLE_TOL: f64 = 1e-10;
/// Pairs with `pi[i][j] * pi[j][i] <= 1 + DEGENERATE_TOL` are frictionless.
pub const DEGENERATE_TOL: f64 = 1e-10;

/// Dense square matrix with unit diagonal and positive entries.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct BidAskMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl fmt::Debug for BidAskMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.rows()).finish()
    }
}

impl TryFrom<Vec<Vec<f64>>> for BidAskMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<BidAskMatrix> for Vec<Vec<f64>> {
    fn from(m: BidAskMatrix) -> Self {
        m.rows().map(<[f64]>::to_vec).collect()
    }
}

impl BidAskMatrix {
    /// Wraps a square matrix without checking the axioms.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::Dimension { expected: dim, got: row.len() });
            }
            entries.extend_from_slice(row);
        }
        if dim == 0 {
            return Err(Error::InvalidBidAsk("empty matrix".into()));
        }
        Ok(Self { dim, entries })
    }

    pub fn frictionless(dim: usize) -> Self {
        Self { dim, entries: vec![1.0; dim * dim] }
    }

    /// Frictionless matrix quoting prices `prices` in a common unit:
    /// `pi[i][j] = prices[j] / prices[i]`.
    pub fn from_prices(prices: &[f64]) -> Self {
        let dim = prices.len();
        let mut m = Self::frictionless(dim);
        for i in 0..dim {
            for j in 0..dim {
                if i != j {
                    m.set(i, j, prices[j] / prices[i]);
                }
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.dim + j] = v;
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks(self.dim)
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().copied().fold(f64::MIN, f64::max)
    }

    /// `pi[i][j] * pi[j][i] <= 1 + DEGENERATE_TOL`: a single-point spread.
    pub fn is_degenerate(&self, i: usize, j: usize) -> bool {
        self.get(i, j) * self.get(j, i) <= 1.0 + DEGENERATE_TOL
    }

    /// Checks positivity, unit diagonal and the triangle axiom.
    pub fn validate(&self) -> ValidationReport {
        let d = self.dim;
        let mut report = ValidationReport::default();
        for i in 0..d {
            if (self.get(i, i) - 1.0).abs() > TRIANGLE_TOL {
                report.push(format!("({i},{i})"), "unit diagonal", format!("pi[{i}][{i}] = {}", self.get(i, i)));
            }
            for j in 0..d {
                let v = self.get(i, j);
                if !(v > 0.0 && v.is_finite()) {
                    report.push(format!("({i},{j})"), "positivity", format!("pi[{i}][{j}] = {v}"));
                }
            }
        }
        if !report.is_ok() {
            return report;
        }
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let via = self.get(i, k) * self.get(k, j);
                    if self.get(i, j) > via * (1.0 + TRIANGLE_TOL) {
                        report.push(
                            format!("({i},{j},{k})"),
                            "triangle",
                            format!("pi[{i}][{j}] = {} > pi[{i}][{k}] * pi[{k}][{j}] = {via}", self.get(i, j)),
                        );
                    }
                }
            }
        }
        report
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }
}

/// Repairs the triangle axiom by all-pairs minimisation of exchange products
/// (shortest paths in log space). Output is elementwise no larger than the input.
pub fn triangle_closure(pi: &BidAskMatrix) -> Result<BidAskMatrix> {
    let d = pi.dim();
    for i in 0..d {
        if (pi.get(i, i) - 1.0).abs() > TRIANGLE_TOL {
            return Err(Error::InvalidBidAsk(format!("pi[{i}][{i}] = {} is not 1", pi.get(i, i))));
        }
        for j in 0..d {
            let v = pi.get(i, j);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidBidAsk(format!("pi[{i}][{j}] = {v} is not positive")));
            }
        }
    }
    let mut out = pi.clone();
    for k in 0..d {
        for i in 0..d {
            for j in 0..d {
                let via = out.get(i, k) * out.get(k, j);
                // Strict improvement only, so valid inputs come back untouched.
                if via < out.get(i, j) * (1.0 - 1e-13) {
                    out.set(i, j, via);
                }
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let product = out.get(i, j) * out.get(j, i);
            if product < 1.0 - TRIANGLE_TOL {
                return Err(Error::ValueCreatingCycle { i, j, product });
            }
        }
        out.set(i, i, 1.0);
    }
    Ok(out)
}

/// Generating set of the solvency cone `-K(pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeGenerators {
    pub dim: usize,
    /// `-e^i` for each asset, in asset order.
    pub disposals: Vec<Vec<f64>>,
    /// `((i, j), -pi[i][j] e^i + e^j)` for `i != j`, lexicographic in `(i, j)`.
    pub exchanges: Vec<((usize, usize), Vec<f64>)>,
}

impl ConeGenerators {
    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.disposals.iter().map(Vec::as_slice).chain(self.exchanges.iter().map(|(_, g)| g.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.disposals.len() + self.exchanges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn cone_generators(pi: &BidAskMatrix) -> ConeGenerators {
    let d = pi.dim();
    let disposals = (0..d)
        .map(|i| {
            let mut g = vec![0.0; d];
            g[i] = -1.0;
            g
        })
        .collect();
    let mut exchanges = Vec::with_capacity(d * (d - 1));
    for i in 0..d {
        for j in 0..d {
            if i != j {
                let mut g = vec![0.0; d];
                g[i] = -pi.get(i, j);
                g[j] = 1.0;
                exchanges.push(((i, j), g));
            }
        }
    }
    ConeGenerators { dim: d, disposals, exchanges }
}

fn check_dim(pi: &BidAskMatrix, w: &[f64]) -> Result<()> {
    if w.len() != pi.dim() {
        return Err(Error::Dimension { expected: pi.dim(), got: w.len() });
    }
    Ok(())
}

/// Largest inner product of `w` with a generator of `-K(pi)`; `w` lies in the
/// polar cone iff this is `<= 0`.
pub fn polar_slack(pi: &BidAskMatrix, w: &[f64]) -> Result<f64> {
    check_dim(pi, w)?;
    let d = pi.dim();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..d {
        worst = worst.max(-w[i]);
        for j in 0..d {
            if i != j {
                worst = worst.max(w[j] - pi.get(i, j) * w[i]);
            }
        }
    }
    Ok(worst)
}

/// Closed-form test of `w` in `K*(pi)`: `w^i >= -tol` and `w^j - pi[i][j] w^i <= tol`.
pub fn polar_membership(pi: &BidAskMatrix, w: &[f64], tol: f64) -> Result<bool> {
    Ok(polar_slack(pi, w)? <= tol)
}

/// Relative-interior test of `K*(pi)`.
///
/// Requires `w^i >= margin`, `pi[i][j] w^i - w^j >= margin * w^i` on every
/// pair with a nondegenerate spread, and equality `w^j = pi[i][j] w^i` (within
/// `1e-10 * max(w^i, w^j)`) on frictionless pairs, which the affine hull forces.
pub fn strict_polar_membership(pi: &BidAskMatrix, w: &[f64], margin: f64) -> Result<bool> {
    Ok(strict_margin(pi, w)?.is_some_and(|m| m >= margin))
}

/// Largest `m` for which [`strict_polar_membership`] holds, or `None` when a
/// frictionless equality is broken.
pub fn strict_margin(pi: &BidAskMatrix, w: &[f64]) -> Result<Option<f64>> {
    check_dim(pi, w)?;
    let d = pi.dim();
    let mut margin = w.iter().copied().fold(f64::INFINITY, f64::min);
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            if pi.is_degenerate(i, j) {
                if (w[j] - pi.get(i, j) * w[i]).abs() > 1e-10 * w[i].max(w[j]) {
                    return Ok(None);
                }
            } else if w[i] > 0.0 {
                margin = margin.min((pi.get(i, j) * w[i] - w[j]) / w[i]);
            } else {
                margin = f64::NEG_INFINITY;
            }
        }
    }
    Ok(Some(margin))
}

/// Adapted process of bid-ask matrices over a scenario tree.
#[derive(Debug, Clone, PartialEq)]
pub struct BidAskProcess {
    dim: usize,
    matrices: Adapted<BidAskMatrix>,
}

impl BidAskProcess {
    pub fn new(tree: &ScenarioTree, matrices: Vec<BidAskMatrix>) -> Result<Self> {
        if matrices.len() != tree.len() {
            return Err(Error::Dimension { expected: tree.len(), got: matrices.len() });
        }
        let dim = matrices[0].dim();
        if let Some(bad) = matrices.iter().find(|m| m.dim() != dim) {
            return Err(Error::Dimension { expected: dim, got: bad.dim() });
        }
        Ok(Self { dim, matrices: Adapted { values: matrices } })
    }

    pub fn constant(tree: &ScenarioTree, pi: BidAskMatrix) -> Self {
        Self { dim: pi.dim(), matrices: Adapted::constant(tree, pi) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, node: usize) -> &BidAskMatrix {
        &self.matrices[node]
    }

    pub fn matrices(&self) -> &[BidAskMatrix] {
        &self.matrices.values
    }

    pub fn max_entry(&self) -> f64 {
        self.matrices.iter().map(BidAskMatrix::max_entry).fold(1.0, f64::max)
    }

    /// Validates every node's matrix; locations carry the node id.
    pub fn validate(&self, tree: &ScenarioTree) -> ValidationReport {
        let mut report = ValidationReport::default();
        for (k, m) in self.matrices.iter().enumerate() {
            report.absorb(&format!("node {} ", tree.node(k).id), m.validate());
        }
        report
    }
}

/// Maximum number of times `shrink_spreads` halves theta before giving up.
pub const SHRINK_RETRIES: usize = 20;

/// Process with strictly smaller bid-ask spreads.
///
/// Every nondegenerate spread is contracted in log space toward its log
/// midpoint by the factor `1 - theta`, then the triangle axiom is restored by
/// closure. If closure moves any interval outside the relative interior of the
/// original one (or alters a frictionless pair), theta is halved and the step
/// retried.
pub fn shrink_spreads(tree: &ScenarioTree, process: &BidAskProcess, theta: f64) -> Result<BidAskProcess> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!("theta = {theta} must lie in (0, 1)")));
    }
    let shrunk = process
        .matrices()
        .iter()
        .enumerate()
        .map(|(k, pi)| shrink_matrix(pi, theta).map_err(|(i, j)| Error::ShrinkExhausted {
            node: tree.node(k).id.clone(),
            i,
            j,
            attempts: SHRINK_RETRIES,
        }))
        .collect::<Result<Vec<_>>>()?;
    BidAskProcess::new(tree, shrunk)
}

/// Shrinks one matrix; on failure reports the last offending pair.
pub fn shrink_matrix(pi: &BidAskMatrix, theta: f64) -> std::result::Result<BidAskMatrix, (usize, usize)> {
    let d = pi.dim();
    let mut theta = theta;
    let mut offending = (0, 0);
    for _ in 0..SHRINK_RETRIES {
        let mut raw = pi.clone();
        for i in 0..d {
            for j in 0..d {
                if i == j || pi.is_degenerate(i, j) {
                    continue;
                }
                let (up, down) = (pi.get(i, j).ln(), pi.get(j, i).ln());
                let mid = 0.5 * (up - down);
                raw.set(i, j, ((1.0 - theta) * up + theta * mid).exp());
            }
        }
        match triangle_closure(&raw) {
            Ok(closed) => match strictly_inside(pi, &closed) {
                None => return Ok(closed),
                Some(pair) => offending = pair,
            },
            Err(Error::ValueCreatingCycle { i, j, .. }) => offending = (i, j),
            Err(_) => {}
        }
        theta *= 0.5;
    }
    Err(offending)
}

/// First pair whose shrunk interval `[1/q[j][i], q[i][j]]` is not inside the
/// relative interior of `[1/pi[j][i], pi[i][j]]`.
fn strictly_inside(pi: &BidAskMatrix, q: &BidAskMatrix) -> Option<(usize, usize)> {
    let d = pi.dim();
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            if pi.is_degenerate(i, j) {
                let same = (q.get(i, j) - pi.get(i, j)).abs() <= 1e-12 * pi.get(i, j)
                    && (q.get(j, i) - pi.get(j, i)).abs() <= 1e-12 * pi.get(j, i);
                if !same {
                    return Some((i, j));
                }
            } else {
                let upper_ok = q.get(i, j) < pi.get(i, j);
                let lower_ok = 1.0 / q.get(j, i) > 1.0 / pi.get(j, i);
                let ordered = q.get(i, j) * q.get(j, i) >= 1.0 - TRIANGLE_TOL;
                if !(upper_ok && lower_ok && ordered) {
                    return Some((i, j));
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::two_leaf;

    fn m(rows: &[&[f64]]) -> BidAskMatrix {
        BidAskMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn three() -> BidAskMatrix {
        // pi12 = 2, pi23 = 3, pi13 = 10 (0-based: (0,1), (1,2), (0,2))
        m(&[&[1.0, 2.0, 10.0], &[1.0, 1.0, 3.0], &[1.0, 1.0, 1.0]])
    }

    #[test]
    fn validate_examples() {
        assert!(BidAskMatrix::frictionless(2).is_valid());
        assert!(m(&[&[1.0, 2.0], &[1.0, 1.0]]).is_valid());
        let report = three().validate();
        assert!(!report.is_ok());
        assert!(report.violations.iter().any(|v| v.location == "(0,2,1)" && v.rule == "triangle"), "{report}");
        assert!(BidAskMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(m(&[&[1.0, -1.0], &[1.0, 1.0]]).validate().has_rule("positivity"));
        assert!(m(&[&[2.0, 1.0], &[1.0, 1.0]]).validate().has_rule("unit diagonal"));
    }

    #[test]
    fn triangle_closure_examples() {
        let valid = m(&[&[1.0, 2.0], &[1.0, 1.0]]);
        assert_eq!(triangle_closure(&valid).unwrap(), valid);
        let closed = triangle_closure(&three()).unwrap();
        assert_eq!(closed.get(0, 2), 6.0);
        assert!(closed.is_valid());
        assert!(matches!(
            triangle_closure(&m(&[&[1.0, 0.5], &[0.5, 1.0]])),
            Err(Error::ValueCreatingCycle { .. })
        ));
        assert!(triangle_closure(&m(&[&[1.0, 0.0], &[1.0, 1.0]])).is_err());
    }

    #[test]
    fn generator_examples() {
        let g = cone_generators(&m(&[&[1.0, 2.0], &[1.0, 1.0]]));
        let all: Vec<Vec<f64>> = g.iter().map(<[f64]>::to_vec).collect();
        assert_eq!(all, vec![vec![-1.0, 0.0], vec![0.0, -1.0], vec![-2.0, 1.0], vec![1.0, -1.0]]);
        let g1 = cone_generators(&BidAskMatrix::frictionless(1));
        assert_eq!(g1.iter().map(<[f64]>::to_vec).collect::<Vec<_>>(), vec![vec![-1.0]]);
        let gf = cone_generators(&BidAskMatrix::frictionless(2));
        assert_eq!(
            gf.iter().map(<[f64]>::to_vec).collect::<Vec<_>>(),
            vec![vec![-1.0, 0.0], vec![0.0, -1.0], vec![-1.0, 1.0], vec![1.0, -1.0]]
        );
        assert_eq!(cone_generators(&three()).len(), 3 + 6);
    }

    #[test]
    fn polar_examples() {
        let pi = m(&[&[1.0, 2.0], &[1.0, 1.0]]);
        assert!(polar_membership(&pi, &[1.0, 1.5], 0.0).unwrap());
        assert!(!polar_membership(&pi, &[1.0, 2.5], 0.0).unwrap());
        assert!(polar_membership(&three(), &[0.0, 0.0, 0.0], 0.0).unwrap());
        assert!(polar_membership(&pi, &[1.0], 0.0).is_err());
    }

    #[test]
    fn strict_polar_examples() {
        let pi = m(&[&[1.0, 2.0], &[1.0, 1.0]]);
        assert!(strict_polar_membership(&pi, &[1.0, 1.5], 0.1).unwrap());
        assert!(!strict_polar_membership(&pi, &[1.0, 2.0], 0.01).unwrap());
        let free = BidAskMatrix::frictionless(2);
        assert!(strict_polar_membership(&free, &[1.0, 1.0], 1.0).unwrap());
        assert!(!strict_polar_membership(&free, &[1.0, 1.1], 0.01).unwrap());
        assert!(strict_polar_membership(&pi, &[1.0], 0.1).is_err());
    }

    #[test]
    fn shrink_examples() {
        let tree = two_leaf(0.5);
        let free = BidAskProcess::constant(&tree, BidAskMatrix::frictionless(2));
        assert_eq!(shrink_spreads(&tree, &free, 0.5).unwrap(), free);

        let pi = m(&[&[1.0, 2.0], &[1.0, 1.0]]);
        let q = shrink_matrix(&pi, 0.5).unwrap();
        assert!((q.get(0, 1) - 2f64.powf(0.75)).abs() < 1e-12);
        assert!((q.get(1, 0) - 2f64.powf(-0.25)).abs() < 1e-12);
        let (lo, hi) = (1.0 / q.get(1, 0), q.get(0, 1));
        assert!(1.0 < lo && lo < hi && hi < 2.0);

        let tiny = shrink_matrix(&pi, 1e-6).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((tiny.get(i, j) - pi.get(i, j)).abs() / pi.get(i, j) <= 1e-5);
            }
        }
        assert!(shrink_spreads(&tree, &free, 1.0).is_err());
        assert!(shrink_spreads(&tree, &free, 0.0).is_err());
    }

    #[test]
    fn shrink_reports_exhaustion_with_node() {
        // a value-creating cycle cannot be repaired at any theta
        let bad = m(&[&[1.0, 0.5], &[0.5, 1.0]]);
        let tree = two_leaf(0.5);
        let process = BidAskProcess::constant(&tree, bad);
        match shrink_spreads(&tree, &process, 0.5) {
            Err(Error::ShrinkExhausted { node, attempts, .. }) => {
                assert_eq!(node, "root");
                assert_eq!(attempts, SHRINK_RETRIES);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn serde_round_trip() {
        let pi = three();
        let json = serde_json::to_string(&pi).unwrap();
        assert_eq!(json, "[[1.0,2.0,10.0],[1.0,1.0,3.0],[1.0,1.0,1.0]]");
        let back: BidAskMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pi);
        assert!(serde_json::from_str::<BidAskMatrix>("[[1.0,2.0],[1.0]]").is_err());
    }
}
