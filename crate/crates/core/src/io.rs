//! JSON instance bundles, solution files and content digests.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attainable::{PlanRecord, TransferPlan};
use crate::cones::{BidAskMatrix, BidAskProcess};
use crate::error::{Error, Result};
use crate::generate::InstanceKind;
use crate::pareto::ParetoSolution;
use crate::report::ValidationReport;
use crate::tolerance::Tolerances;
use crate::tree::{validate_tree, ScenarioTree, TreeFile};
use crate::utility::UtilitySpec;

/// One node's bid-ask matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidAskRecord {
    pub node: String,
    pub pi: Vec<Vec<f64>>,
}

/// Experiment parameters carried with an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentParams {
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Scalarisation weights to solve for.
    #[serde(default)]
    pub lambdas: Vec<Vec<f64>>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub kind: Option<InstanceKind>,
}

fn default_theta() -> f64 {
    0.5
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self { theta: default_theta(), lambdas: Vec::new(), tolerances: Tolerances::default(), seed: None, kind: None }
    }
}

/// On-disk instance: tree, bid-ask process, endowment, utilities and
/// experiment parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceBundle {
    pub tree: TreeFile,
    pub bid_ask: Vec<BidAskRecord>,
    pub endowment: Vec<f64>,
    pub utility: UtilitySpec,
    #[serde(default)]
    pub experiment: ExperimentParams,
}

/// A validated instance ready for the solvers.
#[derive(Debug, Clone)]
pub struct Instance {
    pub tree: ScenarioTree,
    pub process: BidAskProcess,
    pub x: Vec<f64>,
    pub spec: UtilitySpec,
    pub params: ExperimentParams,
}

impl InstanceBundle {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serialises")
    }

    /// Runs every validator: tree, node references, matrix axioms, and the
    /// dimensions of endowment, utilities and weights.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        report.absorb("tree ", validate_tree(&self.tree));
        let ids: HashSet<&str> = self.tree.nodes.iter().map(|n| n.id.as_str()).collect();
        let d = self.endowment.len();
        if d == 0 {
            report.push("endowment", "dimension", "no assets");
        }
        let mut seen = HashSet::new();
        for rec in &self.bid_ask {
            let loc = format!("node {} ", rec.node);
            if !ids.contains(rec.node.as_str()) {
                report.push(format!("bid_ask {}", rec.node), "reference", "no such node in the tree");
            }
            if !seen.insert(rec.node.as_str()) {
                report.push(format!("bid_ask {}", rec.node), "duplicate", "node listed twice");
            }
            match BidAskMatrix::from_rows(&rec.pi) {
                Ok(m) if m.dim() != d => {
                    report.push(loc, "dimension", format!("matrix is {0}x{0}, endowment has {d} assets", m.dim()))
                }
                Ok(m) => report.absorb(&loc, m.validate()),
                Err(e) => report.push(loc, "shape", e.to_string()),
            }
        }
        for n in &self.tree.nodes {
            if !seen.contains(n.id.as_str()) {
                report.push(format!("bid_ask {}", n.id), "missing", "node has no bid-ask matrix");
            }
        }
        for (i, x) in self.endowment.iter().enumerate() {
            if !(x.is_finite() && *x >= 0.0) {
                report.push(format!("endowment {i}"), "nonnegative", format!("x[{i}] = {x}"));
            }
        }
        if let Err(e) = self.utility.validate() {
            report.push("utility", "parameters", e.to_string());
        }
        if self.utility.dim() != d {
            report.push("utility", "dimension", format!("{} utilities for {d} assets", self.utility.dim()));
        }
        let theta = self.experiment.theta;
        if !(theta > 0.0 && theta <= 1.0) {
            report.push("experiment theta", "range", format!("theta = {theta} is outside (0, 1]"));
        }
        for (k, l) in self.experiment.lambdas.iter().enumerate() {
            if l.len() != d {
                report.push(format!("experiment lambda {k}"), "dimension", format!("{} weights for {d} assets", l.len()));
            } else if l.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                report.push(format!("experiment lambda {k}"), "positivity", format!("{l:?}"));
            }
        }
        report
    }

    /// Validates and builds the solver-side objects.
    pub fn instance(&self) -> Result<Instance> {
        let report = self.validate();
        if !report.is_ok() {
            return Err(Error::InvalidParameter(format!("instance fails validation:\n{report}")));
        }
        let tree = ScenarioTree::from_file(&self.tree)?;
        let mut matrices: Vec<Option<BidAskMatrix>> = vec![None; tree.len()];
        for rec in &self.bid_ask {
            matrices[tree.lookup(&rec.node)?] = Some(BidAskMatrix::from_rows(&rec.pi)?);
        }
        let matrices = matrices.into_iter().map(|m| m.expect("validated: every node has a matrix")).collect();
        let process = BidAskProcess::new(&tree, matrices)?;
        Ok(Instance {
            tree,
            process,
            x: self.endowment.clone(),
            spec: self.utility.clone(),
            params: self.experiment.clone(),
        })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        digest_of(&serde_json::to_vec(self).expect("bundle serialises"))
    }
}

impl Instance {
    pub fn bundle(&self) -> InstanceBundle {
        InstanceBundle {
            tree: self.tree.to_file(),
            bid_ask: (0..self.tree.len())
                .map(|n| BidAskRecord {
                    node: self.tree.node(n).id.clone(),
                    pi: self.process.at(n).rows().map(<[f64]>::to_vec).collect(),
                })
                .collect(),
            endowment: self.x.clone(),
            utility: self.spec.clone(),
            experiment: self.params.clone(),
        }
    }
}

pub fn digest_of(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Terminal holdings at one leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafValue {
    pub leaf: String,
    pub x: Vec<f64>,
}

/// Body of a solution file; the digest covers exactly these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionBody {
    pub instance_digest: String,
    pub lambda_raw: Vec<f64>,
    pub lambda: Vec<f64>,
    pub utilities: Vec<f64>,
    pub gap: f64,
    pub iterations: usize,
    pub plan: Vec<PlanRecord>,
    pub terminal: Vec<LeafValue>,
}

/// Exported Pareto solution, tied to its instance and sealed by a digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    #[serde(flatten)]
    pub body: SolutionBody,
    pub digest: String,
}

impl SolutionFile {
    pub fn new(tree: &ScenarioTree, instance_digest: &str, solution: &ParetoSolution) -> Self {
        let body = SolutionBody {
            instance_digest: instance_digest.to_string(),
            lambda_raw: solution.lambda_raw.clone(),
            lambda: solution.lambda.clone(),
            utilities: solution.utilities.clone(),
            gap: solution.gap,
            iterations: solution.iterations,
            plan: solution.plan.to_records(tree),
            terminal: tree
                .leaves()
                .iter()
                .zip(&solution.terminal)
                .map(|(&l, x)| LeafValue { leaf: tree.node(l).id.clone(), x: x.clone() })
                .collect(),
        };
        let digest = body_digest(&body);
        Self { body, digest }
    }

    /// True when the stored digest matches the content.
    pub fn intact(&self) -> bool {
        body_digest(&self.body) == self.digest
    }

    /// Rebuilds the solution against `tree`, checking leaf ids.
    pub fn solution(&self, tree: &ScenarioTree, dim: usize) -> Result<ParetoSolution> {
        let b = &self.body;
        if b.terminal.len() != tree.leaves().len() {
            return Err(Error::Dimension { expected: tree.leaves().len(), got: b.terminal.len() });
        }
        let mut terminal = Vec::with_capacity(b.terminal.len());
        for (&l, rec) in tree.leaves().iter().zip(&b.terminal) {
            if rec.leaf != tree.node(l).id {
                return Err(Error::UnknownNode(rec.leaf.clone()));
            }
            if rec.x.len() != dim {
                return Err(Error::Dimension { expected: dim, got: rec.x.len() });
            }
            terminal.push(rec.x.clone());
        }
        Ok(ParetoSolution {
            lambda_raw: b.lambda_raw.clone(),
            lambda: b.lambda.clone(),
            plan: TransferPlan::from_records(tree, dim, &b.plan)?,
            terminal,
            utilities: b.utilities.clone(),
            gap: b.gap,
            iterations: b.iterations,
        })
    }
}

fn body_digest(body: &SolutionBody) -> String {
    digest_of(&serde_json::to_vec(body).expect("solution serialises"))
}
