//! Equivalence experiment: robust no-arbitrage decided by linear programming
//! against the constructive verdict "after shrinking spreads by theta, the
//! scalarised problem has a certified Pareto maximiser".

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arbitrage::{check_na_with, check_nar_with};
use crate::cones::shrink_spreads;
use crate::error::{Error, Result};
use crate::generate::{generate, stratified_kind, Generated, InstanceKind, Shape};
use crate::io::{ExperimentParams, Instance};
use crate::pareto::{is_pareto_maximal_in, solve_scalarized_in, Problem};
use crate::pricing::{strict_pipeline_with, Verdict};
use crate::tolerance::Tolerances;
use crate::utility::{AssetUtility, UtilitySpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Largest shapes the experiment accepts.
pub const MAX_D: usize = 4;
pub const MAX_T: usize = 3;
pub const MAX_BRANCHING: usize = 3;

/// Terminal floor used by the pricing stage.
pub const PRICING_DELTA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub shape: Shape,
    pub theta: f64,
    pub tol: Tolerances,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.shape;
        if !(2..=MAX_D).contains(&s.d) || !(1..=MAX_T).contains(&s.horizon) || !(1..=MAX_BRANCHING).contains(&s.branching) {
            return Err(Error::InvalidParameter(format!(
                "need 2 <= d <= {MAX_D}, 1 <= T <= {MAX_T}, 1 <= branching <= {MAX_BRANCHING}; got {s:?}"
            )));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::InvalidParameter(format!("theta = {} is outside (0, 1]", self.theta)));
        }
        Ok(())
    }
}

/// A stage's result, or the error that stopped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage<T> {
    Done(T),
    Failed { error: String },
}

impl<T> Stage<T> {
    fn from_result(r: Result<T>) -> Self {
        match r {
            Ok(v) => Stage::Done(v),
            Err(e) => Stage::Failed { error: e.to_string() },
        }
    }

    pub fn done(&self) -> Option<&T> {
        match self {
            Stage::Done(v) => Some(v),
            Stage::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaSummary {
    pub holds: bool,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarSummary {
    pub holds: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructiveSummary {
    /// Converged within tolerance and passed the Pareto check.
    pub verdict: bool,
    pub utilities: Vec<f64>,
    pub gap: f64,
    pub iterations: usize,
    pub pareto_bound: f64,
    pub pareto_improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingSummary {
    pub verdict: Verdict,
    pub floor_met: bool,
    pub min_margin: Option<f64>,
    pub max_martingale_residual: f64,
    pub max_polar_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub na_ms: f64,
    pub nar_ms: f64,
    pub constructive_ms: f64,
    pub pricing_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub seed: u64,
    pub kind: InstanceKind,
    pub instance_digest: String,
    pub na: Stage<NaSummary>,
    pub nar: Stage<NarSummary>,
    pub constructive: Stage<ConstructiveSummary>,
    /// Run only when both verdicts say robust no-arbitrage.
    pub pricing: Option<Stage<PricingSummary>>,
    pub agree: bool,
    pub timings: Timings,
    pub version: String,
}

impl ExperimentRecord {
    pub fn nar_verdict(&self) -> Option<bool> {
        self.nar.done().map(|n| n.holds)
    }

    /// Constructive verdict; a failed stage counts as "no maximiser found".
    pub fn constructive_verdict(&self) -> bool {
        self.constructive.done().is_some_and(|c| c.verdict)
    }

    /// NA holds but NA^r fails.
    pub fn is_gap_exhibit(&self) -> bool {
        self.na.done().is_some_and(|n| n.holds) && self.nar_verdict() == Some(false)
    }
}

/// The instance for one seed: stratified kind, unit endowment, exponential
/// utilities with unit risk aversion, uniform weights.
pub fn seed_instance(seed: u64, config: &ExperimentConfig) -> Result<(Generated, Instance)> {
    let kind = stratified_kind(seed);
    let g = generate(seed, kind, config.shape)?;
    let d = config.shape.d;
    let instance = Instance {
        tree: g.tree.clone(),
        process: g.process.clone(),
        x: vec![1.0; d],
        spec: UtilitySpec::uniform(d, AssetUtility::exp(1.0))?,
        params: ExperimentParams {
            theta: config.theta,
            lambdas: vec![vec![1.0 / d as f64; d]],
            tolerances: config.tol,
            seed: Some(seed),
            kind: Some(kind),
        },
    };
    Ok((g, instance))
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() * 1e3)
}

pub fn run_seed(seed: u64, config: &ExperimentConfig) -> Result<ExperimentRecord> {
    let (g, inst) = seed_instance(seed, config)?;
    let tol = &config.tol;
    let lambda = inst.params.lambdas[0].clone();
    let (na, na_ms) = timed(|| check_na_with(&inst.tree, &inst.process, tol));
    let (nar, nar_ms) = timed(|| check_nar_with(&inst.tree, &inst.process, tol));
    let (constructive, constructive_ms) = timed(|| -> Result<ConstructiveSummary> {
        let shrunk = shrink_spreads(&inst.tree, &inst.process, config.theta)?;
        let problem = Problem::new(&inst.tree, &shrunk, &inst.x, &inst.spec, tol)?;
        let sol = solve_scalarized_in(&problem, &lambda, tol.fw_gap)?;
        let check = is_pareto_maximal_in(&problem, &sol.terminal, tol.pareto)?;
        Ok(ConstructiveSummary {
            verdict: sol.gap <= tol.fw_gap && check.maximal,
            utilities: sol.utilities,
            gap: sol.gap,
            iterations: sol.iterations,
            pareto_bound: check.bound,
            pareto_improvement: check.improvement,
        })
    });
    let na = Stage::from_result(na.map(|v| NaSummary { holds: v.holds, value: v.value }));
    let nar = Stage::from_result(nar.map(|v| NarSummary { holds: v.holds, margin: v.margin }));
    let constructive = Stage::from_result(constructive);
    let nar_holds = nar.done().map(|n| n.holds);
    let constructive_holds = constructive.done().is_some_and(|c| c.verdict);
    let agree = nar_holds == Some(constructive_holds);
    let (pricing, pricing_ms) = if agree && constructive_holds {
        let delta = vec![PRICING_DELTA; config.shape.d];
        let (out, ms) = timed(|| {
            strict_pipeline_with(&inst.tree, &inst.process, config.theta, &inst.x, &inst.spec, &lambda, &delta, tol)
        });
        let summary = out.map(|p| PricingSummary {
            verdict: p.report.verdict,
            floor_met: p.report.precondition_met(),
            min_margin: p.report.min_margin(),
            max_martingale_residual: p.report.max_martingale_residual(),
            max_polar_slack: p.report.max_polar_slack(),
        });
        (Some(Stage::from_result(summary)), ms)
    } else {
        (None, 0.0)
    };
    Ok(ExperimentRecord {
        seed,
        kind: g.kind,
        instance_digest: inst.bundle().digest(),
        na,
        nar,
        constructive,
        pricing,
        agree,
        timings: Timings { na_ms, nar_ms, constructive_ms, pricing_ms },
        version: VERSION.to_string(),
    })
}

/// Per-kind tallies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KindTally {
    pub instances: usize,
    pub nar_holds: usize,
    pub constructive_holds: usize,
    pub disagreements: usize,
    pub gap_exhibits: usize,
    pub strictly_consistent: usize,
    pub floor_unmet: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub seeds: (u64, u64),
    pub disagreements: Vec<u64>,
    pub by_kind: BTreeMap<String, KindTally>,
    pub wall_ms: f64,
    pub version: String,
    /// Sorted by seed.
    pub records: Vec<ExperimentRecord>,
}

/// Runs seeds `first..=last` in parallel; records come back sorted by seed.
pub fn run_equivalence(first: u64, last: u64, config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    if first > last {
        return Err(Error::InvalidParameter(format!("empty seed range {first}..{last}")));
    }
    let start = Instant::now();
    let mut records = (first..=last).into_par_iter().map(|s| run_seed(s, config)).collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| r.seed);
    let mut by_kind: BTreeMap<String, KindTally> = BTreeMap::new();
    for r in &records {
        let t = by_kind.entry(r.kind.as_str().to_string()).or_default();
        t.instances += 1;
        t.nar_holds += usize::from(r.nar_verdict() == Some(true));
        t.constructive_holds += usize::from(r.constructive_verdict());
        t.disagreements += usize::from(!r.agree);
        t.gap_exhibits += usize::from(r.is_gap_exhibit());
        if let Some(p) = r.pricing.as_ref().and_then(Stage::done) {
            t.strictly_consistent += usize::from(p.verdict == Verdict::StrictlyConsistent);
            t.floor_unmet += usize::from(!p.floor_met);
        }
    }
    Ok(ExperimentSummary {
        config: config.clone(),
        seeds: (first, last),
        disagreements: records.iter().filter(|r| !r.agree).map(|r| r.seed).collect(),
        by_kind,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        version: VERSION.to_string(),
        records,
    })
}

impl ExperimentSummary {
    /// Plain-text table, one row per instance kind.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>6} {:>8} {:>8} {:>6} {:>8} {:>8}",
            "kind", "n", "NA^r", "constr", "disagree", "gap", "strict", "floor-"
        );
        for (kind, t) in &self.by_kind {
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>6} {:>8} {:>8} {:>6} {:>8} {:>8}",
                kind,
                t.instances,
                t.nar_holds,
                t.constructive_holds,
                t.disagreements,
                t.gap_exhibits,
                t.strictly_consistent,
                t.floor_unmet
            );
        }
        let _ = write!(
            out,
            "seeds {}..={}  disagreements {}  wall {:.1} s",
            self.seeds.0,
            self.seeds.1,
            self.disagreements.len(),
            self.wall_ms / 1e3
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_agrees() {
        let config =
            ExperimentConfig { shape: Shape { d: 2, horizon: 1, branching: 2 }, theta: 0.5, tol: Tolerances::default() };
        let s = run_equivalence(0, 7, &config).unwrap();
        assert!(s.disagreements.is_empty(), "{}", serde_json::to_string_pretty(&s.records).unwrap());
        assert_eq!(s.records.iter().map(|r| r.seed).collect::<Vec<_>>(), (0..8).collect::<Vec<_>>());
        assert_eq!(s.by_kind["boundary"].gap_exhibits, 2);
        assert!(s.by_kind["roundtrip"].strictly_consistent >= 1);
        assert!(s.table().contains("roundtrip"));
    }

    #[test]
    fn rejects_large_shapes() {
        let config =
            ExperimentConfig { shape: Shape { d: 5, horizon: 1, branching: 2 }, theta: 0.5, tol: Tolerances::default() };
        assert!(run_equivalence(0, 1, &config).is_err());
    }
}
