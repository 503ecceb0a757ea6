//! Central tolerance record.
//!
//! Every threshold used by the solvers and the certificate verifiers lives
//! here. `Tolerances::from_env` applies overrides from `CONEMKT_TOL`, given as
//! comma-separated `key=value` pairs, e.g. `CONEMKT_TOL=feasibility=1e-9,pareto=1e-6`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENV_VAR: &str = "CONEMKT_TOL";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Primal feasibility of LP outcomes.
    pub feasibility: f64,
    /// Smallest admissible pivot magnitude.
    pub pivot: f64,
    /// Reduced-cost optimality and complementary slackness.
    pub duality: f64,
    /// Transition probabilities must sum to one within this.
    pub probability: f64,
    /// Relative slack allowed in the bid-ask triangle axiom.
    pub bid_ask: f64,
    /// A pair with `pi[i][j] * pi[j][i] <= 1 + degenerate` is frictionless.
    pub degenerate: f64,
    /// NA holds iff the arbitrage LP value is at most this.
    pub arbitrage: f64,
    /// Strictness threshold for margins of strictly consistent prices.
    pub strict_margin: f64,
    /// Per-node floor on the total mass of a consistent price vector.
    pub nonzero_mass: f64,
    /// Membership slack accepted when verifying price processes.
    pub membership: f64,
    /// Frank-Wolfe gap at which the scalarized solve stops.
    pub fw_gap: f64,
    /// Total componentwise improvement below which a candidate is Pareto maximal.
    pub pareto: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feasibility: 1e-8,
            pivot: 1e-9,
            duality: 1e-7,
            probability: 1e-12,
            bid_ask: 1e-10,
            degenerate: 1e-10,
            arbitrage: 1e-7,
            strict_margin: 1e-7,
            nonzero_mass: 1e-6,
            membership: 1e-6,
            fw_gap: 1e-6,
            pareto: 1e-5,
        }
    }
}

impl Tolerances {
    /// Defaults with `CONEMKT_TOL` overrides applied.
    pub fn from_env() -> Result<Self> {
        match std::env::var(ENV_VAR) {
            Ok(spec) => Self::default().with_overrides(&spec),
            Err(_) => Ok(Self::default()),
        }
    }

    pub fn with_overrides(mut self, spec: &str) -> Result<Self> {
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("{ENV_VAR}: expected key=value, got `{item}`")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("{ENV_VAR}: bad number in `{item}`")))?;
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter(format!("{ENV_VAR}: `{item}` must be positive")));
            }
            let slot = match key.trim() {
                "feasibility" => &mut self.feasibility,
                "pivot" => &mut self.pivot,
                "duality" => &mut self.duality,
                "probability" => &mut self.probability,
                "bid_ask" => &mut self.bid_ask,
                "degenerate" => &mut self.degenerate,
                "arbitrage" => &mut self.arbitrage,
                "strict_margin" => &mut self.strict_margin,
                "nonzero_mass" => &mut self.nonzero_mass,
                "membership" => &mut self.membership,
                "fw_gap" => &mut self.fw_gap,
                "pareto" => &mut self.pareto,
                other => return Err(Error::InvalidParameter(format!("{ENV_VAR}: unknown key `{other}`"))),
            };
            *slot = value;
        }
        Ok(self)
    }
}
