//! Bounded-above utility families and vector expected utility.
//!
//! Every admitted family has `U(0) = 0`, `sup U = 1` and a finite right
//! derivative at zero:
//!
//! * `exp`:     `U(x) = 1 - exp(-a x)`
//! * `hyp`:     `U(x) = x / (b + x)`
//! * `powasym`: `U(x) = 1 - (1 + x)^(-g)`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::ScenarioTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Exp,
    Hyp,
    Powasym,
}

/// One asset's utility function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssetUtility {
    pub family: Family,
    pub param: f64,
}

impl AssetUtility {
    pub fn exp(alpha: f64) -> Self {
        Self { family: Family::Exp, param: alpha }
    }

    pub fn hyp(beta: f64) -> Self {
        Self { family: Family::Hyp, param: beta }
    }

    pub fn powasym(gamma: f64) -> Self {
        Self { family: Family::Powasym, param: gamma }
    }

    /// Closed-form value; also defined slightly left of zero, where the
    /// formulas stay smooth and concave.
    pub fn value(&self, x: f64) -> f64 {
        let a = self.param;
        match self.family {
            Family::Exp => -(-a * x).exp_m1(),
            Family::Hyp => x / (a + x),
            Family::Powasym => -(-a * x.ln_1p()).exp_m1(),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let a = self.param;
        match self.family {
            Family::Exp => a * (-a * x).exp(),
            Family::Hyp => a / ((a + x) * (a + x)),
            Family::Powasym => a * (-(a + 1.0) * x.ln_1p()).exp(),
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        let a = self.param;
        match self.family {
            Family::Exp => -a * a * (-a * x).exp(),
            Family::Hyp => -2.0 * a / ((a + x) * (a + x) * (a + x)),
            Family::Powasym => -a * (a + 1.0) * (-(a + 2.0) * x.ln_1p()).exp(),
        }
    }

    /// `U(to) - U(from)` without cancellation.
    pub fn difference(&self, from: f64, to: f64) -> f64 {
        let a = self.param;
        let h = to - from;
        match self.family {
            Family::Exp => -(-a * from).exp() * (-a * h).exp_m1(),
            Family::Hyp => a * h / ((a + from) * (a + to)),
            Family::Powasym => -(-a * from.ln_1p()).exp() * (-a * (h / (1.0 + from)).ln_1p()).exp_m1(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.param.is_finite() && self.param > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "{:?} utility needs a finite positive parameter, got {}",
                self.family, self.param
            )));
        }
        Ok(())
    }
}

/// Per-asset utilities: `{"assets": [{"family": "exp", "param": 1.0}, ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub assets: Vec<AssetUtility>,
}

impl UtilitySpec {
    pub fn new(assets: Vec<AssetUtility>) -> Result<Self> {
        let spec = Self { assets };
        spec.validate()?;
        Ok(spec)
    }

    /// The same family and parameter for all `d` assets.
    pub fn uniform(d: usize, u: AssetUtility) -> Result<Self> {
        Self::new(vec![u; d])
    }

    pub fn dim(&self) -> usize {
        self.assets.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.assets.is_empty() {
            return Err(Error::InvalidParameter("utility spec has no assets".into()));
        }
        self.assets.iter().try_for_each(AssetUtility::validate)
    }

    pub fn asset(&self, i: usize) -> Result<&AssetUtility> {
        self.assets.get(i).ok_or(Error::Dimension { expected: self.assets.len(), got: i + 1 })
    }
}

/// Value and derivative of asset `i`'s utility at `x >= 0`.
pub fn eval_utility(spec: &UtilitySpec, i: usize, x: f64) -> Result<(f64, f64)> {
    let u = spec.asset(i)?;
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::InvalidParameter(format!("utility argument {x} is not a finite nonnegative number")));
    }
    Ok((u.value(x), u.derivative(x)))
}

/// `E_P U(X_T)` componentwise; `terminal` is in leaf order.
pub fn expected_vector_utility(tree: &ScenarioTree, terminal: &[Vec<f64>], spec: &UtilitySpec) -> Result<Vec<f64>> {
    check_terminal(tree, terminal, spec)?;
    for (pos, v) in terminal.iter().enumerate() {
        if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !(**x >= 0.0)) {
            return Err(Error::NegativeHolding { leaf: tree.node(tree.leaves()[pos]).id.clone(), asset: i, value: *x });
        }
    }
    Ok(expected_utility_unchecked(tree, terminal, spec))
}

pub(crate) fn check_terminal(tree: &ScenarioTree, terminal: &[Vec<f64>], spec: &UtilitySpec) -> Result<()> {
    if terminal.len() != tree.leaves().len() {
        return Err(Error::Dimension { expected: tree.leaves().len(), got: terminal.len() });
    }
    if let Some(v) = terminal.iter().find(|v| v.len() != spec.dim()) {
        return Err(Error::Dimension { expected: spec.dim(), got: v.len() });
    }
    Ok(())
}

pub(crate) fn expected_utility_unchecked(tree: &ScenarioTree, terminal: &[Vec<f64>], spec: &UtilitySpec) -> Vec<f64> {
    let mut out = vec![0.0; spec.dim()];
    for (&leaf, v) in tree.leaves().iter().zip(terminal) {
        let p = tree.prob(leaf);
        for (i, u) in spec.assets.iter().enumerate() {
            out[i] += p * u.value(v[i]);
        }
    }
    out
}

/// `E_P U(to) - E_P U(from)` componentwise, free of cancellation.
pub fn expected_utility_difference(
    tree: &ScenarioTree,
    from: &[Vec<f64>],
    to: &[Vec<f64>],
    spec: &UtilitySpec,
) -> Result<Vec<f64>> {
    check_terminal(tree, from, spec)?;
    check_terminal(tree, to, spec)?;
    let mut out = vec![0.0; spec.dim()];
    for ((&leaf, a), b) in tree.leaves().iter().zip(from).zip(to) {
        let p = tree.prob(leaf);
        for (i, u) in spec.assets.iter().enumerate() {
            out[i] += p * u.difference(a[i], b[i]);
        }
    }
    Ok(out)
}
