//! Fully-corrective conditional gradient over the attainable polytope.
//!
//! The objective is a concave function of the terminal positions `X(v)`,
//! which are affine in the plan variables `v`. Each outer iteration calls the
//! LP oracle on the linearised objective; the returned vertex is added to an
//! active set and the objective is then re-optimised over the convex hull of
//! the active set by pairwise conditional-gradient steps with exact line
//! search. The outer Frank–Wolfe gap `<grad F(X), X(s) - X>` at the LP vertex
//! `s` bounds the suboptimality and is the stopping criterion.

use log::{trace, warn};

use crate::attainable::Skeleton;
use crate::error::{Error, Result};
use crate::lp::{solve_lp_with, LinearProgram, LpStatus};
use crate::tolerance::Tolerances;
use crate::utility::AssetUtility;

pub const MAX_OUTER_ITERATIONS: usize = 10_000;
const MAX_INNER_ITERATIONS: usize = 20_000;
const LINE_SEARCH_ITERATIONS: usize = 200;

/// A concave objective on flattened terminal positions (`leaf * d + i`).
pub trait Objective {
    fn value(&self, x: &[f64]) -> Option<f64>;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// First and second derivative of `t -> F(x + t d)` at `t = 0`, or
    /// `None` outside the domain.
    fn directional(&self, x: &[f64], d: &[f64]) -> Option<(f64, f64)>;
}

/// Per-leaf probabilities and per-asset utilities shared by the objectives.
#[derive(Debug, Clone)]
pub struct UtilityField {
    pub dim: usize,
    pub probs: Vec<f64>,
    pub assets: Vec<AssetUtility>,
}

impl UtilityField {
    /// Componentwise expected utility of a flat terminal vector.
    pub fn expected(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut h = vec![0.0; d];
        for (r, &v) in x.iter().enumerate() {
            h[r % d] += self.probs[r / d] * self.assets[r % d].value(v);
        }
        h
    }

    /// `E U(to) - E U(from)` componentwise, free of cancellation.
    pub fn difference(&self, from: &[f64], to: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut h = vec![0.0; d];
        for r in 0..from.len() {
            h[r % d] += self.probs[r / d] * self.assets[r % d].difference(from[r], to[r]);
        }
        h
    }

    /// `grad h_i(x)` restricted to the coordinates of asset `i`, returned as
    /// one flat vector (each coordinate belongs to exactly one asset).
    pub fn marginals(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        x.iter().enumerate().map(|(r, &v)| self.probs[r / d] * self.assets[r % d].derivative(v)).collect()
    }
}

/// `sum_i w_i E U^i(X^i)`.
pub struct Weighted<'a> {
    pub field: &'a UtilityField,
    pub weights: Vec<f64>,
}

impl Objective for Weighted<'_> {
    fn value(&self, x: &[f64]) -> Option<f64> {
        Some(self.field.expected(x).iter().zip(&self.weights).map(|(h, w)| h * w).sum())
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let d = self.field.dim;
        let mut g = self.field.marginals(x);
        for (r, v) in g.iter_mut().enumerate() {
            *v *= self.weights[r % d];
        }
        g
    }

    fn directional(&self, x: &[f64], dir: &[f64]) -> Option<(f64, f64)> {
        let f = self.field;
        let d = f.dim;
        let (mut d1, mut d2) = (0.0, 0.0);
        for r in 0..x.len() {
            if dir[r] != 0.0 {
                let c = f.probs[r / d] * self.weights[r % d];
                let u = &f.assets[r % d];
                d1 += c * u.derivative(x[r]) * dir[r];
                d2 += c * u.second_derivative(x[r]) * dir[r] * dir[r];
            }
        }
        Some((d1, d2))
    }
}

/// Log-barrier merit of the componentwise-improvement problem:
/// `sum_i h_i(X) + tau * sum_i log(h_i(X) - h_i(X_c) + eta)`.
pub struct Barrier<'a> {
    pub field: &'a UtilityField,
    /// The candidate being improved (flat).
    pub base: Vec<f64>,
    pub tau: f64,
    pub eta: f64,
}

impl Barrier<'_> {
    /// Barrier arguments `h_i(X) - h_i(X_c) + eta`.
    pub fn slacks(&self, x: &[f64]) -> Vec<f64> {
        self.field.difference(&self.base, x).into_iter().map(|s| s + self.eta).collect()
    }

    /// Multipliers `1 + tau / slack_i`: the weights of the linearised objective.
    pub fn weights(&self, x: &[f64]) -> Vec<f64> {
        self.slacks(x).into_iter().map(|s| 1.0 + self.tau / s).collect()
    }
}

impl Objective for Barrier<'_> {
    fn value(&self, x: &[f64]) -> Option<f64> {
        let s = self.slacks(x);
        if s.iter().any(|v| !(*v > 0.0)) {
            return None;
        }
        let h: f64 = self.field.expected(x).iter().sum();
        Some(h + self.tau * s.iter().map(|v| v.ln()).sum::<f64>())
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let d = self.field.dim;
        let w = self.weights(x);
        let mut g = self.field.marginals(x);
        for (r, v) in g.iter_mut().enumerate() {
            *v *= w[r % d];
        }
        g
    }

    fn directional(&self, x: &[f64], dir: &[f64]) -> Option<(f64, f64)> {
        let f = self.field;
        let d = f.dim;
        let s = self.slacks(x);
        if s.iter().any(|v| !(*v > 0.0)) {
            return None;
        }
        let mut h1 = vec![0.0; d];
        let mut h2 = vec![0.0; d];
        for r in 0..x.len() {
            if dir[r] != 0.0 {
                let p = f.probs[r / d];
                let u = &f.assets[r % d];
                h1[r % d] += p * u.derivative(x[r]) * dir[r];
                h2[r % d] += p * u.second_derivative(x[r]) * dir[r] * dir[r];
            }
        }
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for i in 0..d {
            d1 += h1[i] * (1.0 + self.tau / s[i]);
            d2 += h2[i] * (1.0 + self.tau / s[i]) - self.tau * h1[i] * h1[i] / (s[i] * s[i]);
        }
        Some((d1, d2))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], t: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + t * b).collect()
}

/// Maximiser of the concave section `t -> F(x + t d)` on `[0, t_max]`,
/// by safeguarded Newton on the derivative with bisection fallback.
pub fn line_search(obj: &dyn Objective, x: &[f64], d: &[f64], t_max: f64) -> f64 {
    if let Some((p, _)) = obj.directional(&axpy(x, t_max, d), d) {
        if p >= 0.0 {
            return t_max;
        }
    }
    let Some((p0, pp0)) = obj.directional(x, d) else { return 0.0 };
    if p0 <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, t_max);
    let (mut at, mut p, mut pp) = (0.0, p0, pp0);
    let tiny = 1e-15 * p0.abs();
    for it in 0..LINE_SEARCH_ITERATIONS {
        let newton = if pp < 0.0 { at - p / pp } else { f64::NAN };
        let cand = if it % 3 != 2 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if cand <= lo || cand >= hi {
            break;
        }
        match obj.directional(&axpy(x, cand, d), d) {
            None => hi = cand,
            Some((q, qq)) => {
                if q.abs() <= tiny {
                    return cand;
                }
                if q > 0.0 {
                    lo = cand;
                } else {
                    hi = cand;
                }
                at = cand;
                p = q;
                pp = qq;
            }
        }
        if hi - lo <= 1e-16 * t_max.max(1e-300) {
            break;
        }
    }
    lo
}

/// One vertex of the active set: plan vector and its terminal positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub v: Vec<f64>,
    pub x: Vec<f64>,
}

/// State of a conditional-gradient run.
#[derive(Debug, Clone)]
pub struct FwState {
    pub atoms: Vec<Atom>,
    pub weights: Vec<f64>,
    /// Current terminal positions (flat).
    pub x: Vec<f64>,
    /// Last outer Frank–Wolfe gap.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FwState {
    pub fn from_atom(atom: Atom) -> Self {
        let x = atom.x.clone();
        Self { atoms: vec![atom], weights: vec![1.0], x, gap: f64::INFINITY, iterations: 0, converged: false }
    }

    /// Current plan vector `sum_k mu_k v_k`.
    pub fn plan_vector(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.atoms[0].v.len()];
        for (a, &w) in self.atoms.iter().zip(&self.weights) {
            for (o, s) in v.iter_mut().zip(&a.v) {
                *o += w * s;
            }
        }
        v
    }

    fn recompute(&mut self) {
        let total: f64 = self.weights.iter().sum();
        for w in &mut self.weights {
            *w /= total;
        }
        let mut x = vec![0.0; self.x.len()];
        for (a, &w) in self.atoms.iter().zip(&self.weights) {
            for (o, s) in x.iter_mut().zip(&a.x) {
                *o += w * s;
            }
        }
        self.x = x;
    }
}

/// The LP oracle over a skeleton.
pub struct Oracle<'a> {
    pub skeleton: &'a Skeleton,
    lp: LinearProgram,
    tol: Tolerances,
}

impl<'a> Oracle<'a> {
    pub fn new(skeleton: &'a Skeleton, tol: &Tolerances) -> Self {
        Self { skeleton, lp: skeleton.lp.clone(), tol: *tol }
    }

    /// Vertex maximising `<g, X(v)>`.
    pub fn vertex(&mut self, g: &[f64]) -> Result<Atom> {
        self.lp.objective = self.skeleton.pullback(g);
        let out = solve_lp_with(&self.lp, &self.tol)?;
        if out.status != LpStatus::Optimal {
            return Err(Error::Lp(format!("linear oracle returned {:?}", out.status)));
        }
        let v: Vec<f64> = out.primal.into_iter().map(|a| a.max(0.0)).collect();
        let x = self.skeleton.terminal(&v);
        Ok(Atom { v, x })
    }

    /// Frank–Wolfe gap of `obj` at `x`, with the maximising vertex.
    pub fn gap(&mut self, obj: &dyn Objective, x: &[f64]) -> Result<(f64, Atom)> {
        let g = obj.gradient(x);
        let s = self.vertex(&g)?;
        let gap = dot(&g, &s.x) - dot(&g, x);
        Ok((gap, s))
    }
}

/// Re-optimises `obj` over the convex hull of the active set.
fn inner_solve(obj: &dyn Objective, state: &mut FwState, tol: f64) {
    for _ in 0..MAX_INNER_ITERATIONS {
        let g = obj.gradient(&state.x);
        let scores: Vec<f64> = state.atoms.iter().map(|a| dot(&g, &a.x)).collect();
        let toward = (0..scores.len()).fold(0, |b, k| if scores[k] > scores[b] { k } else { b });
        let Some(away) = (0..scores.len())
            .filter(|&k| state.weights[k] > 0.0)
            .reduce(|b, k| if scores[k] < scores[b] { k } else { b })
        else {
            return;
        };
        if toward == away || scores[toward] - scores[away] <= tol {
            return;
        }
        let dir: Vec<f64> = state.atoms[toward].x.iter().zip(&state.atoms[away].x).map(|(a, b)| a - b).collect();
        let t_max = state.weights[away];
        let t = line_search(obj, &state.x, &dir, t_max);
        if t <= 0.0 {
            return;
        }
        if t >= t_max {
            state.weights[toward] += t_max;
            state.weights[away] = 0.0;
        } else {
            state.weights[toward] += t;
            state.weights[away] -= t;
        }
        state.x = axpy(&state.x, t, &dir);
    }
}

fn prune(state: &mut FwState) {
    let mut k = 0;
    while k < state.atoms.len() {
        if state.weights[k] <= 0.0 && state.atoms.len() > 1 {
            state.atoms.swap_remove(k);
            state.weights.swap_remove(k);
        } else {
            k += 1;
        }
    }
    state.recompute();
}

/// Runs fully-corrective conditional gradient until the gap is at most
/// `gap_tol` or the iteration cap is reached; `state.converged` records which.
pub fn maximize(obj: &dyn Objective, oracle: &mut Oracle, mut state: FwState, gap_tol: f64) -> Result<FwState> {
    let inner_tol = 0.1 * gap_tol;
    let start_iter = state.iterations;
    loop {
        let (gap, s) = oracle.gap(obj, &state.x)?;
        state.gap = gap;
        trace!("conditional gradient iteration {}: gap {gap:e}", state.iterations);
        if gap <= gap_tol {
            state.converged = true;
            break;
        }
        if state.iterations - start_iter >= MAX_OUTER_ITERATIONS {
            break;
        }
        state.iterations += 1;
        let duplicate = state
            .atoms
            .iter()
            .any(|a| a.x.iter().zip(&s.x).all(|(p, q)| (p - q).abs() <= 1e-13 * (1.0 + p.abs())));
        if !duplicate {
            state.atoms.push(s);
            state.weights.push(0.0);
        }
        inner_solve(obj, &mut state, inner_tol);
        prune(&mut state);
    }
    let worst = state.x.iter().copied().fold(0.0, f64::min);
    if worst < -1e-9 {
        warn!("terminal position drifted to {worst:e}; projecting to zero");
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        target: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn value(&self, x: &[f64]) -> Option<f64> {
            Some(-x.iter().zip(&self.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            x.iter().zip(&self.target).map(|(a, b)| -2.0 * (a - b)).collect()
        }
        fn directional(&self, x: &[f64], d: &[f64]) -> Option<(f64, f64)> {
            let g = self.gradient(x);
            Some((dot(&g, d), -2.0 * dot(d, d)))
        }
    }

    #[test]
    fn line_search_finds_interior_maximum() {
        let q = Quadratic { target: vec![0.3, -0.2] };
        let t = line_search(&q, &[0.0, 0.0], &[1.0, 0.0], 1.0);
        assert!((t - 0.3).abs() < 1e-14);
        let t = line_search(&q, &[0.0, 0.0], &[1.0, 0.0], 0.1);
        assert_eq!(t, 0.1);
        let t = line_search(&q, &[0.0, 0.0], &[0.0, 1.0], 1.0);
        assert_eq!(t, 0.0);
    }

    #[test]
    fn exp_line_search_precision() {
        let field = UtilityField { dim: 1, probs: vec![0.5, 0.5], assets: vec![AssetUtility::exp(2.0)] };
        let w = Weighted { field: &field, weights: vec![1.0] };
        // maximise 0.5 U(1 - t) + 0.5 U(t): optimum at t = 0.5
        let t = line_search(&w, &[1.0, 0.0], &[-1.0, 1.0], 1.0);
        assert!((t - 0.5).abs() < 1e-14);
    }
}
