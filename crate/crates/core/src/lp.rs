//! Dense revised simplex for small linear programs.
//!
//! Bounded variables (finite lower bound, optional upper bound), rows of any
//! sense, two phases with artificial columns, explicit basis inverse with
//! periodic refactorisation. Pricing is Dantzig's rule for the first
//! [`DANTZIG_ITERATIONS`] iterations and Bland's rule afterwards, which rules
//! out cycling on the degenerate polyhedra that cones through the origin
//! produce.

use log::trace;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tolerance::Tolerances;

pub const DANTZIG_ITERATIONS: usize = 5000;
pub const ITERATION_CAP: usize = 1_000_000;
const REFACTOR_EVERY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub direction: Direction,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// `num_vars` variables with bounds `[0, inf)` and zero objective.
    pub fn new(num_vars: usize, direction: Direction) -> Self {
        Self {
            direction,
            objective: vec![0.0; num_vars],
            rows: Vec::new(),
            lower: vec![0.0; num_vars],
            upper: vec![f64::INFINITY; num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.rows.push(Row { coeffs, sense, rhs });
        self.rows.len() - 1
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    fn check(&self) -> Result<()> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Lp(format!(
                "bounds have lengths {}/{} for {n} variables",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (j, (&l, &u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !l.is_finite() {
                return Err(Error::Lp(format!("variable {j} has non-finite lower bound")));
            }
            if u < l {
                return Err(Error::Lp(format!("variable {j} has empty bounds [{l}, {u}]")));
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(Error::Lp(format!("row {r} has non-finite right-hand side")));
            }
            if let Some(&(j, _)) = row.coeffs.iter().find(|(j, _)| *j >= n) {
                return Err(Error::Dimension { expected: n, got: j + 1 });
            }
        }
        Ok(())
    }

    /// Row activities `A x`.
    pub fn activities(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.coeffs.iter().map(|&(j, a)| a * x[j]).sum()).collect()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn primal_residual(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (row, act) in self.rows.iter().zip(self.activities(x)) {
            let v = match row.sense {
                Sense::Le => act - row.rhs,
                Sense::Ge => row.rhs - act,
                Sense::Eq => (act - row.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for j in 0..x.len() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpOutcome {
    pub status: LpStatus,
    /// Optimal point, or a feasible point when unbounded; empty when infeasible.
    pub primal: Vec<f64>,
    /// Row multipliers with `c - A^T y` the reduced costs.
    pub dual: Vec<f64>,
    pub objective: f64,
    /// Improving recession direction when unbounded.
    pub ray: Option<Vec<f64>>,
    pub iterations: usize,
}

/// Optimality residuals of an outcome, for certificate checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub primal: f64,
    pub complementarity: f64,
    pub dual_infeasibility: f64,
    /// Dual objective bound (an upper bound for maximisation).
    pub dual_objective: f64,
}

impl LpOutcome {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn residuals(&self, lp: &LinearProgram) -> Residuals {
        let x = &self.primal;
        let y = &self.dual;
        // Work with the maximisation form: max s c x.
        let s = match lp.direction {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        };
        let mut z: Vec<f64> = lp.objective.iter().map(|c| s * c).collect();
        for (r, row) in lp.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                z[j] -= s * y[r] * a;
            }
        }
        let acts = lp.activities(x);
        let mut comp = 0.0f64;
        let mut dual_inf = 0.0f64;
        let mut dual_obj = 0.0;
        for (r, row) in lp.rows.iter().enumerate() {
            let ys = s * y[r];
            comp = comp.max((ys * (row.rhs - acts[r])).abs());
            match row.sense {
                Sense::Le => dual_inf = dual_inf.max(-ys),
                Sense::Ge => dual_inf = dual_inf.max(ys),
                Sense::Eq => {}
            }
            dual_obj += ys * row.rhs;
        }
        for j in 0..x.len() {
            let (l, u) = (lp.lower[j], lp.upper[j]);
            if z[j] > 0.0 {
                if u.is_finite() {
                    dual_obj += z[j] * u;
                    comp = comp.max((z[j] * (u - x[j])).abs());
                } else {
                    dual_inf = dual_inf.max(z[j]);
                }
            } else {
                dual_obj += z[j] * l;
                comp = comp.max((z[j] * (x[j] - l)).abs());
            }
        }
        Residuals {
            primal: lp.primal_residual(x),
            complementarity: comp,
            dual_infeasibility: dual_inf,
            dual_objective: s * dual_obj,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pricing {
    Dantzig,
    Bland,
}

/// Internal standard form: `[A | I | art] x = b`, every column with bounds.
struct Simplex<'a> {
    tol: &'a Tolerances,
    m: usize,
    n_struct: usize,
    cols: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    binv: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
}

enum Step {
    Optimal,
    Unbounded { entering: usize, sigma: f64, alpha: Vec<f64> },
    Moved,
}

impl<'a> Simplex<'a> {
    fn binv_col(&self, col: &[(usize, f64)]) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; m];
        for &(k, a) in col {
            for i in 0..m {
                out[i] += self.binv[i * m + k] * a;
            }
        }
        out
    }

    fn duals(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (i, &bv) in self.basis.iter().enumerate() {
            let c = self.cost[bv];
            if c != 0.0 {
                for k in 0..m {
                    y[k] += c * self.binv[i * m + k];
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, y: &[f64]) -> f64 {
        self.cost[j] - self.cols[j].iter().map(|&(k, a)| y[k] * a).sum::<f64>()
    }

    /// Recomputes the basis inverse from scratch and the basic values from
    /// the nonbasic ones.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut bmat = vec![0.0; m * m];
        for (i, &bv) in self.basis.iter().enumerate() {
            for &(k, a) in &self.cols[bv] {
                bmat[k * m + i] = a;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let p = (c..m)
                .max_by(|&a, &b| bmat[a * m + c].abs().total_cmp(&bmat[b * m + c].abs()))
                .unwrap_or(c);
            if bmat[p * m + c].abs() < 1e-14 {
                return Err(Error::Lp("singular basis during refactorisation".into()));
            }
            if p != c {
                for k in 0..m {
                    bmat.swap(p * m + k, c * m + k);
                    inv.swap(p * m + k, c * m + k);
                }
            }
            let piv = bmat[c * m + c];
            for k in 0..m {
                bmat[c * m + k] /= piv;
                inv[c * m + k] /= piv;
            }
            for r in 0..m {
                if r != c {
                    let f = bmat[r * m + c];
                    if f != 0.0 {
                        for k in 0..m {
                            bmat[r * m + k] -= f * bmat[c * m + k];
                            inv[r * m + k] -= f * inv[c * m + k];
                        }
                    }
                }
            }
        }
        self.binv = inv;
        let mut rhs = self.b.clone();
        for j in 0..self.cols.len() {
            if !self.is_basic[j] && self.x[j] != 0.0 {
                for &(k, a) in &self.cols[j] {
                    rhs[k] -= a * self.x[j];
                }
            }
        }
        for i in 0..m {
            let v: f64 = (0..m).map(|k| self.binv[i * m + k] * rhs[k]).sum();
            self.x[self.basis[i]] = v;
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn step(&mut self, pricing: Pricing) -> Result<Step> {
        let y = self.duals();
        let dtol = self.tol.pivot;
        let mut entering: Option<(usize, f64, f64)> = None;
        for j in 0..self.cols.len() {
            if self.is_basic[j] || self.upper[j] - self.lower[j] <= 0.0 {
                continue;
            }
            let d = self.reduced_cost(j, &y);
            let at_upper = self.upper[j].is_finite() && self.x[j] >= self.upper[j];
            let sigma = if d < -dtol && !at_upper {
                1.0
            } else if d > dtol && (at_upper || self.x[j] > self.lower[j]) {
                -1.0
            } else {
                continue;
            };
            let score = d.abs();
            match pricing {
                Pricing::Bland => {
                    entering = Some((j, sigma, score));
                    break;
                }
                Pricing::Dantzig => {
                    if entering.is_none_or(|(_, _, best)| score > best) {
                        entering = Some((j, sigma, score));
                    }
                }
            }
        }
        let Some((q, sigma, _)) = entering else { return Ok(Step::Optimal) };

        let alpha = self.binv_col(&self.cols[q]);
        let ptol = self.tol.pivot;
        let mut best_t = self.upper[q] - self.lower[q];
        let mut leave: Option<usize> = None;
        let mut leave_to_upper = false;
        for i in 0..self.m {
            let rate = -sigma * alpha[i];
            if rate.abs() <= ptol {
                continue;
            }
            let bv = self.basis[i];
            let (t, to_upper) = if rate < 0.0 {
                (((self.x[bv] - self.lower[bv]) / -rate).max(0.0), false)
            } else if self.upper[bv].is_finite() {
                (((self.upper[bv] - self.x[bv]) / rate).max(0.0), true)
            } else {
                continue;
            };
            let better = match leave {
                None => t < best_t,
                Some(cur) => {
                    if t < best_t - 1e-12 {
                        true
                    } else if t <= best_t + 1e-12 {
                        match pricing {
                            Pricing::Bland => bv < self.basis[cur],
                            Pricing::Dantzig => alpha[i].abs() > alpha[cur].abs(),
                        }
                    } else {
                        false
                    }
                }
            };
            if better {
                best_t = t;
                leave = Some(i);
                leave_to_upper = to_upper;
            }
        }
        if best_t.is_infinite() {
            return Ok(Step::Unbounded { entering: q, sigma, alpha });
        }

        // Move along the edge.
        self.x[q] += sigma * best_t;
        for i in 0..self.m {
            let bv = self.basis[i];
            self.x[bv] -= sigma * best_t * alpha[i];
        }
        let Some(r) = leave else {
            // Bound flip of the entering variable.
            self.x[q] = if sigma > 0.0 { self.upper[q] } else { self.lower[q] };
            return Ok(Step::Moved);
        };

        let out = self.basis[r];
        self.x[out] = if leave_to_upper { self.upper[out] } else { self.lower[out] };
        self.is_basic[out] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;

        let m = self.m;
        let piv = alpha[r];
        for k in 0..m {
            self.binv[r * m + k] /= piv;
        }
        for i in 0..m {
            if i != r && alpha[i] != 0.0 {
                let f = alpha[i];
                for k in 0..m {
                    self.binv[i * m + k] -= f * self.binv[r * m + k];
                }
            }
        }
        self.since_refactor += 1;
        if self.since_refactor >= REFACTOR_EVERY {
            self.refactor()?;
        }
        Ok(Step::Moved)
    }

    fn run(&mut self) -> Result<Step> {
        loop {
            if self.iterations >= ITERATION_CAP {
                return Err(Error::IterationCap(ITERATION_CAP));
            }
            let pricing = if self.iterations < DANTZIG_ITERATIONS { Pricing::Dantzig } else { Pricing::Bland };
            self.iterations += 1;
            match self.step(pricing)? {
                Step::Moved => {}
                other => {
                    trace!("simplex stop after {} iterations", self.iterations);
                    return Ok(other);
                }
            }
        }
    }
}

/// Solves `lp` with the default tolerances.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpOutcome> {
    solve_lp_with(lp, &Tolerances::default())
}

pub fn solve_lp_with(lp: &LinearProgram, tol: &Tolerances) -> Result<LpOutcome> {
    lp.check()?;
    let n = lp.num_vars();
    let m = lp.rows.len();

    // Ge rows are negated into Le rows; `row_sign` undoes it for the duals.
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut b = vec![0.0; m];
    let mut row_sign = vec![1.0; m];
    for (r, row) in lp.rows.iter().enumerate() {
        let s = if row.sense == Sense::Ge { -1.0 } else { 1.0 };
        row_sign[r] = s;
        b[r] = s * row.rhs;
        for &(j, a) in &row.coeffs {
            if a != 0.0 {
                match cols[j].last_mut() {
                    Some((k, v)) if *k == r => *v += s * a,
                    _ => cols[j].push((r, s * a)),
                }
            }
        }
    }
    let mut lower = lp.lower.clone();
    let mut upper = lp.upper.clone();
    for (r, row) in lp.rows.iter().enumerate() {
        cols.push(vec![(r, 1.0)]);
        lower.push(0.0);
        upper.push(if row.sense == Sense::Eq { 0.0 } else { f64::INFINITY });
    }

    // Nonbasic structurals start at their lower bounds.
    let mut x: Vec<f64> = lower.clone();
    let mut resid = b.clone();
    for j in 0..n {
        if x[j] != 0.0 {
            for &(k, a) in &cols[j] {
                resid[k] -= a * x[j];
            }
        }
    }

    // Slack basis where feasible, artificial columns elsewhere.
    let mut basis = Vec::with_capacity(m);
    let mut phase1_cost = vec![0.0; cols.len()];
    for r in 0..m {
        let slack = n + r;
        if resid[r] >= 0.0 && resid[r] <= upper[slack] {
            basis.push(slack);
            x[slack] = resid[r];
        } else {
            x[slack] = 0.0;
            let sign = if resid[r] >= 0.0 { 1.0 } else { -1.0 };
            cols.push(vec![(r, sign)]);
            lower.push(0.0);
            upper.push(f64::INFINITY);
            x.push(resid[r].abs());
            phase1_cost.push(1.0);
            basis.push(cols.len() - 1);
        }
    }
    let total = cols.len();
    let mut is_basic = vec![false; total];
    for &bv in &basis {
        is_basic[bv] = true;
    }
    let mut binv = vec![0.0; m * m];
    for (i, &bv) in basis.iter().enumerate() {
        let (_, a) = cols[bv][0];
        binv[i * m + i] = 1.0 / a;
    }

    let mut sx = Simplex {
        tol,
        m,
        n_struct: n,
        cols,
        b,
        lower,
        upper,
        cost: phase1_cost,
        x,
        basis,
        is_basic,
        binv,
        iterations: 0,
        since_refactor: 0,
    };

    let num_art = total - n - m;
    if num_art > 0 {
        sx.run()?;
        sx.refactor()?;
        let infeas: f64 = (n + m..total).map(|j| sx.x[j]).sum();
        if infeas > tol.feasibility * (1.0 + b_norm(&sx.b)) {
            return Ok(LpOutcome {
                status: LpStatus::Infeasible,
                primal: Vec::new(),
                dual: Vec::new(),
                objective: f64::NAN,
                ray: None,
                iterations: sx.iterations,
            });
        }
        for j in n + m..total {
            sx.upper[j] = 0.0;
            sx.x[j] = 0.0;
        }
    }

    let flip = if lp.direction == Direction::Maximize { -1.0 } else { 1.0 };
    sx.cost = vec![0.0; total];
    for j in 0..n {
        sx.cost[j] = flip * lp.objective[j];
    }
    sx.refactor()?;
    let stop = sx.run()?;
    if matches!(stop, Step::Optimal) {
        sx.refactor()?;
    }
    let primal: Vec<f64> = sx.x[..sx.n_struct].to_vec();
    let y = sx.duals();
    let dual: Vec<f64> = (0..m).map(|r| flip * row_sign[r] * y[r]).collect();
    let objective = lp.objective_value(&primal);
    match stop {
        Step::Unbounded { entering, sigma, alpha } => {
            let mut ray = vec![0.0; n];
            if entering < n {
                ray[entering] = sigma;
            }
            for (i, &bv) in sx.basis.iter().enumerate() {
                if bv < n {
                    ray[bv] = -sigma * alpha[i];
                }
            }
            Ok(LpOutcome {
                status: LpStatus::Unbounded,
                primal,
                dual,
                objective,
                ray: Some(ray),
                iterations: sx.iterations,
            })
        }
        _ => Ok(LpOutcome { status: LpStatus::Optimal, primal, dual, objective, ray: None, iterations: sx.iterations }),
    }
}

fn b_norm(b: &[f64]) -> f64 {
    b.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Outcome of [`feasibility_with_margin`].
#[derive(Debug, Clone, PartialEq)]
pub struct MarginOutcome {
    pub status: LpStatus,
    /// Largest uniform slack on the designated rows; `+inf` when unbounded.
    pub epsilon: f64,
    pub point: Vec<f64>,
}

/// Maximises a common slack `eps >= 0` on designated `<=` rows:
/// `A_r x + eps <= b_r`. The objective of `constraints` is ignored.
pub fn feasibility_with_margin(constraints: &LinearProgram, margin_rows: &[usize]) -> Result<MarginOutcome> {
    feasibility_with_margin_tol(constraints, margin_rows, &Tolerances::default())
}

pub fn feasibility_with_margin_tol(
    constraints: &LinearProgram,
    margin_rows: &[usize],
    tol: &Tolerances,
) -> Result<MarginOutcome> {
    let mut lp = constraints.clone();
    lp.direction = Direction::Maximize;
    lp.objective.iter_mut().for_each(|c| *c = 0.0);
    let eps = lp.add_var(1.0, 0.0, f64::INFINITY);
    for &r in margin_rows {
        let row = lp.rows.get_mut(r).ok_or_else(|| Error::Lp(format!("margin row {r} does not exist")))?;
        if row.sense != Sense::Le {
            return Err(Error::Lp(format!("margin row {r} is not a <= row")));
        }
        row.coeffs.push((eps, 1.0));
    }
    let out = solve_lp_with(&lp, tol)?;
    let n = constraints.num_vars();
    Ok(match out.status {
        LpStatus::Optimal => MarginOutcome { status: out.status, epsilon: out.primal[eps], point: out.primal[..n].to_vec() },
        LpStatus::Unbounded => MarginOutcome { status: out.status, epsilon: f64::INFINITY, point: out.primal[..n].to_vec() },
        LpStatus::Infeasible => MarginOutcome { status: out.status, epsilon: f64::NAN, point: Vec::new() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_variable() {
        let mut lp = LinearProgram::new(1, Direction::Maximize);
        lp.objective[0] = 1.0;
        lp.add_row(vec![(0, 1.0)], Sense::Le, 1.0);
        let out = solve_lp(&lp).unwrap();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.primal[0] - 1.0).abs() < 1e-12);
        assert!((out.objective - 1.0).abs() < 1e-12);
        assert!((out.dual[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_face() {
        let mut lp = LinearProgram::new(2, Direction::Maximize);
        lp.objective = vec![1.0, 1.0];
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Sense::Le, 1.0);
        let out = solve_lp(&lp).unwrap();
        assert!((out.objective - 1.0).abs() < 1e-12);
        let r = out.residuals(&lp);
        assert!(r.primal <= 1e-8 && r.complementarity <= 1e-7 && r.dual_infeasibility <= 1e-9);
    }

    #[test]
    fn unbounded_ray() {
        let mut lp = LinearProgram::new(1, Direction::Maximize);
        lp.objective[0] = 1.0;
        let out = solve_lp(&lp).unwrap();
        assert_eq!(out.status, LpStatus::Unbounded);
        assert_eq!(out.ray, Some(vec![1.0]));

        // unbounded through a row: max x + y, x - y <= 1
        let mut lp = LinearProgram::new(2, Direction::Maximize);
        lp.objective = vec![1.0, 1.0];
        lp.add_row(vec![(0, 1.0), (1, -1.0)], Sense::Le, 1.0);
        let out = solve_lp(&lp).unwrap();
        assert_eq!(out.status, LpStatus::Unbounded);
        let ray = out.ray.unwrap();
        assert!(ray.iter().all(|v| *v >= -1e-12));
        assert!(ray[0] - ray[1] <= 1e-12);
        assert!(ray[0] + ray[1] > 0.0);
    }

    #[test]
    fn infeasible_and_equality() {
        let mut lp = LinearProgram::new(1, Direction::Minimize);
        lp.add_row(vec![(0, 1.0)], Sense::Le, -1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);

        // min x + 2y s.t. x + y = 3, x <= 2
        let mut lp = LinearProgram::new(2, Direction::Minimize);
        lp.objective = vec![1.0, 2.0];
        lp.set_bounds(0, 0.0, 2.0);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Sense::Eq, 3.0);
        let out = solve_lp(&lp).unwrap();
        assert!((out.objective - 4.0).abs() < 1e-10);
        assert!((out.primal[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn ge_rows_and_shifted_bounds() {
        // min x s.t. x >= 2.5, x in [1, 10]
        let mut lp = LinearProgram::new(1, Direction::Minimize);
        lp.objective[0] = 1.0;
        lp.set_bounds(0, 1.0, 10.0);
        lp.add_row(vec![(0, 1.0)], Sense::Ge, 2.5);
        let out = solve_lp(&lp).unwrap();
        assert!((out.primal[0] - 2.5).abs() < 1e-12);
        assert!((out.dual[0] - 1.0).abs() < 1e-12);
        let r = out.residuals(&lp);
        assert!((r.dual_objective - 2.5).abs() < 1e-10);
    }

    #[test]
    fn bad_input() {
        let mut lp = LinearProgram::new(1, Direction::Minimize);
        lp.add_row(vec![(3, 1.0)], Sense::Le, 1.0);
        assert!(matches!(solve_lp(&lp), Err(Error::Dimension { .. })));
        let mut lp = LinearProgram::new(1, Direction::Minimize);
        lp.lower[0] = f64::NEG_INFINITY;
        assert!(solve_lp(&lp).is_err());
    }

    #[test]
    fn margin_examples() {
        let mut sys = LinearProgram::new(1, Direction::Maximize);
        sys.add_row(vec![(0, 1.0)], Sense::Le, 1.0);
        sys.add_row(vec![(0, -1.0)], Sense::Le, 0.0);
        let out = feasibility_with_margin(&sys, &[0, 1]).unwrap();
        assert!((out.epsilon - 0.5).abs() < 1e-12);
        assert!((out.point[0] - 0.5).abs() < 1e-12);

        let mut sys = LinearProgram::new(1, Direction::Maximize);
        sys.add_row(vec![(0, 1.0)], Sense::Le, 0.0);
        sys.add_row(vec![(0, -1.0)], Sense::Le, 0.0);
        let out = feasibility_with_margin(&sys, &[0, 1]).unwrap();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!(out.epsilon.abs() < 1e-12);

        let mut sys = LinearProgram::new(1, Direction::Maximize);
        sys.add_row(vec![(0, 1.0)], Sense::Le, -1.0);
        sys.add_row(vec![(0, -1.0)], Sense::Le, 0.0);
        assert_eq!(feasibility_with_margin(&sys, &[0, 1]).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn deterministic() {
        let mut lp = LinearProgram::new(3, Direction::Maximize);
        lp.objective = vec![1.0, 1.0, 1.0];
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Sense::Le, 1.0);
        lp.add_row(vec![(1, 1.0), (2, 1.0)], Sense::Le, 1.0);
        lp.add_row(vec![(0, 1.0), (2, 1.0)], Sense::Le, 1.0);
        let a = solve_lp(&lp).unwrap();
        let b = solve_lp(&lp).unwrap();
        assert_eq!(a, b);
        assert!((a.objective - 1.5).abs() < 1e-12);
    }
}
