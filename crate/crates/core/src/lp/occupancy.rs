//! Occupancy-measure programs over the truncated belief space.
//!
//! Variables are `x(b, a) >= 0`, laid out as column `b * |A| + a`. The
//! objective minimizes `-sum R(b,a) x(b,a)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::program::{Constraint, LinearProgram, Relation, Sense};
use super::simplex::{LpSolution, LpStatus, FEASIBILITY_TOL};
use super::LpError;
use crate::belief::{BeliefKernel, BeliefSpace};
use crate::mdp::FiniteMdp;

/// Bijection `(belief, action) <-> column`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarIndex {
    pub n_beliefs: usize,
    pub n_actions: usize,
}

impl VarIndex {
    pub fn col(&self, belief: usize, action: usize) -> usize {
        belief * self.n_actions + action
    }

    pub fn decode(&self, col: usize) -> (usize, usize) {
        (col / self.n_actions, col % self.n_actions)
    }

    pub fn len(&self) -> usize {
        self.n_beliefs * self.n_actions
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowRole {
    /// `sum_a x(b', a) - sum_{b,a} Q(b'|b,a) x(b,a) = 0`.
    Flow(usize),
    /// `sum_a x(b, a) = nu(b)`.
    Pin(usize),
    /// `sum x = retained mass`.
    Normalization,
    /// `sum C(b,a) x(b,a) <= B`.
    Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyLp {
    pub program: LinearProgram,
    pub vars: VarIndex,
    pub rows: Vec<RowRole>,
    pub reward: Vec<Vec<f64>>,
    pub cost: Vec<Vec<f64>>,
    pub budget: Option<f64>,
}

impl OccupancyLp {
    pub fn row_of(&self, role: RowRole) -> Option<usize> {
        self.rows.iter().position(|r| *r == role)
    }

    pub fn n_eq_rows(&self) -> usize {
        self.program
            .constraints
            .iter()
            .filter(|r| r.relation == Relation::Eq)
            .count()
    }

    pub fn n_ub_rows(&self) -> usize {
        self.program.n_rows() - self.n_eq_rows()
    }

    /// `sum C(b,a) x(b,a)`.
    pub fn average_cost(&self, x: &[f64]) -> f64 {
        (0..self.vars.len())
            .map(|col| {
                let (b, a) = self.vars.decode(col);
                self.cost[b][a] * x[col]
            })
            .sum()
    }

    /// `sum R(b,a) x(b,a)`, i.e. the negated objective.
    pub fn average_reward(&self, x: &[f64]) -> f64 {
        -self.program.objective_at(x)
    }
}

fn check_tables(n: usize, m: usize, reward: &[Vec<f64>], cost: &[Vec<f64>]) -> Result<(), LpError> {
    for (name, t) in [("reward", reward), ("cost", cost)] {
        if t.len() != n || t.iter().any(|row| row.len() != m) {
            return Err(LpError::DimensionMismatch(format!(
                "{name} table is not {n} x {m}"
            )));
        }
    }
    Ok(())
}

fn objective_and_budget(
    vars: VarIndex,
    reward: &[Vec<f64>],
    cost: &[Vec<f64>],
) -> (Vec<f64>, Vec<(usize, f64)>) {
    let mut objective = vec![0.0; vars.len()];
    let mut budget_row = Vec::with_capacity(vars.len());
    for b in 0..vars.n_beliefs {
        for a in 0..vars.n_actions {
            let col = vars.col(b, a);
            objective[col] = -reward[b][a];
            budget_row.push((col, cost[b][a]));
        }
    }
    (objective, budget_row)
}

/// Truncated primal: one flow row per belief, the normalization row and,
/// when `constrained` and `budget` is finite, the budget row.
///
/// Flow rows use [`BeliefKernel::balance_row`] and the normalization row uses
/// [`BeliefKernel::retained_mass`], so under `drop` the program describes the
/// un-renormalized occupancy of the first `K + 1` ages.
pub fn build_primal(
    space: &BeliefSpace,
    kernel: &BeliefKernel,
    reward: &[Vec<f64>],
    cost: &[Vec<f64>],
    budget: f64,
    constrained: bool,
) -> Result<OccupancyLp, LpError> {
    let n = space.len();
    let m = space.n_actions;
    if kernel.n_beliefs != n || kernel.n_actions != m {
        return Err(LpError::DimensionMismatch(format!(
            "kernel is {} x {}, space is {n} x {m}",
            kernel.n_beliefs, kernel.n_actions
        )));
    }
    check_tables(n, m, reward, cost)?;
    let vars = VarIndex {
        n_beliefs: n,
        n_actions: m,
    };
    let (objective, budget_row) = objective_and_budget(vars, reward, cost);
    let mut program = LinearProgram::new(Sense::Minimize, objective);
    let mut rows = Vec::with_capacity(n + 2);

    let mut flow: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    for b in 0..n {
        for a in 0..m {
            let col = vars.col(b, a);
            *flow[b].entry(col).or_insert(0.0) += 1.0;
            for (j, p) in kernel.balance_row(b, a) {
                *flow[j].entry(col).or_insert(0.0) -= p;
            }
        }
    }
    for (b, coeffs) in flow.into_iter().enumerate() {
        let coeffs = coeffs.into_iter().filter(|(_, v)| *v != 0.0).collect();
        program.push(Constraint::new(coeffs, Relation::Eq, 0.0));
        rows.push(RowRole::Flow(b));
    }
    program.push(Constraint::new(
        (0..vars.len()).map(|c| (c, 1.0)).collect(),
        Relation::Eq,
        kernel.retained_mass(),
    ));
    rows.push(RowRole::Normalization);

    let budget = if constrained && budget.is_finite() {
        program.push(Constraint::new(budget_row, Relation::Le, budget));
        rows.push(RowRole::Budget);
        Some(budget)
    } else {
        None
    };

    Ok(OccupancyLp {
        program,
        vars,
        rows,
        reward: reward.to_vec(),
        cost: cost.to_vec(),
        budget,
    })
}

/// `nu(s, eta) = gamma(s) rho (1 - rho)^eta` for every belief of an
/// action-independent space, not renormalized over `eta <= K`.
pub fn nu_closed_form(space: &BeliefSpace, gamma: &[f64], rho: f64) -> Vec<f64> {
    space
        .origins
        .iter()
        .map(|o| gamma[o.state()] * rho * (1.0 - rho).powi(o.depth() as i32))
        .collect()
}

/// Reduced program for action-independent dynamics: the flow rows are
/// replaced by the pins `sum_a x(b, a) = nu(b)`; the budget row is kept.
pub fn build_reduced_primal(
    space: &BeliefSpace,
    model: &FiniteMdp,
    gamma: &[f64],
) -> Result<OccupancyLp, LpError> {
    if !space.action_independent || !model.is_action_independent() {
        return Err(LpError::NotActionIndependent);
    }
    if gamma.len() != model.n_states || space.n_states != model.n_states {
        return Err(LpError::DimensionMismatch(
            "stationary distribution does not match the model".into(),
        ));
    }
    let reward = crate::belief::lift_reward(space, model);
    let cost = crate::belief::lift_cost(space, model);
    let vars = VarIndex {
        n_beliefs: space.len(),
        n_actions: space.n_actions,
    };
    let (objective, budget_row) = objective_and_budget(vars, &reward, &cost);
    let mut program = LinearProgram::new(Sense::Minimize, objective);
    let mut rows = Vec::new();
    for (b, nu) in nu_closed_form(space, gamma, model.rho)
        .into_iter()
        .enumerate()
    {
        let coeffs = (0..vars.n_actions).map(|a| (vars.col(b, a), 1.0)).collect();
        program.push(Constraint::new(coeffs, Relation::Eq, nu));
        rows.push(RowRole::Pin(b));
    }
    program.push(Constraint::new(budget_row, Relation::Le, model.budget));
    rows.push(RowRole::Budget);
    Ok(OccupancyLp {
        program,
        vars,
        rows,
        reward,
        cost,
        budget: Some(model.budget),
    })
}

/// Dual of an occupancy program. Variable `i` is the multiplier of primal row
/// `i`: `phi(b)` for flow or pin rows, `psi` for the normalization row and
/// `lambda >= 0` for the budget row. Each dual row reads
/// `phi(b) + psi - lambda C(b,a) - sum_b' Q(b'|b,a) phi(b') <= -R(b,a)`.
pub fn build_dual(primal: &OccupancyLp) -> LinearProgram {
    primal.program.dual()
}

/// `psi`, `phi` and `lambda` read from the row multipliers of a primal
/// solution (or from the variables of a solved dual).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyDuals {
    pub psi: f64,
    pub phi: Vec<f64>,
    pub lambda: f64,
}

impl OccupancyDuals {
    /// From the solution of the primal occupancy program.
    pub fn from_primal(lp: &OccupancyLp, sol: &LpSolution) -> Self {
        Self::from_dual_values(lp, &sol.dual_values(&lp.program))
    }

    /// From the variable values of `build_dual(lp)`.
    pub fn from_dual_values(lp: &OccupancyLp, y: &[f64]) -> Self {
        let mut duals = OccupancyDuals {
            psi: 0.0,
            phi: vec![0.0; lp.vars.n_beliefs],
            lambda: 0.0,
        };
        for (role, &v) in lp.rows.iter().zip(y) {
            match role {
                RowRole::Flow(b) | RowRole::Pin(b) => duals.phi[*b] = v,
                RowRole::Normalization => duals.psi = v,
                RowRole::Budget => duals.lambda = v,
            }
        }
        duals
    }
}

/// Residuals of the average-cost optimality equation at the dual point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcoeReport {
    /// `min_{b,a} [-R + lambda C + sum Q phi - phi(b) - psi]`.
    pub min_residual: f64,
    /// `max |residual|` over columns with `x(b,a) > FEASIBILITY_TOL`; smaller
    /// values are round-off on variables that are zero at the optimum.
    pub max_support_residual: f64,
    /// `max |x(b,a) * residual|` over all columns.
    pub max_complementarity: f64,
    pub support_size: usize,
}

impl AcoeReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.min_residual >= -tol
            && self.max_support_residual <= tol
            && self.max_complementarity <= tol
    }
}

/// Evaluates the optimality-equation residual
/// `-R(b,a) + lambda C(b,a) + sum_b' Q(b'|b,a) phi(b') - phi(b) - psi`
/// for every column of a flow-form program.
pub fn acoe_residual(
    lp: &OccupancyLp,
    kernel: &BeliefKernel,
    duals: &OccupancyDuals,
    x: &[f64],
) -> AcoeReport {
    let mut min_residual = f64::INFINITY;
    let mut max_support_residual: f64 = 0.0;
    let mut support_size = 0;
    let mut max_complementarity: f64 = 0.0;
    for b in 0..lp.vars.n_beliefs {
        for a in 0..lp.vars.n_actions {
            let future: f64 = kernel
                .balance_row(b, a)
                .iter()
                .map(|&(j, p)| p * duals.phi[j])
                .sum();
            let res =
                -lp.reward[b][a] + duals.lambda * lp.cost[b][a] + future - duals.phi[b] - duals.psi;
            min_residual = min_residual.min(res);
            let xv = x[lp.vars.col(b, a)];
            max_complementarity = max_complementarity.max((xv * res).abs());
            if xv > FEASIBILITY_TOL {
                support_size += 1;
                max_support_residual = max_support_residual.max(res.abs());
            }
        }
    }
    AcoeReport {
        min_residual,
        max_support_residual,
        max_complementarity,
        support_size,
    }
}

/// Primal feasibility, dual feasibility and complementary slackness of a
/// solution, all measured against the original program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub primal_violation: f64,
    pub dual_violation: f64,
    pub complementarity: f64,
}

pub fn kkt_report(lp: &LinearProgram, sol: &LpSolution) -> KktReport {
    let dual = lp.dual();
    let y = sol.dual_values(lp);
    let primal_violation = lp.max_violation(&sol.x);
    let dual_violation = dual.max_violation(&y);
    // x_j * (dual slack of column j) and y_i * (primal slack of row i).
    let col_cs = dual
        .constraints
        .iter()
        .enumerate()
        .map(|(j, row)| (sol.x[j] * (row.rhs - row.eval(&y))).abs())
        .fold(0.0, f64::max);
    let row_cs = lp
        .constraints
        .iter()
        .zip(&y)
        .map(|(row, yi)| (yi * (row.rhs - row.eval(&sol.x))).abs())
        .fold(0.0, f64::max);
    KktReport {
        primal_violation,
        dual_violation,
        complementarity: col_cs.max(row_cs),
    }
}

#[derive(Serialize)]
struct XEntry {
    belief: usize,
    action: usize,
    value: f64,
}

#[derive(Serialize)]
struct SolutionDump<'a> {
    status: LpStatus,
    objective: f64,
    x: Vec<XEntry>,
    duals: &'a OccupancyDuals,
}

/// `{ "status", "objective", "x": [{belief, action, value}], "duals": {psi, phi, lambda} }`.
pub fn solution_json(lp: &OccupancyLp, sol: &LpSolution) -> String {
    let duals = OccupancyDuals::from_primal(lp, sol);
    let x = sol
        .x
        .iter()
        .enumerate()
        .map(|(col, &value)| {
            let (belief, action) = lp.vars.decode(col);
            XEntry {
                belief,
                action,
                value,
            }
        })
        .collect();
    let dump = SolutionDump {
        status: sol.status,
        objective: sol.objective_value,
        x,
        duals: &duals,
    };
    serde_json::to_string_pretty(&dump).expect("solution serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{build_belief_space, build_kernel, BoundaryMode, SpaceOptions};
    use crate::lp::solve_lp;
    use crate::mdp::stationary_distribution;
    use crate::wireless;

    fn wireless_lp(rho: f64, mode: BoundaryMode, constrained: bool) -> (BeliefKernel, OccupancyLp) {
        let model = wireless::model(rho);
        let space = build_belief_space(&model, SpaceOptions::new(10)).unwrap();
        let kernel = build_kernel(&space, &model, Some(mode)).unwrap();
        let r = crate::belief::lift_reward(&space, &model);
        let c = crate::belief::lift_cost(&space, &model);
        let lp = build_primal(&space, &kernel, &r, &c, model.budget, constrained).unwrap();
        (kernel, lp)
    }

    #[test]
    fn wireless_dimensions() {
        let (_, lp) = wireless_lp(0.6, BoundaryMode::Drop, true);
        assert_eq!(lp.program.n_vars(), 44);
        assert_eq!(lp.n_eq_rows(), 23);
        assert_eq!(lp.n_ub_rows(), 1);
        let dual = build_dual(&lp);
        assert_eq!(dual.n_vars(), 24);
        assert_eq!(dual.n_rows(), 44);
        let (_, unc) = wireless_lp(0.6, BoundaryMode::Drop, false);
        let dual = build_dual(&unc);
        assert_eq!((dual.n_vars(), dual.n_rows()), (23, 44));
    }

    #[test]
    fn var_index_bijection() {
        let v = VarIndex {
            n_beliefs: 7,
            n_actions: 3,
        };
        for col in 0..v.len() {
            let (b, a) = v.decode(col);
            assert_eq!(v.col(b, a), col);
        }
    }

    #[test]
    fn flow_row_coefficients() {
        let (kernel, lp) = wireless_lp(0.6, BoundaryMode::SelfLoop, false);
        // Column (b, a) in row b' carries [b == b'] - Q(b'|b,a).
        for (i, role) in lp.rows.iter().enumerate() {
            let RowRole::Flow(target) = *role else {
                continue;
            };
            for &(col, v) in &lp.program.constraints[i].coeffs {
                let (b, a) = lp.vars.decode(col);
                let q: f64 = kernel
                    .row(b, a)
                    .iter()
                    .filter(|(j, _)| *j == target)
                    .map(|(_, p)| p)
                    .sum();
                let expect = if b == target { 1.0 } else { 0.0 } - q;
                assert!((v - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_single_state() {
        let model = FiniteMdp::new(
            vec![vec![vec![1.0]]],
            vec![vec![2.5]],
            vec![vec![1.0]],
            3.0,
            0.7,
        )
        .unwrap();
        let space = build_belief_space(&model, SpaceOptions::new(0)).unwrap();
        let kernel = build_kernel(&space, &model, Some(BoundaryMode::SelfLoop)).unwrap();
        let r = crate::belief::lift_reward(&space, &model);
        let c = crate::belief::lift_cost(&space, &model);
        let lp = build_primal(&space, &kernel, &r, &c, model.budget, true).unwrap();
        let sol = solve_lp(&lp.program).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!((sol.objective_value + 2.5).abs() < 1e-12);
        let dual = build_dual(&lp);
        let dsol = solve_lp(&dual).unwrap();
        let d = OccupancyDuals::from_dual_values(&lp, &dsol.x);
        assert!((d.psi + 2.5).abs() < 1e-12);
        assert!((dsol.objective_value + 2.5).abs() < 1e-12);
    }

    #[test]
    fn infinite_budget_matches_unconstrained() {
        let (_, unc) = wireless_lp(0.4, BoundaryMode::Drop, false);
        let model = wireless::model(0.4);
        let space = build_belief_space(&model, SpaceOptions::new(10)).unwrap();
        let kernel = build_kernel(&space, &model, Some(BoundaryMode::Drop)).unwrap();
        let lp = build_primal(&space, &kernel, &unc.reward, &unc.cost, 1e9, true).unwrap();
        let a = solve_lp(&unc.program).unwrap().objective_value;
        let b = solve_lp(&lp.program).unwrap().objective_value;
        assert!((a - b).abs() < 1e-10);
        let lp =
            build_primal(&space, &kernel, &unc.reward, &unc.cost, f64::INFINITY, true).unwrap();
        assert_eq!(lp.budget, None);
    }

    #[test]
    fn reduced_pins() {
        let model = wireless::model(0.6);
        let space = build_belief_space(&model, SpaceOptions::new(10)).unwrap();
        let gamma = stationary_distribution(&model.p[0]).unwrap().gamma;
        let lp = build_reduced_primal(&space, &model, &gamma).unwrap();
        let pin = lp.row_of(RowRole::Pin(1)).unwrap();
        assert!((lp.program.constraints[pin].rhs - 0.45).abs() < 1e-14);
        let total: f64 = lp
            .program
            .constraints
            .iter()
            .filter(|r| r.relation == Relation::Eq)
            .map(|r| r.rhs)
            .sum();
        assert!((total - (1.0 - 0.4f64.powi(11))).abs() < 1e-14);

        let model1 = wireless::model(1.0);
        let nu = nu_closed_form(&space, &gamma, 1.0);
        assert!((nu[0] - 0.25).abs() < 1e-15 && (nu[1] - 0.75).abs() < 1e-15);
        assert!(nu[2..].iter().all(|v| *v == 0.0));
        assert!(build_reduced_primal(&space, &model1, &gamma).is_ok());
    }

    #[test]
    fn reduced_rejects_action_dependent() {
        let mut model = wireless::model(0.6);
        model.p[1] = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let space = build_belief_space(&model, SpaceOptions::new(2)).unwrap();
        assert!(matches!(
            build_reduced_primal(&space, &model, &[0.25, 0.75]),
            Err(LpError::NotActionIndependent)
        ));
    }

    #[test]
    fn solution_dump_layout() {
        let (_, lp) = wireless_lp(0.6, BoundaryMode::Drop, true);
        let sol = solve_lp(&lp.program).unwrap();
        let v: serde_json::Value = serde_json::from_str(&solution_json(&lp, &sol)).unwrap();
        assert_eq!(v["status"], "optimal");
        assert_eq!(v["x"].as_array().unwrap().len(), 44);
        assert_eq!(v["duals"]["phi"].as_array().unwrap().len(), 22);
        assert!(v["duals"]["lambda"].as_f64().unwrap() >= 0.0);
    }
}
