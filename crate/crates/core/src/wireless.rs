//! Built-in wireless channel instance and the age-dependent policy tables.
//!
//! Two channel states (1 = bad, 2 = good) evolve on their own under
//! `P_W = [[0.7, 0.3], [0.1, 0.9]]`. Two energy levels `a1 = 1`, `a2 = 2` cost
//! `(2 + a)^2 = 9, 16` per step; utilities are `r = [[0, 1], [1, 4]]`; the
//! average-energy budget is 10.4.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{
    build_belief_space, build_kernel, lift_cost, lift_reward, BoundaryMode, SpaceOptions,
};
use crate::lp::{build_primal, extract_policy, solve_lp};
use crate::mdp::FiniteMdp;
use crate::Error;

pub const CHANNEL: [[f64; 2]; 2] = [[0.7, 0.3], [0.1, 0.9]];
pub const UTILITY: [[f64; 2]; 2] = [[0.0, 1.0], [1.0, 4.0]];
pub const ENERGY_LEVELS: [f64; 2] = [1.0, 2.0];
pub const BUDGET: f64 = 10.4;
pub const TABLE_DEPTH: usize = 10;
pub const RHO_SWEEP: [f64; 6] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
/// Ages compared against the published tables.
pub const PUBLISHED_AGES: usize = 5;
/// Tolerance for fractional published entries; 0/1 entries must match exactly
/// after rounding to four decimals.
pub const FRACTIONAL_TOL: f64 = 5e-3;

/// Published probability of the low-energy action, state 1, rows by `rho`.
pub const PUBLISHED_STATE1: [[f64; PUBLISHED_AGES]; 6] = [
    [1.0, 1.0, 1.0, 0.8208, 0.0],
    [1.0, 1.0, 1.0, 1.0, 1.0],
    [1.0, 1.0, 1.0, 1.0, 1.0],
    [1.0, 1.0, 1.0, 1.0, 1.0],
    [1.0, 1.0, 1.0, 1.0, 1.0],
    [1.0, 1.0, 1.0, 1.0, 1.0],
];
/// Published probability of the low-energy action, state 2.
pub const PUBLISHED_STATE2: [[f64; PUBLISHED_AGES]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.5786, 1.0, 1.0],
    [0.0, 0.9973, 1.0, 1.0, 1.0],
    [0.3178, 1.0, 1.0, 1.0, 1.0],
    [0.4650, 1.0, 1.0, 1.0, 1.0],
    [0.5554, 1.0, 1.0, 1.0, 1.0],
];

pub fn energy_cost(level: f64) -> f64 {
    (2.0 + level).powi(2)
}

/// The wireless instance at observation probability `rho`.
pub fn model(rho: f64) -> FiniteMdp {
    let p: Vec<Vec<f64>> = CHANNEL.iter().map(|r| r.to_vec()).collect();
    let cost_row: Vec<f64> = ENERGY_LEVELS.iter().map(|&a| energy_cost(a)).collect();
    FiniteMdp {
        n_states: 2,
        n_actions: 2,
        p: vec![p.clone(), p],
        r: UTILITY.iter().map(|r| r.to_vec()).collect(),
        c: vec![cost_row.clone(), cost_row],
        budget: BUDGET,
        rho,
    }
}

/// Optimal policy for one `rho`: probability of the low-energy action by age,
/// for each last-observed state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: f64,
    /// `low_energy[s][eta]`.
    pub low_energy: Vec<Vec<f64>>,
    pub avg_reward: f64,
    pub avg_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub table: usize,
    pub rho: f64,
    pub eta: usize,
    pub published: f64,
    pub computed: f64,
    pub abs_diff: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Solves the truncated constrained program for one `rho`.
pub fn solve_row(rho: f64, k: usize, mode: BoundaryMode) -> Result<SweepRow, Error> {
    let model = model(rho);
    let space = build_belief_space(&model, SpaceOptions::new(k))?;
    let kernel = build_kernel(&space, &model, Some(mode))?;
    let reward = lift_reward(&space, &model);
    let cost = lift_cost(&space, &model);
    let lp = build_primal(&space, &kernel, &reward, &cost, model.budget, true)?;
    let sol = solve_lp(&lp.program)?;
    sol.require_optimal()?;
    let policy = extract_policy(&sol, &space)?;
    let low_energy = (0..model.n_states)
        .map(|s| {
            (0..=k)
                .map(|eta| policy.probs[space.age_index(s, eta).expect("age layout")][0])
                .collect()
        })
        .collect();
    Ok(SweepRow {
        rho,
        low_energy,
        avg_reward: lp.average_reward(&sol.x),
        avg_cost: lp.average_cost(&sol.x),
    })
}

/// The full `rho` sweep, solved in parallel and returned in sweep order.
pub fn sweep(k: usize, mode: BoundaryMode) -> Result<Vec<SweepRow>, Error> {
    RHO_SWEEP
        .par_iter()
        .map(|&rho| solve_row(rho, k, mode))
        .collect()
}

/// Table for last-observed state `state` (0-based): one row per `rho`,
/// columns `eta = 0..=K`, four decimals.
pub fn table_csv(rows: &[SweepRow], state: usize) -> String {
    let k = rows.first().map_or(0, |r| r.low_energy[state].len());
    let mut out = String::from("rho");
    for eta in 0..k {
        out.push_str(&format!(",eta={eta}"));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{:.1}", row.rho));
        for v in &row.low_energy[state] {
            out.push_str(&format!(",{:.4}", v));
        }
        out.push('\n');
    }
    out
}

/// Compares the first [`PUBLISHED_AGES`] ages of each row with the published
/// tables. Rows must follow [`RHO_SWEEP`].
pub fn diff_against_published(rows: &[SweepRow]) -> Vec<DiffEntry> {
    let mut out = Vec::new();
    for (table, published) in [(1, &PUBLISHED_STATE1), (2, &PUBLISHED_STATE2)] {
        for (i, row) in rows.iter().enumerate().take(RHO_SWEEP.len()) {
            for (eta, &want) in published[i]
                .iter()
                .enumerate()
                .take(row.low_energy[table - 1].len())
            {
                let got = row.low_energy[table - 1][eta];
                let fractional = want != 0.0 && want != 1.0;
                let tolerance = if fractional { FRACTIONAL_TOL } else { 0.0 };
                let abs_diff = (got - want).abs();
                let pass = if fractional {
                    abs_diff <= FRACTIONAL_TOL
                } else {
                    format!("{got:.4}") == format!("{want:.4}")
                };
                out.push(DiffEntry {
                    table,
                    rho: row.rho,
                    eta,
                    published: want,
                    computed: got,
                    abs_diff,
                    tolerance,
                    pass,
                });
            }
        }
    }
    out
}

pub fn diff_csv(entries: &[DiffEntry]) -> String {
    let mut out = String::from("table,rho,eta,published,computed,abs_diff,tolerance,pass\n");
    for e in entries {
        out.push_str(&format!(
            "{},{:.1},{},{:.4},{:.6},{:.6},{},{}\n",
            e.table, e.rho, e.eta, e.published, e.computed, e.abs_diff, e.tolerance, e.pass
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::validate_mdp;

    #[test]
    fn instance_is_valid() {
        let m = model(0.6);
        assert!(validate_mdp(&m).unwrap().action_independent);
        assert_eq!(m.c[0], vec![9.0, 16.0]);
    }

    #[test]
    fn table_layout() {
        let rows = vec![SweepRow {
            rho: 0.1,
            low_energy: vec![vec![1.0, 0.5], vec![0.0, 0.25]],
            avg_reward: 0.0,
            avg_cost: 0.0,
        }];
        assert_eq!(table_csv(&rows, 1), "rho,eta=0,eta=1\n0.1,0.0000,0.2500\n");
    }
}
