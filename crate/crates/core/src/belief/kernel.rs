use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::space::{belief_update, BeliefSpace};
use super::BeliefError;
use crate::mdp::FiniteMdp;

/// Treatment of the no-observation branch of a belief whose successor lies
/// beyond the truncation depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    /// Discard the `1 - rho` mass; the kernel row stays sub-stochastic.
    Drop,
    /// Send the `1 - rho` mass back to the boundary belief.
    SelfLoop,
    /// Rescale the observation branch to total mass one.
    ForceObs,
}

impl fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryMode::Drop => "drop",
            BoundaryMode::SelfLoop => "selfloop",
            BoundaryMode::ForceObs => "forceobs",
        })
    }
}

impl FromStr for BoundaryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "drop" => Ok(BoundaryMode::Drop),
            "selfloop" => Ok(BoundaryMode::SelfLoop),
            "forceobs" => Ok(BoundaryMode::ForceObs),
            other => Err(format!(
                "unknown boundary mode '{other}' (expected drop, selfloop or forceobs)"
            )),
        }
    }
}

pub type SparseRow = Vec<(usize, f64)>;

/// Belief transition law `Q(b' | b, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefKernel {
    pub n_beliefs: usize,
    pub n_actions: usize,
    pub n_pure: usize,
    pub rho: f64,
    pub k: usize,
    pub mode: Option<BoundaryMode>,
    /// `rows[b][a]`, sorted by target index, structural zeros omitted.
    rows: Vec<Vec<SparseRow>>,
    /// Observation law of the discarded successor for `drop` boundary rows,
    /// `(1 - rho) [P_a^T b]_i` on pure state `i`; empty elsewhere.
    discarded: Vec<Vec<SparseRow>>,
    boundary: Vec<Vec<bool>>,
}

impl BeliefKernel {
    pub fn row(&self, b: usize, a: usize) -> &[(usize, f64)] {
        &self.rows[b][a]
    }

    pub fn row_mass(&self, b: usize, a: usize) -> f64 {
        self.rows[b][a].iter().map(|(_, p)| p).sum()
    }

    pub fn is_boundary(&self, b: usize, a: usize) -> bool {
        self.boundary[b][a]
    }

    pub fn has_boundary(&self) -> bool {
        self.boundary.iter().flatten().any(|x| *x)
    }

    /// Mass discarded by a `drop` boundary row.
    pub fn discarded_mass(&self, b: usize, a: usize) -> f64 {
        self.discarded[b][a].iter().map(|(_, p)| p).sum()
    }

    /// Row used in stationary flow balance. Under `drop` the discarded mass
    /// re-enters through the pure states, distributed as the state law of the
    /// discarded successor, so that the balance rows conserve mass; the total
    /// retained mass is then carried by [`Self::retained_mass`]. Under the
    /// other modes this is the kernel row itself.
    pub fn balance_row(&self, b: usize, a: usize) -> SparseRow {
        let extra = &self.discarded[b][a];
        if extra.is_empty() {
            return self.rows[b][a].clone();
        }
        let mut row = self.rows[b][a].clone();
        for &(j, p) in extra {
            push_merge(&mut row, j, p);
        }
        row
    }

    /// Stationary mass kept inside the truncated space: `1 - (1 - rho)^(K+1)`
    /// under `drop` with a boundary present, one otherwise.
    pub fn retained_mass(&self) -> f64 {
        if self.mode == Some(BoundaryMode::Drop) && self.has_boundary() {
            1.0 - (1.0 - self.rho).powi(self.k as i32 + 1)
        } else {
            1.0
        }
    }

    /// Transition matrix of the chain induced by a randomized policy, built
    /// from [`Self::balance_row`].
    pub fn policy_balance_matrix(&self, policy: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.n_beliefs;
        let mut mat = vec![vec![0.0; n]; n];
        for (b, row) in mat.iter_mut().enumerate() {
            for (a, &w) in policy[b].iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (j, p) in self.balance_row(b, a) {
                    row[j] += w * p;
                }
            }
        }
        mat
    }

    /// Same as [`Self::policy_balance_matrix`] but from the raw kernel rows.
    pub fn policy_matrix(&self, policy: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.n_beliefs;
        let mut mat = vec![vec![0.0; n]; n];
        for (b, row) in mat.iter_mut().enumerate() {
            for (a, &w) in policy[b].iter().enumerate() {
                for &(j, p) in self.row(b, a) {
                    row[j] += w * p;
                }
            }
        }
        mat
    }
}

fn push_merge(row: &mut SparseRow, j: usize, p: f64) {
    match row.binary_search_by_key(&j, |(i, _)| *i) {
        Ok(pos) => row[pos].1 += p,
        Err(pos) => row.insert(pos, (j, p)),
    }
}

/// Builds `Q`: mass `rho [P_a^T b]_i` to each pure belief `e_i`, mass
/// `1 - rho` to the successor `P_a^T b`. Rows whose successor is outside the
/// space follow `mode`, which is then mandatory.
pub fn build_kernel(
    space: &BeliefSpace,
    model: &FiniteMdp,
    mode: Option<BoundaryMode>,
) -> Result<BeliefKernel, BeliefError> {
    if space.n_states != model.n_states || space.n_actions != model.n_actions {
        return Err(BeliefError::SpaceMismatch);
    }
    let n = space.len();
    let m = space.n_actions;
    let rho = model.rho;
    let miss = 1.0 - rho;

    let any_boundary = space.successors.iter().flatten().any(Option::is_none);
    if any_boundary && mode.is_none() {
        return Err(BeliefError::ModeRequired { k: space.k });
    }

    let mut rows = vec![vec![SparseRow::new(); m]; n];
    let mut discarded = vec![vec![SparseRow::new(); m]; n];
    let mut boundary = vec![vec![false; m]; n];
    for b in 0..n {
        for a in 0..m {
            let pred = belief_update(&space.beliefs[b], a, &model.p);
            let successor = space.successors[b][a];
            let at_boundary = successor.is_none();
            boundary[b][a] = at_boundary;
            let obs_scale = if at_boundary && mode == Some(BoundaryMode::ForceObs) {
                1.0
            } else {
                rho
            };
            let row = &mut rows[b][a];
            for (i, &q) in pred.probs().iter().enumerate() {
                if q > 0.0 {
                    row.push((i, obs_scale * q));
                }
            }
            if miss > 0.0 {
                match (successor, mode) {
                    (Some(next), _) => push_merge(row, next, miss),
                    (None, Some(BoundaryMode::SelfLoop)) => push_merge(row, b, miss),
                    (None, Some(BoundaryMode::Drop)) => {
                        discarded[b][a] = pred
                            .probs()
                            .iter()
                            .enumerate()
                            .filter(|(_, q)| **q > 0.0)
                            .map(|(i, q)| (i, miss * q))
                            .collect();
                    }
                    (None, Some(BoundaryMode::ForceObs)) => {}
                    (None, None) => unreachable!("mode checked above"),
                }
            }
        }
    }

    Ok(BeliefKernel {
        n_beliefs: n,
        n_actions: m,
        n_pure: space.n_states,
        rho,
        k: space.k,
        mode,
        rows,
        discarded,
        boundary,
    })
}

/// `R(b, a) = sum_s b(s) r(s, a)`.
pub fn lift_reward(space: &BeliefSpace, model: &FiniteMdp) -> Vec<Vec<f64>> {
    lift(space, &model.r)
}

/// `C(b, a) = sum_s b(s) c(s, a)`.
pub fn lift_cost(space: &BeliefSpace, model: &FiniteMdp) -> Vec<Vec<f64>> {
    lift(space, &model.c)
}

fn lift(space: &BeliefSpace, table: &[Vec<f64>]) -> Vec<Vec<f64>> {
    space
        .beliefs
        .iter()
        .map(|b| {
            (0..space.n_actions)
                .map(|a| b.dot(table.iter().map(|row| row[a])))
                .collect()
        })
        .collect()
}
