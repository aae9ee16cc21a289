use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::occupancy::nu_closed_form;
use super::simplex::LpSolution;
use super::LpError;
use crate::belief::{BeliefKernel, BeliefSpace};
use crate::linalg;
use crate::mdp::FiniteMdp;

/// Beliefs with occupancy at or below this carry no policy information.
pub const SUPPORT_TOL: f64 = 1e-12;

/// Stationary randomized policy over beliefs: `probs[b][a] = pi(a | b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub probs: Vec<Vec<f64>>,
    /// `true` where the occupancy of the belief is positive.
    pub support: Vec<bool>,
}

impl Policy {
    pub fn uniform(n_beliefs: usize, n_actions: usize) -> Self {
        Policy {
            probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_beliefs],
            support: vec![false; n_beliefs],
        }
    }

    /// Same action in every belief.
    pub fn constant(n_beliefs: usize, n_actions: usize, action: usize) -> Self {
        let mut row = vec![0.0; n_actions];
        row[action] = 1.0;
        Policy {
            probs: vec![row; n_beliefs],
            support: vec![true; n_beliefs],
        }
    }

    pub fn n_beliefs(&self) -> usize {
        self.probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }
}

/// `pi(a|b) = x(b,a) / xbar(b)` where `xbar(b) > SUPPORT_TOL`, uniform elsewhere.
pub fn extract_policy(sol: &LpSolution, space: &BeliefSpace) -> Result<Policy, LpError> {
    if !sol.is_optimal() {
        return Err(LpError::NotOptimal(sol.status));
    }
    let m = space.n_actions;
    if sol.x.len() != space.len() * m {
        return Err(LpError::DimensionMismatch(format!(
            "solution has {} values, space needs {}",
            sol.x.len(),
            space.len() * m
        )));
    }
    let mut policy = Policy::uniform(space.len(), m);
    for (b, chunk) in sol.x.chunks_exact(m).enumerate() {
        let total: f64 = chunk.iter().map(|v| v.max(0.0)).sum();
        if total > SUPPORT_TOL {
            policy.probs[b] = chunk.iter().map(|v| v.max(0.0) / total).collect();
            policy.support[b] = true;
        }
    }
    Ok(policy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyValue {
    pub avg_reward: f64,
    pub avg_cost: f64,
}

/// Long-run averages of `R` and `C` under `policy`, from the stationary law
/// of the policy-induced belief chain (see [`BeliefKernel::balance_row`]),
/// scaled by the kernel's retained mass.
pub fn evaluate_policy_exact(
    policy: &Policy,
    kernel: &BeliefKernel,
    reward: &[Vec<f64>],
    cost: &[Vec<f64>],
) -> Result<PolicyValue, LpError> {
    if policy.n_beliefs() != kernel.n_beliefs || policy.n_actions() != kernel.n_actions {
        return Err(LpError::DimensionMismatch(
            "policy does not match the kernel".into(),
        ));
    }
    let mat = kernel.policy_balance_matrix(&policy.probs);
    let nu = linalg::stationary_vector(&mat).ok_or(LpError::SingularChain)?;
    let scale = kernel.retained_mass();
    Ok(weighted_value(policy, &nu, scale, reward, cost))
}

/// Same averages for action-independent dynamics, with the closed-form
/// belief occupancy `gamma(s) rho (1 - rho)^eta`.
pub fn evaluate_policy_reduced(
    policy: &Policy,
    space: &BeliefSpace,
    model: &FiniteMdp,
    gamma: &[f64],
) -> Result<PolicyValue, LpError> {
    if !space.action_independent {
        return Err(LpError::NotActionIndependent);
    }
    if policy.n_beliefs() != space.len() {
        return Err(LpError::DimensionMismatch(
            "policy does not match the belief space".into(),
        ));
    }
    let nu = nu_closed_form(space, gamma, model.rho);
    let reward = crate::belief::lift_reward(space, model);
    let cost = crate::belief::lift_cost(space, model);
    Ok(weighted_value(policy, &nu, 1.0, &reward, &cost))
}

fn weighted_value(
    policy: &Policy,
    nu: &[f64],
    scale: f64,
    reward: &[Vec<f64>],
    cost: &[Vec<f64>],
) -> PolicyValue {
    let mut avg_reward = 0.0;
    let mut avg_cost = 0.0;
    for (b, &w) in nu.iter().enumerate() {
        for (a, &pi) in policy.probs[b].iter().enumerate() {
            avg_reward += w * pi * reward[b][a];
            avg_cost += w * pi * cost[b][a];
        }
    }
    PolicyValue {
        avg_reward: scale * avg_reward,
        avg_cost: scale * avg_cost,
    }
}

/// Writes `belief_index, origin, age, pi_a0, ..., on_support`.
pub fn write_policy_csv<W: Write>(
    policy: &Policy,
    space: &BeliefSpace,
    out: W,
) -> Result<(), LpError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["belief_index".to_string(), "origin".into(), "age".into()];
    header.extend((0..policy.n_actions()).map(|a| format!("pi_a{a}")));
    header.push("on_support".into());
    w.write_record(&header)?;
    for (b, row) in policy.probs.iter().enumerate() {
        let origin = &space.origins[b];
        let mut rec = vec![
            b.to_string(),
            origin.state().to_string(),
            origin.depth().to_string(),
        ];
        rec.extend(row.iter().map(|p| format!("{p:.17e}")));
        rec.push(policy.support[b].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads the layout written by [`write_policy_csv`].
pub fn read_policy_csv<R: Read>(input: R) -> Result<Policy, LpError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let n_actions = headers.iter().filter(|h| h.starts_with("pi_a")).count();
    if n_actions == 0 || headers.len() != n_actions + 4 {
        return Err(LpError::Parse("policy csv header".into()));
    }
    let mut probs = Vec::new();
    let mut support = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let pos = |what: &str| LpError::Parse(format!("policy csv row {}: {what}", line + 2));
        let idx: usize = rec[0].parse().map_err(|_| pos("belief_index"))?;
        if idx != probs.len() {
            return Err(pos("belief_index out of order"));
        }
        let row = (0..n_actions)
            .map(|a| rec[3 + a].parse::<f64>().map_err(|_| pos("probability")))
            .collect::<Result<Vec<_>, _>>()?;
        let sum: f64 = row.iter().sum();
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(pos("row is not a probability vector"));
        }
        probs.push(row);
        support.push(rec[3 + n_actions].parse().map_err(|_| pos("on_support"))?);
    }
    Ok(Policy { probs, support })
}
