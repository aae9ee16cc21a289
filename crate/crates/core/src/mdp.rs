//! The underlying finite constrained MDP: transition matrices per action,
//! reward and cost tables, the average-cost budget and the observation
//! probability.
//!
//! Also hosts the model-file reader and the exact stationary distribution of
//! a finite chain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// Row sums may drift from one by at most this much before a row is rejected.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Two action matrices closer than this (entrywise) count as identical.
pub const ACTION_INDEPENDENCE_TOL: f64 = 1e-14;
/// Above this many deterministic policies the recurrence check samples.
pub const EXHAUSTIVE_POLICY_LIMIT: u64 = 1_000_000;
/// Number of deterministic policies drawn by the sampled recurrence check.
pub const SAMPLED_POLICIES: usize = 1000;
const SAMPLING_SEED: u64 = 0x5e_ed0f_2ec0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("model has no states or no actions")]
    EmptyModel,
    #[error("shape mismatch at {path}: expected {expected} entries, found {found}")]
    Shape {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at {path}")]
    NonFinite { path: String },
    #[error("observation probability rho = {0} is outside (0, 1]")]
    InvalidRho(f64),
    #[error("row P[{action}][{state}] is not a probability vector (sum = {sum}, min = {min})")]
    NonStochasticRow {
        action: usize,
        state: usize,
        sum: f64,
        min: f64,
    },
    #[error("model is not recurrent: deterministic policy {policy:?} induces {classes} communicating class(es) and {transient} transient state(s)")]
    NotRecurrent {
        policy: Vec<usize>,
        classes: usize,
        transient: usize,
    },
    #[error(
        "transition matrix has multiple recurrent classes; stationary distribution is not unique"
    )]
    SingularSystem,
    #[error("failed to parse model file: {0}")]
    Parse(String),
}

/// A finite MDP `(S, A, P, r, c, B)` plus the observation probability `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `P[a][s][s']`.
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<f64>>>,
    /// `r[s][a]`.
    pub r: Vec<Vec<f64>>,
    /// `c[s][a]`.
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub budget: f64,
    pub rho: f64,
}

impl FiniteMdp {
    /// Builds a model after checking shapes, finiteness and the range of `rho`.
    /// Stochasticity and recurrence are checked by [`validate_mdp`].
    pub fn new(
        p: Vec<Vec<Vec<f64>>>,
        r: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        budget: f64,
        rho: f64,
    ) -> Result<Self, MdpError> {
        let n_actions = p.len();
        let n_states = p.first().map_or(0, Vec::len);
        let model = FiniteMdp {
            n_states,
            n_actions,
            p,
            r,
            c,
            budget,
            rho,
        };
        model.check_shape()?;
        Ok(model)
    }

    /// Parses the JSON model schema and runs the shape checks.
    pub fn from_json_str(text: &str) -> Result<Self, MdpError> {
        let model: FiniteMdp =
            serde_json::from_str(text).map_err(|e| MdpError::Parse(e.to_string()))?;
        model.check_shape()?;
        Ok(model)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn check_shape(&self) -> Result<(), MdpError> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(MdpError::EmptyModel);
        }
        let shape = |path: String, expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(MdpError::Shape {
                    path,
                    expected,
                    found,
                })
            }
        };
        let finite = |path: String, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(MdpError::NonFinite { path })
            }
        };
        shape("P".into(), self.n_actions, self.p.len())?;
        for (a, mat) in self.p.iter().enumerate() {
            shape(format!("P[{a}]"), self.n_states, mat.len())?;
            for (s, row) in mat.iter().enumerate() {
                shape(format!("P[{a}][{s}]"), self.n_states, row.len())?;
                for (t, &v) in row.iter().enumerate() {
                    finite(format!("P[{a}][{s}][{t}]"), v)?;
                }
            }
        }
        for (name, table) in [("r", &self.r), ("c", &self.c)] {
            shape(name.into(), self.n_states, table.len())?;
            for (s, row) in table.iter().enumerate() {
                shape(format!("{name}[{s}]"), self.n_actions, row.len())?;
                for (a, &v) in row.iter().enumerate() {
                    finite(format!("{name}[{s}][{a}]"), v)?;
                }
            }
        }
        // A non-finite budget is rejected here; "no constraint" is expressed by
        // building the unconstrained LP instead.
        finite("B".into(), self.budget)?;
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(MdpError::InvalidRho(self.rho));
        }
        Ok(())
    }

    /// True when every action shares the same transition matrix.
    pub fn is_action_independent(&self) -> bool {
        let first = &self.p[0];
        self.p[1..].iter().all(|mat| {
            mat.iter().zip(first).all(|(row, base)| {
                row.iter()
                    .zip(base)
                    .all(|(x, y)| (x - y).abs() <= ACTION_INDEPENDENCE_TOL)
            })
        })
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self, MdpError> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(MdpError::InvalidRho(rho));
        }
        self.rho = rho;
        Ok(self)
    }

    /// Chain induced by a deterministic stationary policy (one action per state).
    pub fn induced_matrix(&self, decision: &[usize]) -> Vec<Vec<f64>> {
        decision
            .iter()
            .enumerate()
            .map(|(s, &a)| self.p[a][s].clone())
            .collect()
    }

    /// Uniform mixture of the action matrices. Used as the reference chain
    /// when the model is not action independent.
    pub fn mean_matrix(&self) -> Vec<Vec<f64>> {
        let w = 1.0 / self.n_actions as f64;
        (0..self.n_states)
            .map(|s| {
                (0..self.n_states)
                    .map(|t| self.p.iter().map(|mat| mat[s][t]).sum::<f64>() * w)
                    .collect()
            })
            .collect()
    }
}

/// How recurrence was established.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecurrenceCheck {
    /// Every deterministic stationary policy was checked.
    Exhaustive { policies: u64 },
    /// Union graph strongly connected and a sample of policies checked.
    Sampled { policies: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_states: usize,
    pub n_actions: usize,
    pub stochastic: bool,
    pub recurrence: RecurrenceCheck,
    pub action_independent: bool,
}

/// Checks stochasticity of every `P[a]` and recurrence of every deterministic
/// stationary policy (single communicating class, no transient states).
pub fn validate_mdp(model: &FiniteMdp) -> Result<ValidationReport, MdpError> {
    model.check_shape()?;
    for (a, mat) in model.p.iter().enumerate() {
        for (s, row) in mat.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            if (sum - 1.0).abs() > ROW_SUM_TOL || min < 0.0 {
                return Err(MdpError::NonStochasticRow {
                    action: a,
                    state: s,
                    sum,
                    min,
                });
            }
        }
    }

    let n = model.n_states;
    let total = (model.n_actions as u64).checked_pow(n as u32);
    let recurrence = match total {
        Some(count) if count <= EXHAUSTIVE_POLICY_LIMIT => {
            let mut decision = vec![0usize; n];
            loop {
                check_policy_recurrent(model, &decision)?;
                if !advance_mixed_radix(&mut decision, model.n_actions) {
                    break;
                }
            }
            RecurrenceCheck::Exhaustive { policies: count }
        }
        _ => {
            let union: Vec<Vec<f64>> = (0..n)
                .map(|s| {
                    (0..n)
                        .map(|t| model.p.iter().map(|m| m[s][t]).fold(0.0, f64::max))
                        .collect()
                })
                .collect();
            let (classes, transient) = class_structure(&union);
            if classes != 1 || transient != 0 {
                return Err(MdpError::NotRecurrent {
                    policy: Vec::new(),
                    classes,
                    transient,
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(SAMPLING_SEED);
            for _ in 0..SAMPLED_POLICIES {
                let decision: Vec<usize> = (0..n)
                    .map(|_| rng.random_range(0..model.n_actions))
                    .collect();
                check_policy_recurrent(model, &decision)?;
            }
            RecurrenceCheck::Sampled {
                policies: SAMPLED_POLICIES as u64,
            }
        }
    };

    Ok(ValidationReport {
        n_states: n,
        n_actions: model.n_actions,
        stochastic: true,
        recurrence,
        action_independent: model.is_action_independent(),
    })
}

fn check_policy_recurrent(model: &FiniteMdp, decision: &[usize]) -> Result<(), MdpError> {
    let (classes, transient) = class_structure(&model.induced_matrix(decision));
    if classes == 1 && transient == 0 {
        Ok(())
    } else {
        Err(MdpError::NotRecurrent {
            policy: decision.to_vec(),
            classes,
            transient,
        })
    }
}

fn advance_mixed_radix(digits: &mut [usize], radix: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < radix {
            return true;
        }
        *d = 0;
    }
    false
}

/// Number of closed communicating classes and number of states outside them.
fn class_structure(mat: &[Vec<f64>]) -> (usize, usize) {
    let n = mat.len();
    let reach: Vec<Vec<bool>> = (0..n)
        .map(|start| {
            let mut seen = vec![false; n];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(u) = stack.pop() {
                for (v, &w) in mat[u].iter().enumerate() {
                    if w > 0.0 && !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            seen
        })
        .collect();
    // A state is recurrent iff every state it reaches reaches it back.
    let recurrent: Vec<bool> = (0..n)
        .map(|u| (0..n).all(|v| !reach[u][v] || reach[v][u]))
        .collect();
    let mut class_of = vec![usize::MAX; n];
    let mut classes = 0;
    for u in 0..n {
        if recurrent[u] && class_of[u] == usize::MAX {
            for v in 0..n {
                if reach[u][v] {
                    class_of[v] = classes;
                }
            }
            classes += 1;
        }
    }
    let transient = recurrent.iter().filter(|r| !**r).count();
    (classes, transient)
}

/// Probability vector `gamma` with `gamma^T P = gamma^T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDistribution {
    pub gamma: Vec<f64>,
}

impl StationaryDistribution {
    /// `max_s |(gamma^T P)_s - gamma_s|`.
    pub fn residual(&self, p: &[Vec<f64>]) -> f64 {
        let n = self.gamma.len();
        (0..n)
            .map(|t| {
                let flow: f64 = (0..n).map(|s| self.gamma[s] * p[s][t]).sum();
                (flow - self.gamma[t]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Exact stationary distribution by direct elimination, with the
/// normalization row replacing one balance equation.
pub fn stationary_distribution(p: &[Vec<f64>]) -> Result<StationaryDistribution, MdpError> {
    if p.is_empty() {
        return Err(MdpError::EmptyModel);
    }
    linalg::stationary_vector(p)
        .map(|gamma| StationaryDistribution { gamma })
        .ok_or(MdpError::SingularSystem)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wireless_p() -> Vec<Vec<f64>> {
        vec![vec![0.7, 0.3], vec![0.1, 0.9]]
    }

    fn model_with(p: Vec<Vec<Vec<f64>>>) -> FiniteMdp {
        let n = p[0].len();
        let m = p.len();
        FiniteMdp::new(p, vec![vec![0.0; m]; n], vec![vec![0.0; m]; n], 1.0, 0.5).unwrap()
    }

    #[test]
    fn wireless_chain_is_valid_and_recurrent() {
        let model = model_with(vec![wireless_p(), wireless_p()]);
        let report = validate_mdp(&model).unwrap();
        assert_eq!(
            report.recurrence,
            RecurrenceCheck::Exhaustive { policies: 4 }
        );
        assert!(report.action_independent);
    }

    #[test]
    fn identity_chain_is_not_recurrent() {
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let model = model_with(vec![id.clone(), id]);
        match validate_mdp(&model) {
            Err(MdpError::NotRecurrent { classes, .. }) => assert_eq!(classes, 2),
            other => panic!("expected NotRecurrent, got {other:?}"),
        }
    }

    #[test]
    fn short_row_is_rejected() {
        let bad = vec![vec![0.6, 0.3], vec![0.1, 0.9]];
        let model = model_with(vec![bad]);
        assert!(matches!(
            validate_mdp(&model),
            Err(MdpError::NonStochasticRow {
                action: 0,
                state: 0,
                ..
            })
        ));
    }

    #[test]
    fn negative_entry_is_rejected() {
        let bad = vec![vec![1.1, -0.1], vec![0.1, 0.9]];
        assert!(matches!(
            validate_mdp(&model_with(vec![bad])),
            Err(MdpError::NonStochasticRow { .. })
        ));
    }

    #[test]
    fn one_bad_action_breaks_recurrence() {
        // Action 1 makes state 0 absorbing.
        let bad = vec![vec![1.0, 0.0], vec![0.5, 0.5]];
        let model = model_with(vec![wireless_p(), bad]);
        assert!(matches!(
            validate_mdp(&model),
            Err(MdpError::NotRecurrent { .. })
        ));
    }

    #[test]
    fn empty_model() {
        assert_eq!(
            FiniteMdp::new(vec![], vec![], vec![], 0.0, 1.0),
            Err(MdpError::EmptyModel)
        );
    }

    #[test]
    fn stationary_wireless() {
        let sd = stationary_distribution(&wireless_p()).unwrap();
        assert!((sd.gamma[0] - 0.25).abs() < 1e-14);
        assert!((sd.gamma[1] - 0.75).abs() < 1e-14);
        assert!(sd.residual(&wireless_p()) <= 1e-10);
    }

    #[test]
    fn stationary_swap_and_absorbing() {
        let sd = stationary_distribution(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(sd.gamma, vec![0.5, 0.5]);
        let sd = stationary_distribution(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(sd.gamma, vec![1.0, 0.0]);
    }

    #[test]
    fn stationary_identity_is_singular() {
        assert_eq!(
            stationary_distribution(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
            Err(MdpError::SingularSystem)
        );
    }

    #[test]
    fn json_errors_are_positioned() {
        let text = r#"{"n_states":2,"n_actions":1,"P":[[[0.7,0.3],[0.1]]],"r":[[0],[1]],"c":[[1],[1]],"B":1,"rho":0.5}"#;
        let err = FiniteMdp::from_json_str(text).unwrap_err();
        assert_eq!(
            err.to_string(),
            "shape mismatch at P[0][1]: expected 2 entries, found 1"
        );

        let text =
            r#"{"n_states":1,"n_actions":1,"P":[[[NaN]]],"r":[[0]],"c":[[1]],"B":1,"rho":0.5}"#;
        let err = FiniteMdp::from_json_str(text).unwrap_err();
        assert!(err.to_string().contains("line 1 column"), "{err}");
    }

    #[test]
    fn rho_out_of_range() {
        let p = vec![vec![vec![1.0]]];
        assert_eq!(
            FiniteMdp::new(p, vec![vec![0.0]], vec![vec![0.0]], 1.0, 0.0),
            Err(MdpError::InvalidRho(0.0))
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn stochastic_matrix(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
            proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, n), n).prop_map(
                move |rows| {
                    rows.into_iter()
                        .map(|row| {
                            // Zero out small entries to create sparsity, keep diagonal.
                            let row: Vec<f64> =
                                row.iter().map(|&v| if v < 0.3 { 0.0 } else { v }).collect();
                            let s: f64 = row.iter().sum();
                            if s == 0.0 {
                                vec![1.0 / n as f64; n]
                            } else {
                                row.iter().map(|v| v / s).collect()
                            }
                        })
                        .collect()
                },
            )
        }

        proptest! {
            #[test]
            fn stationary_is_fixed_point(p in (1usize..6).prop_flat_map(stochastic_matrix)) {
                if let Ok(sd) = stationary_distribution(&p) {
                    prop_assert!(sd.residual(&p) <= 1e-10);
                    prop_assert!((sd.gamma.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                    prop_assert!(sd.gamma.iter().all(|g| *g >= 0.0));
                }
            }

            #[test]
            fn recurrence_verdict_ignores_action_order(
                mats in (2usize..4).prop_flat_map(|n| proptest::collection::vec(stochastic_matrix(n), 1..4))
            ) {
                let n = mats[0].len();
                let m = mats.len();
                let model = FiniteMdp::new(mats.clone(), vec![vec![0.0; m]; n], vec![vec![0.0; m]; n], 1.0, 0.5).unwrap();
                let mut reversed = mats;
                reversed.reverse();
                let flipped = FiniteMdp::new(reversed, vec![vec![0.0; m]; n], vec![vec![0.0; m]; n], 1.0, 0.5).unwrap();
                prop_assert_eq!(validate_mdp(&model).is_ok(), validate_mdp(&flipped).is_ok());
            }
        }
    }
}
