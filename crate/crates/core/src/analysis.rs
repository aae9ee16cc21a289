//! Structural checks on truncated belief chains: recurrent class structure,
//! contraction and drift toward the pure beliefs, duality gaps and the
//! closed-form belief occupancy.

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefKernel, BeliefSpace, BoundaryMode};
use crate::linalg;
use crate::lp::{LpSolution, LpStatus, Policy};

/// Transition probabilities at or below this are treated as structural zeros.
pub const EDGE_TOL: f64 = 1e-14;
/// Tolerance of the contraction identity on interior rows.
pub const IDENTITY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("duality gap needs two optimal solutions, got primal {primal:?} and dual {dual:?}")]
    StatusMismatch { primal: LpStatus, dual: LpStatus },
    #[error("closed-form occupancy needs action-independent dynamics")]
    NotActionIndependent,
    #[error("belief space and kernel disagree: {0}")]
    SpaceMismatch(String),
    #[error("belief chain has no unique stationary distribution")]
    SingularChain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    /// Closed communicating classes, each sorted, ordered by smallest member.
    pub recurrent_classes: Vec<Vec<usize>>,
    pub transient: Vec<usize>,
    /// Expected steps from each transient belief (same order as `transient`)
    /// until the chain enters a recurrent class.
    pub absorption_time_bound: Vec<f64>,
    /// Largest per-row mass lost through `drop` boundary rows under the policy.
    pub discarded_mass: f64,
}

impl ChainDiagnostics {
    pub fn is_unichain(&self) -> bool {
        self.recurrent_classes.len() == 1
    }

    /// Whether the single recurrent class contains every index below `n_pure`.
    pub fn contains_pure(&self, n_pure: usize) -> bool {
        self.is_unichain()
            && (0..n_pure).all(|b| self.recurrent_classes[0].binary_search(&b).is_ok())
    }
}

/// Communicating-class decomposition of the chain the policy induces on the
/// kernel. `drop` rows are classified as the sub-stochastic graph they are.
///
/// Panics if the policy is not defined on the kernel's beliefs and actions.
pub fn classify_chain(kernel: &BeliefKernel, policy: &Policy) -> ChainDiagnostics {
    assert_eq!(
        policy.n_beliefs(),
        kernel.n_beliefs,
        "policy/kernel belief count"
    );
    assert_eq!(
        policy.n_actions(),
        kernel.n_actions,
        "policy/kernel action count"
    );
    let n = kernel.n_beliefs;

    // Policy-mixed sparse rows.
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut discarded_mass: f64 = 0.0;
    for b in 0..n {
        let mut row: Vec<(usize, f64)> = Vec::new();
        let mut lost = 0.0;
        for (a, &w) in policy.probs[b].iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            lost += w * kernel.discarded_mass(b, a);
            for &(j, p) in kernel.row(b, a) {
                row.push((j, w * p));
            }
        }
        row.sort_by_key(|e| e.0);
        row.dedup_by(|next, prev| {
            if next.0 == prev.0 {
                prev.1 += next.1;
                true
            } else {
                false
            }
        });
        row.retain(|&(_, p)| p > EDGE_TOL);
        discarded_mass = discarded_mass.max(lost);
        rows.push(row);
    }

    let mut graph = DiGraph::<(), ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for (b, row) in rows.iter().enumerate() {
        for &(j, _) in row {
            graph.add_edge(nodes[b], nodes[j], ());
        }
    }
    let mut component = vec![0usize; n];
    let sccs = tarjan_scc(&graph);
    for (c, scc) in sccs.iter().enumerate() {
        for node in scc {
            component[node.index()] = c;
        }
    }
    let mut closed = vec![true; sccs.len()];
    for (b, row) in rows.iter().enumerate() {
        if row.iter().any(|&(j, _)| component[j] != component[b]) {
            closed[component[b]] = false;
        }
    }

    let mut recurrent_classes: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, _)| closed[*c])
        .map(|(_, scc)| {
            let mut class: Vec<usize> = scc.iter().map(|v| v.index()).collect();
            class.sort_unstable();
            class
        })
        .collect();
    recurrent_classes.sort_by_key(|c| c[0]);
    let transient: Vec<usize> = (0..n).filter(|&b| !closed[component[b]]).collect();

    // (I - Q_TT) t = 1 over the transient beliefs.
    let mut slot = vec![usize::MAX; n];
    for (i, &b) in transient.iter().enumerate() {
        slot[b] = i;
    }
    let t = transient.len();
    let absorption_time_bound = if t == 0 {
        Vec::new()
    } else {
        let mut a = vec![vec![0.0; t]; t];
        for (i, &b) in transient.iter().enumerate() {
            a[i][i] += 1.0;
            for &(j, p) in &rows[b] {
                if slot[j] != usize::MAX {
                    a[i][slot[j]] -= p;
                }
            }
        }
        linalg::solve_dense(a, vec![1.0; t]).unwrap_or_else(|| vec![f64::INFINITY; t])
    };

    ChainDiagnostics {
        recurrent_classes,
        transient,
        absorption_time_bound,
        discarded_mass,
    }
}

/// Contraction toward the pure beliefs with `mu = 1` off the pure set and
/// `2` on it, factor `xi = 1 - rho`, plus the Foster drift with the weights
/// swapped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCertificate {
    pub mu: Vec<f64>,
    pub factor: f64,
    /// `(b, a)` with `sum_{b' not pure} Q(b'|b,a) mu(b') > xi mu(b)`.
    pub violated: Vec<(usize, usize)>,
    /// `max |sum_{b' not pure} Q(b'|b,a) - (1 - rho)|` over interior rows.
    pub identity_deviation: f64,
    /// `max |drift + rho|` of the Foster function over interior non-pure rows.
    pub foster_deviation: f64,
    /// Non-pure `(b, a)` whose Foster drift exceeds `-rho`.
    pub foster_violated: Vec<(usize, usize)>,
    pub interior_rows: usize,
}

impl DriftCertificate {
    pub fn passes(&self) -> bool {
        self.violated.is_empty()
            && self.foster_violated.is_empty()
            && self.identity_deviation <= IDENTITY_TOL
            && self.foster_deviation <= IDENTITY_TOL
    }
}

pub fn check_contraction(kernel: &BeliefKernel, rho: f64) -> DriftCertificate {
    let n = kernel.n_beliefs;
    let pure = |b: usize| b < kernel.n_pure;
    let factor = 1.0 - rho;
    let mu: Vec<f64> = (0..n).map(|b| if pure(b) { 2.0 } else { 1.0 }).collect();
    let foster = |b: usize| if pure(b) { 1.0 } else { 2.0 };

    let mut violated = Vec::new();
    let mut foster_violated = Vec::new();
    let mut identity_deviation: f64 = 0.0;
    let mut foster_deviation: f64 = 0.0;
    let mut interior_rows = 0;
    for b in 0..n {
        for a in 0..kernel.n_actions {
            let row = kernel.row(b, a);
            let off_pure: f64 = row
                .iter()
                .filter(|(j, _)| !pure(*j))
                .map(|(j, p)| p * mu[*j])
                .sum();
            if off_pure > factor * mu[b] + IDENTITY_TOL {
                violated.push((b, a));
            }
            let interior = !kernel.is_boundary(b, a);
            if interior {
                interior_rows += 1;
                identity_deviation = identity_deviation.max((off_pure - factor).abs());
            }
            if !pure(b) {
                let drift: f64 = row.iter().map(|&(j, p)| p * foster(j)).sum::<f64>() - foster(b);
                if drift > -rho + IDENTITY_TOL {
                    foster_violated.push((b, a));
                }
                if interior {
                    foster_deviation = foster_deviation.max((drift + rho).abs());
                }
            }
        }
    }
    DriftCertificate {
        mu,
        factor,
        violated,
        identity_deviation,
        foster_deviation,
        foster_violated,
        interior_rows,
    }
}

/// `|primal - dual|` between the optimal values of a program and its dual.
/// Both come out of [`crate::lp::LinearProgram::dual`], which preserves the
/// objective value, so no sign flip is needed.
pub fn duality_gap(primal: &LpSolution, dual: &LpSolution) -> Result<f64, AnalysisError> {
    if !primal.is_optimal() || !dual.is_optimal() {
        return Err(AnalysisError::StatusMismatch {
            primal: primal.status,
            dual: dual.status,
        });
    }
    Ok((primal.objective_value - dual.objective_value).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuCheck {
    /// `max |nu(s, eta) - gamma(s) rho (1 - rho)^eta|` over `eta < K`.
    pub max_deviation: f64,
    /// Stationary mass inside the truncated space.
    pub total_mass: f64,
    /// `nu[s][eta]` for `eta = 0..=K`.
    pub nu: Vec<Vec<f64>>,
}

/// Solves the belief chain's balance equations directly and compares the
/// occupancy of each `(last state, age)` with the geometric closed form.
///
/// Under `selfloop` the age-`K` beliefs absorb the tail, so the stationary law
/// is used as is; under `drop` and `forceobs` it is the law conditioned on
/// age `<= K` and is rescaled by `1 - (1 - rho)^(K+1)`.
pub fn verify_nu_closed_form(
    space: &BeliefSpace,
    kernel: &BeliefKernel,
    gamma: &[f64],
    rho: f64,
) -> Result<NuCheck, AnalysisError> {
    if !space.action_independent {
        return Err(AnalysisError::NotActionIndependent);
    }
    if space.len() != kernel.n_beliefs || gamma.len() != space.n_states {
        return Err(AnalysisError::SpaceMismatch(format!(
            "{} beliefs vs {} kernel rows, {} states vs {} gamma entries",
            space.len(),
            kernel.n_beliefs,
            space.n_states,
            gamma.len()
        )));
    }
    // Dynamics ignore the action, so any policy gives the same chain.
    let policy = Policy::uniform(space.len(), space.n_actions);
    let mat = kernel.policy_balance_matrix(&policy.probs);
    let pi = linalg::stationary_vector(&mat).ok_or(AnalysisError::SingularChain)?;
    let scale = match kernel.mode {
        Some(BoundaryMode::Drop | BoundaryMode::ForceObs) if kernel.has_boundary() => {
            1.0 - (1.0 - rho).powi(space.k as i32 + 1)
        }
        _ => 1.0,
    };

    let mut nu = vec![vec![0.0; space.k + 1]; space.n_states];
    let mut max_deviation: f64 = 0.0;
    for (s, row) in nu.iter_mut().enumerate() {
        for (eta, cell) in row.iter_mut().enumerate() {
            let b = space.age_index(s, eta).ok_or_else(|| {
                AnalysisError::SpaceMismatch(format!("no belief for state {s} at age {eta}"))
            })?;
            *cell = scale * pi[b];
            if eta < space.k {
                let want = gamma[s] * rho * (1.0 - rho).powi(eta as i32);
                max_deviation = max_deviation.max((*cell - want).abs());
            }
        }
    }
    let total_mass = scale * pi.iter().sum::<f64>();
    Ok(NuCheck {
        max_deviation,
        total_mass,
        nu,
    })
}

/// Everything `analyze` reports, in one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub rho: f64,
    pub k: usize,
    pub mode: Option<BoundaryMode>,
    pub chain: ChainDiagnostics,
    pub drift: DriftCertificate,
    pub duality_gap_constrained: Option<f64>,
    pub duality_gap_unconstrained: Option<f64>,
    pub nu: Option<NuCheck>,
}

impl DiagnosticsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
