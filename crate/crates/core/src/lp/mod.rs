//! Occupancy-measure linear programs: assembly of the truncated primal and
//! reduced programs, mechanical dualization, the simplex engine and policy
//! extraction.

mod occupancy;
mod policy;
mod program;
mod simplex;

use thiserror::Error;

pub use occupancy::{
    acoe_residual, build_dual, build_primal, build_reduced_primal, kkt_report, nu_closed_form,
    solution_json, AcoeReport, KktReport, OccupancyDuals, OccupancyLp, RowRole, VarIndex,
};
pub use policy::{
    evaluate_policy_exact, evaluate_policy_reduced, extract_policy, read_policy_csv,
    write_policy_csv, Policy, PolicyValue, SUPPORT_TOL,
};
pub use program::{Constraint, LinearProgram, Relation, Sense, VarDomain};
pub use simplex::{
    solve_lp, solve_lp_with, LpSolution, LpStatus, PivotRule, SimplexOptions, FEASIBILITY_TOL,
    OPTIMALITY_TOL,
};

#[derive(Debug, Error)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("linear program is infeasible (budget below the minimum achievable average cost?)")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex exceeded {0} iterations")]
    IterationLimit(usize),
    #[error("model transitions depend on the action; the reduced program needs action-independent dynamics")]
    NotActionIndependent,
    #[error("solution status is {0:?}, not optimal")]
    NotOptimal(LpStatus),
    #[error("policy-induced belief chain has no unique stationary distribution")]
    SingularChain,
    #[error("{0}")]
    Parse(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
