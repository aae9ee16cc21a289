//! Constrained average-reward MDPs whose state is observed only intermittently.
//!
//! The hidden state of a finite MDP is revealed with probability `rho` each
//! step. The controller acts on beliefs: a pure state right after an
//! observation, or the state law pushed forward through the actions taken
//! since. [`belief`] builds the reachable beliefs up to a truncation depth and
//! their transition kernel, [`lp`] solves the occupancy-measure linear
//! program (with an average-cost budget) and its dual, [`sim`] checks the
//! resulting policy by Monte Carlo and [`analysis`] verifies chain structure,
//! drift and duality numerically.

pub mod analysis;
pub mod belief;
pub mod linalg;
pub mod lp;
pub mod mdp;
pub mod sim;
pub mod wireless;

pub use analysis::AnalysisError;
pub use belief::BeliefError;
pub use lp::LpError;
pub use mdp::{FiniteMdp, MdpError};
pub use sim::SimError;

/// Any failure surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] MdpError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}
