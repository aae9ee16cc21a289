//! The countable belief MDP truncated at depth `K`: reachable beliefs, the
//! belief transition kernel and the lifted reward and cost tables.

mod kernel;
mod space;

use std::io::Write;

use thiserror::Error;

pub use kernel::{build_kernel, lift_cost, lift_reward, BeliefKernel, BoundaryMode, SparseRow};
pub use space::{
    belief_update, build_belief_space, Belief, BeliefSpace, Origin, SpaceOptions,
    DEFAULT_DEDUP_TOL, DEFAULT_MAX_BELIEFS,
};

#[derive(Debug, Error)]
pub enum BeliefError {
    #[error("invalid belief: {0}")]
    InvalidBelief(String),
    #[error("belief space exceeds the cap of {cap} beliefs")]
    ExplosionGuard { cap: usize },
    #[error("beliefs at truncation depth {k} need a boundary mode (drop, selfloop or forceobs)")]
    ModeRequired { k: usize },
    #[error("belief space was not built from this model")]
    SpaceMismatch,
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

/// Writes `index, origin_state, age_or_action_seq, prob_0..prob_{n-1}`.
pub fn write_space_csv<W: Write>(space: &BeliefSpace, out: W) -> Result<(), BeliefError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "index".to_string(),
        "origin_state".to_string(),
        "age_or_action_seq".to_string(),
    ];
    header.extend((0..space.n_states).map(|i| format!("prob_{i}")));
    w.write_record(&header)?;
    for (i, (b, origin)) in space.beliefs.iter().zip(&space.origins).enumerate() {
        let mut rec = vec![i.to_string(), origin.state().to_string(), origin.tag()];
        rec.extend(b.probs().iter().map(|p| format!("{p:.17e}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes `from, action, to, prob`.
pub fn write_kernel_csv<W: Write>(kernel: &BeliefKernel, out: W) -> Result<(), BeliefError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["from", "action", "to", "prob"])?;
    for b in 0..kernel.n_beliefs {
        for a in 0..kernel.n_actions {
            for &(j, p) in kernel.row(b, a) {
                w.write_record(&[
                    b.to_string(),
                    a.to_string(),
                    j.to_string(),
                    format!("{p:.17e}"),
                ])?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
