//! Monte Carlo evaluation of a belief policy on the true system.
//!
//! The hidden state follows the underlying MDP; each step the controller sees
//! it with probability `rho`. Actions are drawn from the policy row of the
//! tracked belief, while rewards and costs are scored on the hidden state.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::BeliefSpace;
use crate::lp::Policy;
use crate::mdp::{stationary_distribution, FiniteMdp};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("policy covers {policy_beliefs} beliefs x {policy_actions} actions, space has {space_beliefs} x {space_actions}")]
    PolicyDomainMismatch {
        policy_beliefs: usize,
        policy_actions: usize,
        space_beliefs: usize,
        space_actions: usize,
    },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("no initial distribution: {0}")]
    Initial(#[from] crate::mdp::MdpError),
    #[error("trace output failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: u64,
    pub burn_in: u64,
    pub seed: u64,
    pub replications: usize,
    /// Depth of the belief space the policy was solved on.
    pub age_clamp: usize,
}

impl SimConfig {
    /// Burn-in defaults to a tenth of the horizon.
    pub fn new(horizon: u64, replications: usize, seed: u64, age_clamp: usize) -> Self {
        SimConfig {
            horizon,
            burn_in: horizon / 10,
            seed,
            replications,
            age_clamp,
        }
    }

    fn check(&self) -> Result<(), SimError> {
        if self.horizon <= self.burn_in {
            return Err(SimError::InvalidConfig(format!(
                "horizon {} must exceed burn-in {}",
                self.horizon, self.burn_in
            )));
        }
        if self.replications == 0 {
            return Err(SimError::InvalidConfig(
                "need at least one replication".into(),
            ));
        }
        Ok(())
    }
}

/// Mean across replications with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std_err = if xs.len() > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            f64::NAN
        };
        Estimate { mean, std_err }
    }

    /// `|mean - target| <= k * std_err`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_err
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitFrequency {
    pub last_state: usize,
    pub age: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub avg_reward: Estimate,
    pub avg_cost: Estimate,
    /// Per-replication `(reward, cost)` time averages.
    pub replications: Vec<(f64, f64)>,
    /// Fraction of scored steps at each age, pooled over replications.
    pub age_histogram: Vec<f64>,
    /// Fraction of scored steps per `(last observed state, age)`.
    pub visit_frequencies: Vec<VisitFrequency>,
    /// Beliefs occupied at least once after burn-in, sorted.
    pub visited_beliefs: Vec<usize>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct Step {
    t: u64,
    state: usize,
    observed: bool,
    age: usize,
    last_state: usize,
    belief: usize,
    action: usize,
    reward: f64,
    cost: f64,
}

fn cumulative(row: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    row.iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().expect("non-empty distribution");
    let target = u * total;
    cdf.iter()
        .position(|&c| target < c)
        .unwrap_or(cdf.len() - 1)
}

struct Sampler<'a> {
    model: &'a FiniteMdp,
    space: &'a BeliefSpace,
    initial: Vec<f64>,
    /// `transition[a][s]`.
    transition: Vec<Vec<Vec<f64>>>,
    policy: Vec<Vec<f64>>,
}

impl<'a> Sampler<'a> {
    fn new(
        model: &'a FiniteMdp,
        policy: &Policy,
        space: &'a BeliefSpace,
    ) -> Result<Self, SimError> {
        if policy.n_beliefs() != space.len() || policy.n_actions() != space.n_actions {
            return Err(SimError::PolicyDomainMismatch {
                policy_beliefs: policy.n_beliefs(),
                policy_actions: policy.n_actions(),
                space_beliefs: space.len(),
                space_actions: space.n_actions,
            });
        }
        let reference = if model.is_action_independent() {
            model.p[0].clone()
        } else {
            model.mean_matrix()
        };
        let gamma = stationary_distribution(&reference)?.gamma;
        Ok(Sampler {
            model,
            space,
            initial: cumulative(&gamma),
            transition: model
                .p
                .iter()
                .map(|mat| mat.iter().map(|row| cumulative(row)).collect())
                .collect(),
            policy: policy.probs.iter().map(|row| cumulative(row)).collect(),
        })
    }

    fn run(&self, cfg: &SimConfig, replication: usize, mut on_step: impl FnMut(&Step)) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(replication as u64);
        let rho = self.model.rho;
        let mut state = draw(&self.initial, rng.random());
        let mut belief = state;
        let mut last_state = state;
        let mut age = 0usize;
        let mut prev_action = 0usize;
        for t in 0..cfg.horizon {
            let observed = t == 0 || rng.random::<f64>() < rho;
            if observed {
                belief = state;
                last_state = state;
                age = 0;
            } else {
                age += 1;
                // Past the truncation depth the boundary belief keeps serving.
                if let Some(next) = self.space.successors[belief][prev_action] {
                    belief = next;
                }
            }
            let action = draw(&self.policy[belief], rng.random());
            on_step(&Step {
                t,
                state,
                observed,
                age,
                last_state,
                belief,
                action,
                reward: self.model.r[state][action],
                cost: self.model.c[state][action],
            });
            state = draw(&self.transition[action][state], rng.random());
            prev_action = action;
        }
    }
}

struct Tally {
    reward: f64,
    cost: f64,
    ages: Vec<u64>,
    visits: BTreeMap<(usize, usize), u64>,
    beliefs: Vec<bool>,
}

/// Runs `cfg.replications` independent replications and aggregates them in
/// replication order.
pub fn simulate(
    model: &FiniteMdp,
    policy: &Policy,
    space: &BeliefSpace,
    cfg: &SimConfig,
) -> Result<SimReport, SimError> {
    cfg.check()?;
    let sampler = Sampler::new(model, policy, space)?;
    let scored = (cfg.horizon - cfg.burn_in) as f64;
    let tallies: Vec<Tally> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let mut tally = Tally {
                reward: 0.0,
                cost: 0.0,
                ages: Vec::new(),
                visits: BTreeMap::new(),
                beliefs: vec![false; space.len()],
            };
            sampler.run(cfg, rep, |step| {
                if step.t < cfg.burn_in {
                    return;
                }
                tally.reward += step.reward;
                tally.cost += step.cost;
                if tally.ages.len() <= step.age {
                    tally.ages.resize(step.age + 1, 0);
                }
                tally.ages[step.age] += 1;
                *tally.visits.entry((step.last_state, step.age)).or_insert(0) += 1;
                tally.beliefs[step.belief] = true;
            });
            tally
        })
        .collect();

    let rewards: Vec<f64> = tallies.iter().map(|t| t.reward / scored).collect();
    let costs: Vec<f64> = tallies.iter().map(|t| t.cost / scored).collect();
    let total = scored * cfg.replications as f64;
    let max_age = tallies.iter().map(|t| t.ages.len()).max().unwrap_or(0);
    let mut ages = vec![0u64; max_age];
    let mut visits: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut seen = vec![false; space.len()];
    for t in &tallies {
        for (i, c) in t.ages.iter().enumerate() {
            ages[i] += c;
        }
        for (k, c) in &t.visits {
            *visits.entry(*k).or_insert(0) += c;
        }
        for (s, v) in seen.iter_mut().zip(&t.beliefs) {
            *s |= *v;
        }
    }

    Ok(SimReport {
        config: *cfg,
        avg_reward: Estimate::from_samples(&rewards),
        avg_cost: Estimate::from_samples(&costs),
        replications: rewards.into_iter().zip(costs).collect(),
        age_histogram: ages.iter().map(|&c| c as f64 / total).collect(),
        visit_frequencies: visits
            .into_iter()
            .map(|((last_state, age), c)| VisitFrequency {
                last_state,
                age,
                frequency: c as f64 / total,
            })
            .collect(),
        visited_beliefs: seen
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(|(i, _)| i)
            .collect(),
    })
}

/// Writes one replication step by step:
/// `t, s_true, observed, age, belief_index, action, reward, cost`.
pub fn write_trace<W: Write>(
    model: &FiniteMdp,
    policy: &Policy,
    space: &BeliefSpace,
    cfg: &SimConfig,
    replication: usize,
    mut out: W,
) -> Result<(), SimError> {
    cfg.check()?;
    let sampler = Sampler::new(model, policy, space)?;
    writeln!(out, "t,s_true,observed,age,belief_index,action,reward,cost")?;
    let mut result = Ok(());
    sampler.run(cfg, replication, |s| {
        if result.is_ok() {
            result = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.t, s.state, s.observed as u8, s.age, s.belief, s.action, s.reward, s.cost
            );
        }
    });
    result?;
    Ok(())
}

/// Total-variation distance between the empirical age law and
/// `Geometric(rho)` on `{0, 1, 2, ...}`.
pub fn empirical_age_law(report: &SimReport, rho: f64) -> f64 {
    let geo = |eta: usize| rho * (1.0 - rho).powi(eta as i32);
    let covered: f64 = report
        .age_histogram
        .iter()
        .enumerate()
        .map(|(eta, h)| (h - geo(eta)).abs())
        .sum();
    let tail = (1.0 - rho).powi(report.age_histogram.len() as i32);
    0.5 * (covered + tail)
}

/// `max |freq(s, eta) - gamma(s) rho (1 - rho)^eta|` over every
/// `(s, eta)` with `eta` up to the largest observed age.
pub fn visit_deviation(report: &SimReport, gamma: &[f64], rho: f64) -> f64 {
    let mut observed: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for v in &report.visit_frequencies {
        observed.insert((v.last_state, v.age), v.frequency);
    }
    let mut worst: f64 = 0.0;
    for (s, g) in gamma.iter().enumerate() {
        for eta in 0..report.age_histogram.len() {
            let want = g * rho * (1.0 - rho).powi(eta as i32);
            let got = observed.get(&(s, eta)).copied().unwrap_or(0.0);
            worst = worst.max((got - want).abs());
        }
    }
    worst
}
