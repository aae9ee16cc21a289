use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::BeliefError;
use crate::mdp::FiniteMdp;

pub const DEFAULT_DEDUP_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_BELIEFS: usize = 1_000_000;
/// Entries above this negative value are rounding noise and get clamped.
pub const NEGATIVE_CLAMP_TOL: f64 = 1e-14;

/// Conditional law of the hidden state given the last observation and the
/// actions taken since.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief(Vec<f64>);

impl Belief {
    /// Clamps tiny negative entries to zero and renormalizes.
    pub fn new(mut probs: Vec<f64>) -> Result<Self, BeliefError> {
        if probs.is_empty() {
            return Err(BeliefError::InvalidBelief("empty vector".into()));
        }
        for v in probs.iter_mut() {
            if !v.is_finite() || *v < -NEGATIVE_CLAMP_TOL {
                return Err(BeliefError::InvalidBelief(format!("entry {v}")));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(BeliefError::InvalidBelief(format!("sum {total}")));
        }
        probs.iter_mut().for_each(|v| *v /= total);
        Ok(Belief(probs))
    }

    /// The pure belief `e_state`.
    pub fn pure(n_states: usize, state: usize) -> Self {
        let mut probs = vec![0.0; n_states];
        probs[state] = 1.0;
        Belief(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn distance_inf(&self, other: &Belief) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    pub fn dot(&self, values: impl Iterator<Item = f64>) -> f64 {
        self.0.iter().zip(values).map(|(b, v)| b * v).sum()
    }
}

/// One-step prediction without observation: `P_a^T b`.
pub fn belief_update(b: &Belief, action: usize, p: &[Vec<Vec<f64>>]) -> Belief {
    let mat = &p[action];
    let n = b.len();
    let mut next = vec![0.0; n];
    for (s, &bs) in b.0.iter().enumerate() {
        if bs == 0.0 {
            continue;
        }
        for (t, &pst) in mat[s].iter().enumerate() {
            next[t] += bs * pst;
        }
    }
    for v in next.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = next.iter().sum();
    next.iter_mut().for_each(|v| *v /= total);
    Belief(next)
}

/// How a belief was reached from the last observation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    /// Action-independent dynamics: last observed state and age.
    Age { state: usize, age: usize },
    /// General dynamics: last observed state and the actions taken since.
    Actions { state: usize, actions: Vec<usize> },
}

impl Origin {
    pub fn state(&self) -> usize {
        match self {
            Origin::Age { state, .. } | Origin::Actions { state, .. } => *state,
        }
    }

    /// Age of the information, i.e. steps since the observation.
    pub fn depth(&self) -> usize {
        match self {
            Origin::Age { age, .. } => *age,
            Origin::Actions { actions, .. } => actions.len(),
        }
    }

    /// `age_or_action_seq` column of the CSV dumps: the age, or the action
    /// sequence joined by `.` (`-` when empty).
    pub fn tag(&self) -> String {
        match self {
            Origin::Age { age, .. } => age.to_string(),
            Origin::Actions { actions, .. } if actions.is_empty() => "-".into(),
            Origin::Actions { actions, .. } => actions
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join("."),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceOptions {
    pub k: usize,
    pub dedup_tol: f64,
    pub max_beliefs: usize,
}

impl SpaceOptions {
    pub fn new(k: usize) -> Self {
        SpaceOptions {
            k,
            dedup_tol: DEFAULT_DEDUP_TOL,
            max_beliefs: DEFAULT_MAX_BELIEFS,
        }
    }
}

/// Reachable beliefs up to depth `k`. Indices `0..n_states` are the pure
/// beliefs `e_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSpace {
    pub n_states: usize,
    pub n_actions: usize,
    pub k: usize,
    pub dedup_tol: f64,
    pub action_independent: bool,
    pub beliefs: Vec<Belief>,
    pub origins: Vec<Origin>,
    /// `successors[b][a]`: index of `P_a^T b` when it lies in the space.
    pub successors: Vec<Vec<Option<usize>>>,
}

impl BeliefSpace {
    pub fn len(&self) -> usize {
        self.beliefs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beliefs.is_empty()
    }

    pub fn is_pure(&self, index: usize) -> bool {
        index < self.n_states
    }

    /// Index of the age-indexed belief `(state, age)` in the action-independent
    /// layout.
    pub fn age_index(&self, state: usize, age: usize) -> Option<usize> {
        if !self.action_independent || state >= self.n_states || age > self.k {
            return None;
        }
        Some(if age == 0 {
            state
        } else {
            self.n_states + state * self.k + (age - 1)
        })
    }

    /// Recomputes `prod P_{a_k}^T e_s` from each origin and returns the largest
    /// deviation from the stored vector.
    pub fn max_origin_deviation(&self, model: &FiniteMdp) -> f64 {
        self.beliefs
            .iter()
            .zip(&self.origins)
            .map(|(b, origin)| {
                let mut cur = Belief::pure(self.n_states, origin.state());
                match origin {
                    Origin::Age { age, .. } => {
                        for _ in 0..*age {
                            cur = belief_update(&cur, 0, &model.p);
                        }
                    }
                    Origin::Actions { actions, .. } => {
                        for &a in actions {
                            cur = belief_update(&cur, a, &model.p);
                        }
                    }
                }
                cur.distance_inf(b)
            })
            .fold(0.0, f64::max)
    }
}

/// Near-duplicate lookup: beliefs are bucketed by a projection onto a fixed
/// generic direction, so any two beliefs within `tol` in the sup norm land in
/// the same or adjacent buckets.
struct DedupIndex {
    tol: f64,
    weights: Vec<f64>,
    width: f64,
    buckets: HashMap<i64, Vec<usize>>,
}

impl DedupIndex {
    fn new(n_states: usize, tol: f64) -> Self {
        let weights: Vec<f64> = (0..n_states).map(|i| 1.0 / (i as f64 + 1.371)).collect();
        let width = tol * weights.iter().sum::<f64>();
        DedupIndex {
            tol,
            weights,
            width,
            buckets: HashMap::new(),
        }
    }

    fn key(&self, b: &Belief) -> i64 {
        (b.dot(self.weights.iter().copied()) / self.width).floor() as i64
    }

    fn find(&self, b: &Belief, beliefs: &[Belief]) -> Option<usize> {
        let key = self.key(b);
        (key - 1..=key + 1)
            .filter_map(|k| self.buckets.get(&k))
            .flatten()
            .copied()
            .filter(|&i| beliefs[i].distance_inf(b) <= self.tol)
            .min()
    }

    fn insert(&mut self, b: &Belief, index: usize) {
        let key = self.key(b);
        self.buckets.entry(key).or_default().push(index);
    }
}

/// Breadth-first enumeration of beliefs reachable from the pure states by at
/// most `k` unobserved steps.
///
/// When every action shares one transition matrix the space is laid out as
/// `(s, age)` for `age <= k` without merging. Otherwise non-pure beliefs within
/// `dedup_tol` of each other are merged, keeping the first (shortest) origin.
/// Pure beliefs are never merged with aged ones, so the pure set always
/// means "just observed".
pub fn build_belief_space(
    model: &FiniteMdp,
    opts: SpaceOptions,
) -> Result<BeliefSpace, BeliefError> {
    let n = model.n_states;
    let m = model.n_actions;
    if model.is_action_independent() {
        let total = n * (opts.k + 1);
        if total > opts.max_beliefs {
            return Err(BeliefError::ExplosionGuard {
                cap: opts.max_beliefs,
            });
        }
        let mut beliefs = Vec::with_capacity(total);
        let mut origins = Vec::with_capacity(total);
        for s in 0..n {
            beliefs.push(Belief::pure(n, s));
            origins.push(Origin::Age { state: s, age: 0 });
        }
        for s in 0..n {
            let mut cur = Belief::pure(n, s);
            for age in 1..=opts.k {
                cur = belief_update(&cur, 0, &model.p);
                beliefs.push(cur.clone());
                origins.push(Origin::Age { state: s, age });
            }
        }
        let mut space = BeliefSpace {
            n_states: n,
            n_actions: m,
            k: opts.k,
            dedup_tol: opts.dedup_tol,
            action_independent: true,
            beliefs,
            origins,
            successors: Vec::new(),
        };
        space.successors = (0..total)
            .map(|b| {
                let origin = &space.origins[b];
                let next = space.age_index(origin.state(), origin.depth() + 1);
                vec![next; m]
            })
            .collect();
        return Ok(space);
    }

    let mut beliefs: Vec<Belief> = (0..n).map(|s| Belief::pure(n, s)).collect();
    let mut origins: Vec<Origin> = (0..n)
        .map(|s| Origin::Actions {
            state: s,
            actions: Vec::new(),
        })
        .collect();
    let mut successors: Vec<Vec<Option<usize>>> = vec![vec![None; m]; n];
    let mut index = DedupIndex::new(n, opts.dedup_tol);
    let mut frontier: Vec<usize> = (0..n).collect();

    for _depth in 0..opts.k {
        let mut next_frontier = Vec::new();
        for &b in &frontier {
            for a in 0..m {
                let child = belief_update(&beliefs[b], a, &model.p);
                let target = match index.find(&child, &beliefs) {
                    Some(existing) => existing,
                    None => {
                        if beliefs.len() >= opts.max_beliefs {
                            return Err(BeliefError::ExplosionGuard {
                                cap: opts.max_beliefs,
                            });
                        }
                        let Origin::Actions { state, actions } = &origins[b] else {
                            unreachable!("general layout uses action origins")
                        };
                        let mut actions = actions.clone();
                        actions.push(a);
                        let id = beliefs.len();
                        index.insert(&child, id);
                        beliefs.push(child);
                        origins.push(Origin::Actions {
                            state: *state,
                            actions,
                        });
                        successors.push(vec![None; m]);
                        next_frontier.push(id);
                        id
                    }
                };
                successors[b][a] = Some(target);
            }
        }
        frontier = next_frontier;
    }
    // Boundary beliefs may still step onto an already enumerated belief.
    for &b in &frontier {
        for (a, slot) in successors[b].iter_mut().enumerate() {
            let child = belief_update(&beliefs[b], a, &model.p);
            *slot = index.find(&child, &beliefs);
        }
    }

    Ok(BeliefSpace {
        n_states: n,
        n_actions: m,
        k: opts.k,
        dedup_tol: opts.dedup_tol,
        action_independent: false,
        beliefs,
        origins,
        successors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wireless;

    fn two_action_model() -> FiniteMdp {
        let p0 = vec![vec![0.7, 0.3], vec![0.1, 0.9]];
        let p1 = vec![vec![0.2, 0.8], vec![0.6, 0.4]];
        FiniteMdp::new(
            vec![p0, p1],
            vec![vec![0.0, 1.0], vec![1.0, 4.0]],
            vec![vec![1.0, 2.0], vec![1.0, 2.0]],
            1.5,
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn update_examples() {
        let p = wireless::model(0.6).p;
        let b = belief_update(&Belief::pure(2, 1), 0, &p);
        assert!((b.probs()[0] - 0.1).abs() < 1e-15 && (b.probs()[1] - 0.9).abs() < 1e-15);
        let b = belief_update(&b, 0, &p);
        assert!((b.probs()[0] - 0.16).abs() < 1e-15 && (b.probs()[1] - 0.84).abs() < 1e-15);
        let gamma = Belief::new(vec![0.25, 0.75]).unwrap();
        assert!(belief_update(&gamma, 1, &p).distance_inf(&gamma) < 1e-15);
    }

    #[test]
    fn belief_constructor_clamps_noise() {
        let b = Belief::new(vec![-1e-16, 1.0]).unwrap();
        assert_eq!(b.probs(), &[0.0, 1.0]);
        assert!(Belief::new(vec![-0.1, 1.1]).is_err());
        assert!(Belief::new(vec![0.5, 0.4]).is_err());
    }

    #[test]
    fn wireless_space_has_age_layout() {
        let space = build_belief_space(&wireless::model(0.6), SpaceOptions::new(10)).unwrap();
        assert_eq!(space.len(), 22);
        assert!(space.action_independent);
        assert_eq!(space.age_index(1, 0), Some(1));
        let idx = space.age_index(1, 2).unwrap();
        assert_eq!(space.origins[idx], Origin::Age { state: 1, age: 2 });
        assert!((space.beliefs[idx].probs()[0] - 0.16).abs() < 1e-15);
        assert_eq!(
            space.successors[space.age_index(0, 10).unwrap()],
            vec![None, None]
        );
        assert!(space.max_origin_deviation(&wireless::model(0.6)) <= 1e-12);
    }

    #[test]
    fn depth_zero_is_pure_states_only() {
        for model in [wireless::model(0.3), two_action_model()] {
            let space = build_belief_space(&model, SpaceOptions::new(0)).unwrap();
            assert_eq!(space.len(), 2);
            assert!((0..2).all(|i| space.beliefs[i] == Belief::pure(2, i)));
        }
    }

    /// Oracle: enumerate every action string of length <= 2 from each pure
    /// state and count distinct non-pure vectors.
    #[test]
    fn general_space_matches_brute_force() {
        let model = two_action_model();
        let space = build_belief_space(&model, SpaceOptions::new(2)).unwrap();
        let mut distinct: Vec<Vec<f64>> = Vec::new();
        for s in 0..2 {
            for seq in [
                vec![0],
                vec![1],
                vec![0, 0],
                vec![0, 1],
                vec![1, 0],
                vec![1, 1],
            ] {
                let mut v = vec![0.0; 2];
                v[s] = 1.0;
                for a in seq {
                    v = (0..2)
                        .map(|t| (0..2).map(|u| v[u] * model.p[a][u][t]).sum())
                        .collect();
                }
                if !distinct
                    .iter()
                    .any(|d| d.iter().zip(&v).all(|(x, y)| (x - y).abs() <= 1e-10))
                {
                    distinct.push(v);
                }
            }
        }
        assert_eq!(space.len(), 2 + distinct.len());
        assert!(space.len() <= 14);
        assert!(space.max_origin_deviation(&model) <= 1e-12);
        for i in 0..space.len() {
            for j in i + 1..space.len() {
                if !space.is_pure(i) {
                    assert!(space.beliefs[i].distance_inf(&space.beliefs[j]) > space.dedup_tol);
                }
            }
        }
    }

    #[test]
    fn commuting_products_merge() {
        // Two actions with commuting matrices produce the same belief after
        // the strings 01 and 10.
        let p0 = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let p1 = vec![vec![0.9, 0.1], vec![0.1, 0.9]];
        let model = FiniteMdp::new(
            vec![p0, p1],
            vec![vec![0.0; 2]; 2],
            vec![vec![0.0; 2]; 2],
            1.0,
            0.5,
        )
        .unwrap();
        let space = build_belief_space(&model, SpaceOptions::new(3)).unwrap();
        // Depth 1: (0.5,0.5), (0.9,0.1), (0.1,0.9); deeper beliefs only add
        // P1 powers from e_i.
        let uniform = space
            .beliefs
            .iter()
            .filter(|b| (b.probs()[0] - 0.5).abs() < 1e-12)
            .count();
        assert_eq!(uniform, 1);
    }

    #[test]
    fn explosion_guard() {
        let opts = SpaceOptions {
            max_beliefs: 5,
            ..SpaceOptions::new(4)
        };
        assert!(matches!(
            build_belief_space(&two_action_model(), opts),
            Err(BeliefError::ExplosionGuard { cap: 5 })
        ));
        assert!(matches!(
            build_belief_space(&wireless::model(0.5), opts),
            Err(BeliefError::ExplosionGuard { cap: 5 })
        ));
    }

    #[test]
    fn origin_tags() {
        assert_eq!(Origin::Age { state: 1, age: 3 }.tag(), "3");
        let o = Origin::Actions {
            state: 0,
            actions: vec![1, 0, 1],
        };
        assert_eq!(o.tag(), "1.0.1");
        assert_eq!(o.depth(), 3);
    }
}
