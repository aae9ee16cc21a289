//! Independent oracles and random instance generators shared by the
//! integration and acceptance targets.

#![allow(dead_code)]

use iomdp::belief::{
    build_belief_space, build_kernel, lift_cost, BeliefError, BeliefKernel, BeliefSpace,
    BoundaryMode, SpaceOptions,
};
use iomdp::lp::{build_primal, solve_lp, Constraint, LinearProgram, Relation, Sense, VarDomain};
use iomdp::mdp::{validate_mdp, FiniteMdp};
use rand::Rng;

/// Largest belief space used in randomized batteries; the simplex works on a
/// dense tableau.
pub const MAX_RANDOM_BELIEFS: usize = 400;

/// Optimal objective found by enumerating every vertex of a bounded program:
/// each choice of `n` linearly independent active rows (equalities always
/// active, sign bounds treated as rows) is solved and kept if feasible.
/// `None` when no vertex is feasible.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let n = lp.objective.len();
    // Every row as (coeffs, relation, rhs) over dense coefficients.
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = lp
        .constraints
        .iter()
        .map(|c| {
            let mut dense = vec![0.0; n];
            for &(j, a) in &c.coeffs {
                dense[j] += a;
            }
            (dense, c.relation, c.rhs)
        })
        .collect();
    for (j, d) in lp.domains.iter().enumerate() {
        if *d == VarDomain::NonNeg {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            rows.push((e, Relation::Ge, 0.0));
        }
    }
    let eq: Vec<usize> = (0..rows.len())
        .filter(|&i| rows[i].1 == Relation::Eq)
        .collect();
    let ineq: Vec<usize> = (0..rows.len())
        .filter(|&i| rows[i].1 != Relation::Eq)
        .collect();
    if eq.len() > n {
        return None;
    }
    let need = n - eq.len();
    let feasible = |x: &[f64]| {
        rows.iter().all(|(a, rel, b)| {
            let v: f64 = a.iter().zip(x).map(|(p, q)| p * q).sum();
            let tol = 1e-9 * (1.0 + b.abs());
            match rel {
                Relation::Le => v <= b + tol,
                Relation::Ge => v >= b - tol,
                Relation::Eq => (v - b).abs() <= tol,
            }
        })
    };
    let sign = if lp.sense == Sense::Minimize {
        1.0
    } else {
        -1.0
    };
    let mut best: Option<f64> = None;
    for_each_combination(ineq.len(), need, &mut |pick| {
        let active: Vec<usize> = eq
            .iter()
            .copied()
            .chain(pick.iter().map(|&i| ineq[i]))
            .collect();
        let a: Vec<Vec<f64>> = active.iter().map(|&i| rows[i].0.clone()).collect();
        let b: Vec<f64> = active.iter().map(|&i| rows[i].2).collect();
        if let Some(x) = gauss(a, b) {
            if feasible(&x) {
                let obj: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
                if best.is_none_or(|cur| sign * obj < sign * cur) {
                    best = Some(obj);
                }
            }
        }
    });
    best
}

fn for_each_combination(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::with_capacity(k), f);
}

/// Square solve with full pivoting; `None` when (near) singular.
#[allow(clippy::needless_range_loop)]
fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut best = (k, k, 0.0);
        for i in k..n {
            for j in k..n {
                if a[i][j].abs() > best.2 {
                    best = (i, j, a[i][j].abs());
                }
            }
        }
        if best.2 < 1e-10 {
            return None;
        }
        a.swap(k, best.0);
        b.swap(k, best.0);
        for row in a.iter_mut() {
            row.swap(k, best.1);
        }
        perm.swap(k, best.1);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut y = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * y[j]).sum();
        y[k] = (b[k] - s) / a[k][k];
    }
    let mut x = vec![0.0; n];
    for (k, &p) in perm.iter().enumerate() {
        x[p] = y[k];
    }
    Some(x)
}

/// Random bounded program with at most `max_vars` variables and small
/// integer data. Free variables and every variable get a box `|x_j| <= 10`.
pub fn random_small_lp(rng: &mut impl Rng, max_vars: usize) -> LinearProgram {
    let n = rng.random_range(1..=max_vars);
    let sense = if rng.random_bool(0.5) {
        Sense::Minimize
    } else {
        Sense::Maximize
    };
    let objective = (0..n).map(|_| rng.random_range(-5..=5) as f64).collect();
    let mut lp = LinearProgram::new(sense, objective);
    for d in lp.domains.iter_mut() {
        if rng.random_bool(0.25) {
            *d = VarDomain::Free;
        }
    }
    for j in 0..n {
        lp.push(Constraint::new(vec![(j, 1.0)], Relation::Le, 10.0));
        if lp.domains[j] == VarDomain::Free {
            lp.push(Constraint::new(vec![(j, 1.0)], Relation::Ge, -10.0));
        }
    }
    let m = rng.random_range(1..=4);
    for _ in 0..m {
        let coeffs: Vec<(usize, f64)> = (0..n)
            .filter_map(|j| {
                let v = rng.random_range(-4..=4);
                (v != 0).then_some((j, v as f64))
            })
            .collect();
        let relation = match rng.random_range(0..6) {
            0 => Relation::Eq,
            1 | 2 => Relation::Ge,
            _ => Relation::Le,
        };
        lp.push(Constraint::new(
            coeffs,
            relation,
            rng.random_range(-6..=12) as f64,
        ));
    }
    lp
}

/// A random valid model: every transition row has positive mass on the
/// next state (mod `n`), so every deterministic policy is irreducible.
pub fn random_mdp(rng: &mut impl Rng, max_states: usize, max_actions: usize) -> FiniteMdp {
    loop {
        let n = rng.random_range(2..=max_states);
        let m = rng.random_range(1..=max_actions);
        let p = (0..m)
            .map(|_| {
                (0..n)
                    .map(|s| {
                        let mut row: Vec<f64> = (0..n)
                            .map(|_| {
                                if rng.random_bool(0.3) {
                                    0.0
                                } else {
                                    rng.random::<f64>()
                                }
                            })
                            .collect();
                        row[(s + 1) % n] += 0.05 + rng.random::<f64>();
                        let total: f64 = row.iter().sum();
                        row.iter().map(|v| v / total).collect()
                    })
                    .collect()
            })
            .collect();
        let r = (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(0.0..5.0)).collect())
            .collect();
        let c = (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(0.0..10.0)).collect())
            .collect();
        let rho = rng.random_range(1..=9) as f64 / 10.0;
        let model = FiniteMdp {
            n_states: n,
            n_actions: m,
            p,
            r,
            c,
            // Replaced by a feasible value in `random_instance`.
            budget: 0.0,
            rho,
        };
        if validate_mdp(&model).is_ok() {
            return model;
        }
    }
}

pub struct Instance {
    pub model: FiniteMdp,
    pub space: BeliefSpace,
    pub kernel: BeliefKernel,
    pub mode: BoundaryMode,
}

/// Random instance with depth drawn from `2..=6`, reduced until the belief
/// space fits under [`MAX_RANDOM_BELIEFS`], and a budget strictly between the
/// smallest and largest average cost reachable in the truncated program.
pub fn random_instance(rng: &mut impl Rng) -> Instance {
    loop {
        let mut model = random_mdp(rng, 4, 3);
        let mode = [
            BoundaryMode::Drop,
            BoundaryMode::SelfLoop,
            BoundaryMode::ForceObs,
        ][rng.random_range(0..3)];
        let mut k = rng.random_range(2..=6);
        let space = loop {
            let opts = SpaceOptions {
                max_beliefs: MAX_RANDOM_BELIEFS,
                ..SpaceOptions::new(k)
            };
            match build_belief_space(&model, opts) {
                Ok(space) => break Some(space),
                Err(BeliefError::ExplosionGuard { .. }) if k > 2 => k -= 1,
                Err(_) => break None,
            }
        };
        let Some(space) = space else { continue };
        let kernel = build_kernel(&space, &model, Some(mode)).expect("kernel");
        let cost = lift_cost(&space, &model);
        let neg_cost: Vec<Vec<f64>> = cost
            .iter()
            .map(|r| r.iter().map(|v| -v).collect())
            .collect();
        let cheapest =
            build_primal(&space, &kernel, &neg_cost, &cost, f64::INFINITY, false).unwrap();
        let priciest = build_primal(&space, &kernel, &cost, &cost, f64::INFINITY, false).unwrap();
        let lo = solve_lp(&cheapest.program).unwrap();
        let hi = solve_lp(&priciest.program).unwrap();
        if !lo.is_optimal() || !hi.is_optimal() {
            continue;
        }
        let lo = cheapest.average_cost(&lo.x);
        let hi = priciest.average_cost(&hi.x);
        model.budget = lo + rng.random_range(0.1..0.9) * (hi - lo);
        return Instance {
            model,
            space,
            kernel,
            mode,
        };
    }
}
