//! Dense two-phase primal simplex.
//!
//! The program is brought to `min c^T z, A z = b, z >= 0, b >= 0` by
//! splitting free variables, adding slack/surplus columns and negating rows
//! with a negative right-hand side. Phase one minimizes the sum of artificial
//! variables; phase two keeps the artificial columns in the tableau (banned
//! from entering) so that the row multipliers can be read off their reduced
//! costs at the end.

use serde::{Deserialize, Serialize};

use super::program::{LinearProgram, Relation, Sense, VarDomain};
use super::LpError;

pub const FEASIBILITY_TOL: f64 = 1e-9;
pub const OPTIMALITY_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
/// Reduced costs are rebuilt from the tableau this often to shed drift.
const REFRESH_EVERY: usize = 64;
/// Bland ties whose pivot is below this fraction of the largest are skipped.
const BLAND_PIVOT_FRACTION: f64 = 1e-3;
/// Equality rows whose reduced form is this small relative to the row are
/// treated as dependent.
const DEPENDENCE_TOL: f64 = 1e-9;
const ZERO_SNAP: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PivotRule {
    /// Smallest-index entering column, smallest-index leaving row on ties.
    Bland,
    /// Most negative reduced cost; falls back to Bland for the rest of the
    /// solve once `degenerate_limit` consecutive degenerate pivots occur.
    DantzigThenBland { degenerate_limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub pivot: PivotRule,
    pub max_iterations: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            pivot: PivotRule::DantzigThenBland {
                degenerate_limit: 50,
            },
            max_iterations: 1_000_000,
        }
    }
}

impl SimplexOptions {
    pub fn bland() -> Self {
        SimplexOptions {
            pivot: PivotRule::Bland,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Primal values, objective and row multipliers of a solved program.
///
/// `row_duals[i]` is the Lagrange multiplier of row `i`, i.e. the derivative
/// of the optimal objective with respect to that row's right-hand side. For a
/// minimization it is `<= 0` on `Le` rows and `>= 0` on `Ge` rows; the
/// opposite for a maximization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub row_duals: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn require_optimal(&self) -> Result<&Self, LpError> {
        match self.status {
            LpStatus::Optimal => Ok(self),
            LpStatus::Infeasible => Err(LpError::Infeasible),
            LpStatus::Unbounded => Err(LpError::Unbounded),
        }
    }

    /// Values of the variables of `lp.dual()` implied by the row multipliers.
    pub fn dual_values(&self, lp: &LinearProgram) -> Vec<f64> {
        lp.constraints
            .iter()
            .zip(&self.row_duals)
            .map(|(row, &y)| {
                let flip = matches!(
                    (lp.sense, row.relation),
                    (Sense::Minimize, Relation::Le) | (Sense::Maximize, Relation::Ge)
                );
                if flip {
                    -y
                } else {
                    y
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    Positive(usize),
    Negative(usize),
    Slack,
    Surplus,
    Artificial,
}

struct Tableau {
    m: usize,
    width: usize,
    /// Row-major `m x width`; the last column is the right-hand side.
    cells: Vec<f64>,
    basis: Vec<usize>,
    kinds: Vec<Column>,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width - 1)
    }

    fn n_cols(&self) -> usize {
        self.width - 1
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let w = self.width;
        let p = self.cells[r * w + e];
        let inv = 1.0 / p;
        {
            let row = &mut self.cells[r * w..(r + 1) * w];
            row.iter_mut().for_each(|v| *v *= inv);
            row[e] = 1.0;
        }
        let (head, tail) = self.cells.split_at_mut(r * w);
        let (pivot_row, rest) = tail.split_at_mut(w);
        for chunk in head.chunks_exact_mut(w).chain(rest.chunks_exact_mut(w)) {
            let f = chunk[e];
            if f == 0.0 {
                continue;
            }
            for (dst, src) in chunk.iter_mut().zip(pivot_row.iter()) {
                *dst -= f * src;
            }
            chunk[e] = 0.0;
        }
        self.basis[r] = e;
    }

    /// Reduced costs `c_j - c_B^T T_j` and the current objective `c_B^T rhs`.
    fn reduced_costs(&self, cost: &[f64]) -> (Vec<f64>, f64) {
        let mut d: Vec<f64> = cost.to_vec();
        let mut obj = 0.0;
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.cells[i * self.width..(i + 1) * self.width];
            for (dj, t) in d.iter_mut().zip(row) {
                *dj -= cb * t;
            }
            obj += cb * row[self.width - 1];
        }
        (d, obj)
    }

    fn update_costs(&self, d: &mut [f64], obj: &mut f64, r: usize, e: usize) {
        let f = d[e];
        if f == 0.0 {
            return;
        }
        let row = &self.cells[r * self.width..(r + 1) * self.width];
        for (dj, t) in d.iter_mut().zip(row) {
            *dj -= f * t;
        }
        d[e] = 0.0;
        // Objective decreases by d_e * theta.
        *obj += f * row[self.width - 1];
    }
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

/// Runs primal simplex iterations on `tab` for the column costs `cost`.
fn run_phase(
    tab: &mut Tableau,
    cost: &[f64],
    banned: &[bool],
    opts: &SimplexOptions,
    iterations: &mut usize,
) -> Result<PhaseEnd, LpError> {
    let (mut d, mut obj) = tab.reduced_costs(cost);
    let mut bland = matches!(opts.pivot, PivotRule::Bland);
    let mut degenerate_run = 0usize;
    let n = tab.n_cols();
    loop {
        let entering = if bland {
            (0..n).find(|&j| !banned[j] && d[j] < -OPTIMALITY_TOL)
        } else {
            let mut best: Option<usize> = None;
            for j in 0..n {
                if banned[j] || d[j] >= -OPTIMALITY_TOL {
                    continue;
                }
                if best.is_none_or(|b| d[j] < d[b]) {
                    best = Some(j);
                }
            }
            best
        };
        let Some(e) = entering else {
            return Ok(PhaseEnd::Optimal);
        };

        let leave = ratio_test(tab, e, bland);
        let Some((r, theta)) = leave else {
            return Ok(PhaseEnd::Unbounded);
        };

        *iterations += 1;
        if *iterations > opts.max_iterations {
            return Err(LpError::IterationLimit(opts.max_iterations));
        }
        if let PivotRule::DantzigThenBland { degenerate_limit } = opts.pivot {
            if theta <= 1e-12 {
                degenerate_run += 1;
                if degenerate_run > degenerate_limit {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
        }
        tab.pivot(r, e);
        if iterations.is_multiple_of(REFRESH_EVERY) {
            (d, obj) = tab.reduced_costs(cost);
        } else {
            tab.update_costs(&mut d, &mut obj, r, e);
        }
    }
}

/// Two-pass ratio test. The first pass bounds the step with every row allowed
/// to go `FEASIBILITY_TOL` negative; the second picks, among rows whose exact
/// ratio is within that bound, the largest pivot element. Under Bland's rule
/// the smallest basic index wins instead, among the exact-minimum ties whose
/// pivot is not negligible next to the largest of them.
fn ratio_test(tab: &Tableau, e: usize, bland: bool) -> Option<(usize, f64)> {
    let mut bound = f64::INFINITY;
    for i in 0..tab.m {
        let a = tab.at(i, e);
        if a > PIVOT_TOL {
            bound = bound.min((tab.rhs(i).max(0.0) + FEASIBILITY_TOL) / a);
        }
    }
    if bound == f64::INFINITY {
        return None;
    }
    let candidates = (0..tab.m).filter_map(|i| {
        let a = tab.at(i, e);
        (a > PIVOT_TOL && tab.rhs(i).max(0.0) / a <= bound).then(|| (i, a, tab.rhs(i).max(0.0) / a))
    });
    if !bland {
        let (r, _, theta) = candidates.fold(None::<(usize, f64, f64)>, |best, c| match best {
            Some(b) if b.1 > c.1 || (b.1 == c.1 && tab.basis[b.0] < tab.basis[c.0]) => Some(b),
            _ => Some(c),
        })?;
        return Some((r, theta));
    }
    let cands: Vec<(usize, f64, f64)> = candidates.collect();
    let min_ratio = cands.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
    let ties: Vec<&(usize, f64, f64)> = cands
        .iter()
        .filter(|c| c.2 <= min_ratio + 1e-12 * (1.0 + min_ratio))
        .collect();
    let biggest = ties.iter().map(|c| c.1).fold(0.0, f64::max);
    ties.into_iter()
        .filter(|c| c.1 >= BLAND_PIVOT_FRACTION * biggest)
        .min_by_key(|c| tab.basis[c.0])
        .map(|c| (c.0, c.2))
}

/// Solves `lp` with the two-phase simplex method.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    solve_lp_with(lp, &SimplexOptions::default())
}

pub fn solve_lp_with(lp: &LinearProgram, opts: &SimplexOptions) -> Result<LpSolution, LpError> {
    let n_orig = lp.n_vars();
    if lp.domains.len() != n_orig {
        return Err(LpError::DimensionMismatch(format!(
            "{} domains for {} variables",
            lp.domains.len(),
            n_orig
        )));
    }
    for (i, row) in lp.constraints.iter().enumerate() {
        if let Some(&(j, _)) = row.coeffs.iter().find(|(j, _)| *j >= n_orig) {
            return Err(LpError::DimensionMismatch(format!(
                "row {i} references column {j} of {n_orig}"
            )));
        }
    }
    let Some(redundant) = dependent_equalities(lp) else {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            x: vec![0.0; n_orig],
            objective_value: f64::NAN,
            row_duals: vec![0.0; lp.n_rows()],
            iterations: 0,
        });
    };
    if !redundant.iter().any(|r| *r) {
        return solve_full_rank(lp, opts);
    }
    log::debug!(
        "dropping {} linearly dependent equality rows",
        redundant.iter().filter(|r| **r).count()
    );
    let mut reduced = lp.clone();
    reduced.constraints = lp
        .constraints
        .iter()
        .zip(&redundant)
        .filter(|(_, r)| !**r)
        .map(|(c, _)| c.clone())
        .collect();
    let mut sol = solve_full_rank(&reduced, opts)?;
    // A dependent row is implied by the others; its multiplier is zero.
    let mut kept = sol.row_duals.into_iter();
    sol.row_duals = redundant
        .iter()
        .map(|&r| if r { 0.0 } else { kept.next().unwrap_or(0.0) })
        .collect();
    Ok(sol)
}

/// Flags equality rows that are linear combinations of earlier ones.
/// Returns `None` when such a row contradicts the rows it depends on.
///
/// Left in the tableau, a dependent row turns into round-off after
/// elimination, and pivoting on that noise wrecks the tableau.
fn dependent_equalities(lp: &LinearProgram) -> Option<Vec<bool>> {
    let n = lp.n_vars();
    let mut redundant = vec![false; lp.n_rows()];
    // Accepted rows, reduced and scaled to 1 at their pivot column.
    let mut basis: Vec<(usize, Vec<f64>, f64)> = Vec::new();
    for (i, row) in lp.constraints.iter().enumerate() {
        if row.relation != Relation::Eq {
            continue;
        }
        let mut v = vec![0.0; n];
        for &(j, a) in &row.coeffs {
            v[j] += a;
        }
        let mut rhs = row.rhs;
        let scale = v.iter().fold(1.0f64, |m, a| m.max(a.abs()));
        for (col, u, u_rhs) in &basis {
            let f = v[*col];
            if f != 0.0 {
                for (vj, uj) in v.iter_mut().zip(u) {
                    *vj -= f * uj;
                }
                rhs -= f * u_rhs;
            }
        }
        let (col, big) = v.iter().enumerate().fold((0, 0.0f64), |best, (j, a)| {
            if a.abs() > best.1 {
                (j, a.abs())
            } else {
                best
            }
        });
        if big <= DEPENDENCE_TOL * scale {
            if rhs.abs() > FEASIBILITY_TOL * (1.0 + row.rhs.abs()) {
                return None;
            }
            redundant[i] = true;
            continue;
        }
        let p = v[col];
        v.iter_mut().for_each(|a| *a /= p);
        basis.push((col, v, rhs / p));
    }
    Some(redundant)
}

fn solve_full_rank(lp: &LinearProgram, opts: &SimplexOptions) -> Result<LpSolution, LpError> {
    let m = lp.n_rows();
    let n_orig = lp.n_vars();
    let min_sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };

    // Column layout.
    let mut kinds = Vec::new();
    let mut col_of_var = vec![(0usize, None::<usize>); n_orig];
    for (j, dom) in lp.domains.iter().enumerate() {
        let pos = kinds.len();
        kinds.push(Column::Positive(j));
        col_of_var[j] = match dom {
            VarDomain::NonNeg => (pos, None),
            VarDomain::Free => {
                kinds.push(Column::Negative(j));
                (pos, Some(pos + 1))
            }
        };
    }
    let mut row_sign = vec![1.0; m];
    let mut relation = Vec::with_capacity(m);
    for (i, row) in lp.constraints.iter().enumerate() {
        let mut rel = row.relation;
        if row.rhs < 0.0 {
            row_sign[i] = -1.0;
            rel = match rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
        relation.push(rel);
    }
    let mut aux_col = vec![0usize; m];
    let mut extra_col = vec![None::<usize>; m];
    for i in 0..m {
        match relation[i] {
            Relation::Le => {
                aux_col[i] = kinds.len();
                kinds.push(Column::Slack);
            }
            Relation::Ge => {
                extra_col[i] = Some(kinds.len());
                kinds.push(Column::Surplus);
                aux_col[i] = kinds.len();
                kinds.push(Column::Artificial);
            }
            Relation::Eq => {
                aux_col[i] = kinds.len();
                kinds.push(Column::Artificial);
            }
        }
    }
    let n_cols = kinds.len();
    let width = n_cols + 1;
    let mut cells = vec![0.0; m * width];
    for (i, row) in lp.constraints.iter().enumerate() {
        let s = row_sign[i];
        let base = i * width;
        for &(j, a) in &row.coeffs {
            let (pos, neg) = col_of_var[j];
            cells[base + pos] += s * a;
            if let Some(neg) = neg {
                cells[base + neg] -= s * a;
            }
        }
        cells[base + aux_col[i]] = 1.0;
        if let Some(sur) = extra_col[i] {
            cells[base + sur] = -1.0;
        }
        cells[base + n_cols] = s * row.rhs;
    }
    let mut tab = Tableau {
        m,
        width,
        cells,
        basis: aux_col.clone(),
        kinds,
    };
    let mut iterations = 0;

    // Phase one.
    let is_art: Vec<bool> = tab.kinds.iter().map(|k| *k == Column::Artificial).collect();
    if is_art.iter().any(|a| *a) {
        let cost1: Vec<f64> = is_art.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
        let no_ban = vec![false; n_cols];
        run_phase(&mut tab, &cost1, &no_ban, opts, &mut iterations)?;
        let infeas: f64 = (0..m)
            .filter(|&i| is_art[tab.basis[i]])
            .map(|i| tab.rhs(i).abs())
            .sum();
        let scale = 1.0
            + lp.constraints
                .iter()
                .map(|r| r.rhs.abs())
                .fold(0.0, f64::max);
        if infeas > FEASIBILITY_TOL * scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: vec![0.0; n_orig],
                objective_value: f64::NAN,
                row_duals: vec![0.0; m],
                iterations,
            });
        }
        // Drive zero-level artificials out of the basis where possible.
        for i in 0..m {
            if !is_art[tab.basis[i]] {
                continue;
            }
            let pick = (0..n_cols)
                .filter(|&j| !is_art[j])
                .find(|&j| tab.at(i, j).abs() > PIVOT_TOL);
            if let Some(j) = pick {
                tab.pivot(i, j);
            }
        }
    }

    // Phase two.
    let cost2: Vec<f64> = tab
        .kinds
        .iter()
        .map(|k| match k {
            Column::Positive(j) => min_sign * lp.objective[*j],
            Column::Negative(j) => -min_sign * lp.objective[*j],
            _ => 0.0,
        })
        .collect();
    let end = run_phase(&mut tab, &cost2, &is_art, opts, &mut iterations)?;
    if let PhaseEnd::Unbounded = end {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: vec![0.0; n_orig],
            objective_value: min_sign * f64::NEG_INFINITY,
            row_duals: vec![0.0; m],
            iterations,
        });
    }

    let mut z = vec![0.0; n_cols];
    for i in 0..m {
        z[tab.basis[i]] = tab.rhs(i);
    }
    let mut x = vec![0.0; n_orig];
    for (j, &(pos, neg)) in col_of_var.iter().enumerate() {
        let mut v = z[pos] - neg.map_or(0.0, |k| z[k]);
        if v.abs() < ZERO_SNAP {
            v = 0.0;
        }
        if lp.domains[j] == VarDomain::NonNeg && v < 0.0 {
            v = 0.0;
        }
        x[j] = v;
    }
    let (d, _) = tab.reduced_costs(&cost2);
    let row_duals: Vec<f64> = (0..m)
        .map(|i| {
            let y_std = cost2[aux_col[i]] - d[aux_col[i]];
            min_sign * row_sign[i] * y_std
        })
        .collect();
    let objective_value = lp.objective_at(&x);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective_value,
        row_duals,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::program::Constraint;

    #[test]
    fn maximize_single_variable() {
        // min -x s.t. x <= 1
        let mut lp = LinearProgram::new(Sense::Minimize, vec![-1.0]);
        lp.push(Constraint::new(vec![(0, 1.0)], Relation::Le, 1.0));
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!((sol.objective_value + 1.0).abs() < 1e-12);
        assert!((sol.row_duals[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible() {
        let mut lp = LinearProgram::new(Sense::Minimize, vec![1.0]);
        lp.push(Constraint::new(vec![(0, 1.0)], Relation::Le, 1.0));
        lp.push(Constraint::new(vec![(0, 1.0)], Relation::Ge, 2.0));
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let mut lp = LinearProgram::new(Sense::Maximize, vec![1.0, 1.0]);
        lp.push(Constraint::new(
            vec![(0, 1.0), (1, -1.0)],
            Relation::Le,
            1.0,
        ));
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_variables_and_negative_rhs() {
        // min x0 + x1 with x1 free, x0 - x1 = -3, x1 <= 5 -> x0 = 0, x1 = 3.
        let mut lp = LinearProgram::new(Sense::Minimize, vec![1.0, 1.0]);
        lp.domains[1] = VarDomain::Free;
        lp.push(Constraint::new(
            vec![(0, 1.0), (1, -1.0)],
            Relation::Eq,
            -3.0,
        ));
        lp.push(Constraint::new(vec![(1, 1.0)], Relation::Le, 5.0));
        lp.push(Constraint::new(vec![(1, 1.0)], Relation::Ge, -10.0));
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective_value - 3.0).abs() < 1e-12, "{sol:?}");
        let dual = lp.dual();
        let y = sol.dual_values(&lp);
        assert!(dual.max_violation(&y) < 1e-12);
        assert!((dual.objective_at(&y) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_equalities() {
        // Two copies of the same equality row.
        let mut lp = LinearProgram::new(Sense::Maximize, vec![1.0, 2.0]);
        lp.push(Constraint::new(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 1.0));
        lp.push(Constraint::new(vec![(0, 2.0), (1, 2.0)], Relation::Eq, 2.0));
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective_value - 2.0).abs() < 1e-12);
        let y = sol.dual_values(&lp);
        assert!(lp.dual().max_violation(&y) < 1e-12);
    }

    #[test]
    fn deterministic_bytes() {
        let mut lp = LinearProgram::new(Sense::Minimize, vec![-1.0, -1.0, -1.0]);
        lp.push(Constraint::new(vec![(0, 1.0), (1, 1.0)], Relation::Le, 1.0));
        lp.push(Constraint::new(vec![(1, 1.0), (2, 1.0)], Relation::Le, 1.0));
        let a = serde_json::to_string(&solve_lp(&lp).unwrap()).unwrap();
        let b = serde_json::to_string(&solve_lp(&lp).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bland_and_dantzig_agree() {
        let mut lp = LinearProgram::new(Sense::Maximize, vec![3.0, 2.0, 4.0]);
        lp.push(Constraint::new(
            vec![(0, 1.0), (1, 1.0), (2, 2.0)],
            Relation::Le,
            4.0,
        ));
        lp.push(Constraint::new(vec![(0, 2.0), (2, 3.0)], Relation::Le, 5.0));
        lp.push(Constraint::new(
            vec![(0, 2.0), (1, 1.0), (2, 3.0)],
            Relation::Le,
            7.0,
        ));
        let a = solve_lp_with(&lp, &SimplexOptions::bland()).unwrap();
        let b = solve_lp(&lp).unwrap();
        assert!((a.objective_value - b.objective_value).abs() < 1e-12);
    }
}
