//! Small dense linear algebra used by the stationary-distribution and
//! absorption-time solvers. Matrices are row-major `Vec<Vec<f64>>`.

/// Relative pivot threshold below which a system is treated as singular.
pub const SINGULAR_PIVOT: f64 = 1e-12;

/// Solves `a * x = b` by Gaussian elimination with partial pivoting.
///
/// Returns `None` when a pivot falls below `SINGULAR_PIVOT` times the largest
/// absolute entry of `a`.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    debug_assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    if n == 0 {
        return Some(Vec::new());
    }
    let scale = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot_row][col].abs() <= SINGULAR_PIVOT * scale {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);

        let pivot = a[col][col];
        for row in col + 1..n {
            let factor = a[row][col] / pivot;
            if factor == 0.0 {
                continue;
            }
            let (upper, lower) = a.split_at_mut(row);
            let src = &upper[col];
            for (dst, s) in lower[0][col..].iter_mut().zip(&src[col..]) {
                *dst -= factor * s;
            }
            b[row] -= factor * b[col];
        }
    }

    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|j| a[row][j] * x[j]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Stationary law of a row-stochastic (or sub-stochastic after rescaling)
/// matrix: solves `pi^T (P - I) = 0` with the last balance equation replaced
/// by `sum(pi) = 1`.
pub fn stationary_vector(p: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = p.len();
    if n == 0 {
        return None;
    }
    // Row i of the system is balance equation for state i: sum_j pi_j P[j][i] - pi_i.
    let mut a = vec![vec![0.0; n]; n];
    for (j, row) in p.iter().enumerate() {
        for (i, &pji) in row.iter().enumerate() {
            a[i][j] += pji;
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] -= 1.0;
    }
    a[n - 1] = vec![1.0; n];
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    let mut pi = solve_dense(a, rhs)?;
    for v in pi.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = pi.iter().sum();
    if total <= 0.0 {
        return None;
    }
    pi.iter_mut().for_each(|v| *v /= total);
    Some(pi)
}
