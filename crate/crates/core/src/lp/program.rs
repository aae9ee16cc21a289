use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarDomain {
    NonNeg,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> Self {
        Constraint {
            coeffs,
            relation,
            rhs,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates the row, zero when satisfied.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.eval(x);
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// `opt c^T x` subject to sparse rows and per-variable sign domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub domains: Vec<VarDomain>,
}

impl LinearProgram {
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram {
            sense,
            objective,
            constraints: Vec::new(),
            domains: vec![VarDomain::NonNeg; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.constraints.len()
    }

    pub fn push(&mut self, row: Constraint) -> usize {
        self.constraints.push(row);
        self.constraints.len() - 1
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest row violation or sign-domain violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self
            .constraints
            .iter()
            .map(|r| r.violation(x))
            .fold(0.0, f64::max);
        let signs = self
            .domains
            .iter()
            .zip(x)
            .map(|(d, v)| match d {
                VarDomain::NonNeg => (-v).max(0.0),
                VarDomain::Free => 0.0,
            })
            .fold(0.0, f64::max);
        rows.max(signs)
    }

    /// Mechanical LP dual.
    ///
    /// Rows whose relation points the "wrong" way for the sense (`Le` under
    /// minimization, `Ge` under maximization) are negated first, so every
    /// dual variable is either free (equality rows) or nonnegative. Dual
    /// variable `i` belongs to primal row `i`; dual row `j` to primal column
    /// `j`.
    pub fn dual(&self) -> LinearProgram {
        let m = self.n_rows();
        let n = self.n_vars();
        let mut rhs = vec![0.0; m];
        let mut domains = vec![VarDomain::NonNeg; m];
        let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, row) in self.constraints.iter().enumerate() {
            let flip = matches!(
                (self.sense, row.relation),
                (Sense::Minimize, Relation::Le) | (Sense::Maximize, Relation::Ge)
            );
            let sign = if flip { -1.0 } else { 1.0 };
            rhs[i] = sign * row.rhs;
            if row.relation == Relation::Eq {
                domains[i] = VarDomain::Free;
            }
            for &(j, a) in &row.coeffs {
                columns[j].push((i, sign * a));
            }
        }
        let (dual_sense, col_relation) = match self.sense {
            Sense::Minimize => (Sense::Maximize, Relation::Le),
            Sense::Maximize => (Sense::Minimize, Relation::Ge),
        };
        let constraints = columns
            .into_iter()
            .enumerate()
            .map(|(j, coeffs)| {
                let relation = match self.domains[j] {
                    VarDomain::NonNeg => col_relation,
                    VarDomain::Free => Relation::Eq,
                };
                Constraint::new(coeffs, relation, self.objective[j])
            })
            .collect();
        LinearProgram {
            sense: dual_sense,
            objective: rhs,
            constraints,
            domains,
        }
    }
}
