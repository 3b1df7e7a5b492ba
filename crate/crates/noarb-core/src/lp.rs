//! Exact linear programming over rationals.
//!
//! A dense two-phase simplex with Bland's rule. Every pivot is exact, so
//! termination is guaranteed and feasibility decisions carry no tolerance:
//! an instance is optimal, infeasible or unbounded, full stop. Intended for
//! the small programs that arise from scenario trees.

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// Row relation of a constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// `maximize c . x  subject to  A x (<=|=|>=) b, x >= 0`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub n_vars: usize,
    pub objective: Vec<BigRational>,
    pub constraints: Vec<(Vec<BigRational>, Relation, BigRational)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal {
        objective: BigRational,
        solution: Vec<BigRational>,
    },
    Infeasible,
    Unbounded,
}

struct Tableau {
    /// `rows x (n_cols + 1)`; last entry of each row is the rhs.
    rows: Vec<Vec<BigRational>>,
    /// Reduced-cost row (length `n_cols + 1`); entry `n_cols` is the
    /// negated objective value.
    cost: Vec<BigRational>,
    /// Basic column per row.
    basis: Vec<usize>,
    n_cols: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let pivot = self.rows[row][col].clone();
        debug_assert!(!pivot.is_zero());
        for entry in self.rows[row].iter_mut() {
            *entry /= &pivot;
        }
        let pivot_row = self.rows[row].clone();
        for (i, r) in self.rows.iter_mut().enumerate() {
            if i == row || r[col].is_zero() {
                continue;
            }
            let factor = r[col].clone();
            for (e, p) in r.iter_mut().zip(&pivot_row) {
                *e -= &factor * p;
            }
        }
        if !self.cost[col].is_zero() {
            let factor = self.cost[col].clone();
            for (e, p) in self.cost.iter_mut().zip(&pivot_row) {
                *e -= &factor * p;
            }
        }
        self.basis[row] = col;
    }

    /// Bland's rule: entering column is the smallest index with positive
    /// reduced cost; leaving row minimizes the ratio, ties broken by the
    /// smallest basic column index. Returns false at optimality.
    fn step(&mut self, allowed: &dyn Fn(usize) -> bool) -> Result<bool, ()> {
        let entering = (0..self.n_cols).find(|&j| allowed(j) && self.cost[j].is_positive());
        let entering = match entering {
            Some(j) => j,
            None => return Ok(false),
        };
        let mut leaving: Option<(usize, BigRational)> = None;
        for i in 0..self.rows.len() {
            let coeff = &self.rows[i][entering];
            if coeff.is_positive() {
                let ratio = &self.rows[i][self.n_cols] / coeff;
                let better = match &leaving {
                    None => true,
                    Some((best_row, best_ratio)) => {
                        ratio < *best_ratio
                            || (ratio == *best_ratio && self.basis[i] < self.basis[*best_row])
                    }
                };
                if better {
                    leaving = Some((i, ratio));
                }
            }
        }
        match leaving {
            Some((row, _)) => {
                self.pivot(row, entering);
                Ok(true)
            }
            None => Err(()), // unbounded in the entering direction
        }
    }

    fn run(&mut self, allowed: &dyn Fn(usize) -> bool) -> Result<(), ()> {
        while self.step(allowed)? {}
        Ok(())
    }
}

/// Solves the program exactly.
pub fn solve(lp: &LinearProgram) -> LpOutcome {
    let n = lp.n_vars;
    let m = lp.constraints.len();
    assert_eq!(lp.objective.len(), n, "objective length mismatch");

    // Normalize to nonnegative rhs, then append slack/surplus and artificial
    // columns. Le rows start with their slack basic; everything else gets an
    // artificial.
    #[derive(Clone, Copy, PartialEq)]
    enum RowKind {
        Slack,
        Surplus,
        Eq,
    }
    let mut norm: Vec<(Vec<BigRational>, RowKind, BigRational)> = Vec::with_capacity(m);
    for (coeffs, relation, rhs) in &lp.constraints {
        assert_eq!(coeffs.len(), n, "constraint length mismatch");
        let flip = rhs.is_negative();
        let (coeffs, rhs): (Vec<BigRational>, BigRational) = if flip {
            (coeffs.iter().map(|c| -c.clone()).collect(), -rhs.clone())
        } else {
            (coeffs.clone(), rhs.clone())
        };
        let relation = match (relation, flip) {
            (Relation::Eq, _) => Relation::Eq,
            (Relation::Le, false) | (Relation::Ge, true) => Relation::Le,
            (Relation::Ge, false) | (Relation::Le, true) => Relation::Ge,
        };
        let kind = match relation {
            Relation::Le => RowKind::Slack,
            Relation::Ge => RowKind::Surplus,
            Relation::Eq => RowKind::Eq,
        };
        norm.push((coeffs, kind, rhs));
    }

    let n_slack = norm.len(); // one slack or surplus per inequality row
    let n_artificial = norm
        .iter()
        .filter(|(_, kind, _)| *kind != RowKind::Slack)
        .count();
    let n_cols = n + n_slack + n_artificial;

    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut next_artificial = n + n_slack;
    for (i, (coeffs, kind, rhs)) in norm.iter().enumerate() {
        let mut row = vec![BigRational::zero(); n_cols + 1];
        row[..n].clone_from_slice(coeffs);
        match kind {
            RowKind::Slack => {
                row[n + i] = BigRational::one();
                basis.push(n + i);
            }
            RowKind::Surplus => {
                row[n + i] = -BigRational::one();
                row[next_artificial] = BigRational::one();
                basis.push(next_artificial);
                next_artificial += 1;
            }
            RowKind::Eq => {
                row[next_artificial] = BigRational::one();
                basis.push(next_artificial);
                next_artificial += 1;
            }
        }
        row[n_cols] = rhs.clone();
        rows.push(row);
    }

    let artificial_start = n + n_slack;
    let mut tableau = Tableau {
        rows,
        cost: vec![BigRational::zero(); n_cols + 1],
        basis,
        n_cols,
    };

    // Phase 1: maximize minus the sum of artificials.
    if n_artificial > 0 {
        // cost row = c_j - z_j for c = -(artificials); start from basis.
        let mut cost = vec![BigRational::zero(); n_cols + 1];
        for (j, entry) in cost.iter_mut().enumerate().take(n_cols) {
            if j >= artificial_start {
                *entry = -BigRational::one();
            }
        }
        // Subtract c_B rows for basic artificials.
        for (i, &b) in tableau.basis.iter().enumerate() {
            if b >= artificial_start {
                let row = tableau.rows[i].clone();
                for (e, r) in cost.iter_mut().zip(&row) {
                    *e += r;
                }
            }
        }
        tableau.cost = cost;
        if tableau.run(&|_| true).is_err() {
            unreachable!("phase 1 objective is bounded above by zero");
        }
        // Optimal phase-1 value is -(sum of artificials) stored negated.
        let phase1 = -tableau.cost[n_cols].clone();
        if !phase1.is_zero() {
            return LpOutcome::Infeasible;
        }
        // Drive any degenerate artificials out of the basis.
        for i in 0..tableau.rows.len() {
            if tableau.basis[i] >= artificial_start {
                if let Some(col) = (0..artificial_start).find(|&j| !tableau.rows[i][j].is_zero()) {
                    tableau.pivot(i, col);
                }
                // A fully zero row is redundant; its artificial stays basic
                // at level zero and is barred from re-entering below.
            }
        }
    }

    // Phase 2: true objective, artificial columns barred.
    let mut cost = vec![BigRational::zero(); n_cols + 1];
    cost[..n].clone_from_slice(&lp.objective);
    for (i, &b) in tableau.basis.iter().enumerate() {
        let cb = if b < n {
            lp.objective[b].clone()
        } else {
            BigRational::zero()
        };
        if !cb.is_zero() {
            let row = tableau.rows[i].clone();
            for (e, r) in cost.iter_mut().zip(&row) {
                *e -= &cb * r;
            }
        }
    }
    tableau.cost = cost;
    let allowed = |j: usize| j < artificial_start;
    if tableau.run(&allowed).is_err() {
        return LpOutcome::Unbounded;
    }

    let mut solution = vec![BigRational::zero(); n];
    for (i, &b) in tableau.basis.iter().enumerate() {
        if b < n {
            solution[b] = tableau.rows[i][n_cols].clone();
        }
    }
    let objective = lp.objective.iter().zip(&solution).map(|(c, x)| c * x).sum();
    LpOutcome::Optimal {
        objective,
        solution,
    }
}
