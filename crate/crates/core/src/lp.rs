//! Dense two-phase tableau simplex with Bland's pivoting rule.
//!
//! Generic over [`LpField`], so the same code solves a problem in `f64` or
//! exactly in `BigRational`. It is meant for certification-sized problems
//! (a few thousand variables at most), not as a production LP solver.

use thiserror::Error;

use crate::scalar::LpField;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("row {row} has {got} coefficients, expected {expected}")]
    RowLength { row: usize, got: usize, expected: usize },
    #[error("simplex exceeded {0} pivots")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    fn flipped(self) -> Self {
        match self {
            Relation::Le => Relation::Ge,
            Relation::Ge => Relation::Le,
            Relation::Eq => Relation::Eq,
        }
    }
}

#[derive(Debug, Clone)]
struct Row<F> {
    coeffs: Vec<F>,
    relation: Relation,
    rhs: F,
}

/// `maximize c.x  subject to  rows,  x >= 0`.
#[derive(Debug, Clone)]
pub struct LinearProgram<F> {
    objective: Vec<F>,
    rows: Vec<Row<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<F> {
    pub value: F,
    pub x: Vec<F>,
}

impl<F: LpField> LinearProgram<F> {
    pub fn maximize(objective: Vec<F>) -> Self {
        Self { objective, rows: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn constraint(&mut self, coeffs: Vec<F>, relation: Relation, rhs: F) -> Result<(), LpError> {
        if coeffs.len() != self.objective.len() {
            return Err(LpError::RowLength {
                row: self.rows.len(),
                got: coeffs.len(),
                expected: self.objective.len(),
            });
        }
        self.rows.push(Row { coeffs, relation, rhs });
        Ok(())
    }

    pub fn solve(&self) -> Result<LpSolution<F>, LpError> {
        Tableau::build(self).solve(&self.objective)
    }
}

struct Tableau<F> {
    /// `m` constraint rows followed by one objective row; last column is the rhs.
    cells: Vec<Vec<F>>,
    basis: Vec<usize>,
    n_orig: usize,
    n_cols: usize,
    first_artificial: usize,
}

impl<F: LpField> Tableau<F> {
    fn build(lp: &LinearProgram<F>) -> Self {
        let n = lp.objective.len();
        let rows: Vec<Row<F>> = lp
            .rows
            .iter()
            .map(|r| {
                if r.rhs.is_negative() {
                    Row {
                        coeffs: r.coeffs.iter().map(|c| -c.clone()).collect(),
                        relation: r.relation.flipped(),
                        rhs: -r.rhs.clone(),
                    }
                } else {
                    r.clone()
                }
            })
            .collect();
        let n_slack = rows.iter().filter(|r| r.relation != Relation::Eq).count();
        let n_art = rows.iter().filter(|r| r.relation != Relation::Le).count();
        let first_artificial = n + n_slack;
        let n_cols = first_artificial + n_art;
        let m = rows.len();

        let mut cells = vec![vec![F::zero(); n_cols + 1]; m + 1];
        let mut basis = vec![0; m];
        let (mut s, mut a) = (n, first_artificial);
        for (i, r) in rows.iter().enumerate() {
            cells[i][..n].clone_from_slice(&r.coeffs);
            cells[i][n_cols] = r.rhs.clone();
            match r.relation {
                Relation::Le => {
                    cells[i][s] = F::one();
                    basis[i] = s;
                    s += 1;
                }
                Relation::Ge => {
                    cells[i][s] = -F::one();
                    s += 1;
                    cells[i][a] = F::one();
                    basis[i] = a;
                    a += 1;
                }
                Relation::Eq => {
                    cells[i][a] = F::one();
                    basis[i] = a;
                    a += 1;
                }
            }
        }
        Self { cells, basis, n_orig: n, n_cols, first_artificial }
    }

    fn m(&self) -> usize {
        self.basis.len()
    }

    /// Writes reduced costs for `costs` (indexed by column) into the objective row.
    fn price(&mut self, costs: &[F]) {
        let m = self.m();
        let mut z = vec![F::zero(); self.n_cols + 1];
        for (j, c) in costs.iter().enumerate() {
            z[j] = c.clone();
        }
        for i in 0..m {
            let cb = costs.get(self.basis[i]).cloned().unwrap_or_else(F::zero);
            if cb.is_zero() {
                continue;
            }
            for (zj, tij) in z.iter_mut().zip(&self.cells[i]) {
                *zj = zj.clone() - cb.clone() * tij.clone();
            }
        }
        self.cells[m] = z;
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let width = self.n_cols + 1;
        let p = self.cells[row][col].clone();
        for j in 0..width {
            self.cells[row][j] = self.cells[row][j].clone() / p.clone();
        }
        let pivot_row = self.cells[row].clone();
        for (i, r) in self.cells.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let factor = r[col].clone();
            if factor.is_zero() {
                continue;
            }
            for (cell, pv) in r.iter_mut().zip(&pivot_row) {
                if !pv.is_zero() {
                    *cell = cell.clone() - factor.clone() * pv.clone();
                }
            }
            r[col] = F::zero();
        }
        self.basis[row] = col;
    }

    /// Runs simplex iterations over columns `< active_cols`.
    fn iterate(&mut self, active_cols: usize) -> Result<(), LpError> {
        let m = self.m();
        let limit = 50 * (self.n_cols + m + 10) * (m + 1);
        for _ in 0..limit {
            // Bland: smallest improving column, smallest basic index on ratio ties.
            let Some(col) = (0..active_cols).find(|&j| self.cells[m][j].is_pos()) else {
                return Ok(());
            };
            let mut best: Option<(usize, F)> = None;
            for i in 0..m {
                let a = &self.cells[i][col];
                if !a.is_pos() {
                    continue;
                }
                let ratio = self.cells[i][self.n_cols].clone() / a.clone();
                best = match best {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        let d = ratio.clone() - br.clone();
                        if d.is_neg() || (d.is_zeroish() && self.basis[i] < self.basis[bi]) {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            let Some((row, _)) = best else {
                return Err(LpError::Unbounded);
            };
            self.pivot(row, col);
        }
        Err(LpError::IterationLimit(limit))
    }

    fn solve(mut self, objective: &[F]) -> Result<LpSolution<F>, LpError> {
        let m = self.m();
        if self.first_artificial < self.n_cols {
            let mut phase1 = vec![F::zero(); self.n_cols];
            for c in phase1.iter_mut().skip(self.first_artificial) {
                *c = -F::one();
            }
            self.price(&phase1);
            self.iterate(self.n_cols)?;
            // Objective row rhs holds minus the phase-one value.
            let infeasibility = self.cells[m][self.n_cols].clone();
            if infeasibility.is_pos() {
                return Err(LpError::Infeasible);
            }
            self.evict_artificials();
        }
        self.price(objective);
        self.iterate(self.first_artificial)?;

        let mut x = vec![F::zero(); self.n_orig];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < self.n_orig {
                x[b] = self.cells[i][self.n_cols].clone();
            }
        }
        let mut value = F::zero();
        for (xj, cj) in x.iter().zip(objective) {
            value = value + xj.clone() * cj.clone();
        }
        Ok(LpSolution { value, x })
    }

    /// Pivots zero-valued artificials out of the basis; rows where that is
    /// impossible are redundant and get dropped.
    fn evict_artificials(&mut self) {
        let mut i = 0;
        while i < self.m() {
            if self.basis[i] >= self.first_artificial {
                match (0..self.first_artificial).find(|&j| !self.cells[i][j].is_zeroish()) {
                    Some(col) => self.pivot(i, col),
                    None => {
                        self.cells.remove(i);
                        self.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
        for r in self.cells.iter_mut() {
            for c in r.iter_mut().take(self.n_cols).skip(self.first_artificial) {
                *c = F::zero();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn textbook_max() {
        // max 3x + 5y; x <= 4; 2y <= 12; 3x + 2y <= 18  -> 36 at (2, 6)
        let mut lp = LinearProgram::maximize(vec![3.0f64, 5.0]);
        lp.constraint(vec![1.0, 0.0], Relation::Le, 4.0).unwrap();
        lp.constraint(vec![0.0, 2.0], Relation::Le, 12.0).unwrap();
        lp.constraint(vec![3.0, 2.0], Relation::Le, 18.0).unwrap();
        let s = lp.solve().unwrap();
        assert!((s.value - 36.0).abs() < 1e-12);
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn exact_rational_with_equalities_and_redundancy() {
        // min x + y (max -x - y); x + y = 1/3 twice (redundant); x - y >= 1/7
        let mut lp = LinearProgram::maximize(vec![q(-1, 1), q(-1, 1)]);
        lp.constraint(vec![q(1, 1), q(1, 1)], Relation::Eq, q(1, 3)).unwrap();
        lp.constraint(vec![q(1, 1), q(1, 1)], Relation::Eq, q(1, 3)).unwrap();
        lp.constraint(vec![q(1, 1), q(-1, 1)], Relation::Ge, q(1, 7)).unwrap();
        let s = lp.solve().unwrap();
        assert_eq!(s.value, q(-1, 3));
        assert_eq!(s.x[0].clone() + s.x[1].clone(), q(1, 3));
    }

    #[test]
    fn negative_rhs_is_flipped() {
        // max x; -x >= -2  (x <= 2)
        let mut lp = LinearProgram::maximize(vec![1.0f64]);
        lp.constraint(vec![-1.0], Relation::Ge, -2.0).unwrap();
        assert!((lp.solve().unwrap().value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.constraint(vec![1.0], Relation::Le, 1.0).unwrap();
        lp.constraint(vec![1.0], Relation::Ge, 2.0).unwrap();
        assert_eq!(lp.solve(), Err(LpError::Infeasible));

        let mut lp = LinearProgram::maximize(vec![1.0, 0.0]);
        lp.constraint(vec![0.0, 1.0], Relation::Le, 1.0).unwrap();
        assert_eq!(lp.solve(), Err(LpError::Unbounded));
    }

    #[test]
    fn row_length_checked() {
        let mut lp = LinearProgram::maximize(vec![1.0, 2.0]);
        assert!(matches!(lp.constraint(vec![1.0], Relation::Le, 1.0), Err(LpError::RowLength { .. })));
    }
}
