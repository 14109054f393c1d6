//! Dense two-phase tableau simplex with Bland's anti-cycling rule.
//!
//! Problems here are tiny (one variable per action profile), so the solver keeps a
//! full tableau and pivots exactly. All variables are implicitly non-negative.

use crate::error::{CpdsError, Result};

/// Feasibility and optimality tolerance.
pub const TOL_LP: f64 = 1e-9;

const PIVOT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
}

/// `rows` constraints over `num_vars` non-negative variables.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    num_vars: usize,
    coeffs: Vec<f64>,
    relations: Vec<Relation>,
    rhs: Vec<f64>,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            coeffs: Vec::new(),
            relations: Vec::new(),
            rhs: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_constraints(&self) -> usize {
        self.rhs.len()
    }

    pub fn add(&mut self, row: &[f64], relation: Relation, rhs: f64) {
        assert_eq!(row.len(), self.num_vars, "constraint width mismatch");
        self.coeffs.extend_from_slice(row);
        self.relations.push(relation);
        self.rhs.push(rhs);
    }

    pub fn maximize(&self, objective: &[f64]) -> Result<LpOutcome> {
        assert_eq!(objective.len(), self.num_vars, "objective width mismatch");
        Tableau::build(self).solve(Some(objective))
    }

    pub fn minimize(&self, objective: &[f64]) -> Result<LpOutcome> {
        let neg: Vec<f64> = objective.iter().map(|c| -c).collect();
        Ok(match self.maximize(&neg)? {
            LpOutcome::Optimal { value, x } => LpOutcome::Optimal { value: -value, x },
            other => other,
        })
    }

    /// A feasible point, if any.
    pub fn feasible_point(&self) -> Result<Option<Vec<f64>>> {
        Ok(match Tableau::build(self).solve(None)? {
            LpOutcome::Optimal { x, .. } => Some(x),
            _ => None,
        })
    }
}

struct Tableau {
    /// `rows x (cols + 1)`, last column is the right-hand side.
    t: Vec<f64>,
    rows: usize,
    cols: usize,
    num_vars: usize,
    /// Columns at or beyond this index are artificial.
    first_artificial: usize,
    basis: Vec<usize>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.rhs.len();
        let n = lp.num_vars;
        // Normalize to rhs >= 0; a zero-rhs `>=` row becomes `<=` so it needs no artificial.
        let mut rels = Vec::with_capacity(m);
        let mut signs = Vec::with_capacity(m);
        for i in 0..m {
            let (rel, rhs) = (lp.relations[i], lp.rhs[i]);
            let flip = rhs < 0.0 || (rhs == 0.0 && rel == Relation::Ge);
            let rel = match (rel, flip) {
                (Relation::Le, true) => Relation::Ge,
                (Relation::Ge, true) => Relation::Le,
                (r, _) => r,
            };
            rels.push(rel);
            signs.push(if flip { -1.0 } else { 1.0 });
        }
        let n_slack = rels.iter().filter(|r| **r != Relation::Eq).count();
        let n_art = rels.iter().filter(|r| **r != Relation::Le).count();
        let cols = n + n_slack + n_art;
        let width = cols + 1;
        let mut t = vec![0.0; m * width];
        let mut basis = vec![0; m];
        let mut slack = n;
        let mut art = n + n_slack;
        for i in 0..m {
            let row = &mut t[i * width..(i + 1) * width];
            for j in 0..n {
                row[j] = signs[i] * lp.coeffs[i * n + j];
            }
            row[cols] = signs[i] * lp.rhs[i];
            match rels[i] {
                Relation::Le => {
                    row[slack] = 1.0;
                    basis[i] = slack;
                    slack += 1;
                }
                Relation::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                    row[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
                Relation::Eq => {
                    row[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
            }
        }
        Self {
            t,
            rows: m,
            cols,
            num_vars: n,
            first_artificial: n + n_slack,
            basis,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.cols + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.cols)
    }

    fn pivot(&mut self, r: usize, c: usize, obj: &mut [f64]) {
        let width = self.cols + 1;
        let p = self.at(r, c);
        for v in &mut self.t[r * width..(r + 1) * width] {
            *v /= p;
        }
        let (before, rest) = self.t.split_at_mut(r * width);
        let (prow, after) = rest.split_at_mut(width);
        for row in before
            .chunks_exact_mut(width)
            .chain(after.chunks_exact_mut(width))
            .chain(std::iter::once(&mut obj[..]))
        {
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Reduced-cost row for maximizing `cost` at the current basis.
    fn objective_row(&self, cost: &[f64]) -> Vec<f64> {
        let width = self.cols + 1;
        let mut obj = vec![0.0; width];
        obj[..self.cols].copy_from_slice(cost);
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (o, v) in obj.iter_mut().zip(&self.t[i * width..(i + 1) * width]) {
                    *o -= cb * v;
                }
            }
        }
        obj
    }

    /// Runs simplex iterations over columns `< allowed`. Returns false if unbounded.
    ///
    /// Ratio-test ties go to the largest pivot for stability. After a long run of
    /// degenerate pivots the tie rule switches to Bland's lowest basis index, which
    /// together with lowest-index entering columns cannot cycle.
    fn iterate(&mut self, obj: &mut [f64], allowed: usize) -> Result<bool> {
        let limit = 100 * (self.rows + self.cols) + 1000;
        let bland_after = self.rows + self.cols;
        let mut degenerate_run = 0;
        for _ in 0..limit {
            let Some(enter) = (0..allowed).find(|&j| obj[j] > TOL_LP) else {
                return Ok(true);
            };
            let bland = degenerate_run > bland_after;
            let mut leave: Option<(usize, f64, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, enter);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((li, lr, la)) => {
                            ratio < lr - PIVOT_TOL
                                || (ratio <= lr + PIVOT_TOL
                                    && if bland {
                                        self.basis[i] < self.basis[li]
                                    } else {
                                        a > la
                                    })
                        }
                    };
                    if better {
                        leave = Some((i, ratio, a));
                    }
                }
            }
            let Some((r, ratio, _)) = leave else {
                return Ok(false);
            };
            if ratio <= PIVOT_TOL {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, enter, obj);
        }
        Err(CpdsError::Lp("simplex iteration limit reached".into()))
    }

    fn solve(mut self, objective: Option<&[f64]>) -> Result<LpOutcome> {
        if self.first_artificial < self.cols {
            let mut cost = vec![0.0; self.cols];
            for c in &mut cost[self.first_artificial..] {
                *c = -1.0;
            }
            let mut obj = self.objective_row(&cost);
            self.iterate(&mut obj, self.cols)?;
            let infeasibility: f64 = (0..self.rows)
                .filter(|&i| self.basis[i] >= self.first_artificial)
                .map(|i| self.rhs(i))
                .sum();
            if infeasibility > TOL_LP {
                return Ok(LpOutcome::Infeasible);
            }
            self.drive_out_artificials(&mut obj);
        }
        let Some(objective) = objective else {
            return Ok(LpOutcome::Optimal {
                value: 0.0,
                x: self.primal(),
            });
        };
        let mut cost = vec![0.0; self.cols];
        cost[..self.num_vars].copy_from_slice(objective);
        let mut obj = self.objective_row(&cost);
        if !self.iterate(&mut obj, self.first_artificial)? {
            return Ok(LpOutcome::Unbounded);
        }
        let x = self.primal();
        let value = x.iter().zip(objective).map(|(a, b)| a * b).sum();
        Ok(LpOutcome::Optimal { value, x })
    }

    fn drive_out_artificials(&mut self, obj: &mut [f64]) {
        let mut i = 0;
        while i < self.rows {
            if self.basis[i] >= self.first_artificial {
                match (0..self.first_artificial).find(|&j| self.at(i, j).abs() > PIVOT_TOL) {
                    Some(j) => self.pivot(i, j, obj),
                    None => {
                        // Redundant constraint.
                        let width = self.cols + 1;
                        self.t.drain(i * width..(i + 1) * width);
                        self.basis.remove(i);
                        self.rows -= 1;
                        continue;
                    }
                }
            }
            i += 1;
        }
    }

    fn primal(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.num_vars];
        for i in 0..self.rows {
            if self.basis[i] < self.num_vars {
                x[self.basis[i]] = self.rhs(i).max(0.0);
            }
        }
        x
    }
}
