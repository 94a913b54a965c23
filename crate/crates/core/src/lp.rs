//! Dense two-phase simplex with Bland's rule.
//!
//! Variables carry box bounds; they are shifted or split into non-negative
//! columns before the tableau is built. Every returned point is re-checked
//! against the original constraints.

use crate::error::{Error, Result};

/// Absolute tolerance for constraint satisfaction.
pub const FEASIBILITY_TOL: f64 = 1e-7;
const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const MAX_ITERATIONS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coefs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub constraints: Vec<Constraint>,
    /// Per-variable `[lo, hi]`; infinite ends are allowed.
    pub bounds: Vec<(f64, f64)>,
    /// `None` asks for any feasible point.
    pub objective: Option<(Vec<f64>, Sense)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Feasible { point: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

impl LinearProgram {
    /// `num_vars` variables, each bounded to `[0, inf)`.
    pub fn new(num_vars: usize) -> Self {
        LinearProgram {
            num_vars,
            constraints: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); num_vars],
            objective: None,
        }
    }

    /// Appends a variable and returns its index.
    pub fn add_var(&mut self, lo: f64, hi: f64) -> usize {
        self.num_vars += 1;
        self.bounds.push((lo, hi));
        for c in &mut self.constraints {
            c.coefs.push(0.0);
        }
        if let Some((c, _)) = self.objective.as_mut() {
            c.push(0.0);
        }
        self.num_vars - 1
    }

    pub fn add_constraint(&mut self, coefs: Vec<f64>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint { coefs, relation, rhs });
    }

    pub fn add_sparse(&mut self, terms: &[(usize, f64)], relation: Relation, rhs: f64) {
        let mut coefs = vec![0.0; self.num_vars];
        for &(j, c) in terms {
            coefs[j] += c;
        }
        self.add_constraint(coefs, relation, rhs);
    }

    pub fn set_objective(&mut self, coefs: Vec<f64>, sense: Sense) {
        self.objective = Some((coefs, sense));
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars;
        if self.bounds.len() != n {
            return Err(Error::input("bounds length differs from variable count"));
        }
        for &(lo, hi) in &self.bounds {
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY || lo > hi {
                return Err(Error::input(format!("malformed variable bounds [{lo}, {hi}]")));
            }
        }
        for c in &self.constraints {
            if c.coefs.len() != n {
                return Err(Error::input("constraint length differs from variable count"));
            }
            if !c.rhs.is_finite() || c.coefs.iter().any(|v| !v.is_finite()) {
                return Err(Error::input("non-finite constraint coefficient"));
            }
        }
        if let Some((c, _)) = &self.objective {
            if c.len() != n || c.iter().any(|v| !v.is_finite()) {
                return Err(Error::input("malformed objective"));
            }
        }
        Ok(())
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, &(lo, hi)) in x.iter().zip(&self.bounds) {
            worst = worst.max(lo - v).max(v - hi);
        }
        for c in &self.constraints {
            let lhs: f64 = c.coefs.iter().zip(x).map(|(a, v)| a * v).sum();
            let gap = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        worst
    }
}

/// How an original variable is rebuilt from non-negative columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    Shift { lo: f64, col: usize },
    Mirror { hi: f64, col: usize },
    Split { pos: usize, neg: usize },
}

impl VarMap {
    fn offset(self) -> f64 {
        match self {
            VarMap::Shift { lo, .. } => lo,
            VarMap::Mirror { hi, .. } => hi,
            VarMap::Split { .. } => 0.0,
        }
    }

    fn terms(self) -> [(usize, f64); 2] {
        match self {
            VarMap::Shift { col, .. } => [(col, 1.0), (usize::MAX, 0.0)],
            VarMap::Mirror { col, .. } => [(col, -1.0), (usize::MAX, 0.0)],
            VarMap::Split { pos, neg } => [(pos, 1.0), (neg, -1.0)],
        }
    }
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cost: Vec<f64>,
    width: usize,
}

enum Status {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        self.rows[r][c] = 1.0;
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, &q) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * q;
                }
                row[c] = 0.0;
            }
        }
        let f = self.cost[c];
        if f != 0.0 {
            for (v, &q) in self.cost.iter_mut().zip(&pivot_row) {
                *v -= f * q;
            }
            self.cost[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Minimizes the current cost row over columns `< allowed`.
    fn optimize(&mut self, allowed: usize, iterations: &mut usize) -> Result<Status> {
        let rhs = self.width;
        loop {
            *iterations += 1;
            if *iterations > MAX_ITERATIONS {
                return Err(Error::Solver("iteration limit reached".into()));
            }
            let Some(enter) = (0..allowed).find(|&j| self.cost[j] < -COST_TOL) else {
                return Ok(Status::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                let a = row[enter];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = row[rhs].max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((b, best)) => {
                        if ratio < best - 1e-12 || (ratio <= best + 1e-12 && self.basis[i] < self.basis[b]) {
                            Some((i, ratio))
                        } else {
                            Some((b, best))
                        }
                    }
                };
            }
            let Some((r, _)) = leave else {
                return Ok(Status::Unbounded);
            };
            self.pivot(r, enter);
            if !self.rows[r][rhs].is_finite() {
                return Err(Error::Solver("numerical breakdown during pivoting".into()));
            }
        }
    }
}

/// Solves `lp`. Deterministic for identical input.
pub fn solve(lp: &LinearProgram) -> Result<LpOutcome> {
    lp.validate()?;

    let mut maps = Vec::with_capacity(lp.num_vars);
    let mut ncols = 0;
    let mut extra_rows: Vec<(usize, f64)> = Vec::new();
    for &(lo, hi) in &lp.bounds {
        let m = if lo.is_finite() {
            if hi.is_finite() {
                extra_rows.push((ncols, hi - lo));
            }
            VarMap::Shift { lo, col: ncols }
        } else if hi.is_finite() {
            VarMap::Mirror { hi, col: ncols }
        } else {
            ncols += 1;
            VarMap::Split {
                pos: ncols - 1,
                neg: ncols,
            }
        };
        ncols += 1;
        maps.push(m);
    }
    let structural = ncols;

    // rows as (dense coefficients over structural columns, relation, rhs)
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for c in &lp.constraints {
        let mut a = vec![0.0; structural];
        let mut rhs = c.rhs;
        for (j, &v) in c.coefs.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            rhs -= v * maps[j].offset();
            for (col, s) in maps[j].terms() {
                if col != usize::MAX {
                    a[col] += v * s;
                }
            }
        }
        rows.push((a, c.relation, rhs));
    }
    for &(col, width) in &extra_rows {
        let mut a = vec![0.0; structural];
        a[col] = 1.0;
        rows.push((a, Relation::Le, width));
    }
    for (a, rel, rhs) in rows.iter_mut() {
        if *rhs < 0.0 {
            a.iter_mut().for_each(|v| *v = -*v);
            *rhs = -*rhs;
            *rel = match *rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let slacks = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let artificials = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let first_art = structural + slacks;
    let width = first_art + artificials;
    let mut tab = Tableau {
        rows: Vec::with_capacity(rows.len()),
        basis: Vec::with_capacity(rows.len()),
        cost: vec![0.0; width + 1],
        width,
    };
    let (mut s, mut t) = (structural, first_art);
    for (a, rel, rhs) in &rows {
        let mut row = vec![0.0; width + 1];
        row[..structural].copy_from_slice(a);
        row[width] = *rhs;
        match rel {
            Relation::Le => {
                row[s] = 1.0;
                tab.basis.push(s);
                s += 1;
            }
            Relation::Ge => {
                row[s] = -1.0;
                row[t] = 1.0;
                tab.basis.push(t);
                s += 1;
                t += 1;
            }
            Relation::Eq => {
                row[t] = 1.0;
                tab.basis.push(t);
                t += 1;
            }
        }
        tab.rows.push(row);
    }

    let scale = rows.iter().fold(1.0f64, |m, r| m.max(r.2.abs()));
    let mut iterations = 0;

    if artificials > 0 {
        for (row, &b) in tab.rows.iter().zip(&tab.basis) {
            if b >= first_art {
                for (c, &v) in tab.cost.iter_mut().zip(row) {
                    *c -= v;
                }
            }
        }
        for c in &mut tab.cost[first_art..width] {
            *c = 0.0;
        }
        tab.optimize(width, &mut iterations)?;
        if -tab.cost[width] > FEASIBILITY_TOL * scale {
            return Ok(LpOutcome::Infeasible);
        }
        // drive remaining artificials out of the basis
        let mut r = 0;
        while r < tab.rows.len() {
            if tab.basis[r] >= first_art {
                let col = (0..first_art).find(|&j| tab.rows[r][j].abs() > PIVOT_TOL);
                match col {
                    Some(j) => tab.pivot(r, j),
                    None => {
                        tab.rows.remove(r);
                        tab.basis.remove(r);
                        continue;
                    }
                }
            }
            r += 1;
        }
    }

    let point_of = |tab: &Tableau| -> Vec<f64> {
        let mut cols = vec![0.0; structural];
        for (row, &b) in tab.rows.iter().zip(&tab.basis) {
            if b < structural {
                cols[b] = row[width].max(0.0);
            }
        }
        maps.iter()
            .zip(&lp.bounds)
            .map(|(m, &(lo, hi))| {
                let v = m.terms().iter().fold(
                    m.offset(),
                    |acc, &(c, s)| {
                        if c == usize::MAX {
                            acc
                        } else {
                            acc + s * cols[c]
                        }
                    },
                );
                v.clamp(lo, hi)
            })
            .collect()
    };

    let objective_of = |x: &[f64]| -> f64 {
        lp.objective
            .as_ref()
            .map_or(0.0, |(c, _)| c.iter().zip(x).map(|(a, v)| a * v).sum())
    };

    if let Some((c, sense)) = &lp.objective {
        let sign = if *sense == Sense::Maximize { -1.0 } else { 1.0 };
        tab.cost = vec![0.0; width + 1];
        for (j, &v) in c.iter().enumerate() {
            for (col, s) in maps[j].terms() {
                if col != usize::MAX {
                    tab.cost[col] += sign * v * s;
                }
            }
        }
        for r in 0..tab.rows.len() {
            let b = tab.basis[r];
            let f = tab.cost[b];
            if f != 0.0 {
                let row = &tab.rows[r];
                for (cst, &v) in tab.cost.iter_mut().zip(row) {
                    *cst -= f * v;
                }
                tab.cost[b] = 0.0;
            }
        }
        if let Status::Unbounded = tab.optimize(first_art, &mut iterations)? {
            return Ok(LpOutcome::Unbounded);
        }
    }

    let point = point_of(&tab);
    let violation = lp.max_violation(&point);
    if violation > FEASIBILITY_TOL {
        return Err(Error::Solver(format!("solution violates constraints by {violation:e}")));
    }
    let objective = objective_of(&point);
    Ok(LpOutcome::Feasible { point, objective })
}
