//! Dense two-phase tableau simplex.
//!
//! Entering columns follow Dantzig's rule and fall back to Bland's rule
//! after a run of degenerate pivots. The leaving row is picked by the ratio
//! test with partial pivoting among near-ties. After phase II the basis is
//! re-solved against the original matrix to polish the primal values and to
//! recover the dual prices.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize objective . x` subject to `constraints`, `x >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub var_names: Vec<String>,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimplexOptions {
    /// Optimality and feasibility tolerance.
    pub tol: f64,
    /// Smallest admissible pivot magnitude.
    pub pivot_tol: f64,
    pub max_iterations: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
    /// Upper bound on tableau entries, guards memory.
    pub max_tableau_entries: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self { tol: 1e-10, pivot_tol: 1e-11, max_iterations: 100_000, bland_after: 32, max_tableau_entries: 25_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Dual price of every constraint in its original orientation.
    pub duals: Vec<f64>,
    pub dual_objective: f64,
    pub duality_gap: f64,
    /// Largest violation of any primal constraint or bound.
    pub max_residual: f64,
    /// Largest positive reduced cost, i.e. dual infeasibility.
    pub max_reduced_cost: f64,
    pub iterations: usize,
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn solve(&self, options: &SimplexOptions) -> Result<LpSolution> {
        for c in &self.constraints {
            if c.coeffs.len() != self.num_vars() {
                return Err(Error::InvalidParameter(format!(
                    "constraint {} has {} coefficients, expected {}",
                    c.name,
                    c.coeffs.len(),
                    self.num_vars()
                )));
            }
        }
        let mut tab = Tableau::build(self, options)?;
        tab.phase_one()?;
        tab.phase_two(&self.objective)?;
        tab.finish(self)
    }

    /// Largest violation of `x` against the constraints and `x >= 0`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().fold(0.0f64, |w, &v| w.max(-v));
        for c in &self.constraints {
            worst = worst.max(constraint_violation(c, x));
        }
        worst
    }

    /// Renders the program in CPLEX LP text format.
    pub fn to_cplex_lp(&self) -> String {
        let mut out = String::new();
        out.push_str("Maximize\n obj:");
        write_terms(&mut out, &self.objective, &self.var_names);
        out.push_str("\nSubject To\n");
        for c in &self.constraints {
            let _ = write!(out, " {}:", c.name);
            write_terms(&mut out, &c.coeffs, &self.var_names);
            let op = match c.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            let _ = writeln!(out, " {op} {}", c.rhs);
        }
        out.push_str("Bounds\n");
        for name in &self.var_names {
            let _ = writeln!(out, " {name} >= 0");
        }
        out.push_str("End\n");
        out
    }
}

pub(crate) fn constraint_violation(c: &Constraint, x: &[f64]) -> f64 {
    let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
    let diff = lhs - c.rhs;
    match c.relation {
        Relation::Le => diff.max(0.0),
        Relation::Ge => (-diff).max(0.0),
        Relation::Eq => diff.abs(),
    }
}

fn write_terms(out: &mut String, coeffs: &[f64], names: &[String]) {
    let mut first = true;
    for (a, name) in coeffs.iter().zip(names) {
        if *a == 0.0 {
            continue;
        }
        let sign = if *a < 0.0 {
            " -"
        } else if first {
            ""
        } else {
            " +"
        };
        let _ = write!(out, "{sign} {} {name}", a.abs());
        first = false;
    }
    if first {
        // CPLEX LP needs at least one term
        let _ = write!(out, " 0 {}", names.first().map(String::as_str).unwrap_or("x"));
    }
}

struct Tableau {
    m: usize,
    cols: usize,
    /// Columns `[0, n)` are structural, `[n, art)` slack or surplus,
    /// `[art, cols)` artificial.
    n: usize,
    art: usize,
    /// `(m + 1) x (cols + 1)` row-major; row `m` holds reduced costs, the
    /// last column the right-hand side.
    data: Vec<f64>,
    basis: Vec<usize>,
    /// Standard-form constraint matrix before any pivot, `m x cols`.
    original: Vec<f64>,
    rhs: Vec<f64>,
    /// +1 or -1 per row, records rows negated to make `rhs >= 0`.
    sign: Vec<f64>,
    cost: Vec<f64>,
    opts: SimplexOptions,
    iterations: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram, opts: &SimplexOptions) -> Result<Self> {
        let m = lp.constraints.len();
        let n = lp.num_vars();
        let mut sign = vec![1.0; m];
        let mut rel = Vec::with_capacity(m);
        for (i, c) in lp.constraints.iter().enumerate() {
            let mut r = c.relation;
            if c.rhs < 0.0 {
                sign[i] = -1.0;
                r = match r {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
            }
            rel.push(r);
        }
        let n_slack = rel.iter().filter(|r| **r != Relation::Eq).count();
        let n_art = rel.iter().filter(|r| **r != Relation::Le).count();
        let art = n + n_slack;
        let cols = art + n_art;
        let width = cols + 1;
        if (m + 1).saturating_mul(width) > opts.max_tableau_entries {
            return Err(Error::TooLarge(format!("tableau of {} x {} entries", m + 1, width)));
        }
        let mut data = vec![0.0; (m + 1) * width];
        let mut basis = vec![0; m];
        let mut rhs = vec![0.0; m];
        let (mut next_slack, mut next_art) = (n, art);
        for (i, c) in lp.constraints.iter().enumerate() {
            let row = &mut data[i * width..(i + 1) * width];
            for (j, a) in c.coeffs.iter().enumerate() {
                row[j] = sign[i] * a;
            }
            row[cols] = sign[i] * c.rhs;
            rhs[i] = row[cols];
            match rel[i] {
                Relation::Le => {
                    row[next_slack] = 1.0;
                    basis[i] = next_slack;
                    next_slack += 1;
                }
                Relation::Ge => {
                    row[next_slack] = -1.0;
                    next_slack += 1;
                    row[next_art] = 1.0;
                    basis[i] = next_art;
                    next_art += 1;
                }
                Relation::Eq => {
                    row[next_art] = 1.0;
                    basis[i] = next_art;
                    next_art += 1;
                }
            }
        }
        let mut original = Vec::with_capacity(m * cols);
        for i in 0..m {
            original.extend_from_slice(&data[i * width..i * width + cols]);
        }
        Ok(Self {
            m,
            cols,
            n,
            art,
            data,
            basis,
            original,
            rhs,
            sign,
            cost: vec![0.0; cols],
            opts: *opts,
            iterations: 0,
        })
    }

    #[inline]
    fn width(&self) -> usize {
        self.cols + 1
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width() + j]
    }

    /// Rebuilds the reduced-cost row for the current cost vector.
    fn price(&mut self) {
        let w = self.width();
        let m = self.m;
        let (body, obj) = self.data.split_at_mut(m * w);
        let obj = &mut obj[..w];
        obj[..self.cols].copy_from_slice(&self.cost);
        obj[self.cols] = 0.0;
        for i in 0..m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &body[i * w..(i + 1) * w];
                for (o, r) in obj.iter_mut().zip(row) {
                    *o -= cb * r;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let w = self.width();
        let piv = self.at(r, e);
        {
            let row = &mut self.data[r * w..(r + 1) * w];
            for v in row.iter_mut() {
                *v /= piv;
            }
            row[e] = 1.0;
        }
        let pivot_row: Vec<f64> = self.data[r * w..(r + 1) * w].to_vec();
        for i in 0..=self.m {
            if i == r {
                continue;
            }
            let f = self.data[i * w + e];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.data[i * w..(i + 1) * w];
            for (v, p) in row.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
            row[e] = 0.0;
        }
        self.basis[r] = e;
    }

    fn iterate(&mut self, allowed_cols: usize) -> Result<()> {
        let tol = self.opts.tol;
        let mut degenerate_run = 0usize;
        loop {
            let bland = degenerate_run >= self.opts.bland_after;
            let obj_row = self.m * self.width();
            let mut entering = None;
            let mut best = tol;
            for j in 0..allowed_cols {
                let d = self.data[obj_row + j];
                if d > best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(e) = entering else { return Ok(()) };

            let mut leave: Option<(usize, f64, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, e);
                if a <= self.opts.pivot_tol {
                    continue;
                }
                let ratio = self.at(i, self.cols) / a;
                leave = match leave {
                    None => Some((i, ratio, a)),
                    Some((r, best_ratio, best_a)) => {
                        let tie = (ratio - best_ratio).abs() <= 1e-12 * (1.0 + best_ratio.abs());
                        if ratio < best_ratio && !tie {
                            Some((i, ratio, a))
                        } else if tie {
                            let better = if bland { self.basis[i] < self.basis[r] } else { a > best_a };
                            if better {
                                Some((i, ratio, a))
                            } else {
                                Some((r, best_ratio, best_a))
                            }
                        } else {
                            Some((r, best_ratio, best_a))
                        }
                    }
                };
            }
            let Some((r, ratio, _)) = leave else { return Err(Error::Unbounded) };
            if ratio <= tol {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, e);
            self.iterations += 1;
            if self.iterations > self.opts.max_iterations {
                return Err(Error::IterationLimit(self.opts.max_iterations));
            }
        }
    }

    fn phase_one(&mut self) -> Result<()> {
        if self.art == self.cols {
            return Ok(());
        }
        self.cost.iter_mut().for_each(|c| *c = 0.0);
        for j in self.art..self.cols {
            self.cost[j] = -1.0;
        }
        self.price();
        self.iterate(self.cols)?;
        let infeasibility = self.data[self.m * self.width() + self.cols];
        let scale = 1.0 + self.rhs.iter().fold(0.0f64, |s, b| s.max(b.abs()));
        if infeasibility > self.opts.tol.max(1e-9) * scale {
            return Err(Error::Infeasible);
        }
        // Drive zero-level artificials out of the basis where possible. An
        // artificial that cannot leave marks a redundant row and stays basic
        // at zero; it is never allowed to re-enter.
        for r in 0..self.m {
            if self.basis[r] < self.art {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.art {
                let a = self.at(r, j).abs();
                if a > 1e-9 && best.is_none_or(|(_, b)| a > b) {
                    best = Some((j, a));
                }
            }
            if let Some((j, _)) = best {
                self.pivot(r, j);
            }
        }
        Ok(())
    }

    fn phase_two(&mut self, objective: &[f64]) -> Result<()> {
        self.cost.iter_mut().for_each(|c| *c = 0.0);
        self.cost[..self.n].copy_from_slice(objective);
        self.price();
        self.iterate(self.art)
    }

    fn finish(self, lp: &LinearProgram) -> Result<LpSolution> {
        let m = self.m;
        let mut x_full = vec![0.0; self.cols];
        for i in 0..m {
            x_full[self.basis[i]] = self.at(i, self.cols);
        }
        // Polish: solve B x_B = b against the untouched matrix.
        let mut bmat = vec![0.0; m * m];
        for i in 0..m {
            for (k, &j) in self.basis.iter().enumerate() {
                bmat[i * m + k] = self.original[i * self.cols + j];
            }
        }
        let mut xb = self.rhs.clone();
        if solve_dense(&mut bmat.clone(), &mut xb) {
            for (k, &j) in self.basis.iter().enumerate() {
                x_full[j] = xb[k];
            }
        }
        let mut x: Vec<f64> = x_full[..self.n].to_vec();
        for v in x.iter_mut() {
            if *v < 0.0 && *v > -self.opts.tol.max(1e-9) {
                *v = 0.0;
            }
        }

        // Duals: B^T y = c_B.
        let mut bt = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..m {
                bt[k * m + i] = bmat[i * m + k];
            }
        }
        let mut y: Vec<f64> = self.basis.iter().map(|&j| self.cost[j]).collect();
        if !solve_dense(&mut bt, &mut y) {
            return Err(Error::Numerical("singular basis".into()));
        }
        let dual_objective: f64 = self.rhs.iter().zip(&y).map(|(b, yi)| b * yi).sum();
        let mut max_reduced_cost = 0.0f64;
        for j in 0..self.art {
            let col_dot: f64 = (0..m).map(|i| self.original[i * self.cols + j] * y[i]).sum();
            max_reduced_cost = max_reduced_cost.max(self.cost[j] - col_dot);
        }
        let duals: Vec<f64> = y.iter().zip(&self.sign).map(|(yi, s)| yi * s).collect();
        let objective: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        let max_residual = lp.max_violation(&x);
        Ok(LpSolution {
            x,
            objective,
            duals,
            dual_objective,
            duality_gap: (objective - dual_objective).abs(),
            max_residual,
            max_reduced_cost,
            iterations: self.iterations,
        })
    }
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
/// `a` is `n x n` row-major. Returns `false` if the matrix is singular.
pub(crate) fn solve_dense(a: &mut [f64], b: &mut [f64]) -> bool {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    for col in 0..n {
        let (piv, max) =
            (col..n).map(|r| (r, a[r * n + col].abs())).fold((col, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if max < 1e-14 {
            return false;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in col + 1..n {
            s -= a[col * n + k] * b[k];
        }
        b[col] = s / a[col * n + col];
    }
    true
}
