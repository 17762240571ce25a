//! Convex quadratic programs
//!
//! ```text
//! minimize    ½ xᵀ H x + cᵀ x
//! subject to  A_eq x = b_eq,   A_in x ≤ b_in
//! ```
//!
//! solved by ADMM with Ruiz equilibration, adaptive step size, solution polishing
//! and a presolve that removes variables pinned by single-entry equality rows.
//! Multipliers satisfy `Hx + c + A_eqᵀλ + A_inᵀμ = 0` with `μ ≥ 0`.

mod admm;
pub mod csc;
pub mod ldl;

use std::io::Write;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use admm::{AdmmInput, AdmmStatus, BoxQp, INF};
pub use csc::CscMatrix;
pub use ldl::{LdlError, LdlFactor};

#[derive(Clone, Debug)]
pub struct QpProblem<T> {
    /// Full symmetric Hessian (both triangles stored).
    pub hessian: CscMatrix<T>,
    pub gradient: DVector<T>,
    pub eq_matrix: CscMatrix<T>,
    pub eq_rhs: DVector<T>,
    pub ineq_matrix: CscMatrix<T>,
    pub ineq_rhs: DVector<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSettings<T> {
    pub eps_abs: T,
    pub eps_rel: T,
    pub eps_prim_inf: T,
    pub max_iter: usize,
    pub rho: T,
    pub sigma: T,
    pub alpha: T,
    pub adaptive_rho: bool,
    pub adaptive_rho_interval: usize,
    pub adaptive_rho_tolerance: T,
    pub scaling_iters: usize,
    pub polish: bool,
    pub polish_delta: T,
    pub polish_refine_iter: usize,
    /// Skip the positive-semidefiniteness check of the Hessian.
    pub assume_convex: bool,
}

impl<T: Real> Default for QpSettings<T> {
    fn default() -> Self {
        Self {
            eps_abs: lit(1e-6),
            eps_rel: lit(1e-6),
            eps_prim_inf: lit(1e-5),
            max_iter: 4000,
            rho: lit(0.1),
            sigma: lit(1e-6),
            alpha: lit(1.6),
            adaptive_rho: true,
            adaptive_rho_interval: 25,
            adaptive_rho_tolerance: lit(5.0),
            scaling_iters: 10,
            polish: true,
            polish_delta: lit(1e-9),
            polish_refine_iter: 5,
            assume_convex: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    PrimalInfeasible,
}

#[derive(Clone, Debug)]
pub struct QpSolution<T> {
    pub x: DVector<T>,
    pub eq_duals: DVector<T>,
    pub ineq_duals: DVector<T>,
    pub status: QpStatus,
    pub iterations: usize,
    pub polished: bool,
    pub residuals: KktResiduals<T>,
}

impl<T: Real> QpSolution<T> {
    pub fn is_solved(&self) -> bool {
        self.status == QpStatus::Solved
    }
}

/// Absolute violations of the optimality conditions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals<T> {
    pub stationarity: T,
    pub primal: T,
    pub dual_sign: T,
    pub complementarity: T,
}

impl<T: Real> KktResiduals<T> {
    pub fn max(&self) -> T {
        self.stationarity
            .max(self.primal)
            .max(self.dual_sign)
            .max(self.complementarity)
    }

    pub fn within(&self, tol: T) -> bool {
        self.max() <= tol
    }
}

impl<T: Real> QpProblem<T> {
    pub fn new(
        hessian: CscMatrix<T>,
        gradient: DVector<T>,
        eq_matrix: CscMatrix<T>,
        eq_rhs: DVector<T>,
        ineq_matrix: CscMatrix<T>,
        ineq_rhs: DVector<T>,
    ) -> Self {
        Self {
            hessian,
            gradient,
            eq_matrix,
            eq_rhs,
            ineq_matrix,
            ineq_rhs,
        }
    }

    /// Unconstrained problem.
    pub fn unconstrained(hessian: CscMatrix<T>, gradient: DVector<T>) -> Self {
        let n = gradient.len();
        Self::new(
            hessian,
            gradient,
            CscMatrix::zeros(0, n),
            DVector::zeros(0),
            CscMatrix::zeros(0, n),
            DVector::zeros(0),
        )
    }

    pub fn n_vars(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, x: &DVector<T>) -> T {
        self.hessian.mul_vec(x).dot(x) * lit(0.5) + self.gradient.dot(x)
    }

    /// Checks dimensions, finiteness and symmetry; optionally positive semidefiniteness.
    pub fn validate(&self, check_convex: bool) -> Result<()> {
        let n = self.n_vars();
        let dim = |context, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { context, expected, got })
            }
        };
        dim("hessian rows", n, self.hessian.nrows())?;
        dim("hessian cols", n, self.hessian.ncols())?;
        dim("eq matrix cols", n, self.eq_matrix.ncols())?;
        dim("eq rhs", self.eq_matrix.nrows(), self.eq_rhs.len())?;
        dim("ineq matrix cols", n, self.ineq_matrix.ncols())?;
        dim("ineq rhs", self.ineq_matrix.nrows(), self.ineq_rhs.len())?;
        let finite = self.hessian.values().iter().all(|v| v.is_finite())
            && self.gradient.iter().all(|v| v.is_finite())
            && self.eq_matrix.values().iter().all(|v| v.is_finite())
            && self.eq_rhs.iter().all(|v| v.is_finite())
            && self.ineq_matrix.values().iter().all(|v| v.is_finite())
            && self.ineq_rhs.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidProblem("non-finite problem data".into()));
        }
        let scale = T::one().max(self.hessian.max_abs());
        let sym_tol = scale * lit(1e-10);
        for (r, c, v) in self.hessian.iter() {
            if (v - self.hessian.get(c, r)).abs() > sym_tol {
                return Err(Error::InvalidProblem(format!("hessian not symmetric at ({r}, {c})")));
            }
        }
        if check_convex && n > 0 {
            let eps = scale * lit(1e-8);
            let mut trip: Vec<_> = self.hessian.iter().filter(|(r, c, _)| r <= c).collect();
            trip.extend((0..n).map(|j| (j, j, eps)));
            let upper = CscMatrix::from_triplets(n, n, &trip);
            let ok = match LdlFactor::new(&upper) {
                Ok(f) => f.positive_pivots() == n,
                Err(_) => false,
            };
            if !ok {
                return Err(Error::InvalidProblem("hessian is not positive semidefinite".into()));
            }
        }
        Ok(())
    }

    pub fn kkt_residuals(&self, x: &DVector<T>, lambda: &DVector<T>, mu: &DVector<T>) -> KktResiduals<T> {
        let mut grad = self.hessian.mul_vec(x) + &self.gradient;
        grad += self.eq_matrix.tr_mul_vec(lambda);
        grad += self.ineq_matrix.tr_mul_vec(mu);
        let eq = self.eq_matrix.mul_vec(x) - &self.eq_rhs;
        let slack = &self.ineq_rhs - self.ineq_matrix.mul_vec(x);
        let mut primal = eq.amax();
        let mut dual_sign = T::zero();
        let mut comp = T::zero();
        for i in 0..slack.len() {
            primal = primal.max(-slack[i]);
            dual_sign = dual_sign.max(-mu[i]);
            comp = comp.max((mu[i] * slack[i]).abs());
        }
        KktResiduals {
            stationarity: grad.amax(),
            primal,
            dual_sign,
            complementarity: comp,
        }
    }

    /// Writes the problem as a sequence of coordinate-format sections.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut section = |name: &str, m: &CscMatrix<T>| -> std::io::Result<()> {
            writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
            writeln!(w, "% {name}")?;
            writeln!(w, "{} {} {}", m.nrows(), m.ncols(), m.nnz())?;
            for (r, c, v) in m.iter() {
                writeln!(w, "{} {} {:.17e}", r + 1, c + 1, crate::scalar::to_f64(v))?;
            }
            Ok(())
        };
        let col = |v: &DVector<T>| {
            let trip: Vec<_> = v.iter().enumerate().map(|(i, x)| (i, 0, *x)).collect();
            CscMatrix::from_triplets(v.len(), 1, &trip)
        };
        section("hessian", &self.hessian)?;
        section("gradient", &col(&self.gradient))?;
        section("eq_matrix", &self.eq_matrix)?;
        section("eq_rhs", &col(&self.eq_rhs))?;
        section("ineq_matrix", &self.ineq_matrix)?;
        section("ineq_rhs", &col(&self.ineq_rhs))
    }
}

/// Starting point for a solve, in the original variable space.
#[derive(Clone, Debug)]
pub struct WarmStart<T> {
    pub x: DVector<T>,
    pub eq_duals: DVector<T>,
    pub ineq_duals: DVector<T>,
}

/// Reusable solver carrying step-size and warm-start state between solves.
#[derive(Clone, Debug)]
pub struct QpSolver<T> {
    pub settings: QpSettings<T>,
    rho: T,
}

impl<T: Real> Default for QpSolver<T> {
    fn default() -> Self {
        Self::new(QpSettings::default())
    }
}

struct Presolve<T> {
    free: Vec<usize>,
    fixed: Vec<Option<T>>,
    /// Equality rows that pin a variable, with the pinned variable and coefficient.
    pin_rows: Vec<(usize, usize, T)>,
    kept_eq: Vec<usize>,
}

impl<T: Real> QpSolver<T> {
    pub fn new(settings: QpSettings<T>) -> Self {
        let rho = settings.rho;
        Self { settings, rho }
    }

    pub fn solve(&mut self, problem: &QpProblem<T>) -> Result<QpSolution<T>> {
        self.solve_warm(problem, None)
    }

    pub fn solve_warm(&mut self, problem: &QpProblem<T>, warm: Option<&WarmStart<T>>) -> Result<QpSolution<T>> {
        problem.validate(!self.settings.assume_convex)?;
        let n = problem.n_vars();
        let pre = presolve(problem);
        let mut x_full: DVector<T> = DVector::zeros(n);
        for (j, f) in pre.fixed.iter().enumerate() {
            if let Some(v) = f {
                x_full[j] = *v;
            }
        }

        let nf = pre.free.len();
        let mut col_map = vec![usize::MAX; n];
        for (k, &j) in pre.free.iter().enumerate() {
            col_map[j] = k;
        }
        let shift_rhs = |m: &CscMatrix<T>, rhs: &DVector<T>, rows: &[usize]| {
            let fixed_part = m.mul_vec(&x_full);
            DVector::from_fn(rows.len(), |k, _| rhs[rows[k]] - fixed_part[rows[k]])
        };
        let restrict = |m: &CscMatrix<T>, rows: &[usize]| {
            let mut row_map = vec![usize::MAX; m.nrows()];
            for (k, &r) in rows.iter().enumerate() {
                row_map[r] = k;
            }
            let trip: Vec<_> = m
                .iter()
                .filter(|(r, c, _)| row_map[*r] != usize::MAX && col_map[*c] != usize::MAX)
                .map(|(r, c, v)| (row_map[r], col_map[c], v))
                .collect();
            CscMatrix::from_triplets(rows.len(), nf, &trip)
        };
        let in_rows: Vec<usize> = (0..problem.ineq_matrix.nrows()).collect();
        let a_eq = restrict(&problem.eq_matrix, &pre.kept_eq);
        let b_eq = shift_rhs(&problem.eq_matrix, &problem.eq_rhs, &pre.kept_eq);
        let a_in = restrict(&problem.ineq_matrix, &in_rows);
        let b_in = shift_rhs(&problem.ineq_matrix, &problem.ineq_rhs, &in_rows);
        let h_ff = {
            let trip: Vec<_> = problem
                .hessian
                .iter()
                .filter(|(r, c, _)| col_map[*r] != usize::MAX && col_map[*c] != usize::MAX)
                .map(|(r, c, v)| (col_map[r], col_map[c], v))
                .collect();
            CscMatrix::from_triplets(nf, nf, &trip)
        };
        let hx_fixed = problem.hessian.mul_vec(&x_full);
        let c_f = DVector::from_fn(nf, |k, _| problem.gradient[pre.free[k]] + hx_fixed[pre.free[k]]);

        let reduced = QpProblem::new(h_ff, c_f, a_eq, b_eq, a_in, b_in);
        let x_full = x_full;
        let n_eq = reduced.eq_rhs.len();
        let n_in = reduced.ineq_rhs.len();

        // Rows left without free variables must already hold.
        let tol = self.settings.eps_abs;
        let mut trivially_infeasible = false;
        let eq_counts = row_counts(&reduced.eq_matrix);
        for i in 0..n_eq {
            if eq_counts[i] == 0 && reduced.eq_rhs[i].abs() > tol {
                trivially_infeasible = true;
            }
        }
        let in_counts = row_counts(&reduced.ineq_matrix);
        for i in 0..n_in {
            if in_counts[i] == 0 && reduced.ineq_rhs[i] < -tol {
                trivially_infeasible = true;
            }
        }

        let big = lit::<T>(INF);
        let box_qp = BoxQp {
            p: reduced.hessian.clone(),
            q: reduced.gradient.clone(),
            a: reduced.eq_matrix.vstack(&reduced.ineq_matrix),
            l: DVector::from_fn(n_eq + n_in, |i, _| if i < n_eq { reduced.eq_rhs[i] } else { -big }),
            u: DVector::from_fn(n_eq + n_in, |i, _| {
                if i < n_eq {
                    reduced.eq_rhs[i]
                } else {
                    reduced.ineq_rhs[i - n_eq]
                }
            }),
        };

        let (wx, wy) = match warm {
            Some(w) if w.x.len() == n && w.eq_duals.len() == problem.eq_rhs.len() && w.ineq_duals.len() == n_in => {
                let x = DVector::from_fn(nf, |k, _| w.x[pre.free[k]]);
                let y = DVector::from_fn(n_eq + n_in, |i, _| {
                    if i < n_eq {
                        w.eq_duals[pre.kept_eq[i]]
                    } else {
                        w.ineq_duals[i - n_eq]
                    }
                });
                (Some(x), Some(y))
            }
            _ => (None, None),
        };

        let recover = |xr: &DVector<T>, yr: &DVector<T>| {
            let mut x = x_full.clone();
            for (k, &j) in pre.free.iter().enumerate() {
                x[j] = xr[k];
            }
            let mu = yr.rows(n_eq, n_in).into_owned();
            let mut lambda = DVector::zeros(problem.eq_rhs.len());
            for (k, &r) in pre.kept_eq.iter().enumerate() {
                lambda[r] = yr[k];
            }
            // Multipliers of pinning rows close stationarity for the pinned variables.
            if !pre.pin_rows.is_empty() {
                let mut grad = problem.hessian.mul_vec(&x) + &problem.gradient;
                grad += problem.eq_matrix.tr_mul_vec(&lambda);
                grad += problem.ineq_matrix.tr_mul_vec(&mu);
                let mut first_pin = vec![true; n];
                for &(row, var, coef) in &pre.pin_rows {
                    if first_pin[var] {
                        lambda[row] = -grad[var] / coef;
                        first_pin[var] = false;
                    }
                }
            }
            (x, lambda, mu)
        };
        let accept = |xr: &DVector<T>, yr: &DVector<T>| {
            let (x, l, m) = recover(xr, yr);
            problem.kkt_residuals(&x, &l, &m).within(tol)
        };

        let outcome = if trivially_infeasible {
            None
        } else if nf == 0 {
            Some(admm::AdmmOutcome {
                x: DVector::zeros(0),
                y: DVector::zeros(n_eq + n_in),
                status: AdmmStatus::Accepted,
                iterations: 0,
                rho: self.rho,
                polished: false,
            })
        } else {
            let out = admm::solve(
                &box_qp,
                &self.settings,
                AdmmInput {
                    x: wx,
                    y: wy,
                    rho: self.rho,
                    accept: &accept,
                },
            )
            .map_err(|e| Error::InvalidProblem(format!("KKT factorization failed: {e}")))?;
            self.rho = out.rho;
            Some(out)
        };

        let (xr, yr, mut status, iterations, polished) = match outcome {
            None => (
                DVector::zeros(nf),
                DVector::zeros(n_eq + n_in),
                QpStatus::PrimalInfeasible,
                0,
                false,
            ),
            Some(o) => {
                let st = match o.status {
                    AdmmStatus::Accepted => QpStatus::Solved,
                    AdmmStatus::Infeasible => QpStatus::PrimalInfeasible,
                    AdmmStatus::MaxIter => QpStatus::MaxIterations,
                };
                (o.x, o.y, st, o.iterations, o.polished)
            }
        };

        let (x_full, lambda, mu) = recover(&xr, &yr);
        let residuals = problem.kkt_residuals(&x_full, &lambda, &mu);
        if status == QpStatus::Solved && !residuals.within(tol) {
            status = QpStatus::MaxIterations;
        }
        Ok(QpSolution {
            x: x_full,
            eq_duals: lambda,
            ineq_duals: mu,
            status,
            iterations,
            polished,
            residuals,
        })
    }
}

fn row_counts<T: Real>(m: &CscMatrix<T>) -> Vec<usize> {
    let mut c = vec![0; m.nrows()];
    for (r, _, _) in m.iter() {
        c[r] += 1;
    }
    c
}

fn presolve<T: Real>(problem: &QpProblem<T>) -> Presolve<T> {
    let n = problem.n_vars();
    let m = problem.eq_matrix.nrows();
    let mut entries: Vec<Vec<(usize, T)>> = vec![Vec::new(); m];
    for (r, c, v) in problem.eq_matrix.iter() {
        if v != T::zero() {
            entries[r].push((c, v));
        }
    }
    let mut fixed: Vec<Option<T>> = vec![None; n];
    let mut pin_rows = Vec::new();
    let mut kept_eq = Vec::new();
    for (r, e) in entries.iter().enumerate() {
        if e.len() == 1 {
            let (c, v) = e[0];
            if fixed[c].is_none() {
                fixed[c] = Some(problem.eq_rhs[r] / v);
                pin_rows.push((r, c, v));
                continue;
            }
        }
        kept_eq.push(r);
    }
    let free = (0..n).filter(|&j| fixed[j].is_none()).collect();
    Presolve {
        free,
        fixed,
        pin_rows,
        kept_eq,
    }
}

/// Solves with default settings.
pub fn solve_qp<T: Real>(problem: &QpProblem<T>) -> Result<QpSolution<T>> {
    QpSolver::default().solve(problem)
}
