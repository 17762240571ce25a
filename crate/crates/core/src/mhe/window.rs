//! Sliding window over a chain of equally sized states with unary and
//! consecutive-pair factors, hard linear constraints, and a quadratic arrival cost.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::qp::{CscMatrix, QpProblem};
use crate::scalar::{lit, positive, Real};

/// Weighted linear residual `A x_k (+ B x_{k+1}) - y` with diagonal weight (inverse variances).
#[derive(Clone, Debug, PartialEq)]
pub struct Residual<T: Real> {
    pub current: DMatrix<T>,
    pub next: Option<DMatrix<T>>,
    pub target: DVector<T>,
    pub weight: DVector<T>,
}

impl<T: Real> Residual<T> {
    pub fn unary(current: DMatrix<T>, target: DVector<T>, weight: DVector<T>) -> Self {
        Self {
            current,
            next: None,
            target,
            weight,
        }
    }

    pub fn pair(current: DMatrix<T>, next: DMatrix<T>, target: DVector<T>, weight: DVector<T>) -> Self {
        Self {
            current,
            next: Some(next),
            target,
            weight,
        }
    }

    pub fn rows(&self) -> usize {
        self.target.len()
    }

    fn check(&self, dim: usize) -> Result<()> {
        let r = self.rows();
        let ok = self.current.nrows() == r
            && self.current.ncols() == dim
            && self.weight.len() == r
            && self.next.as_ref().is_none_or(|b| b.nrows() == r && b.ncols() == dim)
            && self.weight.iter().all(|w| *w >= T::zero() && w.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Assembly("residual dimensions or weights are inconsistent".into()))
        }
    }

    /// Quadratic form `½ rᵀ W r` over the stacked `[x_k; x_{k+1}]` (or just `x_k`):
    /// returns Hessian and gradient.
    fn quadratic(&self) -> (DMatrix<T>, DVector<T>) {
        let a = match &self.next {
            Some(b) => {
                let mut ab = DMatrix::zeros(self.rows(), self.current.ncols() * 2);
                ab.columns_mut(0, self.current.ncols()).copy_from(&self.current);
                ab.columns_mut(self.current.ncols(), b.ncols()).copy_from(b);
                ab
            }
            None => self.current.clone(),
        };
        let mut wa = a.clone();
        for (i, mut row) in wa.row_iter_mut().enumerate() {
            row *= self.weight[i];
        }
        let h = a.tr_mul(&wa);
        let g = -wa.tr_mul(&self.target);
        (h, g)
    }
}

/// Hard linear rows `A x_k = b` or `A x_k ≤ b` on one tick.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRows<T: Real> {
    pub matrix: DMatrix<T>,
    pub rhs: DVector<T>,
}

impl<T: Real> LinearRows<T> {
    pub fn empty(dim: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(0, dim),
            rhs: DVector::zeros(0),
        }
    }

    pub fn rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn push(&mut self, row: &[T], rhs: T) {
        let r = self.rows();
        let dim = self.matrix.ncols();
        let mut m = self.matrix.clone().resize_vertically(r + 1, T::zero());
        for c in 0..dim {
            m[(r, c)] = row[c];
        }
        self.matrix = m;
        self.rhs = self.rhs.clone().push(rhs);
    }
}

/// Everything attached to one tick.
#[derive(Clone, Debug, PartialEq)]
pub struct TickFactors<T: Real> {
    pub unary: Vec<Residual<T>>,
    pub equality: LinearRows<T>,
    pub inequality: LinearRows<T>,
    /// Residuals coupling this tick with the next one.
    pub to_next: Vec<Residual<T>>,
}

impl<T: Real> TickFactors<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            unary: Vec::new(),
            equality: LinearRows::empty(dim),
            inequality: LinearRows::empty(dim),
            to_next: Vec::new(),
        }
    }
}

/// Quadratic prior `½ (x - mean)ᵀ Λ (x - mean)` on the window's first state.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalCost<T: Real> {
    pub mean: DVector<T>,
    pub information: DMatrix<T>,
    /// Tick index the prior applies to.
    pub anchor: usize,
}

impl<T: Real> ArrivalCost<T> {
    pub fn new(mean: DVector<T>, information: DMatrix<T>, anchor: usize) -> Self {
        Self {
            mean,
            information,
            anchor,
        }
    }

    pub fn uninformative(dim: usize, anchor: usize) -> Self {
        Self::new(DVector::zeros(dim), DMatrix::zeros(dim, dim), anchor)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MarginalizationReport {
    /// The elimination block was singular and had to be regularized.
    pub regularized: bool,
}

/// QP for the current window, in Jacobi-scaled variables `z` with `x = scaling ∘ z`.
#[derive(Clone, Debug)]
pub struct WindowQp<T: Real> {
    pub problem: QpProblem<T>,
    pub scaling: DVector<T>,
    pub ticks: usize,
    /// Tick index of the first block.
    pub first: usize,
}

impl<T: Real> WindowQp<T> {
    /// Maps a scaled solution back to stacked states.
    pub fn unscale(&self, z: &DVector<T>) -> DVector<T> {
        z.component_mul(&self.scaling)
    }

    pub fn scale(&self, x: &DVector<T>) -> DVector<T> {
        x.component_div(&self.scaling)
    }
}

const REGULARIZATION: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct ChainWindow<T: Real> {
    dim: usize,
    capacity: usize,
    ticks: VecDeque<(usize, TickFactors<T>)>,
    pub arrival: ArrivalCost<T>,
    next_index: usize,
}

impl<T: Real> ChainWindow<T> {
    pub fn new(dim: usize, capacity: usize, prior: ArrivalCost<T>) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Contract("window size must be at least 1".into()));
        }
        if prior.mean.len() != dim || prior.information.shape() != (dim, dim) {
            return Err(Error::DimensionMismatch {
                context: "arrival cost",
                expected: dim,
                got: prior.mean.len(),
            });
        }
        let next_index = prior.anchor;
        Ok(Self {
            dim,
            capacity,
            ticks: VecDeque::with_capacity(capacity + 1),
            arrival: prior,
            next_index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn first_index(&self) -> Option<usize> {
        self.ticks.front().map(|t| t.0)
    }

    pub fn last_index(&self) -> Option<usize> {
        self.ticks.back().map(|t| t.0)
    }

    pub fn tick(&self, index: usize) -> Option<&TickFactors<T>> {
        let first = self.first_index()?;
        self.ticks.get(index.checked_sub(first)?).map(|t| &t.1)
    }

    /// Appends a tick; `link` couples the previous newest tick to it. Returns the tick index.
    pub fn push(&mut self, factors: TickFactors<T>, link: Vec<Residual<T>>) -> Result<usize> {
        for r in factors.unary.iter().chain(&link) {
            r.check(self.dim)?;
        }
        if factors.equality.matrix.ncols() != self.dim || factors.inequality.matrix.ncols() != self.dim {
            return Err(Error::Assembly("constraint rows have the wrong width".into()));
        }
        match self.ticks.back_mut() {
            Some((_, prev)) => prev.to_next.extend(link),
            None if !link.is_empty() => {
                return Err(Error::Assembly("first tick cannot carry a link".into()));
            }
            None => {}
        }
        let index = self.next_index;
        self.next_index += 1;
        self.ticks.push_back((index, factors));
        Ok(index)
    }

    /// Attaches a pair residual between ticks `index` and `index + 1`; false if either is
    /// no longer (or not yet) in the window.
    pub fn add_pair(&mut self, index: usize, residual: Residual<T>) -> Result<bool> {
        residual.check(self.dim)?;
        let Some(first) = self.first_index() else {
            return Ok(false);
        };
        if index < first || index + 1 > self.last_index().unwrap() {
            return Ok(false);
        }
        self.ticks[index - first].1.to_next.push(residual);
        Ok(true)
    }

    /// Whether pushing has overfilled the window.
    pub fn needs_marginalization(&self) -> bool {
        self.ticks.len() > self.capacity
    }

    /// Eliminates the oldest tick and folds its factors into the arrival cost of the next.
    ///
    /// The oldest state is minimized out subject to its equality rows (inequalities are
    /// ignored), i.e. a Schur complement of the equality-constrained KKT system.
    pub fn marginalize_oldest(&mut self) -> Result<MarginalizationReport> {
        if self.ticks.len() < 2 {
            return Err(Error::Contract("marginalization needs at least two ticks".into()));
        }
        let d = self.dim;
        let (idx, old) = self.ticks.pop_front().unwrap();
        let mut h = DMatrix::zeros(2 * d, 2 * d);
        let mut g = DVector::zeros(2 * d);
        {
            let mut hoo = h.view_mut((0, 0), (d, d));
            hoo += &self.arrival.information;
        }
        {
            let lg = -(&self.arrival.information * &self.arrival.mean);
            let mut go = g.rows_mut(0, d);
            go += lg;
        }
        for r in &old.unary {
            let (rh, rg) = r.quadratic();
            let mut hoo = h.view_mut((0, 0), (d, d));
            hoo += rh;
            let mut go = g.rows_mut(0, d);
            go += rg;
        }
        for r in &old.to_next {
            let (rh, rg) = r.quadratic();
            h += rh;
            g += rg;
        }
        let ne = old.equality.rows();
        let hoo = h.view((0, 0), (d, d)).into_owned();
        let hon = h.view((0, d), (d, d)).into_owned();
        let hnn = h.view((d, d), (d, d)).into_owned();
        let mut k = DMatrix::zeros(d + ne, d + ne);
        k.view_mut((0, 0), (d, d)).copy_from(&hoo);
        k.view_mut((d, 0), (ne, d)).copy_from(&old.equality.matrix);
        k.view_mut((0, d), (d, ne)).copy_from(&old.equality.matrix.transpose());
        let mut bm = DMatrix::zeros(d + ne, d);
        bm.view_mut((0, 0), (d, d)).copy_from(&hon);
        let mut rhs = DVector::zeros(d + ne);
        rhs.rows_mut(0, d).copy_from(&g.rows(0, d));
        rhs.rows_mut(d, ne).copy_from(&(-&old.equality.rhs));

        let mut report = MarginalizationReport::default();
        let sv = k.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let smin = sv.min();
        if !positive(smin - smax * lit::<T>(1e-13)) || smax == T::zero() {
            report.regularized = true;
            let eps = lit::<T>(REGULARIZATION);
            for i in 0..d {
                k[(i, i)] += eps;
            }
            for i in d..d + ne {
                k[(i, i)] -= eps;
            }
        }
        let lu = k.lu();
        let kinv_b = lu
            .solve(&bm)
            .ok_or_else(|| Error::Assembly("marginalization block is singular".into()))?;
        let kinv_r = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Assembly("marginalization block is singular".into()))?;
        let mut info = hnn - bm.tr_mul(&kinv_b);
        info = (&info + info.transpose()) * lit::<T>(0.5);
        let lin = g.rows(d, d).into_owned() - bm.tr_mul(&kinv_r);
        let mean = solve_psd(&info, &(-lin));
        self.arrival = ArrivalCost::new(mean, info, idx + 1);
        Ok(report)
    }

    /// Stacks the window into a QP over all states currently held.
    pub fn assemble(&self) -> Result<WindowQp<T>> {
        let d = self.dim;
        let l = self.ticks.len();
        if l == 0 {
            return Err(Error::Assembly("empty window".into()));
        }
        let n = d * l;
        let mut blocks_diag: Vec<DMatrix<T>> = vec![DMatrix::zeros(d, d); l];
        let mut blocks_off: Vec<DMatrix<T>> = vec![DMatrix::zeros(d, d); l.saturating_sub(1)];
        let mut grad = DVector::zeros(n);
        blocks_diag[0] += &self.arrival.information;
        {
            let mut g0 = grad.rows_mut(0, d);
            g0 -= &self.arrival.information * &self.arrival.mean;
        }
        for (k, (_, f)) in self.ticks.iter().enumerate() {
            for r in &f.unary {
                let (rh, rg) = r.quadratic();
                blocks_diag[k] += rh;
                let mut gk = grad.rows_mut(k * d, d);
                gk += rg;
            }
            if k + 1 < l {
                for r in &f.to_next {
                    let (rh, rg) = r.quadratic();
                    blocks_diag[k] += rh.view((0, 0), (d, d));
                    blocks_diag[k + 1] += rh.view((d, d), (d, d));
                    blocks_off[k] += rh.view((0, d), (d, d));
                    let mut gk = grad.rows_mut(k * d, 2 * d);
                    gk += rg;
                }
            }
        }
        let mut scaling = DVector::from_element(n, T::one());
        for (k, b) in blocks_diag.iter().enumerate() {
            for i in 0..d {
                let hii = b[(i, i)];
                if hii > T::zero() {
                    scaling[k * d + i] = T::one() / hii.sqrt();
                }
            }
        }
        let mut trip = Vec::new();
        let push_block = |trip: &mut Vec<(usize, usize, T)>, b: &DMatrix<T>, r0: usize, c0: usize, sym: bool| {
            for c in 0..d {
                for r in 0..d {
                    let v = b[(r, c)];
                    if v != T::zero() {
                        let s = v * scaling[r0 + r] * scaling[c0 + c];
                        trip.push((r0 + r, c0 + c, s));
                        if sym {
                            trip.push((c0 + c, r0 + r, s));
                        }
                    }
                }
            }
        };
        for (k, b) in blocks_diag.iter().enumerate() {
            let bs = (b + b.transpose()) * lit::<T>(0.5);
            push_block(&mut trip, &bs, k * d, k * d, false);
        }
        for (k, b) in blocks_off.iter().enumerate() {
            push_block(&mut trip, b, k * d, (k + 1) * d, true);
        }
        let hessian = CscMatrix::from_triplets(n, n, &trip);
        let gradient = grad.component_mul(&scaling);

        let stack = |pick: &dyn Fn(&TickFactors<T>) -> &LinearRows<T>| {
            let rows: usize = self.ticks.iter().map(|(_, f)| pick(f).rows()).sum();
            let mut trip = Vec::new();
            let mut rhs = DVector::zeros(rows);
            let mut r0 = 0;
            for (k, (_, f)) in self.ticks.iter().enumerate() {
                let lr = pick(f);
                for r in 0..lr.rows() {
                    for c in 0..d {
                        let v = lr.matrix[(r, c)];
                        if v != T::zero() {
                            trip.push((r0 + r, k * d + c, v * scaling[k * d + c]));
                        }
                    }
                    rhs[r0 + r] = lr.rhs[r];
                }
                r0 += lr.rows();
            }
            (CscMatrix::from_triplets(rows, n, &trip), rhs)
        };
        let (eq_matrix, eq_rhs) = stack(&|f| &f.equality);
        let (ineq_matrix, ineq_rhs) = stack(&|f| &f.inequality);
        Ok(WindowQp {
            problem: QpProblem::new(hessian, gradient, eq_matrix, eq_rhs, ineq_matrix, ineq_rhs),
            scaling,
            ticks: l,
            first: self.first_index().unwrap(),
        })
    }
}

/// Solves `A x = b` for symmetric PSD `A`, falling back to the pseudo-inverse.
fn solve_psd<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> DVector<T> {
    if let Some(ch) = a.clone().cholesky() {
        return ch.solve(b);
    }
    let eig = a.clone().symmetric_eigen();
    let tol = eig.eigenvalues.amax() * lit::<T>(1e-12);
    let qtb = eig.eigenvectors.tr_mul(b);
    let scaled = DVector::from_fn(qtb.len(), |i, _| {
        let l = eig.eigenvalues[i];
        if l > tol {
            qtb[i] / l
        } else {
            T::zero()
        }
    });
    &eig.eigenvectors * scaled
}
