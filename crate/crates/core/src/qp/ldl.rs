//! Sparse LDLᵀ factorization of quasi-definite matrices with a reverse
//! Cuthill-McKee fill-reducing ordering.

use std::collections::VecDeque;

use nalgebra::DVector;

use super::csc::CscMatrix;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LdlError {
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("zero pivot at column {0}")]
    ZeroPivot(usize),
    #[error("sparsity pattern changed between factorizations")]
    PatternChanged,
}

/// Reverse Cuthill-McKee ordering of the symmetric pattern given by the upper
/// triangle. Returns `perm` with `perm[new] = old`.
pub fn rcm_ordering<T: Real>(upper: &CscMatrix<T>) -> Vec<usize> {
    let n = upper.ncols();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, c, _) in upper.iter() {
        if r != c {
            adj[r].push(c);
            adj[c].push(r);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.sort_by_key(|&i| (degree[i], i));
    for &seed in &nodes {
        if visited[seed] {
            continue;
        }
        let start = peripheral_node(seed, &adj, &degree);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(start: usize, adj: &[Vec<usize>]) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let l = level[v].unwrap();
        for &w in &adj[v] {
            if level[w].is_none() {
                level[w] = Some(l + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

fn peripheral_node(seed: usize, adj: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut node = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let level = bfs_levels(node, adj);
        let far = level.iter().filter_map(|l| *l).max().unwrap_or(0);
        if far <= ecc && node != seed {
            break;
        }
        ecc = far;
        let cand = (0..adj.len())
            .filter(|&i| level[i] == Some(far))
            .min_by_key(|&i| (degree[i], i))
            .unwrap_or(node);
        if cand == node {
            break;
        }
        node = cand;
    }
    node
}

/// `L D Lᵀ = P A Pᵀ` with unit lower-triangular `L`.
#[derive(Clone, Debug)]
pub struct LdlFactor<T> {
    n: usize,
    perm: Vec<usize>,
    iperm: Vec<usize>,
    etree: Vec<Option<usize>>,
    lnz: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<T>,
    d: Vec<T>,
    dinv: Vec<T>,
    pattern: (Vec<usize>, Vec<usize>),
}

impl<T: Real> LdlFactor<T> {
    /// Factorizes the symmetric matrix whose upper triangle (with diagonal) is given.
    pub fn new(upper: &CscMatrix<T>) -> Result<Self, LdlError> {
        if upper.nrows() != upper.ncols() {
            return Err(LdlError::NotSquare(upper.nrows(), upper.ncols()));
        }
        let perm = rcm_ordering(upper);
        Self::with_ordering(upper, perm)
    }

    pub fn with_ordering(upper: &CscMatrix<T>, perm: Vec<usize>) -> Result<Self, LdlError> {
        let n = upper.ncols();
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let a = permute_upper(upper, &iperm);
        let (etree, lnz) = elimination_tree(&a);
        let mut lp = vec![0; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        let total = lp[n];
        let mut f = Self {
            n,
            perm,
            iperm,
            etree,
            lnz,
            lp,
            li: vec![0; total],
            lx: vec![T::zero(); total],
            d: vec![T::zero(); n],
            dinv: vec![T::zero(); n],
            pattern: (upper.colptr().to_vec(), upper.rowind().to_vec()),
        };
        f.numeric(&a)?;
        Ok(f)
    }

    /// Refactorizes a matrix with the same pattern as the original.
    pub fn refactor(&mut self, upper: &CscMatrix<T>) -> Result<(), LdlError> {
        if upper.colptr() != self.pattern.0.as_slice() || upper.rowind() != self.pattern.1.as_slice() {
            return Err(LdlError::PatternChanged);
        }
        let a = permute_upper(upper, &self.iperm);
        self.numeric(&a)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn diagonal(&self) -> &[T] {
        &self.d
    }

    /// Number of positive entries of `D`.
    pub fn positive_pivots(&self) -> usize {
        self.d.iter().filter(|d| **d > T::zero()).count()
    }

    pub fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }

    pub fn solve(&self, b: &DVector<T>) -> DVector<T> {
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, b: &mut DVector<T>) {
        let n = self.n;
        let mut x: Vec<T> = (0..n).map(|i| b[self.perm[i]]).collect();
        for j in 0..n {
            let xj = x[j];
            for k in self.lp[j]..self.lp[j + 1] {
                x[self.li[k]] -= self.lx[k] * xj;
            }
        }
        for j in 0..n {
            x[j] *= self.dinv[j];
        }
        for j in (0..n).rev() {
            let mut acc = x[j];
            for k in self.lp[j]..self.lp[j + 1] {
                acc -= self.lx[k] * x[self.li[k]];
            }
            x[j] = acc;
        }
        for i in 0..n {
            b[self.perm[i]] = x[i];
        }
    }

    fn numeric(&mut self, a: &CscMatrix<T>) -> Result<(), LdlError> {
        let n = self.n;
        let ap = a.colptr();
        let ai = a.rowind();
        let ax = a.values();
        let mut y_vals = vec![T::zero(); n];
        let mut y_idx = vec![0usize; n];
        let mut elim_buf = vec![0usize; n];
        let mut next_col = self.lp[..n].to_vec();
        let mut marked = vec![usize::MAX; n];
        let mut lnz_fill = vec![0usize; n];

        for k in 0..n {
            let mut nnz_y = 0;
            marked[k] = k;
            let mut diag = T::zero();
            for p in ap[k]..ap[k + 1] {
                let i = ai[p];
                if i == k {
                    diag += ax[p];
                    continue;
                }
                y_vals[i] += ax[p];
                if marked[i] != k {
                    marked[i] = k;
                    elim_buf[0] = i;
                    let mut len = 1;
                    let mut next = self.etree[i];
                    while let Some(nx) = next {
                        if nx >= k || marked[nx] == k {
                            break;
                        }
                        marked[nx] = k;
                        elim_buf[len] = nx;
                        len += 1;
                        next = self.etree[nx];
                    }
                    while len > 0 {
                        len -= 1;
                        y_idx[nnz_y] = elim_buf[len];
                        nnz_y += 1;
                    }
                }
            }
            for idx in (0..nnz_y).rev() {
                let cidx = y_idx[idx];
                let yv = y_vals[cidx];
                for p in self.lp[cidx]..next_col[cidx] {
                    y_vals[self.li[p]] -= self.lx[p] * yv;
                }
                let lval = yv * self.dinv[cidx];
                self.li[next_col[cidx]] = k;
                self.lx[next_col[cidx]] = lval;
                next_col[cidx] += 1;
                lnz_fill[cidx] += 1;
                diag -= yv * lval;
                y_vals[cidx] = T::zero();
            }
            if diag == T::zero() || !diag.is_finite() {
                return Err(LdlError::ZeroPivot(self.perm[k]));
            }
            self.d[k] = diag;
            self.dinv[k] = T::one() / diag;
        }
        debug_assert!(lnz_fill.iter().zip(&self.lnz).all(|(a, b)| a == b));
        Ok(())
    }
}

fn permute_upper<T: Real>(upper: &CscMatrix<T>, iperm: &[usize]) -> CscMatrix<T> {
    let trip: Vec<_> = upper
        .iter()
        .filter(|(r, c, _)| r <= c)
        .map(|(r, c, v)| {
            let (pr, pc) = (iperm[r], iperm[c]);
            (pr.min(pc), pr.max(pc), v)
        })
        .collect();
    CscMatrix::from_triplets(upper.nrows(), upper.ncols(), &trip)
}

fn elimination_tree<T: Real>(a: &CscMatrix<T>) -> (Vec<Option<usize>>, Vec<usize>) {
    let n = a.ncols();
    let mut etree = vec![None; n];
    let mut lnz = vec![0usize; n];
    let mut flag = vec![usize::MAX; n];
    for j in 0..n {
        flag[j] = j;
        for p in a.colptr()[j]..a.colptr()[j + 1] {
            let mut i = a.rowind()[p];
            if i >= j {
                continue;
            }
            while flag[i] != j {
                if etree[i].is_none() {
                    etree[i] = Some(j);
                }
                lnz[i] += 1;
                flag[i] = j;
                i = etree[i].unwrap();
            }
        }
    }
    (etree, lnz)
}
