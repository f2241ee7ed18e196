//! Sparse LDL' factorization for symmetric quasi-definite matrices.
//!
//! The pattern is analysed once (minimum-degree ordering plus symbolic
//! fill); numeric factorizations then reuse it. Pivots whose sign
//! disagrees with the expected inertia are replaced by a small regularizer.

use std::collections::BTreeSet;

#[derive(Debug, Clone)]
pub(crate) struct Symbolic {
    n: usize,
    /// `perm[k]` is the original index eliminated at step `k`.
    perm: Vec<usize>,
    iperm: Vec<usize>,
    /// Strictly-below-diagonal rows of each column of L, permuted and sorted.
    cols: Vec<Vec<usize>>,
    col_start: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct Factor {
    l: Vec<f64>,
    d: Vec<f64>,
    /// Number of pivots that were regularized.
    pub bumped: usize,
}

impl Symbolic {
    /// `entries` lists `(i, j)` positions (either triangle) that may be
    /// nonzero. The diagonal is always assumed present.
    pub fn analyse(n: usize, entries: &[(usize, usize)]) -> Self {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for &(i, j) in entries {
            if i != j {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
        let mut alive = vec![true; n];
        let mut perm = Vec::with_capacity(n);
        let mut neighbours_at_elim: Vec<Vec<usize>> = vec![Vec::new(); n];
        for _ in 0..n {
            let mut best = usize::MAX;
            let mut best_deg = usize::MAX;
            for v in 0..n {
                if alive[v] && adj[v].len() < best_deg {
                    best = v;
                    best_deg = adj[v].len();
                }
            }
            let nb: Vec<usize> = adj[best].iter().copied().collect();
            for &a in &nb {
                adj[a].remove(&best);
                for &c in &nb {
                    if c != a {
                        adj[a].insert(c);
                    }
                }
            }
            alive[best] = false;
            adj[best].clear();
            neighbours_at_elim[best] = nb;
            perm.push(best);
        }
        let mut iperm = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }
        let mut cols = Vec::with_capacity(n);
        let mut col_start = Vec::with_capacity(n + 1);
        let mut total = 0;
        for &p in &perm {
            let mut rows: Vec<usize> = neighbours_at_elim[p].iter().map(|&v| iperm[v]).collect();
            rows.sort_unstable();
            col_start.push(total);
            total += rows.len();
            cols.push(rows);
        }
        col_start.push(total);
        Self {
            n,
            perm,
            iperm,
            cols,
            col_start,
        }
    }

    pub fn nnz(&self) -> usize {
        self.col_start[self.n]
    }

    /// Factors the matrix given by `values` (upper or lower triangle, each
    /// off-diagonal position at most once; duplicates are summed).
    ///
    /// `signs[i]` is the expected sign of pivot `i` in original order. A
    /// pivot with `signs[i] * d < eps` is replaced by `signs[i] * delta`.
    pub fn factor(
        &self,
        values: &[(usize, usize, f64)],
        signs: &[f64],
        eps: f64,
        delta: f64,
    ) -> Factor {
        let n = self.n;
        let mut diag = vec![0.0; n];
        let mut l = vec![0.0; self.nnz()];
        for &(i, j, v) in values {
            let (pi, pj) = (self.iperm[i], self.iperm[j]);
            if pi == pj {
                diag[pi] += v;
            } else {
                let (row, col) = if pi > pj { (pi, pj) } else { (pj, pi) };
                let pos = self.locate(col, row);
                l[pos] += v;
            }
        }
        let mut bumped = 0;
        for k in 0..n {
            let sign = signs[self.perm[k]];
            let mut dk = diag[k];
            if !(sign * dk >= eps) {
                dk = sign * delta;
                bumped += 1;
            }
            diag[k] = dk;
            let start = self.col_start[k];
            let rows = &self.cols[k];
            for t in 0..rows.len() {
                l[start + t] /= dk;
            }
            for a in 0..rows.len() {
                let i = rows[a];
                let lik = l[start + a];
                if lik == 0.0 {
                    continue;
                }
                let scale = lik * dk;
                diag[i] -= scale * lik;
                // Rows of column k below i lie in column i's pattern.
                let mut cursor = 0;
                let ci = &self.cols[i];
                let cstart = self.col_start[i];
                for b in a + 1..rows.len() {
                    let r = rows[b];
                    while ci[cursor] != r {
                        cursor += 1;
                    }
                    l[cstart + cursor] -= scale * l[start + b];
                }
            }
        }
        Factor { l, d: diag, bumped }
    }

    fn locate(&self, col: usize, row: usize) -> usize {
        let rows = &self.cols[col];
        let t = rows
            .binary_search(&row)
            .expect("entry outside the analysed pattern");
        self.col_start[col] + t
    }

    /// Solves `L D L' x = b` in place (original ordering).
    pub fn solve(&self, f: &Factor, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = (0..n).map(|k| b[self.perm[k]]).collect();
        for k in 0..n {
            let xk = x[k];
            if xk != 0.0 {
                let start = self.col_start[k];
                for (t, &r) in self.cols[k].iter().enumerate() {
                    x[r] -= f.l[start + t] * xk;
                }
            }
        }
        for k in 0..n {
            x[k] /= f.d[k];
        }
        for k in (0..n).rev() {
            let start = self.col_start[k];
            let mut acc = x[k];
            for (t, &r) in self.cols[k].iter().enumerate() {
                acc -= f.l[start + t] * x[r];
            }
            x[k] = acc;
        }
        for k in 0..n {
            b[self.perm[k]] = x[k];
        }
    }
}

/// `y = M x` for symmetric `M` stored as one triangle.
pub(crate) fn sym_matvec(n: usize, values: &[(usize, usize, f64)], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for &(i, j, v) in values {
        y[i] += v * x[j];
        if i != j {
            y[j] += v * x[i];
        }
    }
    y
}
