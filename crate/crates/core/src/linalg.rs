//! Sparse LDL^T factorization of symmetric quasi-definite matrices.
//!
//! Upper-triangle CSC input, fill-reducing minimum-degree permutation,
//! elimination-tree numeric factorization, and iterative refinement against
//! the unregularized matrix. Regularization adds +delta on rows flagged
//! positive and -delta on rows flagged negative, with a dynamic pivot clamp
//! as a backstop.

use crate::error::{Error, Result};
use crate::sparse::{norm_inf, CooMatrix, CscMatrix};

const UNKNOWN: usize = usize::MAX;

/// Permuted LDL^T factors: P A P^T = L D L^T with L unit lower triangular.
#[derive(Debug, Clone)]
pub struct LdlFactors {
    pub n: usize,
    /// perm[k] = original index of the k-th pivot.
    pub perm: Vec<usize>,
    pub iperm: Vec<usize>,
    pub lcolptr: Vec<usize>,
    pub lrowidx: Vec<usize>,
    pub lvals: Vec<f64>,
    pub d: Vec<f64>,
    pub dinv: Vec<f64>,
    /// Number of pivots clamped by dynamic regularization.
    pub clamped: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LdlOptions {
    /// Static/dynamic regularization magnitude. Zero disables.
    pub delta: f64,
    /// Dynamic clamp threshold: pivot p with sign s is clamped when s*p < eps.
    pub eps: f64,
}

impl Default for LdlOptions {
    fn default() -> Self {
        LdlOptions {
            delta: 1e-8,
            eps: 1e-13,
        }
    }
}

/// Greedy minimum-degree ordering on the pattern of a symmetric matrix given
/// by its upper triangle. Ties break on the lowest index so the ordering is
/// deterministic.
pub fn min_degree_order(upper: &CscMatrix) -> Vec<usize> {
    let n = upper.ncols;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for j in 0..n {
        let (idx, _) = upper.col(j);
        for &i in idx {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let mut alive = vec![true; n];
    let mut perm = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best = usize::MAX;
        let mut best_deg = usize::MAX;
        for v in 0..n {
            if alive[v] && adj[v].len() < best_deg {
                best_deg = adj[v].len();
                best = v;
            }
        }
        let v = best;
        alive[v] = false;
        perm.push(v);
        // connect the eliminated vertex's neighbors into a clique
        let nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| alive[u]).collect();
        for &u in &nbrs {
            adj[u].retain(|&w| w != v && alive[w]);
            for &w in &nbrs {
                if w != u && !adj[u].contains(&w) {
                    adj[u].push(w);
                }
            }
        }
        adj[v].clear();
    }
    perm
}

/// Symmetric permutation of an upper-triangle CSC matrix: returns the upper
/// triangle of P A P^T where row/col k of the result is perm[k] of the input.
fn permute_upper(upper: &CscMatrix, iperm: &[usize]) -> CscMatrix {
    let n = upper.ncols;
    let mut coo = CooMatrix::new(n, n);
    for j in 0..n {
        let (idx, vals) = upper.col(j);
        for (&i, &v) in idx.iter().zip(vals) {
            let (pi, pj) = (iperm[i], iperm[j]);
            if pi <= pj {
                coo.push(pi, pj, v);
            } else {
                coo.push(pj, pi, v);
            }
        }
    }
    coo.to_csc()
}

/// Factor a symmetric matrix given by its upper triangle. `signs[i]` is +1
/// or -1 per *unpermuted* index; regularization adds `delta * signs[i]` to
/// the diagonal. All diagonal positions must be structurally present.
pub fn ldl_factor(
    upper: &CscMatrix,
    perm: &[usize],
    signs: &[i8],
    opts: LdlOptions,
) -> Result<LdlFactors> {
    let n = upper.ncols;
    debug_assert_eq!(upper.nrows, n);
    debug_assert_eq!(perm.len(), n);
    debug_assert_eq!(signs.len(), n);
    let mut iperm = vec![0usize; n];
    for (k, &p) in perm.iter().enumerate() {
        iperm[p] = k;
    }
    let a = permute_upper(upper, &iperm);

    // ensure every column ends with its diagonal entry
    for j in 0..n {
        let (idx, _) = a.col(j);
        if idx.last() != Some(&j) {
            return Err(Error::Format(format!(
                "missing structural diagonal at KKT column {j}"
            )));
        }
    }

    // elimination tree and column counts
    let mut etree = vec![UNKNOWN; n];
    let mut lnz = vec![0usize; n];
    let mut flag = vec![UNKNOWN; n];
    for j in 0..n {
        flag[j] = j;
        let (idx, _) = a.col(j);
        for &row in idx {
            let mut i = row;
            while flag[i] != j {
                if etree[i] == UNKNOWN {
                    etree[i] = j;
                }
                lnz[i] += 1;
                flag[i] = j;
                i = etree[i];
            }
        }
    }

    let total: usize = lnz.iter().sum();
    let mut lcolptr = vec![0usize; n + 1];
    for k in 0..n {
        lcolptr[k + 1] = lcolptr[k] + lnz[k];
    }
    let mut lrowidx = vec![0usize; total];
    let mut lvals = vec![0.0f64; total];
    let mut d = vec![0.0f64; n];
    let mut dinv = vec![0.0f64; n];

    let mut y_vals = vec![0.0f64; n];
    let mut y_marker = vec![false; n];
    let mut y_idx = vec![0usize; n];
    let mut elim = vec![0usize; n];
    let mut next_space: Vec<usize> = lcolptr[..n].to_vec();
    let mut clamped = 0usize;

    let sign_at = |k: usize| f64::from(signs[perm[k]]);

    for k in 0..n {
        let (idx, vals) = a.col(k);
        let mut nnz_y = 0usize;
        for (&bidx, &bval) in idx.iter().zip(vals) {
            if bidx == k {
                d[k] = bval + opts.delta * sign_at(k);
                continue;
            }
            y_vals[bidx] = bval;
            if !y_marker[bidx] {
                y_marker[bidx] = true;
                elim[0] = bidx;
                let mut nnz_e = 1usize;
                let mut next = etree[bidx];
                while next != UNKNOWN && next < k {
                    if y_marker[next] {
                        break;
                    }
                    y_marker[next] = true;
                    elim[nnz_e] = next;
                    nnz_e += 1;
                    next = etree[next];
                }
                while nnz_e > 0 {
                    nnz_e -= 1;
                    y_idx[nnz_y] = elim[nnz_e];
                    nnz_y += 1;
                }
            }
        }
        for i in (0..nnz_y).rev() {
            let cidx = y_idx[i];
            let write = next_space[cidx];
            let yv = y_vals[cidx];
            for p in lcolptr[cidx]..write {
                y_vals[lrowidx[p]] -= lvals[p] * yv;
            }
            let lkj = yv * dinv[cidx];
            lrowidx[write] = k;
            lvals[write] = lkj;
            d[k] -= yv * lkj;
            next_space[cidx] += 1;
            y_vals[cidx] = 0.0;
            y_marker[cidx] = false;
        }
        if opts.delta > 0.0 {
            let s = sign_at(k);
            if d[k] * s < opts.eps {
                d[k] = s * opts.delta;
                clamped += 1;
            }
        }
        if d[k] == 0.0 {
            return Err(Error::DegenerateStrategy);
        }
        dinv[k] = 1.0 / d[k];
    }

    Ok(LdlFactors {
        n,
        perm: perm.to_vec(),
        iperm,
        lcolptr,
        lrowidx,
        lvals,
        d,
        dinv,
        clamped,
    })
}

impl LdlFactors {
    /// Solve (L D L^T) x = b through the stored permutation. `b` is in the
    /// original (unpermuted) index space.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        let mut x = vec![0.0; n];
        for k in 0..n {
            x[k] = b[self.perm[k]];
        }
        // forward solve (L + I) y = b
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.lcolptr[j]..self.lcolptr[j + 1] {
                    x[self.lrowidx[p]] -= self.lvals[p] * xj;
                }
            }
        }
        for k in 0..n {
            x[k] *= self.dinv[k];
        }
        // backward solve (L + I)^T z = y
        for j in (0..n).rev() {
            let mut xj = x[j];
            for p in self.lcolptr[j]..self.lcolptr[j + 1] {
                xj -= self.lvals[p] * x[self.lrowidx[p]];
            }
            x[j] = xj;
        }
        let mut out = vec![0.0; n];
        for k in 0..n {
            out[self.perm[k]] = x[k];
        }
        out
    }

    /// Reconstruction L D L^T as a dense matrix in the permuted ordering,
    /// for factor-quality checks.
    pub fn reconstruct_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n;
        let mut l = vec![vec![0.0; n]; n];
        for (j, row) in l.iter_mut().enumerate() {
            row[j] = 1.0;
        }
        for j in 0..n {
            for p in self.lcolptr[j]..self.lcolptr[j + 1] {
                l[self.lrowidx[p]][j] = self.lvals[p];
            }
        }
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += l[i][k] * self.d[k] * l[j][k];
                }
                out[i][j] = acc;
            }
        }
        out
    }
}

/// Result of a refined linear solve.
#[derive(Debug, Clone)]
pub struct RefinedSolve {
    pub x: Vec<f64>,
    /// Final infinity-norm residual of the *unregularized* system.
    pub residual: f64,
    pub iterations: usize,
}

/// Solve K x = rhs using regularized factors of K, refining against the
/// unregularized matrix (upper triangle). At most `max_iter` correction
/// steps; stops early once the residual is below `tol * max(1, |rhs|_inf)`.
pub fn solve_refined(
    factors: &LdlFactors,
    k_upper: &CscMatrix,
    rhs: &[f64],
    max_iter: usize,
    tol: f64,
) -> RefinedSolve {
    let scale = norm_inf(rhs).max(1.0);
    let mut x = factors.solve(rhs);
    let mut resid = vec![0.0; rhs.len()];
    let mut best_x = x.clone();
    let mut best_res = f64::INFINITY;
    let mut iters = 0;
    for it in 0..=max_iter {
        resid.copy_from_slice(rhs);
        let mut kx = vec![0.0; rhs.len()];
        k_upper.sym_matvec_acc(&x, &mut kx);
        for (r, v) in resid.iter_mut().zip(&kx) {
            *r -= v;
        }
        let rn = norm_inf(&resid);
        if rn < best_res {
            best_res = rn;
            best_x.copy_from_slice(&x);
        }
        iters = it;
        if rn <= tol * scale || it == max_iter {
            break;
        }
        let dx = factors.solve(&resid);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
    }
    RefinedSolve {
        x: best_x,
        residual: best_res,
        iterations: iters,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upper_from_dense(m: &[&[f64]]) -> CscMatrix {
        let n = m.len();
        let mut coo = CooMatrix::new(n, n);
        for i in 0..n {
            for j in i..n {
                if m[i][j] != 0.0 || i == j {
                    coo.push(i, j, m[i][j]);
                }
            }
        }
        coo.to_csc()
    }

    #[test]
    fn identity_factors_trivially() {
        let k = upper_from_dense(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let opts = LdlOptions { delta: 0.0, eps: 0.0 };
        let f = ldl_factor(&k, &[0, 1], &[1, 1], opts).unwrap();
        assert!(f.lvals.iter().all(|&v| v == 0.0));
        assert_eq!(f.d, vec![1.0, 1.0]);
    }

    #[test]
    fn saddle_2x2_reconstructs() {
        // [[2, 1], [1, 0]] is quasi-definite under (+, -) signs; the factors
        // reproduce the (regularized) input to roundoff
        let k = upper_from_dense(&[&[2.0, 1.0], &[1.0, 0.0]]);
        let perm = vec![0, 1];
        let opts = LdlOptions::default();
        let signs = [1i8, -1];
        let f = ldl_factor(&k, &perm, &signs, opts).unwrap();
        let rec = f.reconstruct_dense();
        let dense = [[2.0, 1.0], [1.0, 0.0]];
        let mut err: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let (pi, pj) = (f.perm[i], f.perm[j]);
                let mut expect = dense[pi][pj];
                if i == j {
                    expect += opts.delta * f64::from(signs[pi]);
                }
                err = err.max((rec[i][j] - expect).abs());
            }
        }
        assert!(err <= 1e-10, "reconstruction error {err}");
    }

    #[test]
    fn refined_solve_hits_tight_residual() {
        // 4x4 KKT-like system [P A^T; A 0], P = diag(2, 3)
        let k = upper_from_dense(&[
            &[2.0, 0.0, 1.0, 1.0],
            &[0.0, 3.0, 1.0, -1.0],
            &[1.0, 1.0, 0.0, 0.0],
            &[1.0, -1.0, 0.0, 0.0],
        ]);
        let perm = min_degree_order(&k);
        let f = ldl_factor(&k, &perm, &[1, 1, -1, -1], LdlOptions::default()).unwrap();
        let rhs = vec![1.0, -2.0, 0.5, 0.0];
        let out = solve_refined(&f, &k, &rhs, 10, 1e-14);
        assert!(out.residual <= 1e-10, "residual {}", out.residual);
        // verify by direct substitution
        let mut kx = vec![0.0; 4];
        k.sym_matvec_acc(&out.x, &mut kx);
        for (a, b) in kx.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_system_consistent_rhs_recovers_primal() {
        // duplicated constraint row makes the KKT singular but consistent
        let k = upper_from_dense(&[
            &[1.0, 0.0, 1.0, 1.0],
            &[0.0, 1.0, 0.0, 0.0],
            &[1.0, 0.0, 0.0, 0.0],
            &[1.0, 0.0, 0.0, 0.0],
        ]);
        let perm = min_degree_order(&k);
        let f = ldl_factor(&k, &perm, &[1, 1, -1, -1], LdlOptions::default()).unwrap();
        // rhs consistent with x1 = 2 and duplicated rows both equal 2
        let rhs = vec![0.0, 1.0, 2.0, 2.0];
        let out = solve_refined(&f, &k, &rhs, 10, 1e-12);
        assert!(out.residual <= 1e-8, "residual {}", out.residual);
        assert!((out.x[0] - 2.0).abs() < 1e-8);
        assert!((out.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn min_degree_is_a_permutation() {
        let k = upper_from_dense(&[
            &[4.0, 1.0, 0.0, 1.0],
            &[1.0, 4.0, 1.0, 0.0],
            &[0.0, 1.0, 4.0, 1.0],
            &[1.0, 0.0, 1.0, 4.0],
        ]);
        let mut p = min_degree_order(&k);
        p.sort_unstable();
        assert_eq!(p, vec![0, 1, 2, 3]);
    }
}
