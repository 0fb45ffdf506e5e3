//! Primal active-set solver for convex QPs
//!
//! ```text
//! minimize    (1/2) x^T P x + q^T x + r
//! subject to  a_i^T x <= b_i          (inequality rows)
//!             a_i^T x  = b_i          (equality rows)
//! ```
//!
//! with optional fixed variables (eliminated by substitution) and extra
//! bound rows for branch-and-bound. Infeasible starts go through a phase-1
//! subproblem minimizing squared slacks on the violated rows.
//!
//! Working-set KKT systems are solved with the regularized sparse LDL^T
//! kernel plus iterative refinement. Exact +/- negation row pairs (the
//! encoding of equalities in the standard form) are merged into single
//! equality rows so the working set never carries structurally dependent
//! pairs.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::{self, LdlOptions};
use crate::problem::InstanceData;
use crate::sparse::{dot, norm_inf, CooMatrix, CscMatrix};

/// Outcome classification of a QP solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterLimit,
}

/// Solution of a QP subproblem.
#[derive(Debug, Clone)]
pub struct QpSolution {
    /// Full-length primal point (fixed variables filled back in).
    pub x: Vec<f64>,
    /// Dual variables over the original inequality rows; zero off the
    /// active set, nonnegative on inequalities.
    pub duals: Vec<f64>,
    pub objective: f64,
    pub status: QpStatus,
    /// Total pivots across phase 1 and phase 2.
    pub iterations: usize,
    /// Scaled KKT residual (stationarity, primal feasibility,
    /// complementarity); meaningful when status is Optimal.
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    /// Pivot limit is iter_factor * (n + m).
    pub iter_factor: usize,
    /// Consecutive degenerate (zero-length) steps before Bland's rule.
    pub bland_after: usize,
    /// Quasi-definite regularization magnitude for KKT solves.
    pub delta: f64,
    pub feas_tol: f64,
    pub dual_tol: f64,
    /// Required scaled KKT residual for an Optimal status.
    pub kkt_tol: f64,
    pub refine_iters: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            iter_factor: 50,
            bland_after: 10,
            delta: 1e-8,
            feas_tol: 1e-9,
            dual_tol: 1e-8,
            kkt_tol: 1e-8,
            refine_iters: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Ineq,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowOrigin {
    /// Original constraint row.
    Orig(usize),
    /// Merged negation pair (kept row, removed row).
    Pair(usize, usize),
    /// Branch bound on a variable; not reported in duals.
    Bound(usize),
    /// Phase-1 slack nonlinkage; internal only.
    Internal,
}

#[derive(Debug, Clone)]
struct WorkRow {
    cols: Vec<usize>,
    vals: Vec<f64>,
    b: f64,
    kind: RowKind,
    origin: RowOrigin,
    norm: f64,
}

impl WorkRow {
    fn dot(&self, x: &[f64]) -> f64 {
        self.cols
            .iter()
            .zip(&self.vals)
            .map(|(&c, &v)| v * x[c])
            .sum()
    }
}

/// Reduced working problem over free variables.
struct WorkProblem {
    nf: usize,
    p_upper: CscMatrix,
    q: Vec<f64>,
    rows: Vec<WorkRow>,
    /// Fill-reducing order of the full (all rows active) KKT pattern.
    perm_full: Vec<usize>,
}

impl WorkProblem {
    fn new(nf: usize, p_upper: CscMatrix, q: Vec<f64>, rows: Vec<WorkRow>) -> Self {
        let dims = nf + rows.len();
        let mut coo = CooMatrix::new(dims, dims);
        for j in 0..nf {
            let (idx, _) = p_upper.col(j);
            for &i in idx {
                coo.push(i, j, 1.0);
            }
        }
        for i in 0..dims {
            coo.push(i, i, 1.0);
        }
        for (w, row) in rows.iter().enumerate() {
            for &c in &row.cols {
                coo.push(c, nf + w, 1.0);
            }
        }
        let perm_full = linalg::min_degree_order(&coo.to_csc());
        WorkProblem {
            nf,
            p_upper,
            q,
            rows,
            perm_full,
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.q.clone();
        self.p_upper.sym_matvec_acc(x, &mut g);
        g
    }

    /// Restrict the precomputed full ordering to the variables plus the
    /// working-set rows.
    fn restricted_perm(&self, wset: &[usize]) -> Vec<usize> {
        let mut row_pos = HashMap::with_capacity(wset.len());
        for (k, &r) in wset.iter().enumerate() {
            row_pos.insert(r, k);
        }
        let mut perm = Vec::with_capacity(self.nf + wset.len());
        for &g in &self.perm_full {
            if g < self.nf {
                perm.push(g);
            } else if let Some(&k) = row_pos.get(&(g - self.nf)) {
                perm.push(self.nf + k);
            }
        }
        perm
    }

    /// Solve the working-set KKT system [P A_W^T; A_W 0] z = rhs.
    fn kkt_solve(&self, wset: &[usize], rhs: &[f64], opts: &QpOptions) -> Result<Vec<f64>> {
        let nw = wset.len();
        let dims = self.nf + nw;
        let mut coo = CooMatrix::new(dims, dims);
        for j in 0..self.nf {
            let (idx, vals) = self.p_upper.col(j);
            for (&i, &v) in idx.iter().zip(vals) {
                coo.push(i, j, v);
            }
        }
        for i in 0..dims {
            coo.push(i, i, 0.0);
        }
        for (w, &r) in wset.iter().enumerate() {
            let row = &self.rows[r];
            for (&c, &v) in row.cols.iter().zip(&row.vals) {
                coo.push(c, self.nf + w, v);
            }
        }
        let k = coo.to_csc();
        let mut signs = vec![1i8; dims];
        for s in signs.iter_mut().skip(self.nf) {
            *s = -1;
        }
        let perm = self.restricted_perm(wset);
        let ldl_opts = LdlOptions {
            delta: opts.delta,
            eps: 1e-13,
        };
        let factors = linalg::ldl_factor(&k, &perm, &signs, ldl_opts)?;
        let sol = linalg::solve_refined(&factors, &k, rhs, opts.refine_iters, 1e-13);
        Ok(sol.x)
    }
}

/// Primal active-set iteration from a feasible point. Returns the final
/// iterate, duals over the internal rows, and the working set.
struct Phase2Result {
    x: Vec<f64>,
    row_duals: Vec<f64>,
    wset: Vec<usize>,
    pivots: usize,
}

fn phase2(
    wp: &WorkProblem,
    x0: Vec<f64>,
    max_pivots: usize,
    opts: &QpOptions,
) -> Result<Phase2Result> {
    let nf = wp.nf;
    let mut x = x0;
    let mut in_w = vec![false; wp.rows.len()];
    let mut wset: Vec<usize> = Vec::new();
    for (r, row) in wp.rows.iter().enumerate() {
        let resid = row.dot(&x) - row.b;
        let scale = row.norm.max(row.b.abs()).max(1.0);
        let tight = resid.abs() <= opts.feas_tol * scale * 10.0;
        if row.kind == RowKind::Eq || tight {
            in_w[r] = true;
            wset.push(r);
        }
    }

    let mut pivots = 0usize;
    let mut degenerate_run = 0usize;

    loop {
        if pivots > max_pivots {
            return Err(Error::IterLimit(pivots));
        }
        let g = wp.gradient(&x);
        let mut rhs = vec![0.0; nf + wset.len()];
        for i in 0..nf {
            rhs[i] = -g[i];
        }
        for (w, &r) in wset.iter().enumerate() {
            rhs[nf + w] = wp.rows[r].b - wp.rows[r].dot(&x);
        }
        let sol = wp.kkt_solve(&wset, &rhs, opts)?;
        let p = &sol[..nf];
        let lam = &sol[nf..];
        let p_norm = norm_inf(p);
        let x_scale = norm_inf(&x).max(1.0);

        // objective value at x for descent scaling: f = (1/2) x^T(g + q) + r
        let f_cur = 0.5 * (dot(&x, &g) + dot(&x, &wp.q));

        let mut stationary = p_norm <= 1e-11 * x_scale;
        let mut alpha = 1.0f64;
        let mut blocker: Option<usize> = None;
        if !stationary {
            for (r, row) in wp.rows.iter().enumerate() {
                if in_w[r] {
                    continue;
                }
                let d = row
                    .cols
                    .iter()
                    .zip(&row.vals)
                    .map(|(&c, &v)| v * p[c])
                    .sum::<f64>();
                if d > 1e-12 * row.norm.max(1.0) * p_norm.max(1.0) {
                    let slack = (row.b - row.dot(&x)).max(0.0);
                    let ratio = slack / d;
                    if ratio < alpha - 1e-12 {
                        alpha = ratio;
                        blocker = Some(r);
                    }
                }
            }
            if blocker.is_none() {
                // unblocked direction: only take it on a meaningful predicted
                // decrease; otherwise the step is regularization noise along a
                // cost-free singular direction and the working set is already
                // stationary
                let mut pp = vec![0.0; nf];
                wp.p_upper.sym_matvec_acc(p, &mut pp);
                let pred_dec = dot(&g, p) + 0.5 * dot(p, &pp);
                if pred_dec >= -1e-10 * (1.0 + f_cur.abs()) {
                    stationary = true;
                } else if p_norm > 1e7 * x_scale {
                    return Err(Error::Unbounded);
                }
            }
        }

        if stationary {
            // stationary on the working set; check dual signs
            let lam_scale = norm_inf(lam).max(1.0);
            let tol = opts.dual_tol * lam_scale;
            let mut drop: Option<usize> = None;
            if degenerate_run >= opts.bland_after {
                for (w, &r) in wset.iter().enumerate() {
                    if wp.rows[r].kind == RowKind::Ineq && lam[w] < -tol {
                        drop = Some(w);
                        break;
                    }
                }
            } else {
                let mut most_neg = -tol;
                for (w, &r) in wset.iter().enumerate() {
                    if wp.rows[r].kind == RowKind::Ineq && lam[w] < most_neg {
                        most_neg = lam[w];
                        drop = Some(w);
                    }
                }
            }
            match drop {
                None => {
                    let mut row_duals = vec![0.0; wp.rows.len()];
                    for (w, &r) in wset.iter().enumerate() {
                        row_duals[r] = lam[w];
                    }
                    return Ok(Phase2Result {
                        x,
                        row_duals,
                        wset,
                        pivots,
                    });
                }
                Some(w) => {
                    let r = wset.remove(w);
                    in_w[r] = false;
                    pivots += 1;
                    degenerate_run += 1;
                }
            }
        } else {
            for (xi, pi) in x.iter_mut().zip(p) {
                *xi += alpha * pi;
            }
            pivots += 1;
            if let Some(r) = blocker {
                let pos = wset.partition_point(|&q| q < r);
                wset.insert(pos, r);
                in_w[r] = true;
                if alpha <= 1e-11 {
                    degenerate_run += 1;
                } else {
                    degenerate_run = 0;
                }
            } else {
                degenerate_run = 0;
                if norm_inf(&x) > 1e10 {
                    return Err(Error::Unbounded);
                }
            }
        }
    }
}

/// Phase 1: bring an arbitrary point to feasibility by minimizing squared
/// slacks on the violated rows. The x-block of the Hessian is zero; flat
/// directions are handled by the stationarity logic in phase 2.
fn phase1(
    wp: &WorkProblem,
    x0: &[f64],
    max_pivots: usize,
    opts: &QpOptions,
) -> Result<(Vec<f64>, usize)> {
    let nf = wp.nf;
    let mut violated: Vec<(usize, f64)> = Vec::new();
    for (r, row) in wp.rows.iter().enumerate() {
        let resid = row.dot(x0) - row.b;
        let scale = row.norm.max(row.b.abs()).max(1.0);
        let viol = match row.kind {
            RowKind::Ineq => resid,
            RowKind::Eq => resid.abs(),
        };
        if viol > opts.feas_tol * scale {
            violated.push((r, resid));
        }
    }
    if violated.is_empty() {
        return Ok((x0.to_vec(), 0));
    }

    let ns = violated.len();
    let mut p1 = CooMatrix::new(nf + ns, nf + ns);
    for k in 0..ns {
        p1.push(nf + k, nf + k, 1.0);
    }
    let q1 = vec![0.0; nf + ns];

    let mut rows1: Vec<WorkRow> = Vec::new();
    let mut s_init = vec![0.0; ns];
    for (r, row) in wp.rows.iter().enumerate() {
        if let Some(k) = violated.iter().position(|&(v, _)| v == r) {
            let resid = violated[k].1;
            match row.kind {
                RowKind::Ineq => {
                    // a x - s <= b
                    let mut cols = row.cols.clone();
                    let mut vals = row.vals.clone();
                    cols.push(nf + k);
                    vals.push(-1.0);
                    rows1.push(WorkRow {
                        cols,
                        vals,
                        b: row.b,
                        kind: RowKind::Ineq,
                        origin: RowOrigin::Internal,
                        norm: row.norm.max(1.0),
                    });
                    s_init[k] = resid.max(0.0);
                }
                RowKind::Eq => {
                    // |a x - b| <= s as two rows
                    let mut cols = row.cols.clone();
                    let mut vals = row.vals.clone();
                    cols.push(nf + k);
                    vals.push(-1.0);
                    rows1.push(WorkRow {
                        cols: cols.clone(),
                        vals: vals.clone(),
                        b: row.b,
                        kind: RowKind::Ineq,
                        origin: RowOrigin::Internal,
                        norm: row.norm.max(1.0),
                    });
                    let neg_vals: Vec<f64> = vals
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| if i + 1 == vals.len() { v } else { -v })
                        .collect();
                    rows1.push(WorkRow {
                        cols,
                        vals: neg_vals,
                        b: -row.b,
                        kind: RowKind::Ineq,
                        origin: RowOrigin::Internal,
                        norm: row.norm.max(1.0),
                    });
                    s_init[k] = resid.abs();
                }
            }
        } else {
            let mut nr = row.clone();
            nr.origin = RowOrigin::Internal;
            rows1.push(nr);
        }
    }

    let wp1 = WorkProblem::new(nf + ns, p1.to_csc(), q1, rows1);
    let mut start = vec![0.0; nf + ns];
    start[..nf].copy_from_slice(x0);
    start[nf..].copy_from_slice(&s_init);
    let res = phase2(&wp1, start, max_pivots, opts)?;

    let x: Vec<f64> = res.x[..nf].to_vec();
    for (r, row) in wp.rows.iter().enumerate() {
        let resid = row.dot(&x) - row.b;
        let scale = row.norm.max(row.b.abs()).max(1.0);
        let viol = match row.kind {
            RowKind::Ineq => resid,
            RowKind::Eq => resid.abs(),
        };
        if viol > 1e-7 * scale {
            if std::env::var("PMIQO_DEBUG_QP").is_ok() {
                eprintln!(
                    "phase1 residual row {r} origin {:?} viol {viol:.3e} pivots {}",
                    row.origin, res.pivots
                );
            }
            return Err(Error::Infeasible);
        }
    }
    Ok((x, res.pivots))
}

/// Solve a QP derived from `instance`.
///
/// * `eq_rows` — original rows treated as equalities.
/// * `fixed` — variables pinned to values (eliminated by substitution).
/// * `bounds` — extra `(var, lo, hi)` interval rows, used for branching.
/// * `warm` — starting point hint (full-length x).
pub fn solve_qp(
    instance: &InstanceData,
    eq_rows: &[usize],
    fixed: &[(usize, f64)],
    bounds: &[(usize, f64, f64)],
    warm: Option<&[f64]>,
    opts: &QpOptions,
) -> Result<QpSolution> {
    let n = instance.n;
    let m = instance.m;

    // free-variable numbering
    let mut fixed_val: Vec<Option<f64>> = vec![None; n];
    for &(i, v) in fixed {
        fixed_val[i] = Some(v);
    }
    let mut free_of: Vec<usize> = Vec::new();
    let mut map: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        if fixed_val[i].is_none() {
            map[i] = Some(free_of.len());
            free_of.push(i);
        }
    }
    let nf = free_of.len();

    // reduced cost: P_FF plus cross terms folded into q_F; the constant
    // block is irrelevant since the objective is evaluated on the full x
    let mut p_coo = CooMatrix::new(nf, nf);
    let mut q_red = vec![0.0; nf];
    for i in 0..nf {
        q_red[i] = instance.q[free_of[i]];
    }
    for j in 0..n {
        let (idx, vals) = instance.p_upper.col(j);
        for (&i, &v) in idx.iter().zip(vals) {
            match (map[i], map[j]) {
                (Some(fi), Some(fj)) => p_coo.push(fi.min(fj), fi.max(fj), v),
                (Some(fi), None) => q_red[fi] += v * fixed_val[j].unwrap(),
                (None, Some(fj)) => q_red[fj] += v * fixed_val[i].unwrap(),
                (None, None) => {}
            }
        }
    }

    let is_eq = {
        let mut flags = vec![false; m];
        for &r in eq_rows {
            flags[r] = true;
        }
        flags
    };

    // reduced constraint rows
    let mut rows: Vec<WorkRow> = Vec::new();
    for r in 0..m {
        let (idx, vals) = instance.a.row(r);
        let mut cols = Vec::new();
        let mut rvals = Vec::new();
        let mut b = instance.b[r];
        for (&j, &v) in idx.iter().zip(vals) {
            match map[j] {
                Some(fj) => {
                    cols.push(fj);
                    rvals.push(v);
                }
                None => b -= v * fixed_val[j].unwrap(),
            }
        }
        let kind = if is_eq[r] { RowKind::Eq } else { RowKind::Ineq };
        if cols.is_empty() {
            // constant row: 0 <= b or 0 = b
            let bad = match kind {
                RowKind::Ineq => b < -1e-9 * (1.0 + instance.b[r].abs()),
                RowKind::Eq => b.abs() > 1e-9 * (1.0 + instance.b[r].abs()),
            };
            if bad {
                return Ok(QpSolution {
                    x: assemble_x(&free_of, &fixed_val, &vec![0.0; nf]),
                    duals: vec![0.0; m],
                    objective: f64::INFINITY,
                    status: QpStatus::Infeasible,
                    iterations: 0,
                    kkt_residual: f64::NAN,
                });
            }
            continue;
        }
        let norm = norm_inf(&rvals);
        rows.push(WorkRow {
            cols,
            vals: rvals,
            b,
            kind,
            origin: RowOrigin::Orig(r),
            norm,
        });
    }

    merge_negation_pairs(&mut rows);

    for &(var, lo, hi) in bounds {
        if let Some(fv) = map[var] {
            if lo > hi + 1e-12 {
                return Ok(QpSolution {
                    x: assemble_x(&free_of, &fixed_val, &vec![0.0; nf]),
                    duals: vec![0.0; m],
                    objective: f64::INFINITY,
                    status: QpStatus::Infeasible,
                    iterations: 0,
                    kkt_residual: f64::NAN,
                });
            }
            rows.push(WorkRow {
                cols: vec![fv],
                vals: vec![1.0],
                b: hi,
                kind: RowKind::Ineq,
                origin: RowOrigin::Bound(var),
                norm: 1.0,
            });
            rows.push(WorkRow {
                cols: vec![fv],
                vals: vec![-1.0],
                b: -lo,
                kind: RowKind::Ineq,
                origin: RowOrigin::Bound(var),
                norm: 1.0,
            });
        } else {
            let v = fixed_val[var].unwrap();
            if v < lo - 1e-9 || v > hi + 1e-9 {
                return Ok(QpSolution {
                    x: assemble_x(&free_of, &fixed_val, &vec![0.0; nf]),
                    duals: vec![0.0; m],
                    objective: f64::INFINITY,
                    status: QpStatus::Infeasible,
                    iterations: 0,
                    kkt_residual: f64::NAN,
                });
            }
        }
    }

    let n_rows = rows.len();
    let wp = WorkProblem::new(nf, p_coo.to_csc(), q_red, rows);
    let max_pivots = opts.iter_factor * (nf + n_rows).max(1);

    let x_start: Vec<f64> = match warm {
        Some(w) => free_of.iter().map(|&i| w[i]).collect(),
        None => vec![0.0; nf],
    };

    let (x_feas, piv1) = match phase1(&wp, &x_start, max_pivots, opts) {
        Ok(r) => r,
        Err(Error::Infeasible) => {
            return Ok(QpSolution {
                x: assemble_x(&free_of, &fixed_val, &x_start),
                duals: vec![0.0; m],
                objective: f64::INFINITY,
                status: QpStatus::Infeasible,
                iterations: 0,
                kkt_residual: f64::NAN,
            });
        }
        Err(Error::IterLimit(p)) => {
            return Ok(QpSolution {
                x: assemble_x(&free_of, &fixed_val, &x_start),
                duals: vec![0.0; m],
                objective: f64::INFINITY,
                status: QpStatus::IterLimit,
                iterations: p,
                kkt_residual: f64::NAN,
            });
        }
        Err(e) => return Err(e),
    };

    let res = match phase2(&wp, x_feas, max_pivots, opts) {
        Ok(r) => r,
        Err(Error::IterLimit(p)) => {
            return Ok(QpSolution {
                x: assemble_x(&free_of, &fixed_val, &x_start),
                duals: vec![0.0; m],
                objective: f64::INFINITY,
                status: QpStatus::IterLimit,
                iterations: piv1 + p,
                kkt_residual: f64::NAN,
            });
        }
        Err(e) => return Err(e),
    };

    // polish: direct solve at the final working set
    let mut x = res.x;
    let mut row_duals = res.row_duals;
    {
        let mut rhs = vec![0.0; nf + res.wset.len()];
        for i in 0..nf {
            rhs[i] = -wp.q[i];
        }
        for (w, &r) in res.wset.iter().enumerate() {
            rhs[nf + w] = wp.rows[r].b;
        }
        if let Ok(sol) = wp.kkt_solve(&res.wset, &rhs, opts) {
            let xp = &sol[..nf];
            let feasible = wp.rows.iter().all(|row| {
                let resid = row.dot(xp) - row.b;
                let scale = row.norm.max(row.b.abs()).max(1.0);
                match row.kind {
                    RowKind::Ineq => resid <= 10.0 * opts.feas_tol * scale,
                    RowKind::Eq => resid.abs() <= 10.0 * opts.feas_tol * scale,
                }
            });
            let sign_ok = res
                .wset
                .iter()
                .enumerate()
                .all(|(w, &r)| wp.rows[r].kind == RowKind::Eq || sol[nf + w] >= -opts.dual_tol * norm_inf(&sol[nf..]).max(1.0));
            if feasible && sign_ok {
                x.copy_from_slice(xp);
                row_duals.fill(0.0);
                for (w, &r) in res.wset.iter().enumerate() {
                    row_duals[r] = sol[nf + w];
                }
            }
        }
    }

    // map duals back to original rows
    let mut duals = vec![0.0; m];
    for (r, row) in wp.rows.iter().enumerate() {
        let lam = row_duals[r];
        match row.origin {
            RowOrigin::Orig(i) => {
                duals[i] = if is_eq[i] { lam } else { lam.max(0.0) };
            }
            RowOrigin::Pair(i, j) => {
                duals[i] = lam.max(0.0);
                duals[j] = (-lam).max(0.0);
            }
            RowOrigin::Bound(_) | RowOrigin::Internal => {}
        }
    }

    let x_full = assemble_x(&free_of, &fixed_val, &x);
    let objective = instance.objective(&x_full);

    // scaled KKT residual: stationarity over free coordinates + primal
    // feasibility + complementarity
    let kkt_residual = {
        let g = wp.gradient(&x);
        let mut stat = g;
        for (r, row) in wp.rows.iter().enumerate() {
            let lam = row_duals[r];
            if lam != 0.0 {
                for (&c, &v) in row.cols.iter().zip(&row.vals) {
                    stat[c] += lam * v;
                }
            }
        }
        let g_scale = norm_inf(&wp.gradient(&x)).max(1.0);
        let stat_res = norm_inf(&stat) / g_scale;
        let mut prim_res = 0.0f64;
        let mut comp_res = 0.0f64;
        for row in &wp.rows {
            let resid = row.dot(&x) - row.b;
            let scale = row.norm.max(row.b.abs()).max(1.0);
            match row.kind {
                RowKind::Ineq => prim_res = prim_res.max(resid / scale),
                RowKind::Eq => prim_res = prim_res.max(resid.abs() / scale),
            }
        }
        for (r, row) in wp.rows.iter().enumerate() {
            let lam = row_duals[r];
            if row.kind == RowKind::Ineq && lam > 0.0 {
                let slack = row.b - row.dot(&x);
                comp_res = comp_res.max((lam * slack).abs() / g_scale.max(lam));
            }
        }
        stat_res.max(prim_res).max(comp_res)
    };

    if kkt_residual > opts.kkt_tol {
        return Err(Error::Numerical(format!(
            "active-set converged with KKT residual {kkt_residual:.3e} > {:.3e}",
            opts.kkt_tol
        )));
    }

    Ok(QpSolution {
        x: x_full,
        duals,
        objective,
        status: QpStatus::Optimal,
        iterations: piv1 + res.pivots,
        kkt_residual,
    })
}

fn assemble_x(free_of: &[usize], fixed_val: &[Option<f64>], x_red: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; fixed_val.len()];
    for (i, v) in fixed_val.iter().enumerate() {
        if let Some(val) = v {
            x[i] = *val;
        }
    }
    for (k, &i) in free_of.iter().enumerate() {
        x[i] = x_red[k];
    }
    x
}

/// Merge rows that are exact negations of each other into equality rows.
fn merge_negation_pairs(rows: &mut Vec<WorkRow>) {
    #[derive(Hash, PartialEq, Eq)]
    struct Key(Vec<(usize, u64)>);

    fn canon(row: &WorkRow) -> (Key, f64) {
        // normalize so the first coefficient is positive
        let sign = if row.vals[0] < 0.0 { -1.0 } else { 1.0 };
        let mut entries: Vec<(usize, u64)> = row
            .cols
            .iter()
            .zip(&row.vals)
            .map(|(&c, &v)| (c, (sign * v).to_bits()))
            .collect();
        entries.sort_unstable();
        (Key(entries), sign)
    }

    let mut by_key: HashMap<Key, Vec<usize>> = HashMap::new();
    for (r, row) in rows.iter().enumerate() {
        if row.kind == RowKind::Ineq && matches!(row.origin, RowOrigin::Orig(_)) {
            let (key, _) = canon(row);
            by_key.entry(key).or_default().push(r);
        }
    }

    let mut remove = vec![false; rows.len()];
    for group in by_key.values() {
        if group.len() < 2 {
            continue;
        }
        let mut used = vec![false; group.len()];
        for a in 0..group.len() {
            if used[a] {
                continue;
            }
            let ra = group[a];
            let (_, sa) = canon(&rows[ra]);
            for b in (a + 1)..group.len() {
                if used[b] {
                    continue;
                }
                let rb = group[b];
                let (_, sb) = canon(&rows[rb]);
                if sa == sb {
                    continue;
                }
                let bsum = rows[ra].b + rows[rb].b;
                let scale = rows[ra].b.abs().max(rows[rb].b.abs()).max(1.0);
                if bsum.abs() <= 1e-9 * scale {
                    // a^T x <= b and -a^T x <= -b  =>  a^T x = b
                    used[a] = true;
                    used[b] = true;
                    let (oi, oj) = match (rows[ra].origin, rows[rb].origin) {
                        (RowOrigin::Orig(i), RowOrigin::Orig(j)) => (i, j),
                        _ => unreachable!(),
                    };
                    rows[ra].kind = RowKind::Eq;
                    rows[ra].origin = RowOrigin::Pair(oi, oj);
                    remove[rb] = true;
                    break;
                }
            }
        }
    }
    let mut k = 0;
    rows.retain(|_| {
        let keep = !remove[k];
        k += 1;
        keep
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CooMatrix;

    fn instance(
        n: usize,
        p_entries: &[(usize, usize, f64)],
        q: Vec<f64>,
        a_rows: &[(&[usize], &[f64], f64)],
    ) -> InstanceData {
        let mut p = CooMatrix::new(n, n);
        for &(i, j, v) in p_entries {
            p.push(i, j, v);
        }
        let m = a_rows.len();
        let mut a = CooMatrix::new(m, n);
        let mut b = Vec::new();
        for (r, (cols, vals, bi)) in a_rows.iter().enumerate() {
            for (&c, &v) in cols.iter().zip(*vals) {
                a.push(r, c, v);
            }
            b.push(*bi);
        }
        InstanceData {
            n,
            m,
            p_upper: p.to_csc(),
            q,
            r: 0.0,
            a: a.to_csr(),
            b,
        }
    }

    #[test]
    fn unconstrained_scalar() {
        // min (1/2) x^2 - x  ->  x = 1, obj = -1/2
        let inst = instance(1, &[(0, 0, 1.0)], vec![-1.0], &[]);
        let sol = solve_qp(&inst, &[], &[], &[], None, &QpOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!((sol.objective + 0.5).abs() < 1e-9);
    }

    #[test]
    fn equality_symmetric_split() {
        // min (1/2)|x|^2 s.t. x1 + x2 = 2 -> (1, 1)
        let inst = instance(
            2,
            &[(0, 0, 1.0), (1, 1, 1.0)],
            vec![0.0, 0.0],
            &[(&[0, 1], &[1.0, 1.0], 2.0)],
        );
        let sol = solve_qp(&inst, &[0], &[], &[], None, &QpOptions::default()).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!((sol.x[1] - 1.0).abs() < 1e-9);
        // equality dual: P x + q + A^T nu = 0 -> nu = -1
        assert!((sol.duals[0] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn active_box_with_pair_rows() {
        // min (1/2)(x+2)^2 with pair-encoded equality x = 1
        let inst = instance(
            1,
            &[(0, 0, 1.0)],
            vec![2.0],
            &[(&[0], &[1.0], 1.0), (&[0], &[-1.0], -1.0)],
        );
        let sol = solve_qp(&inst, &[], &[], &[], None, &QpOptions::default()).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        // stationarity: x + 2 + nu_1 - nu_2 = 0 -> net dual -3 split as (0, 3)
        assert!((sol.duals[0] - 0.0).abs() < 1e-8);
        assert!((sol.duals[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn inequality_becomes_active() {
        // min (1/2)x^2 s.t. -x <= -1  -> x = 1, dual 1
        let inst = instance(1, &[(0, 0, 1.0)], vec![0.0], &[(&[0], &[-1.0], -1.0)]);
        let sol = solve_qp(&inst, &[], &[], &[], None, &QpOptions::default()).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!((sol.duals[0] - 1.0).abs() < 1e-8);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn detects_infeasible() {
        // x <= 0 and -x <= -1 (x >= 1)
        let inst = instance(
            1,
            &[(0, 0, 1.0)],
            vec![0.0],
            &[(&[0], &[1.0], 0.0), (&[0], &[-1.0], -1.0)],
        );
        let sol = solve_qp(&inst, &[], &[], &[], None, &QpOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn fixed_variable_substitution() {
        // min (1/2)(x0^2 + x1^2) + x0*x1 with x1 fixed at 2 -> x0 = -2
        let inst = instance(
            2,
            &[(0, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0)],
            vec![0.0, 0.0],
            &[],
        );
        let sol = solve_qp(&inst, &[], &[(1, 2.0)], &[], None, &QpOptions::default()).unwrap();
        assert!((sol.x[0] + 2.0).abs() < 1e-9);
        assert_eq!(sol.x[1], 2.0);
    }

    #[test]
    fn branch_bounds_respected() {
        // min (1/2)(x - 0.5)^2 with branch bound x in [1, 3] -> x = 1
        let inst = instance(1, &[(0, 0, 1.0)], vec![-0.5], &[]);
        let sol = solve_qp(&inst, &[], &[], &[(0, 1.0, 3.0)], None, &QpOptions::default()).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unbounded_detected() {
        // min q^T x with a one-sided row only
        let inst = instance(1, &[], vec![1.0], &[(&[0], &[1.0], 0.0)]);
        let err = solve_qp(&inst, &[], &[], &[], None, &QpOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Unbounded));
    }

    #[test]
    fn stationarity_invariant_on_random_qps() {
        // dual feasibility: P x + q + A^T nu = 0 within 1e-7
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..20 {
            let n = 4;
            // P = G^T G + 0.1 I
            let mut g = vec![vec![0.0; n]; n];
            for row in g.iter_mut() {
                for v in row.iter_mut() {
                    *v = next();
                }
            }
            let mut p_entries = Vec::new();
            for i in 0..n {
                for j in i..n {
                    let mut acc = if i == j { 0.1 } else { 0.0 };
                    for k in 0..n {
                        acc += g[k][i] * g[k][j];
                    }
                    p_entries.push((i, j, acc));
                }
            }
            let q: Vec<f64> = (0..n).map(|_| next()).collect();
            // box constraints
            let mut rows: Vec<(Vec<usize>, Vec<f64>, f64)> = Vec::new();
            for i in 0..n {
                rows.push((vec![i], vec![1.0], 0.8));
                rows.push((vec![i], vec![-1.0], 0.8));
            }
            let row_refs: Vec<(&[usize], &[f64], f64)> = rows
                .iter()
                .map(|(c, v, b)| (c.as_slice(), v.as_slice(), *b))
                .collect();
            let inst = instance(n, &p_entries, q.clone(), &row_refs);
            let sol = solve_qp(&inst, &[], &[], &[], None, &QpOptions::default()).unwrap();
            assert_eq!(sol.status, QpStatus::Optimal);
            let mut stat = q.clone();
            inst.p_upper.sym_matvec_acc(&sol.x, &mut stat);
            for r in 0..inst.m {
                let (idx, vals) = inst.a.row(r);
                for (&c, &v) in idx.iter().zip(vals) {
                    stat[c] += sol.duals[r] * v;
                }
            }
            assert!(norm_inf(&stat) <= 1e-7, "stationarity {}", norm_inf(&stat));
        }
    }

    /// Long-run projected gradient on a box-constrained QP; the independent
    /// oracle for solve_qp.
    fn projected_gradient_box(
        p_dense: &[Vec<f64>],
        q: &[f64],
        lo: f64,
        hi: f64,
        iters: usize,
    ) -> Vec<f64> {
        let n = q.len();
        // Lipschitz constant upper bound: row-sum norm
        let lip: f64 = p_dense
            .iter()
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let step = 1.0 / lip.max(1e-12);
        let mut x = vec![0.0; n];
        for _ in 0..iters {
            let mut grad = q.to_vec();
            for i in 0..n {
                for j in 0..n {
                    grad[i] += p_dense[i][j] * x[j];
                }
            }
            for i in 0..n {
                x[i] = (x[i] - step * grad[i]).clamp(lo, hi);
            }
        }
        x
    }

    #[test]
    fn matches_projected_gradient_oracle() {
        // random PSD QP, n = 6, m = 12 box rows, oracle run long enough
        // that its fixed point is within 1e-9
        let mut state = 1234567u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let n = 6;
        let mut gmat = vec![vec![0.0; n]; n];
        for row in gmat.iter_mut() {
            for v in row.iter_mut() {
                *v = next();
            }
        }
        let mut p_dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = if i == j { 0.5 } else { 0.0 };
                for k in 0..n {
                    acc += gmat[k][i] * gmat[k][j];
                }
                p_dense[i][j] = acc;
            }
        }
        let q: Vec<f64> = (0..n).map(|_| next() * 2.0).collect();
        let mut p_entries = Vec::new();
        for i in 0..n {
            for j in i..n {
                p_entries.push((i, j, p_dense[i][j]));
            }
        }
        let mut rows: Vec<(Vec<usize>, Vec<f64>, f64)> = Vec::new();
        for i in 0..n {
            rows.push((vec![i], vec![1.0], 0.6));
            rows.push((vec![i], vec![-1.0], 0.6));
        }
        let row_refs: Vec<(&[usize], &[f64], f64)> = rows
            .iter()
            .map(|(c, v, b)| (c.as_slice(), v.as_slice(), *b))
            .collect();
        let inst = instance(n, &p_entries, q.clone(), &row_refs);
        let sol = solve_qp(&inst, &[], &[], &[], None, &QpOptions::default()).unwrap();
        let oracle = projected_gradient_box(&p_dense, &q, -0.6, 0.6, 400_000);
        for i in 0..n {
            assert!(
                (sol.x[i] - oracle[i]).abs() < 1e-7,
                "x[{i}]: {} vs oracle {}",
                sol.x[i],
                oracle[i]
            );
        }
    }

    #[test]
    fn warm_start_reduces_iterations() {
        let inst = instance(
            2,
            &[(0, 0, 1.0), (1, 1, 1.0)],
            vec![-3.0, -4.0],
            &[
                (&[0], &[1.0], 1.0),
                (&[1], &[1.0], 1.0),
                (&[0], &[-1.0], 0.0),
                (&[1], &[-1.0], 0.0),
            ],
        );
        let cold = solve_qp(&inst, &[], &[], &[], None, &QpOptions::default()).unwrap();
        let warm = solve_qp(&inst, &[], &[], &[], Some(&cold.x), &QpOptions::default()).unwrap();
        assert!((warm.objective - cold.objective).abs() < 1e-10);
        assert!(warm.iterations <= cold.iterations);
    }
}
