//! Online decoder: reduced-problem KKT assembly, factorization, per-strategy
//! factor caching, and candidate evaluation by substitution only.
//!
//! For a strategy (T, x_I) the reduced problem is an equality-constrained QP
//! whose optimality conditions form the symmetric system
//!
//! ```text
//! [ P    A_T^T  I_I^T ] [x ]   [ -q  ]
//! [ A_T    0      0   ] [nu] = [ b_T ]
//! [ I_I    0      0   ]        [ x_I ]
//! ```
//!
//! of dimension q = n + |T| + d. When P and A do not depend on theta the
//! factors are computed offline once per strategy and the online step is
//! forward/backward substitution.

use std::cell::Cell;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, LdlFactors, LdlOptions};
use crate::problem::{violation, InstanceData, Strategy};
use crate::sparse::CooMatrix;

/// Infeasibility tolerance for accepting a decoded candidate.
pub const EPS_INFEAS: f64 = 1e-4;
/// A decode whose KKT residual exceeds this is treated as failed.
pub const DECODE_RESIDUAL_TOL: f64 = 1e-6;
/// Quasi-definite regularization magnitude.
pub const KKT_DELTA: f64 = 1e-8;
/// Refinement step cap per solve.
pub const MAX_REFINE: usize = 10;

thread_local! {
    static FACTORIZE_OPS: Cell<u64> = const { Cell::new(0) };
    static SOLVE_OPS: Cell<u64> = const { Cell::new(0) };
}

/// (factorizations, substitution solves) performed by this thread.
pub fn op_counters() -> (u64, u64) {
    (FACTORIZE_OPS.with(Cell::get), SOLVE_OPS.with(Cell::get))
}

pub fn reset_op_counters() {
    FACTORIZE_OPS.with(|c| c.set(0));
    SOLVE_OPS.with(|c| c.set(0));
}

/// Assembled reduced-problem KKT system.
#[derive(Debug, Clone)]
pub struct KktSystem {
    pub dim: usize,
    pub n: usize,
    pub n_tight: usize,
    pub d: usize,
    pub k_upper: crate::sparse::CscMatrix,
    pub rhs: Vec<f64>,
}

/// Build the KKT system for a strategy on an instantiated problem.
pub fn assemble(
    instance: &InstanceData,
    strategy: &Strategy,
    integer_indices: &[usize],
) -> Result<KktSystem> {
    let n = instance.n;
    let tight = strategy.tight_set();
    let d = integer_indices.len();
    if strategy.integer_values().len() != d {
        return Err(Error::Dimension(format!(
            "strategy carries {} integer values, problem has {d}",
            strategy.integer_values().len()
        )));
    }
    if let Some(&bad) = tight.iter().find(|&&i| i >= instance.m) {
        return Err(Error::Dimension(format!(
            "tight row {bad} outside 0..{}",
            instance.m
        )));
    }
    let dim = n + tight.len() + d;
    let mut coo = CooMatrix::new(dim, dim);
    for j in 0..n {
        let (idx, vals) = instance.p_upper.col(j);
        for (&i, &v) in idx.iter().zip(vals) {
            coo.push(i, j, v);
        }
    }
    for i in 0..dim {
        coo.push(i, i, 0.0);
    }
    for (t, &row) in tight.iter().enumerate() {
        let (idx, vals) = instance.a.row(row);
        for (&c, &v) in idx.iter().zip(vals) {
            coo.push(c, n + t, v);
        }
    }
    for (k, &var) in integer_indices.iter().enumerate() {
        coo.push(var, n + tight.len() + k, 1.0);
    }

    let mut rhs = Vec::with_capacity(dim);
    rhs.extend(instance.q.iter().map(|&v| -v));
    rhs.extend(tight.iter().map(|&row| instance.b[row]));
    rhs.extend(strategy.integer_values().iter().map(|&v| v as f64));

    Ok(KktSystem {
        dim,
        n,
        n_tight: tight.len(),
        d,
        k_upper: coo.to_csc(),
        rhs,
    })
}

/// Factor a KKT system with quasi-definite regularization (+delta on the
/// primal block, -delta on the constraint blocks) and a minimum-degree
/// permutation.
pub fn factorize(sys: &KktSystem) -> Result<LdlFactors> {
    FACTORIZE_OPS.with(|c| c.set(c.get() + 1));
    let mut signs = vec![1i8; sys.dim];
    for s in signs.iter_mut().skip(sys.n) {
        *s = -1;
    }
    let perm = linalg::min_degree_order(&sys.k_upper);
    let opts = LdlOptions {
        delta: KKT_DELTA,
        eps: 1e-13,
    };
    linalg::ldl_factor(&sys.k_upper, &perm, &signs, opts).map_err(|_| Error::DegenerateStrategy)
}

/// A decoded candidate solution.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub x: Vec<f64>,
    pub nu: Vec<f64>,
    pub objective: f64,
    pub violation: f64,
    pub used_cache: bool,
    pub residual: f64,
}

/// Solve the reduced KKT system for a strategy. Uses cached factors when
/// available (and the cache is valid for this problem); otherwise factors
/// per call.
pub fn decode(
    instance: &InstanceData,
    strategy: &Strategy,
    integer_indices: &[usize],
    cache: Option<&FactorCache>,
) -> Result<Decoded> {
    let sys = assemble(instance, strategy, integer_indices)?;
    let mut used_cache = false;
    let cached;
    let fresh;
    let factors: &LdlFactors = match cache.and_then(|c| c.get(strategy)) {
        Some(f) => {
            used_cache = true;
            cached = f;
            cached
        }
        None => {
            fresh = factorize(&sys)?;
            &fresh
        }
    };
    SOLVE_OPS.with(|c| c.set(c.get() + 1));
    let sol = linalg::solve_refined(factors, &sys.k_upper, &sys.rhs, MAX_REFINE, 1e-14);
    if sol.residual > DECODE_RESIDUAL_TOL {
        return Err(Error::DecodeFailed {
            residual: sol.residual,
            tol: DECODE_RESIDUAL_TOL,
        });
    }
    let x: Vec<f64> = sol.x[..sys.n].to_vec();
    let nu: Vec<f64> = sol.x[sys.n..].to_vec();
    let objective = instance.objective(&x);
    let viol = violation(instance, &x);
    Ok(Decoded {
        x,
        nu,
        objective,
        violation: viol,
        used_cache,
        residual: sol.residual,
    })
}

/// One candidate's evaluation; failed decodes carry infinite violation.
#[derive(Debug, Clone)]
pub struct CandidateEval {
    /// Index into the candidate list handed to `evaluate_candidates`.
    pub candidate: usize,
    pub objective: f64,
    pub violation: f64,
    pub decode_ok: bool,
    pub x: Option<Vec<f64>>,
}

/// Decode every candidate independently and rank: feasible (violation <=
/// EPS_INFEAS) first by objective, then infeasible by violation; ties break
/// by candidate order. Fails only when every decode fails.
pub fn evaluate_candidates(
    instance: &InstanceData,
    candidates: &[&Strategy],
    integer_indices: &[usize],
    cache: Option<&FactorCache>,
    parallel: bool,
) -> Result<Vec<CandidateEval>> {
    if candidates.is_empty() {
        return Err(Error::NoFeasibleStrategy {
            best_violation: f64::INFINITY,
        });
    }
    let eval_one = |(i, s): (usize, &&Strategy)| match decode(instance, s, integer_indices, cache) {
        Ok(dec) => CandidateEval {
            candidate: i,
            objective: dec.objective,
            violation: dec.violation,
            decode_ok: true,
            x: Some(dec.x),
        },
        Err(_) => CandidateEval {
            candidate: i,
            objective: f64::INFINITY,
            violation: f64::INFINITY,
            decode_ok: false,
            x: None,
        },
    };
    let mut evals: Vec<CandidateEval> = if parallel {
        candidates.par_iter().enumerate().map(eval_one).collect()
    } else {
        candidates.iter().enumerate().map(eval_one).collect()
    };
    if evals.iter().all(|e| !e.decode_ok) {
        return Err(Error::NoFeasibleStrategy {
            best_violation: f64::INFINITY,
        });
    }
    evals.sort_by(|a, b| {
        let fa = a.violation <= EPS_INFEAS;
        let fb = b.violation <= EPS_INFEAS;
        fb.cmp(&fa)
            .then_with(|| {
                if fa && fb {
                    a.objective.total_cmp(&b.objective)
                } else {
                    a.violation.total_cmp(&b.violation)
                }
            })
            .then_with(|| a.candidate.cmp(&b.candidate))
    });
    Ok(evals)
}

/// The winning candidate, if any candidate is feasible.
pub fn best_feasible(evals: &[CandidateEval]) -> Option<&CandidateEval> {
    evals.first().filter(|e| e.violation <= EPS_INFEAS)
}

const CACHE_MAGIC: &[u8; 8] = b"PMQCACH1";

/// Per-strategy factor store. Entries exist only when the problem's P and A
/// are parameter-independent.
#[derive(Debug, Default)]
pub struct FactorCache {
    pub matrices_parametric: bool,
    pub problem_hash: [u8; 32],
    entries: HashMap<[u8; 32], LdlFactors>,
}

impl FactorCache {
    /// Build factors for every strategy. For problems with parametric
    /// matrices the cache stays empty and decode factorizes per call.
    pub fn build(
        matrices_parametric: bool,
        problem_hash: [u8; 32],
        instance: &InstanceData,
        strategies: &[Strategy],
        integer_indices: &[usize],
        parallel: bool,
    ) -> Result<FactorCache> {
        let mut cache = FactorCache {
            matrices_parametric,
            problem_hash,
            entries: HashMap::new(),
        };
        if matrices_parametric {
            return Ok(cache);
        }
        let factor_one = |s: &Strategy| -> Result<([u8; 32], LdlFactors)> {
            let sys = assemble(instance, s, integer_indices)?;
            let f = factorize(&sys)?;
            Ok((s.stable_hash(), f))
        };
        let results: Vec<Result<([u8; 32], LdlFactors)>> = if parallel {
            strategies.par_iter().map(factor_one).collect()
        } else {
            strategies.iter().map(factor_one).collect()
        };
        for r in results {
            let (h, f) = r?;
            cache.entries.insert(h, f);
        }
        Ok(cache)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, strategy: &Strategy) -> Option<&LdlFactors> {
        self.entries.get(&strategy.stable_hash())
    }

    /// Binary sidecar format: magic, problem hash, then per entry the
    /// strategy hash and the factor arrays.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&self.problem_hash)?;
        w.write_all(&[u8::from(self.matrices_parametric)])?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        let mut keys: Vec<&[u8; 32]> = self.entries.keys().collect();
        keys.sort();
        for key in keys {
            let f = &self.entries[key];
            w.write_all(key)?;
            write_usize_vec(&mut w, &[f.n])?;
            write_usize_vec(&mut w, &f.perm)?;
            write_usize_vec(&mut w, &f.lcolptr)?;
            write_usize_vec(&mut w, &f.lrowidx)?;
            write_f64_vec(&mut w, &f.lvals)?;
            write_f64_vec(&mut w, &f.d)?;
        }
        Ok(())
    }

    pub fn load(path: &Path, expected_problem_hash: &[u8; 32]) -> Result<FactorCache> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Format("bad cache magic".into()));
        }
        let mut problem_hash = [0u8; 32];
        r.read_exact(&mut problem_hash)?;
        if &problem_hash != expected_problem_hash {
            return Err(Error::HashMismatch(
                "cache was built for a different problem file".into(),
            ));
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let mut count = [0u8; 8];
        r.read_exact(&mut count)?;
        let count = u64::from_le_bytes(count) as usize;
        let mut entries = HashMap::with_capacity(count);
        for _ in 0..count {
            let mut key = [0u8; 32];
            r.read_exact(&mut key)?;
            let n = read_usize_vec(&mut r)?[0];
            let perm = read_usize_vec(&mut r)?;
            let lcolptr = read_usize_vec(&mut r)?;
            let lrowidx = read_usize_vec(&mut r)?;
            let lvals = read_f64_vec(&mut r)?;
            let d = read_f64_vec(&mut r)?;
            let mut iperm = vec![0usize; n];
            for (k, &p) in perm.iter().enumerate() {
                iperm[p] = k;
            }
            let dinv = d.iter().map(|&v| 1.0 / v).collect();
            entries.insert(
                key,
                LdlFactors {
                    n,
                    perm,
                    iperm,
                    lcolptr,
                    lrowidx,
                    lvals,
                    d,
                    dinv,
                    clamped: 0,
                },
            );
        }
        Ok(FactorCache {
            matrices_parametric: flag[0] != 0,
            problem_hash,
            entries,
        })
    }
}

fn write_usize_vec<W: Write>(w: &mut W, v: &[usize]) -> Result<()> {
    w.write_all(&(v.len() as u64).to_le_bytes())?;
    for &x in v {
        w.write_all(&(x as u64).to_le_bytes())?;
    }
    Ok(())
}

fn write_f64_vec<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    w.write_all(&(v.len() as u64).to_le_bytes())?;
    for &x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_usize_vec<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut out = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        out.push(u64::from_le_bytes(buf) as usize);
    }
    Ok(out)
}

fn read_f64_vec<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut out = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
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
    fn empty_strategy_solves_unconstrained() {
        // K = P: min (1/2) 2 x^2 - 2x  ->  x = 1
        let inst = instance(1, &[(0, 0, 2.0)], vec![-2.0], &[]);
        let s = Strategy::new(vec![], vec![]);
        let sys = assemble(&inst, &s, &[]).unwrap();
        assert_eq!(sys.dim, 1);
        let dec = decode(&inst, &s, &[], None).unwrap();
        assert!((dec.x[0] - 1.0).abs() < 1e-9);
        assert!(!dec.used_cache);
    }

    #[test]
    fn tight_row_at_free_optimum_gives_zero_dual() {
        // n=1, P=[2], q=[-2], T={0} with A=[1], b=[1] -> x=1, nu=0
        let inst = instance(1, &[(0, 0, 2.0)], vec![-2.0], &[(&[0], &[1.0], 1.0)]);
        let s = Strategy::new(vec![0], vec![]);
        let sys = assemble(&inst, &s, &[]).unwrap();
        assert_eq!(sys.dim, 1 + 1);
        let dec = decode(&inst, &s, &[], None).unwrap();
        assert!((dec.x[0] - 1.0).abs() < 1e-9);
        assert!(dec.nu[0].abs() < 1e-7);
    }

    #[test]
    fn fully_determined_square_system() {
        // d=0, T = all rows of invertible A (n=m): x = A^{-1} b
        let inst = instance(
            2,
            &[],
            vec![0.0, 0.0],
            &[(&[0, 1], &[1.0, 1.0], 3.0), (&[0, 1], &[1.0, -1.0], 1.0)],
        );
        let s = Strategy::new(vec![0, 1], vec![]);
        let dec = decode(&inst, &s, &[], None).unwrap();
        assert!((dec.x[0] - 2.0).abs() < 1e-8);
        assert!((dec.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn kkt_dimension_matches_formula() {
        let inst = instance(
            3,
            &[(0, 0, 1.0)],
            vec![0.0; 3],
            &[
                (&[0], &[1.0], 1.0),
                (&[1], &[1.0], 1.0),
                (&[2], &[1.0], 1.0),
            ],
        );
        let s = Strategy::new(vec![0, 2], vec![1]);
        let sys = assemble(&inst, &s, &[1]).unwrap();
        assert_eq!(sys.dim, 3 + 2 + 1);
        assert_eq!(sys.rhs.len(), sys.dim);
        assert_eq!(sys.rhs[3], 1.0); // b of tight row 0
        assert_eq!(sys.rhs[5], 1.0); // integer value
    }

    #[test]
    fn wrong_integer_assignment_violates() {
        // x binary forced by strategy to 1, but rows demand x <= 0.2
        let inst = instance(
            1,
            &[(0, 0, 2.0)],
            vec![0.0],
            &[(&[0], &[1.0], 0.2), (&[0], &[-1.0], 0.0)],
        );
        let wrong = Strategy::new(vec![], vec![1]);
        let dec = decode(&inst, &wrong, &[0], None).unwrap();
        assert!(dec.violation > EPS_INFEAS, "violation {}", dec.violation);
    }

    #[test]
    fn correct_candidate_wins_over_infeasible() {
        // min x^2 - 2x, x in {0, 1} with box rows; optimum x = 1
        let inst = instance(
            1,
            &[(0, 0, 2.0)],
            vec![-2.0],
            &[(&[0], &[1.0], 1.0), (&[0], &[-1.0], 0.0)],
        );
        let good = Strategy::new(vec![0], vec![1]);
        let infeasible = Strategy::new(vec![], vec![5]); // violates x <= 1
        let cands = [&infeasible, &good];
        let evals = evaluate_candidates(&inst, &cands, &[0], None, false).unwrap();
        assert_eq!(evals[0].candidate, 1);
        assert!(best_feasible(&evals).is_some());
        // feasibility-first: the infeasible one loses even with lower objective
        assert!(evals[1].violation > EPS_INFEAS);
    }

    #[test]
    fn cache_roundtrip_and_counters() {
        let inst = instance(
            2,
            &[(0, 0, 2.0), (1, 1, 2.0)],
            vec![-2.0, -4.0],
            &[(&[0], &[1.0], 1.0), (&[1], &[1.0], 1.0)],
        );
        let s1 = Strategy::new(vec![0], vec![]);
        let s2 = Strategy::new(vec![1], vec![]);
        let cache = FactorCache::build(
            false,
            [7u8; 32],
            &inst,
            &[s1.clone(), s2.clone()],
            &[],
            false,
        )
        .unwrap();
        assert_eq!(cache.len(), 2);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bin");
        cache.save(&path).unwrap();
        let loaded = FactorCache::load(&path, &[7u8; 32]).unwrap();
        assert_eq!(loaded.len(), 2);
        assert!(FactorCache::load(&path, &[8u8; 32]).is_err());

        reset_op_counters();
        let dec = decode(&inst, &s1, &[], Some(&loaded)).unwrap();
        assert!(dec.used_cache);
        let (fact_ops, solve_ops) = op_counters();
        assert_eq!(fact_ops, 0, "cached decode must not factorize");
        assert_eq!(solve_ops, 1);
        assert!((dec.x[0] - 1.0).abs() < 1e-8);
        assert!((dec.x[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn parametric_matrices_leave_cache_empty() {
        let inst = instance(1, &[(0, 0, 2.0)], vec![0.0], &[(&[0], &[1.0], 1.0)]);
        let s = Strategy::new(vec![0], vec![]);
        let cache = FactorCache::build(true, [0u8; 32], &inst, &[s.clone()], &[], false).unwrap();
        assert!(cache.is_empty());
        let dec = decode(&inst, &s, &[], Some(&cache)).unwrap();
        assert!(!dec.used_cache);
    }

    #[test]
    fn best_of_k_winner_never_worsens() {
        // candidates ranked; prefix winners must be lexicographically
        // monotone in (infeasible, violation/objective)
        let inst = instance(
            1,
            &[(0, 0, 2.0)],
            vec![-2.0],
            &[(&[0], &[1.0], 1.0), (&[0], &[-1.0], 0.0)],
        );
        let s_opt = Strategy::new(vec![0], vec![1]);
        let s_zero = Strategy::new(vec![1], vec![0]);
        let s_bad = Strategy::new(vec![], vec![7]);
        let all = [&s_bad, &s_zero, &s_opt];
        let mut last_key = (true, f64::INFINITY);
        for k in 1..=3 {
            let evals = evaluate_candidates(&inst, &all[..k], &[0], None, false).unwrap();
            let w = &evals[0];
            let key = (w.violation > EPS_INFEAS, if w.violation > EPS_INFEAS { w.violation } else { w.objective });
            assert!(key <= last_key, "winner worsened at k={k}");
            last_key = key;
        }
    }
}
