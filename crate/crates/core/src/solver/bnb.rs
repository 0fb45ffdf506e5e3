//! Best-first branch-and-bound over the integer block.
//!
//! Integer variables must carry explicit bound rows in A (singleton rows),
//! which keeps every relaxation bounded without presolve. Branching picks
//! the most fractional variable, ties to the lowest index; node ties break
//! by creation order so a run is fully deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::problem::InstanceData;
use crate::solver::qp::{solve_qp, QpOptions, QpStatus};

/// Default absolute optimality gap.
pub const DEFAULT_GAP: f64 = 1e-6;
/// Default node budget.
pub const DEFAULT_NODE_LIMIT: u64 = 1_000_000;
/// Integrality tolerance when reading relaxation solutions.
pub const INT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiqoStatus {
    /// Globally optimal within the absolute gap.
    Optimal,
    /// Node limit hit; the reported solution is the incumbent.
    NodeLimit,
}

#[derive(Debug, Clone)]
pub struct MiqoSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub node_count: u64,
    pub status: MiqoStatus,
    /// Duals of the incumbent relaxation, over original rows.
    pub duals: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct BnbOptions {
    pub node_limit: u64,
    pub abs_gap: f64,
    /// Return the incumbent at the node limit instead of failing; the
    /// "heuristic" emulation mode.
    pub incumbent_on_limit: bool,
    pub qp: QpOptions,
}

impl Default for BnbOptions {
    fn default() -> Self {
        BnbOptions {
            node_limit: DEFAULT_NODE_LIMIT,
            abs_gap: DEFAULT_GAP,
            incumbent_on_limit: false,
            qp: QpOptions::default(),
        }
    }
}

/// Derive finite bounds for every integer variable from singleton rows of A.
pub fn integer_bounds(instance: &InstanceData, ints: &[usize]) -> Result<Vec<(i64, i64)>> {
    let mut lo = vec![f64::NEG_INFINITY; instance.n];
    let mut hi = vec![f64::INFINITY; instance.n];
    for r in 0..instance.m {
        let (idx, vals) = instance.a.row(r);
        if idx.len() == 1 {
            let (j, a) = (idx[0], vals[0]);
            let bound = instance.b[r] / a;
            if a > 0.0 {
                hi[j] = hi[j].min(bound);
            } else if a < 0.0 {
                lo[j] = lo[j].max(bound);
            }
        }
    }
    let mut out = Vec::with_capacity(ints.len());
    for &j in ints {
        if !lo[j].is_finite() || !hi[j].is_finite() {
            return Err(Error::MissingIntegerBounds(j));
        }
        let l = (lo[j] - INT_TOL).ceil() as i64;
        let h = (hi[j] + INT_TOL).floor() as i64;
        if l > h {
            return Err(Error::Infeasible);
        }
        out.push((l, h));
    }
    Ok(out)
}

struct Node {
    lo: Vec<i64>,
    hi: Vec<i64>,
    warm: Option<Vec<f64>>,
}

struct HeapEntry {
    bound: f64,
    seq: u64,
    idx: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.seq == other.seq
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse for lowest-bound-first with
        // creation-order tie break
        other
            .bound
            .partial_cmp(&self.bound)
            .unwrap_or(Ordering::Equal)
            .then(other.seq.cmp(&self.seq))
    }
}

/// Snap cost-free fractional integers to the nearest feasible integer value.
/// The objective does not involve these variables, so the polished point is
/// still a relaxation optimum and bounds remain valid.
fn polish_free_integers(
    instance: &InstanceData,
    ints: &[usize],
    lo: &[i64],
    hi: &[i64],
    x: &mut [f64],
) {
    let cost_free: Vec<bool> = ints
        .iter()
        .map(|&j| {
            if instance.q[j] != 0.0 {
                return false;
            }
            // any Hessian entry touching j makes it cost-relevant
            let (idx, _) = instance.p_upper.col(j);
            if !idx.is_empty() {
                return false;
            }
            for c in 0..instance.n {
                let (ridx, _) = instance.p_upper.col(c);
                if ridx.contains(&j) {
                    return false;
                }
            }
            true
        })
        .collect();

    let feasible_all = |x: &[f64], instance: &InstanceData| -> bool {
        for r in 0..instance.m {
            let slack = instance.b[r] - instance.a.row_dot(r, x);
            if slack < -1e-8 * (1.0 + instance.b[r].abs()) {
                return false;
            }
        }
        true
    };

    for (k, &j) in ints.iter().enumerate() {
        if !cost_free[k] {
            continue;
        }
        let frac = (x[j] - x[j].round()).abs();
        if frac <= INT_TOL {
            continue;
        }
        let old = x[j];
        for candidate in [old.round(), old.floor(), old.ceil()] {
            let c = candidate.clamp(lo[k] as f64, hi[k] as f64);
            x[j] = c;
            if (c - c.round()).abs() <= INT_TOL && feasible_all(x, instance) {
                break;
            }
            x[j] = old;
        }
    }
}

/// Solve the MIQO exactly with default options.
pub fn solve_miqo(instance: &InstanceData, ints: &[usize]) -> Result<MiqoSolution> {
    solve_miqo_with(instance, ints, &BnbOptions::default())
}

pub fn solve_miqo_with(
    instance: &InstanceData,
    ints: &[usize],
    opts: &BnbOptions,
) -> Result<MiqoSolution> {
    if ints.is_empty() {
        let sol = solve_qp(instance, &[], &[], &[], None, &opts.qp)?;
        return match sol.status {
            QpStatus::Optimal => Ok(MiqoSolution {
                x: sol.x,
                objective: sol.objective,
                node_count: 1,
                status: MiqoStatus::Optimal,
                duals: sol.duals,
            }),
            QpStatus::Infeasible => Err(Error::Infeasible),
            QpStatus::IterLimit => Err(Error::IterLimit(sol.iterations)),
        };
    }

    let root_bounds = integer_bounds(instance, ints)?;
    let mut nodes: Vec<Node> = Vec::new();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    nodes.push(Node {
        lo: root_bounds.iter().map(|&(l, _)| l).collect(),
        hi: root_bounds.iter().map(|&(_, h)| h).collect(),
        warm: None,
    });
    heap.push(HeapEntry {
        bound: f64::NEG_INFINITY,
        seq,
        idx: 0,
    });

    let mut incumbent: Option<MiqoSolution> = None;
    let mut node_count = 0u64;

    while let Some(entry) = heap.pop() {
        let inc_obj = incumbent.as_ref().map_or(f64::INFINITY, |s| s.objective);
        if entry.bound >= inc_obj - opts.abs_gap {
            // best-first: the global lower bound already proves optimality
            break;
        }
        if node_count >= opts.node_limit {
            return match incumbent {
                Some(mut sol) if opts.incumbent_on_limit => {
                    sol.status = MiqoStatus::NodeLimit;
                    sol.node_count = node_count;
                    Ok(sol)
                }
                _ => Err(Error::OracleExhausted(opts.node_limit)),
            };
        }
        node_count += 1;

        let node = &nodes[entry.idx];
        let fixed: Vec<(usize, f64)> = ints
            .iter()
            .enumerate()
            .filter(|&(k, _)| node.lo[k] == node.hi[k])
            .map(|(k, &j)| (j, node.lo[k] as f64))
            .collect();
        let bounds: Vec<(usize, f64, f64)> = ints
            .iter()
            .enumerate()
            .filter(|&(k, _)| node.lo[k] != node.hi[k])
            .map(|(k, &j)| (j, node.lo[k] as f64, node.hi[k] as f64))
            .collect();
        let warm = node.warm.clone();
        let relax = solve_qp(
            instance,
            &[],
            &fixed,
            &bounds,
            warm.as_deref(),
            &opts.qp,
        )?;
        match relax.status {
            QpStatus::Infeasible => continue,
            QpStatus::IterLimit => {
                return Err(Error::IterLimit(relax.iterations));
            }
            QpStatus::Optimal => {}
        }
        if relax.objective >= inc_obj - opts.abs_gap {
            continue;
        }

        let mut x = relax.x;
        let (node_lo, node_hi) = (nodes[entry.idx].lo.clone(), nodes[entry.idx].hi.clone());
        polish_free_integers(instance, ints, &node_lo, &node_hi, &mut x);

        let mut branch_var = None;
        let mut worst_frac = INT_TOL;
        for (k, &j) in ints.iter().enumerate() {
            let frac = (x[j] - x[j].round()).abs();
            if frac > worst_frac {
                worst_frac = frac;
                branch_var = Some(k);
            }
        }

        match branch_var {
            None => {
                // integral relaxation: candidate incumbent
                if relax.objective < inc_obj {
                    incumbent = Some(MiqoSolution {
                        x,
                        objective: relax.objective,
                        node_count,
                        status: MiqoStatus::Optimal,
                        duals: relax.duals,
                    });
                }
            }
            Some(k) => {
                let j = ints[k];
                let floor = x[j].floor() as i64;
                let bound = relax.objective;
                // down child then up child, fixed creation order
                for (lo_k, hi_k) in [(node_lo[k], floor), (floor + 1, node_hi[k])] {
                    if lo_k > hi_k {
                        continue;
                    }
                    let mut lo = node_lo.clone();
                    let mut hi = node_hi.clone();
                    lo[k] = lo_k;
                    hi[k] = hi_k;
                    seq += 1;
                    nodes.push(Node {
                        lo,
                        hi,
                        warm: Some(x.clone()),
                    });
                    heap.push(HeapEntry {
                        bound,
                        seq,
                        idx: nodes.len() - 1,
                    });
                }
            }
        }
    }

    match incumbent {
        Some(mut sol) => {
            sol.node_count = node_count;
            Ok(sol)
        }
        None => Err(Error::Infeasible),
    }
}

/// Exhaustively solve the QP for every integer assignment; the ground-truth
/// verifier for `solve_miqo`. Refuses assignments spaces larger than
/// `max_combos`.
pub fn enumerate_oracle(
    instance: &InstanceData,
    ints: &[usize],
    max_combos: u64,
) -> Result<(Vec<f64>, f64)> {
    if ints.is_empty() {
        let sol = solve_qp(instance, &[], &[], &[], None, &QpOptions::default())?;
        return match sol.status {
            QpStatus::Optimal => Ok((sol.x, sol.objective)),
            _ => Err(Error::Infeasible),
        };
    }
    let bounds = integer_bounds(instance, ints)?;
    let mut combos: u64 = 1;
    for &(l, h) in &bounds {
        combos = combos.saturating_mul((h - l + 1) as u64);
        if combos > max_combos {
            return Err(Error::CombinatorialLimit(combos, max_combos));
        }
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut assign: Vec<i64> = bounds.iter().map(|&(l, _)| l).collect();
    loop {
        let fixed: Vec<(usize, f64)> = ints
            .iter()
            .zip(&assign)
            .map(|(&j, &v)| (j, v as f64))
            .collect();
        let sol = solve_qp(instance, &[], &fixed, &[], None, &QpOptions::default())?;
        if sol.status == QpStatus::Optimal {
            let better = best.as_ref().map_or(true, |(_, f)| sol.objective < *f);
            if better {
                best = Some((sol.x, sol.objective));
            }
        }
        // odometer increment
        let mut k = 0;
        loop {
            if k == assign.len() {
                return best.ok_or(Error::Infeasible);
            }
            assign[k] += 1;
            if assign[k] <= bounds[k].1 {
                break;
            }
            assign[k] = bounds[k].0;
            k += 1;
        }
    }
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
    fn no_integers_reduces_to_qp() {
        let inst = instance(1, &[(0, 0, 1.0)], vec![-1.0], &[]);
        let sol = solve_miqo(&inst, &[]).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        let (xe, fe) = enumerate_oracle(&inst, &[], 4096).unwrap();
        assert!((xe[0] - 1.0).abs() < 1e-9);
        assert!((fe - sol.objective).abs() < 1e-12);
    }

    #[test]
    fn nearest_binary_wins() {
        // min (x - 0.4)^2 over x in {0, 1} -> x = 0, f = 0.16
        let inst = instance(
            1,
            &[(0, 0, 2.0)],
            vec![-0.8],
            &[(&[0], &[1.0], 1.0), (&[0], &[-1.0], 0.0)],
        );
        let mut shifted = inst;
        shifted.r = 0.16; // completes the square: (x-0.4)^2 = x^2 - 0.8x + 0.16
        let sol = solve_miqo(&shifted, &[0]).unwrap();
        assert_eq!(sol.x[0], 0.0);
        assert!((sol.objective - 0.16).abs() < 1e-9);
    }

    #[test]
    fn both_assignments_infeasible() {
        // binary x with extra rows forcing 0.3 <= x <= 0.7
        let inst = instance(
            1,
            &[(0, 0, 1.0)],
            vec![0.0],
            &[
                (&[0], &[1.0], 1.0),
                (&[0], &[-1.0], 0.0),
                (&[0], &[1.0], 0.7),
                (&[0], &[-1.0], -0.3),
            ],
        );
        assert!(matches!(
            enumerate_oracle(&inst, &[0], 4096),
            Err(Error::Infeasible)
        ));
        assert!(matches!(solve_miqo(&inst, &[0]), Err(Error::Infeasible)));
    }

    #[test]
    fn missing_bounds_detected() {
        let inst = instance(1, &[(0, 0, 1.0)], vec![0.0], &[(&[0], &[1.0], 1.0)]);
        assert!(matches!(
            integer_bounds(&inst, &[0]),
            Err(Error::MissingIntegerBounds(0))
        ));
    }

    #[test]
    fn knapsack_toy_agrees_with_enumeration() {
        // min -(3 x0 + 2 x1) + (1/2)(x0^2 + x1^2)*0.1 s.t. 2 x0 + x1 <= 2, binaries
        let inst = instance(
            2,
            &[(0, 0, 0.1), (1, 1, 0.1)],
            vec![-3.0, -2.0],
            &[
                (&[0, 1], &[2.0, 1.0], 2.0),
                (&[0], &[1.0], 1.0),
                (&[0], &[-1.0], 0.0),
                (&[1], &[1.0], 1.0),
                (&[1], &[-1.0], 0.0),
            ],
        );
        let bb = solve_miqo(&inst, &[0, 1]).unwrap();
        let (_, fe) = enumerate_oracle(&inst, &[0, 1], 4096).unwrap();
        assert!((bb.objective - fe).abs() < 1e-6);
    }

    #[test]
    fn node_limit_heuristic_returns_incumbent() {
        let inst = instance(
            2,
            &[(0, 0, 0.1), (1, 1, 0.1)],
            vec![-3.0, -2.0],
            &[
                (&[0, 1], &[2.0, 1.0], 2.0),
                (&[0], &[1.0], 1.0),
                (&[0], &[-1.0], 0.0),
                (&[1], &[1.0], 1.0),
                (&[1], &[-1.0], 0.0),
            ],
        );
        let exact = solve_miqo(&inst, &[0, 1]).unwrap();
        assert!(exact.node_count >= 1);
        let opts = BnbOptions {
            node_limit: 1,
            incumbent_on_limit: true,
            ..BnbOptions::default()
        };
        match solve_miqo_with(&inst, &[0, 1], &opts) {
            Ok(sol) => assert!(sol.objective >= exact.objective - 1e-9),
            Err(Error::OracleExhausted(_)) => {} // no incumbent after 1 node
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
