//! Strategy collection: Good-Turing exploration with the probabilistic
//! stopping rule, frequency-based pruning, and the exact set-cover MILO at
//! toy scale.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kkt::{self, EPS_INFEAS};
use crate::problem::{extract_strategy, instantiate, ParameterInstance, ParametricMiqo, Strategy};
use crate::sampler::SamplerSpec;
use crate::solver::{solve_miqo_with, BnbOptions};
use crate::sparse::CooMatrix;

/// Constant in the missing-strategy confidence bound.
pub const GOOD_TURING_C: f64 = 2.0 * std::f64::consts::SQRT_2 + 1.732_050_807_568_877_2;

/// Deduplicated strategies; the index of a strategy is its label.
#[derive(Debug, Clone, Default)]
pub struct StrategyBank {
    strategies: Vec<Strategy>,
    index: HashMap<Strategy, usize>,
}

impl StrategyBank {
    pub fn new() -> Self {
        StrategyBank::default()
    }

    pub fn from_strategies(strategies: Vec<Strategy>) -> Self {
        let mut bank = StrategyBank::new();
        for s in strategies {
            bank.insert(s);
        }
        bank
    }

    /// Insert a strategy, returning its label and whether it was new.
    pub fn insert(&mut self, s: Strategy) -> (usize, bool) {
        if let Some(&i) = self.index.get(&s) {
            return (i, false);
        }
        let i = self.strategies.len();
        self.index.insert(s.clone(), i);
        self.strategies.push(s);
        (i, true)
    }

    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }

    pub fn get(&self, label: usize) -> &Strategy {
        &self.strategies[label]
    }

    pub fn strategies(&self) -> &[Strategy] {
        &self.strategies
    }
}

/// Good-Turing exploration state: G = N1/N and the confidence bound
/// G + c sqrt((1/N) ln(3/beta)).
#[derive(Debug, Clone)]
pub struct ExplorationState {
    pub n: u64,
    pub n1: u64,
    counts: Vec<u64>,
}

impl ExplorationState {
    pub fn new() -> Self {
        ExplorationState {
            n: 0,
            n1: 0,
            counts: Vec::new(),
        }
    }

    pub fn record(&mut self, label: usize) {
        if label >= self.counts.len() {
            self.counts.resize(label + 1, 0);
        }
        self.counts[label] += 1;
        match self.counts[label] {
            1 => self.n1 += 1,
            2 => self.n1 -= 1,
            _ => {}
        }
        self.n += 1;
    }

    pub fn good_turing(&self) -> f64 {
        if self.n == 0 {
            1.0
        } else {
            self.n1 as f64 / self.n as f64
        }
    }

    pub fn bound(&self, beta: f64) -> f64 {
        if self.n == 0 {
            return f64::INFINITY;
        }
        self.good_turing() + GOOD_TURING_C * ((3.0 / beta).ln() / self.n as f64).sqrt()
    }
}

impl Default for ExplorationState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BoundSatisfied,
    MaxSamples,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub n: u64,
    pub n1: u64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplorationTrace {
    pub steps: Vec<TraceStep>,
    pub stop: StopReason,
    /// Samples skipped because the oracle reported infeasible/failed.
    pub skipped: u64,
}

/// Labeled training data: theta vectors with oracle objectives and strategy
/// labels into a bank.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SampleSet {
    pub thetas: Vec<Vec<f64>>,
    pub f_star: Vec<f64>,
    pub labels: Vec<usize>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ExploreConfig {
    pub eps: f64,
    pub beta: f64,
    pub max_samples: usize,
    pub seed: u64,
    pub bnb: BnbOptions,
    pub parallel: bool,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            eps: 0.05,
            beta: 0.05,
            max_samples: 5_000,
            seed: 0,
            bnb: BnbOptions::default(),
            parallel: true,
        }
    }
}

#[derive(Debug)]
pub struct ExploreOutcome {
    pub samples: SampleSet,
    pub bank: StrategyBank,
    pub trace: ExplorationTrace,
}

/// Iterate sample -> solve -> extract strategy, updating the Good-Turing
/// bound after every accepted sample; stops when the bound drops to eps or
/// the sample budget is exhausted. Samples the oracle cannot solve are
/// skipped and counted (when the sampler filters feasibility they are simply
/// not part of the stream).
pub fn explore(
    problem: &ParametricMiqo,
    sampler: &SamplerSpec,
    cfg: &ExploreConfig,
) -> Result<ExploreOutcome> {
    if cfg.eps <= 0.0 || cfg.beta <= 0.0 || cfg.beta >= 1.0 {
        return Err(Error::Config("explore requires eps > 0, beta in (0,1)".into()));
    }
    if sampler.p_dim() != problem.p_dim {
        return Err(Error::Config(format!(
            "sampler p_dim {} does not match problem p_dim {}",
            sampler.p_dim(),
            problem.p_dim
        )));
    }
    let mut bank = StrategyBank::new();
    let mut state = ExplorationState::new();
    let mut samples = SampleSet::default();
    let mut steps = Vec::new();
    let mut skipped = 0u64;
    let mut stop = StopReason::MaxSamples;

    type Solved = Option<(Vec<f64>, f64, Strategy)>;
    let solve_one = |idx: u64| -> Result<Solved> {
        let theta = sampler.draw(cfg.seed, idx);
        let inst = instantiate(problem, &ParameterInstance::new(theta.clone()))?;
        match solve_miqo_with(&inst, &problem.integer_indices, &cfg.bnb) {
            Ok(sol) => match extract_strategy(&inst, &sol.x, &problem.integer_indices) {
                Ok(s) => Ok(Some((theta, sol.objective, s))),
                Err(_) => Ok(None),
            },
            Err(Error::Infeasible) => Ok(None),
            Err(Error::OracleExhausted(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };

    let batch = if cfg.parallel {
        (rayon::current_num_threads() * 4).max(8)
    } else {
        1
    };
    let mut next_idx = 0u64;
    'outer: while state.n < cfg.max_samples as u64 {
        let indices: Vec<u64> = (0..batch as u64).map(|k| next_idx + k).collect();
        next_idx += batch as u64;
        let solved: Vec<Result<Solved>> = if cfg.parallel {
            indices.par_iter().map(|&i| solve_one(i)).collect()
        } else {
            indices.iter().map(|&i| solve_one(i)).collect()
        };
        for r in solved {
            match r? {
                None => skipped += 1,
                Some((theta, f_star, strategy)) => {
                    let (label, _) = bank.insert(strategy);
                    state.record(label);
                    samples.thetas.push(theta);
                    samples.f_star.push(f_star);
                    samples.labels.push(label);
                    let bound = state.bound(cfg.beta);
                    steps.push(TraceStep {
                        n: state.n,
                        n1: state.n1,
                        bound,
                    });
                    if bound <= cfg.eps {
                        stop = StopReason::BoundSatisfied;
                        break 'outer;
                    }
                    if state.n >= cfg.max_samples as u64 {
                        break 'outer;
                    }
                }
            }
        }
        // a stream that never yields solvable samples must terminate
        if next_idx > 100 * cfg.max_samples as u64 + 1000 {
            return Err(Error::SamplerExhausted(next_idx as usize));
        }
    }

    Ok(ExploreOutcome {
        samples,
        bank,
        trace: ExplorationTrace {
            steps,
            stop,
            skipped,
        },
    })
}

/// Most frequent strategies covering strictly more than ceil((1-alpha) N)
/// samples. Occurrence ties break by first-seen label order. Returns labels
/// in selection (frequency) order.
pub fn select_frequent(labels: &[usize], n_strategies: usize, alpha: f64) -> Vec<usize> {
    let n = labels.len();
    let mut counts = vec![0u64; n_strategies];
    for &l in labels {
        counts[l] += 1;
    }
    let mut order: Vec<usize> = (0..n_strategies).collect();
    order.sort_by_key(|&s| (std::cmp::Reverse(counts[s]), s));
    let threshold = ((1.0 - alpha) * n as f64).ceil() as u64;
    let mut selected = Vec::new();
    let mut covered = 0u64;
    for s in order {
        if counts[s] == 0 && covered > 0 {
            break;
        }
        covered += counts[s];
        selected.push(s);
        if covered > threshold {
            break;
        }
    }
    selected
}

#[derive(Debug)]
pub struct PruneOutcome {
    /// Pruned bank; strategy order follows the frequency selection.
    pub bank: StrategyBank,
    /// New labels per sample, indices into the pruned bank.
    pub labels: Vec<usize>,
    pub alpha_final: f64,
    pub iterations: usize,
    /// Old labels of the kept strategies, in new-label order.
    pub kept_old_labels: Vec<usize>,
}

/// Initial discard fraction for pruning.
pub const PRUNE_ALPHA0: f64 = 0.05;

/// Prune strategies while keeping feasibility and bounded suboptimality:
/// select the frequent strategies, reassign each discarded sample to its
/// best selected strategy by decode objective (infinite when infeasible),
/// and halve alpha until every discarded sample is within
/// r_i <= f*_i + eps |f*_i|.
pub fn prune(
    problem: &ParametricMiqo,
    samples: &SampleSet,
    bank: &StrategyBank,
    eps: f64,
    max_it: usize,
    parallel: bool,
) -> Result<PruneOutcome> {
    if samples.is_empty() {
        return Err(Error::Config("prune needs at least one sample".into()));
    }
    let mut alpha = PRUNE_ALPHA0;
    for it in 1..=max_it {
        let selected = select_frequent(&samples.labels, bank.len(), alpha);
        let mut sel_pos = vec![usize::MAX; bank.len()];
        for (pos, &s) in selected.iter().enumerate() {
            sel_pos[s] = pos;
        }
        let discarded: Vec<usize> = (0..samples.len())
            .filter(|&i| sel_pos[samples.labels[i]] == usize::MAX)
            .collect();

        let reassign_one = |&i: &usize| -> Result<(usize, f64, usize)> {
            let inst = instantiate(problem, &ParameterInstance::new(samples.thetas[i].clone()))?;
            let mut best = (f64::INFINITY, usize::MAX);
            for (pos, &s) in selected.iter().enumerate() {
                let f_ij = match kkt::decode(&inst, bank.get(s), &problem.integer_indices, None) {
                    Ok(dec) if dec.violation <= EPS_INFEAS => dec.objective,
                    _ => f64::INFINITY,
                };
                if f_ij < best.0 {
                    best = (f_ij, pos);
                }
            }
            Ok((i, best.0, best.1))
        };
        let reassigned: Vec<Result<(usize, f64, usize)>> = if parallel {
            discarded.par_iter().map(reassign_one).collect()
        } else {
            discarded.iter().map(reassign_one).collect()
        };

        let mut ok = true;
        let mut new_assign: HashMap<usize, usize> = HashMap::new();
        for r in reassigned {
            let (i, r_i, pos) = r?;
            let budget = if eps.is_finite() {
                samples.f_star[i] + eps * samples.f_star[i].abs()
            } else {
                f64::INFINITY
            };
            if !(r_i <= budget) {
                ok = false;
                break;
            }
            new_assign.insert(i, pos);
        }

        if ok {
            let pruned =
                StrategyBank::from_strategies(selected.iter().map(|&s| bank.get(s).clone()).collect());
            let labels: Vec<usize> = (0..samples.len())
                .map(|i| {
                    let old = samples.labels[i];
                    if sel_pos[old] != usize::MAX {
                        sel_pos[old]
                    } else {
                        new_assign[&i]
                    }
                })
                .collect();
            return Ok(PruneOutcome {
                bank: pruned,
                labels,
                alpha_final: alpha,
                iterations: it,
                kept_old_labels: selected,
            });
        }
        alpha /= 2.0;
    }
    Err(Error::PruneFailed {
        eps,
        alpha: alpha * 2.0,
    })
}

/// Exact pruning MILO: minimize the number of selected strategies subject to
/// per-sample cost degradation, assignment, and linking constraints; solved
/// by the internal branch-and-bound with P = 0. Toy scale only.
pub fn prune_exact_milo(
    f_matrix: &[Vec<f64>],
    f_star: &[f64],
    eps: f64,
) -> Result<(Vec<bool>, Vec<usize>)> {
    let n_samples = f_matrix.len();
    if n_samples == 0 || f_star.len() != n_samples {
        return Err(Error::Config("empty or inconsistent F matrix".into()));
    }
    let m_strategies = f_matrix[0].len();
    let binaries = (n_samples as u64) * (m_strategies as u64);
    if binaries > 5_000 {
        return Err(Error::CombinatorialLimit(binaries, 5_000));
    }

    // variables: p_0..p_{M-1}, then z for finite (i, j) pairs
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (i, row) in f_matrix.iter().enumerate() {
        let mut any = false;
        for (j, &f) in row.iter().enumerate() {
            if f.is_finite() {
                pairs.push((i, j));
                any = true;
            }
        }
        if !any {
            return Err(Error::Infeasible);
        }
    }
    let nv = m_strategies + pairs.len();
    let z_at = |k: usize| m_strategies + k;

    let mut a = CooMatrix::new(0, nv); // rows counted below
    let mut b: Vec<f64> = Vec::new();
    let mut row = 0usize;
    let mut push_row = |a: &mut CooMatrix, b: &mut Vec<f64>, entries: &[(usize, f64)], rhs: f64| {
        for &(c, v) in entries {
            a.rows.push(row);
            a.cols.push(c);
            a.vals.push(v);
        }
        b.push(rhs);
        row += 1;
    };

    for i in 0..n_samples {
        // sum_j F_ij z_ij <= f*_i + eps |f*_i|
        let entries: Vec<(usize, f64)> = pairs
            .iter()
            .enumerate()
            .filter(|(_, &(pi, _))| pi == i)
            .map(|(k, &(_, j))| (z_at(k), f_matrix[i][j]))
            .collect();
        let rhs = f_star[i] + eps * f_star[i].abs();
        if !rhs.is_finite() {
            // eps = inf sentinel: degradation constraint disabled
        } else {
            push_row(&mut a, &mut b, &entries, rhs);
        }
        // sum_j z_ij = 1 as a row pair
        let ones: Vec<(usize, f64)> = pairs
            .iter()
            .enumerate()
            .filter(|(_, &(pi, _))| pi == i)
            .map(|(k, _)| (z_at(k), 1.0))
            .collect();
        push_row(&mut a, &mut b, &ones, 1.0);
        let neg: Vec<(usize, f64)> = ones.iter().map(|&(c, _)| (c, -1.0)).collect();
        push_row(&mut a, &mut b, &neg, -1.0);
    }
    for (k, &(_, j)) in pairs.iter().enumerate() {
        push_row(&mut a, &mut b, &[(z_at(k), 1.0), (j, -1.0)], 0.0);
    }
    for v in 0..nv {
        push_row(&mut a, &mut b, &[(v, 1.0)], 1.0);
        push_row(&mut a, &mut b, &[(v, -1.0)], 0.0);
    }
    a.nrows = row;

    let mut q = vec![0.0; nv];
    for qv in q.iter_mut().take(m_strategies) {
        *qv = 1.0;
    }
    let inst = crate::problem::InstanceData {
        n: nv,
        m: row,
        p_upper: CooMatrix::new(nv, nv).to_csc(),
        q,
        r: 0.0,
        a: a.to_csr(),
        b,
    };
    let ints: Vec<usize> = (0..nv).collect();
    let sol = solve_miqo_with(&inst, &ints, &BnbOptions::default())?;

    let selected: Vec<bool> = (0..m_strategies).map(|j| sol.x[j] > 0.5).collect();
    let mut assignment = vec![usize::MAX; n_samples];
    for (k, &(i, j)) in pairs.iter().enumerate() {
        if sol.x[z_at(k)] > 0.5 {
            assignment[i] = j;
        }
    }
    if assignment.iter().any(|&j| j == usize::MAX) {
        return Err(Error::Numerical("pruning MILO returned no assignment".into()));
    }
    Ok((selected, assignment))
}

const BANK_FORMAT_TAG: &str = "pmiqo-bank-v1";

#[derive(Debug, Serialize, Deserialize)]
struct BankFile {
    format: String,
    problem_hash: String,
    strategies: Vec<Strategy>,
    labels: Vec<usize>,
    trace: Option<ExplorationTrace>,
}

/// Persist a bank with per-sample labels and the exploration trace.
pub fn save_bank(
    path: &Path,
    problem_hash_hex: &str,
    bank: &StrategyBank,
    labels: &[usize],
    trace: Option<&ExplorationTrace>,
) -> Result<()> {
    let file = BankFile {
        format: BANK_FORMAT_TAG.to_string(),
        problem_hash: problem_hash_hex.to_string(),
        strategies: bank.strategies().to_vec(),
        labels: labels.to_vec(),
        trace: trace.cloned(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_bank(
    path: &Path,
) -> Result<(String, StrategyBank, Vec<usize>, Option<ExplorationTrace>)> {
    let file: BankFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if file.format != BANK_FORMAT_TAG {
        return Err(Error::Format(format!(
            "unsupported bank format tag '{}'",
            file.format
        )));
    }
    Ok((
        file.problem_hash,
        StrategyBank::from_strategies(file.strategies),
        file.labels,
        file.trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ParamMap;

    /// min (1/2) x^2 + theta x inside a generous box: single strategy (empty
    /// tight set, no integers) for every theta.
    fn single_strategy_problem() -> ParametricMiqo {
        let mut p = CooMatrix::new(1, 1);
        p.push(0, 0, 1.0);
        let mut a = CooMatrix::new(2, 1);
        a.push(0, 0, 1.0);
        a.push(1, 0, -1.0);
        let mut pm = ParamMap::default();
        pm.q.push(0, 0, 1.0);
        ParametricMiqo {
            n: 1,
            m: 2,
            p_dim: 1,
            integer_indices: vec![],
            p_base: p,
            q_base: vec![0.0],
            r_base: 0.0,
            a_base: a,
            b_base: vec![10.0, 10.0],
            param_map: pm,
            matrices_parametric: false,
        }
    }

    /// min (x - theta)^2 with x integer in a huge box: a fresh strategy for
    /// nearly every theta.
    fn all_distinct_problem() -> ParametricMiqo {
        let mut p = CooMatrix::new(1, 1);
        p.push(0, 0, 2.0);
        let mut a = CooMatrix::new(2, 1);
        a.push(0, 0, 1.0);
        a.push(1, 0, -1.0);
        let mut pm = ParamMap::default();
        pm.q.push(0, 0, -2.0);
        ParametricMiqo {
            n: 1,
            m: 2,
            p_dim: 1,
            integer_indices: vec![0],
            p_base: p,
            q_base: vec![0.0],
            r_base: 0.0,
            a_base: a,
            b_base: vec![1e6, 1e6],
            param_map: pm,
            matrices_parametric: false,
        }
    }

    #[test]
    fn single_class_stops_at_formula_n() {
        let problem = single_strategy_problem();
        let sampler = SamplerSpec::Box {
            lower: vec![-1.0],
            upper: vec![1.0],
            filter_feasible: false,
        };
        let cfg = ExploreConfig {
            eps: 0.5,
            beta: 0.1,
            max_samples: 10_000,
            seed: 3,
            parallel: false,
            ..ExploreConfig::default()
        };
        let out = explore(&problem, &sampler, &cfg).unwrap();
        assert_eq!(out.bank.len(), 1);
        assert_eq!(out.trace.stop, StopReason::BoundSatisfied);
        // with a single class N1 = 0 from the second sample on, so G = 0 and
        // stopping N is the first N with c sqrt(ln(3/beta)/N) <= eps
        let n = out.samples.len() as f64;
        let bound_at = |n: f64| GOOD_TURING_C * ((3.0f64 / 0.1).ln() / n).sqrt();
        assert!(bound_at(n) <= 0.5, "stopped too early: N = {n}");
        assert!(bound_at(n - 1.0) > 0.5, "stopped later than the formula N");
    }

    #[test]
    fn all_distinct_stream_never_stops() {
        let problem = all_distinct_problem();
        let sampler = SamplerSpec::Box {
            lower: vec![0.0],
            upper: vec![900_000.0],
            filter_feasible: false,
        };
        let cfg = ExploreConfig {
            eps: 0.5,
            beta: 0.1,
            max_samples: 40,
            seed: 1,
            parallel: false,
            ..ExploreConfig::default()
        };
        let out = explore(&problem, &sampler, &cfg).unwrap();
        assert_eq!(out.trace.stop, StopReason::MaxSamples);
        // virtually all strategies distinct: G stays ~1
        assert!(out.bank.len() >= 39);
    }

    #[test]
    fn bound_formula_matches_hand_computation() {
        let mut st = ExplorationState::new();
        for label in [0usize, 0, 1, 2] {
            st.record(label);
        }
        // counts: {0: 2, 1: 1, 2: 1} -> N1 = 2, N = 4, G = 0.5
        assert_eq!(st.n, 4);
        assert_eq!(st.n1, 2);
        let beta = 0.05;
        let expect = 0.5 + GOOD_TURING_C * ((3.0f64 / beta).ln() / 4.0).sqrt();
        assert!((st.bound(beta) - expect).abs() < 1e-15);
    }

    #[test]
    fn select_frequent_single_strategy() {
        let labels = vec![0usize; 50];
        for alpha in [0.01, 0.05, 0.3, 0.9] {
            assert_eq!(select_frequent(&labels, 1, alpha), vec![0]);
        }
    }

    #[test]
    fn select_frequent_uniform_needs_all() {
        // 10 strategies x 10 samples each, alpha = 0.05:
        // ceil(0.95 * 100) = 95, cumulative only exceeds it with all 10
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let sel = select_frequent(&labels, 10, 0.05);
        assert_eq!(sel.len(), 10);
    }

    #[test]
    fn select_frequent_skewed_takes_both() {
        // 90/10 split, alpha = 0.05: 90 <= ceil(95) forces the second
        let mut labels = vec![0usize; 90];
        labels.extend(vec![1usize; 10]);
        let sel = select_frequent(&labels, 2, 0.05);
        assert_eq!(sel, vec![0, 1]);
    }

    #[test]
    fn select_frequent_tie_breaks_first_seen() {
        let labels = vec![0, 1, 0, 1];
        let sel = select_frequent(&labels, 2, 0.5);
        assert_eq!(sel[0], 0);
    }

    /// Symmetric toy with two global optima: min (x0 + x1 - 1)^2 over
    /// binaries; strategies from (1,0) and (0,1) decode each other's samples
    /// at suboptimality zero.
    fn two_optima_problem() -> ParametricMiqo {
        let mut p = CooMatrix::new(2, 2);
        p.push(0, 0, 2.0);
        p.push(0, 1, 2.0);
        p.push(1, 1, 2.0);
        let mut a = CooMatrix::new(4, 2);
        a.push(0, 0, 1.0);
        a.push(1, 0, -1.0);
        a.push(2, 1, 1.0);
        a.push(3, 1, -1.0);
        ParametricMiqo {
            n: 2,
            m: 4,
            p_dim: 1,
            integer_indices: vec![0, 1],
            p_base: p,
            q_base: vec![-2.0, -2.0],
            r_base: 1.0,
            a_base: a,
            b_base: vec![1.0, 0.0, 1.0, 0.0],
            param_map: ParamMap::default(),
            matrices_parametric: false,
        }
    }

    #[test]
    fn prune_reassigns_duplicate_optima_at_zero_suboptimality() {
        let problem = two_optima_problem();
        let s_a = Strategy::new(vec![0, 3], vec![1, 0]); // x = (1, 0)
        let s_b = Strategy::new(vec![1, 2], vec![0, 1]); // x = (0, 1)
        let mut bank = StrategyBank::new();
        bank.insert(s_a);
        bank.insert(s_b);
        // 96 samples labeled A, 4 labeled B; all share f* = 0
        let n = 100;
        let mut samples = SampleSet::default();
        for i in 0..n {
            samples.thetas.push(vec![0.0]);
            samples.f_star.push(0.0);
            samples.labels.push(usize::from(i >= 96));
        }
        let out = prune(&problem, &samples, &bank, 1e-9, 10, false).unwrap();
        assert_eq!(out.bank.len(), 1, "duplicate optimum should be pruned");
        assert!(out.labels.iter().all(|&l| l == 0));
        assert_eq!(out.alpha_final, PRUNE_ALPHA0);
    }

    #[test]
    fn prune_eps_infinity_single_pass() {
        let problem = two_optima_problem();
        let s_a = Strategy::new(vec![0, 3], vec![1, 0]);
        let s_b = Strategy::new(vec![99], vec![9, 9]); // garbage strategy
        let mut bank = StrategyBank::new();
        bank.insert(s_a);
        bank.insert(s_b);
        let mut samples = SampleSet::default();
        for i in 0..100 {
            samples.thetas.push(vec![0.0]);
            samples.f_star.push(0.0);
            samples.labels.push(usize::from(i >= 96));
        }
        // tolerance disabled: keeps only the 1-alpha mass in one pass
        let out = prune(&problem, &samples, &bank, f64::INFINITY, 10, false).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.bank.len(), 1);
    }

    #[test]
    fn milo_diagonal_feasibility_selects_all() {
        let inf = f64::INFINITY;
        let f = vec![
            vec![1.0, inf, inf],
            vec![inf, 2.0, inf],
            vec![inf, inf, 3.0],
        ];
        let (sel, assign) = prune_exact_milo(&f, &[1.0, 2.0, 3.0], 0.1).unwrap();
        assert_eq!(sel, vec![true, true, true]);
        assert_eq!(assign, vec![0, 1, 2]);
    }

    #[test]
    fn milo_interchangeable_selects_one() {
        let f = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let (sel, _) = prune_exact_milo(&f, &[1.0, 2.0, 3.0], 0.1).unwrap();
        assert_eq!(sel.iter().filter(|&&s| s).count(), 1);
    }

    #[test]
    fn milo_infeasible_when_eps_too_small() {
        let f = vec![vec![2.0]];
        // budget 1.0 + eps < 2.0
        assert!(matches!(
            prune_exact_milo(&f, &[1.0], 1e-3),
            Err(Error::Infeasible) | Err(Error::CombinatorialLimit(_, _))
        ));
    }

    #[test]
    fn bank_file_roundtrip() {
        let mut bank = StrategyBank::new();
        bank.insert(Strategy::new(vec![3, 1], vec![0, 1]));
        bank.insert(Strategy::new(vec![], vec![1, 1]));
        let labels = vec![0, 1, 0];
        let trace = ExplorationTrace {
            steps: vec![TraceStep {
                n: 1,
                n1: 1,
                bound: 2.0,
            }],
            stop: StopReason::MaxSamples,
            skipped: 2,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");
        save_bank(&path, "abcd", &bank, &labels, Some(&trace)).unwrap();
        let (hash, bank2, labels2, trace2) = load_bank(&path).unwrap();
        assert_eq!(hash, "abcd");
        assert_eq!(bank2.len(), 2);
        assert_eq!(bank2.get(0), bank.get(0));
        assert_eq!(labels2, labels);
        assert_eq!(trace2.unwrap().skipped, 2);
    }
}
