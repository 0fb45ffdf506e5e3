//! End-to-end pipeline: explore -> prune -> train -> cache offline, then
//! predict -> decode online; plus the benchmark driver with exact and
//! node-limited oracle baselines.
//!
//! Artifacts are hash-chained: the bank records the problem hash, the model
//! metadata records both the problem and bank hashes, and the factor cache
//! records the problem hash. Loading refuses mismatched combinations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bank::{self, ExploreConfig, StopReason, StrategyBank};
use crate::bench::{self, Family, GeneratorSettings};
use crate::error::{Error, Result};
use crate::format;
use crate::kkt::{self, FactorCache};
use crate::metrics::{self, EvalRecord, ReportRow};
use crate::net::{self, HyperParams, NetworkModel, TrainReport};
use crate::problem::{instantiate, InstanceData, ParameterInstance, ParametricMiqo};
use crate::sampler::SamplerSpec;
use crate::solver::{solve_miqo_with, BnbOptions, MiqoSolution};

pub const MODEL_META_TAG: &str = "pmiqo-model-v1";
pub const DATASET_TAG: &str = "pmiqo-dataset-v1";

fn default_eps() -> f64 {
    0.05
}
fn default_beta() -> f64 {
    0.05
}
fn default_max_samples() -> usize {
    2_000
}
fn default_prune_eps() -> f64 {
    1e-3
}
fn default_prune_max_it() -> usize {
    10
}
fn default_k_grid() -> Vec<usize> {
    vec![1, 3, 10]
}
fn default_node_limit() -> u64 {
    1_000_000
}
fn default_heuristic_nodes() -> u64 {
    50
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Run configuration for the offline pipeline; JSON-loadable with CLI
/// overrides on top.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: PathBuf,
    pub sampler: PathBuf,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_max_samples")]
    pub max_samples: usize,
    #[serde(default = "default_prune_eps")]
    pub prune_eps: f64,
    #[serde(default = "default_prune_max_it")]
    pub prune_max_it: usize,
    #[serde(default = "default_k_grid")]
    pub k_grid: Vec<usize>,
    #[serde(default)]
    pub tune_budget: usize,
    #[serde(default)]
    pub seed: u64,
    /// 0 means all available cores.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_node_limit")]
    pub node_limit: u64,
    #[serde(default = "default_heuristic_nodes")]
    pub heuristic_node_limit: u64,
}

impl RunConfig {
    pub fn new(problem: PathBuf, sampler: PathBuf, out_dir: PathBuf) -> Self {
        RunConfig {
            problem,
            sampler,
            eps: default_eps(),
            beta: default_beta(),
            max_samples: default_max_samples(),
            prune_eps: default_prune_eps(),
            prune_max_it: default_prune_max_it(),
            k_grid: default_k_grid(),
            tune_budget: 0,
            seed: 0,
            threads: 0,
            out_dir,
            node_limit: default_node_limit(),
            heuristic_node_limit: default_heuristic_nodes(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps <= 0.0 || self.beta <= 0.0 || self.prune_eps <= 0.0 {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.k_grid.is_empty() || self.k_grid.iter().any(|&k| k == 0) {
            return Err(Error::Config("k grid must contain positive entries".into()));
        }
        Ok(())
    }

    pub fn bnb_options(&self) -> BnbOptions {
        BnbOptions {
            node_limit: self.node_limit,
            ..BnbOptions::default()
        }
    }
}

/// Run a closure inside a rayon pool with the configured thread count.
pub fn run_in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
        .install(f)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn sha256_arr(bytes: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().into()
}

fn file_hash_hex(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub format: String,
    pub problem_hash: String,
    pub bank_hash: String,
    pub classes: usize,
    pub input_dim: usize,
    pub hyperparams: HyperParams,
    /// Model output index -> strategy index in the (pruned) bank.
    pub label_map: Vec<usize>,
    pub train: TrainReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactPaths {
    pub bank: PathBuf,
    pub dataset: PathBuf,
    pub model_bin: PathBuf,
    pub model_meta: PathBuf,
    pub cache: Option<PathBuf>,
    pub train_report: PathBuf,
}

impl ArtifactPaths {
    pub fn in_dir(dir: &Path, with_cache: bool) -> Self {
        ArtifactPaths {
            bank: dir.join("bank.json"),
            dataset: dir.join("dataset.json"),
            model_bin: dir.join("model.bin"),
            model_meta: dir.join("model.json"),
            cache: with_cache.then(|| dir.join("cache.bin")),
            train_report: dir.join("train_report.json"),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetFile {
    format: String,
    problem_hash: String,
    thetas: Vec<Vec<f64>>,
    f_star: Vec<f64>,
    labels: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub problem_hash: String,
    pub n_samples: usize,
    pub skipped: u64,
    pub stop: StopReason,
    pub m_unpruned: usize,
    pub m_pruned: usize,
    pub prune_alpha: f64,
    pub cache_entries: usize,
    pub matrices_parametric: bool,
    pub hyperparams: HyperParams,
    pub final_val_acc: f64,
    pub paths: ArtifactPaths,
    pub stage_seconds: Vec<(String, f64)>,
}

/// Offline pipeline: explore -> prune -> (tune +) train -> factorize and
/// cache; writes hash-chained artifacts into the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    run_in_pool(cfg.threads, || cmd_train_inner(cfg))
}

fn cmd_train_inner(cfg: &RunConfig) -> Result<TrainSummary> {
    let mut stage_seconds = Vec::new();

    let problem_bytes = std::fs::read(&cfg.problem).map_err(|e| Error::from(e).in_stage("load"))?;
    let problem = format::from_json(
        std::str::from_utf8(&problem_bytes)
            .map_err(|e| Error::Format(e.to_string()).in_stage("load"))?,
    )
    .map_err(|e| e.in_stage("load"))?;
    let problem_hash = sha256_hex(&problem_bytes);
    let sampler = SamplerSpec::load(&cfg.sampler).map_err(|e| e.in_stage("load"))?;

    // explore
    let t0 = Instant::now();
    let explore_cfg = ExploreConfig {
        eps: cfg.eps,
        beta: cfg.beta,
        max_samples: cfg.max_samples,
        seed: cfg.seed,
        bnb: cfg.bnb_options(),
        parallel: true,
    };
    let outcome =
        bank::explore(&problem, &sampler, &explore_cfg).map_err(|e| e.in_stage("explore"))?;
    if outcome.samples.is_empty() {
        return Err(Error::Config("exploration produced no solvable samples".into())
            .in_stage("explore"));
    }
    stage_seconds.push(("explore".to_string(), t0.elapsed().as_secs_f64()));

    // prune
    let t0 = Instant::now();
    let pruned = bank::prune(
        &problem,
        &outcome.samples,
        &outcome.bank,
        cfg.prune_eps,
        cfg.prune_max_it,
        true,
    )
    .map_err(|e| e.in_stage("prune"))?;
    stage_seconds.push(("prune".to_string(), t0.elapsed().as_secs_f64()));

    // tune + train
    let t0 = Instant::now();
    let hp = if cfg.tune_budget >= 1 {
        net::tune(
            &outcome.samples.thetas,
            &pruned.labels,
            pruned.bank.len(),
            cfg.tune_budget,
            cfg.seed,
        )
        .map_err(|e| e.in_stage("train"))?
    } else {
        HyperParams::default()
    };
    let (model, report) = net::train(
        &outcome.samples.thetas,
        &pruned.labels,
        pruned.bank.len(),
        &hp,
        cfg.seed,
    )
    .map_err(|e| e.in_stage("train"))?;
    stage_seconds.push(("train".to_string(), t0.elapsed().as_secs_f64()));

    // factorize and cache
    let t0 = Instant::now();
    let inst0 = instantiate(
        &problem,
        &ParameterInstance::new(outcome.samples.thetas[0].clone()),
    )
    .map_err(|e| e.in_stage("cache"))?;
    let cache = FactorCache::build(
        problem.matrices_parametric,
        sha256_arr(&problem_bytes),
        &inst0,
        pruned.bank.strategies(),
        &problem.integer_indices,
        true,
    )
    .map_err(|e| e.in_stage("cache"))?;
    stage_seconds.push(("cache".to_string(), t0.elapsed().as_secs_f64()));

    // write artifacts
    std::fs::create_dir_all(&cfg.out_dir)?;
    let paths = ArtifactPaths::in_dir(&cfg.out_dir, !problem.matrices_parametric);
    bank::save_bank(
        &paths.bank,
        &problem_hash,
        &pruned.bank,
        &pruned.labels,
        Some(&outcome.trace),
    )?;
    let dataset = DatasetFile {
        format: DATASET_TAG.to_string(),
        problem_hash: problem_hash.clone(),
        thetas: outcome.samples.thetas.clone(),
        f_star: outcome.samples.f_star.clone(),
        labels: pruned.labels.clone(),
    };
    std::fs::write(&paths.dataset, serde_json::to_string(&dataset)?)?;
    model.save(&paths.model_bin)?;
    let bank_hash = file_hash_hex(&paths.bank)?;
    let meta = ModelMeta {
        format: MODEL_META_TAG.to_string(),
        problem_hash: problem_hash.clone(),
        bank_hash,
        classes: model.classes,
        input_dim: model.input_dim,
        hyperparams: hp,
        label_map: (0..pruned.bank.len()).collect(),
        train: report.clone(),
    };
    std::fs::write(&paths.model_meta, serde_json::to_string_pretty(&meta)?)?;
    if let Some(cache_path) = &paths.cache {
        cache.save(cache_path)?;
    }
    let summary = TrainSummary {
        problem_hash,
        n_samples: outcome.samples.len(),
        skipped: outcome.trace.skipped,
        stop: outcome.trace.stop,
        m_unpruned: outcome.bank.len(),
        m_pruned: pruned.bank.len(),
        prune_alpha: pruned.alpha_final,
        cache_entries: cache.len(),
        matrices_parametric: problem.matrices_parametric,
        hyperparams: hp,
        final_val_acc: report.final_val_acc,
        paths,
        stage_seconds,
    };
    std::fs::write(
        &summary.paths.train_report,
        serde_json::to_string_pretty(&serde_json::json!({
            "problem_hash": summary.problem_hash,
            "n_samples": summary.n_samples,
            "skipped": summary.skipped,
            "stop": summary.stop,
            "m_unpruned": summary.m_unpruned,
            "m_pruned": summary.m_pruned,
            "prune_alpha": summary.prune_alpha,
            "cache_entries": summary.cache_entries,
            "matrices_parametric": summary.matrices_parametric,
            "stage_seconds": summary.stage_seconds,
            "train": report,
        }))?,
    )?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct ExploreSummary {
    pub problem_hash: String,
    pub n_samples: usize,
    pub skipped: u64,
    pub stop: StopReason,
    pub m_strategies: usize,
    pub final_bound: f64,
    pub bank_path: PathBuf,
    pub dataset_path: PathBuf,
}

/// Exploration stage alone: writes the raw (unpruned) bank and dataset.
pub fn cmd_explore(cfg: &RunConfig) -> Result<ExploreSummary> {
    cfg.validate()?;
    run_in_pool(cfg.threads, || {
        let problem_bytes = std::fs::read(&cfg.problem)?;
        let problem = format::from_json(
            std::str::from_utf8(&problem_bytes).map_err(|e| Error::Format(e.to_string()))?,
        )?;
        let problem_hash = sha256_hex(&problem_bytes);
        let sampler = SamplerSpec::load(&cfg.sampler)?;
        let explore_cfg = ExploreConfig {
            eps: cfg.eps,
            beta: cfg.beta,
            max_samples: cfg.max_samples,
            seed: cfg.seed,
            bnb: cfg.bnb_options(),
            parallel: true,
        };
        let outcome = bank::explore(&problem, &sampler, &explore_cfg)?;
        std::fs::create_dir_all(&cfg.out_dir)?;
        let bank_path = cfg.out_dir.join("bank_raw.json");
        let dataset_path = cfg.out_dir.join("dataset_raw.json");
        bank::save_bank(
            &bank_path,
            &problem_hash,
            &outcome.bank,
            &outcome.samples.labels,
            Some(&outcome.trace),
        )?;
        let dataset = DatasetFile {
            format: DATASET_TAG.to_string(),
            problem_hash: problem_hash.clone(),
            thetas: outcome.samples.thetas.clone(),
            f_star: outcome.samples.f_star.clone(),
            labels: outcome.samples.labels.clone(),
        };
        std::fs::write(&dataset_path, serde_json::to_string(&dataset)?)?;
        Ok(ExploreSummary {
            problem_hash,
            n_samples: outcome.samples.len(),
            skipped: outcome.trace.skipped,
            stop: outcome.trace.stop,
            m_strategies: outcome.bank.len(),
            final_bound: outcome.trace.steps.last().map_or(f64::INFINITY, |s| s.bound),
            bank_path,
            dataset_path,
        })
    })
}

#[derive(Debug, Serialize)]
pub struct PruneSummary {
    pub m_unpruned: usize,
    pub m_pruned: usize,
    pub alpha_final: f64,
    pub iterations: usize,
    pub bank_path: PathBuf,
}

/// Pruning stage alone: reads the raw bank + dataset written by
/// `cmd_explore` and writes the pruned bank with reassigned labels.
pub fn cmd_prune(cfg: &RunConfig) -> Result<PruneSummary> {
    cfg.validate()?;
    run_in_pool(cfg.threads, || {
        let problem_bytes = std::fs::read(&cfg.problem)?;
        let problem = format::from_json(
            std::str::from_utf8(&problem_bytes).map_err(|e| Error::Format(e.to_string()))?,
        )?;
        let problem_hash = sha256_hex(&problem_bytes);
        let (bank_hash, raw_bank, _labels, trace) =
            bank::load_bank(&cfg.out_dir.join("bank_raw.json"))?;
        if bank_hash != problem_hash {
            return Err(Error::HashMismatch(
                "raw bank belongs to a different problem".into(),
            ));
        }
        let dataset: DatasetFile =
            serde_json::from_str(&std::fs::read_to_string(cfg.out_dir.join("dataset_raw.json"))?)?;
        if dataset.problem_hash != problem_hash {
            return Err(Error::HashMismatch(
                "raw dataset belongs to a different problem".into(),
            ));
        }
        let samples = crate::bank::SampleSet {
            thetas: dataset.thetas,
            f_star: dataset.f_star,
            labels: dataset.labels,
        };
        let pruned = bank::prune(
            &problem,
            &samples,
            &raw_bank,
            cfg.prune_eps,
            cfg.prune_max_it,
            true,
        )?;
        let bank_path = cfg.out_dir.join("bank.json");
        bank::save_bank(
            &bank_path,
            &problem_hash,
            &pruned.bank,
            &pruned.labels,
            trace.as_ref(),
        )?;
        Ok(PruneSummary {
            m_unpruned: raw_bank.len(),
            m_pruned: pruned.bank.len(),
            alpha_final: pruned.alpha_final,
            iterations: pruned.iterations,
            bank_path,
        })
    })
}

/// Artifacts loaded and hash-verified for online solving.
pub struct Artifacts {
    pub problem: ParametricMiqo,
    pub problem_hash: String,
    pub bank: StrategyBank,
    pub model: NetworkModel,
    pub meta: ModelMeta,
    pub cache: Option<FactorCache>,
}

pub fn load_artifacts(problem_path: &Path, out_dir: &Path) -> Result<Artifacts> {
    let problem_bytes = std::fs::read(problem_path)?;
    let problem = format::from_json(std::str::from_utf8(&problem_bytes).map_err(|e| {
        Error::Format(e.to_string())
    })?)?;
    let problem_hash = sha256_hex(&problem_bytes);

    let paths = ArtifactPaths::in_dir(out_dir, !problem.matrices_parametric);
    let (bank_problem_hash, bank, _labels, _trace) = bank::load_bank(&paths.bank)?;
    if bank_problem_hash != problem_hash {
        return Err(Error::HashMismatch(
            "bank was built for a different problem file".into(),
        ));
    }
    let bank_hash = file_hash_hex(&paths.bank)?;
    let meta: ModelMeta = serde_json::from_str(&std::fs::read_to_string(&paths.model_meta)?)?;
    if meta.format != MODEL_META_TAG {
        return Err(Error::Format(format!("unsupported model meta tag '{}'", meta.format)));
    }
    if meta.problem_hash != problem_hash {
        return Err(Error::HashMismatch(
            "model was trained for a different problem file".into(),
        ));
    }
    if meta.bank_hash != bank_hash {
        return Err(Error::HashMismatch(
            "model was trained against a different bank".into(),
        ));
    }
    let model = NetworkModel::load(&paths.model_bin)?;
    if model.classes != bank.len() || meta.classes != bank.len() {
        return Err(Error::HashMismatch(
            "model class count does not match the bank".into(),
        ));
    }
    let cache = match &paths.cache {
        Some(p) if p.exists() => Some(FactorCache::load(p, &sha256_arr(&problem_bytes))?),
        _ => None,
    };
    Ok(Artifacts {
        problem,
        problem_hash,
        bank,
        model,
        meta,
        cache,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveOutput {
    pub x: Vec<f64>,
    pub objective: f64,
    pub violation: f64,
    /// Winner satisfies the infeasibility tolerance.
    pub feasible: bool,
    /// Bank index of the winning strategy.
    pub label: usize,
    pub used_cache: bool,
    pub time_nn: f64,
    pub time_decode: f64,
}

/// Online path: top-k prediction then parallel-evaluable candidate decode;
/// the returned solution is the best feasible candidate, or the least
/// violated one (feasible = false) when none passes the tolerance.
pub fn cmd_solve(arts: &Artifacts, theta: &[f64], k: usize) -> Result<SolveOutput> {
    if k == 0 || k > arts.bank.len() {
        return Err(Error::Config(format!(
            "k must be in 1..={}, got {k}",
            arts.bank.len()
        )));
    }
    let inst = instantiate(&arts.problem, &ParameterInstance::new(theta.to_vec()))?;
    let t0 = Instant::now();
    let top = arts.model.predict_topk(theta, k);
    let time_nn = t0.elapsed().as_secs_f64();

    let candidates: Vec<&crate::problem::Strategy> =
        top.iter().map(|&l| arts.bank.get(arts.meta.label_map[l])).collect();
    let t1 = Instant::now();
    let evals = kkt::evaluate_candidates(
        &inst,
        &candidates,
        &arts.problem.integer_indices,
        arts.cache.as_ref(),
        false,
    )?;
    let time_decode = t1.elapsed().as_secs_f64();

    let winner = &evals[0];
    let used_cache = arts.cache.as_ref().map_or(false, |c| !c.is_empty());
    let x = winner
        .x
        .clone()
        .ok_or(Error::NoFeasibleStrategy {
            best_violation: winner.violation,
        })?;
    Ok(SolveOutput {
        objective: winner.objective,
        violation: winner.violation,
        feasible: winner.violation <= kkt::EPS_INFEAS,
        label: arts.meta.label_map[top[winner.candidate]],
        used_cache,
        time_nn,
        time_decode,
        x,
    })
}

/// Benchmark configuration: a size grid for one family plus the shared run
/// settings.
#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub family: Family,
    pub sizes: Vec<usize>,
    pub k_grid: Vec<usize>,
    pub seed: u64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub prune_eps: f64,
    pub tune_budget: usize,
    pub threads: usize,
    pub out_dir: PathBuf,
    pub heuristic_node_limit: u64,
}

#[derive(Debug, Serialize)]
pub struct BenchmarkSummary {
    pub family: String,
    pub rows: Vec<ReportRow>,
    pub failed_sizes: Vec<(usize, String)>,
    pub csv_path: PathBuf,
}

struct TimedOracle {
    solution: Option<MiqoSolution>,
    seconds: f64,
}

fn timed_full_solve(inst: &InstanceData, ints: &[usize], opts: &BnbOptions) -> TimedOracle {
    let t0 = Instant::now();
    let solution = solve_miqo_with(inst, ints, opts).ok();
    TimedOracle {
        solution,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

/// Evaluate one test sample at every k: timed full oracle, node-limited
/// oracle, and the online path (median of 3 repeats).
#[allow(clippy::too_many_arguments)]
fn eval_test_sample(
    arts: &Artifacts,
    theta_id: u64,
    theta: &[f64],
    k_grid: &[usize],
    bnb: &BnbOptions,
    heuristic_nodes: u64,
) -> Result<Option<Vec<EvalRecord>>> {
    let inst = instantiate(&arts.problem, &ParameterInstance::new(theta.to_vec()))?;
    let full = timed_full_solve(&inst, &arts.problem.integer_indices, bnb);
    let Some(oracle) = full.solution else {
        return Ok(None); // infeasible draw: not part of the test set
    };
    let heuristic_opts = BnbOptions {
        node_limit: heuristic_nodes,
        incumbent_on_limit: true,
        ..*bnb
    };
    let t0 = Instant::now();
    let _ = solve_miqo_with(&inst, &arts.problem.integer_indices, &heuristic_opts);
    let time_heuristic = t0.elapsed().as_secs_f64();

    let mut records = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        let k_eff = k.min(arts.bank.len());
        let mut best: Option<SolveOutput> = None;
        let mut times = Vec::with_capacity(3);
        for _ in 0..3 {
            let out = cmd_solve(arts, theta, k_eff)?;
            times.push(out.time_nn + out.time_decode);
            best = Some(out);
        }
        let out = best.unwrap();
        let subopt = if out.violation <= metrics::EPS_INF {
            Some(metrics::suboptimality(
                out.objective,
                oracle.objective,
                out.violation,
            )?)
        } else {
            None
        };
        records.push(EvalRecord {
            theta_id,
            k,
            time_nn: out.time_nn,
            time_decode: out.time_decode,
            time_online: metrics::median(&times),
            time_full: Some(full.seconds),
            time_heuristic: Some(time_heuristic),
            subopt,
            infeas: out.violation,
        });
    }
    Ok(Some(records))
}

/// Full pipeline + baselines over a held-out test set for every size in the
/// grid; emits one CSV per family. Failures are isolated per size row.
pub fn cmd_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkSummary> {
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut failed: Vec<(usize, String)> = Vec::new();
    for &size in &cfg.sizes {
        match benchmark_one_size(cfg, size) {
            Ok(mut r) => rows.append(&mut r),
            Err(e) => failed.push((size, e.to_string())),
        }
    }
    let expected = cfg.sizes.len() * cfg.k_grid.len();
    let emit = metrics::emit_report(&cfg.family.to_string(), &rows, Some(expected), &cfg.out_dir)?;
    Ok(BenchmarkSummary {
        family: cfg.family.to_string(),
        rows,
        failed_sizes: failed,
        csv_path: emit.csv_path,
    })
}

fn benchmark_one_size(cfg: &BenchmarkConfig, size: usize) -> Result<Vec<ReportRow>> {
    let dir = cfg.out_dir.join(format!("{}_{size}", cfg.family));
    std::fs::create_dir_all(&dir)?;
    let settings = GeneratorSettings::new(cfg.family, size, cfg.seed);
    let bnb = BnbOptions::default();
    let (problem, sampler) = bench::generate(&settings, &bnb)?;
    let problem_path = dir.join("problem.json");
    let sampler_path = dir.join("sampler.json");
    format::save(&problem, &problem_path)?;
    sampler.save(&sampler_path)?;

    let mut run = RunConfig::new(problem_path.clone(), sampler_path, dir.clone());
    run.max_samples = cfg.train_samples;
    run.seed = cfg.seed;
    run.prune_eps = cfg.prune_eps;
    run.tune_budget = cfg.tune_budget;
    run.threads = cfg.threads;
    run.k_grid = cfg.k_grid.clone();
    run.heuristic_node_limit = cfg.heuristic_node_limit;
    let summary = cmd_train(&run)?;

    let arts = load_artifacts(&problem_path, &dir)?;
    let records = run_in_pool(cfg.threads, || {
        evaluate_holdout(
            &arts,
            &sampler,
            cfg.seed ^ 0x7e57_5e7,
            cfg.test_samples,
            &cfg.k_grid,
            &bnb,
            cfg.heuristic_node_limit,
        )
    })?;

    let mut rows = Vec::new();
    for &k in &cfg.k_grid {
        let cell: Vec<EvalRecord> = records.iter().filter(|r| r.k == k).cloned().collect();
        rows.push(ReportRow::from_records(
            size,
            problem.n,
            problem.m,
            summary.m_unpruned,
            summary.m_pruned,
            k,
            &cell,
        )?);
    }
    Ok(rows)
}

/// Evaluate `count` held-out samples (id-disjoint from training: a separate
/// seeded stream). Draws whose oracle reports infeasible are skipped.
pub fn evaluate_holdout(
    arts: &Artifacts,
    sampler: &SamplerSpec,
    test_seed: u64,
    count: usize,
    k_grid: &[usize],
    bnb: &BnbOptions,
    heuristic_nodes: u64,
) -> Result<Vec<EvalRecord>> {
    let budget = (count * 50).max(count + 16);
    let batch = (rayon::current_num_threads() * 4).max(8);
    let mut records = Vec::new();
    let mut kept = 0usize;
    let mut idx = 0u64;
    while kept < count && (idx as usize) < budget {
        let indices: Vec<u64> = (0..batch as u64).map(|k| idx + k).collect();
        idx += batch as u64;
        let solved: Vec<Result<Option<Vec<EvalRecord>>>> = indices
            .par_iter()
            .map(|&i| {
                let theta = sampler.draw(test_seed, i);
                eval_test_sample(arts, i, &theta, k_grid, bnb, heuristic_nodes)
            })
            .collect();
        for r in solved {
            if let Some(recs) = r? {
                if kept < count {
                    records.extend(recs);
                    kept += 1;
                }
            }
        }
    }
    if kept < count {
        return Err(Error::SamplerExhausted(budget));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_json_defaults() {
        let text = r#"{"problem": "p.json", "sampler": "s.json"}"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.eps, default_eps());
        assert_eq!(cfg.k_grid, vec![1, 3, 10]);
        cfg.validate().unwrap();
    }

    #[test]
    fn sha_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
