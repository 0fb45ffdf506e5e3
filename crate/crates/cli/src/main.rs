//! Pipeline driver: offline training (explore -> prune -> train -> cache),
//! online solving, and benchmark runs.
//!
//! Exit codes: 0 success, 2 infeasible / no feasible candidate, 3 stage or
//! configuration failure. Every flag can also come from a `PMIQO_*`
//! environment variable.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pmiqo::bench::Family;
use pmiqo::error::Error;
use pmiqo::pipeline::{self, BenchmarkConfig, RunConfig};

#[derive(Parser)]
#[command(name = "pmiqo", version, about = "Learned-strategy online MIQO solver")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Problem file (pmiqo-v1 JSON).
    #[arg(long, env = "PMIQO_PROBLEM")]
    problem: Option<PathBuf>,
    /// Sampler spec JSON.
    #[arg(long, env = "PMIQO_SAMPLER")]
    sampler: Option<PathBuf>,
    /// Run configuration JSON; flags override its fields.
    #[arg(long, env = "PMIQO_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "PMIQO_SEED")]
    seed: Option<u64>,
    /// Good-Turing target for exploration.
    #[arg(long, env = "PMIQO_EPS")]
    eps: Option<f64>,
    /// Good-Turing confidence.
    #[arg(long, env = "PMIQO_BETA")]
    beta: Option<f64>,
    #[arg(long, env = "PMIQO_THREADS")]
    threads: Option<usize>,
    /// Output/artifact directory.
    #[arg(long, env = "PMIQO_OUT")]
    out: Option<PathBuf>,
    /// Exploration sample budget.
    #[arg(long, env = "PMIQO_MAX_SAMPLES")]
    max_samples: Option<usize>,
    /// Pruning suboptimality tolerance.
    #[arg(long, env = "PMIQO_PRUNE_EPS")]
    prune_eps: Option<f64>,
    /// Hyperparameter search budget (0 = fixed defaults).
    #[arg(long, env = "PMIQO_TUNE_BUDGET")]
    tune_budget: Option<usize>,
}

impl CommonArgs {
    fn run_config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => serde_json::from_str::<RunConfig>(&std::fs::read_to_string(path)?)?,
            None => {
                let problem = self.problem.clone().ok_or_else(|| {
                    Error::Config("--problem (or --config) is required".into())
                })?;
                let sampler = self.sampler.clone().ok_or_else(|| {
                    Error::Config("--sampler (or --config) is required".into())
                })?;
                RunConfig::new(problem, sampler, PathBuf::from("out"))
            }
        };
        if let Some(p) = &self.problem {
            cfg.problem = p.clone();
        }
        if let Some(s) = &self.sampler {
            cfg.sampler = s.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.eps {
            cfg.eps = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(v) = self.max_samples {
            cfg.max_samples = v;
        }
        if let Some(v) = self.prune_eps {
            cfg.prune_eps = v;
        }
        if let Some(v) = self.tune_budget {
            cfg.tune_budget = v;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Offline pipeline: explore, prune, train, factorize-and-cache.
    Train(CommonArgs),
    /// Exploration stage only; writes the raw bank and dataset.
    Explore(CommonArgs),
    /// Pruning stage only; consumes the raw bank and dataset.
    Prune(CommonArgs),
    /// Solve one instance online from trained artifacts.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Parameter vector as comma-separated values.
        #[arg(long, env = "PMIQO_THETA", allow_hyphen_values = true)]
        theta: Option<String>,
        /// Parameter vector as a JSON array file.
        #[arg(long)]
        theta_file: Option<PathBuf>,
        /// Number of candidate strategies to evaluate.
        #[arg(long, env = "PMIQO_K", default_value_t = 10)]
        k: usize,
    },
    /// Full pipeline plus oracle baselines over size and k grids.
    Benchmark {
        #[command(flatten)]
        common: CommonArgs,
        /// fuel_cell | portfolio | motion.
        #[arg(long, env = "PMIQO_FAMILY")]
        family: Family,
        /// Comma-separated size grid (T, cardinality, or obstacle count).
        #[arg(long, value_delimiter = ',', default_value = "5")]
        sizes: Vec<usize>,
        /// Comma-separated k grid.
        #[arg(long, value_delimiter = ',', env = "PMIQO_K", default_value = "1,3,10")]
        k: Vec<usize>,
        #[arg(long, default_value_t = 400)]
        train_samples: usize,
        #[arg(long, default_value_t = 100)]
        test_samples: usize,
        /// Node budget of the "heuristic" (node-limited) baseline.
        #[arg(long, default_value_t = 50)]
        heuristic_nodes: u64,
    },
    /// Print problem and artifact summaries.
    Inspect(CommonArgs),
}

fn parse_theta(theta: &Option<String>, theta_file: &Option<PathBuf>) -> Result<Vec<f64>, Error> {
    match (theta, theta_file) {
        (Some(list), None) => list
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad theta entry '{t}': {e}")))
            })
            .collect(),
        (None, Some(path)) => {
            let v: Vec<f64> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            Ok(v)
        }
        _ => Err(Error::Config(
            "provide exactly one of --theta or --theta-file".into(),
        )),
    }
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.cmd {
        Cmd::Train(common) => {
            let cfg = common.run_config()?;
            let summary = pipeline::cmd_train(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(0)
        }
        Cmd::Explore(common) => {
            let cfg = common.run_config()?;
            let summary = pipeline::cmd_explore(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(0)
        }
        Cmd::Prune(common) => {
            let cfg = common.run_config()?;
            let summary = pipeline::cmd_prune(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(0)
        }
        Cmd::Solve {
            common,
            theta,
            theta_file,
            k,
        } => {
            let cfg = common.run_config()?;
            let theta = parse_theta(&theta, &theta_file)?;
            let arts = pipeline::load_artifacts(&cfg.problem, &cfg.out_dir)?;
            let k = k.min(arts.bank.len()).max(1);
            let out = pipeline::cmd_solve(&arts, &theta, k)?;
            println!("{}", serde_json::to_string_pretty(&out)?);
            if out.feasible {
                Ok(0)
            } else {
                eprintln!(
                    "no candidate within tolerance; best violation {:.3e} (fallback printed)",
                    out.violation
                );
                Ok(2)
            }
        }
        Cmd::Benchmark {
            common,
            family,
            sizes,
            k,
            train_samples,
            test_samples,
            heuristic_nodes,
        } => {
            let cfg = common.run_config_for_benchmark()?;
            let bcfg = BenchmarkConfig {
                family,
                sizes,
                k_grid: k,
                seed: cfg.seed,
                train_samples,
                test_samples,
                prune_eps: cfg.prune_eps,
                tune_budget: cfg.tune_budget,
                threads: cfg.threads,
                out_dir: cfg.out_dir.clone(),
                heuristic_node_limit: heuristic_nodes,
            };
            let summary = pipeline::cmd_benchmark(&bcfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if summary.failed_sizes.is_empty() {
                Ok(0)
            } else {
                Ok(3)
            }
        }
        Cmd::Inspect(common) => {
            let cfg = common.run_config_for_inspect()?;
            inspect(&cfg)?;
            Ok(0)
        }
    }
}

impl CommonArgs {
    /// Benchmark and inspect runs do not need problem/sampler paths up
    /// front; fall back to placeholders so the shared config applies.
    fn run_config_for_benchmark(&self) -> Result<RunConfig, Error> {
        let mut relaxed = CommonArgs {
            problem: Some(self.problem.clone().unwrap_or_else(|| "unused".into())),
            sampler: Some(self.sampler.clone().unwrap_or_else(|| "unused".into())),
            ..self.shallow_clone()
        };
        relaxed.out = Some(self.out.clone().unwrap_or_else(|| "out".into()));
        relaxed.run_config()
    }

    fn run_config_for_inspect(&self) -> Result<RunConfig, Error> {
        self.run_config_for_benchmark()
    }

    fn shallow_clone(&self) -> CommonArgs {
        CommonArgs {
            problem: self.problem.clone(),
            sampler: self.sampler.clone(),
            config: self.config.clone(),
            seed: self.seed,
            eps: self.eps,
            beta: self.beta,
            threads: self.threads,
            out: self.out.clone(),
            max_samples: self.max_samples,
            prune_eps: self.prune_eps,
            tune_budget: self.tune_budget,
        }
    }
}

fn inspect(cfg: &RunConfig) -> Result<(), Error> {
    if cfg.problem.exists() {
        let problem = pmiqo::format::load(&cfg.problem)?;
        println!(
            "problem: n = {}, m = {}, d = {}, p_dim = {}, matrices_parametric = {}",
            problem.n,
            problem.m,
            problem.num_integers(),
            problem.p_dim,
            problem.matrices_parametric
        );
    }
    let bank_path = cfg.out_dir.join("bank.json");
    if bank_path.exists() {
        let (hash, bank, labels, trace) = pmiqo::bank::load_bank(&bank_path)?;
        println!(
            "bank: M = {}, samples = {}, problem_hash = {}...",
            bank.len(),
            labels.len(),
            &hash[..12.min(hash.len())]
        );
        if let Some(t) = trace {
            println!(
                "  exploration: stop = {:?}, skipped = {}, final bound = {:.4}",
                t.stop,
                t.skipped,
                t.steps.last().map_or(f64::NAN, |s| s.bound)
            );
        }
    }
    let meta_path = cfg.out_dir.join("model.json");
    if meta_path.exists() {
        let meta: pmiqo::pipeline::ModelMeta =
            serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?;
        println!(
            "model: {} classes, input dim {}, depth {}, width {}, val acc {:.3}",
            meta.classes,
            meta.input_dim,
            meta.hyperparams.depth,
            meta.hyperparams.width,
            meta.train.final_val_acc
        );
    }
    let cache_path = cfg.out_dir.join("cache.bin");
    if cache_path.exists() {
        println!(
            "cache: {} bytes at {}",
            std::fs::metadata(&cache_path)?.len(),
            cache_path.display()
        );
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> i32 {
    fn base(err: &Error) -> i32 {
        match err {
            Error::Infeasible | Error::NoFeasibleStrategy { .. } => 2,
            Error::Stage { source, .. } => base(source),
            _ => 3,
        }
    }
    base(err)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not failures
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
