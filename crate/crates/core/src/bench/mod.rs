//! Benchmark problem families with the corresponding parameter-sampling
//! schemes: fuel cell energy management, sparse portfolio trading, and
//! motion planning with obstacle avoidance.

pub mod fuel_cell;
pub mod motion;
pub mod portfolio;

pub use fuel_cell::{build_fuel_cell, fuel_cell_sampler, FuelCellConfig, FuelCellLayout};
pub use motion::{build_motion, motion_sampler, random_obstacles, MotionConfig, MotionLayout, Obstacle};
pub use portfolio::{build_portfolio, portfolio_sampler, MarketModel, PortfolioConfig, PortfolioLayout};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{instantiate, ParameterInstance, ParametricMiqo};
use crate::sampler::SamplerSpec;
use crate::solver::{solve_miqo_with, BnbOptions};

/// Benchmark family selector used by the pipeline and CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    FuelCell,
    Portfolio,
    Motion,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fuel_cell" | "fuel-cell" | "control" => Ok(Family::FuelCell),
            "portfolio" => Ok(Family::Portfolio),
            "motion" | "obstacle" => Ok(Family::Motion),
            other => Err(Error::Config(format!("unknown family '{other}'"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Family::FuelCell => "fuel_cell",
            Family::Portfolio => "portfolio",
            Family::Motion => "motion",
        };
        f.write_str(s)
    }
}

/// Desk-scale generator settings per family. `size` follows the benchmark
/// tables: horizon T for the fuel cell, cardinality c for the portfolio,
/// obstacle count for motion planning.
#[derive(Debug, Clone)]
pub struct GeneratorSettings {
    pub family: Family,
    pub size: usize,
    pub seed: u64,
    /// Closed-loop rollout length for trajectory-centered samplers.
    pub rollout_len: usize,
    /// Desk-scale shape knobs.
    pub portfolio_assets: usize,
    pub portfolio_factors: usize,
    pub motion_horizon: usize,
}

impl GeneratorSettings {
    pub fn new(family: Family, size: usize, seed: u64) -> Self {
        GeneratorSettings {
            family,
            size,
            seed,
            rollout_len: 16,
            portfolio_assets: 12,
            portfolio_factors: 4,
            motion_horizon: 8,
        }
    }
}

/// Build a family instance plus its sampler spec.
pub fn generate(settings: &GeneratorSettings, bnb: &BnbOptions) -> Result<(ParametricMiqo, SamplerSpec)> {
    match settings.family {
        Family::FuelCell => {
            let cfg = FuelCellConfig {
                horizon: settings.size,
                ..FuelCellConfig::default()
            };
            let problem = build_fuel_cell(&cfg)?;
            let sampler =
                fuel_cell_sampler(&cfg, &problem, settings.rollout_len, 0.5, settings.seed, bnb)?;
            Ok((problem, sampler))
        }
        Family::Portfolio => {
            let cfg = PortfolioConfig {
                n_assets: settings.portfolio_assets,
                factors: settings.portfolio_factors,
                cardinality: settings.size,
                seed: settings.seed,
                ..PortfolioConfig::default()
            };
            let problem = build_portfolio(&cfg)?;
            let sampler = portfolio_sampler(&cfg, &problem, settings.rollout_len, 0.001, bnb)?;
            Ok((problem, sampler))
        }
        Family::Motion => {
            let mut cfg = MotionConfig {
                horizon: settings.motion_horizon,
                tau: 0.5,
                p_des: vec![-6.0, -6.0],
                v_lo: vec![-4.0, -4.0],
                v_hi: vec![4.0, 4.0],
                u_lo: vec![-3.0, -3.0],
                u_hi: vec![3.0, 3.0],
                p_lo: vec![-10.0, -10.0],
                p_hi: vec![10.0, 10.0],
                ..MotionConfig::default()
            };
            cfg.obstacles = random_obstacles(&cfg, settings.size, settings.seed);
            let problem = build_motion(&cfg)?;
            let sampler = motion_sampler(&cfg, true);
            Ok((problem, sampler))
        }
    }
}

/// Draw `count` parameter instances from a sampler, optionally screening
/// each for oracle feasibility with a bounded retry budget.
pub fn sample_parameters(
    problem: &ParametricMiqo,
    spec: &SamplerSpec,
    count: usize,
    seed: u64,
    bnb: &BnbOptions,
    retry_factor: usize,
) -> Result<Vec<ParameterInstance>> {
    let filter = spec.filter_feasible();
    let budget = count.saturating_mul(retry_factor.max(1)).max(count);
    let mut out = Vec::with_capacity(count);
    let mut idx = 0u64;
    while out.len() < count {
        if idx as usize >= budget {
            return Err(Error::SamplerExhausted(budget));
        }
        let theta = spec.draw(seed, idx);
        let id = idx;
        idx += 1;
        if filter {
            let inst = instantiate(problem, &ParameterInstance::new(theta.clone()))?;
            match solve_miqo_with(&inst, &problem.integer_indices, bnb) {
                Ok(_) => {}
                Err(Error::Infeasible) | Err(Error::OracleExhausted(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        out.push(ParameterInstance::with_id(theta, id));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_parses_aliases() {
        assert_eq!("fuel-cell".parse::<Family>().unwrap(), Family::FuelCell);
        assert_eq!("obstacle".parse::<Family>().unwrap(), Family::Motion);
        assert!("nope".parse::<Family>().is_err());
    }

    #[test]
    fn sample_parameters_radius_zero_returns_base_point() {
        let settings = GeneratorSettings::new(Family::Motion, 0, 1);
        let (problem, _) = generate(&settings, &BnbOptions::default()).unwrap();
        let spec = crate::sampler::SamplerSpec::Sphere {
            centers: vec![vec![1.5, -2.0]],
            blocks: vec![],
            clip_lo: None,
            clip_hi: None,
            filter_feasible: false,
        };
        let samples =
            sample_parameters(&problem, &spec, 5, 0, &BnbOptions::default(), 10).unwrap();
        for s in &samples {
            assert_eq!(s.theta, vec![1.5, -2.0]);
        }
    }

    #[test]
    fn filtered_motion_samples_are_oracle_feasible() {
        let settings = GeneratorSettings::new(Family::Motion, 2, 3);
        let (problem, sampler) = generate(&settings, &BnbOptions::default()).unwrap();
        assert!(sampler.filter_feasible());
        let samples =
            sample_parameters(&problem, &sampler, 4, 7, &BnbOptions::default(), 50).unwrap();
        assert_eq!(samples.len(), 4);
        for s in samples {
            let inst = instantiate(&problem, &s).unwrap();
            assert!(crate::solver::solve_miqo(&inst, &problem.integer_indices).is_ok());
        }
    }
}
