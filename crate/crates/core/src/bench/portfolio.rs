//! Sparse portfolio trading: maximize risk-adjusted returns subject to a
//! weight normalization and a cardinality budget, reformulated as MIQO.
//!
//! Variables (n_assets + 1 assets, cash last; k factors):
//! w (weights), f = F^T w (factor exposure), h >= (w)_- (shorting),
//! t >= |w - w_prev| (trades), y (holding indicators). n = 4(na) + k.
//!
//! The risk term gamma (f^T Sigma^F f + w^T D w) keeps P(theta) affine in
//! theta because theta carries the entries of D, Sigma^F and F directly;
//! the exposure rows f = F^T w put F into A(theta). The problem is marked
//! matrices_parametric, so factor caching is bypassed online.
//!
//! theta = (w_prev, r_hat, diag D, upper Sigma^F, F row-major).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::problem::{instantiate, ParamMap, ParameterInstance, ParametricMiqo};
use crate::sampler::{SamplerSpec, SphereBlock};
use crate::solver::{solve_miqo_with, BnbOptions};
use crate::sparse::CooMatrix;

#[derive(Debug, Clone)]
pub struct PortfolioConfig {
    /// Non-cash asset count; the problem adds a riskless cash asset.
    pub n_assets: usize,
    pub factors: usize,
    /// Risk aversion.
    pub gamma: f64,
    /// Borrow fee on short positions.
    pub borrow_cost: f64,
    /// L1 trade penalty.
    pub trade_cost: f64,
    /// Maximum number of nonzero holdings.
    pub cardinality: usize,
    /// Big-M on |w_i| <= M y_i; weights are normalized so 1 is valid.
    pub weight_bound: f64,
    pub seed: u64,
}

impl Default for PortfolioConfig {
    fn default() -> Self {
        PortfolioConfig {
            n_assets: 15,
            factors: 15,
            gamma: 100.0,
            borrow_cost: 0.0001,
            trade_cost: 0.01,
            cardinality: 5,
            weight_bound: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PortfolioLayout {
    /// Assets including cash.
    pub na: usize,
    pub k: usize,
    pub w: usize,
    pub f: usize,
    pub h: usize,
    pub t: usize,
    pub y: usize,
}

impl PortfolioLayout {
    pub fn new(n_assets: usize, k: usize) -> Self {
        let na = n_assets + 1;
        PortfolioLayout {
            na,
            k,
            w: 0,
            f: na,
            h: na + k,
            t: 2 * na + k,
            y: 3 * na + k,
        }
    }

    pub fn n_vars(&self) -> usize {
        4 * self.na + self.k
    }

    pub fn n_rows(&self) -> usize {
        8 * self.na + 2 * self.k + 3
    }

    pub fn p_dim(&self) -> usize {
        3 * self.na + self.k * (self.k + 1) / 2 + self.na * self.k
    }

    pub fn theta_w_prev(&self, i: usize) -> usize {
        i
    }

    pub fn theta_r_hat(&self, i: usize) -> usize {
        self.na + i
    }

    pub fn theta_d(&self, i: usize) -> usize {
        2 * self.na + i
    }

    /// Upper-triangle (a <= b) entry of Sigma^F.
    pub fn theta_sigma_f(&self, a: usize, b: usize) -> usize {
        debug_assert!(a <= b && b < self.k);
        // row-major upper triangle offset
        3 * self.na + a * self.k + b - a * (a + 1) / 2
    }

    pub fn theta_f_load(&self, i: usize, j: usize) -> usize {
        3 * self.na + self.k * (self.k + 1) / 2 + i * self.k + j
    }
}

pub fn build_portfolio(cfg: &PortfolioConfig) -> Result<ParametricMiqo> {
    if cfg.cardinality < 1 {
        return Err(Error::Config("portfolio cardinality must be >= 1".into()));
    }
    if cfg.n_assets < 1 || cfg.factors < 1 {
        return Err(Error::Config("portfolio needs assets and factors".into()));
    }
    let lay = PortfolioLayout::new(cfg.n_assets, cfg.factors);
    let (na, k) = (lay.na, lay.k);
    let n = lay.n_vars();

    // quadratic risk: P[w_i, w_i] = 2 gamma D_i, P[f_a, f_b] = 2 gamma Sigma^F_ab
    let p = CooMatrix::new(n, n);
    let mut pm = ParamMap::default();
    for i in 0..na {
        pm.p.push(lay.w + i, lay.w + i, lay.theta_d(i), 2.0 * cfg.gamma);
    }
    for a in 0..k {
        for b in a..k {
            pm.p
                .push(lay.f + a, lay.f + b, lay.theta_sigma_f(a, b), 2.0 * cfg.gamma);
        }
    }

    // linear cost: -r_hat^T w + borrow^T h + lambda 1^T t
    let mut q = vec![0.0; n];
    for i in 0..na {
        pm.q.push(lay.w + i, lay.theta_r_hat(i), -1.0);
        q[lay.h + i] = cfg.borrow_cost;
        q[lay.t + i] = cfg.trade_cost;
    }

    let mut a_mat = CooMatrix::new(0, n);
    let mut b: Vec<f64> = Vec::new();
    let mut row = 0usize;
    let mut push = |a: &mut CooMatrix, b: &mut Vec<f64>, entries: &[(usize, f64)], rhs: f64| -> usize {
        for &(c, v) in entries {
            a.rows.push(row);
            a.cols.push(c);
            a.vals.push(v);
        }
        b.push(rhs);
        row += 1;
        row - 1
    };

    // 1^T w = 1
    let ones: Vec<(usize, f64)> = (0..na).map(|i| (lay.w + i, 1.0)).collect();
    push(&mut a_mat, &mut b, &ones, 1.0);
    let neg: Vec<(usize, f64)> = (0..na).map(|i| (lay.w + i, -1.0)).collect();
    push(&mut a_mat, &mut b, &neg, -1.0);

    // exposure rows: sum_i F_ij w_i - f_j = 0, F entries from theta
    for j in 0..k {
        let r1 = push(&mut a_mat, &mut b, &[(lay.f + j, -1.0)], 0.0);
        let r2 = push(&mut a_mat, &mut b, &[(lay.f + j, 1.0)], 0.0);
        for i in 0..na {
            pm.a.push(r1, lay.w + i, lay.theta_f_load(i, j), 1.0);
            pm.a.push(r2, lay.w + i, lay.theta_f_load(i, j), -1.0);
        }
    }

    for i in 0..na {
        // h_i >= 0 and h_i >= -w_i
        push(&mut a_mat, &mut b, &[(lay.h + i, -1.0)], 0.0);
        push(&mut a_mat, &mut b, &[(lay.w + i, -1.0), (lay.h + i, -1.0)], 0.0);
        // t_i >= +/-(w_i - w_prev_i)
        let r1 = push(&mut a_mat, &mut b, &[(lay.w + i, 1.0), (lay.t + i, -1.0)], 0.0);
        pm.b.push(r1, lay.theta_w_prev(i), 1.0);
        let r2 = push(&mut a_mat, &mut b, &[(lay.w + i, -1.0), (lay.t + i, -1.0)], 0.0);
        pm.b.push(r2, lay.theta_w_prev(i), -1.0);
        // |w_i| <= M y_i
        push(
            &mut a_mat,
            &mut b,
            &[(lay.w + i, 1.0), (lay.y + i, -cfg.weight_bound)],
            0.0,
        );
        push(
            &mut a_mat,
            &mut b,
            &[(lay.w + i, -1.0), (lay.y + i, -cfg.weight_bound)],
            0.0,
        );
    }

    // cardinality and indicator boxes
    let card: Vec<(usize, f64)> = (0..na).map(|i| (lay.y + i, 1.0)).collect();
    push(&mut a_mat, &mut b, &card, cfg.cardinality as f64);
    for i in 0..na {
        push(&mut a_mat, &mut b, &[(lay.y + i, 1.0)], 1.0);
        push(&mut a_mat, &mut b, &[(lay.y + i, -1.0)], 0.0);
    }

    let m = row;
    debug_assert_eq!(m, lay.n_rows());
    a_mat.nrows = m;

    let problem = ParametricMiqo {
        n,
        m,
        p_dim: lay.p_dim(),
        integer_indices: (0..na).map(|i| lay.y + i).collect(),
        p_base: p,
        q_base: q,
        r_base: 0.0,
        a_base: a_mat,
        b_base: b,
        param_map: pm,
        matrices_parametric: true,
    };
    problem.validate()?;
    Ok(problem)
}

/// Synthetic factor-model market, seeded. Asset returns are F f + idio with
/// forecast r_hat = alpha (r + eps) scaled for an information ratio around
/// 0.15; no real market data involved.
pub struct MarketModel {
    lay: PortfolioLayout,
    rng: ChaCha8Rng,
    f_load: Vec<f64>,
    d_diag: Vec<f64>,
    sigma_f: Vec<f64>,
}

impl MarketModel {
    pub fn new(cfg: &PortfolioConfig) -> Self {
        let lay = PortfolioLayout::new(cfg.n_assets, cfg.factors);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9027f011);
        let (na, k) = (lay.na, lay.k);
        let mut f_load = vec![0.0; na * k];
        // non-cash assets load on factors; cash has a zero row
        for i in 0..na - 1 {
            for j in 0..k {
                f_load[i * k + j] = gaussian(&mut rng) / (k as f64).sqrt();
            }
        }
        let mut d_diag: Vec<f64> = (0..na - 1)
            .map(|_| (0.01 + 0.005 * rng.random_range(0.0..1.0f64)).powi(2))
            .collect();
        d_diag.push(1e-8); // cash idiosyncratic risk ~ 0
        // Sigma^F = sigma_f^2 (I + 0.2 GG^T / k), PD by construction
        let sig = 0.015f64;
        let mut g = vec![0.0; k * k];
        for v in g.iter_mut() {
            *v = gaussian(&mut rng);
        }
        let mut sigma_f = vec![0.0; k * (k + 1) / 2];
        let mut idx = 0;
        for a in 0..k {
            for b_i in a..k {
                let mut gg = 0.0;
                for c in 0..k {
                    gg += g[a * k + c] * g[b_i * k + c];
                }
                let base = if a == b_i { 1.0 } else { 0.0 };
                sigma_f[idx] = sig * sig * (base + 0.2 * gg / k as f64);
                idx += 1;
            }
        }
        MarketModel {
            lay,
            rng,
            f_load,
            d_diag,
            sigma_f,
        }
    }

    /// One period's theta given the previous weights.
    pub fn step_theta(&mut self, w_prev: &[f64]) -> Vec<f64> {
        let (na, k) = (self.lay.na, self.lay.k);
        let sig_eps = 0.02 * (1.0 / 0.0225 - 1.0f64).sqrt(); // info ratio ~ 0.15
        let alpha = 0.0225;
        // realized returns from the factor model
        let f_ret: Vec<f64> = (0..k).map(|_| 0.015 * gaussian(&mut self.rng)).collect();
        let mut r = vec![0.0; na];
        for i in 0..na - 1 {
            let mut acc = 0.0;
            for j in 0..k {
                acc += self.f_load[i * k + j] * f_ret[j];
            }
            r[i] = acc + self.d_diag[i].sqrt() * gaussian(&mut self.rng);
        }
        r[na - 1] = 0.0001; // riskless rate, known exactly
        let mut theta = Vec::with_capacity(self.lay.p_dim());
        theta.extend_from_slice(w_prev);
        for (i, &ri) in r.iter().enumerate() {
            if i == na - 1 {
                theta.push(ri);
            } else {
                theta.push(alpha * (ri + sig_eps * gaussian(&mut self.rng)));
            }
        }
        theta.extend_from_slice(&self.d_diag);
        theta.extend_from_slice(&self.sigma_f);
        theta.extend_from_slice(&self.f_load);
        // risk model drifts slightly between periods
        for v in self.d_diag.iter_mut().take(na - 1) {
            *v *= 1.0 + 0.01 * gaussian(&mut self.rng);
            *v = v.max(1e-8);
        }
        theta
    }
}

/// Closed-loop synthetic trading trajectory; the sampler perturbs each
/// parameter block inside a ball of radius `rel_radius` times the block
/// magnitude.
pub fn portfolio_sampler(
    cfg: &PortfolioConfig,
    problem: &ParametricMiqo,
    rollout_len: usize,
    rel_radius: f64,
    bnb: &BnbOptions,
) -> Result<SamplerSpec> {
    let lay = PortfolioLayout::new(cfg.n_assets, cfg.factors);
    let na = lay.na;
    let mut market = MarketModel::new(cfg);
    let mut w_prev = vec![0.0; na];
    w_prev[na - 1] = 1.0; // start fully in cash
    let mut centers = Vec::with_capacity(rollout_len);
    for _ in 0..rollout_len {
        let theta = market.step_theta(&w_prev);
        let inst = instantiate(problem, &ParameterInstance::new(theta.clone()))?;
        let sol = solve_miqo_with(&inst, &problem.integer_indices, bnb)?;
        w_prev = sol.x[lay.w..lay.w + na].to_vec();
        centers.push(theta);
    }

    // per-block radii: rel_radius times the mean block magnitude
    let block_mag = |start: usize, len: usize| -> f64 {
        let mut acc = 0.0;
        for c in &centers {
            acc += c[start..start + len]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
        }
        acc / centers.len() as f64
    };
    let kk = lay.k * (lay.k + 1) / 2;
    let blocks = vec![
        SphereBlock {
            start: 0,
            len: na,
            radius: rel_radius * block_mag(0, na),
        },
        SphereBlock {
            start: na,
            len: na,
            radius: rel_radius * block_mag(na, na),
        },
        SphereBlock {
            start: 2 * na,
            len: na,
            radius: rel_radius * block_mag(2 * na, na),
        },
        SphereBlock {
            start: 3 * na,
            len: kk,
            radius: rel_radius * block_mag(3 * na, kk),
        },
        SphereBlock {
            start: 3 * na + kk,
            len: na * lay.k,
            radius: rel_radius * block_mag(3 * na + kk, na * lay.k),
        },
    ];
    // variances stay nonnegative under perturbation
    let mut clip_lo = vec![f64::NEG_INFINITY; lay.p_dim()];
    for i in 0..na {
        clip_lo[lay.theta_d(i)] = 0.0;
    }
    Ok(SamplerSpec::Sphere {
        centers,
        blocks,
        clip_lo: Some(clip_lo),
        clip_hi: None,
        filter_feasible: false,
    })
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::violation;
    use crate::solver::solve_miqo;

    fn small_cfg() -> PortfolioConfig {
        PortfolioConfig {
            n_assets: 5,
            factors: 3,
            cardinality: 2,
            ..PortfolioConfig::default()
        }
    }

    #[test]
    fn dimension_formulas() {
        let cfg = small_cfg();
        let p = build_portfolio(&cfg).unwrap();
        let na = cfg.n_assets + 1;
        assert_eq!(p.n, 4 * na + cfg.factors);
        assert_eq!(p.m, 8 * na + 2 * cfg.factors + 3);
        assert_eq!(p.num_integers(), na);
        assert!(p.matrices_parametric);
    }

    #[test]
    fn instantiated_p_is_psd() {
        let cfg = small_cfg();
        let prob = build_portfolio(&cfg).unwrap();
        let mut market = MarketModel::new(&cfg);
        let mut w0 = vec![0.0; cfg.n_assets + 1];
        w0[cfg.n_assets] = 1.0;
        let theta = market.step_theta(&w0);
        let inst = instantiate(&prob, &ParameterInstance::new(theta)).unwrap();
        inst.check_psd(1e-8).unwrap();
    }

    #[test]
    fn no_trade_optimal_with_zero_returns_high_trade_cost() {
        // zero returns, zero borrow, heavy trade penalty: staying at a
        // cardinality-feasible w_prev costs nothing
        let cfg = PortfolioConfig {
            n_assets: 3,
            factors: 2,
            cardinality: 2,
            trade_cost: 10.0,
            borrow_cost: 0.0,
            gamma: 1.0,
            ..PortfolioConfig::default()
        };
        let prob = build_portfolio(&cfg).unwrap();
        let lay = PortfolioLayout::new(cfg.n_assets, cfg.factors);
        let na = lay.na;
        let mut theta = vec![0.0; lay.p_dim()];
        // w_prev: all cash (cardinality 1 <= 2)
        theta[lay.theta_w_prev(na - 1)] = 1.0;
        // tiny risk everywhere, zero returns, zero factor loadings
        for i in 0..na {
            theta[lay.theta_d(i)] = 1e-6;
        }
        for a in 0..lay.k {
            theta[lay.theta_sigma_f(a, a)] = 1e-6;
        }
        let inst = instantiate(&prob, &ParameterInstance::new(theta)).unwrap();
        let sol = solve_miqo(&inst, &prob.integer_indices).unwrap();
        let w = &sol.x[lay.w..lay.w + na];
        assert!((w[na - 1] - 1.0).abs() < 1e-5, "cash weight {}", w[na - 1]);
        for &wi in &w[..na - 1] {
            assert!(wi.abs() < 1e-5);
        }
        assert!(violation(&inst, &sol.x) <= 1e-6);
    }

    #[test]
    fn dominant_asset_takes_full_weight() {
        // one asset with a large return edge and tiny risk, cardinality
        // unconstrained, no costs: everything goes to that asset
        let cfg = PortfolioConfig {
            n_assets: 3,
            factors: 2,
            cardinality: 4,
            trade_cost: 0.0,
            borrow_cost: 0.0,
            gamma: 1.0,
            ..PortfolioConfig::default()
        };
        let prob = build_portfolio(&cfg).unwrap();
        let lay = PortfolioLayout::new(cfg.n_assets, cfg.factors);
        let na = lay.na;
        let mut theta = vec![0.0; lay.p_dim()];
        theta[lay.theta_w_prev(na - 1)] = 1.0;
        for i in 0..na {
            theta[lay.theta_d(i)] = 1e-4;
        }
        for a in 0..lay.k {
            theta[lay.theta_sigma_f(a, a)] = 1e-4;
        }
        theta[lay.theta_r_hat(0)] = 0.5; // dominant edge
        let inst = instantiate(&prob, &ParameterInstance::new(theta)).unwrap();
        let sol = solve_miqo(&inst, &prob.integer_indices).unwrap();
        let w = &sol.x[lay.w..lay.w + na];
        assert!(w[0] > 0.9, "dominant asset weight {}", w[0]);
    }

    #[test]
    fn sampler_rollout_runs_and_is_parametric_in_matrices() {
        let cfg = PortfolioConfig {
            n_assets: 4,
            factors: 2,
            cardinality: 2,
            ..PortfolioConfig::default()
        };
        let prob = build_portfolio(&cfg).unwrap();
        let spec = portfolio_sampler(&cfg, &prob, 3, 0.001, &BnbOptions::default()).unwrap();
        if let SamplerSpec::Sphere { centers, blocks, .. } = &spec {
            assert_eq!(centers.len(), 3);
            assert_eq!(blocks.len(), 5);
            // perturbation changes P entries through the maps
            let t0 = spec.draw(5, 0);
            let inst = instantiate(&prob, &ParameterInstance::new(t0)).unwrap();
            inst.check_psd(1e-8).unwrap();
        } else {
            panic!("expected sphere sampler");
        }
    }
}
