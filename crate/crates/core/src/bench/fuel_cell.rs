//! Fuel cell energy management: a supercapacitor buffers a switched fuel
//! cell that must match a demanded load while limiting on/off switching
//! over a sliding window.
//!
//! Variables per horizon T (n = 6T + 3):
//! E_0..E_T (stored energy, kJ), P_0..P_{T-1} (cell power, kW),
//! z_0..z_T (on/off), w_0..w_{T-1} (state change), d_0..d_{T-1} (switch
//! indicator), s_0..s_T (switch count over the window).
//!
//! theta = (E_init, z_init, s_init, d_past[T], P_load[T]), p_dim = 3 + 2T.
//! All parameter dependence lands in b, so factor caching applies.
//!
//! Energies are kJ and powers kW; the cost is kept in watts, so the config's
//! literal coefficients (alpha per W^2, beta per W, gamma W) are converted
//! with the unit change inside the builder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::problem::{instantiate, ParamMap, ParameterInstance, ParametricMiqo};
use crate::sampler::{SamplerSpec, SphereBlock};
use crate::solver::{solve_miqo_with, BnbOptions};
use crate::sparse::CooMatrix;

/// Switching-logic matrix over (w_t, z_t, d_t) and its right-hand side.
const LOGIC_G: [[f64; 3]; 4] = [
    [1.0, 0.0, -1.0],
    [-1.0, 0.0, -1.0],
    [1.0, 2.0, 2.0],
    [-1.0, -2.0, 2.0],
];
const LOGIC_H: [f64; 4] = [0.0, 0.0, 3.0, 1.0];

#[derive(Debug, Clone)]
pub struct FuelCellConfig {
    pub horizon: usize,
    /// Sampling time, seconds.
    pub tau: f64,
    /// Quadratic fuel coefficient, W per W^2.
    pub alpha: f64,
    /// Linear fuel coefficient, dimensionless.
    pub beta: f64,
    /// Idle consumption, W.
    pub gamma: f64,
    /// Energy bounds, kJ.
    pub e_min: f64,
    pub e_max: f64,
    /// Power bound, kW.
    pub p_max: f64,
    /// Switching budget over the window.
    pub n_switch: f64,
    pub e_init: f64,
    pub z_init: f64,
    pub s_init: f64,
}

impl Default for FuelCellConfig {
    fn default() -> Self {
        FuelCellConfig {
            horizon: 10,
            tau: 1.0,
            alpha: 6.7e-4,
            beta: 0.2,
            gamma: 80.0,
            e_min: 5.2,
            e_max: 10.2,
            p_max: 1.2,
            n_switch: 3.0,
            e_init: 7.7,
            z_init: 0.0,
            s_init: 0.0,
        }
    }
}

/// Variable index layout.
#[derive(Debug, Clone, Copy)]
pub struct FuelCellLayout {
    pub t: usize,
    pub e: usize,
    pub p: usize,
    pub z: usize,
    pub w: usize,
    pub d: usize,
    pub s: usize,
}

impl FuelCellLayout {
    pub fn new(t: usize) -> Self {
        FuelCellLayout {
            t,
            e: 0,
            p: t + 1,
            z: 2 * t + 1,
            w: 3 * t + 2,
            d: 4 * t + 2,
            s: 5 * t + 2,
        }
    }

    pub fn n_vars(&self) -> usize {
        6 * self.t + 3
    }

    pub fn n_rows(&self) -> usize {
        21 * self.t + 11
    }

    pub fn p_dim(&self) -> usize {
        3 + 2 * self.t
    }

    /// theta index of d_{t-T} for stage t (0 <= t < T).
    pub fn theta_d_past(&self, t: usize) -> usize {
        3 + t
    }

    pub fn theta_p_load(&self, t: usize) -> usize {
        3 + self.t + t
    }
}

pub fn build_fuel_cell(cfg: &FuelCellConfig) -> Result<ParametricMiqo> {
    let t_h = cfg.horizon;
    if t_h < 1 {
        return Err(Error::Config("fuel cell horizon must be >= 1".into()));
    }
    if cfg.e_min >= cfg.e_max || cfg.p_max <= 0.0 || cfg.tau <= 0.0 {
        return Err(Error::Config("inconsistent fuel cell config".into()));
    }
    let lay = FuelCellLayout::new(t_h);
    let n = lay.n_vars();

    // cost in watts with kW decision variables
    let quad = cfg.alpha * 1e6;
    let lin = cfg.beta * 1e3;
    let mut p = CooMatrix::new(n, n);
    let mut q = vec![0.0; n];
    for t in 0..t_h {
        p.push(lay.p + t, lay.p + t, 2.0 * quad);
        q[lay.p + t] = lin;
        q[lay.z + t] = cfg.gamma;
    }

    let mut a = CooMatrix::new(0, n);
    let mut b: Vec<f64> = Vec::new();
    let mut pm = ParamMap::default();
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

    // capacitor dynamics: E_{t+1} - E_t - tau P_t = -tau P_load_t
    for t in 0..t_h {
        let e1 = lay.e + t + 1;
        let e0 = lay.e + t;
        let pt = lay.p + t;
        let r1 = push(&mut a, &mut b, &[(e1, 1.0), (e0, -1.0), (pt, -cfg.tau)], 0.0);
        pm.b.push(r1, lay.theta_p_load(t), -cfg.tau);
        let r2 = push(&mut a, &mut b, &[(e1, -1.0), (e0, 1.0), (pt, cfg.tau)], 0.0);
        pm.b.push(r2, lay.theta_p_load(t), cfg.tau);
    }
    // E_0 = E_init
    let r = push(&mut a, &mut b, &[(lay.e, 1.0)], 0.0);
    pm.b.push(r, 0, 1.0);
    let r = push(&mut a, &mut b, &[(lay.e, -1.0)], 0.0);
    pm.b.push(r, 0, -1.0);
    // energy box
    for t in 0..=t_h {
        push(&mut a, &mut b, &[(lay.e + t, 1.0)], cfg.e_max);
        push(&mut a, &mut b, &[(lay.e + t, -1.0)], -cfg.e_min);
    }
    // 0 <= P_t <= P_max z_t
    for t in 0..t_h {
        push(&mut a, &mut b, &[(lay.p + t, -1.0)], 0.0);
        push(
            &mut a,
            &mut b,
            &[(lay.p + t, 1.0), (lay.z + t, -cfg.p_max)],
            0.0,
        );
    }
    // z dynamics: z_{t+1} = z_t + w_t
    for t in 0..t_h {
        let z1 = lay.z + t + 1;
        let z0 = lay.z + t;
        let wt = lay.w + t;
        push(&mut a, &mut b, &[(z1, 1.0), (z0, -1.0), (wt, -1.0)], 0.0);
        push(&mut a, &mut b, &[(z1, -1.0), (z0, 1.0), (wt, 1.0)], 0.0);
    }
    // z_0 = z_init
    let r = push(&mut a, &mut b, &[(lay.z, 1.0)], 0.0);
    pm.b.push(r, 1, 1.0);
    let r = push(&mut a, &mut b, &[(lay.z, -1.0)], 0.0);
    pm.b.push(r, 1, -1.0);
    // binary boxes
    for t in 0..=t_h {
        push(&mut a, &mut b, &[(lay.z + t, 1.0)], 1.0);
        push(&mut a, &mut b, &[(lay.z + t, -1.0)], 0.0);
    }
    for t in 0..t_h {
        push(&mut a, &mut b, &[(lay.d + t, 1.0)], 1.0);
        push(&mut a, &mut b, &[(lay.d + t, -1.0)], 0.0);
    }
    // w box
    for t in 0..t_h {
        push(&mut a, &mut b, &[(lay.w + t, 1.0)], 1.0);
        push(&mut a, &mut b, &[(lay.w + t, -1.0)], 1.0);
    }
    // switch counter: s_{t+1} - s_t - d_t = -d_{t-T}
    for t in 0..t_h {
        let s1 = lay.s + t + 1;
        let s0 = lay.s + t;
        let dt = lay.d + t;
        let r1 = push(&mut a, &mut b, &[(s1, 1.0), (s0, -1.0), (dt, -1.0)], 0.0);
        pm.b.push(r1, lay.theta_d_past(t), -1.0);
        let r2 = push(&mut a, &mut b, &[(s1, -1.0), (s0, 1.0), (dt, 1.0)], 0.0);
        pm.b.push(r2, lay.theta_d_past(t), 1.0);
    }
    // s_0 = s_init
    let r = push(&mut a, &mut b, &[(lay.s, 1.0)], 0.0);
    pm.b.push(r, 2, 1.0);
    let r = push(&mut a, &mut b, &[(lay.s, -1.0)], 0.0);
    pm.b.push(r, 2, -1.0);
    // switching budget
    for t in 0..=t_h {
        push(&mut a, &mut b, &[(lay.s + t, 1.0)], cfg.n_switch);
    }
    // switching logic G (w_t, z_t, d_t) <= h
    for t in 0..t_h {
        for (gr, &h) in LOGIC_G.iter().zip(&LOGIC_H) {
            push(
                &mut a,
                &mut b,
                &[(lay.w + t, gr[0]), (lay.z + t, gr[1]), (lay.d + t, gr[2])],
                h,
            );
        }
    }

    let m = row;
    debug_assert_eq!(m, lay.n_rows());
    a.nrows = m;

    let mut integer_indices: Vec<usize> = (0..=t_h).map(|t| lay.z + t).collect();
    integer_indices.extend((0..t_h).map(|t| lay.d + t));
    integer_indices.sort_unstable();

    let problem = ParametricMiqo {
        n,
        m,
        p_dim: lay.p_dim(),
        integer_indices,
        p_base: p,
        q_base: q,
        r_base: 0.0,
        a_base: a,
        b_base: b,
        param_map: pm,
        matrices_parametric: false,
    };
    problem.validate()?;
    Ok(problem)
}

/// Assemble theta from a state and load window.
fn theta_from_state(
    cfg: &FuelCellConfig,
    e: f64,
    z: f64,
    s: f64,
    d_past: &[f64],
    load: &[f64],
) -> Vec<f64> {
    let mut theta = Vec::with_capacity(3 + d_past.len() + load.len());
    theta.push(e.clamp(cfg.e_min, cfg.e_max));
    theta.push(z);
    theta.push(s.max(0.0));
    theta.extend_from_slice(d_past);
    theta.extend_from_slice(load);
    theta
}

/// Closed-loop rollout followed by hypersphere perturbation around the
/// visited states. Continuous components (E_init, s_init, P_load) are
/// perturbed with radius 0.5 and clipped to their admissible ranges;
/// z_init and d_past stay at binary-valid values. Samples are screened for
/// oracle feasibility downstream.
pub fn fuel_cell_sampler(
    cfg: &FuelCellConfig,
    problem: &ParametricMiqo,
    rollout_len: usize,
    radius: f64,
    seed: u64,
    bnb: &BnbOptions,
) -> Result<SamplerSpec> {
    let t_h = cfg.horizon;
    let lay = FuelCellLayout::new(t_h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf0e1);
    let mut e = cfg.e_init;
    let mut z = cfg.z_init;
    let mut s = cfg.s_init;
    let mut d_past = vec![0.0; t_h];
    // load profile: seeded random walk clipped to [0, P_max]
    let mut load: Vec<f64> = Vec::with_capacity(t_h);
    let mut level = 0.4 * cfg.p_max;
    for _ in 0..t_h {
        level = (level + rng.random_range(-0.25..0.25) * cfg.p_max).clamp(0.0, cfg.p_max);
        load.push(level);
    }

    let mut centers = Vec::with_capacity(rollout_len);
    for _ in 0..rollout_len {
        let mut theta = theta_from_state(cfg, e, z, s, &d_past, &load);
        let mut solved = None;
        for attempt in 0..8 {
            let inst = instantiate(problem, &ParameterInstance::new(theta.clone()))?;
            match solve_miqo_with(&inst, &problem.integer_indices, bnb) {
                Ok(sol) => {
                    solved = Some(sol);
                    break;
                }
                Err(Error::Infeasible) | Err(Error::OracleExhausted(_)) => {
                    // soften the demanded load and retry; zero load is
                    // always feasible
                    let shrink = if attempt == 6 { 0.0 } else { 0.5 };
                    for (l, th) in load.iter_mut().zip(theta[3 + t_h..].iter_mut()) {
                        *l *= shrink;
                        *th = *l;
                    }
                }
                Err(e) => return Err(e),
            }
        }
        let sol = solved.ok_or(Error::SamplerExhausted(8))?;
        centers.push(theta.clone());
        // apply the first stage and advance the load window
        e = (e + cfg.tau * (sol.x[lay.p] - load[0])).clamp(cfg.e_min, cfg.e_max);
        let d0 = sol.x[lay.d].round();
        s = (s + d0 - d_past[0]).max(0.0);
        z = sol.x[lay.z + 1].round();
        d_past.remove(0);
        d_past.push(d0);
        load.remove(0);
        level = (level + rng.random_range(-0.25..0.25) * cfg.p_max).clamp(0.0, cfg.p_max);
        load.push(level);
    }

    let mut clip_lo = vec![f64::NEG_INFINITY; lay.p_dim()];
    let mut clip_hi = vec![f64::INFINITY; lay.p_dim()];
    clip_lo[0] = cfg.e_min;
    clip_hi[0] = cfg.e_max;
    clip_lo[2] = 0.0;
    clip_hi[2] = cfg.n_switch;
    for t in 0..t_h {
        clip_lo[lay.theta_p_load(t)] = 0.0;
        clip_hi[lay.theta_p_load(t)] = cfg.p_max;
    }

    Ok(SamplerSpec::Sphere {
        centers,
        blocks: vec![
            SphereBlock {
                start: 0,
                len: 1,
                radius,
            },
            SphereBlock {
                start: 2,
                len: 1,
                radius,
            },
            SphereBlock {
                start: 3 + t_h,
                len: t_h,
                radius,
            },
        ],
        clip_lo: Some(clip_lo),
        clip_hi: Some(clip_hi),
        filter_feasible: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{extract_strategy, violation};
    use crate::solver::enumerate_oracle;

    #[test]
    fn dimension_formulas() {
        for t in [1usize, 2, 5, 10] {
            let cfg = FuelCellConfig {
                horizon: t,
                ..FuelCellConfig::default()
            };
            let p = build_fuel_cell(&cfg).unwrap();
            assert_eq!(p.n, 6 * t + 3);
            assert_eq!(p.m, 21 * t + 11);
            assert_eq!(p.num_integers(), 2 * t + 1);
            assert_eq!(p.p_dim, 3 + 2 * t);
            assert!(!p.matrices_parametric);
        }
    }

    #[test]
    fn t1_zero_load_staying_off_is_free() {
        // with no demand and z_init = 0 the optimal plan is all-off, cost 0
        let cfg = FuelCellConfig {
            horizon: 1,
            ..FuelCellConfig::default()
        };
        let prob = build_fuel_cell(&cfg).unwrap();
        let theta = theta_from_state(&cfg, 7.7, 0.0, 0.0, &[0.0], &[0.0]);
        let inst = instantiate(&prob, &ParameterInstance::new(theta)).unwrap();
        let (x, f) = enumerate_oracle(&inst, &prob.integer_indices, 4096).unwrap();
        assert!(f.abs() < 1e-9, "objective {f}");
        let lay = FuelCellLayout::new(1);
        assert!(x[lay.z].abs() < 1e-9);
        assert!(violation(&inst, &x) <= 1e-6);
    }

    #[test]
    fn hand_assembled_rows_t2() {
        // instantiated b must carry E_init, s_init and the load profile in
        // the hand-derived row positions
        let cfg = FuelCellConfig {
            horizon: 2,
            ..FuelCellConfig::default()
        };
        let prob = build_fuel_cell(&cfg).unwrap();
        let lay = FuelCellLayout::new(2);
        let e_init = 6.5;
        let s_init = 1.0;
        let load = [0.7, 0.3];
        let d_past = [1.0, 0.0];
        let theta = theta_from_state(&cfg, e_init, 1.0, s_init, &d_past, &load);
        let inst = instantiate(&prob, &ParameterInstance::new(theta)).unwrap();
        // rows 0..4: energy dynamics pairs with -tau P_load on the rhs
        assert_eq!(inst.b[0], -cfg.tau * load[0]);
        assert_eq!(inst.b[1], cfg.tau * load[0]);
        assert_eq!(inst.b[2], -cfg.tau * load[1]);
        assert_eq!(inst.b[3], cfg.tau * load[1]);
        // rows 4, 5: E_0 = E_init pair
        assert_eq!(inst.b[4], e_init);
        assert_eq!(inst.b[5], -e_init);
        // energy box rows
        assert_eq!(inst.b[6], cfg.e_max);
        assert_eq!(inst.b[7], -cfg.e_min);
        // switch counter rows carry -d_{t-T}; rows before them: E dynamics
        // (2T), E_0 pair (2), E box (2T+2), P rows (2T), z dynamics (2T),
        // z_0 pair (2), z box (2T+2), d box (2T), w box (2T)
        let s_dyn_start = 10 * lay.t + 4 * (lay.t + 1) + 4;
        assert_eq!(inst.b[s_dyn_start], -d_past[0]);
        assert_eq!(inst.b[s_dyn_start + 1], d_past[0]);
        assert_eq!(inst.b[s_dyn_start + 2], -d_past[1]);
    }

    #[test]
    fn infeasible_when_demand_exceeds_discharge() {
        // energy at the bottom and a demanded load beyond P_max: the
        // capacitor would have to fall below E_min, so the oracle reports
        // infeasible (bound arithmetic: E_1 = E_min + tau(P - load) < E_min
        // for every P <= P_max < load)
        let cfg = FuelCellConfig {
            horizon: 1,
            ..FuelCellConfig::default()
        };
        let prob = build_fuel_cell(&cfg).unwrap();
        let theta = theta_from_state(&cfg, cfg.e_min, 0.0, 0.0, &[0.0], &[4.0 * cfg.p_max]);
        // theta_from_state clips nothing here; the load entry is past P_max
        // deliberately
        let mut theta = theta;
        theta[4] = 4.0 * cfg.p_max;
        let inst = instantiate(&prob, &ParameterInstance::new(theta)).unwrap();
        assert!(matches!(
            enumerate_oracle(&inst, &prob.integer_indices, 4096),
            Err(Error::Infeasible)
        ));
    }

    #[test]
    fn rollout_sampler_produces_feasible_centers() {
        let cfg = FuelCellConfig {
            horizon: 2,
            ..FuelCellConfig::default()
        };
        let prob = build_fuel_cell(&cfg).unwrap();
        let spec =
            fuel_cell_sampler(&cfg, &prob, 5, 0.5, 0, &BnbOptions::default()).unwrap();
        assert!(spec.filter_feasible());
        if let SamplerSpec::Sphere { centers, .. } = &spec {
            assert_eq!(centers.len(), 5);
            for c in centers {
                let inst = instantiate(&prob, &ParameterInstance::new(c.clone())).unwrap();
                let sol = crate::solver::solve_miqo(&inst, &prob.integer_indices).unwrap();
                let s = extract_strategy(&inst, &sol.x, &prob.integer_indices).unwrap();
                assert!(!s.tight_set().is_empty());
            }
        } else {
            panic!("expected sphere sampler");
        }
    }
}
