//! Motion planning with rectangular obstacle avoidance: double-integrator
//! dynamics, state/input boxes, and big-M disjunctions per obstacle face.
//!
//! Variables: p_t (positions), v_t (velocities) for t = 0..T, u_t (inputs)
//! for t < T, and per (t, obstacle) the 2d binaries (delta_lo, delta_hi).
//! theta = p_init (the initial position), entering b only, so factor
//! caching applies. The tracking cost is averaged over the horizon, which
//! keeps objective magnitudes O(1) without changing the optimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::problem::{ParamMap, ParametricMiqo};
use crate::sampler::SamplerSpec;
use crate::sparse::CooMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MotionConfig {
    /// Spatial dimension (2 for planar systems).
    pub dims: usize,
    pub horizon: usize,
    /// Sampling time, seconds.
    pub tau: f64,
    /// Control effort weight.
    pub gamma: f64,
    pub p_des: Vec<f64>,
    pub p_lo: Vec<f64>,
    pub p_hi: Vec<f64>,
    pub v_lo: Vec<f64>,
    pub v_hi: Vec<f64>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub v_init: Vec<f64>,
    pub obstacles: Vec<Obstacle>,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            dims: 2,
            horizon: 60,
            tau: 0.1,
            gamma: 0.01,
            p_des: vec![-10.5, -10.0],
            p_lo: vec![-15.0, -15.0],
            p_hi: vec![15.0, 15.0],
            v_lo: vec![-3.0, -3.0],
            v_hi: vec![3.0, 3.0],
            u_lo: vec![-2.0, -2.0],
            u_hi: vec![2.0, 2.0],
            v_init: vec![0.0, 0.0],
            obstacles: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MotionLayout {
    pub d: usize,
    pub t: usize,
    pub n_obs: usize,
    pub p: usize,
    pub v: usize,
    pub u: usize,
    pub delta: usize,
}

impl MotionLayout {
    pub fn new(cfg: &MotionConfig) -> Self {
        let (d, t, n_obs) = (cfg.dims, cfg.horizon, cfg.obstacles.len());
        MotionLayout {
            d,
            t,
            n_obs,
            p: 0,
            v: d * (t + 1),
            u: 2 * d * (t + 1),
            delta: 2 * d * (t + 1) + d * t,
        }
    }

    pub fn n_vars(&self) -> usize {
        2 * self.d * (self.t + 1) + self.d * self.t + 2 * self.d * (self.t + 1) * self.n_obs
    }

    pub fn n_rows(&self) -> usize {
        // dynamics pairs + init pairs + p/v boxes + u box + per (t, obs):
        // 2d big-M rows, 1 sum row, 4d binary box rows
        4 * self.d * self.t
            + 4 * self.d
            + 4 * self.d * (self.t + 1)
            + 2 * self.d * self.t
            + (self.t + 1) * self.n_obs * (6 * self.d + 1)
    }

    pub fn pos(&self, t: usize, j: usize) -> usize {
        self.p + t * self.d + j
    }

    pub fn vel(&self, t: usize, j: usize) -> usize {
        self.v + t * self.d + j
    }

    pub fn inp(&self, t: usize, j: usize) -> usize {
        self.u + t * self.d + j
    }

    /// delta_lo then delta_hi per (t, obstacle).
    pub fn delta_lo(&self, t: usize, i: usize, j: usize) -> usize {
        self.delta + 2 * self.d * (t * self.n_obs + i) + j
    }

    pub fn delta_hi(&self, t: usize, i: usize, j: usize) -> usize {
        self.delta + 2 * self.d * (t * self.n_obs + i) + self.d + j
    }
}

/// Big-M constant: the widest box span plus a unit margin, the tightest
/// valid deactivation bound derivable from the position box.
pub fn big_m(cfg: &MotionConfig) -> f64 {
    cfg.p_hi
        .iter()
        .zip(&cfg.p_lo)
        .map(|(h, l)| h - l)
        .fold(0.0f64, f64::max)
        + 1.0
}

pub fn build_motion(cfg: &MotionConfig) -> Result<ParametricMiqo> {
    let d = cfg.dims;
    if cfg.horizon < 1 || d < 1 {
        return Err(Error::Config("motion horizon and dims must be >= 1".into()));
    }
    for v in [&cfg.p_des, &cfg.p_lo, &cfg.p_hi, &cfg.v_lo, &cfg.v_hi, &cfg.u_lo, &cfg.u_hi, &cfg.v_init] {
        if v.len() != d {
            return Err(Error::Config("motion config vector length != dims".into()));
        }
    }
    for (o, obs) in cfg.obstacles.iter().enumerate() {
        if obs.lo.len() != d || obs.hi.len() != d {
            return Err(Error::Config(format!("obstacle {o} dimension mismatch")));
        }
        for j in 0..d {
            if obs.lo[j] >= obs.hi[j] {
                return Err(Error::Config(format!("obstacle {o} has empty extent")));
            }
            if obs.lo[j] < cfg.p_lo[j] || obs.hi[j] > cfg.p_hi[j] {
                return Err(Error::Config(format!(
                    "obstacle {o} outside the position box; big-M would be too small"
                )));
            }
        }
    }
    let lay = MotionLayout::new(cfg);
    let t_h = cfg.horizon;
    let n = lay.n_vars();
    let m_big = big_m(cfg);
    let stage_w = 1.0 / (t_h + 1) as f64;

    // cost: average of |p_t - p_des|^2 over t = 0..T plus gamma |u_t|^2
    let mut p_mat = CooMatrix::new(n, n);
    let mut q = vec![0.0; n];
    let mut r_const = 0.0;
    for t in 0..=t_h {
        for j in 0..d {
            p_mat.push(lay.pos(t, j), lay.pos(t, j), 2.0 * stage_w);
            q[lay.pos(t, j)] = -2.0 * stage_w * cfg.p_des[j];
            r_const += stage_w * cfg.p_des[j] * cfg.p_des[j];
        }
    }
    for t in 0..t_h {
        for j in 0..d {
            p_mat.push(lay.inp(t, j), lay.inp(t, j), 2.0 * cfg.gamma * stage_w);
        }
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

    // double-integrator dynamics as row pairs:
    // p_{t+1} = p_t + tau v_t + tau^2/2 u_t; v_{t+1} = v_t + tau u_t
    for t in 0..t_h {
        for j in 0..d {
            let rows = [
                (lay.pos(t + 1, j), lay.pos(t, j), lay.vel(t, j), cfg.tau, 0.5 * cfg.tau * cfg.tau),
                (lay.vel(t + 1, j), lay.vel(t, j), lay.inp(t, j), cfg.tau, 0.0),
            ];
            // position row couples p, v and u; velocity row couples v and u
            let (pj1, pj0, vj, tau, half) = rows[0];
            push(
                &mut a,
                &mut b,
                &[(pj1, 1.0), (pj0, -1.0), (vj, -tau), (lay.inp(t, j), -half)],
                0.0,
            );
            push(
                &mut a,
                &mut b,
                &[(pj1, -1.0), (pj0, 1.0), (vj, tau), (lay.inp(t, j), half)],
                0.0,
            );
            let (vj1, vj0, uj, tau, _) = rows[1];
            push(&mut a, &mut b, &[(vj1, 1.0), (vj0, -1.0), (uj, -tau)], 0.0);
            push(&mut a, &mut b, &[(vj1, -1.0), (vj0, 1.0), (uj, tau)], 0.0);
        }
    }
    // initial state: p_0 = theta (parameter), v_0 = v_init (constant)
    for j in 0..d {
        let r1 = push(&mut a, &mut b, &[(lay.pos(0, j), 1.0)], 0.0);
        pm.b.push(r1, j, 1.0);
        let r2 = push(&mut a, &mut b, &[(lay.pos(0, j), -1.0)], 0.0);
        pm.b.push(r2, j, -1.0);
    }
    for j in 0..d {
        push(&mut a, &mut b, &[(lay.vel(0, j), 1.0)], cfg.v_init[j]);
        push(&mut a, &mut b, &[(lay.vel(0, j), -1.0)], -cfg.v_init[j]);
    }
    // state boxes
    for t in 0..=t_h {
        for j in 0..d {
            push(&mut a, &mut b, &[(lay.pos(t, j), 1.0)], cfg.p_hi[j]);
            push(&mut a, &mut b, &[(lay.pos(t, j), -1.0)], -cfg.p_lo[j]);
            push(&mut a, &mut b, &[(lay.vel(t, j), 1.0)], cfg.v_hi[j]);
            push(&mut a, &mut b, &[(lay.vel(t, j), -1.0)], -cfg.v_lo[j]);
        }
    }
    for t in 0..t_h {
        for j in 0..d {
            push(&mut a, &mut b, &[(lay.inp(t, j), 1.0)], cfg.u_hi[j]);
            push(&mut a, &mut b, &[(lay.inp(t, j), -1.0)], -cfg.u_lo[j]);
        }
    }
    // obstacle avoidance big-M rows and indicator budget
    for t in 0..=t_h {
        for (i, obs) in cfg.obstacles.iter().enumerate() {
            for j in 0..d {
                // o_hi_j - M delta_hi <= p_j  <=>  -p_j - M delta_hi <= -o_hi_j
                push(
                    &mut a,
                    &mut b,
                    &[(lay.pos(t, j), -1.0), (lay.delta_hi(t, i, j), -m_big)],
                    -obs.hi[j],
                );
                // p_j <= o_lo_j + M delta_lo
                push(
                    &mut a,
                    &mut b,
                    &[(lay.pos(t, j), 1.0), (lay.delta_lo(t, i, j), -m_big)],
                    obs.lo[j],
                );
            }
            // 1^T delta_lo + 1^T delta_hi <= 2d - 1
            let all: Vec<(usize, f64)> = (0..d)
                .map(|j| (lay.delta_lo(t, i, j), 1.0))
                .chain((0..d).map(|j| (lay.delta_hi(t, i, j), 1.0)))
                .collect();
            push(&mut a, &mut b, &all, (2 * d - 1) as f64);
            for j in 0..d {
                for var in [lay.delta_lo(t, i, j), lay.delta_hi(t, i, j)] {
                    push(&mut a, &mut b, &[(var, 1.0)], 1.0);
                    push(&mut a, &mut b, &[(var, -1.0)], 0.0);
                }
            }
        }
    }

    let m = row;
    debug_assert_eq!(m, lay.n_rows());
    a.nrows = m;

    let problem = ParametricMiqo {
        n,
        m,
        p_dim: d,
        integer_indices: (lay.delta..n).collect(),
        p_base: p_mat,
        q_base: q,
        r_base: r_const,
        a_base: a,
        b_base: b,
        param_map: pm,
        matrices_parametric: false,
    };
    problem.validate()?;
    Ok(problem)
}

/// theta = p_init sampled uniformly in the position box.
pub fn motion_sampler(cfg: &MotionConfig, filter_feasible: bool) -> SamplerSpec {
    SamplerSpec::Box {
        lower: cfg.p_lo.clone(),
        upper: cfg.p_hi.clone(),
        filter_feasible,
    }
}

/// Seeded rectangular obstacles inside the position box, kept away from the
/// desired position so the target itself stays reachable.
pub fn random_obstacles(cfg: &MotionConfig, n_obs: usize, seed: u64) -> Vec<Obstacle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b57);
    let d = cfg.dims;
    let mut out = Vec::with_capacity(n_obs);
    let mut attempts = 0;
    while out.len() < n_obs && attempts < 1000 {
        attempts += 1;
        let mut lo = Vec::with_capacity(d);
        let mut hi = Vec::with_capacity(d);
        for j in 0..d {
            let span = cfg.p_hi[j] - cfg.p_lo[j];
            let size = rng.random_range(0.08..0.22) * span;
            let start = rng.random_range(cfg.p_lo[j] + 0.05 * span..cfg.p_hi[j] - size - 0.05 * span);
            lo.push(start);
            hi.push(start + size);
        }
        let contains_des = (0..d).all(|j| cfg.p_des[j] >= lo[j] - 0.5 && cfg.p_des[j] <= hi[j] + 0.5);
        if contains_des {
            continue;
        }
        out.push(Obstacle { lo, hi });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{instantiate, violation, ParameterInstance};
    use crate::solver::{solve_miqo, solve_qp, QpOptions, QpStatus};

    fn desk_cfg(horizon: usize, n_obs: usize) -> MotionConfig {
        let mut cfg = MotionConfig {
            horizon,
            ..MotionConfig::default()
        };
        cfg.obstacles = random_obstacles(&cfg, n_obs, 42);
        cfg
    }

    #[test]
    fn dimension_formulas() {
        for (t, n_obs) in [(3usize, 0usize), (5, 2), (8, 3)] {
            let cfg = desk_cfg(t, n_obs);
            assert_eq!(cfg.obstacles.len(), n_obs);
            let p = build_motion(&cfg).unwrap();
            let lay = MotionLayout::new(&cfg);
            assert_eq!(p.n, lay.n_vars());
            assert_eq!(p.m, lay.n_rows());
            assert_eq!(p.num_integers(), 4 * (t + 1) * n_obs);
            assert!(!p.matrices_parametric);
        }
    }

    #[test]
    fn no_obstacles_is_a_plain_qp() {
        let cfg = desk_cfg(6, 0);
        let prob = build_motion(&cfg).unwrap();
        assert!(prob.integer_indices.is_empty());
        let theta = vec![5.0, 5.0];
        let inst = instantiate(&prob, &ParameterInstance::new(theta)).unwrap();
        let qp = solve_qp(&inst, &[], &[], &[], None, &QpOptions::default()).unwrap();
        assert_eq!(qp.status, QpStatus::Optimal);
        let bb = solve_miqo(&inst, &prob.integer_indices).unwrap();
        assert!((qp.objective - bb.objective).abs() < 1e-8);
        // the trajectory heads toward the target
        let lay = MotionLayout::new(&cfg);
        let d0 = (inst_pos(&qp.x, &lay, 0, 0) - cfg.p_des[0]).hypot(inst_pos(&qp.x, &lay, 0, 1) - cfg.p_des[1]);
        let d_t = (inst_pos(&qp.x, &lay, lay.t, 0) - cfg.p_des[0])
            .hypot(inst_pos(&qp.x, &lay, lay.t, 1) - cfg.p_des[1]);
        assert!(d_t < d0);
    }

    fn inst_pos(x: &[f64], lay: &MotionLayout, t: usize, j: usize) -> f64 {
        x[lay.pos(t, j)]
    }

    #[test]
    fn resting_at_target_costs_nothing() {
        let mut cfg = desk_cfg(4, 1);
        // keep the single obstacle away from the target corner
        cfg.obstacles = vec![Obstacle {
            lo: vec![5.0, 5.0],
            hi: vec![8.0, 8.0],
        }];
        let prob = build_motion(&cfg).unwrap();
        let inst = instantiate(&prob, &ParameterInstance::new(cfg.p_des.clone())).unwrap();
        let sol = solve_miqo(&inst, &prob.integer_indices).unwrap();
        assert!(sol.objective.abs() < 1e-7, "objective {}", sol.objective);
        assert!(violation(&inst, &sol.x) <= 1e-6);
    }

    #[test]
    fn obstacle_is_avoided() {
        // a slab between start and target forces a detour: no position may
        // sit strictly inside the obstacle
        let mut cfg = MotionConfig {
            horizon: 14,
            ..MotionConfig::default()
        };
        cfg.p_des = vec![-6.0, 0.0];
        cfg.v_hi = vec![6.0, 6.0];
        cfg.v_lo = vec![-6.0, -6.0];
        cfg.u_hi = vec![6.0, 6.0];
        cfg.u_lo = vec![-6.0, -6.0];
        cfg.tau = 0.5;
        cfg.obstacles = vec![Obstacle {
            lo: vec![-2.0, -4.0],
            hi: vec![2.0, 4.0],
        }];
        let prob = build_motion(&cfg).unwrap();
        let inst = instantiate(&prob, &ParameterInstance::new(vec![6.0, 0.0])).unwrap();
        let sol = solve_miqo(&inst, &prob.integer_indices).unwrap();
        let lay = MotionLayout::new(&cfg);
        assert!(violation(&inst, &sol.x) <= 1e-6);
        for t in 0..=lay.t {
            let px = sol.x[lay.pos(t, 0)];
            let py = sol.x[lay.pos(t, 1)];
            let inside = px > -2.0 + 1e-6 && px < 2.0 - 1e-6 && py > -4.0 + 1e-6 && py < 4.0 - 1e-6;
            assert!(!inside, "inside obstacle at t={t}: ({px}, {py})");
        }
        // and it actually made progress toward the target
        let final_dist =
            (sol.x[lay.pos(lay.t, 0)] + 6.0).hypot(sol.x[lay.pos(lay.t, 1)]);
        assert!(final_dist < 2.0, "final distance {final_dist}");
    }

    #[test]
    fn box_sampler_stays_in_bounds() {
        let cfg = desk_cfg(3, 1);
        let spec = motion_sampler(&cfg, false);
        for i in 0..100 {
            let t = spec.draw(9, i);
            for j in 0..2 {
                assert!(t[j] >= cfg.p_lo[j] && t[j] <= cfg.p_hi[j]);
            }
        }
    }

    #[test]
    fn obstacle_outside_box_rejected() {
        let mut cfg = desk_cfg(3, 0);
        cfg.obstacles = vec![Obstacle {
            lo: vec![10.0, 10.0],
            hi: vec![20.0, 12.0],
        }];
        assert!(build_motion(&cfg).is_err());
    }
}
