//! Parametric MIQO standard form, parameter instantiation, constraint
//! evaluation, and the strategy abstraction.
//!
//! A problem is
//!
//! ```text
//! minimize    (1/2) x^T P x + q^T x + r
//! subject to  A x <= b
//!             x_i integer for i in integer_indices
//! ```
//!
//! with affine parameter maps theta -> (q, b) and optionally
//! theta -> (P, A).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{ldl_factor, min_degree_order, LdlOptions};
use crate::sparse::{norm_inf, CooMatrix, CscMatrix, CsrMatrix};

/// Relative tightness tolerance for strategy extraction.
pub const EPS_TIGHT: f64 = 1e-5;
/// Largest distance from an integer accepted when reading off x_I.
pub const EPS_INTEGRAL: f64 = 1e-4;
/// PSD tolerance: smallest admissible eigenvalue of P.
pub const EPS_PSD: f64 = 1e-8;

/// Affine map from theta into a vector: out[row] += val * theta[param].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VecMap {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl VecMap {
    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn push(&mut self, row: usize, param: usize, val: f64) {
        self.rows.push(row);
        self.cols.push(param);
        self.vals.push(val);
    }

    fn apply(&self, theta: &[f64], out: &mut [f64]) {
        for ((&r, &c), &v) in self.rows.iter().zip(&self.cols).zip(&self.vals) {
            out[r] += v * theta[c];
        }
    }

    fn validate(&self, nrows: usize, p_dim: usize, what: &str) -> Result<()> {
        if self.rows.len() != self.vals.len() || self.cols.len() != self.vals.len() {
            return Err(Error::Format(format!("{what} map arrays unequal length")));
        }
        for (&r, &c) in self.rows.iter().zip(&self.cols) {
            if r >= nrows || c >= p_dim {
                return Err(Error::Dimension(format!(
                    "{what} map entry ({r}, {c}) outside {nrows}x{p_dim}"
                )));
            }
        }
        Ok(())
    }
}

/// Affine map from theta into a sparse matrix:
/// out[(row, col)] += val * theta[param].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatMap {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub params: Vec<usize>,
    pub vals: Vec<f64>,
}

impl MatMap {
    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn push(&mut self, row: usize, col: usize, param: usize, val: f64) {
        self.rows.push(row);
        self.cols.push(col);
        self.params.push(param);
        self.vals.push(val);
    }

    fn apply(&self, theta: &[f64], coo: &mut CooMatrix) {
        for k in 0..self.vals.len() {
            coo.push(self.rows[k], self.cols[k], self.vals[k] * theta[self.params[k]]);
        }
    }

    fn validate(&self, nrows: usize, ncols: usize, p_dim: usize, what: &str) -> Result<()> {
        if self.rows.len() != self.vals.len()
            || self.cols.len() != self.vals.len()
            || self.params.len() != self.vals.len()
        {
            return Err(Error::Format(format!("{what} map arrays unequal length")));
        }
        for k in 0..self.vals.len() {
            if self.rows[k] >= nrows || self.cols[k] >= ncols || self.params[k] >= p_dim {
                return Err(Error::Dimension(format!("{what} map entry {k} out of range")));
            }
        }
        Ok(())
    }
}

/// Affine parameter maps. `q` and `b` maps are always available; `p` and `a`
/// maps mark the problem as having parametric matrices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamMap {
    #[serde(default)]
    pub q: VecMap,
    #[serde(default)]
    pub b: VecMap,
    #[serde(default, skip_serializing_if = "MatMap::is_empty")]
    pub p: MatMap,
    #[serde(default, skip_serializing_if = "MatMap::is_empty")]
    pub a: MatMap,
}

/// Parametric MIQO in standard form.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricMiqo {
    pub n: usize,
    pub m: usize,
    pub p_dim: usize,
    /// Sorted, unique indices of integer variables.
    pub integer_indices: Vec<usize>,
    /// Upper triangle of the base cost Hessian.
    pub p_base: CooMatrix,
    pub q_base: Vec<f64>,
    pub r_base: f64,
    pub a_base: CooMatrix,
    pub b_base: Vec<f64>,
    pub param_map: ParamMap,
    pub matrices_parametric: bool,
}

impl ParametricMiqo {
    pub fn num_integers(&self) -> usize {
        self.integer_indices.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.q_base.len() != self.n || self.b_base.len() != self.m {
            return Err(Error::Dimension("q/b length differs from n/m".into()));
        }
        self.p_base.validate()?;
        self.a_base.validate()?;
        if self.p_base.nrows != self.n || self.p_base.ncols != self.n {
            return Err(Error::Dimension("P must be n x n".into()));
        }
        if self.p_base.rows.iter().zip(&self.p_base.cols).any(|(&i, &j)| i > j) {
            return Err(Error::Format("P must store the upper triangle".into()));
        }
        if self.a_base.nrows != self.m || self.a_base.ncols != self.n {
            return Err(Error::Dimension("A must be m x n".into()));
        }
        let sorted = self
            .integer_indices
            .windows(2)
            .all(|w| w[0] < w[1]);
        if !sorted || self.integer_indices.iter().any(|&i| i >= self.n) {
            return Err(Error::Format(
                "integer_indices must be sorted, unique and within bounds".into(),
            ));
        }
        self.param_map.q.validate(self.n, self.p_dim, "q")?;
        self.param_map.b.validate(self.m, self.p_dim, "b")?;
        self.param_map.p.validate(self.n, self.n, self.p_dim, "P")?;
        self.param_map.a.validate(self.m, self.n, self.p_dim, "A")?;
        let has_mat_maps = !self.param_map.p.is_empty() || !self.param_map.a.is_empty();
        if has_mat_maps != self.matrices_parametric {
            return Err(Error::Format(
                "matrices_parametric flag inconsistent with P/A maps".into(),
            ));
        }
        Ok(())
    }
}

/// A parameter sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterInstance {
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
}

impl ParameterInstance {
    pub fn new(theta: Vec<f64>) -> Self {
        ParameterInstance { theta, id: None }
    }

    pub fn with_id(theta: Vec<f64>, id: u64) -> Self {
        ParameterInstance { theta, id: Some(id) }
    }
}

/// Concrete problem data after instantiating the parameter maps.
#[derive(Debug, Clone)]
pub struct InstanceData {
    pub n: usize,
    pub m: usize,
    /// Upper triangle of the cost Hessian.
    pub p_upper: CscMatrix,
    pub q: Vec<f64>,
    pub r: f64,
    pub a: CsrMatrix,
    pub b: Vec<f64>,
}

impl InstanceData {
    pub fn objective(&self, x: &[f64]) -> f64 {
        0.5 * self.p_upper.sym_quad_form(x) + crate::sparse::dot(&self.q, x) + self.r
    }

    /// Certifies that P is PSD by factoring P + tol*I and checking pivot
    /// signs. Intended for load-time and test use, not hot paths.
    pub fn check_psd(&self, tol: f64) -> Result<()> {
        let mut shifted = self.p_upper.to_coo();
        for i in 0..self.n {
            shifted.push(i, i, tol);
        }
        let upper = shifted.to_csc();
        let perm = min_degree_order(&upper);
        let signs = vec![1i8; self.n];
        let opts = LdlOptions { delta: 0.0, eps: 0.0 };
        match ldl_factor(&upper, &perm, &signs, opts) {
            Ok(f) if f.d.iter().all(|&d| d > 0.0) => Ok(()),
            _ => Err(Error::Format(format!(
                "P is not positive semidefinite within {tol:.1e}"
            ))),
        }
    }
}

/// Instantiate concrete data at a parameter point. Pure function of
/// (base data, maps, theta).
pub fn instantiate(problem: &ParametricMiqo, theta: &ParameterInstance) -> Result<InstanceData> {
    let t = &theta.theta;
    if t.len() != problem.p_dim {
        return Err(Error::Dimension(format!(
            "theta has length {}, expected {}",
            t.len(),
            problem.p_dim
        )));
    }
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("theta".into()));
    }
    let mut q = problem.q_base.clone();
    problem.param_map.q.apply(t, &mut q);
    let mut b = problem.b_base.clone();
    problem.param_map.b.apply(t, &mut b);

    let p_upper = if problem.param_map.p.is_empty() {
        problem.p_base.to_csc()
    } else {
        let mut coo = problem.p_base.clone();
        problem.param_map.p.apply(t, &mut coo);
        coo.to_csc()
    };
    let a = if problem.param_map.a.is_empty() {
        problem.a_base.to_csr()
    } else {
        let mut coo = problem.a_base.clone();
        problem.param_map.a.apply(t, &mut coo);
        coo.to_csr()
    };

    if q.iter().any(|v| !v.is_finite())
        || b.iter().any(|v| !v.is_finite())
        || p_upper.vals.iter().any(|v| !v.is_finite())
        || a.vals.iter().any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("instantiated problem data".into()));
    }

    Ok(InstanceData {
        n: problem.n,
        m: problem.m,
        p_upper,
        q,
        r: problem.r_base,
        a,
        b,
    })
}

/// Normalized maximum constraint violation:
/// |(Ax - b)_+|_inf / max(|b|_inf, 1).
pub fn violation(instance: &InstanceData, x: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), instance.n);
    let mut worst = 0.0f64;
    for i in 0..instance.m {
        let v = instance.a.row_dot(i, x) - instance.b[i];
        if v > worst {
            worst = v;
        }
    }
    worst / norm_inf(&instance.b).max(1.0)
}

/// Tight-constraint set plus optimal integer assignment; the label object of
/// the whole toolkit. Construction sorts and dedups the tight set so equality
/// and hashing are insensitive to input order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Strategy {
    tight_set: Vec<usize>,
    integer_values: Vec<i64>,
}

impl Strategy {
    pub fn new(mut tight_set: Vec<usize>, integer_values: Vec<i64>) -> Self {
        tight_set.sort_unstable();
        tight_set.dedup();
        Strategy {
            tight_set,
            integer_values,
        }
    }

    pub fn tight_set(&self) -> &[usize] {
        &self.tight_set
    }

    pub fn integer_values(&self) -> &[i64] {
        &self.integer_values
    }

    /// Stable content hash used as the cache key; identical across runs and
    /// platforms.
    pub fn stable_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"strategy-v1");
        h.update((self.tight_set.len() as u64).to_le_bytes());
        for &i in &self.tight_set {
            h.update((i as u64).to_le_bytes());
        }
        h.update((self.integer_values.len() as u64).to_le_bytes());
        for &v in &self.integer_values {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn hash_hex(&self) -> String {
        let bytes = self.stable_hash();
        let mut s = String::with_capacity(64);
        for b in bytes {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }
}

/// Read the strategy off an optimal solution: tight rows within the relative
/// tolerance plus the rounded integer block.
pub fn extract_strategy(
    instance: &InstanceData,
    x_opt: &[f64],
    integer_indices: &[usize],
) -> Result<Strategy> {
    debug_assert_eq!(x_opt.len(), instance.n);
    let mut tight = Vec::new();
    for i in 0..instance.m {
        let slack = instance.b[i] - instance.a.row_dot(i, x_opt);
        if slack <= EPS_TIGHT * (1.0 + instance.b[i].abs()) {
            tight.push(i);
        }
    }
    let mut ints = Vec::with_capacity(integer_indices.len());
    for &i in integer_indices {
        let v = x_opt[i];
        let rounded = v.round();
        if (v - rounded).abs() > EPS_INTEGRAL {
            return Err(Error::NonIntegralSolution {
                index: i,
                value: v,
                tol: EPS_INTEGRAL,
            });
        }
        ints.push(rounded as i64);
    }
    Ok(Strategy::new(tight, ints))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag_problem(n: usize, m: usize) -> ParametricMiqo {
        let mut p = CooMatrix::new(n, n);
        for i in 0..n {
            p.push(i, i, 1.0);
        }
        let mut a = CooMatrix::new(m, n);
        for i in 0..m {
            a.push(i, i % n, 1.0);
        }
        ParametricMiqo {
            n,
            m,
            p_dim: m,
            integer_indices: vec![],
            p_base: p,
            q_base: vec![0.0; n],
            r_base: 0.0,
            a_base: a,
            b_base: vec![1.0; m],
            param_map: ParamMap::default(),
            matrices_parametric: false,
        }
    }

    #[test]
    fn identity_map_zero_theta_is_base_data() {
        let prob = diag_problem(3, 3);
        let inst = instantiate(&prob, &ParameterInstance::new(vec![0.0; 3])).unwrap();
        assert_eq!(inst.q, vec![0.0; 3]);
        assert_eq!(inst.b, vec![1.0; 3]);
    }

    #[test]
    fn unit_basis_shifts_single_b_entry() {
        let mut prob = diag_problem(3, 3);
        for i in 0..3 {
            prob.param_map.b.push(i, i, 1.0);
        }
        let inst = instantiate(&prob, &ParameterInstance::new(vec![1.0, 0.0, 0.0])).unwrap();
        assert_eq!(inst.b, vec![2.0, 1.0, 1.0]);
    }

    #[test]
    fn instantiate_rejects_wrong_theta_length() {
        let prob = diag_problem(2, 2);
        let err = instantiate(&prob, &ParameterInstance::new(vec![0.0])).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn instantiate_rejects_non_finite_theta() {
        let prob = diag_problem(2, 2);
        let err = instantiate(&prob, &ParameterInstance::new(vec![f64::NAN, 0.0])).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn violation_zero_at_interior_point() {
        let prob = diag_problem(2, 2);
        let inst = instantiate(&prob, &ParameterInstance::new(vec![0.0, 0.0])).unwrap();
        assert_eq!(violation(&inst, &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn violation_single_row() {
        // A = [1], b = [1], x = 3 -> (3 - 1)/max(1,1) = 2
        let mut a = CooMatrix::new(1, 1);
        a.push(0, 0, 1.0);
        let inst = InstanceData {
            n: 1,
            m: 1,
            p_upper: CooMatrix::new(1, 1).to_csc(),
            q: vec![0.0],
            r: 0.0,
            a: a.to_csr(),
            b: vec![1.0],
        };
        assert_eq!(violation(&inst, &[3.0]), 2.0);
    }

    #[test]
    fn extract_interior_optimum_has_empty_tight_set() {
        let prob = diag_problem(2, 2);
        let inst = instantiate(&prob, &ParameterInstance::new(vec![0.0, 0.0])).unwrap();
        let s = extract_strategy(&inst, &[0.0, 0.0], &[]).unwrap();
        assert!(s.tight_set().is_empty());
    }

    #[test]
    fn extract_active_bound() {
        // min x^2 s.t. -x <= -1; optimum x = 1 has row 1 tight
        let mut p = CooMatrix::new(1, 1);
        p.push(0, 0, 2.0);
        let mut a = CooMatrix::new(1, 1);
        a.push(0, 0, -1.0);
        let inst = InstanceData {
            n: 1,
            m: 1,
            p_upper: p.to_csc(),
            q: vec![0.0],
            r: 0.0,
            a: a.to_csr(),
            b: vec![-1.0],
        };
        let s = extract_strategy(&inst, &[1.0], &[]).unwrap();
        assert_eq!(s.tight_set(), &[0]);
    }

    #[test]
    fn extract_rejects_non_integral() {
        let prob = diag_problem(2, 2);
        let inst = instantiate(&prob, &ParameterInstance::new(vec![0.0, 0.0])).unwrap();
        let err = extract_strategy(&inst, &[0.4, 0.0], &[0]).unwrap_err();
        assert!(matches!(err, Error::NonIntegralSolution { .. }));
    }

    #[test]
    fn psd_check_accepts_psd_rejects_indefinite() {
        let prob = diag_problem(2, 2);
        let inst = instantiate(&prob, &ParameterInstance::new(vec![0.0, 0.0])).unwrap();
        inst.check_psd(EPS_PSD).unwrap();

        let mut p = CooMatrix::new(2, 2);
        p.push(0, 0, 1.0);
        p.push(1, 1, -1.0);
        let bad = InstanceData {
            p_upper: p.to_csc(),
            ..inst
        };
        assert!(bad.check_psd(EPS_PSD).is_err());
    }

    proptest! {
        #[test]
        fn strategy_hash_insensitive_to_tight_order(
            mut tight in proptest::collection::vec(0usize..50, 0..12),
            ints in proptest::collection::vec(-3i64..4, 0..5),
            seed in 0u64..1000,
        ) {
            let a = super::Strategy::new(tight.clone(), ints.clone());
            // deterministic shuffle of the input order
            let mut rngstate = seed.wrapping_add(1);
            for i in (1..tight.len()).rev() {
                rngstate = rngstate.wrapping_mul(6364136223846793005).wrapping_add(1);
                let j = (rngstate >> 33) as usize % (i + 1);
                tight.swap(i, j);
            }
            let b = super::Strategy::new(tight, ints);
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.stable_hash(), b.stable_hash());
        }

        #[test]
        fn violation_total_and_nonnegative(
            x in proptest::collection::vec(-100.0f64..100.0, 2),
            b in proptest::collection::vec(-10.0f64..10.0, 2),
        ) {
            let mut a = CooMatrix::new(2, 2);
            a.push(0, 0, 1.0);
            a.push(1, 1, -2.0);
            let inst = InstanceData {
                n: 2,
                m: 2,
                p_upper: CooMatrix::new(2, 2).to_csc(),
                q: vec![0.0; 2],
                r: 0.0,
                a: a.to_csr(),
                b,
            };
            let v = violation(&inst, &x);
            prop_assert!(v.is_finite());
            prop_assert!(v >= 0.0);
        }
    }
}
