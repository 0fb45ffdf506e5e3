//! The `pmiqo-v1` problem file format.
//!
//! JSON document: `{format, n, m, d, p_dim, P, q, r, A, b, param_map,
//! integer_indices, matrices_parametric}` with sparse blocks as
//! `{rows, cols, vals}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{ParamMap, ParametricMiqo};
use crate::sparse::CooMatrix;

pub const FORMAT_TAG: &str = "pmiqo-v1";

#[derive(Debug, Serialize, Deserialize)]
struct SparseBlock {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseBlock {
    fn from_coo(coo: &CooMatrix) -> Self {
        SparseBlock {
            rows: coo.rows.clone(),
            cols: coo.cols.clone(),
            vals: coo.vals.clone(),
        }
    }

    fn into_coo(self, nrows: usize, ncols: usize) -> CooMatrix {
        CooMatrix {
            nrows,
            ncols,
            rows: self.rows,
            cols: self.cols,
            vals: self.vals,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProblemFile {
    format: String,
    n: usize,
    m: usize,
    d: usize,
    p_dim: usize,
    #[serde(rename = "P")]
    p: SparseBlock,
    q: Vec<f64>,
    r: f64,
    #[serde(rename = "A")]
    a: SparseBlock,
    b: Vec<f64>,
    param_map: ParamMap,
    integer_indices: Vec<usize>,
    matrices_parametric: bool,
}

pub fn to_json(problem: &ParametricMiqo) -> Result<String> {
    problem.validate()?;
    let file = ProblemFile {
        format: FORMAT_TAG.to_string(),
        n: problem.n,
        m: problem.m,
        d: problem.num_integers(),
        p_dim: problem.p_dim,
        p: SparseBlock::from_coo(&problem.p_base),
        q: problem.q_base.clone(),
        r: problem.r_base,
        a: SparseBlock::from_coo(&problem.a_base),
        b: problem.b_base.clone(),
        param_map: problem.param_map.clone(),
        integer_indices: problem.integer_indices.clone(),
        matrices_parametric: problem.matrices_parametric,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn from_json(text: &str) -> Result<ParametricMiqo> {
    let file: ProblemFile = serde_json::from_str(text)?;
    if file.format != FORMAT_TAG {
        return Err(Error::Format(format!(
            "unsupported problem format tag '{}', expected '{FORMAT_TAG}'",
            file.format
        )));
    }
    if file.d != file.integer_indices.len() {
        return Err(Error::Format(format!(
            "d = {} disagrees with {} integer indices",
            file.d,
            file.integer_indices.len()
        )));
    }
    let problem = ParametricMiqo {
        n: file.n,
        m: file.m,
        p_dim: file.p_dim,
        integer_indices: file.integer_indices,
        p_base: file.p.into_coo(file.n, file.n),
        q_base: file.q,
        r_base: file.r,
        a_base: file.a.into_coo(file.m, file.n),
        b_base: file.b,
        param_map: file.param_map,
        matrices_parametric: file.matrices_parametric,
    };
    problem.validate()?;
    Ok(problem)
}

pub fn save(problem: &ParametricMiqo, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(problem)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParametricMiqo> {
    let text = std::fs::read_to_string(path)?;
    from_json(&text)
}
