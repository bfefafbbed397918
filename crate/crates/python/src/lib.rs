//! Python module `ekge`: parameter accounting, model construction,
//! checkpoint loading, scoring and projection.

use ekge_core::checkpoint::Checkpoint;
use ekge_core::kg::{Quadruple, Triple};
use ekge_core::models::{self, Counts, ModelKind, ModelParams, Rank};
use ekge_core::projection::{marginalize, ProjectionMode};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn kind_and_rank(model: &str, rank: usize, time_rank: Option<usize>) -> PyResult<(ModelKind, Rank)> {
    let kind: ModelKind = model.parse().map_err(value_error)?;
    let rank = Rank::new(rank, time_rank.unwrap_or(rank)).map_err(value_error)?;
    Ok((kind, rank))
}

/// Number of trainable parameters of `model` for the given vocabulary sizes.
#[pyfunction]
#[pyo3(signature = (model, ne, np, nt, rank, time_rank=None))]
fn param_count(model: &str, ne: usize, np: usize, nt: usize, rank: usize, time_rank: Option<usize>) -> PyResult<usize> {
    let (kind, rank) = kind_and_rank(model, rank, time_rank)?;
    models::param_count(kind, Counts::new(ne, np, nt), rank).map_err(value_error)
}

/// A model's parameters plus the vocabulary hash they belong to.
#[pyclass(module = "ekge")]
struct Model {
    params: ModelParams,
    vocab_hash: String,
}

#[pymethods]
impl Model {
    /// Xavier-initialized parameters.
    #[staticmethod]
    #[pyo3(signature = (model, ne, np, nt, rank, time_rank=None, seed=0))]
    fn init(
        model: &str,
        ne: usize,
        np: usize,
        nt: usize,
        rank: usize,
        time_rank: Option<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let (kind, rank) = kind_and_rank(model, rank, time_rank)?;
        let params = ModelParams::init(kind, Counts::new(ne, np, nt), rank, seed).map_err(value_error)?;
        Ok(Self { params, vocab_hash: String::new() })
    }

    /// Reads a checkpoint written by `ekge train`.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ckpt = Checkpoint::load(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self { params: ckpt.params, vocab_hash: ckpt.vocab_hash })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        Checkpoint::new(self.params.clone(), self.vocab_hash.clone())
            .save(path)
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn kind(&self) -> String {
        self.params.kind().to_string()
    }

    #[getter]
    fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    fn param_count(&self) -> usize {
        self.params.allocated_len()
    }

    /// Logit of `(t, s, p, o)` for episodic models or `(s, p, o)` for semantic ones.
    fn score(&self, fact: Vec<usize>) -> PyResult<f64> {
        let result = match fact[..] {
            [t, s, p, o] => self.params.score(&Quadruple::new(t, s, p, o)),
            [s, p, o] => self.params.score(&Triple::new(s, p, o)),
            _ => return Err(PyValueError::new_err("a fact has 3 or 4 indices")),
        };
        result.map_err(value_error)
    }

    /// Projected semantic score of `(s, p, o)`; `mode` is "start" or "startend".
    #[pyo3(signature = (s, p, o, mode="startend"))]
    fn project(&self, s: usize, p: usize, o: usize, mode: &str) -> PyResult<f64> {
        let mode = match mode {
            "start" => ProjectionMode::Start,
            "startend" => ProjectionMode::StartEnd,
            other => return Err(PyValueError::new_err(format!("unknown projection mode {other:?}"))),
        };
        let scorer = marginalize(&self.params, mode).map_err(value_error)?;
        scorer.project_score(&Triple::new(s, p, o)).map_err(value_error)
    }

    /// Allocates end-time tables so `project(..., "startend")` is defined.
    fn add_end_tables(&mut self, seed: u64) -> PyResult<()> {
        self.params.add_end_tables(seed).map_err(value_error)
    }

    fn __repr__(&self) -> String {
        let r = self.params.rank();
        format!("Model({}, rank={}, time_rank={})", self.params.kind(), r.entity, r.time)
    }
}

#[pymodule]
fn ekge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
