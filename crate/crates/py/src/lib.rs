//! Python bindings for the `vecgp` crate.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use vecgp::engine::{GenerationReport, RunConfig, RunState, TargetSpec};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A grid of fitness cases: per-axis resolution over `[lo, hi]`.
#[pyclass(module = "pyvecgp", frozen)]
struct Domain {
    inner: vecgp::DomainSpec,
}

#[pymethods]
impl Domain {
    #[new]
    #[pyo3(signature = (resolution, lo = -1.0, hi = 1.0))]
    fn new(resolution: Vec<usize>, lo: f32, hi: f32) -> PyResult<Self> {
        Ok(Self { inner: vecgp::DomainSpec::new(resolution, lo, hi).map_err(value_err)? })
    }

    /// Parses `64x64`, `128x128x3` and the like.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self { inner: text.parse().map_err(value_err)? })
    }

    #[getter]
    fn resolution(&self) -> Vec<usize> {
        self.inner.resolution().to_vec()
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn points(&self) -> usize {
        self.inner.points()
    }

    fn coordinates(&self, axis: usize) -> PyResult<Vec<f32>> {
        if axis >= self.inner.rank() {
            return Err(value_err(format!("axis {axis} out of range for rank {}", self.inner.rank())));
        }
        Ok(self.inner.axis_coordinates(axis))
    }

    fn __repr__(&self) -> String {
        format!("Domain('{}')", self.inner.resolution_string())
    }
}

/// Dense row-major `f32` tensor.
#[pyclass(module = "pyvecgp", frozen)]
struct Tensor {
    inner: vecgp::Tensor,
}

#[pymethods]
impl Tensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Self> {
        Ok(Self { inner: vecgp::Tensor::new(shape, data).map_err(value_err)? })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    /// Flat values in row-major order.
    fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn get(&self, index: Vec<usize>) -> PyResult<f32> {
        let ok = index.len() == self.inner.rank() && index.iter().zip(self.inner.shape()).all(|(i, n)| i < n);
        if !ok {
            return Err(value_err(format!("index {index:?} out of range for shape {:?}", self.inner.shape())));
        }
        Ok(self.inner.get(&index))
    }

    fn rmse(&self, other: &Tensor) -> PyResult<f64> {
        vecgp::rmse(&self.inner, &other.inner).map_err(value_err)
    }

    fn save_png(&self, path: std::path::PathBuf) -> PyResult<()> {
        vecgp::export_image(&self.inner, &path).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

/// A parsed prefix expression such as `add(x, sin(y))`.
#[pyclass(module = "pyvecgp", frozen)]
struct Program {
    tree: vecgp::Tree,
    rank: usize,
}

#[pymethods]
impl Program {
    #[new]
    #[pyo3(signature = (expr, rank = 2))]
    fn new(expr: &str, rank: usize) -> PyResult<Self> {
        let tree = vecgp::parse(expr, &vecgp::PrimitiveSet::default(), rank).map_err(|e| value_err(e.render(expr)))?;
        Ok(Self { tree, rank })
    }

    #[getter]
    fn depth(&self) -> usize {
        self.tree.depth()
    }

    #[getter]
    fn nodes(&self) -> usize {
        self.tree.node_count()
    }

    /// Phenotype over `domain` using `vectorized` or `iterative` evaluation.
    #[pyo3(signature = (domain, engine = "vectorized"))]
    fn evaluate(&self, py: Python<'_>, domain: &Domain, engine: &str) -> PyResult<Tensor> {
        self.check_rank(domain)?;
        let kind: vecgp::EngineKind = engine.parse().map_err(value_err)?;
        let tree = self.tree.clone();
        let domain = domain.inner.clone();
        let t = py.detach(move || -> Result<vecgp::Tensor, vecgp::EvalError> {
            let ev = vecgp::Evaluator::new(&domain)?;
            let (t, _) = ev.eval_with(&tree, kind, None)?;
            Ok(std::sync::Arc::try_unwrap(t).unwrap_or_else(|shared| (*shared).clone()))
        });
        Ok(Tensor { inner: t.map_err(value_err)? })
    }

    /// RMSE against `target`: `pagie`, an expression, or a tensor file path.
    #[pyo3(signature = (domain, target = "pagie", engine = "vectorized"))]
    fn rmse(&self, py: Python<'_>, domain: &Domain, target: &str, engine: &str) -> PyResult<f64> {
        let phenotype = self.evaluate(py, domain, engine)?;
        let target = TargetSpec::parse(target)
            .build(&domain.inner, &vecgp::PrimitiveSet::default())
            .map_err(value_err)?;
        vecgp::rmse(&phenotype.inner, &target).map_err(value_err)
    }

    fn __str__(&self) -> String {
        self.tree.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Program('{}')", self.tree)
    }
}

impl Program {
    fn check_rank(&self, domain: &Domain) -> PyResult<()> {
        if domain.inner.rank() != self.rank {
            return Err(value_err(format!("program has rank {}, domain has rank {}", self.rank, domain.inner.rank())));
        }
        Ok(())
    }
}

/// Names of all built-in operators.
#[pyfunction]
fn primitives() -> Vec<String> {
    vecgp::PrimitiveSet::default().names().map(String::from).collect()
}

/// The benchmark target `x⁴/(1+x⁴) + y⁴/(1+y⁴)` at one point.
#[pyfunction]
fn pagie(x: f64, y: f64) -> f64 {
    vecgp::bench::pagie(x, y)
}

#[pyfunction]
fn pagie_target(domain: &Domain) -> PyResult<Tensor> {
    Ok(Tensor { inner: vecgp::pagie_target(&domain.inner).map_err(value_err)? })
}

/// Runs evolution and returns a dict with `best`, `best_fitness`,
/// `generations`, `stop_reason` and `history` (best fitness per
/// generation, generation 0 included).
#[pyfunction]
#[pyo3(signature = (
    seed = 0, pop_size = 50, generations = 50, max_depth = 12, domain = None,
    target = "pagie", engine = "vectorized", functions = None, acceptable_error = None,
    cache_budget = None,
))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    seed: u64,
    pop_size: usize,
    generations: usize,
    max_depth: usize,
    domain: Option<&Domain>,
    target: &str,
    engine: &str,
    functions: Option<Vec<String>>,
    acceptable_error: Option<f64>,
    cache_budget: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = RunConfig {
        seed,
        pop_size,
        generations,
        max_depth,
        target: TargetSpec::parse(target),
        engine: engine.parse().map_err(value_err)?,
        acceptable_error,
        ..RunConfig::default()
    };
    if let Some(d) = domain {
        cfg.domain = d.inner.clone();
    }
    if let Some(f) = functions {
        cfg.function_list = f;
    }
    if let Some(b) = cache_budget {
        cfg.cache_budget = b;
    }
    let (state, reason, history) = py
        .detach(move || {
            let mut history = Vec::new();
            let mut obs = |_: &RunState, r: &GenerationReport| history.push(r.best_fitness);
            vecgp::engine::run(cfg, vecgp::PrimitiveSet::default(), &mut [&mut obs])
                .map(|(state, reason)| (state, reason, history))
        })
        .map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("best", state.best.tree.to_string())?;
    out.set_item("best_fitness", state.best_fitness())?;
    out.set_item("generations", state.generation)?;
    out.set_item("stop_reason", reason.to_string())?;
    out.set_item("history", history)?;
    Ok(out)
}

#[pymodule]
fn pyvecgp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Domain>()?;
    m.add_class::<Tensor>()?;
    m.add_class::<Program>()?;
    m.add_function(wrap_pyfunction!(primitives, m)?)?;
    m.add_function(wrap_pyfunction!(pagie, m)?)?;
    m.add_function(wrap_pyfunction!(pagie_target, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
