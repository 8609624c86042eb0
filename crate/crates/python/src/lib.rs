//! Python surface: graph construction, synthetic generation, meta-paths,
//! training, scoring, metrics and the gradient check.

use difflink::data::{generate_synthetic, SyntheticSpec};
use difflink::graph::{HeteroGraph, Side};
use difflink::metapath;
use difflink::metrics;
use difflink::model::{self, ModelParams, Prepared, TrainConfig};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: difflink::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Bipartite drug-gene graph with string ids on both sides.
#[pyclass(name = "Graph", skip_from_py_object)]
#[derive(Clone)]
struct PyGraph {
    inner: HeteroGraph,
}

#[pymethods]
impl PyGraph {
    /// Build from (source_id, target_id) string pairs.
    #[staticmethod]
    fn from_edges(edges: Vec<(String, String)>) -> Self {
        let mut g = HeteroGraph::new();
        for (a, b) in &edges {
            let ai = g.intern(Side::A, a);
            let bi = g.intern(Side::B, b);
            g.push_edge(ai, bi);
        }
        Self { inner: g }
    }

    /// Planted block model; returns (graph, blocks_a, blocks_b).
    #[staticmethod]
    #[pyo3(signature = (n_a, n_b, n_blocks, p_in, p_out, seed=0))]
    fn synthetic(
        n_a: usize,
        n_b: usize,
        n_blocks: usize,
        p_in: f64,
        p_out: f64,
        seed: u64,
    ) -> PyResult<(Self, Vec<usize>, Vec<usize>)> {
        let spec = SyntheticSpec { n_a, n_b, n_blocks, p_in, p_out, seed };
        let (g, ba, bb) = generate_synthetic(&spec).map_err(err)?;
        Ok((Self { inner: g }, ba, bb))
    }

    #[getter]
    fn n_a(&self) -> usize {
        self.inner.n_a()
    }

    #[getter]
    fn n_b(&self) -> usize {
        self.inner.n_b()
    }

    /// Edges as (a_index, b_index) pairs.
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().to_vec()
    }

    fn has_edge(&self, a: usize, b: usize) -> bool {
        self.inner.has_edge(a, b)
    }

    fn source_ids(&self) -> Vec<String> {
        self.inner.ids(Side::A).names().to_vec()
    }

    fn target_ids(&self) -> Vec<String> {
        self.inner.ids(Side::B).names().to_vec()
    }

    /// Capped homogeneous neighbor lists (side_a, side_b) via length-2
    /// meta-paths.
    #[pyo3(signature = (tau, seed=0))]
    fn metapath_neighbors(
        &self,
        tau: usize,
        seed: u64,
    ) -> PyResult<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
        let rel = metapath::build_metapaths(&self.inner, tau, seed).map_err(err)?;
        Ok((rel.neighbors_a, rel.neighbors_b))
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(n_a={}, n_b={}, edges={})",
            self.inner.n_a(),
            self.inner.n_b(),
            self.inner.edges().len()
        )
    }
}

/// Training hyperparameters; accepts keyword overrides of the defaults.
#[pyclass(name = "TrainConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = TrainConfig::default();
        if let Some(kw) = kwargs {
            for (key, value) in kw.iter() {
                let k: String = key.extract()?;
                match k.as_str() {
                    "batch_size" => cfg.batch_size = value.extract()?,
                    "dim" => cfg.dim = value.extract()?,
                    "learning_rate" => cfg.learning_rate = value.extract()?,
                    "tau" => cfg.tau = value.extract()?,
                    "steps" => cfg.steps = value.extract()?,
                    "alpha_start" => cfg.alpha_start = value.extract()?,
                    "alpha_end" => cfg.alpha_end = value.extract()?,
                    "weights" => cfg.weights = value.extract()?,
                    "epochs" => cfg.epochs = value.extract()?,
                    "seed" => cfg.seed = value.extract()?,
                    "dropout_rate" => cfg.dropout_rate = value.extract()?,
                    "per_drug_negatives" => cfg.per_drug_negatives = value.extract()?,
                    "use_diffusion" => cfg.use_diffusion = value.extract()?,
                    "use_homogeneous" => cfg.use_homogeneous = value.extract()?,
                    "use_heterogeneous" => cfg.use_heterogeneous = value.extract()?,
                    "margin" => cfg.margin = value.extract()?,
                    "neg_combine" => {
                        let s: String = value.extract()?;
                        cfg.neg_combine = s.parse().map_err(err)?;
                    }
                    "margin_variant" => {
                        let s: String = value.extract()?;
                        cfg.margin_variant = s.parse().map_err(err)?;
                    }
                    other => {
                        return Err(PyValueError::new_err(format!(
                            "unknown config field '{other}'"
                        )))
                    }
                }
            }
        }
        cfg.validate().map_err(err)?;
        Ok(Self { inner: cfg })
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainConfig(dim={}, epochs={}, lr={}, tau={}, steps={}, seed={})",
            self.inner.dim,
            self.inner.epochs,
            self.inner.learning_rate,
            self.inner.tau,
            self.inner.steps,
            self.inner.seed
        )
    }
}

/// A trained model bound to the graph it was trained on.
#[pyclass(name = "Model")]
struct PyModel {
    params: ModelParams,
    cfg: TrainConfig,
    graph: HeteroGraph,
    /// (l_diffusion, l_ce, l_margin, l_total) per epoch
    history: Vec<(f64, f64, f64, f64)>,
}

#[pymethods]
impl PyModel {
    /// Raw scores for (a_index, b_index) pairs.
    #[pyo3(signature = (pairs, seed=1))]
    fn scores(&self, pairs: Vec<(usize, usize)>, seed: u64) -> PyResult<Vec<f64>> {
        let prep = Prepared::build(&self.graph, &self.cfg).map_err(err)?;
        model::score_pairs(&self.params, &prep, &self.cfg, &pairs, seed).map_err(err)
    }

    /// Top-k (target_index, score) for one source node over all targets.
    #[pyo3(signature = (a, k=20, seed=1))]
    fn rank_targets(&self, a: usize, k: usize, seed: u64) -> PyResult<Vec<(usize, f64)>> {
        let pairs: Vec<(usize, usize)> = (0..self.graph.n_b()).map(|b| (a, b)).collect();
        let scores = self.scores(pairs, seed)?;
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
        ranked.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
        ranked.truncate(k);
        Ok(ranked)
    }

    #[getter]
    fn loss_history(&self) -> Vec<(f64, f64, f64, f64)> {
        self.history.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(n_a={}, n_b={}, dim={}, epochs_trained={})",
            self.params.n_a,
            self.params.n_b,
            self.params.dim,
            self.history.len()
        )
    }
}

/// Train on the given graph and return the model.
#[pyfunction]
fn train(graph: &PyGraph, config: &PyTrainConfig) -> PyResult<PyModel> {
    let (params, history) = model::train(&config.inner, &graph.inner).map_err(err)?;
    Ok(PyModel {
        params,
        cfg: config.inner.clone(),
        graph: graph.inner.clone(),
        history: history
            .iter()
            .map(|r| (r.l_diffusion, r.l_ce, r.l_margin, r.l_total))
            .collect(),
    })
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    metrics::roc_auc(&scores, &labels).map_err(err)
}

#[pyfunction]
fn aupr(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    metrics::aupr(&scores, &labels).map_err(err)
}

/// All eight evaluation metrics at the given threshold, as a dict.
#[pyfunction]
#[pyo3(signature = (scores, labels, threshold=0.5))]
fn metric_report<'py>(
    py: Python<'py>,
    scores: Vec<f64>,
    labels: Vec<u8>,
    threshold: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = metrics::metric_report(&scores, &labels, threshold).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("auc", r.auc)?;
    d.set_item("aupr", r.aupr)?;
    d.set_item("recall", r.recall)?;
    d.set_item("precision", r.precision)?;
    d.set_item("f1", r.f1)?;
    d.set_item("mcc", r.mcc)?;
    d.set_item("specificity", r.specificity)?;
    d.set_item("npv", r.npv)?;
    d.set_item("threshold", r.threshold)?;
    d.set_item("n_pos", r.n_pos)?;
    d.set_item("n_neg", r.n_neg)?;
    Ok(d)
}

/// Seeded train/test split over (a, b) edge pairs.
#[pyfunction]
#[pyo3(signature = (edges, train_fraction=0.8, seed=0))]
fn holdout_split(
    edges: Vec<(usize, usize)>,
    train_fraction: f64,
    seed: u64,
) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    metrics::holdout_split(&edges, train_fraction, seed)
}

/// Subgraph restricted to the given edges (id maps preserved).
#[pyfunction]
fn with_edges(graph: &PyGraph, edges: Vec<(usize, usize)>) -> PyGraph {
    PyGraph { inner: graph.inner.with_edges(&edges) }
}

/// Full-model finite-difference gradient check; returns
/// {parameter group: max relative error}.
#[pyfunction]
#[pyo3(signature = (seed=3))]
fn gradcheck<'py>(py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let report = model::gradcheck_report(seed, None).map_err(err)?;
    let d = PyDict::new(py);
    for g in &report.groups {
        d.set_item(&g.name, g.max_rel_error)?;
    }
    Ok(d)
}

#[pymodule]
fn difflink_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(aupr, m)?)?;
    m.add_function(wrap_pyfunction!(metric_report, m)?)?;
    m.add_function(wrap_pyfunction!(holdout_split, m)?)?;
    m.add_function(wrap_pyfunction!(with_edges, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
