//! Python bindings: scenes, datasets, the knowledge pool and evaluation.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rekp_core::features::{Dataset, RealizationConfig};
use rekp_core::forest::ForestParams;
use rekp_core::geometry::{canonical_street_scene, segment_blocked, SceneDocument, StreetParams, Vec3};
use rekp_core::pool::PoolParams;
use rekp_core::predict::{evaluate, DEFAULT_K, DEFAULT_TAU};
use rekp_core::RekpError;

fn err(e: RekpError) -> PyErr {
    match e {
        RekpError::InvalidArgument(m) => PyValueError::new_err(m),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn vec3(p: (f64, f64, f64)) -> Vec3 {
    Vec3::new(p.0, p.1, p.2)
}

/// A scene plus its receiver trajectory.
#[pyclass(module = "rekp", skip_from_py_object)]
#[derive(Clone)]
struct Scene {
    scene: rekp_core::geometry::Scene,
    trajectory: rekp_core::geometry::Trajectory,
}

#[pymethods]
impl Scene {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let (scene, trajectory) = SceneDocument::from_json(text).and_then(|d| d.into_scene()).map_err(err)?;
        Ok(Self { scene, trajectory })
    }

    fn to_json(&self) -> String {
        SceneDocument::from_parts(&self.scene, &self.trajectory.positions).to_json()
    }

    fn positions(&self) -> Vec<(f64, f64, f64)> {
        self.trajectory.positions.iter().map(|p| (p.x, p.y, p.z)).collect()
    }

    /// LOS flag per trajectory position.
    fn los(&self) -> PyResult<Vec<bool>> {
        self.trajectory
            .positions
            .iter()
            .map(|rx| segment_blocked(self.scene.tx, *rx, &self.scene).map(|b| !b.blocked).map_err(err))
            .collect()
    }

    fn path_loss(&self, rx: (f64, f64, f64)) -> PyResult<f64> {
        rekp_core::propagation::path_loss(&self.scene, vec3(rx)).map(|s| s.path_loss_db).map_err(err)
    }

    fn features(&self, rx: (f64, f64, f64)) -> PyResult<Vec<f64>> {
        rekp_core::features::extract_features(&self.scene, vec3(rx)).map(|f| f.0.to_vec()).map_err(err)
    }

    fn fingerprint(&self) -> u64 {
        self.scene.fingerprint()
    }

    fn __len__(&self) -> usize {
        self.trajectory.positions.len()
    }
}

#[pyclass(module = "rekp", skip_from_py_object)]
#[derive(Clone)]
struct SimDataset {
    inner: Dataset,
}

#[pymethods]
impl SimDataset {
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Dataset::read_csv(text.as_bytes()).map(|inner| Self { inner }).map_err(err)
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_csv(&mut buf).map_err(err)?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn position_ids(&self) -> Vec<u32> {
        self.inner.position_ids()
    }

    /// Path losses of one position, in realization order.
    fn path_losses(&self, position_id: u32) -> Vec<f64> {
        self.inner.position(position_id).iter().map(|r| r.path_loss_db).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(module = "rekp", skip_from_py_object)]
#[derive(Clone)]
struct Pool {
    inner: rekp_core::pool::Pool,
}

#[pymethods]
impl Pool {
    #[new]
    #[pyo3(signature = (seed, capacity = 32, n_trees = 100, importance_repeats = 5))]
    fn new(seed: u64, capacity: usize, n_trees: usize, importance_repeats: usize) -> PyResult<Self> {
        let forest = ForestParams { n_trees, seed, ..Default::default() };
        let params = PoolParams { capacity, forest, importance_repeats, ..Default::default() };
        rekp_core::pool::Pool::new(params).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        rekp_core::pool::Pool::from_json(text).map(|inner| Self { inner }).map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Learns every position and returns one row per position:
    /// (position_id, los, [w_L, w_V, w_B, w_D], outcome).
    fn learn(&mut self, scene: &Scene, dataset: &SimDataset) -> PyResult<Vec<(u32, bool, Vec<f64>, String)>> {
        let out = rekp_core::pipeline::learn(&scene.scene, &scene.trajectory, &dataset.inner, &mut self.inner)
            .map_err(err)?;
        Ok(out
            .spectra
            .iter()
            .zip(&out.reports)
            .map(|(s, (_, r))| (s.position_id, s.los, s.weights.w.to_vec(), format!("{:?}", r.outcome)))
            .collect())
    }

    /// (id, position_id, los, utilization_count, spectrum values or None).
    fn entries(&self) -> Vec<(u64, u32, bool, u64, Option<Vec<f64>>)> {
        self.inner
            .entries()
            .map(|e| {
                let spec = e.spectrum.as_ref().map(|s| s.values.to_vec());
                (e.id, e.context.position_id, e.context.los, e.utilization_count, spec)
            })
            .collect()
    }

    fn similarity_matrix(&self) -> Vec<Vec<f64>> {
        self.inner.similarity_matrix()
    }

    /// Evicts down to `capacity` (or the current one); returns removed ids.
    #[pyo3(signature = (capacity = None))]
    fn evict(&mut self, capacity: Option<usize>) -> PyResult<Vec<u64>> {
        match capacity {
            Some(c) => self.inner.set_capacity(c).map_err(err),
            None => Ok(self.inner.sort_and_evict()),
        }
    }

    /// Ingests every entry of `other`; returns the outcome names.
    fn merge(&mut self, other: &Pool) -> PyResult<Vec<String>> {
        let now = self.inner.entries().map(|e| e.updated_at).fold(0.0, f64::max) + 1.0;
        let reports = self.inner.merge(&other.inner, now).map_err(err)?;
        Ok(reports.iter().map(|r| format!("{:?}", r.outcome)).collect())
    }

    #[getter]
    fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyfunction]
#[pyo3(signature = (seed, n_positions = 15, spacing_m = 3.5, blocker = true))]
fn street_scene(seed: u64, n_positions: usize, spacing_m: f64, blocker: bool) -> PyResult<Scene> {
    let mut p = StreetParams { seed, n_positions, spacing_m, ..Default::default() };
    if !blocker {
        p.blocker = None;
    }
    let (scene, trajectory) = canonical_street_scene(&p).map_err(err)?;
    Ok(Scene { scene, trajectory })
}

#[pyfunction]
#[pyo3(signature = (scene, seed, n_realizations = 200, scatterer_sigma = 0.5, rx_sigma = 0.2))]
fn simulate(scene: &Scene, seed: u64, n_realizations: usize, scatterer_sigma: f64, rx_sigma: f64) -> PyResult<SimDataset> {
    let cfg = RealizationConfig { n_realizations, scatterer_jitter_sigma: scatterer_sigma, rx_jitter_sigma: rx_sigma, seed };
    rekp_core::pipeline::simulate(&scene.scene, &scene.trajectory, &cfg).map(|inner| SimDataset { inner }).map_err(err)
}

/// Leave-one-position-out summary: method -> {mean, rmse, p80, n, n_capped}.
#[pyfunction]
#[pyo3(signature = (scene, pool, tau = DEFAULT_TAU, k = DEFAULT_K))]
fn evaluate_loo(scene: &Scene, pool: &Pool, tau: f64, k: usize) -> PyResult<BTreeMap<String, BTreeMap<String, f64>>> {
    let preds = rekp_core::pipeline::leave_one_out(&scene.scene, &scene.trajectory, &pool.inner, tau, k).map_err(err)?;
    let report = evaluate(&preds).map_err(err)?;
    Ok(report
        .methods
        .iter()
        .map(|m| {
            let stats = BTreeMap::from([
                ("mean".to_string(), m.mean()),
                ("rmse".to_string(), m.rmse()),
                ("p80".to_string(), m.p80()),
                ("n".to_string(), m.n() as f64),
                ("n_capped".to_string(), m.n_capped as f64),
            ]);
            (m.method.as_str().to_string(), stats)
        })
        .collect())
}

#[pyfunction]
fn fspl_db(distance_m: f64, frequency_hz: f64) -> PyResult<f64> {
    rekp_core::propagation::fspl_db(distance_m, frequency_hz).map_err(err)
}

/// The 15 (name, K) pairs for raw group weights [L, V, B, D].
#[pyfunction]
fn spectrum(weights: [f64; 4]) -> PyResult<Vec<(String, f64)>> {
    let w = rekp_core::spectrum::GroupWeights::from_raw(weights).map_err(err)?;
    let s = rekp_core::spectrum::spectrum(&w, 0, true).map_err(err)?;
    Ok(rekp_core::spectrum::canonical_names().into_iter().zip(s.values).collect())
}

#[pymodule]
fn rekp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scene>()?;
    m.add_class::<SimDataset>()?;
    m.add_class::<Pool>()?;
    m.add_function(wrap_pyfunction!(street_scene, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_loo, m)?)?;
    m.add_function(wrap_pyfunction!(fspl_db, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum, m)?)?;
    Ok(())
}
