//! Python bindings: phantoms, datasets, the network, ICC and the training
//! front end.

use std::collections::BTreeMap;
use std::path::PathBuf;

use herston::cli::{cmd_eval, cmd_gen_data, cmd_train, CliError, RunConfig};
use herston::metrics::{self, EvaluationReport, PairedSamples};
use herston::nn::{load_checkpoint, save_checkpoint, ModelState, NetworkSpec};
use herston::optim::CyclicSchedule;
use herston::phantom::{self, AugmentConfig, PhantomRanges, Split, Volume3D};
use herston::tensor::{softmax, Tensor};
use herston::train::{predict, stack_batch};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn cli_err(e: CliError) -> PyErr {
    match e {
        CliError::Validation(_) => PyValueError::new_err(e.to_string()),
        CliError::Runtime(_) => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A single-channel 3D volume, `[D, H, W]` with the last axis fastest.
#[pyclass(name = "Volume", skip_from_py_object)]
#[derive(Clone)]
pub struct PyVolume {
    inner: Volume3D,
}

#[pymethods]
impl PyVolume {
    #[new]
    #[pyo3(signature = (dims, voxels, voxel_size=1.0))]
    fn new(dims: [usize; 3], voxels: Vec<f32>, voxel_size: f64) -> PyResult<Self> {
        Ok(Self {
            inner: Volume3D::new(dims, voxel_size, voxels).map_err(value_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, voxel_size=1.0))]
    fn load(path: PathBuf, voxel_size: f64) -> PyResult<Self> {
        Ok(Self {
            inner: Volume3D::load(path, voxel_size).map_err(value_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(value_err)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.dims()
    }

    #[getter]
    fn voxel_size(&self) -> f64 {
        self.inner.voxel_size()
    }

    fn voxels(&self) -> Vec<f32> {
        self.inner.voxels().to_vec()
    }

    fn get(&self, x: usize, y: usize, z: usize) -> PyResult<f32> {
        let [d, h, w] = self.inner.dims();
        if x >= d || y >= h || z >= w {
            return Err(value_err(format!("index ({x}, {y}, {z}) outside {:?}", self.inner.dims())));
        }
        Ok(self.inner.get(x, y, z))
    }

    /// Sum of intensities times voxel volume.
    fn integrated_intensity(&self) -> f64 {
        let v = self.inner.voxel_size().powi(3);
        self.inner.voxels().iter().map(|&x| x as f64).sum::<f64>() * v
    }

    /// Randomly rotated, translated and noised copy. `preset` is "desk",
    /// "paper" or "none".
    #[pyo3(signature = (seed, preset="desk"))]
    fn augmented(&self, seed: u64, preset: &str) -> PyResult<Self> {
        let cfg = match preset {
            "desk" => AugmentConfig::default(),
            "paper" => AugmentConfig::paper(),
            "none" => AugmentConfig::disabled(),
            other => return Err(value_err(format!("unknown augmentation preset {other:?}"))),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            inner: phantom::augment(&self.inner, &cfg, &mut rng),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.voxels().len()
    }

    fn __repr__(&self) -> String {
        format!("Volume(dims={:?}, voxel_size={})", self.inner.dims(), self.inner.voxel_size())
    }
}

/// One random phantom and its analytic targets, keyed by measurement name.
#[pyfunction]
#[pyo3(signature = (seed, dim=32, voxel_size=1.0, supersample=4))]
fn generate_phantom(seed: u64, dim: usize, voxel_size: f64, supersample: usize) -> PyResult<(PyVolume, BTreeMap<String, f64>)> {
    let ranges = PhantomRanges {
        supersample,
        ..PhantomRanges::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ranges.sample([dim; 3], voxel_size, &mut rng);
    let (vol, targets) = phantom::generate_phantom(&params).map_err(value_err)?;
    let map = targets
        .measurements()
        .iter()
        .zip(targets.values())
        .map(|(m, &v)| (m.name.clone(), v))
        .collect();
    Ok((PyVolume { inner: vol }, map))
}

/// A generated or loaded phantom dataset.
#[pyclass(name = "Dataset")]
pub struct PyDataset {
    inner: phantom::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (subjects=120, dim=32, seed=0, min_scans=1, max_scans=3))]
    fn generate(subjects: usize, dim: usize, seed: u64, min_scans: usize, max_scans: usize) -> PyResult<Self> {
        let cfg = phantom::DatasetConfig {
            subjects,
            dim,
            seed,
            min_scans,
            max_scans,
            ..Default::default()
        };
        Ok(Self {
            inner: phantom::Dataset::generate(&cfg).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: phantom::Dataset::load(path).map_err(value_err)?,
        })
    }

    #[pyo3(signature = (dir, force=false))]
    fn save(&self, dir: PathBuf, force: bool) -> PyResult<PathBuf> {
        self.inner.save(dir, force).map_err(value_err)
    }

    #[getter]
    fn measurement_names(&self) -> Vec<String> {
        self.inner.manifest.measurement_names()
    }

    /// Subjects per split: (train, validation, test).
    #[getter]
    fn subject_counts(&self) -> [usize; 3] {
        self.inner.manifest.subject_counts()
    }

    fn volume(&self, i: usize) -> PyResult<PyVolume> {
        self.inner
            .volumes
            .get(i)
            .map(|v| PyVolume { inner: v.clone() })
            .ok_or_else(|| value_err(format!("scan {i} out of range")))
    }

    fn targets(&self, i: usize) -> PyResult<Vec<f64>> {
        self.row(i).map(|r| r.targets.clone())
    }

    fn split(&self, i: usize) -> PyResult<&'static str> {
        self.row(i).map(|r| r.split.as_str())
    }

    fn subject(&self, i: usize) -> PyResult<u32> {
        self.row(i).map(|r| r.subject_id)
    }

    /// Scan indices belonging to `split`.
    fn indices(&self, split: &str) -> PyResult<Vec<usize>> {
        let s = Split::parse(split).ok_or_else(|| value_err(format!("unknown split {split:?}")))?;
        Ok(self.inner.manifest.rows_in(s).map(|(i, _)| i).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.volumes.len()
    }
}

impl PyDataset {
    fn row(&self, i: usize) -> PyResult<&phantom::ManifestRow> {
        self.inner
            .manifest
            .rows
            .get(i)
            .ok_or_else(|| value_err(format!("scan {i} out of range")))
    }
}

/// The multi-scale-head residual regression network.
#[pyclass(name = "Model")]
pub struct PyModel {
    inner: ModelState,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (dim=32, measurements=12, heads=4, base_channels=16, seed=0))]
    fn new(dim: usize, measurements: usize, heads: usize, base_channels: usize, seed: u64) -> PyResult<Self> {
        if heads != 1 && heads != 4 {
            return Err(value_err(format!("heads must be 1 or 4, got {heads}")));
        }
        let spec = NetworkSpec::desk(dim, base_channels, measurements, heads);
        Ok(Self {
            inner: ModelState::build(spec, seed).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = load_checkpoint(path).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(path, &self.inner, None).map_err(value_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn heads(&self) -> usize {
        self.inner.spec().head_count()
    }

    #[getter]
    fn measurements(&self) -> usize {
        self.inner.spec().measurements
    }

    /// Softmax of the mixing logits, one row per head.
    fn mixing_weights(&self) -> PyResult<Vec<Vec<f32>>> {
        let w = softmax(self.inner.alpha(), 0).map_err(value_err)?;
        let [h, m] = [w.shape()[0], w.shape()[1]];
        Ok((0..h).map(|k| w.data()[k * m..(k + 1) * m].to_vec()).collect())
    }

    /// Mixed predictions in the model's normalized target units.
    #[pyo3(signature = (volumes, batch_size=6))]
    fn predict(&self, volumes: Vec<PyRef<'_, PyVolume>>, batch_size: usize) -> PyResult<Vec<Vec<f64>>> {
        let vols: Vec<&Volume3D> = volumes.iter().map(|v| &v.inner).collect();
        predict(&self.inner, &vols, batch_size.max(1)).map_err(value_err)
    }

    /// Per-head predictions `[H][N][M]` and their mixture `[N][M]`.
    fn forward(&self, volumes: Vec<PyRef<'_, PyVolume>>) -> PyResult<(Vec<Vec<Vec<f32>>>, Vec<Vec<f32>>)> {
        let vols: Vec<Volume3D> = volumes.iter().map(|v| v.inner.clone()).collect();
        let batch: Tensor<f32> = stack_batch(&vols);
        let out = self.inner.forward(&batch).map_err(value_err)?;
        let (h, n, m) = (out.per_head.shape()[0], out.per_head.shape()[1], out.per_head.shape()[2]);
        let per_head = (0..h)
            .map(|k| (0..n).map(|i| (0..m).map(|j| out.per_head.at(&[k, i, j])).collect()).collect())
            .collect();
        let combined = (0..n).map(|i| (0..m).map(|j| out.combined.at(&[i, j])).collect()).collect();
        Ok((per_head, combined))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(heads={}, measurements={}, params={})",
            self.inner.spec().head_count(),
            self.inner.spec().measurements,
            self.inner.param_count()
        )
    }
}

/// ICC(2,1) of paired reference/prediction values with its two-sided
/// confidence interval.
#[pyfunction]
#[pyo3(signature = (reference, prediction, confidence=0.95))]
fn icc_2_1<'py>(py: Python<'py>, reference: Vec<f64>, prediction: Vec<f64>, confidence: f64) -> PyResult<Bound<'py, PyDict>> {
    let samples = PairedSamples::from_pairs(&reference, &prediction).map_err(value_err)?;
    let r = metrics::icc_2_1(&samples, confidence).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("icc", r.icc)?;
    d.set_item("ci_low", r.ci_low)?;
    d.set_item("ci_high", r.ci_high)?;
    d.set_item("band", r.band.as_str())?;
    d.set_item("msr", r.components.msr)?;
    d.set_item("msc", r.components.msc)?;
    d.set_item("mse", r.components.mse)?;
    d.set_item("degenerate", r.degenerate)?;
    Ok(d)
}

/// Relative improvement of `ours` over `baseline`, in percent.
#[pyfunction]
fn improvement_pct(ours: f64, baseline: f64) -> PyResult<f64> {
    metrics::improvement_pct(ours, baseline).map_err(value_err)
}

/// Learning rate at `step` of the cyclic linear schedule.
#[pyfunction]
#[pyo3(signature = (step, cycle_len, lr_max=1e-2, lr_min=1e-6, n_cycles=5))]
fn cyclic_lr(step: usize, cycle_len: usize, lr_max: f64, lr_min: f64, n_cycles: usize) -> PyResult<f64> {
    let sched = CyclicSchedule::new(lr_max, lr_min, cycle_len, n_cycles).map_err(value_err)?;
    Ok(herston::optim::cyclic_lr(step, &sched))
}

fn run_config(preset: &str, config: Option<&str>) -> PyResult<RunConfig> {
    match config {
        Some(text) => RunConfig::from_toml_layered(text, Some(preset)).map_err(cli_err),
        None => RunConfig::preset(preset).map_err(cli_err),
    }
}

fn report_rows(report: &EvaluationReport) -> Vec<BTreeMap<String, String>> {
    report
        .rows
        .iter()
        .map(|r| {
            BTreeMap::from([
                ("measurement".to_string(), r.measurement.clone()),
                ("kind".to_string(), r.kind.as_str().to_string()),
                ("icc".to_string(), r.icc.to_string()),
                ("ci_low".to_string(), r.ci_low.to_string()),
                ("ci_high".to_string(), r.ci_high.to_string()),
                ("band".to_string(), r.band.as_str().to_string()),
            ])
        })
        .collect()
}

/// Writes a phantom dataset to `out`. `config` is optional TOML text layered
/// over the preset.
#[pyfunction]
#[pyo3(signature = (out, preset="desk", config=None, force=false))]
fn gen_data(out: PathBuf, preset: &str, config: Option<&str>, force: bool) -> PyResult<PathBuf> {
    let mut cfg = run_config(preset, config)?;
    cfg.out = out;
    cmd_gen_data(&cfg, force).map_err(cli_err)
}

/// Full training recipe on the dataset at `data`, writing the run to `out`.
/// Returns the test-split report rows.
#[pyfunction]
#[pyo3(signature = (data, out, preset="desk", config=None, force=false))]
fn train(py: Python<'_>, data: PathBuf, out: PathBuf, preset: &str, config: Option<&str>, force: bool) -> PyResult<Vec<BTreeMap<String, String>>> {
    let mut cfg = run_config(preset, config)?;
    cfg.data_dir = data;
    cfg.out = out;
    let artifacts = py.detach(|| cmd_train(&cfg, force)).map_err(cli_err)?;
    Ok(report_rows(&artifacts.report))
}

/// Scores a checkpoint on one split of a dataset.
#[pyfunction]
#[pyo3(signature = (checkpoint, data, split="test"))]
fn evaluate(checkpoint: PathBuf, data: PathBuf, split: &str) -> PyResult<Vec<BTreeMap<String, String>>> {
    let s = Split::parse(split).ok_or_else(|| value_err(format!("unknown split {split:?}")))?;
    let (report, _) = cmd_eval(&checkpoint, &data, s, None, None).map_err(cli_err)?;
    Ok(report_rows(&report))
}

#[pymodule]
fn herston_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVolume>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(icc_2_1, m)?)?;
    m.add_function(wrap_pyfunction!(improvement_pct, m)?)?;
    m.add_function(wrap_pyfunction!(cyclic_lr, m)?)?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
