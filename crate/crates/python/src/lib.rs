//! Python bindings: volumes, phantoms, registration and label propagation.
//!
//! Voxel data crosses the boundary as flat x-fastest lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use atlasreg::losses::{mutual_information as mi, MiConfig};
use atlasreg::phantom::{generate, PhantomSpec};
use atlasreg::pipeline::{dice_volumes, evaluate, propagate_labels, traces_to_csv, MetricsTable};
use atlasreg::transform::{folding_fraction, warp};
use atlasreg::{io, DisplacementField, Error, LabelVolume, OptimizerConfig, RegistrationResult, Volume3};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(format!("{other}{}", source_suffix(&other))),
    }
}

fn source_suffix(e: &Error) -> String {
    match e {
        Error::Aborted { source, .. } => format!(": {source}"),
        _ => String::new(),
    }
}

/// Config from optional TOML text with an optional seed override.
pub fn build_config(toml: Option<&str>, seed: Option<u64>) -> atlasreg::Result<OptimizerConfig> {
    let mut cfg = match toml {
        Some(text) => OptimizerConfig::from_toml_str(text)?,
        None => OptimizerConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

#[pyclass(name = "Volume", module = "pyatlasreg", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyVolume {
    inner: Volume3,
}

#[pymethods]
impl PyVolume {
    #[new]
    #[pyo3(signature = (dims, data, spacing = None))]
    fn new(dims: [usize; 3], data: Vec<f32>, spacing: Option<[f64; 3]>) -> PyResult<Self> {
        let v = Volume3::new(dims, data).map_err(to_py)?;
        Ok(Self {
            inner: v.with_spacing(spacing.unwrap_or([1.0; 3])),
        })
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.dims()
    }

    #[getter]
    fn spacing(&self) -> [f64; 3] {
        self.inner.spacing()
    }

    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn get(&self, x: usize, y: usize, z: usize) -> PyResult<f32> {
        let d = self.inner.dims();
        if x >= d[0] || y >= d[1] || z >= d[2] {
            return Err(PyValueError::new_err(format!("voxel ({x}, {y}, {z}) outside {d:?}")));
        }
        Ok(self.inner.get(x, y, z))
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Volume(dims={:?})", self.inner.dims())
    }
}

#[pyclass(name = "LabelVolume", module = "pyatlasreg", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyLabels {
    inner: LabelVolume,
}

#[pymethods]
impl PyLabels {
    #[new]
    fn new(channels: Vec<PyVolume>, names: Vec<String>) -> PyResult<Self> {
        let channels = channels.into_iter().map(|c| c.inner).collect();
        Ok(Self {
            inner: LabelVolume::new(channels, names).map_err(to_py)?,
        })
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.dims()
    }

    fn channel(&self, name: &str) -> PyResult<PyVolume> {
        self.inner
            .channel(name)
            .map(|c| PyVolume { inner: c.clone() })
            .ok_or_else(|| PyValueError::new_err(format!("unknown label `{name}`")))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("LabelVolume(dims={:?}, names={:?})", self.inner.dims(), self.inner.names())
    }
}

#[pyclass(name = "Displacement", module = "pyatlasreg", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyDisplacement {
    inner: DisplacementField,
}

#[pymethods]
impl PyDisplacement {
    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.dims()
    }

    fn component(&self, axis: usize) -> PyResult<Vec<f64>> {
        if axis > 2 {
            return Err(PyValueError::new_err("axis must be 0, 1 or 2"));
        }
        Ok(self.inner.component(axis).to_vec())
    }

    fn mean_norm(&self) -> f64 {
        self.inner.mean_norm()
    }

    fn max_norm(&self) -> f64 {
        self.inner.max_norm()
    }

    #[pyo3(signature = (margin = 1))]
    fn folding_fraction(&self, margin: usize) -> f64 {
        folding_fraction(&self.inner, margin)
    }

    /// `out(g) = volume(g + u(g))`.
    fn warp(&self, volume: &PyVolume) -> PyResult<PyVolume> {
        Ok(PyVolume {
            inner: warp(&volume.inner, &self.inner).map_err(to_py)?,
        })
    }
}

#[pyclass(name = "Registration", module = "pyatlasreg", frozen)]
pub struct PyRegistration {
    inner: RegistrationResult,
}

#[pymethods]
impl PyRegistration {
    #[getter]
    fn composed(&self) -> PyDisplacement {
        PyDisplacement {
            inner: self.inner.composed.clone(),
        }
    }

    #[getter]
    fn folding_fraction(&self) -> f64 {
        self.inner.folding_fraction
    }

    #[getter]
    fn runtime_secs(&self) -> f64 {
        self.inner.runtime_secs
    }

    #[getter]
    fn initial_objective(&self) -> f64 {
        self.inner.initial_objective.total
    }

    #[getter]
    fn final_objective(&self) -> f64 {
        self.inner.final_objective.total
    }

    /// Named terms of the final objective.
    fn objective_terms(&self) -> Vec<(String, f64)> {
        self.inner.final_objective.terms.clone()
    }

    /// `(stage, losses)` for the affine levels and every dense block.
    fn traces(&self) -> Vec<(String, Vec<f64>)> {
        self.inner.traces.iter().map(|t| (t.stage.clone(), t.losses.clone())).collect()
    }

    fn trace_csv(&self) -> String {
        traces_to_csv(&self.inner.traces)
    }

    fn warp_image(&self, atlas: &PyVolume) -> PyResult<PyVolume> {
        Ok(PyVolume {
            inner: self.inner.warp_image(&atlas.inner).map_err(to_py)?,
        })
    }

    /// Atlas labels carried onto the patient grid: exclusive masks, or interpolated channels with `soft`.
    #[pyo3(signature = (atlas_labels, soft = false))]
    fn propagate(&self, atlas_labels: &PyLabels, soft: bool) -> PyResult<PyLabels> {
        let p = propagate_labels(&atlas_labels.inner, &self.inner).map_err(to_py)?;
        Ok(PyLabels {
            inner: if soft { p.soft } else { p.masks },
        })
    }

    /// Metrics CSV (`label,dice,voxels_gt,voxels_pred`); dice columns stay empty without patient labels.
    #[pyo3(signature = (atlas_labels, patient_labels = None))]
    fn metrics_csv(&self, atlas_labels: &PyLabels, patient_labels: Option<&PyLabels>) -> PyResult<String> {
        let p = propagate_labels(&atlas_labels.inner, &self.inner).map_err(to_py)?;
        let table: MetricsTable = evaluate(&self.inner, &p.masks, patient_labels.map(|l| &l.inner), None).map_err(to_py)?;
        Ok(table.to_csv())
    }
}

#[pyclass(name = "Phantom", module = "pyatlasreg", frozen, get_all)]
pub struct PyPhantom {
    atlas: PyVolume,
    patient: PyVolume,
    atlas_labels: PyLabels,
    patient_labels: PyLabels,
    ground_truth: PyDisplacement,
}

fn wrap_phantom(spec: &PhantomSpec) -> PyResult<PyPhantom> {
    let p = generate(spec).map_err(to_py)?;
    Ok(PyPhantom {
        atlas: PyVolume { inner: p.atlas },
        patient: PyVolume { inner: p.patient },
        atlas_labels: PyLabels { inner: p.atlas_labels },
        patient_labels: PyLabels { inner: p.patient_labels },
        ground_truth: PyDisplacement { inner: p.ground_truth },
    })
}

/// Built-in phantom pair on an `n`-cubed grid.
#[pyfunction]
#[pyo3(signature = (preset, n = 64))]
fn phantom(preset: &str, n: usize) -> PyResult<PyPhantom> {
    wrap_phantom(&PhantomSpec::preset(preset, [n; 3]).map_err(to_py)?)
}

/// Phantom pair from a TOML scene description.
#[pyfunction]
fn phantom_from_toml(text: &str) -> PyResult<PyPhantom> {
    wrap_phantom(&PhantomSpec::from_toml_str(text).map_err(to_py)?)
}

#[pyfunction]
fn default_config() -> String {
    OptimizerConfig::default().to_toml_string()
}

/// Affine stage then the dense cascade. `config` is TOML text; missing keys keep their defaults.
#[pyfunction]
#[pyo3(signature = (atlas, patient, atlas_labels = None, patient_labels = None, config = None, seed = None))]
fn register(
    py: Python<'_>,
    atlas: &PyVolume,
    patient: &PyVolume,
    atlas_labels: Option<&PyLabels>,
    patient_labels: Option<&PyLabels>,
    config: Option<&str>,
    seed: Option<u64>,
) -> PyResult<PyRegistration> {
    let cfg = build_config(config, seed).map_err(to_py)?;
    let (m, f) = (&atlas.inner, &patient.inner);
    let (s_a, s_f) = (atlas_labels.map(|l| &l.inner), patient_labels.map(|l| &l.inner));
    let inner = py.detach(|| atlasreg::register(m, f, s_a, s_f, &cfg)).map_err(to_py)?;
    Ok(PyRegistration { inner })
}

/// Dice of two volumes thresholded at 0.5.
#[pyfunction]
fn dice(a: &PyVolume, b: &PyVolume) -> PyResult<f64> {
    dice_volumes(&a.inner, &b.inner).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (a, b, bins = 32))]
fn mutual_information(a: &PyVolume, b: &PyVolume, bins: usize) -> PyResult<f64> {
    mi(&a.inner, &b.inner, &MiConfig::with_bins(bins)).map_err(to_py)
}

#[pyfunction]
fn read_volume(path: PathBuf) -> PyResult<PyVolume> {
    Ok(PyVolume {
        inner: io::read_volume(&path).map_err(to_py)?,
    })
}

#[pyfunction]
fn write_volume(path: PathBuf, volume: &PyVolume) -> PyResult<()> {
    io::write_volume(&path, &volume.inner).map_err(to_py)
}

#[pyfunction]
fn read_labels(path: PathBuf) -> PyResult<PyLabels> {
    Ok(PyLabels {
        inner: io::read_labels(&path).map_err(to_py)?,
    })
}

#[pyfunction]
fn write_labels(path: PathBuf, labels: &PyLabels) -> PyResult<()> {
    io::write_labels(&path, &labels.inner).map_err(to_py)
}

#[pyfunction]
fn read_displacement(path: PathBuf) -> PyResult<PyDisplacement> {
    Ok(PyDisplacement {
        inner: io::read_displacement(&path).map_err(to_py)?,
    })
}

#[pyfunction]
fn write_displacement(path: PathBuf, displacement: &PyDisplacement) -> PyResult<()> {
    io::write_displacement(&path, &displacement.inner).map_err(to_py)
}

#[pymodule]
fn pyatlasreg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVolume>()?;
    m.add_class::<PyLabels>()?;
    m.add_class::<PyDisplacement>()?;
    m.add_class::<PyRegistration>()?;
    m.add_class::<PyPhantom>()?;
    m.add_function(wrap_pyfunction!(phantom, m)?)?;
    m.add_function(wrap_pyfunction!(phantom_from_toml, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(register, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(read_volume, m)?)?;
    m.add_function(wrap_pyfunction!(write_volume, m)?)?;
    m.add_function(wrap_pyfunction!(read_labels, m)?)?;
    m.add_function(wrap_pyfunction!(write_labels, m)?)?;
    m.add_function(wrap_pyfunction!(read_displacement, m)?)?;
    m.add_function(wrap_pyfunction!(write_displacement, m)?)?;
    Ok(())
}
