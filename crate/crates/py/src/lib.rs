//! Python bindings: optics helpers, source overlaps, reduced states,
//! tomography and scenario runs.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dualbench::linalg::Mat2;
use dualbench::metrics;
use dualbench::scenario::{self, ScenarioConfig, ScenarioKind};
use dualbench::source::{self, DistinguishabilityKnob, Imperfections, SpectralModel};
use dualbench::state::{self, Labeling};
use dualbench::tomography::{self, MleOptions, Normalization, TomographyCounts, SETTING_COUNT};
use dualbench::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Validation(_) | Error::IncompleteCoverage(_) | Error::Normalization(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn labeling(qubit: &str) -> PyResult<Labeling> {
    match qubit {
        "polarization" => Ok(Labeling::ByPath),
        "path" => Ok(Labeling::ByPolarization),
        other => Err(PyValueError::new_err(format!(
            "qubit must be 'polarization' or 'path', got '{other}'"
        ))),
    }
}

fn rows2(m: &Mat2) -> Vec<Vec<Complex64>> {
    (0..2).map(|i| (0..2).map(|j| m[(i, j)]).collect()).collect()
}

/// Half-wave plate Jones matrix, fast axis at `angle_deg`.
#[pyfunction]
fn hwp(angle_deg: f64) -> Vec<Vec<Complex64>> {
    rows2(&dualbench::optics::hwp_matrix(angle_deg.to_radians()))
}

/// Quarter-wave plate Jones matrix, fast axis at `angle_deg`.
#[pyfunction]
fn qwp(angle_deg: f64) -> Vec<Vec<Complex64>> {
    rows2(&dualbench::optics::qwp_matrix(angle_deg.to_radians()))
}

/// Signal/idler detuning (nm) at a crystal temperature.
#[pyfunction]
fn temperature_to_detuning(temperature_c: f64) -> PyResult<f64> {
    source::temperature_to_detuning(temperature_c, &SpectralModel::default().temperature_tuning).map_err(py_err)
}

/// Wavepacket overlap γ of the default spectral model. Give at most one of
/// `delta_lambda_nm`, `temperature_c` or `delay_ps`; none means identical photons.
#[pyfunction]
#[pyo3(signature = (delta_lambda_nm=None, temperature_c=None, delay_ps=None))]
fn overlap(delta_lambda_nm: Option<f64>, temperature_c: Option<f64>, delay_ps: Option<f64>) -> PyResult<Complex64> {
    let knob = match (delta_lambda_nm, temperature_c, delay_ps) {
        (None, None, None) => DistinguishabilityKnob::default(),
        (Some(d), None, None) => DistinguishabilityKnob::frequency(d),
        (None, Some(t), None) => DistinguishabilityKnob::temperature(t),
        (None, None, Some(tau)) => DistinguishabilityKnob::delay(tau),
        _ => return Err(PyValueError::new_err("give at most one distinguishability setting")),
    };
    source::overlap(&SpectralModel::default(), &knob).map_err(py_err)
}

/// Two-qubit density matrix.
#[pyclass(name = "DensityMatrix", module = "dualbench", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDensityMatrix {
    inner: state::DensityMatrix,
}

#[pymethods]
impl PyDensityMatrix {
    #[new]
    #[pyo3(signature = (entries, qubit="polarization"))]
    fn new(entries: Vec<Vec<Complex64>>, qubit: &str) -> PyResult<Self> {
        if entries.len() != 4 || entries.iter().any(|r| r.len() != 4) {
            return Err(PyValueError::new_err("entries must be a 4x4 nested list"));
        }
        let m = dualbench::linalg::Mat4::from_fn(|i, j| entries[i][j]);
        let inner = state::DensityMatrix::new(m, labeling(qubit)?.basis_labels()).map_err(py_err)?;
        Ok(PyDensityMatrix { inner })
    }

    #[getter]
    fn entries(&self) -> Vec<Vec<Complex64>> {
        let m = self.inner.entries();
        (0..4).map(|i| (0..4).map(|j| m[(i, j)]).collect()).collect()
    }

    #[getter]
    fn basis_labels(&self) -> Vec<String> {
        self.inner.basis_labels().to_vec()
    }

    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().iter().copied().collect()
    }

    fn concurrence(&self) -> PyResult<f64> {
        metrics::concurrence(&self.inner).map_err(py_err)
    }

    /// Fidelity with (|01⟩ + |10⟩)/√2.
    fn fidelity(&self) -> PyResult<f64> {
        metrics::fidelity(&self.inner, &metrics::bell_target()).map_err(py_err)
    }

    fn trace_distance(&self, other: &PyDensityMatrix) -> f64 {
        self.inner.trace_distance(&other.inner)
    }

    fn __repr__(&self) -> String {
        format!("DensityMatrix(basis={:?})", self.inner.basis_labels())
    }
}

/// Qubit state of the source pair for overlap `gamma`, with `qubit` either
/// "polarization" or "path", post-selected on one photon per label value.
#[pyfunction]
#[pyo3(signature = (gamma, qubit, noise_profile="ideal"))]
fn reduced_state(gamma: Complex64, qubit: &str, noise_profile: &str) -> PyResult<PyDensityMatrix> {
    let imp = Imperfections::profile(noise_profile).map_err(py_err)?;
    let pair = source::make_pair_with_overlap(gamma, &imp.noise).map_err(py_err)?;
    let (inner, _) = state::reduce_postselected(&pair, labeling(qubit)?).map_err(py_err)?;
    Ok(PyDensityMatrix { inner })
}

/// Tomography settings as (index, label) in catalog order.
#[pyfunction]
fn catalog() -> Vec<(usize, String)> {
    tomography::projector_catalog()
        .into_iter()
        .map(|s| (s.index, s.label))
        .collect()
}

/// Expected counts `pairs × Tr(M_k ρ)` for the 16 settings.
#[pyfunction]
fn expected_counts(rho: &PyDensityMatrix, pairs: f64) -> PyResult<Vec<f64>> {
    Ok(tomography::exact_counts(&rho.inner, pairs).map_err(py_err)?.observed.to_vec())
}

/// Reconstructs a state from 16 counts. `method` is "mle" or "linear".
#[pyfunction]
#[pyo3(signature = (counts, pairs, qubit="polarization", method="mle", known_pairs=false))]
fn reconstruct(
    counts: Vec<f64>,
    pairs: f64,
    qubit: &str,
    method: &str,
    known_pairs: bool,
) -> PyResult<PyDensityMatrix> {
    let observed: [f64; SETTING_COUNT] = counts
        .try_into()
        .map_err(|_| PyValueError::new_err(format!("expected {SETTING_COUNT} counts")))?;
    let data = TomographyCounts::new(labeling(qubit)?, observed, [pairs; SETTING_COUNT]).map_err(py_err)?;
    let inner = match method {
        "linear" => tomography::linear_inversion(&data).map_err(py_err)?,
        "mle" => {
            let options = MleOptions {
                normalization: if known_pairs { Normalization::Known } else { Normalization::Fitted },
                ..MleOptions::default()
            };
            tomography::mle_reconstruct(&data, &options).map_err(py_err)?.rho
        }
        other => return Err(PyValueError::new_err(format!("unknown method '{other}'"))),
    };
    Ok(PyDensityMatrix { inner })
}

/// Fringe visibility of a scan; returns (visibility, offset, amplitude, phase).
#[pyfunction]
fn visibility(thetas_deg: Vec<f64>, values: Vec<f64>) -> PyResult<(f64, f64, f64, f64)> {
    let f = metrics::visibility(&thetas_deg, &values).map_err(py_err)?;
    Ok((f.visibility, f.offset, f.amplitude, f.phase))
}

/// Default configuration of a scenario, as JSON.
#[pyfunction]
fn default_config(scenario: &str) -> PyResult<String> {
    let kind = ScenarioKind::parse(scenario).map_err(py_err)?;
    ScenarioConfig::new(kind).to_json().map_err(py_err)
}

/// Runs a scenario from a JSON configuration and returns the metrics
/// document as JSON. With `out_dir`, the full bundle is written there.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir=None))]
fn run_scenario(py: Python<'_>, config_json: &str, out_dir: Option<std::path::PathBuf>) -> PyResult<String> {
    let mut cfg = ScenarioConfig::from_json(config_json).map_err(py_err)?;
    if let Some(dir) = &out_dir {
        cfg.output_dir = dir.clone();
    }
    let bundle = py.detach(|| -> dualbench::Result<_> {
        let bundle = scenario::run(&cfg)?;
        if out_dir.is_some() {
            scenario::write_bundle(&bundle, &cfg.output_dir, false)?;
        }
        Ok(bundle)
    });
    let bundle = bundle.map_err(py_err)?;
    serde_json::to_string_pretty(&scenario::metrics_json(&bundle)).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Two-photon entanglement-duality simulator.
#[pymodule(name = "dualbench")]
mod dualbench_py {
    #[pymodule_export]
    use super::{
        catalog, default_config, expected_counts, hwp, overlap, qwp, reconstruct, reduced_state, run_scenario,
        temperature_to_detuning, visibility, PyDensityMatrix,
    };
}
