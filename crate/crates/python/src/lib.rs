//! Python module `lindprep`: integrals, sector spectra, the filter window and
//! configured runs.

use pyo3::exceptions::{PyArithmeticError, PyMemoryError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lindprep::filter::{default_filter_params, filter_freq, filter_time, FilterSpec};
use lindprep::fock::{enumerate_sector, SectorBasis};
use lindprep::hamiltonian::{
    assemble_hamiltonian, build_reference_state, spin_square_operator, ReferenceSpec, SpinOpsInput,
};
use lindprep::integrals::{self, write_fcidump};
use lindprep::linalg::{CMatrix, C64};
use lindprep::observables::{multiplicity_from_s2, ObservableSeries};
use lindprep::run::{self, LoadedConfig, RunOutput};
use lindprep::spectral::{eigendecompose, Spectrum, DEFAULT_DENSE_LIMIT};
use lindprep::Error;

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Capacity(_) => PyMemoryError::new_err(msg),
        Error::Numerical(_) => PyArithmeticError::new_err(msg),
        Error::Io(_) => PyOSError::new_err(msg),
        Error::Parameter(_) | Error::Parse { .. } | Error::Config(_) => PyValueError::new_err(msg),
    }
}

fn rows(m: &CMatrix) -> Vec<Vec<C64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// One- and two-electron integrals over spatial orbitals.
#[pyclass(name = "IntegralSet", module = "lindprep", frozen)]
struct PyIntegralSet {
    inner: integrals::IntegralSet,
}

#[pymethods]
impl PyIntegralSet {
    /// Open Hubbard chain with hopping `t` and on-site repulsion `u`.
    #[staticmethod]
    fn hubbard(sites: usize, t: f64, u: f64) -> PyResult<Self> {
        let inner = integrals::hubbard_integrals(sites, t, u).map_err(to_py)?;
        Ok(PyIntegralSet { inner })
    }

    /// Parse FCIDUMP text (chemists' notation).
    #[staticmethod]
    fn from_fcidump(text: &str) -> PyResult<Self> {
        let inner = integrals::parse_fcidump(text).map_err(to_py)?;
        Ok(PyIntegralSet { inner })
    }

    fn to_fcidump(&self) -> String {
        write_fcidump(&self.inner)
    }

    /// The same integrals over eigenvectors of the one-body matrix.
    fn molecular(&self) -> PyResult<Self> {
        let inner = self.inner.to_one_body_eigenbasis().map_err(to_py)?;
        Ok(PyIntegralSet { inner })
    }

    #[getter]
    fn n_orbitals(&self) -> usize {
        self.inner.n_orbitals
    }

    #[getter]
    fn n_electrons(&self) -> usize {
        self.inner.n_electrons
    }

    #[getter]
    fn core_energy(&self) -> f64 {
        self.inner.core_energy
    }

    #[getter]
    fn one_body(&self) -> Vec<Vec<f64>> {
        let h = &self.inner.one_body;
        (0..h.nrows())
            .map(|i| h.row(i).iter().copied().collect())
            .collect()
    }

    /// Chemists' two-electron integral `(ij|kl)`, 1-based.
    fn chem(&self, i: usize, j: usize, k: usize, l: usize) -> PyResult<f64> {
        let n = self.inner.n_orbitals;
        if [i, j, k, l].iter().any(|&x| x == 0 || x > n) {
            return Err(PyValueError::new_err(format!(
                "orbital indices must lie in 1..={n}"
            )));
        }
        Ok(self.inner.chem(i - 1, j - 1, k - 1, l - 1))
    }

    fn __repr__(&self) -> String {
        format!(
            "IntegralSet(n_orbitals={}, n_electrons={}, core_energy={})",
            self.inner.n_orbitals, self.inner.n_electrons, self.inner.core_energy
        )
    }
}

/// Hamiltonian, `Ŝ²` and exact spectrum of one `(Nα, Nβ)` sector.
#[pyclass(name = "Sector", module = "lindprep", frozen)]
struct PySector {
    basis: SectorBasis,
    hamiltonian: CMatrix,
    spin_square: CMatrix,
    spectrum: Spectrum,
}

#[pymethods]
impl PySector {
    #[new]
    fn new(integrals: &PyIntegralSet, n_alpha: usize, n_beta: usize) -> PyResult<Self> {
        let ints = &integrals.inner;
        let basis = enumerate_sector(ints.n_orbitals, n_alpha, n_beta).map_err(to_py)?;
        let h = assemble_hamiltonian(ints, &basis).map_err(to_py)?;
        let s2 = spin_square_operator(
            &basis,
            &SpinOpsInput::restricted(ints.n_orbitals, n_alpha, n_beta),
        )
        .map_err(to_py)?;
        let spectrum = eigendecompose(&h, None, DEFAULT_DENSE_LIMIT).map_err(to_py)?;
        Ok(PySector {
            hamiltonian: h.to_dense(),
            spin_square: s2.to_dense(),
            basis,
            spectrum,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.spectrum.eigenvalues.clone()
    }

    /// Distinct levels as `(energy, degeneracy)`.
    #[getter]
    fn levels(&self) -> Vec<(f64, usize)> {
        self.spectrum
            .levels
            .iter()
            .map(|l| (l.energy, l.degeneracy()))
            .collect()
    }

    #[getter]
    fn gap(&self) -> Option<f64> {
        self.spectrum.gap
    }

    #[getter]
    fn radius(&self) -> f64 {
        self.spectrum.radius
    }

    /// Occupation bit patterns in basis order (bit `2(p−1)+σ`).
    #[getter]
    fn determinants(&self) -> Vec<u64> {
        self.basis.dets().iter().map(|d| d.0).collect()
    }

    fn hamiltonian(&self) -> Vec<Vec<C64>> {
        rows(&self.hamiltonian)
    }

    fn spin_square(&self) -> Vec<Vec<C64>> {
        rows(&self.spin_square)
    }

    fn eigenvector(&self, index: usize) -> PyResult<Vec<C64>> {
        if index >= self.spectrum.dim() {
            return Err(PyValueError::new_err(format!("index {index} out of range")));
        }
        Ok(self.spectrum.vector(index).iter().copied().collect())
    }

    /// `⟨ψ|Ŝ²|ψ⟩` of eigenvector `index`.
    fn s2_of(&self, index: usize) -> PyResult<f64> {
        let v = lindprep::linalg::CVector::from_vec(self.eigenvector(index)?);
        Ok(v.dotc(&(&self.spin_square * &v)).re)
    }

    /// Amplitudes of the aufbau determinant.
    fn aufbau_state(&self) -> PyResult<Vec<C64>> {
        let st = build_reference_state(&self.basis, &ReferenceSpec::HfAufbau).map_err(to_py)?;
        Ok(st.amplitudes.iter().copied().collect())
    }

    /// Default filter window for this spectrum.
    #[pyo3(signature = (safety = 1.0))]
    fn default_filter(&self, safety: f64) -> PyResult<PyFilter> {
        let spec = default_filter_params(&self.spectrum, safety).map_err(to_py)?;
        Ok(PyFilter { spec })
    }
}

/// The erf window `f̂(ω)` and its time-domain kernel `f(s)`.
#[pyclass(name = "Filter", module = "lindprep", frozen)]
struct PyFilter {
    spec: FilterSpec,
}

#[pymethods]
impl PyFilter {
    #[new]
    fn new(a: f64, b: f64, delta_a: f64, delta_b: f64, s_max: f64) -> PyResult<Self> {
        let spec = FilterSpec::new(a, b, delta_a, delta_b, s_max).map_err(to_py)?;
        Ok(PyFilter { spec })
    }

    fn freq(&self, omega: f64) -> f64 {
        filter_freq(&self.spec, omega)
    }

    fn time(&self, s: f64) -> C64 {
        filter_time(&self.spec, s)
    }

    #[getter]
    fn a(&self) -> f64 {
        self.spec.a
    }

    #[getter]
    fn b(&self) -> f64 {
        self.spec.b
    }

    #[getter]
    fn delta_a(&self) -> f64 {
        self.spec.delta_a
    }

    #[getter]
    fn delta_b(&self) -> f64 {
        self.spec.delta_b
    }

    #[getter]
    fn s_max(&self) -> f64 {
        self.spec.s_max
    }

    fn __repr__(&self) -> String {
        let s = &self.spec;
        format!(
            "Filter(a={}, b={}, delta_a={}, delta_b={}, s_max={})",
            s.a, s.b, s.delta_a, s.delta_b, s.s_max
        )
    }
}

/// Series, report and optional adiabatic baseline of one run.
#[pyclass(name = "RunResult", module = "lindprep", frozen)]
struct PyRunResult {
    output: RunOutput,
    report_json: String,
}

fn series_dict<'py>(py: Python<'py>, s: &ObservableSeries) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("time", s.times.clone())?;
    d.set_item("energy", s.energy.clone())?;
    d.set_item("infidelity", s.infidelity.clone())?;
    d.set_item("s2", s.s2.clone())?;
    d.set_item("multiplicity", s.multiplicity.clone())?;
    d.set_item("trace_err", s.trace_err.clone())?;
    Ok(d)
}

#[pymethods]
impl PyRunResult {
    /// The run report as a dict.
    #[getter]
    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        py.import("json")?
            .call_method1("loads", (self.report_json.as_str(),))
    }

    #[getter]
    fn report_json(&self) -> &str {
        &self.report_json
    }

    #[getter]
    fn series<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        series_dict(py, &self.output.series)
    }

    #[getter]
    fn asp_series<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyDict>>> {
        self.output
            .asp_series
            .as_ref()
            .map(|s| series_dict(py, s))
            .transpose()
    }

    /// Write `series.csv` and `report.json` into `directory`.
    fn write(&self, directory: &str) -> PyResult<()> {
        run::write_outputs(&self.output, std::path::Path::new(directory)).map_err(to_py)
    }
}

/// Execute a TOML run configuration; relative paths resolve against `base_dir`.
#[pyfunction]
#[pyo3(name = "run", signature = (config, base_dir = "."))]
fn run_config(py: Python<'_>, config: &str, base_dir: &str) -> PyResult<PyRunResult> {
    let loaded = LoadedConfig::from_text(config, base_dir).map_err(to_py)?;
    let output = py.detach(|| run::run(&loaded)).map_err(to_py)?;
    let report_json =
        serde_json::to_string(&output.report).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(PyRunResult {
        output,
        report_json,
    })
}

/// `√(1 + 4⟨Ŝ²⟩)`
#[pyfunction]
fn multiplicity(s2: f64) -> PyResult<f64> {
    multiplicity_from_s2(s2).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "lindprep")]
fn lindprep_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyIntegralSet>()?;
    m.add_class::<PySector>()?;
    m.add_class::<PyFilter>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(multiplicity, m)?)?;
    Ok(())
}
