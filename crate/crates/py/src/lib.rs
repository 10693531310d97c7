//! Python bindings for the pilotwave library.
//!
//! Exposes the macroscopic-distinguishability bounds, 1D wave-function
//! evolution with guided trajectories, equilibrium sampling and the
//! equivariance check, the Stern-Gerlach pipeline, and the field-mode
//! functional with its branching demo.

use num_complex::Complex64 as C64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use pilotwave::equilibrium::{
    check_equivariance, sample_density, EnsembleSpec, EquivarianceOptions,
};
use pilotwave::error::Error;
use pilotwave::evolution::{evolve_schrodinger_history, gaussian_packet_1d, Potential, WaveHistory};
use pilotwave::fieldmodes::{
    field_velocity, integrate_field, sample_functional, FunctionalFlow, ModeBasis, WaveFunctional,
};
use pilotwave::grids::GridSpec;
use pilotwave::guidance::{integrate_trajectory, HistoryField};
use pilotwave::scenarios::{
    branching_frequencies, run_branching_demo, run_stern_gerlach, BranchingConfig, SpinState,
    SternGerlachConfig,
};

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

// ------------------------------------------------------------------ bounds --

/// Minimum region size L* = 1 / (a rho^{2/3}) [m].
#[pyfunction]
fn euler_angle_bound(a: f64, rho: f64) -> PyResult<f64> {
    pilotwave::adequacy::euler_angle_bound(a, rho).map_err(err)
}

/// Minimal sea volume V* [m^3] and the radius [m] of the sphere with that
/// volume.
#[pyfunction]
fn dirac_sea_bound(lambda: f64, rho: f64) -> PyResult<(f64, f64)> {
    pilotwave::adequacy::dirac_sea_bound(lambda, rho).map_err(err)
}

/// Sea-density ratio between matter-filled and empty regions.
#[pyfunction]
fn density_ratio(rho: f64, lambda: f64) -> PyResult<f64> {
    pilotwave::adequacy::density_ratio(rho, lambda).map_err(err)
}

// --------------------------------------------------------------- evolution --

fn potential_from(kind: &str, omega: f64) -> PyResult<Potential> {
    match kind {
        "none" => Ok(Potential::None),
        "harmonic" => Ok(Potential::Harmonic { omega }),
        other => Err(PyValueError::new_err(format!("unknown potential '{other}'"))),
    }
}

/// A stored 1D wave-function evolution with guided-trajectory access.
#[pyclass]
struct Evolution {
    spec: GridSpec,
    history: WaveHistory,
}

#[pymethods]
impl Evolution {
    /// Evolve a Gaussian packet exp(ikx - (x-c)^2 / 4 sigma^2) and store
    /// slices every `store_every` steps.
    #[new]
    #[pyo3(signature = (extent, points, center, width, momentum, dt, total_time,
                        store_every = 10, potential = "none", omega = 1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        extent: f64,
        points: usize,
        center: f64,
        width: f64,
        momentum: f64,
        dt: f64,
        total_time: f64,
        store_every: usize,
        potential: &str,
        omega: f64,
    ) -> PyResult<Self> {
        let spec = GridSpec::new_1d(extent, points).map_err(err)?;
        let psi0 = gaussian_packet_1d(&spec, center, width, momentum).map_err(err)?;
        let pot = potential_from(potential, omega)?;
        let steps = (total_time / dt).round() as usize;
        let history =
            evolve_schrodinger_history(&psi0, &pot, dt, steps, store_every, 0.0).map_err(err)?;
        Ok(Self { spec, history })
    }

    /// Stored times.
    fn times(&self) -> Vec<f64> {
        self.history.times.clone()
    }

    /// Grid node coordinates.
    fn grid(&self) -> Vec<f64> {
        self.spec.axis_coords(0)
    }

    /// |psi|^2 on the grid at stored slice `i`.
    fn density(&self, i: usize) -> PyResult<Vec<f64>> {
        self.history
            .slices
            .get(i)
            .map(|s| s.density())
            .ok_or_else(|| PyValueError::new_err(format!("slice {i} out of range")))
    }

    /// Worst norm drift across stored slices.
    fn max_norm_drift(&self) -> f64 {
        self.history.max_norm_drift
    }

    /// Integrate one guided trajectory from `x0`; returns (times, positions,
    /// flagged).
    #[pyo3(signature = (x0, tolerance = 1e-8, record_times = vec![]))]
    fn trajectory(
        &self,
        x0: f64,
        tolerance: f64,
        record_times: Vec<f64>,
    ) -> PyResult<(Vec<f64>, Vec<f64>, bool)> {
        let field = HistoryField::new(&self.history).map_err(err)?;
        let t1 = *self.history.times.last().unwrap();
        let tr = integrate_trajectory(&field, &[x0], 0.0, t1, tolerance, &record_times)
            .map_err(err)?;
        let xs = tr.positions.iter().map(|p| p[0]).collect();
        Ok((tr.times, xs, tr.flagged))
    }

    /// Draw equilibrium samples from the initial density.
    #[pyo3(signature = (count, seed))]
    fn sample_initial(&self, count: usize, seed: u64) -> PyResult<Vec<f64>> {
        let samples =
            sample_density(&self.history.slices[0], &EnsembleSpec::new_1d(count, seed))
                .map_err(err)?;
        Ok(samples.into_iter().map(|x| x[0]).collect())
    }
}

/// Transport a |psi|^2 ensemble and KS-test it against the evolved density at
/// each probe time. Returns a dict with pass/flagged counts and per-time
/// p-values.
#[pyfunction]
#[pyo3(signature = (extent, points, center, width, momentum, probe_times, count,
                    seed, dt = 1e-3, potential = "none", omega = 1.0,
                    significance = 0.01, velocity_scale = 1.0))]
#[allow(clippy::too_many_arguments)]
fn equivariance_check(
    py: Python<'_>,
    extent: f64,
    points: usize,
    center: f64,
    width: f64,
    momentum: f64,
    probe_times: Vec<f64>,
    count: usize,
    seed: u64,
    dt: f64,
    potential: &str,
    omega: f64,
    significance: f64,
    velocity_scale: f64,
) -> PyResult<PyObject> {
    let spec = GridSpec::new_1d(extent, points).map_err(err)?;
    let psi0 = gaussian_packet_1d(&spec, center, width, momentum).map_err(err)?;
    let pot = potential_from(potential, omega)?;
    let opts = EquivarianceOptions {
        dt,
        store_every: 10,
        tolerance: 1e-8,
        significance,
        velocity_scale,
    };
    let report = check_equivariance(
        &psi0,
        &pot,
        &EnsembleSpec::new_1d(count, seed),
        &probe_times,
        &opts,
    )
    .map_err(err)?;
    let d = pyo3::types::PyDict::new_bound(py);
    d.set_item("pass", report.pass)?;
    d.set_item("inconclusive", report.inconclusive)?;
    d.set_item("flagged_count", report.flagged_count)?;
    d.set_item("ensemble_count", report.ensemble_count)?;
    d.set_item(
        "p_values",
        report.times.iter().map(|t| (t.time, t.p_value)).collect::<Vec<_>>(),
    )?;
    Ok(d.into())
}

// ------------------------------------------------------------ Stern-Gerlach --

/// Run the Stern-Gerlach pipeline. `spin` is "x-up", "z-up", "z-down", or a
/// complex pair (alpha, beta). Returns a dict of outcome statistics.
#[pyfunction]
#[pyo3(signature = (spin, count, seed, alpha = None, beta = None))]
fn stern_gerlach(
    py: Python<'_>,
    spin: &str,
    count: usize,
    seed: u64,
    alpha: Option<(f64, f64)>,
    beta: Option<(f64, f64)>,
) -> PyResult<PyObject> {
    let state = match spin {
        "x-up" => SpinState::XUp,
        "z-up" => SpinState::ZUp,
        "z-down" => SpinState::ZDown,
        "general" => {
            let a = alpha.ok_or_else(|| PyValueError::new_err("general spin needs alpha"))?;
            let b = beta.ok_or_else(|| PyValueError::new_err("general spin needs beta"))?;
            SpinState::General { alpha: C64::new(a.0, a.1), beta: C64::new(b.0, b.1) }
        }
        other => return Err(PyValueError::new_err(format!("unknown spin '{other}'"))),
    };
    let cfg = SternGerlachConfig::new(state, EnsembleSpec::new_1d(count, seed));
    let report = run_stern_gerlach(&cfg).map_err(err)?;
    let d = pyo3::types::PyDict::new_bound(py);
    d.set_item("up_fraction", report.up_fraction)?;
    d.set_item("down_fraction", report.down_fraction)?;
    d.set_item("indeterminate_fraction", report.indeterminate_fraction)?;
    d.set_item("flagged_count", report.flagged_count)?;
    d.set_item("ensemble_count", report.ensemble_count)?;
    d.set_item("separation_widths", report.separation_widths)?;
    d.set_item("position_outcome_correlation", report.position_outcome_correlation)?;
    d.set_item("threshold_stable", report.threshold_stable)?;
    Ok(d.into())
}

// -------------------------------------------------------------- field modes --

/// A truncated-mode wave functional over a periodic lattice, with evolution,
/// guidance, and equilibrium sampling.
#[pyclass]
struct FieldFunctional {
    w: WaveFunctional,
}

#[pymethods]
impl FieldFunctional {
    /// Ground state (all centers and momenta zero) or a coherent excitation.
    #[new]
    #[pyo3(signature = (sites, modes, dispersion_scale, centers = vec![], momenta = vec![]))]
    fn new(
        sites: usize,
        modes: usize,
        dispersion_scale: f64,
        centers: Vec<f64>,
        momenta: Vec<f64>,
    ) -> PyResult<Self> {
        let basis = ModeBasis::new(sites, modes, dispersion_scale).map_err(err)?;
        let w = if centers.iter().chain(&momenta).any(|&x| x != 0.0) {
            let mut c = centers;
            let mut p = momenta;
            c.resize(modes, 0.0);
            p.resize(modes, 0.0);
            WaveFunctional::coherent(basis, &c, &p).map_err(err)?
        } else {
            WaveFunctional::ground(basis)
        };
        Ok(Self { w })
    }

    /// Mode angular frequencies.
    fn frequencies(&self) -> Vec<f64> {
        (0..self.w.basis.mode_count()).map(|k| self.w.basis.frequency(k)).collect()
    }

    /// Guidance velocity at mode configuration `q`.
    fn velocity(&self, q: Vec<f64>) -> Vec<f64> {
        field_velocity(&self.w, &q).0
    }

    /// Lattice field values for mode amplitudes `q`.
    fn field(&self, q: Vec<f64>) -> Vec<f64> {
        self.w.basis.field(&q)
    }

    /// Draw |Psi|^2 samples of the mode configuration.
    fn sample(&self, count: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        sample_functional(&self.w, count, seed).map_err(err)
    }

    /// Evolve and integrate one guided configuration from `q0`; returns
    /// (times, positions, flagged).
    #[pyo3(signature = (q0, dt, total_time, store_every = 1, tolerance = 1e-9))]
    fn trajectory(
        &self,
        q0: Vec<f64>,
        dt: f64,
        total_time: f64,
        store_every: usize,
        tolerance: f64,
    ) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, bool)> {
        let steps = (total_time / dt).round() as usize;
        let flow = FunctionalFlow::evolve(&self.w, dt, steps, store_every, None).map_err(err)?;
        let record: Vec<f64> = flow.times[1..flow.times.len() - 1].to_vec();
        let tr = integrate_field(&flow, &q0, 0.0, total_time, tolerance, &record).map_err(err)?;
        Ok((tr.times, tr.positions, tr.flagged))
    }
}

/// Run the two-label branching demo once; returns a dict with the collapsed
/// branch, contamination, and energy profiles.
#[pyfunction]
#[pyo3(signature = (seed = 7, kick = 20.0, runs = None))]
fn branching_demo(
    py: Python<'_>,
    seed: u64,
    kick: f64,
    runs: Option<usize>,
) -> PyResult<PyObject> {
    let cfg = BranchingConfig { seed, kick, ..BranchingConfig::default() };
    let report = run_branching_demo(&cfg).map_err(err)?;
    let d = pyo3::types::PyDict::new_bound(py);
    d.set_item("collapsed_branch", report.collapsed_branch)?;
    d.set_item("contamination", report.contamination)?;
    d.set_item("separation_widths", report.separation_widths)?;
    d.set_item("initial_energy", report.initial_energy)?;
    d.set_item("final_energy", report.final_energy)?;
    if let Some(runs) = runs {
        let f = branching_frequencies(&cfg, runs).map_err(err)?;
        d.set_item("branch0_fraction", f.branch0_fraction)?;
        d.set_item("branch0_weight", f.branch0_weight)?;
        d.set_item("runs", f.runs)?;
    }
    Ok(d.into())
}

#[pymodule]
fn pilotwave_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(euler_angle_bound, m)?)?;
    m.add_function(wrap_pyfunction!(dirac_sea_bound, m)?)?;
    m.add_function(wrap_pyfunction!(density_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(equivariance_check, m)?)?;
    m.add_function(wrap_pyfunction!(stern_gerlach, m)?)?;
    m.add_function(wrap_pyfunction!(branching_demo, m)?)?;
    m.add_class::<Evolution>()?;
    m.add_class::<FieldFunctional>()?;
    Ok(())
}
