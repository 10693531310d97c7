//! Split-step spectral time evolution for scalar and spinor wave functions.
//!
//! The stepper is symmetric (Strang) splitting: a half step of the
//! position-space phase, a full kinetic step in spectral space, and another
//! half step of the position-space phase. Each substep is a pure phase, so
//! the norm is conserved to round-off and the stepper is exactly
//! time-reversible.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::grids::{spectral_transform_mut, ComplexGrid, Direction, GridSpec};

/// External potential V(x) entering the Schroedinger equation.
#[derive(Debug, Clone)]
pub enum Potential {
    None,
    Harmonic { omega: f64 },
    Barrier { height: f64, width: f64 },
    Sampled(Vec<f64>),
}

impl Potential {
    /// Sample V on the nodes of `spec`.
    pub fn sample(&self, spec: &GridSpec) -> Result<Vec<f64>> {
        let n = spec.total_points();
        let at = |x: &[f64]| -> f64 {
            match self {
                Potential::None => 0.0,
                Potential::Harmonic { omega } => {
                    0.5 * omega * omega * x.iter().map(|v| v * v).sum::<f64>()
                }
                Potential::Barrier { height, width } => {
                    if x.iter().all(|v| v.abs() < 0.5 * width) {
                        *height
                    } else {
                        0.0
                    }
                }
                Potential::Sampled(_) => unreachable!(),
            }
        };
        let vals = match self {
            Potential::Sampled(v) => {
                if v.len() != n {
                    return Err(Error::InvalidInput(format!(
                        "sampled potential has {} values, grid has {n}",
                        v.len()
                    )));
                }
                v.clone()
            }
            _ => match spec.dim() {
                1 => (0..spec.points(0)).map(|i| at(&[spec.coord(0, i)])).collect(),
                _ => {
                    let mut out = Vec::with_capacity(n);
                    for i in 0..spec.points(0) {
                        for j in 0..spec.points(1) {
                            out.push(at(&[spec.coord(0, i), spec.coord(1, j)]));
                        }
                    }
                    out
                }
            },
        };
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("potential contains non-finite values".into()));
        }
        Ok(vals)
    }
}

/// Diagonal Pauli coupling -mu sigma_z B_z with B_z(z) = B0 - b z on the last
/// axis, active during [t_on, t_off]. In 2D an optional window restricts the
/// coupling to a band along axis 0 (transit through the magnet).
#[derive(Debug, Clone)]
pub struct PauliCoupling {
    pub mu: f64,
    pub b0: f64,
    pub b_grad: f64,
    pub t_on: f64,
    pub t_off: f64,
    /// (center, half-width) along axis 0; 2D only.
    pub spatial_window: Option<(f64, f64)>,
}

impl PauliCoupling {
    pub fn validate(&self) -> Result<()> {
        if self.t_on > self.t_off {
            return Err(Error::InvalidInput("coupling window has t_on > t_off".into()));
        }
        for v in [self.mu, self.b0, self.b_grad, self.t_on, self.t_off] {
            if !v.is_finite() {
                return Err(Error::NonFinite("coupling coefficient not finite".into()));
            }
        }
        Ok(())
    }

    /// Per-component magnetic energy -/+ mu*B_z sampled on the grid; sign +1
    /// for the upper component (sigma_z eigenvalue +1).
    fn magnetic_term(&self, spec: &GridSpec, sign: f64) -> Vec<f64> {
        let z_axis = spec.dim() - 1;
        let mut out = Vec::with_capacity(spec.total_points());
        let push = |out: &mut Vec<f64>, coords: &[f64]| {
            let bz = self.b0 - self.b_grad * coords[z_axis];
            let window = match (spec.dim(), self.spatial_window) {
                (2, Some((c, hw))) => {
                    if (coords[0] - c).abs() <= hw {
                        1.0
                    } else {
                        0.0
                    }
                }
                _ => 1.0,
            };
            out.push(-sign * self.mu * bz * window);
        };
        match spec.dim() {
            1 => {
                for i in 0..spec.points(0) {
                    push(&mut out, &[spec.coord(0, i)]);
                }
            }
            _ => {
                for i in 0..spec.points(0) {
                    for j in 0..spec.points(1) {
                        push(&mut out, &[spec.coord(0, i), spec.coord(1, j)]);
                    }
                }
            }
        }
        out
    }
}

/// Two-component Pauli state on a shared grid. Component 0 is spin-up.
#[derive(Debug, Clone)]
pub struct SpinorGrid {
    pub up: ComplexGrid,
    pub down: ComplexGrid,
}

impl SpinorGrid {
    pub fn new(up: ComplexGrid, down: ComplexGrid) -> Result<Self> {
        if up.spec != down.spec {
            return Err(Error::InvalidGrid("spinor components on different grids".into()));
        }
        Ok(Self { up, down })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.up.spec
    }

    pub fn norm_sq(&self) -> f64 {
        self.up.norm_sq() + self.down.norm_sq()
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sq().sqrt();
        if n > 0.0 {
            for v in self.up.values.iter_mut().chain(self.down.values.iter_mut()) {
                *v /= n;
            }
        }
    }

    /// Spin-summed density per node.
    pub fn density(&self) -> Vec<f64> {
        self.up
            .values
            .iter()
            .zip(&self.down.values)
            .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
            .collect()
    }
}

const NORM_TOL: f64 = 1e-8;
/// Fraction of each axis treated as the edge guard band.
const GUARD_FRACTION: f64 = 0.05;
pub const GUARD_MASS_LIMIT: f64 = 1e-6;

fn kinetic_half_k_sq(spec: &GridSpec) -> Vec<f64> {
    match spec.dim() {
        1 => spec.wavenumbers(0).iter().map(|k| 0.5 * k * k).collect(),
        _ => {
            let k0 = spec.wavenumbers(0);
            let k1 = spec.wavenumbers(1);
            let n1 = spec.points(1);
            (0..spec.total_points())
                .map(|idx| 0.5 * (k0[idx / n1].powi(2) + k1[idx % n1].powi(2)))
                .collect()
        }
    }
}

fn phase_factors(values: &[f64], dt: f64) -> Vec<C64> {
    values.iter().map(|&v| C64::new(0.0, -v * dt).exp()).collect()
}

fn apply_phase(grid: &mut ComplexGrid, phase: &[C64]) {
    for (v, p) in grid.values.iter_mut().zip(phase) {
        *v *= p;
    }
}

fn kinetic_step(grid: &mut ComplexGrid, phase: &[C64]) {
    spectral_transform_mut(grid, Direction::Forward);
    apply_phase(grid, phase);
    spectral_transform_mut(grid, Direction::Inverse);
}

/// Probability mass inside the guard band near the domain edge.
pub fn guard_band_mass(grid: &ComplexGrid) -> f64 {
    let spec = &grid.spec;
    let cell = spec.cell_volume();
    let in_guard = |axis: usize, i: usize| -> bool {
        let n = spec.points(axis);
        let g = ((n as f64 * GUARD_FRACTION).ceil() as usize).max(1);
        i < g || i >= n - g
    };
    let mut mass = 0.0;
    match spec.dim() {
        1 => {
            for (i, v) in grid.values.iter().enumerate() {
                if in_guard(0, i) {
                    mass += v.norm_sqr();
                }
            }
        }
        _ => {
            let n1 = spec.points(1);
            for (idx, v) in grid.values.iter().enumerate() {
                if in_guard(0, idx / n1) || in_guard(1, idx % n1) {
                    mass += v.norm_sqr();
                }
            }
        }
    }
    mass * cell
}

/// Kinetic + potential energy expectation of a normalized state.
pub fn energy_expectation(psi: &ComplexGrid, potential: &Potential) -> Result<f64> {
    let v = potential.sample(&psi.spec)?;
    let cell = psi.spec.cell_volume();
    let hat = crate::grids::spectral_transform(psi, Direction::Forward)?;
    let half_k_sq = kinetic_half_k_sq(&psi.spec);
    let t: f64 = hat
        .values
        .iter()
        .zip(&half_k_sq)
        .map(|(a, &hk)| hk * a.norm_sqr())
        .sum::<f64>()
        * cell;
    let u: f64 = psi.values.iter().zip(&v).map(|(a, &vv)| vv * a.norm_sqr()).sum::<f64>() * cell;
    Ok(t + u)
}

/// Default time step: keeps the phase advance per step below `max_phase`
/// (0.1 rad by default) for the occupied part of the spectrum plus the
/// potential.
pub fn suggest_dt(psi: &ComplexGrid, potential: &Potential, max_phase: f64) -> Result<f64> {
    let hat = crate::grids::spectral_transform(psi, Direction::Forward)?;
    let half_k_sq = kinetic_half_k_sq(&psi.spec);
    let peak = hat.values.iter().map(|v| v.norm_sqr()).fold(0.0f64, f64::max);
    let mut kin: f64 = 0.0;
    for (v, &hk) in hat.values.iter().zip(&half_k_sq) {
        if v.norm_sqr() > 1e-12 * peak {
            kin = kin.max(hk);
        }
    }
    let vmax = potential
        .sample(&psi.spec)?
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let rate = (kin + vmax).max(1e-12);
    Ok(max_phase / rate)
}

/// A snapshot record of an evolution run, consumed by guidance and
/// equilibrium. Slices are stored every `store_every` steps (plus the
/// initial and final state).
#[derive(Debug, Clone)]
pub struct WaveHistory {
    pub times: Vec<f64>,
    pub slices: Vec<ComplexGrid>,
    pub max_guard_mass: f64,
    pub max_norm_drift: f64,
}

impl WaveHistory {
    pub fn final_state(&self) -> &ComplexGrid {
        self.slices.last().expect("history has at least the initial slice")
    }

    pub fn domain_escape(&self) -> bool {
        self.max_guard_mass > GUARD_MASS_LIMIT
    }
}

fn check_norm(norm0: f64, grid_norm: f64, step: usize) -> Result<f64> {
    let drift = (grid_norm - norm0).abs() / norm0;
    if drift > NORM_TOL {
        return Err(Error::NumericalQuality(format!(
            "norm drift {drift:.3e} beyond {NORM_TOL:.0e} at step {step} (under-resolved run)"
        )));
    }
    Ok(drift)
}

/// Evolve `psi` under the Schroedinger equation for `steps` steps of `dt`,
/// recording slices every `store_every` steps.
pub fn evolve_schrodinger_history(
    psi: &ComplexGrid,
    potential: &Potential,
    dt: f64,
    steps: usize,
    store_every: usize,
    t0: f64,
) -> Result<WaveHistory> {
    if dt == 0.0 || !dt.is_finite() {
        return Err(Error::InvalidInput("dt must be nonzero and finite".into()));
    }
    psi.check_finite()?;
    let norm0 = psi.norm_sq();
    if (norm0 - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidInput(format!("state not normalized: |psi|^2 = {norm0}")));
    }
    let store_every = store_every.max(1);
    let v = potential.sample(&psi.spec)?;
    let half_v_phase = phase_factors(&v, 0.5 * dt);
    let kin_phase = phase_factors(&kinetic_half_k_sq(&psi.spec), dt);

    let mut state = psi.clone();
    let mut hist = WaveHistory {
        times: vec![t0],
        slices: vec![state.clone()],
        max_guard_mass: guard_band_mass(&state),
        max_norm_drift: 0.0,
    };
    for step in 1..=steps {
        apply_phase(&mut state, &half_v_phase);
        kinetic_step(&mut state, &kin_phase);
        apply_phase(&mut state, &half_v_phase);
        let drift = check_norm(norm0, state.norm_sq(), step)?;
        hist.max_norm_drift = hist.max_norm_drift.max(drift);
        if step % store_every == 0 || step == steps {
            hist.max_guard_mass = hist.max_guard_mass.max(guard_band_mass(&state));
            hist.times.push(t0 + step as f64 * dt);
            hist.slices.push(state.clone());
        }
    }
    Ok(hist)
}

pub fn evolve_schrodinger(
    psi: &ComplexGrid,
    potential: &Potential,
    dt: f64,
    steps: usize,
) -> Result<ComplexGrid> {
    let hist = evolve_schrodinger_history(psi, potential, dt, steps, steps.max(1), 0.0)?;
    Ok(hist.final_state().clone())
}

/// Snapshot record of a Pauli evolution run.
#[derive(Debug, Clone)]
pub struct SpinorHistory {
    pub times: Vec<f64>,
    pub slices: Vec<SpinorGrid>,
    pub max_guard_mass: f64,
    pub max_norm_drift: f64,
}

impl SpinorHistory {
    pub fn final_state(&self) -> &SpinorGrid {
        self.slices.last().expect("history has at least the initial slice")
    }

    pub fn domain_escape(&self) -> bool {
        self.max_guard_mass > GUARD_MASS_LIMIT
    }
}

/// Evolve a spinor under H = -1/2 nabla^2 + V - mu sigma_z B_z(z), with the
/// magnetic term active only inside the coupling's time window.
pub fn evolve_pauli_history(
    psi: &SpinorGrid,
    potential: &Potential,
    coupling: &PauliCoupling,
    dt: f64,
    steps: usize,
    store_every: usize,
    t0: f64,
) -> Result<SpinorHistory> {
    if dt == 0.0 || !dt.is_finite() {
        return Err(Error::InvalidInput("dt must be nonzero and finite".into()));
    }
    coupling.validate()?;
    psi.up.check_finite()?;
    psi.down.check_finite()?;
    let norm0 = psi.norm_sq();
    if (norm0 - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidInput(format!("spinor not normalized: {norm0}")));
    }
    let store_every = store_every.max(1);
    let spec = psi.spec();
    let v = potential.sample(spec)?;
    let mag_up = coupling.magnetic_term(spec, 1.0);
    let mag_down = coupling.magnetic_term(spec, -1.0);
    let v_up: Vec<f64> = v.iter().zip(&mag_up).map(|(a, b)| a + b).collect();
    let v_down: Vec<f64> = v.iter().zip(&mag_down).map(|(a, b)| a + b).collect();

    let half_phase_plain = phase_factors(&v, 0.5 * dt);
    let half_phase_up = phase_factors(&v_up, 0.5 * dt);
    let half_phase_down = phase_factors(&v_down, 0.5 * dt);
    let kin_phase = phase_factors(&kinetic_half_k_sq(spec), dt);

    let mut state = psi.clone();
    let mut hist = SpinorHistory {
        times: vec![t0],
        slices: vec![state.clone()],
        max_guard_mass: guard_band_mass(&state.up).max(guard_band_mass(&state.down)),
        max_norm_drift: 0.0,
    };
    for step in 1..=steps {
        let t_mid = t0 + (step as f64 - 0.5) * dt;
        let active = coupling.mu != 0.0 && t_mid >= coupling.t_on && t_mid <= coupling.t_off;
        let (ph_up, ph_down) = if active {
            (&half_phase_up, &half_phase_down)
        } else {
            (&half_phase_plain, &half_phase_plain)
        };
        apply_phase(&mut state.up, ph_up);
        apply_phase(&mut state.down, ph_down);
        kinetic_step(&mut state.up, &kin_phase);
        kinetic_step(&mut state.down, &kin_phase);
        apply_phase(&mut state.up, ph_up);
        apply_phase(&mut state.down, ph_down);
        let drift = check_norm(norm0, state.norm_sq(), step)?;
        hist.max_norm_drift = hist.max_norm_drift.max(drift);
        if step % store_every == 0 || step == steps {
            hist.max_guard_mass = hist
                .max_guard_mass
                .max(guard_band_mass(&state.up))
                .max(guard_band_mass(&state.down));
            hist.times.push(t0 + step as f64 * dt);
            hist.slices.push(state.clone());
        }
    }
    Ok(hist)
}

pub fn evolve_pauli(
    psi: &SpinorGrid,
    potential: &Potential,
    coupling: &PauliCoupling,
    dt: f64,
    steps: usize,
) -> Result<SpinorGrid> {
    let hist = evolve_pauli_history(psi, potential, coupling, dt, steps, steps.max(1), 0.0)?;
    Ok(hist.final_state().clone())
}

/// Normalized Gaussian packet exp(ikx) * exp(-(x-c)^2 / 4 sigma^2) in 1D.
pub fn gaussian_packet_1d(spec: &GridSpec, center: f64, sigma: f64, momentum: f64) -> Result<ComplexGrid> {
    let mut g = ComplexGrid::from_fn(spec.clone(), |x| {
        let dx = x[0] - center;
        let env = (-dx * dx / (4.0 * sigma * sigma)).exp();
        C64::new(0.0, momentum * x[0]).exp() * env
    })?;
    g.normalize();
    Ok(g)
}
