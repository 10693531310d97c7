//! Velocity fields derived from wave functions, the spin vector carried
//! along a trajectory, and adaptive trajectory integration.
//!
//! The guiding velocity is Im(psi* grad psi) / (|psi|^2 + eps) evaluated by
//! interpolation at the particle position; for spinors both numerator and
//! denominator are spin-summed. Away from nodes the regularized form equals
//! the phase-gradient form of the guidance law.

use crate::error::{Error, Result};
use crate::evolution::{SpinorGrid, SpinorHistory, WaveHistory};
use crate::grids::{gradient, interpolate, ComplexGrid, GridSpec};

/// Relative node-regularization level: eps = EPS_REL * mean density.
pub const EPS_REL: f64 = 1e-12;
/// Local density below this fraction of the mean flags the trajectory.
const DENSITY_FLAG_REL: f64 = 1e-9;

/// One wave-function slice with its precomputed gradient, ready for
/// velocity evaluation at arbitrary positions.
#[derive(Debug, Clone)]
pub struct SliceVelocity {
    psi: ComplexGrid,
    grad: Vec<ComplexGrid>,
    eps: f64,
    mean_density: f64,
}

impl SliceVelocity {
    pub fn new(psi: &ComplexGrid) -> Result<Self> {
        let grad = gradient(psi)?;
        let mean_density =
            psi.values.iter().map(|v| v.norm_sqr()).sum::<f64>() / psi.values.len() as f64;
        Ok(Self { psi: psi.clone(), grad, eps: EPS_REL * mean_density, mean_density })
    }

    /// Use eps = 0: velocity is the bare current / density ratio and exactly
    /// zero where the density vanishes.
    pub fn with_zero_eps(mut self) -> Self {
        self.eps = 0.0;
        self
    }

    pub fn spec(&self) -> &GridSpec {
        &self.psi.spec
    }

    /// Velocity and local density at a (wrapped) position.
    pub fn velocity(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let xw = self.psi.spec.wrap(x);
        let psi = interpolate(&self.psi, &xw);
        let density = psi.norm_sqr();
        let denom = density + self.eps;
        let v = self
            .grad
            .iter()
            .map(|g| {
                if denom == 0.0 {
                    0.0
                } else {
                    (psi.conj() * interpolate(g, &xw)).im / denom
                }
            })
            .collect();
        (v, density)
    }

    pub fn mean_density(&self) -> f64 {
        self.mean_density
    }
}

/// Scalar guidance velocity at one position (single slice convenience).
pub fn velocity_scalar(psi: &ComplexGrid, x: &[f64]) -> Result<Vec<f64>> {
    Ok(SliceVelocity::new(psi)?.velocity(x).0)
}

/// Spin-summed slice for Pauli states.
#[derive(Debug, Clone)]
pub struct SpinorSliceVelocity {
    up: ComplexGrid,
    down: ComplexGrid,
    grad_up: Vec<ComplexGrid>,
    grad_down: Vec<ComplexGrid>,
    eps: f64,
}

impl SpinorSliceVelocity {
    pub fn new(psi: &SpinorGrid) -> Result<Self> {
        let grad_up = gradient(&psi.up)?;
        let grad_down = gradient(&psi.down)?;
        let n = psi.up.values.len() as f64;
        let mean_density = psi.density().iter().sum::<f64>() / n;
        Ok(Self {
            up: psi.up.clone(),
            down: psi.down.clone(),
            grad_up,
            grad_down,
            eps: EPS_REL * mean_density,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.up.spec
    }

    pub fn velocity(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let xw = self.up.spec.wrap(x);
        let a = interpolate(&self.up, &xw);
        let b = interpolate(&self.down, &xw);
        let density = a.norm_sqr() + b.norm_sqr();
        let denom = density + self.eps;
        let v = (0..self.up.spec.dim())
            .map(|axis| {
                if denom == 0.0 {
                    0.0
                } else {
                    let num = (a.conj() * interpolate(&self.grad_up[axis], &xw)).im
                        + (b.conj() * interpolate(&self.grad_down[axis], &xw)).im;
                    num / denom
                }
            })
            .collect();
        (v, density)
    }
}

/// Spinor guidance velocity at one position (single slice convenience).
pub fn velocity_spinor(psi: &SpinorGrid, x: &[f64]) -> Result<Vec<f64>> {
    Ok(SpinorSliceVelocity::new(psi)?.velocity(x).0)
}

/// Spin vector (units hbar/2 = 1/2) at a position, or None where the
/// spin-summed density is below the regularization floor.
pub fn spin_vector(psi: &SpinorGrid, x: &[f64]) -> Result<Option<[f64; 3]>> {
    psi.up.check_finite()?;
    psi.down.check_finite()?;
    let xw = psi.spec().wrap(x);
    let a = interpolate(&psi.up, &xw);
    let b = interpolate(&psi.down, &xw);
    let rho = a.norm_sqr() + b.norm_sqr();
    let n = psi.up.values.len() as f64;
    let mean_density = psi.density().iter().sum::<f64>() / n;
    if rho <= EPS_REL * mean_density {
        return Ok(None);
    }
    let cross = a.conj() * b;
    Ok(Some([cross.re / rho, cross.im / rho, 0.5 * (a.norm_sqr() - b.norm_sqr()) / rho]))
}

/// Time-dependent velocity field built from stored slices; velocities from
/// the two bracketing slices are interpolated linearly in time.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;
    fn time_range(&self) -> (f64, f64);
    /// Velocity and local density at (x, t).
    fn velocity(&self, x: &[f64], t: f64) -> (Vec<f64>, f64);
    /// Mean density of the nearest slice, used for flag thresholds.
    fn mean_density(&self) -> f64;
}

fn bracket(times: &[f64], t: f64) -> (usize, usize, f64) {
    let n = times.len();
    if t <= times[0] {
        return (0, 0, 0.0);
    }
    if t >= times[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let j = times.partition_point(|&u| u <= t).min(n - 1);
    let (i0, i1) = (j - 1, j);
    let w = (t - times[i0]) / (times[i1] - times[i0]);
    (i0, i1, w)
}

/// Velocity field over a scalar evolution history.
pub struct HistoryField {
    times: Vec<f64>,
    slices: Vec<SliceVelocity>,
    /// Multiplier on the velocity; 1.0 for physics, != 1.0 for negative
    /// controls.
    pub scale: f64,
}

impl HistoryField {
    pub fn new(history: &WaveHistory) -> Result<Self> {
        let slices = history
            .slices
            .iter()
            .map(SliceVelocity::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { times: history.times.clone(), slices, scale: 1.0 })
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }
}

impl VelocityField for HistoryField {
    fn dim(&self) -> usize {
        self.slices[0].spec().dim()
    }

    fn time_range(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    fn velocity(&self, x: &[f64], t: f64) -> (Vec<f64>, f64) {
        let (i0, i1, w) = bracket(&self.times, t);
        let (v0, d0) = self.slices[i0].velocity(x);
        if i0 == i1 {
            return (v0.iter().map(|v| v * self.scale).collect(), d0);
        }
        let (v1, d1) = self.slices[i1].velocity(x);
        let v = v0
            .iter()
            .zip(&v1)
            .map(|(a, b)| self.scale * ((1.0 - w) * a + w * b))
            .collect();
        (v, (1.0 - w) * d0 + w * d1)
    }

    fn mean_density(&self) -> f64 {
        self.slices[0].mean_density()
    }
}

/// Velocity field over a spinor evolution history.
pub struct SpinorHistoryField {
    times: Vec<f64>,
    slices: Vec<SpinorSliceVelocity>,
    mean_density: f64,
}

impl SpinorHistoryField {
    pub fn new(history: &SpinorHistory) -> Result<Self> {
        let slices = history
            .slices
            .iter()
            .map(SpinorSliceVelocity::new)
            .collect::<Result<Vec<_>>>()?;
        let s0 = &history.slices[0];
        let mean_density = s0.density().iter().sum::<f64>() / s0.up.values.len() as f64;
        Ok(Self { times: history.times.clone(), slices, mean_density })
    }
}

impl VelocityField for SpinorHistoryField {
    fn dim(&self) -> usize {
        self.slices[0].spec().dim()
    }

    fn time_range(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    fn velocity(&self, x: &[f64], t: f64) -> (Vec<f64>, f64) {
        let (i0, i1, w) = bracket(&self.times, t);
        let (v0, d0) = self.slices[i0].velocity(x);
        if i0 == i1 {
            return (v0, d0);
        }
        let (v1, d1) = self.slices[i1].velocity(x);
        let v = v0.iter().zip(&v1).map(|(a, b)| (1.0 - w) * a + w * b).collect();
        (v, (1.0 - w) * d0 + w * d1)
    }

    fn mean_density(&self) -> f64 {
        self.mean_density
    }
}

#[derive(Debug, Clone, Default)]
pub struct IntegratorStats {
    pub steps: usize,
    pub rejections: usize,
    pub min_density: f64,
}

/// A single integrated trajectory. Positions are not wrapped; scenarios keep
/// packets away from the periodic seam and monitor the guard band.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub stats: IntegratorStats,
    pub flagged: bool,
    pub flag_reason: Option<String>,
}

impl Trajectory {
    pub fn final_position(&self) -> &[f64] {
        self.positions.last().expect("trajectory has at least the initial point")
    }
}

// Dormand-Prince 5(4) coefficients.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate dx/dt = v(x, t) from t0 to t1 with an embedded adaptive
/// Runge-Kutta 5(4) pair, recording the state at every `record_times` entry
/// (which must be increasing and within [t0, t1]).
pub fn integrate_trajectory(
    field: &dyn VelocityField,
    x0: &[f64],
    t0: f64,
    t1: f64,
    tolerance: f64,
    record_times: &[f64],
) -> Result<Trajectory> {
    if !(t1 > t0) {
        return Err(Error::InvalidInput("need t1 > t0".into()));
    }
    let dim = field.dim();
    if x0.len() != dim {
        return Err(Error::InvalidInput("position dimension mismatch".into()));
    }
    let density_floor = DENSITY_FLAG_REL * field.mean_density();
    let mut traj = Trajectory {
        times: vec![t0],
        positions: vec![x0.to_vec()],
        stats: IntegratorStats { steps: 0, rejections: 0, min_density: f64::INFINITY },
        flagged: false,
        flag_reason: None,
    };
    let mut x = x0.to_vec();
    let mut t = t0;
    let mut h = ((t1 - t0) / 100.0).min(0.1);
    let h_min = (t1 - t0) * 1e-12;
    let mut record_iter = record_times.iter().copied().peekable();
    // skip records at or before t0 (already recorded)
    while record_iter.peek().is_some_and(|&rt| rt <= t0) {
        record_iter.next();
    }

    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    while t < t1 {
        let next_stop = record_iter.peek().copied().unwrap_or(t1).min(t1);
        if h > next_stop - t {
            h = next_stop - t;
        }
        let (v0, d0) = field.velocity(&x, t);
        traj.stats.min_density = traj.stats.min_density.min(d0);
        k[0] = v0;
        for s in 0..6 {
            let mut xs = x.clone();
            for (j, kj) in k.iter().enumerate().take(s + 1) {
                for d in 0..dim {
                    xs[d] += h * A[s][j] * kj[d];
                }
            }
            let (vs, ds) = field.velocity(&xs, t + C[s] * h);
            traj.stats.min_density = traj.stats.min_density.min(ds);
            k[s + 1] = vs;
        }
        let mut err: f64 = 0.0;
        let mut x5 = x.clone();
        for d in 0..dim {
            let mut dx5 = 0.0;
            let mut dx4 = 0.0;
            for (j, kj) in k.iter().enumerate() {
                dx5 += B5[j] * kj[d];
                dx4 += B4[j] * kj[d];
            }
            x5[d] += h * dx5;
            let scale = tolerance * (1.0 + x[d].abs());
            err = err.max((h * (dx5 - dx4)).abs() / scale);
        }
        if err <= 1.0 {
            t += h;
            x = x5;
            traj.stats.steps += 1;
            if record_iter.peek().is_some_and(|&rt| (t - rt).abs() < 1e-12) {
                record_iter.next();
                traj.times.push(t);
                traj.positions.push(x.clone());
            }
        } else {
            traj.stats.rejections += 1;
        }
        let grow = if err > 0.0 { 0.9 * err.powf(-0.2) } else { 5.0 };
        h *= grow.clamp(0.2, 5.0);
        if h < h_min {
            traj.flagged = true;
            traj.flag_reason = Some(format!("step-size underflow at t = {t:.6e} (trapped near a node)"));
            break;
        }
    }
    if traj.stats.min_density < density_floor {
        traj.flagged = true;
        traj.flag_reason
            .get_or_insert_with(|| "local density below regularization floor".into());
    }
    if !traj.flagged && (traj.times.last().copied().unwrap_or(t0) - t1).abs() > 1e-9 {
        // final state (t1 not among record_times)
        traj.times.push(t);
        traj.positions.push(x);
    }
    Ok(traj)
}

/// Trace of the spin vector along a trajectory.
#[derive(Debug, Clone)]
pub struct SpinVectorTrace {
    pub times: Vec<f64>,
    pub spins: Vec<[f64; 3]>,
    pub indeterminate: Vec<bool>,
}

/// Evaluate the spin vector along a trajectory using the spinor history.
pub fn spin_vector_trace(history: &SpinorHistory, traj: &Trajectory) -> Result<SpinVectorTrace> {
    let mut trace = SpinVectorTrace { times: vec![], spins: vec![], indeterminate: vec![] };
    for (t, x) in traj.times.iter().zip(&traj.positions) {
        let (i0, i1, w) = bracket(&history.times, *t);
        let idx = if w < 0.5 { i0 } else { i1 };
        match spin_vector(&history.slices[idx], x)? {
            Some(s) => {
                trace.spins.push(s);
                trace.indeterminate.push(false);
            }
            None => {
                trace.spins.push([0.0; 3]);
                trace.indeterminate.push(true);
            }
        }
        trace.times.push(*t);
    }
    Ok(trace)
}

/// Phase S of the wave function by 1D unwrapping, for cross-checking the
/// current-based velocity. Test-support code, independent of the
/// interpolation path.
pub fn unwrapped_phase_1d(psi: &ComplexGrid) -> Vec<f64> {
    let mut out = Vec::with_capacity(psi.values.len());
    let mut prev = psi.values[0].arg();
    let mut offset = 0.0;
    for v in &psi.values {
        let raw = v.arg();
        let mut d = raw - prev;
        while d > std::f64::consts::PI {
            d -= 2.0 * std::f64::consts::PI;
        }
        while d < -std::f64::consts::PI {
            d += 2.0 * std::f64::consts::PI;
        }
        offset += d;
        prev = raw;
        out.push(psi.values[0].arg() + offset);
    }
    out
}
