//! Quantum-equilibrium statistics: sampling from |psi|^2, equivariance
//! verification by transporting an equilibrium ensemble along trajectories,
//! and the discrete continuity-equation residual.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{evolve_schrodinger_history, Potential, WaveHistory};
use crate::grids::{gradient, ComplexGrid};
use crate::guidance::{integrate_trajectory, HistoryField, VelocityField};
use crate::stats::{chi2_test, ks_test};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    InverseCdf,
    Rejection,
}

/// How many equilibrium samples to draw and with which seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub count: usize,
    pub seed: u64,
    pub sampler: Sampler,
}

impl EnsembleSpec {
    pub fn new_1d(count: usize, seed: u64) -> Self {
        Self { count, seed, sampler: Sampler::InverseCdf }
    }

    pub fn new_2d(count: usize, seed: u64) -> Self {
        Self { count, seed, sampler: Sampler::Rejection }
    }
}

const MIN_STAT_COUNT: usize = 100;

/// Piecewise-quadratic CDF of a piecewise-linear density on a periodic 1D
/// grid (trapezoid integration between nodes, wrap segment included).
pub struct Cdf1D {
    xs: Vec<f64>,
    rho: Vec<f64>,
    cum: Vec<f64>,
}

impl Cdf1D {
    pub fn from_grid(g: &ComplexGrid) -> Self {
        let spec = &g.spec;
        let n = spec.points(0);
        let dx = spec.spacing(0);
        let mut xs: Vec<f64> = (0..n).map(|i| spec.coord(0, i)).collect();
        xs.push(0.5 * spec.extent(0));
        let mut rho: Vec<f64> = g.values.iter().map(|v| v.norm_sqr()).collect();
        rho.push(rho[0]); // periodic wrap
        let mut cum = vec![0.0; n + 1];
        for i in 0..n {
            cum[i + 1] = cum[i] + 0.5 * (rho[i] + rho[i + 1]) * dx;
        }
        let total = cum[n];
        for c in &mut cum {
            *c /= total;
        }
        for r in &mut rho {
            *r /= total;
        }
        Self { xs, rho, cum }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        let n = self.xs.len() - 1;
        if x >= self.xs[n] {
            return 1.0;
        }
        let i = self.xs.partition_point(|&u| u <= x) - 1;
        let dx = self.xs[i + 1] - self.xs[i];
        let s = x - self.xs[i];
        let slope = (self.rho[i + 1] - self.rho[i]) / dx;
        self.cum[i] + self.rho[i] * s + 0.5 * slope * s * s
    }

    /// Inverse by bisection on the monotone quadratic within one cell.
    pub fn invert(&self, u: f64) -> f64 {
        let n = self.xs.len() - 1;
        let i = self.cum.partition_point(|&c| c <= u).clamp(1, n) - 1;
        let mut lo = self.xs[i];
        let mut hi = self.xs[i + 1];
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Draw i.i.d. positions from the normalized |psi|^2 density.
pub fn sample_density(psi: &ComplexGrid, spec: &EnsembleSpec) -> Result<Vec<Vec<f64>>> {
    psi.check_finite()?;
    let norm = psi.norm_sq();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!("state not normalized: |psi|^2 = {norm}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match (psi.spec.dim(), spec.sampler) {
        (1, Sampler::InverseCdf) => {
            let cdf = Cdf1D::from_grid(psi);
            Ok((0..spec.count).map(|_| vec![cdf.invert(rng.gen::<f64>())]).collect())
        }
        (1, Sampler::Rejection) | (2, Sampler::Rejection) => sample_rejection(psi, spec.count, &mut rng),
        (d, s) => Err(Error::InvalidInput(format!("sampler {s:?} unsupported for dim {d}"))),
    }
}

fn sample_rejection(psi: &ComplexGrid, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let spec = &psi.spec;
    let dim = spec.dim();
    let peak = psi.values.iter().map(|v| v.norm_sqr()).fold(0.0f64, f64::max);
    // headroom over the node max; cubic interpolation can overshoot slightly
    let envelope = 1.2 * peak;
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > count.saturating_mul(100_000) {
            return Err(Error::NumericalQuality("rejection sampler acceptance too low".into()));
        }
        let x: Vec<f64> = (0..dim)
            .map(|a| (rng.gen::<f64>() - 0.5) * spec.extent(a))
            .collect();
        let rho = crate::grids::interpolate(psi, &x).norm_sqr();
        if rho > envelope {
            return Err(Error::NumericalQuality(
                "density exceeds rejection envelope (under-resolved grid)".into(),
            ));
        }
        if rng.gen::<f64>() * envelope < rho {
            out.push(x);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct TimeTestResult {
    pub time: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

/// Result of transporting an equilibrium ensemble and re-testing it against
/// |psi(t)|^2 at each probe time.
#[derive(Debug, Clone, Serialize)]
pub struct EquivarianceReport {
    pub times: Vec<TimeTestResult>,
    pub significance: f64,
    pub per_time_significance: f64,
    pub ensemble_count: usize,
    pub flagged_count: usize,
    pub inconclusive: bool,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct EquivarianceOptions {
    pub dt: f64,
    pub store_every: usize,
    pub tolerance: f64,
    pub significance: f64,
    /// Multiplier on the guiding velocity; 1.0 is physics, anything else is
    /// a negative control.
    pub velocity_scale: f64,
}

impl Default for EquivarianceOptions {
    fn default() -> Self {
        Self { dt: 1e-3, store_every: 10, tolerance: 1e-8, significance: 0.01, velocity_scale: 1.0 }
    }
}

/// Sample |psi0|^2, transport each sample along the guidance flow, and
/// KS-test the transported ensemble against |psi(t)|^2 at each probe time
/// (1D; Bonferroni-corrected significance).
pub fn check_equivariance(
    psi0: &ComplexGrid,
    potential: &Potential,
    spec: &EnsembleSpec,
    times: &[f64],
    opts: &EquivarianceOptions,
) -> Result<EquivarianceReport> {
    if spec.count < MIN_STAT_COUNT {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_STAT_COUNT} samples for a statistical test"
        )));
    }
    if times.is_empty() {
        return Err(Error::InvalidInput("no probe times given".into()));
    }
    let mut sorted_times = times.to_vec();
    sorted_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let t_max = *sorted_times.last().unwrap();

    let history = if t_max > 0.0 {
        let steps = (t_max / opts.dt).ceil() as usize;
        evolve_schrodinger_history(psi0, potential, opts.dt, steps, opts.store_every, 0.0)?
    } else {
        WaveHistory {
            times: vec![0.0],
            slices: vec![psi0.clone()],
            max_guard_mass: crate::evolution::guard_band_mass(psi0),
            max_norm_drift: 0.0,
        }
    };
    if history.domain_escape() {
        return Err(Error::NumericalQuality(format!(
            "guard-band mass {:.3e} exceeds limit; enlarge the domain",
            history.max_guard_mass
        )));
    }
    check_equivariance_on_history(&history, spec, &sorted_times, opts)
}

pub fn check_equivariance_on_history(
    history: &WaveHistory,
    spec: &EnsembleSpec,
    sorted_times: &[f64],
    opts: &EquivarianceOptions,
) -> Result<EquivarianceReport> {
    let slice_for_time = |t: f64| -> Result<&ComplexGrid> {
        let idx = history
            .times
            .iter()
            .position(|&u| (u - t).abs() < 0.51 * opts.dt * opts.store_every as f64)
            .ok_or_else(|| Error::InvalidInput(format!("no stored slice near t = {t}")))?;
        Ok(&history.slices[idx])
    };

    let samples = sample_density(&history.slices[0], spec)?;
    let t0 = history.times[0];
    let t_max = *sorted_times.last().unwrap();

    let positive_times: Vec<f64> = sorted_times.iter().copied().filter(|&t| t > t0).collect();
    let (per_time_positions, flagged_count) = if positive_times.is_empty() {
        (Vec::new(), 0usize)
    } else {
        let field = HistoryField::new(history)?.scaled(opts.velocity_scale);
        transport_ensemble(&field, &samples, t0, t_max, opts.tolerance, &positive_times)?
    };

    let per_time_significance = opts.significance / sorted_times.len() as f64;
    let mut results = Vec::new();
    let mut all_pass = true;
    for (i, &t) in sorted_times.iter().enumerate() {
        let slice = slice_for_time(t)?;
        let positions: Vec<f64> = if t <= t0 {
            samples.iter().map(|p| p[0]).collect()
        } else {
            let j = positive_times.iter().position(|&u| u == t).unwrap();
            per_time_positions[j].clone()
        };
        let cdf = Cdf1D::from_grid(slice);
        let r = ks_test(positions, |x| cdf.eval(x));
        let pass = r.p_value >= per_time_significance;
        all_pass &= pass;
        results.push(TimeTestResult { time: t, statistic: r.statistic, p_value: r.p_value, pass });
        let _ = i;
    }

    let inconclusive = flagged_count as f64 > 0.01 * spec.count as f64;
    Ok(EquivarianceReport {
        times: results,
        significance: opts.significance,
        per_time_significance,
        ensemble_count: spec.count,
        flagged_count,
        inconclusive,
        pass: all_pass && !inconclusive,
    })
}

/// Integrate every sample through the flow, collecting 1D positions at each
/// probe time. Flagged trajectories are excluded from every probe.
fn transport_ensemble(
    field: &dyn VelocityField,
    samples: &[Vec<f64>],
    t0: f64,
    t1: f64,
    tolerance: f64,
    probe_times: &[f64],
) -> Result<(Vec<Vec<f64>>, usize)> {
    let trajs: Vec<_> = samples
        .par_iter()
        .map(|x0| integrate_trajectory(field, x0, t0, t1, tolerance, probe_times))
        .collect::<Result<Vec<_>>>()?;
    let flagged = trajs.iter().filter(|t| t.flagged).count();
    let mut per_time = vec![Vec::with_capacity(samples.len()); probe_times.len()];
    for traj in trajs.iter().filter(|t| !t.flagged) {
        for (j, &pt) in probe_times.iter().enumerate() {
            let idx = traj
                .times
                .iter()
                .position(|&u| (u - pt).abs() < 1e-9)
                .expect("probe time recorded on unflagged trajectory");
            per_time[j].push(traj.positions[idx][0]);
        }
    }
    Ok((per_time, flagged))
}

/// 2D equivariance comparison by binned chi-square at a single time.
pub fn chi2_compare_2d(positions: &[Vec<f64>], psi: &ComplexGrid, bins: [usize; 2]) -> crate::stats::Chi2Result {
    let spec = &psi.spec;
    let total = positions.len() as f64;
    let mut observed = vec![0.0; bins[0] * bins[1]];
    // samples binned by nearest grid node so the observed partition is the
    // same union of node-centered cells the expected mass is summed over
    let node_bin = |axis: usize, x: f64, b: usize| -> usize {
        let n = spec.points(axis);
        let idx = ((x + 0.5 * spec.extent(axis)) / spec.spacing(axis)).round() as i64;
        let idx = idx.rem_euclid(n as i64) as usize;
        (idx * b) / n
    };
    for p in positions {
        let w = spec.wrap(p);
        let i = node_bin(0, w[0], bins[0]);
        let j = node_bin(1, w[1], bins[1]);
        observed[i * bins[1] + j] += 1.0;
    }
    let mut expected = vec![0.0; bins[0] * bins[1]];
    let n1 = spec.points(1);
    let cell = spec.cell_volume();
    for (idx, v) in psi.values.iter().enumerate() {
        let gi = idx / n1;
        let gj = idx % n1;
        let i = (gi * bins[0]) / spec.points(0);
        let j = (gj * bins[1]) / n1;
        expected[i * bins[1] + j] += v.norm_sqr() * cell * total;
    }
    chi2_test(&observed, &expected)
}

/// Discrete residual of d|psi|^2/dt + div(Im(psi* grad psi)) per interior
/// stored time: (time, max-norm, l2-norm).
pub fn continuity_residual(history: &WaveHistory) -> Result<Vec<(f64, f64, f64)>> {
    if history.slices.len() < 3 {
        return Err(Error::InvalidInput("need >= 3 stored slices for time differencing".into()));
    }
    let spec = &history.slices[0].spec;
    let cell = spec.cell_volume();
    let mut out = Vec::new();
    for i in 1..history.slices.len() - 1 {
        let dt_c = history.times[i + 1] - history.times[i - 1];
        let rho_prev = history.slices[i - 1].density();
        let rho_next = history.slices[i + 1].density();
        // divergence of the current of the middle slice, spectrally
        let mid = &history.slices[i];
        let grad = gradient(mid)?;
        let mut div = vec![0.0; mid.values.len()];
        for g_axis in grad.iter().enumerate() {
            let (axis, gr) = g_axis;
            let current = ComplexGrid::new(
                spec.clone(),
                mid.values
                    .iter()
                    .zip(&gr.values)
                    .map(|(p, d)| num_complex::Complex64::new((p.conj() * d).im, 0.0))
                    .collect(),
            )?;
            let dj = gradient(&current)?;
            for (acc, v) in div.iter_mut().zip(&dj[axis].values) {
                *acc += v.re;
            }
        }
        let mut max_norm: f64 = 0.0;
        let mut l2 = 0.0;
        for ((rp, rn), dv) in rho_prev.iter().zip(&rho_next).zip(&div) {
            let r = (rn - rp) / dt_c + dv;
            max_norm = max_norm.max(r.abs());
            l2 += r * r;
        }
        out.push((history.times[i], max_norm, (l2 * cell).sqrt()));
    }
    Ok(out)
}
