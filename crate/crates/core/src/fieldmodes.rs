//! Bosonic field-configuration pilot-wave dynamics in a mode truncation.
//!
//! The transverse field is reduced to M real normal-mode amplitudes on an
//! N-site periodic lattice (one real amplitude per mode; the polarization
//! structure is dropped). The wave functional is a finite superposition of
//! Gaussian products over the mode amplitudes, optionally carrying a
//! discrete label f for the fermionic degrees of freedom. Free evolution is
//! closed-form per mode; label coupling (a constant Hermitian mixing matrix
//! plus a label-conditioned linear kick on one mode) is applied by Strang
//! splitting and stays inside the Gaussian family.

use nalgebra::{Complex, DMatrix};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::guidance::VelocityField;

/// Mode truncation of a 1D periodic scalar lattice field.
///
/// Mode index m = 0..M maps to lattice wavenumber k = m/2 + 1 with a cosine
/// profile for even m and a sine profile for odd m; frequencies follow the
/// lattice dispersion omega = 2 |sin(pi k / N)| times `scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeBasis {
    sites: usize,
    frequencies: Vec<f64>,
    /// profiles[m][j]: orthonormal mode function at site j.
    profiles: Vec<Vec<f64>>,
}

impl ModeBasis {
    pub fn new(sites: usize, modes: usize, scale: f64) -> Result<Self> {
        if sites < 4 || modes == 0 {
            return Err(Error::InvalidInput("need >= 4 sites and >= 1 mode".into()));
        }
        if modes >= sites - 1 {
            return Err(Error::InvalidInput(format!(
                "mode count {modes} too large for {sites} sites"
            )));
        }
        if !(scale > 0.0) {
            return Err(Error::InvalidInput("dispersion scale must be positive".into()));
        }
        let mut frequencies = Vec::with_capacity(modes);
        let mut profiles = Vec::with_capacity(modes);
        let norm = (2.0 / sites as f64).sqrt();
        for m in 0..modes {
            let k = (m / 2 + 1) as f64;
            let omega = 2.0 * scale * (PI * k / sites as f64).sin().abs();
            frequencies.push(omega);
            let profile: Vec<f64> = (0..sites)
                .map(|j| {
                    let arg = 2.0 * PI * k * j as f64 / sites as f64;
                    if m % 2 == 0 {
                        norm * arg.cos()
                    } else {
                        norm * arg.sin()
                    }
                })
                .collect();
            profiles.push(profile);
        }
        Ok(Self { sites, frequencies, profiles })
    }

    pub fn mode_count(&self) -> usize {
        self.frequencies.len()
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn frequency(&self, mode: usize) -> f64 {
        self.frequencies[mode]
    }

    /// Sampled field on the lattice for mode amplitudes `q`.
    pub fn field(&self, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.sites];
        for (amp, profile) in q.iter().zip(&self.profiles) {
            for (o, p) in out.iter_mut().zip(profile) {
                *o += amp * p;
            }
        }
        out
    }

    /// Project a sampled field back onto mode amplitudes.
    pub fn amplitudes(&self, field: &[f64]) -> Vec<f64> {
        self.profiles
            .iter()
            .map(|profile| profile.iter().zip(field).map(|(p, f)| p * f).sum())
            .collect()
    }
}

/// One-mode Gaussian factor exp(i A (q-c)^2 + i p (q-c)); normalization and
/// phase live in the term weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeGaussian {
    pub center: f64,
    pub momentum: f64,
    /// Quadratic phase coefficient; Im > 0 for normalizability. The ground
    /// state of a mode with frequency omega has A = i omega / 2.
    pub width_a: C64,
}

impl ModeGaussian {
    pub fn ground(omega: f64) -> Self {
        Self { center: 0.0, momentum: 0.0, width_a: C64::new(0.0, 0.5 * omega) }
    }

    pub fn coherent(omega: f64, center: f64, momentum: f64) -> Self {
        Self { center, momentum, width_a: C64::new(0.0, 0.5 * omega) }
    }

    #[inline]
    pub fn value(&self, q: f64) -> C64 {
        let d = q - self.center;
        (C64::i() * (self.width_a * d * d + self.momentum * d)).exp()
    }

    /// d/dq of `value`, divided by `value`.
    #[inline]
    pub fn log_derivative(&self, q: f64) -> C64 {
        let d = q - self.center;
        C64::i() * (2.0 * self.width_a * d + self.momentum)
    }

    /// Exact evolution under H = p^2/2 + omega^2 q^2 / 2 for time dt.
    /// Returns the accumulated complex phase factor for the term weight.
    fn evolve(&mut self, omega: f64, dt: f64) -> C64 {
        let (s, c) = (omega * dt).sin_cos();
        let (q0, p0, a0) = (self.center, self.momentum, self.width_a);
        self.center = q0 * c + p0 / omega * s;
        self.momentum = p0 * c - omega * q0 * s;
        let denom = omega * c + 2.0 * a0 * s;
        self.width_a = 0.5 * omega * (2.0 * a0 * c - omega * s) / denom;
        // u = cos + (2 A0 / omega) sin; phase = exp(i((i/2) Log u + S_cl))
        let u = denom / omega;
        let s_cl = 0.5 * (self.momentum * self.center - p0 * q0);
        (C64::i() * (C64::i() * 0.5 * u.ln() + s_cl)).exp()
    }

    /// Norm^2 of the bare factor.
    fn norm_sq(&self) -> f64 {
        (PI / (2.0 * self.width_a.im)).sqrt()
    }
}

/// Overlap integral of two one-mode Gaussians, conj(g1) * g2 integrated
/// over the mode amplitude.
fn mode_overlap(g1: &ModeGaussian, g2: &ModeGaussian) -> C64 {
    // exponent of conj(g1(q)) g2(q) as alpha q^2 + beta q + delta
    let a1c = -g1.width_a.conj() * C64::i(); // conj(i A1 (q-c1)^2) = -i conj(A1)(...)
    let a2 = g2.width_a * C64::i();
    let alpha = a1c + a2;
    let b1 = -C64::i() * g1.momentum;
    let b2 = C64::i() * g2.momentum;
    let beta = -2.0 * a1c * g1.center + b1 - 2.0 * a2 * g2.center + b2;
    let delta = a1c * g1.center * g1.center - b1 * g1.center + a2 * g2.center * g2.center
        - b2 * g2.center;
    // integral of exp(alpha q^2 + beta q + delta), Re alpha < 0
    ((-PI / alpha).sqrt()) * (delta - beta * beta / (4.0 * alpha)).exp()
}

/// One product term of the superposition: weight * prod_m g_m(q_m).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTerm {
    pub weight: C64,
    pub modes: Vec<ModeGaussian>,
}

impl GaussianTerm {
    pub fn value(&self, q: &[f64]) -> C64 {
        let mut v = self.weight;
        for (g, &qi) in self.modes.iter().zip(q) {
            v *= g.value(qi);
        }
        v
    }
}

fn terms_overlap(a: &[GaussianTerm], b: &[GaussianTerm]) -> C64 {
    let mut total = C64::new(0.0, 0.0);
    for ta in a {
        for tb in b {
            let mut ov = ta.weight.conj() * tb.weight;
            for (ga, gb) in ta.modes.iter().zip(&tb.modes) {
                ov *= mode_overlap(ga, gb);
            }
            total += ov;
        }
    }
    total
}

/// Label-sector coupling: H_c = mixing + kick_f * q_mode per label.
#[derive(Debug, Clone)]
pub struct LabelCoupling {
    /// Constant Hermitian F x F mixing matrix (row-major), or None.
    pub mixing: Option<Vec<C64>>,
    /// Label-conditioned linear coefficient on one mode: H += kick[f] * q_mode.
    pub kick: Option<(usize, Vec<f64>)>,
}

impl LabelCoupling {
    pub fn validate(&self, labels: usize, modes: usize) -> Result<()> {
        if let Some(m) = &self.mixing {
            if m.len() != labels * labels {
                return Err(Error::InvalidInput("mixing matrix size != F*F".into()));
            }
            for i in 0..labels {
                for j in 0..labels {
                    let diff = m[i * labels + j] - m[j * labels + i].conj();
                    if diff.norm() > 1e-12 {
                        return Err(Error::InvalidInput("mixing matrix not self-adjoint".into()));
                    }
                }
            }
        }
        if let Some((mode, ks)) = &self.kick {
            if *mode >= modes {
                return Err(Error::InvalidInput("kick mode out of range".into()));
            }
            if ks.len() != labels {
                return Err(Error::InvalidInput("kick strengths length != F".into()));
            }
        }
        Ok(())
    }
}

/// Wave functional over mode amplitudes: per label f, a finite superposition
/// of Gaussian product terms. F = 1 is the unlabeled case.
#[derive(Debug, Clone)]
pub struct WaveFunctional {
    pub basis: ModeBasis,
    pub components: Vec<Vec<GaussianTerm>>,
}

impl WaveFunctional {
    /// Ground-state functional (all modes in their oscillator ground state).
    pub fn ground(basis: ModeBasis) -> Self {
        let modes = (0..basis.mode_count()).map(|m| ModeGaussian::ground(basis.frequency(m))).collect();
        let mut w = Self {
            basis,
            components: vec![vec![GaussianTerm { weight: C64::new(1.0, 0.0), modes }]],
        };
        w.normalize();
        w
    }

    /// Coherent state: per-mode mean amplitude and momentum, ground width.
    pub fn coherent(basis: ModeBasis, centers: &[f64], momenta: &[f64]) -> Result<Self> {
        let m = basis.mode_count();
        if centers.len() != m || momenta.len() != m {
            return Err(Error::InvalidInput("coherent parameters length != mode count".into()));
        }
        let modes = (0..m)
            .map(|i| ModeGaussian::coherent(basis.frequency(i), centers[i], momenta[i]))
            .collect();
        let mut w = Self {
            basis,
            components: vec![vec![GaussianTerm { weight: C64::new(1.0, 0.0), modes }]],
        };
        w.normalize();
        Ok(w)
    }

    /// Labeled functional with common spatial part and weights c_f.
    pub fn labeled(basis: ModeBasis, weights: &[C64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("need >= 1 label".into()));
        }
        let template = Self::ground(basis.clone()).components[0][0].modes.clone();
        let components = weights
            .iter()
            .map(|&c| vec![GaussianTerm { weight: c, modes: template.clone() }])
            .collect();
        let mut w = Self { basis, components };
        w.normalize();
        Ok(w)
    }

    pub fn labels(&self) -> usize {
        self.components.len()
    }

    /// Total norm^2, sum over labels, by closed-form Gaussian overlaps.
    pub fn norm_sq(&self) -> f64 {
        self.components.iter().map(|c| terms_overlap(c, c).re).sum()
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sq().sqrt();
        if n > 0.0 {
            for comp in &mut self.components {
                for t in comp.iter_mut() {
                    t.weight /= n;
                }
            }
        }
    }

    /// Norm^2 of one label component.
    pub fn component_weight(&self, f: usize) -> f64 {
        terms_overlap(&self.components[f], &self.components[f]).re
    }

    /// Component value at a configuration.
    pub fn value(&self, f: usize, q: &[f64]) -> C64 {
        self.components[f].iter().map(|t| t.value(q)).sum()
    }

    /// Component gradient (d/dq_m) at a configuration.
    pub fn gradient(&self, f: usize, q: &[f64]) -> Vec<C64> {
        let m = self.basis.mode_count();
        let mut grad = vec![C64::new(0.0, 0.0); m];
        for t in &self.components[f] {
            let v = t.value(q);
            for (i, g) in t.modes.iter().enumerate() {
                grad[i] += v * g.log_derivative(q[i]);
            }
        }
        grad
    }

    /// Spin-summed density at a configuration.
    pub fn density(&self, q: &[f64]) -> f64 {
        (0..self.labels()).map(|f| self.value(f, q).norm_sqr()).sum()
    }

    /// Scale used for density-floor flagging.
    pub fn density_scale(&self) -> f64 {
        self.components
            .iter()
            .flatten()
            .map(|t| t.weight.norm_sqr())
            .fold(0.0, f64::max)
    }

    fn prune(&mut self) {
        let floor = 1e-14 * self.density_scale().sqrt();
        for comp in &mut self.components {
            comp.retain(|t| t.weight.norm() > floor);
            // merge terms with identical Gaussian parameters
            let mut merged: Vec<GaussianTerm> = Vec::with_capacity(comp.len());
            'outer: for t in comp.drain(..) {
                for m in &mut merged {
                    if m.modes == t.modes {
                        m.weight += t.weight;
                        continue 'outer;
                    }
                }
                merged.push(t);
            }
            *comp = merged;
        }
    }
}

fn mixing_step(w: &mut WaveFunctional, mixing: &[C64], dt: f64) {
    let f = w.labels();
    let h = DMatrix::from_fn(f, f, |i, j| Complex::new(mixing[i * f + j].re, mixing[i * f + j].im));
    let eig = nalgebra::SymmetricEigen::new(h);
    // U exp(-i dt L) U^H
    let mut u = DMatrix::zeros(f, f);
    for i in 0..f {
        for j in 0..f {
            let mut acc = Complex::new(0.0, 0.0);
            for k in 0..f {
                let phase = Complex::new(0.0, -dt * eig.eigenvalues[k]).exp();
                acc += eig.eigenvectors[(i, k)] * phase * eig.eigenvectors[(j, k)].conj();
            }
            u[(i, j)] = acc;
        }
    }
    let old = w.components.clone();
    for (i, comp) in w.components.iter_mut().enumerate() {
        let mut terms = Vec::new();
        for (j, source) in old.iter().enumerate() {
            let c = u[(i, j)];
            let c64 = C64::new(c.re, c.im);
            if c64.norm() == 0.0 {
                continue;
            }
            for t in source {
                terms.push(GaussianTerm { weight: t.weight * c64, modes: t.modes.clone() });
            }
        }
        *comp = terms;
    }
    w.prune();
}

fn kick_step(w: &mut WaveFunctional, mode: usize, strengths: &[f64], dt: f64) {
    for (f, comp) in w.components.iter_mut().enumerate() {
        let d = strengths[f];
        if d == 0.0 {
            continue;
        }
        for t in comp.iter_mut() {
            let g = &mut t.modes[mode];
            // exp(-i d q dt): shifts the momentum, leaves a phase at the center
            g.momentum -= d * dt;
            t.weight *= (C64::i() * (-d * dt * g.center)).exp();
        }
    }
}

fn free_step(w: &mut WaveFunctional, dt: f64) {
    for comp in &mut w.components {
        for t in comp.iter_mut() {
            for (m, g) in t.modes.iter_mut().enumerate() {
                let phase = g.evolve(w.basis.frequencies[m], dt);
                t.weight *= phase;
            }
        }
    }
}

/// Hard cap on superposition size; label mixing combined with a
/// label-conditioned kick genuinely grows the number of Gaussian terms, and
/// runs that exceed this cap abort rather than silently truncate.
pub const MAX_TERMS: usize = 4096;

/// Evolve the functional for `steps` steps of `dt`. Free mode evolution is
/// closed-form (exact for any dt); with a coupling present the step is a
/// second-order Strang split of free / kick / mixing parts.
///
/// With mixing only, or a kick only, the term count stays fixed. With both
/// at once each step can multiply the term count by F; such runs must be
/// short or they hit [`MAX_TERMS`].
pub fn evolve_functional(
    w: &WaveFunctional,
    dt: f64,
    steps: usize,
    coupling: Option<&LabelCoupling>,
) -> Result<WaveFunctional> {
    let norm0 = w.norm_sq();
    if (norm0 - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!("functional not normalized: {norm0}")));
    }
    if let Some(c) = coupling {
        c.validate(w.labels(), w.basis.mode_count())?;
    }
    let mut out = w.clone();
    match coupling {
        None | Some(&LabelCoupling { mixing: None, kick: None }) => {
            // exact: one closed-form application per step keeps phases
            // continuous across branch cuts
            for _ in 0..steps {
                free_step(&mut out, dt);
            }
        }
        Some(c) => {
            for _ in 0..steps {
                free_step(&mut out, 0.5 * dt);
                if let Some((mode, ks)) = &c.kick {
                    kick_step(&mut out, *mode, ks, 0.5 * dt);
                }
                if let Some(m) = &c.mixing {
                    mixing_step(&mut out, m, dt);
                }
                if let Some((mode, ks)) = &c.kick {
                    kick_step(&mut out, *mode, ks, 0.5 * dt);
                }
                free_step(&mut out, 0.5 * dt);
                let terms: usize = out.components.iter().map(Vec::len).sum();
                if terms > MAX_TERMS {
                    return Err(Error::NumericalQuality(format!(
                        "superposition grew to {terms} terms (cap {MAX_TERMS})"
                    )));
                }
            }
            let n = out.norm_sq();
            if (n - 1.0).abs() > 1e-8 {
                return Err(Error::NumericalQuality(format!(
                    "norm drift after coupling steps: |Psi|^2 = {n}"
                )));
            }
        }
    }
    Ok(out)
}

/// Guidance velocity over mode space: Im(sum_f Psi_f* dPsi_f) / sum_f |Psi_f|^2.
/// With F = 1 this is the single-functional phase-gradient law.
pub fn field_velocity(w: &WaveFunctional, q: &[f64]) -> (Vec<f64>, f64) {
    let m = w.basis.mode_count();
    let mut num = vec![0.0; m];
    let mut den = 0.0;
    for f in 0..w.labels() {
        let v = w.value(f, q);
        let grad = w.gradient(f, q);
        den += v.norm_sqr();
        for i in 0..m {
            num[i] += (v.conj() * grad[i]).im;
        }
    }
    if den == 0.0 {
        return (vec![0.0; m], 0.0);
    }
    (num.iter().map(|n| n / den).collect(), den)
}

/// Phase-gradient route for the unlabeled law: Im(Psi'/Psi) per mode.
/// Requires F = 1; used to cross-check `field_velocity`.
pub fn field_velocity_phase_route(w: &WaveFunctional, q: &[f64]) -> Result<Vec<f64>> {
    if w.labels() != 1 {
        return Err(Error::InvalidInput("phase route defined for unlabeled functionals".into()));
    }
    let v = w.value(0, q);
    if v.norm_sqr() == 0.0 {
        return Ok(vec![0.0; w.basis.mode_count()]);
    }
    Ok(w.gradient(0, q).iter().map(|g| (g / v).im).collect())
}

/// Stored snapshots of an evolving functional, interpolated linearly in time
/// for trajectory integration over mode space.
pub struct FunctionalFlow {
    pub times: Vec<f64>,
    pub snapshots: Vec<WaveFunctional>,
}

impl FunctionalFlow {
    /// Evolve and store a snapshot every `store_every` steps.
    pub fn evolve(
        w: &WaveFunctional,
        dt: f64,
        steps: usize,
        store_every: usize,
        coupling: Option<&LabelCoupling>,
    ) -> Result<Self> {
        let store_every = store_every.max(1);
        let mut times = vec![0.0];
        let mut snapshots = vec![w.clone()];
        let mut current = w.clone();
        let mut done = 0usize;
        while done < steps {
            let chunk = store_every.min(steps - done);
            current = evolve_functional(&current, dt, chunk, coupling)?;
            done += chunk;
            times.push(done as f64 * dt);
            snapshots.push(current.clone());
        }
        Ok(Self { times, snapshots })
    }

    pub fn final_state(&self) -> &WaveFunctional {
        self.snapshots.last().unwrap()
    }
}

impl VelocityField for FunctionalFlow {
    fn dim(&self) -> usize {
        self.snapshots[0].basis.mode_count()
    }

    fn time_range(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    fn velocity(&self, q: &[f64], t: f64) -> (Vec<f64>, f64) {
        let n = self.times.len();
        let (i0, i1, wgt) = if t <= self.times[0] {
            (0, 0, 0.0)
        } else if t >= self.times[n - 1] {
            (n - 1, n - 1, 0.0)
        } else {
            let j = self.times.partition_point(|&u| u <= t).min(n - 1);
            (j - 1, j, (t - self.times[j - 1]) / (self.times[j] - self.times[j - 1]))
        };
        let (v0, d0) = field_velocity(&self.snapshots[i0], q);
        if i0 == i1 {
            return (v0, d0);
        }
        let (v1, d1) = field_velocity(&self.snapshots[i1], q);
        let v = v0.iter().zip(&v1).map(|(a, b)| (1.0 - wgt) * a + wgt * b).collect();
        (v, (1.0 - wgt) * d0 + wgt * d1)
    }

    fn mean_density(&self) -> f64 {
        self.snapshots[0].density_scale()
    }
}

/// Integrate the actual field configuration through the functional flow.
pub fn integrate_field(
    flow: &FunctionalFlow,
    q0: &[f64],
    t0: f64,
    t1: f64,
    tolerance: f64,
    record_times: &[f64],
) -> Result<crate::guidance::Trajectory> {
    crate::guidance::integrate_trajectory(flow, q0, t0, t1, tolerance, record_times)
}

/// Per-site F x F self-adjoint operator matrix field for the conditional
/// energy density (site-major storage).
#[derive(Debug, Clone)]
pub struct HermitianField {
    pub sites: usize,
    pub labels: usize,
    data: Vec<C64>,
}

impl HermitianField {
    pub fn new(sites: usize, labels: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != sites * labels * labels {
            return Err(Error::InvalidInput("operator field size mismatch".into()));
        }
        let field = Self { sites, labels, data };
        for x in 0..sites {
            for i in 0..labels {
                for j in 0..labels {
                    let d = field.at(x, i, j) - field.at(x, j, i).conj();
                    if d.norm() > 1e-12 {
                        return Err(Error::InvalidInput(format!(
                            "operator not self-adjoint at site {x}"
                        )));
                    }
                }
            }
        }
        Ok(field)
    }

    /// Diagonal operator: per-label real profile over sites.
    pub fn diagonal(profiles: &[Vec<f64>]) -> Result<Self> {
        let labels = profiles.len();
        let sites = profiles[0].len();
        if profiles.iter().any(|p| p.len() != sites) {
            return Err(Error::InvalidInput("profiles have unequal lengths".into()));
        }
        let mut data = vec![C64::new(0.0, 0.0); sites * labels * labels];
        for x in 0..sites {
            for f in 0..labels {
                data[x * labels * labels + f * labels + f] = C64::new(profiles[f][x], 0.0);
            }
        }
        Self::new(sites, labels, data)
    }

    /// Two-label preset: label 0 concentrated in a packet around `up_center`,
    /// label 1 around `down_center` (Gaussian site profiles).
    pub fn two_packet(sites: usize, up_center: f64, down_center: f64, width: f64) -> Result<Self> {
        let profile = |c: f64| -> Vec<f64> {
            (0..sites)
                .map(|j| (-((j as f64 - c) / width).powi(2) / 2.0).exp())
                .collect()
        };
        Self::diagonal(&[profile(up_center), profile(down_center)])
    }

    #[inline]
    pub fn at(&self, site: usize, i: usize, j: usize) -> C64 {
        self.data[site * self.labels * self.labels + i * self.labels + j]
    }
}

/// Conditional energy density E(x) at the actual configuration `q`:
/// sum_ff' Psi_f* E_ff'(x) Psi_f' / sum_f |Psi_f|^2 per site.
pub fn energy_density(w: &WaveFunctional, q: &[f64], emat: &HermitianField) -> Result<Vec<f64>> {
    if emat.labels != w.labels() {
        return Err(Error::InvalidInput("operator labels != functional labels".into()));
    }
    let vals: Vec<C64> = (0..w.labels()).map(|f| w.value(f, q)).collect();
    let den: f64 = vals.iter().map(|v| v.norm_sqr()).sum();
    if den == 0.0 {
        return Err(Error::NumericalQuality("density vanishes at the configuration".into()));
    }
    let mut out = Vec::with_capacity(emat.sites);
    for x in 0..emat.sites {
        let mut e = C64::new(0.0, 0.0);
        for i in 0..w.labels() {
            for j in 0..w.labels() {
                e += vals[i].conj() * emat.at(x, i, j) * vals[j];
            }
        }
        debug_assert!(e.im.abs() < 1e-9 * (1.0 + e.re.abs()), "energy density not real");
        out.push(e.re / den);
    }
    Ok(out)
}

/// Time series of the conditional energy density along a field trajectory.
#[derive(Debug, Clone)]
pub struct EnergyDensityTrace {
    pub times: Vec<f64>,
    /// One row of site values per time.
    pub values: Vec<Vec<f64>>,
}

/// Draw configurations from the equilibrium density sum_f |Psi_f|^2 by
/// rejection against a Gaussian-mixture envelope built from the terms.
pub fn sample_functional(w: &WaveFunctional, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let norm = w.norm_sq();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!("functional not normalized: {norm}")));
    }
    let m = w.basis.mode_count();
    // envelope: rho(q) <= sum_f J_f sum_j |w_j|^2 |G_j(q)|^2 (Cauchy-Schwarz)
    struct Proposal {
        weight: f64,
        centers: Vec<f64>,
        sigmas: Vec<f64>,
    }
    let mut proposals = Vec::new();
    for comp in &w.components {
        let j_count = comp.len() as f64;
        for t in comp {
            let g_norm_sq: f64 = t.modes.iter().map(|g| g.norm_sq()).product();
            proposals.push(Proposal {
                weight: j_count * t.weight.norm_sqr() * g_norm_sq,
                centers: t.modes.iter().map(|g| g.center).collect(),
                sigmas: t.modes.iter().map(|g| (1.0 / (4.0 * g.width_a.im)).sqrt()).collect(),
            });
        }
    }
    let total_weight: f64 = proposals.iter().map(|p| p.weight).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    let normal = |rng: &mut ChaCha8Rng| -> f64 {
        // Box-Muller
        let u1: f64 = rng.gen::<f64>().max(1e-300);
        let u2: f64 = rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    };
    while out.len() < count {
        attempts += 1;
        if attempts > count.saturating_mul(100_000) {
            return Err(Error::NumericalQuality("functional sampler acceptance too low".into()));
        }
        // pick a proposal term
        let mut pick = rng.gen::<f64>() * total_weight;
        let mut idx = 0;
        for (i, p) in proposals.iter().enumerate() {
            pick -= p.weight;
            if pick <= 0.0 {
                idx = i;
                break;
            }
        }
        let p = &proposals[idx];
        let q: Vec<f64> = (0..m).map(|i| p.centers[i] + p.sigmas[i] * normal(&mut rng)).collect();
        // envelope density at q
        let mut env = 0.0;
        for pr in &proposals {
            let mut g = pr.weight;
            for i in 0..m {
                let s = pr.sigmas[i];
                let d = (q[i] - pr.centers[i]) / s;
                g *= (-0.5 * d * d).exp() / (s * (2.0 * PI).sqrt());
            }
            env += g;
        }
        let rho = w.density(&q);
        if rho > env * (1.0 + 1e-9) {
            return Err(Error::NumericalQuality("density exceeded sampling envelope".into()));
        }
        if rng.gen::<f64>() * env < rho {
            out.push(q);
        }
    }
    Ok(out)
}

/// Marginal density of one mode (other modes integrated out, closed form).
pub fn marginal_density(w: &WaveFunctional, mode: usize, q: f64) -> f64 {
    let mut total = 0.0;
    for comp in &w.components {
        for tj in comp {
            for tk in comp {
                let mut ov = tj.weight.conj() * tk.weight;
                for (i, (gj, gk)) in tj.modes.iter().zip(&tk.modes).enumerate() {
                    if i == mode {
                        ov *= gj.value(q).conj() * gk.value(q);
                    } else {
                        ov *= mode_overlap(gj, gk);
                    }
                }
                total += ov.re;
            }
        }
    }
    total
}

/// CDF of the marginal of one mode, tabulated by trapezoid integration.
pub fn marginal_cdf(w: &WaveFunctional, mode: usize, lo: f64, hi: f64, points: usize) -> impl Fn(f64) -> f64 {
    let n = points.max(64);
    let dx = (hi - lo) / (n - 1) as f64;
    let density: Vec<f64> = (0..n).map(|i| marginal_density(w, mode, lo + i as f64 * dx)).collect();
    let mut cum = vec![0.0; n];
    for i in 1..n {
        cum[i] = cum[i - 1] + 0.5 * (density[i - 1] + density[i]) * dx;
    }
    let total = cum[n - 1];
    move |x: f64| -> f64 {
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        let u = (x - lo) / dx;
        let i = (u.floor() as usize).min(n - 2);
        let frac = u - i as f64;
        ((cum[i] + frac * (cum[i + 1] - cum[i])) / total).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks_test;
    use approx::assert_relative_eq;

    fn basis(modes: usize) -> ModeBasis {
        ModeBasis::new(32, modes, 1.0).unwrap()
    }

    #[test]
    fn mode_map_is_orthonormal() {
        let b = basis(8);
        for m1 in 0..8 {
            for m2 in 0..8 {
                let dot: f64 = b.profiles[m1].iter().zip(&b.profiles[m2]).map(|(a, c)| a * c).sum();
                let expect = if m1 == m2 { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12, "modes {m1},{m2}: {dot}");
            }
        }
        // round trip through the field map
        let q: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) * 0.3).collect();
        let back = b.amplitudes(&b.field(&q));
        for (a, c) in q.iter().zip(&back) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn frequencies_positive() {
        let b = ModeBasis::new(64, 12, 0.7).unwrap();
        for m in 0..12 {
            assert!(b.frequency(m) > 0.0);
        }
    }

    #[test]
    fn ground_state_invariant_up_to_phase() {
        let w = WaveFunctional::ground(basis(4));
        let out = evolve_functional(&w, 0.05, 200, None).unwrap();
        assert_relative_eq!(out.norm_sq(), 1.0, epsilon = 1e-12);
        // density at several configurations unchanged
        for q in [[0.0, 0.0, 0.0, 0.0], [0.5, -0.3, 0.2, 0.1]] {
            assert_relative_eq!(out.density(&q), w.density(&q), max_relative = 1e-10);
        }
        // and the state is the same ray: |<out|w>| = 1
        let ov = terms_overlap(&out.components[0], &w.components[0]);
        assert_relative_eq!(ov.norm(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn ground_state_phase_matches_zero_point_energy() {
        let w = WaveFunctional::ground(basis(3));
        let t = 0.7;
        let out = evolve_functional(&w, t, 1, None).unwrap();
        let e0: f64 = (0..3).map(|m| 0.5 * w.basis.frequency(m)).sum();
        let ov = terms_overlap(&w.components[0], &out.components[0]);
        let expect = C64::new(0.0, -e0 * t).exp();
        assert!((ov - expect).norm() < 1e-10, "phase {ov} vs {expect}");
    }

    #[test]
    fn coherent_state_mean_oscillates_classically() {
        let b = basis(2);
        let (q0, p0) = (1.3, -0.4);
        let w = WaveFunctional::coherent(b.clone(), &[q0, 0.0], &[p0, 0.0]).unwrap();
        let omega = b.frequency(0);
        let t = 2.31;
        let steps = 77;
        let out = evolve_functional(&w, t / steps as f64, steps, None).unwrap();
        let g = &out.components[0][0].modes[0];
        assert_relative_eq!(g.center, q0 * (omega * t).cos() + p0 / omega * (omega * t).sin(), epsilon = 1e-12);
        assert_relative_eq!(g.momentum, p0 * (omega * t).cos() - omega * q0 * (omega * t).sin(), epsilon = 1e-12);
        assert_relative_eq!(out.norm_sq(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_evolution_matches_grid_oracle() {
        // independent oracle: evolve the same 1D Gaussian with the split-step
        // grid solver and compare wave-function values pointwise
        let b = ModeBasis::new(32, 1, 1.0).unwrap();
        let omega = b.frequency(0);
        // squeezed state: width != ground width
        let a0 = C64::new(0.2, 0.8 * 0.5 * omega);
        let mut w = WaveFunctional {
            basis: b,
            components: vec![vec![GaussianTerm {
                weight: C64::new(1.0, 0.0),
                modes: vec![ModeGaussian { center: 0.7, momentum: -0.3, width_a: a0 }],
            }]],
        };
        w.normalize();
        let t = 0.9;
        let out = evolve_functional(&w, t / 64.0, 64, None).unwrap();

        let spec = crate::grids::GridSpec::new_1d(40.0, 1024).unwrap();
        let mut psi0 = crate::grids::ComplexGrid::from_fn(spec.clone(), |x| {
            w.components[0][0].modes[0].value(x[0]) * w.components[0][0].weight
        })
        .unwrap();
        psi0.normalize();
        let pot = crate::evolution::Potential::Harmonic { omega };
        let psi_t = crate::evolution::evolve_schrodinger(&psi0, &pot, t / 4096.0, 4096).unwrap();
        let mut max_err: f64 = 0.0;
        for i in 400..624 {
            let x = spec.coord(0, i);
            let closed = out.value(0, &[x]);
            max_err = max_err.max((closed - psi_t.values[i]).norm());
        }
        assert!(max_err < 1e-6, "closed-form vs grid solver mismatch {max_err}");
    }

    #[test]
    fn labeled_single_f_zero_coupling_reduces_to_unlabeled() {
        let w = WaveFunctional::labeled(basis(3), &[C64::new(1.0, 0.0)]).unwrap();
        let unlabeled = WaveFunctional::ground(basis(3));
        let coupling = LabelCoupling { mixing: None, kick: None };
        let a = evolve_functional(&w, 0.1, 20, Some(&coupling)).unwrap();
        let b = evolve_functional(&unlabeled, 0.1, 20, None).unwrap();
        for q in [[0.0, 0.0, 0.0], [0.4, -0.2, 0.9]] {
            assert!((a.value(0, &q) - b.value(0, &q)).norm() < 1e-12);
        }
    }

    #[test]
    fn real_ground_state_velocity_is_zero() {
        let w = WaveFunctional::ground(basis(4));
        let (v, d) = field_velocity(&w, &[0.3, -0.1, 0.2, 0.0]);
        assert!(d > 0.0);
        for vi in v {
            assert!(vi.abs() < 1e-12);
        }
    }

    #[test]
    fn coherent_velocity_at_mean_is_classical_momentum() {
        let b = basis(2);
        let w = WaveFunctional::coherent(b, &[1.0, -0.5], &[0.8, 0.3]).unwrap();
        let (v, _) = field_velocity(&w, &[1.0, -0.5]);
        assert_relative_eq!(v[0], 0.8, epsilon = 1e-12);
        assert_relative_eq!(v[1], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn identical_labels_cancel_in_velocity() {
        let b = basis(2);
        let inv_sqrt2 = C64::new(1.0 / 2.0f64.sqrt(), 0.0);
        let labeled = WaveFunctional::labeled(b.clone(), &[inv_sqrt2, inv_sqrt2]).unwrap();
        let plain = WaveFunctional::ground(b);
        for q in [[0.2, 0.5], [-1.0, 0.3]] {
            let (vl, _) = field_velocity(&labeled, &q);
            let (vp, _) = field_velocity(&plain, &q);
            for (a, c) in vl.iter().zip(&vp) {
                assert!((a - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn velocity_routes_agree_at_f1() {
        let b = basis(3);
        // superposition of two coherent states: nontrivial phase structure
        let mut w = WaveFunctional::coherent(b.clone(), &[1.0, 0.0, 0.0], &[0.5, 0.0, 0.0]).unwrap();
        let other = WaveFunctional::coherent(b, &[-1.0, 0.3, 0.0], &[-0.5, 0.1, 0.2]).unwrap();
        w.components[0].extend(other.components[0].iter().cloned());
        w.normalize();
        for q in [[0.1, 0.2, -0.3], [0.9, -0.4, 0.0]] {
            let (v7, _) = field_velocity(&w, &q);
            let v5 = field_velocity_phase_route(&w, &q).unwrap();
            for (a, c) in v7.iter().zip(&v5) {
                assert!((a - c).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ground_state_configuration_is_static() {
        let w = WaveFunctional::ground(basis(4));
        let flow = FunctionalFlow::evolve(&w, 0.05, 40, 5, None).unwrap();
        let q0 = [0.4, -0.2, 0.1, 0.05];
        let traj = integrate_field(&flow, &q0, 0.0, 2.0, 1e-10, &[]).unwrap();
        for (a, c) in traj.final_position().iter().zip(&q0) {
            assert!((a - c).abs() < 1e-12, "ground-state drift");
        }
    }

    #[test]
    fn coherent_configuration_follows_classical_path() {
        let b = basis(1);
        let omega = b.frequency(0);
        let (q0, p0) = (1.0, 0.0);
        let w = WaveFunctional::coherent(b, &[q0], &[p0]).unwrap();
        let t1 = 3.0;
        let dt = 0.01;
        let flow = FunctionalFlow::evolve(&w, dt, (t1 / dt) as usize, 1, None).unwrap();
        let traj = integrate_field(&flow, &[q0], 0.0, t1, 1e-10, &[]).unwrap();
        assert!(!traj.flagged);
        let expect = q0 * (omega * t1).cos() + p0 / omega * (omega * t1).sin();
        assert_relative_eq!(traj.final_position()[0], expect, epsilon = 2e-4);
    }

    #[test]
    fn sampler_matches_marginals() {
        let b = basis(2);
        // two-branch cat in mode 0
        let mut w = WaveFunctional::coherent(b.clone(), &[2.0, 0.0], &[0.0, 0.0]).unwrap();
        let other = WaveFunctional::coherent(b, &[-2.0, 0.0], &[0.0, 0.0]).unwrap();
        w.components[0].extend(other.components[0].iter().cloned());
        w.normalize();
        let samples = sample_functional(&w, 4000, 99).unwrap();
        let cdf = marginal_cdf(&w, 0, -8.0, 8.0, 2048);
        let r = ks_test(samples.iter().map(|q| q[0]).collect(), cdf);
        assert!(r.p_value > 0.01, "mode-0 marginal KS p = {}", r.p_value);
        let cdf1 = marginal_cdf(&w, 1, -8.0, 8.0, 2048);
        let r = ks_test(samples.iter().map(|q| q[1]).collect(), cdf1);
        assert!(r.p_value > 0.01, "mode-1 marginal KS p = {}", r.p_value);
    }

    #[test]
    fn energy_density_factorized_is_configuration_independent() {
        let b = basis(2);
        let c0 = C64::new(0.6, 0.0);
        let c1 = C64::new(0.0, 0.8);
        let w = WaveFunctional::labeled(b, &[c0, c1]).unwrap();
        let emat = HermitianField::two_packet(32, 8.0, 24.0, 2.0).unwrap();
        let e_a = energy_density(&w, &[0.0, 0.0], &emat).unwrap();
        let e_b = energy_density(&w, &[1.3, -0.7], &emat).unwrap();
        for (a, c) in e_a.iter().zip(&e_b) {
            assert!((a - c).abs() < 1e-12);
        }
        // matches the direct weight average
        let direct: Vec<f64> = (0..32)
            .map(|x| {
                (c0.norm_sqr() * emat.at(x, 0, 0).re + c1.norm_sqr() * emat.at(x, 1, 1).re)
                    / (c0.norm_sqr() + c1.norm_sqr())
            })
            .collect();
        for (a, c) in e_a.iter().zip(&direct) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_density_single_label_equals_operator_profile() {
        let b = basis(1);
        let w = WaveFunctional::ground(b);
        let profile: Vec<f64> = (0..32).map(|x| (x as f64).sin() + 2.0).collect();
        let emat = HermitianField::diagonal(&[profile.clone()]).unwrap();
        let e = energy_density(&w, &[0.77], &emat).unwrap();
        for (a, c) in e.iter().zip(&profile) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_density_collapses_for_disjoint_branches() {
        let b = basis(1);
        // two labels, branch functionals far apart in q
        let sep = 12.0;
        let mut w = WaveFunctional::labeled(b.clone(), &[C64::new(0.5f64.sqrt(), 0.0), C64::new(0.5f64.sqrt(), 0.0)]).unwrap();
        w.components[0][0].modes[0].center = sep / 2.0;
        w.components[1][0].modes[0].center = -sep / 2.0;
        w.normalize();
        let emat = HermitianField::two_packet(32, 8.0, 24.0, 2.0).unwrap();
        // configuration inside branch 0
        let e = energy_density(&w, &[sep / 2.0], &emat).unwrap();
        let branch0: Vec<f64> = (0..32).map(|x| emat.at(x, 0, 0).re).collect();
        let mut contamination: f64 = 0.0;
        for (a, c) in e.iter().zip(&branch0) {
            contamination = contamination.max((a - c).abs());
        }
        assert!(contamination < 1e-8, "cross-branch contamination {contamination}");
    }

    #[test]
    fn non_self_adjoint_operator_rejected() {
        let mut data = vec![C64::new(0.0, 0.0); 4 * 4];
        data[1] = C64::new(1.0, 0.5); // (0,1) without matching conjugate
        assert!(HermitianField::new(4, 2, data).is_err());
    }

    #[test]
    fn labeled_norm_conserved_through_coupled_evolution() {
        let b = basis(2);
        let w = WaveFunctional::labeled(b.clone(), &[C64::new(0.8, 0.0), C64::new(0.0, 0.6)]).unwrap();
        let mixing = vec![
            C64::new(0.0, 0.0),
            C64::new(0.3, 0.1),
            C64::new(0.3, -0.1),
            C64::new(0.2, 0.0),
        ];
        // mixing only: term count stays fixed, long run
        let c1 = LabelCoupling { mixing: Some(mixing.clone()), kick: None };
        let out = evolve_functional(&w, 1e-3, 1000, Some(&c1)).unwrap();
        assert!((out.norm_sq() - 1.0).abs() < 1e-10, "norm {}", out.norm_sq());
        // mixing and kick together: terms multiply, short run
        let c2 = LabelCoupling { mixing: Some(mixing), kick: Some((0, vec![0.5, -0.5])) };
        let out = evolve_functional(&w, 1e-2, 8, Some(&c2)).unwrap();
        assert!((out.norm_sq() - 1.0).abs() < 1e-10, "norm {}", out.norm_sq());
    }

    #[test]
    fn term_growth_hits_cap_with_clear_error() {
        let b = basis(1);
        let w = WaveFunctional::labeled(b, &[C64::new(0.5f64.sqrt(), 0.0), C64::new(0.5f64.sqrt(), 0.0)]).unwrap();
        let coupling = LabelCoupling {
            mixing: Some(vec![
                C64::new(0.0, 0.0),
                C64::new(1.0, 0.0),
                C64::new(1.0, 0.0),
                C64::new(0.0, 0.0),
            ]),
            kick: Some((0, vec![1.0, -1.0])),
        };
        let err = evolve_functional(&w, 1e-3, 40, Some(&coupling)).unwrap_err();
        assert!(matches!(err, Error::NumericalQuality(_)), "got {err:?}");
    }

    #[test]
    fn kick_separates_labeled_branches() {
        let b = basis(1);
        let w = WaveFunctional::labeled(b, &[C64::new(0.5f64.sqrt(), 0.0), C64::new(0.5f64.sqrt(), 0.0)]).unwrap();
        let coupling = LabelCoupling { mixing: None, kick: Some((0, vec![8.0, -8.0])) };
        let out = evolve_functional(&w, 5e-3, 200, Some(&coupling)).unwrap(); // t = 1
        let c0 = out.components[0][0].modes[0].center;
        let c1 = out.components[1][0].modes[0].center;
        assert!((c0 - c1).abs() > 3.0, "branch separation {}", (c0 - c1).abs());
        // weights preserved by a diagonal coupling
        assert_relative_eq!(out.component_weight(0), 0.5, epsilon = 1e-10);
        assert_relative_eq!(out.component_weight(1), 0.5, epsilon = 1e-10);
    }
}
