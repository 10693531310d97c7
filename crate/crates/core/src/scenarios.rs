//! End-to-end experiment pipelines: the Stern-Gerlach run over a spinor
//! ensemble, and the field-mode branching demo with its conditional
//! energy-density trace.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::{sample_density, EnsembleSpec};
use crate::error::{Error, Result};
use crate::evolution::{
    evolve_pauli_history, gaussian_packet_1d, PauliCoupling, Potential, SpinorGrid,
};
use crate::fieldmodes::{
    energy_density, sample_functional, EnergyDensityTrace, FunctionalFlow, HermitianField,
    LabelCoupling, ModeBasis, WaveFunctional,
};
use crate::grids::GridSpec;
use crate::guidance::{
    integrate_trajectory, spin_vector_trace, SpinVectorTrace, SpinorHistoryField, Trajectory,
};

/// Initial spin state of the emitted particle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpinState {
    ZUp,
    ZDown,
    XUp,
    General { alpha: C64, beta: C64 },
}

impl SpinState {
    /// Normalized (alpha, beta) in the z basis.
    pub fn amplitudes(&self) -> Result<(C64, C64)> {
        let (a, b) = match *self {
            SpinState::ZUp => (C64::new(1.0, 0.0), C64::new(0.0, 0.0)),
            SpinState::ZDown => (C64::new(0.0, 0.0), C64::new(1.0, 0.0)),
            SpinState::XUp => {
                let r = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                (r, r)
            }
            SpinState::General { alpha, beta } => (alpha, beta),
        };
        let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
        if n < 1e-12 {
            return Err(Error::InvalidInput("zero spinor".into()));
        }
        Ok((a / n, b / n))
    }
}

/// Gaussian packet parameters along the measurement axis.
#[derive(Debug, Clone, Copy)]
pub struct PacketParams {
    pub center: f64,
    pub width: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct SternGerlachConfig {
    pub extent: f64,
    pub points: usize,
    pub spin: SpinState,
    pub packet: PacketParams,
    pub coupling: PauliCoupling,
    pub dt: f64,
    pub total_time: f64,
    pub store_every: usize,
    pub ensemble: EnsembleSpec,
    pub tolerance: f64,
    /// Branch separation (in combined packet widths) required before
    /// classification; the report also checks stability over [4, 10].
    pub separation_threshold: f64,
    /// How many unflagged trajectories get a recorded spin-vector trace.
    pub spin_traces: usize,
}

impl SternGerlachConfig {
    pub fn new(spin: SpinState, ensemble: EnsembleSpec) -> Self {
        Self {
            extent: 160.0,
            points: 2048,
            spin,
            packet: PacketParams { center: 0.0, width: 1.0, momentum: 0.0 },
            coupling: PauliCoupling {
                mu: 1.0,
                b0: 0.0,
                b_grad: 8.0,
                t_on: 0.0,
                t_off: 1.0,
                spatial_window: None,
            },
            dt: 1e-3,
            total_time: 4.0,
            store_every: 10,
            ensemble,
            tolerance: 1e-8,
            separation_threshold: 6.0,
            spin_traces: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Up,
    Down,
    Indeterminate,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutcomeReport {
    pub up_fraction: f64,
    pub down_fraction: f64,
    pub indeterminate_fraction: f64,
    pub up_count: usize,
    pub down_count: usize,
    pub indeterminate_count: usize,
    pub flagged_count: usize,
    pub ensemble_count: usize,
    /// Time at which the classification boundary was applied.
    pub classification_time: f64,
    /// Final branch separation in combined packet widths (0 if one branch).
    pub separation_widths: f64,
    /// Fraction of unflagged, determinate trajectories whose outcome matches
    /// the half-space of their initial position relative to the ensemble
    /// median; None when only one branch exists.
    pub position_outcome_correlation: Option<f64>,
    /// Classification agreed across separation thresholds in [4, 10] that
    /// were reached during the run.
    pub threshold_stable: bool,
    #[serde(skip)]
    pub spin_traces: Vec<SpinVectorTrace>,
}

/// First and second density moments of one spinor component at a slice.
fn component_moments(grid: &crate::grids::ComplexGrid) -> (f64, f64, f64) {
    let spec = &grid.spec;
    let mut w = 0.0;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (i, v) in grid.values.iter().enumerate() {
        let x = spec.coord(0, i);
        let d = v.norm_sqr();
        w += d;
        m1 += d * x;
        m2 += d * x * x;
    }
    if w <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let mean = m1 / w;
    let var = (m2 / w - mean * mean).max(0.0);
    (w * spec.cell_volume(), mean, var.sqrt())
}

/// Branch geometry of a spinor slice: (up center, down center, combined width).
fn branch_geometry(slice: &SpinorGrid) -> Option<(f64, f64, f64)> {
    let (w_up, c_up, s_up) = component_moments(&slice.up);
    let (w_dn, c_dn, s_dn) = component_moments(&slice.down);
    if w_up < 1e-9 || w_dn < 1e-9 {
        return None;
    }
    Some((c_up, c_dn, s_up + s_dn))
}

fn separation_in_widths(slice: &SpinorGrid) -> f64 {
    match branch_geometry(slice) {
        Some((c_up, c_dn, w)) if w > 0.0 => (c_up - c_dn).abs() / w,
        _ => 0.0,
    }
}

fn classify(z: f64, c_up: f64, c_dn: f64, combined_width: f64) -> Branch {
    let boundary = 0.5 * (c_up + c_dn);
    // a narrow dead zone around the boundary is reported, not guessed
    let dead = 0.05 * combined_width;
    if (z - boundary).abs() < dead {
        return Branch::Indeterminate;
    }
    let up_side = (c_up - boundary).signum();
    if (z - boundary).signum() == up_side {
        Branch::Up
    } else {
        Branch::Down
    }
}

pub fn run_stern_gerlach(cfg: &SternGerlachConfig) -> Result<OutcomeReport> {
    let (alpha, beta) = cfg.spin.amplitudes()?;
    let spec = GridSpec::new_1d(cfg.extent, cfg.points)?;
    let packet = gaussian_packet_1d(&spec, cfg.packet.center, cfg.packet.width, cfg.packet.momentum)?;
    let psi0 = SpinorGrid::new(packet.scale(alpha), packet.scale(beta))?;

    let steps = (cfg.total_time / cfg.dt).round() as usize;
    let history = evolve_pauli_history(&psi0, &Potential::None, &cfg.coupling, cfg.dt, steps, cfg.store_every, 0.0)?;

    // positions are sampled from the shared spatial density |packet|^2
    let samples = sample_density(&packet, &cfg.ensemble)?;

    let single_branch = alpha.norm_sqr() < 1e-12 || beta.norm_sqr() < 1e-12;

    // times at which the separation first crosses each stability threshold
    let thresholds = [4.0, 6.0, 8.0, 10.0];
    let mut crossing_times: Vec<(f64, f64)> = Vec::new(); // (threshold, time)
    if !single_branch {
        for &h in &thresholds {
            if let Some(i) = history.slices.iter().position(|s| separation_in_widths(s) >= h) {
                crossing_times.push((h, history.times[i]));
            }
        }
        let final_sep = separation_in_widths(history.final_state());
        if final_sep < cfg.separation_threshold {
            return Err(Error::NumericalQuality(format!(
                "inconclusive: branches separated by {final_sep:.2} combined widths (< {})",
                cfg.separation_threshold
            )));
        }
    }

    let t1 = *history.times.last().unwrap();
    let mut record: Vec<f64> = crossing_times.iter().map(|&(_, t)| t).collect();
    record.retain(|&t| t < t1);

    let field = SpinorHistoryField::new(&history)?;
    let trajs: Vec<Trajectory> = samples
        .par_iter()
        .map(|x0| integrate_trajectory(&field, x0, 0.0, t1, cfg.tolerance, &record))
        .collect::<Result<Vec<_>>>()?;
    let flagged_count = trajs.iter().filter(|t| t.flagged).count();

    let slice_at = |t: f64| -> &SpinorGrid {
        let i = history
            .times
            .iter()
            .position(|&u| (u - t).abs() < 1e-9)
            .expect("classification time is a stored time");
        &history.slices[i]
    };

    let label_at = |traj: &Trajectory, t: f64| -> Branch {
        if single_branch {
            return if alpha.norm_sqr() > 0.5 { Branch::Up } else { Branch::Down };
        }
        let (c_up, c_dn, w) = branch_geometry(slice_at(t)).expect("two branches present");
        let idx = traj.times.iter().position(|&u| (u - t).abs() < 1e-9).expect("recorded time");
        classify(traj.positions[idx][0], c_up, c_dn, w)
    };

    // classification at the end of the run
    let labels: Vec<Branch> =
        trajs.iter().map(|tr| if tr.flagged { Branch::Indeterminate } else { label_at(tr, t1) }).collect();

    // stability: the same trajectory classified at each crossed threshold
    let mut threshold_stable = true;
    if !single_branch {
        for (tr, &final_label) in trajs.iter().zip(&labels) {
            if tr.flagged || final_label == Branch::Indeterminate {
                continue;
            }
            for &(_, tcross) in &crossing_times {
                let t = tcross.min(t1);
                let l = label_at(tr, t);
                if l != Branch::Indeterminate && l != final_label {
                    threshold_stable = false;
                }
            }
        }
    }

    // flagged trajectories are labeled indeterminate, so the three counts
    // partition the ensemble and the fractions sum to one
    let up_count = labels.iter().filter(|&&l| l == Branch::Up).count();
    let down_count = labels.iter().filter(|&&l| l == Branch::Down).count();
    let indeterminate_count = labels.len() - up_count - down_count;

    // correlation of outcome with the initial half-ensemble
    // no-crossing makes the outcome a monotone function of the initial
    // position: report the agreement of the best single cut, which is 1.0
    // exactly when the outcomes are perfectly separable by initial side
    let correlation = if single_branch {
        None
    } else {
        let (c_up, c_dn, _) = branch_geometry(history.final_state()).unwrap();
        let up_is_high = c_up > c_dn;
        let mut pairs: Vec<(f64, bool)> = trajs
            .iter()
            .zip(labels.iter().zip(&samples))
            .filter(|(tr, (&l, _))| !tr.flagged && l != Branch::Indeterminate)
            .map(|(_, (&l, x0))| (x0[0], (l == Branch::Up) == up_is_high))
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if pairs.is_empty() {
            None
        } else {
            let total_high = pairs.iter().filter(|p| p.1).count();
            // agreement of cutting below index i: lows before i, highs after
            let mut best = total_high; // cut at index 0
            let mut highs_after = total_high;
            let mut lows_before = 0usize;
            for p in &pairs {
                if p.1 {
                    highs_after -= 1;
                } else {
                    lows_before += 1;
                }
                best = best.max(lows_before + highs_after);
            }
            Some(best as f64 / pairs.len() as f64)
        }
    };

    let mut spin_traces = Vec::new();
    for tr in trajs.iter().filter(|t| !t.flagged).take(cfg.spin_traces) {
        spin_traces.push(spin_vector_trace(&history, tr)?);
    }

    let n = trajs.len() as f64;
    Ok(OutcomeReport {
        up_fraction: up_count as f64 / n,
        down_fraction: down_count as f64 / n,
        indeterminate_fraction: indeterminate_count as f64 / n,
        up_count,
        down_count,
        indeterminate_count,
        flagged_count,
        ensemble_count: trajs.len(),
        classification_time: t1,
        separation_widths: if single_branch { 0.0 } else { separation_in_widths(history.final_state()) },
        position_outcome_correlation: correlation,
        threshold_stable,
        spin_traces,
    })
}

/// Configuration of the two-label branching demo: a labeled ground-state
/// functional driven apart in one mode by a label-conditioned kick.
#[derive(Debug, Clone)]
pub struct BranchingConfig {
    pub sites: usize,
    pub modes: usize,
    pub dispersion_scale: f64,
    /// Label amplitudes (c0, c1); normalized internally.
    pub weights: (C64, C64),
    /// Kick strength on mode 0: +kick for label 0, -kick for label 1.
    pub kick: f64,
    pub dt: f64,
    pub total_time: f64,
    pub store_every: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Site-profile width of the two-packet energy operator.
    pub emat_width: f64,
    /// Branch separation (combined widths in the kicked mode) required for
    /// the collapse check.
    pub separation_threshold: f64,
}

impl Default for BranchingConfig {
    fn default() -> Self {
        Self {
            sites: 32,
            modes: 2,
            dispersion_scale: 4.0,
            weights: (C64::new(0.5f64.sqrt(), 0.0), C64::new(0.5f64.sqrt(), 0.0)),
            kick: 20.0,
            dt: 2e-3,
            total_time: 1.0,
            store_every: 5,
            seed: 7,
            tolerance: 1e-9,
            emat_width: 2.0,
            separation_threshold: 8.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BranchingReport {
    pub energy_trace: EnergyDensityTrace,
    pub field_trace: Trajectory,
    /// Which branch the configuration ended in (0 or 1).
    pub collapsed_branch: usize,
    /// Off-branch density over on-branch density at the final configuration.
    pub contamination: f64,
    pub separation_widths: f64,
    /// Initial and final conditional energy profiles over sites.
    pub initial_energy: Vec<f64>,
    pub final_energy: Vec<f64>,
}

fn branching_setup(cfg: &BranchingConfig) -> Result<(WaveFunctional, LabelCoupling, HermitianField)> {
    let basis = ModeBasis::new(cfg.sites, cfg.modes, cfg.dispersion_scale)?;
    let w = WaveFunctional::labeled(basis, &[cfg.weights.0, cfg.weights.1])?;
    let coupling = LabelCoupling { mixing: None, kick: Some((0, vec![cfg.kick, -cfg.kick])) };
    let emat = HermitianField::two_packet(
        cfg.sites,
        cfg.sites as f64 * 0.25,
        cfg.sites as f64 * 0.75,
        cfg.emat_width,
    )?;
    Ok((w, coupling, emat))
}

/// Branch geometry in the kicked mode of a two-label functional whose
/// components are single Gaussian terms.
fn mode0_branches(w: &WaveFunctional) -> Result<(f64, f64, f64)> {
    if w.labels() != 2 || w.components.iter().any(|c| c.len() != 1) {
        return Err(Error::InvalidInput("expected two single-term components".into()));
    }
    let g0 = &w.components[0][0].modes[0];
    let g1 = &w.components[1][0].modes[0];
    let width = |a: C64| (1.0 / (4.0 * a.im)).sqrt();
    Ok((g0.center, g1.center, width(g0.width_a) + width(g1.width_a)))
}

pub fn run_branching_demo(cfg: &BranchingConfig) -> Result<BranchingReport> {
    let (w, coupling, emat) = branching_setup(cfg)?;
    let steps = (cfg.total_time / cfg.dt).round() as usize;
    let flow = FunctionalFlow::evolve(&w, cfg.dt, steps, cfg.store_every, Some(&coupling))?;

    let (c0, c1, combined) = mode0_branches(flow.final_state())?;
    let separation = (c0 - c1).abs() / combined;
    if separation < cfg.separation_threshold {
        return Err(Error::NumericalQuality(format!(
            "inconclusive: branch separation {separation:.2} combined widths (< {})",
            cfg.separation_threshold
        )));
    }

    let q0 = sample_functional(&w, 1, cfg.seed)?.remove(0);
    let t1 = *flow.times.last().unwrap();
    let record: Vec<f64> = flow.times[1..flow.times.len() - 1].to_vec();
    let traj = integrate_trajectory(&flow, &q0, 0.0, t1, cfg.tolerance, &record)?;

    // conditional energy density along the trajectory at stored times
    let mut energy_trace = EnergyDensityTrace { times: vec![], values: vec![] };
    for (t, q) in traj.times.iter().zip(&traj.positions) {
        if let Some(i) = flow.times.iter().position(|&u| (u - *t).abs() < 1e-9) {
            energy_trace.times.push(*t);
            energy_trace.values.push(energy_density(&flow.snapshots[i], q, &emat)?);
        }
    }

    let w_final = flow.final_state();
    let qf = traj.final_position();
    let d0 = w_final.value(0, qf).norm_sqr();
    let d1 = w_final.value(1, qf).norm_sqr();
    let (collapsed_branch, contamination) =
        if d0 >= d1 { (0, d1 / d0) } else { (1, d0 / d1) };

    Ok(BranchingReport {
        initial_energy: energy_trace.values.first().cloned().unwrap_or_default(),
        final_energy: energy_trace.values.last().cloned().unwrap_or_default(),
        energy_trace,
        field_trace: traj,
        collapsed_branch,
        contamination,
        separation_widths: separation,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchingFrequencies {
    pub runs: usize,
    pub branch0_count: usize,
    pub branch1_count: usize,
    pub flagged_count: usize,
    pub branch0_fraction: f64,
    /// Born weight |c0|^2 the fraction is compared against.
    pub branch0_weight: f64,
}

/// Repeat the branching demo over `runs` equilibrium-sampled initial
/// configurations (one shared functional evolution) and tally outcomes.
pub fn branching_frequencies(cfg: &BranchingConfig, runs: usize) -> Result<BranchingFrequencies> {
    let (w, coupling, _) = branching_setup(cfg)?;
    let steps = (cfg.total_time / cfg.dt).round() as usize;
    let flow = FunctionalFlow::evolve(&w, cfg.dt, steps, cfg.store_every, Some(&coupling))?;
    let (c0, c1, combined) = mode0_branches(flow.final_state())?;
    if (c0 - c1).abs() / combined < cfg.separation_threshold {
        return Err(Error::NumericalQuality("inconclusive: branches not separated".into()));
    }
    let boundary = 0.5 * (c0 + c1);

    let samples = sample_functional(&w, runs, cfg.seed)?;
    let t1 = *flow.times.last().unwrap();
    let trajs: Vec<Trajectory> = samples
        .par_iter()
        .map(|q0| integrate_trajectory(&flow, q0, 0.0, t1, cfg.tolerance, &[]))
        .collect::<Result<Vec<_>>>()?;
    let flagged_count = trajs.iter().filter(|t| t.flagged).count();
    let mut n0 = 0usize;
    let mut n1 = 0usize;
    for tr in trajs.iter().filter(|t| !t.flagged) {
        let q = tr.final_position()[0];
        if (q > boundary) == (c0 > boundary) {
            n0 += 1;
        } else {
            n1 += 1;
        }
    }
    let total = (n0 + n1) as f64;
    let weight0 = cfg.weights.0.norm_sqr() / (cfg.weights.0.norm_sqr() + cfg.weights.1.norm_sqr());
    Ok(BranchingFrequencies {
        runs,
        branch0_count: n0,
        branch1_count: n1,
        flagged_count,
        branch0_fraction: if total > 0.0 { n0 as f64 / total } else { 0.0 },
        branch0_weight: weight0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_sg(spin: SpinState, count: usize, seed: u64) -> SternGerlachConfig {
        let mut cfg = SternGerlachConfig::new(spin, EnsembleSpec::new_1d(count, seed));
        // coarser run for unit tests; acceptance exercises full resolution
        cfg.points = 1024;
        cfg.dt = 2e-3;
        cfg.store_every = 5;
        cfg
    }

    #[test]
    fn z_up_is_deterministic_up() {
        let report = run_stern_gerlach(&small_sg(SpinState::ZUp, 200, 1)).unwrap();
        assert_eq!(report.up_count, 200);
        assert_eq!(report.up_fraction, 1.0);
        assert_eq!(report.flagged_count, 0);
        assert!(report.position_outcome_correlation.is_none());
    }

    #[test]
    fn z_down_is_deterministic_down() {
        let report = run_stern_gerlach(&small_sg(SpinState::ZDown, 150, 2)).unwrap();
        assert_eq!(report.down_fraction, 1.0);
    }

    #[test]
    fn x_up_splits_near_half() {
        let report = run_stern_gerlach(&small_sg(SpinState::XUp, 2000, 3)).unwrap();
        assert!(report.separation_widths > 6.0, "separation {}", report.separation_widths);
        assert!(report.indeterminate_fraction < 0.01, "indeterminate {}", report.indeterminate_fraction);
        // 3 binomial SE at n = 2000 is 0.034
        assert!((report.up_fraction - 0.5).abs() < 0.04, "up {}", report.up_fraction);
        assert_eq!(report.position_outcome_correlation, Some(1.0));
        assert!(report.threshold_stable);
        assert_eq!(report.spin_traces.len(), 8);
    }

    #[test]
    fn general_spinor_matches_born_weight() {
        let alpha = C64::new(0.8, 0.0);
        let beta = C64::new(0.0, 0.6);
        let spin = SpinState::General { alpha, beta };
        let report = run_stern_gerlach(&small_sg(spin, 2000, 4)).unwrap();
        let se = (0.64f64 * 0.36 / 2000.0).sqrt();
        assert!((report.up_fraction - 0.64).abs() < 3.0 * se, "up {} vs 0.64 +- {}", report.up_fraction, 3.0 * se);
    }

    #[test]
    fn outcome_report_is_seed_deterministic() {
        let a = run_stern_gerlach(&small_sg(SpinState::XUp, 300, 5)).unwrap();
        let b = run_stern_gerlach(&small_sg(SpinState::XUp, 300, 5)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = run_stern_gerlach(&small_sg(SpinState::XUp, 300, 6)).unwrap();
        assert_ne!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    }

    #[test]
    fn spin_traces_settle_on_branch_values() {
        let report = run_stern_gerlach(&small_sg(SpinState::XUp, 200, 8)).unwrap();
        for trace in &report.spin_traces {
            let s = trace.spins.last().unwrap();
            assert!((s[2].abs() - 0.5).abs() < 1e-3, "final s_z {}", s[2]);
        }
    }

    #[test]
    fn branching_demo_collapses_energy_density() {
        let cfg = BranchingConfig::default();
        let report = run_branching_demo(&cfg).unwrap();
        assert!(report.separation_widths > 8.0);
        assert!(report.contamination < 1e-6, "contamination {}", report.contamination);
        // final energy profile equals the collapsed branch's diagonal profile
        let emat = branching_setup(&cfg).unwrap().2;
        let b = report.collapsed_branch;
        for (x, e) in report.final_energy.iter().enumerate() {
            let pure = emat.at(x, b, b).re;
            assert!((e - pure).abs() < 1e-6, "site {x}: {e} vs {pure}");
        }
    }

    #[test]
    fn branching_without_coupling_keeps_energy_constant() {
        let cfg = BranchingConfig::default();
        let (w, _, emat) = branching_setup(&cfg).unwrap();
        let flow = FunctionalFlow::evolve(&w, cfg.dt, 100, 10, None).unwrap();
        let q0 = sample_functional(&w, 1, 3).unwrap().remove(0);
        let record = &flow.times[1..flow.times.len() - 1];
        let traj = integrate_trajectory(&flow, &q0, 0.0, 0.2, 1e-9, record).unwrap();
        let e0 = energy_density(&flow.snapshots[0], &traj.positions[0], &emat).unwrap();
        for (t, q) in traj.times.iter().zip(&traj.positions) {
            let i = flow.times.iter().position(|&u| (u - *t).abs() < 1e-9).unwrap();
            let e = energy_density(&flow.snapshots[i], q, &emat).unwrap();
            for (a, b) in e.iter().zip(&e0) {
                assert!((a - b).abs() < 1e-9, "energy drifted at t={t}");
            }
        }
    }

    #[test]
    fn branching_frequencies_match_weights() {
        let mut cfg = BranchingConfig::default();
        cfg.weights = (C64::new(0.6, 0.0), C64::new(0.8, 0.0));
        let freq = branching_frequencies(&cfg, 400).unwrap();
        assert_eq!(freq.flagged_count, 0);
        let se = (0.36f64 * 0.64 / 400.0).sqrt();
        assert!(
            (freq.branch0_fraction - 0.36).abs() < 3.0 * se,
            "fraction {} vs 0.36 +- {}",
            freq.branch0_fraction,
            3.0 * se
        );
    }
}
