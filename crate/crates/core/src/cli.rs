//! Command-line front end: TOML configuration with strict schemas,
//! deterministic columnar/JSON outputs written atomically, and a run
//! manifest with config and file checksums.
//!
//! Exit codes: 0 success, 1 configuration/validation error, 2 numerical-
//! quality failure (norm drift, inconclusive run, flagged fraction), 3
//! statistical-test failure.

use clap::{Parser, Subcommand};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::equilibrium::{check_equivariance, EnsembleSpec, EquivarianceOptions, Sampler};
use crate::error::{Error, Result};
use crate::evolution::{
    evolve_schrodinger_history, gaussian_packet_1d, PauliCoupling, Potential,
};
use crate::fieldmodes::{sample_functional, FunctionalFlow, ModeBasis, WaveFunctional};
use crate::grids::GridSpec;
use crate::guidance::{integrate_trajectory, HistoryField, Trajectory};
use crate::scenarios::{
    branching_frequencies, run_branching_demo, run_stern_gerlach, BranchingConfig, PacketParams,
    SpinState, SternGerlachConfig,
};

#[derive(Parser)]
#[command(name = "pilotwave", version, about = "Pilot-wave dynamics laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Path to a TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key: section.key=value (repeatable).
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,
    /// Override the ensemble / sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for ensemble fan-out (default: machine parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Evolve a wave function and write the stored density slices.
    Evolve,
    /// Integrate trajectories through an evolved wave function.
    Trajectories,
    /// Equilibrium-ensemble equivariance check.
    Equivariance,
    /// Field-mode functional evolution and a guided field trajectory.
    Fieldmodes,
    /// Macroscopic-distinguishability bound reports.
    Bounds,
    /// Stern-Gerlach outcome statistics.
    Sterngerlach,
    /// Two-label branching demo with conditional energy density.
    Branching,
}

// ---------------------------------------------------------------- config --

fn default_store_every() -> usize {
    10
}
fn default_tolerance() -> f64 {
    1e-8
}
fn default_margin() -> f64 {
    100.0
}
fn default_significance() -> f64 {
    0.01
}
fn default_velocity_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub grid: Option<GridSection>,
    pub packet: Option<PacketSection>,
    pub potential: Option<PotentialSection>,
    pub evolution: Option<EvolutionSection>,
    pub ensemble: Option<EnsembleSection>,
    pub equivariance: Option<EquivarianceSection>,
    pub trajectories: Option<TrajectoriesSection>,
    pub spin: Option<SpinSection>,
    pub coupling: Option<CouplingSection>,
    pub sterngerlach: Option<SternGerlachSection>,
    pub fieldmodes: Option<FieldmodesSection>,
    pub branching: Option<BranchingSection>,
    pub bounds: Option<BoundsSection>,
    pub run: Option<RunSection>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub extent: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PacketSection {
    #[serde(default)]
    pub center: f64,
    pub width: f64,
    #[serde(default)]
    pub momentum: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
pub enum PotentialSection {
    None,
    Harmonic { omega: f64 },
    Barrier { height: f64, width: f64 },
}

impl PotentialSection {
    fn build(&self) -> Potential {
        match *self {
            PotentialSection::None => Potential::None,
            PotentialSection::Harmonic { omega } => Potential::Harmonic { omega },
            PotentialSection::Barrier { height, width } => Potential::Barrier { height, width },
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSection {
    pub dt: f64,
    pub total_time: f64,
    #[serde(default = "default_store_every")]
    pub store_every: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub count: usize,
    pub seed: u64,
    #[serde(default)]
    pub sampler: Option<Sampler>,
}

impl EnsembleSection {
    fn build(&self, dim: usize) -> EnsembleSpec {
        let sampler = self.sampler.unwrap_or(if dim == 1 {
            Sampler::InverseCdf
        } else {
            Sampler::Rejection
        });
        EnsembleSpec { count: self.count, seed: self.seed, sampler }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EquivarianceSection {
    pub probe_times: Vec<f64>,
    #[serde(default = "default_significance")]
    pub significance: f64,
    #[serde(default = "default_velocity_scale")]
    pub velocity_scale: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoriesSection {
    /// 1D starting positions.
    pub starts: Vec<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SpinSection {
    /// "z-up", "z-down", "x-up", or "general".
    pub state: String,
    /// (re, im) pairs, required for "general".
    pub alpha: Option<[f64; 2]>,
    pub beta: Option<[f64; 2]>,
}

impl SpinSection {
    fn build(&self) -> Result<SpinState> {
        match self.state.as_str() {
            "z-up" => Ok(SpinState::ZUp),
            "z-down" => Ok(SpinState::ZDown),
            "x-up" => Ok(SpinState::XUp),
            "general" => {
                let a = self.alpha.ok_or_else(|| Error::Config("general spin needs alpha".into()))?;
                let b = self.beta.ok_or_else(|| Error::Config("general spin needs beta".into()))?;
                Ok(SpinState::General {
                    alpha: C64::new(a[0], a[1]),
                    beta: C64::new(b[0], b[1]),
                })
            }
            other => Err(Error::Config(format!("unknown spin state '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    pub mu: f64,
    #[serde(default)]
    pub b0: f64,
    pub b_grad: f64,
    pub t_on: f64,
    pub t_off: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SternGerlachSection {
    #[serde(default = "default_sg_threshold")]
    pub separation_threshold: f64,
    #[serde(default = "default_spin_traces")]
    pub spin_traces: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_sg_threshold() -> f64 {
    6.0
}
fn default_spin_traces() -> usize {
    8
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FieldmodesSection {
    pub sites: usize,
    pub modes: usize,
    pub dispersion_scale: f64,
    /// Per-mode coherent centers/momenta; all zero = ground state.
    #[serde(default)]
    pub centers: Vec<f64>,
    #[serde(default)]
    pub momenta: Vec<f64>,
    pub dt: f64,
    pub total_time: f64,
    #[serde(default = "default_store_every")]
    pub store_every: usize,
    pub seed: u64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BranchingSection {
    pub sites: usize,
    pub modes: usize,
    pub dispersion_scale: f64,
    /// |weight|^2 of label 0; label 1 carries the rest.
    pub weight0_sq: f64,
    pub kick: f64,
    pub dt: f64,
    pub total_time: f64,
    #[serde(default = "default_store_every")]
    pub store_every: usize,
    pub seed: u64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    pub emat_width: f64,
    #[serde(default = "default_branch_threshold")]
    pub separation_threshold: f64,
    /// When set, also tally branch frequencies over this many runs.
    pub runs: Option<usize>,
}

fn default_branch_threshold() -> f64 {
    8.0
}

/// Bound inputs accept plain numbers or strings with an SI-prefixed unit
/// ("1e-35 m", "10 fm", "1e30 1/m^3"). SI suffixes are honored only here.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum SiValue {
    Number(f64),
    Text(String),
}

impl SiValue {
    pub fn value(&self) -> Result<f64> {
        match self {
            SiValue::Number(x) => Ok(*x),
            SiValue::Text(s) => parse_si(s),
        }
    }
}

/// Parse "<float> [prefix]unit" where unit is m, m^3, 1/m or 1/m^3 and the
/// prefix is a standard SI prefix applied per power of the length unit.
pub fn parse_si(s: &str) -> Result<f64> {
    let s = s.trim();
    let split = s
        .find(|c: char| !(c.is_ascii_digit() || "+-.eE".contains(c)))
        .unwrap_or(s.len());
    let (num, rest) = s.split_at(split);
    let x: f64 = num
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad number in '{s}'")))?;
    let unit = rest.trim();
    if unit.is_empty() {
        return Ok(x);
    }
    let (inverse, unit) = match unit.strip_prefix("1/").or_else(|| unit.strip_prefix('/')) {
        Some(u) => (true, u),
        None => (false, unit),
    };
    let (prefix, base) = if unit.len() > 1 && (unit.ends_with('m') || unit.ends_with("m^3")) {
        let base_len = if unit.ends_with("m^3") { 3 } else { 1 };
        unit.split_at(unit.len() - base_len)
    } else {
        ("", unit)
    };
    let power = match base {
        "m" => 1,
        "m^3" => 3,
        other => return Err(Error::Config(format!("unsupported unit '{other}' in '{s}'"))),
    };
    let factor: f64 = match prefix {
        "" => 1.0,
        "y" => 1e-24,
        "z" => 1e-21,
        "a" => 1e-18,
        "f" => 1e-15,
        "p" => 1e-12,
        "n" => 1e-9,
        "u" => 1e-6,
        "c" => 1e-2,
        "k" => 1e3,
        "M" => 1e6,
        "G" => 1e9,
        other => return Err(Error::Config(format!("unsupported SI prefix '{other}' in '{s}'"))),
    };
    let scale = factor.powi(power);
    Ok(if inverse { x / scale } else { x * scale })
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    /// Euler-angle resolution scale a.
    pub a: Option<SiValue>,
    /// Particle density rho.
    pub rho: SiValue,
    /// Momentum cutoff Lambda.
    pub lambda: SiValue,
    /// Optional probe region size L for the Euler-angle bound.
    pub probe_length: Option<SiValue>,
    /// Optional probe volume for the sea bound.
    pub probe_volume: Option<SiValue>,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub threads: Option<usize>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    /// SHA-256 of the canonical (sorted-key JSON) form; stable under TOML
    /// key reordering.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        // serde_json maps are ordered; route through Value to sort keys
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let canonical = serde_json::to_string(&sorted(v)).unwrap();
        hex(&Sha256::digest(canonical.as_bytes()))
    }
}

fn sorted(v: serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::Object(map) => {
            let mut entries: Vec<(String, serde_json::Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            serde_json::Value::Object(entries.into_iter().map(|(k, x)| (k, sorted(x))).collect())
        }
        serde_json::Value::Array(xs) => {
            serde_json::Value::Array(xs.into_iter().map(sorted).collect())
        }
        other => other,
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn io_err(msg: String) -> Error {
    Error::Io(std::io::Error::other(msg))
}

/// Apply a `--set section.key=value` override onto the TOML document.
fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not key=value")))?;
    // parse the right-hand side as a TOML value (number, bool, array,
    // quoted string); bare words fall back to strings
    let value: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path '{path}' crosses a non-table")))?;
        if i == parts.len() - 1 {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    Ok(())
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut doc: toml::Value = text
        .parse()
        .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
    if !overrides.is_empty() && !doc.is_table() {
        doc = toml::Value::Table(Default::default());
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
    Config::from_toml(&text)
}

// --------------------------------------------------------------- outputs --

/// Serialize a float with 17 significant digits.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

struct OutputWriter {
    dir: PathBuf,
    files: Vec<(String, String)>, // name, sha256
}

impl OutputWriter {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| io_err(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    /// Atomic write: temp file in the target directory, then rename.
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)
            .map_err(|e| io_err(format!("temp file: {e}")))?;
        tmp.write_all(contents.as_bytes())
            .map_err(|e| io_err(format!("write {name}: {e}")))?;
        tmp.persist(&path).map_err(|e| io_err(format!("rename {name}: {e}")))?;
        self.files.push((name.to_string(), hex(&Sha256::digest(contents.as_bytes()))));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let json = serde_json::to_string_pretty(value)
            .map_err(|e| io_err(format!("serialize {name}: {e}")))?;
        self.write(name, &(json + "\n"))
    }
}

#[derive(Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub files: Vec<ManifestFile>,
}

#[derive(Serialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn columnar(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

fn trajectories_table(trajs: &[Trajectory]) -> String {
    let dim = trajs.first().map(|t| t.positions[0].len()).unwrap_or(1);
    let mut header = vec!["trajectory".to_string(), "time".to_string()];
    for d in 0..dim {
        header.push(format!("x{d}"));
    }
    header.push("flagged".to_string());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    columnar(
        &header_refs,
        trajs.iter().enumerate().flat_map(|(i, tr)| {
            tr.times.iter().zip(&tr.positions).map(move |(t, x)| {
                let mut row = vec![i.to_string(), fmt_f64(*t)];
                row.extend(x.iter().map(|v| fmt_f64(*v)));
                row.push((tr.flagged as u8).to_string());
                row
            })
        }),
    )
}

// -------------------------------------------------------------- commands --

fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
    section.as_ref().ok_or_else(|| Error::Config(format!("missing [{name}] section")))
}

struct Ctx<'a> {
    cfg: &'a Config,
    out: OutputWriter,
    seed: Option<u64>,
    quiet: bool,
}

impl Ctx<'_> {
    fn say(&self, msg: &str) {
        if !self.quiet {
            println!("{msg}");
        }
    }
}

fn scalar_history(cfg: &Config) -> Result<(GridSpec, crate::evolution::WaveHistory)> {
    let grid = require(&cfg.grid, "grid")?;
    let packet = require(&cfg.packet, "packet")?;
    let evo = require(&cfg.evolution, "evolution")?;
    let potential = cfg.potential.clone().unwrap_or(PotentialSection::None).build();
    let spec = GridSpec::new_1d(grid.extent, grid.points)?;
    let psi0 = gaussian_packet_1d(&spec, packet.center, packet.width, packet.momentum)?;
    let steps = (evo.total_time / evo.dt).round() as usize;
    let hist = evolve_schrodinger_history(&psi0, &potential, evo.dt, steps, evo.store_every, 0.0)?;
    Ok((spec, hist))
}

fn cmd_evolve(ctx: &mut Ctx) -> Result<()> {
    let (spec, hist) = scalar_history(ctx.cfg)?;
    let spec = &spec;
    let rows = hist.times.iter().zip(&hist.slices).flat_map(|(t, slice)| {
        slice.values.iter().enumerate().map(move |(i, v)| {
            vec![fmt_f64(*t), fmt_f64(spec.coord(0, i)), fmt_f64(v.re), fmt_f64(v.im)]
        })
    });
    let table = columnar(&["time", "x", "re", "im"], rows);
    ctx.out.write("wavefunction.tsv", &table)?;
    #[derive(Serialize)]
    struct EvolveReport {
        stored_slices: usize,
        final_time: f64,
        max_norm_drift: f64,
        max_guard_mass: f64,
    }
    ctx.out.write_json(
        "evolve_report.json",
        &EvolveReport {
            stored_slices: hist.slices.len(),
            final_time: *hist.times.last().unwrap(),
            max_norm_drift: hist.max_norm_drift,
            max_guard_mass: hist.max_guard_mass,
        },
    )?;
    ctx.say(&format!(
        "evolved to t = {}, norm drift {:.2e}",
        hist.times.last().unwrap(),
        hist.max_norm_drift
    ));
    Ok(())
}

fn cmd_trajectories(ctx: &mut Ctx) -> Result<()> {
    let tr_cfg = require(&ctx.cfg.trajectories, "trajectories")?.clone();
    let (_, hist) = scalar_history(ctx.cfg)?;
    let field = HistoryField::new(&hist)?;
    let t1 = *hist.times.last().unwrap();
    let record: Vec<f64> = hist.times[1..hist.times.len() - 1].to_vec();
    let trajs: Vec<Trajectory> = tr_cfg
        .starts
        .iter()
        .map(|&x0| integrate_trajectory(&field, &[x0], 0.0, t1, tr_cfg.tolerance, &record))
        .collect::<Result<Vec<_>>>()?;
    ctx.out.write("trajectories.tsv", &trajectories_table(&trajs))?;
    let flagged = trajs.iter().filter(|t| t.flagged).count();
    ctx.say(&format!("{} trajectories, {} flagged", trajs.len(), flagged));
    if flagged > 0 {
        return Err(Error::NumericalQuality(format!("{flagged} flagged trajectories")));
    }
    Ok(())
}

fn cmd_equivariance(ctx: &mut Ctx) -> Result<()> {
    let grid = require(&ctx.cfg.grid, "grid")?;
    let packet = require(&ctx.cfg.packet, "packet")?;
    let evo = require(&ctx.cfg.evolution, "evolution")?;
    let ens = require(&ctx.cfg.ensemble, "ensemble")?;
    let eq = require(&ctx.cfg.equivariance, "equivariance")?;
    let potential = ctx.cfg.potential.clone().unwrap_or(PotentialSection::None).build();
    let spec = GridSpec::new_1d(grid.extent, grid.points)?;
    let psi0 = gaussian_packet_1d(&spec, packet.center, packet.width, packet.momentum)?;
    let mut ensemble = ens.build(1);
    if let Some(seed) = ctx.seed {
        ensemble.seed = seed;
    }
    let opts = EquivarianceOptions {
        dt: evo.dt,
        store_every: evo.store_every,
        tolerance: eq.tolerance,
        significance: eq.significance,
        velocity_scale: eq.velocity_scale,
    };
    let report = check_equivariance(&psi0, &potential, &ensemble, &eq.probe_times, &opts)?;
    ctx.out.write_json("equivariance.json", &report)?;
    ctx.say(&format!(
        "equivariance: pass = {}, flagged = {}/{}",
        report.pass, report.flagged_count, report.ensemble_count
    ));
    if report.inconclusive {
        return Err(Error::NumericalQuality("flagged fraction above 1%".into()));
    }
    if !report.pass {
        return Err(Error::StatisticalFailure("equivariance KS test failed".into()));
    }
    Ok(())
}

fn cmd_fieldmodes(ctx: &mut Ctx) -> Result<()> {
    let fm = require(&ctx.cfg.fieldmodes, "fieldmodes")?.clone();
    let basis = ModeBasis::new(fm.sites, fm.modes, fm.dispersion_scale)?;
    let w = if fm.centers.iter().chain(&fm.momenta).any(|&x| x != 0.0) {
        let mut centers = fm.centers.clone();
        let mut momenta = fm.momenta.clone();
        centers.resize(fm.modes, 0.0);
        momenta.resize(fm.modes, 0.0);
        WaveFunctional::coherent(basis, &centers, &momenta)?
    } else {
        WaveFunctional::ground(basis)
    };
    let steps = (fm.total_time / fm.dt).round() as usize;
    let flow = FunctionalFlow::evolve(&w, fm.dt, steps, fm.store_every, None)?;
    let seed = ctx.seed.unwrap_or(fm.seed);
    let q0 = sample_functional(&w, 1, seed)?.remove(0);
    let t1 = *flow.times.last().unwrap();
    let record: Vec<f64> = flow.times[1..flow.times.len() - 1].to_vec();
    let traj = integrate_trajectory(&flow, &q0, 0.0, t1, fm.tolerance, &record)?;
    ctx.out.write("field_trajectory.tsv", &trajectories_table(std::slice::from_ref(&traj)))?;
    #[derive(Serialize)]
    struct FieldReport {
        modes: usize,
        final_norm_sq: f64,
        flagged: bool,
    }
    ctx.out.write_json(
        "fieldmodes_report.json",
        &FieldReport {
            modes: fm.modes,
            final_norm_sq: flow.final_state().norm_sq(),
            flagged: traj.flagged,
        },
    )?;
    ctx.say(&format!("field trajectory over {} modes to t = {t1}", fm.modes));
    if traj.flagged {
        return Err(Error::NumericalQuality("field trajectory flagged".into()));
    }
    Ok(())
}

fn cmd_bounds(ctx: &mut Ctx) -> Result<()> {
    let b = require(&ctx.cfg.bounds, "bounds")?.clone();
    let rho = b.rho.value()?;
    let lambda = b.lambda.value()?;
    let margin = b.margin;
    let mut reports = Vec::new();
    if let Some(a) = &b.a {
        let probe = b.probe_length.as_ref().map(|p| p.value()).transpose()?;
        reports.push(crate::adequacy::euler_angle_report(a.value()?, rho, probe, margin)?);
    }
    let probe_v = b.probe_volume.as_ref().map(|p| p.value()).transpose()?;
    let (vol, rad) = crate::adequacy::dirac_sea_reports(lambda, rho, probe_v, margin)?;
    reports.push(vol);
    reports.push(rad);
    reports.push(crate::adequacy::density_ratio_report(rho, lambda)?);
    ctx.out.write_json("bounds.json", &reports)?;
    for r in &reports {
        ctx.say(&format!("{:?}: threshold {:.6e} {}", r.id, r.threshold, r.threshold_unit));
    }
    Ok(())
}

fn cmd_sterngerlach(ctx: &mut Ctx) -> Result<()> {
    let grid = require(&ctx.cfg.grid, "grid")?;
    let packet = require(&ctx.cfg.packet, "packet")?;
    let evo = require(&ctx.cfg.evolution, "evolution")?;
    let ens = require(&ctx.cfg.ensemble, "ensemble")?;
    let spin = require(&ctx.cfg.spin, "spin")?.build()?;
    let coupling = require(&ctx.cfg.coupling, "coupling")?;
    let sg = ctx.cfg.sterngerlach.clone().unwrap_or(SternGerlachSection {
        separation_threshold: default_sg_threshold(),
        spin_traces: default_spin_traces(),
        tolerance: default_tolerance(),
    });
    let mut ensemble = ens.build(1);
    if let Some(seed) = ctx.seed {
        ensemble.seed = seed;
    }
    let cfg = SternGerlachConfig {
        extent: grid.extent,
        points: grid.points,
        spin,
        packet: PacketParams {
            center: packet.center,
            width: packet.width,
            momentum: packet.momentum,
        },
        coupling: PauliCoupling {
            mu: coupling.mu,
            b0: coupling.b0,
            b_grad: coupling.b_grad,
            t_on: coupling.t_on,
            t_off: coupling.t_off,
            spatial_window: None,
        },
        dt: evo.dt,
        total_time: evo.total_time,
        store_every: evo.store_every,
        ensemble,
        tolerance: sg.tolerance,
        separation_threshold: sg.separation_threshold,
        spin_traces: sg.spin_traces,
    };
    let report = run_stern_gerlach(&cfg)?;
    ctx.out.write_json("stern_gerlach.json", &report)?;
    let rows = report.spin_traces.iter().enumerate().flat_map(|(i, trace)| {
        trace.times.iter().zip(&trace.spins).zip(&trace.indeterminate).map(
            move |((t, s), ind)| {
                vec![
                    i.to_string(),
                    fmt_f64(*t),
                    fmt_f64(s[0]),
                    fmt_f64(s[1]),
                    fmt_f64(s[2]),
                    (*ind as u8).to_string(),
                ]
            },
        )
    });
    let table = columnar(&["trace", "time", "sx", "sy", "sz", "indeterminate"], rows);
    ctx.out.write("spin_traces.tsv", &table)?;
    ctx.say(&format!(
        "up {:.4} / down {:.4} / indeterminate {:.4} (flagged {})",
        report.up_fraction, report.down_fraction, report.indeterminate_fraction, report.flagged_count
    ));
    if report.flagged_count as f64 > 0.01 * report.ensemble_count as f64 {
        return Err(Error::NumericalQuality("flagged fraction above 1%".into()));
    }
    Ok(())
}

fn cmd_branching(ctx: &mut Ctx) -> Result<()> {
    let br = require(&ctx.cfg.branching, "branching")?.clone();
    if !(br.weight0_sq > 0.0 && br.weight0_sq < 1.0) {
        return Err(Error::Config("weight0_sq must lie in (0, 1)".into()));
    }
    let cfg = BranchingConfig {
        sites: br.sites,
        modes: br.modes,
        dispersion_scale: br.dispersion_scale,
        weights: (
            C64::new(br.weight0_sq.sqrt(), 0.0),
            C64::new((1.0 - br.weight0_sq).sqrt(), 0.0),
        ),
        kick: br.kick,
        dt: br.dt,
        total_time: br.total_time,
        store_every: br.store_every,
        seed: ctx.seed.unwrap_or(br.seed),
        tolerance: br.tolerance,
        emat_width: br.emat_width,
        separation_threshold: br.separation_threshold,
    };
    let report = run_branching_demo(&cfg)?;
    let rows = report.energy_trace.times.iter().zip(&report.energy_trace.values).flat_map(
        |(t, sites)| {
            sites
                .iter()
                .enumerate()
                .map(move |(x, e)| vec![fmt_f64(*t), x.to_string(), fmt_f64(*e)])
        },
    );
    ctx.out.write("energy_density.tsv", &columnar(&["time", "site", "energy"], rows))?;
    ctx.out
        .write("field_trace.tsv", &trajectories_table(std::slice::from_ref(&report.field_trace)))?;
    #[derive(Serialize)]
    struct BranchReport<'a> {
        collapsed_branch: usize,
        contamination: f64,
        separation_widths: f64,
        initial_energy: &'a [f64],
        final_energy: &'a [f64],
        frequencies: Option<crate::scenarios::BranchingFrequencies>,
    }
    let frequencies = match br.runs {
        Some(runs) => Some(branching_frequencies(&cfg, runs)?),
        None => None,
    };
    ctx.out.write_json(
        "branching.json",
        &BranchReport {
            collapsed_branch: report.collapsed_branch,
            contamination: report.contamination,
            separation_widths: report.separation_widths,
            initial_energy: &report.initial_energy,
            final_energy: &report.final_energy,
            frequencies,
        },
    )?;
    ctx.say(&format!(
        "collapsed to branch {} (contamination {:.2e})",
        report.collapsed_branch, report.contamination
    ));
    Ok(())
}

// ------------------------------------------------------------ entrypoint --

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidInput(_) | Error::InvalidGrid(_) | Error::Io(_) => 1,
        Error::NumericalQuality(_) | Error::NonFinite(_) => 2,
        Error::StatisticalFailure(_) => 3,
    }
}

/// Run the CLI with explicit arguments; returns the process exit code.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version with its own success exit
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run() -> i32 {
    run_with_args(std::env::args_os())
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    let threads = cli.threads.or(cfg.run.as_ref().and_then(|r| r.threads));
    if let Some(threads) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let started = unix_now();
    let mut ctx = Ctx {
        cfg: &cfg,
        out: OutputWriter::new(&out_dir)?,
        seed: cli.seed,
        quiet: cli.quiet,
    };
    let name = match cli.command {
        Command::Evolve => "evolve",
        Command::Trajectories => "trajectories",
        Command::Equivariance => "equivariance",
        Command::Fieldmodes => "fieldmodes",
        Command::Bounds => "bounds",
        Command::Sterngerlach => "sterngerlach",
        Command::Branching => "branching",
    };
    let result = match cli.command {
        Command::Evolve => cmd_evolve(&mut ctx),
        Command::Trajectories => cmd_trajectories(&mut ctx),
        Command::Equivariance => cmd_equivariance(&mut ctx),
        Command::Fieldmodes => cmd_fieldmodes(&mut ctx),
        Command::Bounds => cmd_bounds(&mut ctx),
        Command::Sterngerlach => cmd_sterngerlach(&mut ctx),
        Command::Branching => cmd_branching(&mut ctx),
    };
    // the manifest is written even for failed runs so partial outputs are
    // accounted for
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        command: name.to_string(),
        config_hash: cfg.hash(),
        seed: cli.seed,
        started_unix: started,
        finished_unix: unix_now(),
        files: ctx
            .out
            .files
            .iter()
            .map(|(name, sha256)| ManifestFile { name: name.clone(), sha256: sha256.clone() })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| io_err(format!("manifest: {e}")))?;
    ctx.out.write("manifest.json", &(json + "\n"))?;
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let err = Config::from_toml("[grid]\nextent = 10.0\npoints = 64\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
    }

    #[test]
    fn config_hash_stable_under_key_reordering() {
        let a = Config::from_toml("[grid]\nextent = 10.0\npoints = 64\n").unwrap();
        let b = Config::from_toml("[grid]\npoints = 64\nextent = 10.0\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = Config::from_toml("[grid]\npoints = 128\nextent = 10.0\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn si_parsing() {
        let close = |s: &str, want: f64| {
            let got = parse_si(s).unwrap();
            assert!((got / want - 1.0).abs() < 1e-12, "{s}: {got} vs {want}");
        };
        close("1e-35 m", 1e-35);
        close("10 fm", 10e-15);
        close("2 um", 2e-6);
        close("1e30 1/m^3", 1e30);
        // prefixes scale per power: 1 um^3 = 1e-18 m^3
        close("1 um^3", 1e-18);
        // and invert for reciprocal units: 1 /um = 1e6 /m
        close("1 /um", 1e6);
        close("42", 42.0);
        assert!(parse_si("1 parsec").is_err());
    }

    #[test]
    fn overrides_apply_and_create_sections() {
        let cfg = load_config(None, &["grid.extent=20.0".into(), "grid.points=128".into()])
            .unwrap();
        let g = cfg.grid.unwrap();
        assert_eq!(g.extent, 20.0);
        assert_eq!(g.points, 128);
    }

    #[test]
    fn float_formatting_is_17_digits() {
        let s = fmt_f64(std::f64::consts::PI);
        assert_eq!(s, "3.1415926535897931e0");
        assert_eq!(s.parse::<f64>().unwrap(), std::f64::consts::PI);
    }
}
