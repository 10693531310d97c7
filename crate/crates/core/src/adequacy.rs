//! Macroscopic-distinguishability bound formulas, in SI units.
//!
//! These are closed-form thresholds: the minimal region size above which
//! typical field or particle configurations of "matter" and "vacuum" states
//! differ. "Much bigger than" is operationalized by a configurable margin on
//! the reported ratio.

use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Default multiplier rendering ">>": the input scale must exceed the
/// threshold by this factor for `satisfied` to be true.
pub const DEFAULT_MARGIN: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundId {
    EulerAngle,
    DiracSeaVolume,
    DiracSeaRadius,
    DensityRatio,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundInput {
    pub name: String,
    pub value: f64,
    pub unit: String,
}

/// One evaluated bound: the inputs, the threshold, and whether a probed
/// scale clears it by the margin.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub id: BoundId,
    pub inputs: Vec<BoundInput>,
    pub threshold: f64,
    pub threshold_unit: String,
    pub margin: f64,
    /// Scale being tested against the threshold, if one was supplied.
    pub probe: Option<f64>,
    pub satisfied: Option<bool>,
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidInput(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

/// Minimal region size L* = 1 / (a rho^{2/3}) for the Euler-angle lattice
/// model; configurations are typically distinct only for L >> L*.
///
/// `a` is the lattice spacing [m], `rho` the matter density [1/m^3].
pub fn euler_angle_bound(a: f64, rho: f64) -> Result<f64> {
    require_positive("lattice spacing a", a)?;
    require_positive("density rho", rho)?;
    Ok(1.0 / (a * rho.powf(2.0 / 3.0)))
}

/// Minimal volume V* = (Lambda / rho^2)^{3/5} and the radius b* of the
/// sphere with that volume, for the Dirac-sea picture.
///
/// `lambda` is the ultraviolet momentum cutoff [1/m], `rho` [1/m^3].
pub fn dirac_sea_bound(lambda: f64, rho: f64) -> Result<(f64, f64)> {
    require_positive("cutoff Lambda", lambda)?;
    require_positive("density rho", rho)?;
    let v_star = (lambda / (rho * rho)).powf(3.0 / 5.0);
    let b_star = (3.0 * v_star / (4.0 * PI)).cbrt();
    Ok((v_star, b_star))
}

/// Ratio of the sea-particle number density in a matter-filled region to an
/// empty one: 1 + 8 pi^2 rho / Lambda^3.
pub fn density_ratio(rho: f64, lambda: f64) -> Result<f64> {
    require_positive("density rho", rho)?;
    require_positive("cutoff Lambda", lambda)?;
    Ok(1.0 + 8.0 * PI * PI * rho / lambda.powi(3))
}

pub fn euler_angle_report(a: f64, rho: f64, probe_l: Option<f64>, margin: f64) -> Result<BoundReport> {
    let threshold = euler_angle_bound(a, rho)?;
    Ok(BoundReport {
        id: BoundId::EulerAngle,
        inputs: vec![
            BoundInput { name: "a".into(), value: a, unit: "m".into() },
            BoundInput { name: "rho".into(), value: rho, unit: "1/m^3".into() },
        ],
        threshold,
        threshold_unit: "m".into(),
        margin,
        probe: probe_l,
        satisfied: probe_l.map(|l| l > margin * threshold),
    })
}

pub fn dirac_sea_reports(
    lambda: f64,
    rho: f64,
    probe_v: Option<f64>,
    margin: f64,
) -> Result<(BoundReport, BoundReport)> {
    let (v_star, b_star) = dirac_sea_bound(lambda, rho)?;
    let inputs = vec![
        BoundInput { name: "Lambda".into(), value: lambda, unit: "1/m".into() },
        BoundInput { name: "rho".into(), value: rho, unit: "1/m^3".into() },
    ];
    let volume = BoundReport {
        id: BoundId::DiracSeaVolume,
        inputs: inputs.clone(),
        threshold: v_star,
        threshold_unit: "m^3".into(),
        margin,
        probe: probe_v,
        satisfied: probe_v.map(|v| v > margin * v_star),
    };
    let radius = BoundReport {
        id: BoundId::DiracSeaRadius,
        inputs,
        threshold: b_star,
        threshold_unit: "m".into(),
        margin,
        probe: probe_v.map(|v| (3.0 * v / (4.0 * PI)).cbrt()),
        satisfied: probe_v.map(|v| (3.0 * v / (4.0 * PI)).cbrt() > margin.cbrt() * b_star),
    };
    Ok((volume, radius))
}

pub fn density_ratio_report(rho: f64, lambda: f64) -> Result<BoundReport> {
    let ratio = density_ratio(rho, lambda)?;
    Ok(BoundReport {
        id: BoundId::DensityRatio,
        inputs: vec![
            BoundInput { name: "rho".into(), value: rho, unit: "1/m^3".into() },
            BoundInput { name: "Lambda".into(), value: lambda, unit: "1/m".into() },
        ],
        threshold: ratio,
        threshold_unit: "dimensionless".into(),
        margin: 1.0,
        probe: None,
        satisfied: None,
    })
}
