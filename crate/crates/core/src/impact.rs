//! Collinear rear-end impact: mass-ratio Delta-v transfer and restitution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomial coefficients of the restitution fit in `log10(dv_pre)`.
pub const RESTITUTION_COEFFS: [f64; 4] = [0.47477, -0.26139, 0.03382, -0.1139];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactResult {
    pub dv_pre: f64,
    pub e: f64,
    pub rho: f64,
    pub dv_l: f64,
    pub dv_f: f64,
}

/// Lead-vehicle Delta-v from the follower's, by momentum conservation; `rho = m_f / m_l`.
pub fn transform_delta_v(dv_f: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::invalid(format!("mass ratio {rho} must be positive")));
    }
    Ok(-rho * dv_f)
}

/// Coefficient of restitution for a pre-impact closing speed, clamped to `[0, 1]`.
pub fn restitution(dv_pre: f64) -> Result<f64> {
    if !(dv_pre > 0.0) {
        return Err(Error::invalid(format!("closing speed {dv_pre} must be positive")));
    }
    Ok(restitution_poly(dv_pre.log10()).clamp(0.0, 1.0))
}

fn restitution_poly(x: f64) -> f64 {
    let [c0, c1, c2, c3] = RESTITUTION_COEFFS;
    c0 + x * (c1 + x * (c2 + x * c3))
}

/// Rigid-body collinear impulse between follower speed `v_f` and lead speed `v_l`.
pub fn collinear_impact(v_f: f64, v_l: f64, rho: f64) -> Result<ImpactResult> {
    let dv_pre = v_f - v_l;
    if !(dv_pre > 0.0) {
        return Err(Error::invalid(format!(
            "vehicles are not closing (v_f = {v_f}, v_l = {v_l})"
        )));
    }
    let e = restitution(dv_pre)?;
    impact_with_restitution(dv_pre, e, rho)
}

/// Same as [`collinear_impact`] with an explicit restitution coefficient.
pub fn impact_with_restitution(dv_pre: f64, e: f64, rho: f64) -> Result<ImpactResult> {
    if !(rho > 0.0) {
        return Err(Error::invalid(format!("mass ratio {rho} must be positive")));
    }
    let dv_l = (1.0 + e) * rho / (1.0 + rho) * dv_pre;
    Ok(ImpactResult {
        dv_pre,
        e,
        rho,
        dv_l,
        dv_f: -dv_l / rho,
    })
}
