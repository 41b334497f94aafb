//! Following-vehicle behaviour: modified IDM, looming-driven brake response,
//! off-road glance overshoot and abnormal acceleration, fused into one command.
//!
//! All times here are on the simulation clock (0 at event start, impact due at 5 s).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ScenarioSpec, EVENT_SPAN};

/// Inverse time-to-collision that anchors the off-road glance (1/s).
pub const TTC_INV_ANCHOR: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    pub a_max: f64,
    pub b_comf: f64,
    pub c: f64,
    pub v_0: f64,
    /// Minimum time headway `T` (s).
    pub headway: f64,
    pub d_0: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            a_max: 3.0,
            b_comf: 4.0,
            c: 0.4,
            v_0: 13.89,
            headway: 1.5,
            d_0: 2.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.a_max > 0.0
            && self.b_comf > 0.0
            && self.c >= 0.0
            && self.v_0 > 0.0
            && self.headway > 0.0
            && self.d_0 >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid IDM parameters {self:?}")))
        }
    }

    /// Desired gap `d*`, floored at the jam distance.
    pub fn desired_gap(&self, v: f64, dv: f64) -> f64 {
        let d = self.d_0 + v * self.headway + self.c * v * v / self.b_comf
            - v * dv / (2.0 * (self.a_max * self.b_comf).sqrt());
        d.max(self.d_0)
    }
}

/// Modified IDM acceleration; `dv = v_lead - v_follower`.
pub fn idm_accel(p: &IdmParams, v: f64, dv: f64, d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::invalid(format!("gap {d} must be positive")));
    }
    Ok(idm_unchecked(p, v, dv, d))
}

fn idm_unchecked(p: &IdmParams, v: f64, dv: f64, d: f64) -> f64 {
    let s = p.desired_gap(v, dv) / d;
    p.a_max * (1.0 - (v / p.v_0).powi(4) - s * s)
}

/// Optical expansion rate of a lead vehicle of width `w` at gap `d` closing at `-d_dot`.
pub fn looming(d: f64, d_dot: f64, w: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::invalid(format!("gap {d} must be positive")));
    }
    Ok(looming_unchecked(d, d_dot, w))
}

fn looming_unchecked(d: f64, d_dot: f64, w: f64) -> f64 {
    -w * d_dot / (d * d + 0.25 * w * w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrakeModelParams {
    pub veh_width: f64,
    /// Accumulator gain `K`.
    pub gain: f64,
    /// Accumulator leak `lambda` (1/s).
    pub leak: f64,
    pub threshold: f64,
    /// Weight of looming perceived during off-road glances.
    pub gamma: f64,
    /// Brake ramp rate (m/s^3).
    pub jerk: f64,
}

impl Default for BrakeModelParams {
    fn default() -> Self {
        BrakeModelParams {
            veh_width: 1.8,
            gain: 80.0,
            leak: 0.01,
            threshold: 1.0,
            gamma: 0.2,
            jerk: 15.0,
        }
    }
}

impl BrakeModelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.veh_width, self.gain, self.leak, self.threshold, self.gamma, self.jerk]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
            && self.gamma <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid brake parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FollowerState {
    pub x: f64,
    pub v: f64,
    /// Evidence accumulator `A`.
    pub acc: f64,
    pub braking: bool,
    /// Brake model output.
    pub a_b: f64,
    pub a_cmd: f64,
}

/// One accumulator/brake update. Returns the new state and the brake output.
pub fn brake_response_step(
    p: &BrakeModelParams,
    s: &FollowerState,
    loom: f64,
    loom_pred: f64,
    on_road: bool,
    a_f_min: f64,
    dt: f64,
) -> (FollowerState, f64) {
    let mut next = *s;
    let eps = (loom - loom_pred).max(0.0);
    let g = if on_road { 1.0 } else { p.gamma };
    next.acc = (s.acc + p.gain * (g * eps - p.leak) * dt).max(0.0);
    if !next.braking && next.acc >= p.threshold {
        next.braking = true;
    }
    next.a_b = if next.braking {
        (s.a_b - p.jerk * dt).max(a_f_min.min(0.0))
    } else {
        0.0
    };
    (next, next.a_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlanceSchedule {
    pub anchored: bool,
    pub t_g: f64,
}

/// On-road unless `t` lies in the overshoot window `[t_anchor, t_anchor + t_g)`.
pub fn glance_signal(g: &GlanceSchedule, t_anchor: f64, t: f64) -> bool {
    if !g.anchored || !t_anchor.is_finite() || g.t_g <= 0.0 {
        return true;
    }
    !(t >= t_anchor && t < t_anchor + g.t_g)
}

/// Inverse time-to-collision; zero when the gap is not closing.
pub fn inverse_ttc(gap: f64, v_f: f64, v_l: f64) -> f64 {
    let closing = v_f - v_l;
    if closing <= 0.0 || gap <= 0.0 {
        0.0
    } else {
        closing / gap
    }
}

/// Per-tick inputs seen by the follower, measured at the start of the tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    /// Simulation time (s).
    pub t: f64,
    pub dt: f64,
    pub v_f: f64,
    pub v_l: f64,
    pub gap: f64,
}

/// Anything that can command the following vehicle.
pub trait FollowerPolicy {
    fn accel(&mut self, k: &Kinematics) -> f64;
}

/// Constant-acceleration stub, handy for closed-form oracles.
#[derive(Debug, Clone, Copy)]
pub struct ConstantAccel(pub f64);

impl FollowerPolicy for ConstantAccel {
    fn accel(&mut self, k: &Kinematics) -> f64 {
        if k.v_f <= 0.0 && self.0 < 0.0 {
            0.0
        } else {
            self.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverParams {
    /// IDM constants; `headway` is overridden per scenario.
    pub idm: IdmParams,
    pub brake: BrakeModelParams,
    /// Abnormal acceleration (m/s^2).
    pub a_a: f64,
}

impl Default for DriverParams {
    fn default() -> Self {
        DriverParams {
            idm: IdmParams::default(),
            brake: BrakeModelParams::default(),
            a_a: 1.8,
        }
    }
}

/// Fuse the sub-model outputs: abnormal mode first, then IDM (non-negative) or brake.
///
/// `t` is the simulation clock; the abnormal onset `t_a` is measured from event start.
pub fn combined_accel(spec: &ScenarioSpec, a_a: f64, idm: f64, a_b: f64, v: f64, t: f64) -> f64 {
    let a = if spec.t_a < EVENT_SPAN {
        if t < spec.t_a {
            0.0
        } else {
            a_a
        }
    } else if a_b == 0.0 {
        idm.max(0.0)
    } else {
        a_b
    };
    if v <= 0.0 && a < 0.0 {
        0.0
    } else {
        a
    }
}

/// The combined driver model bound to one scenario.
#[derive(Debug, Clone)]
pub struct CombinedDriver {
    spec: ScenarioSpec,
    params: DriverParams,
    idm: IdmParams,
    pub state: FollowerState,
    t_anchor: f64,
    last_on_road_loom: f64,
}

impl CombinedDriver {
    pub fn new(spec: &ScenarioSpec, params: &DriverParams) -> Self {
        let idm = IdmParams {
            headway: spec.headway,
            ..params.idm
        };
        CombinedDriver {
            spec: *spec,
            params: *params,
            idm,
            state: FollowerState {
                v: spec.v_f_init,
                ..FollowerState::default()
            },
            t_anchor: f64::INFINITY,
            last_on_road_loom: 0.0,
        }
    }

    /// Time the glance anchor fired, if it has.
    pub fn anchor(&self) -> Option<f64> {
        self.t_anchor.is_finite().then_some(self.t_anchor)
    }
}

impl FollowerPolicy for CombinedDriver {
    fn accel(&mut self, k: &Kinematics) -> f64 {
        let gap = k.gap.max(1e-9);
        let w = self.params.brake.veh_width;
        let loom = looming_unchecked(gap, k.v_l - k.v_f, w);
        if !self.t_anchor.is_finite() && inverse_ttc(gap, k.v_f, k.v_l) >= TTC_INV_ANCHOR {
            self.t_anchor = k.t;
        }
        let sched = GlanceSchedule {
            anchored: self.t_anchor.is_finite(),
            t_g: self.spec.t_g,
        };
        let on_road = glance_signal(&sched, self.t_anchor, k.t);
        // On-road the driver expects no expansion; off-road the last on-road
        // looming is extrapolated as the expectation.
        let loom_pred = if on_road {
            self.last_on_road_loom = loom;
            0.0
        } else {
            self.last_on_road_loom
        };
        let (next, a_b) = brake_response_step(
            &self.params.brake,
            &self.state,
            loom,
            loom_pred,
            on_road,
            self.spec.a_f_min,
            k.dt,
        );
        self.state = next;
        let idm = idm_unchecked(&self.idm, k.v_f, k.v_l - k.v_f, gap);
        let a = combined_accel(&self.spec, self.params.a_a, idm, a_b, k.v_f, k.t);
        self.state.v = k.v_f;
        self.state.a_cmd = a;
        a
    }
}
