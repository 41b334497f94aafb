//! Domain types shared by every stage, plus the neutral CSV schemas.

mod dataset;
mod events;

pub use dataset::WeightedDataset;
pub use events::{
    attach_scalars, initial_state, load_events, read_mass, resample_event, write_mass,
    write_scalar_events, write_series_events, CrashEvent, EventSchema, Source,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of the pre-crash window every event is aligned to (s).
pub const EVENT_SPAN: f64 = 5.0;

/// File encoding of "no abnormal acceleration" for `t_a`.
pub const T_A_SENTINEL: f64 = 999.0;

const TOL: f64 = 1e-9;

/// Six-parameter piecewise-linear lead-vehicle speed profile.
///
/// Segments are listed backward from impact: S (steady) ends at impact, segment 1
/// precedes it and segment 2 precedes segment 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub v_c: f64,
    pub a_1: f64,
    pub a_2: f64,
    pub tau_s: f64,
    pub tau_1: f64,
    pub tau_2: f64,
}

impl SpeedProfile {
    pub const COLUMNS: [&'static str; 6] = ["v_c", "a_1", "a_2", "tau_s", "tau_1", "tau_2"];

    pub fn steady(v: f64) -> Self {
        SpeedProfile {
            v_c: v,
            a_1: 0.0,
            a_2: 0.0,
            tau_s: EVENT_SPAN,
            tau_1: 0.0,
            tau_2: 0.0,
        }
    }

    /// Speed at the start of the profile span.
    pub fn v_l_init(&self) -> f64 {
        self.v_c - self.a_1 * self.tau_1 - self.a_2 * self.tau_2
    }

    pub fn span(&self) -> f64 {
        self.tau_s + self.tau_1 + self.tau_2
    }

    /// Build a profile from its initial speed instead of its impact speed.
    pub fn from_initial(v_init: f64, a_1: f64, a_2: f64, tau_s: f64, tau_1: f64, tau_2: f64) -> Self {
        SpeedProfile {
            v_c: v_init + a_1 * tau_1 + a_2 * tau_2,
            a_1,
            a_2,
            tau_s,
            tau_1,
            tau_2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.v_c, self.a_1, self.a_2, self.tau_s, self.tau_1, self.tau_2];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite profile {self:?}")));
        }
        if self.tau_s < 0.0 || self.tau_1 < 0.0 || self.tau_2 < 0.0 {
            return Err(Error::validation(format!("negative segment duration in {self:?}")));
        }
        if self.span() > EVENT_SPAN + TOL {
            return Err(Error::validation(format!(
                "profile span {} exceeds {EVENT_SPAN} s",
                self.span()
            )));
        }
        // Speed is piecewise linear, so checking the segment ends suffices.
        let v0 = self.v_l_init();
        let v_after_2 = v0 + self.a_2 * self.tau_2;
        if self.v_c < -TOL || v0 < -TOL || v_after_2 < -TOL {
            return Err(Error::validation(format!("negative speed in profile {self:?}")));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.v_c, self.a_1, self.a_2, self.tau_s, self.tau_1, self.tau_2]
    }
}

/// Twelve-parameter rear-end crash vector; the input to one simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub d_init: f64,
    pub v_f_init: f64,
    pub a_f_min: f64,
    /// Minimum time headway `T` (s).
    pub headway: f64,
    pub t_g: f64,
    /// Onset of abnormal acceleration measured from event start; `+inf` when absent.
    pub t_a: f64,
    pub profile: SpeedProfile,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        let ok = self.d_init > 0.0
            && self.v_f_init >= 0.0
            && self.a_f_min <= 0.0
            && self.headway > 0.0
            && self.t_g >= 0.0
            && self.t_a > 0.0
            && [self.d_init, self.v_f_init, self.a_f_min, self.headway, self.t_g]
                .iter()
                .all(|v| v.is_finite())
            && !self.t_a.is_nan();
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid scenario {self:?}")))
        }
    }

    /// Abnormal acceleration is present only when it can start before the 5 s mark.
    pub fn abnormal(&self) -> bool {
        self.t_a < EVENT_SPAN
    }

    pub fn v_l_init(&self) -> f64 {
        self.profile.v_l_init()
    }
}

pub fn encode_t_a(t_a: f64) -> f64 {
    if t_a.is_infinite() {
        T_A_SENTINEL
    } else {
        t_a
    }
}

pub fn decode_t_a(v: f64) -> f64 {
    if v >= T_A_SENTINEL {
        f64::INFINITY
    } else {
        v
    }
}

/// Curb weights of a following/lead vehicle pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassRatioRecord {
    pub m_f: f64,
    pub m_l: f64,
}

impl MassRatioRecord {
    pub fn ratio(&self) -> f64 {
        self.m_f / self.m_l
    }
}
