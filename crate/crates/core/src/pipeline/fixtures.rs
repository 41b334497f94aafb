//! Synthetic stand-ins for the crash datasets.
//!
//! Every fixture is drawn from one truth population: initial states per sub-dataset,
//! piecewise-linear lead profiles, follower behaviour parameters and an initial gap
//! tuned so the simulated crash lands at 5 s. The datasets then differ only in which
//! signals they keep and how they sample the population:
//!
//! | file | content | sampling |
//! |---|---|---|
//! | `ciss_m.csv` | masses `m_f, m_l` | log-normal curb weights |
//! | `ciss_f.csv` | `v_f_init, dv_l` | acceptance rising with `dv_l` |
//! | `shrp2_f.csv` | `v_f_init, dv_f` | unbiased |
//! | `shrp2_b.csv`, `shrp2_b_dv.csv` | series at 10 Hz, `dv_f` | first events of SHRP2_f |
//! | `pcm_b.csv`, `pcm_b_dv.csv` | series at 10 Hz, `dv_l` | `dv_l >= 2`, acceptance rising with `dv_l`, 50 km/h spike |
//! | `ref_l.csv` | lead profile, `dv_l` | unbiased |
//! | `ref_sl.csv` | lead profiles with `v_l_init, a_l_min` | profile generator only |

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::dist::{GenGammaFit, SubDatasetLabel, TruncNormal, REFERENCE_SHARES};
use crate::error::{Error, Result};
use crate::impact::{collinear_impact, ImpactResult};
use crate::model::{
    write_mass, write_scalar_events, write_series_events, CrashEvent, MassRatioRecord, ScenarioSpec, Source,
    SpeedProfile, WeightedDataset, EVENT_SPAN,
};
use crate::profile::min_fitted_accel;
use crate::sim::{simulate, SimConfig, SimLog};
use crate::util::{rng_for, SimRng};

/// Sample rate of the fixture series (Hz).
pub const SERIES_RATE: f64 = 10.0;
/// Last series sample before impact (s).
pub const SERIES_END: f64 = -0.3;
/// Share of S4 crashes with abnormal acceleration.
pub const S4_ABNORMAL_SHARE: f64 = 0.562;
/// Tolerance on `|t_c - 5|` when tuning the initial gap.
const GAP_TOL: f64 = 0.05;
const MAX_ATTEMPTS: usize = 400;

/// One crash from the truth population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthCrash {
    pub label: SubDatasetLabel,
    pub spec: ScenarioSpec,
    pub a_l_min: f64,
    pub log: SimLog,
    pub masses: MassRatioRecord,
    pub impact: ImpactResult,
}

impl TruthCrash {
    /// Speeds and gap sampled at 10 Hz over `[-5, -0.3]`.
    pub fn series(&self, id: &str, source: Source) -> Result<CrashEvent> {
        let every = (self.log_rate() / SERIES_RATE).round() as usize;
        let n = ((EVENT_SPAN + SERIES_END) * SERIES_RATE).round() as usize + 1;
        let ticks: Vec<_> = self.log.ticks.iter().step_by(every.max(1)).take(n).collect();
        if ticks.len() < n {
            return Err(Error::invalid(format!("crash {id}: log too short for a series")));
        }
        CrashEvent::series(
            id,
            source,
            SERIES_RATE,
            Some(ticks.iter().map(|k| k.v_f).collect()),
            Some(ticks.iter().map(|k| k.v_l).collect()),
            Some(ticks.iter().map(|k| k.gap).collect()),
        )
    }

    fn log_rate(&self) -> f64 {
        match self.log.ticks.as_slice() {
            [a, b, ..] => 1.0 / (b.t - a.t),
            _ => SERIES_RATE,
        }
    }
}

/// Reference behaviour distributions shared by the fixtures and the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Behaviour {
    pub headway: TruncNormal,
    pub t_g: GenGammaFit,
    pub t_a: TruncNormal,
}

impl Behaviour {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        let b = &cfg.behaviour;
        Ok(Behaviour {
            headway: TruncNormal::new(b.headway_mean, b.headway_sd, b.headway_lo, b.headway_hi)?,
            t_g: GenGammaFit::from_params(b.t_g_scale, b.t_g_shape, 1.0)?,
            t_a: TruncNormal::new(2.0, 0.8, 0.2, 4.5)?,
        })
    }
}

fn u(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn pick_label(rng: &mut SimRng, allow_s4: bool) -> SubDatasetLabel {
    let shares: Vec<(SubDatasetLabel, f64)> = REFERENCE_SHARES
        .iter()
        .copied()
        .filter(|(l, _)| allow_s4 || *l != SubDatasetLabel::S4)
        .collect();
    let total: f64 = shares.iter().map(|s| s.1).sum();
    let mut x = rng.random::<f64>() * total;
    for (l, p) in &shares {
        if x < *p {
            return *l;
        }
        x -= p;
    }
    shares[shares.len() - 1].0
}

/// Braking magnitude growing with the lead's speed.
fn brake_level(v: f64, rng: &mut SimRng) -> f64 {
    (1.0 + 0.4 * v * u(rng, 0.6, 1.4)).min(8.0)
}

/// Lead profile for a sub-dataset starting at `v_l`; `abnormal` marks the S4 case where
/// the follower pulls away from standstill behind a stopped lead.
pub fn lead_profile(label: SubDatasetLabel, v_l: f64, abnormal: bool, rng: &mut SimRng) -> SpeedProfile {
    use SubDatasetLabel::*;
    for _ in 0..MAX_ATTEMPTS {
        let r = rng.random::<f64>();
        let p = match label {
            S4 if abnormal => SpeedProfile::steady(0.0),
            S4 => go_then_brake(0.0, r < 0.6, rng),
            S3 => {
                if r < 0.6 {
                    SpeedProfile::steady(0.0)
                } else if r < 0.8 {
                    let tau_1 = u(rng, 1.0, 4.0);
                    SpeedProfile::from_initial(0.0, u(rng, 0.5, 2.0), 0.0, EVENT_SPAN - tau_1, tau_1, 0.0)
                } else {
                    go_then_brake(0.0, true, rng)
                }
            }
            S1 | S2 => {
                if r < 0.3 {
                    SpeedProfile::steady(v_l)
                } else if r < 0.65 {
                    brake_once(v_l, rng)
                } else {
                    two_stage(v_l, r < 0.85, rng)
                }
            }
            S5 | S6 => {
                if r < 0.45 {
                    brake_once(v_l, rng)
                } else {
                    two_stage(v_l, r < 0.8, rng)
                }
            }
        };
        if p.validate().is_ok() && slopes_distinct(&p) {
            return p;
        }
    }
    SpeedProfile::steady(v_l)
}

fn slopes_distinct(p: &SpeedProfile) -> bool {
    let gap = |a: f64, b: f64| (a - b).abs() >= 0.5;
    (p.tau_1 == 0.0 || p.tau_s == 0.0 || gap(p.a_1, 0.0)) && (p.tau_2 == 0.0 || gap(p.a_2, p.a_1))
}

/// Brake from `v` for part of the window, then hold.
fn brake_once(v: f64, rng: &mut SimRng) -> SpeedProfile {
    let b = brake_level(v, rng);
    let tau_1 = u(rng, 0.8, 4.2).min(v / b * u(rng, 0.7, 1.0)).max(0.3);
    SpeedProfile::from_initial(v, -b, 0.0, EVENT_SPAN - tau_1, tau_1, 0.0)
}

/// A gentle first segment followed by harder braking; `hold` keeps a final steady part.
fn two_stage(v: f64, hold: bool, rng: &mut SimRng) -> SpeedProfile {
    let a_2 = if rng.random::<f64>() < 0.5 { -u(rng, 0.2, 1.2) } else { u(rng, 0.3, 1.5) };
    let tau_2 = u(rng, 0.6, 2.5);
    let v_mid = v + a_2 * tau_2;
    let b = brake_level(v_mid, rng);
    if hold {
        let tau_1 = u(rng, 0.5, EVENT_SPAN - tau_2 - 0.3).min(v_mid / b).max(0.3);
        SpeedProfile::from_initial(v, -b, a_2, EVENT_SPAN - tau_2 - tau_1, tau_1, tau_2)
    } else {
        let tau_1 = EVENT_SPAN - tau_2;
        let b = b.min(v_mid / tau_1 * u(rng, 0.6, 1.0));
        SpeedProfile::from_initial(v, -b, a_2, 0.0, tau_1, tau_2)
    }
}

/// Pull away from standstill, then brake.
fn go_then_brake(v: f64, hold: bool, rng: &mut SimRng) -> SpeedProfile {
    let a_2 = u(rng, 1.5, 2.5);
    let tau_2 = u(rng, 1.2, 3.0);
    let v_mid = v + a_2 * tau_2;
    let b = u(rng, 2.0, 7.0);
    let stop = v_mid / b;
    if hold {
        let tau_1 = stop.min(EVENT_SPAN - tau_2 - 0.2) * u(rng, 0.6, 1.0);
        SpeedProfile::from_initial(v, -b, a_2, EVENT_SPAN - tau_2 - tau_1, tau_1, tau_2)
    } else {
        let tau_1 = EVENT_SPAN - tau_2;
        SpeedProfile::from_initial(v, -(v_mid / tau_1) * u(rng, 0.6, 1.0), a_2, 0.0, tau_1, tau_2)
    }
}

/// Draw `(v_f_init, v_l_init)` for a label; `v_f` overrides the follower speed.
fn initial_speeds(label: SubDatasetLabel, v_f: Option<f64>, rng: &mut SimRng) -> (f64, f64) {
    use SubDatasetLabel::*;
    match label {
        S1 | S2 => {
            let gap = u(rng, 0.8, 8.0);
            match v_f {
                Some(f) => (f, (f - gap).max(0.5)),
                None => {
                    let l = u(rng, 1.5, 16.0);
                    (l + gap, l)
                }
            }
        }
        S3 => (v_f.unwrap_or_else(|| u(rng, 2.0, 18.0)), 0.0),
        S4 => (0.0, 0.0),
        S5 | S6 => {
            let f = v_f.unwrap_or_else(|| u(rng, 2.0, 14.0));
            (f, f * u(rng, 1.0, 1.5))
        }
    }
}

fn follower_brake(label: SubDatasetLabel, rng: &mut SimRng) -> f64 {
    use SubDatasetLabel::*;
    let brakes = match label {
        S1 | S5 => false,
        S2 | S6 => true,
        S3 | S4 => rng.random::<f64>() < 0.5,
    };
    if brakes {
        -u(rng, 2.0, 8.0)
    } else {
        0.0
    }
}

/// Generator of truth crashes.
#[derive(Debug, Clone)]
pub struct TruthGenerator {
    pub behaviour: Behaviour,
    pub sim: SimConfig,
    mass: LogNormal<f64>,
}

impl TruthGenerator {
    pub fn new(behaviour: Behaviour, sim: SimConfig) -> Self {
        TruthGenerator {
            behaviour,
            sim,
            mass: LogNormal::new(1500f64.ln(), 0.25).expect("valid log-normal"),
        }
    }

    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        Ok(Self::new(Behaviour::from_config(cfg)?, cfg.sim_config()))
    }

    fn t_c(&self, spec: &ScenarioSpec) -> Option<f64> {
        let cfg = SimConfig { record_ticks: false, ..self.sim };
        simulate(spec, &cfg).ok().and_then(|l| l.t_c)
    }

    /// Initial gap that puts the crash within `GAP_TOL` of 5 s, if one exists.
    pub fn tune_gap(&self, spec: &ScenarioSpec) -> Option<f64> {
        let mut s = *spec;
        let mut at = |d: f64| {
            s.d_init = d;
            self.t_c(&s).unwrap_or(f64::INFINITY) - EVENT_SPAN
        };
        let mut lo = 0.3;
        let mut f_lo = at(lo);
        if f_lo >= 0.0 {
            return None;
        }
        let mut hi = lo;
        let mut found = false;
        while hi < 250.0 {
            let next = hi * 1.25;
            let f = at(next);
            if f >= 0.0 {
                hi = next;
                found = true;
                break;
            }
            lo = next;
            f_lo = f;
            hi = next;
        }
        if !found {
            return None;
        }
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            let f = at(mid);
            if f.abs() <= GAP_TOL * 0.5 {
                return Some(mid);
            }
            if f < 0.0 {
                lo = mid;
                f_lo = f;
            } else {
                hi = mid;
            }
        }
        (f_lo.abs() <= GAP_TOL).then_some(lo)
    }

    /// Crash `idx` of the stream `tag`; `v_f` pins the follower's initial speed.
    pub fn crash(&self, seed: u64, tag: &str, idx: u64, v_f: Option<f64>) -> Result<TruthCrash> {
        let mut rng = rng_for(seed, tag, idx);
        for _ in 0..MAX_ATTEMPTS {
            let label = pick_label(&mut rng, v_f.is_none_or(|v| v > 0.0));
            let abnormal = label == SubDatasetLabel::S4 && rng.random::<f64>() < S4_ABNORMAL_SHARE;
            let (v_f_init, v_l) = initial_speeds(label, v_f, &mut rng);
            let profile = lead_profile(label, v_l, abnormal, &mut rng);
            let spec = ScenarioSpec {
                d_init: 1.0,
                v_f_init,
                a_f_min: follower_brake(label, &mut rng),
                headway: self.behaviour.headway.sample(&mut rng),
                t_g: self.behaviour.t_g.sample(&mut rng),
                t_a: if abnormal { self.behaviour.t_a.sample(&mut rng) } else { f64::INFINITY },
                profile,
            };
            let Some(d_init) = self.tune_gap(&spec) else { continue };
            let spec = ScenarioSpec { d_init, ..spec };
            let log = simulate(&spec, &SimConfig { record_ticks: true, ..self.sim })?;
            let (Some(vf), Some(vl)) = (log.v_f_c, log.v_l_c) else { continue };
            let masses = MassRatioRecord { m_f: self.mass.sample(&mut rng), m_l: self.mass.sample(&mut rng) };
            let Ok(impact) = collinear_impact(vf, vl, masses.ratio()) else { continue };
            if !log.valid {
                continue;
            }
            return Ok(TruthCrash { label, spec, a_l_min: min_fitted_accel(&profile), log, masses, impact });
        }
        Err(Error::invalid(format!("no crash found for {tag}[{idx}]")))
    }

    /// `n` crashes accepted with probability `accept(crash)`; deterministic per index.
    fn sample(
        &self,
        seed: u64,
        tag: &str,
        n: usize,
        v_f: impl Fn(u64) -> Option<f64> + Sync,
        accept: impl Fn(&TruthCrash, &mut SimRng) -> bool + Sync,
    ) -> Result<Vec<TruthCrash>> {
        use rayon::prelude::*;
        let mut out = Vec::with_capacity(n);
        let mut next = 0u64;
        while out.len() < n {
            let batch = (n - out.len()).max(16) as u64 * 2;
            let got: Vec<Option<TruthCrash>> = (next..next + batch)
                .into_par_iter()
                .map(|i| {
                    let c = self.crash(seed, tag, i, v_f(i))?;
                    let mut rng = rng_for(seed, &format!("{tag}-accept"), i);
                    Ok(accept(&c, &mut rng).then_some(c))
                })
                .collect::<Result<_>>()?;
            next += batch;
            out.extend(got.into_iter().flatten().take(n - out.len()));
        }
        Ok(out)
    }
}

/// Everything `gen-fixtures` writes, in memory.
#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub ciss_m: Vec<MassRatioRecord>,
    pub ciss_f: Vec<CrashEvent>,
    pub shrp2_f: Vec<CrashEvent>,
    pub shrp2_b: Vec<CrashEvent>,
    pub shrp2_b_dv: Vec<CrashEvent>,
    pub pcm_b: Vec<CrashEvent>,
    pub pcm_b_dv: Vec<CrashEvent>,
    pub ref_l: WeightedDataset,
    pub ref_sl: WeightedDataset,
}

fn severity_bias(scale: f64) -> impl Fn(&TruthCrash, &mut SimRng) -> bool + Sync {
    move |c, rng| rng.random::<f64>() < (c.impact.dv_l / scale).min(1.0)
}

/// Lead profiles from the generator alone, labelled by initial state shares.
pub fn ref_sl(n: usize, seed: u64) -> Result<WeightedDataset> {
    let names = ["v_l_init", "a_l_min", "a_1", "a_2", "tau_s", "tau_1", "tau_2"];
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut rng = rng_for(seed, "ref-sl", i as u64);
            let label = pick_label(&mut rng, true);
            let abnormal = label == SubDatasetLabel::S4 && rng.random::<f64>() < S4_ABNORMAL_SHARE;
            let (_, v_l) = initial_speeds(label, None, &mut rng);
            let p = lead_profile(label, v_l, abnormal, &mut rng);
            vec![p.v_l_init(), min_fitted_accel(&p), p.a_1, p.a_2, p.tau_s, p.tau_1, p.tau_2]
        })
        .collect();
    WeightedDataset::from_rows(&names, &rows)
}

/// Draw every fixture dataset.
pub fn generate(cfg: &PipelineConfig, seed: u64) -> Result<FixtureSet> {
    let sizes = &cfg.fixtures;
    let gen = TruthGenerator::from_config(cfg)?;
    let mut rng = rng_for(seed, "ciss-m", 0);
    let mass = LogNormal::new(1500f64.ln(), 0.25).expect("valid log-normal");
    let ciss_m = (0..sizes.ciss_m)
        .map(|_| MassRatioRecord { m_f: mass.sample(&mut rng), m_l: mass.sample(&mut rng) })
        .collect();

    let shrp2 = gen.sample(seed, "shrp2", sizes.shrp2_f.max(sizes.shrp2_b), |_| None, |_, _| true)?;
    let shrp2_f = shrp2
        .iter()
        .take(sizes.shrp2_f)
        .enumerate()
        .map(|(i, c)| CrashEvent::scalar(format!("SHRP2-{i:04}"), Source::Shrp2, Some(c.spec.v_f_init), Some(c.impact.dv_f), None))
        .collect();
    let mut shrp2_b = Vec::new();
    let mut shrp2_b_dv = Vec::new();
    for (i, c) in shrp2.iter().take(sizes.shrp2_b).enumerate() {
        let id = format!("SHRP2-{i:04}");
        shrp2_b.push(c.series(&id, Source::Shrp2)?);
        shrp2_b_dv.push(CrashEvent::scalar(id, Source::Shrp2, Some(c.spec.v_f_init), Some(c.impact.dv_f), None));
    }

    let ciss = gen.sample(seed, "ciss", sizes.ciss_f, |_| None, severity_bias(8.0))?;
    let ciss_f = ciss
        .iter()
        .enumerate()
        .map(|(i, c)| CrashEvent::scalar(format!("CISS-{i:04}"), Source::Ciss, Some(c.spec.v_f_init), None, Some(c.impact.dv_l)))
        .collect();

    let spike = sizes.pcm_spike;
    let spike_seed = seed;
    let pcm = gen.sample(
        seed,
        "pcm",
        sizes.pcm_b,
        move |i| (rng_for(spike_seed, "pcm-spike", i).random::<f64>() < spike).then_some(50.0 / 3.6),
        {
            let bias = severity_bias(10.0);
            move |c, rng| c.impact.dv_l >= 2.0 && bias(c, rng)
        },
    )?;
    let mut pcm_b = Vec::new();
    let mut pcm_b_dv = Vec::new();
    for (i, c) in pcm.iter().enumerate() {
        let id = format!("PCM-{i:04}");
        pcm_b.push(c.series(&id, Source::Pcm)?);
        pcm_b_dv.push(CrashEvent::scalar(id, Source::Pcm, Some(c.spec.v_f_init), None, Some(c.impact.dv_l)));
    }

    let refl = gen.sample(seed, "ref-l", sizes.ref_l, |_| None, |_, _| true)?;
    let rows: Vec<Vec<f64>> = refl
        .iter()
        .map(|c| {
            let p = c.spec.profile;
            vec![p.v_c, p.a_1, p.a_2, p.tau_s, p.tau_1, p.tau_2, c.impact.dv_l]
        })
        .collect();
    let ref_l = WeightedDataset::from_rows(&["v_c", "a_1", "a_2", "tau_s", "tau_1", "tau_2", "dv_l"], &rows)?;

    Ok(FixtureSet {
        ciss_m,
        ciss_f,
        shrp2_f,
        shrp2_b,
        shrp2_b_dv,
        pcm_b,
        pcm_b_dv,
        ref_l,
        ref_sl: ref_sl(sizes.ref_sl, seed)?,
    })
}

impl FixtureSet {
    pub fn write(&self, cfg: &PipelineConfig) -> Result<()> {
        for p in [cfg.ciss_m(), cfg.ref_sl(), cfg.pcm_b()] {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        write_mass(cfg.ciss_m(), &self.ciss_m)?;
        write_scalar_events(cfg.ciss_f(), &self.ciss_f)?;
        write_scalar_events(cfg.shrp2_f(), &self.shrp2_f)?;
        write_series_events(cfg.shrp2_b(), &self.shrp2_b)?;
        write_scalar_events(cfg.shrp2_b_dv(), &self.shrp2_b_dv)?;
        write_series_events(cfg.pcm_b(), &self.pcm_b)?;
        write_scalar_events(cfg.pcm_b_dv(), &self.pcm_b_dv)?;
        self.ref_l.write_csv(cfg.ref_l())?;
        self.ref_sl.write_csv(cfg.ref_sl())
    }
}

/// Follower and lead samples with `r(v_f, v_l)` near 0.78 and `r(v_f, a_l_min)` near
/// -0.54 under a sorted pairing; `dv_l` is independent of everything else.
///
/// Returns `(a, b)` with columns `(v_f_init, dv_l)` and `(v_l_init, a_l_min)`.
pub fn pairing_fixture(n: usize, seed: u64) -> Result<(WeightedDataset, WeightedDataset)> {
    let mut rng = rng_for(seed, "pairing-fixture", 0);
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    let dv = LogNormal::new(1.2, 0.5).expect("valid log-normal");
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let v_f = (9.0 + 3.5 * z.sample(&mut rng) as f64).max(0.5);
        a.push(vec![v_f, dv.sample(&mut rng)]);
        let v_l = (12.0 + 3.5 * z.sample(&mut rng) as f64).max(0.0);
        let a_l = (-1.0 - 0.25 * v_l + 0.92 * z.sample(&mut rng) as f64).min(-0.05);
        b.push(vec![v_l, a_l]);
    }
    Ok((
        WeightedDataset::from_rows(&["v_f_init", "dv_l"], &a)?,
        WeightedDataset::from_rows(&["v_l_init", "a_l_min"], &b)?,
    ))
}

/// Write the pairing fixture next to the other fixtures.
pub fn write_pairing_fixture(dir: &Path, n: usize, seed: u64) -> Result<()> {
    let (a, b) = pairing_fixture(n, seed)?;
    a.write_csv(dir.join("pairing_a.csv"))?;
    b.write_csv(dir.join("pairing_b.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::categorize;
    use crate::fusion::{pair_datasets, Bandwidth, Kde, PairingConfig};

    fn gen() -> TruthGenerator {
        let cfg = PipelineConfig::default();
        TruthGenerator::from_config(&cfg).unwrap()
    }

    #[test]
    fn truth_crashes_land_on_schedule() {
        let g = gen();
        for i in 0..60 {
            let c = g.crash(3, "t", i, None).unwrap();
            assert!((c.log.t_c.unwrap() - 5.0).abs() <= GAP_TOL + 1e-9);
            assert!(c.impact.dv_pre > 0.0);
            let l = categorize(c.spec.v_f_init, c.spec.v_l_init(), c.spec.a_f_min).unwrap();
            assert_eq!(l, c.label);
            assert_eq!(c.spec.abnormal(), c.spec.t_a.is_finite());
        }
    }

    #[test]
    fn series_shape() {
        let c = gen().crash(5, "t", 0, None).unwrap();
        let e = c.series("x", Source::Fixture).unwrap();
        assert_eq!(e.len(), 48);
        assert!((e.t[47] - SERIES_END).abs() < 1e-9);
        assert_eq!(e.v_f.as_ref().unwrap()[0], c.spec.v_f_init);
        assert!((e.d.as_ref().unwrap()[0] - c.spec.d_init).abs() < 1e-9);
    }

    #[test]
    fn lead_profiles_are_playable() {
        let mut rng = rng_for(1, "lp", 0);
        for label in SubDatasetLabel::ALL {
            for _ in 0..200 {
                let (_, v) = initial_speeds(label, None, &mut rng);
                let p = lead_profile(label, v, false, &mut rng);
                assert!(p.validate().is_ok());
                assert!((p.v_l_init() - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pairing_fixture_hits_targets() {
        for seed in [1, 11, 21] {
            let (a, b) = pairing_fixture(2000, seed).unwrap();
            let v = b.column("v_l_init").unwrap();
            let kde = Kde::new(v, &vec![1.0; v.len()], Bandwidth::Silverman).unwrap();
            let (_, out) = pair_datasets(&a, &b, &kde, (0.78, -0.54), &PairingConfig::default()).unwrap();
            assert!((out.r_vf_vl - 0.78).abs() <= 0.03, "{out:?}");
            assert!((out.r_vf_al + 0.54).abs() <= 0.03, "{out:?}");
            assert!(out.r_dv_vl.abs() < 0.3 && out.r_dv_al.abs() < 0.3);
        }
    }
}
