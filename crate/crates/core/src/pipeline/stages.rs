use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::fixtures;
use crate::dist::{
    categorize, fit_gengamma, fit_mixture, fit_truncnormal, profile_pattern, GenGammaFit, MixtureModel, SubDatasetLabel,
    TruncNormal, ZERO_TOL,
};
use crate::error::{Error, Result};
use crate::fusion::{
    build_ref_b, build_ref_f, deduce_delta_v, draw_rows, elbow_threshold, pair_datasets, Kde, PairingOutcome, REF_B_MATCH,
};
use crate::impact::collinear_impact;
use crate::model::{
    attach_scalars, decode_t_a, encode_t_a, initial_state, load_events, read_mass, resample_event, CrashEvent,
    EventSchema, ScenarioSpec, SpeedProfile, WeightedDataset, EVENT_SPAN,
};
use crate::profile::{fit_piecewise, min_fitted_accel, FitResult};
use crate::sim::{match_and_simulate, simulate, BehaviourMarginals, SimConfig};
use crate::util::{derive_seed, mean_sd, rng_for, weighted_draws};
use crate::validation::{
    compare_delta_v, tsne_ks, validate_marginals, write_cdf, GlobalReference, GroupReference, TsneRow,
    ValidationReport,
};
use crate::weighting::{ipf_reweight, knn_weight, select_k, weighted_pearson, IpfOutcome, IpfTarget, KSelection};

/// Initial-state columns of REF_b / REF_sb.
pub const STATE_COLUMNS: [&str; 5] = ["d_init", "v_f_init", "a_f_min", "v_l_init", "a_l_min"];
/// Lead-profile parameters compared per profile pattern.
pub const PROFILE_PARAMS: [&str; 5] = ["a_1", "a_2", "tau_s", "tau_1", "tau_2"];
/// Columns of `synthetic_crashes.csv` (before the weight column).
pub const OUTPUT_COLUMNS: [&str; 19] = [
    "d_init", "v_f_init", "a_f_min", "T", "t_g", "t_a", "v_l_init", "a_1", "a_2", "tau_s", "tau_1", "tau_2", "a_l_min",
    "abnormal", "t_c", "t_e", "dv_pre", "dv_l", "label",
];
/// Fitted follower slopes above this count as no braking (m/s^2).
pub const BRAKE_TOL: f64 = 0.3;

pub mod files {
    pub const PROFILES_LEAD: &str = "profiles_lead.csv";
    pub const PROFILES_FOLLOW: &str = "profiles_follow.csv";
    pub const STATES_SHRP2_B: &str = "states_shrp2_b.csv";
    pub const STATES_PCM_B: &str = "states_pcm_b.csv";
    pub const TA_OBS: &str = "ta_obs.csv";
    pub const MASS_FIT: &str = "mass_fit.json";
    pub const BEHAVIOUR: &str = "behaviour.json";
    pub const COM_F: &str = "com_f.csv";
    pub const REF_F: &str = "ref_f.csv";
    pub const COM_B: &str = "com_b.csv";
    pub const REF_I: &str = "ref_i.csv";
    pub const REF_B: &str = "ref_b.csv";
    pub const MIXTURE_REFB: &str = "mixture_refb.json";
    pub const REF_SB: &str = "ref_sb.csv";
    pub const CRASHES_RAW: &str = "crashes_raw.csv";
    pub const SYNTHETIC: &str = "synthetic_crashes.csv";
    pub const LOGS: &str = "logs";
    pub const VALIDATION: &str = "validation";
    pub const DIAGNOSTICS: &str = "diagnostics";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    GenFixtures,
    FitProfiles,
    FitDists,
    Fuse,
    ModelRefb,
    SampleRefsb,
    MatchSimulate,
    Ipf,
    Validate,
    RunAll,
}

impl Stage {
    /// Stages chained by `run-all`, after fixture generation.
    pub const CHAIN: [Stage; 8] = [
        Stage::FitProfiles,
        Stage::FitDists,
        Stage::Fuse,
        Stage::ModelRefb,
        Stage::SampleRefsb,
        Stage::MatchSimulate,
        Stage::Ipf,
        Stage::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenFixtures => "gen-fixtures",
            Stage::FitProfiles => "fit-profiles",
            Stage::FitDists => "fit-dists",
            Stage::Fuse => "fuse",
            Stage::ModelRefb => "model-refb",
            Stage::SampleRefsb => "sample-refsb",
            Stage::MatchSimulate => "match-simulate",
            Stage::Ipf => "ipf",
            Stage::Validate => "validate",
            Stage::RunAll => "run-all",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Stage::GenFixtures, Stage::RunAll]
            .into_iter()
            .chain(Stage::CHAIN)
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Fitted reference distributions of the behaviour parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviourFit {
    pub headway: TruncNormal,
    pub t_g: GenGammaFit,
    pub t_a: TruncNormal,
    /// Number of observed abnormal onsets behind the `t_a` fit.
    pub n_t_a: usize,
}

fn quantile_sample(n: usize, q: impl Fn(f64) -> f64) -> Vec<f64> {
    (0..n).map(|k| q((k as f64 + 0.5) / n as f64)).collect()
}

impl BehaviourFit {
    pub fn marginals(&self) -> BehaviourMarginals {
        BehaviourMarginals::from_quantiles(|p| self.headway.quantile(p), |p| self.t_g.quantile(p), |p| self.t_a.quantile(p))
    }

    /// Evenly spaced quantiles `(T, t_g, t_a)` standing in for reference samples.
    pub fn reference(&self, n: usize) -> [Vec<f64>; 3] {
        [
            quantile_sample(n, |p| self.headway.quantile(p)),
            quantile_sample(n, |p| self.t_g.quantile(p)),
            quantile_sample(n, |p| self.t_a.quantile(p)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProfileRow {
    event_id: String,
    v_c: f64,
    a_1: f64,
    a_2: f64,
    tau_s: f64,
    tau_1: f64,
    tau_2: f64,
    n_b: usize,
    r2_adj: f64,
    a_min: f64,
}

impl ProfileRow {
    fn new(id: &str, f: &FitResult) -> Self {
        let p = f.profile;
        ProfileRow {
            event_id: id.to_string(),
            v_c: p.v_c,
            a_1: p.a_1,
            a_2: p.a_2,
            tau_s: p.tau_s,
            tau_1: p.tau_1,
            tau_2: p.tau_2,
            n_b: f.n_b,
            r2_adj: f.r2_adj,
            a_min: f.a_min,
        }
    }
}

/// Signals extracted from one both-vehicle event.
#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    /// `d_init, v_f_init, a_f_min, v_l_init, a_l_min`.
    pub state: [f64; 5],
    pub lead: FitResult,
    pub follow: FitResult,
    /// Onset of abnormal acceleration from standstill, on the 0..5 s clock.
    pub t_a: Option<f64>,
}

/// Onset of a follower pulling away from standstill behind a stationary lead.
///
/// The onset is extrapolated back from the first sample above `onset_speed` along the
/// slope to the next sample.
pub fn abnormal_onset(t: &[f64], v_f: &[f64], v_l: &[f64], onset_speed: f64) -> Option<f64> {
    if v_f.first()?.abs() > ZERO_TOL || v_l.first()?.abs() > ZERO_TOL {
        return None;
    }
    let k = v_f.iter().position(|v| *v > onset_speed)?;
    if v_l[k] > onset_speed || k + 1 >= v_f.len() {
        return None;
    }
    let slope = (v_f[k + 1] - v_f[k]) / (t[k + 1] - t[k]);
    if !(slope > 0.0) {
        return None;
    }
    Some((t[k] - v_f[k] / slope + EVENT_SPAN).max(0.0))
}

/// Fit both speed traces of an event and read off its initial state.
pub fn extract_event(e: &CrashEvent, rate: f64, onset_speed: f64) -> Result<Extracted> {
    let e = resample_event(e, rate)?;
    let (d_init, v_f_init, v_l_init) = initial_state(&e)?;
    let v_f = e.v_f.as_ref().ok_or(Error::MissingSignal("v_f"))?;
    let v_l = e.v_l.as_ref().ok_or(Error::MissingSignal("v_l"))?;
    let lead = fit_piecewise(&e.t, v_l)?;
    let follow = fit_piecewise(&e.t, v_f)?;
    let a_f_min = if follow.a_min < -BRAKE_TOL { follow.a_min } else { 0.0 };
    Ok(Extracted {
        state: [d_init, v_f_init, a_f_min, v_l_init, lead.a_min],
        lead,
        follow,
        t_a: abnormal_onset(&e.t, v_f, v_l, onset_speed),
    })
}

/// `(v_l_init, a_l_min, dv_l)` of every REF_l profile.
pub fn ref_l_parameters(ref_l: &WeightedDataset) -> Result<WeightedDataset> {
    let c: Vec<&[f64]> = ["v_c", "a_1", "a_2", "tau_s", "tau_1", "tau_2"]
        .iter()
        .map(|n| ref_l.column(n))
        .collect::<Result<_>>()?;
    let dv = ref_l.column("dv_l")?;
    let rows: Vec<Vec<f64>> = (0..ref_l.len())
        .map(|i| {
            let p = SpeedProfile { v_c: c[0][i], a_1: c[1][i], a_2: c[2][i], tau_s: c[3][i], tau_1: c[4][i], tau_2: c[5][i] };
            vec![p.v_l_init(), min_fitted_accel(&p), dv[i]]
        })
        .collect();
    WeightedDataset::from_rows(&["v_l_init", "a_l_min", "dv_l"], &rows)?.with_weights(ref_l.weights().to_vec())
}

fn scalar_dataset(events: &[CrashEvent], dv: &str) -> Result<WeightedDataset> {
    let rows: Vec<Vec<f64>> = events
        .iter()
        .filter_map(|e| {
            let d = if dv == "dv_f" { e.dv_f } else { e.dv_l };
            Some(vec![e.v_f_init()?, d?])
        })
        .collect();
    WeightedDataset::from_rows(&["v_f_init", dv], &rows)
}

fn label_names(col: &[f64]) -> Vec<String> {
    col.iter().map(|v| format!("S{}", v.round() as i64)).collect()
}

fn patterns(data: &WeightedDataset) -> Result<Vec<String>> {
    let (t2, t1, ts, a1) = (data.column("tau_2")?, data.column("tau_1")?, data.column("tau_s")?, data.column("a_1")?);
    Ok((0..data.len()).map(|i| profile_pattern(t2[i], t1[i], ts[i], a1[i])).collect())
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
struct FuseDiagnostics {
    k_ref_f: KSelection,
    k_ref_b: KSelection,
    targets: [f64; 2],
    targets_estimated: bool,
    v_r_thd: f64,
    pairing: PairingOutcome,
    com_f_rows: usize,
    ref_f_positive: usize,
    com_b_rows: usize,
    ref_b_positive: usize,
}

#[derive(Debug, Clone, Serialize)]
struct MatchDiagnostics {
    rounds: usize,
    n_states: usize,
    n_empty: usize,
    n_sims: usize,
    shortfall: usize,
    written: usize,
    dropped_non_closing: usize,
    by_label: Vec<(String, usize)>,
    abnormal: usize,
}

#[derive(Debug, Clone, Serialize)]
struct ValidateSummary {
    rows: usize,
    total_weight: f64,
    positive: usize,
    invalid_logs: usize,
    max_proportion_delta: f64,
    dv_l_ks: Option<f64>,
    rejections: usize,
    expected_rejections: f64,
}

/// A configured pipeline rooted at one output directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub cfg: PipelineConfig,
    seed: u64,
    out: PathBuf,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        let seed = cfg.seed()?;
        let out = cfg.out_dir();
        Ok(Pipeline { cfg, seed, out })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn seed_for(&self, stage: Stage) -> u64 {
        derive_seed(self.seed, stage.name(), 0)
    }

    fn require(&self, path: &Path, stage: Stage) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::MissingInput { path: path.to_path_buf(), stage: stage.name().to_string() })
        }
    }

    fn diag<T: Serialize>(&self, stage: Stage, v: &T) -> Result<()> {
        let dir = self.path(files::DIAGNOSTICS);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_json(&dir.join(format!("{}.json", stage.name())), v)
    }

    fn fixture_inputs(&self) -> [PathBuf; 9] {
        let c = &self.cfg;
        [c.ciss_m(), c.ciss_f(), c.shrp2_f(), c.shrp2_b(), c.shrp2_b_dv(), c.pcm_b(), c.pcm_b_dv(), c.ref_l(), c.ref_sl()]
    }

    /// Whether `run-all` should draw fixtures first: every input is at its default
    /// fixture location and at least one is missing.
    pub fn needs_fixtures(&self) -> bool {
        let i = &self.cfg.inputs;
        let defaults = [
            &i.ciss_m, &i.ciss_f, &i.shrp2_f, &i.shrp2_b, &i.shrp2_b_dv, &i.pcm_b, &i.pcm_b_dv, &i.ref_l, &i.ref_sl,
        ]
        .iter()
        .all(|p| p.is_none());
        defaults && self.fixture_inputs().iter().any(|p| !p.exists())
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        log::info!("stage {stage}");
        match stage {
            Stage::GenFixtures => self.gen_fixtures(),
            Stage::FitProfiles => self.fit_profiles(),
            Stage::FitDists => self.fit_dists(),
            Stage::Fuse => self.fuse(),
            Stage::ModelRefb => self.model_refb(),
            Stage::SampleRefsb => self.sample_refsb(),
            Stage::MatchSimulate => self.match_simulate(),
            Stage::Ipf => self.ipf(),
            Stage::Validate => self.validate().map(|_| ()),
            Stage::RunAll => self.run_all(),
        }
    }

    pub fn run_all(&self) -> Result<()> {
        if self.needs_fixtures() {
            self.run(Stage::GenFixtures)?;
        }
        for s in Stage::CHAIN {
            self.run(s)?;
        }
        Ok(())
    }

    fn gen_fixtures(&self) -> Result<()> {
        let seed = self.seed_for(Stage::GenFixtures);
        let set = fixtures::generate(&self.cfg, seed)?;
        set.write(&self.cfg)?;
        fixtures::write_pairing_fixture(&self.cfg.fixture_dir(), 2000, seed)?;
        self.diag(
            Stage::GenFixtures,
            &serde_json::json!({
                "ciss_m": set.ciss_m.len(),
                "ciss_f": set.ciss_f.len(),
                "shrp2_f": set.shrp2_f.len(),
                "shrp2_b": set.shrp2_b.len(),
                "pcm_b": set.pcm_b.len(),
                "ref_l": set.ref_l.len(),
                "ref_sl": set.ref_sl.len(),
            }),
        )
    }

    fn load_series(&self, series: &Path, scalars: &Path) -> Result<Vec<CrashEvent>> {
        self.require(series, Stage::GenFixtures)?;
        self.require(scalars, Stage::GenFixtures)?;
        let mut events = load_events(series, EventSchema::Series)?;
        let dv = load_events(scalars, EventSchema::Scalar)?;
        attach_scalars(&mut events, &dv);
        Ok(events)
    }

    fn fit_profiles(&self) -> Result<()> {
        let rate = self.cfg.profile.rate;
        let onset = self.cfg.profile.onset_speed;
        let sets = [
            (self.load_series(&self.cfg.shrp2_b(), &self.cfg.shrp2_b_dv())?, "dv_f", files::STATES_SHRP2_B),
            (self.load_series(&self.cfg.pcm_b(), &self.cfg.pcm_b_dv())?, "dv_l", files::STATES_PCM_B),
        ];
        let mut lead_rows = Vec::new();
        let mut follow_rows = Vec::new();
        let mut t_a = Vec::new();
        let mut skipped = Vec::new();
        for (events, dv, name) in &sets {
            let fits: Vec<Result<Extracted>> = events.par_iter().map(|e| extract_event(e, rate, onset)).collect();
            let mut rows = Vec::new();
            for (e, f) in events.iter().zip(fits) {
                let dv_val = if *dv == "dv_f" { e.dv_f } else { e.dv_l };
                match (f, dv_val) {
                    (Ok(x), Some(d)) => {
                        lead_rows.push(ProfileRow::new(&e.event_id, &x.lead));
                        follow_rows.push(ProfileRow::new(&e.event_id, &x.follow));
                        if let Some(t) = x.t_a {
                            t_a.push(vec![t]);
                        }
                        let mut r = x.state.to_vec();
                        r.push(d);
                        rows.push(r);
                    }
                    (Err(err), _) => {
                        log::warn!("event {}: {err}", e.event_id);
                        skipped.push(e.event_id.clone());
                    }
                    (Ok(_), None) => {
                        log::warn!("event {}: no {dv}", e.event_id);
                        skipped.push(e.event_id.clone());
                    }
                }
            }
            let mut names = STATE_COLUMNS.to_vec();
            names.push(dv);
            WeightedDataset::from_rows(&names, &rows)?.write_csv(self.path(name))?;
        }
        write_rows(&self.path(files::PROFILES_LEAD), &lead_rows)?;
        write_rows(&self.path(files::PROFILES_FOLLOW), &follow_rows)?;
        WeightedDataset::from_rows(&["t_a"], &t_a)?.write_csv(self.path(files::TA_OBS))?;
        self.diag(
            Stage::FitProfiles,
            &serde_json::json!({ "fitted": lead_rows.len(), "abnormal_onsets": t_a.len(), "skipped": skipped }),
        )
    }

    fn fit_dists(&self) -> Result<()> {
        self.require(&self.cfg.ciss_m(), Stage::GenFixtures)?;
        let ta_path = self.path(files::TA_OBS);
        self.require(&ta_path, Stage::FitProfiles)?;
        let ratios: Vec<f64> = read_mass(self.cfg.ciss_m())?.iter().map(|m| m.ratio()).collect();
        let mass = fit_gengamma(&ratios)?;
        write_json(&self.path(files::MASS_FIT), &mass)?;
        let ta = WeightedDataset::read_csv(&ta_path)?;
        let b = &self.cfg.behaviour;
        let fit = BehaviourFit {
            headway: TruncNormal::new(b.headway_mean, b.headway_sd, b.headway_lo, b.headway_hi)?,
            t_g: GenGammaFit::from_params(b.t_g_scale, b.t_g_shape, 1.0)?,
            t_a: fit_truncnormal(ta.column("t_a")?, b.t_a_lo, b.t_a_hi)?,
            n_t_a: ta.len(),
        };
        write_json(&self.path(files::BEHAVIOUR), &fit)?;
        self.diag(Stage::FitDists, &serde_json::json!({ "mass_ratio": mass, "behaviour": fit, "n_mass": ratios.len() }))
    }

    fn fuse(&self) -> Result<()> {
        let seed = self.seed_for(Stage::Fuse);
        let mass_path = self.path(files::MASS_FIT);
        self.require(&mass_path, Stage::FitDists)?;
        for p in [files::STATES_SHRP2_B, files::STATES_PCM_B] {
            self.require(&self.path(p), Stage::FitProfiles)?;
        }
        for p in [self.cfg.ciss_f(), self.cfg.shrp2_f(), self.cfg.ref_l()] {
            self.require(&p, Stage::GenFixtures)?;
        }
        let mass: GenGammaFit = read_json(&mass_path)?;

        // Sub-step 2: Delta-v deduction and merging.
        let shrp2_f = scalar_dataset(&load_events(self.cfg.shrp2_f(), EventSchema::Scalar)?, "dv_f")?;
        let mut com_f = scalar_dataset(&load_events(self.cfg.ciss_f(), EventSchema::Scalar)?, "dv_l")?;
        com_f.append(&deduce_delta_v(&shrp2_f, &mass, derive_seed(seed, "dv-shrp2-f", 0))?.select(&["v_f_init", "dv_l"])?)?;
        let mut cols_b = STATE_COLUMNS.to_vec();
        cols_b.push("dv_l");
        let shrp2_b = WeightedDataset::read_csv(self.path(files::STATES_SHRP2_B))?;
        let mut com_b = deduce_delta_v(&shrp2_b, &mass, derive_seed(seed, "dv-shrp2-b", 0))?.select(&cols_b)?;
        com_b.append(&WeightedDataset::read_csv(self.path(files::STATES_PCM_B))?.select(&cols_b)?)?;

        log::debug!("COM_f and COM_b merged");
        // Sub-step 3: REF_f.
        let ref_l = ref_l_parameters(&WeightedDataset::read_csv(self.cfg.ref_l())?)?;
        let ref_dv = ref_l.select(&["dv_l"])?;
        let k_f = select_k(&com_f, &ref_dv, &["dv_l"], &self.cfg.knn.k_grid)?;
        let ref_f = build_ref_f(&com_f, ref_l.column("dv_l")?, &self.cfg.knn_config(k_f.k, seed))?;

        log::debug!("REF_f built");
        // Sub-step 4: REF_i.
        let n = self.cfg.pairing.n;
        let a = draw_rows(&ref_f, n, seed, "pair-a")?.select(&["v_f_init", "dv_l"])?;
        let b = draw_rows(&ref_l, n, seed, "pair-b")?.select(&["v_l_init", "a_l_min"])?;
        let com_b_f = {
            let sel = select_k(&com_b, &a, &["v_f_init", "dv_l"], &self.cfg.knn.k_grid)?;
            knn_weight(&com_b, &a, &["v_f_init", "dv_l"], &self.cfg.knn_config(sel.k, seed))?
        };
        let (v_f, v_l, a_l, w) =
            (com_b_f.column("v_f_init")?, com_b_f.column("v_l_init")?, com_b_f.column("a_l_min")?, com_b_f.weights());
        log::debug!("COM_b weighted toward REF_f");
        let (targets, targets_estimated) = match self.cfg.pairing.targets {
            Some(t) => (t, false),
            None => ([weighted_pearson(v_f, v_l, w)?, weighted_pearson(v_f, a_l, w)?], true),
        };
        let v_r_thd = match self.cfg.pairing.v_r_thd {
            Some(v) => v,
            None => {
                let rel: Vec<f64> = v_l.iter().zip(v_f).map(|(l, f)| l - f).collect();
                elbow_threshold(&rel, w)?
            }
        };
        let kde = Kde::new(ref_l.column("v_l_init")?, ref_l.weights(), self.cfg.pairing.kde_bandwidth)?;
        let (ref_i, pairing) =
            pair_datasets(&a, &b, &kde, (targets[0], targets[1]), &self.cfg.pairing_config(v_r_thd, seed))?;

        log::debug!("REF_i paired");
        // Sub-step 5: REF_b.
        let k_b = select_k(&com_b, &ref_i, &REF_B_MATCH, &self.cfg.knn.k_grid)?;
        let ref_b = build_ref_b(&com_b, &ref_i, &self.cfg.knn_config(k_b.k, seed))?;

        com_f.write_csv(self.path(files::COM_F))?;
        ref_f.write_csv(self.path(files::REF_F))?;
        com_b.write_csv(self.path(files::COM_B))?;
        ref_i.write_csv(self.path(files::REF_I))?;
        ref_b.write_csv(self.path(files::REF_B))?;
        self.diag(
            Stage::Fuse,
            &FuseDiagnostics {
                k_ref_f: k_f,
                k_ref_b: k_b,
                targets,
                targets_estimated,
                v_r_thd,
                pairing,
                com_f_rows: com_f.len(),
                ref_f_positive: ref_f.n_positive(),
                com_b_rows: com_b.len(),
                ref_b_positive: ref_b.n_positive(),
            },
        )
    }

    fn model_refb(&self) -> Result<()> {
        let p = self.path(files::REF_B);
        self.require(&p, Stage::Fuse)?;
        let ref_b = WeightedDataset::read_csv(&p)?.select(&STATE_COLUMNS)?;
        let model = fit_mixture(&ref_b)?;
        model.save(&self.path(files::MIXTURE_REFB))?;
        let summary: Vec<_> = model
            .components
            .iter()
            .map(|c| serde_json::json!({ "label": c.label, "proportion": c.proportion, "n_eff": c.n_eff }))
            .collect();
        self.diag(Stage::ModelRefb, &summary)
    }

    fn sample_refsb(&self) -> Result<()> {
        let p = self.path(files::MIXTURE_REFB);
        self.require(&p, Stage::ModelRefb)?;
        let model = MixtureModel::load(&p)?;
        let (mut ds, labels) = model.sample_labelled(self.cfg.mixture.n_sample, self.seed_for(Stage::SampleRefsb))?;
        let idx: Vec<f64> = labels
            .iter()
            .map(|l| l.parse::<SubDatasetLabel>().map(|s| (s.index() + 1) as f64))
            .collect::<Result<_>>()?;
        ds.push_column("label", idx)?;
        ds.write_csv(self.path(files::REF_SB))?;
        self.diag(Stage::SampleRefsb, &serde_json::json!({ "rows": ds.len() }))
    }

    fn match_simulate(&self) -> Result<()> {
        let seed = self.seed_for(Stage::MatchSimulate);
        self.require(&self.cfg.ref_sl(), Stage::GenFixtures)?;
        for (f, s) in [(files::REF_SB, Stage::SampleRefsb), (files::BEHAVIOUR, Stage::FitDists), (files::MASS_FIT, Stage::FitDists)] {
            self.require(&self.path(f), s)?;
        }
        let ref_sl = WeightedDataset::read_csv(self.cfg.ref_sl())?;
        let ref_sb = WeightedDataset::read_csv(self.path(files::REF_SB))?;
        let behaviour: BehaviourFit = read_json(&self.path(files::BEHAVIOUR))?;
        let mass: GenGammaFit = read_json(&self.path(files::MASS_FIT))?;
        let n_target = self.cfg.n_target();
        let simcfg = self.cfg.sim_config();
        let outcome = match_and_simulate(
            &ref_sl,
            &ref_sb,
            &behaviour.marginals(),
            n_target + n_target / 50 + 1,
            &self.cfg.match_config(seed),
            &simcfg,
        )?;

        let mut rows = Vec::new();
        let mut specs = Vec::new();
        let mut dropped = 0;
        for (i, c) in outcome.crashes.iter().enumerate() {
            let mut rng = rng_for(seed, "impact", i as u64);
            let rho = mass.sample(&mut rng);
            let (Some(t_c), Some(v_f), Some(v_l)) = (c.log.t_c, c.log.v_f_c, c.log.v_l_c) else {
                dropped += 1;
                continue;
            };
            let Ok(imp) = collinear_impact(v_f, v_l, rho) else {
                dropped += 1;
                continue;
            };
            let s = &c.spec;
            let p = &s.profile;
            rows.push(vec![
                s.d_init,
                s.v_f_init,
                s.a_f_min,
                s.headway,
                s.t_g,
                encode_t_a(s.t_a),
                p.v_l_init(),
                p.a_1,
                p.a_2,
                p.tau_s,
                p.tau_1,
                p.tau_2,
                c.a_l_min,
                if c.abnormal { 1.0 } else { 0.0 },
                t_c,
                t_c - EVENT_SPAN,
                imp.dv_pre,
                imp.dv_l,
                (c.label.index() + 1) as f64,
            ]);
            specs.push(*s);
            if rows.len() == n_target {
                break;
            }
        }
        if rows.len() < n_target {
            log::warn!("only {} of {n_target} valid crashes", rows.len());
        }
        let ds = WeightedDataset::from_rows(&OUTPUT_COLUMNS, &rows)?;
        ds.write_csv(self.path(files::CRASHES_RAW))?;
        if self.cfg.emit_tick_logs {
            self.write_logs(&specs, &simcfg)?;
        }
        let mut by_label: Vec<(String, usize)> = SubDatasetLabel::ALL.iter().map(|l| (l.to_string(), 0)).collect();
        for r in &rows {
            by_label[r[18] as usize - 1].1 += 1;
        }
        self.diag(
            Stage::MatchSimulate,
            &MatchDiagnostics {
                rounds: outcome.rounds,
                n_states: outcome.n_states,
                n_empty: outcome.n_empty,
                n_sims: outcome.n_sims,
                shortfall: n_target.saturating_sub(rows.len()),
                written: rows.len(),
                dropped_non_closing: dropped,
                by_label,
                abnormal: rows.iter().filter(|r| r[13] > 0.5).count(),
            },
        )
    }

    fn write_logs(&self, specs: &[ScenarioSpec], simcfg: &SimConfig) -> Result<()> {
        let dir = self.path(files::LOGS);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let cfg = SimConfig { record_ticks: true, ..*simcfg };
        specs.par_iter().enumerate().try_for_each(|(i, s)| {
            let log = simulate(s, &cfg)?;
            write_rows(&dir.join(format!("crash_{i:05}.csv")), &log.ticks)
        })
    }

    fn ipf_targets(&self, synth: &WeightedDataset, ref_sb: &WeightedDataset, ref_sl: &WeightedDataset, behaviour: &BehaviourFit) -> Result<Vec<IpfTarget>> {
        let mut targets = Vec::new();
        let mut scoped = |group: &str, ref_data: &WeightedDataset, ref_labels: &[String], synth_labels: &[String], params: &[&str]| -> Result<()> {
            let params: Vec<String> = params.iter().map(|s| s.to_string()).collect();
            let mut labels = ref_labels.to_vec();
            labels.sort();
            labels.dedup();
            for l in labels {
                let ri: Vec<usize> = (0..ref_data.len()).filter(|&i| ref_labels[i] == l && ref_data.weights()[i] > 0.0).collect();
                let si: Vec<usize> = (0..synth.len()).filter(|&i| synth_labels[i] == l).collect();
                if si.is_empty() {
                    continue;
                }
                for p in crate::validation::modeled_parameters(ref_data, &ri, &params)? {
                    let col = ref_data.column(&p)?;
                    targets.push(IpfTarget {
                        name: format!("{group}/{l}/{p}"),
                        column: p.clone(),
                        reference: ri.iter().map(|&i| col[i]).collect(),
                        ref_weights: ri.iter().map(|&i| ref_data.weights()[i]).collect(),
                        subset: Some(si.clone()),
                    });
                }
            }
            Ok(())
        };
        scoped("state", ref_sb, &label_names(ref_sb.column("label")?), &label_names(synth.column("label")?), &STATE_COLUMNS)?;
        scoped("profile", ref_sl, &patterns(ref_sl)?, &patterns(synth)?, &PROFILE_PARAMS)?;

        let [t_ref, tg_ref, ta_ref] = behaviour.reference(self.cfg.behaviour.n_ref);
        let abnormal: Vec<usize> = (0..synth.len()).filter(|&i| synth.column("abnormal").map(|c| c[i] > 0.5).unwrap_or(false)).collect();
        if !abnormal.is_empty() {
            targets.push(IpfTarget { name: "t_a".into(), column: "t_a".into(), ref_weights: vec![1.0; ta_ref.len()], reference: ta_ref, subset: Some(abnormal) });
        }
        targets.push(IpfTarget::global("T", t_ref));
        targets.push(IpfTarget::global("t_g", tg_ref));
        targets.push(IpfTarget {
            name: "label".into(),
            column: "label".into(),
            reference: ref_sb.column("label")?.to_vec(),
            ref_weights: ref_sb.weights().to_vec(),
            subset: None,
        });
        Ok(targets)
    }

    fn ipf(&self) -> Result<()> {
        let raw_path = self.path(files::CRASHES_RAW);
        self.require(&raw_path, Stage::MatchSimulate)?;
        self.require(&self.path(files::REF_SB), Stage::SampleRefsb)?;
        self.require(&self.path(files::BEHAVIOUR), Stage::FitDists)?;
        self.require(&self.cfg.ref_sl(), Stage::GenFixtures)?;
        let synth = WeightedDataset::read_csv(&raw_path)?;
        let ref_sb = WeightedDataset::read_csv(self.path(files::REF_SB))?;
        let ref_sl = WeightedDataset::read_csv(self.cfg.ref_sl())?;
        let behaviour: BehaviourFit = read_json(&self.path(files::BEHAVIOUR))?;
        let targets = self.ipf_targets(&synth, &ref_sb, &ref_sl, &behaviour)?;
        let (mut out, outcome): (WeightedDataset, IpfOutcome) =
            ipf_reweight(&synth, &targets, &self.cfg.ipf_config(self.seed_for(Stage::Ipf)))?;
        out.rescale_to_positive_count();
        out.write_csv(self.path(files::SYNTHETIC))?;
        self.diag(Stage::Ipf, &outcome)
    }

    /// Run the validation stage and return its report; hard failures are errors.
    pub fn validate(&self) -> Result<ValidationReport> {
        let seed = self.seed_for(Stage::Validate);
        let syn_path = self.path(files::SYNTHETIC);
        self.require(&syn_path, Stage::Ipf)?;
        self.require(&self.path(files::REF_SB), Stage::SampleRefsb)?;
        self.require(&self.path(files::BEHAVIOUR), Stage::FitDists)?;
        self.require(&self.cfg.ref_sl(), Stage::GenFixtures)?;
        self.require(&self.cfg.ref_l(), Stage::GenFixtures)?;
        let synth = WeightedDataset::read_csv(&syn_path)?;
        let ref_sb = WeightedDataset::read_csv(self.path(files::REF_SB))?;
        let ref_sl = WeightedDataset::read_csv(self.cfg.ref_sl())?;
        let ref_l = WeightedDataset::read_csv(self.cfg.ref_l())?;
        let behaviour: BehaviourFit = read_json(&self.path(files::BEHAVIOUR))?;
        let vcfg = self.cfg.validation_config(seed);

        let strs = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let ref_labels = label_names(ref_sb.column("label")?);
        let syn_labels = label_names(synth.column("label")?);
        let groups = [
            GroupReference {
                group: "state".into(),
                data: ref_sb.clone(),
                labels: ref_labels.clone(),
                synth_labels: syn_labels.clone(),
                parameters: strs(&STATE_COLUMNS),
            },
            GroupReference {
                group: "profile".into(),
                data: ref_sl.clone(),
                labels: patterns(&ref_sl)?,
                synth_labels: patterns(&synth)?,
                parameters: strs(&PROFILE_PARAMS),
            },
        ];
        let [t_ref, tg_ref, ta_ref] = behaviour.reference(self.cfg.behaviour.n_ref);
        let abnormal: Vec<usize> = (0..synth.len()).filter(|&i| synth.column("abnormal").map(|c| c[i] > 0.5).unwrap_or(false)).collect();
        let mut globals = vec![
            GlobalReference { parameter: "T".into(), weights: vec![1.0; t_ref.len()], values: t_ref.clone(), rows: None },
            GlobalReference { parameter: "t_g".into(), weights: vec![1.0; tg_ref.len()], values: tg_ref.clone(), rows: None },
        ];
        if abnormal.iter().any(|&i| synth.weights()[i] > 0.0) {
            globals.push(GlobalReference { parameter: "t_a".into(), weights: vec![1.0; ta_ref.len()], values: ta_ref, rows: Some(abnormal) });
        }
        let mut report = validate_marginals(&synth, &groups, &globals, &vcfg)?;
        let ref_dv = ref_l.column("dv_l")?;
        report.dv_l = Some(compare_delta_v(synth.column("dv_l")?, synth.weights(), ref_dv, ref_l.weights(), &vcfg)?);
        if self.cfg.validation.tsne_points > 0 {
            report.tsne = self.tsne_rows(&synth, &syn_labels, &ref_sb, &ref_labels, seed)?;
        }

        let dir = self.path(files::VALIDATION);
        report.write(&dir)?;
        for p in STATE_COLUMNS {
            write_cdf(
                dir.join(format!("cdf_{p}.csv")),
                &[("synthetic", synth.column(p)?, synth.weights()), ("reference", ref_sb.column(p)?, ref_sb.weights())],
            )?;
        }
        let ones = |n: usize| vec![1.0; n];
        write_cdf(dir.join("cdf_T.csv"), &[("synthetic", synth.column("T")?, synth.weights()), ("reference", &t_ref, &ones(t_ref.len()))])?;
        write_cdf(dir.join("cdf_t_g.csv"), &[("synthetic", synth.column("t_g")?, synth.weights()), ("reference", &tg_ref, &ones(tg_ref.len()))])?;
        write_cdf(dir.join("cdf_dv_l.csv"), &[("synthetic", synth.column("dv_l")?, synth.weights()), ("reference", ref_dv, ref_l.weights())])?;

        let t_e_thd = self.cfg.sim.t_e_thd;
        let invalid = synth.column("t_e")?.iter().filter(|t| !(t.abs() <= t_e_thd + 1e-9)).count();
        let total = synth.total_weight();
        let positive = synth.n_positive();
        let summary = ValidateSummary {
            rows: synth.len(),
            total_weight: total,
            positive,
            invalid_logs: invalid,
            max_proportion_delta: report.max_proportion_delta(),
            dv_l_ks: report.dv_l.as_ref().map(|d| d.ks_stat),
            rejections: report.rejections,
            expected_rejections: report.expected_rejections,
        };
        self.diag(Stage::Validate, &summary)?;
        if invalid > 0 {
            return Err(Error::validation(format!("{invalid} synthetic crashes fall outside the validity window")));
        }
        if (total - positive as f64).abs() > 1e-6 * positive.max(1) as f64 {
            return Err(Error::validation(format!("weights sum to {total}, expected {positive}")));
        }
        if summary.max_proportion_delta > self.cfg.validation.max_proportion_delta {
            return Err(Error::validation(format!(
                "sub-dataset share differs by {:.3} (limit {})",
                summary.max_proportion_delta, self.cfg.validation.max_proportion_delta
            )));
        }
        Ok(report)
    }

    /// Joint 1-D t-SNE per sub-dataset on standardized state columns.
    fn tsne_rows(&self, synth: &WeightedDataset, syn_labels: &[String], ref_sb: &WeightedDataset, ref_labels: &[String], seed: u64) -> Result<Vec<TsneRow>> {
        let m = (self.cfg.validation.tsne_points / 2).max(2);
        let mut labels = ref_labels.to_vec();
        labels.sort();
        labels.dedup();
        let params: Vec<String> = STATE_COLUMNS.iter().map(|s| s.to_string()).collect();
        let jobs: Vec<(usize, String)> = labels.into_iter().enumerate().collect();
        let rows: Vec<Option<TsneRow>> = jobs
            .par_iter()
            .map(|(k, l)| {
                let ri: Vec<usize> = (0..ref_sb.len()).filter(|&i| &ref_labels[i] == l).collect();
                let si: Vec<usize> = (0..synth.len()).filter(|&i| &syn_labels[i] == l && synth.weights()[i] > 0.0).collect();
                let cols = crate::validation::modeled_parameters(ref_sb, &ri, &params)?;
                if cols.len() < 2 || si.len() < 10 || ri.len() < 10 {
                    return Ok(None);
                }
                let mut rng = rng_for(seed, "tsne-draw", *k as u64);
                let pick = |data: &WeightedDataset, idx: &[usize], rng: &mut crate::util::SimRng| -> Result<Vec<Vec<f64>>> {
                    let w: Vec<f64> = idx.iter().map(|&i| data.weights()[i]).collect();
                    let c: Vec<&[f64]> = cols.iter().map(|n| data.column(n)).collect::<Result<_>>()?;
                    Ok(weighted_draws(&w, m, rng).into_iter().map(|j| c.iter().map(|col| col[idx[j]]).collect()).collect())
                };
                let mut s = pick(synth, &si, &mut rng)?;
                let mut r = pick(ref_sb, &ri, &mut rng)?;
                for j in 0..cols.len() {
                    let pooled: Vec<f64> = s.iter().chain(&r).map(|row| row[j]).collect();
                    let (mu, sd) = mean_sd(&pooled);
                    let sd = if sd > 0.0 { sd } else { 1.0 };
                    for row in s.iter_mut().chain(r.iter_mut()) {
                        row[j] = (row[j] - mu) / sd;
                    }
                }
                let cfg = self.cfg.tsne_config(derive_seed(seed, "tsne", *k as u64));
                let res = tsne_ks(&s, &vec![1.0; s.len()], &r, &vec![1.0; r.len()], &cfg)?;
                Ok(Some(TsneRow { group: "state".into(), sub_dataset: l.clone(), ks_stat: res.statistic, p_value: res.p_value, n_synth: s.len(), n_ref: r.len() }))
            })
            .collect::<Result<_>>()?;
        Ok(rows.into_iter().flatten().collect())
    }
}

/// Decode a synthetic row back into its scenario.
pub fn scenario_of(ds: &WeightedDataset, i: usize) -> Result<ScenarioSpec> {
    let g = |n: &str| ds.column(n).map(|c| c[i]);
    Ok(ScenarioSpec {
        d_init: g("d_init")?,
        v_f_init: g("v_f_init")?,
        a_f_min: g("a_f_min")?,
        headway: g("T")?,
        t_g: g("t_g")?,
        t_a: decode_t_a(g("t_a")?),
        profile: SpeedProfile::from_initial(g("v_l_init")?, g("a_1")?, g("a_2")?, g("tau_s")?, g("tau_1")?, g("tau_2")?),
    })
}

/// Sub-dataset label of a decoded scenario.
pub fn label_of(spec: &ScenarioSpec) -> Result<SubDatasetLabel> {
    categorize(spec.v_f_init, spec.v_l_init(), spec.a_f_min)
}
