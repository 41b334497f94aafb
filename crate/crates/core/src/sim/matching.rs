use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate, SimConfig, SimLog};
use crate::dist::{categorize, SubDatasetLabel};
use crate::error::{Error, Result};
use crate::model::{ScenarioSpec, SpeedProfile, WeightedDataset, EVENT_SPAN};
use crate::util::{mean_sd, rng_for, shuffle, weighted_draws, SimRng};

/// Percentile levels 0.01, 0.02, ..., 0.99.
pub const PERCENTILES: [f64; 99] = {
    let mut p = [0.0; 99];
    let mut i = 0;
    while i < 99 {
        p[i] = (i + 1) as f64 / 100.0;
        i += 1;
    }
    p
};

/// Candidate values for the three behaviour parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviourMarginals {
    pub headway: Vec<f64>,
    pub t_g: Vec<f64>,
    pub t_a: Vec<f64>,
}

impl BehaviourMarginals {
    /// Percentile sets from three quantile functions.
    pub fn from_quantiles(
        headway: impl Fn(f64) -> f64,
        t_g: impl Fn(f64) -> f64,
        t_a: impl Fn(f64) -> f64,
    ) -> Self {
        BehaviourMarginals {
            headway: PERCENTILES.iter().map(|&p| headway(p)).collect(),
            t_g: PERCENTILES.iter().map(|&p| t_g(p)).collect(),
            t_a: PERCENTILES.iter().map(|&p| t_a(p)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Link threshold on standardized `(v_l_init, a_l_min)`.
    pub d_e_thd: f64,
    pub n_iter_max: usize,
    /// Rows drawn from each dataset per round.
    pub n_draws: usize,
    pub max_rounds: usize,
    /// Share of S4 states given abnormal acceleration.
    pub abnormal_share: f64,
    pub seed: u64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            d_e_thd: 1.0,
            n_iter_max: 10,
            n_draws: 10_000,
            max_rounds: 10,
            abnormal_share: 0.562,
            seed: 0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_e_thd > 0.0) || self.n_iter_max == 0 || self.n_draws == 0 || self.max_rounds == 0 {
            return Err(Error::invalid("need d_e_thd > 0 and n_iter_max, n_draws, max_rounds >= 1"));
        }
        if !(0.0..=1.0).contains(&self.abnormal_share) {
            return Err(Error::invalid("abnormal share must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One valid synthetic crash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedCrash {
    pub round: usize,
    pub row: usize,
    pub label: SubDatasetLabel,
    pub abnormal: bool,
    pub spec: ScenarioSpec,
    pub a_l_min: f64,
    pub log: SimLog,
    pub n_sims: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub crashes: Vec<MatchedCrash>,
    pub rounds: usize,
    pub n_states: usize,
    /// States with no linkable profile.
    pub n_empty: usize,
    pub n_sims: usize,
    /// Valid crashes still missing when the draws ran out.
    pub shortfall: usize,
}

const SL_COLS: [&str; 7] = ["v_l_init", "a_l_min", "a_1", "a_2", "tau_s", "tau_1", "tau_2"];
const SB_COLS: [&str; 5] = ["d_init", "v_f_init", "a_f_min", "v_l_init", "a_l_min"];

pub(crate) struct Link {
    mean: [f64; 2],
    sd: [f64; 2],
}

impl Link {
    pub(crate) fn from(v: &[f64], a: &[f64]) -> Self {
        let (mv, sv) = mean_sd(v);
        let (ma, sa) = mean_sd(a);
        let fix = |s: f64| if s > 0.0 { s } else { 1.0 };
        Link {
            mean: [mv, ma],
            sd: [fix(sv), fix(sa)],
        }
    }

    pub(crate) fn distance(&self, v1: f64, a1: f64, v2: f64, a2: f64) -> f64 {
        (((v1 - v2) / self.sd[0]).powi(2) + ((a1 - a2) / self.sd[1]).powi(2)).sqrt()
    }

    #[allow(dead_code)]
    pub(crate) fn mean(&self) -> [f64; 2] {
        self.mean
    }
}

pub(crate) fn profile_of(u: &[f64]) -> SpeedProfile {
    SpeedProfile::from_initial(u[0], u[2], u[3], u[4], u[5], u[6])
}

/// Outcome of the previous simulation, steering which candidates stay.
#[derive(Clone, Copy)]
struct Last {
    headway: f64,
    t_g: f64,
    t_a: f64,
    /// Crash before the window; otherwise late or none.
    early: bool,
}

/// Keep candidates on the side of `pivot` that moves the crash toward 5 s.
fn prune(c: &mut Vec<f64>, pivot: f64, keep_larger: bool) {
    c.retain(|v| if keep_larger { *v > pivot } else { *v < pivot });
}

fn shuffled(v: &[f64], rng: &mut SimRng) -> Vec<f64> {
    let mut c = v.to_vec();
    shuffle(&mut c, rng);
    c
}

struct Search<'a> {
    state: &'a [f64],
    marg: &'a BehaviourMarginals,
    cfg: &'a MatchConfig,
    simcfg: &'a SimConfig,
    abnormal: bool,
    last: Option<Last>,
    n_sims: usize,
}

impl Search<'_> {
    fn sim(&mut self, profile: SpeedProfile, headway: f64, t_g: f64, t_a: f64) -> Option<(ScenarioSpec, SimLog)> {
        let spec = ScenarioSpec {
            d_init: self.state[0],
            v_f_init: self.state[1],
            a_f_min: self.state[2],
            headway,
            t_g,
            t_a,
            profile,
        };
        let log = simulate(&spec, self.simcfg).ok()?;
        self.n_sims += 1;
        if log.valid {
            return Some((spec, log));
        }
        self.last = Some(Last {
            headway,
            t_g,
            t_a,
            early: log.t_c.is_some_and(|t| t < EVENT_SPAN),
        });
        None
    }

    /// Nested candidate loops over T, t_g and (when abnormal) t_a for one profile.
    fn run_profile(&mut self, profile: SpeedProfile, rng: &mut SimRng) -> Option<(ScenarioSpec, SimLog)> {
        let mut hs = shuffled(&self.marg.headway, rng);
        loop {
            if let Some(l) = self.last {
                prune(&mut hs, l.headway, l.early);
            }
            let headway = hs.pop()?;
            let mut gs = shuffled(&self.marg.t_g, rng);
            loop {
                if let Some(l) = self.last {
                    prune(&mut gs, l.t_g, !l.early);
                }
                let Some(t_g) = gs.pop() else { break };
                if self.abnormal {
                    let mut as_ = shuffled(&self.marg.t_a, rng);
                    loop {
                        if let Some(l) = self.last {
                            if l.t_a.is_finite() {
                                prune(&mut as_, l.t_a, l.early);
                            }
                        }
                        let Some(t_a) = as_.pop() else { break };
                        if let Some(hit) = self.sim(profile, headway, t_g, t_a) {
                            return Some(hit);
                        }
                    }
                } else if let Some(hit) = self.sim(profile, headway, t_g, f64::INFINITY) {
                    return Some(hit);
                }
            }
        }
    }
}

fn rows(ds: &WeightedDataset, cols: &[&str], idx: &[usize]) -> Result<Vec<Vec<f64>>> {
    let c: Vec<&[f64]> = cols.iter().map(|n| ds.column(n)).collect::<Result<_>>()?;
    Ok(idx.iter().map(|&i| c.iter().map(|col| col[i]).collect()).collect())
}

/// Link drawn initial states with drawn lead profiles and search behaviour parameters
/// until each state yields a crash inside the window or its candidates run out.
pub fn match_and_simulate(
    ref_sl: &WeightedDataset,
    ref_sb: &WeightedDataset,
    marg: &BehaviourMarginals,
    n_target: usize,
    cfg: &MatchConfig,
    simcfg: &SimConfig,
) -> Result<MatchOutcome> {
    cfg.validate()?;
    simcfg.validate()?;
    if marg.headway.is_empty() || marg.t_g.is_empty() || marg.t_a.is_empty() {
        return Err(Error::invalid("behaviour candidate sets must be non-empty"));
    }
    let simcfg = SimConfig { record_ticks: false, ..*simcfg };
    let mut out = MatchOutcome {
        crashes: Vec::new(),
        rounds: 0,
        n_states: 0,
        n_empty: 0,
        n_sims: 0,
        shortfall: 0,
    };
    for round in 0..cfg.max_rounds {
        if out.crashes.len() >= n_target {
            break;
        }
        out.rounds += 1;
        let mut rng = rng_for(cfg.seed, "match-draw", round as u64);
        let ui = weighted_draws(ref_sl.weights(), cfg.n_draws, &mut rng);
        let vi = weighted_draws(ref_sb.weights(), cfg.n_draws, &mut rng);
        let u = rows(ref_sl, &SL_COLS, &ui)?;
        let v = rows(ref_sb, &SB_COLS, &vi)?;
        let u_v: Vec<f64> = u.iter().map(|r| r[0]).collect();
        let u_a: Vec<f64> = u.iter().map(|r| r[1]).collect();
        let link = Link::from(&u_v, &u_a);

        let results: Vec<(Option<MatchedCrash>, bool, usize)> = v
            .par_iter()
            .enumerate()
            .map(|(j, state)| {
                let mut rng = rng_for(cfg.seed, "match-row", (round * cfg.n_draws + j) as u64);
                let Ok(label) = categorize(state[1], state[3], state[2]) else {
                    return (None, true, 0);
                };
                let abnormal = label == SubDatasetLabel::S4 && rng.random::<f64>() < cfg.abnormal_share;
                let mut w: Vec<usize> = (0..u.len())
                    .filter(|&i| {
                        link.distance(u[i][0], u[i][1], state[3], state[4]) <= cfg.d_e_thd
                            && categorize(state[1], u[i][0], state[2]).is_ok_and(|l| l == label)
                    })
                    .collect();
                if w.is_empty() {
                    return (None, true, 0);
                }
                shuffle(&mut w, &mut rng);
                let mut search = Search {
                    state,
                    marg,
                    cfg,
                    simcfg: &simcfg,
                    abnormal,
                    last: None,
                    n_sims: 0,
                };
                let mut n_iter = 0;
                while n_iter < search.cfg.n_iter_max {
                    let Some(i) = w.pop() else { break };
                    n_iter += 1;
                    let profile = profile_of(&u[i]);
                    if profile.validate().is_err() {
                        continue;
                    }
                    if let Some((spec, log)) = search.run_profile(profile, &mut rng) {
                        let crash = MatchedCrash {
                            round,
                            row: j,
                            label,
                            abnormal,
                            spec,
                            a_l_min: u[i][1],
                            log,
                            n_sims: search.n_sims,
                        };
                        return (Some(crash), false, search.n_sims);
                    }
                }
                (None, false, search.n_sims)
            })
            .collect();
        out.n_states += v.len();
        for (crash, empty, sims) in results {
            out.n_sims += sims;
            out.n_empty += usize::from(empty);
            if let Some(c) = crash {
                out.crashes.push(c);
            }
        }
    }
    out.crashes.truncate(n_target);
    out.shortfall = n_target - out.crashes.len();
    if out.shortfall > 0 {
        log::warn!(
            "matching produced {} of {} valid crashes after {} rounds",
            out.crashes.len(),
            n_target,
            out.rounds
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::is_valid;

    fn sl(rows: &[[f64; 7]]) -> WeightedDataset {
        let r: Vec<Vec<f64>> = rows.iter().map(|x| x.to_vec()).collect();
        WeightedDataset::from_rows(&SL_COLS, &r).unwrap()
    }

    fn sb(rows: &[[f64; 5]]) -> WeightedDataset {
        let r: Vec<Vec<f64>> = rows.iter().map(|x| x.to_vec()).collect();
        WeightedDataset::from_rows(&SB_COLS, &r).unwrap()
    }

    fn marg() -> BehaviourMarginals {
        BehaviourMarginals::from_quantiles(|p| 0.5 + 2.5 * p, |p| 2.0 * p, |p| 4.9 * p + 0.05)
    }

    #[test]
    fn percentile_grid() {
        assert_eq!(PERCENTILES[0], 0.01);
        assert_eq!(PERCENTILES[98], 0.99);
    }

    #[test]
    fn planted_solution_found() {
        // A constant-speed approach that crashes at exactly 5 s without braking; strong
        // headway keeps IDM from braking away, so some candidate must land inside the window.
        let ref_sl = sl(&[[5.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0]]);
        let ref_sb = sb(&[[25.0, 10.0, 0.0, 5.0, 0.0]]);
        let cfg = MatchConfig { n_draws: 4, max_rounds: 1, ..MatchConfig::default() };
        let out = match_and_simulate(&ref_sl, &ref_sb, &marg(), 4, &cfg, &SimConfig::default()).unwrap();
        assert!(!out.crashes.is_empty());
        for c in &out.crashes {
            assert!(is_valid(&c.log, &SimConfig::default()));
            assert_eq!(c.label, SubDatasetLabel::S1);
        }
    }

    #[test]
    fn label_filter_and_empty_links() {
        // profiles all faster than the follower: S1 states can never link
        let ref_sl = sl(&[[12.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0]]);
        let ref_sb = sb(&[[25.0, 10.0, 0.0, 12.0, 0.0]]);
        // state itself is S5 (v_f <= v_l); profiles link and keep S5
        let out = match_and_simulate(&ref_sl, &ref_sb, &marg(), 1, &MatchConfig { n_draws: 2, max_rounds: 1, ..MatchConfig::default() }, &SimConfig::default()).unwrap();
        assert_eq!(out.n_empty, 0);
        let ref_sb = sb(&[[25.0, 15.0, 0.0, 12.0, 0.0]]);
        let out = match_and_simulate(&ref_sl, &ref_sb, &marg(), 1, &MatchConfig { n_draws: 2, max_rounds: 1, ..MatchConfig::default() }, &SimConfig::default()).unwrap();
        // S1 state with v_f 15 > v_l 12 links fine
        assert_eq!(out.n_empty, 0);
        let ref_sl = sl(&[[16.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0]]);
        let out = match_and_simulate(&ref_sl, &ref_sb, &marg(), 1, &MatchConfig { n_draws: 2, max_rounds: 1, ..MatchConfig::default() }, &SimConfig::default()).unwrap();
        // the only profile would turn the S1 state into S5
        assert_eq!(out.n_empty, 2);
        assert_eq!(out.n_sims, 0);
        assert_eq!(out.shortfall, 1);
    }

    #[test]
    fn abnormal_standstill_cases() {
        let ref_sl = sl(&[[0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0]]);
        let ref_sb = sb(&[[3.6, 0.0, 0.0, 0.0, 0.0]]);
        let cfg = MatchConfig { n_draws: 50, max_rounds: 1, abnormal_share: 1.0, ..MatchConfig::default() };
        let out = match_and_simulate(&ref_sl, &ref_sb, &marg(), 50, &cfg, &SimConfig::default()).unwrap();
        assert!(out.crashes.len() > 40, "{}", out.crashes.len());
        for c in &out.crashes {
            assert!(c.abnormal && c.spec.t_a < 5.0);
            // 3.6 m closes 2 s after onset
            assert!((c.log.t_c.unwrap() - (c.spec.t_a + 2.0)).abs() < 0.05 + 1e-9);
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let ref_sl = sl(&[[5.0, -1.0, -1.0, 0.0, 3.0, 1.0, 0.0], [8.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0]]);
        let ref_sb = sb(&[[20.0, 12.0, -3.0, 6.0, -0.5], [30.0, 14.0, 0.0, 8.0, 0.0]]);
        let cfg = MatchConfig { n_draws: 40, max_rounds: 2, ..MatchConfig::default() };
        let a = match_and_simulate(&ref_sl, &ref_sb, &marg(), 30, &cfg, &SimConfig::default()).unwrap();
        let b = match_and_simulate(&ref_sl, &ref_sb, &marg(), 30, &cfg, &SimConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
