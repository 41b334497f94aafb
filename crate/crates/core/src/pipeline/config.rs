use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::driver::{BrakeModelParams, DriverParams, IdmParams};
use crate::error::{Error, Result};
use crate::fusion::{Bandwidth, PairingConfig};
use crate::sim::{MatchConfig, SimConfig};
use crate::validation::{TsneConfig, ValidationConfig};
use crate::weighting::{IpfConfig, KnnConfig};

/// Input file locations; unset entries fall back to `<out>/fixtures/<name>.csv`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub ciss_m: Option<PathBuf>,
    pub ciss_f: Option<PathBuf>,
    pub shrp2_f: Option<PathBuf>,
    pub shrp2_b: Option<PathBuf>,
    pub shrp2_b_dv: Option<PathBuf>,
    pub pcm_b: Option<PathBuf>,
    pub pcm_b_dv: Option<PathBuf>,
    pub ref_l: Option<PathBuf>,
    pub ref_sl: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSizes {
    pub ciss_m: usize,
    pub ciss_f: usize,
    pub shrp2_f: usize,
    pub shrp2_b: usize,
    pub pcm_b: usize,
    pub ref_l: usize,
    pub ref_sl: usize,
    /// Share of PCM follower speeds set to exactly 50 km/h.
    pub pcm_spike: f64,
}

impl Default for FixtureSizes {
    fn default() -> Self {
        FixtureSizes {
            ciss_m: 748,
            ciss_f: 408,
            shrp2_f: 116,
            shrp2_b: 37,
            pcm_b: 861,
            ref_l: 132,
            ref_sl: 10_000,
            pcm_spike: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    /// Series are resampled to this rate before fitting (Hz).
    pub rate: f64,
    /// Follower speed that marks the onset of abnormal acceleration (m/s).
    pub onset_speed: f64,
}

impl Default for ProfileSection {
    fn default() -> Self {
        ProfileSection { rate: 10.0, onset_speed: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnSection {
    pub k_grid: Vec<usize>,
    pub n_draws: usize,
}

impl Default for KnnSection {
    fn default() -> Self {
        KnnSection { k_grid: (1..=20).collect(), n_draws: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingSection {
    /// Rows drawn from each reference before pairing.
    pub n: usize,
    pub eta_step: f64,
    /// Fixed relative-speed threshold; unset means the elbow of the data.
    pub v_r_thd: Option<f64>,
    /// Target `(r(v_f, v_l), r(v_f, a_l_min))`; unset means estimate them from COM_b.
    pub targets: Option<[f64; 2]>,
    pub weak_corr_bound: f64,
    pub kde_bandwidth: Bandwidth,
}

impl Default for PairingSection {
    fn default() -> Self {
        PairingSection { n: 10_000, eta_step: 2.0, v_r_thd: None, targets: None, weak_corr_bound: 0.3, kde_bandwidth: Bandwidth::Silverman }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSection {
    pub n_sample: usize,
}

impl Default for MixtureSection {
    fn default() -> Self {
        MixtureSection { n_sample: 10_000 }
    }
}

/// Reference distributions of the behaviour parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviourSection {
    pub headway_mean: f64,
    pub headway_sd: f64,
    pub headway_lo: f64,
    pub headway_hi: f64,
    pub t_g_shape: f64,
    pub t_g_scale: f64,
    pub t_a_lo: f64,
    pub t_a_hi: f64,
    /// Size of each drawn reference sample.
    pub n_ref: usize,
}

impl Default for BehaviourSection {
    fn default() -> Self {
        BehaviourSection {
            headway_mean: 1.5,
            headway_sd: 0.4,
            headway_lo: 0.5,
            headway_hi: 3.0,
            t_g_shape: 1.5,
            t_g_scale: 0.6,
            t_a_lo: 0.0,
            t_a_hi: 5.0,
            n_ref: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub rate: f64,
    pub t_max: f64,
    pub t_e_thd: f64,
    pub speed_limit: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimConfig::default();
        SimSection { rate: s.rate, t_max: s.t_max, t_e_thd: s.t_e_thd, speed_limit: s.speed_limit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmSection {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d0: f64,
}

impl Default for IdmSection {
    fn default() -> Self {
        let p = IdmParams::default();
        IdmSection { a: p.a_max, b: p.b_comf, c: p.c, d0: p.d_0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrakeSection {
    #[serde(rename = "K")]
    pub k: f64,
    pub lambda: f64,
    #[serde(rename = "A_thr")]
    pub a_thr: f64,
    pub gamma: f64,
    pub jerk: f64,
    pub veh_width: f64,
}

impl Default for BrakeSection {
    fn default() -> Self {
        let p = BrakeModelParams::default();
        BrakeSection { k: p.gain, lambda: p.leak, a_thr: p.threshold, gamma: p.gamma, jerk: p.jerk, veh_width: p.veh_width }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbnormalSection {
    pub a_a: f64,
}

impl Default for AbnormalSection {
    fn default() -> Self {
        AbnormalSection { a_a: DriverParams::default().a_a }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchSection {
    pub d_e_thd: f64,
    pub n_iter_max: usize,
    pub n_draws: usize,
    pub max_rounds: usize,
    pub abnormal_share: f64,
}

impl Default for MatchSection {
    fn default() -> Self {
        let m = MatchConfig::default();
        MatchSection {
            d_e_thd: m.d_e_thd,
            n_iter_max: m.n_iter_max,
            n_draws: m.n_draws,
            max_rounds: m.max_rounds,
            abnormal_share: m.abnormal_share,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpfSection {
    pub max_iter: usize,
    pub n_bins: usize,
}

impl Default for IpfSection {
    fn default() -> Self {
        let c = IpfConfig::default();
        IpfSection { max_iter: c.max_iter, n_bins: c.n_bins }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSection {
    pub n_perm: usize,
    pub alpha: f64,
    /// Pooled points per t-SNE comparison; 0 skips t-SNE.
    pub tsne_points: usize,
    pub tsne_iters: usize,
    /// Largest tolerated sub-dataset share difference before the stage fails.
    pub max_proportion_delta: f64,
}

impl Default for ValidationSection {
    fn default() -> Self {
        ValidationSection { n_perm: 1000, alpha: 0.05, tsne_points: 1000, tsne_iters: 500, max_proportion_delta: 0.05 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub n_target: Option<usize>,
    pub emit_tick_logs: bool,
    pub inputs: Inputs,
    pub fixtures: FixtureSizes,
    pub profile: ProfileSection,
    pub knn: KnnSection,
    pub pairing: PairingSection,
    pub mixture: MixtureSection,
    pub behaviour: BehaviourSection,
    pub sim: SimSection,
    pub idm: IdmSection,
    pub brake: BrakeSection,
    pub abnormal: AbnormalSection,
    #[serde(rename = "match")]
    pub matching: MatchSection,
    pub ipf: IpfSection,
    pub validation: ValidationSection,
}

pub const DEFAULT_N_TARGET: usize = 5000;

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("a seed is required (config `seed` or --seed)".into()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn n_target(&self) -> usize {
        self.n_target.unwrap_or(DEFAULT_N_TARGET)
    }

    pub fn fixture_dir(&self) -> PathBuf {
        self.out_dir().join("fixtures")
    }

    pub fn driver_params(&self) -> DriverParams {
        DriverParams {
            idm: IdmParams {
                a_max: self.idm.a,
                b_comf: self.idm.b,
                c: self.idm.c,
                d_0: self.idm.d0,
                v_0: self.sim.speed_limit,
                ..IdmParams::default()
            },
            brake: BrakeModelParams {
                veh_width: self.brake.veh_width,
                gain: self.brake.k,
                leak: self.brake.lambda,
                threshold: self.brake.a_thr,
                gamma: self.brake.gamma,
                jerk: self.brake.jerk,
            },
            a_a: self.abnormal.a_a,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            rate: self.sim.rate,
            t_max: self.sim.t_max,
            t_e_thd: self.sim.t_e_thd,
            speed_limit: self.sim.speed_limit,
            driver: self.driver_params(),
            record_ticks: false,
        }
    }

    pub fn knn_config(&self, k: usize, seed: u64) -> KnnConfig {
        KnnConfig { k, n_draws: self.knn.n_draws, k_grid: self.knn.k_grid.clone(), seed }
    }

    pub fn pairing_config(&self, v_r_thd: f64, seed: u64) -> PairingConfig {
        let step = self.pairing.eta_step;
        let n = (100.0 / step).round() as usize;
        PairingConfig {
            eta_grid: (0..=n).map(|k| (k as f64 * step).min(100.0)).collect(),
            v_r_thd,
            weak_corr_bound: self.pairing.weak_corr_bound,
            kde_bandwidth: self.pairing.kde_bandwidth,
            seed,
        }
    }

    pub fn match_config(&self, seed: u64) -> MatchConfig {
        MatchConfig {
            d_e_thd: self.matching.d_e_thd,
            n_iter_max: self.matching.n_iter_max,
            n_draws: self.matching.n_draws,
            max_rounds: self.matching.max_rounds,
            abnormal_share: self.matching.abnormal_share,
            seed,
        }
    }

    pub fn ipf_config(&self, seed: u64) -> IpfConfig {
        IpfConfig { max_iter: self.ipf.max_iter, n_bins: self.ipf.n_bins, seed }
    }

    pub fn validation_config(&self, seed: u64) -> ValidationConfig {
        ValidationConfig { n_perm: self.validation.n_perm, alpha: self.validation.alpha, seed }
    }

    pub fn tsne_config(&self, seed: u64) -> TsneConfig {
        TsneConfig { iters: self.validation.tsne_iters, n_perm: self.validation.n_perm, seed, ..TsneConfig::default() }
    }

    fn input(&self, set: &Option<PathBuf>, name: &str) -> PathBuf {
        set.clone().unwrap_or_else(|| self.fixture_dir().join(format!("{name}.csv")))
    }

    pub fn ciss_m(&self) -> PathBuf {
        self.input(&self.inputs.ciss_m, "ciss_m")
    }
    pub fn ciss_f(&self) -> PathBuf {
        self.input(&self.inputs.ciss_f, "ciss_f")
    }
    pub fn shrp2_f(&self) -> PathBuf {
        self.input(&self.inputs.shrp2_f, "shrp2_f")
    }
    pub fn shrp2_b(&self) -> PathBuf {
        self.input(&self.inputs.shrp2_b, "shrp2_b")
    }
    pub fn shrp2_b_dv(&self) -> PathBuf {
        self.input(&self.inputs.shrp2_b_dv, "shrp2_b_dv")
    }
    pub fn pcm_b(&self) -> PathBuf {
        self.input(&self.inputs.pcm_b, "pcm_b")
    }
    pub fn pcm_b_dv(&self) -> PathBuf {
        self.input(&self.inputs.pcm_b_dv, "pcm_b_dv")
    }
    pub fn ref_l(&self) -> PathBuf {
        self.input(&self.inputs.ref_l, "ref_l")
    }
    pub fn ref_sl(&self) -> PathBuf {
        self.input(&self.inputs.ref_sl, "ref_sl")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_keys_parse() {
        let c = PipelineConfig::from_toml(
            r#"
            seed = 7
            [idm]
            a = 2.5
            d0 = 3.0
            [brake]
            K = 50.0
            A_thr = 0.5
            lambda = 0.02
            [abnormal]
            a_a = 2.0
            [match]
            d_e_thd = 0.8
            "#,
        )
        .unwrap();
        let d = c.driver_params();
        assert_eq!((d.idm.a_max, d.idm.d_0, d.a_a), (2.5, 3.0, 2.0));
        assert_eq!((d.brake.gain, d.brake.threshold, d.brake.leak), (50.0, 0.5, 0.02));
        assert_eq!(c.match_config(1).d_e_thd, 0.8);
        assert_eq!(c.seed().unwrap(), 7);
    }

    #[test]
    fn unknown_keys_and_missing_seed() {
        assert!(PipelineConfig::from_toml("[idm]\nbogus = 1").is_err());
        assert!(PipelineConfig::default().seed().is_err());
    }

    #[test]
    fn eta_grid_default() {
        let g = PipelineConfig::default().pairing_config(1.31, 0).eta_grid;
        assert_eq!(g.len(), 51);
        assert_eq!(g[50], 100.0);
    }
}
