//! Empirical check behind the candidate pruning in matching: with the driver-model
//! follower, crash time does not decrease with headway `T` and does not increase with
//! glance duration `t_g`.

use rearsynth::pipeline::fixtures::TruthGenerator;
use rearsynth::pipeline::PipelineConfig;
use rearsynth::sim::{simulate, SimConfig};
use rearsynth::ScenarioSpec;

/// One 20 Hz tick; crash times are interpolated inside a tick.
const TICK: f64 = 0.05;

/// Conflicts tuned to crash near the end of the event.
fn fixtures(n: usize) -> Vec<ScenarioSpec> {
    let cfg = PipelineConfig { seed: Some(100), ..PipelineConfig::default() };
    let gen = TruthGenerator::from_config(&cfg).unwrap();
    (0..n as u64).map(|i| gen.crash(100, "monotone", i, None).unwrap().spec).collect()
}

fn crash_time(s: &ScenarioSpec, cfg: &SimConfig) -> f64 {
    simulate(s, cfg).unwrap().t_c.unwrap_or(f64::INFINITY)
}

#[test]
fn crash_time_monotone_in_headway_and_glance() {
    let cfg = SimConfig { record_ticks: false, ..SimConfig::default() };
    let grid_t: Vec<f64> = (0..11).map(|k| 0.6 + 0.2 * k as f64).collect();
    let grid_g: Vec<f64> = (0..11).map(|k| 0.2 * k as f64).collect();
    let (mut crashing, mut bad_t, mut bad_g) = (0, 0, 0);
    for s in fixtures(100) {
        let t: Vec<f64> = grid_t.iter().map(|&h| crash_time(&ScenarioSpec { headway: h, ..s }, &cfg)).collect();
        let g: Vec<f64> = grid_g.iter().map(|&tg| crash_time(&ScenarioSpec { t_g: tg, ..s }, &cfg)).collect();
        bad_t += t.windows(2).filter(|w| w[1] < w[0] - TICK).count();
        bad_g += g.windows(2).filter(|w| w[1] > w[0] + TICK).count();
        if t.iter().chain(&g).any(|x| x.is_finite()) {
            crashing += 1;
        }
    }
    assert_eq!(crashing, 100);
    assert_eq!(bad_t, 0, "crash time fell as headway grew");
    assert_eq!(bad_g, 0, "crash time rose as glance grew");
}
