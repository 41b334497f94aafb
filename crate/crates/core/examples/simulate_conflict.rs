//! Simulate lead/follower conflicts at 20 Hz: scan the initial gap for a crash that lands
//! inside the validity window around the end of the 5 s event, then print its trajectory.

use rearsynth::sim::{simulate, SimConfig};
use rearsynth::{ScenarioSpec, SpeedProfile};

fn main() -> rearsynth::Result<()> {
    // lead at 14 m/s brakes at -5 m/s^2 for 2.8 s starting 0.7 s into the event
    let profile = SpeedProfile::from_initial(14.0, -5.0, 0.0, 0.7, 2.8, 0.0);
    let base = ScenarioSpec {
        d_init: 16.0,
        v_f_init: 16.0,
        a_f_min: -3.5,
        headway: 1.2,
        t_g: 1.4,
        t_a: f64::INFINITY,
        profile,
    };
    let cfg = SimConfig::default();
    let mut hit = None;
    println!("{:>7} {:>7} {:>7}", "d_init", "t_c", "valid");
    for k in 0..30 {
        let spec = ScenarioSpec { d_init: 16.0 + 0.5 * k as f64, ..base };
        let log = simulate(&spec, &cfg)?;
        let t_c = log.t_c.map_or("-".to_string(), |t| format!("{t:.2}"));
        println!("{:>7.1} {t_c:>7} {:>7}", spec.d_init, log.valid);
        if log.valid {
            hit = Some(log);
            break;
        }
    }
    let Some(log) = hit else {
        println!("no valid crash in the scanned range");
        return Ok(());
    };
    println!("\nclosing speed at impact {:.2} m/s", log.dv_pre().unwrap_or(f64::NAN));
    println!("{:>5} {:>7} {:>6} {:>6} {:>6}", "t", "gap", "v_f", "a_f", "v_l");
    for tick in log.ticks.iter().step_by(5) {
        println!("{:>5.2} {:>7.2} {:>6.2} {:>6.2} {:>6.2}", tick.t, tick.gap, tick.v_f, tick.a_f, tick.v_l);
    }
    Ok(())
}
