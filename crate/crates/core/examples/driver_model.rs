//! Drive the follower model by hand: IDM car following, looming-based evidence
//! accumulation and the braking ramp that follows.

use rearsynth::driver::{brake_response_step, idm_accel, inverse_ttc, looming, BrakeModelParams, FollowerState, IdmParams};

fn main() -> rearsynth::Result<()> {
    let idm = IdmParams::default();
    for d in [2.0, 5.0, 20.0, 60.0] {
        println!("idm_accel(v=0, dv=0, d={d:>4}) = {:.4}", idm_accel(&idm, 0.0, 0.0, d)?);
    }

    // follower at 15 m/s closing on a stopped lead 40 m ahead, no IDM input
    let p = BrakeModelParams::default();
    let dt = 0.05;
    let (mut gap, mut v_f) = (40.0, 15.0);
    let mut s = FollowerState { v: v_f, ..FollowerState::default() };
    let mut prev = 0.0;
    println!("{:>5} {:>7} {:>7} {:>8} {:>7} {:>6}", "t", "gap", "v_f", "1/TTC", "A", "a_b");
    for k in 0..120 {
        let t = k as f64 * dt;
        let loom = looming(gap, -v_f, p.veh_width)?;
        let (next, a_b) = brake_response_step(&p, &s, loom, prev, true, -8.0, dt);
        prev = loom;
        s = next;
        v_f = (v_f + a_b * dt).max(0.0);
        gap -= v_f * dt;
        if k % 10 == 0 || (s.braking && k % 5 == 0) {
            println!("{t:>5.2} {gap:>7.2} {v_f:>7.2} {:>8.3} {:>7.3} {a_b:>6.2}", inverse_ttc(gap, v_f, 0.0), s.acc);
        }
        if gap <= 0.0 || v_f == 0.0 {
            println!("{} at t = {t:.2} s", if gap <= 0.0 { "collision" } else { "stopped" });
            break;
        }
    }
    Ok(())
}
