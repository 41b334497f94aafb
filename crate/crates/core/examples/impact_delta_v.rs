//! Crash severity from closing speed and mass ratio: restitution, momentum exchange
//! and the follower/lead Delta-v conversion.

use rearsynth::impact::{collinear_impact, restitution, transform_delta_v};

fn main() -> rearsynth::Result<()> {
    println!("{:>8} {:>8}", "dv_pre", "e");
    for dv in [0.5, 1.0, 2.0, 5.0, 10.0, 20.0] {
        println!("{dv:>8.1} {:>8.4}", restitution(dv)?);
    }

    // 50 km/h into a stationary car of equal, lighter and heavier mass
    let v_f = 50.0 / 3.6;
    println!("\n{:>5} {:>8} {:>8} {:>8}", "rho", "e", "dv_l", "dv_f");
    for rho in [0.7, 1.0, 1.4] {
        let r = collinear_impact(v_f, 0.0, rho)?;
        println!("{rho:>5.1} {:>8.4} {:>8.3} {:>8.3}", r.e, r.dv_l, r.dv_f);
    }
    println!("\nSHRP2-style dv_f = -3 m/s at rho = 1.2 -> dv_l = {:.3}", transform_delta_v(-3.0, 1.2)?);
    Ok(())
}
