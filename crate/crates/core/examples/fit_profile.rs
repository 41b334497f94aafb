//! Recover a piecewise-linear lead-vehicle speed profile from a noisy 10 Hz trace.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rearsynth::profile::fit_piecewise;
use rearsynth::SpeedProfile;

fn main() -> rearsynth::Result<()> {
    // accelerate for 1.5 s, brake hard for 2 s, then hold
    let truth = SpeedProfile::from_initial(8.0, -4.5, 1.2, 1.5, 2.0, 1.5);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let t: Vec<f64> = (0..48).map(|k| -5.0 + k as f64 * 0.1).collect();
    let v: Vec<f64> = t.iter().map(|x| truth.speed_at(x + 5.0) + noise.sample(&mut rng)).collect();

    let fit = fit_piecewise(&t, &v)?;
    println!("variant    {:?} ({} breakpoints)", fit.variant, fit.n_b);
    println!("adj. R^2   {:.4}", fit.r2_adj);
    println!("          {:>8} {:>8}", "truth", "fit");
    for (name, a, b) in [
        ("v_c", truth.v_c, fit.profile.v_c),
        ("a_1", truth.a_1, fit.profile.a_1),
        ("a_2", truth.a_2, fit.profile.a_2),
        ("tau_s", truth.tau_s, fit.profile.tau_s),
        ("tau_1", truth.tau_1, fit.profile.tau_1),
        ("tau_2", truth.tau_2, fit.profile.tau_2),
    ] {
        println!("{name:<9} {a:>8.3} {b:>8.3}");
    }
    println!("a_l_min    {:.3} m/s^2", fit.a_min);
    Ok(())
}
