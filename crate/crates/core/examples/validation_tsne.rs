//! Compare two multivariate samples through a joint 1-D t-SNE embedding and a
//! permutation KS test on the embedded coordinates.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rearsynth::validation::{tsne_ks, TsneConfig};

fn sample(n: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| {
            let a: f64 = z.sample(&mut rng);
            vec![a + shift, 0.7 * a + 0.5 * z.sample(&mut rng), z.sample(&mut rng)]
        })
        .collect()
}

fn main() -> rearsynth::Result<()> {
    let reference = sample(300, 0.0, 1);
    let cfg = TsneConfig { n_perm: 500, ..TsneConfig::default() };
    for shift in [0.0, 0.5, 1.5] {
        let synth = sample(300, shift, 2);
        let r = tsne_ks(&synth, &vec![1.0; 300], &reference, &vec![1.0; 300], &cfg)?;
        println!("shift {shift:.1}: KS {:.3}, p {:.3}", r.statistic, r.p_value);
    }
    Ok(())
}
