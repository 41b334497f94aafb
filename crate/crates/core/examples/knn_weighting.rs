//! Correct a severity-biased sample with KNN weighting, picking k by the KS loss.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, LogNormal};
use rearsynth::weighting::{knn_weight, select_k, weighted_ks, KnnConfig};
use rearsynth::WeightedDataset;

fn main() -> rearsynth::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let dist = LogNormal::new(1.2, 0.5).unwrap();
    // severe crashes are more likely to be recorded: keep with probability dv / 8
    let mut biased = Vec::new();
    while biased.len() < 400 {
        let v: f64 = dist.sample(&mut rng);
        if rng.random::<f64>() < (v / 8.0).min(1.0) {
            biased.push(v);
        }
    }
    let reference: Vec<f64> = (0..150).map(|_| dist.sample(&mut rng)).collect();

    let raw = WeightedDataset::from_columns(&[("dv_l", biased.clone())])?;
    let refs = WeightedDataset::from_columns(&[("dv_l", reference.clone())])?;
    let grid: Vec<usize> = (1..=20).collect();
    let sel = select_k(&raw, &refs, &["dv_l"], &grid)?;
    println!("k by loss: {:?}", &sel.loss_by_k[..5]);
    println!("chosen k = {}", sel.k);

    let out = knn_weight(&raw, &refs, &["dv_l"], &KnnConfig { k: sel.k, ..KnnConfig::default() })?;
    let ones = vec![1.0; reference.len()];
    let before = weighted_ks(&biased, &vec![1.0; biased.len()], &reference, &ones)?;
    let after = weighted_ks(&biased, out.weights(), &reference, &ones)?;
    println!("KS before {:.3} (p {:.3}), after {:.3} (p {:.3})", before.statistic, before.p_value, after.statistic, after.p_value);
    println!("weights sum to {:.1} over {} positive rows", out.total_weight(), out.n_positive());
    Ok(())
}
