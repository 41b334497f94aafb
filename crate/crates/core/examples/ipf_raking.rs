//! Rake a sample toward two reference marginals, one of them scoped to a subset.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rearsynth::weighting::{ipf_reweight, weighted_ks, IpfConfig, IpfTarget};
use rearsynth::WeightedDataset;

fn main() -> rearsynth::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let n = 4000;
    let z = Normal::new(0.0, 1.0).unwrap();
    let headway: Vec<f64> = (0..n).map(|_| 0.5 + rng.random::<f64>() * 2.5).collect();
    let glance: Vec<f64> = (0..n).map(|_| (0.8 + 0.5 * z.sample(&mut rng) as f64).max(0.0)).collect();
    let abnormal: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 }).collect();
    let ds = WeightedDataset::from_columns(&[("T", headway), ("t_g", glance), ("abnormal", abnormal.clone())])?;

    let ref_t: Vec<f64> = (0..3000).map(|_| (1.5 + 0.4 * z.sample(&mut rng) as f64).clamp(0.5, 3.0)).collect();
    let ref_g: Vec<f64> = (0..3000).map(|_| rng.random::<f64>() * 1.5).collect();
    let subset: Vec<usize> = (0..n).filter(|&i| abnormal[i] > 0.5).collect();
    let targets = vec![
        IpfTarget::global("T", ref_t.clone()),
        IpfTarget { name: "t_g | abnormal".into(), column: "t_g".into(), ref_weights: vec![1.0; ref_g.len()], reference: ref_g, subset: Some(subset) },
    ];
    let (out, diag) = ipf_reweight(&ds, &targets, &IpfConfig::default())?;
    println!("loss: start {:.3}, best {:.3} at iteration {}", diag.losses[0], diag.losses[diag.best_iter], diag.best_iter);
    for (name, ks) in &diag.ks {
        println!("  {name:<16} KS {ks:.4}");
    }
    let t = out.column("T")?;
    let ks = weighted_ks(t, out.weights(), &ref_t, &vec![1.0; ref_t.len()])?;
    println!("T after raking: KS {:.4}, p {:.3}", ks.statistic, ks.p_value);
    Ok(())
}
