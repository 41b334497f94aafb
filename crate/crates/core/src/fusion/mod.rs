//! Combining the crash datasets: Delta-v deduction, reference weighting and pairing.

mod kde;
mod pairing;

pub use kde::{elbow_threshold, Bandwidth, Kde};
pub use pairing::{pair_datasets, PairingConfig, PairingOutcome};

use crate::dist::GenGammaFit;
use crate::error::{Error, Result};
use crate::model::WeightedDataset;
use crate::util::{rng_for, weighted_draws};
use crate::weighting::{knn_weight, KnnConfig};

/// Columns matched when weighting the combined both-vehicle dataset.
pub const REF_B_MATCH: [&str; 4] = ["v_f_init", "dv_l", "v_l_init", "a_l_min"];

/// Lead-vehicle Delta-v for every row, from the follower's and a drawn mass ratio.
///
/// Rows get independent ratios from `mass_fit`; an existing `dv_l` column is replaced.
pub fn deduce_delta_v(data: &WeightedDataset, mass_fit: &GenGammaFit, seed: u64) -> Result<WeightedDataset> {
    let dv_f = data.column("dv_f")?;
    if let Some(bad) = dv_f.iter().find(|v| !(**v <= 0.0)) {
        return Err(Error::invalid(format!("dv_f must be <= 0 (follower slowed by impact), got {bad}")));
    }
    let mut rng = rng_for(seed, "mass-ratio", 0);
    let dv_l: Vec<f64> = dv_f
        .iter()
        .map(|v| -mass_fit.sample(&mut rng) * v)
        .collect();
    let mut out = data.clone();
    out.set_column("dv_l", dv_l)?;
    Ok(out)
}

/// Weight the following-vehicle dataset so its `dv_l` follows the reference samples.
pub fn build_ref_f(com_f: &WeightedDataset, ref_dv: &[f64], cfg: &KnnConfig) -> Result<WeightedDataset> {
    com_f.column("v_f_init")?;
    let draws = WeightedDataset::from_columns(&[("dv_l", ref_dv.to_vec())])?;
    knn_weight(com_f, &draws, &["dv_l"], cfg)
}

/// Weight the both-vehicle dataset toward the paired reference on four columns.
pub fn build_ref_b(com_b: &WeightedDataset, ref_i: &WeightedDataset, cfg: &KnnConfig) -> Result<WeightedDataset> {
    for c in ["d_init", "a_f_min"] {
        com_b.column(c)?;
    }
    knn_weight(com_b, ref_i, &REF_B_MATCH, cfg)
}

/// `n` rows drawn with replacement in proportion to the weights; output weights are 1.
pub fn draw_rows(data: &WeightedDataset, n: usize, seed: u64, tag: &str) -> Result<WeightedDataset> {
    if data.total_weight() <= 0.0 {
        return Err(Error::invalid("cannot draw from a dataset without weight"));
    }
    let mut rng = rng_for(seed, tag, 0);
    let idx = weighted_draws(data.weights(), n, &mut rng);
    let mut out = data.subset(&idx);
    out.set_weights(vec![1.0; idx.len()])?;
    Ok(out)
}
