use serde::{Deserialize, Serialize};

use super::ks::{ks_sorted, SortedSample};
use crate::error::{Error, Result};
use crate::model::WeightedDataset;
use crate::util::{cmp_f64, weighted_quantile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpfConfig {
    pub max_iter: usize,
    pub n_bins: usize,
    pub seed: u64,
}

impl Default for IpfConfig {
    fn default() -> Self {
        IpfConfig {
            max_iter: 100,
            n_bins: 20,
            seed: 0,
        }
    }
}

/// One marginal to rake toward: a column of the synthetic data, the reference sample
/// for it, and optionally the rows it applies to.
#[derive(Debug, Clone, PartialEq)]
pub struct IpfTarget {
    pub name: String,
    pub column: String,
    pub reference: Vec<f64>,
    pub ref_weights: Vec<f64>,
    /// Row indices the target is scoped to; `None` means every row.
    pub subset: Option<Vec<usize>>,
}

impl IpfTarget {
    pub fn global(column: &str, reference: Vec<f64>) -> Self {
        let n = reference.len();
        IpfTarget {
            name: column.to_string(),
            column: column.to_string(),
            reference,
            ref_weights: vec![1.0; n],
            subset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpfOutcome {
    /// Loss of every iterate; index 0 is the all-ones start.
    pub losses: Vec<f64>,
    pub best_iter: usize,
    /// KS statistic per target at the returned iterate.
    pub ks: Vec<(String, f64)>,
}

/// Fewest synthetic rows per bin before a target's binning is coarsened.
const ROWS_PER_BIN: usize = 10;

/// Precomputed binning and KS machinery for one target.
struct Prepared {
    rows: Vec<usize>,
    bin_of_row: Vec<usize>,
    target_share: Vec<f64>,
    sorted: SortedSample,
    ref_sorted: SortedSample,
    ref_w_sorted: Vec<f64>,
}

fn prepare(target: &IpfTarget, values: &[f64], n_bins: usize) -> Result<Prepared> {
    if target.reference.is_empty() || target.reference.len() != target.ref_weights.len() {
        return Err(Error::invalid(format!("target {}: empty or ragged reference", target.name)));
    }
    let rows: Vec<usize> = match &target.subset {
        Some(s) => s.clone(),
        None => (0..values.len()).collect(),
    };
    if let Some(&bad) = rows.iter().find(|&&i| i >= values.len()) {
        return Err(Error::invalid(format!("target {}: row {bad} out of range", target.name)));
    }
    let mut distinct: Vec<f64> = target.reference.clone();
    distinct.sort_by(cmp_f64);
    distinct.dedup();
    let ref_total: f64 = target.ref_weights.iter().sum();
    if ref_total <= 0.0 {
        return Err(Error::invalid(format!("target {}: reference has no weight", target.name)));
    }

    // small subsets cannot fill fine bins; keep about ROWS_PER_BIN rows in each
    let n_bins = n_bins.min((rows.len() / ROWS_PER_BIN).max(2));
    let (bin, n): (Box<dyn Fn(f64) -> usize>, usize) = if distinct.len() <= n_bins {
        // Categorical: each value is its own bin; off-support values go to the nearest.
        let cats = distinct.clone();
        let k = cats.len();
        (
            Box::new(move |x: f64| {
                let i = cats.partition_point(|c| *c < x);
                if i == 0 {
                    0
                } else if i >= cats.len() {
                    cats.len() - 1
                } else if (x - cats[i - 1]) <= (cats[i] - x) {
                    i - 1
                } else {
                    i
                }
            }),
            k,
        )
    } else {
        let mut edges: Vec<f64> = (1..n_bins)
            .map(|j| weighted_quantile(&target.reference, &target.ref_weights, j as f64 / n_bins as f64))
            .collect();
        edges.dedup();
        let k = edges.len() + 1;
        (Box::new(move |x: f64| edges.partition_point(|e| *e < x)), k)
    };
    let mut target_share = vec![0.0; n];
    for (x, w) in target.reference.iter().zip(&target.ref_weights) {
        target_share[bin(*x)] += w / ref_total;
    }
    let bin_of_row = rows.iter().map(|&i| bin(values[i])).collect();
    let sub: Vec<f64> = rows.iter().map(|&i| values[i]).collect();
    let ref_sorted = SortedSample::new(&target.reference);
    let ref_w_sorted = ref_sorted.arrange(&target.ref_weights);
    Ok(Prepared {
        rows,
        bin_of_row,
        target_share,
        sorted: SortedSample::new(&sub),
        ref_sorted,
        ref_w_sorted,
    })
}

impl Prepared {
    fn adjust(&self, w: &mut [f64]) {
        let mut cur = vec![0.0; self.target_share.len()];
        let mut total = 0.0;
        for (&i, &b) in self.rows.iter().zip(&self.bin_of_row) {
            cur[b] += w[i];
            total += w[i];
        }
        if total <= 0.0 {
            return;
        }
        let factor: Vec<f64> = cur
            .iter()
            .zip(&self.target_share)
            .map(|(c, t)| if *c > 0.0 && *t > 0.0 { t / (c / total) } else { 1.0 })
            .collect();
        for (&i, &b) in self.rows.iter().zip(&self.bin_of_row) {
            w[i] *= factor[b];
        }
    }

    /// `(ks, subset weight)`; KS is 1 when the subset carries no weight.
    fn ks(&self, w: &[f64]) -> (f64, f64) {
        let sub: Vec<f64> = self.rows.iter().map(|&i| w[i]).collect();
        let mass: f64 = sub.iter().sum();
        if mass <= 0.0 {
            return (1.0, 0.0);
        }
        let s = ks_sorted(
            self.sorted.values(),
            &self.sorted.arrange(&sub),
            self.ref_sorted.values(),
            &self.ref_w_sorted,
        );
        (s, mass)
    }
}

fn loss(prepared: &[Prepared], w: &[f64]) -> (f64, Vec<f64>) {
    let mut total = 0.0;
    let mut ks = Vec::with_capacity(prepared.len());
    for p in prepared {
        let (s, m) = p.ks(w);
        total += s * s * m;
        ks.push(s);
    }
    (total, ks)
}

/// Rake weights toward each target marginal and return the lowest-loss iterate.
///
/// Scoped targets are applied before global ones in every sweep; weights are then
/// rescaled to sum to the row count. The loss is the subset-mass-weighted sum of
/// squared KS statistics.
pub fn ipf_reweight(
    synth: &WeightedDataset,
    targets: &[IpfTarget],
    cfg: &IpfConfig,
) -> Result<(WeightedDataset, IpfOutcome)> {
    if cfg.max_iter == 0 || cfg.n_bins < 2 {
        return Err(Error::invalid("max_iter must be >= 1 and n_bins >= 2"));
    }
    let n = synth.len();
    if n == 0 {
        return Err(Error::invalid("empty dataset"));
    }
    let mut order: Vec<&IpfTarget> = targets.iter().filter(|t| t.subset.is_some()).collect();
    order.extend(targets.iter().filter(|t| t.subset.is_none()));
    let prepared: Vec<Prepared> = order
        .iter()
        .map(|t| prepare(t, synth.column(&t.column)?, cfg.n_bins))
        .collect::<Result<_>>()?;

    let mut w = vec![1.0; n];
    let (l0, ks0) = loss(&prepared, &w);
    let mut losses = vec![l0];
    let mut best = (l0, 0usize, w.clone(), ks0);
    for it in 1..=cfg.max_iter {
        for p in &prepared {
            p.adjust(&mut w);
        }
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            let f = n as f64 / s;
            w.iter_mut().for_each(|v| *v *= f);
        }
        let (l, ks) = loss(&prepared, &w);
        losses.push(l);
        if l < best.0 {
            best = (l, it, w.clone(), ks);
        }
    }
    let (_, best_iter, weights, ks) = best;
    let out = synth.clone().with_weights(weights)?;
    Ok((
        out,
        IpfOutcome {
            losses,
            best_iter,
            ks: order.iter().map(|t| t.name.clone()).zip(ks).collect(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    #[test]
    fn binary_closed_form_one_iteration() {
        let x: Vec<f64> = (0..100).map(|k| (k % 2) as f64).collect();
        let ds = WeightedDataset::from_columns(&[("b", x.clone())]).unwrap();
        let reference: Vec<f64> = (0..100).map(|k| if k < 80 { 0.0 } else { 1.0 }).collect();
        let cfg = IpfConfig {
            max_iter: 1,
            ..IpfConfig::default()
        };
        let (out, diag) = ipf_reweight(&ds, &[IpfTarget::global("b", reference)], &cfg).unwrap();
        for (v, w) in x.iter().zip(out.weights()) {
            let expect = if *v == 0.0 { 1.6 } else { 0.4 };
            assert!((w - expect).abs() < 1e-9);
        }
        assert_eq!(diag.best_iter, 1);
    }

    #[test]
    fn matching_marginal_keeps_unit_weights() {
        let x: Vec<f64> = (0..200).map(|k| k as f64 * 0.37 % 11.0).collect();
        let ds = WeightedDataset::from_columns(&[("x", x.clone())]).unwrap();
        let (out, diag) = ipf_reweight(&ds, &[IpfTarget::global("x", x)], &IpfConfig::default()).unwrap();
        assert_eq!(diag.best_iter, 0);
        assert!(out.weights().iter().all(|w| (*w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn two_correlated_marginals() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let n = 3000;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for _ in 0..n {
            let z: f64 = nrm.sample(&mut rng);
            a.push(z);
            b.push(0.6 * z + 0.8 * nrm.sample(&mut rng));
        }
        let ds = WeightedDataset::from_columns(&[("a", a.clone()), ("b", b.clone())]).unwrap();
        let ra: Vec<f64> = (0..2000).map(|_| nrm.sample(&mut rng) * 1.2 + 0.5).collect();
        let rb: Vec<f64> = (0..2000).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let targets = [IpfTarget::global("a", ra), IpfTarget::global("b", rb)];
        let (out, diag) = ipf_reweight(&ds, &targets, &IpfConfig::default()).unwrap();
        let best = diag.losses[diag.best_iter];
        assert!(best <= diag.losses[0]);
        assert!(diag.losses.iter().all(|l| l.is_finite()));
        assert_eq!(out.column("a").unwrap(), a.as_slice());
        assert!((out.total_weight() - n as f64).abs() < 1e-6);
    }

    #[test]
    fn subset_targets_touch_only_their_rows() {
        let x: Vec<f64> = (0..40).map(|k| (k % 4) as f64).collect();
        let ds = WeightedDataset::from_columns(&[("x", x)]).unwrap();
        let t = IpfTarget {
            name: "lo".into(),
            column: "x".into(),
            reference: vec![0.0, 0.0, 0.0, 1.0],
            ref_weights: vec![1.0; 4],
            subset: Some((0..20).collect()),
        };
        let cfg = IpfConfig { max_iter: 1, ..IpfConfig::default() };
        let (out, _) = ipf_reweight(&ds, &[t], &cfg).unwrap();
        let w = out.weights();
        // rows 20.. keep a common factor (the global rescale)
        assert!(w[20..].windows(2).all(|p| (p[0] - p[1]).abs() < 1e-12));
    }
}
