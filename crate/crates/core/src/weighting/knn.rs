use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ks::{ks_sorted, SortedSample};
use crate::error::{Error, Result};
use crate::model::WeightedDataset;
use crate::util::{cmp_f64, mean_sd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    /// Number of reference draws `N`.
    pub n_draws: usize,
    pub k_grid: Vec<usize>,
    pub seed: u64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 5,
            n_draws: 10_000,
            k_grid: (1..=20).collect(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k: usize,
    pub loss_by_k: Vec<(usize, f64)>,
}

/// Neighbours of one reference draw: exact matches, else the nearest few by `(d, index)`.
struct Neighbours {
    zeros: Vec<usize>,
    nearest: Vec<(f64, usize)>,
}

impl Neighbours {
    /// Add this draw's unit of weight, spread over its `k` nearest raw rows.
    fn spread(&self, k: usize, w: &mut [f64]) {
        if !self.zeros.is_empty() {
            let share = 1.0 / self.zeros.len() as f64;
            for &i in &self.zeros {
                w[i] += share;
            }
            return;
        }
        let top = &self.nearest[..k.min(self.nearest.len())];
        let total: f64 = top.iter().map(|(d, _)| 1.0 / d).sum();
        for &(d, i) in top {
            w[i] += (1.0 / d) / total;
        }
    }
}

fn standardize(raw: &[&[f64]], draws: &[&[f64]]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut zr = Vec::with_capacity(raw.len());
    let mut zd = Vec::with_capacity(raw.len());
    for (r, d) in raw.iter().zip(draws) {
        let (m, sd) = mean_sd(r);
        let s = if sd > 0.0 { sd } else { 1.0 };
        zr.push(r.iter().map(|v| (v - m) / s).collect());
        zd.push(d.iter().map(|v| (v - m) / s).collect());
    }
    (zr, zd)
}

fn neighbour_table(raw: &[&[f64]], draws: &[&[f64]], k_max: usize) -> Vec<Neighbours> {
    let (zr, zd) = standardize(raw, draws);
    let n = raw[0].len();
    let n_draws = draws[0].len();
    (0..n_draws)
        .into_par_iter()
        .map(|j| {
            let mut dist: Vec<(f64, usize)> = (0..n)
                .map(|i| {
                    let d2: f64 = zr.iter().zip(&zd).map(|(r, q)| (r[i] - q[j]).powi(2)).sum();
                    (d2.sqrt(), i)
                })
                .collect();
            let zeros: Vec<usize> = dist.iter().filter(|(d, _)| *d == 0.0).map(|p| p.1).collect();
            let by = |a: &(f64, usize), b: &(f64, usize)| cmp_f64(&a.0, &b.0).then(a.1.cmp(&b.1));
            let kk = k_max.min(n);
            if kk < n {
                dist.select_nth_unstable_by(kk - 1, by);
                dist.truncate(kk);
            }
            dist.sort_by(by);
            Neighbours {
                zeros,
                nearest: dist,
            }
        })
        .collect()
}

fn finish(mut w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    let n_pos = w.iter().filter(|v| **v > 0.0).count() as f64;
    if total > 0.0 {
        for v in &mut w {
            *v *= n_pos / total;
        }
    }
    w
}

fn columns<'a>(ds: &'a WeightedDataset, cols: &[&str]) -> Result<Vec<&'a [f64]>> {
    cols.iter().map(|c| ds.column(c)).collect()
}

fn check_inputs(raw: &[&[f64]], draws: &[&[f64]], k: usize) -> Result<()> {
    if raw.is_empty() || raw[0].is_empty() {
        return Err(Error::invalid("raw dataset is empty"));
    }
    if draws.is_empty() || draws[0].is_empty() {
        return Err(Error::invalid("no reference draws"));
    }
    if k == 0 || k > raw[0].len() {
        return Err(Error::invalid(format!(
            "k = {k} outside 1..={}",
            raw[0].len()
        )));
    }
    Ok(())
}

/// Weights for raw rows (column-major) given explicit reference draws.
pub fn knn_weights(raw: &[&[f64]], draws: &[&[f64]], k: usize) -> Result<Vec<f64>> {
    check_inputs(raw, draws, k)?;
    let table = neighbour_table(raw, draws, k);
    let mut w = vec![0.0; raw[0].len()];
    for nb in &table {
        nb.spread(k, &mut w);
    }
    Ok(finish(w))
}

/// Reweight `raw` so its `match_cols` follow the distribution of `ref_samples`.
///
/// Every row of `ref_samples` is one draw; weights of `ref_samples` are ignored, so
/// draw them beforehand when the reference itself is weighted.
pub fn knn_weight(
    raw: &WeightedDataset,
    ref_samples: &WeightedDataset,
    match_cols: &[&str],
    cfg: &KnnConfig,
) -> Result<WeightedDataset> {
    let r = columns(raw, match_cols)?;
    let d = columns(ref_samples, match_cols)?;
    let w = knn_weights(&r, &d, cfg.k)?;
    raw.clone().with_weights(w)
}

/// Pick `k` from `k_grid` minimising the summed per-column weighted KS statistic.
pub fn select_k(
    raw: &WeightedDataset,
    ref_samples: &WeightedDataset,
    match_cols: &[&str],
    k_grid: &[usize],
) -> Result<KSelection> {
    let r = columns(raw, match_cols)?;
    let d = columns(ref_samples, match_cols)?;
    let k_max = *k_grid
        .iter()
        .max()
        .ok_or_else(|| Error::invalid("empty k grid"))?;
    check_inputs(&r, &d, k_max)?;
    let table = neighbour_table(&r, &d, k_max);
    let raw_sorted: Vec<SortedSample> = r.iter().map(|c| SortedSample::new(c)).collect();
    let ref_sorted: Vec<SortedSample> = d.iter().map(|c| SortedSample::new(c)).collect();
    let ones = vec![1.0; d[0].len()];

    let mut grid: Vec<usize> = k_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let mut loss_by_k = Vec::with_capacity(grid.len());
    for &k in &grid {
        if k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        let mut w = vec![0.0; r[0].len()];
        for nb in &table {
            nb.spread(k, &mut w);
        }
        let loss: f64 = raw_sorted
            .iter()
            .zip(&ref_sorted)
            .map(|(rs, qs)| ks_sorted(rs.values(), &rs.arrange(&w), qs.values(), &ones))
            .sum();
        loss_by_k.push((k, loss));
    }
    let best = loss_by_k
        .iter()
        .fold(None::<(usize, f64)>, |acc, &(k, l)| match acc {
            Some((_, bl)) if l >= bl => acc,
            _ => Some((k, l)),
        })
        .expect("non-empty grid");
    Ok(KSelection {
        k: best.0,
        loss_by_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(x: &[f64]) -> WeightedDataset {
        WeightedDataset::from_columns(&[("x", x.to_vec())]).unwrap()
    }

    #[test]
    fn hand_case_one_dimension() {
        let w = knn_weights(&[&[0.0, 10.0]], &[&[0.0, 0.0, 10.0]], 1).unwrap();
        assert_eq!(w, vec![4.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn identity_weighting() {
        let x: Vec<f64> = (0..25).map(|k| (k as f64).sin()).collect();
        let out = knn_weight(&ds(&x), &ds(&x), &["x"], &KnnConfig { k: 1, ..KnnConfig::default() }).unwrap();
        assert!(out.weights().iter().all(|w| (*w - 1.0).abs() < 1e-12));
        assert_eq!(out.column("x").unwrap(), x.as_slice());
    }

    #[test]
    fn unselected_row_gets_zero() {
        let w = knn_weights(&[&[0.0, 1.0, 50.0]], &[&[0.1, 0.9, 0.2]], 1).unwrap();
        assert_eq!(w[2], 0.0);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_distance_split() {
        // draw at 1 between raw 0 and 4: distances 1 and 3 in raw-SD units scale alike
        let w = knn_weights(&[&[0.0, 4.0]], &[&[1.0]], 2).unwrap();
        assert!((w[0] / w[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn k_bounds() {
        assert!(knn_weights(&[&[0.0, 1.0]], &[&[0.0]], 3).is_err());
        assert!(knn_weights(&[&[]], &[&[0.0]], 1).is_err());
    }

    #[test]
    fn select_k_examples() {
        let x: Vec<f64> = (0..30).map(|k| k as f64).collect();
        let sel = select_k(&ds(&x), &ds(&x), &["x"], &[3, 1, 5]).unwrap();
        assert_eq!(sel.k, 1);
        assert!(sel.loss_by_k[0].1.abs() < 1e-12);
        assert_eq!(select_k(&ds(&x), &ds(&x), &["x"], &[3]).unwrap().k, 3);
    }

    #[test]
    fn select_k_matches_brute_force() {
        // raw skewed toward low values, reference uniform
        let raw: Vec<f64> = (0..200).map(|k| (k as f64 / 200.0).powi(2)).collect();
        let refd: Vec<f64> = (0..300).map(|k| (k as f64 + 0.5) / 300.0).collect();
        let grid: Vec<usize> = (1..=12).collect();
        let sel = select_k(&ds(&raw), &ds(&refd), &["x"], &grid).unwrap();
        let mut best = (0, f64::INFINITY);
        for &k in &grid {
            let w = knn_weights(&[&raw], &[&refd], k).unwrap();
            let s = crate::weighting::ks_statistic(&raw, &w, &refd, &vec![1.0; 300]).unwrap();
            if s < best.1 {
                best = (k, s);
            }
        }
        assert_eq!(sel.k, best.0);
    }

    proptest! {
        #[test]
        fn weights_sum_to_positive_count(
            raw in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 2..40),
            draws in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..60),
            k in 1usize..5,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = raw.into_iter().unzip();
            let (c, d): (Vec<f64>, Vec<f64>) = draws.into_iter().unzip();
            let k = k.min(a.len());
            let w = knn_weights(&[&a, &b], &[&c, &d], k).unwrap();
            let n_pos = w.iter().filter(|v| **v > 0.0).count() as f64;
            prop_assert!(w.iter().all(|v| *v >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - n_pos).abs() <= 1e-9 * n_pos.max(1.0));
        }

        #[test]
        fn exact_draws_land_on_matches(idx in prop::collection::vec(0usize..10, 1..30)) {
            let raw: Vec<f64> = (0..10).map(|k| k as f64 * 1.5).collect();
            let draws: Vec<f64> = idx.iter().map(|&i| raw[i]).collect();
            let w = knn_weights(&[&raw], &[&draws], 1).unwrap();
            for (i, wi) in w.iter().enumerate() {
                prop_assert_eq!(*wi > 0.0, idx.contains(&i));
            }
        }
    }
}
