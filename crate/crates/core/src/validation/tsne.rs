use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{mean_sd, rng_for};
use crate::weighting::{weighted_ks_with, KsResult};

/// Largest pooled sample embedded exactly.
pub const MAX_TSNE_POINTS: usize = 4000;
const EXAGGERATION: f64 = 4.0;
const EXAGGERATION_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    /// `None` picks `min(30, n / 4)`.
    pub perplexity: Option<f64>,
    pub iters: usize,
    pub learning_rate: f64,
    pub n_perm: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: None,
            iters: 500,
            learning_rate: 200.0,
            n_perm: 1000,
            seed: 0,
        }
    }
}

/// Row-wise conditional affinities at the requested perplexity, symmetrized.
fn affinities(d2: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &d2[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        for _ in 0..100 {
            let mut sum = 0.0;
            let mut dsum = 0.0;
            for j in 0..n {
                if j != i {
                    let e = (-row[j] * beta).exp();
                    sum += e;
                    dsum += row[j] * e;
                }
            }
            let h = if sum > 0.0 { sum.ln() + beta * dsum / sum } else { 0.0 };
            if (h - target).abs() < 1e-5 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        let mut sum = 0.0;
        for j in 0..n {
            if j != i {
                let e = (-row[j] * beta).exp();
                p[i * n + j] = e;
                sum += e;
            }
        }
        if sum > 0.0 {
            p[i * n..(i + 1) * n].iter_mut().for_each(|v| *v /= sum);
        }
    }
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    s
}

/// Exact-gradient t-SNE of standardized rows into one dimension.
pub fn tsne_1d(rows: &[Vec<f64>], cfg: &TsneConfig) -> Result<Vec<f64>> {
    let n = rows.len();
    if n > MAX_TSNE_POINTS {
        return Err(Error::invalid(format!(
            "{n} points exceed the exact t-SNE limit of {MAX_TSNE_POINTS}; subsample first"
        )));
    }
    let dim = rows.first().map_or(0, Vec::len);
    if dim < 2 || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::invalid("t-SNE needs at least two columns of equal length"));
    }
    let perplexity = cfg.perplexity.unwrap_or((n as f64 / 4.0).min(30.0));
    if !(perplexity > 0.0) || perplexity > n as f64 / 3.0 {
        return Err(Error::invalid(format!("perplexity {perplexity} exceeds n/3 for n = {n}")));
    }
    let mut z = vec![vec![0.0; dim]; n];
    for c in 0..dim {
        let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        let (m, sd) = mean_sd(&col);
        let sd = if sd > 0.0 { sd } else { 1.0 };
        for (zi, v) in z.iter_mut().zip(&col) {
            zi[c] = (v - m) / sd;
        }
    }
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = z[i].iter().zip(&z[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d2[i * n + j] = d;
            d2[j * n + i] = d;
        }
    }
    let p = affinities(&d2, n, perplexity);

    let mut rng = rng_for(cfg.seed, "tsne", 0);
    let mut y: Vec<f64> = (0..n).map(|_| 1e-4 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut update = vec![0.0; n];
    let mut gains = vec![1.0f64; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; n];
    for it in 0..cfg.iters {
        let exag = if it < EXAGGERATION_ITERS { EXAGGERATION } else { 1.0 };
        let momentum = if it < 20 { 0.5 } else { 0.8 };
        let mut total: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let d = y[i] - y[j];
                let q = 1.0 / (1.0 + d * d);
                num[i * n + j] = q;
                num[j * n + i] = q;
                total += 2.0 * q;
            }
        }
        for i in 0..n {
            let mut g = 0.0;
            for j in 0..n {
                if j != i {
                    let q = num[i * n + j];
                    g += (exag * p[i * n + j] - (q / total).max(1e-12)) * q * (y[i] - y[j]);
                }
            }
            grad[i] = 4.0 * g;
        }
        for i in 0..n {
            gains[i] = if (grad[i] > 0.0) != (update[i] > 0.0) {
                gains[i] + 0.2
            } else {
                (gains[i] * 0.8).max(0.01)
            };
            update[i] = momentum * update[i] - cfg.learning_rate * gains[i] * grad[i];
            y[i] += update[i];
        }
        let mean = y.iter().sum::<f64>() / n as f64;
        y.iter_mut().for_each(|v| *v -= mean);
    }
    Ok(y)
}

/// Embed two weighted samples jointly and compare the embedded coordinates.
pub fn tsne_ks(
    synth: &[Vec<f64>],
    synth_w: &[f64],
    reference: &[Vec<f64>],
    ref_w: &[f64],
    cfg: &TsneConfig,
) -> Result<KsResult> {
    if synth.is_empty() || reference.is_empty() || synth.len() != synth_w.len() || reference.len() != ref_w.len() {
        return Err(Error::invalid("t-SNE comparison needs non-empty samples with matching weights"));
    }
    let pooled: Vec<Vec<f64>> = synth.iter().chain(reference).cloned().collect();
    let y = tsne_1d(&pooled, cfg)?;
    let (ys, yr) = y.split_at(synth.len());
    weighted_ks_with(ys, synth_w, yr, ref_w, cfg.n_perm, cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(n: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_for(seed, "cloud", 0);
        (0..n)
            .map(|_| (0..3).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }

    fn quick() -> TsneConfig {
        TsneConfig { n_perm: 100, ..TsneConfig::default() }
    }

    #[test]
    fn identical_clouds() {
        let a = cloud(150, 0.0, 1);
        let w = vec![1.0; 150];
        let r = tsne_ks(&a, &w, &a, &w, &quick()).unwrap();
        assert!(r.statistic <= 0.1, "{}", r.statistic);
    }

    #[test]
    fn separated_clouds() {
        let a = cloud(120, 0.0, 2);
        let b = cloud(120, 10.0, 3);
        let w = vec![1.0; 120];
        let r = tsne_ks(&a, &w, &b, &w, &quick()).unwrap();
        assert!(r.statistic >= 0.9, "{}", r.statistic);
    }

    #[test]
    fn preconditions() {
        let a = vec![vec![1.0, 2.0]; 9];
        let cfg = TsneConfig { perplexity: Some(5.0), ..quick() };
        assert!(tsne_1d(&a, &cfg).is_err());
        assert!(tsne_1d(&vec![vec![1.0]; 20], &quick()).is_err());
        assert!(tsne_1d(&vec![vec![0.0, 0.0]; MAX_TSNE_POINTS + 1], &quick()).is_err());
    }

    #[test]
    fn deterministic() {
        let a = cloud(60, 0.0, 4);
        let cfg = TsneConfig { iters: 100, ..quick() };
        assert_eq!(tsne_1d(&a, &cfg).unwrap(), tsne_1d(&a, &cfg).unwrap());
    }
}
