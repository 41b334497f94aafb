//! Sample reweighting and weighted comparisons.

mod ipf;
mod knn;
mod ks;

pub use ipf::{ipf_reweight, IpfConfig, IpfOutcome, IpfTarget};
pub use knn::{knn_weight, knn_weights, select_k, KnnConfig, KSelection};
pub use ks::{
    ks_sorted, ks_statistic, weighted_ks, weighted_ks_with, KsResult, SortedSample,
    DEFAULT_PERMUTATIONS,
};

use crate::error::{Error, Result};

/// Weighted Pearson correlation.
pub fn weighted_pearson(x: &[f64], y: &[f64], w: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(Error::invalid("x, y and w differ in length"));
    }
    if w.iter().filter(|v| **v > 0.0).count() < 2 {
        return Err(Error::invalid("need at least two rows of positive weight"));
    }
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for ((a, b), wi) in x.iter().zip(y).zip(w) {
        let (dx, dy) = (a - mx, b - my);
        sxy += wi * dx * dy;
        sxx += wi * dx * dx;
        syy += wi * dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::invalid("zero weighted variance"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_relations() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let w = [0.5, 2.0, 1.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((weighted_pearson(&x, &y, &w).unwrap() - 1.0).abs() < 1e-12);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((weighted_pearson(&x, &z, &w).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn four_point_hand_case() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 0.0, 3.0, 2.0];
        let w = [1.0, 2.0, 1.0, 4.0];
        let sw = 8.0;
        let mx = (0.0 + 2.0 + 2.0 + 12.0) / sw;
        let my = (1.0 + 0.0 + 3.0 + 8.0) / sw;
        let cov: f64 = (0..4).map(|i| w[i] * (x[i] - mx) * (y[i] - my)).sum();
        let vx: f64 = (0..4).map(|i| w[i] * (x[i] - mx).powi(2)).sum();
        let vy: f64 = (0..4).map(|i| w[i] * (y[i] - my).powi(2)).sum();
        let r = cov / (vx * vy).sqrt();
        assert!((weighted_pearson(&x, &y, &w).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn equal_weights_match_unweighted() {
        let x = [0.3, 1.7, 2.2, 5.1, 3.3];
        let y = [1.0, 2.5, 1.9, 4.4, 2.0];
        let n = 5.0;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let c: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let sy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let r = c / (sx * sy).sqrt();
        assert!((weighted_pearson(&x, &y, &[2.0; 5]).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_is_error() {
        assert!(weighted_pearson(&[1.0, 1.0], &[1.0, 2.0], &[1.0, 1.0]).is_err());
    }
}
