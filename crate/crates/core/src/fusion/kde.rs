use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{cmp_f64, weighted_mean_sd, weighted_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    #[default]
    Silverman,
    Scott,
}

/// Weighted Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    points: Vec<f64>,
    weights: Vec<f64>,
    total: f64,
    pub h: f64,
}

impl Kde {
    pub fn new(x: &[f64], w: &[f64], rule: Bandwidth) -> Result<Self> {
        if x.is_empty() || x.len() != w.len() {
            return Err(Error::invalid("KDE needs matching, non-empty values and weights"));
        }
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("KDE weights sum to zero"));
        }
        let (_, sd) = weighted_mean_sd(x, w);
        let iqr = weighted_quantile(x, w, 0.75) - weighted_quantile(x, w, 0.25);
        let s2: f64 = w.iter().map(|v| v * v).sum();
        let n_eff = total * total / s2;
        let spread = match rule {
            Bandwidth::Silverman => {
                let r = iqr / 1.34;
                0.9 * if r > 0.0 { sd.min(r) } else { sd }
            }
            Bandwidth::Scott => 1.06 * sd,
        };
        let h = if spread > 0.0 { spread * n_eff.powf(-0.2) } else { 1e-3 };
        Ok(Kde {
            points: x.to_vec(),
            weights: w.to_vec(),
            total,
            h,
        })
    }

    pub fn density(&self, x: f64) -> f64 {
        let c = 1.0 / (self.total * self.h * (2.0 * std::f64::consts::PI).sqrt());
        c * self
            .points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * (-0.5 * ((x - p) / self.h).powi(2)).exp())
            .sum::<f64>()
    }
}

/// Elbow of a weighted empirical CDF, where it saturates: the point farthest above the
/// chord from the median to the maximum, with both axes scaled to unit range.
pub fn elbow_threshold(x: &[f64], w: &[f64]) -> Result<f64> {
    let mut pairs: Vec<(f64, f64)> = x.iter().zip(w).filter(|p| *p.1 > 0.0).map(|(a, b)| (*a, *b)).collect();
    if pairs.len() < 2 {
        return Err(Error::InsufficientData("elbow needs at least two weighted values".into()));
    }
    pairs.sort_by(|a, b| cmp_f64(&a.0, &b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut pts: Vec<(f64, f64)> = Vec::new();
    let mut acc = 0.0;
    for (v, wi) in pairs {
        acc += wi / total;
        match pts.last_mut() {
            Some(last) if last.0 == v => last.1 = acc,
            _ => pts.push((v, acc)),
        }
    }
    let start = pts.iter().position(|p| p.1 >= 0.5).unwrap_or(0);
    let pts = &pts[start..];
    let (x0, y0) = pts[0];
    let (x1, y1) = *pts.last().unwrap();
    if x1 == x0 {
        return Ok(x0);
    }
    let (dx, dy) = (1.0, y1 - y0);
    let norm = (dx * dx + dy * dy).sqrt();
    let best = pts
        .iter()
        .map(|&(x, y)| {
            let u = (x - x0) / (x1 - x0);
            ((dx * (y - y0) - dy * u) / norm, x)
        })
        .fold((f64::NEG_INFINITY, x0), |a, b| if b.0 > a.0 { b } else { a });
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_integrates_to_one() {
        let x = [0.0, 1.0, 1.5, 4.0];
        let k = Kde::new(&x, &[1.0, 2.0, 1.0, 0.5], Bandwidth::Silverman).unwrap();
        let step = 0.01;
        let mass: f64 = (-1000..1500).map(|i| k.density(i as f64 * step) * step).sum();
        assert!((mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn silverman_bandwidth_unweighted() {
        let x: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let k = Kde::new(&x, &[1.0; 100], Bandwidth::Silverman).unwrap();
        // population sd of 0..99 is 28.866; the IQR term is larger, so sd governs
        let sd = (((100.0f64 * 100.0) - 1.0) / 12.0).sqrt();
        assert!((k.h - 0.9 * sd * 100f64.powf(-0.2)).abs() < 1e-9);
    }

    #[test]
    fn elbow_of_a_knee() {
        // steep rise to 0.9 by x = 1, then a long flat tail to x = 10
        let mut x: Vec<f64> = (0..90).map(|k| k as f64 / 90.0).collect();
        x.extend((0..10).map(|k| 1.0 + k as f64));
        let e = elbow_threshold(&x, &vec![1.0; x.len()]).unwrap();
        assert!((0.9..=1.1).contains(&e), "{e}");
    }

    #[test]
    fn elbow_ignores_lower_tail() {
        // long sparse tail below, dense block on [0, 1], short tail above
        let mut x: Vec<f64> = (0..20).map(|k| -20.0 + k as f64).collect();
        x.extend((0..70).map(|k| k as f64 / 70.0));
        x.extend((0..10).map(|k| 1.2 + 0.2 * k as f64));
        let e = elbow_threshold(&x, &vec![1.0; x.len()]).unwrap();
        assert!((0.9..=1.2).contains(&e), "{e}");
    }
}
