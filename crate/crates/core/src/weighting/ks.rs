use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::util::{cmp_f64, shuffle, SimRng};

/// Permutations used when no count is given.
pub const DEFAULT_PERMUTATIONS: usize = 1000;
const DEFAULT_SEED: u64 = 0x5eed_0f_4b5;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn check(w: &[f64], x: &[f64], side: &str) -> Result<f64> {
    if w.len() != x.len() {
        return Err(Error::invalid(format!("{side}: values and weights differ in length")));
    }
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid(format!("{side}: NaN value")));
    }
    if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::invalid(format!("{side}: weights must be finite and non-negative")));
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid(format!("{side}: all weights are zero")));
    }
    Ok(total)
}

/// A sample pre-sorted by value, so repeated statistics cost one merge pass.
#[derive(Debug, Clone)]
pub struct SortedSample {
    order: Vec<usize>,
    values: Vec<f64>,
}

impl SortedSample {
    pub fn new(x: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| cmp_f64(&x[a], &x[b]));
        let values = order.iter().map(|&i| x[i]).collect();
        SortedSample { order, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weights reordered to match the sorted values.
    pub fn arrange(&self, w: &[f64]) -> Vec<f64> {
        self.order.iter().map(|&i| w[i]).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Supremum distance between two weighted step ECDFs given sorted values and
/// weights in sorted order. Totals must be positive.
pub fn ks_sorted(x1: &[f64], w1: &[f64], x2: &[f64], w2: &[f64]) -> f64 {
    let t1: f64 = w1.iter().sum();
    let t2: f64 = w2.iter().sum();
    let (mut i, mut j) = (0, 0);
    let (mut c1, mut c2) = (0.0, 0.0);
    let mut d: f64 = 0.0;
    while i < x1.len() || j < x2.len() {
        let v = match (x1.get(i), x2.get(j)) {
            (Some(a), Some(b)) => a.min(*b),
            (Some(a), None) => *a,
            (None, Some(b)) => *b,
            (None, None) => unreachable!(),
        };
        while i < x1.len() && x1[i] <= v {
            c1 += w1[i];
            i += 1;
        }
        while j < x2.len() && x2[j] <= v {
            c2 += w2[j];
            j += 1;
        }
        d = d.max((c1 / t1 - c2 / t2).abs());
    }
    d.min(1.0)
}

/// Weighted two-sample KS statistic.
pub fn ks_statistic(x1: &[f64], w1: &[f64], x2: &[f64], w2: &[f64]) -> Result<f64> {
    check(w1, x1, "first sample")?;
    check(w2, x2, "second sample")?;
    let s1 = SortedSample::new(x1);
    let s2 = SortedSample::new(x2);
    Ok(ks_sorted(s1.values(), &s1.arrange(w1), s2.values(), &s2.arrange(w2)))
}

/// Weighted KS statistic and permutation p-value with default settings.
pub fn weighted_ks(x1: &[f64], w1: &[f64], x2: &[f64], w2: &[f64]) -> Result<KsResult> {
    weighted_ks_with(x1, w1, x2, w2, DEFAULT_PERMUTATIONS, DEFAULT_SEED)
}

/// Weighted KS with a label-permutation p-value.
///
/// Each side's weights are first scaled to mean one so that a permuted group carries
/// mass in proportion to its size.
pub fn weighted_ks_with(
    x1: &[f64],
    w1: &[f64],
    x2: &[f64],
    w2: &[f64],
    n_perm: usize,
    seed: u64,
) -> Result<KsResult> {
    let t1 = check(w1, x1, "first sample")?;
    let t2 = check(w2, x2, "second sample")?;
    let statistic = ks_statistic(x1, w1, x2, w2)?;
    if n_perm == 0 {
        return Ok(KsResult {
            statistic,
            p_value: f64::NAN,
        });
    }
    let (n1, n2) = (x1.len(), x2.len());
    let pooled: Vec<f64> = x1.iter().chain(x2).copied().collect();
    let pw: Vec<f64> = w1
        .iter()
        .map(|w| w * n1 as f64 / t1)
        .chain(w2.iter().map(|w| w * n2 as f64 / t2))
        .collect();
    let sorted = SortedSample::new(&pooled);
    let vals = sorted.values();
    let ws = sorted.arrange(&pw);
    // Group label of each sorted position: true for the first group.
    let mut labels: Vec<bool> = (0..n1 + n2).map(|k| k < n1).collect();
    let mut rng = SimRng::seed_from_u64(seed);
    let mut exceed = 0usize;
    let tol = 1e-12;
    for _ in 0..n_perm {
        shuffle(&mut labels, &mut rng);
        let s = ks_labelled(vals, &ws, &labels);
        if let Some(s) = s {
            if s >= statistic - tol {
                exceed += 1;
            }
        }
    }
    Ok(KsResult {
        statistic,
        p_value: (1 + exceed) as f64 / (1 + n_perm) as f64,
    })
}

/// KS between two groups picked out of one sorted pool; `None` if a group has no mass.
fn ks_labelled(vals: &[f64], w: &[f64], first: &[bool]) -> Option<f64> {
    let (mut t1, mut t2) = (0.0, 0.0);
    for (wi, &g) in w.iter().zip(first) {
        if g {
            t1 += wi;
        } else {
            t2 += wi;
        }
    }
    if t1 <= 0.0 || t2 <= 0.0 {
        return None;
    }
    let (mut c1, mut c2) = (0.0, 0.0);
    let mut d: f64 = 0.0;
    let mut k = 0;
    while k < vals.len() {
        let v = vals[k];
        while k < vals.len() && vals[k] == v {
            if first[k] {
                c1 += w[k];
            } else {
                c2 += w[k];
            }
            k += 1;
        }
        d = d.max((c1 / t1 - c2 / t2).abs());
    }
    Some(d.min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_samples_have_zero_statistic() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let w = [1.0; 4];
        let r = weighted_ks(&x, &w, &x, &w).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn two_step_hand_case() {
        let s = ks_statistic(&[0.0, 1.0], &[1.0, 1.0], &[0.0, 1.0], &[3.0, 1.0]).unwrap();
        assert!((s - 0.25).abs() < 1e-15);
    }

    #[test]
    fn disjoint_supports() {
        let r = weighted_ks(&[0.0, 1.0, 2.0], &[1.0; 3], &[5.0, 6.0], &[2.0, 1.0]).unwrap();
        assert_eq!(r.statistic, 1.0);
    }

    #[test]
    fn zero_weights_rejected() {
        assert!(weighted_ks(&[1.0], &[0.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn shifted_samples_are_significant() {
        let a: Vec<f64> = (0..200).map(|k| k as f64 / 200.0).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 0.3).collect();
        let w = vec![1.0; 200];
        let r = weighted_ks(&a, &w, &b, &w).unwrap();
        assert!(r.p_value < 0.01);
        let c: Vec<f64> = a.iter().map(|v| v + 0.001).collect();
        assert!(weighted_ks(&a, &w, &c, &w).unwrap().p_value > 0.5);
    }

    proptest! {
        #[test]
        fn statistic_bounded_and_scale_invariant(
            a in prop::collection::vec((-5.0f64..5.0, 0.01f64..3.0), 1..30),
            b in prop::collection::vec((-5.0f64..5.0, 0.01f64..3.0), 1..30),
            scale in 0.01f64..100.0,
        ) {
            let (x1, w1): (Vec<f64>, Vec<f64>) = a.into_iter().unzip();
            let (x2, w2): (Vec<f64>, Vec<f64>) = b.into_iter().unzip();
            let r = weighted_ks_with(&x1, &w1, &x2, &w2, 50, 3).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.statistic));
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            let w1s: Vec<f64> = w1.iter().map(|w| w * scale).collect();
            let s2 = ks_statistic(&x1, &w1s, &x2, &w2).unwrap();
            prop_assert!((s2 - r.statistic).abs() < 1e-12);
        }
    }
}
