use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream seed from a master seed, a stable tag and an index.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag keeps derivation stable across builds.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(master ^ splitmix64(h ^ splitmix64(index)))
}

pub fn rng_for(master: u64, tag: &str, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, tag, index))
}

/// Total order on f64 for sorting; NaN is rejected by callers before sorting.
pub fn cmp_f64(a: &f64, b: &f64) -> std::cmp::Ordering {
    a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal)
}

pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, 0.0);
    }
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

pub fn weighted_mean_sd(x: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    if sw <= 0.0 {
        return (0.0, 0.0);
    }
    let m = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let v = x.iter().zip(w).map(|(x, w)| w * (x - m).powi(2)).sum::<f64>() / sw;
    (m, v.sqrt())
}

/// Weighted quantile by linear interpolation on the weighted midpoint (Hazen) positions.
pub fn weighted_quantile(values: &[f64], weights: &[f64], p: f64) -> f64 {
    let mut pairs: Vec<(f64, f64)> = values
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, w)| (*v, *w))
        .collect();
    if pairs.is_empty() {
        return f64::NAN;
    }
    pairs.sort_by(|a, b| cmp_f64(&a.0, &b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut cum = 0.0;
    let mut pos = Vec::with_capacity(pairs.len());
    for (_, w) in &pairs {
        pos.push((cum + 0.5 * w) / total);
        cum += w;
    }
    interp_sorted(&pos, &pairs.iter().map(|p| p.0).collect::<Vec<_>>(), p)
}

/// Piecewise-linear interpolation of `ys` over ascending `xs`, clamped at the ends.
pub fn interp_sorted(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if n == 1 || x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let (y0, y1) = (ys[i - 1], ys[i]);
    if x1 == x0 {
        return y1;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Draw `n` indices with replacement, proportionally to `weights`.
pub fn weighted_draws<R: Rng>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w.max(0.0);
        cum.push(acc);
    }
    if acc <= 0.0 {
        return Vec::new();
    }
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            cum.partition_point(|&c| c <= u).min(weights.len() - 1)
        })
        .collect()
}

pub fn shuffle<T, R: Rng>(v: &mut [T], rng: &mut R) {
    use rand::seq::SliceRandom;
    v.shuffle(rng);
}
