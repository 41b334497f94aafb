use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kde::{Bandwidth, Kde};
use crate::error::{Error, Result};
use crate::model::WeightedDataset;
use crate::util::{cmp_f64, rng_for, shuffle, SimRng};
use crate::weighting::weighted_pearson;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingConfig {
    /// Percent of rows paired at random before the sorted pass.
    pub eta_grid: Vec<f64>,
    /// Relative-speed threshold `v_l_init - v_f_init` (m/s).
    pub v_r_thd: f64,
    pub weak_corr_bound: f64,
    pub kde_bandwidth: Bandwidth,
    pub seed: u64,
}

impl Default for PairingConfig {
    fn default() -> Self {
        PairingConfig {
            eta_grid: (0..=50).map(|k| 2.0 * k as f64).collect(),
            v_r_thd: 1.31,
            weak_corr_bound: 0.3,
            kde_bandwidth: Bandwidth::Silverman,
            seed: 0,
        }
    }
}

impl PairingConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.v_r_thd.is_finite() {
            return Err(Error::invalid("v_r_thd must be finite"));
        }
        if self.eta_grid.is_empty() || self.eta_grid.iter().any(|e| !(0.0..=100.0).contains(e)) {
            return Err(Error::invalid("eta grid must be non-empty and within [0, 100]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingOutcome {
    pub eta_star: f64,
    pub v_r_thd: f64,
    /// `(eta, loss)`; `None` where a weak-correlation guard failed.
    pub loss_by_eta: Vec<(f64, Option<f64>)>,
    pub r_vf_vl: f64,
    pub r_vf_al: f64,
    pub r_dv_vl: f64,
    pub r_dv_al: f64,
}

/// Binary indexed tree over `f64` masses.
struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(values: &[f64]) -> Self {
        let n = values.len();
        let mut tree = vec![0.0; n + 1];
        for (i, v) in values.iter().enumerate() {
            tree[i + 1] += v;
            let j = i + 1 + ((i + 1) & (i + 1).wrapping_neg());
            if j <= n {
                tree[j] += tree[i + 1];
            }
        }
        Fenwick { tree }
    }

    fn add(&mut self, i: usize, delta: f64) {
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] += delta;
            k += k & k.wrapping_neg();
        }
    }

    /// Sum over `[0, end)`.
    fn prefix(&self, end: usize) -> f64 {
        let mut k = end;
        let mut s = 0.0;
        while k > 0 {
            s += self.tree[k];
            k -= k & k.wrapping_neg();
        }
        s
    }

    /// Smallest index whose inclusive prefix sum exceeds `u`.
    fn find(&self, mut u: f64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= u {
                pos = next;
                u -= self.tree[next];
            }
            step >>= 1;
        }
        pos.min(n.saturating_sub(1))
    }
}

/// Remaining B rows sorted by `v_l_init`, with density and count trees.
struct Pool<'a> {
    v_l: &'a [f64],
    dens: &'a [f64],
    mass: Fenwick,
    count: Fenwick,
    alive: Vec<bool>,
}

impl<'a> Pool<'a> {
    fn new(v_l: &'a [f64], dens: &'a [f64]) -> Self {
        Pool {
            v_l,
            dens,
            mass: Fenwick::new(dens),
            count: Fenwick::new(&vec![1.0; v_l.len()]),
            alive: vec![true; v_l.len()],
        }
    }

    /// Position of the `r`-th (0-based) remaining row.
    fn nth_alive(&self, r: usize) -> usize {
        self.count.find(r as f64 + 0.5)
    }

    /// Pick and remove a row for a follower at `v_f`.
    fn take(&mut self, v_f: f64, thd: f64, rng: &mut SimRng) -> usize {
        let end = self.v_l.partition_point(|v| *v <= v_f + thd);
        let eligible = self.count.prefix(end).round() as usize;
        let k = if eligible == 0 {
            self.nth_alive(0)
        } else {
            let m = self.mass.prefix(end);
            let mut k = if m > 0.0 {
                self.mass.find(rng.random::<f64>() * m).min(end - 1)
            } else {
                self.nth_alive(rng.random_range(0..eligible))
            };
            if !self.alive[k] {
                // rounding left mass on a removed slot: fall back to the nearest live row below
                let below = self.count.prefix(k + 1).round() as usize;
                k = self.nth_alive(below.saturating_sub(1));
            }
            k
        };
        debug_assert!(self.alive[k]);
        self.alive[k] = false;
        self.mass.add(k, -self.dens[k]);
        self.count.add(k, -1.0);
        k
    }
}

struct Trial {
    pairs: Vec<usize>,
    r: [f64; 4],
    loss: Option<f64>,
}

fn corr(x: &[f64], y: &[f64]) -> f64 {
    weighted_pearson(x, y, &vec![1.0; x.len()]).unwrap_or(f64::NAN)
}

/// Pair follower rows `a` (`v_f_init`, `dv_l`) with lead rows `b` (`v_l_init`, `a_l_min`)
/// one to one, choosing the randomisation level `eta` whose pairing best matches the
/// target correlations `r(v_f, v_l)` and `r(v_f, a_l_min)`.
///
/// `kde` is the density of the reference `v_l_init` marginal used to sample eligible rows.
pub fn pair_datasets(
    a: &WeightedDataset,
    b: &WeightedDataset,
    kde: &Kde,
    targets: (f64, f64),
    cfg: &PairingConfig,
) -> Result<(WeightedDataset, PairingOutcome)> {
    cfg.validate()?;
    let (v_f, dv_l) = (a.column("v_f_init")?, a.column("dv_l")?);
    let (v_l_raw, a_l_raw) = (b.column("v_l_init")?, b.column("a_l_min")?);
    let n = v_f.len();
    if n == 0 || n != v_l_raw.len() {
        return Err(Error::invalid(format!("pairing needs equal non-empty sets, got {n} and {}", v_l_raw.len())));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| cmp_f64(&v_l_raw[i], &v_l_raw[j]).then(i.cmp(&j)));
    let v_l: Vec<f64> = order.iter().map(|&i| v_l_raw[i]).collect();
    let dens: Vec<f64> = v_l.iter().map(|v| kde.density(*v)).collect();
    let mut by_vf: Vec<usize> = (0..n).collect();
    by_vf.sort_by(|&i, &j| cmp_f64(&v_f[i], &v_f[j]).then(i.cmp(&j)));

    let trials: Vec<Trial> = cfg
        .eta_grid
        .par_iter()
        .enumerate()
        .map(|(g, &eta)| {
            let mut rng = rng_for(cfg.seed, "pairing", g as u64);
            let mut pick: Vec<usize> = (0..n).collect();
            shuffle(&mut pick, &mut rng);
            let s = ((eta / 100.0) * n as f64).round() as usize;
            let mut chosen = vec![false; n];
            for &i in &pick[..s] {
                chosen[i] = true;
            }
            let mut pool = Pool::new(&v_l, &dens);
            let mut pairs = vec![usize::MAX; n];
            for &i in pick[..s].iter().chain(by_vf.iter().filter(|&&i| !chosen[i])) {
                pairs[i] = order[pool.take(v_f[i], cfg.v_r_thd, &mut rng)];
            }
            let pv: Vec<f64> = pairs.iter().map(|&j| v_l_raw[j]).collect();
            let pa: Vec<f64> = pairs.iter().map(|&j| a_l_raw[j]).collect();
            let r = [corr(v_f, &pv), corr(v_f, &pa), corr(dv_l, &pv), corr(dv_l, &pa)];
            let guard = r[2].abs() < cfg.weak_corr_bound && r[3].abs() < cfg.weak_corr_bound;
            let loss = (guard && r[0].is_finite() && r[1].is_finite())
                .then(|| (r[0] - targets.0).abs() + (r[1] - targets.1).abs());
            Trial { pairs, r, loss }
        })
        .collect();

    let best = trials
        .iter()
        .enumerate()
        .filter_map(|(g, t)| t.loss.map(|l| (g, l)))
        .fold(None::<(usize, f64)>, |acc, (g, l)| match acc {
            Some((_, bl)) if l >= bl => acc,
            _ => Some((g, l)),
        })
        .ok_or(Error::PairingGuard)?;
    let t = &trials[best.0];
    let cols = [
        ("v_f_init", v_f.to_vec()),
        ("dv_l", dv_l.to_vec()),
        ("v_l_init", t.pairs.iter().map(|&j| v_l_raw[j]).collect()),
        ("a_l_min", t.pairs.iter().map(|&j| a_l_raw[j]).collect()),
    ];
    let out = WeightedDataset::from_columns(&cols)?;
    let outcome = PairingOutcome {
        eta_star: cfg.eta_grid[best.0],
        v_r_thd: cfg.v_r_thd,
        loss_by_eta: cfg.eta_grid.iter().zip(&trials).map(|(e, t)| (*e, t.loss)).collect(),
        r_vf_vl: t.r[0],
        r_vf_al: t.r[1],
        r_dv_vl: t.r[2],
        r_dv_al: t.r[3],
    };
    Ok((out, outcome))
}
