use nalgebra::{Matrix4x3, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matching::{profile_of, Link};
use super::{simulate, SimConfig};
use crate::dist::categorize;
use crate::error::{Error, Result};
use crate::model::{ScenarioSpec, WeightedDataset};
use crate::util::{rng_for, weighted_draws};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub t_e_grid: Vec<f64>,
    pub d_e_grid: Vec<f64>,
    /// Rows drawn from each dataset.
    pub n_draws: usize,
    /// Candidate `T` and `t_g` values tried per pair.
    pub headway: Vec<f64>,
    pub t_g: Vec<f64>,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            t_e_grid: (1..=10).map(|k| k as f64 * 0.05).collect(),
            d_e_grid: (1..=10).map(|k| k as f64 * 0.25).collect(),
            n_draws: 200,
            headway: vec![0.8, 1.2, 1.6, 2.0, 2.4],
            t_g: vec![0.1, 0.4, 0.8, 1.2, 1.8],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub t_e_thd: f64,
    pub d_e_thd: f64,
    /// `n_s` indexed `[t_e][d_e]`.
    pub surface: Vec<Vec<f64>>,
    pub t_e_grid: Vec<f64>,
    pub d_e_grid: Vec<f64>,
}

/// Elbow of a monotone surface: the cell farthest from the least-squares plane through
/// its four corners, all three axes scaled to the unit range.
pub fn surface_elbow(t_e: &[f64], d_e: &[f64], n_s: &[Vec<f64>]) -> Result<(usize, usize)> {
    if t_e.is_empty() || d_e.is_empty() || n_s.len() != t_e.len() || n_s.iter().any(|r| r.len() != d_e.len()) {
        return Err(Error::invalid("surface shape does not match its grids"));
    }
    let top = n_s.iter().flatten().fold(0.0f64, |m, v| m.max(*v));
    if !(top > 0.0) {
        return Err(Error::InsufficientData("calibration surface is all zero".into()));
    }
    if t_e.len() == 1 && d_e.len() == 1 {
        return Ok((0, 0));
    }
    let unit = |g: &[f64], i: usize| {
        let span = g[g.len() - 1] - g[0];
        if span > 0.0 { (g[i] - g[0]) / span } else { 0.0 }
    };
    let (it, id) = (t_e.len() - 1, d_e.len() - 1);
    let corners = [(0, 0), (0, id), (it, 0), (it, id)];
    let a = Matrix4x3::from_fn(|r, c| {
        let (i, j) = corners[r];
        [unit(t_e, i), unit(d_e, j), 1.0][c]
    });
    let b = Vector4::from_fn(|r, _| n_s[corners[r].0][corners[r].1] / top);
    let coef = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::Optimizer(e.to_string()))?;
    let norm = (coef[0] * coef[0] + coef[1] * coef[1] + 1.0).sqrt();
    let mut best = (0, 0, f64::NEG_INFINITY);
    for i in 0..t_e.len() {
        for j in 0..d_e.len() {
            let plane = coef[0] * unit(t_e, i) + coef[1] * unit(d_e, j) + coef[2];
            // only cells above the plane are elbow candidates
            let dist = (n_s[i][j] / top - plane) / norm;
            if dist > best.2 {
                best = (i, j, dist);
            }
        }
    }
    Ok((best.0, best.1))
}

/// Count linkable state/profile pairs that some coarse `(T, t_g)` choice places within
/// `t_e_thd` of the window, over a grid of thresholds, and pick the surface elbow.
pub fn calibrate_thresholds(
    ref_sl: &WeightedDataset,
    ref_sb: &WeightedDataset,
    cfg: &CalibrationConfig,
    simcfg: &SimConfig,
) -> Result<CalibrationResult> {
    if cfg.n_draws == 0 || cfg.headway.is_empty() || cfg.t_g.is_empty() {
        return Err(Error::invalid("calibration needs draws and candidate values"));
    }
    if cfg.t_e_grid.iter().chain(&cfg.d_e_grid).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("threshold grids must be positive"));
    }
    let d_max = cfg.d_e_grid.iter().fold(0.0f64, |m, v| m.max(*v));
    let mut rng = rng_for(cfg.seed, "calibrate", 0);
    let ui = weighted_draws(ref_sl.weights(), cfg.n_draws, &mut rng);
    let vi = weighted_draws(ref_sb.weights(), cfg.n_draws, &mut rng);
    let u: Vec<Vec<f64>> = ui.iter().map(|&i| sl_row(ref_sl, i)).collect::<Result<_>>()?;
    let v: Vec<Vec<f64>> = vi.iter().map(|&i| sb_row(ref_sb, i)).collect::<Result<_>>()?;
    let link = Link::from(
        &u.iter().map(|r| r[0]).collect::<Vec<_>>(),
        &u.iter().map(|r| r[1]).collect::<Vec<_>>(),
    );
    let simcfg = SimConfig { record_ticks: false, ..*simcfg };

    // (distance, best |t_e|) of every linkable pair
    let pairs: Vec<(f64, f64)> = v
        .par_iter()
        .flat_map_iter(|s| {
            let Ok(label) = categorize(s[1], s[3], s[2]) else {
                return Vec::new();
            };
            let mut found = Vec::new();
            for r in &u {
                let d = link.distance(r[0], r[1], s[3], s[4]);
                if d > d_max || !categorize(s[1], r[0], s[2]).is_ok_and(|l| l == label) {
                    continue;
                }
                let profile = profile_of(r);
                if profile.validate().is_err() {
                    continue;
                }
                let mut best = f64::INFINITY;
                for &headway in &cfg.headway {
                    for &t_g in &cfg.t_g {
                        let spec = ScenarioSpec {
                            d_init: s[0],
                            v_f_init: s[1],
                            a_f_min: s[2],
                            headway,
                            t_g,
                            t_a: f64::INFINITY,
                            profile,
                        };
                        if let Some(t_e) = simulate(&spec, &simcfg).ok().and_then(|l| l.t_e) {
                            best = best.min(t_e.abs());
                        }
                    }
                }
                found.push((d, best));
            }
            found
        })
        .collect();

    let surface: Vec<Vec<f64>> = cfg
        .t_e_grid
        .iter()
        .map(|&te| {
            cfg.d_e_grid
                .iter()
                .map(|&de| pairs.iter().filter(|(d, t)| *d <= de && *t <= te).count() as f64)
                .collect()
        })
        .collect();
    let (i, j) = surface_elbow(&cfg.t_e_grid, &cfg.d_e_grid, &surface)?;
    Ok(CalibrationResult {
        t_e_thd: cfg.t_e_grid[i],
        d_e_thd: cfg.d_e_grid[j],
        surface,
        t_e_grid: cfg.t_e_grid.clone(),
        d_e_grid: cfg.d_e_grid.clone(),
    })
}

fn sl_row(ds: &WeightedDataset, i: usize) -> Result<Vec<f64>> {
    ["v_l_init", "a_l_min", "a_1", "a_2", "tau_s", "tau_1", "tau_2"]
        .iter()
        .map(|c| Ok(ds.column(c)?[i]))
        .collect()
}

fn sb_row(ds: &WeightedDataset, i: usize) -> Result<Vec<f64>> {
    ["d_init", "v_f_init", "a_f_min", "v_l_init", "a_l_min"]
        .iter()
        .map(|c| Ok(ds.column(c)?[i]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_and_zero_surface() {
        assert_eq!(surface_elbow(&[0.2], &[1.0], &[vec![3.0]]).unwrap(), (0, 0));
        assert!(surface_elbow(&[0.1, 0.2], &[1.0, 2.0], &[vec![0.0; 2], vec![0.0; 2]]).is_err());
        assert!(surface_elbow(&[0.1, 0.2], &[1.0], &[vec![1.0]]).is_err());
    }

    #[test]
    fn saturating_surface_has_interior_elbow() {
        let g: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        let s: Vec<Vec<f64>> = g
            .iter()
            .map(|a| g.iter().map(|b| (1.0 - (-a / 2.0).exp()) * (1.0 - (-b / 2.0).exp())).collect())
            .collect();
        let (i, j) = surface_elbow(&g, &g, &s).unwrap();
        assert!((1..9).contains(&i) && (1..9).contains(&j), "{i} {j}");
    }

    #[test]
    fn planar_surface_picks_first_cell_on_ties() {
        let g = [0.0, 1.0, 2.0];
        let s: Vec<Vec<f64>> = g.iter().map(|a| g.iter().map(|b| 1.0 + a + b).collect()).collect();
        // everything lies on the plane: distances are ~0, argmax is stable
        assert!(surface_elbow(&g, &g, &s).is_ok());
    }

    #[test]
    fn calibration_surface_is_monotone() {
        let sl = WeightedDataset::from_rows(
            &["v_l_init", "a_l_min", "a_1", "a_2", "tau_s", "tau_1", "tau_2"],
            &[vec![5.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0], vec![6.0, -0.5, -0.5, 0.0, 2.0, 1.0, 0.0]],
        )
        .unwrap();
        let sb = WeightedDataset::from_rows(
            &["d_init", "v_f_init", "a_f_min", "v_l_init", "a_l_min"],
            &[vec![25.0, 10.0, 0.0, 5.0, 0.0], vec![15.0, 9.0, -2.0, 6.0, -0.4]],
        )
        .unwrap();
        let cfg = CalibrationConfig { n_draws: 20, ..CalibrationConfig::default() };
        let r = calibrate_thresholds(&sl, &sb, &cfg, &SimConfig::default()).unwrap();
        for i in 0..r.surface.len() {
            for j in 0..r.surface[i].len() {
                if i > 0 {
                    assert!(r.surface[i][j] >= r.surface[i - 1][j]);
                }
                if j > 0 {
                    assert!(r.surface[i][j] >= r.surface[i][j - 1]);
                }
            }
        }
        assert!(cfg.t_e_grid.contains(&r.t_e_thd));
    }
}
