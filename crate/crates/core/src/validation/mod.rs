//! Comparisons of the weighted synthetic crashes against their references.

mod tsne;

pub use tsne::{tsne_1d, tsne_ks, TsneConfig, MAX_TSNE_POINTS};

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::ZERO_TOL;
use crate::error::{Error, Result};
use crate::model::WeightedDataset;
use crate::weighting::{weighted_ks_with, KsResult};

const DV_BINS: usize = 20;

/// Reference for one group of parameters tested per label (sub-dataset or profile pattern).
#[derive(Debug, Clone)]
pub struct GroupReference {
    pub group: String,
    pub data: WeightedDataset,
    pub labels: Vec<String>,
    /// Label of every synthetic row under this group's scheme.
    pub synth_labels: Vec<String>,
    pub parameters: Vec<String>,
}

/// Reference sample for one parameter tested over the whole synthetic set.
#[derive(Debug, Clone)]
pub struct GlobalReference {
    pub parameter: String,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
    /// Synthetic rows the parameter is defined on; `None` means all.
    pub rows: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsRow {
    pub group: String,
    pub sub_dataset: String,
    pub parameter: String,
    pub ks_stat: f64,
    pub p_value: f64,
    /// Sum of synthetic weights in the tested subset.
    pub n_eff: f64,
    pub n_ref: usize,
    /// Set when the synthetic subset carried no weight.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionRow {
    pub sub_dataset: String,
    pub reference: f64,
    pub synthetic: f64,
    /// `synthetic - reference`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub synthetic: f64,
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaVComparison {
    pub ks_stat: f64,
    pub p_value: f64,
    pub histogram: Vec<HistBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneRow {
    pub group: String,
    pub sub_dataset: String,
    pub ks_stat: f64,
    pub p_value: f64,
    pub n_synth: usize,
    pub n_ref: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rows: Vec<KsRow>,
    pub proportions: Vec<ProportionRow>,
    pub dv_l: Option<DeltaVComparison>,
    pub tsne: Vec<TsneRow>,
    pub alpha: f64,
    /// Tests with `p < alpha`, against the count expected by chance.
    pub rejections: usize,
    pub expected_rejections: f64,
}

impl ValidationReport {
    fn tally(&mut self) {
        let tested: Vec<&KsRow> = self.rows.iter().filter(|r| !r.empty).collect();
        self.rejections = tested.iter().filter(|r| r.p_value < self.alpha).count();
        self.expected_rejections = self.alpha * tested.len() as f64;
    }

    pub fn max_proportion_delta(&self) -> f64 {
        self.proportions.iter().map(|p| p.delta.abs()).fold(0.0, f64::max)
    }

    /// Write `report.json`, `report.csv` and plot-ready series into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let csv_path = dir.join("report.csv");
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::csv(&csv_path, e))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::csv(&csv_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        if let Some(dv) = &self.dv_l {
            let p = dir.join("hist_dv_l.csv");
            let mut w = csv::Writer::from_path(&p).map_err(|e| Error::csv(&p, e))?;
            for b in &dv.histogram {
                w.serialize(b).map_err(|e| Error::csv(&p, e))?;
            }
            w.flush().map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub n_perm: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            n_perm: 1000,
            alpha: 0.05,
            seed: 0,
        }
    }
}

/// Parameters of `params` that vary within the rows `idx` of `data`.
pub fn modeled_parameters(data: &WeightedDataset, idx: &[usize], params: &[String]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for p in params {
        let col = data.column(p)?;
        let live = idx.iter().filter(|&&i| data.weights()[i] > 0.0).map(|&i| col[i]);
        let (lo, hi) = live.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi - lo > ZERO_TOL {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn distinct_labels(labels: &[String]) -> Vec<String> {
    let mut l: Vec<String> = labels.to_vec();
    l.sort();
    l.dedup();
    l
}

struct Job {
    group: String,
    label: String,
    parameter: String,
    synth: (Vec<f64>, Vec<f64>),
    reference: (Vec<f64>, Vec<f64>),
}

/// Per-label and global weighted KS tests plus label proportions.
///
/// Labels of the first group define the proportion table. A label present in the
/// reference but carrying no synthetic weight yields rows flagged `empty`.
pub fn validate_marginals(
    synth: &WeightedDataset,
    groups: &[GroupReference],
    globals: &[GlobalReference],
    cfg: &ValidationConfig,
) -> Result<ValidationReport> {
    let sw = synth.weights();
    let mut jobs = Vec::new();
    for g in groups {
        if g.labels.len() != g.data.len() || g.synth_labels.len() != synth.len() {
            return Err(Error::invalid(format!("group {}: label count does not match rows", g.group)));
        }
        for p in &g.parameters {
            if !g.data.has_column(p) {
                return Err(Error::MissingColumn(format!("reference for {}/{p}", g.group)));
            }
            synth.column(p)?;
        }
        for label in distinct_labels(&g.labels) {
            let ri: Vec<usize> = (0..g.data.len()).filter(|&i| g.labels[i] == label).collect();
            let si: Vec<usize> = (0..synth.len()).filter(|&i| g.synth_labels[i] == label).collect();
            for p in modeled_parameters(&g.data, &ri, &g.parameters)? {
                let rc = g.data.column(&p)?;
                let sc = synth.column(&p)?;
                jobs.push(Job {
                    group: g.group.clone(),
                    label: label.clone(),
                    parameter: p,
                    synth: (si.iter().map(|&i| sc[i]).collect(), si.iter().map(|&i| sw[i]).collect()),
                    reference: (ri.iter().map(|&i| rc[i]).collect(), ri.iter().map(|&i| g.data.weights()[i]).collect()),
                });
            }
        }
    }
    for gr in globals {
        if gr.values.is_empty() || gr.values.len() != gr.weights.len() {
            return Err(Error::MissingColumn(format!("reference sample for {}", gr.parameter)));
        }
        let sc = synth.column(&gr.parameter)?;
        let rows: Vec<usize> = gr.rows.clone().unwrap_or_else(|| (0..synth.len()).collect());
        jobs.push(Job {
            group: "behaviour".into(),
            label: "all".into(),
            parameter: gr.parameter.clone(),
            synth: (rows.iter().map(|&i| sc[i]).collect(), rows.iter().map(|&i| sw[i]).collect()),
            reference: (gr.values.clone(), gr.weights.clone()),
        });
    }

    let rows: Vec<KsRow> = jobs
        .par_iter()
        .enumerate()
        .map(|(k, j)| {
            let n_eff: f64 = j.synth.1.iter().sum();
            let empty = !(n_eff > 0.0);
            let r = if empty {
                KsResult { statistic: f64::NAN, p_value: f64::NAN }
            } else {
                weighted_ks_with(&j.synth.0, &j.synth.1, &j.reference.0, &j.reference.1, cfg.n_perm, cfg.seed ^ k as u64)?
            };
            Ok(KsRow {
                group: j.group.clone(),
                sub_dataset: j.label.clone(),
                parameter: j.parameter.clone(),
                ks_stat: r.statistic,
                p_value: r.p_value,
                n_eff,
                n_ref: j.reference.0.len(),
                empty,
            })
        })
        .collect::<Result<_>>()?;

    let proportions = match groups.first() {
        Some(g) => {
            let rtot = g.data.total_weight();
            let stot: f64 = sw.iter().sum();
            distinct_labels(&g.labels)
                .into_iter()
                .map(|label| {
                    let r: f64 = (0..g.data.len()).filter(|&i| g.labels[i] == label).map(|i| g.data.weights()[i]).sum();
                    let s: f64 = (0..synth.len()).filter(|&i| g.synth_labels[i] == label).map(|i| sw[i]).sum();
                    let (r, s) = (r / rtot, if stot > 0.0 { s / stot } else { 0.0 });
                    ProportionRow { sub_dataset: label, reference: r, synthetic: s, delta: s - r }
                })
                .collect()
        }
        None => Vec::new(),
    };
    let mut report = ValidationReport {
        rows,
        proportions,
        dv_l: None,
        tsne: Vec::new(),
        alpha: cfg.alpha,
        rejections: 0,
        expected_rejections: 0.0,
    };
    report.tally();
    Ok(report)
}

/// Weighted KS and a shared-edge histogram of synthetic against reference Delta-v.
pub fn compare_delta_v(synth: &[f64], synth_w: &[f64], reference: &[f64], ref_w: &[f64], cfg: &ValidationConfig) -> Result<DeltaVComparison> {
    let r = weighted_ks_with(synth, synth_w, reference, ref_w, cfg.n_perm, cfg.seed)?;
    let (lo, hi) = synth
        .iter()
        .chain(reference)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let width = (hi - lo) / DV_BINS as f64;
    let mut histogram: Vec<HistBin> = (0..DV_BINS)
        .map(|k| HistBin {
            lo: lo + k as f64 * width,
            hi: if k + 1 == DV_BINS { hi } else { lo + (k + 1) as f64 * width },
            synthetic: 0.0,
            reference: 0.0,
        })
        .collect();
    let bin = |v: f64| {
        if width > 0.0 {
            (((v - lo) / width) as usize).min(DV_BINS - 1)
        } else {
            0
        }
    };
    for (v, w) in synth.iter().zip(synth_w) {
        histogram[bin(*v)].synthetic += w;
    }
    for (v, w) in reference.iter().zip(ref_w) {
        histogram[bin(*v)].reference += w;
    }
    Ok(DeltaVComparison { ks_stat: r.statistic, p_value: r.p_value, histogram })
}

/// Weighted empirical CDF as `(value, cumulative share)` steps, for plotting.
pub fn write_cdf(path: impl AsRef<Path>, series: &[(&str, &[f64], &[f64])]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut emit = || -> std::io::Result<()> {
        writeln!(f, "series,value,cdf")?;
        for (name, x, w) in series {
            let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(w.iter().copied()).collect();
            pairs.sort_by(|a, b| crate::util::cmp_f64(&a.0, &b.0));
            let total: f64 = pairs.iter().map(|p| p.1).sum();
            let mut c = 0.0;
            for (v, wi) in pairs {
                c += wi;
                writeln!(f, "{name},{v},{}", c / total)?;
            }
        }
        f.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{rng_for, weighted_draws};
    use proptest::prelude::*;
    use rand::Rng;

    fn reference(n: usize) -> (WeightedDataset, Vec<String>) {
        let mut rng = rng_for(9, "ref", 0);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let s2 = rng.random::<f64>() < 0.3;
            let a = if s2 { -rng.random::<f64>() * 5.0 } else { 0.0 };
            rows.push(vec![5.0 + rng.random::<f64>() * 10.0, a, rng.random::<f64>()]);
            labels.push(if s2 { "S2".to_string() } else { "S1".to_string() });
        }
        (WeightedDataset::from_rows(&["v", "a", "x"], &rows).unwrap(), labels)
    }

    fn params() -> Vec<String> {
        ["v", "a", "x"].map(String::from).to_vec()
    }

    #[test]
    fn resampled_synthetic_passes_and_rows_are_complete() {
        let (data, labels) = reference(4000);
        let mut rng = rng_for(1, "draw", 0);
        let idx = weighted_draws(data.weights(), 5000, &mut rng);
        let synth = data.subset(&idx);
        let synth_labels: Vec<String> = idx.iter().map(|&i| labels[i].clone()).collect();
        let g = GroupReference { group: "state".into(), data: data.clone(), labels, synth_labels, parameters: params() };
        let t = data.column("x").unwrap().to_vec();
        let global = GlobalReference { parameter: "x".into(), weights: vec![1.0; t.len()], values: t, rows: None };
        let cfg = ValidationConfig { n_perm: 50, ..ValidationConfig::default() };
        let rep = validate_marginals(&synth, &[g], &[global], &cfg).unwrap();
        // S1 models v and x (a is constant), S2 all three, plus the global
        assert_eq!(rep.rows.len(), 2 + 3 + 1);
        assert!(rep.rows.iter().all(|r| r.ks_stat <= 0.05), "{:?}", rep.rows);
        assert!(rep.max_proportion_delta() < 0.03);
        let s1 = rep.proportions.iter().find(|p| p.sub_dataset == "S1").unwrap();
        assert!((s1.delta - (s1.synthetic - s1.reference)).abs() < 1e-15);
    }

    #[test]
    fn empty_label_is_flagged() {
        let (data, labels) = reference(300);
        let keep: Vec<usize> = (0..300).filter(|&i| labels[i] == "S1").collect();
        let synth = data.subset(&keep);
        let g = GroupReference {
            group: "state".into(),
            data,
            labels,
            synth_labels: vec!["S1".into(); keep.len()],
            parameters: params(),
        };
        let rep = validate_marginals(&synth, &[g], &[], &ValidationConfig { n_perm: 10, ..ValidationConfig::default() }).unwrap();
        let s2: Vec<&KsRow> = rep.rows.iter().filter(|r| r.sub_dataset == "S2").collect();
        assert_eq!(s2.len(), 3);
        assert!(s2.iter().all(|r| r.empty && r.n_eff == 0.0));
        let p = rep.proportions.iter().find(|p| p.sub_dataset == "S2").unwrap();
        assert!(p.delta < 0.0);
    }

    #[test]
    fn missing_reference_is_named() {
        let (data, labels) = reference(50);
        let g = GroupReference {
            group: "state".into(),
            data: data.clone(),
            labels: labels.clone(),
            synth_labels: labels,
            parameters: vec!["nope".into()],
        };
        let e = validate_marginals(&data, &[g], &[], &ValidationConfig::default()).unwrap_err();
        assert!(e.to_string().contains("nope"), "{e}");
    }

    #[test]
    fn delta_v_identity_and_histogram_mass() {
        let x: Vec<f64> = (0..500).map(|k| (k as f64 * 0.37).sin().abs() * 12.0).collect();
        let w: Vec<f64> = (0..500).map(|k| 0.5 + (k % 3) as f64).collect();
        let c = compare_delta_v(&x, &w, &x, &w, &ValidationConfig { n_perm: 20, ..ValidationConfig::default() }).unwrap();
        assert_eq!(c.ks_stat, 0.0);
        assert_eq!(c.histogram.len(), DV_BINS);
        let s: f64 = c.histogram.iter().map(|b| b.synthetic).sum();
        assert!((s - w.iter().sum::<f64>()).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn delta_v_statistic_scale_invariant(
            a in prop::collection::vec((0.0f64..20.0, 0.1f64..3.0), 2..60),
            b in prop::collection::vec(0.0f64..20.0, 2..60),
            k in 0.01f64..100.0,
        ) {
            let (x, w): (Vec<f64>, Vec<f64>) = a.into_iter().unzip();
            let wk: Vec<f64> = w.iter().map(|v| v * k).collect();
            let rw = vec![1.0; b.len()];
            let cfg = ValidationConfig { n_perm: 0, ..ValidationConfig::default() };
            let s1 = compare_delta_v(&x, &w, &b, &rw, &cfg).unwrap();
            let s2 = compare_delta_v(&x, &wk, &b, &rw, &cfg).unwrap();
            prop_assert!((s1.ks_stat - s2.ks_stat).abs() < 1e-12);
            let mass: f64 = s2.histogram.iter().map(|h| h.synthetic).sum();
            prop_assert!((mass - wk.iter().sum::<f64>()).abs() < 1e-9 * mass.max(1.0));
        }
    }
}
