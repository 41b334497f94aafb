//! Acceptance checks. Each test prints one `PASS`/`FAIL` line with the measured
//! value next to its tolerance, then asserts.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rearsynth::dist::{categorize, fit_mixture, ComponentModel, SubDatasetLabel};
use rearsynth::driver::{idm_accel, ConstantAccel, IdmParams};
use rearsynth::fusion::{pair_datasets, Bandwidth, Kde, PairingConfig};
use rearsynth::impact::{collinear_impact, restitution};
use rearsynth::pipeline::fixtures::{pairing_fixture, TruthGenerator};
use rearsynth::pipeline::stages::files;
use rearsynth::pipeline::{Pipeline, PipelineConfig, Stage};
use rearsynth::profile::{fit_piecewise, Variant, SMALL_CHANGE};
use rearsynth::sim::{run_sim, SimConfig};
use rearsynth::validation::ValidationReport;
use rearsynth::weighting::{ipf_reweight, knn_weights, weighted_ks, IpfConfig, IpfTarget};
use rearsynth::{ScenarioSpec, SpeedProfile, WeightedDataset};

fn verdict(id: u32, what: &str, pass: bool, detail: String) {
    println!("criterion {id:>2} {} {what}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} ({what}) failed: {detail}");
}

fn secs(d: Duration) -> String {
    format!("{:.3} s", d.as_secs_f64())
}

#[test]
fn c01_restitution_anchor() {
    let start = Instant::now();
    let e = restitution(1.0).unwrap();
    let took = start.elapsed();
    verdict(
        1,
        "restitution anchor",
        e == 0.47477 && took < Duration::from_millis(1),
        format!("e(1.0) = {e} (want 0.47477 exactly), {} (< 1 ms)", secs(took)),
    );
}

#[test]
fn c02_momentum_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let (mut worst_mom, mut worst_close) = (0.0f64, 0.0f64);
    let mut n = 0;
    while n < 100_000 {
        let v_f = rng.random_range(0.0..40.0);
        let v_l = rng.random_range(0.0..40.0);
        let rho = rng.random_range(0.2..5.0);
        if v_f - v_l <= 1e-6 {
            continue;
        }
        let r = collinear_impact(v_f, v_l, rho).unwrap();
        worst_mom = worst_mom.max((rho * r.dv_f + r.dv_l).abs());
        let closing = (v_f + r.dv_f) - (v_l + r.dv_l);
        worst_close = worst_close.max((closing + r.e * r.dv_pre).abs());
        n += 1;
    }
    let took = start.elapsed();
    verdict(
        2,
        "momentum invariant",
        worst_mom <= 1e-12 && worst_close <= 1e-12 && took < Duration::from_secs(1),
        format!(
            "max |rho dv_f + dv_l| = {worst_mom:.1e}, max closing error = {worst_close:.1e} (<= 1e-12), {} (< 1 s)",
            secs(took)
        ),
    );
}

const SPAN: f64 = 5.0;

fn window() -> Vec<f64> {
    let n = ((SPAN - 0.3) * 10.0_f64).round() as usize + 1;
    (0..n).map(|k| -SPAN + k as f64 / 10.0).collect()
}

fn slope(rng: &mut ChaCha8Rng, other: f64) -> f64 {
    loop {
        let a: f64 = rng.random_range(-6.0..3.0);
        if a.abs() >= 0.5 && (a - other).abs() >= 0.5 {
            return a;
        }
    }
}

/// Random profile of any variant, segments at least 0.3 s, breakpoints inside the
/// sampled window and a visible speed change unless steady.
fn planted(rng: &mut ChaCha8Rng, t: &[f64]) -> SpeedProfile {
    let variant = Variant::ALL[rng.random_range(0..5)];
    loop {
        let b1 = rng.random_range(-4.7..-1.0);
        let b2 = rng.random_range(b1 + 0.3..-0.6f64.max(b1 + 0.31));
        let v0 = rng.random_range(8.0..30.0);
        let a1 = slope(rng, 0.0);
        let a2 = slope(rng, a1);
        let p = match variant {
            Variant::S => SpeedProfile::steady(v0),
            Variant::One => SpeedProfile::from_initial(v0, a1, 0.0, 0.0, SPAN, 0.0),
            Variant::OneS => SpeedProfile::from_initial(v0, a1, 0.0, -b1, b1 + SPAN, 0.0),
            Variant::TwoOne => SpeedProfile::from_initial(v0, a1, a2, 0.0, -b1, b1 + SPAN),
            Variant::TwoOneS => {
                if b2 > -0.6 {
                    continue;
                }
                SpeedProfile::from_initial(v0, a1, a2, -b2, b2 - b1, b1 + SPAN)
            }
        };
        // the unclamped speed must stay positive, otherwise the floor hides a slope
        let positive = (0..=50).all(|i| {
            let x = i as f64 * 0.1;
            let lin = if x < p.tau_2 { p.v_l_init() + p.a_2 * x } else { p.speed_at(x) };
            lin > 0.5
        });
        let seen: Vec<f64> = t.iter().map(|x| p.speed_at(x + SPAN)).collect();
        let range = seen.iter().cloned().fold(f64::MIN, f64::max) - seen.iter().cloned().fold(f64::MAX, f64::min);
        let visible = variant == Variant::S || range >= SMALL_CHANGE + 0.1;
        if p.validate().is_ok() && positive && visible {
            return p;
        }
    }
}

#[test]
fn c03_piecewise_fit_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = window();
    let truths: Vec<SpeedProfile> = (0..500).map(|_| planted(&mut rng, &t)).collect();
    let start = Instant::now();
    let (mut worst, mut imperfect) = (0.0f64, 0);
    for truth in &truths {
        let v: Vec<f64> = t.iter().map(|x| truth.speed_at(x + SPAN)).collect();
        let fit = fit_piecewise(&t, &v).unwrap();
        for (a, b) in fit.profile.to_array().iter().zip(truth.to_array()) {
            worst = worst.max((a - b).abs());
        }
        if fit.r2_adj != 1.0 {
            imperfect += 1;
        }
    }
    let took = start.elapsed();
    verdict(
        3,
        "piecewise fit recovery",
        worst <= 1e-6 && imperfect == 0 && took < Duration::from_secs(30),
        format!(
            "500 profiles, max parameter error {worst:.1e} (<= 1e-6), {imperfect} with r2_adj != 1, {} (< 30 s)",
            secs(took)
        ),
    );
}

#[test]
fn c04_idm_anchors() {
    let p = IdmParams::default();
    let at2 = idm_accel(&p, 0.0, 0.0, 2.0).unwrap();
    let at20 = idm_accel(&p, 0.0, 0.0, 20.0).unwrap();
    verdict(
        4,
        "IDM anchors",
        at2 == 0.0 && (at20 - 2.97).abs() <= 1e-9,
        format!("a(d=2) = {at2} (want 0), a(d=20) = {at20:.12} (2.97 +- 1e-9)"),
    );
}

#[test]
fn c05_constant_speed_oracle() {
    let cfg = SimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start = Instant::now();
    let (mut worst, mut mismatched, mut crashes, mut valid) = (0.0f64, 0, 0, 0);
    for _ in 0..1000 {
        let v_f = rng.random_range(1.0..30.0);
        let v_l = rng.random_range(0.0..30.0);
        // half the crashing cases land near the validity window edges
        let t_hit = if rng.random_bool(0.5) { rng.random_range(0.5..8.0) } else { rng.random_range(4.6..5.4) };
        let d_init = if v_f > v_l {
            t_hit * (v_f - v_l)
        } else {
            rng.random_range(1.0..60.0)
        };
        let spec = ScenarioSpec {
            d_init,
            v_f_init: v_f,
            a_f_min: -6.0,
            headway: 1.5,
            t_g: 0.5,
            t_a: f64::INFINITY,
            profile: SpeedProfile::steady(v_l),
        };
        let log = run_sim(&spec, &cfg, &mut ConstantAccel(0.0));
        let closed = (v_f > v_l).then(|| d_init / (v_f - v_l)).filter(|t| *t <= cfg.t_max);
        let closed_valid = closed.is_some_and(|t| (t - SPAN).abs() <= cfg.t_e_thd);
        match (log.t_c, closed) {
            (Some(a), Some(b)) => {
                worst = worst.max((a - b).abs());
                crashes += 1;
            }
            (None, None) => {}
            _ => mismatched += 1,
        }
        if log.valid != closed_valid {
            mismatched += 1;
        }
        valid += closed_valid as usize;
    }
    let took = start.elapsed();
    verdict(
        5,
        "constant-speed simulation oracle",
        worst <= 0.05 && mismatched == 0 && took < Duration::from_secs(10),
        format!(
            "1000 fixtures ({crashes} crash, {valid} valid), max |t_c error| {worst:.1e} s (<= 0.05), \
             {mismatched} classification mismatches, {} (< 10 s)",
            secs(took)
        ),
    );
}

#[test]
fn c06_knn_weighting() {
    let w = knn_weights(&[&[0.0, 10.0]], &[&[0.0, 0.0, 10.0]], 1).unwrap();
    let hand = (w[0] - 4.0 / 3.0).abs() < 1e-12 && (w[1] - 2.0 / 3.0).abs() < 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n_raw = rng.random_range(5..200);
        let n_ref = rng.random_range(5..500);
        let k = rng.random_range(1..=n_raw.min(10));
        let raw: Vec<Vec<f64>> = (0..2).map(|_| (0..n_raw).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let refd: Vec<Vec<f64>> = (0..2).map(|_| (0..n_ref).map(|_| rng.random_range(0.3..1.5)).collect()).collect();
        let raw_cols: Vec<&[f64]> = raw.iter().map(|c| c.as_slice()).collect();
        let ref_cols: Vec<&[f64]> = refd.iter().map(|c| c.as_slice()).collect();
        let w = knn_weights(&raw_cols, &ref_cols, k).unwrap();
        let sum: f64 = w.iter().sum();
        let positive = w.iter().filter(|x| **x > 0.0).count() as f64;
        worst = worst.max((sum - positive).abs());
    }
    verdict(
        6,
        "KNN weighting",
        hand && worst < 1e-9,
        format!("hand case {w:?} (want [4/3, 2/3]), max |sum(w) - count(w > 0)| over 100 runs {worst:.1e}"),
    );
}

#[test]
fn c07_pairing_correlations() {
    let (a, b) = pairing_fixture(2000, 7).unwrap();
    let start = Instant::now();
    let kde = Kde::new(b.column("v_l_init").unwrap(), b.weights(), Bandwidth::Silverman).unwrap();
    let (_, out) = pair_datasets(&a, &b, &kde, (0.78, -0.54), &PairingConfig::default()).unwrap();
    let took = start.elapsed();
    let pass = (out.r_vf_vl - 0.78).abs() <= 0.03
        && (out.r_vf_al + 0.54).abs() <= 0.03
        && out.r_dv_vl.abs() < 0.3
        && out.r_dv_al.abs() < 0.3
        && took < Duration::from_secs(60);
    verdict(
        7,
        "pairing correlations",
        pass,
        format!(
            "eta* {}%, r(v_f,v_l) {:+.3} (0.78 +- 0.03), r(v_f,a_l_min) {:+.3} (-0.54 +- 0.03), \
             guards {:+.3} / {:+.3} (< 0.3), {} (< 60 s)",
            out.eta_star,
            out.r_vf_vl,
            out.r_vf_al,
            out.r_dv_vl,
            out.r_dv_al,
            secs(took)
        ),
    );
}

#[test]
fn c08_ipf() {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let nrm = Normal::new(0.0, 1.0).unwrap();
    let n = 4000;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let z: f64 = nrm.sample(&mut rng);
        a.push(1.5 * z);
        b.push(0.9 * z + 0.8 * nrm.sample(&mut rng));
    }
    let ds = WeightedDataset::from_columns(&[("a", a), ("b", b)]).unwrap();
    let ra: Vec<f64> = (0..2000).map(|_| nrm.sample(&mut rng) + 0.4).collect();
    let rb: Vec<f64> = (0..2000).map(|_| 0.8 * nrm.sample(&mut rng) - 0.3).collect();
    let targets = [IpfTarget::global("a", ra), IpfTarget::global("b", rb)];
    let (_, diag) = ipf_reweight(&ds, &targets, &IpfConfig::default()).unwrap();
    let best = diag.losses[diag.best_iter];
    let worst_ks = diag.ks.iter().map(|(_, k)| *k).fold(0.0, f64::max);

    let x: Vec<f64> = (0..100).map(|k| (k % 2) as f64).collect();
    let bin = WeightedDataset::from_columns(&[("b", x.clone())]).unwrap();
    let reference: Vec<f64> = (0..100).map(|k| if k < 80 { 0.0 } else { 1.0 }).collect();
    let one = IpfConfig { max_iter: 1, ..IpfConfig::default() };
    let (out, _) = ipf_reweight(&bin, &[IpfTarget::global("b", reference)], &one).unwrap();
    let bin_err = x
        .iter()
        .zip(out.weights())
        .map(|(v, w)| (w - if *v == 0.0 { 1.6 } else { 0.4 }).abs())
        .fold(0.0, f64::max);

    verdict(
        8,
        "IPF",
        best <= diag.losses[0] && worst_ks <= 0.05 && bin_err <= 1e-6,
        format!(
            "best loss {best:.4} vs all-ones {:.4}, marginal KS {:?} (<= 0.05), binary case error {bin_err:.1e} (<= 1e-6)",
            diag.losses[0],
            diag.ks.iter().map(|(c, k)| format!("{c} {k:.3}")).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn c09_copula_round_trip() {
    let cfg = PipelineConfig { seed: Some(9), ..PipelineConfig::default() };
    let gen = TruthGenerator::from_config(&cfg).unwrap();
    let cols = ["d_init", "v_f_init", "a_f_min", "v_l_init", "a_l_min"];
    let rows: Vec<Vec<f64>> = (0..1500)
        .map(|i| {
            let c = gen.crash(9, "round-trip", i, None).unwrap();
            vec![c.spec.d_init, c.spec.v_f_init, c.spec.a_f_min, c.spec.v_l_init(), c.a_l_min]
        })
        .collect();
    let train = WeightedDataset::from_rows(&cols, &rows).unwrap();
    let train_labels: Vec<String> = rows.iter().map(|r| categorize(r[1], r[3], r[2]).unwrap().to_string()).collect();
    let model = fit_mixture(&train).unwrap();
    let (sample, labels) = model.sample_labelled(10_000, 19).unwrap();

    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for c in &model.components {
        let modeled: Vec<String> = match &c.model {
            ComponentModel::Copula(m) => m.modeled.clone(),
            ComponentModel::Bootstrap { .. } => model.columns.clone(),
        };
        let si: Vec<usize> = (0..sample.len()).filter(|&i| labels[i] == c.label).collect();
        let ti: Vec<usize> = (0..train.len()).filter(|&i| train_labels[i] == c.label).collect();
        let (s, t) = (sample.subset(&si), train.subset(&ti));
        for col in &modeled {
            let ks = weighted_ks(s.column(col).unwrap(), s.weights(), t.column(col).unwrap(), t.weights())
                .unwrap()
                .statistic;
            checked += 1;
            if ks > worst.0 {
                worst = (ks, format!("{} {col}", c.label));
            }
        }
    }
    verdict(
        9,
        "copula round trip",
        worst.0 <= 0.05,
        format!(
            "{} sub-datasets, {checked} modeled parameters, max KS {:.3} at {} (<= 0.05)",
            model.components.len(),
            worst.0,
            worst.1
        ),
    );
}

struct Run {
    _dir: tempfile::TempDir,
    out: PathBuf,
    took: Duration,
}

fn run_pipeline(seed: u64, emit_tick_logs: bool) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = PipelineConfig {
        seed: Some(seed),
        out_dir: Some(out.clone()),
        emit_tick_logs,
        ..PipelineConfig::default()
    };
    let start = Instant::now();
    Pipeline::new(cfg).unwrap().run(Stage::RunAll).unwrap();
    Run { _dir: dir, out, took: start.elapsed() }
}

fn first_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| run_pipeline(1, true))
}

/// Crash time of a saved tick log, interpolated between its last two ticks.
fn logged_t_e(path: &Path) -> f64 {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let h = rdr.headers().unwrap().clone();
    let (it, ig) = (
        h.iter().position(|c| c == "t").unwrap(),
        h.iter().position(|c| c == "gap").unwrap(),
    );
    let rows: Vec<(f64, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[it].parse().unwrap(), r[ig].parse().unwrap())
        })
        .collect();
    let [(t0, g0), (t1, g1)] = rows[rows.len() - 2..] else { unreachable!() };
    if g1 > 0.0 {
        return f64::INFINITY;
    }
    t0 + g0 / (g0 - g1) * (t1 - t0) - SPAN
}

#[test]
fn c10_end_to_end_pipeline() {
    let run = first_run();
    let synth = WeightedDataset::read_csv(run.out.join(files::SYNTHETIC)).unwrap();
    let t_e = synth.column("t_e").unwrap();
    let n_valid = t_e.iter().filter(|t| t.abs() <= 0.2 + 1e-9).count();

    let mut logs: Vec<PathBuf> = std::fs::read_dir(run.out.join(files::LOGS))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    logs.sort();
    let worst_log = logs.iter().map(|p| logged_t_e(p).abs()).fold(0.0, f64::max);

    let text = std::fs::read_to_string(run.out.join(files::VALIDATION).join("report.json")).unwrap();
    let report: ValidationReport = serde_json::from_str(&text).unwrap();
    let prop = report.max_proportion_delta();
    let dv_ks = report.dv_l.as_ref().map_or(f64::INFINITY, |d| d.ks_stat);

    let pass = n_valid >= 5000
        && logs.len() >= 5000
        && worst_log <= 0.2 + 1e-9
        && prop <= 0.05
        && dv_ks <= 0.15
        && run.took < Duration::from_secs(15 * 60);
    verdict(
        10,
        "end-to-end fixture pipeline",
        pass,
        format!(
            "{n_valid} valid crashes (>= 5000), {} logs with max |t_e| {worst_log:.3} s (<= 0.2), \
             max proportion delta {prop:.1e} (<= 0.05), dv_l KS {dv_ks:.3} (<= 0.15), {} (< 15 min)",
            logs.len(),
            secs(run.took)
        ),
    );
}

#[test]
fn c11_determinism() {
    let a = std::fs::read(first_run().out.join(files::SYNTHETIC)).unwrap();
    let again = run_pipeline(1, false);
    let b = std::fs::read(again.out.join(files::SYNTHETIC)).unwrap();
    verdict(
        11,
        "determinism",
        a == b,
        format!("{} vs {} bytes, identical: {}", a.len(), b.len(), a == b),
    );
}

#[test]
fn c12_sub_dataset_truth_table() {
    use SubDatasetLabel::*;
    let cases = [
        ((15.0, 10.0, 0.0), S1),
        ((15.0, 10.0, -1.0), S2),
        ((10.0, 9.999, -0.001), S2),
        ((10.0, 0.0, -4.0), S3),
        ((10.0, 0.0, 0.0), S3),
        ((0.0, 0.0, 0.0), S4),
        ((0.0, 0.0, -3.0), S4),
        ((5.0, 10.0, 0.0), S5),
        ((10.0, 10.0, 0.0), S5),
        ((10.0, 10.0, -1.0), S6),
        ((5.0, 10.0, -2.0), S6),
        ((1e-12, 0.0, 0.0), S4),
    ];
    let wrong: Vec<String> = cases
        .iter()
        .filter_map(|&((v_f, v_l, a), want)| {
            let got = categorize(v_f, v_l, a).ok();
            (got != Some(want)).then(|| format!("({v_f},{v_l},{a}) -> {got:?}, want {want}"))
        })
        .collect();
    let rejects = categorize(0.0, 5.0, 0.0).is_err();
    verdict(
        12,
        "sub-dataset categorization",
        wrong.is_empty() && rejects,
        format!("{} of {} cases correct {wrong:?}, (0,5,0) rejected: {rejects}", cases.len() - wrong.len(), cases.len()),
    );
}
