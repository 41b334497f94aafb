//! Fit a per-sub-dataset Gaussian-copula mixture to initial states and sample from it.

use rearsynth::dist::{categorize, fit_mixture};
use rearsynth::pipeline::fixtures::TruthGenerator;
use rearsynth::pipeline::PipelineConfig;
use rearsynth::weighting::weighted_ks;
use rearsynth::WeightedDataset;

fn main() -> rearsynth::Result<()> {
    let cfg = PipelineConfig { seed: Some(2), ..PipelineConfig::default() };
    // initial states of simulated truth crashes stand in for REF_b
    let gen = TruthGenerator::from_config(&cfg)?;
    let rows: Vec<Vec<f64>> = (0..1500)
        .map(|i| gen.crash(2, "copula", i, None))
        .map(|c| c.map(|c| vec![c.spec.d_init, c.spec.v_f_init, c.spec.a_f_min, c.spec.v_l_init(), c.a_l_min]))
        .collect::<rearsynth::Result<_>>()?;
    let cols = ["d_init", "v_f_init", "a_f_min", "v_l_init", "a_l_min"];
    let train = WeightedDataset::from_rows(&cols, &rows)?;

    let model = fit_mixture(&train)?;
    for c in &model.components {
        println!("{:<3} share {:.3}  n_eff {:>6.1}", c.label, c.proportion, c.n_eff);
    }
    let (sample, labels) = model.sample_labelled(10_000, 9)?;
    let train_labels: Vec<String> = (0..train.len())
        .map(|i| {
            let r = train.row(i);
            categorize(r[1], r[3], r[2]).map(|l| l.to_string())
        })
        .collect::<rearsynth::Result<_>>()?;
    println!("\nper-label marginal KS, sample vs training data");
    for c in &model.components {
        let si: Vec<usize> = (0..sample.len()).filter(|&i| labels[i] == c.label).collect();
        let ti: Vec<usize> = (0..train.len()).filter(|&i| train_labels[i] == c.label).collect();
        let (s, t) = (sample.subset(&si), train.subset(&ti));
        let ks: Vec<String> = cols
            .iter()
            .map(|col| {
                weighted_ks(s.column(col)?, s.weights(), t.column(col)?, t.weights()).map(|k| format!("{col} {:.3}", k.statistic))
            })
            .collect::<rearsynth::Result<_>>()?;
        println!("  {:<3} {}", c.label, ks.join("  "));
    }
    println!("first labels: {:?}", &labels[..8]);
    Ok(())
}
