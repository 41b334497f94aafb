//! Match sampled initial states with lead profiles and behaviour parameters, keeping
//! the combinations that crash near the end of the 5 s event.

use rearsynth::dist::{fit_mixture, GenGammaFit, TruncNormal};
use rearsynth::pipeline::fixtures::{ref_sl, TruthGenerator};
use rearsynth::pipeline::PipelineConfig;
use rearsynth::sim::{match_and_simulate, BehaviourMarginals, MatchConfig, SimConfig};
use rearsynth::WeightedDataset;

fn main() -> rearsynth::Result<()> {
    let cfg = PipelineConfig { seed: Some(4), ..PipelineConfig::default() };
    let gen = TruthGenerator::from_config(&cfg)?;
    let rows: Vec<Vec<f64>> = (0..600)
        .map(|i| gen.crash(4, "states", i, None))
        .map(|c| c.map(|c| vec![c.spec.d_init, c.spec.v_f_init, c.spec.a_f_min, c.spec.v_l_init(), c.a_l_min]))
        .collect::<rearsynth::Result<_>>()?;
    let states = WeightedDataset::from_rows(&["d_init", "v_f_init", "a_f_min", "v_l_init", "a_l_min"], &rows)?;
    let (mut ref_sb, labels) = fit_mixture(&states)?.sample_labelled(2000, 4)?;
    let idx: Vec<f64> = labels.iter().map(|l| l[1..].parse::<f64>().unwrap()).collect();
    ref_sb.push_column("label", idx)?;

    let headway = TruncNormal::new(1.5, 0.4, 0.5, 3.0)?;
    let t_g = GenGammaFit::from_params(0.6, 1.5, 1.0)?;
    let t_a = TruncNormal::new(2.0, 0.8, 0.0, 5.0)?;
    let marginals = BehaviourMarginals::from_quantiles(|p| headway.quantile(p), |p| t_g.quantile(p), |p| t_a.quantile(p));
    let sim = SimConfig { record_ticks: false, ..SimConfig::default() };
    let out = match_and_simulate(&ref_sl(3000, 4)?, &ref_sb, &marginals, 300, &MatchConfig { seed: 4, ..MatchConfig::default() }, &sim)?;
    println!("{} crashes from {} states in {} rounds ({} simulations)", out.crashes.len(), out.n_states, out.rounds, out.n_sims);
    for c in out.crashes.iter().take(8) {
        println!(
            "{} row {:>4}  T {:.2}  t_g {:.2}  t_c {:.2}  abnormal {}",
            c.label, c.row, c.spec.headway, c.spec.t_g, c.log.t_c.unwrap_or(f64::NAN), c.abnormal
        );
    }
    Ok(())
}
