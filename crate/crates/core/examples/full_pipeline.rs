//! Run every stage on generated fixtures and summarise the weighted synthetic dataset.
//!
//! `cargo run --release --example full_pipeline -- [out_dir] [seed]`

use rearsynth::pipeline::{Pipeline, PipelineConfig};
use rearsynth::WeightedDataset;

fn main() -> rearsynth::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "out/example".into());
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = PipelineConfig { seed: Some(seed), out_dir: Some(out.into()), ..PipelineConfig::default() };
    let pipeline = Pipeline::new(cfg)?;
    pipeline.run_all()?;

    let synth = WeightedDataset::read_csv(pipeline.path("synthetic_crashes.csv"))?;
    println!("{} crashes, weight {:.1}, effective size {:.0}", synth.len(), synth.total_weight(), synth.effective_size());
    let labels = synth.column("label")?;
    for l in 1..=6 {
        let w: f64 = labels.iter().zip(synth.weights()).filter(|(x, _)| **x == l as f64).map(|(_, w)| w).sum();
        println!("  S{l}: {:.3}", w / synth.total_weight());
    }
    let report = pipeline.validate()?;
    if let Some(dv) = &report.dv_l {
        println!("Delta-v_l KS vs reference: {:.3}", dv.ks_stat);
    }
    println!("KS rejections {} (expected by chance {:.1})", report.rejections, report.expected_rejections);
    println!("outputs in {}", pipeline.out_dir().display());
    Ok(())
}
