//! Watch adaptive token pruning at work: run one input through the model at
//! several halting thresholds and print survival curves, mean depths, and
//! measured attention cost.
//!
//! Usage: cargo run --release --example halting_trace

use papez::audit::{halting_report, OpCounter};
use papez::config::RunConfig;
use papez::datagen::{synth_mixture, MixSpec};
use papez::model::{PapezConfig, PapezModel};
use papez::train::run_training;

fn main() -> papez::Result<()> {
    // a short training run gives the estimator non-trivial behavior
    let mut run = RunConfig::toy();
    run.steps = 300;
    let mut model = PapezModel::<f32>::init(run.model, run.seed)?;
    println!("training {} steps...", run.steps);
    run_training(&mut model, &run, 0, |_| Ok(()), |_, _, _| Ok(()))?;

    let spec = MixSpec::from_seed(run.eval_base_seed + 7, run.sample_rate, run.duration_s);
    let (mix, _) = synth_mixture(&spec)?;

    println!("\n p_th   mean depth   attention MACs   survival curve");
    let mut prev_macs = 0u128;
    for p_th in [0.5, 0.7, 0.9, 0.99] {
        let cfg = PapezConfig {
            p_th,
            ..run.model
        };
        let mut probe = PapezModel::<f32>::init(cfg, run.seed)?;
        // share the trained weights across thresholds
        for p in model.params.iter().map(|p| (p.name.clone(), p.tensor.data().to_vec())) {
            probe.params.set_data(&p.0, p.1)?;
        }
        let mut counter = OpCounter::new();
        let (_, state) = probe.forward(&mix.samples, &mut counter)?;
        let trace = probe.halting_trace(&state);
        let summary = halting_report(&[trace])?;
        let curve: Vec<String> = summary.survival.iter().map(|v| format!("{v:.2}")).collect();
        println!(
            " {p_th:<5}  {:>9.2}   {:>14}   [{}]",
            summary.mean_depth,
            counter.attention_macs,
            curve.join(", ")
        );
        assert!(
            counter.attention_macs >= prev_macs,
            "raising p_th must never reduce compute"
        );
        prev_macs = counter.attention_macs;
    }
    println!("\nhigher thresholds keep tokens alive longer; cost rises monotonically");
    Ok(())
}
