//! Train the toy separation model on synthetic disjoint-band mixtures and
//! report held-out SI-SNR improvement.
//!
//! Usage: cargo run --release --example train_toy [steps] [outdir]
//!
//! The default 2000 steps take a few minutes on a desktop CPU and reach a
//! held-out mean improvement of several dB.

use std::io::Write;

use papez::config::RunConfig;
use papez::model::PapezModel;
use papez::params::save_atomic;
use papez::train::{evaluate, run_training};

fn main() -> papez::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args
        .next()
        .and_then(|s| s.parse().ok())
        .unwrap_or(2000);
    let outdir = std::path::PathBuf::from(args.next().unwrap_or_else(|| "target/toy_run".into()));
    std::fs::create_dir_all(&outdir)?;

    let mut run = RunConfig::toy();
    run.steps = steps;
    std::fs::write(outdir.join("config.txt"), run.to_text())?;

    let mut model = PapezModel::<f32>::init(run.model, run.seed)?;
    println!(
        "model: {} parameters, {} speakers, max depth {}",
        model.params.numel(),
        run.model.speakers,
        run.model.max_steps
    );

    let mut log = std::fs::File::create(outdir.join("train_log.csv"))?;
    writeln!(log, "step,loss,grad_norm,lr,mean_halt_depth")?;
    let t0 = std::time::Instant::now();
    run_training(
        &mut model,
        &run,
        0,
        |r| {
            writeln!(
                log,
                "{},{:.6},{:.6},{:.8},{:.4}",
                r.step, r.loss, r.grad_norm, r.lr, r.mean_halt_depth
            )?;
            if r.step % 100 == 0 {
                println!(
                    "step {:>5}  loss {:+8.3}  lr {:.2e}  mean depth {:.2}",
                    r.step, r.loss, r.lr, r.mean_halt_depth
                );
            }
            Ok(())
        },
        |m, epoch, next_step| {
            save_atomic(&m.params, &outdir.join(format!("ckpt_epoch_{epoch}.bin")))?;
            println!("epoch {epoch} complete at step {next_step}");
            Ok(())
        },
    )?;
    save_atomic(&model.params, &outdir.join("final.bin"))?;
    println!("trained {steps} steps in {:.0} s", t0.elapsed().as_secs_f64());

    let summary = evaluate(&model, &run)?;
    println!(
        "held-out ({} items): mean SI-SNRi {:+.2} dB, {:.0}% above 0 dB",
        summary.items.len(),
        summary.mean_si_snr_i,
        100.0 * summary.fraction_above(0.0)
    );
    Ok(())
}
