//! Finite-difference validation of the autodiff engine: every tensor
//! primitive, plus sampled coordinates of the full model's training loss.
//!
//! Usage: cargo run --release --example gradient_check

use papez::audit::OpCounter;
use papez::datagen::{synth_mixture, MixSpec};
use papez::gradcheck::{check_all_primitives, DEFAULT_SEEDS, PRIMITIVE_TOL};
use papez::model::{PapezConfig, PapezModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> papez::Result<()> {
    println!("primitive sweep ({} random restarts each):", DEFAULT_SEEDS);
    let results = check_all_primitives(DEFAULT_SEEDS)?;
    for r in &results {
        println!(
            "  {:28} {:9.2e}  {}",
            r.name,
            r.max_rel_err,
            if r.pass { "ok" } else { "FAIL" }
        );
    }
    assert!(results.iter().all(|r| r.pass), "primitive outside {PRIMITIVE_TOL}");

    // end-to-end: perturb sampled weights of a tiny 64-bit model and compare
    // the loss slope against the analytic gradient
    println!("\nend-to-end spot check (64-bit, tiny config):");
    let model = PapezModel::<f64>::init(PapezConfig::tiny(), 3)?;
    let spec = MixSpec::from_seed(11, 8000, 0.064);
    let (mix, refs) = synth_mixture(&spec)?;
    let loss_of = |m: &PapezModel<f64>| -> papez::Result<f64> {
        let mut c = OpCounter::new();
        Ok(m.training_loss(&mix, &refs, &mut c)?.0.item())
    };
    let mut counter = OpCounter::new();
    let (loss, _, _) = model.training_loss(&mix, &refs, &mut counter)?;
    let grads = model.params.grads(&loss.backward()?);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let pi = rng.gen_range(0..grads.len());
        let (name, g) = &grads[pi];
        let ci = rng.gen_range(0..g.len());
        let base = model.params.get(name).unwrap().data().to_vec();
        let mut probe = PapezModel::<f64>::init(PapezConfig::tiny(), 3)?;
        let mut plus = base.clone();
        plus[ci] += h;
        probe.params.set_data(name, plus)?;
        let lp = loss_of(&probe)?;
        let mut minus = base.clone();
        minus[ci] -= h;
        probe.params.set_data(name, minus)?;
        let lm = loss_of(&probe)?;
        let fd = (lp - lm) / (2.0 * h);
        let rel = (fd - g[ci]).abs() / fd.abs().max(g[ci].abs()).max(1e-6);
        worst = worst.max(rel);
        println!("  {name}[{ci}]: analytic {:+.6e} fd {fd:+.6e} rel {rel:.2e}", g[ci]);
    }
    println!("\nworst relative error over 20 samples: {worst:.2e}");
    assert!(worst < 1e-3);
    Ok(())
}
