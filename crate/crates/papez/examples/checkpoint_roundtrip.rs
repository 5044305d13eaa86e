//! Checkpoint format demonstration: save a model, reload it into a fresh
//! instance, and verify bit-identical weights and outputs.
//!
//! Usage: cargo run --example checkpoint_roundtrip

use papez::datagen::{synth_mixture, MixSpec};
use papez::model::{PapezConfig, PapezModel};
use papez::params::save_atomic;

fn main() -> papez::Result<()> {
    let dir = std::path::PathBuf::from("target/ckpt_demo");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.bin");

    let model = PapezModel::<f32>::init(PapezConfig::tiny(), 99)?;
    save_atomic(&model.params, &path)?;
    println!(
        "saved {} parameters ({} values) to {}",
        model.params.len(),
        model.params.numel(),
        path.display()
    );

    // a differently-seeded model, overwritten from disk
    let mut restored = PapezModel::<f32>::init(PapezConfig::tiny(), 12345)?;
    restored.params.load(&path)?;
    for (a, b) in model.params.iter().zip(restored.params.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.tensor.data(), b.tensor.data(), "weights must round-trip bit-exactly");
    }
    println!("all weights round-tripped bit-exactly");

    let spec = MixSpec::from_seed(5, 8000, 0.1);
    let (mix, _) = synth_mixture(&spec)?;
    let (a, _) = model.separate(&mix)?;
    let (b, _) = restored.separate(&mix)?;
    assert_eq!(a[0].samples, b[0].samples);
    assert_eq!(a[1].samples, b[1].samples);
    println!("separation outputs identical before and after reload");
    Ok(())
}
