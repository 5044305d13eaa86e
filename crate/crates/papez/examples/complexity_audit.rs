//! Compare measured attention MACs against the closed-form cost models and
//! fit scaling exponents: the memory-token layer scales ~linearly in the
//! token count at fixed chunk size, while a dual-path design with
//! chunk = sqrt(tokens) scales as tokens^1.5.
//!
//! Usage: cargo run --release --example complexity_audit

use papez::audit::{
    fit_scaling_exponent, format_cost_table, predict_macs, CostConfig, CostModel, OpCounter,
};
use papez::halting::{HaltingState, HaltingVariant};
use papez::layer::{AwmLayer, LayerConfig};
use papez::params::ParamSet;
use papez::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn measure(n_tokens: usize, cfg: &LayerConfig) -> papez::Result<u128> {
    let mut params = ParamSet::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let layer = AwmLayer::init(&mut params, "bench", *cfg, &mut rng)?;
    let data: Vec<f32> = (0..n_tokens * cfg.hidden)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let tokens = Tensor::from_vec(vec![n_tokens, cfg.hidden], data)?;
    let mut state = HaltingState::new(tokens, 1e9, 1, HaltingVariant::PaperLiteral)?;
    let memory = layer.initial_memory(&params)?;
    let mut counter = OpCounter::new();
    layer.forward(&params, &mut state, &memory, &mut counter)?;
    Ok(counter.attention_macs)
}

fn main() -> papez::Result<()> {
    let full = CostConfig {
        chunk: 150,
        memory_slots: 16,
        hidden: 256,
        s_ratio: 1.0,
    };
    println!("{}", format_cost_table(1500, &full)?);

    // the exact-equality case: token count divisible by the chunk size
    let exact = predict_macs(CostModel::Awm, 1500, &full)?;
    println!("closed form at 1500 tokens: {exact} MACs per iteration\n");

    let bench = LayerConfig {
        hidden: 64,
        heads: 4,
        chunk: 150,
        memory_slots: 16,
        ffn_hidden: 64,
        max_steps: 1,
    };
    let bench_cost = CostConfig {
        chunk: 150,
        memory_slots: 16,
        hidden: 64,
        s_ratio: 1.0,
    };
    let mut measured = Vec::new();
    let mut dual = Vec::new();
    println!("tokens     measured MACs    predicted MACs");
    for i in 0..5 {
        let n = 1000usize << i;
        let got = measure(n, &bench)?;
        let want = predict_macs(CostModel::Awm, n, &bench_cost)?;
        println!("{n:>6}  {got:>15}  {want:>15}");
        measured.push((n as f64, got as f64));
        let dp = CostConfig {
            chunk: (n as f64).sqrt().round() as usize,
            ..bench_cost
        };
        dual.push((n as f64, predict_macs(CostModel::DualPathFull, n, &dp)? as f64));
    }
    println!(
        "\nfitted exponent, fixed chunk (memory tokens):  {:.3}",
        fit_scaling_exponent(&measured)?
    );
    println!(
        "fitted exponent, dual-path with sqrt chunks:   {:.3}",
        fit_scaling_exponent(&dual)?
    );
    Ok(())
}
