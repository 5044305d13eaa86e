//! Acceptance suite: one test per release criterion, each printing a single
//! pass/fail line. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines; any failure also fails the harness.

use papez::audit::{fit_scaling_exponent, predict_macs, CostConfig, CostModel, OpCounter};
use papez::config::RunConfig;
use papez::datagen::{synth_mixture, MixSpec};
use papez::gradcheck::{check_all_primitives, DEFAULT_SEEDS, PRIMITIVE_TOL};
use papez::halting::{HaltingState, HaltingVariant};
use papez::layer::{AwmLayer, LayerConfig};
use papez::metrics::{permutations, si_snr, si_snr_i, upit_loss};
use papez::model::{PapezConfig, PapezModel};
use papez::params::{save_atomic, ParamSet};
use papez::tensor::Tensor;
use papez::train::{evaluate, run_training};
use papez::wav::{read_wav, write_wav, Waveform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, desc: &str, outcome: Result<(), String>) {
    match outcome {
        Ok(()) => println!("criterion {n}: PASS - {desc}"),
        Err(e) => {
            println!("criterion {n}: FAIL - {desc}: {e}");
            panic!("criterion {n} failed: {e}");
        }
    }
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------------------
// 1. Weight normalization: over random halting traces at several thresholds,
//    every token's applied weights sum to exactly 1 (within f32 round-off),
//    including tokens force-finalized at the iteration cap.
// ---------------------------------------------------------------------------
#[test]
fn criterion_01_weight_normalization() {
    let run = || -> Result<(), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let hidden = 3;
        let mut traces = 0usize;
        for &p_th in &[0.5, 0.9, 0.99] {
            for _ in 0..334 {
                let tokens = rng.gen_range(1..=8);
                let max_steps = rng.gen_range(1..=12);
                let h0: Vec<f32> = (0..tokens * hidden)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                let h0 = Tensor::from_vec(vec![tokens, hidden], h0).map_err(|e| e.to_string())?;
                let mut state = HaltingState::new(h0, p_th, max_steps, HaltingVariant::PaperLiteral)
                    .map_err(|e| e.to_string())?;
                while state.needs_step() {
                    let h = state.h.clone();
                    let p: Vec<f32> = (0..tokens).map(|_| rng.gen_range(0.001..=1.0)).collect();
                    let p = Tensor::from_vec(vec![tokens], p).map_err(|e| e.to_string())?;
                    state.step_update(h, p).map_err(|e| e.to_string())?;
                }
                state.finalize_remainder().map_err(|e| e.to_string())?;
                for t in 0..tokens {
                    let sum = state.weight_sum(t);
                    ensure(
                        (sum - 1.0).abs() <= 1e-6,
                        format!("p_th {p_th}: token {t} weight sum {sum}"),
                    )?;
                }
                traces += 1;
            }
        }
        ensure(traces >= 1000, format!("only {traces} traces"))
    };
    report(1, "halting weights sum to 1 over 1002 random traces", run());
}

// ---------------------------------------------------------------------------
// 2. Hand-checked halting traces: constant estimator output 0.4 with
//    threshold 0.9 yields weights (0.4, 0.4, 0.4, -0.2) with 3 transformer
//    evaluations; constant 0.5 yields (0.5, 0.5, 0.0) with 2 evaluations.
// ---------------------------------------------------------------------------
#[test]
fn criterion_02_hand_traces() {
    let trace = |p_const: f64, variant: HaltingVariant| -> Result<(Vec<f64>, usize), String> {
        let h0 = Tensor::<f64>::from_vec(vec![1, 2], vec![1.0, -1.0]).map_err(|e| e.to_string())?;
        let mut state = HaltingState::new(h0, 0.9, 4, variant).map_err(|e| e.to_string())?;
        while state.needs_step() {
            let h = state.h.clone();
            let p = Tensor::full(vec![1], p_const);
            state.step_update(h, p).map_err(|e| e.to_string())?;
        }
        state.finalize_remainder().map_err(|e| e.to_string())?;
        Ok((state.weight_log[0].clone(), state.ft_evals[0]))
    };
    let run = || -> Result<(), String> {
        let (w, evals) = trace(0.4, HaltingVariant::PaperLiteral)?;
        let want = [0.4, 0.4, 0.4, 1.0 - 1.2000000000000002];
        ensure(
            w.len() == 4 && w.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12),
            format!("p=0.4 weights {w:?}"),
        )?;
        ensure(evals == 3, format!("p=0.4 evals {evals}"))?;

        let (w, evals) = trace(0.5, HaltingVariant::PaperLiteral)?;
        ensure(
            w.len() == 3 && (w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12 && w[2].abs() < 1e-12,
            format!("p=0.5 weights {w:?}"),
        )?;
        ensure(evals == 2, format!("p=0.5 evals {evals}"))?;

        // clamped variant folds the correction into the crossing step
        let (w, evals) = trace(0.4, HaltingVariant::Clamped)?;
        ensure(
            w.len() == 3
                && (w[0] - 0.4).abs() < 1e-12
                && (w[1] - 0.4).abs() < 1e-12
                && (w[2] - 0.19999999999999996).abs() < 1e-12,
            format!("clamped p=0.4 weights {w:?}"),
        )?;
        ensure(evals == 3, format!("clamped p=0.4 evals {evals}"))
    };
    report(2, "hand-checked halting traces reproduced exactly", run());
}

// ---------------------------------------------------------------------------
// 3. Gradient correctness: every tensor primitive matches central finite
//    differences within 1e-4, and sampled coordinates of the full model's
//    training loss gradient match within 1e-3 in 64-bit.
// ---------------------------------------------------------------------------
#[test]
fn criterion_03_gradients() {
    let run = || -> Result<(), String> {
        let results = check_all_primitives(DEFAULT_SEEDS).map_err(|e| e.to_string())?;
        for r in &results {
            ensure(
                r.pass,
                format!("primitive {} rel err {:.2e} > {PRIMITIVE_TOL}", r.name, r.max_rel_err),
            )?;
        }

        let model = PapezModel::<f64>::init(PapezConfig::tiny(), 3).map_err(|e| e.to_string())?;
        let spec = MixSpec::from_seed(11, 8000, 0.064);
        let (mix, refs) = synth_mixture(&spec).map_err(|e| e.to_string())?;
        let loss_of = |m: &PapezModel<f64>| -> Result<f64, String> {
            let mut c = OpCounter::new();
            Ok(m.training_loss(&mix, &refs, &mut c)
                .map_err(|e| e.to_string())?
                .0
                .item())
        };
        let mut counter = OpCounter::new();
        let (loss, _, _) = model
            .training_loss(&mix, &refs, &mut counter)
            .map_err(|e| e.to_string())?;
        let grads = model
            .params
            .grads(&loss.backward().map_err(|e| e.to_string())?);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..20 {
            let pi = rng.gen_range(0..grads.len());
            let (name, g) = &grads[pi];
            let ci = rng.gen_range(0..g.len());
            let base = model.params.get(name).unwrap().data().to_vec();
            let mut probe =
                PapezModel::<f64>::init(PapezConfig::tiny(), 3).map_err(|e| e.to_string())?;
            let mut plus = base.clone();
            plus[ci] += h;
            probe.params.set_data(name, plus).map_err(|e| e.to_string())?;
            let lp = loss_of(&probe)?;
            let mut minus = base.clone();
            minus[ci] -= h;
            probe.params.set_data(name, minus).map_err(|e| e.to_string())?;
            let lm = loss_of(&probe)?;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - g[ci]).abs() / fd.abs().max(g[ci].abs()).max(1e-6);
            ensure(
                rel < 1e-3,
                format!("{name}[{ci}]: analytic {:+.6e} fd {fd:+.6e} rel {rel:.2e}", g[ci]),
            )?;
        }
        Ok(())
    };
    report(3, "primitive and end-to-end finite-difference checks", run());
}

fn measure_attention(n_tokens: usize, cfg: &LayerConfig) -> Result<OpCounter, String> {
    let mut params = ParamSet::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let layer = AwmLayer::init(&mut params, "bench", *cfg, &mut rng).map_err(|e| e.to_string())?;
    let data: Vec<f32> = (0..n_tokens * cfg.hidden)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let tokens = Tensor::from_vec(vec![n_tokens, cfg.hidden], data).map_err(|e| e.to_string())?;
    let mut state = HaltingState::new(tokens, 1e9, cfg.max_steps, HaltingVariant::PaperLiteral)
        .map_err(|e| e.to_string())?;
    let mut memory = layer.initial_memory(&params).map_err(|e| e.to_string())?;
    let mut counter = OpCounter::new();
    for _ in 0..cfg.max_steps {
        memory = layer
            .forward(&params, &mut state, &memory, &mut counter)
            .map_err(|e| e.to_string())?;
    }
    Ok(counter)
}

// ---------------------------------------------------------------------------
// 4. Compute accounting: with pruning disabled the measured attention MAC
//    count equals the closed form (N/K)(K+M)^2 H^2 exactly, and fitted
//    scaling exponents separate the memory-token design (~N^1) from a
//    dual-path design with sqrt-sized chunks (~N^1.5).
// ---------------------------------------------------------------------------
#[test]
fn criterion_04_complexity() {
    let run = || -> Result<(), String> {
        // exact equality at full model width, token count divisible by chunk
        let full = LayerConfig {
            hidden: 256,
            heads: 8,
            chunk: 150,
            memory_slots: 16,
            ffn_hidden: 64,
            max_steps: 1,
        };
        let full_cost = CostConfig {
            chunk: 150,
            memory_slots: 16,
            hidden: 256,
            s_ratio: 1.0,
        };
        let got = measure_attention(1500, &full)?.attention_macs;
        let want = predict_macs(CostModel::Awm, 1500, &full_cost).map_err(|e| e.to_string())?;
        ensure(
            got == want && want == 10 * 166 * 166 * 256 * 256,
            format!("measured {got} vs closed form {want}"),
        )?;

        // scaling sweep at reduced width
        let bench = LayerConfig {
            hidden: 64,
            heads: 4,
            ..full
        };
        let bench_cost = CostConfig {
            hidden: 64,
            ..full_cost
        };
        let mut measured = Vec::new();
        let mut dual = Vec::new();
        for i in 0..5 {
            let n = 1000usize << i;
            measured.push((n as f64, measure_attention(n, &bench)?.attention_macs as f64));
            let dp = CostConfig {
                chunk: (n as f64).sqrt().round() as usize,
                ..bench_cost
            };
            dual.push((
                n as f64,
                predict_macs(CostModel::DualPathFull, n, &dp).map_err(|e| e.to_string())? as f64,
            ));
        }
        let awm_exp = fit_scaling_exponent(&measured).map_err(|e| e.to_string())?;
        let dp_exp = fit_scaling_exponent(&dual).map_err(|e| e.to_string())?;
        ensure(
            (0.95..=1.1).contains(&awm_exp),
            format!("memory-token exponent {awm_exp:.3} outside [0.95, 1.1]"),
        )?;
        ensure(
            (1.45..=1.55).contains(&dp_exp),
            format!("dual-path exponent {dp_exp:.3} outside [1.45, 1.55]"),
        )
    };
    report(4, "measured MACs match closed form; scaling exponents separate", run());
}

// ---------------------------------------------------------------------------
// 5. Feed-forward token accounting: each iteration processes exactly the
//    active tokens plus the memory slots. With 1500 tokens and 16 slots and
//    no pruning that is 1516 rows, 50.5% of a dual-path design's 2T rows.
// ---------------------------------------------------------------------------
#[test]
fn criterion_05_ffn_accounting() {
    let run = || -> Result<(), String> {
        let cfg = LayerConfig {
            hidden: 64,
            heads: 4,
            chunk: 150,
            memory_slots: 16,
            ffn_hidden: 64,
            max_steps: 2,
        };
        let counter = measure_attention(1500, &cfg)?;
        ensure(
            counter.ffn_tokens_per_iter == vec![1516, 1516],
            format!("no-pruning FFN rows per iteration {:?}", counter.ffn_tokens_per_iter),
        )?;
        let ratio: f64 = 1516.0 / (2.0 * 1500.0);
        ensure(
            (ratio - 0.50533333333333333).abs() < 1e-15,
            format!("ratio {ratio}"),
        )?;

        // with pruning on, the per-iteration row count must track the live
        // token count recorded before each transformer call
        let mut params = ParamSet::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let prune_cfg = LayerConfig { max_steps: 4, ..cfg };
        let layer =
            AwmLayer::init(&mut params, "bench", prune_cfg, &mut rng).map_err(|e| e.to_string())?;
        let data: Vec<f32> = (0..600 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tokens = Tensor::from_vec(vec![600, 64], data).map_err(|e| e.to_string())?;
        let mut state = HaltingState::new(tokens, 0.9, 4, HaltingVariant::PaperLiteral)
            .map_err(|e| e.to_string())?;
        let mut memory = layer.initial_memory(&params).map_err(|e| e.to_string())?;
        let mut counter = OpCounter::new();
        let mut expected = Vec::new();
        while state.needs_step() && !state.computing_indices().is_empty() {
            expected.push(state.computing_indices().len() as u64 + 16);
            memory = layer
                .forward(&params, &mut state, &memory, &mut counter)
                .map_err(|e| e.to_string())?;
        }
        ensure(
            counter.ffn_tokens_per_iter == expected,
            format!(
                "pruned FFN rows {:?} vs active+memory {:?}",
                counter.ffn_tokens_per_iter, expected
            ),
        )
    };
    report(5, "FFN processes active tokens + memory slots each iteration", run());
}

// ---------------------------------------------------------------------------
// 6. Weight sharing across iterations: raising the iteration cap from 4 to
//    16 adds only the per-step normalization affine pairs — exactly
//    12 * 4 * hidden extra parameters at the full width of 256.
// ---------------------------------------------------------------------------
#[test]
fn criterion_06_weight_sharing() {
    let run = || -> Result<(), String> {
        let mut base = PapezConfig::default();
        base.max_steps = 4;
        let mut deep = base;
        deep.max_steps = 16;
        let shallow = PapezModel::<f32>::init(base, 1).map_err(|e| e.to_string())?;
        let deeper = PapezModel::<f32>::init(deep, 1).map_err(|e| e.to_string())?;
        let diff = deeper.params.numel() - shallow.params.numel();
        ensure(
            diff == 12 * 4 * 256,
            format!("parameter count difference {diff}, want {}", 12 * 4 * 256),
        )
    };
    report(6, "deeper iteration caps add only normalization affines", run());
}

// ---------------------------------------------------------------------------
// 7. Learnability: the pinned toy recipe (2000 steps, 0.3 s mixtures)
//    reaches > 3 dB mean SI-SNR improvement on 100 held-out mixtures, with
//    > 0 dB on at least 95% of them.
// ---------------------------------------------------------------------------
#[test]
fn criterion_07_toy_training() {
    let run = || -> Result<(), String> {
        let run_cfg = RunConfig::toy();
        let mut model =
            PapezModel::<f32>::init(run_cfg.model, run_cfg.seed).map_err(|e| e.to_string())?;
        run_training(&mut model, &run_cfg, 0, |_| Ok(()), |_, _, _| Ok(()))
            .map_err(|e| e.to_string())?;
        let summary = evaluate(&model, &run_cfg).map_err(|e| e.to_string())?;
        let frac = summary.fraction_above(0.0);
        println!(
            "  toy run: mean SI-SNRi {:.2} dB over {} items, {:.0}% above 0 dB",
            summary.mean_si_snr_i,
            summary.items.len(),
            100.0 * frac
        );
        ensure(
            summary.mean_si_snr_i > 3.0,
            format!("mean SI-SNRi {:.2} dB <= 3 dB", summary.mean_si_snr_i),
        )?;
        ensure(frac >= 0.95, format!("only {:.0}% of items above 0 dB", 100.0 * frac))
    };
    report(7, "toy recipe learns separation on held-out mixtures", run());
}

// ---------------------------------------------------------------------------
// 8. Metric invariances: SI-SNR is invariant to estimate scaling, the
//    permutation-invariant loss is invariant to estimate ordering (2 and 3
//    sources, brute force), and the mixture scores exactly 0 improvement.
// ---------------------------------------------------------------------------
#[test]
fn criterion_08_metric_invariances() {
    let run = || -> Result<(), String> {
        let spec = MixSpec::from_seed(23, 8000, 0.25);
        let (mix, [s1, s2]) = synth_mixture(&spec).map_err(|e| e.to_string())?;
        let noisy: Vec<f64> = s1
            .samples
            .iter()
            .zip(&s2.samples)
            .map(|(a, b)| a + 0.2 * b)
            .collect();
        let base = si_snr(&noisy, &s1.samples).map_err(|e| e.to_string())?;
        for alpha in [0.1, 1.0, 10.0] {
            let scaled: Vec<f64> = noisy.iter().map(|v| alpha * v).collect();
            let got = si_snr(&scaled, &s1.samples).map_err(|e| e.to_string())?;
            ensure(
                (got - base).abs() <= 1e-6,
                format!("scale {alpha}: {got} vs {base}"),
            )?;
        }

        let imp = si_snr_i(&mix.samples, &s1.samples, &mix.samples).map_err(|e| e.to_string())?;
        ensure(imp == 0.0, format!("mixture improvement {imp} != 0"))?;

        // three synthetic sources; all 6 estimate orderings give one loss
        let t: Vec<f64> = (0..2000).map(|i| i as f64 / 8000.0).collect();
        let srcs: Vec<Vec<f64>> = [440.0, 660.0, 973.0]
            .iter()
            .map(|f| t.iter().map(|&x| (2.0 * std::f64::consts::PI * f * x).sin()).collect())
            .collect();
        let ests: Vec<Vec<f64>> = srcs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.iter()
                    .zip(&srcs[(i + 1) % 3])
                    .map(|(a, b)| a + 0.3 * b)
                    .collect()
            })
            .collect();
        let reference = upit_loss(&ests, &srcs).map_err(|e| e.to_string())?.loss;
        for perm in permutations(3) {
            let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| ests[i].clone()).collect();
            let got = upit_loss(&shuffled, &srcs).map_err(|e| e.to_string())?.loss;
            ensure(
                got == reference,
                format!("ordering {perm:?}: loss {got} vs {reference}"),
            )?;
        }
        Ok(())
    };
    report(8, "metric scale/permutation invariances hold", run());
}

// ---------------------------------------------------------------------------
// 9. Pruning behaves: on a briefly trained model, raising the halting
//    threshold never decreases attention compute, and every survival curve
//    is non-increasing step over step.
// ---------------------------------------------------------------------------
#[test]
fn criterion_09_pruning_monotonicity() {
    let run = || -> Result<(), String> {
        let mut run_cfg = RunConfig::toy();
        run_cfg.steps = 200;
        let mut model = PapezModel::<f32>::init(run_cfg.model, 1).map_err(|e| e.to_string())?;
        run_training(&mut model, &run_cfg, 0, |_| Ok(()), |_, _, _| Ok(()))
            .map_err(|e| e.to_string())?;

        let spec = MixSpec::from_seed(4242, 8000, 0.3);
        let (mix, _) = synth_mixture(&spec).map_err(|e| e.to_string())?;
        let mut last_macs = 0u128;
        for &p_th in &[0.5, 0.7, 0.9, 0.99] {
            model.config.p_th = p_th;
            let mut counter = OpCounter::new();
            let (_, state) = model
                .forward(&mix.samples, &mut counter)
                .map_err(|e| e.to_string())?;
            ensure(
                counter.attention_macs >= last_macs,
                format!(
                    "p_th {p_th}: {} MACs < previous {last_macs}",
                    counter.attention_macs
                ),
            )?;
            last_macs = counter.attention_macs;
            let curve = state.survival_curve();
            for w in curve.windows(2) {
                ensure(
                    w[1] <= w[0] + 1e-12,
                    format!("p_th {p_th}: survival rose {w:?} in {curve:?}"),
                )?;
            }
        }
        Ok(())
    };
    report(9, "attention cost grows with threshold; survival never rises", run());
}

// ---------------------------------------------------------------------------
// 10. Reproducibility and I/O: 16-bit WAV round trip within 1 LSB,
//     bit-identical checkpoint round trip, and two same-seed training runs
//     producing identical losses for the first 11 steps.
// ---------------------------------------------------------------------------
#[test]
fn criterion_10_reproducibility() {
    let run = || -> Result<(), String> {
        let dir = std::env::temp_dir().join("papez_acceptance");
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;

        // WAV round trip
        let spec = MixSpec::from_seed(8, 8000, 0.2);
        let (mix, _) = synth_mixture(&spec).map_err(|e| e.to_string())?;
        let wav_path = dir.join("roundtrip.wav");
        write_wav(&wav_path, &mix).map_err(|e| e.to_string())?;
        let back = read_wav(&wav_path).map_err(|e| e.to_string())?;
        ensure(back.sample_rate == mix.sample_rate, "sample rate changed".to_string())?;
        ensure(back.len() == mix.len(), "length changed".to_string())?;
        let lsb = 1.0 / 32768.0;
        for (a, b) in mix.samples.iter().zip(&back.samples) {
            ensure(
                (a - b).abs() <= lsb,
                format!("WAV sample drift {} > 1 LSB", (a - b).abs()),
            )?;
        }

        // checkpoint round trip
        let model = PapezModel::<f32>::init(PapezConfig::tiny(), 99).map_err(|e| e.to_string())?;
        let ckpt = dir.join("model.bin");
        save_atomic(&model.params, &ckpt).map_err(|e| e.to_string())?;
        let mut restored =
            PapezModel::<f32>::init(PapezConfig::tiny(), 12345).map_err(|e| e.to_string())?;
        restored.params.load(&ckpt).map_err(|e| e.to_string())?;
        for (a, b) in model.params.iter().zip(restored.params.iter()) {
            ensure(a.name == b.name, format!("name mismatch {} vs {}", a.name, b.name))?;
            ensure(
                a.tensor.data() == b.tensor.data(),
                format!("weights for {} not bit-identical", a.name),
            )?;
        }
        let wave = Waveform::new(mix.samples[..1600].to_vec(), 8000).map_err(|e| e.to_string())?;
        let (ea, _) = model.separate(&wave).map_err(|e| e.to_string())?;
        let (eb, _) = restored.separate(&wave).map_err(|e| e.to_string())?;
        for (a, b) in ea.iter().zip(&eb) {
            ensure(a.samples == b.samples, "outputs differ after reload".to_string())?;
        }

        // same-seed determinism over the first 11 optimizer steps
        let losses = || -> Result<Vec<f64>, String> {
            let mut cfg = RunConfig::default();
            cfg.model = PapezConfig::tiny();
            cfg.steps = 11;
            cfg.steps_per_epoch = 100;
            cfg.duration_s = 0.06;
            let mut m = PapezModel::<f32>::init(cfg.model, 7).map_err(|e| e.to_string())?;
            let mut out = Vec::new();
            run_training(
                &mut m,
                &cfg,
                0,
                |rec| {
                    out.push(rec.loss);
                    Ok(())
                },
                |_, _, _| Ok(()),
            )
            .map_err(|e| e.to_string())?;
            Ok(out)
        };
        let a = losses()?;
        let b = losses()?;
        ensure(a.len() == 11, format!("{} steps recorded", a.len()))?;
        ensure(a == b, format!("same-seed losses diverge: {a:?} vs {b:?}"))
    };
    report(10, "WAV/checkpoint round trips and same-seed determinism", run());
}
