//! Command-line entry point: train, separate, bench, gradcheck, synth.
//!
//! Exit codes: 0 success, 2 configuration error, 3 input-format error,
//! 4 numerical failure. Every subcommand is deterministic given the config
//! and seed.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audit::{
    fit_scaling_exponent, format_cost_table, halting_report, predict_macs, write_halting_csv,
    CostConfig, CostModel, OpCounter,
};
use crate::config::{Overrides, Precision, RunConfig};
use crate::datagen::DatasetSpec;
use crate::error::{Error, Result};
use crate::gradcheck::{check_all_primitives, DEFAULT_SEEDS, PRIMITIVE_TOL};
use crate::halting::{write_survival_csv, HaltingState, HaltingVariant};
use crate::layer::{AwmLayer, LayerConfig};
use crate::model::PapezModel;
use crate::params::{save_atomic, ParamSet};
use crate::tensor::{Scalar, Tensor};
use crate::train::{evaluate, run_training};
use crate::wav::{read_wav, write_wav};

#[derive(Parser, Debug)]
#[command(name = "papez", version, about = "Lightweight single-channel speech separation")]
pub struct Cli {
    /// Flat key=value config file ('#' comments, unknown keys rejected).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed override (a seed is mandatory, here or in the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Numeric precision: f32 or f64.
    #[arg(long, global = true)]
    pub precision: Option<String>,
    /// Halting variant: paper or clamped.
    #[arg(long, global = true)]
    pub halting: Option<String>,
    /// Halting threshold override.
    #[arg(long = "p-th", global = true)]
    pub p_th: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train on the synthetic mixture stream; checkpoint every epoch.
    Train {
        #[arg(long)]
        outdir: PathBuf,
        /// Checkpoint to resume from (its .meta sidecar carries the step).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Separate a mono WAV into one file per speaker.
    Separate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        outdir: PathBuf,
        /// Also write survival-curve and halting-report CSVs.
        #[arg(long)]
        emit_trace: bool,
    },
    /// Attention-cost sweeps with measured counters and an exponent fit.
    Bench {
        /// Sweep axis: tokens, chunk, or memory.
        #[arg(long, default_value = "tokens")]
        sweep: String,
        /// Comma-separated sweep points (defaults depend on the axis).
        #[arg(long)]
        points: Option<String>,
        #[arg(long)]
        outdir: Option<PathBuf>,
    },
    /// Finite-difference check of every tensor primitive.
    Gradcheck,
    /// Write synthetic mixtures and sources as WAV files.
    Synth {
        #[arg(long)]
        outdir: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Shape(_) => 2,
        Error::Format(_) | Error::Checkpoint(_) | Error::Io(_) => 3,
        Error::NonFinite(_) => 4,
    }
}

fn overrides_from(cli: &Cli) -> Result<Overrides> {
    Ok(Overrides {
        seed: cli.seed,
        precision: cli.precision.as_deref().map(str::parse).transpose()?,
        halting: cli.halting.as_deref().map(str::parse).transpose()?,
        p_th: cli.p_th,
    })
}

pub fn run(cli: Cli) -> Result<()> {
    let overrides = overrides_from(&cli)?;
    // only seed-dependent subcommands demand an explicit seed
    let require_seed = matches!(cli.command, Command::Train { .. } | Command::Synth { .. });
    let run_cfg = match &cli.config {
        Some(path) => RunConfig::load_opt(path, &overrides, require_seed)?,
        None => RunConfig::parse_opt("", &overrides, require_seed)?,
    };
    match cli.command {
        Command::Train { outdir, resume } => match run_cfg.precision {
            Precision::F32 => cmd_train::<f32>(&run_cfg, &outdir, resume.as_deref()),
            Precision::F64 => cmd_train::<f64>(&run_cfg, &outdir, resume.as_deref()),
        },
        Command::Separate {
            model,
            input,
            outdir,
            emit_trace,
        } => match run_cfg.precision {
            Precision::F32 => cmd_separate::<f32>(&run_cfg, &model, &input, &outdir, emit_trace),
            Precision::F64 => cmd_separate::<f64>(&run_cfg, &model, &input, &outdir, emit_trace),
        },
        Command::Bench {
            sweep,
            points,
            outdir,
        } => cmd_bench(&run_cfg, &sweep, points.as_deref(), outdir.as_deref()),
        Command::Gradcheck => cmd_gradcheck(),
        Command::Synth { outdir, count } => cmd_synth(&run_cfg, &outdir, count),
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn read_meta_step(meta_path: &Path) -> Result<usize> {
    let text = std::fs::read_to_string(meta_path)?;
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            if k.trim() == "step" {
                return v.trim().parse().map_err(|_| {
                    Error::Checkpoint(format!("bad step value in {}", meta_path.display()))
                });
            }
        }
    }
    Err(Error::Checkpoint(format!(
        "no step entry in {}",
        meta_path.display()
    )))
}

fn write_checkpoint<T: Scalar>(params: &ParamSet<T>, path: &Path, step: usize) -> Result<()> {
    save_atomic(params, path)?;
    std::fs::write(path.with_extension("meta"), format!("step = {step}\n"))?;
    Ok(())
}

fn cmd_train<T: Scalar>(run: &RunConfig, outdir: &Path, resume: Option<&Path>) -> Result<()> {
    std::fs::create_dir_all(outdir)?;
    std::fs::write(outdir.join("config.txt"), run.to_text())?;
    let mut model = PapezModel::<T>::init(run.model, run.seed)?;
    let mut start_step = 0usize;
    if let Some(ckpt) = resume {
        model.params.load(ckpt)?;
        start_step = read_meta_step(&ckpt.with_extension("meta"))?;
        println!("resumed from {} at step {start_step}", ckpt.display());
    }
    let log_path = outdir.join("train_log.csv");
    let mut log = if start_step > 0 && log_path.exists() {
        std::fs::OpenOptions::new().append(true).open(&log_path)?
    } else {
        let mut f = std::fs::File::create(&log_path)?;
        writeln!(f, "step,loss,grad_norm,lr,mean_halt_depth")?;
        f
    };
    let latest = outdir.join("latest.bin");
    run_training(
        &mut model,
        run,
        start_step,
        |r| {
            writeln!(
                log,
                "{},{:.6},{:.6},{:.8},{:.4}",
                r.step, r.loss, r.grad_norm, r.lr, r.mean_halt_depth
            )?;
            if r.step % 50 == 0 {
                println!(
                    "step {:>6}  loss {:+9.4}  |g| {:8.4}  lr {:.2e}  depth {:.2}",
                    r.step, r.loss, r.grad_norm, r.lr, r.mean_halt_depth
                );
            }
            Ok(())
        },
        |m, epoch, next_step| {
            let path = outdir.join(format!("ckpt_epoch_{epoch}.bin"));
            write_checkpoint(&m.params, &path, next_step)?;
            write_checkpoint(&m.params, &latest, next_step)?;
            println!("epoch {epoch} done; checkpoint {}", path.display());
            Ok(())
        },
    )?;
    write_checkpoint(&model.params, &latest, run.steps)?;
    if run.eval_items > 0 {
        let summary = evaluate(&model, run)?;
        println!(
            "held-out mean SI-SNRi {:.2} dB over {} items ({:.0}% above 0 dB)",
            summary.mean_si_snr_i,
            summary.items.len(),
            100.0 * summary.fraction_above(0.0)
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// separate
// ---------------------------------------------------------------------------

fn cmd_separate<T: Scalar>(
    run: &RunConfig,
    ckpt: &Path,
    input: &Path,
    outdir: &Path,
    emit_trace: bool,
) -> Result<()> {
    let wave = read_wav(input)?;
    let mut model = PapezModel::<T>::init(run.model, run.seed)?;
    model.params.load(ckpt)?;
    std::fs::create_dir_all(outdir)?;
    let (outs, state) = model.separate(&wave)?;
    for (i, w) in outs.iter().enumerate() {
        let path = outdir.join(format!("spk{}.wav", i + 1));
        write_wav(&path, w)?;
        println!("wrote {}", path.display());
    }
    let trace = model.halting_trace(&state);
    let summary = halting_report(&[trace])?;
    println!(
        "halting: mean depth {:.2} of {}, attention savings {:.1}%",
        summary.mean_depth,
        state.max_steps,
        100.0 * summary.mac_savings
    );
    if emit_trace {
        write_survival_csv(&outdir.join("survival.csv"), state.survival_curve())?;
        write_halting_csv(&outdir.join("halting_report.csv"), &summary)?;
        println!("wrote {}", outdir.join("survival.csv").display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

fn parse_points(text: Option<&str>, default: &[usize]) -> Result<Vec<usize>> {
    match text {
        None => Ok(default.to_vec()),
        Some(t) => t
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid sweep point `{p}`")))
            })
            .collect(),
    }
}

/// One attention-only iteration over `n_tokens` random tokens, counted.
fn measure_attention_macs(n_tokens: usize, cfg: &LayerConfig, seed: u64) -> Result<u128> {
    let mut params = ParamSet::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = AwmLayer::init(&mut params, "bench", *cfg, &mut rng)?;
    let data: Vec<f32> = (0..n_tokens * cfg.hidden)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let tokens = Tensor::from_vec(vec![n_tokens, cfg.hidden], data)?;
    // threshold out of reach: no pruning during the measured iteration
    let mut state = HaltingState::new(tokens, 1e9, cfg.max_steps, HaltingVariant::PaperLiteral)?;
    let memory = layer.initial_memory(&params)?;
    let mut counter = OpCounter::new();
    layer.forward(&params, &mut state, &memory, &mut counter)?;
    Ok(counter.attention_macs)
}

fn cmd_bench(
    run: &RunConfig,
    sweep: &str,
    points: Option<&str>,
    outdir: Option<&Path>,
) -> Result<()> {
    let cost = CostConfig {
        chunk: run.model.chunk,
        memory_slots: run.model.memory_slots,
        hidden: run.model.hidden,
        s_ratio: 1.0,
    };
    let mut csv = String::new();
    match sweep {
        "tokens" => {
            let pts = parse_points(points, &[1000, 2000, 4000, 8000, 16000])?;
            // measured at a narrow width so the sweep stays fast; the
            // scaling exponent is width-independent
            let bench_cfg = LayerConfig {
                hidden: 64,
                heads: 4,
                chunk: run.model.chunk,
                memory_slots: run.model.memory_slots,
                ffn_hidden: 64,
                max_steps: 1,
            };
            csv.push_str("n_tokens,measured_macs,predicted_macs\n");
            let mut measured_pts = Vec::new();
            let mut analytic_dual = Vec::new();
            println!("{}", format_cost_table(pts[0], &cost)?);
            for &n in &pts {
                let measured = measure_attention_macs(n, &bench_cfg, run.seed)?;
                let bench_cost = CostConfig {
                    chunk: bench_cfg.chunk,
                    memory_slots: bench_cfg.memory_slots,
                    hidden: bench_cfg.hidden,
                    s_ratio: 1.0,
                };
                let predicted = predict_macs(CostModel::Awm, n, &bench_cost)?;
                println!("tokens {n:>7}: measured {measured:>16} predicted {predicted:>16}");
                csv.push_str(&format!("{n},{measured},{predicted}\n"));
                measured_pts.push((n as f64, measured as f64));
                let dp_cfg = CostConfig {
                    chunk: (n as f64).sqrt().round() as usize,
                    ..cost
                };
                analytic_dual.push((
                    n as f64,
                    predict_macs(CostModel::DualPathFull, n, &dp_cfg)? as f64,
                ));
            }
            let exp = fit_scaling_exponent(&measured_pts)?;
            let dual_exp = fit_scaling_exponent(&analytic_dual)?;
            println!("fitted exponent (measured, fixed chunk): {exp:.4}");
            println!("fitted exponent (analytic dual-path, chunk = sqrt(tokens)): {dual_exp:.4}");
        }
        "chunk" => {
            let pts = parse_points(points, &[50, 75, 100, 150, 300, 600])?;
            csv.push_str("chunk,predicted_macs\n");
            for &k in &pts {
                let c = CostConfig { chunk: k, ..cost };
                let macs = predict_macs(CostModel::Awm, 6000, &c)?;
                println!("chunk {k:>5}: predicted {macs}");
                csv.push_str(&format!("{k},{macs}\n"));
            }
        }
        "memory" => {
            let pts = parse_points(points, &[1, 4, 16, 64, 256])?;
            csv.push_str("memory_slots,predicted_macs\n");
            for &m in &pts {
                let c = CostConfig {
                    memory_slots: m,
                    ..cost
                };
                let macs = predict_macs(CostModel::Awm, 6000, &c)?;
                println!("memory {m:>5}: predicted {macs}");
                csv.push_str(&format!("{m},{macs}\n"));
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown sweep axis `{other}` (expected tokens, chunk, or memory)"
            )));
        }
    }
    if let Some(dir) = outdir {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("bench_{sweep}.csv"));
        std::fs::write(&path, csv)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck / synth
// ---------------------------------------------------------------------------

fn cmd_gradcheck() -> Result<()> {
    let results = check_all_primitives(DEFAULT_SEEDS)?;
    let mut failures = 0;
    for r in &results {
        println!(
            "{:30} max rel err {:10.3e}  {}",
            r.name,
            r.max_rel_err,
            if r.pass { "ok" } else { "FAIL" }
        );
        if !r.pass {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(Error::NonFinite(format!(
            "{failures} primitives exceeded the {PRIMITIVE_TOL:.0e} gradient tolerance"
        )));
    }
    println!("all {} primitives within {PRIMITIVE_TOL:.0e}", results.len());
    Ok(())
}

fn cmd_synth(run: &RunConfig, outdir: &Path, count: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::Config("synth: count must be >= 1".into()));
    }
    std::fs::create_dir_all(outdir)?;
    let ds = DatasetSpec {
        base_seed: run.seed,
        count,
        sample_rate: run.sample_rate,
        duration_s: run.duration_s,
    };
    ds.write_manifest(&outdir.join("manifest.csv"))?;
    for (i, item) in ds.iter().enumerate() {
        let (mix, [s1, s2]) = item?;
        write_wav(&outdir.join(format!("mix_{i:04}.wav")), &mix)?;
        write_wav(&outdir.join(format!("s1_{i:04}.wav")), &s1)?;
        write_wav(&outdir.join(format!("s2_{i:04}.wav")), &s2)?;
    }
    println!("wrote {count} mixtures to {}", outdir.display());
    Ok(())
}
