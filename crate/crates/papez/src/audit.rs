//! Compute auditing: closed-form MAC cost models, runtime operation
//! counters, scaling-exponent fits, and halting-depth reports.
//!
//! Counting is definitional, not sampled: every chunk-attention call is
//! charged query_rows x kv_rows x H^2 multiply-accumulates — the same basis
//! as the closed-form model — so with pruning off the measured counter
//! equals the formula exactly. Norms and activations are excluded; they are
//! O(N·H) noise next to the H^2 terms.

use std::path::Path;

use crate::error::{Error, Result};

/// Closed-form attention cost models, per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostModel {
    /// Chunked intra-attention plus full inter-chunk attention (dual-path).
    DualPathFull,
    /// Dual-path with the inter stage thinned by the depth ratio `s_ratio`.
    DualPathReduced,
    /// Chunked attention with M prepended memory slots.
    Awm,
    /// Chunked attention only, no cross-chunk mechanism.
    IntraOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct CostConfig {
    /// Chunk size K.
    pub chunk: usize,
    /// Memory slots M.
    pub memory_slots: usize,
    /// Token width H.
    pub hidden: usize,
    /// Depth ratio of intra- to inter-stages for the reduced dual-path model.
    pub s_ratio: f64,
}

fn chunks_of(n_tokens: usize, k: usize) -> u128 {
    n_tokens.div_ceil(k) as u128
}

/// Closed-form attention MACs per iteration for `n_tokens` input tokens.
pub fn predict_macs(model: CostModel, n_tokens: usize, cfg: &CostConfig) -> Result<u128> {
    if n_tokens == 0 || cfg.chunk == 0 || cfg.hidden == 0 {
        return Err(Error::InvalidArgument(
            "predict_macs: sizes must be positive".into(),
        ));
    }
    let k = cfg.chunk as u128;
    let m = cfg.memory_slots as u128;
    let h2 = (cfg.hidden as u128) * (cfg.hidden as u128);
    let c = chunks_of(n_tokens, cfg.chunk);
    let intra = c * k * k * h2;
    // full attention across the C chunk summaries, at each of K offsets
    let inter = k * c * c * h2;
    Ok(match model {
        CostModel::IntraOnly => intra,
        CostModel::Awm => c * (k + m) * (k + m) * h2,
        CostModel::DualPathFull => intra + inter,
        CostModel::DualPathReduced => {
            if cfg.s_ratio <= 0.0 {
                return Err(Error::InvalidArgument(
                    "predict_macs: s_ratio must be positive".into(),
                ));
            }
            intra + (inter as f64 / cfg.s_ratio).round() as u128
        }
    })
}

/// Runtime counters for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct OpCounter {
    pub attention_macs: u128,
    pub ffn_macs: u128,
    /// Rows through the FFN at each iteration (= active tokens + memory).
    pub ffn_tokens_per_iter: Vec<u64>,
    /// Iterations that executed chunk attention.
    pub attention_iterations: u32,
}

impl OpCounter {
    pub fn new() -> Self {
        OpCounter::default()
    }

    /// Charge one chunk-attention call.
    pub fn record_attention(&mut self, query_rows: usize, kv_rows: usize, hidden: usize) {
        let h2 = (hidden as u128) * (hidden as u128);
        self.attention_macs += (query_rows as u128) * (kv_rows as u128) * h2;
    }

    pub fn begin_attention_iteration(&mut self) {
        self.attention_iterations += 1;
    }

    /// Charge one full-sequence FFN pass of `rows` tokens.
    pub fn record_ffn(&mut self, rows: usize, hidden: usize, ffn_hidden: usize, out_dim: usize) {
        self.ffn_tokens_per_iter.push(rows as u64);
        self.ffn_macs +=
            (rows as u128) * ((hidden as u128) * (ffn_hidden as u128) + (ffn_hidden as u128) * (out_dim as u128));
    }
}

/// Least-squares slope of log(macs) against log(n_tokens).
///
/// Requires at least 4 points spanning at least 8x in token count.
pub fn fit_scaling_exponent(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "fit_scaling_exponent: need >= 4 points, got {}",
            points.len()
        )));
    }
    let min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max = points.iter().map(|p| p.0).fold(0.0f64, f64::max);
    if !(min > 0.0) || max / min < 8.0 {
        return Err(Error::InvalidArgument(format!(
            "fit_scaling_exponent: points must span >= 8x in tokens (span {:.2}x)",
            max / min
        )));
    }
    if points.iter().any(|&(_, y)| !(y > 0.0)) {
        return Err(Error::InvalidArgument(
            "fit_scaling_exponent: counts must be positive".into(),
        ));
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let lx = x.ln();
        let ly = y.ln();
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    Ok((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// Per-token depth data from one forward pass, for reporting.
#[derive(Debug, Clone)]
pub struct HaltingTrace {
    /// Transformer evaluations per token; 0 for force-halted padding.
    pub depths: Vec<usize>,
    /// Fraction of tokens computing at each executed step.
    pub survival: Vec<f64>,
    pub max_steps: usize,
}

#[derive(Debug, Clone)]
pub struct HaltingSummary {
    pub mean_depth: f64,
    /// Survival fraction per step, averaged over traces, length = max depth.
    pub survival: Vec<f64>,
    /// Token-proportional attention savings: 1 - mean_depth / max_steps.
    pub mac_savings: f64,
}

pub fn halting_report(traces: &[HaltingTrace]) -> Result<HaltingSummary> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("halting_report: no traces".into()));
    }
    let mut total_depth = 0usize;
    let mut tokens = 0usize;
    let max_steps = traces[0].max_steps;
    let longest = traces.iter().map(|t| t.survival.len()).max().unwrap_or(0);
    let mut survival = vec![0.0; longest];
    for t in traces {
        total_depth += t.depths.iter().sum::<usize>();
        tokens += t.depths.len();
        for (i, s) in survival.iter_mut().enumerate() {
            // traces that already finished contribute zero active fraction
            *s += t.survival.get(i).copied().unwrap_or(0.0);
        }
    }
    for s in survival.iter_mut() {
        *s /= traces.len() as f64;
    }
    let mean_depth = total_depth as f64 / tokens as f64;
    Ok(HaltingSummary {
        mean_depth,
        survival,
        mac_savings: 1.0 - mean_depth / max_steps as f64,
    })
}

/// CSV: one header block of scalars, then the survival curve per step.
pub fn write_halting_csv(path: &Path, summary: &HaltingSummary) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "metric,value")?;
    writeln!(f, "mean_depth,{:.6}", summary.mean_depth)?;
    writeln!(f, "mac_savings,{:.6}", summary.mac_savings)?;
    writeln!(f, "step,active_fraction")?;
    for (i, s) in summary.survival.iter().enumerate() {
        writeln!(f, "{},{:.6}", i + 1, s)?;
    }
    Ok(())
}

/// Plain-text table of the per-iteration attention cost models.
pub fn format_cost_table(n_tokens: usize, cfg: &CostConfig) -> Result<String> {
    let mut out = String::new();
    out.push_str(&format!(
        "attention MACs per iteration at {n_tokens} tokens (K={}, M={}, H={})\n",
        cfg.chunk, cfg.memory_slots, cfg.hidden
    ));
    for (name, model) in [
        ("dual_path_full", CostModel::DualPathFull),
        ("dual_path_reduced", CostModel::DualPathReduced),
        ("awm", CostModel::Awm),
        ("intra_only", CostModel::IntraOnly),
    ] {
        out.push_str(&format!(
            "{name:18} {}\n",
            predict_macs(model, n_tokens, cfg)?
        ));
    }
    Ok(out)
}
