//! The recurrent memory-token transformer layer: chunked multi-head
//! attention with M trainable memory slots prepended to every chunk,
//! cross-chunk memory averaging, and a full-sequence FFN whose extra output
//! channel is the sigmoid halting estimator.
//!
//! All linear weights are shared across iterations; only the layer-norm
//! affine pairs vary with the step index (the time-step encoding). Pre-LN
//! layout throughout. Halted sequence tokens stay visible as attention
//! keys/values with frozen state but receive no query, FFN, or estimator
//! compute; memory slots are exempt from halting.

use rand_chacha::ChaCha8Rng;

use crate::audit::OpCounter;
use crate::error::{Error, Result};
use crate::halting::{HaltingState, TokenStatus};
use crate::params::ParamSet;
use crate::tensor::{layer_norm, mean_tensors, Scalar, Tensor};

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct LayerConfig {
    /// Token width H.
    pub hidden: usize,
    pub heads: usize,
    /// Chunk size K.
    pub chunk: usize,
    /// Memory slots M.
    pub memory_slots: usize,
    pub ffn_hidden: usize,
    /// Maximum iterations N (one LN affine set per step).
    pub max_steps: usize,
}

impl Default for LayerConfig {
    fn default() -> Self {
        LayerConfig {
            hidden: 256,
            heads: 8,
            chunk: 150,
            memory_slots: 16,
            ffn_hidden: 1024,
            max_steps: 16,
        }
    }
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0
            || self.heads == 0
            || self.chunk == 0
            || self.memory_slots == 0
            || self.ffn_hidden == 0
            || self.max_steps == 0
        {
            return Err(Error::InvalidArgument(
                "layer: all sizes must be positive".into(),
            ));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "layer: hidden {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

/// How a token sequence maps onto fixed-size chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkLayout {
    pub chunk: usize,
    pub num_chunks: usize,
    pub pad_len: usize,
    pub tokens: usize,
}

/// Split [T x H] into ceil(T/K) chunks of K rows, zero-padding the last.
pub fn chunk<T: Scalar>(seq: &Tensor<T>, k: usize) -> Result<(Vec<Tensor<T>>, ChunkLayout)> {
    if k == 0 {
        return Err(Error::InvalidArgument("chunk: K must be >= 1".into()));
    }
    let (t, h) = (seq.rows(), seq.cols());
    if t == 0 {
        return Err(Error::Shape("chunk: empty sequence".into()));
    }
    let c = t.div_ceil(k);
    let pad_len = c * k - t;
    let mut chunks = Vec::with_capacity(c);
    for i in 0..c {
        let start = i * k;
        let end = ((i + 1) * k).min(t);
        let mut part = seq.slice_rows(start..end)?;
        if end - start < k {
            part = Tensor::concat_rows(&[part, Tensor::zeros(vec![k - (end - start), h])])?;
        }
        chunks.push(part);
    }
    Ok((
        chunks,
        ChunkLayout {
            chunk: k,
            num_chunks: c,
            pad_len,
            tokens: t,
        },
    ))
}

/// Inverse of [`chunk`]: concatenate and drop the padding rows.
pub fn unchunk<T: Scalar>(chunks: &[Tensor<T>], layout: &ChunkLayout) -> Result<Tensor<T>> {
    if chunks.len() != layout.num_chunks {
        return Err(Error::Shape(format!(
            "unchunk: {} chunks vs layout {}",
            chunks.len(),
            layout.num_chunks
        )));
    }
    let full = Tensor::concat_rows(chunks)?;
    full.slice_rows(0..layout.tokens)
}

/// Parameter names + config for one shared layer.
pub struct AwmLayer {
    pub config: LayerConfig,
    prefix: String,
}

impl AwmLayer {
    pub fn init<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        config: LayerConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<AwmLayer> {
        config.validate()?;
        let h = config.hidden;
        let f = config.ffn_hidden;
        let wb = (1.0 / h as f64).sqrt();
        let p = |s: &str| format!("{prefix}.{s}");
        for name in ["attn.q.w", "attn.k.w", "attn.v.w", "attn.o.w"] {
            params.new_uniform(&p(name), vec![h, h], wb, rng)?;
        }
        params.new_uniform(&p("ffn.w1"), vec![h, f], wb, rng)?;
        params.new_param(&p("ffn.b1"), vec![f], || T::zero())?;
        params.new_uniform(&p("ffn.w2"), vec![f, h + 1], (1.0 / f as f64).sqrt(), rng)?;
        params.new_param(&p("ffn.b2"), vec![h + 1], || T::zero())?;
        params.new_param(&p("ffn.prelu"), vec![1], || T::from_f64(0.25))?;
        params.new_uniform(&p("memory.init"), vec![config.memory_slots, h], wb, rng)?;
        for n in 1..=config.max_steps {
            params.new_param(&p(&format!("ln.attn.gamma.{n}")), vec![h], || T::one())?;
            params.new_param(&p(&format!("ln.attn.beta.{n}")), vec![h], || T::zero())?;
            params.new_param(&p(&format!("ln.ffn.gamma.{n}")), vec![h], || T::one())?;
            params.new_param(&p(&format!("ln.ffn.beta.{n}")), vec![h], || T::zero())?;
        }
        Ok(AwmLayer {
            config,
            prefix: prefix.to_string(),
        })
    }

    fn weight<'a, T: Scalar>(
        &self,
        params: &'a ParamSet<T>,
        name: &str,
    ) -> Result<&'a Tensor<T>> {
        let full = format!("{}.{name}", self.prefix);
        params
            .get(&full)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{full}`")))
    }

    /// Fresh memory state: the trainable initial embedding.
    pub fn initial_memory<T: Scalar>(&self, params: &ParamSet<T>) -> Result<Tensor<T>> {
        Ok(self.weight(params, "memory.init")?.clone())
    }

    /// One iteration: chunked attention with memory, memory averaging,
    /// full-sequence FFN with the piggybacked estimator, and the halting
    /// update. Returns the averaged-and-updated memory for the next step.
    ///
    /// Reads the current sequence from `state.h` and writes the updated one
    /// back; halted tokens participate as keys/values only.
    pub fn forward<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        state: &mut HaltingState<T>,
        memory: &Tensor<T>,
        counter: &mut OpCounter,
    ) -> Result<Tensor<T>> {
        let cfg = &self.config;
        let h = cfg.hidden;
        let m = cfg.memory_slots;
        let k = cfg.chunk;
        let step = state.step + 1; // 1-based LN affine index
        if step > cfg.max_steps {
            return Err(Error::InvalidArgument(format!(
                "layer: step {step} past max {}",
                cfg.max_steps
            )));
        }
        if memory.shape() != [m, h] || state.h.cols() != h {
            return Err(Error::Shape(format!(
                "layer: memory {:?} / sequence {:?} inconsistent with config",
                memory.shape(),
                state.h.shape()
            )));
        }
        let eps = T::from_f64(NORM_EPS);
        let seq = state.h.clone();
        let tokens = seq.rows();
        let (chunks, layout) = chunk(&seq, k)?;

        let ga = self.weight(params, &format!("ln.attn.gamma.{step}"))?;
        let ba = self.weight(params, &format!("ln.attn.beta.{step}"))?;
        let wq = self.weight(params, "attn.q.w")?;
        let wk = self.weight(params, "attn.k.w")?;
        let wv = self.weight(params, "attn.v.w")?;
        let wo = self.weight(params, "attn.o.w")?;
        let d = h / cfg.heads;
        let scale = T::from_f64(1.0 / (d as f64).sqrt());

        counter.begin_attention_iteration();
        let mut mem_parts = Vec::with_capacity(layout.num_chunks);
        let mut seq_chunks = Vec::with_capacity(layout.num_chunks);
        for (ci, part) in chunks.iter().enumerate() {
            // queries: memory slots plus this chunk's computing tokens
            let mut q_idx: Vec<usize> = (0..m).collect();
            let mut mask = vec![false; m + k];
            for j in 0..k {
                let global = ci * k + j;
                if global >= tokens {
                    mask[m + j] = true; // padding slot: key/value masked out
                } else if state.status[global] == TokenStatus::Computing {
                    q_idx.push(m + j);
                }
            }
            let x = Tensor::concat_rows(&[memory.clone(), part.clone()])?;
            let xn = layer_norm(&x, ga, ba, eps)?;
            let q_in = xn.gather_rows(&q_idx)?;
            let q = q_in.matmul(wq)?;
            let keys = xn.matmul(wk)?;
            let values = xn.matmul(wv)?;
            let mut head_outs = Vec::with_capacity(cfg.heads);
            for a in 0..cfg.heads {
                let range = a * d..(a + 1) * d;
                let qa = q.slice_cols(range.clone())?;
                let ka = keys.slice_cols(range.clone())?;
                let va = values.slice_cols(range)?;
                let scores = qa.matmul_nt(&ka)?.scale(scale)?;
                let attn = scores.softmax_rows(Some(&mask))?;
                head_outs.push(attn.matmul(&va)?);
            }
            let o = Tensor::concat_cols(&head_outs)?.matmul(wo)?;
            let updated = x.gather_rows(&q_idx)?.add(&o)?;
            let x_out = x.scatter_rows(&q_idx, &updated)?;
            counter.record_attention(q_idx.len(), m + k, h);
            mem_parts.push(x_out.slice_rows(0..m)?);
            seq_chunks.push(x_out.slice_rows(m..m + k)?);
        }
        let memory_avg = mean_tensors(&mem_parts)?;
        let seq_att = unchunk(&seq_chunks, &layout)?;

        // full-sequence FFN over active tokens + memory, probability channel
        // piggybacked as the (H+1)-th output
        let computing = state.computing_indices();
        let active = computing.len();
        let ffn_in = if active > 0 {
            Tensor::concat_rows(&[seq_att.gather_rows(&computing)?, memory_avg.clone()])?
        } else {
            memory_avg.clone()
        };
        let gf = self.weight(params, &format!("ln.ffn.gamma.{step}"))?;
        let bf = self.weight(params, &format!("ln.ffn.beta.{step}"))?;
        let xn = layer_norm(&ffn_in, gf, bf, eps)?;
        let hidden = xn
            .matmul(self.weight(params, "ffn.w1")?)?
            .add_row(self.weight(params, "ffn.b1")?)?
            .prelu(self.weight(params, "ffn.prelu")?)?;
        let out = hidden
            .matmul(self.weight(params, "ffn.w2")?)?
            .add_row(self.weight(params, "ffn.b2")?)?;
        counter.record_ffn(active + m, h, cfg.ffn_hidden, h + 1);
        let res = ffn_in.add(&out.slice_cols(0..h)?)?;

        let (h_new, p_full) = if active > 0 {
            let p_active = out.slice_cols(h..h + 1)?.slice_rows(0..active)?.sigmoid()?;
            let p_full = Tensor::full(vec![tokens, 1], T::from_f64(0.5))
                .scatter_rows(&computing, &p_active)?
                .reshape(vec![tokens])?;
            let h_new = seq_att.scatter_rows(&computing, &res.slice_rows(0..active)?)?;
            (h_new, p_full)
        } else {
            (seq_att, Tensor::full(vec![tokens], T::from_f64(0.5)))
        };
        let memory_next = res.slice_rows(active..active + m)?;

        state.step_update(h_new.clone(), p_full)?;
        state.h = h_new;
        Ok(memory_next)
    }
}
