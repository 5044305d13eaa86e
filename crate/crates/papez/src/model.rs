//! End-to-end separation pipeline: encoder -> frame embedding -> recurrent
//! memory-token transformer with adaptive token pruning -> per-speaker mask
//! generation -> mask application -> shared decoder.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::audit::{HaltingTrace, OpCounter};
use crate::error::{Error, Result};
use crate::frontend::{apply_mask, Frontend, FrontendConfig};
use crate::halting::{HaltingState, HaltingVariant};
use crate::layer::{AwmLayer, LayerConfig};
use crate::metrics::upit_loss_t;
use crate::params::ParamSet;
use crate::tensor::{Scalar, Tensor};
use crate::wav::Waveform;

#[derive(Debug, Clone, Copy)]
pub struct PapezConfig {
    /// Memory slots M.
    pub memory_slots: usize,
    /// Maximum iterations N.
    pub max_steps: usize,
    /// Chunk size K.
    pub chunk: usize,
    pub heads: usize,
    /// Token width H.
    pub hidden: usize,
    pub ffn_hidden: usize,
    pub enc_kernel: usize,
    pub enc_stride: usize,
    /// Encoder latent channels E.
    pub enc_channels: usize,
    pub speakers: usize,
    pub p_th: f64,
    pub halting: HaltingVariant,
    /// Hidden width of the frame embedding (defaults to H).
    pub embed_hidden: usize,
    /// Hidden width of the mask-generation network (defaults to 2H).
    pub maskgen_hidden: usize,
}

impl Default for PapezConfig {
    fn default() -> Self {
        PapezConfig {
            memory_slots: 16,
            max_steps: 16,
            chunk: 150,
            heads: 8,
            hidden: 256,
            ffn_hidden: 1024,
            enc_kernel: 16,
            enc_stride: 8,
            enc_channels: 256,
            speakers: 2,
            p_th: 0.9,
            halting: HaltingVariant::PaperLiteral,
            embed_hidden: 256,
            maskgen_hidden: 512,
        }
    }
}

impl PapezConfig {
    /// Small configuration for fast tests and gradient checks.
    pub fn tiny() -> Self {
        PapezConfig {
            memory_slots: 4,
            max_steps: 3,
            chunk: 16,
            heads: 4,
            hidden: 32,
            ffn_hidden: 32,
            enc_kernel: 16,
            enc_stride: 8,
            enc_channels: 16,
            speakers: 2,
            p_th: 0.9,
            halting: HaltingVariant::PaperLiteral,
            embed_hidden: 32,
            maskgen_hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.speakers == 0 || self.enc_channels == 0 || self.embed_hidden == 0
            || self.maskgen_hidden == 0
        {
            return Err(Error::InvalidArgument(
                "model: all sizes must be positive".into(),
            ));
        }
        if !(self.p_th > 0.0) {
            return Err(Error::InvalidArgument("model: p_th must be positive".into()));
        }
        self.layer_config().validate()
    }

    pub fn layer_config(&self) -> LayerConfig {
        LayerConfig {
            hidden: self.hidden,
            heads: self.heads,
            chunk: self.chunk,
            memory_slots: self.memory_slots,
            ffn_hidden: self.ffn_hidden,
            max_steps: self.max_steps,
        }
    }

    pub fn frontend_config(&self) -> FrontendConfig {
        FrontendConfig {
            kernel: self.enc_kernel,
            stride: self.enc_stride,
            channels: self.enc_channels,
        }
    }
}

pub struct PapezModel<T: Scalar> {
    pub config: PapezConfig,
    pub params: ParamSet<T>,
    frontend: Frontend,
    layer: AwmLayer,
}

fn slice_1d<T: Scalar>(x: &Tensor<T>, len: usize) -> Result<Tensor<T>> {
    let full = x.numel();
    x.reshape(vec![full, 1])?
        .slice_rows(0..len)?
        .reshape(vec![len])
}

impl<T: Scalar> PapezModel<T> {
    /// Build a model with all weights drawn deterministically from `seed`.
    pub fn init(config: PapezConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frontend = Frontend::init(&mut params, "frontend", config.frontend_config(), &mut rng)?;

        let e = config.enc_channels;
        let h = config.hidden;
        let eh = config.embed_hidden;
        let mh = config.maskgen_hidden;
        let s = config.speakers;
        // frame embedding E -> H, emitting one extra (discarded) channel
        params.new_uniform("embed.w1", vec![e, eh], (1.0 / e as f64).sqrt(), &mut rng)?;
        params.new_param("embed.b1", vec![eh], || T::zero())?;
        params.new_uniform("embed.w2", vec![eh, h + 1], (1.0 / eh as f64).sqrt(), &mut rng)?;
        params.new_param("embed.b2", vec![h + 1], || T::zero())?;
        params.new_param("embed.prelu", vec![1], || T::from_f64(0.25))?;

        let layer = AwmLayer::init(&mut params, "layer", config.layer_config(), &mut rng)?;

        // mask generation H -> S*E with tanh output
        params.new_uniform("mask.w1", vec![h, mh], (1.0 / h as f64).sqrt(), &mut rng)?;
        params.new_param("mask.b1", vec![mh], || T::zero())?;
        params.new_uniform("mask.w2", vec![mh, s * e], (1.0 / mh as f64).sqrt(), &mut rng)?;
        params.new_param("mask.b2", vec![s * e], || T::zero())?;
        params.new_param("mask.prelu", vec![1], || T::from_f64(0.25))?;

        Ok(PapezModel {
            config,
            params,
            frontend,
            layer,
        })
    }

    /// Per-frame embedding: latent features [E x F] -> tokens [F x H].
    pub fn embed(&self, rep: &Tensor<T>) -> Result<Tensor<T>> {
        let p = |n: &str| {
            self.params
                .get(n)
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{n}`")))
        };
        let x = rep.transpose()?; // [F x E]
        let hid = x
            .matmul(p("embed.w1")?)?
            .add_row(p("embed.b1")?)?
            .prelu(p("embed.prelu")?)?;
        let out = hid.matmul(p("embed.w2")?)?.add_row(p("embed.b2")?)?;
        // the probability channel of the embedding is discarded: the halting
        // recurrence starts from P = 0
        out.slice_cols(0..self.config.hidden)
    }

    /// Iterate the shared layer until every token halts or N is reached;
    /// returns the accumulated output y and the final halting state.
    pub fn masking_forward(
        &self,
        tokens: Tensor<T>,
        counter: &mut OpCounter,
    ) -> Result<(Tensor<T>, HaltingState<T>)> {
        let cfg = &self.config;
        let mut state = HaltingState::new(tokens, cfg.p_th, cfg.max_steps, cfg.halting)?;
        let mut memory = self.layer.initial_memory(&self.params)?;
        while state.needs_step() {
            if state.computing_indices().is_empty() {
                // correction-only step: no transformer compute needed
                let t = state.tokens();
                state.step_update(state.h.clone(), Tensor::full(vec![t], T::from_f64(0.5)))?;
            } else {
                memory = self.layer.forward(&self.params, &mut state, &memory, counter)?;
            }
        }
        state.finalize_remainder()?;
        Ok((state.y.clone(), state))
    }

    /// Accumulated tokens [T x H] -> per-speaker masks [E x F] in (-1, 1).
    pub fn generate_masks(&self, y: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let p = |n: &str| {
            self.params
                .get(n)
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{n}`")))
        };
        let hid = y
            .matmul(p("mask.w1")?)?
            .add_row(p("mask.b1")?)?
            .prelu(p("mask.prelu")?)?;
        let flat = hid.matmul(p("mask.w2")?)?.add_row(p("mask.b2")?)?.tanh()?;
        let e = self.config.enc_channels;
        let mut masks = Vec::with_capacity(self.config.speakers);
        for s in 0..self.config.speakers {
            masks.push(flat.slice_cols(s * e..(s + 1) * e)?.transpose()?);
        }
        Ok(masks)
    }

    /// Full differentiable pipeline: waveform samples -> per-speaker
    /// estimates of the same length, plus the halting state.
    pub fn forward(
        &self,
        samples: &[f64],
        counter: &mut OpCounter,
    ) -> Result<(Vec<Tensor<T>>, HaltingState<T>)> {
        let len = samples.len();
        let padded = self.frontend.padded_len(len);
        let mut data: Vec<T> = samples.iter().map(|&v| T::from_f64(v)).collect();
        data.resize(padded, T::zero());
        let x = Tensor::from_vec(vec![padded], data)?;
        let rep = self.frontend.encode(&self.params, &x)?;
        let tokens = self.embed(&rep)?;
        let (y, state) = self.masking_forward(tokens, counter)?;
        let masks = self.generate_masks(&y)?;
        let mut out = Vec::with_capacity(masks.len());
        for mask in &masks {
            let masked = apply_mask(&rep, mask)?;
            let wave = self.frontend.decode(&self.params, &masked)?;
            out.push(slice_1d(&wave, len)?);
        }
        Ok((out, state))
    }

    /// Inference entry point: mixture in, one waveform per speaker out.
    pub fn separate(&self, w: &Waveform) -> Result<(Vec<Waveform>, HaltingState<T>)> {
        let mut counter = OpCounter::new();
        let (est, state) = self.forward(&w.samples, &mut counter)?;
        let mut waves = Vec::with_capacity(est.len());
        for e in est {
            waves.push(Waveform::new(
                e.data().iter().map(|&v| v.to_f64()).collect(),
                w.sample_rate,
            )?);
        }
        Ok((waves, state))
    }

    /// Permutation-invariant negative SI-SNR training loss for one mixture.
    pub fn training_loss(
        &self,
        mixture: &Waveform,
        references: &[Waveform],
        counter: &mut OpCounter,
    ) -> Result<(Tensor<T>, Vec<usize>, HaltingState<T>)> {
        if references.len() != self.config.speakers {
            return Err(Error::Shape(format!(
                "training_loss: {} references for {} speakers",
                references.len(),
                self.config.speakers
            )));
        }
        let (est, state) = self.forward(&mixture.samples, counter)?;
        let refs: Vec<Tensor<T>> = references
            .iter()
            .map(|r| {
                Tensor::from_vec(
                    vec![r.samples.len()],
                    r.samples.iter().map(|&v| T::from_f64(v)).collect(),
                )
            })
            .collect::<Result<_>>()?;
        let (loss, perm) = upit_loss_t(&est, &refs)?;
        Ok((loss, perm, state))
    }

    /// Audit trace including the chunk-padding slots (reported as depth 0).
    pub fn halting_trace(&self, state: &HaltingState<T>) -> HaltingTrace {
        let t = state.tokens();
        let pad = t.div_ceil(self.config.chunk) * self.config.chunk - t;
        let mut depths = state.ft_evals.clone();
        depths.extend(std::iter::repeat(0).take(pad));
        HaltingTrace {
            depths,
            survival: state.survival_curve().to_vec(),
            max_steps: state.max_steps,
        }
    }
}
