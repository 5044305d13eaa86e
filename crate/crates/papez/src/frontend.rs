//! Learned waveform frontend: strided conv encoder, mask application in the
//! latent space, and a transposed-conv decoder shared across speakers.
//!
//! Encoder: conv1d(1 -> E, kernel, stride) -> instance norm -> ReLU ->
//! pointwise (E -> E). Decoder mirrors it: pointwise -> instance norm ->
//! ReLU -> conv_transpose1d(E -> 1). With the default kernel 16 / stride 8
//! an 8000-sample input yields 999 frames and reconstructs to 8000 samples.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{conv1d_out_len, conv_transpose1d_out_len, instance_norm, Scalar, Tensor};

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct FrontendConfig {
    pub kernel: usize,
    pub stride: usize,
    /// Latent channel count E.
    pub channels: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            kernel: 16,
            stride: 8,
            channels: 256,
        }
    }
}

/// Holds the parameter names of one frontend; weights live in the
/// [`ParamSet`] so optimizer updates are visible on the next forward.
pub struct Frontend {
    pub config: FrontendConfig,
    prefix: String,
}

impl Frontend {
    /// Register encoder/decoder weights under `prefix` and return the handle.
    pub fn init<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        config: FrontendConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Frontend> {
        let e = config.channels;
        let k = config.kernel;
        if e == 0 || k == 0 || config.stride == 0 {
            return Err(Error::InvalidArgument(
                "frontend: kernel, stride, channels must be positive".into(),
            ));
        }
        let conv_bound = (1.0 / k as f64).sqrt();
        let point_bound = (1.0 / e as f64).sqrt();
        let deconv_bound = (1.0 / (e * k) as f64).sqrt();
        let p = |s: &str| format!("{prefix}.{s}");
        params.new_uniform(&p("enc.conv.w"), vec![e, 1, k], conv_bound, rng)?;
        params.new_param(&p("enc.norm.gamma"), vec![e], || T::one())?;
        params.new_param(&p("enc.norm.beta"), vec![e], || T::zero())?;
        params.new_uniform(&p("enc.point.w"), vec![e, e], point_bound, rng)?;
        params.new_uniform(&p("dec.point.w"), vec![e, e], point_bound, rng)?;
        params.new_param(&p("dec.norm.gamma"), vec![e], || T::one())?;
        params.new_param(&p("dec.norm.beta"), vec![e], || T::zero())?;
        params.new_uniform(&p("dec.deconv.w"), vec![e, 1, k], deconv_bound, rng)?;
        Ok(Frontend {
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

    /// Frame count produced for an input of `len` samples.
    pub fn frames(&self, len: usize) -> usize {
        conv1d_out_len(len, self.config.kernel, self.config.stride)
    }

    /// Samples reconstructed from `frames` latent frames.
    pub fn output_len(&self, frames: usize) -> usize {
        conv_transpose1d_out_len(frames, self.config.kernel, self.config.stride)
    }

    /// Smallest length >= `len` that encodes and decodes without loss,
    /// i.e. with (len - kernel) divisible by the stride.
    pub fn padded_len(&self, len: usize) -> usize {
        let k = self.config.kernel;
        let s = self.config.stride;
        let base = len.max(k);
        let rem = (base - k) % s;
        if rem == 0 {
            base
        } else {
            base + (s - rem)
        }
    }

    /// Waveform [L] -> latent features [E x F].
    pub fn encode<T: Scalar>(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape().len() != 1 {
            return Err(Error::Shape(format!(
                "encode: expected 1-D waveform, got {:?}",
                x.shape()
            )));
        }
        let len = x.numel();
        if len < self.config.kernel {
            return Err(Error::Shape(format!(
                "encode: input of {len} samples is shorter than the kernel ({})",
                self.config.kernel
            )));
        }
        let eps = T::from_f64(NORM_EPS);
        let x = x.reshape(vec![1, len])?;
        let feat = x.conv1d(self.weight(params, "enc.conv.w")?, self.config.stride)?;
        let feat = instance_norm(
            &feat,
            self.weight(params, "enc.norm.gamma")?,
            self.weight(params, "enc.norm.beta")?,
            eps,
        )?;
        let feat = feat.relu()?;
        self.weight(params, "enc.point.w")?.matmul(&feat)
    }

    /// Latent features [E x F] -> waveform [(F-1)*stride + kernel].
    pub fn decode<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        features: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        if features.shape().len() != 2 || features.rows() != self.config.channels {
            return Err(Error::Shape(format!(
                "decode: expected [{} x F] features, got {:?}",
                self.config.channels,
                features.shape()
            )));
        }
        let eps = T::from_f64(NORM_EPS);
        let feat = self.weight(params, "dec.point.w")?.matmul(features)?;
        let feat = instance_norm(
            &feat,
            self.weight(params, "dec.norm.gamma")?,
            self.weight(params, "dec.norm.beta")?,
            eps,
        )?;
        let feat = feat.relu()?;
        let wave = feat.conv_transpose1d(self.weight(params, "dec.deconv.w")?, self.config.stride)?;
        let len = wave.numel();
        wave.reshape(vec![len])
    }
}

/// Elementwise latent-space masking; mask and features must be [E x F].
pub fn apply_mask<T: Scalar>(features: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    if features.shape() != mask.shape() {
        return Err(Error::Shape(format!(
            "apply_mask: features {:?} vs mask {:?}",
            features.shape(),
            mask.shape()
        )));
    }
    features.mul(mask)
}
