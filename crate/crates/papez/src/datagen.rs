//! Synthetic two-source mixtures for desk-scale training and evaluation.
//!
//! The two speakers live in disjoint nominal frequency bands so that a small
//! model can actually separate them; mixing SNR is drawn uniformly in
//! [-5, 5] dB. Everything is deterministic from the seed.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::wav::Waveform;

pub const SNR_RANGE_DB: (f64, f64) = (-5.0, 5.0);

/// Default disjoint bands (Hz) for the two sources at 8 kHz.
pub const LOW_BAND: (f64, f64) = (250.0, 700.0);
pub const HIGH_BAND: (f64, f64) = (1400.0, 3000.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFamily {
    ToneComplex,
    FilteredNoise,
    Chirp,
}

impl fmt::Display for SourceFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SourceFamily::ToneComplex => "tone_complex",
            SourceFamily::FilteredNoise => "filtered_noise",
            SourceFamily::Chirp => "chirp",
        };
        f.write_str(s)
    }
}

fn pick_family(rng: &mut ChaCha8Rng) -> SourceFamily {
    match rng.gen_range(0u8..3) {
        0 => SourceFamily::ToneComplex,
        1 => SourceFamily::FilteredNoise,
        _ => SourceFamily::Chirp,
    }
}

/// Full recipe for one mixture.
#[derive(Debug, Clone)]
pub struct MixSpec {
    pub seed: u64,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub snr_db: f64,
    pub families: [SourceFamily; 2],
    pub bands: [(f64, f64); 2],
}

impl MixSpec {
    /// Draw snr and source families deterministically from the seed.
    pub fn from_seed(seed: u64, sample_rate: u32, duration_s: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let snr_db = rng.gen_range(SNR_RANGE_DB.0..=SNR_RANGE_DB.1);
        let families = [pick_family(&mut rng), pick_family(&mut rng)];
        MixSpec {
            seed,
            sample_rate,
            duration_s,
            snr_db,
            families,
            bands: [LOW_BAND, HIGH_BAND],
        }
    }
}

fn synth_source(
    family: SourceFamily,
    band: (f64, f64),
    n: usize,
    sample_rate: u32,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let sr = sample_rate as f64;
    let tau = std::f64::consts::TAU;
    let mut out = vec![0.0; n];
    match family {
        SourceFamily::ToneComplex => {
            let count = rng.gen_range(3..=5);
            for _ in 0..count {
                let f = rng.gen_range(band.0..band.1);
                let phase = rng.gen_range(0.0..tau);
                let amp = rng.gen_range(0.3..1.0);
                for (i, o) in out.iter_mut().enumerate() {
                    *o += amp * (tau * f * i as f64 / sr + phase).sin();
                }
            }
        }
        SourceFamily::FilteredNoise => {
            // band-limited noise as a dense random sinusoid sum
            let count = 40;
            for _ in 0..count {
                let f = rng.gen_range(band.0..band.1);
                let phase = rng.gen_range(0.0..tau);
                let amp = rng.gen_range(0.5..1.0);
                for (i, o) in out.iter_mut().enumerate() {
                    *o += amp * (tau * f * i as f64 / sr + phase).sin();
                }
            }
        }
        SourceFamily::Chirp => {
            let f0 = rng.gen_range(band.0..(band.0 + 0.5 * (band.1 - band.0)));
            let f1 = rng.gen_range(f0..band.1);
            let phase = rng.gen_range(0.0..tau);
            let dur = n as f64 / sr;
            let rate = (f1 - f0) / dur;
            for (i, o) in out.iter_mut().enumerate() {
                let t = i as f64 / sr;
                *o = (tau * (f0 * t + 0.5 * rate * t * t) + phase).sin();
            }
        }
    }
    // fixed reference RMS before SNR scaling
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        for o in out.iter_mut() {
            *o *= 0.1 / rms;
        }
    }
    out
}

/// Generate (mixture, [source1, source2]). Source 2 is scaled so that
/// 10*log10(E1/E2) equals `snr_db`; the mixture is the plain sum, and all
/// three signals share one final scale keeping the mixture peak <= 0.9.
pub fn synth_mixture(spec: &MixSpec) -> Result<(Waveform, [Waveform; 2])> {
    if spec.duration_s <= 0.0 {
        return Err(Error::InvalidArgument("duration must be positive".into()));
    }
    let n = (spec.duration_s * spec.sample_rate as f64).round() as usize;
    if n == 0 {
        return Err(Error::InvalidArgument("duration too short".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_1234);
    let mut s1 = synth_source(spec.families[0], spec.bands[0], n, spec.sample_rate, &mut rng);
    let mut s2 = synth_source(spec.families[1], spec.bands[1], n, spec.sample_rate, &mut rng);

    let e1: f64 = s1.iter().map(|x| x * x).sum();
    let e2: f64 = s2.iter().map(|x| x * x).sum();
    if e1 <= 0.0 || e2 <= 0.0 {
        return Err(Error::InvalidArgument("degenerate silent source".into()));
    }
    // 10*log10(e1 / (k^2 e2)) = snr  =>  k = sqrt(e1 / (e2 * 10^(snr/10)))
    let k = (e1 / (e2 * 10f64.powf(spec.snr_db / 10.0))).sqrt();
    for x in s2.iter_mut() {
        *x *= k;
    }

    let mut mix: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| a + b).collect();
    let peak = mix.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.9 {
        let g = 0.9 / peak;
        for v in mix.iter_mut() {
            *v *= g;
        }
        for v in s1.iter_mut() {
            *v *= g;
        }
        for v in s2.iter_mut() {
            *v *= g;
        }
    }
    Ok((
        Waveform::new(mix, spec.sample_rate)?,
        [
            Waveform::new(s1, spec.sample_rate)?,
            Waveform::new(s2, spec.sample_rate)?,
        ],
    ))
}

/// Deterministic dataset: item i is fully derived from `base_seed + i`.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub base_seed: u64,
    pub count: usize,
    pub sample_rate: u32,
    pub duration_s: f64,
}

impl DatasetSpec {
    pub fn item_spec(&self, index: usize) -> MixSpec {
        MixSpec::from_seed(
            self.base_seed + index as u64,
            self.sample_rate,
            self.duration_s,
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<(Waveform, [Waveform; 2])>> + '_ {
        (0..self.count).map(move |i| synth_mixture(&self.item_spec(i)))
    }

    /// CSV manifest: index, seed, snr_db, family1, family2.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "index,seed,snr_db,family1,family2")?;
        for i in 0..self.count {
            let spec = self.item_spec(i);
            writeln!(
                f,
                "{},{},{:.6},{},{}",
                i, spec.seed, spec.snr_db, spec.families[0], spec.families[1]
            )?;
        }
        Ok(())
    }
}
