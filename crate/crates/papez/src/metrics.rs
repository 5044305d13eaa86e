//! SI-SNR / SDR metrics and the utterance-level permutation-invariant loss.
//!
//! Plain f64 versions evaluate trained models; tensor versions carry
//! gradients for training. Both zero-mean their inputs and guard
//! denominators and logs with eps = 1e-8.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const METRIC_EPS: f64 = 1e-12;

const DB_SCALE: f64 = 10.0 / std::f64::consts::LN_10;

/// Best permutation and the loss it achieves.
#[derive(Debug, Clone)]
pub struct PermutationResult {
    pub loss: f64,
    pub assignment: Vec<usize>,
}

fn zero_mean(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

/// Scale-invariant SNR in dB.
pub fn si_snr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(est, reference)?;
    let e = zero_mean(est);
    let s = zero_mean(reference);
    let dot: f64 = e.iter().zip(&s).map(|(a, b)| a * b).sum();
    let s_energy: f64 = s.iter().map(|v| v * v).sum();
    let alpha = dot / (s_energy + METRIC_EPS);
    let mut target_energy = 0.0;
    let mut noise_energy = 0.0;
    for (ei, si) in e.iter().zip(&s) {
        let t = alpha * si;
        target_energy += t * t;
        let n = ei - t;
        noise_energy += n * n;
    }
    Ok(DB_SCALE * ((target_energy + METRIC_EPS) / (noise_energy + METRIC_EPS)).ln())
}

/// Plain (non-scale-invariant) signal-to-distortion ratio in dB.
pub fn sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(est, reference)?;
    let e = zero_mean(est);
    let s = zero_mean(reference);
    let signal: f64 = s.iter().map(|v| v * v).sum();
    let noise: f64 = e.iter().zip(&s).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(DB_SCALE * ((signal + METRIC_EPS) / (noise + METRIC_EPS)).ln())
}

/// SI-SNR improvement of the estimate over the unprocessed mixture.
pub fn si_snr_i(est: &[f64], reference: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(si_snr(est, reference)? - si_snr(mixture, reference)?)
}

/// SDR improvement over the unprocessed mixture.
pub fn sdr_i(est: &[f64], reference: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(sdr(est, reference)? - sdr(mixture, reference)?)
}

fn check_pair(est: &[f64], reference: &[f64]) -> Result<()> {
    if est.len() != reference.len() || est.is_empty() {
        return Err(Error::Shape(format!(
            "metric: lengths {} vs {}",
            est.len(),
            reference.len()
        )));
    }
    if reference.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidArgument("metric: all-zero reference".into()));
    }
    Ok(())
}

/// All permutations of 0..n in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for lead in 0..n {
        for mut rest in permutations(n - 1) {
            for v in rest.iter_mut() {
                if *v >= lead {
                    *v += 1;
                }
            }
            let mut p = vec![lead];
            p.append(&mut rest);
            out.push(p);
        }
    }
    out
}

/// Utterance-level permutation-invariant loss over plain signals:
/// -mean SI-SNR under the best speaker assignment (exhaustive over S!).
pub fn upit_loss(ests: &[Vec<f64>], refs: &[Vec<f64>]) -> Result<PermutationResult> {
    if ests.len() != refs.len() || ests.is_empty() {
        return Err(Error::Shape("upit: speaker count mismatch".into()));
    }
    let mut best: Option<PermutationResult> = None;
    for perm in permutations(ests.len()) {
        let mut total = 0.0;
        for (i, &j) in perm.iter().enumerate() {
            total += si_snr(&ests[i], &refs[j])?;
        }
        let loss = -total / ests.len() as f64;
        if best.as_ref().map_or(true, |b| loss < b.loss) {
            best = Some(PermutationResult {
                loss,
                assignment: perm,
            });
        }
    }
    Ok(best.expect("at least one permutation"))
}

// ---------------------------------------------------------------------------
// differentiable versions
// ---------------------------------------------------------------------------

/// SI-SNR in dB as a graph scalar; `reference` is treated as a constant.
pub fn si_snr_t<T: Scalar>(est: &Tensor<T>, reference: &Tensor<T>) -> Result<Tensor<T>> {
    if est.numel() != reference.numel() {
        return Err(Error::Shape(format!(
            "si_snr: lengths {} vs {}",
            est.numel(),
            reference.numel()
        )));
    }
    let eps = Tensor::scalar(T::from_f64(METRIC_EPS));
    let e = est.sub(&est.mean_all()?)?;
    let s = reference.sub(&reference.mean_all()?)?;
    let dot = e.mul(&s)?.sum_all()?;
    let s_energy = s.mul(&s)?.sum_all()?;
    let alpha = dot.div(&s_energy.add(&eps)?)?;
    let target = s.mul(&alpha)?;
    let noise = e.sub(&target)?;
    let num = target.mul(&target)?.sum_all()?.add(&eps)?;
    let den = noise.mul(&noise)?.sum_all()?.add(&eps)?;
    num.div(&den)?.ln()?.scale(T::from_f64(DB_SCALE))
}

/// Differentiable uPIT loss: the permutation is selected on values, the loss
/// keeps the graph of the winning pairs.
pub fn upit_loss_t<T: Scalar>(
    ests: &[Tensor<T>],
    refs: &[Tensor<T>],
) -> Result<(Tensor<T>, Vec<usize>)> {
    if ests.len() != refs.len() || ests.is_empty() {
        return Err(Error::Shape("upit: speaker count mismatch".into()));
    }
    let n = ests.len();
    // pairwise SI-SNR graph scalars
    let mut pair = Vec::with_capacity(n * n);
    for est in ests {
        for r in refs {
            pair.push(si_snr_t(est, r)?);
        }
    }
    let mut best_perm = None;
    let mut best_value = T::neg_infinity();
    for perm in permutations(n) {
        let total: T = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| pair[i * n + j].item())
            .sum();
        if total > best_value {
            best_value = total;
            best_perm = Some(perm);
        }
    }
    let perm = best_perm.expect("at least one permutation");
    let mut acc = pair[perm[0]].clone();
    for (i, &j) in perm.iter().enumerate().skip(1) {
        acc = acc.add(&pair[i * n + j])?;
    }
    let loss = acc.scale(T::from_f64(-1.0 / n as f64))?;
    Ok((loss, perm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn perfect_reconstruction_is_eps_limited_high() {
        let s = noise(512, 1);
        assert!(si_snr(&s, &s).unwrap() >= 80.0);
    }

    #[test]
    fn scale_invariance() {
        let s = noise(512, 2);
        let n = noise(512, 7);
        let est: Vec<f64> = s.iter().zip(&n).map(|(x, d)| x + 0.3 * d).collect();
        let base = si_snr(&est, &s).unwrap();
        for alpha in [0.1, 1.0, 10.0] {
            let scaled: Vec<f64> = est.iter().map(|x| alpha * x).collect();
            assert!((si_snr(&scaled, &s).unwrap() - base).abs() < 1e-6);
        }
    }

    #[test]
    fn orthogonal_estimate_is_eps_limited_low() {
        let n = 512;
        let s: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
        let e: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).cos()).collect();
        // strip the projection to make it exactly orthogonal after zero-mean
        let sm = zero_mean(&s);
        let em = zero_mean(&e);
        let dot: f64 = em.iter().zip(&sm).map(|(a, b)| a * b).sum();
        let s2: f64 = sm.iter().map(|v| v * v).sum();
        let orth: Vec<f64> = em.iter().zip(&sm).map(|(a, b)| a - dot / s2 * b).collect();
        assert!(si_snr(&orth, &sm).unwrap() <= -80.0);
    }

    #[test]
    fn improvement_of_mixture_is_exactly_zero() {
        let s = noise(256, 3);
        let mix = noise(256, 4);
        assert_eq!(si_snr_i(&mix, &s, &mix).unwrap(), 0.0);
        assert_eq!(sdr_i(&mix, &s, &mix).unwrap(), 0.0);
    }

    #[test]
    fn upit_is_permutation_invariant() {
        let a = noise(128, 5);
        let b = noise(128, 6);
        let refs = vec![a.clone(), b.clone()];
        let straight = upit_loss(&[a.clone(), b.clone()], &refs).unwrap();
        let swapped = upit_loss(&[b, a], &refs).unwrap();
        assert_eq!(straight.loss, swapped.loss);
        assert_eq!(swapped.assignment, vec![1, 0]);
    }

    #[test]
    fn upit_s3_matches_brute_force() {
        let ests: Vec<Vec<f64>> = (0..3).map(|i| noise(64, 10 + i)).collect();
        let refs: Vec<Vec<f64>> = (0..3).map(|i| noise(64, 20 + i)).collect();
        let result = upit_loss(&ests, &refs).unwrap();
        // independent brute force over all 6 permutations
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let mut best = f64::INFINITY;
        for p in perms {
            let total: f64 = (0..3)
                .map(|i| si_snr(&ests[i], &refs[p[i]]).unwrap())
                .sum();
            best = best.min(-total / 3.0);
        }
        assert!((result.loss - best).abs() < 1e-12);
    }

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(2).len(), 2);
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(4).len(), 24);
    }

    #[test]
    fn tensor_si_snr_matches_plain_formula() {
        let est = noise(200, 30);
        let reference = noise(200, 31);
        let plain = si_snr(&est, &reference).unwrap();
        let et = Tensor::<f64>::from_vec(vec![200], est).unwrap();
        let rt = Tensor::<f64>::from_vec(vec![200], reference).unwrap();
        let t = si_snr_t(&et, &rt).unwrap().item();
        assert!((plain - t).abs() < 1e-9, "{plain} vs {t}");
    }

    #[test]
    fn tensor_upit_matches_plain() {
        let a = noise(100, 40);
        let b = noise(100, 41);
        let ra = noise(100, 42);
        let rb = noise(100, 43);
        let plain = upit_loss(&[a.clone(), b.clone()], &[ra.clone(), rb.clone()]).unwrap();
        let tens = |v: Vec<f64>| Tensor::<f64>::from_vec(vec![100], v).unwrap();
        let (loss, perm) = upit_loss_t(&[tens(a), tens(b)], &[tens(ra), tens(rb)]).unwrap();
        assert!((loss.item() - plain.loss).abs() < 1e-9);
        assert_eq!(perm, plain.assignment);
    }
}
