//! Adaptive token pruning: per-token halting probability accumulation,
//! weighted output accumulation, and pruning decisions.
//!
//! The default variant applies the recurrences literally: a token that was
//! updated while `P <= P_th` keeps weight `p` for that step, and receives its
//! correction weight `1 - P` one step later — which is negative when `P`
//! overshot 1. The `Clamped` variant instead applies the remainder
//! `1 - P_prev` at the step where `P` would cross the threshold, like
//! classic adaptive-computation-time halting. Both guarantee that every
//! token's applied weights sum to exactly 1.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_P_TH: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaltingVariant {
    /// Recurrences as printed, with the one-step-delayed correction weight.
    PaperLiteral,
    /// Remainder applied at the threshold-crossing step.
    Clamped,
}

impl std::str::FromStr for HaltingVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(HaltingVariant::PaperLiteral),
            "clamped" => Ok(HaltingVariant::Clamped),
            other => Err(Error::Config(format!(
                "unknown halting variant `{other}` (expected `paper` or `clamped`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenStatus {
    /// Receives the transformer update and estimator this step.
    Computing,
    /// Crossed the threshold last step; waiting for its correction weight.
    Correcting,
    Halted,
}

/// Per-token halting bookkeeping across the iterations of one forward pass.
///
/// `p_cum`, `y`, and `h` are graph tensors, so the applied weights stay
/// differentiable (the estimator is trained through the output path).
pub struct HaltingState<T: Scalar> {
    /// Cumulative halting probability P per token, in [0, 2).
    pub p_cum: Tensor<T>,
    /// Accumulated output y per token.
    pub y: Tensor<T>,
    /// Current token states; frozen rows for non-computing tokens.
    pub h: Tensor<T>,
    pub status: Vec<TokenStatus>,
    /// Iterations applied so far.
    pub step: usize,
    pub max_steps: usize,
    pub p_th: f64,
    pub variant: HaltingVariant,
    /// Applied weights per token, in application order (audit only).
    pub weight_log: Vec<Vec<f64>>,
    /// Transformer evaluations per token (audit only).
    pub ft_evals: Vec<usize>,
    /// Fraction of tokens computing at each step, recorded as steps run.
    pub active_history: Vec<f64>,
}

impl<T: Scalar> HaltingState<T> {
    pub fn new(
        h0: Tensor<T>,
        p_th: f64,
        max_steps: usize,
        variant: HaltingVariant,
    ) -> Result<Self> {
        if h0.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "halting: token matrix must be 2-D, got {:?}",
                h0.shape()
            )));
        }
        if max_steps == 0 {
            return Err(Error::InvalidArgument("halting: max_steps must be >= 1".into()));
        }
        let tokens = h0.shape()[0];
        Ok(HaltingState {
            p_cum: Tensor::zeros(vec![tokens]),
            y: Tensor::zeros(h0.shape().to_vec()),
            h: h0,
            status: vec![TokenStatus::Computing; tokens],
            step: 0,
            max_steps,
            p_th,
            variant,
            weight_log: vec![Vec::new(); tokens],
            ft_evals: vec![0; tokens],
            active_history: Vec::new(),
        })
    }

    pub fn tokens(&self) -> usize {
        self.status.len()
    }

    /// Indices of tokens that receive transformer compute this step.
    pub fn computing_indices(&self) -> Vec<usize> {
        self.status
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == TokenStatus::Computing)
            .map(|(i, _)| i)
            .collect()
    }

    /// True while any token still needs an update or a correction weight.
    pub fn needs_step(&self) -> bool {
        self.step < self.max_steps && self.status.iter().any(|s| *s != TokenStatus::Halted)
    }

    /// Apply one iteration of the halting recurrences.
    ///
    /// `h_new` is the full token matrix after this step's transformer update;
    /// rows of non-computing tokens must equal the frozen previous state
    /// (the layer guarantees this via scatter). `p_new` holds estimator
    /// outputs per token; entries for non-computing tokens are ignored.
    pub fn step_update(&mut self, h_new: Tensor<T>, p_new: Tensor<T>) -> Result<()> {
        if self.step >= self.max_steps {
            return Err(Error::InvalidArgument(format!(
                "halting: step_update past max_steps {}",
                self.max_steps
            )));
        }
        let tokens = self.tokens();
        if h_new.shape() != self.h.shape() || p_new.numel() != tokens {
            return Err(Error::Shape("halting: step_update shape mismatch".into()));
        }
        for &i in &self.computing_indices() {
            let p = p_new.data()[i].to_f64();
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "halting: estimator output {p} outside (0, 1] for token {i}"
                )));
            }
        }

        let computing_frac = self
            .status
            .iter()
            .filter(|s| **s == TokenStatus::Computing)
            .count() as f64
            / tokens as f64;
        self.active_history.push(computing_frac);

        let p_prev = self.p_cum.data();
        // Per-token branch decisions, on values only; the weights themselves
        // stay connected to the graph through p_new and p_cum.
        let mut take_p = vec![T::zero(); tokens]; // weight = p_new
        let mut take_rem = vec![T::zero(); tokens]; // weight = 1 - P_prev
        let mut next_status = self.status.clone();
        for i in 0..tokens {
            match self.status[i] {
                TokenStatus::Computing => {
                    self.ft_evals[i] += 1;
                    let p = p_new.data()[i].to_f64();
                    let crossing = p_prev[i].to_f64() + p > self.p_th;
                    if self.variant == HaltingVariant::Clamped && crossing {
                        take_rem[i] = T::one();
                        next_status[i] = TokenStatus::Halted;
                    } else {
                        take_p[i] = T::one();
                        next_status[i] = if crossing {
                            TokenStatus::Correcting
                        } else {
                            TokenStatus::Computing
                        };
                    }
                }
                TokenStatus::Correcting => {
                    take_rem[i] = T::one();
                    next_status[i] = TokenStatus::Halted;
                }
                TokenStatus::Halted => {}
            }
        }
        let mask_p = Tensor::from_vec(vec![tokens], take_p)?;
        let mask_rem = Tensor::from_vec(vec![tokens], take_rem)?;
        let ones = Tensor::full(vec![tokens], T::one());

        // w = p * mask_p + (1 - P_prev) * mask_rem
        let rem = ones.sub(&self.p_cum)?;
        let w = p_new.mul(&mask_p)?.add(&rem.mul(&mask_rem)?)?;

        // y += w ⊙ h
        self.y = self.y.add(&h_new.mul_col(&w)?)?;

        // P' = (P + p) for weighted tokens, exactly 1 for corrected tokens,
        // unchanged (== 1) for halted tokens.
        let mask_keep: Vec<T> = self
            .status
            .iter()
            .map(|s| {
                if *s == TokenStatus::Halted {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect();
        let mask_keep = Tensor::from_vec(vec![tokens], mask_keep)?;
        let advanced = self.p_cum.add(&p_new)?.mul(&mask_p)?;
        let kept = self.p_cum.mul(&mask_keep)?;
        self.p_cum = advanced.add(&mask_rem)?.add(&kept)?;

        for (i, log) in self.weight_log.iter_mut().enumerate() {
            if self.status[i] != TokenStatus::Halted {
                log.push(w.data()[i].to_f64());
            }
        }
        self.status = next_status;
        self.step += 1;
        Ok(())
    }

    /// Close out tokens still unhalted after the final iteration: each gets
    /// the remainder weight `1 - P` on its current state, making every
    /// weight sum exactly 1.
    pub fn finalize_remainder(&mut self) -> Result<()> {
        let unfinished: Vec<usize> = (0..self.tokens())
            .filter(|&i| self.status[i] != TokenStatus::Halted)
            .collect();
        if unfinished.is_empty() {
            return Ok(());
        }
        if self.step < self.max_steps {
            return Err(Error::InvalidArgument(format!(
                "halting: finalize_remainder at step {} of {}",
                self.step, self.max_steps
            )));
        }
        let tokens = self.tokens();
        let mask: Vec<T> = (0..tokens)
            .map(|i| {
                if self.status[i] != TokenStatus::Halted {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect();
        let mask = Tensor::from_vec(vec![tokens], mask)?;
        let ones = Tensor::full(vec![tokens], T::one());
        let w = ones.sub(&self.p_cum)?.mul(&mask)?;
        self.y = self.y.add(&self.h.mul_col(&w)?)?;
        // P := 1 for finalized tokens
        let keep = ones.sub(&mask)?;
        self.p_cum = self.p_cum.mul(&keep)?.add(&mask)?;
        for &i in &unfinished {
            self.weight_log[i].push(w.data()[i].to_f64());
            self.status[i] = TokenStatus::Halted;
        }
        Ok(())
    }

    /// Per-step fraction of tokens receiving transformer compute.
    pub fn survival_curve(&self) -> &[f64] {
        &self.active_history
    }

    pub fn weight_sum(&self, token: usize) -> f64 {
        self.weight_log[token].iter().sum()
    }

    pub fn mean_depth(&self) -> f64 {
        self.ft_evals.iter().sum::<usize>() as f64 / self.ft_evals.len() as f64
    }
}

/// Write a survival curve as CSV (step, active_fraction).
pub fn write_survival_csv(path: &std::path::Path, curve: &[f64]) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "step,active_fraction")?;
    for (i, v) in curve.iter().enumerate() {
        writeln!(f, "{},{:.6}", i + 1, v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const H: usize = 3;

    fn run_constant_p(
        p: f64,
        p_th: f64,
        max_steps: usize,
        variant: HaltingVariant,
    ) -> HaltingState<f64> {
        let tokens = 2;
        let h0 = Tensor::full(vec![tokens, H], 1.0);
        let mut state = HaltingState::new(h0, p_th, max_steps, variant).unwrap();
        while state.needs_step() {
            let h_new = state.h.clone();
            let p_new = Tensor::full(vec![tokens], p);
            state.step_update(h_new, p_new).unwrap();
        }
        state.finalize_remainder().unwrap();
        state
    }

    #[test]
    fn hand_trace_constant_half() {
        // P: 0 -> 0.5 -> 1.0; correction weight (1 - 1.0) = 0 at step 3
        let state = run_constant_p(0.5, 0.9, 16, HaltingVariant::PaperLiteral);
        assert_eq!(state.weight_log[0], vec![0.5, 0.5, 0.0]);
        assert_eq!(state.ft_evals[0], 2);
        assert!((state.weight_sum(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_trace_constant_point_four_goes_negative() {
        // P: 0 -> .4 -> .8 -> 1.2; delayed correction (1 - 1.2) = -0.2
        let state = run_constant_p(0.4, 0.9, 16, HaltingVariant::PaperLiteral);
        let expected = [0.4, 0.4, 0.4, -0.2];
        assert_eq!(state.weight_log[0].len(), 4);
        for (w, e) in state.weight_log[0].iter().zip(expected) {
            assert!((w - e).abs() < 1e-9, "{:?}", state.weight_log[0]);
        }
        assert_eq!(state.ft_evals[0], 3);
        assert!((state.weight_sum(0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn clamped_variant_applies_remainder_at_crossing() {
        let state = run_constant_p(0.4, 0.9, 16, HaltingVariant::Clamped);
        let expected = [0.4, 0.4, 0.2];
        assert_eq!(state.weight_log[0].len(), 3);
        for (w, e) in state.weight_log[0].iter().zip(expected) {
            assert!((w - e).abs() < 1e-9, "{:?}", state.weight_log[0]);
        }
        assert_eq!(state.ft_evals[0], 3);
        assert!((state.weight_sum(0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn estimator_one_halts_after_single_evaluation() {
        let state = run_constant_p(1.0, 0.9, 16, HaltingVariant::PaperLiteral);
        assert_eq!(state.ft_evals[0], 1);
        // y == h^(1) exactly: weight 1 then a zero correction
        for &v in state.y.data() {
            assert_eq!(v, 1.0);
        }
        assert!((state.weight_sum(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn remainder_finalization_at_max_steps() {
        // p = 0.2, N = 3: P reaches 0.6, remainder 0.4 applied to final h
        let state = run_constant_p(0.2, 0.9, 3, HaltingVariant::PaperLiteral);
        let expected = [0.2, 0.2, 0.2, 0.4];
        for (w, e) in state.weight_log[0].iter().zip(expected) {
            assert!((w - e).abs() < 1e-9, "{:?}", state.weight_log[0]);
        }
        assert!((state.weight_sum(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn finalize_with_no_active_tokens_is_noop() {
        let mut state = run_constant_p(0.5, 0.9, 16, HaltingVariant::PaperLiteral);
        let y_before = state.y.data().to_vec();
        state.finalize_remainder().unwrap();
        assert_eq!(state.y.data(), &y_before[..]);
    }

    #[test]
    fn finalize_before_max_steps_with_active_tokens_is_error() {
        let h0 = Tensor::<f64>::full(vec![2, H], 1.0);
        let mut state = HaltingState::new(h0, 0.9, 5, HaltingVariant::PaperLiteral).unwrap();
        assert!(state.finalize_remainder().is_err());
    }

    #[test]
    fn near_zero_estimator_concentrates_weight_on_last_state() {
        let state = run_constant_p(1e-6, 0.9, 4, HaltingVariant::PaperLiteral);
        // almost all weight lands on the final h via the remainder
        let last = *state.weight_log[0].last().unwrap();
        assert!(last > 0.999);
        assert!((state.weight_sum(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn step_past_max_is_error() {
        let mut state = run_constant_p(0.2, 0.9, 2, HaltingVariant::PaperLiteral);
        let h = state.h.clone();
        let p = Tensor::full(vec![2], 0.2);
        assert!(state.step_update(h, p).is_err());
    }

    #[test]
    fn out_of_range_estimator_is_error() {
        let h0 = Tensor::<f64>::full(vec![2, H], 1.0);
        let mut state = HaltingState::new(h0, 0.9, 4, HaltingVariant::PaperLiteral).unwrap();
        let h = state.h.clone();
        assert!(state
            .step_update(h.clone(), Tensor::full(vec![2], 0.0))
            .is_err());
        assert!(state
            .step_update(h, Tensor::full(vec![2], 1.5))
            .is_err());
    }

    #[test]
    fn survival_curve_is_step_function_for_constant_p() {
        let state = run_constant_p(0.4, 0.9, 16, HaltingVariant::PaperLiteral);
        // computing at steps 1..3, correction-only at step 4
        assert_eq!(state.survival_curve(), &[1.0, 1.0, 1.0, 0.0]);
        let curve = state.survival_curve();
        for w in curve.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn high_threshold_means_no_early_halt() {
        // P_th >= N * max(p): every token computes all N steps
        let state = run_constant_p(0.1, 10.0, 4, HaltingVariant::PaperLiteral);
        assert_eq!(state.ft_evals[0], 4);
        assert!((state.weight_sum(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn halted_tokens_never_reactivate_and_h_is_frozen() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let tokens = 8;
        let h0 = Tensor::<f64>::from_vec(
            vec![tokens, H],
            (0..tokens * H).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let mut state = HaltingState::new(h0, 0.9, 16, HaltingVariant::PaperLiteral).unwrap();
        let mut halted_at: Vec<Option<Vec<f64>>> = vec![None; tokens];
        let mut prev_active = tokens;
        while state.needs_step() {
            // only computing rows change
            let computing = state.computing_indices();
            assert!(computing.len() <= prev_active);
            prev_active = computing.len();
            let mut h_data = state.h.data().to_vec();
            for &i in &computing {
                for j in 0..H {
                    h_data[i * H + j] += rng.gen_range(-0.1..0.1);
                }
            }
            let h_new = Tensor::from_vec(vec![tokens, H], h_data).unwrap();
            let p: Vec<f64> = (0..tokens).map(|_| rng.gen_range(0.1..0.9)).collect();
            state
                .step_update(h_new.clone(), Tensor::from_vec(vec![tokens], p).unwrap())
                .unwrap();
            state.h = h_new;
            for i in 0..tokens {
                if state.status[i] == TokenStatus::Halted {
                    let row = state.h.data()[i * H..(i + 1) * H].to_vec();
                    match &halted_at[i] {
                        None => halted_at[i] = Some(row),
                        Some(frozen) => assert_eq!(frozen, &row, "halted h must stay frozen"),
                    }
                }
            }
        }
        state.finalize_remainder().unwrap();
        for i in 0..tokens {
            assert!((state.weight_sum(i) - 1.0).abs() < 1e-9);
        }
    }
}
