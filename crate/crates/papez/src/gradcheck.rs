//! Central finite-difference verification of analytic gradients.
//!
//! Runs in 64-bit mode with step 1e-5. Every differentiable primitive is
//! checked against the numerical derivative of a randomly weighted scalar
//! readout of its output; inputs are drawn U[-1,1] (shifted off the kink for
//! relu/prelu) over several seeds.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{instance_norm, layer_norm, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const DEFAULT_SEEDS: u64 = 5;

/// Outcome of checking one primitive across all seeds.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-6 {
        (a - n).abs()
    } else {
        (a - n).abs() / scale
    }
}

/// Max relative error between analytic and central finite-difference
/// gradients of `loss_fn` with respect to every coordinate of `inputs`.
pub fn max_gradient_error<F>(inputs: &[Tensor<f64>], loss_fn: F) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let loss = loss_fn(inputs)?;
    let grads = loss.backward()?;
    let mut worst = 0.0f64;
    for (which, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(input)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        for coord in 0..input.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let mut perturbed: Vec<Tensor<f64>> = inputs.to_vec();
                let mut data = input.data().to_vec();
                data[coord] += delta;
                perturbed[which] = Tensor::leaf(input.shape().to_vec(), data, true)?;
                Ok(loss_fn(&perturbed)?.item())
            };
            let numeric = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[coord], numeric));
        }
    }
    Ok(worst)
}

/// Spot-check a random subset of coordinates; used for expensive end-to-end
/// graphs where the full sweep is infeasible.
pub fn sampled_gradient_error<F>(
    inputs: &[Tensor<f64>],
    loss_fn: F,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let loss = loss_fn(inputs)?;
    let grads = loss.backward()?;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let which = rng.gen_range(0..inputs.len());
        let input = &inputs[which];
        let coord = rng.gen_range(0..input.numel());
        let analytic = grads.get(input).map(|g| g[coord]).unwrap_or(0.0);
        let eval = |delta: f64| -> Result<f64> {
            let mut perturbed: Vec<Tensor<f64>> = inputs.to_vec();
            let mut data = input.data().to_vec();
            data[coord] += delta;
            perturbed[which] = Tensor::leaf(input.shape().to_vec(), data, true)?;
            Ok(loss_fn(&perturbed)?.item())
        };
        let numeric = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic, numeric));
    }
    Ok(worst)
}

fn rand_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::leaf(shape, data, true).unwrap()
}

/// U[-1,1] shifted away from zero, for ops with a kink at the origin.
fn rand_tensor_off_origin(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let x: f64 = rng.gen_range(-1.0..1.0);
            x + 0.05 * x.signum()
        })
        .collect();
    Tensor::leaf(shape, data, true).unwrap()
}

fn rand_tensor_positive(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.2)).collect();
    Tensor::leaf(shape, data, true).unwrap()
}

/// Deterministic readout so every output coordinate contributes to the
/// scalar loss with a distinct weight.
fn weighted_sum(out: &Tensor<f64>) -> Result<Tensor<f64>> {
    let n = out.numel();
    let data: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7391 + 0.31).sin()).collect();
    let w = Tensor::from_vec(out.shape().to_vec(), data)?;
    out.mul(&w)?.sum_all()
}

type Case = (
    &'static str,
    fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
    fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
);

fn cases() -> Vec<Case> {
    vec![
        ("add", |r| vec![rand_tensor(vec![3, 4], r), rand_tensor(vec![3, 4], r)], |x| {
            weighted_sum(&x[0].add(&x[1])?)
        }),
        ("sub", |r| vec![rand_tensor(vec![3, 4], r), rand_tensor(vec![3, 4], r)], |x| {
            weighted_sum(&x[0].sub(&x[1])?)
        }),
        ("mul", |r| vec![rand_tensor(vec![3, 4], r), rand_tensor(vec![3, 4], r)], |x| {
            weighted_sum(&x[0].mul(&x[1])?)
        }),
        ("div", |r| vec![rand_tensor(vec![3, 4], r), rand_tensor_positive(vec![3, 4], r)], |x| {
            weighted_sum(&x[0].div(&x[1])?)
        }),
        ("add_scalar_broadcast", |r| vec![rand_tensor(vec![1], r), rand_tensor(vec![3, 4], r)], |x| {
            weighted_sum(&x[0].add(&x[1])?)
        }),
        ("mul_scalar_broadcast", |r| vec![rand_tensor(vec![3, 4], r), rand_tensor(vec![1], r)], |x| {
            weighted_sum(&x[0].mul(&x[1])?)
        }),
        ("neg", |r| vec![rand_tensor(vec![5], r)], |x| {
            weighted_sum(&x[0].neg()?)
        }),
        ("scale", |r| vec![rand_tensor(vec![5], r)], |x| {
            weighted_sum(&x[0].scale(1.7)?)
        }),
        ("relu", |r| vec![rand_tensor_off_origin(vec![4, 4], r)], |x| {
            weighted_sum(&x[0].relu()?)
        }),
        ("sigmoid", |r| vec![rand_tensor(vec![4, 4], r)], |x| {
            weighted_sum(&x[0].sigmoid()?)
        }),
        ("tanh", |r| vec![rand_tensor(vec![4, 4], r)], |x| {
            weighted_sum(&x[0].tanh()?)
        }),
        ("exp", |r| vec![rand_tensor(vec![4, 4], r)], |x| {
            weighted_sum(&x[0].exp()?)
        }),
        ("ln", |r| vec![rand_tensor_positive(vec![4, 4], r)], |x| {
            weighted_sum(&x[0].ln()?)
        }),
        ("powf", |r| vec![rand_tensor_positive(vec![4, 4], r)], |x| {
            weighted_sum(&x[0].powf(-0.5)?)
        }),
        ("prelu", |r| vec![rand_tensor_off_origin(vec![4, 4], r), rand_tensor(vec![1], r)], |x| {
            weighted_sum(&x[0].prelu(&x[1])?)
        }),
        ("matmul", |r| vec![rand_tensor(vec![3, 4], r), rand_tensor(vec![4, 5], r)], |x| {
            weighted_sum(&x[0].matmul(&x[1])?)
        }),
        ("matmul_nt", |r| vec![rand_tensor(vec![3, 4], r), rand_tensor(vec![5, 4], r)], |x| {
            weighted_sum(&x[0].matmul_nt(&x[1])?)
        }),
        ("transpose", |r| vec![rand_tensor(vec![3, 5], r)], |x| {
            weighted_sum(&x[0].transpose()?)
        }),
        ("reshape", |r| vec![rand_tensor(vec![3, 4], r)], |x| {
            weighted_sum(&x[0].reshape(vec![2, 6])?)
        }),
        ("add_row", |r| vec![rand_tensor(vec![3, 4], r), rand_tensor(vec![4], r)], |x| {
            weighted_sum(&x[0].add_row(&x[1])?)
        }),
        ("mul_row", |r| vec![rand_tensor(vec![3, 4], r), rand_tensor(vec![4], r)], |x| {
            weighted_sum(&x[0].mul_row(&x[1])?)
        }),
        ("add_col", |r| vec![rand_tensor(vec![3, 4], r), rand_tensor(vec![3], r)], |x| {
            weighted_sum(&x[0].add_col(&x[1])?)
        }),
        ("mul_col", |r| vec![rand_tensor(vec![3, 4], r), rand_tensor(vec![3], r)], |x| {
            weighted_sum(&x[0].mul_col(&x[1])?)
        }),
        ("sum_all", |r| vec![rand_tensor(vec![3, 4], r)], |x| x[0].sum_all()),
        ("mean_all", |r| vec![rand_tensor(vec![3, 4], r)], |x| x[0].mean_all()),
        ("row_mean", |r| vec![rand_tensor(vec![3, 6], r)], |x| {
            weighted_sum(&x[0].row_mean()?)
        }),
        ("softmax_rows", |r| vec![rand_tensor(vec![4, 6], r)], |x| {
            weighted_sum(&x[0].softmax_rows(None)?)
        }),
        ("softmax_rows_masked", |r| vec![rand_tensor(vec![4, 6], r)], |x| {
            let mask = [false, false, true, false, true, false];
            weighted_sum(&x[0].softmax_rows(Some(&mask))?)
        }),
        ("concat_rows", |r| vec![rand_tensor(vec![2, 4], r), rand_tensor(vec![3, 4], r)], |x| {
            weighted_sum(&Tensor::concat_rows(&[x[0].clone(), x[1].clone()])?)
        }),
        ("slice_rows", |r| vec![rand_tensor(vec![5, 4], r)], |x| {
            weighted_sum(&x[0].slice_rows(1..4)?)
        }),
        ("concat_cols", |r| vec![rand_tensor(vec![3, 2], r), rand_tensor(vec![3, 4], r)], |x| {
            weighted_sum(&Tensor::concat_cols(&[x[0].clone(), x[1].clone()])?)
        }),
        ("slice_cols", |r| vec![rand_tensor(vec![3, 6], r)], |x| {
            weighted_sum(&x[0].slice_cols(2..5)?)
        }),
        ("gather_rows", |r| vec![rand_tensor(vec![5, 3], r)], |x| {
            weighted_sum(&x[0].gather_rows(&[4, 0, 2, 0])?)
        }),
        ("scatter_rows", |r| vec![rand_tensor(vec![5, 3], r), rand_tensor(vec![2, 3], r)], |x| {
            weighted_sum(&x[0].scatter_rows(&[1, 3], &x[1])?)
        }),
        ("conv1d", |r| vec![rand_tensor(vec![2, 12], r), rand_tensor(vec![3, 2, 4], r)], |x| {
            weighted_sum(&x[0].conv1d(&x[1], 2)?)
        }),
        ("conv_transpose1d", |r| vec![rand_tensor(vec![3, 5], r), rand_tensor(vec![3, 2, 4], r)], |x| {
            weighted_sum(&x[0].conv_transpose1d(&x[1], 2)?)
        }),
        ("layer_norm", |r| vec![rand_tensor(vec![3, 6], r), rand_tensor_positive(vec![6], r), rand_tensor(vec![6], r)], |x| {
            weighted_sum(&layer_norm(&x[0], &x[1], &x[2], 1e-5)?)
        }),
        ("instance_norm", |r| vec![rand_tensor(vec![3, 8], r), rand_tensor_positive(vec![3], r), rand_tensor(vec![3], r)], |x| {
            weighted_sum(&instance_norm(&x[0], &x[1], &x[2], 1e-5)?)
        }),
    ]
}

/// Run the full primitive suite over `seeds` seeds.
pub fn check_all_primitives(seeds: u64) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    for (name, make_inputs, forward) in cases() {
        let mut worst = 0.0f64;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(0x9a3e_5000 + seed);
            let inputs = make_inputs(&mut rng);
            let err = max_gradient_error(&inputs, forward)?;
            worst = worst.max(err);
        }
        results.push(CheckResult {
            name: name.to_string(),
            max_rel_err: worst,
            pass: worst < PRIMITIVE_TOL,
        });
    }
    Ok(results)
}
