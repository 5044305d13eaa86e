//! Dense row-major tensors with reverse-mode gradient evaluation.
//!
//! Every layer in the crate is built from these primitives. A [`Tensor`] is an
//! immutable node in a dynamically recorded computation graph; calling an op
//! on tensors that require gradients records a backward closure, and
//! [`Tensor::backward`] walks the graph in reverse topological (creation)
//! order so gradient accumulation is deterministic.

mod conv;
mod ops;

pub use conv::{conv1d_out_len, conv_transpose1d_out_len};
pub use ops::{instance_norm, layer_norm, mean_tensors};

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Floating-point element type of a graph. The whole graph runs in one
/// precision mode; f32 is the runtime default, f64 is used by the
/// finite-difference suite.
pub trait Scalar:
    num_traits::Float + std::iter::Sum + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    const BITS: u32;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const BITS: u32 = 32;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const BITS: u32 = 64;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Gradient contributions for the parents of one node, produced by its
/// backward closure. `None` means "no gradient flows to this parent".
type ParentGrads<T> = Vec<Option<Vec<T>>>;

type BackwardFn<T> = Box<dyn Fn(&[T]) -> ParentGrads<T>>;

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Dense n-dimensional real array, row-major. Cheap to clone (shared storage).
#[derive(Clone)]
pub struct Tensor<T: Scalar>(Rc<Inner<T>>);

/// Map from leaf tensor id to its accumulated gradient.
pub struct GradMap<T: Scalar> {
    grads: HashMap<u64, Vec<T>>,
}

impl<T: Scalar> GradMap<T> {
    pub fn get(&self, tensor: &Tensor<T>) -> Option<&[T]> {
        self.grads.get(&tensor.id()).map(|g| g.as_slice())
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("data", &self.0.data)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    /// Leaf tensor. `requires_grad` marks it as a gradient target.
    pub fn leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "leaf: shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("leaf: zero dimension in {:?}", shape)));
        }
        check_finite("leaf", &data)?;
        Ok(Tensor(Rc::new(Inner {
            id: fresh_id(),
            shape,
            data,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        })))
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        Self::leaf(shape, data, false)
    }

    pub fn scalar(x: T) -> Self {
        Self::leaf(vec![1], vec![x], false).expect("scalar is always valid")
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::leaf(shape, vec![T::zero(); n], false).expect("zeros shape")
    }

    pub fn full(shape: Vec<usize>, x: T) -> Self {
        let n = shape.iter().product();
        Self::leaf(shape, vec![x; n], false).expect("full shape")
    }

    pub(crate) fn op(
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Result<Self> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        check_finite(name, &data)?;
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        if requires_grad {
            Ok(Tensor(Rc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                requires_grad: true,
                parents,
                backward: Some(backward),
            })))
        } else {
            // No gradient target below: keep the value, drop the graph.
            Ok(Tensor(Rc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                requires_grad: false,
                parents: Vec::new(),
                backward: None,
            })))
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value copy detached from the graph.
    pub fn detach(&self) -> Tensor<T> {
        Tensor(Rc::new(Inner {
            id: fresh_id(),
            shape: self.0.shape.clone(),
            data: self.0.data.clone(),
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.0.data[0]
    }

    pub fn rows(&self) -> usize {
        self.0.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.0.shape.len(), 2);
        self.0.shape[1]
    }

    /// Reverse-mode gradients of a scalar loss with respect to every
    /// reachable leaf that requires a gradient. Accumulation follows reverse
    /// creation order, so repeated runs are bit-identical.
    pub fn backward(&self) -> Result<GradMap<T>> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.0.shape
            )));
        }
        // Postorder DFS over the recorded graph (iterative; graphs can be deep).
        let mut topo: Vec<Tensor<T>> = Vec::new();
        let mut seen: HashMap<u64, ()> = HashMap::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        while let Some((node, child)) = stack.pop() {
            if child == 0 {
                if seen.contains_key(&node.id()) {
                    continue;
                }
                seen.insert(node.id(), ());
            }
            if child < node.0.parents.len() {
                let next = node.0.parents[child].clone();
                stack.push((node, child + 1));
                if !seen.contains_key(&next.id()) && next.0.requires_grad {
                    stack.push((next, 0));
                }
            } else {
                topo.push(node);
            }
        }

        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        for node in topo.iter().rev() {
            let Some(grad_out) = grads.get(&node.id()).cloned() else {
                continue;
            };
            let Some(backward) = node.0.backward.as_ref() else {
                continue;
            };
            let contribs = backward(&grad_out);
            debug_assert_eq!(contribs.len(), node.0.parents.len());
            for (parent, contrib) in node.0.parents.iter().zip(contribs) {
                let Some(contrib) = contrib else { continue };
                if !parent.0.requires_grad {
                    continue;
                }
                debug_assert_eq!(contrib.len(), parent.numel());
                let slot = grads
                    .entry(parent.id())
                    .or_insert_with(|| vec![T::zero(); parent.numel()]);
                for (s, c) in slot.iter_mut().zip(contrib) {
                    *s = *s + c;
                }
            }
        }
        Ok(GradMap { grads })
    }
}

pub(crate) fn check_finite<T: Scalar>(op: &str, data: &[T]) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn matmul_identity_passthrough() {
        let eye = t64(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let b = t64(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = eye.matmul(&b).unwrap();
        assert_eq!(out.data(), b.data());
    }

    #[test]
    fn matmul_hand_oracle() {
        let a = t64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = t64(vec![2, 1], vec![1.0, 1.0]);
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch_is_error() {
        let a = Tensor::<f64>::zeros(vec![2, 3]);
        let b = Tensor::<f64>::zeros(vec![4, 5]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn conv1d_length_formula() {
        let x = Tensor::<f64>::zeros(vec![1, 8000]);
        let w = Tensor::<f64>::full(vec![4, 1, 16], 0.1);
        let out = x.conv1d(&w, 8).unwrap();
        assert_eq!(out.shape(), &[4, 999]);
        assert_eq!(conv1d_out_len(8000, 16, 8), 999);
    }

    #[test]
    fn conv1d_pointwise_identity_channel_map() {
        let x = t64(vec![2, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        // 2->2 channel identity, k=1
        let w = t64(vec![2, 2, 1], vec![1.0, 0.0, 0.0, 1.0]);
        let out = x.conv1d(&w, 1).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn conv1d_hand_oracle() {
        let x = t64(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let w = t64(vec![1, 1, 2], vec![1.0, 1.0]);
        let out = x.conv1d(&w, 2).unwrap();
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn conv1d_too_short_input_is_error() {
        let x = Tensor::<f64>::zeros(vec![1, 15]);
        let w = Tensor::<f64>::zeros(vec![1, 1, 16]);
        assert!(x.conv1d(&w, 8).is_err());
    }

    #[test]
    fn conv_transpose_inverts_length() {
        let x = Tensor::<f64>::zeros(vec![3, 999]);
        let w = Tensor::<f64>::full(vec![3, 1, 16], 0.1);
        let out = x.conv_transpose1d(&w, 8).unwrap();
        assert_eq!(out.shape(), &[1, 8000]);
        assert_eq!(conv_transpose1d_out_len(999, 16, 8), 8000);
    }

    #[test]
    fn conv_transpose_pointwise_identity() {
        let x = t64(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let w = t64(vec![1, 1, 1], vec![1.0]);
        let out = x.conv_transpose1d(&w, 1).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn conv_adjoint_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let x: Vec<f64> = (0..2 * 20).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..3 * 2 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = t64(vec![2, 20], x);
            let w = t64(vec![3, 2, 4], w);
            let fx = x.conv1d(&w, 2).unwrap(); // 3 x 9
            let y: Vec<f64> = (0..3 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = t64(vec![3, 9], y);
            let wty = y.conv_transpose1d(&w, 2).unwrap(); // 2 x 20
            let lhs: f64 = fx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(wty.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "adjoint broke: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero_then_beta() {
        let x = Tensor::<f64>::full(vec![1, 4], 3.5);
        let gamma = Tensor::<f64>::full(vec![4], 1.0);
        let beta = Tensor::<f64>::zeros(vec![4]);
        let out = layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        for &v in out.data() {
            assert!(v.abs() < 1e-6);
        }
        let beta = Tensor::<f64>::full(vec![4], 2.25);
        let out = layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        for &v in out.data() {
            assert!((v - 2.25).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_two_point_row() {
        let x = t64(vec![1, 2], vec![1.0, 3.0]);
        let gamma = Tensor::<f64>::full(vec![2], 1.0);
        let beta = Tensor::<f64>::zeros(vec![2]);
        let out = layer_norm(&x, &gamma, &beta, 1e-12).unwrap();
        assert!((out.data()[0] + 1.0).abs() < 1e-5);
        assert!((out.data()[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn backward_linear_grad_is_input() {
        let w = Tensor::leaf(vec![1, 3], vec![0.5, -0.2, 0.1], true).unwrap();
        let x = t64(vec![1, 3], vec![2.0, 3.0, 4.0]);
        let loss = w.mul(&x).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        assert_eq!(grads.get(&w).unwrap(), x.data());
    }

    #[test]
    fn backward_squared_norm_grad_is_2w() {
        let w = Tensor::<f64>::leaf(vec![4], vec![1.0, -2.0, 0.5, 3.0], true).unwrap();
        let loss = w.mul(&w).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let g = grads.get(&w).unwrap();
        for (&gi, &wi) in g.iter().zip(w.data()) {
            assert!((gi - 2.0 * wi).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let w = Tensor::<f64>::leaf(vec![2], vec![1.0, 2.0], true).unwrap();
        assert!(w.backward().is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = t64(vec![2, 4], vec![0.1, -0.4, 2.0, 0.3, 1.0, 1.0, 1.0, 1.0]);
        let s = x.softmax_rows(None).unwrap();
        for row in s.data().chunks(4) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
        let masked = x.softmax_rows(Some(&[false, true, false, false])).unwrap();
        for row in masked.data().chunks(4) {
            assert_eq!(row[1], 0.0);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_forward_is_error() {
        let x = t64(vec![1], vec![-1.0]);
        assert!(x.ln().is_err());
        let big = t64(vec![1], vec![1e308]);
        assert!(big.mul(&big).is_err());
    }

    #[test]
    fn ops_are_deterministic() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let a: Vec<f64> = (0..64 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..64 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let at = t64(vec![64, 64], a);
        let bt = t64(vec![64, 64], b);
        let c1 = at.matmul(&bt).unwrap();
        let c2 = at.matmul(&bt).unwrap();
        assert_eq!(c1.data(), c2.data());
    }
}
