use super::{NumericError, Scalar};
use crate::rng::Lcg;

/// Row-major dense array with a same-shaped gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar = f32> {
    shape: Vec<usize>,
    values: Vec<S>,
    grad: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, values: Vec<S>) -> Result<Self, NumericError> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || numel != values.len() {
            return Err(NumericError::ShapeMismatch {
                op: "tensor",
                detail: format!("shape {shape:?} with {} values", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NumericError::NonFinite { op: "tensor" });
        }
        Ok(Self {
            grad: vec![S::zero(); numel],
            shape,
            values,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self::new(shape, vec![S::zero(); numel]).expect("positive shape")
    }

    pub fn scalar(x: S) -> Self {
        Self::new(vec![1], vec![x]).expect("scalar shape")
    }

    /// Uniform in `[-bound, bound)`.
    pub fn uniform(shape: Vec<usize>, bound: f64, rng: &mut Lcg) -> Self {
        let numel = shape.iter().product();
        let values = (0..numel)
            .map(|_| S::of((2.0 * rng.next_f64() - 1.0) * bound))
            .collect();
        Self::new(shape, values).expect("positive shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn grad(&self) -> &[S] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [S] {
        &mut self.grad
    }

    /// Simultaneous mutable access to values and gradient.
    pub fn split_mut(&mut self) -> (&mut [S], &mut [S]) {
        (&mut self.values, &mut self.grad)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = S::zero());
    }

    pub fn fill(&mut self, x: S) {
        self.values.iter_mut().for_each(|v| *v = x);
    }

    /// Converts element type; the gradient buffer is reset.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| T::of(v.as_f64())).collect(),
            grad: vec![T::zero(); self.values.len()],
        }
    }
}

/// A fixed, ordered collection of trainable tensors. The order defines the
/// parameter slots used by [`super::Tape::param`].
pub trait ParameterSet<S: Scalar> {
    fn tensors(&self) -> Vec<&Tensor<S>>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>>;

    fn zero_grads(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }
}

impl<S: Scalar> ParameterSet<S> for Vec<Tensor<S>> {
    fn tensors(&self) -> Vec<&Tensor<S>> {
        self.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.iter_mut().collect()
    }
}
