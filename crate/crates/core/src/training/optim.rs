use super::TrainError;
use crate::numeric::{ParameterSet, Scalar};

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity<S: Scalar = f32> {
    buffers: Vec<Vec<S>>,
}

impl<S: Scalar> Velocity<S> {
    pub fn zeros_like<P: ParameterSet<S> + ?Sized>(params: &P) -> Self {
        Self {
            buffers: params.tensors().iter().map(|t| vec![S::zero(); t.numel()]).collect(),
        }
    }
}

/// L2 norm of all gradients together, accumulated in f64.
pub fn global_norm<S: Scalar, P: ParameterSet<S> + ?Sized>(params: &P) -> f64 {
    params
        .tensors()
        .iter()
        .flat_map(|t| t.grad().iter())
        .map(|g| {
            let g = g.as_f64();
            g * g
        })
        .sum::<f64>()
        .sqrt()
}

/// Clips the global gradient norm to `clip_norm`, then `v <- momentum * v + g`,
/// `p <- p - lr * v`, and zeroes the gradients. A non-finite gradient leaves
/// parameters and velocity untouched. Returns the pre-clip norm.
pub fn sgd_momentum_step<S: Scalar, P: ParameterSet<S> + ?Sized>(
    params: &mut P,
    velocity: &mut Velocity<S>,
    lr: f64,
    momentum: f64,
    clip_norm: f64,
    step: usize,
) -> Result<f64, TrainError> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(TrainError::InvalidConfig(format!("learning rate must be positive, got {lr}")));
    }
    let norm = global_norm(params);
    if !norm.is_finite() {
        return Err(TrainError::NonFiniteGradient { step });
    }
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    let (scale, lr, momentum) = (S::of(scale), S::of(lr), S::of(momentum));
    for (t, v) in params.tensors_mut().into_iter().zip(&mut velocity.buffers) {
        let (values, grads) = t.split_mut();
        for ((p, g), v) in values.iter_mut().zip(grads.iter_mut()).zip(v.iter_mut()) {
            *v = momentum * *v + *g * scale;
            *p -= lr * *v;
            *g = S::zero();
        }
    }
    Ok(norm)
}

/// Linear warmup to `base_lr` over `warmup_steps`, then `base_lr * sqrt(warmup / step)`.
/// Steps count from 1.
pub fn lr_schedule(step: usize, base_lr: f64, warmup_steps: usize) -> f64 {
    let step = step.max(1) as f64;
    let warmup = warmup_steps.max(1) as f64;
    if step <= warmup {
        base_lr * step / warmup
    } else {
        base_lr * (warmup / step).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    fn scalar_param(p: f64, g: f64) -> Vec<Tensor<f64>> {
        let mut t = Tensor::new(vec![1], vec![p]).unwrap();
        t.grad_mut()[0] = g;
        vec![t]
    }

    #[test]
    fn vanilla_step() {
        let mut params = scalar_param(1.0, 2.0);
        let mut v = Velocity::zeros_like(&params);
        sgd_momentum_step(&mut params, &mut v, 0.1, 0.0, 5.0, 1).unwrap();
        assert!((params[0].values()[0] - 0.8).abs() < 1e-15);
        assert_eq!(params[0].grad()[0], 0.0);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut params = scalar_param(1.5, 0.0);
        let mut v = Velocity::zeros_like(&params);
        sgd_momentum_step(&mut params, &mut v, 0.1, 0.9, 5.0, 1).unwrap();
        assert_eq!(params[0].values()[0], 1.5);
    }

    #[test]
    fn clipping_rescales_to_unit_norm() {
        let mut a: Vec<Tensor<f64>> = vec![Tensor::new(vec![2], vec![0.0, 0.0]).unwrap()];
        a[0].grad_mut().copy_from_slice(&[6.0, 8.0]);
        let mut b = a.clone();
        b[0].grad_mut().copy_from_slice(&[0.6, 0.8]);
        let (mut va, mut vb) = (Velocity::zeros_like(&a), Velocity::zeros_like(&b));
        assert_eq!(sgd_momentum_step(&mut a, &mut va, 0.5, 0.0, 1.0, 1).unwrap(), 10.0);
        sgd_momentum_step(&mut b, &mut vb, 0.5, 0.0, 1.0, 1).unwrap();
        for (x, y) in a[0].values().iter().zip(b[0].values()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn momentum_accumulates() {
        let mut params = scalar_param(0.0, 1.0);
        let mut v = Velocity::zeros_like(&params);
        sgd_momentum_step(&mut params, &mut v, 1.0, 0.5, 10.0, 1).unwrap();
        params[0].grad_mut()[0] = 1.0;
        sgd_momentum_step(&mut params, &mut v, 1.0, 0.5, 10.0, 2).unwrap();
        assert_eq!(params[0].values()[0], -2.5);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut params = scalar_param(1.0, f64::NAN);
        let mut v = Velocity::zeros_like(&params);
        let err = sgd_momentum_step(&mut params, &mut v, 0.1, 0.9, 5.0, 7).unwrap_err();
        assert_eq!(err, TrainError::NonFiniteGradient { step: 7 });
        assert_eq!(params[0].values()[0], 1.0);
    }

    #[test]
    fn descent_on_quadratic() {
        // f(p) = sum p_i^2 / 2, grad = p
        let mut params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let mut v = Velocity::zeros_like(&params);
        let f = |p: &[Tensor<f64>]| p[0].values().iter().map(|x| x * x / 2.0).sum::<f64>();
        let mut last = f(&params);
        for step in 1..50 {
            let vals = params[0].values().to_vec();
            params[0].grad_mut().copy_from_slice(&vals);
            sgd_momentum_step(&mut params, &mut v, 0.1, 0.0, 100.0, step).unwrap();
            let now = f(&params);
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn schedule_shape() {
        assert_eq!(lr_schedule(10, 0.4, 10), 0.4);
        assert_eq!(lr_schedule(40, 0.4, 10), 0.2);
        assert_eq!(lr_schedule(5, 0.4, 10), 0.2);
        assert_eq!(lr_schedule(1, 0.4, 10), 0.04);
    }
}
