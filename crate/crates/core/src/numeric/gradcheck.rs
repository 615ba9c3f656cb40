use super::{NumericError, ParameterSet, Scalar, Tape, Var};
use crate::rng::Lcg;

/// Coordinates probed per tensor (all of them when a tensor is smaller).
pub const MIN_SAMPLES_PER_TENSOR: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |a - n| / max(|a|, |n|, 1e-8)` over every probed coordinate.
    pub max_rel_error: f64,
    pub coordinates_checked: usize,
    /// `(tensor slot, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compares tape gradients with central differences `(f(p+e) - f(p-e)) / 2e`.
///
/// `loss` records the objective on the supplied tape (binding parameters via
/// [`Tape::param`] / [`Tape::params`]) and returns the scalar loss variable.
/// Gradients already present in `params` are cleared.
pub fn grad_check<S, P, F>(
    params: &mut P,
    eps: f64,
    seed: u64,
    samples_per_tensor: usize,
    mut loss: F,
) -> Result<GradCheckReport, NumericError>
where
    S: Scalar,
    P: ParameterSet<S>,
    F: FnMut(&P, &mut Tape<S>) -> Result<Var, NumericError>,
{
    if !(1e-4..=1e-2).contains(&eps) {
        return Err(NumericError::InvalidArgument(format!("eps {eps} outside [1e-4, 1e-2]")));
    }
    params.zero_grads();
    let mut tape = Tape::new();
    let root = loss(params, &mut tape)?;
    tape.backward_into(root, params)?;
    drop(tape);

    let analytic: Vec<Vec<S>> = params.tensors().iter().map(|t| t.grad().to_vec()).collect();
    let mut eval = |p: &P| -> Result<f64, NumericError> {
        let mut tape = Tape::new();
        let v = loss(p, &mut tape)?;
        Ok(tape.scalar(v).as_f64())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates_checked: 0,
        worst: None,
    };
    for (slot, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > samples_per_tensor {
            Lcg::derive(seed, slot as u64).shuffle(&mut coords);
            coords.truncate(samples_per_tensor);
        }
        for idx in coords {
            let original = params.tensors()[slot].values()[idx];
            params.tensors_mut()[slot].values_mut()[idx] = original + S::of(eps);
            let plus = eval(params)?;
            params.tensors_mut()[slot].values_mut()[idx] = original - S::of(eps);
            let minus = eval(params)?;
            params.tensors_mut()[slot].values_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grads[idx].as_f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coordinates_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((slot, idx, a, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    fn random_params(seed: u64) -> Vec<Tensor<f64>> {
        let mut rng = Lcg::new(seed);
        vec![
            Tensor::uniform(vec![4, 3], 1.0, &mut rng),
            Tensor::uniform(vec![40], 1.0, &mut rng),
        ]
    }

    #[test]
    fn quadratic_objective() {
        let mut params = random_params(11);
        let report = grad_check(&mut params, 1e-3, 5, MIN_SAMPLES_PER_TENSOR, |p, tape| {
            let v = tape.params(p);
            let a = tape.mul(v[0], v[0])?;
            let b = tape.mul(v[1], v[1])?;
            let (sa, sb) = (tape.sum(a)?, tape.sum(b)?);
            let sb = tape.scale(sb, 0.5)?;
            tape.add(sa, sb)
        })
        .unwrap();
        assert_eq!(report.coordinates_checked, 12 + 25);
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn linear_objective() {
        let mut params = random_params(12);
        let report = grad_check(&mut params, 1e-3, 5, MIN_SAMPLES_PER_TENSOR, |p, tape| {
            let v = tape.params(p);
            let a = tape.sum(v[0])?;
            let b = tape.scale(v[1], -3.0)?;
            let b = tape.sum(b)?;
            tape.add(a, b)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-5, "{report:?}");
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        // One composite objective touching each differentiable op.
        let mut rng = Lcg::new(99);
        let mut params: Vec<Tensor<f64>> = vec![
            Tensor::uniform(vec![3, 4], 0.8, &mut rng), // 0 matrix X
            Tensor::uniform(vec![5, 4], 0.8, &mut rng), // 1 weight W
            Tensor::uniform(vec![5], 0.8, &mut rng),    // 2 bias
            Tensor::uniform(vec![5, 2], 0.8, &mut rng), // 3 B for matmul
            Tensor::uniform(vec![3], 0.8, &mut rng),    // 4 vector
            Tensor::uniform(vec![2], 0.8, &mut rng),    // 5 vector
            Tensor::uniform(vec![6, 4], 0.8, &mut rng), // 6 embedding
        ];
        let report = grad_check(&mut params, 1e-4, 3, 100, |p, t| {
            let v = t.params(p);
            let lin = t.linear(v[0], v[1], Some(v[2]))?; // 3x5
            let g = t.gelu(lin)?;
            let mm = t.matmul(g, v[3])?; // 3x2
            let nt = t.matmul_nt(v[0], v[0])?; // 3x3
            let sr = t.softmax_rows(nt)?;
            let mixed = t.matmul(sr, mm)?; // 3x2
            let ar = t.add_row(mixed, v[5])?;
            let th = t.tanh(ar)?;
            let vm = t.vecmat(v[4], th)?; // 2
            let sg = t.sigmoid(vm)?;
            let o = t.outer(v[4], sg)?; // 3x2
            let mr = t.mean_rows(o)?; // 2
            let rw = t.row(th, 1)?; // 2
            let mn = t.min(mr, rw)?;
            let c = t.concat(&[mn, v[5], sg])?; // 6
            let emb = t.gather_rows(v[6], &[0, 2, 2, 5])?; // 4x4
            let e0 = t.mean_rows(emb)?; // 4
            let wv = t.affine(v[1], e0, v[2])?; // 5
            let mv = t.matvec(v[1], e0)?;
            let d = t.sub(wv, mv)?;
            let sm = t.softmax(c)?;
            let ce = t.cross_entropy(sm, 2)?;
            let ls = t.log_softmax(d)?;
            let ls = t.sum(ls)?;
            let tgt = t.constant(vec![5], vec![0.1, 0.2, 0.3, 0.25, 0.15])?;
            let kl = t.soft_target_kl(wv, tgt, 2.0)?;
            let kl = t.scale_shift(kl, 4.0, 0.5)?;
            t.add_n(&[ce, ls, kl])
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-5, "{report:?}");
    }

    #[test]
    fn eps_range_enforced() {
        let mut params = random_params(1);
        let r = grad_check(&mut params, 0.5, 0, 25, |p, t| {
            let v = t.params(p);
            t.sum(v[0])
        });
        assert!(r.is_err());
    }
}
