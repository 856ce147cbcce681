use crate::autodiff::{Gradients, ParamStore};
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Rescales `grads` in place so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> Result<f64> {
    if max_norm.is_nan() || max_norm <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "clip norm must be positive, got {max_norm}"
        )));
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    Ok(norm)
}

/// First and second moment accumulators for ADAM.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .iter()
            .map(|(_, t)| vec![0.0; t.data.len()])
            .collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected ADAM step.
pub fn adam_update(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.tensors.len() != params.len() || state.first.len() != params.len() {
        return Err(Error::DimensionMismatch(
            "gradients, optimizer state and parameters disagree".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (k, tensor) in params.tensors_mut().iter_mut().enumerate() {
        let g = &grads.tensors[k].data;
        let m = &mut state.first[k];
        let v = &mut state.second[k];
        if g.len() != tensor.data.len() || m.len() != g.len() {
            return Err(Error::DimensionMismatch(format!(
                "tensor {k} shape mismatch"
            )));
        }
        for i in 0..g.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            tensor.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn setup(values: &[f64]) -> (ParamStore, Gradients) {
        let mut p = ParamStore::new();
        p.add(
            "x",
            Tensor {
                rows: values.len(),
                cols: 1,
                data: values.to_vec(),
            },
        );
        let g = Gradients::zeros_like(&p);
        (p, g)
    }

    #[test]
    fn clipping() {
        let (_, mut g) = setup(&[0.0, 0.0]);
        g.tensors[0].data = vec![0.0, 3.0];
        assert_eq!(clip_gradients(&mut g, 5.0).unwrap(), 3.0);
        assert_eq!(g.tensors[0].data, vec![0.0, 3.0]);

        g.tensors[0].data = vec![6.0, 8.0];
        assert_eq!(clip_gradients(&mut g, 5.0).unwrap(), 10.0);
        assert_eq!(g.tensors[0].data, vec![3.0, 4.0]);
        assert!((g.global_norm() - 5.0).abs() < 1e-12);

        g.tensors[0].data = vec![0.0, 0.0];
        clip_gradients(&mut g, 5.0).unwrap();
        assert_eq!(g.tensors[0].data, vec![0.0, 0.0]);

        g.tensors[0].data = vec![f64::NAN, 1.0];
        assert!(matches!(
            clip_gradients(&mut g, 5.0),
            Err(Error::NonFiniteGradient)
        ));
        assert!(clip_gradients(&mut g, 0.0).is_err());
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let (mut p, g) = setup(&[0.5, -1.5]);
        let mut s = AdamState::new(&p);
        adam_update(&mut p, &g, &mut s, 0.001).unwrap();
        assert_eq!(p.get(crate::autodiff::ParamId(0)).data, vec![0.5, -1.5]);
        assert!(s.first[0].iter().chain(&s.second[0]).all(|&x| x == 0.0));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut p, mut g) = setup(&[1.0, 1.0, 1.0]);
        g.tensors[0].data = vec![0.3, -2.0, 1e-3];
        let mut s = AdamState::new(&p);
        adam_update(&mut p, &g, &mut s, 0.001).unwrap();
        for (x, gi) in p
            .get(crate::autodiff::ParamId(0))
            .data
            .iter()
            .zip(&g.tensors[0].data)
        {
            let expect = 1.0 - 0.001 * gi / (gi.abs() + ADAM_EPSILON);
            assert!((x - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_scalar_reimplementation() {
        let (mut p, mut g) = setup(&[0.25]);
        g.tensors[0].data = vec![0.7];
        let mut s = AdamState::new(&p);
        for _ in 0..2 {
            adam_update(&mut p, &g, &mut s, 0.01).unwrap();
        }
        // scalar oracle
        let (mut x, mut m, mut v) = (0.25f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * 0.7;
            v = 0.999 * v + 0.001 * 0.49;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p.get(crate::autodiff::ParamId(0)).data[0] - x).abs() < 1e-12);
    }
}
