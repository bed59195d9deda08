use super::{AutodiffError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
            config,
        }
    }

    pub fn for_tensor(t: &Tensor) -> Self {
        Self::new(t.len(), AdamConfig::default())
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// Non-finite gradients are not filtered; they propagate into `params` and
/// are caught by the training loop's finiteness guard.
pub fn adam_step(params: &mut Tensor, grads: &Tensor, state: &mut AdamState, lr: f64) -> Result<(), AutodiffError> {
    if params.shape() != grads.shape() || state.first_moment.len() != params.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "adam_step",
            shapes: vec![
                params.shape().to_vec(),
                grads.shape().to_vec(),
                vec![state.first_moment.len()],
            ],
        });
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in params
        .data_mut()
        .iter_mut()
        .zip(grads.data())
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::vector(vec![0.5]);
        let g = Tensor::vector(vec![1.0]);
        let mut st = AdamState::for_tensor(&p);
        adam_step(&mut p, &g, &mut st, 1e-3).unwrap();
        // m_hat = 1, v_hat = 1 => delta = -lr / (1 + eps)
        let expected = 0.5 - 1e-3 / (1.0 + 1e-8);
        assert!((p.item() - expected).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let g = Tensor::zeros(&[2]);
        let mut st = AdamState::for_tensor(&p);
        adam_step(&mut p, &g, &mut st, 1e-3).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn descends_convex_quadratic() {
        // scalar simulation: f(x) = (x - 3)^2 starting at 0
        let f = |x: f64| (x - 3.0).powi(2);
        let mut p = Tensor::vector(vec![0.0]);
        let mut st = AdamState::for_tensor(&p);
        let mut prev = f(p.item());
        for _ in 0..2 {
            let g = Tensor::vector(vec![2.0 * (p.item() - 3.0)]);
            adam_step(&mut p, &g, &mut st, 1e-2).unwrap();
            let cur = f(p.item());
            assert!(cur < prev);
            prev = cur;
        }
        assert_eq!(st.step, 2);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut p = Tensor::vector(vec![1.0]);
        let g = Tensor::zeros(&[2]);
        let mut st = AdamState::for_tensor(&p);
        assert!(adam_step(&mut p, &g, &mut st, 1e-3).is_err());
        assert_eq!(st.step, 0);
    }
}
