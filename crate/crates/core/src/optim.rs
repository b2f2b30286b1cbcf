//! Bias-corrected adaptive-moment (Adam) updates.

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
        OptimizerState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Rebuilds a state from saved accumulators.
    pub fn from_parts(
        params: &ParamStore,
        config: AdamConfig,
        step: u64,
        first: Vec<Vec<f64>>,
        second: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let lens: Vec<usize> = params.tensors().map(|t| t.len()).collect();
        let ok = |bufs: &[Vec<f64>]| {
            bufs.len() == lens.len() && bufs.iter().zip(&lens).all(|(b, &n)| b.len() == n)
        };
        if !ok(&first) || !ok(&second) {
            return Err(Error::Format(
                "optimizer state does not match the parameter layout".into(),
            ));
        }
        Ok(OptimizerState {
            config,
            step,
            first,
            second,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }
}

/// Applies one Adam update using the gradients stored on `params`, then
/// clears them. Fails without touching anything if any gradient is absent.
pub fn adam_step(params: &mut ParamStore, state: &mut OptimizerState) -> Result<()> {
    for l in params.layers() {
        if l.weight.grad().is_none() {
            return Err(Error::Usage(format!("missing gradient for {} weight", l.label())));
        }
        if l.bias.grad().is_none() {
            return Err(Error::Usage(format!("missing gradient for {} bias", l.label())));
        }
    }
    if state.first.len() != params.tensors().count() {
        return Err(Error::Usage(
            "optimizer state was built for a different parameter store".into(),
        ));
    }

    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    for ((tensor, m), v) in params
        .tensors_mut()
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let g = tensor.take_grad().expect("checked above");
        for (((p, &gi), mi), vi) in tensor
            .data_mut()
            .iter_mut()
            .zip(&g)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{LayerParams, Side};
    use crate::tensor::Tensor;

    fn scalar_store(w: f64) -> ParamStore {
        ParamStore::new(vec![LayerParams {
            side: Side::Encoder,
            index: 1,
            weight: Tensor::new(vec![1, 1], vec![w]).unwrap(),
            bias: Tensor::zeros(&[1]),
        }])
        .unwrap()
    }

    fn set_grads(p: &mut ParamStore, gw: f64, gb: f64) {
        let l = &mut p.layers_mut()[0];
        l.weight.set_grad(vec![gw]).unwrap();
        l.bias.set_grad(vec![gb]).unwrap();
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [0.37, -5.0, 1e-3] {
            let mut p = scalar_store(1.0);
            let mut s = OptimizerState::new(&p, AdamConfig::default());
            set_grads(&mut p, g, 0.0);
            adam_step(&mut p, &mut s).unwrap();
            let moved = p.layers()[0].weight.data()[0] - 1.0;
            assert!((moved + 1e-3 * g.signum()).abs() < 1e-8, "moved {moved}");
            assert_eq!(s.step(), 1);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar_store(0.25);
        let mut s = OptimizerState::new(&p, AdamConfig::default());
        for _ in 0..3 {
            set_grads(&mut p, 0.0, 0.0);
            adam_step(&mut p, &mut s).unwrap();
        }
        assert_eq!(p.layers()[0].weight.data()[0], 0.25);
        assert_eq!(p.layers()[0].bias.data()[0], 0.0);
        assert_eq!(s.step(), 3);
    }

    #[test]
    fn missing_gradient_is_named() {
        let mut p = scalar_store(0.0);
        let mut s = OptimizerState::new(&p, AdamConfig::default());
        p.layers_mut()[0].weight.set_grad(vec![1.0]).unwrap();
        let err = adam_step(&mut p, &mut s).unwrap_err().to_string();
        assert!(err.contains("encoder layer 1 bias"), "{err}");
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn grads_are_cleared_after_step() {
        let mut p = scalar_store(0.0);
        let mut s = OptimizerState::new(&p, AdamConfig::default());
        set_grads(&mut p, 1.0, 1.0);
        adam_step(&mut p, &mut s).unwrap();
        assert!(p.tensors().all(|t| t.grad().is_none()));
        assert!(s.first_moments().iter().flatten().all(|&m| m != 0.0));
    }
}
