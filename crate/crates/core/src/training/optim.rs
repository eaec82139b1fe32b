//! First-order optimizers over the layer weights.

use serde::{Deserialize, Serialize};

use crate::unfolded::{LayerWeights, UnfoldedModel};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
    Momentum,
}

impl OptimizerKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Adam => "adam",
            Self::Sgd => "sgd",
            Self::Momentum => "momentum",
        }
    }
}

/// One Adam update on flat slices; `t` is the 1-based step count.
pub fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64) {
    let c1 = 1.0 - ADAM_BETA1.powf(t as f64);
    let c2 = 1.0 - ADAM_BETA2.powf(t as f64);
    for i in 0..p.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Moment buffers shaped like the model.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub m: Vec<LayerWeights>,
    pub v: Vec<LayerWeights>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, model: &UnfoldedModel) -> Self {
        let zeros: Vec<LayerWeights> = model.layers.iter().map(LayerWeights::zeros_like).collect();
        Self { kind, m: zeros.clone(), v: zeros, t: 0 }
    }
}

/// Applies one update of `state.kind` with gradients `grads`.
pub fn optimizer_step(model: &mut UnfoldedModel, grads: &[LayerWeights], state: &mut OptimizerState, lr: f64) {
    state.t += 1;
    let t = state.t;
    let kind = state.kind;
    for (((layer, g), m), v) in model.layers.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((p, g), m), v) in layer.tensors_mut().into_iter().zip(g.tensors()).zip(m.tensors_mut()).zip(v.tensors_mut()) {
            match kind {
                OptimizerKind::Adam => adam_update(&mut p.data, &g.data, &mut m.data, &mut v.data, t, lr),
                OptimizerKind::Sgd => p.data.iter_mut().zip(&g.data).for_each(|(p, g)| *p -= lr * g),
                OptimizerKind::Momentum => {
                    for ((p, g), m) in p.data.iter_mut().zip(&g.data).zip(m.data.iter_mut()) {
                        *m = MOMENTUM * *m + g;
                        *p -= lr * *m;
                    }
                }
            }
        }
    }
}

/// Adam update of the whole model.
pub fn adam_step(model: &mut UnfoldedModel, grads: &[LayerWeights], state: &mut OptimizerState, lr: f64) {
    debug_assert_eq!(state.kind, OptimizerKind::Adam);
    optimizer_step(model, grads, state, lr);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut model = UnfoldedModel::new(2, 2, 4, 4, &mut stream(1, 0)).unwrap();
        let before = model.clone();
        let grads: Vec<LayerWeights> = model.layers.iter().map(LayerWeights::zeros_like).collect();
        let mut state = OptimizerState::new(OptimizerKind::Adam, &model);
        adam_step(&mut model, &grads, &mut state, 1e-3);
        assert_eq!(model, before);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // m = 0.1 g, v = 0.001 g^2, m_hat = g, v_hat = g^2
        let g = [0.5, -2.0, 1e-3];
        let mut p = [1.0, 1.0, 1.0];
        let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
        adam_update(&mut p, &g, &mut m, &mut v, 1, 0.01);
        for i in 0..3 {
            assert!((m[i] - 0.1 * g[i]).abs() < 1e-15);
            assert!((v[i] - 0.001 * g[i] * g[i]).abs() <= 1e-12 * v[i]);
            let expected = 1.0 - 0.01 * g[i] / (g[i].abs() + 1e-8);
            assert!((p[i] - expected).abs() < 1e-12, "{} vs {expected}", p[i]);
        }
    }

    #[test]
    fn constant_gradient_gives_unit_steps() {
        let mut p = [0.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        let lr = 1e-3;
        let mut last = 0.0;
        for t in 1..=5000 {
            let before = p[0];
            adam_update(&mut p, &[3.0], &mut m, &mut v, t, lr);
            last = before - p[0];
        }
        assert!((last - lr).abs() < 1e-6 * lr);
    }

    #[test]
    fn state_shapes_track_model() {
        let model = UnfoldedModel::new(3, 2, 4, 5, &mut stream(2, 0)).unwrap();
        let state = OptimizerState::new(OptimizerKind::Momentum, &model);
        for (a, b) in state.m.iter().zip(&model.layers) {
            for (x, y) in a.tensors().iter().zip(b.tensors()) {
                assert_eq!(x.shape, y.shape);
            }
        }
    }

    #[test]
    fn sgd_and_momentum_steps() {
        let mut model = UnfoldedModel::new(1, 1, 2, 2, &mut stream(3, 0)).unwrap();
        let start = model.layers[0].conv2_b.data[0];
        let mut grads = vec![model.layers[0].zeros_like()];
        grads[0].conv2_b.data[0] = 2.0;
        let mut sgd = OptimizerState::new(OptimizerKind::Sgd, &model);
        optimizer_step(&mut model, &grads, &mut sgd, 0.1);
        assert!((model.layers[0].conv2_b.data[0] - (start - 0.2)).abs() < 1e-15);
        let mut mom = OptimizerState::new(OptimizerKind::Momentum, &model);
        optimizer_step(&mut model, &grads, &mut mom, 0.1);
        optimizer_step(&mut model, &grads, &mut mom, 0.1);
        // steps 0.2 then 0.1 * (0.9 * 2 + 2) = 0.38
        assert!((model.layers[0].conv2_b.data[0] - (start - 0.2 - 0.2 - 0.38)).abs() < 1e-12);
    }
}
