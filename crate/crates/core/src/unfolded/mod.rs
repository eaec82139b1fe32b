//! Unfolded AMP-SBL.
//!
//! Each layer runs the AMP E-step on every subcarrier and then replaces the
//! closed-form precision update by a small network: per subcarrier the
//! `(|mu|^2, tau_x)` planes (`S x Q`, ring-major) go through a 5x5 conv with
//! 16 filters and a ReLU, the `K` feature stacks are averaged, every channel
//! is scaled by an attention weight predicted from `(M, SNR)`, and a second
//! 5x5 conv plus ReLU produces the next `gamma`.
//!
//! After the last layer one more E-step with the final `gamma` produces the
//! estimate, so every layer's network influences the output.

mod io;
pub mod layers;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::estimators::{check_problem, e_step, AmpState, EStepTrace, WhitenedOperator};
pub use io::{load_model, save_model};
pub use layers::{attention_weights, conv2d_same, AttentionTrace, FeatureMap, Tensor, KERNEL};
use layers::{attention_forward, conv2d_same_backward};

use crate::CMatrix;

pub const CONV_CHANNELS: usize = 16;
pub const DEFAULT_HIDDEN: usize = 16;

/// Trainable weights of one layer's M-step network.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// `16 x 2 x 5 x 5`
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    /// `1 x 16 x 5 x 5`
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    /// `h x 2`
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    /// `16 x h`
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
}

pub const TENSOR_NAMES: [&str; 8] = ["conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b"];

impl LayerWeights {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            conv1_w: Tensor::zeros(&[CONV_CHANNELS, 2, KERNEL, KERNEL]),
            conv1_b: Tensor::zeros(&[CONV_CHANNELS]),
            conv2_w: Tensor::zeros(&[1, CONV_CHANNELS, KERNEL, KERNEL]),
            conv2_b: Tensor::zeros(&[1]),
            fc1_w: Tensor::zeros(&[hidden, 2]),
            fc1_b: Tensor::zeros(&[hidden]),
            fc2_w: Tensor::zeros(&[CONV_CHANNELS, hidden]),
            fc2_b: Tensor::zeros(&[CONV_CHANNELS]),
        }
    }

    /// He-style random weights; the output bias starts at 1 so a fresh
    /// layer emits `gamma` close to the classic initial value.
    pub fn random<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let mut w = Self::zeros(hidden);
        let fill = |t: &mut Tensor, fan_in: usize, rng: &mut R| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            t.data.iter_mut().for_each(|v| *v = normal.sample(rng));
        };
        fill(&mut w.conv1_w, 2 * KERNEL * KERNEL, rng);
        fill(&mut w.conv2_w, CONV_CHANNELS * KERNEL * KERNEL, rng);
        w.conv2_w.data.iter_mut().for_each(|v| *v *= 0.1);
        fill(&mut w.fc1_w, 2, rng);
        fill(&mut w.fc2_w, hidden, rng);
        w.conv2_b.data[0] = 1.0;
        w
    }

    pub fn hidden(&self) -> usize {
        self.fc1_b.len()
    }

    pub fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.hidden())
    }

    fn check(&self, hidden: usize) -> Result<()> {
        let reference = Self::zeros(hidden);
        for ((name, a), b) in TENSOR_NAMES.iter().zip(self.tensors()).zip(reference.tensors()) {
            if a.shape != b.shape || a.data.len() != b.data.len() {
                return Err(Error::DimensionMismatch(format!("{name}: shape {:?}, expected {:?}", a.shape, b.shape)));
            }
            if a.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { stage: "weights", layer: 0 });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedModel {
    pub layers: Vec<LayerWeights>,
    /// Number of distance rings.
    pub s: usize,
    /// Number of angles per ring.
    pub q: usize,
    pub hidden: usize,
    /// `(M, SNR dB)` pairs seen during training.
    pub configs: Vec<(usize, f64)>,
}

impl UnfoldedModel {
    pub fn new<R: Rng + ?Sized>(layers: usize, s: usize, q: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if layers == 0 || s == 0 || q == 0 || hidden == 0 {
            return Err(Error::InvalidConfig("unfolded model needs L, S, Q, h >= 1".into()));
        }
        let layers = (0..layers).map(|_| LayerWeights::random(hidden, rng)).collect();
        Ok(Self { layers, s, q, hidden, configs: Vec::new() })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn atoms(&self) -> usize {
        self.s * self.q
    }

    /// Copy of the model with one more layer cloned from the last.
    pub fn grown(&self) -> Self {
        let mut next = self.clone();
        next.layers.push(self.layers.last().expect("L >= 1").clone());
        next
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("unfolded model has no layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.check(self.hidden).map_err(|e| match e {
                Error::NonFinite { stage, .. } => Error::NonFinite { stage, layer: l },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.tensors()).map(Tensor::len).sum()
    }
}

/// Intermediates of one M-step network evaluation.
#[derive(Debug, Clone)]
pub struct DnnTrace {
    /// Per subcarrier `2 x S x Q` input planes.
    pub inputs: Vec<FeatureMap>,
    /// Per subcarrier conv1 outputs before the ReLU.
    pub conv1: Vec<FeatureMap>,
    pub attention: AttentionTrace,
    /// Subcarrier mean of the rectified conv1 features.
    pub mean: FeatureMap,
    /// Attention-scaled mean, the conv2 input.
    pub scaled: FeatureMap,
    /// conv2 output before the final ReLU.
    pub conv2: FeatureMap,
    pub gamma: Vec<f64>,
}

fn check_grid(n: usize, s: usize, q: usize) -> Result<()> {
    if n != s * q {
        return Err(Error::DimensionMismatch(format!("{n} coefficients for a {s} x {q} grid")));
    }
    Ok(())
}

/// M-step network with all intermediates kept.
pub fn dnn_m_step_traced(
    mu: &[Vec<Complex64>],
    tau: &[Vec<f64>],
    m: usize,
    snr_db: f64,
    layer: &LayerWeights,
    s: usize,
    q: usize,
) -> Result<DnnTrace> {
    if mu.is_empty() || mu.len() != tau.len() {
        return Err(Error::DimensionMismatch(format!("{} mean vectors vs {} variance vectors", mu.len(), tau.len())));
    }
    let k = mu.len();
    let g = s * q;
    let mut inputs = Vec::with_capacity(k);
    let mut conv1 = Vec::with_capacity(k);
    let mut mean = FeatureMap::zeros(CONV_CHANNELS, s, q);
    for (mk, tk) in mu.iter().zip(tau) {
        check_grid(mk.len(), s, q)?;
        check_grid(tk.len(), s, q)?;
        let mut input = FeatureMap::zeros(2, s, q);
        input.data[..g].iter_mut().zip(mk).for_each(|(d, v)| *d = v.norm_sqr());
        input.data[g..].copy_from_slice(tk);
        let z = conv2d_same(&input, &layer.conv1_w, &layer.conv1_b)?;
        mean.data.iter_mut().zip(&z.data).for_each(|(acc, v)| *acc += v.max(0.0));
        inputs.push(input);
        conv1.push(z);
    }
    mean.data.iter_mut().for_each(|v| *v /= k as f64);
    let attention = attention_forward(m, snr_db, &layer.fc1_w, &layer.fc1_b, &layer.fc2_w, &layer.fc2_b);
    if attention.weights.len() != CONV_CHANNELS {
        return Err(Error::DimensionMismatch(format!("{} attention weights", attention.weights.len())));
    }
    let mut scaled = mean.clone();
    for (c, w) in attention.weights.iter().enumerate() {
        scaled.plane_mut(c).iter_mut().for_each(|v| *v *= w);
    }
    let conv2 = conv2d_same(&scaled, &layer.conv2_w, &layer.conv2_b)?;
    let gamma = conv2.data.iter().map(|v| v.max(0.0)).collect();
    Ok(DnnTrace { inputs, conv1, attention, mean, scaled, conv2, gamma })
}

/// Learned precision update; returns a length-`G` nonnegative vector.
pub fn dnn_m_step(
    mu: &[Vec<Complex64>],
    tau: &[Vec<f64>],
    m: usize,
    snr_db: f64,
    layer: &LayerWeights,
    s: usize,
    q: usize,
) -> Result<Vec<f64>> {
    Ok(dnn_m_step_traced(mu, tau, m, snr_db, layer, s, q)?.gamma)
}

/// Gradients with respect to the network inputs.
pub struct DnnGrad {
    /// Per subcarrier `d loss / d |mu|^2`.
    pub mu_abs2: Vec<Vec<f64>>,
    pub tau: Vec<Vec<f64>>,
}

/// Reverse pass of [`dnn_m_step_traced`] given `d loss / d gamma`; weight
/// gradients are accumulated into `grads`.
pub fn dnn_m_step_backward(trace: &DnnTrace, layer: &LayerWeights, grad_gamma: &[f64], grads: &mut LayerWeights) -> DnnGrad {
    let (s, q) = (trace.mean.s, trace.mean.q);
    let g = s * q;
    let k = trace.inputs.len();
    let mut g_conv2 = FeatureMap::zeros(1, s, q);
    for ((d, &gg), &z) in g_conv2.data.iter_mut().zip(grad_gamma).zip(&trace.conv2.data) {
        *d = if z > 0.0 { gg } else { 0.0 };
    }
    let g_scaled = conv2d_same_backward(&trace.scaled, &layer.conv2_w, &g_conv2, &mut grads.conv2_w, &mut grads.conv2_b, true)
        .expect("input gradient requested");

    let mut g_att = vec![0.0; CONV_CHANNELS];
    let mut g_mean = g_scaled.clone();
    for (c, &w) in trace.attention.weights.iter().enumerate() {
        g_att[c] = g_scaled.plane(c).iter().zip(trace.mean.plane(c)).map(|(a, b)| a * b).sum();
        g_mean.plane_mut(c).iter_mut().for_each(|v| *v *= w);
    }
    {
        let [_, _, _, _, fc1_w, fc1_b, fc2_w, fc2_b] = grads.tensors_mut();
        layers::attention_backward(&trace.attention, &layer.fc2_w, &g_att, [fc1_w, fc1_b, fc2_w, fc2_b]);
    }

    let mut mu_abs2 = Vec::with_capacity(k);
    let mut tau = Vec::with_capacity(k);
    for (input, z) in trace.inputs.iter().zip(&trace.conv1) {
        let mut gz = FeatureMap::zeros(CONV_CHANNELS, s, q);
        for ((d, &gm), &zv) in gz.data.iter_mut().zip(&g_mean.data).zip(&z.data) {
            *d = if zv > 0.0 { gm / k as f64 } else { 0.0 };
        }
        let gi = conv2d_same_backward(input, &layer.conv1_w, &gz, &mut grads.conv1_w, &mut grads.conv1_b, true)
            .expect("input gradient requested");
        mu_abs2.push(gi.data[..g].to_vec());
        tau.push(gi.data[g..].to_vec());
    }
    DnnGrad { mu_abs2, tau }
}

/// One unfolded layer: `K` E-steps and the network M-step.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Precision fed to this layer's E-steps.
    pub gamma_in: Vec<f64>,
    pub e_steps: Vec<EStepTrace>,
    pub dnn: DnnTrace,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    pub readout_gamma: Vec<f64>,
    pub readout: Vec<EStepTrace>,
}

#[derive(Debug, Clone)]
pub struct UnfoldedOutput {
    pub mu: Vec<Vec<Complex64>>,
    pub trace: Option<ForwardTrace>,
}

fn all_finite(states: &[EStepTrace]) -> bool {
    states.iter().all(|t| {
        t.out.mu.iter().all(|v| v.re.is_finite() && v.im.is_finite()) && t.out.tau_x.iter().all(|v| v.is_finite())
    })
}

/// Runs the network on observations `y` with measurement matrices `phi`.
pub fn unfolded_forward(
    y: &CMatrix,
    phi: &[CMatrix],
    sigma2: f64,
    m: usize,
    snr_db: f64,
    model: &UnfoldedModel,
    keep_trace: bool,
) -> Result<UnfoldedOutput> {
    check_problem(y, phi)?;
    let op = WhitenedOperator::new(phi)?;
    let r = op.project(y)?;
    unfolded_forward_whitened(&op, &r, sigma2, m, snr_db, model, keep_trace)
}

/// As [`unfolded_forward`] on already projected observations `r^k = U^H y^k`.
pub fn unfolded_forward_whitened(
    op: &WhitenedOperator,
    r: &[Vec<Complex64>],
    sigma2: f64,
    m: usize,
    snr_db: f64,
    model: &UnfoldedModel,
    keep_trace: bool,
) -> Result<UnfoldedOutput> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidNoiseVariance { value: sigma2, expected: "positive" });
    }
    if model.layers.is_empty() {
        return Err(Error::InvalidConfig("unfolded model has no layers".into()));
    }
    check_grid(op.atoms(), model.s, model.q)?;
    if r.len() != op.subcarriers() {
        return Err(Error::DimensionMismatch(format!("{} observations for {} subcarriers", r.len(), op.subcarriers())));
    }
    let k = op.subcarriers();
    let mut states: Vec<AmpState> = (0..k).map(|_| AmpState::initial(op.rows(), op.atoms())).collect();
    let mut gamma = vec![1.0; op.atoms()];
    let mut layer_traces = Vec::new();

    for (l, layer) in model.layers.iter().enumerate() {
        let e_steps: Vec<EStepTrace> = (0..k)
            .map(|kk| e_step(&op.b[kk], &op.b_abs2[kk], &r[kk], sigma2, &gamma, &states[kk]))
            .collect();
        if !all_finite(&e_steps) {
            return Err(Error::NonFinite { stage: "E-step", layer: l });
        }
        let mu: Vec<Vec<Complex64>> = e_steps.iter().map(|t| t.out.mu.clone()).collect();
        let tau: Vec<Vec<f64>> = e_steps.iter().map(|t| t.out.tau_x.clone()).collect();
        let dnn = dnn_m_step_traced(&mu, &tau, m, snr_db, layer, model.s, model.q)?;
        if dnn.gamma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage: "M-step", layer: l });
        }
        states = e_steps.iter().map(|t| t.out.clone()).collect();
        let next = dnn.gamma.clone();
        if keep_trace {
            layer_traces.push(LayerTrace { gamma_in: std::mem::replace(&mut gamma, next), e_steps, dnn });
        } else {
            gamma = next;
        }
    }

    let readout: Vec<EStepTrace> = (0..k)
        .map(|kk| e_step(&op.b[kk], &op.b_abs2[kk], &r[kk], sigma2, &gamma, &states[kk]))
        .collect();
    if !all_finite(&readout) {
        return Err(Error::NonFinite { stage: "E-step", layer: model.layers.len() });
    }
    let mu = readout.iter().map(|t| t.out.mu.clone()).collect();
    let trace = keep_trace.then_some(ForwardTrace { layers: layer_traces, readout_gamma: gamma, readout });
    Ok(UnfoldedOutput { mu, trace })
}
