//! Dense building blocks of the M-step network: 5x5 "same" convolution and
//! the configuration attention head, with their reverse-mode adjoints.

use crate::error::{Error, Result};

pub const KERNEL: usize = 5;
const PAD: isize = (KERNEL / 2) as isize;

/// Row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }
}

/// `C x S x Q` feature planes, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub s: usize,
    pub q: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, s: usize, q: usize) -> Self {
        Self { channels, s, q, data: vec![0.0; channels * s * q] }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.s * self.q;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.s * self.q;
        &mut self.data[c * n..(c + 1) * n]
    }
}

fn check_conv(input: &FeatureMap, kernel: &Tensor, bias: &Tensor) -> Result<usize> {
    let ok = kernel.shape.len() == 4
        && kernel.shape[1] == input.channels
        && kernel.shape[2] == KERNEL
        && kernel.shape[3] == KERNEL
        && bias.shape == [kernel.shape[0]]
        && input.data.len() == input.channels * input.s * input.q
        && input.s >= 1
        && input.q >= 1;
    if !ok {
        return Err(Error::DimensionMismatch(format!(
            "conv kernel {:?} / bias {:?} on {} x {} x {} input",
            kernel.shape, bias.shape, input.channels, input.s, input.q
        )));
    }
    Ok(kernel.shape[0])
}

// Valid source range of output rows/cols for kernel offset `a`.
fn span(a: usize, len: usize) -> (usize, usize) {
    let off = a as isize - PAD;
    let lo = ((-off).max(0) as usize).min(len);
    let hi = (len as isize - off).min(len as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// Cross-correlation with zero padding 2, kernel `C_out x C_in x 5 x 5`.
pub fn conv2d_same(input: &FeatureMap, kernel: &Tensor, bias: &Tensor) -> Result<FeatureMap> {
    let c_out = check_conv(input, kernel, bias)?;
    let (s, q) = (input.s, input.q);
    let mut out = FeatureMap::zeros(c_out, s, q);
    for o in 0..c_out {
        let plane = out.plane_mut(o);
        plane.fill(bias.data[o]);
        for i in 0..input.channels {
            let src = input.plane(i);
            for a in 0..KERNEL {
                let (r0, r1) = span(a, s);
                for b in 0..KERNEL {
                    let w = kernel.data[((o * input.channels + i) * KERNEL + a) * KERNEL + b];
                    if w == 0.0 {
                        continue;
                    }
                    let (c0, c1) = span(b, q);
                    if c0 == c1 {
                        continue;
                    }
                    let dc = b as isize - PAD;
                    for row in r0..r1 {
                        let src_row = (row as isize + a as isize - PAD) as usize;
                        let dst = &mut plane[row * q + c0..row * q + c1];
                        let from = (src_row * q) as isize + c0 as isize + dc;
                        let src = &src[from as usize..from as usize + (c1 - c0)];
                        for (d, v) in dst.iter_mut().zip(src) {
                            *d += w * v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`conv2d_same`]: accumulates kernel and bias gradients and
/// returns the input gradient when `want_input` is set.
pub fn conv2d_same_backward(
    input: &FeatureMap,
    kernel: &Tensor,
    grad_out: &FeatureMap,
    grad_kernel: &mut Tensor,
    grad_bias: &mut Tensor,
    want_input: bool,
) -> Option<FeatureMap> {
    let (s, q) = (input.s, input.q);
    let c_in = input.channels;
    let mut grad_in = want_input.then(|| FeatureMap::zeros(c_in, s, q));
    for o in 0..grad_out.channels {
        let go = grad_out.plane(o);
        grad_bias.data[o] += go.iter().sum::<f64>();
        for i in 0..c_in {
            let src = input.plane(i);
            for a in 0..KERNEL {
                let (r0, r1) = span(a, s);
                for b in 0..KERNEL {
                    let idx = ((o * c_in + i) * KERNEL + a) * KERNEL + b;
                    let w = kernel.data[idx];
                    let (c0, c1) = span(b, q);
                    if c0 == c1 {
                        continue;
                    }
                    let dc = b as isize - PAD;
                    let mut acc = 0.0;
                    for row in r0..r1 {
                        let src_row = (row as isize + a as isize - PAD) as usize;
                        let from = ((src_row * q) as isize + c0 as isize + dc) as usize;
                        let g = &go[row * q + c0..row * q + c1];
                        let x = &src[from..from + (c1 - c0)];
                        acc += g.iter().zip(x).map(|(u, v)| u * v).sum::<f64>();
                        if let Some(gi) = grad_in.as_mut() {
                            let dst = &mut gi.plane_mut(i)[from..from + (c1 - c0)];
                            for (d, u) in dst.iter_mut().zip(g) {
                                *d += w * u;
                            }
                        }
                    }
                    grad_kernel.data[idx] += acc;
                }
            }
        }
    }
    grad_in
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Network input built from the system configuration.
pub fn attention_input(m: usize, snr_db: f64) -> [f64; 2] {
    [m as f64 / 64.0, snr_db / 20.0]
}

/// Intermediate values of the attention head.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub input: [f64; 2],
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn attention_forward(m: usize, snr_db: f64, fc1_w: &Tensor, fc1_b: &Tensor, fc2_w: &Tensor, fc2_b: &Tensor) -> AttentionTrace {
    let input = attention_input(m, snr_db);
    let h = fc1_b.len();
    let hidden_pre: Vec<f64> = (0..h)
        .map(|j| fc1_b.data[j] + fc1_w.data[2 * j] * input[0] + fc1_w.data[2 * j + 1] * input[1])
        .collect();
    let hidden: Vec<f64> = hidden_pre.iter().map(|v| v.max(0.0)).collect();
    let weights = (0..fc2_b.len())
        .map(|c| {
            let row = &fc2_w.data[c * h..(c + 1) * h];
            sigmoid(fc2_b.data[c] + row.iter().zip(&hidden).map(|(w, x)| w * x).sum::<f64>())
        })
        .collect();
    AttentionTrace { input, hidden_pre, hidden, weights }
}

/// `sigmoid(fc2(relu(fc1([M/64, snr/20]))))`.
pub fn attention_weights(m: usize, snr_db: f64, fc1_w: &Tensor, fc1_b: &Tensor, fc2_w: &Tensor, fc2_b: &Tensor) -> Vec<f64> {
    attention_forward(m, snr_db, fc1_w, fc1_b, fc2_w, fc2_b).weights
}

/// Gradients of the attention head parameters given `d loss / d weights`.
pub fn attention_backward(
    trace: &AttentionTrace,
    fc2_w: &Tensor,
    grad_weights: &[f64],
    grads: [&mut Tensor; 4],
) {
    let [g_fc1_w, g_fc1_b, g_fc2_w, g_fc2_b] = grads;
    let h = trace.hidden.len();
    let mut g_hidden = vec![0.0; h];
    for (c, (&gw, &att)) in grad_weights.iter().zip(&trace.weights).enumerate() {
        let gz = gw * att * (1.0 - att);
        g_fc2_b.data[c] += gz;
        for j in 0..h {
            g_fc2_w.data[c * h + j] += gz * trace.hidden[j];
            g_hidden[j] += gz * fc2_w.data[c * h + j];
        }
    }
    for j in 0..h {
        if trace.hidden_pre[j] <= 0.0 {
            continue;
        }
        g_fc1_b.data[j] += g_hidden[j];
        g_fc1_w.data[2 * j] += g_hidden[j] * trace.input[0];
        g_fc1_w.data[2 * j + 1] += g_hidden[j] * trace.input[1];
    }
}
