use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// One layer of a sequential model. Shapes below are per example (batch axis
/// excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// `[in_features] -> [out_features]`, `y = W x + b`.
    Dense {
        in_features: usize,
        out_features: usize,
    },
    /// `[C, H, W] -> [out_channels, (H-k)/s+1, (W-k)/s+1]`, valid padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// Non-overlapping `size x size` max pooling with stride `size`. Trailing
    /// rows/columns that do not fill a window are dropped.
    MaxPool2d { size: usize },
    Relu,
    Flatten,
}

impl LayerSpec {
    pub fn dense(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Dense {
            in_features,
            out_features,
        }
    }

    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
        }
    }

    pub fn maxpool2d() -> Self {
        LayerSpec::MaxPool2d { size: 2 }
    }

    /// Per-example output shape, or a description of why `input` is not accepted.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                if in_features == 0 || out_features == 0 {
                    return Err("dense extents must be positive".into());
                }
                if input != [in_features] {
                    return Err(format!("expects input [{in_features}], got {input:?}"));
                }
                Ok(vec![out_features])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err("conv2d extents must be positive".into());
                }
                match input {
                    [c, h, w] if *c == in_channels && *h >= kernel && *w >= kernel => Ok(vec![
                        out_channels,
                        (h - kernel) / stride + 1,
                        (w - kernel) / stride + 1,
                    ]),
                    _ => Err(format!(
                        "expects input [{in_channels}, H>={kernel}, W>={kernel}], got {input:?}"
                    )),
                }
            }
            LayerSpec::MaxPool2d { size } => {
                if size == 0 {
                    return Err("pool size must be positive".into());
                }
                match input {
                    [c, h, w] if *h >= size && *w >= size => Ok(vec![*c, h / size, w / size]),
                    _ => Err(format!("expects input [C, H>={size}, W>={size}], got {input:?}")),
                }
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Parameter tensor shapes in ordinal order (weight, then bias).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => vec![vec![out_features, in_features], vec![out_features]],
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            ],
            _ => Vec::new(),
        }
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => (in_features, out_features),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel * kernel, out_channels * kernel * kernel),
            _ => (0, 0),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => write!(f, "dense({in_features}->{out_features})"),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => write!(f, "conv2d({in_channels}->{out_channels}, {kernel}x{kernel}, stride {stride})"),
            LayerSpec::MaxPool2d { size } => write!(f, "maxpool2d({size}x{size})"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::Flatten => f.write_str("flatten"),
        }
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    /// Stable ordinal within the owning model.
    pub id: usize,
}

impl Parameter {
    pub(crate) fn new(value: Tensor, id: usize) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad, id }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Layer {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub params: Vec<Parameter>,
}

impl Layer {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(
        spec: LayerSpec,
        in_shape: Vec<usize>,
        out_shape: Vec<usize>,
        first_id: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let (fan_in, fan_out) = spec.fans();
        let params = spec
            .param_shapes()
            .into_iter()
            .enumerate()
            .map(|(k, shape)| {
                let mut t = Tensor::zeros(&shape);
                if k == 0 {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for v in t.data_mut() {
                        *v = rng.random_range(-a..a);
                    }
                }
                Parameter::new(t, first_id + k)
            })
            .collect();
        Self {
            spec,
            in_shape,
            out_shape,
            params,
        }
    }

    fn batch_shape(&self, batch: usize, per_example: &[usize]) -> Vec<usize> {
        let mut s = Vec::with_capacity(per_example.len() + 1);
        s.push(batch);
        s.extend_from_slice(per_example);
        s
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let batch = x.rows();
        let out_shape = self.batch_shape(batch, &self.out_shape);
        match self.spec {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let w = self.params[0].value.data();
                let b = self.params[1].value.data();
                let mut out = Tensor::zeros(&out_shape);
                for n in 0..batch {
                    let xi = x.row(n);
                    let yi = out.row_mut(n);
                    for o in 0..out_features {
                        let wr = &w[o * in_features..(o + 1) * in_features];
                        yi[o] = b[o] + dot(wr, xi);
                    }
                }
                out
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let (h, wd) = (self.in_shape[1], self.in_shape[2]);
                let (oh, ow) = (self.out_shape[1], self.out_shape[2]);
                let w = self.params[0].value.data();
                let b = self.params[1].value.data();
                let mut out = Tensor::zeros(&out_shape);
                for n in 0..batch {
                    let xi = x.row(n);
                    let yi = out.row_mut(n);
                    for oc in 0..out_channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = b[oc];
                                for ic in 0..in_channels {
                                    let wbase = (oc * in_channels + ic) * kernel * kernel;
                                    let xbase = ic * h * wd;
                                    for ky in 0..kernel {
                                        let xrow = xbase + (oy * stride + ky) * wd + ox * stride;
                                        let wrow = wbase + ky * kernel;
                                        acc += dot(&w[wrow..wrow + kernel], &xi[xrow..xrow + kernel]);
                                    }
                                }
                                yi[(oc * oh + oy) * ow + ox] = acc;
                            }
                        }
                    }
                }
                out
            }
            LayerSpec::MaxPool2d { .. } => {
                let mut out = Tensor::zeros(&out_shape);
                for n in 0..batch {
                    let xi = x.row(n);
                    let yi = out.row_mut(n);
                    for (o, src) in self.pool_argmax(xi).into_iter().enumerate() {
                        yi[o] = xi[src];
                    }
                }
                out
            }
            LayerSpec::Relu => {
                let mut out = x.clone();
                for v in out.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                out
            }
            LayerSpec::Flatten => x
                .clone()
                .reshape(&out_shape)
                .expect("flatten preserves element count"),
        }
    }

    /// Source index (within one example) of each pooled output; first maximum
    /// in scan order wins.
    fn pool_argmax(&self, xi: &[f64]) -> Vec<usize> {
        let LayerSpec::MaxPool2d { size } = self.spec else {
            unreachable!()
        };
        let (c, h, w) = (self.in_shape[0], self.in_shape[1], self.in_shape[2]);
        let (oh, ow) = (self.out_shape[1], self.out_shape[2]);
        let mut idx = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = ch * h * w + (oy * size) * w + ox * size;
                    for ky in 0..size {
                        for kx in 0..size {
                            let s = ch * h * w + (oy * size + ky) * w + ox * size + kx;
                            if xi[s] > xi[best] {
                                best = s;
                            }
                        }
                    }
                    idx.push(best);
                }
            }
        }
        idx
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the
    /// layer input (or `None` when `need_input_grad` is false).
    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor, need_input_grad: bool) -> Option<Tensor> {
        let batch = x.rows();
        match self.spec {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                {
                    let (wp, bp) = self.params.split_at_mut(1);
                    let gw = wp[0].grad.data_mut();
                    let gb = bp[0].grad.data_mut();
                    for n in 0..batch {
                        let xi = x.row(n);
                        let gi = grad_out.row(n);
                        for o in 0..out_features {
                            let g = gi[o];
                            gb[o] += g;
                            if g != 0.0 {
                                let row = &mut gw[o * in_features..(o + 1) * in_features];
                                for (r, xv) in row.iter_mut().zip(xi) {
                                    *r += g * xv;
                                }
                            }
                        }
                    }
                }
                need_input_grad.then(|| {
                    let w = self.params[0].value.data();
                    let mut gx = Tensor::zeros(x.shape());
                    for n in 0..batch {
                        let gi = grad_out.row(n);
                        let gxi = gx.row_mut(n);
                        for o in 0..out_features {
                            let g = gi[o];
                            if g != 0.0 {
                                let wr = &w[o * in_features..(o + 1) * in_features];
                                for (r, wv) in gxi.iter_mut().zip(wr) {
                                    *r += g * wv;
                                }
                            }
                        }
                    }
                    gx
                })
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let (h, wd) = (self.in_shape[1], self.in_shape[2]);
                let (oh, ow) = (self.out_shape[1], self.out_shape[2]);
                let mut gx = need_input_grad.then(|| Tensor::zeros(x.shape()));
                let (wp, bp) = self.params.split_at_mut(1);
                let w = wp[0].value.data();
                let gw = wp[0].grad.data_mut();
                let gb = bp[0].grad.data_mut();
                for n in 0..batch {
                    let xi = x.row(n);
                    let gi = grad_out.row(n);
                    for oc in 0..out_channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = gi[(oc * oh + oy) * ow + ox];
                                gb[oc] += g;
                                if g == 0.0 {
                                    continue;
                                }
                                for ic in 0..in_channels {
                                    let wbase = (oc * in_channels + ic) * kernel * kernel;
                                    let xbase = ic * h * wd;
                                    for ky in 0..kernel {
                                        let xrow = xbase + (oy * stride + ky) * wd + ox * stride;
                                        let wrow = wbase + ky * kernel;
                                        for kx in 0..kernel {
                                            gw[wrow + kx] += g * xi[xrow + kx];
                                        }
                                        if let Some(gx) = gx.as_mut() {
                                            let gxi = gx.row_mut(n);
                                            for kx in 0..kernel {
                                                gxi[xrow + kx] += g * w[wrow + kx];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                gx
            }
            LayerSpec::MaxPool2d { .. } => need_input_grad.then(|| {
                let mut gx = Tensor::zeros(x.shape());
                for n in 0..batch {
                    let src = self.pool_argmax(x.row(n));
                    let gi = grad_out.row(n);
                    let gxi = gx.row_mut(n);
                    for (o, s) in src.into_iter().enumerate() {
                        gxi[s] += gi[o];
                    }
                }
                gx
            }),
            LayerSpec::Relu => need_input_grad.then(|| {
                let mut gx = grad_out.clone();
                for (g, xv) in gx.data_mut().iter_mut().zip(x.data()) {
                    if *xv <= 0.0 {
                        *g = 0.0;
                    }
                }
                gx
            }),
            LayerSpec::Flatten => need_input_grad.then(|| {
                grad_out
                    .clone()
                    .reshape(x.shape())
                    .expect("flatten preserves element count")
            }),
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
