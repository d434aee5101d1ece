//! Layer kinds with hand-written forward and backward passes.
//!
//! Per-sample tensors carry no batch dimension. Convolution and pooling accept
//! either `[C, H, W]` or a time-stacked `[T, C, H, W]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::compression::LinearCompression;
use super::lstm::{Lstm, LstmCache};
use super::tensor::{gemv_acc, gemv_t_acc, outer_acc, Tensor};

/// Errors inside a single layer; the model wraps them with the layer index.
pub(crate) type LayerResult<T> = std::result::Result<T, String>;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    MaxPool2d(MaxPool2d),
    Lstm(Lstm),
    Activation(Activation),
    Flatten(Flatten),
    LinearCompression(LinearCompression),
}

#[derive(Debug, Clone)]
pub(crate) enum Cache {
    Input(Tensor),
    Pool { argmax: Vec<usize>, in_shape: Vec<usize> },
    Act { input: Tensor, output: Tensor },
    Shape(Vec<usize>),
    Lstm(Box<LstmCache>),
    Compression(Box<super::compression::CompressionCache>),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool2d(_) => "maxpool",
            Layer::Lstm(_) => "lstm",
            Layer::Activation(_) => "activation",
            Layer::Flatten(_) => "flatten",
            Layer::LinearCompression(_) => "linear_compression",
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::Conv2d(l) => vec![&l.weight, &l.bias],
            Layer::Lstm(l) => vec![&l.w_input, &l.w_hidden, &l.bias],
            Layer::LinearCompression(l) => vec![&l.re, &l.im],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Conv2d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Lstm(l) => vec![&mut l.w_input, &mut l.w_hidden, &mut l.bias],
            Layer::LinearCompression(l) => vec![&mut l.re, &mut l.im],
            _ => vec![],
        }
    }

    pub(crate) fn forward(&self, x: &Tensor) -> LayerResult<(Tensor, Cache)> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Conv2d(l) => l.forward(x),
            Layer::MaxPool2d(l) => l.forward(x),
            Layer::Lstm(l) => l.forward(x).map(|(y, c)| (y, Cache::Lstm(Box::new(c)))),
            Layer::Activation(l) => l.forward(x),
            Layer::Flatten(l) => l.forward(x),
            Layer::LinearCompression(l) => l.forward(x).map(|(y, c)| (y, Cache::Compression(Box::new(c)))),
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub(crate) fn backward(&self, cache: &Cache, g: &Tensor, grads: &mut [Tensor]) -> Tensor {
        match (self, cache) {
            (Layer::Dense(l), Cache::Input(x)) => l.backward(x, g, grads),
            (Layer::Conv2d(l), Cache::Input(x)) => l.backward(x, g, grads),
            (Layer::MaxPool2d(_), Cache::Pool { argmax, in_shape }) => {
                let mut dx = Tensor::zeros(in_shape);
                for (o, &i) in argmax.iter().enumerate() {
                    dx.data[i] += g.data[o];
                }
                dx
            }
            (Layer::Lstm(l), Cache::Lstm(c)) => l.backward(c, g, grads),
            (Layer::Activation(l), Cache::Act { input, output }) => l.backward(input, output, g),
            (Layer::Flatten(_), Cache::Shape(s)) => Tensor {
                shape: s.clone(),
                data: g.data.clone(),
            },
            (Layer::LinearCompression(l), Cache::Compression(c)) => l.backward(c, g, grads),
            _ => unreachable!("cache kind does not match layer kind"),
        }
    }

    /// Selection pattern (maxpool winners, ReLU masks) recorded in a cache;
    /// used to detect non-differentiable points during gradient checks.
    pub(crate) fn kink_pattern(&self, cache: &Cache, out: &mut Vec<u64>) {
        match (self, cache) {
            (Layer::MaxPool2d(_), Cache::Pool { argmax, .. }) => out.extend(argmax.iter().map(|&i| i as u64)),
            (Layer::Activation(Activation { kind: ActKind::Relu }), Cache::Act { input, .. }) => {
                out.extend(input.data.iter().map(|&v| (v > 0.0) as u64))
            }
            (Layer::LinearCompression(_), Cache::Compression(c)) => out.extend(c.clamped.iter().map(|&b| b as u64)),
            _ => {}
        }
    }
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-a..a)).collect()
}

/// Fully connected layer over the flattened input.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Dense {
            weight: Tensor {
                shape: vec![outputs, inputs],
                data: glorot(rng, inputs, outputs, inputs * outputs),
            },
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    fn forward(&self, x: &Tensor) -> LayerResult<(Tensor, Cache)> {
        if x.len() != self.inputs() {
            return Err(format!("expected {} inputs, got shape {:?}", self.inputs(), x.shape));
        }
        let mut y = self.bias.data.clone();
        gemv_acc(&self.weight.data, &x.data, &mut y);
        Ok((Tensor::vector(y), Cache::Input(x.clone())))
    }

    fn backward(&self, x: &Tensor, g: &Tensor, grads: &mut [Tensor]) -> Tensor {
        outer_acc(&g.data, &x.data, &mut grads[0].data);
        grads[1].add_assign(g);
        let mut dx = Tensor::zeros(&x.shape);
        gemv_t_acc(&self.weight.data, &g.data, &mut dx.data);
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    Same,
}

/// Stride-1 2-D convolution with square odd kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out_c, in_c, k, k]`
    pub weight: Tensor,
    /// `[out_c]`
    pub bias: Tensor,
    pub padding: Padding,
}

struct ConvGeom {
    frames: usize,
    ic: usize,
    h: usize,
    w: usize,
    oc: usize,
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, k: usize, padding: Padding, rng: &mut impl Rng) -> Self {
        let n = out_c * in_c * k * k;
        Conv2d {
            weight: Tensor {
                shape: vec![out_c, in_c, k, k],
                data: glorot(rng, in_c * k * k, out_c * k * k, n),
            },
            bias: Tensor::zeros(&[out_c]),
            padding,
        }
    }

    fn geom(&self, shape: &[usize]) -> LayerResult<ConvGeom> {
        let (frames, ic, h, w) = match shape {
            [c, h, w] => (1, *c, *h, *w),
            [t, c, h, w] => (*t, *c, *h, *w),
            _ => return Err(format!("expected [C,H,W] or [T,C,H,W], got {shape:?}")),
        };
        let oc = self.weight.shape[0];
        let k = self.weight.shape[2];
        if ic != self.weight.shape[1] {
            return Err(format!("expected {} input channels, got {ic}", self.weight.shape[1]));
        }
        let pad = match self.padding {
            Padding::Valid => 0,
            Padding::Same => k / 2,
        };
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(format!("input {h}x{w} smaller than kernel {k}"));
        }
        Ok(ConvGeom {
            frames,
            ic,
            h,
            w,
            oc,
            k,
            pad,
            oh: h + 2 * pad - k + 1,
            ow: w + 2 * pad - k + 1,
        })
    }

    fn out_shape(&self, in_shape: &[usize], g: &ConvGeom) -> Vec<usize> {
        if in_shape.len() == 4 {
            vec![g.frames, g.oc, g.oh, g.ow]
        } else {
            vec![g.oc, g.oh, g.ow]
        }
    }

    /// Output column range `[lo, hi)` for which `x + kx - pad` is inside `[0, w)`.
    #[inline]
    fn col_range(kx: usize, pad: usize, w: usize, ow: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(kx);
        let hi = (w + pad).saturating_sub(kx).min(ow);
        (lo, hi.max(lo))
    }

    fn forward(&self, x: &Tensor) -> LayerResult<(Tensor, Cache)> {
        let g = self.geom(&x.shape)?;
        let mut y = Tensor::zeros(&self.out_shape(&x.shape, &g));
        let in_frame = g.ic * g.h * g.w;
        let out_frame = g.oc * g.oh * g.ow;
        let wd = &self.weight.data;
        for t in 0..g.frames {
            let xin = &x.data[t * in_frame..(t + 1) * in_frame];
            let yout = &mut y.data[t * out_frame..(t + 1) * out_frame];
            for o in 0..g.oc {
                let yo = &mut yout[o * g.oh * g.ow..(o + 1) * g.oh * g.ow];
                yo.iter_mut().for_each(|v| *v = self.bias.data[o]);
                for i in 0..g.ic {
                    let xi = &xin[i * g.h * g.w..(i + 1) * g.h * g.w];
                    for ky in 0..g.k {
                        for kx in 0..g.k {
                            let wv = wd[((o * g.ic + i) * g.k + ky) * g.k + kx];
                            let (lo, hi) = Self::col_range(kx, g.pad, g.w, g.ow);
                            for oy in 0..g.oh {
                                let iy = oy + ky;
                                if iy < g.pad || iy - g.pad >= g.h {
                                    continue;
                                }
                                let iy = iy - g.pad;
                                let src = &xi[iy * g.w + lo + kx - g.pad..iy * g.w + hi + kx - g.pad];
                                let dst = &mut yo[oy * g.ow + lo..oy * g.ow + hi];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok((y, Cache::Input(x.clone())))
    }

    fn backward(&self, x: &Tensor, gy: &Tensor, grads: &mut [Tensor]) -> Tensor {
        let g = self.geom(&x.shape).expect("validated in forward");
        let mut dx = Tensor::zeros(&x.shape);
        let in_frame = g.ic * g.h * g.w;
        let out_frame = g.oc * g.oh * g.ow;
        let (dw_slot, rest) = grads.split_at_mut(1);
        let dw = &mut dw_slot[0].data;
        let db = &mut rest[0].data;
        let wd = &self.weight.data;
        for t in 0..g.frames {
            let xin = &x.data[t * in_frame..(t + 1) * in_frame];
            let dxin = &mut dx.data[t * in_frame..(t + 1) * in_frame];
            let gout = &gy.data[t * out_frame..(t + 1) * out_frame];
            for o in 0..g.oc {
                let go = &gout[o * g.oh * g.ow..(o + 1) * g.oh * g.ow];
                db[o] += go.iter().sum::<f64>();
                for i in 0..g.ic {
                    let xi = &xin[i * g.h * g.w..(i + 1) * g.h * g.w];
                    let dxi = &mut dxin[i * g.h * g.w..(i + 1) * g.h * g.w];
                    for ky in 0..g.k {
                        for kx in 0..g.k {
                            let widx = ((o * g.ic + i) * g.k + ky) * g.k + kx;
                            let wv = wd[widx];
                            let (lo, hi) = Self::col_range(kx, g.pad, g.w, g.ow);
                            let mut acc = 0.0;
                            for oy in 0..g.oh {
                                let iy = oy + ky;
                                if iy < g.pad || iy - g.pad >= g.h {
                                    continue;
                                }
                                let iy = iy - g.pad;
                                let start = iy * g.w + lo + kx - g.pad;
                                let end = start + (hi - lo);
                                let src = &xi[start..end];
                                let gsrc = &go[oy * g.ow + lo..oy * g.ow + hi];
                                let dst = &mut dxi[start..end];
                                for ((d, s), gv) in dst.iter_mut().zip(src).zip(gsrc) {
                                    acc += gv * s;
                                    *d += wv * gv;
                                }
                            }
                            dw[widx] += acc;
                        }
                    }
                }
            }
        }
        dx
    }
}

/// 2x2 max pooling with stride 2 (trailing odd row/column dropped). Ties go
/// to the first element in row-major window order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool2d;

impl MaxPool2d {
    fn forward(&self, x: &Tensor) -> LayerResult<(Tensor, Cache)> {
        let (lead, h, w) = match x.shape.as_slice() {
            [c, h, w] => (*c, *h, *w),
            [t, c, h, w] => (t * c, *h, *w),
            s => return Err(format!("expected [C,H,W] or [T,C,H,W], got {s:?}")),
        };
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(format!("input {h}x{w} too small to pool"));
        }
        let mut out_shape = x.shape.clone();
        let n = out_shape.len();
        out_shape[n - 2] = oh;
        out_shape[n - 1] = ow;
        let mut y = Tensor::zeros(&out_shape);
        let mut argmax = Vec::with_capacity(y.len());
        for p in 0..lead {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x.data[idx] > x.data[best] {
                            best = idx;
                        }
                    }
                    y.data[(p * oh + oy) * ow + ox] = x.data[best];
                    argmax.push(best);
                }
            }
        }
        Ok((
            y,
            Cache::Pool {
                argmax,
                in_shape: x.shape.clone(),
            },
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActKind {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub kind: ActKind,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Activation {
    fn forward(&self, x: &Tensor) -> LayerResult<(Tensor, Cache)> {
        let f: fn(f64) -> f64 = match self.kind {
            ActKind::Relu => |v| v.max(0.0),
            ActKind::Sigmoid => sigmoid,
            ActKind::Tanh => f64::tanh,
        };
        let y = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| f(v)).collect(),
        };
        Ok((
            y.clone(),
            Cache::Act {
                input: x.clone(),
                output: y,
            },
        ))
    }

    fn backward(&self, x: &Tensor, y: &Tensor, g: &Tensor) -> Tensor {
        let data = match self.kind {
            ActKind::Relu => x
                .data
                .iter()
                .zip(&g.data)
                .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                .collect(),
            ActKind::Sigmoid => y.data.iter().zip(&g.data).map(|(&s, &gv)| gv * s * (1.0 - s)).collect(),
            ActKind::Tanh => y.data.iter().zip(&g.data).map(|(&t, &gv)| gv * (1.0 - t * t)).collect(),
        };
        Tensor {
            shape: x.shape.clone(),
            data,
        }
    }
}

/// Collapses trailing dimensions: to a vector, or to `[T, rest]` when
/// `keep_leading` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Flatten {
    pub keep_leading: bool,
}

impl Flatten {
    fn forward(&self, x: &Tensor) -> LayerResult<(Tensor, Cache)> {
        let shape = if self.keep_leading {
            let t = *x.shape.first().ok_or("empty shape")?;
            vec![t, x.len() / t.max(1)]
        } else {
            vec![x.len()]
        };
        Ok((
            Tensor {
                shape,
                data: x.data.clone(),
            },
            Cache::Shape(x.shape.clone()),
        ))
    }
}
