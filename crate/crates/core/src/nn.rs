//! Minimal layers with hand-written backward passes.
//!
//! Spatial activations are stored channel-major (`[C, N, H, W]`) so that a
//! whole mini-batch goes through every convolution as one GEMM.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::real::Real;
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::ZERO; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape/data mismatch");
        Self { shape: shape.to_vec(), data }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut Stream) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(rng.random_range(-bound..=bound))).collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect() }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::ZERO);
    }
}

/// A batch of feature planes, laid out `[channels, batch, height, width]`.
#[derive(Debug, Clone)]
pub struct Planes<T> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Planes<T> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self { c, n, h, w, data: vec![T::ZERO; c * n * h * w] }
    }

    /// Columns per channel (`n * h * w`).
    pub fn cols(&self) -> usize {
        self.n * self.h * self.w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

/// Unfold `x` into `[(c, kh, kw), (n, oh, ow)]` patches for an output grid
/// of `ho x wo`.
pub fn im2col<T: Real>(x: &Planes<T>, win: Window, ho: usize, wo: usize) -> Vec<T> {
    let k = win.kernel;
    let m = x.n * ho * wo;
    let mut cols = vec![T::ZERO; x.c * k * k * m];
    let plane = x.h * x.w;
    for ci in 0..x.c {
        for kh in 0..k {
            for kw in 0..k {
                let row = (ci * k + kh) * k + kw;
                let dst_row = &mut cols[row * m..(row + 1) * m];
                for b in 0..x.n {
                    let src = &x.data[(ci * x.n + b) * plane..(ci * x.n + b + 1) * plane];
                    for oh in 0..ho {
                        let ih = (oh * win.stride + kh) as isize - win.pad as isize;
                        if ih < 0 || ih >= x.h as isize {
                            continue;
                        }
                        let src_row = &src[ih as usize * x.w..(ih as usize + 1) * x.w];
                        let dst = &mut dst_row[(b * ho + oh) * wo..(b * ho + oh + 1) * wo];
                        for (ow, d) in dst.iter_mut().enumerate() {
                            let iw = (ow * win.stride + kw) as isize - win.pad as isize;
                            if iw >= 0 && iw < x.w as isize {
                                *d = src_row[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patches back into a `[c, n, h, w]` grid.
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    n: usize,
    h: usize,
    w: usize,
    win: Window,
    ho: usize,
    wo: usize,
) -> Planes<T> {
    let k = win.kernel;
    let m = n * ho * wo;
    let mut out = Planes::zeros(c, n, h, w);
    let plane = h * w;
    for ci in 0..c {
        for kh in 0..k {
            for kw in 0..k {
                let row = (ci * k + kh) * k + kw;
                let src_row = &cols[row * m..(row + 1) * m];
                for b in 0..n {
                    let dst = &mut out.data[(ci * n + b) * plane..(ci * n + b + 1) * plane];
                    for oh in 0..ho {
                        let ih = (oh * win.stride + kh) as isize - win.pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[ih as usize * w..(ih as usize + 1) * w];
                        let src = &src_row[(b * ho + oh) * wo..(b * ho + oh + 1) * wo];
                        for (ow, s) in src.iter().enumerate() {
                            let iw = (ow * win.stride + kw) as isize - win.pad as isize;
                            if iw >= 0 && iw < w as isize {
                                dst_row[iw as usize] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn relu_inplace<T: Real>(data: &mut [T]) {
    for v in data {
        if *v < T::ZERO {
            *v = T::ZERO;
        }
    }
}

/// Zero the upstream gradient wherever the rectified output was not positive.
pub fn relu_backward<T: Real>(grad: &mut [T], output: &[T]) {
    for (g, y) in grad.iter_mut().zip(output) {
        if *y <= T::ZERO {
            *g = T::ZERO;
        }
    }
}

fn add_channel_bias<T: Real>(p: &mut Planes<T>, bias: &[T]) {
    let m = p.cols();
    for (row, b) in p.data.chunks_exact_mut(m).zip(bias) {
        row.iter_mut().for_each(|v| *v += *b);
    }
}

fn accumulate_channel_bias<T: Real>(grad: &Planes<T>, bias_grad: &mut [T]) {
    let m = grad.cols();
    for (row, g) in grad.data.chunks_exact(m).zip(bias_grad) {
        *g += row.iter().copied().sum::<T>();
    }
}

/// 2-D convolution, weight `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub window: Window,
}

impl<T: Real> Conv2d<T> {
    pub fn new(cin: usize, cout: usize, window: Window, rng: &mut Stream) -> Self {
        let fan_in = (cin * window.kernel * window.kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        Self {
            weight: Tensor::uniform(&[cout, cin, window.kernel, window.kernel], bound, rng),
            bias: Tensor::uniform(&[cout], bound, rng),
            window,
        }
    }

    pub fn cin(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn cout(&self) -> usize {
        self.weight.shape[0]
    }

    /// Returns the output planes and the unfolded input needed for backward.
    pub fn forward(&self, x: &Planes<T>) -> (Planes<T>, Vec<T>) {
        assert_eq!(x.c, self.cin(), "conv input channels");
        let (ho, wo) = (self.window.out_len(x.h), self.window.out_len(x.w));
        let cols = im2col(x, self.window, ho, wo);
        let r = self.cin() * self.window.kernel * self.window.kernel;
        let m = x.n * ho * wo;
        let mut y = Planes::zeros(self.cout(), x.n, ho, wo);
        T::gemm(self.cout(), r, m, T::ONE, &self.weight.data, r as isize, 1, &cols, m as isize, 1, T::ZERO, &mut y.data, m as isize, 1);
        add_channel_bias(&mut y, &self.bias.data);
        (y, cols)
    }

    /// Accumulates parameter gradients into `grad`; returns the input gradient
    /// when `input_shape` is given.
    pub fn backward(
        &self,
        dy: &Planes<T>,
        cols: &[T],
        input_shape: Option<(usize, usize, usize)>,
        grad: &mut Self,
    ) -> Option<Planes<T>> {
        let r = self.cin() * self.window.kernel * self.window.kernel;
        let m = dy.cols();
        let co = self.cout();
        // dW[co, r] += dy[co, m] * cols^T[m, r]
        T::gemm(co, m, r, T::ONE, &dy.data, m as isize, 1, cols, 1, m as isize, T::ONE, &mut grad.weight.data, r as isize, 1);
        accumulate_channel_bias(dy, &mut grad.bias.data);
        input_shape.map(|(n, h, w)| {
            let mut dcols = vec![T::ZERO; r * m];
            // dcols[r, m] = W^T[r, co] * dy[co, m]
            T::gemm(r, co, m, T::ONE, &self.weight.data, 1, r as isize, &dy.data, m as isize, 1, T::ZERO, &mut dcols, m as isize, 1);
            col2im(&dcols, self.cin(), n, h, w, self.window, dy.h, dy.w)
        })
    }
}

/// Transposed convolution doubling the spatial size, weight `[in, out, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub window: Window,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new(cin: usize, cout: usize, window: Window, rng: &mut Stream) -> Self {
        let fan_in = (cout * window.kernel * window.kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        Self {
            weight: Tensor::uniform(&[cin, cout, window.kernel, window.kernel], bound, rng),
            bias: Tensor::uniform(&[cout], bound, rng),
            window,
        }
    }

    pub fn cin(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn cout(&self) -> usize {
        self.weight.shape[1]
    }

    fn out_len(&self, len: usize) -> usize {
        len * self.window.stride
    }

    pub fn forward(&self, x: &Planes<T>) -> Planes<T> {
        assert_eq!(x.c, self.cin(), "deconv input channels");
        let r = self.cout() * self.window.kernel * self.window.kernel;
        let m = x.cols();
        let ci = self.cin();
        let mut cols = vec![T::ZERO; r * m];
        // cols[r, m] = W^T[r, ci] * x[ci, m]
        T::gemm(r, ci, m, T::ONE, &self.weight.data, 1, r as isize, &x.data, m as isize, 1, T::ZERO, &mut cols, m as isize, 1);
        let mut y = col2im(&cols, self.cout(), x.n, self.out_len(x.h), self.out_len(x.w), self.window, x.h, x.w);
        add_channel_bias(&mut y, &self.bias.data);
        y
    }

    pub fn backward(&self, dy: &Planes<T>, x: &Planes<T>, need_input: bool, grad: &mut Self) -> Option<Planes<T>> {
        let r = self.cout() * self.window.kernel * self.window.kernel;
        let m = x.cols();
        let ci = self.cin();
        let dcols = im2col(dy, self.window, x.h, x.w);
        // dW[ci, r] += x[ci, m] * dcols^T[m, r]
        T::gemm(ci, m, r, T::ONE, &x.data, m as isize, 1, &dcols, 1, m as isize, T::ONE, &mut grad.weight.data, r as isize, 1);
        accumulate_channel_bias(dy, &mut grad.bias.data);
        need_input.then(|| {
            let mut dx = Planes::zeros(ci, x.n, x.h, x.w);
            T::gemm(ci, r, m, T::ONE, &self.weight.data, r as isize, 1, &dcols, m as isize, 1, T::ZERO, &mut dx.data, m as isize, 1);
            dx
        })
    }
}

/// Fully connected layer, weight `[out, in]`, applied to row-major `[batch, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(input: usize, output: usize, rng: &mut Stream) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self { weight: Tensor::uniform(&[output, input], bound, rng), bias: Tensor::uniform(&[output], bound, rng) }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Tensor::zeros(&[output, input]), bias: Tensor::zeros(&[output]) }
    }

    pub fn input(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn output(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &[T], batch: usize) -> Vec<T> {
        let (i, o) = (self.input(), self.output());
        assert_eq!(x.len(), batch * i, "linear input length");
        let mut y = Vec::with_capacity(batch * o);
        for _ in 0..batch {
            y.extend_from_slice(&self.bias.data);
        }
        T::gemm(batch, i, o, T::ONE, x, i as isize, 1, &self.weight.data, 1, i as isize, T::ONE, &mut y, o as isize, 1);
        y
    }

    pub fn backward(&self, dy: &[T], x: &[T], batch: usize, need_input: bool, grad: &mut Self) -> Option<Vec<T>> {
        let (i, o) = (self.input(), self.output());
        // dW[o, i] += dy^T[o, b] * x[b, i]
        T::gemm(o, batch, i, T::ONE, dy, 1, o as isize, x, i as isize, 1, T::ONE, &mut grad.weight.data, i as isize, 1);
        for row in dy.chunks_exact(o) {
            for (g, d) in grad.bias.data.iter_mut().zip(row) {
                *g += *d;
            }
        }
        need_input.then(|| {
            let mut dx = vec![T::ZERO; batch * i];
            T::gemm(batch, o, i, T::ONE, dy, o as isize, 1, &self.weight.data, i as isize, 1, T::ZERO, &mut dx, i as isize, 1);
            dx
        })
    }
}

/// One-hidden-layer perceptron with ReLU; the output is left linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub hidden: Linear<T>,
    pub out: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    pub hidden: Vec<T>,
}

impl<T: Real> Mlp<T> {
    pub fn new(input: usize, width: usize, output: usize, rng: &mut Stream) -> Self {
        Self { hidden: Linear::new(input, width, rng), out: Linear::new(width, output, rng) }
    }

    pub fn zeros(input: usize, width: usize, output: usize) -> Self {
        Self { hidden: Linear::zeros(input, width), out: Linear::zeros(width, output) }
    }

    pub fn forward(&self, x: &[T], batch: usize) -> (Vec<T>, MlpCache<T>) {
        let mut h = self.hidden.forward(x, batch);
        relu_inplace(&mut h);
        let y = self.out.forward(&h, batch);
        (y, MlpCache { hidden: h })
    }

    pub fn backward(&self, dy: &[T], x: &[T], cache: &MlpCache<T>, batch: usize, grad: &mut Self) -> Vec<T> {
        let mut dh = self.out.backward(dy, &cache.hidden, batch, true, &mut grad.out).expect("hidden grad");
        relu_backward(&mut dh, &cache.hidden);
        self.hidden.backward(&dh, x, batch, true, &mut grad.hidden).expect("input grad")
    }
}

/// Reorder `[C, N, H, W]` planes into row-major `[N, C*H*W]` feature rows.
pub fn planes_to_rows<T: Real>(p: &Planes<T>) -> Vec<T> {
    let plane = p.h * p.w;
    let feat = p.c * plane;
    let mut rows = vec![T::ZERO; p.n * feat];
    for c in 0..p.c {
        for b in 0..p.n {
            let src = &p.data[(c * p.n + b) * plane..(c * p.n + b + 1) * plane];
            rows[b * feat + c * plane..b * feat + (c + 1) * plane].copy_from_slice(src);
        }
    }
    rows
}

pub fn rows_to_planes<T: Real>(rows: &[T], c: usize, n: usize, h: usize, w: usize) -> Planes<T> {
    let plane = h * w;
    let feat = c * plane;
    let mut p = Planes::zeros(c, n, h, w);
    for ci in 0..c {
        for b in 0..n {
            p.data[(ci * n + b) * plane..(ci * n + b + 1) * plane]
                .copy_from_slice(&rows[b * feat + ci * plane..b * feat + (ci + 1) * plane]);
        }
    }
    p
}
