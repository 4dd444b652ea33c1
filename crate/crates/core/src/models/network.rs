use crate::nn::{
    planes_to_rows, relu_backward, relu_inplace, rows_to_planes, Conv2d, ConvTranspose2d, Linear, Planes,
};
use crate::real::{sigmoid, softplus, Real};
use crate::rng::Stream;

use super::{Architecture, GaussianParams};

/// Additive floor on the encoder standard deviation.
pub const STD_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub convs: Vec<Conv2d<T>>,
    pub mean_head: Linear<T>,
    pub std_head: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct EncoderTrace<T> {
    n: usize,
    cols: Vec<Vec<T>>,
    outputs: Vec<Planes<T>>,
    flat: Vec<T>,
    std_pre: Vec<T>,
}

impl<T: Real> Encoder<T> {
    pub fn new(arch: &Architecture, rng: &mut Stream) -> Self {
        let convs = arch.channels.windows(2).map(|w| Conv2d::new(w[0], w[1], arch.window, rng)).collect();
        Self {
            convs,
            mean_head: Linear::new(arch.flat_len(), arch.latent, rng),
            std_head: Linear::new(arch.flat_len(), arch.latent, rng),
        }
    }

    /// `x` holds `n` single-channel `side x side` images back to back.
    pub fn forward(&self, x: &[T], n: usize, side: usize) -> (GaussianParams<T>, EncoderTrace<T>) {
        assert_eq!(x.len(), n * side * side, "encoder input length");
        let mut act = Planes { c: 1, n, h: side, w: side, data: x.to_vec() };
        let mut cols = Vec::with_capacity(self.convs.len());
        let mut outputs = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (mut y, c) = conv.forward(&act);
            relu_inplace(&mut y.data);
            cols.push(c);
            outputs.push(y.clone());
            act = y;
        }
        let flat = planes_to_rows(&act);
        let mean = self.mean_head.forward(&flat, n);
        let std_pre = self.std_head.forward(&flat, n);
        let floor = T::from_f64(STD_FLOOR);
        let std = std_pre.iter().map(|s| softplus(*s) + floor).collect();
        let dim = self.mean_head.output();
        (GaussianParams::new(dim, mean, std), EncoderTrace { n, cols, outputs, flat, std_pre })
    }

    pub fn backward(&self, trace: &EncoderTrace<T>, dmean: &[T], dstd: &[T], grad: &mut Self) {
        let n = trace.n;
        let dpre: Vec<T> = dstd.iter().zip(&trace.std_pre).map(|(g, s)| *g * sigmoid(*s)).collect();
        let mut dflat = self.mean_head.backward(dmean, &trace.flat, n, true, &mut grad.mean_head).expect("flat grad");
        let dflat_std = self.std_head.backward(&dpre, &trace.flat, n, true, &mut grad.std_head).expect("flat grad");
        for (a, b) in dflat.iter_mut().zip(dflat_std) {
            *a += b;
        }
        let last = trace.outputs.last().expect("at least one conv");
        let mut dy = rows_to_planes(&dflat, last.c, last.n, last.h, last.w);
        for (i, conv) in self.convs.iter().enumerate().rev() {
            relu_backward(&mut dy.data, &trace.outputs[i].data);
            let input_shape = (i > 0).then(|| {
                let prev = &trace.outputs[i - 1];
                (prev.n, prev.h, prev.w)
            });
            match conv.backward(&dy, &trace.cols[i], input_shape, &mut grad.convs[i]) {
                Some(dx) => dy = dx,
                None => break,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T> {
    pub fc: Linear<T>,
    pub deconvs: Vec<ConvTranspose2d<T>>,
}

#[derive(Debug, Clone)]
pub struct DecoderTrace<T> {
    n: usize,
    z: Vec<T>,
    inputs: Vec<Planes<T>>,
}

impl<T: Real> Decoder<T> {
    pub fn new(arch: &Architecture, rng: &mut Stream) -> Self {
        let rev: Vec<usize> = arch.channels.iter().rev().copied().collect();
        let deconvs = rev.windows(2).map(|w| ConvTranspose2d::new(w[0], w[1], arch.window, rng)).collect();
        Self { fc: Linear::new(arch.latent, arch.flat_len(), rng), deconvs }
    }

    pub fn forward(&self, z: &[T], n: usize, arch: &Architecture) -> (Vec<T>, DecoderTrace<T>) {
        let mut fc_out = self.fc.forward(z, n);
        relu_inplace(&mut fc_out);
        let s = arch.bottleneck_side();
        let mut act = rows_to_planes(&fc_out, arch.bottleneck_channels(), n, s, s);
        let mut inputs = Vec::with_capacity(self.deconvs.len());
        let last = self.deconvs.len() - 1;
        for (i, deconv) in self.deconvs.iter().enumerate() {
            let mut y = deconv.forward(&act);
            if i < last {
                relu_inplace(&mut y.data);
            }
            inputs.push(act);
            act = y;
        }
        (act.data, DecoderTrace { n, z: z.to_vec(), inputs })
    }

    /// Returns the gradient with respect to `z`.
    pub fn backward(&self, trace: &DecoderTrace<T>, dxhat: &[T], arch: &Architecture, grad: &mut Self) -> Vec<T> {
        let n = trace.n;
        let mut dy = Planes { c: 1, n, h: arch.side, w: arch.side, data: dxhat.to_vec() };
        for (i, deconv) in self.deconvs.iter().enumerate().rev() {
            let mut dx = deconv.backward(&dy, &trace.inputs[i], true, &mut grad.deconvs[i]).expect("input grad");
            relu_backward(&mut dx.data, &trace.inputs[i].data);
            dy = dx;
        }
        let dfc = planes_to_rows(&dy);
        self.fc.backward(&dfc, &trace.z, n, true, &mut grad.fc).expect("latent grad")
    }
}
