use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labels::LabelVector;
use crate::nn::{Mlp, Tensor};
use crate::real::Real;
use crate::rng::{stream, Domain};

use super::arch::{Architecture, Framework, CHARACTERISTIC_DIMS};
use super::heads::{Classifier, Prior};
use super::network::{Decoder, Encoder};
use super::{GaussianParams, LabelProbabilities};

/// All learnable parameters of one framework instance.
///
/// `encoder` is the inference network, `decoder` the observation model,
/// `prior` the conditional prior and `classifier` either the latent
/// classifier (CCVAE/CVAE) or the downstream classifier (VAE + cls).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub framework: Framework,
    pub arch: Architecture,
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
    pub prior: Prior<T>,
    pub classifier: Classifier<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn new(framework: Framework, arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = stream(seed, Domain::Init, 0, 0);
        let encoder = Encoder::new(&arch, &mut rng);
        let decoder = Decoder::new(&arch, &mut rng);
        let prior = Prior::new(framework, &arch, &mut rng);
        let classifier = Classifier::new(framework, &arch, &mut rng);
        Ok(Self { framework, arch, encoder, decoder, prior, classifier })
    }

    /// Parameter tensors with stable names, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.encoder.convs.iter().enumerate() {
            out.push((format!("encoder.conv{i}.weight"), &c.weight));
            out.push((format!("encoder.conv{i}.bias"), &c.bias));
        }
        out.push(("encoder.mean.weight".into(), &self.encoder.mean_head.weight));
        out.push(("encoder.mean.bias".into(), &self.encoder.mean_head.bias));
        out.push(("encoder.std.weight".into(), &self.encoder.std_head.weight));
        out.push(("encoder.std.bias".into(), &self.encoder.std_head.bias));
        out.push(("decoder.fc.weight".into(), &self.decoder.fc.weight));
        out.push(("decoder.fc.bias".into(), &self.decoder.fc.bias));
        for (i, d) in self.decoder.deconvs.iter().enumerate() {
            out.push((format!("decoder.deconv{i}.weight"), &d.weight));
            out.push((format!("decoder.deconv{i}.bias"), &d.bias));
        }
        match &self.prior {
            Prior::Elementwise { weight, bias } => {
                out.push(("prior.weight".into(), weight));
                out.push(("prior.bias".into(), bias));
            }
            Prior::Mlp(m) => push_mlp(&mut out, "prior", m),
            Prior::Standard => {}
        }
        match &self.classifier {
            Classifier::Diagonal { scale, offset } => {
                out.push(("classifier.scale".into(), scale));
                out.push(("classifier.offset".into(), offset));
            }
            Classifier::Mlp(m) => push_mlp(&mut out, "classifier", m),
        }
        out
    }

    /// Mutable views in the same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        for c in &mut self.encoder.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.encoder.mean_head.weight);
        out.push(&mut self.encoder.mean_head.bias);
        out.push(&mut self.encoder.std_head.weight);
        out.push(&mut self.encoder.std_head.bias);
        out.push(&mut self.decoder.fc.weight);
        out.push(&mut self.decoder.fc.bias);
        for d in &mut self.decoder.deconvs {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        match &mut self.prior {
            Prior::Elementwise { weight, bias } => {
                out.push(weight);
                out.push(bias);
            }
            Prior::Mlp(m) => push_mlp_mut(&mut out, m),
            Prior::Standard => {}
        }
        match &mut self.classifier {
            Classifier::Diagonal { scale, offset } => {
                out.push(scale);
                out.push(offset);
            }
            Classifier::Mlp(m) => push_mlp_mut(&mut out, m),
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.tensors_mut().into_iter().for_each(|t| t.fill_zero());
        g
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::new(self.framework, self.arch.clone(), 0).expect("validated architecture");
        for (dst, (_, src)) in out.tensors_mut().into_iter().zip(self.named_tensors()) {
            *dst = src.cast();
        }
        out
    }

    /// Hash over framework, architecture and every parameter name and shape.
    pub fn architecture_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.framework.as_str().as_bytes());
        h.update(serde_json::to_vec(&self.arch).expect("architecture serializes"));
        for (name, t) in self.named_tensors() {
            h.update(name.as_bytes());
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Hash of the parameter values, used to detect accidental mutation.
    pub fn value_checksum(&self) -> String {
        let mut h = Sha256::new();
        for (_, t) in self.named_tensors() {
            for v in &t.data {
                h.update(v.to_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn encode(&self, x: &[T]) -> Result<GaussianParams<T>> {
        if x.len() != self.arch.pixels() {
            return Err(Error::Model(format!("expected {} input pixels, got {}", self.arch.pixels(), x.len())));
        }
        Ok(self.encoder.forward(x, 1, self.arch.side).0)
    }

    pub fn encode_batch(&self, x: &[T], n: usize) -> GaussianParams<T> {
        self.encoder.forward(x, n, self.arch.side).0
    }

    /// Mean of the observation model for one latent code.
    pub fn decode(&self, z: &[T]) -> Result<Vec<T>> {
        if z.len() != self.arch.latent {
            return Err(Error::Model(format!("expected latent of length {}, got {}", self.arch.latent, z.len())));
        }
        Ok(self.decoder.forward(z, 1, &self.arch).0)
    }

    pub fn decode_batch(&self, z: &[T], n: usize) -> Vec<T> {
        self.decoder.forward(z, n, &self.arch).0
    }

    pub fn conditional_prior(&self, y: &LabelVector) -> GaussianParams<T> {
        let ys: Vec<T> = y.bits().iter().map(|b| T::from_f64(*b as f64)).collect();
        let (mean, _) = self.prior.mean(&ys, 1, self.arch.latent);
        GaussianParams::new(self.arch.latent, mean, vec![T::ONE; self.arch.latent])
    }

    /// Characteristic-partition classifier. Only defined for the diagonal
    /// (CCVAE) classifier.
    pub fn classify_latent(&self, z_c: &[T]) -> Result<LabelProbabilities> {
        if z_c.len() != CHARACTERISTIC_DIMS {
            return Err(Error::Model(format!("expected {CHARACTERISTIC_DIMS} characteristic dims, got {}", z_c.len())));
        }
        if !matches!(self.classifier, Classifier::Diagonal { .. }) {
            return Err(Error::Unsupported {
                framework: self.framework.to_string(),
                reason: "classifier is not diagonal".into(),
            });
        }
        let mut z = z_c.to_vec();
        z.resize(self.arch.latent, T::ZERO);
        let (p, _) = self.classifier.forward(&z, 1, self.arch.latent);
        Ok(LabelProbabilities::from_slice(&p))
    }

    /// MLP classifier over the whole latent code (CVAE latent classifier and
    /// the downstream classifier of VAE + cls).
    pub fn classify_latent_mlp(&self, z: &[T]) -> Result<LabelProbabilities> {
        if z.len() != self.arch.latent {
            return Err(Error::Model(format!("expected latent of length {}, got {}", self.arch.latent, z.len())));
        }
        if !matches!(self.classifier, Classifier::Mlp(_)) {
            return Err(Error::Unsupported { framework: self.framework.to_string(), reason: "classifier is not an MLP".into() });
        }
        let (p, _) = self.classifier.forward(z, 1, self.arch.latent);
        Ok(LabelProbabilities::from_slice(&p))
    }

    /// Whichever classifier the framework carries, applied to a full latent.
    pub fn classify(&self, z: &[T]) -> LabelProbabilities {
        let (p, _) = self.classifier.forward(z, 1, self.arch.latent);
        LabelProbabilities::from_slice(&p)
    }

    pub fn classify_batch(&self, z: &[T], n: usize) -> Vec<T> {
        self.classifier.forward(z, n, self.arch.latent).0
    }
}

fn push_mlp<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, prefix: &str, m: &'a Mlp<T>) {
    out.push((format!("{prefix}.hidden.weight"), &m.hidden.weight));
    out.push((format!("{prefix}.hidden.bias"), &m.hidden.bias));
    out.push((format!("{prefix}.out.weight"), &m.out.weight));
    out.push((format!("{prefix}.out.bias"), &m.out.bias));
}

fn push_mlp_mut<'a, T>(out: &mut Vec<&'a mut Tensor<T>>, m: &'a mut Mlp<T>) {
    out.push(&mut m.hidden.weight);
    out.push(&mut m.hidden.bias);
    out.push(&mut m.out.weight);
    out.push(&mut m.out.bias);
}
