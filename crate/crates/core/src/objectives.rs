//! Training objectives for the three frameworks and their shared estimators.
//!
//! Every loss is evaluated on a mini-batch with explicit noise so the same
//! code path serves training (with gradients), evaluation and the
//! finite-difference checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelVector;
use crate::models::{GaussianParams, LabelProbabilities, ModelParams, PROB_EPS};
use crate::models::Framework;
use crate::real::Real;
use crate::rng::{normal, Stream};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Which parts of the CCVAE/CVAE importance-weighted term pass gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightGradient {
    /// The weight `q(y|z_c) / q(y|x)` and the `-log q(y|z_c)` correction inside
    /// the log are both constants, so the classifier learns only through
    /// `log q(y|x)`. With the weight alone detached, the correction's gradient
    /// cancels that of `log q(y|x)` in expectation and the classifier receives
    /// no systematic signal.
    #[default]
    DetachedCorrection,
    /// Only the weight is a constant.
    Detached,
    /// Exact gradient of the single-sample estimate.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    pub k: usize,
    pub beta: f64,
    pub weight_gradient: WeightGradient,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self { k: 10, beta: 1.0, weight_gradient: WeightGradient::default() }
    }
}

/// Batch-mean loss terms. Every field is in loss orientation (lower is better)
/// except `classifier_log_prob` and `importance_weight_mean`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// `-log p(x|z)`.
    pub reconstruction: f64,
    /// Analytic KL between the posterior and the (conditional) prior, unscaled.
    pub kl: f64,
    /// `-log q(y|x)` for CCVAE/CVAE, BCE of the downstream classifier for VAE + cls.
    pub classification: f64,
    /// `log q(y|z)` at the sampled latent.
    pub classifier_log_prob: f64,
    pub importance_weight_mean: f64,
}

/// Standard-normal draws consumed by one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise<T> {
    pub n: usize,
    pub k: usize,
    /// `n x latent`, reparameterizes the outer expectation.
    pub outer: Vec<T>,
    /// `n x k x latent`, reparameterizes the `q(y|x)` estimate.
    pub inner: Vec<T>,
}

impl<T: Real> Noise<T> {
    pub fn draw(n: usize, k: usize, latent: usize, rng: &mut Stream) -> Self {
        let outer = (0..n * latent).map(|_| T::from_f64(normal(rng))).collect();
        let inner = (0..n * k * latent).map(|_| T::from_f64(normal(rng))).collect();
        Self { n, k, outer, inner }
    }
}

/// Closed-form `KL(q || p)` between diagonal Gaussians, summed over dims.
pub fn gaussian_kl<T: Real>(q: &GaussianParams<T>, p: &GaussianParams<T>) -> Result<f64> {
    if q.dim != p.dim || q.mean.len() != p.mean.len() {
        return Err(Error::Model(format!("KL dimension mismatch: {} vs {}", q.mean.len(), p.mean.len())));
    }
    if !q.is_valid() || !p.is_valid() {
        return Err(Error::Model("KL requires positive standard deviations".into()));
    }
    Ok(q.mean
        .iter()
        .zip(&q.std)
        .zip(p.mean.iter().zip(&p.std))
        .map(|((mq, sq), (mp, sp))| {
            let (mq, sq, mp, sp) = (mq.to_f64(), sq.to_f64(), mp.to_f64(), sp.to_f64());
            (sp / sq).ln() + (sq * sq + (mq - mp) * (mq - mp)) / (2.0 * sp * sp) - 0.5
        })
        .sum())
}

fn bernoulli_log<T: Real>(p: &[T], y: &[T]) -> T {
    p.iter().zip(y).map(|(p, y)| *y * p.ln() + (T::ONE - *y) * (T::ONE - *p).ln()).sum()
}

fn bernoulli_log_grad<T: Real>(p: T, y: T) -> T {
    y / p - (T::ONE - y) / (T::ONE - p)
}

fn check<T: Real>(term: &str, values: &[T]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical { term: term.into() })
    }
}

/// Monte Carlo estimate of `q(y|x)` per label from `k` posterior draws.
/// `noise` holds `rows x k x latent` standard-normal values.
fn estimate_from_posterior<T: Real>(
    params: &ModelParams<T>,
    posterior: &GaussianParams<T>,
    noise: &[T],
    k: usize,
) -> (Vec<T>, Vec<T>, crate::models::ClassifierTrace<T>) {
    let latent = posterior.dim;
    let n = posterior.rows();
    let mut z = Vec::with_capacity(n * k * latent);
    for b in 0..n {
        for j in 0..k {
            for d in 0..latent {
                let e = noise[(b * k + j) * latent + d];
                z.push(posterior.mean[b * latent + d] + posterior.std[b * latent + d] * e);
            }
        }
    }
    let (probs, trace) = params.classifier.forward(&z, n * k, latent);
    let labels = params.arch.labels;
    let inv_k = T::ONE / T::from_f64(k as f64);
    let (lo, hi) = (T::from_f64(PROB_EPS), T::from_f64(1.0 - PROB_EPS));
    let mut est = vec![T::ZERO; n * labels];
    for b in 0..n {
        for j in 0..k {
            for i in 0..labels {
                est[b * labels + i] += probs[(b * k + j) * labels + i];
            }
        }
        for v in &mut est[b * labels..(b + 1) * labels] {
            let m = *v * inv_k;
            *v = if m < lo { lo } else if m > hi { hi } else { m };
        }
    }
    (est, z, trace)
}

/// `q(y|x) = E_{q(z|x)}[q(y|z)]` estimated per label with `k` draws.
pub fn estimate_q_y_given_x<T: Real>(x: &[T], params: &ModelParams<T>, k: usize, rng: &mut Stream) -> Result<LabelProbabilities> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let posterior = params.encode(x)?;
    let noise: Vec<T> = (0..k * params.arch.latent).map(|_| T::from_f64(normal(rng))).collect();
    let (est, _, _) = estimate_from_posterior(params, &posterior, &noise, k);
    Ok(LabelProbabilities::from_slice(&est))
}

/// Batched version over precomputed posteriors; returns `n x labels`.
pub fn estimate_q_y_given_posterior<T: Real>(params: &ModelParams<T>, posterior: &GaussianParams<T>, k: usize, rng: &mut Stream) -> Vec<T> {
    let noise: Vec<T> = (0..posterior.mean.len() * k).map(|_| T::from_f64(normal(rng))).collect();
    estimate_from_posterior(params, posterior, &noise, k).0
}

pub fn labels_as<T: Real>(labels: &[LabelVector]) -> Vec<T> {
    labels.iter().flat_map(|l| l.bits().map(|b| T::from_f64(b as f64))).collect()
}

/// Evaluate the framework's loss on a batch. When `grad` is given, the
/// gradient of the returned `total` is accumulated into it.
///
/// `x` is `n x side^2`, `y` is `n x 3` with entries 0/1.
pub fn batch_loss<T: Real>(
    params: &ModelParams<T>,
    x: &[T],
    y: &[T],
    noise: &Noise<T>,
    opts: &LossOptions,
    grad: Option<&mut ModelParams<T>>,
) -> Result<LossBreakdown> {
    let arch = &params.arch;
    let (n, latent, labels, pixels) = (noise.n, arch.latent, arch.labels, arch.pixels());
    if x.len() != n * pixels || y.len() != n * labels || noise.outer.len() != n * latent {
        return Err(Error::Model("batch shapes do not match the noise/architecture".into()));
    }
    let weighted = params.framework.has_conditional_prior();
    if weighted && (noise.k == 0 || noise.inner.len() != n * noise.k * latent) {
        return Err(Error::Model("CCVAE/CVAE losses need K >= 1 inner draws per item".into()));
    }
    let beta = T::from_f64(opts.beta);
    let half = T::from_f64(0.5);

    let (post, etrace) = params.encoder.forward(x, n, arch.side);
    check("posterior", &post.mean)?;
    check("posterior", &post.std)?;
    let z: Vec<T> = crate::models::reparameterize(&post, &noise.outer);
    let (xhat, dtrace) = params.decoder.forward(&z, n, arch);
    check("reconstruction", &xhat)?;

    let const_term = T::from_f64(HALF_LN_2PI * pixels as f64);
    let recon: Vec<T> = (0..n)
        .map(|b| {
            let ss: T = x[b * pixels..(b + 1) * pixels]
                .iter()
                .zip(&xhat[b * pixels..(b + 1) * pixels])
                .map(|(a, r)| (*a - *r) * (*a - *r))
                .sum();
            -half * ss - const_term
        })
        .collect();

    let (prior_mean, prior_cache) = params.prior.mean(y, n, latent);
    let kl: Vec<T> = (0..n)
        .map(|b| {
            (0..latent)
                .map(|d| {
                    let i = b * latent + d;
                    let (mq, sq, mp) = (post.mean[i], post.std[i], prior_mean[i]);
                    -sq.ln() + half * (sq * sq + (mq - mp) * (mq - mp)) - half
                })
                .sum()
        })
        .collect();
    check("kl", &kl)?;

    let (probs, ctrace) = params.classifier.forward(&z, n, latent);
    let logq: Vec<T> = (0..n).map(|b| bernoulli_log(&probs[b * labels..(b + 1) * labels], &y[b * labels..(b + 1) * labels])).collect();
    check("classifier", &logq)?;

    let inner = weighted.then(|| estimate_from_posterior(params, &post, &noise.inner, noise.k));
    let logqhat: Vec<T> = match &inner {
        Some((est, _, _)) => (0..n).map(|b| bernoulli_log(&est[b * labels..(b + 1) * labels], &y[b * labels..(b + 1) * labels])).collect(),
        None => vec![T::ZERO; n],
    };
    check("log q(y|x)", &logqhat)?;

    // Per-item loss and the coefficients of each term's gradient.
    let inv_n = T::ONE / T::from_f64(n as f64);
    let mut loss = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut c_recon = Vec::with_capacity(n);
    let mut c_kl = Vec::with_capacity(n);
    let mut c_logq = Vec::with_capacity(n);
    let mut c_logqhat = Vec::with_capacity(n);
    for b in 0..n {
        if weighted {
            let w = (logq[b] - logqhat[b]).exp();
            let a = recon[b] - beta * kl[b] - logq[b];
            loss.push(-(w * a + logqhat[b]));
            weights.push(w);
            let (mut cq, mut cqh) = (w, -T::ONE);
            if opts.weight_gradient == WeightGradient::Full {
                cq -= a * w;
                cqh += a * w;
            }
            if opts.weight_gradient == WeightGradient::DetachedCorrection {
                cq = T::ZERO;
            }
            c_recon.push(-w * inv_n);
            c_kl.push(w * beta * inv_n);
            c_logq.push(cq * inv_n);
            c_logqhat.push(cqh * inv_n);
        } else {
            loss.push(-(recon[b] - beta * kl[b] + logq[b]));
            weights.push(T::ONE);
            c_recon.push(-inv_n);
            c_kl.push(beta * inv_n);
            c_logq.push(-inv_n);
            c_logqhat.push(T::ZERO);
        }
    }
    check("importance weight", &weights)?;
    check("total", &loss)?;

    let mean = |v: &[T]| v.iter().map(|t| t.to_f64()).sum::<f64>() / n as f64;
    let breakdown = LossBreakdown {
        total: mean(&loss),
        reconstruction: -mean(&recon),
        kl: mean(&kl),
        classification: if weighted { -mean(&logqhat) } else { -mean(&logq) },
        classifier_log_prob: mean(&logq),
        importance_weight_mean: mean(&weights),
    };

    let Some(grad) = grad else {
        return Ok(breakdown);
    };

    // reconstruction: d log p(x|z) / d xhat = x - xhat
    let mut dxhat = vec![T::ZERO; n * pixels];
    for b in 0..n {
        for p in b * pixels..(b + 1) * pixels {
            dxhat[p] = c_recon[b] * (x[p] - xhat[p]);
        }
    }
    let mut dz = params.decoder.backward(&dtrace, &dxhat, arch, &mut grad.decoder);

    // KL against N(prior_mean, 1)
    let mut dmean = vec![T::ZERO; n * latent];
    let mut dstd = vec![T::ZERO; n * latent];
    let mut dprior = vec![T::ZERO; n * latent];
    for b in 0..n {
        for d in 0..latent {
            let i = b * latent + d;
            let diff = post.mean[i] - prior_mean[i];
            dmean[i] += c_kl[b] * diff;
            dstd[i] += c_kl[b] * (post.std[i] - T::ONE / post.std[i]);
            dprior[i] = -c_kl[b] * diff;
        }
    }
    params.prior.backward(&dprior, y, n, latent, prior_cache.as_ref(), &mut grad.prior);

    // log q(y|z) at the sampled latent
    let dprobs: Vec<T> = (0..n * labels).map(|i| c_logq[i / labels] * bernoulli_log_grad(probs[i], y[i])).collect();
    let dz_cls = params.classifier.backward(&dprobs, &z, n, latent, &ctrace, &mut grad.classifier);
    for (a, b) in dz.iter_mut().zip(dz_cls) {
        *a += b;
    }
    for i in 0..n * latent {
        dmean[i] += dz[i];
        dstd[i] += dz[i] * noise.outer[i];
    }

    // log q(y|x) through the K inner draws
    if let Some((est, zk, ktrace)) = &inner {
        let k = noise.k;
        let inv_k = T::ONE / T::from_f64(k as f64);
        let mut dp = vec![T::ZERO; n * k * labels];
        for b in 0..n {
            for i in 0..labels {
                let g = c_logqhat[b] * bernoulli_log_grad(est[b * labels + i], y[b * labels + i]) * inv_k;
                for j in 0..k {
                    dp[(b * k + j) * labels + i] = g;
                }
            }
        }
        let dzk = params.classifier.backward(&dp, zk, n * k, latent, ktrace, &mut grad.classifier);
        for b in 0..n {
            for j in 0..k {
                for d in 0..latent {
                    let src = (b * k + j) * latent + d;
                    dmean[b * latent + d] += dzk[src];
                    dstd[b * latent + d] += dzk[src] * noise.inner[src];
                }
            }
        }
    }

    params.encoder.backward(&etrace, &dmean, &dstd, &mut grad.encoder);
    Ok(breakdown)
}

fn single<T: Real>(
    framework: crate::models::Framework,
    x: &[T],
    y: &LabelVector,
    params: &ModelParams<T>,
    opts: &LossOptions,
    rng: &mut Stream,
) -> Result<LossBreakdown> {
    if params.framework != framework {
        return Err(Error::Unsupported {
            framework: params.framework.to_string(),
            reason: format!("expected a {framework} model"),
        });
    }
    let k = if framework.has_conditional_prior() { opts.k } else { 0 };
    let noise = Noise::draw(1, k, params.arch.latent, rng);
    batch_loss(params, x, &labels_as(std::slice::from_ref(y)), &noise, opts, None)
}

/// CCVAE loss (negated objective) for one datapoint.
pub fn ccvae_loss<T: Real>(x: &[T], y: &LabelVector, params: &ModelParams<T>, k_train: usize, rng: &mut Stream) -> Result<LossBreakdown> {
    single(Framework::Ccvae, x, y, params, &LossOptions { k: k_train, ..Default::default() }, rng)
}

/// Conditional-VAE loss for one datapoint: same estimator as the CCVAE loss
/// with an unpartitioned latent.
pub fn cvae_loss<T: Real>(x: &[T], y: &LabelVector, params: &ModelParams<T>, k_train: usize, rng: &mut Stream) -> Result<LossBreakdown> {
    single(Framework::Cvae, x, y, params, &LossOptions { k: k_train, ..Default::default() }, rng)
}

/// VAE + downstream classification loss for one datapoint.
pub fn vae_cls_loss<T: Real>(x: &[T], y: &LabelVector, params: &ModelParams<T>, beta: f64, rng: &mut Stream) -> Result<LossBreakdown> {
    single(Framework::VaeCls, x, y, params, &LossOptions { k: 0, beta, ..Default::default() }, rng)
}
