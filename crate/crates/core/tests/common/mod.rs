#![allow(dead_code)]

use factorlens::objectives::{batch_loss, LossOptions, Noise, WeightGradient};
use factorlens::rng::{normals, stream, Domain};
use factorlens::{Architecture, Framework, ModelParams};

pub struct GradCheck {
    pub checked: usize,
    pub worst_rel: f64,
    pub worst_name: String,
}

/// Random tiny model with every parameter group moved off its initial value.
pub fn tiny_model(framework: Framework, seed: u64) -> ModelParams<f64> {
    let mut m = ModelParams::<f64>::new(framework, Architecture::tiny(), seed).unwrap();
    let mut rng = stream(seed, Domain::Probe, 99, 0);
    for t in m.tensors_mut() {
        let noise = normals(&mut rng, t.len());
        for (v, e) in t.data.iter_mut().zip(noise) {
            *v += 0.3 * e;
        }
    }
    m
}

/// Central finite differences of the batch loss against the analytic
/// gradient, on every parameter. With a detached importance weight the
/// reference is the surrogate whose weight (and, for `DetachedCorrection`, the
/// in-log classifier term) is frozen at the base point.
pub fn finite_difference_check(framework: Framework, weight_gradient: WeightGradient, seed: u64, step: f64) -> GradCheck {
    let m = tiny_model(framework, seed);
    let arch = m.arch.clone();
    let n = 2;
    let mut rng = stream(seed, Domain::Eval, 1, 0);
    let x: Vec<f64> = normals(&mut rng, n * arch.pixels()).into_iter().map(|v| 0.5 * v).collect();
    let y = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
    let k = if framework.has_conditional_prior() { 4 } else { 0 };
    let noise = Noise::<f64>::draw(n, k, arch.latent, &mut rng);
    let opts = LossOptions { k, beta: 0.7, weight_gradient };

    let mut grad = m.zeros_like();
    let base = batch_loss(&m, &x, &y, &noise, &opts, Some(&mut grad)).unwrap();

    // Per-item weights at the base point, for the detached surrogate.
    let item = |params: &ModelParams<f64>, b: usize| {
        let p = arch.pixels();
        let nz = Noise {
            n: 1,
            k,
            outer: noise.outer[b * arch.latent..(b + 1) * arch.latent].to_vec(),
            inner: noise.inner[b * k * arch.latent..(b + 1) * k * arch.latent].to_vec(),
        };
        batch_loss(params, &x[b * p..(b + 1) * p], &y[b * 3..(b + 1) * 3], &nz, &opts, None).unwrap()
    };
    let w0: Vec<f64> = (0..n).map(|b| item(&m, b).importance_weight_mean).collect();
    let logq0: Vec<f64> = (0..n).map(|b| item(&m, b).classifier_log_prob).collect();
    let objective = |params: &ModelParams<f64>| -> f64 {
        if weight_gradient == WeightGradient::Full || !framework.has_conditional_prior() {
            batch_loss(params, &x, &y, &noise, &opts, None).unwrap().total
        } else {
            (0..n)
                .map(|b| {
                    let l = item(params, b);
                    let logq = if weight_gradient == WeightGradient::DetachedCorrection { logq0[b] } else { l.classifier_log_prob };
                    let a = -l.reconstruction - opts.beta * l.kl - logq;
                    -(w0[b] * a - l.classification)
                })
                .sum::<f64>()
                / n as f64
        }
    };
    assert!((objective(&m) - base.total).abs() < 1e-9 * base.total.abs().max(1.0));

    let analytic: Vec<(String, Vec<f64>)> =
        grad.named_tensors().into_iter().map(|(name, t)| (name, t.data.clone())).collect();
    let mut out = GradCheck { checked: 0, worst_rel: 0.0, worst_name: String::new() };
    for (ti, (name, g)) in analytic.iter().enumerate() {
        for (j, g) in g.iter().enumerate() {
            let mut plus = m.clone();
            plus.tensors_mut()[ti].data[j] += step;
            let mut minus = m.clone();
            minus.tensors_mut()[ti].data[j] -= step;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * step);
            let scale = g.abs().max(fd.abs()).max(1e-2);
            let rel = (g - fd).abs() / scale;
            out.checked += 1;
            if rel > out.worst_rel {
                out.worst_rel = rel;
                out.worst_name = format!("{name}[{j}] analytic {g:.6e} fd {fd:.6e}");
            }
        }
    }
    out
}
