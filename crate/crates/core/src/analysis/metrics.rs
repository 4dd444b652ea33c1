//! Accuracy and the SAP / MIG disentanglement scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelVector, N_LABELS};
use crate::models::{Framework, ModelParams};
use crate::objectives::estimate_q_y_given_posterior;
use crate::rng::{stream, Domain};
use crate::synthdata::Dataset;

/// Number of equal-width bins used to discretize latents for MIG.
pub const MIG_BINS: usize = 20;

const EVAL_BATCH: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub mean: f64,
    pub per_label: [f64; N_LABELS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub framework: Framework,
    pub accuracy: f64,
    pub per_label_accuracy: [f64; N_LABELS],
    pub sap: f64,
    pub mig: f64,
    /// `latent x factor` stump balanced accuracies behind `sap`.
    pub sap_scores: Vec<[f64; N_LABELS]>,
    /// `latent x factor` normalized mutual information behind `mig`.
    pub mig_scores: Vec<[f64; N_LABELS]>,
    pub seed: u64,
    pub k_eval: usize,
    pub n_test: usize,
    pub tie_break: String,
}

/// Per-label accuracy of thresholded probabilities (`p > 0.5` predicts 1, so
/// ties go to 0). `probs` is `n x 3`.
pub fn accuracy_from_probabilities(probs: &[f64], labels: &[LabelVector]) -> Result<AccuracyReport> {
    if labels.is_empty() || probs.len() != labels.len() * N_LABELS {
        return Err(Error::InsufficientData("accuracy needs one probability row per labelled item".into()));
    }
    let mut hits = [0usize; N_LABELS];
    for (row, y) in probs.chunks(N_LABELS).zip(labels) {
        for j in 0..N_LABELS {
            if (row[j] > 0.5) == y.get(j) {
                hits[j] += 1;
            }
        }
    }
    let per_label = hits.map(|h| h as f64 / labels.len() as f64);
    Ok(AccuracyReport { mean: per_label.iter().sum::<f64>() / N_LABELS as f64, per_label })
}

/// Posterior means of every item, `n x latent`.
pub fn posterior_means(params: &ModelParams<f32>, data: &Dataset) -> Vec<f32> {
    let pixels = Dataset::PIXELS;
    let mut out = Vec::with_capacity(data.len() * params.arch.latent);
    for chunk in data.x.chunks(EVAL_BATCH * pixels) {
        out.extend(params.encode_batch(chunk, chunk.len() / pixels).mean);
    }
    out
}

/// Label probabilities the framework would predict with: the `K`-sample
/// `q(y|x)` estimate for CCVAE/CVAE, the downstream classifier at the
/// posterior mean for VAE + cls.
pub fn predict_probabilities(params: &ModelParams<f32>, data: &Dataset, k_eval: usize, seed: u64) -> Result<Vec<f64>> {
    if k_eval == 0 {
        return Err(Error::Config("k_eval must be at least 1".into()));
    }
    check_side(params)?;
    let pixels = Dataset::PIXELS;
    let mut out = Vec::with_capacity(data.len() * N_LABELS);
    for (c, chunk) in data.x.chunks(EVAL_BATCH * pixels).enumerate() {
        let n = chunk.len() / pixels;
        let post = params.encode_batch(chunk, n);
        let p = match params.framework {
            Framework::VaeCls => params.classify_batch(&post.mean, n),
            _ => {
                let mut rng = stream(seed, Domain::Eval, c as u64, 0);
                estimate_q_y_given_posterior(params, &post, k_eval, &mut rng)
            }
        };
        out.extend(p.iter().map(|v| *v as f64));
    }
    Ok(out)
}

pub fn accuracy(params: &ModelParams<f32>, data: &Dataset, k_eval: usize, seed: u64) -> Result<AccuracyReport> {
    let probs = predict_probabilities(params, data, k_eval, seed)?;
    accuracy_from_probabilities(&probs, &data.labels)
}

/// Accuracy, SAP and MIG on one split.
pub fn evaluate_metrics(params: &ModelParams<f32>, data: &Dataset, k_eval: usize, seed: u64) -> Result<MetricsReport> {
    let acc = accuracy(params, data, k_eval, seed)?;
    let latent = params.arch.latent;
    let z: Vec<f64> = posterior_means(params, data).iter().map(|v| *v as f64).collect();
    let factors = factor_bits(&data.labels);
    let sap_scores = sap_matrix(&z, latent, &factors)?;
    let mig_scores = mig_matrix(&z, latent, &factors)?;
    Ok(MetricsReport {
        framework: params.framework,
        accuracy: acc.mean,
        per_label_accuracy: acc.per_label,
        sap: top_two_gap(&sap_scores),
        mig: top_two_gap(&mig_scores),
        sap_scores,
        mig_scores,
        seed,
        k_eval,
        n_test: data.len(),
        tie_break: "lowest-index".into(),
    })
}

pub fn factor_bits(labels: &[LabelVector]) -> Vec<[bool; N_LABELS]> {
    labels.iter().map(|l| [l.get(0), l.get(1), l.get(2)]).collect()
}

fn check_side(params: &ModelParams<f32>) -> Result<()> {
    if params.arch.pixels() != Dataset::PIXELS {
        return Err(Error::Incompatible(format!(
            "model expects {}x{} inputs, dataset holds {}x{}",
            params.arch.side,
            params.arch.side,
            crate::synthdata::PADDED_SIDE,
            crate::synthdata::PADDED_SIDE
        )));
    }
    Ok(())
}

fn check_factors(latents: &[f64], dims: usize, factors: &[[bool; N_LABELS]]) -> Result<usize> {
    let n = factors.len();
    if dims == 0 || latents.len() != n * dims {
        return Err(Error::Config(format!("expected {n} x {dims} latents, got {} values", latents.len())));
    }
    if n < 2 {
        return Err(Error::InsufficientData("need at least 2 items".into()));
    }
    for j in 0..N_LABELS {
        let pos = factors.iter().filter(|f| f[j]).count();
        if pos == 0 || pos == n {
            return Err(Error::Degenerate(format!("factor {j} takes a single value")));
        }
    }
    Ok(n)
}

/// Mean over factors of the gap between the two best latents. Requires at
/// least two latents; ties resolve to the lowest index (the gap is the same).
fn top_two_gap(scores: &[[f64; N_LABELS]]) -> f64 {
    let mut total = 0.0;
    for j in 0..N_LABELS {
        let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for row in scores {
            let s = row[j];
            if s > first {
                second = first;
                first = s;
            } else if s > second {
                second = s;
            }
        }
        total += first - if second.is_finite() { second } else { first };
    }
    total / N_LABELS as f64
}

/// Best balanced accuracy over single-threshold classifiers in either
/// orientation.
pub fn stump_balanced_accuracy(values: &[f64], targets: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let pos = targets.iter().filter(|t| **t).count() as f64;
    let neg = targets.len() as f64 - pos;
    // Threshold below everything: all predicted 1, balanced accuracy 0.5.
    let (mut pos_below, mut neg_below) = (0.0, 0.0);
    let mut best: f64 = 0.5;
    let mut i = 0;
    while i < order.len() {
        let v = values[order[i]];
        while i < order.len() && values[order[i]] == v {
            if targets[order[i]] {
                pos_below += 1.0;
            } else {
                neg_below += 1.0;
            }
            i += 1;
        }
        // Predict 1 above the threshold.
        let ba = 0.5 * ((pos - pos_below) / pos + neg_below / neg);
        best = best.max(ba).max(1.0 - ba);
    }
    best
}

pub fn sap_matrix(latents: &[f64], dims: usize, factors: &[[bool; N_LABELS]]) -> Result<Vec<[f64; N_LABELS]>> {
    let n = check_factors(latents, dims, factors)?;
    let mut out = vec![[0.0; N_LABELS]; dims];
    for (i, row) in out.iter_mut().enumerate() {
        let col: Vec<f64> = (0..n).map(|k| latents[k * dims + i]).collect();
        for (j, s) in row.iter_mut().enumerate() {
            let t: Vec<bool> = factors.iter().map(|f| f[j]).collect();
            *s = stump_balanced_accuracy(&col, &t);
        }
    }
    Ok(out)
}

/// SAP over `n x dims` latents (row-major) and binary factors.
pub fn sap_score(latents: &[f64], dims: usize, factors: &[[bool; N_LABELS]]) -> Result<f64> {
    Ok(top_two_gap(&sap_matrix(latents, dims, factors)?))
}

fn entropy(counts: &[f64], total: f64) -> f64 {
    counts.iter().filter(|c| **c > 0.0).map(|c| -(c / total) * (c / total).ln()).sum()
}

/// Equal-width bin index over the observed range; a constant column maps to
/// bin 0.
pub fn bin_latent(values: &[f64], bins: usize) -> Vec<usize> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;
    values
        .iter()
        .map(|v| if width > 0.0 { (((v - lo) / width * bins as f64) as usize).min(bins - 1) } else { 0 })
        .collect()
}

/// Mutual information between a discrete variable and a binary one, divided
/// by the binary entropy.
pub fn normalized_mutual_information(bins: &[usize], n_bins: usize, target: &[bool]) -> Result<f64> {
    let n = target.len() as f64;
    let mut joint = vec![[0.0f64; 2]; n_bins];
    for (b, t) in bins.iter().zip(target) {
        joint[*b][*t as usize] += 1.0;
    }
    let ty = [0usize, 1].map(|t| joint.iter().map(|r| r[t]).sum::<f64>());
    let h_y = entropy(&ty, n);
    if h_y <= 0.0 {
        return Err(Error::Degenerate("factor has zero entropy".into()));
    }
    let mut mi = 0.0;
    for row in &joint {
        let px = (row[0] + row[1]) / n;
        for t in 0..2 {
            if row[t] > 0.0 {
                let pxy = row[t] / n;
                mi += pxy * (pxy / (px * ty[t] / n)).ln();
            }
        }
    }
    Ok((mi / h_y).clamp(0.0, 1.0))
}

pub fn mig_matrix(latents: &[f64], dims: usize, factors: &[[bool; N_LABELS]]) -> Result<Vec<[f64; N_LABELS]>> {
    let n = check_factors(latents, dims, factors)?;
    let mut out = vec![[0.0; N_LABELS]; dims];
    for (i, row) in out.iter_mut().enumerate() {
        let col: Vec<f64> = (0..n).map(|k| latents[k * dims + i]).collect();
        let bins = bin_latent(&col, MIG_BINS);
        for (j, s) in row.iter_mut().enumerate() {
            let t: Vec<bool> = factors.iter().map(|f| f[j]).collect();
            *s = normalized_mutual_information(&bins, MIG_BINS, &t)?;
        }
    }
    Ok(out)
}

/// MIG over `n x dims` latents (row-major) and binary factors.
pub fn mig_score(latents: &[f64], dims: usize, factors: &[[bool; N_LABELS]]) -> Result<f64> {
    Ok(top_two_gap(&mig_matrix(latents, dims, factors)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, stream, Domain};
    use rand::Rng;

    /// Exhaustive: every observed value as a threshold, both orientations,
    /// balanced accuracy computed from scratch.
    fn brute_stump(values: &[f64], targets: &[bool]) -> f64 {
        let pos = targets.iter().filter(|t| **t).count() as f64;
        let neg = targets.len() as f64 - pos;
        let mut best: f64 = 0.5;
        for &t in values {
            let mut tp = 0.0;
            let mut tn = 0.0;
            for (v, y) in values.iter().zip(targets) {
                let pred = *v > t;
                if pred && *y {
                    tp += 1.0;
                }
                if !pred && !*y {
                    tn += 1.0;
                }
            }
            let ba = 0.5 * (tp / pos + tn / neg);
            best = best.max(ba).max(1.0 - ba);
        }
        best
    }

    /// `H(X) + H(Y) - H(X, Y)` from the enumerated joint table.
    fn brute_nmi(bins: &[usize], target: &[bool]) -> f64 {
        use std::collections::HashMap;
        let n = bins.len() as f64;
        let mut hx = HashMap::new();
        let mut hy = HashMap::new();
        let mut hxy = HashMap::new();
        for (b, t) in bins.iter().zip(target) {
            *hx.entry(*b).or_insert(0.0) += 1.0;
            *hy.entry(*t).or_insert(0.0) += 1.0;
            *hxy.entry((*b, *t)).or_insert(0.0) += 1.0;
        }
        let h = |m: &dyn Fn() -> Vec<f64>| m().iter().map(|c| -(c / n) * (c / n).ln()).sum::<f64>();
        let (a, b, c) = (
            h(&|| hx.values().cloned().collect()),
            h(&|| hy.values().cloned().collect()),
            h(&|| hxy.values().cloned().collect()),
        );
        (a + b - c) / b
    }

    fn random_ints(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
        let mut rng = stream(seed, Domain::Probe, 0, 0);
        let values = (0..n).map(|_| rng.random_range(0..12) as f64).collect();
        let targets = (0..n).map(|_| rng.random_bool(0.4)).collect();
        (values, targets)
    }

    #[test]
    fn stump_matches_exhaustive_search() {
        for seed in 0..20 {
            let (mut v, mut t) = random_ints(57, seed);
            t[0] = true;
            t[1] = false;
            assert!((stump_balanced_accuracy(&v, &t) - brute_stump(&v, &t)).abs() < 1e-12);
            v.iter_mut().enumerate().for_each(|(i, x)| *x += normal(&mut stream(seed, Domain::Probe, 1, i as u64)));
            assert!((stump_balanced_accuracy(&v, &t) - brute_stump(&v, &t)).abs() < 1e-12);
        }
    }

    #[test]
    fn nmi_matches_entropy_identity() {
        for seed in 0..20 {
            let (v, mut t) = random_ints(200, seed);
            t[0] = !t[1];
            let bins = bin_latent(&v, MIG_BINS);
            let got = normalized_mutual_information(&bins, MIG_BINS, &t).unwrap();
            assert!((got - brute_nmi(&bins, &t).max(0.0)).abs() < 1e-12);
        }
    }

    /// 64 points enumerating every combination of three balanced factors
    /// (8 combinations x 8 repeats); latents 3 and 4 are noise.
    fn enumerated() -> (Vec<f64>, Vec<[bool; 3]>) {
        let mut z = Vec::new();
        let mut f = Vec::new();
        for k in 0..64usize {
            let bits = [k & 1 != 0, k & 2 != 0, k & 4 != 0];
            let mut rng = stream(5, Domain::Probe, 2, k as u64);
            z.extend([bits[0] as u8 as f64, bits[1] as u8 as f64, bits[2] as u8 as f64, normal(&mut rng), normal(&mut rng)]);
            f.push(bits);
        }
        (z, f)
    }

    #[test]
    fn copies_of_factors_score_high() {
        let (z, f) = enumerated();
        let s = sap_matrix(&z, 5, &f).unwrap();
        for j in 0..3 {
            assert_eq!(s[j][j], 1.0);
            for i in 0..3 {
                if i != j {
                    assert!((s[i][j] - 0.5).abs() < 1e-12, "independent factor scores exactly 0.5 on a balanced grid");
                }
            }
        }
        let m = mig_matrix(&z, 5, &f).unwrap();
        for j in 0..3 {
            assert!((m[j][j] - 1.0).abs() < 1e-12);
        }
        assert!(mig_score(&z, 5, &f).unwrap() > 0.5);
    }

    #[test]
    fn single_class_factor_is_degenerate() {
        let z = vec![0.0, 1.0, 2.0];
        let f = vec![[true, false, true], [true, true, false], [true, false, true]];
        assert!(matches!(sap_score(&z, 1, &f), Err(Error::Degenerate(_))));
        assert!(matches!(mig_score(&z, 1, &f), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ties_predict_zero() {
        let labels = vec![
            LabelVector::new(false, false, false).unwrap(),
            LabelVector::new(true, true, false).unwrap(),
            LabelVector::new(false, true, true).unwrap(),
            LabelVector::new(true, false, false).unwrap(),
        ];
        let r = accuracy_from_probabilities(&[0.5; 12], &labels).unwrap();
        assert_eq!(r.per_label, [0.5, 0.5, 0.75]);
        let exact: Vec<f64> = labels.iter().flat_map(|l| l.bits().map(|b| b as f64)).collect();
        assert_eq!(accuracy_from_probabilities(&exact, &labels).unwrap().mean, 1.0);
    }
}
