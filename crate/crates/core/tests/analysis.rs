use factorlens::analysis::*;
use factorlens::models::{Classifier, Prior};
use factorlens::rng::{normal, stream, Domain};
use factorlens::synthdata::{generate_dataset, CohortConfig};
use factorlens::{Architecture, Framework, LabelVector, ModelParams};
use proptest::prelude::*;
use rand::Rng;

/// `n` rows of 5 latents: dims 0-2 noisy copies of independent balanced
/// factors, dims 3-4 pure noise.
fn noisy_copies(n: usize, noise: f64, seed: u64) -> (Vec<f64>, Vec<[bool; 3]>) {
    let mut rng = stream(seed, Domain::Probe, 1, 0);
    let mut z = Vec::with_capacity(n * 5);
    let mut f = Vec::with_capacity(n);
    for _ in 0..n {
        let bits = [rng.random_bool(0.5), rng.random_bool(0.5), rng.random_bool(0.5)];
        for b in bits {
            z.push(b as u8 as f64 + noise * normal(&mut rng));
        }
        z.push(normal(&mut rng));
        z.push(normal(&mut rng));
        f.push(bits);
    }
    (z, f)
}

fn permute_columns(z: &[f64], perm: &[usize]) -> Vec<f64> {
    z.chunks(perm.len()).flat_map(|row| perm.iter().map(move |&p| row[p])).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn scores_ignore_latent_order(seed in 0u64..1000, perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
        let (z, f) = noisy_copies(300, 0.7, seed);
        let zp = permute_columns(&z, &perm);
        prop_assert!((sap_score(&z, 5, &f).unwrap() - sap_score(&zp, 5, &f).unwrap()).abs() < 1e-12);
        prop_assert!((mig_score(&z, 5, &f).unwrap() - mig_score(&zp, 5, &f).unwrap()).abs() < 1e-12);
        let (s, sp) = (sap_matrix(&z, 5, &f).unwrap(), sap_matrix(&zp, 5, &f).unwrap());
        for (new, &old) in perm.iter().enumerate() {
            prop_assert_eq!(sp[new], s[old]);
        }
    }
}

#[test]
fn mig_is_stable_under_monotone_cubics() {
    let (z, f) = noisy_copies(2000, 0.5, 11);
    let base = mig_score(&z, 5, &f).unwrap();
    let mut rng = stream(2, Domain::Probe, 0, 0);
    for _ in 0..20 {
        // a x^3 + b x + c with a, b > 0 is strictly increasing.
        let coef: Vec<(f64, f64, f64)> =
            (0..5).map(|_| (rng.random_range(0.01..0.3), rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0))).collect();
        let mapped: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (a, b, c) = coef[i % 5];
                a * v * v * v + b * v + c
            })
            .collect();
        let m = mig_score(&mapped, 5, &f).unwrap();
        assert!((m - base).abs() <= 0.02, "{base} -> {m} with {coef:?}");
        // SAP uses thresholds, which any monotone map preserves exactly.
        assert!((sap_score(&mapped, 5, &f).unwrap() - sap_score(&z, 5, &f).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn noise_latents_score_near_zero() {
    let mut rng = stream(4, Domain::Probe, 0, 0);
    let n = 2000;
    let z: Vec<f64> = (0..n * 5).map(|_| normal(&mut rng)).collect();
    let f: Vec<[bool; 3]> = (0..n).map(|_| [rng.random_bool(0.5), rng.random_bool(0.5), rng.random_bool(0.3)]).collect();
    assert!(sap_score(&z, 5, &f).unwrap() < 0.05);
    assert!(mig_score(&z, 5, &f).unwrap() < 0.02);
    let (copies, cf) = noisy_copies(n, 0.0, 4);
    assert!((mig_score(&copies, 5, &cf).unwrap() - 1.0).abs() < 0.02);
    assert!((sap_score(&copies, 5, &cf).unwrap() - 0.5).abs() < 0.05);
}

#[test]
fn accuracy_counting_oracles() {
    let cfg = CohortConfig::default();
    let (_, test, _) = generate_dataset(&cfg, 100, 500).unwrap();
    let exact: Vec<f64> = test.labels.iter().flat_map(|l| l.bits().map(|b| b as f64)).collect();
    let acc = accuracy_from_probabilities(&exact, &test.labels).unwrap();
    assert_eq!(acc.mean, 1.0);
    // 0.5 is a tie and predicts 0.
    let half = vec![0.5; test.len() * 3];
    let acc = accuracy_from_probabilities(&half, &test.labels).unwrap();
    for j in 0..3 {
        let zeros = test.labels.iter().filter(|l| !l.get(j)).count() as f64 / test.len() as f64;
        assert_eq!(acc.per_label[j], zeros);
    }
    assert!(accuracy_from_probabilities(&half[..3], &test.labels).is_err());

    let params = ModelParams::<f32>::new(Framework::Ccvae, Architecture::standard(), 0).unwrap();
    let a = accuracy(&params, &test, 10, 5).unwrap();
    assert_eq!(a, accuracy(&params, &test, 10, 5).unwrap());
    let cloud = posterior_cloud(&params, &test, default_cloud_dims(Framework::Ccvae), 3).unwrap();
    assert_eq!(cloud.len(), test.len());
    assert_eq!(cloud, posterior_cloud(&params, &test, (1, 2), 3).unwrap());
    assert!(posterior_cloud(&params, &test, (1, 5), 3).is_err());
}

fn null_prior_model(framework: Framework, target: usize) -> ModelParams<f32> {
    let mut m = ModelParams::<f32>::new(framework, Architecture::tiny(), 3).unwrap();
    // Remove the target label's influence on the prior.
    match &mut m.prior {
        Prior::Elementwise { weight, .. } => weight.data[target] = 0.0,
        Prior::Mlp(mlp) => {
            let cols = mlp.hidden.weight.shape[1];
            for (i, w) in mlp.hidden.weight.data.iter_mut().enumerate() {
                if i % cols == target {
                    *w = 0.0;
                }
            }
        }
        Prior::Standard => unreachable!(),
    }
    let y1 = LabelVector::new(true, true, true).unwrap();
    let y0 = LabelVector::new(true, true, false).unwrap();
    let (p1, p0) = (m.conditional_prior(&y1), m.conditional_prior(&y0));
    assert_eq!(p1.mean, p0.mean, "{framework}: target label still moves the prior");
    m
}

#[test]
fn null_effect_map_shrinks_with_pairs() {
    let target = 2;
    let m = null_prior_model(Framework::Ccvae, target);
    let mut norms = Vec::new();
    for n in [100usize, 400, 1600, 6400] {
        let spec = InterventionSpec::new(target, &[(0, true), (1, true)], n, 9).unwrap();
        let map = intervention_analysis(&m, &spec).unwrap();
        // Zero mean: no entry far outside its own standard error.
        assert!(map.max_z_score() < 4.5, "n {n}: max z {}", map.max_z_score());
        norms.push((n as f64, map.norm()));
    }
    // log-log slope of the norm against N.
    let xs: Vec<f64> = norms.iter().map(|(n, _)| n.ln()).collect();
    let ys: Vec<f64> = norms.iter().map(|(_, v)| v.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() < 0.1, "slope {slope}, norms {norms:?}");

    // The CVAE arms share their noise, so identical priors cancel exactly.
    let m = null_prior_model(Framework::Cvae, target);
    let spec = InterventionSpec::new(target, &[(0, true), (1, true)], 50, 9).unwrap();
    assert_eq!(intervention_analysis(&m, &spec).unwrap().max_abs(), 0.0);
}

#[test]
fn intervention_is_seeded_and_validated() {
    let m = ModelParams::<f32>::new(Framework::Ccvae, Architecture::tiny(), 1).unwrap();
    let spec = InterventionSpec::new(1, &[(0, true), (2, false)], 1, 42).unwrap();
    let a = intervention_analysis(&m, &spec).unwrap();
    assert_eq!(a, intervention_analysis(&m, &spec).unwrap());
    assert!(a.diff.iter().enumerate().all(|(k, v)| *v == a.diff[(k % 8) * 8 + k / 8]), "symmetric");
    assert!(InterventionSpec::new(2, &[(0, true), (1, false)], 10, 0).is_err());
    assert!(InterventionSpec::new(1, &[(0, true)], 10, 0).is_err());
    // Non-pathology arms: schizophrenia 0 with hallucinations 1 in either arm.
    assert!(InterventionSpec::new(1, &[(0, true), (2, true)], 10, 0).is_err());
    let vae = ModelParams::<f32>::new(Framework::VaeCls, Architecture::tiny(), 1).unwrap();
    let ok = InterventionSpec::new(2, &[(0, true), (1, true)], 10, 0).unwrap();
    assert!(matches!(intervention_analysis(&vae, &ok), Err(factorlens::Error::Unsupported { .. })));
}

#[test]
fn confusion_matrix_reads_each_framework_through_one_probe() {
    let cfg = CohortConfig { n_subjects_per_cohort: [6, 3, 3], trials_per_subject: 20, ..Default::default() };
    let (train, test, _) = generate_dataset(&cfg, 160, 80).unwrap();
    for fw in Framework::ALL {
        let params = ModelParams::<f32>::new(fw, Architecture::standard(), 2).unwrap();
        if fw == Framework::Ccvae {
            assert!(matches!(params.classifier, Classifier::Diagonal { .. }));
        }
        let probe = LogisticProbe::fit_on(&params, &train).unwrap();
        let c = confusion_matrix(&params, &probe, &test, 1).unwrap();
        assert_eq!(c.values.len(), 3);
        assert!(c.values.iter().all(|r| r.len() == 5 && r.iter().all(|v| v.is_finite() && *v >= 0.0)));
        assert_eq!(c, confusion_matrix(&params, &probe, &test, 1).unwrap());
        assert_eq!(c.tie_break, "lowest-index");
    }
    let params = ModelParams::<f32>::new(Framework::Cvae, Architecture::standard(), 2).unwrap();
    assert!(confusion_matrix(&params, &LogisticProbe::untrained(5), &test, 1).is_err());
    assert!(confusion_matrix(&params, &LogisticProbe::untrained(4), &test, 1).is_err());
}
