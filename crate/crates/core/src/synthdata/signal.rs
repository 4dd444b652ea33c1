use crate::error::{Error, Result};
use crate::labels::LabelVector;
use crate::rng::{normal, stream, Domain, Stream};

use super::connectivity::correlation_from_covariance;
use super::{CohortConfig, CHANNELS, FACTORS, LEFT, RIGHT, RIGHT_FRONTOTEMPORAL};

const GLOBAL_LOADING: f64 = 0.6;
const BASE_SPREAD: f64 = 0.5;

/// `channels x time` samples of one simulated recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalEpoch {
    pub channels: usize,
    pub samples: Vec<f64>,
    pub subject_id: u32,
    pub trial_id: u32,
}

impl SignalEpoch {
    pub fn len(&self) -> usize {
        self.samples.len() / self.channels.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        let t = self.len();
        &self.samples[i * t..(i + 1) * t]
    }
}

/// Per-subject `channels x factors` mixing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectProfile {
    pub subject_id: u32,
    pub mixing: Vec<f64>,
}

/// Population-level mixing shared by every subject plus one effect mixing
/// matrix per label, already multiplied by its effect scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub base: Vec<f64>,
    pub effects: [Vec<f64>; 3],
    pub noise_scale: f64,
}

/// Expected change in connectivity when one label flips 0 -> 1 with the
/// others held at that label's reference setting.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthEffects {
    pub maps: [Vec<f64>; 3],
}

/// Reference settings for the other labels: listening is measured in healthy
/// rest, schizophrenia with listening and no hallucinations, hallucinations
/// with listening and schizophrenia.
pub const REFERENCE_LABELS: [[u8; 3]; 3] = [[0, 0, 0], [1, 0, 0], [1, 1, 0]];

fn unit_effects() -> [Vec<f64>; 3] {
    let mut listening = vec![0.0; CHANNELS * FACTORS];
    let mut schizophrenia = vec![0.0; CHANNELS * FACTORS];
    let mut hallucinations = vec![0.0; CHANNELS * FACTORS];
    // listening: stronger loading on the shared global factor
    for ch in 0..CHANNELS {
        listening[ch * FACTORS] = 1.0;
    }
    // schizophrenia: left hemisphere couples through factor 1
    for ch in LEFT {
        schizophrenia[ch * FACTORS + 1] = 1.0;
    }
    // hallucinations: right frontotemporal block couples through factor 2;
    // the right hemisphere moves from the global factor to a hemisphere-local
    // one (factor 3), which weakens left-right coupling only
    for ch in RIGHT_FRONTOTEMPORAL {
        hallucinations[ch * FACTORS + 2] = 1.0;
    }
    for ch in RIGHT {
        hallucinations[ch * FACTORS] = -0.5;
        hallucinations[ch * FACTORS + 3] = 0.8;
    }
    [listening, schizophrenia, hallucinations]
}

impl Population {
    pub fn new(config: &CohortConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(config.master_seed, Domain::Population, 0, 0);
        let mut base = vec![0.0; CHANNELS * FACTORS];
        for ch in 0..CHANNELS {
            base[ch * FACTORS] = GLOBAL_LOADING + 0.1 * normal(&mut rng);
            for f in 1..FACTORS {
                base[ch * FACTORS + f] = BASE_SPREAD * normal(&mut rng);
            }
        }
        let mut effects = unit_effects();
        for (e, s) in effects.iter_mut().zip(config.effect_scales) {
            e.iter_mut().for_each(|v| *v *= s);
        }
        Ok(Self { base, effects, noise_scale: config.noise_scale })
    }

    pub fn subject(&self, config: &CohortConfig, subject_id: u32) -> SubjectProfile {
        let mut rng = stream(config.master_seed, Domain::Subject, subject_id as u64, 0);
        let mixing = self.base.iter().map(|b| b + config.subject_variability * normal(&mut rng)).collect();
        SubjectProfile { subject_id, mixing }
    }

    /// Mixing matrix of a subject under the given labels.
    pub fn mixing_for(&self, base: &[f64], labels: &LabelVector) -> Vec<f64> {
        let mut m = base.to_vec();
        for (i, e) in self.effects.iter().enumerate() {
            if labels.get(i) {
                for (v, d) in m.iter_mut().zip(e) {
                    *v += d;
                }
            }
        }
        m
    }

    /// Population correlation `corr(M M^T + noise^2 I)`.
    pub fn expected_connectivity(&self, mixing: &[f64]) -> Vec<f64> {
        let mut cov = vec![0.0; CHANNELS * CHANNELS];
        for i in 0..CHANNELS {
            for j in 0..CHANNELS {
                cov[i * CHANNELS + j] =
                    (0..FACTORS).map(|f| mixing[i * FACTORS + f] * mixing[j * FACTORS + f]).sum::<f64>();
            }
            cov[i * CHANNELS + i] += self.noise_scale * self.noise_scale;
        }
        correlation_from_covariance(&cov, CHANNELS)
    }

    pub fn ground_truth(&self) -> GroundTruthEffects {
        let maps = std::array::from_fn(|label| {
            let off = LabelVector::from_bits(REFERENCE_LABELS[label]).expect("valid reference");
            let mut bits = off.bits();
            bits[label] = 1;
            let on = LabelVector::from_bits(bits).expect("valid reference");
            let c1 = self.expected_connectivity(&self.mixing_for(&self.base, &on));
            let c0 = self.expected_connectivity(&self.mixing_for(&self.base, &off));
            let mut d: Vec<f64> = c1.iter().zip(&c0).map(|(a, b)| a - b).collect();
            for i in 0..CHANNELS {
                d[i * CHANNELS + i] = 0.0;
            }
            d
        });
        GroundTruthEffects { maps }
    }
}

/// Draw one epoch: `(subject mixing + label effects) x sources + noise`.
///
/// The factor sources are drawn before the channel noise, and both are always
/// drawn, so zero scales leave the stream consumption unchanged.
pub fn simulate_epoch(
    subject: &SubjectProfile,
    labels: &LabelVector,
    config: &CohortConfig,
    population: &Population,
    trial_id: u32,
    rng: &mut Stream,
) -> Result<SignalEpoch> {
    config.validate()?;
    if subject.mixing.len() != CHANNELS * FACTORS {
        return Err(Error::Config(format!(
            "subject mixing has {} entries, expected {}",
            subject.mixing.len(),
            CHANNELS * FACTORS
        )));
    }
    let t = config.epoch_length;
    let mixing = population.mixing_for(&subject.mixing, labels);
    let sources: Vec<f64> = (0..FACTORS * t).map(|_| normal(rng)).collect();
    let mut samples = vec![0.0; CHANNELS * t];
    for ch in 0..CHANNELS {
        let row = &mut samples[ch * t..(ch + 1) * t];
        for f in 0..FACTORS {
            let w = mixing[ch * FACTORS + f];
            for (s, src) in row.iter_mut().zip(&sources[f * t..(f + 1) * t]) {
                *s += w * src;
            }
        }
    }
    for s in samples.iter_mut() {
        *s += config.noise_scale * normal(rng);
    }
    Ok(SignalEpoch { channels: CHANNELS, samples, subject_id: subject.subject_id, trial_id })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{compute_connectivity, CHANNELS};

    fn setup(config: &CohortConfig) -> (Population, SubjectProfile) {
        let pop = Population::new(config).unwrap();
        let s = pop.subject(config, 3);
        (pop, s)
    }

    #[test]
    fn zero_effects_ignore_labels() {
        let config = CohortConfig { effect_scales: [0.0; 3], noise_scale: 0.0, ..Default::default() };
        let (pop, s) = setup(&config);
        let a = simulate_epoch(&s, &LabelVector::new(true, true, true).unwrap(), &config, &pop, 0, &mut stream(1, Domain::Epoch, 3, 0)).unwrap();
        let b = simulate_epoch(&s, &LabelVector::default(), &config, &pop, 0, &mut stream(1, Domain::Epoch, 3, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn same_stream_same_epoch() {
        let config = CohortConfig::default();
        let (pop, s) = setup(&config);
        let y = LabelVector::new(true, false, false).unwrap();
        let a = simulate_epoch(&s, &y, &config, &pop, 5, &mut stream(9, Domain::Epoch, 3, 5)).unwrap();
        let b = simulate_epoch(&s, &y, &config, &pop, 5, &mut stream(9, Domain::Epoch, 3, 5)).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.samples.len(), CHANNELS * 128);
    }

    #[test]
    fn bad_mixing_shape_is_config_error() {
        let config = CohortConfig::default();
        let (pop, mut s) = setup(&config);
        s.mixing.pop();
        let r = simulate_epoch(&s, &LabelVector::default(), &config, &pop, 0, &mut stream(0, Domain::Epoch, 0, 0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn ground_truth_is_symmetric_with_zero_diagonal() {
        let pop = Population::new(&CohortConfig::default()).unwrap();
        let gt = pop.ground_truth();
        for m in &gt.maps {
            for i in 0..CHANNELS {
                assert_eq!(m[i * CHANNELS + i], 0.0);
                for j in 0..CHANNELS {
                    assert!((m[i * CHANNELS + j] - m[j * CHANNELS + i]).abs() < 1e-12);
                }
            }
        }
        // hallucinations raise right-frontotemporal coupling and lower left-right coupling
        let h = &gt.maps[2];
        assert!(h[30 * CHANNELS + 40] > 0.05);
        let cross: f64 = LEFT.flat_map(|i| RIGHT.map(move |j| h[i * CHANNELS + j])).sum::<f64>() / 900.0;
        assert!(cross < -0.02, "left-right mean change {cross}");
    }

    #[test]
    fn averaged_hallucination_effect_matches_planted_block() {
        // Brute-force cohort average over many epochs of one population-mean subject.
        let config = CohortConfig { subject_variability: 0.0, ..Default::default() };
        let pop = Population::new(&config).unwrap();
        let subject = pop.subject(&config, 0);
        let gt = pop.ground_truth();
        let n = 10_000;
        let mut diff = vec![0.0; CHANNELS * CHANNELS];
        for (sign, bits) in [(1.0, [1, 1, 1]), (-1.0, [1, 1, 0])] {
            let y = LabelVector::from_bits(bits).unwrap();
            for trial in 0..n / 2 {
                let mut rng = stream(4, Domain::Epoch, bits[2] as u64, trial as u64);
                let e = simulate_epoch(&subject, &y, &config, &pop, trial as u32, &mut rng).unwrap();
                let c = compute_connectivity(&e).unwrap();
                for (d, v) in diff.iter_mut().zip(&c.values) {
                    *d += sign * *v as f64 / (n / 2) as f64;
                }
            }
        }
        let block = |m: &[f64], rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| {
            let mut s = 0.0;
            let mut k = 0.0;
            for i in rows.clone() {
                for j in cols.clone() {
                    if i != j {
                        s += m[i * CHANNELS + j];
                        k += 1.0;
                    }
                }
            }
            s / k
        };
        let ft = block(&diff, 30..45, 30..45);
        let elsewhere = block(&diff, 0..30, 0..30);
        assert!(ft > 0.05 && ft > 5.0 * elsewhere.abs(), "block {ft} vs left {elsewhere}");
        // sign agreement with the planted map wherever the planted effect is material
        let mut agree = 0;
        let mut total = 0;
        for (d, g) in diff.iter().zip(&gt.maps[2]) {
            if g.abs() > 0.05 {
                total += 1;
                agree += (d.signum() == g.signum()) as usize;
            }
        }
        assert!(total > 50 && agree as f64 / total as f64 > 0.98, "{agree}/{total}");
    }
}
