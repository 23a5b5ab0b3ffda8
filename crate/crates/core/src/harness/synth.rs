//! Synthetic multichannel trials with per-subject spatial mixing,
//! class-dependent latent variance, session drift, and class imbalance.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::alignment::{Trial, TrialBatch};
use crate::engine::member_seed;
use crate::error::{Error, Result};

/// Generator parameters. Latent source `j` of a class-`y` trial has
/// variance `1 + g_{s,y}` when `j ≡ y (mod ch)` and `1` otherwise, with
/// `g_{s,y} = class_gain · exp(class_gain_spread · N(0,1))` drawn per subject,
/// each multiplied by a per-trial log-normal jitter. Subject `s` observes
/// `A_s (latent + noise)` with `A_s = diag(exp(gain_spread·g)) (I + shift·G_s)`;
/// target session `t > 0` uses `A_s (I + drift·G_{s,t})`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_subjects: usize,
    /// Balanced labeled trials per subject, used when it serves as source.
    pub source_trials: usize,
    /// Trials per target session.
    pub target_trials: usize,
    pub target_sessions: usize,
    pub channels: usize,
    pub samples: usize,
    pub n_classes: usize,
    pub shift: f64,
    pub gain_spread: f64,
    pub class_gain: f64,
    pub class_gain_spread: f64,
    pub jitter: f64,
    pub noise: f64,
    /// Class-0 to other-class ratio in target sessions; 1 means balanced.
    pub imbalance_ratio: f64,
    pub drift: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// The standard LOSO benchmark: 8 subjects, 8 channels, binary.
    fn default() -> Self {
        Self {
            n_subjects: 8,
            source_trials: 144,
            target_trials: 150,
            target_sessions: 1,
            channels: 8,
            samples: 64,
            n_classes: 2,
            shift: 1.4,
            gain_spread: 0.3,
            class_gain: 2.0,
            class_gain_spread: 0.0,
            jitter: 0.2,
            noise: 0.3,
            imbalance_ratio: 1.0,
            drift: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_subjects", self.n_subjects),
            ("source_trials", self.source_trials),
            ("target_trials", self.target_trials),
            ("target_sessions", self.target_sessions),
            ("channels", self.channels),
        ];
        for (name, v) in positive {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.samples < 2 {
            return Err(Error::Config("samples must be at least 2".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if !(self.imbalance_ratio >= 1.0) || !self.imbalance_ratio.is_finite() {
            return Err(Error::Config(format!(
                "imbalance ratio must be >= 1, got {}",
                self.imbalance_ratio
            )));
        }
        let reals = [
            ("shift", self.shift),
            ("gain_spread", self.gain_spread),
            ("class_gain", self.class_gain),
            ("class_gain_spread", self.class_gain_spread),
            ("jitter", self.jitter),
            ("noise", self.noise),
            ("drift", self.drift),
        ];
        for (name, v) in reals {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-class counts for `n` trials, class 0 weighted by `ratio`.
/// Remainders go to the lowest class indices.
pub fn class_counts(n: usize, n_classes: usize, ratio: f64) -> Vec<usize> {
    let weights: Vec<f64> = (0..n_classes).map(|k| if k == 0 { ratio } else { 1.0 }).collect();
    let total: f64 = weights.iter().sum();
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| ((n as f64) * w / total + 1e-9).floor() as usize)
        .collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut k = 0;
    while left > 0 {
        counts[k % n_classes] += 1;
        left -= 1;
        k += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSubject {
    pub id: String,
    pub source: TrialBatch,
    pub sessions: Vec<TrialBatch>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub subjects: Vec<SynthSubject>,
}

impl SynthDataset {
    /// Source batches of every subject except `held_out`.
    pub fn sources_excluding(&self, held_out: usize) -> Vec<TrialBatch> {
        self.subjects
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held_out)
            .map(|(_, s)| s.source.clone())
            .collect()
    }

    /// `(source subjects, target sessions)`.
    pub fn split(&self) -> (Vec<TrialBatch>, Vec<Vec<TrialBatch>>) {
        (
            self.subjects.iter().map(|s| s.source.clone()).collect(),
            self.subjects.iter().map(|s| s.sessions.clone()).collect(),
        )
    }
}

fn gaussian_matrix(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n * n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            g * scale / (n as f64).sqrt()
        })
        .collect()
}

fn perturbed_identity(rng: &mut impl Rng, n: usize, amount: f64) -> Vec<f64> {
    let mut m = gaussian_matrix(rng, n, amount);
    for i in 0..n {
        m[i * n + i] += 1.0;
    }
    m
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

fn generate_trial(
    spec: &SynthSpec,
    mixing: &[f64],
    class_gains: &[f64],
    label: usize,
    rng: &mut impl Rng,
) -> Result<Trial> {
    let (ch, ts) = (spec.channels, spec.samples);
    let mut latent = vec![0.0; ch * ts];
    for j in 0..ch {
        let base = if j == label % ch { 1.0 + class_gains[label] } else { 1.0 };
        let jitter: f64 = StandardNormal.sample(rng);
        let sd = (base * (spec.jitter * jitter).exp()).sqrt();
        for t in 0..ts {
            let s: f64 = StandardNormal.sample(rng);
            let e: f64 = StandardNormal.sample(rng);
            latent[j * ts + t] = sd * s + spec.noise * e;
        }
    }
    let mut data = vec![0.0; ch * ts];
    for i in 0..ch {
        for j in 0..ch {
            let a = mixing[i * ch + j];
            if a == 0.0 {
                continue;
            }
            let src = &latent[j * ts..(j + 1) * ts];
            for (d, s) in data[i * ts..(i + 1) * ts].iter_mut().zip(src) {
                *d += a * s;
            }
        }
    }
    Trial::new(ch, ts, data)
}

fn generate_session(
    spec: &SynthSpec,
    id: String,
    mixing: &[f64],
    class_gains: &[f64],
    counts: &[usize],
    rng: &mut impl Rng,
) -> Result<TrialBatch> {
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(k, &n)| std::iter::repeat_n(k, n))
        .collect();
    labels.shuffle(rng);
    let trials = labels
        .iter()
        .map(|&y| generate_trial(spec, mixing, class_gains, y, rng))
        .collect::<Result<Vec<_>>>()?;
    TrialBatch::new(id, trials, Some(labels))
}

/// Generates every subject from seeds derived per subject, so a subject's
/// data does not depend on how many subjects are requested.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let ch = spec.channels;
    let subjects = (0..spec.n_subjects)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(member_seed(spec.seed, s, 0x5e55));
            let gains: Vec<f64> = (0..ch)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    (spec.gain_spread * g).exp()
                })
                .collect();
            let mut base = perturbed_identity(&mut rng, ch, spec.shift);
            for i in 0..ch {
                for j in 0..ch {
                    base[i * ch + j] *= gains[i];
                }
            }
            let class_gains: Vec<f64> = (0..spec.n_classes)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    spec.class_gain * (spec.class_gain_spread * g).exp()
                })
                .collect();
            let id = format!("S{:02}", s + 1);
            let balanced = class_counts(spec.source_trials, spec.n_classes, 1.0);
            let source = generate_session(spec, id.clone(), &base, &class_gains, &balanced, &mut rng)?;
            let target_counts = class_counts(spec.target_trials, spec.n_classes, spec.imbalance_ratio);
            let mut sessions = Vec::with_capacity(spec.target_sessions);
            for t in 0..spec.target_sessions {
                let mixing = if t == 0 || spec.drift == 0.0 {
                    base.clone()
                } else {
                    matmul(&base, &perturbed_identity(&mut rng, ch, spec.drift), ch)
                };
                let sid = format!("{id}/t{}", t + 1);
                sessions.push(generate_session(spec, sid, &mixing, &class_gains, &target_counts, &mut rng)?);
            }
            Ok(SynthSubject { id, source, sessions })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthDataset {
        spec: spec.clone(),
        subjects,
    })
}

/// Monte-Carlo draw of conditionally independent binary experts: expert
/// `m` is correct with probability `accuracies[m]` on either class and
/// puts a confidence in `[0.6, 1)` on its chosen class. Returns the
/// per-sample probability vectors (`n × M × 2`) and the true labels.
pub fn simulate_experts(
    n_samples: usize,
    accuracies: &[f64],
    rng: &mut impl Rng,
) -> (Vec<Vec<Vec<f64>>>, Vec<usize>) {
    let mut probs = Vec::with_capacity(n_samples);
    let mut truth = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let y = rng.gen_range(0..2usize);
        let row = accuracies
            .iter()
            .map(|&acc| {
                let pred = if rng.gen::<f64>() < acc { y } else { 1 - y };
                let conf = rng.gen_range(0.6..1.0);
                let mut p = vec![1.0 - conf; 2];
                p[pred] = conf;
                p
            })
            .collect();
        probs.push(row);
        truth.push(y);
    }
    (probs, truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n_subjects: 2,
            source_trials: 10,
            target_trials: 9,
            target_sessions: 2,
            channels: 3,
            samples: 16,
            drift: 0.2,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn ratio_arithmetic() {
        assert_eq!(class_counts(90, 2, 2.0), vec![60, 30]);
        assert_eq!(class_counts(10, 3, 1.0), vec![4, 3, 3]);
        assert_eq!(class_counts(7, 2, 1.0), vec![4, 3]);
    }

    #[test]
    fn deterministic_and_shaped() {
        let a = synth_generate(&small()).unwrap();
        let b = synth_generate(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.subjects.len(), 2);
        let s = &a.subjects[1];
        assert_eq!(s.source.len(), 10);
        assert_eq!(s.sessions.len(), 2);
        assert_eq!(s.sessions[1].dims(), Some((3, 16)));
        assert_eq!(s.sessions[0].subject_id, "S02/t1");
    }

    #[test]
    fn subject_data_independent_of_subject_count() {
        let a = synth_generate(&small()).unwrap();
        let b = synth_generate(&SynthSpec { n_subjects: 3, ..small() }).unwrap();
        assert_eq!(a.subjects[1], b.subjects[1]);
    }

    #[test]
    fn invalid_specs() {
        assert!(synth_generate(&SynthSpec { imbalance_ratio: 0.5, ..small() }).is_err());
        assert!(synth_generate(&SynthSpec { n_classes: 1, ..small() }).is_err());
        assert!(synth_generate(&SynthSpec { noise: -1.0, ..small() }).is_err());
    }

    #[test]
    fn experts_hit_their_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (probs, truth) = simulate_experts(4000, &[0.9, 0.6], &mut rng);
        for (m, target) in [(0, 0.9), (1, 0.6)] {
            let hits = probs
                .iter()
                .zip(&truth)
                .filter(|(p, &y)| crate::classifier::argmax(&p[m]) == y)
                .count();
            assert!((hits as f64 / 4000.0 - target).abs() < 0.03);
        }
    }
}
