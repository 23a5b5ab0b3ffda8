//! Ensemble combination: spectral meta-learner weights and the simple rules
//! it is compared against.
//!
//! For each class `k` the history keeps the `a × M` matrix of per-model
//! probabilities for that class. The principal eigenvector of its sample
//! covariance `Q_k` gives per-model weights that track balanced accuracy
//! when the models err independently given the label.

use crate::classifier::argmax;
use crate::error::{shape_err, Error, Result};
use crate::matcore::{principal_eigenvector, SymMatrix, POWER_MAX_ITER, POWER_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnsembleMode {
    SmlSoft,
    SmlHard,
    Average,
    Vote,
}

impl EnsembleMode {
    pub const ALL: [EnsembleMode; 4] = [
        EnsembleMode::SmlSoft,
        EnsembleMode::SmlHard,
        EnsembleMode::Average,
        EnsembleMode::Vote,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnsembleMode::SmlSoft => "sml-soft",
            EnsembleMode::SmlHard => "sml-hard",
            EnsembleMode::Average => "average",
            EnsembleMode::Vote => "vote",
        }
    }

    pub fn uses_sml(self) -> bool {
        matches!(self, EnsembleMode::SmlSoft | EnsembleMode::SmlHard)
    }
}

impl std::str::FromStr for EnsembleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnsembleMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ensemble mode '{s}'")))
    }
}

impl std::fmt::Display for EnsembleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-model probability vectors recorded at prediction time, with
/// running per-class means and co-moment matrices.
#[derive(Debug, Clone)]
pub struct PredictionHistory {
    n_models: usize,
    n_classes: usize,
    /// One `M × K` row-major block per recorded trial.
    rows: Vec<Vec<f64>>,
    means: Vec<Vec<f64>>,
    comoments: Vec<SymMatrix>,
}

impl PredictionHistory {
    pub fn new(n_models: usize, n_classes: usize) -> Self {
        assert!(n_models >= 1 && n_classes >= 1);
        Self {
            n_models,
            n_classes,
            rows: Vec::new(),
            means: vec![vec![0.0; n_models]; n_classes],
            comoments: vec![SymMatrix::zeros(n_models); n_classes],
        }
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn count(&self) -> usize {
        self.rows.len()
    }

    pub fn clear(&mut self) {
        *self = Self::new(self.n_models, self.n_classes);
    }

    pub fn record(&mut self, probs_per_model: &[Vec<f64>]) -> Result<()> {
        if probs_per_model.len() != self.n_models {
            return shape_err(format!(
                "expected {} probability vectors, got {}",
                self.n_models,
                probs_per_model.len()
            ));
        }
        if let Some(p) = probs_per_model.iter().find(|p| p.len() != self.n_classes) {
            return shape_err(format!("expected {} classes, got {}", self.n_classes, p.len()));
        }
        if probs_per_model
            .iter()
            .flatten()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::Numerical("probability outside [0, 1]".into()));
        }
        let row: Vec<f64> = probs_per_model.iter().flatten().copied().collect();
        let n = (self.rows.len() + 1) as f64;
        let mut delta = vec![0.0; self.n_models];
        for k in 0..self.n_classes {
            for (m, d) in delta.iter_mut().enumerate() {
                let x = row[m * self.n_classes + k];
                *d = x - self.means[k][m];
                self.means[k][m] += *d / n;
            }
            // Welford: C += (x − μ_old)(x − μ_new)ᵀ = ((n−1)/n) δ δᵀ
            self.comoments[k].add_outer(&delta, (n - 1.0) / n);
        }
        self.rows.push(row);
        Ok(())
    }

    /// Probability of class `k` from model `m` at trial `i` (0-based).
    pub fn prob(&self, i: usize, m: usize, k: usize) -> f64 {
        self.rows[i][m * self.n_classes + k]
    }

    /// `F_k` for every recorded trial (`a × M`).
    pub fn class_matrix(&self, k: usize) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| (0..self.n_models).map(|m| r[m * self.n_classes + k]).collect())
            .collect()
    }

    pub fn running_mean(&self, k: usize) -> &[f64] {
        &self.means[k]
    }

    /// `Q_k = (1/(a−1)) Σ_i (F_k(i) − mean)(F_k(i) − mean)ᵀ`.
    pub fn sml_covariance(&self, k: usize) -> Result<SymMatrix> {
        let a = self.count();
        if a < 2 {
            return Err(Error::State(format!("covariance needs two records, have {a}")));
        }
        if k >= self.n_classes {
            return shape_err(format!("class {k} out of range"));
        }
        Ok(self.comoments[k].scaled(1.0 / (a - 1) as f64))
    }

    /// Principal-eigenvector weights for every class. Convergence failure
    /// or a vector without positive mass marks the result invalid.
    pub fn sml_weights(&self) -> Result<SmlWeights> {
        let mut vectors = Vec::with_capacity(self.n_classes);
        let mut valid = true;
        for k in 0..self.n_classes {
            let q = self.sml_covariance(k)?;
            match principal_eigenvector(&q, POWER_TOL, POWER_MAX_ITER) {
                Ok(v) => {
                    if v.iter().sum::<f64>() <= 1e-12 {
                        valid = false;
                    }
                    vectors.push(v);
                }
                Err(Error::Convergence(_)) => {
                    valid = false;
                    vectors.push(vec![0.0; self.n_models]);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(SmlWeights { vectors, valid })
    }
}

/// Per-class unit weight vectors over the `M` models.
#[derive(Debug, Clone, PartialEq)]
pub struct SmlWeights {
    /// `K` vectors of length `M`.
    pub vectors: Vec<Vec<f64>>,
    pub valid: bool,
}

impl SmlWeights {
    pub fn uniform(n_models: usize, n_classes: usize) -> Self {
        let w = 1.0 / (n_models as f64).sqrt();
        Self {
            vectors: vec![vec![w; n_models]; n_classes],
            valid: true,
        }
    }
}

/// Combines `M` probability vectors into a label and a score vector.
pub fn ensemble_predict(
    probs_per_model: &[Vec<f64>],
    weights: Option<&SmlWeights>,
    mode: EnsembleMode,
) -> Result<(usize, Vec<f64>)> {
    let m = probs_per_model.len();
    if m == 0 {
        return Err(Error::EmptyInput("ensemble of zero models".into()));
    }
    let k = probs_per_model[0].len();
    if probs_per_model.iter().any(|p| p.len() != k) {
        return shape_err("models disagree on class count");
    }
    let scores = match mode {
        EnsembleMode::Average => {
            let mut s = vec![0.0; k];
            for p in probs_per_model {
                for (a, b) in s.iter_mut().zip(p) {
                    *a += b / m as f64;
                }
            }
            s
        }
        EnsembleMode::Vote => {
            let mut s = vec![0.0; k];
            for p in probs_per_model {
                s[argmax(p)] += 1.0 / m as f64;
            }
            s
        }
        EnsembleMode::SmlSoft | EnsembleMode::SmlHard => {
            let w = match weights {
                Some(w) if w.valid => w,
                _ => return Err(Error::State("spectral weights unavailable".into())),
            };
            if w.vectors.len() != k || w.vectors.iter().any(|v| v.len() != m) {
                return shape_err("spectral weights do not match the ensemble");
            }
            let mut s = vec![0.0; k];
            for (mi, p) in probs_per_model.iter().enumerate() {
                let hard = argmax(p);
                for (cls, score) in s.iter_mut().enumerate() {
                    let x = if mode == EnsembleMode::SmlHard {
                        if cls == hard {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        p[cls]
                    };
                    *score += x * w.vectors[cls][mi];
                }
            }
            s
        }
    };
    Ok((argmax(&scores), scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_probs(rng: &mut impl Rng, m: usize, k: usize) -> Vec<Vec<f64>> {
        (0..m)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect()
    }

    #[test]
    fn first_record_sets_means() {
        let mut h = PredictionHistory::new(2, 2);
        h.record(&[vec![0.3, 0.7], vec![0.9, 0.1]]).unwrap();
        assert_eq!(h.running_mean(0), &[0.3, 0.9]);
        assert_eq!(h.running_mean(1), &[0.7, 0.1]);
        assert!(matches!(h.sml_covariance(0), Err(Error::State(_))));
    }

    #[test]
    fn record_rejects_bad_shapes() {
        let mut h = PredictionHistory::new(2, 2);
        assert!(matches!(h.record(&[vec![0.5, 0.5]]), Err(Error::Shape(_))));
        assert!(matches!(
            h.record(&[vec![0.5, 0.5], vec![1.0]]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn running_means_match_batch_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut h = PredictionHistory::new(4, 3);
        for _ in 0..50 {
            h.record(&random_probs(&mut rng, 4, 3)).unwrap();
        }
        for k in 0..3 {
            let col = h.class_matrix(k);
            for m in 0..4 {
                let batch: f64 = col.iter().map(|r| r[m]).sum::<f64>() / 50.0;
                assert!((batch - h.running_mean(k)[m]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn covariance_matches_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut h = PredictionHistory::new(5, 2);
        for _ in 0..40 {
            h.record(&random_probs(&mut rng, 5, 2)).unwrap();
        }
        for k in 0..2 {
            let f = h.class_matrix(k);
            let a = f.len() as f64;
            let mean: Vec<f64> = (0..5).map(|m| f.iter().map(|r| r[m]).sum::<f64>() / a).collect();
            let q = h.sml_covariance(k).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    let two_pass: f64 = f
                        .iter()
                        .map(|r| (r[i] - mean[i]) * (r[j] - mean[j]))
                        .sum::<f64>()
                        / (a - 1.0);
                    assert!((two_pass - q.get(i, j)).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn duplicated_models_are_perfectly_correlated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut h = PredictionHistory::new(2, 2);
        for _ in 0..20 {
            let p = random_probs(&mut rng, 1, 2).remove(0);
            h.record(&[p.clone(), p]).unwrap();
        }
        let q = h.sml_covariance(0).unwrap();
        let v = q.get(0, 0);
        for x in q.as_slice() {
            assert!((x - v).abs() < 1e-15);
        }
        let w = h.sml_weights().unwrap();
        assert!(w.valid);
        assert!((w.vectors[0][0] - w.vectors[0][1]).abs() < 1e-12);
    }

    #[test]
    fn constant_model_gets_no_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut h = PredictionHistory::new(2, 2);
        for _ in 0..30 {
            let p = random_probs(&mut rng, 1, 2).remove(0);
            h.record(&[p, vec![0.6, 0.4]]).unwrap();
        }
        let q = h.sml_covariance(1).unwrap();
        assert_eq!(q.get(1, 0), 0.0);
        assert_eq!(q.get(1, 1), 0.0);
        let w = h.sml_weights().unwrap();
        assert!(w.vectors[1][1].abs() <= w.vectors[1][0].abs());
    }

    #[test]
    fn singleton_ensemble_follows_its_model() {
        let p = vec![vec![0.2, 0.5, 0.3]];
        let w = SmlWeights::uniform(1, 3);
        for mode in EnsembleMode::ALL {
            assert_eq!(ensemble_predict(&p, Some(&w), mode).unwrap().0, 1);
        }
    }

    #[test]
    fn uniform_sml_matches_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = SmlWeights::uniform(4, 3);
        for _ in 0..200 {
            let p = random_probs(&mut rng, 4, 3);
            let soft = ensemble_predict(&p, Some(&w), EnsembleMode::SmlSoft).unwrap().0;
            let avg = ensemble_predict(&p, None, EnsembleMode::Average).unwrap().0;
            assert_eq!(soft, avg);
        }
    }

    #[test]
    fn vote_majority_and_hard_sml() {
        let p = vec![vec![0.55, 0.45], vec![0.6, 0.4], vec![0.05, 0.95]];
        let (label, scores) = ensemble_predict(&p, None, EnsembleMode::Vote).unwrap();
        assert_eq!(label, 0);
        assert!((scores[0] - 2.0 / 3.0).abs() < 1e-15);
        // Average would say class 1 here; voting does not.
        assert_eq!(ensemble_predict(&p, None, EnsembleMode::Average).unwrap().0, 1);
        let w = SmlWeights {
            vectors: vec![vec![0.1, 0.1, 0.9], vec![0.1, 0.1, 0.9]],
            valid: true,
        };
        assert_eq!(ensemble_predict(&p, Some(&w), EnsembleMode::SmlHard).unwrap().0, 1);
    }

    #[test]
    fn sml_modes_need_valid_weights() {
        let p = vec![vec![0.5, 0.5]];
        assert!(matches!(
            ensemble_predict(&p, None, EnsembleMode::SmlSoft),
            Err(Error::State(_))
        ));
        let mut w = SmlWeights::uniform(1, 2);
        w.valid = false;
        assert!(matches!(
            ensemble_predict(&p, Some(&w), EnsembleMode::SmlHard),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn mode_names_round_trip() {
        for mode in EnsembleMode::ALL {
            assert_eq!(mode.name().parse::<EnsembleMode>().unwrap(), mode);
        }
        assert!("median".parse::<EnsembleMode>().is_err());
    }
}
