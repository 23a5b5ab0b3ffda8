//! Euclidean alignment of multi-channel trials.
//!
//! Offline alignment whitens a whole subject by the inverse square root of
//! its mean trial covariance `(1/n) Σ X Xᵀ`. The incremental variant keeps a
//! running sum of `X Xᵀ` over the target stream and whitens with the current
//! mean after every arrival.

use std::sync::OnceLock;

use crate::error::{shape_err, Error, Result};
use crate::matcore::{inv_sqrt, relative_floor, SymMatrix};

/// One multi-channel trial, `ch × ts`, row-major (channel-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    ch: usize,
    ts: usize,
    data: Vec<f64>,
}

impl Trial {
    pub fn new(ch: usize, ts: usize, data: Vec<f64>) -> Result<Self> {
        if ch < 1 || ts < 2 {
            return shape_err(format!("trial needs ch >= 1 and ts >= 2, got {ch}x{ts}"));
        }
        if data.len() != ch * ts {
            return shape_err(format!(
                "trial {ch}x{ts} needs {} samples, got {}",
                ch * ts,
                data.len()
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("trial contains non-finite samples".into()));
        }
        Ok(Self { ch, ts, data })
    }

    pub fn zeros(ch: usize, ts: usize) -> Self {
        Self::new(ch, ts, vec![0.0; ch * ts]).expect("valid dimensions")
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.ch
    }

    #[inline]
    pub fn samples(&self) -> usize {
        self.ts
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.ts..(c + 1) * self.ts]
    }

    pub fn scaled(&self, alpha: f64) -> Trial {
        Trial {
            ch: self.ch,
            ts: self.ts,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    /// `X Xᵀ`.
    pub fn gram(&self) -> SymMatrix {
        let mut g = SymMatrix::zeros(self.ch);
        for i in 0..self.ch {
            let ri = self.channel(i);
            for j in i..self.ch {
                let rj = self.channel(j);
                g.set(i, j, ri.iter().zip(rj).map(|(a, b)| a * b).sum());
            }
        }
        g
    }

    /// `W X` for a `ch × ch` transform `W`.
    pub fn transformed(&self, w: &SymMatrix) -> Result<Trial> {
        if w.dim() != self.ch {
            return shape_err(format!(
                "transform is {0}x{0}, trial has {1} channels",
                w.dim(),
                self.ch
            ));
        }
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.ch {
            let dst = &mut out[i * self.ts..(i + 1) * self.ts];
            for (k, &wik) in w.row(i).iter().enumerate() {
                if wik == 0.0 {
                    continue;
                }
                for (d, s) in dst.iter_mut().zip(self.channel(k)) {
                    *d += wik * s;
                }
            }
        }
        Ok(Trial {
            ch: self.ch,
            ts: self.ts,
            data: out,
        })
    }

    /// Sufficient statistics for featurizing any linear transform of this trial.
    pub fn moments(&self) -> TrialMoments {
        TrialMoments {
            ts: self.ts,
            gram: self.gram(),
            sums: (0..self.ch).map(|c| self.channel(c).iter().sum()).collect(),
        }
    }
}

/// Gram matrix and per-channel sums of a raw trial. `W X` has gram
/// `W G Wᵀ` and sums `W s`, so aligned features can be recomputed under a
/// new whitener without touching the time samples again.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialMoments {
    pub ts: usize,
    pub gram: SymMatrix,
    pub sums: Vec<f64>,
}

impl TrialMoments {
    pub fn channels(&self) -> usize {
        self.gram.dim()
    }

    pub fn transformed(&self, w: &SymMatrix) -> Result<TrialMoments> {
        if w.dim() != self.channels() {
            return shape_err("transform and moments disagree on channel count");
        }
        Ok(TrialMoments {
            ts: self.ts,
            gram: w.sandwich(&self.gram),
            sums: w.mul_vec(&self.sums),
        })
    }
}

/// Ordered trials from one subject/session with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialBatch {
    pub trials: Vec<Trial>,
    pub labels: Option<Vec<usize>>,
    pub subject_id: String,
}

impl TrialBatch {
    pub fn new(
        subject_id: impl Into<String>,
        trials: Vec<Trial>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if let Some(first) = trials.first() {
            let (ch, ts) = (first.ch, first.ts);
            if let Some(bad) = trials.iter().position(|t| t.ch != ch || t.ts != ts) {
                return shape_err(format!("trial {bad} differs from {ch}x{ts}"));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != trials.len() {
                return Err(Error::Label(format!(
                    "{} labels for {} trials",
                    labels.len(),
                    trials.len()
                )));
            }
        }
        Ok(Self {
            trials,
            labels,
            subject_id: subject_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// `(channels, samples)` of the trials, if any.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.trials.first().map(|t| (t.ch, t.ts))
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Label(format!("batch {} has no labels", self.subject_id)))
    }
}

/// How the eigenvalue floor of a covariance is chosen before whitening.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigenFloor {
    /// Multiple of the mean eigenvalue, `rel · trace/dim`.
    Relative(f64),
    Absolute(f64),
}

impl Default for EigenFloor {
    fn default() -> Self {
        EigenFloor::Relative(1e-12)
    }
}

impl EigenFloor {
    pub fn resolve(self, r: &SymMatrix) -> f64 {
        match self {
            EigenFloor::Relative(rel) => relative_floor(r, rel),
            EigenFloor::Absolute(v) => v,
        }
    }
}

/// `(1/n) Σ_i X_i X_iᵀ`.
pub fn mean_covariance(batch: &TrialBatch) -> Result<SymMatrix> {
    let (ch, _) = batch
        .dims()
        .ok_or_else(|| Error::EmptyInput("mean covariance of an empty batch".into()))?;
    let mut sum = SymMatrix::zeros(ch);
    for t in &batch.trials {
        sum.add_scaled(&t.gram(), 1.0);
    }
    Ok(sum.scaled(1.0 / batch.len() as f64))
}

/// The whitening matrix `R̄^{-1/2}` of a batch.
pub fn whitener(batch: &TrialBatch, floor: EigenFloor) -> Result<SymMatrix> {
    let r = mean_covariance(batch)?;
    inv_sqrt(&r, floor.resolve(&r))
}

/// Replaces every trial by `R̄^{-1/2} X`; order and labels are kept.
pub fn align_offline(batch: &TrialBatch, floor: EigenFloor) -> Result<TrialBatch> {
    let w = whitener(batch, floor)?;
    let trials = batch
        .trials
        .iter()
        .map(|t| t.transformed(&w))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialBatch {
        trials,
        labels: batch.labels.clone(),
        subject_id: batch.subject_id.clone(),
    })
}

/// Running `Σ X Xᵀ` over a target stream with a lazily cached whitener.
#[derive(Debug, Default)]
pub struct RunningCovariance {
    sum_xxt: Option<SymMatrix>,
    count: usize,
    floor: EigenFloor,
    whitener: OnceLock<SymMatrix>,
}

impl Clone for RunningCovariance {
    fn clone(&self) -> Self {
        let whitener = OnceLock::new();
        if let Some(w) = self.whitener.get() {
            let _ = whitener.set(w.clone());
        }
        Self {
            sum_xxt: self.sum_xxt.clone(),
            count: self.count,
            floor: self.floor,
            whitener,
        }
    }
}

impl RunningCovariance {
    pub fn new(floor: EigenFloor) -> Self {
        Self {
            floor,
            ..Self::default()
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sum(&self) -> Option<&SymMatrix> {
        self.sum_xxt.as_ref()
    }

    pub fn mean_covariance(&self) -> Option<SymMatrix> {
        self.sum_xxt
            .as_ref()
            .map(|s| s.scaled(1.0 / self.count as f64))
    }

    pub fn reset(&mut self) {
        self.sum_xxt = None;
        self.count = 0;
        self.whitener = OnceLock::new();
    }

    pub fn update(&mut self, x: &Trial) -> Result<()> {
        self.update_gram(&x.gram())
    }

    /// Same as [`update`](Self::update) given a precomputed `X Xᵀ`.
    pub fn update_gram(&mut self, gram: &SymMatrix) -> Result<()> {
        match &mut self.sum_xxt {
            Some(sum) if sum.dim() != gram.dim() => {
                return shape_err(format!(
                    "running covariance has {} channels, trial has {}",
                    sum.dim(),
                    gram.dim()
                ))
            }
            Some(sum) => sum.add_scaled(gram, 1.0),
            None => self.sum_xxt = Some(gram.clone()),
        }
        self.count += 1;
        self.whitener = OnceLock::new();
        Ok(())
    }

    /// `(R̄_a)^{-1/2}`, recomputed at most once per update.
    pub fn whitener(&self) -> Result<&SymMatrix> {
        if let Some(w) = self.whitener.get() {
            return Ok(w);
        }
        let mean = self
            .mean_covariance()
            .ok_or_else(|| Error::State("no trials seen yet".into()))?;
        let w = inv_sqrt(&mean, self.floor.resolve(&mean))?;
        Ok(self.whitener.get_or_init(|| w))
    }

    pub fn transform(&self, x: &Trial) -> Result<Trial> {
        x.transformed(self.whitener()?)
    }
}

/// Functional form of [`RunningCovariance::update`].
pub fn iea_update(mut state: RunningCovariance, x: &Trial) -> Result<RunningCovariance> {
    state.update(x)?;
    Ok(state)
}

/// Functional form of [`RunningCovariance::transform`].
pub fn iea_transform(state: &RunningCovariance, x: &Trial) -> Result<Trial> {
    state.transform(x)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn random_trial(rng: &mut impl Rng, ch: usize, ts: usize) -> Trial {
        // Channel-correlated data so whitening has work to do.
        let raw: Vec<f64> = (0..ch * ts).map(|_| rng.sample(StandardNormal)).collect();
        let mut data = raw.clone();
        for c in 1..ch {
            for t in 0..ts {
                data[c * ts + t] += 0.5 * raw[(c - 1) * ts + t];
            }
        }
        Trial::new(ch, ts, data).unwrap()
    }

    pub(crate) fn random_batch(rng: &mut impl Rng, n: usize, ch: usize, ts: usize) -> TrialBatch {
        let trials = (0..n).map(|_| random_trial(rng, ch, ts)).collect();
        TrialBatch::new("s", trials, None).unwrap()
    }

    fn max_abs_diff(a: &Trial, b: &Trial) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn trial_validation() {
        assert!(matches!(Trial::new(2, 1, vec![0.0; 2]), Err(Error::Shape(_))));
        assert!(matches!(Trial::new(2, 2, vec![0.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(
            Trial::new(1, 2, vec![0.0, f64::INFINITY]),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn mean_covariance_single_trial_is_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_trial(&mut rng, 3, 10);
        let batch = TrialBatch::new("s", vec![t.clone()], None).unwrap();
        assert_eq!(mean_covariance(&batch).unwrap(), t.gram());
    }

    #[test]
    fn mean_covariance_hand_example() {
        let s = 2f64.sqrt();
        let x1 = Trial::new(2, 2, vec![s, 0.0, 0.0, 0.0]).unwrap();
        let x2 = Trial::new(2, 2, vec![0.0, 0.0, 0.0, s]).unwrap();
        let batch = TrialBatch::new("s", vec![x1, x2], None).unwrap();
        let m = mean_covariance(&batch).unwrap();
        assert!(m.distance(&SymMatrix::identity(2)) < 1e-12);
    }

    #[test]
    fn mean_covariance_zero_and_empty() {
        let batch = TrialBatch::new("s", vec![Trial::zeros(2, 4); 3], None).unwrap();
        assert_eq!(mean_covariance(&batch).unwrap(), SymMatrix::zeros(2));
        let empty = TrialBatch::new("s", vec![], None).unwrap();
        assert!(matches!(mean_covariance(&empty), Err(Error::EmptyInput(_))));
        // Zero covariance still yields finite (zero) aligned trials.
        let aligned = align_offline(&batch, EigenFloor::default()).unwrap();
        assert!(aligned.trials.iter().all(|t| t.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn align_single_trial_whitens_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = random_batch(&mut rng, 1, 4, 50);
        let out = align_offline(&batch, EigenFloor::default()).unwrap();
        assert!(out.trials[0].gram().distance(&SymMatrix::identity(4)) <= 1e-8);
    }

    #[test]
    fn align_is_identity_on_aligned_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = random_batch(&mut rng, 6, 3, 40);
        let once = align_offline(&batch, EigenFloor::default()).unwrap();
        let twice = align_offline(&once, EigenFloor::default()).unwrap();
        for (a, b) in once.trials.iter().zip(&twice.trials) {
            assert!(max_abs_diff(a, b) <= 1e-8);
        }
        assert_eq!(twice.labels, once.labels);
    }

    #[test]
    fn align_random_batch_has_identity_mean_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = random_batch(&mut rng, 10, 4, 30);
        let out = align_offline(&batch, EigenFloor::default()).unwrap();
        let m = mean_covariance(&out).unwrap();
        assert!(m.distance(&SymMatrix::identity(4)) <= 1e-6);
    }

    #[test]
    fn iea_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_trial(&mut rng, 3, 20);
        let state = iea_update(RunningCovariance::default(), &x).unwrap();
        assert_eq!(state.count(), 1);
        assert_eq!(state.mean_covariance().unwrap(), x.gram());
        let aligned = iea_transform(&state, &x).unwrap();
        assert!(aligned.gram().distance(&SymMatrix::identity(3)) <= 1e-8);

        let sum_before = state.sum().unwrap().clone();
        let state = iea_update(state, &Trial::zeros(3, 20)).unwrap();
        assert_eq!(state.count(), 2);
        assert_eq!(state.sum().unwrap(), &sum_before);
    }

    #[test]
    fn iea_errors() {
        let state = RunningCovariance::default();
        assert!(matches!(
            iea_transform(&state, &Trial::zeros(2, 3)),
            Err(Error::State(_))
        ));
        let state = iea_update(state, &Trial::zeros(2, 3)).unwrap();
        assert!(matches!(
            iea_update(state, &Trial::zeros(3, 3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn iea_matches_offline_on_every_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let batch = random_batch(&mut rng, 12, 4, 25);
        let mut state = RunningCovariance::default();
        for a in 1..=batch.len() {
            state.update(&batch.trials[a - 1]).unwrap();
            let prefix = TrialBatch::new("p", batch.trials[..a].to_vec(), None).unwrap();
            let offline_cov = mean_covariance(&prefix).unwrap();
            let online_cov = state.mean_covariance().unwrap();
            assert!(online_cov.distance(&offline_cov) <= 1e-12 * offline_cov.frobenius_norm().max(1.0));
            let offline = align_offline(&prefix, EigenFloor::default()).unwrap();
            for (i, t) in prefix.trials.iter().enumerate() {
                let online = state.transform(t).unwrap();
                assert!(max_abs_diff(&online, &offline.trials[i]) <= 1e-10);
            }
        }
    }

    #[test]
    fn transform_is_identity_when_mean_covariance_is_identity() {
        let s = 2f64.sqrt();
        let x1 = Trial::new(2, 2, vec![s, 0.0, 0.0, 0.0]).unwrap();
        let x2 = Trial::new(2, 2, vec![0.0, 0.0, 0.0, s]).unwrap();
        let mut state = RunningCovariance::default();
        state.update(&x1).unwrap();
        state.update(&x2).unwrap();
        assert!(max_abs_diff(&state.transform(&x1).unwrap(), &x1) <= 1e-10);
    }

    #[test]
    fn moments_track_transformed_trial() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = random_batch(&mut rng, 5, 3, 30);
        let w = whitener(&batch, EigenFloor::default()).unwrap();
        let x = &batch.trials[0];
        let via_moments = x.moments().transformed(&w).unwrap();
        let direct = x.transformed(&w).unwrap().moments();
        assert!(via_moments.gram.distance(&direct.gram) <= 1e-10);
        for (a, b) in via_moments.sums.iter().zip(&direct.sums) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
}
