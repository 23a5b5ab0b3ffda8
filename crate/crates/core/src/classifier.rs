//! Small differentiable classifiers over aligned-trial features.
//!
//! A trial is reduced to a feature vector (per-channel log-variance or the
//! flattened second-moment matrix) and scored by either a linear map or a
//! one-hidden-layer ReLU network. Gradients are computed by hand-written
//! reverse-mode passes and cover every parameter.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::{Trial, TrialBatch, TrialMoments};
use crate::error::{shape_err, Error, Result};
use crate::ttaloss;

/// Variance floor inside the log-variance featurizer.
pub const LOG_VAR_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Featurizer {
    /// `ln(var(x_c) + 1e-8)` per channel.
    LogVariance,
    /// Upper triangle of `(1/ts) X Xᵀ`, off-diagonals scaled by √2.
    CovarianceFlatten,
}

impl Featurizer {
    pub fn dim(self, channels: usize) -> usize {
        match self {
            Featurizer::LogVariance => channels,
            Featurizer::CovarianceFlatten => channels * (channels + 1) / 2,
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Featurizer::LogVariance => 0,
            Featurizer::CovarianceFlatten => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Featurizer::LogVariance),
            1 => Ok(Featurizer::CovarianceFlatten),
            other => Err(Error::Format(format!("unknown featurizer id {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Featurizer::LogVariance => "log-variance",
            Featurizer::CovarianceFlatten => "covariance-flatten",
        }
    }
}

impl std::str::FromStr for Featurizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log-variance" | "logvar" => Ok(Featurizer::LogVariance),
            "covariance-flatten" | "cov" => Ok(Featurizer::CovarianceFlatten),
            other => Err(Error::Config(format!("unknown featurizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    Linear,
    Mlp { hidden: usize },
}

impl Architecture {
    pub const DEFAULT_HIDDEN: usize = 32;

    pub fn id(self) -> u8 {
        match self {
            Architecture::Linear => 0,
            Architecture::Mlp { .. } => 1,
        }
    }

    pub fn name(self) -> String {
        match self {
            Architecture::Linear => "linear".into(),
            Architecture::Mlp { hidden } => format!("mlp{hidden}"),
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Architecture::Linear),
            "mlp" => Ok(Architecture::Mlp {
                hidden: Self::DEFAULT_HIDDEN,
            }),
            _ => match s.strip_prefix("mlp").map(str::parse::<usize>) {
                Some(Ok(hidden)) if hidden > 0 => Ok(Architecture::Mlp { hidden }),
                _ => Err(Error::Config(format!("unknown architecture '{s}'"))),
            },
        }
    }
}

/// Feature vector of one trial, straight from the raw samples.
pub fn featurize(x: &Trial, kind: Featurizer) -> Vec<f64> {
    let ts = x.samples() as f64;
    match kind {
        Featurizer::LogVariance => (0..x.channels())
            .map(|c| {
                let row = x.channel(c);
                let mean = row.iter().sum::<f64>() / ts;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / ts;
                (var + LOG_VAR_EPS).ln()
            })
            .collect(),
        Featurizer::CovarianceFlatten => flatten_upper(&x.gram(), ts),
    }
}

/// Feature vector computed from trial moments (equal to [`featurize`] on the
/// trial the moments came from, up to rounding).
pub fn featurize_moments(m: &TrialMoments, kind: Featurizer) -> Vec<f64> {
    let ts = m.ts as f64;
    match kind {
        Featurizer::LogVariance => (0..m.channels())
            .map(|c| {
                let mean = m.sums[c] / ts;
                let var = (m.gram.get(c, c) / ts - mean * mean).max(0.0);
                (var + LOG_VAR_EPS).ln()
            })
            .collect(),
        Featurizer::CovarianceFlatten => flatten_upper(&m.gram, ts),
    }
}

fn flatten_upper(gram: &crate::matcore::SymMatrix, ts: f64) -> Vec<f64> {
    let n = gram.dim();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let v = gram.get(i, j) / ts;
            out.push(if i == j { v } else { v * std::f64::consts::SQRT_2 });
        }
    }
    out
}

/// Temperature-scaled softmax with max subtraction.
pub fn softmax_t(logits: &[f64], temperature: f64) -> Vec<f64> {
    assert!(temperature > 0.0, "temperature must be positive");
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits
        .iter()
        .map(|&l| ((l - max) / temperature).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Parameter tensors (or tensors shaped like them) in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub tensors: Vec<Vec<f64>>,
}

impl ParamSet {
    pub fn zeros_like(other: &ParamSet) -> Self {
        Self {
            tensors: other.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.len() == b.len())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.tensors.iter_mut().flatten()
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// Flat index → (tensor, offset).
    pub fn locate(&self, mut index: usize) -> (usize, usize) {
        for (t, tensor) in self.tensors.iter().enumerate() {
            if index < tensor.len() {
                return (t, index);
            }
            index -= tensor.len();
        }
        panic!("parameter index out of range");
    }
}

/// What a gradient is taken of.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Mean cross-entropy against integer labels (temperature 1).
    CrossEntropy { labels: &'a [usize] },
    /// Conditional entropy of the temperature-scaled predictions.
    Cem { temperature: f64 },
    /// Recalibrated marginal diversity term with constant counts `z`.
    Mdr {
        temperature: f64,
        counts: &'a [usize],
        c: f64,
    },
    /// `Cem + Mdr`.
    CemMdr {
        temperature: f64,
        counts: &'a [usize],
        c: f64,
    },
}

impl Objective<'_> {
    /// Loss value and `∂L/∂logits` for a batch of logit vectors.
    pub fn value_and_logit_grad(&self, logits: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        match *self {
            Objective::CrossEntropy { labels } => cross_entropy(logits, labels),
            Objective::Cem { temperature } => Ok(ttaloss::cem_value_grad(logits, temperature)),
            Objective::Mdr {
                temperature,
                counts,
                c,
            } => ttaloss::mdr_value_grad(logits, temperature, counts, c).map(|(v, g, _)| (v, g)),
            Objective::CemMdr {
                temperature,
                counts,
                c,
            } => {
                let (cv, mut cg) = ttaloss::cem_value_grad(logits, temperature);
                let (mv, mg, _) = ttaloss::mdr_value_grad(logits, temperature, counts, c)?;
                for (a, b) in cg.iter_mut().zip(&mg) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
                Ok((cv + mv, cg))
            }
        }
    }
}

fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != labels.len() {
        return Err(Error::Label(format!(
            "{} labels for {} inputs",
            labels.len(),
            logits.len()
        )));
    }
    let n = logits.len().max(1) as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (l, &y) in logits.iter().zip(labels) {
        if y >= l.len() {
            return Err(Error::Label(format!("label {y} out of range for {} classes", l.len())));
        }
        let p = softmax_t(l, 1.0);
        let max = l.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - l[y];
        let mut g = p;
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v /= n);
        grads.push(g);
    }
    Ok((total / n, grads))
}

/// Intermediate values kept by a batch forward pass for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub logits: Vec<Vec<f64>>,
    /// Hidden pre-activations (MLP only).
    pub hidden_pre: Vec<Vec<f64>>,
}

/// One ensemble member: featurizer + network.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    featurizer: Featurizer,
    arch: Architecture,
    n_features: usize,
    n_classes: usize,
    params: ParamSet,
    norm: InputNorm,
}

/// Frozen per-feature standardization `(f - shift) * scale` applied before
/// the network. Fitted once on source features and never adapted, like the
/// running statistics of a normalization layer in inference mode.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean and inverse population std per feature; near-constant features
    /// keep unit scale.
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = features.first() else {
            return Err(Error::EmptyInput("no features to fit normalization".into()));
        };
        let d = first.len();
        let n = features.len() as f64;
        let mut shift = vec![0.0; d];
        for f in features {
            if f.len() != d {
                return shape_err("ragged feature vectors");
            }
            shift.iter_mut().zip(f).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for f in features {
            for ((s, v), m) in var.iter_mut().zip(f).zip(&shift) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .iter()
            .map(|&v| if v.sqrt() > 1e-12 { 1.0 / v.sqrt() } else { 1.0 })
            .collect();
        Ok(Self { shift, scale })
    }

    pub fn is_identity(&self) -> bool {
        self.shift.iter().all(|&v| v == 0.0) && self.scale.iter().all(|&v| v == 1.0)
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }
}

impl Classifier {
    /// Glorot-uniform weights, zero biases.
    pub fn new(
        featurizer: Featurizer,
        arch: Architecture,
        n_features: usize,
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeros(featurizer, arch, n_features, n_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |tensor: &mut Vec<f64>, fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            tensor
                .iter_mut()
                .for_each(|w| *w = rng.gen_range(-bound..=bound));
        };
        match arch {
            Architecture::Linear => init(&mut model.params.tensors[0], n_features, n_classes),
            Architecture::Mlp { hidden } => {
                init(&mut model.params.tensors[0], n_features, hidden);
                init(&mut model.params.tensors[2], hidden, n_classes);
            }
        }
        Ok(model)
    }

    pub fn zeros(
        featurizer: Featurizer,
        arch: Architecture,
        n_features: usize,
        n_classes: usize,
    ) -> Result<Self> {
        if n_features == 0 || n_classes < 2 {
            return Err(Error::Config(format!(
                "need at least one feature and two classes, got {n_features} and {n_classes}"
            )));
        }
        let tensors = match arch {
            Architecture::Linear => vec![vec![0.0; n_classes * n_features], vec![0.0; n_classes]],
            Architecture::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::Config("hidden width must be positive".into()));
                }
                vec![
                    vec![0.0; hidden * n_features],
                    vec![0.0; hidden],
                    vec![0.0; n_classes * hidden],
                    vec![0.0; n_classes],
                ]
            }
        };
        Ok(Self {
            featurizer,
            arch,
            n_features,
            n_classes,
            params: ParamSet { tensors },
            norm: InputNorm::identity(n_features),
        })
    }

    pub fn featurizer(&self) -> Featurizer {
        self.featurizer
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        if !self.params.same_shape(&params) {
            return shape_err("parameter set does not match the architecture");
        }
        self.params = params;
        Ok(())
    }

    pub fn featurize(&self, x: &Trial) -> Vec<f64> {
        featurize(x, self.featurizer)
    }

    pub fn input_norm(&self) -> &InputNorm {
        &self.norm
    }

    pub fn set_input_norm(&mut self, norm: InputNorm) -> Result<()> {
        if norm.shift.len() != self.n_features || norm.scale.len() != self.n_features {
            return shape_err("normalization does not match the feature dimension");
        }
        if !norm.shift.iter().chain(&norm.scale).all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite input normalization".into()));
        }
        self.norm = norm;
        Ok(())
    }

    fn check_features(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.n_features {
            return shape_err(format!(
                "model expects {} features, got {}",
                self.n_features,
                f.len()
            ));
        }
        Ok(())
    }

    pub fn forward(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_features(f)?;
        let (logits, _) = self.forward_one(f);
        Ok(logits)
    }

    fn forward_one(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let f = &self.norm.apply(f);
        let t = &self.params.tensors;
        match self.arch {
            Architecture::Linear => (affine(&t[0], &t[1], f), Vec::new()),
            Architecture::Mlp { .. } => {
                let pre = affine(&t[0], &t[1], f);
                let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
                (affine(&t[2], &t[3], &act), pre)
            }
        }
    }

    pub fn forward_batch(&self, features: &[Vec<f64>]) -> Result<ForwardCache> {
        let mut cache = ForwardCache {
            logits: Vec::with_capacity(features.len()),
            hidden_pre: Vec::new(),
        };
        for f in features {
            self.check_features(f)?;
            let (logits, pre) = self.forward_one(f);
            cache.logits.push(logits);
            if !pre.is_empty() {
                cache.hidden_pre.push(pre);
            }
        }
        Ok(cache)
    }

    pub fn predict_proba(&self, f: &[f64], temperature: f64) -> Result<Vec<f64>> {
        Ok(softmax_t(&self.forward(f)?, temperature))
    }

    /// Backprop `∂L/∂logits` to every parameter.
    pub fn backward(
        &self,
        features: &[Vec<f64>],
        cache: &ForwardCache,
        dlogits: &[Vec<f64>],
    ) -> ParamSet {
        let mut grads = ParamSet::zeros_like(&self.params);
        let k = self.n_classes;
        let features: Vec<Vec<f64>> = features.iter().map(|f| self.norm.apply(f)).collect();
        match self.arch {
            Architecture::Linear => {
                let d = self.n_features;
                let (gw, gb) = split2(&mut grads.tensors);
                for (f, dl) in features.iter().zip(dlogits) {
                    for c in 0..k {
                        gb[c] += dl[c];
                        let row = &mut gw[c * d..(c + 1) * d];
                        for (g, x) in row.iter_mut().zip(f) {
                            *g += dl[c] * x;
                        }
                    }
                }
            }
            Architecture::Mlp { hidden } => {
                let d = self.n_features;
                let w2 = &self.params.tensors[2];
                let [gw1, gb1, gw2, gb2] = &mut grads.tensors[..] else {
                    unreachable!("mlp has four tensors")
                };
                let mut dz = vec![0.0; hidden];
                for ((f, dl), pre) in features.iter().zip(dlogits).zip(&cache.hidden_pre) {
                    dz.iter_mut().for_each(|v| *v = 0.0);
                    for c in 0..k {
                        gb2[c] += dl[c];
                        let w_row = &w2[c * hidden..(c + 1) * hidden];
                        let g_row = &mut gw2[c * hidden..(c + 1) * hidden];
                        for j in 0..hidden {
                            g_row[j] += dl[c] * pre[j].max(0.0);
                            dz[j] += dl[c] * w_row[j];
                        }
                    }
                    for j in 0..hidden {
                        if pre[j] <= 0.0 {
                            continue;
                        }
                        gb1[j] += dz[j];
                        let row = &mut gw1[j * d..(j + 1) * d];
                        for (g, x) in row.iter_mut().zip(f) {
                            *g += dz[j] * x;
                        }
                    }
                }
            }
        }
        grads
    }

    /// Scalar loss and its exact gradient with respect to all parameters.
    pub fn value_and_grad(
        &self,
        features: &[Vec<f64>],
        objective: &Objective,
    ) -> Result<(f64, ParamSet)> {
        let cache = self.forward_batch(features)?;
        let (value, dlogits) = objective.value_and_logit_grad(&cache.logits)?;
        Ok((value, self.backward(features, &cache, &dlogits)))
    }

    pub fn loss(&self, features: &[Vec<f64>], objective: &Objective) -> Result<f64> {
        let cache = self.forward_batch(features)?;
        Ok(objective.value_and_logit_grad(&cache.logits)?.0)
    }

    /// Minibatch Adam on mean cross-entropy. Returns the full-set loss
    /// after each epoch.
    pub fn train_features(
        &mut self,
        features: &[Vec<f64>],
        labels: &[usize],
        cfg: &TrainConfig,
    ) -> Result<Vec<f64>> {
        if features.len() != labels.len() {
            return Err(Error::Label(format!(
                "{} labels for {} trials",
                labels.len(),
                features.len()
            )));
        }
        if features.is_empty() {
            return Err(Error::EmptyInput("no training trials".into()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= self.n_classes) {
            return Err(Error::Label(format!(
                "label {bad} out of range for {} classes",
                self.n_classes
            )));
        }
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if cfg.standardize {
            self.set_input_norm(InputNorm::fit(features)?)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut adam = AdamState::new(&self.params, AdamConfig::with_lr(cfg.lr));
        let mut order: Vec<usize> = (0..features.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        let mut batch_f = Vec::with_capacity(cfg.batch_size);
        let mut batch_y = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                batch_f.clear();
                batch_y.clear();
                for &i in chunk {
                    batch_f.push(features[i].clone());
                    batch_y.push(labels[i]);
                }
                let (_, grads) =
                    self.value_and_grad(&batch_f, &Objective::CrossEntropy { labels: &batch_y })?;
                adam_step(&mut self.params, &mut adam, &grads)?;
            }
            history.push(self.loss(features, &Objective::CrossEntropy { labels })?);
        }
        Ok(history)
    }

    /// Checkpoint: `TTMD`, u16 version, featurizer u8, arch u8, u32 classes,
    /// u32 feature dim, then every parameter tensor followed by the
    /// normalization shift and scale, all as little-endian f64.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&[self.featurizer.id(), self.arch.id()])?;
        w.write_all(&(self.n_classes as u32).to_le_bytes())?;
        w.write_all(&(self.n_features as u32).to_le_bytes())?;
        for v in self.params.iter().chain(&self.norm.shift).chain(&self.norm.scale) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)
            .map_err(|e| Error::Format(format!("truncated checkpoint header: {e}")))?;
        if &header[0..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let featurizer = Featurizer::from_id(header[6])?;
        let arch_id = header[7];
        let n_classes = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let n_features = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() % 8 != 0 {
            return Err(Error::Format("checkpoint payload is not a whole number of f64".into()));
        }
        let mut values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.len() < 2 * n_features {
            return Err(Error::Format("checkpoint is missing the input normalization".into()));
        }
        let scale = values.split_off(values.len() - n_features);
        let shift = values.split_off(values.len() - n_features);
        let arch = match arch_id {
            0 => Architecture::Linear,
            1 => {
                // Hidden width is implied by the payload size.
                let per_unit = n_features + 1 + n_classes;
                let n = values.len();
                if n < n_classes || !(n - n_classes).is_multiple_of(per_unit) {
                    return Err(Error::Format("mlp payload size is inconsistent".into()));
                }
                Architecture::Mlp {
                    hidden: (n - n_classes) / per_unit,
                }
            }
            other => return Err(Error::Format(format!("unknown architecture id {other}"))),
        };
        let mut model = Self::zeros(featurizer, arch, n_features, n_classes)
            .map_err(|e| Error::Format(e.to_string()))?;
        if model.params.len() != values.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                values.len()
            )));
        }
        for (dst, src) in model.params.iter_mut().zip(values) {
            *dst = src;
        }
        model
            .set_input_norm(InputNorm { shift, scale })
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(file))
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TTMD";
pub const CHECKPOINT_VERSION: u16 = 1;

fn split2(t: &mut [Vec<f64>]) -> (&mut Vec<f64>, &mut Vec<f64>) {
    let (a, b) = t.split_at_mut(1);
    (&mut a[0], &mut b[0])
}

/// `W x + b` with `W` row-major `out × in`.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    b.iter()
        .enumerate()
        .map(|(i, bi)| bi + w[i * d..(i + 1) * d].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

/// Source-training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Fit the frozen input standardization on the training features first.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            standardize: true,
        }
    }
}

/// Featurizes a labeled batch and trains `model` on it.
pub fn train_source(model: &mut Classifier, batch: &TrialBatch, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let labels = batch.labels()?;
    let features: Vec<Vec<f64>> = batch.trials.iter().map(|t| model.featurize(t)).collect();
    model.train_features(&features, labels, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        Self {
            config,
            m: ParamSet::zeros_like(params),
            v: ParamSet::zeros_like(params),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, grads: &ParamSet) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return shape_err("adam: parameter, gradient and moment shapes differ");
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
