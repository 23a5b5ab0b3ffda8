//! Adaptation losses and the per-window model update.
//!
//! Both losses work on temperature-scaled softmax outputs over a sliding
//! window of the most recent `B` aligned trials:
//!
//! - conditional entropy: `-(1/B) Σ_i Σ_k p_ik ln p_ik`;
//! - recalibrated diversity: with `p̄` the window-mean prediction and `z` the
//!   confident pseudo-label counts, `q_k = p̄_k/(c + z_k)`, `q̂ = q/Σq`, and the
//!   loss is `Σ_k q̂_k ln q̂_k`.
//!
//! Pseudo-label counts use the unscaled (T = 1) probabilities and are
//! treated as constants when differentiating.

use std::collections::VecDeque;

use crate::classifier::{adam_step, softmax_t, AdamState, Classifier, Objective};
use crate::error::{Error, Result};

/// `x ln x` with `0 ln 0 = 0`.
#[inline]
fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Shannon entropy (nats).
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&v| xlogx(v)).sum::<f64>()
}

/// Mean entropy of a set of probability vectors.
pub fn cem_from_probs(probs: &[Vec<f64>]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    probs.iter().map(|p| entropy(p)).sum::<f64>() / probs.len() as f64
}

/// Recalibration of a mean prediction: returns `(q, q̂)`.
pub fn recalibrate(p_bar: &[f64], counts: &[usize], c: f64) -> (Vec<f64>, Vec<f64>) {
    let q: Vec<f64> = p_bar
        .iter()
        .zip(counts)
        .map(|(&p, &z)| p / (c + z as f64))
        .collect();
    let total: f64 = q.iter().sum();
    let q_hat = q.iter().map(|v| v / total).collect();
    (q, q_hat)
}

/// Diversity loss from a window-mean prediction and class counts.
pub fn mdr_from_mean(p_bar: &[f64], counts: &[usize], c: f64) -> f64 {
    let (_, q_hat) = recalibrate(p_bar, counts, c);
    q_hat.iter().map(|&v| xlogx(v)).sum()
}

/// Confident pseudo-label counts. A trial counts for the lowest class index
/// whose probability reaches `tau`, so each trial counts at most once.
pub fn class_frequency_from_probs(probs: &[Vec<f64>], tau: f64) -> Result<Vec<usize>> {
    check_tau(tau)?;
    let k = probs.first().map_or(0, Vec::len);
    let mut z = vec![0; k];
    for p in probs {
        if let Some(cls) = p.iter().position(|&v| v >= tau) {
            z[cls] += 1;
        }
    }
    Ok(z)
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.5..1.0).contains(&tau) {
        return Err(Error::Config(format!("tau must lie in [0.5, 1), got {tau}")));
    }
    Ok(())
}

/// Entropy loss and its gradient with respect to the (unscaled) logits.
pub fn cem_value_grad(logits: &[Vec<f64>], temperature: f64) -> (f64, Vec<Vec<f64>>) {
    let b = logits.len().max(1) as f64;
    let mut total = 0.0;
    let grads = logits
        .iter()
        .map(|l| {
            let p = softmax_t(l, temperature);
            let h = entropy(&p);
            total += h;
            // ∂H/∂u_j = −p_j (ln p_j + H), u = l/T
            p.iter()
                .map(|&pj| {
                    if pj > 0.0 {
                        -pj * (pj.ln() + h) / (b * temperature)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    (total / b, grads)
}

/// Intermediate quantities of the diversity loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MdrParts {
    pub p_bar: Vec<f64>,
    pub q: Vec<f64>,
    pub q_hat: Vec<f64>,
}

/// Recalibrated diversity loss and its logit gradient, with `counts`
/// held constant.
pub fn mdr_value_grad(
    logits: &[Vec<f64>],
    temperature: f64,
    counts: &[usize],
    c: f64,
) -> Result<(f64, Vec<Vec<f64>>, MdrParts)> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("diversity loss over an empty window".into()));
    }
    if !(c > 0.0) {
        return Err(Error::Config(format!("c must be positive, got {c}")));
    }
    let k = logits[0].len();
    if counts.len() != k {
        return Err(Error::Shape(format!("{} counts for {k} classes", counts.len())));
    }
    let b = logits.len() as f64;
    let probs: Vec<Vec<f64>> = logits.iter().map(|l| softmax_t(l, temperature)).collect();
    let mut p_bar = vec![0.0; k];
    for p in &probs {
        for (m, v) in p_bar.iter_mut().zip(p) {
            *m += v / b;
        }
    }
    let (q, q_hat) = recalibrate(&p_bar, counts, c);
    let value: f64 = q_hat.iter().map(|&v| xlogx(v)).sum();
    let s: f64 = q.iter().sum();
    // ∂L/∂p̄_j = (ln q̂_j − L) / (S (c + z_j)); each p̄_j averages B rows.
    let g: Vec<f64> = (0..k)
        .map(|j| {
            let log_q = q_hat[j].max(f64::MIN_POSITIVE).ln();
            (log_q - value) / (s * (c + counts[j] as f64) * b)
        })
        .collect();
    let grads = probs
        .iter()
        .map(|p| {
            let mean: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
            p.iter()
                .zip(&g)
                .map(|(pl, gl)| pl * (gl - mean) / temperature)
                .collect()
        })
        .collect();
    Ok((value, grads, MdrParts { p_bar, q, q_hat }))
}

fn window_logits(model: &Classifier, window: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if window.is_empty() {
        return Err(Error::EmptyInput("empty adaptation window".into()));
    }
    Ok(model.forward_batch(window)?.logits)
}

pub fn cem_loss(model: &Classifier, window: &[Vec<f64>], temperature: f64) -> Result<f64> {
    let logits = window_logits(model, window)?;
    Ok(cem_value_grad(&logits, temperature).0)
}

/// Confident pseudo-label counts of `model` on `window` at temperature 1.
pub fn class_frequency(model: &Classifier, window: &[Vec<f64>], tau: f64) -> Result<Vec<usize>> {
    check_tau(tau)?;
    let probs: Vec<Vec<f64>> = window_logits(model, window)?
        .iter()
        .map(|l| softmax_t(l, 1.0))
        .collect();
    class_frequency_from_probs(&probs, tau)
}

pub fn mdr_loss(
    model: &Classifier,
    window: &[Vec<f64>],
    counts: &[usize],
    c: f64,
    temperature: f64,
) -> Result<f64> {
    let logits = window_logits(model, window)?;
    Ok(mdr_value_grad(&logits, temperature, counts, c)?.0)
}

/// Which parts of the adaptation objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UpdateToggles {
    pub cem: bool,
    pub mdr: bool,
    /// Temperature scaling; off means T = 1 in both losses.
    pub temperature: bool,
    /// Class-frequency recalibration of the diversity term; off forces z = 0.
    pub recalibrate: bool,
}

impl UpdateToggles {
    pub const FULL: UpdateToggles = UpdateToggles {
        cem: true,
        mdr: true,
        temperature: true,
        recalibrate: true,
    };
    pub const OFF: UpdateToggles = UpdateToggles {
        cem: false,
        mdr: false,
        temperature: false,
        recalibrate: true,
    };

    /// True when an update step would change the model.
    pub fn any_loss(&self) -> bool {
        self.cem || self.mdr
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.cem {
            parts.push("cem");
        }
        if self.mdr {
            parts.push(if self.recalibrate { "mdr" } else { "im" });
        }
        if self.temperature {
            parts.push("tr");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

impl Default for UpdateToggles {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtaLossConfig {
    pub temperature: f64,
    pub tau: f64,
    pub c: f64,
    pub toggles: UpdateToggles,
}

impl Default for TtaLossConfig {
    fn default() -> Self {
        Self {
            temperature: 2.0,
            tau: 0.7,
            c: 4.0,
            toggles: UpdateToggles::FULL,
        }
    }
}

impl TtaLossConfig {
    pub fn effective_temperature(&self) -> f64 {
        if self.toggles.temperature {
            self.temperature
        } else {
            1.0
        }
    }
}

/// Statistics of one update step.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub p_bar: Vec<f64>,
    pub z: Vec<usize>,
    pub q: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub cem: f64,
    pub mdr: f64,
    /// Value of the optimized objective before the step.
    pub loss: f64,
}

/// One Adam step on the enabled adaptation losses over `window`.
///
/// On a non-finite loss, gradient, or updated parameter the model and
/// optimizer state are left as they were and a numerical error is returned.
pub fn ttime_update_step(
    model: &mut Classifier,
    adam: &mut AdamState,
    window: &[Vec<f64>],
    cfg: &TtaLossConfig,
) -> Result<BatchStats> {
    check_tau(cfg.tau)?;
    let t = cfg.effective_temperature();
    let logits = window_logits(model, window)?;
    let probs: Vec<Vec<f64>> = logits.iter().map(|l| softmax_t(l, 1.0)).collect();
    let k = model.n_classes();
    let z = if cfg.toggles.recalibrate {
        class_frequency_from_probs(&probs, cfg.tau)?
    } else {
        vec![0; k]
    };
    let (cem, _) = cem_value_grad(&logits, t);
    let (mdr, _, parts) = mdr_value_grad(&logits, t, &z, cfg.c)?;

    let objective = match (cfg.toggles.cem, cfg.toggles.mdr) {
        (true, true) => Some(Objective::CemMdr {
            temperature: t,
            counts: &z,
            c: cfg.c,
        }),
        (true, false) => Some(Objective::Cem { temperature: t }),
        (false, true) => Some(Objective::Mdr {
            temperature: t,
            counts: &z,
            c: cfg.c,
        }),
        (false, false) => None,
    };
    let mut loss = 0.0;
    if let Some(objective) = objective {
        let (value, grads) = model.value_and_grad(window, &objective)?;
        if !value.is_finite() || !grads.is_finite() {
            return Err(Error::Numerical(format!("non-finite adaptation loss {value}")));
        }
        loss = value;
        let saved_params = model.params().clone();
        let saved_adam = adam.clone();
        adam_step(model.params_mut(), adam, &grads)?;
        if !model.params().is_finite() {
            *model.params_mut() = saved_params;
            *adam = saved_adam;
            return Err(Error::Numerical("update produced non-finite parameters".into()));
        }
    }
    Ok(BatchStats {
        p_bar: parts.p_bar,
        z,
        q: parts.q,
        q_hat: parts.q_hat,
        cem,
        mdr,
        loss,
    })
}

/// Fixed-capacity FIFO of the most recent items.
#[derive(Debug, Clone)]
pub struct SlidingWindow<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> SlidingWindow<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}
