//! Cross-domain distillation losses: logit KL divergence and feature L1,
//! with analytic gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to at least this before taking logs.
pub const PROB_EPS: f64 = 1e-12;

/// Strictly positive probability vector summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Clamps at [`PROB_EPS`] and renormalises. Rejects empty, negative or
    /// non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("probability vector", "empty"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("probability vector", "entries must be finite and >= 0"));
        }
        let clamped: Vec<f64> = values.into_iter().map(|v| v.max(PROB_EPS)).collect();
        let sum: f64 = clamped.iter().sum();
        Ok(Self(clamped.into_iter().map(|v| v / sum).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Shift-invariant softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<ProbVector> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::domain(format!("temperature must be > 0, got {temperature}")));
    }
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("logits", "must be non-empty and finite"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    ProbVector::new(exps.into_iter().map(|e| e / sum).collect())
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { expected: a, got: b });
    }
    Ok(())
}

/// `Σ y_t · log(y_t / y_s)`.
///
/// Each term is evaluated as `y_s · φ(y_t / y_s)` with
/// `φ(u) = u·ln u − u + 1 ≥ 0`; the added `y_s − y_t` terms cancel because
/// both vectors sum to one. This keeps the result non-negative under
/// rounding and exactly zero for identical inputs.
pub fn kl_logit_loss(y_s: &ProbVector, y_t: &ProbVector) -> Result<f64> {
    same_len(y_t.len(), y_s.len())?;
    let mut sum = 0.0;
    for (&s, &t) in y_s.values().iter().zip(y_t.values()) {
        let d = t / s - 1.0;
        sum += s * ((1.0 + d) * d.ln_1p() - d);
    }
    Ok(sum)
}

/// Gradient of `kl_logit_loss(softmax(z), y_t)` with respect to `z` at
/// unit temperature: `softmax(z) − y_t`.
pub fn kl_grad_wrt_student_logits(student_logits: &[f64], y_t: &ProbVector) -> Result<Vec<f64>> {
    same_len(y_t.len(), student_logits.len())?;
    let y_s = softmax(student_logits, 1.0)?;
    Ok(y_s.values().iter().zip(y_t.values()).map(|(s, t)| s - t).collect())
}

fn check_features(z_s: &[f64], z_t: &[f64]) -> Result<()> {
    same_len(z_t.len(), z_s.len())?;
    if z_s.is_empty() {
        return Err(Error::invalid("feature vector", "dimension must be at least 1"));
    }
    if z_s.iter().chain(z_t).any(|v| !v.is_finite()) {
        return Err(Error::invalid("feature vector", "non-finite entry"));
    }
    Ok(())
}

/// Mean absolute difference `(1/C) Σ |z_s − z_t|`.
pub fn feature_l1_loss(z_s: &[f64], z_t: &[f64]) -> Result<f64> {
    check_features(z_s, z_t)?;
    let sum: f64 = z_s.iter().zip(z_t).map(|(s, t)| (s - t).abs()).sum();
    Ok(sum / z_s.len() as f64)
}

/// `(1/C) · sign(z_s − z_t)` with `sign(0) = 0`.
pub fn feature_l1_subgradient(z_s: &[f64], z_t: &[f64]) -> Result<Vec<f64>> {
    check_features(z_s, z_t)?;
    let c = z_s.len() as f64;
    Ok(z_s
        .iter()
        .zip(z_t)
        .map(|(s, t)| {
            let d = s - t;
            if d > 0.0 {
                1.0 / c
            } else if d < 0.0 {
                -1.0 / c
            } else {
                0.0
            }
        })
        .collect())
}

/// Weights of the supervised, logit and feature terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub supervised: f64,
    pub logit: f64,
    pub feature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            supervised: 1.0,
            logit: 1.0,
            feature: 1.0,
        }
    }
}

pub fn combined_loss(ce: f64, l_l: f64, l_f: f64, w: &LossWeights) -> f64 {
    w.supervised * ce + w.logit * l_l + w.feature * l_f
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn central_difference<F>(x: &[f64], h: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`; zero when both vectors are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Outcome of [`run_gradient_checks`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheckReport {
    pub instances: usize,
    pub step: f64,
    pub tolerance: f64,
    pub kl_max_rel_error: f64,
    pub kl_failures: usize,
    pub l1_max_rel_error: f64,
    pub l1_failures: usize,
    pub kl_pairs: usize,
    pub kl_negative: usize,
}

impl GradientCheckReport {
    pub fn passed(&self) -> bool {
        self.kl_failures == 0 && self.l1_failures == 0 && self.kl_negative == 0
    }
}

/// Finite-difference step used by the gradient checks.
pub const FD_STEP: f64 = 1e-5;
/// Relative-error budget for the gradient checks.
pub const FD_TOLERANCE: f64 = 1e-6;

/// Random KL instance whose gradient norm is at least `1e-2`.
pub fn random_kl_instance<R: Rng>(rng: &mut R) -> (Vec<f64>, ProbVector) {
    loop {
        let k = rng.random_range(2..=10);
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let t: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y_t = softmax(&t, 1.0).expect("finite logits");
        let g = kl_grad_wrt_student_logits(&z, &y_t).expect("matching lengths");
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() >= 1e-2 {
            return (z, y_t);
        }
    }
}

/// Random L1 instance with every coordinate difference at least `10·FD_STEP`
/// away from the kink.
pub fn random_l1_instance<R: Rng>(rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let c = rng.random_range(1..=64);
    let z_t: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
    let z_s = z_t
        .iter()
        .map(|&t| loop {
            let s = rng.random_range(-2.0..2.0);
            if (s - t).abs() > 10.0 * FD_STEP {
                break s;
            }
        })
        .collect();
    (z_s, z_t)
}

/// Compares analytic gradients with central differences on `instances`
/// random cases per loss and checks KL non-negativity on `kl_pairs` random
/// distribution pairs.
pub fn run_gradient_checks(seed: u64, instances: usize, kl_pairs: usize) -> Result<GradientCheckReport> {
    let mut rng = crate::rng::stream_rng(seed, 0);
    let mut report = GradientCheckReport {
        instances,
        step: FD_STEP,
        tolerance: FD_TOLERANCE,
        kl_max_rel_error: 0.0,
        kl_failures: 0,
        l1_max_rel_error: 0.0,
        l1_failures: 0,
        kl_pairs,
        kl_negative: 0,
    };
    for _ in 0..instances {
        let (z, y_t) = random_kl_instance(&mut rng);
        let analytic = kl_grad_wrt_student_logits(&z, &y_t)?;
        let numeric = central_difference(&z, FD_STEP, |x| kl_logit_loss(&softmax(x, 1.0)?, &y_t))?;
        let e = relative_error(&analytic, &numeric);
        report.kl_max_rel_error = report.kl_max_rel_error.max(e);
        report.kl_failures += (e > FD_TOLERANCE) as usize;

        let (z_s, z_t) = random_l1_instance(&mut rng);
        let analytic = feature_l1_subgradient(&z_s, &z_t)?;
        let numeric = central_difference(&z_s, FD_STEP, |x| feature_l1_loss(x, &z_t))?;
        let e = relative_error(&analytic, &numeric);
        report.l1_max_rel_error = report.l1_max_rel_error.max(e);
        report.l1_failures += (e > FD_TOLERANCE) as usize;
    }
    for i in 0..kl_pairs {
        let k = rng.random_range(2..=16);
        // every third pair is a near-copy to probe the zero boundary
        let base: Vec<f64> = (0..k).map(|_| rng.random_range(-6.0..6.0)).collect();
        let other: Vec<f64> = if i % 3 == 0 {
            base.iter().map(|v| v + rng.random_range(-1e-9..1e-9)).collect()
        } else {
            (0..k).map(|_| rng.random_range(-6.0..6.0)).collect()
        };
        let l = kl_logit_loss(&softmax(&base, 1.0)?, &softmax(&other, 1.0)?)?;
        report.kl_negative += (l < 0.0) as usize;
    }
    Ok(report)
}
