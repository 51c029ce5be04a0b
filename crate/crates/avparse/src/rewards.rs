//! Reward signals for the denoising policy: the per-step soft inter-reward
//! (symmetric-KL and cosine agreement between smoothed original labels and the
//! revised labels), the validation-based terminal reward per branch, and their
//! combination with the degenerate-action penalty of -1.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::denoiser::Branch;
use crate::error::{Error, Result};
use crate::metrics::EvaluationReport;

/// Strictly positive distribution over classes (sums to one).
#[derive(Debug, Clone)]
pub struct SoftLabel {
    pub dist: Array1<f64>,
}

impl SoftLabel {
    fn from_positive(mut v: Array1<f64>) -> Self {
        let sum: f64 = v.sum();
        debug_assert!(sum > 0.0);
        v.mapv_inplace(|x| x / sum);
        SoftLabel { dist: v }
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }
}

/// Label smoothing followed by simplex normalization:
/// `v_c = y_c (1-eps) + eps/C`, then divide by the sum. An all-zero label
/// yields the uniform distribution.
pub fn soften_labels(y: &[u8], epsilon: f64) -> SoftLabel {
    let c = y.len() as f64;
    let v = Array1::from_iter(
        y.iter()
            .map(|b| f64::from(*b) * (1.0 - epsilon) + epsilon / c),
    );
    SoftLabel::from_positive(v)
}

/// Additive-floor conversion of a binary vector into a distribution:
/// add `epsilon` to every entry and normalize.
pub fn to_distribution(y: &[u8], epsilon: f64) -> SoftLabel {
    let v = Array1::from_iter(y.iter().map(|b| f64::from(*b) + epsilon));
    SoftLabel::from_positive(v)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InterReward {
    pub r1: f64,
    pub r2: f64,
    pub r_inter: f64,
}

/// Per-step agreement reward between the smoothed original labels and the
/// revised-label distribution:
/// `r1 = exp(-(KL(p||q)+KL(q||p))/2)`, `r2 = cosine(p, q)`,
/// `r_inter = alpha1*r1 + alpha2*r2`.
pub fn inter_reward(l_soft: &SoftLabel, l_t: &SoftLabel, alpha1: f64, alpha2: f64) -> InterReward {
    debug_assert_eq!(l_soft.len(), l_t.len());
    let p = &l_soft.dist;
    let q = &l_t.dist;
    let mut sym_kl = 0.0;
    let mut dot = 0.0;
    let mut np = 0.0;
    let mut nq = 0.0;
    for (a, b) in p.iter().zip(q.iter()) {
        sym_kl += (a - b) * (a / b).ln();
        dot += a * b;
        np += a * a;
        nq += b * b;
    }
    let r1 = (-sym_kl / 2.0).exp();
    let r2 = dot / (np.sqrt() * nq.sqrt());
    InterReward {
        r1,
        r2,
        r_inter: alpha1 * r1 + alpha2 * r2,
    }
}

/// Validation feedback per denoising branch: the audio branch reads the
/// segment-level audio F-score, the visual branch the event-level visual
/// F-score, both expressed as fractions in [0,1] and multiplied by `scale`
/// (0.1 by default).
pub fn terminal_reward(report: &EvaluationReport, branch: Branch, scale: f64) -> Result<f64> {
    let f = match branch {
        Branch::Audio => report.segment.audio,
        Branch::Visual => report.event.visual,
    };
    if !f.is_finite() {
        return Err(Error::MissingMetric(format!(
            "{} branch validation F-score is not finite",
            match branch {
                Branch::Audio => "audio",
                Branch::Visual => "visual",
            }
        )));
    }
    Ok(scale * f)
}

pub const DEGENERATE_REWARD: f64 = -1.0;

/// Final per-step reward: the degenerate penalty wins outright, otherwise the
/// terminal and inter rewards add.
pub fn combine_reward(r_terminal: f64, r_inter: f64, degenerate: bool) -> f64 {
    if degenerate {
        DEGENERATE_REWARD
    } else {
        r_terminal + r_inter
    }
}

/// One step's reward record for a branch.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardBundle {
    pub r1: f64,
    pub r2: f64,
    pub r_inter: f64,
    pub r_terminal: f64,
    pub total: f64,
    pub degenerate: bool,
}

impl RewardBundle {
    pub fn new(inter: InterReward, r_terminal: f64, degenerate: bool) -> Self {
        RewardBundle {
            r1: inter.r1,
            r2: inter.r2,
            r_inter: inter.r_inter,
            r_terminal,
            total: combine_reward(r_terminal, inter.r_inter, degenerate),
            degenerate,
        }
    }
}
