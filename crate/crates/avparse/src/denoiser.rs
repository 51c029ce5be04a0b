//! Label-denoising policy network.
//!
//! States concatenate per-segment features with the video-level noisy label of
//! the same modality, tiled across segments. A hybrid attention block followed
//! by temporal mean-pooling and a per-modality linear head yields per-class
//! keep probabilities; sampled Bernoulli actions multiply into the labels
//! (action 1 keeps a label, 0 removes it).

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{self, HybridAttnParams, HybridCache};
use crate::data::VideoSample;
use crate::error::{Error, Result};
use crate::util::{self, PROB_EPS};

/// Per-modality RL state: features with the tiled noisy label block appended.
#[derive(Debug, Clone)]
pub struct DenoiserState {
    pub audio: Array2<f64>,
    pub visual: Array2<f64>,
}

/// Per-class keep probabilities, clamped inside (0,1).
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub audio: Array1<f64>,
    pub visual: Array1<f64>,
}

/// Sampled binary keep/remove decisions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMask {
    pub audio: Vec<u8>,
    pub visual: Vec<u8>,
}

impl ActionMask {
    pub fn all_ones(classes: usize) -> Self {
        ActionMask {
            audio: vec![1; classes],
            visual: vec![1; classes],
        }
    }

    pub fn all_zeros(classes: usize) -> Self {
        ActionMask {
            audio: vec![0; classes],
            visual: vec![0; classes],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub d_audio: usize,
    pub d_visual: usize,
    pub classes: usize,
    /// Learned q/k/v projections inside the attention block; identity when false.
    pub learned_projections: bool,
    /// Reuse one output head for both modalities (requires equal state dims).
    pub shared_head: bool,
    /// Zero the label block of the state (the "no initialized labels" ablation).
    pub include_labels: bool,
}

impl DenoiserConfig {
    pub fn new(d_audio: usize, d_visual: usize, classes: usize) -> Self {
        DenoiserConfig {
            d_audio,
            d_visual,
            classes,
            learned_projections: false,
            shared_head: false,
            include_labels: true,
        }
    }

    pub fn state_dim_audio(&self) -> usize {
        self.d_audio + self.classes
    }

    pub fn state_dim_visual(&self) -> usize {
        self.d_visual + self.classes
    }
}

#[derive(Debug, Clone)]
pub struct LinearHead {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearHead {
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        LinearHead {
            weight: util::uniform_init(out_dim, in_dim, in_dim, rng),
            bias: Array1::from_shape_fn(out_dim, |_| {
                let bound = 1.0 / (in_dim as f64).sqrt();
                rng.random_range(-bound..bound)
            }),
        }
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        LinearHead {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weight.dot(x) + &self.bias
    }

    pub fn flat_len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn push_flat(&self, out: &mut Vec<f64>) {
        out.extend(self.weight.iter());
        out.extend(self.bias.iter());
    }

    pub fn read_flat(&mut self, src: &[f64], pos: &mut usize) {
        for v in self.weight.iter_mut() {
            *v = src[*pos];
            *pos += 1;
        }
        for v in self.bias.iter_mut() {
            *v = src[*pos];
            *pos += 1;
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenoiserParams {
    pub cfg: DenoiserConfig,
    pub attn: HybridAttnParams,
    pub head_audio: LinearHead,
    /// Unused (aliased to `head_audio`) when `cfg.shared_head` is set.
    pub head_visual: LinearHead,
}

impl DenoiserParams {
    pub fn init(cfg: DenoiserConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (da, dv) = (cfg.state_dim_audio(), cfg.state_dim_visual());
        if cfg.shared_head && da != dv {
            return Err(Error::Config(format!(
                "a shared policy head needs equal state dims, got {da} and {dv}"
            )));
        }
        let attn = if cfg.learned_projections {
            HybridAttnParams::learned(da, dv, rng)
        } else {
            HybridAttnParams::identity()
        };
        attn.validate_dims(da, dv)?;
        let head_audio = LinearHead::init(cfg.classes, da, rng);
        let head_visual = if cfg.shared_head {
            head_audio.clone()
        } else {
            LinearHead::init(cfg.classes, dv, rng)
        };
        Ok(DenoiserParams {
            cfg,
            attn,
            head_audio,
            head_visual,
        })
    }

    pub fn flat_len(&self) -> usize {
        let heads = if self.cfg.shared_head {
            self.head_audio.flat_len()
        } else {
            self.head_audio.flat_len() + self.head_visual.flat_len()
        };
        self.attn.flat_len() + heads
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        attention::push_params_flat(&mut out, &self.attn);
        self.head_audio.push_flat(&mut out);
        if !self.cfg.shared_head {
            self.head_visual.push_flat(&mut out);
        }
        out
    }

    pub fn set_from_flat(&mut self, src: &[f64]) {
        debug_assert_eq!(src.len(), self.flat_len());
        let mut pos = 0;
        attention::read_params_flat(&mut self.attn, src, &mut pos);
        self.head_audio.read_flat(src, &mut pos);
        if self.cfg.shared_head {
            self.head_visual = self.head_audio.clone();
        } else {
            self.head_visual.read_flat(src, &mut pos);
        }
        debug_assert_eq!(pos, src.len());
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// Forward pass over one sample's states.
    pub fn forward(&self, state: &DenoiserState) -> Result<(PolicyOutput, PolicyCache)> {
        let (h_audio, h_visual, attn_cache) =
            attention::hybrid_forward(&state.audio, &state.visual, &self.attn)?;
        let pooled_audio = attention::mean_pool_rows(&h_audio);
        let pooled_visual = attention::mean_pool_rows(&h_visual);
        let z_audio = self.head_audio.forward(&pooled_audio);
        let z_visual = self.head_visual.forward(&pooled_visual);
        let p_audio = z_audio.mapv(|z| util::clamp_prob(util::sigmoid(z), PROB_EPS));
        let p_visual = z_visual.mapv(|z| util::clamp_prob(util::sigmoid(z), PROB_EPS));
        let output = PolicyOutput {
            audio: p_audio,
            visual: p_visual,
        };
        let cache = PolicyCache {
            segments: state.audio.nrows(),
            attn_cache,
            pooled_audio,
            pooled_visual,
            z_audio,
            z_visual,
        };
        Ok((output, cache))
    }

    /// Score-function gradients of one branch's action log-probability with
    /// respect to the flattened parameters.
    pub fn branch_log_prob_grad(
        &self,
        cache: &PolicyCache,
        mask: &[u8],
        branch: Branch,
    ) -> Vec<f64> {
        let (z, pooled, t) = match branch {
            Branch::Audio => (&cache.z_audio, &cache.pooled_audio, cache.segments),
            Branch::Visual => (&cache.z_visual, &cache.pooled_visual, cache.segments),
        };
        // d log pi / d z_c = a_c - sigma(z_c); zero where the clamp is active.
        let dz = Array1::from_shape_fn(z.len(), |c| {
            let p = util::sigmoid(z[c]);
            if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
                0.0
            } else {
                f64::from(mask[c]) - p
            }
        });
        let head = match branch {
            Branch::Audio => &self.head_audio,
            Branch::Visual => &self.head_visual,
        };
        let d_weight = outer(&dz, pooled);
        let d_bias = dz.clone();
        let d_pooled = head.weight.t().dot(&dz);

        // Attention projections only carry gradient when learned.
        let attn_grads = if self.attn.is_identity() {
            attention::HybridAttnGrads::default()
        } else {
            let row = &d_pooled / t as f64;
            let zeros_a = Array2::zeros((t, self.cfg.state_dim_audio()));
            let zeros_v = Array2::zeros((t, self.cfg.state_dim_visual()));
            let (g_audio, g_visual) = match branch {
                Branch::Audio => (tile_row(&row, t), zeros_v),
                Branch::Visual => (zeros_a, tile_row(&row, t)),
            };
            attention::hybrid_backward(&g_audio, &g_visual, &self.attn, &cache.attn_cache)
        };

        let mut flat = Vec::with_capacity(self.flat_len());
        attention::push_grads_flat(&mut flat, &self.attn, &attn_grads);
        let zero_head_a = || vec![0.0; self.head_audio.flat_len()];
        let zero_head_v = || vec![0.0; self.head_visual.flat_len()];
        match (branch, self.cfg.shared_head) {
            (Branch::Audio, _) => {
                flat.extend(d_weight.iter());
                flat.extend(d_bias.iter());
                if !self.cfg.shared_head {
                    flat.extend(zero_head_v());
                }
            }
            (Branch::Visual, true) => {
                flat.extend(d_weight.iter());
                flat.extend(d_bias.iter());
            }
            (Branch::Visual, false) => {
                flat.extend(zero_head_a());
                flat.extend(d_weight.iter());
                flat.extend(d_bias.iter());
            }
        }
        debug_assert_eq!(flat.len(), self.flat_len());
        flat
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((a.len(), b.len()));
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[[i, j]] = a[i] * b[j];
        }
    }
    out
}

fn tile_row(row: &Array1<f64>, t: usize) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((t, row.len()));
    for mut r in out.rows_mut() {
        r.assign(row);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Audio,
    Visual,
}

/// Forward intermediates needed for the score-function gradient.
#[derive(Debug, Clone)]
pub struct PolicyCache {
    segments: usize,
    attn_cache: HybridCache,
    pooled_audio: Array1<f64>,
    pooled_visual: Array1<f64>,
    pub z_audio: Array1<f64>,
    pub z_visual: Array1<f64>,
}

/// Per-segment state rows: `concat(features[t], noisy_label)`.
pub fn build_states(sample: &VideoSample) -> Result<DenoiserState> {
    build_states_with(sample, true)
}

/// State construction with the label block optionally zeroed (ablation).
pub fn build_states_with(sample: &VideoSample, include_labels: bool) -> Result<DenoiserState> {
    let audio = concat_label_block(
        &sample.audio.values,
        &sample.noisy_audio_label,
        include_labels,
    )?;
    let visual = concat_label_block(
        &sample.visual.values,
        &sample.noisy_visual_label,
        include_labels,
    )?;
    Ok(DenoiserState { audio, visual })
}

fn concat_label_block(
    features: &Array2<f64>,
    label: &[u8],
    include_labels: bool,
) -> Result<Array2<f64>> {
    let (t, d) = (features.nrows(), features.ncols());
    if t == 0 || label.is_empty() {
        return Err(Error::Shape(
            "states need at least one segment and one class".into(),
        ));
    }
    let mut out = Array2::<f64>::zeros((t, d + label.len()));
    for row in 0..t {
        for j in 0..d {
            out[[row, j]] = features[[row, j]];
        }
        if include_labels {
            for (c, v) in label.iter().enumerate() {
                out[[row, d + c]] = f64::from(*v);
            }
        }
    }
    Ok(out)
}

/// Independent Bernoulli draw per class per modality.
pub fn sample_actions(p: &PolicyOutput, rng: &mut ChaCha8Rng) -> ActionMask {
    ActionMask {
        audio: p.audio.iter().map(|q| u8::from(rng.random::<f64>() < *q)).collect(),
        visual: p
            .visual
            .iter()
            .map(|q| u8::from(rng.random::<f64>() < *q))
            .collect(),
    }
}

/// Greedy decisions: keep a class when its keep probability is at least 1/2.
pub fn greedy_actions(p: &PolicyOutput) -> ActionMask {
    ActionMask {
        audio: p.audio.iter().map(|q| u8::from(*q >= 0.5)).collect(),
        visual: p.visual.iter().map(|q| u8::from(*q >= 0.5)).collect(),
    }
}

/// Elementwise mask product per modality. If the revised union would be empty,
/// the originals are restored and the degenerate flag is raised.
pub fn revise_labels(
    noisy_audio: &[u8],
    noisy_visual: &[u8],
    mask: &ActionMask,
) -> (Vec<u8>, Vec<u8>, bool) {
    let revised_a: Vec<u8> = noisy_audio
        .iter()
        .zip(&mask.audio)
        .map(|(y, a)| y * a)
        .collect();
    let revised_v: Vec<u8> = noisy_visual
        .iter()
        .zip(&mask.visual)
        .map(|(y, a)| y * a)
        .collect();
    let union_empty = revised_a
        .iter()
        .zip(&revised_v)
        .all(|(a, v)| *a == 0 && *v == 0);
    if union_empty {
        (noisy_audio.to_vec(), noisy_visual.to_vec(), true)
    } else {
        (revised_a, revised_v, false)
    }
}

/// Joint Bernoulli log-probability of a sampled mask under clamped
/// probabilities, summed over both modalities.
pub fn action_log_prob(p: &PolicyOutput, mask: &ActionMask) -> f64 {
    branch_log_prob(&p.audio, &mask.audio) + branch_log_prob(&p.visual, &mask.visual)
}

pub fn branch_log_prob(p: &Array1<f64>, mask: &[u8]) -> f64 {
    p.iter()
        .zip(mask)
        .map(|(q, a)| {
            if *a == 1 {
                q.ln()
            } else {
                (1.0 - q).ln()
            }
        })
        .sum()
}
