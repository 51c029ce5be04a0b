//! Weakly-supervised audio-visual parsing network.
//!
//! Raw features (no label block) pass through the hybrid attention block;
//! a shared sigmoid head scores every (segment, modality, class) cell, and
//! attentive multimodal-instance pooling — a temporal softmax per
//! (modality, class) combined with a modality softmax per (segment, class),
//! renormalized so the joint weights form a convex combination — yields the
//! video-level event probabilities. Losses are two-sided binary cross-entropy
//! against the denoised labels and their union.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{self, HybridAttnParams, HybridCache};
use crate::data::{self, VideoSample};
use crate::denoiser::LinearHead;
use crate::error::{Error, Result};
use crate::util::{self, PROB_EPS};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskConfig {
    /// Feature dimension, required to match across modalities since the
    /// classification head is shared.
    pub feature_dim: usize,
    pub classes: usize,
    pub learned_projections: bool,
    /// Keep only the positive term of the video-level cross-entropy.
    pub positive_only_video_loss: bool,
}

impl TaskConfig {
    pub fn new(feature_dim: usize, classes: usize) -> Self {
        TaskConfig {
            feature_dim,
            classes,
            learned_projections: false,
            positive_only_video_loss: false,
        }
    }
}

/// Per-snippet probabilities and both attention maps (all T x C, audio and
/// visual variants). Temporal attention sums to 1 over segments per
/// (modality, class); modality attention sums to 1 across the two modalities
/// per (segment, class).
#[derive(Debug, Clone)]
pub struct SnippetPredictions {
    pub prob_audio: Array2<f64>,
    pub prob_visual: Array2<f64>,
    pub temporal_audio: Array2<f64>,
    pub temporal_visual: Array2<f64>,
    pub modality_audio: Array2<f64>,
    pub modality_visual: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct VideoPrediction {
    pub prob: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct TaskParams {
    pub cfg: TaskConfig,
    pub attn: HybridAttnParams,
    pub cls: LinearHead,
    pub temporal: LinearHead,
    pub modality: LinearHead,
}

/// Forward intermediates kept for the analytic backward pass.
#[derive(Debug, Clone)]
pub struct TaskCache {
    f_audio: Array2<f64>,
    f_visual: Array2<f64>,
    attn_cache: HybridCache,
    sig_audio: Array2<f64>,
    sig_visual: Array2<f64>,
    prob_audio: Array2<f64>,
    prob_visual: Array2<f64>,
    temporal_audio: Array2<f64>,
    temporal_visual: Array2<f64>,
    modality_audio: Array2<f64>,
    modality_visual: Array2<f64>,
    joint_norm: Array1<f64>,
    video: Array1<f64>,
    pooled_audio: Array1<f64>,
    pooled_visual: Array1<f64>,
}

impl TaskParams {
    pub fn init(cfg: TaskConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.classes == 0 || cfg.feature_dim == 0 {
            return Err(Error::Config(
                "task network needs at least one class and one feature dim".into(),
            ));
        }
        let d = cfg.feature_dim;
        let attn = if cfg.learned_projections {
            HybridAttnParams::learned(d, d, rng)
        } else {
            HybridAttnParams::identity()
        };
        Ok(TaskParams {
            cls: LinearHead::init(cfg.classes, d, rng),
            temporal: LinearHead::init(cfg.classes, d, rng),
            modality: LinearHead::init(cfg.classes, d, rng),
            attn,
            cfg,
        })
    }

    pub fn flat_len(&self) -> usize {
        self.attn.flat_len()
            + self.cls.flat_len()
            + self.temporal.flat_len()
            + self.modality.flat_len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        attention::push_params_flat(&mut out, &self.attn);
        self.cls.push_flat(&mut out);
        self.temporal.push_flat(&mut out);
        self.modality.push_flat(&mut out);
        out
    }

    pub fn set_from_flat(&mut self, src: &[f64]) {
        debug_assert_eq!(src.len(), self.flat_len());
        let mut pos = 0;
        attention::read_params_flat(&mut self.attn, src, &mut pos);
        self.cls.read_flat(src, &mut pos);
        self.temporal.read_flat(src, &mut pos);
        self.modality.read_flat(src, &mut pos);
        debug_assert_eq!(pos, src.len());
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    pub fn forward_sample(
        &self,
        sample: &VideoSample,
    ) -> Result<(SnippetPredictions, VideoPrediction, TaskCache)> {
        self.forward(&sample.audio.values, &sample.visual.values)
    }

    /// Full forward pass over one video's feature matrices.
    pub fn forward(
        &self,
        audio: &Array2<f64>,
        visual: &Array2<f64>,
    ) -> Result<(SnippetPredictions, VideoPrediction, TaskCache)> {
        if audio.ncols() != self.cfg.feature_dim || visual.ncols() != self.cfg.feature_dim {
            return Err(Error::Shape(format!(
                "task network expects {}-dim features on both modalities, got {} and {}",
                self.cfg.feature_dim,
                audio.ncols(),
                visual.ncols()
            )));
        }
        let (f_audio, f_visual, attn_cache) = attention::hybrid_forward(audio, visual, &self.attn)?;
        let t = f_audio.nrows();
        let c = self.cfg.classes;

        let logits = |head: &LinearHead, f: &Array2<f64>| -> Array2<f64> {
            let mut z = f.dot(&head.weight.t());
            for mut row in z.rows_mut() {
                row += &head.bias;
            }
            z
        };

        let sig_audio = logits(&self.cls, &f_audio).mapv(util::sigmoid);
        let sig_visual = logits(&self.cls, &f_visual).mapv(util::sigmoid);
        let prob_audio = sig_audio.mapv(|p| util::clamp_prob(p, PROB_EPS));
        let prob_visual = sig_visual.mapv(|p| util::clamp_prob(p, PROB_EPS));

        // Temporal softmax per (modality, class), over segments.
        let softmax_cols = |z: Array2<f64>| -> Array2<f64> {
            let mut out = z;
            for col in 0..out.ncols() {
                let mut column: Vec<f64> = out.column(col).to_vec();
                util::softmax_inplace(&mut column);
                for (row, v) in column.into_iter().enumerate() {
                    out[[row, col]] = v;
                }
            }
            out
        };
        let temporal_audio = softmax_cols(logits(&self.temporal, &f_audio));
        let temporal_visual = softmax_cols(logits(&self.temporal, &f_visual));

        // Modality softmax per (segment, class), across the two tracks.
        let zm_audio = logits(&self.modality, &f_audio);
        let zm_visual = logits(&self.modality, &f_visual);
        let mut modality_audio = Array2::<f64>::zeros((t, c));
        let mut modality_visual = Array2::<f64>::zeros((t, c));
        for i in 0..t {
            for j in 0..c {
                let za = zm_audio[[i, j]];
                let zv = zm_visual[[i, j]];
                let m = za.max(zv);
                let ea = (za - m).exp();
                let ev = (zv - m).exp();
                modality_audio[[i, j]] = ea / (ea + ev);
                modality_visual[[i, j]] = ev / (ea + ev);
            }
        }

        // Joint pooling weights renormalized per class so the video-level
        // probability is a convex combination of the snippet probabilities.
        let mut video = Array1::<f64>::zeros(c);
        let mut joint_norm = Array1::<f64>::zeros(c);
        for j in 0..c {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..t {
                let wa = temporal_audio[[i, j]] * modality_audio[[i, j]];
                let wv = temporal_visual[[i, j]] * modality_visual[[i, j]];
                num += wa * prob_audio[[i, j]] + wv * prob_visual[[i, j]];
                den += wa + wv;
            }
            joint_norm[j] = den;
            video[j] = num / den;
        }

        // Per-modality video-level probabilities: temporal attention only.
        let mut pooled_audio = Array1::<f64>::zeros(c);
        let mut pooled_visual = Array1::<f64>::zeros(c);
        for j in 0..c {
            for i in 0..t {
                pooled_audio[j] += temporal_audio[[i, j]] * prob_audio[[i, j]];
                pooled_visual[j] += temporal_visual[[i, j]] * prob_visual[[i, j]];
            }
        }

        let snippets = SnippetPredictions {
            prob_audio: prob_audio.clone(),
            prob_visual: prob_visual.clone(),
            temporal_audio: temporal_audio.clone(),
            temporal_visual: temporal_visual.clone(),
            modality_audio: modality_audio.clone(),
            modality_visual: modality_visual.clone(),
        };
        let prediction = VideoPrediction {
            prob: video.clone(),
        };
        let cache = TaskCache {
            f_audio,
            f_visual,
            attn_cache,
            sig_audio,
            sig_visual,
            prob_audio,
            prob_visual,
            temporal_audio,
            temporal_visual,
            modality_audio,
            modality_visual,
            joint_norm,
            video,
            pooled_audio,
            pooled_visual,
        };
        Ok((snippets, prediction, cache))
    }

    /// Losses and the analytic gradient over the flattened parameters.
    /// `include_video` toggles the video-level term (the union loss).
    pub fn loss_and_grad(
        &self,
        cache: &TaskCache,
        union: &[u8],
        y_audio: &[u8],
        y_visual: &[u8],
        include_video: bool,
    ) -> (f64, f64, Vec<f64>) {
        let c = self.cfg.classes;
        let mut loss_video = 0.0;
        let mut d_video = Array1::<f64>::zeros(c);
        if include_video {
            for j in 0..c {
                let p = cache.video[j];
                let y = f64::from(union[j]);
                if self.cfg.positive_only_video_loss {
                    loss_video += -y * p.ln();
                    d_video[j] = -y / p;
                } else {
                    loss_video += util::bce(y, p);
                    d_video[j] = -y / p + (1.0 - y) / (1.0 - p);
                }
            }
        }

        let mut loss_av = 0.0;
        let mut d_pa = Array1::<f64>::zeros(c);
        let mut d_pv = Array1::<f64>::zeros(c);
        for j in 0..c {
            let (pa, pv) = (cache.pooled_audio[j], cache.pooled_visual[j]);
            let (ya, yv) = (f64::from(y_audio[j]), f64::from(y_visual[j]));
            loss_av += util::bce(ya, pa) + util::bce(yv, pv);
            d_pa[j] = -ya / pa + (1.0 - ya) / (1.0 - pa);
            d_pv[j] = -yv / pv + (1.0 - yv) / (1.0 - pv);
        }

        let grad = self.backward(cache, &d_video, &d_pa, &d_pv);
        (loss_video, loss_av, grad)
    }

    /// Gradient of a linear probe of the pooled outputs:
    /// `sum_c dv[c]*video[c] + dpa[c]*pooled_audio[c] + dpv[c]*pooled_visual[c]`.
    /// Used by the finite-difference checks of the pooling itself.
    pub fn pooling_probe(
        &self,
        cache: &TaskCache,
        dv: &Array1<f64>,
        dpa: &Array1<f64>,
        dpv: &Array1<f64>,
    ) -> (f64, Vec<f64>) {
        let value = cache.video.dot(dv) + cache.pooled_audio.dot(dpa) + cache.pooled_visual.dot(dpv);
        (value, self.backward(cache, dv, dpa, dpv))
    }

    /// Backpropagate upstream gradients on (video, pooled_audio, pooled_visual)
    /// into the flattened parameter vector.
    fn backward(
        &self,
        cache: &TaskCache,
        d_video: &Array1<f64>,
        d_pa: &Array1<f64>,
        d_pv: &Array1<f64>,
    ) -> Vec<f64> {
        let t = cache.f_audio.nrows();
        let c = self.cfg.classes;

        let mut d_prob_a = Array2::<f64>::zeros((t, c));
        let mut d_prob_v = Array2::<f64>::zeros((t, c));
        let mut d_fa_a = Array2::<f64>::zeros((t, c));
        let mut d_fa_v = Array2::<f64>::zeros((t, c));
        let mut d_av_a = Array2::<f64>::zeros((t, c));
        let mut d_av_v = Array2::<f64>::zeros((t, c));

        // Joint pooling: video[j] = N_j / Z_j with N = sum w*p, Z = sum w,
        // w = temporal*modality per cell.
        for j in 0..c {
            if d_video[j] == 0.0 {
                continue;
            }
            let z = cache.joint_norm[j];
            let v = cache.video[j];
            let scale = d_video[j] / z;
            for i in 0..t {
                let (fa, av, p) = (
                    cache.temporal_audio[[i, j]],
                    cache.modality_audio[[i, j]],
                    cache.prob_audio[[i, j]],
                );
                d_fa_a[[i, j]] += scale * av * (p - v);
                d_av_a[[i, j]] += scale * fa * (p - v);
                d_prob_a[[i, j]] += scale * fa * av;
                let (fv, mv, pv) = (
                    cache.temporal_visual[[i, j]],
                    cache.modality_visual[[i, j]],
                    cache.prob_visual[[i, j]],
                );
                d_fa_v[[i, j]] += scale * mv * (pv - v);
                d_av_v[[i, j]] += scale * fv * (pv - v);
                d_prob_v[[i, j]] += scale * fv * mv;
            }
        }

        // Per-modality pooling: pooled_m[j] = sum_t temporal*prob.
        for j in 0..c {
            for i in 0..t {
                d_fa_a[[i, j]] += d_pa[j] * cache.prob_audio[[i, j]];
                d_prob_a[[i, j]] += d_pa[j] * cache.temporal_audio[[i, j]];
                d_fa_v[[i, j]] += d_pv[j] * cache.prob_visual[[i, j]];
                d_prob_v[[i, j]] += d_pv[j] * cache.temporal_visual[[i, j]];
            }
        }

        // Sigmoid head; gradient gated where the probability clamp is active.
        let gate = |sig: &Array2<f64>, d: &Array2<f64>| -> Array2<f64> {
            let mut out = Array2::<f64>::zeros(d.dim());
            for i in 0..d.nrows() {
                for j in 0..d.ncols() {
                    let s = sig[[i, j]];
                    if s > PROB_EPS && s < 1.0 - PROB_EPS {
                        out[[i, j]] = d[[i, j]] * s * (1.0 - s);
                    }
                }
            }
            out
        };
        let d_zcls_a = gate(&cache.sig_audio, &d_prob_a);
        let d_zcls_v = gate(&cache.sig_visual, &d_prob_v);

        // Temporal softmax backward, per (modality, class) column.
        let softmax_cols_backward = |fa: &Array2<f64>, d: &Array2<f64>| -> Array2<f64> {
            let mut out = Array2::<f64>::zeros(d.dim());
            for j in 0..d.ncols() {
                let mut dot = 0.0;
                for i in 0..d.nrows() {
                    dot += fa[[i, j]] * d[[i, j]];
                }
                for i in 0..d.nrows() {
                    out[[i, j]] = fa[[i, j]] * (d[[i, j]] - dot);
                }
            }
            out
        };
        let d_zt_a = softmax_cols_backward(&cache.temporal_audio, &d_fa_a);
        let d_zt_v = softmax_cols_backward(&cache.temporal_visual, &d_fa_v);

        // Two-way modality softmax backward, per (segment, class).
        let mut d_zm_a = Array2::<f64>::zeros((t, c));
        let mut d_zm_v = Array2::<f64>::zeros((t, c));
        for i in 0..t {
            for j in 0..c {
                let wa = cache.modality_audio[[i, j]];
                let wv = cache.modality_visual[[i, j]];
                let dot = wa * d_av_a[[i, j]] + wv * d_av_v[[i, j]];
                d_zm_a[[i, j]] = wa * (d_av_a[[i, j]] - dot);
                d_zm_v[[i, j]] = wv * (d_av_v[[i, j]] - dot);
            }
        }

        // Heads: z = f W' + b, so dW = dz' f and db = column sums of dz.
        let mut dw_cls = d_zcls_a.t().dot(&cache.f_audio);
        dw_cls += &d_zcls_v.t().dot(&cache.f_visual);
        let db_cls = sum_rows(&d_zcls_a) + sum_rows(&d_zcls_v);
        let mut dw_t = d_zt_a.t().dot(&cache.f_audio);
        dw_t += &d_zt_v.t().dot(&cache.f_visual);
        let db_t = sum_rows(&d_zt_a) + sum_rows(&d_zt_v);
        let mut dw_m = d_zm_a.t().dot(&cache.f_audio);
        dw_m += &d_zm_v.t().dot(&cache.f_visual);
        let db_m = sum_rows(&d_zm_a) + sum_rows(&d_zm_v);

        let attn_grads = if self.attn.is_identity() {
            attention::HybridAttnGrads::default()
        } else {
            let d_f_a = d_zcls_a.dot(&self.cls.weight)
                + d_zt_a.dot(&self.temporal.weight)
                + d_zm_a.dot(&self.modality.weight);
            let d_f_v = d_zcls_v.dot(&self.cls.weight)
                + d_zt_v.dot(&self.temporal.weight)
                + d_zm_v.dot(&self.modality.weight);
            attention::hybrid_backward(&d_f_a, &d_f_v, &self.attn, &cache.attn_cache)
        };

        let mut flat = Vec::with_capacity(self.flat_len());
        attention::push_grads_flat(&mut flat, &self.attn, &attn_grads);
        flat.extend(dw_cls.iter());
        flat.extend(db_cls.iter());
        flat.extend(dw_t.iter());
        flat.extend(db_t.iter());
        flat.extend(dw_m.iter());
        flat.extend(db_m.iter());
        debug_assert_eq!(flat.len(), self.flat_len());
        flat
    }
}

fn sum_rows(m: &Array2<f64>) -> Array1<f64> {
    let mut out = Array1::<f64>::zeros(m.ncols());
    for row in m.rows() {
        out += &row;
    }
    out
}

/// Elementwise OR of two binary label vectors.
pub fn union_label(a: &[u8], b: &[u8]) -> Vec<u8> {
    data::union_of(a, b)
}

/// Video-level binary cross-entropy against the union label.
pub fn video_level_loss(pred: &VideoPrediction, target: &[u8], positive_only: bool) -> f64 {
    pred.prob
        .iter()
        .zip(target)
        .map(|(p, y)| {
            let y = f64::from(*y);
            if positive_only {
                -y * p.ln()
            } else {
                util::bce(y, *p)
            }
        })
        .sum()
}

/// Sum of the per-modality video-level cross-entropies against the denoised
/// modality labels.
pub fn modality_loss(
    pooled_audio: &Array1<f64>,
    pooled_visual: &Array1<f64>,
    y_audio: &[u8],
    y_visual: &[u8],
) -> f64 {
    let side = |p: &Array1<f64>, y: &[u8]| -> f64 {
        p.iter()
            .zip(y)
            .map(|(p, y)| util::bce(f64::from(*y), util::clamp_prob(*p, PROB_EPS)))
            .sum()
    };
    side(pooled_audio, y_audio) + side(pooled_visual, y_visual)
}

/// Video-level per-modality probabilities from snippet predictions (temporal
/// attention pooling only).
pub fn modality_video_probs(snippets: &SnippetPredictions) -> (Array1<f64>, Array1<f64>) {
    let c = snippets.prob_audio.ncols();
    let t = snippets.prob_audio.nrows();
    let mut pa = Array1::<f64>::zeros(c);
    let mut pv = Array1::<f64>::zeros(c);
    for j in 0..c {
        for i in 0..t {
            pa[j] += snippets.temporal_audio[[i, j]] * snippets.prob_audio[[i, j]];
            pv[j] += snippets.temporal_visual[[i, j]] * snippets.prob_visual[[i, j]];
        }
    }
    (pa, pv)
}

/// Threshold snippet probabilities into per-segment decisions. The threshold
/// is inclusive (a probability equal to it counts as positive), and the
/// audio-visual track is the per-cell AND of the two modality decisions.
pub fn predict_temporal_labels(
    snippets: &SnippetPredictions,
    threshold: f64,
) -> Result<(Array2<u8>, Array2<u8>, Array2<u8>)> {
    if !(0.0..1.0).contains(&threshold) || threshold <= 0.0 {
        return Err(Error::Config(format!(
            "threshold must be inside (0,1), got {threshold}"
        )));
    }
    let audio = snippets.prob_audio.mapv(|p| u8::from(p >= threshold));
    let visual = snippets.prob_visual.mapv(|p| u8::from(p >= threshold));
    let av = &audio * &visual;
    Ok((audio, visual, av))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_feats(t: usize, d: usize, r: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((t, d), |_| r.random_range(-1.5..1.5))
    }

    #[test]
    fn single_segment_uniform_modality_attention_averages_the_tracks() {
        let cfg = TaskConfig::new(3, 2);
        let mut params = TaskParams::init(cfg, &mut rng(0)).unwrap();
        params.modality = LinearHead::zeros(2, 3); // uniform modality attention
        let a = array![[0.5, -0.2, 0.1]];
        let v = array![[-0.4, 0.3, 0.9]];
        let (snip, video, _) = params.forward(&a, &v).unwrap();
        for j in 0..2 {
            let mean = 0.5 * (snip.prob_audio[[0, j]] + snip.prob_visual[[0, j]]);
            assert_abs_diff_eq!(video.prob[j], mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_snippet_probs_pool_to_the_constant() {
        let cfg = TaskConfig::new(2, 3);
        let mut params = TaskParams::init(cfg, &mut rng(1)).unwrap();
        // Constant classifier: zero weight rows, per-class biases.
        params.cls = LinearHead {
            weight: Array2::zeros((3, 2)),
            bias: array![0.3, -1.2, 2.0],
        };
        let mut r = rng(2);
        let a = random_feats(4, 2, &mut r);
        let v = random_feats(4, 2, &mut r);
        let (_, video, _) = params.forward(&a, &v).unwrap();
        for j in 0..3 {
            let q = util::sigmoid(params.cls.bias[j]);
            assert_abs_diff_eq!(video.prob[j], q, epsilon = 1e-12);
        }
    }

    #[test]
    fn pooling_matches_a_straight_line_oracle() {
        let cfg = TaskConfig::new(2, 2);
        let params = TaskParams::init(cfg, &mut rng(5)).unwrap();
        let mut r = rng(6);
        let a = random_feats(2, 2, &mut r);
        let v = random_feats(2, 2, &mut r);
        let (snip, video, _) = params.forward(&a, &v).unwrap();

        for j in 0..2 {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..2 {
                num += snip.temporal_audio[[i, j]]
                    * snip.modality_audio[[i, j]]
                    * snip.prob_audio[[i, j]];
                num += snip.temporal_visual[[i, j]]
                    * snip.modality_visual[[i, j]]
                    * snip.prob_visual[[i, j]];
                den += snip.temporal_audio[[i, j]] * snip.modality_audio[[i, j]];
                den += snip.temporal_visual[[i, j]] * snip.modality_visual[[i, j]];
            }
            assert_abs_diff_eq!(video.prob[j], num / den, epsilon = 1e-12);
        }
    }

    #[test]
    fn attention_maps_normalize_and_pooling_is_convex() {
        let cfg = TaskConfig::new(3, 4);
        let params = TaskParams::init(cfg, &mut rng(7)).unwrap();
        let mut r = rng(8);
        for _ in 0..25 {
            let t = r.random_range(1..6);
            let a = random_feats(t, 3, &mut r);
            let v = random_feats(t, 3, &mut r);
            let (snip, video, _) = params.forward(&a, &v).unwrap();
            for j in 0..4 {
                let sa: f64 = snip.temporal_audio.column(j).sum();
                let sv: f64 = snip.temporal_visual.column(j).sum();
                assert!((sa - 1.0).abs() < 1e-6 && (sv - 1.0).abs() < 1e-6);
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for i in 0..t {
                    let m = snip.modality_audio[[i, j]] + snip.modality_visual[[i, j]];
                    assert!((m - 1.0).abs() < 1e-6);
                    lo = lo
                        .min(snip.prob_audio[[i, j]])
                        .min(snip.prob_visual[[i, j]]);
                    hi = hi
                        .max(snip.prob_audio[[i, j]])
                        .max(snip.prob_visual[[i, j]]);
                }
                assert!(video.prob[j] >= lo - 1e-12 && video.prob[j] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn loss_values_match_the_scalar_oracles() {
        let pred = VideoPrediction {
            prob: array![0.9, 0.2],
        };
        let loss = video_level_loss(&pred, &[1, 0], false);
        assert_abs_diff_eq!(loss, -(0.9f64.ln() + 0.8f64.ln()), epsilon = 1e-12);

        let uniform = VideoPrediction {
            prob: array![0.5, 0.5, 0.5],
        };
        assert_abs_diff_eq!(
            video_level_loss(&uniform, &[1, 0, 1], false),
            3.0 * 2.0f64.ln(),
            epsilon = 1e-12
        );

        let loss = modality_loss(&array![0.7], &array![0.4], &[1], &[0]);
        assert_abs_diff_eq!(loss, -(0.7f64.ln()) - (0.6f64.ln()), epsilon = 1e-12);

        // Perfect predictions at the clamp bounds cost at most 2C*eps.
        let perfect = VideoPrediction {
            prob: array![1.0 - PROB_EPS, PROB_EPS],
        };
        assert!(video_level_loss(&perfect, &[1, 0], false) <= 2.0 * 2.0 * 1.01e-6);
        let near_zero = modality_loss(
            &array![PROB_EPS, PROB_EPS],
            &array![PROB_EPS],
            &[0, 0],
            &[0],
        );
        assert!(near_zero <= 3.0 * 1.01e-6);
    }

    #[test]
    fn positive_only_variant_drops_the_negative_term() {
        let pred = VideoPrediction {
            prob: array![0.9, 0.2],
        };
        let loss = video_level_loss(&pred, &[1, 0], true);
        assert_abs_diff_eq!(loss, -(0.9f64.ln()), epsilon = 1e-12);
    }

    #[test]
    fn temporal_label_prediction_thresholds_and_ands() {
        let snip = SnippetPredictions {
            prob_audio: array![[0.0, 0.5], [0.9, 0.2]],
            prob_visual: array![[0.0, 0.4], [0.9, 0.8]],
            temporal_audio: Array2::from_elem((2, 2), 0.5),
            temporal_visual: Array2::from_elem((2, 2), 0.5),
            modality_audio: Array2::from_elem((2, 2), 0.5),
            modality_visual: Array2::from_elem((2, 2), 0.5),
        };
        let (a, v, av) = predict_temporal_labels(&snip, 0.5).unwrap();
        assert_eq!(a, array![[0, 1], [1, 0]]); // 0.5 is positive (inclusive)
        assert_eq!(v, array![[0, 0], [1, 1]]);
        assert_eq!(av, array![[0, 0], [1, 0]]);

        let zero = SnippetPredictions {
            prob_audio: Array2::zeros((2, 2)),
            prob_visual: Array2::zeros((2, 2)),
            ..snip
        };
        let (a, v, av) = predict_temporal_labels(&zero, 0.5).unwrap();
        assert_eq!(a.sum(), 0);
        assert_eq!(v.sum(), 0);
        assert_eq!(av.sum(), 0);
    }

    #[test]
    fn losses_are_nonnegative_and_zero_only_at_the_targets() {
        let mut r = rng(9);
        for _ in 0..50 {
            let c = r.random_range(1..5);
            let pred = VideoPrediction {
                prob: Array1::from_shape_fn(c, |_| r.random_range(1e-6..1.0 - 1e-6)),
            };
            let target: Vec<u8> = (0..c).map(|_| u8::from(r.random::<bool>())).collect();
            assert!(video_level_loss(&pred, &target, false) >= 0.0);
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        for learned in [false, true] {
            let cfg = TaskConfig {
                learned_projections: learned,
                ..TaskConfig::new(3, 2)
            };
            let mut params = TaskParams::init(cfg, &mut rng(10)).unwrap();
            let mut r = rng(11);
            let a = random_feats(3, 3, &mut r);
            let v = random_feats(3, 3, &mut r);
            let union = vec![1, 0];
            let ya = vec![1, 0];
            let yv = vec![0, 1];

            let (_, _, cache) = params.forward(&a, &v).unwrap();
            let (_, _, analytic) = params.loss_and_grad(&cache, &union, &ya, &yv, true);

            let mut flat = params.to_flat();
            let h = 1e-3;
            for i in 0..flat.len() {
                let orig = flat[i];
                let mut eval = |x: f64| {
                    flat[i] = x;
                    params.set_from_flat(&flat);
                    let (_, _, cache) = params.forward(&a, &v).unwrap();
                    let (lv, la, _) = params.loss_and_grad(&cache, &union, &ya, &yv, true);
                    lv + la
                };
                let hi = eval(orig + h);
                let lo = eval(orig - h);
                flat[i] = orig;
                params.set_from_flat(&flat);
                let fd = (hi - lo) / (2.0 * h);
                let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
                assert!(
                    (analytic[i] - fd).abs() / denom < 1e-4,
                    "learned={learned} param {i}: analytic {} vs fd {fd}",
                    analytic[i]
                );
            }
        }
    }
}
