//! Scaled-dot-product attention and the hybrid self/cross attention block
//! shared by the denoising policy and the parsing network.
//!
//! Each output row is the residual sum of the input row, a self-attention
//! read over the same modality's sequence, and a cross-attention read over
//! the other modality's sequence. Query/key/value maps are the identity by
//! default; optional learned linear projections carry analytic gradients.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::util;

/// Learned linear projections for one attention application.
/// `wq`: d_query_in x d_key, `wk`: d_kv_in x d_key, `wv`: d_kv_in x d_out.
#[derive(Debug, Clone)]
pub struct AttnProjection {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
}

impl AttnProjection {
    /// Key dim equals the query-side input dim; value outputs match the
    /// query-side dim so the residual sum stays well-formed.
    pub fn init(d_query_in: usize, d_kv_in: usize, rng: &mut ChaCha8Rng) -> Self {
        AttnProjection {
            wq: util::uniform_init(d_query_in, d_query_in, d_query_in, rng),
            wk: util::uniform_init(d_kv_in, d_query_in, d_kv_in, rng),
            wv: util::uniform_init(d_kv_in, d_query_in, d_kv_in, rng),
        }
    }

    pub fn flat_len(&self) -> usize {
        self.wq.len() + self.wk.len() + self.wv.len()
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionGrad {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
}

impl ProjectionGrad {
    fn zeros_like(p: &AttnProjection) -> Self {
        ProjectionGrad {
            wq: Array2::zeros(p.wq.dim()),
            wk: Array2::zeros(p.wk.dim()),
            wv: Array2::zeros(p.wv.dim()),
        }
    }
}

/// Hybrid-attention parameter set: one optional projection per
/// (modality, self/cross) application. `None` means identity maps.
#[derive(Debug, Clone)]
pub struct HybridAttnParams {
    pub audio_self: Option<AttnProjection>,
    pub audio_cross: Option<AttnProjection>,
    pub visual_self: Option<AttnProjection>,
    pub visual_cross: Option<AttnProjection>,
}

impl HybridAttnParams {
    pub fn identity() -> Self {
        HybridAttnParams {
            audio_self: None,
            audio_cross: None,
            visual_self: None,
            visual_cross: None,
        }
    }

    pub fn learned(d_audio: usize, d_visual: usize, rng: &mut ChaCha8Rng) -> Self {
        HybridAttnParams {
            audio_self: Some(AttnProjection::init(d_audio, d_audio, rng)),
            audio_cross: Some(AttnProjection::init(d_audio, d_visual, rng)),
            visual_self: Some(AttnProjection::init(d_visual, d_visual, rng)),
            visual_cross: Some(AttnProjection::init(d_visual, d_audio, rng)),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.audio_self.is_none()
            && self.audio_cross.is_none()
            && self.visual_self.is_none()
            && self.visual_cross.is_none()
    }

    pub fn flat_len(&self) -> usize {
        [
            &self.audio_self,
            &self.audio_cross,
            &self.visual_self,
            &self.visual_cross,
        ]
        .iter()
        .filter_map(|p| p.as_ref().map(AttnProjection::flat_len))
        .sum()
    }

    /// Identity projections need matching state dims across modalities for the
    /// residual cross-attention sum to be well-formed.
    pub fn validate_dims(&self, d_audio: usize, d_visual: usize) -> Result<()> {
        if self.is_identity() && d_audio != d_visual {
            return Err(Error::Shape(format!(
                "identity attention projections require equal state dims, got {d_audio} and {d_visual}; enable learned projections"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct HybridAttnGrads {
    pub audio_self: Option<ProjectionGrad>,
    pub audio_cross: Option<ProjectionGrad>,
    pub visual_self: Option<ProjectionGrad>,
    pub visual_cross: Option<ProjectionGrad>,
}

/// Attention read for one query row: softmax(q K' / sqrt(d)) V.
pub fn scaled_dot_attention(
    query: ArrayView1<f64>,
    keys: ArrayView2<f64>,
    values: ArrayView2<f64>,
    d: usize,
) -> Array1<f64> {
    let (weights, out) = attention_with_weights(query, keys, values, d);
    let _ = weights;
    out
}

pub fn attention_with_weights(
    query: ArrayView1<f64>,
    keys: ArrayView2<f64>,
    values: ArrayView2<f64>,
    d: usize,
) -> (Array1<f64>, Array1<f64>) {
    debug_assert_eq!(keys.nrows(), values.nrows());
    debug_assert_eq!(query.len(), keys.ncols());
    debug_assert!(d > 0);
    let scale = (d as f64).sqrt();
    let mut scores: Vec<f64> = keys.rows().into_iter().map(|k| query.dot(&k) / scale).collect();
    util::softmax_inplace(&mut scores);
    let weights = Array1::from(scores);
    let out = weights.dot(&values);
    (weights, out)
}

/// Cached intermediates of one attention application, enough to backpropagate
/// into its projections.
#[derive(Debug, Clone)]
struct AppCache {
    q_in: Array2<f64>,
    kv_in: Array2<f64>,
    q_proj: Array2<f64>,
    k_proj: Array2<f64>,
    v_proj: Array2<f64>,
    weights: Array2<f64>,
    scale: f64,
}

fn apply_attention(
    queries: &Array2<f64>,
    keyvalues: &Array2<f64>,
    proj: Option<&AttnProjection>,
) -> (Array2<f64>, AppCache) {
    let q_proj = match proj {
        Some(p) => queries.dot(&p.wq),
        None => queries.clone(),
    };
    let k_proj = match proj {
        Some(p) => keyvalues.dot(&p.wk),
        None => keyvalues.clone(),
    };
    let v_proj = match proj {
        Some(p) => keyvalues.dot(&p.wv),
        None => keyvalues.clone(),
    };
    let d_key = k_proj.ncols();
    let scale = (d_key as f64).sqrt();
    let mut weights = q_proj.dot(&k_proj.t());
    weights.mapv_inplace(|v| v / scale);
    for mut row in weights.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    let out = weights.dot(&v_proj);
    let cache = AppCache {
        q_in: queries.clone(),
        kv_in: keyvalues.clone(),
        q_proj,
        k_proj,
        v_proj,
        weights,
        scale,
    };
    (out, cache)
}

/// Gradient of one application w.r.t. its projections, given the upstream
/// gradient on its output rows. Returns `None` for identity maps.
fn backward_attention(grad_out: &Array2<f64>, cache: &AppCache, proj: Option<&AttnProjection>) -> Option<ProjectionGrad> {
    let proj = proj?;
    let mut grads = ProjectionGrad::zeros_like(proj);

    // dV~ = W' G, then dWv = KV_in' dV~.
    let d_v_proj = cache.weights.t().dot(grad_out);
    grads.wv = cache.kv_in.t().dot(&d_v_proj);

    // dW = G V~'
    let d_weights = grad_out.dot(&cache.v_proj.t());

    // Softmax Jacobian per row: de_j = w_j (dw_j - sum_k w_k dw_k).
    let mut d_scores = Array2::<f64>::zeros(cache.weights.dim());
    for (t, w_row) in cache.weights.rows().into_iter().enumerate() {
        let dw_row = d_weights.row(t);
        let dot = w_row.dot(&dw_row);
        for j in 0..w_row.len() {
            d_scores[[t, j]] = w_row[j] * (dw_row[j] - dot);
        }
    }
    d_scores.mapv_inplace(|v| v / cache.scale);

    // scores = Q~ K~' / scale
    let d_q_proj = d_scores.dot(&cache.k_proj);
    let d_k_proj = d_scores.t().dot(&cache.q_proj);
    grads.wq = cache.q_in.t().dot(&d_q_proj);
    grads.wk = cache.kv_in.t().dot(&d_k_proj);
    Some(grads)
}

/// Forward cache for a hybrid block over one sample.
#[derive(Debug, Clone)]
pub struct HybridCache {
    audio_self: AppCache,
    audio_cross: AppCache,
    visual_self: AppCache,
    visual_cross: AppCache,
}

impl HybridCache {
    /// Attention weight rows of every application, for invariant checks.
    pub fn weight_rows(&self) -> Vec<ArrayView2<'_, f64>> {
        vec![
            self.audio_self.weights.view(),
            self.audio_cross.weights.view(),
            self.visual_self.weights.view(),
            self.visual_cross.weights.view(),
        ]
    }
}

/// Hybrid attention over both modality sequences:
/// `h_m[t] = s_m[t] + selfattn(s_m[t], S_m) + crossattn(s_m[t], S_other)`.
pub fn hybrid_forward(
    s_audio: &Array2<f64>,
    s_visual: &Array2<f64>,
    params: &HybridAttnParams,
) -> Result<(Array2<f64>, Array2<f64>, HybridCache)> {
    params.validate_dims(s_audio.ncols(), s_visual.ncols())?;
    if s_audio.nrows() != s_visual.nrows() {
        return Err(Error::Shape(format!(
            "modalities disagree on segment count: {} vs {}",
            s_audio.nrows(),
            s_visual.nrows()
        )));
    }
    let (sa_a, c_sa_a) = apply_attention(s_audio, s_audio, params.audio_self.as_ref());
    let (ca_a, c_ca_a) = apply_attention(s_audio, s_visual, params.audio_cross.as_ref());
    let (sa_v, c_sa_v) = apply_attention(s_visual, s_visual, params.visual_self.as_ref());
    let (ca_v, c_ca_v) = apply_attention(s_visual, s_audio, params.visual_cross.as_ref());
    let h_audio = s_audio + &sa_a + &ca_a;
    let h_visual = s_visual + &sa_v + &ca_v;
    let cache = HybridCache {
        audio_self: c_sa_a,
        audio_cross: c_ca_a,
        visual_self: c_sa_v,
        visual_cross: c_ca_v,
    };
    Ok((h_audio, h_visual, cache))
}

/// Projection gradients of a hybrid block given upstream gradients on both
/// output matrices. Inputs are data, so no input gradients are produced.
pub fn hybrid_backward(
    grad_h_audio: &Array2<f64>,
    grad_h_visual: &Array2<f64>,
    params: &HybridAttnParams,
    cache: &HybridCache,
) -> HybridAttnGrads {
    HybridAttnGrads {
        audio_self: backward_attention(grad_h_audio, &cache.audio_self, params.audio_self.as_ref()),
        audio_cross: backward_attention(grad_h_audio, &cache.audio_cross, params.audio_cross.as_ref()),
        visual_self: backward_attention(grad_h_visual, &cache.visual_self, params.visual_self.as_ref()),
        visual_cross: backward_attention(grad_h_visual, &cache.visual_cross, params.visual_cross.as_ref()),
    }
}

// Flat parameter plumbing: projections serialize in a fixed order so the
// optimizers and checkpoints can treat networks as one vector.

pub fn push_proj(out: &mut Vec<f64>, p: &AttnProjection) {
    out.extend(p.wq.iter());
    out.extend(p.wk.iter());
    out.extend(p.wv.iter());
}

pub fn read_proj(p: &mut AttnProjection, src: &[f64], pos: &mut usize) {
    for arr in [&mut p.wq, &mut p.wk, &mut p.wv] {
        for v in arr.iter_mut() {
            *v = src[*pos];
            *pos += 1;
        }
    }
}

pub fn push_params_flat(out: &mut Vec<f64>, params: &HybridAttnParams) {
    for p in [
        &params.audio_self,
        &params.audio_cross,
        &params.visual_self,
        &params.visual_cross,
    ]
    .into_iter()
    .flatten()
    {
        push_proj(out, p);
    }
}

pub fn read_params_flat(params: &mut HybridAttnParams, src: &[f64], pos: &mut usize) {
    for p in [
        &mut params.audio_self,
        &mut params.audio_cross,
        &mut params.visual_self,
        &mut params.visual_cross,
    ]
    .into_iter()
    .flatten()
    {
        read_proj(p, src, pos);
    }
}

pub fn push_grads_flat(out: &mut Vec<f64>, params: &HybridAttnParams, grads: &HybridAttnGrads) {
    for (p, g) in [
        (&params.audio_self, &grads.audio_self),
        (&params.audio_cross, &grads.audio_cross),
        (&params.visual_self, &grads.visual_self),
        (&params.visual_cross, &grads.visual_cross),
    ] {
        if let Some(p) = p {
            match g {
                Some(g) => {
                    out.extend(g.wq.iter());
                    out.extend(g.wk.iter());
                    out.extend(g.wv.iter());
                }
                None => out.extend(std::iter::repeat(0.0).take(p.flat_len())),
            }
        }
    }
}

/// Mean of the rows of a matrix.
pub fn mean_pool_rows(m: &Array2<f64>) -> Array1<f64> {
    m.mean_axis(Axis(0)).expect("at least one row")
}
