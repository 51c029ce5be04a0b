//! Weakly-labeled two-stream datasets: synthetic generation with controllable
//! modality-specific label noise, an on-disk layout for pre-extracted features,
//! and the overlapping batch sampling that drives training state transitions.
//!
//! Synthetic samples are built clean-first: contiguous event intervals per
//! class per modality, video-level modality labels as the temporal OR of those
//! intervals, noisy labels by [`inject_modality_noise`], and the weak video
//! label as the union of the two noisy labels. Generation is a pure function
//! of its seeds.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Visual,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
        }
    }
}

/// Per-video, per-modality temporal feature matrix (T segments x d dims).
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    pub values: Array2<f64>,
    pub modality: Modality,
}

impl FeatureSequence {
    pub fn segments(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments() == 0 || self.dim() == 0 {
            return Err(Error::Shape(format!(
                "{} features must be at least 1x1, got {}x{}",
                self.modality.name(),
                self.segments(),
                self.dim()
            )));
        }
        if !self.values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{} feature matrix contains a non-finite entry",
                self.modality.name()
            )));
        }
        Ok(())
    }
}

/// One weakly-labeled video. Clean per-segment matrices are carried only by
/// validation/test samples; training supervision is the noisy labels alone.
#[derive(Debug, Clone)]
pub struct VideoSample {
    pub id: String,
    pub audio: FeatureSequence,
    pub visual: FeatureSequence,
    pub weak_label: Vec<u8>,
    pub noisy_audio_label: Vec<u8>,
    pub noisy_visual_label: Vec<u8>,
    pub clean_audio_segments: Option<Array2<u8>>,
    pub clean_visual_segments: Option<Array2<u8>>,
}

impl VideoSample {
    pub fn segments(&self) -> usize {
        self.audio.segments()
    }

    pub fn num_classes(&self) -> usize {
        self.weak_label.len()
    }

    /// Video-level clean label of one modality: temporal OR of its clean
    /// segment matrix. `None` for samples without clean annotations.
    pub fn clean_video_label(&self, modality: Modality) -> Option<Vec<u8>> {
        let seg = match modality {
            Modality::Audio => self.clean_audio_segments.as_ref()?,
            Modality::Visual => self.clean_visual_segments.as_ref()?,
        };
        let mut label = vec![0u8; seg.ncols()];
        for row in seg.rows() {
            for (c, v) in row.iter().enumerate() {
                if *v != 0 {
                    label[c] = 1;
                }
            }
        }
        Some(label)
    }

    pub fn noisy_label(&self, modality: Modality) -> &[u8] {
        match modality {
            Modality::Audio => &self.noisy_audio_label,
            Modality::Visual => &self.noisy_visual_label,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        self.audio.validate()?;
        self.visual.validate()?;
        if self.audio.segments() != self.visual.segments() {
            return Err(Error::Shape(format!(
                "sample {}: audio has {} segments, visual has {}",
                self.id,
                self.audio.segments(),
                self.visual.segments()
            )));
        }
        for (name, label) in [
            ("weak", &self.weak_label),
            ("noisy audio", &self.noisy_audio_label),
            ("noisy visual", &self.noisy_visual_label),
        ] {
            if label.len() != num_classes {
                return Err(Error::Shape(format!(
                    "sample {}: {} label has length {}, expected {}",
                    self.id,
                    name,
                    label.len(),
                    num_classes
                )));
            }
        }
        let union = union_of(&self.noisy_audio_label, &self.noisy_visual_label);
        if union != self.weak_label {
            return Err(Error::Config(format!(
                "sample {}: weak label is not the union of the noisy modality labels",
                self.id
            )));
        }
        if !self.weak_label.iter().any(|v| *v == 1) {
            return Err(Error::Config(format!(
                "sample {}: weak label has no positive entry",
                self.id
            )));
        }
        Ok(())
    }
}

pub fn union_of(a: &[u8], b: &[u8]) -> Vec<u8> {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| u8::from(*x != 0 || *y != 0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<VideoSample>,
    pub validation: Vec<VideoSample>,
    pub test: Vec<VideoSample>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[VideoSample] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for split in [Split::Train, Split::Validation, Split::Test] {
            for sample in self.split(split) {
                sample.validate(self.num_classes)?;
                if !seen.insert(sample.id.clone()) {
                    return Err(Error::Config(format!(
                        "duplicate sample id {} across splits",
                        sample.id
                    )));
                }
                let has_clean = sample.clean_audio_segments.is_some()
                    && sample.clean_visual_segments.is_some();
                let wants_clean = !matches!(split, Split::Train);
                if has_clean != wants_clean {
                    return Err(Error::Config(format!(
                        "sample {} in {}: clean segment matrices must be present iff the sample is in validation/test",
                        sample.id,
                        split.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Modality-specific label noise model. `spurious_rate` is the chance that a
/// class present only in the other modality is still attributed to this one;
/// `drop_rate` is the chance that a class cleanly present in both modalities
/// goes missing from one of them.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub spurious_rate: f64,
    pub drop_rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("spurious_rate", self.spurious_rate),
            ("drop_rate", self.drop_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0,1], got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            spurious_rate: 0.3,
            drop_rate: 0.0,
            seed: 7,
        }
    }
}

/// Derive noisy per-modality labels from clean ones.
///
/// Spurious insertions only copy classes already present in the other
/// modality's clean label, and drops never remove a class from the union, so
/// `OR(noisy_a, noisy_v)` always covers `OR(clean_a, clean_v)`.
pub fn inject_modality_noise(
    clean_audio: &[u8],
    clean_visual: &[u8],
    noise: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> (Vec<u8>, Vec<u8>) {
    debug_assert_eq!(clean_audio.len(), clean_visual.len());
    let mut noisy_a = clean_audio.to_vec();
    let mut noisy_v = clean_visual.to_vec();
    for c in 0..clean_audio.len() {
        if clean_visual[c] == 1 && clean_audio[c] == 0 && rng.random::<f64>() < noise.spurious_rate
        {
            noisy_a[c] = 1;
        }
    }
    for c in 0..clean_visual.len() {
        if clean_audio[c] == 1 && clean_visual[c] == 0 && rng.random::<f64>() < noise.spurious_rate
        {
            noisy_v[c] = 1;
        }
    }
    // Drops apply only to classes cleanly shared by both tracks; the twin is
    // kept so the union label is preserved.
    for c in 0..clean_audio.len() {
        if clean_audio[c] == 1 && clean_visual[c] == 1 && rng.random::<f64>() < noise.drop_rate {
            if rng.random::<f64>() < 0.5 {
                noisy_a[c] = 0;
            } else {
                noisy_v[c] = 0;
            }
        }
    }
    (noisy_a, noisy_v)
}

/// Full parameter set for the synthetic generator. [`generate_synthetic_dataset`]
/// covers the common call; this struct exposes the remaining knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_videos: usize,
    pub segments: usize,
    pub classes: usize,
    pub d_audio: usize,
    pub d_visual: usize,
    pub noise: NoiseSpec,
    pub seed: u64,
    /// Probability that a class occurs anywhere in a video.
    pub class_activity: f64,
    /// Probability that an active class occurs in both modalities; otherwise
    /// it lands in exactly one (chosen uniformly), which is what makes
    /// modality-specific label noise possible in the first place.
    pub shared_rate: f64,
    /// Stddev of the additive Gaussian feature noise.
    pub feature_noise: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_videos: 2000,
            segments: 10,
            classes: 5,
            d_audio: 16,
            d_visual: 16,
            noise: NoiseSpec::default(),
            seed: 7,
            class_activity: 0.35,
            shared_rate: 0.1,
            feature_noise: 0.5,
            val_fraction: 0.15,
            test_fraction: 0.15,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_videos == 0 {
            return Err(Error::EmptyDataset("num_videos must be at least 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "at least 2 classes are required, got {}",
                self.classes
            )));
        }
        if self.segments == 0 || self.d_audio == 0 || self.d_visual == 0 {
            return Err(Error::Config(
                "segments and feature dimensions must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction)
            || !(0.0..1.0).contains(&self.test_fraction)
            || self.val_fraction + self.test_fraction >= 1.0
        {
            return Err(Error::Config(
                "val_fraction and test_fraction must leave room for a train split".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.class_activity) || self.class_activity == 0.0 {
            return Err(Error::Config("class_activity must be in (0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.shared_rate) {
            return Err(Error::Config("shared_rate must be in [0,1]".into()));
        }
        self.noise.validate()
    }
}

/// Generate a synthetic dataset with the default split fractions and feature
/// distribution; see [`SynthConfig`] for the full knob set.
pub fn generate_synthetic_dataset(
    num_videos: usize,
    segments: usize,
    classes: usize,
    d_audio: usize,
    d_visual: usize,
    noise: NoiseSpec,
    seed: u64,
) -> Result<Dataset> {
    generate_dataset(&SynthConfig {
        num_videos,
        segments,
        classes,
        d_audio,
        d_visual,
        noise,
        seed,
        ..SynthConfig::default()
    })
}

pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = util::seeded_rng(cfg.seed, "synthetic-dataset");
    let mut noise_rng = util::seeded_rng(cfg.noise.seed, "modality-noise");

    // Unit-norm class-conditional feature means, one per (modality, class).
    let means_audio = class_means(cfg.classes, cfg.d_audio, &mut rng);
    let means_visual = class_means(cfg.classes, cfg.d_visual, &mut rng);

    let mut samples = Vec::with_capacity(cfg.num_videos);
    for v in 0..cfg.num_videos {
        let (seg_a, seg_v) = loop {
            let (seg_a, seg_v) = draw_video_segments(cfg, &mut rng);
            if seg_a.iter().any(|x| *x == 1) || seg_v.iter().any(|x| *x == 1) {
                break (seg_a, seg_v);
            }
        };
        let clean_a = video_label(&seg_a);
        let clean_v = video_label(&seg_v);
        let (noisy_a, noisy_v) = inject_modality_noise(&clean_a, &clean_v, &cfg.noise, &mut noise_rng);
        let weak = union_of(&noisy_a, &noisy_v);

        let audio = FeatureSequence {
            values: draw_features(&seg_a, &means_audio, cfg.feature_noise, &mut rng),
            modality: Modality::Audio,
        };
        let visual = FeatureSequence {
            values: draw_features(&seg_v, &means_visual, cfg.feature_noise, &mut rng),
            modality: Modality::Visual,
        };
        samples.push(VideoSample {
            id: format!("video_{v:05}"),
            audio,
            visual,
            weak_label: weak,
            noisy_audio_label: noisy_a,
            noisy_visual_label: noisy_v,
            clean_audio_segments: Some(seg_a),
            clean_visual_segments: Some(seg_v),
        });
    }

    // Deterministic split assignment.
    let mut order: Vec<usize> = (0..cfg.num_videos).collect();
    order.shuffle(&mut rng);
    let n_val = ((cfg.num_videos as f64) * cfg.val_fraction).round() as usize;
    let n_test = ((cfg.num_videos as f64) * cfg.test_fraction).round() as usize;
    let mut val_idx: Vec<usize> = order[..n_val].to_vec();
    let mut test_idx: Vec<usize> = order[n_val..n_val + n_test].to_vec();
    let mut train_idx: Vec<usize> = order[n_val + n_test..].to_vec();
    val_idx.sort_unstable();
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    let mut by_index: Vec<Option<VideoSample>> = samples.into_iter().map(Some).collect();
    let mut take = |idx: &[usize], keep_clean: bool| -> Vec<VideoSample> {
        idx.iter()
            .map(|i| {
                let mut s = by_index[*i].take().expect("index taken twice");
                if !keep_clean {
                    s.clean_audio_segments = None;
                    s.clean_visual_segments = None;
                }
                s
            })
            .collect()
    };
    let validation = take(&val_idx, true);
    let test = take(&test_idx, true);
    let train = take(&train_idx, false);

    let dataset = Dataset {
        train,
        validation,
        test,
        num_classes: cfg.classes,
        class_names: (0..cfg.classes).map(|c| format!("event_{c:02}")).collect(),
    };
    dataset.validate()?;
    Ok(dataset)
}

fn class_means(classes: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Array1<f64>> {
    (0..classes)
        .map(|_| {
            let mut v = util::random_normal_vec(dim, rng);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.mapv_inplace(|x| x / norm);
            v
        })
        .collect()
}

/// Draw both modalities' clean segment matrices for one video. An active
/// class lands in both modalities with probability `shared_rate`, otherwise
/// in exactly one; each placement is a contiguous interval with uniform start
/// and length >= 1.
fn draw_video_segments(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Array2<u8>, Array2<u8>) {
    let t = cfg.segments;
    let mut seg_a = Array2::<u8>::zeros((t, cfg.classes));
    let mut seg_v = Array2::<u8>::zeros((t, cfg.classes));
    for c in 0..cfg.classes {
        if rng.random::<f64>() >= cfg.class_activity {
            continue;
        }
        let (in_audio, in_visual) = if rng.random::<f64>() < cfg.shared_rate {
            (true, true)
        } else if rng.random::<f64>() < 0.5 {
            (true, false)
        } else {
            (false, true)
        };
        for (present, seg) in [(in_audio, &mut seg_a), (in_visual, &mut seg_v)] {
            if present {
                let len = rng.random_range(1..=t);
                let start = rng.random_range(0..=t - len);
                for row in start..start + len {
                    seg[[row, c]] = 1;
                }
            }
        }
    }
    (seg_a, seg_v)
}

fn video_label(seg: &Array2<u8>) -> Vec<u8> {
    let mut label = vec![0u8; seg.ncols()];
    for row in seg.rows() {
        for (c, v) in row.iter().enumerate() {
            if *v != 0 {
                label[c] = 1;
            }
        }
    }
    label
}

/// Segment features: sum of the active classes' means plus Gaussian noise.
/// Segments with no active class carry pure noise.
fn draw_features(
    seg: &Array2<u8>,
    means: &[Array1<f64>],
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let t = seg.nrows();
    let dim = means[0].len();
    let mut out = Array2::<f64>::zeros((t, dim));
    for row in 0..t {
        let mut base = Array1::<f64>::zeros(dim);
        for (c, active) in seg.row(row).iter().enumerate() {
            if *active != 0 {
                base += &means[c];
            }
        }
        let noise = util::random_normal_vec(dim, rng);
        for j in 0..dim {
            out[[row, j]] = base[j] + sigma * noise[j];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Episode batches
// ---------------------------------------------------------------------------

/// One training batch, expressed as indices into a split. `carried_over` holds
/// the floor(B/4) indices shared with the previous batch of the episode.
#[derive(Debug, Clone)]
pub struct EpisodeBatch {
    pub indices: Vec<usize>,
    pub carried_over: Vec<usize>,
}

/// Sample a batch of `batch_size` indices. When `previous` is given, exactly
/// floor(batch_size/4) indices are drawn from it and the rest come fresh from
/// the split (excluding the carried ones).
pub fn sample_episode_batch(
    split: &[VideoSample],
    batch_size: usize,
    previous: Option<&EpisodeBatch>,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeBatch> {
    let n = split.len();
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if batch_size > n {
        return Err(Error::Config(format!(
            "batch_size {batch_size} exceeds split size {n}"
        )));
    }
    match previous {
        None => {
            let indices = sample_without_replacement(n, batch_size, rng);
            Ok(EpisodeBatch {
                indices,
                carried_over: Vec::new(),
            })
        }
        Some(prev) => {
            let k = batch_size / 4;
            let pick = sample_without_replacement(prev.indices.len(), k, rng);
            let carried: Vec<usize> = pick.iter().map(|i| prev.indices[*i]).collect();
            let mut excluded = vec![false; n];
            for i in &carried {
                excluded[*i] = true;
            }
            let pool: Vec<usize> = (0..n).filter(|i| !excluded[*i]).collect();
            let fresh = sample_without_replacement(pool.len(), batch_size - k, rng);
            let mut indices = carried.clone();
            indices.extend(fresh.iter().map(|i| pool[*i]));
            Ok(EpisodeBatch {
                indices,
                carried_over: carried,
            })
        }
    }
}

fn sample_without_replacement(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k).into_vec()
}

// ---------------------------------------------------------------------------
// On-disk layout
// ---------------------------------------------------------------------------

/// `meta.json` written next to a serialized dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub classes: usize,
    pub segments: usize,
    pub d_audio: usize,
    pub d_visual: usize,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub class_names: Vec<String>,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabelRecord {
    noisy_audio: Vec<u8>,
    noisy_visual: Vec<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    clean_audio: Option<Vec<Vec<u8>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    clean_visual: Option<Vec<Vec<u8>>>,
}

/// Serialize a dataset: `meta.json` plus per-split `annotations.csv`,
/// `labels.json`, and one text matrix file per video per modality under
/// `features/`. Matrix files start with a `T d` header line followed by T
/// whitespace-separated rows.
pub fn save_dataset(dataset: &Dataset, cfg: &SynthConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = DatasetMeta {
        format_version: 1,
        classes: dataset.num_classes,
        segments: cfg.segments,
        d_audio: cfg.d_audio,
        d_visual: cfg.d_visual,
        seed: cfg.seed,
        noise: cfg.noise,
        class_names: dataset.class_names.clone(),
        counts: [
            ("train".to_string(), dataset.train.len()),
            ("validation".to_string(), dataset.validation.len()),
            ("test".to_string(), dataset.test.len()),
        ]
        .into_iter()
        .collect(),
    };
    write_json(&dir.join("meta.json"), &meta)?;

    for split in [Split::Train, Split::Validation, Split::Test] {
        let split_dir = dir.join(split.name());
        let feat_dir = split_dir.join("features");
        fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;

        let ann_path = split_dir.join("annotations.csv");
        let mut ann = String::from("filename,labels\n");
        let mut labels = BTreeMap::new();
        for sample in dataset.split(split) {
            let names: Vec<&str> = sample
                .weak_label
                .iter()
                .enumerate()
                .filter(|(_, v)| **v == 1)
                .map(|(c, _)| dataset.class_names[c].as_str())
                .collect();
            ann.push_str(&format!("{},{}\n", sample.id, names.join("&")));
            labels.insert(
                sample.id.clone(),
                LabelRecord {
                    noisy_audio: sample.noisy_audio_label.clone(),
                    noisy_visual: sample.noisy_visual_label.clone(),
                    clean_audio: sample.clean_audio_segments.as_ref().map(matrix_to_rows),
                    clean_visual: sample.clean_visual_segments.as_ref().map(matrix_to_rows),
                },
            );
            write_matrix(
                &feat_dir.join(format!("{}_audio.txt", sample.id)),
                &sample.audio.values,
            )?;
            write_matrix(
                &feat_dir.join(format!("{}_visual.txt", sample.id)),
                &sample.visual.values,
            )?;
        }
        fs::write(&ann_path, ann).map_err(|e| Error::io(&ann_path, e))?;
        write_json(&split_dir.join("labels.json"), &labels)?;
    }
    Ok(())
}

/// Load a dataset previously written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetMeta)> {
    let meta_path = dir.join("meta.json");
    let meta: DatasetMeta = read_json(&meta_path)?;
    let mut dataset = Dataset {
        num_classes: meta.classes,
        class_names: meta.class_names.clone(),
        ..Dataset::default()
    };
    for split in [Split::Train, Split::Validation, Split::Test] {
        let split_dir = dir.join(split.name());
        let labels: BTreeMap<String, LabelRecord> = read_json(&split_dir.join("labels.json"))?;
        let feat_dir = split_dir.join("features");
        let mut samples = Vec::with_capacity(labels.len());
        for (id, record) in labels {
            let audio = FeatureSequence {
                values: read_matrix(&feat_dir.join(format!("{id}_audio.txt")))?,
                modality: Modality::Audio,
            };
            let visual = FeatureSequence {
                values: read_matrix(&feat_dir.join(format!("{id}_visual.txt")))?,
                modality: Modality::Visual,
            };
            let weak = union_of(&record.noisy_audio, &record.noisy_visual);
            samples.push(VideoSample {
                id,
                audio,
                visual,
                weak_label: weak,
                noisy_audio_label: record.noisy_audio,
                noisy_visual_label: record.noisy_visual,
                clean_audio_segments: record.clean_audio.map(rows_to_matrix).transpose()?,
                clean_visual_segments: record.clean_visual.map(rows_to_matrix).transpose()?,
            });
        }
        match split {
            Split::Train => dataset.train = samples,
            Split::Validation => dataset.validation = samples,
            Split::Test => dataset.test = samples,
        }
    }
    dataset.validate()?;
    Ok((dataset, meta))
}

/// Ingestion stats for [`load_feature_dataset`].
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub loaded: usize,
    /// Videos skipped because a modality's feature file was missing.
    pub rejected: usize,
    pub warnings: Vec<String>,
}

/// Ingest pre-extracted features with weak video-level annotations only.
///
/// `annotations_file` is a CSV with header `filename,labels`; the labels field
/// holds `&`-separated event names (a `,` inside a quoted field is tolerated
/// as a separator as well). The class vocabulary is inferred from the file.
/// Each video is expected to have `<id>_audio.txt` and `<id>_visual.txt`
/// matrix files under `features_dir`; videos missing either are rejected and
/// counted in the report. All loaded samples land in the train split, with
/// both noisy modality labels initialized to the weak label.
pub fn load_feature_dataset(
    features_dir: &Path,
    annotations_file: &Path,
) -> Result<(Dataset, LoadReport)> {
    if !features_dir.is_dir() {
        return Err(Error::io(
            features_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "features directory not found"),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(annotations_file)
        .map_err(|e| Error::parse(annotations_file, 0, e.to_string()))?;

    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    let mut vocab: Vec<String> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record.map_err(|e| Error::parse(annotations_file, line, e.to_string()))?;
        if record.len() != 2 {
            return Err(Error::parse(
                annotations_file,
                line,
                format!("expected 2 fields (filename,labels), got {}", record.len()),
            ));
        }
        let id = record[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::parse(annotations_file, line, "empty filename"));
        }
        let labels: Vec<String> = record[1]
            .split(['&', ','])
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if labels.is_empty() {
            return Err(Error::parse(
                annotations_file,
                line,
                format!("video {id} has no labels"),
            ));
        }
        for l in &labels {
            if !vocab.contains(l) {
                vocab.push(l.clone());
            }
        }
        rows.push((id, labels));
    }
    vocab.sort();

    let mut report = LoadReport::default();
    let mut train = Vec::new();
    for (id, labels) in rows {
        let audio_path = features_dir.join(format!("{id}_audio.txt"));
        let visual_path = features_dir.join(format!("{id}_visual.txt"));
        if !audio_path.is_file() || !visual_path.is_file() {
            report.rejected += 1;
            report
                .warnings
                .push(format!("video {id}: missing feature file, skipped"));
            continue;
        }
        let audio = read_matrix(&audio_path)?;
        let visual = read_matrix(&visual_path)?;
        if audio.nrows() != visual.nrows() {
            return Err(Error::Shape(format!(
                "video {id}: audio has {} segments but visual has {}",
                audio.nrows(),
                visual.nrows()
            )));
        }
        let mut weak = vec![0u8; vocab.len()];
        for l in &labels {
            let c = vocab.iter().position(|v| v == l).expect("vocab covers labels");
            weak[c] = 1;
        }
        train.push(VideoSample {
            id,
            audio: FeatureSequence {
                values: audio,
                modality: Modality::Audio,
            },
            visual: FeatureSequence {
                values: visual,
                modality: Modality::Visual,
            },
            noisy_audio_label: weak.clone(),
            noisy_visual_label: weak.clone(),
            weak_label: weak,
            clean_audio_segments: None,
            clean_visual_segments: None,
        });
    }
    report.loaded = train.len();
    let dataset = Dataset {
        train,
        validation: Vec::new(),
        test: Vec::new(),
        num_classes: vocab.len(),
        class_names: vocab,
    };
    dataset.validate()?;
    Ok((dataset, report))
}

fn matrix_to_rows(m: &Array2<u8>) -> Vec<Vec<u8>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn rows_to_matrix(rows: Vec<Vec<u8>>) -> Result<Array2<u8>> {
    let t = rows.len();
    let c = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != c) {
        return Err(Error::Shape("ragged segment matrix".into()));
    }
    Array2::from_shape_vec((t, c), rows.into_iter().flatten().collect())
        .map_err(|e| Error::Shape(e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serializing {}: {e}", path.display())))?;
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&body).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut out = String::with_capacity(m.len() * 12);
    out.push_str(&format!("{} {}\n", m.nrows(), m.ncols()));
    for row in m.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = body.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty matrix file"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::parse(path, 1, format!("bad header: {e}")))?;
    if dims.len() != 2 {
        return Err(Error::parse(path, 1, "header must be 'T d'"));
    }
    let (t, d) = (dims[0], dims[1]);
    let mut values = Vec::with_capacity(t * d);
    for (i, line) in lines.take(t) {
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|e| Error::parse(path, i + 1, format!("bad value '{tok}': {e}")))?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("non-finite feature value '{tok}'"),
                });
            }
            values.push(v);
        }
    }
    if values.len() != t * d {
        return Err(Error::parse(
            path,
            1,
            format!("expected {} values, found {}", t * d, values.len()),
        ));
    }
    Array2::from_shape_vec((t, d), values).map_err(|e| Error::Shape(e.to_string()))
}
