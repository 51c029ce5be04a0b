//! Joint training loop: the denoising policy samples keep/remove actions and
//! revises the batch labels, the parsing network takes a supervised step on
//! the revised labels, a validation pass prices the result, and the policy is
//! updated with the score-function (Monte Carlo policy gradient) estimator,
//! with per-branch validation feedback and the soft inter-reward.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, EpisodeBatch, Modality, VideoSample};
use crate::denoiser::{self, ActionMask, Branch, DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};
use crate::metrics::{self, Aggregation, EvaluationReport, TemporalPrediction};
use crate::optim::Adam;
use crate::rewards::{self, InterReward, RewardBundle};
use crate::task::{self, TaskConfig, TaskParams};
use crate::util;

/// Which labels feed the soft inter-reward comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterRewardSource {
    /// Compare each modality's revised labels against its own smoothed
    /// original labels.
    PerModality,
    /// Compare the revised union against the smoothed weak label.
    WeakUnion,
}

/// How per-sample rewards weight the per-sample score functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreditMode {
    /// Every sample in the batch shares the batch-mean inter-reward.
    Batch,
    /// Each sample's own inter-reward weights its own log-probability.
    PerSample,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub denoiser_lr: f64,
    pub task_lr: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub batch_size: usize,
    pub episode_len: usize,
    pub max_epochs: usize,
    /// Episodes per epoch; 0 derives one pass-worth from the split size.
    pub episodes_per_epoch: usize,
    /// Fraction of the validation split used for the per-step reward signal.
    pub validation_fraction: f64,
    pub seed: u64,
    // Ablations.
    pub no_initialized_labels: bool,
    pub no_inter_reward: bool,
    /// Reference arm: keep every label and never update the policy.
    pub no_denoiser: bool,
    // Reward shaping.
    pub terminal_scale: f64,
    pub label_smoothing: f64,
    pub distribution_floor: f64,
    pub inter_reward_source: InterRewardSource,
    pub credit_mode: CreditMode,
    // Networks.
    pub learned_projections: bool,
    pub shared_policy_head: bool,
    pub positive_only_video_loss: bool,
    /// Optimize the modality loss alone (drop the union video-level term).
    pub modality_loss_only: bool,
    pub threshold: f64,
    // Loop shape.
    pub warm_start: bool,
    pub task_steps_per_policy_step: usize,
    pub patience: usize,
    pub min_improvement: f64,
    /// Epochs to run before the patience rule may stop the run. At the low
    /// learning rate the early validation curve moves less than
    /// `min_improvement` per epoch while still far from converged.
    pub min_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            denoiser_lr: 1e-4,
            task_lr: 1e-4,
            alpha1: 0.6,
            alpha2: 0.4,
            batch_size: 128,
            episode_len: 32,
            max_epochs: 200,
            episodes_per_epoch: 0,
            validation_fraction: 0.25,
            seed: 7,
            no_initialized_labels: false,
            no_inter_reward: false,
            no_denoiser: false,
            terminal_scale: 0.1,
            label_smoothing: 0.1,
            distribution_floor: 0.01,
            inter_reward_source: InterRewardSource::PerModality,
            credit_mode: CreditMode::Batch,
            learned_projections: false,
            shared_policy_head: false,
            positive_only_video_loss: false,
            modality_loss_only: false,
            threshold: 0.5,
            warm_start: true,
            task_steps_per_policy_step: 1,
            patience: 5,
            min_improvement: 1e-4,
            min_epochs: 40,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.denoiser_lr <= 0.0 || self.task_lr <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size < 4 {
            return Err(Error::Config("batch_size must be at least 4".into()));
        }
        if self.episode_len == 0 {
            return Err(Error::Config("episode_len must be at least 1".into()));
        }
        if self.alpha1 < 0.0 || self.alpha2 < 0.0 {
            return Err(Error::Config("reward weights must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.validation_fraction) || self.validation_fraction == 0.0 {
            return Err(Error::Config("validation_fraction must be in (0,1]".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) || self.label_smoothing == 0.0 {
            return Err(Error::Config("label_smoothing must be in (0,1)".into()));
        }
        if self.distribution_floor <= 0.0 {
            return Err(Error::Config("distribution_floor must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.threshold) || self.threshold == 0.0 {
            return Err(Error::Config("threshold must be in (0,1)".into()));
        }
        if self.task_steps_per_policy_step == 0 {
            return Err(Error::Config(
                "task_steps_per_policy_step must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Apply a named ablation from the command line.
    pub fn apply_ablation(&mut self, name: &str) -> Result<()> {
        match name {
            "none" => {}
            "no_inter_reward" => self.no_inter_reward = true,
            "no_initialized_labels" => self.no_initialized_labels = true,
            "no_denoiser" => self.no_denoiser = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation '{other}' (expected none, no_inter_reward, no_initialized_labels, no_denoiser)"
                )))
            }
        }
        Ok(())
    }
}

/// Validation metric snapshot carried in every step trace.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ValSnapshot {
    pub seg_audio: f64,
    pub seg_visual: f64,
    pub seg_av: f64,
    pub seg_type: f64,
    pub seg_event: f64,
    pub ev_audio: f64,
    pub ev_visual: f64,
    pub ev_av: f64,
    pub ev_type: f64,
    pub ev_event: f64,
}

impl ValSnapshot {
    pub fn from_report(report: &EvaluationReport) -> Self {
        ValSnapshot {
            seg_audio: report.segment.audio,
            seg_visual: report.segment.visual,
            seg_av: report.segment.audio_visual,
            seg_type: report.segment.type_at_av,
            seg_event: report.segment.event_at_av,
            ev_audio: report.event.audio,
            ev_visual: report.event.visual,
            ev_av: report.event.audio_visual,
            ev_type: report.event.type_at_av,
            ev_event: report.event.event_at_av,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepTrace {
    pub epoch: usize,
    pub episode: usize,
    pub step: usize,
    pub audio: RewardBundle,
    pub visual: RewardBundle,
    pub degenerate_count: usize,
    pub loss_video: f64,
    pub loss_av: f64,
    pub denoiser_update_norm: f64,
    pub task_update_norm: f64,
    pub val: ValSnapshot,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub episode: usize,
    pub steps: Vec<StepTrace>,
}

/// Monte Carlo score-function gradient: the mean of reward-weighted
/// log-probability gradients, with no baseline subtraction.
pub fn reinforce_gradient_estimate(
    log_prob_grads: &[Vec<f64>],
    rewards: &[f64],
) -> Result<Vec<f64>> {
    if log_prob_grads.is_empty() {
        return Err(Error::Config(
            "policy gradient estimate needs at least one step".into(),
        ));
    }
    if log_prob_grads.len() != rewards.len() {
        return Err(Error::Config(format!(
            "{} gradients but {} rewards",
            log_prob_grads.len(),
            rewards.len()
        )));
    }
    let dim = log_prob_grads[0].len();
    let mut out = vec![0.0; dim];
    for (g, r) in log_prob_grads.iter().zip(rewards) {
        debug_assert_eq!(g.len(), dim);
        for (o, v) in out.iter_mut().zip(g) {
            *o += r * v;
        }
    }
    let n = log_prob_grads.len() as f64;
    for o in &mut out {
        *o /= n;
    }
    Ok(out)
}

/// Threshold the parsing network's snippet probabilities for every video of a
/// split.
pub fn predict_split(
    task: &TaskParams,
    split: &[VideoSample],
    threshold: f64,
) -> Result<BTreeMap<String, TemporalPrediction>> {
    let mut out = BTreeMap::new();
    for sample in split {
        let (snippets, _, _) = task.forward_sample(sample)?;
        let (audio, visual, av) = task::predict_temporal_labels(&snippets, threshold)?;
        out.insert(
            sample.id.clone(),
            TemporalPrediction {
                audio,
                visual,
                audio_visual: av,
            },
        );
    }
    Ok(out)
}

pub fn validate_on(
    task: &TaskParams,
    split: &[VideoSample],
    threshold: f64,
) -> Result<EvaluationReport> {
    let predictions = predict_split(task, split, threshold)?;
    metrics::evaluate(
        &predictions,
        split,
        metrics::DEFAULT_MIOU_THRESHOLD,
        Aggregation::Micro,
    )
}

struct SampleStep {
    revised_audio: Vec<u8>,
    revised_visual: Vec<u8>,
    degenerate: bool,
    inter_audio: InterReward,
    inter_visual: InterReward,
    grad_audio: Option<Vec<f64>>,
    grad_visual: Option<Vec<f64>>,
}

fn zero_inter() -> InterReward {
    InterReward {
        r1: 0.0,
        r2: 0.0,
        r_inter: 0.0,
    }
}

fn sample_inter_rewards(
    sample: &VideoSample,
    revised_audio: &[u8],
    revised_visual: &[u8],
    cfg: &TrainConfig,
) -> (InterReward, InterReward) {
    match cfg.inter_reward_source {
        InterRewardSource::PerModality => {
            let ia = rewards::inter_reward(
                &rewards::soften_labels(&sample.noisy_audio_label, cfg.label_smoothing),
                &rewards::to_distribution(revised_audio, cfg.distribution_floor),
                cfg.alpha1,
                cfg.alpha2,
            );
            let iv = rewards::inter_reward(
                &rewards::soften_labels(&sample.noisy_visual_label, cfg.label_smoothing),
                &rewards::to_distribution(revised_visual, cfg.distribution_floor),
                cfg.alpha1,
                cfg.alpha2,
            );
            (ia, iv)
        }
        InterRewardSource::WeakUnion => {
            let shared = rewards::inter_reward(
                &rewards::soften_labels(&sample.weak_label, cfg.label_smoothing),
                &rewards::to_distribution(
                    &data::union_of(revised_audio, revised_visual),
                    cfg.distribution_floor,
                ),
                cfg.alpha1,
                cfg.alpha2,
            );
            (shared, shared)
        }
    }
}

/// One iteration of the joint loop over a batch. Returns the step trace;
/// parameters and optimizer state are updated in place.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    train_split: &[VideoSample],
    batch: &EpisodeBatch,
    val_subsample: &[VideoSample],
    denoiser: &mut DenoiserParams,
    denoiser_opt: &mut Adam,
    task_net: &mut TaskParams,
    task_opt: &mut Adam,
    cfg: &TrainConfig,
    policy_rng: &mut ChaCha8Rng,
    position: (usize, usize, usize),
) -> Result<StepTrace> {
    let (epoch, episode, step) = position;
    let b = batch.indices.len();

    // 1. Actions and label revision per sample.
    let mut steps: Vec<SampleStep> = Vec::with_capacity(b);
    for idx in &batch.indices {
        let sample = &train_split[*idx];
        let (mask, grads) = if cfg.no_denoiser {
            (ActionMask::all_ones(sample.num_classes()), None)
        } else {
            let state = denoiser::build_states_with(sample, !cfg.no_initialized_labels)?;
            let (p, cache) = denoiser.forward(&state)?;
            let mask = denoiser::sample_actions(&p, policy_rng);
            let ga = denoiser.branch_log_prob_grad(&cache, &mask.audio, Branch::Audio);
            let gv = denoiser.branch_log_prob_grad(&cache, &mask.visual, Branch::Visual);
            (mask, Some((ga, gv)))
        };
        let (revised_audio, revised_visual, degenerate) =
            denoiser::revise_labels(&sample.noisy_audio_label, &sample.noisy_visual_label, &mask);
        let (inter_audio, inter_visual) = if cfg.no_inter_reward {
            (zero_inter(), zero_inter())
        } else {
            sample_inter_rewards(sample, &revised_audio, &revised_visual, cfg)
        };
        let (grad_audio, grad_visual) = match grads {
            Some((a, v)) => (Some(a), Some(v)),
            None => (None, None),
        };
        steps.push(SampleStep {
            revised_audio,
            revised_visual,
            degenerate,
            inter_audio,
            inter_visual,
            grad_audio,
            grad_visual,
        });
    }
    let degenerate_count = steps.iter().filter(|s| s.degenerate).count();

    // 2. Supervised update of the parsing network on the revised labels.
    let mut loss_video = 0.0;
    let mut loss_av = 0.0;
    let mut task_update_norm = 0.0;
    for _ in 0..cfg.task_steps_per_policy_step {
        let mut grad = vec![0.0; task_net.flat_len()];
        loss_video = 0.0;
        loss_av = 0.0;
        for (idx, entry) in batch.indices.iter().zip(&steps) {
            let sample = &train_split[*idx];
            let (_, _, cache) = task_net.forward_sample(sample)?;
            let union = data::union_of(&entry.revised_audio, &entry.revised_visual);
            let (lv, la, g) = task_net.loss_and_grad(
                &cache,
                &union,
                &entry.revised_audio,
                &entry.revised_visual,
                !cfg.modality_loss_only,
            );
            loss_video += lv / b as f64;
            loss_av += la / b as f64;
            for (acc, v) in grad.iter_mut().zip(&g) {
                *acc += v / b as f64;
            }
        }
        if !loss_video.is_finite() || !loss_av.is_finite() || !util::all_finite(grad.iter().copied())
        {
            return Err(Error::NonFinite(format!(
                "task loss/gradient at epoch {epoch} episode {episode} step {step}"
            )));
        }
        let mut flat = task_net.to_flat();
        task_update_norm = task_opt.step(&mut flat, &grad);
        task_net.set_from_flat(&flat);
    }
    if !task_net.is_finite() {
        return Err(Error::NonFinite(format!(
            "task parameters at epoch {epoch} episode {episode} step {step}"
        )));
    }

    // 3.-4. Validation feedback and per-branch terminal rewards.
    let report = validate_on(task_net, val_subsample, cfg.threshold)?;
    let r_term_audio = rewards::terminal_reward(&report, Branch::Audio, cfg.terminal_scale)?;
    let r_term_visual = rewards::terminal_reward(&report, Branch::Visual, cfg.terminal_scale)?;

    // Batch-mean inter rewards over non-degenerate samples (for the batch
    // credit mode and for the trace).
    let live = (b - degenerate_count).max(1) as f64;
    let mean_inter = |pick: fn(&SampleStep) -> InterReward| -> InterReward {
        let mut acc = zero_inter();
        for s in steps.iter().filter(|s| !s.degenerate) {
            let r = pick(s);
            acc.r1 += r.r1 / live;
            acc.r2 += r.r2 / live;
            acc.r_inter += r.r_inter / live;
        }
        acc
    };
    let inter_audio_mean = mean_inter(|s| s.inter_audio);
    let inter_visual_mean = mean_inter(|s| s.inter_visual);

    // 5.-6. Per-branch reward weighting of the score-function gradients.
    let mut denoiser_update_norm = 0.0;
    if !cfg.no_denoiser {
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(2 * b);
        let mut reward_weights: Vec<f64> = Vec::with_capacity(2 * b);
        for entry in &mut steps {
            let (ra, rv) = if entry.degenerate {
                (rewards::DEGENERATE_REWARD, rewards::DEGENERATE_REWARD)
            } else {
                match cfg.credit_mode {
                    CreditMode::Batch => (
                        r_term_audio + inter_audio_mean.r_inter,
                        r_term_visual + inter_visual_mean.r_inter,
                    ),
                    CreditMode::PerSample => (
                        r_term_audio + entry.inter_audio.r_inter,
                        r_term_visual + entry.inter_visual.r_inter,
                    ),
                }
            };
            grads.push(entry.grad_audio.take().expect("policy grads present"));
            reward_weights.push(ra);
            grads.push(entry.grad_visual.take().expect("policy grads present"));
            reward_weights.push(rv);
        }
        let ascent = reinforce_gradient_estimate(&grads, &reward_weights)?;
        if !util::all_finite(ascent.iter().copied()) {
            return Err(Error::NonFinite(format!(
                "policy gradient at epoch {epoch} episode {episode} step {step}"
            )));
        }
        // Adam minimizes, the objective is maximized: descend on -gradient.
        let descent: Vec<f64> = ascent.iter().map(|g| -g).collect();
        let mut flat = denoiser.to_flat();
        denoiser_update_norm = denoiser_opt.step(&mut flat, &descent);
        denoiser.set_from_flat(&flat);
        if !denoiser.is_finite() {
            return Err(Error::NonFinite(format!(
                "denoiser parameters at epoch {epoch} episode {episode} step {step}"
            )));
        }
    }

    let all_degenerate = degenerate_count == b;
    let bundle = |inter: InterReward, r_term: f64| RewardBundle {
        r1: inter.r1,
        r2: inter.r2,
        r_inter: inter.r_inter,
        r_terminal: r_term,
        total: if all_degenerate {
            rewards::DEGENERATE_REWARD
        } else {
            r_term + inter.r_inter
        },
        degenerate: all_degenerate,
    };
    Ok(StepTrace {
        epoch,
        episode,
        step,
        audio: bundle(inter_audio_mean, r_term_audio),
        visual: bundle(inter_visual_mean, r_term_visual),
        degenerate_count,
        loss_video,
        loss_av,
        denoiser_update_norm,
        task_update_norm,
        val: ValSnapshot::from_report(&report),
    })
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub denoiser: DenoiserParams,
    pub task: TaskParams,
    pub best_denoiser: DenoiserParams,
    pub best_task: TaskParams,
    pub best_epoch: usize,
    pub best_score: f64,
    pub traces: Vec<EpisodeTrace>,
    pub final_validation: EvaluationReport,
    pub epochs_run: usize,
}

/// Full training run per the joint algorithm: overlapping batches in
/// fixed-length episodes, per-step validation feedback, patience-based
/// convergence on the validation segment-level Type@AV, and best-checkpoint
/// tracking.
pub fn fit(dataset: &Dataset, cfg: &TrainConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::EmptyDataset("train split is empty".into()));
    }
    if dataset.validation.is_empty() {
        return Err(Error::EmptyDataset("validation split is empty".into()));
    }
    let d_audio = dataset.train[0].audio.dim();
    let d_visual = dataset.train[0].visual.dim();
    let classes = dataset.num_classes;

    let den_cfg = DenoiserConfig {
        d_audio,
        d_visual,
        classes,
        learned_projections: cfg.learned_projections,
        shared_head: cfg.shared_policy_head,
        include_labels: !cfg.no_initialized_labels,
    };
    if d_audio != d_visual {
        return Err(Error::Config(format!(
            "the parsing network shares its classification head across modalities and needs equal feature dims, got {d_audio} and {d_visual}"
        )));
    }
    let task_cfg = TaskConfig {
        feature_dim: d_audio,
        classes,
        learned_projections: cfg.learned_projections,
        positive_only_video_loss: cfg.positive_only_video_loss,
    };

    let mut den_rng = util::seeded_rng(cfg.seed, "denoiser-init");
    let mut task_rng = util::seeded_rng(cfg.seed, "task-init");
    let mut denoiser = DenoiserParams::init(den_cfg, &mut den_rng)?;
    let mut task_net = TaskParams::init(task_cfg, &mut task_rng)?;
    let mut den_opt = Adam::new(cfg.denoiser_lr, denoiser.flat_len());
    let mut task_opt = Adam::new(cfg.task_lr, task_net.flat_len());

    if cfg.max_epochs == 0 {
        let final_validation = validate_on(&task_net, &dataset.validation, cfg.threshold)?;
        return Ok(RunArtifacts {
            best_denoiser: denoiser.clone(),
            best_task: task_net.clone(),
            denoiser,
            task: task_net,
            best_epoch: 0,
            best_score: final_validation.segment.type_at_av,
            traces: Vec::new(),
            final_validation,
            epochs_run: 0,
        });
    }
    if cfg.batch_size > dataset.train.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds train split size {}",
            cfg.batch_size,
            dataset.train.len()
        )));
    }

    // Fixed validation subsample for the per-step reward signal.
    let mut val_rng = util::seeded_rng(cfg.seed, "validation-subsample");
    let sub_len = ((dataset.validation.len() as f64 * cfg.validation_fraction).ceil() as usize)
        .clamp(1, dataset.validation.len());
    let mut sub_idx = rand::seq::index::sample(&mut val_rng, dataset.validation.len(), sub_len)
        .into_vec();
    sub_idx.sort_unstable();
    let val_subsample: Vec<VideoSample> = sub_idx
        .iter()
        .map(|i| dataset.validation[*i].clone())
        .collect();

    if cfg.warm_start {
        warm_start_task(dataset, cfg, &mut task_net, &mut task_opt)?;
    }

    let episodes_per_epoch = if cfg.episodes_per_epoch > 0 {
        cfg.episodes_per_epoch
    } else {
        let per_pass =
            dataset.train.len() as f64 / (cfg.batch_size as f64 * cfg.episode_len as f64);
        per_pass.ceil().max(1.0) as usize
    };

    let mut batch_rng = util::seeded_rng(cfg.seed, "episode-batches");
    let mut policy_rng = util::seeded_rng(cfg.seed, "policy-actions");

    let mut traces: Vec<EpisodeTrace> = Vec::new();
    let mut global_episode = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_denoiser = denoiser.clone();
    let mut best_task = task_net.clone();
    let mut stale_epochs = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..cfg.max_epochs {
        for _ in 0..episodes_per_epoch {
            let mut episode_trace = EpisodeTrace {
                episode: global_episode,
                steps: Vec::with_capacity(cfg.episode_len),
            };
            let mut previous: Option<EpisodeBatch> = None;
            for step in 0..cfg.episode_len {
                let batch = data::sample_episode_batch(
                    &dataset.train,
                    cfg.batch_size,
                    previous.as_ref(),
                    &mut batch_rng,
                )?;
                let trace = train_step(
                    &dataset.train,
                    &batch,
                    &val_subsample,
                    &mut denoiser,
                    &mut den_opt,
                    &mut task_net,
                    &mut task_opt,
                    cfg,
                    &mut policy_rng,
                    (epoch, global_episode, step),
                )?;
                episode_trace.steps.push(trace);
                previous = Some(batch);
            }
            traces.push(episode_trace);
            global_episode += 1;
        }
        epochs_run = epoch + 1;

        // Full validation once per epoch drives convergence and the best
        // checkpoint.
        let report = validate_on(&task_net, &dataset.validation, cfg.threshold)?;
        let score = report.segment.type_at_av;
        if score > best_score + cfg.min_improvement {
            best_score = score;
            best_epoch = epoch;
            best_denoiser = denoiser.clone();
            best_task = task_net.clone();
            stale_epochs = 0;
        } else {
            if score > best_score {
                // Track the best parameters even for sub-threshold gains.
                best_score = score;
                best_epoch = epoch;
                best_denoiser = denoiser.clone();
                best_task = task_net.clone();
            }
            stale_epochs += 1;
            if stale_epochs >= cfg.patience && epoch + 1 >= cfg.min_epochs {
                break;
            }
        }
    }

    let final_validation = validate_on(&task_net, &dataset.validation, cfg.threshold)?;
    Ok(RunArtifacts {
        denoiser,
        task: task_net,
        best_denoiser,
        best_task,
        best_epoch,
        best_score,
        traces,
        final_validation,
        epochs_run,
    })
}

/// One epoch of task-only training on the raw weak labels so the early
/// validation feedback is informative.
fn warm_start_task(
    dataset: &Dataset,
    cfg: &TrainConfig,
    task_net: &mut TaskParams,
    task_opt: &mut Adam,
) -> Result<()> {
    let mut rng = util::seeded_rng(cfg.seed, "warm-start");
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    for chunk in order.chunks(cfg.batch_size) {
        let mut grad = vec![0.0; task_net.flat_len()];
        for idx in chunk {
            let sample = &dataset.train[*idx];
            let (_, _, cache) = task_net.forward_sample(sample)?;
            let (_, _, g) = task_net.loss_and_grad(
                &cache,
                &sample.weak_label,
                &sample.noisy_audio_label,
                &sample.noisy_visual_label,
                !cfg.modality_loss_only,
            );
            for (acc, v) in grad.iter_mut().zip(&g) {
                *acc += v / chunk.len() as f64;
            }
        }
        if !util::all_finite(grad.iter().copied()) {
            return Err(Error::NonFinite("warm-start gradient".into()));
        }
        let mut flat = task_net.to_flat();
        task_opt.step(&mut flat, &grad);
        task_net.set_from_flat(&flat);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Denoiser quality measurement
// ---------------------------------------------------------------------------

/// F-score of a mask assignment at identifying injected labels. Positives are
/// the (sample, modality, class) slots whose noisy label is 1 but whose clean
/// video-level label is 0; a slot counts as flagged when the mask removes it.
fn identification_counts(
    split: &[VideoSample],
    mut mask_for: impl FnMut(&VideoSample) -> Result<ActionMask>,
) -> Result<metrics::Counts> {
    let mut counts = metrics::Counts::default();
    let mut saw_clean = false;
    for sample in split {
        let (Some(clean_a), Some(clean_v)) = (
            sample.clean_video_label(Modality::Audio),
            sample.clean_video_label(Modality::Visual),
        ) else {
            continue;
        };
        saw_clean = true;
        let mask = mask_for(sample)?;
        for (noisy, clean, actions) in [
            (&sample.noisy_audio_label, &clean_a, &mask.audio),
            (&sample.noisy_visual_label, &clean_v, &mask.visual),
        ] {
            for c in 0..noisy.len() {
                if noisy[c] == 0 {
                    continue;
                }
                let is_noise = clean[c] == 0;
                let flagged = actions[c] == 0;
                match (flagged, is_noise) {
                    (true, true) => counts.tp += 1,
                    (true, false) => counts.fp += 1,
                    (false, true) => counts.fn_ += 1,
                    (false, false) => {}
                }
            }
        }
    }
    if !saw_clean {
        return Err(Error::MissingMetric(
            "noise identification needs a split with clean annotations".into(),
        ));
    }
    Ok(counts)
}

/// Identification F-score of the trained policy under greedy (p >= 1/2 keeps)
/// decisions.
pub fn noise_identification_f1(
    denoiser: &DenoiserParams,
    split: &[VideoSample],
    include_labels: bool,
) -> Result<f64> {
    let counts = identification_counts(split, |sample| {
        let state = denoiser::build_states_with(sample, include_labels)?;
        let (p, _) = denoiser.forward(&state)?;
        Ok(denoiser::greedy_actions(&p))
    })?;
    Ok(counts.f1())
}

/// Identification F-score of uniform Bernoulli(1/2) masks, averaged over
/// `draws` seeded draws.
pub fn random_mask_identification_f1(
    split: &[VideoSample],
    seed: u64,
    draws: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for draw in 0..draws.max(1) {
        let mut rng = util::seeded_rng(seed, &format!("random-mask-{draw}"));
        let counts = identification_counts(split, |sample| {
            let c = sample.num_classes();
            Ok(ActionMask {
                audio: (0..c).map(|_| u8::from(rng.random::<bool>())).collect(),
                visual: (0..c).map(|_| u8::from(rng.random::<bool>())).collect(),
            })
        })?;
        total += counts.f1();
    }
    Ok(total / draws.max(1) as f64)
}

// ---------------------------------------------------------------------------
// Trace serialization
// ---------------------------------------------------------------------------

pub const TRACE_HEADER: [&str; 24] = [
    "epoch",
    "episode",
    "step",
    "branch",
    "r1",
    "r2",
    "r_inter",
    "r_terminal",
    "total",
    "degenerate_count",
    "loss_video",
    "loss_av",
    "denoiser_update_norm",
    "task_update_norm",
    "seg_audio",
    "seg_visual",
    "seg_av",
    "seg_type",
    "seg_event",
    "ev_audio",
    "ev_visual",
    "ev_av",
    "ev_type",
    "ev_event",
];

/// Write traces as CSV, one row per (step, branch).
pub fn write_traces(path: &Path, traces: &[EpisodeTrace]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| {
        Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
        )
    })?;
    writer
        .write_record(TRACE_HEADER)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    for episode in traces {
        for s in &episode.steps {
            for (branch, bundle) in [("audio", &s.audio), ("visual", &s.visual)] {
                let row = [
                    s.epoch.to_string(),
                    s.episode.to_string(),
                    s.step.to_string(),
                    branch.to_string(),
                    bundle.r1.to_string(),
                    bundle.r2.to_string(),
                    bundle.r_inter.to_string(),
                    bundle.r_terminal.to_string(),
                    bundle.total.to_string(),
                    s.degenerate_count.to_string(),
                    s.loss_video.to_string(),
                    s.loss_av.to_string(),
                    s.denoiser_update_norm.to_string(),
                    s.task_update_norm.to_string(),
                    s.val.seg_audio.to_string(),
                    s.val.seg_visual.to_string(),
                    s.val.seg_av.to_string(),
                    s.val.seg_type.to_string(),
                    s.val.seg_event.to_string(),
                    s.val.ev_audio.to_string(),
                    s.val.ev_visual.to_string(),
                    s.val.ev_av.to_string(),
                    s.val.ev_type.to_string(),
                    s.val.ev_event.to_string(),
                ];
                writer
                    .write_record(&row)
                    .map_err(|e| Error::parse(path, 0, e.to_string()))?;
            }
        }
    }
    writer
        .flush()
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}
