//! Evaluation protocol: segment-level and event-level F-scores for the audio,
//! visual, and joint audio-visual tracks, plus the Type@AV (mean of the three)
//! and Event@AV (pooled audio+visual instances) aggregates.
//!
//! Events are maximal contiguous runs of positive segments per class; an
//! event-level match requires segment-set IoU of at least the mIoU threshold
//! (0.5 by default) between same-class spans, assigned greedily in descending
//! IoU order. Aggregation is micro (pooled counts over the whole split) with
//! a per-video macro alternative behind a flag.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::VideoSample;
use crate::error::{Error, Result};

pub const DEFAULT_MIOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Track {
    Audio,
    Visual,
    AudioVisual,
}

/// Contiguous event span, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventSpan {
    pub class_id: usize,
    pub start: usize,
    pub end: usize,
    pub modality: Track,
}

impl EventSpan {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Micro-average F-score counts. The 0/0 convention: F = 1 when both sides
/// are empty, 0 when exactly one is.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn f1(&self) -> f64 {
        if self.tp == 0 && self.fp == 0 && self.fn_ == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / (2.0 * self.tp as f64 + self.fp as f64 + self.fn_ as f64)
        }
    }
}

/// Cell-wise counts over a T x C binary matrix pair.
pub fn segment_counts(pred: &Array2<u8>, truth: &Array2<u8>) -> Result<Counts> {
    if pred.dim() != truth.dim() {
        return Err(Error::Shape(format!(
            "segment matrices disagree: {:?} vs {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    let mut counts = Counts::default();
    for (p, t) in pred.iter().zip(truth.iter()) {
        match (*p != 0, *t != 0) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, true) => counts.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(counts)
}

/// Micro F-score over all (segment, class) cells.
pub fn segment_f1(pred: &Array2<u8>, truth: &Array2<u8>) -> Result<f64> {
    Ok(segment_counts(pred, truth)?.f1())
}

/// Per-class cell counts.
pub fn segment_counts_per_class(pred: &Array2<u8>, truth: &Array2<u8>) -> Result<Vec<Counts>> {
    if pred.dim() != truth.dim() {
        return Err(Error::Shape("segment matrices disagree".into()));
    }
    let mut out = vec![Counts::default(); pred.ncols()];
    for c in 0..pred.ncols() {
        for t in 0..pred.nrows() {
            match (pred[[t, c]] != 0, truth[[t, c]] != 0) {
                (true, true) => out[c].tp += 1,
                (true, false) => out[c].fp += 1,
                (false, true) => out[c].fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(out)
}

/// Maximal contiguous runs of positive segments, per class.
pub fn extract_events(segments: &Array2<u8>, modality: Track) -> Vec<EventSpan> {
    let mut events = Vec::new();
    for c in 0..segments.ncols() {
        let mut start = None;
        for t in 0..segments.nrows() {
            let on = segments[[t, c]] != 0;
            match (on, start) {
                (true, None) => start = Some(t),
                (false, Some(s)) => {
                    events.push(EventSpan {
                        class_id: c,
                        start: s,
                        end: t - 1,
                        modality,
                    });
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            events.push(EventSpan {
                class_id: c,
                start: s,
                end: segments.nrows() - 1,
                modality,
            });
        }
    }
    events
}

/// Segment-set IoU of two spans (intersection and union of their inclusive
/// segment ranges).
pub fn span_iou(a: &EventSpan, b: &EventSpan) -> f64 {
    let inter_start = a.start.max(b.start);
    let inter_end = a.end.min(b.end);
    let intersection = if inter_start > inter_end {
        0
    } else {
        inter_end - inter_start + 1
    };
    let union = a.len() + b.len() - intersection;
    intersection as f64 / union as f64
}

/// Greedy one-to-one matching of same-class spans at the given IoU threshold:
/// candidates sorted by IoU descending, then earlier truth start, then lower
/// class id, then earlier prediction start.
pub fn event_match_counts(
    pred_events: &[EventSpan],
    truth_events: &[EventSpan],
    miou_threshold: f64,
) -> Counts {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, p) in pred_events.iter().enumerate() {
        for (ti, t) in truth_events.iter().enumerate() {
            if p.class_id == t.class_id {
                let iou = span_iou(p, t);
                if iou >= miou_threshold {
                    candidates.push((iou, pi, ti));
                }
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| truth_events[a.2].start.cmp(&truth_events[b.2].start))
            .then_with(|| truth_events[a.2].class_id.cmp(&truth_events[b.2].class_id))
            .then_with(|| pred_events[a.1].start.cmp(&pred_events[b.1].start))
    });
    let mut pred_used = vec![false; pred_events.len()];
    let mut truth_used = vec![false; truth_events.len()];
    let mut tp = 0u64;
    for (_, pi, ti) in candidates {
        if !pred_used[pi] && !truth_used[ti] {
            pred_used[pi] = true;
            truth_used[ti] = true;
            tp += 1;
        }
    }
    Counts {
        tp,
        fp: pred_events.len() as u64 - tp,
        fn_: truth_events.len() as u64 - tp,
    }
}

pub fn event_f1(pred_events: &[EventSpan], truth_events: &[EventSpan], miou_threshold: f64) -> f64 {
    event_match_counts(pred_events, truth_events, miou_threshold).f1()
}

/// Per-video temporal decisions for the three tracks.
#[derive(Debug, Clone)]
pub struct TemporalPrediction {
    pub audio: Array2<u8>,
    pub visual: Array2<u8>,
    pub audio_visual: Array2<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerClassScores {
    pub class_id: usize,
    pub audio: f64,
    pub visual: f64,
    pub audio_visual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelReport {
    pub audio: f64,
    pub visual: f64,
    pub audio_visual: f64,
    pub type_at_av: f64,
    pub event_at_av: f64,
    pub per_class: Vec<PerClassScores>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub segment: LevelReport,
    pub event: LevelReport,
}

impl EvaluationReport {
    /// Fixed-width table mirroring the usual A/V/AV/Type/Event column layout.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14}{:>8}{:>8}{:>8}{:>8}{:>8}\n",
            "level", "A", "V", "AV", "Type", "Event"
        ));
        for (name, level) in [("segment", &self.segment), ("event", &self.event)] {
            out.push_str(&format!(
                "{:<14}{:>8.4}{:>8.4}{:>8.4}{:>8.4}{:>8.4}\n",
                name,
                level.audio,
                level.visual,
                level.audio_visual,
                level.type_at_av,
                level.event_at_av
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Pool counts over the whole split before computing each F-score.
    Micro,
    /// Average per-video F-scores.
    Macro,
}

pub fn evaluate(
    predictions: &BTreeMap<String, TemporalPrediction>,
    split: &[VideoSample],
    miou_threshold: f64,
    aggregation: Aggregation,
) -> Result<EvaluationReport> {
    if split.is_empty() {
        return Err(Error::EmptyDataset("evaluation split is empty".into()));
    }
    let classes = split[0].num_classes();

    // Micro accumulators.
    let mut seg = TrackCounts::default();
    let mut ev = TrackCounts::default();
    let mut seg_per_class = vec![TrackCounts::default(); classes];
    let mut ev_per_class = vec![TrackCounts::default(); classes];
    // Macro accumulators (per-video F sums).
    let mut macro_seg = TrackSums::default();
    let mut macro_ev = TrackSums::default();

    for sample in split {
        let truth_a = sample.clean_audio_segments.as_ref().ok_or_else(|| {
            Error::MissingMetric(format!("sample {} lacks clean audio annotations", sample.id))
        })?;
        let truth_v = sample.clean_visual_segments.as_ref().ok_or_else(|| {
            Error::MissingMetric(format!(
                "sample {} lacks clean visual annotations",
                sample.id
            ))
        })?;
        let truth_av = truth_a * truth_v;
        let pred = predictions
            .get(&sample.id)
            .ok_or_else(|| Error::MissingPrediction(sample.id.clone()))?;

        let seg_a = segment_counts(&pred.audio, truth_a)?;
        let seg_v = segment_counts(&pred.visual, truth_v)?;
        let seg_av = segment_counts(&pred.audio_visual, &truth_av)?;
        seg.audio.add(seg_a);
        seg.visual.add(seg_v);
        seg.audio_visual.add(seg_av);
        macro_seg.add(seg_a.f1(), seg_v.f1(), seg_av.f1(), {
            let mut pooled = seg_a;
            pooled.add(seg_v);
            pooled.f1()
        });

        for (c, counts) in segment_counts_per_class(&pred.audio, truth_a)?.into_iter().enumerate() {
            seg_per_class[c].audio.add(counts);
        }
        for (c, counts) in segment_counts_per_class(&pred.visual, truth_v)?.into_iter().enumerate() {
            seg_per_class[c].visual.add(counts);
        }
        for (c, counts) in segment_counts_per_class(&pred.audio_visual, &truth_av)?
            .into_iter()
            .enumerate()
        {
            seg_per_class[c].audio_visual.add(counts);
        }

        let pe_a = extract_events(&pred.audio, Track::Audio);
        let pe_v = extract_events(&pred.visual, Track::Visual);
        let pe_av = extract_events(&pred.audio_visual, Track::AudioVisual);
        let te_a = extract_events(truth_a, Track::Audio);
        let te_v = extract_events(truth_v, Track::Visual);
        let te_av = extract_events(&truth_av, Track::AudioVisual);

        let ev_a = event_match_counts(&pe_a, &te_a, miou_threshold);
        let ev_v = event_match_counts(&pe_v, &te_v, miou_threshold);
        let ev_av = event_match_counts(&pe_av, &te_av, miou_threshold);
        ev.audio.add(ev_a);
        ev.visual.add(ev_v);
        ev.audio_visual.add(ev_av);
        macro_ev.add(ev_a.f1(), ev_v.f1(), ev_av.f1(), {
            let mut pooled = ev_a;
            pooled.add(ev_v);
            pooled.f1()
        });

        for c in 0..classes {
            let filter = |events: &[EventSpan]| -> Vec<EventSpan> {
                events.iter().copied().filter(|e| e.class_id == c).collect()
            };
            ev_per_class[c]
                .audio
                .add(event_match_counts(&filter(&pe_a), &filter(&te_a), miou_threshold));
            ev_per_class[c]
                .visual
                .add(event_match_counts(&filter(&pe_v), &filter(&te_v), miou_threshold));
            ev_per_class[c].audio_visual.add(event_match_counts(
                &filter(&pe_av),
                &filter(&te_av),
                miou_threshold,
            ));
        }
    }

    let n = split.len() as f64;
    let build = |counts: &TrackCounts, sums: &TrackSums, per_class: &[TrackCounts]| -> LevelReport {
        let (audio, visual, audio_visual, event_at_av) = match aggregation {
            Aggregation::Micro => {
                let mut pooled = counts.audio;
                pooled.add(counts.visual);
                (
                    counts.audio.f1(),
                    counts.visual.f1(),
                    counts.audio_visual.f1(),
                    pooled.f1(),
                )
            }
            Aggregation::Macro => (
                sums.audio / n,
                sums.visual / n,
                sums.audio_visual / n,
                sums.pooled / n,
            ),
        };
        LevelReport {
            audio,
            visual,
            audio_visual,
            type_at_av: (audio + visual + audio_visual) / 3.0,
            event_at_av,
            per_class: per_class
                .iter()
                .enumerate()
                .map(|(class_id, c)| PerClassScores {
                    class_id,
                    audio: c.audio.f1(),
                    visual: c.visual.f1(),
                    audio_visual: c.audio_visual.f1(),
                })
                .collect(),
        }
    };
    Ok(EvaluationReport {
        segment: build(&seg, &macro_seg, &seg_per_class),
        event: build(&ev, &macro_ev, &ev_per_class),
    })
}

#[derive(Debug, Clone, Copy, Default)]
struct TrackCounts {
    audio: Counts,
    visual: Counts,
    audio_visual: Counts,
}

#[derive(Debug, Clone, Copy, Default)]
struct TrackSums {
    audio: f64,
    visual: f64,
    audio_visual: f64,
    pooled: f64,
}

impl TrackSums {
    fn add(&mut self, a: f64, v: f64, av: f64, pooled: f64) {
        self.audio += a;
        self.visual += v;
        self.audio_visual += av;
        self.pooled += pooled;
    }
}
