//! Shared helpers for the integration suites, including an independent
//! brute-force re-implementation of the evaluation protocol used as the
//! oracle for the metrics equivalence checks.

use std::collections::{BTreeMap, HashSet};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use avparse::data::{FeatureSequence, Modality, VideoSample};
use avparse::metrics::{EvaluationReport, LevelReport, PerClassScores, TemporalPrediction};

/// Straight-line micro-F over counted cells.
fn f_from(tp: u64, fp: u64, fnn: u64) -> f64 {
    if tp == 0 && fp == 0 && fnn == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fnn as f64)
    }
}

#[derive(Default, Clone, Copy)]
struct Tally {
    tp: u64,
    fp: u64,
    fnn: u64,
}

impl Tally {
    fn add(&mut self, other: Tally) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fnn += other.fnn;
    }

    fn f(&self) -> f64 {
        f_from(self.tp, self.fp, self.fnn)
    }
}

fn cells(pred: &Array2<u8>, truth: &Array2<u8>, class: Option<usize>) -> Tally {
    let mut t = Tally::default();
    for i in 0..pred.nrows() {
        for j in 0..pred.ncols() {
            if let Some(c) = class {
                if j != c {
                    continue;
                }
            }
            match (pred[[i, j]] != 0, truth[[i, j]] != 0) {
                (true, true) => t.tp += 1,
                (true, false) => t.fp += 1,
                (false, true) => t.fnn += 1,
                (false, false) => {}
            }
        }
    }
    t
}

#[derive(Clone)]
struct Span {
    class: usize,
    segments: HashSet<usize>,
    start: usize,
}

fn spans_of(m: &Array2<u8>, class: Option<usize>) -> Vec<Span> {
    let mut spans = Vec::new();
    for j in 0..m.ncols() {
        if let Some(c) = class {
            if j != c {
                continue;
            }
        }
        let mut current: Option<Span> = None;
        for i in 0..m.nrows() {
            if m[[i, j]] != 0 {
                match current.as_mut() {
                    Some(s) => {
                        s.segments.insert(i);
                    }
                    None => {
                        let mut set = HashSet::new();
                        set.insert(i);
                        current = Some(Span {
                            class: j,
                            segments: set,
                            start: i,
                        });
                    }
                }
            } else if let Some(s) = current.take() {
                spans.push(s);
            }
        }
        if let Some(s) = current.take() {
            spans.push(s);
        }
    }
    spans
}

fn set_iou(a: &HashSet<usize>, b: &HashSet<usize>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    inter as f64 / union as f64
}

/// Greedy matching, re-derived by repeated extraction of the best remaining
/// pair: highest IoU, then earliest truth start, then lowest class, then
/// earliest prediction start.
fn match_events(pred: &[Span], truth: &[Span], threshold: f64) -> Tally {
    let mut pred_used = vec![false; pred.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut tp = 0u64;
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for (pi, p) in pred.iter().enumerate() {
            if pred_used[pi] {
                continue;
            }
            for (ti, t) in truth.iter().enumerate() {
                if truth_used[ti] || p.class != t.class {
                    continue;
                }
                let iou = set_iou(&p.segments, &t.segments);
                if iou < threshold {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((biou, bpi, bti)) => {
                        if iou != biou {
                            iou > biou
                        } else if truth[ti].start != truth[bti].start {
                            truth[ti].start < truth[bti].start
                        } else if truth[ti].class != truth[bti].class {
                            truth[ti].class < truth[bti].class
                        } else {
                            pred[pi].start < pred[bpi].start
                        }
                    }
                };
                if better {
                    best = Some((iou, pi, ti));
                }
            }
        }
        match best {
            Some((_, pi, ti)) => {
                pred_used[pi] = true;
                truth_used[ti] = true;
                tp += 1;
            }
            None => break,
        }
    }
    Tally {
        tp,
        fp: pred.len() as u64 - tp,
        fnn: truth.len() as u64 - tp,
    }
}

/// Independent evaluation over a split; micro aggregation only.
pub fn brute_force_evaluate(
    predictions: &BTreeMap<String, TemporalPrediction>,
    split: &[VideoSample],
    miou_threshold: f64,
) -> EvaluationReport {
    let classes = split[0].num_classes();
    let mut seg = [Tally::default(); 3];
    let mut ev = [Tally::default(); 3];
    let mut seg_class = vec![[Tally::default(); 3]; classes];
    let mut ev_class = vec![[Tally::default(); 3]; classes];

    for sample in split {
        let truth_a = sample.clean_audio_segments.clone().unwrap();
        let truth_v = sample.clean_visual_segments.clone().unwrap();
        let mut truth_av = truth_a.clone();
        for (o, v) in truth_av.iter_mut().zip(truth_v.iter()) {
            *o = u8::from(*o != 0 && *v != 0);
        }
        let pred = &predictions[&sample.id];
        for (k, (p, t)) in [
            (&pred.audio, &truth_a),
            (&pred.visual, &truth_v),
            (&pred.audio_visual, &truth_av),
        ]
        .into_iter()
        .enumerate()
        {
            seg[k].add(cells(p, t, None));
            ev[k].add(match_events(&spans_of(p, None), &spans_of(t, None), miou_threshold));
            for c in 0..classes {
                seg_class[c][k].add(cells(p, t, Some(c)));
                ev_class[c][k].add(match_events(
                    &spans_of(p, Some(c)),
                    &spans_of(t, Some(c)),
                    miou_threshold,
                ));
            }
        }
    }

    let level = |tracks: [Tally; 3], per_class: &[[Tally; 3]]| -> LevelReport {
        let audio = tracks[0].f();
        let visual = tracks[1].f();
        let audio_visual = tracks[2].f();
        let mut pooled = tracks[0];
        pooled.add(tracks[1]);
        LevelReport {
            audio,
            visual,
            audio_visual,
            type_at_av: (audio + visual + audio_visual) / 3.0,
            event_at_av: pooled.f(),
            per_class: per_class
                .iter()
                .enumerate()
                .map(|(class_id, t)| PerClassScores {
                    class_id,
                    audio: t[0].f(),
                    visual: t[1].f(),
                    audio_visual: t[2].f(),
                })
                .collect(),
        }
    };
    EvaluationReport {
        segment: level(seg, &seg_class),
        event: level(ev, &ev_class),
    }
}

/// Random annotated sample plus a random prediction for oracle testing.
pub fn random_instance(
    id: &str,
    segments: usize,
    classes: usize,
    density: f64,
    rng: &mut ChaCha8Rng,
) -> (VideoSample, TemporalPrediction) {
    let random_matrix = |rng: &mut ChaCha8Rng| -> Array2<u8> {
        Array2::from_shape_fn((segments, classes), |_| {
            u8::from(rng.random::<f64>() < density)
        })
    };
    let truth_a = random_matrix(rng);
    let truth_v = random_matrix(rng);
    let label_a: Vec<u8> = (0..classes)
        .map(|c| u8::from((0..segments).any(|t| truth_a[[t, c]] != 0)))
        .collect();
    let mut label_v: Vec<u8> = (0..classes)
        .map(|c| u8::from((0..segments).any(|t| truth_v[[t, c]] != 0)))
        .collect();
    if label_a.iter().chain(&label_v).all(|v| *v == 0) {
        label_v[0] = 1;
    }
    let pred_a = random_matrix(rng);
    let pred_v = random_matrix(rng);
    let sample = VideoSample {
        id: id.to_string(),
        audio: FeatureSequence {
            values: Array2::zeros((segments, 2)),
            modality: Modality::Audio,
        },
        visual: FeatureSequence {
            values: Array2::zeros((segments, 2)),
            modality: Modality::Visual,
        },
        weak_label: avparse::data::union_of(&label_a, &label_v),
        noisy_audio_label: label_a,
        noisy_visual_label: label_v,
        clean_audio_segments: Some(truth_a),
        clean_visual_segments: Some(truth_v),
    };
    let prediction = TemporalPrediction {
        audio_visual: &pred_a * &pred_v,
        audio: pred_a,
        visual: pred_v,
    };
    (sample, prediction)
}
