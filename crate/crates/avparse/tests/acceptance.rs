//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (run with `cargo test --test acceptance -- --nocapture` to see them all).
//!
//! Criteria 7, 8, and 10 share one set of end-to-end training runs (three
//! dataset seeds, four arms each) computed once per process.

mod common;

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use avparse::data::{generate_dataset, Dataset, NoiseSpec, SynthConfig, VideoSample};
use avparse::denoiser::{
    self, ActionMask, Branch, DenoiserConfig, DenoiserParams, PolicyOutput,
};
use avparse::metrics::{self, Aggregation};
use avparse::rewards::{self, SoftLabel};
use avparse::task::{TaskConfig, TaskParams};
use avparse::trainer::{
    self, fit, noise_identification_f1, random_mask_identification_f1, reinforce_gradient_estimate,
    EpisodeTrace, TrainConfig,
};

fn pass(criterion: u32, name: &str, details: &str) {
    println!("ACCEPTANCE {criterion:02} ({name}): PASS — {details}");
}

fn fail(criterion: u32, name: &str, details: &str) -> String {
    let line = format!("ACCEPTANCE {criterion:02} ({name}): FAIL — {details}");
    println!("{line}");
    line
}

// ---------------------------------------------------------------------------
// 1. Reward algebra
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_reward_algebra() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked_equal = 0usize;
    for trial in 0..10_000 {
        let c = rng.random_range(2..=10);
        let y_a: Vec<u8> = (0..c).map(|_| u8::from(rng.random::<bool>())).collect();
        let y_b: Vec<u8> = (0..c).map(|_| u8::from(rng.random::<bool>())).collect();
        let p = rewards::soften_labels(&y_a, 0.1);
        let q = if trial % 10 == 0 {
            checked_equal += 1;
            SoftLabel {
                dist: p.dist.clone(),
            }
        } else {
            rewards::to_distribution(&y_b, 0.01)
        };
        let r = rewards::inter_reward(&p, &q, 0.6, 0.4);
        assert!(r.r1 > 0.0 && r.r1 <= 1.0, "r1 out of range: {}", r.r1);
        assert!(r.r2 > 0.0 && r.r2 <= 1.0 + 1e-12, "r2 out of range: {}", r.r2);
        let inputs_equal = p.dist == q.dist;
        let r1_is_one = (r.r1 - 1.0).abs() <= 1e-9;
        assert_eq!(
            inputs_equal, r1_is_one,
            "r1==1 must hold exactly when inputs are equal (r1={}, equal={})",
            r.r1, inputs_equal
        );
        if inputs_equal {
            assert_eq!(r.r_inter, 1.0, "identical inputs must give exactly 1.0");
        }
    }
    let elapsed = start.elapsed();
    assert!(checked_equal > 500);
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "reward algebra took {elapsed:?}, budget is 10 s"
    );
    pass(
        1,
        "reward algebra",
        &format!(
            "10,000 pairs (C in 2..=10, {checked_equal} identical), ranges and r1=1-iff-equal hold; {elapsed:?}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. REINFORCE unbiasedness on the Bernoulli toy
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_reinforce_unbiasedness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let n = 100_000;
    let mut details = Vec::new();
    for p in [0.2, 0.5, 0.8] {
        let mut grads = Vec::with_capacity(n);
        let mut rewards_list = Vec::with_capacity(n);
        for _ in 0..n {
            let action = f64::from(rng.random::<f64>() < p);
            grads.push(vec![action - p]); // d log pi / d logit
            rewards_list.push(action); // reward 1 for action 1, 0 otherwise
        }
        let estimate = reinforce_gradient_estimate(&grads, &rewards_list).unwrap()[0];
        let analytic = p * (1.0 - p);
        // Standard error of the per-sample terms.
        let mean_sq: f64 = grads
            .iter()
            .zip(&rewards_list)
            .map(|(g, r)| (g[0] * r) * (g[0] * r))
            .sum::<f64>()
            / n as f64;
        let se = ((mean_sq - estimate * estimate) / n as f64).sqrt();
        assert!(
            (estimate - analytic).abs() <= 3.0 * se,
            "p={p}: estimate {estimate} vs analytic {analytic} (3se={})",
            3.0 * se
        );
        details.push(format!("p={p}: {estimate:.5} vs {analytic:.5} (se {se:.6})"));
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "budget is 1 min, took {elapsed:?}");
    pass(2, "REINFORCE unbiasedness", &details.join("; "));
}

// ---------------------------------------------------------------------------
// 3. Score-function normalization and enumeration oracle
// ---------------------------------------------------------------------------

fn enumerate_masks(c: usize) -> Vec<ActionMask> {
    (0..(1u32 << (2 * c)))
        .map(|bits| ActionMask {
            audio: (0..c).map(|i| ((bits >> i) & 1) as u8).collect(),
            visual: (0..c).map(|i| ((bits >> (c + i)) & 1) as u8).collect(),
        })
        .collect()
}

#[test]
fn criterion_03_score_function_normalization() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    // Normalization: probabilities over all masks sum to one.
    for c in 1..=3usize {
        let p = PolicyOutput {
            audio: Array1::from_shape_fn(c, |_| rng.random_range(0.05..0.95)),
            visual: Array1::from_shape_fn(c, |_| rng.random_range(0.05..0.95)),
        };
        let total: f64 = enumerate_masks(c)
            .iter()
            .map(|m| denoiser::action_log_prob(&p, m).exp())
            .sum();
        assert!(
            (total - 1.0).abs() < 1e-9,
            "C={c}: mask probabilities sum to {total}"
        );
    }

    // Enumeration oracle: the exact policy gradient (sum over all masks of
    // pi(a) R(a) dlogpi(a)) against the Monte Carlo sample mean, per logit.
    let c = 2usize;
    let p = PolicyOutput {
        audio: Array1::from_shape_fn(c, |_| rng.random_range(0.2..0.8)),
        visual: Array1::from_shape_fn(c, |_| rng.random_range(0.2..0.8)),
    };
    // Deterministic reward over masks: count of kept audio labels minus half
    // the kept visual labels.
    let reward = |m: &ActionMask| -> f64 {
        m.audio.iter().map(|a| f64::from(*a)).sum::<f64>()
            - 0.5 * m.visual.iter().map(|a| f64::from(*a)).sum::<f64>()
    };
    let score = |m: &ActionMask| -> Vec<f64> {
        m.audio
            .iter()
            .zip(p.audio.iter())
            .map(|(a, q)| f64::from(*a) - q)
            .chain(
                m.visual
                    .iter()
                    .zip(p.visual.iter())
                    .map(|(a, q)| f64::from(*a) - q),
            )
            .collect()
    };
    let mut exact = vec![0.0; 2 * c];
    for mask in enumerate_masks(c) {
        let prob = denoiser::action_log_prob(&p, &mask).exp();
        let s = score(&mask);
        for (e, v) in exact.iter_mut().zip(&s) {
            *e += prob * reward(&mask) * v;
        }
    }

    let draws = 200_000;
    let mut grads = Vec::with_capacity(draws);
    let mut rewards_list = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mask = denoiser::sample_actions(&p, &mut rng);
        grads.push(score(&mask));
        rewards_list.push(reward(&mask));
    }
    let estimate = reinforce_gradient_estimate(&grads, &rewards_list).unwrap();
    for k in 0..2 * c {
        let mean_sq: f64 = grads
            .iter()
            .zip(&rewards_list)
            .map(|(g, r)| (g[k] * r) * (g[k] * r))
            .sum::<f64>()
            / draws as f64;
        let se = ((mean_sq - estimate[k] * estimate[k]) / draws as f64).sqrt();
        assert!(
            (estimate[k] - exact[k]).abs() <= 3.0 * se,
            "logit {k}: MC {} vs exact {} (3se={})",
            estimate[k],
            exact[k],
            3.0 * se
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "budget is 10 s, took {elapsed:?}");
    pass(
        3,
        "score-function normalization",
        &format!("mask sums exact to 1e-9 for C<=3; enumeration matches MC within 3 SE; {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// 4. Gradient checks against central finite differences
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_gradient_checks() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let h = 1e-3;
    let mut max_rel = 0.0f64;
    let mut instances = 0;
    while instances < 50 {
        let t = rng.random_range(1..=3);
        let c = rng.random_range(1..=3);
        let d = rng.random_range(1..=4);
        instances += 1;

        // Policy network: log-probability gradients (hybrid attention with
        // learned projections plus the policy heads).
        let den_cfg = DenoiserConfig {
            learned_projections: true,
            ..DenoiserConfig::new(d, d, c)
        };
        let mut den = DenoiserParams::init(den_cfg, &mut rng).unwrap();
        let feats_a = Array2::from_shape_fn((t, d), |_| rng.random_range(-1.0..1.0));
        let feats_v = Array2::from_shape_fn((t, d), |_| rng.random_range(-1.0..1.0));
        let mut ya: Vec<u8> = (0..c).map(|_| u8::from(rng.random::<bool>())).collect();
        let yv: Vec<u8> = (0..c).map(|_| u8::from(rng.random::<bool>())).collect();
        if ya.iter().chain(&yv).all(|v| *v == 0) {
            ya[0] = 1;
        }
        let sample = VideoSample {
            id: "g".into(),
            audio: avparse::data::FeatureSequence {
                values: feats_a.clone(),
                modality: avparse::data::Modality::Audio,
            },
            visual: avparse::data::FeatureSequence {
                values: feats_v.clone(),
                modality: avparse::data::Modality::Visual,
            },
            weak_label: avparse::data::union_of(&ya, &yv),
            noisy_audio_label: ya.clone(),
            noisy_visual_label: yv.clone(),
            clean_audio_segments: None,
            clean_visual_segments: None,
        };
        let state = denoiser::build_states(&sample).unwrap();
        let mask = ActionMask {
            audio: (0..c).map(|_| u8::from(rng.random::<bool>())).collect(),
            visual: (0..c).map(|_| u8::from(rng.random::<bool>())).collect(),
        };
        let (_, cache) = den.forward(&state).unwrap();
        let ga = den.branch_log_prob_grad(&cache, &mask.audio, Branch::Audio);
        let gv = den.branch_log_prob_grad(&cache, &mask.visual, Branch::Visual);
        let analytic: Vec<f64> = ga.iter().zip(&gv).map(|(a, b)| a + b).collect();
        let mut flat = den.to_flat();
        for i in 0..flat.len() {
            let orig = flat[i];
            let mut eval = |x: f64| -> f64 {
                flat[i] = x;
                den.set_from_flat(&flat);
                let (p, _) = den.forward(&state).unwrap();
                denoiser::action_log_prob(&p, &mask)
            };
            let fd = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
            flat[i] = orig;
            den.set_from_flat(&flat);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
            let rel = (analytic[i] - fd).abs() / denom;
            max_rel = max_rel.max(rel);
            assert!(
                rel < 1e-4,
                "policy grad {i} (t={t},c={c},d={d}): analytic {} vs fd {fd}",
                analytic[i]
            );
        }

        // Parsing network: pooling probe plus both losses.
        let task_cfg = TaskConfig {
            learned_projections: true,
            ..TaskConfig::new(d, c)
        };
        let mut task = TaskParams::init(task_cfg, &mut rng).unwrap();
        let union = avparse::data::union_of(&ya, &yv);
        let probe_v = Array1::from_shape_fn(c, |_| rng.random_range(-1.0..1.0));
        let probe_a = Array1::from_shape_fn(c, |_| rng.random_range(-1.0..1.0));
        let probe_b = Array1::from_shape_fn(c, |_| rng.random_range(-1.0..1.0));

        let (_, _, cache) = task.forward(&feats_a, &feats_v).unwrap();
        let (_, pool_grad) = task.pooling_probe(&cache, &probe_v, &probe_a, &probe_b);
        let (_, _, loss_grad) = task.loss_and_grad(&cache, &union, &ya, &yv, true);

        let mut flat = task.to_flat();
        for i in 0..flat.len() {
            let orig = flat[i];
            // Pooling probe.
            let mut eval_pool = |x: f64| -> f64 {
                flat[i] = x;
                task.set_from_flat(&flat);
                let (_, _, cache) = task.forward(&feats_a, &feats_v).unwrap();
                task.pooling_probe(&cache, &probe_v, &probe_a, &probe_b).0
            };
            let fd = (eval_pool(orig + h) - eval_pool(orig - h)) / (2.0 * h);
            flat[i] = orig;
            task.set_from_flat(&flat);
            let denom = pool_grad[i].abs().max(fd.abs()).max(1e-6);
            let rel = (pool_grad[i] - fd).abs() / denom;
            max_rel = max_rel.max(rel);
            assert!(rel < 1e-4, "pooling grad {i}: {} vs {fd}", pool_grad[i]);

            // Both losses together.
            let mut eval_loss = |x: f64| -> f64 {
                flat[i] = x;
                task.set_from_flat(&flat);
                let (_, _, cache) = task.forward(&feats_a, &feats_v).unwrap();
                let (lv, la, _) = task.loss_and_grad(&cache, &union, &ya, &yv, true);
                lv + la
            };
            let fd = (eval_loss(orig + h) - eval_loss(orig - h)) / (2.0 * h);
            flat[i] = orig;
            task.set_from_flat(&flat);
            let denom = loss_grad[i].abs().max(fd.abs()).max(1e-6);
            let rel = (loss_grad[i] - fd).abs() / denom;
            max_rel = max_rel.max(rel);
            assert!(rel < 1e-4, "loss grad {i}: {} vs {fd}", loss_grad[i]);
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "budget is 2 min, took {elapsed:?}");
    pass(
        4,
        "gradient checks",
        &format!("50 instances, max relative error {max_rel:.2e} < 1e-4; {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// 5. Metric oracle equivalence
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_metric_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);

    // The hand case: pred (1,4) vs truth (2,5) has IoU 0.6 >= 0.5 and matches.
    let pred = metrics::EventSpan {
        class_id: 0,
        start: 1,
        end: 4,
        modality: metrics::Track::Audio,
    };
    let truth = metrics::EventSpan {
        class_id: 0,
        start: 2,
        end: 5,
        modality: metrics::Track::Audio,
    };
    assert!((metrics::span_iou(&pred, &truth) - 0.6).abs() < 1e-12);
    assert_eq!(metrics::event_f1(&[pred], &[truth], 0.5), 1.0);

    for instance in 0..200 {
        let videos = rng.random_range(1..=3);
        let classes = rng.random_range(1..=3);
        let mut split = Vec::new();
        let mut predictions = BTreeMap::new();
        for v in 0..videos {
            let segments = rng.random_range(1..=10);
            let density = rng.random_range(0.1..0.7);
            let (sample, pred) = common::random_instance(
                &format!("i{instance}_v{v}"),
                segments,
                classes,
                density,
                &mut rng,
            );
            predictions.insert(sample.id.clone(), pred);
            split.push(sample);
        }
        let ours = metrics::evaluate(&predictions, &split, 0.5, Aggregation::Micro).unwrap();
        let oracle = common::brute_force_evaluate(&predictions, &split, 0.5);
        for (name, a, b) in [
            ("segment", &ours.segment, &oracle.segment),
            ("event", &ours.event, &oracle.event),
        ] {
            assert_eq!(a.audio, b.audio, "instance {instance} {name} audio");
            assert_eq!(a.visual, b.visual, "instance {instance} {name} visual");
            assert_eq!(
                a.audio_visual, b.audio_visual,
                "instance {instance} {name} av"
            );
            assert_eq!(
                a.type_at_av, b.type_at_av,
                "instance {instance} {name} type"
            );
            assert_eq!(
                a.event_at_av, b.event_at_av,
                "instance {instance} {name} event@av"
            );
            for (x, y) in a.per_class.iter().zip(&b.per_class) {
                assert_eq!(x.audio, y.audio, "instance {instance} {name} per-class");
                assert_eq!(x.visual, y.visual);
                assert_eq!(x.audio_visual, y.audio_visual);
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "budget is 30 s, took {elapsed:?}");
    pass(
        5,
        "metric oracle equivalence",
        &format!("200 instances exactly equal field-for-field, IoU-0.6 hand case matches; {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// 6. Degenerate handling
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_degenerate_handling() {
    let start = Instant::now();
    let ya = vec![1, 0, 1];
    let yv = vec![0, 1, 0];
    let (ra, rv, degenerate) = denoiser::revise_labels(&ya, &yv, &ActionMask::all_zeros(3));
    assert!(degenerate);
    assert_eq!(ra, ya);
    assert_eq!(rv, yv);
    assert_eq!(rewards::combine_reward(0.42, 0.9, true), -1.0);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0);
    pass(
        6,
        "degenerate handling",
        "all-zero masks keep labels unchanged and the total reward is exactly -1",
    );
}

// ---------------------------------------------------------------------------
// Shared end-to-end experiment bundle (criteria 7, 8, 10)
// ---------------------------------------------------------------------------

struct Arm {
    test_seg_type: f64,
    ident_f: f64,
    traces: Vec<EpisodeTrace>,
}

struct SeedRun {
    seed: u64,
    random_ident: f64,
    full: Arm,
    baseline: Arm,
    no_inter: Arm,
    no_init: Arm,
}

struct Experiments {
    runs: Vec<SeedRun>,
    core_seconds: f64,
    total_seconds: f64,
}

static EXPERIMENTS: OnceLock<Experiments> = OnceLock::new();

fn experiment_dataset(seed: u64) -> Dataset {
    generate_dataset(&SynthConfig {
        num_videos: 2000,
        segments: 10,
        classes: 5,
        d_audio: 8,
        d_visual: 8,
        noise: NoiseSpec {
            spurious_rate: 0.3,
            drop_rate: 0.0,
            seed,
        },
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn run_arm(dataset: &Dataset, cfg: &TrainConfig, measure_ident: bool) -> Arm {
    let artifacts = fit(dataset, cfg).unwrap();
    let report = trainer::validate_on(&artifacts.task, &dataset.test, cfg.threshold).unwrap();
    let ident_f = if measure_ident {
        noise_identification_f1(
            &artifacts.denoiser,
            &dataset.test,
            !cfg.no_initialized_labels,
        )
        .unwrap()
    } else {
        f64::NAN
    };
    Arm {
        test_seg_type: report.segment.type_at_av,
        ident_f,
        traces: artifacts.traces,
    }
}

fn experiments() -> &'static Experiments {
    EXPERIMENTS.get_or_init(|| {
        let total_start = Instant::now();
        let mut core_seconds = 0.0;
        let mut runs = Vec::new();
        for seed in [7u64, 8, 9] {
            let dataset = experiment_dataset(seed);
            let base = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            let core_start = Instant::now();
            let full = run_arm(&dataset, &base, true);
            let baseline = run_arm(
                &dataset,
                &TrainConfig {
                    no_denoiser: true,
                    ..base.clone()
                },
                false,
            );
            core_seconds += core_start.elapsed().as_secs_f64();
            let no_inter = run_arm(
                &dataset,
                &TrainConfig {
                    no_inter_reward: true,
                    ..base.clone()
                },
                false,
            );
            let no_init = run_arm(
                &dataset,
                &TrainConfig {
                    no_initialized_labels: true,
                    ..base.clone()
                },
                false,
            );
            let random_ident = random_mask_identification_f1(&dataset.test, seed, 10).unwrap();
            runs.push(SeedRun {
                seed,
                random_ident,
                full,
                baseline,
                no_inter,
                no_init,
            });
        }
        Experiments {
            runs,
            core_seconds,
            total_seconds: total_start.elapsed().as_secs_f64(),
        }
    })
}

fn mean<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------------------
// 7. Synthetic end-to-end gain
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_synthetic_end_to_end_gain() {
    let exp = experiments();
    let ident_gap = mean(exp.runs.iter().map(|r| r.full.ident_f - r.random_ident));
    let task_gap = mean(
        exp.runs
            .iter()
            .map(|r| r.full.test_seg_type - r.baseline.test_seg_type),
    );
    let details = format!(
        "identification F gap {ident_gap:+.4} (need >= +0.15: per-seed {:?} vs random {:?}); \
         test segment Type@AV gap {task_gap:+.4} (need >= +0.02: full {:?} vs baseline {:?}); \
         core runs took {:.0} s (budget 900 s)",
        exp.runs.iter().map(|r| (r.full.ident_f * 1e4).round() / 1e4).collect::<Vec<_>>(),
        exp.runs.iter().map(|r| (r.random_ident * 1e4).round() / 1e4).collect::<Vec<_>>(),
        exp.runs.iter().map(|r| (r.full.test_seg_type * 1e4).round() / 1e4).collect::<Vec<_>>(),
        exp.runs.iter().map(|r| (r.baseline.test_seg_type * 1e4).round() / 1e4).collect::<Vec<_>>(),
        exp.core_seconds,
    );
    assert!(
        exp.core_seconds < 900.0,
        "{}",
        fail(7, "synthetic end-to-end gain", &details)
    );
    let ok = ident_gap >= 0.15 && task_gap >= 0.02;
    if ok {
        pass(7, "synthetic end-to-end gain", &details);
    } else {
        panic!("{}", fail(7, "synthetic end-to-end gain", &details));
    }
}

// ---------------------------------------------------------------------------
// 8. Ablation ordering
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_ablation_ordering() {
    let exp = experiments();
    let full = mean(exp.runs.iter().map(|r| r.full.test_seg_type));
    let no_inter = mean(exp.runs.iter().map(|r| r.no_inter.test_seg_type));
    let no_init = mean(exp.runs.iter().map(|r| r.no_init.test_seg_type));
    let tolerance = 0.005;
    let details = format!(
        "mean test segment Type@AV: full {full:.4} >= no_inter {no_inter:.4} >= no_init {no_init:.4} (tolerance {tolerance})"
    );
    let ok = full >= no_inter - tolerance && no_inter >= no_init - tolerance;
    if ok {
        pass(8, "ablation ordering", &details);
    } else {
        panic!("{}", fail(8, "ablation ordering", &details));
    }
}

// ---------------------------------------------------------------------------
// 9. Determinism of training runs
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_determinism() {
    use sha2::{Digest, Sha256};
    let start = Instant::now();
    let dataset = generate_dataset(&SynthConfig {
        num_videos: 120,
        segments: 5,
        classes: 3,
        d_audio: 4,
        d_visual: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        batch_size: 16,
        episode_len: 4,
        max_epochs: 2,
        episodes_per_epoch: 1,
        ..TrainConfig::default()
    };
    let mut hashes = Vec::new();
    for _ in 0..2 {
        let artifacts = fit(&dataset, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.csv");
        trainer::write_traces(&path, &artifacts.traces).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hashes.push(format!("{:x?}", hasher.finalize()));
    }
    assert_eq!(hashes[0], hashes[1], "trace hashes differ across runs");
    pass(
        9,
        "determinism",
        &format!("identical traces.csv hashes across two runs ({:?})", start.elapsed()),
    );
}

// ---------------------------------------------------------------------------
// 10. Convergence artifact
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_convergence_artifact() {
    let exp = experiments();
    let dir = tempfile::tempdir().unwrap();
    let mut run_dirs = Vec::new();
    for run in &exp.runs {
        let run_dir = dir.path().join(format!("run_{}", run.seed));
        std::fs::create_dir_all(&run_dir).unwrap();
        trainer::write_traces(&run_dir.join("traces.csv"), &run.full.traces).unwrap();
        run_dirs.push(run_dir);
    }
    let curves = avparse::plot::collect_curves(&run_dirs).unwrap();
    let out = dir.path().join("plots");
    let files = avparse::plot::emit_curves(&curves, &out).unwrap();
    assert_eq!(files.len(), 6, "expected six curve images");
    for f in &files {
        assert!(f.exists());
    }
    let seg_audio = curves
        .iter()
        .find(|c| c.name == "segment_audio")
        .expect("segment_audio curve present");
    let first = seg_audio.mean.first().copied().unwrap();
    let last = seg_audio.mean.last().copied().unwrap();
    let details = format!(
        "six curves emitted with 0.1 smoothing; smoothed segment-audio F episode 1 {first:.4} -> final {last:.4}"
    );
    assert!(
        last > first,
        "{}",
        fail(10, "convergence artifact", &details)
    );
    pass(10, "convergence artifact", &details);
}
