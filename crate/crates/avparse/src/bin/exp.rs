//! Scratch experiment harness (not part of the deliverable surface).

use avparse::data::{generate_dataset, Dataset, Modality, NoiseSpec, SynthConfig};
use avparse::denoiser::{build_states_with, DenoiserParams};
use avparse::trainer::{
    self, fit, noise_identification_f1, random_mask_identification_f1, CreditMode,
    InterRewardSource, TrainConfig,
};
use std::time::Instant;

fn dataset(seed: u64) -> Dataset {
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
        class_activity: 0.35,
        shared_rate: 0.1,
        feature_noise: 0.5,
        val_fraction: 0.15,
        test_fraction: 0.15,
    })
    .unwrap()
}

fn probe_policy(den: &DenoiserParams, ds: &Dataset, include_labels: bool) {
    // Mean keep probability by slot type on the test split. Redundancy is
    // judged by the noisy labels (what the policy can see via the union).
    let mut sums = [0.0f64; 4];
    let mut counts = [0usize; 4];
    for s in &ds.test {
        let clean_a = s.clean_video_label(Modality::Audio).unwrap();
        let clean_v = s.clean_video_label(Modality::Visual).unwrap();
        let state = build_states_with(s, include_labels).unwrap();
        let (p, _) = den.forward(&state).unwrap();
        for c in 0..ds.num_classes {
            for (noisy, other_noisy, clean, prob) in [
                (
                    s.noisy_audio_label[c],
                    s.noisy_visual_label[c],
                    clean_a[c],
                    p.audio[c],
                ),
                (
                    s.noisy_visual_label[c],
                    s.noisy_audio_label[c],
                    clean_v[c],
                    p.visual[c],
                ),
            ] {
                let slot = if noisy == 0 {
                    3 // absent
                } else if clean == 0 {
                    0 // spurious (injected; always union-redundant)
                } else if other_noisy == 1 {
                    1 // clean but union-redundant
                } else {
                    2 // clean and union-exclusive
                };
                sums[slot] += prob;
                counts[slot] += 1;
            }
        }
    }
    println!(
        "    keep-p: spurious {:.3} (n={}), clean-redundant {:.3} (n={}), clean-exclusive {:.3} (n={}), absent {:.3}",
        sums[0] / counts[0] as f64,
        counts[0],
        sums[1] / counts[1] as f64,
        counts[1],
        sums[2] / counts[2] as f64,
        counts[2],
        sums[3] / counts[3] as f64,
    );
}

fn run(name: &str, ds: &Dataset, cfg: &TrainConfig) {
    let t0 = Instant::now();
    let artifacts = fit(ds, cfg).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let test_report = trainer::validate_on(&artifacts.task, &ds.test, cfg.threshold).unwrap();
    let ident = noise_identification_f1(
        &artifacts.denoiser,
        &ds.test,
        !cfg.no_initialized_labels,
    )
    .unwrap();
    let rand_ident = random_mask_identification_f1(&ds.test, cfg.seed, 10).unwrap();
    println!(
        "  {name}: {:.1}s, epochs {}, test segType {:.4}, val segType {:.4}, ident F {:.4} (random {:.4})",
        secs,
        artifacts.epochs_run,
        test_report.segment.type_at_av,
        artifacts.final_validation.segment.type_at_av,
        ident,
        rand_ident
    );
    probe_policy(&artifacts.denoiser, ds, !cfg.no_initialized_labels);
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("all");
    let epochs: usize = args
        .get(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(12);

    let ds = dataset(7);
    println!(
        "dataset: train {}, val {}, test {}",
        ds.train.len(),
        ds.validation.len(),
        ds.test.len()
    );

    let base = TrainConfig {
        max_epochs: epochs,
        patience: 10_000, // disable early stop for probing
        ..TrainConfig::default()
    };

    if which == "speed" {
        let cfg = TrainConfig {
            max_epochs: 1,
            ..base.clone()
        };
        run("speed(1 epoch=32 steps)", &ds, &cfg);
        return;
    }

    if which == "all" || which == "baseline" {
        let cfg = TrainConfig {
            no_denoiser: true,
            ..base.clone()
        };
        run("baseline(no_denoiser)", &ds, &cfg);
    }
    if which == "all" || which == "batch" {
        let cfg = TrainConfig {
            credit_mode: CreditMode::Batch,
            ..base.clone()
        };
        run("full per_modality+batch", &ds, &cfg);
    }
    if which == "all" || which == "persample" {
        let cfg = TrainConfig {
            credit_mode: CreditMode::PerSample,
            ..base.clone()
        };
        run("full per_modality+per_sample", &ds, &cfg);
    }
    if which == "all" || which == "union" {
        let cfg = TrainConfig {
            credit_mode: CreditMode::PerSample,
            inter_reward_source: InterRewardSource::WeakUnion,
            ..base.clone()
        };
        run("full weak_union+per_sample", &ds, &cfg);
    }
    if which == "all" || which == "nointer" {
        let cfg = TrainConfig {
            no_inter_reward: true,
            ..base.clone()
        };
        run("no_inter_reward", &ds, &cfg);
    }
    if which == "all" || which == "noinit" {
        let cfg = TrainConfig {
            no_initialized_labels: true,
            ..base.clone()
        };
        run("no_initialized_labels", &ds, &cfg);
    }
    if which == "c8sim" {
        let mut means = std::collections::BTreeMap::new();
        for seed in [7u64, 8, 9] {
            let ds = dataset(seed);
            for (arm, cfgmod) in [
                ("baseline", TrainConfig { no_denoiser: true, seed, max_epochs: epochs, ..TrainConfig::default() }),
                ("full", TrainConfig { seed, max_epochs: epochs, ..TrainConfig::default() }),
                ("no_inter", TrainConfig { no_inter_reward: true, seed, max_epochs: epochs, ..TrainConfig::default() }),
                ("no_init", TrainConfig { no_initialized_labels: true, seed, max_epochs: epochs, ..TrainConfig::default() }),
            ] {
                let t0 = Instant::now();
                let artifacts = fit(&ds, &cfgmod).unwrap();
                let report = trainer::validate_on(&artifacts.task, &ds.test, cfgmod.threshold).unwrap();
                let ident = if arm == "full" {
                    noise_identification_f1(&artifacts.denoiser, &ds.test, true).unwrap()
                } else { f64::NAN };
                println!("  seed {seed} {arm}: test segType {:.4}, epochs {}, ident {:.4}, {:.0}s",
                    report.segment.type_at_av, artifacts.epochs_run, ident, t0.elapsed().as_secs_f64());
                means.entry(arm).or_insert_with(Vec::new).push(report.segment.type_at_av);
            }
            let rnd = random_mask_identification_f1(&ds.test, seed, 10).unwrap();
            println!("  seed {seed} random-mask ident {:.4}", rnd);
        }
        for (arm, vals) in &means {
            let m: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            println!("  MEAN {arm}: {:.4}  {:?}", m, vals.iter().map(|v| (v*1e4).round()/1e4).collect::<Vec<_>>());
        }
        return;
    }
    if which == "oracle" {
        // Ceiling: replace noisy labels with the clean ones (perfect
        // denoising) and train the reference arm on them.
        let mut clean_ds = ds.clone();
        let relabel = |s: &mut avparse::data::VideoSample| {
            if let (Some(a), Some(v)) = (
                s.clean_video_label(Modality::Audio),
                s.clean_video_label(Modality::Visual),
            ) {
                s.noisy_audio_label = a.clone();
                s.noisy_visual_label = v.clone();
                s.weak_label = avparse::data::union_of(&a, &v);
            }
        };
        // Train split lacks clean matrices; regenerate with zero noise instead.
        let mut zero_noise = SynthConfig {
            num_videos: 2000,
            segments: 10,
            classes: 5,
            d_audio: 8,
            d_visual: 8,
            noise: NoiseSpec {
                spurious_rate: 0.0,
                drop_rate: 0.0,
                seed: 7,
            },
            seed: 7,
            class_activity: 0.35,
        shared_rate: 0.1,
            feature_noise: 0.5,
            val_fraction: 0.15,
            test_fraction: 0.15,
        };
        zero_noise.noise.seed = 7;
        let clean = generate_dataset(&zero_noise).unwrap();
        let _ = (&mut clean_ds, relabel);
        let cfg = TrainConfig {
            no_denoiser: true,
            ..base.clone()
        };
        run("oracle(clean labels)", &clean, &cfg);
    }
}

#[allow(dead_code)]
fn unused() {}
