use beamlab::audio::AudioClip;
use beamlab::beamformer::{initial_weights, penalty_optimize, BeamWeights, ConstraintSet, Method, PenaltySchedule};
use beamlab::linalg::{selector, CMatrix, CVector};
use beamlab::pipeline::{beamform, guidance_constraints, ExperimentConfig, Guidance, MethodChoice};
use beamlab::rtf::{InterferenceSubspace, RtfVector};
use beamlab::scene::{assemble_scene, random_scene_spec, RandomSceneOptions};
use beamlab::stft::{analyze, StftConfig, WindowKind};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_problem(seed: u64) -> (beamlab::stft::Spectrogram, AudioClip, ConstraintSet) {
    let (m, k) = (4, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = StftConfig {
        fft_size: 2 * (k - 1),
        hop_size: k - 1,
        window: WindowKind::Hann,
    };
    let len = 40 * cfg.fft_size;
    let target: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mix = AudioClip::new(
        (0..m)
            .map(|ch| {
                target
                    .iter()
                    .map(|s| (0.5 + 0.2 * ch as f64) * s + rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect(),
        16_000,
    )
    .unwrap();
    let mut rv = || {
        CVector::from_fn(m, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    };
    let a = RtfVector::from_unnormalized((0..k).map(|_| rv()).collect(), 0);
    let basis = (0..k).map(|_| CMatrix::from_columns(&[rv()])).collect();
    let constraints = ConstraintSet::new(a, InterferenceSubspace::from_unnormalized(basis, 0)).unwrap();
    (analyze(&mix, &cfg).unwrap(), AudioClip::mono(target, 16_000).unwrap(), constraints)
}

fn short_schedule(lambda_pass: f64) -> PenaltySchedule {
    PenaltySchedule {
        lambda_pass_max: lambda_pass,
        lambda_null_max: 1.0,
        warmup_iters: 50,
        ramp_iters: 150,
        total_iters: 400,
        step_size: 1e-2,
        final_step_size: Some(1e-4),
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn larger_pass_weight_never_loosens_the_constraint(seed in 0u64..10_000) {
        let (spec, target, constraints) = random_problem(seed);
        let init = BeamWeights::selector(spec.channels(), 0, spec.config, 16_000);
        let mut last = f64::INFINITY;
        for lambda in [0.1, 1.0, 10.0] {
            let (_, trace) = penalty_optimize(&spec, &target, Some(&constraints), &short_schedule(lambda), &init).unwrap();
            let pass = trace.last().unwrap().pass_term;
            prop_assert!(pass <= last * (1.0 + 1e-9), "lambda {}: {} after {}", lambda, pass, last);
            last = pass;
        }
    }
}

#[test]
fn unconstrained_descent_on_clean_target() {
    let bundle = assemble_scene(&random_scene_spec(4, &RandomSceneOptions::default()).unwrap()).unwrap();
    let end = bundle.estimation_samples();
    let clean = bundle.target_image().unwrap().clip.slice(0, end).unwrap();
    let cfg = StftConfig::default();
    let spec = analyze(&clean, &cfg).unwrap();
    let target = bundle.reference_target().unwrap().slice(0, end).unwrap();
    let schedule = PenaltySchedule {
        total_iters: 60,
        ..PenaltySchedule::default().without_constraints()
    };
    let m = clean.channels();
    let init = initial_weights(&schedule, None, m, 0, cfg, 16_000).unwrap();
    assert!(init.w.iter().all(|v| (v - selector(m, 0)).norm() == 0.0));
    let (w, trace) = penalty_optimize(&spec, &target, None, &schedule, &init).unwrap();
    let first = trace.rows[0].si_sdr_term;
    let last = trace.last().unwrap().si_sdr_term;
    assert!(last <= first, "-SI-SDR went from {first} to {last}");
    assert_eq!(w.method, Method::Penalty);
}

/// Two-talker oracle run with the default schedule.
#[test]
fn two_talker_oracle_constraints_are_met() {
    let opts = RandomSceneOptions {
        speakers: 2,
        ..Default::default()
    };
    let bundle = assemble_scene(&random_scene_spec(1, &opts).unwrap()).unwrap();
    let config = ExperimentConfig {
        method: MethodChoice::Penalty,
        guidance: Guidance::Oracle,
        ..Default::default()
    };
    let out = beamform(&bundle, &config, None).unwrap();
    let c = guidance_constraints(&bundle, &config, None).unwrap().unwrap();
    let k = c.bins();
    let dev = (0..k)
        .map(|b| (out.weights.w[b].dotc(&c.target.values[b]) - 1.0).norm())
        .sum::<f64>()
        / k as f64;
    let trace = out.trace.unwrap();
    let null = trace.last().unwrap().null_term;
    assert!(dev <= 0.05, "mean |w^H a - 1| = {dev}");
    assert!(null <= -20.0, "null term {null} dB");
    let warm = trace.rows[config.schedule.warmup_iters].total();
    assert!(trace.last().unwrap().total() <= warm);
}
