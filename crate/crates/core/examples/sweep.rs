//! Runs the pipeline on random anechoic scenes and prints one line of metrics per scene.
//!
//! `cargo run --release --example sweep -- <scenes> <method> <guidance> [config.json]`

use beamlab::pipeline::{beamform, estimate, ExperimentConfig, Guidance, MethodChoice};
use beamlab::scene::{assemble_scene, random_scene_spec, RandomSceneOptions};
use beamlab::beamformer::ConstraintSet;
use beamlab::eval::component_metrics;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let scenes: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let mut config = match args.get(4) {
        Some(p) => ExperimentConfig::load(std::path::Path::new(p))?,
        None => ExperimentConfig::default(),
    };
    config.method = match args.get(2).map(String::as_str) {
        Some("lcmv") => MethodChoice::Lcmv,
        _ => MethodChoice::Penalty,
    };
    config.guidance = match args.get(3).map(String::as_str) {
        Some("oracle") => Guidance::Oracle,
        Some("none") => Guidance::None,
        _ => Guidance::Estimated,
    };
    for seed in 0..scenes {
        let t0 = std::time::Instant::now();
        let speakers = std::env::var("SWEEP_SPEAKERS").ok().and_then(|v| v.parse().ok()).unwrap_or(3);
        let opts = RandomSceneOptions {
            speakers,
            ..Default::default()
        };
        let bundle = assemble_scene(&random_scene_spec(seed, &opts)?)?;
        let artifact = estimate(&bundle, &config, "sweep")?;
        let out = beamform(&bundle, &config, Some(&artifact))?;
        let r = component_metrics(&out.weights, &bundle, config.evaluation_window_s)?;
        let constraints: Option<ConstraintSet> =
            beamlab::pipeline::guidance_constraints(&bundle, &config, Some(&artifact))?;
        let tail = out
            .trace
            .as_ref()
            .and_then(|t| t.last().copied())
            .map(|r| format!("pass {:.2e} null {:.1}", r.pass_term, r.null_term))
            .unwrap_or_default();
        let mean_dev = constraints
            .map(|c| {
                (0..c.bins())
                    .map(|k| (out.weights.w[k].dotc(&c.target.values[k]) - 1.0).norm())
                    .sum::<f64>()
                    / c.bins() as f64
            })
            .unwrap_or(f64::NAN);
        if std::env::var("SWEEP_BINS").is_ok() {
            if let Some(c) = beamlab::pipeline::guidance_constraints(&bundle, &config, Some(&artifact))? {
                for k in 0..c.bins() {
                    let d = (out.weights.w[k].dotc(&c.target.values[k]) - 1.0).norm();
                    let basis = &c.interference.basis[k];
                    let s: f64 = basis.column_iter().map(|a| out.weights.w[k].dotc(&a).norm_sqr()).sum();
                    let n = 10.0 * (s + 1e-8).log10();
                    if d > 0.1 || n > -10.0 {
                        print!("{k}:{d:.2}/{n:.0} ");
                    }
                }
                println!();
            }
        }
        println!(
            "seed {seed}: si_sdr {:.2} (in {:.2}) interf {:?} babble {:.2} |wa-1| {:.3} maxnorm {:.1} fb {} {tail} [{:.1}s]",
            r.si_sdr_db,
            r.input_si_sdr_db,
            r.interferer_ratios().iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>(),
            r.power_ratio("babble").unwrap_or(f64::NAN),
            mean_dev,
            out.weights.max_norm(),
            out.fallback_bins.len(),
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
