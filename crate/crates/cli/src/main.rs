use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use beamlab::pipeline::{
    cmd_beamform, cmd_beampattern, cmd_estimate, cmd_evaluate, cmd_run_all, cmd_simulate, ExperimentConfig,
    Guidance, MethodChoice,
};
use beamlab::scene::{random_scene_spec, RandomSceneOptions};
use beamlab::scene_spec::{load_scene_spec, SceneSpec};

#[derive(Parser)]
#[command(name = "beamlab", version, about = "Constrained beamforming experiments on simulated array scenes")]
struct Cli {
    /// Experiment configuration (JSON mirroring ExperimentConfig).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured beamforming method.
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,
    /// Overrides the configured spatial guidance.
    #[arg(long, global = true, value_enum)]
    guidance: Option<GuidanceArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Lcmv,
    Penalty,
}

#[derive(Clone, Copy, ValueEnum)]
enum GuidanceArg {
    Estimated,
    Oracle,
    None,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene spec into a scene directory.
    Simulate {
        /// Scene spec JSON. Without it a random anechoic scene is drawn from --seed.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Talkers for random scenes.
        #[arg(long, default_value_t = 3)]
        speakers: usize,
    },
    /// Write a random anechoic scene spec.
    MakeSpec {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        speakers: usize,
    },
    /// Estimate noise covariance, target RTF and interference subspace.
    Estimate {
        /// Scene directory.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute weights and the enhanced signal.
    Beamform {
        #[arg(long)]
        scene: PathBuf,
        /// Estimation artifact, required for estimated guidance.
        #[arg(long)]
        estimation: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics CSV for an enhanced signal and its weights.
    Evaluate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        enhanced: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Wideband beampattern CSV.
    Beampattern {
        #[arg(long)]
        weights: PathBuf,
        /// Scene directory providing the array geometry.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Source distance in meters.
        #[arg(long)]
        distance: Option<f64>,
        /// Angle grid `start:stop:step` in degrees.
        #[arg(long, allow_hyphen_values = true)]
        angles: Option<String>,
    },
    /// Simulate, estimate, beamform, evaluate and plot in one go.
    RunAll {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 3)]
        speakers: usize,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = cli.method {
        config.method = match m {
            MethodArg::Lcmv => MethodChoice::Lcmv,
            MethodArg::Penalty => MethodChoice::Penalty,
        };
    }
    if let Some(g) = cli.guidance {
        config.guidance = match g {
            GuidanceArg::Estimated => Guidance::Estimated,
            GuidanceArg::Oracle => Guidance::Oracle,
            GuidanceArg::None => Guidance::None,
        };
    }
    config.validate()?;
    Ok(config)
}

fn resolve_spec(scene: Option<&Path>, seed: Option<u64>, speakers: usize) -> Result<SceneSpec> {
    let mut spec = match scene {
        Some(p) => load_scene_spec(p).with_context(|| format!("loading scene spec {}", p.display()))?,
        None => {
            let opts = RandomSceneOptions {
                speakers,
                ..Default::default()
            };
            random_scene_spec(seed.unwrap_or(0), &opts)?
        }
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

/// Writes the resolved spec beside the outputs so stages downstream see a file.
fn stage_spec(spec: &SceneSpec, out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("scene_spec.json");
    std::fs::write(&path, serde_json::to_string_pretty(spec)?)?;
    Ok(path)
}

fn parse_angles(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .context("angles must be start:stop:step")?;
    let [start, stop, step] = parts[..] else {
        bail!("angles must be start:stop:step");
    };
    if !(step > 0.0) || stop < start {
        bail!("angle grid {text} is empty");
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| start + i as f64 * step).collect())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Simulate {
            scene,
            out,
            seed,
            speakers,
        } => {
            let spec = resolve_spec(scene.as_deref(), seed, speakers)?;
            let staged = stage_spec(&spec, &out)?;
            cmd_simulate(&staged, &out, &config.stft)?;
            std::fs::remove_file(staged)?;
        }
        Command::MakeSpec { out, seed, speakers } => {
            let spec = resolve_spec(None, Some(seed), speakers)?;
            std::fs::write(&out, serde_json::to_string_pretty(&spec)?)
                .with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Estimate { scene, out } => {
            let a = cmd_estimate(&scene, &config, &out)?;
            if !a.diagnostics.invalid_target_bins.is_empty() {
                log::warn!("reference fallback at target bins {:?}", a.diagnostics.invalid_target_bins);
            }
        }
        Command::Beamform { scene, estimation, out } => {
            let r = cmd_beamform(&scene, estimation.as_deref(), &config, &out)?;
            log::info!("max weight norm {:.3}", r.weights.max_norm());
        }
        Command::Evaluate {
            scene,
            enhanced,
            weights,
            out,
        } => {
            let report = cmd_evaluate(&scene, &enhanced, &weights, &config, &out)?;
            print!("{}", report.to_csv());
        }
        Command::Beampattern {
            weights,
            scene,
            out,
            distance,
            angles,
        } => {
            let angles = angles.as_deref().map(parse_angles).transpose()?;
            cmd_beampattern(&weights, &scene, &out, distance, angles)?;
        }
        Command::RunAll {
            scene,
            out,
            seed,
            speakers,
        } => {
            let spec = resolve_spec(scene.as_deref(), seed, speakers)?;
            let staged = stage_spec(&spec, &out)?;
            let report = cmd_run_all(&staged, &config, &out)?;
            print!("{}", report.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
