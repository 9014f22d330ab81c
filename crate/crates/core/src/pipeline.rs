//! End-to-end stages over scene directories: simulate, estimate, beamform, evaluate and
//! beampattern, plus the in-memory functions they wrap.

use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{read_wav, write_wav, AudioClip};
use crate::beamformer::{
    initial_weights, lcmv_solve, penalty_optimize, BeamWeights, ConstraintSet, OptimizationTrace,
    PenaltySchedule,
};
use crate::error::{Error, Result};
use crate::eval::{
    beampattern, component_metrics, default_angle_grid, si_sdr_slices, window_samples, Beampattern,
    MetricsReport, BEAMPATTERN_DISTANCE_M, EVALUATION_WINDOW_S,
};
use crate::rtf::{estimate_interference_subspace, estimate_target_rtf, InterferenceSubspace, RtfVector};
use crate::scene::{
    assemble_scene_with, load_scene, oracle_constraints, read_json, write_json, write_scene,
    FrameSets, SceneBundle,
};
use crate::scene_spec::load_scene_spec;
use crate::stats::{estimate_covariance, whitening_pair, HermitianStack, DEFAULT_FLOOR_RATIO};
use crate::stft::{analyze, StftConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guidance {
    /// Covariance-whitening estimates from the single-activity segments.
    Estimated,
    /// Ground truth from the simulator.
    Oracle,
    /// No spatial constraints; the penalty weights are forced to zero.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Lcmv,
    Penalty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub stft: StftConfig,
    #[serde(default)]
    pub schedule: PenaltySchedule,
    #[serde(default = "default_guidance")]
    pub guidance: Guidance,
    #[serde(default = "default_method")]
    pub method: MethodChoice,
    /// Overrides the scene's reference microphone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_mic: Option<usize>,
    #[serde(default = "default_window")]
    pub evaluation_window_s: (f64, f64),
    #[serde(default = "default_floor")]
    pub floor_ratio: f64,
}

fn default_guidance() -> Guidance {
    Guidance::Estimated
}
fn default_method() -> MethodChoice {
    MethodChoice::Penalty
}
fn default_window() -> (f64, f64) {
    EVALUATION_WINDOW_S
}
fn default_floor() -> f64 {
    DEFAULT_FLOOR_RATIO
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            schedule: PenaltySchedule::default(),
            guidance: default_guidance(),
            method: default_method(),
            reference_mic: None,
            evaluation_window_s: default_window(),
            floor_ratio: default_floor(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = read_json(path)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.schedule.validate()?;
        if !(self.floor_ratio >= 0.0 && self.floor_ratio < 1.0) {
            return Err(Error::InvalidArgument("floor_ratio must lie in [0, 1)".into()));
        }
        if self.method == MethodChoice::Lcmv && self.guidance == Guidance::None {
            return Err(Error::InvalidArgument(
                "LCMV needs constraints; use estimated or oracle guidance".into(),
            ));
        }
        Ok(())
    }

    /// The schedule actually used: guidance `none` zeroes both penalty weights.
    pub fn effective_schedule(&self) -> PenaltySchedule {
        match self.guidance {
            Guidance::None => self.schedule.without_constraints(),
            _ => self.schedule,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn reference(&self, bundle: &SceneBundle) -> usize {
        self.reference_mic.unwrap_or(bundle.reference_index())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub invalid_target_bins: Vec<usize>,
    pub invalid_interference_columns: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scene: String,
    pub config_hash: String,
}

/// Covariance-whitening estimates consumed by the beamformers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationArtifact {
    pub target_rtf: RtfVector,
    pub interference_subspace: InterferenceSubspace,
    pub noise_cov: HermitianStack,
    pub diagnostics: Diagnostics,
    pub provenance: Provenance,
}

impl EstimationArtifact {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let a: Self = read_json(path)?;
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.target_rtf.bins();
        let m = self.target_rtf.dim();
        if self.interference_subspace.bins() != k
            || self.noise_cov.bins() != k
            || self.noise_cov.dim() != m
            || self.interference_subspace.basis.iter().any(|b| b.nrows() != m)
        {
            return Err(Error::Shape("estimation artifact shapes disagree".into()));
        }
        Ok(())
    }

    pub fn constraints(&self) -> Result<ConstraintSet> {
        ConstraintSet::new(self.target_rtf.clone(), self.interference_subspace.clone())
    }
}

fn require_frames(frames: &[usize], what: &str) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::EmptyFrameSet(format!(
            "no {what} frames; covariance-whitening estimation requires separated source activity patterns"
        )));
    }
    Ok(())
}

/// Noise covariance, target RTF and interference subspace from the single-activity frames.
pub fn estimate(bundle: &SceneBundle, config: &ExperimentConfig, scene_label: &str) -> Result<EstimationArtifact> {
    let sets = FrameSets::from_plan(&bundle.timeline, &config.stft, bundle.sample_rate());
    require_frames(&sets.noise, "noise-only")?;
    require_frames(&sets.target, "target-only")?;
    require_frames(&sets.interference, "interference-only")?;
    let reference = config.reference(bundle);
    let spec = analyze(&bundle.mixture, &config.stft)?;
    let noise_cov = estimate_covariance(&spec, &sets.noise)?;
    let (inv_sqrt, sqrt_h) = whitening_pair(&noise_cov, config.floor_ratio)?;
    let target_rtf = estimate_target_rtf(&spec, &sets.target, &inv_sqrt, &sqrt_h, reference)?;
    let rank = bundle.spec.speakers() - 1;
    let interference_subspace =
        estimate_interference_subspace(&spec, &sets.interference, &inv_sqrt, &sqrt_h, reference, rank)?;
    Ok(EstimationArtifact {
        diagnostics: Diagnostics {
            invalid_target_bins: target_rtf.invalid_bins.clone(),
            invalid_interference_columns: interference_subspace.invalid_columns.clone(),
        },
        target_rtf,
        interference_subspace,
        noise_cov,
        provenance: Provenance {
            scene: scene_label.to_string(),
            config_hash: config.hash(),
        },
    })
}

/// Constraints for the configured guidance, `None` when unguided.
pub fn guidance_constraints(
    bundle: &SceneBundle,
    config: &ExperimentConfig,
    artifact: Option<&EstimationArtifact>,
) -> Result<Option<ConstraintSet>> {
    match config.guidance {
        Guidance::None => Ok(None),
        Guidance::Oracle => {
            let (mut rtf, mut sub) = oracle_constraints(bundle)?;
            if let Some(r) = config.reference_mic {
                rtf = renormalize_rtf(&rtf, r);
                sub = renormalize_subspace(&sub, r);
            }
            Ok(Some(ConstraintSet::new(rtf, sub)?))
        }
        Guidance::Estimated => {
            let a = artifact.ok_or_else(|| {
                Error::Pipeline("estimated guidance needs an estimation artifact".into())
            })?;
            Ok(Some(a.constraints()?))
        }
    }
}

fn renormalize_rtf(rtf: &RtfVector, reference: usize) -> RtfVector {
    RtfVector::from_unnormalized(rtf.values.clone(), reference)
}

fn renormalize_subspace(sub: &InterferenceSubspace, reference: usize) -> InterferenceSubspace {
    InterferenceSubspace::from_unnormalized(sub.basis.clone(), reference)
}

/// Noise covariance for LCMV: the artifact's in estimated mode, the babble image's over the
/// estimation segment in oracle mode.
fn lcmv_noise_covariance(
    bundle: &SceneBundle,
    config: &ExperimentConfig,
    artifact: Option<&EstimationArtifact>,
) -> Result<HermitianStack> {
    match (config.guidance, artifact) {
        (Guidance::Estimated, Some(a)) => Ok(a.noise_cov.clone()),
        _ => {
            let m = bundle.mixture.channels();
            match bundle.babble_image() {
                Some(b) => {
                    let clip = b.clip.slice(0, bundle.estimation_samples())?;
                    let spec = analyze(&clip, &config.stft)?;
                    let frames: Vec<usize> = (0..spec.frames()).collect();
                    estimate_covariance(&spec, &frames)
                }
                None => HermitianStack::new(
                    vec![crate::linalg::CMatrix::identity(m, m); config.stft.bins()],
                    1,
                ),
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct BeamformOutput {
    pub weights: BeamWeights,
    pub trace: Option<OptimizationTrace>,
    pub fallback_bins: Vec<usize>,
    pub enhanced: AudioClip,
}

/// Weights from the estimation segment, applied to the whole recording.
pub fn beamform(
    bundle: &SceneBundle,
    config: &ExperimentConfig,
    artifact: Option<&EstimationArtifact>,
) -> Result<BeamformOutput> {
    config.validate()?;
    let constraints = guidance_constraints(bundle, config, artifact)?;
    let rate = bundle.sample_rate();
    let (weights, trace, fallback_bins) = match config.method {
        MethodChoice::Lcmv => {
            let c = constraints
                .as_ref()
                .ok_or_else(|| Error::Pipeline("LCMV needs constraints".into()))?;
            let noise = lcmv_noise_covariance(bundle, config, artifact)?;
            let sol = lcmv_solve(c, &noise, rate, config.stft)?;
            (sol.weights, None, sol.fallback_bins)
        }
        MethodChoice::Penalty => {
            let end = bundle.estimation_samples();
            let spec = analyze(&bundle.mixture.slice(0, end)?, &config.stft)?;
            let reference = config.reference(bundle);
            let target = bundle.target_image()?.clip.select(reference).slice(0, end)?;
            let schedule = config.effective_schedule();
            let init = initial_weights(
                &schedule,
                constraints.as_ref(),
                bundle.mixture.channels(),
                reference,
                config.stft,
                rate,
            )?;
            let (w, trace) = penalty_optimize(&spec, &target, constraints.as_ref(), &schedule, &init)?;
            (w, Some(trace), Vec::new())
        }
    };
    let enhanced = AudioClip::mono(crate::eval::beamform_clip(&weights, &bundle.mixture)?, rate)?;
    Ok(BeamformOutput {
        weights,
        trace,
        fallback_bins,
        enhanced,
    })
}

fn scene_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Renders the scene described by `spec_path` into `out_dir`.
pub fn cmd_simulate(spec_path: &Path, out_dir: &Path, stft: &StftConfig) -> Result<SceneBundle> {
    let spec = load_scene_spec(spec_path)?;
    let bundle = assemble_scene_with(&spec, stft)?;
    write_scene(&bundle, out_dir)?;
    info!("wrote scene to {}", out_dir.display());
    Ok(bundle)
}

pub fn cmd_estimate(scene_dir: &Path, config: &ExperimentConfig, out_path: &Path) -> Result<EstimationArtifact> {
    let bundle = load_scene(scene_dir)?;
    let artifact = estimate(&bundle, config, &scene_label(scene_dir))?;
    artifact.write_json(out_path)?;
    Ok(artifact)
}

/// Writes `enhanced.wav`, `weights.json` and, for the penalty method, `trace.csv`.
pub fn cmd_beamform(
    scene_dir: &Path,
    artifact_path: Option<&Path>,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<BeamformOutput> {
    let bundle = load_scene(scene_dir)?;
    let artifact = match (config.guidance, artifact_path) {
        (Guidance::Estimated, None) => {
            return Err(Error::Pipeline(
                "estimated guidance needs an estimation artifact (--estimation)".into(),
            ))
        }
        (_, Some(p)) => Some(EstimationArtifact::read_json(p)?),
        (_, None) => None,
    };
    let out = beamform(&bundle, config, artifact.as_ref())?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_wav(&out.enhanced, out_dir.join("enhanced.wav"))?;
    out.weights.write_json(&out_dir.join("weights.json"))?;
    if let Some(t) = &out.trace {
        t.write_csv(&out_dir.join("trace.csv"))?;
    }
    Ok(out)
}

/// Metrics of the enhanced signal and of the weights applied to each component. Writes the
/// CSV to `out_csv` and the full report next to it as JSON.
pub fn cmd_evaluate(
    scene_dir: &Path,
    enhanced_path: &Path,
    weights_path: &Path,
    config: &ExperimentConfig,
    out_csv: &Path,
) -> Result<MetricsReport> {
    let bundle = load_scene(scene_dir)?;
    let enhanced = read_wav(enhanced_path)?;
    if enhanced.channels() != 1 || enhanced.len() != bundle.mixture.len() {
        return Err(Error::Shape(format!(
            "enhanced signal has {} channels x {} samples, scene {} samples",
            enhanced.channels(),
            enhanced.len(),
            bundle.mixture.len()
        )));
    }
    let weights = BeamWeights::read_json(weights_path)?;
    let mut report = component_metrics(&weights, &bundle, config.evaluation_window_s)?;
    let (a, b) = window_samples(config.evaluation_window_s, bundle.sample_rate(), bundle.mixture.len())?;
    let reference = bundle.target_image()?.clip.channel(config.reference(&bundle));
    report.si_sdr_db = si_sdr_slices(&enhanced.channel(0)[a..b], &reference[a..b])?;
    report.write_csv(out_csv)?;
    report.write_json(&out_csv.with_extension("json"))?;
    Ok(report)
}

/// Wideband beampattern CSV at `out_csv`, narrowband values at `<stem>_narrowband.csv`.
pub fn cmd_beampattern(
    weights_path: &Path,
    scene_dir: &Path,
    out_csv: &Path,
    distance_m: Option<f64>,
    angles_deg: Option<Vec<f64>>,
) -> Result<Beampattern> {
    let weights = BeamWeights::read_json(weights_path)?;
    let spec: crate::scene_spec::SceneSpec = read_json(&scene_dir.join("spec.json"))?;
    let array = spec.array_geometry()?;
    let angles = angles_deg.unwrap_or_else(default_angle_grid);
    let bp = beampattern(&weights, &array, &angles, distance_m.unwrap_or(BEAMPATTERN_DISTANCE_M))?;
    std::fs::write(out_csv, bp.to_csv()).map_err(|e| Error::io(out_csv, e))?;
    let stem = out_csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let nb = out_csv.with_file_name(format!("{stem}_narrowband.csv"));
    std::fs::write(&nb, bp.narrowband_csv()).map_err(|e| Error::io(&nb, e))?;
    Ok(bp)
}

/// Every stage in sequence under `out_dir`: `scene/`, `estimation.json`, `beamform/`,
/// `metrics.csv`, `beampattern.csv`.
pub fn cmd_run_all(spec_path: &Path, config: &ExperimentConfig, out_dir: &Path) -> Result<MetricsReport> {
    let scene_dir = out_dir.join("scene");
    cmd_simulate(spec_path, &scene_dir, &config.stft)?;
    let estimation: Option<PathBuf> = match config.guidance {
        Guidance::Estimated => {
            let p = out_dir.join("estimation.json");
            cmd_estimate(&scene_dir, config, &p)?;
            Some(p)
        }
        _ => None,
    };
    let bf_dir = out_dir.join("beamform");
    cmd_beamform(&scene_dir, estimation.as_deref(), config, &bf_dir)?;
    let report = cmd_evaluate(
        &scene_dir,
        &bf_dir.join("enhanced.wav"),
        &bf_dir.join("weights.json"),
        config,
        &out_dir.join("metrics.csv"),
    )?;
    cmd_beampattern(&bf_dir.join("weights.json"), &scene_dir, &out_dir.join("beampattern.csv"), None, None)?;
    Ok(report)
}
