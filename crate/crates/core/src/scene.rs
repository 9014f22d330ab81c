//! Scene rendering: per-source microphone images, wall-adjacent babble, activity gating,
//! frame sets, and the on-disk scene directory.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav, AudioClip};
use crate::error::{Error, Result};
use crate::geometry::{distance, steering_vector, ArrayGeometry, Point, SPEED_OF_SOUND};
use crate::linalg::{CMatrix, CVector};
use crate::rtf::{InterferenceSubspace, RtfVector};
use crate::scene_spec::{
    ArraySpec, BabbleSpec, Role, Room, SceneSpec, SegmentKind, SegmentPlan, SourceSpec,
};
use crate::stft::{analyze, StftConfig};

/// Raised-cosine fade applied inside each activity interval.
const RAMP_SAMPLES: usize = 160;

const STREAM_TALKER: u64 = 1_000;
const STREAM_BABBLE: u64 = 2_000;
const STREAM_BABBLE_POSITIONS: u64 = 3_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageRole {
    Target,
    Interferer,
    Babble,
}

impl ImageRole {
    fn tag(self) -> &'static str {
        match self {
            ImageRole::Target => "target",
            ImageRole::Interferer => "interferer",
            ImageRole::Babble => "babble",
        }
    }
}

impl From<Role> for ImageRole {
    fn from(r: Role) -> Self {
        match r {
            Role::Target => ImageRole::Target,
            Role::Interferer => ImageRole::Interferer,
        }
    }
}

/// One source as observed at every microphone.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceImage {
    pub clip: AudioClip,
    pub role: ImageRole,
    pub source_index: usize,
}

/// STFT frame indices with single-activity content.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSets {
    pub noise: Vec<usize>,
    pub target: Vec<usize>,
    pub interference: Vec<usize>,
}

impl FrameSets {
    /// Frames wholly inside the noise-only, target-only and interference-only segments.
    pub fn from_plan(plan: &SegmentPlan, config: &StftConfig, sample_rate: u32) -> Self {
        let within = |kind| {
            let (a, b) = plan.bounds_samples(kind, sample_rate);
            config.frames_within(a, b)
        };
        Self {
            noise: within(SegmentKind::NoiseOnly),
            target: within(SegmentKind::TargetOnly),
            interference: within(SegmentKind::InterferenceOnly),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub mixture: AudioClip,
    pub images: Vec<SourceImage>,
    pub timeline: SegmentPlan,
    pub frame_sets: FrameSets,
    pub stft: StftConfig,
    pub spec: SceneSpec,
}

impl SceneBundle {
    pub fn sample_rate(&self) -> u32 {
        self.mixture.sample_rate()
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        self.spec.array_geometry()
    }

    pub fn reference_index(&self) -> usize {
        self.spec.array.reference_index
    }

    pub fn target_image(&self) -> Result<&SourceImage> {
        self.images
            .iter()
            .find(|i| i.role == ImageRole::Target)
            .ok_or_else(|| Error::Pipeline("scene has no target image".into()))
    }

    pub fn interferer_images(&self) -> Vec<&SourceImage> {
        self.images
            .iter()
            .filter(|i| i.role == ImageRole::Interferer)
            .collect()
    }

    pub fn babble_image(&self) -> Option<&SourceImage> {
        self.images.iter().find(|i| i.role == ImageRole::Babble)
    }

    /// Target image at the reference microphone.
    pub fn reference_target(&self) -> Result<AudioClip> {
        Ok(self.target_image()?.clip.select(self.reference_index()))
    }

    /// Samples `[0, end)` used for beamformer estimation.
    pub fn estimation_samples(&self) -> usize {
        let sr = self.sample_rate();
        let (_, end) = self
            .timeline
            .bounds_samples(SegmentKind::EstimationMixture, sr);
        end.min(self.mixture.len())
    }
}

/// `2^p >= n`
fn fft_len(n: usize) -> usize {
    n.next_power_of_two()
}

fn forward(x: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf
}

fn inverse_real(mut buf: Vec<Complex64>, len: usize) -> Vec<f64> {
    let n = buf.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf.iter().take(len).map(|z| z.re / n as f64).collect()
}

/// Signed frequency of FFT bin `i` out of `n`.
fn bin_hz(i: usize, n: usize, sample_rate: u32) -> f64 {
    let fs = sample_rate as f64;
    if i <= n / 2 {
        i as f64 * fs / n as f64
    } else {
        (i as f64 - n as f64) * fs / n as f64
    }
}

/// Adds `spectrum * (1/r_m) exp(-j 2 pi f (r_m - r_ref) / c)` to every microphone accumulator.
fn propagate_into(
    acc: &mut [Vec<Complex64>],
    spectrum: &[Complex64],
    source: &Point,
    array: &ArrayGeometry,
    sample_rate: u32,
) -> Result<()> {
    let r: Vec<f64> = array
        .positions()
        .iter()
        .enumerate()
        .map(|(m, p)| {
            let d = distance(p, source);
            if d < 1e-9 {
                Err(Error::ZeroDistance(m))
            } else {
                Ok(d)
            }
        })
        .collect::<Result<_>>()?;
    let r_ref = r[array.reference_index()];
    let n = spectrum.len();
    for (m, out) in acc.iter_mut().enumerate() {
        let delay = (r[m] - r_ref) / SPEED_OF_SOUND;
        let gain = 1.0 / r[m];
        for (i, (o, s)) in out.iter_mut().zip(spectrum).enumerate() {
            let f = bin_hz(i, n, sample_rate);
            *o += s * Complex64::from_polar(gain, -2.0 * std::f64::consts::PI * f * delay);
        }
    }
    Ok(())
}

/// Anechoic image: fractional delay relative to the reference microphone and `1/r_m`
/// attenuation, applied to the zero-padded full-length spectrum.
pub fn render_source(clip: &AudioClip, position: &Point, array: &ArrayGeometry) -> Result<SourceImage> {
    if clip.channels() != 1 {
        return Err(Error::InvalidClip(format!(
            "source clip must be mono, has {} channels",
            clip.channels()
        )));
    }
    let len = clip.len();
    let n = fft_len(len + 2048);
    let spectrum = forward(clip.channel(0), n);
    let mut acc = vec![vec![Complex64::new(0.0, 0.0); n]; array.len()];
    propagate_into(&mut acc, &spectrum, position, array, clip.sample_rate())?;
    let samples = acc.into_iter().map(|b| inverse_real(b, len)).collect();
    Ok(SourceImage {
        clip: AudioClip::new(samples, clip.sample_rate())?,
        role: ImageRole::Target,
        source_index: 0,
    })
}

/// Per-channel linear convolution with an M-channel impulse response, truncated to the clip length.
pub fn render_with_rir(clip: &AudioClip, rirs: &AudioClip) -> Result<SourceImage> {
    if clip.channels() != 1 {
        return Err(Error::InvalidClip("source clip must be mono".into()));
    }
    let len = clip.len();
    let n = fft_len(len + rirs.len());
    let spectrum = forward(clip.channel(0), n);
    let samples = (0..rirs.channels())
        .map(|m| {
            let h = forward(rirs.channel(m), n);
            inverse_real(spectrum.iter().zip(&h).map(|(a, b)| a * b).collect(), len)
        })
        .collect();
    Ok(SourceImage {
        clip: AudioClip::new(samples, clip.sample_rate())?,
        role: ImageRole::Target,
        source_index: 0,
    })
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

fn normalize_rms(mut x: Vec<f64>, target: f64) -> Vec<f64> {
    let r = rms(&x);
    if r > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / r);
    }
    x
}

/// Long-term speech spectrum approximation: rises below 100 Hz, rolls off 6 dB/oct above 500 Hz.
fn speech_shape(f: f64) -> f64 {
    let f = f.abs();
    (f / (f + 100.0)) / (1.0 + (f / 500.0).powi(2)).sqrt()
}

fn shaped_noise(rng: &mut ChaCha8Rng, len: usize, sample_rate: u32, shape: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = fft_len(len);
    let mut spec = forward(&gaussian(rng, n), n);
    for (i, z) in spec.iter_mut().enumerate() {
        *z *= shape(bin_hz(i, n, sample_rate));
    }
    normalize_rms(inverse_real(spec, len), 1.0)
}

/// Gaussian noise with a long-term speech spectrum, unit RMS.
pub fn speech_shaped_noise(seed: u64, stream: u64, len: usize, sample_rate: u32) -> Vec<f64> {
    shaped_noise(&mut rng_for(seed, stream), len, sample_rate, speech_shape)
}

/// Speech-shaped noise under a random log-normal syllabic envelope (about 4 Hz), unit RMS.
pub fn synthetic_talker(seed: u64, stream: u64, len: usize, sample_rate: u32) -> Vec<f64> {
    let mut rng = rng_for(seed, stream);
    let carrier = shaped_noise(&mut rng, len, sample_rate, speech_shape);
    let envelope = shaped_noise(&mut rng, len, sample_rate, |f| {
        1.0 / (1.0 + (f.abs() / 4.0).powi(4)).sqrt()
    });
    let x = carrier
        .iter()
        .zip(&envelope)
        .map(|(c, e)| c * (0.9 * e).exp())
        .collect();
    normalize_rms(x, 1.0)
}

/// Activity intervals `[start, end)` in samples for a talker of the given role.
pub fn activity_intervals(plan: &SegmentPlan, role: Role, sample_rate: u32) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for kind in SegmentKind::ALL {
        let active = match role {
            Role::Target => kind.target_active(),
            Role::Interferer => kind.interferers_active(),
        };
        let (a, b) = plan.bounds_samples(kind, sample_rate);
        if !active || b <= a {
            continue;
        }
        match out.last_mut() {
            Some(last) if last.1 == a => last.1 = b,
            _ => out.push((a, b)),
        }
    }
    out
}

/// Lays `dry` consecutively into the intervals of a zero signal of `total` samples, with
/// raised-cosine fades inside each interval.
fn place_in_intervals(dry: &[f64], intervals: &[(usize, usize)], total: usize) -> Vec<f64> {
    let mut out = vec![0.0; total];
    let mut cursor = 0;
    for &(a, b) in intervals {
        let n = b - a;
        let ramp = RAMP_SAMPLES.min(n / 4);
        for i in 0..n {
            let fade = if i < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * i as f64 / ramp as f64).cos()
            } else if n - 1 - i < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * (n - 1 - i) as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            out[a + i] = dry[cursor + i] * fade;
        }
        cursor += n;
    }
    out
}

fn gate(clip: AudioClip, intervals: &[(usize, usize)]) -> Result<AudioClip> {
    let rate = clip.sample_rate();
    let samples = clip
        .into_samples()
        .into_iter()
        .map(|mut ch| {
            let mut keep = vec![false; ch.len()];
            for &(a, b) in intervals {
                keep[a.min(ch.len())..b.min(ch.len())].fill(true);
            }
            ch.iter_mut().zip(&keep).for_each(|(x, &k)| {
                if !k {
                    *x = 0.0
                }
            });
            ch
        })
        .collect();
    AudioClip::new(samples, rate)
}

fn load_mono(path: &Path, sample_rate: u32) -> Result<Vec<f64>> {
    let clip = read_wav(path)?;
    if clip.channels() != 1 {
        return Err(Error::InvalidClip(format!("{} is not mono", path.display())));
    }
    if clip.sample_rate() != sample_rate {
        return Err(Error::InvalidClip(format!(
            "{} is sampled at {} Hz, scene requires {sample_rate} Hz",
            path.display(),
            clip.sample_rate()
        )));
    }
    Ok(clip.into_samples().remove(0))
}

/// Dry talker signal of `active` samples, RMS equal to `gain`.
fn dry_talker(spec: &SceneSpec, index: usize, active: usize) -> Result<Vec<f64>> {
    let src = &spec.sources[index];
    let raw = match &src.clip_path {
        Some(p) => {
            let x = load_mono(p, spec.sample_rate_hz)?;
            if x.len() < active {
                return Err(Error::InvalidClip(format!(
                    "{} has {} samples, activity requires {active}",
                    p.display(),
                    x.len()
                )));
            }
            x[..active].to_vec()
        }
        None => synthetic_talker(spec.seed, STREAM_TALKER + index as u64, active, spec.sample_rate_hz),
    };
    Ok(normalize_rms(raw, src.gain))
}

/// Babble talker positions: given explicitly, or drawn along the four walls at the spec's offset.
pub fn babble_positions(spec: &SceneSpec) -> Vec<Point> {
    let b = &spec.babble;
    if let Some(p) = &b.positions_m {
        return p.clone();
    }
    let mut rng = rng_for(spec.seed, STREAM_BABBLE_POSITIONS);
    let r = &spec.room;
    let o = b.wall_offset_m;
    (0..b.speakers)
        .map(|_| {
            let wall: u32 = rng.random_range(0..4);
            let u = rng.random_range(0.0..1.0);
            let z = rng.random_range(1.0f64.min(r.height_m * 0.3)..1.8f64.min(r.height_m * 0.7));
            let along_x = o + u * (r.width_m - 2.0 * o);
            let along_y = o + u * (r.length_m - 2.0 * o);
            match wall {
                0 => [along_x, o, z],
                1 => [along_x, r.length_m - o, z],
                2 => [o, along_y, z],
                _ => [r.width_m - o, along_y, z],
            }
        })
        .collect()
}

/// Stationary babble: wall-adjacent speech-shaped talkers rendered anechoically and summed,
/// then scaled so the reference-microphone RMS equals the spec level.
pub fn render_babble(spec: &SceneSpec, array: &ArrayGeometry, rng_seed: u64) -> Result<SourceImage> {
    let len = spec.timeline.total_samples(spec.sample_rate_hz);
    let b = &spec.babble;
    let positions = babble_positions(spec);
    if let Some(paths) = &b.clip_paths {
        if paths.len() < b.speakers {
            return Err(Error::InvalidScene(format!(
                "{} babble clips for {} babble speakers",
                paths.len(),
                b.speakers
            )));
        }
    }
    let n = fft_len(len + 2048);
    let mut acc = vec![vec![Complex64::new(0.0, 0.0); n]; array.len()];
    for (i, pos) in positions.iter().enumerate() {
        let dry = match &b.clip_paths {
            Some(paths) => {
                let x = load_mono(&paths[i], spec.sample_rate_hz)?;
                if x.len() < len {
                    return Err(Error::InvalidClip(format!(
                        "babble clip {} shorter than the scene",
                        paths[i].display()
                    )));
                }
                normalize_rms(x[..len].to_vec(), 1.0)
            }
            None => speech_shaped_noise(rng_seed, STREAM_BABBLE + i as u64, len, spec.sample_rate_hz),
        };
        propagate_into(&mut acc, &forward(&dry, n), pos, array, spec.sample_rate_hz)?;
    }
    let mut samples: Vec<Vec<f64>> = acc.into_iter().map(|s| inverse_real(s, len)).collect();
    let r = rms(&samples[array.reference_index()]);
    let scale = if r > 0.0 { b.level / r } else { 0.0 };
    samples
        .iter_mut()
        .for_each(|ch| ch.iter_mut().for_each(|x| *x *= scale));
    Ok(SourceImage {
        clip: AudioClip::new(samples, spec.sample_rate_hz)?,
        role: ImageRole::Babble,
        source_index: 0,
    })
}

/// Renders, gates and sums every component of a validated spec with the default STFT framing.
pub fn assemble_scene(spec: &SceneSpec) -> Result<SceneBundle> {
    assemble_scene_with(spec, &StftConfig::default())
}

pub fn assemble_scene_with(spec: &SceneSpec, stft: &StftConfig) -> Result<SceneBundle> {
    spec.validate()?;
    stft.validate()?;
    let rate = spec.sample_rate_hz;
    let total = spec.timeline.total_samples(rate);
    let array = spec.array_geometry()?;
    let mut images = Vec::with_capacity(spec.speakers() + 1);

    for (i, src) in spec.sources.iter().enumerate() {
        let intervals = activity_intervals(&spec.timeline, src.role, rate);
        let active: usize = intervals.iter().map(|(a, b)| b - a).sum();
        let dry = if active > 0 {
            place_in_intervals(&dry_talker(spec, i, active)?, &intervals, total)
        } else {
            vec![0.0; total]
        };
        let dry = AudioClip::mono(dry, rate)?;
        let rendered = match &src.rir_path {
            Some(p) => {
                let rir = read_wav(p)?;
                if rir.channels() != array.len() {
                    return Err(Error::InvalidScene(format!(
                        "RIR {} has {} channels for {} microphones",
                        p.display(),
                        rir.channels(),
                        array.len()
                    )));
                }
                render_with_rir(&dry, &rir)?
            }
            None => render_source(&dry, &src.position_m, &array)?,
        };
        images.push(SourceImage {
            clip: gate(rendered.clip, &intervals)?,
            role: src.role.into(),
            source_index: i,
        });
    }
    if spec.babble.speakers > 0 && spec.babble.level > 0.0 {
        images.push(render_babble(spec, &array, spec.seed)?);
    }

    let mut mix = vec![vec![0.0; total]; array.len()];
    for img in &images {
        for (acc, ch) in mix.iter_mut().zip(img.clip.samples()) {
            acc.iter_mut().zip(ch).for_each(|(a, x)| *a += x);
        }
    }
    Ok(SceneBundle {
        mixture: AudioClip::new(mix, rate)?,
        images,
        timeline: spec.timeline,
        frame_sets: FrameSets::from_plan(&spec.timeline, stft, rate),
        stft: *stft,
        spec: spec.clone(),
    })
}

/// Ground-truth constraints: steering vectors for anechoic scenes, image cross-spectra otherwise.
pub fn oracle_constraints(bundle: &SceneBundle) -> Result<(RtfVector, InterferenceSubspace)> {
    let spec = &bundle.spec;
    let reference = bundle.reference_index();
    let k = bundle.stft.bins();
    let rate = bundle.sample_rate();
    let target = spec.target_index();
    let interferers = spec.interferer_indices();

    let per_source: Vec<Vec<CVector>> = if spec.is_anechoic() {
        let array = bundle.geometry()?;
        spec.sources
            .iter()
            .map(|s| {
                (0..k)
                    .map(|b| {
                        steering_vector(bundle.stft.bin_frequency(b, rate), &s.position_m, &array, SPEED_OF_SOUND)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?
    } else {
        spec.sources
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let img = bundle
                    .images
                    .iter()
                    .find(|im| im.source_index == i && im.role != ImageRole::Babble)
                    .ok_or_else(|| Error::Pipeline(format!("missing image for source {i}")))?;
                cross_spectral_rtf(&img.clip, &bundle.stft, reference)
            })
            .collect::<Result<_>>()?
    };

    let rtf = RtfVector::from_unnormalized(per_source[target].clone(), reference);
    let basis = (0..k)
        .map(|b| {
            let cols: Vec<CVector> = interferers.iter().map(|&i| per_source[i][b].clone()).collect();
            if cols.is_empty() {
                CMatrix::zeros(bundle.mixture.channels(), 0)
            } else {
                CMatrix::from_columns(&cols)
            }
        })
        .collect();
    Ok((rtf, InterferenceSubspace::from_unnormalized(basis, reference)))
}

/// `sum_l X_m X_ref^* / sum_l |X_ref|^2` per bin.
fn cross_spectral_rtf(image: &AudioClip, config: &StftConfig, reference: usize) -> Result<Vec<CVector>> {
    let spec = analyze(image, config)?;
    let m = spec.channels();
    Ok((0..spec.num_bins())
        .map(|k| {
            let mut num = CVector::zeros(m);
            let mut den = 0.0;
            for l in 0..spec.frames() {
                let r = spec.bins[(reference, l, k)];
                den += r.norm_sqr();
                for ch in 0..m {
                    num[ch] += spec.bins[(ch, l, k)] * r.conj();
                }
            }
            if den > 0.0 {
                num / Complex64::new(den, 0.0)
            } else {
                num
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub kind: SegmentKind,
    pub start_s: f64,
    pub end_s: f64,
    pub start_sample: usize,
    pub end_sample: usize,
}

/// Contents of `timeline.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineFile {
    pub plan: SegmentPlan,
    pub sample_rate_hz: u32,
    pub segments: Vec<SegmentRecord>,
    pub stft: StftConfig,
    pub frame_sets: FrameSets,
}

impl TimelineFile {
    pub fn new(plan: &SegmentPlan, stft: &StftConfig, sample_rate: u32) -> Self {
        let segments = SegmentKind::ALL
            .iter()
            .map(|&kind| {
                let (start_s, end_s) = plan.bounds_s(kind);
                let (start_sample, end_sample) = plan.bounds_samples(kind, sample_rate);
                SegmentRecord {
                    kind,
                    start_s,
                    end_s,
                    start_sample,
                    end_sample,
                }
            })
            .collect();
        Self {
            plan: *plan,
            sample_rate_hz: sample_rate,
            segments,
            stft: *stft,
            frame_sets: FrameSets::from_plan(plan, stft, sample_rate),
        }
    }
}

fn image_file_name(img: &SourceImage) -> String {
    format!("image_{}_{}.wav", img.role.tag(), img.source_index)
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Writes `mixture.wav`, `image_<role>_<idx>.wav`, `timeline.json` and `spec.json`.
pub fn write_scene(bundle: &SceneBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_wav(&bundle.mixture, dir.join("mixture.wav"))?;
    for img in &bundle.images {
        write_wav(&img.clip, dir.join(image_file_name(img)))?;
    }
    write_json(
        &TimelineFile::new(&bundle.timeline, &bundle.stft, bundle.sample_rate()),
        &dir.join("timeline.json"),
    )?;
    write_json(&bundle.spec, &dir.join("spec.json"))
}

/// Reads a directory produced by [`write_scene`].
pub fn load_scene(dir: &Path) -> Result<SceneBundle> {
    let spec: SceneSpec = read_json(&dir.join("spec.json"))?;
    let timeline: TimelineFile = read_json(&dir.join("timeline.json"))?;
    let mixture = read_wav(dir.join("mixture.wav"))?;
    let mut images = Vec::new();
    for (i, s) in spec.sources.iter().enumerate() {
        let role = ImageRole::from(s.role);
        let path = dir.join(format!("image_{}_{i}.wav", role.tag()));
        if path.exists() {
            images.push(SourceImage {
                clip: read_wav(&path)?,
                role,
                source_index: i,
            });
        }
    }
    let babble = dir.join("image_babble_0.wav");
    if babble.exists() {
        images.push(SourceImage {
            clip: read_wav(&babble)?,
            role: ImageRole::Babble,
            source_index: 0,
        });
    }
    Ok(SceneBundle {
        mixture,
        images,
        timeline: timeline.plan,
        frame_sets: timeline.frame_sets,
        stft: timeline.stft,
        spec,
    })
}

/// Knobs of the random scene generator.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSceneOptions {
    pub speakers: usize,
    /// Target-to-babble ratio at the reference microphone, dB.
    pub input_snr_db: f64,
    pub min_separation_deg: f64,
    pub max_bearing_deg: f64,
    /// Talker distance range from the array centre, meters.
    pub distance_m: (f64, f64),
    pub timeline: SegmentPlan,
}

impl Default for RandomSceneOptions {
    fn default() -> Self {
        Self {
            speakers: 3,
            input_snr_db: 5.0,
            min_separation_deg: 20.0,
            max_bearing_deg: 75.0,
            distance_m: (1.0, 1.5),
            timeline: SegmentPlan::default(),
        }
    }
}

/// Random anechoic scene: room 6-9 m by 6-9 m by 3 m, an 8-microphone 5 cm ULA at the room
/// centre with tilt in [-45, 45] degrees, talkers 1-1.5 m away in front of the array.
pub fn random_scene_spec(seed: u64, options: &RandomSceneOptions) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room = Room {
        width_m: rng.random_range(6.0..9.0),
        length_m: rng.random_range(6.0..9.0),
        height_m: 3.0,
    };
    let array = ArraySpec {
        tilt_deg: rng.random_range(-45.0..45.0),
        ..ArraySpec::default()
    };
    let mut spec = SceneSpec {
        room,
        array,
        sources: Vec::new(),
        babble: BabbleSpec {
            speakers: 20,
            level: 0.0,
            wall_offset_m: 0.5,
            positions_m: None,
            clip_paths: None,
        },
        timeline: options.timeline,
        seed,
        sample_rate_hz: crate::audio::SAMPLE_RATE,
    };
    let geometry = spec.array_geometry()?;
    let mut bearings: Vec<f64> = Vec::new();
    let mut attempts = 0;
    while bearings.len() < options.speakers {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::InvalidArgument(
                "cannot place talkers with the requested separation".into(),
            ));
        }
        let b = rng.random_range(-options.max_bearing_deg..options.max_bearing_deg);
        if bearings.iter().all(|x| (x - b).abs() >= options.min_separation_deg) {
            bearings.push(b);
        }
    }
    let mut target_distance = 1.0;
    for (i, &b) in bearings.iter().enumerate() {
        let d = rng.random_range(options.distance_m.0..options.distance_m.1);
        let position = geometry.point_at(b, d);
        if i == 0 {
            target_distance = distance(&position, &geometry.positions()[geometry.reference_index()]);
        }
        spec.sources.push(SourceSpec {
            position_m: position,
            role: if i == 0 { Role::Target } else { Role::Interferer },
            clip_path: None,
            rir_path: None,
            gain: 0.1,
        });
    }
    spec.babble.level = 0.1 / target_distance / 10f64.powf(options.input_snr_db / 20.0);
    spec.validate()?;
    Ok(spec)
}

/// Paths of the per-image WAV files a scene directory holds.
pub fn image_paths(bundle: &SceneBundle, dir: &Path) -> Vec<PathBuf> {
    bundle.images.iter().map(|i| dir.join(image_file_name(i))).collect()
}
