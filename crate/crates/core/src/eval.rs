//! SI-SDR, per-component power ratios, SNR/SIR and beampatterns.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::beamformer::{apply_weights, BeamWeights};
use crate::error::{Error, Result};
use crate::geometry::{steering_vector, ArrayGeometry, SPEED_OF_SOUND};
use crate::scene::{ImageRole, SceneBundle};
use crate::stft::{analyze, synthesize};

pub const SI_SDR_CAP_DB: f64 = 60.0;

/// Default evaluation window, seconds.
pub const EVALUATION_WINDOW_S: (f64, f64) = (2.5, 8.0);

const DB: f64 = 10.0 / std::f64::consts::LN_10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// SI-SDR in dB of `estimate` against `reference`, capped at +-60 dB.
pub fn si_sdr_slices(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    Ok(si_sdr_with_gradient(estimate, reference)?.0)
}

/// SI-SDR and its gradient with respect to `estimate`; the gradient is zero where the cap binds.
pub fn si_sdr_with_gradient(estimate: &[f64], reference: &[f64]) -> Result<(f64, Vec<f64>)> {
    if estimate.len() != reference.len() {
        return Err(Error::Shape(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ss = dot(reference, reference);
    if ss == 0.0 {
        return Err(Error::ZeroReference);
    }
    let cross = dot(estimate, reference);
    let ee = dot(estimate, estimate);
    let alpha = cross / ss;
    let p = cross * cross / ss;
    let q = (ee - p).max(0.0);
    let zero = || vec![0.0; estimate.len()];
    if p <= 0.0 {
        return Ok((-SI_SDR_CAP_DB, zero()));
    }
    if q <= 0.0 {
        return Ok((SI_SDR_CAP_DB, zero()));
    }
    let value = DB * (p / q).ln();
    if value >= SI_SDR_CAP_DB {
        return Ok((SI_SDR_CAP_DB, zero()));
    }
    if value <= -SI_SDR_CAP_DB {
        return Ok((-SI_SDR_CAP_DB, zero()));
    }
    // d/dx [10 log10 P - 10 log10 Q], dP = 2 alpha s, dQ = 2 x - 2 alpha s
    let grad = estimate
        .iter()
        .zip(reference)
        .map(|(&x, &s)| DB * (2.0 * alpha * s / p - (2.0 * x - 2.0 * alpha * s) / q))
        .collect();
    Ok((value, grad))
}

/// SI-SDR of two mono clips of equal length.
pub fn si_sdr(estimate: &AudioClip, reference: &AudioClip) -> Result<f64> {
    if estimate.channels() != 1 || reference.channels() != 1 {
        return Err(Error::Shape("SI-SDR needs mono clips".into()));
    }
    si_sdr_slices(estimate.channel(0), reference.channel(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRatio {
    /// `target`, `interferer_<idx>` or `babble`.
    pub component: String,
    pub role: ImageRole,
    pub power_ratio_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scene_id: String,
    pub method: String,
    pub window_s: (f64, f64),
    pub si_sdr_db: f64,
    pub snr_db: Option<f64>,
    pub sir_db: Option<f64>,
    pub input_si_sdr_db: f64,
    pub input_snr_db: Option<f64>,
    pub input_sir_db: Option<f64>,
    pub power_ratios: Vec<ComponentRatio>,
    /// Output gain applied so the target power is preserved.
    pub target_gain: f64,
}

impl MetricsReport {
    pub fn power_ratio(&self, component: &str) -> Option<f64> {
        self.power_ratios
            .iter()
            .find(|c| c.component == component)
            .map(|c| c.power_ratio_db)
    }

    pub fn interferer_ratios(&self) -> Vec<f64> {
        self.power_ratios
            .iter()
            .filter(|c| c.role == ImageRole::Interferer)
            .map(|c| c.power_ratio_db)
            .collect()
    }

    pub const CSV_HEADER: &'static str = "metric,value_db,component,method,scene_id";

    /// Rows `metric,value_db,component,method,scene_id`; input-side metrics use method `input`.
    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = Vec::new();
        let mut push = |metric: &str, value: f64, component: &str, method: &str| {
            rows.push(format!("{metric},{value:.6},{component},{method},{}", self.scene_id));
        };
        push("si_sdr", self.si_sdr_db, "target", &self.method);
        if let Some(v) = self.snr_db {
            push("snr", v, "target", &self.method);
        }
        if let Some(v) = self.sir_db {
            push("sir", v, "target", &self.method);
        }
        for c in &self.power_ratios {
            push("power_ratio", c.power_ratio_db, &c.component, &self.method);
        }
        push("si_sdr", self.input_si_sdr_db, "target", "input");
        if let Some(v) = self.input_snr_db {
            push("snr", v, "target", "input");
        }
        if let Some(v) = self.input_sir_db {
            push("sir", v, "target", "input");
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in self.csv_rows() {
            out += &r;
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::scene::write_json(self, path)
    }
}

/// Beamforms one multichannel clip with the weights, full length.
pub fn beamform_clip(weights: &BeamWeights, clip: &AudioClip) -> Result<Vec<f64>> {
    let spec = analyze(clip, &weights.config)?;
    let out = synthesize(&apply_weights(weights, &spec)?)?;
    Ok(out.into_samples().remove(0))
}

fn energy(x: &[f64]) -> f64 {
    dot(x, x)
}

fn ratio_db(num: f64, den: f64) -> Option<f64> {
    (num > 0.0 && den > 0.0).then(|| 10.0 * (num / den).log10())
}

/// Window `[start, end)` in seconds as sample indices, checked against the recording length.
pub fn window_samples(window_s: (f64, f64), sample_rate: u32, len: usize) -> Result<(usize, usize)> {
    let fs = sample_rate as f64;
    let (a, b) = ((window_s.0 * fs).round(), (window_s.1 * fs).round());
    if !(a >= 0.0 && b > a && b as usize <= len) {
        return Err(Error::InvalidArgument(format!(
            "window {:?} s outside a recording of {:.3} s",
            window_s,
            len as f64 / fs
        )));
    }
    Ok((a as usize, b as usize))
}

/// Beamforms every image separately and reports SI-SDR, SNR, SIR and per-component power
/// ratios over `window_s`, with the output rescaled so the target power is unchanged.
pub fn component_metrics(weights: &BeamWeights, bundle: &SceneBundle, window_s: (f64, f64)) -> Result<MetricsReport> {
    let rate = bundle.sample_rate();
    let (a, b) = window_samples(window_s, rate, bundle.mixture.len())?;
    let reference = bundle.reference_index();
    let target = bundle.target_image()?;
    let interferers = bundle.interferer_images();
    let babble = bundle.babble_image();
    if interferers.len() + 1 != bundle.spec.speakers() {
        return Err(Error::Pipeline("scene is missing per-source images".into()));
    }

    let t_in = &target.clip.channel(reference)[a..b];
    let t_out_full = beamform_clip(weights, &target.clip)?;
    let t_out = &t_out_full[a..b];
    let (et_in, et_out) = (energy(t_in), energy(t_out));
    if et_in == 0.0 {
        return Err(Error::Pipeline("target is silent in the evaluation window".into()));
    }
    if et_out == 0.0 {
        return Err(Error::Pipeline("beamformer removes the target entirely".into()));
    }
    let gain2 = et_in / et_out;

    let mut power_ratios = vec![ComponentRatio {
        component: "target".into(),
        role: ImageRole::Target,
        power_ratio_db: 10.0 * (gain2 * et_out / et_in).log10(),
    }];
    let len = bundle.mixture.len();
    let mut interf_in = vec![0.0; len];
    let mut interf_out = vec![0.0; len];
    for img in &interferers {
        let out = beamform_clip(weights, &img.clip)?;
        let inp = img.clip.channel(reference);
        if let Some(r) = ratio_db(gain2 * energy(&out[a..b]), energy(&inp[a..b])) {
            power_ratios.push(ComponentRatio {
                component: format!("interferer_{}", img.source_index),
                role: ImageRole::Interferer,
                power_ratio_db: r,
            });
        }
        interf_in.iter_mut().zip(inp).for_each(|(s, x)| *s += x);
        interf_out.iter_mut().zip(&out).for_each(|(s, x)| *s += x);
    }
    let (mut snr, mut input_snr) = (None, None);
    if let Some(img) = babble {
        let out = beamform_clip(weights, &img.clip)?;
        let inp = &img.clip.channel(reference)[a..b];
        let (eb_in, eb_out) = (energy(inp), energy(&out[a..b]));
        if let Some(r) = ratio_db(gain2 * eb_out, eb_in) {
            power_ratios.push(ComponentRatio {
                component: "babble".into(),
                role: ImageRole::Babble,
                power_ratio_db: r,
            });
        }
        snr = ratio_db(et_out, eb_out);
        input_snr = ratio_db(et_in, eb_in);
    }
    let sir = ratio_db(et_out, energy(&interf_out[a..b]));
    let input_sir = ratio_db(et_in, energy(&interf_in[a..b]));

    let mix_out = beamform_clip(weights, &bundle.mixture)?;
    let si_sdr_db = si_sdr_slices(&mix_out[a..b], t_in)?;
    let input_si_sdr_db = si_sdr_slices(&bundle.mixture.channel(reference)[a..b], t_in)?;

    Ok(MetricsReport {
        scene_id: format!("scene-{}", bundle.spec.seed),
        method: weights.method.to_string(),
        window_s,
        si_sdr_db,
        snr_db: snr,
        sir_db: sir,
        input_si_sdr_db,
        input_snr_db: input_snr,
        input_sir_db: input_sir,
        power_ratios,
        target_gain: gain2.sqrt(),
    })
}

/// Far-field distance used when none is given, meters.
pub const BEAMPATTERN_DISTANCE_M: f64 = 100.0;

/// `-90..=90` in one-degree steps.
pub fn default_angle_grid() -> Vec<f64> {
    (-90..=90).map(f64::from).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Beampattern {
    pub angles_deg: Vec<f64>,
    pub frequencies_hz: Vec<f64>,
    /// `B(k, theta)`, bins x angles.
    pub narrowband: Vec<Vec<Complex64>>,
    /// `P(theta) = sum_k |B(k, theta)|^2`
    pub wideband_power: Vec<f64>,
}

impl Beampattern {
    /// `P(theta)` in dB relative to its maximum.
    pub fn wideband_db(&self) -> Vec<f64> {
        let max = self.wideband_power.iter().cloned().fold(0.0, f64::max);
        self.wideband_power
            .iter()
            .map(|&p| if max > 0.0 { 10.0 * (p / max).log10() } else { 0.0 })
            .collect()
    }

    /// Indices of strict-or-flat local minima of `P(theta)`, grid ends excluded.
    pub fn local_minima(&self) -> Vec<usize> {
        let p = &self.wideband_power;
        (1..p.len().saturating_sub(1))
            .filter(|&i| p[i] <= p[i - 1] && p[i] <= p[i + 1] && (p[i] < p[i - 1] || p[i] < p[i + 1]))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("angle_deg,power_db\n");
        for (a, p) in self.angles_deg.iter().zip(self.wideband_db()) {
            out += &format!("{a},{p:.6}\n");
        }
        out
    }

    pub fn narrowband_csv(&self) -> String {
        let mut out = String::from("bin,freq_hz,angle_deg,re,im\n");
        for (k, row) in self.narrowband.iter().enumerate() {
            for (a, b) in self.angles_deg.iter().zip(row) {
                out += &format!("{k},{},{a},{},{}\n", self.frequencies_hz[k], b.re, b.im);
            }
        }
        out
    }
}

/// `B(k, theta) = w^H(k) h(k, theta)` with reference-normalised steering towards a point at
/// `distance_m` and bearing `theta` in the array's horizontal plane.
pub fn beampattern(weights: &BeamWeights, array: &ArrayGeometry, angles_deg: &[f64], distance_m: f64) -> Result<Beampattern> {
    if angles_deg.is_empty() {
        return Err(Error::InvalidArgument("empty angle grid".into()));
    }
    if weights.dim() != array.len() {
        return Err(Error::Shape(format!(
            "{}-element weights for a {}-microphone array",
            weights.dim(),
            array.len()
        )));
    }
    let frequencies_hz: Vec<f64> = (0..weights.bins())
        .map(|k| weights.config.bin_frequency(k, weights.sample_rate))
        .collect();
    let points: Vec<_> = angles_deg.iter().map(|&t| array.point_at(t, distance_m)).collect();
    let narrowband = weights
        .w
        .iter()
        .zip(&frequencies_hz)
        .map(|(w, &f)| {
            points
                .iter()
                .map(|p| Ok(w.dotc(&steering_vector(f, p, array, SPEED_OF_SOUND)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let wideband_power = (0..angles_deg.len())
        .map(|i| narrowband.iter().map(|row: &Vec<Complex64>| row[i].norm_sqr()).sum())
        .collect();
    Ok(Beampattern {
        angles_deg: angles_deg.to_vec(),
        frequencies_hz,
        narrowband,
        wideband_power,
    })
}
