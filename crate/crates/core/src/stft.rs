//! One-sided STFT analysis and weighted overlap-add synthesis.
//!
//! Frame `l` covers samples `[l * hop, l * hop + fft_size)`; the tail is zero-padded so
//! that every sample from `fft_size - hop` onwards is covered by `fft_size / hop` frames.
//! Synthesis divides by the per-sample window-product sum, so reconstruction is exact on
//! that interior range.

use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Periodic Hann, used for both analysis and synthesis.
    Hann,
    /// Square-root periodic Hann.
    SqrtHann,
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop_size: usize,
    #[serde(default = "default_window")]
    pub window: WindowKind,
}

fn default_window() -> WindowKind {
    WindowKind::Hann
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 512,
            hop_size: 256,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn window(&self) -> Vec<f64> {
        let n = self.fft_size;
        (0..n)
            .map(|i| {
                let hann = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
                match self.window {
                    WindowKind::Hann => hann,
                    WindowKind::SqrtHann => hann.sqrt(),
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }

    /// Centre frequency of bin `k`.
    pub fn bin_frequency(&self, k: usize, sample_rate: u32) -> f64 {
        k as f64 * sample_rate as f64 / self.fft_size as f64
    }

    /// Steady-state overlap-add sum of the window product over one hop period.
    fn overlap_profile(&self) -> Vec<f64> {
        let w = self.window();
        (0..self.hop_size)
            .map(|n| {
                (0..self.fft_size / self.hop_size)
                    .map(|j| w[n + j * self.hop_size].powi(2))
                    .sum()
            })
            .collect()
    }

    /// Requires an even FFT size, a hop dividing it, and an overlap-add sum of the
    /// analysis-synthesis window product bounded away from zero.
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || self.fft_size % 2 != 0 {
            return Err(Error::InvalidStft(format!(
                "fft_size {} must be even and >= 2",
                self.fft_size
            )));
        }
        if self.hop_size == 0 || self.fft_size % self.hop_size != 0 {
            return Err(Error::InvalidStft(format!(
                "hop {} must divide fft_size {}",
                self.hop_size, self.fft_size
            )));
        }
        let profile = self.overlap_profile();
        let max = profile.iter().cloned().fold(0.0, f64::max);
        let min = profile.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(max > 0.0 && min > 1e-3 * max) {
            return Err(Error::InvalidStft(format!(
                "window {:?} with hop {} does not overlap-add to a positive sum",
                self.window, self.hop_size
            )));
        }
        Ok(())
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        len.div_ceil(self.hop_size).max(self.fft_size / self.hop_size)
    }

    /// First sample with full frame overlap.
    pub fn interior_start(&self) -> usize {
        self.fft_size - self.hop_size
    }

    /// Frames lying wholly inside `[start, end)` samples.
    pub fn frames_within(&self, start: usize, end: usize) -> Vec<usize> {
        let first = start.div_ceil(self.hop_size);
        (first..)
            .take_while(|l| l * self.hop_size + self.fft_size <= end)
            .collect()
    }
}

/// Complex STFT tensor, channels x frames x bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: Array3<Complex64>,
    pub config: StftConfig,
    pub sample_rate: u32,
    /// Length in samples of the analysed signal.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn channels(&self) -> usize {
        self.bins.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.bins.shape()[1]
    }

    pub fn num_bins(&self) -> usize {
        self.bins.shape()[2]
    }

    pub fn channel(&self, m: usize) -> ArrayView2<'_, Complex64> {
        self.bins.index_axis(ndarray::Axis(0), m)
    }

    /// Measurement vector `y(l, k)` across channels.
    pub fn snapshot(&self, frame: usize, bin: usize) -> impl Iterator<Item = Complex64> + '_ {
        (0..self.channels()).map(move |m| self.bins[[m, frame, bin]])
    }
}

/// Reusable FFT plans and window for one configuration.
pub struct StftEngine {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftEngine").field("config", &self.config).finish()
    }
}

impl StftEngine {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: config.window(),
            forward: planner.plan_fft_forward(config.fft_size),
            inverse: planner.plan_fft_inverse(config.fft_size),
            config,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    /// One-sided spectra of every frame of `x`, frames x bins.
    pub fn analyze_channel(&self, x: &[f64]) -> Array2<Complex64> {
        let n = self.config.fft_size;
        let hop = self.config.hop_size;
        let frames = self.config.frame_count(x.len());
        let k = self.config.bins();
        let mut out = Array2::zeros((frames, k));
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for l in 0..frames {
            let start = l * hop;
            for (i, b) in buf.iter_mut().enumerate() {
                let v = x.get(start + i).copied().unwrap_or(0.0);
                *b = Complex64::new(v * self.window[i], 0.0);
            }
            self.forward.process(&mut buf);
            for (dst, src) in out.row_mut(l).iter_mut().zip(&buf[..k]) {
                *dst = *src;
            }
        }
        out
    }

    /// Per-sample overlap-add sum of the analysis-synthesis window product.
    fn normalization(&self, frames: usize, len: usize) -> Vec<f64> {
        let hop = self.config.hop_size;
        let mut d = vec![0.0; len];
        for l in 0..frames {
            for (i, w) in self.window.iter().enumerate() {
                if let Some(v) = d.get_mut(l * hop + i) {
                    *v += w * w;
                }
            }
        }
        d
    }

    fn inverse_frame(&self, spectrum: &[Complex64], buf: &mut [Complex64]) {
        let n = self.config.fft_size;
        let k = self.config.bins();
        buf[..k].copy_from_slice(spectrum);
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for i in k..n {
            buf[i] = buf[n - i].conj();
        }
        self.inverse.process(buf);
    }

    /// Weighted overlap-add synthesis of one channel (frames x bins) into `len` samples.
    pub fn synthesize_channel(&self, spec: ArrayView2<'_, Complex64>, len: usize) -> Vec<f64> {
        let n = self.config.fft_size;
        let hop = self.config.hop_size;
        let frames = spec.nrows();
        let mut out = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut row = vec![Complex64::new(0.0, 0.0); self.config.bins()];
        for l in 0..frames {
            row.iter_mut().zip(spec.row(l)).for_each(|(d, s)| *d = *s);
            self.inverse_frame(&row, &mut buf);
            let start = l * hop;
            for i in 0..n {
                if let Some(o) = out.get_mut(start + i) {
                    *o += self.window[i] * buf[i].re / n as f64;
                }
            }
        }
        let d = self.normalization(frames, len);
        let floor = 1e-10 * d.iter().cloned().fold(0.0, f64::max);
        for (o, &di) in out.iter_mut().zip(&d) {
            *o = if di > floor { *o / di } else { 0.0 };
        }
        out
    }

    /// Adjoint of [`synthesize_channel`](Self::synthesize_channel) with respect to the real
    /// and imaginary parts of the spectrum: for a real loss with gradient `grad` on the
    /// time samples, returns `dL/dRe X + j dL/dIm X` per frame and bin.
    pub fn synthesize_adjoint(&self, grad: &[f64], frames: usize) -> Array2<Complex64> {
        let n = self.config.fft_size;
        let hop = self.config.hop_size;
        let k = self.config.bins();
        let d = self.normalization(frames, grad.len());
        let floor = 1e-10 * d.iter().cloned().fold(0.0, f64::max);
        let scaled: Vec<f64> = grad
            .iter()
            .zip(&d)
            .map(|(&g, &di)| if di > floor { g / di } else { 0.0 })
            .collect();
        let mut out = Array2::zeros((frames, k));
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for l in 0..frames {
            let start = l * hop;
            for (i, b) in buf.iter_mut().enumerate() {
                let v = scaled.get(start + i).copied().unwrap_or(0.0);
                *b = Complex64::new(v * self.window[i], 0.0);
            }
            self.forward.process(&mut buf);
            for (j, dst) in out.row_mut(l).iter_mut().enumerate() {
                let weight = if j == 0 || j == n / 2 { 1.0 } else { 2.0 };
                let mut g = buf[j] * (weight / n as f64);
                if j == 0 || j == n / 2 {
                    g.im = 0.0;
                }
                *dst = g;
            }
        }
        out
    }
}

/// Forward STFT of every channel.
pub fn analyze(clip: &AudioClip, config: &StftConfig) -> Result<Spectrogram> {
    let engine = StftEngine::new(*config)?;
    analyze_with(&engine, clip)
}

pub fn analyze_with(engine: &StftEngine, clip: &AudioClip) -> Result<Spectrogram> {
    let config = *engine.config();
    if clip.len() < config.fft_size {
        return Err(Error::ClipTooShort {
            len: clip.len(),
            fft_size: config.fft_size,
        });
    }
    let frames = config.frame_count(clip.len());
    let mut bins = Array3::zeros((clip.channels(), frames, config.bins()));
    for m in 0..clip.channels() {
        let s = engine.analyze_channel(clip.channel(m));
        bins.index_axis_mut(ndarray::Axis(0), m).assign(&s);
    }
    Ok(Spectrogram {
        bins,
        config,
        sample_rate: clip.sample_rate(),
        signal_len: clip.len(),
    })
}

/// Inverse STFT by weighted overlap-add.
pub fn synthesize(spec: &Spectrogram) -> Result<AudioClip> {
    let engine = StftEngine::new(spec.config)?;
    synthesize_with(&engine, spec)
}

pub fn synthesize_with(engine: &StftEngine, spec: &Spectrogram) -> Result<AudioClip> {
    if *engine.config() != spec.config {
        return Err(Error::Shape("engine and spectrogram configs differ".into()));
    }
    let samples = (0..spec.channels())
        .map(|m| engine.synthesize_channel(spec.channel(m), spec.signal_len))
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn default_config_is_valid() {
        let c = StftConfig::default();
        c.validate().unwrap();
        assert_eq!(c.bins(), 257);
    }

    #[test]
    fn rejects_non_overlapping_hop() {
        let c = StftConfig {
            fft_size: 512,
            hop_size: 512,
            window: WindowKind::Hann,
        };
        assert!(c.validate().is_err());
        let c = StftConfig {
            fft_size: 512,
            hop_size: 200,
            window: WindowKind::Hann,
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_clip_gives_zero_spectrogram() {
        let clip = AudioClip::zeros(2, 2000, 16_000).unwrap();
        let s = analyze(&clip, &StftConfig::default()).unwrap();
        assert!(s.bins.iter().all(|x| x.norm() == 0.0));
        let back = synthesize(&s).unwrap();
        assert!(back.channel(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn too_short_clip_rejected() {
        let clip = AudioClip::zeros(1, 100, 16_000).unwrap();
        assert!(matches!(
            analyze(&clip, &StftConfig::default()),
            Err(Error::ClipTooShort { .. })
        ));
    }

    #[test]
    fn cosine_on_bin_concentrates_energy() {
        let c = StftConfig::default();
        let k0 = 40;
        let x: Vec<f64> = (0..4096)
            .map(|n| (2.0 * std::f64::consts::PI * k0 as f64 * n as f64 / 512.0).cos())
            .collect();
        let s = analyze(&AudioClip::mono(x, 16_000).unwrap(), &c).unwrap();
        let row = s.channel(0).row(5).to_owned();
        let total: f64 = row.iter().map(|v| v.norm_sqr()).sum();
        let near: f64 = (k0 - 1..=k0 + 1).map(|k| row[k].norm_sqr()).sum();
        // Hann leakage into +-1 bins is exactly (1/4)^2 each of the main bin: all energy sits there
        assert!(near / total >= 0.95);
        assert!((row[k0 + 1].norm() / row[k0].norm() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn impulse_first_frame_is_flat() {
        let c = StftConfig {
            window: WindowKind::SqrtHann,
            ..StftConfig::default()
        };
        let mut x = vec![0.0; 1024];
        x[0] = 1.0;
        let s = analyze(&AudioClip::mono(x, 16_000).unwrap(), &c).unwrap();
        let w0 = c.window()[0];
        for v in s.channel(0).row(0).iter() {
            assert!((v - Complex64::new(w0, 0.0)).norm() < 1e-15);
        }
        // periodic Hann vanishes at n = 0; shift the impulse to sample 3 and compare with a direct DFT
        let c = StftConfig::default();
        let mut x = vec![0.0; 1024];
        x[3] = 1.0;
        let s = analyze(&AudioClip::mono(x, 16_000).unwrap(), &c).unwrap();
        let w3 = c.window()[3];
        for (k, v) in s.channel(0).row(0).iter().enumerate() {
            let direct = Complex64::from_polar(w3, -2.0 * std::f64::consts::PI * 3.0 * k as f64 / 512.0);
            assert!((v - direct).norm() < 1e-12);
            assert!((v.norm() - w3).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_two_seconds() {
        for window in [WindowKind::Hann, WindowKind::SqrtHann, WindowKind::Rectangular] {
            let c = StftConfig {
                window,
                ..StftConfig::default()
            };
            let x = noise(32_000, 3);
            let clip = AudioClip::mono(x.clone(), 16_000).unwrap();
            let back = synthesize(&analyze(&clip, &c).unwrap()).unwrap();
            let a = c.interior_start();
            assert!(rel_err(&back.channel(0)[a..], &x[a..]) <= 1e-6, "{window:?}");
        }
    }

    #[test]
    fn linearity() {
        let c = StftConfig::default();
        let x = noise(5000, 1);
        let y = noise(5000, 2);
        let (a, b) = (0.7, -1.9);
        let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let sx = analyze(&AudioClip::mono(x, 16_000).unwrap(), &c).unwrap();
        let sy = analyze(&AudioClip::mono(y, 16_000).unwrap(), &c).unwrap();
        let sz = analyze(&AudioClip::mono(z, 16_000).unwrap(), &c).unwrap();
        for ((p, q), r) in sx.bins.iter().zip(sy.bins.iter()).zip(sz.bins.iter()) {
            assert!((p * a + q * b - r).norm() < 1e-9);
        }
    }

    #[test]
    fn weighted_parseval() {
        // sum_l sum_k c_k |X_l(k)|^2 = N sum_n x[n]^2 D[n], with D the window-square overlap sum
        for window in [WindowKind::Hann, WindowKind::Rectangular] {
            let c = StftConfig {
                window,
                ..StftConfig::default()
            };
            let engine = StftEngine::new(c).unwrap();
            let x = noise(6000, 9);
            let s = engine.analyze_channel(&x);
            let spec_energy: f64 = s
                .rows()
                .into_iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .map(|(k, v)| if k == 0 || k == 256 { v.norm_sqr() } else { 2.0 * v.norm_sqr() })
                        .sum::<f64>()
                })
                .sum();
            let d = engine.normalization(s.nrows(), x.len());
            let direct: f64 = 512.0 * x.iter().zip(&d).map(|(v, di)| v * v * di).sum::<f64>();
            assert!((spec_energy - direct).abs() <= 1e-9 * direct);
        }
        // rectangular window at 50% hop: D == 2 on the interior, so energy is proportional
        let c = StftConfig {
            window: WindowKind::Rectangular,
            ..StftConfig::default()
        };
        let engine = StftEngine::new(c).unwrap();
        let d = engine.normalization(20, 4000);
        assert!(d[256..4000].iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn adjoint_identity() {
        // <synth(X), g> = Re <X, adjoint(g)> in the real inner product on (Re, Im) parts
        let c = StftConfig::default();
        let engine = StftEngine::new(c).unwrap();
        let len = 3000;
        let frames = c.frame_count(len);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((frames, c.bins()), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let g: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = engine.synthesize_channel(x.view(), len);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let adj = engine.synthesize_adjoint(&g, frames);
        let mut rhs = 0.0;
        for (a, b) in x.iter().zip(adj.iter()) {
            rhs += a.re * b.re + a.im * b.im;
        }
        assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn frames_within_default_noise_segment() {
        let c = StftConfig::default();
        let v = c.frames_within(0, 8000);
        assert_eq!(v.first(), Some(&0));
        assert_eq!(v.last(), Some(&((8000 - 512) / 256)));
    }
}
