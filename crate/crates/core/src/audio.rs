//! Multichannel audio clips and WAV interchange.

use std::path::Path;

use crate::error::{Error, Result};

/// Canonical sample rate of the simulator.
pub const SAMPLE_RATE: u32 = 16_000;

/// Real-valued multichannel signal, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidClip("no channels".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidClip("sample rate must be positive".into()));
        }
        let len = samples[0].len();
        if len == 0 {
            return Err(Error::EmptyAudio);
        }
        if samples.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidClip("channels differ in length".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![vec![0.0; len]; channels.max(1)], sample_rate)
    }

    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.samples[index]
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Vec<f64>> {
        self.samples
    }

    /// Single-channel clip holding channel `index`.
    pub fn select(&self, index: usize) -> AudioClip {
        AudioClip {
            samples: vec![self.samples[index].clone()],
            sample_rate: self.sample_rate,
        }
    }

    /// Samples `[start, end)` of every channel.
    pub fn slice(&self, start: usize, end: usize) -> Result<AudioClip> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "slice [{start}, {end}) outside clip of {} samples",
                self.len()
            )));
        }
        AudioClip::new(
            self.samples.iter().map(|c| c[start..end].to_vec()).collect(),
            self.sample_rate,
        )
    }

    pub fn scaled(&self, gain: f64) -> AudioClip {
        AudioClip {
            samples: self
                .samples
                .iter()
                .map(|c| c.iter().map(|x| x * gain).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    fn check_finite(&self) -> Result<()> {
        for (channel, c) in self.samples.iter().enumerate() {
            if let Some(index) = c.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteSample { channel, index });
            }
        }
        Ok(())
    }
}

/// Reads integer PCM or float WAV; integer samples are scaled to [-1, 1].
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader =
        hound::WavReader::open(path).map_err(|e| Error::UnsupportedEncoding(e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedEncoding("zero channels".into()));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::UnsupportedEncoding(format!(
                    "{}-bit float",
                    spec.bits_per_sample
                )));
            }
            reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()
        }
        hound::SampleFormat::Int => {
            let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| Error::UnsupportedEncoding(e.to_string()))?;

    let frames = interleaved.len() / channels;
    if frames == 0 {
        return Err(Error::EmptyAudio);
    }
    let mut samples = vec![Vec::with_capacity(frames); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (c, &v) in frame.iter().enumerate() {
            samples[c].push(v);
        }
    }
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes a 32-bit float, channel-interleaved WAV.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    clip.check_finite()?;
    let spec = hound::WavSpec {
        channels: clip.channels() as u16,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::UnsupportedEncoding(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for i in 0..clip.len() {
        for c in &clip.samples {
            writer.write_sample(c[i] as f32).map_err(to_err)?;
        }
    }
    writer.finalize().map_err(to_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reads_16_bit_mono() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pcm16.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..16_000i32 {
            w.write_sample(((i % 200) - 100) as i16 * 300).unwrap();
        }
        w.finalize().unwrap();

        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.channels(), 1);
        assert_eq!(clip.len(), 16_000);
        assert_eq!(clip.sample_rate(), 16_000);
        assert_eq!(clip.channel(0)[0], -30_000.0 / 32_768.0);
        assert!(clip.channel(0).iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn one_second_of_silence_has_expected_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.wav");
        write_wav(&AudioClip::zeros(1, 16_000, 16_000).unwrap(), &path).unwrap();
        let bytes = std::fs::metadata(&path).unwrap().len();
        let reader = hound::WavReader::open(&path).unwrap();
        assert_eq!(reader.len(), 16_000);
        assert_eq!(reader.spec().sample_format, hound::SampleFormat::Float);
        // RIFF header + fmt chunk (IEEE float, extensible) + fact-free data chunk
        let data_bytes = 16_000 * 4;
        assert!(bytes >= data_bytes + 44 && bytes <= data_bytes + 80, "{bytes}");
    }

    #[test]
    fn truncated_header_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"RIFF\x10\x00\x00\x00WAVEfm").unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(err.to_string().starts_with("unsupported encoding"), "{err}");
    }

    #[test]
    fn missing_file_is_reported() {
        let err = read_wav("/nonexistent/clip.wav").unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }

    #[test]
    fn nan_is_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let clip = AudioClip::mono(vec![0.0, f64::NAN, 0.1], 16_000).unwrap();
        let err = write_wav(&clip, dir.path().join("nan.wav")).unwrap_err();
        assert!(matches!(err, Error::NonFiniteSample { channel: 0, index: 1 }));
    }

    #[test]
    fn unwritable_path_fails() {
        let clip = AudioClip::zeros(1, 10, 16_000).unwrap();
        assert!(write_wav(&clip, "/nonexistent-dir/x.wav").is_err());
    }

    #[test]
    fn ragged_channels_rejected() {
        assert!(AudioClip::new(vec![vec![0.0; 3], vec![0.0; 2]], 16_000).is_err());
        assert!(AudioClip::new(vec![vec![0.0; 3]], 0).is_err());
        assert!(matches!(AudioClip::new(vec![vec![]], 16_000), Err(Error::EmptyAudio)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn wav_round_trip(channels in 1usize..5, len in 1usize..400, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<Vec<f64>> = (0..channels)
                .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let clip = AudioClip::new(samples, 16_000).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.wav");
            write_wav(&clip, &path).unwrap();
            let back = read_wav(&path).unwrap();
            prop_assert_eq!(back.channels(), channels);
            prop_assert_eq!(back.len(), len);
            for c in 0..channels {
                for (a, b) in clip.channel(c).iter().zip(back.channel(c)) {
                    prop_assert!((a - b).abs() <= 1e-6);
                }
            }
        }
    }
}
