//! JSON scene descriptions: room, array, talkers, babble and activity timeline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, Point};

/// Durations in seconds of the five consecutive recording segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentPlan {
    pub noise_only_s: f64,
    pub target_only_s: f64,
    pub interference_only_s: f64,
    pub estimation_mixture_s: f64,
    pub evaluation_mixture_s: f64,
}

impl Default for SegmentPlan {
    fn default() -> Self {
        Self {
            noise_only_s: 0.5,
            target_only_s: 1.0,
            interference_only_s: 1.0,
            estimation_mixture_s: 1.5,
            evaluation_mixture_s: 4.0,
        }
    }
}

/// Which talkers are active in a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    NoiseOnly,
    TargetOnly,
    InterferenceOnly,
    EstimationMixture,
    EvaluationMixture,
}

impl SegmentKind {
    pub const ALL: [SegmentKind; 5] = [
        SegmentKind::NoiseOnly,
        SegmentKind::TargetOnly,
        SegmentKind::InterferenceOnly,
        SegmentKind::EstimationMixture,
        SegmentKind::EvaluationMixture,
    ];

    pub fn target_active(self) -> bool {
        matches!(
            self,
            SegmentKind::TargetOnly | SegmentKind::EstimationMixture | SegmentKind::EvaluationMixture
        )
    }

    pub fn interferers_active(self) -> bool {
        matches!(
            self,
            SegmentKind::InterferenceOnly
                | SegmentKind::EstimationMixture
                | SegmentKind::EvaluationMixture
        )
    }
}

impl SegmentPlan {
    /// Fully overlapped recording: no single-activity segments at all.
    pub fn fully_overlapped(estimation_s: f64, evaluation_s: f64) -> Self {
        Self {
            noise_only_s: 0.0,
            target_only_s: 0.0,
            interference_only_s: 0.0,
            estimation_mixture_s: estimation_s,
            evaluation_mixture_s: evaluation_s,
        }
    }

    pub fn duration(&self, kind: SegmentKind) -> f64 {
        match kind {
            SegmentKind::NoiseOnly => self.noise_only_s,
            SegmentKind::TargetOnly => self.target_only_s,
            SegmentKind::InterferenceOnly => self.interference_only_s,
            SegmentKind::EstimationMixture => self.estimation_mixture_s,
            SegmentKind::EvaluationMixture => self.evaluation_mixture_s,
        }
    }

    pub fn total_s(&self) -> f64 {
        SegmentKind::ALL.iter().map(|&k| self.duration(k)).sum()
    }

    /// Seconds covered by the beamformer estimation part (everything before the evaluation mixture).
    pub fn estimation_end_s(&self) -> f64 {
        self.total_s() - self.evaluation_mixture_s
    }

    /// `[start, end)` of a segment in seconds.
    pub fn bounds_s(&self, kind: SegmentKind) -> (f64, f64) {
        let mut start = 0.0;
        for k in SegmentKind::ALL {
            let end = start + self.duration(k);
            if k == kind {
                return (start, end);
            }
            start = end;
        }
        unreachable!()
    }

    /// `[start, end)` of a segment in samples, rounding boundaries to the nearest sample.
    pub fn bounds_samples(&self, kind: SegmentKind, sample_rate: u32) -> (usize, usize) {
        let (a, b) = self.bounds_s(kind);
        let fs = sample_rate as f64;
        ((a * fs).round() as usize, (b * fs).round() as usize)
    }

    pub fn total_samples(&self, sample_rate: u32) -> usize {
        (self.total_s() * sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        for k in SegmentKind::ALL {
            let d = self.duration(k);
            if !d.is_finite() || d < 0.0 {
                return Err(Error::InvalidScene(format!(
                    "segment {k:?} has invalid duration {d}"
                )));
            }
        }
        if self.total_s() <= 0.0 {
            return Err(Error::InvalidScene("timeline has zero duration".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Room {
    pub width_m: f64,
    pub length_m: f64,
    pub height_m: f64,
}

impl Room {
    pub fn contains_strictly(&self, p: &Point) -> bool {
        p[0] > 0.0
            && p[0] < self.width_m
            && p[1] > 0.0
            && p[1] < self.length_m
            && p[2] > 0.0
            && p[2] < self.height_m
    }

    pub fn center(&self) -> Point {
        [self.width_m / 2.0, self.length_m / 2.0, self.height_m / 2.0]
    }
}

/// Either explicit microphone positions, or a uniform linear array around `center_m`
/// whose axis is rotated by `tilt_deg` in the horizontal plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mic_positions_m: Option<Vec<Point>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_m: Option<Point>,
    #[serde(default = "default_num_mics")]
    pub num_mics: usize,
    #[serde(default = "default_spacing")]
    pub spacing_m: f64,
    #[serde(default = "default_array_height")]
    pub height_m: f64,
    #[serde(default)]
    pub tilt_deg: f64,
    #[serde(default)]
    pub reference_index: usize,
}

fn default_num_mics() -> usize {
    8
}
fn default_spacing() -> f64 {
    0.05
}
fn default_array_height() -> f64 {
    1.3
}

impl Default for ArraySpec {
    fn default() -> Self {
        Self {
            mic_positions_m: None,
            center_m: None,
            num_mics: default_num_mics(),
            spacing_m: default_spacing(),
            height_m: default_array_height(),
            tilt_deg: 0.0,
            reference_index: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Target,
    Interferer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub position_m: Point,
    pub role: Role,
    /// Mono speech clip; a seeded synthetic talker is generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_path: Option<PathBuf>,
    /// M-channel room impulse response; anechoic propagation when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rir_path: Option<PathBuf>,
    /// RMS of the dry source signal.
    #[serde(default = "default_gain")]
    pub gain: f64,
}

fn default_gain() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BabbleSpec {
    #[serde(default = "default_babble_speakers")]
    pub speakers: usize,
    /// RMS of the rendered babble at the reference microphone.
    pub level: f64,
    #[serde(default = "default_wall_offset")]
    pub wall_offset_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions_m: Option<Vec<Point>>,
    /// Babble talker clips; speech-shaped noise is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_paths: Option<Vec<PathBuf>>,
}

fn default_babble_speakers() -> usize {
    20
}
fn default_wall_offset() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub room: Room,
    #[serde(default)]
    pub array: ArraySpec,
    pub sources: Vec<SourceSpec>,
    pub babble: BabbleSpec,
    #[serde(default)]
    pub timeline: SegmentPlan,
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: u32,
}

fn default_rate() -> u32 {
    crate::audio::SAMPLE_RATE
}

impl SceneSpec {
    pub fn speakers(&self) -> usize {
        self.sources.len()
    }

    pub fn target_index(&self) -> usize {
        self.sources
            .iter()
            .position(|s| s.role == Role::Target)
            .expect("validated spec has a target")
    }

    pub fn interferer_indices(&self) -> Vec<usize> {
        self.sources
            .iter()
            .enumerate()
            .filter(|(_, s)| s.role == Role::Interferer)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn mic_positions(&self) -> Vec<Point> {
        if let Some(p) = &self.array.mic_positions_m {
            return p.clone();
        }
        let a = &self.array;
        let c = a.center_m.unwrap_or([
            self.room.width_m / 2.0,
            self.room.length_m / 2.0,
            a.height_m,
        ]);
        let t = a.tilt_deg.to_radians();
        let axis = [t.cos(), t.sin(), 0.0];
        let half = (a.num_mics as f64 - 1.0) / 2.0;
        (0..a.num_mics)
            .map(|i| {
                let off = (i as f64 - half) * a.spacing_m;
                [c[0] + off * axis[0], c[1] + off * axis[1], c[2]]
            })
            .collect()
    }

    pub fn array_geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(self.mic_positions(), self.array.reference_index)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.room;
        if !(r.width_m > 0.0 && r.length_m > 0.0 && r.height_m > 0.0) {
            return Err(Error::InvalidScene("room dimensions must be positive".into()));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::InvalidScene("sample rate must be positive".into()));
        }
        self.timeline.validate()?;
        let array = self.array_geometry()?;
        for (i, p) in array.positions().iter().enumerate() {
            if !r.contains_strictly(p) {
                return Err(Error::InvalidScene(format!("microphone {i} outside room")));
            }
        }
        let targets = self.sources.iter().filter(|s| s.role == Role::Target).count();
        if targets != 1 {
            return Err(Error::InvalidScene(format!(
                "exactly one target required, found {targets}"
            )));
        }
        let j = self.speakers();
        if j < 2 {
            return Err(Error::InvalidScene(format!(
                "at least two speakers required, found {j}"
            )));
        }
        if j > array.len() {
            return Err(Error::TooManySpeakers {
                speakers: j,
                mics: array.len(),
            });
        }
        for (i, s) in self.sources.iter().enumerate() {
            if !r.contains_strictly(&s.position_m) {
                return Err(Error::InvalidScene(format!("source {i} outside room")));
            }
            if !(s.gain.is_finite() && s.gain >= 0.0) {
                return Err(Error::InvalidScene(format!("source {i} has invalid gain")));
            }
        }
        let b = &self.babble;
        if !(b.level.is_finite() && b.level >= 0.0) {
            return Err(Error::InvalidScene("babble level must be >= 0".into()));
        }
        if let Some(ps) = &b.positions_m {
            if ps.len() != b.speakers {
                return Err(Error::InvalidScene(format!(
                    "{} babble positions for {} babble speakers",
                    ps.len(),
                    b.speakers
                )));
            }
            if let Some(i) = ps.iter().position(|p| !r.contains_strictly(p)) {
                return Err(Error::InvalidScene(format!("babble speaker {i} outside room")));
            }
        }
        if b.speakers > 0
            && (2.0 * b.wall_offset_m >= r.width_m.min(r.length_m) || b.wall_offset_m <= 0.0)
        {
            return Err(Error::InvalidScene("babble wall offset does not fit the room".into()));
        }
        Ok(())
    }

    /// Resolves relative clip and RIR paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for s in &mut self.sources {
            s.clip_path.as_mut().map(fix);
            s.rir_path.as_mut().map(fix);
        }
        if let Some(ps) = &mut self.babble.clip_paths {
            ps.iter_mut().for_each(fix);
        }
    }

    pub fn is_anechoic(&self) -> bool {
        self.sources.iter().all(|s| s.rir_path.is_none())
    }
}

/// Parses and validates a scene file. Relative paths inside are resolved against its directory.
pub fn load_scene_spec(path: impl AsRef<Path>) -> Result<SceneSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let mut spec = parse_scene_spec(&text).map_err(|e| match e {
        Error::Json { source, .. } => Error::json(path, source),
        other => other,
    })?;
    if let Some(dir) = path.parent() {
        spec.resolve_paths(dir);
    }
    Ok(spec)
}

pub fn parse_scene_spec(text: &str) -> Result<SceneSpec> {
    let spec: SceneSpec =
        serde_json::from_str(text).map_err(|e| Error::json("<scene spec>", e))?;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_source_json(extra_target: bool) -> String {
        let second_role = if extra_target { "target" } else { "interferer" };
        format!(
            r#"{{
              "room": {{"width_m": 6.0, "length_m": 9.0, "height_m": 3.0}},
              "array": {{"num_mics": 8, "spacing_m": 0.05, "tilt_deg": 10.0}},
              "sources": [
                {{"position_m": [3.0, 5.7, 1.3], "role": "target"}},
                {{"position_m": [2.2, 5.3, 1.3], "role": "{second_role}"}},
                {{"position_m": [3.9, 5.4, 1.3], "role": "interferer"}}
              ],
              "babble": {{"level": 0.01}},
              "seed": 7
            }}"#
        )
    }

    #[test]
    fn default_timeline_applied() {
        let spec = parse_scene_spec(&three_source_json(false)).unwrap();
        assert_eq!(spec.speakers(), 3);
        assert_eq!(spec.timeline, SegmentPlan::default());
        assert!((spec.timeline.total_s() - 8.0).abs() < 1e-12);
        assert_eq!(spec.sample_rate_hz, 16_000);
        assert_eq!(spec.babble.speakers, 20);
        assert_eq!(spec.mic_positions().len(), 8);
    }

    #[test]
    fn two_targets_rejected() {
        let err = parse_scene_spec(&three_source_json(true)).unwrap_err();
        assert!(matches!(err, Error::InvalidScene(_)), "{err}");
    }

    #[test]
    fn source_outside_room_rejected() {
        let text = three_source_json(false).replace("[3.9, 5.4, 1.3]", "[6.5, 5.4, 1.3]");
        assert!(matches!(parse_scene_spec(&text), Err(Error::InvalidScene(_))));
    }

    #[test]
    fn more_speakers_than_mics_rejected() {
        let text = three_source_json(false).replace("\"num_mics\": 8", "\"num_mics\": 2");
        let err = parse_scene_spec(&text).unwrap_err();
        assert!(matches!(err, Error::TooManySpeakers { speakers: 3, mics: 2 }));
        assert!(err.to_string().contains("J exceeds M"));
    }

    #[test]
    fn source_at_1_2_m_accepted() {
        // array centre defaults to (3, 4.5, 1.3) in a 6 x 9 x 3 room
        let text = three_source_json(false);
        let spec = parse_scene_spec(&text).unwrap();
        let c = [3.0, 4.5, 1.3];
        let p = spec.sources[0].position_m;
        let d = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
        assert!((d - 1.2).abs() < 1e-12);
    }

    #[test]
    fn zero_length_segments_allowed() {
        let plan = SegmentPlan::fully_overlapped(4.0, 4.0);
        plan.validate().unwrap();
        assert_eq!(plan.bounds_s(SegmentKind::EstimationMixture), (0.0, 4.0));
        let bad = SegmentPlan {
            noise_only_s: -0.1,
            ..SegmentPlan::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn parsing_is_deterministic() {
        let a = parse_scene_spec(&three_source_json(false)).unwrap();
        let b = parse_scene_spec(&three_source_json(false)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn segment_bounds_default() {
        let p = SegmentPlan::default();
        assert_eq!(p.bounds_samples(SegmentKind::NoiseOnly, 16_000), (0, 8_000));
        assert_eq!(p.bounds_samples(SegmentKind::TargetOnly, 16_000), (8_000, 24_000));
        assert_eq!(p.bounds_samples(SegmentKind::EvaluationMixture, 16_000), (64_000, 128_000));
        assert!((p.estimation_end_s() - 4.0).abs() < 1e-12);
    }
}
