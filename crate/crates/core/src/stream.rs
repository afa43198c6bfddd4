//! Synthetic drifting frame stream and the labeled-sample buffer.
//!
//! Each frame is one 16-dimensional feature vector drawn from a Gaussian
//! cluster per class. A scenario is a list of segments; a segment fixes the
//! class priors (label-distribution drift), an affine covariate shift
//! (lighting and weather analogue) and a concept id that moves the cluster
//! centres (location analogue).

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::Sample;
use crate::seed::SeedTree;

pub const FEATURE_DIM: usize = 16;
pub const NUM_CLASSES: usize = 8;
pub const DEFAULT_FPS: u32 = 30;
pub const DEFAULT_BUFFER_CAPACITY: usize = 600;

/// Per-component standard deviation of the class centres.
pub const CLASS_SPREAD: f32 = 1.0;
/// Per-component standard deviation of a concept's centre displacement.
pub const CONCEPT_SPREAD: f32 = 0.8;
pub const NOISE_STD: f32 = 1.0;
/// Every feature is emitted in units of this factor.
pub const FEATURE_SCALE: f32 = 4.0;

pub const PRESET_NAMES: [&str; 8] = ["s1", "s2", "s3", "s4", "s5", "s6", "es1", "es2"];

#[derive(Debug, Error, PartialEq)]
pub enum StreamError {
    #[error("segment {index}: {reason}")]
    BadSegment { index: usize, reason: String },
    #[error("fps must be positive")]
    ZeroFps,
    #[error("time {t}s is outside the scenario [0, {total}s)")]
    OutOfRange { t: f64, total: f64 },
    #[error("frame {frame} is past the last frame {last}")]
    FrameOutOfRange { frame: u64, last: u64 },
    #[error("sample buffer is empty")]
    EmptyBuffer,
    #[error("n_v must be floor(n_t / 3) = {expected}, got {got}")]
    ValidationSplit { expected: usize, got: usize },
    #[error("unknown scenario preset {0:?}")]
    UnknownPreset(String),
}

fn one() -> f32 {
    1.0
}

fn default_fps() -> u32 {
    DEFAULT_FPS
}

/// `x -> scale * x + offset * d`, where `d` is a unit direction derived
/// from `direction_seed` and the stream seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateShift {
    #[serde(default = "one")]
    pub scale: f32,
    #[serde(default)]
    pub offset: f32,
    #[serde(default)]
    pub direction_seed: u64,
}

impl Default for CovariateShift {
    fn default() -> Self {
        Self { scale: 1.0, offset: 0.0, direction_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub duration_s: f64,
    pub priors: Vec<f64>,
    #[serde(default)]
    pub shift: CovariateShift,
    #[serde(default)]
    pub concept: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_fps")]
    pub fps: u32,
    #[serde(default)]
    pub segments: Vec<Segment>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), StreamError> {
        if self.fps == 0 {
            return Err(StreamError::ZeroFps);
        }
        for (index, s) in self.segments.iter().enumerate() {
            let bad = |reason: String| StreamError::BadSegment { index, reason };
            if !(s.duration_s.is_finite() && s.duration_s > 0.0) {
                return Err(bad(format!("duration {} must be positive", s.duration_s)));
            }
            if s.priors.len() != NUM_CLASSES {
                return Err(bad(format!("{} priors for {NUM_CLASSES} classes", s.priors.len())));
            }
            if s.priors.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(bad("priors must be non-negative".into()));
            }
            let sum: f64 = s.priors.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(bad(format!("priors sum to {sum}")));
            }
            if !(s.shift.scale.is_finite() && s.shift.scale > 0.0 && s.shift.offset.is_finite()) {
                return Err(bad("shift scale must be positive and offset finite".into()));
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    /// Start time of every segment after the first.
    pub fn drift_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        let mut out = Vec::new();
        for (i, s) in self.segments.iter().enumerate() {
            if i > 0 {
                out.push(t);
            }
            t += s.duration_s;
        }
        out
    }

    pub fn frame_count(&self) -> u64 {
        frames_in(self.total_duration(), self.fps)
    }

    pub fn preset(name: &str) -> Result<Scenario, StreamError> {
        presets::build(name).ok_or_else(|| StreamError::UnknownPreset(name.to_string()))
    }
}

/// Number of frames with timestamp `i / fps < duration`.
fn frames_in(duration: f64, fps: u32) -> u64 {
    let exact = duration * f64::from(fps);
    let rounded = exact.round();
    if (exact - rounded).abs() < 1e-9 {
        rounded.max(0.0) as u64
    } else {
        exact.ceil().max(0.0) as u64
    }
}

pub fn uniform_priors(active: &[usize]) -> Vec<f64> {
    let mut p = vec![0.0; NUM_CLASSES];
    for &c in active {
        p[c] = 1.0 / active.len() as f64;
    }
    p
}

struct SegmentModel {
    first_frame: u64,
    centres: Vec<[f32; FEATURE_DIM]>,
    direction: [f32; FEATURE_DIM],
    shift: CovariateShift,
    labels: WeightedIndex<f64>,
}

/// A scenario bound to a stream seed; frames are pure functions of
/// `(seed, frame index)`.
pub struct Stream {
    scenario: Scenario,
    seeds: SeedTree,
    segments: Vec<SegmentModel>,
    frames: u64,
}

fn normal_vector(rng: &mut impl Rng, std: f32) -> [f32; FEATURE_DIM] {
    let mut v = [0.0f32; FEATURE_DIM];
    for x in &mut v {
        let z: f32 = StandardNormal.sample(rng);
        *x = z * std;
    }
    v
}

impl Stream {
    pub fn new(scenario: &Scenario, seed: u64) -> Result<Self, StreamError> {
        scenario.validate()?;
        let seeds = SeedTree::new(seed);
        let base: Vec<[f32; FEATURE_DIM]> = {
            let mut rng = seeds.rng("class-centres");
            (0..NUM_CLASSES).map(|_| normal_vector(&mut rng, CLASS_SPREAD)).collect()
        };
        let mut segments = Vec::with_capacity(scenario.segments.len());
        let mut start = 0.0;
        for s in &scenario.segments {
            let centres = if s.concept == 0 {
                base.clone()
            } else {
                let mut rng = seeds.indexed_rng("concept", s.concept);
                base.iter()
                    .map(|c| {
                        let d = normal_vector(&mut rng, CONCEPT_SPREAD);
                        std::array::from_fn(|i| c[i] + d[i])
                    })
                    .collect()
            };
            let direction = {
                let mut rng = seeds.indexed_rng("direction", s.shift.direction_seed);
                let v = normal_vector(&mut rng, 1.0);
                let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                v.map(|x| x / norm)
            };
            let labels = WeightedIndex::new(&s.priors).map_err(|e| StreamError::BadSegment {
                index: segments.len(),
                reason: e.to_string(),
            })?;
            segments.push(SegmentModel { first_frame: frames_in(start, scenario.fps), centres, direction, shift: s.shift, labels });
            start += s.duration_s;
        }
        Ok(Self { scenario: scenario.clone(), seeds, segments, frames: scenario.frame_count() })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn fps(&self) -> u32 {
        self.scenario.fps
    }

    pub fn frame_count(&self) -> u64 {
        self.frames
    }

    pub fn segment_of(&self, frame: u64) -> usize {
        self.segments.partition_point(|s| s.first_frame <= frame).saturating_sub(1)
    }

    pub fn frame(&self, frame: u64) -> Result<Sample, StreamError> {
        if frame >= self.frames {
            return Err(StreamError::FrameOutOfRange { frame, last: self.frames.saturating_sub(1) });
        }
        let mut rng = self.seeds.indexed_rng("frames", frame);
        let (features, label) = self.features(self.segment_of(frame), &mut rng);
        Ok(Sample {
            features,
            true_label: label,
            teacher_label: None,
            timestamp: frame as f64 / f64::from(self.scenario.fps),
            frame,
        })
    }

    /// A fresh draw from segment `index`'s distribution, independent of the
    /// frame sequence; used for offline pre-training sets.
    pub fn draw(&self, index: usize, rng: &mut impl Rng) -> (Vec<f32>, usize) {
        self.features(index, rng)
    }

    fn features(&self, index: usize, rng: &mut impl Rng) -> (Vec<f32>, usize) {
        let seg = &self.segments[index];
        let label = seg.labels.sample(rng);
        let noise = normal_vector(rng, NOISE_STD);
        let centre = &seg.centres[label];
        let features = (0..FEATURE_DIM)
            .map(|i| FEATURE_SCALE * (seg.shift.scale * (centre[i] + noise[i]) + seg.shift.offset * seg.direction[i]))
            .collect();
        (features, label)
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn next_sample(&self, t: f64) -> Result<Sample, StreamError> {
        let total = self.scenario.total_duration();
        if !(t >= 0.0 && t < total) {
            return Err(StreamError::OutOfRange { t, total });
        }
        let frame = ((t * f64::from(self.scenario.fps)).floor() as u64).min(self.frames - 1);
        self.frame(frame)
    }

    /// Every frame of segment `index`.
    pub fn segment_frames(&self, index: usize) -> std::ops::Range<u64> {
        let start = self.segments[index].first_frame;
        let end = self.segments.get(index + 1).map_or(self.frames, |s| s.first_frame);
        start..end
    }
}

pub fn next_sample(scenario: &Scenario, seed: u64, t: f64) -> Result<Sample, StreamError> {
    Stream::new(scenario, seed)?.next_sample(t)
}

/// Fixed-capacity FIFO of teacher-labeled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    capacity: usize,
    entries: VecDeque<Sample>,
}

impl SampleBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, entries: VecDeque::with_capacity(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &Sample> {
        self.entries.iter()
    }

    /// Appends `d_l`, evicting the oldest entries beyond capacity.
    pub fn update(&mut self, d_l: &[Sample]) {
        for s in d_l {
            assert!(s.teacher_label.is_some(), "buffer entries must carry a teacher label");
            self.entries.push_back(s.clone());
        }
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }

    pub fn reset(&mut self) {
        self.entries.clear();
    }

    /// Draws `min(n_t + n_v, len)` entries without replacement and splits
    /// them into disjoint training and validation sets at the `n_t : n_v`
    /// ratio.
    pub fn get_data(&self, n_t: usize, n_v: usize, rng: &mut impl Rng) -> Result<(Vec<Sample>, Vec<Sample>), StreamError> {
        if n_v != n_t / 3 {
            return Err(StreamError::ValidationSplit { expected: n_t / 3, got: n_v });
        }
        if self.entries.is_empty() {
            return Err(StreamError::EmptyBuffer);
        }
        let (draw, d_v) = split_sizes(self.entries.len(), n_t, n_v);
        let picked = index::sample(rng, self.entries.len(), draw);
        let mut train = Vec::with_capacity(draw - d_v);
        let mut valid = Vec::with_capacity(d_v);
        for (k, i) in picked.iter().enumerate() {
            let s = self.entries[i].clone();
            if k < draw - d_v {
                train.push(s);
            } else {
                valid.push(s);
            }
        }
        Ok((train, valid))
    }
}

/// `(drawn, validation)` sizes for a buffer holding `len` entries.
pub fn split_sizes(len: usize, n_t: usize, n_v: usize) -> (usize, usize) {
    let draw = len.min(n_t + n_v);
    if n_t + n_v == 0 {
        return (0, 0);
    }
    (draw, draw * n_v / (n_t + n_v))
}

mod presets {
    use super::*;

    #[derive(Clone, Copy, PartialEq)]
    enum Labels {
        TrafficOnly,
        All,
    }

    #[derive(Clone, Copy, PartialEq)]
    enum TimeOfDay {
        Day,
        Night,
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Location {
        City,
        Highway,
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Weather {
        Clear,
        Overcast,
        Snowy,
        Rainy,
    }

    #[derive(Clone, Copy)]
    struct State {
        labels: Labels,
        time: TimeOfDay,
        location: Location,
        weather: Weather,
    }

    const SEGMENTS: usize = 10;
    const SEGMENT_S: f64 = 120.0;

    fn priors(labels: Labels) -> Vec<f64> {
        match labels {
            Labels::TrafficOnly => uniform_priors(&[0, 1, 2, 3]),
            Labels::All => vec![0.2, 0.2, 0.15, 0.15, 0.075, 0.075, 0.075, 0.075],
        }
    }

    fn weather_id(w: Weather) -> u64 {
        match w {
            Weather::Clear => 0,
            Weather::Overcast => 1,
            Weather::Snowy => 2,
            Weather::Rainy => 3,
        }
    }

    fn shift(time: TimeOfDay, weather: Weather) -> CovariateShift {
        let (w_scale, w_offset) = match weather {
            Weather::Clear => (1.0, 0.0),
            Weather::Overcast => (0.9, 0.5),
            Weather::Snowy => (1.2, 1.0),
            Weather::Rainy => (0.8, 0.8),
        };
        let (t_scale, t_offset) = match time {
            TimeOfDay::Day => (1.0, 0.0),
            TimeOfDay::Night => (0.6, 2.5),
        };
        let night = u64::from(time == TimeOfDay::Night);
        CovariateShift { scale: w_scale * t_scale, offset: w_offset + t_offset, direction_seed: weather_id(weather) * 2 + night }
    }

    fn segment(s: State) -> Segment {
        Segment {
            duration_s: SEGMENT_S,
            priors: priors(s.labels),
            shift: shift(s.time, s.weather),
            concept: match s.location {
                Location::City => 0,
                Location::Highway => 1,
            },
        }
    }

    fn flip_labels(s: &mut State) {
        s.labels = if s.labels == Labels::All { Labels::TrafficOnly } else { Labels::All };
    }

    fn flip_time(s: &mut State) {
        s.time = if s.time == TimeOfDay::Day { TimeOfDay::Night } else { TimeOfDay::Day };
    }

    fn flip_location(s: &mut State) {
        s.location = if s.location == Location::City { Location::Highway } else { Location::City };
    }

    fn rotate_weather(s: &mut State, base: Weather) {
        let alternate = if base == Weather::Rainy { Weather::Snowy } else { Weather::Rainy };
        s.weather = if s.weather == base { alternate } else { base };
    }

    /// One attribute changes at each boundary, cycling through `kinds`.
    fn single(name: &str, weather: Weather, kinds: &[u8]) -> Scenario {
        let mut s = State { labels: Labels::TrafficOnly, time: TimeOfDay::Day, location: Location::City, weather };
        let mut segments = vec![segment(s)];
        for i in 1..SEGMENTS {
            match kinds[(i - 1) % kinds.len()] {
                0 => flip_labels(&mut s),
                1 => flip_time(&mut s),
                _ => flip_location(&mut s),
            }
            segments.push(segment(s));
        }
        Scenario { name: name.into(), fps: DEFAULT_FPS, segments }
    }

    /// All four attributes change together at every boundary.
    fn extreme(name: &str, weather: Weather, start_all: bool) -> Scenario {
        let mut s = State {
            labels: if start_all { Labels::All } else { Labels::TrafficOnly },
            time: TimeOfDay::Day,
            location: Location::City,
            weather,
        };
        let mut segments = vec![segment(s)];
        for _ in 1..SEGMENTS {
            flip_labels(&mut s);
            flip_time(&mut s);
            flip_location(&mut s);
            rotate_weather(&mut s, weather);
            segments.push(segment(s));
        }
        Scenario { name: name.into(), fps: DEFAULT_FPS, segments }
    }

    pub fn build(name: &str) -> Option<Scenario> {
        Some(match name {
            "s1" => single(name, Weather::Clear, &[0]),
            "s2" => single(name, Weather::Overcast, &[0]),
            "s3" => single(name, Weather::Clear, &[0, 1]),
            "s4" => single(name, Weather::Snowy, &[1, 0]),
            "s5" => single(name, Weather::Clear, &[0, 1, 2]),
            "s6" => single(name, Weather::Rainy, &[2, 1, 0]),
            "es1" => extreme(name, Weather::Clear, false),
            "es2" => extreme(name, Weather::Overcast, true),
            _ => return None,
        })
    }
}
