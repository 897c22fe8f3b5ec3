//! Synthetic event scenes: a bright shape moving over a dark background,
//! emitting events where its edges cross pixels, plus uniform noise.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::events::{
    concatenate, save_events, DatasetManifest, Event, EventFormat, EventStream, ManifestSample,
    SensorGeometry, Split,
};
use crate::init::mix_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionClass {
    TranslateLeft,
    TranslateRight,
    TranslateUp,
    TranslateDown,
    RotateCw,
    RotateCcw,
    Expand,
    Contract,
}

impl MotionClass {
    pub const ALL: [MotionClass; 8] = [
        MotionClass::TranslateLeft,
        MotionClass::TranslateRight,
        MotionClass::Expand,
        MotionClass::RotateCw,
        MotionClass::TranslateUp,
        MotionClass::TranslateDown,
        MotionClass::RotateCcw,
        MotionClass::Contract,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MotionClass::TranslateLeft => "translate-left",
            MotionClass::TranslateRight => "translate-right",
            MotionClass::TranslateUp => "translate-up",
            MotionClass::TranslateDown => "translate-down",
            MotionClass::RotateCw => "rotate-cw",
            MotionClass::RotateCcw => "rotate-ccw",
            MotionClass::Expand => "expand",
            MotionClass::Contract => "contract",
        }
    }
}

impl FromStr for MotionClass {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        MotionClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CoreError::Argument(format!("unknown motion class {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub motion_class: MotionClass,
    pub duration_us: u64,
    /// Events per second, signal and noise together.
    pub event_rate: f64,
    pub noise_fraction: f64,
    pub geometry: SensorGeometry,
    pub seed: u64,
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_fraction) {
            return Err(CoreError::Argument(format!(
                "noise_fraction {} outside [0, 1]",
                self.noise_fraction
            )));
        }
        if !(self.event_rate > 0.0 && self.event_rate.is_finite()) {
            return Err(CoreError::Argument(format!(
                "event_rate must be positive, got {}",
                self.event_rate
            )));
        }
        if self.geometry.width < 4 || self.geometry.height < 4 {
            return Err(CoreError::Geometry(format!(
                "synthetic scenes need at least 4x4 pixels, got {}x{}",
                self.geometry.width, self.geometry.height
            )));
        }
        if self.duration_us == 0 {
            return Err(CoreError::EmptyStream(
                "zero-duration synthetic scene".into(),
            ));
        }
        Ok(())
    }
}

/// Per-scene random placement, drawn once from the seed.
struct Scene {
    class: MotionClass,
    w: f64,
    h: f64,
    unit: f64,
    /// Offset of the motion path across its axis, in [-0.15, 0.15] of the frame.
    lateral: f64,
    phase: f64,
}

impl Scene {
    /// One edge event at normalized time `s ∈ [0, 1]`: position and polarity.
    fn edge_event(&self, s: f64, rng: &mut ChaCha8Rng) -> (f64, f64, i8) {
        let (cx, cy) = (0.5 * self.w, 0.5 * self.h);
        let jitter = |rng: &mut ChaCha8Rng| rng.gen_range(-0.5..0.5);
        match self.class {
            MotionClass::TranslateLeft
            | MotionClass::TranslateRight
            | MotionClass::TranslateUp
            | MotionClass::TranslateDown => {
                let half = 0.15 * self.unit;
                // unit direction of travel
                let (dx, dy) = match self.class {
                    MotionClass::TranslateLeft => (-1.0, 0.0),
                    MotionClass::TranslateRight => (1.0, 0.0),
                    MotionClass::TranslateUp => (0.0, -1.0),
                    _ => (0.0, 1.0),
                };
                let along = (0.2 + 0.6 * s) - 0.5;
                let across = self.lateral;
                // the leading edge brightens pixels, the trailing edge darkens them
                let lead = rng.gen_bool(0.5);
                let (edge, p) = if lead { (half, 1) } else { (-half, -1) };
                let t = rng.gen_range(-half..half);
                let (mx, my) = (cx + along * dx * self.w, cy + along * dy * self.h);
                let (ox, oy) = (across * self.w * dy.abs(), across * self.h * dx.abs());
                let x = mx + ox + edge * dx + t * dy.abs() + jitter(rng);
                let y = my + oy + edge * dy + t * dx.abs() + jitter(rng);
                (x, y, p)
            }
            MotionClass::RotateCw | MotionClass::RotateCcw => {
                let omega = if self.class == MotionClass::RotateCw {
                    1.0
                } else {
                    -1.0
                };
                let theta = self.phase + omega * PI * s;
                let len = 0.3 * self.unit;
                // radius density ∝ |r|, matching edge speed
                let r = len * rng.gen::<f64>().sqrt() * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let side: f64 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let (ux, uy) = (theta.cos(), theta.sin());
                let x = cx + self.lateral * self.w + r * ux - side * 1.5 * uy + jitter(rng);
                let y = cy + r * uy + side * 1.5 * ux + jitter(rng);
                let p = if side * omega * r > 0.0 { 1 } else { -1 };
                (x, y, p)
            }
            MotionClass::Expand | MotionClass::Contract => {
                let (r0, r1, p) = if self.class == MotionClass::Expand {
                    (0.08, 0.4, 1)
                } else {
                    (0.4, 0.08, -1)
                };
                let radius = (r0 + (r1 - r0) * s) * self.unit;
                let phi = rng.gen_range(0.0..2.0 * PI);
                let x = cx + self.lateral * self.w + radius * phi.cos() + jitter(rng);
                let y = cy + radius * phi.sin() + jitter(rng);
                (x, y, p)
            }
        }
    }
}

fn to_pixel(v: f64, size: u32) -> u16 {
    v.round().clamp(0.0, (size - 1) as f64) as u16
}

/// Renders one scene. The stream spans `[0, duration_us]` and holds exactly
/// `round(event_rate · duration)` events.
pub fn generate_synthetic(spec: &SyntheticSceneSpec) -> Result<(EventStream, MotionClass)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let g = spec.geometry;
    let scene = Scene {
        class: spec.motion_class,
        w: g.width as f64,
        h: g.height as f64,
        unit: g.width.min(g.height) as f64,
        lateral: rng.gen_range(-0.15..0.15),
        phase: rng.gen_range(0.0..PI),
    };
    let total = (spec.event_rate * spec.duration_us as f64 * 1e-6).round() as usize;
    let noise = (spec.noise_fraction * total as f64).round() as usize;
    let mut times: Vec<u64> = (0..total)
        .map(|_| rng.gen_range(0..=spec.duration_us))
        .collect();
    times.sort_unstable();
    // which of the time-sorted slots are noise
    let mut is_noise = vec![false; total];
    for i in rand::seq::index::sample(&mut rng, total, noise) {
        is_noise[i] = true;
    }
    let dur = spec.duration_us as f64;
    let events = times
        .iter()
        .zip(&is_noise)
        .map(|(&t, &noisy)| {
            let (x, y, p) = if noisy {
                (
                    rng.gen_range(0.0..scene.w),
                    rng.gen_range(0.0..scene.h),
                    if rng.gen_bool(0.5) { 1 } else { -1 },
                )
            } else {
                scene.edge_event(t as f64 / dur, &mut rng)
            };
            Event::new(t, to_pixel(x, g.width), to_pixel(y, g.height), p)
        })
        .collect();
    let stream = EventStream::with_span(events, g, 0, spec.duration_us)?;
    Ok((stream, spec.motion_class))
}

/// Settings for a whole labelled synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub classes: usize,
    pub per_class: usize,
    /// Sample durations are drawn uniformly from this range, in seconds.
    pub duration_range_s: (f64, f64),
    /// Longer samples are composed of clips no longer than this.
    pub max_clip_s: f64,
    pub event_rate: f64,
    pub noise_fraction: f64,
    pub geometry: SensorGeometry,
    pub seed: u64,
    pub format: EventFormat,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            per_class: 8,
            duration_range_s: (1.0, 1.0),
            max_clip_s: 2.0,
            event_rate: 20_000.0,
            noise_fraction: 0.05,
            geometry: SensorGeometry::new(64, 64),
            seed: 0,
            format: EventFormat::Binary,
        }
    }
}

/// Builds one composite sample of `duration_us` from same-class clips.
pub fn composite_sample(
    spec: &DatasetSpec,
    class: MotionClass,
    duration_us: u64,
    seed: u64,
) -> Result<EventStream> {
    let max_clip = (spec.max_clip_s * 1e6).max(1.0) as u64;
    let clips = duration_us.div_ceil(max_clip).max(1);
    let clip_us = duration_us / clips;
    let streams = (0..clips)
        .map(|c| {
            let last = c + 1 == clips;
            let d = if last {
                duration_us - clip_us * (clips - 1)
            } else {
                clip_us
            };
            generate_synthetic(&SyntheticSceneSpec {
                motion_class: class,
                duration_us: d,
                event_rate: spec.event_rate,
                noise_fraction: spec.noise_fraction,
                geometry: spec.geometry,
                seed: mix_seed(&[seed, c]),
            })
            .map(|(s, _)| s)
        })
        .collect::<Result<Vec<_>>>()?;
    concatenate(&streams, 0)
}

/// Writes `classes × per_class` samples plus `manifest.json` into `out`.
pub fn generate_dataset(spec: &DatasetSpec, out: &Path) -> Result<DatasetManifest> {
    if spec.classes == 0 || spec.classes > MotionClass::ALL.len() {
        return Err(CoreError::Argument(format!(
            "classes must be in 1..={}, got {}",
            MotionClass::ALL.len(),
            spec.classes
        )));
    }
    let (lo, hi) = spec.duration_range_s;
    if !(lo > 0.0 && hi >= lo) {
        return Err(CoreError::Argument(format!(
            "bad duration range {lo}..{hi}"
        )));
    }
    std::fs::create_dir_all(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ext = match spec.format {
        EventFormat::Csv => "csv",
        EventFormat::Binary => "evt",
    };
    let mut samples = Vec::new();
    for label in 0..spec.classes {
        for i in 0..spec.per_class {
            let secs = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            let duration_us = (secs * 1e6).round() as u64;
            let seed = mix_seed(&[spec.seed, label as u64, i as u64]);
            let stream = composite_sample(spec, MotionClass::ALL[label], duration_us, seed)?;
            let name = PathBuf::from(format!("{}_{i:04}.{ext}", MotionClass::ALL[label].name()));
            save_events(&stream, &out.join(&name), spec.format)?;
            samples.push(ManifestSample {
                path: name,
                label,
                duration_us: stream.duration_us(),
            });
        }
    }
    let manifest = DatasetManifest {
        classes: MotionClass::ALL[..spec.classes]
            .iter()
            .map(|c| c.name().to_string())
            .collect(),
        samples,
        split: Split::Train,
        sensor: Some(spec.geometry),
        root: out.to_path_buf(),
    };
    manifest.save(&out.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(class: MotionClass, noise: f64) -> SyntheticSceneSpec {
        SyntheticSceneSpec {
            motion_class: class,
            duration_us: 2_000_000,
            event_rate: 10_000.0,
            noise_fraction: noise,
            geometry: SensorGeometry::new(64, 64),
            seed: 7,
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let s = spec(MotionClass::RotateCw, 0.1);
        assert_eq!(
            generate_synthetic(&s).unwrap(),
            generate_synthetic(&s).unwrap()
        );
    }

    #[test]
    fn count_matches_rate() {
        let (s, _) = generate_synthetic(&spec(MotionClass::Expand, 0.1)).unwrap();
        assert!((19_000..=21_000).contains(&s.count()), "{}", s.count());
        assert_eq!(s.duration_us(), 2_000_000);
    }

    #[test]
    fn translate_right_moves_right() {
        let (s, _) = generate_synthetic(&spec(MotionClass::TranslateRight, 0.0)).unwrap();
        let mid = s.duration_us() / 2;
        let mean = |f: &dyn Fn(&Event) -> bool| {
            let xs: Vec<f64> = s
                .events()
                .iter()
                .filter(|e| f(e))
                .map(|e| e.x as f64)
                .collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        assert!(mean(&|e| e.t >= mid) > mean(&|e| e.t < mid) + 5.0);
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut s = spec(MotionClass::Expand, 0.0);
        s.duration_us = 0;
        assert!(matches!(
            generate_synthetic(&s),
            Err(CoreError::EmptyStream(_))
        ));
        let mut s = spec(MotionClass::Expand, 1.5);
        assert!(matches!(
            generate_synthetic(&s),
            Err(CoreError::Argument(_))
        ));
        s.noise_fraction = 0.0;
        s.event_rate = 0.0;
        assert!(matches!(
            generate_synthetic(&s),
            Err(CoreError::Argument(_))
        ));
    }

    #[test]
    fn class_names_round_trip() {
        for c in MotionClass::ALL {
            assert_eq!(c.name().parse::<MotionClass>().unwrap(), c);
        }
    }

    #[test]
    fn dataset_writes_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            classes: 2,
            per_class: 2,
            duration_range_s: (0.5, 3.0),
            max_clip_s: 1.0,
            event_rate: 2_000.0,
            ..DatasetSpec::default()
        };
        let m = generate_dataset(&spec, dir.path()).unwrap();
        let loaded = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.samples, m.samples);
        for i in 0..4 {
            let (s, label) = loaded.load_sample(i).unwrap();
            assert_eq!(label, i / 2);
            assert_eq!(s.duration_us(), m.samples[i].duration_us);
        }
    }
}
