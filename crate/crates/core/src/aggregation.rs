//! Sampling an event stream at a fixed frequency and turning each event
//! group into an RGB or gray event frame.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::events::{Event, EventStream, SensorGeometry};
use crate::par::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationMode {
    /// `G` events nearest each tick.
    EventCounts,
    /// All events in `[tick, tick + window)`.
    TimeWindows,
}

impl std::str::FromStr for AggregationMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "event-counts" => Ok(AggregationMode::EventCounts),
            "time-windows" => Ok(AggregationMode::TimeWindows),
            _ => Err(CoreError::Argument(format!(
                "mode must be event-counts or time-windows, got {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Gray,
    Rgb,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub frequency_hz: f64,
    pub mode: AggregationMode,
    /// Events per group in event-count mode.
    pub group_size: usize,
    /// Window length in time-window mode; defaults to the tick spacing `1/f`.
    #[serde(default)]
    pub window_us: Option<f64>,
    pub height: usize,
    pub width: usize,
    pub representation: Representation,
    /// Per-frame max normalization; off only for raw-count inspection.
    #[serde(default = "yes")]
    pub normalize: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            frequency_hz: 20.0,
            mode: AggregationMode::EventCounts,
            group_size: 400,
            window_us: None,
            height: 32,
            width: 32,
            representation: Representation::Rgb,
            normalize: true,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(CoreError::Argument(format!(
                "frequency must be positive, got {}",
                self.frequency_hz
            )));
        }
        if self.mode == AggregationMode::EventCounts && self.group_size == 0 {
            return Err(CoreError::Argument("group_size must be positive".into()));
        }
        if let Some(w) = self.window_us {
            if !(w > 0.0 && w.is_finite()) {
                return Err(CoreError::Argument(format!(
                    "window_us must be positive, got {w}"
                )));
            }
        }
        if self.height == 0 || self.width == 0 {
            return Err(CoreError::Argument(
                "frame dimensions must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn window(&self) -> f64 {
        self.window_us.unwrap_or(1e6 / self.frequency_hz)
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * 3
    }
}

/// Number of ticks `⌈T·f⌉` for a span of `duration_us`, at least 1.
pub fn tick_count(duration_us: u64, f: f64) -> usize {
    let exact = duration_us as f64 * f / 1e6;
    // absorb representation error in products like 0.3 s · 200 Hz
    let p = (exact - 1e-9 * exact.max(1.0)).ceil();
    (p as usize).max(1)
}

/// Tick times in µs: `⌈T·f⌉` instants `1/f` apart starting at the stream start.
/// Empty streams have no ticks.
pub fn sample_ticks(stream: &EventStream, f: f64) -> Result<Vec<f64>> {
    if !(f > 0.0 && f.is_finite()) {
        return Err(CoreError::Argument(format!(
            "frequency must be positive, got {f}"
        )));
    }
    if stream.is_empty() {
        return Ok(Vec::new());
    }
    let p = tick_count(stream.duration_us(), f);
    let start = stream.start_us() as f64;
    Ok((0..p).map(|i| start + i as f64 * 1e6 / f).collect())
}

/// Event groups as ranges into a canonically ordered copy of the stream.
/// Equal-timestamp events are sorted by `(x, y, p)` so membership does not
/// depend on their arrival order.
#[derive(Clone, Debug)]
pub struct EventGroups {
    pub events: Vec<Event>,
    pub ranges: Vec<Range<usize>>,
}

impl EventGroups {
    pub fn group(&self, i: usize) -> &[Event] {
        &self.events[self.ranges[i].clone()]
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

fn canonical(events: &[Event]) -> Vec<Event> {
    let mut v = events.to_vec();
    v.sort_by_key(|e| (e.t, e.x, e.y, e.p));
    v
}

/// The `g` events nearest `tick`, as a contiguous range. The range grows from
/// the tick outwards; on equal distance the earlier event wins.
fn nearest_range(ts: &[u64], tick: f64, g: usize) -> Range<usize> {
    let n = ts.len();
    let mid = ts.partition_point(|&t| (t as f64) < tick);
    let (mut lo, mut hi) = (mid, mid);
    while hi - lo < g && (lo > 0 || hi < n) {
        let take_left = match (lo > 0, hi < n) {
            (true, true) => tick - ts[lo - 1] as f64 <= ts[hi] as f64 - tick,
            (left, _) => left,
        };
        if take_left {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    lo..hi
}

pub fn group_events(
    stream: &EventStream,
    ticks: &[f64],
    cfg: &SamplingConfig,
) -> Result<EventGroups> {
    cfg.validate()?;
    let events = canonical(stream.events());
    let ts: Vec<u64> = events.iter().map(|e| e.t).collect();
    let ranges = match cfg.mode {
        AggregationMode::EventCounts => ticks
            .iter()
            .map(|&tick| nearest_range(&ts, tick, cfg.group_size))
            .collect(),
        AggregationMode::TimeWindows => {
            let w = cfg.window();
            ticks
                .iter()
                .map(|&tick| {
                    let lo = ts.partition_point(|&t| (t as f64) < tick);
                    let hi = ts.partition_point(|&t| (t as f64) < tick + w);
                    lo..hi
                })
                .collect()
        }
    };
    Ok(EventGroups { events, ranges })
}

/// Accumulates one group into an `H×W×3` channel-last frame written to `out`.
/// Sensor coordinates are scaled to the frame by integer binning.
pub fn aggregate_into(
    group: &[Event],
    sensor: SensorGeometry,
    cfg: &SamplingConfig,
    out: &mut [f32],
) {
    let (h, w) = (cfg.height, cfg.width);
    out.fill(0.0);
    for e in group {
        let c = e.x as usize * w / sensor.width as usize;
        let r = e.y as usize * h / sensor.height as usize;
        let px = (r * w + c) * 3;
        match cfg.representation {
            Representation::Rgb => out[px + if e.p > 0 { 0 } else { 2 }] += 1.0,
            Representation::Gray => out[px] += 1.0,
        }
    }
    if cfg.representation == Representation::Gray {
        for px in out.chunks_exact_mut(3) {
            px[1] = px[0];
            px[2] = px[0];
        }
    }
    if cfg.normalize {
        let max = out.iter().copied().fold(0.0f32, f32::max);
        if max > 0.0 {
            let inv = 1.0 / max;
            out.iter_mut().for_each(|v| *v *= inv);
        }
    }
}

pub fn aggregate_frame(group: &[Event], sensor: SensorGeometry, cfg: &SamplingConfig) -> Vec<f32> {
    let mut out = vec![0.0; cfg.frame_len()];
    aggregate_into(group, sensor, cfg, &mut out);
    out
}

/// `P_total` frames of `H×W×3`, the first `original` built from events and
/// the remaining `pad` all zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EventFrameStack {
    pub frames: Vec<f32>,
    pub height: usize,
    pub width: usize,
    pub original: usize,
    pub pad: usize,
    pub tick_times: Vec<f64>,
}

impl EventFrameStack {
    pub fn total(&self) -> usize {
        self.original + self.pad
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * 3
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames[i * n..(i + 1) * n]
    }

    /// Re-pads to `pad_to` frames (growing or shrinking the zero tail).
    pub fn repad(&self, pad_to: usize) -> Result<Self> {
        if pad_to < self.original {
            return Err(CoreError::Capacity {
                needed: self.original,
                pad_to,
            });
        }
        let n = self.frame_len();
        let mut frames = self.frames[..self.original * n].to_vec();
        frames.resize(pad_to * n, 0.0);
        let mut tick_times = self.tick_times[..self.original].to_vec();
        let step = match tick_times.as_slice() {
            [.., a, b] => b - a,
            _ => 0.0,
        };
        let last = tick_times.last().copied().unwrap_or(0.0);
        tick_times.extend((1..=pad_to - self.original).map(|i| last + i as f64 * step));
        Ok(Self {
            frames,
            height: self.height,
            width: self.width,
            original: self.original,
            pad: pad_to - self.original,
            tick_times,
        })
    }
}

/// Samples, groups and aggregates `stream`, then zero-pads to `pad_to`
/// frames (`None` means no padding).
pub fn build_stack(
    stream: &EventStream,
    cfg: &SamplingConfig,
    pad_to: Option<usize>,
) -> Result<EventFrameStack> {
    cfg.validate()?;
    let ticks = sample_ticks(stream, cfg.frequency_hz)?;
    let p = ticks.len();
    let pad_to = pad_to.unwrap_or(p);
    if pad_to < p {
        return Err(CoreError::Capacity { needed: p, pad_to });
    }
    let groups = group_events(stream, &ticks, cfg)?;
    let n = cfg.frame_len();
    let mut frames = vec![0.0f32; pad_to * n];
    let sensor = stream.geometry();
    frames[..p * n]
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, out)| aggregate_into(groups.group(i), sensor, cfg, out));
    let mut tick_times = ticks;
    let spacing = 1e6 / cfg.frequency_hz;
    let last = tick_times
        .last()
        .copied()
        .unwrap_or(stream.start_us() as f64 - spacing);
    tick_times.extend((1..=pad_to - p).map(|i| last + i as f64 * spacing));
    Ok(EventFrameStack {
        frames,
        height: cfg.height,
        width: cfg.width,
        original: p,
        pad: pad_to - p,
        tick_times,
    })
}

/// Training-time augmentation of the original frames: horizontal flip and a
/// random shift of up to `max_shift` pixels with zero fill.
pub fn augment<R: Rng>(stack: &mut EventFrameStack, flip: bool, max_shift: usize, rng: &mut R) {
    let (h, w) = (stack.height, stack.width);
    let do_flip = flip && rng.gen_bool(0.5);
    let s = max_shift as i64;
    let (dy, dx) = if s > 0 {
        (rng.gen_range(-s..=s), rng.gen_range(-s..=s))
    } else {
        (0, 0)
    };
    if !do_flip && dx == 0 && dy == 0 {
        return;
    }
    let n = stack.frame_len();
    for f in 0..stack.original {
        let src = stack.frames[f * n..(f + 1) * n].to_vec();
        let dst = &mut stack.frames[f * n..(f + 1) * n];
        dst.fill(0.0);
        for r in 0..h {
            for c in 0..w {
                let sc = if do_flip { w - 1 - c } else { c } as i64 - dx;
                let sr = r as i64 - dy;
                if sr < 0 || sc < 0 || sr >= h as i64 || sc >= w as i64 {
                    continue;
                }
                let (si, di) = ((sr as usize * w + sc as usize) * 3, (r * w + c) * 3);
                dst[di..di + 3].copy_from_slice(&src[si..si + 3]);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StackSidecar {
    shape: [usize; 4],
    original: usize,
    pad: usize,
    tick_times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
}

/// Writes `<stem>.f32` (raw little-endian `P×H×W×3` values) and `<stem>.json`.
pub fn save_stack(stack: &EventFrameStack, stem: &Path, label: Option<usize>) -> Result<()> {
    let mut raw = BufWriter::new(File::create(stem.with_extension("f32"))?);
    for v in &stack.frames {
        raw.write_all(&v.to_le_bytes())?;
    }
    raw.flush()?;
    let sidecar = StackSidecar {
        shape: [stack.total(), stack.height, stack.width, 3],
        original: stack.original,
        pad: stack.pad,
        tick_times: stack.tick_times.clone(),
        label,
    };
    serde_json::to_writer_pretty(File::create(stem.with_extension("json"))?, &sidecar)?;
    Ok(())
}

pub fn load_stack(stem: &Path) -> Result<(EventFrameStack, Option<usize>)> {
    let json: PathBuf = stem.with_extension("json");
    if !json.exists() {
        return Err(CoreError::MissingFile(json));
    }
    let meta: StackSidecar = serde_json::from_reader(BufReader::new(File::open(&json)?))?;
    let mut bytes = Vec::new();
    File::open(stem.with_extension("f32"))?.read_to_end(&mut bytes)?;
    let expected = meta.shape.iter().product::<usize>();
    if bytes.len() != expected * 4
        || meta.shape[3] != 3
        || meta.original + meta.pad != meta.shape[0]
    {
        return Err(CoreError::Shape(format!(
            "stack {} holds {} bytes for shape {:?}",
            stem.display(),
            bytes.len(),
            meta.shape
        )));
    }
    let frames = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((
        EventFrameStack {
            frames,
            height: meta.shape[1],
            width: meta.shape[2],
            original: meta.original,
            pad: meta.pad,
            tick_times: meta.tick_times,
        },
        meta.label,
    ))
}
