//! Event streams: validation, CSV/binary I/O, concatenation and dataset
//! manifests.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Magic bytes opening the binary event format.
pub const BINARY_MAGIC: &[u8; 4] = b"EVT1";
const CSV_HEADER: [&str; 4] = ["t_us", "x", "y", "p"];

/// One brightness-change event. `p` is `+1` or `-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: i8,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: i8) -> Self {
        Self { t, x, y, p }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorGeometry {
    pub width: u32,
    pub height: u32,
}

impl SensorGeometry {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height
    }
}

/// Time-ordered events on a fixed sensor, covering
/// `[start_us, start_us + duration_us]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    events: Vec<Event>,
    geometry: SensorGeometry,
    start_us: u64,
    duration_us: u64,
}

fn normalize_polarity(p: i64, record: usize) -> Result<i8> {
    match p {
        1 => Ok(1),
        0 | -1 => Ok(-1),
        other => Err(CoreError::Format {
            record,
            detail: format!("polarity {other} is not one of -1, 0, 1"),
        }),
    }
}

fn validate(events: &[Event], geometry: SensorGeometry) -> Result<()> {
    let mut prev = 0;
    for (i, e) in events.iter().enumerate() {
        let record = i + 1;
        if !geometry.contains(e.x as u32, e.y as u32) {
            return Err(CoreError::Bounds {
                record,
                x: e.x as u32,
                y: e.y as u32,
                width: geometry.width,
                height: geometry.height,
            });
        }
        if i > 0 && e.t < prev {
            return Err(CoreError::Order {
                record,
                prev,
                t: e.t,
            });
        }
        if e.p != 1 && e.p != -1 {
            return Err(CoreError::Format {
                record,
                detail: format!("polarity {} after normalization", e.p),
            });
        }
        prev = e.t;
    }
    Ok(())
}

impl EventStream {
    /// Stream spanning exactly its first to last event.
    pub fn new(events: Vec<Event>, geometry: SensorGeometry) -> Result<Self> {
        validate(&events, geometry)?;
        let start_us = events.first().map_or(0, |e| e.t);
        let duration_us = events.last().map_or(0, |e| e.t - start_us);
        Ok(Self {
            events,
            geometry,
            start_us,
            duration_us,
        })
    }

    /// Stream with an explicitly declared time span that must cover every
    /// event.
    pub fn with_span(
        events: Vec<Event>,
        geometry: SensorGeometry,
        start_us: u64,
        duration_us: u64,
    ) -> Result<Self> {
        validate(&events, geometry)?;
        if let (Some(first), Some(last)) = (events.first(), events.last()) {
            if first.t < start_us || last.t > start_us + duration_us {
                return Err(CoreError::Argument(format!(
                    "events span [{}, {}] outside declared [{start_us}, {}]",
                    first.t,
                    last.t,
                    start_us + duration_us
                )));
            }
        }
        Ok(Self {
            events,
            geometry,
            start_us,
            duration_us,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn start_us(&self) -> u64 {
        self.start_us
    }

    pub fn duration_us(&self) -> u64 {
        self.duration_us
    }

    pub fn end_us(&self) -> u64 {
        self.start_us + self.duration_us
    }

    pub fn count(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.events.iter().filter(|e| e.p > 0).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventFormat {
    Csv,
    Binary,
}

impl EventFormat {
    /// Picks the format from a file extension (`.csv` or anything else).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EventFormat::Csv,
            _ => EventFormat::Binary,
        }
    }
}

/// Reads a CSV or binary event file; the format is sniffed from the magic
/// bytes. Polarities 0/1 are normalized to -1/+1.
pub fn load_events(path: &Path, geometry: SensorGeometry) -> Result<EventStream> {
    if !path.exists() {
        return Err(CoreError::MissingFile(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.starts_with(BINARY_MAGIC) {
        decode_binary(&bytes, geometry)
    } else {
        decode_csv(&bytes, geometry)
    }
}

/// Writes `stream` in the requested format.
pub fn save_events(stream: &EventStream, path: &Path, format: EventFormat) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        EventFormat::Binary => out.write_all(&encode_binary(stream))?,
        EventFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(CSV_HEADER)?;
            for e in &stream.events {
                w.write_record(&[
                    e.t.to_string(),
                    e.x.to_string(),
                    e.y.to_string(),
                    e.p.to_string(),
                ])?;
            }
            w.flush()?;
        }
    }
    out.flush()?;
    Ok(())
}

fn decode_csv(bytes: &[u8], geometry: SensorGeometry) -> Result<EventStream> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader.headers()?.clone();
    if !headers.is_empty() && headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(CoreError::Format {
            record: 0,
            detail: format!("expected header t_us,x,y,p, found {:?}", headers),
        });
    }
    let mut events = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let record = i + 1;
        let row = row.map_err(|e| CoreError::Format {
            record,
            detail: e.to_string(),
        })?;
        if row.len() != 4 {
            return Err(CoreError::Format {
                record,
                detail: format!("expected 4 fields, found {}", row.len()),
            });
        }
        let field = |j: usize| -> Result<i64> {
            row[j].parse::<i64>().map_err(|e| CoreError::Format {
                record,
                detail: format!("field {} ({:?}): {e}", CSV_HEADER[j], &row[j]),
            })
        };
        let (t, x, y, p) = (field(0)?, field(1)?, field(2)?, field(3)?);
        if t < 0 || x < 0 || y < 0 {
            return Err(CoreError::Format {
                record,
                detail: "negative timestamp or coordinate".into(),
            });
        }
        if x >= geometry.width as i64
            || y >= geometry.height as i64
            || x > u16::MAX as i64
            || y > u16::MAX as i64
        {
            return Err(CoreError::Bounds {
                record,
                x: x.min(u32::MAX as i64) as u32,
                y: y.min(u32::MAX as i64) as u32,
                width: geometry.width,
                height: geometry.height,
            });
        }
        events.push(Event::new(
            t as u64,
            x as u16,
            y as u16,
            normalize_polarity(p, record)?,
        ));
    }
    EventStream::new(events, geometry)
}

const RECORD_BYTES: usize = 8 + 2 + 2 + 1;
const HEADER_BYTES: usize = 4 + 4 + 4 + 8;

fn encode_binary(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + RECORD_BYTES * stream.count());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&stream.geometry.width.to_le_bytes());
    out.extend_from_slice(&stream.geometry.height.to_le_bytes());
    out.extend_from_slice(&(stream.count() as u64).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p as u8);
    }
    out
}

fn decode_binary(bytes: &[u8], geometry: SensorGeometry) -> Result<EventStream> {
    if bytes.len() < HEADER_BYTES {
        return Err(CoreError::Format {
            record: 0,
            detail: format!("binary header truncated at {} bytes", bytes.len()),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let (width, height) = (u32_at(4), u32_at(8));
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    if SensorGeometry::new(width, height) != geometry {
        return Err(CoreError::Geometry(format!(
            "file declares {width}x{height}, expected {}x{}",
            geometry.width, geometry.height
        )));
    }
    let body = &bytes[HEADER_BYTES..];
    if body.len() != count * RECORD_BYTES {
        let complete = body.len() / RECORD_BYTES;
        return Err(CoreError::Format {
            record: complete + 1,
            detail: format!(
                "header declares {count} records, body holds {} bytes",
                body.len()
            ),
        });
    }
    let mut events = Vec::with_capacity(count);
    for (i, rec) in body.chunks_exact(RECORD_BYTES).enumerate() {
        let t = u64::from_le_bytes(rec[0..8].try_into().expect("8 bytes"));
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let p = normalize_polarity(rec[12] as i8 as i64, i + 1)?;
        events.push(Event::new(t, x, y, p));
    }
    EventStream::new(events, geometry)
}

/// Joins streams end to end. Stream `i` is shifted so that it starts
/// `Σ_{j<i} duration_j + i · gap_us` after the first stream's start.
pub fn concatenate(streams: &[EventStream], gap_us: u64) -> Result<EventStream> {
    let first = streams
        .first()
        .ok_or_else(|| CoreError::Argument("concatenate needs at least one stream".into()))?;
    if streams.len() == 1 {
        return Ok(first.clone());
    }
    let geometry = first.geometry;
    if let Some(bad) = streams.iter().find(|s| s.geometry != geometry) {
        return Err(CoreError::Geometry(format!(
            "{}x{} vs {}x{}",
            geometry.width, geometry.height, bad.geometry.width, bad.geometry.height
        )));
    }
    let mut events = Vec::with_capacity(streams.iter().map(|s| s.count()).sum());
    let mut offset = first.start_us;
    for (i, s) in streams.iter().enumerate() {
        if i > 0 {
            offset += gap_us;
        }
        events.extend(s.events.iter().map(|e| Event {
            t: e.t - s.start_us + offset,
            ..*e
        }));
        offset += s.duration_us;
    }
    EventStream::with_span(events, geometry, first.start_us, offset - first.start_us)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub path: PathBuf,
    pub label: usize,
    pub duration_us: u64,
}

/// JSON index of a labelled event dataset. Relative sample paths are
/// resolved against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub samples: Vec<ManifestSample>,
    #[serde(default)]
    pub split: Split,
    /// Sensor geometry of every sample; required for CSV samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor: Option<SensorGeometry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(CoreError::MissingFile(path.to_path_buf()));
        }
        let mut m: DatasetManifest = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.label >= self.classes.len() {
                return Err(CoreError::Argument(format!(
                    "sample {i} has label {} but only {} classes",
                    s.label,
                    self.classes.len()
                )));
            }
            let p = self.resolve(s);
            if !p.exists() {
                return Err(CoreError::MissingFile(p));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, sample: &ManifestSample) -> PathBuf {
        if sample.path.is_absolute() {
            sample.path.clone()
        } else {
            self.root.join(&sample.path)
        }
    }

    /// Loads sample `i`, applying its declared duration.
    pub fn load_sample(&self, i: usize) -> Result<(EventStream, usize)> {
        let s = &self.samples[i];
        let geometry = self
            .sensor
            .ok_or_else(|| CoreError::Argument("manifest has no sensor geometry".into()))?;
        let stream = load_events(&self.resolve(s), geometry)
            .map_err(|e| e.context(format!("sample {i} ({})", s.path.display())))?;
        let declared = s.duration_us.max(stream.duration_us());
        let stream =
            EventStream::with_span(stream.events.clone(), geometry, stream.start_us, declared)?;
        Ok((stream, s.label))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo() -> SensorGeometry {
        SensorGeometry::new(8, 8)
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn header_only_csv_is_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.csv", "t_us,x,y,p\n");
        let s = load_events(&p, geo()).unwrap();
        assert_eq!(s.count(), 0);
        assert_eq!(s.duration_us(), 0);
    }

    #[test]
    fn csv_polarity_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "e.csv",
            "t_us,x,y,p\n0,1,2,1\n5,1,2,0\n5,3,0,1\n",
        );
        let s = load_events(&p, geo()).unwrap();
        assert_eq!(s.count(), 3);
        let pol: Vec<i8> = s.events().iter().map(|e| e.p).collect();
        assert_eq!(pol, vec![1, -1, 1]);
        assert_eq!(s.duration_us(), 5);
    }

    #[test]
    fn decreasing_timestamp_reports_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.csv", "t_us,x,y,p\n10,0,0,1\n4,0,0,1\n");
        match load_events(&p, geo()).unwrap_err() {
            CoreError::Order { record, .. } => assert_eq!(record, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_and_out_of_bounds_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "t_us,x,y,p\n1,0,0,1\n2,zero,0,1\n");
        assert!(matches!(
            load_events(&p, geo()).unwrap_err(),
            CoreError::Format { record: 2, .. }
        ));
        let p = write(dir.path(), "b.csv", "t_us,x,y,p\n1,8,0,1\n");
        assert!(matches!(
            load_events(&p, geo()).unwrap_err(),
            CoreError::Bounds { record: 1, .. }
        ));
        let p = write(dir.path(), "c.csv", "t_us,x,y,p\n1,0,0,2\n");
        assert!(matches!(
            load_events(&p, geo()).unwrap_err(),
            CoreError::Format { record: 1, .. }
        ));
    }

    #[test]
    fn binary_layout_is_exact() {
        let s = EventStream::new(vec![Event::new(7, 1, 2, -1)], geo()).unwrap();
        let bytes = encode_binary(&s);
        assert_eq!(&bytes[..4], b"EVT1");
        assert_eq!(bytes.len(), 20 + 13);
        assert_eq!(&bytes[4..8], &8u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &1u64.to_le_bytes());
        assert_eq!(&bytes[20..28], &7u64.to_le_bytes());
        assert_eq!(&bytes[28..30], &1u16.to_le_bytes());
        assert_eq!(&bytes[30..32], &2u16.to_le_bytes());
        assert_eq!(bytes[32] as i8, -1);
    }

    #[test]
    fn binary_geometry_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.evt");
        let s = EventStream::new(vec![Event::new(0, 1, 1, 1)], geo()).unwrap();
        save_events(&s, &p, EventFormat::Binary).unwrap();
        assert!(matches!(
            load_events(&p, SensorGeometry::new(16, 8)).unwrap_err(),
            CoreError::Geometry(_)
        ));
    }

    fn stream_of(n: u64, step: u64) -> EventStream {
        EventStream::new(
            (0..n)
                .map(|i| Event::new(i * step, (i % 8) as u16, 0, 1))
                .collect(),
            geo(),
        )
        .unwrap()
    }

    #[test]
    fn concatenate_adds_durations() {
        let a = EventStream::with_span(vec![Event::new(0, 0, 0, 1)], geo(), 0, 3_000_000).unwrap();
        let b = EventStream::with_span(vec![Event::new(0, 0, 0, 1)], geo(), 0, 4_000_000).unwrap();
        let c = concatenate(&[a, b], 0).unwrap();
        assert_eq!(c.duration_us(), 7_000_000);
        assert_eq!(c.count(), 2);
    }

    #[test]
    fn concatenate_single_is_identity() {
        let a = stream_of(5, 3);
        assert_eq!(concatenate(std::slice::from_ref(&a), 1000).unwrap(), a);
    }

    #[test]
    fn concatenate_gap_shifts_second_stream() {
        // hand-computed: first stream ends at t = 9; second starts at 9 + 1 s
        let a = EventStream::new(
            vec![
                Event::new(0, 0, 0, 1),
                Event::new(4, 0, 0, 1),
                Event::new(9, 0, 0, -1),
            ],
            geo(),
        )
        .unwrap();
        let b = EventStream::new(
            vec![Event::new(100, 1, 1, 1), Event::new(102, 1, 1, 1)],
            geo(),
        )
        .unwrap();
        let c = concatenate(&[a, b], 1_000_000).unwrap();
        let ts: Vec<u64> = c.events().iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![0, 4, 9, 1_000_009, 1_000_011]);
        assert_eq!(c.duration_us(), 9 + 2 + 1_000_000);

        let a = stream_of(100, 10);
        let b = stream_of(100, 10);
        let c = concatenate(&[a.clone(), b], 1_000_000).unwrap();
        assert_eq!(c.events()[100].t, a.end_us() + 1_000_000);
        assert_eq!(c.count(), 200);
    }

    #[test]
    fn concatenate_errors() {
        assert!(matches!(concatenate(&[], 0), Err(CoreError::Argument(_))));
        let a = stream_of(3, 1);
        let b = EventStream::new(vec![Event::new(0, 0, 0, 1)], SensorGeometry::new(4, 4)).unwrap();
        assert!(matches!(
            concatenate(&[a, b], 0),
            Err(CoreError::Geometry(_))
        ));
    }

    #[test]
    fn manifest_rejects_bad_label_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "s.csv", "t_us,x,y,p\n");
        let mut m = DatasetManifest {
            classes: vec!["a".into()],
            samples: vec![ManifestSample {
                path: p.file_name().unwrap().into(),
                label: 1,
                duration_us: 0,
            }],
            split: Split::Train,
            sensor: Some(geo()),
            root: dir.path().into(),
        };
        assert!(matches!(m.validate(), Err(CoreError::Argument(_))));
        m.samples[0].label = 0;
        m.validate().unwrap();
        m.samples[0].path = "nope.csv".into();
        assert!(matches!(m.validate(), Err(CoreError::MissingFile(_))));
    }
}
