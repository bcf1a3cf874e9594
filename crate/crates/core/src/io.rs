//! File formats.
//!
//! | artifact      | format | layout |
//! |---------------|--------|--------|
//! | cameras       | JSON   | array of `{id, image_size, intrinsics, rotation, translation, distortion}` |
//! | anchors       | CSV    | `camera_id,anchor_id,x,y,z,u,v` |
//! | trajectories  | CSV    | `frame,target_id,x,y,z` (representative point) |
//! | heights       | CSV    | `target_id,height` |
//! | observations  | JSONL  | `{frame, target_id, representative, entries: [{camera_id, visible, pixel}]}` |
//! | detections    | CSV    | `frame,target_id,camera_id,x_min,y_min,x_max,y_max` |
//! | estimates     | CSV    | `frame,target_id,x,y,z,converged,objective` |
//! | initials      | CSV    | `frame,target_id,x,y,z,n_visible` |
//!
//! `rotation` is the world-to-camera matrix in row-major order and
//! `translation` its offset, so a world point maps to `R x + T`. CSV numbers
//! are written with 9 significant digits and LF line endings.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::Matrix3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraParams, Distortion, Extrinsics, Intrinsics, Pixel2D, Position3D};
use crate::error::{Error, Result};
use crate::observation::{FrameObservations, ObservationEntry, Representative};
use crate::weights::Anchor;

/// Formats with 9 significant digits, shortest form, no trailing zeros.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').unwrap_or((&sci, "0"));
    let exp: i32 = exp.parse().unwrap_or(0);
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        if t == "-0" {
            "0".into()
        } else {
            t.to_string()
        }
    } else {
        s
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn schema_at(path: &Path, line: Option<u64>, message: impl std::fmt::Display) -> Error {
    let loc = match line {
        Some(l) => format!("{}:{l}", path.display()),
        None => path.display().to_string(),
    };
    Error::schema(loc, message.to_string())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Parses a JSON document, reporting the line and field path of a syntax or
/// schema error.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        let line = Some(inner.line() as u64);
        if field == "." {
            schema_at(path, line, inner)
        } else {
            schema_at(path, line, format!("at `{field}`: {inner}"))
        }
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub id: u32,
    pub image_size: [u32; 2],
    pub intrinsics: IntrinsicsRecord,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub distortion: [f64; 5],
}

impl From<&CameraParams> for CameraRecord {
    fn from(c: &CameraParams) -> Self {
        let r = c.extrinsics.rotation();
        let t = c.extrinsics.translation();
        CameraRecord {
            id: c.id,
            image_size: [c.image_size.0, c.image_size.1],
            intrinsics: IntrinsicsRecord {
                fx: c.intrinsics.fx,
                fy: c.intrinsics.fy,
                cx: c.intrinsics.cx,
                cy: c.intrinsics.cy,
            },
            rotation: std::array::from_fn(|i| r[(i / 3, i % 3)]),
            translation: [t.x, t.y, t.z],
            distortion: c.distortion.as_array(),
        }
    }
}

impl CameraRecord {
    pub fn to_params(&self) -> Result<CameraParams> {
        CameraParams::new(
            self.id,
            Intrinsics::new(self.intrinsics.fx, self.intrinsics.fy, self.intrinsics.cx, self.intrinsics.cy)?,
            Extrinsics::new(Matrix3::from_row_slice(&self.rotation), self.translation.into())?,
            Distortion::from_array(self.distortion)?,
            (self.image_size[0], self.image_size[1]),
        )
    }
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraParams>> {
    let records: Vec<CameraRecord> = read_json(path)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| r.to_params().map_err(|e| schema_at(path, None, format!("camera [{i}] (id {}): {e}", r.id))))
        .collect()
}

pub fn write_cameras(path: &Path, cams: &[CameraParams]) -> Result<()> {
    let records: Vec<CameraRecord> = cams.iter().map(CameraRecord::from).collect();
    write_json(path, &records)
}

fn csv_writer(header: &[&str]) -> Result<csv::Writer<Vec<u8>>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(w)
}

fn finish_csv(path: &Path, w: csv::Writer<Vec<u8>>) -> Result<()> {
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    write_file(path, &bytes)
}

fn push_record(w: &mut csv::Writer<Vec<u8>>, rec: &[String]) -> Result<()> {
    w.write_record(rec).map_err(|e| Error::invalid(e.to_string()))
}

/// Reads a headed CSV into typed rows, reporting the line of a bad record.
fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| schema_at(path, Some(1), e))?.clone();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| schema_at(path, e.position().map(|p| p.line()), e))?;
        let line = rec.position().map(|p| p.line());
        out.push(rec.deserialize(Some(&headers)).map_err(|e| schema_at(path, line, e))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct AnchorRow {
    camera_id: u32,
    anchor_id: u32,
    x: f64,
    y: f64,
    z: f64,
    u: f64,
    v: f64,
}

pub fn read_anchors(path: &Path) -> Result<Vec<Anchor>> {
    Ok(read_csv::<AnchorRow>(path)?
        .into_iter()
        .map(|r| Anchor {
            camera_id: r.camera_id,
            anchor_id: r.anchor_id,
            world: Position3D::new(r.x, r.y, r.z),
            observed_pixel: Pixel2D::new(r.u, r.v),
        })
        .collect())
}

pub fn write_anchors<'a>(path: &Path, anchors: impl IntoIterator<Item = &'a Anchor>) -> Result<()> {
    let mut w = csv_writer(&["camera_id", "anchor_id", "x", "y", "z", "u", "v"])?;
    for a in anchors {
        push_record(
            &mut w,
            &[
                a.camera_id.to_string(),
                a.anchor_id.to_string(),
                fmt_f64(a.world.x),
                fmt_f64(a.world.y),
                fmt_f64(a.world.z),
                fmt_f64(a.observed_pixel.x),
                fmt_f64(a.observed_pixel.y),
            ],
        )?;
    }
    finish_csv(path, w)
}

/// A position of one target at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionRow {
    pub frame: u64,
    pub target_id: u32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl PositionRow {
    pub fn position(&self) -> Position3D {
        Position3D::new(self.x, self.y, self.z)
    }
}

pub fn read_positions(path: &Path) -> Result<Vec<PositionRow>> {
    read_csv(path)
}

pub fn write_positions(path: &Path, rows: &[PositionRow]) -> Result<()> {
    let mut w = csv_writer(&["frame", "target_id", "x", "y", "z"])?;
    for r in rows {
        push_record(
            &mut w,
            &[r.frame.to_string(), r.target_id.to_string(), fmt_f64(r.x), fmt_f64(r.y), fmt_f64(r.z)],
        )?;
    }
    finish_csv(path, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct HeightRow {
    target_id: u32,
    height: f64,
}

pub fn read_heights(path: &Path) -> Result<BTreeMap<u32, f64>> {
    let mut out = BTreeMap::new();
    for r in read_csv::<HeightRow>(path)? {
        if !(r.height.is_finite() && r.height >= 0.0) {
            return Err(schema_at(path, None, format!("target {} has invalid height {}", r.target_id, r.height)));
        }
        if out.insert(r.target_id, r.height).is_some() {
            return Err(schema_at(path, None, format!("target {} listed twice", r.target_id)));
        }
    }
    Ok(out)
}

pub fn write_heights(path: &Path, heights: &BTreeMap<u32, f64>) -> Result<()> {
    let mut w = csv_writer(&["target_id", "height"])?;
    for (id, h) in heights {
        push_record(&mut w, &[id.to_string(), fmt_f64(*h)])?;
    }
    finish_csv(path, w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryRecord {
    camera_id: u32,
    visible: bool,
    #[serde(default)]
    pixel: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationRecord {
    frame: u64,
    target_id: u32,
    representative: Representative,
    entries: Vec<EntryRecord>,
}

pub fn read_observations(path: &Path) -> Result<Vec<FrameObservations>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = Some(i as u64 + 1);
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ObservationRecord = serde_json::from_str(&line).map_err(|e| schema_at(path, line_no, e))?;
        let entries = rec
            .entries
            .iter()
            .map(|e| match (e.visible, e.pixel) {
                (true, Some(p)) => Ok(ObservationEntry::visible(e.camera_id, Pixel2D::new(p[0], p[1]))),
                (false, _) => Ok(ObservationEntry::hidden(e.camera_id)),
                (true, None) => Err(schema_at(
                    path,
                    line_no,
                    format!("camera {} is visible but has no pixel", e.camera_id),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(
            FrameObservations::new(rec.frame, rec.target_id, rec.representative, entries)
                .map_err(|e| schema_at(path, line_no, e))?,
        );
    }
    Ok(out)
}

pub fn write_observations(path: &Path, obs: &[FrameObservations]) -> Result<()> {
    let mut buf = Vec::new();
    for o in obs {
        let rec = ObservationRecord {
            frame: o.frame_index,
            target_id: o.target_id,
            representative: o.representative,
            entries: o
                .entries
                .iter()
                .map(|e| EntryRecord {
                    camera_id: e.camera_id,
                    visible: e.pixel.is_some(),
                    pixel: e.pixel.map(|p| [p.x, p.y]),
                })
                .collect(),
        };
        serde_json::to_writer(&mut buf, &rec).map_err(|e| Error::invalid(e.to_string()))?;
        buf.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    write_file(path, &buf)
}

/// A detection box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: u64,
    pub target_id: u32,
    pub camera_id: u32,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Detection {
    /// Top-center of the box for the head, bottom-center for the ankle.
    pub fn representative_pixel(&self, representative: Representative) -> Pixel2D {
        let u = 0.5 * (self.x_min + self.x_max);
        match representative {
            Representative::Head => Pixel2D::new(u, self.y_min),
            Representative::Ankle => Pixel2D::new(u, self.y_max),
        }
    }
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let dets: Vec<Detection> = read_csv(path)?;
    if let Some(d) = dets.iter().find(|d| !(d.x_max >= d.x_min && d.y_max >= d.y_min)) {
        return Err(schema_at(
            path,
            None,
            format!("inverted box for frame {} target {} camera {}", d.frame, d.target_id, d.camera_id),
        ));
    }
    Ok(dets)
}

/// Groups boxes into one observation per (frame, target); cameras without a
/// box for that target are hidden.
pub fn detections_to_observations(
    dets: &[Detection],
    camera_ids: &[u32],
    representative: Representative,
) -> Result<Vec<FrameObservations>> {
    let mut grouped: BTreeMap<(u64, u32), BTreeMap<u32, Pixel2D>> = BTreeMap::new();
    for d in dets {
        let slot = grouped.entry((d.frame, d.target_id)).or_default();
        if slot.insert(d.camera_id, d.representative_pixel(representative)).is_some() {
            return Err(Error::invalid(format!(
                "frame {} target {}: two boxes in camera {}",
                d.frame, d.target_id, d.camera_id
            )));
        }
    }
    grouped
        .into_iter()
        .map(|((frame, target_id), pixels)| {
            let entries = camera_ids
                .iter()
                .map(|id| match pixels.get(id) {
                    Some(p) => ObservationEntry::visible(*id, *p),
                    None => ObservationEntry::hidden(*id),
                })
                .collect();
            if let Some(id) = pixels.keys().find(|id| !camera_ids.contains(id)) {
                return Err(Error::UnknownCamera(*id));
            }
            FrameObservations::new(frame, target_id, representative, entries)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub frame: u64,
    pub target_id: u32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub converged: bool,
    pub objective: f64,
}

pub fn read_estimates(path: &Path) -> Result<Vec<EstimateRow>> {
    read_csv(path)
}

pub fn write_estimates(path: &Path, rows: &[EstimateRow]) -> Result<()> {
    let mut w = csv_writer(&["frame", "target_id", "x", "y", "z", "converged", "objective"])?;
    for r in rows {
        push_record(
            &mut w,
            &[
                r.frame.to_string(),
                r.target_id.to_string(),
                fmt_f64(r.x),
                fmt_f64(r.y),
                fmt_f64(r.z),
                r.converged.to_string(),
                fmt_f64(r.objective),
            ],
        )?;
    }
    finish_csv(path, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialRow {
    pub frame: u64,
    pub target_id: u32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub n_visible: usize,
}

pub fn read_initials(path: &Path) -> Result<Vec<InitialRow>> {
    read_csv(path)
}

pub fn write_initials(path: &Path, rows: &[InitialRow]) -> Result<()> {
    let mut w = csv_writer(&["frame", "target_id", "x", "y", "z", "n_visible"])?;
    for r in rows {
        push_record(
            &mut w,
            &[
                r.frame.to_string(),
                r.target_id.to_string(),
                fmt_f64(r.x),
                fmt_f64(r.y),
                fmt_f64(r.z),
                r.n_visible.to_string(),
            ],
        )?;
    }
    finish_csv(path, w)
}

/// Writes header plus string records as CSV.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(header)?;
    for r in rows {
        push_record(&mut w, &r)?;
    }
    finish_csv(path, w)
}
