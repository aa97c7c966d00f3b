//! Landmark inputs (CSV or JSON) and the `H2HT` trajectory container.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use super::{LandmarkFrame, LandmarkSequence, ShapeTrajectory};
use crate::camera::CameraParams;
use crate::error::{Error, Result};
use crate::model::{ByteReader, NUM_LANDMARKS};

const TRAJECTORY_MAGIC: &[u8; 4] = b"H2HT";

#[derive(Serialize, Deserialize)]
struct LandmarkJson {
    /// Per frame, one `[x, y]` or `[x, y, confidence]` entry per landmark.
    frames: Vec<Vec<Vec<f64>>>,
}

fn frame_from_rows(rows: &[Vec<f64>], frame: usize) -> Result<LandmarkFrame> {
    let has_conf = rows.iter().any(|r| r.len() == 3);
    let mut points = Vec::with_capacity(rows.len());
    let mut conf = Vec::with_capacity(rows.len());
    for (j, r) in rows.iter().enumerate() {
        match r.as_slice() {
            [x, y] => {
                points.push(Vector2::new(*x, *y));
                conf.push(1.0);
            }
            [x, y, c] => {
                points.push(Vector2::new(*x, *y));
                conf.push(*c);
            }
            _ => {
                return Err(Error::Format(format!(
                    "frame {frame}, landmark {j}: expected 2 or 3 values, got {}",
                    r.len()
                )))
            }
        }
    }
    LandmarkFrame::new(points, has_conf.then_some(conf))
}

/// Parses `{"frames": [[[x, y(, c)], …68], …]}`.
pub fn parse_landmarks_json(text: &str) -> Result<LandmarkSequence> {
    let parsed: LandmarkJson =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("landmark JSON: {e}")))?;
    let frames = parsed
        .frames
        .iter()
        .enumerate()
        .map(|(t, rows)| frame_from_rows(rows, t))
        .collect::<Result<Vec<_>>>()?;
    LandmarkSequence::new_68(frames)
}

/// Parses consecutive rows of `x,y[,confidence]`, 68 rows per frame. A
/// non-numeric first row is taken as a header; `#` starts a comment line.
pub fn parse_landmarks_csv(text: &str) -> Result<LandmarkSequence> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("landmark CSV: {e}")))?;
        let values: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        match values {
            Ok(v) => rows.push(v),
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::Format(format!(
                    "landmark CSV line {}: {e}",
                    record.position().map_or(0, |p| p.line())
                )))
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptySequence("landmark CSV has no rows"));
    }
    if rows.len() % NUM_LANDMARKS != 0 {
        return Err(Error::Format(format!(
            "landmark CSV has {} rows, not a multiple of {NUM_LANDMARKS}",
            rows.len()
        )));
    }
    let frames = rows
        .chunks(NUM_LANDMARKS)
        .enumerate()
        .map(|(t, chunk)| frame_from_rows(chunk, t))
        .collect::<Result<Vec<_>>>()?;
    LandmarkSequence::new_68(frames)
}

/// Loads landmarks, choosing the parser from the file extension (`.json`
/// or anything else as CSV).
pub fn load_landmarks(path: impl AsRef<Path>) -> Result<LandmarkSequence> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        parse_landmarks_json(&text)
    } else {
        parse_landmarks_csv(&text)
    }
}

pub fn landmarks_to_json(seq: &LandmarkSequence) -> String {
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            f.points
                .iter()
                .zip(&f.confidence)
                .map(|(p, c)| {
                    if *c == 1.0 {
                        vec![p.x, p.y]
                    } else {
                        vec![p.x, p.y, *c]
                    }
                })
                .collect()
        })
        .collect();
    serde_json::to_string(&LandmarkJson { frames }).expect("landmark JSON serialization")
}

pub fn save_landmarks_json(seq: &LandmarkSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, landmarks_to_json(seq)).map_err(|e| Error::io(path, e))
}

pub fn encode_trajectory(traj: &ShapeTrajectory) -> Vec<u8> {
    let frames = traj.num_frames();
    let ni = traj.id_coeffs.len();
    let ne = traj.exp_coeffs.ncols();
    let mut out = Vec::with_capacity(16 + 8 * (ni + frames * (ne + 7)));
    out.extend_from_slice(TRAJECTORY_MAGIC);
    for v in [frames as u32, ni as u32, ne as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    traj.id_coeffs.iter().copied().for_each(&mut put);
    for t in 0..frames {
        for k in 0..ne {
            put(traj.exp_coeffs[(t, k)]);
        }
    }
    for cam in &traj.cameras {
        cam.to_record().into_iter().for_each(&mut put);
    }
    out
}

pub fn decode_trajectory(bytes: &[u8]) -> Result<ShapeTrajectory> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(TRAJECTORY_MAGIC)?;
    let frames = r.u32()? as usize;
    let ni = r.u32()? as usize;
    let ne = r.u32()? as usize;
    let id_coeffs = DVector::from_vec(r.f64s(ni)?);
    let exp = r.f64s(frames * ne)?;
    let exp_coeffs = DMatrix::from_row_slice(frames, ne, &exp);
    let mut cameras = Vec::with_capacity(frames);
    for _ in 0..frames {
        let start = r.offset;
        let rec: [f64; 7] = r.f64s(7)?.try_into().expect("seven values");
        cameras
            .push(CameraParams::from_record(&rec).map_err(|e| r.error_at(start, e.to_string()))?);
    }
    if r.offset != bytes.len() {
        return Err(r.error_at(r.offset, "trailing bytes after trajectory payload"));
    }
    let traj = ShapeTrajectory {
        id_coeffs,
        exp_coeffs,
        cameras,
    };
    traj.validate()?;
    Ok(traj)
}

pub fn save_trajectory(traj: &ShapeTrajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_trajectory(traj))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<ShapeTrajectory> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_trajectory(&bytes)
}
