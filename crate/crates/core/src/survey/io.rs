use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Rotation3, UnitQuaternion, Vector3};

use super::{SurveyDataset, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::Pose6;
use crate::svgp::UncertainInput;

pub const DATASET_MAGIC: &[u8; 5] = b"UIDS1";
const RECORD_BYTES: usize = 6 * 8;

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

/// Text point cloud: one `x y z` line per point; `#` starts a comment line.
pub fn write_point_cloud<'a>(
    path: &Path,
    points: impl IntoIterator<Item = &'a Vector3<f64>>,
    header: &str,
) -> Result<()> {
    let mut w = create(path)?;
    let io = || -> std::io::Result<()> {
        for line in header.lines() {
            writeln!(w, "# {line}")?;
        }
        for p in points {
            writeln!(w, "{:?} {:?} {:?}", p.x, p.y, p.z)?;
        }
        w.flush()
    };
    io().map_err(|e| Error::io(path, e))
}

pub fn read_point_cloud(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = t
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format("point cloud", path, format!("line {}: {e}", i + 1)))?;
        if vals.len() != 3 {
            return Err(Error::format(
                "point cloud",
                path,
                format!("line {}: expected 3 values, found {}", i + 1, vals.len()),
            ));
        }
        out.push(Vector3::new(vals[0], vals[1], vals[2]));
    }
    Ok(out)
}

/// Binary uncertain-input dataset: magic `UIDS1`, `u64` record count, then
/// per record `mean_x, mean_y, cov_xx, cov_xy, cov_yy, depth` as
/// little-endian `f64`.
pub fn encode_dataset(data: &[UncertainInput]) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + RECORD_BYTES * data.len());
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for u in data {
        for v in [
            u.mean_xy[0],
            u.mean_xy[1],
            u.cov_xy[0][0],
            u.cov_xy[0][1],
            u.cov_xy[1][1],
            u.depth,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<Vec<UncertainInput>> {
    let bad = |r: String| Error::format("dataset", path, r);
    if bytes.len() < 13 || &bytes[..5] != DATASET_MAGIC {
        return Err(bad("bad magic, expected UIDS1".into()));
    }
    let n = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")) as usize;
    let expected = n.checked_mul(RECORD_BYTES).and_then(|b| b.checked_add(13));
    if expected != Some(bytes.len()) {
        return Err(bad(format!("{n} records need {expected:?} bytes, found {}", bytes.len())));
    }
    let f = |k: usize| f64::from_le_bytes(bytes[k..k + 8].try_into().expect("8 bytes"));
    (0..n)
        .map(|i| {
            let o = 13 + i * RECORD_BYTES;
            let u = UncertainInput {
                mean_xy: [f(o), f(o + 8)],
                cov_xy: [[f(o + 16), f(o + 24)], [f(o + 24), f(o + 32)]],
                depth: f(o + 40),
            };
            crate::svgp::CovarianceFactor::new(&u.cov_xy).map_err(|e| bad(format!("record {i}: {e}")))?;
            Ok(u)
        })
        .collect()
}

pub fn write_dataset(path: &Path, data: &[UncertainInput]) -> Result<()> {
    std::fs::write(path, encode_dataset(data)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<UncertainInput>> {
    decode_dataset(&read_all(path)?, path)
}

fn pose_fields(s: &mut String, p: &Pose6) {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(p.rotation));
    let t = p.translation;
    let _ = write!(s, ",{:?},{:?},{:?},{:?},{:?},{:?},{:?}", t.x, t.y, t.z, q.w, q.i, q.j, q.k);
}

/// Trajectory CSV: time, ground-truth pose (xyz, quaternion wxyz), dead
/// reckoned pose, then the 21 upper-triangle EKF covariance entries in
/// row-major order.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut s = String::from("t,gt_x,gt_y,gt_z,gt_qw,gt_qx,gt_qy,gt_qz,dr_x,dr_y,dr_z,dr_qw,dr_qx,dr_qy,dr_qz");
    for i in 0..6 {
        for j in i..6 {
            let _ = write!(s, ",cov_{i}{j}");
        }
    }
    s.push('\n');
    for p in &traj.points {
        let _ = write!(s, "{:?}", p.time);
        pose_fields(&mut s, &p.gt);
        pose_fields(&mut s, &p.dr);
        for i in 0..6 {
            for j in i..6 {
                let _ = write!(s, ",{:?}", p.ekf_cov[(i, j)]);
            }
        }
        s.push('\n');
    }
    s
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    std::fs::write(path, trajectory_csv(traj)).map_err(|e| Error::io(path, e))
}

/// Full survey state as JSON (exact float round trip).
pub fn write_survey(path: &Path, survey: &SurveyDataset) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, survey)
        .map_err(|e| Error::format("survey", path, e.to_string()))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_survey(path: &Path) -> Result<SurveyDataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::format("survey", path, e.to_string()))
}
