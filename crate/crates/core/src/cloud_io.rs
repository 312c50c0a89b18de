//! RPC1 binary and CSV persistence for point clouds, plus per-frame size
//! accounting.
//!
//! RPC1 layout: magic `RPC1`, `u32` point count, then per point four
//! little-endian `f32` values `[x, y, z, power]`.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::cartesian::CartesianGridSpec;
use crate::container::{write_atomic, ByteReader, ByteWriter};
use crate::cube::{PointCloud, RadarPoint};
use crate::error::{Error, Result};

pub const CLOUD_MAGIC: &[u8; 4] = b"RPC1";
pub const CLOUD_HEADER_BYTES: u64 = 8;
pub const POINT_RECORD_BYTES: u64 = 16;

pub fn encoded_len(num_points: usize) -> u64 {
    CLOUD_HEADER_BYTES + POINT_RECORD_BYTES * num_points as u64
}

pub fn write_cloud_to<W: Write>(cloud: &PointCloud, w: W) -> Result<()> {
    let mut w = ByteWriter::new(w);
    w.bytes(CLOUD_MAGIC)?;
    w.len_u32(cloud.len(), "point count")?;
    let mut flat = Vec::with_capacity(cloud.len() * 4);
    for p in &cloud.points {
        flat.extend_from_slice(&[p.x, p.y, p.z, p.power]);
    }
    w.f32s(&flat)?;
    w.finish()?;
    Ok(())
}

pub fn cloud_to_bytes(cloud: &PointCloud) -> Vec<u8> {
    let mut buf = Vec::with_capacity(encoded_len(cloud.len()) as usize);
    write_cloud_to(cloud, &mut buf).expect("writing to memory cannot fail");
    buf
}

pub fn read_cloud_from<R: Read>(r: R, frame_id: &str) -> Result<PointCloud> {
    let mut r = ByteReader::new(r);
    r.magic(CLOUD_MAGIC)?;
    let n = r.u32()? as usize;
    let flat = r.f32s(n * 4).map_err(|e| match e {
        Error::Format { offset, .. } => Error::format(
            offset,
            format!("count mismatch: header declares {n} points, payload is shorter"),
        ),
        other => other,
    })?;
    r.expect_eof().map_err(|e| match e {
        Error::Format { offset, .. } => Error::format(
            offset,
            format!("count mismatch: payload is longer than the declared {n} points"),
        ),
        other => other,
    })?;
    let points = flat
        .chunks_exact(4)
        .map(|c| RadarPoint {
            x: c[0],
            y: c[1],
            z: c[2],
            power: c[3],
        })
        .collect();
    Ok(PointCloud::new(points, frame_id))
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    write_atomic(path.as_ref(), &cloud_to_bytes(cloud))
}

/// Reads an RPC1 file; the frame id is the file stem.
pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let frame = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let f = std::fs::File::open(path)?;
    read_cloud_from(std::io::BufReader::new(f), &frame)
}

pub fn write_csv_to<W: Write>(cloud: &PointCloud, mut w: W) -> Result<()> {
    writeln!(w, "x,y,z,power")?;
    for p in &cloud.points {
        writeln!(w, "{},{},{},{}", p.x, p.y, p.z, p.power)?;
    }
    Ok(())
}

pub fn read_csv_from<R: BufRead>(r: R, frame_id: &str) -> Result<PointCloud> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::format(0, "empty CSV"))?;
    if header.trim() != "x,y,z,power" {
        return Err(Error::format(0, format!("unexpected CSV header {header:?}")));
    }
    let mut points = Vec::new();
    let mut offset = header.len() as u64 + 1;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            offset += line.len() as u64 + 1;
            continue;
        }
        let fields: Vec<f32> = line
            .split(',')
            .map(|f| f.trim().parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(offset, format!("bad CSV number: {e}")))?;
        let [x, y, z, power] = fields[..] else {
            return Err(Error::format(
                offset,
                format!("expected 4 CSV fields, found {}", fields.len()),
            ));
        };
        points.push(RadarPoint { x, y, z, power });
        offset += line.len() as u64 + 1;
    }
    Ok(PointCloud::new(points, frame_id))
}

/// Per-frame size figures for a cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudStats {
    pub num_points: usize,
    pub bytes_on_disk: u64,
    /// Points per cubic meter of the region of interest.
    pub density: f64,
}

impl CloudStats {
    pub fn megabytes(&self) -> f64 {
        self.bytes_on_disk as f64 / 1e6
    }
}

pub fn size_stats(cloud: &PointCloud, roi: &CartesianGridSpec) -> CloudStats {
    let vol = roi.volume_m3();
    CloudStats {
        num_points: cloud.len(),
        bytes_on_disk: encoded_len(cloud.len()),
        density: if vol > 0.0 { cloud.len() as f64 / vol } else { 0.0 },
    }
}
