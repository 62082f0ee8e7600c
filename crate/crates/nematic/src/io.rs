//! File formats: level-set volumes, checkpoints, OBJ meshes, polyline sets, CSV.
//!
//! Binary volumes start with three little-endian `u32` dimensions and the
//! spacing as `f64`, followed by `f64` samples with x fastest. Checkpoints add
//! a parameter block `(η, ξ, β, a, b, c)` after the header and store the five
//! tensor coordinates per voxel. Every writer goes through a temporary file in
//! the target directory and a rename.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use nematic_core::grid::{Grid, LevelSetVolume};
use nematic_core::linalg::Vec3;
use nematic_core::mesh::{Polyline, TriMesh};
use nematic_core::relax::QField;
use nematic_core::tensor::QTensor;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.display().to_string(), source }
}

fn format_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format { path: path.display().to_string(), msg: msg.into() }
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| IoError::Io { path: path.display().to_string(), source: e.error })?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(io_err(path))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let s = self.buf.get(self.pos..self.pos + N)?;
        self.pos += N;
        s.try_into().ok()
    }

    fn u32(&mut self) -> Option<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn f64(&mut self) -> Option<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }
}

fn header(dims: [usize; 3], spacing: f64, out: &mut Vec<u8>) {
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&spacing.to_le_bytes());
}

fn read_header(r: &mut Reader, path: &Path) -> Result<([usize; 3], f64), IoError> {
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = r.u32().ok_or_else(|| format_err(path, "truncated header"))? as usize;
    }
    let h = r.f64().ok_or_else(|| format_err(path, "truncated header"))?;
    Ok((dims, h))
}

pub fn encode_level_set(v: &LevelSetVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * v.data.len());
    header(v.dims, v.spacing, &mut out);
    for x in &v.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn write_level_set(path: &Path, v: &LevelSetVolume) -> Result<(), IoError> {
    write_atomic(path, &encode_level_set(v))
}

pub fn read_level_set(path: &Path) -> Result<LevelSetVolume, IoError> {
    let bytes = read_bytes(path)?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    let (dims, h) = read_header(&mut r, path)?;
    let n = dims.iter().product::<usize>();
    if bytes.len() != 20 + 8 * n {
        return Err(format_err(path, format!("expected {} samples for dims {dims:?}, file has {} bytes", n, bytes.len())));
    }
    let data: Vec<f64> = (0..n).map(|_| r.f64().unwrap()).collect();
    LevelSetVolume::new(dims, h, data).map_err(|e| format_err(path, e.to_string()))
}

/// A saved field with the parameters it was computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dims: [usize; 3],
    pub h: f64,
    /// `(η, ξ, β, a, b, c)`.
    pub params: [f64; 6],
    pub q: Vec<QTensor>,
}

impl Checkpoint {
    pub fn new(field: &QField, params: [f64; 6]) -> Self {
        Checkpoint { dims: field.grid.dims, h: field.grid.h, params, q: field.q.clone() }
    }

    /// The field on `grid`, which must have the stored dimensions and spacing.
    pub fn into_field(self, grid: Grid) -> Result<QField, String> {
        if grid.dims != self.dims || (grid.h - self.h).abs() > 1e-12 * self.h {
            return Err(format!("checkpoint grid {:?} h = {} does not match the configured grid {:?} h = {}", self.dims, self.h, grid.dims, grid.h));
        }
        Ok(QField { grid, q: self.q })
    }
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::with_capacity(68 + 40 * c.q.len());
    header(c.dims, c.h, &mut out);
    for p in c.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    for q in &c.q {
        for x in q.to_array() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn write_checkpoint(path: &Path, c: &Checkpoint) -> Result<(), IoError> {
    write_atomic(path, &encode_checkpoint(c))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, IoError> {
    let bytes = read_bytes(path)?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    let (dims, h) = read_header(&mut r, path)?;
    let mut params = [0.0; 6];
    for p in &mut params {
        *p = r.f64().ok_or_else(|| format_err(path, "truncated parameter block"))?;
    }
    let n = dims.iter().product::<usize>();
    if bytes.len() != 68 + 40 * n {
        return Err(format_err(path, format!("expected {n} voxels for dims {dims:?}, file has {} bytes", bytes.len())));
    }
    let q = (0..n)
        .map(|_| {
            let a = [0; 5].map(|_| r.f64().unwrap());
            QTensor::from_array(a)
        })
        .collect();
    Ok(Checkpoint { dims, h, params, q })
}

fn fmt_vec(out: &mut String, tag: &str, p: Vec3) {
    let _ = writeln!(out, "{tag} {:.16e} {:.16e} {:.16e}", p[0], p[1], p[2]);
}

/// ASCII OBJ with 17 significant digits; `comments` are written first as `#` lines.
pub fn obj_string(mesh: &TriMesh, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for &v in &mesh.vertices {
        fmt_vec(&mut out, "v", v);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

pub fn write_obj(path: &Path, mesh: &TriMesh, comments: &[String]) -> Result<(), IoError> {
    write_atomic(path, obj_string(mesh, comments).as_bytes())
}

/// Reads `v` and triangular `f` records; other records are ignored.
pub fn parse_obj(text: &str, path: &Path) -> Result<TriMesh, IoError> {
    let mut mesh = TriMesh::default();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it.take(3).map(str::parse).collect::<Result<_, _>>().map_err(|e| format_err(path, format!("line {}: {e}", ln + 1)))?;
                if c.len() != 3 {
                    return Err(format_err(path, format!("line {}: vertex needs three coordinates", ln + 1)));
                }
                mesh.vertices.push([c[0], c[1], c[2]]);
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|tok| tok.split('/').next().unwrap_or("").parse::<u32>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| format_err(path, format!("line {}: {e}", ln + 1)))?;
                if idx.len() != 3 || idx.iter().any(|&i| i == 0 || i as usize > mesh.vertices.len()) {
                    return Err(format_err(path, format!("line {}: faces must be triangles with valid indices", ln + 1)));
                }
                mesh.triangles.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {}
        }
    }
    Ok(mesh)
}

pub fn read_obj(path: &Path) -> Result<TriMesh, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_obj(&text, path)
}

/// One block per polyline: `L <count> <open|closed>`, then `count` lines `x y z`.
pub fn polylines_string(lines: &[Polyline]) -> String {
    let mut out = String::new();
    for l in lines {
        let _ = writeln!(out, "L {} {}", l.points.len(), if l.closed { "closed" } else { "open" });
        for &p in &l.points {
            let _ = writeln!(out, "{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2]);
        }
    }
    out
}

pub fn write_polylines(path: &Path, lines: &[Polyline]) -> Result<(), IoError> {
    write_atomic(path, polylines_string(lines).as_bytes())
}

pub fn parse_polylines(text: &str, path: &Path) -> Result<Vec<Polyline>, IoError> {
    let mut out = Vec::new();
    let mut rows = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    while let Some((ln, head)) = rows.next() {
        let mut it = head.split_whitespace();
        if it.next() != Some("L") {
            return Err(format_err(path, format!("line {}: expected an L block", ln + 1)));
        }
        let count: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| format_err(path, format!("line {}: missing vertex count", ln + 1)))?;
        let closed = it.next() == Some("closed");
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, row) = rows.next().ok_or_else(|| format_err(path, "truncated polyline block"))?;
            let c: Vec<f64> = row.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|e| format_err(path, format!("line {}: {e}", ln + 1)))?;
            if c.len() != 3 {
                return Err(format_err(path, format!("line {}: expected x y z", ln + 1)));
            }
            points.push([c[0], c[1], c[2]]);
        }
        out.push(Polyline { points, closed });
    }
    Ok(out)
}

pub fn read_polylines(path: &Path) -> Result<Vec<Polyline>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_polylines(&text, path)
}

/// Serializes `rows` with a header from the field names.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| IoError::Csv(e.into_error().into()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    write_atomic(path, &csv_bytes(rows)?)
}

#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
pub struct FRow {
    pub vertex: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub f: u8,
}

/// Per-vertex membership of `F` read back from its CSV.
pub fn read_f_csv(path: &Path) -> Result<Vec<bool>, IoError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: FRow = row?;
        if row.vertex != out.len() {
            return Err(format_err(path, format!("vertex {} out of order", row.vertex)));
        }
        out.push(row.f != 0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nematic_core::tensor::QTensor;

    #[test]
    fn checkpoint_round_trip() {
        let grid = Grid::new([-1.0; 3], [1.0; 3], 0.5, [false; 3]).unwrap();
        let q: Vec<QTensor> = (0..grid.len()).map(|i| QTensor::from_array([i as f64, 0.1, -0.2, 1e-300, f64::MAX])).collect();
        let c = Checkpoint { dims: grid.dims, h: grid.h, params: [0.1, 0.01, 0.46, 1.0, 1.0, 1.0], q };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        write_checkpoint(&p, &c).unwrap();
        assert_eq!(read_checkpoint(&p).unwrap(), c);
        let field = read_checkpoint(&p).unwrap().into_field(grid).unwrap();
        assert_eq!(field.q.len(), grid.len());
        fs::write(&p, &encode_checkpoint(&c)[..50]).unwrap();
        assert!(matches!(read_checkpoint(&p), Err(IoError::Format { .. })));
    }

    #[test]
    fn level_set_round_trip() {
        let v = LevelSetVolume::new([2, 3, 4], 0.25, (0..24).map(|i| i as f64 - 3.5).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.ls");
        write_level_set(&p, &v).unwrap();
        assert_eq!(read_level_set(&p).unwrap(), v);
    }

    #[test]
    fn obj_and_polylines_are_exact() {
        let mesh = TriMesh { vertices: vec![[0.1, 1.0 / 3.0, -2e-17], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], triangles: vec![[0, 1, 2]] };
        let back = parse_obj(&obj_string(&mesh, &["T".into()]), Path::new("x")).unwrap();
        assert_eq!(back, mesh);
        let lines = vec![Polyline::circle([0.0; 3], 1.0, 7), Polyline { points: vec![[0.0; 3], [0.1, 0.2, 0.3]], closed: false }];
        let back = parse_polylines(&polylines_string(&lines), Path::new("x")).unwrap();
        assert_eq!(back, lines);
        assert!(parse_obj("f 1 2 3\n", Path::new("x")).is_err());
    }

    #[test]
    fn f_csv_round_trip() {
        let rows = vec![FRow { vertex: 0, x: 0.0, y: 0.0, z: 1.0, f: 1 }, FRow { vertex: 1, x: 0.0, y: 0.0, z: -1.0, f: 0 }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_csv(&p, &rows).unwrap();
        assert_eq!(read_f_csv(&p).unwrap(), vec![true, false]);
    }
}
