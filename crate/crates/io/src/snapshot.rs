//! State snapshots: a JSON manifest next to a raw little-endian `f64`
//! payload.
//!
//! The manifest lists the fields in payload order with byte offsets and
//! lengths, so any reader can locate a field without this crate.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use seaice_core::driver::State;
use seaice_core::{Grid, ScalarField, VectorField};

pub const FORMAT: &str = "seaice-snapshot";
pub const VERSION: u32 = 1;
/// Fields in payload order.
pub const FIELD_NAMES: [&str; 4] = ["u_x", "u_y", "h", "A"];

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt snapshot manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("snapshot payload {path} has {actual} bytes, manifest expects {expected}")]
    LengthMismatch { path: PathBuf, expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridHeader {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldEntry {
    pub name: String,
    /// Byte offset into the payload.
    pub offset: usize,
    /// Number of `f64` values.
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub endianness: String,
    pub dtype: String,
    /// Row-major, `index = j * nx + i`.
    pub layout: String,
    pub grid: GridHeader,
    pub t: f64,
    /// Payload file name, relative to the manifest's directory.
    pub payload: String,
    pub fields: Vec<FieldEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SnapshotError + '_ {
    move |source| SnapshotError::Io { path: path.to_path_buf(), source }
}

/// Writes `<path>` (manifest) and `<path>.bin` with the extension replaced,
/// each through a temporary file renamed into place.
pub fn write_snapshot(state: &State, path: &Path) -> Result<(), SnapshotError> {
    let g = state.grid();
    let n = g.len();
    let payload_path = path.with_extension("bin");
    let payload_name = payload_path.file_name().and_then(|s| s.to_str()).ok_or_else(|| SnapshotError::Manifest { path: path.to_path_buf(), reason: "payload path is not valid UTF-8".into() })?.to_string();
    let fields: [&ScalarField; 4] = [&state.u.x, &state.u.y, &state.h, &state.a];

    let mut bytes = Vec::with_capacity(4 * n * 8);
    for f in fields {
        for v in f.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        endianness: "little".into(),
        dtype: "f64".into(),
        layout: "row-major".into(),
        grid: GridHeader { nx: g.nx(), ny: g.ny(), lx: g.lx(), ly: g.ly() },
        t: state.t,
        payload: payload_name,
        fields: FIELD_NAMES.iter().enumerate().map(|(k, name)| FieldEntry { name: (*name).into(), offset: k * n * 8, len: n }).collect(),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    atomic_write(&payload_path, &bytes)?;
    atomic_write(path, &json)
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), SnapshotError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| SnapshotError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest, SnapshotError> {
    let text = std::fs::read(path).map_err(io_err(path))?;
    let m: Manifest = serde_json::from_slice(&text).map_err(|e| SnapshotError::Manifest { path: path.to_path_buf(), reason: e.to_string() })?;
    let bad = |reason: String| SnapshotError::Manifest { path: path.to_path_buf(), reason };
    if m.format != FORMAT || m.version != VERSION {
        return Err(bad(format!("unsupported format {} v{}", m.format, m.version)));
    }
    if m.endianness != "little" || m.dtype != "f64" || m.layout != "row-major" {
        return Err(bad(format!("unsupported encoding {}/{}/{}", m.endianness, m.dtype, m.layout)));
    }
    let n = m.grid.nx * m.grid.ny;
    for name in FIELD_NAMES {
        let e = m.fields.iter().find(|f| f.name == name).ok_or_else(|| bad(format!("missing field {name}")))?;
        if e.len != n {
            return Err(bad(format!("field {name} has {} values, grid has {n} cells", e.len)));
        }
    }
    Ok(m)
}

pub fn read_snapshot(path: &Path) -> Result<State, SnapshotError> {
    let m = read_manifest(path)?;
    let bad = |reason: String| SnapshotError::Manifest { path: path.to_path_buf(), reason };
    let payload_path = path.parent().unwrap_or(Path::new(".")).join(&m.payload);
    let bytes = std::fs::read(&payload_path).map_err(io_err(&payload_path))?;
    let expected = m.fields.iter().map(|f| f.offset + 8 * f.len).max().unwrap_or(0);
    if bytes.len() != expected {
        return Err(SnapshotError::LengthMismatch { path: payload_path, expected, actual: bytes.len() });
    }
    let g = Grid::new(m.grid.nx, m.grid.ny, m.grid.lx, m.grid.ly).map_err(|e| bad(e.to_string()))?;
    let field = |name: &str| -> Result<ScalarField, SnapshotError> {
        let e = m.fields.iter().find(|f| f.name == name).expect("checked in read_manifest");
        let vals = bytes[e.offset..e.offset + 8 * e.len].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        ScalarField::from_vec(g, vals).map_err(|e| bad(e.to_string()))
    };
    let u = VectorField::new(field("u_x")?, field("u_y")?);
    State::new(u, field("h")?, field("A")?, m.t).map_err(|e| bad(e.to_string()))
}
