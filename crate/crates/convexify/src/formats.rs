//! On-disk formats. Every binary block is raw little-endian `f64`, described
//! by a JSON header next to it; text outputs print floats in their shortest
//! round-trip form so equal data always give equal bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use convexify_core::acquire::{CauchyProjection, PickedArrivals};
use convexify_core::forward::BoundaryRecording;
use convexify_core::grid::{Grid3, ScalarField, VecField};
use convexify_core::optimize::RunTrace;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const BYTE_ORDER: &str = "little-endian";
pub const FIELD_LAYOUT: &str = "component-major, x fastest then y then z";

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e))
}

pub fn f64_bytes<'a>(blocks: impl IntoIterator<Item = &'a [f64]>) -> Vec<u8> {
    blocks.into_iter().flatten().flat_map(|v| v.to_le_bytes()).collect()
}

/// Reads a file of little-endian `f64` and splits it into blocks of the
/// given lengths, which must account for every byte.
pub fn read_f64_blocks(path: &Path, lengths: &[usize]) -> Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let total: usize = lengths.iter().sum();
    if bytes.len() != 8 * total {
        return Err(CliError::format(path, format!("expected {} bytes, found {}", 8 * total, bytes.len())));
    }
    let mut values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    Ok(lengths.iter().map(|&n| values.by_ref().take(n).collect()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldHeader {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: f64,
    pub component_count: usize,
    pub byte_order: String,
    pub layout: String,
}

impl FieldHeader {
    pub fn grid(&self) -> std::result::Result<Grid3, convexify_core::Error> {
        Grid3::new(self.origin, self.spacing, self.dims)
    }
}

/// `<stem>.json` + `<stem>.bin`. Returns the two paths.
pub fn write_field(dir: &Path, stem: &str, field: &VecField) -> Result<[PathBuf; 2]> {
    let g = field.grid();
    let header = FieldHeader {
        dims: g.dims,
        origin: g.origin,
        spacing: g.spacing,
        component_count: field.n_comp(),
        byte_order: BYTE_ORDER.into(),
        layout: FIELD_LAYOUT.into(),
    };
    let json = dir.join(format!("{stem}.json"));
    let bin = dir.join(format!("{stem}.bin"));
    write_json(&json, &header)?;
    write_bytes(&bin, &f64_bytes([field.as_slice()]))?;
    Ok([json, bin])
}

pub fn write_scalar(dir: &Path, stem: &str, field: &ScalarField) -> Result<[PathBuf; 2]> {
    write_field(dir, stem, &VecField::from_components(std::slice::from_ref(field))?)
}

pub fn read_field(dir: &Path, stem: &str) -> Result<VecField> {
    let json = dir.join(format!("{stem}.json"));
    let header: FieldHeader = read_json(&json)?;
    if header.byte_order != BYTE_ORDER {
        return Err(CliError::format(&json, format!("unsupported byte order {}", header.byte_order)));
    }
    let grid = header.grid()?;
    let n = grid.len() * header.component_count;
    let mut blocks = read_f64_blocks(&dir.join(format!("{stem}.bin")), &[n])?;
    Ok(VecField::from_raw(grid, header.component_count, blocks.remove(0))?)
}

/// Legacy ASCII VTK `STRUCTURED_POINTS` with one `SCALARS` array per field.
pub fn vtk_string(title: &str, fields: &[(&str, &ScalarField)]) -> String {
    let Some((_, first)) = fields.first() else {
        return String::new();
    };
    let g = first.grid();
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET STRUCTURED_POINTS");
    let _ = writeln!(s, "DIMENSIONS {} {} {}", g.dims[0], g.dims[1], g.dims[2]);
    let _ = writeln!(s, "ORIGIN {} {} {}", g.origin[0], g.origin[1], g.origin[2]);
    let _ = writeln!(s, "SPACING {} {} {}", g.spacing, g.spacing, g.spacing);
    let _ = writeln!(s, "POINT_DATA {}", g.len());
    for (name, f) in fields {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in f.values() {
            let _ = writeln!(s, "{v}");
        }
    }
    s
}

pub fn write_vtk(path: &Path, title: &str, fields: &[(&str, &ScalarField)]) -> Result<()> {
    write_bytes(path, vtk_string(title, fields).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub name: String,
    pub len: usize,
}

fn blocks(named: &[(&str, &[f64])]) -> Vec<Block> {
    named.iter().map(|(n, v)| Block { name: (*n).into(), len: v.len() }).collect()
}

fn check_blocks(path: &Path, found: &[Block], expected: &[&str]) -> Result<Vec<usize>> {
    let names: Vec<&str> = found.iter().map(|b| b.name.as_str()).collect();
    if names != expected {
        return Err(CliError::format(path, format!("expected blocks {expected:?}, found {names:?}")));
    }
    Ok(found.iter().map(|b| b.len).collect())
}

pub const RECORDING_FORMAT: &str = "convexify-recording/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingHeader {
    pub format: String,
    pub phantom: Option<String>,
    pub omega: Grid3,
    pub source: [f64; 3],
    pub dt: f64,
    pub t0: f64,
    pub n_times: usize,
    pub boundary_nodes: Vec<usize>,
    pub top_nodes: Vec<usize>,
    pub clean_until: Vec<f64>,
    pub byte_order: String,
    /// Contents of `recording.bin`, in order, each node-major.
    pub blocks: Vec<Block>,
}

pub fn write_recording(dir: &Path, rec: &BoundaryRecording, phantom: Option<&str>) -> Result<[PathBuf; 2]> {
    let named: [(&str, &[f64]); 4] =
        [("f0", &rec.f0), ("f1", &rec.f1), ("below1", &rec.below[0]), ("below2", &rec.below[1])];
    let header = RecordingHeader {
        format: RECORDING_FORMAT.into(),
        phantom: phantom.map(Into::into),
        omega: rec.omega,
        source: rec.source,
        dt: rec.dt,
        t0: rec.duration(),
        n_times: rec.n_times,
        boundary_nodes: rec.boundary_nodes.clone(),
        top_nodes: rec.top_nodes.clone(),
        clean_until: rec.clean_until.clone(),
        byte_order: BYTE_ORDER.into(),
        blocks: blocks(&named),
    };
    let json = dir.join("recording.json");
    let bin = dir.join("recording.bin");
    write_json(&json, &header)?;
    write_bytes(&bin, &f64_bytes(named.iter().map(|(_, v)| *v)))?;
    Ok([json, bin])
}

pub fn read_recording(dir: &Path) -> Result<(BoundaryRecording, RecordingHeader)> {
    let json = dir.join("recording.json");
    let h: RecordingHeader = read_json(&json)?;
    if h.format != RECORDING_FORMAT {
        return Err(CliError::format(&json, format!("unknown format {}", h.format)));
    }
    let lens = check_blocks(&json, &h.blocks, &["f0", "f1", "below1", "below2"])?;
    let expect = [h.boundary_nodes.len(), h.top_nodes.len(), h.top_nodes.len(), h.top_nodes.len()];
    if lens.iter().zip(expect).any(|(&l, n)| l != n * h.n_times) {
        return Err(CliError::format(&json, "block lengths do not match the node lists"));
    }
    let mut b = read_f64_blocks(&dir.join("recording.bin"), &lens)?.into_iter();
    let mut next = || b.next().expect("four blocks");
    let rec = BoundaryRecording {
        omega: h.omega,
        source: h.source,
        dt: h.dt,
        n_times: h.n_times,
        boundary_nodes: h.boundary_nodes.clone(),
        f0: next(),
        top_nodes: h.top_nodes.clone(),
        f1: next(),
        below: [next(), next()],
        clean_until: h.clean_until.clone(),
    };
    Ok((rec, h))
}

pub const CAUCHY_FORMAT: &str = "convexify-cauchy/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CauchyHeader {
    pub format: String,
    pub phantom: Option<String>,
    pub source: [f64; 3],
    pub t1: f64,
    pub n_basis: usize,
    pub omega: Grid3,
    pub n_comp: usize,
    pub boundary_nodes: Vec<usize>,
    pub top_nodes: Vec<usize>,
    pub amplitude_scale: f64,
    pub byte_order: String,
    pub blocks: Vec<Block>,
}

/// Everything `invert` needs besides the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyFile {
    pub data: CauchyProjection,
    pub phantom: Option<String>,
    pub source: [f64; 3],
    pub t1: f64,
    pub n_basis: usize,
}

pub fn write_cauchy(dir: &Path, file: &CauchyFile, arrivals: Option<&PickedArrivals>) -> Result<Vec<PathBuf>> {
    let d = &file.data;
    let named: [(&str, &[f64]); 2] = [("q0", &d.q0), ("q1", &d.q1)];
    let header = CauchyHeader {
        format: CAUCHY_FORMAT.into(),
        phantom: file.phantom.clone(),
        source: file.source,
        t1: file.t1,
        n_basis: file.n_basis,
        omega: d.omega,
        n_comp: d.n_comp,
        boundary_nodes: d.boundary_nodes.clone(),
        top_nodes: d.top_nodes.clone(),
        amplitude_scale: d.amplitude_scale,
        byte_order: BYTE_ORDER.into(),
        blocks: blocks(&named),
    };
    let json = dir.join("cauchy.json");
    let bin = dir.join("cauchy.bin");
    write_json(&json, &header)?;
    write_bytes(&bin, &f64_bytes(named.iter().map(|(_, v)| *v)))?;
    let mut out = vec![json, bin];
    if let Some(a) = arrivals {
        let p = dir.join("arrivals.json");
        write_json(&p, a)?;
        out.push(p);
    }
    Ok(out)
}

pub fn read_cauchy(dir: &Path) -> Result<CauchyFile> {
    let json = dir.join("cauchy.json");
    let h: CauchyHeader = read_json(&json)?;
    if h.format != CAUCHY_FORMAT {
        return Err(CliError::format(&json, format!("unknown format {}", h.format)));
    }
    if h.n_comp != h.n_basis + 1 {
        return Err(CliError::format(&json, "n_comp must be n_basis + 1"));
    }
    let lens = check_blocks(&json, &h.blocks, &["q0", "q1"])?;
    if lens[0] != h.n_comp * h.boundary_nodes.len() || lens[1] != h.n_comp * h.top_nodes.len() {
        return Err(CliError::format(&json, "block lengths do not match the node lists"));
    }
    let mut b = read_f64_blocks(&dir.join("cauchy.bin"), &lens)?.into_iter();
    let data = CauchyProjection {
        omega: h.omega,
        n_comp: h.n_comp,
        boundary_nodes: h.boundary_nodes,
        q0: b.next().expect("q0"),
        top_nodes: h.top_nodes,
        q1: b.next().expect("q1"),
        amplitude_scale: h.amplitude_scale,
    };
    Ok(CauchyFile { data, phantom: h.phantom, source: h.source, t1: h.t1, n_basis: h.n_basis })
}

pub const TRACE_COLUMNS: &str = "level,iteration,J,grad_norm,step,margin";

pub fn trace_csv(trace: &RunTrace) -> String {
    let mut s = String::from(TRACE_COLUMNS);
    s.push('\n');
    for r in &trace.iterations {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.level, r.iter, r.j, r.grad_norm, r.step, r.margin);
    }
    s
}

/// A mid-plane of a field as rows of values, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub name: &'static str,
    pub rows: Vec<Vec<f64>>,
}

/// The planes `y = mid` (x across, z down), `x = mid` (y across, z down) and
/// `z = mid` (x across, y down).
pub fn mid_slices(f: &ScalarField) -> [Slice; 3] {
    let g = f.grid();
    let [nx, ny, nz] = g.dims;
    let xz = (0..nz).rev().map(|k| (0..nx).map(|i| f.at(i, ny / 2, k)).collect()).collect();
    let yz = (0..nz).rev().map(|k| (0..ny).map(|j| f.at(nx / 2, j, k)).collect()).collect();
    let xy = (0..ny).rev().map(|j| (0..nx).map(|i| f.at(i, j, nz / 2)).collect()).collect();
    [Slice { name: "xz", rows: xz }, Slice { name: "yz", rows: yz }, Slice { name: "xy", rows: xy }]
}

pub fn slice_csv(s: &Slice) -> String {
    let mut out = String::new();
    for row in &s.rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Binary 8-bit PGM, `lo` black and `hi` white; the range is kept in a
/// header comment.
pub fn slice_pgm(s: &Slice, lo: f64, hi: f64) -> Vec<u8> {
    let h = s.rows.len();
    let w = s.rows.first().map_or(0, Vec::len);
    let mut out = format!("P5\n# range {lo} {hi}\n{w} {h}\n255\n").into_bytes();
    let span = if hi > lo { hi - lo } else { 1.0 };
    for row in &s.rows {
        out.extend(row.iter().map(|v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    out
}

/// Writes CSV and PGM files for the three mid-planes.
pub fn write_slices(dir: &Path, stem: &str, f: &ScalarField, range: (f64, f64), pgm: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for s in mid_slices(f) {
        let csv = dir.join(format!("{stem}_{}.csv", s.name));
        write_bytes(&csv, slice_csv(&s).as_bytes())?;
        out.push(csv);
        if pgm {
            let p = dir.join(format!("{stem}_{}.pgm", s.name));
            write_bytes(&p, &slice_pgm(&s, range.0, range.1))?;
            out.push(p);
        }
    }
    Ok(out)
}
