//! Delimiter-separated file formats with `#` comment headers.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back reproduces the values bit for bit, and identical inputs give
//! byte-identical files. Headers never contain timestamps or paths.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{OriginCurveData, OriginPoint};
use crate::error::{Error, Result};
use crate::modes::{KernelMatrix, ModeSolution, TimeGrid};
use crate::sampler::{DatasetMeta, QuadratureDataset};
use crate::tomography::WignerGrid;
use crate::VERSION;

/// Short SHA-256 fingerprint of the JSON serialization of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}

/// Standard header: tool version, content kind and key-value lines.
pub fn header(kind: &str, fields: &[(&str, String)]) -> String {
    let mut out = format!("# phsub {VERSION} {kind}\n");
    for (k, v) in fields {
        let _ = writeln!(out, "# {k}={v}");
    }
    out
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_f64(path: &Path, line: usize, field: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("{field}: cannot parse `{}` as a number", s.trim())))
}

/// Dataset file contents: header with seed, config hash and JSON metadata,
/// then `theta,x` rows.
pub fn format_dataset(ds: &QuadratureDataset) -> String {
    let meta = serde_json::to_string(&ds.meta).expect("metadata serializes");
    let mut out = header(
        "quadrature dataset",
        &[
            ("seed", ds.meta.seed.to_string()),
            ("count", ds.meta.count.to_string()),
            ("z", ds.meta.z.to_string()),
            ("config_hash", config_hash(&ds.meta.config)),
            ("meta", meta),
        ],
    );
    out.reserve(ds.records.len() * 40);
    out.push_str("theta,x\n");
    for (t, x) in &ds.records {
        let _ = writeln!(out, "{t},{x}");
    }
    out
}

pub fn write_dataset(ds: &QuadratureDataset, path: &Path) -> Result<()> {
    write_text(path, &format_dataset(ds))
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<QuadratureDataset> {
    let mut meta: Option<DatasetMeta> = None;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(json) = rest.trim().strip_prefix("meta=") {
                meta = Some(
                    serde_json::from_str(json)
                        .map_err(|e| parse_err(path, ln, format!("metadata: {e}")))?,
                );
            }
            continue;
        }
        if line.starts_with("theta") {
            continue;
        }
        let (t, x) = line
            .split_once(',')
            .ok_or_else(|| parse_err(path, ln, "expected `theta,x`"))?;
        records.push((parse_f64(path, ln, "theta", t)?, parse_f64(path, ln, "x", x)?));
    }
    let mut meta = meta.ok_or_else(|| parse_err(path, 1, "missing `# meta=` header line"))?;
    meta.count = records.len();
    let ds = QuadratureDataset { records, meta };
    ds.validate()?;
    Ok(ds)
}

pub fn read_dataset(path: &Path) -> Result<QuadratureDataset> {
    parse_dataset(&read_text(path)?, path)
}

/// `x,p,W` rows after the given header.
pub fn format_wigner_grid(head: &str, grid: &WignerGrid) -> String {
    let mut out = String::with_capacity(head.len() + grid.values.len() * 48);
    out.push_str(head);
    out.push_str("x,p,W\n");
    for (i, x) in grid.x.iter().enumerate() {
        for (j, p) in grid.p.iter().enumerate() {
            let _ = writeln!(out, "{x},{p},{}", grid.at(i, j));
        }
    }
    out
}

/// Two-column series with a column header.
pub fn format_series(head: &str, columns: (&str, &str), rows: &[(f64, f64)]) -> String {
    let mut out = String::from(head);
    let _ = writeln!(out, "{},{}", columns.0, columns.1);
    for (a, b) in rows {
        let _ = writeln!(out, "{a},{b}");
    }
    out
}

/// JSON header line describing a time-grid matrix file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub kind: String,
    pub grid: TimeGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta0: Option<f64>,
    pub version: String,
}

/// Mode file: JSON header, eigenvalue comment, then rows
/// `t,re_0,im_0,re_1,im_1,...`.
pub fn format_modes(sol: &ModeSolution, grid: &TimeGrid, zeta0: Option<f64>, provenance: &str) -> String {
    let head = MatrixHeader {
        kind: format!("modes:{provenance}"),
        grid: *grid,
        zeta0,
        version: VERSION.to_string(),
    };
    let mut out = format!("# {}\n", serde_json::to_string(&head).expect("header serializes"));
    let eig: Vec<String> = sol.eigenvalues.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(out, "# eigenvalues={}", eig.join(","));
    out.push('t');
    for k in 0..sol.modes.len() {
        let _ = write!(out, ",re_{k},im_{k}");
    }
    out.push('\n');
    for (i, t) in grid.times().iter().enumerate() {
        let _ = write!(out, "{t}");
        for m in &sol.modes {
            let v = m.values[i];
            let _ = write!(out, ",{},{}", v.re, v.im);
        }
        out.push('\n');
    }
    out
}

/// Kernel file: JSON header then `n` rows of `re,im` pairs.
pub fn format_kernel(h: &KernelMatrix, zeta0: Option<f64>, provenance: &str) -> String {
    let head = MatrixHeader {
        kind: format!("kernel:{provenance}"),
        grid: h.grid,
        zeta0,
        version: VERSION.to_string(),
    };
    let mut out = format!("# {}\n", serde_json::to_string(&head).expect("header serializes"));
    let n = h.grid.n;
    for i in 0..n {
        for j in 0..n {
            let v = h.entries[(i, j)];
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{},{}", v.re, v.im);
        }
        out.push('\n');
    }
    out
}

pub fn read_kernel(path: &Path) -> Result<KernelMatrix> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty kernel file"))?;
    let json = first
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| parse_err(path, 1, "expected a `# {json}` header line"))?;
    let head: MatrixHeader =
        serde_json::from_str(json.trim()).map_err(|e| parse_err(path, 1, format!("header: {e}")))?;
    let grid = TimeGrid::new(head.grid.t0, head.grid.dt, head.grid.n)?;
    let n = grid.n;
    let mut entries = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut row = 0;
    for (i, line) in lines {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if row >= n {
            return Err(parse_err(path, ln, format!("more than {n} kernel rows")));
        }
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != 2 * n {
            return Err(parse_err(
                path,
                ln,
                format!("expected {} values, found {}", 2 * n, vals.len()),
            ));
        }
        for j in 0..n {
            let re = parse_f64(path, ln, "re", vals[2 * j])?;
            let im = parse_f64(path, ln, "im", vals[2 * j + 1])?;
            entries[(row, j)] = Complex64::new(re, im);
        }
        row += 1;
    }
    if row != n {
        return Err(parse_err(path, text.lines().count(), format!("found {row} of {n} kernel rows")));
    }
    KernelMatrix::new(grid, entries)
}

/// Parses `tap,z,w00[,sigma]` rows. A missing `sigma` column means unit
/// weight. An optional header row starting with `tap` is skipped.
pub fn parse_origin_data(text: &str, path: &Path) -> Result<OriginCurveData> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("tap") {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 && cols.len() != 4 {
            return Err(parse_err(
                path,
                ln,
                format!("expected `tap,z,w00,sigma`, found {} columns", cols.len()),
            ));
        }
        let sigma = match cols.get(3) {
            Some(s) => parse_f64(path, ln, "sigma", s)?,
            None => 1.0,
        };
        let point = OriginPoint {
            tap: parse_f64(path, ln, "tap", cols[0])?,
            z: parse_f64(path, ln, "z", cols[1])?,
            w00: parse_f64(path, ln, "w00", cols[2])?,
            sigma,
        };
        OriginCurveData::new(vec![point]).map_err(|e| parse_err(path, ln, e.to_string()))?;
        points.push(point);
    }
    if points.is_empty() {
        return Err(Error::Usage(format!("{} contains no data rows", path.display())));
    }
    OriginCurveData::new(points)
}

pub fn read_origin_data(path: &Path) -> Result<OriginCurveData> {
    parse_origin_data(&read_text(path)?, path)
}

pub fn format_origin_data(data: &OriginCurveData) -> String {
    let mut out = header("origin curve data", &[]);
    out.push_str("tap,z,w00,sigma\n");
    for p in &data.points {
        let _ = writeln!(out, "{},{},{},{}", p.tap, p.z, p.w00, p.sigma);
    }
    out
}
