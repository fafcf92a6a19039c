//! File formats: raw column-major f64 matrices with JSON sidecars, and versioned CSV.
//!
//! Every CSV starts with a `# resil-csv v1 <kind>` line; readers reject other versions.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{GenMeta, LabeledDataset};
use crate::resilience::{ProfileMethod, ResilienceProfile};

pub const CSV_SCHEMA_VERSION: u32 = 1;
/// Largest d * n exported as CSV.
pub const CSV_MAX_ENTRIES: usize = 10_000;

/// `<path>` with its extension replaced by `json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn matrix_to_bytes(m: &DMatrix<f64>) -> Vec<u8> {
    m.as_slice().iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn matrix_from_bytes(bytes: &[u8], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if bytes.len() != rows * cols * 8 {
        return Err(Error::Format(format!("expected {} bytes for a {rows} x {cols} matrix, found {}", rows * cols * 8, bytes.len())));
    }
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    Ok(DMatrix::from_vec(rows, cols, vals))
}

pub fn write_matrix_bin(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, matrix_to_bytes(m))?;
    Ok(())
}

pub fn read_matrix_bin(path: &Path, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    matrix_from_bytes(&bytes, rows, cols)
}

/// Bitset with bit i of byte i / 8 holding entry i (least significant bit first).
pub fn encode_mask(mask: &[bool]) -> String {
    let mut bytes = vec![0u8; mask.len().div_ceil(8)];
    for (i, &b) in mask.iter().enumerate() {
        if b {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    STANDARD.encode(bytes)
}

pub fn decode_mask(encoded: &str, len: usize) -> Result<Vec<bool>> {
    let bytes = STANDARD.decode(encoded).map_err(|e| Error::Format(format!("bad mask encoding: {e}")))?;
    if bytes.len() != len.div_ceil(8) {
        return Err(Error::Format("mask length does not match the point count".into()));
    }
    Ok((0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetSidecar {
    rows: usize,
    cols: usize,
    good_mask: String,
    true_center: Vec<f64>,
    meta: GenMeta,
}

/// Writes the matrix to `path` and the sidecar next to it.
pub fn write_dataset(path: &Path, ds: &LabeledDataset) -> Result<()> {
    write_matrix_bin(path, &ds.points)?;
    let side = DatasetSidecar {
        rows: ds.d(),
        cols: ds.n(),
        good_mask: encode_mask(&ds.good_mask),
        true_center: ds.true_center.iter().copied().collect(),
        meta: ds.meta.clone(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)? + "\n")?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    let side: DatasetSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let points = read_matrix_bin(path, side.rows, side.cols)?;
    if side.true_center.len() != side.rows {
        return Err(Error::Format("center length does not match the dimension".into()));
    }
    Ok(LabeledDataset {
        points,
        good_mask: decode_mask(&side.good_mask, side.cols)?,
        true_center: DVector::from_vec(side.true_center),
        meta: side.meta,
    })
}

fn schema_line(kind: &str) -> String {
    format!("# resil-csv v{CSV_SCHEMA_VERSION} {kind}")
}

/// Splits off and checks the schema line, returning the CSV body.
pub fn strip_schema_line(text: &str, kind: &str) -> Result<String> {
    let mut reader = BufReader::new(text.as_bytes());
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let first = first.trim_end();
    let want = schema_line(kind);
    if first != want {
        return Err(Error::Format(format!("expected schema line {want:?}, found {first:?}")));
    }
    let mut rest = String::new();
    reader.read_to_string(&mut rest)?;
    Ok(rest)
}

/// A CSV writer over an in-memory buffer with the schema line already written.
pub fn csv_with_schema(kind: &str) -> Result<csv::Writer<Vec<u8>>> {
    let mut buf = Vec::new();
    writeln!(buf, "{}", schema_line(kind))?;
    Ok(csv::Writer::from_writer(buf))
}

pub fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// One row per point: `good,x0,x1,...`.
pub fn dataset_to_csv(ds: &LabeledDataset) -> Result<String> {
    if ds.d() * ds.n() > CSV_MAX_ENTRIES {
        return Err(Error::InvalidConfig(format!("CSV export is limited to d * n <= {CSV_MAX_ENTRIES}")));
    }
    let mut w = csv_with_schema("dataset")?;
    let mut header = vec!["good".to_string()];
    header.extend((0..ds.d()).map(|r| format!("x{r}")));
    w.write_record(&header)?;
    for (j, col) in ds.points.column_iter().enumerate() {
        let mut rec = vec![u8::from(ds.good_mask[j]).to_string()];
        rec.extend(col.iter().map(|x| format!("{x:?}")));
        w.write_record(&rec)?;
    }
    finish_csv(w)
}

/// Points and mask from a dataset CSV (the center and meta are not stored in CSV).
pub fn dataset_from_csv(text: &str) -> Result<(DMatrix<f64>, Vec<bool>)> {
    let body = strip_schema_line(text, "dataset")?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let d = r.headers()?.len().saturating_sub(1);
    let mut cols = Vec::new();
    let mut mask = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        mask.push(parse_field::<u8>(&rec[0])? == 1);
        for f in rec.iter().skip(1) {
            cols.push(parse_field::<f64>(f)?);
        }
    }
    Ok((DMatrix::from_vec(d, mask.len(), cols), mask))
}

fn parse_field<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Format(format!("cannot parse field {s:?}")))
}

pub fn profile_to_csv(p: &ResilienceProfile) -> Result<String> {
    let mut w = csv_with_schema("profile")?;
    w.write_record(["eps", "sigma", "method", "directions"])?;
    for (e, s) in p.eps_grid.iter().zip(&p.sigma_values) {
        w.write_record([format!("{e:?}"), format!("{s:?}"), p.method.as_str().to_string(), p.directions_used.to_string()])?;
    }
    finish_csv(w)
}

pub fn profile_from_csv(text: &str) -> Result<ResilienceProfile> {
    let body = strip_schema_line(text, "profile")?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    if r.headers()?.iter().collect::<Vec<_>>() != ["eps", "sigma", "method", "directions"] {
        return Err(Error::Format("unexpected profile header".into()));
    }
    let (mut eps, mut sig) = (Vec::new(), Vec::new());
    let mut method = None;
    let mut dirs = 0;
    for rec in r.records() {
        let rec = rec?;
        eps.push(parse_field(&rec[0])?);
        sig.push(parse_field(&rec[1])?);
        method = Some(ProfileMethod::parse(&rec[2])?);
        dirs = parse_field(&rec[3])?;
    }
    let method = method.ok_or_else(|| Error::Format("empty profile".into()))?;
    ResilienceProfile::from_values(eps, sig, method, dirs)
}
