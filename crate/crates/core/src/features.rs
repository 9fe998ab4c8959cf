//! Feature containers and the on-disk formats shared with feature extractors.
//!
//! Two formats are supported:
//!
//! * `FEAT` binary: `"FEAT"`, version `u32` (= 1), rows `u64`, dims `u64`, then
//!   `rows` length-prefixed (`u32`) UTF-8 ids, then `rows * dims` `f32` values in
//!   row-major order. All integers and floats are little-endian.
//! * CSV: header `id,x0,...,x{D-1}` followed by one row per sample. Values are
//!   printed with 17 significant digits.
//!
//! Values are held as `f64` in memory. The binary payload is single precision,
//! so a binary load/save cycle is the identity, while saving an arbitrary `f64`
//! matrix to binary rounds each value to the nearest `f32`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const FEAT_MAGIC: &[u8; 4] = b"FEAT";
pub const FEAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Binary,
    Csv,
}

impl FromStr for FeatureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "feat" => Ok(FeatureFormat::Binary),
            "csv" => Ok(FeatureFormat::Csv),
            other => Err(Error::InvalidParameter(format!("unknown feature format {other:?}"))),
        }
    }
}

impl fmt::Display for FeatureFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureFormat::Binary => f.write_str("binary"),
            FeatureFormat::Csv => f.write_str("csv"),
        }
    }
}

/// `rows × dims` matrix of finite feature values, one distinct id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    data: Vec<f64>,
    rows: usize,
    dims: usize,
}

/// Id used when a source provides none for row `index`.
pub fn synthetic_id(index: usize) -> String {
    format!("row-{index}")
}

impl FeatureMatrix {
    /// Builds a matrix from row-major `data`, validating every invariant.
    pub fn new(ids: Vec<String>, data: Vec<f64>, dims: usize) -> Result<Self> {
        if dims == 0 {
            return Err(Error::format(None, "dims must be at least 1"));
        }
        let rows = ids.len();
        if rows == 0 {
            return Err(Error::format(None, "matrix must have at least one row"));
        }
        if data.len() != rows * dims {
            return Err(Error::DimensionMismatch {
                expected: rows * dims,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dims,
                col: pos % dims,
            });
        }
        let mut seen = HashSet::with_capacity(rows);
        for (row, id) in ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId {
                    row,
                    id: id.clone(),
                });
            }
        }
        Ok(Self {
            ids,
            data,
            rows,
            dims,
        })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dims = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dims);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dims {
                return Err(Error::format(
                    Some(i),
                    format!("expected {dims} values, found {}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        if ids.len() != rows.len() {
            return Err(Error::format(
                None,
                format!("{} ids for {} rows", ids.len(), rows.len()),
            ));
        }
        Self::new(ids, data, dims)
    }

    /// Like [`FeatureMatrix::from_rows`], with `row-<index>` ids.
    pub fn from_rows_anonymous(rows: &[Vec<f64>]) -> Result<Self> {
        let ids = (0..rows.len()).map(synthetic_id).collect();
        Self::from_rows(ids, rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Row-major values.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.dims))
    }

    pub fn load(path: impl AsRef<Path>, format: FeatureFormat) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        match format {
            FeatureFormat::Binary => Self::from_feat_bytes(&bytes),
            FeatureFormat::Csv => {
                let text = String::from_utf8(bytes)
                    .map_err(|_| Error::format(None, "CSV input is not valid UTF-8"))?;
                Self::from_csv_str(&text)
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, format: FeatureFormat) -> Result<()> {
        let path = path.as_ref();
        let bytes = match format {
            FeatureFormat::Binary => self.to_feat_bytes()?,
            FeatureFormat::Csv => self.to_csv_string()?.into_bytes(),
        };
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn to_feat_bytes(&self) -> Result<Vec<u8>> {
        let id_bytes: usize = self.ids.iter().map(|id| 4 + id.len()).sum();
        let mut out = Vec::with_capacity(24 + id_bytes + 4 * self.data.len());
        out.extend_from_slice(FEAT_MAGIC);
        out.extend_from_slice(&FEAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.dims as u64).to_le_bytes());
        for id in &self.ids {
            let len = u32::try_from(id.len())
                .map_err(|_| Error::InvalidParameter(format!("id too long: {} bytes", id.len())))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for (pos, &v) in self.data.iter().enumerate() {
            let single = v as f32;
            if !single.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "value {v} at row {}, column {} overflows single precision",
                    pos / self.dims,
                    pos % self.dims
                )));
            }
            out.extend_from_slice(&single.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_feat_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != FEAT_MAGIC {
            return Err(Error::format(None, "bad magic, expected \"FEAT\""));
        }
        let version = cur.u32("version")?;
        if version != FEAT_VERSION {
            return Err(Error::format(None, format!("unsupported FEAT version {version}")));
        }
        let rows = cur.u64("rows")?;
        let dims = cur.u64("dims")?;
        if rows == 0 || dims == 0 {
            return Err(Error::format(
                None,
                format!("header declares rows={rows}, dims={dims}; both must be at least 1"),
            ));
        }
        let rows = usize::try_from(rows).map_err(|_| Error::format(None, "rows too large"))?;
        let dims = usize::try_from(dims).map_err(|_| Error::format(None, "dims too large"))?;
        let values = rows
            .checked_mul(dims)
            .ok_or_else(|| Error::format(None, "rows * dims overflows"))?;

        let mut ids = Vec::with_capacity(rows.min(1 << 20));
        for row in 0..rows {
            let len = cur.u32(&format!("id length of row {row}"))? as usize;
            let raw = cur.take(len, &format!("id of row {row}"))?;
            let id = std::str::from_utf8(raw)
                .map_err(|_| Error::format(Some(row), "id is not valid UTF-8"))?;
            ids.push(if id.is_empty() {
                synthetic_id(row)
            } else {
                id.to_owned()
            });
        }

        let remaining = bytes.len() - cur.pos;
        let needed = values
            .checked_mul(4)
            .ok_or_else(|| Error::format(None, "payload size overflows"))?;
        if remaining < needed {
            let complete_rows = remaining / 4 / dims;
            return Err(Error::Truncated(format!(
                "header declares {rows} rows of {dims} values but payload ends in row {complete_rows}"
            )));
        }
        if remaining > needed {
            return Err(Error::format(
                None,
                format!("{} trailing bytes after payload", remaining - needed),
            ));
        }
        let mut data = Vec::with_capacity(values);
        for (pos, chunk) in bytes[cur.pos..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row: pos / dims,
                    col: pos % dims,
                });
            }
            data.push(f64::from(v));
        }
        Self::new(ids, data, dims)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut out = String::from("id");
        for j in 0..self.dims {
            out.push_str(&format!(",x{j}"));
        }
        out.push('\n');
        for (row, (id, values)) in self.iter_rows().enumerate() {
            if id.contains([',', '\n', '\r']) {
                return Err(Error::InvalidParameter(format!(
                    "id {id:?} at row {row} cannot be written as CSV"
                )));
            }
            out.push_str(id);
            for v in values {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses CSV text. A header whose first column is not `id` means the
    /// source has no ids; `row-<index>` ids are synthesized.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::format(None, "missing CSV header"))?;
        let columns: Vec<&str> = header.split(',').map(str::trim).collect();
        let has_ids = columns[0] == "id";
        let dims = if has_ids { columns.len() - 1 } else { columns.len() };
        if dims == 0 {
            return Err(Error::format(None, "CSV header declares no feature columns"));
        }

        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (row, line) in lines.enumerate() {
            let mut fields = line.split(',').map(str::trim);
            let id = if has_ids {
                fields.next().unwrap_or_default().to_owned()
            } else {
                synthetic_id(row)
            };
            let start = data.len();
            for (col, field) in fields.enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::format(Some(row), format!("cannot parse {field:?} in column {col}"))
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFinite { row, col });
                }
                data.push(v);
            }
            let found = data.len() - start;
            if found != dims {
                return Err(Error::format(
                    Some(row),
                    format!("expected {dims} values, found {found}"),
                ));
            }
            ids.push(if id.is_empty() { synthetic_id(row) } else { id });
        }
        Self::new(ids, data, dims)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(format!("file ends while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}
