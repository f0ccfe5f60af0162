//! Matrix file formats.
//!
//! PDN1 is a little-endian binary layout:
//!
//! ```text
//! magic  "PDNMF\0v1"   8 bytes
//! kind   u8            0 = dense, 1 = CSR
//! dtype  u8            0 = f64
//! rows   u64
//! cols   u64
//! dense: rows*cols f64, row-major
//! CSR:   nnz u64, row_ptr (rows+1) u64, col_idx nnz u64, values nnz f64
//! ```
//!
//! Matrix Market (`.mtx`) is supported for interchange: `coordinate` files map
//! to CSR, `array` files to dense.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

use super::{CsrMatrix, DenseMatrix, Matrix, MatrixRef, Storage};

pub const PDN1_MAGIC: &[u8; 8] = b"PDNMF\x00v1";
pub const PDN1_HEADER_LEN: u64 = 26;
const KIND_DENSE: u8 = 0;
const KIND_CSR: u8 = 1;
const DTYPE_F64: u8 = 0;

/// Writes a matrix (or window) as PDN1.
pub fn write_pdn1_to<W: Write>(out: &mut W, a: MatrixRef<'_>) -> Result<()> {
    out.write_all(PDN1_MAGIC)?;
    let kind = if a.is_sparse() { KIND_CSR } else { KIND_DENSE };
    out.write_all(&[kind, DTYPE_F64])?;
    out.write_all(&(a.nrows() as u64).to_le_bytes())?;
    out.write_all(&(a.ncols() as u64).to_le_bytes())?;
    match a.storage() {
        Storage::Dense(_) => {
            for i in 0..a.nrows() {
                let mut buf = Vec::with_capacity(a.ncols() * 8);
                a.for_each_in_row(i, |_, v| buf.extend_from_slice(&v.to_le_bytes()));
                out.write_all(&buf)?;
            }
        }
        Storage::Sparse(_) => {
            let owned = match a.to_owned_matrix() {
                Matrix::Sparse(s) => s,
                Matrix::Dense(_) => unreachable!(),
            };
            out.write_all(&(owned.nnz() as u64).to_le_bytes())?;
            for &p in owned.row_ptr() {
                out.write_all(&(p as u64).to_le_bytes())?;
            }
            for &c in owned.col_idx() {
                out.write_all(&(c as u64).to_le_bytes())?;
            }
            for &v in owned.values() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn write_pdn1(path: impl AsRef<Path>, a: MatrixRef<'_>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pdn1_to(&mut w, a)?;
    w.flush()?;
    Ok(())
}

pub fn read_pdn1(path: impl AsRef<Path>) -> Result<Matrix> {
    let mut r = Pdn1Reader::open(path)?;
    let (rows, cols) = r.shape();
    r.read_window(0..rows, 0..cols)
}

fn read_u64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<u64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Random-access reader for PDN1 files. Keeps only the CSR row pointer in
/// memory; payload windows are read on demand.
#[derive(Debug)]
pub struct Pdn1Reader {
    file: File,
    rows: usize,
    cols: usize,
    sparse: bool,
    row_ptr: Vec<u64>,
    bytes_read: u64,
}

impl Pdn1Reader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = File::open(path)?;
        let mut header = [0u8; PDN1_HEADER_LEN as usize];
        file.read_exact(&mut header).map_err(|e| {
            Error::Format(format!("{}: truncated PDN1 header ({e})", path.display()))
        })?;
        if &header[..8] != PDN1_MAGIC {
            return Err(Error::Format(format!("{}: bad PDN1 magic", path.display())));
        }
        let kind = header[8];
        if header[9] != DTYPE_F64 {
            return Err(Error::Format(format!("unsupported dtype {}", header[9])));
        }
        let rows = u64::from_le_bytes(header[10..18].try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(header[18..26].try_into().unwrap()) as usize;
        let file_len = file.metadata()?.len();
        let (sparse, row_ptr) = match kind {
            KIND_DENSE => {
                let need = PDN1_HEADER_LEN + (rows * cols * 8) as u64;
                if file_len < need {
                    return Err(Error::Format(format!(
                        "dense payload truncated: {file_len} < {need} bytes"
                    )));
                }
                (false, Vec::new())
            }
            KIND_CSR => {
                let nnz = read_u64s(&mut file, 1)?[0] as usize;
                let row_ptr = read_u64s(&mut file, rows + 1)?;
                let need = PDN1_HEADER_LEN + 8 + ((rows + 1) * 8 + nnz * 16) as u64;
                if file_len < need {
                    return Err(Error::Format(format!(
                        "CSR payload truncated: {file_len} < {need} bytes"
                    )));
                }
                if row_ptr[0] != 0
                    || row_ptr[rows] as usize != nnz
                    || row_ptr.windows(2).any(|w| w[0] > w[1])
                {
                    return Err(Error::Format("invalid CSR row_ptr".into()));
                }
                (true, row_ptr)
            }
            k => return Err(Error::Format(format!("unknown matrix kind {k}"))),
        };
        Ok(Self {
            file,
            rows,
            cols,
            sparse,
            row_ptr,
            bytes_read: 0,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_sparse(&self) -> bool {
        self.sparse
    }

    pub fn nnz(&self) -> usize {
        self.row_ptr.last().map_or(self.rows * self.cols, |&n| n as usize)
    }

    /// Stored entries in rows `rows`, across all columns.
    pub fn nnz_rows(&self, rows: &Range<usize>) -> usize {
        if self.sparse {
            (self.row_ptr[rows.end] - self.row_ptr[rows.start]) as usize
        } else {
            rows.len() * self.cols
        }
    }

    /// Payload bytes read so far.
    pub fn bytes_read(&self) -> u64 {
        self.bytes_read
    }

    /// Stored entries inside a window. For CSR this streams the column
    /// indices of the row range in fixed-size chunks; values are not read.
    pub fn count_window(&mut self, rows: Range<usize>, cols: Range<usize>) -> Result<usize> {
        if rows.start > rows.end || cols.start > cols.end || rows.end > self.rows || cols.end > self.cols {
            return Err(Error::WindowOutOfBounds {
                rows,
                cols,
                shape_rows: self.rows,
                shape_cols: self.cols,
            });
        }
        if !self.sparse {
            return Ok(rows.len() * cols.len());
        }
        const CHUNK: usize = 1 << 16;
        let base = PDN1_HEADER_LEN + 8 + (self.rows as u64 + 1) * 8;
        let (s, e) = (self.row_ptr[rows.start], self.row_ptr[rows.end]);
        self.file.seek(SeekFrom::Start(base + s * 8))?;
        let mut left = (e - s) as usize;
        let mut n = 0;
        while left > 0 {
            let take = left.min(CHUNK);
            n += read_u64s(&mut self.file, take)?
                .iter()
                .filter(|&&c| cols.contains(&(c as usize)))
                .count();
            self.bytes_read += (take * 8) as u64;
            left -= take;
        }
        Ok(n)
    }

    /// Reads a window. Dense windows are read row by row; CSR windows read
    /// the row range and keep the entries inside `cols`.
    pub fn read_window(&mut self, rows: Range<usize>, cols: Range<usize>) -> Result<Matrix> {
        if rows.start > rows.end || cols.start > cols.end || rows.end > self.rows || cols.end > self.cols {
            return Err(Error::WindowOutOfBounds {
                rows,
                cols,
                shape_rows: self.rows,
                shape_cols: self.cols,
            });
        }
        if !self.sparse {
            let w = cols.len();
            let mut data = Vec::with_capacity(rows.len() * w);
            if w == self.cols {
                let off = PDN1_HEADER_LEN + (rows.start * self.cols * 8) as u64;
                self.file.seek(SeekFrom::Start(off))?;
                data = read_f64s(&mut self.file, rows.len() * w)?;
            } else {
                for i in rows.clone() {
                    let off = PDN1_HEADER_LEN + ((i * self.cols + cols.start) * 8) as u64;
                    self.file.seek(SeekFrom::Start(off))?;
                    data.extend(read_f64s(&mut self.file, w)?);
                }
            }
            self.bytes_read += (data.len() * 8) as u64;
            return Ok(Matrix::Dense(DenseMatrix::new(rows.len(), w, data)?));
        }
        let nnz = self.nnz() as u64;
        let base = PDN1_HEADER_LEN + 8 + (self.rows as u64 + 1) * 8;
        let (s, e) = (self.row_ptr[rows.start], self.row_ptr[rows.end]);
        let count = (e - s) as usize;
        self.file.seek(SeekFrom::Start(base + s * 8))?;
        let col_idx = read_u64s(&mut self.file, count)?;
        self.file.seek(SeekFrom::Start(base + nnz * 8 + s * 8))?;
        let values = read_f64s(&mut self.file, count)?;
        self.bytes_read += (count * 16) as u64;

        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut out_cols = Vec::new();
        let mut out_vals = Vec::new();
        row_ptr.push(0);
        for i in rows.clone() {
            let a = (self.row_ptr[i] - s) as usize;
            let b = (self.row_ptr[i + 1] - s) as usize;
            for t in a..b {
                let c = col_idx[t] as usize;
                if cols.contains(&c) {
                    out_cols.push(c - cols.start);
                    out_vals.push(values[t]);
                }
            }
            row_ptr.push(out_vals.len());
        }
        let m = CsrMatrix::new(rows.len(), cols.len(), row_ptr, out_cols, out_vals)
            .map_err(|e| Error::Format(format!("corrupt CSR payload: {e}")))?;
        Ok(Matrix::Sparse(m))
    }
}

/// Writes Matrix Market: `coordinate real general` for CSR, `array real general` for dense.
pub fn write_mtx_to<W: Write>(out: &mut W, a: MatrixRef<'_>) -> Result<()> {
    if a.is_sparse() {
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "{} {} {}", a.nrows(), a.ncols(), a.stored())?;
        for i in 0..a.nrows() {
            let mut err = Ok(());
            a.for_each_in_row(i, |j, v| {
                if err.is_ok() {
                    err = writeln!(out, "{} {} {}", i + 1, j + 1, v);
                }
            });
            err?;
        }
    } else {
        writeln!(out, "%%MatrixMarket matrix array real general")?;
        writeln!(out, "{} {}", a.nrows(), a.ncols())?;
        // array format is column-major
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                writeln!(out, "{}", a.get(i, j))?;
            }
        }
    }
    Ok(())
}

pub fn write_mtx(path: impl AsRef<Path>, a: MatrixRef<'_>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mtx_to(&mut w, a)?;
    w.flush()?;
    Ok(())
}

pub fn read_mtx(path: impl AsRef<Path>) -> Result<Matrix> {
    read_mtx_from(BufReader::new(File::open(path)?))
}

pub fn read_mtx_from<R: BufRead>(input: R) -> Result<Matrix> {
    let mut lines = input.lines();
    let banner = lines
        .next()
        .ok_or_else(|| Error::Format("empty Matrix Market file".into()))??;
    let fields: Vec<String> = banner.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
    if fields.len() < 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(Error::Format(format!("bad Matrix Market banner: {banner}")));
    }
    let layout = fields[2].as_str();
    let field = fields[3].as_str();
    let symmetry = fields[4].as_str();
    if !matches!(field, "real" | "integer" | "pattern" | "double") {
        return Err(Error::Format(format!("unsupported field type {field}")));
    }
    if !matches!(symmetry, "general" | "symmetric") {
        return Err(Error::Format(format!("unsupported symmetry {symmetry}")));
    }
    let mut body = lines.filter(|l| match l {
        Ok(s) => {
            let t = s.trim();
            !t.is_empty() && !t.starts_with('%')
        }
        Err(_) => true,
    });
    let size_line = body
        .next()
        .ok_or_else(|| Error::Format("missing size line".into()))??;
    let dims: Vec<usize> = size_line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Format(format!("bad size line: {size_line}"))))
        .collect::<Result<_>>()?;
    let parse_f = |t: &str| -> Result<f64> {
        t.parse::<f64>()
            .map_err(|_| Error::Format(format!("bad value {t}")))
    };
    match layout {
        "coordinate" => {
            if dims.len() != 3 {
                return Err(Error::Format(format!("bad coordinate size line: {size_line}")));
            }
            let (rows, cols, nnz) = (dims[0], dims[1], dims[2]);
            let mut trips = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                let line = body
                    .next()
                    .ok_or_else(|| Error::Format("fewer entries than declared".into()))??;
                let t: Vec<&str> = line.split_whitespace().collect();
                if t.len() < 2 {
                    return Err(Error::Format(format!("bad entry line: {line}")));
                }
                let i: usize = t[0].parse().map_err(|_| Error::Format(format!("bad row in {line}")))?;
                let j: usize = t[1].parse().map_err(|_| Error::Format(format!("bad col in {line}")))?;
                if i == 0 || j == 0 {
                    return Err(Error::Format("Matrix Market indices are 1-based".into()));
                }
                let v = if field == "pattern" {
                    1.0
                } else {
                    parse_f(t.get(2).ok_or_else(|| Error::Format(format!("missing value in {line}")))?)?
                };
                trips.push((i - 1, j - 1, v));
                if symmetry == "symmetric" && i != j {
                    trips.push((j - 1, i - 1, v));
                }
            }
            Ok(Matrix::Sparse(CsrMatrix::from_triplets(rows, cols, trips)?))
        }
        "array" => {
            if dims.len() != 2 {
                return Err(Error::Format(format!("bad array size line: {size_line}")));
            }
            let (rows, cols) = (dims[0], dims[1]);
            let mut d = DenseMatrix::zeros(rows, cols);
            for j in 0..cols {
                let start = if symmetry == "symmetric" { j } else { 0 };
                for i in start..rows {
                    let line = body
                        .next()
                        .ok_or_else(|| Error::Format("fewer values than declared".into()))??;
                    let v = parse_f(line.trim())?;
                    d.set(i, j, v);
                    if symmetry == "symmetric" {
                        d.set(j, i, v);
                    }
                }
            }
            Ok(Matrix::Dense(d))
        }
        other => Err(Error::Format(format!("unsupported layout {other}"))),
    }
}

/// Reads PDN1 or Matrix Market, chosen by extension (`.mtx`) or magic.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx")) {
        read_mtx(path)
    } else {
        read_pdn1(path)
    }
}

/// Writes PDN1 or Matrix Market by extension.
pub fn write_matrix(path: impl AsRef<Path>, a: MatrixRef<'_>) -> Result<()> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx")) {
        write_mtx(path, a)
    } else {
        write_pdn1(path, a)
    }
}
