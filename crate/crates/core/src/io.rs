//! Matrix ingestion: Matrix Market text files and the GCRS binary format.
//!
//! GCRS layout, little-endian throughout:
//!
//! ```text
//! magic   4 bytes  "GCRS"
//! version u32      1
//! flags   u32      bit0 complex, bit1 single precision, bit2 64-bit columns
//! nrows   u64
//! ncols   u64
//! nnz     u64
//! rowptr  (nrows + 1) x u64
//! col     nnz x (u32 | u64)
//! val     nnz x element
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::index::Gidx;
use crate::scalar::{Real as _, Scalar};
use crate::sellcs::{CrsData, RowSource};

pub const GCRS_MAGIC: &[u8; 4] = b"GCRS";
pub const GCRS_VERSION: u32 = 1;
const FLAG_COMPLEX: u32 = 1;
const FLAG_SINGLE: u32 = 2;
const FLAG_WIDE_COLS: u32 = 4;
const HEADER_BYTES: usize = 4 + 4 + 4 + 3 * 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Real,
    Complex,
    Integer,
    Pattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
    SkewSymmetric,
    Hermitian,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Reads a Matrix Market file (coordinate or array) into CRS. Symmetric,
/// skew-symmetric and Hermitian storage is expanded, duplicates are summed
/// and each row is sorted by column.
pub fn read_matrix_market<S: Scalar>(path: impl AsRef<Path>) -> Result<CrsData<S>> {
    let file = fs::File::open(path)?;
    parse_matrix_market(BufReader::new(file))
}

/// [`read_matrix_market`] over any reader.
pub fn parse_matrix_market<S: Scalar>(reader: impl BufRead) -> Result<CrsData<S>> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, banner) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let banner = banner?;
    let tokens: Vec<String> = banner.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(1, format!("bad banner `{banner}`")));
    }
    let coordinate = match tokens[2].as_str() {
        "coordinate" => true,
        "array" => false,
        f => return Err(parse_err(1, format!("unknown format `{f}`"))),
    };
    let field = match tokens[3].as_str() {
        "real" | "double" => Field::Real,
        "complex" => Field::Complex,
        "integer" => Field::Integer,
        "pattern" if coordinate => Field::Pattern,
        f => return Err(parse_err(1, format!("unsupported field `{f}`"))),
    };
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::SkewSymmetric,
        "hermitian" => Symmetry::Hermitian,
        s => return Err(parse_err(1, format!("unknown symmetry `{s}`"))),
    };
    if field == Field::Complex && !S::VALUE_TYPE.is_complex() {
        return Err(parse_err(1, "complex matrix cannot be read into a real type"));
    }
    if symmetry == Symmetry::Hermitian && field != Field::Complex {
        return Err(parse_err(1, "hermitian symmetry requires a complex field"));
    }

    let mut data = lines.filter_map(|(no, l)| match l {
        Ok(l) => {
            let t = l.trim();
            (!t.is_empty() && !t.starts_with('%')).then(|| Ok((no, t.to_string())))
        }
        Err(e) => Some(Err(e)),
    });
    let (size_line, size) = data.next().ok_or_else(|| parse_err(2, "missing size line"))??;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(size_line, format!("bad size `{t}`"))))
        .collect::<Result<_>>()?;

    let mut entries: Vec<(usize, usize, S)> = Vec::new();
    let (nrows, ncols);
    let value_tokens = match field {
        Field::Complex => 2,
        Field::Pattern => 0,
        _ => 1,
    };
    let parse_value = |no: usize, toks: &[&str]| -> Result<S> {
        let num = |t: &str| t.parse::<f64>().map_err(|_| parse_err(no, format!("bad number `{t}`")));
        Ok(match field {
            Field::Pattern => S::one(),
            Field::Complex => S::from_parts(num(toks[0])?, num(toks[1])?),
            _ => S::from_f64(num(toks[0])?),
        })
    };

    if coordinate {
        if dims.len() != 3 {
            return Err(parse_err(size_line, "coordinate size line needs rows, columns, entries"));
        }
        (nrows, ncols) = (dims[0], dims[1]);
        let nnz = dims[2];
        entries.reserve(nnz);
        for _ in 0..nnz {
            let (no, line) = data.next().ok_or_else(|| parse_err(size_line, format!("expected {nnz} entries")))??;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 2 + value_tokens {
                return Err(parse_err(no, format!("expected {} fields", 2 + value_tokens)));
            }
            let idx = |t: &str, max: usize| -> Result<usize> {
                let v: usize = t.parse().map_err(|_| parse_err(no, format!("bad index `{t}`")))?;
                if v == 0 || v > max {
                    return Err(parse_err(no, format!("index {v} outside 1..={max}")));
                }
                Ok(v - 1)
            };
            let (i, j) = (idx(toks[0], nrows)?, idx(toks[1], ncols)?);
            entries.push((i, j, parse_value(no, &toks[2..])?));
        }
    } else {
        if dims.len() != 2 {
            return Err(parse_err(size_line, "array size line needs rows and columns"));
        }
        (nrows, ncols) = (dims[0], dims[1]);
        // column-major; symmetric variants list only the lower triangle
        for j in 0..ncols {
            let first = match symmetry {
                Symmetry::General => 0,
                Symmetry::SkewSymmetric => j + 1,
                _ => j,
            };
            for i in first..nrows {
                let (no, line) = data.next().ok_or_else(|| parse_err(size_line, "too few array entries"))??;
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() != value_tokens {
                    return Err(parse_err(no, format!("expected {value_tokens} fields")));
                }
                entries.push((i, j, parse_value(no, &toks)?));
            }
        }
    }
    if let Some(extra) = data.next() {
        let (no, _) = extra?;
        return Err(parse_err(no, "trailing data"));
    }
    if symmetry != Symmetry::General && nrows != ncols {
        return Err(parse_err(1, "symmetric storage needs a square matrix"));
    }

    let mut rows: Vec<BTreeMap<usize, S>> = vec![BTreeMap::new(); nrows];
    for (i, j, v) in entries {
        *rows[i].entry(j).or_insert_with(S::zero) += v;
        if i != j {
            let mirrored = match symmetry {
                Symmetry::General => None,
                Symmetry::Symmetric => Some(v),
                Symmetry::SkewSymmetric => Some(-v),
                Symmetry::Hermitian => Some(v.conj()),
            };
            if let Some(m) = mirrored {
                *rows[j].entry(i).or_insert_with(S::zero) += m;
            }
        }
    }
    let mut rowptr = Vec::with_capacity(nrows + 1);
    rowptr.push(0i64);
    let (mut col, mut val) = (Vec::new(), Vec::new());
    for r in rows {
        for (j, v) in r {
            col.push(j as i64);
            val.push(v);
        }
        rowptr.push(col.len() as i64);
    }
    Ok(CrsData { nrows, ncols, rowptr, col, val })
}

/// Writes `crs` as a general coordinate Matrix Market file.
pub fn write_matrix_market<S: Scalar>(path: impl AsRef<Path>, crs: &CrsData<S>) -> Result<()> {
    use std::fmt::Write as _;
    let complex = S::VALUE_TYPE.is_complex();
    let mut s = format!(
        "%%MatrixMarket matrix coordinate {} general\n{} {} {}\n",
        if complex { "complex" } else { "real" },
        crs.nrows,
        crs.ncols,
        crs.nnz()
    );
    for i in 0..crs.nrows {
        for k in crs.row_range(i) {
            let v = crs.val[k];
            if complex {
                writeln!(s, "{} {} {:e} {:e}", i + 1, crs.col[k] + 1, v.re().to_f64(), v.im().to_f64()).unwrap();
            } else {
                writeln!(s, "{} {} {:e}", i + 1, crs.col[k] + 1, v.re().to_f64()).unwrap();
            }
        }
    }
    fs::write(path, s)?;
    Ok(())
}

fn type_flags<S: Scalar>() -> u32 {
    let vt = S::VALUE_TYPE;
    (if vt.is_complex() { FLAG_COMPLEX } else { 0 }) | (if vt.is_single() { FLAG_SINGLE } else { 0 })
}

/// Serializes `crs` in GCRS format with 32-bit or 64-bit column indices.
pub fn encode_binary_crs<S: Scalar>(crs: &CrsData<S>, wide_cols: bool) -> Result<Vec<u8>> {
    crs.validate()?;
    let idx_bytes = if wide_cols { 8 } else { 4 };
    let nnz = crs.nnz();
    let mut out = Vec::with_capacity(HEADER_BYTES + 8 * (crs.nrows + 1) + nnz * (idx_bytes + S::BYTES));
    out.extend_from_slice(GCRS_MAGIC);
    out.extend_from_slice(&GCRS_VERSION.to_le_bytes());
    let flags = type_flags::<S>() | if wide_cols { FLAG_WIDE_COLS } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    for v in [crs.nrows as u64, crs.ncols as u64, nnz as u64] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &p in &crs.rowptr {
        out.extend_from_slice(&(p as u64).to_le_bytes());
    }
    for &c in &crs.col {
        if wide_cols {
            out.extend_from_slice(&(c as u64).to_le_bytes());
        } else {
            let c = u32::try_from(c).map_err(|_| Error::Overflow(c))?;
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for &v in &crs.val {
        v.write_le(&mut out);
    }
    Ok(out)
}

pub fn write_binary_crs<S: Scalar>(path: impl AsRef<Path>, crs: &CrsData<S>, wide_cols: bool) -> Result<()> {
    fs::write(path, encode_binary_crs(crs, wide_cols)?)?;
    Ok(())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

/// Parses GCRS bytes; the element type must match the file's flags.
pub fn decode_binary_crs<S: Scalar>(bytes: &[u8]) -> Result<CrsData<S>> {
    let fmt_err = |m: String| Error::Format(m);
    if bytes.len() < HEADER_BYTES {
        return Err(fmt_err(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != GCRS_MAGIC {
        return Err(fmt_err("bad magic".into()));
    }
    let version = u32_at(bytes, 4);
    if version != GCRS_VERSION {
        return Err(fmt_err(format!("unsupported version {version}")));
    }
    let flags = u32_at(bytes, 8);
    if flags & !(FLAG_COMPLEX | FLAG_SINGLE | FLAG_WIDE_COLS) != 0 {
        return Err(fmt_err(format!("unknown flags {flags:#x}")));
    }
    if flags & (FLAG_COMPLEX | FLAG_SINGLE) != type_flags::<S>() {
        return Err(fmt_err(format!("file flags {flags:#x} do not match element type {:?}", S::VALUE_TYPE)));
    }
    let (nrows, ncols, nnz) = (u64_at(bytes, 12), u64_at(bytes, 20), u64_at(bytes, 28));
    let idx_bytes: u64 = if flags & FLAG_WIDE_COLS != 0 { 8 } else { 4 };
    let expected = (nrows.checked_add(1))
        .and_then(|r| r.checked_mul(8))
        .and_then(|r| nnz.checked_mul(idx_bytes + S::BYTES as u64).and_then(|p| p.checked_add(r)))
        .and_then(|p| p.checked_add(HEADER_BYTES as u64))
        .ok_or_else(|| fmt_err("header counts overflow".into()))?;
    if bytes.len() as u64 != expected {
        return Err(fmt_err(format!("payload is {} bytes, header implies {expected}", bytes.len())));
    }
    let (nrows, ncols, nnz) = (nrows as usize, ncols as usize, nnz as usize);
    let mut at = HEADER_BYTES;
    let mut rowptr = Vec::with_capacity(nrows + 1);
    for _ in 0..=nrows {
        rowptr.push(u64_at(bytes, at) as i64);
        at += 8;
    }
    let mut col = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        col.push(if idx_bytes == 8 { u64_at(bytes, at) as i64 } else { u32_at(bytes, at) as i64 });
        at += idx_bytes as usize;
    }
    let mut val = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        val.push(S::read_le(&bytes[at..]));
        at += S::BYTES;
    }
    if rowptr.last().copied() != Some(nnz as i64) {
        return Err(fmt_err(format!("rowptr ends at {:?}, header says nnz = {nnz}", rowptr.last())));
    }
    CrsData::new(nrows, ncols, rowptr, col, val).map_err(|e| fmt_err(e.to_string()))
}

pub fn read_binary_crs<S: Scalar>(path: impl AsRef<Path>) -> Result<CrsData<S>> {
    decode_binary_crs(&fs::read(path)?)
}

/// Row access to CRS data.
pub struct CrsRows<'a, S> {
    crs: &'a CrsData<S>,
    max_rowlen: usize,
}

pub fn rowsource_from_crs<S: Scalar>(crs: &CrsData<S>) -> CrsRows<'_, S> {
    CrsRows { crs, max_rowlen: crs.max_rowlen() }
}

impl<S: Scalar> RowSource<S> for CrsRows<'_, S> {
    fn nrows(&self) -> usize {
        self.crs.nrows
    }
    fn ncols(&self) -> usize {
        self.crs.ncols
    }
    fn max_rowlen(&self) -> usize {
        self.max_rowlen
    }
    fn row(&self, row: Gidx, cols: &mut Vec<Gidx>, vals: &mut Vec<S>) {
        self.crs.row(row, cols, vals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Complex64;

    fn mm<S: Scalar>(text: &str) -> Result<CrsData<S>> {
        parse_matrix_market(text.as_bytes())
    }

    #[test]
    fn coordinate_general() {
        let a: CrsData<f64> = mm("%%MatrixMarket matrix coordinate real general\n% c\n2 2 2\n1 1 1.0\n2 2 2.0\n").unwrap();
        assert_eq!(a.to_dense(), vec![vec![1.0, 0.0], vec![0.0, 2.0]]);
    }

    #[test]
    fn symmetric_expansion_and_pattern() {
        let a: CrsData<f64> = mm("%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n2 1 5.0\n").unwrap();
        assert_eq!(a.to_dense(), vec![vec![0.0, 5.0], vec![5.0, 0.0]]);
        let p: CrsData<f64> = mm("%%MatrixMarket matrix coordinate pattern general\n2 3 2\n1 3\n2 1\n").unwrap();
        assert_eq!(p.val, vec![1.0, 1.0]);
        let s: CrsData<f64> = mm("%%MatrixMarket matrix coordinate integer skew-symmetric\n2 2 1\n2 1 3\n").unwrap();
        assert_eq!(s.to_dense(), vec![vec![0.0, -3.0], vec![3.0, 0.0]]);
        let h: CrsData<Complex64> =
            mm("%%MatrixMarket matrix coordinate complex hermitian\n2 2 2\n1 1 1 0\n2 1 1 2\n").unwrap();
        assert_eq!(h.to_dense()[0][1], Complex64::new(1.0, -2.0));
    }

    #[test]
    fn array_and_duplicates() {
        let a: CrsData<f64> = mm("%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n").unwrap();
        assert_eq!(a.to_dense(), vec![vec![1.0, 3.0], vec![2.0, 4.0]]);
        let d: CrsData<f64> = mm("%%MatrixMarket matrix coordinate real general\n1 2 3\n1 2 1\n1 1 1\n1 2 1.5\n").unwrap();
        assert_eq!(d.col, vec![0, 1]);
        assert_eq!(d.val, vec![1.0, 2.5]);
    }

    #[test]
    fn malformed() {
        assert!(mm::<f64>("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n").is_err());
        assert!(mm::<f64>("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n").is_err());
        assert!(mm::<f64>("%MatrixMarket matrix coordinate real general\n1 1 0\n").is_err());
        assert!(mm::<f64>("%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 1\n").is_err());
    }

    #[test]
    fn binary_errors() {
        let a = CrsData::<f64>::identity(3);
        let mut b = encode_binary_crs(&a, false).unwrap();
        assert_eq!(decode_binary_crs::<f64>(&b).unwrap(), a);
        assert!(decode_binary_crs::<f32>(&b).is_err());
        b[0] = b'X';
        assert!(matches!(decode_binary_crs::<f64>(&b), Err(Error::Format(_))));
        let mut b = encode_binary_crs(&a, true).unwrap();
        b[28] = 4; // nnz
        assert!(decode_binary_crs::<f64>(&b).is_err());
    }

    #[test]
    fn crs_rows() {
        let a = CrsData::from_triplets(3, 3, &[(0, 0, 1.0), (2, 2, 2.0), (2, 0, 3.0), (2, 1, 4.0)]).unwrap();
        let rs = rowsource_from_crs(&a);
        assert_eq!(rs.max_rowlen(), 3);
        let (mut c, mut v) = (Vec::new(), Vec::new());
        rs.row(1, &mut c, &mut v);
        assert!(c.is_empty());
        rs.row(2, &mut c, &mut v);
        assert_eq!(c, vec![0, 1, 2]);
        assert_eq!(v, vec![3.0, 4.0, 2.0]);
    }
}
