//! Binary matrix and sparse-operator files. All fields are little-endian.
//!
//! Dense: `"SPLM"`, version, rows, cols (u32 each), then column-major f64.
//! Sparse: `"SPSO"`, version u32, `n̄` u32, nnz u64, then records of
//! `(row, i, j, value)` for quadratic operators or `(row, col, value)` for
//! linear ones.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::lifting::SparseQuadratic;

pub const MATRIX_MAGIC: &[u8; 4] = b"SPLM";
pub const OPERATOR_MAGIC: &[u8; 4] = b"SPSO";
pub const FORMAT_VERSION: u32 = 1;

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r, what)?))
}

fn check_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, "header")?;
    if &b != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = read_u32(r, "header")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

fn to_u32(x: usize, what: &str) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Format(format!("{what} {x} does not fit in u32")))
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after payload".into())),
    }
}

pub fn write_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&to_u32(m.nrows(), "rows")?.to_le_bytes())?;
    w.write_all(&to_u32(m.ncols(), "cols")?.to_le_bytes())?;
    for x in m.as_slice() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<DMatrix<f64>> {
    check_magic(r, MATRIX_MAGIC)?;
    let rows = read_u32(r, "header")? as usize;
    let cols = read_u32(r, "header")? as usize;
    let mut data = Vec::with_capacity(rows.saturating_mul(cols).min(1 << 24));
    for _ in 0..rows * cols {
        data.push(read_f64(r, "payload")?);
    }
    expect_eof(r)?;
    Ok(DMatrix::from_vec(rows, cols, data))
}

pub fn save_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix(&mut BufReader::new(File::open(path)?))
}

pub fn write_quadratic<W: Write>(w: &mut W, b: &SparseQuadratic) -> Result<()> {
    w.write_all(OPERATOR_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&to_u32(b.dim, "dimension")?.to_le_bytes())?;
    w.write_all(&(b.entries.len() as u64).to_le_bytes())?;
    for e in &b.entries {
        for idx in [e.row, e.i, e.j] {
            w.write_all(&to_u32(idx, "index")?.to_le_bytes())?;
        }
        w.write_all(&e.value.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_quadratic<R: Read>(r: &mut R) -> Result<SparseQuadratic> {
    check_magic(r, OPERATOR_MAGIC)?;
    let dim = read_u32(r, "header")? as usize;
    let nnz = read_u64(r, "header")?;
    let mut b = SparseQuadratic::new(dim);
    for _ in 0..nnz {
        let row = read_u32(r, "record")? as usize;
        let i = read_u32(r, "record")? as usize;
        let j = read_u32(r, "record")? as usize;
        b.push(row, i, j, read_f64(r, "record")?);
    }
    expect_eof(r)?;
    b.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(b)
}

pub fn write_linear<W: Write>(w: &mut W, a: &CsrMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Format("linear operators must be square".into()));
    }
    w.write_all(OPERATOR_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&to_u32(a.nrows(), "dimension")?.to_le_bytes())?;
    w.write_all(&(a.nnz() as u64).to_le_bytes())?;
    for (row, col, v) in a.triplet_iter() {
        w.write_all(&to_u32(row, "index")?.to_le_bytes())?;
        w.write_all(&to_u32(col, "index")?.to_le_bytes())?;
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_linear<R: Read>(r: &mut R) -> Result<CsrMatrix<f64>> {
    check_magic(r, OPERATOR_MAGIC)?;
    let dim = read_u32(r, "header")? as usize;
    let nnz = read_u64(r, "header")?;
    let mut coo = CooMatrix::new(dim, dim);
    for _ in 0..nnz {
        let row = read_u32(r, "record")? as usize;
        let col = read_u32(r, "record")? as usize;
        let v = read_f64(r, "record")?;
        if row >= dim || col >= dim {
            return Err(Error::Format(format!("entry ({row}, {col}) outside {dim}×{dim}")));
        }
        coo.push(row, col, v);
    }
    expect_eof(r)?;
    Ok(CsrMatrix::from(&coo))
}

pub fn save_quadratic(path: &Path, b: &SparseQuadratic) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_quadratic(&mut w, b)?;
    w.flush()?;
    Ok(())
}

pub fn load_quadratic(path: &Path) -> Result<SparseQuadratic> {
    read_quadratic(&mut BufReader::new(File::open(path)?))
}

pub fn save_linear(path: &Path, a: &CsrMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_linear(&mut w, a)?;
    w.flush()?;
    Ok(())
}

pub fn load_linear(path: &Path) -> Result<CsrMatrix<f64>> {
    read_linear(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |i, j| (i as f64 + 0.1).sin() * (j as f64 - 2.3).exp())
    }

    #[test]
    fn matrix_round_trip_is_bit_exact() {
        let m = sample(7, 3);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        let back = read_matrix(&mut buf.as_slice()).unwrap();
        assert!(m.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.shape(), (7, 3));
    }

    #[test]
    fn header_is_sixteen_bytes() {
        let mut buf = Vec::new();
        write_matrix(&mut buf, &DMatrix::from_element(2, 2, 1.5)).unwrap();
        assert_eq!(buf.len(), 16 + 4 * 8);
        assert_eq!(&buf[..4], b"SPLM");
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[16..24], &1.5f64.to_le_bytes());
    }

    #[test]
    fn column_major_payload() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert_eq!(&buf[24..32], &3.0f64.to_le_bytes());
    }

    #[test]
    fn malformed_matrix_files() {
        let mut buf = Vec::new();
        write_matrix(&mut buf, &sample(3, 2)).unwrap();
        assert!(matches!(read_matrix(&mut &buf[..buf.len() - 3]), Err(Error::Format(_))));
        assert!(matches!(read_matrix(&mut &buf[..10]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_matrix(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_matrix(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut long = buf;
        long.push(0);
        assert!(matches!(read_matrix(&mut long.as_slice()), Err(Error::Format(_))));
        let nan = DMatrix::from_element(1, 1, f64::NAN);
        assert!(write_matrix(&mut Vec::new(), &nan).is_err());
    }

    #[test]
    fn quadratic_round_trip() {
        let mut b = SparseQuadratic::new(6);
        b.push(0, 1, 2, 0.5);
        b.push(5, 5, 0, -1.25);
        let mut buf = Vec::new();
        write_quadratic(&mut buf, &b).unwrap();
        assert_eq!(buf.len(), 20 + 2 * 20);
        let back = read_quadratic(&mut buf.as_slice()).unwrap();
        assert_eq!(back.entries, b.entries);
        assert_eq!(back.dim, 6);
    }

    #[test]
    fn quadratic_rejects_out_of_range_index() {
        let mut b = SparseQuadratic::new(2);
        b.push(0, 1, 1, 1.0);
        let mut buf = Vec::new();
        write_quadratic(&mut buf, &b).unwrap();
        buf[8..12].copy_from_slice(&1u32.to_le_bytes());
        assert!(read_quadratic(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn linear_round_trip() {
        let mut coo = CooMatrix::new(3, 3);
        coo.push(0, 2, 1.0);
        coo.push(2, 1, -4.0);
        let a = CsrMatrix::from(&coo);
        let mut buf = Vec::new();
        write_linear(&mut buf, &a).unwrap();
        assert_eq!(buf.len(), 20 + 2 * 16);
        let back = read_linear(&mut buf.as_slice()).unwrap();
        assert_eq!(back, a);
    }
}
