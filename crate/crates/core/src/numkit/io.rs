//! Real matrix serialization.
//!
//! * CSV: one row per line, comma separated, `.` decimal point, shortest
//!   round-trip rendering of each `f64`.
//! * Binary: 8-byte header (`rows: u32 LE`, `cols: u32 LE`) followed by
//!   `rows * cols` little-endian `f64` values in row-major order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub fn write_csv<W: Write>(m: &Matrix, mut w: W) -> Result<()> {
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|x| format_f64(*x)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Matrix> {
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: `{tok}`: {e}", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

pub fn write_binary<W: Write>(m: &Matrix, mut w: W) -> Result<()> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::param("rows", "exceeds u32"))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::param("cols", "exceeds u32"))?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for x in m.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Matrix> {
    let mut header = [0u8; 8];
    r.read_exact(&mut header)?;
    let rows = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() != rows * cols * 8 {
        return Err(Error::Parse(format!(
            "binary matrix {rows}x{cols} needs {} payload bytes, found {}",
            rows * cols * 8,
            buf.len()
        )));
    }
    let data = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::new(rows, cols, data)
}

pub fn save_csv(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(m, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    read_csv(fs::File::open(path)?)
}

pub fn save_binary(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + m.data().len() * 8);
    write_binary(m, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<Matrix> {
    read_binary(fs::File::open(path)?)
}

/// Shortest decimal that parses back to the same bits. Never locale dependent.
pub fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_layout() {
        let m = Matrix::new(2, 2, vec![1.0, -0.5, 1e-300, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_csv(&m, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1.0,-0.5\n1e-300,3.0\n");
    }

    #[test]
    fn binary_header_is_eight_bytes() {
        let m = Matrix::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_binary(&m, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 24);
        assert_eq!(&buf[0..8], &[1, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&buf[8..16], &1.0f64.to_le_bytes());
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let buf = [2u8, 0, 0, 0, 2, 0, 0, 0, 0, 0];
        assert!(read_binary(&buf[..]).is_err());
    }

    #[test]
    fn ragged_csv_is_rejected() {
        assert!(read_csv("1,2\n3\n".as_bytes()).is_err());
    }

    fn finite() -> impl Strategy<Value = f64> {
        any::<f64>().prop_filter("finite", |x| x.is_finite())
    }

    proptest! {
        #[test]
        fn both_formats_are_bit_exact(rows in 1usize..5, cols in 1usize..5, seed in prop::collection::vec(finite(), 25)) {
            let m = Matrix::new(rows, cols, seed[..rows * cols].to_vec()).unwrap();
            let mut csv = Vec::new();
            write_csv(&m, &mut csv).unwrap();
            let back = read_csv(&csv[..]).unwrap();
            prop_assert!(back.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits()));

            let mut bin = Vec::new();
            write_binary(&m, &mut bin).unwrap();
            let back = read_binary(&bin[..]).unwrap();
            prop_assert!(back.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
