//! Named-array checkpoint container.
//!
//! Byte layout:
//!
//! ```text
//! BESIM-CKPT v1\n
//! <name> <rows> <cols>\n          (ASCII, single spaces, name has no whitespace)
//! <rows*cols little-endian f32>   (row-major, 4 bytes each, no padding)
//! ... repeated for every array, until end of file
//! ```
//!
//! Arrays are stored as `f32` regardless of the in-memory scalar type.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &str = "BESIM-CKPT v1";

pub fn write_checkpoint<W: Write, T: Scalar>(mut w: W, arrays: &[(&str, &Matrix<T>)]) -> Result<()> {
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    for (name, m) in arrays {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::contract(format!("invalid checkpoint array name {name:?}")));
        }
        writeln!(w, "{} {} {}", name, m.rows(), m.cols())?;
        let mut buf = Vec::with_capacity(m.len() * 4);
        for v in m.as_slice() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Vec<(String, Matrix<f32>)>> {
    let mut r = BufReader::new(r);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.strip_suffix(b"\n") != Some(CHECKPOINT_MAGIC.as_bytes()) {
        return Err(Error::data("missing BESIM-CKPT v1 header"));
    }
    let mut out = Vec::new();
    loop {
        line.clear();
        let n = r.read_until(b'\n', &mut line)?;
        if n == 0 {
            break;
        }
        let text = std::str::from_utf8(&line)
            .map_err(|_| Error::data("checkpoint entry header is not UTF-8"))?
            .trim_end_matches('\n');
        let fields: Vec<&str> = text.split(' ').collect();
        if fields.len() != 3 {
            return Err(Error::data(format!("malformed checkpoint entry header {text:?}")));
        }
        let rows: usize = fields[1]
            .parse()
            .map_err(|_| Error::data(format!("bad row count in {text:?}")))?;
        let cols: usize = fields[2]
            .parse()
            .map_err(|_| Error::data(format!("bad column count in {text:?}")))?;
        let mut bytes = vec![0u8; rows * cols * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::data(format!("truncated data for array '{}'", fields[0])))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((fields[0].to_string(), Matrix::from_vec(rows, cols, data)?));
    }
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(path: &Path, arrays: &[(&str, &Matrix<T>)]) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), arrays)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Matrix<f32>)>> {
    read_checkpoint(File::open(path)?)
}
