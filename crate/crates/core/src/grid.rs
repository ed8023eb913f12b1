//! Binary dumps of real 2-D grids (masks, SCM components, filter weights).
//!
//! Layout: `rows u32 | cols u32 | magic u32 | version u32`, all little
//! endian, followed by `rows * cols` row-major f32 values.

use std::io::{Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};

pub const GRID_MAGIC: u32 = 0x4452_4753; // "SGRD"
pub const GRID_VERSION: u32 = 1;

pub fn write_grid<W: Write>(mut w: W, grid: &Array2<f64>) -> Result<()> {
    let (rows, cols) = grid.dim();
    for v in [rows as u32, cols as u32, GRID_MAGIC, GRID_VERSION] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in grid.iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_grid<R: Read>(mut r: R) -> Result<Array2<f64>> {
    let mut word = [0u8; 4];
    let mut header = [0u32; 4];
    for h in &mut header {
        r.read_exact(&mut word)?;
        *h = u32::from_le_bytes(word);
    }
    let [rows, cols, magic, version] = header;
    if magic != GRID_MAGIC {
        return Err(Error::InvalidInput(format!("bad grid magic {magic:#x}")));
    }
    if version != GRID_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported grid version {version}"
        )));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        r.read_exact(&mut word)?;
        data.push(f32::from_le_bytes(word) as f64);
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::InvalidInput(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_header_size() {
        let g = Array2::from_shape_fn((3, 5), |(i, j)| i as f64 - 0.5 * j as f64);
        let mut buf = Vec::new();
        write_grid(&mut buf, &g).unwrap();
        assert_eq!(buf.len(), 16 + 15 * 4);
        assert_eq!(read_grid(buf.as_slice()).unwrap(), g);
        buf[8] ^= 1;
        assert!(read_grid(buf.as_slice()).is_err());
    }
}
