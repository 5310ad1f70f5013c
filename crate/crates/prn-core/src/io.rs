//! Small binary I/O helpers shared by checkpoints and trace sidecars:
//! little-endian f64 blobs behind JSON headers.

use std::io::{Read, Write};

pub(crate) fn write_f64s<W: Write>(w: &mut W, data: &[f64]) -> std::io::Result<()> {
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
