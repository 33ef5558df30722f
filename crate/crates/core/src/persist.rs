//! Flat little-endian `f32` array files.

use std::fs;
use std::io;
use std::path::Path;

pub fn write_f32(path: &Path, values: &[f64]) -> io::Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)
}

pub fn read_f32(path: &Path, expected_len: usize) -> io::Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected_len * 4 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!(
                "{}: expected {} floats, found {} bytes",
                path.display(),
                expected_len,
                bytes.len()
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}
