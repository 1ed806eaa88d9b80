//! Middlebury-style `.flo` dumps: little-endian `f32` magic 202021.25
//! (bytes `PIEH`), `i32` width, `i32` height, then row-major interleaved
//! `(u, v)` as `f32`.

use std::io::{Read, Write};
use std::path::Path;

use super::FlowField;
use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;

pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(12 + 8 * flow.u().len());
    buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    buf.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    buf.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        buf.extend_from_slice(&(*u as f32).to_le_bytes());
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::UnwritablePath {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let unreadable = |reason: &str| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| unreadable(&e.to_string()))?;
    if bytes.len() < 12 {
        return Err(unreadable("truncated header"));
    }
    let word = |i: usize| -> [u8; 4] { bytes[4 * i..4 * i + 4].try_into().expect("4 bytes") };
    if f32::from_le_bytes(word(0)) != FLO_MAGIC {
        return Err(unreadable("bad magic"));
    }
    let width = i32::from_le_bytes(word(1));
    let height = i32::from_le_bytes(word(2));
    if width <= 0 || height <= 0 {
        return Err(Error::ZeroSize);
    }
    let n = width as usize * height as usize;
    if bytes.len() != 12 + 8 * n {
        return Err(unreadable("payload size does not match header"));
    }
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        u.push(f64::from(f32::from_le_bytes(word(3 + 2 * i))));
        v.push(f64::from(f32::from_le_bytes(word(4 + 2 * i))));
    }
    FlowField::new(width as usize, height as usize, u, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_and_round_trip() {
        let flow = FlowField::new(3, 2, vec![0.5, -1.0, 2.0, 0.0, 0.25, 3.0], vec![1.0, 0.0, -0.5, 4.0, 0.0, -2.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        write_flo(&flow, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"PIEH");
        assert_eq!(bytes.len(), 12 + 6 * 8);
        assert_eq!(&bytes[12..20], &[0.5f32.to_le_bytes(), 1.0f32.to_le_bytes()].concat()[..]);
        assert_eq!(read_flo(&path).unwrap(), flow);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.flo");
        std::fs::write(&path, b"nope nope nope").unwrap();
        assert!(read_flo(&path).is_err());
    }
}
