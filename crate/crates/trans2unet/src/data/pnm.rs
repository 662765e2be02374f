//! Binary PGM (P5) and PPM (P6) reading and PGM writing.
//!
//! Only the binary variants with maxval up to 255 are supported. Headers
//! may contain `#` comments anywhere whitespace is allowed, per the format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    pub maxval: u8,
    /// Row-major, interleaved for PPM (RGB RGB ...).
    pub data: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::Data(format!("{}: {msg}", self.path.display()))
    }

    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn ascii_uint(&mut self, what: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_digit())
        {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err(&format!("expected {what} in header")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err(&format!("unparseable {what}")))
    }
}

pub fn read_pnm(path: &Path) -> Result<PnmImage> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };
    cur.skip_separators();
    let channels = match bytes.get(cur.pos..cur.pos + 2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(cur.err("not a binary PGM (P5) or PPM (P6) file")),
    };
    cur.pos += 2;
    let width = cur.ascii_uint("width")?;
    let height = cur.ascii_uint("height")?;
    let maxval = cur.ascii_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(cur.err("zero image dimension"));
    }
    if !(1..=255).contains(&maxval) {
        return Err(cur.err(&format!("maxval {maxval} unsupported (need 1..=255)")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.err("missing whitespace before pixel data")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| cur.err("image dimensions overflow"))?;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        return Err(cur.err(&format!(
            "pixel data truncated: need {need} bytes, have {}",
            raster.len()
        )));
    }
    if raster.len() > need {
        return Err(cur.err("trailing bytes after pixel data"));
    }
    Ok(PnmImage {
        width,
        height,
        channels,
        maxval: maxval as u8,
        data: raster.to_vec(),
    })
}

/// Writes a grayscale image as binary PGM with maxval 255.
pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    assert_eq!(data.len(), width * height, "pgm buffer size");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let data: Vec<u8> = (0..12).map(|i| i * 20).collect();
        write_pgm(&path, 4, 3, &data).unwrap();
        let img = read_pnm(&path).unwrap();
        assert_eq!((img.width, img.height, img.channels), (4, 3, 1));
        assert_eq!(img.maxval, 255);
        assert_eq!(img.data, data);
    }

    #[test]
    fn ppm_with_comments_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        let mut bytes = b"P6 # rgb\n# size next\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 20, 30, 40, 50, 60]);
        fs::write(&path, &bytes).unwrap();
        let img = read_pnm(&path).unwrap();
        assert_eq!((img.width, img.height, img.channels), (2, 1, 3));
        assert_eq!(img.data, vec![10, 20, 30, 40, 50, 60]);
    }

    #[test]
    fn binary_pixel_bytes_that_look_like_whitespace_survive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let data = vec![b'\n', b' ', b'#', 0];
        write_pgm(&path, 2, 2, &data).unwrap();
        assert_eq!(read_pnm(&path).unwrap().data, data);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad");
        fs::write(&path, b"P3\n1 1\n255\n0").unwrap();
        assert!(read_pnm(&path).is_err());
        fs::write(&path, b"P5\n2 2\n255\n\x01\x02\x03").unwrap();
        let err = read_pnm(&path).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("truncated")));
        fs::write(&path, b"P5\n2 2\n70000\n").unwrap();
        assert!(read_pnm(&path).is_err());
        fs::write(&path, b"P5\n2 2\n255\n\x01\x02\x03\x04\x05").unwrap();
        assert!(read_pnm(&path).is_err());
    }

    #[test]
    fn small_maxval_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        fs::write(&path, b"P5\n1 1\n7\n\x05").unwrap();
        let img = read_pnm(&path).unwrap();
        assert_eq!(img.maxval, 7);
        assert_eq!(img.data, vec![5]);
    }
}
