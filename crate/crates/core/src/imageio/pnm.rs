//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::Image;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported PNM magic {0:?} (only P5 and P6)")]
    BadMagic(String),
    #[error("unsupported maxval {0} (only 255)")]
    UnsupportedMaxval(u32),
    #[error("malformed PNM header: {0}")]
    BadHeader(String),
    #[error("pixel data truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("unsupported channel count {0} (only 1 or 3)")]
    UnsupportedChannels(usize),
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, PnmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PnmError::BadHeader(format!("expected {what}")))
    }
}

pub fn read_pnm_bytes(bytes: &[u8]) -> Result<Image, PnmError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(m) => return Err(PnmError::BadMagic(String::from_utf8_lossy(m).into_owned())),
        None => return Err(PnmError::BadMagic(String::from_utf8_lossy(bytes).into_owned())),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(PnmError::BadHeader(format!("zero extent {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(PnmError::BadHeader("missing whitespace after maxval".into())),
    }
    let expected = width * height * channels;
    let payload = &bytes[h.pos..];
    if payload.len() < expected {
        return Err(PnmError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    Image::new(width, height, channels, payload[..expected].to_vec())
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Image, PnmError> {
    read_pnm_bytes(&fs::read(path)?)
}

/// Canonical encoding: `P5`/`P6`, single newlines, no comments.
pub fn write_pnm_bytes(image: &Image) -> Result<Vec<u8>, PnmError> {
    let magic = match image.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(PnmError::UnsupportedChannels(c)),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.data());
    Ok(out)
}

pub fn write_pnm(image: &Image, path: impl AsRef<Path>) -> Result<(), PnmError> {
    fs::write(path, write_pnm_bytes(image)?)?;
    Ok(())
}
