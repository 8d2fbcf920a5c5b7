//! Binary portable pixmap (P6) reader and writer, maxval 255.
//!
//! Parse failures report the byte offset where the reader gave up, and never
//! return a partially filled buffer.

use std::fs;
use std::path::Path;

use super::ImageBuffer;
use crate::error::{Error, Result};

pub fn write_ppm(path: &Path, img: &ImageBuffer) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend_from_slice(&img.to_bytes());
    fs::write(path, bytes)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: self.pos,
            msg: msg.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    /// Skips whitespace and `#` comments (which run to end of line).
    fn skip_space(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(b) = self.peek() {
                    self.pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn read_int(&mut self) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return self.fail("expected an ASCII integer");
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("digits are utf-8");
        text.parse()
            .map_err(|_| Error::Parse {
                offset: start,
                msg: format!("integer '{text}' out of range"),
            })
    }
}

pub fn read_ppm(path: &Path) -> Result<ImageBuffer> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if !bytes.starts_with(b"P6") {
        return cur.fail("missing P6 magic");
    }
    cur.pos = 2;
    let width = cur.read_int()?;
    let height = cur.read_int()?;
    let maxval = cur.read_int()?;
    if maxval != 255 {
        return cur.fail(format!("unsupported maxval {maxval}, expected 255"));
    }
    if width == 0 || height == 0 {
        return cur.fail(format!("degenerate image size {width}x{height}"));
    }
    // exactly one whitespace byte separates the header from the pixel data
    match cur.peek() {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return cur.fail("expected single whitespace before pixel data"),
    }
    let need = width * height * 3;
    let avail = bytes.len() - cur.pos;
    if avail < need {
        return cur.fail(format!("truncated pixel data: need {need} bytes, have {avail}"));
    }
    ImageBuffer::from_bytes(height, width, &bytes[cur.pos..cur.pos + need])
}
