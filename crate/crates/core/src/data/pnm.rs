//! Binary PPM (`P6`) and PGM (`P5`) with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn put(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }
}

fn encode(magic: &str, width: usize, height: usize, payload: &[u8]) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(payload);
    out
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    encode("P6", img.width, img.height, &img.data)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    encode("P5", img.width, img.height, &img.data)
}

struct Header {
    width: usize,
    height: usize,
    offset: usize,
}

/// Parses a netpbm header, skipping `#` comments between tokens.
fn parse_header(bytes: &[u8], magic: &[u8; 2], what: &'static str) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(what, "bad magic number"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::format(what, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(what, "expected a decimal header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(what, "missing whitespace after maxval"));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(what, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(what, "zero extent"));
    }
    Ok(Header {
        width,
        height,
        offset: pos + 1,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, channels: usize, what: &'static str) -> Result<&'a [u8]> {
    let len = h.width * h.height * channels;
    match bytes.len() - h.offset {
        n if n == len => Ok(&bytes[h.offset..]),
        n => Err(Error::format(what, format!("payload holds {n} bytes, expected {len}"))),
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let h = parse_header(bytes, b"P6", "PPM image")?;
    let data = payload(bytes, &h, 3, "PPM image")?.to_vec();
    Ok(RgbImage {
        width: h.width,
        height: h.height,
        data,
    })
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let h = parse_header(bytes, b"P5", "PGM image")?;
    let data = payload(bytes, &h, 1, "PGM image")?.to_vec();
    Ok(GrayImage {
        width: h.width,
        height: h.height,
        data,
    })
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P5 # comment\n2 # w\n1\n255\n\x07\x09";
        let img = decode_pgm(bytes).unwrap();
        assert_eq!((img.width, img.height, img.data.clone()), (2, 1, vec![7, 9]));
    }

    #[test]
    fn short_payload_is_rejected() {
        let mut bytes = encode_ppm(&RgbImage::new(2, 2));
        bytes.pop();
        assert!(decode_ppm(&bytes).is_err());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let bytes = encode_pgm(&GrayImage::new(1, 1));
        assert!(decode_ppm(&bytes).is_err());
    }
}
