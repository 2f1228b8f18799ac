//! Binary PPM (P6) and PGM (P5) with maxval 255.
//!
//! Writers emit the minimal header `P6\n<w> <h>\n255\n`; readers accept any
//! whitespace and `#` comments between header fields.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{from_u8, quantize, to_u8, ForegroundMask, ImageBuffer, PixelU8View};

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(format_err("not a PNM file"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(format_err("truncated PNM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("expected a number in PNM header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err("PNM header number out of range"))?;
    }
    // exactly one whitespace byte separates maxval from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(format_err("missing whitespace after PNM maxval")),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(format_err(format!("only maxval 255 is supported, got {maxval}")));
    }
    Ok(Header {
        magic,
        width,
        height,
        body_offset: pos,
    })
}

fn decode(bytes: &[u8], expect: &[u8; 2], channels: usize) -> Result<PixelU8View> {
    let header = parse_header(bytes)?;
    if &header.magic != expect {
        return Err(format_err(format!(
            "expected {}, found {}",
            String::from_utf8_lossy(expect),
            String::from_utf8_lossy(&header.magic)
        )));
    }
    let len = header.width * header.height * channels;
    let body = &bytes[header.body_offset..];
    if body.len() < len {
        return Err(format_err(format!("raster truncated: need {len} bytes, have {}", body.len())));
    }
    PixelU8View::new(header.height, header.width, channels, body[..len].to_vec())
}

fn encode(magic: &str, width: usize, height: usize, raster: &[u8]) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(raster);
    out
}

/// Encodes an image as P6 (3 channels) or P5 (1 channel).
pub fn encode_image(img: &ImageBuffer) -> Vec<u8> {
    let view = to_u8(img);
    let magic = if img.channels() == 3 { "P6" } else { "P5" };
    encode(magic, img.width(), img.height(), view.data())
}

/// Decodes P6 or P5 bytes into an image.
pub fn decode_image(bytes: &[u8]) -> Result<ImageBuffer> {
    match bytes.get(..2) {
        Some(b"P6") => Ok(from_u8(&decode(bytes, b"P6", 3)?)),
        Some(b"P5") => Ok(from_u8(&decode(bytes, b"P5", 1)?)),
        _ => Err(format_err("expected a P5 or P6 file")),
    }
}

/// Encodes a mask as P5 with values {0, 255}.
pub fn encode_mask(mask: &ForegroundMask) -> Vec<u8> {
    let raster: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode("P5", mask.width(), mask.height(), &raster)
}

/// Decodes a P5 mask; values ≥ 128 are foreground.
pub fn decode_mask(bytes: &[u8]) -> Result<ForegroundMask> {
    let view = decode(bytes, b"P5", 1)?;
    let bits = view.data().iter().map(|&v| v >= 128).collect();
    ForegroundMask::new(view.height(), view.width(), bits)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    decode_image(&fs::read(path)?)
}

pub fn write_image(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    write_all(path, &encode_image(img))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<ForegroundMask> {
    decode_mask(&fs::read(path)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &ForegroundMask) -> Result<()> {
    write_all(path, &encode_mask(mask))
}

/// Reads a P6 image from any reader.
pub fn read_from(mut reader: impl Read) -> Result<ImageBuffer> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    decode_image(&buf)
}

fn write_all(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

/// Quantizes each value to the byte that would be written to disk.
pub fn quantized_bytes(img: &ImageBuffer) -> Vec<u8> {
    img.data().iter().map(|&v| quantize(v)).collect()
}
