//! Binary PPM (`P6`) and PGM (`P5`) with 8-bit samples.

use alloc::format;
use alloc::vec::Vec;

use super::{Mask, RgbImage};
use crate::error::{Error, Result};

struct Header {
    width: usize,
    height: usize,
    payload: usize,
}

fn parse_header(bytes: &[u8], magic: &'static str) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        return Err(Error::BadMagic { expected: magic });
    }
    let mut pos = 2;
    let mut tokens = [0u32; 3];
    let mut comment_allowed = true;
    for (i, slot) in tokens.iter_mut().enumerate() {
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if comment_allowed && i == 0 && pos < bytes.len() && bytes[pos] == b'#' {
            if start == pos {
                return Err(Error::BadHeader("comment must follow whitespace".into()));
            }
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            comment_allowed = false;
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
        } else if start == pos {
            return Err(Error::BadHeader(format!("missing whitespace before header field {}", i + 1)));
        }
        let digits = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if digits == pos {
            return Err(Error::BadHeader(format!("header field {} is not a number", i + 1)));
        }
        let text = core::str::from_utf8(&bytes[digits..pos]).expect("ascii digits");
        *slot = text.parse().map_err(|_| Error::BadHeader(format!("header value `{text}` overflows")))?;
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::BadHeader("maxval must be followed by one whitespace byte".into()));
    }
    let [width, height, maxval] = tokens;
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(Error::BadHeader(format!("empty raster {width}x{height}")));
    }
    Ok(Header { width: width as usize, height: height as usize, payload: pos + 1 })
}

fn payload(bytes: &[u8], header: &Header, channels: usize) -> Result<Vec<u8>> {
    let expected = header.width * header.height * channels;
    let found = bytes.len() - header.payload;
    if found < expected {
        return Err(Error::Truncated { expected, found });
    }
    Ok(bytes[header.payload..header.payload + expected].to_vec())
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let header = parse_header(bytes, "P6")?;
    let data = payload(bytes, &header, 3)?;
    RgbImage::from_raw(header.width, header.height, data)
}

/// Decodes a mask; with `classes` set, values `≥ classes` are rejected.
pub fn decode_pgm(bytes: &[u8], classes: Option<usize>) -> Result<Mask> {
    let header = parse_header(bytes, "P5")?;
    let mask = Mask::from_raw(header.width, header.height, payload(bytes, &header, 1)?)?;
    if let Some(k) = classes {
        mask.validate(k)?;
    }
    Ok(mask)
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

pub fn encode_pgm(mask: &Mask, classes: Option<usize>) -> Result<Vec<u8>> {
    if let Some(k) = classes {
        mask.validate(k)?;
    }
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend_from_slice(&mask.data);
    Ok(out)
}
