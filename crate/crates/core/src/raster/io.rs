//! File formats: binary PGM/PPM for masks and display images, FPM1 for
//! real-valued rasters, JSON for polygons.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Polygon, ScalarField};

const FPM_MAGIC: &[u8] = b"FPM1\n";

/// 8-bit raster decoded from a P5 (gray) or P6 (RGB) file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetpbmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// 1 for P5, 3 for P6.
    pub samples_per_pixel: usize,
    pub data: Vec<u8>,
}

impl NetpbmImage {
    /// Luminance in `[0, 1]` (Rec. 601 weights for RGB).
    pub fn to_gray_field(&self) -> ScalarField {
        let scale = 1.0 / self.maxval as f64;
        let values = match self.samples_per_pixel {
            1 => self.data.iter().map(|&v| v as f64 * scale).collect(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) * scale)
                .map(|v: f64| v.min(1.0))
                .collect(),
        };
        ScalarField::new(self.width, self.height, 1, values).expect("decoded sizes agree")
    }
}

fn fmt_err(format: &'static str, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        format,
        offset,
        message: message.into(),
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(fmt_err(self.format, start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| fmt_err(self.format, start, format!("{what} out of range")))
    }
}

/// Decodes binary P5 or P6 with maxval ≤ 255.
pub fn decode_netpbm(bytes: &[u8]) -> Result<NetpbmImage> {
    let format = "PNM";
    if bytes.len() < 2 || bytes[0] != b'P' || !(bytes[1] == b'5' || bytes[1] == b'6') {
        return Err(fmt_err(format, 0, "expected magic P5 or P6"));
    }
    let samples_per_pixel = if bytes[1] == b'5' { 1 } else { 3 };
    let mut r = HeaderReader { bytes, pos: 2, format };
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval_pos = r.pos;
    let maxval = r.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(fmt_err(format, maxval_pos, format!("unsupported maxval {maxval}")));
    }
    if r.pos >= bytes.len() || !bytes[r.pos].is_ascii_whitespace() {
        return Err(fmt_err(format, r.pos, "missing whitespace after header"));
    }
    let data_start = r.pos + 1;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(samples_per_pixel))
        .ok_or_else(|| fmt_err(format, 2, "dimensions overflow"))?;
    let available = bytes.len() - data_start;
    if available < expected {
        return Err(fmt_err(
            format,
            bytes.len(),
            format!("truncated raster: expected {expected} bytes, found {available}"),
        ));
    }
    Ok(NetpbmImage {
        width,
        height,
        maxval: maxval as u16,
        samples_per_pixel,
        data: bytes[data_start..data_start + expected].to_vec(),
    })
}

/// Decodes a P5 mask; samples at or above half of maxval (128 for 255) are true.
pub fn decode_pgm_mask(bytes: &[u8]) -> Result<BinaryMask> {
    let img = decode_netpbm(bytes)?;
    if img.samples_per_pixel != 1 {
        return Err(fmt_err("PGM", 1, "expected P5 grayscale"));
    }
    let cut = (img.maxval as u32).div_ceil(2);
    let bits = img.data.iter().map(|&v| v as u32 >= cut).collect();
    BinaryMask::from_bits(img.width, img.height, bits)
}

/// Encodes a mask as P5, maxval 255, `0`/`255`.
pub fn encode_pgm_mask(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Encodes a single-channel field in `[0, 1]` as an 8-bit P5 image (clamped).
pub fn encode_pgm_gray(field: &ScalarField, channel: usize) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", field.width(), field.height()).into_bytes();
    out.extend(
        field
            .plane(channel)
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn encode_fpm(field: &ScalarField) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + field.len() * 4);
    out.extend_from_slice(FPM_MAGIC);
    out.extend_from_slice(format!("{} {} {}\n", field.width(), field.height(), field.channels()).as_bytes());
    for &v in field.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_fpm(bytes: &[u8]) -> Result<ScalarField> {
    let format = "FPM1";
    if !bytes.starts_with(FPM_MAGIC) {
        return Err(fmt_err(format, 0, "expected magic \"FPM1\\n\""));
    }
    let dims_start = FPM_MAGIC.len();
    let line_end = bytes[dims_start..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| dims_start + p)
        .ok_or_else(|| fmt_err(format, dims_start, "unterminated dimension line"))?;
    let line = std::str::from_utf8(&bytes[dims_start..line_end])
        .map_err(|_| fmt_err(format, dims_start, "dimension line is not ASCII"))?;
    let dims: Vec<usize> = line
        .split(' ')
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| fmt_err(format, dims_start, format!("bad dimension line {line:?}")))?;
    let [width, height, channels] = dims[..] else {
        return Err(fmt_err(format, dims_start, "expected \"<width> <height> <channels>\""));
    };
    if channels == 0 {
        return Err(fmt_err(format, dims_start, "channel count must be >= 1"));
    }
    let data_start = line_end + 1;
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| fmt_err(format, dims_start, "dimensions overflow"))?;
    let payload = &bytes[data_start..];
    if payload.len() != count * 4 {
        return Err(fmt_err(
            format,
            data_start + payload.len().min(count * 4),
            format!("expected {} payload bytes, found {}", count * 4, payload.len()),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(fmt_err(format, data_start + 4 * i, "non-finite sample"));
        }
        values.push(v as f64);
    }
    ScalarField::new(width, height, channels, values)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    decode_pgm_mask(&fs::read(path)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    Ok(fs::write(path, encode_pgm_mask(mask))?)
}

pub fn read_field(path: impl AsRef<Path>) -> Result<ScalarField> {
    decode_fpm(&fs::read(path)?)
}

pub fn write_field(path: impl AsRef<Path>, field: &ScalarField) -> Result<()> {
    Ok(fs::write(path, encode_fpm(field))?)
}

pub fn read_polygon(path: impl AsRef<Path>) -> Result<Polygon> {
    Polygon::from_json(&fs::read_to_string(path)?)
}

pub fn write_polygon(path: impl AsRef<Path>, polygon: &Polygon) -> Result<()> {
    Ok(fs::write(path, polygon.to_json())?)
}
