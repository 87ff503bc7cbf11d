//! PNG (8-bit LDR) and PFM (32-bit float) image files.

use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Row-major interleaved pixels, top row first.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    /// 1 or 3.
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::ShapeMismatch(format!("images have 1 or 3 channels, not {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height}x{channels} image needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(ImageBuffer { width, height, channels, data })
    }

    pub fn from_f64(width: usize, height: usize, channels: usize, data: &[f64]) -> Result<Self> {
        Self::new(width, height, channels, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn decode_err(path: &Path, message: impl ToString) -> Error {
    Error::Decode { path: path.to_path_buf(), message: message.to_string() }
}

/// Reads an 8-bit RGB or RGBA PNG; alpha is dropped, values map to `v / 255`.
pub fn read_png(path: &Path) -> Result<ImageBuffer> {
    let file = File::open(path).map_err(io_err(path))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| decode_err(path, e))?;
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    let (color, depth) = (info.color_type, info.bit_depth);
    if depth != png::BitDepth::Eight {
        return Err(decode_err(path, format!("expected 8-bit samples, found {depth:?}")));
    }
    let stride = match color {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(decode_err(path, format!("expected RGB or RGBA, found {other:?}"))),
    };
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| decode_err(path, "image too large"))?];
    let frame = reader.next_frame(&mut buf).map_err(|e| decode_err(path, e))?;
    let bytes = &buf[..frame.buffer_size()];
    let mut data = Vec::with_capacity(w * h * 3);
    for row in bytes.chunks_exact(frame.line_size).take(h) {
        for px in row[..w * stride].chunks_exact(stride) {
            data.extend(px[..3].iter().map(|&b| b as f32 / 255.0));
        }
    }
    ImageBuffer::new(w, h, 3, data)
}

/// Writes an 8-bit RGB PNG (single-channel buffers are replicated).
/// Values are clamped to `[0, 1]` and rounded to the nearest step.
pub fn write_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let to_byte = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let bytes: Vec<u8> = if img.channels == 3 {
        img.data.iter().map(|&v| to_byte(v)).collect()
    } else {
        img.data.iter().flat_map(|&v| [to_byte(v); 3]).collect()
    };
    let mut writer = enc.write_header().map_err(|e| decode_err(path, e))?;
    writer.write_image_data(&bytes).map_err(|e| decode_err(path, e))?;
    writer.finish().map_err(|e| decode_err(path, e))
}

fn header_err(path: &Path, message: impl ToString) -> Error {
    Error::Header { path: path.to_path_buf(), message: message.to_string() }
}

/// Reads a little-endian PFM (`PF` colour or `Pf` greyscale). PFM stores
/// the bottom row first; the buffer is returned top row first.
pub fn read_pfm(path: &Path) -> Result<ImageBuffer> {
    let mut bytes = Vec::new();
    File::open(path).map_err(io_err(path))?.read_to_end(&mut bytes).map_err(io_err(path))?;
    // three whitespace-separated header tokens, then one whitespace byte
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos || pos >= bytes.len() {
            return Err(header_err(path, "header ends early"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| header_err(path, "non-ASCII header"))?);
    }
    pos += 1;
    let channels = match tokens[0] {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(header_err(path, format!("unknown magic `{other}`"))),
    };
    let parse = |t: &str, what: &str| t.parse::<usize>().map_err(|_| header_err(path, format!("bad {what} `{t}`")));
    let (w, h) = (parse(tokens[1], "width")?, parse(tokens[2], "height")?);
    let scale: f64 = tokens[3].parse().map_err(|_| header_err(path, format!("bad scale `{}`", tokens[3])))?;
    if !(scale < 0.0) {
        return Err(header_err(path, "only little-endian files (negative scale) are supported"));
    }
    let n = w * h * channels;
    let body = &bytes[pos..];
    if body.len() != 4 * n {
        return Err(decode_err(path, format!("expected {} bytes of pixel data, found {}", 4 * n, body.len())));
    }
    let rows: Vec<f32> = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let row_len = w * channels;
    let data = (0..h).rev().flat_map(|y| rows[y * row_len..(y + 1) * row_len].iter().copied()).collect();
    ImageBuffer::new(w, h, channels, data)
}

pub fn write_pfm(path: &Path, img: &ImageBuffer) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let magic = if img.channels == 3 { "PF" } else { "Pf" };
    write!(out, "{magic}\n{} {}\n-1.0\n", img.width, img.height).map_err(io_err(path))?;
    let row_len = img.width * img.channels;
    for y in (0..img.height).rev() {
        for v in &img.data[y * row_len..(y + 1) * row_len] {
            out.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
        }
    }
    out.flush().map_err(io_err(path))
}
