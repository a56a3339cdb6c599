//! Minimal raster containers and PNG / PGM codecs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("unsupported raster: {0}")]
    Unsupported(String),
    #[error("malformed raster: {0}")]
    Malformed(String),
}

/// Packed 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        if data.len() != width * height * 3 {
            return Err(RasterError::Malformed(format!(
                "expected {} bytes for {width}x{height} RGB, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend_from_slice(&f(r, c));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        let png = read_png(path)?;
        match png.pixels {
            PngPixels::Rgb8(data) => Self::new(png.width, png.height, data),
            PngPixels::Gray8(g) => Ok(Self::from_fn(png.width, png.height, |r, c| {
                let v = g[r * png.width + c];
                [v, v, v]
            })),
            _ => Err(RasterError::Unsupported("expected an 8-bit RGB or gray PNG".into())),
        }
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        write_png(path, self.width, self.height, png::ColorType::Rgb, png::BitDepth::Eight, &self.data, None)
    }
}

/// Decoded PNG samples, untransformed.
#[derive(Debug, Clone, PartialEq)]
pub enum PngPixels {
    Gray8(Vec<u8>),
    Gray16(Vec<u16>),
    Rgb8(Vec<u8>),
    /// Palette indices (8-bit).
    Indexed(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPng {
    pub width: usize,
    pub height: usize,
    pub pixels: PngPixels,
}

pub fn read_png(path: impl AsRef<Path>) -> Result<DecodedPng, RasterError> {
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RasterError::Unsupported("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf)?;
    let (width, height) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let rows = |bytes_per_row: usize| -> Vec<u8> {
        (0..height)
            .flat_map(|r| buf[r * stride..r * stride + bytes_per_row].iter().copied())
            .collect()
    };
    use png::{BitDepth, ColorType};
    let pixels = match (info.color_type, info.bit_depth) {
        (ColorType::Grayscale, BitDepth::Eight) => PngPixels::Gray8(rows(width)),
        (ColorType::Grayscale, BitDepth::Sixteen) => PngPixels::Gray16(
            rows(width * 2)
                .chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]))
                .collect(),
        ),
        (ColorType::Rgb, BitDepth::Eight) => PngPixels::Rgb8(rows(width * 3)),
        (ColorType::Indexed, BitDepth::Eight) => PngPixels::Indexed(rows(width)),
        (ct, bd) => {
            return Err(RasterError::Unsupported(format!("{ct:?} at {bd:?}")));
        }
    };
    Ok(DecodedPng {
        width,
        height,
        pixels,
    })
}

fn write_png(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
    palette: Option<&[u8]>,
) -> Result<(), RasterError> {
    let w = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    if let Some(p) = palette {
        enc.set_palette(p.to_vec());
    }
    let mut writer = enc.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()?;
    Ok(())
}

pub fn write_png_gray8(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    data: &[u8],
) -> Result<(), RasterError> {
    write_png(path, width, height, png::ColorType::Grayscale, png::BitDepth::Eight, data, None)
}

pub fn write_png_gray16(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    data: &[u16],
) -> Result<(), RasterError> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_be_bytes()).collect();
    write_png(path, width, height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes, None)
}

/// Writes 8-bit palette indices with an RGB palette (3 bytes per entry).
pub fn write_png_indexed(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    indices: &[u8],
    palette: &[u8],
) -> Result<(), RasterError> {
    write_png(path, width, height, png::ColorType::Indexed, png::BitDepth::Eight, indices, Some(palette))
}

/// Writes a binary PGM (`P5`) with 16-bit big-endian samples, maxval 65535.
pub fn write_pgm16(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    data: &[u16],
) -> Result<(), RasterError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n65535\n")?;
    for v in data {
        w.write_all(&v.to_be_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a binary PGM (`P5`); 8-bit and 16-bit samples are both widened to `u16`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u16>), RasterError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(RasterError::Malformed("truncated PGM header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the samples
    pos += 1;
    if tokens[0] != "P5" {
        return Err(RasterError::Unsupported(format!("PGM magic {:?}", tokens[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| RasterError::Malformed(format!("bad PGM header field {s:?}")))
    };
    let (width, height, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(RasterError::Malformed(format!("PGM maxval {maxval}")));
    }
    let sample = if maxval < 256 { 1 } else { 2 };
    let need = width * height * sample;
    let payload = bytes
        .get(pos..pos + need)
        .ok_or_else(|| RasterError::Malformed("truncated PGM payload".into()))?;
    let data = if sample == 1 {
        payload.iter().map(|&b| b as u16).collect()
    } else {
        payload
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect()
    };
    Ok((width, height, data))
}
