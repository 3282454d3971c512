//! Binary PGM (P5) reader/writer and PPM (P6) writer.
//!
//! The only raster formats the toolkit speaks. Intensities are stored scaled
//! by the maxval (255 or 65535, 16-bit big-endian per the Netpbm convention)
//! and normalized back to `[0, 1]` on load. One comment line after the magic
//! is tolerated.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{GrayImage, ImagingError, RgbImage};

/// Sample depth for PGM output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn maxval(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
    comments_seen: usize,
}

impl<'a> HeaderParser<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self {
            bytes,
            pos: 0,
            comments_seen: 0,
        }
    }

    fn skip_separators(&mut self) -> Result<(), ImagingError> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    self.comments_seen += 1;
                    if self.comments_seen > 1 {
                        return Err(ImagingError::MalformedHeader(
                            "more than one comment line".to_string(),
                        ));
                    }
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn next_u32(&mut self, what: &str) -> Result<u32, ImagingError> {
        self.skip_separators()?;
        let start = self.pos;
        while matches!(self.bytes.get(self.pos), Some(b) if b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(ImagingError::MalformedHeader(format!("missing {what}")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse::<u32>()
            .map_err(|_| ImagingError::MalformedHeader(format!("{what} out of range: {text}")))
    }
}

/// Load a binary PGM (P5) file and normalize intensities by its maxval.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage, ImagingError> {
    load_pgm_with_depth(path).map(|(image, _)| image)
}

/// Like [`load_pgm`], additionally reporting the stored sample depth.
pub fn load_pgm_with_depth(
    path: impl AsRef<Path>,
) -> Result<(GrayImage, BitDepth), ImagingError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(ImagingError::UnsupportedFormat(
            "not a Netpbm file".to_string(),
        ));
    }
    if bytes[1] != b'5' {
        return Err(ImagingError::UnsupportedFormat(format!(
            "unsupported format: expected P5, got P{}",
            char::from(bytes[1])
        )));
    }

    let mut parser = HeaderParser::new(&bytes[2..]);
    let width = parser.next_u32("width")? as usize;
    let height = parser.next_u32("height")? as usize;
    let maxval = parser.next_u32("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(ImagingError::MalformedHeader(format!(
            "maxval {maxval} outside 1..=65535"
        )));
    }
    // exactly one whitespace byte separates the header from pixel data
    let data_start = match parser.bytes.get(parser.pos) {
        Some(b) if b.is_ascii_whitespace() => 2 + parser.pos + 1,
        _ => {
            return Err(ImagingError::MalformedHeader(
                "missing separator before pixel data".to_string(),
            ))
        }
    };

    let depth = if maxval <= 255 {
        BitDepth::Eight
    } else {
        BitDepth::Sixteen
    };
    let bytes_per_sample = match depth {
        BitDepth::Eight => 1,
        BitDepth::Sixteen => 2,
    };
    let expected = width * height * bytes_per_sample;
    let data = &bytes[data_start.min(bytes.len())..];
    if data.len() < expected {
        return Err(ImagingError::TruncatedData {
            expected,
            actual: data.len(),
        });
    }

    let scale = f64::from(maxval);
    let pixels: Vec<f64> = match depth {
        BitDepth::Eight => data[..expected]
            .iter()
            .map(|&b| f64::from(b) / scale)
            .collect(),
        BitDepth::Sixteen => data[..expected]
            .chunks_exact(2)
            .map(|pair| f64::from(u16::from_be_bytes([pair[0], pair[1]])) / scale)
            .collect(),
    };
    if pixels.iter().any(|&p| p > 1.0) {
        return Err(ImagingError::MalformedHeader(
            "sample value exceeds maxval".to_string(),
        ));
    }
    Ok((GrayImage::new(width, height, pixels)?, depth))
}

/// Write a binary PGM (P5) file, scaling intensities by the depth's maxval
/// and rounding half up.
pub fn save_pgm(
    image: &GrayImage,
    path: impl AsRef<Path>,
    depth: BitDepth,
) -> Result<(), ImagingError> {
    let maxval = depth.maxval();
    let mut out = Vec::with_capacity(image.pixels().len() * 2 + 32);
    write!(
        out,
        "P5\n{} {}\n{}\n",
        image.width(),
        image.height(),
        maxval
    )?;
    match depth {
        BitDepth::Eight => {
            for &p in image.pixels() {
                out.push((p * 255.0).round() as u8);
            }
        }
        BitDepth::Sixteen => {
            for &p in image.pixels() {
                let v = (p * 65535.0).round() as u16;
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write a binary PPM (P6) file at 8 bits per channel.
pub fn save_ppm(image: &RgbImage, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    let mut out = Vec::with_capacity(image.pixels().len() * 3 + 32);
    write!(out, "P6\n{} {}\n255\n", image.width(), image.height())?;
    for rgb in image.pixels() {
        for &c in rgb {
            out.push((c * 255.0).round() as u8);
        }
    }
    fs::write(path, out)?;
    Ok(())
}
