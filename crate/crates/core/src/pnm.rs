//! Binary PGM (P5) and PPM (P6) images, 8-bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit image with 1 (gray) or 3 (RGB) channels, rows top to bottom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

/// Maps `[0, 1]` to `0..=255`, clamping out-of-range values.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Image {
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Image> {
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::format("truncated PNM header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1;
        let channels = match fields[0].as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(Error::format(format!("unsupported PNM magic {other}"))),
        };
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::format(format!("bad PNM header field {s}")))
        };
        let (width, height) = (num(&fields[1])?, num(&fields[2])?);
        if num(&fields[3])? != 255 {
            return Err(Error::format("only 8-bit PNM is supported"));
        }
        let len = width * height * channels;
        if bytes.len() < pos + len {
            return Err(Error::format("truncated PNM data"));
        }
        Ok(Image {
            width,
            height,
            channels,
            data: bytes[pos..pos + len].to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Image> {
        Image::decode(&fs::read(path)?)
    }
}

/// Renders a row-major `n×n` grid (row 0 = smallest y) as a PGM with north up.
pub fn gray_from_grid(n: usize, values: &[f64]) -> Image {
    let mut data = Vec::with_capacity(n * n);
    for i in (0..n).rev() {
        data.extend(values[i * n..(i + 1) * n].iter().map(|&v| quantize(v)));
    }
    Image {
        width: n,
        height: n,
        channels: 1,
        data,
    }
}

/// Inverse of [`gray_from_grid`], returning values in `[0, 1]`.
pub fn grid_from_gray(img: &Image) -> Vec<f64> {
    let n = img.width;
    let mut out = vec![0.0; n * img.height];
    for (r, row) in img.data.chunks(n * img.channels).enumerate() {
        let i = img.height - 1 - r;
        for j in 0..n {
            out[i * n + j] = row[j * img.channels] as f64 / 255.0;
        }
    }
    out
}
