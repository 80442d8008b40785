//! Grayscale images with intensities in `[0, 1]` and binary PGM (P5) I/O.
//!
//! Pixel `(col, row)` has its centre at image coordinates `(x, y) = (col, row)`:
//! origin top-left, x to the right, y down.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::usage(format!(
                "{width}x{height} image needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("non-empty image")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    /// Bilinear interpolation between pixel centres; `None` outside the
    /// convex hull of the centres.
    pub fn bilinear(&self, x: f64, y: f64) -> Option<f64> {
        const SLACK: f64 = 1e-9;
        let (wmax, hmax) = ((self.width - 1) as f64, (self.height - 1) as f64);
        if !(x >= -SLACK && y >= -SLACK && x <= wmax + SLACK && y <= hmax + SLACK) {
            return None;
        }
        let x = x.clamp(0.0, wmax);
        let y = y.clamp(0.0, hmax);
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    /// Binary PGM with 8-bit or 16-bit (big-endian) samples.
    pub fn to_pgm(&self, bit_depth: u8) -> Result<Vec<u8>> {
        let maxval: u32 = match bit_depth {
            8 => 255,
            16 => 65535,
            other => return Err(Error::usage(format!("unsupported PGM bit depth {other}"))),
        };
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, maxval).into_bytes();
        for &v in &self.data {
            let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
            if bit_depth == 8 {
                out.push(q as u8);
            } else {
                out.extend_from_slice(&(q as u16).to_be_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_pgm(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0usize;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated PGM header".into());
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        if fields[0] != "P5" {
            return Err(format!("unsupported PGM magic `{}`", fields[0]));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|e| format!("bad header field `{s}`: {e}"));
        let width = parse(&fields[1])?;
        let height = parse(&fields[2])?;
        let maxval = parse(&fields[3])?;
        if maxval == 0 || maxval > 65535 {
            return Err(format!("invalid maxval {maxval}"));
        }
        let bytes_per = if maxval < 256 { 1 } else { 2 };
        let raster = bytes.get(pos..).unwrap_or_default();
        if raster.len() < width * height * bytes_per {
            return Err("truncated PGM raster".into());
        }
        let data = (0..width * height)
            .map(|i| {
                let q = if bytes_per == 1 {
                    raster[i] as u32
                } else {
                    u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u32
                };
                q as f64 / maxval as f64
            })
            .collect();
        GrayImage::new(width, height, data).map_err(|e| e.to_string())
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        Self::from_pgm(&bytes).map_err(|msg| Error::format(path, msg))
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>, bit_depth: u8) -> Result<()> {
        fs::write(path, self.to_pgm(bit_depth)?)?;
        Ok(())
    }
}
