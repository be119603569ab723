//! Grayscale images with bilinear sampling, PGM (P5) input/output and PPM
//! (P6) output.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Physical length of one pixel.
    pub pixel_size: f64,
    /// Row-major values in [0, 1].
    pub values: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixel_size: f64, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::GridMismatch(format!(
                "{} values for a {width}x{height} image",
                values.len()
            )));
        }
        if !(pixel_size > 0.0) {
            return Err(Error::DomainError("pixel size must be positive".into()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::DomainError("image values must lie in [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            pixel_size,
            values,
        })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.width + i]
    }

    /// Bilinear value and gradient (per unit length) at physical position
    /// `(x, y)`, pixel centres at integer multiples of the pixel size. The
    /// position is clamped to the image.
    pub fn sample(&self, x: f64, y: f64) -> (f64, [f64; 2]) {
        let px = (x / self.pixel_size).clamp(0.0, (self.width - 1) as f64);
        let py = (y / self.pixel_size).clamp(0.0, (self.height - 1) as f64);
        let i0 = (px.floor() as usize).min(self.width.saturating_sub(2));
        let j0 = (py.floor() as usize).min(self.height.saturating_sub(2));
        let i1 = (i0 + 1).min(self.width - 1);
        let j1 = (j0 + 1).min(self.height - 1);
        let fx = px - i0 as f64;
        let fy = py - j0 as f64;
        let (a, b, c, d) = (
            self.at(i0, j0),
            self.at(i1, j0),
            self.at(i0, j1),
            self.at(i1, j1),
        );
        let top = a + (b - a) * fx;
        let bottom = c + (d - c) * fx;
        let value = top + (bottom - top) * fy;
        let gx = ((b - a) * (1.0 - fy) + (d - c) * fy) / self.pixel_size;
        let gy = (bottom - top) / self.pixel_size;
        (value, [gx, gy])
    }

    /// Binary PGM; 16-bit samples unless `eight_bit`.
    pub fn write_pgm<W: Write>(&self, w: &mut W, eight_bit: bool) -> Result<()> {
        let maxval: u32 = if eight_bit { 255 } else { 65535 };
        write!(w, "P5\n{} {}\n{maxval}\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.values.len() * 2);
        for &v in &self.values {
            let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
            if eight_bit {
                buf.push(q as u8);
            } else {
                buf.extend_from_slice(&(q as u16).to_be_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Binary PGM with maxval up to 65535; values are normalized by maxval.
    pub fn read_pgm<R: BufRead>(r: &mut R, pixel_size: f64) -> Result<Self> {
        let mut magic = [0u8; 2];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Parse("empty PGM".into()))?;
        if &magic != b"P5" {
            return Err(Error::Parse("not a binary PGM (P5)".into()));
        }
        let width = read_token(r)?;
        let height = read_token(r)?;
        let maxval = read_token(r)?;
        if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
            return Err(Error::Parse(format!(
                "bad PGM header {width}x{height} maxval {maxval}"
            )));
        }
        let bytes = if maxval < 256 { 1 } else { 2 };
        let mut buf = vec![0u8; width * height * bytes];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Parse("truncated PGM data".into()))?;
        let values = if bytes == 1 {
            buf.iter()
                .map(|&b| (b as f64 / maxval as f64).min(1.0))
                .collect()
        } else {
            buf.chunks_exact(2)
                .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64).min(1.0))
                .collect()
        };
        Self::new(width, height, pixel_size, values)
    }
}

/// Binary PPM (P6) from row-major RGB triples.
pub fn write_ppm<W: Write>(w: &mut W, width: usize, height: usize, rgb: &[[u8; 3]]) -> Result<()> {
    if rgb.len() != width * height {
        return Err(Error::GridMismatch(format!(
            "{} pixels for a {width}x{height} image",
            rgb.len()
        )));
    }
    write!(w, "P6\n{width} {height}\n255\n")?;
    let flat: Vec<u8> = rgb.iter().flatten().copied().collect();
    w.write_all(&flat)?;
    Ok(())
}

/// Next whitespace-delimited decimal header token, skipping `#` comments;
/// consumes exactly one whitespace byte after the token.
fn read_token<R: BufRead>(r: &mut R) -> Result<usize> {
    let mut byte = [0u8; 1];
    let mut token = String::new();
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        let c = byte[0];
        if c == b'#' && token.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
        } else if c.is_ascii_whitespace() {
            if !token.is_empty() {
                break;
            }
        } else if c.is_ascii_digit() {
            token.push(c as char);
        } else {
            return Err(Error::Parse(format!(
                "unexpected byte {c:#x} in PGM header"
            )));
        }
    }
    token
        .parse()
        .map_err(|_| Error::Parse(format!("bad PGM header number {token:?}")))
}
