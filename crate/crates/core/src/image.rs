//! 8-bit images and PNG encoding.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit RGB image, row-major, top row first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[u8; 3]>,
}

/// 8-bit single-channel image, row-major, top row first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        RgbImage {
            width,
            height,
            pixels: vec![[0; 3]; (width * height) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn put(&mut self, x: u32, y: u32, c: [u8; 3]) {
        self.pixels[(y * self.width + x) as usize] = c;
    }

    /// Bilinear lookup at UV `(u, v)` with `v = 0` at the bottom row and
    /// clamped borders.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> [f64; 3] {
        let fx = (u.clamp(0.0, 1.0) * f64::from(self.width) - 0.5).max(0.0);
        let fy = ((1.0 - v.clamp(0.0, 1.0)) * f64::from(self.height) - 0.5).max(0.0);
        let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (x0, y0) = (x0.min(self.width - 1), y0.min(self.height - 1));
        let (tx, ty) = (fx - fx.floor(), fy - fy.floor());
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let p = |x, y| f64::from(self.get(x, y)[k]);
            let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
            let bottom = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
            *o = top * (1.0 - ty) + bottom * ty;
        }
        out
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let flat: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        encode(self.width, self.height, png::ColorType::Rgb, &flat)
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let (width, height, channels, buf) = decode(path)?;
        let pixels = buf
            .chunks_exact(channels)
            .map(|c| match channels {
                1 | 2 => [c[0]; 3],
                _ => [c[0], c[1], c[2]],
            })
            .collect();
        Ok(RgbImage { width, height, pixels })
    }
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![0; (width * height) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode(self.width, self.height, png::ColorType::Grayscale, &self.pixels)
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let (width, height, channels, buf) = decode(path)?;
        let pixels = buf.chunks_exact(channels).map(|c| c[0]).collect();
        Ok(GrayImage { width, height, pixels })
    }
}

fn encode(width: u32, height: u32, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Balanced);
        enc.set_filter(png::Filter::Adaptive);
        let fail = |e: png::EncodingError| Error::invalid(format!("png encoding: {e}"));
        let mut w = enc.write_header().map_err(fail)?;
        w.write_image_data(data).map_err(fail)?;
        w.finish().map_err(fail)?;
    }
    Ok(out)
}

fn decode(path: &Path) -> Result<(u32, u32, usize, Vec<u8>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let bad = |e: png::DecodingError| Error::invalid(format!("{}: {e}", path.display()));
    let mut reader = decoder.read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::invalid(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    buf.truncate(info.buffer_size());
    Ok((info.width, info.height, info.color_type.samples(), buf))
}

/// Writes `bytes` to `path`.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_hits_texel_centers() {
        let mut img = RgbImage::new(2, 1);
        img.put(0, 0, [0, 0, 0]);
        img.put(1, 0, [200, 100, 50]);
        assert_eq!(img.sample_bilinear(0.25, 0.5), [0.0, 0.0, 0.0]);
        assert_eq!(img.sample_bilinear(0.75, 0.5), [200.0, 100.0, 50.0]);
        assert_eq!(img.sample_bilinear(0.5, 0.5), [100.0, 50.0, 25.0]);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rgb = RgbImage::new(3, 2);
        rgb.put(2, 1, [9, 80, 250]);
        let path = dir.path().join("a.png");
        write_bytes(&path, &rgb.to_png().unwrap()).unwrap();
        assert_eq!(RgbImage::read_png(&path).unwrap(), rgb);
        let gray = GrayImage { width: 2, height: 2, pixels: vec![0, 1, 2, 255] };
        write_bytes(&path, &gray.to_png().unwrap()).unwrap();
        assert_eq!(GrayImage::read_png(&path).unwrap(), gray);
        assert_eq!(gray.to_png().unwrap(), gray.to_png().unwrap());
    }
}
