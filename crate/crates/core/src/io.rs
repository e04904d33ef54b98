//! File helpers: atomic writes plus PNG and PFM image codecs.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{bad_data, Error, Result};

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Row-major RGB image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = 3 * (row * self.width + col);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

fn quantize(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Data(format!("png header: {e}")))?;
        let bytes: Vec<u8> = img.data.iter().map(|&x| quantize(x)).collect();
        w.write_image_data(&bytes).map_err(|e| Error::Data(format!("png data: {e}")))?;
    }
    Ok(buf)
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| Error::Data(format!("png: {e}")))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Data("png too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Data(format!("png: {e}")))?;
    if info.bit_depth != png::BitDepth::Eight {
        bad_data!("only 8-bit PNG is supported");
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        other => bad_data!("unsupported PNG color type {other:?}"),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut img = RgbImage::new(w, h);
    for p in 0..w * h {
        let px = &buf[p * channels..(p + 1) * channels];
        for c in 0..3 {
            let v = if channels == 1 { px[0] } else { px[c] };
            img.data[3 * p + c] = v as f64 / 255.0;
        }
    }
    Ok(img)
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    write_atomic(path, &encode_png(img)?)
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    decode_png(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Single-channel little-endian PFM. `values` is row-major, top row first;
/// the file stores rows bottom-up as the format requires.
pub fn encode_pfm(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), width * height);
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for row in (0..height).rev() {
        for &v in &values[row * width..(row + 1) * width] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
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
            bad_data!("truncated PFM header");
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "Pf" {
        bad_data!("only single-channel PFM (Pf) is supported");
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Data(format!("bad PFM dimension {s}")));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let scale: f64 = fields[3].parse().map_err(|_| Error::Data("bad PFM scale".into()))?;
    let little = scale < 0.0;
    let body = &bytes[pos.min(bytes.len())..];
    if body.len() != 4 * w * h {
        bad_data!("PFM payload has {} bytes, expected {}", body.len(), 4 * w * h);
    }
    let mut values = vec![0.0; w * h];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (file_row, col) = (i / w, i % w);
        values[(h - 1 - file_row) * w + col] = v as f64;
    }
    Ok((w, h, values))
}

pub fn write_pfm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    write_atomic(path, &encode_pfm(width, height, values))
}

pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    decode_pfm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_within_quantization() {
        let mut img = RgbImage::new(5, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.037) % 1.0;
        }
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!((back.width, back.height), (5, 3));
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn pfm_round_trip_is_exact_in_f32() {
        let values: Vec<f64> = (0..12).map(|i| i as f64 * 0.1 - 0.3).collect();
        let (w, h, back) = decode_pfm(&encode_pfm(4, 3, &values)).unwrap();
        assert_eq!((w, h), (4, 3));
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn pfm_stores_bottom_row_first() {
        let bytes = encode_pfm(1, 2, &[1.0, 2.0]);
        let payload = &bytes[bytes.len() - 8..];
        assert_eq!(f32::from_le_bytes(payload[0..4].try_into().unwrap()), 2.0);
    }
}
