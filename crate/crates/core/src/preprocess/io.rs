use std::path::Path;

use super::ImageRaster;
use crate::{Error, Result};

fn is_pnm_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    /// Skips whitespace and `#` comments, which run to the end of the line.
    fn skip_filler(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && !matches!(self.bytes[self.pos], b'\n' | b'\r') {
                    self.pos += 1;
                }
            } else if is_pnm_space(b) {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_filler();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::invalid(format!("PGM header: bad {what}")))
    }
}

/// Decodes a binary (P5) PGM. Samples are one byte when maxval < 256 and two
/// big-endian bytes otherwise; they are rescaled to 0-255 by `v * 255 / maxval`
/// (exact when maxval is 255).
pub fn decode_pgm(bytes: &[u8]) -> Result<ImageRaster> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::invalid("not a binary PGM (missing P5 magic)"));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::invalid("PGM header: zero dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::invalid(format!("PGM header: maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates maxval from the raster.
    match bytes.get(h.pos) {
        Some(&b) if is_pnm_space(b) => h.pos += 1,
        _ => return Err(Error::invalid("PGM header: missing separator before raster")),
    }
    let n = width * height;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let raster = bytes
        .get(h.pos..h.pos + n * sample_bytes)
        .ok_or_else(|| Error::invalid("PGM raster truncated"))?;
    let scale = 255.0 / f64::from(maxval);
    let pixels = (0..n)
        .map(|i| {
            let v = if sample_bytes == 1 {
                u32::from(raster[i])
            } else {
                u32::from(u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]))
            };
            if v > maxval {
                return Err(Error::invalid(format!("PGM sample {v} exceeds maxval {maxval}")));
            }
            Ok(if maxval == 255 { f64::from(v) } else { f64::from(v) * scale })
        })
        .collect::<Result<Vec<_>>>()?;
    ImageRaster::new(width, height, 1, pixels)
}

/// Encodes a single-channel raster as an 8-bit P5 PGM, rounding intensities.
pub fn encode_pgm(img: &ImageRaster) -> Result<Vec<u8>> {
    if img.channels() != 1 {
        return Err(Error::invalid("PGM output needs a single-channel raster"));
    }
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

/// Reads a raster from disk. P5 PGM is decoded by [`decode_pgm`]; anything
/// else (PNG at minimum) goes through the `image` crate. Alpha is dropped and
/// 16-bit samples are rescaled to 0-255.
pub fn load_image(path: &Path) -> Result<ImageRaster> {
    let bytes = std::fs::read(path).map_err(|e| Error::load(path, e))?;
    if bytes.starts_with(b"P5") {
        return decode_pgm(&bytes).map_err(|e| Error::load(path, e));
    }
    let img = image::load_from_memory(&bytes).map_err(|e| Error::load(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raster = if img.color().has_color() {
        let rgb = img.to_rgb16();
        let mut planes = vec![0.0; w * h * 3];
        for (i, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                planes[c * w * h + i] = f64::from(px[c]) * 255.0 / 65535.0;
            }
        }
        ImageRaster::new(w, h, 3, planes)
    } else if matches!(img.color(), image::ColorType::L8 | image::ColorType::La8) {
        let luma = img.to_luma8();
        ImageRaster::new(w, h, 1, luma.pixels().map(|p| f64::from(p[0])).collect())
    } else {
        let luma = img.to_luma16();
        ImageRaster::new(w, h, 1, luma.pixels().map(|p| f64::from(p[0]) * 255.0 / 65535.0).collect())
    };
    raster.map_err(|e| Error::load(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_p5_with_comments() {
        let mut bytes = b"P5\n# made by hand\n3 2\n# another\n255\n".to_vec();
        bytes.extend([0u8, 10, 20, 30, 40, 255]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (3, 2, 1));
        assert_eq!(img.pixels(), &[0.0, 10.0, 20.0, 30.0, 40.0, 255.0]);
    }

    #[test]
    fn raster_byte_may_look_like_whitespace() {
        // First sample is 0x0a, right after the single separator byte.
        let mut bytes = b"P5 2 1 255\n".to_vec();
        bytes.extend([10u8, 32]);
        assert_eq!(decode_pgm(&bytes).unwrap().pixels(), &[10.0, 32.0]);
    }

    #[test]
    fn sixteen_bit_is_big_endian_and_rescaled() {
        let mut bytes = b"P5 2 1 65535\n".to_vec();
        bytes.extend([0xff, 0xff, 0x00, 0x00]);
        assert_eq!(decode_pgm(&bytes).unwrap().pixels(), &[255.0, 0.0]);
        let mut small = b"P5 1 1 15\n".to_vec();
        small.push(15);
        assert_eq!(decode_pgm(&small).unwrap().pixels(), &[255.0]);
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        assert!(decode_pgm(b"P5 2 2 255\n\x00\x01").is_err());
        assert!(decode_pgm(b"P2 1 1 255\n0").is_err());
        assert!(decode_pgm(b"P5 1 1 0\n\x00").is_err());
        assert!(decode_pgm(b"P5 1 1 200\n\xff").is_err());
    }

    #[test]
    fn pgm_and_png_files_load() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageRaster::new(4, 3, 1, (0..12).map(|v| (v * 20) as f64).collect()).unwrap();
        let pgm = dir.path().join("a.pgm");
        std::fs::write(&pgm, encode_pgm(&img).unwrap()).unwrap();
        assert_eq!(load_image(&pgm).unwrap(), img);

        let png = dir.path().join("b.png");
        let buf = image::RgbImage::from_fn(2, 1, |x, _| image::Rgb([255 * x as u8, 0, 0]));
        buf.save(&png).unwrap();
        let loaded = load_image(&png).unwrap();
        assert_eq!(loaded.channels(), 3);
        assert_eq!(loaded.get(0, 0, 1), 255.0);
        assert_eq!(loaded.get(1, 0, 1), 0.0);

        let missing = dir.path().join("nope.png");
        assert!(matches!(load_image(&missing), Err(Error::Load { .. })));
    }
}
