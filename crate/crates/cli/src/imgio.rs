//! Image files: binary PGM/PPM (8 or 16 bit) and PNG.
//!
//! Pixels are held as a `C x H x W` tensor in `[0, 1]`, channels in R,G,B
//! order. Saving clamps to `[0, 1]` and quantises with round-half-away.

use std::path::Path;

use redip_core::{Rng, Tensor32};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },
    #[error("truncated pixel data: expected {expected} bytes after offset {offset}, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("unsupported image: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("png: {0}")]
    Png(#[from] image::ImageError),
    #[error(transparent)]
    Tensor(#[from] redip_core::Error),
}

type Result<T> = std::result::Result<T, ImageError>;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFile {
    pub pixels: Tensor32,
    /// Bits per sample of the source (8 or 16); also used when saving.
    pub bit_depth: u8,
}

impl ImageFile {
    pub fn new(pixels: Tensor32) -> Result<Self> {
        let (c, _, _) = pixels.chw()?;
        if c != 1 && c != 3 {
            return Err(ImageError::Unsupported(format!("{c} channels")));
        }
        Ok(Self { pixels, bit_depth: 8 })
    }

    pub fn channels(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Container {
    Pnm,
    Png,
}

fn container_for(path: &Path) -> Result<Container> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "pgm" | "ppm" | "pnm" => Ok(Container::Pnm),
        "png" => Ok(Container::Png),
        other => Err(ImageError::Unsupported(format!(
            "extension `{other}` (use .pgm, .ppm or .png)"
        ))),
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageFile> {
    let bytes = std::fs::read(path.as_ref())?;
    if bytes.starts_with(b"\x89PNG") {
        return decode_png(&bytes);
    }
    if bytes.first() == Some(&b'P') {
        return decode_pnm(&bytes);
    }
    Err(ImageError::Format {
        offset: 0,
        detail: "not a binary PGM/PPM or PNG file".into(),
    })
}

pub fn save_image(path: impl AsRef<Path>, img: &ImageFile) -> Result<()> {
    let path = path.as_ref();
    let bytes = match container_for(path)? {
        Container::Pnm => encode_pnm(img)?,
        Container::Png => encode_png(img)?,
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

fn quantise(v: f32, max: u32) -> u32 {
    (v.clamp(0.0, 1.0) as f64 * max as f64).round() as u32
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::Format {
                offset: start,
                detail: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| ImageError::Format {
                offset: start,
                detail: format!("{what} out of range"),
            })
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<ImageFile> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(b"P2") | Some(b"P3") => return Err(ImageError::Unsupported("ASCII PGM/PPM".into())),
        _ => {
            return Err(ImageError::Format {
                offset: 0,
                detail: "expected magic P5 or P6".into(),
            })
        }
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval_at = h.pos;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::Format {
            offset: maxval_at,
            detail: "zero image extent".into(),
        });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(ImageError::Format {
            offset: maxval_at,
            detail: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(ImageError::Format {
            offset: h.pos,
            detail: "expected a single whitespace byte before pixel data".into(),
        });
    }
    let offset = h.pos + 1;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let expected = width * height * channels * sample_bytes;
    let found = bytes.len() - offset;
    if found < expected {
        return Err(ImageError::Truncated {
            offset,
            expected,
            found,
        });
    }
    let raw = &bytes[offset..offset + expected];
    let scale = 1.0 / maxval as f64;
    let sample = |i: usize| -> f32 {
        let v = if sample_bytes == 1 {
            raw[i] as u32
        } else {
            u16::from_be_bytes([raw[2 * i], raw[2 * i + 1]]) as u32
        };
        (v.min(maxval) as f64 * scale) as f32
    };
    // interleaved HWC on disk, planar CHW in memory
    let mut data = vec![0.0f32; width * height * channels];
    for p in 0..width * height {
        for c in 0..channels {
            data[c * width * height + p] = sample(p * channels + c);
        }
    }
    Ok(ImageFile {
        pixels: Tensor32::from_vec(&[channels, height, width], data)?,
        bit_depth: if maxval < 256 { 8 } else { 16 },
    })
}

fn interleaved(img: &ImageFile, max: u32) -> Vec<u32> {
    let (c, plane) = (img.channels(), img.height() * img.width());
    let d = img.pixels.data();
    (0..plane)
        .flat_map(|p| (0..c).map(move |ch| quantise(d[ch * plane + p], max)))
        .collect()
}

pub fn encode_pnm(img: &ImageFile) -> Result<Vec<u8>> {
    let magic = match img.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(ImageError::Unsupported(format!("{c} channels"))),
    };
    let max = if img.bit_depth > 8 { 65535 } else { 255 };
    let mut out = format!("{magic}\n{} {}\n{max}\n", img.width(), img.height()).into_bytes();
    for v in interleaved(img, max) {
        if max == 255 {
            out.push(v as u8);
        } else {
            out.extend_from_slice(&(v as u16).to_be_bytes());
        }
    }
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<ImageFile> {
    use image::DynamicImage as D;
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, bit_depth, samples): (usize, u8, Vec<f32>) = match img {
        D::ImageLuma8(_) | D::ImageLumaA8(_) => (1, 8, to_f32(img.to_luma8().into_raw(), 255.0)),
        D::ImageLuma16(_) | D::ImageLumaA16(_) => (1, 16, to_f32(img.to_luma16().into_raw(), 65535.0)),
        D::ImageRgb16(_) | D::ImageRgba16(_) => (3, 16, to_f32(img.to_rgb16().into_raw(), 65535.0)),
        _ => (3, 8, to_f32(img.to_rgb8().into_raw(), 255.0)),
    };
    let plane = w * h;
    let mut data = vec![0.0f32; plane * channels];
    for p in 0..plane {
        for c in 0..channels {
            data[c * plane + p] = samples[p * channels + c];
        }
    }
    Ok(ImageFile {
        pixels: Tensor32::from_vec(&[channels, h, w], data)?,
        bit_depth,
    })
}

fn to_f32<S: Into<u32> + Copy>(raw: Vec<S>, max: f64) -> Vec<f32> {
    raw.into_iter().map(|v| (v.into() as f64 / max) as f32).collect()
}

fn encode_png(img: &ImageFile) -> Result<Vec<u8>> {
    use image::{ExtendedColorType, ImageEncoder};
    let (w, h) = (img.width() as u32, img.height() as u32);
    let wide = img.bit_depth > 8;
    let color = match (img.channels(), wide) {
        (1, false) => ExtendedColorType::L8,
        (1, true) => ExtendedColorType::L16,
        (3, false) => ExtendedColorType::Rgb8,
        (3, true) => ExtendedColorType::Rgb16,
        (c, _) => return Err(ImageError::Unsupported(format!("{c} channels"))),
    };
    let buf: Vec<u8> = if wide {
        interleaved(img, 65535)
            .into_iter()
            .flat_map(|v| (v as u16).to_be_bytes())
            .collect()
    } else {
        interleaved(img, 255).into_iter().map(|v| v as u8).collect()
    };
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(&buf, w, h, color)?;
    Ok(out)
}

/// `img + N(0, sigma²)` per sample, not clamped.
pub fn add_awgn(img: &Tensor32, sigma: f64, seed: u64) -> std::result::Result<Tensor32, redip_core::Error> {
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let noise: Tensor32 = Rng::new(seed).normal(img.shape(), sigma)?;
    img.add(&noise)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pnm_header_with_comments() {
        let mut bytes = b"P5 # comment\n2 1\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.pixels.data(), &[0.0, 1.0]);
        assert_eq!(img.pixels.shape(), &[1, 1, 2]);
    }

    #[test]
    fn malformed_header_names_offset() {
        let err = decode_pnm(b"P5\n4 x\n255\n").unwrap_err();
        match err {
            ImageError::Format { offset, .. } => assert_eq!(offset, 5),
            e => panic!("{e}"),
        }
        assert!(err_string(b"P5\n4 x\n255\n").contains("byte 5"));
    }

    fn err_string(b: &[u8]) -> String {
        decode_pnm(b).unwrap_err().to_string()
    }

    #[test]
    fn truncated_payload() {
        let err = decode_pnm(b"P6\n2 2\n255\n\x01\x02").unwrap_err();
        assert!(matches!(
            err,
            ImageError::Truncated {
                expected: 12,
                found: 2,
                ..
            }
        ));
    }

    #[test]
    fn sixteen_bit_max_is_one() {
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.pixels.data(), &[1.0]);
        assert_eq!(img.bit_depth, 16);
    }

    #[test]
    fn rgb_planar_layout() {
        let bytes = b"P6\n2 1\n255\n\x00\x33\x66\x99\xcc\xff".to_vec();
        let img = decode_pnm(&bytes).unwrap();
        let q: Vec<u32> = img.pixels.data().iter().map(|&v| quantise(v, 255)).collect();
        assert_eq!(q, vec![0x00, 0x99, 0x33, 0xcc, 0x66, 0xff]);
        assert_eq!(encode_pnm(&img).unwrap(), bytes);
    }
}
