//! Image decoding, encoding and resampling.
//!
//! NetPBM (P2, P3, P5, P6, 8 or 16 bit) is read and written here; PNG goes
//! through the `image` crate. Decoded images hold interleaved samples scaled
//! to [0, 1].

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Intensity threshold for mask binarization, on the 0–255 scale.
pub const MASK_THRESHOLD: f32 = 127.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelMode {
    Rgb,
    Gray,
}

impl ChannelMode {
    pub fn channels(self) -> usize {
        match self {
            ChannelMode::Rgb => 3,
            ChannelMode::Gray => 1,
        }
    }
}

impl std::str::FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rgb" => Ok(ChannelMode::Rgb),
            "gray" | "grey" => Ok(ChannelMode::Gray),
            other => Err(Error::invalid(format!(
                "channel mode '{other}' (expected rgb or gray)"
            ))),
        }
    }
}

impl std::fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ChannelMode::Rgb => "rgb",
            ChannelMode::Gray => "gray",
        })
    }
}

/// Interleaved H×W×C samples in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width * height * channels != data.len() || !(channels == 1 || channels == 3) {
            return Err(Error::invalid(format!(
                "{width}×{height}×{channels} image with {} samples",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Converts to one or three channels; gray uses Rec. 601 luma.
    pub fn to_mode(&self, mode: ChannelMode) -> Image {
        let target = mode.channels();
        if target == self.channels {
            return self.clone();
        }
        let n = self.width * self.height;
        let data = if target == 3 {
            self.data.iter().flat_map(|v| [*v; 3]).collect()
        } else {
            (0..n)
                .map(|i| {
                    let p = &self.data[3 * i..3 * i + 3];
                    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
                })
                .collect()
        };
        Image {
            width: self.width,
            height: self.height,
            channels: target,
            data,
        }
    }

    /// Bilinear resampling with pixel-center alignment and clamped edges.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let c = self.channels;
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        let axis = |dst: usize, scale: f32, len: usize| {
            let src = ((dst as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f32)
        };
        let mut data = Vec::with_capacity(width * height * c);
        for y in 0..height {
            let (y0, y1, fy) = axis(y, sy, self.height);
            for x in 0..width {
                let (x0, x1, fx) = axis(x, sx, self.width);
                for ch in 0..c {
                    let at = |yy: usize, xx: usize| self.data[(yy * self.width + xx) * c + ch];
                    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                    data.push(top * (1.0 - fy) + bottom * fy);
                }
            }
        }
        Image {
            width,
            height,
            channels: c,
            data,
        }
    }

    pub fn resize_nearest(&self, width: usize, height: usize) -> Image {
        let c = self.channels;
        let mut data = Vec::with_capacity(width * height * c);
        for y in 0..height {
            let sy = (((y as f64 + 0.5) * self.height as f64 / height as f64) as usize)
                .min(self.height - 1);
            for x in 0..width {
                let sx = (((x as f64 + 0.5) * self.width as f64 / width as f64) as usize)
                    .min(self.width - 1);
                let at = (sy * self.width + sx) * c;
                data.extend_from_slice(&self.data[at..at + c]);
            }
        }
        Image {
            width,
            height,
            channels: c,
            data,
        }
    }

    /// Channels-first `C×H×W` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let (c, hw) = (self.channels, self.width * self.height);
        Tensor::from_fn([c, self.height, self.width], |i| {
            self.data[(i % hw) * c + i / hw]
        })
    }

    /// Clamps to [0, 1] and quantizes to 8 bits.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

/// Decodes a mask: resized by nearest neighbour to `width`×`height`, then 1
/// where the intensity exceeds [`MASK_THRESHOLD`], else 0. Shape `1×H×W`.
pub fn mask_tensor(mask: &Image, width: usize, height: usize) -> Tensor {
    let gray = mask
        .to_mode(ChannelMode::Gray)
        .resize_nearest(width, height);
    let data = gray
        .data
        .iter()
        .map(|v| if v * 255.0 > MASK_THRESHOLD { 1.0 } else { 0.0 })
        .collect();
    Tensor::new([1, height, width], data).expect("length matches")
}

fn image_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads a NetPBM or PNG file, chosen by its leading bytes.
pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| image_error(path, e.to_string()))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes).map_err(|e| image_error(path, e))
    } else if bytes.len() >= 2 && bytes[0] == b'P' && matches!(bytes[1], b'2' | b'3' | b'5' | b'6')
    {
        decode_netpbm(&bytes).map_err(|e| image_error(path, e))
    } else {
        Err(image_error(
            path,
            "unsupported format (expected PNG or NetPBM P2/P3/P5/P6)",
        ))
    }
}

fn decode_png(bytes: &[u8]) -> std::result::Result<Image, String> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| e.to_string())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let img = if img.color().has_color() {
        let rgb = img.to_rgb8();
        Image::new(
            w,
            h,
            3,
            rgb.as_raw().iter().map(|v| *v as f32 / 255.0).collect(),
        )
    } else {
        let gray = img.to_luma8();
        Image::new(
            w,
            h,
            1,
            gray.as_raw().iter().map(|v| *v as f32 / 255.0).collect(),
        )
    };
    img.map_err(|e| e.to_string())
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, String> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad {what} in header"))
    }
}

fn decode_netpbm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let kind = bytes[1];
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    let channels = if matches!(kind, b'3' | b'6') { 3 } else { 1 };
    let n = width * height * channels;
    let scale = maxval as f32;
    let mut data = Vec::with_capacity(n);
    if matches!(kind, b'2' | b'3') {
        for _ in 0..n {
            let v = h.number("sample")?;
            if v > maxval {
                return Err(format!("sample {v} exceeds maxval {maxval}"));
            }
            data.push(v as f32 / scale);
        }
    } else {
        // Exactly one whitespace byte separates the header from the raster.
        let start = h.pos + 1;
        let wide = maxval > 255;
        let need = n * if wide { 2 } else { 1 };
        let raster = bytes
            .get(start..start + need)
            .ok_or_else(|| format!("raster truncated: need {need} bytes"))?;
        if wide {
            data.extend(
                raster
                    .chunks_exact(2)
                    .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / scale),
            );
        } else {
            data.extend(raster.iter().map(|b| *b as f32 / scale));
        }
        if data.iter().any(|v| *v > 1.0) {
            return Err(format!("sample exceeds maxval {maxval}"));
        }
    }
    Image::new(width, height, channels, data).map_err(|e| e.to_string())
}

/// Writes 8-bit samples as binary PGM (one channel) or PPM (three).
pub fn encode_netpbm(width: usize, height: usize, channels: usize, samples: &[u8]) -> Vec<u8> {
    let magic = if channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(samples);
    out
}

/// Saves 8-bit samples; `.png` paths are PNG-encoded, anything else NetPBM.
pub fn write_image(
    path: &Path,
    width: usize,
    height: usize,
    channels: usize,
    samples: &[u8],
) -> Result<()> {
    if samples.len() != width * height * channels || !(channels == 1 || channels == 3) {
        return Err(image_error(
            path,
            "sample count does not match the dimensions",
        ));
    }
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let color = if channels == 3 {
            image::ExtendedColorType::Rgb8
        } else {
            image::ExtendedColorType::L8
        };
        image::save_buffer_with_format(
            path,
            samples,
            width as u32,
            height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| image_error(path, e.to_string()))
    } else {
        fs::write(path, encode_netpbm(width, height, channels, samples))
            .map_err(|e| image_error(path, e.to_string()))
    }
}
