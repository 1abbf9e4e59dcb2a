use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{LinearImage, MaskImage, ShotManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageFormat {
    Pfm,
    /// 16-bit PNG whose code values are already linear.
    Png16Linear,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pfm" => Some(ImageFormat::Pfm),
            "png" => Some(ImageFormat::Png16Linear),
            _ => None,
        }
    }
}

/// Decoded PFM payload in planar layout, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmData {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

fn next_header_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("PFM", "truncated header"))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end])
        .map(|s| s.trim_end_matches('\r'))
        .map_err(|_| Error::format("PFM", "header is not ASCII"))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<PfmData> {
    let mut pos = 0;
    let channels = match next_header_line(bytes, &mut pos)?.trim() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::format("PFM", format!("bad magic {other:?}"))),
    };
    let dims = next_header_line(bytes, &mut pos)?;
    let mut it = dims.split_whitespace().map(str::parse::<usize>);
    let (width, height) = match (it.next(), it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h)), None) if w > 0 && h > 0 => (w, h),
        _ => return Err(Error::format("PFM", format!("bad dimensions line {dims:?}"))),
    };
    let scale_line = next_header_line(bytes, &mut pos)?;
    let scale: f32 = scale_line
        .trim()
        .parse()
        .map_err(|_| Error::format("PFM", format!("bad scale {scale_line:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format("PFM", "scale must be finite and non-zero"));
    }
    let little = scale < 0.0;
    let count = width * height * channels;
    let body = &bytes[pos..];
    if body.len() != count * 4 {
        return Err(Error::format(
            "PFM",
            format!("expected {} data bytes, found {}", count * 4, body.len()),
        ));
    }
    let n = width * height;
    let mut data = vec![0f32; count];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let c = i % channels;
        let p = i / channels;
        // Rows are stored bottom-up.
        let (x, row) = (p % width, p / width);
        let y = height - 1 - row;
        data[c * n + y * width + x] = v;
    }
    Ok(PfmData {
        width,
        height,
        channels,
        data,
    })
}

/// Encodes planar samples as a little-endian PFM (`PF` for 3 channels,
/// `Pf` for 1).
pub fn encode_pfm(width: usize, height: usize, channels: usize, planar: &[f32]) -> Vec<u8> {
    assert!(channels == 1 || channels == 3, "PFM holds 1 or 3 channels");
    assert_eq!(planar.len(), width * height * channels);
    let magic = if channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(planar.len() * 4);
    let n = width * height;
    for row in (0..height).rev() {
        for x in 0..width {
            for c in 0..channels {
                out.extend_from_slice(&planar[c * n + row * width + x].to_le_bytes());
            }
        }
    }
    out
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn decode_png16(path: &Path) -> Result<LinearImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format("PNG", e.to_string()))?;
    let mut buf = vec![
        0;
        reader
            .output_buffer_size()
            .ok_or_else(|| Error::format("PNG", "image too large"))?
    ];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format("PNG", e.to_string()))?;
    if info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::format("PNG", format!("expected 16-bit samples, got {:?}", info.bit_depth)));
    }
    let stride_samples = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(Error::format("PNG", format!("unsupported color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];
    let sample = |i: usize| u16::from_be_bytes([bytes[2 * i], bytes[2 * i + 1]]) as f32 / 65535.0;
    Ok(LinearImage::from_fn(w, h, |x, y| {
        let base = (y * w + x) * stride_samples;
        if stride_samples < 3 {
            let v = sample(base);
            [v, v, v]
        } else {
            [sample(base), sample(base + 1), sample(base + 2)]
        }
    }))
}

fn encode_png(path: &Path, w: usize, h: usize, depth: png::BitDepth, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(depth);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::format("PNG", e.to_string()))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| Error::format("PNG", e.to_string()))?;
    writer.finish().map_err(|e| Error::format("PNG", e.to_string()))
}

pub fn read_image(path: &Path, format: ImageFormat) -> Result<LinearImage> {
    let img = match format {
        ImageFormat::Pfm => {
            let pfm = decode_pfm(&read_bytes(path)?)?;
            if pfm.channels != 3 {
                return Err(Error::format("PFM", "expected a 3-channel (PF) image"));
            }
            LinearImage::from_planes(pfm.width, pfm.height, pfm.data)?
        }
        ImageFormat::Png16Linear => decode_png16(path)?,
    };
    img.validate()?;
    Ok(img)
}

pub fn write_image(path: &Path, img: &LinearImage, format: ImageFormat) -> Result<()> {
    match format {
        ImageFormat::Pfm => write_bytes(path, &encode_pfm(img.width, img.height, 3, &img.data)),
        ImageFormat::Png16Linear => {
            let n = img.pixels();
            let mut bytes = Vec::with_capacity(n * 6);
            for p in 0..n {
                for c in 0..3 {
                    let v = (img.data[c * n + p].clamp(0.0, 1.0) * 65535.0).round() as u16;
                    bytes.extend_from_slice(&v.to_be_bytes());
                }
            }
            encode_png(path, img.width, img.height, png::BitDepth::Sixteen, &bytes)
        }
    }
}

pub fn read_mask(path: &Path) -> Result<MaskImage> {
    let pfm = decode_pfm(&read_bytes(path)?)?;
    let data = if pfm.channels == 1 {
        pfm.data
    } else {
        pfm.data[..pfm.width * pfm.height].to_vec()
    };
    MaskImage::from_data(pfm.width, pfm.height, data)
}

pub fn write_mask(path: &Path, mask: &MaskImage) -> Result<()> {
    write_bytes(path, &encode_pfm(mask.width, mask.height, 1, &mask.data))
}

/// Writes interleaved 8-bit RGB as PNG.
pub fn write_png8(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    encode_png(path, width, height, png::BitDepth::Eight, rgb)
}

pub fn read_manifest(path: &Path) -> Result<ShotManifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

pub fn write_manifest(path: &Path, manifest: &ShotManifest) -> Result<()> {
    let mut file = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    serde_json::to_writer_pretty(&mut file, manifest)?;
    file.write_all(b"\n").map_err(|e| Error::io(path, e))
}
