//! Raster I/O: binary PGM (8- and 16-bit), grayscale PNG, label maps,
//! transition overlays, and grayscale PFM for float fields.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{GrayImage, LabelMap, FLUID, GAS, GRAIN};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

struct PnmHeader {
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_p5_header(bytes: &[u8]) -> Result<PnmHeader> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format("not a binary PGM (missing P5 magic)".into()));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("truncated PGM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("malformed PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("malformed PGM header".into()))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Format("malformed PGM header".into()));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!(
            "unsupported PGM geometry {width}x{height} maxval {maxval}"
        )));
    }
    Ok(PnmHeader {
        width: width as usize,
        height: height as usize,
        maxval: maxval as u32,
        data_start: pos + 1,
    })
}

/// Decodes a binary PGM. Sample values are returned unscaled.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let hdr = parse_p5_header(bytes)?;
    let n = hdr.width * hdr.height;
    let payload = &bytes[hdr.data_start..];
    let data: Vec<f64> = if hdr.maxval < 256 {
        if payload.len() < n {
            return Err(Error::Format("truncated PGM pixel data".into()));
        }
        payload[..n].iter().map(|&b| b as f64).collect()
    } else {
        if payload.len() < 2 * n {
            return Err(Error::Format("truncated PGM pixel data".into()));
        }
        payload[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    };
    GrayImage::new(hdr.width, hdr.height, data)
}

pub fn encode_pgm(img: &GrayImage, depth: BitDepth) -> Vec<u8> {
    let (maxval, bytes_per) = match depth {
        BitDepth::Eight => (255u32, 1),
        BitDepth::Sixteen => (65535u32, 2),
    };
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    out.reserve(img.len() * bytes_per);
    for &v in img.data() {
        let q = v.round().clamp(0.0, maxval as f64) as u32;
        match depth {
            BitDepth::Eight => out.push(q as u8),
            BitDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm(img: &GrayImage, path: &Path, depth: BitDepth) -> Result<()> {
    write_bytes(path, &encode_pgm(img, depth))
}

pub fn read_png(path: &Path) -> Result<GrayImage> {
    let dynimg = image::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let data = match dynimg {
        image::DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        other => other.into_luma8().into_raw().into_iter().map(f64::from).collect(),
    };
    GrayImage::new(w, h, data)
}

pub fn write_png(img: &GrayImage, path: &Path) -> Result<()> {
    let raw: Vec<u8> = img
        .data()
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer size matches dimensions");
    buf.save(path)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Reads a raster by extension: `.pgm`/`.pnm` or `.png`.
pub fn read_raster(path: &Path) -> Result<GrayImage> {
    let meta = fs::metadata(path)?;
    if meta.len() == 0 {
        return Err(Error::Format(format!("{} is empty", path.display())));
    }
    match extension(path).as_deref() {
        Some("png") => read_png(path),
        Some("pgm") | Some("pnm") => read_pgm(path),
        _ => Err(Error::Format(format!(
            "{}: unsupported raster extension (expected .pgm or .png)",
            path.display()
        ))),
    }
}

pub fn write_raster(img: &GrayImage, path: &Path) -> Result<()> {
    match extension(path).as_deref() {
        Some("png") => write_png(img, path),
        _ => write_pgm(img, path, BitDepth::Eight),
    }
}

pub fn is_raster_path(path: &Path) -> bool {
    matches!(extension(path).as_deref(), Some("png" | "pgm" | "pnm"))
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

/// Class indices written verbatim into an 8-bit PGM.
pub fn write_labels(labels: &LabelMap, path: &Path) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    out.extend_from_slice(labels.labels());
    write_bytes(path, &out)
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let bytes = fs::read(path)?;
    let hdr = parse_p5_header(&bytes)?;
    if hdr.maxval > 255 {
        return Err(Error::Format("label maps must be 8-bit".into()));
    }
    let n = hdr.width * hdr.height;
    let payload = &bytes[hdr.data_start..];
    if payload.len() < n {
        return Err(Error::Format("truncated label map".into()));
    }
    LabelMap::new(hdr.width, hdr.height, payload[..n].to_vec())
}

/// Boolean mask as a PGM with maxval 1.
pub fn write_mask(width: usize, height: usize, flags: &[bool], path: &Path) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n1\n").into_bytes();
    out.extend(flags.iter().map(|&f| f as u8));
    write_bytes(path, &out)
}

/// RGB rendering of a three-phase label map: gas black, grain tan, fluid white.
pub fn write_label_overlay(labels: &LabelMap, path: &Path) -> Result<()> {
    let mut raw = Vec::with_capacity(labels.labels().len() * 3);
    for &l in labels.labels() {
        let rgb = match l {
            GAS => [0, 0, 0],
            GRAIN => [210, 180, 140],
            FLUID => [255, 255, 255],
            _ => [128, 128, 128],
        };
        raw.extend_from_slice(&rgb);
    }
    let buf = image::RgbImage::from_raw(labels.width() as u32, labels.height() as u32, raw)
        .expect("buffer size matches dimensions");
    buf.save(path)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Grayscale portable float map (little-endian, bottom-up rows).
pub fn write_pfm(width: usize, height: usize, values: &[f64], path: &Path) -> Result<()> {
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for y in (0..height).rev() {
        for v in &values[y * width..(y + 1) * width] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    write_bytes(path, &out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}
