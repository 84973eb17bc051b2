//! Readers and writers for images, depth maps and point clouds.
//!
//! Every reader parses from a byte slice and validates sizes before allocating, so
//! malformed input yields [`Error::Format`] rather than a panic. The path-based helpers at
//! the end only add filesystem access and dispatch on the file extension.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, InvDepthMap};

/// Grid of `f32` samples in row-major, top-down order.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

fn checked_len(width: usize, height: usize, per: usize) -> Result<usize> {
    width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(per))
        .ok_or_else(|| Error::format(format!("image dimensions {width}x{height} overflow")))
}

/// Whitespace-separated header tokens with `#` comments, as used by PFM and PNM.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        HeaderReader { bytes, pos: 0 }
    }

    fn token(&mut self, what: &str) -> Result<&'a str> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|b| *b != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
                None => return Err(Error::format(format!("header ends before {what}"))),
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::format(format!("{what} is not ASCII")))
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self.token(what)?;
        tok.parse().map_err(|_| Error::format(format!("invalid {what} {tok:?}")))
    }

    /// Consumes the single whitespace byte that ends a binary header.
    fn payload(&mut self) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(&self.bytes[self.pos + 1..]),
            _ => Err(Error::format("missing whitespace after header")),
        }
    }
}

// ---------------------------------------------------------------- PFM

/// Parses a grayscale PFM (`Pf`). A negative scale means little-endian samples.
pub fn pfm_decode(bytes: &[u8]) -> Result<FloatImage> {
    let mut h = HeaderReader::new(bytes);
    match h.token("magic")? {
        "Pf" => {}
        "PF" => return Err(Error::format("color PFM is not supported")),
        other => return Err(Error::format(format!("not a PFM file (magic {other:?})"))),
    }
    let width: usize = h.number("width")?;
    let height: usize = h.number("height")?;
    let scale: f64 = h.number("scale")?;
    if !(scale.is_finite() && scale != 0.0) {
        return Err(Error::format("PFM scale must be finite and non-zero"));
    }
    let payload = h.payload()?;
    let len = checked_len(width, height, 4)?;
    if payload.len() != len {
        return Err(Error::format(format!("PFM payload has {} bytes, expected {len}", payload.len())));
    }
    let little = scale < 0.0;
    let mut data = vec![0f32; width * height];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        // Rows are stored bottom-up.
        let (x, row) = (k % width, k / width);
        data[(height - 1 - row) * width + x] = v;
    }
    Ok(FloatImage { width, height, data })
}

/// Little-endian grayscale PFM. Non-finite samples are rejected.
pub fn pfm_encode(img: &FloatImage) -> Result<Vec<u8>> {
    if img.data.len() != checked_len(img.width, img.height, 1)? {
        return Err(Error::Dimension("sample count does not match dimensions".into()));
    }
    if img.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::format("PFM writer refuses non-finite samples"));
    }
    let mut out = format!("Pf\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    out.reserve(img.data.len() * 4);
    for row in (0..img.height).rev() {
        for v in &img.data[row * img.width..(row + 1) * img.width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn to_f32(v: f64) -> Result<f32> {
    let s = v as f32;
    if !s.is_finite() || (s == 0.0 && v != 0.0) {
        return Err(Error::format(format!("value {v} is not representable as a finite non-zero f32")));
    }
    Ok(s)
}

/// Inverse depth map as PFM; empty pixels are stored as 0.
pub fn depth_to_pfm(map: &InvDepthMap) -> Result<Vec<u8>> {
    let data = map.values().iter().map(|v| v.map_or(Ok(0.0), to_f32)).collect::<Result<_>>()?;
    pfm_encode(&FloatImage { width: map.width(), height: map.height(), data })
}

/// Inverse depth map from PFM; zero samples are empty, negative or non-finite ones are errors.
pub fn depth_from_pfm(bytes: &[u8]) -> Result<InvDepthMap> {
    let img = pfm_decode(bytes)?;
    let values = img
        .data
        .iter()
        .map(|&v| match v {
            0.0 => Ok(None),
            v if v > 0.0 && v.is_finite() => Ok(Some(v as f64)),
            v => Err(Error::format(format!("invalid inverse depth {v} in PFM"))),
        })
        .collect::<Result<_>>()?;
    InvDepthMap::new(img.width, img.height, values)
}

pub fn image_to_pfm(img: &ImageGrid) -> Result<Vec<u8>> {
    let data = img.values().iter().map(|&v| v as f32).collect();
    pfm_encode(&FloatImage { width: img.width(), height: img.height(), data })
}

pub fn image_from_pfm(bytes: &[u8]) -> Result<ImageGrid> {
    let img = pfm_decode(bytes)?;
    ImageGrid::new(img.width, img.height, img.data.iter().map(|&v| v as f64).collect())
        .map_err(|e| Error::format(format!("PFM image: {e}")))
}

// ---------------------------------------------------------------- PNG16 depth

/// Depth scale of the 16-bit PNG depth format: stored value = round(depth * 256).
pub const PNG16_DEPTH_SCALE: f64 = 256.0;

/// 16-bit grayscale PNG of metric depth; 0 marks empty pixels.
pub fn depth_to_png16(map: &InvDepthMap) -> Result<Vec<u8>> {
    let mut raw = Vec::with_capacity(map.values().len() * 2);
    for v in map.values() {
        let stored = match v {
            None => 0u16,
            Some(d) => {
                let s = (PNG16_DEPTH_SCALE / d).round();
                if !(1.0..=65535.0).contains(&s) {
                    return Err(Error::format(format!("depth {} m does not fit the 16-bit encoding", 1.0 / d)));
                }
                s as u16
            }
        };
        raw.extend_from_slice(&stored.to_be_bytes());
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, map.width() as u32, map.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(|e| Error::format(e.to_string()))?;
        writer.write_image_data(&raw).map_err(|e| Error::format(e.to_string()))?;
    }
    Ok(out)
}

struct DecodedPng {
    width: usize,
    height: usize,
    channels: usize,
    sixteen: bool,
    bytes: Vec<u8>,
}

fn png_decode(bytes: &[u8]) -> Result<DecodedPng> {
    let mut decoder = png::Decoder::new(bytes);
    // Keep the bit depth; only expand palettes and sub-byte gray.
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::format(format!("PNG: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(format!("PNG: {e}")))?;
    buf.truncate(info.buffer_size());
    let channels = info.color_type.samples();
    Ok(DecodedPng {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        sixteen: info.bit_depth == png::BitDepth::Sixteen,
        bytes: buf,
    })
}

pub fn depth_from_png16(bytes: &[u8]) -> Result<InvDepthMap> {
    let png = png_decode(bytes)?;
    if !png.sixteen || png.channels != 1 {
        return Err(Error::format("depth PNG must be 16-bit single-channel"));
    }
    let values = png
        .bytes
        .chunks_exact(2)
        .map(|c| match u16::from_be_bytes([c[0], c[1]]) {
            0 => None,
            s => Some(PNG16_DEPTH_SCALE / s as f64),
        })
        .collect();
    InvDepthMap::new(png.width, png.height, values)
}

/// Intensity image from an 8- or 16-bit PNG; color channels are averaged, alpha is dropped.
pub fn image_from_png(bytes: &[u8]) -> Result<ImageGrid> {
    let png = png_decode(bytes)?;
    let max = if png.sixteen { 65535.0 } else { 255.0 };
    let samples: Vec<f64> = if png.sixteen {
        png.bytes.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / max).collect()
    } else {
        png.bytes.iter().map(|&b| b as f64 / max).collect()
    };
    let (color, stride) = match png.channels {
        1 => (1, 1),
        2 => (1, 2),
        3 => (3, 3),
        _ => (3, 4),
    };
    let picked: Vec<f64> = samples.chunks_exact(stride).flat_map(|px| px[..color].to_vec()).collect();
    ImageGrid::from_color(png.width, png.height, color, &picked)
}

// ---------------------------------------------------------------- PGM / PPM

/// Binary PGM (`P5`) or PPM (`P6`, channels averaged) with any maxval up to 65535.
pub fn pnm_decode(bytes: &[u8]) -> Result<ImageGrid> {
    let mut h = HeaderReader::new(bytes);
    let channels = match h.token("magic")? {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format(format!("not a binary PGM/PPM file (magic {other:?})"))),
    };
    let width: usize = h.number("width")?;
    let height: usize = h.number("height")?;
    let maxval: u32 = h.number("maxval")?;
    if !(1..=65535).contains(&maxval) {
        return Err(Error::format(format!("maxval {maxval} outside 1..=65535")));
    }
    let payload = h.payload()?;
    let per = if maxval > 255 { 2 } else { 1 };
    let len = checked_len(width, height, channels * per)?;
    if payload.len() != len {
        return Err(Error::format(format!("PNM payload has {} bytes, expected {len}", payload.len())));
    }
    let raw: Vec<u32> = if per == 2 {
        payload.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as u32).collect()
    } else {
        payload.iter().map(|&b| b as u32).collect()
    };
    if let Some(bad) = raw.iter().find(|&&v| v > maxval) {
        return Err(Error::format(format!("sample {bad} exceeds maxval {maxval}")));
    }
    let samples: Vec<f64> = raw.iter().map(|&v| v as f64 / maxval as f64).collect();
    ImageGrid::from_color(width, height, channels, &samples)
}

/// Binary PGM with maxval 255 (`sixteen_bit = false`) or 65535. Values are clamped to `[0, 1]`.
pub fn pgm_encode(img: &ImageGrid, sixteen_bit: bool) -> Vec<u8> {
    let maxval: u32 = if sixteen_bit { 65535 } else { 255 };
    let mut out = format!("P5\n{} {}\n{maxval}\n", img.width(), img.height()).into_bytes();
    for &v in img.values() {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        if sixteen_bit {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    out
}

// ---------------------------------------------------------------- PLY

/// ASCII PLY with `x y z` doubles and optional `red green blue` bytes per vertex.
pub fn ply_encode(points: &[Vector3<f64>], colors: Option<&[[u8; 3]]>) -> Result<String> {
    if let Some(c) = colors {
        if c.len() != points.len() {
            return Err(Error::Dimension(format!("{} colors for {} points", c.len(), points.len())));
        }
    }
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        points.len()
    );
    if colors.is_some() {
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    s.push_str("end_header\n");
    for (i, p) in points.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(Error::format(format!("point {i} is not finite")));
        }
        // `{}` on f64 prints the shortest string that parses back to the same value.
        s.push_str(&format!("{} {} {}", p.x, p.y, p.z));
        if let Some(c) = colors {
            let [r, g, b] = c[i];
            s.push_str(&format!(" {r} {g} {b}"));
        }
        s.push('\n');
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<[u8; 3]>>,
}

/// Parses an ASCII PLY vertex list. Properties may appear in any order; only `x`, `y`, `z`
/// and optionally `red`, `green`, `blue` are kept. Other elements must come after `vertex`.
pub fn ply_decode(text: &str) -> Result<PlyCloud> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::format("missing ply magic"));
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut ascii = false;
    for line in lines.by_ref() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", _] => ascii = true,
            ["format", other, ..] => return Err(Error::format(format!("unsupported PLY format {other:?}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(Error::format("duplicate vertex element"));
                }
                count = Some(n.parse().map_err(|_| Error::format(format!("invalid vertex count {n:?}")))?);
                in_vertex = true;
            }
            ["element", ..] => {
                if count.is_none() {
                    return Err(Error::format("elements before vertex are not supported"));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::format("list properties on vertices are not supported"))
            }
            ["property", _ty, name] if in_vertex => props.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(Error::format(format!("unexpected header line {line:?}"))),
        }
    }
    if !ascii {
        return Err(Error::format("PLY format line missing"));
    }
    let count = count.ok_or_else(|| Error::format("PLY has no vertex element"))?;
    let find = |name: &str| props.iter().position(|p| p == name);
    let (Some(ix), Some(iy), Some(iz)) = (find("x"), find("y"), find("z")) else {
        return Err(Error::format("vertex element lacks x, y or z"));
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        (None, None, None) => None,
        _ => return Err(Error::format("partial color properties")),
    };
    let mut points = Vec::new();
    let mut colors = rgb.map(|_| Vec::new());
    for k in 0..count {
        let line = lines.next().ok_or_else(|| Error::format(format!("PLY ends after {k} of {count} vertices")))?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != props.len() {
            return Err(Error::format(format!("vertex {k} has {} values, expected {}", vals.len(), props.len())));
        }
        let num = |i: usize| -> Result<f64> {
            vals[i].parse().map_err(|_| Error::format(format!("vertex {k}: invalid number {:?}", vals[i])))
        };
        points.push(Vector3::new(num(ix)?, num(iy)?, num(iz)?));
        if let (Some(idx), Some(out)) = (rgb, colors.as_mut()) {
            let mut c = [0u8; 3];
            for (slot, &i) in c.iter_mut().zip(&idx) {
                *slot =
                    vals[i].parse().map_err(|_| Error::format(format!("vertex {k}: invalid color {:?}", vals[i])))?;
            }
            out.push(c);
        }
    }
    Ok(PlyCloud { points, colors })
}

// ---------------------------------------------------------------- files

fn read(path: &Path) -> Result<Vec<u8>> {
    Ok(fs::read(path)?)
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// Reads an intensity image by extension: `.pgm`, `.ppm`, `.png` or `.pfm`.
pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let bytes = read(path)?;
    match extension(path).as_str() {
        "pgm" | "ppm" | "pnm" => pnm_decode(&bytes),
        "png" => image_from_png(&bytes),
        "pfm" => image_from_pfm(&bytes),
        other => Err(Error::format(format!("unknown image extension {other:?}"))),
    }
}

/// Writes an intensity image by extension: `.pgm` (16-bit) or `.pfm`.
pub fn write_image(path: &Path, img: &ImageGrid) -> Result<()> {
    let bytes = match extension(path).as_str() {
        "pgm" => pgm_encode(img, true),
        "pfm" => image_to_pfm(img)?,
        other => return Err(Error::format(format!("cannot write images as {other:?}"))),
    };
    Ok(fs::write(path, bytes)?)
}

/// Reads an inverse depth map: `.pfm` stores inverse depth, `.png` 16-bit metric depth.
pub fn read_depth(path: &Path) -> Result<InvDepthMap> {
    let bytes = read(path)?;
    match extension(path).as_str() {
        "pfm" => depth_from_pfm(&bytes),
        "png" => depth_from_png16(&bytes),
        other => Err(Error::format(format!("unknown depth map extension {other:?}"))),
    }
}

pub fn write_depth(path: &Path, map: &InvDepthMap) -> Result<()> {
    let bytes = match extension(path).as_str() {
        "pfm" => depth_to_pfm(map)?,
        "png" => depth_to_png16(map)?,
        other => return Err(Error::format(format!("unknown depth map extension {other:?}"))),
    };
    Ok(fs::write(path, bytes)?)
}

pub fn read_ply(path: &Path) -> Result<PlyCloud> {
    let bytes = read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::format("PLY is not valid UTF-8"))?;
    ply_decode(text)
}

pub fn write_ply(path: &Path, points: &[Vector3<f64>], colors: Option<&[[u8; 3]]>) -> Result<()> {
    Ok(fs::write(path, ply_encode(points, colors)?)?)
}
