//! In-memory image and modification-map types plus their on-disk formats.
//!
//! Supported formats:
//! - binary P5 grayscale PGM (`maxval <= 255`) for spatial-domain images,
//! - `PIXF1` raw real-valued matrices for JPEG-domain coefficient planes,
//! - `COST1` cost-map pairs (see [`crate::cost::CostPair`]),
//! - `MODM1` ternary modification maps,
//! - plain-text manifests listing one relative path per line.
//!
//! All binary integers and reals are little-endian.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cost::{CostPair, WET_COST};

pub const COST_MAGIC: &[u8; 5] = b"COST1";
pub const PIXF_MAGIC: &[u8; 5] = b"PIXF1";
pub const MODMAP_MAGIC: &[u8; 5] = b"MODM1";

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("unsupported image format {0:?} (only binary P5 PGM is accepted)")]
    UnsupportedFormat(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("maxval {0} exceeds 255")]
    MaxvalTooLarge(u32),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("negative or non-finite cost {value} at element {index}")]
    InvalidCost { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{0}-domain matrix cannot be written as PGM")]
    WrongDomain(Domain),
    #[error("invalid pixel value {value} at element {index}")]
    InvalidPixel { index: usize, value: f32 },
    #[error("invalid modification {value} at element {index}")]
    InvalidModification { index: usize, value: i8 },
    #[error("manifest is not valid UTF-8")]
    ManifestEncoding,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = MediaError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Spatial,
    Jpeg,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::Spatial => f.write_str("spatial"),
            Domain::Jpeg => f.write_str("jpeg"),
        }
    }
}

/// A row-major image matrix.
///
/// Spatial images hold integers in `[0, 255]`; JPEG-domain matrices hold
/// unrounded reals.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMatrix {
    width: usize,
    height: usize,
    domain: Domain,
    data: Vec<f32>,
}

impl PixelMatrix {
    pub fn new(width: usize, height: usize, domain: Domain, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(MediaError::DimensionMismatch(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(MediaError::DimensionMismatch(format!(
                "{width}x{height} matrix needs {} entries, got {}",
                width * height,
                data.len()
            )));
        }
        for (index, &value) in data.iter().enumerate() {
            let ok = match domain {
                Domain::Spatial => (0.0..=255.0).contains(&value) && value.fract() == 0.0,
                Domain::Jpeg => value.is_finite(),
            };
            if !ok {
                return Err(MediaError::InvalidPixel { index, value });
            }
        }
        Ok(Self { width, height, domain, data })
    }

    /// Builds a spatial image from 8-bit samples.
    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            Domain::Spatial,
            bytes.iter().map(|&b| f32::from(b)).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    /// Spatial samples as bytes. Only meaningful for spatial images.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v as u8).collect()
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Ternary stego-minus-cover difference map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModificationMap {
    width: usize,
    height: usize,
    entries: Vec<i8>,
}

impl ModificationMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, entries: vec![0; width * height] }
    }

    pub fn new(width: usize, height: usize, entries: Vec<i8>) -> Result<Self> {
        if entries.len() != width * height {
            return Err(MediaError::DimensionMismatch(format!(
                "{width}x{height} map needs {} entries, got {}",
                width * height,
                entries.len()
            )));
        }
        if let Some((index, &value)) = entries.iter().enumerate().find(|(_, v)| !(-1..=1).contains(*v)) {
            return Err(MediaError::InvalidModification { index, value });
        }
        Ok(Self { width, height, entries })
    }

    /// The difference `stego - cover`; fails if any element differs by more than one.
    pub fn between(cover: &PixelMatrix, stego: &PixelMatrix) -> Result<Self> {
        if cover.width != stego.width || cover.height != stego.height {
            return Err(MediaError::DimensionMismatch("cover and stego differ in size".into()));
        }
        let mut entries = Vec::with_capacity(cover.len());
        for (index, (c, s)) in cover.data.iter().zip(&stego.data).enumerate() {
            let d = s - c;
            if d == 0.0 {
                entries.push(0);
            } else if d == 1.0 {
                entries.push(1);
            } else if d == -1.0 {
                entries.push(-1);
            } else {
                return Err(MediaError::InvalidModification { index, value: d.clamp(-128.0, 127.0) as i8 });
            }
        }
        Ok(Self { width: cover.width, height: cover.height, entries })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.entries[row * self.width + col]
    }

    pub fn negated(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            entries: self.entries.iter().map(|v| -v).collect(),
        }
    }

    pub fn transposed(&self) -> Self {
        let mut entries = vec![0; self.entries.len()];
        for r in 0..self.height {
            for c in 0..self.width {
                entries[c * self.height + r] = self.entries[r * self.width + c];
            }
        }
        Self { width: self.height, height: self.width, entries }
    }

    pub fn count_nonzero(&self) -> usize {
        self.entries.iter().filter(|&&v| v != 0).count()
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [i8] {
        &mut self.entries
    }
}

// ---------------------------------------------------------------------------
// PGM

/// Decodes a binary P5 PGM held in memory.
pub fn decode_pgm(bytes: &[u8]) -> Result<PixelMatrix> {
    if bytes.len() < 2 {
        return Err(MediaError::MalformedHeader("file too short for magic".into()));
    }
    let magic = &bytes[..2];
    if magic != b"P5" {
        return Err(MediaError::UnsupportedFormat(String::from_utf8_lossy(magic).into_owned()));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        *field = next_header_int(bytes, &mut pos)?;
    }
    let [width, height, maxval] = fields;
    if maxval > 255 {
        return Err(MediaError::MaxvalTooLarge(maxval));
    }
    if width == 0 || height == 0 || maxval == 0 {
        return Err(MediaError::MalformedHeader(format!(
            "width, height and maxval must be positive (got {width}, {height}, {maxval})"
        )));
    }
    // Exactly one whitespace byte separates maxval from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(MediaError::MalformedHeader("missing whitespace after maxval".into())),
    }
    let expected = width as usize * height as usize;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(MediaError::Truncated { expected, found: raster.len() });
    }
    let raster = &raster[..expected];
    if let Some((index, &v)) = raster.iter().enumerate().find(|(_, &v)| u32::from(v) > maxval) {
        return Err(MediaError::InvalidPixel { index, value: f32::from(v) });
    }
    PixelMatrix::from_u8(width as usize, height as usize, raster)
}

fn next_header_int(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    // skip whitespace and comments
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(_) => break,
            None => return Err(MediaError::MalformedHeader("unexpected end of header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(MediaError::MalformedHeader(format!("expected a decimal number at byte {start}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| MediaError::MalformedHeader("header number out of range".into()))
}

pub fn encode_pgm(img: &PixelMatrix) -> Result<Vec<u8>> {
    if img.domain != Domain::Spatial {
        return Err(MediaError::WrongDomain(img.domain));
    }
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_u8());
    Ok(out)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<PixelMatrix> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm(img: &PixelMatrix, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_pgm(img)?;
    fs::write(path, bytes)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Binary plane formats

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(MediaError::Truncated { expected: self.pos + n, found: self.bytes.len() });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, magic: &'static [u8; 5]) -> Result<()> {
        let expected = std::str::from_utf8(magic).unwrap_or("?");
        if self.bytes.len() < magic.len() || &self.bytes[..magic.len()] != magic {
            return Err(MediaError::BadMagic { expected });
        }
        self.pos = magic.len();
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn dims(&mut self) -> Result<(usize, usize)> {
        let w = self.u32()? as usize;
        let h = self.u32()? as usize;
        if w == 0 || h == 0 {
            return Err(MediaError::DimensionMismatch(format!("zero dimension {w}x{h}")));
        }
        Ok((w, h))
    }

    fn f32_plane(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| {
            MediaError::DimensionMismatch("plane size overflows".into())
        })?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(MediaError::DimensionMismatch(format!(
                "{} trailing bytes after payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn header(magic: &[u8; 5], width: usize, height: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(13);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out
}

/// Nearest `f32` to the wet cost. Anything at or above it decodes as [`WET_COST`].
const WET_COST_F32: f32 = WET_COST as f32;

/// Encodes a cost pair as `COST1`. Costs are stored as `f32`; wet costs
/// decode back to exactly [`WET_COST`].
pub fn encode_cost_map(pair: &CostPair) -> Vec<u8> {
    let mut out = header(COST_MAGIC, pair.width(), pair.height());
    out.reserve(pair.len() * 8);
    for plane in [pair.rho_plus(), pair.rho_minus()] {
        for &v in plane {
            let stored = if v >= WET_COST { WET_COST_F32 } else { v as f32 };
            out.extend_from_slice(&stored.to_le_bytes());
        }
    }
    out
}

pub fn decode_cost_map(bytes: &[u8]) -> Result<CostPair> {
    let mut r = Reader::new(bytes);
    r.magic(COST_MAGIC)?;
    let (w, h) = r.dims()?;
    let n = w * h;
    let decode = |plane: Vec<f32>, offset: usize| -> Result<Vec<f64>> {
        plane
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                if !(v >= 0.0 && v.is_finite()) {
                    Err(MediaError::InvalidCost { index: offset + i, value: f64::from(v) })
                } else if v >= WET_COST_F32 {
                    Ok(WET_COST)
                } else {
                    Ok(f64::from(v))
                }
            })
            .collect()
    };
    let plus = decode(r.f32_plane(n)?, 0)?;
    let minus = decode(r.f32_plane(n)?, n)?;
    r.finish()?;
    CostPair::new(w, h, plus, minus).map_err(|e| MediaError::DimensionMismatch(e.to_string()))
}

pub fn read_cost_map(path: impl AsRef<Path>) -> Result<CostPair> {
    decode_cost_map(&fs::read(path)?)
}

pub fn write_cost_map(pair: &CostPair, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_cost_map(pair))?;
    Ok(())
}

/// Encodes a real-valued matrix as `PIXF1` (single `f32` plane).
pub fn encode_pixf(img: &PixelMatrix) -> Vec<u8> {
    let mut out = header(PIXF_MAGIC, img.width, img.height);
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a `PIXF1` file. The result is always a JPEG-domain matrix.
pub fn decode_pixf(bytes: &[u8]) -> Result<PixelMatrix> {
    let mut r = Reader::new(bytes);
    r.magic(PIXF_MAGIC)?;
    let (w, h) = r.dims()?;
    let data = r.f32_plane(w * h)?;
    r.finish()?;
    PixelMatrix::new(w, h, Domain::Jpeg, data)
}

pub fn read_pixf(path: impl AsRef<Path>) -> Result<PixelMatrix> {
    decode_pixf(&fs::read(path)?)
}

pub fn write_pixf(img: &PixelMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pixf(img))?;
    Ok(())
}

/// Encodes a modification map as `MODM1`: header followed by one signed byte per element.
pub fn encode_modification_map(mods: &ModificationMap) -> Vec<u8> {
    let mut out = header(MODMAP_MAGIC, mods.width, mods.height);
    out.extend(mods.entries.iter().map(|&v| v as u8));
    out
}

pub fn decode_modification_map(bytes: &[u8]) -> Result<ModificationMap> {
    let mut r = Reader::new(bytes);
    r.magic(MODMAP_MAGIC)?;
    let (w, h) = r.dims()?;
    let raw = r.take(w * h)?;
    r.finish()?;
    ModificationMap::new(w, h, raw.iter().map(|&b| b as i8).collect())
}

pub fn read_modification_map(path: impl AsRef<Path>) -> Result<ModificationMap> {
    decode_modification_map(&fs::read(path)?)
}

pub fn write_modification_map(mods: &ModificationMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_modification_map(mods))?;
    Ok(())
}

/// Reads an image by extension: `.pixf` as a JPEG-domain matrix, anything else as PGM.
pub fn read_image(path: impl AsRef<Path>) -> Result<PixelMatrix> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "pixf") {
        read_pixf(path)
    } else {
        read_pgm(path)
    }
}

/// Writes a spatial image as PGM and a JPEG-domain matrix as PIXF1.
pub fn write_image(img: &PixelMatrix, path: impl AsRef<Path>) -> Result<()> {
    match img.domain {
        Domain::Spatial => write_pgm(img, path),
        Domain::Jpeg => write_pixf(img, path),
    }
}

// ---------------------------------------------------------------------------
// Manifests

/// Reads a manifest and resolves each entry against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let raw = fs::read(path)?;
    let text = String::from_utf8(raw).map_err(|_| MediaError::ManifestEncoding)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| base.join(l))
        .collect())
}

pub fn write_manifest<P: AsRef<Path>>(path: impl AsRef<Path>, entries: &[P]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&e.as_ref().to_string_lossy());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}
