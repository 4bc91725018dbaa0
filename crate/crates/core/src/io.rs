//! On-disk formats: the CKS container for grids, masks and coil stacks, the
//! weights file, PGM export and the subject-directory dataset layout.
//!
//! A CKS file is a short text header followed by raw little-endian samples:
//!
//! ```text
//! CKS1
//! dtype=c128
//! shape=coil:4,y:32,x:32
//! endian=little
//! normalization=central5x5
//! mask=attached
//! calib=20x20
//! accel=4
//!
//! <payload><attached mask bytes>
//! ```
//!
//! `dtype` is one of `c64` (interleaved f32), `c128` (interleaved f64) or
//! `u8`. Optional keys: `subject`, `normalization`, `scale`, `mask`,
//! `calib`, `accel`. When `mask=attached` a `y*x` byte section follows the
//! payload.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, Result};
use crate::grid::ComplexGrid;
use crate::imaging::{MultiCoilKspace, Normalization, SamplingMask, SensitivityMaps};
use crate::net::{ConvLayerParams, FeatureExtractorParams, ModelMeta, ParamSet, UnrolledModelParams, FORMAT_VERSION};
use crate::training::TrainingExample;

pub const CKS_MAGIC: &str = "CKS1";
pub const HEADER_LIMIT: usize = 64 * 1024;

/// Write `bytes` next to `path` and move them into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    C64,
    C128,
    U8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::C64 => 8,
            Dtype::C128 => 16,
            Dtype::U8 => 1,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Dtype::C64 => "c64",
            Dtype::C128 => "c128",
            Dtype::U8 => "u8",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "c64" => Some(Dtype::C64),
            "c128" => Some(Dtype::C128),
            "u8" => Some(Dtype::U8),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CksHeader {
    pub dtype: Dtype,
    /// `(coils, height, width)`; images and masks have one coil and omit
    /// the coil axis on disk.
    pub coils: Option<usize>,
    pub height: usize,
    pub width: usize,
    pub subject: Option<String>,
    pub normalization: Option<Normalization>,
    pub scale: Option<f64>,
    pub attached_mask: bool,
    pub calib: Option<(usize, usize)>,
    pub accel: Option<f64>,
}

impl CksHeader {
    fn new(dtype: Dtype, coils: Option<usize>, height: usize, width: usize) -> Self {
        Self {
            dtype,
            coils,
            height,
            width,
            subject: None,
            normalization: None,
            scale: None,
            attached_mask: false,
            calib: None,
            accel: None,
        }
    }

    pub fn samples(&self) -> usize {
        self.coils.unwrap_or(1) * self.height * self.width
    }

    fn render(&self) -> String {
        let mut s = format!("{CKS_MAGIC}\ndtype={}\n", self.dtype.as_str());
        match self.coils {
            Some(c) => s += &format!("shape=coil:{c},y:{},x:{}\n", self.height, self.width),
            None => s += &format!("shape=y:{},x:{}\n", self.height, self.width),
        }
        s += "endian=little\n";
        if let Some(id) = &self.subject {
            s += &format!("subject={id}\n");
        }
        if let Some(n) = self.normalization {
            s += &format!("normalization={n}\n");
        }
        if let Some(v) = self.scale {
            s += &format!("scale={v:e}\n");
        }
        if self.attached_mask {
            s += "mask=attached\n";
        }
        if let Some((h, w)) = self.calib {
            s += &format!("calib={h}x{w}\n");
        }
        if let Some(a) = self.accel {
            s += &format!("accel={a}\n");
        }
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CksPayload {
    Complex(Vec<Complex64>),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CksFile {
    pub header: CksHeader,
    pub payload: CksPayload,
    /// Bytes of the attached sampling pattern.
    pub mask: Option<Vec<u8>>,
}

fn invalid(field: &'static str, value: &str) -> ParseError {
    ParseError::InvalidField {
        field,
        value: value.chars().take(64).collect(),
    }
}

fn parse_dims(field: &'static str, v: &str) -> std::result::Result<(usize, usize), ParseError> {
    let (a, b) = v.split_once('x').ok_or_else(|| invalid(field, v))?;
    let a: usize = a.parse().map_err(|_| invalid(field, v))?;
    let b: usize = b.parse().map_err(|_| invalid(field, v))?;
    Ok((a, b))
}

fn parse_shape(v: &str) -> std::result::Result<(Option<usize>, usize, usize), ParseError> {
    let mut axes = Vec::new();
    for part in v.split(',') {
        let (label, n) = part.split_once(':').ok_or_else(|| invalid("shape", v))?;
        let n: usize = n.parse().map_err(|_| invalid("shape", v))?;
        if n == 0 {
            return Err(invalid("shape", v));
        }
        axes.push((label, n));
    }
    match axes.as_slice() {
        [("y", h), ("x", w)] => Ok((None, *h, *w)),
        [("coil", c), ("y", h), ("x", w)] => Ok((Some(*c), *h, *w)),
        _ => Err(invalid("shape", v)),
    }
}

fn parse_header(text: &str) -> std::result::Result<CksHeader, ParseError> {
    let mut lines = text.lines();
    if lines.next() != Some(CKS_MAGIC) {
        return Err(ParseError::BadMagic { expected: CKS_MAGIC });
    }
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for line in lines {
        if line.is_empty() {
            break;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| invalid("header line", line))?;
        const KNOWN: [&str; 10] =
            ["dtype", "shape", "endian", "subject", "normalization", "scale", "mask", "calib", "accel", "version"];
        if !KNOWN.contains(&k) {
            return Err(ParseError::UnknownField(k.chars().take(64).collect()));
        }
        if fields.insert(k, v).is_some() {
            return Err(ParseError::DuplicateField(k.to_string()));
        }
    }
    let get = |k: &'static str| fields.get(k).copied().ok_or(ParseError::MissingField(k));

    let dtype_s = get("dtype")?;
    let dtype = Dtype::parse(dtype_s).ok_or_else(|| invalid("dtype", dtype_s))?;
    let (coils, height, width) = parse_shape(get("shape")?)?;
    let endian = get("endian")?;
    if endian != "little" {
        return Err(invalid("endian", endian));
    }
    if let Some(v) = fields.get("version") {
        if *v != "1" {
            return Err(ParseError::UnknownVersion(v.parse().unwrap_or(u32::MAX)));
        }
    }
    let samples = coils
        .unwrap_or(1)
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .and_then(|n| n.checked_mul(dtype.size()))
        .ok_or_else(|| invalid("shape", get("shape").unwrap_or_default()))?;
    let _ = samples;

    let mut h = CksHeader::new(dtype, coils, height, width);
    h.subject = fields.get("subject").map(|s| s.to_string());
    if let Some(v) = fields.get("normalization") {
        h.normalization = Some(Normalization::parse(v).ok_or_else(|| invalid("normalization", v))?);
    }
    if let Some(v) = fields.get("scale") {
        let s: f64 = v.parse().map_err(|_| invalid("scale", v))?;
        if !(s.is_finite() && s > 0.0) {
            return Err(invalid("scale", v));
        }
        h.scale = Some(s);
    }
    if let Some(v) = fields.get("mask") {
        if *v != "attached" {
            return Err(invalid("mask", v));
        }
        h.attached_mask = true;
    }
    if let Some(v) = fields.get("calib") {
        h.calib = Some(parse_dims("calib", v)?);
    }
    if let Some(v) = fields.get("accel") {
        let a: f64 = v.parse().map_err(|_| invalid("accel", v))?;
        if !(a.is_finite() && a > 0.0) {
            return Err(invalid("accel", v));
        }
        h.accel = Some(a);
    }
    let is_mask = dtype == Dtype::U8;
    if is_mask && (coils.is_some() || h.attached_mask) {
        return Err(invalid("shape", get("shape")?));
    }
    if is_mask || h.attached_mask {
        get("calib")?;
        get("accel")?;
    }
    Ok(h)
}

impl CksFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header.render().into_bytes();
        match &self.payload {
            CksPayload::Complex(v) => match self.header.dtype {
                Dtype::C64 => v.iter().for_each(|z| {
                    out.extend_from_slice(&(z.re as f32).to_le_bytes());
                    out.extend_from_slice(&(z.im as f32).to_le_bytes());
                }),
                _ => v.iter().for_each(|z| {
                    out.extend_from_slice(&z.re.to_le_bytes());
                    out.extend_from_slice(&z.im.to_le_bytes());
                }),
            },
            CksPayload::Bytes(b) => out.extend_from_slice(b),
        }
        if let Some(m) = &self.mask {
            out.extend_from_slice(m);
        }
        out
    }

    /// Decode a whole file. The header is validated before the payload is
    /// looked at, and every section length is checked exactly.
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, ParseError> {
        let window = &bytes[..bytes.len().min(HEADER_LIMIT)];
        if !window.starts_with(CKS_MAGIC.as_bytes()) {
            return Err(ParseError::BadMagic { expected: CKS_MAGIC });
        }
        let end = window
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or(ParseError::UnterminatedHeader { limit: HEADER_LIMIT })?;
        let text = std::str::from_utf8(&bytes[..end + 1]).map_err(|_| ParseError::NotUtf8)?;
        let header = parse_header(text)?;
        let body = &bytes[end + 2..];

        let payload_len = header.samples() * header.dtype.size();
        let mask_len = if header.attached_mask { header.height * header.width } else { 0 };
        if body.len() != payload_len + mask_len {
            let (section, expected, actual) = if body.len() < payload_len {
                ("payload", payload_len, body.len())
            } else {
                ("mask", mask_len, body.len() - payload_len)
            };
            return Err(ParseError::LengthMismatch {
                section,
                expected,
                actual,
            });
        }
        let raw = &body[..payload_len];
        let payload = match header.dtype {
            Dtype::U8 => {
                if raw.iter().any(|&b| b > 1) {
                    return Err(invalid("payload", "mask bytes must be 0 or 1"));
                }
                CksPayload::Bytes(raw.to_vec())
            }
            Dtype::C64 => CksPayload::Complex(
                raw.chunks_exact(8)
                    .map(|c| {
                        let re = f32::from_le_bytes(c[..4].try_into().expect("4 bytes"));
                        let im = f32::from_le_bytes(c[4..].try_into().expect("4 bytes"));
                        Complex64::new(re as f64, im as f64)
                    })
                    .collect(),
            ),
            Dtype::C128 => CksPayload::Complex(
                raw.chunks_exact(16)
                    .map(|c| {
                        let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                        let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                        Complex64::new(re, im)
                    })
                    .collect(),
            ),
        };
        let mask = if header.attached_mask {
            let m = body[payload_len..].to_vec();
            if m.iter().any(|&b| b > 1) {
                return Err(invalid("mask", "mask bytes must be 0 or 1"));
            }
            Some(m)
        } else {
            None
        };
        Ok(Self { header, payload, mask })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(Self::from_bytes(&fs::read(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    fn complex(&self) -> Result<&[Complex64]> {
        match &self.payload {
            CksPayload::Complex(v) => Ok(v),
            CksPayload::Bytes(_) => Err(invalid("dtype", "u8 where complex data was expected").into()),
        }
    }

    fn planes(&self) -> Result<Vec<ComplexGrid>> {
        let (h, w) = (self.header.height, self.header.width);
        self.complex()?
            .chunks_exact(h * w)
            .map(|c| ComplexGrid::from_vec(h, w, c.to_vec()))
            .collect()
    }
}

fn mask_from_parts(h: usize, w: usize, bytes: &[u8], header: &CksHeader) -> Result<SamplingMask> {
    let (ch, cw) = header.calib.ok_or(ParseError::MissingField("calib"))?;
    let accel = header.accel.ok_or(ParseError::MissingField("accel"))?;
    SamplingMask::new(h, w, bytes.iter().map(|&b| b == 1).collect(), ch, cw, accel)
        .map_err(|e| invalid("calib", &e.to_string()).into())
}

fn complex_payload(v: Vec<Complex64>) -> CksPayload {
    CksPayload::Complex(v)
}

pub fn write_image(path: &Path, img: &ComplexGrid, dtype: Dtype) -> Result<()> {
    let header = CksHeader::new(dtype, None, img.height(), img.width());
    CksFile {
        header,
        payload: complex_payload(img.as_slice().to_vec()),
        mask: None,
    }
    .write(path)
}

/// Read a single complex image (a `y,x` file or a one-coil stack).
pub fn read_image(path: &Path) -> Result<ComplexGrid> {
    let f = CksFile::read(path)?;
    let mut planes = f.planes()?;
    if planes.len() != 1 {
        return Err(invalid("shape", "expected a single image").into());
    }
    Ok(planes.remove(0))
}

pub fn write_kspace(path: &Path, y: &MultiCoilKspace, subject: Option<&str>, scale: Option<f64>) -> Result<()> {
    let (h, w) = y.dims();
    let mut header = CksHeader::new(Dtype::C128, Some(y.coils()), h, w);
    header.subject = subject.map(str::to_string);
    header.normalization = Some(y.normalization());
    header.scale = scale;
    let mask = y.mask().map(|m| {
        header.attached_mask = true;
        header.calib = Some(m.calib());
        header.accel = Some(m.accel_requested());
        m.to_u8()
    });
    let data = y.planes().iter().flat_map(|p| p.as_slice().iter().copied()).collect();
    CksFile {
        header,
        payload: complex_payload(data),
        mask,
    }
    .write(path)
}

#[derive(Debug, Clone)]
pub struct KspaceFile {
    pub kspace: MultiCoilKspace,
    pub subject: Option<String>,
    pub scale: Option<f64>,
}

pub fn read_kspace(path: &Path) -> Result<KspaceFile> {
    let f = CksFile::read(path)?;
    let (h, w) = (f.header.height, f.header.width);
    let mut y = MultiCoilKspace::new(f.planes()?)?;
    if let Some(bytes) = &f.mask {
        y = y.with_mask(mask_from_parts(h, w, bytes, &f.header)?)?;
    }
    if let Some(n) = f.header.normalization {
        y = y.with_normalization(n);
    }
    Ok(KspaceFile {
        kspace: y,
        subject: f.header.subject,
        scale: f.header.scale,
    })
}

pub fn write_sens(path: &Path, sens: &SensitivityMaps) -> Result<()> {
    let (h, w) = sens.dims();
    let header = CksHeader::new(Dtype::C128, Some(sens.coils()), h, w);
    let data = sens.maps().iter().flat_map(|p| p.as_slice().iter().copied()).collect();
    CksFile {
        header,
        payload: complex_payload(data),
        mask: None,
    }
    .write(path)
}

pub fn read_sens(path: &Path) -> Result<SensitivityMaps> {
    SensitivityMaps::new(CksFile::read(path)?.planes()?)
}

pub fn write_mask(path: &Path, mask: &SamplingMask) -> Result<()> {
    let (h, w) = mask.dims();
    let mut header = CksHeader::new(Dtype::U8, None, h, w);
    header.calib = Some(mask.calib());
    header.accel = Some(mask.accel_requested());
    CksFile {
        header,
        payload: CksPayload::Bytes(mask.to_u8()),
        mask: None,
    }
    .write(path)
}

pub fn read_mask(path: &Path) -> Result<SamplingMask> {
    let f = CksFile::read(path)?;
    match &f.payload {
        CksPayload::Bytes(b) => mask_from_parts(f.header.height, f.header.width, b, &f.header),
        CksPayload::Complex(_) => Err(invalid("dtype", "complex data where a mask was expected").into()),
    }
}

/// 8-bit binary graymap of the magnitude, scaled so the peak is 255.
pub fn write_pgm(path: &Path, img: &ComplexGrid) -> Result<()> {
    let peak = img.as_slice().iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.as_slice().iter().map(|z| {
        if peak > 0.0 {
            (z.norm() / peak * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    atomic_write(path, &out)
}

pub const WEIGHTS_MAGIC: &[u8; 8] = b"CSMRIWT\n";
pub const WEIGHTS_VERSION: u32 = 1;
const MAX_MANIFEST: u64 = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn size(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerShape {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// byte offset into the blob
    offset: usize,
    /// byte length
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dtype: Precision,
    meta: ModelMeta,
    discriminator: Option<Vec<LayerShape>>,
    tensors: Vec<TensorEntry>,
}

/// A trained network and, for adversarial runs, its feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsFile {
    pub model: UnrolledModelParams,
    pub discriminator: Option<FeatureExtractorParams>,
}

fn collect_tensors(file: &WeightsFile) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    file.model.visit(&mut |n, s, v| out.push((format!("model.{n}"), s.to_vec(), v.to_vec())));
    if let Some(d) = &file.discriminator {
        d.visit(&mut |n, s, v| out.push((format!("disc.{n}"), s.to_vec(), v.to_vec())));
    }
    out
}

fn bounded(field: &'static str, v: usize, max: usize) -> std::result::Result<(), ParseError> {
    if v == 0 || v > max {
        return Err(invalid(field, &v.to_string()));
    }
    Ok(())
}

/// Reject architectures whose parameter count would exceed the blob before
/// anything is allocated.
fn check_architecture(m: &Manifest, blob_len: usize) -> std::result::Result<(), ParseError> {
    let meta = &m.meta;
    if meta.format_version != FORMAT_VERSION {
        return Err(ParseError::UnknownVersion(meta.format_version));
    }
    bounded("meta.iterations", meta.iterations, 4096)?;
    bounded("meta.features", meta.features, 4096)?;
    bounded("meta.kernel", meta.kernel, 31)?;
    if meta.kernel % 2 == 0 {
        return Err(invalid("meta.kernel", &meta.kernel.to_string()));
    }
    if meta.resblocks > 4096 {
        return Err(invalid("meta.resblocks", &meta.resblocks.to_string()));
    }
    let (f, k2) = (meta.features as u128, (meta.kernel * meta.kernel) as u128);
    let per_block = 2 * f * k2 + f + meta.resblocks as u128 * 2 * (f * f * k2 + f) + f * 2 * k2 + 2;
    let mut total = meta.iterations as u128 + meta.prox_count() as u128 * per_block;
    for l in m.discriminator.iter().flatten() {
        bounded("discriminator.in_ch", l.in_ch, 1 << 16)?;
        bounded("discriminator.out_ch", l.out_ch, 1 << 16)?;
        bounded("discriminator.kernel", l.kernel, 31)?;
        bounded("discriminator.stride", l.stride, 64)?;
        total += (l.in_ch * l.out_ch * l.kernel * l.kernel + l.out_ch) as u128;
    }
    if total * m.dtype.size() as u128 > blob_len as u128 {
        return Err(ParseError::TensorTable(format!(
            "architecture needs {total} parameters but the blob holds {blob_len} bytes"
        )));
    }
    Ok(())
}

impl WeightsFile {
    pub fn to_bytes(&self, precision: Precision) -> Vec<u8> {
        let mut blob = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, values) in collect_tensors(self) {
            let offset = blob.len();
            for v in &values {
                match precision {
                    Precision::F32 => blob.extend_from_slice(&(*v as f32).to_le_bytes()),
                    Precision::F64 => blob.extend_from_slice(&v.to_le_bytes()),
                }
            }
            tensors.push(TensorEntry {
                name,
                shape,
                offset,
                len: blob.len() - offset,
            });
        }
        let manifest = Manifest {
            version: WEIGHTS_VERSION,
            dtype: precision,
            meta: self.model.meta.clone(),
            discriminator: self.discriminator.as_ref().map(|d| {
                d.layers
                    .iter()
                    .map(|l| LayerShape {
                        in_ch: l.in_ch,
                        out_ch: l.out_ch,
                        kernel: l.kh,
                        stride: l.stride,
                    })
                    .collect()
            }),
            tensors,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = WEIGHTS_MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, ParseError> {
        if !bytes.starts_with(WEIGHTS_MAGIC) {
            return Err(ParseError::BadMagic { expected: "CSMRIWT" });
        }
        let rest = &bytes[WEIGHTS_MAGIC.len()..];
        if rest.len() < 8 {
            return Err(ParseError::LengthMismatch {
                section: "manifest length",
                expected: 8,
                actual: rest.len(),
            });
        }
        let n = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes"));
        let rest = &rest[8..];
        if n > MAX_MANIFEST || n as usize > rest.len() {
            return Err(ParseError::LengthMismatch {
                section: "manifest",
                expected: n.min(usize::MAX as u64) as usize,
                actual: rest.len(),
            });
        }
        let (json, blob) = rest.split_at(n as usize);
        let probe: serde_json::Value =
            serde_json::from_slice(json).map_err(|e| invalid("manifest", &e.to_string()))?;
        match probe.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == WEIGHTS_VERSION as u64 => {}
            Some(v) => return Err(ParseError::UnknownVersion(v.min(u32::MAX as u64) as u32)),
            None => return Err(ParseError::MissingField("version")),
        }
        let manifest: Manifest = serde_json::from_value(probe).map_err(|e| invalid("manifest", &e.to_string()))?;
        check_architecture(&manifest, blob.len())?;

        let mut model = UnrolledModelParams::zeros(manifest.meta.clone());
        let mut disc = manifest.discriminator.as_ref().map(|layers| FeatureExtractorParams {
            layers: layers
                .iter()
                .map(|l| ConvLayerParams::zeros(l.in_ch, l.out_ch, l.kernel, l.stride))
                .collect(),
        });
        let skeleton = WeightsFile {
            model: model.clone(),
            discriminator: disc.clone(),
        };
        let expected: BTreeMap<String, Vec<usize>> =
            collect_tensors(&skeleton).into_iter().map(|(n, s, _)| (n, s)).collect();

        let dsize = manifest.dtype.size();
        let mut seen = HashSet::new();
        let mut spans = Vec::new();
        for t in &manifest.tensors {
            let shape = expected
                .get(&t.name)
                .ok_or_else(|| ParseError::TensorTable(format!("unexpected tensor `{}`", t.name)))?;
            if !seen.insert(t.name.as_str()) {
                return Err(ParseError::TensorTable(format!("tensor `{}` listed twice", t.name)));
            }
            if &t.shape != shape {
                return Err(ParseError::TensorTable(format!(
                    "tensor `{}` has shape {:?}, architecture needs {:?}",
                    t.name, t.shape, shape
                )));
            }
            let count: usize = shape.iter().product();
            if t.len != count * dsize {
                return Err(ParseError::TensorTable(format!("tensor `{}` has byte length {}", t.name, t.len)));
            }
            let end = t.offset.checked_add(t.len).filter(|&e| e <= blob.len());
            if end.is_none() {
                return Err(ParseError::TensorTable(format!("tensor `{}` lies outside the blob", t.name)));
            }
            spans.push((t.offset, t.len, t.name.as_str()));
        }
        if let Some(missing) = expected.keys().find(|n| !seen.contains(n.as_str())) {
            return Err(ParseError::TensorTable(format!("tensor `{missing}` is missing")));
        }
        spans.sort();
        for w in spans.windows(2) {
            if w[0].0 + w[0].1 > w[1].0 {
                return Err(ParseError::TensorTable(format!("tensors `{}` and `{}` overlap", w[0].2, w[1].2)));
            }
        }

        let by_name: BTreeMap<&str, &TensorEntry> = manifest.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let decode = |name: &str, dst: &mut [f64]| {
            let t = by_name[name];
            let raw = &blob[t.offset..t.offset + t.len];
            for (d, c) in dst.iter_mut().zip(raw.chunks_exact(dsize)) {
                *d = match manifest.dtype {
                    Precision::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
                    Precision::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
                };
            }
        };
        model.visit_mut(&mut |n, v| decode(&format!("model.{n}"), v));
        if let Some(d) = disc.as_mut() {
            d.visit_mut(&mut |n, v| decode(&format!("disc.{n}"), v));
        }
        if !model.all_finite() || !disc.as_ref().is_none_or(|d| d.all_finite()) {
            return Err(invalid("blob", "non-finite parameter"));
        }
        model.validate().map_err(|e| ParseError::TensorTable(e.to_string()))?;
        if let Some(d) = &disc {
            d.validate().map_err(|e| ParseError::TensorTable(e.to_string()))?;
        }
        Ok(Self {
            model,
            discriminator: disc,
        })
    }
}

pub fn write_weights(path: &Path, file: &WeightsFile) -> Result<()> {
    write_weights_with(path, file, Precision::F64)
}

pub fn write_weights_with(path: &Path, file: &WeightsFile, precision: Precision) -> Result<()> {
    atomic_write(path, &file.to_bytes(precision))
}

pub fn read_weights(path: &Path) -> Result<WeightsFile> {
    Ok(WeightsFile::from_bytes(&fs::read(path)?)?)
}

pub const TRUTH_FILE: &str = "truth.cks";
pub const SENS_FILE: &str = "sens.cks";
pub const FULL_FILE: &str = "full.cks";
pub const MASK_FILE: &str = "mask.cks";

/// All examples recorded for one subject.
#[derive(Debug, Clone)]
pub struct Subject {
    pub id: String,
    pub examples: Vec<TrainingExample>,
}

/// Load a dataset laid out as one directory per subject, each holding
/// `truth*.cks` images with matching `sens*.cks` coil maps. Slices use the
/// subject's `mask.cks` unless `mask` is given. Subjects come back sorted
/// by directory name; every example is normalized.
pub fn load_dataset(dir: &Path, mask: Option<&SamplingMask>) -> Result<Vec<Subject>> {
    let mut subjects = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for sdir in entries {
        let id = sdir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let subject_mask = match mask {
            Some(m) => m.clone(),
            None => {
                let p = sdir.join(MASK_FILE);
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "subject {id} has no {MASK_FILE} and no mask was given"
                    )));
                }
                read_mask(&p)?
            }
        };
        let mut truths: Vec<PathBuf> = fs::read_dir(&sdir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("truth") && n.ends_with(".cks"))
            })
            .collect();
        truths.sort();
        let mut examples = Vec::new();
        for t in truths {
            let name = t.file_name().and_then(|n| n.to_str()).expect("filtered above");
            let sens_path = sdir.join(name.replacen("truth", "sens", 1));
            let truth = read_image(&t)?;
            let sens = read_sens(&sens_path)?;
            examples.push(TrainingExample::normalized(truth, sens, subject_mask.clone())?);
        }
        if !examples.is_empty() {
            subjects.push(Subject { id, examples });
        }
    }
    if subjects.is_empty() {
        return Err(Error::Config(format!("no subjects with {TRUTH_FILE} found under {}", dir.display())));
    }
    Ok(subjects)
}

/// Seeded split by subject: `val_fraction` of the subjects (rounded down)
/// go to validation. Slices of one subject never straddle the split.
pub fn split_by_subject(mut subjects: Vec<Subject>, val_fraction: f64, seed: u64) -> (Vec<Subject>, Vec<Subject>) {
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((subjects.len() as f64) * val_fraction.clamp(0.0, 1.0)).floor() as usize;
    let n_val = n_val.min(subjects.len().saturating_sub(1));
    let train = subjects.split_off(n_val);
    (train, subjects)
}
