//! The KTC tensor file format.
//!
//! A file is one UTF-8 JSON header line terminated by `\n`, followed directly
//! by the raw payload. Complex payloads are interleaved `(re, im)` pairs of
//! little-endian `f32` (`c64`) or `f64` (`c128`) in row-major order. Masks
//! store one byte (0/1) per `(t, ky)` with the calibration range in the
//! header.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3, Array4, Array5};
use serde::{Deserialize, Serialize};

use crate::data::{
    AcsRange, ImageSeries, KSpaceSeries, SamplingMask, SensitivityMaps, Validate, C64,
};
use crate::error::{Error, Result};
use crate::prior_kt::KtKernel;

pub const MAGIC: &str = "KTC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Image,
    Kspace,
    Sens,
    Mask,
    Kernel,
}

/// Storage precision of complex payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    /// `c64`: two `f32` per sample. Storage default.
    #[default]
    Single,
    /// `c128`: two `f64` per sample. Matches the internal arithmetic.
    Double,
}

impl Precision {
    pub fn tag(self) -> &'static str {
        match self {
            Precision::Single => "c64",
            Precision::Double => "c128",
        }
    }

    fn sample_bytes(self) -> usize {
        match self {
            Precision::Single => 8,
            Precision::Double => 16,
        }
    }

    fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "c64" => Ok(Precision::Single),
            "c128" => Ok(Precision::Double),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KtcHeader {
    pub magic: String,
    pub kind: Kind,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acs_range: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceleration: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tikhonov_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl KtcHeader {
    fn new(kind: Kind, shape: Vec<usize>, dtype: &str) -> Self {
        Self {
            magic: MAGIC.to_string(),
            kind,
            shape,
            dtype: dtype.to_string(),
            byte_order: "LE".to_string(),
            acs_range: None,
            acceleration: None,
            tikhonov_rel: None,
            config_hash: None,
        }
    }

    fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    fn payload_len(&self) -> Result<usize> {
        let per = match self.dtype.as_str() {
            "u8" => 1,
            tag => Precision::from_tag(tag)?.sample_bytes(),
        };
        Ok(self.element_count() * per)
    }
}

/// Header plus raw payload, the in-memory image of a KTC file.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatBuffer {
    pub header: KtcHeader,
    pub payload: Vec<u8>,
}

impl FlatBuffer {
    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.header.config_hash = Some(hash.into());
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Header("missing header terminator".into()))?;
        let header: KtcHeader = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::Header(e.to_string()))?;
        let buf = FlatBuffer {
            header,
            payload: bytes[nl + 1..].to_vec(),
        };
        buf.check()?;
        Ok(buf)
    }

    /// Verifies magic, byte order, dtype and payload length.
    pub fn check(&self) -> Result<()> {
        if self.header.magic != MAGIC {
            return Err(Error::Header(format!("bad magic {:?}", self.header.magic)));
        }
        if self.header.byte_order != "LE" {
            return Err(Error::Header(format!(
                "unsupported byte order {:?}",
                self.header.byte_order
            )));
        }
        let expected = self.header.payload_len()?;
        if expected != self.payload.len() {
            return Err(Error::LengthMismatch {
                expected,
                actual: self.payload.len(),
            });
        }
        Ok(())
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    fn expect(&self, kind: Kind, rank: usize) -> Result<()> {
        self.check()?;
        if self.header.kind != kind {
            return Err(Error::Header(format!(
                "expected kind {kind:?}, found {:?}",
                self.header.kind
            )));
        }
        if self.header.shape.len() != rank {
            return Err(Error::Header(format!(
                "expected rank {rank}, found shape {:?}",
                self.header.shape
            )));
        }
        Ok(())
    }

    fn complex_samples(&self) -> Result<Vec<C64>> {
        let precision = Precision::from_tag(&self.header.dtype)?;
        Ok(decode_complex(&self.payload, precision))
    }
}

fn encode_complex<'a>(samples: impl Iterator<Item = &'a C64>, precision: Precision) -> Vec<u8> {
    let mut out = Vec::new();
    for z in samples {
        match precision {
            Precision::Single => {
                out.extend_from_slice(&(z.re as f32).to_le_bytes());
                out.extend_from_slice(&(z.im as f32).to_le_bytes());
            }
            Precision::Double => {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
    }
    out
}

fn decode_complex(bytes: &[u8], precision: Precision) -> Vec<C64> {
    match precision {
        Precision::Single => bytes
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes(c[0..4].try_into().unwrap());
                let im = f32::from_le_bytes(c[4..8].try_into().unwrap());
                C64::new(re as f64, im as f64)
            })
            .collect(),
        Precision::Double => bytes
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[0..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..16].try_into().unwrap());
                C64::new(re, im)
            })
            .collect(),
    }
}

fn complex_buffer<'a>(
    kind: Kind,
    shape: &[usize],
    samples: impl Iterator<Item = &'a C64>,
    precision: Precision,
) -> FlatBuffer {
    FlatBuffer {
        header: KtcHeader::new(kind, shape.to_vec(), precision.tag()),
        payload: encode_complex(samples, precision),
    }
}

fn shape_err(e: ndarray::ShapeError) -> Error {
    Error::ShapeMismatch(e.to_string())
}

/// Conversion between a tensor type and its KTC representation.
pub trait KtcValue: Sized {
    const KIND: Kind;
    fn to_buffer(&self, precision: Precision) -> FlatBuffer;
    fn from_buffer(buf: &FlatBuffer) -> Result<Self>;

    fn write_ktc(&self, path: impl AsRef<Path>, precision: Precision, config_hash: Option<&str>) -> Result<()> {
        let mut buf = self.to_buffer(precision);
        buf.header.config_hash = config_hash.map(str::to_string);
        buf.write_file(path)
    }

    fn read_ktc(path: impl AsRef<Path>) -> Result<(Self, KtcHeader)> {
        let buf = FlatBuffer::read_file(path)?;
        let v = Self::from_buffer(&buf)?;
        Ok((v, buf.header))
    }
}

impl KtcValue for ImageSeries {
    const KIND: Kind = Kind::Image;

    fn to_buffer(&self, precision: Precision) -> FlatBuffer {
        let (t, ny, nx) = self.shape();
        complex_buffer(Self::KIND, &[t, ny, nx], self.data().iter(), precision)
    }

    fn from_buffer(buf: &FlatBuffer) -> Result<Self> {
        buf.expect(Self::KIND, 3)?;
        let s = &buf.header.shape;
        let a = Array3::from_shape_vec((s[0], s[1], s[2]), buf.complex_samples()?).map_err(shape_err)?;
        ImageSeries::new(a)
    }
}

impl KtcValue for KSpaceSeries {
    const KIND: Kind = Kind::Kspace;

    fn to_buffer(&self, precision: Precision) -> FlatBuffer {
        let (c, t, ny, nx) = self.shape();
        complex_buffer(Self::KIND, &[c, t, ny, nx], self.data().iter(), precision)
    }

    fn from_buffer(buf: &FlatBuffer) -> Result<Self> {
        buf.expect(Self::KIND, 4)?;
        let s = &buf.header.shape;
        let a = Array4::from_shape_vec((s[0], s[1], s[2], s[3]), buf.complex_samples()?)
            .map_err(shape_err)?;
        KSpaceSeries::new(a)
    }
}

impl KtcValue for SensitivityMaps {
    const KIND: Kind = Kind::Sens;

    fn to_buffer(&self, precision: Precision) -> FlatBuffer {
        let (c, ny, nx) = self.shape();
        complex_buffer(Self::KIND, &[c, ny, nx], self.data().iter(), precision)
    }

    fn from_buffer(buf: &FlatBuffer) -> Result<Self> {
        buf.expect(Self::KIND, 3)?;
        let s = &buf.header.shape;
        let a = Array3::from_shape_vec((s[0], s[1], s[2]), buf.complex_samples()?).map_err(shape_err)?;
        // Single precision storage breaks the 1e-9 normalization; renormalize on load.
        let maps = SensitivityMaps::from_array(renormalize(a));
        maps.validate()?;
        Ok(maps)
    }
}

fn renormalize(mut a: Array3<C64>) -> Array3<C64> {
    let (nc, ny, nx) = a.dim();
    for y in 0..ny {
        for x in 0..nx {
            let e: f64 = (0..nc).map(|c| a[[c, y, x]].norm_sqr()).sum();
            if e > 0.0 {
                let s = e.sqrt().recip();
                for c in 0..nc {
                    a[[c, y, x]] *= s;
                }
            }
        }
    }
    a
}

impl KtcValue for SamplingMask {
    const KIND: Kind = Kind::Mask;

    /// Masks are always stored as bytes; `precision` is ignored.
    fn to_buffer(&self, _precision: Precision) -> FlatBuffer {
        let mut header = KtcHeader::new(Self::KIND, vec![self.frames(), self.ny()], "u8");
        header.acs_range = self.acs().map(|r| [r.start, r.end]);
        header.acceleration = Some(self.acceleration());
        FlatBuffer {
            header,
            payload: self.lines().iter().map(|&b| b as u8).collect(),
        }
    }

    fn from_buffer(buf: &FlatBuffer) -> Result<Self> {
        buf.expect(Self::KIND, 2)?;
        if buf.header.dtype != "u8" {
            return Err(Error::UnknownDtype(buf.header.dtype.clone()));
        }
        let s = &buf.header.shape;
        let bits = buf
            .payload
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Header(format!("mask byte {other} is not 0/1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let lines = Array2::from_shape_vec((s[0], s[1]), bits).map_err(shape_err)?;
        let acs = buf
            .header
            .acs_range
            .map(|[start, end]| AcsRange { start, end });
        let acceleration = buf
            .header
            .acceleration
            .ok_or_else(|| Error::Header("mask header lacks acceleration".into()))?;
        SamplingMask::new(lines, acs, acceleration)
    }
}

impl KtcValue for KtKernel {
    const KIND: Kind = Kind::Kernel;

    fn to_buffer(&self, precision: Precision) -> FlatBuffer {
        let mut buf = complex_buffer(
            Self::KIND,
            self.weights().shape(),
            self.weights().iter(),
            precision,
        );
        buf.header.tikhonov_rel = Some(self.tikhonov_rel());
        buf
    }

    fn from_buffer(buf: &FlatBuffer) -> Result<Self> {
        buf.expect(Self::KIND, 5)?;
        let s = &buf.header.shape;
        let w = Array5::from_shape_vec((s[0], s[1], s[2], s[3], s[4]), buf.complex_samples()?)
            .map_err(shape_err)?;
        KtKernel::new(w, buf.header.tikhonov_rel.unwrap_or(0.0))
    }
}
