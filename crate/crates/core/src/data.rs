//! Core tensors and their consistency rules.
//!
//! Every tensor stores 64-bit complex samples in row-major order with the
//! axis layout `(coil, frame, y/ky, x/kx)`; types without a coil or frame axis
//! simply drop it.

use ndarray::{Array2, Array3, Array4, ArrayView2, Axis};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Tolerance on `sum_c |S_c|^2 = 1` for normalized sensitivity maps.
pub const NORMALIZATION_TOL: f64 = 1e-9;

pub trait Validate {
    fn validate(&self) -> Result<()>;
}

fn check_finite<'a>(it: impl IntoIterator<Item = &'a C64>, what: &'static str) -> Result<()> {
    if it.into_iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_image_dims(t: usize, ny: usize, nx: usize, what: &str) -> Result<()> {
    if t == 0 {
        return Err(Error::EmptyDimension(format!("{what}: zero frames")));
    }
    if ny < 2 || nx < 2 {
        return Err(Error::EmptyDimension(format!(
            "{what}: spatial extent {ny}x{nx} below 2x2"
        )));
    }
    Ok(())
}

/// Complex dynamic image `m` over `(t, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSeries {
    data: Array3<C64>,
}

impl ImageSeries {
    pub fn new(data: Array3<C64>) -> Result<Self> {
        let s = Self::from_array(data);
        s.validate()?;
        Ok(s)
    }

    /// Wraps without validation; used on outputs of operators whose inputs were validated.
    pub(crate) fn from_array(data: Array3<C64>) -> Self {
        Self {
            data: data.as_standard_layout().into_owned(),
        }
    }

    pub fn zeros(t: usize, ny: usize, nx: usize) -> Self {
        Self::from_array(Array3::zeros((t, ny, nx)))
    }

    pub fn data(&self) -> &Array3<C64> {
        &self.data
    }

    pub fn into_inner(self) -> Array3<C64> {
        self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn as_slice(&self) -> &[C64] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn magnitude(&self) -> Array3<f64> {
        self.data.mapv(|z| z.norm())
    }
}

impl Validate for ImageSeries {
    fn validate(&self) -> Result<()> {
        let (t, ny, nx) = self.data.dim();
        check_image_dims(t, ny, nx, "image series")?;
        check_finite(self.data.iter(), "image series")
    }
}

/// Temporal Fourier transform `rho = F_t m` of an [`ImageSeries`], axes `(f, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalSpectrum {
    data: Array3<C64>,
}

impl TemporalSpectrum {
    pub fn new(data: Array3<C64>) -> Result<Self> {
        let s = Self::from_array(data);
        s.validate()?;
        Ok(s)
    }

    pub(crate) fn from_array(data: Array3<C64>) -> Self {
        Self {
            data: data.as_standard_layout().into_owned(),
        }
    }

    pub fn data(&self) -> &Array3<C64> {
        &self.data
    }

    pub fn into_inner(self) -> Array3<C64> {
        self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// Index of the zero temporal frequency plane under floor centering.
    pub fn dc_index(&self) -> usize {
        self.data.dim().0 / 2
    }
}

impl Validate for TemporalSpectrum {
    fn validate(&self) -> Result<()> {
        let (t, ny, nx) = self.data.dim();
        check_image_dims(t, ny, nx, "temporal spectrum")?;
        check_finite(self.data.iter(), "temporal spectrum")
    }
}

/// Multi-coil k-space over `(c, t, ky, kx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceSeries {
    data: Array4<C64>,
}

impl KSpaceSeries {
    pub fn new(data: Array4<C64>) -> Result<Self> {
        let s = Self::from_array(data);
        s.validate()?;
        Ok(s)
    }

    pub(crate) fn from_array(data: Array4<C64>) -> Self {
        Self {
            data: data.as_standard_layout().into_owned(),
        }
    }

    pub fn zeros(nc: usize, t: usize, ny: usize, nx: usize) -> Self {
        Self::from_array(Array4::zeros((nc, t, ny, nx)))
    }

    pub fn data(&self) -> &Array4<C64> {
        &self.data
    }

    pub fn into_inner(self) -> Array4<C64> {
        self.data
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn coils(&self) -> usize {
        self.data.dim().0
    }

    pub fn as_slice(&self) -> &[C64] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

impl Validate for KSpaceSeries {
    fn validate(&self) -> Result<()> {
        let (nc, t, ny, nx) = self.data.dim();
        if nc == 0 {
            return Err(Error::EmptyDimension("k-space: zero coils".into()));
        }
        if t == 0 || ny == 0 || nx == 0 {
            return Err(Error::EmptyDimension(format!(
                "k-space: shape ({nc}, {t}, {ny}, {nx})"
            )));
        }
        check_finite(self.data.iter(), "k-space series")
    }
}

/// Per-coil, time-invariant sensitivity profiles over `(c, y, x)`.
///
/// At every pixel `sum_c |S_c|^2` is either exactly zero or within
/// [`NORMALIZATION_TOL`] of one.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMaps {
    data: Array3<C64>,
}

impl SensitivityMaps {
    pub fn new(data: Array3<C64>) -> Result<Self> {
        let s = Self::from_array(data);
        s.validate()?;
        Ok(s)
    }

    pub(crate) fn from_array(data: Array3<C64>) -> Self {
        Self {
            data: data.as_standard_layout().into_owned(),
        }
    }

    /// Unit maps for a single coil.
    pub fn ones(ny: usize, nx: usize) -> Self {
        Self::from_array(Array3::from_elem((1, ny, nx), C64::new(1.0, 0.0)))
    }

    pub fn data(&self) -> &Array3<C64> {
        &self.data
    }

    pub fn into_inner(self) -> Array3<C64> {
        self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn coils(&self) -> usize {
        self.data.dim().0
    }

    /// `sum_c |S_c(y, x)|^2`.
    pub fn energy(&self) -> Array2<f64> {
        self.data
            .map(|z| z.norm_sqr())
            .sum_axis(Axis(0))
    }
}

impl Validate for SensitivityMaps {
    fn validate(&self) -> Result<()> {
        let (nc, ny, nx) = self.data.dim();
        if nc == 0 {
            return Err(Error::EmptyDimension("sensitivity maps: zero coils".into()));
        }
        if ny < 2 || nx < 2 {
            return Err(Error::EmptyDimension(format!(
                "sensitivity maps: spatial extent {ny}x{nx} below 2x2"
            )));
        }
        check_finite(self.data.iter(), "sensitivity maps")?;
        for ((y, x), &sum) in self.energy().indexed_iter() {
            if sum != 0.0 && (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::NotNormalized { y, x, sum });
            }
        }
        Ok(())
    }
}

/// Inclusive range of ky lines forming the auto-calibration block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AcsRange {
    pub start: usize,
    pub end: usize,
}

impl AcsRange {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, ky: usize) -> bool {
        (self.start..=self.end).contains(&ky)
    }
}

/// Binary ky-line acquisition pattern over `(t, ky)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    lines: Array2<bool>,
    acs: Option<AcsRange>,
    acceleration: usize,
}

impl SamplingMask {
    pub fn new(lines: Array2<bool>, acs: Option<AcsRange>, acceleration: usize) -> Result<Self> {
        let m = Self {
            lines: lines.as_standard_layout().into_owned(),
            acs,
            acceleration,
        };
        m.validate()?;
        Ok(m)
    }

    /// Every line sampled in every frame, with the whole ky extent as calibration region.
    pub fn full(t: usize, ny: usize) -> Self {
        Self {
            lines: Array2::from_elem((t, ny), true),
            acs: Some(AcsRange {
                start: 0,
                end: ny - 1,
            }),
            acceleration: 1,
        }
    }

    pub fn lines(&self) -> ArrayView2<'_, bool> {
        self.lines.view()
    }

    pub fn is_sampled(&self, t: usize, ky: usize) -> bool {
        self.lines[[t, ky]]
    }

    pub fn frame(&self, t: usize) -> &[bool] {
        let ny = self.lines.dim().1;
        &self.lines.as_slice().expect("standard layout")[t * ny..(t + 1) * ny]
    }

    pub fn acs(&self) -> Option<AcsRange> {
        self.acs
    }

    pub fn acceleration(&self) -> usize {
        self.acceleration
    }

    pub fn frames(&self) -> usize {
        self.lines.dim().0
    }

    pub fn ny(&self) -> usize {
        self.lines.dim().1
    }

    pub fn sampled_per_frame(&self) -> Vec<usize> {
        self.lines
            .outer_iter()
            .map(|row| row.iter().filter(|&&b| b).count())
            .collect()
    }

    pub fn is_full(&self) -> bool {
        self.lines.iter().all(|&b| b)
    }
}

impl Validate for SamplingMask {
    fn validate(&self) -> Result<()> {
        let (t, ny) = self.lines.dim();
        if t == 0 || ny == 0 {
            return Err(Error::EmptyDimension(format!("mask shape ({t}, {ny})")));
        }
        if self.acceleration == 0 {
            return Err(Error::InvalidMask("acceleration must be at least 1".into()));
        }
        if let Some(acs) = self.acs {
            if acs.start > acs.end || acs.end >= ny {
                return Err(Error::InvalidMask(format!(
                    "calibration range {}..={} outside {ny} lines",
                    acs.start, acs.end
                )));
            }
            for (f, row) in self.lines.outer_iter().enumerate() {
                if (acs.start..=acs.end).any(|k| !row[k]) {
                    return Err(Error::InvalidMask(format!(
                        "calibration line missing in frame {f}"
                    )));
                }
            }
        }
        for (f, row) in self.lines.outer_iter().enumerate() {
            if !row.iter().any(|&b| b) {
                return Err(Error::InvalidMask(format!("frame {f} has no sampled line")));
            }
        }
        Ok(())
    }
}

/// Checks that image-domain and coil-domain operands agree spatially.
pub(crate) fn ensure_same<T: PartialEq + std::fmt::Debug>(a: T, b: T, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}")))
    }
}
