//! Synthetic dynamic cardiac-like phantom and multi-coil acquisition.
//!
//! Frame `t` is a sum of complex-valued ellipse indicators whose semi-axes
//! pulsate as `a (1 + amp sin(2 pi t / T + phase))`, so the sequence is
//! periodic in `T`. Coordinates are normalized to `[-1, 1)` with the origin at
//! pixel `(ny/2, nx/2)`.
//!
//! Random numbers come from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64`; Gaussian samples use the Box-Muller transform on pairs of
//! uniforms `u1 = 1 - U`, `u2 = U` giving `(re, im)` of one k-space sample.

use std::f64::consts::PI;

use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ImageSeries, KSpaceSeries, SamplingMask, SensitivityMaps, C64};
use crate::error::{Error, Result};
use crate::transforms::EncodingContext;

/// One ellipse; pairs are ordered `[y, x]`, intensity is `[re, im]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    #[serde(default)]
    pub angle: f64,
    pub intensity: [f64; 2],
    #[serde(default)]
    pub pulsation: [f64; 2],
    #[serde(default)]
    pub pulsation_phase: [f64; 2],
}

impl Ellipse {
    fn new(center: [f64; 2], semi_axes: [f64; 2], angle: f64, intensity: [f64; 2]) -> Self {
        Self { center, semi_axes, angle, intensity, pulsation: [0.0; 2], pulsation_phase: [0.0; 2] }
    }

    fn pulsing(mut self, amp: [f64; 2], phase: [f64; 2]) -> Self {
        self.pulsation = amp;
        self.pulsation_phase = phase;
        self
    }

    /// Semi-axes `[y, x]` at frame `t` of `frames`.
    pub fn axes_at(&self, t: usize, frames: usize) -> [f64; 2] {
        let w = 2.0 * PI * t as f64 / frames as f64;
        [0, 1].map(|i| self.semi_axes[i] * (1.0 + self.pulsation[i] * (w + self.pulsation_phase[i]).sin()))
    }

    /// Membership of normalized point `(y, x)` at frame `t`.
    pub fn contains(&self, y: f64, x: f64, t: usize, frames: usize) -> bool {
        let [ay, ax] = self.axes_at(t, frames);
        let (dy, dx) = (y - self.center[0], x - self.center[1]);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / ax).powi(2) + (v / ay).powi(2) <= 1.0
    }

    fn validate(&self) -> Result<()> {
        let ok = self.semi_axes.iter().all(|&a| a > 0.0 && a.is_finite())
            && self.pulsation.iter().all(|&p| p.abs() < 1.0)
            && self.center.iter().chain(&self.intensity).chain(&self.pulsation_phase).all(|v| v.is_finite())
            && self.angle.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidGeometry(format!(
                "ellipse needs positive semi-axes and |pulsation| < 1: {self:?}"
            )))
        }
    }
}

/// Gaussian receive profiles centered on a ring around the field of view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoilProfile {
    /// Explicit `[y, x]` centers, one per coil; empty places coils on the ring.
    pub centers: Vec<[f64; 2]>,
    pub ring_radius: f64,
    pub width: f64,
    /// Linear phase across the field of view, in radians per unit length.
    pub phase_ramp: f64,
}

impl Default for CoilProfile {
    fn default() -> Self {
        Self { centers: Vec::new(), ring_radius: 1.1, width: 0.8, phase_ramp: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub ny: usize,
    pub nx: usize,
    pub t_frames: usize,
    pub n_coils: usize,
    /// Empty selects the seeded cardiac default.
    pub ellipses: Vec<Ellipse>,
    pub coil_profile: CoilProfile,
    pub noise_std: f64,
    pub seed: u64,
    /// Free-form label carried into reports.
    pub contrast: String,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            ny: 192,
            nx: 192,
            t_frames: 12,
            n_coils: 8,
            ellipses: Vec::new(),
            coil_profile: CoilProfile::default(),
            noise_std: 0.01,
            seed: 0,
            contrast: "cine".into(),
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ny < 2 || self.nx < 2 || self.t_frames == 0 || self.n_coils == 0 {
            return Err(Error::InvalidGeometry(format!(
                "phantom needs ny, nx >= 2 and at least one frame and coil, got {}x{}x{} with {} coils",
                self.t_frames, self.ny, self.nx, self.n_coils
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidGeometry(format!("noise_std must be nonnegative, got {}", self.noise_std)));
        }
        let p = &self.coil_profile;
        if !p.centers.is_empty() && p.centers.len() != self.n_coils {
            return Err(Error::InvalidGeometry(format!(
                "{} coil centers for {} coils",
                p.centers.len(),
                self.n_coils
            )));
        }
        if !(p.width > 0.0 && p.width.is_finite()) {
            return Err(Error::InvalidGeometry(format!("coil width must be positive, got {}", p.width)));
        }
        self.ellipses.iter().try_for_each(Ellipse::validate)
    }

    /// Ellipses in use: the explicit list, or the cardiac default perturbed by `seed`.
    pub fn resolved_ellipses(&self) -> Vec<Ellipse> {
        if self.ellipses.is_empty() {
            cardiac_default(self.seed)
        } else {
            self.ellipses.clone()
        }
    }
}

fn cardiac_default(seed: u64) -> Vec<Ellipse> {
    let base = vec![
        Ellipse::new([0.0, 0.0], [0.78, 0.88], 0.0, [0.45, 0.05]),
        Ellipse::new([-0.05, -0.45], [0.45, 0.26], 0.15, [-0.3, 0.0]),
        Ellipse::new([-0.05, 0.47], [0.42, 0.24], -0.15, [-0.3, 0.0]),
        Ellipse::new([0.05, 0.05], [0.32, 0.29], 0.3, [0.3, -0.05]).pulsing([0.12, 0.1], [0.0, 0.2]),
        Ellipse::new([0.07, 0.1], [0.19, 0.16], 0.3, [0.5, 0.1]).pulsing([0.25, 0.22], [0.0, 0.2]),
        Ellipse::new([0.0, -0.18], [0.15, 0.11], -0.2, [0.4, 0.08]).pulsing([0.2, 0.18], [0.6, 0.8]),
        Ellipse::new([0.62, 0.0], [0.1, 0.11], 0.0, [0.35, 0.0]),
        Ellipse::new([-0.45, 0.2], [0.06, 0.05], 0.0, [0.3, -0.1]).pulsing([0.1, 0.1], [1.5, 1.5]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |scale: f64| (rng.random::<f64>() * 2.0 - 1.0) * scale;
    base.into_iter()
        .map(|mut e| {
            e.center = e.center.map(|c| c + jitter(0.03));
            e.semi_axes = e.semi_axes.map(|a| a * (1.0 + jitter(0.05)));
            e.angle += jitter(0.1);
            e.pulsation = e.pulsation.map(|p| p * (1.0 + jitter(0.2)));
            e.pulsation_phase = e.pulsation_phase.map(|p| p + jitter(0.3));
            e
        })
        .collect()
}

fn normalized(i: usize, n: usize) -> f64 {
    (i as f64 - (n / 2) as f64) / (n as f64 / 2.0)
}

fn ground_truth(spec: &PhantomSpec) -> Array3<C64> {
    let ellipses = spec.resolved_ellipses();
    let (t, ny, nx) = (spec.t_frames, spec.ny, spec.nx);
    Array3::from_shape_fn((t, ny, nx), |(f, y, x)| {
        let (py, px) = (normalized(y, ny), normalized(x, nx));
        ellipses
            .iter()
            .filter(|e| e.contains(py, px, f, t))
            .map(|e| C64::new(e.intensity[0], e.intensity[1]))
            .sum()
    })
}

fn coil_maps(spec: &PhantomSpec) -> Array3<C64> {
    let p = &spec.coil_profile;
    let nc = spec.n_coils;
    let centers: Vec<[f64; 2]> = if p.centers.is_empty() {
        (0..nc)
            .map(|c| {
                let a = 2.0 * PI * c as f64 / nc as f64;
                [p.ring_radius * a.sin(), p.ring_radius * a.cos()]
            })
            .collect()
    } else {
        p.centers.clone()
    };
    let mut maps = Array3::from_shape_fn((nc, spec.ny, spec.nx), |(c, y, x)| {
        let (py, px) = (normalized(y, spec.ny), normalized(x, spec.nx));
        let [cy, cx] = centers[c];
        let d2 = (py - cy).powi(2) + (px - cx).powi(2);
        let r = (cy * cy + cx * cx).sqrt().max(1e-12);
        let phase = p.phase_ramp * (py * cy + px * cx) / r + 2.0 * PI * c as f64 / nc as f64;
        C64::from_polar((-d2 / (2.0 * p.width * p.width)).exp(), phase)
    });
    for y in 0..spec.ny {
        for x in 0..spec.nx {
            let e: f64 = (0..nc).map(|c| maps[[c, y, x]].norm_sqr()).sum();
            let s = e.sqrt().recip();
            for c in 0..nc {
                maps[[c, y, x]] *= s;
            }
        }
    }
    maps
}

/// Ground-truth image series and normalized coil maps.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(ImageSeries, SensitivityMaps)> {
    spec.validate()?;
    Ok((ImageSeries::new(ground_truth(spec))?, SensitivityMaps::new(coil_maps(spec))?))
}

/// `M F_s S m + M eta` with circular Gaussian `eta` of per-component std
/// `noise_std * max |F_s S m|`. Noise is drawn over the full grid in
/// `(c, t, ky, kx)` order before masking.
pub fn simulate_acquisition(
    truth: &ImageSeries,
    maps: &SensitivityMaps,
    mask: &SamplingMask,
    noise_std: f64,
    seed: u64,
) -> Result<KSpaceSeries> {
    let ctx = EncodingContext::new(maps.clone(), mask.clone())?;
    let full = ctx.coil_kspace(truth)?;
    let mut data = full.into_inner();
    if noise_std > 0.0 {
        let peak = data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let sigma = noise_std * peak;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for z in data.iter_mut() {
            *z += gaussian_pair(&mut rng) * sigma;
        }
    }
    ctx.apply_mask(&KSpaceSeries::from_array(data))
}

/// Box-Muller: two independent standard normals as `(re, im)`.
pub fn gaussian_pair(rng: &mut ChaCha8Rng) -> C64 {
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    C64::from_polar(r, 2.0 * PI * u2)
}

/// Noiseless fully sampled coil k-space, useful as a reference.
pub fn full_kspace(truth: &ImageSeries, maps: &SensitivityMaps) -> Result<Array4<C64>> {
    let (t, ny, _) = truth.shape();
    let ctx = EncodingContext::new(maps.clone(), SamplingMask::full(t, ny))?;
    Ok(ctx.coil_kspace(truth)?.into_inner())
}
