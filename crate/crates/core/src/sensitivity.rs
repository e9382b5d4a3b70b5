//! Coil sensitivity estimation from the calibration block.
//!
//! The frame-averaged calibration lines are Hann-windowed along ky, embedded
//! in an otherwise empty k-space and transformed to low-resolution coil
//! images `L_c`. Maps are `L_c / rss(L)` referenced to the phase of coil 0,
//! and zero wherever `rss(L)` falls below `eps_rel * max rss(L)`.

use ndarray::{Array3, Axis};

use crate::data::{KSpaceSeries, SamplingMask, SensitivityMaps, C64};
use crate::error::{Error, Result};
use crate::fft::{fft2c, Direction};
use crate::sampling::extract_acs;

pub const DEFAULT_EPS_REL: f64 = 1e-6;

/// Symmetric raised-cosine taper of length `n`, strictly positive at both ends.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let s = (std::f64::consts::PI * (j as f64 + 0.5) / n as f64).sin();
            s * s
        })
        .collect()
}

pub fn estimate_maps(v_acq: &KSpaceSeries, mask: &SamplingMask, eps_rel: f64) -> Result<SensitivityMaps> {
    let acs = mask.acs().ok_or(Error::EmptyAcs)?;
    let block = extract_acs(v_acq, mask)?;
    if block.data().iter().all(|z| *z == C64::default()) {
        return Err(Error::ZeroAcs);
    }
    let (nc, t, _, nx) = block.shape();
    let ny = mask.ny();

    let mean = block.data().sum_axis(Axis(1)) / C64::new(t as f64, 0.0);
    let window = hann_window(acs.len());
    let mut k = Array3::<C64>::zeros((nc, ny, nx));
    for c in 0..nc {
        for (j, &w) in window.iter().enumerate() {
            for x in 0..nx {
                k[[c, acs.start + j, x]] = mean[[c, j, x]] * w;
            }
        }
    }
    let low = fft2c(&k, Direction::Inverse);

    let mut rss = ndarray::Array2::<f64>::zeros((ny, nx));
    for c in 0..nc {
        for ((y, x), r) in rss.indexed_iter_mut() {
            *r += low[[c, y, x]].norm_sqr();
        }
    }
    rss.mapv_inplace(f64::sqrt);
    let peak = rss.iter().cloned().fold(0.0, f64::max);
    let eps = eps_rel * peak;

    let mut maps = Array3::<C64>::zeros((nc, ny, nx));
    for ((y, x), &r) in rss.indexed_iter() {
        if r < eps || r == 0.0 {
            continue;
        }
        let l0 = low[[0, y, x]];
        let a0 = l0.norm();
        let phase = if a0 > 0.0 { l0.conj() / a0 } else { C64::new(1.0, 0.0) };
        let denom = r.max(eps);
        for c in 0..nc {
            maps[[c, y, x]] = low[[c, y, x]] * phase / denom;
        }
    }
    Ok(SensitivityMaps::from_array(maps))
}
