//! Temporal-frequency step in the x-f domain with a soft-thresholding prior.

use ndarray::Zip;

use crate::data::{ImageSeries, KSpaceSeries, TemporalSpectrum, C64};
use crate::error::{Error, Result};
use crate::transforms::{fft1t, fidelity_grad, ifft1t, EncodingContext};

/// Resolved per-iteration parameters of the x-f step.
#[derive(Debug, Clone, PartialEq)]
pub struct XfParams {
    pub zeta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub tau_rel: f64,
    pub protect_dc: bool,
}

impl XfParams {
    pub fn depth(&self) -> usize {
        self.zeta.len()
    }
}

/// `z * max(|z| - tau, 0) / |z|`, zero at the origin.
pub fn shrink(z: C64, tau: f64) -> C64 {
    let a = z.norm();
    if a <= tau || a == 0.0 {
        C64::default()
    } else {
        z * ((a - tau) / a)
    }
}

/// `rho - shrink(rho, tau)`. With `protect_dc` the zero temporal frequency
/// plane has residual zero.
pub fn soft_threshold_residual(rho: &TemporalSpectrum, tau: f64, protect_dc: bool) -> TemporalSpectrum {
    let (t, ny, nx) = rho.shape();
    let dc = rho.dc_index();
    let mut out = rho.data().clone();
    if tau > 0.0 {
        out.mapv_inplace(|z| z - shrink(z, tau));
    } else {
        out.fill(C64::default());
    }
    if protect_dc {
        out.index_axis_mut(ndarray::Axis(0), dc).fill(C64::default());
    }
    debug_assert_eq!(out.dim(), (t, ny, nx));
    TemporalSpectrum::from_array(out)
}

pub fn xf_step(
    rho: &TemporalSpectrum,
    v_acq: &KSpaceSeries,
    ctx: &EncodingContext,
    params: &XfParams,
    n: usize,
) -> Result<TemporalSpectrum> {
    check_index(params, n)?;
    if params.lambda[n] == 0.0 {
        return xf_update(rho, None, params, n);
    }
    let m: ImageSeries = ifft1t(rho);
    let grad = fft1t(&fidelity_grad(&m, v_acq, ctx)?);
    xf_update(rho, Some(&grad), params, n)
}

fn check_index(params: &XfParams, n: usize) -> Result<()> {
    let depth = params.depth().min(params.lambda.len());
    if n >= depth {
        return Err(Error::IndexOutOfRange { index: n, depth });
    }
    Ok(())
}

/// The x-f update for a precomputed temporal fidelity gradient `F_t A^H (A F_t^H rho - v)`.
/// `None` stands for a zero gradient.
pub(crate) fn xf_update(
    rho: &TemporalSpectrum,
    grad: Option<&TemporalSpectrum>,
    params: &XfParams,
    n: usize,
) -> Result<TemporalSpectrum> {
    check_index(params, n)?;
    let (zeta, lambda) = (params.zeta[n], params.lambda[n]);
    let peak = rho.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let prior = soft_threshold_residual(rho, params.tau_rel * peak, params.protect_dc);
    let mut out = rho.data().clone();
    match grad {
        Some(g) if lambda != 0.0 => Zip::from(&mut out)
            .and(prior.data())
            .and(g.data())
            .for_each(|o, &p, &g| *o -= (p + g * lambda) * zeta),
        _ => Zip::from(&mut out)
            .and(prior.data())
            .for_each(|o, &p| *o -= p * zeta),
    }
    Ok(TemporalSpectrum::from_array(out))
}
