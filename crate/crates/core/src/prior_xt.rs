//! Image-enhancement step in the x-t domain.
//!
//! `m <- m - eta_n * (R'(m) + lambda_n * A^H (A m - v))` where the
//! regularization direction `R'` is either zero or the gradient of a smoothed
//! isotropic 3D total variation.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::data::{ImageSeries, KSpaceSeries, C64};
use crate::error::{Error, Result};
use crate::par;
use crate::transforms::{fidelity_grad, EncodingContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XtPrior {
    Zero,
    SmoothedTv3d,
}

/// Resolved per-iteration parameters of the x-t step.
#[derive(Debug, Clone, PartialEq)]
pub struct XtParams {
    pub eta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub prior_kind: XtPrior,
    /// Absolute smoothing constant of the TV magnitude.
    pub tv_eps: f64,
    /// Absolute weight on the TV gradient.
    pub tv_weight: f64,
}

impl XtParams {
    pub fn depth(&self) -> usize {
        self.eta.len()
    }
}

/// Forward differences along `(t, y, x)` with replicate boundaries.
fn differences(m: &Array3<C64>) -> [Array3<C64>; 3] {
    let (nt, ny, nx) = m.dim();
    let mut dt = Array3::zeros((nt, ny, nx));
    let mut dy = Array3::zeros((nt, ny, nx));
    let mut dx = Array3::zeros((nt, ny, nx));
    for t in 0..nt {
        for y in 0..ny {
            for x in 0..nx {
                let v = m[[t, y, x]];
                if t + 1 < nt {
                    dt[[t, y, x]] = m[[t + 1, y, x]] - v;
                }
                if y + 1 < ny {
                    dy[[t, y, x]] = m[[t, y + 1, x]] - v;
                }
                if x + 1 < nx {
                    dx[[t, y, x]] = m[[t, y, x + 1]] - v;
                }
            }
        }
    }
    [dt, dy, dx]
}

/// `sum sqrt(|d_t m|^2 + |d_y m|^2 + |d_x m|^2 + eps^2)`.
pub fn tv_objective(m: &ImageSeries, tv_eps: f64) -> f64 {
    let [dt, dy, dx] = differences(m.data());
    let e2 = tv_eps * tv_eps;
    dt.iter()
        .zip(dy.iter())
        .zip(dx.iter())
        .map(|((a, b), c)| (a.norm_sqr() + b.norm_sqr() + c.norm_sqr() + e2).sqrt())
        .sum()
}

/// `tv_weight * grad TV_eps(m)` under the real-pair gradient convention
/// (`d/d re + i d/d im`).
pub fn tv_residual(m: &ImageSeries, tv_eps: f64, tv_weight: f64) -> ImageSeries {
    let (nt, ny, nx) = m.shape();
    if tv_weight == 0.0 {
        return ImageSeries::zeros(nt, ny, nx);
    }
    let [mut qt, mut qy, mut qx] = differences(m.data());
    let e2 = tv_eps * tv_eps;
    ndarray::Zip::from(&mut qt)
        .and(&mut qy)
        .and(&mut qx)
        .for_each(|a, b, c| {
            let phi = (a.norm_sqr() + b.norm_sqr() + c.norm_sqr() + e2).sqrt();
            *a /= phi;
            *b /= phi;
            *c /= phi;
        });
    // adjoint of the forward difference: (D^T q)(i) = q(i-1)[i>=1] - q(i)[i<=n-2]
    let mut out = Array3::<C64>::zeros((nt, ny, nx));
    par::for_each_chunk(
        out.as_slice_mut().expect("standard layout"),
        ny * nx,
        |t, plane| {
            for y in 0..ny {
                for x in 0..nx {
                    let mut g = C64::default();
                    if t >= 1 {
                        g += qt[[t - 1, y, x]];
                    }
                    if t + 1 < nt {
                        g -= qt[[t, y, x]];
                    }
                    if y >= 1 {
                        g += qy[[t, y - 1, x]];
                    }
                    if y + 1 < ny {
                        g -= qy[[t, y, x]];
                    }
                    if x >= 1 {
                        g += qx[[t, y, x - 1]];
                    }
                    if x + 1 < nx {
                        g -= qx[[t, y, x]];
                    }
                    plane[y * nx + x] = g * tv_weight;
                }
            }
        },
    );
    ImageSeries::from_array(out)
}

pub fn prior_residual(m: &ImageSeries, params: &XtParams) -> ImageSeries {
    match params.prior_kind {
        XtPrior::Zero => {
            let (t, ny, nx) = m.shape();
            ImageSeries::zeros(t, ny, nx)
        }
        XtPrior::SmoothedTv3d => tv_residual(m, params.tv_eps, params.tv_weight),
    }
}

pub fn xt_step(
    m: &ImageSeries,
    v_acq: &KSpaceSeries,
    ctx: &EncodingContext,
    params: &XtParams,
    n: usize,
) -> Result<ImageSeries> {
    check_index(params, n)?;
    let grad = fidelity_grad(m, v_acq, ctx)?;
    xt_update(m, &grad, params, n)
}

fn check_index(params: &XtParams, n: usize) -> Result<()> {
    let depth = params.depth().min(params.lambda.len());
    if n >= depth {
        return Err(Error::IndexOutOfRange { index: n, depth });
    }
    Ok(())
}

/// The x-t update for a precomputed fidelity gradient `A^H (A m - v)`.
pub(crate) fn xt_update(m: &ImageSeries, grad: &ImageSeries, params: &XtParams, n: usize) -> Result<ImageSeries> {
    check_index(params, n)?;
    let (eta, lambda) = (params.eta[n], params.lambda[n]);
    let prior = prior_residual(m, params);
    let mut out = m.data().clone();
    ndarray::Zip::from(&mut out)
        .and(prior.data())
        .and(grad.data())
        .for_each(|o, &p, &g| *o -= (p + g * lambda) * eta);
    Ok(ImageSeries::from_array(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SamplingMask, SensitivityMaps};
    use crate::transforms::forward_op;

    fn params(eta: f64, lambda: f64, kind: XtPrior, depth: usize) -> XtParams {
        XtParams {
            eta: vec![eta; depth],
            lambda: vec![lambda; depth],
            prior_kind: kind,
            tv_eps: 1e-3,
            tv_weight: 0.1,
        }
    }

    fn test_image() -> ImageSeries {
        ImageSeries::new(Array3::from_shape_fn((3, 5, 4), |(t, y, x)| {
            C64::new(((t * 13 + y * 7 + x * 3) % 11) as f64 * 0.1, ((t + y * x) % 5) as f64 * 0.05)
        }))
        .unwrap()
    }

    #[test]
    fn constant_series_has_no_tv_gradient() {
        let m = ImageSeries::new(Array3::from_elem((3, 4, 4), C64::new(2.0, -1.0))).unwrap();
        let g = tv_residual(&m, 1e-3, 1.0);
        assert!(g.data().iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn zero_weight_is_exact_zero() {
        let g = tv_residual(&test_image(), 1e-3, 0.0);
        assert!(g.data().iter().all(|z| *z == C64::default()));
    }

    #[test]
    fn consistent_data_is_fixed_point() {
        let m = test_image();
        let ctx = EncodingContext::new(SensitivityMaps::ones(5, 4), SamplingMask::full(3, 5)).unwrap();
        let v = forward_op(&m, &ctx).unwrap();
        let out = xt_step(&m, &v, &ctx, &params(0.5, 1.0, XtPrior::Zero, 2), 1).unwrap();
        for (a, b) in out.data().iter().zip(m.data().iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_step_is_identity() {
        let m = test_image();
        let ctx = EncodingContext::new(SensitivityMaps::ones(5, 4), SamplingMask::full(3, 5)).unwrap();
        let v = KSpaceSeries::zeros(1, 3, 5, 4);
        let out = xt_step(&m, &v, &ctx, &params(0.0, 1.0, XtPrior::SmoothedTv3d, 1), 0).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn out_of_range_iteration() {
        let m = test_image();
        let ctx = EncodingContext::new(SensitivityMaps::ones(5, 4), SamplingMask::full(3, 5)).unwrap();
        let v = KSpaceSeries::zeros(1, 3, 5, 4);
        let err = xt_step(&m, &v, &ctx, &params(0.5, 1.0, XtPrior::Zero, 2), 2).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { index: 2, depth: 2 }));
    }
}
