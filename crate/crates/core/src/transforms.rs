//! Coil projection and the multi-coil encoding operator `A = M F_s S`.

use std::sync::Arc;

use ndarray::{Array3, Array4, Axis};

use crate::data::{
    ensure_same, ImageSeries, KSpaceSeries, SamplingMask, SensitivityMaps, TemporalSpectrum, C64,
};
use crate::error::{Error, Result};
use crate::fft::{fft1t_array, CenteredFft2, Direction};
use crate::par;

/// Per-coil image stack over `(c, t, y, x)`.
pub type CoilImages = Array4<C64>;

/// Centered unitary transform along the frame axis.
pub fn fft1t(m: &ImageSeries) -> TemporalSpectrum {
    TemporalSpectrum::from_array(fft1t_array(m.data(), Direction::Forward))
}

pub fn ifft1t(rho: &TemporalSpectrum) -> ImageSeries {
    ImageSeries::from_array(fft1t_array(rho.data(), Direction::Inverse))
}

fn check_maps(shape: (usize, usize, usize), sens: &SensitivityMaps) -> Result<()> {
    let (_, ny, nx) = sens.shape();
    ensure_same((shape.1, shape.2), (ny, nx), "image vs sensitivity spatial shape")
}

/// `out[c, t] = S[c] * m[t]`.
pub fn coil_expand(m: &ImageSeries, sens: &SensitivityMaps) -> Result<CoilImages> {
    check_maps(m.shape(), sens)?;
    let (t, ny, nx) = m.shape();
    let nc = sens.coils();
    let npix = ny * nx;
    let s = sens.data().as_slice().expect("standard layout");
    let img = m.as_slice();
    let mut out = Array4::zeros((nc, t, ny, nx));
    par::for_each_chunk(
        out.as_slice_mut().expect("standard layout"),
        npix,
        |i, plane| {
            let (c, f) = (i / t, i % t);
            let sc = &s[c * npix..(c + 1) * npix];
            let mf = &img[f * npix..(f + 1) * npix];
            for ((o, a), b) in plane.iter_mut().zip(sc).zip(mf) {
                *o = a * b;
            }
        },
    );
    Ok(out)
}

/// `out[t] = sum_c conj(S[c]) * x[c, t]`, summed in coil order.
pub fn coil_combine(x: &CoilImages, sens: &SensitivityMaps) -> Result<ImageSeries> {
    let (nc, t, ny, nx) = x.dim();
    ensure_same(
        (nc, ny, nx),
        sens.shape(),
        "coil images vs sensitivity shape",
    )?;
    let npix = ny * nx;
    let s = sens.data().as_slice().expect("standard layout");
    let xs = x.as_slice().expect("standard layout");
    let mut out = Array3::zeros((t, ny, nx));
    par::for_each_chunk(
        out.as_slice_mut().expect("standard layout"),
        npix,
        |f, plane| {
            for c in 0..nc {
                let sc = &s[c * npix..(c + 1) * npix];
                let xc = &xs[(c * t + f) * npix..(c * t + f + 1) * npix];
                for ((o, a), b) in plane.iter_mut().zip(sc).zip(xc) {
                    *o += a.conj() * b;
                }
            }
        },
    );
    Ok(ImageSeries::from_array(out))
}

/// Root sum of squares over the coil axis.
pub fn rss(x: &CoilImages) -> Array3<f64> {
    let (nc, t, ny, nx) = x.dim();
    let mut out = Array3::<f64>::zeros((t, ny, nx));
    for c in 0..nc {
        for ((f, y, xx), o) in out.indexed_iter_mut() {
            *o += x[[c, f, y, xx]].norm_sqr();
        }
    }
    out.mapv_inplace(f64::sqrt);
    out
}

/// Sensitivity maps and sampling mask defining `A = M F_s S`.
#[derive(Clone)]
pub struct EncodingContext {
    sens: SensitivityMaps,
    mask: SamplingMask,
    plan: Arc<CenteredFft2>,
}

impl EncodingContext {
    pub fn new(sens: SensitivityMaps, mask: SamplingMask) -> Result<Self> {
        let (_, ny, nx) = sens.shape();
        ensure_same(mask.ny(), ny, "mask ky extent vs sensitivity rows")?;
        Ok(Self {
            plan: Arc::new(CenteredFft2::new(ny, nx)),
            sens,
            mask,
        })
    }

    pub fn sens(&self) -> &SensitivityMaps {
        &self.sens
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn coils(&self) -> usize {
        self.sens.coils()
    }

    pub fn plan(&self) -> &CenteredFft2 {
        &self.plan
    }

    fn check_image(&self, m: &ImageSeries) -> Result<()> {
        check_maps(m.shape(), &self.sens)?;
        ensure_same(m.frames(), self.mask.frames(), "image frames vs mask frames")
    }

    fn check_kspace(&self, v: &KSpaceSeries) -> Result<()> {
        let (nc, t, ny, nx) = v.shape();
        ensure_same(
            (nc, ny, nx),
            self.sens.shape(),
            "k-space vs sensitivity shape",
        )?;
        ensure_same(t, self.mask.frames(), "k-space frames vs mask frames")
    }

    /// `M v`: zeroes unsampled `(t, ky)` lines.
    pub fn apply_mask(&self, v: &KSpaceSeries) -> Result<KSpaceSeries> {
        self.check_kspace(v)?;
        Ok(mask_lines(v, &self.mask))
    }

    /// `F_s S m` on every line, or only on sampled lines (others exactly zero) when `masked`.
    fn encode(&self, m: &ImageSeries, masked: bool) -> Result<KSpaceSeries> {
        self.check_image(m)?;
        let (t, ny, nx) = m.shape();
        let nc = self.coils();
        let npix = ny * nx;
        let s = self.sens.data().as_slice().expect("standard layout");
        let img = m.as_slice();
        let mut out = Array4::zeros((nc, t, ny, nx));
        par::for_each_chunk_init(
            out.as_slice_mut().expect("standard layout"),
            npix,
            || self.plan.scratch(),
            |scratch, i, plane| {
                let (c, f) = (i / t, i % t);
                let sc = &s[c * npix..(c + 1) * npix];
                let mf = &img[f * npix..(f + 1) * npix];
                for ((o, a), b) in plane.iter_mut().zip(sc).zip(mf) {
                    *o = a * b;
                }
                let keep = masked.then(|| self.mask.frame(f));
                self.plan.forward(plane, keep, scratch);
            },
        );
        Ok(KSpaceSeries::from_array(out))
    }

    /// `S^H F_s^H v`, optionally reading only sampled lines.
    fn decode(&self, v: &KSpaceSeries, masked: bool) -> Result<ImageSeries> {
        self.check_kspace(v)?;
        let (nc, t, ny, nx) = v.shape();
        let npix = ny * nx;
        let s = self.sens.data().as_slice().expect("standard layout");
        let src = v.as_slice();
        let mut out = Array3::zeros((t, ny, nx));
        par::for_each_chunk_init(
            out.as_slice_mut().expect("standard layout"),
            npix,
            || (self.plan.scratch(), vec![C64::default(); npix]),
            |(scratch, buf), f, plane| {
                let keep = masked.then(|| self.mask.frame(f));
                for c in 0..nc {
                    buf.copy_from_slice(&src[(c * t + f) * npix..][..npix]);
                    self.plan.inverse(buf, keep, scratch);
                    let sc = &s[c * npix..(c + 1) * npix];
                    for ((o, a), b) in plane.iter_mut().zip(sc).zip(buf.iter()) {
                        *o += a.conj() * b;
                    }
                }
            },
        );
        Ok(ImageSeries::from_array(out))
    }

    /// `A^H A m`, using that the row transforms cancel against the line mask.
    pub fn normal(&self, m: &ImageSeries) -> Result<ImageSeries> {
        self.check_image(m)?;
        let (t, ny, nx) = m.shape();
        let npix = ny * nx;
        let nc = self.coils();
        let s = self.sens.data().as_slice().expect("standard layout");
        let img = m.as_slice();
        let mut out = Array3::zeros((t, ny, nx));
        par::for_each_chunk_init(
            out.as_slice_mut().expect("standard layout"),
            npix,
            || (self.plan.scratch(), vec![C64::default(); npix]),
            |(scratch, buf), f, plane| {
                let mf = &img[f * npix..(f + 1) * npix];
                for c in 0..nc {
                    let sc = &s[c * npix..(c + 1) * npix];
                    for ((o, a), b) in buf.iter_mut().zip(sc).zip(mf) {
                        *o = a * b;
                    }
                    self.plan.project_columns(buf, self.mask.frame(f), scratch);
                    for ((o, a), b) in plane.iter_mut().zip(sc).zip(buf.iter()) {
                        *o += a.conj() * b;
                    }
                }
            },
        );
        Ok(ImageSeries::from_array(out))
    }

    /// `(A m, A^H A m)` sharing the column transforms.
    pub fn encode_normal(&self, m: &ImageSeries) -> Result<(KSpaceSeries, ImageSeries)> {
        self.check_image(m)?;
        let (t, ny, nx) = m.shape();
        let npix = ny * nx;
        let nc = self.coils();
        let s = self.sens.data().as_slice().expect("standard layout");
        let img = m.as_slice();
        let mut am = Array4::<C64>::zeros((nc, t, ny, nx));
        let mut normal = Array3::<C64>::zeros((t, ny, nx));
        let work: Vec<_> = am
            .axis_iter_mut(Axis(1))
            .zip(normal.as_slice_mut().expect("standard layout").chunks_mut(npix))
            .collect();
        par::for_each_item(work, |f, (mut coils, plane)| {
            let mut scratch = self.plan.scratch();
            let mut buf = vec![C64::default(); npix];
            let keep = self.mask.frame(f);
            let mf = &img[f * npix..(f + 1) * npix];
            for c in 0..nc {
                let sc = &s[c * npix..(c + 1) * npix];
                for ((o, a), b) in buf.iter_mut().zip(sc).zip(mf) {
                    *o = a * b;
                }
                self.plan.forward_columns(&mut buf, &mut scratch);
                let mut k = coils.index_axis_mut(Axis(0), c);
                let k = k.as_slice_mut().expect("standard layout");
                for (y, (dst, row)) in k.chunks_exact_mut(nx).zip(buf.chunks_exact_mut(nx)).enumerate() {
                    if keep[y] {
                        dst.copy_from_slice(row);
                    } else {
                        row.fill(C64::default());
                    }
                }
                self.plan.forward_rows(k, Some(keep), &mut scratch);
                self.plan.inverse_columns(&mut buf, &mut scratch);
                for ((o, a), b) in plane.iter_mut().zip(sc).zip(buf.iter()) {
                    *o += a.conj() * b;
                }
            }
        });
        Ok((KSpaceSeries::from_array(am), ImageSeries::from_array(normal)))
    }

    /// Per-coil `F_s S m` over all lines.
    pub fn coil_kspace(&self, m: &ImageSeries) -> Result<KSpaceSeries> {
        self.encode(m, false)
    }

    /// Coil-combined image `S^H F_s^H v` of a complete (unmasked) k-space.
    pub fn combine_kspace(&self, v: &KSpaceSeries) -> Result<ImageSeries> {
        self.decode(v, false)
    }
}

/// Zeroes the unsampled lines of `v` without touching sampled samples.
pub(crate) fn mask_lines(v: &KSpaceSeries, mask: &SamplingMask) -> KSpaceSeries {
    let mut out = v.data().clone();
    let (_, t, ny, nx) = v.shape();
    par::for_each_chunk(
        out.as_slice_mut().expect("standard layout"),
        ny * nx,
        |i, plane| {
            let keep = mask.frame(i % t);
            for (row, &k) in plane.chunks_exact_mut(nx).zip(keep) {
                if !k {
                    row.fill(C64::default());
                }
            }
        },
    );
    KSpaceSeries::from_array(out)
}

/// `A m = M F_s S m`. Unsampled lines are exactly zero.
pub fn forward_op(m: &ImageSeries, ctx: &EncodingContext) -> Result<KSpaceSeries> {
    ctx.encode(m, true)
}

/// `A^H v = S^H F_s^H M v`.
pub fn adjoint_op(v: &KSpaceSeries, ctx: &EncodingContext) -> Result<ImageSeries> {
    ctx.decode(v, true)
}

/// Gradient of `0.5 ||A m - v_acq||^2`, i.e. `S^H F_s^H (M F_s S m - v_acq)`.
pub fn fidelity_grad(
    m: &ImageSeries,
    v_acq: &KSpaceSeries,
    ctx: &EncodingContext,
) -> Result<ImageSeries> {
    let am = forward_op(m, ctx)?;
    residual_grad(&am, v_acq, ctx)
}

/// `A^H (am - v_acq)` for a precomputed `am = A m`.
pub(crate) fn residual_grad(
    am: &KSpaceSeries,
    v_acq: &KSpaceSeries,
    ctx: &EncodingContext,
) -> Result<ImageSeries> {
    if am.shape() != v_acq.shape() {
        return Err(Error::ShapeMismatch(format!(
            "predicted {:?} vs acquired {:?}",
            am.shape(),
            v_acq.shape()
        )));
    }
    let r = KSpaceSeries::from_array(am.data() - v_acq.data());
    adjoint_op(&r, ctx)
}

/// Real inner product `Re <a, b>` summed in storage order.
pub fn inner_re(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Complex inner product `<a, b> = sum conj(a) b`.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}
