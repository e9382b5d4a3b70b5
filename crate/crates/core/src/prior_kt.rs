//! Scan-specific k-t interpolation kernel.
//!
//! Each output coil sample is predicted from a `(dt, dky, dkx)` neighbourhood
//! of all coils, excluding its own center sample. Weights are fitted on the
//! calibration block by Tikhonov-regularized least squares. The temporal axis
//! wraps circularly; `ky` and `kx` are zero-padded.

use std::sync::Arc;

use nalgebra::DMatrix;
use ndarray::{Array2, Array4, Array5};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::data::{KSpaceSeries, SamplingMask, C64};
use crate::error::{Error, Result};
use crate::fft::transpose;
use crate::par;

/// Kernel support along `(t, ky, kx)`; every extent is odd.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KtExtents {
    pub t: usize,
    pub ky: usize,
    pub kx: usize,
}

impl Default for KtExtents {
    fn default() -> Self {
        Self { t: 3, ky: 5, kx: 5 }
    }
}

impl KtExtents {
    pub fn validate(&self) -> Result<()> {
        for (name, e) in [("t", self.t), ("ky", self.ky), ("kx", self.kx)] {
            if e % 2 == 0 {
                return Err(Error::InvalidGeometry(format!(
                    "kernel extent along {name} must be odd, got {e}"
                )));
            }
        }
        Ok(())
    }

    pub fn taps(&self) -> usize {
        self.t * self.ky * self.kx
    }

    fn center(&self) -> usize {
        ((self.t / 2) * self.ky + self.ky / 2) * self.kx + self.kx / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KtKernel {
    weights: Array5<C64>,
    tikhonov_rel: f64,
}

impl KtKernel {
    /// Weights over `(c_out, c_in, dt, dky, dkx)`.
    pub fn new(weights: Array5<C64>, tikhonov_rel: f64) -> Result<Self> {
        let (co, ci, et, ey, ex) = weights.dim();
        if co != ci || co == 0 {
            return Err(Error::InvalidGeometry(format!(
                "kernel must map {co} coils onto themselves, got {ci} inputs"
            )));
        }
        KtExtents { t: et, ky: ey, kx: ex }.validate()?;
        if !weights.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite("kernel weights"));
        }
        if !(tikhonov_rel >= 0.0 && tikhonov_rel.is_finite()) {
            return Err(Error::Config(format!("tikhonov_rel must be nonnegative, got {tikhonov_rel}")));
        }
        for c in 0..co {
            if weights[[c, c, et / 2, ey / 2, ex / 2]] != C64::default() {
                return Err(Error::InvalidGeometry(format!(
                    "self center tap of coil {c} must be zero"
                )));
            }
        }
        Ok(Self { weights: weights.as_standard_layout().into_owned(), tikhonov_rel })
    }

    pub fn zeros(coils: usize, extents: KtExtents) -> Self {
        Self {
            weights: Array5::zeros((coils, coils, extents.t, extents.ky, extents.kx)),
            tikhonov_rel: 0.0,
        }
    }

    pub fn weights(&self) -> &Array5<C64> {
        &self.weights
    }

    pub fn tikhonov_rel(&self) -> f64 {
        self.tikhonov_rel
    }

    pub fn coils(&self) -> usize {
        self.weights.dim().0
    }

    pub fn extents(&self) -> KtExtents {
        let (_, _, t, ky, kx) = self.weights.dim();
        KtExtents { t, ky, kx }
    }
}

/// Interior of a `(t, ny, nx)` block: every t, and the `(ky, kx)` positions
/// whose full window lies inside the block.
fn interior(ny: usize, nx: usize, e: KtExtents) -> Option<(usize, usize)> {
    (ny >= e.ky && nx >= e.kx).then(|| (ny - e.ky + 1, nx - e.kx + 1))
}

/// Hermitian Gram matrix `P^H P` over all `nc * taps` neighbourhood columns,
/// accumulated over interior positions. Column order is `(c, dt, dky, dkx)`.
pub(crate) fn gram_matrix(v: &KSpaceSeries, e: KtExtents) -> Result<DMatrix<C64>> {
    let (nc, nt, ny, nx) = v.shape();
    let (iy, ix) = interior(ny, nx, e).ok_or(Error::InsufficientAcs { positions: 0, required: 1 })?;
    let k = e.taps();
    let data = v.as_slice();
    let (ht, hy, hx) = ((e.t / 2) as isize, (e.ky / 2) as isize, (e.kx / 2) as isize);
    let pairs: Vec<(usize, usize)> = (0..nc).flat_map(|a| (a..nc).map(move |b| (a, b))).collect();
    let plane = ny * nx;

    let blocks = par::map_range(pairs.len(), |p| {
        let (ca, cb) = pairs[p];
        let mut block = Array2::<C64>::zeros((k, k));
        let mut field = vec![C64::default(); plane];
        let mut prefix = vec![C64::default(); (ny + 1) * (nx + 1)];
        for lt in -2 * ht..=2 * ht {
            for ly in -2 * hy..=2 * hy {
                for lx in -2 * hx..=2 * hx {
                    field.fill(C64::default());
                    let u0 = (-ly).max(0) as usize;
                    let u1 = (ny as isize - ly.max(0)) as usize;
                    let w0 = (-lx).max(0) as usize;
                    let w1 = (nx as isize - lx.max(0)) as usize;
                    for t in 0..nt {
                        let tb = (t as isize + lt).rem_euclid(nt as isize) as usize;
                        let a = &data[(ca * nt + t) * plane..(ca * nt + t + 1) * plane];
                        let b = &data[(cb * nt + tb) * plane..(cb * nt + tb + 1) * plane];
                        for u in u0..u1 {
                            let ub = (u as isize + ly) as usize;
                            let fr = &mut field[u * nx + w0..u * nx + w1];
                            let ar = &a[u * nx + w0..u * nx + w1];
                            let wb0 = (w0 as isize + lx) as usize;
                            let br = &b[ub * nx + wb0..ub * nx + wb0 + (w1 - w0)];
                            for ((f, x), y) in fr.iter_mut().zip(ar).zip(br) {
                                *f += x.conj() * y;
                            }
                        }
                    }
                    for u in 0..ny {
                        let mut run = C64::default();
                        for w in 0..nx {
                            run += field[u * nx + w];
                            prefix[(u + 1) * (nx + 1) + w + 1] = prefix[u * (nx + 1) + w + 1] + run;
                        }
                    }
                    let box_sum = |y0: usize, x0: usize| {
                        let (y1, x1) = (y0 + iy, x0 + ix);
                        prefix[y1 * (nx + 1) + x1] - prefix[y0 * (nx + 1) + x1] - prefix[y1 * (nx + 1) + x0]
                            + prefix[y0 * (nx + 1) + x0]
                    };
                    for jy in 0..e.ky {
                        let ky = jy as isize + ly;
                        if ky < 0 || ky >= e.ky as isize {
                            continue;
                        }
                        for jx in 0..e.kx {
                            let kx = jx as isize + lx;
                            if kx < 0 || kx >= e.kx as isize {
                                continue;
                            }
                            let s = box_sum(jy, jx);
                            for jt in 0..e.t {
                                let kt = jt as isize + lt;
                                if kt < 0 || kt >= e.t as isize {
                                    continue;
                                }
                                let row = (jt * e.ky + jy) * e.kx + jx;
                                let col = (kt as usize * e.ky + ky as usize) * e.kx + kx as usize;
                                block[[row, col]] = s;
                            }
                        }
                    }
                }
            }
        }
        block
    });

    let n = nc * k;
    let mut g = DMatrix::<C64>::zeros(n, n);
    for (&(ca, cb), block) in pairs.iter().zip(&blocks) {
        for r in 0..k {
            for c in 0..k {
                g[(ca * k + r, cb * k + c)] = block[[r, c]];
                if ca != cb {
                    g[(cb * k + c, ca * k + r)] = block[[r, c]].conj();
                }
            }
        }
    }
    Ok(g)
}

/// Least-squares kernel fitted on a calibration block `(Nc, T, n_acs, Nx)`.
pub fn calibrate_kernel(v_acs: &KSpaceSeries, extents: KtExtents, tikhonov_rel: f64) -> Result<KtKernel> {
    extents.validate()?;
    if !(tikhonov_rel >= 0.0 && tikhonov_rel.is_finite()) {
        return Err(Error::Config(format!("tikhonov_rel must be nonnegative, got {tikhonov_rel}")));
    }
    let (nc, nt, ny, nx) = v_acs.shape();
    let k = extents.taps();
    let unknowns = nc * k - 1;
    let required = 4 * unknowns;
    let rows = interior(ny, nx, extents).map_or(0, |(iy, ix)| nt * iy * ix);
    if rows < required {
        return Err(Error::InsufficientAcs { positions: rows, required });
    }
    let g = gram_matrix(v_acs, extents)?;
    let center = extents.center();

    let solutions = par::map_range(nc, |co| {
        let cc = co * k + center;
        let keep: Vec<usize> = (0..nc * k).filter(|&j| j != cc).collect();
        let mut a = g.select_rows(&keep).select_columns(&keep);
        let rhs = g.select_rows(&keep).column(cc).into_owned();
        let trace: f64 = (0..unknowns).map(|i| a[(i, i)].re).sum();
        if trace <= 0.0 {
            return nalgebra::DVector::<C64>::zeros(unknowns);
        }
        let mut ridge = tikhonov_rel * trace / rows as f64;
        for i in 0..unknowns {
            a[(i, i)] += ridge;
        }
        loop {
            if let Some(ch) = a.clone().cholesky() {
                return ch.solve(&rhs);
            }
            // numerically singular: retry with a growing tiny ridge
            let extra = if ridge == 0.0 { 1e-14 * trace / unknowns as f64 } else { ridge };
            for i in 0..unknowns {
                a[(i, i)] += extra;
            }
            ridge += extra;
        }
    });

    let mut w = Array5::<C64>::zeros((nc, nc, extents.t, extents.ky, extents.kx));
    for (co, sol) in solutions.iter().enumerate() {
        let cc = co * k + center;
        let mut idx = 0;
        for j in 0..nc * k {
            if j == cc {
                continue;
            }
            let (ci, tap) = (j / k, j % k);
            let (jt, rest) = (tap / (extents.ky * extents.kx), tap % (extents.ky * extents.kx));
            w[[co, ci, jt, rest / extents.kx, rest % extents.kx]] = sol[idx];
            idx += 1;
        }
    }
    KtKernel::new(w, tikhonov_rel)
}

fn check_apply(v: &KSpaceSeries, kernel: &KtKernel) -> Result<()> {
    if v.coils() != kernel.coils() {
        return Err(Error::ShapeMismatch(format!(
            "kernel maps {} coils, k-space has {}",
            kernel.coils(),
            v.coils()
        )));
    }
    Ok(())
}

/// Reference evaluation of the kernel by explicit neighbourhood sums.
pub fn apply_kernel_direct(v: &KSpaceSeries, kernel: &KtKernel) -> Result<KSpaceSeries> {
    check_apply(v, kernel)?;
    let (nc, nt, ny, nx) = v.shape();
    let e = kernel.extents();
    let (ht, hy, hx) = (e.t / 2, e.ky / 2, e.kx / 2);
    let w = kernel.weights();
    let x = v.data();
    let out = Array4::from_shape_fn((nc, nt, ny, nx), |(co, t, y, xx)| {
        let mut acc = C64::default();
        for ci in 0..nc {
            for jt in 0..e.t {
                let tt = (t + nt * e.t + jt - ht) % nt;
                for jy in 0..e.ky {
                    let yy = y as isize + jy as isize - hy as isize;
                    if yy < 0 || yy >= ny as isize {
                        continue;
                    }
                    for jx in 0..e.kx {
                        let xs = xx as isize + jx as isize - hx as isize;
                        if xs < 0 || xs >= nx as isize {
                            continue;
                        }
                        acc += w[[co, ci, jt, jy, jx]] * x[[ci, tt, yy as usize, xs as usize]];
                    }
                }
            }
        }
        acc
    });
    Ok(KSpaceSeries::from_array(out))
}

/// Smallest `2^a 3^b 5^c` not below `n`.
fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Kernel evaluation through zero-padded 2D spectra, planned for one grid.
///
/// Spectra are kept in transposed `(kx, ky)` layout so that the forward and
/// inverse passes skip one transpose each.
pub struct KernelOperator {
    nc: usize,
    extents: KtExtents,
    dims: (usize, usize, usize),
    py: usize,
    px: usize,
    fwd_y: Arc<dyn Fft<f64>>,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    /// Spectra grouped by `kx`: `[kx][c_out][c_in][dt][ky]`.
    spectra: Vec<C64>,
}

struct OpScratch {
    plane: Vec<C64>,
    other: Vec<C64>,
    fft: Vec<C64>,
}

impl KernelOperator {
    pub fn new(kernel: &KtKernel, t: usize, ny: usize, nx: usize) -> Self {
        let e = kernel.extents();
        let nc = kernel.coils();
        let py = smooth_size(ny + e.ky / 2);
        let px = smooth_size(nx + e.kx / 2);
        let mut planner = FftPlanner::new();
        let mut op = Self {
            nc,
            extents: e,
            dims: (t, ny, nx),
            py,
            px,
            fwd_y: planner.plan_fft_forward(py),
            fwd_x: planner.plan_fft_forward(px),
            inv_y: planner.plan_fft_inverse(py),
            inv_x: planner.plan_fft_inverse(px),
            spectra: vec![C64::default(); nc * nc * e.t * py * px],
        };
        let w = kernel.weights();
        let (hy, hx) = (e.ky / 2, e.kx / 2);
        let size = py * px;
        let taps = nc * nc * e.t;
        let mut planes = vec![C64::default(); taps * size];
        par::for_each_chunk_init(
            &mut planes,
            size,
            || op.scratch(),
            |s, i, out| {
                let (co, ci, jt) = (i / (nc * e.t), (i / e.t) % nc, i % e.t);
                s.plane.fill(C64::default());
                // correlation tap at offset d goes to position -d (mod P)
                for jy in 0..e.ky {
                    for jx in 0..e.kx {
                        let y = (py + hy - jy) % py;
                        let x = (px + hx - jx) % px;
                        s.plane[y * px + x] = w[[co, ci, jt, jy, jx]];
                    }
                }
                op.forward_rows(s, py);
                out.copy_from_slice(&s.other);
            },
        );
        for (r, group) in op.spectra.chunks_exact_mut(taps * py).enumerate() {
            for (k, dst) in group.chunks_exact_mut(py).enumerate() {
                dst.copy_from_slice(&planes[k * size + r * py..][..py]);
            }
        }
        op
    }

    fn scratch(&self) -> OpScratch {
        let len = [&self.fwd_y, &self.fwd_x, &self.inv_y, &self.inv_x]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        OpScratch {
            plane: vec![C64::default(); self.py * self.px],
            other: vec![C64::default(); self.py * self.px],
            fft: vec![C64::default(); len],
        }
    }

    /// Unnormalized forward 2D DFT of `s.plane` (only the first `rows` rows
    /// nonzero) into `s.other` in `(kx, ky)` layout.
    fn forward_rows(&self, s: &mut OpScratch, rows: usize) {
        let (py, px) = (self.py, self.px);
        self.fwd_x.process_with_scratch(&mut s.plane[..rows * px], &mut s.fft);
        transpose(&s.plane, &mut s.other, py, px);
        self.fwd_y.process_with_scratch(&mut s.other, &mut s.fft);
    }

    /// Inverse of `s.other` (`(kx, ky)` layout) into `s.plane`, unnormalized;
    /// only the first `keep.len()` rows where `keep` is set are valid.
    fn inverse_rows(&self, s: &mut OpScratch, keep: &[bool]) {
        let (py, px) = (self.py, self.px);
        self.inv_y.process_with_scratch(&mut s.other, &mut s.fft);
        transpose(&s.other, &mut s.plane, px, py);
        for (row, _) in s.plane.chunks_exact_mut(px).zip(keep).filter(|(_, k)| **k) {
            self.inv_x.process_with_scratch(row, &mut s.fft);
        }
    }

    pub fn apply(&self, v: &KSpaceSeries) -> Result<KSpaceSeries> {
        self.apply_skipping(v, None)
    }

    /// Like [`Self::apply`], but lines sampled in `skip` are left at zero
    /// instead of being evaluated.
    pub fn apply_skipping(&self, v: &KSpaceSeries, skip: Option<&SamplingMask>) -> Result<KSpaceSeries> {
        let (t, ny, nx) = self.dims;
        let mut out = Array4::<C64>::zeros((self.nc, t, ny, nx));
        self.apply_into(v, skip, 1.0, out.as_slice_mut().expect("standard layout"))?;
        Ok(KSpaceSeries::from_array(out))
    }

    /// Writes `gamma G v` into the lines of `dst` not sampled in `skip`;
    /// sampled lines of `dst` are left untouched.
    pub(crate) fn apply_into(
        &self,
        v: &KSpaceSeries,
        skip: Option<&SamplingMask>,
        gamma: f64,
        dst: &mut [C64],
    ) -> Result<()> {
        let (nc, nt, ny, nx) = v.shape();
        if nc != self.nc || (nt, ny, nx) != self.dims {
            return Err(Error::ShapeMismatch(format!(
                "operator planned for {} coils {:?}, got {:?}",
                self.nc,
                self.dims,
                v.shape()
            )));
        }
        if let Some(mask) = skip {
            if (mask.frames(), mask.ny()) != (nt, ny) {
                return Err(Error::ShapeMismatch(format!(
                    "mask ({} frames, {} lines) vs k-space {:?}",
                    mask.frames(),
                    mask.ny(),
                    v.shape()
                )));
            }
        }
        let plane = ny * nx;
        if dst.len() != nc * nt * plane {
            return Err(Error::ShapeMismatch(format!("output buffer of {} samples", dst.len())));
        }
        let (py, px) = (self.py, self.px);
        let size = py * px;
        let e = self.extents;
        let ht = e.t / 2;
        let src = v.as_slice();

        let mut input = vec![C64::default(); nc * nt * size];
        par::for_each_chunk_init(
            &mut input,
            size,
            || self.scratch(),
            |s, i, out| {
                s.plane.fill(C64::default());
                let p = &src[i * plane..(i + 1) * plane];
                for y in 0..ny {
                    s.plane[y * px..y * px + nx].copy_from_slice(&p[y * nx..(y + 1) * nx]);
                }
                self.forward_rows(s, ny);
                out.copy_from_slice(&s.other);
            },
        );

        let scale = 1.0 / size as f64;
        let taps = nc * nc * e.t;
        let mut product = vec![C64::default(); nt * size];
        for (co, dst) in dst.chunks_exact_mut(nt * plane).enumerate() {
            // one kx column at a time so each group of spectra is read once
            par::for_each_chunk(&mut product, nt * py, |r, out| {
                let spec = &self.spectra[(r * taps + co * nc * e.t) * py..][..nc * e.t * py];
                for t in 0..nt {
                    let acc = &mut out[t * py..][..py];
                    acc.fill(C64::default());
                    for ci in 0..nc {
                        for jt in 0..e.t {
                            let tt = (t + nt * e.t + jt - ht) % nt;
                            let k = &spec[(ci * e.t + jt) * py..][..py];
                            let x = &input[(ci * nt + tt) * size + r * py..][..py];
                            for ((o, a), b) in acc.iter_mut().zip(k).zip(x) {
                                *o += a * b;
                            }
                        }
                    }
                }
            });
            par::for_each_chunk_init(
                dst,
                plane,
                || self.scratch(),
                |s, t, dst| {
                    for (r, row) in s.other.chunks_exact_mut(py).enumerate() {
                        row.copy_from_slice(&product[(r * nt + t) * py..][..py]);
                    }
                    let keep: Vec<bool> = match skip {
                        Some(mask) => mask.frame(t).iter().map(|k| !k).collect(),
                        None => vec![true; ny],
                    };
                    self.inverse_rows(s, &keep);
                    for y in (0..ny).filter(|&y| keep[y]) {
                        for (d, z) in dst[y * nx..(y + 1) * nx].iter_mut().zip(&s.plane[y * px..y * px + nx]) {
                            *d = (z * scale) * gamma;
                        }
                    }
                },
            );
        }
        Ok(())
    }
}

/// `G v`: kernel applied at every `(c, t, ky, kx)`.
pub fn apply_kernel(v: &KSpaceSeries, kernel: &KtKernel) -> Result<KSpaceSeries> {
    check_apply(v, kernel)?;
    let (_, t, ny, nx) = v.shape();
    KernelOperator::new(kernel, t, ny, nx).apply(v)
}

/// `sum |G v - v| / sum |v|` over interior calibration positions.
pub fn calib_residual(kernel: &KtKernel, v_acs: &KSpaceSeries) -> Result<f64> {
    check_apply(v_acs, kernel)?;
    let (_, _, ny, nx) = v_acs.shape();
    let e = kernel.extents();
    let (iy, ix) = interior(ny, nx, e).ok_or(Error::InsufficientAcs { positions: 0, required: 1 })?;
    let pred = apply_kernel(v_acs, kernel)?;
    let (hy, hx) = (e.ky / 2, e.kx / 2);
    let (mut num, mut den) = (0.0, 0.0);
    for (((_, _, y, x), &g), &z) in pred.data().indexed_iter().zip(v_acs.data().iter()) {
        if y < hy || y >= hy + iy || x < hx || x >= hx + ix {
            continue;
        }
        num += (g - z).norm();
        den += z.norm();
    }
    Ok(if den == 0.0 { 0.0 } else { num / den })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Array4<C64> {
        Array4::from_shape_fn(shape, |_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn random_kernel(rng: &mut ChaCha8Rng, nc: usize, e: KtExtents) -> KtKernel {
        let mut w = Array5::from_shape_fn((nc, nc, e.t, e.ky, e.kx), |_| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        for c in 0..nc {
            w[[c, c, e.t / 2, e.ky / 2, e.kx / 2]] = C64::default();
        }
        KtKernel::new(w, 0.0).unwrap()
    }

    #[test]
    fn fft_apply_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (e, shape) in [
            (KtExtents { t: 3, ky: 5, kx: 5 }, (3, 4, 9, 11)),
            (KtExtents { t: 1, ky: 3, kx: 1 }, (2, 1, 6, 4)),
            (KtExtents { t: 5, ky: 1, kx: 3 }, (2, 3, 5, 7)),
        ] {
            let k = random_kernel(&mut rng, shape.0, e);
            let v = KSpaceSeries::new(noise(&mut rng, shape)).unwrap();
            let a = apply_kernel(&v, &k).unwrap();
            let b = apply_kernel_direct(&v, &k).unwrap();
            for (x, y) in a.data().iter().zip(b.data().iter()) {
                assert!((x - y).norm() < 1e-12, "{e:?}");
            }
        }
    }

    #[test]
    fn gram_matches_explicit_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = KtExtents { t: 3, ky: 3, kx: 3 };
        let (nc, nt, ny, nx) = (2, 4, 6, 5);
        let v = noise(&mut rng, (nc, nt, ny, nx));
        let g = gram_matrix(&KSpaceSeries::new(v.clone()).unwrap(), e).unwrap();
        let mut rows = Vec::new();
        for t in 0..nt {
            for y in 1..ny - 1 {
                for x in 1..nx - 1 {
                    let mut r = Vec::new();
                    for c in 0..nc {
                        for jt in 0..3 {
                            for jy in 0..3 {
                                for jx in 0..3 {
                                    r.push(v[[c, (t + nt + jt - 1) % nt, y + jy - 1, x + jx - 1]]);
                                }
                            }
                        }
                    }
                    rows.push(r);
                }
            }
        }
        let n = nc * 27;
        for i in 0..n {
            for j in 0..n {
                let want: C64 = rows.iter().map(|r| r[i].conj() * r[j]).sum();
                assert!((g[(i, j)] - want).norm() < 1e-11, "({i},{j})");
            }
        }
    }

    /// Coil `nc - 1` is a dense kernel image of the others; calibration data
    /// are exactly self-consistent at every interior position.
    fn planted(rng: &mut ChaCha8Rng, nc: usize, e: KtExtents, shape: (usize, usize, usize)) -> (KSpaceSeries, Array5<C64>) {
        let (nt, ny, nx) = shape;
        let mut v = noise(rng, (nc, nt, ny, nx));
        let mut w = Array5::<C64>::zeros((nc, nc, e.t, e.ky, e.kx));
        let last = nc - 1;
        for ci in 0..last {
            for jt in 0..e.t {
                for jy in 0..e.ky {
                    for jx in 0..e.kx {
                        w[[last, ci, jt, jy, jx]] = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                    }
                }
            }
        }
        let k = KtKernel::new(w.clone(), 0.0).unwrap();
        let pred = apply_kernel_direct(&KSpaceSeries::new(v.clone()).unwrap(), &k).unwrap();
        v.index_axis_mut(ndarray::Axis(0), last)
            .assign(&pred.data().index_axis(ndarray::Axis(0), last));
        // the remaining coils follow by solving the same relation for their center
        let (ct, cy, cx) = (e.t / 2, e.ky / 2, e.kx / 2);
        for co in 0..last {
            let pivot = w[[last, co, ct, cy, cx]];
            for ci in 0..last {
                for jt in 0..e.t {
                    for jy in 0..e.ky {
                        for jx in 0..e.kx {
                            if ci == co && (jt, jy, jx) == (ct, cy, cx) {
                                continue;
                            }
                            w[[co, ci, jt, jy, jx]] = -w[[last, ci, jt, jy, jx]] / pivot;
                        }
                    }
                }
            }
            w[[co, last, ct, cy, cx]] = C64::new(1.0, 0.0) / pivot;
        }
        (KSpaceSeries::new(v).unwrap(), w)
    }

    #[test]
    fn planted_kernel_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let e = KtExtents { t: 3, ky: 3, kx: 3 };
        let (v, w) = planted(&mut rng, 3, e, (4, 12, 12));
        let k = calibrate_kernel(&v, e, 0.0).unwrap();
        for (a, b) in k.weights().iter().zip(w.iter()) {
            assert!((a - b).norm() < 1e-8, "{a} vs {b}");
        }
        assert!(calib_residual(&k, &v).unwrap() < 1e-6);
    }

    #[test]
    fn shifted_coil_pair_is_reproduced() {
        let (nt, ny, nx) = (4, 16, 24);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = C64::from_polar(0.97, 0.4);
        let base = noise(&mut rng, (1, nt, ny, 1));
        let mut v = Array4::<C64>::zeros((2, nt, ny, nx));
        for t in 0..nt {
            for y in 0..ny {
                for x in 0..nx {
                    v[[0, t, y, x]] = base[[0, t, y, 0]] * z.powu(x as u32);
                    if y >= 1 {
                        v[[1, t, y, x]] = v[[0, t, y - 1, x]] * 0.5;
                    }
                }
            }
        }
        let v = KSpaceSeries::new(v).unwrap();
        let k = calibrate_kernel(&v, KtExtents::default(), 1e-12).unwrap();
        assert!(calib_residual(&k, &v).unwrap() < 1e-6);
    }

    #[test]
    fn zero_data_gives_zero_kernel() {
        let v = KSpaceSeries::zeros(2, 4, 16, 24);
        let k = calibrate_kernel(&v, KtExtents::default(), 1e-2).unwrap();
        assert!(k.weights().iter().all(|z| *z == C64::default()));
        assert_eq!(calib_residual(&k, &v).unwrap(), 0.0);
    }

    #[test]
    fn self_center_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = KSpaceSeries::new(noise(&mut rng, (3, 4, 16, 32))).unwrap();
        let e = KtExtents::default();
        let k = calibrate_kernel(&v, e, 1e-2).unwrap();
        for c in 0..3 {
            assert_eq!(k.weights()[[c, c, 1, 2, 2]], C64::default());
        }
    }

    #[test]
    fn too_few_positions() {
        let v = KSpaceSeries::zeros(4, 1, 6, 8);
        assert!(matches!(
            calibrate_kernel(&v, KtExtents::default(), 1e-2),
            Err(Error::InsufficientAcs { .. })
        ));
        let v = KSpaceSeries::zeros(1, 1, 3, 8);
        assert!(matches!(
            calibrate_kernel(&v, KtExtents::default(), 1e-2),
            Err(Error::InsufficientAcs { positions: 0, .. })
        ));
    }

    #[test]
    fn zero_kernel_residual_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = KSpaceSeries::new(noise(&mut rng, (2, 2, 8, 8))).unwrap();
        let k = KtKernel::zeros(2, KtExtents::default());
        assert!((calib_residual(&k, &v).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn white_noise_is_not_self_predictable() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = KSpaceSeries::new(noise(&mut rng, (2, 4, 12, 16))).unwrap();
        let e = KtExtents { t: 1, ky: 3, kx: 3 };
        let k = calibrate_kernel(&v, e, 1e-2).unwrap();
        let r = calib_residual(&k, &v).unwrap();
        assert!(r > 0.0 && r <= 1.0, "{r}");
    }

    #[test]
    fn larger_support_does_not_increase_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let e = KtExtents { t: 3, ky: 3, kx: 3 };
        let (v, _) = planted(&mut rng, 3, e, (4, 12, 12));
        let small = calibrate_kernel(&v, KtExtents { t: 1, ky: 3, kx: 3 }, 0.0).unwrap();
        let large = calibrate_kernel(&v, e, 0.0).unwrap();
        assert!(calib_residual(&large, &v).unwrap() <= calib_residual(&small, &v).unwrap());
    }

    #[test]
    fn rejects_bad_kernels() {
        let mut w = Array5::<C64>::zeros((2, 2, 3, 3, 3));
        w[[1, 1, 1, 1, 1]] = C64::new(1.0, 0.0);
        assert!(KtKernel::new(w, 0.0).is_err());
        assert!(KtKernel::new(Array5::zeros((2, 2, 2, 3, 3)), 0.0).is_err());
        assert!(KtKernel::new(Array5::zeros((2, 3, 1, 3, 3)), 0.0).is_err());
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(194), 200);
        assert_eq!(smooth_size(26), 27);
        assert_eq!(smooth_size(7), 8);
        assert_eq!(smooth_size(1), 1);
    }
}
