#![allow(dead_code)]

use ndarray::{Array3, Array4, Array5, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ktrecon::prior_kt::{apply_kernel_direct, KtExtents, KtKernel};
use ktrecon::sampling::{make_mask, MaskSpec};
use ktrecon::{ImageSeries, KSpaceSeries, SamplingMask, SensitivityMaps, C64};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cplx(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
}

pub fn image(rng: &mut ChaCha8Rng, t: usize, ny: usize, nx: usize) -> ImageSeries {
    ImageSeries::new(Array3::from_shape_fn((t, ny, nx), |_| cplx(rng))).unwrap()
}

pub fn kspace(rng: &mut ChaCha8Rng, nc: usize, t: usize, ny: usize, nx: usize) -> KSpaceSeries {
    KSpaceSeries::new(Array4::from_shape_fn((nc, t, ny, nx), |_| cplx(rng))).unwrap()
}

/// Random complex maps scaled so that `sum_c |S_c|^2 = 1` at every pixel.
pub fn maps(rng: &mut ChaCha8Rng, nc: usize, ny: usize, nx: usize) -> SensitivityMaps {
    let mut s = Array3::from_shape_fn((nc, ny, nx), |_| cplx(rng));
    for y in 0..ny {
        for x in 0..nx {
            let e = (0..nc).map(|c| s[[c, y, x]].norm_sqr()).sum::<f64>().sqrt();
            for c in 0..nc {
                s[[c, y, x]] /= e;
            }
        }
    }
    SensitivityMaps::new(s).unwrap()
}

pub fn mask(rng: &mut ChaCha8Rng, t: usize, ny: usize) -> SamplingMask {
    let r = rng.random_range(1..=4usize.min(ny));
    make_mask(&MaskSpec {
        ny,
        t_frames: t,
        acceleration: r,
        acs_lines: rng.random_range(0..=ny / 4),
        offset: rng.random_range(0..r),
        interleaved: rng.random(),
    })
    .unwrap()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn max_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// `|<x, y> - <u, w>|` relative to the larger of the two magnitudes.
pub fn adjoint_gap(lhs: C64, rhs: C64) -> f64 {
    (lhs - rhs).norm() / lhs.norm().max(rhs.norm())
}

/// K-space that a known kernel reproduces exactly at every position.
///
/// The last coil is a dense kernel image of the others; solving that
/// relation for each remaining coil's center gives the full planted kernel.
pub fn planted(rng: &mut ChaCha8Rng, nc: usize, e: KtExtents, shape: (usize, usize, usize)) -> (KSpaceSeries, Array5<C64>) {
    let (nt, ny, nx) = shape;
    let mut v = Array4::from_shape_fn((nc, nt, ny, nx), |_| cplx(rng));
    let mut w = Array5::<C64>::zeros((nc, nc, e.t, e.ky, e.kx));
    let last = nc - 1;
    for ci in 0..last {
        for jt in 0..e.t {
            for jy in 0..e.ky {
                for jx in 0..e.kx {
                    w[[last, ci, jt, jy, jx]] = cplx(rng);
                }
            }
        }
    }
    let k = KtKernel::new(w.clone(), 0.0).unwrap();
    let pred = apply_kernel_direct(&KSpaceSeries::new(v.clone()).unwrap(), &k).unwrap();
    v.index_axis_mut(Axis(0), last).assign(&pred.data().index_axis(Axis(0), last));
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

/// Interior positions of a `(t, ky, kx)` grid away from the zero-padded border.
pub fn interior(ny: usize, nx: usize, e: KtExtents) -> impl Iterator<Item = (usize, usize)> {
    let (hy, hx) = (e.ky / 2, e.kx / 2);
    (hy..ny - hy).flat_map(move |y| (hx..nx - hx).map(move |x| (y, x)))
}

/// Mean SSIM by explicit window loops, unbiased variances, averaged over frames.
pub fn oracle_ssim(a: &Array3<f64>, b: &Array3<f64>, w: usize, k1: f64, k2: f64, l: f64) -> f64 {
    let (t, ny, nx) = a.dim();
    let (c1, c2) = ((k1 * l) * (k1 * l), (k2 * l) * (k2 * l));
    let n = (w * w) as f64;
    let mut frames = 0.0;
    for f in 0..t {
        let mut total = 0.0;
        let mut count = 0;
        for y0 in 0..=ny - w {
            for x0 in 0..=nx - w {
                let (mut ma, mut mb) = (0.0, 0.0);
                for y in y0..y0 + w {
                    for x in x0..x0 + w {
                        ma += a[[f, y, x]];
                        mb += b[[f, y, x]];
                    }
                }
                ma /= n;
                mb /= n;
                let (mut va, mut vb, mut vab) = (0.0, 0.0, 0.0);
                for y in y0..y0 + w {
                    for x in x0..x0 + w {
                        let (da, db) = (a[[f, y, x]] - ma, b[[f, y, x]] - mb);
                        va += da * da;
                        vb += db * db;
                        vab += da * db;
                    }
                }
                va /= n - 1.0;
                vb /= n - 1.0;
                vab /= n - 1.0;
                total += (2.0 * ma * mb + c1) * (2.0 * vab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        frames += total / count as f64;
    }
    frames / t as f64
}

/// K-space where each coil obeys `v(y) = a v(y - 1) + b v(y + 1)` on every
/// interior line, with the matching two-tap kernel.
pub fn recurrent(r: &mut ChaCha8Rng, nc: usize, t: usize, ny: usize, nx: usize) -> (KSpaceSeries, KtKernel) {
    let mut w = Array5::<C64>::zeros((nc, nc, 1, 3, 1));
    let mut v = Array4::<C64>::zeros((nc, t, ny, nx));
    for c in 0..nc {
        let a = C64::new(0.5, 0.0) + cplx(r) * 0.1;
        let b = C64::new(0.5, 0.0) + cplx(r) * 0.1;
        w[[c, c, 0, 0, 0]] = a;
        w[[c, c, 0, 2, 0]] = b;
        for f in 0..t {
            for x in 0..nx {
                v[[c, f, 0, x]] = cplx(r);
                v[[c, f, 1, x]] = cplx(r);
                for y in 1..ny - 1 {
                    v[[c, f, y + 1, x]] = (v[[c, f, y, x]] - a * v[[c, f, y - 1, x]]) / b;
                }
            }
        }
    }
    (KSpaceSeries::new(v).unwrap(), KtKernel::new(w, 0.0).unwrap())
}
