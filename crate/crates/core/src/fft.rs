//! Centered unitary discrete Fourier transforms.
//!
//! Centering uses floor convention: the zero frequency (and the image
//! origin) sits at index `N / 2`. A centered transform is
//! `fftshift(DFT(ifftshift(x)))` scaled by `1/sqrt(N)` in both directions.

use std::sync::Arc;

use ndarray::Array3;
use rustfft::{Fft, FftPlanner};

use crate::data::C64;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Centered unitary 1D transform of length `n`.
#[derive(Clone)]
pub struct CenteredFft1 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl CenteredFft1 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            scale: (n as f64).sqrt().recip(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn scratch_len(&self) -> usize {
        self.forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len())
    }

    /// Transforms every consecutive length-`n` segment of `buf` in place.
    pub fn process(&self, buf: &mut [C64], dir: Direction, scratch: &mut Vec<C64>) {
        let n = self.n;
        let half = n / 2;
        scratch.resize(self.scratch_len(), C64::default());
        for seg in buf.chunks_exact_mut(n) {
            seg.rotate_left(half);
        }
        match dir {
            Direction::Forward => self.forward.process_with_scratch(buf, scratch),
            Direction::Inverse => self.inverse.process_with_scratch(buf, scratch),
        }
        for seg in buf.chunks_exact_mut(n) {
            seg.rotate_right(half);
            for z in seg.iter_mut() {
                *z *= self.scale;
            }
        }
    }
}

/// Per-worker buffers for [`CenteredFft2`].
pub struct Fft2Scratch {
    transpose: Vec<C64>,
    fft: Vec<C64>,
}

/// Centered unitary 2D transform over `(y, x)` planes stored row-major.
#[derive(Clone)]
pub struct CenteredFft2 {
    ny: usize,
    nx: usize,
    along_y: CenteredFft1,
    along_x: CenteredFft1,
}

impl CenteredFft2 {
    pub fn new(ny: usize, nx: usize) -> Self {
        Self {
            ny,
            nx,
            along_y: CenteredFft1::new(ny),
            along_x: CenteredFft1::new(nx),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    pub fn scratch(&self) -> Fft2Scratch {
        Fft2Scratch {
            transpose: vec![C64::default(); self.ny * self.nx],
            fft: Vec::new(),
        }
    }

    fn columns(&self, plane: &mut [C64], dir: Direction, s: &mut Fft2Scratch) {
        let (ny, nx) = (self.ny, self.nx);
        transpose(plane, &mut s.transpose, ny, nx);
        self.along_y.process(&mut s.transpose, dir, &mut s.fft);
        transpose(&s.transpose, plane, nx, ny);
    }

    /// `F_y^H diag(keep) F_y` on every column: the spatial part of `A^H A`
    /// once the row transforms cancel.
    pub(crate) fn project_columns(&self, plane: &mut [C64], keep: &[bool], s: &mut Fft2Scratch) {
        let (ny, nx) = (self.ny, self.nx);
        transpose(plane, &mut s.transpose, ny, nx);
        self.along_y.process(&mut s.transpose, Direction::Forward, &mut s.fft);
        for col in s.transpose.chunks_exact_mut(ny) {
            for (z, &k) in col.iter_mut().zip(keep) {
                if !k {
                    *z = C64::default();
                }
            }
        }
        self.along_y.process(&mut s.transpose, Direction::Inverse, &mut s.fft);
        transpose(&s.transpose, plane, nx, ny);
    }

    /// Forward transform along `y` only, leaving `(ky, x)` in `plane`.
    pub(crate) fn forward_columns(&self, plane: &mut [C64], s: &mut Fft2Scratch) {
        self.columns(plane, Direction::Forward, s);
    }

    /// Inverse of [`Self::forward_columns`].
    pub(crate) fn inverse_columns(&self, plane: &mut [C64], s: &mut Fft2Scratch) {
        self.columns(plane, Direction::Inverse, s);
    }

    /// Forward transform along `x` of the kept rows; other rows become zero.
    pub(crate) fn forward_rows(&self, plane: &mut [C64], keep: Option<&[bool]>, s: &mut Fft2Scratch) {
        self.rows(plane, Direction::Forward, keep, s);
    }

    fn rows(&self, plane: &mut [C64], dir: Direction, rows: Option<&[bool]>, s: &mut Fft2Scratch) {
        match rows {
            None => self.along_x.process(plane, dir, &mut s.fft),
            Some(keep) => {
                for (row, &k) in plane.chunks_exact_mut(self.nx).zip(keep) {
                    if k {
                        self.along_x.process(row, dir, &mut s.fft);
                    } else {
                        row.fill(C64::default());
                    }
                }
            }
        }
    }

    /// Forward transform of one plane. With `keep_rows`, output ky rows not
    /// kept are set to exactly zero and never computed.
    pub fn forward(&self, plane: &mut [C64], keep_rows: Option<&[bool]>, s: &mut Fft2Scratch) {
        self.columns(plane, Direction::Forward, s);
        self.rows(plane, Direction::Forward, keep_rows, s);
    }

    /// Inverse transform of one plane. With `nonzero_rows`, input ky rows not
    /// listed are treated as zero.
    pub fn inverse(&self, plane: &mut [C64], nonzero_rows: Option<&[bool]>, s: &mut Fft2Scratch) {
        self.rows(plane, Direction::Inverse, nonzero_rows, s);
        self.columns(plane, Direction::Inverse, s);
    }

    pub fn process(&self, plane: &mut [C64], dir: Direction, s: &mut Fft2Scratch) {
        match dir {
            Direction::Forward => self.forward(plane, None, s),
            Direction::Inverse => self.inverse(plane, None, s),
        }
    }

    /// Transforms every `ny * nx` plane of `data` in place.
    pub fn process_planes(&self, data: &mut [C64], dir: Direction) {
        par::for_each_chunk_init(
            data,
            self.ny * self.nx,
            || self.scratch(),
            |s, _, plane| self.process(plane, dir, s),
        );
    }
}

/// Blocked out-of-place transpose of a `rows x cols` row-major matrix.
pub(crate) fn transpose(src: &[C64], dst: &mut [C64], rows: usize, cols: usize) {
    const B: usize = 16;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Centered 2D transform of every `(y, x)` plane of an array whose last two axes are spatial.
pub fn fft2c<D: ndarray::Dimension>(
    x: &ndarray::Array<C64, D>,
    dir: Direction,
) -> ndarray::Array<C64, D> {
    let shape = x.shape();
    let r = shape.len();
    assert!(r >= 2, "fft2c needs at least two axes");
    let plan = CenteredFft2::new(shape[r - 2], shape[r - 1]);
    let mut out = x.as_standard_layout().into_owned();
    plan.process_planes(out.as_slice_mut().expect("standard layout"), dir);
    out
}

/// Centered unitary transform along axis 0 of a `(t, y, x)` array.
pub fn fft1t_array(x: &Array3<C64>, dir: Direction) -> Array3<C64> {
    let (t, ny, nx) = x.dim();
    let npix = ny * nx;
    let plan = CenteredFft1::new(t);
    // (t, pix) -> (pix, t) so each temporal line is contiguous
    let mut lines = vec![C64::default(); t * npix];
    transpose(
        x.as_standard_layout().as_slice().expect("standard layout"),
        &mut lines,
        t,
        npix,
    );
    let block = 256 * t;
    par::for_each_chunk_init(
        &mut lines,
        block,
        Vec::new,
        |scratch, _, chunk| plan.process(chunk, dir, scratch),
    );
    let mut out = vec![C64::default(); t * npix];
    transpose(&lines, &mut out, npix, t);
    Array3::from_shape_vec((t, ny, nx), out).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn naive_centered_dft(x: &[C64], dir: Direction) -> Vec<C64> {
        let n = x.len();
        let c = (n / 2) as f64;
        let sign = if dir == Direction::Forward { -1.0 } else { 1.0 };
        (0..n)
            .map(|k| {
                let mut acc = C64::default();
                for (j, &v) in x.iter().enumerate() {
                    let ph = sign * 2.0 * std::f64::consts::PI * (k as f64 - c) * (j as f64 - c)
                        / n as f64;
                    acc += v * C64::from_polar(1.0, ph);
                }
                acc / (n as f64).sqrt()
            })
            .collect()
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    }

    #[test]
    fn matches_naive_centered_dft_for_odd_and_even() {
        let mut seed = 7;
        for n in [1usize, 2, 5, 6, 9, 12] {
            let x: Vec<C64> = (0..n).map(|_| C64::new(lcg(&mut seed), lcg(&mut seed))).collect();
            let plan = CenteredFft1::new(n);
            for dir in [Direction::Forward, Direction::Inverse] {
                let mut y = x.clone();
                plan.process(&mut y, dir, &mut Vec::new());
                let want = naive_centered_dft(&x, dir);
                for (a, b) in y.iter().zip(&want) {
                    assert!((a - b).norm() < 1e-12, "n={n}");
                }
            }
        }
    }

    #[test]
    fn constant_plane_concentrates_at_center() {
        let x = Array2::from_elem((4, 4), C64::new(1.0, 0.0));
        let y = fft2c(&x, Direction::Forward);
        for ((r, c), v) in y.indexed_iter() {
            if (r, c) == (2, 2) {
                assert!((v - C64::new(4.0, 0.0)).norm() < 1e-12);
            } else {
                assert!(v.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn pruned_rows_match_full_transform() {
        let mut seed = 3;
        let plane: Vec<C64> = (0..6 * 5).map(|_| C64::new(lcg(&mut seed), lcg(&mut seed))).collect();
        let keep = [true, false, false, true, true, false];
        let plan = CenteredFft2::new(6, 5);
        let mut s = plan.scratch();
        let mut full = plane.clone();
        plan.forward(&mut full, None, &mut s);
        let mut pruned = plane.clone();
        plan.forward(&mut pruned, Some(&keep), &mut s);
        for y in 0..6 {
            for x in 0..5 {
                let p = pruned[y * 5 + x];
                if keep[y] {
                    assert_eq!(p, full[y * 5 + x]);
                } else {
                    assert_eq!(p, C64::default());
                }
            }
        }
    }

    #[test]
    fn length_one_temporal_transform_is_identity() {
        let x = Array3::from_shape_fn((1, 3, 2), |(_, y, x)| C64::new(y as f64, x as f64));
        assert_eq!(fft1t_array(&x, Direction::Forward), x);
    }
}
