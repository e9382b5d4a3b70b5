//! Cartesian ky-line undersampling with a fully sampled calibration block.

use ndarray::{s, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::data::{ensure_same, AcsRange, KSpaceSeries, SamplingMask};
use crate::error::{Error, Result};
use crate::transforms::mask_lines;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSpec {
    pub ny: usize,
    pub t_frames: usize,
    pub acceleration: usize,
    pub acs_lines: usize,
    pub offset: usize,
    /// Shift the sampling offset by one line per frame (modulo the acceleration).
    pub interleaved: bool,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            ny: 192,
            t_frames: 12,
            acceleration: 4,
            acs_lines: 24,
            offset: 0,
            interleaved: false,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ny == 0 || self.t_frames == 0 {
            return Err(Error::InvalidMask(format!(
                "mask needs at least one line and one frame, got ny={} t={}",
                self.ny, self.t_frames
            )));
        }
        if self.acceleration == 0 {
            return Err(Error::InvalidMask("acceleration must be at least 1".into()));
        }
        if self.acs_lines > self.ny {
            return Err(Error::InvalidMask(format!(
                "{} calibration lines exceed {} ky lines",
                self.acs_lines, self.ny
            )));
        }
        if self.offset >= self.acceleration {
            return Err(Error::InvalidMask(format!(
                "offset {} must be below acceleration {}",
                self.offset, self.acceleration
            )));
        }
        Ok(())
    }
}

/// Calibration block of `n` lines around `ny / 2`; even counts put the extra line below center.
pub fn acs_range(ny: usize, n: usize) -> Option<AcsRange> {
    if n == 0 {
        return None;
    }
    let start = ny / 2 - n / 2;
    Some(AcsRange {
        start,
        end: start + n - 1,
    })
}

pub fn make_mask(spec: &MaskSpec) -> Result<SamplingMask> {
    spec.validate()?;
    let r = spec.acceleration;
    let acs = acs_range(spec.ny, spec.acs_lines);
    let lines = Array2::from_shape_fn((spec.t_frames, spec.ny), |(t, k)| {
        let off = if spec.interleaved {
            (spec.offset + t) % r
        } else {
            spec.offset
        };
        k % r == off || acs.is_some_and(|a| a.contains(k))
    });
    SamplingMask::new(lines, acs, r)
}

/// `M v`: zeroes unsampled lines, leaving sampled samples bit-identical.
pub fn apply_mask(v: &KSpaceSeries, mask: &SamplingMask) -> Result<KSpaceSeries> {
    let (_, t, ny, _) = v.shape();
    ensure_same((t, ny), (mask.frames(), mask.ny()), "k-space vs mask shape")?;
    Ok(mask_lines(v, mask))
}

/// Contiguous calibration block `(Nc, T, acs_lines, Nx)`.
pub fn extract_acs(v: &KSpaceSeries, mask: &SamplingMask) -> Result<KSpaceSeries> {
    let acs = mask.acs().ok_or(Error::EmptyAcs)?;
    let (_, t, ny, _) = v.shape();
    ensure_same((t, ny), (mask.frames(), mask.ny()), "k-space vs mask shape")?;
    let block = v.data().slice(s![.., .., acs.start..=acs.end, ..]).to_owned();
    Ok(KSpaceSeries::from_array(block))
}

/// Writes a calibration block back into rows `acs` of `target`.
pub fn embed_acs(block: &KSpaceSeries, target: &mut Array4<crate::data::C64>, acs: AcsRange) -> Result<()> {
    let (nc, t, n, nx) = block.shape();
    let (tc, tt, tny, tnx) = target.dim();
    ensure_same((nc, t, nx), (tc, tt, tnx), "calibration block vs target")?;
    if n != acs.len() || acs.end >= tny {
        return Err(Error::ShapeMismatch(format!(
            "block of {n} lines does not fit range {}..={}",
            acs.start, acs.end
        )));
    }
    target
        .slice_mut(s![.., .., acs.start..=acs.end, ..])
        .assign(block.data());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::C64;
    use proptest::prelude::*;

    fn sampled(mask: &SamplingMask, t: usize) -> Vec<usize> {
        (0..mask.ny()).filter(|&k| mask.is_sampled(t, k)).collect()
    }

    /// Enumerates the sampling rule line by line.
    fn oracle(ny: usize, r: usize, acs: usize, offset: usize, t: usize, interleaved: bool) -> Vec<usize> {
        let c = ny / 2;
        let lo = c - acs / 2;
        let off = if interleaved { (offset + t) % r } else { offset };
        let mut out = Vec::new();
        for k in 0..ny {
            let regular = k % r == off;
            let in_acs = acs > 0 && k >= lo && k < lo + acs;
            if regular || in_acs {
                out.push(k);
            }
        }
        out
    }

    #[test]
    fn twelve_lines_r4_acs4() {
        let spec = MaskSpec { ny: 12, t_frames: 3, acceleration: 4, acs_lines: 4, offset: 0, interleaved: false };
        let m = make_mask(&spec).unwrap();
        for t in 0..3 {
            assert_eq!(sampled(&m, t), vec![0, 4, 5, 6, 7, 8]);
        }
        assert_eq!(m.acs(), Some(AcsRange { start: 4, end: 7 }));
    }

    #[test]
    fn protocol_masks_effective_acceleration() {
        // 192 lines with 24 calibration lines: the calibration block inflates
        // sampling, pushing R = 10 below R/2.
        let mut eff = Vec::new();
        for r in [4, 8, 10] {
            let spec = MaskSpec { acceleration: r, ..MaskSpec::default() };
            let m = make_mask(&spec).unwrap();
            eff.push(192.0 / m.sampled_per_frame()[0] as f64);
        }
        assert!(eff[0] >= 2.0 && eff[0] <= 4.0);
        assert!(eff[1] >= 4.0 && eff[1] <= 8.0);
        assert!(eff[2] < 5.0);
    }

    #[test]
    fn r1_is_full() {
        let spec = MaskSpec { ny: 9, t_frames: 2, acceleration: 1, acs_lines: 0, offset: 0, interleaved: true };
        assert!(make_mask(&spec).unwrap().is_full());
    }

    #[test]
    fn offset_one_without_acs() {
        let spec = MaskSpec { ny: 4, t_frames: 2, acceleration: 2, acs_lines: 0, offset: 1, interleaved: false };
        let m = make_mask(&spec).unwrap();
        assert_eq!(sampled(&m, 0), vec![1, 3]);
        assert_eq!(sampled(&m, 1), vec![1, 3]);
        assert_eq!(m.acs(), None);
    }

    #[test]
    fn too_many_acs_lines() {
        let spec = MaskSpec { ny: 4, acs_lines: 5, ..MaskSpec::default() };
        assert!(make_mask(&spec).is_err());
    }

    #[test]
    fn extract_and_embed() {
        let v = KSpaceSeries::new(Array4::from_shape_fn((2, 2, 12, 3), |(c, t, y, x)| {
            C64::new((c * 1000 + t * 100 + y * 10 + x) as f64, 0.5)
        }))
        .unwrap();
        let spec = MaskSpec { ny: 12, t_frames: 2, acceleration: 4, acs_lines: 4, offset: 0, interleaved: false };
        let mask = make_mask(&spec).unwrap();
        let block = extract_acs(&v, &mask).unwrap();
        assert_eq!(block.shape(), (2, 2, 4, 3));
        for y in 0..4 {
            assert_eq!(block.data()[[1, 1, y, 2]], v.data()[[1, 1, y + 4, 2]]);
        }
        let mut target = Array4::zeros((2, 2, 12, 3));
        embed_acs(&block, &mut target, mask.acs().unwrap()).unwrap();
        assert_eq!(
            target.slice(s![.., .., 4..8, ..]),
            v.data().slice(s![.., .., 4..8, ..])
        );
    }

    #[test]
    fn full_range_acs_is_whole_array() {
        let v = KSpaceSeries::new(Array4::from_elem((1, 1, 5, 2), C64::new(1.0, 2.0))).unwrap();
        let mask = SamplingMask::full(1, 5);
        assert_eq!(extract_acs(&v, &mask).unwrap(), v);
    }

    #[test]
    fn missing_acs_is_an_error() {
        let v = KSpaceSeries::zeros(1, 1, 4, 2);
        let spec = MaskSpec { ny: 4, t_frames: 1, acceleration: 2, acs_lines: 0, offset: 0, interleaved: false };
        let mask = make_mask(&spec).unwrap();
        assert!(matches!(extract_acs(&v, &mask), Err(Error::EmptyAcs)));
    }

    proptest! {
        #[test]
        fn mask_matches_enumeration(ny in 1usize..40, r in 1usize..11, t in 1usize..6,
                                    acs_frac in 0.0f64..1.0, off_frac in 0.0f64..1.0, inter: bool) {
            let acs = (acs_frac * (ny + 1) as f64) as usize;
            let offset = (off_frac * r as f64) as usize;
            let spec = MaskSpec { ny, t_frames: t, acceleration: r, acs_lines: acs.min(ny), offset, interleaved: inter };
            let want: Vec<Vec<usize>> = (0..t).map(|f| oracle(ny, r, acs.min(ny), offset, f, inter)).collect();
            match make_mask(&spec) {
                Ok(m) => {
                    for f in 0..t {
                        prop_assert_eq!(sampled(&m, f), want[f].clone());
                    }
                }
                Err(Error::InvalidMask(_)) => prop_assert!(want.iter().any(|w| w.is_empty())),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn effective_acceleration_bounds(ny in 16usize..256, r in 1usize..11, acs_frac in 0.0f64..0.25) {
            let acs = (acs_frac * ny as f64) as usize;
            let spec = MaskSpec { ny, t_frames: 1, acceleration: r, acs_lines: acs, offset: 0, interleaved: false };
            let m = make_mask(&spec).unwrap();
            let n = m.sampled_per_frame()[0];
            let regular = ny.div_ceil(r);
            prop_assert!(ny as f64 / n as f64 <= r as f64 + 1e-12);
            prop_assert!(n >= regular.max(acs));
            prop_assert!(n <= regular + acs);
        }

        #[test]
        fn interleaved_covers_all_residues(ny in 10usize..64, r in 1usize..11, start in 0usize..20) {
            let spec = MaskSpec { ny, t_frames: start + r, acceleration: r, acs_lines: 0, offset: 0, interleaved: true };
            let m = make_mask(&spec).unwrap();
            for k in 0..ny {
                prop_assert!((start..start + r).any(|t| m.is_sampled(t, k)));
            }
        }

        #[test]
        fn apply_mask_is_idempotent(r in 1usize..5, seed in 0u64..1000) {
            let spec = MaskSpec { ny: 8, t_frames: 2, acceleration: r, acs_lines: 2, offset: 0, interleaved: true };
            let mask = make_mask(&spec).unwrap();
            let v = KSpaceSeries::new(Array4::from_shape_fn((2, 2, 8, 3), |(c, t, y, x)| {
                C64::new(((seed as usize + c * 31 + t * 7 + y * 5 + x) % 13) as f64, 1.0)
            })).unwrap();
            let once = apply_mask(&v, &mask).unwrap();
            let twice = apply_mask(&once, &mask).unwrap();
            prop_assert_eq!(&once, &twice);
            for ((_, t, y, _), z) in once.data().indexed_iter() {
                if !mask.is_sampled(t, y) {
                    prop_assert_eq!(*z, C64::default());
                }
            }
        }
    }
}
