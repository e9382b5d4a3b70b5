//! Simulated experiments: acquisition of seeded cases, the ablation sweep and
//! the built-in self-test.

use std::collections::BTreeSet;

use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ablation_label, disable, ExperimentConfig, Prior};
use crate::data::{ImageSeries, KSpaceSeries, SamplingMask, SensitivityMaps, C64};
use crate::error::Result;
use crate::metrics::{evaluate, report_table, MetricRow};
use crate::phantom::{generate_phantom, simulate_acquisition, PhantomSpec};
use crate::pipeline::{reconstruct_with, zero_filled, OutputFrom, ReconConfig, ReconOptions};
use crate::prior_kt::{apply_kernel, apply_kernel_direct, calibrate_kernel, KtKernel};
use crate::prior_xt::{tv_objective, tv_residual};
use crate::sampling::{extract_acs, make_mask, MaskSpec};
use crate::transforms::{adjoint_op, fft1t, forward_op, ifft1t, inner_re, rss, coil_expand, EncodingContext};

/// One simulated acquisition with its ground truth.
#[derive(Debug, Clone)]
pub struct Case {
    pub truth: ImageSeries,
    pub maps: SensitivityMaps,
    pub mask: SamplingMask,
    pub v_acq: KSpaceSeries,
    /// `rss(S m)` of the ground truth.
    pub reference: Array3<f64>,
}

/// Phantom spec of sweep case `k`.
pub fn case_spec(base: &PhantomSpec, k: usize) -> PhantomSpec {
    PhantomSpec { seed: base.seed.wrapping_add(k as u64), ..base.clone() }
}

pub fn simulate_case(spec: &PhantomSpec, mask_spec: &MaskSpec) -> Result<Case> {
    let (truth, maps) = generate_phantom(spec)?;
    let mask = make_mask(mask_spec)?;
    let v_acq = simulate_acquisition(&truth, &maps, &mask, spec.noise_std, ExperimentConfig::noise_seed(spec.seed))?;
    let reference = rss(&coil_expand(&truth, &maps)?);
    Ok(Case { truth, maps, mask, v_acq, reference })
}

/// Methods evaluated by the sweep: zero-filled, the full pipeline and every ablation.
pub fn methods(cfg: &ExperimentConfig) -> Vec<(String, Option<BTreeSet<Prior>>)> {
    let mut out = vec![("zero-filled".to_string(), None), ("full".to_string(), Some(BTreeSet::new()))];
    out.extend(cfg.ablations.iter().map(|a| (ablation_label(a), Some(a.clone()))));
    out
}

/// Runs every `(case, acceleration, method)` cell. `progress` receives each row as it completes.
pub fn run_bench(cfg: &ExperimentConfig, mut progress: impl FnMut(&MetricRow)) -> Result<Vec<MetricRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for k in 0..cfg.sweep.cases {
        let spec = case_spec(&cfg.phantom, k);
        let tag = format!("{}-{}", spec.contrast, spec.seed);
        // the calibration block does not depend on the acceleration, so the
        // kernel is reused whenever the block is bit-identical
        let mut cached: Option<(KSpaceSeries, KtKernel)> = None;
        for &r in &cfg.sweep.accelerations {
            let case = simulate_case(&spec, &MaskSpec { acceleration: r, offset: 0, ..cfg.mask.clone() })?;
            for (method, ablation) in methods(cfg) {
                let image = match &ablation {
                    None => zero_filled(&case.v_acq),
                    Some(off) => {
                        let recon = ReconConfig { enabled: disable(cfg.recon.enabled, off), ..cfg.recon.clone() };
                        let mut options = ReconOptions::default();
                        if recon.enabled.kt {
                            let acs = extract_acs(&case.v_acq, &case.mask)?;
                            match &cached {
                                Some((block, kernel)) if *block == acs => options.kernel = Some(kernel.clone()),
                                _ => {
                                    let kernel = calibrate_kernel(&acs, recon.kt.extents, recon.kt.tikhonov_rel)?;
                                    options.kernel = Some(kernel.clone());
                                    cached = Some((acs, kernel));
                                }
                            }
                        }
                        reconstruct_with(&case.v_acq, &case.mask, &recon, options)?.image
                    }
                };
                let row = MetricRow {
                    method,
                    acceleration: r,
                    tag: tag.clone(),
                    scores: evaluate(&image, &case.reference, &cfg.metrics)?,
                };
                progress(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Metadata lines recorded at the top of a bench report.
pub fn bench_meta(cfg: &ExperimentConfig) -> Vec<String> {
    vec![
        format!("config_hash={}", cfg.hash()),
        format!("unroll_T={}", cfg.recon.unroll_t),
        format!(
            "fusion=alpha:{},beta:{},gamma:{}",
            cfg.recon.fusion.alpha, cfg.recon.fusion.beta, cfg.recon.fusion.gamma
        ),
        format!("acs_lines={}", cfg.mask.acs_lines),
        cfg.metrics.describe(),
    ]
}

pub fn bench_csv(cfg: &ExperimentConfig, rows: &[MetricRow]) -> Result<String> {
    report_table(rows, &bench_meta(cfg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, value: f64, tol: f64) -> Check {
    Check { name, passed: value <= tol, detail: format!("{value:.3e} (tolerance {tol:.0e})") }
}

fn random_c(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
}

fn random_maps(rng: &mut ChaCha8Rng, nc: usize, ny: usize, nx: usize) -> SensitivityMaps {
    let mut s = Array3::from_shape_fn((nc, ny, nx), |_| random_c(rng));
    for y in 0..ny {
        for x in 0..nx {
            let e: f64 = (0..nc).map(|c| s[[c, y, x]].norm_sqr()).sum::<f64>().sqrt();
            for c in 0..nc {
                s[[c, y, x]] /= e;
            }
        }
    }
    SensitivityMaps::from_array(s)
}

/// Small numerical contracts exercised by the `selftest` command.
pub fn selftest() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    let (nc, t, ny, nx) = (3, 4, 10, 8);
    let maps = random_maps(&mut rng, nc, ny, nx);
    let mask = make_mask(&MaskSpec { ny, t_frames: t, acceleration: 3, acs_lines: 4, offset: 0, interleaved: true })
        .expect("valid mask");
    let ctx = EncodingContext::new(maps.clone(), mask.clone()).expect("consistent shapes");
    let m = ImageSeries::from_array(Array3::from_shape_fn((t, ny, nx), |_| random_c(&mut rng)));
    let v = KSpaceSeries::from_array(Array4::from_shape_fn((nc, t, ny, nx), |_| random_c(&mut rng)));

    let am = forward_op(&m, &ctx).expect("forward");
    let ahv = adjoint_op(&v, &ctx).expect("adjoint");
    let lhs = inner_re(am.as_slice(), v.as_slice());
    let rhs = inner_re(m.as_slice(), ahv.as_slice());
    out.push(check("encoding adjoint", (lhs - rhs).abs() / lhs.abs().max(rhs.abs()), 1e-10));

    let rho = fft1t(&m);
    let e0: f64 = m.as_slice().iter().map(|z| z.norm_sqr()).sum();
    let e1: f64 = rho.data().iter().map(|z| z.norm_sqr()).sum();
    out.push(check("temporal Parseval", (e0 - e1).abs() / e0, 1e-12));
    let back = ifft1t(&rho);
    let err = back.as_slice().iter().zip(m.as_slice()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    out.push(check("temporal round trip", err, 1e-12));

    let eps = 0.05;
    let g = tv_residual(&m, eps, 1.0);
    let h = ImageSeries::from_array(Array3::from_shape_fn((t, ny, nx), |_| random_c(&mut rng)));
    let step = 1e-5;
    let shifted = |s: f64| {
        ImageSeries::from_array(m.data() + &h.data().mapv(|z| z * s))
    };
    let fd = (tv_objective(&shifted(step), eps) - tv_objective(&shifted(-step), eps)) / (2.0 * step);
    let an = inner_re(g.as_slice(), h.as_slice());
    out.push(check("tv gradient", (fd - an).abs() / an.abs().max(1e-30), 1e-5));

    let acs_block = KSpaceSeries::from_array(Array4::from_shape_fn((2, 4, 14, 14), |_| random_c(&mut rng)));
    match calibrate_kernel(&acs_block, crate::prior_kt::KtExtents { t: 3, ky: 3, kx: 3 }, 1e-2) {
        Ok(k) => {
            let a = apply_kernel(&acs_block, &k).expect("apply");
            let b = apply_kernel_direct(&acs_block, &k).expect("apply");
            let err = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            out.push(check("kernel spectral apply", err, 1e-12));
        }
        Err(e) => out.push(Check { name: "kernel spectral apply", passed: false, detail: e.to_string() }),
    }

    let full = SamplingMask::full(t, ny);
    let v_full = forward_op(&m, &EncodingContext::new(maps.clone(), full.clone()).expect("shapes")).expect("forward");
    let mut cfg = ReconConfig { unroll_t: 2, output_from: OutputFrom::FusedKspace, ..ReconConfig::default() };
    cfg.kt.extents = crate::prior_kt::KtExtents { t: 1, ky: 3, kx: 3 };
    let detail = reconstruct_with(&v_full, &full, &cfg, ReconOptions { maps: Some(maps), ..Default::default() })
        .and_then(|r| crate::metrics::nmse(&r.image, &zero_filled(&v_full)));
    match detail {
        Ok(e) => out.push(check("full sampling recovery", e, 1e-10)),
        Err(e) => out.push(Check { name: "full sampling recovery", passed: false, detail: e.to_string() }),
    }
    out
}
