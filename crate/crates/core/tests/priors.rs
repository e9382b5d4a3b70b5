mod common;

use ndarray::{s, Array4, Array5};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use common::*;
use ktrecon::prior_kt::{apply_kernel, apply_kernel_direct, calib_residual, calibrate_kernel, KtExtents, KtKernel};
use ktrecon::prior_xf::{shrink, soft_threshold_residual, xf_step, XfParams};
use ktrecon::prior_xt::{prior_residual, tv_objective, tv_residual, xt_step, XtParams, XtPrior};
use ktrecon::sampling::{apply_mask, make_mask, MaskSpec};
use ktrecon::sensitivity::{estimate_maps, DEFAULT_EPS_REL};
use ktrecon::transforms::{fft1t, fidelity_grad, forward_op, ifft1t, EncodingContext};
use ktrecon::{ImageSeries, KSpaceSeries, SamplingMask, SensitivityMaps, C64};

fn xt(eta: f64, lambda: f64, kind: XtPrior, depth: usize) -> XtParams {
    XtParams { eta: vec![eta; depth], lambda: vec![lambda; depth], prior_kind: kind, tv_eps: 1e-3, tv_weight: 0.05 }
}

fn random_kernel(rng: &mut ChaCha8Rng, nc: usize, e: KtExtents) -> KtKernel {
    let mut w = Array5::from_shape_fn((nc, nc, e.t, e.ky, e.kx), |_| cplx(rng));
    for c in 0..nc {
        w[[c, c, e.t / 2, e.ky / 2, e.kx / 2]] = C64::default();
    }
    KtKernel::new(w, 0.0).unwrap()
}

fn nmse(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    num / b.iter().map(|z| z.norm_sqr()).sum::<f64>()
}

#[test]
fn tv_gradient_matches_finite_differences() {
    let mut r = rng(31);
    let m = image(&mut r, 4, 9, 7);
    let (eps, weight) = (1e-3, 0.7);
    let g = tv_residual(&m, eps, weight);
    let h = 1e-6;
    for _ in 0..20 {
        let d = image(&mut r, 4, 9, 7);
        let at = |s: f64| ImageSeries::new(m.data() + &d.data().mapv(|z| z * s)).unwrap();
        let fd = weight * (tv_objective(&at(h), eps) - tv_objective(&at(-h), eps)) / (2.0 * h);
        let an: f64 = g.as_slice().iter().zip(d.as_slice()).map(|(a, b)| (a.conj() * b).re).sum();
        assert!((fd - an).abs() <= 1e-5 * an.abs(), "{fd} vs {an}");
    }
}

#[test]
fn gradient_descent_reaches_truth_when_fully_sampled() {
    let mut r = rng(32);
    let (t, ny, nx) = (4, 10, 12);
    let truth = image(&mut r, t, ny, nx);
    let ctx = EncodingContext::new(SensitivityMaps::ones(ny, nx), SamplingMask::full(t, ny)).unwrap();
    let v = forward_op(&truth, &ctx).unwrap();
    let p = xt(0.5, 1.0, XtPrior::Zero, 50);
    let mut m = ImageSeries::zeros(t, ny, nx);
    for n in 0..50 {
        m = xt_step(&m, &v, &ctx, &p, n).unwrap();
    }
    assert!(nmse(m.as_slice(), truth.as_slice()) < 1e-8);
}

#[test]
fn data_objective_does_not_increase() {
    let mut r = rng(33);
    let (nc, t, ny, nx) = (3, 5, 16, 12);
    for (eta, lambda) in [(0.5, 1.0), (1.0, 1.5), (0.9, 0.2)] {
        let ctx = EncodingContext::new(maps(&mut r, nc, ny, nx), mask(&mut r, t, ny)).unwrap();
        let v = ctx.apply_mask(&kspace(&mut r, nc, t, ny, nx)).unwrap();
        let objective = |m: &ImageSeries| {
            let am = forward_op(m, &ctx).unwrap();
            0.5 * am.as_slice().iter().zip(v.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>()
        };
        let p = xt(eta, lambda, XtPrior::Zero, 30);
        let mut m = image(&mut r, t, ny, nx);
        let mut last = objective(&m);
        for n in 0..30 {
            m = xt_step(&m, &v, &ctx, &p, n).unwrap();
            let now = objective(&m);
            assert!(now <= last * (1.0 + 1e-12), "step {n}: {now} > {last}");
            last = now;
        }
    }
}

#[test]
fn step_is_bounded_by_its_two_terms() {
    let mut r = rng(34);
    let (nc, t, ny, nx) = (2, 4, 12, 10);
    let ctx = EncodingContext::new(maps(&mut r, nc, ny, nx), mask(&mut r, t, ny)).unwrap();
    let v = ctx.apply_mask(&kspace(&mut r, nc, t, ny, nx)).unwrap();
    for kind in [XtPrior::Zero, XtPrior::SmoothedTv3d] {
        let p = XtParams { eta: vec![0.3, 0.7], lambda: vec![2.0, 0.4], ..xt(0.0, 0.0, kind, 2) };
        for n in 0..2 {
            let m = image(&mut r, t, ny, nx);
            let out = xt_step(&m, &v, &ctx, &p, n).unwrap();
            let moved: Vec<C64> = out.as_slice().iter().zip(m.as_slice()).map(|(a, b)| a - b).collect();
            let prior = norm(prior_residual(&m, &p).as_slice());
            let grad = norm(fidelity_grad(&m, &v, &ctx).unwrap().as_slice());
            assert!(norm(&moved) <= p.eta[n] * (prior + p.lambda[n] * grad) + 1e-12);
        }
    }
}

#[test]
fn frequency_step_is_conjugate_of_image_step() {
    let mut r = rng(35);
    let (nc, t, ny, nx) = (3, 6, 10, 8);
    let ctx = EncodingContext::new(maps(&mut r, nc, ny, nx), mask(&mut r, t, ny)).unwrap();
    let v = ctx.apply_mask(&kspace(&mut r, nc, t, ny, nx)).unwrap();
    let m = image(&mut r, t, ny, nx);
    let pf = XfParams { zeta: vec![0.6], lambda: vec![1.3], tau_rel: 0.0, protect_dc: true };
    let pt = xt(0.6, 1.3, XtPrior::Zero, 1);
    let a = xf_step(&fft1t(&m), &v, &ctx, &pf, 0).unwrap();
    let b = fft1t(&xt_step(&m, &v, &ctx, &pt, 0).unwrap());
    assert!(max_diff(a.data().as_slice().unwrap(), b.data().as_slice().unwrap()) < 1e-12);
}

#[test]
fn full_shrinkage_of_dc_free_spectrum() {
    let mut r = rng(36);
    let rho = fft1t(&image(&mut r, 5, 4, 4));
    let res = soft_threshold_residual(&rho, 1e9, false);
    assert_eq!(res, rho);
    let back = ifft1t(&rho);
    assert_eq!(back.shape(), (5, 4, 4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn shrink_is_non_expansive(a in (-5.0f64..5.0, -5.0f64..5.0), b in (-5.0f64..5.0, -5.0f64..5.0), tau in 0.0f64..4.0) {
        let (a, b) = (C64::new(a.0, a.1), C64::new(b.0, b.1));
        prop_assert!((shrink(a, tau) - shrink(b, tau)).norm() <= (a - b).norm() + 1e-15);
    }

    #[test]
    fn shrink_keeps_phase(re in -5.0f64..5.0, im in -5.0f64..5.0, tau in 0.0f64..4.0) {
        let z = C64::new(re, im);
        let s = shrink(z, tau);
        if s != C64::default() {
            let d = (s.arg() - z.arg()).abs();
            prop_assert!(d.min(2.0 * std::f64::consts::PI - d) <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kernel_application_is_linear(nc in 1usize..=3, t in 1usize..=4, ny in 3usize..=14, nx in 3usize..=14, seed: u64) {
        let mut r = rng(seed);
        let k = random_kernel(&mut r, nc, KtExtents { t: 3, ky: 3, kx: 5 });
        let (v1, v2) = (kspace(&mut r, nc, t, ny, nx), kspace(&mut r, nc, t, ny, nx));
        let (a, b) = (cplx(&mut r) * 4.0, cplx(&mut r) * 4.0);
        let mix = KSpaceSeries::new(v1.data().mapv(|z| z * a) + &v2.data().mapv(|z| z * b)).unwrap();
        let lhs = apply_kernel(&mix, &k).unwrap();
        let (g1, g2) = (apply_kernel(&v1, &k).unwrap(), apply_kernel(&v2, &k).unwrap());
        let rhs: Vec<C64> = g1.as_slice().iter().zip(g2.as_slice()).map(|(x, y)| x * a + y * b).collect();
        let scale = norm(&rhs).max(1.0);
        prop_assert!(max_diff(lhs.as_slice(), &rhs) <= 1e-12 * scale);
        let direct = apply_kernel_direct(&mix, &k).unwrap();
        prop_assert!(max_diff(lhs.as_slice(), direct.as_slice()) <= 1e-12 * scale);
    }

    #[test]
    fn kernel_application_commutes_with_shifts(nc in 1usize..=3, dy in 1usize..=3, dx in 1usize..=3, seed: u64) {
        let mut r = rng(seed);
        let e = KtExtents { t: 3, ky: 3, kx: 5 };
        let (t, ny, nx) = (3, 16, 18);
        let k = random_kernel(&mut r, nc, e);
        let v = kspace(&mut r, nc, t, ny, nx);
        let mut shifted = Array4::<C64>::zeros((nc, t, ny, nx));
        shifted.slice_mut(s![.., .., dy.., dx..]).assign(&v.data().slice(s![.., .., ..ny - dy, ..nx - dx]));
        let a = apply_kernel(&v, &k).unwrap();
        let b = apply_kernel(&KSpaceSeries::new(shifted).unwrap(), &k).unwrap();
        let (hy, hx) = (e.ky / 2, e.kx / 2);
        for c in 0..nc {
            for f in 0..t {
                for y in dy + hy..ny - hy {
                    for x in dx + hx..nx - hx {
                        let d = (b.data()[[c, f, y, x]] - a.data()[[c, f, y - dy, x - dx]]).norm();
                        prop_assert!(d <= 1e-12, "({c},{f},{y},{x}) {d}");
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn planted_kernels_are_identified(nc in 2usize..=4, seed: u64) {
        let mut r = rng(seed);
        let e = KtExtents { t: 3, ky: 3, kx: 3 };
        let (v, w) = planted(&mut r, nc, e, (4, 14, 14));
        let k = calibrate_kernel(&v, e, 0.0).unwrap();
        for (a, b) in k.weights().iter().zip(w.iter()) {
            prop_assert!((a - b).norm() < 1e-8, "{a} vs {b}");
        }
        prop_assert!(calib_residual(&k, &v).unwrap() < 1e-6);
        for c in 0..nc {
            prop_assert_eq!(k.weights()[[c, c, 1, 1, 1]], C64::default());
        }
    }
}

#[test]
fn residual_does_not_grow_with_temporal_support() {
    let mut r = rng(37);
    for _ in 0..3 {
        let v = kspace(&mut r, 3, 4, 14, 20);
        let mut last = f64::INFINITY;
        for t in [1, 3] {
            let k = calibrate_kernel(&v, KtExtents { t, ky: 3, kx: 3 }, 0.0).unwrap();
            let res = calib_residual(&k, &v).unwrap();
            assert!(res > 0.0 && res <= 1.0);
            assert!(res <= last * (1.0 + 1e-9), "t={t}: {res} > {last}");
            last = res;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn estimated_maps_are_normalized(nc in 1usize..=5, t in 1usize..=4, seed: u64) {
        let mut r = rng(seed);
        let (ny, nx) = (r.random_range(12..=24usize), r.random_range(4..=16usize));
        let mk = make_mask(&MaskSpec {
            ny,
            t_frames: t,
            acceleration: 3,
            acs_lines: 6,
            offset: 0,
            interleaved: true,
        })
        .unwrap();
        let v = apply_mask(&kspace(&mut r, nc, t, ny, nx), &mk).unwrap();
        let s = estimate_maps(&v, &mk, DEFAULT_EPS_REL).unwrap();
        for e in s.energy().iter() {
            prop_assert!(*e == 0.0 || (e - 1.0).abs() <= 1e-12, "{e}");
        }
        let g = C64::from_polar(r.random_range(0.1..10.0), r.random_range(-3.0..3.0));
        let scaled = KSpaceSeries::new(v.data().mapv(|z| z * g)).unwrap();
        let s2 = estimate_maps(&scaled, &mk, DEFAULT_EPS_REL).unwrap();
        for (a, b) in s.data().iter().zip(s2.data().iter()) {
            prop_assert!((a.norm() - b.norm()).abs() <= 1e-10);
        }
    }
}
