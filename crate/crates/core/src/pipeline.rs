//! Frequency fusion and the unrolled reconstruction.
//!
//! One iteration runs, in order:
//! 1. x-t step on `S^H F_s^H v`, giving `a = M F_s S m`;
//! 2. x-f step on `F_t m`, giving `b = M F_s S F_t^H rho`;
//! 3. kernel step `v_k = M v_acq + (1 - M) G v`;
//! 4. fusion `v = alpha a + beta b` on sampled lines and `gamma v_k` elsewhere.
//!
//! A disabled step passes its input through: without the x-t step `m` is the
//! coil-combined input and `a = M v`; without the x-f step `b = a`; without
//! the kernel `v_k = v`.
//!
//! The reconstruction is `rss(S m)` of the final image state, or with
//! `output_from = fused_kspace` the rss of the fused k-space after re-imposing
//! the acquired lines.

use std::fmt::Write as _;

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::data::{ImageSeries, KSpaceSeries, SamplingMask, SensitivityMaps, TemporalSpectrum, C64};
use crate::error::{Error, Result};
use crate::fft::Direction;
use crate::metrics::{ssim, MetricParams};
use crate::par;
use crate::prior_kt::{calib_residual, calibrate_kernel, KernelOperator, KtExtents, KtKernel};
use crate::prior_xf::{xf_update, XfParams};
use crate::prior_xt::{xt_update, XtParams, XtPrior};
use crate::sampling::extract_acs;
use crate::sensitivity::estimate_maps;
use crate::transforms::{adjoint_op, fft1t, forward_op, ifft1t, rss, EncodingContext};

/// A per-iteration schedule: one value for every iteration or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    Constant(f64),
    PerIteration(Vec<f64>),
}

impl Schedule {
    pub fn resolve(&self, depth: usize, name: &str) -> Result<Vec<f64>> {
        let v = match self {
            Schedule::Constant(c) => vec![*c; depth],
            Schedule::PerIteration(v) if v.len() == depth => v.clone(),
            Schedule::PerIteration(v) => {
                return Err(Error::Config(format!(
                    "schedule {name} has {} entries, unroll depth is {depth}",
                    v.len()
                )))
            }
        };
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config(format!("schedule {name} must be finite and nonnegative")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XtConfig {
    pub eta: Schedule,
    pub lambda: Schedule,
    pub prior_kind: XtPrior,
    /// Smoothing constant relative to `max |A^H v_acq|`.
    pub tv_eps: f64,
    /// TV weight relative to `max |A^H v_acq|`.
    pub tv_weight: f64,
}

impl Default for XtConfig {
    fn default() -> Self {
        Self {
            eta: Schedule::Constant(0.5),
            lambda: Schedule::Constant(0.3),
            prior_kind: XtPrior::SmoothedTv3d,
            tv_eps: 1e-3,
            tv_weight: 0.02,
        }
    }
}

impl XtConfig {
    pub fn resolve(&self, depth: usize, data_scale: f64) -> Result<XtParams> {
        Ok(XtParams {
            eta: self.eta.resolve(depth, "xt.eta")?,
            lambda: self.lambda.resolve(depth, "xt.lambda")?,
            prior_kind: self.prior_kind,
            tv_eps: self.tv_eps * data_scale,
            tv_weight: self.tv_weight * data_scale,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XfConfig {
    pub zeta: Schedule,
    pub lambda: Schedule,
    pub tau_rel: f64,
    pub protect_dc: bool,
}

impl Default for XfConfig {
    fn default() -> Self {
        Self {
            zeta: Schedule::Constant(0.5),
            lambda: Schedule::Constant(1.0),
            tau_rel: 0.02,
            protect_dc: true,
        }
    }
}

impl XfConfig {
    pub fn resolve(&self, depth: usize) -> Result<XfParams> {
        Ok(XfParams {
            zeta: self.zeta.resolve(depth, "xf.zeta")?,
            lambda: self.lambda.resolve(depth, "xf.lambda")?,
            tau_rel: self.tau_rel,
            protect_dc: self.protect_dc,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KtConfig {
    pub extents: KtExtents,
    pub tikhonov_rel: f64,
}

impl Default for KtConfig {
    fn default() -> Self {
        Self { extents: KtExtents::default(), tikhonov_rel: 1e-2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionCoeffs {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for FusionCoeffs {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.5, gamma: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Enabled {
    pub xt: bool,
    pub xf: bool,
    pub kt: bool,
}

impl Default for Enabled {
    fn default() -> Self {
        Self { xt: true, xf: true, kt: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFrom {
    /// `rss(F_s^H (M v_acq + (1 - M) v))` of the last fused k-space.
    FusedKspace,
    /// `rss(S m)` of the last image state.
    ImageState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    #[serde(rename = "unroll_T")]
    pub unroll_t: usize,
    pub xt: XtConfig,
    pub xf: XfConfig,
    pub kt: KtConfig,
    pub fusion: FusionCoeffs,
    pub sens_eps_rel: f64,
    pub enabled: Enabled,
    pub output_from: OutputFrom,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            unroll_t: 12,
            xt: XtConfig::default(),
            xf: XfConfig::default(),
            kt: KtConfig::default(),
            fusion: FusionCoeffs::default(),
            sens_eps_rel: crate::sensitivity::DEFAULT_EPS_REL,
            enabled: Enabled::default(),
            output_from: OutputFrom::ImageState,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.unroll_t == 0 {
            return Err(Error::Config("unroll_T must be at least 1".into()));
        }
        self.xt.resolve(self.unroll_t, 1.0)?;
        self.xf.resolve(self.unroll_t)?;
        if !(self.xt.tv_eps > 0.0 && self.xt.tv_eps.is_finite()) {
            return Err(Error::Config(format!("xt.tv_eps must be positive, got {}", self.xt.tv_eps)));
        }
        if !(self.xt.tv_weight >= 0.0 && self.xt.tv_weight.is_finite()) {
            return Err(Error::Config(format!("xt.tv_weight must be nonnegative, got {}", self.xt.tv_weight)));
        }
        if !(0.0..1.0).contains(&self.xf.tau_rel) {
            return Err(Error::Config(format!("xf.tau_rel must lie in [0, 1), got {}", self.xf.tau_rel)));
        }
        self.kt.extents.validate()?;
        if !(self.kt.tikhonov_rel >= 0.0 && self.kt.tikhonov_rel.is_finite()) {
            return Err(Error::Config("kt.tikhonov_rel must be nonnegative".into()));
        }
        let f = self.fusion;
        if [f.alpha, f.beta, f.gamma].iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::Config("fusion coefficients must be nonnegative".into()));
        }
        if !(self.sens_eps_rel >= 0.0 && self.sens_eps_rel.is_finite()) {
            return Err(Error::Config("sens_eps_rel must be nonnegative".into()));
        }
        Ok(())
    }

    /// Per-iteration parameters for data of scale `max |A^H v_acq|`.
    pub fn resolve(&self, data_scale: f64) -> Result<IterationParams> {
        self.validate()?;
        Ok(IterationParams {
            xt: self.xt.resolve(self.unroll_t, data_scale)?,
            xf: self.xf.resolve(self.unroll_t)?,
            fusion: self.fusion,
            enabled: self.enabled,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationParams {
    pub xt: XtParams,
    pub xf: XfParams,
    pub fusion: FusionCoeffs,
    pub enabled: Enabled,
}

impl IterationParams {
    pub fn depth(&self) -> usize {
        self.xt.depth()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub m: ImageSeries,
    pub rho: TemporalSpectrum,
    pub v: KSpaceSeries,
}

impl State {
    /// Zero-filled start: `m = S^H F_s^H v_acq`, `rho = F_t m`, `v = v_acq`.
    pub fn zero_filled(v_acq: &KSpaceSeries, ctx: &EncodingContext) -> Result<Self> {
        let m = ctx.combine_kspace(v_acq)?;
        Ok(Self { rho: fft1t(&m), m, v: v_acq.clone() })
    }
}

/// Sampled positions take `alpha a + beta b`, unsampled ones `gamma v`.
fn fuse(a: &KSpaceSeries, b: &KSpaceSeries, v: &KSpaceSeries, mask: &SamplingMask, c: FusionCoeffs) -> KSpaceSeries {
    let (_, t, ny, nx) = v.shape();
    let (sa, sb, sv) = (a.as_slice(), b.as_slice(), v.as_slice());
    let mut out = Array4::<C64>::zeros(v.data().dim());
    par::for_each_chunk(out.as_slice_mut().expect("standard layout"), ny * nx, |i, plane| {
        let keep = mask.frame(i % t);
        let base = i * ny * nx;
        for (y, row) in plane.chunks_exact_mut(nx).enumerate() {
            let o = base + y * nx;
            if keep[y] {
                for (j, z) in row.iter_mut().enumerate() {
                    *z = sa[o + j] * c.alpha + sb[o + j] * c.beta;
                }
            } else {
                for (j, z) in row.iter_mut().enumerate() {
                    *z = sv[o + j] * c.gamma;
                }
            }
        }
    });
    KSpaceSeries::from_array(out)
}

/// Writes `gamma v` into the unsampled lines of `dst`.
fn scale_unsampled(v: &KSpaceSeries, mask: &SamplingMask, gamma: f64, dst: &mut [C64]) {
    let (_, t, ny, nx) = v.shape();
    let src = v.as_slice();
    par::for_each_chunk(dst, ny * nx, |i, plane| {
        let keep = mask.frame(i % t);
        let base = i * ny * nx;
        for (y, row) in plane.chunks_exact_mut(nx).enumerate() {
            if !keep[y] {
                for (z, s) in row.iter_mut().zip(&src[base + y * nx..]) {
                    *z = s * gamma;
                }
            }
        }
    });
}

/// Writes `alpha a + beta b` into the sampled lines of `dst`, where
/// `b = A m_b` is encoded plane by plane (`b = a` without `m_b`).
fn fill_sampled(dst: &mut [C64], a: &KSpaceSeries, m_b: Option<&ImageSeries>, ctx: &EncodingContext, c: FusionCoeffs) {
    let (_, t, ny, nx) = a.shape();
    let npix = ny * nx;
    let sa = a.as_slice();
    let plan = ctx.plan();
    let sens = ctx.sens().data().as_slice().expect("standard layout");
    par::for_each_chunk_init(
        dst,
        npix,
        || (plan.scratch(), vec![C64::default(); npix]),
        |(scratch, buf), i, plane| {
            let (coil, f) = (i / t, i % t);
            let keep = ctx.mask().frame(f);
            let pa = &sa[i * npix..][..npix];
            let pb: &[C64] = match m_b {
                Some(m) => {
                    let sc = &sens[coil * npix..][..npix];
                    let mf = &m.as_slice()[f * npix..][..npix];
                    for ((o, s), x) in buf.iter_mut().zip(sc).zip(mf) {
                        *o = s * x;
                    }
                    plan.forward(buf, Some(keep), scratch);
                    buf
                }
                None => pa,
            };
            for (y, row) in plane.chunks_exact_mut(nx).enumerate() {
                if keep[y] {
                    let r = y * nx..(y + 1) * nx;
                    for ((z, x), w) in row.iter_mut().zip(&pa[r.clone()]).zip(&pb[r]) {
                        *z = x * c.alpha + w * c.beta;
                    }
                }
            }
        },
    );
}

/// `alpha M F_s S m + beta M F_s S F_t^H rho + gamma (1 - M) v`.
pub fn frequency_fusion(
    m: &ImageSeries,
    rho: &TemporalSpectrum,
    v: &KSpaceSeries,
    ctx: &EncodingContext,
    coeffs: FusionCoeffs,
) -> Result<KSpaceSeries> {
    let a = forward_op(m, ctx)?;
    let b = forward_op(&ifft1t(rho), ctx)?;
    if v.shape() != a.shape() {
        return Err(Error::ShapeMismatch(format!("k-space {:?} vs encoding {:?}", v.shape(), a.shape())));
    }
    Ok(fuse(&a, &b, v, ctx.mask(), coeffs))
}

/// `M v_acq + (1 - M) w`.
fn impose(v_acq: &KSpaceSeries, w: &KSpaceSeries, mask: &SamplingMask) -> KSpaceSeries {
    fuse(v_acq, v_acq, w, mask, FusionCoeffs { alpha: 1.0, beta: 0.0, gamma: 1.0 })
}

pub fn run_iteration(
    state: &State,
    v_acq: &KSpaceSeries,
    ctx: &EncodingContext,
    kernel: Option<&KernelOperator>,
    params: &IterationParams,
    n: usize,
) -> Result<State> {
    let ahv = adjoint_op(v_acq, ctx)?;
    Ok(step(state, &ahv, ctx, kernel, params, n)?.0)
}

fn minus(a: &ImageSeries, b: &ImageSeries) -> ImageSeries {
    ImageSeries::from_array(a.data() - b.data())
}

/// One iteration given `ahv = A^H v_acq`. Also returns `A m` of the new
/// image state when it was formed on the way.
fn step(
    state: &State,
    ahv: &ImageSeries,
    ctx: &EncodingContext,
    kernel: Option<&KernelOperator>,
    params: &IterationParams,
    n: usize,
) -> Result<(State, Option<KSpaceSeries>)> {
    let depth = params.depth();
    if n >= depth {
        return Err(Error::IndexOutOfRange { index: n, depth });
    }
    let en = params.enabled;
    if en.kt && kernel.is_none() {
        return Err(Error::Config("kernel step enabled without a calibrated kernel".into()));
    }
    let m_in = ctx.combine_kspace(&state.v)?;
    let m = if en.xt {
        let grad = minus(&ctx.normal(&m_in)?, ahv);
        xt_update(&m_in, &grad, &params.xt, n)?
    } else {
        m_in
    };

    // A m and A^H A m share their column transforms
    let encoded = if en.xt || en.xf { Some(ctx.encode_normal(&m)?) } else { None };
    let rho_in = fft1t(&m);
    let (rho, m_b) = match (&encoded, en.xf) {
        (Some((_, normal)), true) => {
            let grad = fft1t(&minus(normal, ahv));
            let rho = xf_update(&rho_in, Some(&grad), &params.xf, n)?;
            let m_b = ifft1t(&rho);
            (rho, Some(m_b))
        }
        _ => (rho_in, None),
    };
    let am = encoded.map(|(am, _)| am);
    let masked;
    let a = match (&am, en.xt) {
        (Some(am), true) => am,
        _ => {
            masked = ctx.apply_mask(&state.v)?;
            &masked
        }
    };

    let (nc, t, ny, nx) = state.v.shape();
    let c = params.fusion;
    let mut out = Array4::<C64>::zeros((nc, t, ny, nx));
    let dst = out.as_slice_mut().expect("standard layout");
    match kernel.filter(|_| en.kt) {
        Some(op) => op.apply_into(&state.v, Some(ctx.mask()), c.gamma, dst)?,
        None => scale_unsampled(&state.v, ctx.mask(), c.gamma, dst),
    }
    fill_sampled(dst, a, m_b.as_ref(), ctx, c);
    let v = KSpaceSeries::from_array(out);
    Ok((State { m, rho, v }, am))
}

/// `rss(F_s^H (M v_acq + (1 - M) v))`.
pub fn consistent_image(v_acq: &KSpaceSeries, v: &KSpaceSeries, ctx: &EncodingContext) -> Array3<f64> {
    let k = impose(v_acq, v, ctx.mask());
    coil_rss(&k, ctx)
}

fn coil_rss(v: &KSpaceSeries, ctx: &EncodingContext) -> Array3<f64> {
    let mut coil = v.data().clone();
    ctx.plan().process_planes(coil.as_slice_mut().expect("standard layout"), Direction::Inverse);
    rss(&coil)
}

/// Zero-filled baseline `rss(F_s^H v_acq)`.
pub fn zero_filled(v_acq: &KSpaceSeries) -> Array3<f64> {
    let mut coil = v_acq.data().clone();
    let (_, _, ny, nx) = v_acq.shape();
    crate::fft::CenteredFft2::new(ny, nx).process_planes(coil.as_slice_mut().expect("standard layout"), Direction::Inverse);
    rss(&coil)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticLoss {
    pub l1: f64,
    pub ssim_loss: f64,
    pub calib_l1: f64,
    pub total: f64,
}

/// Unit-weighted sum of the image L1, `1 - SSIM` and the calibration residual.
pub fn diagnostic_loss(
    m_star: &Array3<f64>,
    m_ground: &Array3<f64>,
    kernel: &KtKernel,
    v_acs: &KSpaceSeries,
) -> Result<DiagnosticLoss> {
    let (l1, ssim_loss) = image_losses(m_star, m_ground)?;
    let calib_l1 = calib_residual(kernel, v_acs)?;
    Ok(DiagnosticLoss { l1, ssim_loss, calib_l1, total: l1 + ssim_loss + calib_l1 })
}

fn image_losses(m_star: &Array3<f64>, m_ground: &Array3<f64>) -> Result<(f64, f64)> {
    if m_star.dim() != m_ground.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", m_star.dim(), m_ground.dim())));
    }
    let l1 = m_star.iter().zip(m_ground).map(|(a, b)| (a - b).abs()).sum::<f64>() / m_ground.len() as f64;
    let ssim_loss = 1.0 - ssim(m_star, m_ground, &MetricParams::default())?;
    Ok((l1, ssim_loss))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    /// `||M F_s S m - v_acq|| / ||v_acq||`, zero when `v_acq` is zero.
    pub dc_residual: f64,
    pub calib_residual: Option<f64>,
    pub l1: Option<f64>,
    pub ssim_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ReconReport {
    pub image: Array3<f64>,
    pub diagnostics: Vec<IterationDiagnostics>,
    pub unroll_t: usize,
    pub maps: SensitivityMaps,
    pub kernel: Option<KtKernel>,
    pub final_state: State,
}

impl ReconReport {
    /// Per-iteration diagnostics as CSV; absent values are empty fields.
    pub fn diagnostics_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6e}"));
        let mut out = format!("# unroll_T={}\niteration,dc_residual,calib_residual,l1,ssim_loss\n", self.unroll_t);
        for d in &self.diagnostics {
            let _ = writeln!(
                out,
                "{},{:.6e},{},{},{}",
                d.iteration,
                d.dc_residual,
                opt(d.calib_residual),
                opt(d.l1),
                opt(d.ssim_loss)
            );
        }
        out
    }
}

/// Optional inputs to [`reconstruct_with`].
#[derive(Debug, Clone, Default)]
pub struct ReconOptions<'a> {
    /// Ground-truth magnitude series enabling the image losses.
    pub reference: Option<&'a Array3<f64>>,
    /// Sensitivity maps to use instead of estimating them from the calibration block.
    pub maps: Option<SensitivityMaps>,
    /// Previously calibrated kernel for the same calibration block.
    pub kernel: Option<KtKernel>,
}

pub fn reconstruct(v_acq: &KSpaceSeries, mask: &SamplingMask, config: &ReconConfig) -> Result<ReconReport> {
    reconstruct_with(v_acq, mask, config, ReconOptions::default())
}

fn check_acquisition(v_acq: &KSpaceSeries, mask: &SamplingMask) -> Result<()> {
    let (_, t, ny, _) = v_acq.shape();
    if (t, ny) != (mask.frames(), mask.ny()) {
        return Err(Error::ShapeMismatch(format!(
            "k-space ({t} frames, {ny} lines) vs mask ({} frames, {} lines)",
            mask.frames(),
            mask.ny()
        )));
    }
    for ((_, f, y, _), z) in v_acq.data().indexed_iter() {
        if !mask.is_sampled(f, y) && *z != C64::default() {
            return Err(Error::InvalidMask(format!("acquired data nonzero on unsampled line (t={f}, ky={y})")));
        }
    }
    Ok(())
}

pub fn reconstruct_with(
    v_acq: &KSpaceSeries,
    mask: &SamplingMask,
    config: &ReconConfig,
    options: ReconOptions<'_>,
) -> Result<ReconReport> {
    config.validate()?;
    check_acquisition(v_acq, mask)?;
    let (nc, t, ny, nx) = v_acq.shape();
    let depth = config.unroll_t;
    let v_norm = v_acq.norm();

    if v_norm == 0.0 {
        let maps = options.maps.unwrap_or_else(|| SensitivityMaps::from_array(Array3::zeros((nc, ny, nx))));
        let image = Array3::zeros((t, ny, nx));
        let l = options.reference.map(|r| image_losses(&image, r)).transpose()?;
        let diagnostics = (0..depth)
            .map(|n| IterationDiagnostics {
                iteration: n,
                dc_residual: 0.0,
                calib_residual: config.enabled.kt.then_some(0.0),
                l1: l.map(|x| x.0),
                ssim_loss: l.map(|x| x.1),
            })
            .collect();
        let m = ImageSeries::zeros(t, ny, nx);
        let final_state = State { rho: fft1t(&m), m, v: v_acq.clone() };
        return Ok(ReconReport { image, diagnostics, unroll_t: depth, maps, kernel: None, final_state });
    }

    let maps = match options.maps {
        Some(s) => s,
        None => estimate_maps(v_acq, mask, config.sens_eps_rel)?,
    };
    let ctx = EncodingContext::new(maps, mask.clone())?;
    let mut state = State::zero_filled(v_acq, &ctx)?;
    let scale = state.m.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let params = config.resolve(scale)?;

    let (kernel, op, calib) = if config.enabled.kt {
        let acs = extract_acs(v_acq, mask)?;
        let kernel = match options.kernel {
            Some(k) => k,
            None => calibrate_kernel(&acs, config.kt.extents, config.kt.tikhonov_rel)?,
        };
        let op = KernelOperator::new(&kernel, t, ny, nx);
        let calib = calib_residual(&kernel, &acs)?;
        (Some(kernel), Some(op), Some(calib))
    } else {
        (None, None, None)
    };

    let ahv = adjoint_op(v_acq, &ctx)?;
    let mut diagnostics = Vec::with_capacity(depth);
    for n in 0..depth {
        let (next, am) = step(&state, &ahv, &ctx, op.as_ref(), &params, n)?;
        state = next;
        let am = match am {
            Some(am) => am,
            None => forward_op(&state.m, &ctx)?,
        };
        let dc = am.as_slice().iter().zip(v_acq.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() / v_norm;
        let losses = match options.reference {
            Some(r) => Some(image_losses(&output_image(v_acq, &state, &ctx, config.output_from)?, r)?),
            None => None,
        };
        diagnostics.push(IterationDiagnostics {
            iteration: n,
            dc_residual: dc,
            calib_residual: calib,
            l1: losses.map(|x| x.0),
            ssim_loss: losses.map(|x| x.1),
        });
    }
    let image = output_image(v_acq, &state, &ctx, config.output_from)?;
    Ok(ReconReport { image, diagnostics, unroll_t: depth, maps: ctx.sens().clone(), kernel, final_state: state })
}

fn output_image(v_acq: &KSpaceSeries, state: &State, ctx: &EncodingContext, from: OutputFrom) -> Result<Array3<f64>> {
    Ok(match from {
        OutputFrom::FusedKspace => consistent_image(v_acq, &state.v, ctx),
        OutputFrom::ImageState => rss(&crate::transforms::coil_expand(&state.m, ctx.sens())?),
    })
}
