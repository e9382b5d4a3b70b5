//! Image quality metrics on magnitude series and the tabular report.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataRange {
    MaxOfReference,
    Explicit(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricParams {
    pub ssim_window: usize,
    pub k1: f64,
    pub k2: f64,
    pub data_range: DataRange,
    pub crop_fraction: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            ssim_window: 7,
            k1: 0.01,
            k2: 0.03,
            data_range: DataRange::MaxOfReference,
            crop_fraction: 1.0 / 6.0,
        }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<()> {
        if self.ssim_window == 0 || self.ssim_window % 2 == 0 {
            return Err(Error::Config(format!("ssim_window must be odd, got {}", self.ssim_window)));
        }
        if !(self.crop_fraction > 0.0 && self.crop_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "crop_fraction must lie in (0, 1], got {}",
                self.crop_fraction
            )));
        }
        if let DataRange::Explicit(l) = self.data_range {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("explicit data range must be positive, got {l}")));
            }
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        let range = match self.data_range {
            DataRange::MaxOfReference => "max_of_reference".to_string(),
            DataRange::Explicit(l) => format!("{l}"),
        };
        format!(
            "crop_fraction={:.6},ssim_window={},k1={},k2={},data_range={range}",
            self.crop_fraction, self.ssim_window, self.k1, self.k2
        )
    }
}

/// Extent kept by a centered crop: `ceil(fraction * n)`, at least one.
pub fn crop_extent(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// Keeps the centered `ceil(f Ny) x ceil(f Nx)` region of every frame; the
/// block starts at `N/2 - h/2`.
pub fn center_crop(x: &Array3<f64>, fraction: f64) -> Result<Array3<f64>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("crop fraction must lie in (0, 1], got {fraction}")));
    }
    let (_, ny, nx) = x.dim();
    let (hy, hx) = (crop_extent(ny, fraction), crop_extent(nx, fraction));
    let (y0, x0) = (ny / 2 - hy / 2, nx / 2 - hx / 2);
    Ok(x.slice(s![.., y0..y0 + hy, x0..x0 + hx]).to_owned())
}

fn check_pair(a: &Array3<f64>, b: &Array3<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "reconstruction {:?} vs reference {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `||recon - ref||^2 / ||ref||^2` over all frames.
pub fn nmse(recon: &Array3<f64>, reference: &Array3<f64>) -> Result<f64> {
    check_pair(recon, reference)?;
    let den: f64 = reference.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num: f64 = recon.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(num / den)
}

/// `10 log10(L^2 / MSE)`; identical inputs give `+inf`.
pub fn psnr(recon: &Array3<f64>, reference: &Array3<f64>, data_range: f64) -> Result<f64> {
    check_pair(recon, reference)?;
    let n = reference.len() as f64;
    let mse: f64 = recon.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

pub fn resolve_range(reference: &Array3<f64>, range: DataRange) -> f64 {
    match range {
        DataRange::MaxOfReference => reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        DataRange::Explicit(l) => l,
    }
}

fn prefix(x: ArrayView2<f64>) -> Array2<f64> {
    let (ny, nx) = x.dim();
    let mut p = Array2::<f64>::zeros((ny + 1, nx + 1));
    for y in 0..ny {
        let mut run = 0.0;
        for xx in 0..nx {
            run += x[[y, xx]];
            p[[y + 1, xx + 1]] = p[[y, xx + 1]] + run;
        }
    }
    p
}

fn frame_ssim(a: ArrayView2<f64>, b: ArrayView2<f64>, w: usize, c1: f64, c2: f64) -> f64 {
    let (ny, nx) = a.dim();
    let sa = prefix(a);
    let sb = prefix(b);
    let saa = prefix(a.mapv(|v| v * v).view());
    let sbb = prefix(b.mapv(|v| v * v).view());
    let sab = prefix((&a * &b).view());
    let n = (w * w) as f64;
    let cov = n / (n - 1.0);
    let boxed = |p: &Array2<f64>, y: usize, x: usize| p[[y + w, x + w]] - p[[y, x + w]] - p[[y + w, x]] + p[[y, x]];
    let mut total = 0.0;
    for y in 0..=ny - w {
        for x in 0..=nx - w {
            let ma = boxed(&sa, y, x) / n;
            let mb = boxed(&sb, y, x) / n;
            let va = cov * (boxed(&saa, y, x) / n - ma * ma);
            let vb = cov * (boxed(&sbb, y, x) / n - mb * mb);
            let vab = cov * (boxed(&sab, y, x) / n - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * vab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    total / ((ny - w + 1) * (nx - w + 1)) as f64
}

/// Mean SSIM over valid uniform-window positions, averaged over frames.
pub fn ssim(recon: &Array3<f64>, reference: &Array3<f64>, params: &MetricParams) -> Result<f64> {
    check_pair(recon, reference)?;
    let (t, ny, nx) = reference.dim();
    let w = params.ssim_window;
    if w > ny || w > nx {
        return Err(Error::WindowTooLarge { window: w, ny, nx });
    }
    let l = resolve_range(reference, params.data_range);
    let (c1, c2) = ((params.k1 * l).powi(2), (params.k2 * l).powi(2));
    let sum: f64 = (0..t)
        .map(|f| {
            frame_ssim(
                recon.index_axis(ndarray::Axis(0), f),
                reference.index_axis(ndarray::Axis(0), f),
                w,
                c1,
                c2,
            )
        })
        .sum();
    Ok(sum / t as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub ssim: f64,
    pub nmse: f64,
    pub psnr: f64,
}

/// All three metrics after the configured center crop.
pub fn evaluate(recon: &Array3<f64>, reference: &Array3<f64>, params: &MetricParams) -> Result<Scores> {
    params.validate()?;
    check_pair(recon, reference)?;
    let (a, b) = if params.crop_fraction < 1.0 {
        (center_crop(recon, params.crop_fraction)?, center_crop(reference, params.crop_fraction)?)
    } else {
        (recon.clone(), reference.clone())
    };
    let l = resolve_range(&b, params.data_range);
    Ok(Scores {
        ssim: ssim(&a, &b, params)?,
        nmse: nmse(&a, &b)?,
        psnr: psnr(&a, &b, l)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub acceleration: usize,
    pub tag: String,
    pub scores: Scores,
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else {
        format!("{v:.2}")
    }
}

fn push_row(out: &mut String, method: &str, acc: &str, tag: &str, s: &Scores) {
    let _ = writeln!(out, "{method},{acc},{tag},{:.4},{:.4},{}", s.ssim, s.nmse, fmt_psnr(s.psnr));
}

fn mean(rows: &[&MetricRow]) -> Scores {
    let n = rows.len() as f64;
    Scores {
        ssim: rows.iter().map(|r| r.scores.ssim).sum::<f64>() / n,
        nmse: rows.iter().map(|r| r.scores.nmse).sum::<f64>() / n,
        psnr: rows.iter().map(|r| r.scores.psnr).sum::<f64>() / n,
    }
}

/// CSV table sorted by `(method, acceleration)`. Each acceleration with more
/// than one tag gets an `avg` row; each method ends with an overall `avg` row
/// at acceleration `all`. `meta` lines are emitted first, prefixed by `#`.
pub fn report_table(rows: &[MetricRow], meta: &[String]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Config("report needs at least one result row".into()));
    }
    let mut sorted: Vec<&MetricRow> = rows.iter().collect();
    sorted.sort_by(|a, b| (&a.method, a.acceleration).cmp(&(&b.method, b.acceleration)));
    let mut out = String::new();
    for m in meta {
        let _ = writeln!(out, "# {m}");
    }
    out.push_str("method,acceleration,tag,ssim,nmse,psnr\n");
    let mut i = 0;
    while i < sorted.len() {
        let method = &sorted[i].method;
        let end = sorted[i..].iter().position(|r| &r.method != method).map_or(sorted.len(), |p| i + p);
        let group = &sorted[i..end];
        let mut j = 0;
        while j < group.len() {
            let acc = group[j].acceleration;
            let stop = group[j..].iter().position(|r| r.acceleration != acc).map_or(group.len(), |p| j + p);
            for r in &group[j..stop] {
                push_row(&mut out, &r.method, &r.acceleration.to_string(), &r.tag, &r.scores);
            }
            if stop - j > 1 {
                push_row(&mut out, method, &acc.to_string(), "avg", &mean(&group[j..stop]));
            }
            j = stop;
        }
        push_row(&mut out, method, "all", "avg", &mean(group));
        i = end;
    }
    Ok(out)
}

/// Writes one frame as an 8-bit binary PGM, mapping `[0, max]` to `[0, 255]`.
pub fn write_pgm(path: &Path, frame: ArrayView2<f64>, max: f64) -> Result<()> {
    let (ny, nx) = frame.dim();
    let mut bytes = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    bytes.extend(frame.iter().map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8));
    std::fs::write(path, bytes)?;
    Ok(())
}
