use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ndarray::Array3;
use serde_json::json;

use ktrecon::config::{ablation_label, disable, parse_config, ExperimentConfig, Prior};
use ktrecon::experiment::{bench_csv, run_bench, selftest, simulate_case};
use ktrecon::ktc::{KtcHeader, KtcValue, Precision};
use ktrecon::metrics::{evaluate, report_table, write_pgm, MetricRow};
use ktrecon::par;
use ktrecon::phantom::generate_phantom;
use ktrecon::pipeline::{reconstruct_with, ReconOptions};
use ktrecon::sampling::make_mask;
use ktrecon::transforms::{coil_expand, rss};
use ktrecon::{Error, ImageSeries, KSpaceSeries, SamplingMask, SensitivityMaps, C64};

const TRUTH: &str = "truth.ktc";
const TRUE_MAPS: &str = "sens_true.ktc";
const MASK: &str = "mask.ktc";
const KSPACE: &str = "kspace.ktc";
const IMAGE: &str = "image.ktc";

#[derive(Parser)]
#[command(name = "ktrecon", version, about = "Multi-prior dynamic parallel MRI reconstruction experiments")]
struct Cli {
    /// JSON experiment configuration; absent fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir` of the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Phantom seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run single-threaded.
    #[arg(long, global = true)]
    serial: bool,
    /// Disable a prior in the reconstruction (repeatable).
    #[arg(long, global = true, value_parser = parse_prior)]
    ablate: Vec<Prior>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write the ground-truth series and coil maps.
    Phantom,
    /// Write the sampling mask.
    Mask,
    /// Simulate an acquisition: k-space, mask, ground truth and maps.
    Acquire,
    /// Reconstruct the acquired k-space.
    Recon,
    /// Score the reconstruction against the ground truth.
    Eval,
    /// Sweep accelerations and ablations over the seeded cases.
    Bench,
    /// Check the numerical contracts of this build.
    Selftest,
}

fn parse_prior(s: &str) -> Result<Prior, String> {
    Prior::parse(s).ok_or_else(|| format!("unknown prior {s:?}, expected xt, xf or kt"))
}

enum Failure {
    Usage(String),
    Io(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Io(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) | Error::Header(_) | Error::LengthMismatch { .. } | Error::UnknownDtype(_) => Failure::Io(msg),
            Error::NonFinite(_)
            | Error::NotNormalized { .. }
            | Error::EmptyAcs
            | Error::ZeroAcs
            | Error::InsufficientAcs { .. }
            | Error::ZeroReference => Failure::Numerical(msg),
            _ => Failure::Usage(msg),
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn io<T>(r: std::io::Result<T>, what: &Path) -> Outcome<T> {
    r.map_err(|e| Failure::Io(format!("{}: {e}", what.display())))
}

struct Ctx {
    cfg: ExperimentConfig,
    hash: String,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write<T: KtcValue>(&self, value: &T, name: &str) -> Outcome {
        value.write_ktc(self.path(name), Precision::Single, Some(&self.hash))?;
        println!("wrote {}", self.path(name).display());
        Ok(())
    }

    /// Reads an artifact, refusing one written under a different configuration.
    fn read<T: KtcValue>(&self, name: &str) -> Outcome<T> {
        let (value, header): (T, KtcHeader) = T::read_ktc(self.path(name))?;
        match header.config_hash.as_deref() {
            Some(h) if h == self.hash => Ok(value),
            other => Err(Failure::Usage(format!(
                "{} was written under config hash {}, current config is {}",
                self.path(name).display(),
                other.unwrap_or("(none)"),
                self.hash
            ))),
        }
    }

    fn write_text(&self, name: &str, text: &str) -> Outcome {
        let p = self.path(name);
        io(fs::write(&p, text), &p)?;
        println!("wrote {}", p.display());
        Ok(())
    }

    fn tag(&self) -> String {
        format!("{}-{}", self.cfg.phantom.contrast, self.cfg.phantom.seed)
    }

    fn reference(&self) -> Outcome<Array3<f64>> {
        let truth: ImageSeries = self.read(TRUTH)?;
        let maps: SensitivityMaps = self.read(TRUE_MAPS)?;
        Ok(rss(&coil_expand(&truth, &maps)?))
    }
}

fn load(cli: &Cli) -> Outcome<Ctx> {
    let mut cfg = match &cli.config {
        Some(p) => parse_config(&io(fs::read_to_string(p), p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.phantom.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    // ablations are a reconstruction choice and leave the artifact hash alone
    let hash = cfg.hash();
    if !cli.ablate.is_empty() {
        let off: BTreeSet<Prior> = cli.ablate.iter().copied().collect();
        cfg.recon.enabled = disable(cfg.recon.enabled, &off);
    }
    let out = cfg.output_dir.clone();
    io(fs::create_dir_all(&out), &out)?;
    Ok(Ctx { hash, cfg, out })
}

fn magnitude_series(x: &Array3<f64>) -> Outcome<ImageSeries> {
    Ok(ImageSeries::new(x.mapv(|v| C64::new(v, 0.0)))?)
}

fn method_label(cfg: &ExperimentConfig) -> String {
    let e = cfg.recon.enabled;
    let off: BTreeSet<Prior> = [(Prior::Xt, e.xt), (Prior::Xf, e.xf), (Prior::Kt, e.kt)]
        .into_iter()
        .filter(|&(_, on)| !on)
        .map(|(p, _)| p)
        .collect();
    ablation_label(&off)
}

fn cmd_phantom(ctx: &Ctx) -> Outcome {
    let (truth, maps) = generate_phantom(&ctx.cfg.phantom)?;
    ctx.write(&truth, TRUTH)?;
    ctx.write(&maps, TRUE_MAPS)
}

fn cmd_mask(ctx: &Ctx) -> Outcome {
    let mask = make_mask(&ctx.cfg.mask)?;
    let sampled: usize = mask.sampled_per_frame().iter().sum();
    println!("acceleration {}, {sampled} of {} lines sampled", mask.acceleration(), mask.frames() * mask.ny());
    ctx.write(&mask, MASK)
}

fn cmd_acquire(ctx: &Ctx) -> Outcome {
    let case = simulate_case(&ctx.cfg.phantom, &ctx.cfg.mask)?;
    ctx.write(&case.truth, TRUTH)?;
    ctx.write(&case.maps, TRUE_MAPS)?;
    ctx.write(&case.mask, MASK)?;
    ctx.write(&case.v_acq, KSPACE)
}

fn cmd_recon(ctx: &Ctx) -> Outcome {
    let v: KSpaceSeries = ctx.read(KSPACE)?;
    let mask: SamplingMask = ctx.read(MASK)?;
    let reference = if ctx.path(TRUTH).exists() && ctx.path(TRUE_MAPS).exists() {
        Some(ctx.reference()?)
    } else {
        None
    };
    let options = ReconOptions { reference: reference.as_ref(), ..Default::default() };
    let report = reconstruct_with(&v, &mask, &ctx.cfg.recon, options)?;
    if report.image.iter().any(|x| !x.is_finite()) {
        return Err(Failure::Numerical("reconstruction produced non-finite values".into()));
    }
    ctx.write(&magnitude_series(&report.image)?, IMAGE)?;
    ctx.write(&report.maps, "sens.ktc")?;
    if let Some(k) = &report.kernel {
        ctx.write(k, "kernel.ktc")?;
    }
    ctx.write_text("diagnostics.csv", &report.diagnostics_csv())?;
    let peak = report.image.iter().copied().fold(0.0, f64::max);
    let p = ctx.path("frame0.pgm");
    write_pgm(&p, report.image.index_axis(ndarray::Axis(0), 0), peak)?;

    let scores = reference.as_ref().map(|r| evaluate(&report.image, r, &ctx.cfg.metrics)).transpose()?;
    let summary = json!({
        "config_hash": ctx.hash,
        "method": method_label(&ctx.cfg),
        "unroll_T": report.unroll_t,
        "acceleration": mask.acceleration(),
        "final_dc_residual": report.diagnostics.last().map(|d| d.dc_residual),
        "nmse": scores.map(|s| s.nmse),
        "ssim": scores.map(|s| s.ssim),
        "psnr": scores.map(|s| if s.psnr.is_finite() { json!(s.psnr) } else { json!("inf") }),
    });
    if let Some(s) = scores {
        println!("nmse {:.6e} ssim {:.4} psnr {:.2}", s.nmse, s.ssim, s.psnr);
    }
    ctx.write_text("recon.json", &format!("{:#}\n", summary))
}

fn cmd_eval(ctx: &Ctx) -> Outcome {
    let image: ImageSeries = ctx.read(IMAGE)?;
    let reference = ctx.reference()?;
    let mask: SamplingMask = ctx.read(MASK)?;
    let row = MetricRow {
        method: method_label(&ctx.cfg),
        acceleration: mask.acceleration(),
        tag: ctx.tag(),
        scores: evaluate(&image.magnitude(), &reference, &ctx.cfg.metrics)?,
    };
    let meta = [format!("config_hash={}", ctx.hash), ctx.cfg.metrics.describe()];
    let csv = report_table(&[row], &meta)?;
    print!("{csv}");
    ctx.write_text("eval.csv", &csv)
}

fn cmd_bench(ctx: &Ctx) -> Outcome {
    let rows = run_bench(&ctx.cfg, |r| {
        eprintln!(
            "{:>12} R={:<2} {:<10} ssim {:.4} nmse {:.5}",
            r.method, r.acceleration, r.tag, r.scores.ssim, r.scores.nmse
        )
    })?;
    let csv = bench_csv(&ctx.cfg, &rows)?;
    ctx.write_text("bench.csv", &csv)
}

fn cmd_selftest() -> Outcome {
    let checks = selftest();
    for c in &checks {
        println!("{} {:<24} {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure::Numerical(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Outcome {
    if let Command::Selftest = cli.command {
        return cmd_selftest();
    }
    let ctx = load(cli)?;
    match cli.command {
        Command::Phantom => cmd_phantom(&ctx),
        Command::Mask => cmd_mask(&ctx),
        Command::Acquire => cmd_acquire(&ctx),
        Command::Recon => cmd_recon(&ctx),
        Command::Eval => cmd_eval(&ctx),
        Command::Bench => cmd_bench(&ctx),
        Command::Selftest => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = if cli.serial { par::serial(|| dispatch(&cli)) } else { dispatch(&cli) };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
