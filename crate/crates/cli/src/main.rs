use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hdrv_core::io::{load_manifest, read_json, write_json, LoadOptions};
use hdrv_core::isp::IspConfig;
use hdrv_core::merge::{MergeCurve, ScreenConfig};
use hdrv_core::metrics::{Metric, DEFAULT_MU};
use hdrv_core::pipeline;
use hdrv_core::reconstruct::ReconstructConfig;
use hdrv_core::synth::{Domain, SceneKind, SceneParams, SynthConfig};
use hdrv_core::Error;

#[derive(Parser)]
#[command(
    name = "hdrv",
    version,
    about = "HDR ground truth, reconstruction and evaluation for alternating-exposure video"
)]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "HDRV_JOBS", default_value_t = 0)]
    jobs: usize,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Raw,
    Srgb,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Domain {
        match d {
            DomainArg::Raw => Domain::Raw,
            DomainArg::Srgb => Domain::Srgb,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Static,
    GlobalShift,
    TwoMotion,
}

#[derive(Subcommand)]
enum Command {
    /// Merge staggered long/short pairs into raw and sRGB ground truth.
    MergeGt {
        manifest: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.85)]
        tau_low: f32,
        #[arg(long, default_value_t = 0.97)]
        tau_high: f32,
        #[arg(long)]
        allow_irregular: bool,
    },
    /// Reconstruct one HDR frame per interior frame of an alternating sequence.
    Reconstruct {
        manifest: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Output domain; raw input reaches sRGB through the ISP.
        #[arg(long, value_enum, default_value = "raw")]
        domain: DomainArg,
        /// ReconstructConfig JSON; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use neighbors as captured (no flow, no offset refinement).
        #[arg(long)]
        no_align: bool,
        #[arg(long)]
        allow_irregular: bool,
    },
    /// Render a synthetic alternating-exposure sequence from HDR frames.
    Synth {
        hdr_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score predictions against same-named ground-truth PFMs.
    Eval {
        pred_dir: PathBuf,
        gt_dir: PathBuf,
        #[arg(long, default_value = "psnr_mu,l1_mu", value_delimiter = ',')]
        metrics: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_MU)]
        mu: f64,
        #[arg(long, value_enum, default_value = "srgb")]
        domain: DomainArg,
        /// IspConfig JSON used to take raw4 files to sRGB.
        #[arg(long)]
        isp: Option<PathBuf>,
        /// Also write the report here.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Tonemapped 8-bit preview of an HDR PFM.
    Preview {
        pfm: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MU)]
        mu: f64,
    },
    /// Report which staggered pairs are usable as ground truth.
    Screen {
        manifest: PathBuf,
        /// ScreenConfig JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        allow_irregular: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write a procedural HDR test scene with known motion.
    RenderScene {
        #[arg(long, value_enum, default_value = "static")]
        kind: KindArg,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        height: usize,
        #[arg(long, default_value_t = 5)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write RGB frames instead of packed raw planes.
        #[arg(long)]
        rgb: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn load_or_default<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> hdrv_core::Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn emit<T: Serialize>(value: &T, file: Option<&Path>) -> hdrv_core::Result<()> {
    if let Some(p) = file {
        write_json(p, value)?;
    }
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> hdrv_core::Result<()> {
    match cli.command {
        Command::MergeGt {
            manifest,
            output,
            tau_low,
            tau_high,
            allow_irregular,
        } => {
            let m = load_manifest(&manifest, LoadOptions { allow_irregular })?;
            let report = pipeline::merge_gt(&m, &output, &MergeCurve::new(tau_low, tau_high)?)?;
            emit(&report, None)
        }
        Command::Reconstruct {
            manifest,
            output,
            domain,
            config,
            no_align,
            allow_irregular,
        } => {
            let m = load_manifest(&manifest, LoadOptions { allow_irregular })?;
            let mut cfg: ReconstructConfig = load_or_default(config.as_deref())?;
            if no_align {
                cfg.align = cfg.align.without_alignment();
            }
            let report = pipeline::reconstruct_sequence(&m, &output, domain.into(), &cfg)?;
            emit(&report, Some(&output.join("reconstruct.json")))
        }
        Command::Synth {
            hdr_dir,
            config,
            output,
            seed,
        } => {
            let mut cfg: SynthConfig = load_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let m = pipeline::synth_from_dir(&hdr_dir, &cfg, &output)?;
            log::info!("wrote {} frames to {}", m.frames.len(), output.display());
            emit(&m, None)
        }
        Command::Eval {
            pred_dir,
            gt_dir,
            metrics,
            mu,
            domain,
            isp,
            output,
        } => {
            let metrics = metrics
                .iter()
                .map(|s| s.parse())
                .collect::<hdrv_core::Result<Vec<Metric>>>()?;
            let isp: IspConfig = load_or_default(isp.as_deref())?;
            let report = pipeline::eval_dirs(&pred_dir, &gt_dir, &metrics, mu, domain.into(), &isp)?;
            emit(&report, output.as_deref())
        }
        Command::Preview { pfm, output, mu } => {
            let report = pipeline::preview(&pfm, &output, mu, &IspConfig::default())?;
            emit(&report, None)
        }
        Command::Screen {
            manifest,
            config,
            allow_irregular,
            output,
        } => {
            let m = load_manifest(&manifest, LoadOptions { allow_irregular })?;
            let cfg: ScreenConfig = load_or_default(config.as_deref())?;
            let report = pipeline::screen(&m, &MergeCurve::default(), &cfg)?;
            emit(&report, output.as_deref())
        }
        Command::RenderScene {
            kind,
            width,
            height,
            frames,
            seed,
            rgb,
            output,
        } => {
            let kind: SceneKind = match kind {
                KindArg::Static => "static",
                KindArg::GlobalShift => "global-shift",
                KindArg::TwoMotion => "two-motion",
            }
            .parse()?;
            let params = SceneParams {
                width,
                height,
                frames,
                layout: if rgb {
                    Domain::Srgb.layout()
                } else {
                    Domain::Raw.layout()
                },
                seed,
                ..SceneParams::default()
            };
            let report = pipeline::render_scene_to_dir(kind, &params, &output)?;
            emit(&report, None)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_io() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
