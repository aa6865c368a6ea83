//! Command-line surface: ingest signals, run fits, decode at any scale,
//! evaluate metrics, and sweep hyperparameters.
//!
//! Images are PNG (8/16-bit) or PPM, normalized to `[0, 1]`. Volumes are raw
//! u8 occupancy grids with a sidecar JSON (`{"dims": [x, y, z]}`) next to
//! the `.raw` file. Exit codes: 0 success, 2 invalid configuration, 3 I/O
//! failure.

use crate::codec::MinerModel;
use crate::error::MinerError;
use crate::metrics;
use crate::pyramid::{DomainKind, GridSignal, PyramidKind};
use crate::trainer::{fit_observed, EpochRecord, TrainConfig, CSV_HEADER};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or inconsistent inputs (exit 2).
    Config(String),
    /// Filesystem or format failure (exit 3).
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<MinerError> for CliError {
    fn from(e: MinerError) -> Self {
        match e {
            MinerError::Io(_)
            | MinerError::TruncatedFile
            | MinerError::BadMagic
            | MinerError::UnsupportedVersion(_)
            | MinerError::ChecksumMismatch { .. } => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "miner", version, about = "Multiscale implicit neural representation fitting")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a signal; writes a .minr model, a CSV training log, and one
    /// decoded snapshot per scale.
    Fit(FitArgs),
    /// Decode a model at a chosen scale into an image or volume file.
    Decode(DecodeArgs),
    /// Compare two signals; prints a JSON metric line.
    Eval(EvalArgs),
    /// Run full fits over a list of block sizes or scale counts.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct FitOverrides {
    /// Number of scales.
    #[arg(short = 'J', long)]
    scales: Option<usize>,
    /// Block size per axis.
    #[arg(short = 'b', long)]
    block_size: Option<usize>,
    /// Hidden features per layer.
    #[arg(long)]
    features: Option<usize>,
    /// Total linear layers per MLP.
    #[arg(long)]
    layers: Option<usize>,
    /// Base learning rate.
    #[arg(long)]
    lr: Option<f32>,
    /// Per-epoch learning-rate decay.
    #[arg(long)]
    gamma: Option<f32>,
    /// Per-block MSE prune threshold.
    #[arg(long)]
    tau: Option<f32>,
    /// Maximum epochs per scale.
    #[arg(long)]
    epochs: Option<usize>,
    /// Pyramid mode.
    #[arg(long, value_enum)]
    pyramid: Option<PyramidArg>,
    /// Disable parent-to-child weight sharing.
    #[arg(long)]
    no_weight_share: bool,
    /// RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Sine frequency scale.
    #[arg(long)]
    omega0: Option<f32>,
    /// Crop the input down to dims divisible by block_size * 2^(J-1).
    #[arg(long)]
    crop_divisible: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PyramidArg {
    Laplacian,
    Gaussian,
}

#[derive(Args)]
struct FitArgs {
    /// Input image (.png/.ppm) or volume (.raw with sidecar JSON).
    input: PathBuf,
    #[command(flatten)]
    overrides: FitOverrides,
    /// Directory for the model, CSV log, and snapshots.
    #[arg(short, long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    /// Model file (.minr).
    model: PathBuf,
    /// Scale to decode (0 = finest).
    #[arg(long)]
    scale: usize,
    /// Output image (.png) or volume (.raw + sidecar).
    output: PathBuf,
    /// Write volumes as raw f32 instead of u8.
    #[arg(long)]
    raw_f32: bool,
}

#[derive(Args)]
struct EvalArgs {
    a: PathBuf,
    b: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    input: PathBuf,
    /// PSNR (dB) whose time-to-reach is reported per sweep point.
    #[arg(long)]
    target_psnr: f64,
    /// Comma-separated block sizes to sweep.
    #[arg(long, value_delimiter = ',', conflicts_with = "scale_list")]
    block_sizes: Option<Vec<usize>>,
    /// Comma-separated scale counts to sweep.
    #[arg(long = "scale-counts", value_delimiter = ',')]
    scale_list: Option<Vec<usize>>,
    #[command(flatten)]
    overrides: FitOverrides,
    /// Output CSV path (stdout when omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Parse arguments and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

fn apply_overrides(cfg: &mut TrainConfig, ov: &FitOverrides) {
    if let Some(v) = ov.scales {
        cfg.num_scales = v;
    }
    if let Some(v) = ov.block_size {
        cfg.block_size = v;
    }
    if let Some(v) = ov.features {
        cfg.hidden_features = v;
    }
    if let Some(v) = ov.layers {
        cfg.num_layers = v;
    }
    if let Some(v) = ov.lr {
        cfg.base_lr = v;
    }
    if let Some(v) = ov.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = ov.tau {
        cfg.tau = v;
    }
    if let Some(v) = ov.epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = ov.pyramid {
        cfg.pyramid_kind = match v {
            PyramidArg::Laplacian => PyramidKind::Laplacian,
            PyramidArg::Gaussian => PyramidKind::Gaussian,
        };
    }
    if ov.no_weight_share {
        cfg.weight_share = false;
    }
    if let Some(v) = ov.seed {
        cfg.seed = v;
    }
    if let Some(v) = ov.omega0 {
        cfg.omega0 = v;
    }
}

fn prepare_input(
    path: &Path,
    overrides: &FitOverrides,
) -> Result<(GridSignal, TrainConfig), CliError> {
    let signal = load_signal(path)?;
    let mut cfg = match signal.domain_kind {
        DomainKind::Image2D => TrainConfig::image_defaults(),
        DomainKind::Volume3D => TrainConfig::volume_defaults(),
    };
    apply_overrides(&mut cfg, overrides);
    let signal = if overrides.crop_divisible {
        crop_divisible(&signal, cfg.block_size << (cfg.num_scales - 1))?
    } else {
        signal
    };
    Ok((signal, cfg))
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    let (signal, cfg) = prepare_input(&args.input, &args.overrides)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| io_err(&args.out_dir, e))?;

    let stem = args
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let model_path = args.out_dir.join(format!("{stem}.minr"));
    let csv_path = args.out_dir.join("train_log.csv");

    let csv_file = File::create(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    let mut csv = BufWriter::new(csv_file);
    writeln!(csv, "{CSV_HEADER}").map_err(|e| io_err(&csv_path, e))?;

    let mut csv_err = None;
    let (model, _log) = fit_observed(&signal, &cfg, |rec: &EpochRecord| {
        // every row is flushed before the next epoch starts
        if let Err(e) = writeln!(csv, "{}", rec.to_csv_row()).and_then(|_| csv.flush()) {
            csv_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = csv_err {
        return Err(io_err(&csv_path, e));
    }

    let mut file = File::create(&model_path).map_err(|e| io_err(&model_path, e))?;
    model.save(&mut file)?;

    for j in 0..model.num_scales {
        let decoded = model.decode(j)?;
        match model.domain_kind {
            DomainKind::Image2D => {
                let p = args.out_dir.join(format!("snapshot_scale{j}.png"));
                save_image(&p, &decoded)?;
            }
            DomainKind::Volume3D => {
                let p = args.out_dir.join(format!("snapshot_scale{j}.raw"));
                save_volume(&p, &decoded, false)?;
            }
        }
    }

    let decoded = model.decode(0)?;
    let report = metric_report(&signal, &decoded)?;
    println!("{}", report_json(&report));
    Ok(())
}

fn cmd_decode(args: DecodeArgs) -> Result<(), CliError> {
    let mut file = File::open(&args.model).map_err(|e| io_err(&args.model, e))?;
    let model = MinerModel::load(&mut file)?;
    let decoded = model.decode(args.scale)?;
    match model.domain_kind {
        DomainKind::Image2D => save_image(&args.output, &decoded),
        DomainKind::Volume3D => save_volume(&args.output, &decoded, args.raw_f32),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let a = load_signal(&args.a)?;
    let b = load_signal(&args.b)?;
    let report = metric_report(&a, &b)?;
    println!("{}", report_json(&report));
    Ok(())
}

fn metric_report(a: &GridSignal, b: &GridSignal) -> Result<metrics::MetricReport, CliError> {
    let iou = if a.domain_kind == DomainKind::Volume3D && b.domain_kind == DomainKind::Volume3D {
        Some(metrics::iou(a, b, 0.5)?)
    } else {
        None
    };
    Ok(metrics::MetricReport {
        psnr_db: metrics::psnr(a, b)?,
        mse: metrics::mse(a, b)?,
        iou,
    })
}

/// JSON line with an explicit "inf" sentinel, which plain JSON numbers
/// cannot represent.
fn report_json(r: &metrics::MetricReport) -> String {
    let psnr = if r.psnr_db.is_infinite() {
        "\"inf\"".to_string()
    } else {
        format!("{:.4}", r.psnr_db)
    };
    match r.iou {
        Some(iou) => format!(
            "{{\"psnr_db\":{psnr},\"mse\":{:e},\"iou\":{:.6}}}",
            r.mse, iou
        ),
        None => format!("{{\"psnr_db\":{psnr},\"mse\":{:e}}}", r.mse),
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    enum Param {
        BlockSize(Vec<usize>),
        Scales(Vec<usize>),
    }
    let param = match (&args.block_sizes, &args.scale_list) {
        (Some(b), None) => Param::BlockSize(b.clone()),
        (None, Some(s)) => Param::Scales(s.clone()),
        _ => {
            return Err(CliError::Config(
                "exactly one of --block-sizes or --scale-counts is required".into(),
            ))
        }
    };

    let mut rows = vec!["param,value,time_to_target_ms,final_params".to_string()];
    let (name, values) = match &param {
        Param::BlockSize(v) => ("block_size", v),
        Param::Scales(v) => ("num_scales", v),
    };
    for &value in values {
        let mut overrides = args.overrides.clone();
        match param {
            Param::BlockSize(_) => overrides.block_size = Some(value),
            Param::Scales(_) => overrides.scales = Some(value),
        }
        let (signal, cfg) = prepare_input(&args.input, &overrides)?;
        let mut time_to_target = f64::INFINITY;
        let mut final_params = 0usize;
        fit_observed(&signal, &cfg, |rec| {
            if time_to_target.is_infinite() && rec.psnr_db >= args.target_psnr {
                time_to_target = rec.wall_ms;
            }
            final_params = rec.cum_params;
        })?;
        let time = if time_to_target.is_infinite() {
            "inf".to_string()
        } else {
            format!("{time_to_target:.3}")
        };
        rows.push(format!("{name},{value},{time},{final_params}"));
    }

    let out = rows.join("\n") + "\n";
    match &args.output {
        Some(path) => std::fs::write(path, out).map_err(|e| io_err(path, e))?,
        None => print!("{out}"),
    }
    Ok(())
}

/// Crop a signal from the origin down to dims divisible by `divisor`.
fn crop_divisible(signal: &GridSignal, divisor: usize) -> Result<GridSignal, CliError> {
    let new_dims: Vec<usize> = signal.dims.iter().map(|d| d / divisor * divisor).collect();
    if new_dims.iter().any(|&d| d == 0) {
        return Err(CliError::Config(format!(
            "signal dims {:?} too small to crop to a multiple of {divisor}",
            signal.dims
        )));
    }
    if new_dims == signal.dims {
        return Ok(signal.clone());
    }
    let ch = signal.channels;
    let mut values = Vec::with_capacity(new_dims.iter().product::<usize>() * ch);
    let n: usize = new_dims.iter().product();
    for idx in 0..n {
        let coord = crate::pyramid::unravel(idx, &new_dims);
        let src = crate::pyramid::ravel(&coord, &signal.dims) * ch;
        values.extend_from_slice(&signal.values[src..src + ch]);
    }
    Ok(GridSignal::new(new_dims, ch, values, signal.domain_kind)?)
}

/// Load an image or volume based on its extension.
pub fn load_signal(path: &Path) -> Result<GridSignal, CliError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("raw") => load_volume(path),
        _ => load_image(path),
    }
}

fn load_image(path: &Path) -> Result<GridSignal, CliError> {
    use image::DynamicImage;
    let img = image::open(path).map_err(|e| io_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, values): (usize, Vec<f32>) = match &img {
        DynamicImage::ImageLuma8(im) => {
            (1, im.as_raw().iter().map(|&v| v as f32 / 255.0).collect())
        }
        DynamicImage::ImageLuma16(im) => {
            (1, im.as_raw().iter().map(|&v| v as f32 / 65535.0).collect())
        }
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => (
            3,
            img.to_rgb16()
                .into_raw()
                .iter()
                .map(|&v| v as f32 / 65535.0)
                .collect(),
        ),
        _ => (
            3,
            img.to_rgb8()
                .into_raw()
                .iter()
                .map(|&v| v as f32 / 255.0)
                .collect(),
        ),
    };
    Ok(GridSignal::new(
        vec![h, w],
        channels,
        values,
        DomainKind::Image2D,
    )?)
}

fn save_image(path: &Path, signal: &GridSignal) -> Result<(), CliError> {
    let h = signal.dims[0] as u32;
    let w = signal.dims[1] as u32;
    let quant = |v: f32| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
    match signal.channels {
        1 => {
            let buf: Vec<u16> = signal.values.iter().map(|&v| quant(v)).collect();
            let im = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w, h, buf).unwrap();
            im.save(path).map_err(|e| io_err(path, e))
        }
        3 => {
            let buf: Vec<u16> = signal.values.iter().map(|&v| quant(v)).collect();
            let im = image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(w, h, buf).unwrap();
            im.save(path).map_err(|e| io_err(path, e))
        }
        n => Err(CliError::Config(format!(
            "cannot write an image with {n} channels"
        ))),
    }
}

#[derive(Deserialize)]
struct VolumeSidecar {
    dims: [usize; 3],
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn load_volume(path: &Path) -> Result<GridSignal, CliError> {
    let sidecar = sidecar_path(path);
    let meta = std::fs::read_to_string(&sidecar).map_err(|e| io_err(&sidecar, e))?;
    let meta: VolumeSidecar =
        serde_json::from_str(&meta).map_err(|e| io_err(&sidecar, e))?;
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let expected: usize = meta.dims.iter().product();
    if bytes.len() != expected {
        return Err(CliError::Io(format!(
            "{}: {} bytes, sidecar dims imply {expected}",
            path.display(),
            bytes.len()
        )));
    }
    // binary occupancy grids are stored either as 0/1 or as 0/255
    let divisor = if bytes.iter().any(|&b| b > 1) { 255.0 } else { 1.0 };
    let values: Vec<f32> = bytes.iter().map(|&b| b as f32 / divisor).collect();
    Ok(GridSignal::new(
        meta.dims.to_vec(),
        1,
        values,
        DomainKind::Volume3D,
    )?)
}

fn save_volume(path: &Path, signal: &GridSignal, as_f32: bool) -> Result<(), CliError> {
    let bytes: Vec<u8> = if as_f32 {
        signal.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    } else {
        signal
            .values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    };
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))?;
    let sidecar = sidecar_path(path);
    let meta = format!(
        "{{\"dims\":[{},{},{}]}}\n",
        signal.dims[0], signal.dims[1], signal.dims[2]
    );
    std::fs::write(&sidecar, meta).map_err(|e| io_err(&sidecar, e))
}
