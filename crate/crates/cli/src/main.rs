use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use nbtc_core::container::{export_feature_images, import_texture_set, ContainerError, NbtcFile, TexturePaths};
use nbtc_core::eval::{
    decode_texel, evaluate_asset, evaluate_per_lod, footprint_with_layers, mean_psnr, ratio_to_f64, Aniso, QualityReport,
};
use nbtc_core::pyramid::{mip_count, mip_dims, Variant};
use nbtc_core::tilesim::{decode_screen, Asset, MaterialScreen};
use nbtc_core::trainer::{train_with_progress, FeatureImage, TrainConfig, TrainError};

const EXIT_INPUT: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_IO: u8 = 3;

/// Neural texture compression with BC1-stored latents.
#[derive(Parser, Debug)]
#[command(name = "nbtc", version, about, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a compressed asset from five material maps.
    Compress(CompressArgs),
    /// Decode an asset at one LOD into five images.
    Decompress(DecompressArgs),
    /// Report PSNR of an asset against reference maps.
    Eval(EvalArgs),
    /// Run the tiled decode simulator on a material-id screen.
    Tilesim(TilesimArgs),
}

#[derive(Args, Debug)]
struct MapArgs {
    /// Base color map (RGB).
    #[arg(long)]
    albedo: PathBuf,
    /// Normal map (RGB).
    #[arg(long)]
    normal: PathBuf,
    /// Roughness map (gray, or red channel of RGB).
    #[arg(long)]
    roughness: PathBuf,
    /// Metalness map (gray, or red channel of RGB).
    #[arg(long)]
    metalness: PathBuf,
    /// Ambient occlusion map (gray, or red channel of RGB).
    #[arg(long)]
    ao: PathBuf,
}

impl MapArgs {
    fn paths(&self) -> TexturePaths {
        TexturePaths {
            albedo: self.albedo.clone(),
            normal: self.normal.clone(),
            roughness: self.roughness.clone(),
            metalness: self.metalness.clone(),
            ao: self.ao.clone(),
        }
    }
}

#[derive(Args, Debug)]
struct CompressArgs {
    #[command(flatten)]
    maps: MapArgs,
    /// Latent layout: A (higher quality) or B (smaller).
    #[arg(long, default_value = "A", value_parser = parse_variant)]
    variant: Variant,
    /// Hidden layer width.
    #[arg(long, default_value_t = 32, value_parser = parse_hidden_dim)]
    hidden_dim: usize,
    /// Number of hidden layers.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..))]
    hidden_layers: u8,
    /// Optimization steps.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// RNG seed for initialization and sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples per step.
    #[arg(long, default_value_t = nbtc_core::trainer::DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    /// Adam learning rate for decoder weights.
    #[arg(long, default_value_t = nbtc_core::trainer::DEFAULT_LR_MLP)]
    lr_mlp: f64,
    /// Adam learning rate for latent parameters.
    #[arg(long, default_value_t = nbtc_core::trainer::DEFAULT_LR_LATENT)]
    lr_latent: f64,
    /// Write the per-step loss log here.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Output `.nbtc` file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FilterArgs {
    /// Level of detail (0 = base resolution).
    #[arg(long, default_value_t = 0.0)]
    lod: f64,
    /// Anisotropic major axis in uv units, as `u,v`.
    #[arg(long, value_parser = parse_axis)]
    aniso: Option<[f64; 2]>,
    /// Tap count along the anisotropic axis.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    taps: u32,
}

impl FilterArgs {
    fn aniso(&self) -> Option<Aniso> {
        self.aniso.map(|axis| Aniso {
            axis,
            taps: self.taps as usize,
        })
    }
}

#[derive(Args, Debug)]
struct DecompressArgs {
    /// Input `.nbtc` file.
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    filter: FilterArgs,
    /// Directory for the decoded images.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Input `.nbtc` file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Reference maps in order: albedo normal roughness metalness ao.
    #[arg(long, num_args = 5, value_names = ["ALBEDO", "NORMAL", "ROUGHNESS", "METALNESS", "AO"], required = true)]
    reference: Vec<PathBuf>,
    #[command(flatten)]
    filter: FilterArgs,
    /// Report every integer LOD instead of a single one.
    #[arg(long)]
    per_lod: bool,
    /// Also write the reports as a comma-separated table.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TilesimArgs {
    /// Screen description file.
    #[arg(long)]
    screen: PathBuf,
    /// Decoder assets as `id=file.nbtc`; repeatable.
    #[arg(long = "assets", value_parser = parse_asset, num_args = 1..)]
    assets: Vec<(u32, PathBuf)>,
    /// Write statistics here instead of stdout.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Write the decoded feature buffer as images here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

fn parse_hidden_dim(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(d @ (16 | 32 | 64)) => Ok(d),
        _ => Err(format!("`{s}` is not one of 16, 32, 64")),
    }
}

fn parse_axis(s: &str) -> Result<[f64; 2], String> {
    let (u, v) = s.split_once(',').ok_or_else(|| format!("expected `u,v`, got `{s}`"))?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    let axis = [num(u)?, num(v)?];
    if axis.iter().all(|a| a.is_finite()) {
        Ok(axis)
    } else {
        Err(format!("axis `{s}` is not finite"))
    }
}

fn parse_asset(s: &str) -> Result<(u32, PathBuf), String> {
    let (id, path) = s.split_once('=').ok_or_else(|| format!("expected `id=file`, got `{s}`"))?;
    let id = id.parse::<u32>().map_err(|e| format!("bad id `{id}`: {e}"))?;
    Ok((id, PathBuf::from(path)))
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl ToString) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<ContainerError> for Failure {
    fn from(e: ContainerError) -> Self {
        let code = if e.is_io() { EXIT_IO } else { EXIT_INPUT };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let code = match e {
            TrainError::NonFiniteLoss { .. } => EXIT_DIVERGED,
            _ => EXIT_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn load_asset(path: &Path) -> Result<(NbtcFile, Asset), Failure> {
    let file = NbtcFile::load(path)?;
    let pyramid = file.pyramid().map_err(Failure::input)?;
    let mlp = file.mlp().map_err(Failure::input)?;
    Ok((file, Asset { pyramid, mlp }))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

fn check_lod(lod: f64, width: usize, height: usize) -> Result<(), Failure> {
    let max = (mip_count(width, height) - 1) as f64;
    if lod >= 0.0 && lod <= max {
        Ok(())
    } else {
        Err(Failure::input(format!("--lod {lod} outside [0, {max}]")))
    }
}

fn compress(args: &CompressArgs) -> Result<(), Failure> {
    let reference = import_texture_set(&args.maps.paths())?;
    let cfg = TrainConfig {
        variant: args.variant,
        hidden_dim: args.hidden_dim,
        hidden_layers: usize::from(args.hidden_layers),
        steps: args.steps,
        batch_size: args.batch_size,
        lr_mlp: args.lr_mlp,
        lr_latent: args.lr_latent,
        seed: args.seed,
    };
    let start = Instant::now();
    let report_every = (args.steps / 10).max(1);
    let out = train_with_progress(&reference, &cfg, |e| {
        if (e.step + 1) % report_every == 0 {
            eprintln!("step {:>6}  loss {:.6}", e.step + 1, e.loss);
        }
    })?;
    let elapsed = start.elapsed().as_secs_f64();

    let file = NbtcFile::new(out.bc1, &out.mlp);
    file.save(&args.out)?;
    if let Some(log) = &args.log {
        write_file(log, &out.log.to_text())?;
    }

    let stored_mlp = file.mlp().map_err(Failure::input)?;
    let quality = evaluate_asset(&out.pyramid, &stored_mlp, &reference, 0.0, None).map_err(Failure::input)?;
    let fp = footprint_with_layers(
        cfg.variant,
        reference.width(),
        reference.height(),
        cfg.hidden_dim,
        cfg.hidden_layers,
        false,
    )
    .map_err(Failure::input)?;

    println!("output: {}", args.out.display());
    println!("resolution: {}x{}", reference.width(), reference.height());
    println!("variant: {}", cfg.variant);
    println!("hidden_dim: {}", cfg.hidden_dim);
    println!("steps: {}", cfg.steps);
    println!("psnr: {:.4}", quality.psnr);
    println!("latent_bits_per_texel: {:.6}", ratio_to_f64(fp.latent_bits_per_texel));
    println!("bits_per_texel: {:.6}", ratio_to_f64(fp.total_bits_per_texel()));
    println!("compression_ratio: {:.4}", ratio_to_f64(fp.compression_ratio()));
    println!("degenerate_blocks: {}", out.degenerate_blocks);
    println!("training_time_s: {elapsed:.3}");
    Ok(())
}

fn decompress(args: &DecompressArgs) -> Result<(), Failure> {
    let (file, asset) = load_asset(&args.input)?;
    let (w, h) = (file.width(), file.height());
    let lod = args.filter.lod;
    check_lod(lod, w, h)?;
    let (mw, mh) = mip_dims(w, h, lod.floor() as usize);
    let aniso = args.filter.aniso();
    let img = FeatureImage::from_fn(mw, mh, |x, y| {
        let uv = [(x as f64 + 0.5) / mw as f64, (y as f64 + 0.5) / mh as f64];
        decode_texel(&asset.pyramid, &asset.mlp, uv, lod, aniso)
    });
    for path in export_feature_images(&img, &args.out_dir)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let (_, asset) = load_asset(&args.input)?;
    let r = &args.reference;
    let reference = import_texture_set(&TexturePaths {
        albedo: r[0].clone(),
        normal: r[1].clone(),
        roughness: r[2].clone(),
        metalness: r[3].clone(),
        ao: r[4].clone(),
    })?;
    let reports: Vec<QualityReport> = if args.per_lod {
        evaluate_per_lod(&asset.pyramid, &asset.mlp, &reference).map_err(Failure::input)?
    } else {
        vec![evaluate_asset(&asset.pyramid, &asset.mlp, &reference, args.filter.lod, args.filter.aniso())
            .map_err(Failure::input)?]
    };
    for (i, report) in reports.iter().enumerate() {
        if i > 0 {
            println!();
        }
        print!("{}", report.to_text());
    }
    if args.per_lod {
        println!();
        println!("mean_psnr: {:.4}", mean_psnr(&reports));
    }
    if let Some(csv) = &args.csv {
        let mut table = QualityReport::csv_header();
        table.push('\n');
        for report in &reports {
            let _ = writeln!(table, "{}", report.csv_row());
        }
        write_file(csv, &table)?;
    }
    Ok(())
}

fn tilesim(args: &TilesimArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.screen).map_err(|e| Failure::io(&args.screen, e))?;
    let screen = MaterialScreen::parse(&text).map_err(Failure::input)?;
    let mut assets = HashMap::new();
    for (id, path) in &args.assets {
        let (_, asset) = load_asset(path)?;
        if assets.insert(*id, asset).is_some() {
            return Err(Failure::input(format!("material id {id} given twice")));
        }
    }
    let decoded = decode_screen(&screen, &assets).map_err(Failure::input)?;
    let stats = decoded.stats.to_text();
    match &args.stats {
        Some(path) => write_file(path, &stats)?,
        None => print!("{stats}"),
    }
    if let Some(dir) = &args.out_dir {
        let img = FeatureImage::from_fn(screen.width(), screen.height(), |x, y| {
            decoded.feature(x, y).unwrap_or_default()
        });
        export_feature_images(&img, dir)?;
    }
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("NBTC_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| Failure::input(format!("NBTC_THREADS=`{value}` is not a non-negative integer")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(Failure::input)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_INPUT),
            };
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Compress(a) => compress(a),
        Command::Decompress(a) => decompress(a),
        Command::Eval(a) => eval(a),
        Command::Tilesim(a) => tilesim(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
