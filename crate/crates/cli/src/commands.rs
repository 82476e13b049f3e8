//! Subcommands and their exit-code mapping.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use cubepano::blend::{cross_face_blend, BlendConfig};
use cubepano::geometry::{cubemap_to_erp, erp_to_cubemap};
use cubepano::imageio::{
    load_cubemap, load_image, read_config, save_cubemap, save_image, write_manifest, BitDepth, DatasetManifest,
    ManifestEntry, RunConfig,
};
use cubepano::seams::{seam_report, SeamParams, ValueScale};
use cubepano::{Cubemap, ErpImage};
use cubepano_model::flow::{euler_sample, make_toy_dataset, SampleMode, SamplerConfig, TrainOptions, Trainer};
use cubepano_model::jointface::tokens::{cubemap_to_latents, latents_to_cubemap};
use cubepano_model::jointface::{load_checkpoint, save_checkpoint, JointFaceNet, NetConfig, CHECKPOINT_VERSION};
use cubepano_model::ModelError;
use ndarray::Array3;

const GENERATOR_VERSION: &str = concat!("cubepano-toy-", env!("CARGO_PKG_VERSION"));

fn long_version() -> &'static str {
    concat!(
        env!("CARGO_PKG_VERSION"),
        "\ncheckpoint format 1\nmanifest generator cubepano-toy-",
        env!("CARGO_PKG_VERSION")
    )
}

#[derive(Debug, Parser)]
#[command(name = "cubepano", version, long_version = long_version(), about = "Cubemap panorama tools")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Equirectangular PNG to a cubemap directory.
    Erp2cube {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 256)]
        face_size: usize,
        #[arg(long)]
        sixteen_bit: bool,
    },
    /// Cubemap directory to an equirectangular PNG.
    Cube2erp {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Output width; height is half of it. Defaults to four face widths.
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        sixteen_bit: bool,
    },
    /// Poisson cross-face blending of a cubemap directory.
    Blend {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 200)]
        iterations: usize,
        #[arg(long)]
        residual_stop: Option<f64>,
        #[arg(long)]
        sixteen_bit: bool,
    },
    /// Seam-SSIM and Seam-Sobel of a cubemap directory or ERP PNG.
    SeamEval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        band_frac: f64,
        #[arg(long, default_value = "byte")]
        scale: String,
        /// Face size used when the input is an ERP; defaults to a quarter of its width.
        #[arg(long)]
        face_size: Option<usize>,
        /// Write the JSON report here instead of standard output.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Adapter-only training on the synthetic dataset.
    ToyTrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write per-step losses as JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Euler sampling from a checkpoint.
    ToySample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        mode: String,
        #[arg(long)]
        cond: usize,
        #[arg(long)]
        view: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        blend: bool,
        #[arg(long, default_value_t = 200)]
        iterations: usize,
    },
    /// Writes the synthetic dataset as cubemap directories plus a manifest.
    MakeDataset {
        #[arg(long, default_value_t = 256)]
        n_scenes: usize,
        #[arg(long, default_value_t = 16)]
        face_size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Validation(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Validation(m) => f.write_str(m),
        }
    }
}

impl From<cubepano::Error> for CliError {
    fn from(e: cubepano::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Usage(m) => CliError::Usage(m),
            e if e.is_io() => CliError::Io(e.to_string()),
            e => CliError::Validation(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn depth(sixteen: bool) -> BitDepth {
    if sixteen {
        BitDepth::Sixteen
    } else {
        BitDepth::Eight
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn print_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Io(format!("stdout: {e}")))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Erp2cube { input, output, face_size, sixteen_bit } => {
            let erp = ErpImage::new(load_image(&input)?)?;
            let cube = erp_to_cubemap(&erp, face_size)?;
            save_cubemap(&cube, &output, depth(sixteen_bit))?;
        }
        Command::Cube2erp { input, output, width, sixteen_bit } => {
            let cube = load_cubemap(&input)?;
            let w = width.unwrap_or(4 * cube.face_size());
            if w < 2 || w % 2 != 0 {
                return Err(CliError::Usage(format!("--width {w} must be an even number of at least 2")));
            }
            let erp = cubemap_to_erp(&cube, w, w / 2)?;
            save_image(erp.raster(), &output, depth(sixteen_bit))?;
        }
        Command::Blend { input, output, iterations, residual_stop, sixteen_bit } => {
            let cfg = BlendConfig { iterations, residual_stop };
            cfg.validate()?;
            let cube = load_cubemap(&input)?;
            save_cubemap(&cross_face_blend(&cube, &cfg)?, &output, depth(sixteen_bit))?;
        }
        Command::SeamEval { input, band_frac, scale, face_size, report } => {
            let value_scale: ValueScale = scale.parse().map_err(|e: cubepano::Error| CliError::Usage(e.to_string()))?;
            let params = SeamParams { band_frac, value_scale, ..SeamParams::default() };
            params.validate()?;
            let cube = load_cube_or_erp(&input, face_size)?;
            let mut json = seam_report(&cube, &params)?.to_json();
            json.push('\n');
            match report {
                Some(path) => write_text(&path, &json)?,
                None => print_stdout(&json)?,
            }
        }
        Command::ToyTrain { config, out, steps, seed, report } => toy_train(config, out, steps, seed, report)?,
        Command::ToySample { ckpt, mode, cond, view, steps, seed, out, blend, iterations } => {
            let mode: SampleMode = mode.parse()?;
            match (mode, &view) {
                (SampleMode::V2p, None) => return Err(CliError::Usage("--mode v2p requires --view".into())),
                (SampleMode::T2p, Some(_)) => return Err(CliError::Usage("--view is only valid with --mode v2p".into())),
                _ => {}
            }
            if steps == 0 {
                return Err(CliError::Usage("--steps must be at least 1".into()));
            }
            let blend_cfg = BlendConfig { iterations, residual_stop: None };
            blend_cfg.validate()?;
            let net = load_checkpoint(&ckpt)?;
            let view = view.map(|p| load_view(&p, &net)).transpose()?;
            let cfg = SamplerConfig { steps, seed, mode };
            let latents = euler_sample(&net, cond, &cfg, view.as_ref())?;
            let mut cube = latents_to_cubemap(&latents)?;
            if blend {
                cube = cross_face_blend(&cube, &blend_cfg)?;
            }
            save_cubemap(&cube, &out, BitDepth::Sixteen)?;
        }
        Command::MakeDataset { n_scenes, face_size, seed, out } => {
            if n_scenes == 0 || face_size == 0 {
                return Err(CliError::Usage("--n-scenes and --face-size must be positive".into()));
            }
            let ds = make_toy_dataset(n_scenes, face_size, seed)?;
            let mut entries = Vec::with_capacity(n_scenes);
            for (i, scene) in ds.scenes.iter().enumerate() {
                let id = format!("scene_{i:05}");
                save_cubemap(&scene.cubemap, out.join(&id), BitDepth::Sixteen)?;
                entries.push(ManifestEntry {
                    scene_id: id.clone(),
                    cubemap_dir: Some(PathBuf::from(id)),
                    erp_path: None,
                    cond_id: scene.cond,
                });
            }
            let manifest = DatasetManifest { generator_version: GENERATOR_VERSION.into(), seed, entries };
            write_manifest(&manifest, out.join("manifest.json"))?;
        }
    }
    Ok(())
}

fn load_cube_or_erp(input: &Path, face_size: Option<usize>) -> Result<Cubemap> {
    if input.is_dir() {
        return Ok(load_cubemap(input)?);
    }
    let erp = ErpImage::new(load_image(input)?)?;
    let s = face_size.unwrap_or(erp.width() / 4);
    Ok(erp_to_cubemap(&erp, s)?)
}

fn load_view(path: &Path, net: &JointFaceNet) -> Result<Array3<f64>> {
    let img = load_image(path)?;
    let c = net.config();
    if (img.width(), img.height(), img.channels()) != (c.face_size, c.face_size, c.latent_channels) {
        return Err(CliError::Validation(format!(
            "{}: view is {}x{}x{}, the checkpoint expects {}x{}x{}",
            path.display(),
            img.width(),
            img.height(),
            img.channels(),
            c.face_size,
            c.face_size,
            c.latent_channels
        )));
    }
    let face = Cubemap::new(std::array::from_fn(|_| img.clone()))?;
    Ok(cubemap_to_latents(&face).index_axis_move(ndarray::Axis(0), 0))
}

fn toy_train(
    config: Option<PathBuf>,
    out: PathBuf,
    steps: Option<usize>,
    seed: Option<u64>,
    report: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = match &config {
        Some(path) => read_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let net = JointFaceNet::new(NetConfig::from_run(&cfg)?, cfg.seed)?;
    let dataset = make_toy_dataset(cfg.n_scenes, cfg.face_size, cfg.seed)?;
    let mut trainer = Trainer::new(net, &dataset, TrainOptions::from_run(&cfg))?;
    let every = (cfg.steps / 20).max(1);
    let result = trainer.run(|i, loss| {
        if (i + 1) % every == 0 {
            eprintln!("step {:>6} loss {loss:.5}", i + 1);
        }
    })?;
    save_checkpoint(trainer.net(), &out)?;
    let initial = result.initial_average();
    let last = result.final_average();
    let summary = serde_json::json!({
        "steps": cfg.steps,
        "seed": cfg.seed,
        "optimizer": cfg.optimizer.to_string(),
        "lr": cfg.lr,
        "window": result.window,
        "initial_loss": initial,
        "final_loss": last,
        "ratio": last / initial,
        "checkpoint_version": CHECKPOINT_VERSION,
    });
    if let Some(path) = report {
        let mut full = summary.clone();
        full["losses"] = serde_json::json!(result.losses);
        write_text(&path, &(serde_json::to_string_pretty(&full).expect("report serializes") + "\n"))?;
    }
    print_stdout(&(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"))
}
