mod apps;
mod config;
mod render;
mod tools;
mod train;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use spgs::model::RenderPath;
use spgs::train::Profile;

use config::CliConfig;

#[derive(Parser, Debug)]
#[command(name = "spgs", version, about = "Dynamic Gaussian splatting with superpoint deformation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Seed for initialization, sampling and generated scenes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Leave wall-clock measurements out of every output file.
    #[arg(long, global = true)]
    deterministic: bool,
    /// TOML file layered over the built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on a dataset directory.
    Train(train::TrainArgs),
    /// Render a split and score it against its images.
    Render(render::RenderArgs),
    /// Measure rendering and deformation speed.
    Bench(render::BenchArgs),
    /// Apply an edit script to a checkpoint.
    Edit(apps::EditArgs),
    /// Estimate superpoint poses for the frames of a split.
    Pose(apps::PoseArgs),
    /// Fit a model to per-Gaussian trajectories of another model.
    Distill(apps::DistillArgs),
    /// Generate a synthetic clustered scene.
    GenToy(tools::GenToyArgs),
    /// Export the Gaussians colored by superpoint.
    Inspect(tools::InspectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PathMode {
    Network,
    Interp,
}

impl From<PathMode> for RenderPath {
    fn from(m: PathMode) -> Self {
        match m {
            PathMode::Network => RenderPath::Network,
            PathMode::Interp => RenderPath::Interp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Synthetic,
    Real,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Synthetic => Profile::Synthetic,
            ProfileArg::Real => Profile::Real,
        }
    }
}

impl GlobalArgs {
    /// Defaults, then the profile, then the config file.
    pub fn config(&self, profile: Option<ProfileArg>) -> Result<CliConfig> {
        let base = CliConfig::with_profile(profile.map_or(Profile::Synthetic, Into::into));
        let mut c = match &self.config {
            Some(path) => base.layer_file(path)?,
            None => base,
        };
        if let Some(seed) = self.seed {
            c.train.seed = seed;
        }
        Ok(c)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn load_dataset(dir: &Path) -> Result<spgs::scene::Dataset> {
    spgs::io::load_dataset(dir, None).with_context(|| format!("loading dataset {}", dir.display()))
}

pub fn load_checkpoint(path: &Path) -> Result<spgs::model::SpgsModel> {
    spgs::io::load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// File-name-safe version of a frame name such as `./test/r_001`.
pub fn frame_stem(name: &str) -> String {
    let stem = Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name);
    stem.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    let g = &cli.global;
    match cli.command {
        Command::Train(a) => train::run(g, a),
        Command::Render(a) => render::run_render(g, a),
        Command::Bench(a) => render::run_bench(g, a),
        Command::Edit(a) => apps::run_edit(g, a),
        Command::Pose(a) => apps::run_pose(g, a),
        Command::Distill(a) => apps::run_distill(g, a),
        Command::GenToy(a) => tools::run_gen_toy(g, a),
        Command::Inspect(a) => tools::run_inspect(g, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
