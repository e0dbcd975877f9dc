use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use synthpose::body::{read_template, Gender, TemplateMesh};
use synthpose::eval::default_thresholds;
use synthpose::pipeline::{
    build_library, eval_runs,
    starter::{write_starter_assets, StarterCounts},
    CountsConfig, fit_prior_cmd, reconstruct, sample_poses_cmd, train_da, Generator, PipelineConfig,
    PipelineError, TrainDaConfig,
};
use synthpose::render::Annotation;

/// Synthetic training data for 3D human pose estimation.
#[derive(Debug, Parser)]
#[command(name = "synthpose", version)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GenderArg {
    Female,
    Male,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write procedural starter assets and a config that uses them.
    Init {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Fit the pose prior on the configured pose directory.
    FitPrior {
        #[command(flatten)]
        common: Common,
    },
    /// Draw poses from a fitted prior into a JSON-lines pose file.
    SamplePoses {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output pose file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the body and texture-atlas library.
    BuildBodies {
        #[command(flatten)]
        common: Common,
        /// Overrides the number of bodies.
        #[arg(long)]
        count: Option<usize>,
        /// Overrides the number of atlases.
        #[arg(long)]
        textures: Option<usize>,
    },
    /// Render an annotated dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides the number of images.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Run two-stage domain adaptation on the toy problem.
    TrainDa {
        /// Training configuration (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score prediction files against ground truth.
    Eval {
        /// Ground-truth annotations (JSON lines).
        #[arg(long)]
        gt: PathBuf,
        /// Predictions as `name=path`, or a bare path named after its stem.
        #[arg(long = "pred", required = true)]
        preds: Vec<String>,
        /// Comma-separated thresholds in normalized units.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the template to a predicted pose and overlay it on the image.
    Reconstruct {
        #[arg(long)]
        image: PathBuf,
        /// Annotation-format pose file (JSON lines).
        #[arg(long)]
        pose: PathBuf,
        /// Record to use: index into the pose file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Template OBJ (with rig sidecar); the built-in template otherwise.
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = GenderArg::Male)]
        gender: GenderArg,
        #[arg(long, default_value_t = 0.6)]
        alpha: f64,
        /// Output overlay PNG.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        // Command-line paths are relative to the working directory.
        cfg.paths.output = Some(std::path::absolute(out)?);
    }
    Ok(cfg)
}

fn read_annotation(path: &Path, index: usize) -> Result<Annotation, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Asset(format!("{}: {e}", path.display())))?;
    let line = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .nth(index)
        .ok_or_else(|| PipelineError::Runtime(format!("{} has no record {index}", path.display())))?;
    serde_json::from_str(line).map_err(|e| PipelineError::Runtime(format!("{}: invalid pose record: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Init { out, seed } => {
            write_starter_assets(&out.join("assets"), &StarterCounts::default(), seed)?;
            let counts = CountsConfig { bodies: 8, textures: 16, images: 200 };
            let cfg = PipelineConfig::starter(Path::new("assets"), counts, seed);
            fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg).map_err(PipelineError::from)?)?;
            println!("starter assets and config.json written to {}", out.display());
        }
        Command::FitPrior { common } => {
            let cfg = load_config(&common)?;
            cfg.check_inputs()?;
            let (model, path) = fit_prior_cmd(&cfg)?;
            println!("prior with {} kernel centers written to {}", model.centers.len(), path.display());
        }
        Command::SamplePoses { model, count, seed, out } => {
            let poses = sample_poses_cmd(&model, count, seed, &out)?;
            println!("{} poses written to {}", poses.len(), out.display());
        }
        Command::BuildBodies { common, count, textures } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = count {
                cfg.counts.bodies = n;
            }
            if let Some(n) = textures {
                cfg.counts.textures = n;
            }
            cfg.validate()?;
            let dir = cfg.library_dir()?;
            let library = build_library(&cfg)?;
            library.save(&dir)?;
            println!("{} bodies and {} atlases written to {}", library.bodies.len(), library.atlases.len(), dir.display());
        }
        Command::Generate { common, jobs, count } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = count {
                cfg.counts.images = n;
            }
            cfg.validate()?;
            let out = cfg.output_dir()?;
            let generator = Generator::load(cfg)?;
            let manifest = generator.generate(&out, jobs)?;
            println!("{} images written to {}", manifest.count, out.display());
        }
        Command::TrainDa { config, seed, out } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
                    serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?
                }
                None => TrainDaConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let s = train_da(&cfg, &out)?;
            println!(
                "probe accuracy {:.3} -> {:.3}; held-out error {:.4} (baseline {:.4})",
                s.probe_before, s.probe_after, s.adapted_error, s.baseline_error
            );
        }
        Command::Eval { gt, preds, thresholds, out } => {
            let named: Vec<(String, PathBuf)> = preds
                .iter()
                .map(|p| match p.split_once('=') {
                    Some((name, path)) => (name.to_string(), PathBuf::from(path)),
                    None => {
                        let path = PathBuf::from(p);
                        let name = path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
                        (name, path)
                    }
                })
                .collect();
            let thresholds = thresholds.unwrap_or_else(default_thresholds);
            let result = eval_runs(&gt, &named, &thresholds, &out)?;
            for r in &result.reports {
                println!("{}: n={} mean joint error {:.4} mean detected {:.4}", r.name, r.count, r.mean_joint_error, r.mean_fraction());
            }
        }
        Command::Reconstruct { image, pose, index, template, gender, alpha, out } => {
            let img = image::open(&image)
                .map_err(|e| PipelineError::Asset(format!("{}: {e}", image.display())))?
                .to_rgb8();
            let annotation = read_annotation(&pose, index)?;
            let template = match template {
                Some(p) => read_template(&p).map_err(|e| PipelineError::Asset(format!("{}: {e}", p.display())))?,
                None => TemplateMesh::builtin(match gender {
                    GenderArg::Female => Gender::Female,
                    GenderArg::Male => Gender::Male,
                }),
            };
            let rec = reconstruct(&img, &annotation, &template, alpha)?;
            rec.overlay.save(&out)?;
            println!("overlay written to {} (max joint reprojection {:.3} px)", out.display(), rec.max_reprojection_px());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
