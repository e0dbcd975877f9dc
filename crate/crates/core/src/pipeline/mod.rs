//! End-to-end orchestration: configuration, deterministic seeding, the body
//! and atlas library, dataset generation and the remaining commands.

mod commands;
mod generate;
mod library;
pub mod starter;
pub mod trend;

pub use commands::{
    eval_runs, fit_prior_cmd, reconstruct, sample_poses_cmd, train_da, EvalOutputs, Reconstruction, TrainDaConfig,
    TrainDaSummary,
};
pub use generate::{draw_pose, DatasetManifest, Generator, ManifestRecord, TOOL_NAME};
pub use library::{build_library, AtlasEntry, BodyEntry, BodyLibrary, LibraryIndex};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prior::PriorConfig;
use crate::render::{CameraNoise, LightingConfig, SkinToneConfig};
use crate::skeleton::{Pose3D, PoseRecord};
use crate::texture::AtlasConfig;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("asset error: {0}")]
    Asset(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit status for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Asset(_) => 3,
            PipelineError::Runtime(_) | PipelineError::Io(_) => 4,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for PipelineError {
            fn from(e: $t) -> Self {
                PipelineError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    crate::skeleton::SkeletonError,
    crate::prior::PriorError,
    crate::body::BodyError,
    crate::render::RenderError,
    crate::texture::TextureError,
    crate::adapt::AdaptError,
    crate::eval::EvalError,
    image::ImageError,
    serde_json::Error
);

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The `index`-th SplitMix64 output of a generator seeded with `master`.
/// Injective in `index` for a fixed master, so per-image seeds never collide.
pub fn image_seed(master: u64, index: u64) -> u64 {
    mix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Independent master seed for a named sub-stream (bodies, atlases, ...).
pub fn stream_seed(master: u64, stream: &str) -> u64 {
    // FNV-1a of the stream name.
    let tag = stream.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    mix64(master ^ tag)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory of pose files used to fit the prior.
    pub poses: PathBuf,
    /// Directory with `upper/` and `lower/` garment images and masks.
    pub cloth: PathBuf,
    /// Directory of `head*`, `skin*` and `shoe*` swatches.
    pub extremities: PathBuf,
    pub backgrounds: PathBuf,
    /// Run directory; not part of the manifest snapshot.
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
    /// Fitted prior; defaults to `<output>/prior.json`.
    #[serde(default)]
    pub prior: Option<PathBuf>,
    /// Body and atlas library; defaults to `<output>/library`.
    #[serde(default)]
    pub library: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountsConfig {
    pub bodies: usize,
    pub textures: usize,
    pub images: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Elevation of the unperturbed camera, degrees.
    pub base_elevation: f64,
    /// Range of the fraction of the frame the subject spans.
    pub fill: [f64; 2],
    pub camera_noise: CameraNoise,
    pub lighting: LightingConfig,
    pub skin_tone: SkinToneConfig,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            width: 128,
            height: 128,
            focal: 160.0,
            base_elevation: 5.0,
            fill: [0.6, 0.9],
            camera_noise: CameraNoise::default(),
            lighting: LightingConfig::default(),
            skin_tone: SkinToneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodyConfig {
    pub female_fraction: f64,
    pub fitness: [f64; 2],
    pub height: [f64; 2],
    pub atlas: AtlasConfig,
}

impl Default for BodyConfig {
    fn default() -> Self {
        BodyConfig { female_fraction: 0.5, fitness: [0.0, 1.0], height: [1.55, 1.95], atlas: AtlasConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSettings {
    pub bandwidth: Option<f64>,
    pub bandwidth_scale: f64,
    pub max_attempts: usize,
}

impl Default for PriorSettings {
    fn default() -> Self {
        let d = PriorConfig::default();
        PriorSettings { bandwidth: d.bandwidth, bandwidth_scale: d.bandwidth_scale, max_attempts: d.max_attempts }
    }
}

impl PriorSettings {
    pub fn to_config(self) -> PriorConfig {
        PriorConfig {
            bandwidth: self.bandwidth,
            bandwidth_scale: self.bandwidth_scale,
            max_attempts: self.max_attempts,
            ..PriorConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub counts: CountsConfig,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub bodies: BodyConfig,
    #[serde(default)]
    pub prior: PriorSettings,
    pub seed: u64,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn range_ok(r: [f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]
}

impl PipelineConfig {
    /// Parses and validates; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        let c = &self.counts;
        if c.bodies == 0 || c.textures == 0 || c.images == 0 {
            return bad("counts must be positive");
        }
        let r = &self.render;
        if r.width == 0 || r.height == 0 || !(r.focal > 0.0) || !r.base_elevation.is_finite() {
            return bad("render size and focal length must be positive");
        }
        if !range_ok(r.fill) || r.fill[0] <= 0.0 || r.fill[1] > 1.0 {
            return bad("fill range must lie in (0, 1]");
        }
        let n = r.camera_noise;
        if [n.elevation, n.azimuth, n.in_plane].iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("camera noise must be finite and non-negative");
        }
        let l = r.lighting;
        if !range_ok(l.ambient) || !range_ok(l.intensity) || l.ambient[0] < 0.0 || l.ambient[1] > 1.0 || l.intensity[0] < 0.0
        {
            return bad("invalid lighting ranges");
        }
        let b = &self.bodies;
        if !(0.0..=1.0).contains(&b.female_fraction) || !range_ok(b.fitness) || !range_ok(b.height) {
            return bad("invalid body ranges");
        }
        if self.prior.max_attempts == 0 || !(self.prior.bandwidth_scale >= 0.0) {
            return bad("invalid prior settings");
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> Result<PathBuf, PipelineError> {
        self.paths
            .output
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| PipelineError::Config("no output directory (set paths.output or pass --out)".into()))
    }

    pub fn prior_path(&self) -> Result<PathBuf, PipelineError> {
        match &self.paths.prior {
            Some(p) => Ok(self.resolve(p)),
            None => Ok(self.output_dir()?.join("prior.json")),
        }
    }

    pub fn library_dir(&self) -> Result<PathBuf, PipelineError> {
        match &self.paths.library {
            Some(p) => Ok(self.resolve(p)),
            None => Ok(self.output_dir()?.join("library")),
        }
    }

    /// Every configured input directory must exist.
    pub fn check_inputs(&self) -> Result<(), PipelineError> {
        let p = &self.paths;
        for (what, dir) in
            [("poses", &p.poses), ("cloth", &p.cloth), ("extremities", &p.extremities), ("backgrounds", &p.backgrounds)]
        {
            let d = self.resolve(dir);
            if !d.is_dir() {
                return Err(PipelineError::Asset(format!("{what} directory {} not found", d.display())));
            }
        }
        Ok(())
    }

    /// Starter-asset configuration rooted at `assets`.
    pub fn starter(assets: &Path, counts: CountsConfig, seed: u64) -> Self {
        PipelineConfig {
            paths: PathsConfig {
                poses: assets.join("poses"),
                cloth: assets.join("cloth"),
                extremities: assets.join("extremities"),
                backgrounds: assets.join("backgrounds"),
                output: None,
                prior: None,
                library: None,
            },
            counts,
            render: RenderConfig::default(),
            bodies: BodyConfig::default(),
            prior: PriorSettings::default(),
            seed,
            base_dir: PathBuf::new(),
        }
    }
}

/// Reads poses from a file holding one JSON record, a JSON array of
/// records, or one record per line.
pub fn read_pose_records(path: &Path) -> Result<Vec<Pose3D>, PipelineError> {
    let text = fs::read_to_string(path)?;
    let err = |e: String| PipelineError::Asset(format!("{}: {e}", path.display()));
    let trimmed = text.trim_start();
    let records: Vec<PoseRecord> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed).map_err(|e| err(e.to_string()))?
    } else {
        let mut out = Vec::new();
        let mut stream = serde_json::Deserializer::from_str(&text).into_iter::<PoseRecord>();
        for r in &mut stream {
            out.push(r.map_err(|e| err(e.to_string()))?);
        }
        out
    };
    records.iter().map(|r| Pose3D::from_record(r).map_err(|e| err(e.to_string()))).collect()
}

/// All `*.json` / `*.jsonl` pose files in `dir`, in file-name order.
pub fn read_pose_dir(dir: &Path) -> Result<Vec<Pose3D>, PipelineError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| PipelineError::Asset(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json" || e == "jsonl"))
        .collect();
    files.sort();
    let mut poses = Vec::new();
    for f in files {
        poses.extend(read_pose_records(&f)?);
    }
    if poses.is_empty() {
        return Err(PipelineError::Asset(format!("no poses in {}", dir.display())));
    }
    Ok(poses)
}

pub fn write_pose_records(path: &Path, poses: &[Pose3D]) -> Result<(), PipelineError> {
    let mut s = String::new();
    for p in poses {
        s.push_str(&serde_json::to_string(&p.to_record())?);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
