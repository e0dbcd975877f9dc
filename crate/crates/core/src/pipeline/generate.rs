use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, RgbImage};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{image_seed, write_atomic, BodyLibrary, PipelineConfig, PipelineError};
use crate::body::{skin_mesh, solve_ik, Region, TemplateMesh};
use crate::prior::{PriorError, PriorModel};
use crate::render::{
    composite, perturb_camera, perturb_skin_tone, rasterize, sample_lights, Annotation, CameraParams, RenderSample,
    SampleProvenance,
};
use crate::skeleton::Pose3D;
use crate::texture::TexelMap;

pub const TOOL_NAME: &str = "synthpose";

/// Images processed between two in-order flushes of the annotation file.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: usize,
    pub seed: u64,
    pub image: String,
    pub annotation: Annotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub tool: String,
    pub version: String,
    pub config: PipelineConfig,
    pub count: usize,
    pub records: Vec<ManifestRecord>,
}

/// Ancestral draw with rejection, also reporting the kernel chosen per part.
pub fn draw_pose<R: Rng + ?Sized>(model: &PriorModel, rng: &mut R) -> Result<(Pose3D, [usize; 5]), PriorError> {
    let mut violations = Vec::new();
    for _ in 0..model.max_attempts.max(1) {
        match model.draw(rng) {
            (Some(p), kernels) if model.limits.check(&p) => return Ok((p, kernels)),
            (Some(p), _) => violations = model.limits.violations(&p),
            (None, _) => violations = vec!["degenerate direction".to_string()],
        }
    }
    Err(PriorError::RejectionCapReached { attempts: model.max_attempts.max(1), violations })
}

/// Everything needed to produce sample `i` independently of every other.
#[derive(Debug, Clone)]
pub struct Generator {
    pub config: PipelineConfig,
    pub prior: PriorModel,
    pub bodies: Vec<TemplateMesh>,
    pub atlases: Vec<RgbImage>,
    /// Background file names and images, sorted by name.
    pub backgrounds: Vec<(String, RgbImage)>,
    texel_regions: Vec<Option<Region>>,
}

fn load_backgrounds(dir: &Path) -> Result<Vec<(String, RgbImage)>, PipelineError> {
    let asset = |m: String| PipelineError::Asset(format!("backgrounds {}: {m}", dir.display()));
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| asset(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(asset("no PNG images".into()));
    }
    files
        .iter()
        .map(|p| {
            let img = image::open(p).map_err(|e| asset(format!("{}: {e}", p.display())))?.to_rgb8();
            Ok((p.file_name().expect("file").to_string_lossy().into_owned(), img))
        })
        .collect()
}

impl Generator {
    pub fn new(
        config: PipelineConfig,
        prior: PriorModel,
        bodies: Vec<TemplateMesh>,
        atlases: Vec<RgbImage>,
        backgrounds: Vec<(String, RgbImage)>,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        if bodies.is_empty() || atlases.is_empty() || backgrounds.is_empty() {
            return Err(PipelineError::Asset("bodies, atlases and backgrounds must be non-empty".into()));
        }
        let (w, h) = (config.render.width, config.render.height);
        if let Some((name, _)) = backgrounds.iter().find(|(_, b)| b.width() < w || b.height() < h) {
            return Err(PipelineError::Asset(format!("background {name} is smaller than the {w}x{h} frame")));
        }
        let texel_regions = TexelMap::new(&bodies[0].topology).regions;
        Ok(Generator { config, prior, bodies, atlases, backgrounds, texel_regions })
    }

    /// Loads the prior, library and backgrounds named by `config`. Every
    /// asset is checked here, before anything is written.
    pub fn load(config: PipelineConfig) -> Result<Self, PipelineError> {
        let bg_dir = config.resolve(&config.paths.backgrounds);
        if !bg_dir.is_dir() {
            return Err(PipelineError::Asset(format!("backgrounds directory {} not found", bg_dir.display())));
        }
        let prior_path = config.prior_path()?;
        let text = fs::read_to_string(&prior_path)
            .map_err(|e| PipelineError::Asset(format!("prior {}: {e}", prior_path.display())))?;
        let prior = PriorModel::from_json(&text).map_err(|e| PipelineError::Asset(format!("prior: {e}")))?;
        let library = BodyLibrary::load(&config.library_dir()?)?;
        let backgrounds = load_backgrounds(&bg_dir)?;
        let atlases = library.atlases.into_iter().map(|a| a.image).collect();
        Generator::new(config, prior, library.bodies, atlases, backgrounds)
    }

    pub fn image_name(index: usize) -> String {
        format!("images/{index:07}.png")
    }

    /// Renders sample `index` from its own seed.
    pub fn sample(&self, index: usize) -> Result<(RenderSample, u64), PipelineError> {
        let seed = image_seed(self.config.seed, index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = &self.config.render;

        let (pose, kernels) = draw_pose(&self.prior, &mut rng)?;
        let body = rng.random_range(0..self.bodies.len());
        let atlas = rng.random_range(0..self.atlases.len());
        let background = rng.random_range(0..self.backgrounds.len());

        let template = &self.bodies[body];
        let mesh = skin_mesh(template, &solve_ik(template, &pose)?);
        let texture = perturb_skin_tone(&self.atlases[atlas], &self.texel_regions, &r.skin_tone, &mut rng);

        let mut base = CameraParams::frontal(r.width, r.height, r.focal, 1.0, Vector3::zeros());
        base.elevation_deg = r.base_elevation;
        let fill = if r.fill[1] > r.fill[0] { rng.random_range(r.fill[0]..=r.fill[1]) } else { r.fill[0] };
        let mut extent = mesh.vertices.clone();
        extent.extend_from_slice(&mesh.joints.joints);
        let camera = perturb_camera(&base, &r.camera_noise, &mut rng).fitted(&extent, fill)?;
        let lights = sample_lights(&r.lighting, &mut rng);

        let render = rasterize(&mesh, &texture, &camera, &lights)?;
        let (name, bg) = &self.backgrounds[background];
        let (image, _) = composite(&render.rgba, bg, &mut rng)?;
        let alpha = GrayImage::from_fn(r.width, r.height, |x, y| Luma([render.rgba.get_pixel(x, y)[3]]));

        let provenance = SampleProvenance {
            pose: format!("prior:{}", kernels.map(|k| k.to_string()).join("-")),
            body,
            atlas,
            background: name.clone(),
            seed,
        };
        let camera_pose = camera.pose_to_camera(&mesh.joints);
        let annotation = Annotation::new(Self::image_name(index), &camera_pose, &camera, provenance)?;
        Ok((RenderSample { image, alpha, camera, annotation }, seed))
    }

    fn record(&self, out: &Path, index: usize) -> Result<ManifestRecord, PipelineError> {
        let (sample, seed) = self.sample(index)?;
        let path = out.join(&sample.annotation.image);
        sample.image.save(&path).map_err(|e| PipelineError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(ManifestRecord { index, seed, image: sample.annotation.image.clone(), annotation: sample.annotation })
    }

    /// Writes `images/`, `annotations.jsonl` and finally `manifest.json`.
    ///
    /// Samples are rendered on a pool of `jobs` threads; annotations are
    /// appended in index order, so outputs do not depend on scheduling.
    pub fn generate(&self, out: &Path, jobs: usize) -> Result<DatasetManifest, PipelineError> {
        let manifest_path = out.join("manifest.json");
        // A stale manifest must never describe a partial rerun.
        if manifest_path.exists() {
            fs::remove_file(&manifest_path)?;
        }
        fs::create_dir_all(out.join("images"))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| PipelineError::Runtime(e.to_string()))?;
        let n = self.config.counts.images;
        let mut annotations = BufWriter::new(fs::File::create(out.join("annotations.jsonl"))?);
        let mut records = Vec::with_capacity(n);
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let chunk: Vec<ManifestRecord> =
                pool.install(|| (start..end).into_par_iter().map(|i| self.record(out, i)).collect::<Result<_, _>>())?;
            for rec in chunk {
                serde_json::to_writer(&mut annotations, &rec.annotation)?;
                annotations.write_all(b"\n")?;
                records.push(rec);
            }
            log::info!("generated {end}/{n}");
        }
        annotations.flush()?;
        let mut config = self.config.clone();
        config.paths.output = None;
        let manifest =
            DatasetManifest { tool: TOOL_NAME.into(), version: env!("CARGO_PKG_VERSION").into(), config, count: n, records };
        write_atomic(&manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(manifest)
    }
}
