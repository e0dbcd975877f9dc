use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{image_seed, stream_seed, write_atomic, PipelineConfig, PipelineError};
use crate::body::{apply_shape, read_template, write_template, Gender, ShapeParams, TemplateMesh};
use crate::texture::{
    AtlasProvenance, ClothCategory, ExtremityAssets, SegmentedClothImage, TextureAtlas, TextureBuilder,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyEntry {
    pub id: usize,
    pub shape: ShapeParams,
    /// OBJ file relative to the library directory.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasEntry {
    pub id: usize,
    /// Template the garments were fitted on. Both templates share one UV
    /// layout, so any atlas dresses any body.
    pub fitted_on: Gender,
    pub file: String,
    pub provenance: AtlasProvenance,
}

/// `library.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryIndex {
    pub bodies: Vec<BodyEntry>,
    pub atlases: Vec<AtlasEntry>,
}

#[derive(Debug, Clone)]
pub struct BodyLibrary {
    pub index: LibraryIndex,
    pub bodies: Vec<TemplateMesh>,
    pub atlases: Vec<TextureAtlas>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn load_garments(cfg: &PipelineConfig, category: ClothCategory) -> Result<Vec<SegmentedClothImage>, PipelineError> {
    let dir = cfg.resolve(&cfg.paths.cloth).join(category.dir_name());
    let garments = SegmentedClothImage::load_dir(&dir, category)
        .map_err(|e| PipelineError::Asset(format!("{}: {e}", dir.display())))?;
    if garments.is_empty() {
        return Err(PipelineError::Asset(format!("no garments in {}", dir.display())));
    }
    Ok(garments)
}

/// Shaped bodies and dressed atlases, each drawn from its own seed stream.
pub fn build_library(cfg: &PipelineConfig) -> Result<BodyLibrary, PipelineError> {
    cfg.check_inputs()?;
    let upper = load_garments(cfg, ClothCategory::Upper)?;
    let lower = load_garments(cfg, ClothCategory::Lower)?;
    let ext_dir = cfg.resolve(&cfg.paths.extremities);
    let assets =
        ExtremityAssets::load_dir(&ext_dir).map_err(|e| PipelineError::Asset(format!("{}: {e}", ext_dir.display())))?;

    let body_seed = stream_seed(cfg.seed, "bodies");
    let mut entries = Vec::new();
    let mut bodies = Vec::new();
    for i in 0..cfg.counts.bodies {
        let mut rng = ChaCha8Rng::seed_from_u64(image_seed(body_seed, i as u64));
        let b = &cfg.bodies;
        let gender = if rng.random::<f64>() < b.female_fraction { Gender::Female } else { Gender::Male };
        let shape = ShapeParams { gender, fitness: uniform(&mut rng, b.fitness), height: uniform(&mut rng, b.height) }.clamped();
        bodies.push(apply_shape(&TemplateMesh::builtin(gender), shape));
        entries.push(BodyEntry { id: i, shape, file: format!("bodies/body_{i:04}.obj") });
    }

    let builders = [Gender::Female, Gender::Male]
        .par_iter()
        .map(|&g| TextureBuilder::new(&TemplateMesh::builtin(g)))
        .collect::<Result<Vec<_>, _>>()?;
    let atlas_seed = stream_seed(cfg.seed, "atlases");
    let atlases = (0..cfg.counts.textures)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(image_seed(atlas_seed, j as u64));
            let builder = &builders[j % 2];
            let up = &upper[rng.random_range(0..upper.len())];
            let low = &lower[rng.random_range(0..lower.len())];
            builder.build(up, low, &assets, &cfg.bodies.atlas, &mut rng).map_err(PipelineError::from)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let atlas_entries = atlases
        .iter()
        .enumerate()
        .map(|(j, a)| AtlasEntry {
            id: j,
            fitted_on: builders[j % 2].template.gender,
            file: format!("atlases/atlas_{j:04}.png"),
            provenance: a.provenance.clone(),
        })
        .collect();
    Ok(BodyLibrary { index: LibraryIndex { bodies: entries, atlases: atlas_entries }, bodies, atlases })
}

impl BodyLibrary {
    /// Writes meshes and atlases, then `library.json` last.
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir.join("bodies"))?;
        fs::create_dir_all(dir.join("atlases"))?;
        for (e, t) in self.index.bodies.iter().zip(&self.bodies) {
            write_template(t, &dir.join(&e.file))?;
        }
        for (e, a) in self.index.atlases.iter().zip(&self.atlases) {
            a.save(&dir.join(&e.file))?;
        }
        write_atomic(&dir.join("library.json"), serde_json::to_string_pretty(&self.index)?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let asset = |e: String| PipelineError::Asset(format!("library {}: {e}", dir.display()));
        let text = fs::read_to_string(dir.join("library.json")).map_err(|e| asset(e.to_string()))?;
        let index: LibraryIndex = serde_json::from_str(&text).map_err(|e| asset(e.to_string()))?;
        if index.bodies.is_empty() || index.atlases.is_empty() {
            return Err(asset("empty library".into()));
        }
        let bodies = index
            .bodies
            .iter()
            .map(|e| read_template(&dir.join(&e.file)).map_err(|err| asset(format!("{}: {err}", e.file))))
            .collect::<Result<Vec<_>, _>>()?;
        let atlases = index
            .atlases
            .iter()
            .map(|e| TextureAtlas::load(&dir.join(&e.file)).map_err(|err| asset(format!("{}: {err}", e.file))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BodyLibrary { index, bodies, atlases })
    }
}
