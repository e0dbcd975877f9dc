//! Garment texture transfer: contour matching between garment photos and
//! projected body parts, moving-least-squares warping, atlas baking with
//! mirroring, and head/hand/foot texturing.

mod bake;
mod cdtw;
mod contour;
mod mls;

pub use bake::{
    bake_texture, compose_cloth, garment_texels, inpaint_step, mirror_fill, PartTexture, TexelMap, TorsoSeam, FACING_TOLERANCE,
    SAMPLE_RADIUS,
};
pub use cdtw::{
    cdtw_match, deformation_energy, fit_similarity_2d, select_candidate, Correspondence, CYCLIC_OFFSETS, RIGID_OFFSETS,
};
pub use contour::{
    extract_contour, extract_contour_n, project_part_contour, resample_closed, signed_area, Contour, Mask, AREA_FLOOR,
    CONTOUR_POINTS,
};
pub use mls::{mls_map, mls_warp, validate_controls, Control, WarpField, ALPHA, GRID_SPACING};

use std::fs;
use std::path::{Path, PathBuf};

use image::{imageops, GrayImage, Rgb, RgbImage, Rgba, RgbaImage};
use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::{
    skin_mesh, split_parts, ArticulatedMesh, BoneRotations, Region, SegmentKind, SubMesh, TemplateMesh, ATLAS_SIZE,
};
use crate::render::{CameraParams, RenderError};

#[derive(Debug, Error)]
pub enum TextureError {
    #[error("mask has no foreground")]
    EmptyMask,
    #[error("largest mask component has only {0} pixels")]
    ComponentTooSmall(usize),
    #[error("mask has {0} large components, expected one")]
    MultipleComponents(usize),
    #[error("moving least squares needs at least 3 controls, got {0}")]
    TooFewControls(usize),
    #[error("control points are collinear")]
    CollinearControls,
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{unfilled} of {total} garment texels left unfilled after mirroring")]
    Coverage { unfilled: usize, total: usize },
    #[error("no {0} assets available")]
    MissingAssets(&'static str),
    #[error("template has no {0} segment")]
    MissingSegment(&'static str),
    #[error("garment `{id}` is {found:?}, expected {expected:?}")]
    WrongCategory { id: String, found: ClothCategory, expected: ClothCategory },
    #[error("image and mask sizes differ")]
    SizeMismatch,
    #[error("image {path}: {msg}")]
    Image { path: PathBuf, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed atlas metadata: {0}")]
    Metadata(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClothCategory {
    Upper,
    Lower,
}

impl ClothCategory {
    pub fn region(self) -> Region {
        match self {
            ClothCategory::Upper => Region::UpperCloth,
            ClothCategory::Lower => Region::LowerCloth,
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            ClothCategory::Upper => "upper",
            ClothCategory::Lower => "lower",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedClothImage {
    pub id: String,
    pub image: RgbImage,
    pub mask: Mask,
    pub category: ClothCategory,
}

pub(crate) fn read_rgb(path: &Path) -> Result<RgbImage, TextureError> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|e| TextureError::Image { path: path.to_path_buf(), msg: e.to_string() })
}

fn read_gray(path: &Path) -> Result<GrayImage, TextureError> {
    image::open(path)
        .map(|i| i.to_luma8())
        .map_err(|e| TextureError::Image { path: path.to_path_buf(), msg: e.to_string() })
}

impl SegmentedClothImage {
    pub fn new(id: String, image: RgbImage, mask: Mask, category: ClothCategory) -> Result<Self, TextureError> {
        if image.dimensions() != (mask.width, mask.height) {
            return Err(TextureError::SizeMismatch);
        }
        mask.validate()?;
        Ok(SegmentedClothImage { id, image, mask, category })
    }

    pub fn load(image: &Path, mask: &Path, category: ClothCategory) -> Result<Self, TextureError> {
        let id = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let img = read_rgb(image)?;
        let m = Mask::from_gray(&read_gray(mask)?);
        Self::new(id, img, m, category)
    }

    /// All `<name>.png` + `<name>_mask.png` pairs in `dir`, sorted by name.
    pub fn load_dir(dir: &Path, category: ClothCategory) -> Result<Vec<Self>, TextureError> {
        let mut names: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|e| e == "png")
                    && !p.file_stem().is_some_and(|s| s.to_string_lossy().ends_with("_mask"))
            })
            .collect();
        names.sort();
        names
            .iter()
            .map(|p| {
                let stem = p.file_stem().expect("png file").to_string_lossy();
                Self::load(p, &p.with_file_name(format!("{stem}_mask.png")), category)
            })
            .collect()
    }

    /// Image with the mask as alpha.
    pub fn rgba(&self) -> RgbaImage {
        RgbaImage::from_fn(self.image.width(), self.image.height(), |x, y| {
            let p = self.image.get_pixel(x, y);
            let a = if self.mask.data[(y * self.mask.width + x) as usize] { 255 } else { 0 };
            Rgba([p[0], p[1], p[2], a])
        })
    }
}

/// Head, skin and shoe textures.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtremityAssets {
    pub heads: Vec<RgbImage>,
    pub skins: Vec<RgbImage>,
    pub shoes: Vec<RgbImage>,
}

impl ExtremityAssets {
    /// Loads `head*.png`, `skin*.png` and `shoe*.png` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TextureError> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .collect();
        paths.sort();
        let mut out = ExtremityAssets::default();
        for p in paths {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let target = if name.starts_with("head") {
                &mut out.heads
            } else if name.starts_with("skin") {
                &mut out.skins
            } else if name.starts_with("shoe") {
                &mut out.shoes
            } else {
                continue;
            };
            target.push(read_rgb(&p)?);
        }
        out.check()?;
        Ok(out)
    }

    pub fn check(&self) -> Result<(), TextureError> {
        if self.heads.is_empty() {
            return Err(TextureError::MissingAssets("head"));
        }
        if self.skins.is_empty() {
            return Err(TextureError::MissingAssets("skin"));
        }
        if self.shoes.is_empty() {
            return Err(TextureError::MissingAssets("shoe"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarmentProvenance {
    pub source_id: String,
    pub candidate: usize,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremityProvenance {
    pub head: usize,
    pub skin: usize,
    pub shoes: usize,
    pub tint: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasProvenance {
    pub upper: GarmentProvenance,
    pub lower: GarmentProvenance,
    pub extremities: ExtremityProvenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureAtlas {
    pub image: RgbImage,
    pub filled: Vec<bool>,
    pub provenance: AtlasProvenance,
}

#[derive(Serialize, Deserialize)]
struct AtlasMeta {
    provenance: AtlasProvenance,
    filled: String,
}

impl TextureAtlas {
    /// Writes `<path>` (PNG) and `<path>.json` (provenance, fill mask).
    pub fn save(&self, path: &Path) -> Result<(), TextureError> {
        self.image.save(path).map_err(|e| TextureError::Image { path: path.to_path_buf(), msg: e.to_string() })?;
        let filled: String = self.filled.iter().map(|&b| if b { '1' } else { '0' }).collect();
        let meta = AtlasMeta { provenance: self.provenance.clone(), filled };
        let json = serde_json::to_string(&meta).map_err(|e| TextureError::Metadata(e.to_string()))?;
        fs::write(path.with_extension("json"), json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TextureError> {
        let image = read_rgb(path)?;
        let json = fs::read_to_string(path.with_extension("json"))?;
        let meta: AtlasMeta = serde_json::from_str(&json).map_err(|e| TextureError::Metadata(e.to_string()))?;
        let filled: Vec<bool> = meta.filled.chars().map(|c| c == '1').collect();
        if filled.len() != (image.width() * image.height()) as usize {
            return Err(TextureError::Metadata("fill mask size".into()));
        }
        Ok(TextureAtlas { image, filled, provenance: meta.provenance })
    }
}

/// Fills head, hand and foot rectangles from randomly chosen assets,
/// offset by one uniform per-channel tint in `[-tint, tint]` of full scale.
pub fn texture_extremities<R: Rng + ?Sized>(
    image: &mut RgbImage,
    filled: &mut [bool],
    template: &TemplateMesh,
    assets: &ExtremityAssets,
    tint: f64,
    rng: &mut R,
) -> Result<ExtremityProvenance, TextureError> {
    assets.check()?;
    let head = rng.random_range(0..assets.heads.len());
    let skin = rng.random_range(0..assets.skins.len());
    let shoes = rng.random_range(0..assets.shoes.len());
    let offset: [f64; 3] = std::array::from_fn(|_| if tint > 0.0 { rng.random_range(-tint..=tint) } else { 0.0 });
    let size = image.width();
    for seg in &template.topology.segments {
        let src = match seg.kind {
            SegmentKind::Head => &assets.heads[head],
            SegmentKind::Hand => &assets.skins[skin],
            SegmentKind::Foot => &assets.shoes[shoes],
            _ => continue,
        };
        let [x0, y0, w, h] = seg.rect;
        let resized;
        let tex = if src.dimensions() == (w, h) {
            src
        } else {
            resized = imageops::resize(src, w, h, imageops::FilterType::Nearest);
            &resized
        };
        for (x, y, p) in tex.enumerate_pixels() {
            let c = Rgb(std::array::from_fn(|k| (p[k] as f64 + offset[k] * 255.0).round().clamp(0.0, 255.0) as u8));
            image.put_pixel(x0 + x, y0 + y, c);
            filled[((y0 + y) * size + x0 + x) as usize] = true;
        }
    }
    Ok(ExtremityProvenance { head, skin, shoes, tint: offset })
}

/// Standard candidate poses for projecting a garment category.
pub fn candidate_rotations(category: ClothCategory) -> Vec<BoneRotations> {
    let z = Vector3::z_axis();
    let mut out = Vec::new();
    match category {
        ClothCategory::Upper => {
            for deg in [25.0f64, 45.0, 65.0] {
                let a = deg.to_radians();
                let mut r = BoneRotations::identity();
                r.0[3] = UnitQuaternion::from_axis_angle(&z, -a);
                r.0[6] = UnitQuaternion::from_axis_angle(&z, a);
                out.push(r);
            }
        }
        ClothCategory::Lower => {
            for deg in [4.0f64, 12.0] {
                let a = deg.to_radians();
                let mut r = BoneRotations::identity();
                r.0[9] = UnitQuaternion::from_axis_angle(&z, a);
                r.0[12] = UnitQuaternion::from_axis_angle(&z, -a);
                out.push(r);
            }
        }
    }
    out
}

/// A posed candidate seen by its frontal camera.
#[derive(Debug, Clone)]
pub struct CandidateView {
    pub mesh: ArticulatedMesh,
    pub camera: CameraParams,
    pub contour: Contour,
}

pub const CANDIDATE_IMAGE: u32 = 256;

pub fn prepare_candidates(
    template: &TemplateMesh,
    part: &SubMesh,
    category: ClothCategory,
) -> Result<Vec<CandidateView>, TextureError> {
    candidate_rotations(category)
        .iter()
        .map(|rot| {
            let mesh = skin_mesh(template, rot);
            let camera = CameraParams::frontal(CANDIDATE_IMAGE, CANDIDATE_IMAGE, 300.0, 3.0, Vector3::zeros())
                .fitted(&mesh.vertices, 0.85)?;
            let contour = project_part_contour(&mesh, part, &camera)?;
            Ok(CandidateView { mesh, camera, contour })
        })
        .collect()
}

/// Controls are taken at every `CONTROL_STRIDE`-th correspondence.
pub const CONTROL_STRIDE: usize = 5;

/// Per-template state reused for every garment.
#[derive(Debug, Clone)]
pub struct TextureBuilder {
    pub template: TemplateMesh,
    pub map: TexelMap,
    pub seam: TorsoSeam,
    upper: (Vec<CandidateView>, Vec<bool>),
    lower: (Vec<CandidateView>, Vec<bool>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtlasConfig {
    /// Seam jitter half-width as a fraction of body height.
    pub seam_jitter: f64,
    /// Extremity tint half-width as a fraction of full scale.
    pub tint: f64,
}

impl Default for AtlasConfig {
    fn default() -> Self {
        AtlasConfig { seam_jitter: 0.02, tint: 0.08 }
    }
}

impl TextureBuilder {
    pub fn new(template: &TemplateMesh) -> Result<Self, TextureError> {
        let map = TexelMap::new(&template.topology);
        let seam = TorsoSeam::of(template)?;
        let (up, low) = split_parts(template);
        let wanted = |c: ClothCategory| garment_texels(&map, &template.topology, &seam, c.region());
        Ok(TextureBuilder {
            upper: (prepare_candidates(template, &up, ClothCategory::Upper)?, wanted(ClothCategory::Upper)),
            lower: (prepare_candidates(template, &low, ClothCategory::Lower)?, wanted(ClothCategory::Lower)),
            template: template.clone(),
            map,
            seam,
        })
    }

    pub fn candidates(&self, category: ClothCategory) -> &[CandidateView] {
        match category {
            ClothCategory::Upper => &self.upper.0,
            ClothCategory::Lower => &self.lower.0,
        }
    }

    /// Matches, warps and bakes one garment.
    pub fn transfer(&self, cloth: &SegmentedClothImage) -> Result<(PartTexture, GarmentProvenance), TextureError> {
        let (cands, wanted) = match cloth.category {
            ClothCategory::Upper => &self.upper,
            ClothCategory::Lower => &self.lower,
        };
        let contour = extract_contour(&cloth.mask)?;
        let contours: Vec<Contour> = cands.iter().map(|c| c.contour.clone()).collect();
        let (best, corr, energy) = select_candidate(&contour, &contours).ok_or(TextureError::MissingSegment("candidate"))?;
        let view = &cands[best];
        // Contours use pixel-center coordinates; the warp uses pixel indices.
        let half = Vector2::new(0.5, 0.5);
        let controls: Vec<Control> = (0..contour.len())
            .step_by(CONTROL_STRIDE)
            .map(|i| (contour.points[i] - half, view.contour.point_at(corr.u[i]) - half))
            .collect();
        let warped = mls_warp(&cloth.rgba(), &controls, (view.camera.width, view.camera.height))?;
        let part = bake_texture(&warped, &view.mesh, &view.camera, &self.map, wanted)?;
        Ok((part, GarmentProvenance { source_id: cloth.id.clone(), candidate: best, energy }))
    }

    /// Full atlas from one upper and one lower garment.
    pub fn build<R: Rng + ?Sized>(
        &self,
        upper: &SegmentedClothImage,
        lower: &SegmentedClothImage,
        assets: &ExtremityAssets,
        cfg: &AtlasConfig,
        rng: &mut R,
    ) -> Result<TextureAtlas, TextureError> {
        for (c, expected) in [(upper, ClothCategory::Upper), (lower, ClothCategory::Lower)] {
            if c.category != expected {
                return Err(TextureError::WrongCategory { id: c.id.clone(), found: c.category, expected });
            }
        }
        let (up, up_prov) = self.transfer(upper)?;
        let (low, low_prov) = self.transfer(lower)?;
        let amplitude = cfg.seam_jitter * self.template.height();
        let topo = &self.template.topology;
        let (mut image, mut filled) = compose_cloth(&up, &low, &self.map, topo, &self.seam, amplitude, rng)?;
        let extremities = texture_extremities(&mut image, &mut filled, &self.template, assets, cfg.tint, rng)?;
        Ok(TextureAtlas { image, filled, provenance: AtlasProvenance { upper: up_prov, lower: low_prov, extremities } })
    }
}

/// Atlas image edge length.
pub fn atlas_size() -> u32 {
    ATLAS_SIZE
}
