//! Software rendering of posed, textured bodies and background compositing.

mod camera;
mod raster;
mod sample;

pub use camera::{perturb_camera, project_joints, CameraNoise, CameraParams, MAX_ELEVATION, MIN_ELEVATION};
pub(crate) use raster::{for_each_fragment, ScreenVertex};
pub use sample::{Annotation, CameraRecord, RenderSample, SampleProvenance};
pub use raster::{rasterize, render_overlay, silhouette, Light, LightRig, RenderOutput, MAX_LIGHTS, NEAR_PLANE};

use image::{imageops, Rgb, RgbImage, RgbaImage};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::Region;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    BadCamera(String),
    #[error("invalid light rig")]
    BadLights,
    #[error("point at depth {0} is not in front of the camera")]
    BehindCamera(f64),
    #[error("nothing projects into the image")]
    EmptyExtent,
    #[error("image sizes do not match")]
    SizeMismatch,
    #[error("background {bg_w}x{bg_h} is smaller than the {need_w}x{need_h} frame")]
    BackgroundTooSmall { bg_w: u32, bg_h: u32, need_w: u32, need_h: u32 },
}

/// Ranges for the lighting draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightingConfig {
    pub ambient: [f64; 2],
    pub intensity: [f64; 2],
    pub max_lights: usize,
}

impl Default for LightingConfig {
    fn default() -> Self {
        LightingConfig { ambient: [0.2, 0.5], intensity: [0.3, 0.8], max_lights: MAX_LIGHTS }
    }
}

/// Random rig of 1..=`max_lights` lights from the camera-facing hemisphere.
pub fn sample_lights<R: Rng + ?Sized>(cfg: &LightingConfig, rng: &mut R) -> LightRig {
    let uniform = |r: &mut R, lo: f64, hi: f64| if hi > lo { r.random_range(lo..hi) } else { lo };
    let ambient = uniform(rng, cfg.ambient[0], cfg.ambient[1]);
    let count = rng.random_range(1..=cfg.max_lights.clamp(1, MAX_LIGHTS));
    let lights = (0..count)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let cos_el: f64 = rng.random_range(0.2..1.0);
            let s = (1.0 - cos_el * cos_el).sqrt();
            let direction = [s * theta.cos(), s * theta.sin(), -cos_el];
            Light { direction, intensity: uniform(rng, cfg.intensity[0], cfg.intensity[1]) / count as f64 }
        })
        .collect();
    LightRig { ambient, lights }
}

/// Half-widths of the uniform skin-tone offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkinToneConfig {
    pub hue_deg: f64,
    pub saturation: f64,
    pub value: f64,
}

impl Default for SkinToneConfig {
    fn default() -> Self {
        SkinToneConfig { hue_deg: 8.0, saturation: 0.15, value: 0.3 }
    }
}

fn rgb_to_hsv(c: [f64; 3]) -> [f64; 3] {
    let max = c[0].max(c[1]).max(c[2]);
    let min = c[0].min(c[1]).min(c[2]);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == c[0] {
        60.0 * ((c[1] - c[2]) / d).rem_euclid(6.0)
    } else if max == c[1] {
        60.0 * ((c[2] - c[0]) / d + 2.0)
    } else {
        60.0 * ((c[0] - c[1]) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb(hsv: [f64; 3]) -> [f64; 3] {
    let [h, s, v] = hsv;
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Shifts hue, saturation and value of texels labelled as skin by one
/// random offset per call. Other texels are untouched.
pub fn perturb_skin_tone<R: Rng + ?Sized>(
    atlas: &RgbImage,
    regions: &[Option<Region>],
    cfg: &SkinToneConfig,
    rng: &mut R,
) -> RgbImage {
    let mut sym = |a: f64| if a > 0.0 { rng.random_range(-a..a) } else { 0.0 };
    let dh = sym(cfg.hue_deg);
    let ds = sym(cfg.saturation);
    let dv = sym(cfg.value);
    if dh == 0.0 && ds == 0.0 && dv == 0.0 {
        return atlas.clone();
    }
    let mut out = atlas.clone();
    let w = atlas.width();
    for (x, y, p) in out.enumerate_pixels_mut() {
        if !regions.get((y * w + x) as usize).copied().flatten().is_some_and(Region::is_skin) {
            continue;
        }
        let [h, s, v] = rgb_to_hsv([p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0]);
        let rgb = hsv_to_rgb([h + dh, (s + ds).clamp(0.0, 1.0), (v * (1.0 + dv)).clamp(0.0, 1.0)]);
        *p = Rgb(rgb.map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    out
}

/// `round_half_up((a·fg + (255 − a)·bg) / 255)` in exact integer arithmetic.
pub fn blend_channel(fg: u8, bg: u8, alpha: u8) -> u8 {
    let a = alpha as u32;
    let n = a * fg as u32 + (255 - a) * bg as u32;
    ((2 * n + 255) / 510) as u8
}

/// Crop window used for compositing, in background pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Random crop of the background with the render's aspect ratio, at least
/// as large as the render and at most the largest fitting window.
pub fn choose_crop<R: Rng + ?Sized>(bg: (u32, u32), frame: (u32, u32), rng: &mut R) -> Result<CropWindow, RenderError> {
    let too_small = RenderError::BackgroundTooSmall { bg_w: bg.0, bg_h: bg.1, need_w: frame.0, need_h: frame.1 };
    if bg.0 < frame.0 || bg.1 < frame.1 || frame.0 == 0 || frame.1 == 0 {
        return Err(too_small);
    }
    let max_scale = (bg.0 as f64 / frame.0 as f64).min(bg.1 as f64 / frame.1 as f64);
    let scale = if max_scale > 1.0 { rng.random_range(1.0..=max_scale) } else { 1.0 };
    let width = ((frame.0 as f64 * scale).floor() as u32).clamp(frame.0, bg.0);
    let height = ((frame.1 as f64 * scale).floor() as u32).clamp(frame.1, bg.1);
    let x = rng.random_range(0..=bg.0 - width);
    let y = rng.random_range(0..=bg.1 - height);
    Ok(CropWindow { x, y, width, height })
}

/// Crops and rescales the background, then alpha-blends the render over it.
pub fn composite<R: Rng + ?Sized>(
    render: &RgbaImage,
    background: &RgbImage,
    rng: &mut R,
) -> Result<(RgbImage, CropWindow), RenderError> {
    let (w, h) = render.dimensions();
    let crop = choose_crop(background.dimensions(), (w, h), rng)?;
    let view = imageops::crop_imm(background, crop.x, crop.y, crop.width, crop.height).to_image();
    let bg = if (crop.width, crop.height) == (w, h) {
        view
    } else {
        imageops::resize(&view, w, h, imageops::FilterType::Triangle)
    };
    Ok((alpha_over(render, &bg)?, crop))
}

pub fn alpha_over(fg: &RgbaImage, bg: &RgbImage) -> Result<RgbImage, RenderError> {
    if fg.dimensions() != bg.dimensions() {
        return Err(RenderError::SizeMismatch);
    }
    Ok(RgbImage::from_fn(fg.width(), fg.height(), |x, y| {
        let f = fg.get_pixel(x, y);
        let b = bg.get_pixel(x, y);
        Rgb([0, 1, 2].map(|k| blend_channel(f[k], b[k], f[3])))
    }))
}

#[cfg(test)]
pub(crate) mod tests_support {
    use std::collections::BTreeSet;
    use std::sync::Arc;

    use nalgebra::Vector3;

    use crate::body::{vertex_normals, ArticulatedMesh, MeshTopology, Region};
    use crate::skeleton::{Frame, Pose3D};

    /// Unrigged mesh for rasterization tests.
    pub fn flat_mesh(vertices: Vec<Vector3<f64>>, triangles: Vec<[u32; 3]>, uvs: Vec<[f64; 2]>) -> ArticulatedMesh {
        let n = vertices.len();
        let topology = Arc::new(MeshTopology {
            triangles,
            uvs,
            regions: vec![Region::UpperCloth; n],
            weights: vec![vec![(0, 1.0)]; n],
            weld: (0..n as u32).collect(),
            segments: vec![],
            waist_band: BTreeSet::new(),
        });
        let normals = vertex_normals(&vertices, &topology);
        ArticulatedMesh { topology, vertices, normals, joints: Pose3D::zeros(Frame::Body) }
    }
}
