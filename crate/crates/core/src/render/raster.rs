use image::{Rgb, RgbImage, Rgba, RgbaImage};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{CameraParams, RenderError};
use crate::body::ArticulatedMesh;

/// Vertices closer than this to the camera plane drop their triangles.
pub const NEAR_PLANE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Light {
    /// Unit vector towards the light, camera coordinates.
    pub direction: [f64; 3],
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightRig {
    pub ambient: f64,
    pub lights: Vec<Light>,
}

pub const MAX_LIGHTS: usize = 4;

impl LightRig {
    pub fn validate(&self) -> Result<(), RenderError> {
        let ok = (0.0..=1.0).contains(&self.ambient)
            && self.lights.len() <= MAX_LIGHTS
            && self.lights.iter().all(|l| {
                let d = Vector3::from(l.direction);
                l.intensity >= 0.0 && l.intensity.is_finite() && (d.norm() - 1.0).abs() < 1e-6
            });
        if ok {
            Ok(())
        } else {
            Err(RenderError::BadLights)
        }
    }

    fn shade(&self, n: &Vector3<f64>) -> f64 {
        let diffuse: f64 = self.lights.iter().map(|l| n.dot(&Vector3::from(l.direction)).max(0.0) * l.intensity).sum();
        (self.ambient + diffuse).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// Shaded color with binary coverage alpha.
    pub rgba: RgbaImage,
    /// Camera-space depth per pixel, `+∞` where uncovered.
    pub depth: Vec<f64>,
}

/// Screen-space vertex: pixel coordinates plus camera depth.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ScreenVertex {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Calls `f(x, y, weights)` for every pixel center inside the triangle with
/// perspective-correct barycentric weights. Pixel `(x, y)` has its center
/// at `(x + 0.5, y + 0.5)`.
pub(crate) fn for_each_fragment(
    width: u32,
    height: u32,
    v: [ScreenVertex; 3],
    mut f: impl FnMut(u32, u32, [f64; 3], f64),
) {
    let area = (v[1].x - v[0].x) * (v[2].y - v[0].y) - (v[1].y - v[0].y) * (v[2].x - v[0].x);
    if !(area.abs() > 1e-12) {
        return;
    }
    let min_x = v.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).floor().max(0.0);
    let max_x = v.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).ceil().min(width as f64);
    let min_y = v.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).floor().max(0.0);
    let max_y = v.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).ceil().min(height as f64);
    if min_x >= max_x || min_y >= max_y {
        return;
    }
    let edge = |a: ScreenVertex, b: ScreenVertex, x: f64, y: f64| (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x);
    for py in min_y as u32..max_y as u32 {
        let cy = py as f64 + 0.5;
        for px in min_x as u32..max_x as u32 {
            let cx = px as f64 + 0.5;
            let b0 = edge(v[1], v[2], cx, cy) / area;
            let b1 = edge(v[2], v[0], cx, cy) / area;
            let b2 = edge(v[0], v[1], cx, cy) / area;
            if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                continue;
            }
            let w = [b0 / v[0].z, b1 / v[1].z, b2 / v[2].z];
            let s = w[0] + w[1] + w[2];
            f(px, py, [w[0] / s, w[1] / s, w[2] / s], 1.0 / s);
        }
    }
}

/// Camera-space vertices and their screen projections; `None` for
/// vertices at or behind the near plane.
pub(crate) fn project_vertices(
    vertices: &[Vector3<f64>],
    camera: &CameraParams,
) -> (Vec<Vector3<f64>>, Vec<Option<ScreenVertex>>) {
    let r = camera.rotation();
    let c = camera.center();
    let cam: Vec<Vector3<f64>> = vertices.iter().map(|v| r * (v - c)).collect();
    let screen = cam
        .iter()
        .map(|p| {
            (p.z > NEAR_PLANE).then(|| ScreenVertex {
                x: camera.focal * p.x / p.z + camera.principal[0],
                y: camera.focal * p.y / p.z + camera.principal[1],
                z: p.z,
            })
        })
        .collect();
    (cam, screen)
}

fn texel(atlas: &RgbImage, uv: [f64; 2]) -> Rgb<u8> {
    let (w, h) = atlas.dimensions();
    let x = ((uv[0] * w as f64).floor() as i64).clamp(0, w as i64 - 1) as u32;
    let y = ((uv[1] * h as f64).floor() as i64).clamp(0, h as i64 - 1) as u32;
    *atlas.get_pixel(x, y)
}

/// Z-buffered textured rendering with Lambert + ambient shading.
pub fn rasterize(
    mesh: &ArticulatedMesh,
    atlas: &RgbImage,
    camera: &CameraParams,
    lights: &LightRig,
) -> Result<RenderOutput, RenderError> {
    camera.validate()?;
    lights.validate()?;
    let (w, h) = (camera.width, camera.height);
    let topo = &mesh.topology;
    let (_, screen) = project_vertices(&mesh.vertices, camera);
    let rot = camera.rotation();
    let normals: Vec<Vector3<f64>> = mesh.normals.iter().map(|n| rot * n).collect();
    let mut rgba = RgbaImage::new(w, h);
    let mut depth = vec![f64::INFINITY; (w * h) as usize];
    let mut covered = false;
    for tri in &topo.triangles {
        let idx = tri.map(|i| i as usize);
        let (Some(a), Some(b), Some(c)) = (screen[idx[0]], screen[idx[1]], screen[idx[2]]) else {
            continue;
        };
        for_each_fragment(w, h, [a, b, c], |x, y, bw, z| {
            let k = (y * w + x) as usize;
            if !(z < depth[k]) {
                return;
            }
            depth[k] = z;
            covered = true;
            let mut uv = [0.0; 2];
            let mut n = Vector3::zeros();
            for (i, &vi) in idx.iter().enumerate() {
                uv[0] += bw[i] * topo.uvs[vi][0];
                uv[1] += bw[i] * topo.uvs[vi][1];
                n += normals[vi] * bw[i];
            }
            let n = n.try_normalize(1e-12).unwrap_or_else(Vector3::zeros);
            let s = lights.shade(&n);
            let t = texel(atlas, uv);
            let ch = |c: u8| (c as f64 * s).round().clamp(0.0, 255.0) as u8;
            rgba.put_pixel(x, y, Rgba([ch(t[0]), ch(t[1]), ch(t[2]), 255]));
        });
    }
    if !covered {
        return Err(RenderError::EmptyExtent);
    }
    Ok(RenderOutput { rgba, depth })
}

/// Coverage mask of the given triangles (no shading, no depth).
pub fn silhouette(
    vertices: &[Vector3<f64>],
    triangles: &[[u32; 3]],
    camera: &CameraParams,
) -> Result<Vec<bool>, RenderError> {
    camera.validate()?;
    let (w, h) = (camera.width, camera.height);
    let (_, screen) = project_vertices(vertices, camera);
    let mut mask = vec![false; (w * h) as usize];
    let mut any = false;
    for tri in triangles {
        let (Some(a), Some(b), Some(c)) =
            (screen[tri[0] as usize], screen[tri[1] as usize], screen[tri[2] as usize])
        else {
            continue;
        };
        for_each_fragment(w, h, [a, b, c], |x, y, _, _| {
            mask[(y * w + x) as usize] = true;
            any = true;
        });
    }
    if !any {
        return Err(RenderError::EmptyExtent);
    }
    Ok(mask)
}

/// Semi-transparent flat-shaded mesh over `image`.
pub fn render_overlay(
    image: &RgbImage,
    mesh: &ArticulatedMesh,
    camera: &CameraParams,
    alpha: f64,
) -> Result<RgbImage, RenderError> {
    if image.dimensions() != (camera.width, camera.height) {
        return Err(RenderError::SizeMismatch);
    }
    let grey = RgbImage::from_pixel(1, 1, Rgb([200, 200, 200]));
    let lights = LightRig {
        ambient: 0.35,
        lights: vec![Light { direction: [0.0, 0.0, -1.0], intensity: 0.65 }],
    };
    let render = rasterize(mesh, &grey, camera, &lights)?;
    let a = alpha.clamp(0.0, 1.0);
    let mut out = image.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        let r = render.rgba.get_pixel(x, y);
        if r[3] == 0 {
            continue;
        }
        for k in 0..3 {
            p[k] = (a * r[k] as f64 + (1.0 - a) * p[k] as f64).round() as u8;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::tests_support::flat_mesh;

    fn camera() -> CameraParams {
        CameraParams::frontal(32, 32, 32.0, 2.0, Vector3::zeros())
    }

    fn facing_triangle(z: f64, scale: f64) -> (Vec<Vector3<f64>>, Vec<[u32; 3]>) {
        // Counter-clockwise seen from +z, so the normal faces the camera.
        let v = vec![
            Vector3::new(-scale, -scale, z),
            Vector3::new(scale, -scale, z),
            Vector3::new(0.0, scale, z),
        ];
        (v, vec![[0, 1, 2]])
    }

    #[test]
    fn flat_ambient_triangle() {
        let (v, t) = facing_triangle(0.0, 0.5);
        let mesh = flat_mesh(v, t, vec![[0.5, 0.5]; 3]);
        let atlas = RgbImage::from_pixel(2, 2, Rgb([10, 200, 30]));
        let lights = LightRig { ambient: 1.0, lights: vec![] };
        let out = rasterize(&mesh, &atlas, &camera(), &lights).unwrap();
        let center = out.rgba.get_pixel(16, 17);
        assert_eq!(*center, Rgba([10, 200, 30, 255]));
        assert_eq!(out.rgba.get_pixel(0, 0)[3], 0);
        for p in out.rgba.pixels() {
            assert!(p[3] == 0 || *p == Rgba([10, 200, 30, 255]));
        }
    }

    #[test]
    fn nearer_triangle_wins() {
        let (mut v, mut t) = facing_triangle(-0.5, 0.5);
        let (v2, _) = facing_triangle(0.3, 0.6);
        v.extend(v2);
        t.push([3, 4, 5]);
        let mut uvs = vec![[0.25, 0.5]; 3];
        uvs.extend([[0.75, 0.5]; 3]);
        let mesh = flat_mesh(v, t, uvs);
        let atlas = RgbImage::from_fn(2, 1, |x, _| if x == 0 { Rgb([255, 0, 0]) } else { Rgb([0, 0, 255]) });
        let lights = LightRig { ambient: 1.0, lights: vec![] };
        let out = rasterize(&mesh, &atlas, &camera(), &lights).unwrap();
        let cam = camera();
        let near = silhouette(&mesh.vertices[3..], &[[0, 1, 2]], &cam).unwrap();
        let far = silhouette(&mesh.vertices[..3], &[[0, 1, 2]], &cam).unwrap();
        let mut contested = 0;
        for (k, p) in out.rgba.pixels().enumerate() {
            if near[k] {
                assert_eq!(*p, Rgba([0, 0, 255, 255]));
                contested += far[k] as usize;
            }
        }
        assert!(contested > 20);
    }

    #[test]
    fn grazing_light_is_black() {
        let (v, t) = facing_triangle(0.0, 0.5);
        let mesh = flat_mesh(v, t, vec![[0.5, 0.5]; 3]);
        let atlas = RgbImage::from_pixel(1, 1, Rgb([255, 255, 255]));
        let lights = LightRig { ambient: 0.0, lights: vec![Light { direction: [1.0, 0.0, 0.0], intensity: 1.0 }] };
        let out = rasterize(&mesh, &atlas, &camera(), &lights).unwrap();
        let mut seen = 0;
        for p in out.rgba.pixels().filter(|p| p[3] == 255) {
            assert_eq!(*p, Rgba([0, 0, 0, 255]));
            seen += 1;
        }
        assert!(seen > 0);
    }

    #[test]
    fn deterministic_and_empty_extent() {
        let (v, t) = facing_triangle(0.0, 0.5);
        let mesh = flat_mesh(v, t, vec![[0.5, 0.5]; 3]);
        let atlas = RgbImage::from_pixel(1, 1, Rgb([90, 90, 90]));
        let lights = LightRig { ambient: 0.3, lights: vec![Light { direction: [0.0, 0.0, -1.0], intensity: 0.7 }] };
        let a = rasterize(&mesh, &atlas, &camera(), &lights).unwrap();
        let b = rasterize(&mesh, &atlas, &camera(), &lights).unwrap();
        assert_eq!(a, b);
        let (v, t) = facing_triangle(5.0, 0.5);
        let behind = flat_mesh(v, t, vec![[0.5, 0.5]; 3]);
        assert!(matches!(rasterize(&behind, &atlas, &camera(), &lights), Err(RenderError::EmptyExtent)));
    }

    #[test]
    fn overlay_alpha_extremes() {
        let (v, t) = facing_triangle(0.0, 0.5);
        let mesh = flat_mesh(v, t, vec![[0.5, 0.5]; 3]);
        let photo = RgbImage::from_fn(32, 32, |x, y| Rgb([x as u8 * 7, y as u8 * 5, 3]));
        let cam = camera();
        assert_eq!(render_overlay(&photo, &mesh, &cam, 0.0).unwrap(), photo);
        let full = render_overlay(&photo, &mesh, &cam, 1.0).unwrap();
        let grey = RgbImage::from_pixel(1, 1, Rgb([200, 200, 200]));
        let lights = LightRig { ambient: 0.35, lights: vec![Light { direction: [0.0, 0.0, -1.0], intensity: 0.65 }] };
        let r = rasterize(&mesh, &grey, &cam, &lights).unwrap();
        for (x, y, p) in full.enumerate_pixels() {
            let q = r.rgba.get_pixel(x, y);
            if q[3] > 0 {
                assert_eq!([p[0], p[1], p[2]], [q[0], q[1], q[2]]);
            } else {
                assert_eq!(p, photo.get_pixel(x, y));
            }
        }
    }
}
