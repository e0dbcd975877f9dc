use image::{Rgb, RgbImage, RgbaImage};
use nalgebra::Vector3;
use rand::Rng;

use super::TextureError;
use crate::body::{ArticulatedMesh, MeshTopology, Region, Segment, SegmentKind, TemplateMesh, ATLAS_SIZE, WAIST_BAND};
use crate::render::{for_each_fragment, CameraParams, ScreenVertex};

/// Texels facing away from the camera by less than this cosine still bake.
pub const FACING_TOLERANCE: f64 = 0.05;

/// Search radius (pixels) for the nearest opaque warped pixel.
pub const SAMPLE_RADIUS: i64 = 6;

/// Surface lookup for every atlas texel.
#[derive(Debug, Clone)]
pub struct TexelMap {
    pub size: u32,
    /// Triangle and barycentric weights under each texel center.
    pub entries: Vec<Option<(u32, [f64; 3])>>,
    pub regions: Vec<Option<Region>>,
    pub segment: Vec<Option<u8>>,
}

impl TexelMap {
    pub fn new(topo: &MeshTopology) -> TexelMap {
        let size = ATLAS_SIZE;
        let n = (size * size) as usize;
        let mut entries: Vec<Option<(u32, [f64; 3])>> = vec![None; n];
        for (ti, tri) in topo.triangles.iter().enumerate() {
            let v = tri.map(|i| {
                let uv = topo.uvs[i as usize];
                ScreenVertex { x: uv[0] * size as f64, y: uv[1] * size as f64, z: 1.0 }
            });
            for_each_fragment(size, size, v, |x, y, b, _| {
                let k = (y * size + x) as usize;
                if entries[k].is_none() {
                    entries[k] = Some((ti as u32, b));
                }
            });
        }
        let mut regions = vec![None; n];
        let mut segment = vec![None; n];
        for (si, seg) in topo.segments.iter().enumerate() {
            let [x0, y0, w, h] = seg.rect;
            for y in y0..y0 + h {
                let t = (y - y0) as f64 / h as f64 + 0.5 / h as f64;
                for x in x0..x0 + w {
                    let k = (y * size + x) as usize;
                    regions[k] = Some(seg.region_at(t));
                    segment[k] = Some(si as u8);
                }
            }
        }
        // Texel centers exactly on a shared edge may be missed by both
        // triangles; borrow the nearest mapped texel of the same segment.
        for k in 0..n {
            if entries[k].is_some() || segment[k].is_none() {
                continue;
            }
            let (x, y) = ((k as u32 % size) as i64, (k as u32 / size) as i64);
            'search: for r in 1..4i64 {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= size as i64 || ny >= size as i64 {
                            continue;
                        }
                        let j = (ny as u32 * size + nx as u32) as usize;
                        if segment[j] == segment[k] && entries[j].is_some() {
                            entries[k] = entries[j];
                            break 'search;
                        }
                    }
                }
            }
        }
        TexelMap { size, entries, regions, segment }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_cloth(&self, k: usize) -> bool {
        self.regions[k].is_some_and(Region::is_cloth)
    }
}

/// Axial length and seam parameter of the torso tube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorsoSeam {
    pub segment: usize,
    pub length: f64,
    pub t_seam: f64,
}

impl TorsoSeam {
    pub fn of(template: &TemplateMesh) -> Result<TorsoSeam, TextureError> {
        let topo = &template.topology;
        let (segment, seg) = topo
            .segments
            .iter()
            .enumerate()
            .find(|(_, s)| s.kind == SegmentKind::Torso)
            .ok_or(TextureError::MissingSegment("torso"))?;
        let (lo, hi) = seg.vertex_range.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
            let y = template.vertices[i as usize].y;
            (lo.min(y), hi.max(y))
        });
        Ok(TorsoSeam { segment, length: hi - lo, t_seam: seg.t_seam.unwrap_or(0.0) })
    }

    fn row_t(seg: &Segment, row: u32) -> f64 {
        (row - seg.rect[1]) as f64 / seg.rect[3] as f64 + 0.5 / seg.rect[3] as f64
    }

    fn in_band(&self, seg: &Segment, row: u32) -> bool {
        ((Self::row_t(seg, row) - self.t_seam) * self.length).abs() <= WAIST_BAND
    }
}

/// Texels a garment of the given region must fill: its own region plus
/// the waist overlap band.
pub fn garment_texels(map: &TexelMap, topo: &MeshTopology, seam: &TorsoSeam, region: Region) -> Vec<bool> {
    let seg = &topo.segments[seam.segment];
    (0..map.len())
        .map(|k| {
            let row = k as u32 / map.size;
            map.regions[k] == Some(region)
                || (map.segment[k] == Some(seam.segment as u8) && seam.in_band(seg, row))
        })
        .collect()
}

/// Baked colors of one garment, indexed like the atlas.
#[derive(Debug, Clone, PartialEq)]
pub struct PartTexture {
    pub colors: Vec<Option<Rgb<u8>>>,
}

fn nearest_opaque(img: &RgbaImage, x: f64, y: f64) -> Option<Rgb<u8>> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (cx, cy) = (x.floor() as i64, y.floor() as i64);
    let mut best: Option<(f64, Rgb<u8>)> = None;
    for dy in -SAMPLE_RADIUS..=SAMPLE_RADIUS {
        for dx in -SAMPLE_RADIUS..=SAMPLE_RADIUS {
            let (px, py) = (cx + dx, cy + dy);
            if px < 0 || py < 0 || px >= w || py >= h {
                continue;
            }
            let p = img.get_pixel(px as u32, py as u32);
            if p[3] < 128 {
                continue;
            }
            let d = (px as f64 + 0.5 - x).powi(2) + (py as f64 + 0.5 - y).powi(2);
            if d <= (SAMPLE_RADIUS * SAMPLE_RADIUS) as f64 && best.is_none_or(|b| d < b.0) {
                best = Some((d, Rgb([p[0], p[1], p[2]])));
            }
        }
    }
    best.map(|b| b.1)
}

/// Texel index mirrored within or across segments; `None` outside segments.
fn mirrored(map: &TexelMap, topo: &MeshTopology, k: usize) -> [Option<usize>; 3] {
    let Some(si) = map.segment[k] else {
        return [None; 3];
    };
    let seg = &topo.segments[si as usize];
    let partner = &topo.segments[seg.partner];
    let [x0, y0, w, _] = seg.rect;
    let (x, y) = (k as u32 % map.size, k as u32 / map.size);
    let (i, j) = (x - x0, y - y0);
    let at = |s: &Segment, ii: u32| ((s.rect[1] + j) * map.size + s.rect[0] + ii) as usize;
    // φ → π − φ (front/back), φ → −φ (left/right), φ → π + φ (both).
    let fb = (w / 2 + w - 1 - i) % w;
    let lr = w - 1 - i;
    let both = (i + w / 2) % w;
    [Some(at(seg, fb)), Some(at(partner, lr)), Some(at(partner, both))]
}

/// Fills unset wanted texels from their mirror images until nothing changes.
pub fn mirror_fill(colors: &mut [Option<Rgb<u8>>], wanted: &[bool], map: &TexelMap, topo: &MeshTopology) {
    loop {
        let mut changed = false;
        for k in 0..colors.len() {
            if !wanted[k] || colors[k].is_some() {
                continue;
            }
            for m in mirrored(map, topo, k).into_iter().flatten() {
                if wanted[m] {
                    if let Some(c) = colors[m] {
                        colors[k] = Some(c);
                        changed = true;
                        break;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// One pass giving every unset wanted texel the mean of its set 4-neighbors
/// within the same segment; columns wrap since segments are tubes.
/// Returns whether anything was filled.
pub fn inpaint_step(colors: &mut [Option<Rgb<u8>>], wanted: &[bool], map: &TexelMap, topo: &MeshTopology) -> bool {
    let prev = colors.to_vec();
    let mut changed = false;
    for k in 0..colors.len() {
        if !wanted[k] || prev[k].is_some() {
            continue;
        }
        let Some(si) = map.segment[k] else { continue };
        let [x0, y0, w, h] = topo.segments[si as usize].rect;
        let (i, j) = (k as u32 % map.size - x0, k as u32 / map.size - y0);
        let mut neighbors = vec![((i + 1) % w, j), ((i + w - 1) % w, j)];
        if j > 0 {
            neighbors.push((i, j - 1));
        }
        if j + 1 < h {
            neighbors.push((i, j + 1));
        }
        let mut sum = [0u32; 3];
        let mut count = 0;
        for (ni, nj) in neighbors {
            let m = ((y0 + nj) * map.size + x0 + ni) as usize;
            if let (true, Some(c)) = (wanted[m], prev[m]) {
                for (s, v) in sum.iter_mut().zip(c.0) {
                    *s += v as u32;
                }
                count += 1;
            }
        }
        if count > 0 {
            colors[k] = Some(Rgb(sum.map(|s| ((2 * s + count) / (2 * count)) as u8)));
            changed = true;
        }
    }
    changed
}

/// Projects every wanted, camera-facing texel of `mesh` into the warped
/// garment image, then mirrors and inpaints to cover the rest.
pub fn bake_texture(
    warped: &RgbaImage,
    mesh: &ArticulatedMesh,
    camera: &CameraParams,
    map: &TexelMap,
    wanted: &[bool],
) -> Result<PartTexture, TextureError> {
    if warped.dimensions() != (camera.width, camera.height) {
        return Err(TextureError::SizeMismatch);
    }
    let topo = &mesh.topology;
    let center = camera.center();
    let mut colors: Vec<Option<Rgb<u8>>> = vec![None; map.len()];
    for k in 0..map.len() {
        if !wanted[k] {
            continue;
        }
        let Some((ti, b)) = map.entries[k] else {
            continue;
        };
        let tri = topo.triangles[ti as usize].map(|i| i as usize);
        let p: Vector3<f64> = (0..3).map(|i| mesh.vertices[tri[i]] * b[i]).sum();
        let n: Vector3<f64> = (0..3).map(|i| mesh.normals[tri[i]] * b[i]).sum();
        let (Some(n), Some(view)) = (n.try_normalize(1e-12), (center - p).try_normalize(1e-12)) else {
            continue;
        };
        if n.dot(&view) < -FACING_TOLERANCE {
            continue;
        }
        let Ok(px) = camera.project(&camera.to_camera(&p)) else {
            continue;
        };
        colors[k] = nearest_opaque(warped, px[0], px[1]);
    }
    mirror_fill(&mut colors, wanted, map, topo);
    while inpaint_step(&mut colors, wanted, map, topo) {
        mirror_fill(&mut colors, wanted, map, topo);
    }
    let total = wanted.iter().filter(|&&w| w).count();
    let unfilled = (0..map.len()).filter(|&k| wanted[k] && colors[k].is_none()).count();
    if unfilled > 0 {
        return Err(TextureError::Coverage { unfilled, total });
    }
    Ok(PartTexture { colors })
}

/// Merges the two garments. Inside the torso the seam row of each column is
/// jittered uniformly by up to `amplitude` meters, clamped to the band.
pub fn compose_cloth<R: Rng + ?Sized>(
    upper: &PartTexture,
    lower: &PartTexture,
    map: &TexelMap,
    topo: &MeshTopology,
    seam: &TorsoSeam,
    amplitude: f64,
    rng: &mut R,
) -> Result<(RgbImage, Vec<bool>), TextureError> {
    let size = map.size;
    let amp = amplitude.clamp(0.0, WAIST_BAND);
    let torso = &topo.segments[seam.segment];
    let [x0, _, w, _] = torso.rect;
    let seam_t: Vec<f64> = (0..w)
        .map(|_| {
            let d = if amp > 0.0 { rng.random_range(-amp..=amp) } else { 0.0 };
            seam.t_seam + d / seam.length
        })
        .collect();
    let mut img = RgbImage::new(size, size);
    let mut filled = vec![false; map.len()];
    for k in 0..map.len() {
        let Some(region) = map.regions[k] else { continue };
        if !region.is_cloth() {
            continue;
        }
        let (x, y) = (k as u32 % size, k as u32 / size);
        let use_upper = if map.segment[k] == Some(seam.segment as u8) {
            TorsoSeam::row_t(torso, y) >= seam_t[(x - x0) as usize]
        } else {
            region == Region::UpperCloth
        };
        let src = if use_upper { &upper.colors[k] } else { &lower.colors[k] };
        let c = src.ok_or(TextureError::Coverage { unfilled: 1, total: 1 })?;
        img.put_pixel(x, y, c);
        filled[k] = true;
    }
    Ok((img, filled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::Gender;

    #[test]
    fn texel_map_covers_segments() {
        let t = TemplateMesh::builtin(Gender::Male);
        let map = TexelMap::new(&t.topology);
        for k in 0..map.len() {
            assert_eq!(map.segment[k].is_some(), map.entries[k].is_some(), "texel {k}");
        }
        let cloth = (0..map.len()).filter(|&k| map.is_cloth(k)).count();
        assert!(cloth > 20_000);
    }

    #[test]
    fn mirror_indices_are_involutions() {
        let t = TemplateMesh::builtin(Gender::Female);
        let map = TexelMap::new(&t.topology);
        for k in (0..map.len()).step_by(7) {
            let m = mirrored(&map, &t.topology, k);
            for (slot, mk) in m.iter().enumerate() {
                let Some(mk) = *mk else { continue };
                assert_eq!(mirrored(&map, &t.topology, mk)[slot], Some(k));
                assert_eq!(map.regions[mk], map.regions[k]);
            }
        }
    }
}
