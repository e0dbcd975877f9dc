use std::collections::VecDeque;

use image::GrayImage;
use nalgebra::Vector2;

use super::TextureError;
use crate::body::{ArticulatedMesh, SubMesh};
use crate::render::{silhouette, CameraParams};

/// Contour sample count.
pub const CONTOUR_POINTS: usize = 200;

/// Smallest accepted foreground component, as a fraction of the image.
pub const AREA_FLOOR: f64 = 0.01;

const SMOOTH_SIGMA: f64 = 1.0;

/// Boundary pixel centers lie half a pixel inside the true edge.
const OUTWARD_OFFSET: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Mask { width, height, data: vec![false; (width * height) as usize] }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Mask { width, height, data }
    }

    /// Pixels at or above 128 are foreground.
    pub fn from_gray(img: &GrayImage) -> Self {
        Mask::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y)[0] >= 128)
    }

    pub fn get(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && x < self.width as i64
            && y < self.height as i64
            && self.data[(y as u32 * self.width + x as u32) as usize]
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// 8-connected components, largest first; ties keep raster order.
    pub fn components(&self) -> Vec<Vec<(u32, u32)>> {
        let (w, h) = (self.width as i64, self.height as i64);
        let mut seen = vec![false; self.data.len()];
        let mut out = Vec::new();
        for start in 0..self.data.len() {
            if !self.data[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            while let Some(k) = queue.pop_front() {
                let (x, y) = ((k as i64) % w, (k as i64) / w);
                comp.push((x as u32, y as u32));
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w || ny >= h {
                            continue;
                        }
                        let n = (ny * w + nx) as usize;
                        if self.data[n] && !seen[n] {
                            seen[n] = true;
                            queue.push_back(n);
                        }
                    }
                }
            }
            out.push(comp);
        }
        out.sort_by_key(|c| std::cmp::Reverse(c.len()));
        out
    }

    fn floor_pixels(&self) -> f64 {
        AREA_FLOOR * (self.width as f64 * self.height as f64)
    }

    /// Exactly one component reaches the area floor.
    pub fn validate(&self) -> Result<(), TextureError> {
        let comps = self.components();
        let big = comps.iter().filter(|c| c.len() as f64 >= self.floor_pixels()).count();
        match (comps.is_empty(), big) {
            (true, _) => Err(TextureError::EmptyMask),
            (false, 0) => Err(TextureError::ComponentTooSmall(comps[0].len())),
            (false, 1) => Ok(()),
            (false, n) => Err(TextureError::MultipleComponents(n)),
        }
    }
}

/// Closed polyline with positive signed area in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub points: Vec<Vector2<f64>>,
    pub centroid: Vector2<f64>,
    /// Mean distance of the points from the centroid.
    pub scale: f64,
    /// Length of the traced outline before resampling.
    pub perimeter: f64,
}

pub fn signed_area(points: &[Vector2<f64>]) -> f64 {
    let n = points.len();
    (0..n).map(|i| points[i].perp(&points[(i + 1) % n])).sum::<f64>() / 2.0
}

fn closed_length(points: &[Vector2<f64>]) -> f64 {
    let n = points.len();
    (0..n).map(|i| (points[(i + 1) % n] - points[i]).norm()).sum()
}

impl Contour {
    /// Wraps existing samples, enforcing the orientation.
    pub fn from_points(mut points: Vec<Vector2<f64>>) -> Contour {
        if signed_area(&points) < 0.0 {
            points.reverse();
        }
        let n = points.len().max(1) as f64;
        let centroid = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
        let scale = points.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n;
        let perimeter = closed_length(&points);
        Contour { points, centroid, scale, perimeter }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point at continuous index `u` (taken modulo the length).
    pub fn point_at(&self, u: f64) -> Vector2<f64> {
        let n = self.points.len();
        let u = u.rem_euclid(n as f64);
        let i = (u.floor() as usize).min(n - 1);
        let f = u - i as f64;
        self.points[i] * (1.0 - f) + self.points[(i + 1) % n] * f
    }

    /// No two non-adjacent edges intersect and no consecutive points coincide.
    pub fn is_simple(&self, tol: f64) -> bool {
        let n = self.points.len();
        let p = &self.points;
        if (0..n).any(|i| (p[(i + 1) % n] - p[i]).norm() <= tol) {
            return false;
        }
        let cross = |o: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>| (a - o).perp(&(b - o));
        for i in 0..n {
            let (a, b) = (p[i], p[(i + 1) % n]);
            for j in i + 2..n {
                if (j + 1) % n == i {
                    continue;
                }
                let (c, d) = (p[j], p[(j + 1) % n]);
                let d1 = cross(a, b, c);
                let d2 = cross(a, b, d);
                let d3 = cross(c, d, a);
                let d4 = cross(c, d, b);
                if d1 * d2 < -tol && d3 * d4 < -tol {
                    return false;
                }
            }
        }
        true
    }
}

const DIRS: [(i64, i64); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn dir_index(dx: i64, dy: i64) -> usize {
    DIRS.iter().position(|&d| d == (dx, dy)).expect("neighbor offset")
}

/// Moore-neighborhood trace of the component containing `start`, which must
/// be its first pixel in raster order.
fn moore_trace(mask: &Mask, start: (i64, i64)) -> Vec<(i64, i64)> {
    let mut chain = vec![start];
    let mut cur = start;
    // The west neighbor of the first raster pixel is background.
    let mut back = 0usize;
    let limit = 4 * mask.data.len() + 8;
    let mut second: Option<(i64, i64)> = None;
    for _ in 0..limit {
        let mut found = None;
        for step in 1..=8 {
            let d = (back + step) % 8;
            let n = (cur.0 + DIRS[d].0, cur.1 + DIRS[d].1);
            if mask.get(n.0, n.1) {
                let prev = (back + step - 1) % 8;
                let bp = (cur.0 + DIRS[prev].0, cur.1 + DIRS[prev].1);
                found = Some((n, dir_index(bp.0 - n.0, bp.1 - n.1)));
                break;
            }
        }
        let Some((next, nb)) = found else {
            break;
        };
        if cur == start && second == Some(next) && chain.len() > 1 {
            break;
        }
        if second.is_none() {
            second = Some(next);
        }
        cur = next;
        back = nb;
        chain.push(cur);
    }
    if chain.len() > 1 && chain.last() == Some(&start) {
        chain.pop();
    }
    chain
}

fn gaussian_smooth(points: &[Vector2<f64>], sigma: f64) -> Vec<Vector2<f64>> {
    let n = points.len() as i64;
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    (0..n)
        .map(|i| {
            (-radius..=radius).fold(Vector2::zeros(), |acc, k| {
                acc + points[(i + k).rem_euclid(n) as usize] * kernel[(k + radius) as usize]
            }) / total
        })
        .collect()
}

fn offset_outward(points: &[Vector2<f64>], dist: f64) -> Vec<Vector2<f64>> {
    let n = points.len();
    let sign = if signed_area(points) >= 0.0 { 1.0 } else { -1.0 };
    (0..n)
        .map(|i| {
            let t = points[(i + 1) % n] - points[(i + n - 1) % n];
            let normal = Vector2::new(t.y, -t.x) * sign;
            match normal.try_normalize(1e-12) {
                Some(nrm) => points[i] + nrm * dist,
                None => points[i],
            }
        })
        .collect()
}

/// Equal-arclength resampling of a closed polyline.
pub fn resample_closed(points: &[Vector2<f64>], count: usize) -> Vec<Vector2<f64>> {
    let n = points.len();
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for i in 0..n {
        let l = (points[(i + 1) % n] - points[i]).norm();
        cum.push(cum[i] + l);
    }
    let total = cum[n];
    let mut out = Vec::with_capacity(count);
    let mut seg = 0;
    for k in 0..count {
        let s = total * k as f64 / count as f64;
        while seg + 1 < n && cum[seg + 1] <= s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let f = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        out.push(points[seg] * (1.0 - f) + points[(seg + 1) % n] * f);
    }
    out
}

/// Outline of the largest foreground component, resampled to
/// [`CONTOUR_POINTS`] points.
pub fn extract_contour(mask: &Mask) -> Result<Contour, TextureError> {
    extract_contour_n(mask, CONTOUR_POINTS)
}

pub fn extract_contour_n(mask: &Mask, count: usize) -> Result<Contour, TextureError> {
    let comps = mask.components();
    let Some(largest) = comps.first() else {
        return Err(TextureError::EmptyMask);
    };
    if (largest.len() as f64) < mask.floor_pixels() || largest.len() < 3 {
        return Err(TextureError::ComponentTooSmall(largest.len()));
    }
    let start = *largest.iter().min_by_key(|&&(x, y)| (y, x)).expect("nonempty component");
    let only = Mask::from_fn(mask.width, mask.height, {
        let set: std::collections::HashSet<(u32, u32)> = largest.iter().copied().collect();
        move |x, y| set.contains(&(x, y))
    });
    let chain = moore_trace(&only, (start.0 as i64, start.1 as i64));
    if chain.len() < 3 {
        return Err(TextureError::ComponentTooSmall(largest.len()));
    }
    let pts: Vec<Vector2<f64>> = chain.iter().map(|&(x, y)| Vector2::new(x as f64 + 0.5, y as f64 + 0.5)).collect();
    let smooth = gaussian_smooth(&pts, SMOOTH_SIGMA);
    let outline = offset_outward(&smooth, OUTWARD_OFFSET);
    let perimeter = closed_length(&outline);
    let mut contour = Contour::from_points(resample_closed(&outline, count));
    contour.perimeter = perimeter;
    Ok(contour)
}

/// Silhouette contour of a mesh part seen through `camera`.
pub fn project_part_contour(
    mesh: &ArticulatedMesh,
    part: &SubMesh,
    camera: &CameraParams,
) -> Result<Contour, TextureError> {
    let cover = silhouette(&mesh.vertices, &part.triangles, camera)?;
    let mask = Mask { width: camera.width, height: camera.height, data: cover };
    extract_contour(&mask)
}
