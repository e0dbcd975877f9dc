use image::{Rgba, RgbaImage};
use nalgebra::{Complex, Vector2};

use super::TextureError;

/// Spacing of the dense map evaluation grid, in pixels.
pub const GRID_SPACING: u32 = 4;

/// Weight exponent: `w_i = 1 / |p_i − v|^(2α)`.
pub const ALPHA: f64 = 1.0;

/// Control pair: `p` in the source, `q` where it lands.
pub type Control = (Vector2<f64>, Vector2<f64>);

pub fn validate_controls(controls: &[Control]) -> Result<(), TextureError> {
    if controls.len() < 3 {
        return Err(TextureError::TooFewControls(controls.len()));
    }
    let n = controls.len() as f64;
    let mean = controls.iter().fold(Vector2::zeros(), |a, c| a + c.0) / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (p, _) in controls {
        let d = p - mean;
        sxx += d.x * d.x;
        syy += d.y * d.y;
        sxy += d.x * d.y;
    }
    let det = sxx * syy - sxy * sxy;
    let tr = sxx + syy;
    if !(det > 1e-10 * tr * tr) {
        return Err(TextureError::CollinearControls);
    }
    Ok(())
}

/// Similarity moving-least-squares deformation evaluated at `v`.
/// Control points map exactly onto their targets.
pub fn mls_map(controls: &[Control], v: Vector2<f64>) -> Vector2<f64> {
    let mut wsum = 0.0;
    let mut pstar = Vector2::zeros();
    let mut qstar = Vector2::zeros();
    let mut weights = Vec::with_capacity(controls.len());
    for (p, q) in controls {
        let d2 = (p - v).norm_squared();
        if d2 == 0.0 {
            return *q;
        }
        let w = 1.0 / d2.powf(ALPHA);
        weights.push(w);
        wsum += w;
        pstar += p * w;
        qstar += q * w;
    }
    pstar /= wsum;
    qstar /= wsum;
    let mut num = Complex::new(0.0, 0.0);
    let mut mu = 0.0;
    for ((p, q), w) in controls.iter().zip(&weights) {
        let ph = Complex::new(p.x - pstar.x, p.y - pstar.y);
        let qh = Complex::new(q.x - qstar.x, q.y - qstar.y);
        num += ph.conj() * qh * *w;
        mu += ph.norm_sqr() * w;
    }
    let a = if mu > 0.0 { num / mu } else { Complex::new(1.0, 0.0) };
    let z = a * Complex::new(v.x - pstar.x, v.y - pstar.y);
    Vector2::new(z.re + qstar.x, z.im + qstar.y)
}

/// Inverse map sampled on a grid, giving the source location of every
/// output pixel by bilinear interpolation between grid nodes.
pub struct WarpField {
    nodes_x: Vec<u32>,
    nodes_y: Vec<u32>,
    values: Vec<Vector2<f64>>,
}

fn grid_nodes(size: u32) -> Vec<u32> {
    let mut v: Vec<u32> = (0..size).step_by(GRID_SPACING as usize).collect();
    if *v.last().expect("nonempty") != size - 1 {
        v.push(size - 1);
    }
    v
}

impl WarpField {
    pub fn new(inverse: &[Control], width: u32, height: u32) -> Self {
        let nodes_x = grid_nodes(width);
        let nodes_y = grid_nodes(height);
        let values = nodes_y
            .iter()
            .flat_map(|&y| nodes_x.iter().map(move |&x| (x, y)))
            .map(|(x, y)| mls_map(inverse, Vector2::new(x as f64, y as f64)))
            .collect();
        WarpField { nodes_x, nodes_y, values }
    }

    pub fn node(&self, i: usize, j: usize) -> Vector2<f64> {
        self.values[j * self.nodes_x.len() + i]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nodes_x.len(), self.nodes_y.len())
    }

    pub fn at(&self, x: u32, y: u32) -> Vector2<f64> {
        let locate = |nodes: &[u32], v: u32| -> (usize, f64) {
            let i = match nodes.binary_search(&v) {
                Ok(i) => return (i.min(nodes.len() - 1), 0.0),
                Err(i) => i - 1,
            };
            (i, (v - nodes[i]) as f64 / (nodes[i + 1] - nodes[i]) as f64)
        };
        let (i, fx) = locate(&self.nodes_x, x);
        let (j, fy) = locate(&self.nodes_y, y);
        if fx == 0.0 && fy == 0.0 {
            return self.node(i, j);
        }
        let i1 = (i + 1).min(self.nodes_x.len() - 1);
        let j1 = (j + 1).min(self.nodes_y.len() - 1);
        let top = self.node(i, j) * (1.0 - fx) + self.node(i1, j) * fx;
        let bottom = self.node(i, j1) * (1.0 - fx) + self.node(i1, j1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

fn bilinear(img: &RgbaImage, p: Vector2<f64>) -> Option<Rgba<u8>> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    const EPS: f64 = 1e-9;
    if !(p.x >= -EPS && p.y >= -EPS && p.x <= w - 1.0 + EPS && p.y <= h - 1.0 + EPS) {
        return None;
    }
    let x = p.x.clamp(0.0, w - 1.0);
    let y = p.y.clamp(0.0, h - 1.0);
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let px = |xx, yy| img.get_pixel(xx, yy).0.map(|c| c as f64);
    let (a, b, c, d) = (px(x0, y0), px(x1, y0), px(x0, y1), px(x1, y1));
    Some(Rgba(std::array::from_fn(|k| {
        let v = (a[k] * (1.0 - fx) + b[k] * fx) * (1.0 - fy) + (c[k] * (1.0 - fx) + d[k] * fx) * fy;
        v.round().clamp(0.0, 255.0) as u8
    })))
}

/// Warps `image` so that each control `p` lands on its `q`. Output pixels
/// whose preimage falls outside the source are fully transparent.
pub fn mls_warp(image: &RgbaImage, controls: &[Control], out_size: (u32, u32)) -> Result<RgbaImage, TextureError> {
    validate_controls(controls)?;
    let inverse: Vec<Control> = controls.iter().map(|&(p, q)| (q, p)).collect();
    validate_controls(&inverse)?;
    let field = WarpField::new(&inverse, out_size.0, out_size.1);
    Ok(RgbaImage::from_fn(out_size.0, out_size.1, |x, y| bilinear(image, field.at(x, y)).unwrap_or(Rgba([0, 0, 0, 0]))))
}
