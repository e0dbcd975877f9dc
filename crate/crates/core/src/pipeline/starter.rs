//! Procedurally generated starter assets so the pipeline runs without any
//! external downloads: garment photos with masks, head/skin/shoe swatches,
//! backgrounds and a small motion-capture-like pose set.

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::PipelineError;
use crate::body::{forward_kinematics, BoneRotations};
use crate::skeleton::{JointId, JointLimits, Pose3D, NUM_BONES};
use crate::texture::{ClothCategory, Mask};

pub const GARMENT_SIZE: u32 = 128;
pub const BACKGROUND_SIZE: u32 = 256;

/// Counts for [`write_starter_assets`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StarterCounts {
    pub upper: usize,
    pub lower: usize,
    pub extremities: usize,
    pub backgrounds: usize,
    pub poses: usize,
}

impl Default for StarterCounts {
    fn default() -> Self {
        StarterCounts { upper: 12, lower: 12, extremities: 4, backgrounds: 20, poses: 300 }
    }
}

fn color<R: Rng + ?Sized>(rng: &mut R) -> [u8; 3] {
    [rng.random(), rng.random(), rng.random()]
}

#[derive(Debug, Clone, Copy)]
enum Pattern {
    Solid,
    HStripes(u32),
    VStripes(u32),
    Checker(u32),
    Dots(u32),
}

fn pattern<R: Rng + ?Sized>(rng: &mut R) -> Pattern {
    match rng.random_range(0..5) {
        0 => Pattern::Solid,
        1 => Pattern::HStripes(rng.random_range(4..16)),
        2 => Pattern::VStripes(rng.random_range(4..16)),
        3 => Pattern::Checker(rng.random_range(6..20)),
        _ => Pattern::Dots(rng.random_range(8..20)),
    }
}

fn paint(p: Pattern, a: [u8; 3], b: [u8; 3], x: u32, y: u32) -> [u8; 3] {
    let second = match p {
        Pattern::Solid => false,
        Pattern::HStripes(s) => (y / s) % 2 == 1,
        Pattern::VStripes(s) => (x / s) % 2 == 1,
        Pattern::Checker(s) => (x / s + y / s) % 2 == 1,
        Pattern::Dots(s) => {
            let (dx, dy) = ((x % s) as i64 - s as i64 / 2, (y % s) as i64 - s as i64 / 2);
            4 * (dx * dx + dy * dy) < (s * s) as i64 / 2
        }
    };
    if second {
        b
    } else {
        a
    }
}

/// Garment silhouette drawn on a `GARMENT_SIZE` square canvas.
pub fn garment_mask<R: Rng + ?Sized>(category: ClothCategory, rng: &mut R) -> Mask {
    let s = GARMENT_SIZE;
    match category {
        ClothCategory::Upper => {
            let half = rng.random_range(22..32);
            let (top, bottom) = (rng.random_range(16..26), rng.random_range(108..124));
            let reach = rng.random_range(half + 10..60);
            let sleeve = rng.random_range(16..30);
            Mask::from_fn(s, s, |x, y| {
                let dx = (x as i64 - s as i64 / 2).unsigned_abs() as u32;
                (dx < half && (top..bottom).contains(&y)) || (dx < reach && (top..top + sleeve).contains(&y))
            })
        }
        ClothCategory::Lower => {
            let half = rng.random_range(24..34);
            let (top, hips) = (rng.random_range(6..14), rng.random_range(36..48));
            let bottom = rng.random_range(84..124);
            let gap = rng.random_range(3..8);
            Mask::from_fn(s, s, |x, y| {
                let dx = (x as i64 - s as i64 / 2).unsigned_abs() as u32;
                (dx < half && (top..hips).contains(&y)) || (dx >= gap && dx < half && (hips..bottom).contains(&y))
            })
        }
    }
}

/// Patterned garment photo and its mask image (255 = garment).
pub fn garment<R: Rng + ?Sized>(category: ClothCategory, rng: &mut R) -> (RgbImage, GrayImage) {
    let mask = garment_mask(category, rng);
    let (a, b, p) = (color(rng), color(rng), pattern(rng));
    let backdrop = [235, 235, 235];
    let image = RgbImage::from_fn(mask.width, mask.height, |x, y| {
        Rgb(if mask.get(x as i64, y as i64) { paint(p, a, b, x, y) } else { backdrop })
    });
    let gray = GrayImage::from_fn(mask.width, mask.height, |x, y| Luma([if mask.get(x as i64, y as i64) { 255 } else { 0 }]));
    (image, gray)
}

fn skin_tone<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let t: f64 = rng.random_range(0.0..1.0);
    let light = [236.0, 198.0, 170.0];
    let dark = [96.0, 62.0, 44.0];
    std::array::from_fn(|k| light[k] + t * (dark[k] - light[k]))
}

fn jitter<R: Rng + ?Sized>(c: [f64; 3], amount: f64, rng: &mut R) -> Rgb<u8> {
    Rgb(c.map(|v| (v + rng.random_range(-amount..=amount)).round().clamp(0.0, 255.0) as u8))
}

/// Head swatch: hair band over a skin-colored face with darker eye marks.
pub fn head<R: Rng + ?Sized>(rng: &mut R) -> RgbImage {
    let skin = skin_tone(rng);
    let hair = [rng.random_range(10.0..120.0), rng.random_range(5.0..80.0), rng.random_range(0.0..50.0)];
    let hairline = rng.random_range(14..26);
    let mut img = RgbImage::new(64, 64);
    for (x, y, p) in img.enumerate_pixels_mut() {
        let eye = (28..32).contains(&y) && ((20..26).contains(&x) || (38..44).contains(&x));
        *p = if y < hairline {
            jitter(hair, 6.0, rng)
        } else if eye {
            Rgb([40, 30, 30])
        } else {
            jitter(skin, 4.0, rng)
        };
    }
    img
}

pub fn skin<R: Rng + ?Sized>(rng: &mut R) -> RgbImage {
    let tone = skin_tone(rng);
    let mut img = RgbImage::new(32, 32);
    for p in img.pixels_mut() {
        *p = jitter(tone, 4.0, rng);
    }
    img
}

pub fn shoe<R: Rng + ?Sized>(rng: &mut R) -> RgbImage {
    let base = color(rng).map(|c| c as f64 * 0.4);
    let mut img = RgbImage::new(32, 32);
    for (_, y, p) in img.enumerate_pixels_mut() {
        *p = if y > 26 { Rgb([235, 235, 235]) } else { jitter(base, 5.0, rng) };
    }
    img
}

/// Stylized sports scene: sky gradient, field with markings and crowd blobs.
pub fn background<R: Rng + ?Sized>(rng: &mut R) -> RgbImage {
    let s = BACKGROUND_SIZE;
    let horizon = rng.random_range(s / 4..s / 2);
    let sky_top = [rng.random_range(60.0..140.0), rng.random_range(110.0..180.0), rng.random_range(180.0..250.0)];
    let sky_low = [220.0, 225.0, 235.0];
    let field = [rng.random_range(30.0..120.0), rng.random_range(100.0..170.0), rng.random_range(30.0..90.0)];
    let lines = rng.random_range(2..6);
    let spacing = (s - horizon) / (lines + 1);
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.random_range(10..30))
        .map(|_| {
            let c = color(rng).map(f64::from);
            (rng.random_range(0.0..s as f64), rng.random_range(0.0..horizon as f64), rng.random_range(3.0..12.0), c)
        })
        .collect();
    let mut img = RgbImage::new(s, s);
    for (x, y, p) in img.enumerate_pixels_mut() {
        let base: [f64; 3] = if y < horizon {
            let t = y as f64 / horizon as f64;
            std::array::from_fn(|k| sky_top[k] + t * (sky_low[k] - sky_top[k]))
        } else if (y - horizon) % spacing < 2 {
            [240.0, 240.0, 240.0]
        } else {
            let shade = 1.0 - 0.3 * ((y - horizon) as f64 / (s - horizon) as f64);
            field.map(|c| c * shade)
        };
        let blob = blobs.iter().find(|(bx, by, r, _)| (x as f64 - bx).powi(2) + (y as f64 - by).powi(2) < r * r);
        *p = jitter(blob.map_or(base, |b| b.3), 6.0, rng);
    }
    img
}

/// Varied plausible poses: random local bone rotations with a random facing,
/// redrawn per bone until every bone respects the default joint limits.
pub fn starter_poses(n: usize, seed: u64) -> Vec<Pose3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limits = JointLimits::default();
    let rest = Pose3D::rest();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let spread: f64 = rng.random_range(0.2..0.9);
        let normal = Normal::new(0.0, spread).expect("positive spread");
        let draw_bone = |rng: &mut ChaCha8Rng| {
            let axis = Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
            UnitQuaternion::from_scaled_axis(axis)
        };
        let mut rot = BoneRotations([UnitQuaternion::identity(); NUM_BONES]);
        for b in 0..NUM_BONES {
            rot.0[b] = draw_bone(&mut rng);
        }
        let mut pose = None;
        for _ in 0..40 {
            let p = forward_kinematics(&rest, &rot, None);
            let bad = limits.violations(&p);
            if bad.is_empty() {
                pose = Some(p);
                break;
            }
            for name in bad {
                if let Some(b) = JointId::from_name(&name).and_then(JointId::bone) {
                    rot.0[b] = draw_bone(&mut rng).nlerp(&UnitQuaternion::identity(), 0.5);
                }
            }
        }
        let Some(p) = pose else { continue };
        // Whole-body facing and a small lean, applied after the limit check.
        let yaw = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
        let lean = UnitQuaternion::from_scaled_axis(Vector3::new(rng.random_range(-0.2..0.2), 0.0, rng.random_range(-0.2..0.2)));
        let r = yaw * lean;
        out.push(p.map_points(|q| r * q));
    }
    out
}

fn save_rgb(img: &RgbImage, path: &Path) -> Result<(), PipelineError> {
    img.save(path).map_err(|e| PipelineError::Runtime(format!("{}: {e}", path.display())))
}

/// Writes the starter tree:
/// `cloth/{upper,lower}/NN.png` + `NN_mask.png`, `extremities/{head,skin,shoe}NN.png`,
/// `backgrounds/bgNN.png` and `poses/starter.jsonl`.
pub fn write_starter_assets(dir: &Path, counts: &StarterCounts, seed: u64) -> Result<(), PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (category, n) in [(ClothCategory::Upper, counts.upper), (ClothCategory::Lower, counts.lower)] {
        let d = dir.join("cloth").join(category.dir_name());
        fs::create_dir_all(&d)?;
        for i in 0..n {
            let (img, mask) = garment(category, &mut rng);
            save_rgb(&img, &d.join(format!("{i:02}.png")))?;
            let m = d.join(format!("{i:02}_mask.png"));
            mask.save(&m).map_err(|e| PipelineError::Runtime(format!("{}: {e}", m.display())))?;
        }
    }
    let d = dir.join("extremities");
    fs::create_dir_all(&d)?;
    for i in 0..counts.extremities {
        save_rgb(&head(&mut rng), &d.join(format!("head{i:02}.png")))?;
        save_rgb(&skin(&mut rng), &d.join(format!("skin{i:02}.png")))?;
        save_rgb(&shoe(&mut rng), &d.join(format!("shoe{i:02}.png")))?;
    }
    let d = dir.join("backgrounds");
    fs::create_dir_all(&d)?;
    for i in 0..counts.backgrounds {
        save_rgb(&background(&mut rng), &d.join(format!("bg{i:02}.png")))?;
    }
    let d = dir.join("poses");
    fs::create_dir_all(&d)?;
    super::write_pose_records(&d.join("starter.jsonl"), &starter_poses(counts.poses, rng.random()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::texture::{extract_contour, SegmentedClothImage};

    #[test]
    fn garments_are_single_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for category in [ClothCategory::Upper, ClothCategory::Lower] {
            for _ in 0..20 {
                let (img, mask) = garment(category, &mut rng);
                let m = Mask::from_gray(&mask);
                let cloth = SegmentedClothImage::new("g".into(), img, m, category).unwrap();
                extract_contour(&cloth.mask).unwrap();
            }
        }
    }

    #[test]
    fn poses_respect_limits() {
        let poses = starter_poses(50, 3);
        assert_eq!(poses.len(), 50);
        let limits = JointLimits::default();
        for p in &poses {
            p.validate().unwrap();
            assert!(limits.check(p));
        }
        assert_eq!(starter_poses(5, 3), poses[..5].to_vec());
    }
}
