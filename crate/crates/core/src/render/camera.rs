use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::RenderError;
use crate::skeleton::{Frame, Pose3D, NUM_JOINTS};

pub const MIN_ELEVATION: f64 = -30.0;
pub const MAX_ELEVATION: f64 = 80.0;

/// Orbit camera looking at `target`.
///
/// Camera axes follow the image: x right, y down, z along the view ray.
/// Azimuth 0 and elevation 0 put the camera on the body's +z (facing) side;
/// positive elevation lifts it above the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub in_plane_deg: f64,
    pub distance: f64,
    pub focal: f64,
    pub principal: [f64; 2],
    pub width: u32,
    pub height: u32,
    pub target: [f64; 3],
}

impl CameraParams {
    /// Frontal camera with the principal point at the image center.
    pub fn frontal(width: u32, height: u32, focal: f64, distance: f64, target: Vector3<f64>) -> Self {
        CameraParams {
            elevation_deg: 0.0,
            azimuth_deg: 0.0,
            in_plane_deg: 0.0,
            distance,
            focal,
            principal: [width as f64 / 2.0, height as f64 / 2.0],
            width,
            height,
            target: target.into(),
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let finite = [self.elevation_deg, self.azimuth_deg, self.in_plane_deg, self.distance, self.focal]
            .iter()
            .chain(&self.principal)
            .chain(&self.target)
            .all(|v| v.is_finite());
        if !finite || !(self.distance > 0.0) || !(self.focal > 0.0) || self.width == 0 || self.height == 0 {
            return Err(RenderError::BadCamera(format!("{self:?}")));
        }
        Ok(())
    }

    fn offset_direction(&self) -> Vector3<f64> {
        let (el, az) = (self.elevation_deg.to_radians(), self.azimuth_deg.to_radians());
        Vector3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos())
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.target) + self.offset_direction() * self.distance
    }

    /// World-to-camera rotation (rows are the camera axes in world coordinates).
    pub fn rotation(&self) -> Matrix3<f64> {
        let forward = -self.offset_direction();
        let up = Vector3::y();
        let mut down = -(up - forward * up.dot(&forward));
        if down.norm() < 1e-9 {
            down = Vector3::z();
        }
        let down = down.normalize();
        let right = down.cross(&forward);
        let base = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let (s, c) = self.in_plane_deg.to_radians().sin_cos();
        let roll = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        roll * base
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * (p - self.center())
    }

    pub fn pose_to_camera(&self, pose: &Pose3D) -> Pose3D {
        let r = self.rotation();
        let c = self.center();
        let mut out = pose.map_points(|p| r * (p - c));
        out.frame = Frame::Camera;
        out
    }

    /// Pinhole projection of a camera-frame point.
    pub fn project(&self, p: &Vector3<f64>) -> Result<[f64; 2], RenderError> {
        if !(p.z > 0.0) {
            return Err(RenderError::BehindCamera(p.z));
        }
        Ok([self.focal * p.x / p.z + self.principal[0], self.focal * p.y / p.z + self.principal[1]])
    }

    pub fn contains(&self, px: &[f64; 2]) -> bool {
        px[0] >= 0.0 && px[1] >= 0.0 && px[0] < self.width as f64 && px[1] < self.height as f64
    }

    /// Sets `target` to the bounding-box center of `points` and picks the
    /// distance at which their projection spans `fill` of the frame.
    pub fn fitted(mut self, points: &[Vector3<f64>], fill: f64) -> Result<CameraParams, RenderError> {
        if points.is_empty() {
            return Err(RenderError::EmptyExtent);
        }
        let (lo, hi) = points.iter().fold(
            (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), p| (lo.inf(p), hi.sup(p)),
        );
        self.target = ((lo + hi) / 2.0).into();
        let radius = points.iter().map(|p| (p - Vector3::from(self.target)).norm()).fold(0.0, f64::max).max(1e-6);
        let size = self.width.min(self.height) as f64;
        self.distance = (radius * self.focal / (fill * size / 2.0)).max(radius * 1.05);
        let frame = [self.width as f64, self.height as f64];
        for _ in 0..8 {
            let span = self.relative_span(points, frame)?;
            let next = (self.distance * span / fill).max(radius * 1.05);
            if (next - self.distance).abs() < 1e-9 * self.distance {
                break;
            }
            self.distance = next;
        }
        while !self.all_inside(points) {
            self.distance *= 1.1;
        }
        Ok(self)
    }

    fn relative_span(&self, points: &[Vector3<f64>], frame: [f64; 2]) -> Result<f64, RenderError> {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            let q = self.project(&self.to_camera(p))?;
            for k in 0..2 {
                lo[k] = lo[k].min(q[k]);
                hi[k] = hi[k].max(q[k]);
            }
        }
        Ok(((hi[0] - lo[0]) / frame[0]).max((hi[1] - lo[1]) / frame[1]))
    }

    fn all_inside(&self, points: &[Vector3<f64>]) -> bool {
        points.iter().all(|p| self.project(&self.to_camera(p)).map(|q| self.contains(&q)).unwrap_or(false))
    }
}

/// Standard deviations (degrees) of the view-angle perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraNoise {
    pub elevation: f64,
    pub azimuth: f64,
    pub in_plane: f64,
}

impl Default for CameraNoise {
    fn default() -> Self {
        CameraNoise { elevation: 15.0, azimuth: 45.0, in_plane: 15.0 }
    }
}

/// Adds independent Gaussian noise to the three view angles. Elevation is
/// clamped to `[MIN_ELEVATION, MAX_ELEVATION]`; azimuth is not wrapped.
pub fn perturb_camera<R: Rng + ?Sized>(base: &CameraParams, noise: &CameraNoise, rng: &mut R) -> CameraParams {
    let mut draw = |sd: f64| -> f64 {
        if sd > 0.0 {
            Normal::new(0.0, sd).map(|n| n.sample(rng)).unwrap_or(0.0)
        } else {
            0.0
        }
    };
    let de = draw(noise.elevation);
    let da = draw(noise.azimuth);
    let dr = draw(noise.in_plane);
    let mut out = *base;
    if noise.elevation > 0.0 {
        out.elevation_deg = (base.elevation_deg + de).clamp(MIN_ELEVATION, MAX_ELEVATION);
    }
    out.azimuth_deg += da;
    out.in_plane_deg += dr;
    out
}

/// Pinhole projection of all joints of a camera-frame pose.
pub fn project_joints(pose: &Pose3D, camera: &CameraParams) -> Result<[[f64; 2]; NUM_JOINTS], RenderError> {
    let mut out = [[0.0; 2]; NUM_JOINTS];
    for (o, p) in out.iter_mut().zip(&pose.joints) {
        *o = camera.project(p)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraParams {
        CameraParams::frontal(64, 48, 50.0, 3.0, Vector3::zeros())
    }

    #[test]
    fn rotation_is_proper() {
        let mut c = cam();
        for (el, az, r) in [(0.0, 0.0, 0.0), (35.0, -120.0, 20.0), (-30.0, 400.0, -90.0), (80.0, 10.0, 5.0)] {
            c.elevation_deg = el;
            c.azimuth_deg = az;
            c.in_plane_deg = r;
            let m = c.rotation();
            assert!((m * m.transpose() - Matrix3::identity()).norm() < 1e-12);
            assert!((m.determinant() - 1.0).abs() < 1e-12);
            let t = c.to_camera(&Vector3::from(c.target));
            assert!(t.x.abs() < 1e-12 && t.y.abs() < 1e-12 && (t.z - c.distance).abs() < 1e-12);
        }
    }

    #[test]
    fn frontal_orientation() {
        let c = cam();
        let left = c.to_camera(&Vector3::x());
        let up = c.to_camera(&Vector3::y());
        assert!(left.x > 0.0, "body left appears on image right");
        assert!(up.y < 0.0, "up is image-up");
    }

    #[test]
    fn on_axis_projects_to_principal_point() {
        let c = cam();
        let p = c.project(&Vector3::new(0.0, 0.0, 4.2)).unwrap();
        assert_eq!(p, c.principal);
    }

    #[test]
    fn focal_scales_offsets() {
        let c = cam();
        let mut c2 = c;
        c2.focal *= 2.0;
        let q = Vector3::new(0.3, -0.2, 2.0);
        let a = c.project(&q).unwrap();
        let b = c2.project(&q).unwrap();
        for k in 0..2 {
            assert!(((b[k] - c.principal[k]) - 2.0 * (a[k] - c.principal[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_depth_rejected() {
        let mut pose = Pose3D::rest();
        pose.frame = Frame::Camera;
        pose.joints[3].z = 0.0;
        assert!(matches!(project_joints(&pose, &cam()), Err(RenderError::BehindCamera(_))));
    }

    #[test]
    fn zero_noise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = CameraNoise { elevation: 0.0, azimuth: 0.0, in_plane: 0.0 };
        assert_eq!(perturb_camera(&cam(), &noise, &mut rng), cam());
    }

    #[test]
    fn perturbation_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let draws: Vec<CameraParams> =
            (0..n).map(|_| perturb_camera(&cam(), &CameraNoise::default(), &mut rng)).collect();
        let stats = |f: &dyn Fn(&CameraParams) -> f64| {
            let xs: Vec<f64> = draws.iter().map(f).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            (m, v.sqrt())
        };
        let (ma, sa) = stats(&|c| c.azimuth_deg);
        assert!((42.75..=47.25).contains(&sa), "{sa}");
        assert!(ma.abs() <= 3.0 * 45.0 / (n as f64).sqrt());
        let (mr, sr) = stats(&|c| c.in_plane_deg);
        assert!((14.25..=15.75).contains(&sr));
        assert!(mr.abs() <= 3.0 * 15.0 / (n as f64).sqrt());
        let (me, _) = stats(&|c| c.elevation_deg);
        assert!(me.abs() <= 3.0 * 15.0 / (n as f64).sqrt());
        assert!(draws.iter().all(|c| (MIN_ELEVATION..=MAX_ELEVATION).contains(&c.elevation_deg)));
    }

    #[test]
    fn fitted_camera_frames_points() {
        let pts: Vec<Vector3<f64>> = Pose3D::rest().joints.to_vec();
        let mut c = cam();
        c.elevation_deg = 20.0;
        c.azimuth_deg = 70.0;
        c.in_plane_deg = 30.0;
        let c = c.fitted(&pts, 0.75).unwrap();
        assert!(c.all_inside(&pts));
        let span = c.relative_span(&pts, [64.0, 48.0]).unwrap();
        assert!((0.6..=0.9).contains(&span), "{span}");
    }
}
