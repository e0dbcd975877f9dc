use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::CameraParams;
use crate::skeleton::{flatten, normalize_pose, unflatten, Frame, Pose3D, SkeletonError};

/// Camera block of an annotation line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub elev: f64,
    pub azim: f64,
    pub inplane: f64,
    pub distance: f64,
    pub focal: f64,
    pub principal: [f64; 2],
    pub width: u32,
    pub height: u32,
    pub target: [f64; 3],
}

impl From<&CameraParams> for CameraRecord {
    fn from(c: &CameraParams) -> Self {
        CameraRecord {
            elev: c.elevation_deg,
            azim: c.azimuth_deg,
            inplane: c.in_plane_deg,
            distance: c.distance,
            focal: c.focal,
            principal: c.principal,
            width: c.width,
            height: c.height,
            target: c.target,
        }
    }
}

impl From<&CameraRecord> for CameraParams {
    fn from(c: &CameraRecord) -> Self {
        CameraParams {
            elevation_deg: c.elev,
            azimuth_deg: c.azim,
            in_plane_deg: c.inplane,
            distance: c.distance,
            focal: c.focal,
            principal: c.principal,
            width: c.width,
            height: c.height,
            target: c.target,
        }
    }
}

/// Where each ingredient of a sample came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleProvenance {
    pub pose: String,
    pub body: usize,
    pub atlas: usize,
    pub background: String,
    pub seed: u64,
}

/// One annotation line. Field order is the serialized order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image: String,
    /// Camera-frame joints relative to the pelvis, scaled to unit total bone length.
    pub pose45_camera_normalized: Vec<f64>,
    /// Total bone length of the camera-frame pose in meters.
    pub skeleton_length: f64,
    /// Pelvis position in camera coordinates, meters.
    pub root_camera: [f64; 3],
    pub camera: CameraRecord,
    pub provenance: SampleProvenance,
}

impl Annotation {
    pub fn new(
        image: String,
        camera_pose: &Pose3D,
        camera: &CameraParams,
        provenance: SampleProvenance,
    ) -> Result<Self, SkeletonError> {
        let root = camera_pose.joints[0];
        let normalized = normalize_pose(&camera_pose.root_centered())?;
        Ok(Annotation {
            image,
            pose45_camera_normalized: flatten(&normalized).0,
            skeleton_length: camera_pose.skeleton_length(),
            root_camera: root.into(),
            camera: camera.into(),
            provenance,
        })
    }

    pub fn normalized_pose(&self) -> Result<Pose3D, SkeletonError> {
        unflatten(&self.pose45_camera_normalized, Frame::Camera)
    }

    /// Metric camera-frame pose.
    pub fn camera_pose(&self) -> Result<Pose3D, SkeletonError> {
        let root = nalgebra::Vector3::from(self.root_camera);
        let p = self.normalized_pose()?;
        Ok(p.map_points(|q| q * self.skeleton_length + root))
    }

    pub fn camera_params(&self) -> CameraParams {
        (&self.camera).into()
    }
}

/// A rendered and annotated training image.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderSample {
    pub image: RgbImage,
    pub alpha: GrayImage,
    pub camera: CameraParams,
    pub annotation: Annotation,
}
