//! Skinned template bodies: shape variation, zero-twist inverse kinematics,
//! linear blend skinning and the upper/lower split used for texturing.

mod io;
mod template;

pub use io::{read_template, write_articulated_obj, write_template};
pub use template::{Segment, SegmentKind, Side, ATLAS_SIZE, WAIST_BAND};

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skeleton::{bones, swing_rotation, torso_frame, Frame, JointId, Pose3D, SkeletonError, NUM_BONES};

#[derive(Debug, Error)]
pub enum BodyError {
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("template i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed template: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    UpperCloth,
    LowerCloth,
    Head,
    Hands,
    Feet,
}

impl Region {
    pub fn is_cloth(self) -> bool {
        matches!(self, Region::UpperCloth | Region::LowerCloth)
    }

    pub fn is_skin(self) -> bool {
        matches!(self, Region::Head | Region::Hands)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
}

/// Immutable per-template data shared by every shaped or posed copy.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshTopology {
    pub triangles: Vec<[u32; 3]>,
    /// Atlas coordinates in `[0, 1]²`, `v` pointing down the atlas image.
    pub uvs: Vec<[f64; 2]>,
    pub regions: Vec<Region>,
    /// Up to four (bone, weight) pairs per vertex, weights summing to 1.
    pub weights: Vec<Vec<(u8, f64)>>,
    /// Canonical vertex for normal accumulation (UV seams duplicate positions).
    pub weld: Vec<u32>,
    pub segments: Vec<Segment>,
    /// Torso vertices within the waist overlap band of the seam.
    pub waist_band: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMesh {
    pub gender: Gender,
    pub topology: Arc<MeshTopology>,
    pub vertices: Vec<Vector3<f64>>,
    pub rest_pose: Pose3D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub gender: Gender,
    pub fitness: f64,
    /// Standing height in meters.
    pub height: f64,
}

pub const MIN_HEIGHT: f64 = 1.3;
pub const MAX_HEIGHT: f64 = 2.1;

impl ShapeParams {
    pub fn clamped(self) -> Self {
        ShapeParams {
            gender: self.gender,
            fitness: if self.fitness.is_finite() { self.fitness.clamp(0.0, 1.0) } else { 0.5 },
            height: if self.height.is_finite() { self.height.clamp(MIN_HEIGHT, MAX_HEIGHT) } else { 1.7 },
        }
    }

    /// Radial girth factor for this fitness level.
    pub fn girth(&self) -> f64 {
        0.9 + (1.15 - 0.9) * self.fitness
    }
}

impl TemplateMesh {
    /// Built-in procedural template for `gender`.
    pub fn builtin(gender: Gender) -> TemplateMesh {
        template::build(gender)
    }

    pub fn height(&self) -> f64 {
        let (lo, hi) = self
            .vertices
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.y), hi.max(v.y)));
        hi - lo
    }

    pub fn default_height(gender: Gender) -> f64 {
        template::build(gender).height()
    }

    /// Rest joint each vertex rotates about (start of its dominant bone).
    fn dominant_bone(&self, v: usize) -> usize {
        self.topology.weights[v]
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|&(b, _)| b as usize)
            .unwrap_or(0)
    }

    pub fn signed_volume(&self) -> f64 {
        signed_volume(&self.vertices, &self.topology.triangles)
    }
}

pub fn signed_volume(vertices: &[Vector3<f64>], triangles: &[[u32; 3]]) -> f64 {
    triangles
        .iter()
        .map(|t| {
            let a = vertices[t[0] as usize];
            let b = vertices[t[1] as usize];
            let c = vertices[t[2] as usize];
            a.dot(&b.cross(&c)) / 6.0
        })
        .sum()
}

/// Scales the template to the requested height and applies the fitness
/// girth radially about each cloth vertex's bone axis. The gender in
/// `params` selects the built-in template when it differs from `template`.
pub fn apply_shape(template: &TemplateMesh, params: ShapeParams) -> TemplateMesh {
    let params = params.clamped();
    let base = if params.gender == template.gender { template.clone() } else { TemplateMesh::builtin(params.gender) };
    let girth = params.girth();
    let rest = &base.rest_pose;
    let mut vertices = base.vertices.clone();
    for (i, v) in vertices.iter_mut().enumerate() {
        if !base.topology.regions[i].is_cloth() {
            continue;
        }
        let b = base.dominant_bone(i);
        let child = JointId::ALL[b + 1];
        let a = rest.joint(child.parent());
        let e = rest.joint(child);
        let axis = e - a;
        let t = ((*v - a).dot(&axis) / axis.norm_squared()).clamp(0.0, 1.0);
        let c = a + axis * t;
        *v = c + (*v - c) * girth;
    }
    let scale = params.height / base.height();
    for v in &mut vertices {
        *v *= scale;
    }
    let rest_pose = base.rest_pose.map_points(|p| p * scale);
    TemplateMesh { gender: base.gender, topology: base.topology.clone(), vertices, rest_pose }
}

/// Per-bone local rotations, hierarchy (bone index) order.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneRotations(pub [UnitQuaternion<f64>; NUM_BONES]);

impl BoneRotations {
    pub fn identity() -> Self {
        BoneRotations([UnitQuaternion::identity(); NUM_BONES])
    }

    /// Accumulated rotation of every bone (parent rotations applied first).
    pub fn global(&self) -> [UnitQuaternion<f64>; NUM_BONES] {
        let mut out = [UnitQuaternion::identity(); NUM_BONES];
        for bone in bones() {
            let b = bone.index();
            out[b] = match bone.parent_bone() {
                Some(pb) => out[pb] * self.0[b],
                None => self.0[b],
            };
        }
        out
    }

    /// Pre-multiplies a rigid rotation at the root.
    pub fn rotated_at_root(&self, r: &UnitQuaternion<f64>) -> Self {
        let mut out = self.clone();
        for bone in bones() {
            if bone.parent_bone().is_none() {
                out.0[bone.index()] = r * self.0[bone.index()];
            }
        }
        out
    }
}

/// Forward kinematics of `rest` under `rotations`, optionally overriding
/// bone lengths. The pelvis stays at its rest position.
pub fn forward_kinematics(rest: &Pose3D, rotations: &BoneRotations, lengths: Option<&[f64; NUM_BONES]>) -> Pose3D {
    let global = rotations.global();
    let mut joints = rest.joints;
    for bone in bones() {
        let b = bone.index();
        let mut offset = rest.joint(bone.child) - rest.joint(bone.parent);
        if let Some(l) = lengths {
            offset = offset.normalize() * l[b];
        }
        joints[bone.child.code()] = joints[bone.parent.code()] + global[b] * offset;
    }
    Pose3D { joints, frame: rest.frame }
}

/// Closed-form hierarchical IK.
///
/// Bones leaving the pelvis carry the full torso orientation (so the body
/// can turn about its own spine); every other bone gets the zero-twist swing
/// aligning its rest direction with the target direction in the parent
/// bone's frame.
pub fn solve_ik(template: &TemplateMesh, target: &Pose3D) -> Result<BoneRotations, BodyError> {
    let rest = &template.rest_pose;
    let target_dirs = target.bone_directions()?;
    let rest_dirs = rest.bone_directions()?;
    let root_rot = {
        let rest_frame = torso_frame(rest)?;
        let target_frame = torso_frame(target)?;
        let m = target_frame * rest_frame.transpose();
        UnitQuaternion::from_matrix(&m)
    };
    let mut local = [UnitQuaternion::identity(); NUM_BONES];
    let mut global = [UnitQuaternion::identity(); NUM_BONES];
    for bone in bones() {
        let b = bone.index();
        let (parent_rot, rest_in_parent) = match bone.parent_bone() {
            Some(pb) => (global[pb], rest_dirs[b]),
            None => (UnitQuaternion::identity(), root_rot * rest_dirs[b]),
        };
        let desired = parent_rot.inverse_transform_vector(&target_dirs[b]);
        let swing = swing_rotation(&rest_in_parent, &desired);
        local[b] = match bone.parent_bone() {
            Some(_) => swing,
            None => swing * root_rot,
        };
        global[b] = parent_rot * local[b];
    }
    Ok(BoneRotations(local))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArticulatedMesh {
    pub topology: Arc<MeshTopology>,
    pub vertices: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    /// Skeleton joints after forward kinematics.
    pub joints: Pose3D,
}

impl ArticulatedMesh {
    /// Applies a rigid transform `x ↦ R·x + t` to geometry and joints.
    pub fn transformed(&self, r: &nalgebra::Matrix3<f64>, t: &Vector3<f64>, scale: f64) -> ArticulatedMesh {
        ArticulatedMesh {
            topology: self.topology.clone(),
            vertices: self.vertices.iter().map(|v| r * v * scale + t).collect(),
            normals: self.normals.iter().map(|n| r * n).collect(),
            joints: self.joints.map_points(|p| r * p * scale + t),
        }
    }

    pub fn from_template(template: &TemplateMesh) -> ArticulatedMesh {
        ArticulatedMesh {
            topology: template.topology.clone(),
            normals: vertex_normals(&template.vertices, &template.topology),
            vertices: template.vertices.clone(),
            joints: template.rest_pose.clone(),
        }
    }
}

pub fn vertex_normals(vertices: &[Vector3<f64>], topo: &MeshTopology) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    for t in &topo.triangles {
        let [a, b, c] = t.map(|i| i as usize);
        let n = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        for i in [a, b, c] {
            acc[topo.weld[i] as usize] += n;
        }
    }
    (0..vertices.len())
        .map(|i| {
            let n = acc[topo.weld[i] as usize];
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                Vector3::zeros()
            }
        })
        .collect()
}

/// Linear blend skinning.
pub fn skin_mesh(template: &TemplateMesh, rotations: &BoneRotations) -> ArticulatedMesh {
    skin_mesh_with_lengths(template, rotations, None)
}

/// Skinning with optional per-bone lengths: joints follow the given lengths
/// while vertices keep their offsets from the start joint of each bone.
pub fn skin_mesh_with_lengths(
    template: &TemplateMesh,
    rotations: &BoneRotations,
    lengths: Option<&[f64; NUM_BONES]>,
) -> ArticulatedMesh {
    let rest = &template.rest_pose;
    let global = rotations.global();
    let joints = forward_kinematics(rest, rotations, lengths);
    let starts: [(Vector3<f64>, Vector3<f64>); NUM_BONES] = std::array::from_fn(|b| {
        let parent = JointId::ALL[b + 1].parent();
        (rest.joint(parent), joints.joint(parent))
    });
    let vertices: Vec<Vector3<f64>> = template
        .vertices
        .iter()
        .zip(&template.topology.weights)
        .map(|(v, ws)| {
            if let [(b, _)] = ws.as_slice() {
                let b = *b as usize;
                return starts[b].1 + global[b] * (v - starts[b].0);
            }
            ws.iter().fold(Vector3::zeros(), |acc, &(b, w)| {
                let b = b as usize;
                acc + (starts[b].1 + global[b] * (v - starts[b].0)) * w
            })
        })
        .collect();
    ArticulatedMesh {
        normals: vertex_normals(&vertices, &template.topology),
        topology: template.topology.clone(),
        vertices,
        joints: Pose3D { frame: Frame::Body, ..joints },
    }
}

/// Vertex subset of a mesh; indices refer to the full mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct SubMesh {
    pub vertices: BTreeSet<u32>,
    pub triangles: Vec<[u32; 3]>,
}

impl SubMesh {
    fn from_vertices(vertices: BTreeSet<u32>, topo: &MeshTopology) -> SubMesh {
        let triangles = topo.triangles.iter().filter(|t| t.iter().all(|i| vertices.contains(i))).copied().collect();
        SubMesh { vertices, triangles }
    }
}

/// Vertices of the overlap band around the waist seam.
pub fn overlap_band(template: &TemplateMesh) -> BTreeSet<u32> {
    template.topology.waist_band.clone()
}

/// Upper and lower clothing parts, both including the waist overlap band.
pub fn split_parts(template: &TemplateMesh) -> (SubMesh, SubMesh) {
    let topo = &template.topology;
    let band = overlap_band(template);
    let pick = |region: Region| -> BTreeSet<u32> {
        (0..template.vertices.len() as u32)
            .filter(|&i| topo.regions[i as usize] == region || band.contains(&i))
            .collect()
    };
    (SubMesh::from_vertices(pick(Region::UpperCloth), topo), SubMesh::from_vertices(pick(Region::LowerCloth), topo))
}
