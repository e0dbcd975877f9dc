//! Skeleton topology, 3D pose representation, normalization, alignment and
//! error metrics.
//!
//! Joint order (stable codes 0..14):
//!
//! | code | joint      | parent     |
//! |------|------------|------------|
//! | 0    | pelvis     | (root)     |
//! | 1    | neck       | pelvis     |
//! | 2    | head       | neck       |
//! | 3    | l_shoulder | neck       |
//! | 4    | l_elbow    | l_shoulder |
//! | 5    | l_wrist    | l_elbow    |
//! | 6    | r_shoulder | neck       |
//! | 7    | r_elbow    | r_shoulder |
//! | 8    | r_wrist    | r_elbow    |
//! | 9    | l_hip      | pelvis     |
//! | 10   | l_knee     | l_hip      |
//! | 11   | l_ankle    | l_knee     |
//! | 12   | r_hip      | pelvis     |
//! | 13   | r_knee     | r_hip      |
//! | 14   | r_ankle    | r_knee     |
//!
//! Every non-root joint owns exactly one bone (parent → joint), so bone `b`
//! ends at joint code `b + 1`.
//!
//! Body frame convention: `+y` up, `+x` towards the subject's left, `+z`
//! the direction the subject faces.

use nalgebra::{Matrix3, SymmetricEigen, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_JOINTS: usize = 15;
pub const NUM_BONES: usize = 14;
pub const POSE_DIM: usize = 3 * NUM_JOINTS;

/// Bones shorter than this are treated as degenerate.
pub const MIN_BONE_LENGTH: f64 = 1e-9;

/// Σ bone lengths after [`normalize_pose`].
pub const NORMALIZED_SKELETON_LENGTH: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkeletonError {
    #[error("pose vector must have {POSE_DIM} values, got {0}")]
    WrongLength(usize),
    #[error("expected {NUM_JOINTS} joints, got {0}")]
    WrongJointCount(usize),
    #[error("degenerate bone {0} (length {1:e})")]
    DegenerateBone(&'static str, f64),
    #[error("non-finite coordinate at joint {0}")]
    NonFinite(&'static str),
    #[error("frame mismatch: {0:?} vs {1:?}")]
    FrameMismatch(Frame, Frame),
    #[error("point configuration is rank deficient (collinear or coincident joints)")]
    RankDeficient,
    #[error("error list is empty")]
    EmptyErrors,
    #[error("thresholds must be nonnegative and strictly increasing")]
    BadThresholds,
    #[error("unknown joint name `{0}`")]
    UnknownJoint(String),
    #[error("invalid joint-limit table: {0}")]
    BadLimits(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum JointId {
    Pelvis = 0,
    Neck = 1,
    Head = 2,
    LShoulder = 3,
    LElbow = 4,
    LWrist = 5,
    RShoulder = 6,
    RElbow = 7,
    RWrist = 8,
    LHip = 9,
    LKnee = 10,
    LAnkle = 11,
    RHip = 12,
    RKnee = 13,
    RAnkle = 14,
}

impl JointId {
    pub const ALL: [JointId; NUM_JOINTS] = [
        JointId::Pelvis,
        JointId::Neck,
        JointId::Head,
        JointId::LShoulder,
        JointId::LElbow,
        JointId::LWrist,
        JointId::RShoulder,
        JointId::RElbow,
        JointId::RWrist,
        JointId::LHip,
        JointId::LKnee,
        JointId::LAnkle,
        JointId::RHip,
        JointId::RKnee,
        JointId::RAnkle,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<JointId> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            JointId::Pelvis => "pelvis",
            JointId::Neck => "neck",
            JointId::Head => "head",
            JointId::LShoulder => "l_shoulder",
            JointId::LElbow => "l_elbow",
            JointId::LWrist => "l_wrist",
            JointId::RShoulder => "r_shoulder",
            JointId::RElbow => "r_elbow",
            JointId::RWrist => "r_wrist",
            JointId::LHip => "l_hip",
            JointId::LKnee => "l_knee",
            JointId::LAnkle => "l_ankle",
            JointId::RHip => "r_hip",
            JointId::RKnee => "r_knee",
            JointId::RAnkle => "r_ankle",
        }
    }

    pub fn from_name(name: &str) -> Option<JointId> {
        Self::ALL.iter().copied().find(|j| j.name() == name)
    }

    /// Parent joint; the root maps to itself.
    pub fn parent(self) -> JointId {
        use JointId::*;
        match self {
            Pelvis => Pelvis,
            Neck | LHip | RHip => Pelvis,
            Head | LShoulder | RShoulder => Neck,
            LElbow => LShoulder,
            LWrist => LElbow,
            RElbow => RShoulder,
            RWrist => RElbow,
            LKnee => LHip,
            LAnkle => LKnee,
            RKnee => RHip,
            RAnkle => RKnee,
        }
    }

    /// Index of the bone ending at this joint (`None` for the root).
    pub fn bone(self) -> Option<usize> {
        self.code().checked_sub(1)
    }

    /// Mirror joint across the sagittal plane.
    pub fn mirror(self) -> JointId {
        use JointId::*;
        match self {
            LShoulder => RShoulder,
            LElbow => RElbow,
            LWrist => RWrist,
            RShoulder => LShoulder,
            RElbow => LElbow,
            RWrist => LWrist,
            LHip => RHip,
            LKnee => RKnee,
            LAnkle => RAnkle,
            RHip => LHip,
            RKnee => LKnee,
            RAnkle => LAnkle,
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bone {
    pub parent: JointId,
    pub child: JointId,
}

impl Bone {
    pub fn index(self) -> usize {
        self.child.code() - 1
    }

    /// Bone that ends where this one starts, if any.
    pub fn parent_bone(self) -> Option<usize> {
        self.parent.bone()
    }

    pub fn name(self) -> &'static str {
        self.child.name()
    }
}

/// Tree of the 15 joints rooted at the pelvis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonTopology {
    pub parent: [JointId; NUM_JOINTS],
    pub bones: [Bone; NUM_BONES],
}

impl SkeletonTopology {
    pub fn standard() -> Self {
        let parent = JointId::ALL.map(JointId::parent);
        let bones = std::array::from_fn(|b| {
            let child = JointId::ALL[b + 1];
            Bone { parent: child.parent(), child }
        });
        SkeletonTopology { parent, bones }
    }
}

pub fn bones() -> [Bone; NUM_BONES] {
    SkeletonTopology::standard().bones
}

/// Bone length (meters) of the canonical skeleton, by bone index.
pub const CANONICAL_BONE_LENGTHS: [f64; NUM_BONES] = [
    0.50, // neck (spine)
    0.22, // head
    0.18, // l_shoulder (clavicle)
    0.28, // l_elbow (upper arm)
    0.26, // l_wrist (forearm)
    0.18, // r_shoulder
    0.28, // r_elbow
    0.26, // r_wrist
    0.10, // l_hip
    0.44, // l_knee (thigh)
    0.42, // l_ankle (shin)
    0.10, // r_hip
    0.44, // r_knee
    0.42, // r_ankle
];

/// Unit bone directions of the rest (T-)pose, by bone index.
pub fn rest_directions() -> [Vector3<f64>; NUM_BONES] {
    let up = Vector3::y();
    let down = -Vector3::y();
    let left = Vector3::x();
    let right = -Vector3::x();
    [up, up, left, left, left, right, right, right, left, down, down, right, down, down]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Body,
    Camera,
}

/// 15 joint positions in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3D {
    pub joints: [Vector3<f64>; NUM_JOINTS],
    pub frame: Frame,
}

impl Pose3D {
    pub fn new(joints: [Vector3<f64>; NUM_JOINTS], frame: Frame) -> Self {
        Pose3D { joints, frame }
    }

    pub fn zeros(frame: Frame) -> Self {
        Pose3D { joints: [Vector3::zeros(); NUM_JOINTS], frame }
    }

    /// Canonical T-pose with the pelvis at the origin.
    pub fn rest() -> Self {
        Self::from_bones(
            Vector3::zeros(),
            &rest_directions(),
            &CANONICAL_BONE_LENGTHS,
            Frame::Body,
        )
    }

    /// Forward kinematics from per-bone unit directions and lengths.
    pub fn from_bones(
        root: Vector3<f64>,
        directions: &[Vector3<f64>; NUM_BONES],
        lengths: &[f64; NUM_BONES],
        frame: Frame,
    ) -> Self {
        let mut joints = [Vector3::zeros(); NUM_JOINTS];
        joints[0] = root;
        // Parents always precede children in code order.
        for b in 0..NUM_BONES {
            let child = b + 1;
            let parent = JointId::ALL[child].parent().code();
            joints[child] = joints[parent] + directions[b] * lengths[b];
        }
        Pose3D { joints, frame }
    }

    pub fn joint(&self, j: JointId) -> Vector3<f64> {
        self.joints[j.code()]
    }

    pub fn bone_vector(&self, b: usize) -> Vector3<f64> {
        let child = JointId::ALL[b + 1];
        self.joints[child.code()] - self.joints[child.parent().code()]
    }

    pub fn bone_lengths(&self) -> [f64; NUM_BONES] {
        std::array::from_fn(|b| self.bone_vector(b).norm())
    }

    pub fn skeleton_length(&self) -> f64 {
        self.bone_lengths().iter().sum()
    }

    /// Unit bone directions; fails on degenerate bones.
    pub fn bone_directions(&self) -> Result<[Vector3<f64>; NUM_BONES], SkeletonError> {
        let mut out = [Vector3::zeros(); NUM_BONES];
        for (b, d) in out.iter_mut().enumerate() {
            let v = self.bone_vector(b);
            let len = v.norm();
            if !(len > MIN_BONE_LENGTH) {
                return Err(SkeletonError::DegenerateBone(JointId::ALL[b + 1].name(), len));
            }
            *d = v / len;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), SkeletonError> {
        for (j, p) in JointId::ALL.iter().zip(&self.joints) {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(SkeletonError::NonFinite(j.name()));
            }
        }
        self.bone_directions().map(|_| ())
    }

    pub fn map_points(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Pose3D {
        Pose3D { joints: self.joints.each_ref().map(f), frame: self.frame }
    }

    pub fn translated(&self, t: Vector3<f64>) -> Pose3D {
        self.map_points(|p| p + t)
    }

    /// Pose with the pelvis moved to the origin.
    pub fn root_centered(&self) -> Pose3D {
        self.translated(-self.joints[0])
    }

    pub fn to_record(&self) -> PoseRecord {
        PoseRecord {
            frame: self.frame,
            joints: self.joints.iter().map(|p| [p.x, p.y, p.z]).collect(),
        }
    }

    pub fn from_record(rec: &PoseRecord) -> Result<Pose3D, SkeletonError> {
        if rec.joints.len() != NUM_JOINTS {
            return Err(SkeletonError::WrongJointCount(rec.joints.len()));
        }
        let joints = std::array::from_fn(|j| Vector3::from(rec.joints[j]));
        Ok(Pose3D { joints, frame: rec.frame })
    }
}

/// On-disk pose format: `{"frame": "body"|"camera", "joints": [[x,y,z] × 15]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame: Frame,
    pub joints: Vec<[f64; 3]>,
}

/// Flat 45-dim encoding (x, y, z per joint in joint-code order).
#[derive(Debug, Clone, PartialEq)]
pub struct PoseVector(pub Vec<f64>);

impl PoseVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SkeletonError> {
        if values.len() != POSE_DIM {
            return Err(SkeletonError::WrongLength(values.len()));
        }
        Ok(PoseVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn flatten(pose: &Pose3D) -> PoseVector {
    PoseVector(pose.joints.iter().flat_map(|p| [p.x, p.y, p.z]).collect())
}

pub fn unflatten(v: &[f64], frame: Frame) -> Result<Pose3D, SkeletonError> {
    if v.len() != POSE_DIM {
        return Err(SkeletonError::WrongLength(v.len()));
    }
    let joints = std::array::from_fn(|j| Vector3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2]));
    Ok(Pose3D { joints, frame })
}

/// Scales the pose about the pelvis so that the bone lengths sum to
/// [`NORMALIZED_SKELETON_LENGTH`].
pub fn normalize_pose(pose: &Pose3D) -> Result<Pose3D, SkeletonError> {
    pose.validate()?;
    let factor = NORMALIZED_SKELETON_LENGTH / pose.skeleton_length();
    let root = pose.joints[0];
    let mut out = pose.map_points(|p| root + (p - root) * factor);
    out.joints[0] = root;
    Ok(out)
}

/// Proper similarity `x ↦ s·R·x + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    pub fn apply_pose(&self, pose: &Pose3D) -> Pose3D {
        pose.map_points(|p| self.apply(p))
    }

    pub fn is_proper(&self, tol: f64) -> bool {
        let r = &self.rotation;
        self.scale > 0.0
            && (r.transpose() * r - Matrix3::identity()).abs().max() <= tol
            && (r.determinant() - 1.0).abs() <= tol
    }
}

/// Least-squares similarity (Umeyama) taking `source` onto `target`.
/// Reflections are excluded by flipping the weakest singular direction.
pub fn similarity_align(
    source: &Pose3D,
    target: &Pose3D,
) -> Result<(SimilarityTransform, Pose3D), SkeletonError> {
    let t = similarity_fit(&source.joints, &target.joints)?;
    let aligned = Pose3D { frame: target.frame, ..t.apply_pose(source) };
    Ok((t, aligned))
}

/// Point-set version of [`similarity_align`].
pub fn similarity_fit(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
) -> Result<SimilarityTransform, SkeletonError> {
    let n = source.len().min(target.len()) as f64;
    let mu_s = source.iter().sum::<Vector3<f64>>() / n;
    let mu_t = target.iter().sum::<Vector3<f64>>() / n;

    let mut cov_s = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    let mut var_s = 0.0;
    let mut var_t = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = s - mu_s;
        let dt = t - mu_t;
        cov_s += ds * ds.transpose();
        cross += dt * ds.transpose();
        var_s += ds.norm_squared();
        var_t += dt.norm_squared();
    }
    cov_s /= n;
    cross /= n;
    var_s /= n;
    var_t /= n;

    let scale_ref = var_s.max(var_t).max(f64::MIN_POSITIVE);
    if var_t <= 1e-18 * scale_ref.max(1.0) || var_s <= 1e-300 {
        return Err(SkeletonError::RankDeficient);
    }
    // Collinear sources leave the rotation about their line undetermined.
    let eig = SymmetricEigen::new(cov_s);
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[1] <= 1e-12 * ev[0] {
        return Err(SkeletonError::RankDeficient);
    }

    let svd = cross.svd(true, true);
    let u = svd.u.ok_or(SkeletonError::RankDeficient)?;
    let v_t = svd.v_t.ok_or(SkeletonError::RankDeficient)?;
    let mut d = svd.singular_values;
    let mut sign = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        // nalgebra sorts singular values in descending order.
        sign[(2, 2)] = -1.0;
        d[2] = -d[2];
    }
    let rotation = u * sign * v_t;
    let scale = d.sum() / var_s;
    let translation = mu_t - rotation * mu_s * scale;
    Ok(SimilarityTransform { scale, rotation, translation })
}

/// Per-joint Euclidean distances and their sum.
pub fn pose_error(pred: &Pose3D, gt: &Pose3D) -> Result<([f64; NUM_JOINTS], f64), SkeletonError> {
    if pred.frame != gt.frame {
        return Err(SkeletonError::FrameMismatch(pred.frame, gt.frame));
    }
    let per_joint: [f64; NUM_JOINTS] = std::array::from_fn(|j| (pred.joints[j] - gt.joints[j]).norm());
    Ok((per_joint, per_joint.iter().sum()))
}

/// Fraction of (pose, joint) pairs with error ≤ each threshold.
pub fn pck_curve(errors: &[[f64; NUM_JOINTS]], thresholds: &[f64]) -> Result<Vec<f64>, SkeletonError> {
    if errors.is_empty() {
        return Err(SkeletonError::EmptyErrors);
    }
    let ok = thresholds.iter().all(|t| t.is_finite() && *t >= 0.0)
        && thresholds.windows(2).all(|w| w[0] < w[1]);
    if !ok {
        return Err(SkeletonError::BadThresholds);
    }
    let mut all: Vec<f64> = errors.iter().flatten().copied().collect();
    all.sort_by(|a, b| a.total_cmp(b));
    let total = all.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| all.partition_point(|&e| e <= t) as f64 / total)
        .collect())
}

/// Minimal rotation taking unit vector `from` onto unit vector `to`.
///
/// For antiparallel inputs the axis is `from × e_k`, where `e_k` is the
/// coordinate axis least aligned with `from`.
pub fn swing_rotation(from: &Vector3<f64>, to: &Vector3<f64>) -> UnitQuaternion<f64> {
    let dot = from.dot(to).clamp(-1.0, 1.0);
    let cross = from.cross(to);
    if dot < -1.0 + 1e-12 && cross.norm() < 1e-9 {
        let axis = perpendicular_axis(from);
        return UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), std::f64::consts::PI);
    }
    // Half-angle construction keeps full precision near 0°.
    let w = 1.0 + dot;
    let q = nalgebra::Quaternion::new(w, cross.x, cross.y, cross.z);
    UnitQuaternion::from_quaternion(q)
}

/// Deterministic unit vector perpendicular to `v`.
pub fn perpendicular_axis(v: &Vector3<f64>) -> Vector3<f64> {
    let a = v.abs();
    let e = if a.x <= a.y && a.x <= a.z {
        Vector3::x()
    } else if a.y <= a.z {
        Vector3::y()
    } else {
        Vector3::z()
    };
    v.cross(&e).normalize()
}

/// Torso frame as a rotation whose columns are (left, up, forward).
///
/// `up` follows the spine; `left` combines the hip and shoulder axes,
/// orthogonalized against `up`.
pub fn torso_frame(pose: &Pose3D) -> Result<Matrix3<f64>, SkeletonError> {
    let spine = pose.joint(JointId::Neck) - pose.joint(JointId::Pelvis);
    let len = spine.norm();
    if !(len > MIN_BONE_LENGTH) {
        return Err(SkeletonError::DegenerateBone("neck", len));
    }
    let up = spine / len;
    let across = (pose.joint(JointId::LHip) - pose.joint(JointId::RHip))
        + (pose.joint(JointId::LShoulder) - pose.joint(JointId::RShoulder));
    let left = across - up * across.dot(&up);
    let ln = left.norm();
    if !(ln > MIN_BONE_LENGTH) {
        return Err(SkeletonError::DegenerateBone("l_hip", ln));
    }
    let left = left / ln;
    let forward = left.cross(&up);
    Ok(Matrix3::from_columns(&[left, up, forward]))
}

/// Bone directions expressed in the frame of their parent: the torso frame
/// for bones leaving the pelvis or neck, otherwise the torso frame carried
/// by the zero-twist swing of the parent bone away from its rest direction.
pub fn local_bone_directions(pose: &Pose3D) -> Result<[Vector3<f64>; NUM_BONES], SkeletonError> {
    let dirs = pose.bone_directions()?;
    let frame_t = torso_frame(pose)?.transpose();
    let rest = rest_directions();
    let torso_local: [Vector3<f64>; NUM_BONES] = std::array::from_fn(|b| frame_t * dirs[b]);
    let mut out = torso_local;
    for bone in bones() {
        if let Some(pb) = bone.parent_bone() {
            if matches!(bone.parent, JointId::Pelvis | JointId::Neck) {
                continue;
            }
            let swing = swing_rotation(&rest[pb], &torso_local[pb]);
            out[bone.index()] = swing.inverse_transform_vector(&torso_local[bone.index()]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLimit {
    /// Name of the joint the bone ends at.
    pub bone: String,
    pub center: [f64; 3],
    pub max_angle_deg: f64,
}

/// Per-bone cone limits on the parent-local bone direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub limits: Vec<JointLimit>,
}

const DEFAULT_LIMITS_JSON: &str = include_str!("../data/joint_limits.json");

impl Default for JointLimits {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_LIMITS_JSON).expect("shipped joint-limit table parses")
    }
}

impl JointLimits {
    pub fn from_json(s: &str) -> Result<Self, SkeletonError> {
        let limits: JointLimits =
            serde_json::from_str(s).map_err(|e| SkeletonError::BadLimits(e.to_string()))?;
        limits.table()?;
        Ok(limits)
    }

    /// Same table with every cone widened to `max_angle_deg`.
    pub fn widened(&self, max_angle_deg: f64) -> Self {
        let mut out = self.clone();
        for l in &mut out.limits {
            l.max_angle_deg = max_angle_deg;
        }
        out
    }

    fn table(&self) -> Result<[Option<(Vector3<f64>, f64)>; NUM_BONES], SkeletonError> {
        let mut table = [None; NUM_BONES];
        for l in &self.limits {
            let j = JointId::from_name(&l.bone).ok_or_else(|| SkeletonError::UnknownJoint(l.bone.clone()))?;
            let b = j.bone().ok_or_else(|| SkeletonError::BadLimits("pelvis has no bone".into()))?;
            let c = Vector3::from(l.center);
            if !(c.norm() > 0.0) || !l.max_angle_deg.is_finite() {
                return Err(SkeletonError::BadLimits(format!("bad entry for {}", l.bone)));
            }
            table[b] = Some((c.normalize(), l.max_angle_deg.to_radians().cos()));
        }
        Ok(table)
    }

    /// True iff every bone lies inside its cone; invalid poses fail.
    pub fn check(&self, pose: &Pose3D) -> bool {
        let Ok(table) = self.table() else { return false };
        let Ok(local) = local_bone_directions(pose) else { return false };
        local.iter().zip(table.iter()).all(|(d, entry)| match entry {
            Some((center, min_cos)) => d.dot(center) >= *min_cos - 1e-12,
            None => true,
        })
    }

    /// Names of the bones outside their cone.
    pub fn violations(&self, pose: &Pose3D) -> Vec<String> {
        let table = match self.table() {
            Ok(t) => t,
            Err(e) => return vec![e.to_string()],
        };
        let local = match local_bone_directions(pose) {
            Ok(l) => l,
            Err(e) => return vec![e.to_string()],
        };
        local
            .iter()
            .zip(table.iter())
            .enumerate()
            .filter_map(|(b, (d, entry))| match entry {
                Some((center, min_cos)) if d.dot(center) < *min_cos - 1e-12 => {
                    Some(JointId::ALL[b + 1].name().to_string())
                }
                _ => None,
            })
            .collect()
    }
}

pub fn check_joint_limits(pose: &Pose3D) -> bool {
    JointLimits::default().check(pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn skewed_pose() -> Pose3D {
        let mut p = Pose3D::rest();
        p.joints[JointId::LWrist.code()] += Vector3::new(0.0, 0.05, 0.1);
        p.joints[JointId::RKnee.code()] += Vector3::new(0.02, 0.0, 0.15);
        p.joints[JointId::Head.code()] += Vector3::new(0.0, 0.0, 0.05);
        p
    }

    #[test]
    fn topology_is_a_tree() {
        let topo = SkeletonTopology::standard();
        assert_eq!(topo.bones.len(), 14);
        assert_eq!(topo.parent[0], JointId::Pelvis);
        for j in &JointId::ALL[1..] {
            let mut cur = *j;
            let mut steps = 0;
            while cur != JointId::Pelvis {
                assert!(cur.parent().code() < cur.code());
                cur = cur.parent();
                steps += 1;
                assert!(steps < NUM_JOINTS);
            }
        }
        for (code, j) in JointId::ALL.iter().enumerate() {
            assert_eq!(j.code(), code);
            assert_eq!(JointId::from_name(j.name()), Some(*j));
        }
    }

    #[test]
    fn flatten_examples() {
        let z = Pose3D::zeros(Frame::Body);
        let v = flatten(&z);
        assert_eq!(v.0, vec![0.0; 45]);
        assert_eq!(unflatten(&v.0, Frame::Body).unwrap(), z);

        let mut p = Pose3D::zeros(Frame::Camera);
        p.joints[0] = Vector3::new(1.0, 2.0, 3.0);
        let v = flatten(&p);
        assert_eq!(&v.0[..4], &[1.0, 2.0, 3.0, 0.0]);

        assert_eq!(unflatten(&[0.0; 44], Frame::Body), Err(SkeletonError::WrongLength(44)));
        assert!(PoseVector::new(vec![0.0; 46]).is_err());
    }

    #[test]
    fn normalize_halves_bones() {
        let rest = Pose3D::rest();
        let root = Vector3::new(0.3, -1.0, 2.0);
        let dirs = rest.bone_directions().unwrap();
        let lens: [f64; NUM_BONES] = std::array::from_fn(|b| 2.0 * CANONICAL_BONE_LENGTHS[b] / rest.skeleton_length());
        let p = Pose3D::from_bones(root, &dirs, &lens, Frame::Body);
        assert_relative_eq!(p.skeleton_length(), 2.0, epsilon = 1e-12);
        let n = normalize_pose(&p).unwrap();
        assert_relative_eq!(n.skeleton_length(), 1.0, epsilon = 1e-12);
        assert_eq!(n.joints[0], root);
        for (a, b) in n.bone_lengths().iter().zip(p.bone_lengths()) {
            assert_relative_eq!(*a, b / 2.0, epsilon = 1e-12);
        }
        let again = normalize_pose(&n).unwrap();
        for (a, b) in again.joints.iter().zip(&n.joints) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_coincident_knee_ankle() {
        let mut p = Pose3D::rest();
        p.joints[JointId::LAnkle.code()] = p.joints[JointId::LKnee.code()];
        assert!(matches!(normalize_pose(&p), Err(SkeletonError::DegenerateBone("l_ankle", _))));
    }

    #[test]
    fn align_identity() {
        let p = skewed_pose();
        let (t, aligned) = similarity_align(&p, &p).unwrap();
        assert_relative_eq!(t.scale, 1.0, epsilon = 1e-12);
        assert!((t.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
        assert!(pose_error(&aligned, &p).unwrap().1 < 1e-12);
    }

    #[test]
    fn align_recovers_rz30() {
        let src = skewed_pose();
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), 30f64.to_radians()).into_inner();
        let truth = SimilarityTransform { scale: 2.0, rotation: r, translation: Vector3::new(1.0, 0.0, 0.0) };
        let tgt = truth.apply_pose(&src);
        let (t, aligned) = similarity_align(&src, &tgt).unwrap();
        assert!((t.scale - 2.0).abs() < 1e-9);
        assert!((t.rotation - r).abs().max() < 1e-9);
        assert!((t.translation - truth.translation).norm() < 1e-9);
        assert!(pose_error(&aligned, &tgt).unwrap().1 < 1e-9);
    }

    #[test]
    fn align_rejects_collinear() {
        let joints = std::array::from_fn(|j| Vector3::new(j as f64 * 0.1, j as f64 * 0.2, 0.0));
        let p = Pose3D::new(joints, Frame::Body);
        let q = skewed_pose();
        assert_eq!(similarity_align(&p, &q).unwrap_err(), SkeletonError::RankDeficient);
    }

    #[test]
    fn align_never_reflects() {
        let src = skewed_pose();
        let tgt = src.map_points(|p| Vector3::new(-p.x, p.y, p.z));
        let (t, _) = similarity_align(&src, &tgt).unwrap();
        assert!(t.is_proper(1e-9));
    }

    #[test]
    fn pose_error_examples() {
        let p = skewed_pose();
        let (pj, tot) = pose_error(&p, &p).unwrap();
        assert!(pj.iter().all(|&e| e == 0.0));
        assert_eq!(tot, 0.0);

        let mut q = p.clone();
        q.joints[4] += Vector3::new(0.0, 0.0, 0.1);
        let (pj, tot) = pose_error(&q, &p).unwrap();
        assert_relative_eq!(pj[4], 0.1, epsilon = 1e-12);
        assert_relative_eq!(tot, 0.1, epsilon = 1e-12);

        let u = Vector3::new(1.0, 2.0, 2.0) / 3.0;
        let (pj, tot) = pose_error(&p.translated(u), &p).unwrap();
        assert!(pj.iter().all(|&e| (e - 1.0).abs() < 1e-12));
        assert_relative_eq!(tot, 15.0, epsilon = 1e-12);

        let c = Pose3D { frame: Frame::Camera, ..p.clone() };
        assert!(matches!(pose_error(&c, &p), Err(SkeletonError::FrameMismatch(..))));
    }

    #[test]
    fn pck_examples() {
        let zeros = vec![[0.0; NUM_JOINTS]];
        assert_eq!(pck_curve(&zeros, &[0.0, 0.1, 0.2]).unwrap(), vec![1.0; 3]);

        let mut one = [0.0; NUM_JOINTS];
        one[3] = 0.5;
        let f = pck_curve(&[one], &[0.4]).unwrap();
        // Direct count: 14 of 15 joints at or below 0.4.
        assert_relative_eq!(f[0], 14.0 / 15.0, epsilon = 1e-15);
        let f = pck_curve(&[one], &[0.0]).unwrap();
        assert_relative_eq!(f[0], 14.0 / 15.0, epsilon = 1e-15);

        assert_eq!(pck_curve(&[], &[0.1]), Err(SkeletonError::EmptyErrors));
        assert_eq!(pck_curve(&zeros, &[0.2, 0.1]), Err(SkeletonError::BadThresholds));
        assert_eq!(pck_curve(&zeros, &[-0.1]), Err(SkeletonError::BadThresholds));
    }

    #[test]
    fn limits_accept_rest_pose() {
        assert!(check_joint_limits(&Pose3D::rest()));
    }

    #[test]
    fn limits_reject_hyperextended_knee() {
        // Swing the left shin 120° forward about the knee's lateral axis.
        let p = Pose3D::rest();
        let r = Rotation3::from_axis_angle(&Vector3::x_axis(), -120f64.to_radians());
        let knee = p.joint(JointId::LKnee);
        let mut q = p.clone();
        let ankle = p.joint(JointId::LAnkle);
        q.joints[JointId::LAnkle.code()] = knee + r * (ankle - knee);
        assert!(q.joint(JointId::LAnkle).z > 0.0);
        assert!(!check_joint_limits(&q));
        assert!(JointLimits::default().widened(180.0).check(&q));

        // The same swing backwards is ordinary flexion.
        let r = Rotation3::from_axis_angle(&Vector3::x_axis(), 90f64.to_radians());
        q.joints[JointId::LAnkle.code()] = knee + r * (ankle - knee);
        assert!(q.joint(JointId::LAnkle).z < 0.0);
        assert!(check_joint_limits(&q));
    }

    #[test]
    fn limit_table_errors() {
        assert!(JointLimits::from_json(r#"{"limits":[{"bone":"tail","center":[0,1,0],"max_angle_deg":10}]}"#).is_err());
        assert!(JointLimits::from_json(DEFAULT_LIMITS_JSON).is_ok());
    }

    #[test]
    fn swing_antiparallel_is_deterministic() {
        let a = Vector3::x();
        let q1 = swing_rotation(&a, &-a);
        let q2 = swing_rotation(&a, &-a);
        assert_eq!(q1, q2);
        assert!((q1 * a + a).norm() < 1e-12);
    }

    fn arb_pose() -> impl Strategy<Value = Pose3D> {
        prop::collection::vec(-1.0f64..1.0, POSE_DIM).prop_map(|v| unflatten(&v, Frame::Camera).unwrap())
    }

    fn arb_similarity() -> impl Strategy<Value = SimilarityTransform> {
        (
            0.2f64..5.0,
            prop::array::uniform3(-1.0f64..1.0),
            -3.1f64..3.1,
            prop::array::uniform3(-5.0f64..5.0),
        )
            .prop_filter("axis", |(_, a, _, _)| Vector3::from(*a).norm() > 0.1)
            .prop_map(|(s, a, ang, t)| SimilarityTransform {
                scale: s,
                rotation: Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::from(a)), ang).into_inner(),
                translation: Vector3::from(t),
            })
    }

    proptest! {
        #[test]
        fn flatten_round_trips(p in arb_pose()) {
            prop_assert_eq!(unflatten(&flatten(&p).0, p.frame).unwrap(), p);
        }

        #[test]
        fn normalize_sums_to_one(p in arb_pose()) {
            if let Ok(n) = normalize_pose(&p) {
                prop_assert!((n.skeleton_length() - 1.0).abs() < 1e-9);
                let n2 = normalize_pose(&n).unwrap();
                for (a, b) in n2.joints.iter().zip(&n.joints) {
                    prop_assert!((a - b).norm() < 1e-9);
                }
            }
        }

        #[test]
        fn similarity_recovered(p in arb_pose(), t in arb_similarity()) {
            let q = t.apply_pose(&p);
            let (fit, aligned) = similarity_align(&p, &q).unwrap();
            prop_assert!((fit.scale - t.scale).abs() < 1e-8 * t.scale.max(1.0));
            prop_assert!((fit.rotation - t.rotation).abs().max() < 1e-8);
            prop_assert!((fit.translation - t.translation).norm() < 1e-8 * 10.0);
            prop_assert!(pose_error(&aligned, &q).unwrap().1 < 1e-8);
        }

        #[test]
        fn error_metric_properties(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let (ab, _) = pose_error(&a, &b).unwrap();
            let (ba, _) = pose_error(&b, &a).unwrap();
            let (ac, _) = pose_error(&a, &c).unwrap();
            let (cb, _) = pose_error(&c, &b).unwrap();
            prop_assert_eq!(pose_error(&a, &a).unwrap().1, 0.0);
            for j in 0..NUM_JOINTS {
                prop_assert_eq!(ab[j], ba[j]);
                prop_assert!(ab[j] <= ac[j] + cb[j] + 1e-12);
            }
        }

        #[test]
        fn pck_monotone(errs in prop::collection::vec(prop::array::uniform15(0.0f64..1.0), 1..8)) {
            let ts: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
            let f = pck_curve(&errs, &ts).unwrap();
            prop_assert!(f.windows(2).all(|w| w[0] <= w[1]));
            let max = errs.iter().flatten().cloned().fold(0.0, f64::max);
            let f = pck_curve(&errs, &[max]).unwrap();
            prop_assert_eq!(f[0], 1.0);
        }
    }
}
