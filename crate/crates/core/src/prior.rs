//! Compositional pose prior.
//!
//! The body is split into five substructures (torso+head and the four
//! limbs). Each pose is encoded as per-part bone directions in the
//! torso-local frame plus a quantized torso-facing bin. The model is a
//! two-level tree: a histogram over the 24 facing bins at the root and,
//! below it, one Gaussian kernel-density estimate per (part, bin). Sampling
//! draws a bin and then every part independently, so limbs observed in
//! different training poses get recombined.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skeleton::{
    normalize_pose, torso_frame, Frame, JointId, JointLimits, Pose3D, SkeletonError, CANONICAL_BONE_LENGTHS,
    NUM_BONES,
};

pub const TORSO_BINS: usize = 24;
pub const DEFAULT_MAX_ATTEMPTS: usize = 100;
/// Lower bound for rule-of-thumb bandwidths (constant feature dimensions).
const MIN_BANDWIDTH: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("empty pose dataset")]
    EmptyDataset,
    #[error("no valid poses left after filtering ({rejected} rejected)")]
    NoValidPoses { rejected: usize },
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("{attempts} consecutive samples violated joint limits (last violations: {violations:?})")]
    RejectionCapReached { attempts: usize, violations: Vec<String> },
    #[error("empty input for coverage statistics")]
    EmptyCoverageInput,
    #[error("malformed model: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Torso,
    LArm,
    RArm,
    LLeg,
    RLeg,
}

impl Part {
    pub const ALL: [Part; 5] = [Part::Torso, Part::LArm, Part::RArm, Part::LLeg, Part::RLeg];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Bones (indexed as in the skeleton module) owned by this part.
    pub fn bones(self) -> &'static [usize] {
        match self {
            Part::Torso => &[0, 1, 2, 5, 8, 11],
            Part::LArm => &[3, 4],
            Part::RArm => &[6, 7],
            Part::LLeg => &[9, 10],
            Part::RLeg => &[12, 13],
        }
    }

    pub fn attachment(self) -> JointId {
        match self {
            Part::Torso => JointId::Pelvis,
            Part::LArm => JointId::LShoulder,
            Part::RArm => JointId::RShoulder,
            Part::LLeg => JointId::LHip,
            Part::RLeg => JointId::RHip,
        }
    }

    pub fn joints(self) -> Vec<JointId> {
        let mut js = vec![self.attachment()];
        for &b in self.bones() {
            let child = JointId::ALL[b + 1];
            if !js.contains(&child) {
                js.push(child);
            }
        }
        js
    }

    pub fn dim(self) -> usize {
        3 * self.bones().len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartSpec {
    pub part: Part,
    pub joints: Vec<JointId>,
    pub attachment: JointId,
}

/// Fixed five-part decomposition; the torso is the dependency root.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstructurePartition {
    pub parts: Vec<PartSpec>,
}

impl SubstructurePartition {
    pub fn standard() -> Self {
        SubstructurePartition {
            parts: Part::ALL
                .iter()
                .map(|&part| PartSpec { part, joints: part.joints(), attachment: part.attachment() })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartSample {
    pub part: Part,
    /// Torso-local unit bone directions, three values per bone.
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPose {
    pub parts: Vec<PartSample>,
    pub bin: usize,
    /// Torso frame (columns left, up, forward) in the pose's frame.
    pub torso_rotation: Matrix3<f64>,
    pub root: Vector3<f64>,
}

/// Unit facing direction of bin `k`.
pub fn bin_direction(k: usize) -> Vector3<f64> {
    let a = 2.0 * std::f64::consts::PI * k as f64 / TORSO_BINS as f64;
    Vector3::new(a.sin(), 0.0, a.cos())
}

/// Nearest quantized facing direction (ties go to the lower bin).
pub fn facing_bin(forward: &Vector3<f64>) -> usize {
    let mut best = 0;
    let mut best_dot = f64::NEG_INFINITY;
    for k in 0..TORSO_BINS {
        let d = forward.dot(&bin_direction(k));
        if d > best_dot + 1e-12 {
            best = k;
            best_dot = d;
        }
    }
    best
}

pub fn encode_parts(pose: &Pose3D) -> Result<EncodedPose, PriorError> {
    pose.validate()?;
    let dirs = pose.bone_directions()?;
    let frame = torso_frame(pose)?;
    let frame_t = frame.transpose();
    let parts = Part::ALL
        .iter()
        .map(|&part| PartSample {
            part,
            features: part
                .bones()
                .iter()
                .flat_map(|&b| {
                    let l = frame_t * dirs[b];
                    [l.x, l.y, l.z]
                })
                .collect(),
        })
        .collect();
    Ok(EncodedPose {
        parts,
        bin: facing_bin(&frame.column(2).into_owned()),
        torso_rotation: frame,
        root: pose.joints[0],
    })
}

/// Rebuilds a pose from per-part features, re-projecting every bone
/// direction onto the unit sphere.
pub fn decode_parts(
    features: &[Vec<f64>],
    torso_rotation: &Matrix3<f64>,
    root: Vector3<f64>,
    lengths: &[f64; NUM_BONES],
    frame: Frame,
) -> Option<Pose3D> {
    let mut dirs = [Vector3::zeros(); NUM_BONES];
    for (part, f) in Part::ALL.iter().zip(features) {
        for (k, &b) in part.bones().iter().enumerate() {
            let v = Vector3::new(f[3 * k], f[3 * k + 1], f[3 * k + 2]);
            let n = v.norm();
            if !(n > 1e-9) || !n.is_finite() {
                return None;
            }
            dirs[b] = torso_rotation * (v / n);
        }
    }
    Some(Pose3D::from_bones(root, &dirs, lengths, frame))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Forces every bandwidth to this value (0 = point masses).
    pub bandwidth: Option<f64>,
    /// Multiplier applied to the rule-of-thumb bandwidths.
    pub bandwidth_scale: f64,
    pub max_attempts: usize,
    pub limits: JointLimits,
    pub bone_lengths: [f64; NUM_BONES],
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            bandwidth: None,
            bandwidth_scale: 1.0,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            limits: JointLimits::default(),
            bone_lengths: CANONICAL_BONE_LENGTHS,
        }
    }
}

/// One training pose as stored in the model (kernel centers for all parts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCenter {
    pub bin: usize,
    pub torso_rotation: [f64; 9],
    pub root: [f64; 3],
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorModel {
    pub bins: usize,
    pub bin_histogram: Vec<usize>,
    /// Per-part, per-dimension kernel bandwidths.
    pub bandwidths: Vec<Vec<f64>>,
    pub centers: Vec<KernelCenter>,
    pub dataset_size: usize,
    pub rejected: usize,
    pub frame: Frame,
    pub max_attempts: usize,
    pub limits: JointLimits,
    pub bone_lengths: [f64; NUM_BONES],
    #[serde(skip)]
    by_bin: Vec<Vec<usize>>,
}

/// Per-dimension Silverman rule: `σ · (4 / ((d + 2) n))^(1 / (d + 4))`.
pub fn silverman_bandwidths(rows: &[&[f64]]) -> Vec<f64> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    let factor = (4.0 / ((d as f64 + 2.0) * n as f64)).powf(1.0 / (d as f64 + 4.0));
    (0..d)
        .map(|k| {
            if n < 2 {
                return 0.0;
            }
            let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n as f64;
            let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            var.sqrt() * factor
        })
        .collect()
}

pub fn fit_prior(dataset: &[Pose3D], config: &PriorConfig) -> Result<PriorModel, PriorError> {
    if dataset.is_empty() {
        return Err(PriorError::EmptyDataset);
    }
    let mut centers = Vec::new();
    let mut rejected = 0;
    for pose in dataset {
        if pose.validate().is_err() || !config.limits.check(pose) {
            rejected += 1;
            continue;
        }
        let enc = encode_parts(pose)?;
        centers.push(KernelCenter {
            bin: enc.bin,
            torso_rotation: enc.torso_rotation.as_slice().try_into().expect("3x3"),
            root: [enc.root.x, enc.root.y, enc.root.z],
            features: enc.parts.into_iter().map(|p| p.features).collect(),
        });
    }
    if rejected > 0 {
        log::warn!("pose prior: rejected {rejected} of {} input poses", dataset.len());
    }
    if centers.is_empty() {
        return Err(PriorError::NoValidPoses { rejected });
    }

    let bandwidths = Part::ALL
        .iter()
        .map(|part| {
            let rows: Vec<&[f64]> = centers.iter().map(|c| c.features[part.index()].as_slice()).collect();
            match config.bandwidth {
                Some(h) => vec![h.max(0.0); part.dim()],
                None => silverman_bandwidths(&rows)
                    .into_iter()
                    .map(|h| (h * config.bandwidth_scale).max(MIN_BANDWIDTH))
                    .collect(),
            }
        })
        .collect();

    let mut hist = vec![0; TORSO_BINS];
    for c in &centers {
        hist[c.bin] += 1;
    }
    let mut model = PriorModel {
        bins: TORSO_BINS,
        bin_histogram: hist,
        bandwidths,
        centers,
        dataset_size: dataset.len(),
        rejected,
        frame: dataset[0].frame,
        max_attempts: config.max_attempts,
        limits: config.limits.clone(),
        bone_lengths: config.bone_lengths,
        by_bin: Vec::new(),
    };
    model.index_bins();
    Ok(model)
}

impl PriorModel {
    fn index_bins(&mut self) {
        let mut by_bin = vec![Vec::new(); self.bins];
        for (i, c) in self.centers.iter().enumerate() {
            by_bin[c.bin].push(i);
        }
        self.by_bin = by_bin;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PriorError> {
        let mut m: PriorModel = serde_json::from_str(s).map_err(|e| PriorError::Malformed(e.to_string()))?;
        let consistent = m.bins == TORSO_BINS
            && m.bin_histogram.len() == m.bins
            && m.bandwidths.len() == Part::ALL.len()
            && m.bandwidths.iter().zip(Part::ALL).all(|(b, p)| b.len() == p.dim() && b.iter().all(|h| *h >= 0.0))
            && !m.centers.is_empty()
            && m.centers.iter().all(|c| {
                c.bin < m.bins
                    && c.features.len() == Part::ALL.len()
                    && c.features.iter().zip(Part::ALL).all(|(f, p)| f.len() == p.dim())
            });
        if !consistent {
            return Err(PriorError::Malformed("inconsistent dimensions".into()));
        }
        m.index_bins();
        let hist_ok = m.by_bin.iter().zip(&m.bin_histogram).all(|(v, &h)| v.len() == h);
        if !hist_ok {
            return Err(PriorError::Malformed("histogram does not match kernel centers".into()));
        }
        Ok(m)
    }

    fn draw_bin<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total: usize = self.bin_histogram.iter().sum();
        let mut u = rng.random_range(0..total);
        for (k, &h) in self.bin_histogram.iter().enumerate() {
            if u < h {
                return k;
            }
            u -= h;
        }
        unreachable!("histogram total covers the draw")
    }

    /// One unconstrained ancestral draw; also returns the kernel index
    /// chosen for each part.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (Option<Pose3D>, [usize; 5]) {
        let bin = self.draw_bin(rng);
        let members = &self.by_bin[bin];
        let mut chosen = [0usize; 5];
        let mut features = Vec::with_capacity(5);
        for part in Part::ALL {
            let idx = members[rng.random_range(0..members.len())];
            chosen[part.index()] = idx;
            let center = &self.centers[idx].features[part.index()];
            let bw = &self.bandwidths[part.index()];
            let f: Vec<f64> = center
                .iter()
                .zip(bw)
                .map(|(&c, &h)| {
                    let z: f64 = rng.sample(StandardNormal);
                    c + h * z
                })
                .collect();
            features.push(f);
        }
        let torso = &self.centers[chosen[0]];
        let rot = Matrix3::from_column_slice(&torso.torso_rotation);
        let pose = decode_parts(&features, &rot, Vector3::from(torso.root), &self.bone_lengths, self.frame);
        (pose, chosen)
    }
}

/// Ancestral sampling with rejection against the model's joint limits.
pub fn sample_pose<R: Rng + ?Sized>(model: &PriorModel, rng: &mut R) -> Result<Pose3D, PriorError> {
    let mut violations = Vec::new();
    for _ in 0..model.max_attempts.max(1) {
        match model.draw(rng).0 {
            Some(p) if model.limits.check(&p) => return Ok(p),
            Some(p) => violations = model.limits.violations(&p),
            None => violations = vec!["degenerate direction".to_string()],
        }
    }
    Err(PriorError::RejectionCapReached { attempts: model.max_attempts.max(1), violations })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    /// Mean distance from each reference pose to its nearest sample.
    pub reference_to_samples: f64,
    /// Mean distance from each sample to its nearest reference pose.
    pub samples_to_reference: f64,
}

/// Normalized, pelvis-centered flat pose used for coverage distances.
pub fn coverage_vector(pose: &Pose3D) -> Result<Vec<f64>, SkeletonError> {
    Ok(crate::skeleton::flatten(&normalize_pose(pose)?.root_centered()).0)
}

fn mean_nn(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|a| {
            to.iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    total / from.len() as f64
}

pub fn coverage_stats(samples: &[Pose3D], reference: &[Pose3D]) -> Result<CoverageStats, PriorError> {
    if samples.is_empty() || reference.is_empty() {
        return Err(PriorError::EmptyCoverageInput);
    }
    let s: Vec<Vec<f64>> = samples.iter().map(coverage_vector).collect::<Result<_, _>>()?;
    let r: Vec<Vec<f64>> = reference.iter().map(coverage_vector).collect::<Result<_, _>>()?;
    Ok(CoverageStats { reference_to_samples: mean_nn(&r, &s), samples_to_reference: mean_nn(&s, &r) })
}
