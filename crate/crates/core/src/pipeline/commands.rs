use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{image_seed, read_pose_dir, write_atomic, write_pose_records, PipelineConfig, PipelineError};
use crate::adapt::{ToyConfig, ToyProblem, TrainSchedule};
use crate::body::{skin_mesh_with_lengths, solve_ik, ArticulatedMesh, TemplateMesh};
use crate::eval::{compare_runs, emit_report, evaluate, load_pose_file, ranking_csv, ranking_svg, EvalReport, RankRow};
use crate::prior::{fit_prior, sample_pose, PriorModel};
use crate::render::{project_joints, render_overlay, Annotation};
use crate::skeleton::{similarity_align, Pose3D, SimilarityTransform, NUM_JOINTS};

/// Fits the prior on the configured pose directory and writes it.
pub fn fit_prior_cmd(cfg: &PipelineConfig) -> Result<(PriorModel, PathBuf), PipelineError> {
    let dir = cfg.resolve(&cfg.paths.poses);
    let poses = read_pose_dir(&dir)?;
    let model = fit_prior(&poses, &cfg.prior.to_config())?;
    let path = cfg.prior_path()?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    write_atomic(&path, model.to_json().as_bytes())?;
    Ok((model, path))
}

/// `n` prior samples, pose `i` drawn from its own derived seed.
pub fn sample_poses_cmd(model: &Path, n: usize, seed: u64, out: &Path) -> Result<Vec<Pose3D>, PipelineError> {
    let text = fs::read_to_string(model).map_err(|e| PipelineError::Asset(format!("{}: {e}", model.display())))?;
    let model = PriorModel::from_json(&text).map_err(|e| PipelineError::Asset(e.to_string()))?;
    let poses = (0..n)
        .into_par_iter()
        .map(|i| sample_pose(&model, &mut ChaCha8Rng::seed_from_u64(image_seed(seed, i as u64))))
        .collect::<Result<Vec<_>, _>>()?;
    write_pose_records(out, &poses)?;
    Ok(poses)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainDaConfig {
    pub toy: ToyConfig,
    /// Defaults to the toy problem's schedule.
    pub schedule: Option<TrainSchedule>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainDaSummary {
    pub probe_before: f64,
    pub probe_after: f64,
    pub adapted_error: f64,
    pub baseline_error: f64,
    pub schedule: TrainSchedule,
}

/// Runs the domain-adaptation toy and writes checkpoints, loss histories
/// and a summary into `out`.
pub fn train_da(cfg: &TrainDaConfig, out: &Path) -> Result<TrainDaSummary, PipelineError> {
    let problem = ToyProblem::generate(&cfg.toy, cfg.seed);
    let schedule = cfg.schedule.unwrap_or_else(|| problem.schedule());
    schedule.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let run = problem.run(&schedule, cfg.seed)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    fs::write(out.join("adapted.json"), serde_json::to_string(&run.adapted.nets.checkpoint())?)?;
    fs::write(out.join("baseline.json"), serde_json::to_string(&run.baseline.nets.checkpoint())?)?;
    fs::write(out.join("history.csv"), run.adapted.history_csv())?;
    fs::write(out.join("baseline_history.csv"), run.baseline.history_csv())?;
    let summary = TrainDaSummary {
        probe_before: run.probe_before,
        probe_after: run.probe_after,
        adapted_error: run.adapted_error,
        baseline_error: run.baseline_error,
        schedule,
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct EvalOutputs {
    pub reports: Vec<EvalReport>,
    pub ranking: Option<Vec<RankRow>>,
    pub files: Vec<PathBuf>,
}

/// Evaluates each named prediction file against `gt` and, for two or more
/// runs, writes a ranking table and bar chart.
pub fn eval_runs(
    gt: &Path,
    preds: &[(String, PathBuf)],
    thresholds: &[f64],
    out: &Path,
) -> Result<EvalOutputs, PipelineError> {
    let asset = |p: &Path, e: crate::eval::EvalError| match e {
        crate::eval::EvalError::Io(_) | crate::eval::EvalError::Parse { .. } => {
            PipelineError::Asset(format!("{}: {e}", p.display()))
        }
        other => other.into(),
    };
    let gts = load_pose_file(gt).map_err(|e| asset(gt, e))?;
    let mut reports = Vec::new();
    let mut files = Vec::new();
    for (name, path) in preds {
        let p = load_pose_file(path).map_err(|e| asset(path, e))?;
        let mut report = evaluate(name, &p, &gts, thresholds)?;
        report.metadata.insert("predictions".into(), path.display().to_string());
        report.metadata.insert("ground_truth".into(), gt.display().to_string());
        let (csv, svg) = emit_report(&report, out, name)?;
        let json = out.join(format!("{name}.json"));
        fs::write(&json, serde_json::to_string_pretty(&report)?)?;
        files.extend([csv, svg, json]);
        reports.push(report);
    }
    let ranking = if reports.len() >= 2 {
        let rows = compare_runs(&reports)?;
        let (csv, svg) = (out.join("ranking.csv"), out.join("ranking.svg"));
        fs::write(&csv, ranking_csv(&rows))?;
        fs::write(&svg, ranking_svg(&rows))?;
        files.extend([csv, svg]);
        Some(rows)
    } else {
        None
    };
    Ok(EvalOutputs { reports, ranking, files })
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub overlay: RgbImage,
    /// Posed template in the world frame of the annotation's camera.
    pub mesh: ArticulatedMesh,
    /// Similarity fitted from the skinned model's joints onto the predicted
    /// joints, both in the camera frame.
    pub alignment: SimilarityTransform,
    pub model_joints_px: [[f64; 2]; NUM_JOINTS],
    pub target_joints_px: [[f64; 2]; NUM_JOINTS],
}

impl Reconstruction {
    pub fn max_reprojection_px(&self) -> f64 {
        self.model_joints_px
            .iter()
            .zip(&self.target_joints_px)
            .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
            .fold(0.0, f64::max)
    }
}

/// Poses `template` to the predicted camera-frame pose, aligns it with a
/// similarity fitted on corresponding joints and overlays it on `image`.
///
/// Bones take the prediction's lengths, so the alignment residual reflects
/// only the pose, not differing body proportions.
pub fn reconstruct(
    image: &RgbImage,
    pred: &Annotation,
    template: &TemplateMesh,
    alpha: f64,
) -> Result<Reconstruction, PipelineError> {
    let camera = pred.camera_params();
    camera.validate()?;
    let target = pred.camera_pose()?;
    target.validate()?;
    let mut lengths = target.bone_lengths();
    let scale = template.rest_pose.skeleton_length() / target.skeleton_length();
    for l in &mut lengths {
        *l *= scale;
    }
    let posed = skin_mesh_with_lengths(template, &solve_ik(template, &target)?, Some(&lengths));
    // IK fixes only rotations; placing the root first leaves the alignment
    // as the residual correction, the identity for an exactly posed model.
    let posed = posed.transformed(&Matrix3::identity(), &(target.joints[0] - posed.joints.joints[0]), 1.0);
    let (alignment, _) = similarity_align(&posed.joints, &target)?;

    // Camera frame to world: x ↦ Rᵀx + c.
    let r_t = camera.rotation().transpose();
    let center: Vector3<f64> = camera.center();
    let rotation = r_t * alignment.rotation;
    let translation = r_t * alignment.translation + center;
    let mesh = posed.transformed(&rotation, &translation, alignment.scale);

    let overlay = render_overlay(image, &mesh, &camera, alpha)?;
    let model_joints_px = project_joints(&camera.pose_to_camera(&mesh.joints), &camera)?;
    let target_joints_px = project_joints(&target, &camera)?;
    Ok(Reconstruction { overlay, mesh, alignment, model_joints_px, target_joints_px })
}
