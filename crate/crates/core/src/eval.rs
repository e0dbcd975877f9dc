//! Batch 3D pose evaluation: normalization, similarity alignment, PCK
//! curves, and CSV/SVG reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skeleton::{
    normalize_pose, pck_curve, pose_error, similarity_align, unflatten, Frame, Pose3D, SkeletonError, NUM_JOINTS,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions but {gts} ground-truth poses")]
    CountMismatch { preds: usize, gts: usize },
    #[error("record {index}: prediction `{pred}` does not match ground truth `{gt}`")]
    IdMismatch { index: usize, pred: String, gt: String },
    #[error("no poses to evaluate")]
    Empty,
    #[error("reports use different thresholds")]
    ThresholdMismatch,
    #[error("need at least two reports to compare")]
    TooFewReports,
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Minimal view of an annotation line; other fields are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseLine {
    pub image: String,
    pub pose45_camera_normalized: Vec<f64>,
}

/// Reads `(id, pose)` pairs from a JSON-lines annotation file.
pub fn load_pose_file(path: &Path) -> Result<Vec<(String, Pose3D)>, EvalError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |msg: String| EvalError::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let rec: PoseLine = serde_json::from_str(line).map_err(|e| parse(e.to_string()))?;
        let pose = unflatten(&rec.pose45_camera_normalized, Frame::Camera).map_err(|e| parse(e.to_string()))?;
        out.push((rec.image, pose));
    }
    Ok(out)
}

pub fn write_pose_file(path: &Path, poses: &[(String, Pose3D)]) -> Result<(), EvalError> {
    let mut s = String::new();
    for (id, p) in poses {
        let rec = PoseLine { image: id.clone(), pose45_camera_normalized: crate::skeleton::flatten(p).0 };
        s.push_str(&serde_json::to_string(&rec).expect("plain data"));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// 20 evenly spaced thresholds from 0 to 0.5 in normalized-skeleton units.
pub fn default_thresholds() -> Vec<f64> {
    (0..20).map(|i| 0.5 * i as f64 / 19.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
    /// Mean over pairs of the summed per-joint error divided by 15.
    pub mean_joint_error: f64,
    pub count: usize,
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn mean_fraction(&self) -> f64 {
        self.fractions.iter().sum::<f64>() / self.fractions.len().max(1) as f64
    }
}

fn prepare(p: &Pose3D) -> Result<Pose3D, SkeletonError> {
    normalize_pose(&p.root_centered())
}

/// Per-joint errors of one pair after normalizing both poses and aligning
/// the prediction onto the ground truth.
pub fn aligned_errors(pred: &Pose3D, gt: &Pose3D) -> Result<[f64; NUM_JOINTS], SkeletonError> {
    let gt = prepare(gt)?;
    let pred = Pose3D { frame: gt.frame, ..prepare(pred)? };
    let (_, aligned) = similarity_align(&pred, &gt)?;
    Ok(pose_error(&aligned, &gt)?.0)
}

pub fn evaluate(
    name: &str,
    preds: &[(String, Pose3D)],
    gts: &[(String, Pose3D)],
    thresholds: &[f64],
) -> Result<EvalReport, EvalError> {
    if preds.len() != gts.len() {
        return Err(EvalError::CountMismatch { preds: preds.len(), gts: gts.len() });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some((index, (p, g))) = preds.iter().zip(gts).enumerate().find(|(_, (p, g))| p.0 != g.0) {
        return Err(EvalError::IdMismatch { index, pred: p.0.clone(), gt: g.0.clone() });
    }
    let errors: Vec<[f64; NUM_JOINTS]> =
        preds.par_iter().zip(gts).map(|(p, g)| aligned_errors(&p.1, &g.1)).collect::<Result<_, _>>()?;
    let fractions = pck_curve(&errors, thresholds)?;
    let mean_joint_error =
        errors.iter().map(|e| e.iter().sum::<f64>()).sum::<f64>() / errors.len() as f64 / NUM_JOINTS as f64;
    Ok(EvalReport {
        name: name.to_string(),
        thresholds: thresholds.to_vec(),
        fractions,
        mean_joint_error,
        count: errors.len(),
        metadata: BTreeMap::new(),
    })
}

pub fn report_csv(report: &EvalReport) -> String {
    let mut s = String::from("threshold,fraction\n");
    for (t, f) in report.thresholds.iter().zip(&report.fractions) {
        writeln!(s, "{t:.6},{f:.6}").expect("string write");
    }
    s
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// PCK curve: threshold on x, detected fraction on y.
pub fn report_svg(report: &EvalReport) -> String {
    let t_max = report.thresholds.last().copied().unwrap_or(1.0).max(1e-12);
    let x = |t: f64| MARGIN + t / t_max * (W - 2.0 * MARGIN);
    let y = |f: f64| H - MARGIN - f * (H - 2.0 * MARGIN);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<path d="M{:.2} {:.2} L{:.2} {:.2} L{:.2} {:.2}" fill="none" stroke="black"/>"#,
        MARGIN,
        MARGIN,
        MARGIN,
        H - MARGIN,
        W - MARGIN,
        H - MARGIN
    )
    .unwrap();
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{f:.2}</text>"#, MARGIN - 4.0, y(f) + 3.0)
            .unwrap();
        let t = t_max * f;
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{t:.3}</text>"#, x(t), H - MARGIN + 14.0)
            .unwrap();
    }
    let points: Vec<String> =
        report.thresholds.iter().zip(&report.fractions).map(|(&t, &f)| format!("{:.2},{:.2}", x(t), y(f))).collect();
    writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, points.join(" ")).unwrap();
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{} (n={}, mean error {:.4})</text>"#,
        W / 2.0,
        MARGIN / 2.0,
        escape(&report.name),
        report.count,
        report.mean_joint_error
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

/// Writes `<dir>/<stem>.csv` and `<dir>/<stem>.svg`.
pub fn emit_report(report: &EvalReport, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), EvalError> {
    fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{stem}.csv"));
    let svg = dir.join(format!("{stem}.svg"));
    fs::write(&csv, report_csv(report))?;
    fs::write(&svg, report_svg(report))?;
    Ok((csv, svg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub name: String,
    pub mean_fraction: f64,
    pub mean_joint_error: f64,
}

/// Runs ordered by mean detected fraction, best first; ties keep name order.
pub fn compare_runs(reports: &[EvalReport]) -> Result<Vec<RankRow>, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::TooFewReports);
    }
    if reports.iter().any(|r| r.thresholds != reports[0].thresholds) {
        return Err(EvalError::ThresholdMismatch);
    }
    let mut rows: Vec<RankRow> = reports
        .iter()
        .map(|r| RankRow { name: r.name.clone(), mean_fraction: r.mean_fraction(), mean_joint_error: r.mean_joint_error })
        .collect();
    rows.sort_by(|a, b| b.mean_fraction.total_cmp(&a.mean_fraction).then_with(|| a.name.cmp(&b.name)));
    Ok(rows)
}

pub fn ranking_csv(rows: &[RankRow]) -> String {
    let mut s = String::from("rank,name,mean_fraction,mean_joint_error\n");
    for (i, r) in rows.iter().enumerate() {
        writeln!(s, "{},{},{:.6},{:.6}", i + 1, r.name, r.mean_fraction, r.mean_joint_error).unwrap();
    }
    s
}

/// Bar chart of mean joint error per run.
pub fn ranking_svg(rows: &[RankRow]) -> String {
    let max = rows.iter().map(|r| r.mean_joint_error).fold(0.0, f64::max).max(1e-12);
    let bar = (W - 2.0 * MARGIN) / rows.len().max(1) as f64;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    for (i, r) in rows.iter().enumerate() {
        let h = r.mean_joint_error / max * (H - 2.0 * MARGIN);
        let x0 = MARGIN + i as f64 * bar;
        writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="steelblue"/>"#,
            x0 + 0.1 * bar,
            H - MARGIN - h,
            0.8 * bar,
            h
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            x0 + bar / 2.0,
            H - MARGIN + 14.0,
            escape(&r.name)
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{:.4}</text>"#,
            x0 + bar / 2.0,
            H - MARGIN - h - 4.0,
            r.mean_joint_error
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose3D {
        let mut p = Pose3D::rest();
        for q in p.joints.iter_mut() {
            *q += Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1));
        }
        p.frame = Frame::Camera;
        p
    }

    fn set(n: usize, seed: u64) -> Vec<(String, Pose3D)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|i| (format!("{i:07}.png"), random_pose(&mut rng))).collect()
    }

    #[test]
    fn identical_sets_are_perfect() {
        let g = set(10, 1);
        let r = evaluate("self", &g, &g, &default_thresholds()).unwrap();
        assert!(r.fractions[1..].iter().all(|&f| f == 1.0));
        assert!(r.mean_joint_error < 1e-9);
        assert_eq!(r.count, 10);
    }

    #[test]
    fn similarity_transformed_predictions_match() {
        let g = set(10, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let preds: Vec<(String, Pose3D)> = g
            .iter()
            .map(|(id, p)| {
                let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let r = Rotation3::new(axis * rng.random_range(0.0..3.0));
                let s = rng.random_range(0.2..5.0);
                let t = Vector3::new(rng.random_range(-3.0..3.0), 0.5, 4.0);
                (id.clone(), p.map_points(|q| r * q * s + t))
            })
            .collect();
        let r = evaluate("moved", &preds, &g, &default_thresholds()).unwrap();
        assert!(r.fractions[1..].iter().all(|&f| f == 1.0));
        assert!(r.mean_joint_error < 1e-9);
    }

    #[test]
    fn id_and_count_errors() {
        let g = set(4, 4);
        let mut shuffled = g.clone();
        shuffled.swap(0, 1);
        assert!(matches!(evaluate("x", &shuffled, &g, &default_thresholds()), Err(EvalError::IdMismatch { index: 0, .. })));
        assert!(matches!(evaluate("x", &g[..3], &g, &default_thresholds()), Err(EvalError::CountMismatch { .. })));
        assert!(matches!(evaluate("x", &[], &[], &default_thresholds()), Err(EvalError::Empty)));
    }

    #[test]
    fn mean_error_is_average_total_over_joints() {
        let g = set(6, 5);
        let p = set(6, 6);
        let r = evaluate("x", &p, &g, &default_thresholds()).unwrap();
        let totals: f64 = p.iter().zip(&g).map(|(a, b)| aligned_errors(&a.1, &b.1).unwrap().iter().sum::<f64>()).sum();
        assert!((r.mean_joint_error - totals / 6.0 / 15.0).abs() < 1e-12);
        assert!(r.fractions.windows(2).all(|w| w[0] <= w[1]));
        assert!(r.fractions.iter().all(|f| (0.0..=1.0).contains(f)));
    }

    fn fixed_report(name: &str, fractions: Vec<f64>, err: f64) -> EvalReport {
        let n = fractions.len();
        EvalReport {
            name: name.into(),
            thresholds: (0..n).map(|i| i as f64 * 0.25).collect(),
            fractions,
            mean_joint_error: err,
            count: 3,
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn emission_is_stable_and_well_formed() {
        let r = fixed_report("a<b", vec![0.0, 0.5, 1.0], 0.1);
        let csv = report_csv(&r);
        assert_eq!(csv.lines().count(), 4);
        let dir = tempfile::tempdir().unwrap();
        let (c1, s1) = emit_report(&r, dir.path(), "one").unwrap();
        let (c2, s2) = emit_report(&r, dir.path(), "two").unwrap();
        assert_eq!(fs::read(&c1).unwrap(), fs::read(&c2).unwrap());
        assert_eq!(fs::read(&s1).unwrap(), fs::read(&s2).unwrap());
        roxmltree::Document::parse(&fs::read_to_string(&s1).unwrap()).unwrap();
        let rows = compare_runs(&[r.clone(), fixed_report("z", vec![0.0, 0.1, 0.2], 0.3)]).unwrap();
        roxmltree::Document::parse(&ranking_svg(&rows)).unwrap();
    }

    #[test]
    fn ranking_examples() {
        let a = fixed_report("a", vec![0.2, 0.4], 0.2);
        let b = fixed_report("b", vec![0.2, 0.4], 0.2);
        let rows = compare_runs(&[b.clone(), a.clone()]).unwrap();
        assert_eq!(rows[0].name, "a");
        assert_eq!(rows[0].mean_fraction, rows[1].mean_fraction);
        let perfect = fixed_report("perfect", vec![1.0, 1.0], 0.0);
        let random = fixed_report("random", vec![0.1, 0.3], 0.5);
        assert_eq!(compare_runs(&[random, perfect.clone()]).unwrap()[0].name, "perfect");
        let mut other = perfect.clone();
        other.thresholds = vec![0.0, 0.3];
        assert!(matches!(compare_runs(&[perfect.clone(), other]), Err(EvalError::ThresholdMismatch)));
        assert!(matches!(compare_runs(&[perfect]), Err(EvalError::TooFewReports)));
        assert_eq!(ranking_csv(&rows).lines().count(), 3);
    }

    #[test]
    fn pose_file_round_trip() {
        let g = set(3, 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.jsonl");
        write_pose_file(&path, &g).unwrap();
        assert_eq!(load_pose_file(&path).unwrap(), g);
        fs::write(&path, "{\"image\": \"a\", \"pose45_camera_normalized\": [1.0]}\n").unwrap();
        assert!(matches!(load_pose_file(&path), Err(EvalError::Parse { line: 1, .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn invariant_under_similarity(seed in 0u64..1000, s in 0.1f64..10.0, angle in 0.0f64..3.1, tx in -5.0f64..5.0) {
            let g = set(3, seed);
            let p = set(3, seed + 1);
            let r = Rotation3::new(Vector3::new(0.3, -0.8, 0.5).normalize() * angle);
            let moved: Vec<_> = p.iter().map(|(id, q)| (id.clone(), q.map_points(|v| r * v * s + Vector3::new(tx, 1.0, 2.0)))).collect();
            let a = evaluate("a", &p, &g, &default_thresholds()).unwrap();
            let b = evaluate("b", &moved, &g, &default_thresholds()).unwrap();
            for (x, y) in a.fractions.iter().zip(&b.fractions) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
            prop_assert!((a.mean_joint_error - b.mean_joint_error).abs() < 1e-9);
        }
    }
}
