//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 3 5`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::OnceLock;
use std::time::Instant;

use image::{Rgba, RgbaImage};
use nalgebra::{UnitQuaternion, Vector2, Vector3, Vector4};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synthpose::adapt::{
    loss_domain_stage1, loss_domain_stage2, loss_reg, sigmoid, stage1_logit_grad, stage2_logit_grad, MlpNet,
    ToyConfig, ToyProblem,
};
use synthpose::eval::{default_thresholds, evaluate};
use synthpose::pipeline::starter::{starter_poses, write_starter_assets, StarterCounts};
use synthpose::pipeline::trend::{render_dataset, PoseDataset, PoseRegressor, RegressorConfig, FEATURE_SIZE};
use synthpose::pipeline::{
    build_library, fit_prior_cmd, reconstruct, CountsConfig, Generator, PipelineConfig,
};
use synthpose::render::{perturb_camera, project_joints, CameraParams};
use synthpose::skeleton::{similarity_align, unflatten, Frame, Pose3D};
use synthpose::texture::{cdtw_match, mls_map, mls_warp, Contour, Control};
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Training pool atlases; the rest of the library is held out for testing.
const TRAIN_ATLASES: usize = 32;
const LIBRARY_ATLASES: usize = 40;

/// Starter assets, a fitted prior and a body/atlas library in a temp dir.
struct World {
    _dir: TempDir,
    generator: Generator,
}

fn world() -> &'static World {
    static WORLD: OnceLock<World> = OnceLock::new();
    WORLD.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let assets = dir.path().join("assets");
        write_starter_assets(&assets, &StarterCounts::default(), 2024).expect("starter assets");
        let counts = CountsConfig { bodies: 8, textures: LIBRARY_ATLASES, images: 1000 };
        let mut cfg = PipelineConfig::starter(&assets, counts, 11);
        cfg.paths.output = Some(dir.path().join("run"));
        fit_prior_cmd(&cfg).expect("prior");
        build_library(&cfg).expect("library").save(&cfg.library_dir().unwrap()).expect("save library");
        let generator = Generator::load(cfg).expect("generator");
        World { _dir: dir, generator }
    })
}

/// Generator over a subset of the library's atlases with its own seed.
fn subset(atlases: std::ops::Range<usize>, seed: u64) -> Generator {
    let g = &world().generator;
    let mut cfg = g.config.clone();
    cfg.seed = seed;
    Generator::new(cfg, g.prior.clone(), g.bodies.clone(), g.atlases[atlases].to_vec(), g.backgrounds.clone())
        .expect("subset generator")
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn cli(args: &[&str], cwd: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_synthpose"))
        .args(args)
        .current_dir(cwd)
        .stdout(Stdio::null())
        .status().expect("spawn").success()
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = cli(&["init", "--out", "."], d)
        && cli(&["fit-prior", "--config", "config.json", "--out", "lib"], d)
        && cli(&["build-bodies", "--config", "config.json", "--out", "lib", "--count", "4", "--textures", "6"], d);
    if !ok {
        return outcome(false, "setup commands failed");
    }
    // Both runs read the shared prior and library from `lib`.
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("config.json")).unwrap()).unwrap();
    cfg["paths"]["prior"] = "lib/prior.json".into();
    cfg["paths"]["library"] = "lib/library".into();
    fs::write(d.join("config.json"), cfg.to_string()).unwrap();
    for (jobs, out) in [("1", "a"), ("8", "b")] {
        if !cli(&["generate", "--config", "config.json", "--out", out, "--jobs", jobs, "--count", "50", "--seed", "5"], d) {
            return outcome(false, format!("generate --jobs {jobs} failed"));
        }
    }
    let (a, b) = (files_under(&d.join("a")), files_under(&d.join("b")));
    let images = a.keys().filter(|k| k.starts_with("images")).count();
    let secs = start.elapsed().as_secs_f64();
    let same = a == b && images == 50 && a.contains_key(Path::new("manifest.json"));
    outcome(same && secs < 120.0, format!("{} files, identical={}, {images} images, {secs:.1}s", a.len(), a == b))
}

fn annotation_invariants() -> Outcome {
    let g = &world().generator;
    let (mut worst_sum, mut outside) = (0.0f64, 0);
    for i in 0..1000 {
        let (s, _) = g.sample(i).expect("sample");
        let a = &s.annotation;
        let pose = unflatten(&a.pose45_camera_normalized, Frame::Camera).unwrap();
        worst_sum = worst_sum.max((pose.bone_lengths().iter().sum::<f64>() - 1.0).abs());
        let cam = a.camera_params();
        let px = project_joints(&a.camera_pose().unwrap(), &cam).unwrap();
        outside += px.iter().filter(|p| !cam.contains(p)).count();
    }

    let r = &g.config.render;
    let mut base = CameraParams::frontal(r.width, r.height, r.focal, 1.0, Vector3::zeros());
    base.elevation_deg = r.base_elevation;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 10_000;
    let mut d = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for _ in 0..n {
        let c = perturb_camera(&base, &r.camera_noise, &mut rng);
        d[0].push(c.elevation_deg - base.elevation_deg);
        d[1].push(c.azimuth_deg - base.azimuth_deg);
        d[2].push(c.in_plane_deg - base.in_plane_deg);
    }
    let sd = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let got = [sd(&d[0]), sd(&d[1]), sd(&d[2])];
    let want = [15.0, 45.0, 15.0];
    let sd_ok = got.iter().zip(want).all(|(g, w)| (g / w - 1.0).abs() <= 0.05);
    outcome(
        worst_sum <= 1e-6 && outside == 0 && sd_ok,
        format!(
            "max |bone sum - 1| {worst_sum:.2e}, {outside} joints outside, stddev ({:.2}, {:.2}, {:.2}) deg",
            got[0], got[1], got[2]
        ),
    )
}

fn mls() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut configs = 0;
    while configs < 500 {
        let n = rng.random_range(3..=30);
        let controls: Vec<Control> = (0..n)
            .map(|_| {
                let p = Vector2::new(rng.random_range(0.0..128.0), rng.random_range(0.0..128.0));
                (p, p + Vector2::new(rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0)))
            })
            .collect();
        if synthpose::texture::validate_controls(&controls).is_err() {
            continue;
        }
        configs += 1;
        for (p, q) in &controls {
            worst = worst.max((mls_map(&controls, *p) - q).norm());
            // Off the exact control the weights are finite; the map must
            // still converge onto the target.
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let near = p + Vector2::new(a.cos(), a.sin()) * 1e-9;
            worst = worst.max((mls_map(&controls, near) - q).norm());
        }
    }
    let mut max_lsb = 0;
    for k in 0..10 {
        let img = RgbaImage::from_fn(64, 48, |x, y| {
            Rgba([rng.random(), ((x * 3 + y * k) % 256) as u8, (x * y % 256) as u8, 255])
        });
        let controls: Vec<Control> = (0..rng.random_range(3..12))
            .map(|_| {
                let p = Vector2::new(rng.random_range(0.0..64.0), rng.random_range(0.0..48.0));
                (p, p)
            })
            .collect();
        if synthpose::texture::validate_controls(&controls).is_err() {
            continue;
        }
        let out = mls_warp(&img, &controls, (64, 48)).unwrap();
        for (a, b) in out.pixels().zip(img.pixels()) {
            for c in 0..4 {
                max_lsb = max_lsb.max((a[c] as i32 - b[c] as i32).abs());
            }
        }
    }
    outcome(worst <= 1e-6 && max_lsb <= 1, format!("max control error {worst:.2e} px, identity max diff {max_lsb} LSB"))
}

fn blob(rng: &mut ChaCha8Rng, n: usize) -> Contour {
    use std::f64::consts::TAU;
    let amps: Vec<(f64, f64)> = (0..4).map(|_| (rng.random_range(-0.2..0.2), rng.random_range(0.0..TAU))).collect();
    let (cx, cy, r0) = (rng.random_range(50.0..150.0), rng.random_range(50.0..150.0), rng.random_range(20.0..60.0));
    let pts = (0..n)
        .map(|i| {
            let t = TAU * i as f64 / n as f64;
            let r = r0 * (1.0 + amps.iter().enumerate().map(|(k, (a, ph))| a * ((k + 2) as f64 * t + ph).cos()).sum::<f64>());
            Vector2::new(cx + r * t.cos(), cy + r * t.sin())
        })
        .collect();
    Contour::from_points(pts)
}

fn similar(c: &Contour, scale: f64, angle: f64, t: Vector2<f64>) -> Contour {
    let (s, co) = angle.sin_cos();
    Contour::from_points(c.points.iter().map(|p| Vector2::new(co * p.x - s * p.y, s * p.x + co * p.y) * scale + t).collect())
}

fn cdtw() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 120;
    let mut fails = Vec::new();

    let c = blob(&mut rng, n);
    let m = cdtw_match(&c, &c);
    if m.cost != 0.0 || m.u.iter().enumerate().any(|(i, &u)| u != i as f64) {
        fails.push("identity");
    }

    let mut worst_shift = 0.0f64;
    for shift in [1, 7, 30, 59, 101] {
        let t = Contour::from_points((0..n).map(|j| c.points[(j + shift) % n]).collect());
        let m = cdtw_match(&c, &t);
        for (i, &u) in m.u.iter().enumerate() {
            let expected = (i as f64 - shift as f64).rem_euclid(n as f64);
            let diff = (u.rem_euclid(n as f64) - expected).abs();
            worst_shift = worst_shift.max(diff.min(n as f64 - diff));
        }
    }
    if worst_shift > 1.0 {
        fails.push("shift");
    }

    let mut worst_inv = 0.0f64;
    for _ in 0..20 {
        let (a, b) = (blob(&mut rng, n), blob(&mut rng, n));
        let base = cdtw_match(&a, &b).cost;
        let tb = similar(&b, rng.random_range(0.3..3.0), rng.random_range(-3.0..3.0), Vector2::new(rng.random_range(-50.0..50.0), 7.0));
        let ta = similar(&a, rng.random_range(0.3..3.0), rng.random_range(-3.0..3.0), Vector2::new(-3.0, rng.random_range(-50.0..50.0)));
        worst_inv = worst_inv.max((cdtw_match(&a, &tb).cost - base).abs()).max((cdtw_match(&ta, &b).cost - base).abs());
    }
    if worst_inv > 1e-9 {
        fails.push("invariance");
    }

    let mut non_monotone = 0;
    for _ in 0..1000 {
        let (a, b) = (blob(&mut rng, n), blob(&mut rng, n));
        let m = cdtw_match(&a, &b);
        if !m.is_monotone(n) || m.u.len() != n {
            non_monotone += 1;
        }
    }
    if non_monotone > 0 {
        fails.push("monotonicity");
    }
    outcome(
        fails.is_empty(),
        format!("max shift error {worst_shift:.3} idx, invariance {worst_inv:.2e}, {non_monotone}/1000 non-monotone"),
    )
}

fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    loop {
        let v = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(v / n));
        }
    }
}

fn procrustes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let src = Pose3D::new(std::array::from_fn(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0))), Frame::Camera);
        let r = random_rotation(&mut rng).to_rotation_matrix().into_inner();
        let s = rng.random_range(0.05..20.0);
        let t = Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0));
        let dst = src.map_points(|p| s * (r * p) + t);
        let (fit, aligned) = similarity_align(&src, &dst).unwrap();
        let residual = aligned.joints.iter().zip(&dst.joints).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let params = ((fit.scale - s).abs() / s).max((fit.rotation - r).abs().max()).max((fit.translation - t).norm() / 10.0);
        worst = worst.max(residual).max(params);
    }

    let gts: Vec<(String, Pose3D)> =
        starter_poses(60, 8).into_iter().enumerate().map(|(i, p)| (format!("{i}"), Pose3D { frame: Frame::Camera, ..p })).collect();
    let noisy: Vec<(String, Pose3D)> = gts
        .iter()
        .map(|(k, p)| {
            let mut q = p.clone();
            for j in q.joints.iter_mut() {
                *j += Vector3::from_fn(|_, _| rng.random_range(-0.08..0.08));
            }
            (k.clone(), q)
        })
        .collect();
    let moved: Vec<(String, Pose3D)> = noisy
        .iter()
        .map(|(k, p)| {
            let r = random_rotation(&mut rng);
            let s = rng.random_range(0.2..5.0);
            let t = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            (k.clone(), p.map_points(|x| s * (r * x) + t))
        })
        .collect();
    let th = default_thresholds();
    let a = evaluate("noisy", &noisy, &gts, &th).unwrap();
    let b = evaluate("moved", &moved, &gts, &th).unwrap();
    let dev = a.fractions.iter().zip(&b.fractions).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let err_dev = (a.mean_joint_error - b.mean_joint_error).abs();
    outcome(
        worst < 1e-8 && dev == 0.0 && err_dev < 1e-9,
        format!("max residual {worst:.2e}, PCK deviation {dev:.1e}, error deviation {err_dev:.1e}"),
    )
}

/// Max relative error between analytic and central-difference gradients.
fn rel(fd: f64, a: f64) -> f64 {
    (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6)
}

/// Finite-difference steps, largest first.
const EPS_STEPS: [f64; 3] = [1e-4, 1e-5, 1e-6];

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Domain loss of one logit: `k = 1` classification against label `y`,
/// `k = 2` confusion towards one half.
fn stable_domain_loss(z: f64, y: u8, k: usize) -> f64 {
    if k == 1 {
        if y == 1 { softplus(-z) } else { softplus(z) }
    } else {
        0.5 * (softplus(-z) + softplus(z))
    }
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = [0.0f64; 3];
    let mut worst_form = 0.0f64;
    for _ in 0..100 {
        let (din, df, dout) = (rng.random_range(3..8), rng.random_range(2..6), rng.random_range(2..6));
        let h = rng.random_range(2..6);
        let mut nets = [
            MlpNet::new(&[din, h, df], rng.random(), &mut rng).unwrap(),
            MlpNet::new(&[df, h, dout], false, &mut rng).unwrap(),
            MlpNet::new(&[df, h, 1], false, &mut rng).unwrap(),
        ];
        let n = rng.random_range(2..7);
        let x = Array2::from_shape_fn((n, din), |_| rng.random_range(-1.5..1.5));
        let y = Array2::from_shape_fn((n, dout), |_| rng.random_range(-1.0..1.0));
        let mask: Vec<bool> = (0..n).map(|i| i == 0 || rng.random_bool(0.7)).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();

        // Loss k: 0 regression through extractor and regressor, 1 and 2 the
        // two domain losses through extractor and mixer.
        // The domain losses are evaluated from the logit in softplus form:
        // in probability form, `1 − σ(z)` cancels for large logits and the
        // differences drown in round-off. Agreement of the two forms is
        // checked separately below.
        let objective = |nets: &[MlpNet; 3], k: usize| -> f64 {
            let f = nets[0].forward(x.view()).unwrap();
            if k == 0 {
                return loss_reg(nets[1].forward(f.view()).unwrap().view(), y.view(), &mask).unwrap().0;
            }
            let z = nets[2].forward(f.view()).unwrap();
            z.iter().zip(&labels).map(|(&z, &y)| stable_domain_loss(z, y, k)).sum()
        };
        {
            let z = nets[2].forward(nets[0].forward(x.view()).unwrap().view()).unwrap();
            let p: Vec<f64> = z.iter().map(|&z| sigmoid(z)).collect();
            // Inside the probability clamp the two forms must agree.
            if z.iter().all(|z| z.abs() < 15.0) {
                for k in 1..3 {
                    let lib = if k == 1 { loss_domain_stage1(&p, &labels).unwrap().0 } else { loss_domain_stage2(&p).0 };
                    let oracle: f64 = z.iter().zip(&labels).map(|(&z, &y)| stable_domain_loss(z, y, k)).sum();
                    worst_form = worst_form.max((lib - oracle).abs() / oracle.abs().max(1.0));
                }
            }
        }
        for k in 0..3 {
            for net in nets.iter_mut() {
                net.zero_grad();
            }
            let te = nets[0].forward_trace(x.view()).unwrap();
            let head = if k == 0 { 1 } else { 2 };
            let th = nets[head].forward_trace(te.output.view()).unwrap();
            let g = match k {
                0 => loss_reg(th.output.view(), y.view(), &mask).unwrap().1,
                _ => {
                    let p: Vec<f64> = th.output.iter().map(|&z| sigmoid(z)).collect();
                    let gz = if k == 1 { stage1_logit_grad(&p, &labels) } else { stage2_logit_grad(&p) };
                    Array2::from_shape_vec((n, 1), gz).unwrap()
                }
            };
            let gf = nets[head].backward(&th, g.view(), true).unwrap();
            nets[0].backward(&te, gf.view(), true).unwrap();
            for idx in [0, head] {
                let analytic = nets[idx].gradients();
                let params = nets[idx].parameters();
                for (j, &a) in analytic.iter().enumerate() {
                    let central = |h: f64| {
                        let mut probe = nets.clone();
                        let mut p = params.clone();
                        p[j] = params[j] + h;
                        probe[idx].set_parameters(&p).unwrap();
                        let up = objective(&probe, k);
                        p[j] = params[j] - h;
                        probe[idx].set_parameters(&p).unwrap();
                        (up - objective(&probe, k)) / (2.0 * h)
                    };
                    // A step that straddles a rectifier kink disagrees with
                    // its half step; fall back to smaller steps until both
                    // agree.
                    let mut fd = central(EPS_STEPS[EPS_STEPS.len() - 1]);
                    for &h in &EPS_STEPS {
                        let (full, half) = (central(h), central(h / 2.0));
                        if rel(full, half) < 2e-5 {
                            fd = half;
                            break;
                        }
                    }
                    worst[k] = worst[k].max(rel(fd, a));
                }
            }
        }
    }
    outcome(
        worst.iter().all(|&w| w < 1e-4) && worst_form < 1e-8,
        format!(
            "max relative error reg {:.2e}, stage1 {:.2e}, stage2 {:.2e}; loss forms agree to {worst_form:.1e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn domain_adaptation() -> Outcome {
    let start = Instant::now();
    let seed = 1;
    let problem = ToyProblem::generate(&ToyConfig::default(), seed);
    let run = problem.run(&problem.schedule(), seed).expect("toy run");
    let secs = start.elapsed().as_secs_f64();
    let pass = run.probe_before >= 0.90
        && (0.45..=0.65).contains(&run.probe_after)
        && run.adapted_error <= 1.2 * run.baseline_error
        && secs < 300.0;
    outcome(
        pass,
        format!(
            "probe {:.3} -> {:.3}, error {:.4} vs baseline {:.4} ({:.2}x), {secs:.0}s",
            run.probe_before,
            run.probe_after,
            run.adapted_error,
            run.baseline_error,
            run.adapted_error / run.baseline_error
        ),
    )
}

const TEST_OFFSET: usize = 1_000_000;
const TEST_SIZE: usize = 2000;

fn trend_regressor() -> RegressorConfig {
    RegressorConfig { steps: 3000, ..RegressorConfig::default() }
}

fn scalability() -> Outcome {
    let start = Instant::now();
    let g = subset(0..TRAIN_ATLASES, 21);
    let train = render_dataset(&g, 0..16_000, FEATURE_SIZE).expect("train set");
    let test = render_dataset(&g, TEST_OFFSET..TEST_OFFSET + TEST_SIZE, FEATURE_SIZE).expect("test set");
    let errors: Vec<f64> = [1000, 4000, 16_000]
        .iter()
        .map(|&n| {
            let model = PoseRegressor::train(&train.head(n), &trend_regressor(), 7).expect("train");
            model.mean_aligned_error(&test).expect("error")
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let rises: Vec<f64> = errors.windows(2).filter(|w| w[1] >= w[0]).map(|w| w[1] / w[0] - 1.0).collect();
    let trend = rises.is_empty() || (rises.len() == 1 && rises[0] <= 0.02);
    outcome(
        trend && secs < 1200.0,
        format!("errors 1k {:.4}, 4k {:.4}, 16k {:.4}, {secs:.0}s", errors[0], errors[1], errors[2]),
    )
}

fn median3(mut v: [f64; 3]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[1]
}

fn texture_variety() -> Outcome {
    const TRAIN_SIZE: usize = 4000;
    let start = Instant::now();
    let held_out = subset(TRAIN_ATLASES..LIBRARY_ATLASES, 31);
    let test: PoseDataset = render_dataset(&held_out, TEST_OFFSET..TEST_OFFSET + TEST_SIZE, FEATURE_SIZE).expect("test set");
    let mut few = [0.0; 3];
    let mut many = [0.0; 3];
    for s in 0..3 {
        // Same seed, so both sets share poses, bodies, cameras and
        // backgrounds; only the atlas pool differs.
        let seed = 40 + s as u64;
        for (atlases, slot) in [(2, &mut few[s]), (TRAIN_ATLASES, &mut many[s])] {
            let data = render_dataset(&subset(0..atlases, seed), 0..TRAIN_SIZE, FEATURE_SIZE).expect("train set");
            let model = PoseRegressor::train(&data, &trend_regressor(), seed).expect("train");
            *slot = model.mean_aligned_error(&test).expect("error");
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let (m2, m32) = (median3(few), median3(many));
    outcome(
        m32 < m2 && secs < 1200.0,
        format!("median error 2 atlases {m2:.4} {few:.4?}, 32 atlases {m32:.4} {many:.4?}, {secs:.0}s"),
    )
}

fn reconstruction() -> Outcome {
    let g = &world().generator;
    let mut worst = 0.0f64;
    for i in 0..20 {
        let (s, _) = g.sample(500 + i).expect("sample");
        let template = &g.bodies[s.annotation.provenance.body];
        let rec = reconstruct(&s.image, &s.annotation, template, 0.5).expect("reconstruct");
        worst = worst.max(rec.max_reprojection_px());
        // Rendered joints: the annotation projected through its camera.
        let rendered = project_joints(&s.annotation.camera_pose().unwrap(), &s.camera).unwrap();
        for (a, b) in rec.model_joints_px.iter().zip(&rendered) {
            worst = worst.max((a[0] - b[0]).hypot(a[1] - b[1]));
        }
    }
    outcome(worst <= 2.0, format!("max joint reprojection {worst:.4} px over 20 samples"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("determinism", determinism),
        ("annotation invariants", annotation_invariants),
        ("MLS interpolation", mls),
        ("contour matching", cdtw),
        ("Procrustes alignment", procrustes),
        ("gradient oracle", gradients),
        ("domain-adaptation toy", domain_adaptation),
        ("scalability trend", scalability),
        ("texture-variability trend", texture_variety),
        ("reconstruction closed loop", reconstruction),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let n = k + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        failed += usize::from(!o.pass);
        println!(
            "criterion {n:>2} {name}: {} ({}; {:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
