use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::train::{probe_domain_accuracy, Batch, DaNets, NetShapes, TrainSchedule, Trainer};
use super::AdaptError;

/// Two Gaussian domains sharing a latent pose code. Both map the latent
/// through the same linear embedding; the real domain adds a fixed offset
/// orthogonal to it. Targets are linear in the latent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub dim: usize,
    pub latent: usize,
    pub target: usize,
    pub synthetic: usize,
    pub real_annotated: usize,
    pub real_unannotated: usize,
    pub test: usize,
    pub shift: f64,
    pub noise: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            dim: 16,
            latent: 6,
            target: 45,
            synthetic: 2000,
            real_annotated: 20,
            real_unannotated: 1000,
            test: 500,
            shift: 3.0,
            noise: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyProblem {
    pub config: ToyConfig,
    /// Synthetic (all annotated) plus annotated and unannotated real rows.
    pub train: Batch,
    /// Synthetic plus annotated real rows only.
    pub baseline_train: Batch,
    pub test_inputs: Array2<f64>,
    pub test_targets: Array2<f64>,
    /// Held-out synthetic rows for the domain probe.
    pub probe_synthetic: Array2<f64>,
}

impl ToyProblem {
    pub fn generate(cfg: &ToyConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut gauss = |r: usize, c: usize, s: f64| Array2::from_shape_fn((r, c), |_| s * normal.sample(&mut rng));
        let embed = gauss(cfg.dim, cfg.latent, 1.0 / (cfg.latent as f64).sqrt());
        let pose = gauss(cfg.target, cfg.latent, 0.3 / (cfg.latent as f64).sqrt());
        // The offset lies outside the span of the embedding.
        let raw = gauss(1, cfg.dim, 1.0).row(0).to_owned();
        let (q, _) = nalgebra::DMatrix::from_fn(cfg.dim, cfg.latent, |i, j| embed[[i, j]]).qr().unpack();
        let r = nalgebra::DVector::from_iterator(cfg.dim, raw.iter().copied());
        let perp = &r - &q * (q.transpose() * &r);
        let offset = Array2::from_shape_fn((1, cfg.dim), |(_, j)| perp[j] * cfg.shift / perp.norm());

        let mut sample = |n: usize, real: bool| {
            let z = gauss(n, cfg.latent, 1.0);
            let mut x = z.dot(&embed.t()) + gauss(n, cfg.dim, cfg.noise);
            if real {
                x += &offset;
            }
            (x, z.dot(&pose.t()))
        };
        let (sx, sy) = sample(cfg.synthetic, false);
        let (ax, ay) = sample(cfg.real_annotated, true);
        let (ux, _) = sample(cfg.real_unannotated, true);
        let (tx, ty) = sample(cfg.test, true);
        let (px, _) = sample(cfg.test, false);

        let synthetic = Batch::new(sx, Some(sy), vec![0; cfg.synthetic], vec![true; cfg.synthetic]).expect("valid");
        let annotated =
            Batch::new(ax, Some(ay), vec![1; cfg.real_annotated], vec![true; cfg.real_annotated]).expect("valid");
        let unannotated =
            Batch::new(ux, None, vec![1; cfg.real_unannotated], vec![false; cfg.real_unannotated]).expect("valid");
        let baseline_train = synthetic.concat(&annotated).expect("same widths");
        let train = baseline_train.concat(&unannotated).expect("same widths");
        ToyProblem { config: *cfg, train, baseline_train, test_inputs: tx, test_targets: ty, probe_synthetic: px }
    }

    pub fn shapes(&self) -> NetShapes {
        NetShapes {
            input: self.config.dim,
            extractor_hidden: vec![32],
            features: 16,
            rectify_features: false,
            regressor_hidden: vec![32],
            mixer_hidden: vec![],
            target: self.config.target,
        }
    }

    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule { stage1_steps: 600, stage2_steps: 300, learning_rate: 0.02, lambda_domain: 2.0, ..Default::default() }
    }

    /// Mean per-sample Euclidean error of `pred` on the real test rows.
    pub fn test_error(&self, pred: &Array2<f64>) -> f64 {
        let d = pred - &self.test_targets;
        d.map_axis(Axis(1), |r| r.dot(&r).sqrt()).mean().expect("nonempty test set")
    }

    /// Domain-probe accuracy on held-out synthetic vs real test features.
    pub fn probe(&self, nets: &DaNets, seed: u64) -> Result<f64, AdaptError> {
        let s = nets.features(self.probe_synthetic.view())?;
        let r = nets.features(self.test_inputs.view())?;
        probe_domain_accuracy(&s, &r, seed)
    }

    /// Trains the alternating schedule and, from the same initial weights,
    /// a regression-only baseline on the annotated rows with as many steps.
    pub fn run(&self, schedule: &TrainSchedule, seed: u64) -> Result<ToyOutcome, AdaptError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nets = DaNets::new(&self.shapes(), &mut rng)?;
        let mut adapted = Trainer::new(nets.clone(), *schedule, seed)?;
        let probe_before = self.probe(&adapted.nets, seed)?;
        adapted.train_alternating(&self.train)?;
        let probe_after = self.probe(&adapted.nets, seed)?;
        let adapted_error = self.test_error(&adapted.nets.predict(self.test_inputs.view())?);

        let mut baseline = Trainer::new(nets, *schedule, seed)?;
        let steps = schedule.rounds * (schedule.stage1_steps + schedule.stage2_steps);
        baseline.train_regression(&self.baseline_train, steps)?;
        let baseline_error = self.test_error(&baseline.nets.predict(self.test_inputs.view())?);
        Ok(ToyOutcome { probe_before, probe_after, adapted_error, baseline_error, adapted, baseline })
    }
}

#[derive(Debug, Clone)]
pub struct ToyOutcome {
    pub probe_before: f64,
    pub probe_after: f64,
    pub adapted_error: f64,
    pub baseline_error: f64,
    pub adapted: Trainer,
    pub baseline: Trainer,
}
