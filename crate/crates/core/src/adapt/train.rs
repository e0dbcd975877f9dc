use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_domain_stage1, loss_domain_stage2, loss_reg, sigmoid, stage1_logit_grad, stage2_logit_grad, total_loss};
use super::net::{rows, MlpNet, NetCheckpoint};
use super::AdaptError;

/// Inputs with domain labels (synthetic 0, real 1) and optional targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Option<Array2<f64>>,
    pub labels: Vec<u8>,
    pub mask: Vec<bool>,
}

impl Batch {
    pub fn new(
        inputs: Array2<f64>,
        targets: Option<Array2<f64>>,
        labels: Vec<u8>,
        mask: Vec<bool>,
    ) -> Result<Self, AdaptError> {
        let n = inputs.nrows();
        if labels.len() != n || mask.len() != n {
            return Err(AdaptError::BadBatch("labels and mask must have one entry per row".into()));
        }
        if let Some(t) = &targets {
            if t.nrows() != n {
                return Err(AdaptError::BadBatch("targets must have one row per input".into()));
            }
        } else if mask.iter().any(|&m| m) {
            return Err(AdaptError::BadBatch("masked rows need targets".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(AdaptError::BadBatch("labels must be 0 or 1".into()));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(AdaptError::NonFinite("batch inputs"));
        }
        Ok(Batch { inputs, targets, labels, mask })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            inputs: rows(&self.inputs, idx),
            targets: self.targets.as_ref().map(|t| rows(t, idx)),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            mask: idx.iter().map(|&i| self.mask[i]).collect(),
        }
    }

    /// Row indices of one domain.
    pub fn domain(&self, label: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }

    /// Concatenates two batches; a side without targets gets zero rows.
    pub fn concat(&self, other: &Batch) -> Result<Batch, AdaptError> {
        let inputs = ndarray::concatenate(Axis(0), &[self.inputs.view(), other.inputs.view()])
            .map_err(|e| AdaptError::BadBatch(e.to_string()))?;
        let dim = self.targets.as_ref().or(other.targets.as_ref()).map(|t| t.ncols());
        let targets = match dim {
            None => None,
            Some(d) => {
                let fill = |b: &Batch| b.targets.clone().unwrap_or_else(|| Array2::zeros((b.len(), d)));
                Some(
                    ndarray::concatenate(Axis(0), &[fill(self).view(), fill(other).view()])
                        .map_err(|e| AdaptError::BadBatch(e.to_string()))?,
                )
            }
        };
        let labels = self.labels.iter().chain(&other.labels).copied().collect();
        let mask = self.mask.iter().chain(&other.mask).copied().collect();
        Batch::new(inputs, targets, labels, mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub rounds: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lambda_domain: f64,
    /// Samples drawn per domain per step.
    pub batch_per_domain: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            stage1_steps: 200,
            stage2_steps: 200,
            rounds: 5,
            learning_rate: 0.01,
            momentum: 0.9,
            lambda_domain: 1.0,
            batch_per_domain: 32,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), AdaptError> {
        let bad = |m: &str| Err(AdaptError::BadSchedule(m.into()));
        if self.rounds == 0 {
            return bad("rounds must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.lambda_domain > 0.0 && self.lambda_domain.is_finite()) {
            return bad("domain weight must be positive");
        }
        if self.batch_per_domain == 0 {
            return bad("batch size must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetShapes {
    pub input: usize,
    pub extractor_hidden: Vec<usize>,
    pub features: usize,
    /// Apply the leaky rectifier to the extractor output.
    pub rectify_features: bool,
    pub regressor_hidden: Vec<usize>,
    pub mixer_hidden: Vec<usize>,
    pub target: usize,
}

fn chain(first: usize, mid: &[usize], last: usize) -> Vec<usize> {
    std::iter::once(first).chain(mid.iter().copied()).chain(std::iter::once(last)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaNets {
    pub extractor: MlpNet,
    pub regressor: MlpNet,
    /// Outputs one logit; `sigmoid(logit)` is the probability of real.
    pub mixer: MlpNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaCheckpoint {
    pub extractor: NetCheckpoint,
    pub regressor: NetCheckpoint,
    pub mixer: NetCheckpoint,
}

impl DaNets {
    pub fn new<R: Rng + ?Sized>(shapes: &NetShapes, rng: &mut R) -> Result<Self, AdaptError> {
        Ok(DaNets {
            extractor: MlpNet::new(&chain(shapes.input, &shapes.extractor_hidden, shapes.features), shapes.rectify_features, rng)?,
            regressor: MlpNet::new(&chain(shapes.features, &shapes.regressor_hidden, shapes.target), false, rng)?,
            mixer: MlpNet::new(&chain(shapes.features, &shapes.mixer_hidden, 1), false, rng)?,
        })
    }

    pub fn features(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, AdaptError> {
        self.extractor.forward(x)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, AdaptError> {
        self.regressor.forward(self.features(x)?.view())
    }

    /// Probability of being real for each row.
    pub fn mixer_probabilities(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, AdaptError> {
        let logits = self.mixer.forward(self.features(x)?.view())?;
        Ok(logits.iter().map(|&z| sigmoid(z)).collect())
    }

    pub fn checkpoint(&self) -> DaCheckpoint {
        DaCheckpoint {
            extractor: self.extractor.checkpoint(),
            regressor: self.regressor.checkpoint(),
            mixer: self.mixer.checkpoint(),
        }
    }

    pub fn from_checkpoint(c: &DaCheckpoint) -> Result<Self, AdaptError> {
        Ok(DaNets {
            extractor: MlpNet::from_checkpoint(&c.extractor)?,
            regressor: MlpNet::from_checkpoint(&c.regressor)?,
            mixer: MlpNet::from_checkpoint(&c.mixer)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
}

/// Per-step losses, each divided by the number of contributing samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub round: usize,
    pub stage: Stage,
    pub step: usize,
    pub reg: f64,
    pub domain: f64,
    pub total: f64,
}

/// SGD with classical momentum; one velocity slot per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Momentum {
    velocity: Vec<f64>,
}

impl Momentum {
    pub fn new(net: &MlpNet) -> Self {
        Momentum { velocity: vec![0.0; net.parameter_count()] }
    }

    /// Applies and then clears the accumulated gradients.
    pub fn step(&mut self, net: &mut MlpNet, lr: f64, mu: f64) {
        let v = &mut self.velocity;
        net.update(|k, p, g| {
            v[k] = mu * v[k] - lr * g;
            *p += v[k];
        });
        net.zero_grad();
    }
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub nets: DaNets,
    pub schedule: TrainSchedule,
    pub history: Vec<HistoryEntry>,
    rng: ChaCha8Rng,
    opt: [Momentum; 3],
    round: usize,
}

impl Trainer {
    pub fn new(nets: DaNets, schedule: TrainSchedule, seed: u64) -> Result<Self, AdaptError> {
        schedule.validate()?;
        let opt = [Momentum::new(&nets.extractor), Momentum::new(&nets.regressor), Momentum::new(&nets.mixer)];
        Ok(Trainer { nets, schedule, history: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed), opt, round: 0 })
    }

    fn draw(&mut self, data: &Batch) -> Result<Batch, AdaptError> {
        let k = self.schedule.batch_per_domain;
        let mut idx = Vec::with_capacity(2 * k);
        for label in [0u8, 1] {
            let pool = data.domain(label);
            if pool.is_empty() {
                return Err(AdaptError::TooFewSamples { needed: 1, got: 0 });
            }
            idx.extend((0..k).map(|_| pool[self.rng.random_range(0..pool.len())]));
        }
        Ok(data.select(&idx))
    }

    /// Regression term on the masked rows of `b`, gradient already divided
    /// by their count.
    fn regression(pred: &Array2<f64>, b: &Batch) -> Result<(f64, Array2<f64>), AdaptError> {
        let n = b.mask.iter().filter(|&&m| m).count();
        let Some(t) = &b.targets else {
            return Ok((0.0, Array2::zeros(pred.raw_dim())));
        };
        if n == 0 {
            return Ok((0.0, Array2::zeros(pred.raw_dim())));
        }
        let (l, g) = loss_reg(pred.view(), t.view(), &b.mask)?;
        Ok((l / n as f64, g / n as f64))
    }

    /// Extractor frozen; regressor on the regression loss, mixer on the
    /// classification loss.
    pub fn train_stage1(&mut self, data: &Batch, steps: usize) -> Result<(), AdaptError> {
        let s = self.schedule;
        for step in 0..steps {
            let b = self.draw(data)?;
            let f = self.nets.extractor.forward(b.inputs.view())?;
            let tr = self.nets.regressor.forward_trace(f.view())?;
            let (reg, g) = Self::regression(&tr.output, &b)?;
            self.nets.regressor.backward(&tr, g.view(), true)?;
            self.opt[1].step(&mut self.nets.regressor, s.learning_rate, s.momentum);

            let tm = self.nets.mixer.forward_trace(f.view())?;
            let p: Vec<f64> = tm.output.iter().map(|&z| sigmoid(z)).collect();
            let n = p.len() as f64;
            let (dom, _) = loss_domain_stage1(&p, &b.labels)?;
            let gz = super::net::column(&stage1_logit_grad(&p, &b.labels)) / n;
            self.nets.mixer.backward(&tm, gz.view(), true)?;
            self.opt[2].step(&mut self.nets.mixer, s.learning_rate, s.momentum);
            self.log(Stage::One, step, reg, dom / n)?;
        }
        Ok(())
    }

    /// Mixer frozen; extractor and regressor on regression plus confusion.
    /// Rows without targets contribute only the confusion term.
    pub fn train_stage2(&mut self, data: &Batch, steps: usize) -> Result<(), AdaptError> {
        let s = self.schedule;
        for step in 0..steps {
            let b = self.draw(data)?;
            let te = self.nets.extractor.forward_trace(b.inputs.view())?;
            let tr = self.nets.regressor.forward_trace(te.output.view())?;
            let (reg, g) = Self::regression(&tr.output, &b)?;
            let gf_reg = self.nets.regressor.backward(&tr, g.view(), true)?;

            let tm = self.nets.mixer.forward_trace(te.output.view())?;
            let p: Vec<f64> = tm.output.iter().map(|&z| sigmoid(z)).collect();
            let n = p.len() as f64;
            let (dom, _) = loss_domain_stage2(&p);
            let gz = super::net::column(&stage2_logit_grad(&p)) * (s.lambda_domain / n);
            let gf_dom = self.nets.mixer.backward(&tm, gz.view(), false)?;

            self.nets.extractor.backward(&te, (gf_reg + gf_dom).view(), true)?;
            self.opt[0].step(&mut self.nets.extractor, s.learning_rate, s.momentum);
            self.opt[1].step(&mut self.nets.regressor, s.learning_rate, s.momentum);
            self.log(Stage::Two, step, reg, dom / n)?;
        }
        Ok(())
    }

    /// `rounds` repetitions of stage 1 followed by stage 2.
    pub fn train_alternating(&mut self, data: &Batch) -> Result<(), AdaptError> {
        for _ in 0..self.schedule.rounds {
            self.train_stage1(data, self.schedule.stage1_steps)?;
            self.train_stage2(data, self.schedule.stage2_steps)?;
            self.round += 1;
        }
        Ok(())
    }

    /// Regression only, extractor and regressor jointly; the no-adaptation
    /// baseline.
    pub fn train_regression(&mut self, data: &Batch, steps: usize) -> Result<(), AdaptError> {
        let s = self.schedule;
        for step in 0..steps {
            let b = self.draw(data)?;
            let te = self.nets.extractor.forward_trace(b.inputs.view())?;
            let tr = self.nets.regressor.forward_trace(te.output.view())?;
            let (reg, g) = Self::regression(&tr.output, &b)?;
            let gf = self.nets.regressor.backward(&tr, g.view(), true)?;
            self.nets.extractor.backward(&te, gf.view(), true)?;
            self.opt[0].step(&mut self.nets.extractor, s.learning_rate, s.momentum);
            self.opt[1].step(&mut self.nets.regressor, s.learning_rate, s.momentum);
            self.log(Stage::Two, step, reg, 0.0)?;
        }
        Ok(())
    }

    fn log(&mut self, stage: Stage, step: usize, reg: f64, domain: f64) -> Result<(), AdaptError> {
        let total = total_loss(reg, domain, self.schedule.lambda_domain);
        if !total.is_finite() {
            return Err(AdaptError::NonFinite("loss"));
        }
        self.history.push(HistoryEntry { round: self.round, stage, step, reg, domain, total });
        Ok(())
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("round,stage,step,reg,domain,total\n");
        for h in &self.history {
            let stage = match h.stage {
                Stage::One => 1,
                Stage::Two => 2,
            };
            writeln!(s, "{},{},{},{},{},{}", h.round, stage, h.step, h.reg, h.domain, h.total).expect("string write");
        }
        s
    }
}

pub const PROBE_MIN_SAMPLES: usize = 10;

/// Trains a fresh logistic classifier on half of each domain's features and
/// returns its accuracy on the other half.
pub fn probe_domain_accuracy(synthetic: &Array2<f64>, real: &Array2<f64>, seed: u64) -> Result<f64, AdaptError> {
    let got = synthetic.nrows().min(real.nrows());
    if got < PROBE_MIN_SAMPLES {
        return Err(AdaptError::TooFewSamples { needed: PROBE_MIN_SAMPLES, got });
    }
    if synthetic.ncols() != real.ncols() {
        return Err(AdaptError::Shape { expected: synthetic.ncols(), found: real.ncols() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = |x: &Array2<f64>| {
        let mut idx: Vec<usize> = (0..x.nrows()).collect();
        idx.shuffle(&mut rng);
        let h = idx.len() / 2;
        (rows(x, &idx[..h]), rows(x, &idx[h..]))
    };
    let (s_train, s_test) = split(synthetic);
    let (r_train, r_test) = split(real);
    let train = ndarray::concatenate(Axis(0), &[s_train.view(), r_train.view()]).expect("same width");
    let labels: Vec<f64> = (0..train.nrows()).map(|i| if i < s_train.nrows() { 0.0 } else { 1.0 }).collect();

    let d = train.ncols();
    let mean = train.mean_axis(Axis(0)).expect("nonempty");
    let std = train.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let standardize = |x: &Array2<f64>| (x - &mean) / &std;
    let xs = standardize(&train);
    let mut w = ndarray::Array1::<f64>::zeros(d);
    let mut b = 0.0;
    let n = xs.nrows() as f64;
    const L2: f64 = 1e-3;
    for _ in 0..500 {
        let z = xs.dot(&w) + b;
        let r: ndarray::Array1<f64> = z.iter().zip(&labels).map(|(&zi, &y)| sigmoid(zi) - y).collect();
        let gw = xs.t().dot(&r) / n + &w * L2;
        let gb = r.sum() / n;
        w -= &(gw * 0.5);
        b -= 0.5 * gb;
    }
    let correct = |x: &Array2<f64>, label: bool| {
        let z = standardize(x).dot(&w) + b;
        z.iter().filter(|&&zi| (zi > 0.0) == label).count()
    };
    let total = s_test.nrows() + r_test.nrows();
    Ok((correct(&s_test, false) + correct(&r_test, true)) as f64 / total as f64)
}
