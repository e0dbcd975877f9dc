//! Small pose regressor on downsampled grayscale renders, used to measure
//! how held-out error responds to dataset size and texture variety.

use image::{imageops, RgbImage};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Generator, PipelineError};
use crate::adapt::{loss_reg, rows, MlpNet, Momentum};
use crate::eval::aligned_errors;
use crate::skeleton::{unflatten, Frame, NUM_JOINTS, POSE_DIM};

pub const FEATURE_SIZE: u32 = 24;

/// Row-major luma in `[0, 1]` of the image resized to `size × size`.
pub fn grayscale_features(img: &RgbImage, size: u32) -> Vec<f64> {
    let small = imageops::resize(img, size, size, imageops::FilterType::Triangle);
    small.pixels().map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0).collect()
}

#[derive(Debug, Clone)]
pub struct PoseDataset {
    pub inputs: Array2<f64>,
    /// Normalized camera-frame poses, one flattened row per sample.
    pub targets: Array2<f64>,
}

impl PoseDataset {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn head(&self, n: usize) -> PoseDataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        PoseDataset { inputs: rows(&self.inputs, &idx), targets: rows(&self.targets, &idx) }
    }
}

/// Renders samples `indices` of `generator` into features and targets.
pub fn render_dataset(
    generator: &Generator,
    indices: std::ops::Range<usize>,
    size: u32,
) -> Result<PoseDataset, PipelineError> {
    let items: Vec<(Vec<f64>, Vec<f64>)> = indices
        .into_par_iter()
        .map(|i| {
            let (s, _) = generator.sample(i)?;
            Ok((grayscale_features(&s.image, size), s.annotation.pose45_camera_normalized))
        })
        .collect::<Result<_, PipelineError>>()?;
    let n = items.len();
    let d = (size * size) as usize;
    let mut inputs = Array2::zeros((n, d));
    let mut targets = Array2::zeros((n, POSE_DIM));
    for (k, (x, y)) in items.into_iter().enumerate() {
        inputs.row_mut(k).assign(&Array1::from(x));
        targets.row_mut(k).assign(&Array1::from(y));
    }
    Ok(PoseDataset { inputs, targets })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig { hidden: vec![256], steps: 6000, batch: 64, learning_rate: 0.01, momentum: 0.9 }
    }
}

/// MLP with per-pixel input standardization fitted on the training set.
#[derive(Debug, Clone)]
pub struct PoseRegressor {
    pub net: MlpNet,
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl PoseRegressor {
    fn standardize(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.scale
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>, PipelineError> {
        Ok(self.net.forward(self.standardize(x).view())?)
    }

    /// Minibatch SGD on the summed per-joint distance, averaged per sample.
    /// Batches walk shuffled epochs of the training set.
    pub fn train(data: &PoseDataset, cfg: &RegressorConfig, seed: u64) -> Result<Self, PipelineError> {
        if data.is_empty() || cfg.batch == 0 {
            return Err(PipelineError::Runtime("empty training set or batch".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean = data.inputs.mean_axis(Axis(0)).expect("non-empty");
        let scale = data.inputs.std_axis(Axis(0), 0.0).mapv(|s| s.max(1e-3));
        let mut sizes = vec![data.inputs.ncols()];
        sizes.extend(&cfg.hidden);
        sizes.push(POSE_DIM);
        let net = MlpNet::new(&sizes, false, &mut rng)?;
        let mut model = PoseRegressor { net, mean, scale };
        let x = model.standardize(&data.inputs);
        let mut opt = Momentum::new(&model.net);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut cursor = order.len();
        let batch = cfg.batch.min(data.len());
        let mask = vec![true; batch];
        for _ in 0..cfg.steps {
            if cursor + batch > order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let idx = &order[cursor..cursor + batch];
            cursor += batch;
            let xb = rows(&x, idx);
            let yb = rows(&data.targets, idx);
            let trace = model.net.forward_trace(xb.view())?;
            let (_, g) = loss_reg(trace.output.view(), yb.view(), &mask)?;
            model.net.backward(&trace, (g / batch as f64).view(), true)?;
            opt.step(&mut model.net, cfg.learning_rate, cfg.momentum);
        }
        Ok(model)
    }

    /// Mean per-joint error after normalizing and similarity-aligning each
    /// prediction onto its target.
    pub fn mean_aligned_error(&self, data: &PoseDataset) -> Result<f64, PipelineError> {
        let pred = self.predict(&data.inputs)?;
        let totals: Vec<f64> = (0..data.len())
            .into_par_iter()
            .map(|k| {
                let p = unflatten(pred.row(k).as_slice().expect("contiguous"), Frame::Camera)?;
                let g = unflatten(data.targets.row(k).as_slice().expect("contiguous"), Frame::Camera)?;
                Ok(aligned_errors(&p, &g)?.iter().sum::<f64>())
            })
            .collect::<Result<_, crate::skeleton::SkeletonError>>()?;
        Ok(totals.iter().sum::<f64>() / (data.len() * NUM_JOINTS) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn feature_examples() {
        let white = RgbImage::from_pixel(48, 48, Rgb([255, 255, 255]));
        let f = grayscale_features(&white, 24);
        assert_eq!(f.len(), 576);
        assert!(f.iter().all(|v| (v - 1.0).abs() < 1e-9));
        let red = RgbImage::from_pixel(24, 24, Rgb([255, 0, 0]));
        assert!(grayscale_features(&red, 24).iter().all(|v| (v - 0.299).abs() < 1e-9));
    }

    #[test]
    fn regressor_fits_a_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rest = crate::skeleton::flatten(&crate::skeleton::Pose3D::rest()).0;
        let n = 200;
        let x = Array2::from_shape_fn((n, 4), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let targets = Array2::from_shape_fn((n, POSE_DIM), |(i, j)| rest[j] + 0.05 * x[[i, j % 4]]);
        let data = PoseDataset { inputs: x, targets };
        let cfg = RegressorConfig { hidden: vec![32], steps: 1500, batch: 32, learning_rate: 0.01, momentum: 0.9 };
        let untrained = PoseRegressor::train(&data, &RegressorConfig { steps: 0, ..cfg.clone() }, 1).unwrap();
        let trained = PoseRegressor::train(&data, &cfg, 1).unwrap();
        let (e0, e1) = (untrained.mean_aligned_error(&data).unwrap(), trained.mean_aligned_error(&data).unwrap());
        assert!(e1 < 0.3 * e0, "{e0} -> {e1}");
    }
}
