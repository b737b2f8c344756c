//! Logistic-regression detector over SPAM features.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::media::PixelMatrix;
use crate::rng;

use super::spam::{extract_features, FeatureVector, SPAM_DIMS};
use super::{EnvError, EnvScore};

pub const MIN_TRAINING_PAIRS: usize = 50;

const MODEL_MAGIC: &[u8; 6] = b"MCTSLM";
const MODEL_VERSION: u16 = 1;
const MIN_SCALE: f64 = 1e-12;

/// Linear response on standardized features; `sigmoid` of it is the cover confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self { epochs: 60, learning_rate: 0.002, l2: 0.01, validation_fraction: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LinearModel,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LinearModel {
    /// All-zero weights: every input scores 0.5.
    pub fn zeros(dims: usize) -> Self {
        Self { mean: vec![0.0; dims], scale: vec![1.0; dims], weights: vec![0.0; dims], bias: 0.0 }
    }

    pub fn dims(&self) -> usize {
        self.weights.len()
    }

    pub fn response(&self, features: &[f64]) -> f64 {
        features
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .zip(&self.weights)
            .map(|(((x, m), s), w)| w * (x - m) / s)
            .sum::<f64>()
            + self.bias
    }

    pub fn score_features(&self, features: &FeatureVector) -> Result<EnvScore, EnvError> {
        if features.len() != self.dims() {
            return Err(EnvError::ModelFormat(format!(
                "model has {} dims, features have {}",
                self.dims(),
                features.len()
            )));
        }
        EnvScore::new(sigmoid(self.response(features.values())))
    }

    pub fn score(&self, img: &PixelMatrix) -> Result<EnvScore, EnvError> {
        self.score_features(&extract_features(img)?)
    }

    /// Serialized form: magic, u16 version, u32 dims, then mean, scale and
    /// weights (dims f64 each) and the bias, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * (3 * self.dims() + 1));
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims() as u32).to_le_bytes());
        for v in self.mean.iter().chain(&self.scale).chain(&self.weights).chain([&self.bias]) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EnvError> {
        let bad = |m: &str| EnvError::ModelFormat(m.to_string());
        if bytes.len() < 12 || &bytes[..6] != MODEL_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes([bytes[6], bytes[7]]);
        if version != MODEL_VERSION {
            return Err(EnvError::ModelFormat(format!("unsupported version {version}")));
        }
        let dims = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
        let body = &bytes[12..];
        if body.len() != 8 * (3 * dims + 1) {
            return Err(bad("length does not match declared dimensions"));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite parameter"));
        }
        let model = Self {
            mean: values[..dims].to_vec(),
            scale: values[dims..2 * dims].to_vec(),
            weights: values[2 * dims..3 * dims].to_vec(),
            bias: values[3 * dims],
        };
        if model.scale.iter().any(|&s| s <= 0.0) {
            return Err(bad("non-positive normalization scale"));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EnvError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnvError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Trains on images; see [`train_on_features`].
pub fn train(covers: &[PixelMatrix], stegos: &[PixelMatrix], hyper: &TrainHyper) -> Result<TrainOutcome, EnvError> {
    let extract = |set: &[PixelMatrix]| set.iter().map(extract_features).collect::<Result<Vec<_>, _>>();
    train_on_features(&extract(covers)?, &extract(stegos)?, hyper)
}

/// Fits a logistic model (cover = 1, stego = 0) by seeded SGD.
///
/// Pairs stay together: a held-out fraction of pair indices forms the
/// validation set. Normalization statistics come from the training split.
pub fn train_on_features(
    covers: &[FeatureVector],
    stegos: &[FeatureVector],
    hyper: &TrainHyper,
) -> Result<TrainOutcome, EnvError> {
    if covers.is_empty() || stegos.is_empty() {
        return Err(EnvError::Training("empty dataset".into()));
    }
    if covers.len() != stegos.len() {
        return Err(EnvError::Training(format!(
            "{} covers but {} stegos",
            covers.len(),
            stegos.len()
        )));
    }
    if covers.len() < MIN_TRAINING_PAIRS {
        return Err(EnvError::Training(format!(
            "need at least {MIN_TRAINING_PAIRS} pairs, got {}",
            covers.len()
        )));
    }
    let dims = covers[0].len();
    if covers.iter().chain(stegos).any(|f| f.len() != dims) {
        return Err(EnvError::Training("feature dimensions differ".into()));
    }
    let first = covers[0].values();
    if covers.iter().chain(stegos).all(|f| f.values() == first) {
        return Err(EnvError::Training("all feature vectors are identical".into()));
    }
    if !(hyper.validation_fraction > 0.0 && hyper.validation_fraction < 1.0) {
        return Err(EnvError::Training("validation fraction must lie in (0, 1)".into()));
    }

    let n = covers.len();
    let mut pairs: Vec<usize> = (0..n).collect();
    pairs.shuffle(&mut rng::stream(hyper.seed, &[rng::STREAM_TRAIN, 0]));
    let n_val = ((n as f64 * hyper.validation_fraction).round() as usize).clamp(1, n - 1);
    let (val_pairs, train_pairs) = pairs.split_at(n_val);

    let labelled = |idx: &[usize]| -> Vec<(&[f64], f64)> {
        idx.iter()
            .flat_map(|&i| [(covers[i].values(), 1.0), (stegos[i].values(), 0.0)])
            .collect()
    };
    let train_set = labelled(train_pairs);
    let val_set = labelled(val_pairs);

    let count = train_set.len() as f64;
    let mut mean = vec![0.0; dims];
    for (x, _) in &train_set {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v / count;
        }
    }
    let mut scale = vec![0.0; dims];
    for (x, _) in &train_set {
        for ((s, v), m) in scale.iter_mut().zip(x.iter()).zip(&mean) {
            *s += (v - m) * (v - m) / count;
        }
    }
    for s in &mut scale {
        *s = if s.sqrt() > MIN_SCALE { s.sqrt() } else { 1.0 };
    }

    let standardized: Vec<(Vec<f64>, f64)> = train_set
        .iter()
        .map(|(x, y)| (x.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect(), *y))
        .collect();
    let mut weights = vec![0.0; dims];
    let mut bias = 0.0;
    let mut order: Vec<usize> = (0..standardized.len()).collect();
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng::stream(hyper.seed, &[rng::STREAM_TRAIN, 1, epoch as u64]));
        for &k in &order {
            let (x, y) = &standardized[k];
            let z = bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            let g = sigmoid(z) - y;
            for (w, v) in weights.iter_mut().zip(x) {
                *w -= hyper.learning_rate * (g * v + hyper.l2 * *w);
            }
            bias -= hyper.learning_rate * g;
        }
    }
    let model = LinearModel { mean, scale, weights, bias };
    let accuracy = |set: &[(&[f64], f64)]| {
        let correct = set
            .iter()
            .filter(|(x, y)| (sigmoid(model.response(x)) >= 0.5) == (*y == 1.0))
            .count();
        correct as f64 / set.len() as f64
    };
    let train_accuracy = accuracy(&train_set);
    let validation_accuracy = accuracy(&val_set);
    log::info!("detector trained: train accuracy {train_accuracy:.4}, validation accuracy {validation_accuracy:.4}");
    Ok(TrainOutcome { model, train_accuracy, validation_accuracy })
}

impl Default for LinearModel {
    fn default() -> Self {
        Self::zeros(SPAM_DIMS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_features(n: usize, dims: usize, seed: u64, shift: f64) -> Vec<FeatureVector> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut v: Vec<f64> = (0..dims).map(|_| rng.random::<f64>()).collect();
                v[0] += shift;
                FeatureVector(v)
            })
            .collect()
    }

    #[test]
    fn zero_model_scores_half() {
        let img = PixelMatrix::from_u8(8, 8, &[9; 64]).unwrap();
        assert_eq!(LinearModel::default().score(&img).unwrap().value(), 0.5);
    }

    #[test]
    fn separable_data_is_learned_perfectly() {
        let covers = random_features(60, 5, 1, 2.0);
        let stegos = random_features(60, 5, 2, -2.0);
        let out = train_on_features(&covers, &stegos, &TrainHyper::default()).unwrap();
        assert_eq!(out.train_accuracy, 1.0);
        assert_eq!(out.validation_accuracy, 1.0);
        // orientation: covers score high
        let s = out.model.score_features(&covers[0]).unwrap().value();
        assert!(s > 0.5);
        assert!(out.model.response(covers[0].values()) > 0.0);
    }

    #[test]
    fn identical_classes_give_chance_accuracy() {
        let covers = random_features(80, 6, 3, 0.0);
        let out = train_on_features(&covers, &covers, &TrainHyper::default()).unwrap();
        assert!((out.validation_accuracy - 0.5).abs() <= 0.05);
    }

    #[test]
    fn training_errors() {
        let few = random_features(10, 3, 1, 0.0);
        assert!(matches!(train_on_features(&few, &few, &TrainHyper::default()), Err(EnvError::Training(_))));
        assert!(matches!(train_on_features(&[], &[], &TrainHyper::default()), Err(EnvError::Training(_))));
        let same = vec![FeatureVector(vec![1.0, 2.0]); 60];
        assert!(matches!(train_on_features(&same, &same, &TrainHyper::default()), Err(EnvError::Training(_))));
    }

    #[test]
    fn training_is_reproducible() {
        let covers = random_features(60, 8, 4, 0.3);
        let stegos = random_features(60, 8, 5, -0.3);
        let hyper = TrainHyper { seed: 17, ..TrainHyper::default() };
        let a = train_on_features(&covers, &stegos, &hyper).unwrap();
        let b = train_on_features(&covers, &stegos, &hyper).unwrap();
        assert_eq!(a.model.to_bytes(), b.model.to_bytes());
    }

    #[test]
    fn persistence_round_trip() {
        let covers = random_features(60, 4, 6, 1.0);
        let stegos = random_features(60, 4, 7, -1.0);
        let model = train_on_features(&covers, &stegos, &TrainHyper::default()).unwrap().model;
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..6], b"MCTSLM");
        assert_eq!(bytes.len(), 12 + 8 * (3 * 4 + 1));
        assert_eq!(LinearModel::from_bytes(&bytes).unwrap(), model);
        assert!(LinearModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[6] = 9;
        assert!(LinearModel::from_bytes(&wrong).is_err());
    }
}
