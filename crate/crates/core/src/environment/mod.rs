//! Environmental models: anything that reports how confident a steganalyzer is
//! that an image is a cover.
//!
//! The builtin model is a SPAM-feature logistic detector ([`LinearModel`]);
//! [`RemoteEnv`] talks to an external scoring service over newline-delimited
//! JSON.

mod histogram;
mod linear;
mod remote;
mod spam;

use thiserror::Error;

use crate::media::{Domain, PixelMatrix};

pub use histogram::{confidence_histogram, ConfidenceHistogram};
pub use linear::{train, train_on_features, LinearModel, TrainHyper, TrainOutcome, MIN_TRAINING_PAIRS};
pub use remote::{decode_payload, encode_payload, score_request_line, RemoteEnv, RemoteSpec, SCORE_TIMEOUT};
pub use spam::{extract_features, FeatureVector, SPAM_DIMS, SPAM_T};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("{0}-domain input cannot be scored by this environment")]
    UnscorableDomain(Domain),
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("training failed: {0}")]
    Training(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("remote environment timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("remote environment: {0}")]
    Remote(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cover confidence in `[0, 1]`; higher means more cover-like.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EnvScore(f64);

impl EnvScore {
    pub fn new(value: f64) -> Result<Self, EnvError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(EnvError::InvalidConfidence(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// The f_c of the reward: cover confidence of a candidate image.
pub trait Environment {
    fn cover_confidence(&mut self, img: &PixelMatrix) -> Result<EnvScore, EnvError>;
}

impl<E: Environment + ?Sized> Environment for &mut E {
    fn cover_confidence(&mut self, img: &PixelMatrix) -> Result<EnvScore, EnvError> {
        (**self).cover_confidence(img)
    }
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn cover_confidence(&mut self, img: &PixelMatrix) -> Result<EnvScore, EnvError> {
        (**self).cover_confidence(img)
    }
}

/// Scores every input with the same confidence.
#[derive(Debug, Clone, Copy)]
pub struct ConstantEnv(pub f64);

impl Environment for ConstantEnv {
    fn cover_confidence(&mut self, _img: &PixelMatrix) -> Result<EnvScore, EnvError> {
        EnvScore::new(self.0)
    }
}

/// Wraps a closure as an environment.
pub struct FnEnv<F>(pub F);

impl<F: FnMut(&PixelMatrix) -> f64> Environment for FnEnv<F> {
    fn cover_confidence(&mut self, img: &PixelMatrix) -> Result<EnvScore, EnvError> {
        EnvScore::new((self.0)(img))
    }
}

impl Environment for LinearModel {
    fn cover_confidence(&mut self, img: &PixelMatrix) -> Result<EnvScore, EnvError> {
        self.score(img)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_bounds() {
        assert!(EnvScore::new(0.0).is_ok());
        assert!(EnvScore::new(1.0).is_ok());
        assert!(EnvScore::new(1.01).is_err());
        assert!(EnvScore::new(f64::NAN).is_err());
    }

    #[test]
    fn closures_and_constants_act_as_environments() {
        let img = PixelMatrix::from_u8(1, 1, &[3]).unwrap();
        assert_eq!(ConstantEnv(0.25).cover_confidence(&img).unwrap().value(), 0.25);
        let mut calls = 0;
        let mut env = FnEnv(|m: &PixelMatrix| {
            calls += 1;
            f64::from(m.get(0, 0)) / 10.0
        });
        assert_eq!(env.cover_confidence(&img).unwrap().value(), 0.3);
        assert!(FnEnv(|_: &PixelMatrix| 2.0).cover_confidence(&img).is_err());
        drop(env);
        assert_eq!(calls, 1);
    }
}
