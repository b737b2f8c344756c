use crate::media::PixelMatrix;

use super::{EnvError, Environment};

/// Distribution of cover confidences over a dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConfidenceHistogram {
    /// Counts over equal-width buckets of `[0, 1]`; a score of 1.0 lands in the last bucket.
    pub buckets: Vec<usize>,
    sorted: Vec<f64>,
}

impl ConfidenceHistogram {
    pub fn from_scores(scores: &[f64], bucket_count: usize) -> Self {
        let bucket_count = bucket_count.max(1);
        let mut buckets = vec![0; bucket_count];
        for &s in scores {
            let b = ((s * bucket_count as f64) as usize).min(bucket_count - 1);
            buckets[b] += 1;
        }
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self { buckets, sorted }
    }

    pub fn count(&self) -> usize {
        self.sorted.len()
    }

    /// Fraction of scores strictly above `threshold`.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        if self.sorted.is_empty() {
            return 0.0;
        }
        let above = self.sorted.len() - self.sorted.partition_point(|&s| s <= threshold);
        above as f64 / self.sorted.len() as f64
    }

    /// Empirical quantile by nearest rank.
    pub fn quantile(&self, q: f64) -> Option<f64> {
        if self.sorted.is_empty() {
            return None;
        }
        let rank = (q.clamp(0.0, 1.0) * (self.sorted.len() - 1) as f64).round() as usize;
        Some(self.sorted[rank])
    }
}

pub fn confidence_histogram<E: Environment + ?Sized>(
    env: &mut E,
    images: &[PixelMatrix],
    bucket_count: usize,
) -> Result<ConfidenceHistogram, EnvError> {
    let scores = images
        .iter()
        .map(|img| env.cover_confidence(img).map(|s| s.value()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ConfidenceHistogram::from_scores(&scores, bucket_count))
}
