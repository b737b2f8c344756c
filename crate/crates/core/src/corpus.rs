//! Deterministic synthetic grayscale images for desk-scale experiments.
//!
//! Each image mixes a smooth illumination field, a few flat-shaded shapes
//! with hard edges, and spatially correlated noise whose strength varies over
//! the image, so costs vary from smooth (expensive) to textured (cheap) regions.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::media::PixelMatrix;
use crate::rng::{stream, STREAM_CORPUS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusSpec {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn new(width: usize, height: usize, seed: u64) -> Self {
        Self { width, height, seed }
    }

    /// Image `index`; independent of how many others are generated.
    pub fn image(&self, index: u64) -> PixelMatrix {
        let mut rng = stream(self.seed, &[STREAM_CORPUS, index]);
        render(self.width, self.height, &mut rng)
    }

    pub fn images(&self, range: std::ops::Range<u64>) -> Vec<PixelMatrix> {
        range.map(|i| self.image(i)).collect()
    }
}

/// Smooth field in `[0, 1]` with a few sharp-ish transitions.
fn smooth_field(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (wf, hf) = (w as f64, h as f64);
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.random_range(0.5..3.0) / wf, rng.random_range(0.5..3.0) / hf, rng.random_range(0.0..TAU)))
        .collect();
    let sharpness = rng.random_range(1.5..5.0);
    let bias = rng.random_range(-2.0..0.5);
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let v: f64 = waves.iter().map(|(fx, fy, ph)| (TAU * (fx * c as f64 + fy * r as f64) + ph).cos()).sum();
            out[r * w + c] = 1.0 / (1.0 + (-(sharpness * v / 3.0_f64.sqrt() + bias)).exp());
        }
    }
    out
}

fn render(w: usize, h: usize, rng: &mut ChaCha8Rng) -> PixelMatrix {
    let (wf, hf) = (w as f64, h as f64);
    let mut field = vec![rng.random_range(70.0..180.0); w * h];

    // Low-frequency illumination.
    for _ in 0..rng.random_range(2..5) {
        let amp = rng.random_range(5.0..35.0);
        let fx = rng.random_range(0.2..2.5) / wf;
        let fy = rng.random_range(0.2..2.5) / hf;
        let phase = rng.random_range(0.0..TAU);
        for r in 0..h {
            for c in 0..w {
                field[r * w + c] += amp * (TAU * (fx * c as f64 + fy * r as f64) + phase).cos();
            }
        }
    }

    // Flat shapes: discs and axis-aligned rectangles.
    for _ in 0..rng.random_range(2..7) {
        let offset = rng.random_range(-50.0..50.0);
        let (cr, cc) = (rng.random_range(0.0..hf), rng.random_range(0.0..wf));
        let size = rng.random_range(0.08..0.35) * wf.min(hf);
        let disc = rng.random_bool(0.5);
        for r in 0..h {
            for c in 0..w {
                let (dr, dc) = (r as f64 - cr, c as f64 - cc);
                let inside = if disc { dr * dr + dc * dc < size * size } else { dr.abs() < size && dc.abs() < 0.6 * size };
                if inside {
                    field[r * w + c] += offset;
                }
            }
        }
    }

    // Texture strength varies over the image: smooth areas next to busy ones.
    let mask = smooth_field(w, h, rng);
    let (lo, hi) = (rng.random_range(0.03f64..0.15).ln(), rng.random_range(1.5f64..4.0).ln());
    let white: Vec<f64> = (0..w * h).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let grain = rng.random_range(0.2..0.8);
    for r in 0..h {
        for c in 0..w {
            let mut s = 0.0;
            let mut k = 0.0;
            for rr in r.saturating_sub(1)..(r + 2).min(h) {
                for cc in c.saturating_sub(1)..(c + 2).min(w) {
                    s += white[rr * w + cc];
                    k += 1.0;
                }
            }
            let i = r * w + c;
            let sigma = (lo + (hi - lo) * mask[i]).exp();
            field[i] += sigma * (3.0 * s / k + grain * white[i]);
        }
    }

    let bytes: Vec<u8> = field.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    PixelMatrix::from_u8(w, h, &bytes).expect("dimensions are consistent")
}
