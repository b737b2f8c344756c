//! Second-order SPAM features.
//!
//! For each of eight directions the neighbour differences are truncated to
//! `[-T, T]` and modelled as a second-order Markov chain; the 343 conditional
//! transition probabilities of the four axial directions are averaged into the
//! first half of the vector and those of the four diagonals into the second.

use crate::media::{Domain, PixelMatrix};

use super::EnvError;

pub const SPAM_T: i32 = 3;
const LEVELS: usize = (2 * SPAM_T + 1) as usize;
const BLOCK: usize = LEVELS * LEVELS * LEVELS;
pub const SPAM_DIMS: usize = 2 * BLOCK;

/// (row step, column step)
const AXIAL: [(isize, isize); 4] = [(0, 1), (0, -1), (1, 0), (-1, 0)];
const DIAGONAL: [(isize, isize); 4] = [(1, 1), (-1, -1), (-1, 1), (1, -1)];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Index of transition `(first, second) -> third` in a 343-bin block.
pub(crate) fn bin(first: i32, second: i32, third: i32) -> usize {
    let s = |v: i32| (v + SPAM_T) as usize;
    (s(first) * LEVELS + s(second)) * LEVELS + s(third)
}

fn clip(v: f32) -> i32 {
    (v as i32).clamp(-SPAM_T, SPAM_T)
}

/// Transition probabilities `P(D[k+2] | D[k+1], D[k])` for differences
/// `D[p] = I[p] - I[p + step]` walked along `step`.
fn transitions(img: &PixelMatrix, (dr, dc): (isize, isize)) -> [f64; BLOCK] {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let px = img.data();
    let at = |r: isize, c: isize| px[(r * w + c) as usize];
    let mut counts = [0u32; BLOCK];
    // A chain starting at p needs p + 3*step inside the image.
    let rows = (0.max(-3 * dr), h.min(h - 3 * dr));
    let cols = (0.max(-3 * dc), w.min(w - 3 * dc));
    for r in rows.0..rows.1 {
        for c in cols.0..cols.1 {
            let p0 = at(r, c);
            let p1 = at(r + dr, c + dc);
            let p2 = at(r + 2 * dr, c + 2 * dc);
            let p3 = at(r + 3 * dr, c + 3 * dc);
            counts[bin(clip(p0 - p1), clip(p1 - p2), clip(p2 - p3))] += 1;
        }
    }
    let mut probs = [0.0; BLOCK];
    for (row_probs, row_counts) in probs.chunks_exact_mut(LEVELS).zip(counts.chunks_exact(LEVELS)) {
        let total: u32 = row_counts.iter().sum();
        if total > 0 {
            for (p, &k) in row_probs.iter_mut().zip(row_counts) {
                *p = f64::from(k) / f64::from(total);
            }
        }
    }
    probs
}

pub fn extract_features(img: &PixelMatrix) -> Result<FeatureVector, EnvError> {
    if img.domain() != Domain::Spatial {
        return Err(EnvError::UnscorableDomain(img.domain()));
    }
    let mut out = vec![0.0; SPAM_DIMS];
    for (half, dirs) in [AXIAL, DIAGONAL].iter().enumerate() {
        let dst = &mut out[half * BLOCK..(half + 1) * BLOCK];
        for &dir in dirs {
            for (d, p) in dst.iter_mut().zip(transitions(img, dir)) {
                *d += p / 4.0;
            }
        }
    }
    Ok(FeatureVector(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Brute-force oracle: explicit per-direction loops over all pixel
    /// quadruples with bounds checks, counts accumulated in nested arrays.
    fn oracle(img: &PixelMatrix) -> Vec<f64> {
        let (w, h) = (img.width() as i64, img.height() as i64);
        let px = |r: i64, c: i64| img.get(r as usize, c as usize) as i64;
        let dirs: [[(i64, i64); 4]; 2] = [
            [(0, 1), (0, -1), (1, 0), (-1, 0)],
            [(1, 1), (-1, -1), (-1, 1), (1, -1)],
        ];
        let mut features = Vec::new();
        for group in dirs {
            let mut acc = vec![0.0; 343];
            for (dr, dc) in group {
                let mut counts = vec![vec![vec![0u64; 7]; 7]; 7];
                for r in 0..h {
                    for c in 0..w {
                        let (r3, c3) = (r + 3 * dr, c + 3 * dc);
                        if r3 < 0 || r3 >= h || c3 < 0 || c3 >= w {
                            continue;
                        }
                        let d = |k: i64| {
                            let a = px(r + k * dr, c + k * dc);
                            let b = px(r + (k + 1) * dr, c + (k + 1) * dc);
                            ((a - b).clamp(-3, 3) + 3) as usize
                        };
                        counts[d(0)][d(1)][d(2)] += 1;
                    }
                }
                for u in 0..7 {
                    for v in 0..7 {
                        let total: u64 = counts[u][v].iter().sum();
                        for x in 0..7 {
                            if total > 0 {
                                acc[u * 49 + v * 7 + x] += counts[u][v][x] as f64 / total as f64 / 4.0;
                            }
                        }
                    }
                }
            }
            features.extend(acc);
        }
        features
    }

    fn random_image(w: usize, h: usize, seed: u64, lo: u8, hi: u8) -> PixelMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let bytes: Vec<u8> = (0..w * h).map(|_| rng.random_range(lo..=hi)).collect();
        PixelMatrix::from_u8(w, h, &bytes).unwrap()
    }

    #[test]
    fn constant_image_concentrates_at_zero_bins() {
        let f = extract_features(&PixelMatrix::from_u8(10, 10, &[77; 100]).unwrap()).unwrap();
        assert_eq!(f.len(), SPAM_DIMS);
        let zero = bin(0, 0, 0);
        assert_eq!(f.values()[zero], 1.0);
        assert_eq!(f.values()[BLOCK + zero], 1.0);
        let total: f64 = f.values().iter().sum();
        assert_eq!(total, 2.0);
    }

    #[test]
    fn brightness_offset_leaves_features_unchanged() {
        let img = random_image(24, 20, 1, 0, 254);
        let bumped = PixelMatrix::from_u8(24, 20, &img.to_u8().iter().map(|v| v + 1).collect::<Vec<_>>()).unwrap();
        assert_eq!(extract_features(&img).unwrap(), extract_features(&bumped).unwrap());
    }

    #[test]
    fn matches_brute_force_oracle() {
        for (seed, lo, hi) in [(3, 0, 255), (4, 100, 104), (5, 120, 122)] {
            let img = random_image(64, 64, seed, lo, hi);
            let got = extract_features(&img).unwrap();
            let want = oracle(&img);
            for (a, b) in got.values().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let odd = random_image(7, 5, 9, 90, 97);
        let got = extract_features(&odd).unwrap();
        for (a, b) in got.values().iter().zip(&oracle(&odd)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conditional_rows_are_distributions() {
        let f = extract_features(&random_image(32, 32, 8, 90, 110)).unwrap();
        for row in f.values().chunks_exact(LEVELS) {
            let s: f64 = row.iter().sum();
            assert!(s <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn jpeg_domain_rejected() {
        let img = PixelMatrix::new(4, 4, Domain::Jpeg, vec![0.0; 16]).unwrap();
        assert!(matches!(extract_features(&img), Err(EnvError::UnscorableDomain(Domain::Jpeg))));
    }
}
