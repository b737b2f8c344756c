//! Additive embedding costs: the HILL cost function and the total distortion of a
//! modification map.

use thiserror::Error;

use crate::media::{Domain, ModificationMap, PixelMatrix};

/// Cost that forbids a modification direction.
pub const WET_COST: f64 = 1e13;

/// Filtered residuals below this magnitude are clamped before inversion.
pub const HILL_RESIDUAL_FLOOR: f64 = 1e-10;

const KB_KERNEL: [[f64; 3]; 3] = [[-1.0, 2.0, -1.0], [2.0, -4.0, 2.0], [-1.0, 2.0, -1.0]];
const HILL_SMOOTH_SIZE: usize = 3;
const HILL_SPREAD_SIZE: usize = 15;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("negative or non-finite cost {value} at element {index}")]
    InvalidCost { index: usize, value: f64 },
    #[error("HILL is defined for spatial images only; ingest JPEG-domain costs from a cost map")]
    UnsupportedDomain,
}

/// Per-element costs of a +1 and a -1 modification.
#[derive(Debug, Clone, PartialEq)]
pub struct CostPair {
    width: usize,
    height: usize,
    rho_plus: Vec<f64>,
    rho_minus: Vec<f64>,
}

impl CostPair {
    pub fn new(width: usize, height: usize, rho_plus: Vec<f64>, rho_minus: Vec<f64>) -> Result<Self, CostError> {
        let n = width * height;
        if rho_plus.len() != n || rho_minus.len() != n {
            return Err(CostError::DimensionMismatch(format!(
                "{width}x{height} needs {n} costs per plane, got {} and {}",
                rho_plus.len(),
                rho_minus.len()
            )));
        }
        for (index, &value) in rho_plus.iter().chain(&rho_minus).enumerate() {
            if !(value >= 0.0) || value.is_infinite() {
                return Err(CostError::InvalidCost { index, value });
            }
        }
        Ok(Self { width, height, rho_plus, rho_minus })
    }

    /// Same cost for both directions everywhere.
    pub fn symmetric(width: usize, height: usize, costs: Vec<f64>) -> Result<Self, CostError> {
        Self::new(width, height, costs.clone(), costs)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.rho_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho_plus.is_empty()
    }

    pub fn rho_plus(&self) -> &[f64] {
        &self.rho_plus
    }

    pub fn rho_minus(&self) -> &[f64] {
        &self.rho_minus
    }

    pub(crate) fn planes_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.rho_plus, &mut self.rho_minus)
    }

    /// Scalar cost used for ordering decisions: the cheaper direction.
    pub fn scalar(&self, index: usize) -> f64 {
        self.rho_plus[index].min(self.rho_minus[index])
    }

    pub fn is_fully_wet(&self, index: usize) -> bool {
        is_wet(self.rho_plus[index]) && is_wet(self.rho_minus[index])
    }

    /// Multiplies every non-wet cost by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |v: &f64| if is_wet(*v) { *v } else { v * factor };
        Self {
            width: self.width,
            height: self.height,
            rho_plus: self.rho_plus.iter().map(scale).collect(),
            rho_minus: self.rho_minus.iter().map(scale).collect(),
        }
    }

    /// Marks directions that would push a spatial pixel outside `[0, 255]` as wet.
    pub fn mark_saturation(&mut self, img: &PixelMatrix) {
        if img.domain() != Domain::Spatial {
            return;
        }
        for (i, &p) in img.data().iter().enumerate() {
            if p >= 255.0 {
                self.rho_plus[i] = WET_COST;
            }
            if p <= 0.0 {
                self.rho_minus[i] = WET_COST;
            }
        }
    }
}

pub fn is_wet(cost: f64) -> bool {
    cost >= WET_COST
}

/// Index into `[0, len)` after symmetric (edge-repeating) reflection.
pub(crate) fn reflect(index: isize, len: usize) -> usize {
    let period = 2 * len as isize;
    let m = index.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// `size`x`size` moving average with symmetric padding, computed separably.
fn box_mean(src: &[f64], width: usize, height: usize, size: usize) -> Vec<f64> {
    let half = (size / 2) as isize;
    let mut rows = vec![0.0; src.len()];
    for r in 0..height {
        let line = &src[r * width..(r + 1) * width];
        for c in 0..width {
            let c = c as isize;
            let sum: f64 = (c - half..=c + half).map(|k| line[reflect(k, width)]).sum();
            rows[r * width + c as usize] = sum;
        }
    }
    let norm = (size * size) as f64;
    let mut out = vec![0.0; src.len()];
    for c in 0..width {
        for r in 0..height {
            let r = r as isize;
            let sum: f64 = (r - half..=r + half).map(|k| rows[reflect(k, height) * width + c]).sum();
            out[r as usize * width + c] = sum / norm;
        }
    }
    out
}

/// HILL costs: the KB high-pass residual magnitude, smoothed by a 3x3 mean,
/// inverted, then spread by a 15x15 mean. Both directions share the cost except
/// where a modification would saturate.
pub fn hill_cost(img: &PixelMatrix) -> Result<CostPair, CostError> {
    if img.domain() != Domain::Spatial {
        return Err(CostError::UnsupportedDomain);
    }
    let (w, h) = (img.width(), img.height());
    let px = img.data();
    let mut residual = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (dr, krow) in KB_KERNEL.iter().enumerate() {
                let rr = reflect(r as isize + dr as isize - 1, h);
                for (dc, &k) in krow.iter().enumerate() {
                    let cc = reflect(c as isize + dc as isize - 1, w);
                    acc += k * f64::from(px[rr * w + cc]);
                }
            }
            residual[r * w + c] = acc.abs();
        }
    }
    let smoothed = box_mean(&residual, w, h, HILL_SMOOTH_SIZE);
    let inverse: Vec<f64> = smoothed.iter().map(|&v| 1.0 / v.max(HILL_RESIDUAL_FLOOR)).collect();
    let rho: Vec<f64> = box_mean(&inverse, w, h, HILL_SPREAD_SIZE)
        .into_iter()
        .map(|v| v.min(WET_COST))
        .collect();
    let mut pair = CostPair::symmetric(w, h, rho)?;
    pair.mark_saturation(img);
    Ok(pair)
}

/// Total additive distortion: the sum of ρ⁺ over +1 changes and ρ⁻ over -1 changes.
pub fn distortion(cost: &CostPair, mods: &ModificationMap) -> Result<f64, CostError> {
    if cost.width != mods.width() || cost.height != mods.height() {
        return Err(CostError::DimensionMismatch(format!(
            "costs are {}x{}, modifications {}x{}",
            cost.width,
            cost.height,
            mods.width(),
            mods.height()
        )));
    }
    Ok(mods
        .entries()
        .iter()
        .enumerate()
        .map(|(i, &d)| match d {
            1 => cost.rho_plus[i],
            -1 => cost.rho_minus[i],
            _ => 0.0,
        })
        .sum())
}
