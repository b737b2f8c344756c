//! Optimal ternary embedding simulator.
//!
//! Given costs and a payload, modification probabilities take the Gibbs form
//! `p± = exp(-λρ±) / (1 + exp(-λρ⁺) + exp(-λρ⁻))` with λ chosen so the total
//! ternary entropy equals the payload. Sampling those probabilities simulates
//! embedding with an ideal code.

use rand::Rng;
use thiserror::Error;

use crate::cost::{is_wet, CostPair};
use crate::media::{Domain, ModificationMap, PixelMatrix};
use crate::rng;

/// Allowed deviation of the realized entropy from the payload, in bits.
pub const ENTROPY_TOLERANCE_BITS: f64 = 1e-3;
pub const LAMBDA_MIN: f64 = 1e-7;
pub const LAMBDA_MAX: f64 = 1e3;
pub const MAX_BISECTION_STEPS: usize = 200;
const BRACKET_EXPANSIONS: usize = 8;
const BRACKET_STEP: f64 = 6.907_755_278_982_137; // ln 1000

/// The bisection keeps refining well inside the acceptance tolerance so
/// repeated fits on nearby costs give consistent probabilities.
const REFINE_TOLERANCE_BITS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum SimulatorError {
    #[error("payload of {payload_bits} bits exceeds capacity of {capacity_bits} bits")]
    InfeasiblePayload { payload_bits: f64, capacity_bits: f64 },
    #[error("λ search did not reach the payload (residual {residual_bits} bits)")]
    NonConvergence { residual_bits: f64 },
    #[error("invalid payload {0}")]
    InvalidPayload(f64),
    #[error("mask index {index} out of range for {len} elements")]
    MaskOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("modification leaves the pixel range at element {index} (value {value})")]
    OutOfRange { index: usize, value: f32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedProbabilities {
    pub width: usize,
    pub height: usize,
    pub p_plus: Vec<f64>,
    pub p_minus: Vec<f64>,
    /// Multiplier in the units of the supplied costs. Infinite for a zero payload.
    pub lambda: f64,
    pub target_entropy_bits: f64,
    pub realized_entropy_bits: f64,
}

/// Ternary entropy in bits.
pub fn ternary_entropy(p_plus: f64, p_minus: f64) -> f64 {
    let h = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    h(p_plus) + h(p_minus) + h(1.0 - p_plus - p_minus)
}

/// Maximum number of bits the masked elements can carry.
pub fn capacity_bits(cost: &CostPair, mask: Option<&[usize]>) -> f64 {
    let per_element = |i: usize| {
        let open = usize::from(!is_wet(cost.rho_plus()[i])) + usize::from(!is_wet(cost.rho_minus()[i]));
        ((1 + open) as f64).log2()
    };
    match mask {
        Some(m) => m.iter().map(|&i| per_element(i)).sum(),
        None => (0..cost.len()).map(per_element).sum(),
    }
}

struct Element {
    index: usize,
    plus: Option<f64>,
    minus: Option<f64>,
}

fn probs_at(e: &Element, lambda: f64) -> (f64, f64) {
    let ep = e.plus.map_or(0.0, |r| (-lambda * r).exp());
    let em = e.minus.map_or(0.0, |r| (-lambda * r).exp());
    let z = 1.0 + ep + em;
    (ep / z, em / z)
}

fn total_entropy(elements: &[Element], lambda: f64) -> f64 {
    elements
        .iter()
        .map(|e| {
            let (pp, pm) = probs_at(e, lambda);
            ternary_entropy(pp, pm)
        })
        .sum()
}

/// Fits λ by bisection over `log λ` (starting from `[LAMBDA_MIN, LAMBDA_MAX]`, widened
/// by factors of 1000 when the root lies outside) so the masked entropy matches `payload_bits`.
///
/// Costs are normalized by the median positive non-wet cost before the search, which makes
/// the result independent of the cost scale; the reported λ is converted back.
/// Elements outside `mask` get zero probabilities.
pub fn fit_probabilities(
    cost: &CostPair,
    payload_bits: f64,
    mask: Option<&[usize]>,
) -> Result<EmbedProbabilities, SimulatorError> {
    if !(payload_bits >= 0.0) || payload_bits.is_infinite() {
        return Err(SimulatorError::InvalidPayload(payload_bits));
    }
    let n = cost.len();
    if let Some(&index) = mask.and_then(|m| m.iter().find(|&&i| i >= n)) {
        return Err(SimulatorError::MaskOutOfRange { index, len: n });
    }
    let mut result = EmbedProbabilities {
        width: cost.width(),
        height: cost.height(),
        p_plus: vec![0.0; n],
        p_minus: vec![0.0; n],
        lambda: f64::INFINITY,
        target_entropy_bits: payload_bits,
        realized_entropy_bits: 0.0,
    };
    if payload_bits == 0.0 {
        return Ok(result);
    }
    let capacity = capacity_bits(cost, mask);
    if payload_bits > capacity + ENTROPY_TOLERANCE_BITS {
        return Err(SimulatorError::InfeasiblePayload { payload_bits, capacity_bits: capacity });
    }

    let indices: Vec<usize> = match mask {
        Some(m) => m.to_vec(),
        None => (0..n).collect(),
    };
    let open = |v: f64| (!is_wet(v)).then_some(v);
    let mut open_costs: Vec<f64> = indices
        .iter()
        .flat_map(|&i| [cost.rho_plus()[i], cost.rho_minus()[i]])
        .filter(|&v| !is_wet(v) && v > 0.0)
        .collect();
    let scale = if open_costs.is_empty() {
        1.0
    } else {
        let mid = open_costs.len() / 2;
        *open_costs.select_nth_unstable_by(mid, f64::total_cmp).1
    };
    let elements: Vec<Element> = indices
        .iter()
        .map(|&i| Element {
            index: i,
            plus: open(cost.rho_plus()[i]).map(|v| v / scale),
            minus: open(cost.rho_minus()[i]).map(|v| v / scale),
        })
        .collect();

    let (mut lo, mut hi) = (LAMBDA_MIN.ln(), LAMBDA_MAX.ln());
    let mut h_lo = total_entropy(&elements, lo.exp());
    let mut h_hi = total_entropy(&elements, hi.exp());
    // Widely spread costs can push the root outside the initial bracket.
    for _ in 0..BRACKET_EXPANSIONS {
        if h_hi <= payload_bits {
            break;
        }
        (lo, h_lo) = (hi, h_hi);
        hi += BRACKET_STEP;
        h_hi = total_entropy(&elements, hi.exp());
    }
    for _ in 0..BRACKET_EXPANSIONS {
        if h_lo >= payload_bits {
            break;
        }
        (hi, h_hi) = (lo, h_lo);
        lo -= BRACKET_STEP;
        h_lo = total_entropy(&elements, lo.exp());
    }
    let mut best = if (h_lo - payload_bits).abs() <= (h_hi - payload_bits).abs() {
        (lo, h_lo)
    } else {
        (hi, h_hi)
    };
    if h_lo >= payload_bits && h_hi <= payload_bits {
        for _ in 0..MAX_BISECTION_STEPS {
            if (best.1 - payload_bits).abs() <= REFINE_TOLERANCE_BITS {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let h = total_entropy(&elements, mid.exp());
            if (h - payload_bits).abs() < (best.1 - payload_bits).abs() {
                best = (mid, h);
            }
            // entropy decreases with λ
            if h > payload_bits {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let (log_lambda, realized) = best;
    if (realized - payload_bits).abs() > ENTROPY_TOLERANCE_BITS {
        return Err(SimulatorError::NonConvergence { residual_bits: realized - payload_bits });
    }
    let lambda = log_lambda.exp();
    for e in &elements {
        let (pp, pm) = probs_at(e, lambda);
        result.p_plus[e.index] = pp;
        result.p_minus[e.index] = pm;
    }
    result.lambda = lambda / scale;
    result.realized_entropy_bits = realized;
    Ok(result)
}

/// Draws a modification map: -1 with `p_minus`, +1 with `p_plus`, 0 otherwise.
///
/// One uniform draw is consumed per element with nonzero change probability,
/// in row-major order.
pub fn sample(probs: &EmbedProbabilities, rng_seed: u64) -> ModificationMap {
    let mut rng = rng::stream(rng_seed, &[]);
    let mut mods = ModificationMap::zeros(probs.width, probs.height);
    for (i, slot) in mods.entries_mut().iter_mut().enumerate() {
        let (pp, pm) = (probs.p_plus[i], probs.p_minus[i]);
        if pp + pm <= 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        *slot = if u < pm {
            -1
        } else if u < pm + pp {
            1
        } else {
            0
        };
    }
    mods
}

/// Adds a modification map to an image.
pub fn apply(img: &PixelMatrix, mods: &ModificationMap) -> Result<PixelMatrix, SimulatorError> {
    if img.width() != mods.width() || img.height() != mods.height() {
        return Err(SimulatorError::DimensionMismatch(format!(
            "image {}x{}, modifications {}x{}",
            img.width(),
            img.height(),
            mods.width(),
            mods.height()
        )));
    }
    let mut out = img.clone();
    let spatial = img.domain() == Domain::Spatial;
    for (index, (px, &d)) in out.data_mut().iter_mut().zip(mods.entries()).enumerate() {
        let value = *px + f32::from(d);
        if spatial && !(0.0..=255.0).contains(&value) {
            return Err(SimulatorError::OutOfRange { index, value });
        }
        *px = value;
    }
    Ok(out)
}

/// Fraction of modified elements.
pub fn change_rate(mods: &ModificationMap) -> f64 {
    if mods.is_empty() {
        return 0.0;
    }
    mods.count_nonzero() as f64 / mods.len() as f64
}
