//! End-to-end embedding: baseline stego, sequential sublattice embedding with
//! search-driven cost adjustment, and the plain / CMD comparison methods.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{hill_cost, is_wet, CostError, CostPair};
use crate::environment::{EnvError, Environment};
use crate::lattice::{ddo_order, decompose, LatticeError, SchemeKind};
use crate::mcts::{Budget, MctsError, Polarity, PolarityMatrix, SearchTree};
use crate::media::{MediaError, ModificationMap, PixelMatrix};
use crate::rng::{derive_seed, STREAM_BASELINE, STREAM_SUBLATTICE, STREAM_TREE};
use crate::simulator::{apply, fit_probabilities, sample, SimulatorError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cost: {0}")]
    Cost(#[from] CostError),
    #[error("lattice: {0}")]
    Lattice(#[from] LatticeError),
    #[error("simulator: {0}")]
    Simulator(#[from] SimulatorError),
    #[error("search: {0}")]
    Mcts(#[from] MctsError),
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("media: {0}")]
    Media(#[from] MediaError),
    #[error("scaling factor must exceed 1, got {0}")]
    InvalidAlpha(f64),
    #[error("cost map is {got:?}, image is {want:?}")]
    DimensionMismatch { got: (usize, usize), want: (usize, usize) },
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Where per-element costs come from.
#[derive(Debug, Clone, PartialEq)]
pub enum CostSource {
    /// HILL, recomputed from the partially embedded image before each sublattice.
    BuiltinHill,
    /// Fixed costs, e.g. loaded from a cost-map file; used for every sublattice.
    External(CostPair),
}

impl CostSource {
    fn costs_for(&self, img: &PixelMatrix) -> Result<CostPair> {
        match self {
            Self::BuiltinHill => Ok(hill_cost(img)?),
            Self::External(pair) => {
                if (pair.width(), pair.height()) != (img.width(), img.height()) {
                    return Err(PipelineError::DimensionMismatch {
                        got: (pair.width(), pair.height()),
                        want: (img.width(), img.height()),
                    });
                }
                Ok(pair.clone())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmbedPlan {
    /// Absolute payload in bits, split equally across sublattices.
    pub payload_bits_total: f64,
    pub scheme: SchemeKind,
    pub budget: Budget,
    pub cost_source: CostSource,
    pub rng_seed: u64,
    /// Search the first sublattice too instead of embedding it unadjusted.
    pub adjust_first_sublattice: bool,
    /// Reuse one sampling seed for every search of a sublattice, so candidates
    /// differ only through their adjusted costs.
    pub common_random_numbers: bool,
}

impl EmbedPlan {
    pub fn new(payload_bits_total: f64, rng_seed: u64) -> Self {
        Self {
            payload_bits_total,
            scheme: SchemeKind::Spatial2x2,
            budget: Budget::default(),
            cost_source: CostSource::BuiltinHill,
            rng_seed,
            adjust_first_sublattice: false,
            common_random_numbers: false,
        }
    }
}

/// Payload in bits for a relative rate over the whole image.
pub fn payload_bits(rate: f64, img: &PixelMatrix) -> f64 {
    rate * img.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxSearches,
    ConfidenceThreshold,
    /// Embedded once with unadjusted costs; no search ran.
    Unadjusted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SublatticeTrace {
    pub sublattice_id: usize,
    pub payload_bits: f64,
    /// Decisions per search path (non-wet elements of the sublattice).
    pub tree_depth: usize,
    pub searches_used: usize,
    pub r_top: f64,
    pub terminated_by: Termination,
    /// Unscaled reward of every sample, in order.
    pub rewards: Vec<f64>,
    /// Best reward after each sample.
    pub r_top_history: Vec<f64>,
    /// Index into `rewards` of the adopted sample.
    pub best_sample: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedTrace {
    pub per_sublattice: Vec<SublatticeTrace>,
    pub baseline_confidence: f64,
    pub final_confidence: f64,
    pub change_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StegoResult {
    pub stego: PixelMatrix,
    pub mods: ModificationMap,
    pub trace: EmbedTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stego {
    pub stego: PixelMatrix,
    pub mods: ModificationMap,
}

/// Divides ρ⁺ by α where γ = +1 and ρ⁻ by α where γ = -1. Wet entries stay wet.
pub fn adjust_costs(cost: &CostPair, gamma: &PolarityMatrix, alpha: f64) -> Result<CostPair> {
    if !(alpha > 1.0) {
        return Err(PipelineError::InvalidAlpha(alpha));
    }
    if (gamma.width(), gamma.height()) != (cost.width(), cost.height()) {
        return Err(PipelineError::DimensionMismatch {
            got: (gamma.width(), gamma.height()),
            want: (cost.width(), cost.height()),
        });
    }
    let mut out = cost.clone();
    let (plus, minus) = out.planes_mut();
    for (i, g) in gamma.gamma().iter().enumerate() {
        let plane = match g {
            Polarity::Plus => &mut plus[i],
            Polarity::Minus => &mut minus[i],
            Polarity::Zero => continue,
        };
        if !is_wet(*plane) {
            *plane /= alpha;
        }
    }
    Ok(out)
}

fn neighbour_sum(mods: &ModificationMap, index: usize) -> i32 {
    let (w, h) = (mods.width(), mods.height());
    let (r, c) = (index / w, index % w);
    let e = mods.entries();
    let mut s = 0i32;
    if r > 0 {
        s += i32::from(e[index - w]);
    }
    if r + 1 < h {
        s += i32::from(e[index + w]);
    }
    if c > 0 {
        s += i32::from(e[index - 1]);
    }
    if c + 1 < w {
        s += i32::from(e[index + 1]);
    }
    s
}

fn cmd_adjust_in_place(cost: &mut CostPair, mods: &ModificationMap, alpha: f64, index: usize) {
    let s = neighbour_sum(mods, index);
    let (plus, minus) = cost.planes_mut();
    let plane = if s > 1 {
        &mut plus[index]
    } else if s < -1 {
        &mut minus[index]
    } else {
        return;
    };
    if !is_wet(*plane) {
        *plane /= alpha;
    }
}

/// CMD rule at one element: ρ⁺/α when the 4-neighbour modification sum
/// exceeds +1, ρ⁻/α when it is below -1.
pub fn cmd_adjust(cost: &CostPair, partial_mods: &ModificationMap, alpha: f64, index: usize) -> Result<CostPair> {
    if !(alpha > 1.0) {
        return Err(PipelineError::InvalidAlpha(alpha));
    }
    if (partial_mods.width(), partial_mods.height()) != (cost.width(), cost.height()) {
        return Err(PipelineError::DimensionMismatch {
            got: (partial_mods.width(), partial_mods.height()),
            want: (cost.width(), cost.height()),
        });
    }
    let mut out = cost.clone();
    cmd_adjust_in_place(&mut out, partial_mods, alpha, index);
    Ok(out)
}

/// `R = f_c(candidate) - baseline` and its shaped value.
pub fn reward<E: Environment + ?Sized>(
    env: &mut E,
    candidate: &PixelMatrix,
    baseline_confidence: f64,
    budget: &Budget,
) -> Result<(f64, f64)> {
    let r = env.cover_confidence(candidate)?.value() - baseline_confidence;
    Ok((r, budget.scale_reward(r)))
}

fn sample_seed(plan: &EmbedPlan, sublattice: usize, search: usize) -> u64 {
    let k = if plan.common_random_numbers { 0 } else { search as u64 };
    derive_seed(plan.rng_seed, &[STREAM_SUBLATTICE, sublattice as u64, k])
}

/// Additive embedding of the whole image at once. This is also the baseline
/// stego Z that rewards are measured against.
pub fn embed_plain(cover: &PixelMatrix, payload_bits_total: f64, cost_source: &CostSource, rng_seed: u64) -> Result<Stego> {
    let cost = cost_source.costs_for(cover)?;
    let probs = fit_probabilities(&cost, payload_bits_total, None)?;
    let mods = sample(&probs, derive_seed(rng_seed, &[STREAM_BASELINE]));
    let stego = apply(cover, &mods)?;
    Ok(Stego { stego, mods })
}

/// CMD: sublattices embedded in turn, each element's cost divided by α in the
/// direction its already-modified 4-neighbours agree on.
pub fn embed_cmd(
    cover: &PixelMatrix,
    payload_bits_total: f64,
    alpha: f64,
    scheme: SchemeKind,
    cost_source: &CostSource,
    rng_seed: u64,
) -> Result<Stego> {
    if !(alpha > 1.0) {
        return Err(PipelineError::InvalidAlpha(alpha));
    }
    let lattice = decompose(cover.width(), cover.height(), scheme)?;
    let segment = payload_bits_total / lattice.count() as f64;
    let mut y = cover.clone();
    let mut mods = ModificationMap::zeros(cover.width(), cover.height());
    for t in 0..lattice.count() {
        let mut cost = cost_source.costs_for(&y)?;
        for &i in lattice.members(t) {
            cmd_adjust_in_place(&mut cost, &mods, alpha, i);
        }
        let probs = fit_probabilities(&cost, segment, Some(lattice.members(t)))?;
        let part = sample(&probs, derive_seed(rng_seed, &[STREAM_SUBLATTICE, t as u64, 0]));
        y = apply(&y, &part)?;
        mods = ModificationMap::between(cover, &y)?;
    }
    Ok(Stego { stego: y, mods })
}

struct Candidate {
    image: PixelMatrix,
    confidence: f64,
}

/// Embeds `cover` sublattice by sublattice, searching cost adjustments that
/// raise the environment's cover confidence.
pub fn embed<E: Environment + ?Sized>(cover: &PixelMatrix, plan: &EmbedPlan, env: &mut E) -> Result<StegoResult> {
    plan.budget.validate()?;
    let (w, h) = (cover.width(), cover.height());
    let lattice = decompose(w, h, plan.scheme)?;
    let segment = plan.payload_bits_total / lattice.count() as f64;

    let baseline = embed_plain(cover, plan.payload_bits_total, &plan.cost_source, plan.rng_seed)?;
    let baseline_confidence = env.cover_confidence(&baseline.stego)?.value();

    let mut y = cover.clone();
    let mut final_confidence = baseline_confidence;
    let mut traces = Vec::with_capacity(lattice.count());
    for t in 0..lattice.count() {
        let cost = plan.cost_source.costs_for(&y)?;
        let members = lattice.members(t);

        if t == 0 && !plan.adjust_first_sublattice {
            let probs = fit_probabilities(&cost, segment, Some(members))?;
            let image = apply(&y, &sample(&probs, sample_seed(plan, t, 0)))?;
            let (r, _) = reward(env, &image, baseline_confidence, &plan.budget)?;
            traces.push(SublatticeTrace {
                sublattice_id: t,
                payload_bits: segment,
                tree_depth: 0,
                searches_used: 0,
                r_top: r,
                terminated_by: Termination::Unadjusted,
                rewards: vec![r],
                r_top_history: vec![r],
                best_sample: 0,
            });
            final_confidence = r + baseline_confidence;
            y = image;
            continue;
        }

        let order = ddo_order(&cost, &lattice, t)?;
        let mut tree = SearchTree::new(
            order.adjustable,
            plan.budget.exploration_c,
            derive_seed(plan.rng_seed, &[STREAM_TREE, t as u64]),
        );
        let mut best: Option<Candidate> = None;
        let mut r_top = f64::NEG_INFINITY;
        let mut rewards = Vec::new();
        let mut history = Vec::new();
        let mut best_sample = 0;
        let mut terminated_by = Termination::MaxSearches;
        for k in 0..plan.budget.max_searches {
            let leaf = tree.search();
            let gamma = tree.gamma_of(leaf, &order, w, h)?;
            let adjusted = adjust_costs(&cost, &gamma, plan.budget.alpha)?;
            let probs = fit_probabilities(&adjusted, segment, Some(members))?;
            let image = apply(&y, &sample(&probs, sample_seed(plan, t, k)))?;
            let confidence = env.cover_confidence(&image)?.value();
            let r = confidence - baseline_confidence;
            tree.backpropagate(leaf, plan.budget.scale_reward(r));
            rewards.push(r);
            if r_top < r {
                r_top = r;
                best_sample = k;
                best = Some(Candidate { image, confidence });
            }
            history.push(r_top);
            if confidence >= plan.budget.confidence_threshold {
                terminated_by = Termination::ConfidenceThreshold;
                break;
            }
        }
        let chosen = best.expect("budget allows at least one search");
        y = chosen.image;
        final_confidence = chosen.confidence;
        traces.push(SublatticeTrace {
            sublattice_id: t,
            payload_bits: segment,
            tree_depth: order.adjustable,
            searches_used: rewards.len(),
            r_top,
            terminated_by,
            rewards,
            r_top_history: history,
            best_sample,
        });
    }

    let mods = ModificationMap::between(cover, &y)?;
    let change_rate = crate::simulator::change_rate(&mods);
    Ok(StegoResult {
        stego: y,
        mods,
        trace: EmbedTrace { per_sublattice: traces, baseline_confidence, final_confidence, change_rate },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::WET_COST;
    use crate::environment::{ConstantEnv, FnEnv};
    use crate::mcts::enumerate_terminals;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn textured(w: usize, h: usize, seed: u64) -> PixelMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let bytes: Vec<u8> = (0..w * h).map(|_| rng.random_range(40..=220)).collect();
        PixelMatrix::from_u8(w, h, &bytes).unwrap()
    }

    #[test]
    fn adjustment_divides_the_chosen_direction() {
        let cost = CostPair::new(2, 1, vec![3.0, 4.0], vec![6.0, 8.0]).unwrap();
        let gamma = PolarityMatrix::from_actions(2, 1, &[0, 1], &[Polarity::Plus, Polarity::Minus]);
        let out = adjust_costs(&cost, &gamma, 1.5).unwrap();
        assert_eq!(out.rho_plus(), &[2.0, 4.0]);
        assert_eq!(out.rho_minus(), &[6.0, 8.0 / 1.5]);
        let zero = PolarityMatrix::initial(2, 1);
        assert_eq!(adjust_costs(&cost, &zero, 1.5).unwrap(), cost);
        assert!(matches!(adjust_costs(&cost, &zero, 1.0), Err(PipelineError::InvalidAlpha(_))));
    }

    #[test]
    fn adjustment_keeps_wet_entries_wet() {
        let cost = CostPair::new(1, 1, vec![WET_COST], vec![1.0]).unwrap();
        let gamma = PolarityMatrix::from_actions(1, 1, &[0], &[Polarity::Plus]);
        assert_eq!(adjust_costs(&cost, &gamma, 1.5).unwrap().rho_plus(), &[WET_COST]);
    }

    proptest! {
        #[test]
        fn adjustment_matches_elementwise_oracle(
            plus in prop::collection::vec(0.01f64..100.0, 12),
            minus in prop::collection::vec(0.01f64..100.0, 12),
            codes in prop::collection::vec(0usize..3, 12),
            alpha in 1.01f64..5.0,
        ) {
            let cost = CostPair::new(4, 3, plus.clone(), minus.clone()).unwrap();
            let actions: Vec<Polarity> = codes.iter().map(|&c| Polarity::ALL[c]).collect();
            let order: Vec<usize> = (0..12).collect();
            let gamma = PolarityMatrix::from_actions(4, 3, &order, &actions);
            let out = adjust_costs(&cost, &gamma, alpha).unwrap();
            for i in 0..12 {
                let wp = if codes[i] == 2 { plus[i] / alpha } else { plus[i] };
                let wm = if codes[i] == 0 { minus[i] / alpha } else { minus[i] };
                prop_assert!((out.rho_plus()[i] - wp).abs() <= 1e-12 * wp);
                prop_assert!((out.rho_minus()[i] - wm).abs() <= 1e-12 * wm);
            }
        }
    }

    #[test]
    fn cmd_rule() {
        let cost = CostPair::symmetric(3, 3, vec![3.0; 9]).unwrap();
        let mods = ModificationMap::new(3, 3, vec![0, 1, 0, 1, 0, 0, 0, 0, 0]).unwrap();
        let out = cmd_adjust(&cost, &mods, 1.5, 4).unwrap();
        assert_eq!(out.rho_plus()[4], 2.0);
        assert_eq!(out.rho_minus()[4], 3.0);

        let neutral = ModificationMap::new(3, 3, vec![0, 1, 0, -1, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!(cmd_adjust(&cost, &neutral, 1.5, 4).unwrap(), cost);

        let negative = ModificationMap::new(3, 3, vec![0, -1, 0, -1, 0, -1, 0, 0, 0]).unwrap();
        let out = cmd_adjust(&cost, &negative, 1.5, 4).unwrap();
        assert_eq!(out.rho_minus()[4], 2.0);
        assert_eq!(out.rho_plus()[4], 3.0);
    }

    #[test]
    fn reward_shaping() {
        let img = PixelMatrix::from_u8(1, 1, &[0]).unwrap();
        let b = Budget::default();
        let (r, s) = reward(&mut ConstantEnv(0.7), &img, 0.5, &b).unwrap();
        assert!((r - 0.2).abs() < 1e-12 && (s - 2.0).abs() < 1e-12);
        assert_eq!(reward(&mut ConstantEnv(0.5), &img, 0.5, &b).unwrap(), (0.0, 0.0));
        let (r, s) = reward(&mut ConstantEnv(0.3), &img, 0.5, &b).unwrap();
        assert!((r + 0.2).abs() < 1e-12 && (s + 0.2).abs() < 1e-12);
    }

    #[test]
    fn zero_payload_returns_cover() {
        let cover = textured(8, 8, 1);
        let mut plan = EmbedPlan::new(0.0, 3);
        plan.budget.max_searches = 4;
        let out = embed(&cover, &plan, &mut ConstantEnv(0.5)).unwrap();
        assert_eq!(out.stego, cover);
        assert_eq!(out.mods.count_nonzero(), 0);
        assert!(out.trace.per_sublattice.iter().all(|t| t.r_top == 0.0));
    }

    #[test]
    fn threshold_stops_after_one_search() {
        let cover = textured(16, 16, 2);
        let mut plan = EmbedPlan::new(payload_bits(0.4, &cover), 5);
        plan.adjust_first_sublattice = true;
        let out = embed(&cover, &plan, &mut ConstantEnv(0.99)).unwrap();
        for t in &out.trace.per_sublattice {
            assert_eq!(t.searches_used, 1);
            assert_eq!(t.terminated_by, Termination::ConfidenceThreshold);
        }
    }

    #[test]
    fn constant_environment_adopts_first_sample() {
        let cover = textured(16, 16, 3);
        let mut plan = EmbedPlan::new(payload_bits(0.4, &cover), 9);
        plan.budget.max_searches = 6;
        let out = embed(&cover, &plan, &mut ConstantEnv(0.4)).unwrap();
        for t in &out.trace.per_sublattice[1..] {
            assert_eq!(t.searches_used, 6);
            assert_eq!(t.terminated_by, Termination::MaxSearches);
            assert_eq!(t.best_sample, 0);
            assert_eq!(t.r_top, 0.0);
        }
        assert_eq!(out.trace.per_sublattice[0].terminated_by, Termination::Unadjusted);
    }

    #[test]
    fn embedding_stays_in_range_and_hits_rate() {
        let cover = textured(32, 32, 4);
        let mut plan = EmbedPlan::new(payload_bits(0.4, &cover), 11);
        plan.budget.max_searches = 3;
        let out = embed(&cover, &plan, &mut FnEnv(|m: &PixelMatrix| (m.get(0, 0) / 255.0) as f64)).unwrap();
        assert_eq!(ModificationMap::between(&cover, &out.stego).unwrap(), out.mods);
        assert!(out.trace.change_rate > 0.0 && out.trace.change_rate < 0.5);
        for t in &out.trace.per_sublattice {
            assert!(t.r_top_history.windows(2).all(|w| w[0] <= w[1]));
            let max = t.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(t.r_top, max);
        }
    }

    #[test]
    fn exhaustive_optimum_on_tiny_image() {
        // 4x4 cover: four sublattices of four elements each.
        let cover = textured(4, 4, 6);
        let cost = hill_cost(&cover).unwrap();
        let mut plan = EmbedPlan::new(6.0, 21);
        plan.cost_source = CostSource::External(cost.clone());
        plan.budget.max_searches = 200;
        plan.adjust_first_sublattice = true;
        plan.common_random_numbers = true;
        // Confidence depends on the whole image deterministically.
        let score = |m: &PixelMatrix| {
            let s: f32 = m.data().iter().enumerate().map(|(i, v)| v * ((i * 7 % 5) as f32 - 2.0)).sum();
            0.5 + 0.1 * (f64::from(s) / 50.0).tanh()
        };
        let out = embed(&cover, &plan, &mut FnEnv(score)).unwrap();
        let lattice = decompose(4, 4, SchemeKind::Spatial2x2).unwrap();

        // Replay with the adopted prefix and check every terminal Γ.
        let mut y = cover.clone();
        let base = score(&embed_plain(&cover, 6.0, &plan.cost_source, plan.rng_seed).unwrap().stego);
        for (t, trace) in out.trace.per_sublattice.iter().enumerate() {
            let order = ddo_order(&cost, &lattice, t).unwrap();
            let mut best = f64::NEG_INFINITY;
            let mut best_img = None;
            for terminal in enumerate_terminals(order.adjustable).unwrap() {
                let gamma = PolarityMatrix::from_actions(4, 4, &order.sequence, terminal.gamma());
                let adjusted = adjust_costs(&cost, &gamma, 1.5).unwrap();
                let probs = fit_probabilities(&adjusted, 1.5, Some(lattice.members(t))).unwrap();
                let img = apply(&y, &sample(&probs, sample_seed(&plan, t, 0))).unwrap();
                let r = score(&img) - base;
                if best < r {
                    best = r;
                    best_img = Some(img);
                }
            }
            assert!((trace.r_top - best).abs() < 1e-12, "sublattice {t}: {} vs {best}", trace.r_top);
            y = best_img.unwrap();
        }
        assert_eq!(y, out.stego);
    }

    #[test]
    fn plain_and_cmd_baselines() {
        let cover = textured(32, 32, 7);
        let bits = payload_bits(0.4, &cover);
        let a = embed_plain(&cover, bits, &CostSource::BuiltinHill, 1).unwrap();
        let b = embed_plain(&cover, bits, &CostSource::BuiltinHill, 1).unwrap();
        assert_eq!(a, b);
        let c = embed_cmd(&cover, bits, 9.0, SchemeKind::Spatial2x2, &CostSource::BuiltinHill, 1).unwrap();
        assert!(c.mods.count_nonzero() > 0);
        assert!(embed_cmd(&cover, bits, 0.5, SchemeKind::Spatial2x2, &CostSource::BuiltinHill, 1).is_err());
    }

    #[test]
    fn external_costs_must_match() {
        let cover = textured(8, 8, 8);
        let source = CostSource::External(CostPair::symmetric(4, 4, vec![1.0; 16]).unwrap());
        assert!(matches!(embed_plain(&cover, 1.0, &source, 0), Err(PipelineError::DimensionMismatch { .. })));
    }

    #[test]
    fn reproducible() {
        let cover = textured(16, 16, 10);
        let mut plan = EmbedPlan::new(payload_bits(0.4, &cover), 77);
        plan.budget.max_searches = 5;
        let env = || FnEnv(|m: &PixelMatrix| (m.get(3, 3) / 255.0) as f64);
        let a = embed(&cover, &plan, &mut env()).unwrap();
        let b = embed(&cover, &plan, &mut env()).unwrap();
        assert_eq!(a, b);
    }
}
