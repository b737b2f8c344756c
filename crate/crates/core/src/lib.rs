//! Steganographic embedding with search-learned, non-additive distortion.
//!
//! Costs from an additive function (HILL) are adjusted per element by a
//! ternary polarity matrix; a Monte Carlo tree search over polarities, scored
//! by a steganalyzer's cover confidence, picks the adjustment for each
//! sublattice in turn.

pub mod corpus;
pub mod cost;
pub mod environment;
pub mod lattice;
pub mod mcts;
pub mod media;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod simulator;

pub use cost::{distortion, hill_cost, CostPair, WET_COST};
pub use environment::{EnvScore, Environment, LinearModel, RemoteEnv, RemoteSpec};
pub use lattice::{decompose, ddo_order, SchemeKind};
pub use mcts::{Budget, Polarity, PolarityMatrix, SearchTree};
pub use media::{Domain, ModificationMap, PixelMatrix};
pub use pipeline::{embed, embed_cmd, embed_plain, CostSource, EmbedPlan, StegoResult};
pub use simulator::{apply, change_rate, fit_probabilities, sample, EmbedProbabilities};
