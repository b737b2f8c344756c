//! Trigeminal search tree over distortion-adjustment polarities.
//!
//! Each tree level decides the polarity of one element of the current
//! sublattice, in [`AdjustmentOrder`]. A root-to-leaf path is a complete
//! polarity matrix Γ. Nodes store only their own action; Γ is rebuilt from
//! the path on demand.
//!
//! Visit counting: the root is counted once per search, a child once per
//! selection through it, and a node created by expansion starts at one. Every
//! internal node therefore has exactly as many visits as its children combined.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lattice::AdjustmentOrder;
use crate::rng;

/// Largest sublattice `enumerate_terminals` accepts (3^8 = 6561 matrices).
pub const MAX_ENUMERATION_SIZE: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum MctsError {
    #[error("node has not been visited; its UCT score is undefined")]
    Unvisited,
    #[error("node is not fully expanded")]
    NotFullyExpanded,
    #[error("node at depth {depth} is not a leaf (size {size})")]
    NotALeaf { depth: usize, size: usize },
    #[error("3^{0} terminal states is too many to enumerate")]
    TooLarge(usize),
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("adjustment order has {order} elements, tree depth is {size}")]
    OrderMismatch { order: usize, size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(i8)]
pub enum Polarity {
    Minus = -1,
    Zero = 0,
    Plus = 1,
}

impl Polarity {
    /// Child-slot order: left, middle, right.
    pub const ALL: [Polarity; 3] = [Polarity::Minus, Polarity::Zero, Polarity::Plus];

    pub fn value(self) -> i8 {
        self as i8
    }

    fn slot(self) -> usize {
        (self as i8 + 1) as usize
    }
}

/// Γ over a whole image; elements outside the current sublattice stay zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PolarityMatrix {
    width: usize,
    height: usize,
    gamma: Vec<Polarity>,
    depth_assigned: usize,
}

impl PolarityMatrix {
    /// Γ⁰: nothing assigned.
    pub fn initial(width: usize, height: usize) -> Self {
        Self { width, height, gamma: vec![Polarity::Zero; width * height], depth_assigned: 0 }
    }

    /// Writes `actions[k]` at element `order[k]`.
    pub fn from_actions(width: usize, height: usize, order: &[usize], actions: &[Polarity]) -> Self {
        let mut m = Self::initial(width, height);
        for (&index, &a) in order.iter().zip(actions) {
            m.gamma[index] = a;
        }
        m.depth_assigned = actions.len().min(order.len());
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn gamma(&self) -> &[Polarity] {
        &self.gamma
    }

    pub fn get(&self, index: usize) -> Polarity {
        self.gamma[index]
    }

    pub fn depth_assigned(&self) -> usize {
        self.depth_assigned
    }
}

/// Search budget and reward shaping.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Budget {
    pub max_searches: usize,
    pub confidence_threshold: f64,
    pub exploration_c: f64,
    pub reward_scale_pos: f64,
    pub reward_scale_neg: f64,
    pub alpha: f64,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_searches: 128,
            confidence_threshold: 0.98,
            exploration_c: std::f64::consts::SQRT_2,
            reward_scale_pos: 10.0,
            reward_scale_neg: 1.0,
            alpha: 1.5,
        }
    }
}

impl Budget {
    pub fn validate(&self) -> Result<(), MctsError> {
        let bad = |m: &str| Err(MctsError::InvalidBudget(m.to_string()));
        if self.max_searches == 0 {
            return bad("max_searches must be positive");
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold < 1.0) {
            return bad("confidence_threshold must lie in (0, 1)");
        }
        if !(self.exploration_c > 0.0 && self.exploration_c.is_finite()) {
            return bad("exploration constant must be positive");
        }
        if !(self.reward_scale_pos > 0.0 && self.reward_scale_neg > 0.0) {
            return bad("reward scales must be positive");
        }
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return bad("alpha must exceed 1");
        }
        Ok(())
    }

    /// Positive rewards are amplified so that wins dominate the statistics.
    pub fn scale_reward(&self, reward: f64) -> f64 {
        if reward >= 0.0 {
            reward * self.reward_scale_pos
        } else {
            reward * self.reward_scale_neg
        }
    }
}

/// Mean reward plus the exploration bonus `c * sqrt(ln N_parent / n)`.
pub fn uct_score(reward: f64, visits: u64, parent_visits: u64, c: f64) -> Result<f64, MctsError> {
    if visits == 0 || parent_visits == 0 {
        return Err(MctsError::Unvisited);
    }
    let n = visits as f64;
    Ok(reward / n + c * ((parent_visits as f64).ln() / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
pub struct SearchNode {
    pub visits: u64,
    pub reward: f64,
    pub parent: Option<NodeId>,
    /// Children for actions -1, 0, +1.
    pub children: [Option<NodeId>; 3],
    pub depth: usize,
    /// Polarity this node assigned; `None` at the root.
    pub action: Option<Polarity>,
}

pub struct SearchTree {
    nodes: Vec<SearchNode>,
    size: usize,
    exploration_c: f64,
    rng: ChaCha8Rng,
}

impl SearchTree {
    /// A fresh tree over `size` decisions, rooted at Γ⁰.
    pub fn new(size: usize, exploration_c: f64, rng_seed: u64) -> Self {
        let root = SearchNode {
            visits: 0,
            reward: 0.0,
            parent: None,
            children: [None; 3],
            depth: 0,
            action: None,
        };
        Self { nodes: vec![root], size, exploration_c, rng: rng::stream(rng_seed, &[]) }
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id.index()]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of decisions on a root-to-leaf path.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.node(id).depth == self.size
    }

    pub fn is_fully_expanded(&self, id: NodeId) -> bool {
        self.node(id).children.iter().all(Option::is_some)
    }

    pub fn uct(&self, id: NodeId) -> Result<f64, MctsError> {
        let node = self.node(id);
        let parent = node.parent.map_or(0, |p| self.node(p).visits);
        uct_score(node.reward, node.visits, parent, self.exploration_c)
    }

    /// Highest-UCT child (ties go to the lower action); counts the visit.
    pub fn best_child(&mut self, id: NodeId) -> Result<NodeId, MctsError> {
        if !self.is_fully_expanded(id) {
            return Err(MctsError::NotFullyExpanded);
        }
        let mut best: Option<(NodeId, f64)> = None;
        for child in self.node(id).children.into_iter().flatten() {
            let score = self.uct(child)?;
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((child, score));
            }
        }
        let (child, _) = best.expect("fully expanded node has children");
        self.nodes[child.index()].visits += 1;
        Ok(child)
    }

    fn add_child(&mut self, parent: NodeId, action: Polarity) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        let depth = self.node(parent).depth + 1;
        self.nodes.push(SearchNode {
            visits: 1,
            reward: 0.0,
            parent: Some(parent),
            children: [None; 3],
            depth,
            action: Some(action),
        });
        self.nodes[parent.index()].children[action.slot()] = Some(id);
        id
    }

    /// Expands one untried action, then rolls out with uniform random actions
    /// down to a leaf, creating a node per level.
    pub fn random_search(&mut self, mut id: NodeId) -> NodeId {
        while !self.is_leaf(id) {
            let untried: Vec<Polarity> = Polarity::ALL
                .into_iter()
                .filter(|a| self.node(id).children[a.slot()].is_none())
                .collect();
            let action = untried[self.rng.random_range(0..untried.len())];
            id = self.add_child(id, action);
        }
        id
    }

    /// One selection-expansion-simulation pass. Returns the reached leaf.
    pub fn search(&mut self) -> NodeId {
        let mut id = self.root();
        self.nodes[0].visits += 1;
        while self.is_fully_expanded(id) {
            id = self.best_child(id).expect("children of a fully expanded node are visited");
        }
        if !self.is_leaf(id) {
            id = self.random_search(id);
        }
        id
    }

    /// Adds `scaled_reward` to every node from `leaf` up to, not including, the root.
    pub fn backpropagate(&mut self, leaf: NodeId, scaled_reward: f64) {
        let mut id = leaf;
        while let Some(parent) = self.node(id).parent {
            self.nodes[id.index()].reward += scaled_reward;
            id = parent;
        }
    }

    /// Node ids from the root's child down to `leaf`.
    pub fn path(&self, leaf: NodeId) -> Vec<NodeId> {
        let mut path = Vec::with_capacity(self.node(leaf).depth);
        let mut id = leaf;
        while let Some(parent) = self.node(id).parent {
            path.push(id);
            id = parent;
        }
        path.reverse();
        path
    }

    /// Actions along the path to `leaf`, in decision order.
    pub fn actions_of(&self, leaf: NodeId) -> Result<Vec<Polarity>, MctsError> {
        if !self.is_leaf(leaf) {
            return Err(MctsError::NotALeaf { depth: self.node(leaf).depth, size: self.size });
        }
        let mut actions = vec![Polarity::Zero; self.size];
        let mut id = leaf;
        while let Some(parent) = self.node(id).parent {
            let node = self.node(id);
            actions[node.depth - 1] = node.action.expect("non-root nodes carry an action");
            id = parent;
        }
        Ok(actions)
    }

    /// Γ for `leaf`: the action at depth d lands on `order.sequence[d - 1]`.
    pub fn gamma_of(
        &self,
        leaf: NodeId,
        order: &AdjustmentOrder,
        width: usize,
        height: usize,
    ) -> Result<PolarityMatrix, MctsError> {
        if order.len() < self.size {
            return Err(MctsError::OrderMismatch { order: order.len(), size: self.size });
        }
        let actions = self.actions_of(leaf)?;
        Ok(PolarityMatrix::from_actions(width, height, &order.sequence, &actions))
    }
}

/// Every terminal Γ of a `size`-element sublattice, laid out as a `size`x1 row.
pub fn enumerate_terminals(size: usize) -> Result<Vec<PolarityMatrix>, MctsError> {
    if size > MAX_ENUMERATION_SIZE {
        return Err(MctsError::TooLarge(size));
    }
    let order: Vec<usize> = (0..size).collect();
    let total = 3usize.pow(size as u32);
    Ok((0..total)
        .map(|mut code| {
            let mut actions = vec![Polarity::Zero; size];
            for slot in actions.iter_mut().rev() {
                *slot = Polarity::ALL[code % 3];
                code /= 3;
            }
            PolarityMatrix::from_actions(size, 1, &order, &actions)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    #[test]
    fn uct_examples() {
        let got = uct_score(3.0, 2, 10, 1.414).unwrap();
        let want = 1.5 + 1.414 * (10f64.ln() / 2.0).sqrt();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 3.017_197_980_586_568).abs() < 1e-9);
        assert_eq!(uct_score(3.0, 2, 10, 0.0).unwrap(), 1.5);
        let many = uct_score(4.0, 4, 20, 1.0).unwrap();
        let few = uct_score(2.0, 2, 20, 1.0).unwrap();
        assert!(few > many);
        assert_eq!(uct_score(1.0, 0, 5, 1.0), Err(MctsError::Unvisited));
    }

    #[test]
    fn reward_scaling() {
        let b = Budget::default();
        assert_eq!(b.scale_reward(0.2), 2.0);
        assert_eq!(b.scale_reward(0.0), 0.0);
        assert_eq!(b.scale_reward(-0.2), -0.2);
        assert_eq!(b.scale_reward(-0.3), -0.3);
    }

    #[test]
    fn budget_defaults_and_validation() {
        let b = Budget::default();
        assert_eq!(b.max_searches, 128);
        assert_eq!(b.confidence_threshold, 0.98);
        assert_eq!(b.alpha, 1.5);
        assert!(b.validate().is_ok());
        assert!(Budget { alpha: 1.0, ..b.clone() }.validate().is_err());
        assert!(Budget { confidence_threshold: 1.0, ..b.clone() }.validate().is_err());
        assert!(Budget { max_searches: 0, ..b }.validate().is_err());
    }

    /// Builds a fully expanded root with hand-set child statistics.
    fn tree_with_children(stats: [(f64, u64); 3]) -> SearchTree {
        let mut t = SearchTree::new(1, 1.0, 0);
        for a in Polarity::ALL {
            t.add_child(t.root(), a);
        }
        let total: u64 = stats.iter().map(|s| s.1).sum();
        t.nodes[0].visits = total;
        for (slot, (r, n)) in stats.into_iter().enumerate() {
            let child = t.node(t.root()).children[slot].unwrap();
            t.nodes[child.index()].reward = r;
            t.nodes[child.index()].visits = n;
        }
        t
    }

    #[test]
    fn best_child_argmax_and_ties() {
        let mut t = tree_with_children([(1.0, 1), (2.0, 1), (0.5, 1)]);
        t.exploration_c = 0.0;
        let best = t.best_child(t.root()).unwrap();
        assert_eq!(t.node(best).action, Some(Polarity::Zero));
        assert_eq!(t.node(best).visits, 2);

        let mut t = tree_with_children([(1.0, 2), (1.0, 2), (1.0, 2)]);
        let best = t.best_child(t.root()).unwrap();
        assert_eq!(t.node(best).action, Some(Polarity::Minus));
    }

    #[test]
    fn best_child_invariant_under_consistent_rescaling() {
        let stats = [(3.0, 4), (5.0, 5), (1.0, 2)];
        let scaled = stats.map(|(r, n)| (r * 7.0, n * 3));
        for s in [stats, scaled] {
            let mut t = tree_with_children(s);
            t.exploration_c = 0.0;
            let best = t.best_child(t.root()).unwrap();
            assert_eq!(t.node(best).action, Some(Polarity::Zero));
        }
    }

    #[test]
    fn best_child_requires_full_expansion() {
        let mut t = SearchTree::new(2, 1.0, 0);
        t.add_child(t.root(), Polarity::Plus);
        assert_eq!(t.best_child(t.root()), Err(MctsError::NotFullyExpanded));
    }

    #[test]
    fn random_search_reaches_a_leaf() {
        let mut t = SearchTree::new(1, 1.0, 3);
        let leaf = t.random_search(t.root());
        assert!(t.is_leaf(leaf));
        assert_eq!(t.node(leaf).depth, 1);
        assert_eq!(t.actions_of(leaf).unwrap().len(), 1);

        let run = |seed| {
            let mut t = SearchTree::new(12, 1.0, seed);
            let leaf = t.search();
            t.actions_of(leaf).unwrap()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn fresh_root_rolls_out_and_size_one_expands_after_three() {
        let mut t = SearchTree::new(1, 1.0, 11);
        let mut seen = HashSet::new();
        for _ in 0..3 {
            let leaf = t.search();
            assert!(t.is_leaf(leaf));
            seen.insert(t.node(leaf).action);
        }
        // three searches of a one-element sublattice try each action once
        assert_eq!(seen.len(), 3);
        assert!(t.is_fully_expanded(t.root()));
        assert_eq!(t.len(), 4);
        let leaf = t.search();
        assert_eq!(t.node(leaf).visits, 2);
        assert_eq!(t.len(), 4);
    }

    #[test]
    fn backprop_adds_to_path_but_not_root() {
        let mut t = SearchTree::new(5, 1.0, 1);
        let b = Budget::default();
        let leaf = t.search();
        t.backpropagate(leaf, b.scale_reward(0.2));
        for id in t.path(leaf) {
            assert_eq!(t.node(id).reward, 2.0);
        }
        assert_eq!(t.node(t.root()).reward, 0.0);
        let leaf = t.search();
        let before: Vec<f64> = t.path(leaf).iter().map(|&id| t.node(id).reward).collect();
        t.backpropagate(leaf, b.scale_reward(-0.3));
        for (id, r0) in t.path(leaf).into_iter().zip(before) {
            assert!((t.node(id).reward - (r0 - 0.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_reconstruction() {
        let mut t = SearchTree::new(3, 1.0, 0);
        let root = t.root();
        let a = t.add_child(root, Polarity::Plus);
        let b = t.add_child(a, Polarity::Zero);
        let c = t.add_child(b, Polarity::Minus);
        // order (0,0), (0,1), (1,0) on a 2x2 image
        let order = AdjustmentOrder { sublattice_id: 0, sequence: vec![0, 1, 2], adjustable: 3 };
        let g = t.gamma_of(c, &order, 2, 2).unwrap();
        assert_eq!(g.get(0), Polarity::Plus);
        assert_eq!(g.get(1), Polarity::Zero);
        assert_eq!(g.get(2), Polarity::Minus);
        assert_eq!(g.get(3), Polarity::Zero);
        assert_eq!(g.depth_assigned(), 3);
        assert!(matches!(t.gamma_of(b, &order, 2, 2), Err(MctsError::NotALeaf { .. })));

        let mut t = SearchTree::new(3, 1.0, 0);
        let mut id = t.root();
        for _ in 0..3 {
            id = t.add_child(id, Polarity::Zero);
        }
        assert_eq!(t.gamma_of(id, &order, 2, 2).unwrap(), PolarityMatrix { depth_assigned: 3, ..PolarityMatrix::initial(2, 2) });
    }

    #[test]
    fn enumeration_sizes() {
        assert_eq!(enumerate_terminals(0).unwrap().len(), 1);
        assert_eq!(enumerate_terminals(1).unwrap().len(), 3);
        let four = enumerate_terminals(4).unwrap();
        assert_eq!(four.len(), 81);
        assert_eq!(four.iter().collect::<HashSet<_>>().len(), 81);
        assert!(four.iter().all(|g| g.depth_assigned() == 4));
        assert_eq!(enumerate_terminals(8).unwrap().len(), 6561);
        assert_eq!(enumerate_terminals(9).unwrap_err(), MctsError::TooLarge(9));
    }

    /// Deterministic reward of a terminal Γ for oracle comparisons.
    fn table_reward(actions: &[Polarity]) -> f64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for a in actions {
            h ^= (a.value() + 1) as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        (h % 2001) as f64 / 1000.0 - 1.0
    }

    /// Runs `searches` searches against `table_reward * scale`; returns the
    /// exhaustive optimum, the engine's best and every performed reward.
    fn run_against_table(size: usize, scale: f64, seed: u64, searches: usize) -> (f64, f64, Vec<f64>) {
        let budget = Budget::default();
        let optimum = enumerate_terminals(size)
            .unwrap()
            .iter()
            .map(|g| table_reward(g.gamma()) * scale)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut t = SearchTree::new(size, budget.exploration_c, seed);
        let mut best = f64::NEG_INFINITY;
        let mut performed = Vec::new();
        for _ in 0..searches {
            let leaf = t.search();
            let r = table_reward(&t.actions_of(leaf).unwrap()) * scale;
            performed.push(r);
            if best < r {
                best = r;
            }
            t.backpropagate(leaf, budget.scale_reward(r));
        }
        (optimum, best, performed)
    }

    #[test]
    fn best_is_exact_max_of_performed_playouts() {
        for scale in [1.0, 0.1] {
            for size in 1..=4 {
                for seed in 0..5 {
                    let (optimum, best, performed) = run_against_table(size, scale, seed, 200);
                    assert!(best <= optimum);
                    assert_eq!(best, performed.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                    if performed.contains(&optimum) {
                        assert_eq!(best, optimum);
                    }
                }
            }
        }
    }

    #[test]
    fn search_reaches_exhaustive_optimum_at_confidence_scale_rewards() {
        // Confidence differences of at most 0.1, as between similar images.
        for size in 1..=4 {
            for seed in 0..10 {
                let (optimum, best, _) = run_against_table(size, 0.1, seed, 200);
                assert_eq!(best, optimum, "size {size} seed {seed}");
            }
        }
    }

    #[test]
    fn visit_and_reward_accounting() {
        let mut t = SearchTree::new(3, 1.0, 2);
        let mut through: HashMap<NodeId, (u64, f64)> = HashMap::new();
        for k in 0..20 {
            let leaf = t.search();
            let r = ((k * 7) % 5) as f64 / 4.0 - 0.5;
            t.backpropagate(leaf, r);
            for id in t.path(leaf) {
                let e = through.entry(id).or_default();
                e.0 += 1;
                e.1 += r;
            }
        }
        assert_eq!(t.node(t.root()).visits, 20);
        assert!(t.len() <= 1 + 20 * 3);
        for id in t.ids() {
            let node = t.node(id);
            let kids: Vec<&SearchNode> = node.children.iter().flatten().map(|&c| t.node(c)).collect();
            assert!(kids.len() <= 3);
            if id != t.root() {
                let (n, r) = through[&id];
                assert_eq!(node.visits, n);
                assert!((node.reward - r).abs() < 1e-9);
                assert_eq!(node.depth, t.node(node.parent.unwrap()).depth + 1);
            }
            if !kids.is_empty() {
                assert_eq!(node.visits, kids.iter().map(|k| k.visits).sum::<u64>());
                if id != t.root() {
                    let sum: f64 = kids.iter().map(|k| k.reward).sum();
                    assert!((node.reward - sum).abs() < 1e-9);
                }
            }
        }
    }
}
