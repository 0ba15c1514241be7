use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gain::gini_gain;
use super::ForestParams;

/// A random test `x[feature_index] < threshold` with the class counts it has
/// routed to each side since the leaf drew it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSplit {
    pub feature_index: usize,
    pub threshold: f64,
    pub left_histogram: Vec<u32>,
    pub right_histogram: Vec<u32>,
}

impl CandidateSplit {
    fn new(feature_index: usize, threshold: f64, class_count: usize) -> Self {
        Self {
            feature_index,
            threshold,
            left_histogram: vec![0; class_count],
            right_histogram: vec![0; class_count],
        }
    }

    fn observe(&mut self, x: &[f64], label: usize, weight: u32) {
        if x[self.feature_index] < self.threshold {
            self.left_histogram[label] += weight;
        } else {
            self.right_histogram[label] += weight;
        }
    }

    pub fn gain(&self) -> f64 {
        gini_gain(&self.left_histogram, &self.right_histogram)
    }

    /// Weighted samples routed through this test since it was drawn.
    pub fn sample_count(&self) -> u64 {
        self.left_histogram
            .iter()
            .chain(&self.right_histogram)
            .map(|&c| c as u64)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PendingSample {
    features: Vec<f64>,
    label: usize,
    weight: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub depth: u32,
    /// Weighted arrivals per class since the leaf was created.
    pub class_histogram: Vec<u32>,
    /// Counts the parent attributed to this side when it split; used only
    /// for prediction.
    pub inherited: Vec<u32>,
    pub candidates: Vec<CandidateSplit>,
    /// Early arrivals held until the leaf has seen enough spread to draw
    /// candidate thresholds; replayed into the candidates once drawn.
    pending: Vec<PendingSample>,
    /// Running per-feature range of everything that reached the leaf.
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Weighted arrivals since a candidate was last drawn.
    since_draw: u64,
}

impl Leaf {
    fn new(depth: u32, inherited: Vec<u32>) -> Self {
        Self {
            depth,
            class_histogram: vec![0; inherited.len()],
            inherited,
            candidates: Vec::new(),
            pending: Vec::new(),
            lo: Vec::new(),
            hi: Vec::new(),
            since_draw: 0,
        }
    }

    pub(crate) fn from_counts(depth: u32, class_histogram: Vec<u32>) -> Self {
        let inherited = vec![0; class_histogram.len()];
        Self {
            depth,
            class_histogram,
            inherited,
            candidates: Vec::new(),
            pending: Vec::new(),
            lo: Vec::new(),
            hi: Vec::new(),
            since_draw: 0,
        }
    }

    pub fn sample_count(&self) -> u64 {
        self.class_histogram.iter().map(|&c| c as u64).sum()
    }

    /// Normalized class distribution; uniform when the leaf has no counts.
    pub fn distribution(&self) -> Vec<f64> {
        let counts: Vec<f64> = self
            .class_histogram
            .iter()
            .zip(&self.inherited)
            .map(|(&a, &b)| a as f64 + b as f64)
            .collect();
        let total: f64 = counts.iter().sum();
        if total > 0.0 {
            counts.iter().map(|c| c / total).collect()
        } else {
            vec![1.0 / counts.len() as f64; counts.len()]
        }
    }

    /// Best candidate among those that have seen more than `min_count`
    /// samples.
    fn best_candidate(&self, min_count: u64) -> Option<(usize, f64)> {
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.sample_count() > min_count)
            .map(|(i, c)| (i, c.gain()))
            // first maximum wins on ties
            .fold(None, |best, (i, g)| match best {
                Some((_, bg)) if bg >= g => best,
                _ => Some((i, g)),
            })
    }

    fn observe(
        &mut self,
        x: &[f64],
        label: usize,
        weight: u32,
        params: &ForestParams,
        rng: &mut ChaCha8Rng,
    ) {
        self.class_histogram[label] += weight;
        self.since_draw += weight as u64;
        if self.lo.is_empty() {
            self.lo = x.to_vec();
            self.hi = x.to_vec();
        } else {
            for (f, &v) in x.iter().enumerate() {
                self.lo[f] = self.lo[f].min(v);
                self.hi[f] = self.hi[f].max(v);
            }
        }
        if !self.candidates.is_empty() {
            for c in &mut self.candidates {
                c.observe(x, label, weight);
            }
            return;
        }
        match self
            .pending
            .iter_mut()
            .find(|p| p.label == label && p.features == x)
        {
            Some(p) => p.weight += weight,
            None => self.pending.push(PendingSample {
                features: x.to_vec(),
                label,
                weight,
            }),
        }
        if self.pending.len() >= params.candidate_warmup {
            self.draw_candidates(params, rng);
        }
    }

    /// Draws candidate tests with thresholds uniform over the range of each
    /// feature observed so far. Features that have not varied are skipped;
    /// when none has varied the leaf keeps waiting.
    fn draw_candidates(&mut self, params: &ForestParams, rng: &mut ChaCha8Rng) {
        if !(0..self.lo.len()).any(|f| self.hi[f] > self.lo[f]) {
            return;
        }
        self.candidates = (0..params.candidates_per_leaf)
            .map(|_| self.draw_one(params, rng).expect("some feature varies"))
            .collect();
        self.since_draw = 0;
        for p in std::mem::take(&mut self.pending) {
            for c in &mut self.candidates {
                c.observe(&p.features, p.label, p.weight);
            }
        }
    }

    fn draw_one(&self, params: &ForestParams, rng: &mut ChaCha8Rng) -> Option<CandidateSplit> {
        let varying: Vec<usize> = (0..self.lo.len())
            .filter(|&f| self.hi[f] > self.lo[f])
            .collect();
        if varying.is_empty() {
            return None;
        }
        let f = varying[rng.random_range(0..varying.len())];
        let t = rng.random_range(self.lo[f]..self.hi[f]);
        Some(CandidateSplit::new(f, t, params.class_count))
    }

    /// A leaf past the split threshold whose tests all fall short of
    /// `min_gain` swaps its weakest test for a fresh one, at most once per
    /// `split_threshold` arrivals. Without this a leaf whose initial draws
    /// missed the informative range could never split.
    fn refresh_stalled(&mut self, params: &ForestParams, rng: &mut ChaCha8Rng) {
        if self.candidates.is_empty() || self.since_draw <= params.split_threshold as u64 {
            return;
        }
        let worst = self
            .candidates
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.gain().total_cmp(&b.1.gain()))
            .map(|(i, _)| i)
            .expect("non-empty");
        if let Some(c) = self.draw_one(params, rng) {
            self.candidates[worst] = c;
        }
        self.since_draw = 0;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf(Leaf),
    Internal {
        depth: u32,
        feature_index: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

impl TreeNode {
    pub fn depth(&self) -> u32 {
        match self {
            TreeNode::Leaf(l) => l.depth,
            TreeNode::Internal { depth, .. } => *depth,
        }
    }
}

/// One tree of the forest, nodes stored in an arena rooted at index 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub(crate) nodes: Vec<TreeNode>,
    pub(crate) rng: ChaCha8Rng,
    /// Total weighted arrivals at the root.
    pub(crate) arrivals: u64,
}

impl Tree {
    pub(crate) fn new(class_count: usize, rng: ChaCha8Rng) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf(Leaf::new(0, vec![0; class_count]))],
            rng,
            arrivals: 0,
        }
    }

    pub(crate) fn from_nodes(nodes: Vec<TreeNode>, rng: ChaCha8Rng, arrivals: u64) -> Self {
        Self {
            nodes,
            rng,
            arrivals,
        }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn arrivals(&self) -> u64 {
        self.arrivals
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Leaf> {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf(l) => Some(l),
            TreeNode::Internal { .. } => None,
        })
    }

    pub fn max_depth(&self) -> u32 {
        self.nodes.iter().map(TreeNode::depth).max().unwrap_or(0)
    }

    pub(crate) fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf(_) => return i,
                TreeNode::Internal {
                    feature_index,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if x[*feature_index] < *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn leaf(&self, x: &[f64]) -> &Leaf {
        match &self.nodes[self.leaf_index(x)] {
            TreeNode::Leaf(l) => l,
            TreeNode::Internal { .. } => unreachable!(),
        }
    }

    /// Applies one sample with Poisson weight `weight` and splits the
    /// receiving leaf if it qualifies.
    pub(crate) fn learn(&mut self, x: &[f64], label: usize, weight: u32, params: &ForestParams) {
        self.arrivals += weight as u64;
        let idx = self.leaf_index(x);
        let TreeNode::Leaf(leaf) = &mut self.nodes[idx] else {
            unreachable!()
        };
        leaf.observe(x, label, weight, params, &mut self.rng);

        if leaf.sample_count() <= params.split_threshold as u64 || leaf.depth >= params.max_depth {
            return;
        }
        let evidence = params.split_threshold as u64;
        let Some((best, _)) = leaf
            .best_candidate(evidence)
            .filter(|&(_, g)| g > params.min_gain)
        else {
            leaf.refresh_stalled(params, &mut self.rng);
            return;
        };
        let depth = leaf.depth;
        let winner = leaf.candidates.swap_remove(best);
        let left = self.nodes.len();
        self.nodes
            .push(TreeNode::Leaf(Leaf::new(depth + 1, winner.left_histogram)));
        self.nodes
            .push(TreeNode::Leaf(Leaf::new(depth + 1, winner.right_histogram)));
        self.nodes[idx] = TreeNode::Internal {
            depth,
            feature_index: winner.feature_index,
            threshold: winner.threshold,
            left,
            right: left + 1,
        };
    }
}
