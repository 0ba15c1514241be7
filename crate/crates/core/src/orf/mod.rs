//! Multi-class online random forest.
//!
//! Each tree sees every sample `k ~ Poisson(1)` times (online bagging). A
//! leaf keeps class counts plus a set of random candidate tests, and turns
//! into an internal node once it has received more than `split_threshold`
//! weighted samples and its best candidate's Gini gain exceeds `min_gain`.

mod batch;
pub mod gain;
mod persist;
mod tree;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use batch::train_batch_reference;
pub use persist::{load, save, FORMAT_VERSION};
pub use tree::{CandidateSplit, Leaf, Tree, TreeNode};

use crate::descriptor::FEATURE_DIM;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub num_trees: usize,
    pub max_depth: u32,
    /// Replay count used by [`ForestModel::update_batch`].
    pub epochs: usize,
    /// Minimum weighted sample count a leaf must exceed before it may split.
    pub split_threshold: u32,
    /// Minimum Gini gain for a split.
    pub min_gain: f64,
    pub candidates_per_leaf: usize,
    /// Distinct arrivals a fresh leaf collects before drawing its candidates.
    pub candidate_warmup: usize,
    pub class_count: usize,
    pub feature_count: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            num_trees: 100,
            max_depth: 50,
            epochs: 20,
            split_threshold: 50,
            min_gain: 0.1,
            candidates_per_leaf: 10,
            candidate_warmup: 10,
            class_count: 3,
            feature_count: FEATURE_DIM,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("orf: {m}")));
        if self.num_trees == 0 {
            return bad("num_trees must be at least 1");
        }
        if self.class_count < 2 {
            return bad("class_count must be at least 2");
        }
        if self.feature_count == 0 {
            return bad("feature_count must be positive");
        }
        if self.candidates_per_leaf == 0 || self.candidate_warmup == 0 {
            return bad("candidates_per_leaf and candidate_warmup must be positive");
        }
        if !(self.min_gain >= 0.0) {
            return bad("min_gain must be non-negative");
        }
        Ok(())
    }
}

/// A training example: feature values and a class index.
pub type Sample = (Vec<f64>, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    params: ForestParams,
    trees: Vec<Tree>,
    /// Drives per-epoch shuffling in `update_batch`.
    rng: ChaCha8Rng,
    samples_seen: u64,
}

pub(crate) fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64 + 1);
    rng
}

impl ForestModel {
    pub fn new(params: ForestParams) -> Result<Self> {
        params.validate()?;
        let trees = (0..params.num_trees)
            .map(|t| Tree::new(params.class_count, tree_rng(params.seed, t)))
            .collect();
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            params,
            trees,
            samples_seen: 0,
        })
    }

    pub(crate) fn from_trees(params: ForestParams, trees: Vec<Tree>, samples_seen: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            params,
            trees,
            samples_seen,
        }
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Samples passed to `update`, counting replays.
    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    fn check(&self, x: &[f64], label: Option<usize>) -> Result<()> {
        if x.len() != self.params.feature_count {
            return Err(Error::Contract(format!(
                "sample has {} features, forest expects {}",
                x.len(),
                self.params.feature_count
            )));
        }
        if let Some(l) = label {
            if l >= self.params.class_count {
                return Err(Error::Contract(format!("label {l} out of range")));
            }
        }
        Ok(())
    }

    /// Learns one sample: each tree applies it with its own Poisson(1) weight.
    pub fn update(&mut self, x: &[f64], label: usize) -> Result<()> {
        self.check(x, Some(label))?;
        let params = &self.params;
        self.trees
            .par_iter_mut()
            .for_each(|tree| learn_one(tree, x, label, params));
        self.samples_seen += 1;
        Ok(())
    }

    /// Replays `samples` `epochs` times, reshuffled every epoch, through
    /// [`update`](Self::update).
    pub fn update_batch(&mut self, samples: &[Sample]) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::Contract(
                "update_batch needs at least one sample".into(),
            ));
        }
        for (x, y) in samples {
            self.check(x, Some(*y))?;
        }
        let mut order = Vec::with_capacity(samples.len() * self.params.epochs);
        for _ in 0..self.params.epochs {
            let mut perm: Vec<usize> = (0..samples.len()).collect();
            perm.shuffle(&mut self.rng);
            order.extend(perm);
        }
        let params = &self.params;
        // Trees are independent given their own generators, so replaying the
        // whole sequence tree by tree equals sample-by-sample updates.
        self.trees.par_iter_mut().for_each(|tree| {
            for &i in &order {
                learn_one(tree, &samples[i].0, samples[i].1, params);
            }
        });
        self.samples_seen += order.len() as u64;
        Ok(())
    }

    /// Mean of the trees' leaf distributions.
    ///
    /// # Panics
    /// If `x` does not have `feature_count` values.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        if let Err(e) = self.check(x, None) {
            panic!("{e}");
        }
        let mut acc = vec![0.0; self.params.class_count];
        for tree in &self.trees {
            for (a, p) in acc.iter_mut().zip(tree.leaf(x).distribution()) {
                *a += p;
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Index of the most probable class; ties go to the lower index.
    pub fn predict_class(&self, x: &[f64]) -> usize {
        argmax(&self.predict(x))
    }
}

fn learn_one(tree: &mut Tree, x: &[f64], label: usize, params: &ForestParams) {
    let k = Poisson::new(1.0).expect("valid rate").sample(&mut tree.rng) as u32;
    if k > 0 {
        tree.learn(x, label, k, params);
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> ForestParams {
        ForestParams {
            num_trees: 10,
            feature_count: 2,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn fresh_forest_is_uniform() {
        let m = ForestModel::new(ForestParams::default()).unwrap();
        let p = m.predict(&[0.0; FEATURE_DIM]);
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut m = ForestModel::new(small(1)).unwrap();
        assert!(matches!(
            m.update(&[1.0, 2.0, 3.0], 0),
            Err(Error::Contract(_))
        ));
        assert!(matches!(m.update(&[1.0, 2.0], 3), Err(Error::Contract(_))));
        assert!(m.update_batch(&[]).is_err());
    }

    #[test]
    fn pure_stream_never_splits() {
        let mut m = ForestModel::new(small(2)).unwrap();
        for i in 0..200 {
            m.update(&[i as f64, (i * 7 % 13) as f64], 0).unwrap();
        }
        for t in m.trees() {
            assert_eq!(t.nodes().len(), 1);
            let leaf = t.leaves().next().unwrap();
            assert_eq!(leaf.class_histogram[1] + leaf.class_histogram[2], 0);
            assert!(leaf.candidates.iter().all(|c| c.gain() == 0.0));
        }
        assert_eq!(m.predict_class(&[3.0, 3.0]), 0);
    }

    #[test]
    fn separable_stream_splits() {
        let mut m = ForestModel::new(small(3)).unwrap();
        for i in 0..400 {
            let label = i % 2;
            let x = if label == 0 {
                -1.0 - (i % 5) as f64
            } else {
                1.0 + (i % 7) as f64
            };
            m.update(&[x, 0.5 * i as f64], label).unwrap();
        }
        assert!(m.trees().iter().all(|t| t.nodes().len() > 1));
        assert_eq!(m.predict_class(&[-3.0, 10.0]), 0);
        assert_eq!(m.predict_class(&[4.0, 10.0]), 1);
    }

    #[test]
    fn update_batch_counts_epoch_replays() {
        let mut params = small(4);
        params.epochs = 20;
        let mut m = ForestModel::new(params).unwrap();
        let data: Vec<Sample> = (0..100).map(|i| (vec![i as f64, 0.0], i % 3)).collect();
        m.update_batch(&data).unwrap();
        assert_eq!(m.samples_seen(), 2000);
        // Poisson(1) weights: mean arrivals per tree is 2000.
        let mean = m.trees().iter().map(|t| t.arrivals() as f64).sum::<f64>() / 10.0;
        assert!((mean - 2000.0).abs() < 100.0, "{mean}");
    }

    #[test]
    fn single_epoch_single_sample_equals_update() {
        let mut params = small(5);
        params.epochs = 1;
        let mut a = ForestModel::new(params.clone()).unwrap();
        let mut b = ForestModel::new(params).unwrap();
        a.update_batch(&[(vec![1.0, 2.0], 1)]).unwrap();
        b.update(&[1.0, 2.0], 1).unwrap();
        assert_eq!(a.trees(), b.trees());
    }

    #[test]
    fn same_seed_same_model() {
        let data: Vec<Sample> = (0..60)
            .map(|i| (vec![(i % 11) as f64, (i % 4) as f64], i % 3))
            .collect();
        let run = || {
            let mut m = ForestModel::new(small(9)).unwrap();
            m.update_batch(&data).unwrap();
            persist::to_bytes(&m)
        };
        assert_eq!(run(), run());
    }
}
