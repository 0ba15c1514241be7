//! Conventional offline random forest, the evaluation baseline: bootstrap
//! sample per tree, best Gini split over `sqrt(F)` random features per node,
//! nodes of at most `split_threshold` samples stay leaves. `min_gain` and the
//! candidate settings only govern online growth and are not used here.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::gain::gini_gain;
use super::tree::{Leaf, Tree, TreeNode};
use super::{tree_rng, ForestModel, ForestParams, Sample};
use crate::error::{Error, Result};

pub fn train_batch_reference(samples: &[Sample], params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    if samples.is_empty() {
        return Err(Error::Contract(
            "batch training needs at least one sample".into(),
        ));
    }
    for (x, y) in samples {
        if x.len() != params.feature_count || *y >= params.class_count {
            return Err(Error::Contract(
                "sample does not match forest dimensions".into(),
            ));
        }
    }
    let trees: Vec<Tree> = (0..params.num_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(params.seed, t);
            let bag: Vec<usize> = (0..samples.len())
                .map(|_| rng.random_range(0..samples.len()))
                .collect();
            let mut nodes = Vec::new();
            grow(&mut nodes, samples, bag, 0, params, &mut rng);
            Tree::from_nodes(nodes, rng, samples.len() as u64)
        })
        .collect();
    Ok(ForestModel::from_trees(
        params.clone(),
        trees,
        samples.len() as u64,
    ))
}

fn histogram(samples: &[Sample], idx: &[usize], classes: usize) -> Vec<u32> {
    let mut h = vec![0u32; classes];
    for &i in idx {
        h[samples[i].1] += 1;
    }
    h
}

/// Grows the subtree for `idx` and returns its arena index.
fn grow(
    nodes: &mut Vec<TreeNode>,
    samples: &[Sample],
    idx: Vec<usize>,
    depth: u32,
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> usize {
    let me = nodes.len();
    let hist = histogram(samples, &idx, params.class_count);
    nodes.push(TreeNode::Leaf(Leaf::from_counts(depth, hist)));

    if idx.len() as u64 <= params.split_threshold as u64 || depth >= params.max_depth {
        return me;
    }
    let Some((feature, threshold)) = best_test(samples, &idx, params, rng) else {
        return me;
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
        .into_iter()
        .partition(|&i| samples[i].0[feature] < threshold);
    let left = grow(nodes, samples, left_idx, depth + 1, params, rng);
    let right = grow(nodes, samples, right_idx, depth + 1, params, rng);
    nodes[me] = TreeNode::Internal {
        depth,
        feature_index: feature,
        threshold,
        left,
        right,
    };
    me
}

/// Best Gini split over `sqrt(F)` random features, each scanned at every
/// midpoint between consecutive distinct values. Any positive gain splits:
/// with all samples at hand there is no need to wait for evidence.
fn best_test(
    samples: &[Sample],
    idx: &[usize],
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Option<(usize, f64)> {
    let dims = params.feature_count;
    let tries = ((dims as f64).sqrt().round() as usize).max(1);
    let features = rand::seq::index::sample(rng, dims, tries.min(dims));
    let total = histogram(samples, idx, params.class_count);
    let mut best: Option<(usize, f64, f64)> = None;
    let mut order = idx.to_vec();
    for f in features {
        order.sort_by(|&a, &b| samples[a].0[f].total_cmp(&samples[b].0[f]));
        let mut left = vec![0u32; params.class_count];
        let mut right = total.clone();
        for w in order.windows(2) {
            let y = samples[w[0]].1;
            left[y] += 1;
            right[y] -= 1;
            let (a, b) = (samples[w[0]].0[f], samples[w[1]].0[f]);
            if a == b {
                continue;
            }
            let g = gini_gain(&left, &right);
            if best.is_none_or(|(_, _, bg)| g > bg) {
                best = Some((f, a + (b - a) / 2.0, g));
            }
        }
    }
    best.filter(|&(_, _, g)| g > 0.0).map(|(f, t, _)| (f, t))
}
