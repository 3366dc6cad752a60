mod common;

use std::collections::{BTreeMap, BTreeSet};

use adforest::geometry::{aabb_of_records, isat_expand};
use adforest::repair::{find_perturbed_leaves, leaf_confidences, perturbed_ratio, repair_forest, SplitStrategy};
use adforest::rng::substream;
use adforest::tree::{build_forest, induce_tree, AttrSampler, DecisionTree, Forest, ForestMode, InductionParams, Node};
use common::{walk, RandomTask};
use proptest::prelude::*;

fn ids(node: &Node, out: &mut Vec<u32>) {
    match node {
        Node::Leaf(l) => out.push(l.leaf_id),
        Node::Internal { left, right, .. } => {
            ids(left, out);
            ids(right, out);
        }
    }
}

fn counted(tree: &DecisionTree) -> u64 {
    tree.leaves().iter().map(|l| l.train_size).sum()
}

fn params() -> InductionParams {
    InductionParams { min_leaf_size: 5, ..InductionParams::default() }
}

fn forest(seed: u64) -> (RandomTask, Forest, adforest::dataset::Batch, adforest::dataset::Batch) {
    let mut rng = substream(seed, "repair-props", 0);
    let task = RandomTask::new(&mut rng);
    let first = task.batch(&mut rng, 200, 0.05, 1);
    let next = task.batch(&mut rng, 150, 0.3, 2);
    let f = build_forest(&first, 4, ForestMode::RfStyle, &params()).unwrap();
    (task, f, first, next)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ratios_are_fractions(seed in any::<u64>(), eps in 0.0f64..0.3) {
        let (_, f, first, next) = forest(seed);
        let prev = leaf_confidences(&f, &first);
        let m = find_perturbed_leaves(&next, &f, eps, &prev).unwrap();
        let r = perturbed_ratio(&m).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        let curr = leaf_confidences(&f, &next);
        for k in 0..f.len() {
            let t = m.tree_ratio(k).unwrap();
            prop_assert!((0.0..=1.0).contains(&t));
            for l in f.trees[k].leaves() {
                if m.is_flagged(k, l.leaf_id) {
                    let p = prev.get(k, l.leaf_id).unwrap().confidence.unwrap();
                    let c = curr.get(k, l.leaf_id).unwrap().confidence.unwrap();
                    prop_assert!(p > c + eps);
                }
            }
        }
    }

    #[test]
    fn below_theta_only_counts_change(seed in any::<u64>()) {
        let (_, f, first, next) = forest(seed);
        let prev = leaf_confidences(&f, &first);
        let m = find_perturbed_leaves(&next, &f, 0.02, &prev).unwrap();
        let (g, _) = repair_forest(&f, &next, &prev, &m, 1.0, SplitStrategy::Isat).unwrap();
        let labeled = next.records.iter().filter(|r| r.label.is_some()).count() as u64;
        for (a, b) in f.trees.iter().zip(&g.trees) {
            prop_assert_eq!(a.node_count(), b.node_count());
            prop_assert_eq!(counted(b), counted(a) + labeled);
        }
    }

    #[test]
    fn structural_repair_keeps_ids_and_bounds(seed in any::<u64>(), strategy in prop_oneof![
        Just(SplitStrategy::Isat), Just(SplitStrategy::SatOnly), Just(SplitStrategy::EntropyOnly)
    ]) {
        let (_, f, first, next) = forest(seed);
        let prev = leaf_confidences(&f, &first);
        let m = find_perturbed_leaves(&next, &f, 0.0, &prev).unwrap();
        let (g, stats) = repair_forest(&f, &next, &prev, &m, 0.0, strategy).unwrap();
        let batch_box = aabb_of_records(&next.records, &next.schema).unwrap();
        for (k, (a, b)) in f.trees.iter().zip(&g.trees).enumerate() {
            let mut seen = Vec::new();
            ids(b.root(), &mut seen);
            let unique: BTreeSet<u32> = seen.iter().copied().collect();
            prop_assert_eq!(unique.len(), seen.len());
            prop_assert!(seen.iter().all(|&id| id < b.next_leaf_id()));
            prop_assert!(b.next_leaf_id() >= a.next_leaf_id());
            for l in b.leaves() {
                prop_assert!(stats.get(k, l.leaf_id).is_some());
            }
            let bounds = b.bounds().unwrap();
            let old = a.bounds().unwrap();
            for (pos, &attr) in bounds.attr_indices.iter().enumerate() {
                prop_assert!(bounds.lower[pos] <= old.lower_of(attr).unwrap());
                prop_assert!(bounds.upper[pos] >= old.upper_of(attr).unwrap());
                prop_assert!(bounds.lower[pos] <= batch_box.lower_of(attr).unwrap());
                prop_assert!(bounds.upper[pos] >= batch_box.upper_of(attr).unwrap());
            }
        }
    }

    #[test]
    fn expansion_keeps_old_routes(seed in any::<u64>(), shift in 0.0f64..15.0) {
        let mut rng = substream(seed, "expansion", 0);
        let task = RandomTask::new(&mut rng);
        let first = task.batch(&mut rng, 120, 0.05, 1);
        let mut next = task.batch(&mut rng, 80, 0.05, 2);
        for r in &mut next.records {
            if let adforest::dataset::Value::Num(x) = &mut r.values[0] {
                *x += shift;
            }
        }
        let tree = induce_tree(&first, &params(), AttrSampler::All);
        let before: BTreeMap<usize, u32> = first.records.iter().enumerate().map(|(i, r)| (i, walk(tree.root(), r))).collect();
        let out = isat_expand(tree, &next);
        for (i, r) in first.records.iter().enumerate() {
            prop_assert_eq!(walk(out.tree.root(), r), before[&i]);
        }
        let old: BTreeSet<u32> = before.values().copied().collect();
        prop_assert!(out.fresh_leaves.iter().all(|id| !old.contains(id)));
    }
}
