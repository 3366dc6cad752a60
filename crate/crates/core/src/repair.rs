//! Leaf confidence tracking, perturbed-leaf detection and forest repair.
//!
//! A leaf's confidence on a batch is the fraction of the batch records routed
//! to it whose label equals the leaf's majority. A leaf is perturbed when its
//! previous confidence exceeds the current one by more than `epsilon`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Batch, ClassId, Record, Schema};
use crate::error::{Error, Result};
use crate::geometry::{aabb_of_records, isat_expand_records};
use crate::tree::{count_labels, AttrSampler, DecisionTree, Forest, Grower, InductionParams, Node};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafStat {
    /// Undefined when no batch record reached the leaf.
    pub confidence: Option<f64>,
    pub support: u64,
}

/// Per-tree map from leaf id to its latest confidence snapshot.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LeafStatsTable {
    pub trees: Vec<BTreeMap<u32, LeafStat>>,
}

impl LeafStatsTable {
    pub fn get(&self, tree: usize, leaf: u32) -> Option<&LeafStat> {
        self.trees.get(tree).and_then(|t| t.get(&leaf))
    }

    pub fn leaf_count(&self) -> usize {
        self.trees.iter().map(BTreeMap::len).sum()
    }

    fn check_covers(&self, forest: &Forest) -> Result<()> {
        if self.trees.len() != forest.len() {
            return Err(Error::StaleStats(format!(
                "statistics cover {} trees, forest has {}",
                self.trees.len(),
                forest.len()
            )));
        }
        for (k, (stats, tree)) in self.trees.iter().zip(&forest.trees).enumerate() {
            if !stats.keys().copied().eq(sorted_leaf_ids(tree)) {
                return Err(Error::StaleStats(format!("leaf set of tree {k} changed")));
            }
        }
        Ok(())
    }
}

fn sorted_leaf_ids(tree: &DecisionTree) -> impl Iterator<Item = u32> {
    let ids: BTreeSet<u32> = tree.leaves().iter().map(|l| l.leaf_id).collect();
    ids.into_iter()
}

fn tree_confidences(tree: &DecisionTree, records: &[&Record]) -> BTreeMap<u32, LeafStat> {
    let mut tally: BTreeMap<u32, (u64, u64)> = tree.leaves().iter().map(|l| (l.leaf_id, (0, 0))).collect();
    for r in records {
        let leaf = tree.route_leaf(r);
        let t = tally.get_mut(&leaf.leaf_id).expect("routed leaf belongs to tree");
        t.0 += 1;
        if r.label == Some(leaf.majority) {
            t.1 += 1;
        }
    }
    tally
        .into_iter()
        .map(|(id, (support, hits))| {
            let confidence = (support > 0).then(|| hits as f64 / support as f64);
            (id, LeafStat { confidence, support })
        })
        .collect()
}

fn labeled(batch: &Batch) -> Vec<&Record> {
    batch.records.iter().filter(|r| r.label.is_some()).collect()
}

/// Confidence and support of every leaf of `forest` on `batch`.
pub fn leaf_confidences(forest: &Forest, batch: &Batch) -> LeafStatsTable {
    let records = labeled(batch);
    LeafStatsTable {
        trees: forest.trees.iter().map(|t| tree_confidences(t, &records)).collect(),
    }
}

/// Binary perturbation flags per (tree, leaf).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbedMatrix {
    pub rows: Vec<BTreeMap<u32, bool>>,
    pub f_total: usize,
    pub l_total: usize,
}

impl PerturbedMatrix {
    pub fn is_flagged(&self, tree: usize, leaf: u32) -> bool {
        self.rows.get(tree).and_then(|r| r.get(&leaf)).copied().unwrap_or(false)
    }

    /// Sub-matrix of a single tree.
    pub fn row(&self, tree: usize) -> PerturbedMatrix {
        let row = self.rows[tree].clone();
        PerturbedMatrix {
            f_total: row.values().filter(|f| **f).count(),
            l_total: row.len(),
            rows: vec![row],
        }
    }

    pub fn tree_ratio(&self, tree: usize) -> Result<f64> {
        perturbed_ratio(&self.row(tree))
    }
}

/// Flags leaves whose confidence dropped by more than `epsilon` since
/// `prev_stats`. Leaves without a measurement on either side are not flagged.
pub fn find_perturbed_leaves(batch: &Batch, forest: &Forest, epsilon: f64, prev_stats: &LeafStatsTable) -> Result<PerturbedMatrix> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be non-negative, got {epsilon}")));
    }
    prev_stats.check_covers(forest)?;
    let current = leaf_confidences(forest, batch);
    let rows: Vec<BTreeMap<u32, bool>> = prev_stats
        .trees
        .iter()
        .zip(&current.trees)
        .map(|(prev, curr)| {
            prev.iter()
                .map(|(&id, p)| {
                    let flag = match (p.confidence, curr[&id].confidence) {
                        (Some(before), Some(now)) => before > now + epsilon,
                        _ => false,
                    };
                    (id, flag)
                })
                .collect()
        })
        .collect();
    let f_total = rows.iter().flat_map(|r| r.values()).filter(|f| **f).count();
    let l_total = rows.iter().map(BTreeMap::len).sum();
    Ok(PerturbedMatrix { rows, f_total, l_total })
}

/// Share of flagged leaves.
pub fn perturbed_ratio(f: &PerturbedMatrix) -> Result<f64> {
    if f.l_total == 0 {
        return Err(Error::InvalidState("perturbation matrix covers no leaves".into()));
    }
    Ok(f.f_total as f64 / f.l_total as f64)
}

/// Which structural repairs a heavily perturbed tree receives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitStrategy {
    /// Separating-axis expansion followed by entropy regrowth of leaves.
    #[default]
    Isat,
    /// Separating-axis expansion only.
    SatOnly,
    /// Entropy regrowth of leaves only.
    EntropyOnly,
}

impl SplitStrategy {
    fn uses_geometry(self) -> bool {
        matches!(self, SplitStrategy::Isat | SplitStrategy::SatOnly)
    }

    fn uses_entropy(self) -> bool {
        matches!(self, SplitStrategy::Isat | SplitStrategy::EntropyOnly)
    }
}

impl fmt::Display for SplitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitStrategy::Isat => "isat",
            SplitStrategy::SatOnly => "sat-only",
            SplitStrategy::EntropyOnly => "entropy-only",
        })
    }
}

impl FromStr for SplitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isat" => Ok(SplitStrategy::Isat),
            "sat-only" | "sat" => Ok(SplitStrategy::SatOnly),
            "entropy-only" | "entropy" => Ok(SplitStrategy::EntropyOnly),
            other => Err(Error::Config(format!("unknown split strategy `{other}`"))),
        }
    }
}

/// Spreads `prior` over the leaves of a regrown subtree in proportion to the
/// share of the `routed` batch records each leaf received.
fn inherit(node: Node, prior: &BTreeMap<ClassId, u64>, routed: u64) -> Node {
    match node {
        Node::Internal { test, left, right, .. } => {
            Node::internal(test, inherit(*left, prior, routed), inherit(*right, prior, routed))
        }
        Node::Leaf(mut leaf) => {
            let share: BTreeMap<ClassId, u64> = prior
                .iter()
                .map(|(&c, &k)| (c, k * leaf.train_size / routed.max(1)))
                .filter(|(_, k)| *k > 0)
                .collect();
            leaf.add_counts(&share);
            Node::Leaf(leaf)
        }
    }
}

struct Repairer<'a> {
    schema: &'a Schema,
    params: &'a InductionParams,
    fresh: BTreeSet<u32>,
    expandable: BTreeSet<u32>,
    grow: bool,
}

impl Repairer<'_> {
    fn visit(&self, node: Node, depth: usize, records: Vec<&Record>, next_id: &mut u32) -> Node {
        match node {
            Node::Internal { test, left, right, .. } => {
                let (mut to_left, mut to_right) = (Vec::new(), Vec::new());
                for r in records {
                    if Node::direction(&test, &left, &right, r) {
                        to_left.push(r);
                    } else {
                        to_right.push(r);
                    }
                }
                let l = self.visit(*left, depth + 1, to_left, next_id);
                let r = self.visit(*right, depth + 1, to_right, next_id);
                Node::internal(test, l, r)
            }
            Node::Leaf(mut leaf) => {
                if records.is_empty() {
                    return Node::Leaf(leaf);
                }
                let counts = count_labels(&records);
                let impure = counts.len() > 1;
                if self.grow
                    && impure
                    && self.expandable.contains(&leaf.leaf_id)
                    && records.len() > self.params.min_leaf_size
                {
                    let mut grower = Grower::new(self.schema, self.params, AttrSampler::All);
                    let mut trial_id = *next_id;
                    let n = records.len() as u64;
                    let sub = grower.grow(records, depth, &mut trial_id);
                    if matches!(sub, Node::Internal { .. }) {
                        *next_id = trial_id;
                        if self.fresh.contains(&leaf.leaf_id) {
                            return sub;
                        }
                        return inherit(sub, &leaf.class_counts, n);
                    }
                }
                if self.fresh.contains(&leaf.leaf_id) {
                    leaf = crate::tree::Leaf::from_counts(leaf.leaf_id, counts);
                } else {
                    leaf.add_counts(&counts);
                }
                Node::Leaf(leaf)
            }
        }
    }
}

/// Repairs every tree of `forest` against `batch`.
///
/// Trees whose own perturbed ratio exceeds `theta` get structural repair
/// according to `strategy`; all other trees only absorb the batch's class
/// counts. Returns the repaired forest and refreshed leaf statistics; leaves
/// the batch did not reach keep their previous snapshot.
pub fn repair_forest(
    forest: &Forest,
    batch: &Batch,
    prev_stats: &LeafStatsTable,
    perturbed: &PerturbedMatrix,
    theta: f64,
    strategy: SplitStrategy,
) -> Result<(Forest, LeafStatsTable)> {
    prev_stats.check_covers(forest)?;
    if perturbed.rows.len() != forest.len() {
        return Err(Error::StaleStats("perturbation matrix does not match the forest".into()));
    }
    let records = labeled(batch);
    let schema = &*batch.schema;
    let batch_box = aabb_of_records(&records, schema).ok();
    let mut trees = Vec::with_capacity(forest.len());
    for (k, tree) in forest.trees.iter().enumerate() {
        let structural = perturbed.tree_ratio(k)? > theta;
        let mut tree = tree.clone();
        let mut fresh = BTreeSet::new();
        if structural && strategy.uses_geometry() {
            let expansion = isat_expand_records(tree, &records, schema);
            tree = expansion.tree;
            fresh.extend(expansion.fresh_leaves);
        }
        let mut expandable: BTreeSet<u32> = if structural {
            perturbed.rows[k].iter().filter(|(_, f)| **f).map(|(&id, _)| id).collect()
        } else {
            BTreeSet::new()
        };
        expandable.extend(fresh.iter().copied());
        let repairer = Repairer {
            schema,
            params: &forest.params,
            fresh,
            expandable,
            grow: structural && strategy.uses_entropy(),
        };
        let root = tree.take_root();
        let mut next_id = tree.next_leaf_id();
        let root = repairer.visit(root, 0, records.clone(), &mut next_id);
        tree.set_root(root);
        *tree.next_leaf_id_mut() = next_id;
        if let Some(b) = &batch_box {
            tree.absorb_bounds(b)?;
        }
        trees.push(tree);
    }
    let repaired = Forest {
        trees,
        mode: forest.mode,
        params: forest.params,
    };
    let mut stats = leaf_confidences(&repaired, batch);
    for (k, table) in stats.trees.iter_mut().enumerate() {
        for (id, stat) in table.iter_mut() {
            if stat.support == 0 {
                if let Some(prev) = prev_stats.get(k, *id) {
                    *stat = *prev;
                }
            }
        }
    }
    Ok((repaired, stats))
}
