//! Entropy-based decision trees and fixed-size forests.
//!
//! Trees are binary: numeric tests send `value <= threshold` left, categorical
//! tests send `value == category` left. Missing values follow the child that
//! absorbed more training records.

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Batch, ClassId, Record, Schema, Value};
use crate::error::{Error, Result};
use crate::geometry::{aabb_of_records, Aabb};
use crate::rng::{substream, StreamRng};

/// Gains at or below this are treated as zero; also the tie tolerance when
/// comparing candidate splits.
pub const GAIN_EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SplitKind {
    NumericThreshold(f64),
    CategoricalEquals(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitTest {
    pub attr_index: usize,
    pub kind: SplitKind,
}

impl SplitTest {
    pub fn numeric(attr_index: usize, threshold: f64) -> Self {
        SplitTest {
            attr_index,
            kind: SplitKind::NumericThreshold(threshold),
        }
    }

    pub fn categorical(attr_index: usize, category: u32) -> Self {
        SplitTest {
            attr_index,
            kind: SplitKind::CategoricalEquals(category),
        }
    }

    /// `None` when the record's value is missing or of the wrong kind.
    pub fn goes_left(&self, record: &Record) -> Option<bool> {
        match (self.kind, record.value(self.attr_index)) {
            (SplitKind::NumericThreshold(t), Value::Num(x)) => Some(x <= t),
            (SplitKind::CategoricalEquals(c), Value::Cat(v)) => Some(v == c),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub leaf_id: u32,
    pub class_counts: BTreeMap<ClassId, u64>,
    pub majority: ClassId,
    pub train_size: u64,
}

impl Leaf {
    /// Builds a leaf from non-empty counts; ties in the majority go to the
    /// lower class id.
    pub fn from_counts(leaf_id: u32, class_counts: BTreeMap<ClassId, u64>) -> Self {
        debug_assert!(class_counts.values().any(|&n| n > 0), "leaf built from empty counts");
        let train_size = class_counts.values().sum();
        let majority = majority_of(&class_counts).unwrap_or(0);
        Leaf {
            leaf_id,
            class_counts,
            majority,
            train_size,
        }
    }

    pub fn add_counts(&mut self, counts: &BTreeMap<ClassId, u64>) {
        for (&c, &n) in counts {
            *self.class_counts.entry(c).or_insert(0) += n;
        }
        self.train_size = self.class_counts.values().sum();
        if let Some(m) = majority_of(&self.class_counts) {
            self.majority = m;
        }
    }
}

fn majority_of(counts: &BTreeMap<ClassId, u64>) -> Option<ClassId> {
    let mut best: Option<(ClassId, u64)> = None;
    for (&c, &n) in counts {
        if n > 0 && best.map_or(true, |(_, b)| n > b) {
            best = Some((c, n));
        }
    }
    best.map(|(c, _)| c)
}

pub(crate) fn count_labels<R: Borrow<Record>>(records: &[R]) -> BTreeMap<ClassId, u64> {
    let mut m = BTreeMap::new();
    for r in records {
        if let Some(l) = r.borrow().label {
            *m.entry(l).or_insert(0) += 1;
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Internal {
        test: SplitTest,
        left: Box<Node>,
        right: Box<Node>,
        /// Sum of the children's training sizes.
        train_size: u64,
    },
    Leaf(Leaf),
}

impl Node {
    pub fn internal(test: SplitTest, left: Node, right: Node) -> Node {
        let train_size = left.train_size() + right.train_size();
        Node::Internal {
            test,
            left: Box::new(left),
            right: Box::new(right),
            train_size,
        }
    }

    pub fn train_size(&self) -> u64 {
        match self {
            Node::Internal { train_size, .. } => *train_size,
            Node::Leaf(l) => l.train_size,
        }
    }

    /// Direction taken by `record` at an internal node: the test outcome, or
    /// the larger child for missing values (left on ties).
    pub(crate) fn direction(test: &SplitTest, left: &Node, right: &Node, record: &Record) -> bool {
        test.goes_left(record)
            .unwrap_or_else(|| left.train_size() >= right.train_size())
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a Leaf>) {
        match self {
            Node::Internal { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
            Node::Leaf(l) => out.push(l),
        }
    }

    fn depth(&self) -> usize {
        match self {
            Node::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
            Node::Leaf(_) => 0,
        }
    }
}

/// A decision tree plus the bounding box of every record it has absorbed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TreeDoc", try_from = "TreeDoc")]
pub struct DecisionTree {
    root: Node,
    next_leaf_id: u32,
    bounds: Option<Aabb>,
}

impl DecisionTree {
    pub fn new(root: Node, next_leaf_id: u32, bounds: Option<Aabb>) -> Self {
        DecisionTree {
            root,
            next_leaf_id,
            bounds,
        }
    }

    /// Single-leaf tree over `records`.
    pub fn leaf<R: Borrow<Record>>(records: &[R], schema: &Schema) -> Self {
        let bounds = aabb_of_records(records, schema).ok();
        DecisionTree::new(Node::Leaf(Leaf::from_counts(0, count_labels(records))), 1, bounds)
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub(crate) fn take_root(&mut self) -> Node {
        std::mem::replace(
            &mut self.root,
            Node::Leaf(Leaf {
                leaf_id: u32::MAX,
                class_counts: BTreeMap::new(),
                majority: 0,
                train_size: 0,
            }),
        )
    }

    pub(crate) fn set_root(&mut self, root: Node) {
        self.root = root;
    }

    pub fn bounds(&self) -> Option<&Aabb> {
        self.bounds.as_ref()
    }

    /// Grows the stored bounds to include `other`.
    pub fn absorb_bounds(&mut self, other: &Aabb) -> Result<()> {
        self.bounds = Some(match &self.bounds {
            Some(b) => b.union(other)?,
            None => other.clone(),
        });
        Ok(())
    }

    pub(crate) fn alloc_leaf_id(&mut self) -> u32 {
        let id = self.next_leaf_id;
        self.next_leaf_id += 1;
        id
    }

    pub fn next_leaf_id(&self) -> u32 {
        self.next_leaf_id
    }

    pub(crate) fn next_leaf_id_mut(&mut self) -> &mut u32 {
        &mut self.next_leaf_id
    }

    pub fn route_leaf(&self, record: &Record) -> &Leaf {
        let mut node = &self.root;
        loop {
            match node {
                Node::Internal { test, left, right, .. } => {
                    node = if Node::direction(test, left, right, record) { left } else { right };
                }
                Node::Leaf(l) => return l,
            }
        }
    }

    pub fn route(&self, record: &Record) -> u32 {
        self.route_leaf(record).leaf_id
    }

    pub fn predict(&self, record: &Record) -> ClassId {
        self.route_leaf(record).majority
    }

    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        self.root.collect_leaves(&mut out);
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn node_count(&self) -> usize {
        TreeDoc::from(self.clone()).nodes.len()
    }
}

/// Entropy (base 2) of a class distribution.
pub fn entropy(class_counts: &BTreeMap<ClassId, u64>) -> Result<f64> {
    let counts: Vec<u64> = class_counts.values().copied().collect();
    if counts.iter().all(|&n| n == 0) {
        return Err(Error::InvalidInput("entropy of an empty distribution".into()));
    }
    Ok(entropy_of(&counts))
}

pub(crate) fn entropy_of(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let mut h = 0.0;
    for &n in counts {
        if n > 0 {
            let p = n as f64 / total;
            h -= p * p.log2();
        }
    }
    h
}

/// Information gain of a binary partition of the known-valued records, scaled
/// by the fraction of records whose value is known.
fn split_gain(parent: &[u64], left: &[u64], right: &[u64], known_fraction: f64) -> f64 {
    let n: u64 = parent.iter().sum();
    let nl: u64 = left.iter().sum();
    let nr: u64 = right.iter().sum();
    let n = n as f64;
    known_fraction * (entropy_of(parent) - (nl as f64 / n) * entropy_of(left) - (nr as f64 / n) * entropy_of(right))
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if lo <= m && m < hi {
        m
    } else {
        lo
    }
}

/// Best information-gain test over `candidate_attrs`.
///
/// Numeric candidates are midpoints between consecutive distinct values,
/// categorical candidates are one-vs-rest. Both children must hold at least
/// `min_leaf_size` known-valued records. Ties go to the lower attribute index,
/// then the lower threshold or earlier category.
pub fn best_entropy_split<R: Borrow<Record>>(
    records: &[R],
    schema: &Schema,
    candidate_attrs: &[usize],
    min_leaf_size: usize,
) -> Option<(SplitTest, f64)> {
    let min_leaf = min_leaf_size.max(1);
    let n_classes = schema.class_count();
    let labeled: Vec<&Record> = records.iter().map(Borrow::borrow).filter(|r| r.label.is_some()).collect();
    if labeled.len() < 2 * min_leaf {
        return None;
    }
    let total = labeled.len() as f64;
    let mut attrs = candidate_attrs.to_vec();
    attrs.sort_unstable();
    attrs.dedup();

    let mut best: Option<(SplitTest, f64)> = None;
    let mut consider = |test: SplitTest, gain: f64| {
        if gain > GAIN_EPSILON && best.map_or(true, |(_, g)| gain > g + GAIN_EPSILON) {
            best = Some((test, gain));
        }
    };

    for attr in attrs {
        if attr == schema.class_index() {
            continue;
        }
        if schema.attribute(attr).kind.is_numeric() {
            let mut pairs: Vec<(f64, usize)> = labeled
                .iter()
                .filter_map(|r| r.value(attr).as_num().map(|x| (x, r.label.unwrap() as usize)))
                .collect();
            let n = pairs.len();
            if n < 2 * min_leaf {
                continue;
            }
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut parent = vec![0u64; n_classes];
            for &(_, c) in &pairs {
                parent[c] += 1;
            }
            let frac = n as f64 / total;
            let mut left = vec![0u64; n_classes];
            let mut right = vec![0u64; n_classes];
            for i in 0..n - 1 {
                left[pairs[i].1] += 1;
                let nl = i + 1;
                if pairs[i].0 == pairs[i + 1].0 || nl < min_leaf || n - nl < min_leaf {
                    continue;
                }
                for c in 0..n_classes {
                    right[c] = parent[c] - left[c];
                }
                let gain = split_gain(&parent, &left, &right, frac);
                consider(SplitTest::numeric(attr, midpoint(pairs[i].0, pairs[i + 1].0)), gain);
            }
        } else {
            let n_cats = match &schema.attribute(attr).kind {
                crate::dataset::AttributeKind::Categorical(c) => c.len(),
                _ => 0,
            };
            let mut per_cat = vec![vec![0u64; n_classes]; n_cats];
            let mut parent = vec![0u64; n_classes];
            let mut n = 0usize;
            for r in &labeled {
                if let Value::Cat(v) = r.value(attr) {
                    if (v as usize) < n_cats {
                        let c = r.label.unwrap() as usize;
                        per_cat[v as usize][c] += 1;
                        parent[c] += 1;
                        n += 1;
                    }
                }
            }
            if n < 2 * min_leaf {
                continue;
            }
            let frac = n as f64 / total;
            let mut right = vec![0u64; n_classes];
            for (cat, left) in per_cat.iter().enumerate() {
                let nl: u64 = left.iter().sum();
                if nl == 0 || (nl as usize) < min_leaf || n - (nl as usize) < min_leaf {
                    continue;
                }
                for c in 0..n_classes {
                    right[c] = parent[c] - left[c];
                }
                let gain = split_gain(&parent, left, &right, frac);
                consider(SplitTest::categorical(attr, cat as u32), gain);
            }
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InductionParams {
    pub min_leaf_size: usize,
    pub max_depth: usize,
    /// Candidate attributes per node; `None` means ⌈√m⌉ for random-forest
    /// style and all attributes otherwise.
    pub attrs_per_split: Option<usize>,
    pub rng_seed: u64,
}

impl Default for InductionParams {
    fn default() -> Self {
        InductionParams {
            min_leaf_size: 20,
            max_depth: 25,
            attrs_per_split: None,
            rng_seed: 0,
        }
    }
}

impl InductionParams {
    /// Defaults scaled to the stream: minimum leaf size 100 above 100,000
    /// training records, 20 otherwise.
    pub fn for_stream_size(total_records: usize) -> Self {
        InductionParams {
            min_leaf_size: if total_records > 100_000 { 100 } else { 20 },
            ..Default::default()
        }
    }
}

/// Per-node candidate attribute policy.
pub enum AttrSampler {
    All,
    Random { count: usize, rng: StreamRng },
}

impl AttrSampler {
    fn candidates(&mut self, features: &[usize]) -> Vec<usize> {
        match self {
            AttrSampler::All => features.to_vec(),
            AttrSampler::Random { count, rng } => {
                if *count >= features.len() {
                    return features.to_vec();
                }
                let mut c: Vec<usize> = features.choose_multiple(rng, *count).copied().collect();
                c.sort_unstable();
                c
            }
        }
    }
}

pub(crate) struct Grower<'a> {
    pub schema: &'a Schema,
    pub params: &'a InductionParams,
    pub sampler: AttrSampler,
    pub features: Vec<usize>,
}

impl<'a> Grower<'a> {
    pub fn new(schema: &'a Schema, params: &'a InductionParams, sampler: AttrSampler) -> Self {
        Grower {
            schema,
            params,
            sampler,
            features: schema.feature_indices(),
        }
    }

    /// Top-down induction over `records` starting at `depth`; leaf ids are
    /// drawn from `next_id`.
    pub fn grow(&mut self, records: Vec<&Record>, depth: usize, next_id: &mut u32) -> Node {
        let counts = count_labels(&records);
        let pure = counts.len() <= 1;
        if pure || depth >= self.params.max_depth || records.len() < 2 * self.params.min_leaf_size.max(1) {
            return self.make_leaf(counts, next_id);
        }
        let candidates = self.sampler.candidates(&self.features);
        match best_entropy_split(&records, self.schema, &candidates, self.params.min_leaf_size) {
            Some((test, _)) => self.split_on(test, records, depth, next_id, counts),
            None => self.make_leaf(counts, next_id),
        }
    }

    pub fn split_on(
        &mut self,
        test: SplitTest,
        records: Vec<&Record>,
        depth: usize,
        next_id: &mut u32,
        counts: BTreeMap<ClassId, u64>,
    ) -> Node {
        let (left, right) = partition(&test, records);
        if left.is_empty() || right.is_empty() {
            return self.make_leaf(counts, next_id);
        }
        let l = self.grow(left, depth + 1, next_id);
        let r = self.grow(right, depth + 1, next_id);
        Node::internal(test, l, r)
    }

    fn make_leaf(&self, counts: BTreeMap<ClassId, u64>, next_id: &mut u32) -> Node {
        let id = *next_id;
        *next_id += 1;
        Node::Leaf(Leaf::from_counts(id, counts))
    }
}

/// Splits records by `test`; missing values join the larger known side
/// (left on ties).
pub(crate) fn partition<'r>(test: &SplitTest, records: Vec<&'r Record>) -> (Vec<&'r Record>, Vec<&'r Record>) {
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut missing = Vec::new();
    for r in records {
        match test.goes_left(r) {
            Some(true) => left.push(r),
            Some(false) => right.push(r),
            None => missing.push(r),
        }
    }
    if left.len() >= right.len() {
        left.extend(missing);
    } else {
        right.extend(missing);
    }
    (left, right)
}

/// Induces one tree on the labeled records of `batch`.
pub fn induce_tree(batch: &Batch, params: &InductionParams, attr_sampler: AttrSampler) -> DecisionTree {
    let records: Vec<&Record> = batch.records.iter().filter(|r| r.label.is_some()).collect();
    induce_on(&records, &batch.schema, params, attr_sampler)
}

pub(crate) fn induce_on(records: &[&Record], schema: &Schema, params: &InductionParams, sampler: AttrSampler) -> DecisionTree {
    let mut next_id = 0;
    let mut grower = Grower::new(schema, params, sampler);
    let root = grower.grow(records.to_vec(), 0, &mut next_id);
    DecisionTree::new(root, next_id, aabb_of_records(records, schema).ok())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForestMode {
    /// Bootstrap samples with ⌈√m⌉ random candidate attributes per node.
    #[serde(rename = "rf")]
    RfStyle,
    /// Full batch per tree, tree k rooted at the k-th best attribute's split.
    #[serde(rename = "sysfor")]
    SysForStyle,
}

impl fmt::Display for ForestMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ForestMode::RfStyle => "rf",
            ForestMode::SysForStyle => "sysfor",
        })
    }
}

impl FromStr for ForestMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rf" => Ok(ForestMode::RfStyle),
            "sysfor" => Ok(ForestMode::SysForStyle),
            other => Err(Error::Config(format!("unknown forest mode `{other}` (expected rf or sysfor)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
    pub mode: ForestMode,
    pub params: InductionParams,
}

fn bootstrap<'r>(records: &[&'r Record], rng: &mut StreamRng) -> Vec<&'r Record> {
    (0..records.len()).map(|_| records[rng.gen_range(0..records.len())]).collect()
}

/// Builds an `m`-tree forest on `batch`. Identical inputs give identical forests.
pub fn build_forest(batch: &Batch, m: usize, mode: ForestMode, params: &InductionParams) -> Result<Forest> {
    if m == 0 {
        return Err(Error::InvalidInput("ensemble size must be at least 1".into()));
    }
    let records: Vec<&Record> = batch.records.iter().filter(|r| r.label.is_some()).collect();
    if records.is_empty() {
        return Err(Error::InvalidInput("cannot build a forest on an unlabeled or empty batch".into()));
    }
    let schema = &*batch.schema;
    let features = schema.feature_indices();
    let seed = params.rng_seed;
    let trees = match mode {
        ForestMode::RfStyle => {
            let per_split = params
                .attrs_per_split
                .unwrap_or_else(|| (features.len() as f64).sqrt().ceil() as usize)
                .max(1);
            (0..m)
                .map(|k| {
                    let sample = bootstrap(&records, &mut substream(seed, "bootstrap", k as u64));
                    let sampler = AttrSampler::Random {
                        count: per_split,
                        rng: substream(seed, "induction", k as u64),
                    };
                    induce_on(&sample, schema, params, sampler)
                })
                .collect()
        }
        ForestMode::SysForStyle => {
            let mut roots: Vec<(SplitTest, f64)> = features
                .iter()
                .filter_map(|&a| best_entropy_split(&records, schema, &[a], params.min_leaf_size))
                .collect();
            // stable: equal gains keep attribute order
            roots.sort_by(|a, b| b.1.total_cmp(&a.1));
            (0..m)
                .map(|k| {
                    let sample = if k < roots.len() || (roots.is_empty() && k == 0) {
                        records.clone()
                    } else {
                        bootstrap(&records, &mut substream(seed, "bootstrap", k as u64))
                    };
                    let sampler = match params.attrs_per_split {
                        Some(count) => AttrSampler::Random {
                            count,
                            rng: substream(seed, "induction", k as u64),
                        },
                        None => AttrSampler::All,
                    };
                    let mut grower = Grower::new(schema, params, sampler);
                    let mut next_id = 0;
                    let root = if roots.is_empty() {
                        grower.grow(sample.clone(), 0, &mut next_id)
                    } else {
                        let (test, _) = roots[k % roots.len()];
                        let counts = count_labels(&sample);
                        grower.split_on(test, sample.clone(), 0, &mut next_id, counts)
                    };
                    DecisionTree::new(root, next_id, aabb_of_records(&sample, schema).ok())
                })
                .collect()
        }
    };
    Ok(Forest {
        trees,
        mode,
        params: *params,
    })
}

impl Forest {
    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        self.trees.iter().map(DecisionTree::leaf_count).sum()
    }

    pub fn classify(&self, record: &Record) -> (ClassId, BTreeMap<ClassId, usize>) {
        classify(self, record)
    }

    /// Fraction of labeled records in `batch` whose vote matches the label.
    pub fn accuracy_on(&self, batch: &Batch) -> f64 {
        let labeled: Vec<&Record> = batch.records.iter().filter(|r| r.label.is_some()).collect();
        if labeled.is_empty() {
            return 0.0;
        }
        let hits = labeled.iter().filter(|r| self.classify(r).0 == r.label.unwrap()).count();
        hits as f64 / labeled.len() as f64
    }
}

/// Majority vote over the forest; ties go to the lower class id.
pub fn classify(forest: &Forest, record: &Record) -> (ClassId, BTreeMap<ClassId, usize>) {
    let mut votes = BTreeMap::new();
    for t in &forest.trees {
        *votes.entry(t.predict(record)).or_insert(0usize) += 1;
    }
    let mut best = (0, 0);
    for (&c, &n) in &votes {
        if n > best.1 {
            best = (c, n);
        }
    }
    (best.0, votes)
}

/// Flat preorder layout used for serialization: a node's left child is the
/// next entry, its right child index is explicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeDoc {
    pub next_leaf_id: u32,
    pub bounds: Option<Aabb>,
    pub nodes: Vec<NodeDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeDoc {
    Internal {
        attr: usize,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        threshold: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        category: Option<u32>,
        left: usize,
        right: usize,
        train_size: u64,
    },
    Leaf {
        leaf_id: u32,
        majority: ClassId,
        train_size: u64,
        class_counts: Vec<(ClassId, u64)>,
    },
}

fn flatten(node: &Node, out: &mut Vec<NodeDoc>) -> usize {
    let at = out.len();
    match node {
        Node::Leaf(l) => out.push(NodeDoc::Leaf {
            leaf_id: l.leaf_id,
            majority: l.majority,
            train_size: l.train_size,
            class_counts: l.class_counts.iter().map(|(&c, &n)| (c, n)).collect(),
        }),
        Node::Internal {
            test,
            left,
            right,
            train_size,
        } => {
            let (threshold, category) = match test.kind {
                SplitKind::NumericThreshold(t) => (Some(t), None),
                SplitKind::CategoricalEquals(c) => (None, Some(c)),
            };
            out.push(NodeDoc::Internal {
                attr: test.attr_index,
                threshold,
                category,
                left: 0,
                right: 0,
                train_size: *train_size,
            });
            let l = flatten(left, out);
            let r = flatten(right, out);
            if let NodeDoc::Internal { left, right, .. } = &mut out[at] {
                *left = l;
                *right = r;
            }
        }
    }
    at
}

fn unflatten(nodes: &[NodeDoc], at: usize, depth: usize) -> std::result::Result<Node, String> {
    if depth > 10_000 {
        return Err("tree nesting too deep".into());
    }
    match nodes.get(at).ok_or_else(|| format!("node index {at} out of range"))? {
        NodeDoc::Leaf {
            leaf_id,
            majority,
            train_size,
            class_counts,
        } => Ok(Node::Leaf(Leaf {
            leaf_id: *leaf_id,
            class_counts: class_counts.iter().copied().collect(),
            majority: *majority,
            train_size: *train_size,
        })),
        NodeDoc::Internal {
            attr,
            threshold,
            category,
            left,
            right,
            train_size,
        } => {
            if *left <= at || *right <= at {
                return Err(format!("node {at} has a non-forward child index"));
            }
            let kind = match (threshold, category) {
                (Some(t), None) => SplitKind::NumericThreshold(*t),
                (None, Some(c)) => SplitKind::CategoricalEquals(*c),
                _ => return Err(format!("node {at} must have exactly one of threshold/category")),
            };
            Ok(Node::Internal {
                test: SplitTest { attr_index: *attr, kind },
                left: Box::new(unflatten(nodes, *left, depth + 1)?),
                right: Box::new(unflatten(nodes, *right, depth + 1)?),
                train_size: *train_size,
            })
        }
    }
}

impl From<DecisionTree> for TreeDoc {
    fn from(t: DecisionTree) -> Self {
        let mut nodes = Vec::new();
        flatten(&t.root, &mut nodes);
        TreeDoc {
            next_leaf_id: t.next_leaf_id,
            bounds: t.bounds,
            nodes,
        }
    }
}

impl TryFrom<TreeDoc> for DecisionTree {
    type Error = String;

    fn try_from(doc: TreeDoc) -> std::result::Result<Self, String> {
        let root = unflatten(&doc.nodes, 0, 0)?;
        Ok(DecisionTree::new(root, doc.next_leaf_id, doc.bounds))
    }
}

pub const FOREST_FORMAT: &str = "adforest.forest/1";

#[derive(Serialize, Deserialize)]
struct ForestDocument {
    format: String,
    schema_digest: String,
    forest: Forest,
}

/// Serializes a forest as a self-describing JSON document.
pub fn forest_to_json(forest: &Forest, schema: &Schema) -> Result<String> {
    let doc = ForestDocument {
        format: FOREST_FORMAT.into(),
        schema_digest: schema.digest(),
        forest: forest.clone(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn forest_from_json(text: &str, schema: &Schema) -> Result<Forest> {
    let doc: ForestDocument = serde_json::from_str(text)?;
    if doc.format != FOREST_FORMAT {
        return Err(Error::InvalidInput(format!("unknown forest format `{}`", doc.format)));
    }
    if doc.schema_digest != schema.digest() {
        return Err(Error::Stream("forest was built against a different schema".into()));
    }
    Ok(doc.forest)
}
