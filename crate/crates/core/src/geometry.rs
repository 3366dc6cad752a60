//! Axis-aligned bounding boxes over numeric attributes, separating-axis splits
//! between an old training region and a new batch, and the geometric tree
//! expansion that wraps an existing tree with separating tests.
//!
//! Categorical attributes never take part in the geometry; they are handled by
//! entropy expansion during repair.

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use crate::dataset::{Batch, Record, Schema, Value};
use crate::error::{Error, Result};
use crate::tree::{count_labels, DecisionTree, Leaf, Node, SplitTest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Schema attribute index for each coordinate.
    pub attr_indices: Vec<usize>,
}

impl Aabb {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, attr_indices: Vec<usize>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != attr_indices.len() {
            return Err(Error::InvalidInput("bounding box vectors differ in length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidInput("bounding box has lower > upper".into()));
        }
        Ok(Aabb {
            lower,
            upper,
            attr_indices,
        })
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    fn check_same_axes(&self, other: &Aabb) -> Result<()> {
        if self.attr_indices != other.attr_indices {
            return Err(Error::InvalidInput("bounding boxes cover different attributes".into()));
        }
        Ok(())
    }

    pub fn union(&self, other: &Aabb) -> Result<Aabb> {
        self.check_same_axes(other)?;
        Ok(Aabb {
            lower: self.lower.iter().zip(&other.lower).map(|(a, b)| a.min(*b)).collect(),
            upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a.max(*b)).collect(),
            attr_indices: self.attr_indices.clone(),
        })
    }

    /// True when the closed boxes intersect on every axis.
    pub fn overlaps(&self, other: &Aabb) -> Result<bool> {
        self.check_same_axes(other)?;
        Ok((0..self.dims()).all(|j| self.lower[j] <= other.upper[j] && other.lower[j] <= self.upper[j]))
    }

    /// True when every non-missing coordinate of `record` lies inside the box.
    pub fn contains(&self, record: &Record) -> bool {
        self.attr_indices.iter().enumerate().all(|(j, &a)| match record.value(a) {
            Value::Num(x) => self.lower[j] <= x && x <= self.upper[j],
            _ => true,
        })
    }

    fn position(&self, attr: usize) -> Option<usize> {
        self.attr_indices.iter().position(|&a| a == attr)
    }

    pub fn lower_of(&self, attr: usize) -> Option<f64> {
        self.position(attr).map(|j| self.lower[j])
    }

    pub fn upper_of(&self, attr: usize) -> Option<f64> {
        self.position(attr).map(|j| self.upper[j])
    }
}

/// Componentwise min/max of the numeric attributes over non-missing values.
pub fn aabb_of_records<R: Borrow<Record>>(records: &[R], schema: &Schema) -> Result<Aabb> {
    let attrs = schema.numeric_indices();
    if attrs.is_empty() {
        return Err(Error::EmptyGeometry);
    }
    if records.is_empty() {
        return Err(Error::InvalidInput("bounding box of an empty record set".into()));
    }
    let mut lower = vec![f64::INFINITY; attrs.len()];
    let mut upper = vec![f64::NEG_INFINITY; attrs.len()];
    for r in records {
        let r = r.borrow();
        for (j, &a) in attrs.iter().enumerate() {
            if let Value::Num(x) = r.value(a) {
                lower[j] = lower[j].min(x);
                upper[j] = upper[j].max(x);
            }
        }
    }
    if let Some(j) = lower.iter().position(|l| l.is_infinite()) {
        return Err(Error::DegenerateAttribute(schema.attribute(attrs[j]).name.clone()));
    }
    Ok(Aabb {
        lower,
        upper,
        attr_indices: attrs,
    })
}

/// Stored training-region bounds of a tree.
pub fn aabb_of_tree(tree: &DecisionTree) -> Result<Aabb> {
    tree.bounds().cloned().ok_or(Error::EmptyGeometry)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NewSide {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SatSplit {
    pub attr_index: usize,
    pub split_value: f64,
    pub new_side: NewSide,
}

impl SatSplit {
    pub fn test(&self) -> SplitTest {
        SplitTest::numeric(self.attr_index, self.split_value)
    }
}

/// Index and value of the largest entry; first index on ties.
fn arg_max(v: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.map_or(true, |(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best
}

/// Value strictly separating `lo` (goes left) from `hi` (goes right) under the
/// `<=` convention: the midpoint, or `lo` when the two are adjacent floats.
fn separating_value(lo: f64, hi: f64) -> f64 {
    let m = (lo + hi) / 2.0;
    if lo <= m && m < hi {
        m
    } else {
        lo
    }
}

/// Separating-axis split between two boxes, or `None` when they overlap on
/// every axis.
///
/// The gap above the old box (`new.lower - old.upper`) is preferred over the
/// gap below it when both are positive and equal.
pub fn sat_split(box_old: &Aabb, box_new: &Aabb) -> Result<Option<SatSplit>> {
    box_old.check_same_axes(box_new)?;
    let above: Vec<f64> = (0..box_old.dims()).map(|j| box_new.lower[j] - box_old.upper[j]).collect();
    let below: Vec<f64> = (0..box_old.dims()).map(|j| box_old.lower[j] - box_new.upper[j]).collect();
    let (Some((ja, max_above)), Some((jb, max_below))) = (arg_max(&above), arg_max(&below)) else {
        return Ok(None);
    };
    if max_above > 0.0 && max_above >= max_below {
        Ok(Some(SatSplit {
            attr_index: box_old.attr_indices[ja],
            split_value: separating_value(box_old.upper[ja], box_new.lower[ja]),
            new_side: NewSide::Right,
        }))
    } else if max_below > 0.0 {
        Ok(Some(SatSplit {
            attr_index: box_old.attr_indices[jb],
            split_value: separating_value(box_new.upper[jb], box_old.lower[jb]),
            new_side: NewSide::Left,
        }))
    } else {
        Ok(None)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum IsatOutcome {
    /// Batch box disjoint from the tree box: one separating root was added.
    Disjoint(SatSplit),
    /// Boxes overlap; up to two boundary tests were added (upper first, then
    /// lower wrapping it).
    Overlap {
        upper: Option<SplitTest>,
        lower: Option<SplitTest>,
    },
    /// Batch lies within the tree's region (or there is no usable geometry);
    /// the tree is unchanged and repair falls back to entropy expansion.
    FullyContained,
}

#[derive(Clone, Debug)]
pub struct IsatExpansion {
    pub tree: DecisionTree,
    pub outcome: IsatOutcome,
    /// Ids of the leaves created for the batch's new regions.
    pub fresh_leaves: Vec<u32>,
}

fn fresh_leaf(tree: &mut DecisionTree, records: &[&Record], side: impl Fn(&Record) -> bool) -> Node {
    let on_side: Vec<&Record> = records.iter().copied().filter(|r| side(r)).collect();
    Node::Leaf(Leaf::from_counts(tree.alloc_leaf_id(), count_labels(&on_side)))
}

/// Wraps `tree` with separating tests so the batch's region outside the
/// tree's stored bounds gets its own fresh leaves.
///
/// Every record that reached a leaf of the input tree reaches the same leaf in
/// the output. Fresh leaves carry the class counts of the batch records on
/// their side of their own test; repair grows them further.
pub fn isat_expand(tree: DecisionTree, batch: &Batch) -> IsatExpansion {
    let records: Vec<&Record> = batch.records.iter().filter(|r| r.label.is_some()).collect();
    isat_expand_records(tree, &records, &batch.schema)
}

pub(crate) fn isat_expand_records(mut tree: DecisionTree, records: &[&Record], schema: &Schema) -> IsatExpansion {
    let unchanged = |tree| IsatExpansion {
        tree,
        outcome: IsatOutcome::FullyContained,
        fresh_leaves: Vec::new(),
    };
    let Some(old) = tree.bounds().cloned() else {
        return unchanged(tree);
    };
    let Ok(new) = aabb_of_records(records, schema) else {
        return unchanged(tree);
    };
    let Ok(split) = sat_split(&old, &new) else {
        return unchanged(tree);
    };

    if let Some(s) = split {
        let test = s.test();
        let new_left = s.new_side == NewSide::Left;
        let fresh = fresh_leaf(&mut tree, records, |r| test.goes_left(r) == Some(new_left));
        let fresh_id = leaf_id(&fresh);
        let old_root = tree.take_root();
        let root = if new_left {
            Node::internal(test, fresh, old_root)
        } else {
            Node::internal(test, old_root, fresh)
        };
        tree.set_root(root);
        return IsatExpansion {
            tree,
            outcome: IsatOutcome::Disjoint(s),
            fresh_leaves: vec![fresh_id],
        };
    }

    let mut fresh_leaves = Vec::new();
    let residual_up: Vec<f64> = (0..old.dims()).map(|j| new.upper[j] - old.upper[j]).collect();
    let mut upper = None;
    if let Some((j, gap)) = arg_max(&residual_up) {
        if gap > 0.0 {
            let test = SplitTest::numeric(old.attr_indices[j], old.upper[j]);
            let fresh = fresh_leaf(&mut tree, records, |r| test.goes_left(r) == Some(false));
            fresh_leaves.push(leaf_id(&fresh));
            let old_root = tree.take_root();
            tree.set_root(Node::internal(test, old_root, fresh));
            upper = Some(test);
        }
    }
    let residual_down: Vec<f64> = (0..old.dims()).map(|j| old.lower[j] - new.lower[j]).collect();
    let mut lower = None;
    if let Some((j, gap)) = arg_max(&residual_down) {
        if gap > 0.0 {
            // largest value strictly below the old lower bound, so records on
            // the boundary keep reaching the old tree
            let test = SplitTest::numeric(old.attr_indices[j], old.lower[j].next_down());
            let fresh = fresh_leaf(&mut tree, records, |r| test.goes_left(r) == Some(true));
            fresh_leaves.push(leaf_id(&fresh));
            let old_root = tree.take_root();
            tree.set_root(Node::internal(test, fresh, old_root));
            lower = Some(test);
        }
    }
    if upper.is_none() && lower.is_none() {
        return unchanged(tree);
    }
    IsatExpansion {
        tree,
        outcome: IsatOutcome::Overlap { upper, lower },
        fresh_leaves,
    }
}

fn leaf_id(node: &Node) -> u32 {
    match node {
        Node::Leaf(l) => l.leaf_id,
        Node::Internal { .. } => unreachable!("fresh nodes are leaves"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Attribute, ClassId};
    use std::sync::Arc;

    fn bx(lo: &[f64], hi: &[f64]) -> Aabb {
        Aabb::new(lo.to_vec(), hi.to_vec(), (0..lo.len()).collect()).unwrap()
    }

    fn schema(dims: usize) -> Arc<Schema> {
        let mut attrs: Vec<Attribute> = (0..dims).map(|i| Attribute::numeric(format!("x{i}"))).collect();
        attrs.push(Attribute::categorical("cls", Vec::<String>::new()));
        Arc::new(Schema::new(attrs, dims, vec!["a".into(), "b".into()]).unwrap())
    }

    fn rec(xs: &[f64], c: ClassId) -> Record {
        let mut v: Vec<Value> = xs.iter().map(|&x| Value::Num(x)).collect();
        v.push(Value::Missing);
        Record::new(v, Some(c))
    }

    #[test]
    fn boxes_of_records() {
        let s = schema(2);
        let b = aabb_of_records(&[rec(&[3.0, 7.0], 0)], &s).unwrap();
        assert_eq!((b.lower.clone(), b.upper.clone()), (vec![3.0, 7.0], vec![3.0, 7.0]));
        let b = aabb_of_records(&[rec(&[0.0, 0.0], 0), rec(&[2.0, 5.0], 0)], &s).unwrap();
        assert_eq!((b.lower.clone(), b.upper.clone()), (vec![0.0, 0.0], vec![2.0, 5.0]));
        let rs = [rec(&[1.0, 9.0], 0), rec(&[4.0, 2.0], 0), rec(&[3.0, 3.0], 0)];
        let b = aabb_of_records(&rs, &s).unwrap();
        assert_eq!((b.lower.clone(), b.upper.clone()), (vec![1.0, 2.0], vec![4.0, 9.0]));

        let mut gap = rec(&[1.0, 0.0], 0);
        gap.values[1] = Value::Missing;
        assert!(matches!(aabb_of_records(&[gap], &s), Err(Error::DegenerateAttribute(n)) if n == "x1"));
    }

    #[test]
    fn tree_bounds_grow_with_absorbed_batches() {
        let s = schema(1);
        let mut t = DecisionTree::leaf(&[rec(&[0.0], 0), rec(&[2.0], 0)], &s);
        assert_eq!(aabb_of_tree(&t).unwrap(), bx(&[0.0], &[2.0]));
        t.absorb_bounds(&bx(&[5.0], &[7.0])).unwrap();
        assert_eq!(aabb_of_tree(&t).unwrap(), bx(&[0.0], &[7.0]));

        let cat_only = Arc::new(
            Schema::new(
                vec![Attribute::categorical("c", ["u"]), Attribute::categorical("cls", Vec::<String>::new())],
                1,
                vec!["a".into()],
            )
            .unwrap(),
        );
        let r = Record::new(vec![Value::Cat(0), Value::Missing], Some(0));
        assert!(matches!(aabb_of_tree(&DecisionTree::leaf(&[r], &cat_only)), Err(Error::EmptyGeometry)));
    }

    #[test]
    fn sat_examples() {
        let s = sat_split(&bx(&[0.0], &[2.0]), &bx(&[5.0], &[7.0])).unwrap().unwrap();
        assert_eq!((s.attr_index, s.split_value, s.new_side), (0, 3.5, NewSide::Right));
        let s = sat_split(&bx(&[5.0], &[7.0]), &bx(&[0.0], &[2.0])).unwrap().unwrap();
        assert_eq!((s.attr_index, s.split_value, s.new_side), (0, 3.5, NewSide::Left));
        assert_eq!(sat_split(&bx(&[0.0], &[5.0]), &bx(&[3.0], &[8.0])).unwrap(), None);
        let s = sat_split(&bx(&[0.0, 0.0], &[2.0, 9.0]), &bx(&[5.0, 0.0], &[7.0, 9.0])).unwrap().unwrap();
        assert_eq!(s.attr_index, 0);
        let other_axes = Aabb::new(vec![0.0], vec![1.0], vec![3]).unwrap();
        assert!(sat_split(&bx(&[0.0], &[1.0]), &other_axes).is_err());
    }

    #[test]
    fn adjacent_floats_still_separate() {
        let lo = 1.0f64;
        let hi = lo.next_up();
        let s = sat_split(&bx(&[0.0], &[lo]), &bx(&[hi], &[2.0])).unwrap().unwrap();
        assert!(lo <= s.split_value && s.split_value < hi);
    }

    fn batch(s: &Arc<Schema>, xs: &[(f64, ClassId)]) -> Batch {
        Batch::new(s.clone(), xs.iter().map(|&(x, c)| rec(&[x], c)).collect(), 1).unwrap()
    }

    #[test]
    fn isat_disjoint_adds_separating_root() {
        let s = schema(1);
        let old = DecisionTree::leaf(&[rec(&[0.0], 0), rec(&[2.0], 0)], &s);
        let b = batch(&s, &[(5.0, 1), (6.0, 1), (7.0, 1)]);
        let out = isat_expand(old, &b);
        assert!(matches!(out.outcome, IsatOutcome::Disjoint(sp) if sp.split_value == 3.5 && sp.new_side == NewSide::Right));
        match out.tree.root() {
            Node::Internal { test, left, right, .. } => {
                assert_eq!(*test, SplitTest::numeric(0, 3.5));
                assert!(matches!(**left, Node::Leaf(ref l) if l.leaf_id == 0));
                assert!(matches!(**right, Node::Leaf(ref l) if l.majority == 1 && l.train_size == 3));
            }
            _ => panic!("expected a new root"),
        }
        assert_eq!(out.fresh_leaves, vec![1]);
    }

    #[test]
    fn isat_overlap_uses_old_boundary() {
        let s = schema(1);
        let old = DecisionTree::leaf(&[rec(&[0.0], 0), rec(&[5.0], 0)], &s);
        let b = batch(&s, &[(3.0, 0), (4.0, 1), (6.0, 1), (8.0, 1)]);
        let out = isat_expand(old, &b);
        assert_eq!(
            out.outcome,
            IsatOutcome::Overlap {
                upper: Some(SplitTest::numeric(0, 5.0)),
                lower: None
            }
        );
        assert_eq!(out.tree.route(&rec(&[5.0], 0)), 0);
        assert_eq!(out.tree.route(&rec(&[4.0], 0)), 0);
        assert_eq!(out.tree.route(&rec(&[6.0], 0)), out.fresh_leaves[0]);
    }

    #[test]
    fn isat_overlap_both_directions_keeps_old_region() {
        let s = schema(1);
        let old = DecisionTree::leaf(&[rec(&[2.0], 0), rec(&[5.0], 0)], &s);
        let b = batch(&s, &[(0.0, 1), (3.0, 0), (8.0, 1)]);
        let out = isat_expand(old, &b);
        assert_eq!(out.fresh_leaves.len(), 2);
        assert_eq!(out.tree.route(&rec(&[2.0], 0)), 0);
        assert_eq!(out.tree.route(&rec(&[5.0], 0)), 0);
        assert_eq!(out.tree.route(&rec(&[1.9], 0)), out.fresh_leaves[1]);
        assert_eq!(out.tree.route(&rec(&[5.1], 0)), out.fresh_leaves[0]);
    }

    #[test]
    fn isat_contained_is_noop() {
        let s = schema(1);
        let old = DecisionTree::leaf(&[rec(&[0.0], 0), rec(&[10.0], 0)], &s);
        let before = old.clone();
        let out = isat_expand(old, &batch(&s, &[(3.0, 1), (4.0, 1)]));
        assert_eq!(out.outcome, IsatOutcome::FullyContained);
        assert_eq!(out.tree, before);
        assert!(out.fresh_leaves.is_empty());
    }
}
