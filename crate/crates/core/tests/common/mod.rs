#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::{Arc, Mutex, MutexGuard};

use adforest::adf::{AdfParams, AdfState};
use adforest::dataset::{Attribute, Batch, ClassId, Record, Schema, Value};
use adforest::evalstat::StreamStep;
use adforest::streamgen::StreamManifest;
use adforest::tree::{Node, SplitKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

/// Timing-sensitive tests hold this so they never share the CPU.
pub fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes straight to the process stdout so the line shows up even when
/// the harness captures test output.
pub fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

pub fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    say(&format!("[{}] criterion {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" }));
}

pub fn steps<'a>(batches: &'a [(Batch, Batch)], manifest: &StreamManifest) -> Vec<StreamStep<'a>> {
    batches
        .iter()
        .zip(&manifest.batches)
        .map(|((train, test), spec)| StreamStep {
            label: format!("b{:02}", spec.batch_id),
            scenario: spec.scenario.to_string(),
            train,
            test,
        })
        .collect()
}

pub fn test_accuracy(adf: &AdfState, test: &Batch) -> f64 {
    let hits = test
        .records
        .iter()
        .filter(|r| adf.predict(&r.unlabeled()).ok() == r.label)
        .count();
    hits as f64 / test.len() as f64
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn adf(seed: u64) -> AdfParams {
    AdfParams { seed, ..AdfParams::default() }
}

/// Leaf a record reaches, walked without the library's routing code:
/// `<=` goes left for thresholds, equality goes left for categories and a
/// missing value follows the child that saw more training records.
pub fn walk(root: &Node, r: &Record) -> u32 {
    let mut node = root;
    loop {
        match node {
            Node::Leaf(l) => return l.leaf_id,
            Node::Internal { test, left, right, .. } => {
                let go_left = match (test.kind, r.values[test.attr_index]) {
                    (SplitKind::NumericThreshold(t), Value::Num(x)) => x <= t,
                    (SplitKind::CategoricalEquals(c), Value::Cat(v)) => v == c,
                    _ => left.train_size() >= right.train_size(),
                };
                node = if go_left { left } else { right };
            }
        }
    }
}

pub fn majorities(root: &Node, out: &mut BTreeMap<u32, ClassId>) {
    match root {
        Node::Leaf(l) => {
            out.insert(l.leaf_id, l.majority);
        }
        Node::Internal { left, right, .. } => {
            majorities(left, out);
            majorities(right, out);
        }
    }
}

/// Random labelled batch over `dims` numeric attributes and one categorical
/// one. Labels follow axis thresholds with some label noise; a few values
/// are missing.
pub struct RandomTask {
    pub schema: Arc<Schema>,
    pub dims: usize,
    pub classes: u32,
    cuts: Vec<f64>,
}

impl RandomTask {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let dims = rng.gen_range(2..=4);
        let classes = rng.gen_range(2..=4u32);
        let mut attrs: Vec<Attribute> = (0..dims).map(|j| Attribute::numeric(format!("x{j}"))).collect();
        attrs.push(Attribute::categorical("tint", ["r", "g", "b"]));
        attrs.push(Attribute::categorical("class", Vec::<String>::new()));
        let names = (0..classes).map(|c| format!("c{c}")).collect();
        let schema = Arc::new(Schema::new(attrs, dims + 1, names).unwrap());
        let cuts = (0..classes).map(|_| rng.gen_range(1.0..9.0)).collect();
        RandomTask { schema, dims, classes, cuts }
    }

    pub fn batch(&self, rng: &mut ChaCha8Rng, n: usize, noise: f64, id: u64) -> Batch {
        let records = (0..n)
            .map(|_| {
                let mut values: Vec<Value> = (0..self.dims)
                    .map(|_| {
                        if rng.gen_bool(0.03) {
                            Value::Missing
                        } else {
                            Value::Num((rng.gen_range(0.0..10.0f64) * 4.0).round() / 4.0)
                        }
                    })
                    .collect();
                let tint = rng.gen_range(0..3u32);
                values.push(Value::Cat(tint));
                values.push(Value::Missing);
                let x0 = values[0].as_num().unwrap_or(5.0);
                let mut label = self.cuts.iter().filter(|&&c| x0 > c).count() as u32 % self.classes;
                if tint == 2 && self.classes > 2 {
                    label = (label + 1) % self.classes;
                }
                if rng.gen_bool(noise) {
                    label = rng.gen_range(0..self.classes);
                }
                Record::new(values, Some(label))
            })
            .collect();
        Batch::new(self.schema.clone(), records, id).unwrap()
    }
}
