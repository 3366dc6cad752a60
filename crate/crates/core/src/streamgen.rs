//! Synthetic streams: the rule-based House dataset, the 34-batch scenario
//! simulator, its 28-batch rearrangement and a stream with a sustained label
//! shift.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{class_scenario, Attribute, Batch, ClassId, Record, Scenario, Schema, Value};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, substream, StreamRng};
use crate::tree::{build_forest, ForestMode, InductionParams};

pub const HOUSE_CLASSES: [&str; 7] = ["A", "B", "C", "D", "E", "F", "G"];
const COLORS: [&str; 3] = ["red", "green", "blue"];
const SIZES: [&str; 4] = ["s", "m", "l", "xl"];
const FLAGS: [&str; 2] = ["yes", "no"];

pub fn house_schema() -> Schema {
    let mut attrs: Vec<Attribute> = (0..7).map(|i| Attribute::numeric(format!("x{i}"))).collect();
    attrs.push(Attribute::categorical("color", COLORS));
    attrs.push(Attribute::categorical("size", SIZES));
    attrs.push(Attribute::categorical("garage", FLAGS));
    attrs.push(Attribute::categorical("class", Vec::<String>::new()));
    Schema::new(attrs, 10, HOUSE_CLASSES.iter().map(|s| s.to_string()).collect()).expect("static schema")
}

/// The hidden labelling rule. Classes A-D live at `x0 < 5.8` and are banded
/// by `x1`; E-G live above and are banded by `x2`.
fn house_label(x: &[f64; 7], color: u32, size: u32) -> ClassId {
    if x[0] < 5.8 {
        let base = if x[1] < 4.138 {
            0
        } else if x[1] < 6.897 {
            1
        } else if x[1] < 8.793 {
            2
        } else {
            3
        };
        match base {
            0 | 1 if color == 2 && x[3] > 7.5 => 1 - base,
            b => b,
        }
    } else {
        let base = if x[2] < 4.762 {
            4
        } else if x[2] < 8.095 {
            5
        } else {
            6
        };
        match base {
            4 | 5 if size == 3 && x[4] < 2.5 => 9 - base,
            b => b,
        }
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// `n` House records with 5% label noise.
pub fn generate_house_dataset(n: usize, seed: u64) -> Result<Batch> {
    generate_house_with_noise(n, 0.05, seed)
}

/// House records where a `noise` share of labels is redrawn uniformly among
/// the classes of the record's own `x0` region.
pub fn generate_house_with_noise(n: usize, noise: f64, seed: u64) -> Result<Batch> {
    if n < 100 {
        return Err(Error::InvalidInput(format!("House dataset needs at least 100 records, got {n}")));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::InvalidInput(format!("noise must lie in [0, 1], got {noise}")));
    }
    let mut rng = substream(seed, "house", 0);
    let records = (0..n)
        .map(|_| {
            let mut x = [0.0; 7];
            for v in &mut x {
                *v = round2(rng.gen_range(0.0..10.0));
            }
            let color = rng.gen_range(0..3u32);
            let size = rng.gen_range(0..4u32);
            let garage = rng.gen_range(0..2u32);
            let mut label = house_label(&x, color, size);
            if rng.gen::<f64>() < noise {
                label = if label < 4 { rng.gen_range(0..4) } else { rng.gen_range(4..7) };
            }
            let mut values: Vec<Value> = x.iter().map(|&v| Value::Num(v)).collect();
            values.extend([Value::Cat(color), Value::Cat(size), Value::Cat(garage), Value::Missing]);
            Record::new(values, Some(label))
        })
        .collect();
    Batch::new(Arc::new(house_schema()), records, 0)
}

/// Named block of consecutive batches sharing one sampling rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Block {
    Mkc1,
    Mkc2,
    Skc,
    Suc,
    Muc1,
    Muc2,
    Mkuc1,
    Mkuc2,
    Mkuc3,
}

impl Block {
    pub fn scenario(self) -> Scenario {
        match self {
            Block::Mkc1 | Block::Mkc2 => Scenario::Mkc,
            Block::Skc => Scenario::Skc,
            Block::Suc => Scenario::Suc,
            Block::Muc1 | Block::Muc2 => Scenario::Muc,
            Block::Mkuc1 | Block::Mkuc2 | Block::Mkuc3 => Scenario::Mkuc,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Block::Mkc1 => "MKC-1",
            Block::Mkc2 => "MKC-2",
            Block::Skc => "SKC",
            Block::Suc => "SUC",
            Block::Muc1 => "MUC-1",
            Block::Muc2 => "MUC-2",
            Block::Mkuc1 => "MKUC-1",
            Block::Mkuc2 => "MKUC-2",
            Block::Mkuc3 => "MKUC-3",
        }
    }
}

/// Block of every batch in the 34-batch schedule.
pub const STANDARD_SCHEDULE: [(Block, usize); 9] = [
    (Block::Mkc1, 4),
    (Block::Mkc2, 4),
    (Block::Skc, 3),
    (Block::Suc, 3),
    (Block::Muc1, 4),
    (Block::Muc2, 4),
    (Block::Mkuc1, 4),
    (Block::Mkuc2, 4),
    (Block::Mkuc3, 4),
];

/// The 28-batch rearranged schedule.
pub const REARRANGED_SCHEDULE: [(Block, usize); 7] = [
    (Block::Mkc1, 4),
    (Block::Mkc2, 4),
    (Block::Mkuc1, 4),
    (Block::Mkuc2, 4),
    (Block::Muc1, 4),
    (Block::Muc2, 4),
    (Block::Mkuc3, 4),
];

pub fn expand_schedule(schedule: &[(Block, usize)]) -> Vec<Block> {
    schedule.iter().flat_map(|&(b, n)| std::iter::repeat(b).take(n)).collect()
}

/// Row pools that batches are drawn from. Row indices refer to the source dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourcePools {
    /// Classes of the first and second half.
    pub half_classes: [Vec<ClassId>; 2],
    /// All rows of each half.
    pub half_rows: [Vec<usize>; 2],
    /// Rows in the two largest leaves of each half's guide tree.
    pub large_leaf_rows: [Vec<usize>; 2],
    /// Rows in the remaining leaves.
    pub other_leaf_rows: [Vec<usize>; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub batch_id: u64,
    pub block: Block,
    pub scenario: Scenario,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    /// Rows held back from training so later test sets can use them.
    pub reserve_rows: Vec<usize>,
    /// Set when a quota had to be topped up by drawing with replacement.
    pub topped_up: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamManifest {
    pub seed: u64,
    pub dataset_digest: String,
    pub dataset_rows: usize,
    pub batch_size: usize,
    pub pools: SourcePools,
    pub batches: Vec<BatchSpec>,
}

impl StreamManifest {
    /// Classes a learner has seen before the first unknown-class batch.
    pub fn known_classes(&self) -> BTreeSet<ClassId> {
        self.pools.half_classes[0].iter().copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub seed: u64,
    /// Records per batch before the train/test split; defaults to a fiftieth
    /// of the dataset.
    pub batch_size: Option<usize>,
}

/// Digest of a dataset's contents, used to pair manifests with their source.
pub fn dataset_digest(dataset: &Batch) -> String {
    let text = serde_json::to_string(&dataset.records).expect("records serialize");
    format!("{:016x}{}", derive_seed(0, &text, dataset.records.len() as u64), dataset.schema.digest())
}

/// Classes ordered by descending frequency (ties by id), dealt alternately
/// into two halves.
fn split_classes(dataset: &Batch) -> [Vec<ClassId>; 2] {
    let mut freq: BTreeMap<ClassId, usize> = BTreeMap::new();
    for r in &dataset.records {
        if let Some(c) = r.label {
            *freq.entry(c).or_default() += 1;
        }
    }
    let mut order: Vec<(ClassId, usize)> = freq.into_iter().collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut halves = [Vec::new(), Vec::new()];
    for (i, (c, _)) in order.into_iter().enumerate() {
        halves[i % 2].push(c);
    }
    halves
}

fn guide_pools(dataset: &Batch, rows: &[usize], seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let half = dataset.subset(rows, 0);
    let params = InductionParams {
        min_leaf_size: (rows.len() / 50).max(20),
        max_depth: 4,
        attrs_per_split: None,
        rng_seed: seed,
    };
    let tree = &build_forest(&half, 1, ForestMode::SysForStyle, &params)?.trees[0];
    let mut by_leaf: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (&row, r) in rows.iter().zip(&half.records) {
        by_leaf.entry(tree.route(r)).or_default().push(row);
    }
    let mut leaves: Vec<(u32, Vec<usize>)> = by_leaf.into_iter().collect();
    leaves.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    let mut large = Vec::new();
    let mut other = Vec::new();
    for (i, (_, rs)) in leaves.into_iter().enumerate() {
        if i < 2 {
            large.extend(rs);
        } else {
            other.extend(rs);
        }
    }
    large.sort_unstable();
    other.sort_unstable();
    Ok((large, other))
}

fn build_pools(dataset: &Batch, seed: u64) -> Result<SourcePools> {
    let classes = dataset.class_set();
    if classes.len() < 6 {
        return Err(Error::UnsupportedDataset(format!(
            "scenario simulation needs at least 6 class values, found {}",
            classes.len()
        )));
    }
    let half_classes = split_classes(dataset);
    let mut half_rows = [Vec::new(), Vec::new()];
    for (i, r) in dataset.records.iter().enumerate() {
        if let Some(c) = r.label {
            let h = usize::from(!half_classes[0].contains(&c));
            half_rows[h].push(i);
        }
    }
    let (l0, o0) = guide_pools(dataset, &half_rows[0], derive_seed(seed, "guide", 0))?;
    let (l1, o1) = guide_pools(dataset, &half_rows[1], derive_seed(seed, "guide", 1))?;
    Ok(SourcePools {
        half_classes,
        half_rows,
        large_leaf_rows: [l0, l1],
        other_leaf_rows: [o0, o1],
    })
}

struct Drawer<'a> {
    labels: &'a [Option<ClassId>],
    used: Vec<bool>,
    rng: StreamRng,
}

impl Drawer<'_> {
    /// Draws `k` rows from `pool`, preferring unused rows. Returns the fresh
    /// rows and any top-up rows drawn with replacement from `pool` minus
    /// `exclude`.
    fn draw(&mut self, pool: &[usize], k: usize, exclude: &BTreeSet<usize>, batch: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut avail: Vec<usize> = pool.iter().copied().filter(|&r| !self.used[r]).collect();
        let take = k.min(avail.len());
        let (chosen, _) = avail.partial_shuffle(&mut self.rng, take);
        let fresh = chosen.to_vec();
        for &r in &fresh {
            self.used[r] = true;
        }
        let mut topup = Vec::new();
        if take < k {
            let chosen_set: BTreeSet<usize> = fresh.iter().copied().collect();
            let candidates: Vec<usize> = pool
                .iter()
                .copied()
                .filter(|r| !exclude.contains(r) && !chosen_set.contains(r))
                .collect();
            if candidates.is_empty() {
                return Err(Error::Quota {
                    batch,
                    message: format!("needed {k} rows from a pool with none left"),
                });
            }
            topup = (0..k - take).map(|_| *candidates.choose(&mut self.rng).unwrap()).collect();
        }
        Ok((fresh, topup))
    }

    fn rows_of_class(&self, pool: &[usize], c: ClassId) -> Vec<usize> {
        pool.iter().copied().filter(|&r| self.labels[r] == Some(c)).collect()
    }

    /// Class of the half with most unused rows.
    fn fullest_class(&self, pool: &[usize], classes: &[ClassId], taken: &BTreeSet<ClassId>) -> Option<ClassId> {
        classes
            .iter()
            .copied()
            .filter(|c| !taken.contains(c))
            .max_by_key(|&c| {
                let n = self.rows_of_class(pool, c).iter().filter(|&&r| !self.used[r]).count();
                (n, std::cmp::Reverse(c))
            })
    }
}

fn quota(total: usize, share: f64) -> usize {
    (total as f64 * share).round() as usize
}

fn generate(dataset: &Batch, pools: SourcePools, schedule: &[Block], seed: u64, batch_size: usize, stream: &str) -> Result<StreamManifest> {
    let labels: Vec<Option<ClassId>> = dataset.records.iter().map(|r| r.label).collect();
    let mut drawer = Drawer {
        labels: &labels,
        used: vec![false; dataset.len()],
        rng: substream(seed, stream, 0),
    };
    let mut specs: Vec<BatchSpec> = Vec::with_capacity(schedule.len());
    let mut single_taken: [BTreeSet<ClassId>; 2] = [BTreeSet::new(), BTreeSet::new()];
    for (i, &block) in schedule.iter().enumerate() {
        let batch_no = i + 1;
        let prior_reserve: Vec<usize> = specs.iter().rev().take(2).flat_map(|s| s.reserve_rows.iter().copied()).collect();
        let exclude: BTreeSet<usize> = prior_reserve.iter().copied().collect();
        let mut parts: Vec<(&[usize], usize)> = Vec::new();
        let single: Vec<usize>;
        match block {
            Block::Skc | Block::Suc => {
                let h = usize::from(block == Block::Suc);
                let c = drawer
                    .fullest_class(&pools.half_rows[h], &pools.half_classes[h], &single_taken[h])
                    .or_else(|| pools.half_classes[h].first().copied())
                    .ok_or_else(|| Error::Quota {
                        batch: batch_no,
                        message: "half has no classes".into(),
                    })?;
                single_taken[h].insert(c);
                single = drawer.rows_of_class(&pools.half_rows[h], c);
                parts.push((&single, batch_size));
            }
            Block::Mkc1 | Block::Mkc2 | Block::Muc1 | Block::Muc2 => {
                let h = usize::from(matches!(block, Block::Muc1 | Block::Muc2));
                let large_share = if matches!(block, Block::Mkc1 | Block::Muc1) { 0.25 } else { 0.75 };
                let k = quota(batch_size, large_share);
                parts.push((&pools.large_leaf_rows[h], k));
                parts.push((&pools.other_leaf_rows[h], batch_size - k));
            }
            Block::Mkuc1 | Block::Mkuc2 | Block::Mkuc3 => {
                let first_share = match block {
                    Block::Mkuc1 => 0.75,
                    Block::Mkuc2 => 0.25,
                    _ => 0.5,
                };
                let k = quota(batch_size, first_share);
                parts.push((&pools.half_rows[0], k));
                parts.push((&pools.half_rows[1], batch_size - k));
            }
        }
        let mut fresh = Vec::new();
        let mut topup = Vec::new();
        for (pool, k) in parts {
            let (f, t) = drawer.draw(pool, k, &exclude, batch_no)?;
            fresh.extend(f);
            topup.extend(t);
        }
        fresh.shuffle(&mut drawer.rng);
        let test_current = if specs.is_empty() { quota(batch_size, 0.2) } else { quota(batch_size, 0.1) };
        let reserve = quota(batch_size, 0.1);
        if fresh.len() < test_current + reserve + 1 {
            return Err(Error::Quota {
                batch: batch_no,
                message: format!("only {} fresh rows for a batch of {batch_size}", fresh.len()),
            });
        }
        let mut test_rows = fresh[..test_current].to_vec();
        let reserve_rows = fresh[test_current..test_current + reserve].to_vec();
        let mut train_rows = fresh[test_current + reserve..].to_vec();
        let topped_up = !topup.is_empty();
        train_rows.extend(topup);
        if !specs.is_empty() {
            let want = quota(batch_size, 0.2) - test_current;
            let mut prior = prior_reserve;
            let take = want.min(prior.len());
            let (chosen, _) = prior.partial_shuffle(&mut drawer.rng, take);
            test_rows.extend_from_slice(chosen);
        }
        specs.push(BatchSpec {
            batch_id: batch_no as u64,
            block,
            scenario: block.scenario(),
            train_rows,
            test_rows,
            reserve_rows,
            topped_up,
        });
    }
    Ok(StreamManifest {
        seed,
        dataset_digest: dataset_digest(dataset),
        dataset_rows: dataset.len(),
        batch_size,
        pools,
        batches: specs,
    })
}

/// 34-batch scenario stream with default batch size.
pub fn simulate_batches(dataset: &Batch, seed: u64) -> Result<(Vec<(Batch, Batch)>, StreamManifest)> {
    simulate_batches_with(dataset, &SimulationConfig { seed, batch_size: None })
}

pub fn simulate_batches_with(dataset: &Batch, config: &SimulationConfig) -> Result<(Vec<(Batch, Batch)>, StreamManifest)> {
    let manifest = simulate_manifest(dataset, config)?;
    let batches = materialize(dataset, &manifest)?;
    Ok((batches, manifest))
}

pub fn simulate_manifest(dataset: &Batch, config: &SimulationConfig) -> Result<StreamManifest> {
    let batch_size = config.batch_size.unwrap_or(dataset.len() / 50);
    if batch_size < 20 {
        return Err(Error::UnsupportedDataset(format!(
            "batch size {batch_size} is too small; need at least 20 records per batch"
        )));
    }
    let pools = build_pools(dataset, config.seed)?;
    generate(dataset, pools, &expand_schedule(&STANDARD_SCHEDULE), config.seed, batch_size, "simulation")
}

/// 28-batch variant in the rearranged block order, redrawn from the same pools.
pub fn rearrange_scenarios(manifest: &StreamManifest, dataset: &Batch, seed: u64) -> Result<StreamManifest> {
    check_source(manifest, dataset)?;
    generate(
        dataset,
        manifest.pools.clone(),
        &expand_schedule(&REARRANGED_SCHEDULE),
        seed,
        manifest.batch_size,
        "rearranged",
    )
}

fn check_source(manifest: &StreamManifest, dataset: &Batch) -> Result<()> {
    if manifest.dataset_rows != dataset.len() || manifest.dataset_digest != dataset_digest(dataset) {
        return Err(Error::Stream("manifest was generated from a different dataset".into()));
    }
    Ok(())
}

/// Train and test batches of a manifest.
pub fn materialize(dataset: &Batch, manifest: &StreamManifest) -> Result<Vec<(Batch, Batch)>> {
    check_source(manifest, dataset)?;
    Ok(manifest
        .batches
        .iter()
        .map(|s| (dataset.subset(&s.train_rows, s.batch_id), dataset.subset(&s.test_rows, s.batch_id)))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub records: usize,
    pub batches: usize,
    /// First batch (1-based) carrying the shifted concept.
    pub shift_at: usize,
    pub seed: u64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            records: 20_000,
            batches: 34,
            shift_at: 15,
            seed: 0,
        }
    }
}

/// Label map applied from the shift onward.
pub fn shifted_label(c: ClassId) -> ClassId {
    (c + 3) % HOUSE_CLASSES.len() as ClassId
}

/// House stream cut into equal batches, each with a 20% test share, whose
/// labels are permuted from batch `shift_at` onward.
pub fn drift_stream(config: &DriftConfig) -> Result<Vec<(Batch, Batch)>> {
    if config.batches == 0 || config.records / config.batches < 10 {
        return Err(Error::InvalidInput("drift stream needs at least 10 records per batch".into()));
    }
    let data = generate_house_dataset(config.records, config.seed)?;
    let per = config.records / config.batches;
    let test = per / 5;
    let mut out = Vec::with_capacity(config.batches);
    for b in 0..config.batches {
        let id = b as u64 + 1;
        let mut records: Vec<Record> = data.records[b * per..(b + 1) * per].to_vec();
        if b + 1 >= config.shift_at {
            for r in &mut records {
                r.label = r.label.map(shifted_label);
            }
        }
        let test_part = records.split_off(per - test);
        out.push((
            Batch::new(Arc::clone(&data.schema), records, id)?,
            Batch::new(Arc::clone(&data.schema), test_part, id)?,
        ));
    }
    Ok(out)
}

/// Scenario label of each train batch against `known`.
pub fn scenarios_against(batches: &[(Batch, Batch)], known: &BTreeSet<ClassId>) -> Result<Vec<Scenario>> {
    batches.iter().map(|(train, _)| class_scenario(&train.class_set(), known)).collect()
}
