//! The three-forest incremental learner.
//!
//! A permanent forest (PF) is repaired on every batch and keeps all knowledge.
//! An active forest (AF) is repaired while its perturbed-leaf ratio stays at
//! or below `theta`; once it does not, batches go into a window of size
//! `gamma` and a temporary forest (TF) is grown from that window. When the
//! drift counter exceeds `lambda` the TF replaces the AF.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{Batch, ClassId, Record, Schema};
use crate::error::{Error, Result};
use crate::repair::{
    find_perturbed_leaves, leaf_confidences, perturbed_ratio, repair_forest, LeafStatsTable, SplitStrategy,
};
use crate::rng::derive_seed;
use crate::tree::{build_forest, Forest, ForestMode, InductionParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdfParams {
    /// Drift threshold: the AF is replaced once `cdf > lambda`.
    pub lambda: u32,
    /// Repairable threshold on the perturbed-leaf ratio.
    pub theta: f64,
    /// Confidence drop tolerated before a leaf counts as perturbed.
    pub epsilon: f64,
    /// Window size in batches.
    pub gamma: usize,
    pub ensemble_size: usize,
    pub mode: ForestMode,
    pub split_strategy: SplitStrategy,
    pub induction: InductionParams,
    /// With `false` the window and temporary forest are switched off and the
    /// AF is only ever repaired.
    pub temporary_forest: bool,
    pub seed: u64,
}

impl Default for AdfParams {
    fn default() -> Self {
        AdfParams {
            lambda: 3,
            theta: 0.4,
            epsilon: 0.02,
            gamma: 3,
            ensemble_size: 10,
            mode: ForestMode::RfStyle,
            split_strategy: SplitStrategy::Isat,
            induction: InductionParams::default(),
            temporary_forest: true,
            seed: 0,
        }
    }
}

impl AdfParams {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 1 {
            return Err(Error::Config("lambda must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        if self.gamma < 1 {
            return Err(Error::Config("gamma must be at least 1".into()));
        }
        if self.ensemble_size < 1 {
            return Err(Error::Config("ensemble size must be at least 1".into()));
        }
        if self.induction.min_leaf_size < 1 {
            return Err(Error::Config("minimum leaf size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ForestRole {
    #[serde(rename = "PF")]
    Pf,
    #[serde(rename = "AF")]
    Af,
    #[serde(rename = "TF")]
    Tf,
}

impl fmt::Display for ForestRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ForestRole::Pf => "PF",
            ForestRole::Af => "AF",
            ForestRole::Tf => "TF",
        })
    }
}

impl FromStr for ForestRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PF" => Ok(ForestRole::Pf),
            "AF" => Ok(ForestRole::Af),
            "TF" => Ok(ForestRole::Tf),
            _ => Err(Error::Config(format!("unknown forest role `{s}`"))),
        }
    }
}

/// What happened to the active forest on one batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AfAction {
    Built,
    Repaired,
    /// Not repairable; left as is.
    Kept,
    /// Replaced by the temporary forest.
    Replaced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TfAction {
    Untouched,
    Discarded,
    Built,
    Repaired,
    Rebuilt,
}

/// Per-batch trace of the controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub batch_id: u64,
    pub theta_p: Option<f64>,
    pub theta_a: Option<f64>,
    pub theta_t: Option<f64>,
    pub af: AfAction,
    pub tf: TfAction,
    pub cdf: u32,
    pub window_len: usize,
    pub recommendation: ForestRole,
}

impl BatchReport {
    pub fn promoted(&self) -> bool {
        self.af == AfAction::Replaced
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdfState {
    pub params: AdfParams,
    pub schema: Option<Arc<Schema>>,
    pub pf: Option<Forest>,
    pub af: Option<Forest>,
    pub tf: Option<Forest>,
    pub pf_stats: Option<LeafStatsTable>,
    pub af_stats: Option<LeafStatsTable>,
    pub tf_stats: Option<LeafStatsTable>,
    /// Oldest first.
    pub window: VecDeque<Batch>,
    pub cdf: u32,
    pub last_recommendation: ForestRole,
    pub batches_seen: u64,
    /// Number of forests built so far; seeds the next build.
    pub builds: u64,
}

/// True once the drift counter strictly exceeds `lambda`.
pub fn detect_scd(cdf: u32, lambda: u32) -> bool {
    cdf > lambda
}

/// Drops the oldest batch when the window is full, then appends `batch`.
pub fn update_window(window: &mut VecDeque<Batch>, batch: Batch, gamma: usize) {
    while !window.is_empty() && window.len() >= gamma {
        window.pop_front();
    }
    window.push_back(batch);
}

pub const CHECKPOINT_FORMAT: &str = "adforest.checkpoint/1";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    state: AdfState,
}

impl AdfState {
    pub fn new(params: AdfParams) -> Result<Self> {
        params.validate()?;
        Ok(AdfState {
            params,
            schema: None,
            pf: None,
            af: None,
            tf: None,
            pf_stats: None,
            af_stats: None,
            tf_stats: None,
            window: VecDeque::new(),
            cdf: 0,
            last_recommendation: ForestRole::Pf,
            batches_seen: 0,
            builds: 0,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.pf.is_some()
    }

    pub fn forest(&self, role: ForestRole) -> Option<&Forest> {
        match role {
            ForestRole::Pf => self.pf.as_ref(),
            ForestRole::Af => self.af.as_ref(),
            ForestRole::Tf => self.tf.as_ref(),
        }
    }

    fn build(&mut self, batch: &Batch) -> Result<Forest> {
        let mut induction = self.params.induction;
        induction.rng_seed = derive_seed(self.params.seed, "forest", self.builds);
        self.builds += 1;
        build_forest(batch, self.params.ensemble_size, self.params.mode, &induction)
    }

    fn repair(&self, forest: &Forest, stats: &LeafStatsTable, batch: &Batch) -> Result<(f64, Forest, LeafStatsTable)> {
        let f = find_perturbed_leaves(batch, forest, self.params.epsilon, stats)?;
        let ratio = perturbed_ratio(&f)?;
        let (forest, stats) = repair_forest(forest, batch, stats, &f, self.params.theta, self.params.split_strategy)?;
        Ok((ratio, forest, stats))
    }

    /// Runs one step of the controller on a labeled batch and returns the
    /// successor state. `self` is left untouched, so a failed step leaves
    /// nothing half-applied.
    pub fn learn_batch(&self, batch: &Batch) -> Result<(AdfState, BatchReport)> {
        self.params.validate()?;
        if batch.is_empty() || !batch.is_labeled() {
            return Err(Error::InvalidInput(format!("batch {} must be non-empty and labeled", batch.batch_id)));
        }
        let schema = match &self.schema {
            Some(s) => Arc::new(s.merge(&batch.schema)?),
            None => Arc::clone(&batch.schema),
        };
        let mut next = self.clone();
        next.schema = Some(schema);
        next.batches_seen += 1;
        let mut report = BatchReport {
            batch_id: batch.batch_id,
            theta_p: None,
            theta_a: None,
            theta_t: None,
            af: AfAction::Kept,
            tf: TfAction::Untouched,
            cdf: 0,
            window_len: 0,
            recommendation: ForestRole::Pf,
        };

        let (Some(pf), Some(af)) = (&self.pf, &self.af) else {
            let pf = next.build(batch)?;
            let stats = leaf_confidences(&pf, batch);
            next.af = Some(pf.clone());
            next.af_stats = Some(stats.clone());
            next.pf = Some(pf);
            next.pf_stats = Some(stats);
            report.af = AfAction::Built;
            return Ok(next.finish(batch, report));
        };
        let pf_stats = self.pf_stats.as_ref().ok_or_else(|| missing("pf_stats"))?;
        let af_stats = self.af_stats.as_ref().ok_or_else(|| missing("af_stats"))?;

        let (ratio, pf, stats) = self.repair(pf, pf_stats, batch)?;
        report.theta_p = Some(ratio);
        next.pf = Some(pf);
        next.pf_stats = Some(stats);

        let f_a = find_perturbed_leaves(batch, af, self.params.epsilon, af_stats)?;
        let theta_a = perturbed_ratio(&f_a)?;
        report.theta_a = Some(theta_a);
        if theta_a <= self.params.theta {
            let (af, stats) = repair_forest(af, batch, af_stats, &f_a, self.params.theta, self.params.split_strategy)?;
            next.af = Some(af);
            next.af_stats = Some(stats);
            report.af = AfAction::Repaired;
            next.cdf = 0;
            if next.tf.take().is_some() {
                report.tf = TfAction::Discarded;
            }
            next.tf_stats = None;
            return Ok(next.finish(batch, report));
        }
        if !self.params.temporary_forest {
            return Ok(next.finish(batch, report));
        }

        update_window(&mut next.window, batch.clone(), self.params.gamma);
        next.cdf += 1;
        let union = Batch::concat(&next.window, batch.batch_id)?;

        let Some(tf) = &self.tf else {
            let tf = next.build(&union)?;
            next.tf_stats = Some(leaf_confidences(&tf, &union));
            next.tf = Some(tf);
            report.tf = TfAction::Built;
            return Ok(next.finish(batch, report));
        };
        let tf_stats = self.tf_stats.as_ref().ok_or_else(|| missing("tf_stats"))?;
        let f_t = find_perturbed_leaves(batch, tf, self.params.epsilon, tf_stats)?;
        let theta_t = perturbed_ratio(&f_t)?;
        report.theta_t = Some(theta_t);
        if theta_t <= self.params.theta {
            let (tf, stats) = repair_forest(tf, batch, tf_stats, &f_t, self.params.theta, self.params.split_strategy)?;
            next.tf = Some(tf);
            next.tf_stats = Some(stats);
            report.tf = TfAction::Repaired;
        } else {
            let tf = next.build(&union)?;
            let stats = leaf_confidences(&tf, &union);
            report.tf = TfAction::Rebuilt;
            if detect_scd(next.cdf, self.params.lambda) {
                next.af = Some(tf);
                next.af_stats = Some(stats);
                next.tf = None;
                next.tf_stats = None;
                next.cdf = 0;
                report.af = AfAction::Replaced;
            } else {
                next.tf = Some(tf);
                next.tf_stats = Some(stats);
            }
        }
        Ok(next.finish(batch, report))
    }

    fn finish(mut self, batch: &Batch, mut report: BatchReport) -> (AdfState, BatchReport) {
        let role = select_best_forest(&self, batch).unwrap_or(ForestRole::Pf);
        self.last_recommendation = role;
        report.recommendation = role;
        report.cdf = self.cdf;
        report.window_len = self.window.len();
        (self, report)
    }

    /// In-place variant of [`AdfState::learn_batch`].
    pub fn learn(&mut self, batch: &Batch) -> Result<BatchReport> {
        let (next, report) = self.learn_batch(batch)?;
        *self = next;
        Ok(report)
    }

    /// Majority vote of the recommended forest.
    pub fn predict(&self, record: &Record) -> Result<ClassId> {
        let forest = self
            .forest(self.last_recommendation)
            .or(self.pf.as_ref())
            .ok_or(Error::NotTrained)?;
        Ok(forest.classify(record).0)
    }

    pub fn to_checkpoint(&self) -> Result<String> {
        let doc = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            state: self.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_checkpoint(text: &str) -> Result<AdfState> {
        let doc: Checkpoint = serde_json::from_str(text)?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidInput(format!("unknown checkpoint format `{}`", doc.format)));
        }
        doc.state.check()?;
        Ok(doc.state)
    }

    fn check(&self) -> Result<()> {
        self.params.validate()?;
        if self.pf.is_some() != self.af.is_some() || self.pf.is_some() != self.pf_stats.is_some() {
            return Err(Error::InvalidState("permanent and active forests must exist together".into()));
        }
        if self.tf.is_some() != self.tf_stats.is_some() {
            return Err(Error::InvalidState("temporary forest and its statistics must exist together".into()));
        }
        if self.window.len() > self.params.gamma {
            return Err(Error::InvalidState("window exceeds gamma".into()));
        }
        Ok(())
    }
}

fn missing(what: &str) -> Error {
    Error::InvalidState(format!("{what} missing for a trained forest"))
}

/// Role of the forest with the best accuracy on `batch`; ties prefer PF, then AF.
pub fn select_best_forest(state: &AdfState, batch: &Batch) -> Result<ForestRole> {
    if state.pf.is_none() {
        return Err(Error::NotTrained);
    }
    let mut best: Option<(ForestRole, f64)> = None;
    for role in [ForestRole::Pf, ForestRole::Af, ForestRole::Tf] {
        if let Some(f) = state.forest(role) {
            let acc = f.accuracy_on(batch);
            if best.map_or(true, |(_, b)| acc > b) {
                best = Some((role, acc));
            }
        }
    }
    Ok(best.expect("pf present").0)
}
