//! Prequential evaluation, results tables and significance tests.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adf::{AdfParams, AdfState};
use crate::dataset::{Batch, ClassId, Record};
use crate::error::{Error, Result};
use crate::repair::SplitStrategy;
use crate::rng::derive_seed;
use crate::tree::{build_forest, Forest};

/// Fraction of positions where `predictions` and `truths` agree.
pub fn accuracy(predictions: &[ClassId], truths: &[ClassId]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::InvalidInput("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truths.len() as f64)
}

/// Normal-approximation sign test with continuity correction. Ties must be
/// dropped by the caller.
pub fn sign_test(wins: u64, losses: u64) -> Result<f64> {
    let n = wins + losses;
    if n == 0 {
        return Err(Error::UndefinedTest("sign test needs at least one non-tied comparison".into()));
    }
    let n = n as f64;
    Ok((wins as f64 - n / 2.0 - 0.5) / (n.sqrt() / 2.0))
}

const ALPHAS: [f64; 3] = [0.05, 0.025, 0.01];

/// Studentized range quantiles divided by √2, k = 2..=20, infinite degrees of freedom.
const Q_TABLE: [[f64; 19]; 3] = [
    [
        1.960, 2.344, 2.569, 2.728, 2.850, 2.948, 3.031, 3.102, 3.164, 3.219, 3.268, 3.313, 3.354, 3.391, 3.426,
        3.458, 3.489, 3.517, 3.544,
    ],
    [
        2.241, 2.604, 2.817, 2.968, 3.084, 3.177, 3.256, 3.324, 3.383, 3.435, 3.482, 3.525, 3.564, 3.600, 3.634,
        3.665, 3.694, 3.721, 3.747,
    ],
    [
        2.576, 2.913, 3.113, 3.255, 3.364, 3.452, 3.526, 3.590, 3.646, 3.696, 3.741, 3.781, 3.818, 3.853, 3.884,
        3.914, 3.941, 3.967, 3.992,
    ],
];

fn alpha_row(alpha: f64) -> Result<usize> {
    ALPHAS
        .iter()
        .position(|a| (a - alpha).abs() < 1e-12)
        .ok_or_else(|| Error::Config(format!("unsupported significance level {alpha}; use 0.05, 0.025 or 0.01")))
}

/// Critical z of the one-sided sign test.
pub fn z_ref(alpha: f64) -> Result<f64> {
    Ok([1.645, 1.960, 2.326][alpha_row(alpha)?])
}

pub fn nemenyi_q(k: usize, alpha: f64) -> Result<f64> {
    let row = alpha_row(alpha)?;
    if !(2..=20).contains(&k) {
        return Err(Error::Config(format!("Nemenyi test supports 2 to 20 methods, got {k}")));
    }
    Ok(Q_TABLE[row][k - 2])
}

/// Critical difference of mean ranks for `k` methods over `n` blocks.
pub fn nemenyi_cd(k: usize, n: usize, alpha: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("Nemenyi test needs at least one batch".into()));
    }
    let q = nemenyi_q(k, alpha)?;
    Ok(q * ((k * (k + 1)) as f64 / (6.0 * n as f64)).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Cell {
    Ok {
        accuracy: f64,
        train_ms: f64,
        predict_ms: f64,
    },
    Failed {
        message: String,
    },
}

impl Cell {
    pub fn accuracy(&self) -> Option<f64> {
        match self {
            Cell::Ok { accuracy, .. } => Some(*accuracy),
            Cell::Failed { .. } => None,
        }
    }

    pub fn train_ms(&self) -> Option<f64> {
        match self {
            Cell::Ok { train_ms, .. } => Some(*train_ms),
            Cell::Failed { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub methods: Vec<String>,
    /// Batch label and scenario per column.
    pub batches: Vec<(String, String)>,
    /// `cells[method][batch]`.
    pub cells: Vec<Vec<Cell>>,
    pub seed: u64,
    pub params_digest: String,
}

impl ResultsTable {
    pub fn method_index(&self, method: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == method)
    }

    /// Mean accuracy over successful cells.
    pub fn mean_accuracy(&self, method: &str) -> Option<f64> {
        mean(self.cells[self.method_index(method)?].iter().filter_map(Cell::accuracy))
    }

    pub fn mean_train_ms(&self, method: &str) -> Option<f64> {
        mean(self.cells[self.method_index(method)?].iter().filter_map(Cell::train_ms))
    }

    pub fn accuracies(&self, method: &str) -> Result<Vec<f64>> {
        let m = self
            .method_index(method)
            .ok_or_else(|| Error::Config(format!("no method `{method}` in results")))?;
        self.cells[m]
            .iter()
            .enumerate()
            .map(|(b, c)| {
                c.accuracy().ok_or_else(|| Error::MissingCell {
                    method: method.to_owned(),
                    batch: b + 1,
                })
            })
            .collect()
    }

    /// Concatenates the batch columns of several tables with the same methods.
    pub fn pool(tables: &[ResultsTable]) -> Result<ResultsTable> {
        let first = tables
            .first()
            .ok_or_else(|| Error::InvalidInput("nothing to pool".into()))?;
        let mut pooled = ResultsTable {
            methods: first.methods.clone(),
            batches: Vec::new(),
            cells: vec![Vec::new(); first.methods.len()],
            seed: first.seed,
            params_digest: first.params_digest.clone(),
        };
        for t in tables {
            if t.methods != first.methods {
                return Err(Error::InvalidInput("pooled tables must list the same methods".into()));
            }
            pooled
                .batches
                .extend(t.batches.iter().map(|(b, s)| (format!("s{}:{b}", t.seed), s.clone())));
            for (dst, src) in pooled.cells.iter_mut().zip(&t.cells) {
                dst.extend(src.iter().cloned());
            }
        }
        Ok(pooled)
    }

    /// Method × batch accuracy matrix with mean accuracy and mean training time.
    pub fn to_matrix_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_owned()];
        header.extend(self.batches.iter().map(|(b, _)| b.clone()));
        header.extend(["mean_accuracy".to_owned(), "mean_train_ms".to_owned()]);
        w.write_record(&header).map_err(csv_err)?;
        for (m, row) in self.methods.iter().zip(&self.cells) {
            let mut rec = vec![m.clone()];
            rec.extend(row.iter().map(|c| match c.accuracy() {
                Some(a) => format!("{a:.4}"),
                None => "failed".into(),
            }));
            rec.push(fmt_opt(self.mean_accuracy(m), 4));
            rec.push(fmt_opt(self.mean_train_ms(m), 3));
            w.write_record(&rec).map_err(csv_err)?;
        }
        finish_csv(w)
    }

    /// Long format: `method,batch,scenario,accuracy,time_ms`.
    pub fn to_long_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "batch", "scenario", "accuracy", "time_ms"]).map_err(csv_err)?;
        for (m, row) in self.methods.iter().zip(&self.cells) {
            for ((b, s), c) in self.batches.iter().zip(row) {
                let (acc, ms) = match c {
                    Cell::Ok { accuracy, train_ms, .. } => (format!("{accuracy:.6}"), format!("{train_ms:.3}")),
                    Cell::Failed { .. } => ("failed".into(), String::new()),
                };
                w.write_record([m.as_str(), b, s, &acc, &ms]).map_err(csv_err)?;
            }
        }
        finish_csv(w)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidState(format!("csv writer: {e}"))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::InvalidState(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidState(e.to_string()))
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "nan".into(), |x| format!("{x:.digits$}"))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean rank of each method; rank 1 is the most accurate, ties share the
/// average rank.
pub fn mean_ranks(table: &ResultsTable) -> Result<BTreeMap<String, f64>> {
    let acc: Vec<Vec<f64>> = table.methods.iter().map(|m| table.accuracies(m)).collect::<Result<_>>()?;
    let n = table.batches.len();
    if n == 0 {
        return Err(Error::InvalidInput("results table has no batches".into()));
    }
    let mut sums = vec![0.0; table.methods.len()];
    for b in 0..n {
        let col: Vec<f64> = acc.iter().map(|row| row[b]).collect();
        for (i, r) in average_ranks(&col).into_iter().enumerate() {
            sums[i] += r;
        }
    }
    Ok(table
        .methods
        .iter()
        .zip(sums)
        .map(|(m, s)| (m.clone(), s / n as f64))
        .collect())
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignComparison {
    pub method: String,
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    /// `None` when every batch tied.
    pub z: Option<f64>,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NemenyiComparison {
    pub method: String,
    pub rank_difference: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub reference: String,
    pub alpha: f64,
    pub z_ref: f64,
    pub batches: usize,
    pub sign: Vec<SignComparison>,
    pub mean_ranks: BTreeMap<String, f64>,
    pub critical_difference: Option<f64>,
    pub nemenyi: Vec<NemenyiComparison>,
}

/// Sign and Nemenyi tests of `reference` against every other method.
pub fn significance_report(table: &ResultsTable, reference: &str, alpha: f64) -> Result<SignificanceReport> {
    let z_crit = z_ref(alpha)?;
    let base = table.accuracies(reference)?;
    let mut sign = Vec::new();
    for m in table.methods.iter().filter(|m| *m != reference) {
        let other = table.accuracies(m)?;
        let (mut wins, mut losses, mut ties) = (0, 0, 0);
        for (a, b) in base.iter().zip(&other) {
            match a.total_cmp(b) {
                std::cmp::Ordering::Greater => wins += 1,
                std::cmp::Ordering::Less => losses += 1,
                std::cmp::Ordering::Equal => ties += 1,
            }
        }
        let z = sign_test(wins, losses).ok();
        sign.push(SignComparison {
            method: m.clone(),
            wins,
            losses,
            ties,
            z,
            significant: z.is_some_and(|z| z > z_crit),
        });
    }
    let ranks = mean_ranks(table)?;
    let k = table.methods.len();
    let cd = if k >= 2 { Some(nemenyi_cd(k, table.batches.len(), alpha)?) } else { None };
    let nemenyi = table
        .methods
        .iter()
        .filter(|m| *m != reference)
        .map(|m| {
            let d = ranks[m] - ranks[reference];
            NemenyiComparison {
                method: m.clone(),
                rank_difference: d,
                significant: cd.is_some_and(|cd| d > cd),
            }
        })
        .collect();
    Ok(SignificanceReport {
        reference: reference.to_owned(),
        alpha,
        z_ref: z_crit,
        batches: table.batches.len(),
        sign,
        mean_ranks: ranks,
        critical_difference: cd,
        nemenyi,
    })
}

impl fmt::Display for SignificanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "reference: {}  alpha: {}  z_ref: {:.3}  batches: {}", self.reference, self.alpha, self.z_ref, self.batches)?;
        writeln!(f, "sign test")?;
        for s in &self.sign {
            let z = s.z.map_or_else(|| "n/a".into(), |z| format!("{z:.3}"));
            writeln!(
                f,
                "  vs {:<18} wins {:>3}  losses {:>3}  ties {:>3}  z {:>7}  {}",
                s.method,
                s.wins,
                s.losses,
                s.ties,
                z,
                if s.significant { "significant" } else { "not significant" }
            )?;
        }
        let mut line = String::new();
        for (m, r) in &self.mean_ranks {
            let _ = write!(line, " {m}={r:.3}");
        }
        writeln!(f, "mean ranks:{line}")?;
        match self.critical_difference {
            Some(cd) => writeln!(f, "nemenyi critical difference: {cd:.4}")?,
            None => writeln!(f, "nemenyi: needs at least two methods")?,
        }
        for n in &self.nemenyi {
            writeln!(
                f,
                "  {:<18} rank gap {:>7.3}  {}",
                n.method,
                n.rank_difference,
                if n.significant { "significant" } else { "not significant" }
            )?;
        }
        Ok(())
    }
}

/// A learner driven batch by batch. `predict` only ever sees unlabeled records.
pub trait StreamLearner {
    fn train(&mut self, batch: &Batch) -> Result<()>;
    fn predict(&self, record: &Record) -> Result<ClassId>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    AdfIsat,
    AdfSatOnly,
    AdfEntropyOnly,
    /// ADF with the window and temporary forest switched off.
    AdfNoTf,
    /// New forest on every training batch.
    FullRetrain,
    /// New forest on the last `gamma` training batches.
    WindowRetrain,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::AdfIsat,
        Method::AdfSatOnly,
        Method::AdfEntropyOnly,
        Method::AdfNoTf,
        Method::FullRetrain,
        Method::WindowRetrain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::AdfIsat => "adf-isat",
            Method::AdfSatOnly => "adf-sat-only",
            Method::AdfEntropyOnly => "adf-entropy-only",
            Method::AdfNoTf => "adf-no-tf",
            Method::FullRetrain => "full-retrain",
            Method::WindowRetrain => "window-retrain",
        }
    }

    pub fn learner(self, params: &AdfParams) -> Result<Box<dyn StreamLearner>> {
        let adf = |strategy: SplitStrategy, tf: bool| -> Result<Box<dyn StreamLearner>> {
            let p = AdfParams {
                split_strategy: strategy,
                temporary_forest: tf,
                ..params.clone()
            };
            Ok(Box::new(AdfState::new(p)?))
        };
        match self {
            Method::AdfIsat => adf(SplitStrategy::Isat, params.temporary_forest),
            Method::AdfSatOnly => adf(SplitStrategy::SatOnly, params.temporary_forest),
            Method::AdfEntropyOnly => adf(SplitStrategy::EntropyOnly, params.temporary_forest),
            Method::AdfNoTf => adf(params.split_strategy, false),
            Method::FullRetrain => Ok(Box::new(Retrain::new(params.clone(), 1))),
            Method::WindowRetrain => Ok(Box::new(Retrain::new(params.clone(), params.gamma))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

impl StreamLearner for AdfState {
    fn train(&mut self, batch: &Batch) -> Result<()> {
        self.learn(batch).map(|_| ())
    }

    fn predict(&self, record: &Record) -> Result<ClassId> {
        AdfState::predict(self, record)
    }
}

/// Rebuilds a forest from scratch on the last `span` batches.
pub struct Retrain {
    params: AdfParams,
    span: usize,
    recent: Vec<Batch>,
    forest: Option<Forest>,
    builds: u64,
}

impl Retrain {
    pub fn new(params: AdfParams, span: usize) -> Self {
        Retrain {
            params,
            span: span.max(1),
            recent: Vec::new(),
            forest: None,
            builds: 0,
        }
    }
}

impl StreamLearner for Retrain {
    fn train(&mut self, batch: &Batch) -> Result<()> {
        self.recent.push(batch.clone());
        if self.recent.len() > self.span {
            self.recent.remove(0);
        }
        let data = Batch::concat(&self.recent, batch.batch_id)?;
        let mut induction = self.params.induction;
        induction.rng_seed = derive_seed(self.params.seed, "retrain", self.builds);
        self.builds += 1;
        self.forest = Some(build_forest(&data, self.params.ensemble_size, self.params.mode, &induction)?);
        Ok(())
    }

    fn predict(&self, record: &Record) -> Result<ClassId> {
        Ok(self.forest.as_ref().ok_or(Error::NotTrained)?.classify(record).0)
    }
}

/// One train/test pair of a stream with a display label and scenario name.
pub struct StreamStep<'a> {
    pub label: String,
    pub scenario: String,
    pub train: &'a Batch,
    pub test: &'a Batch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub params: AdfParams,
}

/// Runs each method over the stream: train on batch `i`, then predict its
/// test set from unlabeled copies. A failing step marks that cell failed and
/// the method continues with the next batch.
pub fn run_experiment(steps: &[StreamStep<'_>], config: &ExperimentConfig) -> Result<ResultsTable> {
    let mut learners = Vec::with_capacity(config.methods.len());
    for m in &config.methods {
        learners.push((m.name().to_owned(), m.learner(&config.params)?));
    }
    let digest = format!(
        "{:016x}",
        derive_seed(0, &serde_json::to_string(&config.params)?, 0)
    );
    Ok(run_learners(steps, learners, config.params.seed, digest))
}

pub fn run_learners(
    steps: &[StreamStep<'_>],
    learners: Vec<(String, Box<dyn StreamLearner>)>,
    seed: u64,
    params_digest: String,
) -> ResultsTable {
    let mut table = ResultsTable {
        methods: learners.iter().map(|(n, _)| n.clone()).collect(),
        batches: steps.iter().map(|s| (s.label.clone(), s.scenario.clone())).collect(),
        cells: Vec::with_capacity(learners.len()),
        seed,
        params_digest,
    };
    for (_, mut learner) in learners {
        let row = steps.iter().map(|s| evaluate_step(learner.as_mut(), s)).collect();
        table.cells.push(row);
    }
    table
}

fn evaluate_step(learner: &mut dyn StreamLearner, step: &StreamStep<'_>) -> Cell {
    let started = Instant::now();
    if let Err(e) = learner.train(step.train) {
        return Cell::Failed { message: e.to_string() };
    }
    let train_ms = started.elapsed().as_secs_f64() * 1e3;
    let truths: Vec<ClassId> = step.test.records.iter().filter_map(|r| r.label).collect();
    let started = Instant::now();
    let predictions: Result<Vec<ClassId>> = step
        .test
        .records
        .iter()
        .filter(|r| r.label.is_some())
        .map(|r| learner.predict(&r.unlabeled()))
        .collect();
    let predict_ms = started.elapsed().as_secs_f64() * 1e3;
    match predictions.and_then(|p| accuracy(&p, &truths)) {
        Ok(accuracy) => Cell::Ok {
            accuracy,
            train_ms,
            predict_ms,
        },
        Err(e) => Cell::Failed { message: e.to_string() },
    }
}
