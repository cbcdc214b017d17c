//! Experiment driver: configuration, the training loop, learning-rate
//! search, evaluation, and metrics emission.
//!
//! One run owns one model, one optimizer, and (for the weight-learning
//! methods) one label-weight table. Per epoch the bags are shuffled and
//! split into minibatches; each minibatch computes its loss against the
//! table state from before the step, applies one optimizer update, and then
//! rewrites the table rows of its bags from the updated model. Everything is
//! seeded, and gradient reduction happens in fixed chunk order, so a run is
//! a pure function of its configuration.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{make_bags, train_val_split, Bag, Dataset};
use crate::error::{Error, Result};
use crate::loss::{
    dllp_loss, proden_loss, rc_const_loss, rc_loss, supervised_loss, weighted_instance_loss,
    LossKind,
};
use crate::marginals::{
    approx_marginals, default_temperature, leave_one_out_means, DEFAULT_STATE_CAP,
};
use crate::model::{softmax, ModelParams, ParamGrads};
use crate::optim::{AdamConfig, AdamState};
use crate::weights::WeightTable;

/// Bags per parallel gradient task. Fixed so the reduction order (and hence
/// the floating-point result) does not depend on the worker count.
const BAG_CHUNK: usize = 16;

/// Instances per parallel evaluation task.
const EVAL_CHUNK: usize = 2048;

pub const DEFAULT_LR_GRID: [f64; 6] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

/// Hidden widths from the reference MLP and a small preset for quick runs.
pub const DEFAULT_MLP_HIDDEN: [usize; 4] = [300, 300, 300, 300];
pub const DESK_MLP_HIDDEN: [usize; 2] = [128, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rc,
    RcApprox,
    RcInit,
    RcConst,
    Dllp,
    Proden,
    Pn,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Rc,
        Method::RcApprox,
        Method::RcInit,
        Method::RcConst,
        Method::Dllp,
        Method::Proden,
        Method::Pn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rc => "rc",
            Method::RcApprox => "rc-approx",
            Method::RcInit => "rc-init",
            Method::RcConst => "rc-const",
            Method::Dllp => "dllp",
            Method::Proden => "proden",
            Method::Pn => "pn",
        }
    }

    /// Whether the method maintains per-instance label weights. DLLP works
    /// purely at bag level and PN reads true labels.
    pub fn uses_weight_table(self) -> bool {
        !matches!(self, Method::Dllp | Method::Pn)
    }

    fn loss_kind_at_epoch(self, epoch: usize, init_epochs: usize) -> LossKind {
        match self {
            Method::Rc => LossKind::Rc,
            Method::RcApprox => LossKind::RcApprox,
            Method::RcConst => LossKind::RcConst,
            Method::Proden => LossKind::Proden,
            Method::Dllp => LossKind::Dllp,
            Method::Pn => LossKind::Supervised,
            Method::RcInit => {
                if epoch <= init_epochs {
                    LossKind::Dllp
                } else {
                    LossKind::RcApprox
                }
            }
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelKind {
    Linear,
    Mlp(Vec<usize>),
}

impl ModelKind {
    pub fn build(&self, input_dim: usize, num_classes: usize, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            ModelKind::Linear => ModelParams::linear(input_dim, num_classes, &mut rng),
            ModelKind::Mlp(hidden) => ModelParams::mlp(input_dim, hidden, num_classes, &mut rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricSplit {
    Train,
    Val,
    Test,
}

impl MetricSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricSplit::Train => "train",
            MetricSplit::Val => "val",
            MetricSplit::Test => "test",
        }
    }
}

impl FromStr for MetricSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(MetricSplit::Train),
            "val" => Ok(MetricSplit::Val),
            "test" => Ok(MetricSplit::Test),
            _ => Err(Error::Config(format!("unknown split '{s}'"))),
        }
    }
}

/// One training run's full configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub method: Method,
    pub model: ModelKind,
    /// Bag size K.
    pub bag_size: usize,
    pub epochs: usize,
    /// Bags per minibatch; defaults to `max(1, 1024 / K)` so a minibatch
    /// carries about 1024 instances regardless of K.
    pub batch_bags: Option<usize>,
    pub lr: f64,
    /// Softmax temperature of the approximate path; defaults to `1/(K-1)`.
    pub temperature: Option<f64>,
    /// Warm-start epochs for rc-init.
    pub init_epochs: usize,
    pub seed: u64,
    pub val_fraction: f64,
    /// State cap for the exact dynamic program.
    pub state_cap: u128,
    /// Where to write the final model, if anywhere.
    pub checkpoint: Option<PathBuf>,
    /// Debug dump of the final weight table.
    pub weight_dump: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(method: Method, bag_size: usize) -> Self {
        Self {
            method,
            model: ModelKind::Linear,
            bag_size,
            epochs: 100,
            batch_bags: None,
            lr: 1e-3,
            temperature: None,
            init_epochs: 40,
            seed: 0,
            val_fraction: 0.1,
            state_cap: DEFAULT_STATE_CAP,
            checkpoint: None,
            weight_dump: None,
        }
    }

    pub fn effective_batch_bags(&self) -> usize {
        self.batch_bags
            .unwrap_or_else(|| (1024 / self.bag_size).max(1))
    }

    pub fn effective_temperature(&self) -> f64 {
        self.temperature
            .unwrap_or_else(|| default_temperature(self.bag_size))
    }

    /// Validates every field, reporting all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.bag_size == 0 {
            problems.push("bag size K must be >= 1".to_string());
        }
        if self.epochs == 0 {
            problems.push("epochs must be >= 1".to_string());
        }
        if let Some(b) = self.batch_bags {
            if b == 0 {
                problems.push("batch-bags must be >= 1".to_string());
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("learning rate must be positive, got {}", self.lr));
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0 && t.is_finite()) {
                problems.push(format!("temperature must be positive, got {t}"));
            }
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            problems.push(format!(
                "validation fraction must be in (0, 1), got {}",
                self.val_fraction
            ));
        }
        if let ModelKind::Mlp(hidden) = &self.model {
            if hidden.is_empty() || hidden.contains(&0) {
                problems.push("mlp hidden widths must be non-empty and positive".to_string());
            }
        }
        if self.method == Method::RcInit && self.init_epochs == 0 {
            problems.push("rc-init needs init-epochs >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Per-(epoch, split) measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: MetricSplit,
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    /// Mean method loss over the epoch's minibatches for the train split;
    /// mean supervised cross-entropy for val/test.
    pub loss: f64,
    pub accuracy: f64,
    /// Epoch-over-epoch mean KL of the weight table; 0 on val/test rows and
    /// for methods without a table.
    pub weight_kl: f64,
    pub elapsed_s: f64,
}

/// Everything a finished run hands back.
#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub params: ModelParams,
    pub final_val_accuracy: f64,
    pub final_test_accuracy: f64,
    /// Final label-weight table for methods that keep one.
    pub weight_table: Option<WeightTable>,
}

/// Independent RNG streams derived from the run seed, in a fixed order.
#[derive(Debug, Clone, Copy)]
pub struct RunSeeds {
    pub split: u64,
    pub bags: u64,
    pub init: u64,
    pub shuffle: u64,
}

impl RunSeeds {
    pub fn derive(seed: u64) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        Self {
            split: master.gen(),
            bags: master.gen(),
            init: master.gen(),
            shuffle: master.gen(),
        }
    }
}

struct BatchOutcome {
    grads: ParamGrads,
    loss_sum: f64,
}

/// Runs one experiment end to end and returns its per-epoch metrics.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    full_train: &Dataset,
    test: &Dataset,
) -> Result<RunOutput> {
    cfg.validate()?;
    if full_train.dim() != test.dim() || full_train.num_classes() != test.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "train ({}d, {} classes) and test ({}d, {} classes) disagree",
            full_train.dim(),
            full_train.num_classes(),
            test.dim(),
            test.num_classes()
        )));
    }
    let seeds = RunSeeds::derive(cfg.seed);
    let (train, val) = train_val_split(full_train, cfg.val_fraction, seeds.split)?;
    let bags = make_bags(&train, cfg.bag_size, seeds.bags)?;
    if bags.is_empty() {
        return Err(Error::Config(format!(
            "no full bags: {} training instances for K = {}",
            train.len(),
            cfg.bag_size
        )));
    }

    let mut params = cfg
        .model
        .build(train.dim(), train.num_classes(), seeds.init);
    let mut adam = AdamState::new(&params, AdamConfig::new(cfg.lr));
    let mut table = cfg.method.uses_weight_table().then(|| {
        WeightTable::init(
            &bags
                .iter()
                .map(|b| b.multiset().clone())
                .collect::<Vec<_>>(),
        )
    });

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seeds.shuffle);
    let batch_bags = cfg.effective_batch_bags();
    let temperature = cfg.effective_temperature();
    let started = Instant::now();
    let mut records = Vec::with_capacity(cfg.epochs * 3);
    let mut order: Vec<usize> = (0..bags.len()).collect();

    for epoch in 1..=cfg.epochs {
        let kind = cfg.method.loss_kind_at_epoch(epoch, cfg.init_epochs);
        let table_before = table.clone();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss_sum = 0.0;
        for minibatch in order.chunks(batch_bags) {
            let outcome = minibatch_pass(
                minibatch,
                &bags,
                &train,
                &params,
                table.as_ref(),
                kind,
                temperature,
                cfg.state_cap,
            )?;
            let mut grads = outcome.grads;
            grads.scale(1.0 / minibatch.len() as f64);
            epoch_loss_sum += outcome.loss_sum;
            adam.step(&mut params, &grads)?;
            if let Some(table) = table.as_mut() {
                refresh_table_rows(minibatch, &bags, &train, &params, table)?;
            }
        }

        let train_loss = epoch_loss_sum / bags.len() as f64;
        let weight_kl = match (&table, &table_before) {
            (Some(now), Some(before)) => now.epoch_kl(before)?,
            _ => 0.0,
        };
        let (train_acc, _) = evaluate(&params, &train)?;
        let (val_acc, val_ce) = evaluate(&params, &val)?;
        let (test_acc, test_ce) = evaluate(&params, test)?;
        let elapsed_s = started.elapsed().as_secs_f64();
        log::info!(
            "{} K={} seed={} epoch {:>3}: train loss {:.6}, val acc {:.4}, test acc {:.4}, \
             weight KL {:.3e}",
            cfg.method,
            cfg.bag_size,
            cfg.seed,
            epoch,
            train_loss,
            val_acc,
            test_acc,
            weight_kl
        );
        let base = MetricsRecord {
            epoch,
            split: MetricSplit::Train,
            method: cfg.method,
            k: cfg.bag_size,
            seed: cfg.seed,
            loss: train_loss,
            accuracy: train_acc,
            weight_kl,
            elapsed_s,
        };
        records.push(MetricsRecord {
            split: MetricSplit::Train,
            ..base.clone()
        });
        records.push(MetricsRecord {
            split: MetricSplit::Val,
            loss: val_ce,
            accuracy: val_acc,
            weight_kl: 0.0,
            ..base.clone()
        });
        records.push(MetricsRecord {
            split: MetricSplit::Test,
            loss: test_ce,
            accuracy: test_acc,
            weight_kl: 0.0,
            ..base
        });
    }

    if let Some(path) = &cfg.checkpoint {
        params.save(path)?;
    }
    if let (Some(path), Some(table)) = (&cfg.weight_dump, &table) {
        table.dump(BufWriter::new(File::create(path)?))?;
    }
    let final_val_accuracy = records
        .iter()
        .rev()
        .find(|r| r.split == MetricSplit::Val)
        .map_or(0.0, |r| r.accuracy);
    let final_test_accuracy = records
        .iter()
        .rev()
        .find(|r| r.split == MetricSplit::Test)
        .map_or(0.0, |r| r.accuracy);
    Ok(RunOutput {
        records,
        params,
        final_val_accuracy,
        final_test_accuracy,
        weight_table: table,
    })
}

#[allow(clippy::too_many_arguments)]
fn minibatch_pass(
    minibatch: &[usize],
    bags: &[Bag],
    train: &Dataset,
    params: &ModelParams,
    table: Option<&WeightTable>,
    kind: LossKind,
    temperature: f64,
    state_cap: u128,
) -> Result<BatchOutcome> {
    let chunk_outcomes: Vec<BatchOutcome> = minibatch
        .par_chunks(BAG_CHUNK)
        .map(|ids| -> Result<BatchOutcome> {
            let mut grads = ParamGrads::zeros_like(params);
            let mut loss_sum = 0.0;
            for &bag_id in ids {
                let bag = &bags[bag_id];
                let mut logits = Vec::with_capacity(bag.size());
                let mut caches = Vec::with_capacity(bag.size());
                for &i in bag.indices() {
                    let (l, cache) = params.forward(train.feature_row(i))?;
                    logits.push(l);
                    caches.push(cache);
                }
                let s = bag.multiset();
                let result = match kind {
                    LossKind::Supervised => supervised_loss(bag.labels_for_eval(), &logits)?,
                    LossKind::Dllp => dllp_loss(s, &logits)?,
                    LossKind::Rc => rc_loss(s, expect_rows(table, bag_id)?, &logits, state_cap)?,
                    LossKind::RcApprox => {
                        // Leave-one-out mean predictions come from the live
                        // model, while the per-instance weights stay on the
                        // table snapshot; deriving both from the table would
                        // cancel the bag-composition signal out of the
                        // candidate scores.
                        let probs: Vec<Vec<f64>> = logits.iter().map(|l| softmax(l)).collect();
                        let loo = leave_one_out_means(&probs);
                        let m =
                            approx_marginals(s, expect_rows(table, bag_id)?, &loo, temperature)?;
                        weighted_instance_loss(&logits, m.rows(), LossKind::RcApprox)?
                    }
                    LossKind::RcConst => rc_const_loss(s, expect_rows(table, bag_id)?, &logits)?,
                    LossKind::Proden => proden_loss(expect_rows(table, bag_id)?, &logits)?,
                };
                loss_sum += result.loss;
                for (cache, dlogits) in caches.iter().zip(&result.logit_grads) {
                    params.backward_into(cache, dlogits, &mut grads)?;
                }
            }
            Ok(BatchOutcome { grads, loss_sum })
        })
        .collect::<Result<_>>()?;

    // Deterministic reduction in chunk order.
    let mut grads = ParamGrads::zeros_like(params);
    let mut loss_sum = 0.0;
    for outcome in chunk_outcomes {
        grads.add_assign(&outcome.grads);
        loss_sum += outcome.loss_sum;
    }
    Ok(BatchOutcome { grads, loss_sum })
}

fn expect_rows(table: Option<&WeightTable>, bag_id: usize) -> Result<&[Vec<f64>]> {
    table
        .map(|t| t.bag_rows(bag_id))
        .ok_or_else(|| Error::Config("weight-table method without a table".into()))
}

/// Rewrites the minibatch bags' weight rows from the updated model.
fn refresh_table_rows(
    minibatch: &[usize],
    bags: &[Bag],
    train: &Dataset,
    params: &ModelParams,
    table: &mut WeightTable,
) -> Result<()> {
    let fresh: Vec<(usize, Vec<Vec<f64>>)> = minibatch
        .par_chunks(BAG_CHUNK)
        .map(|ids| -> Result<Vec<(usize, Vec<Vec<f64>>)>> {
            ids.iter()
                .map(|&bag_id| {
                    let probs = bags[bag_id]
                        .indices()
                        .iter()
                        .map(|&i| Ok(softmax(&params.logits(train.feature_row(i))?)))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((bag_id, probs))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    for (bag_id, probs) in fresh {
        table.update_bag(bag_id, &probs)?;
    }
    Ok(())
}

/// Argmax accuracy plus mean supervised cross-entropy, reduced in fixed
/// chunk order.
fn evaluate(params: &ModelParams, ds: &Dataset) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Ok((0.0, 0.0));
    }
    let starts: Vec<usize> = (0..ds.len()).step_by(EVAL_CHUNK).collect();
    let partials: Vec<(usize, f64)> = starts
        .par_iter()
        .map(|&start| -> Result<(usize, f64)> {
            let end = (start + EVAL_CHUNK).min(ds.len());
            let mut correct = 0usize;
            let mut ce = 0.0;
            for i in start..end {
                let logits = params.logits(ds.feature_row(i))?;
                let y = ds.label(i);
                // Strict comparison keeps the lowest class id on ties.
                let mut best = 0;
                for (c, &v) in logits.iter().enumerate() {
                    if v > logits[best] {
                        best = c;
                    }
                }
                if best == y {
                    correct += 1;
                }
                ce += crate::model::log_sum_exp(&logits) - logits[y];
            }
            Ok((correct, ce))
        })
        .collect::<Result<_>>()?;
    let mut correct = 0usize;
    let mut ce = 0.0;
    for (c, e) in partials {
        correct += c;
        ce += e;
    }
    Ok((correct as f64 / ds.len() as f64, ce / ds.len() as f64))
}

/// Fraction of argmax-correct predictions, ties resolved to the lowest
/// class id.
pub fn evaluate_accuracy(params: &ModelParams, ds: &Dataset) -> Result<f64> {
    evaluate(params, ds).map(|(acc, _)| acc)
}

/// Mean supervised cross-entropy of a dataset under the model.
pub fn evaluate_mean_ce(params: &ModelParams, ds: &Dataset) -> Result<f64> {
    evaluate(params, ds).map(|(_, ce)| ce)
}

#[derive(Debug)]
pub struct LrRun {
    pub lr: f64,
    pub outcome: std::result::Result<RunOutput, String>,
}

#[derive(Debug)]
pub struct LrSearchResult {
    pub best_lr: f64,
    pub best_final_val_accuracy: f64,
    pub runs: Vec<LrRun>,
}

impl LrSearchResult {
    pub fn best_run(&self) -> Option<&RunOutput> {
        self.runs
            .iter()
            .find(|r| r.lr == self.best_lr)
            .and_then(|r| r.outcome.as_ref().ok())
    }
}

/// Trains one run per grid point and selects the learning rate with the best
/// final validation accuracy (ties go to the smaller rate). Individual run
/// failures are recorded, not fatal; only a fully failed grid is an error.
pub fn lr_search(
    base: &ExperimentConfig,
    grid: &[f64],
    train: &Dataset,
    test: &Dataset,
) -> Result<LrSearchResult> {
    if grid.is_empty() {
        return Err(Error::Config("empty learning-rate grid".into()));
    }
    let mut sorted: Vec<f64> = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let runs: Vec<LrRun> = sorted
        .par_iter()
        .map(|&lr| {
            let mut cfg = base.clone();
            cfg.lr = lr;
            cfg.checkpoint = None;
            cfg.weight_dump = None;
            LrRun {
                lr,
                outcome: run_experiment(&cfg, train, test).map_err(|e| e.to_string()),
            }
        })
        .collect();

    let mut best: Option<(f64, f64)> = None;
    for run in &runs {
        if let Ok(out) = &run.outcome {
            let acc = out.final_val_accuracy;
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((run.lr, acc));
            }
        }
    }
    match best {
        Some((best_lr, best_acc)) => Ok(LrSearchResult {
            best_lr,
            best_final_val_accuracy: best_acc,
            runs,
        }),
        None => {
            let causes = runs
                .iter()
                .map(|r| {
                    format!(
                        "lr {:.1e}: {}",
                        r.lr,
                        r.outcome.as_ref().err().cloned().unwrap_or_default()
                    )
                })
                .collect::<Vec<_>>()
                .join("\n");
            Err(Error::SearchFailed { causes })
        }
    }
}

const REPORT_HEADER: &str = "epoch,split,method,K,seed,loss,accuracy,weight_kl,elapsed_s";

/// Writes records as CSV. Refuses to create a file for an empty record list.
pub fn emit_report(records: &[MetricsRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Config("no records to write".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{REPORT_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.epoch,
            r.split.as_str(),
            r.method,
            r.k,
            r.seed,
            r.loss,
            r.accuracy,
            r.weight_kl,
            r.elapsed_s
        )?;
    }
    Ok(())
}

/// Parses a CSV written by [`emit_report`].
pub fn parse_report(reader: impl std::io::Read) -> Result<Vec<MetricsRecord>> {
    let reader = BufReader::new(reader);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::Config("empty report".into()))?;
    if header.trim() != REPORT_HEADER {
        return Err(Error::Config(format!(
            "unexpected report header '{header}'"
        )));
    }
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Config(format!(
                "line {}: expected 9 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| Error::Config(format!("line {}: bad {what}", lineno + 2));
        records.push(MetricsRecord {
            epoch: fields[0].parse().map_err(|_| bad("epoch"))?,
            split: fields[1].parse()?,
            method: fields[2].parse()?,
            k: fields[3].parse().map_err(|_| bad("K"))?,
            seed: fields[4].parse().map_err(|_| bad("seed"))?,
            loss: fields[5].parse().map_err(|_| bad("loss"))?,
            accuracy: fields[6].parse().map_err(|_| bad("accuracy"))?,
            weight_kl: fields[7].parse().map_err(|_| bad("weight_kl"))?,
            elapsed_s: fields[8].parse().map_err(|_| bad("elapsed_s"))?,
        });
    }
    Ok(records)
}

/// Static SVG with accuracy-per-split and weight-KL curves over epochs.
pub fn emit_svg_curves(records: &[MetricsRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Config("no records to plot".into()));
    }
    const W: f64 = 760.0;
    const H: f64 = 240.0;
    const PAD: f64 = 40.0;
    let max_epoch = records.iter().map(|r| r.epoch).max().unwrap_or(1).max(1) as f64;

    let series = |split: MetricSplit, field: fn(&MetricsRecord) -> f64| -> Vec<(f64, f64)> {
        records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| (r.epoch as f64, field(r)))
            .collect()
    };
    let polyline = |pts: &[(f64, f64)], ymax: f64, y_off: f64, color: &str| -> String {
        if pts.is_empty() {
            return String::new();
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                let px = PAD + (x / max_epoch) * (W - 2.0 * PAD);
                let py = y_off + (H - 2.0 * PAD) * (1.0 - (y / ymax).clamp(0.0, 1.0)) + PAD;
                format!("{px:.1},{py:.1}")
            })
            .collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            coords.join(" ")
        )
    };

    let kl_pts = series(MetricSplit::Train, |r| r.weight_kl);
    let kl_max = kl_pts
        .iter()
        .map(|&(_, y)| y)
        .fold(f64::MIN_POSITIVE, f64::max);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{}\">\n",
        2.0 * H
    ));
    svg.push_str(&format!(
        "<text x=\"{PAD}\" y=\"20\" font-size=\"13\">accuracy by epoch \
         (train black, val blue, test red)</text>\n"
    ));
    svg.push_str(&polyline(
        &series(MetricSplit::Train, |r| r.accuracy),
        1.0,
        0.0,
        "black",
    ));
    svg.push_str(&polyline(
        &series(MetricSplit::Val, |r| r.accuracy),
        1.0,
        0.0,
        "blue",
    ));
    svg.push_str(&polyline(
        &series(MetricSplit::Test, |r| r.accuracy),
        1.0,
        0.0,
        "red",
    ));
    svg.push_str(&format!(
        "<text x=\"{PAD}\" y=\"{}\" font-size=\"13\">weight-update KL by epoch \
         (max {kl_max:.3e})</text>\n",
        H + 20.0
    ));
    svg.push_str(&polyline(&kl_pts, kl_max, H, "green"));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}
