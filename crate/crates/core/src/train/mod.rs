//! Experimental protocol: splits, mini-batch training, periodic validation,
//! best-checkpoint selection and ROC-AUC evaluation.
//!
//! `train` drives one run. It emits a `MetricEvent` per recorded point (the
//! JSONL plotting substrate) and returns a `RunRecord`; the final test AUC
//! is computed exactly once, from the best-validation weights, through the
//! same scoring path `score_samples` exposes for standalone evaluation.

mod auc;

pub use auc::roc_auc;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alpha::FactorMatrix;
use crate::model::{ModelError, ModelGraph, ModelKind};
use crate::nn::{
    bce_loss, ic_loss, zero_grads, Adam, AdamConfig, IcMode, Mode, NnError, TensorVisit,
};
use crate::panel::LabelSet;
use crate::rng::seeded_rng;
use crate::tensor::Tensor2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    BadConfig(String),
    #[error("need at least {need} labeled dates ({test_days} test days + 1 training date), got {got}")]
    TooFewDates {
        need: usize,
        test_days: usize,
        got: usize,
    },
    #[error("AUC undefined: only one label class present")]
    SingleClass,
    #[error("AUC undefined: non-finite score")]
    NonFiniteScore,
    #[error("features and labels are misaligned: {0}")]
    Misaligned(String),
    #[error("non-finite loss at step {step}; weights restored to the last good checkpoint")]
    NonFiniteLoss { step: u64 },
    #[error("non-finite gradient at step {step}: {source}")]
    NonFiniteGrad { step: u64, source: NnError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One (date, ticker) sample, by panel index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleId {
    pub date: usize,
    pub ticker: usize,
}

/// Split parameters. The test set is cut by date (the last `test_days`
/// label-bearing dates); validation is a per-sample uniform draw from the
/// remaining pool.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitPlan {
    pub test_days: usize,
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            test_days: 70,
            valid_fraction: 0.05,
            seed: 0,
        }
    }
}

/// Populated split membership; disjoint and exhaustive over eligible
/// samples (label defined, every factor observed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<SampleId>,
    pub valid: Vec<SampleId>,
    pub test: Vec<SampleId>,
}

/// Assigns every eligible sample to train, valid or test.
///
/// Eligibility (label defined and feature row fully observed) is decided
/// here, once; batches never re-filter. Deterministic for a fixed seed.
pub fn make_splits(
    features: &FactorMatrix,
    labels: &LabelSet,
    plan: &SplitPlan,
) -> Result<Splits, TrainError> {
    check_aligned(features, labels)?;
    if plan.test_days == 0 {
        return Err(TrainError::BadConfig("test_days must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&plan.valid_fraction) {
        return Err(TrainError::BadConfig(format!(
            "valid_fraction must lie in [0, 1), got {}",
            plan.valid_fraction
        )));
    }

    let nt = labels.n_tickers();
    let nf = features.n_factors();
    let eligible = |t: usize, j: usize| {
        !labels.label.get(t, j).is_nan() && (0..nf).all(|f| features.observed(t, j, f))
    };

    let labeled_dates: Vec<usize> = (0..labels.n_dates())
        .filter(|&t| (0..nt).any(|j| !labels.label.get(t, j).is_nan()))
        .collect();
    let need = plan.test_days + 1;
    if labeled_dates.len() < need {
        return Err(TrainError::TooFewDates {
            need,
            test_days: plan.test_days,
            got: labeled_dates.len(),
        });
    }
    let first_test_date = labeled_dates[labeled_dates.len() - plan.test_days];

    let mut pool = Vec::new();
    let mut test = Vec::new();
    for &t in &labeled_dates {
        for j in 0..nt {
            if !eligible(t, j) {
                continue;
            }
            let id = SampleId { date: t, ticker: j };
            if t >= first_test_date {
                test.push(id);
            } else {
                pool.push(id);
            }
        }
    }

    // round() is the plain arithmetic reading of the fraction; cap below
    // the pool size so training is never emptied
    let n_valid = ((pool.len() as f64 * plan.valid_fraction).round() as usize)
        .min(pool.len().saturating_sub(1));
    let mut picks: Vec<usize> = (0..pool.len()).collect();
    picks.shuffle(&mut seeded_rng(plan.seed, "validation-split"));
    let mut is_valid = vec![false; pool.len()];
    for &p in &picks[..n_valid] {
        is_valid[p] = true;
    }
    let mut train = Vec::with_capacity(pool.len() - n_valid);
    let mut valid = Vec::with_capacity(n_valid);
    for (i, id) in pool.into_iter().enumerate() {
        if is_valid[i] {
            valid.push(id);
        } else {
            train.push(id);
        }
    }
    Ok(Splits { train, valid, test })
}

/// How the per-step loss is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Bce,
    BcePlusIc,
    IcOnly,
}

impl LossMode {
    pub const ALL: [LossMode; 3] = [LossMode::Bce, LossMode::BcePlusIc, LossMode::IcOnly];

    pub fn name(self) -> &'static str {
        match self {
            LossMode::Bce => "bce",
            LossMode::BcePlusIc => "bce_plus_ic",
            LossMode::IcOnly => "ic_only",
        }
    }

    /// Cross-sectional losses need per-date batches; plain BCE shuffles
    /// samples freely.
    pub fn per_date(self) -> bool {
        self != LossMode::Bce
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown loss mode '{s}' (expected bce|bce_plus_ic|ic_only)"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub validate_every: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
    pub loss_mode: LossMode,
    pub ic_mode: IcMode,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 1024,
            validate_every: 250,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
            loss_mode: LossMode::Bce,
            ic_mode: IcMode::default(),
            lambda: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::BadConfig(msg));
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if self.validate_every < 1 {
            return bad("validate_every must be >= 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive and finite, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps_opt.is_finite() && self.eps_opt > 0.0) {
            return bad(format!(
                "eps_opt must be positive and finite, got {}",
                self.eps_opt
            ));
        }
        if !self.lambda.is_finite() {
            return bad(format!("lambda must be finite, got {}", self.lambda));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_opt,
        }
    }
}

/// One metrics-stream record; serializes to the JSONL schema directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricEvent {
    TrainLoss { step: u64, train_loss: f64 },
    ValidAuc { step: u64, valid_auc: f64 },
}

/// Everything a finished run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub train_series: Vec<(u64, f64)>,
    pub valid_series: Vec<(u64, f64)>,
    pub best_step: u64,
    pub best_valid_auc: f64,
    pub test_auc: f64,
}

impl RunRecord {
    pub fn summary(&self, kind: ModelKind) -> RunSummary {
        RunSummary {
            model_kind: kind.name().to_string(),
            best_step: self.best_step,
            valid_auc: self.best_valid_auc,
            test_auc: self.test_auc,
        }
    }
}

/// Summary-file schema: one row of the model comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model_kind: String,
    pub best_step: u64,
    pub valid_auc: f64,
    pub test_auc: f64,
}

/// Scored sample for the per-sample score file.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleScore {
    pub date: NaiveDate,
    pub ticker: String,
    pub score: f64,
    pub label: u8,
}

/// Writes the score CSV (columns date, ticker, score, label).
pub fn write_scores_csv<W: io::Write>(w: W, scores: &[SampleScore]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["date", "ticker", "score", "label"])?;
    for s in scores {
        out.write_record([
            s.date.to_string(),
            s.ticker.clone(),
            s.score.to_string(),
            s.label.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Rows scored per inference call. Inference is row-independent, so
/// chunking cannot change any output bit.
const SCORE_CHUNK: usize = 4096;

/// Scores an index set in inference mode: AUC plus the per-sample rows.
/// This is the single scoring path; the test AUC inside `train` and
/// standalone checkpoint evaluation both land here.
pub fn score_samples(
    model: &mut ModelGraph,
    features: &FactorMatrix,
    labels: &LabelSet,
    set: &[SampleId],
) -> Result<(f64, Vec<SampleScore>), TrainError> {
    check_aligned(features, labels)?;
    let mut rows = Vec::with_capacity(set.len());
    for chunk in set.chunks(SCORE_CHUNK) {
        let x = gather_features(features, chunk);
        let logits = model.predict_logits(&x, Mode::Inference)?;
        for (i, id) in chunk.iter().enumerate() {
            let lab = labels.label.get(id.date, id.ticker);
            if lab.is_nan() {
                return Err(TrainError::Misaligned(format!(
                    "sample ({}, {}) has no label",
                    features.dates()[id.date],
                    features.tickers()[id.ticker],
                )));
            }
            rows.push(SampleScore {
                date: features.dates()[id.date],
                ticker: features.tickers()[id.ticker].clone(),
                score: logits.get(i, 0),
                label: (lab != 0.0) as u8,
            });
        }
    }
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let labs: Vec<u8> = rows.iter().map(|r| r.label).collect();
    Ok((roc_auc(&scores, &labs)?, rows))
}

/// Runs the full protocol on one model.
///
/// Per epoch the training samples are reshuffled from the run seed. Every
/// `validate_every` optimizer steps the validation set is scored in
/// inference mode and the best weights (ties to the earlier step) are
/// snapshotted; a final validation is always recorded. On completion the
/// best weights are restored into `model` and the test AUC is computed
/// exactly once from them.
///
/// When the IC term is active, batches are per-date cross-sections (every
/// training sample of one date per step) instead of size-`batch_size`
/// shuffles, and the total loss is bce + lambda * ic (or the ic term alone).
///
/// A non-finite loss or gradient aborts the run with the failing step;
/// `model` is left at the best recorded weights (initial weights if the
/// failure precedes all validations).
pub fn train(
    model: &mut ModelGraph,
    features: &FactorMatrix,
    labels: &LabelSet,
    splits: &Splits,
    cfg: &TrainConfig,
    mut on_event: impl FnMut(&MetricEvent),
) -> Result<RunRecord, TrainError> {
    cfg.validate()?;
    check_aligned(features, labels)?;
    if model.input_dim() != features.n_factors() {
        return Err(TrainError::Misaligned(format!(
            "model expects {} inputs, features carry {} factors",
            model.input_dim(),
            features.n_factors(),
        )));
    }

    let mut adam = Adam::new(cfg.adam());
    let mut shuffle_rng = seeded_rng(cfg.seed, "batch-shuffle");
    let init_weights = snapshot_weights(model);

    let date_groups: Vec<Vec<SampleId>> = if cfg.loss_mode.per_date() {
        group_by_date(&splits.train)
    } else {
        Vec::new()
    };

    let mut record = RunRecord {
        train_series: Vec::new(),
        valid_series: Vec::new(),
        best_step: 0,
        best_valid_auc: f64::NAN,
        test_auc: f64::NAN,
    };
    let mut best: Option<(u64, f64, WeightSnapshot)> = None;
    let mut step: u64 = 0;
    let mut last_validated: Option<u64> = None;

    for _ in 0..cfg.epochs {
        let shuffled: Vec<SampleId>;
        let batches: Vec<&[SampleId]>;
        if cfg.loss_mode.per_date() {
            let mut order: Vec<usize> = (0..date_groups.len()).collect();
            order.shuffle(&mut shuffle_rng);
            batches = order.iter().map(|&gi| date_groups[gi].as_slice()).collect();
        } else {
            let mut order = splits.train.clone();
            order.shuffle(&mut shuffle_rng);
            shuffled = order;
            // a 1-row tail cannot feed train-mode batch norm; drop it for
            // every model kind so behavior does not depend on architecture
            batches = shuffled
                .chunks(cfg.batch_size)
                .filter(|b| b.len() >= 2)
                .collect();
        }

        for batch in batches {
            step += 1;
            let loss = match step_loss(model, features, labels, batch, cfg) {
                Ok(l) => l,
                Err(e) => {
                    restore_best(model, &best, &init_weights);
                    return Err(e);
                }
            };
            if !loss.is_finite() {
                restore_best(model, &best, &init_weights);
                return Err(TrainError::NonFiniteLoss { step });
            }
            if let Err(e) = adam.step(model) {
                restore_best(model, &best, &init_weights);
                return Err(match e {
                    NnError::NonFiniteGrad(_) => TrainError::NonFiniteGrad { step, source: e },
                    other => other.into(),
                });
            }
            zero_grads(model);

            on_event(&MetricEvent::TrainLoss {
                step,
                train_loss: loss,
            });
            record.train_series.push((step, loss));

            if step.is_multiple_of(cfg.validate_every as u64) {
                run_validation(
                    model,
                    features,
                    labels,
                    &splits.valid,
                    step,
                    &mut record,
                    &mut best,
                    &mut on_event,
                )?;
                last_validated = Some(step);
            }
        }
    }

    // the final weights are always validated, even when no periodic
    // validation fired (or no step ran at all)
    if last_validated != Some(step) {
        run_validation(
            model,
            features,
            labels,
            &splits.valid,
            step,
            &mut record,
            &mut best,
            &mut on_event,
        )?;
    }

    let (best_step, best_auc, weights) = best.expect("at least one validation ran");
    restore_weights(model, &weights);
    let (test_auc, _) = score_samples(model, features, labels, &splits.test)?;
    record.best_step = best_step;
    record.best_valid_auc = best_auc;
    record.test_auc = test_auc;
    Ok(record)
}

/// Forward/backward for one batch; gradients are left accumulated for the
/// optimizer. Returns the scalar training loss.
fn step_loss(
    model: &mut ModelGraph,
    features: &FactorMatrix,
    labels: &LabelSet,
    batch: &[SampleId],
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    let x = gather_features(features, batch);
    match cfg.loss_mode {
        LossMode::Bce => {
            let y = gather_labels(labels, batch);
            let (logits, _) = model.forward(&x, Mode::Train, false)?;
            let (loss, g) = bce_loss(&logits, &y);
            model.backward(&g, None)?;
            Ok(loss)
        }
        LossMode::BcePlusIc => {
            let y = gather_labels(labels, batch);
            let excess = gather_excess(labels, batch);
            let (logits, feats) = model.forward(&x, Mode::Train, true)?;
            let feats = feats.expect("feature tap requested");
            let (bce, g_logits) = bce_loss(&logits, &y);
            let (ic, ic_grad) = ic_loss(&feats, &excess, cfg.lambda, cfg.ic_mode)?;
            let tap = ic_grad.map(|v| v * cfg.lambda);
            model.backward(&g_logits, Some(&tap))?;
            Ok(bce + cfg.lambda * ic)
        }
        LossMode::IcOnly => {
            let excess = gather_excess(labels, batch);
            let (logits, feats) = model.forward(&x, Mode::Train, true)?;
            let feats = feats.expect("feature tap requested");
            let (ic, ic_grad) = ic_loss(&feats, &excess, cfg.lambda, cfg.ic_mode)?;
            let silent_head = Tensor2::zeros(logits.rows(), 1);
            model.backward(&silent_head, Some(&ic_grad))?;
            Ok(ic)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_validation(
    model: &mut ModelGraph,
    features: &FactorMatrix,
    labels: &LabelSet,
    valid: &[SampleId],
    step: u64,
    record: &mut RunRecord,
    best: &mut Option<(u64, f64, WeightSnapshot)>,
    on_event: &mut dyn FnMut(&MetricEvent),
) -> Result<(), TrainError> {
    let (auc, _) = score_samples(model, features, labels, valid)?;
    on_event(&MetricEvent::ValidAuc {
        step,
        valid_auc: auc,
    });
    record.valid_series.push((step, auc));
    // strict improvement only: ties keep the earlier, less-trained weights
    let improved = match best {
        None => true,
        Some((_, b, _)) => auc > *b,
    };
    if improved {
        *best = Some((step, auc, snapshot_weights(model)));
    }
    Ok(())
}

fn check_aligned(features: &FactorMatrix, labels: &LabelSet) -> Result<(), TrainError> {
    if features.n_dates() != labels.n_dates() || features.n_tickers() != labels.n_tickers() {
        return Err(TrainError::Misaligned(format!(
            "features are {}x{}, labels are {}x{}",
            features.n_dates(),
            features.n_tickers(),
            labels.n_dates(),
            labels.n_tickers(),
        )));
    }
    if features.dates() != labels.dates.as_slice() {
        return Err(TrainError::Misaligned("date axes differ".into()));
    }
    Ok(())
}

fn gather_features(features: &FactorMatrix, set: &[SampleId]) -> Tensor2 {
    let mut x = Tensor2::zeros(set.len(), features.n_factors());
    for (i, id) in set.iter().enumerate() {
        x.row_mut(i).copy_from_slice(features.sample(id.date, id.ticker));
    }
    x
}

fn gather_labels(labels: &LabelSet, set: &[SampleId]) -> Vec<f64> {
    set.iter()
        .map(|id| {
            let l = labels.label.get(id.date, id.ticker);
            debug_assert!(!l.is_nan(), "splits admit only labeled samples");
            l
        })
        .collect()
}

fn gather_excess(labels: &LabelSet, set: &[SampleId]) -> Vec<f64> {
    set.iter()
        .map(|id| labels.excess.get(id.date, id.ticker))
        .collect()
}

/// Cross-sections for per-date batching: training samples grouped by date,
/// ascending. Singleton dates are dropped; a cross-sectional loss needs at
/// least two stocks.
fn group_by_date(train: &[SampleId]) -> Vec<Vec<SampleId>> {
    let mut by_date: BTreeMap<usize, Vec<SampleId>> = BTreeMap::new();
    for &id in train {
        by_date.entry(id.date).or_default().push(id);
    }
    by_date.into_values().filter(|g| g.len() >= 2).collect()
}

type WeightSnapshot = Vec<(String, Vec<f64>)>;

/// Copies parameters and layer state (not optimizer moments): exactly what
/// evaluation needs.
fn snapshot_weights(model: &mut ModelGraph) -> WeightSnapshot {
    let mut out: WeightSnapshot = Vec::new();
    {
        let mut push = |name: String, t: &mut Tensor2| out.push((name, t.data().to_vec()));
        model.visit_params("", &mut push);
        model.visit_state("", &mut push);
    }
    out
}

fn restore_weights(model: &mut ModelGraph, snap: &WeightSnapshot) {
    let by_name: HashMap<&str, &Vec<f64>> = snap.iter().map(|(n, v)| (n.as_str(), v)).collect();
    let mut pull = |name: String, t: &mut Tensor2| {
        let src = by_name
            .get(name.as_str())
            .expect("snapshot covers every tensor");
        t.data_mut().copy_from_slice(src);
    };
    model.visit_params("", &mut pull);
    model.visit_state("", &mut pull);
}

fn restore_best(
    model: &mut ModelGraph,
    best: &Option<(u64, f64, WeightSnapshot)>,
    init: &WeightSnapshot,
) {
    match best {
        Some((_, _, snap)) => restore_weights(model, snap),
        None => restore_weights(model, init),
    }
}
