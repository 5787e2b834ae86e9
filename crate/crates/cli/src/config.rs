//! Run configuration: one TOML document with a section per pipeline stage.
//! Unknown keys are rejected everywhere; every field has a default, so an
//! empty document (or no file at all) is a valid, fully-specified run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use alphagate::model::ModelSpec;
use alphagate::nn::IcMode;
use alphagate::panel::{Benchmark, Weighting};
use alphagate::train::{LossMode, SplitPlan, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub alphas: AlphaSection,
    pub label: LabelSection,
    pub model: ModelSpec,
    pub train: TrainSection,
    pub output: OutputSection,
}

/// Data source: a panel CSV when `source` is set, otherwise the synthetic
/// generator with the parameters below.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: Option<PathBuf>,
    pub tickers: usize,
    pub days: usize,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: None,
            tickers: 100,
            days: 800,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlphaSection {
    pub expressions: PathBuf,
    pub standardize: bool,
}

impl Default for AlphaSection {
    fn default() -> Self {
        Self {
            expressions: PathBuf::from("alphas/default.txt"),
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    MarketMean,
    BetaAdjusted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingKind {
    Equal,
    Cap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelSection {
    pub horizon: usize,
    pub benchmark: BenchmarkKind,
    pub weighting: WeightingKind,
}

impl Default for LabelSection {
    fn default() -> Self {
        Self {
            horizon: 1,
            benchmark: BenchmarkKind::MarketMean,
            weighting: WeightingKind::Equal,
        }
    }
}

impl LabelSection {
    /// `fit_dates` bounds the beta-fit window for the beta-adjusted
    /// benchmark (callers pass the date count before the test cut so the
    /// fit never sees evaluation data).
    pub fn benchmark(&self, fit_dates: usize) -> Benchmark {
        match self.benchmark {
            BenchmarkKind::MarketMean => Benchmark::MarketMean,
            BenchmarkKind::BetaAdjusted => Benchmark::BetaAdjusted { fit_dates },
        }
    }

    pub fn weighting(&self) -> Weighting {
        match self.weighting {
            WeightingKind::Equal => Weighting::Equal,
            WeightingKind::Cap => Weighting::Cap,
        }
    }
}

/// Training parameters plus the split geometry they run under.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
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
    pub test_days: usize,
    pub valid_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = SplitPlan::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            validate_every: t.validate_every,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps_opt: t.eps_opt,
            loss_mode: t.loss_mode,
            ic_mode: t.ic_mode,
            lambda: t.lambda,
            seed: t.seed,
            test_days: s.test_days,
            valid_fraction: s.valid_fraction,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            validate_every: self.validate_every,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps_opt: self.eps_opt,
            loss_mode: self.loss_mode,
            ic_mode: self.ic_mode,
            lambda: self.lambda,
            seed: self.seed,
        }
    }

    /// The run seed also seeds the validation draw, so one seed pins the
    /// whole run.
    pub fn split_plan(&self) -> SplitPlan {
        SplitPlan {
            test_days: self.test_days,
            valid_fraction: self.valid_fraction,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/latest"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_a_complete_config() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.data.tickers, 100);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.test_days, 70);
        assert_eq!(cfg.label.horizon, 1);
        assert!(cfg.alphas.standardize);
    }

    #[test]
    fn unknown_keys_are_rejected_in_every_section() {
        for doc in [
            "[data]\nbanana = 1",
            "[alphas]\nbanana = 1",
            "[label]\nbanana = 1",
            "[model]\nbanana = 1",
            "[train]\nbanana = 1",
            "[output]\nbanana = 1",
            "banana = 1",
        ] {
            assert!(toml::from_str::<RunConfig>(doc).is_err(), "accepted {doc}");
        }
    }

    #[test]
    fn sections_override_individually() {
        let cfg: RunConfig = toml::from_str(
            "[train]\nepochs = 5\nloss_mode = \"bce_plus_ic\"\n\n[label]\nbenchmark = \"beta_adjusted\"\n",
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.train_config().loss_mode, LossMode::BcePlusIc);
        assert_eq!(cfg.label.benchmark, BenchmarkKind::BetaAdjusted);
        // untouched sections keep defaults
        assert_eq!(cfg.train.batch_size, 1024);
    }

    #[test]
    fn config_echo_round_trips() {
        let cfg = RunConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.train.epochs, cfg.train.epochs);
        assert_eq!(back.data.days, cfg.data.days);
    }
}
