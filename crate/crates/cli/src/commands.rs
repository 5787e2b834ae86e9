//! Subcommand bodies. Every run directory receives the fully-resolved
//! config echo first, so a run is always reconstructible from its output.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

use alphagate::alpha::{evaluate_library, load_library, FactorMatrix};
use alphagate::model::{load_checkpoint, save_checkpoint, ModelGraph, ModelKind};
use alphagate::panel::{
    excess_returns, generate_synthetic, load_panel, save_panel, ColumnMap, LabelSet, MarketPanel,
    RegimeConfig,
};
use alphagate::train::{make_splits, score_samples, train, write_scores_csv, RunSummary, Splits};

use crate::config::{DataSection, RunConfig};

pub fn gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let panel = synthesize(&cfg.data)?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let path = out_dir.join("panel.csv");
    save_panel(&panel, &path)?;
    println!(
        "wrote {} ({} dates x {} tickers)",
        path.display(),
        panel.n_dates(),
        panel.n_tickers()
    );
    Ok(())
}

pub fn alphas(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let panel = load_data(&cfg.data)?;
    let defs = load_library(&cfg.alphas.expressions).with_context(|| {
        format!(
            "loading alpha library {}",
            cfg.alphas.expressions.display()
        )
    })?;
    let matrix = evaluate_library(&defs, &panel, cfg.alphas.standardize);
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let path = out_dir.join("factors.csv");
    let file = File::create(&path)?;
    matrix.write_long_csv(file)?;
    println!(
        "wrote {} ({} alphas over {} dates x {} tickers)",
        path.display(),
        matrix.n_factors(),
        matrix.n_dates(),
        matrix.n_tickers()
    );
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig, all_models: bool) -> Result<()> {
    let inputs = Pipeline::prepare(cfg)?;
    let out_dir = &cfg.output.dir;

    if !all_models {
        let summary = train_one(cfg, &inputs, cfg.model.kind, out_dir)?;
        println!("{}", comparison_table(&[summary]));
        return Ok(());
    }

    let mut summaries = Vec::new();
    for kind in ModelKind::ALL {
        let dir = out_dir.join(kind.name());
        log::info!("training {}", kind.name());
        summaries.push(train_one(cfg, &inputs, kind, &dir)?);
    }
    let table = comparison_table(&summaries);
    fs::write(out_dir.join("comparison.txt"), format!("{table}\n"))?;
    println!("{table}");
    Ok(())
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, out_dir: &Path) -> Result<()> {
    let (mut model, _) = load_checkpoint(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let inputs = Pipeline::prepare(cfg)?;
    let (auc, rows) = score_samples(
        &mut model,
        &inputs.features,
        &inputs.labels,
        &inputs.splits.test,
    )?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let path = out_dir.join("scores.csv");
    write_scores_csv(File::create(&path)?, &rows)?;
    println!("test_auc = {auc}");
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(())
}

/// Everything the training stage consumes, computed once and shared across
/// the five-model benchmark.
struct Pipeline {
    features: FactorMatrix,
    labels: LabelSet,
    splits: Splits,
}

impl Pipeline {
    fn prepare(cfg: &RunConfig) -> Result<Self> {
        let panel = load_data(&cfg.data)?;
        let defs = load_library(&cfg.alphas.expressions).with_context(|| {
            format!(
                "loading alpha library {}",
                cfg.alphas.expressions.display()
            )
        })?;
        let features = evaluate_library(&defs, &panel, cfg.alphas.standardize);

        // the beta fit window stops where the test window starts
        let fit_dates = panel.n_dates().saturating_sub(cfg.train.test_days);
        let labels = excess_returns(
            &panel,
            cfg.label.horizon,
            None,
            cfg.label.benchmark(fit_dates),
            cfg.label.weighting(),
        )?;
        let splits = make_splits(&features, &labels, &cfg.train.split_plan())?;
        log::info!(
            "splits: {} train / {} valid / {} test samples",
            splits.train.len(),
            splits.valid.len(),
            splits.test.len()
        );
        Ok(Self {
            features,
            labels,
            splits,
        })
    }
}

fn train_one(
    cfg: &RunConfig,
    inputs: &Pipeline,
    kind: ModelKind,
    dir: &Path,
) -> Result<RunSummary> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;

    // fully-resolved effective config, written before any work
    let mut echo = cfg.clone();
    echo.model.kind = kind;
    echo.model.input_dim = inputs.features.n_factors();
    echo.output.dir = dir.to_path_buf();
    fs::write(dir.join("config.echo.toml"), toml::to_string_pretty(&echo)?)?;

    let mut model = ModelGraph::build(&echo.model, cfg.train.seed)?;

    // one JSONL line per metric event, flushed as written so an interrupted
    // run keeps everything through its last completed record
    let mut metrics = File::create(dir.join("metrics.jsonl"))?;
    let mut write_failed: Option<std::io::Error> = None;
    let record = train(
        &mut model,
        &inputs.features,
        &inputs.labels,
        &inputs.splits,
        &cfg.train.train_config(),
        |ev| {
            if write_failed.is_some() {
                return;
            }
            let line = serde_json::to_string(ev).expect("metric event serializes");
            if let Err(e) = writeln!(metrics, "{line}").and_then(|_| metrics.flush()) {
                write_failed = Some(e);
            }
        },
    )?;
    if let Some(e) = write_failed {
        return Err(e).context("writing metrics.jsonl");
    }

    // `train` leaves the model at its best-validation weights
    save_checkpoint(&dir.join("checkpoint.bin"), &mut model, None)?;
    let (_, rows) = score_samples(
        &mut model,
        &inputs.features,
        &inputs.labels,
        &inputs.splits.test,
    )?;
    write_scores_csv(File::create(dir.join("scores.csv"))?, &rows)?;

    let summary = record.summary(kind);
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(summary)
}

fn comparison_table(summaries: &[RunSummary]) -> String {
    let mut t = format!("{:<16} {:>10} {:>10} {:>10}", "Model", "Valid", "Test", "Best step");
    for s in summaries {
        t.push_str(&format!(
            "\n{:<16} {:>10.4} {:>10.4} {:>10}",
            s.model_kind, s.valid_auc, s.test_auc, s.best_step
        ));
    }
    t
}

fn synthesize(data: &DataSection) -> Result<MarketPanel> {
    Ok(generate_synthetic(
        data.tickers,
        data.days,
        data.seed,
        &RegimeConfig::default(),
    )?)
}

fn load_data(data: &DataSection) -> Result<MarketPanel> {
    match &data.source {
        Some(path) => Ok(load_panel(path, &ColumnMap::default())
            .with_context(|| format!("loading panel {}", path.display()))?),
        None => synthesize(data),
    }
}
