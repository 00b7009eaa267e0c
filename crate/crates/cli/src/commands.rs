use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hist_autodiff::Element;
use hist_core::artifacts::{
    self, BENCHMARK_FILE, CONFIG_FILE, EQUITY_FILE, METRICS_FILE, PER_DATE_FILE, TRADES_FILE,
};
use hist_core::backtest::{grid_search_k, simulate, CostModel, PortfolioState};
use hist_core::config::{canonical_hash, ExperimentConfig};
use hist_core::data::csv_io::{write_caps, write_concepts, write_loadings, write_prices};
use hist_core::data::{generate_synthetic, load_panels, DataPaths, Panels, Split, SyntheticSpec};
use hist_core::export::HiddenExport;
use hist_core::metrics::{CrossSection, PRECISION_NS};
use hist_core::model::HistModel;
use hist_core::pipeline::{split_batches, Prepared};
use hist_core::training::{predict_sections, run_seeds, MeanStd, Precision, SeedRuns};
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::{BacktestArgs, ExportArgs, GenerateArgs, KChoice, TrainArgs};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOADINGS_FILE: &str = "loadings.csv";
pub const SPEC_FILE: &str = "spec.toml";
pub const SUMMARY_FILE: &str = "summary.md";
pub const BACKTEST_FILE: &str = "backtest.json";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let spec: SyntheticSpec = toml::from_str(&read_text(&args.spec)?)
        .with_context(|| format!("parsing synthetic spec {}", args.spec.display()))?;
    let mut manifest = RunManifest::new("generate", &args.out);
    manifest.config_path = Some(args.spec.clone());
    manifest.config_hash = Some(canonical_hash(&spec));
    manifest.seeds = vec![spec.seed];
    let data = generate_synthetic(&spec)?;
    create_dir(&args.out)?;
    let paths = DataPaths::in_dir(&args.out);
    write_prices(&paths.prices, &data.prices)?;
    write_concepts(&paths.concepts, &data.edges)?;
    write_caps(&paths.caps, &data.caps)?;
    write_loadings(args.out.join(LOADINGS_FILE), &data.regimes, data.prices.stocks())?;
    let resolved = toml::to_string(&spec).context("serializing spec")?;
    write_text(&args.out.join(SPEC_FILE), &resolved)?;
    manifest.artifacts = [DataPaths::PRICES, DataPaths::CONCEPTS, DataPaths::CAPS, LOADINGS_FILE, SPEC_FILE]
        .map(String::from)
        .to_vec();
    log::info!(
        "wrote {} stocks x {} days to {}",
        data.prices.n_stocks(),
        data.prices.n_dates(),
        args.out.display()
    );
    manifest.write(&args.out.join(MANIFEST_FILE))
}

fn load_data(dir: &Path, cfg: &ExperimentConfig) -> Result<Panels> {
    load_panels(&DataPaths::in_dir(dir), cfg.data.lookback)
        .with_context(|| format!("loading data from {}", dir.display()))
}

#[derive(Serialize)]
struct MetricSummary {
    mean: f64,
    std: f64,
    seeds: usize,
    per_date_csv: Vec<String>,
}

#[derive(Serialize)]
struct FailedSeed {
    seed: u64,
    reason: String,
}

#[derive(Serialize)]
struct VariantMetrics {
    variant: String,
    metrics: BTreeMap<String, Option<MetricSummary>>,
    failed: Vec<FailedSeed>,
}

fn fmt_cell(v: Option<&MeanStd>, percent: bool) -> String {
    match v {
        Some(m) if percent => format!("{:.2} ± {:.2}", m.mean, m.std),
        Some(m) => format!("{:.4} ± {:.4}", m.mean, m.std),
        None => "n/a".to_string(),
    }
}

/// One Markdown table row per variant: IC, Rank IC and each Precision@N as
/// mean ± std over seeds.
pub fn summary_table(variant: &str, summary: &BTreeMap<String, Option<MeanStd>>) -> String {
    let mut header = String::from("| variant | IC | Rank IC |");
    let mut rule = String::from("|---|---|---|");
    let mut row = format!(
        "| {variant} | {} | {} |",
        fmt_cell(summary.get("ic").and_then(Option::as_ref), false),
        fmt_cell(summary.get("rank_ic").and_then(Option::as_ref), false)
    );
    for n in PRECISION_NS {
        let key = format!("precision@{n}");
        write!(header, " Precision@{n} (%) |").expect("string");
        rule.push_str("---|");
        write!(row, " {} |", fmt_cell(summary.get(&key).and_then(Option::as_ref), true)).expect("string");
    }
    format!("{header}\n{rule}\n{row}\n")
}

fn train_typed<T: Element>(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    variant_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<Vec<(u64, String)>> {
    let runs: SeedRuns<T> = run_seeds(&cfg.model, &cfg.train, &prepared.train, &prepared.valid, &prepared.test)?;
    let mut per_date = Vec::new();
    for run in &runs.runs {
        let seed = run.outcome.record.seed;
        let name = format!("seed-{seed}");
        let dir = variant_dir.join(&name);
        let files = artifacts::write_run_dir(&dir, &run.outcome.model, &prepared.scaler, &run.outcome.record, &run.test)?;
        let seed_cfg = ExperimentConfig { train: hist_core::training::TrainConfig { seeds: vec![seed], ..cfg.train.clone() }, ..cfg.clone() };
        write_text(&dir.join(CONFIG_FILE), &seed_cfg.to_toml())?;
        manifest.artifacts.extend(files.iter().chain([&CONFIG_FILE.to_string()]).map(|f| format!("{name}/{f}")));
        per_date.push(format!("{name}/{PER_DATE_FILE}"));
        log::info!(
            "seed {seed}: best epoch {} valid IC {:?}, test IC {:?}",
            run.outcome.record.best_epoch,
            run.outcome.record.best_valid_ic,
            run.test.ic
        );
    }
    let summary = runs.summary();
    let label = cfg.model.ablation.label();
    let metrics = VariantMetrics {
        variant: label.clone(),
        metrics: summary
            .iter()
            .map(|(k, v)| {
                let s = v.map(|m| MetricSummary { mean: m.mean, std: m.std, seeds: m.seeds, per_date_csv: per_date.clone() });
                (k.clone(), s)
            })
            .collect(),
        failed: runs.failed.iter().map(|(seed, reason)| FailedSeed { seed: *seed, reason: reason.clone() }).collect(),
    };
    let json = serde_json::to_string_pretty(&serde_json::to_value(&metrics)?)? + "\n";
    write_text(&variant_dir.join(METRICS_FILE), &json)?;
    let table = summary_table(&label, &summary);
    write_text(&variant_dir.join(SUMMARY_FILE), &table)?;
    print!("{table}");
    manifest.artifacts.extend([METRICS_FILE, SUMMARY_FILE, CONFIG_FILE].map(String::from));
    Ok(runs.failed)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    for flag in &args.ablation {
        cfg.model.ablation.disable(flag)?;
    }
    if !args.seeds.is_empty() {
        cfg.train.seeds = args.seeds.clone();
    }
    cfg.validate()?;
    let panels = load_data(&args.data, &cfg)?;
    let prepared = Prepared::new(&panels, &cfg).context("config does not fit the data")?;
    let variant_dir = args.out.join(cfg.model.ablation.label());
    create_dir(&variant_dir)?;
    let mut manifest = RunManifest::new("train", &variant_dir);
    manifest.config_path = Some(args.config.clone());
    manifest.config_hash = Some(cfg.hash());
    manifest.seeds = cfg.train.seeds.clone();
    write_text(&variant_dir.join(CONFIG_FILE), &cfg.to_toml())?;
    log::info!(
        "{} train / {} valid / {} test dates, variant {}",
        prepared.train.len(),
        prepared.valid.len(),
        prepared.test.len(),
        cfg.model.ablation.label()
    );
    let failed = match cfg.train.precision {
        Precision::F32 => train_typed::<f32>(&cfg, &prepared, &variant_dir, &mut manifest)?,
        Precision::F64 => train_typed::<f64>(&cfg, &prepared, &variant_dir, &mut manifest)?,
    };
    manifest.write(&variant_dir.join(MANIFEST_FILE))?;
    if !failed.is_empty() {
        let seeds: Vec<String> = failed.iter().map(|(s, _)| s.to_string()).collect();
        bail!("seeds {} aborted; their artifacts were not written", seeds.join(", "));
    }
    Ok(())
}

/// Config given on the command line, else the one beside the checkpoint.
fn resolve_config(explicit: Option<&PathBuf>, checkpoint: &Path) -> Result<(PathBuf, ExperimentConfig)> {
    let path = match explicit {
        Some(p) => p.clone(),
        None => checkpoint.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE),
    };
    let cfg = ExperimentConfig::load(&path).with_context(|| format!("loading config {}", path.display()))?;
    cfg.validate()?;
    Ok((path, cfg))
}

fn load_model(
    checkpoint: &Path,
    cfg: &ExperimentConfig,
) -> Result<(HistModel<f32>, hist_core::data::FeatureScaler)> {
    if !checkpoint.is_file() {
        bail!("checkpoint {} does not exist", checkpoint.display());
    }
    Ok(artifacts::load_checkpoint(checkpoint, &cfg.model)?)
}

fn sections_for(
    model: &HistModel<f32>,
    panels: &Panels,
    cfg: &ExperimentConfig,
    split: Split,
    scaler: &hist_core::data::FeatureScaler,
) -> Result<Vec<CrossSection>> {
    Ok(predict_sections(model, &split_batches(panels, cfg, split, scaler))?)
}

#[derive(Serialize)]
struct BacktestReport {
    k: usize,
    grid: Option<BTreeMap<usize, f64>>,
    costs: CostModel,
    initial_capital: f64,
    dates: usize,
    trades: usize,
    final_value: Option<f64>,
    final_cr: Option<f64>,
}

pub fn backtest(args: &BacktestArgs) -> Result<()> {
    let (config_path, mut cfg) = resolve_config(args.config.as_ref(), &args.checkpoint)?;
    if args.cost_free {
        cfg.backtest.costs = CostModel::FREE;
    }
    let (model, scaler) = load_model(&args.checkpoint, &cfg)?;
    let panels = load_data(&args.data, &cfg)?;
    let costs = cfg.backtest.costs;
    let capital = cfg.backtest.capital;
    let (k, grid) = match args.k.clone().unwrap_or(KChoice::Fixed(cfg.backtest.k)) {
        KChoice::Fixed(k) => (k, None),
        KChoice::Grid => {
            let valid = sections_for(&model, &panels, &cfg, Split::Valid, &scaler)?;
            if valid.is_empty() {
                bail!("grid search needs validation dates, none are labeled");
            }
            let (k, scores) = grid_search_k(&cfg.backtest.k_grid, |k| {
                let state = simulate(&valid, &panels.prices, k, costs, capital)?;
                Ok(state.final_return().unwrap_or(0.0))
            })?;
            log::info!("grid search picked k = {k}");
            (k, Some(scores.into_iter().collect::<BTreeMap<_, _>>()))
        }
    };
    let test = sections_for(&model, &panels, &cfg, Split::Test, &scaler)?;
    if test.is_empty() {
        bail!("no labeled test dates in the data");
    }
    let state: PortfolioState = simulate(&test, &panels.prices, k, costs, capital)?;

    create_dir(&args.out)?;
    let mut manifest = RunManifest::new("backtest", &args.out);
    manifest.config_path = Some(config_path);
    manifest.config_hash = Some(cfg.hash());
    manifest.seeds = cfg.train.seeds.clone();
    artifacts::write_equity_csv(args.out.join(EQUITY_FILE), &state)?;
    artifacts::write_trades_csv(args.out.join(TRADES_FILE), &state, panels.stocks())?;
    manifest.artifacts.extend([EQUITY_FILE, TRADES_FILE].map(String::from));
    if let Some(path) = &args.benchmark {
        let bench = artifacts::read_benchmark(path)?;
        artifacts::write_benchmark_csv(args.out.join(BENCHMARK_FILE), &bench, &state)?;
        manifest.artifacts.push(BENCHMARK_FILE.to_string());
    }
    let report = BacktestReport {
        k,
        grid,
        costs,
        initial_capital: capital,
        dates: state.equity.len(),
        trades: state.trades.len(),
        final_value: state.equity.last().map(|&(_, v)| v),
        final_cr: state.final_return(),
    };
    let json = serde_json::to_string_pretty(&serde_json::to_value(&report)?)? + "\n";
    write_text(&args.out.join(BACKTEST_FILE), &json)?;
    manifest.artifacts.push(BACKTEST_FILE.to_string());
    println!("k = {k}, final CR = {:.4}", report.final_cr.unwrap_or(0.0));
    manifest.write(&args.out.join(MANIFEST_FILE))
}

/// `<dir>/<stem>_edges.csv` beside the matrix file.
pub fn edges_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "hidden".into());
    out.with_file_name(format!("{stem}_edges.csv"))
}

fn manifest_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "hidden".into());
    out.with_file_name(format!("{stem}_{MANIFEST_FILE}"))
}

pub fn export_hidden(args: &ExportArgs) -> Result<()> {
    let (config_path, cfg) = resolve_config(args.config.as_ref(), &args.checkpoint)?;
    let (model, scaler) = load_model(&args.checkpoint, &cfg)?;
    let panels = load_data(&args.data, &cfg)?;
    let t = panels.prices.date_index(args.date).ok_or(hist_core::HistError::DateNotFound(args.date))?;
    let batch = panels
        .batch(t, Some(&scaler), false)
        .with_context(|| format!("no stock has a full feature window on {}", args.date))?;
    let names: Vec<String> = batch.stocks.iter().map(|&i| panels.stocks()[i].clone()).collect();
    let trace = model.trace(&batch)?;
    let export = HiddenExport::from_trace(args.date, &trace, &names)
        .with_context(|| format!("the hidden module did not run on {} (disabled, or fewer than 2 stocks)", args.date))?
        .clustered();
    let dir = args.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    create_dir(dir)?;
    let edges = edges_path(&args.out);
    export.write_matrix(&args.out)?;
    export.write_edges(&edges)?;
    let mut manifest = RunManifest::new("export-hidden", dir);
    manifest.config_path = Some(config_path);
    manifest.config_hash = Some(cfg.hash());
    manifest.seeds = cfg.train.seeds.clone();
    for p in [&args.out, &edges] {
        manifest.artifacts.push(p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default());
    }
    log::info!("{} stocks, {} hidden concepts on {}", export.stocks.len(), export.concepts.len(), args.date);
    manifest.write(&manifest_path(&args.out))
}
