//! Command implementations.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use vwap_forge_core::config::AppConfig;
use vwap_forge_core::features::{bar_feature_matrix, build_features, FeatureConfig, WindowSet};
use vwap_forge_core::market_data::{
    fetch_klines, generate_synthetic, parse_bar_fields, read_csv, split, write_csv, Bar,
    BarSeries, HttpTransport, CSV_HEADER,
};
use vwap_forge_core::model::{Model, ModelKind};
use vwap_forge_core::numerics::Tensor;
use vwap_forge_core::objectives::{
    evaluate_model, write_allocation_stats_csv, write_slippage_csv, LossKind,
};
use vwap_forge_core::training::{
    aggregate, experiment_grid, format_report_table, run_experiment, write_report_csv,
    CompletedRun, RunRecord,
};

use crate::{Cli, Command};

pub fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Fetch { symbol, start, end } => fetch(&cli, &config, symbol, start, end),
        Command::Synth { bars, asset } => synth(&cli, &config, *bars, asset.as_deref()),
        Command::Split { data } => split_cmd(&cli, &config, data),
        Command::Train {
            models,
            losses,
            data,
            jobs,
        } => train_cmd(&cli, &config, models, losses, data, *jobs),
        Command::Evaluate { model, data, split } => {
            evaluate_cmd(&cli, &config, model, data, split)
        }
        Command::Execute { model, stream } => execute_cmd(&cli, &config, model, stream),
        Command::Report { runs } => report_cmd(&cli, runs),
    }
}

fn load_config(cli: &Cli) -> Result<AppConfig> {
    let mut config = match &cli.config {
        Some(path) => AppConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => {
            let mut c = AppConfig::default();
            c.apply_env_overrides(|k| std::env::var(k).ok());
            c
        }
    };
    if let Some(lookback) = cli.lookback {
        config.features.lookback = lookback;
    }
    if let Some(horizon) = cli.horizon {
        config.features.horizon = horizon;
    }
    if let Some(seed) = cli.seed {
        config.train.seeds = vec![seed];
    }
    config.features.validate()?;
    Ok(config)
}

fn parse_time(s: &str) -> Result<i64> {
    if let Ok(ms) = s.parse::<i64>() {
        return Ok(ms);
    }
    chrono::DateTime::parse_from_rfc3339(s)
        .map(|t| t.timestamp_millis())
        .map_err(|e| anyhow!("`{s}` is neither epoch milliseconds nor RFC 3339: {e}"))
}

fn fetch(cli: &Cli, config: &AppConfig, symbol: &str, start: &str, end: &str) -> Result<()> {
    let start = parse_time(start)?;
    let end = parse_time(end)?;
    let klines = config.klines_config();
    let series = fetch_klines(&HttpTransport::new(), &klines, symbol, start, end)
        .with_context(|| format!("fetching {symbol} klines from {}", klines.endpoint))?;
    fs::create_dir_all(&cli.out)?;
    let path = cli.out.join(format!("{}.csv", symbol.to_lowercase()));
    write_csv(&series, &path)?;
    println!("wrote {} bars to {}", series.len(), path.display());
    Ok(())
}

fn synth(cli: &Cli, config: &AppConfig, bars: usize, asset: Option<&str>) -> Result<()> {
    let mut spec = config.synth.clone();
    if let Some(asset) = asset {
        spec.asset = asset.to_string();
    }
    let seed = cli.seed.unwrap_or(1);
    let series = generate_synthetic(&spec, bars, seed)?;
    fs::create_dir_all(&cli.out)?;
    let path = cli.out.join(format!("{}.csv", spec.asset.to_lowercase()));
    write_csv(&series, &path)?;
    println!("wrote {} bars to {}", series.len(), path.display());
    Ok(())
}

fn split_cmd(cli: &Cli, config: &AppConfig, data: &Path) -> Result<()> {
    let series = read_csv(data, None)?;
    let min = config.features.min_series_len();
    let (train, validation, test) = split(&series, &config.split, min)?;
    fs::create_dir_all(&cli.out)?;
    let bounds = |s: &BarSeries| {
        serde_json::json!({
            "start_ms": s.bars.first().map(|b| b.open_time),
            "end_ms": s.bars.last().map(|b| b.open_time),
            "bars": s.len(),
        })
    };
    let boundaries = serde_json::json!({
        "asset": series.asset,
        "train": bounds(&train),
        "validation": bounds(&validation),
        "test": bounds(&test),
    });
    for (name, part) in [("train", &train), ("validation", &validation), ("test", &test)] {
        write_csv(part, &cli.out.join(format!("{name}.csv")))?;
    }
    fs::write(
        cli.out.join("split.json"),
        serde_json::to_string_pretty(&boundaries)?,
    )?;
    println!("{}", serde_json::to_string_pretty(&boundaries)?);
    Ok(())
}

fn load_split_features(
    config: &AppConfig,
    data: &Path,
    fcfg: &FeatureConfig,
) -> Result<(WindowSet, WindowSet, WindowSet)> {
    let series = read_csv(data, None)?;
    let (train, validation, test) = split(&series, &config.split, fcfg.min_series_len())?;
    Ok((
        build_features(&train, fcfg)?,
        build_features(&validation, fcfg)?,
        build_features(&test, fcfg)?,
    ))
}

fn run_dir(out: &Path, run: &CompletedRun) -> PathBuf {
    let loss = run
        .spec
        .loss
        .map(|l| l.to_string())
        .unwrap_or_else(|| "na".into());
    out.join("runs")
        .join(format!("{}_{}", run.spec.kind, loss))
        .join(format!("seed{}", run.spec.seed))
}

fn write_history_csv(run: &CompletedRun, path: &Path) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,learning_rate\n");
    for e in &run.outcome.history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch, e.train_loss, e.val_loss, e.learning_rate
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

fn train_cmd(
    cli: &Cli,
    config: &AppConfig,
    models: &[String],
    losses: &[String],
    data: &Path,
    jobs: usize,
) -> Result<()> {
    let kinds: Vec<ModelKind> = models
        .iter()
        .map(|m| m.parse().map_err(|e| anyhow!("{e}")))
        .collect::<Result<_>>()?;
    let losses: Vec<LossKind> = losses
        .iter()
        .map(|l| l.parse().map_err(|e: String| anyhow!(e)))
        .collect::<Result<_>>()?;

    let fcfg = config.features;
    let (train_set, val_set, test_set) = load_split_features(config, data, &fcfg)?;
    eprintln!(
        "windows: train {} / validation {} / test {} (degenerate dropped: {}/{}/{})",
        train_set.len(),
        val_set.len(),
        test_set.len(),
        train_set.degenerate_windows,
        val_set.degenerate_windows,
        test_set.degenerate_windows,
    );

    let base = config.model_config(kinds[0]);
    let specs = experiment_grid(&kinds, &losses, &config.train.seeds);
    let (completed, failures) = run_experiment(
        &base,
        &specs,
        &train_set,
        &val_set,
        &test_set,
        &config.train,
        jobs,
    );
    for f in &failures {
        eprintln!(
            "run failed: model={} loss={} seed={}: {}",
            f.spec.kind,
            f.spec.loss.map(|l| l.to_string()).unwrap_or_else(|| "n/a".into()),
            f.spec.seed,
            f.error
        );
    }
    if completed.is_empty() {
        bail!("all {} runs failed", failures.len());
    }

    fs::create_dir_all(&cli.out)?;
    let mut records = Vec::with_capacity(completed.len());
    for run in &completed {
        let dir = run_dir(&cli.out, run);
        fs::create_dir_all(&dir)?;
        run.outcome.model.save(&dir.join("checkpoint.json"))?;
        write_history_csv(run, &dir.join("history.csv"))?;
        fs::write(
            dir.join("metrics.json"),
            serde_json::to_string_pretty(&run.record)?,
        )?;
        write_slippage_csv(&run.evaluation.records, &dir.join("slippage.csv"))?;
        write_allocation_stats_csv(
            &run.evaluation.allocation_stats,
            &dir.join("allocation_stats.csv"),
        )?;
        records.push(run.record.clone());
    }

    let rows = aggregate(&records);
    write_report_csv(&rows, &cli.out.join("report.csv"))?;
    let table = format_report_table(&rows);
    fs::write(cli.out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// `--model` accepts a checkpoint path or the literal `naive`.
fn load_model(config: &AppConfig, spec: &str, seed: u64) -> Result<Model> {
    if spec == "naive" {
        return Ok(Model::new(config.model_config(ModelKind::Naive), seed)?);
    }
    let path = Path::new(spec);
    if !path.exists() {
        bail!("`{spec}` is neither `naive` nor an existing checkpoint file");
    }
    Ok(Model::load(path)?)
}

fn evaluate_cmd(
    cli: &Cli,
    config: &AppConfig,
    model_spec: &str,
    data: &Path,
    split_choice: &str,
) -> Result<()> {
    let model = load_model(config, model_spec, cli.seed.unwrap_or(1))?;
    let fcfg = FeatureConfig {
        lookback: model.config.lookback,
        horizon: model.config.horizon,
        rolling_window: config.features.rolling_window,
    };
    let series = read_csv(data, None)?;
    let set = match split_choice {
        "all" => build_features(&series, &fcfg)?,
        "train" | "validation" | "test" => {
            let (train, validation, test) =
                split(&series, &config.split, fcfg.min_series_len())?;
            let part = match split_choice {
                "train" => train,
                "validation" => validation,
                _ => test,
            };
            build_features(&part, &fcfg)?
        }
        other => bail!("unknown split `{other}` (expected train|validation|test|all)"),
    };

    let evaluation = evaluate_model(&model, &set, config.train.batch_size)?;
    fs::create_dir_all(&cli.out)?;
    let summary = serde_json::json!({
        "format_version": 1,
        "model": model.config.kind.to_string(),
        "asset": set.asset,
        "split": split_choice,
        "n_windows": evaluation.metrics.n_windows,
        "degenerate_windows": set.degenerate_windows,
        "abs_vwap_loss": evaluation.metrics.abs_vwap_loss,
        "quad_vwap_loss": evaluation.metrics.quad_vwap_loss,
        "r2_volume": evaluation.metrics.r2_volume,
    });
    fs::write(
        cli.out.join("metrics.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    write_slippage_csv(&evaluation.records, &cli.out.join("slippage.csv"))?;
    write_allocation_stats_csv(
        &evaluation.allocation_stats,
        &cli.out.join("allocation_stats.csv"),
    )?;
    println!(
        "model={} asset={} split={} windows={}\nabs_vwap_loss(1e-2)={:.8} quad_vwap_loss(1e-4)={:.8} r2_vol_curve={:.8}",
        model.config.kind,
        set.asset,
        split_choice,
        evaluation.metrics.n_windows,
        evaluation.metrics.abs_scaled(),
        evaluation.metrics.quad_scaled(),
        evaluation.metrics.r2_volume,
    );
    Ok(())
}

fn execute_cmd(cli: &Cli, config: &AppConfig, model_spec: &str, stream: &str) -> Result<()> {
    let model = load_model(config, model_spec, cli.seed.unwrap_or(1))?;
    let fcfg = FeatureConfig {
        lookback: model.config.lookback,
        horizon: model.config.horizon,
        rolling_window: config.features.rolling_window,
    };
    let reader: Box<dyn BufRead> = if stream == "-" {
        Box::new(std::io::stdin().lock())
    } else {
        Box::new(std::io::BufReader::new(
            fs::File::open(stream).with_context(|| format!("opening {stream}"))?,
        ))
    };

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let start_row = fcfg.first_usable_row();
    let window_rows = fcfg.window_rows();
    let mut bars: Vec<Bar> = Vec::new();
    let mut emitted = 0usize;
    let mut saw_header = false;

    for (line_index, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if !saw_header {
            saw_header = true;
            if fields == CSV_HEADER {
                continue; // header row
            }
        }
        let bar = parse_bar_fields(&fields, line_index)?;
        bars.push(bar);

        let observed_rows = bars.len().saturating_sub(start_row).min(window_rows);
        if observed_rows < fcfg.lookback {
            continue;
        }
        // Recompute features over the observed prefix and rerun the
        // forward pass with a zero-padded future; causality makes this
        // equivalent to an incremental implementation.
        let series = BarSeries::new("stream", bars.clone())?;
        let matrix = bar_feature_matrix(&series, &fcfg);
        let mut values = Vec::with_capacity(observed_rows * matrix.dims2().1);
        for t in 0..observed_rows {
            values.extend_from_slice(matrix.row(start_row + t));
        }
        let observed = Tensor::new(vec![observed_rows, matrix.dims2().1], values)?;
        let decided = model.deploy_step(&observed)?;
        for (i, fraction) in decided.iter().enumerate().skip(emitted) {
            writeln!(out, "{},{}", i + 1, fraction)?;
        }
        out.flush()?;
        emitted = decided.len();
        if emitted == fcfg.horizon {
            break;
        }
    }

    if emitted < fcfg.horizon {
        bail!(
            "stream ended after {} bars with only {emitted} of {} steps decided \
             (execution needs {} warm-up bars before the first decision)",
            bars.len(),
            fcfg.horizon,
            start_row + fcfg.lookback,
        );
    }
    Ok(())
}

fn collect_run_records(dir: &Path, records: &mut Vec<RunRecord>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_run_records(&path, records)?;
        } else if path.file_name().map(|n| n == "metrics.json").unwrap_or(false) {
            let body = fs::read_to_string(&path)?;
            match serde_json::from_str::<RunRecord>(&body) {
                Ok(record) => records.push(record),
                // evaluate() also writes a metrics.json with a different
                // shape; skip anything that is not a run record
                Err(_) => continue,
            }
        }
    }
    Ok(())
}

fn report_cmd(cli: &Cli, runs: &Path) -> Result<()> {
    let mut records = Vec::new();
    collect_run_records(runs, &mut records)?;
    if records.is_empty() {
        bail!("no run records (metrics.json) found under {}", runs.display());
    }
    let order = |r: &RunRecord| {
        let kind_rank = r
            .model
            .parse::<ModelKind>()
            .map(|k| ModelKind::ALL.iter().position(|x| *x == k).unwrap_or(9))
            .unwrap_or(9);
        let loss_rank = r
            .loss
            .as_deref()
            .and_then(|l| l.parse::<LossKind>().ok())
            .map(|l| LossKind::ALL.iter().position(|x| *x == l).unwrap_or(9))
            .unwrap_or(0);
        (r.asset.clone(), kind_rank, loss_rank, r.seed)
    };
    records.sort_by_key(order);

    let rows = aggregate(&records);
    fs::create_dir_all(&cli.out)?;
    write_report_csv(&rows, &cli.out.join("report.csv"))?;
    let table = format_report_table(&rows);
    fs::write(cli.out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}
