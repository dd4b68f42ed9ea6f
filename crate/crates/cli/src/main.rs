//! `jointkg`: synthesise data, train, evaluate, and grid-search.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;

use jointkg_core::alignment::{greedy_match, write_matching};
use jointkg_core::eval::{aggregate, evaluate_kga, evaluate_kgc, push_rows, write_results, Metrics, ResultRow, DEFAULT_HITS};
use jointkg_core::kgdata::{load_dataset, sha256_file, write_transferred, MultiKg};
use jointkg_core::synth::{generate, SynthSpec};
use jointkg_core::train::{fit, metrics_log, Ablation, Checkpoint, TrainConfig, TrainState};

/// Prefix of environment variables that override config keys.
const ENV_PREFIX: &str = "JOINTKG_";

#[derive(Parser, Debug)]
#[command(name = "jointkg", version, about = "Joint multilingual KG completion and entity alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic KG pair with a known alignment.
    Synth(SynthArgs),
    /// Train a model and write its best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test splits.
    Eval(EvalArgs),
    /// Train and evaluate every configuration of a search grid.
    Grid(GridArgs),
}

#[derive(clap::Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    entities: usize,
    #[arg(long, default_value_t = 3)]
    relations: usize,
    #[arg(long, default_value_t = 4.0)]
    degree: f64,
    /// Probability of dropping each source triple.
    #[arg(long, default_value_t = 0.0)]
    missing: f64,
    #[arg(long, default_value_t = 0.3)]
    seed_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    valid_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Disable a component; may be repeated.
    #[arg(long = "ablation")]
    ablations: Vec<String>,
    /// Overrides `rng_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Task {
    Kgc,
    Kga,
    Both,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Task::Both)]
    task: Task,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct GridArgs {
    #[command(flatten)]
    run: RunArgs,
    /// TOML table of axis name to list of values; replaces the default axes.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Stop after this many configurations.
    #[arg(long)]
    limit: Option<usize>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Grid(a) => cmd_grid(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Records what a run read and how to repeat it.
fn write_manifest(out: &Path, command: &str, config: Option<&TrainConfig>, seed: u64, inputs: &[PathBuf]) -> Result<()> {
    let mut files = Vec::new();
    for p in inputs {
        files.push(json!({ "path": p.display().to_string(), "sha256": sha256_file(p)? }));
    }
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "args": std::env::args().collect::<Vec<_>>(),
        "rng_seed": seed,
        "config": config,
        "inputs": files,
    });
    write(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)
}

fn data_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        valid_fraction: a.valid_fraction,
        test_fraction: a.test_fraction,
        ..SynthSpec::new(a.entities, a.relations, a.degree, a.missing, a.seed_fraction, a.seed)
    };
    let pair = generate(&spec)?;
    pair.write(&a.out)?;
    info!("{}", pair.describe().replace('\n', "; "));
    let manifest = json!({
        "command": "synth",
        "version": env!("CARGO_PKG_VERSION"),
        "args": std::env::args().collect::<Vec<_>>(),
        "rng_seed": a.seed,
        "spec": spec,
    });
    write(&a.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)
}

/// Parses an environment value as a TOML value, falling back to a string.
fn env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Reads the config file, then applies `JOINTKG_<KEY>` variables, then the
/// `--seed` and `--ablation` flags.
fn load_config(run: &RunArgs) -> Result<TrainConfig> {
    let text = fs::read_to_string(&run.config).with_context(|| format!("reading {}", run.config.display()))?;
    let mut table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", run.config.display()))?;
    for (key, value) in std::env::vars() {
        if let Some(name) = key.strip_prefix(ENV_PREFIX) {
            let name = name.to_ascii_lowercase();
            if name == "log" {
                continue;
            }
            info!("config override from environment: {name} = {value}");
            table.insert(name, env_value(&value));
        }
    }
    let mut config = TrainConfig::from_toml(&toml::to_string(&table)?)?;
    if let Some(s) = run.seed {
        config.rng_seed = s;
    }
    for a in &run.ablations {
        let a = Ablation::parse(a)?;
        if !config.ablations.contains(&a) {
            config.ablations.push(a);
        }
    }
    Ok(config)
}

fn load_data(dir: &Path, config: &TrainConfig) -> Result<MultiKg> {
    Ok(load_dataset(dir, config.seed_train_fraction, config.rng_seed, config.surface_info)?.0)
}

/// Fits one configuration and writes checkpoint, metrics log, transfer
/// sidecars, effective config, and manifest into `out`.
fn train_into(config: TrainConfig, multikg: MultiKg, data: &Path, out: &Path) -> Result<Checkpoint> {
    create_dir(out)?;
    write(&out.join("config.toml"), config.to_toml())?;
    let outcome = fit(multikg.clone(), config.clone())?;
    write(&out.join("metrics.tsv"), metrics_log(&config, &outcome.history))?;
    outcome.best.save(&out.join("checkpoint.json"))?;
    if outcome.best.transferred.iter().any(|t| !t.is_empty()) {
        let state = TrainState::from_checkpoint(multikg, outcome.best.clone())?;
        for kg in &state.multikg.kgs {
            write_transferred(&out.join(format!("transferred_{}.tsv", kg.id)), kg, &state.multikg.relations)?;
        }
    }
    write_manifest(out, "train", Some(&config), config.rng_seed, &data_files(data)?)?;
    info!(
        "best epoch {} with validation MRR {:.4}",
        outcome.best.epoch, outcome.best.valid_mrr
    );
    Ok(outcome.best)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let config = load_config(&a.run)?;
    let multikg = load_data(&a.run.data, &config)?;
    train_into(config, multikg, &a.run.data, &a.run.out)?;
    Ok(())
}

fn mean_metrics(all: &[Metrics]) -> Metrics {
    let n = all.len() as f64;
    Metrics {
        count: all.iter().map(|m| m.count).sum(),
        mrr: all.iter().map(|m| m.mrr).sum::<f64>() / n,
        hits: all[0]
            .hits
            .iter()
            .enumerate()
            .map(|(i, &(k, _))| (k, all.iter().map(|m| m.hits[i].1).sum::<f64>() / n))
            .collect(),
    }
}

/// Test-split metrics for `ckpt` on `multikg`; matchings are written to
/// `out` when alignment is evaluated.
fn evaluate(ckpt: Checkpoint, multikg: MultiKg, task: Task, out: &Path) -> Result<Vec<ResultRow>> {
    let state = TrainState::from_checkpoint(multikg, ckpt)?;
    let m = &state.multikg;
    let mut rows = Vec::new();
    if task != Task::Kga {
        let emb = state.completion_embeddings()?;
        let mut per_kg = Vec::new();
        for (k, split) in m.kgc_splits.iter().enumerate() {
            if split.test.is_empty() {
                warn!("kg {}: empty test split, skipped", m.kgs[k].id);
                continue;
            }
            let metrics = aggregate(&evaluate_kgc(m, &emb, k, &split.test), &DEFAULT_HITS)?;
            push_rows(&mut rows, "kgc", &m.kgs[k].id, &metrics);
            per_kg.push(metrics);
        }
        if per_kg.is_empty() {
            bail!("[eval] no completion test triples");
        }
        push_rows(&mut rows, "kgc", "mean", &mean_metrics(&per_kg));
    }
    if task != Task::Kgc {
        let finals = state.finals()?;
        let offsets = m.offsets();
        let mut per_pair = Vec::new();
        for split in &m.alignments {
            let (a, b) = split.test.kg_pair;
            let scope = format!("{}-{}", m.kgs[a].id, m.kgs[b].id);
            if split.test.is_empty() {
                warn!("{scope}: no test seeds, skipped");
                continue;
            }
            let metrics = aggregate(&evaluate_kga(m, &finals, &split.test)?, &DEFAULT_HITS)?;
            push_rows(&mut rows, "kga", &scope, &metrics);
            per_pair.push(metrics);

            let rows_of = |k: usize| (offsets[k]..offsets[k] + m.kgs[k].entity_count()).collect::<Vec<_>>();
            let matrix = jointkg_core::alignment::build_alignment_matrix(
                (a, b),
                &finals.select_rows(&rows_of(a)),
                &finals.select_rows(&rows_of(b)),
            )?;
            write_matching(
                &out.join(format!("matching_{scope}.tsv")),
                &greedy_match(&matrix.values),
                m.kgs[a].entities.labels(),
                m.kgs[b].entities.labels(),
            )?;
        }
        if per_pair.is_empty() {
            bail!("[eval] no alignment test pairs");
        }
        push_rows(&mut rows, "kga", "mean", &mean_metrics(&per_pair));
    }
    Ok(rows)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let multikg = load_data(&a.data, &ckpt.config)?;
    create_dir(&a.out)?;
    let config = ckpt.config.clone();
    let rows = evaluate(ckpt, multikg, a.task, &a.out)?;
    write_results(&a.out, &rows)?;
    print!("{}", jointkg_core::eval::summary_table(&rows));
    let mut inputs = data_files(&a.data)?;
    inputs.push(a.checkpoint.clone());
    write_manifest(&a.out, "eval", Some(&config), config.rng_seed, &inputs)
}

/// Default grid axes: the search space used for model selection.
fn default_grid() -> toml::Table {
    toml::from_str(
        r#"
        layers = [1, 2, 3]
        dim = [128, 256, 512]
        lr_completion = [1e-4, 5e-4, 1e-3]
        lr_alignment = [1e-4, 5e-4, 1e-3]
        beta = [0.1, 0.2, 0.3]
        margin_completion = [0.0, 5.0, 10.0]
        margin_alignment = [0.0, 5.0, 10.0]
        "#,
    )
    .expect("static grid parses")
}

/// Cartesian product of the axes, in key order with the last key varying
/// fastest.
fn grid_points(axes: &toml::Table) -> Result<Vec<toml::Table>> {
    let mut points = vec![toml::Table::new()];
    for (key, values) in axes {
        let values = values
            .as_array()
            .with_context(|| format!("grid axis `{key}` must be a list"))?;
        let mut next = Vec::with_capacity(points.len() * values.len());
        for p in &points {
            for v in values {
                let mut q = p.clone();
                q.insert(key.clone(), v.clone());
                next.push(q);
            }
        }
        points = next;
    }
    Ok(points)
}

fn cmd_grid(a: GridArgs) -> Result<()> {
    let base = load_config(&a.run)?;
    let axes = match &a.grid {
        Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => default_grid(),
    };
    let mut points = grid_points(&axes)?;
    if let Some(limit) = a.limit {
        points.truncate(limit);
    }
    create_dir(&a.run.out)?;
    let multikg = load_data(&a.run.data, &base)?;
    let mut board = Vec::new();
    for (i, point) in points.iter().enumerate() {
        let mut table: toml::Table = toml::from_str(&base.to_toml())?;
        table.extend(point.clone());
        let config = TrainConfig::from_toml(&toml::to_string(&table)?)?;
        let dir = a.run.out.join(format!("run{i:04}"));
        info!("grid run {i}: {}", toml::to_string(point)?.replace('\n', " "));
        let best = train_into(config, multikg.clone(), &a.run.data, &dir)?;
        let rows = evaluate(best.clone(), multikg.clone(), Task::Both, &dir)?;
        write_results(&dir, &rows)?;
        board.push((i, best.valid_mrr, best.epoch, toml::to_string(point)?.replace('\n', " ")));
    }
    board.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let mut text = String::from("run\tvalid_mrr\tbest_epoch\tsettings\n");
    for (i, mrr, epoch, settings) in &board {
        text.push_str(&format!("run{i:04}\t{mrr:.6}\t{epoch}\t{}\n", settings.trim()));
    }
    write(&a.run.out.join("leaderboard.tsv"), &text)?;
    print!("{text}");
    write_manifest(&a.run.out, "grid", Some(&base), base.rng_seed, &data_files(&a.run.data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_values_parse_as_toml() {
        assert_eq!(env_value("3"), toml::Value::Integer(3));
        assert_eq!(env_value("0.5"), toml::Value::Float(0.5));
        assert_eq!(env_value("true"), toml::Value::Boolean(true));
        assert_eq!(env_value("last_epoch"), toml::Value::String("last_epoch".into()));
        assert_eq!(
            env_value(r#"["no_sir"]"#),
            toml::Value::Array(vec![toml::Value::String("no_sir".into())])
        );
    }

    #[test]
    fn grid_is_a_product() {
        let axes: toml::Table = toml::from_str("a = [1, 2]\nb = [3, 4, 5]").unwrap();
        let pts = grid_points(&axes).unwrap();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[1]["b"].as_integer(), Some(4));
        assert_eq!(grid_points(&default_grid()).unwrap().len(), 3usize.pow(7));
    }
}
