//! Command-line surface: model-space queries, pattern generation, training,
//! density sweeps and kernel benchmarks, with machine-readable CSV/JSON
//! outputs. Experiment configuration is a flat `key = value` file; CLI
//! flags and `--set key=value` overrides win over the file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datasets::{load_csv, load_idx, subsample_split, synthetic_blobs, Dataset};
use crate::error::{Error, Result};
use crate::modelspace::{expected_variation, usn_space, SpaceParams};
use crate::network::{init_model, Activation, HiddenLayerConfig, ModelConfig, OptimizerConfig};
use crate::rng::{derive_seed, stream};
use crate::topology::{degree_spec, generate_uniform};
use crate::training::{run_replicates, ReplicateOutcome, TopologyMode, TrainHistory};

pub const HISTORY_HEADER: &str = "run,epoch,train_loss,train_acc,val_loss,val_acc,seconds";
/// Fig. 5-style density axis used when a sweep config does not override it.
pub const DEFAULT_DENSITY_GRID: [f64; 10] =
    [0.0, 0.004, 0.016, 0.05, 0.1, 0.2, 0.333, 0.5, 0.75, 1.0];

#[derive(Parser, Debug)]
#[command(name = "usn", version, about = "Uniform sparse network experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default, Clone)]
pub struct CommonFlags {
    /// Flat key=value experiment config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker-pool size (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Extra key=value config overrides; flags win over the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Model-space sizes as log10 CSV rows, one per density.
    Space {
        n_in: u32,
        n_out: u32,
        /// Single density; omit when using --grid.
        density: Option<f64>,
        /// Comma-separated density grid.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Generate a uniform sparsity pattern file (USN1 format).
    Gen {
        n_in: u32,
        n_out: u32,
        density: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output pattern file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train replicates; writes history.csv, summary.json and model.ckpt.
    Train {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Full factorial sweep over hidden_size_grid x density_grid.
    Sweep {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Kernel and full-step timings over shapes and densities.
    Bench {
        /// Layer shapes as N_INxN_OUT (input features x output units).
        #[arg(long = "shape", value_name = "NxM", default_values_t = [String::from("2000x1024")])]
        shapes: Vec<String>,
        /// Comma-separated densities.
        #[arg(long, default_value = "0.1,1.0")]
        densities: String,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        /// Timing CSV destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Which dataset a training config refers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        val_images: PathBuf,
        val_labels: PathBuf,
    },
    Csv {
        path: PathBuf,
        label_column: String,
    },
    Blobs {
        classes: usize,
        features: usize,
        per_class: usize,
        separation: f64,
    },
}

/// Fully resolved experiment configuration; embedded verbatim in every
/// output file for auditability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Training subset size; 0 keeps every available sample.
    pub n_train: usize,
    /// Validation subset size; 0 keeps every available sample (IDX) or
    /// none (single-file datasets).
    pub n_val: usize,
    pub stratified: bool,
    pub hidden_size: u32,
    pub density: f64,
    pub activation: Activation,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_runs: usize,
    pub topology_mode: TopologyMode,
    pub density_grid: Vec<f64>,
    pub hidden_size_grid: Vec<u32>,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::Blobs {
                classes: 2,
                features: 20,
                per_class: 100,
                separation: 6.0,
            },
            n_train: 0,
            n_val: 0,
            stratified: false,
            hidden_size: 250,
            density: 0.1,
            activation: Activation::Relu,
            dropout: 0.2,
            learning_rate: 0.001,
            epochs: 30,
            batch_size: 32,
            n_runs: 1,
            topology_mode: TopologyMode::Random,
            density_grid: DEFAULT_DENSITY_GRID.to_vec(),
            hidden_size_grid: vec![250],
            seed: 42,
            out: PathBuf::from("out"),
        }
    }
}

/// Parses flat `key = value` lines; `#` starts a comment, blank lines are
/// skipped. Later keys win.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config(format!(
            "config line {}: expected key = value, got {raw:?}",
            i + 1
        )))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<T>()
                .map_err(|_| Error::Config(format!("bad {what} entry {p:?}")))
        })
        .collect()
}

impl ExperimentConfig {
    /// Builds the resolved config: defaults, then the config file, then
    /// `--set` overrides, then the dedicated flags.
    pub fn resolve(common: &CommonFlags) -> Result<ExperimentConfig> {
        let mut kv = BTreeMap::new();
        if let Some(path) = &common.config {
            let text = fs::read_to_string(path)?;
            kv = parse_config_text(&text)?;
        }
        for item in &common.overrides {
            let (k, v) = item.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set expects key=value, got {item:?}"))
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&kv)?;
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &common.out {
            cfg.out = out.clone();
        }
        Ok(cfg)
    }

    fn apply(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        let get = |k: &str| kv.get(k).map(String::as_str);
        if let Some(kind) = get("dataset") {
            self.dataset = match kind {
                "idx" | "mnist" => DatasetSpec::Idx {
                    train_images: required_path(kv, "train_images")?,
                    train_labels: required_path(kv, "train_labels")?,
                    val_images: required_path(kv, "val_images")?,
                    val_labels: required_path(kv, "val_labels")?,
                },
                "csv" => DatasetSpec::Csv {
                    path: required_path(kv, "csv_path")?,
                    label_column: kv
                        .get("label_column")
                        .cloned()
                        .ok_or_else(|| Error::Config("csv dataset needs label_column".into()))?,
                },
                "blobs" => DatasetSpec::Blobs {
                    classes: parse_key(kv, "classes")?.unwrap_or(2),
                    features: parse_key(kv, "features")?.unwrap_or(20),
                    per_class: parse_key(kv, "per_class")?.unwrap_or(100),
                    separation: parse_key(kv, "separation")?.unwrap_or(6.0),
                },
                other => return Err(Error::Config(format!("unknown dataset kind {other:?}"))),
            };
        }
        set_from(kv, "n_train", &mut self.n_train)?;
        set_from(kv, "n_val", &mut self.n_val)?;
        set_from(kv, "stratified", &mut self.stratified)?;
        set_from(kv, "hidden_size", &mut self.hidden_size)?;
        set_from(kv, "density", &mut self.density)?;
        set_from(kv, "dropout", &mut self.dropout)?;
        set_from(kv, "learning_rate", &mut self.learning_rate)?;
        set_from(kv, "epochs", &mut self.epochs)?;
        set_from(kv, "batch_size", &mut self.batch_size)?;
        set_from(kv, "n_runs", &mut self.n_runs)?;
        set_from(kv, "seed", &mut self.seed)?;
        if let Some(v) = get("activation") {
            self.activation = match v {
                "relu" => Activation::Relu,
                "identity" => Activation::Identity,
                other => return Err(Error::Config(format!("unknown activation {other:?}"))),
            };
        }
        if let Some(v) = get("topology_mode") {
            self.topology_mode = match v {
                "fixed" => TopologyMode::Fixed,
                "random" => TopologyMode::Random,
                other => return Err(Error::Config(format!("unknown topology_mode {other:?}"))),
            };
        }
        if let Some(v) = get("density_grid") {
            self.density_grid = parse_list(v, "density_grid")?;
        }
        if let Some(v) = get("hidden_size_grid") {
            self.hidden_size_grid = parse_list(v, "hidden_size_grid")?;
        }
        if let Some(v) = get("out") {
            self.out = PathBuf::from(v);
        }
        Ok(())
    }

    fn model_config(&self, input_size: u32, output_size: u32) -> ModelConfig {
        ModelConfig {
            input_size,
            hidden_layers: vec![HiddenLayerConfig {
                size: self.hidden_size,
                density: self.density,
                activation: self.activation,
                dropout_rate: self.dropout,
            }],
            output_size,
            seed: self.seed,
            optimizer: OptimizerConfig {
                learning_rate: self.learning_rate,
                ..OptimizerConfig::default()
            },
        }
    }

    /// Loads and splits the configured dataset into (train, validation).
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let split_seed = derive_seed(self.seed, stream::SPLIT);
        match &self.dataset {
            DatasetSpec::Idx {
                train_images,
                train_labels,
                val_images,
                val_labels,
            } => {
                let full_train = load_idx(train_images, train_labels)?;
                let train = if self.n_train > 0 && self.n_train < full_train.n_samples() {
                    subsample_split(&full_train, self.n_train, 0, split_seed, self.stratified)?.0
                } else {
                    full_train
                };
                let full_val = load_idx(val_images, val_labels)?;
                let val = if self.n_val > 0 && self.n_val < full_val.n_samples() {
                    subsample_split(&full_val, self.n_val, 0, split_seed ^ 1, self.stratified)?.0
                } else {
                    full_val
                };
                if train.n_features() != val.n_features() || train.n_classes() != val.n_classes() {
                    return Err(Error::Shape(
                        "train/validation files disagree on features or classes".into(),
                    ));
                }
                Ok((train, val))
            }
            DatasetSpec::Csv { path, label_column } => {
                let ds = load_csv(path, label_column)?;
                let n_train = if self.n_train > 0 {
                    self.n_train
                } else {
                    ds.n_samples().saturating_sub(self.n_val)
                };
                subsample_split(&ds, n_train, self.n_val, split_seed, self.stratified)
            }
            DatasetSpec::Blobs {
                classes,
                features,
                per_class,
                separation,
            } => {
                let ds = synthetic_blobs(*classes, *features, *per_class, *separation, split_seed)?;
                let n_train = if self.n_train > 0 {
                    self.n_train
                } else {
                    ds.n_samples() * 3 / 4
                };
                let n_val = if self.n_val > 0 {
                    self.n_val
                } else {
                    ds.n_samples() - n_train
                };
                subsample_split(&ds, n_train, n_val, split_seed, self.stratified)
            }
        }
    }
}

fn required_path(kv: &BTreeMap<String, String>, key: &str) -> Result<PathBuf> {
    kv.get(key)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config(format!("idx dataset needs {key}")))
}

fn parse_key<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match kv.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| Error::Config(format!("bad value for {key}: {v:?}"))),
    }
}

fn set_from<T: std::str::FromStr>(
    kv: &BTreeMap<String, String>,
    key: &str,
    slot: &mut T,
) -> Result<()> {
    if let Some(v) = parse_key(kv, key)? {
        *slot = v;
    }
    Ok(())
}

/// Writes a file atomically: temp file in the target directory, then
/// rename. An interrupted run never leaves a partial file at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Renders training histories as the long-format history CSV.
pub fn history_csv(histories: &[TrainHistory]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for (run, h) in histories.iter().enumerate() {
        for r in &h.records {
            writeln!(
                out,
                "{run},{},{},{},{},{},{:.6}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.seconds
            )
            .unwrap();
        }
    }
    out
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.to_string() }));
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Space {
            n_in,
            n_out,
            density,
            grid,
        } => cmd_space(n_in, n_out, density, grid.as_deref()),
        Command::Gen {
            n_in,
            n_out,
            density,
            seed,
            out,
        } => cmd_gen(n_in, n_out, density, seed, &out),
        Command::Train { common } => {
            configure_threads(common.threads)?;
            cmd_train(&ExperimentConfig::resolve(&common)?)
        }
        Command::Sweep { common } => {
            configure_threads(common.threads)?;
            cmd_sweep(&ExperimentConfig::resolve(&common)?)
        }
        Command::Bench {
            shapes,
            densities,
            reps,
            batch,
            out,
        } => cmd_bench(&shapes, &densities, reps, batch, out.as_deref()),
    }
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// `space N_IN N_OUT DENSITY` / `--grid d1,d2,...`: one CSV row per density
/// with the log10 model-space quantities and the structure variation.
pub fn cmd_space(n_in: u32, n_out: u32, density: Option<f64>, grid: Option<&str>) -> Result<()> {
    let densities: Vec<f64> = match (density, grid) {
        (Some(d), None) => vec![d],
        (None, Some(g)) => parse_list(g, "density grid")?,
        _ => {
            return Err(Error::Config(
                "give either a single density or --grid, not both".into(),
            ))
        }
    };
    print!("{}", space_csv(n_in, n_out, &densities)?);
    Ok(())
}

/// The `space` CSV body (also used by the integration tests).
pub fn space_csv(n_in: u32, n_out: u32, densities: &[f64]) -> Result<String> {
    let mut out =
        String::from("n_in,n_out,density,log10_n,log10_n1,log10_n2,log10_nu,log10_p,variation\n");
    for &d in densities {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::Domain(format!("density {d} outside [0,1]")));
        }
        let params = SpaceParams::new(n_in, n_out, d)?;
        let s = usn_space(&params);
        writeln!(
            out,
            "{n_in},{n_out},{d},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            s.log10_n,
            s.log10_n1,
            s.log10_n2,
            s.log10_nu,
            s.log10_p,
            expected_variation(d)
        )
        .unwrap();
    }
    Ok(out)
}

fn cmd_gen(n_in: u32, n_out: u32, density: f64, seed: u64, out: &Path) -> Result<()> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::Domain(format!("density {density} outside [0,1]")));
    }
    let spec = degree_spec(n_in, n_out, density);
    let pattern = generate_uniform(&spec, seed)?;
    write_atomic(out, &pattern.to_bytes())?;
    println!(
        "{}",
        json!({
            "n_in": n_in, "n_out": n_out, "density": density, "seed": seed,
            "edges": pattern.n_edges(), "path": out,
        })
    );
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let (train, val) = cfg.load_data()?;
    let model_config = cfg.model_config(train.n_features() as u32, train.n_classes() as u32);
    let outcome = run_replicates(
        &model_config,
        &train,
        &val,
        cfg.epochs,
        cfg.batch_size,
        cfg.n_runs,
        cfg.topology_mode,
        cfg.seed,
    )?;
    write_train_outputs(cfg, &model_config, &outcome)?;
    println!(
        "{}",
        json!({
            "out": cfg.out,
            "final_val_loss_median": outcome.summary.val_loss.p50.last(),
            "final_val_acc_median": outcome.summary.val_acc.p50.last(),
        })
    );
    Ok(())
}

fn write_train_outputs(
    cfg: &ExperimentConfig,
    model_config: &ModelConfig,
    outcome: &ReplicateOutcome,
) -> Result<()> {
    fs::create_dir_all(&cfg.out)?;
    write_atomic(&cfg.out.join("history.csv"), history_csv(&outcome.histories).as_bytes())?;
    let summary = json!({
        "config": cfg,
        "master_seed": cfg.seed,
        "model": model_config,
        "parameters": outcome.first_model.count_parameters(),
        "summary": outcome.summary,
    });
    write_atomic(
        &cfg.out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    let mut ckpt = Vec::new();
    outcome.first_model.save_checkpoint(&mut ckpt)?;
    write_atomic(&cfg.out.join("model.ckpt"), &ckpt)?;
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.density_grid.is_empty() || cfg.hidden_size_grid.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    let (train, val) = cfg.load_data()?;
    fs::create_dir_all(&cfg.out)?;
    let mut runs_csv = format!("hidden_size,density,{HISTORY_HEADER}\n");
    let mut cells = Vec::new();
    let mut failures = 0usize;
    for &hidden in &cfg.hidden_size_grid {
        for &density in &cfg.density_grid {
            let mut cell_cfg = cfg.clone();
            cell_cfg.hidden_size = hidden;
            cell_cfg.density = density;
            let model_config =
                cell_cfg.model_config(train.n_features() as u32, train.n_classes() as u32);
            let started = Instant::now();
            match run_replicates(
                &model_config,
                &train,
                &val,
                cfg.epochs,
                cfg.batch_size,
                cfg.n_runs,
                cfg.topology_mode,
                cfg.seed,
            ) {
                Ok(outcome) => {
                    for (run, h) in outcome.histories.iter().enumerate() {
                        for r in &h.records {
                            writeln!(
                                runs_csv,
                                "{hidden},{density},{run},{},{},{},{},{},{:.6}",
                                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.seconds
                            )
                            .unwrap();
                        }
                    }
                    cells.push(json!({
                        "hidden_size": hidden,
                        "density": density,
                        "parameters": outcome.first_model.count_parameters(),
                        "wall_clock_seconds": started.elapsed().as_secs_f64(),
                        "summary": outcome.summary,
                    }));
                }
                Err(e) => {
                    failures += 1;
                    cells.push(json!({
                        "hidden_size": hidden,
                        "density": density,
                        "error": e.to_string(),
                    }));
                }
            }
        }
    }
    write_atomic(&cfg.out.join("runs.csv"), runs_csv.as_bytes())?;
    let summary = json!({
        "config": cfg,
        "master_seed": cfg.seed,
        "cells": cells,
    });
    write_atomic(
        &cfg.out.join("sweep.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    if failures > 0 {
        return Err(Error::Construction(format!("{failures} sweep cells failed")));
    }
    Ok(())
}

fn median_time<F: FnMut() -> Result<()>>(reps: usize, mut f: F) -> Result<f64> {
    f()?; // warmup
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(times[times.len() / 2])
}

fn cmd_bench(
    shapes: &[String],
    densities: &str,
    reps: usize,
    batch: usize,
    out: Option<&Path>,
) -> Result<()> {
    if reps == 0 {
        return Err(Error::Domain("reps must be >= 1".into()));
    }
    let densities: Vec<f64> = parse_list(densities, "densities")?;
    let mut csv = String::from("n_in,n_out,density,kernel,params,median_seconds\n");
    for shape in shapes {
        let (a, b) = shape
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("bad shape {shape:?}, expected NxM")))?;
        let n_in: u32 = a.parse().map_err(|_| Error::Config(format!("bad shape {shape:?}")))?;
        let n_out: u32 = b.parse().map_err(|_| Error::Config(format!("bad shape {shape:?}")))?;
        for &density in &densities {
            let config = ModelConfig {
                input_size: n_in,
                hidden_layers: vec![HiddenLayerConfig {
                    size: n_out,
                    density,
                    activation: Activation::Relu,
                    dropout_rate: 0.0,
                }],
                output_size: 10,
                seed: 1,
                optimizer: OptimizerConfig::default(),
            };
            let mut model = init_model(&config)?;
            let params = model.count_parameters();
            let mut rng = crate::rng::rng_from_seed(7);
            let x = random_input(n_in as usize, batch, &mut rng);
            let y = random_labels(10, batch, &mut rng);
            let w = model.sparse_layers()[0].weights.matrix.clone();

            let spmm_t = median_time(reps, || {
                crate::sparselinalg::spmm(&w, &x).map(|_| ())
            })?;
            csv_row(&mut csv, n_in, n_out, density, "spmm", params, spmm_t);

            let g = crate::sparselinalg::spmm(&w, &x)?;
            let sddmm_t = median_time(reps, || {
                crate::sparselinalg::sddmm(&g, &x, w.pattern()).map(|_| ())
            })?;
            csv_row(&mut csv, n_in, n_out, density, "sddmm", params, sddmm_t);

            let step_t = median_time(reps, || {
                let (probs, cache) = model.forward(&x, true, &mut rng)?;
                let (_, grads) = model.loss_and_grad(&probs, &y, &cache)?;
                model.nadam_step(&grads)
            })?;
            csv_row(&mut csv, n_in, n_out, density, "full_step", params, step_t);
        }
    }
    match out {
        Some(path) => write_atomic(path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn csv_row(csv: &mut String, n_in: u32, n_out: u32, density: f64, kernel: &str, params: u64, t: f64) {
    writeln!(csv, "{n_in},{n_out},{density},{kernel},{params},{t:.9}").unwrap();
}

fn random_input(
    rows: usize,
    cols: usize,
    rng: &mut rand_xoshiro::Xoshiro256PlusPlus,
) -> crate::sparselinalg::DenseMatrix {
    use rand::Rng;
    crate::sparselinalg::DenseMatrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

fn random_labels(
    classes: usize,
    cols: usize,
    rng: &mut rand_xoshiro::Xoshiro256PlusPlus,
) -> crate::sparselinalg::DenseMatrix {
    use rand::Rng;
    let mut m = crate::sparselinalg::DenseMatrix::zeros(classes, cols);
    for b in 0..cols {
        let c = rng.random_range(0..classes);
        m.set(c, b, 1.0);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_parsing() {
        let kv = parse_config_text("a = 1\n# comment\n\nb= two # trailing\n").unwrap();
        assert_eq!(kv["a"], "1");
        assert_eq!(kv["b"], "two");
        assert!(parse_config_text("no equals sign").is_err());
    }

    #[test]
    fn resolve_precedence_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        fs::write(&path, "epochs = 5\nseed = 9\ndensity = 0.25\n").unwrap();
        let common = CommonFlags {
            config: Some(path),
            seed: Some(77),
            out: Some(PathBuf::from("results")),
            threads: None,
            overrides: vec!["epochs=7".into()],
        };
        let cfg = ExperimentConfig::resolve(&common).unwrap();
        assert_eq!(cfg.epochs, 7); // --set beats the file
        assert_eq!(cfg.seed, 77); // --seed beats the file
        assert_eq!(cfg.density, 0.25); // file beats the default
        assert_eq!(cfg.batch_size, 32); // untouched default
        assert_eq!(cfg.out, PathBuf::from("results"));
    }

    #[test]
    fn bad_config_values_are_rejected() {
        let mut kv = BTreeMap::new();
        kv.insert("epochs".to_string(), "many".to_string());
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.apply(&kv).is_err());
        let mut kv = BTreeMap::new();
        kv.insert("dataset".to_string(), "parquet".to_string());
        assert!(cfg.apply(&kv).is_err());
        let mut kv = BTreeMap::new();
        kv.insert("dataset".to_string(), "csv".to_string());
        assert!(cfg.apply(&kv).is_err(), "csv without path must fail");
    }

    #[test]
    fn default_density_grid_matches_the_sweep_axis() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.density_grid.len(), 10);
        assert!(cfg.density_grid.contains(&0.016));
        assert!(cfg.density_grid.contains(&0.333));
    }

    #[test]
    fn space_csv_rows() {
        let csv = space_csv(4, 2, &[0.5, 1.0]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("n_in,n_out,density"));
        // density 1: Nu log 0, variation 0
        let fields: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(fields[6], "0.0000");
        assert_eq!(fields[8], "0.0000");
    }

    #[test]
    fn atomic_write_lands_complete() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("x.csv");
        write_atomic(&path, b"abc").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"abc");
        write_atomic(&path, b"def").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"def");
        // no stray temp files remain
        let entries: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().collect();
        assert_eq!(entries.len(), 1);
    }

    #[test]
    fn blobs_config_trains_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            n_train: 60,
            n_val: 40,
            hidden_size: 8,
            density: 0.5,
            dropout: 0.0,
            epochs: 2,
            n_runs: 2,
            out: dir.path().join("run"),
            ..ExperimentConfig::default()
        };
        cmd_train(&cfg).unwrap();
        let history = fs::read_to_string(cfg.out.join("history.csv")).unwrap();
        let lines: Vec<&str> = history.lines().collect();
        assert_eq!(lines[0], HISTORY_HEADER);
        assert_eq!(lines.len(), 1 + 2 * 2); // 2 runs x 2 epochs
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(cfg.out.join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(summary["master_seed"], 42);
        assert!(summary["config"]["dataset"]["kind"].is_string());
        assert!(cfg.out.join("model.ckpt").exists());
    }
}
