//! Subcommand implementations.
//!
//! A prepared dataset directory holds `vocab.json`, the `all`, `train`,
//! `valid`, `test` and `filter` quadruple files, optionally `start.tsv` and
//! `end.tsv`, and optionally `semantic.tsv`, `genuine.tsv`, `false.tsv`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use ekge_core::checkpoint::Checkpoint;
use ekge_core::config::ExperimentConfig;
use ekge_core::eval::{evaluate, MetricSlot, MetricsReport, Mode};
use ekge_core::kg::{
    build_start_end, derive_semantic, filter_rare, load_quadruples, load_quadruples_with_vocab,
    load_triples_with_vocab, split_dataset, synth_generate, write_quadruples, write_triples, Dataset, EpisodicDataset,
    Fact, FilterIndex, LoadOptions, OrdinalParser, SemanticDataset, SplitConfig, SynthSpec, Vocabulary,
};
use ekge_core::models::{param_count, Counts, ModelKind, ModelParams, Rank};
use ekge_core::projection::{
    evaluate_projection, marginalize, projection_filter, ProjectionMode, ProjectionTable, DEFAULT_RECALL_THRESHOLD,
};
use ekge_core::training::{self, train_projection};

use crate::manifest::{file_hash, RunManifest};
use crate::usage;

const VOCAB: &str = "vocab.json";
const CHECKPOINT: &str = "checkpoint.ekge";

fn elapsed(since: Instant) -> f64 {
    since.elapsed().as_secs_f64()
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_owned())
}

fn load_vocab(data: &Path) -> anyhow::Result<Arc<Vocabulary>> {
    let path = data.join(VOCAB);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Arc::new(Vocabulary::from_json(&text)?))
}

fn load_split(data: &Path, name: &str, vocab: &Arc<Vocabulary>) -> anyhow::Result<EpisodicDataset> {
    let path = data.join(format!("{name}.tsv"));
    load_quadruples_with_vocab(&path, vocab.clone()).with_context(|| format!("loading {}", path.display()))
}

fn load_triples(path: &Path, vocab: &Arc<Vocabulary>) -> anyhow::Result<SemanticDataset> {
    load_triples_with_vocab(path, vocab.clone()).with_context(|| format!("loading {}", path.display()))
}

fn save_quadruples(path: &Path, ds: &EpisodicDataset) -> anyhow::Result<PathBuf> {
    let mut buf = Vec::new();
    write_quadruples(&mut buf, ds)?;
    write_file(path, buf)
}

fn save_triples(path: &Path, ds: &SemanticDataset) -> anyhow::Result<PathBuf> {
    let mut buf = Vec::new();
    write_triples(&mut buf, ds)?;
    write_file(path, buf)
}

fn parse_fractions(raw: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<f64> =
        raw.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"))).collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err("expected three comma-separated fractions".into()),
    }
}

#[derive(Args)]
pub struct PrepareArgs {
    /// Quadruple TSV: subject, predicate, object, timestamp and an optional 0/1 value.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Train, valid and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_fractions)]
    split: (f64, f64, f64),
    #[arg(long, env = "EKGE_SEED", default_value_t = 0)]
    seed: u64,
    /// Drop facts whose subject or object occurs fewer times than this.
    #[arg(long, default_value_t = 0)]
    min_occurrences: usize,
    /// Keep only (s, p, o) triples seen at fewer than this many timestamps.
    #[arg(long)]
    rare_threshold: Option<usize>,
    /// Timestamps are integers rather than dates.
    #[arg(long)]
    ordinal_timestamps: bool,
    /// Also write start.tsv and end.tsv.
    #[arg(long)]
    start_end: bool,
    /// Also write semantic.tsv, genuine.tsv and false.tsv.
    #[arg(long)]
    semantic: bool,
}

pub fn prepare(args: PrepareArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let opts = if args.ordinal_timestamps {
        LoadOptions { timestamps: Box::new(OrdinalParser) }
    } else {
        LoadOptions::default()
    };
    let mut ds = load_quadruples(&args.input, &opts).with_context(|| format!("loading {}", args.input.display()))?;
    if let Some(k) = args.rare_threshold {
        if k == 0 {
            return Err(usage("--rare-threshold must be at least 1"));
        }
        ds = filter_rare(&ds, k);
    }
    if ds.positives().is_empty() {
        bail!("{} has no positive facts", args.input.display());
    }
    let split = SplitConfig { fractions: args.split, seed: args.seed, min_occurrences: args.min_occurrences };
    let splits = split_dataset(&ds, &split)?;

    create_dir(&args.out)?;
    let config = serde_json::json!({
        "input": args.input,
        "split": split,
        "rare_threshold": args.rare_threshold,
        "ordinal_timestamps": args.ordinal_timestamps,
    });
    let mut manifest = RunManifest::new("prepare", config, Some(args.seed));
    manifest.hash(&args.input)?;
    let out = &args.out;
    let mut written = vec![write_file(&out.join(VOCAB), ds.vocab().to_json())?];
    written.push(save_quadruples(&out.join("all.tsv"), &ds)?);
    written.push(save_quadruples(&out.join("train.tsv"), &splits.train)?);
    written.push(save_quadruples(&out.join("valid.tsv"), &splits.valid)?);
    written.push(save_quadruples(&out.join("test.tsv"), &splits.test)?);
    // the filter is every known fact that survived the split's own filtering
    let mut known: Vec<_> = splits.train.facts().to_vec();
    known.extend_from_slice(splits.valid.facts());
    known.extend_from_slice(splits.test.facts());
    written.push(save_quadruples(&out.join("filter.tsv"), &EpisodicDataset::new(ds.vocab().clone(), known)?)?);
    if args.start_end {
        let (start, end) = build_start_end(&ds);
        written.push(save_quadruples(&out.join("start.tsv"), &start)?);
        written.push(save_quadruples(&out.join("end.tsv"), &end)?);
    }
    if args.semantic {
        let sem = derive_semantic(&ds);
        let (genuine, false_set) = sem.split_by_label();
        written.push(save_triples(&out.join("semantic.tsv"), &sem)?);
        written.push(save_triples(&out.join("genuine.tsv"), &genuine)?);
        written.push(save_triples(&out.join("false.tsv"), &false_set)?);
    }
    for path in written {
        manifest.hash(&path)?;
        manifest.output(path);
    }
    manifest.time("total", elapsed(started));
    manifest.write(out)?;
    println!(
        "prepared {} facts: {} train, {} valid, {} test",
        ds.len(),
        splits.train.len(),
        splits.valid.len(),
        splits.test.len()
    );
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    /// Prepared dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Experiment config (JSON, or TOML by extension).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    time_rank: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, env = "EKGE_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Two-stage training on start.tsv then end.tsv.
    #[arg(long)]
    projection: bool,
}

fn experiment_config(args: &TrainArgs) -> anyhow::Result<ExperimentConfig> {
    let mut config = match (&args.config, &args.model, args.rank) {
        (Some(path), _, _) => ExperimentConfig::load(path)?,
        (None, Some(model), Some(rank)) => ExperimentConfig::new(model.parse()?, rank),
        (None, _, _) => return Err(usage("give --config, or both --model and --rank")),
    };
    if let Some(model) = &args.model {
        config.model = model.parse()?;
    }
    if let Some(rank) = args.rank {
        config.rank = rank;
    }
    if args.time_rank.is_some() {
        config.time_rank = args.time_rank;
    }
    for stage in [&mut config.training, &mut config.projection.start, &mut config.projection.end] {
        if let Some(e) = args.epochs {
            stage.max_epochs = e;
        }
        if let Some(lr) = args.lr {
            stage.learning_rate = lr;
        }
        if let Some(b) = args.batch_size {
            stage.batch_size = b;
        }
        if let Some(s) = args.seed {
            stage.seed = s;
        }
    }
    Ok(config)
}

pub fn train(args: TrainArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let config = experiment_config(&args)?;
    let rank = config.rank()?;
    let vocab = load_vocab(&args.data)?;
    let counts = Counts::of(&vocab);
    create_dir(&args.out)?;
    let mut manifest = RunManifest::new("train", serde_json::from_str(&config.to_json())?, Some(config.training.seed));
    manifest.hash(&args.data.join(VOCAB))?;
    let mut reports = Vec::new();

    let params = if args.projection {
        let start = load_split(&args.data, "start", &vocab)?;
        let end = load_split(&args.data, "end", &vocab)?;
        for name in ["start.tsv", "end.tsv"] {
            manifest.hash(&args.data.join(name))?;
        }
        let (params, report) = train_projection(config.model, rank, &start, &end, &config.projection)?;
        reports.push(("train_report_start.csv", report.start.to_csv()));
        reports.push(("train_report_end.csv", report.end.to_csv()));
        params
    } else if config.model.is_episodic() {
        let train_set = load_split(&args.data, "train", &vocab)?;
        let valid = load_split(&args.data, "valid", &vocab)?;
        let filter = FilterIndex::from_facts(load_split(&args.data, "filter", &vocab)?.facts().iter());
        for name in ["train.tsv", "valid.tsv", "filter.tsv"] {
            manifest.hash(&args.data.join(name))?;
        }
        let init = ModelParams::init(config.model, counts, rank, config.training.seed)?;
        let (params, report) = training::train(init, &train_set, &valid, &filter, &config.training)?;
        reports.push(("train_report.csv", report.to_csv()));
        params
    } else {
        // semantic models fit the derived labels directly
        let path = args.data.join("semantic.tsv");
        if !path.exists() {
            bail!("{} is missing; rerun prepare with --semantic", path.display());
        }
        let sem = load_triples(&path, &vocab)?;
        manifest.hash(&path)?;
        let filter = FilterIndex::from_facts(sem.facts().iter());
        let init = ModelParams::init(config.model, counts, rank, config.training.seed)?;
        let (params, report) = training::train(init, &sem, &sem, &filter, &config.training)?;
        reports.push(("train_report.csv", report.to_csv()));
        params
    };
    manifest.time("train", elapsed(started));

    let ckpt = args.out.join(CHECKPOINT);
    Checkpoint::new(params, vocab.hash()).save(&ckpt)?;
    manifest.checkpoint(ckpt);
    for (name, csv) in reports {
        manifest.output(write_file(&args.out.join(name), csv)?);
    }
    manifest.output(write_file(&args.out.join("config.json"), config.to_json())?);
    manifest.time("total", elapsed(started));
    manifest.write(&args.out)?;
    println!("trained {} (rank {}) into {}", config.model, config.rank, args.out.display());
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Filtered,
    Raw,
    Both,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Quadruple file name in the data directory, without `.tsv`.
    #[arg(long, default_value = "test")]
    split: String,
    /// Comma-separated columns: entity, subject, object, predicate, timestamp.
    #[arg(long, value_delimiter = ',', default_value = "entity,timestamp")]
    slots: Vec<MetricSlot>,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    #[arg(long)]
    out: PathBuf,
}

fn load_checkpoint(path: &Path, vocab: &Vocabulary) -> anyhow::Result<ModelParams> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    ckpt.expect_vocabulary(&vocab.hash()).with_context(|| format!("checkpoint {}", path.display()))?;
    Ok(ckpt.params)
}

pub fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let vocab = load_vocab(&args.data)?;
    let params = load_checkpoint(&args.checkpoint, &vocab)?;
    let modes = match args.mode {
        ModeArg::Filtered => vec![Mode::Filtered],
        ModeArg::Raw => vec![Mode::Raw],
        ModeArg::Both => vec![Mode::Filtered, Mode::Raw],
    };
    let config = serde_json::json!({
        "checkpoint": args.checkpoint,
        "split": args.split,
        "slots": args.slots,
        "modes": modes,
    });
    let mut manifest = RunManifest::new("eval", config, None);
    manifest.hash(&args.checkpoint)?;

    let mut metrics = Vec::new();
    if params.kind().is_episodic() {
        let test = load_split(&args.data, &args.split, &vocab)?;
        let filter = FilterIndex::from_facts(load_split(&args.data, "filter", &vocab)?.facts().iter());
        for name in [format!("{}.tsv", args.split), "filter.tsv".into()] {
            manifest.hash(&args.data.join(name))?;
        }
        for &mode in &modes {
            metrics.extend(evaluate(&params, &test, &args.slots, &filter, mode)?);
        }
    } else {
        if args.slots.contains(&MetricSlot::Timestamp) {
            return Err(usage("semantic models have no timestamp slot"));
        }
        let path = args.data.join(format!("{}.tsv", args.split));
        let test = load_triples(&path, &vocab)?;
        let filter = FilterIndex::from_facts(test.facts().iter());
        manifest.hash(&path)?;
        for &mode in &modes {
            metrics.extend(evaluate(&params, &test, &args.slots, &filter, mode)?);
        }
    }
    let report = MetricsReport::new(params.kind().to_string(), metrics);
    let table = report.to_table();
    create_dir(&args.out)?;
    manifest.output(write_file(&args.out.join("metrics.json"), serde_json::to_string_pretty(&report)? + "\n")?);
    manifest.output(write_file(&args.out.join("metrics.txt"), &table)?);
    manifest.time("total", elapsed(started));
    manifest.write(&args.out)?;
    print!("{table}");
    Ok(())
}

#[derive(Args)]
pub struct ProjectArgs {
    /// Two-stage episodic checkpoint (trained with `train --projection`).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Genuine semantic triples (default: genuine.tsv in the data directory).
    #[arg(long)]
    genuine: Option<PathBuf>,
    /// False semantic triples (default: false.tsv in the data directory).
    #[arg(long = "false")]
    false_set: Option<PathBuf>,
    /// Semantic baseline checkpoint for a third column.
    #[arg(long)]
    semantic_checkpoint: Option<PathBuf>,
    /// Recall threshold on raw scores.
    #[arg(long, default_value_t = DEFAULT_RECALL_THRESHOLD)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
}

pub fn project(args: ProjectArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let vocab = load_vocab(&args.data)?;
    let params = load_checkpoint(&args.checkpoint, &vocab)?;
    let genuine_path = args.genuine.clone().unwrap_or_else(|| args.data.join("genuine.tsv"));
    let false_path = args.false_set.clone().unwrap_or_else(|| args.data.join("false.tsv"));
    let genuine = load_triples(&genuine_path, &vocab)?;
    let false_set = load_triples(&false_path, &vocab)?;
    // both files hold their own label; score them as the two classes
    let genuine = SemanticDataset::new(vocab.clone(), genuine.facts().iter().map(|t| t.with_value(true)).collect())?;
    let false_set =
        SemanticDataset::new(vocab.clone(), false_set.facts().iter().map(|t| t.with_value(false)).collect())?;
    let filter = projection_filter(&genuine, &false_set);

    let mut config = serde_json::json!({
        "checkpoint": args.checkpoint,
        "model": params.kind(),
        "tau": args.tau,
    });
    let mut columns = Vec::new();
    for (label, mode) in [("Start", ProjectionMode::Start), ("StartEnd", ProjectionMode::StartEnd)] {
        let scorer = marginalize(&params, mode)?;
        columns.push((label.to_owned(), evaluate_projection(&scorer, &genuine, &false_set, &filter, args.tau)?));
    }
    let mut hashes = vec![args.checkpoint.clone(), genuine_path, false_path];
    if let Some(path) = &args.semantic_checkpoint {
        let sem = load_checkpoint(path, &vocab)?;
        let expected = params.kind().semantic_counterpart();
        if sem.kind() != expected {
            eprintln!("warning: {} is not the semantic counterpart of {} ({expected})", sem.kind(), params.kind());
        }
        config["semantic_model"] = serde_json::json!(sem.kind());
        columns.push(("Semantic".to_owned(), evaluate_projection(&sem, &genuine, &false_set, &filter, args.tau)?));
        hashes.push(path.clone());
    }
    let mut manifest = RunManifest::new("project", config, None);
    for p in &hashes {
        manifest.hash(p)?;
    }
    let table = ProjectionTable::new(params.kind().to_string(), columns);
    let text = table.to_table();
    create_dir(&args.out)?;
    manifest.output(write_file(&args.out.join("projection.json"), serde_json::to_string_pretty(&table)? + "\n")?);
    manifest.output(write_file(&args.out.join("projection.txt"), &text)?);
    manifest.time("total", elapsed(started));
    manifest.write(&args.out)?;
    print!("{text}");
    Ok(())
}

#[derive(Args)]
pub struct SynthArgs {
    /// Spec file (JSON, or TOML by extension); flags below are ignored when given.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    entities: usize,
    #[arg(long, default_value_t = 3)]
    predicates: usize,
    #[arg(long, default_value_t = 20)]
    timestamps: usize,
    #[arg(long, default_value_t = 160)]
    spans: usize,
    #[arg(long, default_value_t = 1)]
    min_len: usize,
    #[arg(long, default_value_t = 6)]
    max_len: usize,
    /// Probability that a span runs to the last timestamp.
    #[arg(long)]
    open_fraction: Option<f64>,
    #[arg(long, env = "EKGE_SEED", default_value_t = 0)]
    seed: u64,
    /// Output quadruple TSV.
    #[arg(long)]
    out: PathBuf,
}

fn load_spec(path: &Path) -> anyhow::Result<SynthSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| usage(format!("invalid spec {}: {e}", path.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| usage(format!("invalid spec {}: {e}", path.display())))?
    };
    Ok(spec)
}

pub fn synth(args: SynthArgs) -> anyhow::Result<()> {
    let spec = match &args.spec {
        Some(path) => load_spec(path)?,
        None => {
            let mut spec = SynthSpec::new(args.entities, args.predicates, args.timestamps, args.spans)
                .lengths(args.min_len, args.max_len)
                .seed(args.seed);
            if let Some(f) = args.open_fraction {
                if !(0.0..=1.0).contains(&f) {
                    return Err(usage("--open-fraction must lie in [0, 1]"));
                }
                spec = spec.open_fraction(f);
            }
            spec
        }
    };
    let ds = synth_generate(&spec)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_quadruples(&args.out, &ds)?;
    println!("wrote {} quadruples to {} (sha256 {})", ds.len(), args.out.display(), file_hash(&args.out)?);
    Ok(())
}

#[derive(Args)]
pub struct ParamcountArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    ne: usize,
    #[arg(long)]
    np: usize,
    #[arg(long, default_value_t = 0)]
    nt: usize,
    #[arg(long)]
    rank: usize,
    /// Defaults to `--rank`.
    #[arg(long)]
    time_rank: Option<usize>,
}

pub fn paramcount(args: ParamcountArgs) -> anyhow::Result<()> {
    let kind: ModelKind = args.model.parse()?;
    let rank = Rank::new(args.rank, args.time_rank.unwrap_or(args.rank))?;
    let n = param_count(kind, Counts::new(args.ne, args.np, args.nt), rank).map_err(|e| usage(e.to_string()))?;
    println!("{n}");
    Ok(())
}
