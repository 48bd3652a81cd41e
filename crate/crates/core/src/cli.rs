//! Command-line entry point.
//!
//! Settings resolve as flags over the `--config` JSON file over defaults.
//! The resolved settings are echoed to `<out-dir>/config.json`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_composer, save_composer};
use crate::composer::{Composer, ComposerKind};
use crate::error::{Error, Result};
use crate::eval::{condition_matrix, match_queries, precision, run_experiment_suite, SuiteConfig};
use crate::fsio;
use crate::retrieval::{bench_search, build_index, write_bench_csv, PlaceIndex};
use crate::seqslam::{run_seqslam, SeqSlamParams};
use crate::store::{load_feature_store, FeatureStore};
use crate::synth::{generate_training_world, generate_world, perturb_reverse, WorldConfig};
use crate::train::{train_composer, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub ks: Vec<usize>,
    pub ns: Vec<usize>,
    pub trials: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            ks: vec![128, 256, 384],
            ns: vec![100_000, 200_000],
            trials: 50,
        }
    }
}

/// Everything a run can be configured with. The top-level seed replaces
/// the seed of every section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub suite: SuiteConfig,
    pub seqslam: SeqSlamParams,
    pub bench: BenchConfig,
}

impl RunConfig {
    fn propagate_seed(&mut self) {
        self.world.rng_seed = self.seed;
        self.train.rng_seed = self.seed;
        self.suite.rng_seed = self.seed;
    }
}

#[derive(Debug, Parser)]
#[command(name = "seqplace", version, about = "Sequence descriptors for visual place recognition")]
pub struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Generate a synthetic multi-condition world.
    Gen(GenArgs),
    /// Train a composer on a feature store.
    Train(TrainArgs),
    /// Build a place index over a reference traversal.
    Index(IndexArgs),
    /// Match every query window against an index.
    Query(QueryArgs),
    /// Run the NT/RG/RS suite and optional condition matrices.
    Eval(EvalArgs),
    /// Time exhaustive search over a (k, N) grid.
    Bench(BenchArgs),
    /// Run the sequence-matching baseline.
    Seqslam(SeqSlamArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// The evaluation world.
    Eval,
    /// Disjoint places under the same conditions.
    Train,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "eval")]
    pub split: Split,
    #[arg(long)]
    pub places: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub conditions: Option<usize>,
    #[arg(long)]
    pub sigma_a: Option<f64>,
    #[arg(long)]
    pub sigma_eps: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Manifest file or directory holding `manifest.json`.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub kind: ComposerKind,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub triplets_per_epoch: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub substitution: Option<f64>,
    #[arg(long)]
    pub descriptor_dim: Option<usize>,
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub normalize: bool,
}

/// A trained checkpoint or raw-feature grouping of `n` frames.
#[derive(Debug, Args, Serialize)]
pub struct ComposerSource {
    #[arg(long, conflicts_with = "raw")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub raw: Option<usize>,
}

impl ComposerSource {
    fn load(&self) -> Result<Composer> {
        match (&self.checkpoint, self.raw) {
            (Some(path), _) => load_composer(path),
            (None, Some(n)) if n > 0 => Ok(Composer::raw_grouping(n)),
            (None, Some(_)) => Err(Error::Config("--raw needs a positive window length".into())),
            (None, None) => Err(Error::MissingParams("no composer given, pass --checkpoint or --raw".into())),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct IndexArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Reference condition; defaults to the suite's reference.
    #[arg(long)]
    pub condition: Option<u32>,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[command(flatten)]
    pub composer: ComposerSource,
}

#[derive(Debug, Args, Serialize)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    /// Query condition; defaults to the suite's query.
    #[arg(long)]
    pub condition: Option<u32>,
    #[command(flatten)]
    pub composer: ComposerSource,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Directory with `<kind>.spw` checkpoints.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Checkpoint kinds to load from `--checkpoints`.
    #[arg(long, value_delimiter = ',', default_value = "grouping,fusion,recurrent")]
    pub composers: Vec<ComposerKind>,
    /// Also evaluate raw-feature grouping of this many frames and one frame.
    #[arg(long)]
    pub raw: Option<usize>,
    /// Also write condition matrices over all condition pairs.
    #[arg(long)]
    pub matrix: bool,
    #[arg(long)]
    pub query_cond: Option<u32>,
    #[arg(long)]
    pub ref_cond: Option<u32>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[arg(long = "n", value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct SeqSlamArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub query_cond: Option<u32>,
    #[arg(long)]
    pub ref_cond: Option<u32>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub vmin: Option<f64>,
    #[arg(long)]
    pub vmax: Option<f64>,
    #[arg(long)]
    pub vsteps: Option<usize>,
    #[arg(long)]
    pub enhance_window: Option<usize>,
    /// Play the query traversal backwards.
    #[arg(long)]
    pub reverse: bool,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn resolve_store(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    }
}

fn load_store(path: &Path) -> Result<FeatureStore> {
    load_feature_store(&resolve_store(path))
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fsio::write_atomic(path, |w| w.write_all(&buf))
}

/// Resolves defaults, config file and flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg: RunConfig = match &cli.config {
        Some(path) => fsio::read_json(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    match &cli.command {
        Command::Gen(a) => {
            set(&mut cfg.world.num_places, a.places);
            set(&mut cfg.world.dim, a.dim);
            set(&mut cfg.world.conditions, a.conditions);
            set(&mut cfg.world.sigma_a, a.sigma_a);
            set(&mut cfg.world.sigma_eps, a.sigma_eps);
        }
        Command::Train(a) => {
            let t = &mut cfg.train;
            set(&mut t.n, a.n);
            set(&mut t.learning_rate, a.lr);
            set(&mut t.epochs, a.epochs);
            set(&mut t.triplets_per_epoch, a.triplets_per_epoch);
            set(&mut t.margin, a.margin);
            set(&mut t.dropout_rate, a.dropout);
            set(&mut t.frame_substitution_prob, a.substitution);
            set(&mut t.descriptor_dim, a.descriptor_dim);
            if let Some(tag) = &a.activation {
                t.activation = tag.parse()?;
            }
            t.normalize |= a.normalize;
        }
        Command::Eval(a) => {
            set(&mut cfg.suite.query_condition, a.query_cond);
            set(&mut cfg.suite.reference_condition, a.ref_cond);
        }
        Command::Bench(a) => {
            set(&mut cfg.bench.ks, a.k.clone());
            set(&mut cfg.bench.ns, a.n.clone());
            set(&mut cfg.bench.trials, a.trials);
        }
        Command::Seqslam(a) => {
            let s = &mut cfg.seqslam;
            set(&mut s.seq_len, a.seq_len);
            set(&mut s.v_min, a.vmin);
            set(&mut s.v_max, a.vmax);
            set(&mut s.v_steps, a.vsteps);
            set(&mut s.enhance_window, a.enhance_window);
            set(&mut cfg.suite.query_condition, a.query_cond);
            set(&mut cfg.suite.reference_condition, a.ref_cond);
        }
        Command::Index(_) | Command::Query(_) => {}
    }
    cfg.propagate_seed();
    Ok(cfg)
}

#[derive(Serialize)]
struct Echo<'a> {
    command: &'a Command,
    config: &'a RunConfig,
}

/// Runs one parsed invocation and returns its stdout summary.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = resolve_config(cli)?;
    let out = cli.out_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    fsio::write_json_atomic(
        &out.join("config.json"),
        &Echo {
            command: &cli.command,
            config: &cfg,
        },
    )?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, &cfg, out),
        Command::Train(a) => cmd_train(a, &cfg, out),
        Command::Index(a) => cmd_index(a, &cfg, out),
        Command::Query(a) => cmd_query(a, &cfg, out),
        Command::Eval(a) => cmd_eval(a, &cfg, out),
        Command::Bench(_) => cmd_bench(&cfg, out),
        Command::Seqslam(a) => cmd_seqslam(a, &cfg, out),
    }
}

fn cmd_gen(a: &GenArgs, cfg: &RunConfig, out: &Path) -> Result<String> {
    let store = match a.split {
        Split::Eval => generate_world(&cfg.world)?,
        Split::Train => generate_training_world(&cfg.world, cfg.world.num_places)?,
    };
    let manifest = store.save(out)?;
    Ok(format!("manifest={}", manifest.display()))
}

fn cmd_train(a: &TrainArgs, cfg: &RunConfig, out: &Path) -> Result<String> {
    cfg.train.validate()?;
    let store = load_store(&a.store)?;
    let outcome = train_composer(a.kind, &store, &cfg.train)?;
    let ckpt = out.join(format!("{}.spw", a.kind));
    save_composer(&outcome.composer, &ckpt)?;
    outcome.write_loss_csv(&out.join(format!("{}_loss.csv", a.kind)))?;
    Ok(format!("checkpoint={} steps={}", ckpt.display(), outcome.losses.len()))
}

fn cmd_index(a: &IndexArgs, cfg: &RunConfig, out: &Path) -> Result<String> {
    let composer = a.composer.load()?;
    let store = load_store(&a.store)?;
    let cond = a.condition.unwrap_or(cfg.suite.reference_condition);
    let index = build_index(store.traversal(cond)?, &composer, a.stride)?;
    let path = out.join("index.spw");
    index.save(&path)?;
    Ok(format!("index={} entries={}", path.display(), index.len()))
}

fn cmd_query(a: &QueryArgs, cfg: &RunConfig, out: &Path) -> Result<String> {
    let composer = a.composer.load()?;
    let index = PlaceIndex::load(&a.index)?;
    let store = load_store(&a.store)?;
    let cond = a.condition.unwrap_or(cfg.suite.query_condition);
    let matches = match_queries(&index, store.traversal(cond)?, &composer, store.convention)?;
    write_csv_rows(&out.join("matches.csv"), &matches)?;
    Ok(format!("precision={}", precision(&matches)?))
}

fn cmd_eval(a: &EvalArgs, cfg: &RunConfig, out: &Path) -> Result<String> {
    let mut composers: Vec<(String, Composer)> = Vec::new();
    if let Some(dir) = &a.checkpoints {
        for kind in &a.composers {
            let path = dir.join(format!("{kind}.spw"));
            if !path.is_file() {
                return Err(Error::MissingParams(format!("{kind} ({})", path.display())));
            }
            let c = load_composer(&path)?;
            if *kind == ComposerKind::Grouping {
                composers.push(("single-view".into(), c.single_view()?));
            }
            composers.push((kind.to_string(), c));
        }
    }
    if let Some(n) = a.raw {
        if n == 0 {
            return Err(Error::Config("--raw needs a positive window length".into()));
        }
        composers.push(("raw-single-view".into(), Composer::raw_grouping(1)));
        composers.push(("raw-grouping".into(), Composer::raw_grouping(n)));
    }
    if composers.is_empty() {
        return Err(Error::MissingParams("no composers given, pass --checkpoints or --raw".into()));
    }
    let world = load_store(&a.store)?;
    let labelled: Vec<(&str, &Composer)> = composers.iter().map(|(l, c)| (l.as_str(), c)).collect();
    let mut report = run_experiment_suite(&world, &labelled, &cfg.suite)?;
    if a.matrix {
        for (label, c) in &labelled {
            let m = condition_matrix(&world, label, c)?;
            m.write_csv(&out.join(format!("matrix_{label}.csv")))?;
            report.condition_matrices.push(m);
        }
    }
    report.write(out)?;
    let summary = report
        .summary
        .iter()
        .map(|s| format!("{} M={:.4} S={:.4}", s.composer, s.mean, s.stddev))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(summary)
}

fn cmd_bench(cfg: &RunConfig, out: &Path) -> Result<String> {
    let b = &cfg.bench;
    let mut stats = Vec::new();
    for &n in &b.ns {
        for &k in &b.ks {
            stats.push(bench_search(k, n, b.trials, cfg.seed)?);
        }
    }
    write_bench_csv(&stats, &out.join("bench.csv"))?;
    Ok(stats
        .iter()
        .map(|s| format!("k={} N={} mean_ms={:.4} stddev_ms={:.4}", s.k, s.n, s.mean_ms, s.stddev_ms))
        .collect::<Vec<_>>()
        .join("\n"))
}

#[derive(Serialize)]
struct SeqSlamSummary<'a> {
    query_cond: u32,
    ref_cond: u32,
    reversed: bool,
    params: &'a SeqSlamParams,
    precision: f64,
}

fn cmd_seqslam(a: &SeqSlamArgs, cfg: &RunConfig, out: &Path) -> Result<String> {
    let (q, r) = (cfg.suite.query_condition, cfg.suite.reference_condition);
    let mut store = load_store(&a.store)?;
    if a.reverse {
        store = perturb_reverse(&store, q)?;
    }
    let report = run_seqslam(store.traversal(q)?, store.traversal(r)?, &cfg.seqslam, store.convention)?;
    write_csv_rows(&out.join("seqslam.csv"), &report.matches)?;
    fsio::write_json_atomic(
        &out.join("seqslam.json"),
        &SeqSlamSummary {
            query_cond: q,
            ref_cond: r,
            reversed: a.reverse,
            params: &cfg.seqslam,
            precision: report.precision,
        },
    )?;
    Ok(format!("precision={}", report.precision))
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::UnknownCondition(_) | Error::MissingParams(_) => 2,
        Error::Io { .. } => 3,
        Error::Header { .. }
        | Error::Truncated { .. }
        | Error::Dimension { .. }
        | Error::NonFinite { .. }
        | Error::DuplicateFrame { .. }
        | Error::Json { .. }
        | Error::Csv(_) => 4,
        Error::Diverged { .. } => 5,
        Error::Shape { .. } | Error::Empty(_) | Error::SamplingExhausted { .. } | Error::NoMatch(_) => 6,
    }
}

/// One-line machine-readable form of an error.
pub fn error_line(e: &Error) -> String {
    let message = e.to_string().replace('\n', " ");
    format!("error: kind={} code={} message={message}", e.kind(), exit_code(e))
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(summary) => {
            // a closed pipe on stdout is not a failure of the run
            if !summary.is_empty() {
                let _ = writeln!(std::io::stdout(), "{summary}");
            }
            0
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("seqplace").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"seed": 7, "train": {"epochs": 2, "margin": 0.3}}"#).unwrap();
        let cli = parse(&[
            "--config",
            path.to_str().unwrap(),
            "train",
            "--store",
            "x",
            "--kind",
            "fusion",
            "--epochs",
            "9",
        ]);
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!(cfg.train.epochs, 9);
        assert_eq!(cfg.train.margin, 0.3);
        assert_eq!(cfg.train.learning_rate, TrainConfig::default().learning_rate);
        assert_eq!((cfg.seed, cfg.train.rng_seed, cfg.world.rng_seed), (7, 7, 7));
        let cli = parse(&["--seed", "3", "--config", path.to_str().unwrap(), "gen"]);
        assert_eq!(resolve_config(&cli).unwrap().world.rng_seed, 3);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"trian": {}}"#).unwrap();
        let cli = parse(&["--config", path.to_str().unwrap(), "gen"]);
        assert!(matches!(resolve_config(&cli), Err(Error::Json { .. })));
    }

    #[test]
    fn error_lines_are_single_line() {
        let e = Error::Truncated { offset: 40, record: 2 };
        let line = error_line(&e);
        assert_eq!(line, "error: kind=truncated code=4 message=truncated file at byte 40 (record 2)");
        assert_eq!(exit_code(&Error::Diverged { step: 1, loss: f64::NAN }), 5);
    }

    #[test]
    fn composer_source_needs_a_choice() {
        let s = ComposerSource {
            checkpoint: None,
            raw: None,
        };
        assert!(matches!(s.load(), Err(Error::MissingParams(_))));
    }
}
