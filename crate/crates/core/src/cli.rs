//! The `iirnn` command line tool.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, LevelFilter};

use crate::baselines::{
    bpr_mf_train, BprConfig, BprRecommender, CoOccurrenceMatrix, ItemKnnRecommender, PopularRecommender,
    PopularityTable, RecentRecommender,
};
use crate::corpus::{
    corpus_stats, hold_one_out_split, preprocess, read_corpus_file, read_interactions_file, write_corpus_file,
    Corpus, InputFormat, PreprocessConfig, REDDIT_GAP_SECONDS,
};
use crate::error::{Error, Result};
use crate::metrics::{emit_coldstart, emit_report, evaluate, read_report, EvalConfig, EvalReport, Position};
use crate::synth::{generate, write_tsv, SynthSpec};
use crate::trainer::{load_checkpoint, parse_list, save_checkpoint, train, RnnRecommender, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "iirnn", version, about = "Session-based recommendation with inter-session RNNs")]
struct Cli {
    /// Random seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for evaluation and training (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn a raw interaction log into a session corpus.
    Preprocess(PreprocessArgs),
    /// Write a synthetic interaction log.
    Synth(SynthArgs),
    /// Train a recurrent model.
    Train(TrainArgs),
    /// Evaluate a trained checkpoint.
    Eval(EvalArgs),
    /// Fit and evaluate the baselines.
    Baseline(BaselineArgs),
    /// Extract Recall@5 cold-start curves from a report.
    Coldstart(ColdstartArgs),
    /// Print corpus statistics.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "tsv")]
    format: String,
    /// Maximum idle time inside a session, in seconds.
    #[arg(long, default_value_t = REDDIT_GAP_SECONDS)]
    gap: i64,
    /// Maximum session length.
    #[arg(long = "L", default_value_t = 20)]
    max_len: usize,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 20)]
    sessions: usize,
    #[arg(long, default_value_t = 3)]
    min_len: usize,
    #[arg(long, default_value_t = 8)]
    max_len: usize,
    #[arg(long, default_value_t = 50)]
    items: usize,
    /// Probability that a session continues the previous one's chain.
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    /// Probability of a topic-neighbor step inside a session.
    #[arg(long, default_value_t = 0.7)]
    kappa: f64,
    /// Number of shared item chains; 0 gives each user their own.
    #[arg(long, default_value_t = 4)]
    patterns: usize,
    #[arg(long, default_value_t = 0.0)]
    skew: f64,
    #[arg(long, default_value_t = REDDIT_GAP_SECONDS)]
    gap: i64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `key = value` config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    h: Option<String>,
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    g: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long = "keep_prob", alias = "keep-prob")]
    keep_prob: Option<String>,
    #[arg(long = "batch_size", alias = "batch-size")]
    batch_size: Option<String>,
    #[arg(long = "max_epochs", alias = "max-epochs")]
    max_epochs: Option<String>,
    #[arg(long = "L")]
    max_len: Option<String>,
    #[arg(long)]
    ks: Option<String>,
    #[arg(long)]
    positions: Option<String>,
    #[arg(long = "init_scale", alias = "init-scale")]
    init_scale: Option<String>,
    #[arg(long = "max_norm", alias = "max-norm")]
    max_norm: Option<String>,
    #[arg(long = "val_fraction", alias = "val-fraction")]
    val_fraction: Option<String>,
    #[arg(long)]
    corpus: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    /// Per-epoch loss log as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(&'static str, &String)> {
        let pairs: [(&'static str, &Option<String>); 17] = [
            ("variant", &self.variant),
            ("d", &self.d),
            ("h", &self.h),
            ("layers", &self.layers),
            ("g", &self.g),
            ("lr", &self.lr),
            ("keep_prob", &self.keep_prob),
            ("batch_size", &self.batch_size),
            ("max_epochs", &self.max_epochs),
            ("L", &self.max_len),
            ("ks", &self.ks),
            ("positions", &self.positions),
            ("init_scale", &self.init_scale),
            ("max_norm", &self.max_norm),
            ("val_fraction", &self.val_fraction),
            ("corpus", &self.corpus),
            ("checkpoint", &self.checkpoint),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect()
    }
}

#[derive(Args, Debug)]
struct EvalOutput {
    #[arg(long, default_value = "5,10,20")]
    ks: String,
    #[arg(long, default_value = "1,2,3,4,5,20")]
    positions: String,
    #[arg(long, default_value = "report.csv")]
    report: PathBuf,
    #[arg(long, default_value = "coldstart.csv")]
    coldstart: PathBuf,
}

impl EvalOutput {
    fn config(&self) -> Result<EvalConfig> {
        let cfg = EvalConfig {
            ks: parse_list("ks", &self.ks)?,
            positions: parse_list("positions", &self.positions)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn write(&self, report: &EvalReport) -> Result<()> {
        report.check_invariants()?;
        emit_report(report, &self.report)?;
        if report.models.iter().all(|m| m.ks.contains(&5)) {
            emit_coldstart(report, &self.coldstart)?;
        } else {
            log::warn!("k=5 not evaluated; skipping {}", self.coldstart.display());
        }
        Ok(())
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    output: EvalOutput,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated subset of popular, recent, knn, bpr.
    #[arg(long, default_value = "popular,recent,knn,bpr")]
    models: String,
    #[arg(long, default_value_t = 40)]
    bpr_factors: usize,
    #[arg(long, default_value_t = 10)]
    bpr_epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    bpr_lr: f64,
    #[arg(long, default_value_t = 0.002)]
    bpr_reg: f64,
    #[arg(long, default_value_t = 10)]
    bpr_negatives: usize,
    #[command(flatten)]
    output: EvalOutput,
}

#[derive(Args, Debug)]
struct ColdstartArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    read_corpus_file(path).map_err(|e| match e {
        Error::Io(io) => Error::Ingestion(format!("cannot read corpus {}: {io}", path.display())),
        other => other,
    })
}

fn cmd_preprocess(a: &PreprocessArgs) -> Result<()> {
    let format: InputFormat = a.format.parse()?;
    let interactions = read_interactions_file(&a.input, format)?;
    info!("read {} interactions from {}", interactions.len(), a.input.display());
    let cfg = PreprocessConfig {
        gap_limit: a.gap,
        max_len: a.max_len,
        train_fraction: a.train_fraction,
    };
    let corpus = preprocess(interactions, &cfg)?;
    write_corpus_file(&corpus, &a.out)?;
    say(&corpus_stats(&corpus.users).to_string());
    Ok(())
}

fn cmd_synth(a: &SynthArgs, seed: Option<u64>) -> Result<()> {
    let spec = SynthSpec {
        num_users: a.users,
        sessions_per_user: a.sessions,
        min_len: a.min_len,
        max_len: a.max_len,
        num_items: a.items,
        chain_strength: a.rho,
        coherence: a.kappa,
        num_patterns: a.patterns,
        popularity_skew: a.skew,
        gap_seconds: a.gap,
        seed: seed.unwrap_or(SynthSpec::default().seed),
    };
    let out = generate(&spec)?;
    write_tsv(&out.interactions, BufWriter::new(File::create(&a.out)?))?;
    info!("wrote {} interactions to {}", out.interactions.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for (k, v) in a.overrides() {
        cfg.set(k, v)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.corpus.is_empty() || cfg.checkpoint.is_empty() {
        return Err(Error::Usage("train needs --corpus and --checkpoint (or config entries)".into()));
    }
    let corpus = load_corpus(Path::new(&cfg.corpus))?;
    if cfg.max_len < corpus.users.iter().flat_map(|u| u.sessions()).map(|s| s.len()).max().unwrap_or(0) {
        log::warn!("corpus has sessions longer than L = {}", cfg.max_len);
    }
    let outcome = train(&cfg, &corpus)?;
    save_checkpoint(&outcome.checkpoint, Path::new(&cfg.checkpoint))?;
    if let Some(path) = &a.log {
        let mut text = String::from("epoch,train_loss,val_loss\n");
        for e in &outcome.log {
            let val = e.val_loss.map_or(String::new(), |v| format!("{v:.6}"));
            text.push_str(&format!("{},{:.6},{val}\n", e.epoch, e.train_loss));
        }
        fs::write(path, text)?;
    }
    info!("saved epoch {} to {}", outcome.checkpoint.epoch, cfg.checkpoint);
    match outcome.aborted {
        Some(msg) => Err(Error::Training(format!("{msg}; kept last good checkpoint"))),
        None => Ok(()),
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let eval = a.output.config()?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let corpus = load_corpus(&a.corpus)?;
    ckpt.verify_vocab(&corpus.vocab)?;
    let model = RnnRecommender::from_checkpoint(&ckpt);
    let report = EvalReport {
        models: vec![evaluate(&model, &corpus.users, &eval)?],
    };
    a.output.write(&report)?;
    print_summary(&report, &eval);
    Ok(())
}

fn cmd_baseline(a: &BaselineArgs, seed: Option<u64>) -> Result<()> {
    let eval = a.output.config()?;
    let corpus = load_corpus(&a.corpus)?;
    let n = corpus.num_items();
    let seed = seed.unwrap_or(0);
    let mut report = EvalReport::default();
    for name in a.models.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m = match name {
            "popular" => evaluate(
                &PopularRecommender {
                    table: PopularityTable::fit(&corpus.users, n),
                },
                &corpus.users,
                &eval,
            )?,
            "recent" => evaluate(
                &RecentRecommender {
                    num_items: n,
                    depth: eval.max_k(),
                    seed,
                },
                &corpus.users,
                &eval,
            )?,
            "knn" => evaluate(
                &ItemKnnRecommender {
                    matrix: CoOccurrenceMatrix::fit(&corpus.users, n),
                },
                &corpus.users,
                &eval,
            )?,
            "bpr" => {
                let split = hold_one_out_split(&corpus.users);
                let cfg = BprConfig {
                    factors: a.bpr_factors,
                    learning_rate: a.bpr_lr,
                    regularization: a.bpr_reg,
                    negatives: a.bpr_negatives,
                    epochs: a.bpr_epochs,
                    seed,
                    ..BprConfig::default()
                };
                let model = BprRecommender {
                    factors: bpr_mf_train(&split, n, &cfg)?,
                    fallback: PopularityTable::fit(&split, n),
                };
                evaluate(&model, &split, &eval)?
            }
            other => return Err(Error::Usage(format!("unknown baseline {other:?}"))),
        };
        report.models.push(m);
    }
    a.output.write(&report)?;
    print_summary(&report, &eval);
    Ok(())
}

fn cmd_coldstart(a: &ColdstartArgs) -> Result<()> {
    let rows = read_report(&a.report)?;
    let mut text = String::from("model,n,recall_at_5\n");
    for r in rows.iter().filter(|r| r.k == 5) {
        if let Position::First(n) = r.position {
            text.push_str(&format!("{},{n},{:.6}\n", r.model, r.recall));
        }
    }
    fs::write(&a.out, text)?;
    Ok(())
}

/// Writes a line to standard output, ignoring a closed pipe.
fn say(line: &str) {
    let _ = writeln!(io::stdout().lock(), "{line}");
}

fn print_summary(report: &EvalReport, eval: &EvalConfig) {
    for m in &report.models {
        for &k in &eval.ks {
            if let (Some(r), Some(mrr)) = (m.recall(k, Position::All), m.mrr(k, Position::All)) {
                say(&format!("{}\tRecall@{k}\t{r:.4}\tMRR@{k}\t{mrr:.4}", m.model));
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Synth(a) => cmd_synth(a, cli.seed),
        Command::Train(a) => cmd_train(a, cli.seed),
        Command::Eval(a) => cmd_eval(a),
        Command::Baseline(a) => cmd_baseline(a, cli.seed),
        Command::Coldstart(a) => cmd_coldstart(a),
        Command::Stats(a) => {
            say(&corpus_stats(&load_corpus(&a.corpus)?.users).to_string());
            Ok(())
        }
    }
}

/// Runs the tool on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = if cli.quiet { LevelFilter::Warn } else { LevelFilter::Info };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    log::set_max_level(level);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| dispatch(&cli)),
        Err(e) => Err(Error::Usage(format!("cannot start thread pool: {e}"))),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
