//! `frage`: train frequency-agnostic embeddings and inspect their frequency bias.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use frage::adversary::DiscriminatorKind;
use frage::analytics::{
    build_report, nearest_neighbors, projection_svg, spearman, write_projection_csv, Lineage, ReportConfig,
    SimilarityDataset,
};
use frage::corpus::{partition_by_frequency, FrequencyPartition, Vocabulary};
use frage::io::{sha256_hex, write_atomic, WordVectors};
use frage::synth::{zipf_corpus, ZipfCorpusConfig};
use frage::trainer::{write_log_csv, Checkpoint, LogRecord, Trainer, TrainerConfig, TrainingData};

#[derive(Parser)]
#[command(name = "frage", version, about = "Frequency-agnostic word embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train skip-gram embeddings, adversarially unless `--lambda 0`.
    Train(Box<TrainArgs>),
    /// Write a frequency-bias report for an embedding file.
    Analyze(AnalyzeArgs),
    /// Score an embedding file on word-similarity datasets.
    Eval(EvalArgs),
    /// Print the nearest neighbors of a word.
    Nn(NnArgs),
    /// Write a synthetic Zipfian corpus.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DiscArg {
    Logistic,
    Mlp1,
}

#[derive(Args)]
struct TrainArgs {
    /// Plain-text corpus, one sentence per line.
    #[arg(long, required_unless_present_any = ["manifest", "resume"])]
    corpus: Option<PathBuf>,
    /// Directory for every artifact of the run.
    #[arg(long)]
    out_dir: PathBuf,
    /// Rerun the configuration and corpus recorded in a manifest.
    #[arg(long, conflicts_with_all = ["corpus", "resume", "config"])]
    manifest: Option<PathBuf>,
    /// Continue from a checkpoint (its configuration is used as is).
    #[arg(long, requires = "corpus", conflicts_with = "config")]
    resume: Option<PathBuf>,
    /// Save a checkpoint every N steps, in addition to the final one.
    #[arg(long, value_name = "N")]
    checkpoint_every: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
#[group(id = "config", multiple = true)]
struct ConfigArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    task_lr: Option<f64>,
    #[arg(long)]
    disc_lr: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    min_count: Option<u64>,
    #[arg(long)]
    popular_fraction: Option<f64>,
    #[arg(long)]
    vocab_batch: Option<usize>,
    #[arg(long)]
    warm_start_steps: Option<u64>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    disc_kind: Option<DiscArg>,
    /// Bit-reproducible single-threaded updates (`--strict false` allows
    /// parallel lock-free updates).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    strict: Option<bool>,
    #[arg(long)]
    batch_tokens: Option<usize>,
    /// Frequent-word subsampling threshold; 0 disables it.
    #[arg(long)]
    subsample: Option<f64>,
    #[arg(long)]
    neg_table_size: Option<usize>,
    #[arg(long)]
    neg_alpha: Option<f64>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    min_lr_fraction: Option<f64>,
    #[arg(long)]
    max_norm: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    lowercase: Option<bool>,
    #[arg(long)]
    log_interval: Option<u64>,
    #[arg(long)]
    probe_interval: Option<u64>,
    #[arg(long)]
    probe_holdout: Option<f64>,
}

impl ConfigArgs {
    fn apply(&self, c: &mut TrainerConfig) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        set!(
            lambda, task_lr, disc_lr, dim, window, negatives, min_count, popular_fraction, vocab_batch,
            warm_start_steps, epochs, seed, strict, batch_tokens, subsample, neg_table_size, neg_alpha,
            init_scale, min_lr_fraction, lowercase, log_interval, probe_interval, probe_holdout
        );
        if let Some(k) = self.disc_kind {
            c.disc_kind = match k {
                DiscArg::Logistic => DiscriminatorKind::Logistic,
                DiscArg::Mlp1 => DiscriminatorKind::Mlp1,
            };
        }
        if self.max_norm.is_some() {
            c.max_norm = self.max_norm;
        }
    }
}

/// Everything needed to rerun a training command.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    tool: String,
    version: String,
    created: String,
    elapsed_seconds: f64,
    config: TrainerConfig,
    corpus: CorpusRecord,
    initial_digest: String,
    steps: u64,
    artifacts: Artifacts,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRecord {
    path: PathBuf,
    sha256: String,
    bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Artifacts {
    embeddings: PathBuf,
    initial_embeddings: PathBuf,
    vocab: PathBuf,
    checkpoint: PathBuf,
    log: PathBuf,
}

const MANIFEST: &str = "manifest.json";

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut expected_sha = None;
    let (corpus_path, config, checkpoint) = if let Some(m) = &args.manifest {
        let manifest: RunManifest = serde_json::from_reader(BufReader::new(
            fs::File::open(m).with_context(|| format!("opening manifest {}", m.display()))?,
        ))
        .with_context(|| format!("parsing manifest {}", m.display()))?;
        expected_sha = Some(manifest.corpus.sha256);
        (manifest.corpus.path, manifest.config, None)
    } else if let Some(r) = &args.resume {
        let ckpt = Checkpoint::load(r).with_context(|| format!("loading checkpoint {}", r.display()))?;
        (args.corpus.clone().expect("required by clap"), ckpt.config.clone(), Some(ckpt))
    } else {
        let mut config = TrainerConfig::default();
        args.config.apply(&mut config);
        (args.corpus.clone().expect("required by clap"), config, None)
    };
    config.validate()?;

    let text = fs::read_to_string(&corpus_path).with_context(|| format!("reading corpus {}", corpus_path.display()))?;
    let corpus = CorpusRecord {
        sha256: sha256_hex(text.as_bytes()),
        bytes: text.len() as u64,
        path: fs::canonicalize(&corpus_path)?,
    };
    if let Some(expected) = expected_sha {
        ensure!(
            corpus.sha256 == expected,
            "corpus {} changed since the manifest was written",
            corpus_path.display()
        );
    }
    let data = TrainingData::from_text(&text, &config)?;
    drop(text);
    info!(
        "vocabulary {} words, {} tokens in {} sentences",
        data.vocab.len(),
        data.corpus.token_count(),
        data.corpus.sentences().len()
    );

    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let out = |name: &str| args.out_dir.join(name);
    let artifacts = Artifacts {
        embeddings: out("embeddings.vec"),
        initial_embeddings: out("initial.vec"),
        vocab: out("vocab.txt"),
        checkpoint: out("checkpoint.json"),
        log: out("log.csv"),
    };

    let start = Instant::now();
    let mut trainer = match checkpoint {
        Some(c) => Trainer::resume(&data, c)?,
        None if config.lambda == 0.0 => Trainer::baseline(&data, config.clone())?,
        None => Trainer::new(&data, config.clone())?,
    };
    info!("{} steps per epoch, {} in total", trainer.steps_per_epoch(), trainer.total_steps());

    let mut records: Vec<LogRecord> = Vec::new();
    let mut on_log = |r: &LogRecord| {
        info!(
            "step {} L_T {:.4} L_D {} probe {} displacement {:.4}/{:.4}",
            r.step,
            r.task_loss,
            r.disc_loss.map_or("-".into(), |v| format!("{v:.4}")),
            r.probe_accuracy.map_or("-".into(), |v| format!("{v:.3}")),
            r.pop_displacement,
            r.rare_displacement
        );
        records.push(r.clone());
    };
    while !trainer.is_finished() {
        let until = match args.checkpoint_every {
            Some(n) if n > 0 => (trainer.state().step / n + 1) * n,
            _ => u64::MAX,
        };
        trainer.run_until(until, &mut on_log)?;
        trainer.checkpoint().save(&artifacts.checkpoint)?;
    }
    if trainer.total_steps() == 0 || records.is_empty() {
        trainer.checkpoint().save(&artifacts.checkpoint)?;
    }

    let words = data.vocab.words().to_vec();
    WordVectors::new(words.clone(), trainer.state().embeddings.input().clone())?.save(&artifacts.embeddings)?;
    WordVectors::new(words, trainer.initial_embeddings().clone())?.save(&artifacts.initial_embeddings)?;
    write_atomic(&artifacts.vocab, |w| data.vocab.write_dump(w))?;
    write_atomic(&artifacts.log, |w| write_log_csv(&records, w))?;

    let manifest = RunManifest {
        tool: "frage".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        created: chrono::Utc::now().to_rfc3339(),
        elapsed_seconds: start.elapsed().as_secs_f64(),
        config: trainer.config().clone(),
        corpus,
        initial_digest: trainer.state().initial_digest.clone(),
        steps: trainer.state().step,
        artifacts,
    };
    write_atomic(&out(MANIFEST), |w| Ok(serde_json::to_writer_pretty(w, &manifest)?))?;
    info!("wrote {} in {:.1} s", args.out_dir.display(), manifest.elapsed_seconds);
    Ok(())
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// Vocabulary dump (`word<TAB>count`) giving the frequency classes.
    #[arg(long)]
    vocab: PathBuf,
    /// Initial embeddings of the same run, for displacement statistics.
    #[arg(long)]
    initial: Option<PathBuf>,
    /// Digest the initial embeddings must match (from the run manifest);
    /// defaults to the digest of `--initial` itself.
    #[arg(long, requires = "initial")]
    initial_digest: Option<String>,
    /// Similarity dataset to score; may be repeated.
    #[arg(long = "dataset")]
    datasets: Vec<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    /// Projection coordinates; defaults to the report path with a `.csv`
    /// extension.
    #[arg(long)]
    projection_csv: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    popular_fraction: f64,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Words queried per class for neighbor statistics (all by default).
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long, default_value_t = 0.3)]
    probe_holdout: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let file = fs::File::open(path).with_context(|| format!("opening vocabulary {}", path.display()))?;
    Ok(Vocabulary::read_dump(BufReader::new(file), &path.display().to_string())?)
}

fn load_vectors(path: &Path) -> Result<WordVectors> {
    WordVectors::load(path).with_context(|| format!("loading embeddings {}", path.display()))
}

/// Frequency classes of the embedding rows, taken from the vocabulary.
fn partition_rows(wv: &WordVectors, vocab: &Vocabulary, fraction: f64) -> Result<FrequencyPartition> {
    let by_vocab = partition_by_frequency(vocab, fraction)?;
    let mask = wv
        .words
        .iter()
        .map(|w| match vocab.index_of(w) {
            Some(i) => Ok(by_vocab.is_popular(i)),
            None => bail!("embedding word {w:?} is missing from the vocabulary"),
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(FrequencyPartition::from_mask(mask, fraction)?)
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().unwrap_or(path.as_os_str()).to_string_lossy().into_owned()
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let wv = load_vectors(&args.embeddings)?;
    let vocab = load_vocab(&args.vocab)?;
    let partition = partition_rows(&wv, &vocab, args.popular_fraction)?;
    let datasets = args
        .datasets
        .iter()
        .map(|p| {
            let ds = SimilarityDataset::load(p).with_context(|| format!("loading dataset {}", p.display()))?;
            Ok((dataset_name(p), ds))
        })
        .collect::<Result<Vec<_>>>()?;
    let initial = args.initial.as_deref().map(load_vectors).transpose()?;
    let digest = match (&initial, args.initial_digest) {
        (_, Some(d)) => Some(d),
        (Some(i), None) => Some(i.vectors.digest()),
        (None, None) => None,
    };
    let lineage = initial.as_ref().zip(digest.as_deref()).map(|(i, d)| Lineage {
        initial: &i.vectors,
        digest: d,
    });
    let config = ReportConfig {
        k: args.k,
        sample_size: args.sample_size,
        probe_holdout: args.probe_holdout,
        seed: args.seed,
    };
    let report = build_report(&wv.vectors, &wv.words, &partition, &datasets, &config, lineage)?;
    for (what, why) in &report.errors {
        warn!("{what}: {why}");
    }

    write_atomic(&args.report, |w| Ok(serde_json::to_writer_pretty(w, &report)?))?;
    let csv_path = args.projection_csv.unwrap_or_else(|| args.report.with_extension("csv"));
    if let Some(points) = &report.projection {
        write_atomic(&csv_path, |w| write_projection_csv(points, w))?;
        if let Some(svg) = &args.svg {
            let doc = projection_svg(points);
            write_atomic(svg, |w| Ok(w.write_all(doc.as_bytes())?))?;
        }
    }
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!("rare top-1 rare fraction     {}", fmt(report.rare_top1_rare_fraction));
    println!("popular top-1 popular frac.  {}", fmt(report.popular_top1_popular_fraction));
    println!("frequency probe accuracy     {}", fmt(report.probe_accuracy));
    println!("projection probe accuracy    {}", fmt(report.projection_probe_accuracy));
    println!("displacement ratio           {}", fmt(report.displacement_ratio));
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// Similarity datasets (`word1 word2 score` lines).
    #[arg(required = true)]
    datasets: Vec<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let wv = load_vectors(&args.embeddings)?;
    let mut rows = Vec::new();
    for path in &args.datasets {
        let name = dataset_name(path);
        let result = SimilarityDataset::load(path)
            .map_err(anyhow::Error::from)
            .and_then(|ds| Ok(spearman(&wv.vectors, &wv.words, &ds)?));
        rows.push((name, result));
    }

    let mut out = io::stdout().lock();
    writeln!(out, "{:<20} {:>8} {:>9} {:>11}", "dataset", "rho*100", "coverage", "pairs")?;
    for (name, r) in &rows {
        match r {
            Ok(s) => writeln!(
                out,
                "{name:<20} {:>8.1} {:>8.1}% {:>5}/{:<5}",
                100.0 * s.rho,
                100.0 * s.coverage,
                s.covered,
                s.total
            )?,
            Err(e) => writeln!(out, "{name:<20} error: {e:#}")?,
        }
    }
    if let Some(path) = &args.csv {
        write_atomic(path, |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["dataset", "rho_x100", "coverage", "covered", "total", "error"])
                .map_err(io::Error::from)?;
            for (name, r) in &rows {
                let record = match r {
                    Ok(s) => [
                        name.clone(),
                        (100.0 * s.rho).to_string(),
                        s.coverage.to_string(),
                        s.covered.to_string(),
                        s.total.to_string(),
                        String::new(),
                    ],
                    Err(e) => [name.clone(), String::new(), String::new(), String::new(), String::new(), format!("{e:#}")],
                };
                csv.write_record(&record).map_err(io::Error::from)?;
            }
            csv.flush()?;
            Ok(())
        })?;
    }
    ensure!(rows.iter().any(|(_, r)| r.is_ok()), "no dataset could be scored");
    Ok(())
}

#[derive(Args)]
struct NnArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    word: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Vocabulary dump for the popular/rare tags. Without it the file is
    /// assumed to list words by descending frequency, as training writes it.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    popular_fraction: f64,
}

fn cmd_nn(args: NnArgs) -> Result<()> {
    let wv = load_vectors(&args.embeddings)?;
    let Some(q) = wv.index_of(&args.word) else {
        bail!("word not in vocabulary: {:?}", args.word);
    };
    let n = wv.words.len();
    ensure!(n >= 2, "need at least two words for neighbors");
    let mut k = args.k;
    if k >= n {
        warn!("k = {k} clamped to {}", n - 1);
        k = n - 1;
    }
    let partition = match &args.vocab {
        Some(p) => partition_rows(&wv, &load_vocab(p)?, args.popular_fraction)?,
        None => {
            let n_pop = (args.popular_fraction * n as f64).round() as usize;
            FrequencyPartition::from_mask((0..n).map(|i| i < n_pop).collect(), args.popular_fraction)?
        }
    };
    let tag = |i: usize| if partition.is_popular(i) { "popular" } else { "rare" };
    let mut out = io::stdout().lock();
    writeln!(out, "{} ({})", args.word, tag(q))?;
    for (rank, (j, sim)) in nearest_neighbors(&wv.vectors, q, k)?.into_iter().enumerate() {
        writeln!(out, "{:>4} {:<24} {sim:.6} {}", rank + 1, wv.words[j], tag(j))?;
    }
    Ok(())
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 1_000_000)]
    tokens: usize,
    #[arg(long, default_value_t = 50)]
    topics: usize,
    #[arg(long, default_value_t = 1.0)]
    exponent: f64,
    #[arg(long, default_value_t = 0.7)]
    topic_weight: f64,
    #[arg(long, default_value_t = 20)]
    sentence_len: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let text = zipf_corpus(&ZipfCorpusConfig {
        vocab_size: args.vocab_size,
        tokens: args.tokens,
        topics: args.topics,
        exponent: args.exponent,
        topic_weight: args.topic_weight,
        sentence_len: args.sentence_len,
        seed: args.seed,
    })?;
    write_atomic(&args.out, |w| Ok(w.write_all(text.as_bytes())?))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(*a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Nn(a) => cmd_nn(a),
        Command::Generate(a) => cmd_generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
