use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use seedline_core::corpus::{demo_records, encode_line, load_corpus, normalize, Corpus, CorpusOptions, Vocabulary};
use seedline_core::lstm_vae::{train as train_vae, TrainConfig, VaeConfig};
use seedline_core::pipeline::{resolve_band, scored_pool, PoolSpec};
use seedline_core::wundt::{summary_quantiles, BandConfig, NgramIndex, ScoreReport, ScoredText, DEFAULT_NGRAM, DEFAULT_REFERENCE_SIZE};
use seedline_core::{train_lm, LmConfig, LmModel, OptimizerKind, Provenance, VaeModel};
use seedline_service::{CurationSession, ExportFormat, PoolService, ServiceConfig};

use crate::args::{
    merge_config, BandFlags, Cli, Command, CorpusFlags, ExportArgs, FormatArg, GenerateArgs, OptimizerArg, ScoreArgs,
    ServeArgs, TrainFlags, TrainLmArgs, TrainVaeArgs,
};
use crate::error::CliError;

const DEFAULT_GENERATE_SEED: u64 = 7;
const DEFAULT_PORT: u16 = 8080;

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::TrainVae(a) => cmd_train_vae(merge_config(a, config)?),
        Command::TrainLm(a) => cmd_train_lm(merge_config(a, config)?),
        Command::Generate(a) => cmd_generate(merge_config(a, config)?),
        Command::Score(a) => cmd_score(merge_config(a, config)?),
        Command::Serve(a) => cmd_serve(merge_config(a, config)?),
        Command::Export(a) => cmd_export(merge_config(a, config)?),
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::usage(format!("--{flag} is required")))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::runtime(format!("{}: {e}", parent.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn corpus_options(flags: &CorpusFlags) -> CorpusOptions {
    let d = CorpusOptions::default();
    CorpusOptions {
        min_count: flags.min_count.unwrap_or(d.min_count),
        val_fraction: flags.val_fraction.unwrap_or(d.val_fraction),
        seed: flags.split_seed.unwrap_or(d.seed),
        max_len: flags.max_len.unwrap_or(d.max_len),
    }
}

fn read_corpus(path: Option<&Path>, options: &CorpusOptions) -> Result<(Corpus, Vocabulary), CliError> {
    if !(0.0..1.0).contains(&options.val_fraction) {
        return Err(CliError::usage("--val-fraction must be in [0, 1)"));
    }
    let (corpus, vocab) = match path {
        Some(p) => load_corpus(p, options)?,
        None => Corpus::build(&demo_records(), options),
    };
    if corpus.skipped > 0 {
        log::warn!("skipped {} corpus lines that could not be encoded", corpus.skipped);
    }
    Ok((corpus, vocab))
}

fn train_config(flags: &TrainFlags) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    let optimizer = match (flags.optimizer, flags.momentum) {
        (Some(OptimizerArg::Adam), Some(_)) => return Err(CliError::usage("--momentum applies to sgd only")),
        (Some(OptimizerArg::Adam), None) => OptimizerKind::adam(),
        (_, Some(momentum)) if !(0.0..1.0).contains(&momentum) => {
            return Err(CliError::usage("--momentum must be in [0, 1)"))
        }
        (_, Some(momentum)) => OptimizerKind::Sgd { momentum },
        _ => d.optimizer,
    };
    let lr = flags.lr.unwrap_or(d.lr);
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(CliError::usage("--lr must be positive"));
    }
    let clip = match flags.clip {
        None => d.clip,
        Some(0.0) => None,
        Some(c) if c > 0.0 => Some(c),
        Some(_) => return Err(CliError::usage("--clip must be ≥ 0")),
    };
    Ok(TrainConfig {
        epochs: flags.epochs.unwrap_or(d.epochs),
        lr,
        batch_size: flags.batch_size.unwrap_or(d.batch_size),
        seed: flags.seed.unwrap_or(d.seed),
        clip,
        optimizer,
    })
}

/// Streams one JSON object per epoch to the metrics log.
struct MetricsLog {
    out: BufWriter<File>,
    failed: Option<std::io::Error>,
}

impl MetricsLog {
    fn create(path: &Path) -> Result<Self, CliError> {
        Ok(Self {
            out: create(path)?,
            failed: None,
        })
    }

    fn record<M: Serialize>(&mut self, m: &M) {
        if self.failed.is_some() {
            return;
        }
        let line = serde_json::to_string(m).expect("metrics serialise");
        if let Err(e) = writeln!(self.out, "{line}").and_then(|_| self.out.flush()) {
            self.failed = Some(e);
        }
    }

    fn finish(mut self) -> Result<(), CliError> {
        match self.failed.take() {
            Some(e) => Err(CliError::runtime(format!("writing metrics: {e}"))),
            None => self.out.flush().map_err(CliError::runtime),
        }
    }
}

fn resolved_corpus_flags(flags: &CorpusFlags, options: &CorpusOptions) -> CorpusFlags {
    CorpusFlags {
        corpus: flags.corpus.clone(),
        min_count: Some(options.min_count),
        val_fraction: Some(options.val_fraction),
        split_seed: Some(options.seed),
        max_len: Some(options.max_len),
    }
}

fn resolved_train_flags(flags: &TrainFlags, cfg: &TrainConfig, metrics: &Path, d_embed: usize, d_hidden: usize) -> TrainFlags {
    let (optimizer, momentum) = match cfg.optimizer {
        OptimizerKind::Sgd { momentum } => (OptimizerArg::Sgd, Some(momentum)),
        OptimizerKind::Adam { .. } => (OptimizerArg::Adam, None),
    };
    TrainFlags {
        out: flags.out.clone(),
        metrics: Some(metrics.to_path_buf()),
        epochs: Some(cfg.epochs),
        lr: Some(cfg.lr),
        batch_size: Some(cfg.batch_size),
        seed: Some(cfg.seed),
        clip: Some(cfg.clip.unwrap_or(0.0)),
        optimizer: Some(optimizer),
        momentum,
        d_embed: Some(d_embed),
        d_hidden: Some(d_hidden),
    }
}

/// Writes the fully resolved flags next to the checkpoint; the file can be
/// fed back through `--config`.
fn write_run_config<A: Serialize>(out: &Path, args: &A) -> Result<(), CliError> {
    let path = with_suffix(out, ".config.json");
    let mut f = create(&path)?;
    serde_json::to_writer_pretty(&mut f, args).map_err(CliError::runtime)?;
    f.flush().map_err(CliError::runtime)
}

fn cmd_train_vae(args: TrainVaeArgs) -> Result<(), CliError> {
    let out = required(args.train.out.clone(), "out")?;
    let options = corpus_options(&args.corpus);
    let (corpus, vocab) = read_corpus(args.corpus.corpus.as_deref(), &options)?;
    let d = VaeConfig::default();
    let config = VaeConfig {
        d_embed: args.train.d_embed.unwrap_or(d.d_embed),
        d_hidden: args.train.d_hidden.unwrap_or(d.d_hidden),
        d_z: args.d_z.unwrap_or(d.d_z),
        kl_anneal_epochs: args.kl_anneal_epochs.unwrap_or(d.kl_anneal_epochs),
        word_dropout: args.word_dropout.unwrap_or(d.word_dropout),
        max_len: options.max_len,
        conditional: args.conditional.unwrap_or(d.conditional),
        tag_dim: args.tag_dim.unwrap_or(d.tag_dim),
    };
    config.validate()?;
    let train_cfg = train_config(&args.train)?;
    let metrics_path = args.train.metrics.clone().unwrap_or_else(|| with_suffix(&out, ".metrics.jsonl"));
    let mut metrics = MetricsLog::create(&metrics_path)?;
    log::info!(
        "training VAE on {} lines ({} words), {} epochs",
        corpus.train.len(),
        vocab.len(),
        train_cfg.epochs
    );
    let (model, history) = train_vae::<f64>(&corpus, &vocab, config, &train_cfg, |m| {
        log::info!("epoch {} recon {:.4} kl {:.4} kl_weight {:.3}", m.epoch, m.recon, m.kl, m.kl_weight);
        metrics.record(m);
    })?;
    metrics.finish()?;
    model.save(&out).map_err(CliError::runtime)?;
    let record = TrainVaeArgs {
        corpus: resolved_corpus_flags(&args.corpus, &options),
        train: resolved_train_flags(&args.train, &train_cfg, &metrics_path, config.d_embed, config.d_hidden),
        d_z: Some(config.d_z),
        kl_anneal_epochs: Some(config.kl_anneal_epochs),
        word_dropout: Some(config.word_dropout),
        conditional: Some(config.conditional),
        tag_dim: Some(config.tag_dim),
    };
    write_run_config(&out, &record)?;
    if let Some(last) = history.last() {
        log::info!("wrote {} (final recon {:.4})", out.display(), last.recon);
    }
    Ok(())
}

fn cmd_train_lm(args: TrainLmArgs) -> Result<(), CliError> {
    let out = required(args.train.out.clone(), "out")?;
    let options = corpus_options(&args.corpus);
    let (corpus, vocab) = read_corpus(args.corpus.corpus.as_deref(), &options)?;
    let d = LmConfig::default();
    let config = LmConfig {
        d_embed: args.train.d_embed.unwrap_or(d.d_embed),
        d_hidden: args.train.d_hidden.unwrap_or(d.d_hidden),
        max_len: options.max_len,
    };
    let train_cfg = train_config(&args.train)?;
    let metrics_path = args.train.metrics.clone().unwrap_or_else(|| with_suffix(&out, ".metrics.jsonl"));
    let mut metrics = MetricsLog::create(&metrics_path)?;
    log::info!("training LM on {} lines, {} epochs", corpus.train.len(), train_cfg.epochs);
    let (model, history) = train_lm::<f64>(&corpus, &vocab, config, &train_cfg, |m| {
        log::info!("epoch {} ce {:.4} ppl {:.3}", m.epoch, m.train_ce, m.perplexity);
        metrics.record(m);
    })?;
    metrics.finish()?;
    model.save(&out).map_err(CliError::runtime)?;
    let record = TrainLmArgs {
        corpus: resolved_corpus_flags(&args.corpus, &options),
        train: resolved_train_flags(&args.train, &train_cfg, &metrics_path, config.d_embed, config.d_hidden),
    };
    write_run_config(&out, &record)?;
    if let Some(last) = history.last() {
        log::info!("wrote {} (final perplexity {:.3})", out.display(), last.perplexity);
    }
    Ok(())
}

/// The band named by the flags, or `None` when neither flag is given.
fn band_from_flags(flags: &BandFlags) -> Result<Option<BandConfig>, CliError> {
    let pair = |v: &Vec<f64>, flag: &str| -> Result<(f64, f64), CliError> {
        match v.as_slice() {
            [a, b] => Ok((*a, *b)),
            _ => Err(CliError::usage(format!("--{flag} takes two values"))),
        }
    };
    let band = match (&flags.band_quantiles, &flags.band_absolute) {
        (Some(_), Some(_)) => return Err(CliError::usage("give at most one of --band-quantiles and --band-absolute")),
        (Some(q), None) => {
            let (q_low, q_high) = pair(q, "band-quantiles")?;
            BandConfig::Quantile { q_low, q_high }
        }
        (None, Some(a)) => {
            let (low, high) = pair(a, "band-absolute")?;
            BandConfig::Absolute { low, high }
        }
        (None, None) => return Ok(None),
    };
    band.validate()?;
    Ok(Some(band))
}

fn novelty_index(corpus: Option<&Path>) -> Result<NgramIndex, CliError> {
    let (corpus, _) = read_corpus(corpus, &CorpusOptions::default())?;
    Ok(NgramIndex::from_corpus(&corpus, DEFAULT_NGRAM))
}

/// One line of `generate` output.
#[derive(Serialize)]
struct GenerateRecord<'a> {
    text: &'a str,
    surprisal: f64,
    novelty: f64,
    in_band: bool,
    provenance: &'a Provenance,
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let n = required(args.n, "n")?;
    if n == 0 {
        return Err(CliError::usage("--n must be ≥ 1"));
    }
    let temperature = args.temperature.unwrap_or(1.0);
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(CliError::usage("--temperature must be positive"));
    }
    let reference_size = args.reference_size.unwrap_or(DEFAULT_REFERENCE_SIZE);
    if reference_size == 0 {
        return Err(CliError::usage("--reference-size must be ≥ 1"));
    }
    let explicit_band = band_from_flags(&args.band)?;
    let vae = VaeModel::load(&required(args.vae.clone(), "vae")?)?;
    let lm = LmModel::load_for_vocab(&required(args.lm.clone(), "lm")?, vae.vocab())?;
    let index = novelty_index(args.corpus.as_deref())?;
    let tag = args.tag.as_deref();
    let seed = args.seed.unwrap_or(DEFAULT_GENERATE_SEED);

    // Without band flags every line is kept and `in_band` is reported
    // against the default quartile band.
    let band = explicit_band.unwrap_or_default();
    let mut reference_rng = ChaCha8Rng::seed_from_u64(seed);
    reference_rng.set_stream(1);
    let resolved = resolve_band(&band, &vae, &lm, reference_size, Some(temperature), tag, &mut reference_rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = PoolSpec {
        n,
        temperature: Some(temperature),
        tag,
        apply_band: explicit_band.is_some(),
    };
    let (pool, report) = scored_pool(&vae, &lm, &index, resolved, spec, &mut rng)?;

    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    for line in &pool {
        let score = line.score.as_ref().expect("pool lines are scored");
        let record = GenerateRecord {
            text: &line.text,
            surprisal: score.surprisal,
            novelty: score.novelty,
            in_band: score.in_band,
            provenance: &line.provenance,
        };
        serde_json::to_writer(&mut out, &record).map_err(CliError::runtime)?;
        out.write_all(b"\n").map_err(CliError::runtime)?;
    }
    out.flush().map_err(CliError::runtime)?;
    log::info!(
        "{} lines written; band [{:.3}, {:.3}] below {} in {} above {}",
        pool.len(),
        report.band.low,
        report.band.high,
        report.below,
        report.in_band,
        report.above
    );
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<(), CliError> {
    let lm = LmModel::load(&required(args.lm.clone(), "lm")?)?;
    let lines_path = required(args.lines.clone(), "lines")?;
    let band = band_from_flags(&args.band)?.unwrap_or_default();
    let text = std::fs::read_to_string(&lines_path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", lines_path.display())))?;
    let mut texts = Vec::new();
    let mut tokens = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let normalized = normalize(raw);
        let encoded = encode_line(&normalized, lm.vocab(), lm.config().max_len)
            .map_err(|e| CliError::usage(format!("{} line {}: {e}", lines_path.display(), i + 1)))?;
        texts.push(normalized);
        tokens.push(encoded.ids);
    }
    if texts.is_empty() {
        return Err(CliError::usage(format!("{} has no lines to score", lines_path.display())));
    }
    let index = novelty_index(args.corpus.as_deref())?;
    let toks: Vec<&[usize]> = tokens.iter().map(Vec::as_slice).collect();
    let surprisals: Vec<f64> = lm.surprisals(&toks)?.into_iter().collect();
    let resolved = band.resolve(&surprisals)?;
    let report = ScoreReport {
        lines: texts
            .iter()
            .zip(&surprisals)
            .map(|(text, &surprisal)| ScoredText {
                text: text.clone(),
                surprisal,
                novelty: index.novelty(text),
                in_band: resolved.contains(surprisal),
            })
            .collect(),
        quantiles: summary_quantiles(&surprisals),
    };
    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    serde_json::to_writer_pretty(&mut out, &report).map_err(CliError::runtime)?;
    out.write_all(b"\n").and_then(|_| out.flush()).map_err(CliError::runtime)
}

fn cmd_serve(args: ServeArgs) -> Result<(), CliError> {
    let config = ServiceConfig {
        vae: required(args.vae, "vae")?,
        lm: required(args.lm, "lm")?,
        corpus: args.corpus,
        data_dir: required(args.data_dir, "data-dir")?,
        reference_size: args.reference_size.unwrap_or(DEFAULT_REFERENCE_SIZE),
        reference_seed: args.reference_seed.unwrap_or(0),
    };
    if config.reference_size == 0 {
        return Err(CliError::usage("--reference-size must be ≥ 1"));
    }
    let host = args.host.unwrap_or_else(|| "127.0.0.1".to_string());
    let addr: std::net::SocketAddr = format!("{host}:{}", args.port.unwrap_or(DEFAULT_PORT))
        .parse()
        .map_err(|e| CliError::usage(format!("bad listen address: {e}")))?;
    let service = Arc::new(PoolService::open(&config)?);
    let runtime = tokio::runtime::Runtime::new().map_err(CliError::runtime)?;
    runtime
        .block_on(seedline_service::http::serve(service, addr))
        .map_err(CliError::runtime)
}

fn cmd_export(args: ExportArgs) -> Result<(), CliError> {
    let path = required(args.session, "session")?;
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let session = CurationSession::from_json(&text)?;
    let format = match args.format.unwrap_or(FormatArg::Text) {
        FormatArg::Text => ExportFormat::Text,
        FormatArg::Json => ExportFormat::Json,
    };
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(session.export(format).as_bytes())
        .and_then(|_| stdout.flush())
        .map_err(CliError::runtime)
}
