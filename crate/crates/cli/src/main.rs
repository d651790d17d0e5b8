use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use alien_core::attacks::{self, AlignedPair, ChatBackend, EndpointConfig, HttpChat, ProbeItem};
use alien_core::bijection::{self, BijectionKey, BuildConfig, EditMode};
use alien_core::embeddings::load_embeddings;
use alien_core::report::{self, SummaryEntry};
use alien_core::translator::{self, Translator};
use alien_core::vocab::{load_vocab, read_id_lines, TokenSequence, Vocabulary};
use alien_core::{synth, Error};

/// Build vocabulary bijection keys, translate to and from alien form, and
/// run recovery attacks.
#[derive(Parser, Debug)]
#[command(name = "alien", version, about)]
struct Cli {
    /// Worker threads for data-parallel stages (default: available cores).
    #[arg(long, global = true, env = "ALIEN_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a key from a vocabulary and token embeddings.
    BuildKey(BuildKeyArgs),
    /// Translate plaintext (or plaintext IDs) to alien form.
    Encode(CodecArgs),
    /// Translate alien text (or alien IDs) back to plaintext.
    Decode(CodecArgs),
    /// Alienize the content fields of a JSONL fine-tuning corpus.
    EmitDataset(DatasetArgs),
    /// Restore an alienized JSONL corpus to plaintext.
    RestoreDataset(DatasetArgs),
    /// Run a recovery attack and report how much of the key it recovers.
    #[command(subcommand)]
    Attack(AttackCommand),
    /// Pairwise overlap between keys built for the same vocabulary.
    Overlap(OverlapArgs),
    /// Generate seeded synthetic fixtures.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Args, Debug)]
struct VocabArgs {
    /// Vocabulary JSON object mapping token strings to IDs.
    #[arg(long)]
    vocab: PathBuf,
    /// JSON array of special token strings.
    #[arg(long)]
    specials: Option<PathBuf>,
}

impl VocabArgs {
    fn load(&self) -> Result<Vocabulary> {
        Ok(load_vocab(&self.vocab, self.specials.as_deref())?)
    }
}

#[derive(Args, Debug)]
struct BuildKeyArgs {
    #[command(flatten)]
    vocab: VocabArgs,
    /// Embedding matrix (binary or text format), one row per token ID.
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of permutable tokens to alienize.
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Weight of the cosine-distance term.
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    /// Nearest-neighbor candidates per token.
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Seeded partitions built independently.
    #[arg(long, default_value_t = 1)]
    buckets: usize,
    /// Query block width for neighbor search.
    #[arg(long, default_value_t = 50)]
    greedy_batch: usize,
    #[arg(long, value_enum, default_value_t = EditArg::Normalized)]
    edit_mode: EditArg,
    /// Output key file.
    #[arg(long)]
    out: PathBuf,
    /// Also write the opacity report as a JSON summary.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EditArg {
    Normalized,
    Raw,
}

impl From<EditArg> for EditMode {
    fn from(e: EditArg) -> Self {
        match e {
            EditArg::Normalized => EditMode::Normalized,
            EditArg::Raw => EditMode::Raw,
        }
    }
}

#[derive(Args, Debug)]
struct CodecArgs {
    #[arg(long)]
    key: PathBuf,
    #[command(flatten)]
    vocab: VocabArgs,
    /// Fail instead of falling back to an ID stream when the rendered text
    /// would not re-tokenize to the same IDs.
    #[arg(long)]
    strict: bool,
    /// Treat input and output as ID lines instead of text.
    #[arg(long)]
    ids: bool,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    #[arg(long)]
    key: PathBuf,
    #[command(flatten)]
    vocab: VocabArgs,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    /// Reject records whose alien rendering is not retokenization-safe.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand, Debug)]
enum AttackCommand {
    /// Rank-match token frequencies of an alien corpus against a reference.
    Freq(FreqArgs),
    /// Extrapolate leaked aligned pairs through n-gram contexts.
    Ngram(NgramArgs),
    /// Guess each token's partner as its nearest embedding neighbor.
    Nn(NnArgs),
    /// Few-shot inverse translation through a chat-completion endpoint.
    Probe(ProbeArgs),
}

#[derive(Args, Debug)]
struct FreqArgs {
    /// Alien ID lines observed by the attacker.
    #[arg(long)]
    alien: PathBuf,
    /// Plaintext ID lines from the same distribution.
    #[arg(long)]
    reference: PathBuf,
    /// Ground-truth key used only for scoring.
    #[arg(long)]
    key: PathBuf,
    /// Number of top-ranked tokens to hypothesize (default: all).
    #[arg(long)]
    top_m: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NgramArgs {
    /// Plaintext ID lines of the leaked pairs.
    #[arg(long)]
    leak_plain: PathBuf,
    /// Alien ID lines of the leaked pairs, aligned with --leak-plain.
    #[arg(long)]
    leak_alien: PathBuf,
    /// Use only the first N leaked pairs.
    #[arg(long)]
    pairs: Option<usize>,
    /// Alien ID lines to extrapolate over.
    #[arg(long)]
    eval: PathBuf,
    /// Public plaintext ID lines.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NnArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    /// Chat-completion base URL.
    #[arg(long, env = "ALIEN_ENDPOINT")]
    endpoint: String,
    /// Bearer token.
    #[arg(long, env = "ALIEN_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[arg(long, default_value = "default")]
    model: String,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    /// Demonstrations to include (typically 0, 1, 5 or 20).
    #[arg(long, default_value_t = 0)]
    shots: usize,
    /// JSONL of {"alien", "plain"} items used as demonstrations.
    #[arg(long)]
    shot_pool: Option<PathBuf>,
    /// JSONL of {"alien", "plain"} items to translate.
    #[arg(long)]
    eval: PathBuf,
    /// Prompt template file; must contain {alien}.
    #[arg(long)]
    template: Option<PathBuf>,
    /// JSONL transcript of every exchange.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OverlapArgs {
    #[arg(long, num_args = 1.., required = true)]
    keys: Vec<PathBuf>,
    /// CSV matrix output.
    #[arg(long)]
    out: PathBuf,
    /// Also write the matrix as a JSON summary.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum SynthCommand {
    /// Byte-complete vocabulary with three special tokens.
    Vocab {
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        specials_out: Option<PathBuf>,
    },
    /// Clustered Gaussian embeddings.
    Embeddings {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        d: usize,
        #[arg(long, default_value_t = 40)]
        clusters: usize,
        #[arg(long, default_value_t = 0.8)]
        spread: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the text format instead of binary.
        #[arg(long)]
        text: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// ID-line corpus over the permutable tokens of a vocabulary.
    Corpus {
        #[command(flatten)]
        vocab: VocabArgs,
        #[arg(long, value_enum, default_value_t = CorpusKind::Zipf)]
        kind: CorpusKind,
        #[arg(long, default_value_t = 1.1)]
        exponent: f64,
        #[arg(long, default_value_t = 1000)]
        sequences: usize,
        #[arg(long, default_value_t = 64)]
        length: usize,
        /// Seed of the frequency ranking and class structure.
        #[arg(long, default_value_t = 0)]
        model_seed: u64,
        /// Seed of this particular sample.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CorpusKind {
    Zipf,
    Uniform,
    ClassBigram,
}

/// Errors that should exit with the usage status.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_chain(&e));
            let is_usage = e.downcast_ref::<Usage>().is_some()
                || matches!(e.downcast_ref::<Error>(), Some(Error::Argument(_)));
            ExitCode::from(if is_usage { 2 } else { 1 })
        }
    }
}

/// Join the error chain, skipping causes their parent already prints.
fn render_chain(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.ends_with(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::BuildKey(a) => build_key(a),
        Command::Encode(a) => codec(a, true),
        Command::Decode(a) => codec(a, false),
        Command::EmitDataset(a) => dataset(a, true),
        Command::RestoreDataset(a) => dataset(a, false),
        Command::Attack(a) => attack(a),
        Command::Overlap(a) => overlap(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(threads: Option<usize>) -> Result<()> {
    if threads == Some(0) {
        return Err(usage("--threads must be positive"));
    }
    Ok(())
}

fn write_report(path: Option<&Path>, entry: SummaryEntry) -> Result<()> {
    if let Some(path) = path {
        report::emit_summary(vec![entry], path)?;
    }
    Ok(())
}

fn build_key(a: BuildKeyArgs) -> Result<()> {
    let config = BuildConfig {
        k: a.k,
        mu: a.mu,
        rho: a.rho,
        seed: a.seed,
        buckets: a.buckets,
        greedy_batch: a.greedy_batch,
        edit_mode: a.edit_mode.into(),
    };
    config.validate()?;
    let vocab = a.vocab.load()?;
    let store = load_embeddings(&a.embeddings)?;
    let start = Instant::now();
    let key = bijection::build_key(&vocab, &store, &config)?;
    info!("built key in {:.2}s", start.elapsed().as_secs_f64());
    key.save(&a.out)?;
    let opacity = bijection::opacity_report(&key, &vocab)?;
    if opacity.empty_mapping {
        eprintln!("warning: identity key (nothing is remapped)");
    }
    println!("vocabulary   {} tokens, fingerprint {}", vocab.len(), vocab.fingerprint());
    println!("mask         {} tokens", opacity.mask_size);
    println!("pairs        {}", opacity.pair_count);
    println!("fixed points {}", opacity.fixed_points);
    println!("mean edit    {:.4}", opacity.mean_edit);
    println!("median edit  {:.4}", opacity.median_edit);
    println!("unchanged    {:.4}", opacity.unchanged_fraction);
    write_report(a.report.as_deref(), SummaryEntry::Opacity(opacity))
}

fn load_key_for(path: &Path, vocab: &Vocabulary) -> Result<BijectionKey> {
    let key = BijectionKey::load(path)?;
    key.ensure_compatible(vocab)?;
    Ok(key)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn codec(a: CodecArgs, encode: bool) -> Result<()> {
    let vocab = a.vocab.load()?;
    let key = load_key_for(&a.key, &vocab)?;
    let t = Translator::new(&key, &vocab)?;
    let input = read(&a.input)?;
    let out = if a.ids {
        let text = String::from_utf8(input).map_err(|_| Error::Format("ID input is not UTF-8".into()))?;
        let (fp, seqs) = translator::read_id_stream(&text)?;
        t.check_stream_fingerprint(fp)?;
        let mapped = seqs
            .iter()
            .map(|s| if encode { t.encode_ids(s) } else { t.decode_ids(s) })
            .collect::<alien_core::Result<Vec<_>>>()?;
        if mapped.is_empty() {
            String::new()
        } else if encode {
            translator::write_id_stream(vocab.fingerprint(), &mapped)
        } else {
            mapped.iter().map(|s| s.to_line() + "\n").collect()
        }
        .into_bytes()
    } else if encode {
        let tr = t.encode_for_transport(&input, a.strict, false)?;
        if !tr.as_text {
            eprintln!("note: rendering is not retokenization-safe; wrote an ID stream");
        }
        tr.bytes
    } else {
        t.decode_transport(&input)?
    };
    write(&a.output, &out)
}

fn dataset(a: DatasetArgs, emit: bool) -> Result<()> {
    let vocab = a.vocab.load()?;
    let key = load_key_for(&a.key, &vocab)?;
    let t = Translator::new(&key, &vocab)?;
    let summary = if emit {
        translator::alienize_dataset(&a.input, &t, &a.output, a.strict)?
    } else {
        translator::restore_dataset(&a.input, &t, &a.output)?
    };
    println!(
        "records {}, tokens {}, id-stream fields {}",
        summary.records, summary.tokens, summary.unsafe_renderings
    );
    Ok(())
}

fn id_lines(path: &Path) -> Result<Vec<TokenSequence>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_id_lines(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn print_report(r: &attacks::AttackReport) {
    let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |v| format!("{:.4}%", 100.0 * v));
    println!("attack             {}", r.attack_name);
    println!("evaluated          {}", r.evaluated_count);
    if r.token_recovery.is_some() {
        println!("token recovery     {}", pct(r.token_recovery));
    }
    if r.attack_name == "ngram" {
        println!("bijection recovery {}", pct(r.bijection_recovery));
    }
    if r.head_recovery.is_some() {
        println!("head recovery      {}", pct(r.head_recovery));
    }
    if let Some(b) = r.bleu {
        println!("BLEU               {b:.2}");
    }
    if let Some(rl) = r.rouge_l {
        println!("ROUGE-L            {rl:.4}");
    }
}

fn attack(cmd: AttackCommand) -> Result<()> {
    let (report, path) = match cmd {
        AttackCommand::Freq(a) => {
            let key = BijectionKey::load(&a.key)?;
            let alien = id_lines(&a.alien)?;
            let reference = id_lines(&a.reference)?;
            let top_m = a.top_m.unwrap_or(usize::MAX);
            (attacks::frequency_attack(&alien, &reference, &key, top_m)?, a.report)
        }
        AttackCommand::Ngram(a) => {
            let key = BijectionKey::load(&a.key)?;
            let plain = id_lines(&a.leak_plain)?;
            let alien = id_lines(&a.leak_alien)?;
            if plain.len() != alien.len() {
                bail!(
                    "--leak-plain has {} lines but --leak-alien has {}",
                    plain.len(),
                    alien.len()
                );
            }
            let budget = a.pairs.unwrap_or(plain.len());
            if budget > plain.len() {
                return Err(usage(format!("--pairs {budget} exceeds the {} leaked pairs", plain.len())));
            }
            let leaked: Vec<AlignedPair> = plain
                .into_iter()
                .zip(alien)
                .take(budget)
                .map(|(plain, alien)| AlignedPair { plain, alien })
                .collect();
            let eval = id_lines(&a.eval)?;
            let reference = id_lines(&a.reference)?;
            (attacks::ngram_attack(&leaked, &eval, &reference, a.n, &key)?, a.report)
        }
        AttackCommand::Nn(a) => {
            let key = BijectionKey::load(&a.key)?;
            let store = load_embeddings(&a.embeddings)?;
            (attacks::nn_mapping_attack(&store, &key)?, a.report)
        }
        AttackCommand::Probe(a) => {
            let report = probe(&a)?;
            (report, a.report)
        }
    };
    print_report(&report);
    write_report(path.as_deref(), SummaryEntry::Attack(report))
}

fn probe_items(path: &Path) -> Result<Vec<ProbeItem>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), n + 1)))
        .collect()
}

fn probe(a: &ProbeArgs) -> Result<attacks::AttackReport> {
    let eval = probe_items(&a.eval)?;
    let pool = match &a.shot_pool {
        Some(p) => probe_items(p)?,
        None if a.shots > 0 => return Err(usage("--shots > 0 needs --shot-pool")),
        None => Vec::new(),
    };
    let template = match &a.template {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => attacks::probe::DEFAULT_TEMPLATE.to_owned(),
    };
    let mut config = EndpointConfig::new(a.endpoint.clone(), a.model.clone());
    config.token = a.token.clone();
    config.timeout = Duration::from_secs(a.timeout);
    config.max_in_flight = a.max_in_flight;
    let client = HttpChat::new(config)?;
    let backend: &dyn ChatBackend = &client;
    Ok(attacks::llm_inverse_probe(
        backend,
        a.shots,
        &pool,
        &eval,
        &template,
        a.transcript.as_deref(),
        a.max_in_flight,
    )?)
}

fn overlap(a: OverlapArgs) -> Result<()> {
    let keys = a
        .keys
        .iter()
        .map(|p| BijectionKey::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let matrix = report::overlap_matrix(&keys)?;
    write(&a.out, matrix.to_csv().as_bytes())?;
    if let Some(max) = matrix.max_off_diagonal() {
        println!("max pairwise overlap {max:.4}%");
    }
    write_report(a.report.as_deref(), SummaryEntry::Overlap(matrix))
}

fn synth_cmd(cmd: SynthCommand) -> Result<()> {
    match cmd {
        SynthCommand::Vocab {
            size,
            seed,
            out,
            specials_out,
        } => {
            let vocab = synth::byte_complete_vocab(size, seed)?;
            write(&out, vocab.to_json()?.as_bytes())?;
            if let Some(path) = specials_out {
                write(&path, vocab.specials_to_json()?.as_bytes())?;
            }
            println!("fingerprint {}", vocab.fingerprint());
        }
        SynthCommand::Embeddings {
            n,
            d,
            clusters,
            spread,
            seed,
            text,
            out,
        } => {
            let store = synth::clustered_embeddings(n, d, clusters, spread, seed)?;
            if text {
                write(&out, store.to_text().as_bytes())?;
            } else {
                store.save(&out)?;
            }
        }
        SynthCommand::Corpus {
            vocab,
            kind,
            exponent,
            sequences,
            length,
            model_seed,
            seed,
            out,
        } => {
            let vocab = vocab.load()?;
            let ranking = synth::zipf_ranking(&vocab.permutable_ids(), model_seed);
            let corpus = match kind {
                CorpusKind::Zipf => synth::zipf_corpus(&ranking, exponent, sequences, length, seed)?,
                CorpusKind::Uniform => synth::uniform_corpus(&ranking, sequences, length, seed)?,
                CorpusKind::ClassBigram => {
                    let classes = (ranking.len() / 100).max(1);
                    synth::ClassBigram::new(&ranking, classes, 8, exponent, model_seed)?.sample(sequences, length, seed)
                }
            };
            let text: String = corpus.iter().map(|s| s.to_line() + "\n").collect();
            write(&out, text.as_bytes())?;
        }
    }
    Ok(())
}
