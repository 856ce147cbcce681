//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::align::{ibm1_train, prune_lexicon, LexiconTable, DEFAULT_MIN_PROB};
use crate::corpus::{
    apply_bpe, build_vocab, encode_pairs, invert_bpe, learn_joint_bpe, normalize_halfwidth,
    read_parallel, read_tokenized, tokenize, BpeModel, SentencePair, Vocabulary,
};
use crate::decode::{beam_search, BeamConfig, SearchResult, Termination};
use crate::eval::{bleu, length_ratio, sbleu};
use crate::model::{
    AttentionKind, Checkpoint, LexiconBias, Model, ModelConfig, ModelParams, DEFAULT_EPSILON,
};
use crate::train::{sample_translation, train_ml, train_mrt, TrainConfig, TrainLog};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "lexnmt",
    version,
    about = "Attentional NMT with lexicon-biased softmax"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize, learn and apply joint BPE, and build vocabularies.
    Preprocess(PreprocessArgs),
    /// Train IBM Model 1 and write a pruned lexicon table.
    Align(AlignArgs),
    /// Maximum-likelihood training.
    Train(TrainArgs),
    /// Minimum-risk fine-tuning of a trained checkpoint.
    MrtTrain(MrtArgs),
    /// Beam-search translation with one model or an ensemble.
    Decode(DecodeArgs),
    /// Corpus BLEU and length ratio of a hypothesis file.
    Score(ScoreArgs),
    /// Draw random translations from a model.
    Sample(SampleArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    train_src: PathBuf,
    #[arg(long)]
    train_tgt: PathBuf,
    #[arg(long, requires = "dev_tgt")]
    dev_src: Option<PathBuf>,
    #[arg(long, requires = "dev_src")]
    dev_tgt: Option<PathBuf>,
    /// Extra source-side file to segment (e.g. a test set).
    #[arg(long)]
    test_src: Option<PathBuf>,
    /// Number of BPE merges.
    #[arg(long, default_value_t = 2000)]
    merges: usize,
    /// Maximum vocabulary size per side, excluding the reserved symbols.
    #[arg(long, default_value_t = 30000)]
    vocab_size: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long)]
    src_vocab: PathBuf,
    #[arg(long)]
    tgt_vocab: PathBuf,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    /// Entries below this probability are dropped.
    #[arg(long, default_value_t = DEFAULT_MIN_PROB)]
    min_prob: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    train_src: PathBuf,
    #[arg(long)]
    train_tgt: PathBuf,
    #[arg(long)]
    dev_src: PathBuf,
    #[arg(long)]
    dev_tgt: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    src_vocab: PathBuf,
    #[arg(long)]
    tgt_vocab: PathBuf,
    /// Lexicon table; enables the lexicon bias.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    attention: Option<AttentionKind>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    attention_dim: Option<usize>,
    /// Half-width of the uniform initialization range.
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Learning-rate halvings before training stops.
    #[arg(long)]
    halvings: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    batch_words: Option<usize>,
    /// Sentences between development checks.
    #[arg(long)]
    dev_interval: Option<u64>,
    /// Sentences without improvement before the learning rate is halved.
    #[arg(long)]
    patience: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file with `[train]` and `[model]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Receives `model.ckpt` and `train.log`.
    #[arg(long)]
    run_dir: PathBuf,
    /// Record elapsed seconds in the log.
    #[arg(long)]
    wall_time: bool,
}

#[derive(Args, Debug)]
struct MrtArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint to fine-tune.
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    max_sample_len: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Receives `model.ckpt` and `mrt.log`.
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    wall_time: bool,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    /// Checkpoint; repeat to decode with an ensemble.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Segment raw input with these merges first.
    #[arg(long)]
    merges: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    word_penalty: f64,
    #[arg(long)]
    max_len: Option<usize>,
    /// Stop as soon as the best live hypothesis scores no higher than the
    /// best finished one, ignoring what the word penalty could still add.
    #[arg(long)]
    literal_termination: bool,
    /// Per-sentence search scores, one per line.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Write `index<TAB>BLEU+1` lines here.
    #[arg(long)]
    sentence_scores: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    merges: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 50)]
    max_len: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Model settings read from the `[model]` table of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ModelSettings {
    embed_dim: usize,
    hidden_dim: usize,
    attention: AttentionKind,
    attention_dim: usize,
    init_scale: f64,
    epsilon: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden_dim: 64,
            attention: AttentionKind::Dot,
            attention_dim: 64,
            init_scale: 0.1,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    train: TrainConfig,
    model: ModelSettings,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_owned(),
        line: 0,
        message: e.to_string(),
    })
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else if matches!(e, Error::InvalidArgument(_) | Error::NonPositiveEpsilon(_)) {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run_command<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::Align(a) => align(a),
        Command::Train(a) => train(a),
        Command::MrtTrain(a) => mrt_train(a),
        Command::Decode(a) => decode(a),
        Command::Score(a) => score(a),
        Command::Sample(a) => sample(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut text = String::new();
    for line in lines {
        text.push_str(&line);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn normalized(lines: Vec<(String, String)>) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    lines
        .into_iter()
        .map(|(s, t)| {
            (
                tokenize(&normalize_halfwidth(&s)),
                tokenize(&normalize_halfwidth(&t)),
            )
        })
        .unzip()
}

fn segment_all(bpe: &BpeModel, corpus: &[Vec<String>]) -> Vec<Vec<String>> {
    corpus.iter().map(|s| apply_bpe(bpe, s)).collect()
}

fn join_all(corpus: &[Vec<String>]) -> Vec<String> {
    corpus.iter().map(|s| s.join(" ")).collect()
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let (src, tgt) = normalized(read_parallel(&a.train_src, &a.train_tgt)?);
    if src.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let bpe = learn_joint_bpe(&src, &tgt, a.merges)?;
    let src = segment_all(&bpe, &src);
    let tgt = segment_all(&bpe, &tgt);
    let src_vocab = build_vocab(&src, a.vocab_size)?;
    let tgt_vocab = build_vocab(&tgt, a.vocab_size)?;

    create_dir(&a.out_dir)?;
    let out = |name: &str| a.out_dir.join(name);
    bpe.save(&out("bpe.merges"))?;
    src_vocab.save(&out("vocab.src"))?;
    tgt_vocab.save(&out("vocab.tgt"))?;
    write_lines(&out("train.src"), join_all(&src))?;
    write_lines(&out("train.tgt"), join_all(&tgt))?;
    if let (Some(ds), Some(dt)) = (&a.dev_src, &a.dev_tgt) {
        let (s, t) = normalized(read_parallel(ds, dt)?);
        write_lines(&out("dev.src"), join_all(&segment_all(&bpe, &s)))?;
        write_lines(&out("dev.tgt"), join_all(&segment_all(&bpe, &t)))?;
    }
    if let Some(path) = &a.test_src {
        let lines = read_tokenized(path)?;
        let lines: Vec<Vec<String>> = lines
            .iter()
            .map(|s| apply_bpe(&bpe, &tokenize(&normalize_halfwidth(&s.join(" ")))))
            .collect();
        write_lines(&out("test.src"), join_all(&lines))?;
    }
    log::info!(
        "{} merges, vocabularies {} / {}",
        bpe.len(),
        src_vocab.len(),
        tgt_vocab.len()
    );
    Ok(())
}

fn read_pairs(
    src: &Path,
    tgt: &Path,
    sv: &Vocabulary,
    tv: &Vocabulary,
) -> Result<Vec<SentencePair>> {
    let lines = read_parallel(src, tgt)?;
    let (s, t): (Vec<Vec<String>>, Vec<Vec<String>>) = lines
        .iter()
        .map(|(s, t)| (tokenize(s), tokenize(t)))
        .unzip();
    let pairs = encode_pairs(&s, &t, sv, tv);
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(pairs)
}

fn align(a: AlignArgs) -> Result<()> {
    let sv = Vocabulary::load(&a.src_vocab)?;
    let tv = Vocabulary::load(&a.tgt_vocab)?;
    let pairs = read_pairs(&a.src, &a.tgt, &sv, &tv)?;
    let table = ibm1_train(&pairs, a.iterations)?;
    let table = prune_lexicon(&table, a.min_prob)?;
    table.save(&a.output, &sv, &tv)
}

fn load_lexicon(
    path: Option<&Path>,
    epsilon: Option<f64>,
    sv: &Vocabulary,
    tv: &Vocabulary,
) -> Result<Option<LexiconBias>> {
    match (path, epsilon) {
        (Some(p), Some(eps)) => Ok(Some(LexiconBias::new(LexiconTable::load(p, sv, tv)?, eps)?)),
        (None, None) => Ok(None),
        (None, Some(_)) => Err(Error::InvalidArgument(
            "model was trained with a lexicon bias; pass --lexicon".into(),
        )),
        (Some(_), None) => Err(Error::InvalidArgument(
            "model was trained without a lexicon bias; drop --lexicon".into(),
        )),
    }
}

fn save_checkpoint(path: &Path, model: &Model, sv: &Vocabulary, tv: &Vocabulary) -> Result<()> {
    Checkpoint {
        params: model.params.clone(),
        src_vocab: sv.clone(),
        tgt_vocab: tv.clone(),
        lexicon_epsilon: model.lexicon.as_ref().map(|l| l.epsilon),
    }
    .save(path)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn train(a: TrainArgs) -> Result<()> {
    let file = load_config(a.config.as_deref())?;
    let mut cfg = file.train;
    let mut ms = file.model;
    macro_rules! over {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    over!(cfg.initial_lr, a.lr);
    over!(cfg.halvings, a.halvings);
    over!(cfg.clip_norm, a.clip_norm);
    over!(cfg.word_budget, a.batch_words);
    over!(cfg.dev_check_interval, a.dev_interval);
    over!(cfg.patience, a.patience);
    over!(cfg.seed, a.seed);
    if a.max_epochs.is_some() {
        cfg.max_epochs = a.max_epochs;
    }
    cfg.record_wall_time |= a.wall_time;
    over!(ms.embed_dim, a.embed_dim);
    over!(ms.hidden_dim, a.hidden_dim);
    over!(ms.attention, a.attention);
    over!(ms.attention_dim, a.attention_dim);
    over!(ms.init_scale, a.init_scale);
    over!(ms.epsilon, a.epsilon);
    cfg.validate()?;

    let sv = Vocabulary::load(&a.src_vocab)?;
    let tv = Vocabulary::load(&a.tgt_vocab)?;
    let train_pairs = read_pairs(&a.data.train_src, &a.data.train_tgt, &sv, &tv)?;
    let dev_pairs = read_pairs(&a.data.dev_src, &a.data.dev_tgt, &sv, &tv)?;
    let epsilon = a.lexicon.as_ref().map(|_| ms.epsilon);
    let lexicon = load_lexicon(a.lexicon.as_deref(), epsilon, &sv, &tv)?;

    let mut mc = ModelConfig::new(sv.len(), tv.len());
    mc.embed_dim = ms.embed_dim;
    mc.hidden_dim = ms.hidden_dim;
    mc.attention = ms.attention;
    mc.attention_dim = ms.attention_dim;
    let params = ModelParams::random(mc, ms.init_scale, cfg.seed)?;
    let model = Model::new(params, lexicon);

    create_dir(&a.run_dir)?;
    let header = json!({
        "command": "train",
        "train": cfg,
        "model": mc,
        "init_scale": ms.init_scale,
        "lexicon": a.lexicon.as_deref().map(path_str),
        "epsilon": epsilon,
        "data": {
            "train_src": path_str(&a.data.train_src),
            "train_tgt": path_str(&a.data.train_tgt),
            "dev_src": path_str(&a.data.dev_src),
            "dev_tgt": path_str(&a.data.dev_tgt),
            "src_vocab": path_str(&a.src_vocab),
            "tgt_vocab": path_str(&a.tgt_vocab),
            "train_pairs": train_pairs.len(),
            "dev_pairs": dev_pairs.len(),
        },
    });
    let mut log = TrainLog::to_file(&a.run_dir.join("train.log"), &header, cfg.record_wall_time)?;
    let outcome = train_ml(model, &train_pairs, &dev_pairs, &cfg, &mut log)?;
    save_checkpoint(&a.run_dir.join("model.ckpt"), &outcome.model, &sv, &tv)?;
    log::info!(
        "best dev loss {:.4} after {} epochs",
        outcome.best_dev_loss,
        outcome.epochs
    );
    Ok(())
}

fn mrt_train(a: MrtArgs) -> Result<()> {
    let file = load_config(a.config.as_deref())?;
    let mut cfg = file.train;
    if let Some(v) = a.samples {
        cfg.mrt.num_samples = v;
    }
    if let Some(v) = a.alpha {
        cfg.mrt.alpha = v;
    }
    if let Some(v) = a.max_sample_len {
        cfg.mrt.max_sample_len = v;
    }
    if let Some(v) = a.epochs {
        cfg.mrt.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.mrt.lr = v;
    }
    if let Some(v) = a.clip_norm {
        cfg.clip_norm = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.record_wall_time |= a.wall_time;
    cfg.validate()?;

    let ck = Checkpoint::load(&a.init)?;
    let lexicon = load_lexicon(
        a.lexicon.as_deref(),
        ck.lexicon_epsilon,
        &ck.src_vocab,
        &ck.tgt_vocab,
    )?;
    let train_pairs = read_pairs(
        &a.data.train_src,
        &a.data.train_tgt,
        &ck.src_vocab,
        &ck.tgt_vocab,
    )?;
    let dev_pairs = read_pairs(
        &a.data.dev_src,
        &a.data.dev_tgt,
        &ck.src_vocab,
        &ck.tgt_vocab,
    )?;
    let model = Model::new(ck.params.clone(), lexicon);

    create_dir(&a.run_dir)?;
    let header = json!({
        "command": "mrt-train",
        "train": cfg,
        "init": path_str(&a.init),
        "model": ck.params.config,
        "lexicon": a.lexicon.as_deref().map(path_str),
        "epsilon": ck.lexicon_epsilon,
        "data": {
            "train_src": path_str(&a.data.train_src),
            "train_tgt": path_str(&a.data.train_tgt),
            "dev_src": path_str(&a.data.dev_src),
            "dev_tgt": path_str(&a.data.dev_tgt),
        },
    });
    let mut log = TrainLog::to_file(&a.run_dir.join("mrt.log"), &header, cfg.record_wall_time)?;
    let outcome = train_mrt(model, &train_pairs, &dev_pairs, &cfg, &mut log)?;
    save_checkpoint(
        &a.run_dir.join("model.ckpt"),
        &outcome.model,
        &ck.src_vocab,
        &ck.tgt_vocab,
    )?;
    log::info!(
        "dev expected error {:.4} -> {:.4}",
        outcome.initial_dev_error,
        outcome.best_dev_error
    );
    Ok(())
}

/// Loaded checkpoints sharing one pair of vocabularies.
struct LoadedModels {
    models: Vec<Model>,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
}

fn load_models(paths: &[PathBuf], lexicon: Option<&Path>) -> Result<LoadedModels> {
    let mut models = Vec::with_capacity(paths.len());
    let mut vocabs: Option<(Vocabulary, Vocabulary)> = None;
    for path in paths {
        let ck = Checkpoint::load(path)?;
        match &vocabs {
            None => vocabs = Some((ck.src_vocab.clone(), ck.tgt_vocab.clone())),
            Some((s, t)) => {
                if s != &ck.src_vocab || t != &ck.tgt_vocab {
                    return Err(Error::Checkpoint(format!(
                        "{}: vocabularies differ from the first model",
                        path.display()
                    )));
                }
            }
        }
        let lex = load_lexicon(lexicon, ck.lexicon_epsilon, &ck.src_vocab, &ck.tgt_vocab)?;
        models.push(Model::new(ck.params, lex));
    }
    let (src_vocab, tgt_vocab) =
        vocabs.ok_or_else(|| Error::InvalidArgument("no models given".into()))?;
    Ok(LoadedModels {
        models,
        src_vocab,
        tgt_vocab,
    })
}

fn load_merges(path: Option<&Path>) -> Result<Option<BpeModel>> {
    path.map(BpeModel::load).transpose()
}

fn encode_input(line: &str, bpe: Option<&BpeModel>, vocab: &Vocabulary) -> Vec<u32> {
    let tokens = match bpe {
        Some(b) => apply_bpe(b, &tokenize(&normalize_halfwidth(line))),
        None => tokenize(line),
    };
    vocab.encode(&tokens)
}

fn detokenize(ids: &[u32], vocab: &Vocabulary) -> String {
    invert_bpe(&vocab.decode(ids)).join(" ")
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn emit(output: Option<&Path>, lines: Vec<String>) -> Result<()> {
    match output {
        Some(p) => write_lines(p, lines),
        None => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for line in lines {
                writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))?;
            }
            Ok(())
        }
    }
}

fn decode(a: DecodeArgs) -> Result<()> {
    if a.threads == 0 {
        return Err(Error::InvalidArgument(
            "--threads must be at least 1".into(),
        ));
    }
    let loaded = load_models(&a.models, a.lexicon.as_deref())?;
    let bpe = load_merges(a.merges.as_deref())?;
    let refs: Vec<&Model> = loaded.models.iter().collect();
    let config = BeamConfig {
        beam_size: a.beam,
        word_penalty: a.word_penalty,
        max_len: a.max_len,
        termination: if a.literal_termination {
            Termination::Literal
        } else {
            Termination::Bounded
        },
    };
    let sources: Vec<Vec<u32>> = read_lines(&a.input)?
        .iter()
        .map(|l| encode_input(l, bpe.as_ref(), &loaded.src_vocab))
        .collect();

    let translate = |src: &Vec<u32>| -> Result<Option<SearchResult>> {
        if src.is_empty() {
            return Ok(None);
        }
        beam_search(&refs, src, &config).map(Some)
    };
    let results: Vec<Result<Option<SearchResult>>> = if a.threads == 1 {
        sources.iter().map(translate).collect()
    } else {
        let chunk = sources.len().div_ceil(a.threads).max(1);
        std::thread::scope(|s| {
            let handles: Vec<_> = sources
                .chunks(chunk)
                .map(|part| s.spawn(|| part.iter().map(translate).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("decoder thread panicked"))
                .collect()
        })
    };

    let mut lines = Vec::with_capacity(results.len());
    let mut scores = Vec::with_capacity(results.len());
    for r in results {
        match r? {
            Some(r) => {
                lines.push(detokenize(r.hypothesis.words(), &loaded.tgt_vocab));
                scores.push(format!("{:.6}", r.score));
            }
            None => {
                lines.push(String::new());
                scores.push(String::new());
            }
        }
    }
    if let Some(p) = &a.scores {
        write_lines(p, scores)?;
    }
    emit(a.output.as_deref(), lines)
}

fn score(a: ScoreArgs) -> Result<()> {
    let lines = read_parallel(&a.hyp, &a.reference)?;
    let (hyps, refs): (Vec<Vec<String>>, Vec<Vec<String>>) = lines
        .iter()
        .map(|(h, r)| (tokenize(h), tokenize(r)))
        .unzip();
    let b = bleu(&hyps, &refs)?;
    let ratio = length_ratio(&hyps, &refs)?;
    if let Some(p) = &a.sentence_scores {
        write_lines(
            p,
            hyps.iter()
                .zip(&refs)
                .enumerate()
                .map(|(i, (h, r))| format!("{i}\t{:.6}", sbleu(h, r))),
        )?;
    }
    println!("BLEU {b:.2} RATIO {ratio:.4}");
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    if a.samples == 0 || a.max_len == 0 {
        return Err(Error::InvalidArgument(
            "--samples and --max-len must be positive".into(),
        ));
    }
    let loaded = load_models(std::slice::from_ref(&a.model), a.lexicon.as_deref())?;
    let bpe = load_merges(a.merges.as_deref())?;
    let model = &loaded.models[0];
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut lines = Vec::new();
    for (i, line) in read_lines(&a.input)?.iter().enumerate() {
        let src = encode_input(line, bpe.as_ref(), &loaded.src_vocab);
        if src.is_empty() {
            continue;
        }
        for _ in 0..a.samples {
            let s = sample_translation(model, &src, a.max_len, &mut rng)?;
            lines.push(format!("{i}\t{}", detokenize(&s, &loaded.tgt_vocab)));
        }
    }
    emit(a.output.as_deref(), lines)
}
