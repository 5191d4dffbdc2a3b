//! Command-line front end.
//!
//! Every command reads an optional key-value config file (`--config`);
//! flags given on the command line win over config values. Exit codes:
//! 0 success, 1 runtime failure, 2 usage error. Failures also print one
//! JSON line `{"error": {...}}` on stderr.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hirope::code::{
    assign_hier_positions, build_symbol_task, corpus_stats, load_corpus, parse_segments, tokenize, PromptTemplate,
    Python, SegmentationStrategy,
};
use hirope::config::ConfigFile;
use hirope::dims::{reliable_split, suggest_split};
use hirope::hier::{attention_scores, pair_score, DEFAULT_SPLIT_RATIO, DEFAULT_WINDOW};
use hirope::metrics::{
    bucket_by_length, completion_line, edit_similarity, lm_metrics, parse_model_output_symbols, recall, EvalReport,
    Metrics, ReportRow, DEFAULT_EDGES,
};
use hirope::record::{read_jsonl, read_predictions, write_jsonl, TaskKind, TaskRecord};
use hirope::tinylm::eval::score_length;
use hirope::tinylm::{
    train, Checkpoint, CorpusFile, Model, ModelConfig, OptimizerKind, RunManifest, SyntheticTaskConfig, TrainConfig,
    DESK_WINDOW,
};
use hirope::{DimSplit, Error, HierPos, PositionStrategy, Result, RotaryConfig, WindowConfig};

#[derive(Parser)]
#[command(
    name = "hirope",
    version,
    about = "Hierarchical rotary position embeddings for source code"
)]
struct Cli {
    /// Key-value (TOML) config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rotary periods and the reliable extrapolation split.
    AnalyzeDims(AnalyzeDims),
    /// Segment a source file.
    Segment(SourceArgs),
    /// Hierarchical position of every token of a source file.
    Positions(SourceArgs),
    /// Attention scores for one pair or a whole sequence.
    Score(ScoreArgs),
    /// Build symbol-listing task records from a corpus directory.
    BuildSymbolTask(BuildSymbolTask),
    /// Per-repository corpus statistics.
    CorpusStats(CorpusStatsArgs),
    /// Generate a synthetic hierarchical training corpus.
    GenCorpus(GenCorpus),
    /// Train the tiny language model.
    Train(TrainArgs),
    /// Evaluate a checkpoint at several sequence lengths.
    EvalLm(EvalLm),
    /// Recall of predicted symbol lists, bucketed by length.
    EvalSymbol(EvalTasks),
    /// Edit similarity of predicted next lines, bucketed by length.
    EvalCompletion(EvalTasks),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::AnalyzeDims(_) => "analyze-dims",
            Self::Segment(_) => "segment",
            Self::Positions(_) => "positions",
            Self::Score(_) => "score",
            Self::BuildSymbolTask(_) => "build-symbol-task",
            Self::CorpusStats(_) => "corpus-stats",
            Self::GenCorpus(_) => "gen-corpus",
            Self::Train(_) => "train",
            Self::EvalLm(_) => "eval-lm",
            Self::EvalSymbol(_) => "eval-symbol",
            Self::EvalCompletion(_) => "eval-completion",
        }
    }
}

/// Flag value, else config value, else default.
struct Settings(ConfigFile);

impl Settings {
    fn u64(&self, flag: Option<u64>, key: &str, default: u64) -> Result<u64> {
        Ok(self.opt_u64(flag, key)?.unwrap_or(default))
    }

    fn opt_u64(&self, flag: Option<u64>, key: &str) -> Result<Option<u64>> {
        Ok(match flag {
            Some(v) => Some(v),
            None => self.0.u64(key)?,
        })
    }

    fn usize(&self, flag: Option<usize>, key: &str, default: usize) -> Result<usize> {
        Ok(self.u64(flag.map(|v| v as u64), key, default as u64)? as usize)
    }

    fn f64(&self, flag: Option<f64>, key: &str, default: f64) -> Result<f64> {
        Ok(self.opt_f64(flag, key)?.unwrap_or(default))
    }

    fn opt_f64(&self, flag: Option<f64>, key: &str) -> Result<Option<f64>> {
        Ok(match flag {
            Some(v) => Some(v),
            None => self.0.f64(key)?,
        })
    }

    fn bool(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.0.bool(key)?.unwrap_or(false))
    }

    fn opt_string(&self, flag: &Option<String>, key: &str) -> Result<Option<String>> {
        Ok(match flag {
            Some(v) => Some(v.clone()),
            None => self.0.string(key)?,
        })
    }

    fn string(&self, flag: &Option<String>, key: &str, default: &str) -> Result<String> {
        Ok(self.opt_string(flag, key)?.unwrap_or_else(|| default.to_string()))
    }

    fn path(&self, flag: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        self.opt_path(flag, key)?
            .ok_or_else(|| Error::InvalidConfig(format!("missing required setting `{key}`")))
    }

    fn opt_path(&self, flag: &Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
        Ok(match flag {
            Some(p) => Some(p.clone()),
            None => self.0.string(key)?.map(PathBuf::from),
        })
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad {what} entry {s:?}")))
        })
        .collect()
}

#[derive(Args, Default)]
struct RotaryArgs {
    /// Rotary head dimension (even).
    #[arg(long)]
    head_dim: Option<usize>,
    /// Rotary base.
    #[arg(long)]
    base: Option<f64>,
}

impl RotaryArgs {
    fn build(&self, s: &Settings, default_dim: usize) -> Result<RotaryConfig> {
        RotaryConfig::new(
            s.usize(self.head_dim, "head_dim", default_dim)?,
            s.f64(self.base, "base", hirope::rope::DEFAULT_BASE)?,
        )
    }
}

#[derive(Args, Default)]
struct StrategyArgs {
    /// origin | hirope | rerope | self-extend | ntk
    #[arg(long)]
    strategy: Option<String>,
    /// Window length (hirope, rerope); 512 for scoring, 16 for training.
    #[arg(long)]
    window: Option<u64>,
    /// Share of rotary pairs on the token level (two-level hirope).
    #[arg(long)]
    split_ratio: Option<f64>,
    /// Pairs per level, coarse to fine, e.g. `4,4`; overrides --split-ratio.
    #[arg(long)]
    pair_counts: Option<String>,
    /// Self-extend group size.
    #[arg(long)]
    group: Option<u64>,
    /// Self-extend neighbour window.
    #[arg(long)]
    neighbor: Option<u64>,
    /// NTK context scale factor.
    #[arg(long)]
    ntk_scale: Option<f64>,
}

impl StrategyArgs {
    /// `default_window` also sets the self-extend neighbour window.
    fn build(&self, s: &Settings, cfg: &RotaryConfig, default_window: u64) -> Result<PositionStrategy> {
        let name = s.string(&self.strategy, "strategy", "origin")?;
        let window = s.u64(self.window, "window", default_window)?;
        let strategy = match name.replace('_', "-").as_str() {
            "origin" | "rope" => PositionStrategy::Origin,
            "hirope" => match s.opt_string(&self.pair_counts, "pair_counts")? {
                Some(counts) => PositionStrategy::HiRope {
                    split: DimSplit::new(parse_list(&counts, "pair count")?)?,
                    window: WindowConfig::new(window)?,
                },
                None => PositionStrategy::hirope_with_ratio(
                    s.f64(self.split_ratio, "split_ratio", DEFAULT_SPLIT_RATIO)?,
                    window,
                    cfg,
                )?,
            },
            "rerope" => PositionStrategy::ReRope { window },
            "self-extend" => PositionStrategy::SelfExtend {
                group: s.u64(self.group, "group", 8)?,
                neighbor: s.u64(self.neighbor, "neighbor", default_window)?,
            },
            "ntk" => PositionStrategy::Ntk {
                scale: s.f64(self.ntk_scale, "ntk_scale", 2.0)?,
            },
            other => return Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        };
        strategy.validate(cfg)?;
        Ok(strategy)
    }
}

#[derive(Args)]
struct AnalyzeDims {
    /// Pretraining context length in tokens.
    #[arg(long)]
    pretrain_len: Option<u64>,
    #[command(flatten)]
    rotary: RotaryArgs,
    /// Also list the period of every pair.
    #[arg(long)]
    periods: bool,
}

fn analyze_dims(a: &AnalyzeDims, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let cfg = a.rotary.build(s, 128)?;
    let len = s
        .opt_u64(a.pretrain_len, "pretrain_len")?
        .ok_or_else(|| Error::InvalidConfig("missing required setting `pretrain_len`".into()))?;
    let r = reliable_split(len, &cfg)?;
    let split = suggest_split(len, &cfg)?;
    writeln!(out, "pretrain_len\t{}", r.pretrain_len)?;
    writeln!(out, "head_dim\t{}", r.head_dim)?;
    writeln!(out, "base\t{}", r.base)?;
    writeln!(out, "fraction\t{:.4}", r.fraction)?;
    writeln!(out, "split_dim\t{:.2}", r.split_dim)?;
    writeln!(out, "reliable_pairs\t{}", r.reliable_pairs)?;
    writeln!(out, "suggested_token_pairs\t{}", split.token_pairs())?;
    if s.bool(a.periods, "periods")? {
        writeln!(out, "pair\tperiod")?;
        for (k, p) in r.periods.iter().enumerate() {
            writeln!(out, "{k}\t{p:.4}")?;
        }
    }
    Ok(())
}

#[derive(Args)]
struct SourceArgs {
    /// Source file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// function | statement | fixed:<n>
    #[arg(long)]
    segmentation: Option<String>,
}

fn segmentation_of(a: &SourceArgs, s: &Settings) -> Result<(String, SegmentationStrategy)> {
    let path = s.path(&a.input, "input")?;
    let source = fs::read_to_string(&path)?;
    let strategy = s.string(&a.segmentation, "segmentation", "function")?.parse()?;
    Ok((source, strategy))
}

fn segment_cmd(a: &SourceArgs, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let (source, strategy) = segmentation_of(a, s)?;
    let spans = tokenize(&source);
    let seg = parse_segments(source.as_bytes(), strategy, &spans, &Python)?;
    let value = serde_json::json!({
        "strategy": strategy.to_string(),
        "fallback": seg.fallback,
        "segments": seg.segments,
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&value)?)?;
    Ok(())
}

fn hier_positions(source: &str, strategy: SegmentationStrategy) -> Result<Vec<(hirope::code::TokenSpan, HierPos)>> {
    let spans = tokenize(source);
    let seg = parse_segments(source.as_bytes(), strategy, &spans, &Python)?;
    let pos = assign_hier_positions(&spans, &seg.segments)?;
    Ok(spans.into_iter().zip(pos).collect())
}

fn positions_cmd(a: &SourceArgs, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let (source, strategy) = segmentation_of(a, s)?;
    let rows: Vec<_> = hier_positions(&source, strategy)?
        .into_iter()
        .map(|(span, pos)| {
            serde_json::json!({
                "index": span.index,
                "text": &source[span.start_byte..span.end_byte],
                "start_byte": span.start_byte,
                "end_byte": span.end_byte,
                "levels": pos.levels(),
                "global": pos.global(),
            })
        })
        .collect();
    writeln!(out, "{}", serde_json::to_string_pretty(&rows)?)?;
    Ok(())
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    rotary: RotaryArgs,
    #[command(flatten)]
    strategy: StrategyArgs,
    /// Query vector, comma separated (default: the unit vector along all axes).
    #[arg(long, allow_hyphen_values = true)]
    q: Option<String>,
    /// Key vector, comma separated (default: same as the query).
    #[arg(long, allow_hyphen_values = true)]
    k: Option<String>,
    /// Relative distance; query and key share one segment.
    #[arg(long)]
    delta: Option<u64>,
    /// Query position `l1,l2,...@global` (or a bare global index).
    #[arg(long)]
    query_pos: Option<String>,
    /// Key position, same format.
    #[arg(long)]
    key_pos: Option<String>,
    /// Score matrix over a positions JSON file (as printed by `positions`).
    #[arg(long)]
    positions: Option<PathBuf>,
    /// Score matrix over the tokens of a source file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Segmentation for --input.
    #[arg(long)]
    segmentation: Option<String>,
    /// Seed for the random query/key vectors of matrix mode.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_pos(text: &str) -> Result<HierPos> {
    match text.split_once('@') {
        Some((levels, global)) => HierPos::new(
            parse_list(levels, "level")?,
            global
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad global index in {text:?}")))?,
        ),
        None => Ok(HierPos::flat(
            text.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad position {text:?}")))?,
        )),
    }
}

fn strategy_depth(strategy: &PositionStrategy) -> usize {
    match strategy {
        PositionStrategy::HiRope { split, .. } => split.depth(),
        _ => 1,
    }
}

fn score_cmd(a: &ScoreArgs, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let cfg = a.rotary.build(s, 128)?;
    let strategy = a.strategy.build(s, &cfg, DEFAULT_WINDOW)?;
    let positions_file = s.opt_path(&a.positions, "positions")?;
    let input = s.opt_path(&a.input, "input")?;
    if positions_file.is_some() || input.is_some() {
        let positions = match (positions_file, input) {
            (Some(p), _) => {
                let rows: Vec<HierPos> = serde_json::from_reader(BufReader::new(File::open(p)?))?;
                rows.into_iter()
                    .map(|p| HierPos::new(p.levels().to_vec(), p.global()))
                    .collect::<Result<Vec<_>>>()?
            }
            (None, Some(src)) => {
                let strat = s.string(&a.segmentation, "segmentation", "function")?.parse()?;
                hier_positions(&fs::read_to_string(src)?, strat)?
                    .into_iter()
                    .map(|(_, p)| p)
                    .collect()
            }
            (None, None) => unreachable!(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(s.u64(a.seed, "seed", 0)?);
        let d = cfg.head_dim();
        let mut random = || -> Vec<Vec<f64>> {
            (0..positions.len())
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let (queries, keys) = (random(), random());
        let m = attention_scores(&queries, &keys, &positions, &strategy, &cfg)?;
        writeln!(out, "query\tkey\tscore")?;
        for i in 0..m.len() {
            for (j, v) in m.row(i).iter().enumerate() {
                writeln!(out, "{i}\t{j}\t{v:.12}")?;
            }
        }
        return Ok(());
    }

    let d = cfg.head_dim();
    let q = match s.opt_string(&a.q, "q")? {
        Some(t) => parse_list(&t, "vector")?,
        None => vec![1.0 / (d as f64).sqrt(); d],
    };
    let k = match s.opt_string(&a.k, "k")? {
        Some(t) => parse_list(&t, "vector")?,
        None => q.clone(),
    };
    let (pq, pk) = match (s.opt_u64(a.delta, "delta")?, s.opt_string(&a.query_pos, "query_pos")?) {
        (_, Some(qp)) => {
            let kp = s
                .opt_string(&a.key_pos, "key_pos")?
                .ok_or_else(|| Error::InvalidConfig("--query-pos needs --key-pos".into()))?;
            (parse_pos(&qp)?, parse_pos(&kp)?)
        }
        (Some(delta), None) => {
            let depth = strategy_depth(&strategy);
            if depth == 1 {
                (HierPos::flat(delta), HierPos::flat(0))
            } else {
                let mut levels = vec![0; depth];
                levels[depth - 1] = delta;
                (HierPos::new(levels, delta)?, HierPos::new(vec![0; depth], 0)?)
            }
        }
        (None, None) => {
            return Err(Error::InvalidConfig(
                "give --delta, --query-pos/--key-pos, --positions or --input".into(),
            ))
        }
    };
    let score = pair_score(&strategy, &q, &k, &pq, &pk, &cfg)?;
    writeln!(out, "strategy\t{}", strategy.name())?;
    writeln!(out, "score\t{score:.12}")?;
    Ok(())
}

#[derive(Args)]
struct BuildSymbolTask {
    /// Corpus root; each first-level directory is one repository.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output JSONL file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Prompt template file containing `{input_code}`.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Source file extension.
    #[arg(long)]
    ext: Option<String>,
}

fn build_symbol_task_cmd(a: &BuildSymbolTask, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let root = s.path(&a.corpus, "corpus")?;
    let ext = s.string(&a.ext, "ext", "py")?;
    let template = match s.opt_path(&a.template, "template")? {
        Some(p) => PromptTemplate::new(
            p.file_stem()
                .map_or("custom".into(), |n| n.to_string_lossy().into_owned()),
            fs::read_to_string(&p)?,
        )?,
        None => PromptTemplate::default(),
    };
    let mut records = Vec::new();
    for file in load_corpus(&root, &ext)? {
        match build_symbol_task(&file, &template, &Python) {
            Ok(r) if r.gold_symbols.as_ref().is_some_and(|g| !g.is_empty()) => records.push(r),
            Ok(_) => eprintln!("skipping {}/{}: no definitions", file.repo, file.path),
            Err(e) => eprintln!("skipping {}/{}: {e}", file.repo, file.path),
        }
    }
    if records.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no usable .{ext} files under {}",
            root.display()
        )));
    }
    match s.opt_path(&a.out, "out")? {
        Some(p) => write_jsonl(BufWriter::new(File::create(p)?), &records)?,
        None => write_jsonl(out, &records)?,
    }
    Ok(())
}

#[derive(Args)]
struct CorpusStatsArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    ext: Option<String>,
}

fn corpus_stats_cmd(a: &CorpusStatsArgs, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let root = s.path(&a.corpus, "corpus")?;
    let files = load_corpus(&root, &s.string(&a.ext, "ext", "py")?)?;
    out.write_all(corpus_stats(&files, &Python)?.to_tsv().as_bytes())?;
    Ok(())
}

#[derive(Args, Default)]
struct TaskArgs {
    #[arg(long)]
    segment_len_min: Option<usize>,
    #[arg(long)]
    segment_len_max: Option<usize>,
    #[arg(long)]
    segments_per_sequence: Option<usize>,
    #[arg(long)]
    key_vocab: Option<usize>,
    #[arg(long)]
    ident_vocab: Option<usize>,
    #[arg(long)]
    body_vocab: Option<usize>,
    #[arg(long)]
    recall_rate: Option<f64>,
    /// Number of sequences.
    #[arg(long)]
    sequences: Option<usize>,
}

impl TaskArgs {
    fn build(&self, s: &Settings, base: SyntheticTaskConfig) -> Result<SyntheticTaskConfig> {
        let cfg = SyntheticTaskConfig {
            segment_len_min: s.usize(self.segment_len_min, "segment_len_min", base.segment_len_min)?,
            segment_len_max: s.usize(self.segment_len_max, "segment_len_max", base.segment_len_max)?,
            segments_per_sequence: s.usize(
                self.segments_per_sequence,
                "segments_per_sequence",
                base.segments_per_sequence,
            )?,
            key_vocab: s.usize(self.key_vocab, "key_vocab", base.key_vocab)?,
            ident_vocab: s.usize(self.ident_vocab, "ident_vocab", base.ident_vocab)?,
            body_vocab: s.usize(self.body_vocab, "body_vocab", base.body_vocab)?,
            recall_rate: s.f64(self.recall_rate, "recall_rate", base.recall_rate)?,
            sequences: s.usize(self.sequences, "sequences", base.sequences)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenCorpus {
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Output corpus JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn gen_corpus_cmd(a: &GenCorpus, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let task = a.task.build(s, SyntheticTaskConfig::default())?;
    let seed = s.u64(a.seed, "seed", 0)?;
    let path = s.path(&a.out, "out")?;
    let corpus = CorpusFile::new(task, seed)?;
    let mut w = BufWriter::new(File::create(&path)?);
    serde_json::to_writer(&mut w, &corpus)?;
    w.flush()?;
    let tokens: usize = corpus.sequences.iter().map(|s| s.len()).sum();
    writeln!(out, "sequences\t{}", corpus.sequences.len())?;
    writeln!(out, "tokens\t{tokens}")?;
    writeln!(out, "vocab_size\t{}", corpus.vocab_size)?;
    Ok(())
}

fn load_corpus_file(path: &Path) -> Result<CorpusFile> {
    let corpus: CorpusFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    corpus.check()?;
    Ok(corpus)
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus JSON written by `gen-corpus`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Directory for checkpoint.json, loss.csv and manifest.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    strategy: StrategyArgs,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    head_dim: Option<usize>,
    #[arg(long)]
    ff_dim: Option<usize>,
    #[arg(long)]
    base: Option<f64>,
    /// Parameter initialisation seed.
    #[arg(long)]
    model_seed: Option<u64>,
    #[arg(long)]
    train_len: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// sgd | rms_prop | adam
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Batch sampling seed.
    #[arg(long)]
    data_seed: Option<u64>,
    /// Multiply every position index by this factor.
    #[arg(long)]
    position_scale: Option<u64>,
    #[arg(long)]
    log_every: Option<usize>,
}

fn train_cmd(a: &TrainArgs, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let corpus_path = s.path(&a.corpus, "corpus")?;
    let out_dir = s.path(&a.out_dir, "out_dir")?;
    let corpus = load_corpus_file(&corpus_path)?;
    let md = ModelConfig::default();
    let head_dim = s.usize(a.head_dim, "head_dim", md.head_dim)?;
    let rope_base = s.f64(a.base, "base", md.rope_base)?;
    let rotary = RotaryConfig::new(head_dim, rope_base)?;
    let model_cfg = ModelConfig {
        layers: s.usize(a.layers, "layers", md.layers)?,
        heads: s.usize(a.heads, "heads", md.heads)?,
        head_dim,
        vocab: corpus.vocab_size,
        ff_dim: s.usize(a.ff_dim, "ff_dim", md.ff_dim)?,
        rope_base,
        // Training sequences are far shorter than the inference window.
        strategy: a.strategy.build(s, &rotary, DESK_WINDOW)?,
        seed: s.u64(a.model_seed, "model_seed", md.seed)?,
    };
    let td = TrainConfig::default();
    let default_optimizer = match td.optimizer {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::RmsProp => "rms_prop",
        OptimizerKind::Adam => "adam",
    };
    let optimizer = match s
        .string(&a.optimizer, "optimizer", default_optimizer)?
        .replace('-', "_")
        .as_str()
    {
        "sgd" => OptimizerKind::Sgd,
        "rms_prop" | "rmsprop" => OptimizerKind::RmsProp,
        "adam" => OptimizerKind::Adam,
        other => return Err(Error::InvalidConfig(format!("unknown optimizer {other:?}"))),
    };
    let train_cfg = TrainConfig {
        train_len: s.usize(a.train_len, "train_len", td.train_len)?,
        steps: s.usize(a.steps, "steps", td.steps)?,
        batch_size: s.usize(a.batch_size, "batch_size", td.batch_size)?,
        learning_rate: s.f64(a.learning_rate, "learning_rate", td.learning_rate)?,
        optimizer,
        warmup: s.usize(a.warmup, "warmup", td.warmup)?,
        grad_clip: s.f64(a.grad_clip, "grad_clip", td.grad_clip)?,
        data_seed: s.u64(a.data_seed, "data_seed", td.data_seed)?,
        position_scale: s.u64(a.position_scale, "position_scale", td.position_scale)?,
        log_every: s.usize(a.log_every, "log_every", 50)?,
    };
    let mut model = Model::new(model_cfg)?;
    let curve = train(&mut model, &train_cfg, &corpus.sequences)?;
    fs::create_dir_all(&out_dir)?;
    let mut ckpt = BufWriter::new(File::create(out_dir.join("checkpoint.json"))?);
    serde_json::to_writer(&mut ckpt, &Checkpoint::from_model(&model))?;
    ckpt.flush()?;
    curve.write_csv(BufWriter::new(File::create(out_dir.join("loss.csv"))?))?;
    let manifest = RunManifest::new(&model, &train_cfg, Some(corpus.seed), corpus.sequences.len(), &curve);
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    writeln!(out, "params\t{}", model.num_params())?;
    if let (Some(first), Some(last)) = (curve.points().first(), curve.points().last()) {
        writeln!(out, "initial_loss\t{:.6}", first.loss)?;
        writeln!(out, "final_loss\t{:.6}", last.loss)?;
    }
    writeln!(out, "out_dir\t{}", out_dir.display())?;
    Ok(())
}

#[derive(Args)]
struct EvalLm {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Corpus JSON whose task settings generate the held-out data.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[command(flatten)]
    task: TaskArgs,
    /// Comma-separated evaluation lengths.
    #[arg(long)]
    lengths: Option<String>,
    /// Held-out data seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Sequences per length.
    #[arg(long)]
    count: Option<usize>,
    /// Size of the trailing-token window reported separately.
    #[arg(long)]
    last_k: Option<usize>,
}

fn eval_lm_cmd(a: &EvalLm, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(File::open(s.path(&a.checkpoint, "checkpoint")?)?))?;
    let model = ckpt.into_model()?;
    let base = match s.opt_path(&a.corpus, "corpus")? {
        Some(p) => load_corpus_file(&p)?.config,
        None => SyntheticTaskConfig::default(),
    };
    let task = a.task.build(s, base)?;
    if task.vocab_size() != model.config().vocab {
        return Err(Error::InvalidConfig(format!(
            "task vocabulary {} does not match the checkpoint's {}",
            task.vocab_size(),
            model.config().vocab
        )));
    }
    let lengths: Vec<usize> = parse_list(&s.string(&a.lengths, "lengths", "128,256,512")?, "length")?;
    let seed = s.u64(a.seed, "seed", 1_000_003)?;
    let count = s.usize(a.count, "count", 16)?;
    let last_k = s.usize(a.last_k, "last_k", 32)?;
    let mut report = EvalReport {
        notes: vec![
            format!(
                "strategy={} position_scale={}",
                model.config().strategy.name(),
                model.position_scale()
            ),
            format!("seed={seed} sequences_per_length={count}"),
            "acc = greedy top-1 next-token accuracy; ppl = exp(loss)".into(),
        ],
        rows: Vec::new(),
    };
    for &len in &lengths {
        if len < 2 {
            return Err(Error::InvalidConfig(format!("evaluation length {len} < 2")));
        }
        let (nll, correct) = score_length(&model, &task, seed, count, len)?;
        let mut tail_nll = Vec::new();
        let mut tail_ok = Vec::new();
        for (ns, cs) in nll.chunks(len - 1).zip(correct.chunks(len - 1)) {
            let start = ns.len().saturating_sub(last_k);
            tail_nll.extend_from_slice(&ns[start..]);
            tail_ok.extend_from_slice(&cs[start..]);
        }
        let bucket = format!("len_{len}");
        let mut all = lm_metrics(&bucket, &nll, &correct, 1)?.remove(0);
        let mut last = lm_metrics(&bucket, &tail_nll, &tail_ok, 1)?.remove(0);
        all.scope = "all".into();
        last.scope = format!("last_{last_k}");
        if len - 1 < last_k {
            last.flag = "short_suffix".into();
        }
        let rows = [all, last];
        report.rows.extend(rows);
    }
    out.write_all(report.to_tsv().as_bytes())?;
    Ok(())
}

#[derive(Args)]
struct EvalTasks {
    /// Task JSONL.
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Prediction JSONL with `id` and `output` fields.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Score the gold answers themselves.
    #[arg(long)]
    gold_as_prediction: bool,
    /// Comma-separated bucket edges in tokens.
    #[arg(long)]
    edges: Option<String>,
    /// Also print one score per record.
    #[arg(long)]
    per_record: bool,
}

fn eval_tasks_cmd(a: &EvalTasks, s: &Settings, kind: TaskKind, out: &mut dyn Write) -> Result<()> {
    let records: Vec<TaskRecord> = read_jsonl(BufReader::new(File::open(s.path(&a.tasks, "tasks")?)?))?;
    if let Some(r) = records.iter().find(|r| r.kind != kind) {
        return Err(Error::MalformedTask(format!(
            "record {:?} has kind {:?}, expected {kind:?}",
            r.id, r.kind
        )));
    }
    let gold_mode = s.bool(a.gold_as_prediction, "gold_as_prediction")?;
    let predictions: HashMap<String, String> = match (gold_mode, s.opt_path(&a.predictions, "predictions")?) {
        (true, _) => records
            .iter()
            .map(|r| {
                let text = match kind {
                    TaskKind::Symbol => r.gold_symbols.as_deref().unwrap_or_default().join("\n"),
                    _ => r.gold_next_line.clone().unwrap_or_default(),
                };
                (r.id.clone(), text)
            })
            .collect(),
        (false, Some(p)) => read_predictions(BufReader::new(File::open(p)?))?
            .into_iter()
            .map(|p| (p.id, p.output))
            .collect(),
        (false, None) => {
            return Err(Error::InvalidConfig(
                "give --predictions or --gold-as-prediction".into(),
            ))
        }
    };
    let scores = records
        .iter()
        .map(|r| {
            let pred = predictions.get(&r.id).map(String::as_str).unwrap_or("");
            match kind {
                TaskKind::Symbol => recall(
                    &parse_model_output_symbols(pred),
                    r.gold_symbols.as_deref().unwrap_or_default(),
                ),
                _ => Ok(edit_similarity(
                    completion_line(pred),
                    r.gold_next_line.as_deref().unwrap_or_default(),
                )),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let missing = records.iter().filter(|r| !predictions.contains_key(&r.id)).count();
    let edges: Vec<u64> = match s.opt_string(&a.edges, "edges")? {
        Some(t) => parse_list(&t, "edge")?,
        None => DEFAULT_EDGES.to_vec(),
    };
    let lengths: Vec<u64> = records.iter().map(|r| r.token_length).collect();
    let bucketed = bucket_by_length(&lengths, &edges)?;
    let metric = |v: f64| match kind {
        TaskKind::Symbol => Metrics::Recall { recall: v },
        _ => Metrics::EditSim { edit_sim: v },
    };
    let mean = |members: &[usize]| members.iter().map(|&i| scores[i]).sum::<f64>() / members.len() as f64;
    let mut notes = vec![match kind {
        TaskKind::Symbol => "recall = |predicted ∩ gold| / |gold|, exact case-sensitive match".to_string(),
        _ => "edit_sim = 1 - levenshtein / max(len(pred), len(gold)) in characters; pred = first output line without a backtick, # or //".to_string(),
    }];
    notes.push(if gold_mode {
        "predictions = gold".into()
    } else {
        format!("records without prediction = {missing}")
    });
    let mut rows = Vec::new();
    for b in &bucketed.buckets {
        if !b.members.is_empty() {
            rows.push(ReportRow::new(
                b.label(),
                "all",
                b.members.len(),
                metric(mean(&b.members)),
            ));
        }
    }
    for (label, members) in [("overflow", &bucketed.overflow), ("underflow", &bucketed.underflow)] {
        if !members.is_empty() {
            let mut row = ReportRow::new(label, "all", members.len(), metric(mean(members)));
            row.flag = format!("outside_edges_{label}");
            rows.push(row);
        }
    }
    let all: Vec<usize> = (0..records.len()).collect();
    if !all.is_empty() {
        rows.push(ReportRow::new("total", "all", all.len(), metric(mean(&all))));
    }
    if rows.is_empty() {
        return Err(Error::MalformedTask("no task records".into()));
    }
    out.write_all(EvalReport { notes, rows }.to_tsv().as_bytes())?;
    if s.bool(a.per_record, "per_record")? {
        writeln!(out, "\nid\tscore")?;
        for (r, v) in records.iter().zip(&scores) {
            writeln!(out, "{}\t{v:.6}", r.id)?;
        }
    }
    Ok(())
}

fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let name = cli.command.name();
    let settings = Settings(match &cli.config {
        Some(p) => ConfigFile::load(p, name)?,
        None => ConfigFile::default(),
    });
    let s = &settings;
    match &cli.command {
        Command::AnalyzeDims(a) => analyze_dims(a, s, out),
        Command::Segment(a) => segment_cmd(a, s, out),
        Command::Positions(a) => positions_cmd(a, s, out),
        Command::Score(a) => score_cmd(a, s, out),
        Command::BuildSymbolTask(a) => build_symbol_task_cmd(a, s, out),
        Command::CorpusStats(a) => corpus_stats_cmd(a, s, out),
        Command::GenCorpus(a) => gen_corpus_cmd(a, s, out),
        Command::Train(a) => train_cmd(a, s, out),
        Command::EvalLm(a) => eval_lm_cmd(a, s, out),
        Command::EvalSymbol(a) => eval_tasks_cmd(a, s, TaskKind::Symbol, out),
        Command::EvalCompletion(a) => eval_tasks_cmd(a, s, TaskKind::Completion, out),
    }
}

fn error_line(code: &str, message: &str, exit: u8) -> String {
    serde_json::json!({ "error": { "code": code, "message": message, "exit": exit } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            if !usage {
                return ExitCode::SUCCESS;
            }
            eprintln!(
                "{}",
                error_line("usage", e.kind().as_str().unwrap_or("invalid usage"), 2)
            );
            return ExitCode::from(2);
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(&cli, &mut out).and_then(|_| out.flush().map_err(Error::from)) {
        Ok(()) => ExitCode::SUCCESS,
        // The reader went away (e.g. `| head`); nothing left to report.
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.code(), &e.to_string(), 1));
            ExitCode::from(1)
        }
    }
}
