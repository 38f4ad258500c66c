//! One function per subcommand. All outputs are plain text written
//! deterministically, so a rerun with the same inputs and seed is
//! byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spm_core::beam::{beam_search, BeamConfig};
use spm_core::checkpoint;
use spm_core::diagnostics;
use spm_core::model::{ModelConfig, ModelParams};
use spm_core::rouge;
use spm_core::synth;
use spm_core::train::{self, Dataset, TrainConfig, TrainReport};
use spm_core::vocab::Vocabulary;

use crate::settings::{self, ModelSettings, Overrides};

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Write to the file, or to stdout when no path is given.
fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn joined_lines(lines: &[String]) -> String {
    let mut text = lines.join("\n");
    text.push('\n');
    text
}

fn load_model_with_vocab(
    checkpoint_path: &Path,
    merges: &Path,
    vocab: &Path,
) -> Result<(ModelParams, Vocabulary)> {
    let voc = Vocabulary::load(merges, vocab)
        .with_context(|| format!("loading subwords from {} and {}", merges.display(), vocab.display()))?;
    let params = checkpoint::load(checkpoint_path)
        .with_context(|| format!("loading checkpoint {}", checkpoint_path.display()))?;
    if params.cfg.vocab_src != voc.size() || params.cfg.vocab_tgt != voc.size() {
        bail!(
            "checkpoint was trained with vocabularies {}x{}, but {} holds {} tokens",
            params.cfg.vocab_src,
            params.cfg.vocab_tgt,
            vocab.display(),
            voc.size()
        );
    }
    Ok((params, voc))
}

#[derive(Args)]
pub struct BpeLearnArgs {
    /// Input text files; all are pooled into one corpus.
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    num_merges: usize,
    /// Output path for the merge list.
    #[arg(long)]
    merges: PathBuf,
    /// Output path for the token-id table.
    #[arg(long)]
    vocab: PathBuf,
}

pub fn bpe_learn(args: BpeLearnArgs) -> Result<()> {
    let mut lines = Vec::new();
    for path in &args.corpus {
        lines.extend(read_lines(path)?);
    }
    let voc = Vocabulary::learn(&lines, args.num_merges)?;
    voc.save(&args.merges, &args.vocab)?;
    println!(
        "learned {} merges, {} tokens",
        voc.merges().len(),
        voc.size()
    );
    Ok(())
}

#[derive(Args)]
pub struct BpeApplyArgs {
    #[arg(long)]
    merges: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn bpe_apply(args: BpeApplyArgs) -> Result<()> {
    let voc = Vocabulary::load(&args.merges, &args.vocab)?;
    let segmented: Vec<String> = read_lines(&args.input)?
        .iter()
        .map(|line| {
            voc.encode(line)
                .iter()
                .map(|&id| voc.token(id).unwrap_or("<unk>"))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    emit(args.output.as_deref(), &joined_lines(&segmented))
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Validation source; requires --val-target.
    #[arg(long, requires = "val_target")]
    val_source: Option<PathBuf>,
    /// Validation target; requires --val-source.
    #[arg(long, requires = "val_source")]
    val_target: Option<PathBuf>,
    #[arg(long)]
    merges: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Output path for the trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output path for the run manifest; defaults to <checkpoint>.manifest.tsv.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Optional output path for the per-epoch report TSV.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Flat "key = value" settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    dim_embed: Option<usize>,
    #[arg(long)]
    dim_hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,

    #[arg(long)]
    spm_weight_c: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    decay_factor: Option<f64>,
    #[arg(long)]
    decay_start_epoch: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    /// true trains the joint objective, false the target-only baseline.
    #[arg(long)]
    spm_enabled: Option<bool>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            dim_embed: self.dim_embed,
            dim_hidden: self.dim_hidden,
            layers: self.layers,
            spm_weight_c: self.spm_weight_c,
            learning_rate: self.learning_rate,
            decay_factor: self.decay_factor,
            decay_start_epoch: self.decay_start_epoch,
            clip_norm: self.clip_norm,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            dropout_rate: self.dropout_rate,
            spm_enabled: self.spm_enabled,
            patience: self.patience,
            seed: self.seed,
        }
    }
}

fn note_drops(name: &str, ds: &Dataset) {
    if ds.dropped_long + ds.dropped_empty > 0 {
        eprintln!(
            "note: {name}: dropped {} overlong and {} empty pairs",
            ds.dropped_long, ds.dropped_empty
        );
    }
}

struct ManifestInputs<'a> {
    args: &'a TrainArgs,
    model: &'a ModelSettings,
    cfg: &'a TrainConfig,
    vocab_size: usize,
    data: &'a Dataset,
    val: &'a Dataset,
    report: &'a TrainReport,
}

/// Settings echo as key-value lines, a blank line, then the epoch table.
fn render_manifest(m: &ManifestInputs) -> String {
    let path_or_dash =
        |p: &Option<PathBuf>| p.as_ref().map_or("-".to_string(), |p| p.display().to_string());
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k}\t{v}");
    };
    kv("source", m.args.source.display().to_string());
    kv("target", m.args.target.display().to_string());
    kv("val_source", path_or_dash(&m.args.val_source));
    kv("val_target", path_or_dash(&m.args.val_target));
    kv("merges", m.args.merges.display().to_string());
    kv("vocab", m.args.vocab.display().to_string());
    kv("checkpoint", m.args.checkpoint.display().to_string());
    kv("vocab_size", m.vocab_size.to_string());
    kv("dim_embed", m.model.dim_embed.to_string());
    kv("dim_hidden", m.model.dim_hidden.to_string());
    kv("layers", m.model.layers.to_string());
    kv("spm_weight_c", m.cfg.spm_weight_c.to_string());
    kv("learning_rate", m.cfg.learning_rate.to_string());
    kv("decay_factor", m.cfg.decay_factor.to_string());
    kv("decay_start_epoch", m.cfg.decay_start_epoch.to_string());
    kv("clip_norm", m.cfg.clip_norm.to_string());
    kv("batch_size", m.cfg.batch_size.to_string());
    kv("max_epochs", m.cfg.max_epochs.to_string());
    kv("dropout_rate", m.cfg.dropout_rate.to_string());
    kv("spm_enabled", m.cfg.spm_enabled.to_string());
    kv("patience", m.cfg.patience.to_string());
    kv("seed", m.cfg.seed.to_string());
    kv("pairs_train", m.data.len().to_string());
    kv("pairs_val", m.val.len().to_string());
    kv(
        "dropped_train",
        (m.data.dropped_long + m.data.dropped_empty).to_string(),
    );
    kv("dropped_val", (m.val.dropped_long + m.val.dropped_empty).to_string());
    kv("best_epoch", m.report.best_epoch.to_string());
    kv("stopped_early", m.report.stopped_early.to_string());
    out.push('\n');
    out.push_str(&m.report.to_tsv());
    out
}

pub fn train(args: TrainArgs) -> Result<()> {
    let (model, cfg) = settings::resolve(args.config.as_deref(), &args.overrides())?;
    let voc = Vocabulary::load(&args.merges, &args.vocab)?;

    let data = train::ingest(&args.source, &args.target, &voc)?;
    note_drops("training data", &data);
    let val = match (&args.val_source, &args.val_target) {
        (Some(src), Some(tgt)) => {
            let val = train::ingest(src, tgt, &voc)?;
            note_drops("validation data", &val);
            val
        }
        _ => Dataset::default(),
    };

    let model_cfg = ModelConfig {
        dim_embed: model.dim_embed,
        dim_hidden: model.dim_hidden,
        vocab_src: voc.size(),
        vocab_tgt: voc.size(),
        layers: model.layers,
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = ModelParams::init(model_cfg, &mut init_rng)?;

    let report = train::train_with_progress(&params, &data, &val, &cfg, |stats| {
        let val_cell = if stats.val_tgt_per_token.is_nan() {
            "-".to_string()
        } else {
            format!("{:.6}", stats.val_tgt_per_token)
        };
        eprintln!(
            "epoch {}\ttrain {:.6}\tval {val_cell}\tlr {:.6}",
            stats.epoch, stats.train_tgt_per_token, stats.lr
        );
    })?;

    checkpoint::save(&params, &args.checkpoint)?;
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.manifest.tsv", args.checkpoint.display())));
    let manifest = render_manifest(&ManifestInputs {
        args: &args,
        model: &model,
        cfg: &cfg,
        vocab_size: voc.size(),
        data: &data,
        val: &val,
        report: &report,
    });
    std::fs::write(&manifest_path, manifest)
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    if let Some(report_path) = &args.report {
        std::fs::write(report_path, report.to_tsv())
            .with_context(|| format!("writing {}", report_path.display()))?;
    }

    println!(
        "trained on {} pairs for {} epochs (best {}), checkpoint {}",
        data.len(),
        report.epochs.len(),
        report.best_epoch,
        args.checkpoint.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct DecodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    merges: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    beam_size: usize,
    /// Decode-step budget per sentence; defaults to the source length.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Rank hypotheses by total log-probability instead of per-token.
    #[arg(long)]
    no_length_norm: bool,
}

pub fn decode(args: DecodeArgs) -> Result<()> {
    let (params, voc) = load_model_with_vocab(&args.checkpoint, &args.merges, &args.vocab)?;
    let cfg = BeamConfig {
        beam_size: args.beam_size,
        max_steps: args.max_steps,
        length_normalize: !args.no_length_norm,
    };
    let mut outputs = Vec::new();
    let mut truncated = 0usize;
    for line in read_lines(&args.input)? {
        let ids = voc.encode(&line);
        if ids.is_empty() {
            outputs.push(String::new());
            continue;
        }
        let result = beam_search(&params, &ids, &cfg)?;
        if result.truncated {
            truncated += 1;
        }
        outputs.push(voc.restore(&result.ids));
    }
    if truncated > 0 {
        eprintln!("note: {truncated} sentences hit the step budget before finishing");
    }
    emit(args.output.as_deref(), &joined_lines(&outputs))
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let sys = read_lines(&args.system)?;
    let refs = read_lines(&args.reference)?;
    if sys.len() != refs.len() {
        bail!("system has {} lines but reference has {}", sys.len(), refs.len());
    }
    let pairs: Vec<(Vec<String>, Vec<String>)> = sys
        .iter()
        .zip(&refs)
        .map(|(s, r)| (rouge::tokenize(s), rouge::tokenize(r)))
        .collect();
    let scores = rouge::corpus_rouge(&pairs)?;
    if scores.degenerate_pairs > 0 {
        eprintln!(
            "note: {} pairs had an empty side and scored zero",
            scores.degenerate_pairs
        );
    }
    emit(args.output.as_deref(), &scores.to_tsv())
}

#[derive(Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn diagnose(args: DiagnoseArgs) -> Result<()> {
    let sys = read_lines(&args.system)?;
    let refs = read_lines(&args.reference)?;
    let report = diagnostics::diagnose(&sys, &refs)?;
    emit(args.output.as_deref(), &report.to_tsv())
}

#[derive(Args)]
pub struct AlignArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    merges: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    source: PathBuf,
    /// Gold targets to teacher-force.
    #[arg(long)]
    target: PathBuf,
    /// Directory for per-sentence matrix TSVs.
    #[arg(long)]
    out_dir: PathBuf,
    /// Export matrices for at most this many sentences.
    #[arg(long, default_value_t = 10)]
    limit: usize,
    /// Optional path for the frequency-sorted (target, predicted) pair table.
    #[arg(long)]
    harvest: Option<PathBuf>,
}

pub fn align(args: AlignArgs) -> Result<()> {
    let (params, voc) = load_model_with_vocab(&args.checkpoint, &args.merges, &args.vocab)?;
    let src_lines = read_lines(&args.source)?;
    let tgt_lines = read_lines(&args.target)?;
    let ds = train::ingest_lines(&src_lines, &tgt_lines, &voc)?;
    note_drops("alignment data", &ds);
    if ds.is_empty() {
        bail!("no usable sentence pairs to align");
    }

    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    for (i, pair) in ds.pairs.iter().take(args.limit).enumerate() {
        let a = diagnostics::extract_alignments(&params, &voc, &pair.src, &pair.tgt)?;
        let n = i + 1;
        std::fs::write(
            args.out_dir.join(format!("attention_{n:04}.tsv")),
            a.attention.to_tsv(),
        )?;
        std::fs::write(
            args.out_dir.join(format!("prediction_{n:04}.tsv")),
            a.prediction.to_tsv(),
        )?;
    }
    println!(
        "wrote matrices for {} sentences to {}",
        ds.pairs.len().min(args.limit),
        args.out_dir.display()
    );

    if let Some(harvest_path) = &args.harvest {
        let harvested = diagnostics::harvest_corpus(&params, &ds.pairs)?;
        let table = diagnostics::frequency_table(&harvested);
        let mut out = String::from("count\ttarget-token\tpredicted-source-token\n");
        for ((gold, pred), count) in &table {
            let _ = writeln!(
                out,
                "{count}\t{}\t{}",
                voc.token(*gold).unwrap_or("?"),
                voc.token(*pred).unwrap_or("?")
            );
        }
        std::fs::write(harvest_path, out)
            .with_context(|| format!("writing {}", harvest_path.display()))?;
        println!(
            "harvested {} step pairs ({} distinct) to {}",
            harvested.len(),
            table.len(),
            harvest_path.display()
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct GenToyArgs {
    #[arg(long, default_value_t = synth::TOY32_SPEC.vocab)]
    vocab: usize,
    #[arg(long, default_value_t = synth::TOY32_SPEC.pairs)]
    pairs: usize,
    #[arg(long, default_value_t = synth::TOY32_SPEC.min_len)]
    min_len: usize,
    #[arg(long, default_value_t = synth::TOY32_SPEC.max_len)]
    max_len: usize,
    /// Fraction of word types that never survive into targets.
    #[arg(long, default_value_t = synth::TOY32_SPEC.delete_rate)]
    delete_rate: f64,
    #[arg(long, default_value_t = synth::TOY32_SPEC.seed)]
    seed: u64,
    /// Output path for source lines.
    #[arg(long)]
    src: PathBuf,
    /// Output path for target lines.
    #[arg(long)]
    tgt: PathBuf,
}

pub fn gen_toy(args: GenToyArgs) -> Result<()> {
    let spec = synth::ToySpec {
        vocab: args.vocab,
        pairs: args.pairs,
        min_len: args.min_len,
        max_len: args.max_len,
        delete_rate: args.delete_rate,
        seed: args.seed,
    };
    let corpus = synth::generate(&spec)?;
    corpus.write(&args.src, &args.tgt)?;
    println!("wrote {} pairs to {} and {}", corpus.pairs.len(), args.src.display(), args.tgt.display());
    Ok(())
}
