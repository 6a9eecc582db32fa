use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use kgqg_core::analysis::{analyze as prefix_analysis, DEFAULT_MIN_FREQ};
use kgqg_core::autodiff::ParamStore;
use kgqg_core::batch::PreparedExample;
use kgqg_core::checkpoint::{self, write_atomic};
use kgqg_core::dataset::{distinct_tokens, load_corpus, Split};
use kgqg_core::embed_init::{KgEmbeddingTable, PretrainedVectors};
use kgqg_core::metrics::MetricReport;
use kgqg_core::model::Graph2Seq;
use kgqg_core::predictions::{attach_gold, read_predictions, write_jsonl, Prediction};
use kgqg_core::trainer::{Stage, Trainer};

use crate::config::{self, RunConfig, Sources};
use crate::prep::{self, CacheRecord};
use crate::GlobalArgs;

const DEFAULT_OUT_DIR: &str = "runs";

fn run_config(g: &GlobalArgs) -> Result<(RunConfig, bool)> {
    let mut overrides = g.overrides.clone();
    if let Some(seed) = g.seed {
        overrides.push(format!("train.seed={seed}"));
    }
    let s = Sources {
        dataset: g.dataset.map(Into::into),
        file: g.config.as_deref(),
        overrides: &overrides,
    };
    Ok((config::load(&s)?, s.is_explicit()))
}

fn out_dir(g: &GlobalArgs, config: &RunConfig) -> PathBuf {
    g.out_dir
        .clone()
        .or_else(|| config.paths.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Training corpus (JSON lines); overrides paths.train.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
}

fn run_prep(config: &RunConfig, out: &Path, train: Option<PathBuf>, dev: Option<PathBuf>, test: Option<PathBuf>) -> Result<prep::Prepared> {
    let train = train
        .or_else(|| config.paths.train.clone())
        .context("no training corpus: pass --train or set paths.train")?;
    let dev = dev.or_else(|| config.paths.dev.clone());
    let test = test.or_else(|| config.paths.test.clone());
    let mut inputs: Vec<(Split, &Path)> = vec![(Split::Train, &train)];
    if let Some(d) = &dev {
        inputs.push((Split::Dev, d));
    }
    if let Some(t) = &test {
        inputs.push((Split::Test, t));
    }
    prep::preprocess(out, &inputs, config.train.min_freq)
}

pub fn preprocess(g: &GlobalArgs, a: PreprocessArgs) -> Result<()> {
    let (config, _) = run_config(g)?;
    let out = out_dir(g, &config);
    let prepared = run_prep(&config, &out, a.train, a.dev, a.test)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        prep_dir: &'a Path,
        up_to_date: bool,
        vocab_size: usize,
        examples: Vec<(String, usize)>,
    }
    println!(
        "{}",
        serde_json::to_string(&Summary {
            prep_dir: &prepared.dir,
            up_to_date: !prepared.wrote,
            vocab_size: prepared.manifest.vocab_size,
            examples: prepared
                .manifest
                .inputs
                .iter()
                .map(|r| (r.split.to_string(), r.examples))
                .collect(),
        })?
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// 1: cross-entropy; 2: hybrid RL fine-tuning from --init-checkpoint.
    #[arg(long, value_enum, default_value = "1")]
    stage: StageArg,
    /// Stage-1 checkpoint to fine-tune (required for stage 2).
    #[arg(long, required_if_eq("stage", "2"))]
    init_checkpoint: Option<PathBuf>,
    /// Continue an interrupted run from its `last` checkpoint.
    #[arg(long, conflicts_with = "init_checkpoint")]
    resume: Option<PathBuf>,
    /// Overrides train.max_epochs.
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Directory for `best/`, `last/` and `train_log.jsonl`
    /// (default `<out>/stage<N>`).
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

fn prepared_examples(records: Vec<CacheRecord>, config: &RunConfig) -> Vec<PreparedExample> {
    records
        .into_iter()
        .map(|r| PreparedExample::new(r.example, config.model.variant, config.model.use_copy))
        .collect()
}

/// First log line: the dev score before any update.
#[derive(Serialize)]
struct InitialLog {
    epoch: usize,
    stage: Stage,
    dev_bleu4: f64,
}

pub fn train(g: &GlobalArgs, a: TrainArgs) -> Result<()> {
    let (mut config, _) = run_config(g)?;
    if let Some(n) = a.max_epochs {
        config.train.max_epochs = n;
    }
    let out = out_dir(g, &config);
    let stage = match a.stage {
        StageArg::One => Stage::Xent,
        StageArg::Two => Stage::Rl,
    };
    if stage == Stage::Rl && a.init_checkpoint.is_none() && a.resume.is_none() {
        bail!("stage 2 needs --init-checkpoint");
    }
    let dev_path = a.dev.clone().or_else(|| config.paths.dev.clone()).context("no dev corpus: pass --dev or set paths.dev")?;
    let prepared = run_prep(&config, &out, a.train, Some(dev_path), None)?;

    let mut trainer: Trainer<f32> = if let Some(dir) = &a.resume {
        let loaded = checkpoint::load::<f32>(dir)?;
        let mut t = loaded.resume()?;
        t.config.train.max_epochs = config.train.max_epochs;
        t
    } else if let Some(dir) = &a.init_checkpoint {
        let loaded = checkpoint::load::<f32>(dir)?;
        // the architecture always comes from the checkpoint
        config.model = loaded.manifest.config.model.clone();
        loaded.restart(config.core(), stage)?
    } else {
        let vocab = Arc::new(prep::load_vocab(&prepared)?);
        let corpus: Vec<_> = prep::load_cache(&prepared, Split::Train)?.into_iter().map(|r| r.example).collect();
        let pretrained = match &config.paths.embeddings {
            Some(p) => Some(PretrainedVectors::load(p, Some(&distinct_tokens(&corpus)))?),
            None => None,
        };
        let kg = match &config.paths.kg_table {
            Some(p) => Some(KgEmbeddingTable::load(p)?),
            None => None,
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let model = Graph2Seq::new(&mut store, config.model.clone(), vocab, pretrained.as_ref(), kg, &mut rng)?;
        Trainer::new(model, store, config.core(), stage)
    };
    let run_config = RunConfig {
        model: trainer.config.model.clone(),
        train: trainer.config.train.clone(),
        paths: config.paths.clone(),
    };
    let train_set = prepared_examples(prep::load_cache(&prepared, Split::Train)?, &run_config);
    let dev_set = prepared_examples(prep::load_cache(&prepared, Split::Dev)?, &run_config);

    let run_dir = a.run_dir.clone().unwrap_or_else(|| {
        out.join(match stage {
            Stage::Xent => "stage1",
            Stage::Rl => "stage2",
        })
    });
    fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    write_atomic(&run_dir.join("config.json"), serde_json::to_string_pretty(&run_config)?.as_bytes())?;
    let log_path = run_dir.join("train_log.jsonl");
    let log_file = if a.resume.is_some() {
        fs::OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(log_file);
    if a.resume.is_none() {
        let initial = InitialLog {
            epoch: trainer.epoch,
            stage,
            dev_bleu4: trainer.evaluate(&dev_set)?.bleu4,
        };
        writeln!(log, "{}", serde_json::to_string(&initial)?)?;
        log.flush()?;
    }

    let (best_dir, last_dir) = (run_dir.join("best"), run_dir.join("last"));
    let max_epochs = trainer.config.train.max_epochs;
    trainer.fit(&train_set, &dev_set, max_epochs, |t, entry, improved| {
        let line = serde_json::to_string(entry)?;
        writeln!(log, "{line}").map_err(|e| kgqg_core::Error::io(&log_path, e))?;
        log.flush().map_err(|e| kgqg_core::Error::io(&log_path, e))?;
        if improved {
            checkpoint::save(&best_dir, t, Some(entry.dev_bleu4))?;
        }
        checkpoint::save(&last_dir, t, Some(entry.dev_bleu4))?;
        Ok(())
    })?;

    #[derive(Serialize)]
    struct Summary<'a> {
        run_dir: &'a Path,
        epochs: usize,
        best_epoch: usize,
        best_dev_bleu4: Option<f64>,
    }
    println!(
        "{}",
        serde_json::to_string(&Summary {
            run_dir: &run_dir,
            epochs: trainer.epoch,
            best_epoch: trainer.stopper.best_epoch,
            best_dev_bleu4: trainer.stopper.best,
        })?
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Checkpoint directory (contains manifest.json).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus to decode (JSON lines).
    #[arg(long)]
    input: PathBuf,
    /// Predictions file (default `<out>/predictions.jsonl`).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Beam width (default: the checkpoint's train.beam).
    #[arg(long, conflicts_with = "greedy")]
    beam: Option<usize>,
    /// Greedy decoding; same as --beam 1.
    #[arg(long)]
    greedy: bool,
    /// Maximum decoded length (default: train.max_decode_len).
    #[arg(long)]
    max_len: Option<usize>,
}

pub fn generate(g: &GlobalArgs, a: GenerateArgs) -> Result<()> {
    let (config, explicit) = run_config(g)?;
    let manifest = checkpoint::read_manifest(&a.checkpoint)?;
    if explicit {
        let want = config.core().model_hash();
        if want != manifest.model_hash {
            bail!(
                "the configured model does not match checkpoint {} (model hash {} vs {}); \
                 drop the model overrides or use the checkpoint's configuration",
                a.checkpoint.display(),
                &want[..12],
                &manifest.model_hash[..12]
            );
        }
    }
    let loaded = checkpoint::load::<f32>(&a.checkpoint)?;
    let train = &loaded.manifest.config.train;
    let width = if a.greedy { 1 } else { a.beam.unwrap_or(train.beam) };
    if width == 0 {
        bail!("--beam must be at least 1");
    }
    let max_len = a.max_len.unwrap_or(train.max_decode_len);
    let corpus = load_corpus(&a.input, Split::Test)?;
    let mut rows = Vec::with_capacity(corpus.len());
    for ex in &corpus {
        let graph = loaded.model.encoder_graph(&ex.graph);
        let out = loaded
            .model
            .generate(&loaded.store, &graph, width, max_len)
            .with_context(|| format!("decoding example {}", ex.id))?;
        rows.push(Prediction {
            id: ex.id.clone(),
            prediction: out.words.join(" "),
            gold: ex.question.join(" "),
            score: Some(out.hypothesis.normalized()),
        });
    }
    let output = a.output.unwrap_or_else(|| out_dir(g, &config).join("predictions.jsonl"));
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_jsonl(&output, &rows)?;
    log::info!("wrote {} predictions to {}", rows.len(), output.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Gold corpus; its questions replace the file's `gold` fields and the
    /// ids must match exactly.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Also print a plain-text table after the JSON line.
    #[arg(long)]
    table: bool,
    /// Write the report JSON here as well.
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn evaluate(_: &GlobalArgs, a: EvaluateArgs) -> Result<()> {
    let mut preds = read_predictions(&a.predictions)?;
    if let Some(gold) = &a.gold {
        attach_gold(&mut preds, &load_corpus(gold, Split::Test)?)?;
    }
    let candidates: Vec<Vec<String>> = preds.iter().map(Prediction::prediction_tokens).collect();
    let references: Vec<Vec<String>> = preds.iter().map(Prediction::gold_tokens).collect();
    let report = MetricReport::compute(&candidates, &references).as_percent();
    let json = serde_json::to_string(&report)?;
    println!("{json}");
    if a.table {
        println!("{:<10} {:>8} {:>8} {:>8}", "n", "BLEU-4", "METEOR", "ROUGE-L");
        println!(
            "{:<10} {:>8.2} {:>8.2} {:>8.2}",
            report.n_examples, report.bleu4, report.meteor_simplified, report.rouge_l
        );
    }
    if let Some(path) = &a.output {
        write_atomic(path, format!("{json}\n").as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Field {
    Prediction,
    Gold,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Which questions to analyze.
    #[arg(long, value_enum, default_value = "prediction")]
    field: Field,
    /// Keep only the k most frequent prefixes.
    #[arg(long)]
    top_k: Option<usize>,
    /// Drop prefixes seen fewer times than this.
    #[arg(long, default_value_t = DEFAULT_MIN_FREQ)]
    min_freq: usize,
    /// Output path prefix; writes `<prefix>.json` and `<prefix>.csv`
    /// (default `<out>/prefixes`).
    #[arg(long)]
    output_prefix: Option<PathBuf>,
}

pub fn analyze(g: &GlobalArgs, a: AnalyzeArgs) -> Result<()> {
    let preds = read_predictions(&a.predictions)?;
    let questions: Vec<Vec<String>> = preds
        .iter()
        .map(|p| match a.field {
            Field::Prediction => p.prediction_tokens(),
            Field::Gold => p.gold_tokens(),
        })
        .collect();
    let result = prefix_analysis(&questions, a.top_k, a.min_freq);
    let prefix = match a.output_prefix {
        Some(p) => p,
        None => {
            let (config, _) = run_config(g)?;
            out_dir(g, &config).join("prefixes")
        }
    };
    if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let json = serde_json::to_string_pretty(&result)?;
    write_atomic(&with_suffix(&prefix, "json"), json.as_bytes())?;
    write_atomic(&with_suffix(&prefix, "csv"), result.to_csv()?.as_bytes())?;
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}
