//! Command-line front end. Exit codes: 0 success, 1 invalid input, 2
//! runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tamarian::corpus::{make_folds_with, ClassSizePolicy, Corpus};
use tamarian::harness::{
    self, harness_model_config, ClassificationMode, ExperimentConfig, FoldData, System,
};
use tamarian::metrics::corpus_bleu;
use tamarian::model::{Model, SizePreset};
use tamarian::numerics::Checkpoint;
use tamarian::tokenizer::{tokenize, Vocabulary};
use tamarian::train::{self, TrainConfig};
use tamarian::{Error, Result};

#[derive(Parser)]
#[command(
    name = "tamarian",
    version,
    about = "English to Tamarian translation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CorpusArgs {
    #[arg(long)]
    dictionary: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Allow class sizes other than 5 or 10.
    #[arg(long)]
    lenient: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SizeArg {
    Small,
    Base,
    Large,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Generate,
    Likelihood,
}

#[derive(Clone, Copy, ValueEnum)]
enum SystemArg {
    Transformer,
    Baseline,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Write the five-fold plan as JSON.
    Folds {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one fold and write a checkpoint plus its vocabulary.
    Train {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_enum, default_value = "small")]
        size: SizeArg,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Checkpoint path; the vocabulary goes next to it as `<stem>.vocab.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run crossvalidation and write the report.
    Eval {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_enum, default_value = "small")]
        size: SizeArg,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "generate")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "both")]
        system: SystemArg,
        /// JSON report path; the table is printed to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Translate one English sentence with a trained checkpoint.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the file written next to the checkpoint by `train`.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        dictionary: PathBuf,
        text: String,
    },
    /// Corpus BLEU of a hypothesis file against a reference file, one
    /// sentence per line.
    Bleu {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Write a synthetic dictionary and corpus.
    Synth {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for dictionary.jsonl and corpus.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
}

fn sizes(arg: SizeArg) -> Vec<SizePreset> {
    match arg {
        SizeArg::Small => vec![SizePreset::Small],
        SizeArg::Base => vec![SizePreset::Base],
        SizeArg::Large => vec![SizePreset::Large],
        SizeArg::All => SizePreset::ALL.to_vec(),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn vocab_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint.file_stem().unwrap_or_default().to_string_lossy();
    checkpoint.with_file_name(format!("{stem}.vocab.json"))
}

fn load(args: &CorpusArgs) -> Result<Corpus> {
    Corpus::load(&args.dictionary, &args.corpus)
}

fn policy(args: &CorpusArgs) -> ClassSizePolicy {
    if args.lenient {
        ClassSizePolicy::Lenient
    } else {
        ClassSizePolicy::Strict
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Folds { corpus, seed, out } => {
            let c = load(&corpus)?;
            let plan = make_folds_with(&c.pairs, seed, policy(&corpus))?;
            match out {
                Some(p) => write(&p, &plan.to_json()),
                None => {
                    print!("{}", plan.to_json());
                    Ok(())
                }
            }
        }
        Command::Train {
            corpus,
            size,
            epochs,
            seed,
            fold,
            out,
        } => {
            let size = match sizes(size).as_slice() {
                [s] => *s,
                _ => return Err(Error::Validation("train takes a single --size".into())),
            };
            let c = load(&corpus)?;
            let plan = make_folds_with(&c.pairs, seed, policy(&corpus))?;
            let data = FoldData::new(&c, &plan.fold(fold)?.train, 1)?;
            let config = ExperimentConfig {
                seed,
                ..ExperimentConfig::default()
            };
            let model = Model::init(
                harness_model_config(&config, &c, size, seed),
                data.vocab.len(),
            )?;
            let tc = TrainConfig {
                epochs,
                seed,
                max_decode_len: Some(harness::decode_limit(&c)),
                ..TrainConfig::default()
            };
            let trained = train::train(model, &data.examples, &plan, fold, &tc)?;
            for s in &trained.trace {
                eprintln!(
                    "epoch {:>3}  loss {:.4}  dev BLEU {}",
                    s.epoch,
                    s.train_loss,
                    s.dev_bleu.map_or("-".into(), |b| format!("{b:.2}"))
                );
            }
            eprintln!("kept epoch {}", trained.best_epoch);
            write(&out, &trained.model.to_checkpoint(&data.vocab).to_json()?)?;
            write(&vocab_path(&out), &data.vocab.to_json())
        }
        Command::Eval {
            corpus,
            size,
            epochs,
            seed,
            mode,
            system,
            out,
        } => {
            let config = ExperimentConfig {
                dictionary_path: Some(corpus.dictionary.clone()),
                corpus_path: Some(corpus.corpus.clone()),
                sizes: sizes(size),
                train: TrainConfig {
                    epochs,
                    ..TrainConfig::default()
                },
                seed,
                mode: match mode {
                    ModeArg::Generate => ClassificationMode::GenerateThenMatch,
                    ModeArg::Likelihood => ClassificationMode::LikelihoodRanking,
                },
                systems: match system {
                    SystemArg::Transformer => [System::Transformer].into(),
                    SystemArg::Baseline => [System::Baseline].into(),
                    SystemArg::Both => [System::Transformer, System::Baseline].into(),
                },
                lenient_folds: corpus.lenient,
                ..ExperimentConfig::default()
            };
            let report = harness::run_crossval(&config)?;
            print!("{}", report.table());
            if let Some(p) = out {
                write(&p, &report.canonical_json())?;
            }
            Ok(())
        }
        Command::Translate {
            checkpoint,
            vocab,
            dictionary,
            text,
        } => {
            let vocab_file = vocab.unwrap_or_else(|| vocab_path(&checkpoint));
            let vocab = Vocabulary::from_json(&read(&vocab_file)?)?;
            let ckpt = Checkpoint::from_json(&read(&checkpoint)?)?;
            let model = Model::from_checkpoint(&ckpt, &vocab)?;
            let dict = tamarian::corpus::load_dictionary(&dictionary)?;
            let t = harness::translate(&model, &vocab, &dict, &text)?;
            println!("{}", serde_json::to_string_pretty(&t)?);
            Ok(())
        }
        Command::Bleu { hyp, reference } => {
            let lines = |p: &Path| -> Result<Vec<Vec<String>>> {
                Ok(read(p)?.lines().map(tokenize).collect())
            };
            let report = corpus_bleu(&lines(&hyp)?, &lines(&reference)?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Synth {
            classes,
            per_class,
            seed,
            out,
        } => {
            let c = harness::make_synthetic_corpus(classes, per_class, seed)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            write(&out.join("dictionary.jsonl"), &c.dictionary_jsonl())?;
            write(&out.join("corpus.jsonl"), &c.pairs_jsonl())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
