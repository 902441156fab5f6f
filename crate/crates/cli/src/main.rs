use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stcap::checkpoint;
use stcap::config::Config;
use stcap::data::{generate_synthetic, load_dataset, save_dataset, LoadOptions};
use stcap::metrics::{captions_to_jsonl, evaluate, load_captions};
use stcap::pipeline::{caption_samples, check_dataset, embedding_separation, embeddings_to_tsv, export_embeddings};
use stcap::training::{build_vocabulary, prepare_examples, train_until, Precision, TrainState};
use stcap::{CaptionSample, Error, Model, Result, Scalar, VectorProvider};

/// Environment variable naming the default config file.
const CONFIG_ENV: &str = "STCAP_CONFIG";

#[derive(Parser)]
#[command(name = "stcap", version, about = "Image captioning with copyable special tokens")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key=value config file (default: $STCAP_CONFIG).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark (train.jsonl, test.jsonl, zero_shot.jsonl).
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus a step-indexed loss log.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint that holds training state.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Loss log path (default: <out>.loss.tsv).
        #[arg(long)]
        loss_log: Option<PathBuf>,
        /// Stop once this many epochs are complete (the schedule still plans for `epochs`).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Greedy-decode a caption for every sample.
    Caption {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score captions against the dataset references.
    Eval {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also report the source separation of this checkpoint's token embeddings.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write special-token embeddings as TSV: text, source, then d values.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &ConfigArgs) -> Result<Config> {
    let path = args.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        cfg.set("seed", seed)?;
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn load_samples(path: &Path, num_sources: usize) -> Result<Vec<CaptionSample>> {
    load_dataset(
        path,
        &LoadOptions {
            num_sources,
            ..LoadOptions::default()
        },
    )
}

fn cmd_synth(cfg: &Config, out: &Path) -> Result<()> {
    let splits = generate_synthetic(&cfg.synth()?)?;
    std::fs::create_dir_all(out)?;
    save_dataset(out.join("train.jsonl"), &splits.train)?;
    save_dataset(out.join("test.jsonl"), &splits.test)?;
    save_dataset(out.join("zero_shot.jsonl"), &splits.zero_shot)?;
    println!(
        "train: {}  test: {}  zero_shot: {}",
        splits.train.len(),
        splits.test.len(),
        splits.zero_shot.len()
    );
    Ok(())
}

fn run_training<T: Scalar>(
    mut model: Model<T>,
    state: Option<TrainState<T>>,
    samples: &[CaptionSample],
    cfg: &Config,
    out: &Path,
    loss_log: &Path,
    stop_after: Option<usize>,
) -> Result<()> {
    check_dataset(&model.config, samples)?;
    let train_cfg = cfg.train()?;
    let examples = prepare_examples(&model, samples)?;
    let mut state = state.unwrap_or_else(|| TrainState::new(&model));
    train_until(&mut model, &examples, &train_cfg, &mut state, stop_after.unwrap_or(usize::MAX))?;
    checkpoint::save(out, &model, Some(&state))?;
    let mut log = String::from("step\tloss\n");
    for (i, l) in state.loss_history.iter().enumerate() {
        log.push_str(&format!("{}\t{l:?}\n", i + 1));
    }
    write(loss_log, &log)?;
    println!(
        "epochs: {}  steps: {}  final_loss: {:.6}",
        state.epoch,
        state.optimizer.step,
        state.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_train(
    cfg: &Config,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
    loss_log: Option<&Path>,
    stop_after: Option<usize>,
) -> Result<()> {
    let default_log = PathBuf::from(format!("{}.loss.tsv", out.display()));
    let loss_log = loss_log.unwrap_or(&default_log);
    if let Some(path) = resume {
        let text = std::fs::read_to_string(path)?;
        let samples = |n| load_samples(data, n);
        return match checkpoint::peek_precision(&text)? {
            Precision::F32 => {
                let c = checkpoint::from_text::<f32>(&text)?;
                let s = samples(c.model.config.num_sources)?;
                run_training(c.model, c.state, &s, cfg, out, loss_log, stop_after)
            }
            Precision::F64 => {
                let c = checkpoint::from_text::<f64>(&text)?;
                let s = samples(c.model.config.num_sources)?;
                run_training(c.model, c.state, &s, cfg, out, loss_log, stop_after)
            }
        };
    }
    let model_cfg = cfg.model()?;
    let train_cfg = cfg.train()?;
    let samples = load_samples(data, model_cfg.num_sources)?;
    if samples.is_empty() {
        return Err(Error::InvalidValue {
            field: "data".into(),
            reason: "dataset is empty".into(),
        });
    }
    check_dataset(&model_cfg, &samples)?;
    let provider = match cfg.raw("word_vectors") {
        Some(p) if !p.is_empty() => VectorProvider::load_table(p, model_cfg.d_ft)?,
        _ => VectorProvider::hash(model_cfg.d_ft),
    };
    let vocab = build_vocabulary(&samples, cfg.get("vocab_min_count", 1)?);
    let heads = cfg.head_init()?;
    match train_cfg.precision {
        Precision::F32 => {
            let m = Model::<f32>::new(model_cfg, vocab, provider, train_cfg.seed, heads)?;
            run_training(m, None, &samples, cfg, out, loss_log, stop_after)
        }
        Precision::F64 => {
            let m = Model::<f64>::new(model_cfg, vocab, provider, train_cfg.seed, heads)?;
            run_training(m, None, &samples, cfg, out, loss_log, stop_after)
        }
    }
}

/// Loads a checkpoint at its stored precision and runs `f` on it.
macro_rules! with_model {
    ($path:expr, |$m:ident| $body:expr) => {{
        let text = std::fs::read_to_string($path)?;
        match checkpoint::peek_precision(&text)? {
            Precision::F32 => {
                let $m = checkpoint::from_text::<f32>(&text)?.model;
                $body
            }
            Precision::F64 => {
                let $m = checkpoint::from_text::<f64>(&text)?.model;
                $body
            }
        }
    }};
}

fn cmd_caption(ckpt: &Path, data: &Path, out: &Path) -> Result<()> {
    let records = with_model!(ckpt, |m| {
        let samples = load_samples(data, m.config.num_sources)?;
        check_dataset(&m.config, &samples)?;
        caption_samples(&m, &samples)?
    });
    write(out, &captions_to_jsonl(&records))?;
    println!("captions: {}", records.len());
    Ok(())
}

fn cmd_eval(captions: &Path, data: &Path, out: &Path, ckpt: Option<&Path>) -> Result<()> {
    let records = load_captions(captions)?;
    let separation = match ckpt {
        None => None,
        Some(path) => Some(with_model!(path, |m| {
            let samples = load_samples(data, m.config.num_sources)?;
            check_dataset(&m.config, &samples)?;
            embedding_separation(&export_embeddings(&m, &samples)?)?
        })),
    };
    let samples = load_samples(data, usize::MAX)?;
    let report = evaluate(&records, &samples, separation)?;
    write(out, &report.to_text())?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_export(ckpt: &Path, data: &Path, out: &Path) -> Result<()> {
    let rows = with_model!(ckpt, |m| {
        let samples = load_samples(data, m.config.num_sources)?;
        check_dataset(&m.config, &samples)?;
        export_embeddings(&m, &samples)?
    });
    write(out, &embeddings_to_tsv(&rows))?;
    println!("rows: {}", rows.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { cfg, out } => cmd_synth(&load_config(&cfg)?, &out),
        Command::Train {
            cfg,
            data,
            out,
            resume,
            loss_log,
            stop_after,
        } => cmd_train(&load_config(&cfg)?, &data, &out, resume.as_deref(), loss_log.as_deref(), stop_after),
        Command::Caption { checkpoint, data, out } => cmd_caption(&checkpoint, &data, &out),
        Command::Eval {
            captions,
            data,
            out,
            checkpoint,
        } => cmd_eval(&captions, &data, &out, checkpoint.as_deref()),
        Command::ExportEmbeddings { checkpoint, data, out } => cmd_export(&checkpoint, &data, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            eprint!("{rendered}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
