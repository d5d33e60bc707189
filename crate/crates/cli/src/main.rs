use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kgalign::config::Config;
use kgalign::encoder::{log_csv, train_encoder};
use kgalign::numerics::{checkpoint, seeded};
use kgalign::pipeline::data::{load_id_list, select_ids, Sample};
use kgalign::pipeline::{epoch_log_csv, evaluate, forward_sample, train, Model, Workspace};
use kgalign::synth::synth_generate;

#[derive(Parser)]
#[command(name = "kgalign", version, about = "Knowledge-grounded multimodal misinformation detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines; `--key=value` arguments override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Split {
    /// File with one training sample id per line (default: samples before data.split_at).
    #[arg(long)]
    train_ids: Option<PathBuf>,
    /// File with one test sample id per line (default: samples from data.split_at on).
    #[arg(long)]
    test_ids: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic world: graph, descriptions, vocab, NLI table, dataset, image features.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        entities: usize,
        #[arg(long, default_value_t = 8)]
        relations: usize,
        #[arg(long, default_value_t = 500)]
        samples: usize,
    },
    /// Train both phases, then score the test split.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        split: Split,
        /// Output directory for model.ckpt, epochs.csv, metrics.json and resolved.conf.
        #[arg(long)]
        out: PathBuf,
        /// Start from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        split: Split,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print the JSON trace of one sample.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sample: String,
        /// Model to run; a fresh initialization when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Pre-train the knowledge encoder on the graph alone.
    PretrainKg {
        #[command(flatten)]
        common: Common,
        /// Output directory for model.ckpt and pretrain.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Splits `--section.key=value` arguments out of argv (returned second);
/// clap never sees them.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let (overrides, rest) = args.into_iter().partition(|a: &String| {
        a.strip_prefix("--")
            .and_then(|body| body.split_once('='))
            .is_some_and(|(key, _)| key.contains('.'))
    });
    (rest, overrides)
}

fn load_config(common: &Common, overrides: &[String]) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    cfg.apply_overrides(overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn pick<'a>(ws: &'a Workspace, ids: Option<&Path>, fallback: Vec<&'a Sample>) -> Result<Vec<&'a Sample>> {
    match ids {
        Some(path) => Ok(select_ids(&ws.dataset.samples, &load_id_list(path)?)?),
        None => Ok(fallback),
    }
}

fn load_model(ws: &Workspace, cfg: &Config, path: &Path) -> Result<Model> {
    let params = checkpoint::load(path)?;
    Model::with_params(cfg, &ws.graph, ws.vocab.len(), params)
        .with_context(|| format!("checkpoint {} does not fit the config", path.display()))
}

/// Prints a line to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(line: &str) -> Result<()> {
    match writeln!(io::stdout().lock(), "{line}") {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli, overrides: &[String]) -> Result<()> {
    match cli.command {
        Command::Synth {
            seed,
            out,
            entities,
            relations,
            samples,
        } => {
            if !overrides.is_empty() {
                bail!("synth takes no config overrides");
            }
            let world = synth_generate(seed, entities, relations, samples, &out)?;
            let fake = world
                .samples
                .iter()
                .filter(|s| s.record.label == kgalign::pipeline::Label::Fake)
                .count();
            emit(&format!(
                "wrote {} entities, {} triples, {} samples ({} fake) to {}",
                world.entities.len(),
                world.triples.len(),
                world.samples.len(),
                fake,
                out.display()
            ))?;
        }
        Command::Train {
            common,
            split,
            out,
            init,
        } => {
            let cfg = load_config(&common, overrides)?;
            let ws = Workspace::load(&cfg)?;
            let (default_train, default_test) = ws.split(&cfg);
            let train_set = pick(&ws, split.train_ids.as_deref(), default_train)?;
            let test_set = pick(&ws, split.test_ids.as_deref(), default_test)?;
            if train_set.is_empty() {
                bail!("no training samples");
            }
            let train_prepared = ws.prepare(&cfg, &train_set)?;
            let test_prepared = ws.prepare(&cfg, &test_set)?;
            let mut model = match &init {
                Some(path) => load_model(&ws, &cfg, path)?,
                None => ws.init_model(&cfg)?,
            };
            let eval = (!test_prepared.is_empty()).then_some(test_prepared.as_slice());
            let log = train(&mut model, &ws.graph, &train_prepared, eval)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            checkpoint::save(&out.join("model.ckpt"), &model.params, checkpoint::Storage::F64)?;
            write(&out.join("epochs.csv"), &epoch_log_csv(&log))?;
            write(&out.join("resolved.conf"), &cfg.to_text())?;
            if let Some(set) = eval {
                let metrics = evaluate(&model, &ws.graph, set)?;
                write(&out.join("metrics.json"), &serde_json::to_string_pretty(&metrics)?)?;
                emit(&metrics.line())?;
            }
        }
        Command::Eval {
            common,
            split,
            checkpoint,
        } => {
            let cfg = load_config(&common, overrides)?;
            let ws = Workspace::load(&cfg)?;
            let (_, default_test) = ws.split(&cfg);
            let test_set = pick(&ws, split.test_ids.as_deref(), default_test)?;
            if test_set.is_empty() {
                bail!("no evaluation samples");
            }
            let model = load_model(&ws, &cfg, &checkpoint)?;
            let prepared = ws.prepare(&cfg, &test_set)?;
            emit(&evaluate(&model, &ws.graph, &prepared)?.line())?;
        }
        Command::Inspect {
            common,
            sample,
            checkpoint,
        } => {
            let cfg = load_config(&common, overrides)?;
            let ws = Workspace::load(&cfg)?;
            let s = ws.sample(&sample)?;
            let model = match &checkpoint {
                Some(path) => load_model(&ws, &cfg, path)?,
                None => ws.init_model(&cfg)?,
            };
            let prepared = ws.prepare(&cfg, &[s])?;
            let (_, trace) = forward_sample(&model, &ws.graph, &prepared[0])?;
            emit(&serde_json::to_string_pretty(&trace)?)?;
        }
        Command::PretrainKg { common, out } => {
            let cfg = load_config(&common, overrides)?;
            let ws = Workspace::load(&cfg)?;
            let mut model = Model::new(&cfg, &ws.graph, ws.vocab.len())?;
            let mut rng = seeded(cfg.train_seed.wrapping_add(2));
            let rows = train_encoder(&ws.graph, &model.encoder, &cfg.pretrain(), &mut model.params, &mut rng)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            checkpoint::save(&out.join("model.ckpt"), &model.params, checkpoint::Storage::F64)?;
            write(&out.join("pretrain.csv"), &log_csv(&rows))?;
            if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
                emit(&format!("loss {:.4} -> {:.4} over {} steps", first.loss_total, last.loss_total, rows.len()))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
