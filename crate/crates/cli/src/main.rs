//! Command-line surface: generate | train | eval | stream | stats.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use microgest_core::eval::{dataset_statistics, evaluate_sequences, Detection};
use microgest_core::hand::{SkeletonFrame, SkeletonSequence, JOINT_COUNT};
use microgest_core::io::{
    load_config, read_corpus, render_report, write_corpus, write_corpus_meta, CorpusMeta,
    RunConfig,
};
use microgest_core::streaming::{run_offline, OnlineRecognizer};
use microgest_core::synth::generate_sequence;
use microgest_core::trainer::{fit, Checkpoint};

#[derive(Parser)]
#[command(name = "microgest", about = "Online micro-gesture recognition pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => load_config(path).with_context(|| format!("loading {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.generator.seed = seed;
            config.train.seed = seed;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic corpus plus a statistics sidecar.
    Generate {
        #[command(flatten)]
        common: ConfigArgs,
        /// Number of sequences.
        #[arg(long)]
        count: u64,
        /// Output corpus path (JSON lines).
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a model and write checkpoints plus a training log.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
        /// Training corpus path.
        #[arg(long)]
        corpus: PathBuf,
        /// Validation corpus path; without it every fifth sequence is held out.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Checkpoint output path.
        #[arg(long)]
        output: PathBuf,
        /// Training log output (JSON lines), one record per epoch.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Stream a corpus through a checkpoint and report the metric suite.
    Eval {
        /// Checkpoint path.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Ground-truth corpus path.
        #[arg(long)]
        corpus: PathBuf,
        /// Write the report here as well as stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Append a per-sequence table to the report.
        #[arg(long)]
        per_sequence: bool,
    },
    /// Online inference over frames from a file or standard input.
    Stream {
        /// Checkpoint path.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input path; standard input when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Print corpus statistics (SCCGP / MGI / MGD / NMJD).
    Stats {
        /// Corpus path.
        #[arg(long)]
        corpus: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate {
            common,
            count,
            output,
        } => cmd_generate(&common, count, &output),
        Command::Train {
            common,
            corpus,
            val,
            output,
            log,
        } => cmd_train(&common, &corpus, val.as_deref(), &output, log.as_deref()),
        Command::Eval {
            checkpoint,
            corpus,
            report,
            per_sequence,
        } => cmd_eval(&checkpoint, &corpus, report.as_deref(), per_sequence),
        Command::Stream { checkpoint, input } => cmd_stream(&checkpoint, input.as_deref()),
        Command::Stats { corpus } => cmd_stats(&corpus),
    }
}

fn cmd_generate(common: &ConfigArgs, count: u64, output: &Path) -> Result<()> {
    let config = common.load()?;
    let sequences: Vec<SkeletonSequence> = (0..count)
        .into_par_iter()
        .map(|i| generate_sequence(&config.generator, i).map_err(anyhow::Error::from))
        .collect::<Result<_>>()?;
    write_corpus(output, &sequences)?;
    let stats = dataset_statistics(&sequences);
    let meta_path = output.with_extension("meta.json");
    write_corpus_meta(&meta_path, &CorpusMeta::new(config.generator.clone(), &stats))?;
    println!(
        "wrote {} sequences ({} instances) to {}",
        sequences.len(),
        stats.instances,
        output.display()
    );
    println!(
        "SCCGP {:.4}  MGI {:.4}s  MGD {:.4}s  NMJD {:.4}",
        stats.sccgp, stats.mgi, stats.mgd, stats.nmjd
    );
    Ok(())
}

fn cmd_train(
    common: &ConfigArgs,
    corpus: &Path,
    val: Option<&Path>,
    output: &Path,
    log: Option<&Path>,
) -> Result<()> {
    let config = common.load()?;
    let all = read_corpus(corpus)?;
    let (train, validation): (Vec<_>, Vec<_>) = match val {
        Some(path) => (all, read_corpus(path)?),
        None => {
            let mut train = Vec::new();
            let mut validation = Vec::new();
            for (i, seq) in all.into_iter().enumerate() {
                if i % 5 == 4 {
                    validation.push(seq);
                } else {
                    train.push(seq);
                }
            }
            (train, validation)
        }
    };
    if validation.is_empty() {
        bail!("validation split is empty");
    }
    println!(
        "training on {} sequences, validating on {}",
        train.len(),
        validation.len()
    );
    let outcome = fit(
        &config.model,
        &train,
        &validation,
        &config.train,
        Some(output),
        None,
    )?;
    for record in &outcome.log {
        println!(
            "epoch {:>3}  lr {:.6}  cls {:.4}  pos {:.4}  ctc {:.4}  total {:.4}  val DR {:.4}",
            record.epoch,
            record.lr,
            record.mean_cls,
            record.mean_pos,
            record.mean_ctc,
            record.mean_total,
            record.val_dr
        );
    }
    if let Some(path) = log {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for record in &outcome.log {
            serde_json::to_writer(&mut file, record)?;
            file.write_all(b"\n")?;
        }
    }
    println!(
        "best validation DR {:.4} at epoch {} ({} epochs run); checkpoint: {}",
        outcome.best_val_dr,
        outcome.best_epoch,
        outcome.epochs_run,
        output.display()
    );
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    corpus: &Path,
    report_path: Option<&Path>,
    per_sequence: bool,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.best_model();
    let threshold = ckpt.train_config.confidence_threshold;
    let sequences = read_corpus(corpus)?;
    let per_seq: Vec<(Vec<Detection>, &SkeletonSequence)> = sequences
        .par_iter()
        .map(|seq| (run_offline(&model, &seq.frames, threshold).0, seq))
        .collect();
    let report = evaluate_sequences(&per_seq);
    let mut text = render_report(&report);
    if per_sequence {
        text.push_str("\nper-sequence detections:\n");
        for (preds, seq) in &per_seq {
            text.push_str(&format!(
                "  {}: {} gt, {} detections\n",
                seq.id,
                seq.instances.len(),
                preds.len()
            ));
        }
    }
    print!("{text}");
    if let Some(path) = report_path {
        std::fs::write(path, &text)?;
    }
    Ok(())
}

fn parse_frame(line: &str) -> Option<SkeletonFrame> {
    let joints: Vec<[f64; 3]> = serde_json::from_str(line).ok()?;
    if joints.len() != JOINT_COUNT {
        return None;
    }
    let mut frame = SkeletonFrame::zeroed();
    frame.joints.copy_from_slice(&joints);
    Some(frame)
}

fn cmd_stream(checkpoint: &Path, input: Option<&Path>) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.best_model();
    let threshold = ckpt.train_config.confidence_threshold;
    let mut recognizer = OnlineRecognizer::new(&model, threshold);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();

    let reader: Box<dyn BufRead> = match input {
        Some(path) => Box::new(std::io::BufReader::new(std::fs::File::open(path)?)),
        None => Box::new(std::io::BufReader::new(std::io::stdin())),
    };
    let emit = |events: Vec<Detection>, out: &mut dyn Write| -> Result<()> {
        for e in events {
            writeln!(
                out,
                "{},{},{},{},{:.4}",
                e.commit_frame, e.category, e.start, e.end, e.confidence
            )?;
        }
        out.flush()?;
        Ok(())
    };
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // a line is either one frame (21 x [x,y,z]) or a whole sequence record
        if let Some(frame) = parse_frame(&line) {
            match recognizer.push_frame(&frame) {
                Ok(events) => emit(events, &mut out)?,
                Err(e) => eprintln!("line {}: {e}", idx + 1),
            }
            continue;
        }
        match serde_json::from_str::<microgest_core::io::SequenceRecord>(&line) {
            Ok(record) => match record.into_sequence() {
                Ok(seq) => {
                    for frame in &seq.frames {
                        match recognizer.push_frame(frame) {
                            Ok(events) => emit(events, &mut out)?,
                            Err(e) => eprintln!("line {}: {e}", idx + 1),
                        }
                    }
                }
                Err(e) => eprintln!("line {}: {e}", idx + 1),
            },
            Err(e) => eprintln!("line {}: malformed frame line: {e}", idx + 1),
        }
    }
    Ok(())
}

fn cmd_stats(corpus: &Path) -> Result<()> {
    let sequences = read_corpus(corpus)?;
    let stats = dataset_statistics(&sequences);
    println!("sequences: {}", stats.sequences);
    println!("instances: {}", stats.instances);
    println!("SCCGP: {:.4}", stats.sccgp);
    println!("MGI:   {:.4} s", stats.mgi);
    println!("MGD:   {:.4} s", stats.mgd);
    println!("NMJD:  {:.4}", stats.nmjd);
    Ok(())
}
