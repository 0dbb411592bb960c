//! `fclnat`: data generation, training, evaluation and curve export for
//! curriculum AT → NAT experiments.
//!
//! Failures print one line `error[<category>]: <message>` to stderr and
//! exit with status 1.

mod commands;
mod config;
mod curves;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fclnat::curriculum::{pacing_curve_csv, PacingKind, PacingSpec, SubstitutionLevel};
use fclnat::training::Variant;
use fclnat::{Error, Result};

use commands::DecodeKind;
use config::{write_text, PipelineConfig};

#[derive(Parser)]
#[command(name = "fclnat", version, about = "Curriculum fine-tuning from AT to NAT decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline config (JSON); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Teacher checkpoint for distillation and NPD rescoring.
    #[arg(long)]
    teacher: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Teacher,
    Fcl,
    DirectTransfer,
    NatScratch,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pacing {
    Ladder,
    Linear,
    Log,
}

#[derive(Clone, Copy, ValueEnum)]
enum Substitution {
    Token,
    Sentence,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Decode {
    Nat,
    At,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/valid/test corpora and the vocabulary.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a teacher or a student variant.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, value_enum)]
        pacing: Option<Pacing>,
        #[arg(long, value_enum)]
        substitution: Option<Substitution>,
    },
    /// Decode the test set and write an evaluation report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// NPD half-window B (0 = single NAT pass).
        #[arg(long = "npd-b")]
        npd_b: Option<usize>,
        #[arg(long, value_enum, default_value = "nat")]
        decode: Decode,
        /// Beam size for `--decode at`.
        #[arg(long, default_value_t = 1)]
        beam: usize,
    },
    /// Merge training logs by step, or tabulate pacing curves.
    ExportCurves {
        #[arg(long)]
        out: PathBuf,
        /// Log column to merge.
        #[arg(long, default_value = "val_bleu")]
        column: String,
        /// Write ladder/linear/log pacing curves over this many steps instead.
        #[arg(long)]
        pacing_steps: Option<usize>,
        #[arg(long, default_value_t = 10)]
        ladder_k: usize,
        logs: Vec<PathBuf>,
    },
}

fn effective_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.data_dir {
        cfg.paths.data_dir = d.clone();
    }
    if let Some(r) = &common.run_dir {
        cfg.paths.run_dir = r.clone();
    }
    if let Some(t) = &common.teacher {
        cfg.paths.teacher_checkpoint = Some(t.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = effective_config(&common)?;
            for p in commands::gen_data(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Train {
            common,
            mode,
            pacing,
            substitution,
        } => {
            let mut cfg = effective_config(&common)?;
            if let Some(p) = pacing {
                cfg.train.curriculum.pacing = match p {
                    Pacing::Ladder => PacingKind::Ladder,
                    Pacing::Linear => PacingKind::Linear,
                    Pacing::Log => PacingKind::Log,
                };
            }
            if let Some(s) = substitution {
                cfg.train.curriculum.substitution = match s {
                    Substitution::Token => SubstitutionLevel::Token,
                    Substitution::Sentence => SubstitutionLevel::Sentence,
                };
            }
            let variant = match mode {
                Mode::Teacher => Variant::Teacher,
                Mode::Fcl => Variant::Fcl,
                Mode::DirectTransfer => Variant::DirectTransfer,
                Mode::NatScratch => Variant::NatScratch,
            };
            let summary = commands::train(&cfg, variant)?;
            for c in &summary.checkpoints {
                println!("checkpoint {}", c.display());
            }
            println!("log {}", summary.log.display());
            if let Some(b) = summary.best_val_bleu {
                println!("best validation BLEU {b:.2}");
            }
        }
        Command::Eval {
            common,
            checkpoint,
            npd_b,
            decode,
            beam,
        } => {
            let mut cfg = effective_config(&common)?;
            if let Some(b) = npd_b {
                cfg.npd.half_window = b;
            }
            let kind = match decode {
                Decode::Nat => DecodeKind::Nat,
                Decode::At if beam == 0 => return Err(Error::Config("--beam must be at least 1".into())),
                Decode::At => DecodeKind::At { beam },
            };
            let report = commands::eval(&cfg, &checkpoint, kind)?;
            print!("{}", report.to_table());
        }
        Command::ExportCurves {
            out,
            column,
            pacing_steps,
            ladder_k,
            logs,
        } => {
            if let Some(steps) = pacing_steps {
                let mut table: Vec<Vec<String>> = Vec::new();
                for kind in [PacingKind::Ladder, PacingKind::Linear, PacingKind::Log] {
                    let csv = pacing_curve_csv(&PacingSpec::new(kind, steps, ladder_k)?, 0.6, 1)?;
                    table.push(csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap_or("").to_string()).collect());
                }
                let mut text = String::from("step,ladder,linear,log\n");
                for i in 0..steps {
                    text.push_str(&format!("{i},{},{},{}\n", table[0][i], table[1][i], table[2][i]));
                }
                write_text(&out, &text)?;
            } else {
                if logs.is_empty() {
                    return Err(Error::Input("export-curves needs at least one log file".into()));
                }
                let names = curves::series_names(&logs);
                let mut series = Vec::new();
                for (path, name) in logs.iter().zip(names) {
                    let mut s = curves::read_series(path, &column)?;
                    s.name = name;
                    series.push(s);
                }
                let (text, resampled) = curves::merge(&series)?;
                if resampled {
                    eprintln!("warning: step grids differ; resampled to the coarsest grid");
                }
                write_text(&out, &text)?;
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
