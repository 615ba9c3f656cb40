//! `medsum` command-line front end.

mod commands;
mod config;
mod error;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::Output;
use config::{RunConfig, Source};
use error::CliError;

#[derive(Parser)]
#[command(name = "medsum", version, about = "Train, run and evaluate the medical abstract summarizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn as_str(self) -> &'static str {
        match self {
            Switch::On => "on",
            Switch::Off => "off",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Ladder,
}

/// Options shared by every command; each overrides the matching config key.
#[derive(Args, Debug, Clone)]
struct Common {
    /// `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Beam width for decoding
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    coverage: Option<Switch>,
    #[arg(long)]
    attention: Option<Switch>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Any config key, e.g. `--set hidden_dim=32` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Also write SVG charts
    #[arg(long)]
    plot: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text, Source::File)?;
        }
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("beam_width", self.beam.map(|v| v.to_string())),
            ("coverage", self.coverage.map(|v| v.as_str().to_string())),
            ("attention", self.attention.map(|v| v.as_str().to_string())),
            ("folds", self.folds.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("plot", self.plot.then(|| "on".to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v, Source::Flag)?;
            }
        }
        for a in &self.set {
            cfg.apply_assignment(a, Source::Flag)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Clean, split and encode a corpus; writes the vocabulary and split files
    Preprocess {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train on a preprocessed dataset; writes checkpoint.msum and history.csv
    Train {
        /// Output directory of `preprocess`
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print the summary of one text
    Summarize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "input")]
        text: Option<String>,
        /// File holding the text to summarize
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on a corpus file; writes evaluate.csv and audit.csv
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Corpus file with references
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Row label (defaults to the checkpoint file stem)
        #[arg(long)]
        name: Option<String>,
        /// Use each reference as its own summary (scorer self-check)
        #[arg(long)]
        identity: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Train and score several variants on one dataset; writes compare.csv
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `name` or `name:key=value,...`; `teacher=<earlier name>` distills (repeatable)
        #[arg(long = "variant")]
        variants: Vec<String>,
        #[arg(long)]
        preset: Option<Preset>,
        #[command(flatten)]
        common: Common,
    },
    /// k-fold cross-validation over a corpus; writes crossval.csv
    Crossval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a student against a teacher checkpoint; writes student.msum
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn read_input(text: Option<String>, input: Option<&Path>) -> Result<String, CliError> {
    match (text, input) {
        (Some(t), _) => Ok(t),
        (None, Some(p)) => fs::read_to_string(p).map_err(|e| CliError::io(p, e)),
        (None, None) => Err(CliError::Usage("give --text or --input".into())),
    }
}

fn run(command: Command) -> Result<String, CliError> {
    match command {
        Command::Preprocess { corpus, out, common } => commands::preprocess(&corpus, &common.resolve()?, &Output::create(&out)?),
        Command::Train { data, out, common } => commands::train(&data, &common.resolve()?, &Output::create(&out)?),
        Command::Summarize {
            checkpoint,
            text,
            input,
            common,
        } => {
            let cfg = common.resolve()?;
            let text = read_input(text, input.as_deref())?;
            commands::summarize(&checkpoint, &text, &cfg).map(|s| s + "\n")
        }
        Command::Evaluate {
            checkpoint,
            test,
            out,
            name,
            identity,
            common,
        } => {
            let cfg = common.resolve()?;
            commands::evaluate(checkpoint.as_deref(), &test, name.as_deref(), identity, &cfg, &Output::create(&out)?)
        }
        Command::Compare {
            data,
            out,
            variants,
            preset,
            common,
        } => {
            let cfg = common.resolve()?;
            let mut list = match preset {
                Some(Preset::Ladder) => commands::ladder(&cfg),
                None => Vec::new(),
            };
            for v in &variants {
                list.push(commands::parse_variant(v)?);
            }
            commands::compare(&data, &list, &cfg, &Output::create(&out)?)
        }
        Command::Crossval { corpus, out, common } => commands::crossval(&corpus, &common.resolve()?, &Output::create(&out)?),
        Command::Distill { teacher, data, out, common } => commands::distill_cmd(&teacher, &data, &common.resolve()?, &Output::create(&out)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
