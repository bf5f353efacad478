//! Command-line front end. Besides the named options every subcommand
//! accepts `--section.key value` (or `--section.key=value`) overrides of
//! any configuration key.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{set_key, RunConfig};
use crate::dataio::{gen_synthetic, load_csv, write_csv, PerturbationKind, SyntheticSpec};
use crate::error::{Error, Result};
use crate::evaluation::Mode;
use crate::training::Checkpoint;
use crate::workflow;

#[derive(Debug, Parser)]
#[command(name = "mff", version, about = "Self-supervised time-series representations with a ridge forecasting probe")]
struct Cli {
    /// Configuration profile (falls back to $MFF_PROFILE, then `desk`).
    #[arg(long, global = true)]
    profile: Option<String>,
    /// TOML file with dotted keys, applied over the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Shorthand for `--train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an encoder and write a checkpoint plus its loss history.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss history path; defaults to `<out>.history.json`.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Fit ridge probes on frozen representations and report test errors.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<usize>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        report: PathBuf,
        /// Record the wall-clock time in the report.
        #[arg(long)]
        timestamp: bool,
    },
    /// Train and evaluate ablation variants such as `full,w/o FM,w/o DA+CM`.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated variant names; all eight when omitted.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Perturb the training split with noise or missing values at several ratios.
    Robustness {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        kind: PerturbationKind,
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Pretrain on one dataset, fine-tune and evaluate on another.
    Transfer {
        #[arg(long)]
        pretrain: PathBuf,
        #[arg(long)]
        finetune: PathBuf,
        #[arg(long)]
        pretrain_epochs: Option<usize>,
        #[arg(long)]
        finetune_epochs: Option<usize>,
        /// Replace the input layer when the feature counts differ.
        #[arg(long)]
        reinit_input: bool,
        #[arg(long)]
        report: PathBuf,
        /// Also write the fine-tuned checkpoint here.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write an ETT-format CSV generated from a TOML recipe.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Splits dotted `--a.b value` / `--a.b=value` overrides from the rest.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(name) = arg.strip_prefix("--").filter(|n| n.split('=').next().is_some_and(|k| k.contains('.'))) else {
            rest.push(arg);
            continue;
        };
        match name.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Config(format!("--{name} needs a value")))?;
                overrides.push((name.to_string(), v));
            }
        }
    }
    Ok((rest, overrides))
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run(args: Vec<String>) -> i32 {
    let (rest, mut overrides) = match split_overrides(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(seed) = cli.seed {
        overrides.push(("train.seed".into(), seed.to_string()));
    }
    match execute(&cli, &overrides) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve(cli: &Cli, overrides: &[(String, String)]) -> Result<RunConfig> {
    RunConfig::resolve(cli.profile.as_deref(), cli.config.as_deref(), overrides)
}

fn progress(quiet: bool, label: &str) -> impl FnMut(&crate::training::EpochRecord) + '_ {
    move |e| {
        if !quiet {
            eprintln!(
                "{label} epoch {:>4}  total {:>10.4}  time {:>10.4}  freq {:>8.4}",
                e.epoch, e.mean.total, e.mean.time, e.mean.freq
            );
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn execute(cli: &Cli, overrides: &[(String, String)]) -> Result<()> {
    match &cli.command {
        Command::Train { data, out, history } => {
            let cfg = resolve(cli, overrides)?;
            let raw = load_csv(data)?;
            let p = workflow::prepare(&raw, &cfg)?;
            let (model, hist) = workflow::train_model(&p, &cfg, progress(cli.quiet, "train"))?;
            workflow::checkpoint(&model, &cfg, hist.epochs.len()).save(out)?;
            let hist_path = history.clone().unwrap_or_else(|| {
                let mut s = out.clone().into_os_string();
                s.push(".history.json");
                PathBuf::from(s)
            });
            write_text(&hist_path, &to_json(&hist))?;
            println!("wrote {} and {}", out.display(), hist_path.display());
        }
        Command::Eval {
            checkpoint,
            data,
            horizons,
            mode,
            report,
            timestamp,
        } => {
            let ck = Checkpoint::load(checkpoint)?;
            let (model, mut cfg) = workflow::load_model(&ck)?;
            cfg = apply(cfg, overrides)?;
            if !horizons.is_empty() {
                cfg.data.horizons = horizons.clone();
            }
            if let Some(m) = mode {
                cfg.data.mode = *m;
            }
            let raw = load_csv(data)?;
            let p = workflow::prepare(&raw, &cfg)?;
            let mut rep = workflow::evaluate(&model, &p, &cfg)?;
            if *timestamp {
                rep.timestamp = Some(now());
            }
            rep.save(report)?;
            print!("{}", rep.table());
        }
        Command::Ablate { data, variants, report } => {
            let cfg = resolve(cli, overrides)?;
            let variants: Vec<String> = match variants {
                Some(v) => v.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
                None => crate::model::Ablation::VARIANTS.iter().map(|s| s.to_string()).collect(),
            };
            let raw = load_csv(data)?;
            let quiet = cli.quiet;
            let (rep, _) = workflow::ablate(&raw, &cfg, &variants, |row| {
                if !quiet {
                    eprintln!("finished {}", row.variant);
                }
            })?;
            write_text(report, &to_json(&rep))?;
            print!("{}", rep.table());
        }
        Command::Robustness {
            data,
            kind,
            ratios,
            report,
        } => {
            let cfg = resolve(cli, overrides)?;
            let ratios = ratios.clone().unwrap_or_else(|| match kind {
                PerturbationKind::Noise => vec![0.05, 0.1, 0.2, 0.3],
                PerturbationKind::Missing => vec![0.1, 0.2, 0.3, 0.4],
            });
            let raw = load_csv(data)?;
            let quiet = cli.quiet;
            let rep = workflow::robustness(&raw, &cfg, *kind, &ratios, |row| {
                if !quiet {
                    eprintln!("finished ratio {:?}", row.ratio);
                }
            })?;
            write_text(report, &to_json(&rep))?;
            print!("{}", rep.table());
        }
        Command::Transfer {
            pretrain,
            finetune,
            pretrain_epochs,
            finetune_epochs,
            reinit_input,
            report,
            checkpoint,
        } => {
            let mut cfg = resolve(cli, overrides)?;
            if let Some(e) = pretrain_epochs {
                cfg.transfer.pretrain_epochs = *e;
            }
            if let Some(e) = finetune_epochs {
                cfg.transfer.finetune_epochs = *e;
            }
            cfg.transfer.reinit_input |= *reinit_input;
            let source = load_csv(pretrain)?;
            let target = load_csv(finetune)?;
            let out = workflow::transfer(&source, &target, &cfg)?;
            out.report.save(report)?;
            if let Some(path) = checkpoint {
                workflow::checkpoint(&out.finetuned, &cfg, out.finetune_history.epochs.len()).save(path)?;
            }
            print!("{}", out.report.table());
        }
        Command::Synth { spec, out } => {
            let text = std::fs::read_to_string(spec).map_err(|e| Error::io(spec, e))?;
            let spec: SyntheticSpec =
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", spec.display())))?;
            let table = gen_synthetic(&spec)?;
            write_csv(&table, out)?;
            println!("wrote {} rows x {} features to {}", table.num_rows(), table.num_features(), out.display());
        }
    }
    Ok(())
}

fn apply(cfg: RunConfig, overrides: &[(String, String)]) -> Result<RunConfig> {
    if overrides.is_empty() {
        return Ok(cfg);
    }
    let mut text = cfg.canonical_text().parse::<toml::Table>().map_err(|e| Error::Config(e.to_string()))?;
    for (k, v) in overrides {
        set_key(&mut text, k, v)?;
    }
    let cfg = RunConfig::from_canonical(&toml::to_string(&text).map_err(|e| Error::Config(e.to_string()))?)?;
    cfg.validate()?;
    Ok(cfg)
}

fn now() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs() as i64);
    chrono::DateTime::from_timestamp(secs, 0)
        .map(|t| t.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_flags_are_split_out() {
        let args = ["mff", "train", "--facm.mask-ratio", "0.3", "--data", "x.csv", "--train.epochs=2"]
            .map(String::from)
            .to_vec();
        let (rest, ov) = split_overrides(args).unwrap();
        assert_eq!(rest, ["mff", "train", "--data", "x.csv"]);
        assert_eq!(
            ov,
            vec![("facm.mask-ratio".into(), "0.3".into()), ("train.epochs".into(), "2".into())]
        );
    }
}
