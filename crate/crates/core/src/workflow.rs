//! End-to-end runs built from the other modules: train, evaluate, ablate,
//! perturb and transfer. The command-line front end is a thin layer over
//! these functions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataio::{inject_rows, split, standardize, windows, PerturbationKind, PerturbationSpec, SeriesTable, SplitRule, SplitSpec};
use crate::error::{Error, Result};
use crate::evaluation::{default_horizons, evaluate_horizons, ForecastReport, Mode};
use crate::model::{Ablation, Model};
use crate::tensor::Tensor;
use crate::training::{fine_tune, fit_with, Checkpoint, EpochRecord, History};

/// A standardized table with its split; univariate runs keep only the
/// target column.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub table: SeriesTable,
    pub split: SplitSpec,
}

pub fn prepare(raw: &SeriesTable, cfg: &RunConfig) -> Result<Prepared> {
    let split = split(raw, &SplitRule::Auto)?;
    let table = standardize(raw, &split)?;
    let table = match cfg.data.mode {
        Mode::Multivariate => table,
        Mode::Univariate => table.univariate(),
    };
    Ok(Prepared { table, split })
}

/// Training windows at the configured stride.
pub fn train_windows(p: &Prepared, cfg: &RunConfig) -> Result<Vec<Tensor>> {
    Ok(windows(&p.table, p.split.train(), cfg.data.window, cfg.train.window_stride)?
        .map(|(_, w)| w)
        .collect())
}

/// Fresh model trained for `cfg.train.epochs` epochs.
pub fn train_model(
    p: &Prepared,
    cfg: &RunConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, History)> {
    let mut model = Model::new(&cfg.model_config(p.table.num_features()), cfg.train.seed)?;
    let history = continue_training(&mut model, p, cfg, on_epoch)?;
    Ok((model, history))
}

fn continue_training(
    model: &mut Model,
    p: &Prepared,
    cfg: &RunConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    let train = train_windows(p, cfg)?;
    let objective = cfg.train.objective(cfg.facm.lambda, &cfg.augment);
    fit_with(model, &train, &cfg.train, &objective, on_epoch)
}

/// Probe report over the configured horizons (or the sampling-rate grid).
pub fn evaluate(model: &Model, p: &Prepared, cfg: &RunConfig) -> Result<ForecastReport> {
    let horizons = if cfg.data.horizons.is_empty() {
        default_horizons(&p.table)
    } else {
        cfg.data.horizons.clone()
    };
    if model.config().backbone.input_dim != p.table.num_features() {
        return Err(Error::Config(format!(
            "model expects {} input features but {} mode supplies {}",
            model.config().backbone.input_dim,
            cfg.data.mode,
            p.table.num_features()
        )));
    }
    let mut report = evaluate_horizons(
        model,
        &p.table,
        &p.split,
        cfg.data.window,
        &horizons,
        cfg.data.mode,
        &cfg.data.alphas,
    )?;
    report.config = cfg.flatten();
    Ok(report)
}

pub fn checkpoint(model: &Model, cfg: &RunConfig, epochs: usize) -> Checkpoint {
    Checkpoint::capture(model, cfg.canonical_text(), epochs as u64, cfg.train.seed)
}

/// Rebuilds the model a checkpoint describes.
pub fn load_model(ck: &Checkpoint) -> Result<(Model, RunConfig)> {
    let cfg = RunConfig::from_canonical(&ck.config_text)?;
    let d = ck
        .params
        .iter()
        .find(|(n, _)| n == "backbone.input.weight")
        .map(|(_, t)| t.shape()[0])
        .ok_or_else(|| Error::Validation("checkpoint lacks backbone.input.weight".into()))?;
    let mut model = Model::new(&cfg.model_config(d), cfg.train.seed)?;
    ck.restore(&mut model)?;
    Ok((model, cfg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub flags: Ablation,
    pub final_loss: Option<f64>,
    pub report: ForecastReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub dataset: String,
    pub rows: Vec<AblationRow>,
}

/// Trains and evaluates every variant under the same seed.
pub fn ablate(
    raw: &SeriesTable,
    cfg: &RunConfig,
    variants: &[String],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<(AblationReport, Vec<History>)> {
    if variants.is_empty() {
        return Err(Error::Config("no ablation variants requested".into()));
    }
    let flags = variants.iter().map(|v| Ablation::from_variant(v)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut histories = Vec::new();
    for (name, flags) in variants.iter().zip(flags) {
        let mut c = cfg.clone();
        c.train.ablation = flags.clone();
        let p = prepare(raw, &c)?;
        let (model, history) = train_model(&p, &c, |_| {})?;
        let row = AblationRow {
            variant: name.clone(),
            flags,
            final_loss: history.epochs.last().map(|e| e.mean.total),
            report: evaluate(&model, &p, &c)?,
        };
        on_row(&row);
        rows.push(row);
        histories.push(history);
    }
    Ok((
        AblationReport {
            dataset: raw.name().to_string(),
            rows,
        },
        histories,
    ))
}

impl AblationReport {
    /// Variants as rows, `MSE/MAE` per horizon as columns.
    pub fn table(&self) -> String {
        table_rows(self.rows.iter().map(|r| (r.variant.clone(), &r.report)))
    }
}

fn table_rows<'a>(rows: impl Iterator<Item = (String, &'a ForecastReport)> + Clone) -> String {
    let mut horizons: Vec<usize> = rows
        .clone()
        .flat_map(|(_, r)| r.entries.iter().map(|e| e.horizon))
        .collect();
    horizons.sort_unstable();
    horizons.dedup();
    let mut out = format!("{:<12}", "");
    for h in &horizons {
        let _ = write!(out, " {:>8} {:>8}", format!("{h} MSE"), "MAE");
    }
    out.push('\n');
    for (label, r) in rows {
        let _ = write!(out, "{label:<12}");
        for h in &horizons {
            match r.entries.iter().find(|e| e.horizon == *h) {
                Some(e) => {
                    let _ = write!(out, " {:>8.4} {:>8.4}", e.mse, e.mae);
                }
                None => {
                    let _ = write!(out, " {:>8} {:>8}", "-", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    /// `None` for the unperturbed baseline.
    pub ratio: Option<f64>,
    pub report: ForecastReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub dataset: String,
    pub kind: PerturbationKind,
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessReport {
    pub fn table(&self) -> String {
        table_rows(self.rows.iter().map(|r| {
            let label = r.ratio.map_or("baseline".to_string(), |v| format!("{:.0}%", v * 100.0));
            (label, &r.report)
        }))
    }
}

/// Baseline row plus one row per ratio. The train split is perturbed after
/// standardization; with `robustness.retrain` unset the encoder is trained
/// once on clean data and only the probe sees perturbed inputs.
pub fn robustness(
    raw: &SeriesTable,
    cfg: &RunConfig,
    kind: PerturbationKind,
    ratios: &[f64],
    mut on_row: impl FnMut(&RobustnessRow),
) -> Result<RobustnessReport> {
    let clean = prepare(raw, cfg)?;
    let (clean_model, _) = train_model(&clean, cfg, |_| {})?;
    let mut rows = vec![RobustnessRow {
        ratio: None,
        report: evaluate(&clean_model, &clean, cfg)?,
    }];
    on_row(&rows[0]);
    for &ratio in ratios {
        let spec = PerturbationSpec {
            kind,
            ratio,
            noise_mean: cfg.robustness.noise_mean,
            noise_std: cfg.robustness.noise_std,
            seed: cfg.train.seed,
        };
        let p = Prepared {
            table: inject_rows(&clean.table, clean.split.train(), &spec)?,
            split: clean.split.clone(),
        };
        let report = if cfg.robustness.retrain {
            let (model, _) = train_model(&p, cfg, |_| {})?;
            evaluate(&model, &p, cfg)?
        } else {
            evaluate(&clean_model, &p, cfg)?
        };
        let row = RobustnessRow {
            ratio: Some(ratio),
            report,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(RobustnessReport {
        dataset: raw.name().to_string(),
        kind,
        rows,
    })
}

#[derive(Clone, Debug)]
pub struct TransferOutcome {
    pub pretrained: Model,
    pub finetuned: Model,
    pub pretrain_history: History,
    pub finetune_history: History,
    pub report: ForecastReport,
}

/// Pretrains on `source` for `transfer.pretrain_epochs`, fine-tunes on
/// `target` for `transfer.finetune_epochs`, then evaluates on `target`.
pub fn transfer(source: &SeriesTable, target: &SeriesTable, cfg: &RunConfig) -> Result<TransferOutcome> {
    let mut pre_cfg = cfg.clone();
    pre_cfg.train.epochs = cfg.transfer.pretrain_epochs;
    let src = prepare(source, &pre_cfg)?;
    let (pretrained, pretrain_history) = train_model(&src, &pre_cfg, |_| {})?;
    let (finetuned, finetune_history, report) = finetune_on(&pretrained, target, cfg)?;
    Ok(TransferOutcome {
        pretrained,
        finetuned,
        pretrain_history,
        finetune_history,
        report,
    })
}

/// Fine-tunes an already trained model on `target` and evaluates it there.
pub fn finetune_on(model: &Model, target: &SeriesTable, cfg: &RunConfig) -> Result<(Model, History, ForecastReport)> {
    let mut ft_cfg = cfg.clone();
    ft_cfg.train.epochs = cfg.transfer.finetune_epochs;
    let dst = prepare(target, &ft_cfg)?;
    let train = train_windows(&dst, &ft_cfg)?;
    let objective = ft_cfg.train.objective(ft_cfg.facm.lambda, &ft_cfg.augment);
    let (tuned, history) = fine_tune(model, &train, &ft_cfg.train, &objective, cfg.transfer.reinit_input)?;
    let report = evaluate(&tuned, &dst, &ft_cfg)?;
    Ok((tuned, history, report))
}
