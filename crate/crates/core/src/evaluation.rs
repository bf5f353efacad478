//! Frozen-representation forecasting probe: final-step features, closed-form
//! ridge regression, MSE/MAE over a horizon grid, and the report format.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataio::{SeriesTable, SplitSpec};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

/// Default ridge penalties tried during model selection.
pub const ALPHA_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];
pub const HOURLY_HORIZONS: [usize; 5] = [24, 48, 168, 336, 720];
pub const QUARTER_HOUR_HORIZONS: [usize; 5] = [24, 48, 96, 288, 672];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Multivariate,
    Univariate,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multivariate" => Ok(Mode::Multivariate),
            "univariate" => Ok(Mode::Univariate),
            _ => Err(Error::Config(format!(
                "mode must be `multivariate` or `univariate`, got {s:?}"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Multivariate => "multivariate",
            Mode::Univariate => "univariate",
        })
    }
}

/// Horizon grid matching the sampling interval of `table`.
pub fn default_horizons(table: &SeriesTable) -> Vec<usize> {
    if table.name().starts_with("ETTm") {
        return QUARTER_HOUR_HORIZONS.to_vec();
    }
    let ts = table.timestamps();
    let fmt = "%Y-%m-%d %H:%M:%S";
    if let [a, b, ..] = ts {
        if let (Ok(a), Ok(b)) = (
            chrono::NaiveDateTime::parse_from_str(a, fmt),
            chrono::NaiveDateTime::parse_from_str(b, fmt),
        ) {
            if (b - a).num_minutes() == 15 {
                return QUARTER_HOUR_HORIZONS.to_vec();
            }
        }
    }
    HOURLY_HORIZONS.to_vec()
}

/// Probe inputs and targets. Target reads are counted so tests can prove
/// which splits a procedure looked at.
#[derive(Clone, Debug)]
pub struct Features {
    x: Tensor,
    y: Tensor,
    target_reads: Cell<usize>,
}

impl Features {
    pub fn new(x: Tensor, y: Tensor) -> Result<Self> {
        let (m, _) = x.dims2()?;
        let (my, _) = y.dims2()?;
        if m != my {
            return Err(Error::Dimension(format!("{m} feature rows but {my} target rows")));
        }
        Ok(Features {
            x,
            y,
            target_reads: Cell::new(0),
        })
    }

    /// `M×K` inputs.
    pub fn inputs(&self) -> &Tensor {
        &self.x
    }

    /// `M×(P·D_out)` targets.
    pub fn targets(&self) -> &Tensor {
        self.target_reads.set(self.target_reads.get() + 1);
        &self.y
    }

    pub fn target_reads(&self) -> usize {
        self.target_reads.get()
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Final-timestep representations of every length-`t` window in `range`
/// whose end leaves room for `p` future steps. Inputs are restricted to the
/// target column in univariate mode.
pub fn encode_positions(
    model: &Model,
    table: &SeriesTable,
    range: Range<usize>,
    t: usize,
    p: usize,
    mode: Mode,
) -> Result<Tensor> {
    let count = position_count(range.clone(), t, p, table.num_rows())?;
    let k = model.width();
    let source = match mode {
        Mode::Multivariate => table.clone(),
        Mode::Univariate => table.univariate(),
    };
    let mut data = Vec::with_capacity(count * k);
    for s in range.start..range.start + count {
        let r = model.encode(&source.rows(s..s + t))?;
        data.extend_from_slice(&r.data()[(t - 1) * k..]);
    }
    Tensor::new(vec![count, k], data)
}

fn position_count(range: Range<usize>, t: usize, p: usize, rows: usize) -> Result<usize> {
    if range.end > rows {
        return Err(Error::Parameter(format!("range {range:?} exceeds {rows} rows")));
    }
    if t == 0 || p == 0 || range.len() < t + p {
        return Err(Error::Config(format!(
            "a {}-row split cannot hold a {t}-step window plus a {p}-step horizon",
            range.len()
        )));
    }
    Ok(range.len() - t - p + 1)
}

/// Next-`p`-step targets for the same positions as [`encode_positions`],
/// flattened step-major.
pub fn horizon_targets(table: &SeriesTable, range: Range<usize>, t: usize, p: usize, mode: Mode) -> Result<Tensor> {
    let count = position_count(range.clone(), t, p, table.num_rows())?;
    let d = table.num_features();
    let target = table.target_index();
    let width = match mode {
        Mode::Multivariate => d,
        Mode::Univariate => 1,
    };
    let mut data = Vec::with_capacity(count * p * width);
    for s in range.start..range.start + count {
        for step in s + t..s + t + p {
            match mode {
                Mode::Multivariate => (0..d).for_each(|c| data.push(table.get(step, c))),
                Mode::Univariate => data.push(table.get(step, target)),
            }
        }
    }
    Tensor::new(vec![count, p * width], data)
}

/// Probe features for one split: `M = len − T − P + 1` rows.
pub fn extract_features(
    model: &Model,
    table: &SeriesTable,
    range: Range<usize>,
    t: usize,
    p: usize,
    mode: Mode,
) -> Result<Features> {
    let x = encode_positions(model, table, range.clone(), t, p, mode)?;
    let y = horizon_targets(table, range, t, p, mode)?;
    Features::new(x, y)
}

/// Linear map from features to flattened forecasts.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeProbe {
    /// `K×Q`.
    pub weights: Tensor,
    pub intercept: Vec<f64>,
    pub alpha: f64,
}

impl RidgeProbe {
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = crate::tensor::matmul(x, &self.weights)?;
        let q = self.intercept.len();
        for row in out.data_mut().chunks_exact_mut(q) {
            row.iter_mut().zip(&self.intercept).for_each(|(v, b)| *v += b);
        }
        Ok(out)
    }
}

fn to_matrix(t: &Tensor) -> DMatrix<f64> {
    let (r, c) = t.dims2().expect("rank-2 tensor");
    DMatrix::from_row_slice(r, c, t.data())
}

fn from_matrix(m: &DMatrix<f64>) -> Tensor {
    let (r, c) = m.shape();
    Tensor::from_fn(vec![r, c], |i| m[(i / c, i % c)])
}

/// Ridge regression with an unpenalized intercept: centers both sides,
/// then solves `(XcᵀXc + αI)W = XcᵀYc`.
pub fn ridge_solve(x: &Tensor, y: &Tensor, alpha: f64) -> Result<RidgeProbe> {
    if !(alpha > 0.0) {
        return Err(Error::Parameter(format!("ridge alpha must be positive, got {alpha}")));
    }
    let (x, y) = (to_matrix(x), to_matrix(y));
    if x.nrows() < 2 || x.nrows() != y.nrows() {
        return Err(Error::Config(format!(
            "ridge needs at least two matching rows, got {} inputs and {} targets",
            x.nrows(),
            y.nrows()
        )));
    }
    let x_mean = x.row_mean();
    let y_mean = y.row_mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let mut yc = y.clone();
    for mut row in yc.row_iter_mut() {
        row -= &y_mean;
    }
    let xt = xc.transpose();
    let mut gram = &xt * &xc;
    for i in 0..gram.nrows() {
        gram[(i, i)] += alpha;
    }
    let rhs = &xt * &yc;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numeric("ridge system is not positive definite".into()))?;
    let w = chol.solve(&rhs);
    let intercept: DVector<f64> = (&y_mean - &x_mean * &w).transpose();
    Ok(RidgeProbe {
        weights: from_matrix(&w),
        intercept: intercept.iter().copied().collect(),
        alpha,
    })
}

/// Fits one probe per `alpha` on `train` and keeps the one with the lowest
/// validation MSE (earliest on ties).
pub fn fit_ridge(train: &Features, valid: &Features, alphas: &[f64]) -> Result<RidgeProbe> {
    if alphas.is_empty() {
        return Err(Error::Config("ridge alpha grid is empty".into()));
    }
    let (x, y) = (train.inputs(), train.targets());
    let valid_y = valid.targets();
    let mut best: Option<(f64, RidgeProbe)> = None;
    for &alpha in alphas {
        let probe = ridge_solve(x, y, alpha)?;
        let mse = metrics(&probe.predict(valid.inputs())?, valid_y)?.mse;
        if best.as_ref().is_none_or(|(b, _)| mse < *b) {
            best = Some((mse, probe));
        }
    }
    Ok(best.expect("grid is non-empty").1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

/// Mean squared and mean absolute error over every entry.
pub fn metrics(pred: &Tensor, target: &Tensor) -> Result<Metrics> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "predictions {:?} vs targets {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, t) in pred.data().iter().zip(target.data()) {
        let e = p - t;
        se += e * e;
        ae += e.abs();
    }
    Ok(Metrics { mse: se / n, mae: ae / n })
}

pub fn score(probe: &RidgeProbe, features: &Features) -> Result<Metrics> {
    metrics(&probe.predict(features.inputs())?, features.targets())
}

/// Error of predicting every target with its train-split column mean.
pub fn mean_baseline(train: &Features, test: &Features) -> Result<Metrics> {
    let (m, q) = train.targets().dims2()?;
    let mut means = vec![0.0; q];
    for row in train.targets().data().chunks_exact(q) {
        means.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    means.iter_mut().for_each(|a| *a /= m as f64);
    let rows = test.len();
    let pred = Tensor::from_fn(vec![rows, q], |i| means[i % q]);
    metrics(&pred, test.targets())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonResult {
    pub horizon: usize,
    pub mse: f64,
    pub mae: f64,
    pub alpha: f64,
    /// Train-mean predictor on the same test targets.
    pub baseline_mse: f64,
    pub baseline_mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub dataset: String,
    pub mode: Mode,
    /// Metrics are computed on train-standardized values.
    pub standardized: bool,
    pub window: usize,
    pub entries: Vec<HorizonResult>,
    pub warnings: Vec<String>,
    pub average_mse: Option<f64>,
    pub average_mae: Option<f64>,
    /// Fully resolved run configuration, flattened to dotted keys.
    pub config: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl ForecastReport {
    pub fn new(dataset: impl Into<String>, mode: Mode, window: usize, standardized: bool) -> Self {
        ForecastReport {
            dataset: dataset.into(),
            mode,
            standardized,
            window,
            entries: Vec::new(),
            warnings: Vec::new(),
            average_mse: None,
            average_mae: None,
            config: BTreeMap::new(),
            timestamp: None,
        }
    }

    /// Recomputes the averages from the entries.
    pub fn finalize(&mut self) {
        let n = self.entries.len() as f64;
        if self.entries.is_empty() {
            self.average_mse = None;
            self.average_mae = None;
        } else {
            self.average_mse = Some(self.entries.iter().map(|e| e.mse).sum::<f64>() / n);
            self.average_mae = Some(self.entries.iter().map(|e| e.mae).sum::<f64>() / n);
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            row: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Aligned console table, one row per horizon.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:<12} {:>7} {:>9} {:>9} {:>9}",
            "dataset", "mode", "horizon", "MSE", "MAE", "alpha"
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<16} {:<12} {:>7} {:>9.4} {:>9.4} {:>9}",
                self.dataset, self.mode.to_string(), e.horizon, e.mse, e.mae, e.alpha
            );
        }
        if let (Some(mse), Some(mae)) = (self.average_mse, self.average_mae) {
            let _ = writeln!(
                out,
                "{:<16} {:<12} {:>7} {:>9.4} {:>9.4}",
                self.dataset, self.mode.to_string(), "avg", mse, mae
            );
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

/// Fits and scores a probe for every horizon: train on the train split,
/// pick alpha on validation, report on test. `table` must already be
/// standardized. Horizons that do not fit a split become warnings.
pub fn evaluate_horizons(
    model: &Model,
    table: &SeriesTable,
    split: &SplitSpec,
    window: usize,
    horizons: &[usize],
    mode: Mode,
    alphas: &[f64],
) -> Result<ForecastReport> {
    let mut report = ForecastReport::new(table.name(), mode, window, table.is_standardized());
    // representations do not depend on the horizon, so encode each split
    // once for the shortest horizon and take prefixes
    let fits = |p: usize| {
        [split.train(), split.valid(), split.test()]
            .iter()
            .zip([2, 1, 1])
            .all(|(r, need)| r.len() >= window + p + need - 1)
    };
    let usable: Vec<usize> = horizons.iter().copied().filter(|&p| p > 0 && fits(p)).collect();
    for &p in horizons.iter().filter(|p| !usable.contains(p)) {
        report.warnings.push(format!(
            "horizon {p} skipped: splits of {}/{}/{} rows cannot hold a {window}-step window plus {p} steps",
            split.train().len(),
            split.valid().len(),
            split.test().len()
        ));
    }
    if let Some(&min_p) = usable.iter().min() {
        let enc = |r: Range<usize>| encode_positions(model, table, r, window, min_p, mode);
        let (etr, eva, ete) = (enc(split.train())?, enc(split.valid())?, enc(split.test())?);
        for &p in &usable {
            let build = |e: &Tensor, r: Range<usize>| -> Result<Features> {
                let y = horizon_targets(table, r, window, p, mode)?;
                let m = y.shape()[0];
                Features::new(e.rows(0, m)?, y)
            };
            let train = build(&etr, split.train())?;
            let valid = build(&eva, split.valid())?;
            let test = build(&ete, split.test())?;
            let probe = fit_ridge(&train, &valid, alphas)?;
            let m = score(&probe, &test)?;
            let b = mean_baseline(&train, &test)?;
            report.entries.push(HorizonResult {
                horizon: p,
                mse: m.mse,
                mae: m.mae,
                alpha: probe.alpha,
                baseline_mse: b.mse,
                baseline_mae: b.mae,
            });
        }
    }
    report.finalize();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_metrics() {
        let pred = Tensor::zeros(vec![2, 2]);
        let target = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(metrics(&pred, &target).unwrap(), Metrics { mse: 7.5, mae: 2.5 });
        let off = Tensor::from_fn(vec![2, 2], |i| target.data()[i] + 1.0);
        assert_eq!(metrics(&off, &target).unwrap(), Metrics { mse: 1.0, mae: 1.0 });
        assert_eq!(metrics(&target, &target).unwrap(), Metrics { mse: 0.0, mae: 0.0 });
    }

    #[test]
    fn huge_alpha_predicts_column_means() {
        let x = Tensor::from_fn(vec![6, 2], |i| (i as f64 * 1.3).cos());
        let y = Tensor::from_fn(vec![6, 1], |i| i as f64);
        let probe = ridge_solve(&x, &y, 1e12).unwrap();
        assert!(probe.weights.data().iter().all(|w| w.abs() < 1e-9));
        assert!((probe.intercept[0] - 2.5).abs() < 1e-9);
    }

    #[test]
    fn non_positive_alpha_rejected() {
        let x = Tensor::zeros(vec![3, 1]);
        assert!(ridge_solve(&x, &x, 0.0).is_err());
    }
}
