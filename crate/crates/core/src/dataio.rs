//! Dataset loading, splitting, standardization, windowing, synthetic series
//! and perturbation injection.

use std::ops::Range;
use std::path::Path;

use chrono::{Duration, NaiveDateTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// A loaded multivariate series. Rows are time steps, columns features.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTable {
    name: String,
    timestamps: Vec<String>,
    values: Tensor,
    feature_names: Vec<String>,
    target_index: usize,
    standardized: bool,
    mask: Option<Vec<bool>>,
}

impl SeriesTable {
    /// Validating constructor; the target column defaults to the last one.
    pub fn new(
        name: impl Into<String>,
        timestamps: Vec<String>,
        values: Tensor,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let (n, d) = values.dims2()?;
        if timestamps.len() != n {
            return Err(Error::Validation(format!(
                "{} timestamps for {n} rows",
                timestamps.len()
            )));
        }
        if feature_names.len() != d {
            return Err(Error::Validation(format!(
                "{} feature names for {d} columns",
                feature_names.len()
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "timestamps not strictly increasing at row {}: {:?} then {:?}",
                i + 2,
                timestamps[i],
                timestamps[i + 1]
            )));
        }
        Ok(SeriesTable {
            name: name.into(),
            timestamps,
            values,
            feature_names,
            target_index: d - 1,
            standardized: false,
            mask: None,
        })
    }

    /// Dataset identifier, the file stem for loaded tables.
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn timestamps(&self) -> &[String] {
        &self.timestamps
    }

    /// `N×D` values.
    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    pub fn set_target_index(&mut self, index: usize) -> Result<()> {
        if index >= self.num_features() {
            return Err(Error::Parameter(format!(
                "target index {index} out of range for {} features",
                self.num_features()
            )));
        }
        self.target_index = index;
        Ok(())
    }

    pub fn num_rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn num_features(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Cells blanked by a missing-data injection, row-major.
    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values.at2(row, col)
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        self.values.cols(col, col + 1).expect("column in range").into_data()
    }

    /// Rows `range` as a `len×D` tensor.
    pub fn rows(&self, range: Range<usize>) -> Tensor {
        self.values.rows(range.start, range.end).expect("row range in bounds")
    }

    /// Only the target column, which becomes the sole feature.
    pub fn univariate(&self) -> SeriesTable {
        let t = self.target_index;
        SeriesTable {
            name: self.name.clone(),
            timestamps: self.timestamps.clone(),
            values: self.values.cols(t, t + 1).expect("target column"),
            feature_names: vec![self.feature_names[t].clone()],
            target_index: 0,
            standardized: self.standardized,
            mask: self.mask.as_ref().map(|m| {
                m.chunks_exact(self.num_features()).map(|row| row[t]).collect()
            }),
        }
    }

    /// Overwrites one cell; used by tests and perturbation.
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        let d = self.num_features();
        self.values.data_mut()[row * d + col] = v;
    }
}

/// Reads an ETT-style CSV: a header whose first column is `date`, then one
/// numeric column per feature. Timestamps are compared as strings, which
/// orders fixed-width ISO-8601 values correctly.
pub fn load_csv(path: impl AsRef<Path>) -> Result<SeriesTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect::<Vec<_>>();
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("date") {
        return Err(Error::Validation(format!(
            "{}: header must start with `date` followed by feature columns, got {header:?}",
            path.display()
        )));
    }
    let d = header.len() - 1;
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != d + 1 {
            return Err(Error::Parse {
                row: line,
                column: record.len().min(d + 1),
                message: format!("expected {} fields, found {}", d + 1, record.len()),
            });
        }
        timestamps.push(record[0].trim().to_string());
        for (j, cell) in record.iter().enumerate().skip(1) {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: line,
                column: j + 1,
                message: format!("{cell:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    column: j + 1,
                    message: format!("{cell:?} is not finite"),
                });
            }
            values.push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::Validation(format!("{} has no data rows", path.display())));
    }
    let n = timestamps.len();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    SeriesTable::new(name, timestamps, Tensor::new(vec![n, d], values)?, header[1..].to_vec())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            row,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Writes `table` in the same CSV layout [`load_csv`] reads. Values use the
/// shortest representation that parses back to the identical float.
pub fn write_csv(table: &SeriesTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("date");
    for name in &table.feature_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let d = table.num_features();
    for (ts, row) in table.timestamps.iter().zip(table.values.data().chunks_exact(d)) {
        out.push_str(ts);
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// How to cut a table into train/validation/test.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitRule {
    /// Published counts for recognized dataset names, otherwise 6:2:2.
    Auto,
    Ratios([f64; 3]),
    Counts([usize; 3]),
}

/// Published train/validation/test row counts.
pub fn recognized_counts(name: &str) -> Option<[usize; 3]> {
    match name {
        "ETTh1" | "ETTh2" => Some([8640, 2880, 2880]),
        "ETTm1" | "ETTm2" => Some([34560, 11520, 11520]),
        "WTH" => Some([21038, 7013, 7013]),
        _ => None,
    }
}

/// Split boundaries plus train-only normalization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_end: usize,
    pub valid_end: usize,
    pub test_end: usize,
    pub mean: Vec<f64>,
    /// Population standard deviation, 1 for constant features.
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

impl SplitSpec {
    pub fn train(&self) -> Range<usize> {
        0..self.train_end
    }

    pub fn valid(&self) -> Range<usize> {
        self.train_end..self.valid_end
    }

    pub fn test(&self) -> Range<usize> {
        self.valid_end..self.test_end
    }
}

pub fn split(table: &SeriesTable, rule: &SplitRule) -> Result<SplitSpec> {
    let n = table.num_rows();
    let counts = match rule {
        SplitRule::Auto => match recognized_counts(table.name()) {
            Some(c) => c,
            None => ratio_counts(n, [0.6, 0.2, 0.2])?,
        },
        SplitRule::Ratios(r) => ratio_counts(n, *r)?,
        SplitRule::Counts(c) => *c,
    };
    let total: usize = counts.iter().sum();
    if total > n {
        return Err(Error::Parameter(format!(
            "split counts {counts:?} need {total} rows but the table has {n}"
        )));
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::Parameter(format!(
            "every split needs at least one row, got {counts:?} from {n} rows"
        )));
    }
    let train_end = counts[0];
    let (mean, std, constant) = column_stats(table, 0..train_end);
    Ok(SplitSpec {
        train_end,
        valid_end: train_end + counts[1],
        test_end: total,
        mean,
        std,
        constant,
    })
}

fn ratio_counts(n: usize, r: [f64; 3]) -> Result<[usize; 3]> {
    if r.iter().any(|v| !(0.0..=1.0).contains(v)) || r.iter().sum::<f64>() > 1.0 + 1e-12 {
        return Err(Error::Parameter(format!("invalid split ratios {r:?}")));
    }
    Ok(r.map(|v| (n as f64 * v + 1e-9).floor() as usize))
}

fn column_stats(table: &SeriesTable, rows: Range<usize>) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let d = table.num_features();
    let len = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows.clone() {
        for (m, c) in mean.iter_mut().zip(0..d) {
            *m += table.get(r, c);
        }
    }
    mean.iter_mut().for_each(|m| *m /= len);
    let mut var = vec![0.0; d];
    for r in rows {
        for c in 0..d {
            let z = table.get(r, c) - mean[c];
            var[c] += z * z;
        }
    }
    let mut constant = vec![false; d];
    let std = var
        .iter()
        .zip(&mut constant)
        .map(|(v, flag)| {
            let s = (v / len).sqrt();
            if s > 1e-12 {
                s
            } else {
                *flag = true;
                1.0
            }
        })
        .collect();
    (mean, std, constant)
}

/// `(x − mean)/std` per feature with the split's train statistics.
pub fn standardize(table: &SeriesTable, spec: &SplitSpec) -> Result<SeriesTable> {
    let d = table.num_features();
    if spec.mean.len() != d || spec.std.len() != d {
        return Err(Error::Dimension(format!(
            "split statistics cover {} features, table has {d}",
            spec.mean.len()
        )));
    }
    let mut out = table.clone();
    for row in out.values.data_mut().chunks_exact_mut(d) {
        for ((v, m), s) in row.iter_mut().zip(&spec.mean).zip(&spec.std) {
            *v = (*v - m) / s;
        }
    }
    out.standardized = true;
    Ok(out)
}

/// Start rows of every length-`t` window inside `range` at the given stride.
pub fn window_starts(range: Range<usize>, t: usize, stride: usize) -> Result<Vec<usize>> {
    if t == 0 || stride == 0 {
        return Err(Error::Parameter(format!(
            "window length and stride must be positive, got T={t}, stride={stride}"
        )));
    }
    if t > range.len() {
        return Err(Error::Parameter(format!(
            "window length {t} exceeds the {}-row range {range:?}",
            range.len()
        )));
    }
    Ok((range.start..=range.end - t).step_by(stride).collect())
}

/// Windows of one split, in start order.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    /// Each `T×D`.
    pub windows: Vec<Tensor>,
    pub origin_indices: Vec<usize>,
}

/// Lazily cuts windows out of `table`; items are `(start row, T×D window)`.
pub fn windows(
    table: &SeriesTable,
    range: Range<usize>,
    t: usize,
    stride: usize,
) -> Result<impl Iterator<Item = (usize, Tensor)> + '_> {
    if range.end > table.num_rows() {
        return Err(Error::Parameter(format!(
            "range {range:?} exceeds the table's {} rows",
            table.num_rows()
        )));
    }
    let starts = window_starts(range, t, stride)?;
    Ok(starts.into_iter().map(move |s| (s, table.rows(s..s + t))))
}

/// Collects the windows starting at `starts`.
pub fn window_batch(table: &SeriesTable, starts: &[usize], t: usize) -> WindowBatch {
    WindowBatch {
        windows: starts.iter().map(|&s| table.rows(s..s + t)).collect(),
        origin_indices: starts.to_vec(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub period: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticFeature {
    pub components: Vec<Sinusoid>,
    pub slope: f64,
    pub noise_std: f64,
}

/// Recipe for a generated table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub features: Vec<SyntheticFeature>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start: String,
    #[serde(default = "default_step")]
    pub step_minutes: i64,
    #[serde(default = "default_synth_name")]
    pub name: String,
}

fn default_start() -> String {
    "2016-07-01 00:00:00".into()
}

fn default_step() -> i64 {
    60
}

fn default_synth_name() -> String {
    "synthetic".into()
}

impl SyntheticSpec {
    /// Every feature carries two sinusoids (periods 24 and 60 steps) with
    /// feature-dependent phases and amplitudes, plus light noise.
    pub fn two_sinusoids(rows: usize, features: usize, seed: u64) -> Self {
        let features = (0..features)
            .map(|d| {
                let shift = d as f64;
                SyntheticFeature {
                    components: vec![
                        Sinusoid {
                            period: 24.0,
                            amplitude: 1.0 + 0.25 * shift,
                            phase: 0.7 * shift,
                        },
                        Sinusoid {
                            period: 60.0,
                            amplitude: 0.6,
                            phase: 1.3 * shift,
                        },
                    ],
                    slope: 0.0,
                    noise_std: 0.1,
                }
            })
            .collect();
        SyntheticSpec {
            rows,
            features,
            seed,
            start: default_start(),
            step_minutes: default_step(),
            name: "synthetic_2sin".into(),
        }
    }
}

/// `x_d[t] = Σ a·sin(2πt/p + φ) + slope·t + ε`, `ε ~ Normal(0, noise_std²)`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SeriesTable> {
    let (n, d) = (spec.rows, spec.features.len());
    if n == 0 || d == 0 {
        return Err(Error::Parameter("synthetic table needs rows and features".into()));
    }
    for (j, f) in spec.features.iter().enumerate() {
        if let Some(c) = f.components.iter().find(|c| !(c.period > 0.0)) {
            return Err(Error::Parameter(format!(
                "feature {j}: period must be positive, got {}",
                c.period
            )));
        }
        if !(f.noise_std >= 0.0) {
            return Err(Error::Parameter(format!(
                "feature {j}: noise_std must be non-negative, got {}",
                f.noise_std
            )));
        }
    }
    let start = NaiveDateTime::parse_from_str(&spec.start, TIMESTAMP_FORMAT)
        .map_err(|e| Error::Parameter(format!("start {:?}: {e}", spec.start)))?;
    if spec.step_minutes <= 0 {
        return Err(Error::Parameter("step_minutes must be positive".into()));
    }
    let step = Duration::minutes(spec.step_minutes);
    let timestamps = (0..n)
        .map(|i| (start + step * i as i32).format(TIMESTAMP_FORMAT).to_string())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = vec![0.0; n * d];
    for (j, f) in spec.features.iter().enumerate() {
        let noise = Normal::new(0.0, f.noise_std).expect("validated std");
        for t in 0..n {
            let tf = t as f64;
            let mut v: f64 = f
                .components
                .iter()
                .map(|c| c.amplitude * (std::f64::consts::TAU * tf / c.period + c.phase).sin())
                .sum();
            v += f.slope * tf;
            if f.noise_std > 0.0 {
                v += noise.sample(&mut rng);
            }
            values[t * d + j] = v;
        }
    }
    let names = (0..d).map(|j| format!("x{j}")).collect();
    SeriesTable::new(spec.name.clone(), timestamps, Tensor::new(vec![n, d], values)?, names)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    Noise,
    Missing,
}

impl std::str::FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(PerturbationKind::Noise),
            "missing" => Ok(PerturbationKind::Missing),
            _ => Err(Error::Config(format!(
                "perturbation kind must be `noise` or `missing`, got {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub ratio: f64,
    #[serde(default = "default_noise")]
    pub noise_mean: f64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_noise() -> f64 {
    10.0
}

impl PerturbationSpec {
    /// Noise defaults to mean 10, standard deviation 10.
    pub fn new(kind: PerturbationKind, ratio: f64, seed: u64) -> Self {
        PerturbationSpec {
            kind,
            ratio,
            noise_mean: default_noise(),
            noise_std: default_noise(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::Parameter(format!(
                "perturbation ratio must lie in [0, 1], got {}",
                self.ratio
            )));
        }
        if !(self.noise_std >= 0.0) || !self.noise_mean.is_finite() {
            return Err(Error::Parameter(format!(
                "invalid noise parameters mean {} std {}",
                self.noise_mean, self.noise_std
            )));
        }
        Ok(())
    }

    /// Cells touched out of `cells`: `⌈ratio·cells⌉`.
    pub fn cell_count(&self, cells: usize) -> usize {
        let x = self.ratio * cells as f64;
        ((x - 1e-9 * x.max(1.0)).ceil().max(0.0) as usize).min(cells)
    }
}

/// Perturbs the whole table.
pub fn inject(table: &SeriesTable, spec: &PerturbationSpec) -> Result<SeriesTable> {
    inject_rows(table, 0..table.num_rows(), spec)
}

/// Perturbs `⌈ratio·len·D⌉` cells of `rows`, drawn uniformly without
/// replacement. Noise adds `Normal(mean, std²)` draws; missing zeroes the
/// cells and marks them in the table's mask.
pub fn inject_rows(table: &SeriesTable, rows: Range<usize>, spec: &PerturbationSpec) -> Result<SeriesTable> {
    spec.validate()?;
    if rows.end > table.num_rows() || rows.is_empty() {
        return Err(Error::Parameter(format!(
            "row range {rows:?} invalid for a {}-row table",
            table.num_rows()
        )));
    }
    let d = table.num_features();
    let cells = rows.len() * d;
    let count = spec.cell_count(cells);
    let mut out = table.clone();
    if count == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut picked = rand::seq::index::sample(&mut rng, cells, count).into_vec();
    picked.sort_unstable();
    let offset = rows.start * d;
    match spec.kind {
        PerturbationKind::Noise => {
            let noise = Normal::new(spec.noise_mean, spec.noise_std).expect("validated std");
            let data = out.values.data_mut();
            for &i in &picked {
                data[offset + i] += noise.sample(&mut rng);
            }
        }
        PerturbationKind::Missing => {
            let mut mask = out.mask.take().unwrap_or_else(|| vec![false; table.num_rows() * d]);
            let data = out.values.data_mut();
            for &i in &picked {
                data[offset + i] = 0.0;
                mask[offset + i] = true;
            }
            out.mask = Some(mask);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(n: usize, d: usize) -> SeriesTable {
        let ts = (0..n).map(|i| format!("2020-01-01 {:02}:00:00", i % 24)).collect::<Vec<_>>();
        let ts = if n <= 24 { ts } else { (0..n).map(|i| format!("{i:08}")).collect() };
        SeriesTable::new(
            "t",
            ts,
            Tensor::from_fn(vec![n, d], |i| (i as f64 * 0.77).sin() * 3.0 + i as f64 * 0.01 + 0.5),
            (0..d).map(|j| format!("c{j}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ratio_split_of_ten() {
        let s = split(&table(10, 1), &SplitRule::Auto).unwrap();
        assert_eq!((s.train().len(), s.valid().len(), s.test().len()), (6, 2, 2));
    }

    #[test]
    fn counts_beyond_rows_rejected() {
        let err = split(&table(10, 1), &SplitRule::Counts([8, 2, 2])).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn standardized_train_moments() {
        let t = table(20, 3);
        let s = split(&t, &SplitRule::Auto).unwrap();
        let z = standardize(&t, &s).unwrap();
        for c in 0..3 {
            let col: Vec<f64> = z.column(c)[s.train()].to_vec();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-9 && (v.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_column_becomes_zero() {
        let mut t = table(10, 2);
        for r in 0..10 {
            t.set(r, 1, 4.5);
        }
        let s = split(&t, &SplitRule::Auto).unwrap();
        assert!(s.constant[1] && s.std[1] == 1.0);
        assert!(standardize(&t, &s).unwrap().column(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_starts(0..10, 5, 1).unwrap().len(), 6);
        assert_eq!(window_starts(0..10, 5, 5).unwrap(), vec![0, 5]);
        assert!(window_starts(0..4, 5, 1).is_err());
        let t = table(12, 2);
        let w: Vec<_> = windows(&t, 3..9, 4, 1).unwrap().collect();
        assert_eq!(w.len(), 3);
        assert_eq!(w[2].1, t.rows(5..9));
    }

    #[test]
    fn exact_injection_count() {
        let t = table(100, 1);
        for kind in [PerturbationKind::Noise, PerturbationKind::Missing] {
            let out = inject(&t, &PerturbationSpec::new(kind, 0.4, 3)).unwrap();
            let changed = t.values().data().iter().zip(out.values().data()).filter(|(a, b)| a != b).count();
            assert_eq!(changed, 40);
        }
        assert_eq!(inject(&t, &PerturbationSpec::new(PerturbationKind::Noise, 0.0, 3)).unwrap(), t);
    }

    #[test]
    fn zero_component_synthetic_is_zero() {
        let spec = SyntheticSpec {
            rows: 5,
            features: vec![SyntheticFeature::default(); 2],
            seed: 0,
            start: default_start(),
            step_minutes: 15,
            name: "z".into(),
        };
        let t = gen_synthetic(&spec).unwrap();
        assert!(t.values().data().iter().all(|v| *v == 0.0));
        assert_eq!(t.timestamps()[1], "2016-07-01 00:15:00");
    }

    #[test]
    fn non_positive_period_rejected() {
        let mut spec = SyntheticSpec::two_sinusoids(10, 1, 0);
        spec.features[0].components[0].period = 0.0;
        assert!(matches!(gen_synthetic(&spec), Err(Error::Parameter(_))));
    }
}
