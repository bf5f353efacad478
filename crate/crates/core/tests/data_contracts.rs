mod common;

use mff_ftnet::dataio::{
    gen_synthetic, load_csv, recognized_counts, split, standardize, window_batch, windows, write_csv, SeriesTable,
    SplitRule, SyntheticSpec,
};
use mff_ftnet::evaluation::{default_horizons, HOURLY_HORIZONS, QUARTER_HOUR_HORIZONS};
use mff_ftnet::{Error, Tensor};

#[test]
fn ett_header_and_target() {
    let t = load_csv(common::fixture("ETTh1_mini.csv")).unwrap();
    assert_eq!(t.num_rows(), 60);
    assert_eq!(t.feature_names(), ["HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT"]);
    assert_eq!(t.target_index(), 6);
    assert_eq!(t.name(), "ETTh1_mini");
}

#[test]
fn golden_values_load_exactly() {
    let t = load_csv(common::fixture("golden_3row.csv")).unwrap();
    assert_eq!(t.timestamps()[2], "2016-07-01 02:00:00");
    assert_eq!(t.column(6), vec![30.531, 27.787, 27.787]);
    assert_eq!(t.get(0, 0), 5.827);
}

#[test]
fn bad_cell_reports_its_position() {
    match load_csv(common::fixture("bad_cell.csv")) {
        Err(Error::Parse { row, column, message }) => {
            assert_eq!((row, column), (3, 3));
            assert!(message.contains("oops"), "{message}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn non_monotone_timestamps_rejected() {
    assert!(matches!(load_csv(common::fixture("non_monotone.csv")), Err(Error::Validation(_))));
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_csv(common::fixture("absent.csv")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("absent.csv"));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn csv_round_trip_is_exact() {
    let t = gen_synthetic(&SyntheticSpec::two_sinusoids(50, 3, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    write_csv(&t, &path).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back.values(), t.values());
    assert_eq!(back.timestamps(), t.timestamps());
}

#[test]
fn published_split_counts() {
    assert_eq!(recognized_counts("ETTh2"), Some([8640, 2880, 2880]));
    assert_eq!(recognized_counts("ETTm2"), Some([34560, 11520, 11520]));
    assert_eq!(recognized_counts("WTH"), Some([21038, 7013, 7013]));
    assert_eq!(recognized_counts("synthetic"), None);
}

#[test]
fn unknown_tables_split_six_two_two() {
    let t = load_csv(common::fixture("ETTh1_mini.csv")).unwrap();
    let s = split(&t, &SplitRule::Auto).unwrap();
    assert_eq!((s.train(), s.valid(), s.test()), (0..36, 36..48, 48..60));
}

#[test]
fn too_few_rows_for_published_counts() {
    let t = load_csv(common::fixture("ETTh1_mini.csv")).unwrap().with_name("ETTh1");
    assert!(split(&t, &SplitRule::Auto).is_err());
}

#[test]
fn standardization_uses_train_statistics_only() {
    let t = load_csv(common::fixture("ETTh1_mini.csv")).unwrap();
    let s = split(&t, &SplitRule::Auto).unwrap();
    let z = standardize(&t, &s).unwrap();
    assert!(z.is_standardized());
    for f in 0..t.num_features() {
        let col: Vec<f64> = z.column(f)[s.train()].to_vec();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(mean.abs() < 1e-12, "feature {f} mean {mean}");
        assert!((var - 1.0).abs() < 1e-9 || s.constant[f], "feature {f} var {var}");
        let raw = t.get(50, f);
        assert!((z.get(50, f) - (raw - s.mean[f]) / s.std[f]).abs() < 1e-12);
    }
}

#[test]
fn windows_follow_the_stride() {
    let t = load_csv(common::fixture("ETTm1_mini.csv")).unwrap();
    let all: Vec<(usize, Tensor)> = windows(&t, 0..30, 8, 5).unwrap().collect();
    assert_eq!(all.iter().map(|w| w.0).collect::<Vec<_>>(), vec![0, 5, 10, 15, 20]);
    assert_eq!(all[1].1, t.rows(5..13));
    let batch = window_batch(&t, &[3, 9], 8);
    assert_eq!(batch.windows[1], t.rows(9..17));
    assert!(windows(&t, 0..61, 8, 1).is_err());
}

#[test]
fn horizon_grid_follows_sampling_interval() {
    let hourly = load_csv(common::fixture("ETTh1_mini.csv")).unwrap();
    let quarter = load_csv(common::fixture("ETTm1_mini.csv")).unwrap();
    assert_eq!(default_horizons(&hourly), HOURLY_HORIZONS.to_vec());
    assert_eq!(default_horizons(&quarter), QUARTER_HOUR_HORIZONS.to_vec());
}

#[test]
fn synthetic_generation_is_seeded() {
    let spec = SyntheticSpec::two_sinusoids(120, 2, 9);
    let a = gen_synthetic(&spec).unwrap();
    assert_eq!(a, gen_synthetic(&spec).unwrap());
    let other = gen_synthetic(&SyntheticSpec::two_sinusoids(120, 2, 10)).unwrap();
    assert_ne!(a.values(), other.values());
    assert_eq!(a.timestamps()[1], "2016-07-01 01:00:00");
}

#[test]
fn bundled_recipes_reproduce_bundled_csvs() {
    for name in ["synthetic_2sin", "synthetic_shift"] {
        let text = std::fs::read_to_string(common::data_file(&format!("{name}.toml"))).unwrap();
        let spec: SyntheticSpec = toml::from_str(&text).unwrap();
        let generated = gen_synthetic(&spec).unwrap();
        let bundled: SeriesTable = load_csv(common::data_file(&format!("{name}.csv"))).unwrap();
        assert_eq!(generated.values(), bundled.values(), "{name}");
    }
}
