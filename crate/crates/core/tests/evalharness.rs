use flowcast::datastore::{write_wide_csv, SpeedField, SplitPolicy};
use flowcast::deepnet::NetConfig;
use flowcast::evalharness::*;
use flowcast::filters::FilterSpec;
use flowcast::synthgen::{gen_dataset, CorridorParams, DayMix, STEPS_PER_DAY};
use proptest::prelude::*;

fn corridor(days: usize, seed: u64) -> SpeedField {
    let p = CorridorParams {
        n_sensors: 6,
        bottleneck: 5,
        queue_extent: (2, 4),
        seed,
        ..Default::default()
    };
    gen_dataset(&p, days, &DayMix::default()).unwrap()
}

fn spec(filter: FilterSpec, selector: Selector, model: ModelSpec) -> PipelineSpec {
    PipelineSpec {
        label: None,
        filter,
        selector,
        model,
        horizon: 8,
        lags: 6,
        target: "S03".into(),
    }
}

fn small_net() -> ModelSpec {
    ModelSpec::Dl {
        config: NetConfig {
            hidden_widths: vec![6],
            epochs: 5,
            seed: 3,
            ..Default::default()
        },
    }
}

fn opts() -> EvalOptions {
    EvalOptions {
        workers: 1,
        ..Default::default()
    }
}

#[test]
fn rows_are_accounted_for() {
    let f = corridor(6, 1);
    let m8 = FilterSpec::Median { window: 8 };
    for s in [
        spec(FilterSpec::None, Selector::None, ModelSpec::Naive),
        spec(m8, Selector::Lasso { lambda: None }, ModelSpec::Var { lambda: None }),
        spec(m8, Selector::Lasso { lambda: None }, small_net()),
    ] {
        let r = run_pipeline(&s, &f, &SplitPolicy::FirstHalfDays, &opts()).unwrap();
        let per_day = STEPS_PER_DAY - (6 - 1) - 8;
        assert_eq!(r.row.n_train, 3 * per_day, "{}", r.row.label);
        assert_eq!(r.row.n_test, 3 * per_day);
        assert_eq!(r.train.yhat.len(), r.row.n_train);
        assert_eq!(r.test.yhat.len(), r.row.n_test);
        // train origins lie in the first three days, test origins in the rest
        assert!(r.train.origins.iter().all(|&o| o < 3 * STEPS_PER_DAY));
        assert!(r.test.origins.iter().all(|&o| o >= 3 * STEPS_PER_DAY));
        // targets are the measured speeds whatever the filter
        let raw = f.series(r.target_sensor);
        for p in [&r.train, &r.test] {
            for (&o, &y) in p.origins.iter().zip(&p.y) {
                assert_eq!(y, raw[o + 8]);
            }
        }
    }
}

/// Parse `timestamp,y,yhat,split` rows back into per-split vectors.
fn read_back(text: &str) -> [(Vec<f64>, Vec<f64>); 2] {
    let mut out = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let side = usize::from(cells[3] == "test");
        out[side].0.push(cells[1].parse().unwrap());
        out[side].1.push(cells[2].parse().unwrap());
    }
    out
}

#[test]
fn reported_mse_matches_persisted_predictions() {
    let f = corridor(4, 2);
    let s = spec(FilterSpec::Median { window: 8 }, Selector::Lasso { lambda: None }, ModelSpec::Var { lambda: None });
    let r = run_pipeline(&s, &f, &SplitPolicy::FirstHalfDays, &opts()).unwrap();
    let mut buf = Vec::new();
    write_predictions(&f, &r, &mut buf).unwrap();
    let [(ytr, htr), (yte, hte)] = read_back(&String::from_utf8(buf).unwrap());
    assert_eq!(ytr.len(), r.row.n_train);
    assert_eq!(mse(&ytr, &htr).unwrap(), r.row.is_mse);
    assert_eq!(mse(&yte, &hte).unwrap(), r.row.os_mse);
    assert_eq!(r2(&yte, &hte).unwrap(), r.row.os_r2);
}

#[test]
fn naive_error_on_a_step() {
    use chrono::{Duration, NaiveDate};
    let n = 60;
    let t0 = 25;
    let h = 4;
    let series: Vec<f64> = (0..n).map(|t| if t < t0 { 60.0 } else { 20.0 }).collect();
    let start = NaiveDate::from_ymd_opt(2013, 5, 6).unwrap().and_hms_opt(6, 0, 0).unwrap();
    let ts = (0..n).map(|i| start + Duration::minutes(5 * i as i64)).collect();
    let f = SpeedField::new(vec!["A".into()], vec![0.0], 5, ts, series.clone(), vec![false; n]).unwrap();
    let fc = naive_forecast(&f, h).unwrap();
    for c in 0..n {
        if c < h {
            assert!(fc[0][c].is_nan());
            continue;
        }
        let err = (series[c] - fc[0][c]).abs();
        // wrong for exactly h steps (h·5 minutes) starting at the step
        let expected = if (t0..t0 + h).contains(&c) { 40.0 } else { 0.0 };
        assert_eq!(err, expected, "column {c}");
    }
    assert!(naive_forecast(&f, 0).is_err());
    let flat = SpeedField::new(vec!["A".into()], vec![0.0], 5, f.timestamps().to_vec(), vec![55.0; n], vec![false; n]).unwrap();
    let fc = naive_forecast(&flat, 3).unwrap();
    assert!(fc[0][3..].iter().all(|&v| v == 55.0));
}

#[test]
fn heatmap_with_measurements_is_the_wide_export() {
    let p = CorridorParams { seed: 3, ..Default::default() };
    let f = gen_dataset(&p, 1, &DayMix::default()).unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    export_heatmap(&f, f.series(10), 10, &mut a).unwrap();
    write_wide_csv(&f, &mut b).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), f.n_times() + 1);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 22);
    assert!(export_heatmap(&f, &[1.0; 5], 10, &mut Vec::new()).is_err());
}

#[test]
fn heatmap_replaces_only_the_target_column() {
    let f = corridor(2, 4);
    let s = spec(FilterSpec::None, Selector::None, ModelSpec::Naive);
    let r = run_pipeline(&s, &f, &SplitPolicy::FirstHalfDays, &opts()).unwrap();
    let pred = r.aligned(f.n_times());
    let mut buf = Vec::new();
    export_heatmap(&f, &pred, r.target_sensor, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    for (c, line) in text.lines().skip(1).enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[1].parse::<f64>().unwrap(), f.series(0)[c]);
        let cell = cells[1 + r.target_sensor];
        if pred[c].is_nan() {
            assert!(cell.is_empty());
        } else {
            assert_eq!(cell.parse::<f64>().unwrap(), pred[c]);
        }
    }
}

#[test]
fn naive_rows_do_not_depend_on_run_settings() {
    let f = corridor(4, 5);
    let s = spec(FilterSpec::None, Selector::None, ModelSpec::Naive);
    let a = run_pipeline(&s, &f, &SplitPolicy::FirstHalfDays, &opts()).unwrap();
    let other = EvalOptions {
        valid_fraction: 0.5,
        lambda_grid: 5,
        lambda_min_ratio: 0.1,
        workers: 2,
    };
    let b = run_pipeline(&s, &f, &SplitPolicy::FirstHalfDays, &other).unwrap();
    assert_eq!(a.row, b.row);
    // persistence: the forecast is the reading h steps earlier
    let raw = f.series(a.target_sensor);
    for (&o, &v) in a.test.origins.iter().zip(&a.test.yhat) {
        assert_eq!(v, raw[o]);
    }
}

#[test]
fn var_at_lambda_max_predicts_the_training_mean() {
    let f = corridor(4, 6);
    let s = spec(FilterSpec::None, Selector::None, ModelSpec::Var { lambda: Some(1e6) });
    let r = run_pipeline(&s, &f, &SplitPolicy::FirstHalfDays, &opts()).unwrap();
    let mean = r.train.y.iter().sum::<f64>() / r.train.y.len() as f64;
    for v in r.train.yhat.iter().chain(&r.test.yhat) {
        assert!((v - mean).abs() < 1e-9);
    }
    assert!(r.row.is_r2.abs() < 1e-9);
    assert!(r.row.os_r2 <= 0.05);
}

#[test]
fn duplicate_specs_give_identical_rows() {
    let f = corridor(4, 7);
    let s = spec(FilterSpec::Median { window: 8 }, Selector::Lasso { lambda: None }, small_net());
    let c = compare_models(&[s.clone(), s], &f, &SplitPolicy::FirstHalfDays, &EvalOptions { workers: 2, ..opts() }).unwrap();
    let rows: Vec<&EvalRow> = c.rows().into_iter().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], rows[1]);
    let mut table = Vec::new();
    c.write_table(&mut table).unwrap();
    let text = String::from_utf8(table).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("metric,DLM8L,DLM8L"));
}

#[test]
fn failures_are_reported_per_spec() {
    let f = corridor(4, 8);
    let good = spec(FilterSpec::None, Selector::None, ModelSpec::Naive);
    let bad = PipelineSpec { target: "nowhere".into(), ..good.clone() };
    let c = compare_models(&[good, bad], &f, &SplitPolicy::FirstHalfDays, &opts()).unwrap();
    assert!(c.results[0].is_ok());
    assert!(c.results[1].is_err());
    assert!(c.to_string().contains("failed"));
}

#[test]
fn metric_cases() {
    let y = [1.0, 2.0, 3.0, 4.0];
    let mean = [2.5; 4];
    assert!(r2(&y, &mean).unwrap().abs() < 1e-15);
    assert_eq!(r2(&y, &y).unwrap(), 1.0);
    assert!(r2(&y, &[4.0, 3.0, 2.0, 1.0]).unwrap() < 0.0);
    assert!(r2(&[2.0; 3], &[1.0; 3]).is_err());
    assert!(mse(&y, &y[..2]).is_err());
}

proptest! {
    #[test]
    fn mse_ignores_row_order(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..60),
        seed in any::<u64>(),
    ) {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let (y, yh): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (ys, yhs): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
        let a = mse(&y, &yh).unwrap();
        let b = mse(&ys, &yhs).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        prop_assert!(a >= 0.0);
    }
}
