use std::collections::{BTreeSet, HashSet};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use flowcast::datastore::*;
use proptest::prelude::*;

fn timestamps(days: usize, per_day: usize, step: i64) -> Vec<NaiveDateTime> {
    let start = NaiveDate::from_ymd_opt(2013, 3, 4).unwrap().and_hms_opt(0, 0, 0).unwrap();
    (0..days)
        .flat_map(|d| (0..per_day).map(move |i| start + Duration::days(d as i64) + Duration::minutes(step * i as i64)))
        .collect()
}

fn field(n: usize, days: usize, per_day: usize, speeds: Vec<f64>, missing: Vec<bool>) -> SpeedField {
    let ids = (0..n).map(|i| format!("D{}", 100 - i)).collect();
    let mp = (0..n).map(|i| 2.5 + 0.37 * i as f64).collect();
    SpeedField::new(ids, mp, 5, timestamps(days, per_day, 5), speeds, missing).unwrap()
}

prop_compose! {
    fn arb_field()(n in 1usize..5, days in 1usize..4, per_day in 2usize..15)
        (speeds in prop::collection::vec(0.0f64..120.0, n * days * per_day),
         missing in prop::collection::vec(prop::bool::weighted(0.15), n * days * per_day),
         n in Just(n), days in Just(days), per_day in Just(per_day))
        -> SpeedField {
        field(n, days, per_day, speeds, missing)
    }
}

fn complete_field(n: usize, days: usize, per_day: usize, seed: u64) -> SpeedField {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let cells = n * days * per_day;
    let speeds = (0..cells).map(|_| r.random_range(10.0..75.0)).collect();
    field(n, days, per_day, speeds, vec![false; cells])
}

fn round_trip(f: &SpeedField) -> SpeedField {
    let (mut data, mut meta) = (Vec::new(), Vec::new());
    write_speed_csv(f, &mut data).unwrap();
    write_sensor_meta(f, &mut meta).unwrap();
    read_speed_csv(&data[..], &CsvSchema::default(), Some(&meta[..])).unwrap()
}

proptest! {
    #[test]
    fn csv_round_trip_is_exact(f in arb_field()) {
        prop_assert_eq!(round_trip(&f), f);
    }

    #[test]
    fn imputation_is_idempotent(f in arb_field()) {
        let (once, _) = impute_spatial(&f);
        let (twice, summary) = impute_spatial(&once);
        prop_assert_eq!(summary.imputed, 0);
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn imputation_leaves_observed_cells(f in arb_field()) {
        let (g, summary) = impute_spatial(&f);
        prop_assert_eq!(summary.remaining_missing, g.missing_count());
        for s in 0..f.n_sensors() {
            for c in 0..f.n_times() {
                if let Some(v) = f.speed(s, c) {
                    prop_assert_eq!(g.speed(s, c), Some(v));
                }
            }
        }
    }

    #[test]
    fn column_map_is_a_bijection(n in 1usize..6, k in 1usize..8, h in 1usize..5, seed in any::<u64>()) {
        let f = complete_field(n, 2, 20, seed);
        let d = build_lag_design(&f, k, h, &[0], false).unwrap();
        prop_assert_eq!(d.column_map.len(), n * k);
        let pairs: HashSet<(usize, usize)> = d.column_map.iter().map(|c| (c.sensor, c.lag)).collect();
        let all: HashSet<(usize, usize)> = (0..n).flat_map(|s| (0..k).map(move |l| (s, l))).collect();
        prop_assert_eq!(pairs, all);
        // each column holds what its map entry says
        for (j, c) in d.column_map.iter().enumerate() {
            for i in 0..d.rows() {
                let t = d.row_origins[i];
                prop_assert_eq!(d.x.get(i, j), f.series(c.sensor)[t - c.lag]);
            }
        }
        for i in 0..d.rows() {
            prop_assert_eq!(d.y.get(i, 0), f.series(0)[d.row_origins[i] + h]);
        }
    }

    #[test]
    fn splits_partition_days(days in 2usize..8, pick in prop::collection::vec(any::<bool>(), 8), seed in any::<u64>()) {
        let f = complete_field(2, days, 12, seed);
        let d = build_lag_design(&f, 3, 2, &[1], true).unwrap();
        let mut train: BTreeSet<usize> = (0..days).filter(|&i| pick[i]).collect();
        if train.is_empty() { train.insert(0); }
        if train.len() == days { train.remove(&(days - 1)); }
        let (a, b) = split_by_days(&d, &train).unwrap();
        let (da, db): (BTreeSet<usize>, BTreeSet<usize>) = (a.days().into_iter().collect(), b.days().into_iter().collect());
        prop_assert!(da.is_disjoint(&db));
        prop_assert_eq!(da.union(&db).copied().collect::<BTreeSet<_>>(), (0..days).collect::<BTreeSet<_>>());
        prop_assert_eq!(a.rows() + b.rows(), d.rows());
        // training columns are standardized on training rows
        let st = a.standardization.as_ref().unwrap();
        for j in 0..a.x.cols() {
            let col: Vec<f64> = (0..a.rows()).map(|i| a.x.get(i, j)).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            prop_assert!(m.abs() < 1e-9);
            prop_assert!(st.scale[j] > 0.0);
        }
    }
}

#[test]
fn corridor_day_row_and_column_counts() {
    let f = complete_field(21, 1, 288, 1);
    assert_eq!((f.n_sensors(), f.step_minutes()), (21, 5));
    let d = build_lag_design(&f, 12, 8, &[10], false).unwrap();
    // origins with lags 0..11 inside the day and the target 8 steps ahead also inside
    let valid = (0..288).filter(|&t| t >= 11 && t + 8 < 288).count();
    assert_eq!(valid, 288 - (12 - 1) - 8);
    assert_eq!((d.rows(), d.x.cols()), (valid, 252));
}

#[test]
fn standardized_design_has_unit_columns() {
    let f = complete_field(3, 3, 40, 2);
    let d = build_lag_design(&f, 4, 2, &[0, 2], true).unwrap();
    let t = d.rows() as f64;
    for j in 0..d.x.cols() {
        let col: Vec<f64> = (0..d.rows()).map(|i| d.x.get(i, j)).collect();
        let m = col.iter().sum::<f64>() / t;
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / t;
        assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9, "column {j}: mean {m}, variance {v}");
    }
    let raw = d.raw_x();
    let plain = build_lag_design(&f, 4, 2, &[0, 2], false).unwrap();
    for i in 0..d.rows() {
        for j in 0..d.x.cols() {
            assert!((raw.get(i, j) - plain.x.get(i, j)).abs() < 1e-9);
        }
    }
}

#[test]
fn weekend_exclusion_and_missing_days() {
    // 2013-03-04 is a Monday
    let f = complete_field(2, 7, 10, 3);
    let kept = drop_bad_days(&f, 1.0, &DayExclusions { dates: vec![], weekends: true }).unwrap();
    assert_eq!(kept.n_days(), 5);
    assert_eq!(drop_bad_days(&f, 1.0, &DayExclusions::default()).unwrap(), f);

    let mut missing = vec![false; 2 * 30];
    for s in 0..2 {
        for c in 10..20 {
            missing[s * 30 + c] = true;
        }
    }
    let g = field(2, 3, 10, vec![50.0; 60], missing);
    let kept = drop_bad_days(&g, 0.5, &DayExclusions::default()).unwrap();
    assert_eq!(kept.n_days(), 2);
    assert_eq!(kept.missing_count(), 0);
    assert!(drop_bad_days(&g, 0.5, &DayExclusions { dates: kept.days().to_vec(), weekends: false }).is_err());
}

#[test]
fn first_half_split_of_180_days() {
    let f = complete_field(1, 180, 4, 4);
    let d = build_lag_design(&f, 1, 1, &[0], false).unwrap();
    let (a, b) = split_train_test(&d, &SplitPolicy::FirstHalfDays).unwrap();
    assert_eq!((a.days().len(), b.days().len()), (90, 90));
    assert!(a.days().iter().max() < b.days().iter().min());
    assert!(split_train_test(&d, &SplitPolicy::DayList(vec![200])).is_err());
}

#[test]
fn missing_cell_in_window_is_an_error() {
    let mut missing = vec![false; 20];
    missing[7] = true;
    let f = field(1, 1, 20, vec![40.0; 20], missing);
    let err = build_lag_design(&f, 3, 2, &[0], false).unwrap_err();
    assert!(err.to_string().contains("D100"), "{err}");
}

#[test]
fn wide_export_has_one_column_per_sensor() {
    let f = complete_field(3, 1, 5, 5);
    let mut out = Vec::new();
    write_wide_csv(&f, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "timestamp,D100,D99,D98");
    assert_eq!(lines.len(), 6);
    assert!(lines[1].starts_with("2013-03-04T00:00:00,"));
}

#[test]
fn retarget_swaps_targets_and_keeps_inputs() {
    let raw = complete_field(3, 2, 20, 9);
    // a shifted copy stands in for a filtered field
    let shifted: Vec<f64> = (0..3).flat_map(|s| raw.series(s).iter().map(|v| v + 1.0)).collect();
    let other = SpeedField::new(
        raw.sensor_ids().to_vec(),
        raw.mileposts().to_vec(),
        5,
        raw.timestamps().to_vec(),
        shifted,
        vec![false; 3 * 40],
    )
    .unwrap();
    let mut d = build_lag_design(&other, 3, 2, &[0, 2], true).unwrap();
    let x = d.x.clone();
    d.retarget(&raw).unwrap();
    assert_eq!(d.x, x);
    for (i, &o) in d.row_origins.iter().enumerate() {
        assert_eq!(d.y.get(i, 0), raw.series(0)[o + 2]);
        assert_eq!(d.y.get(i, 1), raw.series(2)[o + 2]);
    }

    // a hole in a target cell is reported
    let mut speeds: Vec<f64> = (0..3).flat_map(|s| raw.series(s).to_vec()).collect();
    let mut missing = vec![false; 3 * 40];
    speeds[2 * 40 + 10] = f64::NAN;
    missing[2 * 40 + 10] = true;
    let holed = SpeedField::new(raw.sensor_ids().to_vec(), raw.mileposts().to_vec(), 5, raw.timestamps().to_vec(), speeds, missing).unwrap();
    match d.retarget(&holed) {
        Err(flowcast::Error::IncompleteData { sensor, .. }) => assert_eq!(sensor, raw.sensor_ids()[2]),
        other => panic!("expected a missing-data error, got {other:?}"),
    }
}
