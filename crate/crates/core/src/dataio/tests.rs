use approx::assert_relative_eq;
use proptest::prelude::*;

use super::*;
use crate::trm::TrmConfig;

fn trm() -> TrmConfig {
    TrmConfig::new(0.2, 150.0, 60.0, 130.0 / 3.6, None).unwrap()
}

fn synth_cfg() -> SynthConfig {
    let geometry = RoadGeometry::new(11, 150.0, &[0, 2, 5, 10], &[3, 7]).unwrap();
    let mut cfg = SynthConfig::with_geometry(geometry, trm());
    cfg.n_days = 3;
    cfg.steps_per_day = 20;
    cfg
}

const TWO_BY_TWO: &str = "dx_meters=150,dt_seconds=60,rho_max_veh_per_m=0.2
timestamp,0,3
2024-01-01T07:00:00,12.5,3
2024-01-01T07:01:00,0,7.25
";

#[test]
fn empty_data_section_is_valid() {
    let s = parse_csv("dx_meters=150,dt_seconds=60,rho_max_veh_per_m=0.2\ntimestamp,0,1\n").unwrap();
    assert_eq!(s.n_rows(), 0);
    assert_eq!(s.interfaces, vec![0, 1]);
    assert!(s.days.is_empty());
}

#[test]
fn two_by_two_round_trip() {
    let s = parse_csv(TWO_BY_TWO).unwrap();
    assert_eq!(s.dx, 150.0);
    assert_eq!(s.dt_seconds, 60.0);
    assert_eq!(s.rho_max, 0.2);
    assert_eq!(s.interfaces, vec![0, 3]);
    assert_eq!(s.days.len(), 1);
    assert_eq!(
        s.days[0].values,
        vec![vec![Some(12.5), Some(3.0)], vec![Some(0.0), Some(7.25)]]
    );
    assert_eq!(parse_csv(&s.to_csv()).unwrap(), s);
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub/data.csv");
    let s = parse_csv(TWO_BY_TWO).unwrap();
    s.save_csv(&path).unwrap();
    assert_eq!(load_csv(&path).unwrap(), s);
}

#[test]
fn missing_cells_are_flagged() {
    let s = parse_csv("dx_meters=150,dt_seconds=60,rho_max_veh_per_m=0.2\ntimestamp,0,1,2\n2024-01-01T07:00:00,2,,4\n")
        .unwrap();
    assert_eq!(s.days[0].values[0], vec![Some(2.0), None, Some(4.0)]);
}

#[test]
fn wrong_column_count_reports_line() {
    let err = parse_csv(
        "dx_meters=150,dt_seconds=60,rho_max_veh_per_m=0.2\ntimestamp,0,1\n2024-01-01T07:00:00,1,2\n2024-01-01T07:01:00,1\n",
    )
    .unwrap_err();
    assert!(matches!(err, Error::Parse { line: 4, .. }), "{err:?}");
}

#[test]
fn malformed_inputs_are_rejected() {
    let head = "dx_meters=150,dt_seconds=60,rho_max_veh_per_m=0.2\n";
    let cases = [
        ("dx=150,dt_seconds=60,rho_max_veh_per_m=0.2\ntimestamp,0\n", 1),
        (&format!("{head}time,0\n") as &str, 2),
        (&format!("{head}timestamp,1,0\n"), 2),
        (&format!("{head}timestamp,0\n2024-01-01T07:00:00,-1\n"), 3),
        (&format!("{head}timestamp,0\n2024-01-01T07:00:00,abc\n"), 3),
        (&format!("{head}timestamp,0\nyesterday,1\n"), 3),
        (
            &format!("{head}timestamp,0\n2024-01-01T07:00:00,1\n2024-01-01T07:02:00,1\n"),
            4,
        ),
    ];
    for (text, line) in cases {
        match parse_csv(text) {
            Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
            other => panic!("expected parse error for {text:?}, got {other:?}"),
        }
    }
}

#[test]
fn new_date_starts_new_day() {
    let s = parse_csv(
        "dx_meters=150,dt_seconds=60,rho_max_veh_per_m=0.2\ntimestamp,0\n2024-01-01T07:00:00,1\n2024-01-01T07:01:00,2\n2024-01-02T07:00:00,3\n",
    )
    .unwrap();
    assert_eq!(s.days.len(), 2);
    assert_eq!(s.days[1].id, "2024-01-02");
    assert_eq!(s.days[1].values, vec![vec![Some(3.0)]]);
}

fn one_row(interfaces: Vec<usize>, row: Vec<Option<f64>>) -> MeasurementSeries {
    MeasurementSeries {
        dx: 150.0,
        dt_seconds: 60.0,
        rho_max: 0.2,
        interfaces,
        days: vec![Day {
            id: "d".into(),
            start: default_start_date().and_hms_opt(0, 0, 0).unwrap(),
            values: vec![row],
        }],
    }
}

#[test]
fn interpolation_examples() {
    let full = one_row(vec![0, 1, 2], vec![Some(1.0), Some(2.0), Some(3.0)]);
    assert_eq!(interpolate_missing(&full).unwrap(), full);

    let mid = one_row(vec![0, 1, 2], vec![Some(2.0), None, Some(4.0)]);
    assert_eq!(interpolate_missing(&mid).unwrap().days[0].values[0][1], Some(3.0));

    let uneven = one_row(vec![0, 1, 3], vec![Some(1.0), None, Some(5.0)]);
    let v = interpolate_missing(&uneven).unwrap().days[0].values[0][1].unwrap();
    assert_relative_eq!(v, 1.0 + 4.0 / 3.0, epsilon = 1e-15);

    let edges = one_row(vec![0, 1, 2, 3], vec![None, Some(2.0), Some(4.0), None]);
    assert_eq!(
        interpolate_missing(&edges).unwrap().days[0].values[0],
        vec![Some(2.0), Some(2.0), Some(4.0), Some(4.0)]
    );

    let lonely = one_row(vec![0, 1, 2], vec![None, Some(2.0), None]);
    assert!(matches!(interpolate_missing(&lonely), Err(Error::Data(_))));
}

#[test]
fn normalize_examples() {
    let cfg = trm();
    let scale = flux_scale(&cfg);
    let count_for = |flux: f64| flux * cfg.dt_measure;
    let s = one_row(
        vec![0, 1, 2],
        vec![Some(0.0), Some(count_for(scale / 8.0)), Some(count_for(0.6 * scale))],
    );
    let n = normalize(&s, &cfg).unwrap();
    let row = &n.days[0].values[0];
    assert_eq!(row[0], Some(0.0));
    assert_relative_eq!(row[1].unwrap(), 0.125, epsilon = 1e-15);
    assert_eq!(row[2], Some(CLIP_LEVEL));
    assert_eq!(n.clipped, 1);
}

#[test]
fn normalize_rejects_period_mismatch() {
    let mut s = one_row(vec![0], vec![Some(1.0)]);
    s.dt_seconds = 30.0;
    assert!(matches!(normalize(&s, &trm()), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn normalize_denormalize_identity(flux in 0.0..CLIP_LEVEL) {
        let cfg = trm();
        let back = count_to_flux(flux_to_count(flux, &cfg), &cfg);
        prop_assert!((back - flux).abs() <= 1e-12);
    }

    #[test]
    fn window_count_formula(lengths in proptest::collection::vec(0usize..30, 1..5), n_p in 1usize..5, n_f in 1usize..5) {
        let series = NormalizedSeries {
            interfaces: vec![0, 1],
            days: lengths.iter().map(|&t| Day {
                id: String::new(),
                start: default_start_date().and_hms_opt(0, 0, 0).unwrap(),
                values: vec![vec![Some(0.1), Some(0.2)]; t],
            }).collect(),
            clipped: 0,
        };
        let g = RoadGeometry::new(2, 1.0, &[0, 1], &[]).unwrap();
        let ex = window_examples(&series, &g, n_p, n_f, 1).unwrap();
        let expected: usize = lengths.iter().map(|&t| (t + 1).saturating_sub(n_p + n_f)).sum();
        prop_assert_eq!(ex.len(), expected);
        for e in &ex {
            prop_assert_eq!(&e.target[..n_p], &e.past[..]);
        }
    }
}

fn ramp_series(lengths: &[usize]) -> NormalizedSeries {
    NormalizedSeries {
        interfaces: vec![0, 1, 2],
        days: lengths
            .iter()
            .enumerate()
            .map(|(d, &t)| Day {
                id: format!("day{d}"),
                start: default_start_date().and_hms_opt(0, 0, 0).unwrap(),
                values: (0..t)
                    .map(|r| vec![Some(0.01 * r as f64), Some(0.3), Some(0.001 * d as f64)])
                    .collect(),
            })
            .collect(),
        clipped: 0,
    }
}

#[test]
fn window_examples_follow_day_boundaries() {
    let g = RoadGeometry::new(3, 1.0, &[0, 2], &[1]).unwrap();
    let exact = window_examples(&ramp_series(&[5]), &g, 3, 2, 1).unwrap();
    assert_eq!(exact.len(), 1);
    assert_eq!(exact[0].past, vec![vec![0.0, 0.0], vec![0.01, 0.0], vec![0.02, 0.0]]);

    assert_eq!(window_examples(&ramp_series(&[7]), &g, 3, 2, 1).unwrap().len(), 3);
    assert_eq!(window_examples(&ramp_series(&[7]), &g, 3, 2, 2).unwrap().len(), 2);
    assert_eq!(window_examples(&ramp_series(&[8]), &g, 3, 2, 2).unwrap().len(), 2);
    assert_eq!(window_examples(&ramp_series(&[3]), &g, 3, 2, 1).unwrap().len(), 0);

    let two_days = window_examples(&ramp_series(&[5, 5]), &g, 3, 2, 1).unwrap();
    assert_eq!(two_days.len(), 2);
    assert!(two_days[1].target.iter().all(|r| r[1] == 0.001));

    let truths = window_truths(&ramp_series(&[7]).full_width(3), 3, 2, 2);
    assert_eq!(truths.len(), 2);
    assert_eq!(truths[1][0], vec![Some(0.05), Some(0.3), Some(0.0)]);
}

#[test]
fn window_examples_need_observed_columns() {
    let g = RoadGeometry::new(4, 1.0, &[0, 3], &[]).unwrap();
    assert!(matches!(
        window_examples(&ramp_series(&[5]), &g, 3, 2, 1),
        Err(Error::Data(_))
    ));
}

#[test]
fn split_examples() {
    let days: Vec<usize> = (0..10).collect();
    let (a, b, c) = split_by_days(&days, (0.8, 0.1, 0.1)).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
    let mut all = [a, b, c].concat();
    all.sort_unstable();
    assert_eq!(all, days);
    assert!(split_by_days(&[0], (0.8, 0.1, 0.1)).is_err());
    assert!(split_by_days(&days, (0.5, 0.1, 0.1)).is_err());
}

#[test]
fn synth_noise_free_observations_equal_sampled_fluxes() {
    let mut cfg = synth_cfg();
    cfg.noise_std = 0.0;
    let out = synth_generate(&cfg).unwrap();
    let cols = cfg.measured_interfaces();
    for (day, truth) in out.observations.days.iter().zip(&out.truth.days) {
        for (row, flux) in day.values.iter().zip(&truth.fluxes) {
            for (v, &i) in row.iter().zip(&cols) {
                assert_eq!(v.unwrap(), flux[i]);
            }
        }
    }
}

#[test]
fn synth_is_seeded() {
    let cfg = synth_cfg();
    assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
    let mut other = cfg.clone();
    other.seed = 1;
    assert_ne!(
        synth_generate(&cfg).unwrap().truth,
        synth_generate(&other).unwrap().truth
    );
}

#[test]
fn synth_stays_in_bounds() {
    let mut cfg = synth_cfg();
    cfg.steps_per_day = 200;
    let out = synth_generate(&cfg).unwrap();
    for day in &out.truth.days {
        assert!(day.rates.iter().flatten().all(|&c| c > 0.0 && c < 0.5));
        assert!(day.densities.iter().flatten().all(|&u| (0.0..=1.0).contains(&u)));
        assert!(day.fluxes.iter().flatten().all(|&f| (0.0..0.5).contains(&f)));
    }
    for day in &out.observations.days {
        assert!(day
            .values
            .iter()
            .flatten()
            .all(|v| (0.0..=CLIP_LEVEL).contains(&v.unwrap())));
    }
    assert!(out.noise_sigma > 0.0);
}

#[test]
fn synth_rejects_bad_amplitude() {
    let mut cfg = synth_cfg();
    cfg.rate_max = 0.5;
    assert!(matches!(synth_generate(&cfg), Err(Error::Config(_))));
    cfg.rate_max = 0.4;
    cfg.rate_min = 0.0;
    assert!(matches!(synth_generate(&cfg), Err(Error::Config(_))));
}

#[test]
fn ground_truth_replays_bit_exactly_after_file_round_trip() {
    let cfg = synth_cfg();
    let out = synth_generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("truth.csv");
    save_ground_truth(&out.truth, &path).unwrap();
    let loaded = load_ground_truth(&path).unwrap();
    assert_eq!(loaded, out.truth);
    for day in &loaded.days {
        assert_eq!(day.replay(loaded.p_t).unwrap(), day.fluxes);
    }
}

#[test]
fn synth_counts_normalize_back_to_observations() {
    let cfg = synth_cfg();
    let out = synth_generate(&cfg).unwrap();
    let csv = parse_csv(&out.series.to_csv()).unwrap();
    let norm = normalize(&csv, &cfg.trm).unwrap();
    for (a, b) in norm.days.iter().zip(&out.observations.days) {
        for (ra, rb) in a.values.iter().zip(&b.values) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x.unwrap() - y.unwrap()).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn write_atomic_replaces_contents() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.txt");
    write_atomic(&path, b"one").unwrap();
    write_atomic(&path, b"two").unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}
