use dilgp::quad::*;
use proptest::prelude::*;

fn sample_stats(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

// dt = 0.05 keeps the Euler variance bias at 1 / (1 - dt / 2tau) ~ 5% while
// giving enough decorrelated samples for the mean to sit well inside 0.1.
#[test]
fn training_wind_matches_its_statistics() {
    let spec = WindDomainSpec::domain1();
    let w = dryden_wind(&spec, 11, 0.05, 100_000).unwrap();
    for (axis, target_var) in [(0usize, 5.0), (1, 5.0), (2, 2.5)] {
        let xs: Vec<f64> = w.iter().map(|s| if axis < 2 { s.h[axis] } else { s.v }).collect();
        let (mean, var) = sample_stats(&xs);
        assert!(mean.abs() < 0.1, "axis {axis} mean {mean}");
        assert!((var / target_var - 1.0).abs() < 0.1, "axis {axis} var {var}");
    }
}

#[test]
fn held_out_wind_matches_its_statistics() {
    let spec = WindDomainSpec::domain2();
    let w = dryden_wind(&spec, 5, 0.1, 200_000).unwrap();
    let h: Vec<f64> = w.iter().map(|s| s.h[1]).collect();
    let v: Vec<f64> = w.iter().map(|s| s.v).collect();
    let (mh, vh) = sample_stats(&h);
    let (mv, vv) = sample_stats(&v);
    assert!((mh - 3.0).abs() < 0.1 && (mv - 1.0).abs() < 0.1, "{mh} {mv}");
    assert!((vh / 2.0 - 1.0).abs() < 0.1 && (vv - 1.0).abs() < 0.1, "{vh} {vv}");
}

#[test]
fn wind_is_deterministic_per_seed() {
    let spec = WindDomainSpec::domain1();
    assert_eq!(dryden_wind(&spec, 3, 0.01, 300).unwrap(), dryden_wind(&spec, 3, 0.01, 300).unwrap());
    assert_ne!(dryden_wind(&spec, 3, 0.01, 300).unwrap(), dryden_wind(&spec, 4, 0.01, 300).unwrap());
}

#[test]
fn unguided_vehicle_drifts_further_than_controlled_one() {
    let steady = WindDomainSpec { var_h: 0.0, var_v: 0.0, ..WindDomainSpec::domain2() };
    let idle = simulate(PidGains::new(0.0, 0.0, 0.0).unwrap(), TrajectoryKind::Hover, &steady, 1).unwrap();
    let flown = simulate(PidGains::new(2.0, 0.5, 1.0).unwrap(), TrajectoryKind::Hover, &steady, 1).unwrap();
    assert!(idle.ace > flown.ace, "{} vs {}", idle.ace, flown.ace);
    let last = idle.positions.last().unwrap();
    assert!(last[0] > 100.0, "drift {last:?}");
}

#[test]
fn objective_averages_simulations() {
    let g = PidGains::new(3.0, 1.0, 2.0).unwrap();
    let wind = WindDomainSpec::domain1();
    let a = simulate(g, TrajectoryKind::Fig8, &wind, 0).unwrap().ace;
    let b = simulate(g, TrajectoryKind::Fig8, &wind, 1).unwrap().ace;
    assert_eq!(pid_objective(g, &wind, &[TrajectoryKind::Fig8], &[0]).unwrap(), a);
    let two = pid_objective(g, &wind, &[TrajectoryKind::Fig8], &[0, 1]).unwrap();
    assert!((two - (a + b) / 2.0).abs() <= 1e-15 * two.abs());
    assert!(pid_objective(g, &wind, &[], &[0]).is_err());
}

#[test]
fn trajectory_csv_has_expected_columns() {
    let r = simulate(PidGains::new(1.0, 0.0, 1.0).unwrap(), TrajectoryKind::SpiralUp, &WindDomainSpec::domain1(), 2).unwrap();
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,x,y,z,ref_x,ref_y,ref_z");
    assert_eq!(lines.count(), r.positions.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ace_is_recomputable_and_deterministic(
        kp in 0.0..5.0f64, ki in 0.0..5.0f64, kd in 0.0..5.0f64,
        kind in 0usize..4, seed in 0u64..1000, held_out in any::<bool>(),
    ) {
        let g = PidGains::new(kp, ki, kd).unwrap();
        let kind = TrajectoryKind::ALL[kind];
        let wind = if held_out { WindDomainSpec::domain2() } else { WindDomainSpec::domain1() };
        let a = simulate(g, kind, &wind, seed).unwrap();
        let b = simulate(g, kind, &wind, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.positions.len(), a.reference.len());
        prop_assert!(!a.diverged);
        prop_assert!((a.ace - a.recompute_ace()).abs() <= 1e-12 * a.ace.max(1.0));
    }

    #[test]
    fn zero_gains_in_calm_air_keep_initial_offset(kind in 0usize..4) {
        let kind = TrajectoryKind::ALL[kind];
        let r = simulate(PidGains::new(0.0, 0.0, 0.0).unwrap(), kind, &WindDomainSpec::calm(), 0).unwrap();
        let start = r.positions[0];
        prop_assert!(r.positions.iter().all(|p| *p == start));
    }
}
