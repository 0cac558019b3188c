use proptest::prelude::*;

use spkf_nui::analysis::{bound_coverage, error_bound_trace};
use spkf_nui::filters::{read_trace_csv, read_trace_json, write_trace_csv, write_trace_json, TraceRow};
use spkf_nui::io::{fmt_f64, parse_f64};
use spkf_nui::models::{Trajectory, TrajectoryRecord};
use spkf_nui::numerics::{pseudo_inverse, split_seed, Matrix, PsdMatrix, SeededRng, SpdMatrix, Vector};
use spkf_nui::sigma::{generate, reconstruct, reconstruct_points};

/// Mean and a well-conditioned covariance `AAᵀ + 0.1·I` of dimension 1..=5.
fn gaussian() -> impl Strategy<Value = (Vector, SpdMatrix)> {
    (1usize..=5).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-2.0f64..2.0, n * n),
        )
            .prop_map(move |(m, a)| {
                let a = Matrix::from_vec(n, n, a);
                let cov = SpdMatrix::new(&a * a.transpose() + Matrix::identity(n, n) * 0.1).unwrap();
                (Vector::from_vec(m), cov)
            })
    })
}

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL
}

proptest! {
    #[test]
    fn sigma_round_trip((mean, cov) in gaussian(), a in 0.0f64..4.0) {
        let ens = generate(&mean, &cov, a).unwrap();
        prop_assert_eq!(ens.len(), 2 * mean.len() + 1);
        let w: f64 = ens.weights().iter().sum();
        prop_assert!((w - 1.0).abs() <= 1e-12);
        let back = reconstruct(&ens, None).unwrap();
        prop_assert!((back.mean - &mean).amax() <= 1e-10);
        prop_assert!((back.cov.matrix() - cov.matrix()).amax() <= 1e-10);
    }

    #[test]
    fn sigma_additive_noise_adds((mean, cov) in gaussian(), noise in 0.01f64..5.0) {
        let n = mean.len();
        let ens = generate(&mean, &cov, 1.0).unwrap();
        let extra = SpdMatrix::scaled_identity(n, noise).unwrap();
        let plain = reconstruct_points(&ens, ens.points(), None).unwrap();
        let noisy = reconstruct_points(&ens, ens.points(), Some(&extra)).unwrap();
        let diff = noisy.cov.matrix() - plain.cov.matrix() - extra.matrix();
        prop_assert!(diff.amax() <= 1e-10);
    }

    #[test]
    fn pinv_satisfies_penrose(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let a = Matrix::from_fn(rows, cols, |_, _| rng.standard_normal());
        let p = pseudo_inverse(&a, 1e-12);
        prop_assert!((&a * &p * &a - &a).amax() <= 1e-8);
        prop_assert!((&p * &a * &p - &p).amax() <= 1e-8);
        let ap = &a * &p;
        prop_assert!((&ap - ap.transpose()).amax() <= 1e-8);
    }

    #[test]
    fn gram_matrices_are_spd(n in 1usize..6, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let a = Matrix::from_fn(n, n, |_, _| rng.standard_normal());
        let g = &a * a.transpose();
        prop_assert!(PsdMatrix::new(g.clone()).is_ok());
        let spd = SpdMatrix::new(g + Matrix::identity(n, n)).unwrap();
        let l = spd.cholesky_factor();
        prop_assert!((&l * l.transpose() - spd.matrix()).amax() <= 1e-9);
    }

    #[test]
    fn negative_definite_is_rejected(n in 1usize..6, shift in 0.1f64..10.0) {
        let m = Matrix::identity(n, n) * -shift;
        prop_assert!(SpdMatrix::new(m.clone()).is_err());
        prop_assert!(PsdMatrix::new(m).is_err());
    }

    #[test]
    fn rng_streams_are_reproducible(seed in any::<u64>(), index in any::<u64>()) {
        let a: Vec<u64> = { let mut r = SeededRng::new(split_seed(seed, index)); (0..4).map(|_| r.next_u64()).collect() };
        let b: Vec<u64> = { let mut r = SeededRng::new(split_seed(seed, index)); (0..4).map(|_| r.next_u64()).collect() };
        prop_assert_eq!(a, b);
        prop_assert_ne!(split_seed(seed, index), split_seed(seed, index.wrapping_add(1)));
    }

    #[test]
    fn bound_is_nonnegative_and_contracts_without_drive(
        sigmas in prop::collection::vec(0.0f64..1.0, 1..50),
        p_bar in 0.1f64..10.0,
        initial in 0.0f64..10.0,
    ) {
        let lsm: Vec<_> = sigmas.iter().map(|&s| (1.0, s, 0.0)).collect();
        let p = vec![p_bar; lsm.len()];
        let trace = error_bound_trace(&lsm, 1.0, &p, initial).unwrap();
        prop_assert!(trace.bound.iter().all(|b| *b >= 0.0));
        prop_assert!(trace.bound.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn coverage_is_a_fraction(pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..100), transient in 0usize..5) {
        let (b, e): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Ok(c) = bound_coverage(&b, &e, transient) {
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }

    #[test]
    fn floats_round_trip_through_text(v in finite()) {
        prop_assert_eq!(parse_f64(&fmt_f64(v), "v").unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn trajectories_round_trip(
        rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 7), 1..20),
    ) {
        let records = rows
            .iter()
            .enumerate()
            .map(|(t, r)| TrajectoryRecord {
                t,
                x: Vector::from_column_slice(&r[0..2]),
                u: Vector::from_column_slice(&r[2..4]),
                y: Vector::from_column_slice(&r[4..7]),
            })
            .collect();
        let traj = Trajectory::new(records).unwrap();
        prop_assert_eq!(&Trajectory::from_csv(&traj.to_csv().unwrap()).unwrap(), &traj);
        prop_assert_eq!(&Trajectory::from_json(&traj.to_json().unwrap()).unwrap(), &traj);
    }

    #[test]
    fn traces_round_trip(rows in prop::collection::vec(prop::collection::vec(0.0f64..1e3, 7), 1..20)) {
        let rows: Vec<TraceRow> = rows
            .iter()
            .enumerate()
            .map(|(t, r)| TraceRow {
                t,
                state: r[0..2].to_vec(),
                ui: r[2..4].to_vec(),
                cov_trace: r[4],
                prior_cov_trace: r[5],
                ui_cov_trace: r[6],
                cov: None,
                prior_cov: None,
            })
            .collect();
        prop_assert_eq!(&read_trace_csv(&write_trace_csv(&rows).unwrap()).unwrap(), &rows);
        prop_assert_eq!(&read_trace_json(&write_trace_json(&rows).unwrap()).unwrap(), &rows);
    }
}
