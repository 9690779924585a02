use super::*;
use crate::rng;
use crate::scenario::{build_default_scenario, ScenarioOverrides};
use proptest::prelude::*;

fn isotropic(m: usize, k: usize) -> BeamformerSet {
    let mut g = rng::stream(5, 0);
    let w_c = CMat::from_columns(
        &(0..k)
            .map(|_| cn_vector(&mut g, m, 0.1 / m as f64))
            .collect::<Vec<_>>(),
    );
    let w_s = CMat::identity(m, m) * c64((0.5 / m as f64).sqrt(), 0.0);
    BeamformerSet { w_c, w_s }
}

fn grid() -> Vec<f64> {
    (0..=180).map(|i| -90.0 + i as f64).collect()
}

#[test]
fn sample_covariance_converges() {
    let beams = isotropic(6, 2);
    let batch = synthesize(&beams, 10_000, &mut rng::stream(1, 1)).unwrap();
    let r = beams.total();
    let diff = (&batch.transmit_covariance() - &r).frobenius();
    assert!(diff <= 0.05 * r.frobenius(), "{diff} vs {}", r.frobenius());
}

#[test]
fn noiseless_mle_recovers_grid_targets() {
    let targets = [-60.0, -20.0, 20.0, 60.0];
    let beams = isotropic(10, 2);
    let batch = synthesize(&beams, 64, &mut rng::stream(2, 0)).unwrap();
    let batch = noiseless_return(&batch, &target_response(10, 0.5, &targets));
    let est = mle_angles(&batch, 4, &grid(), 0.5, &MleOptions::default()).unwrap();
    assert_eq!(est, targets.to_vec());
    assert_eq!(rmse(&est, &targets).unwrap(), 0.0);
}

#[test]
fn coordinate_search_agrees_with_exhaustive_for_two_targets() {
    let targets = [-12.0, 31.0];
    let beams = isotropic(8, 1);
    let coarse: Vec<f64> = (0..=90).map(|i| -90.0 + 2.0 * i as f64).collect();
    for seed in 0..4 {
        let x = synthesize(&beams, 32, &mut rng::stream(seed, 0)).unwrap();
        let resp = target_response(8, 0.5, &targets);
        let y = simulate_return(&x, &beams.total(), &resp, 0.0, &mut rng::stream(seed, 1)).unwrap();
        let a = mle_angles(&y, 2, &coarse, 0.5, &MleOptions::default()).unwrap();
        let b = mle_exhaustive(&y, 2, &coarse, 0.5).unwrap();
        assert_eq!(a, b, "seed {seed}");
    }
}

#[test]
fn refinement_does_not_lower_likelihood() {
    let targets = [-20.3, 40.6];
    let beams = isotropic(8, 1);
    let x = synthesize(&beams, 128, &mut rng::stream(9, 0)).unwrap();
    let y = noiseless_return(&x, &target_response(8, 0.5, &targets));
    let g = grid();
    let coarse = mle_angles(&y, 2, &g, 0.5, &MleOptions::default()).unwrap();
    let fine = mle_angles(
        &y,
        2,
        &g,
        0.5,
        &MleOptions {
            refine: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(rmse(&fine, &targets).unwrap() < rmse(&coarse, &targets).unwrap());
    assert!(rmse(&fine, &targets).unwrap() < 1e-3);
}

#[test]
fn rank_deficient_batch_is_rejected() {
    let beams = BeamformerSet {
        w_c: CMat::zeros(4, 1),
        w_s: CMat::zeros(4, 1),
    };
    let x = synthesize(&beams, 8, &mut rng::stream(0, 0)).unwrap();
    let y = noiseless_return(&x, &target_response(4, 0.5, &[0.0]));
    assert!(matches!(
        mle_angles(&y, 1, &grid(), 0.5, &MleOptions::default()),
        Err(Error::DegenerateBatch(_))
    ));
    assert!(matches!(
        x.receive_covariance(),
        Err(Error::DegenerateBatch(_))
    ));
    assert!(synthesize(&beams, 0, &mut rng::stream(0, 0)).is_err());
}

#[test]
fn rmse_uses_best_assignment() {
    assert_eq!(rmse(&[10.0, -10.0], &[-10.0, 10.0]).unwrap(), 0.0);
    let v = rmse(&[1.0, 3.0], &[0.0, 0.0]).unwrap();
    assert!((v - 5f64.sqrt()).abs() < 1e-15);
    assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn wilson_matches_reference() {
    // statsmodels proportion_confint(8, 10, method="wilson")
    let (lo, hi) = wilson_interval(8, 10, 1.959_963_984_540_054);
    assert!((lo - 0.490_162_471_536_641_8).abs() < 1e-12);
    assert!((hi - 0.943_317_848_545_624_7).abs() < 1e-12);
    assert_eq!(wilson_interval(0, 0, 2.0), (0.0, 1.0));
}

#[test]
fn kahan_beats_naive_sum() {
    let mut k = KahanSum::default();
    let mut naive = 1.0;
    k.add(1.0);
    for _ in 0..1_000_000 {
        k.add(1e-16);
        naive += 1e-16;
    }
    assert_eq!(naive, 1.0);
    assert!((k.value() - (1.0 + 1e-10)).abs() < 1e-15);
}

#[test]
fn silent_information_beams_never_leak() {
    let s = build_default_scenario(&ScenarioOverrides::default())
        .unwrap()
        .with_seeded_channels();
    let beams = BeamformerSet {
        w_c: CMat::zeros(s.m, s.k_users),
        w_s: CMat::identity(s.m, s.m) * c64(0.3, 0.0),
    };
    let stats = mc_secrecy(
        &beams.covariances(1.0),
        &s,
        0.0,
        500,
        &mut rng::stream(3, 0),
    )
    .unwrap();
    assert_eq!(stats.pe_ok, 500);
    assert_eq!(stats.mean_cs, 0.0);
    assert!(stats.meets_outage_target(0.99, 1.5));
}

#[test]
fn summary_csv_format() {
    let row = SummaryRow::from_samples(10.0, &[1.0, 3.0]);
    assert_eq!(row.mean, 2.0);
    assert!((row.std - 2f64.sqrt()).abs() < 1e-15);
    let mut buf = Vec::new();
    write_summary_csv(&[row], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text
        .starts_with("sweep,mean,std,n,ci_low,ci_high\n10,2.000000000000e0,1.414213562373e0,2,"));
}

#[test]
fn batch_roundtrips_through_json() {
    let beams = isotropic(3, 1);
    let x = synthesize(&beams, 4, &mut rng::stream(0, 0)).unwrap();
    let y = simulate_return(
        &x,
        &beams.total(),
        &target_response(3, 0.5, &[5.0]),
        10.0,
        &mut rng::stream(0, 1),
    )
    .unwrap();
    let back: SnapshotBatch = serde_json::from_str(&serde_json::to_string(&y).unwrap()).unwrap();
    assert_eq!(back, y);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rmse_is_permutation_invariant(a in prop::collection::vec(-90.0f64..90.0, 3), t in prop::collection::vec(-90.0f64..90.0, 3)) {
        let v = rmse(&a, &t).unwrap();
        let rev: Vec<f64> = a.iter().rev().copied().collect();
        prop_assert!((rmse(&rev, &t).unwrap() - v).abs() <= 1e-12);
        let naive = (a.iter().zip(&t).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 3.0).sqrt();
        prop_assert!(v <= naive + 1e-12);
    }

    #[test]
    fn wilson_contains_point_estimate(k in 0u64..200, extra in 0u64..200) {
        let n = k + extra;
        prop_assume!(n > 0);
        let (lo, hi) = wilson_interval(k, n, 1.96);
        let p = k as f64 / n as f64;
        prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
    }
}

#[test]
fn mc_secrecy_agrees_with_per_draw_metrics() {
    use crate::metrics::{secrecy_rate, sinr_pe};
    let s = build_default_scenario(&ScenarioOverrides::default())
        .unwrap()
        .with_seeded_channels();
    let beams = isotropic(s.m, s.k_users);
    let set = beams.covariances(1.0);
    let eps_p = 0.05;
    let stats = mc_secrecy(&set, &s, eps_p, 300, &mut rng::stream(4, 0)).unwrap();
    let mut g = rng::stream(4, 0);
    let (mut sum, mut ok) = (0.0, 0);
    for _ in 0..300 {
        let h = draw_pe_channel(&s, &mut g);
        sum += secrecy_rate(&set, &s, &h).unwrap();
        ok += (sinr_pe(&set, &h, s.noise_p) <= eps_p) as u64;
    }
    assert_eq!(stats.pe_ok, ok);
    assert!((stats.mean_cs - sum / 300.0).abs() < 1e-12);
    assert!(mc_secrecy(&set, &s, eps_p, 0, &mut g).is_err());
}
