use super::*;
use crate::constraints::db_to_lin;
use crate::scenario::{build_default_scenario, ScenarioOverrides};

fn default_scenario() -> Scenario {
    build_default_scenario(&ScenarioOverrides::default())
        .unwrap()
        .with_seeded_channels()
}

fn thresholds(s: &Scenario) -> SinrThresholds {
    SinrThresholds::from_db(s.k_users, 12.0, 2.0, 2.0).unwrap()
}

#[test]
fn rank1_recover_is_a_fixed_point_on_rank_one_input() {
    let s = default_scenario();
    let w = s.h_users[0].clone() * c64(0.3, -0.2) + s.steer_deg(20.0) * c64(0.1, 0.0);
    let r = HermitianMatrix::outer(&w);
    let got = rank1_recover(&r, &s.h_users[0], 0).unwrap();
    // equal up to a common phase
    let phase = w.dotc(&got) / c64(w.norm_squared(), 0.0);
    assert!((phase.norm() - 1.0).abs() < 1e-10);
    assert!((got - &w * phase).norm() < 1e-10 * w.norm());
}

#[test]
fn rank1_recover_rejects_zero_useful_power() {
    let s = default_scenario();
    let r = HermitianMatrix::zeros(s.m);
    assert!(matches!(
        rank1_recover(&r, &s.h_users[0], 1),
        Err(Error::DegenerateUser { user: 1 })
    ));
}

#[test]
fn sdr_default_is_feasible_and_recovery_preserves_objective() {
    let s = default_scenario();
    let t = thresholds(&s);
    let sol = solve_robust(
        &s,
        &t,
        Method::Sdr,
        &CsiMode::Perfect,
        &Stage1Options::default(),
    )
    .unwrap();
    let bundle = build_bundle(&s, &t, &CsiMode::Perfect, PeForm::WithVariance).unwrap();
    let checks = verify_sdr(&sol, &s, &bundle).unwrap();
    assert_eq!(sol.objective, sol.relaxed_objective);
    assert!(checks.useful_power_error < 1e-9, "{checks:?}");
    assert!(checks.ae_leakage_increase < 1e-9, "{checks:?}");
    assert!(checks.recovered_violation < 1e-6, "{checks:?}");
    assert!((sol.covariances.total.trace() - s.p_budget).abs() < 1e-6);
    for k in 0..s.k_users {
        let sinr = crate::metrics::sinr_user(&sol.covariances, &s, k).unwrap();
        assert!(sinr >= t.eps_u[k] * (1.0 - 1e-5), "user {k}: {sinr}");
    }
    let bf_total = sol.beamformers.total();
    assert!((&bf_total - &sol.covariances.total).frobenius() < 1e-8);
}

#[test]
fn zf_default_meets_recovery_checks_and_costs_at_least_sdr() {
    let s = default_scenario();
    let t = thresholds(&s);
    let opts = Stage1Options::default();
    let sdr = solve_robust(&s, &t, Method::Sdr, &CsiMode::Perfect, &opts).unwrap();
    let zf = solve_robust(&s, &t, Method::Zf, &CsiMode::Perfect, &opts).unwrap();
    let bundle = build_bundle(&s, &t, &CsiMode::Perfect, PeForm::WithVariance).unwrap();
    let checks = verify_zf(&zf, &s, &bundle).unwrap();
    assert!(checks.max_error() < 1e-6, "{checks:?}");
    assert!(checks.sinr_error < 1e-6, "{checks:?}");
    // ZF restricts the SDR feasible set
    assert!(
        zf.objective >= sdr.relaxed_objective - 1e-6,
        "{} < {}",
        zf.objective,
        sdr.relaxed_objective
    );
}

#[test]
fn single_user_beam_follows_target_lobes() {
    let s = build_default_scenario(&ScenarioOverrides {
        k_users: Some(1),
        targets_deg: Some(vec![-30.0, 30.0]),
        ae_angle_deg: Some(30.0),
        ..Default::default()
    })
    .unwrap()
    .with_seeded_channels();
    let t = SinrThresholds::from_db(1, 5.0, 0.0, 0.0).unwrap();
    let sol = solve_robust(
        &s,
        &t,
        Method::Sdr,
        &CsiMode::Perfect,
        &Stage1Options::default(),
    )
    .unwrap();
    let pattern = crate::metrics::beampattern(&sol.covariances.total, &s.grid_rad(), s.spacing);
    let at = |deg: f64| {
        pattern[s
            .grid_deg
            .iter()
            .position(|g| (g - deg).abs() < 1e-9)
            .unwrap()]
    };
    let sidelobe = at(0.0).max(at(-80.0)).max(at(80.0));
    assert!(at(-30.0) > 3.0 * sidelobe, "{} vs {sidelobe}", at(-30.0));
    assert!(at(30.0) > 3.0 * sidelobe, "{} vs {sidelobe}", at(30.0));
}

#[test]
fn unreachable_user_threshold_is_infeasible() {
    let s = default_scenario();
    let t = SinrThresholds::from_db(s.k_users, 60.0, 2.0, 2.0).unwrap();
    let err = solve_robust(
        &s,
        &t,
        Method::Sdr,
        &CsiMode::Perfect,
        &Stage1Options::default(),
    )
    .unwrap_err();
    assert!(
        matches!(err, Error::Infeasible(ref m) if m.contains("reachable")),
        "{err:?}"
    );
}

#[test]
fn jointly_unreachable_thresholds_are_certified_by_the_solver() {
    // each user alone could reach 0.9 of its bound, both at once cannot
    let s = default_scenario();
    let bound = (0..s.k_users)
        .map(|k| s.p_budget * s.h_users[k].norm_squared() / s.user_floor(k))
        .fold(f64::INFINITY, f64::min);
    let t =
        SinrThresholds::new(vec![0.9 * bound; s.k_users], db_to_lin(2.0), db_to_lin(2.0)).unwrap();
    for method in [Method::Sdr, Method::Zf] {
        let err =
            solve_robust(&s, &t, method, &CsiMode::Perfect, &Stage1Options::default()).unwrap_err();
        assert!(
            matches!(err, Error::Infeasible(ref m) if !m.contains("reachable")),
            "{method}: {err:?}"
        );
    }
}

#[test]
fn zf_rejects_square_channel() {
    let s = build_default_scenario(&ScenarioOverrides {
        m: Some(2),
        k_users: Some(2),
        ..Default::default()
    })
    .unwrap()
    .with_seeded_channels();
    let t = SinrThresholds::from_db(2, 0.0, 2.0, 2.0).unwrap();
    let err = solve_robust(
        &s,
        &t,
        Method::Zf,
        &CsiMode::Perfect,
        &Stage1Options::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::UnsupportedShape(_)), "{err:?}");
}

#[test]
fn zf_recover_on_synthetic_covariances() {
    let s = default_scenario();
    let h_u = s.h_u();
    let n = null_space_basis(&h_u).unwrap();
    // build R_c = W W^H with H_u W diagonal via W = H_u^+ diag(sqrt(rho))
    let pinv = h_u.clone().pseudo_inverse(1e-12).unwrap();
    let rho = [0.4f64, 0.9];
    let w = &pinv
        * CMat::from_diagonal(&CVec::from_iterator(
            2,
            rho.iter().map(|r| c64(r.sqrt(), 0.0)),
        ));
    let rc = HermitianMatrix::gram(&w);
    let g = CMat::from_fn(s.m - s.k_users, 2, |i, j| {
        c64((i + j) as f64 * 0.1, (i as f64 - j as f64) * 0.05)
    });
    let rs = HermitianMatrix::gram(&(&n * g));
    let total = &rc + &rs;
    let bf = zf_recover(&rc, &total, &h_u).unwrap();
    let hw = &h_u * &bf.w_c;
    assert!(hw[(0, 1)].norm() < 1e-10);
    for (i, r) in rho.iter().enumerate() {
        assert!((hw[(i, i)].norm_sqr() - r).abs() < 1e-10);
    }
    assert!((&h_u * &bf.w_s).norm() < 1e-8);
    assert!((&bf.total() - &total).frobenius() < 1e-10);
}

#[test]
fn objective_matches_linear_decomposition() {
    // the program's objective at the optimum equals the geometry objective
    let s = default_scenario();
    let t = thresholds(&s);
    let bundle = build_bundle(&s, &t, &CsiMode::Perfect, PeForm::WithVariance).unwrap();
    let ideal = ideal_for(&s, &CsiMode::Perfect).unwrap();
    let geo = SensingGeometry::new(&s, &ideal).unwrap();
    let (p, _, total, d1) = sdr_program(&s, &bundle, &geo);
    let rep = solve(&p, &SolveOptions::default()).unwrap();
    let r = p.block_value(&rep.solution, total);
    let d = p.scalar_value(&rep.solution, d1);
    assert!((rep.objective - geo.objective(&r, d)).abs() < 1e-9 * rep.objective.abs().max(1.0));
}

#[test]
fn robust_ae_mode_has_wider_ideal_lobe() {
    let s = default_scenario();
    let a = ideal_for(&s, &CsiMode::Perfect).unwrap();
    let b = ideal_for(&s, &CsiMode::AeUncertain { delta_deg: 3.0 }).unwrap();
    let ones = |v: &[f64]| v.iter().filter(|x| **x > 0.5).count();
    assert_eq!(ones(&b.values), ones(&a.values) + 6);
}

#[test]
fn pe_directional_mode_solves() {
    let s = default_scenario();
    let t = SinrThresholds::new(vec![db_to_lin(12.0); 2], db_to_lin(2.0), db_to_lin(2.0)).unwrap();
    let csi = CsiMode::PeUnknown { grid_deg: None };
    let sol = solve_robust(&s, &t, Method::Sdr, &csi, &Stage1Options::default()).unwrap();
    let bundle = build_bundle(&s, &t, &csi, PeForm::WithVariance).unwrap();
    assert!(bundle.max_violation(&sol.covariances) < 1e-6);
}

#[test]
fn method_parses() {
    assert_eq!("ZF".parse::<Method>().unwrap(), Method::Zf);
    assert_eq!(Method::Sdr.to_string(), "sdr");
    assert!("mmse".parse::<Method>().is_err());
}
