use super::*;
use crate::constraints::{build_bundle, CsiMode};
use crate::linalg::CVec;
use crate::rng;
use crate::scenario::{build_default_scenario, cn_vector, ScenarioOverrides};
use crate::stage1::{solve_robust, Method, Stage1Options};
use proptest::prelude::*;

fn default_solution(method: Method) -> (Scenario, Stage1Solution) {
    let s = build_default_scenario(&ScenarioOverrides::default())
        .unwrap()
        .with_seeded_channels();
    let t = SinrThresholds::from_db(s.k_users, 12.0, 2.0, 2.0).unwrap();
    let sol = solve_robust(&s, &t, method, &CsiMode::Perfect, &Stage1Options::default()).unwrap();
    (s, sol)
}

fn random_psd(g: &mut rand_chacha::ChaCha8Rng, m: usize, rank: usize) -> HermitianMatrix {
    let w = CMat::from_columns(
        &(0..rank)
            .map(|_| cn_vector(g, m, 1.0))
            .collect::<Vec<CVec>>(),
    );
    HermitianMatrix::gram(&w)
}

#[test]
fn single_user_boundary_optimum() {
    let bounds = ThresholdBounds {
        eps_u_max: vec![3.0],
        eps_a_min: 1.0,
        eps_p_min: 1.0,
    };
    let t = SinrThresholds::new(vec![1.0], 2.0, 2.0).unwrap();
    let state = ScaState::initial(t, &bounds);
    let next = sca_step(&state, &bounds).unwrap();
    assert!((next.omega - (4f64.log2() - 3f64.log2())).abs() < 1e-15);
    assert_eq!(next.thresholds.eps_u, vec![3.0]);
    assert_eq!(next.eps_e_anchor, 2.0);
}

#[test]
fn anchor_fixed_point() {
    let bounds = ThresholdBounds {
        eps_u_max: vec![5.0, 7.0],
        eps_a_min: 0.3,
        eps_p_min: 0.2,
    };
    let t = bounds.thresholds().unwrap();
    let a = sca_step(&ScaState::initial(t, &bounds), &bounds).unwrap();
    let b = sca_step(&a, &bounds).unwrap();
    assert_eq!(a.eps_e_anchor, b.eps_e_anchor);
    assert_eq!(a.thresholds, b.thresholds);
    assert_eq!(b.iteration, 2);
}

#[test]
fn taylor_bound_holds_on_grid() {
    for i in 0..200 {
        let anchor = 0.01 * 1.05f64.powi(i);
        for j in 0..200 {
            let e = 0.005 * 1.06f64.powi(j);
            let upper = (1.0 + anchor).log2() + (e - anchor) / ((1.0 + anchor) * LN_2);
            assert!((1.0 + e).log2() <= upper + 1e-12, "anchor {anchor} e {e}");
        }
    }
}

#[test]
fn pe_bisection_matches_dense_sweep() {
    let mut g = rng::stream(11, 0);
    for _ in 0..5 {
        let r_c = random_psd(&mut g, 6, 2).scale(0.1);
        let r_s = random_psd(&mut g, 6, 6).scale(0.05);
        let kappa = 0.5;
        let got = pe_lmi_min(&r_c, &r_s, kappa).unwrap();
        // first grid point where the constraint holds
        let step = 1e-7;
        let f = |e: f64| (&r_c - &r_s.scale(e)).lambda_max() - kappa * e;
        let mut e = ((got - 1e-5) / step).floor() * step;
        while f(e) > 0.0 {
            e += step;
        }
        assert!((e - got).abs() <= 1e-6, "{e} vs {got}");
    }
}

#[test]
fn zero_leakage_gives_zero_minimum() {
    let r_c = HermitianMatrix::zeros(4);
    let r_s = HermitianMatrix::identity(4);
    assert_eq!(pe_lmi_min(&r_c, &r_s, 1.0).unwrap(), 0.0);
    let c = DirectionalConstraint {
        angle_deg: 0.0,
        a: CVec::from_element(4, c64(1.0, 0.0)),
        eps: 1.0,
        noise_over_beta2: 0.01,
    };
    assert_eq!(directional_min(&c, &r_c, &r_s).unwrap(), 0.0);
}

#[test]
fn stage2_on_sdr_solution_returns_feasible_thresholds() {
    let (s, sol) = default_solution(Method::Sdr);
    let out = run_stage2(&sol, &s, &Stage2Options::default()).unwrap();
    assert!(out.converged);
    assert!(out.history.len() <= 20);
    for w in out.history.windows(2) {
        assert!(w[1].omega >= w[0].omega - 1e-9);
    }
    // the fixed covariances satisfy the new thresholds
    let bundle = build_bundle(&s, &out.thresholds, &sol.csi_mode, sol.pe_form).unwrap();
    assert!(
        bundle.max_violation(&sol.covariances) <= 1e-6,
        "{}",
        bundle.max_violation(&sol.covariances)
    );
    assert!(
        out.omega >= sol.thresholds.omega() - 1e-9,
        "{} < {}",
        out.omega,
        sol.thresholds.omega()
    );
    for (k, e) in out.thresholds.eps_u.iter().enumerate() {
        let sinr = crate::metrics::sinr_user(&sol.covariances, &s, k).unwrap();
        assert!((sinr - e).abs() <= 1e-9 * sinr);
    }
}

#[test]
fn infinite_tolerance_runs_one_iteration() {
    let (s, sol) = default_solution(Method::Sdr);
    let out = run_stage2(
        &sol,
        &s,
        &Stage2Options {
            iota2: f64::INFINITY,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(out.history.len(), 1);
}

#[cfg(feature = "clarabel")]
#[test]
fn conic_subproblem_matches_boundary_solution() {
    for method in [Method::Sdr, Method::Zf] {
        let (s, sol) = default_solution(method);
        let bounds = threshold_bounds(&sol, &s).unwrap();
        for anchor in [0.5, bounds.eps_e_min(), 3.0] {
            let p7 = solve_p7(&sol, &s, anchor, &SolveOptions::default()).unwrap();
            let oracle = linearized_omega(&bounds, anchor);
            assert!(
                (p7.omega - oracle).abs() <= 1e-6,
                "{method}: {} vs {oracle}",
                p7.omega
            );
            assert!(
                (p7.thresholds.eps_e() - bounds.eps_e_min()).abs()
                    <= 1e-5 * (1.0 + bounds.eps_e_min())
            );
        }
    }
}

#[test]
fn history_csv_format() {
    let h = vec![ScaRecord {
        iteration: 1,
        omega: 0.5,
        eps_e: 2.0,
    }];
    let mut buf = Vec::new();
    write_history_csv(&h, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(
        text,
        "iteration,omega,eps_e\n1,5.000000000000e-1,2.000000000000e0\n"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bisection_root_is_tight(seed in 0u64..10_000, kappa in 0.05f64..5.0) {
        let mut g = rng::stream(seed, 3);
        let r_c = random_psd(&mut g, 4, 2);
        let r_s = random_psd(&mut g, 4, 4);
        let e = pe_lmi_min(&r_c, &r_s, kappa).unwrap();
        let f = |e: f64| (&r_c - &r_s.scale(e)).lambda_max() - kappa * e;
        prop_assert!(f(e) <= 1e-10);
        prop_assert!(e == 0.0 || f(e * (1.0 - 1e-9)) > -1e-9);
    }
}
