use super::*;

fn tiny(kind: ExperimentKind, sweep: Axis) -> ExperimentSpec {
    ExperimentSpec {
        trials: 1,
        method: MethodSel::Sdr,
        kind,
        sweep,
        series: None,
        ..preset("fig3").unwrap()
    }
}

#[test]
fn every_preset_validates() {
    for name in PRESETS {
        let spec = preset(name).unwrap();
        let d = validate(&spec, false);
        assert!(d.is_ok(), "{name}: {:?}", d.errors);
        assert!(d.estimated_runtime_s > 0.0);
    }
    assert!(matches!(preset("fig11"), Err(Error::Config(_))));
}

#[test]
fn schema_errors_are_all_reported() {
    let mut spec = preset("fig3").unwrap();
    spec.scenario.tau = Some(2.0);
    spec.trials = 0;
    spec.sweep.values = vec![10.0, 6.0, 12.0];
    let d = validate(&spec, false);
    assert_eq!(d.errors.len(), 3, "{:?}", d.errors);
    assert!(d
        .errors
        .iter()
        .any(|e| e.contains("tau must be a probability")));
}

#[test]
fn unreachable_threshold_is_flagged() {
    let mut spec = tiny(
        ExperimentKind::Sensing,
        Axis {
            variable: Variable::EpsUDb,
            values: vec![60.0],
        },
    );
    spec.scenario.p_budget = Some(1.0);
    let d = validate(&spec, true);
    assert!(d.is_ok());
    assert!(
        d.warnings.iter().any(|w| w.contains("cannot reach 60 dB")),
        "{:?}",
        d.warnings
    );
    assert!(
        d.warnings
            .iter()
            .any(|w| w.contains("pre-flight sdr solve")),
        "{:?}",
        d.warnings
    );
}

#[test]
fn parameters_follow_axes() {
    let spec = preset("fig7").unwrap();
    let p = spec.params(Some(3.0), 14.0);
    assert_eq!(p.eps_u_db, 14.0);
    assert_eq!(p.csi, CsiMode::AeUncertain { delta_deg: 3.0 });
    assert_eq!(spec.params(Some(0.0), 6.0).csi, CsiMode::Perfect);
    assert_eq!(
        preset("fig4").unwrap().params(Some(16.0), 6.0).overrides.m,
        Some(16)
    );
    assert_ne!(spec.trial_seed(0), spec.trial_seed(1));
}

#[test]
fn manifest_and_bare_spec_both_parse() {
    let spec = preset("table3").unwrap();
    let bare = serde_json::to_string(&spec).unwrap();
    assert_eq!(Manifest::spec_from_json(&bare).unwrap(), spec);
    let manifest = Manifest {
        spec: spec.clone(),
        config_hash: spec.config_hash().unwrap(),
        git_describe: "x".into(),
        crate_version: "0".into(),
        wall_time_s: 1.0,
        workers: 1,
        tasks: 0,
        failed_tasks: 0,
        infeasible_tasks: 0,
        columns: vec![],
        outputs: vec![],
    };
    let text = serde_json::to_string(&manifest).unwrap();
    assert_eq!(Manifest::spec_from_json(&text).unwrap(), spec);
    assert_eq!(spec.config_hash().unwrap().len(), 64);
}

#[test]
fn exit_codes() {
    assert_eq!(exit_code(&Error::Config("x".into())), 2);
    assert_eq!(exit_code(&Error::Infeasible("x".into())), 3);
    assert_eq!(exit_code(&Error::Solver("x".into())), 4);
    assert_eq!("Both".parse::<MethodSel>().unwrap(), MethodSel::Both);
    assert!("qp".parse::<MethodSel>().is_err());
}

#[test]
fn beampattern_preset_writes_expected_columns_and_is_reproducible() {
    let spec = preset("fig2").unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_experiment(&spec, a.path(), 1).unwrap();
    run_experiment(&spec, b.path(), 1).unwrap();
    let text = std::fs::read_to_string(a.path().join("beampattern.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("angle_deg,sdr_db,zf_db,ideal"));
    assert_eq!(lines.count(), 181);
    for f in &ra.manifest.outputs {
        let x = std::fs::read(a.path().join(&f.path)).unwrap();
        let y = std::fs::read(b.path().join(&f.path)).unwrap();
        assert_eq!(x, y, "{}", f.path);
    }
    assert!(a.path().join("manifest.json").exists());
    assert_eq!(run_exit_code(&ra), 0);
}

#[test]
fn sensing_grows_with_threshold_and_users() {
    let mut spec = tiny(
        ExperimentKind::Sensing,
        Axis {
            variable: Variable::EpsUDb,
            values: vec![6.0, 14.0],
        },
    );
    spec.series = Some(Axis {
        variable: Variable::KUsers,
        values: vec![2.0, 4.0],
    });
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&spec, dir.path(), 1).unwrap();
    let l = |k: f64, e: f64| {
        report
            .rows
            .iter()
            .find(|r| r.series == Some(k) && r.sweep == e && r.status == "ok")
            .unwrap()
            .values[0]
    };
    assert!(l(2.0, 14.0) >= l(2.0, 6.0) - 1e-7);
    assert!(l(4.0, 14.0) >= l(4.0, 6.0) - 1e-7);
    assert!(l(4.0, 6.0) >= l(2.0, 6.0) - 1e-7);
    assert!(dir.path().join("summary_sdr_k_users2.csv").exists());
}

#[test]
fn infeasible_points_are_recorded_not_fatal() {
    let spec = tiny(
        ExperimentKind::Sensing,
        Axis {
            variable: Variable::EpsUDb,
            values: vec![12.0, 60.0],
        },
    );
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&spec, dir.path(), 1).unwrap();
    let status: Vec<&str> = report.rows.iter().map(|r| r.status.as_str()).collect();
    assert_eq!(status, ["ok", "infeasible"]);
    assert_eq!(report.manifest.infeasible_tasks, 1);
    assert_eq!(run_exit_code(&report), 0);
    let summary = std::fs::read_to_string(dir.path().join("summary_sdr.csv")).unwrap();
    assert!(
        summary
            .lines()
            .nth(2)
            .unwrap()
            .starts_with("60,NaN,0.000000000000e0,0,"),
        "{summary}"
    );
}
