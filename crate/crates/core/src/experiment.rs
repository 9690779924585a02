//! Batch experiments: specs, presets, validation and the runner that writes
//! CSV outputs plus a manifest.
//!
//! Every task is identified by (series point, sweep point, method, trial) and
//! draws its channels from a seed that depends only on the spec seed and the
//! trial index, so all sweep points of a trial see the same channels.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use web_time::Instant;

use log::{info, warn};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ao::{run_ao_tss_from, AoOptions};
use crate::constraints::{db_to_lin, CsiMode, SinrThresholds};
use crate::error::{Error, Result};
use crate::eval::{
    mc_secrecy, mle_angles, rmse, simulate_return, synthesize, target_response, write_summary_csv,
    MleOptions, SummaryRow,
};
use crate::metrics::{beampattern, beampattern_mse};
use crate::rng;
use crate::scenario::{build_default_scenario, Scenario, ScenarioOverrides};
use crate::stage1::{ideal_for, solve_robust, Method, Stage1Options};
use crate::stage2::Stage2Options;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSel {
    Sdr,
    Zf,
    Both,
}

impl MethodSel {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodSel::Sdr => vec![Method::Sdr],
            MethodSel::Zf => vec![Method::Zf],
            MethodSel::Both => vec![Method::Sdr, Method::Zf],
        }
    }
}

impl FromStr for MethodSel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sdr" => Ok(MethodSel::Sdr),
            "zf" => Ok(MethodSel::Zf),
            "both" => Ok(MethodSel::Both),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected sdr, zf or both)"
            ))),
        }
    }
}

/// Quantity varied along a sweep or series axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    EpsUDb,
    EpsADb,
    EpsPDb,
    KUsers,
    Antennas,
    Delta2,
    /// AE direction uncertainty in degrees; 0 means perfect AE knowledge.
    AeDeltaDeg,
    /// Receive SNR of the sensing return (RMSE experiments only).
    SnrDb,
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub variable: Variable,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Transmit beampattern of one design per method.
    Beampattern,
    /// Sensing objective `L` of the stage-1 design.
    Sensing,
    /// Beampattern MSE and `L` of the stage-1 design.
    SensingMse,
    /// MLE angle RMSE against receive SNR.
    Rmse,
    /// Stage-2 secrecy threshold per SCA iteration.
    Convergence,
    /// Monte-Carlo secrecy rate with and without the threshold stage.
    Secrecy,
    /// `|L_with - L_without|` between the two-stage and single-stage schemes.
    SensingGap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub scenario: ScenarioOverrides,
    pub sweep: Axis,
    /// Optional second axis; one summary file per series value.
    #[serde(default)]
    pub series: Option<Axis>,
    pub method: MethodSel,
    #[serde(default)]
    pub csi_mode: CsiMode,
    pub eps_u_db: f64,
    pub eps_a_db: f64,
    pub eps_p_db: f64,
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_iota1")]
    pub iota1: f64,
    #[serde(default = "default_iota2")]
    pub iota2: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    /// Snapshots per trial for RMSE experiments.
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    /// PE channel draws per trial for secrecy experiments.
    #[serde(default = "default_mc_draws")]
    pub mc_draws: u64,
    /// Sensing-gap tolerance reported in the gap summary.
    #[serde(default = "default_gap")]
    pub tolerance_gap: f64,
}

fn default_iota1() -> f64 {
    1e-3
}
fn default_iota2() -> f64 {
    1e-4
}
fn default_max_outer() -> usize {
    30
}
fn default_snapshots() -> usize {
    100
}
fn default_mc_draws() -> u64 {
    1000
}
fn default_gap() -> f64 {
    1e-3
}

pub const PRESETS: [&str; 10] = [
    "fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "fig10", "table3",
];

/// Desk-scale presets; `trials` can be raised from the command line.
pub fn preset(name: &str) -> Result<ExperimentSpec> {
    let eps_u = || Axis {
        variable: Variable::EpsUDb,
        values: vec![6.0, 8.0, 10.0, 12.0, 14.0, 16.0],
    };
    let base = |kind, sweep, series, method| ExperimentSpec {
        name: name.to_string(),
        kind,
        scenario: ScenarioOverrides::default(),
        sweep,
        series,
        method,
        csi_mode: CsiMode::Perfect,
        eps_u_db: 12.0,
        eps_a_db: 2.0,
        eps_p_db: 2.0,
        trials: 20,
        seed: 2024,
        iota1: default_iota1(),
        iota2: default_iota2(),
        max_outer: default_max_outer(),
        snapshots: default_snapshots(),
        mc_draws: default_mc_draws(),
        tolerance_gap: default_gap(),
    };
    let spec = match name {
        "fig2" => ExperimentSpec {
            trials: 1,
            ..base(
                ExperimentKind::Beampattern,
                Axis {
                    variable: Variable::EpsUDb,
                    values: vec![16.0],
                },
                None,
                MethodSel::Both,
            )
        },
        "fig3" => base(
            ExperimentKind::Sensing,
            eps_u(),
            Some(Axis {
                variable: Variable::KUsers,
                values: vec![2.0, 4.0],
            }),
            MethodSel::Both,
        ),
        "fig4" => base(
            ExperimentKind::Sensing,
            eps_u(),
            Some(Axis {
                variable: Variable::Antennas,
                values: vec![10.0, 16.0],
            }),
            MethodSel::Both,
        ),
        "fig5" => base(
            ExperimentKind::SensingMse,
            Axis {
                variable: Variable::Delta2,
                values: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            },
            None,
            MethodSel::Both,
        ),
        "fig6" => ExperimentSpec {
            trials: 100,
            ..base(
                ExperimentKind::Rmse,
                Axis {
                    variable: Variable::SnrDb,
                    values: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
                },
                None,
                MethodSel::Both,
            )
        },
        "fig7" => base(
            ExperimentKind::Sensing,
            eps_u(),
            Some(Axis {
                variable: Variable::AeDeltaDeg,
                values: vec![0.0, 1.0, 3.0, 5.0],
            }),
            MethodSel::Both,
        ),
        "fig8" => ExperimentSpec {
            csi_mode: CsiMode::PeUnknown { grid_deg: None },
            trials: 10,
            ..base(
                ExperimentKind::Sensing,
                eps_u(),
                Some(Axis {
                    variable: Variable::EpsPDb,
                    values: vec![2.0, 0.0, -2.0],
                }),
                MethodSel::Both,
            )
        },
        "fig9" => ExperimentSpec {
            trials: 1,
            ..base(
                ExperimentKind::Convergence,
                Axis {
                    variable: Variable::EpsADb,
                    values: vec![0.0, 2.0, 4.0],
                },
                None,
                MethodSel::Both,
            )
        },
        "fig10" => base(
            ExperimentKind::Secrecy,
            Axis {
                variable: Variable::EpsUDb,
                values: vec![6.0, 10.0, 14.0, 16.0],
            },
            None,
            MethodSel::Both,
        ),
        "table3" => base(
            ExperimentKind::SensingGap,
            Axis {
                variable: Variable::EpsUDb,
                values: vec![6.0, 10.0, 14.0],
            },
            None,
            MethodSel::Both,
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (available: {})",
                PRESETS.join(", ")
            )));
        }
    };
    Ok(spec)
}

/// Parameters of one task after applying the sweep and series values.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskParams {
    pub overrides: ScenarioOverrides,
    pub eps_u_db: f64,
    pub eps_a_db: f64,
    pub eps_p_db: f64,
    pub csi: CsiMode,
    pub snr_db: Option<f64>,
}

impl ExperimentSpec {
    fn base_params(&self) -> TaskParams {
        TaskParams {
            overrides: self.scenario.clone(),
            eps_u_db: self.eps_u_db,
            eps_a_db: self.eps_a_db,
            eps_p_db: self.eps_p_db,
            csi: self.csi_mode.clone(),
            snr_db: None,
        }
    }

    pub fn series_values(&self) -> Vec<Option<f64>> {
        match &self.series {
            Some(a) => a.values.iter().map(|v| Some(*v)).collect(),
            None => vec![None],
        }
    }

    /// Parameters at one (series, sweep) point.
    pub fn params(&self, series: Option<f64>, sweep: f64) -> TaskParams {
        let mut p = self.base_params();
        if let (Some(axis), Some(v)) = (&self.series, series) {
            apply(&mut p, axis.variable, v);
        }
        apply(&mut p, self.sweep.variable, sweep);
        p
    }

    pub fn ao_options(&self) -> AoOptions {
        AoOptions {
            iota1: self.iota1,
            max_outer: self.max_outer,
            stage1: Stage1Options::default(),
            stage2: Stage2Options {
                iota2: self.iota2,
                ..Default::default()
            },
            two_stage: true,
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex(&Sha256::digest(&bytes)))
    }

    /// Channel seed of a trial; independent of the sweep and series point.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        rng::stream(self.seed, trial as u64).next_u64()
    }
}

fn apply(p: &mut TaskParams, var: Variable, v: f64) {
    match var {
        Variable::EpsUDb => p.eps_u_db = v,
        Variable::EpsADb => p.eps_a_db = v,
        Variable::EpsPDb => p.eps_p_db = v,
        Variable::KUsers => p.overrides.k_users = Some(v as usize),
        Variable::Antennas => p.overrides.m = Some(v as usize),
        Variable::Delta2 => p.overrides.delta2 = Some(v),
        Variable::AeDeltaDeg => {
            p.csi = if v == 0.0 {
                CsiMode::Perfect
            } else {
                CsiMode::AeUncertain { delta_deg: v }
            };
        }
        Variable::SnrDb => p.snr_db = Some(v),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl TaskParams {
    pub fn scenario(&self, seed: u64) -> Result<Scenario> {
        let o = ScenarioOverrides {
            rng_seed: Some(seed),
            ..self.overrides.clone()
        };
        Ok(build_default_scenario(&o)?.with_seeded_channels())
    }

    pub fn thresholds(&self, k_users: usize) -> Result<SinrThresholds> {
        SinrThresholds::from_db(k_users, self.eps_u_db, self.eps_a_db, self.eps_p_db)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    pub estimated_runtime_s: f64,
}

impl Diagnostics {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

fn is_integral(v: f64, min: f64) -> bool {
    v.is_finite() && v.fract() == 0.0 && v >= min
}

/// Schema checks (all violations are collected) plus a feasibility pre-flight.
///
/// The pre-flight compares each user's interference-free SINR bound with the
/// largest requested threshold, then solves the first trial at the most
/// demanding sweep point when `solve` is set.
pub fn validate(spec: &ExperimentSpec, solve: bool) -> Diagnostics {
    let mut d = Diagnostics::default();
    if spec.name.trim().is_empty() {
        d.errors.push("name must not be empty".into());
    }
    if spec.trials == 0 {
        d.errors.push("trials must be at least 1".into());
    }
    for (label, axis) in
        std::iter::once(("sweep", &spec.sweep)).chain(spec.series.as_ref().map(|a| ("series", a)))
    {
        if axis.values.is_empty() {
            d.errors.push(format!("{label} has no values"));
        }
        if axis.values.iter().any(|v| !v.is_finite()) {
            d.errors.push(format!("{label} values must be finite"));
        }
        if !axis.values.windows(2).all(|w| w[0] < w[1])
            && !axis.values.windows(2).all(|w| w[0] > w[1])
        {
            d.errors
                .push(format!("{label} values must be strictly monotone"));
        }
        match axis.variable {
            Variable::KUsers | Variable::Antennas
                if !axis.values.iter().all(|&v| is_integral(v, 1.0)) =>
            {
                d.errors.push(format!(
                    "{label} {} values must be positive integers",
                    axis.variable
                ));
            }
            Variable::Delta2 | Variable::AeDeltaDeg if axis.values.iter().any(|&v| v < 0.0) => {
                d.errors.push(format!(
                    "{label} {} values must be nonnegative",
                    axis.variable
                ));
            }
            Variable::SnrDb if spec.kind != ExperimentKind::Rmse => {
                d.errors.push(format!(
                    "{label} over snr_db only applies to rmse experiments"
                ));
            }
            _ => {}
        }
    }
    if spec.kind == ExperimentKind::Rmse && spec.sweep.variable != Variable::SnrDb {
        d.errors.push("rmse experiments sweep snr_db".into());
    }
    for (label, v) in [
        ("eps_u_db", spec.eps_u_db),
        ("eps_a_db", spec.eps_a_db),
        ("eps_p_db", spec.eps_p_db),
    ] {
        if !v.is_finite() {
            d.errors.push(format!("{label} must be finite"));
        }
    }
    if !(spec.iota1 >= 0.0) || !(spec.iota2 >= 0.0) {
        d.errors.push("iota1 and iota2 must be nonnegative".into());
    }
    if spec.max_outer == 0 {
        d.errors.push("max_outer must be at least 1".into());
    }
    if spec.snapshots == 0 {
        d.errors.push("snapshots must be at least 1".into());
    }
    if spec.mc_draws == 0 {
        d.errors.push("mc_draws must be at least 1".into());
    }
    let o = &spec.scenario;
    if let Some(t) = o.tau {
        if !(t > 0.0 && t < 1.0) {
            d.errors
                .push(format!("tau must be a probability in (0, 1), got {t}"));
        }
    }
    for (label, v) in [
        ("p_budget", o.p_budget),
        ("noise_c", o.noise_c),
        ("noise_s", o.noise_s),
        ("noise_p", o.noise_p),
        ("pe_variance", o.pe_variance),
        ("grid_step_deg", o.grid_step_deg),
        ("mainlobe_width_deg", o.mainlobe_width_deg),
    ] {
        if let Some(v) = v {
            if !(v > 0.0 && v.is_finite()) {
                d.errors.push(format!("{label} must be positive, got {v}"));
            }
        }
    }
    // anything the scenario builder still rejects
    let points: Vec<TaskParams> = spec
        .series_values()
        .into_iter()
        .flat_map(|s| spec.sweep.values.iter().map(move |&v| (s, v)))
        .map(|(s, v)| spec.params(s, v))
        .collect();
    if d.errors.is_empty() {
        for p in &points {
            if let Err(e) = build_default_scenario(&p.overrides) {
                d.errors.push(e.to_string());
                break;
            }
        }
    }
    if !d.errors.is_empty() {
        return d;
    }
    d.estimated_runtime_s = estimate_runtime(spec, &points);
    if let Err(e) = preflight(spec, &points, solve, &mut d) {
        d.warnings.push(format!("pre-flight aborted: {e}"));
    }
    d
}

fn preflight(
    spec: &ExperimentSpec,
    points: &[TaskParams],
    solve: bool,
    d: &mut Diagnostics,
) -> Result<()> {
    let seed = spec.trial_seed(0);
    let hardest = points
        .iter()
        .max_by(|a, b| a.eps_u_db.total_cmp(&b.eps_u_db))
        .ok_or_else(|| Error::Config("no sweep points".into()))?;
    let s = hardest.scenario(seed)?;
    let eps_u = db_to_lin(hardest.eps_u_db);
    for k in 0..s.k_users {
        let bound = s.p_budget * s.h_users[k].norm_squared() / s.user_floor(k);
        if bound < eps_u {
            d.warnings.push(format!(
                "user {k} of trial 0 cannot reach {} dB even without interference (bound {:.1} dB); expect infeasible trials",
                hardest.eps_u_db,
                10.0 * bound.log10()
            ));
        }
    }
    if solve && spec.kind != ExperimentKind::Beampattern {
        let t = hardest.thresholds(s.k_users)?;
        for method in spec.method.methods() {
            if let Err(e) = solve_robust(&s, &t, method, &hardest.csi, &Stage1Options::default()) {
                d.warnings.push(format!(
                    "pre-flight {method} solve at eps_u = {} dB failed: {e}",
                    hardest.eps_u_db
                ));
            }
        }
    }
    Ok(())
}

/// Rough wall time on one core, calibrated on the default 10-antenna scenario.
fn estimate_runtime(spec: &ExperimentSpec, points: &[TaskParams]) -> f64 {
    let per_solve = |p: &TaskParams| {
        let m = p.overrides.m.unwrap_or(10) as f64;
        let dir = match &p.csi {
            CsiMode::PeUnknown { .. } => 3.0,
            _ => 1.0,
        };
        0.4 * (m / 10.0).powi(3) * dir
    };
    let solves_per_task = match spec.kind {
        ExperimentKind::Sensing | ExperimentKind::SensingMse | ExperimentKind::Beampattern => 1.0,
        ExperimentKind::Rmse => 1.0 / spec.sweep.values.len() as f64,
        ExperimentKind::Convergence | ExperimentKind::Secrecy | ExperimentKind::SensingGap => 4.0,
    };
    let n = spec.trials as f64 * spec.method.methods().len() as f64;
    points.iter().map(per_solve).sum::<f64>() * solves_per_task * n
}

/// One row of the per-trial output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub series: Option<f64>,
    pub sweep: f64,
    pub method: Method,
    pub trial: usize,
    pub seed: u64,
    pub status: String,
    /// Named values, in a fixed per-kind order.
    pub values: Vec<f64>,
}

/// Value column names per experiment kind.
pub fn value_columns(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::Beampattern => &["l_value"],
        ExperimentKind::Sensing => &["l_value"],
        ExperimentKind::SensingMse => &["l_value", "beampattern_mse"],
        ExperimentKind::Rmse => &["rmse_deg"],
        ExperimentKind::Convergence => &["omega_final", "sca_iterations"],
        ExperimentKind::Secrecy => &["cs_two_stage", "cs_single_stage", "pe_ok_rate"],
        ExperimentKind::SensingGap => &["l_two_stage", "l_single_stage", "gap"],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ExperimentSpec,
    pub config_hash: String,
    pub git_describe: String,
    pub crate_version: String,
    pub wall_time_s: f64,
    pub workers: usize,
    pub tasks: usize,
    pub failed_tasks: usize,
    pub infeasible_tasks: usize,
    /// Column legend shared by all CSV files.
    pub columns: Vec<String>,
    pub outputs: Vec<OutputFile>,
}

impl Manifest {
    /// Accepts either a manifest or a bare spec.
    pub fn spec_from_json(text: &str) -> Result<ExperimentSpec> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        if v.get("config_hash").is_some() {
            Ok(serde_json::from_value::<Manifest>(v)?.spec)
        } else {
            Ok(serde_json::from_value(v)?)
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Task {
    series_idx: usize,
    sweep_idx: usize,
    method: Method,
    trial: usize,
}

/// Per-task output: trial rows plus optional extra CSV lines (beampattern,
/// convergence history) keyed by file name.
#[derive(Clone, Debug, Default)]
struct TaskOutput {
    rows: Vec<TrialRow>,
    extra: Vec<(String, Vec<String>)>,
}

fn status_of(e: &Error) -> &'static str {
    match e {
        Error::Infeasible(_) | Error::Stage2Infeasible(_) => "infeasible",
        Error::Solver(_) => "solver_error",
        _ => "error",
    }
}

fn tasks(spec: &ExperimentSpec) -> Vec<Task> {
    let mut out = Vec::new();
    let n_series = spec.series_values().len();
    // RMSE tasks cover all SNR points at once so they share one design
    let n_sweep = if spec.kind == ExperimentKind::Rmse {
        1
    } else {
        spec.sweep.values.len()
    };
    for series_idx in 0..n_series {
        for method in spec.method.methods() {
            for sweep_idx in 0..n_sweep {
                for trial in 0..spec.trials {
                    out.push(Task {
                        series_idx,
                        sweep_idx,
                        method,
                        trial,
                    });
                }
            }
        }
    }
    out
}

fn row(spec: &ExperimentSpec, t: &Task, sweep: f64, status: &str, values: Vec<f64>) -> TrialRow {
    TrialRow {
        series: spec.series_values()[t.series_idx],
        sweep,
        method: t.method,
        trial: t.trial,
        seed: spec.trial_seed(t.trial),
        status: status.to_string(),
        values,
    }
}

fn run_task(spec: &ExperimentSpec, t: &Task) -> TaskOutput {
    let series = spec.series_values()[t.series_idx];
    let sweep = spec.sweep.values[t.sweep_idx];
    let ncols = value_columns(spec.kind).len();
    let failed = |e: &Error, sweep: f64| {
        warn!("{} task {:?} at sweep {sweep}: {e}", spec.name, t);
        row(spec, t, sweep, status_of(e), vec![f64::NAN; ncols])
    };
    match run_task_inner(spec, t, series, sweep) {
        Ok(out) => out,
        Err(e) if spec.kind == ExperimentKind::Rmse => TaskOutput {
            rows: spec.sweep.values.iter().map(|&v| failed(&e, v)).collect(),
            extra: vec![],
        },
        Err(e) => TaskOutput {
            rows: vec![failed(&e, sweep)],
            extra: vec![],
        },
    }
}

fn run_task_inner(
    spec: &ExperimentSpec,
    t: &Task,
    series: Option<f64>,
    sweep: f64,
) -> Result<TaskOutput> {
    let p = spec.params(series, sweep);
    let seed = spec.trial_seed(t.trial);
    let s = p.scenario(seed)?;
    let thresholds = p.thresholds(s.k_users)?;
    let s1 = Stage1Options::default();
    let mut out = TaskOutput::default();
    match spec.kind {
        ExperimentKind::Sensing | ExperimentKind::SensingMse => {
            let sol = solve_robust(&s, &thresholds, t.method, &p.csi, &s1)?;
            let mut values = vec![sol.objective];
            if spec.kind == ExperimentKind::SensingMse {
                let ideal = ideal_for(&s, &p.csi)?;
                values.push(beampattern_mse(
                    &sol.covariances.total,
                    sol.delta1,
                    &ideal,
                    s.spacing,
                ));
            }
            out.rows.push(row(spec, t, sweep, "ok", values));
        }
        ExperimentKind::Beampattern => {
            let sol = solve_robust(&s, &thresholds, t.method, &p.csi, &s1)?;
            let ideal = ideal_for(&s, &p.csi)?;
            let bp = beampattern(&sol.covariances.total, &s.grid_rad(), s.spacing);
            let lines = s
                .grid_deg
                .iter()
                .zip(&bp)
                .zip(&ideal.values)
                .map(|((a, v), i)| format!("{a},{:.12e},{i}", 10.0 * v.max(1e-30).log10()))
                .collect();
            out.extra.push((format!("{}", t.method), lines));
            out.rows
                .push(row(spec, t, sweep, "ok", vec![sol.objective]));
        }
        ExperimentKind::Rmse => {
            let sol = solve_robust(&s, &thresholds, t.method, &p.csi, &s1)?;
            let mut g = rng::stream(seed, 1);
            let batch = synthesize(&sol.beamformers, spec.snapshots, &mut g)?;
            let response = target_response(s.m, s.spacing, &s.targets_deg);
            let mle = MleOptions {
                refine: true,
                ..Default::default()
            };
            for &snr in &spec.sweep.values {
                // paired noise: the same stream per trial at every SNR
                let mut noise = rng::stream(seed, 2);
                let y =
                    simulate_return(&batch, &sol.covariances.total, &response, snr, &mut noise)?;
                let est = mle_angles(&y, s.n_targets(), &s.grid_deg, s.spacing, &mle)?;
                out.rows
                    .push(row(spec, t, snr, "ok", vec![rmse(&est, &s.targets_deg)?]));
            }
        }
        ExperimentKind::Convergence => {
            let sol = solve_robust(&s, &thresholds, t.method, &p.csi, &s1)?;
            let st = crate::stage2::run_stage2(&sol, &s, &spec.ao_options().stage2)?;
            let lines = st
                .history
                .iter()
                .map(|h| format!("{},{:.12e},{:.12e}", h.iteration, h.omega, h.eps_e))
                .collect();
            out.extra.push((format!("{}", t.method), lines));
            out.rows.push(row(
                spec,
                t,
                sweep,
                "ok",
                vec![st.omega, st.history.len() as f64],
            ));
        }
        ExperimentKind::Secrecy | ExperimentKind::SensingGap => {
            let first = solve_robust(&s, &thresholds, t.method, &p.csi, &s1)?;
            let baseline = first.clone();
            let ao = run_ao_tss_from(&s, first, &spec.ao_options())?;
            if spec.kind == ExperimentKind::SensingGap {
                let l_with = ao.solution.objective;
                let l_without = baseline.objective;
                out.rows.push(row(
                    spec,
                    t,
                    sweep,
                    "ok",
                    vec![l_with, l_without, (l_with - l_without).abs()],
                ));
            } else {
                let mut g = rng::stream(seed, 3);
                let with = mc_secrecy(
                    &ao.solution.covariances,
                    &s,
                    ao.thresholds.eps_p,
                    spec.mc_draws,
                    &mut g,
                )?;
                let mut g = rng::stream(seed, 3);
                let without = mc_secrecy(
                    &baseline.covariances,
                    &s,
                    baseline.thresholds.eps_p,
                    spec.mc_draws,
                    &mut g,
                )?;
                out.rows.push(row(
                    spec,
                    t,
                    sweep,
                    "ok",
                    vec![with.mean_cs, without.mean_cs, with.pe_ok_rate],
                ));
            }
        }
    }
    Ok(out)
}

/// Runs tasks on up to `workers` threads; results come back in task order.
fn execute(spec: &ExperimentSpec, tasks: &[Task], workers: usize) -> Result<Vec<TaskOutput>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(|| tasks.par_iter().map(|t| run_task(spec, t)).collect()))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        Ok(tasks.iter().map(|t| run_task(spec, t)).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub manifest: Manifest,
    pub rows: Vec<TrialRow>,
}

impl RunReport {
    pub fn all_failed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.status != "ok")
    }
}

/// Runs every task and writes `trials.csv`, one `summary_<method>[_<series>].csv`
/// per method and series value, kind-specific extras and `manifest.json`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path, workers: usize) -> Result<RunReport> {
    let d = validate(spec, false);
    if !d.is_ok() {
        return Err(Error::Config(format!(
            "{}: {}",
            spec.name,
            d.errors.join("; ")
        )));
    }
    let start = Instant::now();
    fs::create_dir_all(out_dir)?;
    let tasks = tasks(spec);
    info!(
        "{}: {} tasks on {} worker(s)",
        spec.name,
        tasks.len(),
        workers
    );
    let results = execute(spec, &tasks, workers)?;
    let rows: Vec<TrialRow> = results
        .iter()
        .flat_map(|r| r.rows.iter().cloned())
        .collect();

    let mut outputs = Vec::new();
    outputs.push(write_file(
        out_dir,
        "trials.csv",
        &trials_csv(spec, &rows)?,
    )?);
    for (name, bytes) in summaries(spec, &rows)? {
        outputs.push(write_file(out_dir, &name, &bytes)?);
    }
    for (name, bytes) in extras(spec, &tasks, &results)? {
        outputs.push(write_file(out_dir, &name, &bytes)?);
    }

    let failed = rows.iter().filter(|r| r.status != "ok").count();
    let infeasible = rows.iter().filter(|r| r.status == "infeasible").count();
    let mut columns: Vec<String> = ["series", "sweep", "method", "trial", "seed", "status"]
        .map(String::from)
        .to_vec();
    columns.extend(value_columns(spec.kind).iter().map(|c| c.to_string()));
    let manifest = Manifest {
        spec: spec.clone(),
        config_hash: spec.config_hash()?,
        git_describe: git_describe(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
        workers,
        tasks: tasks.len(),
        failed_tasks: failed,
        infeasible_tasks: infeasible,
        columns,
        outputs,
    };
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(RunReport { manifest, rows })
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<OutputFile> {
    let path: PathBuf = dir.join(name);
    fs::write(&path, bytes)?;
    let rows = bytes
        .iter()
        .filter(|&&b| b == b'\n')
        .count()
        .saturating_sub(1);
    Ok(OutputFile {
        path: name.to_string(),
        sha256: hex(&Sha256::digest(bytes)),
        rows,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn trials_csv(spec: &ExperimentSpec, rows: &[TrialRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = vec!["series", "sweep", "method", "trial", "seed", "status"];
    header.extend(value_columns(spec.kind));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            fmt_opt(r.series),
            r.sweep.to_string(),
            r.method.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.status.clone(),
        ];
        rec.extend(r.values.iter().map(|v| format!("{v:.12e}")));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Summary of the first value column (the headline metric) per sweep point.
fn summaries(spec: &ExperimentSpec, rows: &[TrialRow]) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    for series in spec.series_values() {
        for method in spec.method.methods() {
            let cols = value_columns(spec.kind);
            for (ci, col) in cols.iter().enumerate() {
                let mut out = Vec::new();
                for &sweep in &spec.sweep.values {
                    let xs: Vec<f64> = rows
                        .iter()
                        .filter(|r| {
                            r.status == "ok"
                                && r.method == method
                                && r.series == series
                                && r.sweep == sweep
                        })
                        .map(|r| r.values[ci])
                        .collect();
                    out.push(SummaryRow::from_samples(sweep, &xs));
                }
                let mut name = format!("summary_{method}");
                if let Some(v) = series {
                    name.push_str(&format!(
                        "_{}{v}",
                        spec.series
                            .as_ref()
                            .map(|a| a.variable.to_string())
                            .unwrap_or_default()
                    ));
                }
                if cols.len() > 1 {
                    name.push_str(&format!("_{col}"));
                }
                name.push_str(".csv");
                let mut buf = Vec::new();
                write_summary_csv(&out, &mut buf)?;
                files.push((name, buf));
            }
        }
    }
    Ok(files)
}

fn extras(
    spec: &ExperimentSpec,
    tasks: &[Task],
    results: &[TaskOutput],
) -> Result<Vec<(String, Vec<u8>)>> {
    match spec.kind {
        ExperimentKind::Beampattern => {
            // one column per method, aligned on the grid of the first trial
            let mut per_method: Vec<(Method, Vec<String>)> = Vec::new();
            for (t, r) in tasks.iter().zip(results) {
                if t.trial == 0 && t.series_idx == 0 && t.sweep_idx == 0 {
                    if let Some((_, lines)) = r.extra.first() {
                        per_method.push((t.method, lines.clone()));
                    }
                }
            }
            let find = |m: Method| per_method.iter().find(|(x, _)| *x == m).map(|(_, l)| l);
            let base = per_method.first().map(|(_, l)| l.len()).unwrap_or(0);
            let mut text = String::from("angle_deg,sdr_db,zf_db,ideal\n");
            for i in 0..base {
                let pick = |m| find(m).map(|l: &Vec<String>| l[i].split(',').collect::<Vec<_>>());
                let (sdr, zf) = (pick(Method::Sdr), pick(Method::Zf));
                let any = sdr
                    .as_ref()
                    .or(zf.as_ref())
                    .expect("at least one method ran");
                let col = |v: &Option<Vec<&str>>| {
                    v.as_ref().map(|x| x[1].to_string()).unwrap_or_default()
                };
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    any[0],
                    col(&sdr),
                    col(&zf),
                    any[2]
                ));
            }
            Ok(vec![("beampattern.csv".into(), text.into_bytes())])
        }
        ExperimentKind::Convergence => {
            let mut text = String::from("method,sweep,trial,iteration,omega,eps_e\n");
            for (t, r) in tasks.iter().zip(results) {
                for (_, lines) in &r.extra {
                    for l in lines {
                        text.push_str(&format!(
                            "{},{},{},{l}\n",
                            t.method, spec.sweep.values[t.sweep_idx], t.trial
                        ));
                    }
                }
            }
            Ok(vec![("convergence.csv".into(), text.into_bytes())])
        }
        ExperimentKind::SensingGap => {
            let mut text = String::from("method,sweep,mean_gap,n,tolerance,pass\n");
            for method in spec.method.methods() {
                for &sweep in &spec.sweep.values {
                    let gaps: Vec<f64> = results
                        .iter()
                        .flat_map(|r| &r.rows)
                        .filter(|r| r.status == "ok" && r.method == method && r.sweep == sweep)
                        .map(|r| r.values[2])
                        .collect();
                    let mean = SummaryRow::from_samples(sweep, &gaps).mean;
                    let pass = !gaps.is_empty() && mean <= spec.tolerance_gap;
                    text.push_str(&format!(
                        "{method},{sweep},{mean:.12e},{},{},{pass}\n",
                        gaps.len(),
                        spec.tolerance_gap
                    ));
                }
            }
            Ok(vec![("gap_check.csv".into(), text.into_bytes())])
        }
        _ => Ok(vec![]),
    }
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Process exit code for an error: 2 configuration, 3 infeasible, 4 solver or other failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Json(_) => 2,
        Error::Infeasible(_) | Error::Stage2Infeasible(_) => 3,
        _ => 4,
    }
}

/// Exit code for a completed run: nonzero only when no task succeeded.
pub fn run_exit_code(report: &RunReport) -> i32 {
    if !report.all_failed() {
        0
    } else if report.rows.iter().all(|r| r.status == "infeasible") {
        3
    } else {
        4
    }
}

#[cfg(test)]
mod tests;
