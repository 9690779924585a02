//! Alternating two-stage driver: stage 1 designs covariances for the current
//! thresholds, stage 2 raises the thresholds as far as those covariances allow.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::constraints::{CsiMode, SinrThresholds};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::solver::SolveSummary;
use crate::stage1::{solve_robust, Method, Stage1Options, Stage1Solution};
use crate::stage2::{run_stage2, Stage2Options};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AoOptions {
    pub iota1: f64,
    pub max_outer: usize,
    pub stage1: Stage1Options,
    pub stage2: Stage2Options,
    /// With stage 2 disabled the thresholds never move (the single-stage baseline).
    pub two_stage: bool,
}

impl Default for AoOptions {
    fn default() -> Self {
        Self {
            iota1: 1e-3,
            max_outer: 30,
            stage1: Stage1Options::default(),
            stage2: Stage2Options::default(),
            two_stage: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingReason {
    Tolerance,
    MaxIter,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub r1: usize,
    /// Sensing objective of the stage-1 solution.
    pub l_value: f64,
    /// Secrecy-rate threshold after stage 2, clamped at zero.
    pub c_s: f64,
    /// Same before clamping.
    pub omega: f64,
    /// Thresholds after stage 2 (the input of the next stage 1).
    pub thresholds: SinrThresholds,
    pub stage1: SolveSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AoTrace {
    pub records: Vec<OuterRecord>,
    pub converged: bool,
    pub stopping_reason: StoppingReason,
}

impl AoTrace {
    pub fn final_l(&self) -> Option<f64> {
        self.records.last().map(|r| r.l_value)
    }

    pub fn final_c_s(&self) -> Option<f64> {
        self.records.last().map(|r| r.c_s)
    }

    /// Largest increase of `L` and largest decrease of `C_s` between consecutive records.
    pub fn monotonicity_defects(&self) -> (f64, f64) {
        let mut l_up = 0f64;
        let mut cs_down = 0f64;
        for w in self.records.windows(2) {
            l_up = l_up.max(w[1].l_value - w[0].l_value);
            cs_down = cs_down.max(w[0].c_s - w[1].c_s);
        }
        (l_up, cs_down)
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        let (l, c) = self.monotonicity_defects();
        l <= slack && c <= slack
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let k = self.records.first().map_or(0, |r| r.thresholds.eps_u.len());
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["r1", "l_value", "c_s", "omega", "eps_a", "eps_p"]
            .map(String::from)
            .to_vec();
        header.extend((0..k).map(|i| format!("eps_u_{i}")));
        out.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.r1.to_string(),
                format!("{:.12e}", r.l_value),
                format!("{:.12e}", r.c_s),
                format!("{:.12e}", r.omega),
                format!("{:.12e}", r.thresholds.eps_a),
                format!("{:.12e}", r.thresholds.eps_p),
            ];
            row.extend(r.thresholds.eps_u.iter().map(|e| format!("{e:.12e}")));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AoOutcome {
    pub solution: Stage1Solution,
    pub thresholds: SinrThresholds,
    pub trace: AoTrace,
}

/// Runs the alternating optimization.
///
/// Infeasible initial thresholds surface as [`Error::Infeasible`]. A later
/// stage-1 failure stops the loop and returns the last good iterate.
pub fn run_ao_tss(
    scenario: &Scenario,
    init: &SinrThresholds,
    method: Method,
    csi: &CsiMode,
    opts: &AoOptions,
) -> Result<AoOutcome> {
    check_options(opts)?;
    let first = solve_robust(scenario, init, method, csi, &opts.stage1)?;
    run_ao_tss_from(scenario, first, opts)
}

/// Continues the alternation from an existing first stage-1 solution, whose
/// method, CSI mode and thresholds are reused.
pub fn run_ao_tss_from(
    scenario: &Scenario,
    first: Stage1Solution,
    opts: &AoOptions,
) -> Result<AoOutcome> {
    check_options(opts)?;
    let (method, csi) = (first.method, first.csi_mode.clone());
    let mut thresholds = first.thresholds.clone();
    let mut first = Some(first);
    let mut records: Vec<OuterRecord> = Vec::new();
    let mut best: Option<Stage1Solution> = None;
    let mut reason = StoppingReason::MaxIter;
    let mut converged = false;

    for r1 in 1..=opts.max_outer {
        let attempt = match first.take() {
            Some(s) => Ok(s),
            None => solve_robust(scenario, &thresholds, method, &csi, &opts.stage1),
        };
        let sol = match attempt {
            Ok(s) => s,
            Err(e) if best.is_some() && matches!(e, Error::Infeasible(_) | Error::Solver(_)) => {
                warn!("stage 1 failed at outer iteration {r1} ({e}); keeping the previous iterate");
                reason = StoppingReason::Infeasible;
                break;
            }
            Err(e) => return Err(e),
        };
        let (next, omega) = if opts.two_stage {
            let out = run_stage2(&sol, scenario, &opts.stage2)?;
            (out.thresholds, out.omega)
        } else {
            (thresholds.clone(), thresholds.omega())
        };
        records.push(OuterRecord {
            r1,
            l_value: sol.objective,
            c_s: omega.max(0.0),
            omega,
            thresholds: next.clone(),
            stage1: sol.report.clone(),
        });
        best = Some(sol);
        thresholds = next;
        if let [.., a, b] = records.as_slice() {
            if (b.c_s - a.c_s).abs() <= opts.iota1 {
                reason = StoppingReason::Tolerance;
                converged = true;
                break;
            }
        }
        if !opts.two_stage {
            // thresholds are fixed, so further passes would repeat this one
            reason = StoppingReason::Tolerance;
            converged = true;
            break;
        }
    }
    let solution = best.ok_or_else(|| Error::Invariant("no outer iteration completed".into()))?;
    Ok(AoOutcome {
        solution,
        thresholds,
        trace: AoTrace {
            records,
            converged,
            stopping_reason: reason,
        },
    })
}

fn check_options(opts: &AoOptions) -> Result<()> {
    if !(opts.iota1 >= 0.0) || opts.max_outer == 0 {
        return Err(Error::Config(format!(
            "need iota1 >= 0 and max_outer >= 1, got {} and {}",
            opts.iota1, opts.max_outer
        )));
    }
    Ok(())
}

/// `|L_with - L_without|` between the two-stage result and a single-stage solve.
pub fn sensing_gap(with_ts: &AoTrace, without_ts: &Stage1Solution) -> Result<f64> {
    let l = with_ts
        .final_l()
        .ok_or_else(|| Error::Invariant("empty trace".into()))?;
    Ok((l - without_ts.objective).abs())
}
