//! Stage 2: secrecy-rate threshold maximization with the covariances fixed.
//!
//! With `R~` and `{R~_k}` fixed, every SINR constraint restricts a single
//! threshold to an interval: an upper bound on each user threshold and lower
//! bounds on the AE and PE thresholds. The linearized subproblem is maximized
//! at those endpoints, which is what [`sca_step`] returns; [`solve_p7`] solves
//! the same subproblem as a conic program for cross-checking.

use std::f64::consts::LN_2;
use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::constraints::{
    pe_outage_to_lmi, ConstraintBundle, DirectionalConstraint, PeConstraint, SinrThresholds,
};
use crate::error::{Error, Result};
use crate::linalg::{c64, CMat, HermitianMatrix};
use crate::scenario::Scenario;
use crate::solver::{solve, AffineMatrix, AffineScalar, ConicProgram, SolveOptions, SolveStatus};
use crate::stage1::Stage1Solution;

/// Thresholds are kept strictly positive so the stage-1 constraints stay finite.
pub const MIN_THRESHOLD: f64 = 1e-9;

/// Default guard on the number of SCA iterations.
pub const DEFAULT_MAX_ITER: usize = 100;

/// Feasible threshold intervals under fixed covariances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBounds {
    /// `eps_u,k <= eps_u_max[k]` (the SINR each user actually gets).
    pub eps_u_max: Vec<f64>,
    pub eps_a_min: f64,
    pub eps_p_min: f64,
}

impl ThresholdBounds {
    pub fn eps_e_min(&self) -> f64 {
        self.eps_a_min + self.eps_p_min
    }

    pub fn thresholds(&self) -> Result<SinrThresholds> {
        SinrThresholds::new(
            self.eps_u_max.clone(),
            self.eps_a_min.max(MIN_THRESHOLD),
            self.eps_p_min.max(MIN_THRESHOLD),
        )
    }
}

/// Smallest `eps` with `(1 + 1/eps) a^H R_c a <= a^H R a + noise`.
fn directional_min(
    c: &DirectionalConstraint,
    r_c: &HermitianMatrix,
    r: &HermitianMatrix,
) -> Result<f64> {
    let leak = r_c.quad_form(&c.a).max(0.0);
    let room = r.quad_form(&c.a) + c.noise_over_beta2 - leak;
    if leak <= 0.0 {
        return Ok(0.0);
    }
    if !(room > 0.0) {
        return Err(Error::Stage2Infeasible(format!(
            "no eavesdropper threshold satisfies the constraint at {} deg",
            c.angle_deg
        )));
    }
    Ok(leak / room)
}

/// Smallest `eps_p >= 0` with `lambda_max(R_c - eps_p R_s) <= kappa eps_p`.
///
/// The left side minus the right is strictly decreasing (`R_s` is PSD), so
/// bisection on `[0, lambda_max(R_c) / kappa]` brackets the root.
pub fn pe_lmi_min(r_c: &HermitianMatrix, r_s: &HermitianMatrix, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(Error::Domain(format!(
            "outage slope must be positive, got {kappa}"
        )));
    }
    let f = |e: f64| (r_c - &r_s.scale(e)).lambda_max() - kappa * e;
    if f(0.0) <= 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, r_c.lambda_max() / kappa);
    while f(hi) > 0.0 {
        // only reachable through rounding in the eigenvalue routine
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1e-300) {
            break;
        }
    }
    Ok(hi)
}

/// Slope `kappa` of the outage LMI right side in `eps_p`.
pub fn pe_lmi_slope(scenario: &Scenario, solution: &Stage1Solution) -> Result<f64> {
    let l = pe_outage_to_lmi(
        1.0,
        scenario.tau,
        scenario.pe_variance,
        scenario.noise_p,
        scenario.m,
        solution.pe_form,
    )?;
    Ok(l.rhs)
}

pub fn threshold_bounds(solution: &Stage1Solution, scenario: &Scenario) -> Result<ThresholdBounds> {
    let bundle = solution.bundle(scenario)?;
    let cov = &solution.covariances;
    let r_c = cov.comm();
    let r = &cov.total;

    let mut eps_u_max = Vec::with_capacity(bundle.qos.len());
    for q in &bundle.qos {
        let useful = cov.per_user[q.k].quad_form(&q.h);
        let interference = r.quad_form(&q.h) - useful + q.floor;
        if !(useful > 0.0) || !(interference > 0.0) {
            return Err(Error::Stage2Infeasible(format!(
                "user {} receives no useful power",
                q.k
            )));
        }
        eps_u_max.push(useful / interference);
    }

    let mut eps_a_min = 0f64;
    for c in &bundle.ae {
        eps_a_min = eps_a_min.max(directional_min(c, &r_c, r)?);
    }
    let eps_p_min = match &bundle.pe {
        PeConstraint::Lmi(_) => pe_lmi_min(&r_c, &(r - &r_c), pe_lmi_slope(scenario, solution)?)?,
        PeConstraint::Directional(cs) => {
            let mut m = 0f64;
            for c in cs {
                m = m.max(directional_min(c, &r_c, r)?);
            }
            m
        }
    };
    Ok(ThresholdBounds {
        eps_u_max,
        eps_a_min,
        eps_p_min,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaRecord {
    pub iteration: usize,
    pub omega: f64,
    pub eps_e: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaState {
    pub eps_e_anchor: f64,
    pub thresholds: SinrThresholds,
    /// Secrecy-rate threshold at `thresholds` (unclamped, bits/s/Hz).
    pub omega: f64,
    pub iteration: usize,
    pub history: Vec<ScaRecord>,
}

impl ScaState {
    /// Starting point: the stage-1 thresholds, anchored at the smallest feasible `eps_e`.
    pub fn initial(thresholds: SinrThresholds, bounds: &ThresholdBounds) -> Self {
        let omega = thresholds.omega();
        Self {
            eps_e_anchor: bounds.eps_e_min().max(2.0 * MIN_THRESHOLD),
            thresholds,
            omega,
            iteration: 0,
            history: Vec::new(),
        }
    }
}

/// Value of the linearized objective at the interval endpoints.
pub fn linearized_omega(bounds: &ThresholdBounds, anchor: f64) -> f64 {
    let worst = bounds
        .eps_u_max
        .iter()
        .map(|e| (1.0 + e).log2())
        .fold(f64::INFINITY, f64::min);
    worst - bounds.eps_e_min() / ((1.0 + anchor) * LN_2)
}

/// One SCA iteration: solves the linearized subproblem at the current anchor.
pub fn sca_step(state: &ScaState, bounds: &ThresholdBounds) -> Result<ScaState> {
    if bounds.eps_u_max.is_empty() {
        return Err(Error::Stage2Infeasible("no user thresholds".into()));
    }
    // increasing in each eps_u,k and decreasing in eps_e: the optimum sits on the endpoints
    let thresholds = bounds.thresholds()?;
    let eps_e = thresholds.eps_e();
    let omega = thresholds.omega();
    let iteration = state.iteration + 1;
    let mut history = state.history.clone();
    history.push(ScaRecord {
        iteration,
        omega,
        eps_e,
    });
    Ok(ScaState {
        eps_e_anchor: eps_e,
        thresholds,
        omega,
        iteration,
        history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Options {
    pub iota2: f64,
    pub max_iter: usize,
}

impl Default for Stage2Options {
    fn default() -> Self {
        Self {
            iota2: 1e-4,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Outcome {
    pub thresholds: SinrThresholds,
    pub omega: f64,
    pub bounds: ThresholdBounds,
    pub history: Vec<ScaRecord>,
    pub converged: bool,
}

pub fn run_stage2(
    solution: &Stage1Solution,
    scenario: &Scenario,
    opts: &Stage2Options,
) -> Result<Stage2Outcome> {
    if !(opts.iota2 >= 0.0) {
        return Err(Error::Config(format!(
            "iota2 must be nonnegative, got {}",
            opts.iota2
        )));
    }
    let bounds = threshold_bounds(solution, scenario)?;
    let mut state = ScaState::initial(solution.thresholds.clone(), &bounds);
    let mut converged = false;
    while state.iteration < opts.max_iter.max(1) {
        let next = sca_step(&state, &bounds)?;
        let step = (next.eps_e_anchor - state.eps_e_anchor).abs();
        state = next;
        if step <= opts.iota2 {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!(
            "stage 2 stopped after {} iterations without meeting iota2",
            state.iteration
        );
    }
    Ok(Stage2Outcome {
        thresholds: state.thresholds,
        omega: state.omega,
        bounds,
        history: state.history,
        converged,
    })
}

pub fn write_history_csv(history: &[ScaRecord], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iteration", "omega", "eps_e"])?;
    for r in history {
        out.write_record([
            r.iteration.to_string(),
            format!("{:.12e}", r.omega),
            format!("{:.12e}", r.eps_e),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct P7Solution {
    /// Optimal value of the linearized objective.
    pub omega: f64,
    pub thresholds: SinrThresholds,
    pub status: SolveStatus,
}

/// Solves the linearized subproblem as a conic program.
///
/// The user, AE and directional PE constraints are linear in their
/// thresholds once the covariances are fixed; the outage constraint is an LMI
/// in `eps_p`. The log terms enter through exponential cones, so this needs
/// the interior-point backend.
pub fn solve_p7(
    solution: &Stage1Solution,
    scenario: &Scenario,
    anchor: f64,
    opts: &SolveOptions,
) -> Result<P7Solution> {
    let bundle: ConstraintBundle = solution.bundle(scenario)?;
    let cov = &solution.covariances;
    let r_c = cov.comm();
    let r = &cov.total;
    let m = scenario.m;

    let mut p = ConicProgram::new();
    let eps_u: Vec<_> = (0..bundle.qos.len())
        .map(|k| p.add_scalar(&format!("eps_u_{k}")))
        .collect();
    let eps_a = p.add_scalar("eps_a");
    let eps_p = p.add_scalar("eps_p");
    let omega = p.add_scalar("omega");
    p.linear = p.scalar(omega).scaled(-1.0);
    p.add_nonneg("eps_a >= 0", p.scalar(eps_a));
    p.add_nonneg("eps_p >= 0", p.scalar(eps_p));

    let eps_e = p.scalar(eps_a).plus(&p.scalar(eps_p));
    for (q, v) in bundle.qos.iter().zip(&eps_u) {
        let useful = cov.per_user[q.k].quad_form(&q.h);
        let interference = r.quad_form(&q.h) - useful + q.floor;
        // useful >= interference * eps_u
        p.add_nonneg(
            &format!("qos_{}", q.k),
            p.scalar(*v).scaled(-interference).add_const(useful),
        );
        // ln(1 + eps_u) >= ln2 omega + eps_e / (1 + anchor)
        let x = p
            .scalar(omega)
            .scaled(LN_2)
            .plus(&eps_e.clone().scaled(1.0 / (1.0 + anchor)));
        p.add_exp(
            &format!("rate_{}", q.k),
            x,
            AffineScalar::constant(1.0),
            p.scalar(*v).add_const(1.0),
        );
    }
    let directional = |p: &mut ConicProgram, name: &str, c: &DirectionalConstraint, var| {
        let leak = r_c.quad_form(&c.a);
        let room = r.quad_form(&c.a) + c.noise_over_beta2 - leak;
        // room * eps - leak >= 0
        let e = p.scalar(var).scaled(room).add_const(-leak);
        p.add_nonneg(&format!("{name}@{}", c.angle_deg), e);
    };
    for c in &bundle.ae {
        directional(&mut p, "ae", c, eps_a);
    }
    match &bundle.pe {
        PeConstraint::Lmi(_) => {
            let kappa = pe_lmi_slope(scenario, solution)?;
            let r_s = r - &r_c;
            let coef = CMat::identity(m, m) * c64(kappa, 0.0) + r_s.as_matrix();
            let lmi = AffineMatrix::zeros(m)
                .plus_const(&(-r_c.as_matrix()))
                .scalar(eps_p, coef);
            p.add_psd("pe_outage", lmi);
        }
        PeConstraint::Directional(cs) => {
            for c in cs {
                directional(&mut p, "pe", c, eps_p);
            }
        }
    }

    let rep = solve(&p, opts)?;
    if !rep.is_optimal()
        && !(rep.status == SolveStatus::Inaccurate && rep.max_violation <= opts.check_tol)
    {
        return Err(Error::Solver(format!(
            "linearized stage-2 program ended with status {:?}",
            rep.status
        )));
    }
    let x = &rep.solution;
    let thresholds = SinrThresholds {
        eps_u: eps_u.iter().map(|v| p.scalar_value(x, *v)).collect(),
        eps_a: p.scalar_value(x, eps_a),
        eps_p: p.scalar_value(x, eps_p),
    };
    Ok(P7Solution {
        omega: p.scalar_value(x, omega),
        thresholds,
        status: rep.status,
    })
}

#[cfg(test)]
mod tests;
