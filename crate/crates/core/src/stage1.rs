//! Stage 1: transmit covariance design for fixed SINR thresholds.
//!
//! Two formulations share one objective (cross-correlation plus weighted
//! beampattern MSE):
//!
//! * SDR: per-user covariances `R_k` and the total `R` are free PSD blocks;
//!   rank-one beamformers are recovered afterwards without changing `R`.
//! * ZF: the information covariance `R_c` must diagonalize the user channels
//!   and the sensing covariance lives in the null space of the channel
//!   matrix. Writing `R_s = N S N^H` with an orthonormal null-space basis `N`
//!   makes the second condition structural.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::constraints::{
    build_bundle, ConstraintBundle, CsiMode, DirectionalConstraint, PeConstraint, PeForm,
    SinrThresholds,
};
use crate::error::{Error, Result};
use crate::linalg::{
    c64, cholesky_lower, condition_number, null_space_basis, pivoted_cholesky_factor, qr_wide,
    CMat, CVec, HermitianMatrix,
};
use crate::metrics::{BeamformerSet, CovarianceSet, SensingGeometry};
use crate::scenario::{ideal_beampattern_robust, IdealBeampattern, Scenario};
use crate::solver::{
    solve, AffineMatrix, AffineScalar, BlockId, ConicProgram, ScalarId, SolveOptions, SolveReport,
    SolveStatus, SolveSummary,
};

/// Channel matrices with a larger condition number are rejected by ZF.
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sdr,
    Zf,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sdr" => Ok(Method::Sdr),
            "zf" => Ok(Method::Zf),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Sdr => "sdr",
            Method::Zf => "zf",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Options {
    pub solve: SolveOptions,
    pub pe_form: PeForm,
}

impl Stage1Solution {
    /// Rebuilds the constraint bundle this solution was designed for.
    pub fn bundle(&self, scenario: &Scenario) -> Result<ConstraintBundle> {
        build_bundle(scenario, &self.thresholds, &self.csi_mode, self.pe_form)
    }
}

impl Default for Stage1Options {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            pe_form: PeForm::WithVariance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Solution {
    pub covariances: CovarianceSet,
    pub beamformers: BeamformerSet,
    pub delta1: f64,
    /// Per-user received powers (ZF only).
    pub rho: Option<Vec<f64>>,
    /// Sensing objective at the returned covariances.
    pub objective: f64,
    /// Sensing objective at the relaxed optimum before beamformer recovery.
    pub relaxed_objective: f64,
    pub report: SolveSummary,
    pub method: Method,
    pub csi_mode: CsiMode,
    pub pe_form: PeForm,
    pub thresholds: SinrThresholds,
    /// Relaxed per-user covariances (SDR only), kept for verification.
    pub relaxed_per_user: Option<Vec<HermitianMatrix>>,
}

/// Ideal beampattern for a CSI mode (the AE lobe widens under angular uncertainty).
pub fn ideal_for(scenario: &Scenario, csi: &CsiMode) -> Result<IdealBeampattern> {
    let widen = match csi {
        CsiMode::AeUncertain { delta_deg } => *delta_deg,
        _ => 0.0,
    };
    ideal_beampattern_robust(scenario, scenario.mainlobe_width_deg, widen)
}

/// Builds the constraint bundle for `csi` and solves with `method`.
pub fn solve_robust(
    scenario: &Scenario,
    thresholds: &SinrThresholds,
    method: Method,
    csi: &CsiMode,
    opts: &Stage1Options,
) -> Result<Stage1Solution> {
    let bundle = build_bundle(scenario, thresholds, csi, opts.pe_form)?;
    match method {
        Method::Sdr => solve_sdr(scenario, &bundle, csi, opts),
        Method::Zf => solve_zf(scenario, &bundle, csi, opts),
    }
}

/// Access to `R` and `R_c` as affine functions for either formulation.
enum Layout {
    Sdr {
        per_user: Vec<BlockId>,
        total: BlockId,
    },
    Zf {
        rc: BlockId,
        s: BlockId,
        n: CMat,
    },
}

impl Layout {
    fn total_quad(&self, p: &ConicProgram, a: &CVec) -> AffineScalar {
        match self {
            Layout::Sdr { total, .. } => p.quad(*total, a),
            Layout::Zf { rc, s, n } => p.quad(*rc, a).plus(&p.quad(*s, &(n.adjoint() * a))),
        }
    }

    fn total_bilinear(&self, p: &ConicProgram, u: &CVec, v: &CVec) -> (AffineScalar, AffineScalar) {
        match self {
            Layout::Sdr { total, .. } => p.bilinear(*total, u, v),
            Layout::Zf { rc, s, n } => {
                let (r1, i1) = p.bilinear(*rc, u, v);
                let (r2, i2) = p.bilinear(*s, &(n.adjoint() * u), &(n.adjoint() * v));
                (r1.plus(&r2), i1.plus(&i2))
            }
        }
    }

    fn comm_quad(&self, p: &ConicProgram, a: &CVec) -> AffineScalar {
        match self {
            Layout::Sdr { per_user, .. } => per_user
                .iter()
                .fold(AffineScalar::default(), |acc, b| acc.plus(&p.quad(*b, a))),
            Layout::Zf { rc, .. } => p.quad(*rc, a),
        }
    }

    /// `(1 + eps) R_c - eps R` scaled by `-1` and shifted by `rhs I`.
    fn pe_lmi(&self, m: usize, eps: f64, rhs: f64) -> AffineMatrix {
        let base = AffineMatrix::zeros(m).plus_const(&(CMat::identity(m, m) * c64(rhs, 0.0)));
        match self {
            Layout::Sdr { per_user, total } => per_user
                .iter()
                .fold(base, |acc, b| acc.block(*b, -(1.0 + eps)))
                .block(*total, eps),
            // R = R_c + N S N^H, so (1 + eps) R_c - eps R = R_c - eps N S N^H
            Layout::Zf { rc, s, n } => base.block(*rc, -1.0).congruence(*s, eps, n.clone()),
        }
    }
}

fn add_objective(p: &mut ConicProgram, layout: &Layout, geo: &SensingGeometry, delta1: ScalarId) {
    let l = geo.grid.len() as f64;
    for (a, phi) in geo.grid.iter().zip(&geo.ideal) {
        let g = p
            .scalar(delta1)
            .scaled(*phi)
            .minus(&layout.total_quad(p, a));
        p.minimize_square(geo.delta2 / l, g);
    }
    let q = geo.targets.len();
    if q >= 2 {
        let w = 2.0 / (q * q - q) as f64;
        for i in 0..q {
            for j in i + 1..q {
                let (re, im) = layout.total_bilinear(p, &geo.targets[i], &geo.targets[j]);
                p.minimize_square(w, re);
                p.minimize_square(w, im);
            }
        }
    }
}

fn add_directional(p: &mut ConicProgram, layout: &Layout, name: &str, c: &DirectionalConstraint) {
    // a^H R a + n/|b|^2 - (1 + 1/eps) a^H R_c a >= 0
    let e = layout
        .total_quad(p, &c.a)
        .minus(&layout.comm_quad(p, &c.a).scaled(1.0 + 1.0 / c.eps))
        .add_const(c.noise_over_beta2);
    p.add_nonneg(&format!("{name}@{}", c.angle_deg), e);
}

fn add_secrecy(p: &mut ConicProgram, layout: &Layout, bundle: &ConstraintBundle, m: usize) {
    for c in &bundle.ae {
        add_directional(p, layout, "ae", c);
    }
    match &bundle.pe {
        PeConstraint::Lmi(l) => p.add_psd("pe_outage", layout.pe_lmi(m, l.eps_p, l.rhs)),
        PeConstraint::Directional(cs) => {
            for c in cs {
                add_directional(p, layout, "pe", c);
            }
        }
    }
}

/// Solves, re-solving once with tighter tolerances when the answer is inaccurate.
///
/// Infeasible instances tend to diverge under the quadratic objective rather
/// than produce a certificate, so a failed solve is classified by re-running
/// the constraints alone.
/// Rejects thresholds above the interference-free bound `P_0 |h_k|^2 / floor_k`.
///
/// `R >= R_k` turns each QoS row into `h^H R_k h >= eps_u floor`, and
/// `h^H R_k h <= tr(R) |h|^2`, so no covariance can pass beyond the bound.
/// Interior-point solvers often stall on such problems instead of returning
/// a clean certificate.
fn qos_reachable(bundle: &ConstraintBundle) -> Result<()> {
    for c in &bundle.qos {
        let bound = bundle.power * c.h.norm_squared() / c.floor;
        if c.eps_u > bound {
            return Err(Error::Infeasible(format!(
                "user {} needs SINR {:.3e} but at most {:.3e} is reachable with the full power budget",
                c.k, c.eps_u, bound
            )));
        }
    }
    Ok(())
}

fn solve_with_retry(p: &ConicProgram, opts: &SolveOptions) -> Result<SolveReport> {
    let mut rep = solve(p, opts)?;
    if rep.status == SolveStatus::Inaccurate {
        rep = solve(p, &opts.tightened(10.0))?;
    }
    let mut status = rep.status;
    if matches!(status, SolveStatus::Failed | SolveStatus::Inaccurate)
        && rep.max_violation > opts.check_tol
    {
        let mut feas = p.clone();
        feas.squares.clear();
        feas.linear = AffineScalar::default();
        if solve(&feas, opts)?.status == SolveStatus::Infeasible {
            status = SolveStatus::Infeasible;
        }
    }
    match status {
        SolveStatus::Optimal => Ok(rep),
        SolveStatus::Inaccurate if rep.max_violation <= opts.check_tol => {
            warn!(
                "accepting inaccurate solve: gap {:.2e}, violation {:.2e}",
                rep.gap, rep.max_violation
            );
            Ok(rep)
        }
        SolveStatus::Infeasible => Err(Error::Infeasible(
            "stage-1 constraints admit no solution for these thresholds".into(),
        )),
        SolveStatus::Unbounded => Err(Error::Solver("stage-1 program reported unbounded".into())),
        s => Err(Error::Solver(format!(
            "stage-1 solve ended with status {s:?} (gap {:.2e}, violation {:.2e})",
            rep.gap, rep.max_violation
        ))),
    }
}

/// Builds the SDR program; returns it with its block handles.
pub fn sdr_program(
    scenario: &Scenario,
    bundle: &ConstraintBundle,
    geo: &SensingGeometry,
) -> (ConicProgram, Vec<BlockId>, BlockId, ScalarId) {
    let m = scenario.m;
    let mut p = ConicProgram::new();
    let per_user: Vec<BlockId> = (0..scenario.k_users)
        .map(|k| p.add_block(&format!("R_{k}"), m))
        .collect();
    let total = p.add_block("R", m);
    let delta1 = p.add_scalar("delta1");
    let layout = Layout::Sdr {
        per_user: per_user.clone(),
        total,
    };

    p.add_eq("power", p.trace(total).add_const(-bundle.power));
    p.add_nonneg("delta1", p.scalar(delta1));
    for (k, b) in per_user.iter().enumerate() {
        p.add_psd(&format!("R_{k} psd"), AffineMatrix::zeros(m).block(*b, 1.0));
    }
    let sensing = per_user
        .iter()
        .fold(AffineMatrix::zeros(m).block(total, 1.0), |acc, b| {
            acc.block(*b, -1.0)
        });
    p.add_psd("R - sum R_k psd", sensing);
    // Implied by the two above, but without it the interior-point KKT system
    // is singular at the first step: most of R is invisible to the objective.
    p.add_psd("R psd", AffineMatrix::zeros(m).block(total, 1.0));
    for c in &bundle.qos {
        let e = p
            .quad(per_user[c.k], &c.h)
            .scaled(1.0 + 1.0 / c.eps_u)
            .minus(&p.quad(total, &c.h))
            .add_const(-c.floor);
        p.add_nonneg(&format!("qos_{}", c.k), e);
    }
    add_secrecy(&mut p, &layout, bundle, m);
    add_objective(&mut p, &layout, geo, delta1);
    (p, per_user, total, delta1)
}

/// Rank-one beam `R h / sqrt(h^H R h)` reproducing the useful power of `R`.
pub fn rank1_recover(r_hat_k: &HermitianMatrix, h_k: &CVec, user: usize) -> Result<CVec> {
    let power = r_hat_k.quad_form(h_k);
    if !(power > 1e-12) {
        return Err(Error::DegenerateUser { user });
    }
    Ok(r_hat_k.as_matrix() * h_k / c64(power.sqrt(), 0.0))
}

/// Square factor of a PSD matrix (zero-padded to `n` columns).
fn square_factor(a: &HermitianMatrix) -> CMat {
    let n = a.dim();
    let f = pivoted_cholesky_factor(&a.clip_psd());
    let mut out = CMat::zeros(n, n);
    out.view_mut((0, 0), (n, f.ncols())).copy_from(&f);
    out
}

pub fn solve_sdr(
    scenario: &Scenario,
    bundle: &ConstraintBundle,
    csi: &CsiMode,
    opts: &Stage1Options,
) -> Result<Stage1Solution> {
    qos_reachable(bundle)?;
    let ideal = ideal_for(scenario, csi)?;
    let geo = SensingGeometry::new(scenario, &ideal)?;
    let (p, per_user, total, delta1) = sdr_program(scenario, bundle, &geo);
    let rep = solve_with_retry(&p, &opts.solve)?;

    let r_hat = p.block_value(&rep.solution, total);
    let r_hat_k: Vec<HermitianMatrix> = per_user
        .iter()
        .map(|b| p.block_value(&rep.solution, *b))
        .collect();
    let d1 = p.scalar_value(&rep.solution, delta1).max(0.0);
    let relaxed_objective = geo.objective(&r_hat, d1);

    let mut w_c = CMat::zeros(scenario.m, scenario.k_users);
    for (k, rk) in r_hat_k.iter().enumerate() {
        w_c.set_column(k, &rank1_recover(rk, &scenario.h_users[k], k)?);
    }
    let recovered: Vec<HermitianMatrix> = (0..scenario.k_users)
        .map(|k| HermitianMatrix::outer(&w_c.column(k).into_owned()))
        .collect();
    let covariances = CovarianceSet::from_parts(recovered, r_hat.clone(), d1);
    let w_s = square_factor(&covariances.sensing);
    let objective = geo.objective(&covariances.total, d1);

    Ok(Stage1Solution {
        covariances,
        beamformers: BeamformerSet { w_c, w_s },
        delta1: d1,
        rho: None,
        objective,
        relaxed_objective,
        report: rep.summary(),
        method: Method::Sdr,
        csi_mode: csi.clone(),
        pe_form: opts.pe_form,
        thresholds: bundle.thresholds.clone(),
        relaxed_per_user: Some(r_hat_k),
    })
}

/// Checks that the ZF preconditions hold and returns the channel matrix.
fn zf_channel(scenario: &Scenario) -> Result<CMat> {
    if scenario.k_users >= scenario.m {
        return Err(Error::UnsupportedShape(format!(
            "zero forcing needs K < M, got K={} M={}",
            scenario.k_users, scenario.m
        )));
    }
    let h_u = scenario.h_u();
    let cond = condition_number(&h_u);
    if !(cond < MAX_CONDITION) {
        return Err(Error::Conditioning(cond));
    }
    Ok(h_u)
}

pub struct ZfProgram {
    pub program: ConicProgram,
    pub rc: BlockId,
    pub s: BlockId,
    pub rho: Vec<ScalarId>,
    pub delta1: ScalarId,
    pub null_basis: CMat,
}

pub fn zf_program(
    scenario: &Scenario,
    bundle: &ConstraintBundle,
    geo: &SensingGeometry,
) -> Result<ZfProgram> {
    let h_u = zf_channel(scenario)?;
    let n = null_space_basis(&h_u)?;
    let (m, k) = (scenario.m, scenario.k_users);
    let mut p = ConicProgram::new();
    let rc = p.add_block("R_c", m);
    let s = p.add_block("S", m - k);
    let rho: Vec<ScalarId> = (0..k).map(|i| p.add_scalar(&format!("rho_{i}"))).collect();
    let delta1 = p.add_scalar("delta1");
    let layout = Layout::Zf {
        rc,
        s,
        n: n.clone(),
    };

    p.add_eq(
        "power",
        p.trace(rc).plus(&p.trace(s)).add_const(-bundle.power),
    );
    p.add_nonneg("delta1", p.scalar(delta1));
    p.add_psd("R_c psd", AffineMatrix::zeros(m).block(rc, 1.0));
    p.add_psd("S psd", AffineMatrix::zeros(m - k).block(s, 1.0));
    // redundant, kept for the same conditioning reason as in the SDR program
    p.add_psd(
        "R psd",
        AffineMatrix::zeros(m)
            .block(rc, 1.0)
            .congruence(s, 1.0, n.clone()),
    );
    let h = &scenario.h_users;
    for i in 0..k {
        p.add_eq(
            &format!("zf_diag_{i}"),
            p.quad(rc, &h[i]).minus(&p.scalar(rho[i])),
        );
        for j in i + 1..k {
            let (re, im) = p.bilinear(rc, &h[i], &h[j]);
            p.add_eq(&format!("zf_re_{i}_{j}"), re);
            p.add_eq(&format!("zf_im_{i}_{j}"), im);
        }
    }
    for c in &bundle.qos {
        p.add_nonneg(
            &format!("rho_min_{}", c.k),
            p.scalar(rho[c.k]).add_const(-c.eps_u * c.floor),
        );
    }
    add_secrecy(&mut p, &layout, bundle, m);
    add_objective(&mut p, &layout, geo, delta1);
    Ok(ZfProgram {
        program: p,
        rc,
        s,
        rho,
        delta1,
        null_basis: n,
    })
}

pub fn solve_zf(
    scenario: &Scenario,
    bundle: &ConstraintBundle,
    csi: &CsiMode,
    opts: &Stage1Options,
) -> Result<Stage1Solution> {
    qos_reachable(bundle)?;
    let ideal = ideal_for(scenario, csi)?;
    let geo = SensingGeometry::new(scenario, &ideal)?;
    let zp = zf_program(scenario, bundle, &geo)?;
    let p = &zp.program;
    let rep = solve_with_retry(p, &opts.solve)?;

    let rc = p.block_value(&rep.solution, zp.rc);
    let s = p.block_value(&rep.solution, zp.s);
    let n = &zp.null_basis;
    let rs = HermitianMatrix::hermitian_part(&(n * s.as_matrix() * n.adjoint()));
    let total = &rc + &rs;
    let rho: Vec<f64> = zp
        .rho
        .iter()
        .map(|r| p.scalar_value(&rep.solution, *r))
        .collect();
    let d1 = p.scalar_value(&rep.solution, zp.delta1).max(0.0);
    let relaxed_objective = geo.objective(&total, d1);

    let beamformers = zf_recover(&rc, &total, &scenario.h_u())?;
    let per_user = (0..scenario.k_users)
        .map(|k| HermitianMatrix::outer(&beamformers.w_c.column(k).into_owned()))
        .collect();
    let covariances = CovarianceSet::from_parts(per_user, total, d1);
    let objective = geo.objective(&covariances.total, d1);

    Ok(Stage1Solution {
        covariances,
        beamformers,
        delta1: d1,
        rho: Some(rho),
        objective,
        relaxed_objective,
        report: rep.summary(),
        method: Method::Zf,
        csi_mode: csi.clone(),
        pe_form: opts.pe_form,
        thresholds: bundle.thresholds.clone(),
        relaxed_per_user: None,
    })
}

/// Beamformers from a ZF covariance pair: `W_c = D U~` from the Cholesky
/// factor `D` of `R_c` and the LQ factorization of `H_u D`, then `W_s` from
/// `R - W_c W_c^H`.
pub fn zf_recover(
    r_c: &HermitianMatrix,
    r_total: &HermitianMatrix,
    h_u: &CMat,
) -> Result<BeamformerSet> {
    let (k, m) = h_u.shape();
    let d = cholesky_lower(r_c)?;
    let wide = qr_wide(&(h_u * &d))?;
    let u_tilde = wide.u2.adjoint().columns(0, k).into_owned();
    let w_c = &d * u_tilde;
    let residual = r_total - &HermitianMatrix::gram(&w_c);
    let lmin = residual.lambda_min();
    if lmin < -1e-6 * r_total.trace().abs().max(1.0) {
        return Err(Error::Recovery(format!(
            "R - W_c W_c^H has eigenvalue {lmin:.3e}; the sensing part is not PSD"
        )));
    }
    let w_s = square_factor(&residual);
    debug_assert_eq!(w_s.nrows(), m);
    Ok(BeamformerSet { w_c, w_s })
}

/// Outcome of the rank-one recovery checks for an SDR solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdrChecks {
    /// Constraint violation of the relaxed covariances.
    pub relaxed_violation: f64,
    /// Constraint violation after recovery.
    pub recovered_violation: f64,
    /// Largest `|h^H R~_k h - h^H R^_k h|`.
    pub useful_power_error: f64,
    /// Largest `a^H R~_k a - a^H R^_k a` along AE directions (should be <= 0).
    pub ae_leakage_increase: f64,
    pub objective_relaxed: f64,
    pub objective_recovered: f64,
    pub max_rank_ratio: f64,
}

pub fn verify_sdr(
    sol: &Stage1Solution,
    scenario: &Scenario,
    bundle: &ConstraintBundle,
) -> Result<SdrChecks> {
    let relaxed = sol
        .relaxed_per_user
        .as_ref()
        .ok_or_else(|| Error::Invariant("solution carries no relaxed covariances".into()))?;
    let relaxed_set =
        CovarianceSet::from_parts(relaxed.clone(), sol.covariances.total.clone(), sol.delta1);
    let mut useful = 0f64;
    let mut leak = f64::NEG_INFINITY;
    for (k, (rt, rh)) in sol.covariances.per_user.iter().zip(relaxed).enumerate() {
        let h = &scenario.h_users[k];
        useful = useful.max((rt.quad_form(h) - rh.quad_form(h)).abs());
        for c in &bundle.ae {
            leak = leak.max(rt.quad_form(&c.a) - rh.quad_form(&c.a));
        }
    }
    Ok(SdrChecks {
        relaxed_violation: bundle.max_violation(&relaxed_set),
        recovered_violation: bundle.max_violation(&sol.covariances),
        useful_power_error: useful,
        ae_leakage_increase: leak,
        objective_relaxed: sol.relaxed_objective,
        objective_recovered: sol.objective,
        max_rank_ratio: sol
            .covariances
            .per_user
            .iter()
            .map(|r| r.second_to_first_eigen_ratio())
            .fold(0.0, f64::max),
    })
}

/// Outcome of the ZF recovery checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZfChecks {
    /// `max(0, -lambda_min(R - W_c W_c^H))`.
    pub psd_residual: f64,
    /// `||H_u W_c - B_L||_F` with `B_L` the lower-triangular LQ block.
    pub hu_wc_error: f64,
    /// `||B_L B_L^H - diag(rho)||_F`.
    pub bl_diag_error: f64,
    /// Largest defect of `H_u W_c` being lower triangular with a real nonnegative diagonal.
    pub bl_structure_error: f64,
    /// `||H_u W_s||_F`.
    pub hu_ws: f64,
    /// Violation of the AE/PE constraints at the recovered beamformers.
    pub secrecy_violation: f64,
    /// Largest `|sinr_k - rho_k / floor_k|`, relative.
    pub sinr_error: f64,
}

impl ZfChecks {
    pub fn max_error(&self) -> f64 {
        [
            self.psd_residual,
            self.hu_wc_error,
            self.bl_diag_error,
            self.bl_structure_error,
            self.hu_ws,
            self.secrecy_violation,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn verify_zf(
    sol: &Stage1Solution,
    scenario: &Scenario,
    bundle: &ConstraintBundle,
) -> Result<ZfChecks> {
    let rho = sol
        .rho
        .as_ref()
        .ok_or_else(|| Error::Invariant("solution carries no rho".into()))?;
    let h_u = scenario.h_u();
    let b = &sol.beamformers;
    let k = scenario.k_users;
    let residual = &sol.covariances.total - &HermitianMatrix::gram(&b.w_c);
    let hw = &h_u * &b.w_c;

    let mut structure = 0f64;
    for i in 0..k {
        structure = structure
            .max((-hw[(i, i)].re).max(0.0))
            .max(hw[(i, i)].im.abs());
        for j in i + 1..k {
            structure = structure.max(hw[(i, j)].norm());
        }
    }
    let diag = CMat::from_diagonal(&CVec::from_iterator(k, rho.iter().map(|r| c64(*r, 0.0))));
    let bl_diag_error = (&hw * hw.adjoint() - diag).norm();
    // H_u W_c must equal its own lower-triangular part B_L
    let mut lower = hw.clone();
    for i in 0..k {
        for j in i + 1..k {
            lower[(i, j)] = c64(0.0, 0.0);
        }
    }
    let hu_wc_error = (&hw - lower).norm();

    let recovered = b.covariances(sol.delta1);
    let mut secrecy = 0f64;
    for c in &bundle.ae {
        secrecy = secrecy.max(-c.margin(&recovered));
    }
    match &bundle.pe {
        PeConstraint::Lmi(l) => secrecy = secrecy.max(-l.margin(&recovered)),
        PeConstraint::Directional(cs) => {
            for c in cs {
                secrecy = secrecy.max(-c.margin(&recovered));
            }
        }
    }
    let mut sinr_error = 0f64;
    for (i, r) in rho.iter().enumerate() {
        let expect = r / scenario.user_floor(i);
        let got = crate::metrics::sinr_user(&recovered, scenario, i)?;
        sinr_error = sinr_error.max((got - expect).abs() / expect.max(1.0));
    }
    Ok(ZfChecks {
        psd_residual: (-residual.lambda_min()).max(0.0),
        hu_wc_error,
        bl_diag_error,
        bl_structure_error: structure,
        hu_ws: (&h_u * &b.w_s).norm(),
        secrecy_violation: secrecy.max(0.0),
        sinr_error,
    })
}

#[cfg(test)]
mod tests;
