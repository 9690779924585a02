//! QoS and secrecy constraints in the forms used by the convex programs.
//!
//! Every constraint is stored as data plus a `margin` evaluator: the margin is
//! nonnegative exactly when the constraint holds.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::linalg::{CVec, HermitianMatrix};
use crate::metrics::CovarianceSet;
use crate::scenario::Scenario;

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// SINR thresholds for the users and both eavesdroppers (linear scale).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinrThresholds {
    pub eps_u: Vec<f64>,
    pub eps_a: f64,
    pub eps_p: f64,
}

impl SinrThresholds {
    pub fn new(eps_u: Vec<f64>, eps_a: f64, eps_p: f64) -> Result<Self> {
        let t = Self {
            eps_u,
            eps_a,
            eps_p,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_db(k_users: usize, eps_u_db: f64, eps_a_db: f64, eps_p_db: f64) -> Result<Self> {
        Self::new(
            vec![db_to_lin(eps_u_db); k_users],
            db_to_lin(eps_a_db),
            db_to_lin(eps_p_db),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if self.eps_u.is_empty()
            || !self.eps_u.iter().all(|&v| ok(v))
            || !ok(self.eps_a)
            || !ok(self.eps_p)
        {
            return Err(Error::Domain(format!(
                "SINR thresholds must be positive and finite: {self:?}"
            )));
        }
        Ok(())
    }

    /// Combined eavesdropper threshold.
    pub fn eps_e(&self) -> f64 {
        self.eps_a + self.eps_p
    }

    /// Secrecy-rate threshold implied by the thresholds (may be negative).
    pub fn omega(&self) -> f64 {
        let worst = self
            .eps_u
            .iter()
            .map(|e| (1.0 + e).log2())
            .fold(f64::INFINITY, f64::min);
        worst - (1.0 + self.eps_e()).log2()
    }
}

/// `(1 + 1/eps_u) h^H R_k h >= h^H R h + P_a |h_a,k|^2 + sigma_c^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QosConstraint {
    pub k: usize,
    pub eps_u: f64,
    #[serde(with = "cvec_serde")]
    pub h: CVec,
    pub floor: f64,
}

impl QosConstraint {
    pub fn margin(&self, set: &CovarianceSet) -> f64 {
        (1.0 + 1.0 / self.eps_u) * set.per_user[self.k].quad_form(&self.h)
            - set.total.quad_form(&self.h)
            - self.floor
    }
}

/// `(1 + 1/eps) a^H R_c a <= a^H R a + noise / |beta|^2` along one direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalConstraint {
    pub angle_deg: f64,
    #[serde(with = "cvec_serde")]
    pub a: CVec,
    pub eps: f64,
    pub noise_over_beta2: f64,
}

impl DirectionalConstraint {
    pub fn margin(&self, set: &CovarianceSet) -> f64 {
        self.margin_with(&set.comm(), &set.total)
    }

    pub fn margin_with(&self, r_c: &HermitianMatrix, r: &HermitianMatrix) -> f64 {
        r.quad_form(&self.a) + self.noise_over_beta2
            - (1.0 + 1.0 / self.eps) * r_c.quad_form(&self.a)
    }
}

/// Which variant of the outage LMI right-hand side is used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeForm {
    /// Channel variance normalized to one: `rhs = q eps_p sigma_p^2`.
    Normalized,
    /// Explicit channel variance: `rhs = q eps_p sigma_p^2 / c`.
    WithVariance,
}

/// `lambda_max((1 + eps_p) R_c - eps_p R) <= rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeLmi {
    pub eps_p: f64,
    pub rhs: f64,
    pub form: PeForm,
}

impl PeLmi {
    pub fn lhs(&self, r_c: &HermitianMatrix, r: &HermitianMatrix) -> f64 {
        (&r_c.scale(1.0 + self.eps_p) - &r.scale(self.eps_p)).lambda_max()
    }

    pub fn margin(&self, set: &CovarianceSet) -> f64 {
        self.rhs - self.lhs(&set.comm(), &set.total)
    }

    /// True when the left side is negative, so the bound holds for every channel.
    pub fn trivially_satisfied(&self, set: &CovarianceSet) -> bool {
        self.lhs(&set.comm(), &set.total) < 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeConstraint {
    Lmi(PeLmi),
    Directional(Vec<DirectionalConstraint>),
}

/// Channel-state assumptions for the eavesdroppers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CsiMode {
    #[default]
    Perfect,
    /// AE direction known within `+-delta_deg`.
    AeUncertain { delta_deg: f64 },
    /// No PE channel knowledge; SINR limited along every grid direction.
    /// `None` selects the scenario grid without the target angles.
    PeUnknown { grid_deg: Option<Vec<f64>> },
}

/// All constraints of one stage-1 problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintBundle {
    pub qos: Vec<QosConstraint>,
    pub ae: Vec<DirectionalConstraint>,
    pub pe: PeConstraint,
    pub power: f64,
    pub thresholds: SinrThresholds,
}

impl ConstraintBundle {
    /// Smallest margin over all constraints, including the power equality.
    pub fn min_margin(&self, set: &CovarianceSet) -> f64 {
        let mut m = -(set.total.trace() - self.power).abs();
        for c in &self.qos {
            m = m.min(c.margin(set));
        }
        for c in &self.ae {
            m = m.min(c.margin(set));
        }
        match &self.pe {
            PeConstraint::Lmi(l) => m = m.min(l.margin(set)),
            PeConstraint::Directional(cs) => {
                for c in cs {
                    m = m.min(c.margin(set));
                }
            }
        }
        m
    }

    pub fn max_violation(&self, set: &CovarianceSet) -> f64 {
        (-self.min_margin(set)).max(0.0)
    }
}

pub fn qos_affine(scenario: &Scenario, eps_u: &[f64], k: usize) -> Result<QosConstraint> {
    let eps = *eps_u
        .get(k)
        .ok_or_else(|| Error::Domain(format!("no threshold for user {k}")))?;
    if !(eps > 0.0) {
        return Err(Error::Domain(format!(
            "user threshold must be positive, got {eps}"
        )));
    }
    if !scenario.has_channels() {
        return Err(Error::Config(
            "scenario channels have not been drawn".into(),
        ));
    }
    Ok(QosConstraint {
        k,
        eps_u: eps,
        h: scenario.h_users[k].clone(),
        floor: scenario.user_floor(k),
    })
}

pub fn ae_affine(scenario: &Scenario, eps_a: f64, angle_deg: f64) -> Result<DirectionalConstraint> {
    if !(eps_a > 0.0) {
        return Err(Error::Domain(format!(
            "AE threshold must be positive, got {eps_a}"
        )));
    }
    Ok(DirectionalConstraint {
        angle_deg,
        a: scenario.steer_deg(angle_deg),
        eps: eps_a,
        noise_over_beta2: scenario.noise_s / scenario.ae_beta_abs2(),
    })
}

/// AE constraints sampled every `step_deg` over `[theta_Q - delta, theta_Q + delta]`.
pub fn ae_robust(
    scenario: &Scenario,
    eps_a: f64,
    delta_deg: f64,
    step_deg: f64,
) -> Result<Vec<DirectionalConstraint>> {
    if !(delta_deg >= 0.0) || !(step_deg > 0.0) {
        return Err(Error::Config(format!(
            "bad AE uncertainty {delta_deg} / step {step_deg}"
        )));
    }
    let center = scenario.ae_angle_deg();
    let n = (delta_deg / step_deg + 1e-9).floor() as i64;
    (-n..=n)
        .map(|i| center + i as f64 * step_deg)
        .filter(|t| (-90.0..=90.0).contains(t))
        .map(|t| ae_affine(scenario, eps_a, t))
        .collect()
}

/// Inverse CDF of `1/X` with `X ~ chi^2_{2m}`: `q = 1 / F^{-1}_{chi^2_{2m}}(1 - p)`.
pub fn inv_chi2_quantile(m: usize, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "probability must lie in (0, 1), got {p}"
        )));
    }
    if m == 0 {
        return Err(Error::Domain(
            "need at least one degree-of-freedom pair".into(),
        ));
    }
    let chi = ChiSquared::new(2.0 * m as f64).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(1.0 / chi.inverse_cdf(1.0 - p))
}

pub fn pe_outage_to_lmi(
    eps_p: f64,
    tau: f64,
    c: f64,
    sigma_p2: f64,
    m: usize,
    form: PeForm,
) -> Result<PeLmi> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("tau must lie in (0, 1), got {tau}")));
    }
    if !(eps_p > 0.0) || !(c > 0.0) || !(sigma_p2 > 0.0) {
        return Err(Error::Domain(
            "eps_p, c and sigma_p^2 must be positive".into(),
        ));
    }
    let base = inv_chi2_quantile(m, 1.0 - tau)? * eps_p * sigma_p2;
    let rhs = match form {
        PeForm::Normalized => base,
        PeForm::WithVariance => base / c,
    };
    Ok(PeLmi { eps_p, rhs, form })
}

/// Scenario grid without the target directions.
pub fn default_pe_grid(scenario: &Scenario) -> Vec<f64> {
    scenario
        .grid_deg
        .iter()
        .copied()
        .filter(|g| scenario.targets_deg.iter().all(|t| (g - t).abs() > 1e-9))
        .collect()
}

pub fn pe_unknown_csi(
    scenario: &Scenario,
    eps_p: f64,
    grid_pe_deg: &[f64],
) -> Result<Vec<DirectionalConstraint>> {
    if !(eps_p > 0.0) {
        return Err(Error::Domain(format!(
            "PE threshold must be positive, got {eps_p}"
        )));
    }
    if let Some(t) = grid_pe_deg
        .iter()
        .find(|g| scenario.targets_deg.iter().any(|t| (*g - t).abs() <= 1e-9))
    {
        return Err(Error::Config(format!(
            "PE direction {t} deg coincides with a target"
        )));
    }
    let noise = scenario.noise_p / (scenario.beta_p_abs * scenario.beta_p_abs);
    Ok(grid_pe_deg
        .iter()
        .map(|&t| DirectionalConstraint {
            angle_deg: t,
            a: scenario.steer_deg(t),
            eps: eps_p,
            noise_over_beta2: noise,
        })
        .collect())
}

pub fn build_bundle(
    scenario: &Scenario,
    thresholds: &SinrThresholds,
    csi: &CsiMode,
    form: PeForm,
) -> Result<ConstraintBundle> {
    thresholds.validate()?;
    if thresholds.eps_u.len() != scenario.k_users {
        return Err(Error::Config(format!(
            "{} user thresholds for {} users",
            thresholds.eps_u.len(),
            scenario.k_users
        )));
    }
    let qos = (0..scenario.k_users)
        .map(|k| qos_affine(scenario, &thresholds.eps_u, k))
        .collect::<Result<_>>()?;
    let step = scenario
        .grid_deg
        .windows(2)
        .map(|w| w[1] - w[0])
        .next()
        .unwrap_or(1.0);
    let ae = match csi {
        CsiMode::AeUncertain { delta_deg } => {
            ae_robust(scenario, thresholds.eps_a, *delta_deg, step)?
        }
        _ => vec![ae_affine(
            scenario,
            thresholds.eps_a,
            scenario.ae_angle_deg(),
        )?],
    };
    let pe = match csi {
        CsiMode::PeUnknown { grid_deg } => {
            let grid = grid_deg
                .clone()
                .unwrap_or_else(|| default_pe_grid(scenario));
            PeConstraint::Directional(pe_unknown_csi(scenario, thresholds.eps_p, &grid)?)
        }
        _ => PeConstraint::Lmi(pe_outage_to_lmi(
            thresholds.eps_p,
            scenario.tau,
            scenario.pe_variance,
            scenario.noise_p,
            scenario.m,
            form,
        )?),
    };
    Ok(ConstraintBundle {
        qos,
        ae,
        pe,
        power: scenario.p_budget,
        thresholds: thresholds.clone(),
    })
}

mod cvec_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &CVec, s: S) -> std::result::Result<S::Ok, S::Error> {
        crate::linalg::cvecs_serde::serialize(std::slice::from_ref(v), s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<CVec, D::Error> {
        let mut v = crate::linalg::cvecs_serde::deserialize(d)?;
        v.pop()
            .ok_or_else(|| serde::de::Error::custom("empty vector list"))
    }
}
