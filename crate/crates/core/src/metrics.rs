//! Sensing and communication metrics evaluated on covariances or beamformers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cmat_serde, steering_elements, CMat, CVec, HermitianMatrix};
use crate::scenario::{IdealBeampattern, Scenario};

/// Transmit covariances: per-user `R_k`, sensing `R_s` and total `R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSet {
    pub per_user: Vec<HermitianMatrix>,
    pub sensing: HermitianMatrix,
    pub total: HermitianMatrix,
    pub delta1: f64,
}

impl CovarianceSet {
    /// Builds the set from `R_k` and `R`; the sensing part is the remainder.
    pub fn from_parts(per_user: Vec<HermitianMatrix>, total: HermitianMatrix, delta1: f64) -> Self {
        let comm = sum(&per_user, total.dim());
        let sensing = &total - &comm;
        Self {
            per_user,
            sensing,
            total,
            delta1,
        }
    }

    /// Information covariance `R_c = sum_k R_k`.
    pub fn comm(&self) -> HermitianMatrix {
        sum(&self.per_user, self.total.dim())
    }

    /// Checks `R = sum R_k + R_s` and PSD-ness of every block.
    pub fn check(&self, tol: f64) -> Result<()> {
        let recon = &self.comm() + &self.sensing;
        let err = (recon.as_matrix() - self.total.as_matrix()).norm();
        if err > tol {
            return Err(Error::Invariant(format!(
                "R != sum R_k + R_s (residual {err:e})"
            )));
        }
        for (name, m) in self
            .per_user
            .iter()
            .map(|r| ("R_k", r))
            .chain([("R_s", &self.sensing), ("R", &self.total)])
        {
            let lmin = m.lambda_min();
            if lmin < -tol {
                return Err(Error::NotPsd {
                    min_eigenvalue: lmin,
                })
                .map_err(|e| Error::Invariant(format!("{name} is not PSD: {e}")));
            }
        }
        Ok(())
    }

    /// Per-user rank-one flags (`lambda_2 / lambda_1 <= 1e-6`).
    pub fn rank_one_flags(&self) -> Vec<bool> {
        self.per_user
            .iter()
            .map(|r| r.second_to_first_eigen_ratio() <= 1e-6)
            .collect()
    }
}

fn sum(ms: &[HermitianMatrix], n: usize) -> HermitianMatrix {
    ms.iter().fold(HermitianMatrix::zeros(n), |acc, m| &acc + m)
}

/// Information beamformers `W_c` (one column per user) and sensing beamformer `W_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamformerSet {
    #[serde(with = "cmat_serde")]
    pub w_c: CMat,
    #[serde(with = "cmat_serde")]
    pub w_s: CMat,
}

impl BeamformerSet {
    pub fn total(&self) -> HermitianMatrix {
        &HermitianMatrix::gram(&self.w_c) + &HermitianMatrix::gram(&self.w_s)
    }

    pub fn covariances(&self, delta1: f64) -> CovarianceSet {
        let per_user = (0..self.w_c.ncols())
            .map(|k| HermitianMatrix::outer(&self.w_c.column(k).into_owned()))
            .collect();
        CovarianceSet::from_parts(per_user, self.total(), delta1)
    }
}

/// `a(theta)^H R a(theta)` over a grid of angles in radians.
pub fn beampattern(r: &HermitianMatrix, grid_rad: &[f64], spacing: f64) -> Vec<f64> {
    grid_rad
        .iter()
        .map(|&t| r.quad_form(&steering_elements(t, r.dim(), spacing)))
        .collect()
}

/// Mean squared cross-correlation between all target pairs.
pub fn cross_correlation(r: &HermitianMatrix, targets_rad: &[f64], spacing: f64) -> Result<f64> {
    let a: Vec<CVec> = targets_rad
        .iter()
        .map(|&t| steering_elements(t, r.dim(), spacing))
        .collect();
    cross_correlation_with(r, &a)
}

fn cross_correlation_with(r: &HermitianMatrix, a: &[CVec]) -> Result<f64> {
    let q = a.len();
    if q < 2 {
        return Err(Error::Domain(format!(
            "cross-correlation needs at least 2 targets, got {q}"
        )));
    }
    let mut acc = 0.0;
    for p in 0..q {
        for s in p + 1..q {
            acc += r.bilinear(&a[p], &a[s]).norm_sqr();
        }
    }
    Ok(2.0 * acc / (q * q - q) as f64)
}

/// Precomputed steering vectors for repeated evaluation of the sensing objective.
#[derive(Clone, Debug)]
pub struct SensingGeometry {
    pub grid: Vec<CVec>,
    pub targets: Vec<CVec>,
    pub ideal: Vec<f64>,
    pub delta2: f64,
}

impl SensingGeometry {
    pub fn new(scenario: &Scenario, ideal: &IdealBeampattern) -> Result<Self> {
        if ideal.values.len() != scenario.grid_deg.len() {
            return Err(Error::Domain(
                "ideal beampattern and grid lengths differ".into(),
            ));
        }
        Ok(Self {
            grid: scenario
                .grid_deg
                .iter()
                .map(|&d| scenario.steer_deg(d))
                .collect(),
            targets: scenario
                .targets_deg
                .iter()
                .map(|&d| scenario.steer_deg(d))
                .collect(),
            ideal: ideal.values.clone(),
            delta2: scenario.delta2,
        })
    }

    pub fn beampattern(&self, r: &HermitianMatrix) -> Vec<f64> {
        self.grid.iter().map(|a| r.quad_form(a)).collect()
    }

    pub fn mse(&self, r: &HermitianMatrix, delta1: f64) -> f64 {
        let l = self.grid.len() as f64;
        self.grid
            .iter()
            .zip(&self.ideal)
            .map(|(a, phi)| (delta1 * phi - r.quad_form(a)).powi(2))
            .sum::<f64>()
            / l
    }

    pub fn cross_correlation(&self, r: &HermitianMatrix) -> f64 {
        cross_correlation_with(r, &self.targets).unwrap_or(0.0)
    }

    pub fn objective(&self, r: &HermitianMatrix, delta1: f64) -> f64 {
        self.cross_correlation(r) + self.delta2 * self.mse(r, delta1)
    }
}

/// `(1/L) sum_l |delta1 Phi_l - P_l|^2` on the grid of `ideal`.
pub fn beampattern_mse(
    r: &HermitianMatrix,
    delta1: f64,
    ideal: &IdealBeampattern,
    spacing: f64,
) -> f64 {
    let grid: Vec<f64> = ideal.grid_deg.iter().map(|d| d.to_radians()).collect();
    let p = beampattern(r, &grid, spacing);
    p.iter()
        .zip(&ideal.values)
        .map(|(p, phi)| (delta1 * phi - p).powi(2))
        .sum::<f64>()
        / p.len() as f64
}

/// `L = L_c + delta2 * L_b`.
pub fn sensing_objective(
    r: &HermitianMatrix,
    delta1: f64,
    ideal: &IdealBeampattern,
    delta2: f64,
    targets_rad: &[f64],
    spacing: f64,
) -> Result<f64> {
    Ok(cross_correlation(r, targets_rad, spacing)?
        + delta2 * beampattern_mse(r, delta1, ideal, spacing))
}

pub fn sinr_user(set: &CovarianceSet, scenario: &Scenario, k: usize) -> Result<f64> {
    if k >= set.per_user.len() || k >= scenario.h_users.len() {
        return Err(Error::Domain(format!("user index {k} out of range")));
    }
    let h = &scenario.h_users[k];
    let signal = set.per_user[k].quad_form(h);
    let interference = set.total.quad_form(h) - signal;
    Ok(signal / (interference.max(0.0) + scenario.user_floor(k)))
}

/// SINR of an eavesdropper along a direction with path loss `beta_abs2`.
pub fn sinr_directional(set: &CovarianceSet, a: &CVec, beta_abs2: f64, noise: f64) -> f64 {
    let comm = set.comm().quad_form(a);
    let sens = set.sensing.quad_form(a);
    beta_abs2 * comm / (beta_abs2 * sens + noise)
}

pub fn sinr_ae(set: &CovarianceSet, scenario: &Scenario) -> f64 {
    sinr_ae_at(set, scenario, scenario.ae_angle_deg())
}

pub fn sinr_ae_at(set: &CovarianceSet, scenario: &Scenario, angle_deg: f64) -> f64 {
    sinr_directional(
        set,
        &scenario.steer_deg(angle_deg),
        scenario.ae_beta_abs2(),
        scenario.noise_s,
    )
}

pub fn sinr_pe(set: &CovarianceSet, h_p: &CVec, noise_p: f64) -> f64 {
    let comm = set.comm().quad_form(h_p);
    comm / (set.sensing.quad_form(h_p) + noise_p)
}

/// `(min_k log2(1 + g_u,k) - log2(1 + g_a + g_p))^+`.
pub fn secrecy_from_sinrs(user: &[f64], ae: f64, pe: f64) -> f64 {
    secrecy_margin(user, ae + pe).max(0.0)
}

/// Unclamped secrecy margin for a combined eavesdropper SINR.
pub fn secrecy_margin(user: &[f64], eve: f64) -> f64 {
    let worst = user
        .iter()
        .map(|g| (1.0 + g).log2())
        .fold(f64::INFINITY, f64::min);
    worst - (1.0 + eve).log2()
}

pub fn secrecy_rate(set: &CovarianceSet, scenario: &Scenario, h_p: &CVec) -> Result<f64> {
    let user = (0..scenario.k_users)
        .map(|k| sinr_user(set, scenario, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(secrecy_from_sinrs(
        &user,
        sinr_ae(set, scenario),
        sinr_pe(set, h_p, scenario.noise_p),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, C64};
    use crate::rng;
    use crate::scenario::{
        build_default_scenario, cn_vector, ideal_beampattern, ScenarioOverrides,
    };
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_psd(rng: &mut impl Rng, m: usize, rank: usize) -> HermitianMatrix {
        let w = CMat::from_fn(m, rank, |_, _| {
            c64(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        HermitianMatrix::gram(&w)
    }

    fn scenario() -> Scenario {
        build_default_scenario(&ScenarioOverrides {
            rng_seed: Some(3),
            ..Default::default()
        })
        .unwrap()
        .with_seeded_channels()
    }

    fn random_set(rng: &mut impl Rng, s: &Scenario) -> CovarianceSet {
        let per_user: Vec<_> = (0..s.k_users).map(|_| random_psd(rng, s.m, 1)).collect();
        let sensing = random_psd(rng, s.m, 3);
        let total = &sum(&per_user, s.m) + &sensing;
        CovarianceSet::from_parts(per_user, total, 0.7)
    }

    /// Explicit triple loop; shares nothing with the library code path.
    fn quad_oracle(r: &HermitianMatrix, a: &CVec) -> f64 {
        let m = r.as_matrix();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..a.len() {
            for j in 0..a.len() {
                acc += a[i].conj() * m[(i, j)] * a[j];
            }
        }
        acc.re
    }

    #[test]
    fn beampattern_of_scaled_identity_is_flat() {
        let s = scenario();
        let r = HermitianMatrix::scaled_identity(s.m, s.p_budget / s.m as f64);
        for p in beampattern(&r, &s.grid_rad(), 0.5) {
            assert_relative_eq!(p, s.p_budget, epsilon = 1e-12);
        }
        assert!(
            beampattern(&HermitianMatrix::zeros(s.m), &s.grid_rad(), 0.5)
                .iter()
                .all(|&p| p == 0.0)
        );
    }

    #[test]
    fn beampattern_peak_of_steered_covariance() {
        let s = scenario();
        let a = s.steer_deg(20.0);
        let r = HermitianMatrix::outer(&a).scale(s.p_budget / s.m as f64);
        let p = beampattern(&r, &[20f64.to_radians()], 0.5);
        assert_relative_eq!(p[0], quad_oracle(&r, &a), epsilon = 1e-10);
        assert_relative_eq!(p[0], s.p_budget * s.m as f64, epsilon = 1e-9);
    }

    #[test]
    fn mse_examples() {
        let s = scenario();
        let ideal = ideal_beampattern(&s, 10.0).unwrap();
        assert_eq!(
            beampattern_mse(&HermitianMatrix::zeros(s.m), 0.0, &ideal, 0.5),
            0.0
        );
        let flat = IdealBeampattern {
            values: vec![1.0; ideal.values.len()],
            ..ideal.clone()
        };
        let r = HermitianMatrix::scaled_identity(s.m, s.p_budget / s.m as f64);
        assert!(beampattern_mse(&r, s.p_budget, &flat, 0.5) < 1e-24);

        let mut g = rng::stream(9, 0);
        let r = random_psd(&mut g, s.m, 4);
        let mut acc = 0.0;
        for (deg, phi) in ideal.grid_deg.iter().zip(&ideal.values) {
            let a = s.steer_deg(*deg);
            acc += (0.4 * phi - quad_oracle(&r, &a)).powi(2);
        }
        assert_relative_eq!(
            beampattern_mse(&r, 0.4, &ideal, 0.5),
            acc / 181.0,
            max_relative = 1e-10
        );
        let geo = SensingGeometry::new(&s, &ideal).unwrap();
        assert_relative_eq!(geo.mse(&r, 0.4), acc / 181.0, max_relative = 1e-10);
    }

    #[test]
    fn cross_correlation_examples() {
        let s = scenario();
        let t = s.targets_rad();
        assert_eq!(
            cross_correlation(&HermitianMatrix::zeros(s.m), &t, 0.5).unwrap(),
            0.0
        );
        let pair = [-0.3, 0.8];
        let a0 = steering_elements(pair[0], s.m, 0.5);
        let a1 = steering_elements(pair[1], s.m, 0.5);
        let expect = a0.dotc(&a1).norm_sqr();
        let got = cross_correlation(&HermitianMatrix::identity(s.m), &pair, 0.5).unwrap();
        assert_relative_eq!(got, expect, max_relative = 1e-12);

        let r = random_psd(&mut rng::stream(2, 0), s.m, 3);
        let mut perm = t.clone();
        perm.reverse();
        perm.swap(0, 2);
        assert_relative_eq!(
            cross_correlation(&r, &t, 0.5).unwrap(),
            cross_correlation(&r, &perm, 0.5).unwrap(),
            max_relative = 1e-12
        );
        assert!(cross_correlation(&r, &t[..1], 0.5).is_err());
    }

    #[test]
    fn objective_weights() {
        let s = scenario();
        let ideal = ideal_beampattern(&s, 10.0).unwrap();
        let t = s.targets_rad();
        let r = random_psd(&mut rng::stream(4, 0), s.m, 2);
        let lc = cross_correlation(&r, &t, 0.5).unwrap();
        let lb = beampattern_mse(&r, 0.9, &ideal, 0.5);
        assert_eq!(
            sensing_objective(&r, 0.9, &ideal, 0.0, &t, 0.5).unwrap(),
            lc
        );
        assert_relative_eq!(
            sensing_objective(&r, 0.9, &ideal, 1.0, &t, 0.5).unwrap(),
            lc + lb,
            max_relative = 1e-14
        );
        let geo = SensingGeometry::new(&s, &ideal).unwrap();
        assert_relative_eq!(geo.objective(&r, 0.9), lc + 0.2 * lb, max_relative = 1e-10);
    }

    #[test]
    fn user_sinr_examples() {
        let s = scenario();
        let mut g = rng::stream(5, 0);
        let zero = CovarianceSet::from_parts(
            vec![HermitianMatrix::zeros(s.m), random_psd(&mut g, s.m, 1)],
            random_psd(&mut g, s.m, 10),
            0.0,
        );
        assert_eq!(sinr_user(&zero, &s, 0).unwrap(), 0.0);

        let rk = random_psd(&mut g, s.m, 1);
        let only = CovarianceSet::from_parts(
            vec![rk.clone(), HermitianMatrix::zeros(s.m)],
            rk.clone(),
            0.0,
        );
        let h = &s.h_users[0];
        assert_relative_eq!(
            sinr_user(&only, &s, 0).unwrap(),
            quad_oracle(&rk, h) / s.user_floor(0),
            max_relative = 1e-12
        );

        let set = random_set(&mut g, &s);
        for k in 0..s.k_users {
            let h = &s.h_users[k];
            let num = quad_oracle(&set.per_user[k], h);
            let den =
                quad_oracle(&set.total, h) - num + s.p_jam * s.h_ae_to_lu[k].norm_sqr() + s.noise_c;
            assert_relative_eq!(
                sinr_user(&set, &s, k).unwrap(),
                num / den,
                max_relative = 1e-10
            );
        }
        assert!(sinr_user(&set, &s, 7).is_err());
    }

    #[test]
    fn eavesdropper_sinr_examples() {
        let s = scenario();
        let mut g = rng::stream(6, 0);
        let rs = random_psd(&mut g, s.m, 3);
        let no_comm =
            CovarianceSet::from_parts(vec![HermitianMatrix::zeros(s.m); 2], rs.clone(), 0.0);
        assert_eq!(sinr_ae(&no_comm, &s), 0.0);
        let hp = cn_vector(&mut g, s.m, s.pe_variance);
        assert_eq!(sinr_pe(&no_comm, &hp, s.noise_p), 0.0);

        let per_user = vec![random_psd(&mut g, s.m, 1), random_psd(&mut g, s.m, 1)];
        let rc = sum(&per_user, s.m);
        let no_sens = CovarianceSet::from_parts(per_user, rc.clone(), 0.0);
        let a = s.steer_deg(60.0);
        assert_relative_eq!(
            sinr_ae(&no_sens, &s),
            quad_oracle(&rc, &a) / s.noise_s,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            sinr_pe(&no_sens, &hp, s.noise_p),
            quad_oracle(&rc, &hp) / s.noise_p,
            max_relative = 1e-10
        );

        let set = random_set(&mut g, &s);
        let rc = set.comm();
        let expect = quad_oracle(&rc, &a) / (quad_oracle(&set.sensing, &a) + s.noise_s);
        assert_relative_eq!(sinr_ae(&set, &s), expect, max_relative = 1e-10);
        let expect = quad_oracle(&rc, &hp) / (quad_oracle(&set.sensing, &hp) + s.noise_p);
        assert_relative_eq!(sinr_pe(&set, &hp, s.noise_p), expect, max_relative = 1e-10);
    }

    #[test]
    fn secrecy_examples() {
        assert_relative_eq!(secrecy_from_sinrs(&[1.0, 1.0], 0.0, 0.0), 1.0);
        assert_eq!(secrecy_from_sinrs(&[0.0, 0.0], 0.3, 0.2), 0.0);

        let s = scenario();
        let mut g = rng::stream(8, 0);
        let set = random_set(&mut g, &s);
        let hp = cn_vector(&mut g, s.m, s.pe_variance);
        let gu: Vec<f64> = (0..2).map(|k| sinr_user(&set, &s, k).unwrap()).collect();
        let re = (1.0 + sinr_ae(&set, &s) + sinr_pe(&set, &hp, s.noise_p)).log2();
        let expect = gu
            .iter()
            .map(|g| (1.0 + g).log2() - re)
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        assert_relative_eq!(
            secrecy_rate(&set, &s, &hp).unwrap(),
            expect,
            max_relative = 1e-12
        );
    }

    #[test]
    fn beamformer_round_trip() {
        let mut g = rng::stream(10, 0);
        let w_c = CMat::from_fn(6, 2, |_, _| c64(g.random(), g.random()));
        let w_s = CMat::from_fn(6, 6, |_, _| c64(g.random(), g.random()));
        let b = BeamformerSet {
            w_c: w_c.clone(),
            w_s,
        };
        let set = b.covariances(1.0);
        set.check(1e-9).unwrap();
        assert!(set.rank_one_flags().iter().all(|&f| f));
        let recon = &set.comm() + &set.sensing;
        assert!((recon.as_matrix() - b.total().as_matrix()).norm() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn secrecy_monotone(gu in prop::collection::vec(0.0f64..100.0, 1..4), ga in 0.0f64..10.0, gp in 0.0f64..10.0, bump in 0.0f64..5.0, idx in 0usize..4) {
                let base = secrecy_from_sinrs(&gu, ga, gp);
                let mut up = gu.clone();
                let i = idx % up.len();
                up[i] += bump;
                prop_assert!(secrecy_from_sinrs(&up, ga, gp) >= base);
                prop_assert!(secrecy_from_sinrs(&gu, ga + bump, gp) <= base);
                prop_assert!(secrecy_from_sinrs(&gu, ga, gp + bump) <= base);
            }

            #[test]
            fn beampattern_bounded_by_spectrum(seed in 0u64..1000, rank in 1usize..6) {
                let r = random_psd(&mut rng::stream(seed, 1), 8, rank);
                let grid: Vec<f64> = (-90..=90).map(|d| (d as f64).to_radians()).collect();
                let lmax = r.lambda_max();
                for p in beampattern(&r, &grid, 0.5) {
                    prop_assert!(p >= -1e-9);
                    prop_assert!(p <= 8.0 * lmax * (1.0 + 1e-9));
                }
            }

            #[test]
            fn secrecy_matches_threshold_form(eu in 0.1f64..100.0, ea in 0.01f64..5.0, ep in 0.01f64..5.0) {
                let direct = (1.0 + eu).log2() - (1.0 + ea + ep).log2();
                prop_assert!((secrecy_from_sinrs(&[eu, eu * 2.0], ea, ep) - direct.max(0.0)).abs() < 1e-12);
            }
        }
    }
}
