//! Problem instances: array and power parameters, random channels, angle
//! grids and the ideal beampattern template.
//!
//! Angles are stored in degrees (the external unit) and converted to radians
//! whenever steering vectors are formed, which keeps the JSON round trip exact.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, cvecs_serde, steering_elements, CMat, CVec, C64};

/// Angles closer than this (degrees) are considered equal.
const ANGLE_EPS_DEG: f64 = 1e-9;

/// Immutable problem instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Transmit antennas.
    pub m: usize,
    /// Legitimate users.
    pub k_users: usize,
    /// ULA element spacing in wavelengths.
    pub spacing: f64,
    /// Target directions in degrees.
    pub targets_deg: Vec<f64>,
    /// Index into `targets_deg` of the active eavesdropper.
    pub ae_index: usize,
    /// BS-to-user channels, one M-vector per user (empty until drawn).
    #[serde(with = "cvecs_serde")]
    pub h_users: Vec<CVec>,
    /// AE-to-user jamming channels, one scalar per user.
    #[serde(with = "complex_list")]
    pub h_ae_to_lu: Vec<C64>,
    /// Per-entry variance of the passive-eavesdropper channel (watts).
    pub pe_variance: f64,
    /// AE jamming power (watts).
    pub p_jam: f64,
    pub noise_c: f64,
    pub noise_s: f64,
    pub noise_p: f64,
    /// Transmit power budget (watts).
    pub p_budget: f64,
    /// Complex path-loss factor per target.
    #[serde(with = "complex_list")]
    pub beta: Vec<C64>,
    /// Path-loss magnitude assumed toward candidate PE directions.
    pub beta_p_abs: f64,
    /// Required PE outage probability.
    pub tau: f64,
    /// Sensing angle grid in degrees, strictly increasing.
    pub grid_deg: Vec<f64>,
    /// Weight of the beampattern MSE in the sensing objective.
    pub delta2: f64,
    /// Mainlobe width of the ideal beampattern (degrees).
    pub mainlobe_width_deg: f64,
    pub rng_seed: u64,
}

/// Optional overrides applied on top of the defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioOverrides {
    pub m: Option<usize>,
    pub k_users: Option<usize>,
    pub spacing: Option<f64>,
    pub targets_deg: Option<Vec<f64>>,
    pub ae_angle_deg: Option<f64>,
    pub pe_variance: Option<f64>,
    pub p_jam: Option<f64>,
    pub noise_c: Option<f64>,
    pub noise_s: Option<f64>,
    pub noise_p: Option<f64>,
    pub p_budget: Option<f64>,
    pub beta_abs: Option<f64>,
    pub beta_p_abs: Option<f64>,
    pub tau: Option<f64>,
    pub grid_step_deg: Option<f64>,
    pub delta2: Option<f64>,
    pub mainlobe_width_deg: Option<f64>,
    pub rng_seed: Option<u64>,
}

/// Builds a scenario from the default operating point plus overrides.
///
/// Defaults: 10 antennas, 2 users, targets at -60/-20/20/60 degrees with the
/// AE at 60, all noise powers and the jamming power 0.01 W, 1 W budget,
/// tau = 0.95, PE variance 0.001, a 1-degree grid over [-90, 90], delta2 = 0.2
/// and a 10-degree rectangular mainlobe. Channels are not drawn.
pub fn build_default_scenario(o: &ScenarioOverrides) -> Result<Scenario> {
    let targets = o
        .targets_deg
        .clone()
        .unwrap_or_else(|| vec![-60.0, -20.0, 20.0, 60.0]);
    let ae_angle = o.ae_angle_deg.unwrap_or(*targets.last().unwrap_or(&60.0));
    let ae_index = targets
        .iter()
        .position(|&t| (t - ae_angle).abs() < ANGLE_EPS_DEG)
        .ok_or_else(|| {
            Error::Config(format!(
                "AE angle {ae_angle} deg is not one of the targets {targets:?}"
            ))
        })?;
    let step = o.grid_step_deg.unwrap_or(1.0);
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!(
            "grid step must be positive, got {step}"
        )));
    }
    let n_grid = (180.0 / step + 1e-9).floor() as usize + 1;
    let grid_deg = (0..n_grid).map(|i| -90.0 + i as f64 * step).collect();
    let beta_abs = o.beta_abs.unwrap_or(1.0);
    let s = Scenario {
        m: o.m.unwrap_or(10),
        k_users: o.k_users.unwrap_or(2),
        spacing: o.spacing.unwrap_or(0.5),
        beta: vec![c64(beta_abs, 0.0); targets.len()],
        targets_deg: targets,
        ae_index,
        h_users: Vec::new(),
        h_ae_to_lu: Vec::new(),
        pe_variance: o.pe_variance.unwrap_or(0.001),
        p_jam: o.p_jam.unwrap_or(0.01),
        noise_c: o.noise_c.unwrap_or(0.01),
        noise_s: o.noise_s.unwrap_or(0.01),
        noise_p: o.noise_p.unwrap_or(0.01),
        p_budget: o.p_budget.unwrap_or(1.0),
        beta_p_abs: o.beta_p_abs.unwrap_or(1.0),
        tau: o.tau.unwrap_or(0.95),
        grid_deg,
        delta2: o.delta2.unwrap_or(0.2),
        mainlobe_width_deg: o.mainlobe_width_deg.unwrap_or(10.0),
        rng_seed: o.rng_seed.unwrap_or(0),
    };
    s.validate()?;
    Ok(s)
}

impl Scenario {
    /// Checks every structural invariant; channels are only checked when present.
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.m == 0 || self.k_users == 0 {
            return cfg(format!(
                "need m >= 1 and k >= 1, got m={} k={}",
                self.m, self.k_users
            ));
        }
        for (name, v) in [
            ("pe_variance", self.pe_variance),
            ("p_jam", self.p_jam),
            ("noise_c", self.noise_c),
            ("noise_s", self.noise_s),
            ("noise_p", self.noise_p),
            ("p_budget", self.p_budget),
            ("spacing", self.spacing),
            ("beta_p_abs", self.beta_p_abs),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return cfg(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return cfg(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.delta2) {
            return cfg(format!("delta2 must lie in [0, 1], got {}", self.delta2));
        }
        if !(self.mainlobe_width_deg > 0.0) {
            return cfg(format!(
                "mainlobe width must be positive, got {}",
                self.mainlobe_width_deg
            ));
        }
        if self.targets_deg.is_empty() {
            return cfg("at least one target is required".into());
        }
        if self.ae_index >= self.targets_deg.len() {
            return cfg(format!("AE index {} out of range", self.ae_index));
        }
        for (i, &t) in self.targets_deg.iter().enumerate() {
            if !(-90.0..=90.0).contains(&t) {
                return cfg(format!("target {t} deg outside [-90, 90]"));
            }
            for &u in &self.targets_deg[i + 1..] {
                if (t - u).abs() < ANGLE_EPS_DEG {
                    return cfg(format!("duplicate target angle {t} deg"));
                }
            }
        }
        if self.beta.len() != self.targets_deg.len() {
            return cfg("one path-loss factor per target is required".into());
        }
        if self.beta[self.ae_index].norm() == 0.0 {
            return cfg("AE path loss must be nonzero".into());
        }
        if self.grid_deg.is_empty() {
            return cfg("angle grid is empty".into());
        }
        if self.grid_deg.windows(2).any(|w| w[1] <= w[0]) {
            return cfg("angle grid must be strictly increasing".into());
        }
        if self.grid_deg[0] < -90.0 || *self.grid_deg.last().unwrap() > 90.0 {
            return cfg("angle grid must lie within [-90, 90] degrees".into());
        }
        if !self.h_users.is_empty() {
            if self.h_users.len() != self.k_users || self.h_ae_to_lu.len() != self.k_users {
                return cfg("channel count does not match the number of users".into());
            }
            if self.h_users.iter().any(|h| h.len() != self.m) {
                return cfg("user channel length does not match the antenna count".into());
            }
        }
        Ok(())
    }

    pub fn has_channels(&self) -> bool {
        self.h_users.len() == self.k_users && !self.h_users.is_empty()
    }

    pub fn n_targets(&self) -> usize {
        self.targets_deg.len()
    }

    pub fn ae_angle_deg(&self) -> f64 {
        self.targets_deg[self.ae_index]
    }

    pub fn ae_beta_abs2(&self) -> f64 {
        self.beta[self.ae_index].norm_sqr()
    }

    pub fn grid_rad(&self) -> Vec<f64> {
        self.grid_deg.iter().map(|d| d.to_radians()).collect()
    }

    pub fn targets_rad(&self) -> Vec<f64> {
        self.targets_deg.iter().map(|d| d.to_radians()).collect()
    }

    /// Steering vector toward an angle given in degrees.
    pub fn steer_deg(&self, deg: f64) -> CVec {
        steering_elements(deg.to_radians(), self.m, self.spacing)
    }

    /// Jamming-plus-noise power seen by user `k`: `P_a |h_a,k|^2 + sigma_c^2`.
    pub fn user_floor(&self, k: usize) -> f64 {
        self.p_jam * self.h_ae_to_lu[k].norm_sqr() + self.noise_c
    }

    /// K x M matrix whose rows are `h_k^H`.
    pub fn h_u(&self) -> CMat {
        CMat::from_fn(self.k_users, self.m, |k, j| self.h_users[k][j].conj())
    }

    /// Same scenario with channels drawn from the scenario's own seed.
    pub fn with_seeded_channels(&self) -> Self {
        let mut rng = crate::rng::stream(self.rng_seed, 0);
        draw_channels(self, &mut rng)
    }
}

fn cn_sample<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    c64(re * s, im * s)
}

/// i.i.d. circularly-symmetric complex Gaussian vector with per-entry variance.
pub fn cn_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, variance: f64) -> CVec {
    CVec::from_iterator(len, (0..len).map(|_| cn_sample(rng, variance)))
}

/// Draws `h_k ~ CN(0, I_M)` and `h_a,k ~ CN(0, 1)` for every user.
pub fn draw_channels(scenario: &Scenario, rng: &mut ChaCha8Rng) -> Scenario {
    let mut s = scenario.clone();
    s.h_users = (0..s.k_users).map(|_| cn_vector(rng, s.m, 1.0)).collect();
    s.h_ae_to_lu = (0..s.k_users).map(|_| cn_sample(rng, 1.0)).collect();
    s
}

/// One PE channel realization `h_p ~ CN(0, c I_M)`.
pub fn draw_pe_channel<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> CVec {
    cn_vector(rng, scenario.m, scenario.pe_variance)
}

/// Ideal beampattern sampled on the scenario grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdealBeampattern {
    pub grid_deg: Vec<f64>,
    pub values: Vec<f64>,
    pub mainlobe_width_deg: f64,
}

/// Rectangular unit-gain lobes of the given width centered on every target.
pub fn ideal_beampattern(scenario: &Scenario, mainlobe_width_deg: f64) -> Result<IdealBeampattern> {
    ideal_beampattern_robust(scenario, mainlobe_width_deg, 0.0)
}

/// As [`ideal_beampattern`], with the AE lobe widened by `ae_uncertainty_deg` on each side.
pub fn ideal_beampattern_robust(
    scenario: &Scenario,
    mainlobe_width_deg: f64,
    ae_uncertainty_deg: f64,
) -> Result<IdealBeampattern> {
    if !(mainlobe_width_deg > 0.0) {
        return Err(Error::Config(format!(
            "mainlobe width must be positive, got {mainlobe_width_deg}"
        )));
    }
    if !(ae_uncertainty_deg >= 0.0) {
        return Err(Error::Config(format!(
            "AE uncertainty must be nonnegative, got {ae_uncertainty_deg}"
        )));
    }
    let half = mainlobe_width_deg / 2.0;
    let values = scenario
        .grid_deg
        .iter()
        .map(|&g| {
            let hit = scenario.targets_deg.iter().enumerate().any(|(q, &t)| {
                let extra = if q == scenario.ae_index {
                    ae_uncertainty_deg
                } else {
                    0.0
                };
                (g - t).abs() <= half + extra + ANGLE_EPS_DEG
            });
            if hit {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(IdealBeampattern {
        grid_deg: scenario.grid_deg.clone(),
        values,
        mainlobe_width_deg,
    })
}

mod complex_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[C64], s: S) -> std::result::Result<S::Ok, S::Error> {
        let raw: Vec<[f64; 2]> = v.iter().map(|z| [z.re, z.im]).collect();
        raw.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<C64>, D::Error> {
        let raw = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(raw.into_iter().map(|[re, im]| c64(re, im)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn defaults_match_operating_point() {
        let s = build_default_scenario(&ScenarioOverrides::default()).unwrap();
        assert_eq!(s.m, 10);
        assert_eq!(s.k_users, 2);
        assert_eq!(s.n_targets(), 4);
        assert_eq!(s.tau, 0.95);
        assert_eq!(s.grid_deg.len(), 181);
        assert_eq!(s.ae_angle_deg(), 60.0);
        assert_eq!(s.pe_variance, 0.001);
        assert_eq!(
            (s.noise_c, s.noise_s, s.noise_p, s.p_jam, s.p_budget),
            (0.01, 0.01, 0.01, 0.01, 1.0)
        );
    }

    #[test]
    fn override_m_keeps_other_defaults() {
        let s = build_default_scenario(&ScenarioOverrides {
            m: Some(16),
            ..Default::default()
        })
        .unwrap();
        let d = build_default_scenario(&ScenarioOverrides::default()).unwrap();
        assert_eq!(s.m, 16);
        assert_eq!(Scenario { m: 10, ..s }, d);
    }

    #[test]
    fn invalid_overrides_are_config_errors() {
        let bad_tau = ScenarioOverrides {
            tau: Some(1.5),
            ..Default::default()
        };
        assert!(matches!(
            build_default_scenario(&bad_tau),
            Err(Error::Config(_))
        ));
        let bad_ae = ScenarioOverrides {
            ae_angle_deg: Some(45.0),
            ..Default::default()
        };
        assert!(matches!(
            build_default_scenario(&bad_ae),
            Err(Error::Config(_))
        ));
        let dup = ScenarioOverrides {
            targets_deg: Some(vec![10.0, 10.0]),
            ..Default::default()
        };
        assert!(matches!(
            build_default_scenario(&dup),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn channel_draws_are_deterministic() {
        let s = build_default_scenario(&ScenarioOverrides::default()).unwrap();
        let a = draw_channels(&s, &mut rng::stream(42, 0));
        let b = draw_channels(&s, &mut rng::stream(42, 0));
        assert_eq!(a, b);
        let c = draw_channels(&s, &mut rng::stream(43, 0));
        assert_ne!(a.h_users, c.h_users);
    }

    #[test]
    fn channel_statistics() {
        let mut r = rng::stream(1, 0);
        let n = 100_000;
        let draws = cn_vector(&mut r, n, 1.0);
        let mean = draws.iter().sum::<C64>() / c64(n as f64, 0.0);
        let var = draws.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        assert!(mean.norm() < 0.02);
        assert!((var - 1.0).abs() < 0.02);

        let s = build_default_scenario(&ScenarioOverrides::default()).unwrap();
        let pe_var = (0..10_000)
            .map(|_| {
                draw_pe_channel(&s, &mut r)
                    .iter()
                    .map(|z| z.norm_sqr())
                    .sum::<f64>()
            })
            .sum::<f64>()
            / (10_000.0 * s.m as f64);
        assert!((pe_var - 0.001).abs() < 0.02 * 0.001);
    }

    #[test]
    fn distinct_seeds_are_uncorrelated() {
        let n = 100_000;
        let a = cn_vector(&mut rng::stream(5, 0), n, 1.0);
        let b = cn_vector(&mut rng::stream(6, 0), n, 1.0);
        let rho = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| x * y.conj())
            .sum::<C64>()
            .norm()
            / n as f64;
        assert!(rho < 0.02);
    }

    #[test]
    fn ideal_lobe_edges() {
        let s = build_default_scenario(&ScenarioOverrides::default()).unwrap();
        let ideal = ideal_beampattern(&s, 10.0).unwrap();
        let at = |deg: f64| ideal.values[s.grid_deg.iter().position(|&g| g == deg).unwrap()];
        assert_eq!(at(15.0), 1.0);
        assert_eq!(at(25.0), 1.0);
        assert_eq!(at(14.0), 0.0);
        assert_eq!(at(26.0), 0.0);
        assert_eq!(at(0.0), 0.0);

        let robust = ideal_beampattern_robust(&s, 10.0, 5.0).unwrap();
        let at_r = |deg: f64| robust.values[s.grid_deg.iter().position(|&g| g == deg).unwrap()];
        assert_eq!(at_r(50.0), 1.0);
        assert_eq!(at_r(70.0), 1.0);
        assert_eq!(at_r(71.0), 0.0);
        // non-AE lobes keep their width
        assert_eq!(at_r(26.0), 0.0);

        assert!(matches!(ideal_beampattern(&s, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let s = build_default_scenario(&ScenarioOverrides {
            rng_seed: Some(77),
            ..Default::default()
        })
        .unwrap()
        .with_seeded_channels();
        let text = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
    }
}
