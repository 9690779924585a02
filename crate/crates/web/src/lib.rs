//! WebAssembly bindings for the browser demo.
//!
//! [`Session`] is the plain Rust API (usable and tested natively); [`Demo`]
//! wraps it for JavaScript and exchanges JSON strings.

use secure_isac::constraints::{CsiMode, SinrThresholds};
use secure_isac::eval::{
    mc_secrecy, mle_angles, rmse, simulate_return, synthesize, target_response, MleOptions,
    SecrecyStats,
};
use secure_isac::metrics::{beampattern, secrecy_margin, sinr_ae, sinr_user};
use secure_isac::rng;
use secure_isac::scenario::{build_default_scenario, Scenario, ScenarioOverrides};
use secure_isac::stage1::{ideal_for, solve_robust, Method, Stage1Options, Stage1Solution};
use secure_isac::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;
use web_time::Instant;

/// Power floor for the dB beampattern.
const FLOOR_DB: f64 = -40.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DesignView {
    pub method: String,
    pub objective: f64,
    pub angles_deg: Vec<f64>,
    /// Normalized transmit beampattern in dB (peak at 0 dB).
    pub pattern_db: Vec<f64>,
    pub ideal: Vec<f64>,
    pub targets_deg: Vec<f64>,
    pub ae_deg: f64,
    pub user_sinr_db: Vec<f64>,
    pub ae_sinr_db: f64,
    /// Secrecy margin against the AE alone, bits/s/Hz.
    pub margin_vs_ae: f64,
    pub solve_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateView {
    pub truth_deg: Vec<f64>,
    pub estimates_deg: Vec<f64>,
    pub rmse_deg: f64,
}

pub struct Session {
    scenario: Scenario,
    design: Option<Stage1Solution>,
}

fn db(x: f64) -> f64 {
    10.0 * x.max(1e-300).log10()
}

impl Session {
    /// Default scenario with `antennas` elements and channels drawn from `seed`.
    pub fn new(seed: u64, antennas: usize) -> Result<Self> {
        let o = ScenarioOverrides {
            m: Some(antennas),
            rng_seed: Some(seed),
            ..Default::default()
        };
        Ok(Self {
            scenario: build_default_scenario(&o)?.with_seeded_channels(),
            design: None,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Solves the first-stage design and keeps it for the other operations.
    pub fn design(
        &mut self,
        method: &str,
        eps_u_db: f64,
        eps_a_db: f64,
        eps_p_db: f64,
    ) -> Result<DesignView> {
        let method: Method = method.parse()?;
        let s = &self.scenario;
        let t = SinrThresholds::from_db(s.k_users, eps_u_db, eps_a_db, eps_p_db)?;
        let start = Instant::now();
        let sol = solve_robust(s, &t, method, &CsiMode::Perfect, &Stage1Options::default())?;
        let solve_ms = start.elapsed().as_secs_f64() * 1e3;
        let pattern = beampattern(&sol.covariances.total, &s.grid_rad(), s.spacing);
        let peak = pattern.iter().cloned().fold(f64::MIN, f64::max);
        let user = (0..s.k_users)
            .map(|k| sinr_user(&sol.covariances, s, k))
            .collect::<Result<Vec<_>>>()?;
        let ae = sinr_ae(&sol.covariances, s);
        let view = DesignView {
            method: method.to_string(),
            objective: sol.objective,
            angles_deg: s.grid_deg.clone(),
            pattern_db: pattern
                .iter()
                .map(|p| (db(p / peak)).max(FLOOR_DB))
                .collect(),
            ideal: ideal_for(s, &CsiMode::Perfect)?.values,
            targets_deg: s.targets_deg.clone(),
            ae_deg: s.ae_angle_deg(),
            user_sinr_db: user.iter().map(|g| db(*g)).collect(),
            ae_sinr_db: db(ae),
            margin_vs_ae: secrecy_margin(&user, ae),
            solve_ms,
        };
        self.design = Some(sol);
        Ok(view)
    }

    fn current(&self) -> Result<&Stage1Solution> {
        self.design
            .as_ref()
            .ok_or_else(|| Error::Config("run a design first".into()))
    }

    /// Monte Carlo secrecy rate and PE outage of the current design.
    pub fn secrecy(&self, draws: u64, seed: u64) -> Result<SecrecyStats> {
        let sol = self.current()?;
        mc_secrecy(
            &sol.covariances,
            &self.scenario,
            sol.thresholds.eps_p,
            draws,
            &mut rng::stream(seed, 0),
        )
    }

    /// Transmits `snapshots` samples of the current design and estimates the target angles.
    pub fn estimate(&self, snr_db: f64, snapshots: usize, seed: u64) -> Result<EstimateView> {
        let sol = self.current()?;
        let s = &self.scenario;
        let x = synthesize(&sol.beamformers, snapshots, &mut rng::stream(seed, 1))?;
        let response = target_response(s.m, s.spacing, &s.targets_deg);
        let y = simulate_return(
            &x,
            &sol.covariances.total,
            &response,
            snr_db,
            &mut rng::stream(seed, 2),
        )?;
        let opts = MleOptions {
            refine: true,
            ..Default::default()
        };
        let est = mle_angles(&y, s.n_targets(), &s.grid_deg, s.spacing, &opts)?;
        Ok(EstimateView {
            rmse_deg: rmse(&est, &s.targets_deg)?,
            truth_deg: s.targets_deg.clone(),
            estimates_deg: est,
        })
    }
}

fn js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// JavaScript handle. Every method returns a JSON string or throws.
#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, antennas: u32) -> std::result::Result<Demo, JsError> {
        Session::new(seed as u64, antennas as usize)
            .map(Demo)
            .map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn design(
        &mut self,
        method: &str,
        eps_u_db: f64,
        eps_a_db: f64,
        eps_p_db: f64,
    ) -> std::result::Result<String, JsError> {
        js(self.0.design(method, eps_u_db, eps_a_db, eps_p_db))
    }

    pub fn secrecy(&self, draws: u32, seed: u32) -> std::result::Result<String, JsError> {
        js(self.0.secrecy(draws as u64, seed as u64))
    }

    pub fn estimate(
        &self,
        snr_db: f64,
        snapshots: u32,
        seed: u32,
    ) -> std::result::Result<String, JsError> {
        js(self.0.estimate(snr_db, snapshots as usize, seed as u64))
    }
}
