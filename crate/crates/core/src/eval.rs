//! Signal-level evaluation: snapshot synthesis, MLE angle estimation, RMSE,
//! and Monte-Carlo secrecy statistics.

use std::io::Write;

use nalgebra::Cholesky;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, steering_elements, CMat, CVec, HermitianMatrix};
use crate::metrics::{secrecy_from_sinrs, sinr_ae, sinr_user, BeamformerSet, CovarianceSet};
use crate::scenario::{cn_vector, draw_pe_channel, Scenario};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotBatch {
    pub n_snapshots: usize,
    /// M x N transmit samples.
    #[serde(with = "crate::linalg::cmat_serde")]
    pub x: CMat,
    /// M x N received samples, once a return has been simulated.
    #[serde(with = "opt_cmat")]
    pub y: Option<CMat>,
    pub snr_db: Option<f64>,
}

impl SnapshotBatch {
    /// `(1/N) X X^H`.
    pub fn transmit_covariance(&self) -> HermitianMatrix {
        HermitianMatrix::hermitian_part(
            &(&self.x * self.x.adjoint() / c64(self.n_snapshots as f64, 0.0)),
        )
    }

    /// `(1/N) Y Y^H`.
    pub fn receive_covariance(&self) -> Result<HermitianMatrix> {
        let y = self
            .y
            .as_ref()
            .ok_or_else(|| Error::DegenerateBatch("no received samples".into()))?;
        Ok(HermitianMatrix::hermitian_part(
            &(y * y.adjoint() / c64(self.n_snapshots as f64, 0.0)),
        ))
    }
}

/// `x(n) = W_s s(n) + W_c c(n)` with independent unit-variance CSCG symbols.
pub fn synthesize<R: Rng + ?Sized>(
    beams: &BeamformerSet,
    n: usize,
    rng: &mut R,
) -> Result<SnapshotBatch> {
    if n == 0 {
        return Err(Error::Domain("need at least one snapshot".into()));
    }
    let m = beams.w_c.nrows();
    let mut x = CMat::zeros(m, n);
    for j in 0..n {
        let s = cn_vector(rng, beams.w_s.ncols(), 1.0);
        let c = cn_vector(rng, beams.w_c.ncols(), 1.0);
        x.set_column(j, &(&beams.w_s * s + &beams.w_c * c));
    }
    Ok(SnapshotBatch {
        n_snapshots: n,
        x,
        y: None,
        snr_db: None,
    })
}

/// Target response `sum_q a(theta_q) a(theta_q)^H` (unit reflection coefficients).
pub fn target_response(m: usize, spacing: f64, targets_deg: &[f64]) -> CMat {
    targets_deg.iter().fold(CMat::zeros(m, m), |acc, &t| {
        let a = steering_elements(t.to_radians(), m, spacing);
        acc + &a * a.adjoint()
    })
}

/// Adds `y(n) = A x(n) + n_y(n)`; the noise power is set so the mean
/// per-antenna signal power over `sigma^2` equals `snr_db`.
///
/// The signal power uses the covariance the beams were designed for, so
/// batches with paired seeds see identical noise shapes at every SNR.
pub fn simulate_return<R: Rng + ?Sized>(
    batch: &SnapshotBatch,
    design: &HermitianMatrix,
    response: &CMat,
    snr_db: f64,
    rng: &mut R,
) -> Result<SnapshotBatch> {
    if !snr_db.is_finite() {
        return Err(Error::Domain(format!("SNR must be finite, got {snr_db}")));
    }
    let m = response.nrows();
    let signal = (response * design.as_matrix() * response.adjoint())
        .trace()
        .re
        / m as f64;
    let sigma = (signal / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut y = response * &batch.x;
    for j in 0..batch.n_snapshots {
        let noise = cn_vector(rng, m, 1.0) * c64(sigma, 0.0);
        let mut col = y.column_mut(j);
        col += noise;
    }
    Ok(SnapshotBatch {
        y: Some(y),
        snr_db: Some(snr_db),
        ..batch.clone()
    })
}

/// Noiseless return, for tests and exact-recovery checks.
pub fn noiseless_return(batch: &SnapshotBatch, response: &CMat) -> SnapshotBatch {
    SnapshotBatch {
        y: Some(response * &batch.x),
        snr_db: None,
        ..batch.clone()
    }
}

/// Evaluates `tr(P_A R_y)` for candidate steering vectors.
struct Likelihood<'a> {
    r_y: &'a CMat,
}

impl Likelihood<'_> {
    fn value(&self, cols: &[&CVec]) -> f64 {
        let q = cols.len();
        let m = self.r_y.nrows();
        let mut s = CMat::zeros(m, q);
        for (j, c) in cols.iter().enumerate() {
            s.set_column(j, c);
        }
        let gram = s.adjoint() * &s;
        let Some(chol) = Cholesky::new(gram) else {
            return f64::NEG_INFINITY;
        };
        // tr((S^H S)^{-1} S^H R_y S)
        let inner = s.adjoint() * self.r_y * &s;
        chol.solve(&inner).trace().re
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    /// Coordinate sweeps over the grid after peak initialization.
    pub max_sweeps: usize,
    /// Continuous refinement below the grid step (golden-section per coordinate).
    pub refine: bool,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 20,
            refine: false,
        }
    }
}

fn check_batch(r_y: &HermitianMatrix, q: usize, grid_deg: &[f64]) -> Result<()> {
    if q == 0 || grid_deg.len() < q {
        return Err(Error::Domain(format!(
            "cannot place {q} targets on {} grid points",
            grid_deg.len()
        )));
    }
    let vals = r_y.eigenvalues();
    let top = vals.last().copied().unwrap_or(0.0);
    let rank = vals
        .iter()
        .filter(|v| **v > 1e-10 * top.max(f64::MIN_POSITIVE))
        .count();
    if top <= 0.0 || rank < q {
        return Err(Error::DegenerateBatch(format!(
            "covariance rank {rank} is below the target count {q}"
        )));
    }
    Ok(())
}

/// Grid indices of the `q` largest local maxima of `a^H R_y a` (ties by position).
fn peak_init(r_y: &HermitianMatrix, steer: &[CVec], q: usize) -> Vec<usize> {
    let p: Vec<f64> = steer.iter().map(|a| r_y.quad_form(a)).collect();
    let n = p.len();
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&i| (i == 0 || p[i] >= p[i - 1]) && (i + 1 == n || p[i] >= p[i + 1]))
        .collect();
    peaks.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    peaks.truncate(q);
    // too few peaks: fill with the strongest remaining points
    let mut rest: Vec<usize> = (0..n).filter(|i| !peaks.contains(i)).collect();
    rest.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    peaks.extend(rest.into_iter().take(q - peaks.len()));
    peaks
}

/// MLE of `q` target angles on `grid_deg`: peak initialization, then
/// coordinate-wise maximization of `tr(P_A R_y)` until no coordinate moves.
/// Returned angles are sorted.
pub fn mle_angles(
    batch: &SnapshotBatch,
    q: usize,
    grid_deg: &[f64],
    spacing: f64,
    opts: &MleOptions,
) -> Result<Vec<f64>> {
    let r_y = batch.receive_covariance()?;
    let m = r_y.dim();
    check_batch(&r_y, q, grid_deg)?;
    let steer: Vec<CVec> = grid_deg
        .iter()
        .map(|d| steering_elements(d.to_radians(), m, spacing))
        .collect();
    let lik = Likelihood {
        r_y: r_y.as_matrix(),
    };
    let mut idx = peak_init(&r_y, &steer, q);
    let eval = |idx: &[usize]| lik.value(&idx.iter().map(|&i| &steer[i]).collect::<Vec<_>>());
    let mut best = eval(&idx);
    for _ in 0..opts.max_sweeps {
        let mut moved = false;
        for j in 0..q {
            for cand in 0..steer.len() {
                if idx.contains(&cand) {
                    continue;
                }
                let mut trial = idx.clone();
                trial[j] = cand;
                let v = eval(&trial);
                if v > best * (1.0 + 1e-12) + 1e-300 {
                    best = v;
                    idx = trial;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    let mut angles: Vec<f64> = idx.iter().map(|&i| grid_deg[i]).collect();
    if opts.refine {
        let step = grid_step(grid_deg);
        angles = refine(&lik, angles, step, m, spacing);
    }
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

fn grid_step(grid_deg: &[f64]) -> f64 {
    grid_deg
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(f64::INFINITY, f64::min)
        .min(1.0)
}

/// Golden-section search on each coordinate within one grid step, two sweeps.
fn refine(
    lik: &Likelihood<'_>,
    mut angles: Vec<f64>,
    step: f64,
    m: usize,
    spacing: f64,
) -> Vec<f64> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..2 {
        for j in 0..angles.len() {
            let others: Vec<CVec> = angles
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != j)
                .map(|(_, d)| steering_elements(d.to_radians(), m, spacing))
                .collect();
            let f = |t: f64| {
                let a = steering_elements(t.to_radians(), m, spacing);
                let mut cols: Vec<&CVec> = others.iter().collect();
                cols.push(&a);
                lik.value(&cols)
            };
            let (mut lo, mut hi) = ((angles[j] - step).max(-90.0), (angles[j] + step).min(90.0));
            let mut x1 = hi - inv_phi * (hi - lo);
            let mut x2 = lo + inv_phi * (hi - lo);
            let (mut f1, mut f2) = (f(x1), f(x2));
            for _ in 0..40 {
                if f1 < f2 {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + inv_phi * (hi - lo);
                    f2 = f(x2);
                } else {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - inv_phi * (hi - lo);
                    f1 = f(x1);
                }
            }
            let mid = 0.5 * (lo + hi);
            if f(mid) > f(angles[j]) {
                angles[j] = mid;
            }
        }
    }
    angles
}

/// Exhaustive search over all `q`-subsets of the grid (oracle for small `q`).
pub fn mle_exhaustive(
    batch: &SnapshotBatch,
    q: usize,
    grid_deg: &[f64],
    spacing: f64,
) -> Result<Vec<f64>> {
    if q > 3 {
        return Err(Error::Domain(
            "exhaustive MLE is limited to three targets".into(),
        ));
    }
    let r_y = batch.receive_covariance()?;
    check_batch(&r_y, q, grid_deg)?;
    let m = r_y.dim();
    let steer: Vec<CVec> = grid_deg
        .iter()
        .map(|d| steering_elements(d.to_radians(), m, spacing))
        .collect();
    let lik = Likelihood {
        r_y: r_y.as_matrix(),
    };
    let n = steer.len();
    let mut best = (f64::NEG_INFINITY, vec![]);
    let mut idx: Vec<usize> = (0..q).collect();
    loop {
        let v = lik.value(&idx.iter().map(|&i| &steer[i]).collect::<Vec<_>>());
        if v > best.0 {
            best = (v, idx.clone());
        }
        // next combination in lexicographic order
        let Some(pos) = (0..q).rev().find(|&i| idx[i] < n - q + i) else {
            break;
        };
        idx[pos] += 1;
        for i in pos + 1..q {
            idx[i] = idx[i - 1] + 1;
        }
    }
    Ok(best.1.iter().map(|&i| grid_deg[i]).collect())
}

/// RMSE in degrees after the best one-to-one matching of estimates to truth.
pub fn rmse(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    if estimates.len() != truth.len() || truth.is_empty() {
        return Err(Error::Domain(format!(
            "{} estimates for {} targets",
            estimates.len(),
            truth.len()
        )));
    }
    if truth.len() > 8 {
        return Err(Error::Domain(
            "matching is exhaustive and limited to eight targets".into(),
        ));
    }
    let mut perm: Vec<usize> = (0..truth.len()).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let se: f64 = p
            .iter()
            .zip(truth)
            .map(|(&i, t)| (estimates[i] - t).powi(2))
            .sum();
        best = best.min(se);
    });
    Ok((best / truth.len() as f64).sqrt())
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

/// Compensated summation, so results do not drift with the trial count.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Wilson score interval for `successes / n` at `z` standard errors.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecrecyStats {
    pub trials: u64,
    pub mean_cs: f64,
    pub std_cs: f64,
    /// Trials with `gamma_p <= eps_p`.
    pub pe_ok: u64,
    pub pe_ok_rate: f64,
    /// 95% Wilson interval of `pe_ok_rate`.
    pub ci_low: f64,
    pub ci_high: f64,
}

impl SecrecyStats {
    /// True unless `tau` exceeds the rate by more than `z` Wilson standard errors.
    pub fn meets_outage_target(&self, tau: f64, z: f64) -> bool {
        wilson_interval(self.pe_ok, self.trials, z).1 >= tau
    }
}

/// Secrecy rate and PE outage statistics over `trials` PE channel draws.
pub fn mc_secrecy<R: Rng + ?Sized>(
    set: &CovarianceSet,
    scenario: &Scenario,
    eps_p: f64,
    trials: u64,
    rng: &mut R,
) -> Result<SecrecyStats> {
    if trials == 0 {
        return Err(Error::Domain("need at least one trial".into()));
    }
    // only the PE channel varies between trials
    let comm = set.comm();
    let user: Vec<f64> = (0..scenario.k_users)
        .map(|k| sinr_user(set, scenario, k))
        .collect::<Result<_>>()?;
    let ae = sinr_ae(set, scenario);
    let (mut s1, mut s2) = (KahanSum::default(), KahanSum::default());
    let mut ok = 0u64;
    for _ in 0..trials {
        let h = draw_pe_channel(scenario, rng);
        let gamma_p = comm.quad_form(&h) / (set.sensing.quad_form(&h) + scenario.noise_p);
        if gamma_p <= eps_p {
            ok += 1;
        }
        let cs = secrecy_from_sinrs(&user, ae, gamma_p);
        s1.add(cs);
        s2.add(cs * cs);
    }
    let n = trials as f64;
    let mean = s1.value() / n;
    let var = if trials > 1 {
        ((s2.value() - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    let (ci_low, ci_high) = wilson_interval(ok, trials, 1.959_963_984_540_054);
    Ok(SecrecyStats {
        trials,
        mean_cs: mean,
        std_cs: var.sqrt(),
        pe_ok: ok,
        pe_ok_rate: ok as f64 / n,
        ci_low,
        ci_high,
    })
}

/// One row of a sweep summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl SummaryRow {
    /// Mean, sample standard deviation and a normal 95% interval of the mean.
    pub fn from_samples(sweep: f64, xs: &[f64]) -> Self {
        let n = xs.len();
        let mut s = KahanSum::default();
        xs.iter().for_each(|x| s.add(*x));
        let mean = if n > 0 {
            s.value() / n as f64
        } else {
            f64::NAN
        };
        let mut d = KahanSum::default();
        xs.iter().for_each(|x| d.add((x - mean).powi(2)));
        let std = if n > 1 {
            (d.value() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let half = 1.959_963_984_540_054 * std / (n.max(1) as f64).sqrt();
        Self {
            sweep,
            mean,
            std,
            n,
            ci_low: mean - half,
            ci_high: mean + half,
        }
    }
}

pub fn write_summary_csv(rows: &[SummaryRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sweep", "mean", "std", "n", "ci_low", "ci_high"])?;
    for r in rows {
        out.write_record([
            format!("{}", r.sweep),
            format!("{:.12e}", r.mean),
            format!("{:.12e}", r.std),
            r.n.to_string(),
            format!("{:.12e}", r.ci_low),
            format!("{:.12e}", r.ci_high),
        ])?;
    }
    out.flush()?;
    Ok(())
}

mod opt_cmat {
    use super::*;
    use crate::linalg::ComplexMatrixRepr;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        m: &Option<CMat>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        m.as_ref().map(ComplexMatrixRepr::from).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Option<CMat>, D::Error> {
        Option::<ComplexMatrixRepr>::deserialize(d)?
            .map(|r| r.to_matrix().map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[cfg(test)]
mod tests;
