//! Operator-splitting backend for small problems and wasm builds.
//!
//! Standard ADMM on `Ax + s = b, s in K` with over-relaxation, a cached dense
//! Cholesky factor of `P + sigma I + rho A'A`, and occasional rho rebalancing.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{smat, svec, Cone, RawResult, RealConic, SolveOptions, SolveStatus};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub max_iter: u32,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_infeasible: f64,
    pub check_every: u32,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            max_iter: 50_000,
            eps_abs: 1e-7,
            eps_rel: 1e-7,
            eps_infeasible: 1e-8,
            check_every: 25,
        }
    }
}

fn project(cones: &[Cone], v: &mut DVector<f64>) -> Result<()> {
    let mut row = 0;
    for c in cones {
        let k = c.rows();
        match *c {
            Cone::Zero(_) => v.rows_mut(row, k).fill(0.0),
            Cone::Nonneg(_) => v.rows_mut(row, k).iter_mut().for_each(|e| *e = e.max(0.0)),
            Cone::Psd(n) => {
                let m = smat(v.rows(row, k).as_slice(), n);
                let eig = SymmetricEigen::new(m);
                let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
                let proj = &eig.eigenvectors * d * eig.eigenvectors.transpose();
                v.rows_mut(row, k).copy_from(&svec(&proj));
            }
            Cone::Exp => {
                return Err(Error::Solver(
                    "the ADMM backend does not support exponential cones".into(),
                ))
            }
        }
        row += k;
    }
    Ok(())
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

pub(super) fn solve(conic: &RealConic, opts: &SolveOptions) -> Result<RawResult> {
    let st = &opts.admm;
    let (n, m) = (conic.n, conic.m());
    let a = conic.a_dense();
    let at = a.transpose();
    let ata = &at * &a;
    let p_dense = conic.p_dense();
    let p = &p_dense;
    let q = DVector::from_column_slice(&conic.q);
    let b = DVector::from_column_slice(&conic.b);

    let factor = |rho: f64| {
        let k = p + DMatrix::identity(n, n) * st.sigma + &ata * rho;
        k.cholesky()
            .ok_or_else(|| Error::Solver("ADMM system matrix is not positive definite".into()))
    };

    let mut rho = st.rho;
    let mut chol = factor(rho)?;
    let mut x = DVector::zeros(n);
    let mut s = DVector::zeros(m);
    let mut y = DVector::zeros(m);
    let mut status = SolveStatus::Inaccurate;
    let mut iterations = 0;

    for it in 1..=st.max_iter {
        iterations = it;
        let rhs = &x * st.sigma - &q + &at * ((&b - &s) * rho + &y);
        let x_tilde = chol.solve(&rhs);
        let s_tilde = &b - &a * &x_tilde;
        let x_next = &x_tilde * st.alpha + &x * (1.0 - st.alpha);
        let s_relax = &s_tilde * st.alpha + &s * (1.0 - st.alpha);
        let mut s_next = &s_relax + &y / rho;
        project(&conic.cones, &mut s_next)?;
        let y_prev = y.clone();
        y += (&s_relax - &s_next) * rho;
        x = x_next;
        s = s_next;

        if it % st.check_every != 0 {
            continue;
        }
        let ax = &a * &x;
        let px = p * &x;
        let aty = &at * &y;
        let r_prim = inf_norm(&(&ax + &s - &b));
        let r_dual = inf_norm(&(&px + &q - &aty));
        let scale_p = inf_norm(&ax).max(inf_norm(&s)).max(inf_norm(&b));
        let scale_d = inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&q));
        if r_prim <= st.eps_abs + st.eps_rel * scale_p
            && r_dual <= st.eps_abs + st.eps_rel * scale_d
        {
            status = SolveStatus::Optimal;
            break;
        }

        // Farkas certificate: A'dy = 0 with b'dy > 0.
        let dy = &y - &y_prev;
        let dy_norm = inf_norm(&dy);
        if dy_norm > st.eps_infeasible
            && inf_norm(&(&at * &dy)) <= st.eps_infeasible * dy_norm
            && b.dot(&dy) > st.eps_infeasible * dy_norm
        {
            status = SolveStatus::Infeasible;
            break;
        }

        // Keep primal and dual residuals balanced.
        if it % (st.check_every * 8) == 0 && r_prim > 0.0 && r_dual > 0.0 {
            let ratio = ((r_prim / scale_p.max(1e-12)) / (r_dual / scale_d.max(1e-12))).sqrt();
            if !(0.2..=5.0).contains(&ratio) {
                rho = (rho * ratio).clamp(1e-6, 1e6);
                chol = factor(rho)?;
            }
        }
    }

    let pv = 0.5 * x.dot(&(p * &x)) + q.dot(&x);
    let dv = -0.5 * x.dot(&(p * &x)) + b.dot(&y);
    let gap = (pv - dv).abs() / pv.abs().min(dv.abs()).max(1.0);
    Ok(RawResult {
        status,
        x: x.as_slice().to_vec(),
        gap,
        iterations,
        z: None,
    })
}
