use std::sync::Once;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use openblas_src as _;

use super::{Cone, RawResult, RealConic, SolveOptions, SolveStatus};
use crate::error::{Error, Result};

extern "C" {
    fn openblas_set_num_threads(n: std::os::raw::c_int);
}

static SINGLE_THREAD: Once = Once::new();

/// BLAS threading makes results depend on the machine; pin it to one thread.
fn pin_blas_threads() {
    SINGLE_THREAD.call_once(|| unsafe { openblas_set_num_threads(1) });
}

fn csc_from_triplets(m: usize, n: usize, mut t: Vec<(usize, usize, f64)>) -> CscMatrix<f64> {
    t.sort_by_key(|a| (a.1, a.0));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(t.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(t.len());
    let mut last: Option<(usize, usize)> = None;
    for (r, c, v) in t {
        if last == Some((r, c)) {
            *nzval.last_mut().unwrap() += v;
            continue;
        }
        rowval.push(r);
        nzval.push(v);
        colptr[c + 1] += 1;
        last = Some((r, c));
    }
    for j in 0..n {
        colptr[j + 1] += colptr[j];
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

pub(super) fn solve(conic: &RealConic, opts: &SolveOptions) -> Result<RawResult> {
    pin_blas_threads();
    let n = conic.n;
    let p = csc_from_triplets(n, n, conic.p.clone());
    let a = csc_from_triplets(conic.m(), n, conic.a.clone());
    let cones: Vec<SupportedConeT<f64>> = conic
        .cones
        .iter()
        .map(|c| match *c {
            Cone::Zero(k) => SupportedConeT::ZeroConeT(k),
            Cone::Nonneg(k) => SupportedConeT::NonnegativeConeT(k),
            Cone::Exp => SupportedConeT::ExponentialConeT(),
            Cone::Psd(k) => SupportedConeT::PSDTriangleConeT(k),
        })
        .collect();
    let settings = DefaultSettingsBuilder::default()
        .verbose(std::env::var_os("ISAC_SOLVER_VERBOSE").is_some())
        .max_iter(opts.max_iter)
        .tol_gap_abs(opts.gap)
        .tol_gap_rel(opts.gap)
        .tol_feas(opts.feas)
        .tol_ktratio(opts.gap.min(1e-6))
        .max_threads(1)
        .build()
        .map_err(|e| Error::Solver(format!("solver settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(&p, &conic.q, &a, &conic.b, &cones, settings)
        .map_err(|e| Error::Solver(format!("solver setup: {e}")))?;
    solver.solve();
    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        SolverStatus::AlmostSolved
        | SolverStatus::MaxIterations
        | SolverStatus::InsufficientProgress => SolveStatus::Inaccurate,
        _ => SolveStatus::Failed,
    };
    let (pv, dv) = (sol.obj_val, sol.obj_val_dual);
    let gap = (pv - dv).abs() / pv.abs().min(dv.abs()).max(1.0);
    Ok(RawResult {
        status,
        x: sol.x.clone(),
        gap,
        iterations: sol.iterations,
        z: Some(sol.z.clone()),
    })
}
