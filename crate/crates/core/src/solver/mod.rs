//! Convex programs over Hermitian matrix blocks and real scalars.
//!
//! A [`ConicProgram`] is built from affine expressions in the variables. It is
//! compiled to a real conic form
//!
//! ```text
//! minimize   1/2 x'Px + q'x + c0
//! subject to b - Ax in K
//! ```
//!
//! where `K` is a product of zero, nonnegative, exponential and PSD cones.
//! Hermitian blocks enter PSD cones through the real embedding
//! `[[Re X, -Im X], [Im X, Re X]]`, stored as a scaled upper triangle
//! (off-diagonal entries multiplied by sqrt 2, column-major), so inner
//! products of embedded blocks equal twice the real trace inner product.

mod admm;
#[cfg(feature = "clarabel")]
mod clarabel_backend;

use web_time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, CMat, CVec, HermitianMatrix, C64};

pub use admm::AdmmSettings;

/// Handle of a Hermitian matrix variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockId(pub usize);

/// Handle of a real scalar variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScalarId(pub usize);

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BlockVar {
    name: String,
    dim: usize,
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ScalarVar {
    name: String,
    index: usize,
}

/// Real affine function `constant + sum coef * x[var]` of the flat variable vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AffineScalar {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineScalar {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.terms.iter_mut().for_each(|t| t.1 *= s);
        self.constant *= s;
        self
    }

    pub fn plus(mut self, other: &AffineScalar) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self.constant += other.constant;
        self
    }

    pub fn minus(self, other: &AffineScalar) -> Self {
        self.plus(&other.clone().scaled(-1.0))
    }

    pub fn add_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    /// Merges duplicate variables and drops exact zeros.
    fn compact(&self) -> Vec<(usize, f64)> {
        let mut t = self.terms.clone();
        t.sort_by_key(|p| p.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(t.len());
        for (i, c) in t {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|p| p.1 != 0.0);
        out
    }
}

/// One term of an affine Hermitian matrix expression.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum MatTerm {
    /// `scale * T X T^H`, with `T = I` when absent.
    Block {
        block: BlockId,
        scale: f64,
        #[serde(with = "opt_cmat")]
        congruence: Option<CMat>,
    },
    /// `x[var] * C` for a Hermitian coefficient `C`.
    Scalar {
        var: ScalarId,
        #[serde(with = "crate::linalg::cmat_serde")]
        coef: CMat,
    },
}

/// Affine Hermitian matrix expression.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AffineMatrix {
    pub dim: usize,
    #[serde(with = "crate::linalg::cmat_serde")]
    pub constant: CMat,
    pub terms: Vec<MatTerm>,
}

impl AffineMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            constant: CMat::zeros(dim, dim),
            terms: Vec::new(),
        }
    }

    pub fn block(mut self, block: BlockId, scale: f64) -> Self {
        self.terms.push(MatTerm::Block {
            block,
            scale,
            congruence: None,
        });
        self
    }

    pub fn congruence(mut self, block: BlockId, scale: f64, t: CMat) -> Self {
        self.terms.push(MatTerm::Block {
            block,
            scale,
            congruence: Some(t),
        });
        self
    }

    pub fn scalar(mut self, var: ScalarId, coef: CMat) -> Self {
        self.terms.push(MatTerm::Scalar { var, coef });
        self
    }

    pub fn plus_const(mut self, c: &CMat) -> Self {
        self.constant += c;
        self
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpConstraint {
    pub x: AffineScalar,
    pub y: AffineScalar,
    pub z: AffineScalar,
}

/// Convex program with a sum-of-squares plus linear objective.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ConicProgram {
    blocks: Vec<BlockVar>,
    scalars: Vec<ScalarVar>,
    n_vars: usize,
    /// `sum w * g(x)^2`, weights nonnegative.
    pub squares: Vec<(f64, AffineScalar)>,
    pub linear: AffineScalar,
    pub eq: Vec<(String, AffineScalar)>,
    pub nonneg: Vec<(String, AffineScalar)>,
    pub psd: Vec<(String, AffineMatrix)>,
    /// `(x, y, z)` with `y exp(x / y) <= z`.
    pub exp: Vec<(String, ExpConstraint)>,
}

/// Variable assignment returned by a backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<f64>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Declares an `n x n` Hermitian block (`n^2` real parameters).
    pub fn add_block(&mut self, name: &str, dim: usize) -> BlockId {
        self.blocks.push(BlockVar {
            name: name.into(),
            dim,
            offset: self.n_vars,
        });
        self.n_vars += dim * dim;
        BlockId(self.blocks.len() - 1)
    }

    pub fn add_scalar(&mut self, name: &str) -> ScalarId {
        self.scalars.push(ScalarVar {
            name: name.into(),
            index: self.n_vars,
        });
        self.n_vars += 1;
        ScalarId(self.scalars.len() - 1)
    }

    pub fn block_dim(&self, b: BlockId) -> usize {
        self.blocks[b.0].dim
    }

    pub fn block_name(&self, b: BlockId) -> &str {
        &self.blocks[b.0].name
    }

    pub fn scalar_index(&self, s: ScalarId) -> usize {
        self.scalars[s.0].index
    }

    pub fn scalar(&self, s: ScalarId) -> AffineScalar {
        AffineScalar {
            terms: vec![(self.scalar_index(s), 1.0)],
            constant: 0.0,
        }
    }

    /// Flat indices of the parameters of a block, paired with their basis matrices.
    fn block_params(&self, b: BlockId) -> Vec<(usize, Param)> {
        let BlockVar { dim: n, offset, .. } = self.blocks[b.0];
        let mut out = Vec::with_capacity(n * n);
        let mut idx = offset;
        for i in 0..n {
            out.push((idx, Param::Diag(i)));
            idx += 1;
        }
        for j in 0..n {
            for i in 0..j {
                out.push((idx, Param::Re(i, j)));
                out.push((idx + 1, Param::Im(i, j)));
                idx += 2;
            }
        }
        out
    }

    /// `Re tr(C X)` and `Im tr(C X)` as affine functions.
    pub fn trace_product(&self, b: BlockId, c: &CMat) -> (AffineScalar, AffineScalar) {
        let mut re = AffineScalar::default();
        let mut im = AffineScalar::default();
        for (idx, p) in self.block_params(b) {
            // tr(C X) = sum_ij C_ji X_ij
            let w = match p {
                Param::Diag(i) => c[(i, i)],
                Param::Re(i, j) => c[(j, i)] + c[(i, j)],
                Param::Im(i, j) => C64::i() * (c[(j, i)] - c[(i, j)]),
            };
            if w.re != 0.0 {
                re.terms.push((idx, w.re));
            }
            if w.im != 0.0 {
                im.terms.push((idx, w.im));
            }
        }
        (re, im)
    }

    pub fn trace(&self, b: BlockId) -> AffineScalar {
        let n = self.block_dim(b);
        self.trace_product(b, &CMat::identity(n, n)).0
    }

    /// `a^H X a`.
    pub fn quad(&self, b: BlockId, a: &CVec) -> AffineScalar {
        self.trace_product(b, &(a * a.adjoint())).0
    }

    /// `u^H X v` as (real part, imaginary part).
    pub fn bilinear(&self, b: BlockId, u: &CVec, v: &CVec) -> (AffineScalar, AffineScalar) {
        self.trace_product(b, &(v * u.adjoint()))
    }

    pub fn minimize_square(&mut self, weight: f64, g: AffineScalar) {
        self.squares.push((weight, g));
    }

    pub fn add_eq(&mut self, name: &str, e: AffineScalar) {
        self.eq.push((name.into(), e));
    }

    pub fn add_nonneg(&mut self, name: &str, e: AffineScalar) {
        self.nonneg.push((name.into(), e));
    }

    pub fn add_psd(&mut self, name: &str, m: AffineMatrix) {
        self.psd.push((name.into(), m));
    }

    pub fn add_exp(&mut self, name: &str, x: AffineScalar, y: AffineScalar, z: AffineScalar) {
        self.exp.push((name.into(), ExpConstraint { x, y, z }));
    }

    /// Structural validation: indices in range, weights nonnegative, shapes consistent.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invariant(m));
        let in_range =
            |e: &AffineScalar| e.terms.iter().all(|t| t.0 < self.n_vars && t.1.is_finite());
        for (w, g) in &self.squares {
            if !(*w >= 0.0) {
                return bad(format!(
                    "objective weight {w} makes the objective nonconvex"
                ));
            }
            if !in_range(g) {
                return bad("objective references an undeclared variable".into());
            }
        }
        let scalars = self.eq.iter().chain(&self.nonneg).map(|(n, e)| (n, e));
        for (name, e) in scalars {
            if !in_range(e) {
                return bad(format!(
                    "constraint {name} references an undeclared variable"
                ));
            }
        }
        for (name, m) in &self.psd {
            if m.constant.nrows() != m.dim || m.constant.ncols() != m.dim {
                return bad(format!("constraint {name}: constant has the wrong shape"));
            }
            for t in &m.terms {
                match t {
                    MatTerm::Block {
                        block, congruence, ..
                    } => {
                        if block.0 >= self.blocks.len() {
                            return bad(format!("constraint {name}: unknown block"));
                        }
                        let n = self.block_dim(*block);
                        let ok = match congruence {
                            Some(t) => t.nrows() == m.dim && t.ncols() == n,
                            None => n == m.dim,
                        };
                        if !ok {
                            return bad(format!("constraint {name}: block dimension mismatch"));
                        }
                    }
                    MatTerm::Scalar { var, coef } => {
                        if var.0 >= self.scalars.len()
                            || coef.nrows() != m.dim
                            || coef.ncols() != m.dim
                        {
                            return bad(format!("constraint {name}: bad scalar term"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn block_value(&self, sol: &Solution, b: BlockId) -> HermitianMatrix {
        HermitianMatrix::hermitian_part(&self.block_matrix(&sol.x, b))
    }

    pub fn scalar_value(&self, sol: &Solution, s: ScalarId) -> f64 {
        sol.x[self.scalar_index(s)]
    }

    fn block_matrix(&self, x: &[f64], b: BlockId) -> CMat {
        let BlockVar { dim: n, offset, .. } = self.blocks[b.0];
        let mut m = CMat::zeros(n, n);
        let mut idx = offset;
        for i in 0..n {
            m[(i, i)] = c64(x[idx], 0.0);
            idx += 1;
        }
        for j in 0..n {
            for i in 0..j {
                let z = c64(x[idx], x[idx + 1]);
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
                idx += 2;
            }
        }
        m
    }

    /// Evaluates an affine matrix expression directly in complex arithmetic.
    pub fn eval_matrix(&self, m: &AffineMatrix, x: &[f64]) -> CMat {
        let mut out = m.constant.clone();
        for t in &m.terms {
            match t {
                MatTerm::Block {
                    block,
                    scale,
                    congruence,
                } => {
                    let xb = self.block_matrix(x, *block);
                    let v = match congruence {
                        Some(t) => t * xb * t.adjoint(),
                        None => xb,
                    };
                    out += v * c64(*scale, 0.0);
                }
                MatTerm::Scalar { var, coef } => {
                    out += coef * c64(x[self.scalar_index(*var)], 0.0);
                }
            }
        }
        out
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.squares
            .iter()
            .map(|(w, g)| w * g.eval(x).powi(2))
            .sum::<f64>()
            + self.linear.eval(x)
    }

    /// Largest constraint violation, evaluated without the real embedding.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut v = 0f64;
        for (_, e) in &self.eq {
            v = v.max(e.eval(x).abs());
        }
        for (_, e) in &self.nonneg {
            v = v.max(-e.eval(x));
        }
        for (_, m) in &self.psd {
            let h = HermitianMatrix::hermitian_part(&self.eval_matrix(m, x));
            v = v.max(-h.lambda_min());
        }
        for (_, c) in &self.exp {
            let (a, b, z) = (c.x.eval(x), c.y.eval(x), c.z.eval(x));
            let viol = if b > 0.0 {
                b * (a / b).exp() - z
            } else if a <= 0.0 {
                -z.min(0.0) - b.min(0.0)
            } else {
                f64::INFINITY
            };
            v = v.max(viol);
        }
        v
    }

    /// Named constraints violated by more than `tol`.
    pub fn violated(&self, x: &[f64], tol: f64) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (n, e) in &self.eq {
            let r = e.eval(x).abs();
            if r > tol {
                out.push((n.clone(), r));
            }
        }
        for (n, e) in &self.nonneg {
            let r = -e.eval(x);
            if r > tol {
                out.push((n.clone(), r));
            }
        }
        for (n, m) in &self.psd {
            let r = -HermitianMatrix::hermitian_part(&self.eval_matrix(m, x)).lambda_min();
            if r > tol {
                out.push((n.clone(), r));
            }
        }
        out
    }

    /// Compiles to the real conic form consumed by the backends.
    ///
    /// Each squared residual `g_i(x)` gets an auxiliary variable `u_i = g_i(x)`
    /// appended after the program variables, so `P` is diagonal. A dense
    /// low-rank `P` built from the residuals directly makes the interior-point
    /// KKT system singular in practice.
    pub fn compile(&self) -> Result<RealConic> {
        self.validate()?;
        let n0 = self.n_vars;
        let n = n0 + self.squares.len();
        let mut q = vec![0.0; n];
        let mut p_upper = Vec::new();
        let mut lift_rows = Vec::with_capacity(self.squares.len());
        for (i, (w, g)) in self.squares.iter().enumerate() {
            if *w != 0.0 {
                p_upper.push((n0 + i, n0 + i, 2.0 * w));
            }
            let mut e = g.clone().scaled(-1.0);
            e.terms.push((n0 + i, 1.0));
            lift_rows.push(e);
        }
        for (i, a) in self.linear.compact() {
            q[i] += a;
        }
        let c0 = self.linear.constant;

        let mut a_trip = Vec::new();
        let mut b = Vec::new();
        let mut cones = Vec::new();
        let push_row =
            |a_trip: &mut Vec<(usize, usize, f64)>, b: &mut Vec<f64>, e: &AffineScalar| {
                let row = b.len();
                for (i, c) in e.compact() {
                    a_trip.push((row, i, -c));
                }
                b.push(e.constant);
            };
        if !self.eq.is_empty() || !lift_rows.is_empty() {
            for e in self.eq.iter().map(|(_, e)| e).chain(&lift_rows) {
                push_row(&mut a_trip, &mut b, e);
            }
            cones.push(Cone::Zero(self.eq.len() + lift_rows.len()));
        }
        if !self.nonneg.is_empty() {
            for (_, e) in &self.nonneg {
                push_row(&mut a_trip, &mut b, e);
            }
            cones.push(Cone::Nonneg(self.nonneg.len()));
        }
        for (_, c) in &self.exp {
            for e in [&c.x, &c.y, &c.z] {
                push_row(&mut a_trip, &mut b, e);
            }
            cones.push(Cone::Exp);
        }
        for (_, m) in &self.psd {
            let row0 = b.len();
            let (constant, coefs) = self.matrix_coefficients(m);
            let sv = svec(&embed(&constant));
            b.extend_from_slice(sv.as_slice());
            for (var, c) in coefs {
                let sv = svec(&embed(&c));
                for (r, v) in sv.iter().enumerate() {
                    if *v != 0.0 {
                        a_trip.push((row0 + r, var, -v));
                    }
                }
            }
            cones.push(Cone::Psd(2 * m.dim));
        }
        Ok(RealConic {
            n,
            n_program: n0,
            p: p_upper,
            q,
            c0,
            a: a_trip,
            b,
            cones,
        })
    }

    /// Extends a program point with the auxiliary residual variables of [`Self::compile`].
    pub fn lift_point(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        out.extend(self.squares.iter().map(|(_, g)| g.eval(x)));
        out
    }

    /// Per-variable Hermitian coefficients of an affine matrix expression.
    fn matrix_coefficients(&self, m: &AffineMatrix) -> (CMat, Vec<(usize, CMat)>) {
        let mut coefs: Vec<(usize, CMat)> = Vec::new();
        for t in &m.terms {
            match t {
                MatTerm::Block {
                    block,
                    scale,
                    congruence,
                } => {
                    let nb = self.block_dim(*block);
                    for (idx, p) in self.block_params(*block) {
                        let basis = p.basis(nb);
                        let c = match congruence {
                            Some(t) => t * basis * t.adjoint(),
                            None => basis,
                        };
                        coefs.push((idx, c * c64(*scale, 0.0)));
                    }
                }
                MatTerm::Scalar { var, coef } => {
                    coefs.push((self.scalar_index(*var), coef.clone()))
                }
            }
        }
        coefs.sort_by_key(|c| c.0);
        let mut merged: Vec<(usize, CMat)> = Vec::with_capacity(coefs.len());
        for (i, c) in coefs {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => merged.push((i, c)),
            }
        }
        (m.constant.clone(), merged)
    }
}

#[derive(Clone, Copy, Debug)]
enum Param {
    Diag(usize),
    Re(usize, usize),
    Im(usize, usize),
}

impl Param {
    fn basis(self, n: usize) -> CMat {
        let mut b = CMat::zeros(n, n);
        match self {
            Param::Diag(i) => b[(i, i)] = c64(1.0, 0.0),
            Param::Re(i, j) => {
                b[(i, j)] = c64(1.0, 0.0);
                b[(j, i)] = c64(1.0, 0.0);
            }
            Param::Im(i, j) => {
                b[(i, j)] = c64(0.0, 1.0);
                b[(j, i)] = c64(0.0, -1.0);
            }
        }
        b
    }
}

/// Real symmetric embedding `[[Re, -Im], [Im, Re]]` of a complex matrix.
pub fn embed(m: &CMat) -> DMatrix<f64> {
    crate::linalg::real_embedding(m)
}

/// Scaled upper-triangle vectorization (column-major, off-diagonals times sqrt 2).
pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let s2 = std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            out.push(if i == j { m[(i, j)] } else { s2 * m[(i, j)] });
        }
    }
    DVector::from_vec(out)
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let s2 = std::f64::consts::SQRT_2;
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                m[(i, j)] = v[k] / s2;
                m[(j, i)] = v[k] / s2;
            }
            k += 1;
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    Zero(usize),
    Nonneg(usize),
    Exp,
    /// Side length of the real symmetric matrix.
    Psd(usize),
}

impl Cone {
    pub fn rows(&self) -> usize {
        match *self {
            Cone::Zero(n) | Cone::Nonneg(n) => n,
            Cone::Exp => 3,
            Cone::Psd(n) => n * (n + 1) / 2,
        }
    }
}

/// Real conic form: minimize `1/2 x'Px + q'x + c0` subject to `b - Ax in K`.
///
/// This is also the JSON interchange format: `a` holds `(row, col, value)`
/// triplets and `p` holds the upper triangle of the symmetric objective matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RealConic {
    pub n: usize,
    /// Leading variables that belong to the program; the rest are auxiliary.
    pub n_program: usize,
    pub p: Vec<(usize, usize, f64)>,
    pub q: Vec<f64>,
    pub c0: f64,
    pub a: Vec<(usize, usize, f64)>,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl RealConic {
    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn a_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.m(), self.n);
        for &(r, c, v) in &self.a {
            a[(r, c)] += v;
        }
        a
    }

    pub fn p_dense(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.n, self.n);
        for &(i, j, v) in &self.p {
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
        p
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        0.5 * (xv.transpose() * self.p_dense() * &xv)[(0, 0)]
            + xv.dot(&DVector::from_column_slice(&self.q))
            + self.c0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Inaccurate,
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Interior-point conic solver.
    Clarabel,
    /// Operator-splitting fallback (pure Rust, lower accuracy).
    Admm,
}

impl Backend {
    /// Reads `ISAC_SOLVER`; defaults to the interior-point backend when available.
    pub fn from_env() -> Result<Self> {
        match std::env::var("ISAC_SOLVER") {
            Ok(v) => v.parse(),
            Err(_) => Ok(Self::default()),
        }
    }
}

impl Default for Backend {
    fn default() -> Self {
        if cfg!(feature = "clarabel") {
            Backend::Clarabel
        } else {
            Backend::Admm
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clarabel" => Ok(Backend::Clarabel),
            "admm" => Ok(Backend::Admm),
            other => Err(Error::Config(format!("unknown solver backend {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Relative duality-gap tolerance.
    pub gap: f64,
    /// Primal/dual feasibility tolerance.
    pub feas: f64,
    pub max_iter: u32,
    /// Violation above which an "optimal" answer is downgraded to inaccurate.
    pub check_tol: f64,
    pub backend: Backend,
    pub admm: AdmmSettings,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            gap: 1e-7,
            feas: 1e-8,
            max_iter: 200,
            check_tol: 1e-6,
            backend: Backend::default(),
            admm: AdmmSettings::default(),
        }
    }
}

impl SolveOptions {
    pub fn tightened(&self, factor: f64) -> Self {
        Self {
            gap: self.gap / factor,
            feas: self.feas / factor,
            max_iter: self.max_iter * 2,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: f64,
    pub solution: Solution,
    pub gap: f64,
    pub iterations: u32,
    pub wall_time: f64,
    /// Largest violation found by the independent checker.
    pub max_violation: f64,
    pub backend: Backend,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn summary(&self) -> SolveSummary {
        SolveSummary {
            status: self.status,
            objective: self.objective,
            gap: self.gap,
            iterations: self.iterations,
            wall_time: self.wall_time,
            max_violation: self.max_violation,
            backend: self.backend,
        }
    }
}

/// [`SolveReport`] without the raw variable vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub status: SolveStatus,
    pub objective: f64,
    pub gap: f64,
    pub iterations: u32,
    pub wall_time: f64,
    pub max_violation: f64,
    pub backend: Backend,
}

/// Raw backend output before the independent check.
pub(crate) struct RawResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub gap: f64,
    pub iterations: u32,
    /// Last dual iterate, for certificate checks after a failed solve.
    pub z: Option<Vec<f64>>,
}

/// True when `z` proves `b - Ax in K` has no solution: `z in K*`,
/// `A'z = 0` and `b'z < 0`, all up to a relative tolerance.
pub(crate) fn is_infeasibility_certificate(conic: &RealConic, z: &[f64]) -> bool {
    const REL: f64 = 1e-5;
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if z.len() != conic.m() || !(norm > 0.0) {
        return false;
    }
    let bz: f64 = conic.b.iter().zip(z).map(|(b, z)| b * z).sum::<f64>() / norm;
    if !(bz < 0.0) {
        return false;
    }
    let mut atz = vec![0.0; conic.n];
    for &(r, c, v) in &conic.a {
        atz[c] += v * z[r] / norm;
    }
    if atz.iter().any(|v| v.abs() > REL * bz.abs()) {
        return false;
    }
    let mut row = 0;
    for cone in &conic.cones {
        let k = cone.rows();
        let part = &z[row..row + k];
        let ok = match *cone {
            Cone::Zero(_) => true,
            Cone::Nonneg(_) => part.iter().all(|v| *v >= -REL * bz.abs() * norm),
            Cone::Psd(d) => {
                let min = smat(part, d).symmetric_eigenvalues().min();
                min >= -REL * bz.abs() * norm
            }
            // the dual exponential cone is not checked
            Cone::Exp => false,
        };
        if !ok {
            return false;
        }
        row += k;
    }
    true
}

/// Solves a program and re-checks the answer against the original complex constraints.
pub fn solve(program: &ConicProgram, opts: &SolveOptions) -> Result<SolveReport> {
    let start = Instant::now();
    let conic = program.compile()?;
    let raw = match opts.backend {
        #[cfg(feature = "clarabel")]
        Backend::Clarabel => clarabel_backend::solve(&conic, opts)?,
        #[cfg(not(feature = "clarabel"))]
        Backend::Clarabel => {
            return Err(Error::Config(
                "this build does not include the interior-point backend".into(),
            ))
        }
        Backend::Admm => admm::solve(&conic, opts)?,
    };
    let wall_time = start.elapsed().as_secs_f64();
    let mut x = raw.x;
    x.truncate(program.n_vars());
    let (objective, max_violation) = if x.len() == program.n_vars() {
        (program.objective_value(&x), program.max_violation(&x))
    } else {
        (f64::NAN, f64::INFINITY)
    };
    let mut status = raw.status;
    if matches!(status, SolveStatus::Failed | SolveStatus::Inaccurate)
        && raw
            .z
            .as_deref()
            .is_some_and(|z| is_infeasibility_certificate(&conic, z))
    {
        status = SolveStatus::Infeasible;
    }
    if status == SolveStatus::Optimal
        && (raw.gap > opts.gap.max(1e-12) * 10.0 || max_violation > opts.check_tol)
    {
        status = SolveStatus::Inaccurate;
    }
    Ok(SolveReport {
        status,
        objective,
        solution: Solution { x },
        gap: raw.gap,
        iterations: raw.iterations,
        wall_time,
        max_violation,
        backend: opts.backend,
    })
}

/// Writes the compiled real conic form as JSON for external cross-checks.
pub fn dump_json(program: &ConicProgram, w: impl std::io::Write) -> Result<()> {
    serde_json::to_writer(w, &program.compile()?)?;
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
