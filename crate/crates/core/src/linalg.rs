//! Complex Hermitian linear algebra used throughout the crate.
//!
//! Everything here is dense and sized for small arrays (tens of antennas).
//! Matrices are plain [`nalgebra`] complex matrices; [`HermitianMatrix`]
//! is a thin newtype that guarantees the Hermitian structure so that
//! quadratic forms and eigenvalues can be taken as real numbers.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Absolute symmetry tolerance, scaled by the largest entry when that exceeds one.
const HERMITIAN_TOL: f64 = 1e-12;
/// Eigenvalues in `[-PSD_CLIP_TOL, 0)` are treated as round-off and clipped.
pub const PSD_CLIP_TOL: f64 = 1e-9;
/// Eigenvalues below `-NOT_PSD_TOL` are rejected by the factorizations.
pub const NOT_PSD_TOL: f64 = 1e-6;
/// Pivoted Cholesky stops once every residual diagonal is below this fraction of the trace.
pub const RANK_TOL: f64 = 1e-10;

pub fn c64(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// Dense Hermitian matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(CMat);

impl HermitianMatrix {
    /// Validates the Hermitian structure and stores the exactly-symmetrized matrix.
    pub fn new(m: CMat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Invariant(format!(
                "Hermitian matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.iter().fold(1.0_f64, |acc, z| acc.max(z.norm()));
        let n = m.nrows();
        for i in 0..n {
            for j in i..n {
                let d = (m[(i, j)] - m[(j, i)].conj()).norm();
                if d > HERMITIAN_TOL * scale {
                    return Err(Error::Invariant(format!(
                        "matrix is not Hermitian at ({i},{j}): asymmetry {d:.3e}"
                    )));
                }
            }
        }
        Ok(Self::hermitian_part(&m))
    }

    /// `(m + m^H) / 2`, for matrices that are Hermitian up to round-off.
    pub fn hermitian_part(m: &CMat) -> Self {
        assert!(m.is_square(), "hermitian_part needs a square matrix");
        let h = (m + m.adjoint()) * c64(0.5, 0.0);
        HermitianMatrix(h)
    }

    pub fn zeros(n: usize) -> Self {
        HermitianMatrix(CMat::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        HermitianMatrix(CMat::identity(n, n))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        HermitianMatrix(CMat::identity(n, n) * c64(s, 0.0))
    }

    /// `v v^H`.
    pub fn outer(v: &CVec) -> Self {
        Self::hermitian_part(&(v * v.adjoint()))
    }

    /// `W W^H` for any (possibly rectangular) factor.
    pub fn gram(w: &CMat) -> Self {
        Self::hermitian_part(&(w * w.adjoint()))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let v = DVector::from_iterator(d.len(), d.iter().map(|&x| c64(x, 0.0)));
        HermitianMatrix(CMat::from_diagonal(&v))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_inner(self) -> CMat {
        self.0
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].re).sum()
    }

    /// Real quadratic form `v^H A v`.
    pub fn quad_form(&self, v: &CVec) -> f64 {
        quad_form(&self.0, v)
    }

    /// `u^H A v`.
    pub fn bilinear(&self, u: &CVec, v: &CVec) -> C64 {
        (u.adjoint() * &self.0 * v)[(0, 0)]
    }

    pub fn scale(&self, s: f64) -> Self {
        HermitianMatrix(&self.0 * c64(s, 0.0))
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    /// Eigen-decomposition with eigenvalues sorted ascending.
    pub fn eigh(&self) -> (Vec<f64>, CMat) {
        let n = self.dim();
        if n == 0 {
            return (Vec::new(), CMat::zeros(0, 0));
        }
        let eig = SymmetricEigen::new(self.0.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = CMat::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        (values, vectors)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigh().0
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(0.0)
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.lambda_min() >= -tol
    }

    /// Projects onto the PSD cone by zeroing negative eigenvalues.
    pub fn clip_psd(&self) -> Self {
        let (vals, vecs) = self.eigh();
        if vals.first().is_none_or(|&v| v >= 0.0) {
            return self.clone();
        }
        let d = DVector::from_iterator(vals.len(), vals.iter().map(|&v| c64(v.max(0.0), 0.0)));
        let m = &vecs * CMat::from_diagonal(&d) * vecs.adjoint();
        Self::hermitian_part(&m)
    }

    /// Ratio `lambda_2 / lambda_1` of the two largest eigenvalues (0 for the zero matrix).
    pub fn second_to_first_eigen_ratio(&self) -> f64 {
        let vals = self.eigenvalues();
        let n = vals.len();
        if n < 2 || vals[n - 1] <= 0.0 {
            return 0.0;
        }
        vals[n - 2].max(0.0) / vals[n - 1]
    }
}

impl Add for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn add(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn sub(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn mul(self, rhs: f64) -> HermitianMatrix {
        self.scale(rhs)
    }
}

impl Serialize for HermitianMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ComplexMatrixRepr::from(&self.0).serialize(s)
    }
}

impl<'de> Deserialize<'de> for HermitianMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = ComplexMatrixRepr::deserialize(d)?;
        let m = repr.to_matrix().map_err(serde::de::Error::custom)?;
        HermitianMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

/// JSON form of a complex matrix: row-major `[re, im]` pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComplexMatrixRepr {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl From<&CMat> for ComplexMatrixRepr {
    fn from(m: &CMat) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push([m[(i, j)].re, m[(i, j)].im]);
            }
        }
        ComplexMatrixRepr {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl ComplexMatrixRepr {
    pub fn to_matrix(&self) -> Result<CMat> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Invariant(format!(
                "matrix data has {} entries, expected {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(CMat::from_fn(self.rows, self.cols, |i, j| {
            let [re, im] = self.data[i * self.cols + j];
            c64(re, im)
        }))
    }
}

/// Serde adapter for plain complex matrices.
pub mod cmat_serde {
    use super::*;

    pub fn serialize<S: serde::Serializer>(m: &CMat, s: S) -> std::result::Result<S::Ok, S::Error> {
        ComplexMatrixRepr::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<CMat, D::Error> {
        ComplexMatrixRepr::deserialize(d)?
            .to_matrix()
            .map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for lists of complex vectors (`[re, im]` pairs per entry).
pub mod cvecs_serde {
    use super::*;

    pub fn serialize<S: serde::Serializer>(
        v: &[CVec],
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let raw: Vec<Vec<[f64; 2]>> = v
            .iter()
            .map(|x| x.iter().map(|z| [z.re, z.im]).collect())
            .collect();
        raw.serialize(s)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<CVec>, D::Error> {
        let raw = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
        Ok(raw
            .into_iter()
            .map(|x| CVec::from_iterator(x.len(), x.into_iter().map(|[re, im]| c64(re, im))))
            .collect())
    }
}

/// ULA response toward a single direction.
#[derive(Clone, Debug, PartialEq)]
pub struct SteeringVector {
    pub angle: f64,
    pub spacing: f64,
    pub elements: CVec,
}

/// Steering vector of an `m`-element ULA with element spacing in wavelengths.
///
/// Element `n` carries phase `2*pi*spacing*n*sin(angle)`, so the first
/// element is the phase reference.
pub fn steering(angle: f64, m: usize, spacing: f64) -> Result<SteeringVector> {
    if m == 0 {
        return Err(Error::Domain("array needs at least one element".into()));
    }
    if !angle.is_finite() || angle.abs() > PI / 2.0 + 1e-12 {
        return Err(Error::Domain(format!(
            "steering angle {angle} rad outside [-pi/2, pi/2]"
        )));
    }
    Ok(SteeringVector {
        angle,
        spacing,
        elements: steering_elements(angle, m, spacing),
    })
}

/// Unchecked steering vector (angle assumed valid).
pub fn steering_elements(angle: f64, m: usize, spacing: f64) -> CVec {
    let k = 2.0 * PI * spacing * angle.sin();
    CVec::from_iterator(m, (0..m).map(|n| C64::from_polar(1.0, k * n as f64)))
}

/// Real quadratic form `v^H A v` (imaginary part discarded).
pub fn quad_form(a: &CMat, v: &CVec) -> f64 {
    let av = a * v;
    v.iter()
        .zip(av.iter())
        .map(|(x, y)| (x.conj() * y).re)
        .sum()
}

/// Largest eigenvalue of a Hermitian matrix given as a raw complex matrix.
pub fn lambda_max(a: &CMat) -> Result<f64> {
    Ok(HermitianMatrix::new(a.clone())?.lambda_max())
}

/// Householder QR `A = Q R` with `Q` square unitary and `R` upper trapezoidal.
///
/// The leading diagonal of `R` is made real and nonnegative; columns that are
/// already triangular with a nonnegative real diagonal are left untouched, so
/// e.g. an identity input yields `Q = I`.
pub fn householder_qr(a: &CMat) -> (CMat, CMat) {
    let (m, n) = a.shape();
    let mut r = a.clone();
    let mut q = CMat::identity(m, m);
    for j in 0..n.min(m) {
        let tail_norm2: f64 = (j + 1..m).map(|i| r[(i, j)].norm_sqr()).sum();
        let head = r[(j, j)];
        if tail_norm2 == 0.0 {
            if head.norm() > 0.0 && (head.im != 0.0 || head.re < 0.0) {
                let phase = head / head.norm();
                for c in j..n {
                    r[(j, c)] *= phase.conj();
                }
                for i in 0..m {
                    q[(i, j)] *= phase;
                }
            }
            continue;
        }
        let norm = (head.norm_sqr() + tail_norm2).sqrt();
        let phase = if head.norm() > 0.0 {
            head / head.norm()
        } else {
            c64(1.0, 0.0)
        };
        let alpha = -phase * norm;
        let mut v = CVec::zeros(m - j);
        v[0] = head - alpha;
        for i in j + 1..m {
            v[i - j] = r[(i, j)];
        }
        let vnorm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;
        // R <- H R on rows j.., H = I - beta v v^H
        for c in j..n {
            let mut s = c64(0.0, 0.0);
            for i in j..m {
                s += v[i - j].conj() * r[(i, c)];
            }
            s *= beta;
            for i in j..m {
                let vi = v[i - j];
                r[(i, c)] -= vi * s;
            }
        }
        // Q <- Q H on columns j..
        for row in 0..m {
            let mut s = c64(0.0, 0.0);
            for i in j..m {
                s += q[(row, i)] * v[i - j];
            }
            s *= beta;
            for i in j..m {
                let vi = v[i - j];
                q[(row, i)] -= s * vi.conj();
            }
        }
        for i in j + 1..m {
            r[(i, j)] = c64(0.0, 0.0);
        }
        // make R[j,j] real nonnegative
        let d = r[(j, j)];
        if d.norm() > 0.0 {
            let ph = d / d.norm();
            for c in j..n {
                r[(j, c)] *= ph.conj();
            }
            for i in 0..m {
                q[(i, j)] *= ph;
            }
            r[(j, j)] = c64(r[(j, j)].re, 0.0);
        }
    }
    (q, r)
}

/// LQ factorization `A = L Q` with `L` lower trapezoidal (real nonnegative diagonal).
pub fn lq(a: &CMat) -> (CMat, CMat) {
    let (q, r) = householder_qr(&a.adjoint());
    (r.adjoint(), q.adjoint())
}

/// Result of [`qr_wide`]: `B = [b_l, 0] * u2`.
#[derive(Clone, Debug)]
pub struct WideQr {
    /// K x K lower-triangular block with real nonnegative diagonal.
    pub b_l: CMat,
    /// M x M unitary.
    pub u2: CMat,
}

/// Wide-matrix QR (an LQ factorization) of a K x M matrix with `K < M`.
pub fn qr_wide(b: &CMat) -> Result<WideQr> {
    let (k, m) = b.shape();
    if k >= m {
        return Err(Error::UnsupportedShape(format!(
            "wide QR needs K < M, got {k}x{m}"
        )));
    }
    let (q, r) = householder_qr(&b.adjoint());
    let b_l = r.view((0, 0), (k, k)).adjoint();
    Ok(WideQr {
        b_l,
        u2: q.adjoint(),
    })
}

/// Low-rank factor `F` (n x r) with `F F^H = A`, via greedy diagonal pivoting.
///
/// Stops once every residual diagonal entry falls below `RANK_TOL * trace(A)`.
pub fn pivoted_cholesky_factor(a: &HermitianMatrix) -> CMat {
    let n = a.dim();
    let tol = RANK_TOL * a.trace().max(0.0);
    let mut residual = a.as_matrix().clone();
    let mut cols: Vec<CVec> = Vec::new();
    for _ in 0..n {
        let (p, d) =
            (0..n)
                .map(|i| (i, residual[(i, i)].re))
                .fold((0, f64::NEG_INFINITY), |best, cur| {
                    if cur.1 > best.1 {
                        cur
                    } else {
                        best
                    }
                });
        if d <= tol || d <= 0.0 {
            break;
        }
        let f = residual.column(p) / c64(d.sqrt(), 0.0);
        residual -= &f * f.adjoint();
        cols.push(f);
    }
    let mut out = CMat::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

/// Lower-triangular `D` with `D D^H = A` for a PSD (possibly singular) `A`.
///
/// Small negative eigenvalues are clipped first. The factor comes from a
/// diagonally pivoted Cholesky pass followed by an LQ re-triangularization, so
/// `D` is lower triangular with a real nonnegative diagonal in the original
/// ordering. For a rank-one `v v^H` with `v[0] != 0` the result has a single
/// nonzero column proportional to `v`.
pub fn cholesky_lower(a: &HermitianMatrix) -> Result<CMat> {
    let n = a.dim();
    let (vals, _) = a.eigh();
    let min = vals.first().copied().unwrap_or(0.0);
    if min < -NOT_PSD_TOL {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    let a = if min < 0.0 { a.clip_psd() } else { a.clone() };
    let f = pivoted_cholesky_factor(&a);
    if f.ncols() == 0 {
        return Ok(CMat::zeros(n, n));
    }
    let mut padded = CMat::zeros(n, n);
    padded.view_mut((0, 0), (n, f.ncols())).copy_from(&f);
    let (l, _) = lq(&padded);
    Ok(l)
}

/// Real symmetric embedding `[[Re A, -Im A], [Im A, Re A]]`.
pub fn real_embedding(a: &CMat) -> DMatrix<f64> {
    let (r, c) = a.shape();
    DMatrix::from_fn(2 * r, 2 * c, |i, j| {
        let z = a[(i % r, j % c)];
        match (i < r, j < c) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// `[Re v; Im v]`.
pub fn real_embedding_vec(v: &CVec) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(2 * n, |i, _| if i < n { v[i].re } else { v[i - n].im })
}

/// Inverse of [`real_embedding`] (reads the left block column).
pub fn from_real_embedding(e: &DMatrix<f64>) -> CMat {
    let n = e.nrows() / 2;
    CMat::from_fn(n, e.ncols() / 2, |i, j| c64(e[(i, j)], e[(i + n, j)]))
}

/// Orthonormal basis (M x (M-K)) of the null space of a full-row-rank K x M matrix.
pub fn null_space_basis(h: &CMat) -> Result<CMat> {
    let (k, m) = h.shape();
    let wide = qr_wide(h)?;
    // rows K.. of U2 are orthogonal to the row space of H
    let basis = wide.u2.view((k, 0), (m - k, m)).adjoint();
    Ok(basis)
}

/// 2-norm condition number via singular values.
pub fn condition_number(h: &CMat) -> f64 {
    let sv = h.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
