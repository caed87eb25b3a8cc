//! Dense symmetric matrix utilities.
//!
//! `SymMatrix` keeps its storage exactly symmetric: every constructor and
//! arithmetic operation re-symmetrizes, so callers never see `a[(i,j)] !=
//! a[(j,i)]`. General (non-symmetric) intermediates use [`Mat`].

use alloc::vec::Vec;
use core::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::Error;

/// General dense matrix.
pub type Mat = DMatrix<f64>;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Tolerance {
    /// Base eigenvalue slack; the effective slack for a matrix `a` is
    /// `psd_eps * (1 + max|a_ij|)`.
    pub psd_eps: f64,
    /// Absolute tolerance for equality identities.
    pub eq_eps: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { psd_eps: 1e-9, eq_eps: 1e-8 }
    }
}

impl Tolerance {
    pub fn new(psd_eps: f64, eq_eps: f64) -> Result<Self, Error> {
        let t = Tolerance { psd_eps, eq_eps };
        t.check()?;
        Ok(t)
    }

    pub fn check(&self) -> Result<(), Error> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if ok(self.psd_eps) && ok(self.eq_eps) {
            Ok(())
        } else {
            Err(Error::InvalidTolerance)
        }
    }

    /// Eigenvalue slack scaled to the magnitude of `a`.
    pub fn psd_slack(&self, a: &SymMatrix) -> f64 {
        self.psd_eps * (1.0 + a.max_abs())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    inner: Mat,
}

impl SymMatrix {
    /// Symmetrizes `a` as `(a + a^T) / 2`. Panics if `a` is not square.
    pub fn from_mat(a: Mat) -> Self {
        assert!(a.is_square(), "SymMatrix requires a square matrix");
        let t = a.transpose();
        SymMatrix { inner: (a + t) * 0.5 }
    }

    pub fn from_mat_ref(a: &Mat) -> Self {
        Self::from_mat(a.clone())
    }

    /// Builds from row-major rows; rejects ragged or non-square input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, Error> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: r.len() });
            }
        }
        Ok(Self::from_mat(Mat::from_fn(n, n, |i, j| rows[i][j])))
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Result<Self, Error> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, found: data.len() });
        }
        Ok(Self::from_mat(Mat::from_row_slice(n, n, data)))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix { inner: Mat::identity(n, n) }
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix { inner: Mat::zeros(n, n) }
    }

    pub fn scalar(x: f64) -> Self {
        SymMatrix { inner: Mat::from_element(1, 1, x) }
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        SymMatrix { inner: Mat::from_fn(n, n, |i, j| if i == j { d[i] } else { 0.0 }) }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn as_mat(&self) -> &Mat {
        &self.inner
    }

    pub fn into_mat(self) -> Mat {
        self.inner
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..n).map(|i| (0..n).map(|j| self.inner[(i, j)]).collect()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.inner.iter().fold(0.0, |m, &x| m.max(libm::fabs(x)))
    }

    pub fn is_finite(&self) -> bool {
        self.inner.iter().all(|x| x.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.inner.iter().all(|&x| x == 0.0)
    }

    pub fn scale(&self, s: f64) -> Self {
        SymMatrix { inner: &self.inner * s }
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &SymMatrix) -> f64 {
        self.inner.dot(&other.inner)
    }

    /// `b^T a b`, kept symmetric.
    pub fn congruence(&self, b: &Mat) -> SymMatrix {
        SymMatrix::from_mat(b.transpose() * &self.inner * b)
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.dim() == 0 {
            return Vec::new();
        }
        let mut ev: Vec<f64> = self.inner.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(f64::INFINITY)
    }

    pub fn eigen(&self) -> SymmetricEigen<f64, Dyn> {
        self.inner.clone().symmetric_eigen()
    }

    pub fn cholesky(&self) -> Option<Cholesky<f64, Dyn>> {
        Cholesky::new(self.inner.clone())
    }
}

/// Serialized as a list of rows.
#[cfg(feature = "serde")]
impl serde::Serialize for SymMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serde::Serialize::serialize(&self.rows(), s)
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for SymMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = <Vec<Vec<f64>> as serde::Deserialize>::deserialize(d)?;
        SymMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

impl<'a> Add<&'a SymMatrix> for &'a SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix { inner: &self.inner + &rhs.inner }
    }
}

impl<'a> Sub<&'a SymMatrix> for &'a SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix { inner: &self.inner - &rhs.inner }
    }
}

impl Neg for &SymMatrix {
    type Output = SymMatrix;
    fn neg(self) -> SymMatrix {
        SymMatrix { inner: -&self.inner }
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        self.scale(rhs)
    }
}

/// Maximum absolute entry of a general matrix.
pub fn max_abs(a: &Mat) -> f64 {
    a.iter().fold(0.0, |m, &x| m.max(libm::fabs(x)))
}

/// `log det a` for a positive definite `a`.
pub fn logdet(a: &SymMatrix, tol: &Tolerance) -> Result<f64, Error> {
    if a.dim() == 0 {
        return Ok(0.0);
    }
    let lmin = a.min_eigenvalue();
    if !(lmin > tol.psd_slack(a)) {
        return Err(Error::NotPositiveDefinite { min_eig: lmin });
    }
    match a.cholesky() {
        Some(c) => Ok(chol_logdet(&c)),
        None => Err(Error::NotPositiveDefinite { min_eig: lmin }),
    }
}

/// `log det` from a Cholesky factor; no eigenvalue threshold. Used by the
/// optimizer on strictly feasible iterates where slacks may be tiny.
pub fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    let l = c.l_dirty();
    let mut s = 0.0;
    for i in 0..l.nrows() {
        s += libm::log(l[(i, i)]);
    }
    2.0 * s
}

/// `log det` if `a` admits a Cholesky factorization.
pub fn try_logdet(a: &SymMatrix) -> Option<f64> {
    a.cholesky().map(|c| chol_logdet(&c))
}

/// `log |det a|` and the sign of `det a` for a general square matrix.
pub fn log_abs_det(a: &Mat) -> (f64, f64) {
    let d = a.clone().lu().determinant();
    if d == 0.0 || !d.is_finite() {
        return (f64::NEG_INFINITY, 0.0);
    }
    (libm::log(libm::fabs(d)), if d > 0.0 { 1.0 } else { -1.0 })
}

/// Inverse of a positive definite matrix.
pub fn inverse(a: &SymMatrix, tol: &Tolerance) -> Result<SymMatrix, Error> {
    let lmin = a.min_eigenvalue();
    if !(lmin > tol.psd_slack(a)) {
        return Err(Error::NotPositiveDefinite { min_eig: lmin });
    }
    try_inverse(a).ok_or(Error::NotPositiveDefinite { min_eig: lmin })
}

/// Cholesky-based inverse without the eigenvalue threshold.
pub fn try_inverse(a: &SymMatrix) -> Option<SymMatrix> {
    a.cholesky().map(|c| SymMatrix::from_mat(c.inverse()))
}

pub fn is_psd(a: &SymMatrix, tol: &Tolerance) -> bool {
    a.min_eigenvalue() >= -tol.psd_slack(a)
}

/// `a ⪯ b` up to the scaled eigenvalue slack.
pub fn is_loewner_leq(a: &SymMatrix, b: &SymMatrix, tol: &Tolerance) -> bool {
    let d = b - a;
    let scale = 1.0 + a.max_abs().max(b.max_abs());
    d.min_eigenvalue() >= -tol.psd_eps * scale
}

/// `a ≺ b` with an eigenvalue margin above the scaled slack.
pub fn is_loewner_lt(a: &SymMatrix, b: &SymMatrix, tol: &Tolerance) -> bool {
    let d = b - a;
    let scale = 1.0 + a.max_abs().max(b.max_abs());
    d.min_eigenvalue() > tol.psd_eps * scale
}

/// Square factor `f` with `f f^T = a`; eigenvalues within the slack below
/// zero are clipped.
pub fn psd_factor(a: &SymMatrix, tol: &Tolerance) -> Result<Mat, Error> {
    let n = a.dim();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let eig = a.eigen();
    let slack = tol.psd_slack(a);
    let mut f = eig.eigenvectors.clone();
    for j in 0..n {
        let lam = eig.eigenvalues[j];
        if lam < -slack {
            return Err(Error::NotPsd { min_eig: lam });
        }
        let s = libm::sqrt(lam.max(0.0));
        for i in 0..n {
            f[(i, j)] *= s;
        }
    }
    Ok(f)
}

/// Largest `α <= cap` with `x + α dx ⪰ 0`, for `x ≻ 0`.
pub fn max_step(x: &SymMatrix, dx: &SymMatrix, cap: f64) -> Option<f64> {
    let c = x.cholesky()?;
    let linv = c.l().try_inverse()?;
    let w = SymMatrix::from_mat(&linv * dx.as_mat() * linv.transpose());
    let lmin = w.min_eigenvalue();
    Some(if lmin >= 0.0 { cap } else { cap.min(-1.0 / lmin) })
}

/// Symmetrized `(a + a^T) / 2` of a general square matrix.
pub fn sym_part(a: &Mat) -> SymMatrix {
    SymMatrix::from_mat_ref(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    #[test]
    fn logdet_examples() {
        let a = SymMatrix::diagonal(&[2.0, 3.0]);
        assert!((logdet(&a, &tol()).unwrap() - libm::log(6.0)).abs() < 1e-14);
        let b = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert!((logdet(&b, &tol()).unwrap() - libm::log(3.0)).abs() < 1e-14);
        let c = SymMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(logdet(&c, &tol()), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn inverse_example() {
        let b = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let inv = inverse(&b, &tol()).unwrap();
        let want = [[2.0 / 3.0, -1.0 / 3.0], [-1.0 / 3.0, 2.0 / 3.0]];
        for (i, row) in want.iter().enumerate() {
            for (j, w) in row.iter().enumerate() {
                assert!((inv.get(i, j) - w).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn loewner_examples() {
        let t = tol();
        assert!(is_loewner_leq(&SymMatrix::identity(2), &SymMatrix::diagonal(&[1.0, 2.0]), &t));
        assert!(!is_loewner_leq(&SymMatrix::diagonal(&[1.0, 2.0]), &SymMatrix::identity(2), &t));
        let a = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(!is_psd(&a, &t));
        assert!(is_psd(&SymMatrix::zeros(3), &t));
    }

    #[test]
    fn psd_factor_examples() {
        let t = tol();
        let f = psd_factor(&SymMatrix::identity(3), &t).unwrap();
        assert!(max_abs(&(&f * f.transpose() - Mat::identity(3, 3))) < 1e-14);
        let z = psd_factor(&SymMatrix::zeros(2), &t).unwrap();
        assert_eq!(max_abs(&z), 0.0);
        let bad = SymMatrix::diagonal(&[1.0, -1e-3]);
        assert!(matches!(psd_factor(&bad, &t), Err(Error::NotPsd { .. })));
        let near = SymMatrix::diagonal(&[1.0, -1e-12]);
        let f = psd_factor(&near, &t).unwrap();
        assert!((&f * f.transpose())[(1, 1)] == 0.0);
    }

    #[test]
    fn symmetry_is_exact() {
        let a = SymMatrix::from_mat(Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.1, 2.0]));
        assert_eq!(a.get(0, 1), a.get(1, 0));
        let b = a.congruence(&Mat::from_row_slice(2, 2, &[0.7, -1.1, 0.2, 0.9]));
        assert_eq!(b.get(0, 1), b.get(1, 0));
    }

    fn spd(n: usize) -> impl Strategy<Value = SymMatrix> {
        proptest::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
            let a = Mat::from_row_slice(n, n, &v);
            SymMatrix::from_mat(&a * a.transpose() + Mat::identity(n, n) * 0.1)
        })
    }

    proptest! {
        #[test]
        fn logdet_is_additive(a in spd(3), b in spd(3)) {
            let t = tol();
            let ab = a.as_mat() * b.as_mat();
            let (lab, sign) = log_abs_det(&ab);
            prop_assert_eq!(sign, 1.0);
            let sum = logdet(&a, &t).unwrap() + logdet(&b, &t).unwrap();
            prop_assert!((lab - sum).abs() < 1e-9 * (1.0 + sum.abs()));
        }

        #[test]
        fn inverse_round_trips(a in spd(3)) {
            let inv = inverse(&a, &tol()).unwrap();
            let e = a.as_mat() * inv.as_mat() - Mat::identity(3, 3);
            prop_assert!(max_abs(&e) < 1e-8 * (1.0 + a.max_abs() * inv.max_abs()));
        }

        #[test]
        fn factor_reproduces(a in spd(3)) {
            let f = psd_factor(&a, &tol()).unwrap();
            let e = &f * f.transpose() - a.as_mat();
            prop_assert!(max_abs(&e) < 1e-10 * (1.0 + a.max_abs()));
        }

        #[test]
        fn loewner_is_congruence_invariant(a in spd(2), b in spd(2), t in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let t_mat = Mat::from_row_slice(2, 2, &t);
            prop_assume!(t_mat.determinant().abs() > 0.1);
            let sum = &a + &b;
            let ta = a.congruence(&t_mat.transpose());
            let tsum = sum.congruence(&t_mat.transpose());
            prop_assert!(is_loewner_leq(&ta, &tsum, &tol()));
        }
    }
}
