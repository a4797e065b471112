//! Dense Hermitian linear algebra and the norms of a scale of Hilbert spaces
//! `H⁺ ⊂ H ⊂ H⁻` at finite dimension.
//!
//! A scale is fixed by a positive reference operator `A₀ ≥ 1`; then
//! `‖φ‖± = ‖A₀^{±½} φ‖`, and an operator `V: H⁺ → H⁻` has norm
//! `‖V‖₊,₋ = ‖A₀^{-½} V A₀^{-½}‖`. The dual map `H⁻ → H⁺` uses the opposite
//! weights.

use nalgebra::linalg::{SymmetricEigen, SVD};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Relative asymmetry tolerated when accepting a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Eigenvalues below this are clamped before a negative power is taken.
pub const CLAMP_FLOOR: f64 = 1e-14;
/// Dimension from which spectral norms switch from SVD to power iteration.
pub const SVD_CUTOFF: usize = 128;

/// A square complex matrix equal to its conjugate transpose.
///
/// Construction symmetrizes `(M + M†)/2` after checking the asymmetry, so the
/// stored matrix is Hermitian to rounding.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix {
    inner: CMatrix,
}

/// Ascending eigendecomposition `A = V diag(λ) V†`.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl Eigen {
    /// Returns `V diag(f(λ)) V†`.
    pub fn map(&self, f: impl Fn(f64) -> Complex64) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &lambda) in self.values.iter().enumerate() {
            let w = f(lambda);
            for i in 0..n {
                scaled[(i, j)] *= w;
            }
        }
        matmul(&scaled, &self.vectors.adjoint())
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `exp(-i τ A)`.
    pub fn unitary_exp(&self, tau: f64) -> CMatrix {
        self.map(|l| Complex64::from_polar(1.0, -l * tau))
    }
}

/// Dense complex product, single-threaded so results do not depend on the pool.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.ncols(), b.nrows(), "matmul shape");
    let (m, k, n) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = CMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    let lhs = faer::MatRef::from_column_major_slice(a.as_slice(), m, k);
    let rhs = faer::MatRef::from_column_major_slice(b.as_slice(), k, n);
    let dst = faer::MatMut::from_column_major_slice_mut(out.as_mut_slice(), m, n);
    faer::linalg::matmul::matmul(dst, faer::Accum::Replace, lhs, rhs, Complex64::new(1.0, 0.0), faer::Par::Seq);
    out
}

fn one_norm(m: &CMatrix) -> f64 {
    m.column_iter().map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

const TAYLOR_DEGREE: usize = 18;
const TAYLOR_THETA: f64 = 1.0;

/// `exp(−iK)` for Hermitian `K` by scaling and squaring a degree-18 Taylor
/// polynomial, evaluated in Paterson–Stockmeyer form.
pub fn expm_minus_i(k: &CMatrix) -> CMatrix {
    let n = k.nrows();
    let norm = one_norm(k);
    let squarings = if norm > TAYLOR_THETA { (norm / TAYLOR_THETA).log2().ceil() as u32 } else { 0 };
    let x = k * Complex64::new(0.0, -(0.5f64).powi(squarings as i32));
    let mut coeffs = [0.0; TAYLOR_DEGREE + 1];
    coeffs[0] = 1.0;
    for j in 1..=TAYLOR_DEGREE {
        coeffs[j] = coeffs[j - 1] / j as f64;
    }
    let ident = CMatrix::identity(n, n);
    let x2 = matmul(&x, &x);
    let x3 = matmul(&x2, &x);
    let x4 = matmul(&x2, &x2);
    let powers = [ident.as_slice(), x.as_slice(), x2.as_slice(), x3.as_slice()];
    let block = |start: usize| -> CMatrix {
        let mut b = CMatrix::zeros(n, n);
        for (j, p) in powers.iter().enumerate() {
            if let Some(&c) = coeffs.get(start + j) {
                for (o, v) in b.as_mut_slice().iter_mut().zip(p.iter()) {
                    *o += v * c;
                }
            }
        }
        b
    };
    let blocks = TAYLOR_DEGREE / 4;
    let mut acc = block(4 * blocks);
    for b in (0..blocks).rev() {
        let mut next = block(4 * b);
        let dst = faer::MatMut::from_column_major_slice_mut(next.as_mut_slice(), n, n);
        let lhs = faer::MatRef::from_column_major_slice(acc.as_slice(), n, n);
        let rhs = faer::MatRef::from_column_major_slice(x4.as_slice(), n, n);
        faer::linalg::matmul::matmul(dst, faer::Accum::Add, lhs, rhs, Complex64::new(1.0, 0.0), faer::Par::Seq);
        acc = next;
    }
    for _ in 0..squarings {
        acc = matmul(&acc, &acc);
    }
    acc
}

fn is_diagonal(m: &CMatrix) -> bool {
    let n = m.nrows();
    (0..n).all(|j| (0..n).all(|i| i == j || m[(i, j)] == Complex64::new(0.0, 0.0)))
}

impl HermitianMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let n = m.nrows();
        let mut asymmetry = 0.0f64;
        for j in 0..n {
            for i in 0..=j {
                asymmetry = asymmetry.max((m[(i, j)] - m[(j, i)].conj()).norm());
            }
        }
        let tolerance = HERMITIAN_TOL * scale;
        if asymmetry > tolerance {
            return Err(Error::NotHermitian { asymmetry, tolerance });
        }
        Ok(Self::symmetrized(m))
    }

    /// Takes `(M + M†)/2` without checking; for matrices Hermitian by construction.
    pub fn symmetrized(m: CMatrix) -> Self {
        let adj = m.adjoint();
        Self { inner: (m + adj) * Complex64::new(0.5, 0.0) }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let inner = CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(diag[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        Self { inner }
    }

    /// Real symmetric matrix from a closure over the upper triangle.
    pub fn from_real_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut inner = CMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = f(i, j);
                inner[(i, j)] = Complex64::new(v, 0.0);
                inner[(j, i)] = Complex64::new(v, 0.0);
            }
        }
        Self { inner }
    }

    pub fn identity(n: usize) -> Self {
        Self { inner: CMatrix::identity(n, n) }
    }

    pub fn zeros(n: usize) -> Self {
        Self { inner: CMatrix::zeros(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.inner
    }

    pub fn into_matrix(self) -> CMatrix {
        self.inner
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { inner: &self.inner * Complex64::new(a, 0.0) }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { inner: &self.inner + &other.inner }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { inner: &self.inner - &other.inner }
    }

    /// `self + a·other`.
    pub fn add_scaled(&self, a: f64, other: &Self) -> Self {
        Self { inner: &self.inner + &other.inner * Complex64::new(a, 0.0) }
    }

    pub fn shifted(&self, a: f64) -> Self {
        let mut inner = self.inner.clone();
        for i in 0..inner.nrows() {
            inner[(i, i)] += Complex64::new(a, 0.0);
        }
        Self { inner }
    }

    /// Ascending eigendecomposition. Exactly diagonal matrices keep the
    /// standard basis, with ties ordered by index.
    pub fn eigen(&self) -> Eigen {
        let n = self.dim();
        let (values, vectors) = if is_diagonal(&self.inner) {
            let d: Vec<f64> = (0..n).map(|i| self.inner[(i, i)].re).collect();
            (d, CMatrix::identity(n, n))
        } else {
            let view = faer::MatRef::from_column_major_slice(self.inner.as_slice(), n, n);
            match view.self_adjoint_eigen(faer::Side::Lower) {
                Ok(eig) => {
                    let values = eig.S().column_vector().iter().map(|z| z.re).collect();
                    let u = eig.U();
                    (values, CMatrix::from_fn(n, n, |i, j| u[(i, j)]))
                }
                Err(_) => {
                    let eig = SymmetricEigen::new(self.inner.clone());
                    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
                }
            }
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let sorted_values = order.iter().map(|&k| values[k]).collect();
        let sorted_vectors = CMatrix::from_fn(n, n, |i, j| vectors[(i, order[j])]);
        Eigen { values: sorted_values, vectors: sorted_vectors }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().min()
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        let e = self.eigen();
        e.min().abs().max(e.max().abs())
    }
}

/// `A^exponent` through the eigendecomposition of `A`.
///
/// Integer exponents accept any Hermitian `A`. Fractional exponents need `A`
/// positive semidefinite (eigenvalues down to `-1e-12·‖A‖` are treated as
/// zero), negative exponents need it positive definite; eigenvalues in
/// `(0, 1e-14)` are clamped with a warning.
pub fn hermitian_power(a: &HermitianMatrix, exponent: f64) -> Result<HermitianMatrix> {
    if !exponent.is_finite() {
        return Err(Error::InvalidArgument(format!("exponent {exponent} is not finite")));
    }
    if exponent == 1.0 {
        return Ok(a.clone());
    }
    let eig = a.eigen();
    let lmin = eig.min();
    let scale = eig.min().abs().max(eig.max().abs()).max(1.0);
    let integral = exponent.fract() == 0.0;
    let f: Box<dyn Fn(f64) -> f64> = if exponent < 0.0 {
        if lmin <= 0.0 {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: lmin });
        }
        if lmin < CLAMP_FLOOR {
            log::warn!("clamping eigenvalue {lmin:e} to {CLAMP_FLOOR:e} before power {exponent}");
        }
        Box::new(move |l: f64| l.max(CLAMP_FLOOR).powf(exponent))
    } else if integral {
        let k = exponent as i32;
        Box::new(move |l: f64| l.powi(k))
    } else {
        if lmin < -1e-12 * scale {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: lmin });
        }
        Box::new(move |l: f64| l.max(0.0).powf(exponent))
    };
    Ok(HermitianMatrix::symmetrized(eig.map(|l| Complex64::new(f(l), 0.0))))
}

/// Which side of the scale a weighted norm measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Plus,
    Minus,
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `‖frame_op^{±½} φ‖` for a positive definite `frame_op`.
pub fn weighted_norm(phi: &CVector, frame_op: &HermitianMatrix, side: Side) -> Result<f64> {
    check_dim(frame_op.dim(), phi.len())?;
    let eig = frame_op.eigen();
    if eig.min() <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: eig.min() });
    }
    Ok(weighted_norm_with(phi, &eig, side))
}

/// Same as [`weighted_norm`] with a precomputed eigendecomposition.
pub fn weighted_norm_with(phi: &CVector, eig: &Eigen, side: Side) -> f64 {
    let coeffs = eig.vectors.adjoint() * phi;
    let sign = match side {
        Side::Plus => 1.0,
        Side::Minus => -1.0,
    };
    coeffs
        .iter()
        .zip(&eig.values)
        .map(|(c, &l)| c.norm_sqr() * l.powf(sign))
        .sum::<f64>()
        .sqrt()
}

/// Largest singular value. Full SVD below [`SVD_CUTOFF`], power iteration on
/// `V†V` (relative residual 1e-12) above.
pub fn spectral_norm(v: &CMatrix) -> f64 {
    if v.nrows() == 0 || v.ncols() == 0 {
        return 0.0;
    }
    if v.nrows().max(v.ncols()) < SVD_CUTOFF {
        let svd = SVD::new(v.clone(), false, false);
        return svd.singular_values.iter().copied().fold(0.0, f64::max);
    }
    power_iteration_norm(v)
}

fn power_iteration_norm(v: &CMatrix) -> f64 {
    let n = v.ncols();
    let gram = v.adjoint() * v;
    let mut x = CVector::from_fn(n, |i, _| Complex64::new(1.0 + 1e-3 * i as f64, 0.0));
    x /= Complex64::new(x.norm(), 0.0);
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let y = &gram * &x;
        let next = x.dotc(&y).re;
        let residual = (&y - &x * Complex64::new(next, 0.0)).norm();
        let ny = y.norm();
        if ny == 0.0 {
            return 0.0;
        }
        x = y / Complex64::new(ny, 0.0);
        let converged = residual <= 1e-12 * next.abs().max(f64::MIN_POSITIVE)
            || (next - lambda).abs() <= 1e-15 * next.abs();
        lambda = next;
        if converged {
            break;
        }
    }
    lambda.max(0.0).sqrt()
}

/// Reference operator `A₀ = H₀ + (m+1)·I` of a scale, with cached `±½` powers.
#[derive(Clone, Debug)]
pub struct ScaleFrame {
    a0: HermitianMatrix,
    a0_sqrt: HermitianMatrix,
    a0_inv_sqrt: HermitianMatrix,
    a0_inv: HermitianMatrix,
    eigen: Eigen,
    m: f64,
}

impl ScaleFrame {
    /// Builds the frame of `h0` with lower bound `m`.
    pub fn new(h0: &HermitianMatrix, m: f64) -> Result<Self> {
        if !(m >= 0.0) || !m.is_finite() {
            return Err(Error::InvalidArgument(format!("lower bound m = {m} must be finite and >= 0")));
        }
        let mut frame = Self::from_reference(h0.shifted(m + 1.0))?;
        frame.m = m;
        Ok(frame)
    }

    /// Builds a frame directly from a reference operator with spectrum in `[1, ∞)`.
    pub fn from_reference(a0: HermitianMatrix) -> Result<Self> {
        let eigen = a0.eigen();
        if eigen.min() < 1.0 - 1e-10 {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: eigen.min() });
        }
        let real = |f: fn(f64) -> f64| HermitianMatrix::symmetrized(eigen.map(|l| Complex64::new(f(l), 0.0)));
        let a0_sqrt = real(f64::sqrt);
        let a0_inv_sqrt = real(|l| 1.0 / l.sqrt());
        let a0_inv = real(|l| 1.0 / l);
        Ok(Self { a0, a0_sqrt, a0_inv_sqrt, a0_inv, eigen, m: 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.a0.dim()
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn a0(&self) -> &HermitianMatrix {
        &self.a0
    }

    pub fn a0_sqrt(&self) -> &HermitianMatrix {
        &self.a0_sqrt
    }

    pub fn a0_inv_sqrt(&self) -> &HermitianMatrix {
        &self.a0_inv_sqrt
    }

    pub fn a0_inv(&self) -> &HermitianMatrix {
        &self.a0_inv
    }

    pub fn eigen(&self) -> &Eigen {
        &self.eigen
    }

    /// `‖φ‖₊`.
    pub fn norm_plus(&self, phi: &CVector) -> f64 {
        weighted_norm_with(phi, &self.eigen, Side::Plus)
    }

    /// `‖φ‖₋`.
    pub fn norm_minus(&self, phi: &CVector) -> f64 {
        weighted_norm_with(phi, &self.eigen, Side::Minus)
    }

    /// `⟨ψ, φ⟩₊ = ⟨A₀^{½}ψ, A₀^{½}φ⟩`.
    pub fn inner_plus(&self, psi: &CVector, phi: &CVector) -> Complex64 {
        psi.dotc(&(self.a0.matrix() * phi))
    }

    /// `⟨ψ, φ⟩₋ = ⟨A₀^{-½}ψ, A₀^{-½}φ⟩`.
    pub fn inner_minus(&self, psi: &CVector, phi: &CVector) -> Complex64 {
        psi.dotc(&(self.a0_inv.matrix() * phi))
    }

    /// `A₀^{-½} V A₀^{-½}`.
    pub fn to_plus_minus(&self, v: &CMatrix) -> CMatrix {
        self.a0_inv_sqrt.matrix() * v * self.a0_inv_sqrt.matrix()
    }
}

/// `‖V‖₊,₋`, the norm of `V` read as a map `H⁺ → H⁻`.
pub fn norm_plus_minus(v: &CMatrix, frame: &ScaleFrame) -> Result<f64> {
    check_dim(frame.dim(), v.nrows())?;
    check_dim(frame.dim(), v.ncols())?;
    Ok(spectral_norm(&frame.to_plus_minus(v)))
}

/// `‖V‖₋,₊`, the norm of `V` read as a map `H⁻ → H⁺`.
pub fn norm_minus_plus(v: &CMatrix, frame: &ScaleFrame) -> Result<f64> {
    check_dim(frame.dim(), v.nrows())?;
    check_dim(frame.dim(), v.ncols())?;
    let s = frame.a0_sqrt.matrix();
    Ok(spectral_norm(&(s * v * s)))
}

/// JSON form `{dim, re, im}` with row-major entries.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MatrixJson {
    pub dim: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl MatrixJson {
    pub fn from_matrix(m: &CMatrix) -> Self {
        let n = m.nrows();
        let mut re = Vec::with_capacity(n * n);
        let mut im = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        Self { dim: n, re, im }
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        let len = self.dim * self.dim;
        if self.re.len() != len || self.im.len() != len {
            return Err(Error::InvalidArgument(format!(
                "matrix of dim {} needs {len} entries in re and im, found {} and {}",
                self.dim,
                self.re.len(),
                self.im.len()
            )));
        }
        Ok(CMatrix::from_fn(self.dim, self.dim, |i, j| {
            Complex64::new(self.re[i * self.dim + j], self.im[i * self.dim + j])
        }))
    }
}

impl Serialize for HermitianMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixJson::from_matrix(&self.inner).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HermitianMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = MatrixJson::deserialize(deserializer)?;
        let m = raw.to_matrix().map_err(serde::de::Error::custom)?;
        HermitianMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
        CMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn rel_err(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn matmul_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 7);
        let b = CMatrix::from_fn(7, 4, |i, j| c((i * 4 + j) as f64));
        assert!(rel_err(&matmul(&a, &b), &(&a * &b)) < 1e-14);
    }

    #[test]
    fn taylor_exponential_matches_spectral() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for scale in [1e-3, 0.7, 5.0, 60.0] {
            let m = random_matrix(&mut rng, 12);
            let h = HermitianMatrix::symmetrized(m.clone() + m.adjoint()).scaled(scale);
            let exact = h.eigen().unitary_exp(1.0);
            assert!((expm_minus_i(h.matrix()) - exact).norm() < 1e-12 * (1.0 + scale), "scale {scale}");
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m = CMatrix::identity(2, 2);
        m[(0, 1)] = c(1.0);
        assert!(matches!(HermitianMatrix::new(m), Err(Error::NotHermitian { .. })));
        assert!(matches!(
            HermitianMatrix::new(CMatrix::zeros(2, 3)),
            Err(Error::NotSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn power_of_identity_and_diagonal() {
        let id = HermitianMatrix::identity(5);
        let r = hermitian_power(&id, 0.5).unwrap();
        assert!(rel_err(r.matrix(), id.matrix()) < 1e-15);
        let d = HermitianMatrix::from_real_diagonal(&[4.0, 9.0]);
        let r = hermitian_power(&d, 0.5).unwrap();
        assert_eq!(r, HermitianMatrix::from_real_diagonal(&[2.0, 3.0]));
        let r = hermitian_power(&d, -1.0).unwrap();
        assert!((r.matrix()[(1, 1)].re - 1.0 / 9.0).abs() < 1e-16);
    }

    #[test]
    fn square_root_of_random_psd_reproduces_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = random_matrix(&mut rng, 8);
        let a = HermitianMatrix::new(&b * b.adjoint()).unwrap();
        let r = hermitian_power(&a, 0.5).unwrap();
        let product = r.matrix() * r.matrix();
        assert!(rel_err(&product, a.matrix()) < 1e-10);
        let inv_sqrt = hermitian_power(&a, -0.5).unwrap();
        let id = r.matrix() * inv_sqrt.matrix();
        assert!(rel_err(&id, &CMatrix::identity(8, 8)) < 1e-10);
    }

    #[test]
    fn negative_power_rejects_indefinite_input() {
        let a = HermitianMatrix::from_real_diagonal(&[-0.5, 2.0]);
        match hermitian_power(&a, -0.5) {
            Err(Error::NotPositiveDefinite { min_eigenvalue }) => assert_eq!(min_eigenvalue, -0.5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(hermitian_power(&a, 0.5), Err(Error::NotPositiveSemidefinite { .. })));
        // integer powers are fine for indefinite input
        assert!(hermitian_power(&a, 1.0).is_ok());
    }

    #[test]
    fn weighted_norm_cases() {
        let id = HermitianMatrix::identity(3);
        let zero = CVector::zeros(3);
        assert_eq!(weighted_norm(&zero, &id, Side::Plus).unwrap(), 0.0);
        let phi = CVector::from_vec(vec![c(3.0), Complex64::new(0.0, 4.0), c(0.0)]);
        assert!((weighted_norm(&phi, &id, Side::Minus).unwrap() - 5.0).abs() < 1e-14);
        let d = HermitianMatrix::from_real_diagonal(&[4.0, 1.0]);
        let e0 = CVector::from_vec(vec![c(1.0), c(0.0)]);
        assert!((weighted_norm(&e0, &d, Side::Plus).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(
            weighted_norm(&phi, &d, Side::Plus),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn plus_minus_norm_trivial_cases() {
        let frame = ScaleFrame::new(&HermitianMatrix::from_real_diagonal(&[0.0, 1.5, 4.0]), 0.0).unwrap();
        assert!((norm_plus_minus(frame.a0().matrix(), &frame).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(norm_plus_minus(&CMatrix::zeros(3, 3), &frame).unwrap(), 0.0);
        assert!((norm_minus_plus(frame.a0_inv().matrix(), &frame).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(norm_minus_plus(&CMatrix::zeros(3, 3), &frame).unwrap(), 0.0);
        assert!(norm_plus_minus(&CMatrix::zeros(2, 2), &frame).is_err());
    }

    #[test]
    fn minus_plus_norm_of_inverse_square_on_diagonal_frame() {
        let frame = ScaleFrame::from_reference(HermitianMatrix::from_real_diagonal(&[2.0, 5.0])).unwrap();
        let inv2 = frame.a0_inv().matrix() * frame.a0_inv().matrix();
        assert!((norm_minus_plus(&inv2, &frame).unwrap() - 0.5).abs() < 1e-15);
    }

    /// Lower bound on the sup of |<psi, V phi>| / (|psi|+ |phi|+) from random
    /// starting pairs refined by alternating maximization. Uses only LU solves
    /// with A0 and products with V, never a spectral decomposition.
    fn randomized_sup(v: &CMatrix, a0: &CMatrix, rng: &mut ChaCha8Rng, evaluations: usize) -> f64 {
        let n = v.nrows();
        let lu = a0.clone().lu();
        let plus = |x: &CVector| x.dotc(&(a0 * x)).re.sqrt();
        let ratio = |psi: &CVector, phi: &CVector| psi.dotc(&(v * phi)).norm() / (plus(psi) * plus(phi));
        let mut best = 0.0f64;
        let mut used = 0;
        while used < evaluations {
            let mut psi = random_vec(rng, n);
            let mut phi = random_vec(rng, n);
            for _ in 0..20 {
                best = best.max(ratio(&psi, &phi));
                used += 1;
                psi = lu.solve(&(v * &phi)).unwrap();
                phi = lu.solve(&(v.adjoint() * &psi)).unwrap();
                if used >= evaluations {
                    break;
                }
            }
        }
        best
    }

    #[test]
    fn plus_minus_norm_dominates_randomized_sup() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 12;
        let h0 = HermitianMatrix::from_real_diagonal(&(0..n).map(|k| k as f64).collect::<Vec<_>>());
        let frame = ScaleFrame::new(&h0, 0.0).unwrap();
        let v = HermitianMatrix::symmetrized(random_matrix(&mut rng, n));
        let exact = norm_plus_minus(v.matrix(), &frame).unwrap();
        let sup = randomized_sup(v.matrix(), frame.a0().matrix(), &mut rng, 10_000);
        assert!(sup <= exact * (1.0 + 1e-12));
        assert!((exact - sup) / exact < 0.02, "gap {}", (exact - sup) / exact);
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> CVector {
        CVector::from_fn(n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn power_iteration_agrees_with_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 40);
        let svd = SVD::new(m.clone(), false, false).singular_values.max();
        assert!((power_iteration_norm(&m) - svd).abs() / svd < 1e-9);
    }

    #[test]
    fn large_matrices_use_power_iteration() {
        let d: Vec<f64> = (0..130).map(|k| 1.0 + k as f64 * 0.5).collect();
        let m = HermitianMatrix::from_real_diagonal(&d);
        assert!((spectral_norm(m.matrix()) - d[129]).abs() < 1e-9);
    }

    #[test]
    fn matrix_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = HermitianMatrix::symmetrized(random_matrix(&mut rng, 4));
        let text = serde_json::to_string(&h).unwrap();
        let back: HermitianMatrix = serde_json::from_str(&text).unwrap();
        assert_eq!(h, back);
        let bad = r#"{"dim":2,"re":[1,2,3,4],"im":[0,0,0,0]}"#;
        assert!(serde_json::from_str::<HermitianMatrix>(bad).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn frame_and_vector() -> impl Strategy<Value = (ScaleFrame, CVector)> {
            (2usize..8).prop_flat_map(|n| {
                (
                    proptest::collection::vec(0.0f64..50.0, n),
                    proptest::collection::vec(-1.0f64..1.0, 2 * n * n),
                    proptest::collection::vec(-5.0f64..5.0, 2 * n),
                )
                    .prop_map(move |(diag, off, v)| {
                        let mut m = CMatrix::from_fn(n, n, |i, j| Complex64::new(off[i * n + j], off[n * n + i * n + j]));
                        m = &m * m.adjoint();
                        for i in 0..n {
                            m[(i, i)] += Complex64::new(diag[i], 0.0);
                        }
                        let h0 = HermitianMatrix::symmetrized(m);
                        let frame = ScaleFrame::new(&h0, 0.0).unwrap();
                        let phi = CVector::from_fn(n, |i, _| Complex64::new(v[i], v[n + i]));
                        (frame, phi)
                    })
            })
        }

        proptest! {
            #[test]
            fn norm_hierarchy((frame, phi) in frame_and_vector()) {
                let plain = phi.norm();
                prop_assert!(frame.norm_minus(&phi) <= plain + 1e-12);
                prop_assert!(plain <= frame.norm_plus(&phi) + 1e-12);
            }

            #[test]
            fn plus_minus_and_minus_plus_are_dual((frame, phi) in frame_and_vector()) {
                let n = frame.dim();
                let v = CMatrix::from_fn(n, n, |i, j| phi[i] * phi[j].conj() + Complex64::new((i + j) as f64, 0.0));
                let inv = frame.a0_inv().matrix();
                let lhs = norm_plus_minus(&v, &frame).unwrap();
                let rhs = norm_minus_plus(&(inv * &v * inv), &frame).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.max(1.0));
            }

            #[test]
            fn square_root_squares_back((frame, _phi) in frame_and_vector()) {
                let a = frame.a0();
                let r = hermitian_power(a, 0.5).unwrap();
                prop_assert!(rel_err(&(r.matrix() * r.matrix()), a.matrix()) < 1e-10);
                let id = frame.a0_sqrt().matrix() * frame.a0_inv_sqrt().matrix();
                prop_assert!(rel_err(&id, &CMatrix::identity(frame.dim(), frame.dim())) < 1e-10);
            }
        }
    }
}
