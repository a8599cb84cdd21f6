//! Dense complex linear algebra used by every other module.
//!
//! [`ComplexMatrix`] is a thin newtype over `nalgebra::DMatrix<Complex64>`
//! that enforces squareness and finiteness at the boundaries where matrices
//! enter the crate (construction from raw data and JSON). Hermitian
//! eigendecomposition is the workhorse: operator exponentials, matrix square
//! roots and the state metrics are all built on [`herm_eig`].

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use rand::Rng;

use crate::error::{Result, TomoError};

pub type C64 = Complex64;

/// Default Hermiticity tolerance for eigendecomposition and exponentials.
pub const HERMITIAN_TOL: f64 = 1e-10;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Dense square complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix(DMatrix<C64>);

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        Self(DMatrix::from_fn(dim, dim, f))
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        Self::from_fn(diag.len(), |i, j| {
            if i == j {
                c64(diag[i], 0.0)
            } else {
                C64::default()
            }
        })
    }

    /// Builds a matrix from row-major rows, validating shape and finiteness.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(TomoError::NotSquare { rows: n, cols: r.len() });
            }
        }
        Self::from_dmatrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// Wraps an nalgebra matrix after checking it is square with finite entries.
    pub fn from_dmatrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(TomoError::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let z = m[(i, j)];
                if !(z.re.is_finite() && z.im.is_finite()) {
                    return Err(TomoError::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(Self(m))
    }

    /// Outer product `|u><v|`.
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        assert_eq!(u.len(), v.len(), "outer product of unequal lengths");
        Self::from_fn(u.len(), |i, j| u[i] * v[j].conj())
    }

    pub fn projector(v: &[C64]) -> Self {
        Self::outer(v, v)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_dmatrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self(self.0.map(|z| z * s))
    }

    /// Frobenius (Hilbert-Schmidt) norm.
    pub fn hs_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `max |M - M^H|` over entries.
    pub fn hermitian_deviation(&self) -> f64 {
        let n = self.dim();
        let mut dev: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                dev = dev.max((self.0[(i, j)] - self.0[(j, i)].conj()).norm());
            }
        }
        dev
    }

    /// `(M + M^H) / 2`.
    pub fn hermitian_part(&self) -> Self {
        Self((&self.0 + self.0.adjoint()).map(|z| z * 0.5))
    }

    /// Top-left `n x n` block.
    pub fn top_left(&self, n: usize) -> Self {
        let n = n.min(self.dim());
        Self(self.0.view((0, 0), (n, n)).into_owned())
    }

    /// Embeds `self` in the top-left corner of a zero `dim x dim` matrix, or
    /// crops it when `dim` is smaller.
    pub fn resized(&self, dim: usize) -> Self {
        let keep = dim.min(self.dim());
        Self::from_fn(dim, |i, j| {
            if i < keep && j < keep {
                self.0[(i, j)]
            } else {
                C64::default()
            }
        })
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        let n = self.dim();
        assert_eq!(v.len(), n, "matrix-vector dimension mismatch");
        (0..n)
            .map(|i| (0..n).map(|j| self.0[(i, j)] * v[j]).sum())
            .collect()
    }

    /// `<u|M|v>`.
    pub fn sandwich(&self, u: &[C64], v: &[C64]) -> C64 {
        let mv = self.mul_vec(v);
        u.iter().zip(&mv).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.dim()).map(|i| self.0[(i, i)]).collect()
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &(self * other) - &(other * self)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn to_json_value(&self) -> MatrixJson {
        MatrixJson::from(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MatrixJson::from(self)).expect("finite matrix serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: MatrixJson = serde_json::from_str(s)?;
        raw.try_into()
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, idx: (usize, usize)) -> &C64 {
        &self.0[idx]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, idx: (usize, usize)) -> &mut C64 {
        &mut self.0[idx]
    }
}

impl<'a> Mul<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 * &rhs.0)
    }
}

impl<'a> Add<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 + &rhs.0)
    }
}

impl<'a> Sub<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 - &rhs.0)
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        self.0 += &rhs.0;
    }
}

/// JSON wire form of a [`ComplexMatrix`]: `{"dim": n, "re": [[..]], "im": [[..]]}`, row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixJson {
    pub dim: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl From<&ComplexMatrix> for MatrixJson {
    fn from(m: &ComplexMatrix) -> Self {
        let n = m.dim();
        let rows = |f: fn(&C64) -> f64| -> Vec<Vec<f64>> {
            (0..n).map(|i| (0..n).map(|j| f(&m[(i, j)])).collect()).collect()
        };
        MatrixJson { dim: n, re: rows(|z| z.re), im: rows(|z| z.im) }
    }
}

impl TryFrom<MatrixJson> for ComplexMatrix {
    type Error = TomoError;
    fn try_from(raw: MatrixJson) -> Result<Self> {
        let n = raw.dim;
        if n == 0 {
            return Err(TomoError::InvalidParameter("matrix dim must be positive".into()));
        }
        if raw.re.len() != n || raw.im.len() != n {
            return Err(TomoError::DimensionMismatch { expected: n, found: raw.re.len().min(raw.im.len()) });
        }
        let mut rows = Vec::with_capacity(n);
        for (r, i) in raw.re.iter().zip(&raw.im) {
            if r.len() != n || i.len() != n {
                return Err(TomoError::NotSquare { rows: n, cols: r.len().min(i.len()) });
            }
            rows.push(r.iter().zip(i).map(|(&a, &b)| c64(a, b)).collect());
        }
        ComplexMatrix::from_rows(&rows)
    }
}

/// Hilbert-Schmidt inner product `Tr[a^H b]`.
pub fn hs_inner(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<C64> {
    if a.dim() != b.dim() {
        return Err(TomoError::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(a.0.iter().zip(b.0.iter()).map(|(x, y)| x.conj() * y).sum())
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermitianEigensystem {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns, aligned with `eigenvalues`.
    pub eigenvectors: ComplexMatrix,
}

impl HermitianEigensystem {
    /// `V f(Λ) V^H`.
    pub fn map(&self, f: impl Fn(f64) -> C64) -> ComplexMatrix {
        let v = &self.eigenvectors.0;
        let d = DVector::from_iterator(self.eigenvalues.len(), self.eigenvalues.iter().map(|&x| f(x)));
        let mut scaled = v.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= d[j];
        }
        ComplexMatrix(scaled * v.adjoint())
    }

    pub fn reassemble(&self) -> ComplexMatrix {
        self.map(|x| c64(x, 0.0))
    }

    pub fn eigenvector(&self, k: usize) -> Vec<C64> {
        self.eigenvectors.0.column(k).iter().copied().collect()
    }
}

pub fn herm_eig(m: &ComplexMatrix) -> Result<HermitianEigensystem> {
    herm_eig_tol(m, HERMITIAN_TOL)
}

/// [`herm_eig`] with an explicit Hermiticity tolerance.
pub fn herm_eig_tol(m: &ComplexMatrix, tol: f64) -> Result<HermitianEigensystem> {
    let deviation = m.hermitian_deviation();
    if deviation > tol {
        return Err(TomoError::NotHermitian { deviation });
    }
    let eig = SymmetricEigen::new(m.hermitian_part().0);
    let n = m.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(HermitianEigensystem { eigenvalues, eigenvectors: ComplexMatrix(vecs) })
}

/// `exp(i s h)` for Hermitian `h`.
pub fn expm_i_herm(h: &ComplexMatrix, s: f64) -> Result<ComplexMatrix> {
    expm_i_herm_tol(h, s, HERMITIAN_TOL)
}

pub fn expm_i_herm_tol(h: &ComplexMatrix, s: f64, tol: f64) -> Result<ComplexMatrix> {
    let eig = herm_eig_tol(h, tol)?;
    Ok(eig.map(|x| C64::from_polar(1.0, s * x)))
}

/// Inverse of a general square matrix via LU.
pub fn inverse(m: &ComplexMatrix) -> Option<ComplexMatrix> {
    m.0.clone().try_inverse().map(ComplexMatrix)
}

/// Tolerances for [`DensityMatrix`] validation.
#[derive(Clone, Copy, Debug)]
pub struct DensityTolerance {
    pub hermitian: f64,
    pub trace: f64,
    pub negativity: f64,
}

impl Default for DensityTolerance {
    fn default() -> Self {
        Self { hermitian: 1e-12, trace: 1e-12, negativity: 1e-10 }
    }
}

/// Hermitian, positive semidefinite, unit-trace matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        Self::with_tolerance(m, DensityTolerance::default())
    }

    pub fn with_tolerance(m: ComplexMatrix, tol: DensityTolerance) -> Result<Self> {
        let dev = m.hermitian_deviation();
        if dev > tol.hermitian {
            return Err(TomoError::InvalidDensity(format!("not Hermitian (deviation {dev:e})")));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > tol.trace || tr.im.abs() > tol.trace {
            return Err(TomoError::InvalidDensity(format!("trace is {tr}, expected 1")));
        }
        let eig = herm_eig_tol(&m, tol.hermitian.max(HERMITIAN_TOL))?;
        let min = eig.eigenvalues.first().copied().unwrap_or(0.0);
        if min < -tol.negativity {
            return Err(TomoError::InvalidDensity(format!("negative eigenvalue {min:e}")));
        }
        Ok(Self(m))
    }

    /// Pure state `|v><v|` from an arbitrary non-zero vector.
    pub fn pure(v: &[C64]) -> Result<Self> {
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(TomoError::InvalidDensity("zero state vector".into()));
        }
        let u: Vec<C64> = v.iter().map(|z| z / norm).collect();
        let m = ComplexMatrix::projector(&u).hermitian_part();
        Self::renormalized(m)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64))
    }

    /// Hermitian part, negative eigenvalues clipped to zero, trace rescaled to one.
    ///
    /// Estimators are Hermitian and positive only in expectation; this is the
    /// projection applied before computing state metrics.
    pub fn from_estimate(m: &ComplexMatrix) -> Result<Self> {
        if !m.is_finite() {
            return Err(TomoError::InvalidDensity("non-finite estimate".into()));
        }
        let eig = herm_eig_tol(&m.hermitian_part(), f64::INFINITY)?;
        let clipped = eig.map(|x| c64(x.max(0.0), 0.0)).hermitian_part();
        let tr = clipped.trace().re;
        if tr <= 0.0 {
            return Err(TomoError::InvalidDensity("estimate has no positive part".into()));
        }
        Self::renormalized(clipped)
    }

    fn renormalized(m: ComplexMatrix) -> Result<Self> {
        let tr = m.trace().re;
        Self::new(m.scale_real(1.0 / tr))
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn purity(&self) -> f64 {
        hs_inner(&self.0, &self.0).map(|z| z.re).unwrap_or(0.0)
    }

    /// `<v|ρ|v>`.
    pub fn expectation_in(&self, v: &[C64]) -> f64 {
        self.0.sandwich(v, v).re
    }
}

impl AsRef<ComplexMatrix> for DensityMatrix {
    fn as_ref(&self) -> &ComplexMatrix {
        &self.0
    }
}

fn psd_sqrt(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = herm_eig_tol(m, f64::INFINITY)?;
    Ok(eig.map(|x| c64(x.max(0.0).sqrt(), 0.0)))
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(ρ) σ sqrt(ρ)))^2`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(TomoError::DimensionMismatch { expected: rho.dim(), found: sigma.dim() });
    }
    let s = psd_sqrt(rho.matrix())?;
    let inner = (&(&s * sigma.matrix()) * &s).hermitian_part();
    let eig = herm_eig_tol(&inner, f64::INFINITY)?;
    let root_sum: f64 = eig.eigenvalues.iter().map(|x| x.max(0.0).sqrt()).sum();
    Ok(root_sum * root_sum)
}

/// Half the trace norm of a Hermitian matrix.
pub fn half_trace_norm(m: &ComplexMatrix) -> Result<f64> {
    let eig = herm_eig_tol(m, f64::INFINITY)?;
    Ok(0.5 * eig.eigenvalues.iter().map(|x| x.abs()).sum::<f64>())
}

/// `(1/2) ||ρ - σ||_1`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(TomoError::DimensionMismatch { expected: rho.dim(), found: sigma.dim() });
    }
    half_trace_norm(&(rho.matrix() - sigma.matrix()).hermitian_part())
}

/// Neumaier-compensated running sum of scalars.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &Self) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Entrywise compensated sum of matrices.
#[derive(Clone, Debug)]
pub struct CompensatedMatrixSum {
    re: Vec<CompensatedSum>,
    im: Vec<CompensatedSum>,
    dim: usize,
}

impl CompensatedMatrixSum {
    pub fn new(dim: usize) -> Self {
        Self { re: vec![CompensatedSum::default(); dim * dim], im: vec![CompensatedSum::default(); dim * dim], dim }
    }

    pub fn add_scaled(&mut self, m: &ComplexMatrix, s: C64) {
        debug_assert_eq!(m.dim(), self.dim);
        for (k, z) in m.0.iter().enumerate() {
            let w = z * s;
            self.re[k].add(w.re);
            self.im[k].add(w.im);
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for k in 0..self.re.len() {
            self.re[k].merge(&other.re[k]);
            self.im[k].merge(&other.im[k]);
        }
    }

    pub fn value(&self) -> ComplexMatrix {
        let n = self.dim;
        // nalgebra storage is column-major; iteration order above matches it.
        ComplexMatrix(DMatrix::from_iterator(
            n,
            n,
            self.re.iter().zip(&self.im).map(|(r, i)| c64(r.value(), i.value())),
        ))
    }
}

/// Pauli matrices `[I, X, Y, Z]`.
pub fn paulis() -> [ComplexMatrix; 4] {
    let o = C64::default();
    let one = c64(1.0, 0.0);
    let i = c64(0.0, 1.0);
    [
        ComplexMatrix::identity(2),
        ComplexMatrix(DMatrix::from_row_slice(2, 2, &[o, one, one, o])),
        ComplexMatrix(DMatrix::from_row_slice(2, 2, &[o, -i, i, o])),
        ComplexMatrix(DMatrix::from_row_slice(2, 2, &[one, o, o, -one])),
    ]
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, exact for polynomials of
/// degree `2n - 1`. Newton iteration on `P_n` from the Chebyshev-like guess.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 0 { 0.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Operator with entries uniform in the unit square, for identity checks.
pub fn random_operator(rng: &mut impl Rng, dim: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(dim, |_, _| c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

/// Full-rank mixed state `G G^H / Tr`, `G` from [`random_operator`].
pub fn random_density(rng: &mut impl Rng, dim: usize) -> DensityMatrix {
    let g = random_operator(rng, dim);
    let m = (&g * &g.adjoint()).hermitian_part();
    let tr = m.trace().re;
    DensityMatrix(m.scale_real(1.0 / tr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_matrix(rng: &mut impl Rng, n: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(n, |_, _| c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn random_density(rng: &mut impl Rng, n: usize) -> DensityMatrix {
        let g = random_matrix(rng, n);
        let m = (&g * &g.adjoint()).hermitian_part();
        let tr = m.trace().re;
        DensityMatrix::new(m.scale_real(1.0 / tr)).unwrap()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
            assert!(x.windows(2).all(|p| p[0] < p[1]));
            for deg in 0..2 * n {
                let quad: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert_abs_diff_eq!(quad, exact, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn hs_inner_examples() {
        let [i2, x, y, _] = paulis();
        assert_abs_diff_eq!(hs_inner(&i2, &i2).unwrap().re, 2.0);
        assert_abs_diff_eq!(hs_inner(&x, &y).unwrap().norm(), 0.0);
        // direct 2x2: Tr[X^H X] = sum |x_ij|^2 = 2
        let direct: f64 = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| x[(i, j)].norm_sqr()).sum();
        assert_abs_diff_eq!(hs_inner(&x, &x).unwrap().re, direct);
        assert!(hs_inner(&x, &ComplexMatrix::identity(3)).is_err());
    }

    #[test]
    fn hs_inner_conjugate_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 4);
        let b = random_matrix(&mut rng, 4);
        let ab = hs_inner(&a, &b).unwrap();
        let ba = hs_inner(&b, &a).unwrap();
        assert_abs_diff_eq!((ab - ba.conj()).norm(), 0.0, epsilon = 1e-14);
        let aa = hs_inner(&a, &a).unwrap();
        assert!(aa.re >= 0.0 && aa.im.abs() < 1e-14);
    }

    #[test]
    fn herm_eig_examples() {
        let d = ComplexMatrix::from_real_diagonal(&[3.0, 1.0]);
        let e = herm_eig(&d).unwrap();
        assert_abs_diff_eq!(e.eigenvalues[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.eigenvalues[1], 3.0, epsilon = 1e-14);

        let x = &paulis()[1];
        let e = herm_eig(x).unwrap();
        assert_abs_diff_eq!(e.eigenvalues[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.eigenvalues[1], 1.0, epsilon = 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = random_matrix(&mut rng, 5).hermitian_part();
        let e = herm_eig(&h).unwrap();
        assert!((&e.reassemble() - &h).hs_norm() <= 1e-10 * h.hs_norm());
        let v = &e.eigenvectors;
        assert!((&(v * &v.adjoint()) - &ComplexMatrix::identity(5)).hs_norm() < 1e-10);
        assert!(e.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn herm_eig_rejects_non_hermitian() {
        let m = ComplexMatrix::from_rows(&[vec![c64(0.0, 0.0), c64(1.0, 0.0)], vec![c64(0.0, 0.0), c64(0.0, 0.0)]]).unwrap();
        assert!(matches!(herm_eig(&m), Err(TomoError::NotHermitian { .. })));
        assert!(herm_eig_tol(&m, 2.0).is_ok());
    }

    #[test]
    fn expm_examples() {
        let z = ComplexMatrix::zeros(3);
        let u = expm_i_herm(&z, 1.7).unwrap();
        assert!((&u - &ComplexMatrix::identity(3)).hs_norm() < 1e-14);

        let [i2, x, _, zz] = paulis();
        // exp(-2πi σz/2) = diag(e^{-iπ}, e^{iπ}) = -I
        let u = expm_i_herm(&zz.scale_real(0.5), -2.0 * std::f64::consts::PI).unwrap();
        assert!((&u + &i2).hs_norm() < 1e-12);
        // exp(-iπ σx/2) = cos(π/2) I - i sin(π/2) σx = -i σx
        let u = expm_i_herm(&x.scale_real(0.5), -std::f64::consts::PI).unwrap();
        assert!((&u - &x.scale(c64(0.0, -1.0))).hs_norm() < 1e-12);
    }

    #[test]
    fn fidelity_and_trace_distance_examples() {
        let zero = DensityMatrix::pure(&[c64(1.0, 0.0), c64(0.0, 0.0)]).unwrap();
        let one = DensityMatrix::pure(&[c64(0.0, 0.0), c64(1.0, 0.0)]).unwrap();
        let mixed = DensityMatrix::maximally_mixed(2);
        assert_abs_diff_eq!(fidelity(&zero, &zero).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fidelity(&zero, &one).unwrap(), 0.0, epsilon = 1e-12);
        // pure vs mixed: F = <0|σ|0> = 1/2
        let ket0 = [c64(1.0, 0.0), c64(0.0, 0.0)];
        assert_abs_diff_eq!(fidelity(&zero, &mixed).unwrap(), mixed.expectation_in(&ket0), epsilon = 1e-12);
        assert_abs_diff_eq!(trace_distance(&zero, &zero).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(trace_distance(&zero, &one).unwrap(), 1.0, epsilon = 1e-14);
        // eigenvalues of |0><0| - I/2 are ±1/2
        assert_abs_diff_eq!(trace_distance(&zero, &mixed).unwrap(), 0.5, epsilon = 1e-14);
        assert!(fidelity(&zero, &DensityMatrix::maximally_mixed(3)).is_err());
    }

    #[test]
    fn fuchs_van_de_graaf_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..100 {
            let n = 2 + k % 5;
            let a = random_density(&mut rng, n);
            let b = random_density(&mut rng, n);
            let f = fidelity(&a, &b).unwrap();
            let d = trace_distance(&a, &b).unwrap();
            assert!((0.0..=1.0 + 1e-9).contains(&f));
            assert!(1.0 - f.sqrt() <= d + 1e-9, "1-sqrt(F) <= D");
            assert!(d <= (1.0 - f).sqrt() + 1e-9, "D <= sqrt(1-F)");
        }
    }

    #[test]
    fn density_validation() {
        assert!(DensityMatrix::new(ComplexMatrix::identity(2)).is_err());
        assert!(DensityMatrix::new(ComplexMatrix::from_real_diagonal(&[1.5, -0.5])).is_err());
        assert!(DensityMatrix::new(ComplexMatrix::from_real_diagonal(&[1.0 + 1e-11, -1e-11])).is_ok());
        let est = ComplexMatrix::from_real_diagonal(&[1.2, -0.1, 0.1]);
        let d = DensityMatrix::from_estimate(&est).unwrap();
        assert_abs_diff_eq!(d.matrix()[(0, 0)].re, 1.2 / 1.3, epsilon = 1e-14);
        assert_abs_diff_eq!(d.matrix()[(1, 1)].re, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn json_round_trip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 4).scale_real(1.0 / 3.0);
        let back = ComplexMatrix::from_json(&m.to_json()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m[(i, j)].re.to_bits(), back[(i, j)].re.to_bits());
                assert_eq!(m[(i, j)].im.to_bits(), back[(i, j)].im.to_bits());
            }
        }
        assert!(ComplexMatrix::from_json(r#"{"dim":2,"re":[[1,0]],"im":[[0,0]]}"#).is_err());
        assert!(ComplexMatrix::from_json(r#"{"dim":1,"re":[[1]],"im":[[0]],"extra":1}"#).is_err());
    }

    #[test]
    fn compensated_sum_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-1.0..1.0) * 10f64.powi(rng.gen_range(-8..8))).collect();
        let mut fwd = CompensatedSum::default();
        xs.iter().for_each(|&x| fwd.add(x));
        let mut rev = CompensatedSum::default();
        xs.iter().rev().for_each(|&x| rev.add(x));
        assert!((fwd.value() - rev.value()).abs() <= 1e-12 * fwd.value().abs().max(1.0));
    }

    proptest::proptest! {
        #[test]
        fn expm_is_unitary(seed in 0u64..1000, n in 1usize..7, s in -10.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_matrix(&mut rng, n).hermitian_part();
            let u = expm_i_herm(&h, s).unwrap();
            let err = (&(&u * &u.adjoint()) - &ComplexMatrix::identity(n)).hs_norm();
            proptest::prop_assert!(err <= 1e-10);
        }

        #[test]
        fn json_round_trip(seed in 0u64..1000, n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, n).scale_real(rng.gen_range(1e-300..1e300));
            let back = ComplexMatrix::from_json(&m.to_json()).unwrap();
            proptest::prop_assert_eq!(m, back);
        }
    }
}
