//! Truncated Fock space for a single field mode.
//!
//! Two routes to the displacement operator live here. [`FockSpace::displacement`]
//! exponentiates the truncated generator, so the result is exactly unitary on
//! the truncated space but carries truncation artifacts in its last rows.
//! [`FockSpace::displacement_compressed`] evaluates the matrix elements of the
//! untruncated operator in closed form (generalized Laguerre polynomials) and
//! keeps the `dim x dim` block; it is what the reconstruction modules use when
//! the displacement grid reaches amplitudes the truncation cannot represent.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::error::{Result, TomoError};
use crate::numerics::{c64, expm_i_herm, herm_eig, CompensatedSum, ComplexMatrix, DensityMatrix, HermitianEigensystem, C64};

#[derive(Debug)]
pub struct FockSpace {
    nmax: usize,
    a: ComplexMatrix,
    adag: ComplexMatrix,
    /// Eigensystem of `i(a - a^H)`, shared by every displacement.
    shift_generator: OnceLock<HermitianEigensystem>,
}

impl Clone for FockSpace {
    fn clone(&self) -> Self {
        FockSpace::new(self.nmax)
    }
}

impl FockSpace {
    pub fn new(nmax: usize) -> Self {
        let dim = nmax + 1;
        let a = ComplexMatrix::from_fn(dim, |i, j| {
            if j == i + 1 {
                c64((j as f64).sqrt(), 0.0)
            } else {
                C64::default()
            }
        });
        let adag = a.adjoint();
        FockSpace { nmax, a, adag, shift_generator: OnceLock::new() }
    }

    pub fn nmax(&self) -> usize {
        self.nmax
    }

    pub fn dim(&self) -> usize {
        self.nmax + 1
    }

    pub fn annihilation(&self) -> &ComplexMatrix {
        &self.a
    }

    pub fn creation(&self) -> &ComplexMatrix {
        &self.adag
    }

    pub fn number(&self) -> ComplexMatrix {
        ComplexMatrix::from_real_diagonal(&(0..self.dim()).map(|n| n as f64).collect::<Vec<_>>())
    }

    /// `exp(i t n̂)`.
    pub fn phase_rotation(&self, t: f64) -> ComplexMatrix {
        ComplexMatrix::from_diagonal(&(0..self.dim()).map(|n| C64::from_polar(1.0, t * n as f64)).collect::<Vec<_>>())
    }

    /// `X_φ = (a^H e^{iφ} + a e^{-iφ}) / 2`.
    pub fn quadrature(&self, phi: f64) -> ComplexMatrix {
        let up = C64::from_polar(0.5, phi);
        let down = C64::from_polar(0.5, -phi);
        &self.adag.scale(up) + &self.a.scale(down)
    }

    fn shift_generator(&self) -> &HermitianEigensystem {
        self.shift_generator.get_or_init(|| {
            let h = (&self.a - &self.adag).scale(c64(0.0, 1.0));
            herm_eig(&h).expect("i(a - a^H) is Hermitian")
        })
    }

    /// `D(α) = exp(α a^H - α* a)` on the truncated space.
    ///
    /// With `α = r e^{iθ}` the generator is `e^{iθn̂} r(a^H - a) e^{-iθn̂}`, and
    /// `r(a^H - a) = i r H` for the Hermitian `H = i(a - a^H)`, so one cached
    /// eigendecomposition of `H` serves every `α`. Accurate on the central
    /// block for `|α|` up to roughly `sqrt(nmax)/2`.
    pub fn displacement(&self, alpha: C64) -> ComplexMatrix {
        let r = alpha.norm();
        if r == 0.0 {
            return ComplexMatrix::identity(self.dim());
        }
        let theta = alpha.arg();
        let core = self.shift_generator().map(|x| C64::from_polar(1.0, r * x));
        let n = self.dim();
        ComplexMatrix::from_fn(n, |i, j| core[(i, j)] * C64::from_polar(1.0, theta * (i as f64 - j as f64)))
    }

    /// Same operator as [`displacement`](Self::displacement), exponentiating
    /// the full generator directly. Reference path for tests.
    pub fn displacement_direct(&self, alpha: C64) -> Result<ComplexMatrix> {
        let gen = &self.adag.scale(alpha) - &self.a.scale(alpha.conj());
        // exp(G) = exp(i·(-iG)), and -iG is Hermitian
        expm_i_herm(&gen.scale(c64(0.0, -1.0)), 1.0)
    }

    /// The `dim x dim` block of the untruncated displacement operator.
    pub fn displacement_compressed(&self, alpha: C64) -> ComplexMatrix {
        displacement_block(self.dim(), alpha)
    }

    pub fn vacuum(&self) -> Vec<C64> {
        self.fock_vector(0)
    }

    pub fn fock_vector(&self, n: usize) -> Vec<C64> {
        let mut v = vec![C64::default(); self.dim()];
        v[n.min(self.nmax)] = c64(1.0, 0.0);
        v
    }

    pub fn fock_state(&self, n: usize) -> Result<DensityMatrix> {
        if n > self.nmax {
            return Err(TomoError::InvalidParameter(format!("Fock state {n} exceeds nmax {}", self.nmax)));
        }
        DensityMatrix::pure(&self.fock_vector(n))
    }

    /// `D(α)|0><0|D^H(α)`, renormalized after truncation.
    pub fn coherent_state(&self, alpha: C64) -> Result<DensityMatrix> {
        let col: Vec<C64> = {
            let d = self.displacement(alpha);
            (0..self.dim()).map(|i| d[(i, 0)]).collect()
        };
        DensityMatrix::pure(&col)
    }

    /// Diagonal thermal state with `p_n ∝ (nbar/(1+nbar))^n`.
    pub fn thermal_state(&self, nbar: f64) -> Result<DensityMatrix> {
        if !(nbar >= 0.0) || !nbar.is_finite() {
            return Err(TomoError::InvalidParameter(format!("thermal nbar must be >= 0, got {nbar}")));
        }
        let ratio = nbar / (1.0 + nbar);
        let weights: Vec<f64> = (0..self.dim()).map(|n| if n == 0 { 1.0 } else { ratio.powi(n as i32) }).collect();
        let total: f64 = weights.iter().sum();
        DensityMatrix::new(ComplexMatrix::from_real_diagonal(&weights.iter().map(|w| w / total).collect::<Vec<_>>()))
    }

    /// `<n̂>` of a state on this space.
    pub fn mean_photon_number(&self, rho: &DensityMatrix) -> f64 {
        rho.matrix().diagonal().iter().enumerate().map(|(n, z)| n as f64 * z.re).sum()
    }
}

/// Matrix elements `<m|D(β)|n>` for `m, n < dim` of the untruncated operator:
/// `sqrt(n!/m!) β^{m-n} e^{-|β|²/2} L_n^{(m-n)}(|β|²)` for `m >= n`, and the
/// adjoint relation `<m|D(β)|n> = conj(<n|D(-β)|m>)` above the diagonal.
pub fn displacement_block(dim: usize, beta: C64) -> ComplexMatrix {
    let m = displacement_rect(dim, dim, beta);
    ComplexMatrix::from_fn(dim, |i, j| m[(i, j)])
}

/// `<m|D(β)|n>` for `m < rows`, `n < cols`.
pub fn displacement_rect(rows: usize, cols: usize, beta: C64) -> DMatrix<C64> {
    let mut out = DMatrix::zeros(rows, cols);
    let r = beta.norm();
    if r == 0.0 {
        for i in 0..rows.min(cols) {
            out[(i, i)] = c64(1.0, 0.0);
        }
        return out;
    }
    let x = r * r;
    let ln_r = r.ln();
    let theta = beta.arg();
    let size = rows.max(cols);
    let mut ln_fact = Vec::with_capacity(size);
    let mut acc = 0.0;
    for n in 0..size {
        if n > 0 {
            acc += (n as f64).ln();
        }
        ln_fact.push(acc);
    }
    for k in 0..size {
        let kf = k as f64;
        // lower entries (n + k, n) and upper entries (n, n + k)
        let lower = cols.min(rows.saturating_sub(k));
        let upper = if k > 0 { rows.min(cols.saturating_sub(k)) } else { 0 };
        let len = lower.max(upper);
        if len == 0 {
            continue;
        }
        let phase = C64::from_polar(1.0, kf * theta);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        // L_n^{(k)}(x) by upward recurrence in n
        let (mut prev, mut cur) = (0.0f64, 1.0f64);
        for n in 0..len {
            if n == 1 {
                prev = 1.0;
                cur = 1.0 + kf - x;
            } else if n > 1 {
                let nf = (n - 1) as f64;
                let next = ((2.0 * nf + 1.0 + kf - x) * cur - (nf + kf) * prev) / (nf + 1.0);
                prev = cur;
                cur = next;
            }
            let m = n + k;
            let mag = (0.5 * (ln_fact[n] - ln_fact[m]) + kf * ln_r - 0.5 * x).exp() * cur;
            if n < lower {
                out[(m, n)] = phase * mag;
            }
            if n < upper {
                // <n|D(β)|m> = conj(<m|D(-β)|n>), and (-β)^k = (-1)^k β^k
                out[(n, m)] = (phase * (mag * sign)).conj();
            }
        }
    }
    out
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(t: f64) -> f64 {
    t.rem_euclid(2.0 * PI)
}

/// Square-lattice cell centers clipped to the disk `|α| <= radius`, each
/// weighted by its cell area.
#[derive(Clone, Debug, PartialEq)]
pub struct DiskLattice {
    radius: f64,
    steps: usize,
    nodes: Vec<(C64, f64)>,
}

impl DiskLattice {
    /// `steps` cells per axis across the bounding square `[-radius, radius]²`.
    pub fn new(radius: f64, steps: usize) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(TomoError::InvalidParameter(format!("lattice radius must be positive, got {radius}")));
        }
        if steps == 0 {
            return Err(TomoError::InvalidParameter("lattice needs at least one step per axis".into()));
        }
        let h = 2.0 * radius / steps as f64;
        let mut nodes = Vec::new();
        for i in 0..steps {
            let re = -radius + (i as f64 + 0.5) * h;
            for j in 0..steps {
                let im = -radius + (j as f64 + 0.5) * h;
                if re * re + im * im <= radius * radius {
                    nodes.push((c64(re, im), h * h));
                }
            }
        }
        Ok(Self { radius, steps, nodes })
    }

    /// Lattice with spacing closest to `step`.
    pub fn with_step(radius: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(TomoError::InvalidParameter(format!("lattice step must be positive, got {step}")));
        }
        Self::new(radius, ((2.0 * radius / step).round() as usize).max(1))
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.radius / self.steps as f64
    }

    pub fn nodes(&self) -> &[(C64, f64)] {
        &self.nodes
    }

    /// Total weight, the area covered by the clipped cells.
    pub fn area(&self) -> f64 {
        let mut acc = CompensatedSum::default();
        for (_, w) in &self.nodes {
            acc.add(*w);
        }
        acc.value()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{hs_inner, trace_distance};
    use approx::assert_abs_diff_eq;

    fn vac_expect(space: &FockSpace, m: &ComplexMatrix) -> C64 {
        let v = space.vacuum();
        m.sandwich(&v, &v)
    }

    #[test]
    fn ladder_invariants() {
        let s = FockSpace::new(6);
        for n in 1..=6 {
            assert_abs_diff_eq!(s.annihilation()[(n - 1, n)].re, (n as f64).sqrt());
        }
        let comm = s.annihilation().commutator(s.creation());
        for i in 0..7 {
            let expected = if i == 6 { -6.0 } else { 1.0 };
            assert_abs_diff_eq!(comm[(i, i)].re, expected, epsilon = 1e-12);
        }
        assert!(comm.hermitian_deviation() < 1e-14);
    }

    #[test]
    fn quadrature_examples() {
        let s = FockSpace::new(1);
        let x0 = s.quadrature(0.0);
        assert_abs_diff_eq!(x0[(0, 1)].re, 0.5);
        assert_abs_diff_eq!(x0[(1, 0)].re, 0.5);
        assert_abs_diff_eq!(x0[(0, 0)].norm(), 0.0);

        let s = FockSpace::new(10);
        for &phi in &[0.0, 0.3, 1.2, 2.9] {
            let x = s.quadrature(phi);
            assert!(x.hermitian_deviation() < 1e-15);
            assert_abs_diff_eq!((x[(3, 4)] - C64::from_polar(4f64.sqrt() / 2.0, -phi)).norm(), 0.0, epsilon = 1e-15);
            let var = vac_expect(&s, &(&x * &x));
            assert_abs_diff_eq!(var.re, 0.25, epsilon = 1e-14);
            let flipped = s.quadrature(phi + PI);
            assert!((&flipped + &x).hs_norm() < 1e-14);
        }
    }

    #[test]
    fn quadrature_identity_away_from_corner() {
        let s = FockSpace::new(12);
        let x0 = s.quadrature(0.0);
        let xp = s.quadrature(PI / 2.0);
        let lhs = &(&x0 * &x0) + &(&xp * &xp);
        let rhs = &s.number() + &ComplexMatrix::identity(13).scale_real(0.5);
        let diff = (&lhs - &rhs).top_left(11);
        assert!(diff.max_abs() < 1e-10);
    }

    #[test]
    fn displacement_examples() {
        let s = FockSpace::new(60);
        assert!((&s.displacement(C64::default()) - &ComplexMatrix::identity(61)).hs_norm() < 1e-14);
        for &alpha in &[c64(0.3, 0.1), c64(-1.0, 0.7), c64(0.0, 2.0), c64(1.5, -1.2)] {
            let d = s.displacement(alpha);
            let unit = (&(&d * &d.adjoint()) - &ComplexMatrix::identity(61)).hs_norm();
            assert!(unit < 1e-10, "unitarity {unit}");
            let vac = d[(0, 0)];
            assert_abs_diff_eq!(vac.re, (-alpha.norm_sqr() / 2.0).exp(), epsilon = 1e-8);
            assert_abs_diff_eq!(vac.im, 0.0, epsilon = 1e-8);
            // Poisson photon statistics of D(α)|0>
            let nbar = alpha.norm_sqr();
            let mut pois = (-nbar).exp();
            for n in 0..20 {
                if n > 0 {
                    pois *= nbar / n as f64;
                }
                assert_abs_diff_eq!(d[(n, 0)].norm_sqr(), pois, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn displacement_matches_direct_exponential() {
        let s = FockSpace::new(30);
        let alpha = c64(0.8, -0.6);
        let a = s.displacement(alpha);
        let b = s.displacement_direct(alpha).unwrap();
        assert!((&a - &b).hs_norm() < 1e-10);
    }

    #[test]
    fn compressed_displacement_matches_padded_truncation() {
        // truncation oracle: the central block of a heavily padded truncated exponential
        let padded = FockSpace::new(160);
        for &beta in &[c64(0.4, 0.2), c64(-2.0, 1.0), c64(3.0, -2.5), c64(0.0, -4.5)] {
            let reference = padded.displacement(beta).top_left(21);
            let closed = displacement_block(21, beta);
            let err = (&reference - &closed).max_abs();
            assert!(err < 1e-10, "beta={beta} err={err}");
        }
    }

    #[test]
    fn composition_on_central_block() {
        let s = FockSpace::new(60);
        let pairs = [(c64(0.5, 0.3), c64(-0.2, 0.9)), (c64(-1.0, 0.0), c64(0.6, -0.7)), (c64(0.1, -0.8), c64(0.7, 0.7))];
        for (a, b) in pairs {
            let lhs = &s.displacement(a) * &s.displacement(b);
            let phase = C64::from_polar(1.0, (a * b.conj()).im);
            let rhs = s.displacement(a + b).scale(phase);
            let err = (&lhs - &rhs).top_left(31).hs_norm();
            assert!(err < 1e-6, "err={err}");
        }
    }

    #[test]
    fn coherent_state_examples() {
        let s = FockSpace::new(60);
        let vac = s.coherent_state(C64::default()).unwrap();
        assert!(trace_distance(&vac, &s.fock_state(0).unwrap()).unwrap() < 1e-14);
        let coh = s.coherent_state(c64(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(s.mean_photon_number(&coh), 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(coh.purity(), 1.0, epsilon = 1e-8);
        let coh = s.coherent_state(c64(0.6, -0.8)).unwrap();
        let a_exp = hs_inner(&coh.matrix().adjoint(), s.annihilation()).unwrap();
        assert_abs_diff_eq!((a_exp - c64(0.6, -0.8)).norm(), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn thermal_state_examples() {
        let s = FockSpace::new(40);
        let t0 = s.thermal_state(0.0).unwrap();
        assert_abs_diff_eq!(t0.matrix()[(0, 0)].re, 1.0);
        let t = s.thermal_state(0.5).unwrap();
        // geometric series: <n> = nbar up to a tail of order (1/3)^41
        assert_abs_diff_eq!(s.mean_photon_number(&t), 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(t.matrix().trace().re, 1.0, epsilon = 1e-15);
        assert!(s.thermal_state(-0.1).is_err());
    }

    #[test]
    fn disk_lattice_area() {
        let l = DiskLattice::new(5.0, 100).unwrap();
        let h = l.spacing();
        assert!((l.area() - l.nodes().len() as f64 * h * h).abs() < 1e-12);
        assert!((l.area() - PI * 25.0).abs() / (PI * 25.0) < 0.01);
        assert!(l.nodes().iter().all(|(a, _)| a.norm() <= 5.0));
        assert_eq!(DiskLattice::with_step(6.0, 0.05).unwrap().steps(), 240);
        assert!(DiskLattice::new(-1.0, 10).is_err());
        assert!(DiskLattice::new(1.0, 0).is_err());
    }
}
