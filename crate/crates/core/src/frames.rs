//! Tomographic operator sets as weighted operator families.
//!
//! An [`OperatorFrame`] is a list of labelled, weighted elements together
//! with an [`OperatorFamily`] that produces `T(g)` from a label, and
//! optionally a [`GroupAction`] carrying the representation `D(g)` and the
//! label maps of the covariance relations. Continuous groups are realized as
//! quadrature frames whose weights stand in for the invariant measure; each
//! frame declares the discretization tolerance its identities hold to.
//!
//! All frame sums use compensated accumulation over fixed-size chunks merged
//! in chunk order, so results do not depend on the thread count.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::numerics::{
    c64, herm_eig_tol, hs_inner, inverse, paulis, CompensatedMatrixSum, CompensatedSum, ComplexMatrix, MatrixJson, C64,
};
use crate::simulate::shard_rng;

const CHUNK: usize = 256;

/// Maps a label to its operator `T(g)`.
pub trait OperatorFamily: Send + Sync {
    fn dim(&self) -> usize;

    fn operator(&self, label: &[f64]) -> Option<ComplexMatrix>;

    /// `T(g) v`. Families with a cheaper route than materializing `T(g)` override this.
    fn apply(&self, label: &[f64], v: &[C64]) -> Option<Vec<C64>> {
        self.operator(label).map(|t| t.mul_vec(v))
    }
}

/// The representation `D` and the covariance label maps of a tomographic set.
///
/// Ray phases are never modeled: residuals align phases optimally.
pub trait GroupAction: Send + Sync {
    fn identity(&self) -> Vec<f64>;

    /// `D(g)`.
    fn representation(&self, g: &[f64]) -> Option<ComplexMatrix>;

    /// `h'` with `D(g) T(h) ∝ T(h')`.
    fn covariant_label(&self, g: &[f64], h: &[f64]) -> Option<Vec<f64>>;

    /// `h''` with `D(g) T^H(h) ∝ T^H(h'')`.
    fn adjoint_label(&self, g: &[f64], h: &[f64]) -> Option<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameElement {
    pub label: Vec<f64>,
    /// Quadrature weight standing in for the group measure (or 1 for finite groups).
    pub weight: f64,
}

pub struct OperatorFrame {
    name: String,
    elements: Vec<FrameElement>,
    family: Arc<dyn OperatorFamily>,
    group: Option<Arc<dyn GroupAction>>,
    tolerance: f64,
    check_block: Option<usize>,
    k_tilde: OnceLock<f64>,
}

impl fmt::Debug for OperatorFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorFrame")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("elements", &self.elements.len())
            .field("tolerance", &self.tolerance)
            .field("k_tilde", &self.k_tilde.get())
            .finish()
    }
}

/// Default discretization tolerance of exact (finite-group) frames.
pub const EXACT_FRAME_TOL: f64 = 1e-10;

impl OperatorFrame {
    pub fn new(name: impl Into<String>, elements: Vec<FrameElement>, family: Arc<dyn OperatorFamily>) -> Result<Self> {
        for e in &elements {
            if !(e.weight >= 0.0) || !e.weight.is_finite() {
                return Err(TomoError::InvalidParameter(format!("frame weight {} must be finite and >= 0", e.weight)));
            }
        }
        Ok(Self {
            name: name.into(),
            elements,
            family,
            group: None,
            tolerance: EXACT_FRAME_TOL,
            check_block: None,
            k_tilde: OnceLock::new(),
        })
    }

    /// Frame over an explicit list of operators, labelled by index.
    pub fn from_operators(name: impl Into<String>, ops: Vec<ComplexMatrix>, weights: Vec<f64>) -> Result<Self> {
        if ops.len() != weights.len() {
            return Err(TomoError::DimensionMismatch { expected: ops.len(), found: weights.len() });
        }
        let labels = (0..ops.len()).map(|i| vec![i as f64]).collect();
        let family = ExplicitFamily::new(labels, ops)?;
        let elements = family
            .labels
            .iter()
            .zip(weights)
            .map(|(l, w)| FrameElement { label: l.clone(), weight: w })
            .collect();
        Self::new(name, elements, Arc::new(family))
    }

    pub fn with_group(mut self, group: Arc<dyn GroupAction>) -> Self {
        self.group = Some(group);
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    /// Restricts residual checks to the top-left `n x n` block (truncated Fock spaces).
    pub fn with_check_block(mut self, n: usize) -> Self {
        self.check_block = Some(n);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn elements(&self) -> &[FrameElement] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn group(&self) -> Option<&dyn GroupAction> {
        self.group.as_deref()
    }

    pub fn operator(&self, label: &[f64]) -> Result<ComplexMatrix> {
        self.family.operator(label).ok_or(TomoError::UndefinedLabel("an operator"))
    }

    pub fn cached_k_tilde(&self) -> Option<f64> {
        self.k_tilde.get().copied()
    }

    /// Weighted compensated sum over elements of a per-element matrix term.
    fn sum_terms<F>(&self, f: F) -> Result<ComplexMatrix>
    where
        F: Fn(&FrameElement, &ComplexMatrix) -> Option<ComplexMatrix> + Sync,
    {
        if self.elements.is_empty() {
            return Err(TomoError::EmptyFrame);
        }
        let dim = self.dim();
        let partials: Vec<Result<CompensatedMatrixSum>> = self
            .elements
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = CompensatedMatrixSum::new(dim);
                for e in chunk {
                    if e.weight == 0.0 {
                        continue;
                    }
                    let t = self.operator(&e.label)?;
                    let term = f(e, &t).ok_or(TomoError::UndefinedLabel("an operator"))?;
                    acc.add_scaled(&term, c64(e.weight, 0.0));
                }
                Ok(acc)
            })
            .collect();
        let mut total = CompensatedMatrixSum::new(dim);
        for p in partials {
            total.merge(&p?);
        }
        Ok(total.value())
    }

    /// `Σ_g w_g |<φ|T(g)|ψ>|²`, cached on the first call.
    pub fn estimate_k_tilde(&self, phi: &[C64], psi: &[C64]) -> Result<f64> {
        let value = self.k_tilde_sum(phi, psi)?;
        Ok(*self.k_tilde.get_or_init(|| value))
    }

    fn k_tilde_sum(&self, phi: &[C64], psi: &[C64]) -> Result<f64> {
        let dim = self.dim();
        for v in [phi, psi] {
            if v.len() != dim {
                return Err(TomoError::DimensionMismatch { expected: dim, found: v.len() });
            }
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-10 {
                return Err(TomoError::NotNormalized { norm });
            }
        }
        if self.elements.is_empty() {
            return Err(TomoError::EmptyFrame);
        }
        let partials: Vec<Result<CompensatedSum>> = self
            .elements
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = CompensatedSum::default();
                for e in chunk {
                    if e.weight == 0.0 {
                        continue;
                    }
                    let tv = self.family.apply(&e.label, psi).ok_or(TomoError::UndefinedLabel("an operator"))?;
                    let amp: C64 = phi.iter().zip(&tv).map(|(a, b)| a.conj() * b).sum();
                    acc.add(e.weight * amp.norm_sqr());
                }
                Ok(acc)
            })
            .collect();
        let mut total = CompensatedSum::default();
        for p in partials {
            total.merge(&p?);
        }
        Ok(total.value())
    }

    /// Cached `k̃`, computing it from the first basis vector if unset.
    pub fn k_tilde(&self) -> Result<f64> {
        if let Some(k) = self.k_tilde.get() {
            return Ok(*k);
        }
        let mut e0 = vec![C64::default(); self.dim()];
        e0[0] = c64(1.0, 0.0);
        let k = self.estimate_k_tilde(&e0, &e0)?;
        if !(k > 0.0) {
            return Err(TomoError::InvalidParameter(format!("frame '{}' has k̃ = {k}", self.name)));
        }
        Ok(k)
    }

    /// `(max - min) / mean` of `k̃` over `trials` random normalized vector pairs.
    pub fn k_tilde_invariance(&self, trials: usize, seed: u64) -> Result<f64> {
        if trials < 2 {
            return Err(TomoError::InvalidParameter("k̃ invariance needs at least two trials".into()));
        }
        let mut rng = shard_rng(seed, 0);
        let dim = self.dim();
        let mut estimates = Vec::with_capacity(trials);
        for _ in 0..trials {
            let phi = random_unit_vector(&mut rng, dim);
            let psi = random_unit_vector(&mut rng, dim);
            estimates.push(self.k_tilde_sum(&phi, &psi)?);
        }
        let max = estimates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = estimates.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = estimates.iter().sum::<f64>() / trials as f64;
        Ok((max - min) / mean)
    }

    fn block(&self, m: ComplexMatrix) -> ComplexMatrix {
        match self.check_block {
            Some(n) => m.top_left(n),
            None => m,
        }
    }

    fn group_or_err(&self) -> Result<&dyn GroupAction> {
        self.group.as_deref().ok_or(TomoError::UndefinedLabel("a group action"))
    }

    /// `||D(g)T(h) - e^{iθ*} T(h')||_HS` with `h' = covariant_label(g, h)` and
    /// the phase `θ*` chosen to minimize the norm.
    pub fn covariance_residual(&self, g: &[f64], h: &[f64]) -> Result<f64> {
        let group = self.group_or_err()?;
        let d = group.representation(g).ok_or(TomoError::UndefinedLabel("the representation"))?;
        let h2 = group.covariant_label(g, h).ok_or(TomoError::UndefinedLabel("the covariance map"))?;
        let lhs = &d * &self.operator(h)?;
        let rhs = self.operator(&h2)?;
        Ok(phase_aligned_distance(&self.block(lhs), &self.block(rhs)))
    }

    /// Covariance residual of the adjoint family: `D(g)T^H(h)` against `T^H(h'')`.
    pub fn adjoint_covariance_residual(&self, g: &[f64], h: &[f64]) -> Result<f64> {
        let group = self.group_or_err()?;
        let d = group.representation(g).ok_or(TomoError::UndefinedLabel("the representation"))?;
        let h2 = group.adjoint_label(g, h).ok_or(TomoError::UndefinedLabel("the adjoint covariance map"))?;
        let lhs = &d * &self.operator(h)?.adjoint();
        let rhs = self.operator(&h2)?.adjoint();
        Ok(phase_aligned_distance(&self.block(lhs), &self.block(rhs)))
    }

    /// `||(1/k̃) Σ_g w_g T(g) A T^H(g) - Tr[A] I||_HS / dim`.
    pub fn trace_identity_residual(&self, a: &ComplexMatrix) -> Result<f64> {
        self.check_dim(a)?;
        let k = self.k_tilde()?;
        let sum = self.sum_terms(|_, t| Some(&(t * a) * &t.adjoint()))?;
        let target = ComplexMatrix::identity(self.dim()).scale(a.trace());
        let diff = self.block(&sum.scale_real(1.0 / k) - &target);
        Ok(diff.hs_norm() / diff.dim() as f64)
    }

    /// `(1/k̃) Σ_g w_g Tr[A T(g)] T^H(g)`.
    pub fn reconstruct_operator(&self, a: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.check_dim(a)?;
        let k = self.k_tilde()?;
        let sum = self.sum_terms(|_, t| Some(t.adjoint().scale((a * t).trace())))?;
        Ok(sum.scale_real(1.0 / k))
    }

    /// `||(1/k̃) Σ_g w_g Tr[A T(g)] T^H(g) - A||_HS / ||A||_HS`.
    pub fn closure_residual(&self, a: &ComplexMatrix) -> Result<f64> {
        let norm = self.block(a.clone()).hs_norm();
        if norm == 0.0 {
            return Err(TomoError::ZeroNorm);
        }
        let rec = self.reconstruct_operator(a)?;
        Ok(self.block(&rec - a).hs_norm() / norm)
    }

    fn check_dim(&self, a: &ComplexMatrix) -> Result<()> {
        if a.dim() != self.dim() {
            return Err(TomoError::DimensionMismatch { expected: self.dim(), found: a.dim() });
        }
        Ok(())
    }

    /// Materializes every operator into the JSON export form.
    pub fn to_json(&self) -> Result<String> {
        let elements = self
            .elements
            .iter()
            .map(|e| {
                Ok(FrameElementJson { label: e.label.clone(), weight: e.weight, operator: MatrixJson::from(&self.operator(&e.label)?) })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(serde_json::to_string(&elements)?)
    }

    /// Rebuilds a frame from its JSON export. Group actions are code and are not restored.
    pub fn from_json(name: impl Into<String>, s: &str) -> Result<Self> {
        let raw: Vec<FrameElementJson> = serde_json::from_str(s)?;
        let mut labels = Vec::with_capacity(raw.len());
        let mut ops = Vec::with_capacity(raw.len());
        let mut elements = Vec::with_capacity(raw.len());
        for e in raw {
            ops.push(ComplexMatrix::try_from(e.operator)?);
            elements.push(FrameElement { label: e.label.clone(), weight: e.weight });
            labels.push(e.label);
        }
        if ops.is_empty() {
            return Err(TomoError::EmptyFrame);
        }
        let family = ExplicitFamily::new(labels, ops)?;
        Self::new(name, elements, Arc::new(family))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameElementJson {
    label: Vec<f64>,
    weight: f64,
    operator: MatrixJson,
}

/// `min_θ ||a - e^{iθ} b||_HS`, attained at `θ = arg <b, a>`.
pub fn phase_aligned_distance(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    let overlap = hs_inner(b, a).expect("equal dimensions");
    let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { c64(1.0, 0.0) };
    (a - &b.scale(phase)).hs_norm()
}

pub fn random_unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<C64> {
    loop {
        // Gaussian via Box-Muller keeps the direction uniform on the sphere
        let v: Vec<C64> = (0..dim)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen::<f64>();
                let r = (-2.0 * u1.ln()).sqrt();
                C64::from_polar(r, 2.0 * std::f64::consts::PI * u2)
            })
            .collect();
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|z| z / norm).collect();
        }
    }
}

/// Operators stored explicitly and looked up by exact label.
pub struct ExplicitFamily {
    dim: usize,
    labels: Vec<Vec<f64>>,
    index: HashMap<Vec<u64>, usize>,
    ops: Vec<ComplexMatrix>,
}

impl ExplicitFamily {
    pub fn new(labels: Vec<Vec<f64>>, ops: Vec<ComplexMatrix>) -> Result<Self> {
        let dim = ops.first().map(ComplexMatrix::dim).ok_or(TomoError::EmptyFrame)?;
        if let Some(bad) = ops.iter().find(|o| o.dim() != dim) {
            return Err(TomoError::DimensionMismatch { expected: dim, found: bad.dim() });
        }
        let index = labels.iter().enumerate().map(|(i, l)| (label_key(l), i)).collect();
        Ok(Self { dim, labels, index, ops })
    }
}

fn label_key(label: &[f64]) -> Vec<u64> {
    label.iter().map(|x| x.to_bits()).collect()
}

impl OperatorFamily for ExplicitFamily {
    fn dim(&self) -> usize {
        self.dim
    }

    fn operator(&self, label: &[f64]) -> Option<ComplexMatrix> {
        self.index.get(&label_key(label)).map(|&i| self.ops[i].clone())
    }
}

/// The Pauli group `{I, X, Y, Z}` on a qubit, labelled `0..4`.
struct PauliGroup;

fn pauli_index(label: &[f64]) -> Option<usize> {
    match label {
        [x] if *x >= 0.0 && *x < 4.0 && x.fract() == 0.0 => Some(*x as usize),
        _ => None,
    }
}

impl GroupAction for PauliGroup {
    fn identity(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn representation(&self, g: &[f64]) -> Option<ComplexMatrix> {
        pauli_index(g).map(|i| paulis()[i].clone())
    }

    fn covariant_label(&self, g: &[f64], h: &[f64]) -> Option<Vec<f64>> {
        // σ_g σ_h ∝ σ_{g xor h} with the ordering I, X, Y, Z
        Some(vec![(pauli_index(g)? ^ pauli_index(h)?) as f64])
    }

    fn adjoint_label(&self, g: &[f64], h: &[f64]) -> Option<Vec<f64>> {
        self.covariant_label(g, h)
    }
}

/// `{I, X, Y, Z}` with unit weights; `k̃ = [G]/dim = 2`.
pub fn pauli_frame() -> OperatorFrame {
    OperatorFrame::from_operators("pauli", paulis().to_vec(), vec![1.0; 4])
        .expect("Pauli operators share a dimension")
        .with_group(Arc::new(PauliGroup))
}

/// Orthonormal basis from Gram-Schmidt together with its triangular coefficients.
#[derive(Clone, Debug)]
pub struct GramSchmidt {
    pub basis: Vec<ComplexMatrix>,
    /// `basis[k] = Σ_{j<=k} coefficients[k][j] ops[j]`.
    pub coefficients: Vec<Vec<C64>>,
}

/// Largest admissible Gram-matrix condition number.
pub const MAX_GRAM_CONDITION: f64 = 1e8;

/// Orthonormalizes `ops` under the Hilbert-Schmidt inner product.
pub fn gram_schmidt(ops: &[ComplexMatrix]) -> Result<Vec<ComplexMatrix>> {
    Ok(gram_schmidt_with_coefficients(ops)?.basis)
}

pub fn gram_schmidt_with_coefficients(ops: &[ComplexMatrix]) -> Result<GramSchmidt> {
    let dim = ops.first().map(ComplexMatrix::dim).ok_or(TomoError::EmptyFrame)?;
    let n = ops.len();
    let mut basis: Vec<ComplexMatrix> = Vec::with_capacity(n);
    let mut coefficients: Vec<Vec<C64>> = Vec::with_capacity(n);
    // a residual below this fraction of the input norm means cond(Gram) >= MAX_GRAM_CONDITION
    let min_ratio = MAX_GRAM_CONDITION.sqrt().recip();
    for (k, op) in ops.iter().enumerate() {
        if op.dim() != dim {
            return Err(TomoError::DimensionMismatch { expected: dim, found: op.dim() });
        }
        let norm0 = op.hs_norm();
        if norm0 == 0.0 {
            return Err(TomoError::IllConditioned { index: k, condition: f64::INFINITY });
        }
        let mut v = op.clone();
        let mut coeff = vec![C64::default(); n];
        coeff[k] = c64(1.0, 0.0);
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for (j, b) in basis.iter().enumerate() {
                let proj = hs_inner(b, &v)?;
                v = &v - &b.scale(proj);
                for (c, bc) in coeff.iter_mut().zip(&coefficients[j]) {
                    *c -= proj * bc;
                }
            }
        }
        let norm = v.hs_norm();
        if norm < min_ratio * norm0 {
            let ratio = norm / norm0;
            return Err(TomoError::IllConditioned { index: k, condition: if ratio > 0.0 { ratio.powi(-2) } else { f64::INFINITY } });
        }
        basis.push(v.scale_real(1.0 / norm));
        coefficients.push(coeff.into_iter().map(|c| c / norm).collect());
    }
    Ok(GramSchmidt { basis, coefficients })
}

/// `G_ij = (ops_i, ops_j)`.
pub fn gram_matrix(ops: &[ComplexMatrix]) -> Result<ComplexMatrix> {
    let n = ops.len();
    let mut g = ComplexMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] = hs_inner(&ops[i], &ops[j])?;
        }
    }
    Ok(g)
}

/// Condition number of the (Hermitian, positive) Gram matrix.
pub fn gram_condition(ops: &[ComplexMatrix]) -> Result<f64> {
    let g = gram_matrix(ops)?;
    let eig = herm_eig_tol(&g, f64::INFINITY)?;
    let min = eig.eigenvalues.first().copied().unwrap_or(0.0);
    let max = eig.eigenvalues.last().copied().unwrap_or(0.0);
    Ok(if min > 0.0 { max / min } else { f64::INFINITY })
}

/// Orthonormal basis and the dual operators of a linearly independent family.
#[derive(Clone, Debug)]
pub struct DualFrame {
    pub basis: Vec<ComplexMatrix>,
    /// `Tr[duals_i ops_j] = δ_ij`; any `A` in the span equals `Σ_i Tr[ops_i A] duals_i`.
    pub duals: Vec<ComplexMatrix>,
}

/// Dual operators by Gram-Schmidt: with `B_i = Σ_j C_ij ops_j`,
/// `A = Σ_i Tr[B_i A] B_i^H` regroups into `duals_j = Σ_i C_ij B_i^H`.
pub fn dual_frame(ops: &[ComplexMatrix]) -> Result<DualFrame> {
    let gs = gram_schmidt_with_coefficients(ops)?;
    let dim = ops[0].dim();
    let n = ops.len();
    let duals = (0..n)
        .map(|j| {
            let mut acc = ComplexMatrix::zeros(dim);
            for i in j..n {
                acc += &gs.basis[i].adjoint().scale(gs.coefficients[i][j]);
            }
            acc
        })
        .collect();
    Ok(DualFrame { basis: gs.basis, duals })
}

/// Dual operators by inverting the Gram matrix: `duals_j = Σ_k (G^{-1})_{jk} ops_k^H`.
pub fn dual_frame_gram(ops: &[ComplexMatrix]) -> Result<Vec<ComplexMatrix>> {
    let dim = ops.first().map(ComplexMatrix::dim).ok_or(TomoError::EmptyFrame)?;
    let cond = gram_condition(ops)?;
    if cond > MAX_GRAM_CONDITION {
        return Err(TomoError::IllConditioned { index: ops.len() - 1, condition: cond });
    }
    let g = gram_matrix(ops)?;
    let inv = inverse(&g).ok_or(TomoError::IllConditioned { index: ops.len() - 1, condition: cond })?;
    Ok((0..ops.len())
        .map(|j| {
            let mut acc = ComplexMatrix::zeros(dim);
            for (k, op) in ops.iter().enumerate() {
                acc += &op.adjoint().scale(inv[(j, k)]);
            }
            acc
        })
        .collect())
}

/// `max_ij |Tr[duals_i ops_j] - δ_ij|`.
pub fn dual_check(ops: &[ComplexMatrix], duals: &[ComplexMatrix]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (i, r) in duals.iter().enumerate() {
        for (j, op) in ops.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((hs_inner(&r.adjoint(), op)? - c64(target, 0.0)).norm());
        }
    }
    Ok(worst)
}
