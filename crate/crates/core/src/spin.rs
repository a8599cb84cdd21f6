//! Spin-S tomography.
//!
//! Spin operators in the `S_z` eigenbasis (m descending from `S` to `-S`),
//! rotations `R(n, ψ) = exp(-iψ S·n)`, the sphere pattern function
//! `K_S(n, m)`, and reconstructions from sphere quadrature, Monte Carlo
//! sampling, and finite rotation or projector families with dual operators.

use std::f64::consts::PI;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::frames::{dual_frame, dual_check, gram_condition, FrameElement, GroupAction, OperatorFamily, OperatorFrame};
use crate::numerics::{c64, gauss_legendre, herm_eig, ComplexMatrix, DensityMatrix, HermitianEigensystem, C64};
use crate::simulate::{
    bootstrap_stderr, close_checkpoints, merge_shards, mc_accumulate, run_sharded, sample_categorical, sample_sphere, shard_rng,
    MeasurementRecord, McAccumulator, ReconstructionResult, SchemeId, BOOTSTRAP_RESAMPLES, DEFAULT_SHARDS,
};

/// A point on the unit sphere, `n = (cos φ sin θ, sin φ sin θ, cos θ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub theta: f64,
    pub phi: f64,
}

impl Direction {
    pub fn new(theta: f64, phi: f64) -> Self {
        Self { theta, phi }
    }

    pub fn z() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn x() -> Self {
        Self::new(PI / 2.0, 0.0)
    }

    pub fn y() -> Self {
        Self::new(PI / 2.0, PI / 2.0)
    }

    /// Direction of a nonzero vector; the azimuth is wrapped into `[0, 2π)`.
    pub fn from_vector(v: [f64; 3]) -> Option<Self> {
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(r > 0.0) || !r.is_finite() {
            return None;
        }
        let theta = (v[2] / r).clamp(-1.0, 1.0).acos();
        let mut phi = v[1].atan2(v[0]);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        if phi >= 2.0 * PI {
            phi = 0.0;
        }
        Some(Self::new(theta, phi))
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [cp * st, sp * st, ct]
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.phi.is_finite()
    }
}

/// Spin-S operators with `ħ = 1`.
#[derive(Clone, Debug)]
pub struct SpinSystem {
    two_s: usize,
    pub sx: ComplexMatrix,
    pub sy: ComplexMatrix,
    pub sz: ComplexMatrix,
    sy_eig: HermitianEigensystem,
}

/// Ladder-operator construction in the `S_z` eigenbasis, `m` descending.
pub fn spin_operators(two_s: usize) -> SpinSystem {
    let dim = two_s + 1;
    let s = two_s as f64 / 2.0;
    let m = |k: usize| s - k as f64;
    // <m+1|S+|m> sits at (k-1, k)
    let mut splus = ComplexMatrix::zeros(dim);
    for k in 1..dim {
        let mk = m(k);
        splus[(k - 1, k)] = c64((s * (s + 1.0) - mk * (mk + 1.0)).sqrt(), 0.0);
    }
    let sminus = splus.adjoint();
    let sx = (&splus + &sminus).scale_real(0.5);
    let sy = (&splus - &sminus).scale(c64(0.0, -0.5));
    let sz = ComplexMatrix::from_real_diagonal(&(0..dim).map(m).collect::<Vec<_>>());
    let sy_eig = herm_eig(&sy).expect("S_y is Hermitian");
    SpinSystem { two_s, sx, sy, sz, sy_eig }
}

impl SpinSystem {
    pub fn new(two_s: usize) -> Self {
        spin_operators(two_s)
    }

    pub fn two_s(&self) -> usize {
        self.two_s
    }

    pub fn spin(&self) -> f64 {
        self.two_s as f64 / 2.0
    }

    pub fn dim(&self) -> usize {
        self.two_s + 1
    }

    /// `m` for basis index `k`.
    pub fn m_value(&self, k: usize) -> f64 {
        self.spin() - k as f64
    }

    pub fn m_values(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.m_value(k)).collect()
    }

    /// Basis index of the half-integer `m`.
    pub fn m_index(&self, m: f64) -> Result<usize> {
        let t = self.spin() - m;
        let k = t.round();
        if !m.is_finite() || (t - k).abs() > 1e-9 || k < 0.0 || k > self.two_s as f64 {
            return Err(TomoError::InvalidParameter(format!("m = {m} is not in {{-S..S}} for S = {}", self.spin())));
        }
        Ok(k as usize)
    }

    /// `S·n`.
    pub fn projection(&self, n: Direction) -> ComplexMatrix {
        let [x, y, z] = n.unit_vector();
        let mut out = self.sx.scale_real(x);
        out += &self.sy.scale_real(y);
        out += &self.sz.scale_real(z);
        out
    }

    /// Unitary whose column `k` is the `S·n` eigenvector with eigenvalue `m_k`:
    /// `exp(-iφS_z) exp(-iθS_y)`.
    pub fn eigenbasis(&self, n: Direction) -> ComplexMatrix {
        let ry = self.sy_eig.map(|l| C64::from_polar(1.0, -n.theta * l));
        let mut u = ry;
        for i in 0..self.dim() {
            let phase = C64::from_polar(1.0, -n.phi * self.m_value(i));
            for j in 0..self.dim() {
                u[(i, j)] *= phase;
            }
        }
        u
    }

    /// `|n, m_k>` for every `k`.
    pub fn eigenvector(&self, n: Direction, k: usize) -> Vec<C64> {
        let u = self.eigenbasis(n);
        (0..self.dim()).map(|i| u[(i, k)]).collect()
    }

    /// `Σ_k d_k |n, m_k><n, m_k|`.
    fn diagonal_in(&self, u: &ComplexMatrix, d: &[C64]) -> ComplexMatrix {
        let dim = self.dim();
        ComplexMatrix::from_fn(dim, |i, j| (0..dim).map(|k| u[(i, k)] * d[k] * u[(j, k)].conj()).sum())
    }

    /// `R(n, ψ) = exp(-iψ S·n)`.
    pub fn rotation(&self, n: Direction, psi: f64) -> ComplexMatrix {
        let u = self.eigenbasis(n);
        let d: Vec<C64> = (0..self.dim()).map(|k| C64::from_polar(1.0, -psi * self.m_value(k))).collect();
        self.diagonal_in(&u, &d)
    }

    /// `c_q` of the sphere pattern function.
    pub fn pattern_coefficient(&self, q: i64) -> f64 {
        let d = self.dim() as f64;
        match q {
            0 => d / (4.0 * PI),
            1 | -1 => -d / (8.0 * PI),
            _ => 0.0,
        }
    }

    /// Diagonal of `Σ_m p_m K_S(n, m)` in the `S·n` eigenbasis.
    fn pattern_diagonal(&self, weights: &[f64]) -> Vec<C64> {
        let dim = self.dim();
        (0..dim)
            .map(|k| {
                let mut s = self.pattern_coefficient(0) * weights[k];
                if k > 0 {
                    s += self.pattern_coefficient(1) * weights[k - 1];
                }
                if k + 1 < dim {
                    s += self.pattern_coefficient(1) * weights[k + 1];
                }
                c64(s, 0.0)
            })
            .collect()
    }

    /// `K_S(n, m) = Σ_{m'} c_{m'-m} |n, m'><n, m'|`.
    pub fn spin_pattern(&self, n: Direction, m: f64) -> Result<ComplexMatrix> {
        let k = self.m_index(m)?;
        let mut w = vec![0.0; self.dim()];
        w[k] = 1.0;
        Ok(self.pattern_sum(n, &w))
    }

    /// `Σ_m p_m K_S(n, m)` for outcome weights ordered like [`SpinSystem::m_values`].
    pub fn pattern_sum(&self, n: Direction, weights: &[f64]) -> ComplexMatrix {
        let u = self.eigenbasis(n);
        self.diagonal_in(&u, &self.pattern_diagonal(weights))
    }

    fn check_state(&self, rho: &DensityMatrix) -> Result<()> {
        if rho.dim() != self.dim() {
            return Err(TomoError::DimensionMismatch { expected: self.dim(), found: rho.dim() });
        }
        Ok(())
    }

    /// `<n, m|ρ|n, m>`.
    pub fn spin_probability(&self, rho: &DensityMatrix, n: Direction, m: f64) -> Result<f64> {
        let k = self.m_index(m)?;
        Ok(self.spin_probabilities(rho, n)?[k])
    }

    /// Outcome distribution of `S·n`, ordered like [`SpinSystem::m_values`].
    pub fn spin_probabilities(&self, rho: &DensityMatrix, n: Direction) -> Result<Vec<f64>> {
        self.check_state(rho)?;
        Ok(probabilities_in(rho.matrix(), &self.eigenbasis(n)))
    }
}

fn probabilities_in(rho: &ComplexMatrix, u: &ComplexMatrix) -> Vec<f64> {
    let dim = u.dim();
    (0..dim)
        .map(|k| {
            let v: Vec<C64> = (0..dim).map(|i| u[(i, k)]).collect();
            rho.sandwich(&v, &v).re
        })
        .collect()
}

/// Product Haar quadrature: sphere nodes (Gauss-Legendre in `cos θ` times a
/// uniform `φ` rule, weights summing to `4π`) and `ψ` nodes with weights
/// `sin²(ψ/2)/(4π²)` (summing to `1/(4π)`).
#[derive(Clone, Debug, PartialEq)]
pub struct SpinFrame {
    pub directions: Vec<(Direction, f64)>,
    pub psi_nodes: Vec<(f64, f64)>,
}

impl SpinFrame {
    /// `polar` Gauss-Legendre nodes, `azimuthal` uniform nodes, `psi` midpoint nodes.
    pub fn product(polar: usize, azimuthal: usize, psi: usize) -> Result<Self> {
        if polar == 0 || azimuthal == 0 || psi == 0 {
            return Err(TomoError::InvalidParameter("spin quadrature orders must be positive".into()));
        }
        let (x, w) = gauss_legendre(polar);
        let dphi = 2.0 * PI / azimuthal as f64;
        let mut directions = Vec::with_capacity(polar * azimuthal);
        for (xi, wi) in x.iter().zip(&w) {
            let theta = xi.clamp(-1.0, 1.0).acos();
            for j in 0..azimuthal {
                directions.push((Direction::new(theta, j as f64 * dphi), wi * dphi));
            }
        }
        let dpsi = 2.0 * PI / psi as f64;
        let psi_nodes = (0..psi)
            .map(|j| {
                let t = (j as f64 + 0.5) * dpsi;
                (t, dpsi * (t / 2.0).sin().powi(2) / (4.0 * PI * PI))
            })
            .collect();
        Ok(Self { directions, psi_nodes })
    }

    /// Orders that make every spin-S frame sum exact.
    pub fn for_spin(two_s: usize) -> Self {
        Self::product(two_s + 2, 2 * two_s + 2, two_s + 3).expect("positive orders")
    }

    pub fn direction_weight_sum(&self) -> f64 {
        self.directions.iter().map(|(_, w)| w).sum()
    }

    pub fn psi_weight_sum(&self) -> f64 {
        self.psi_nodes.iter().map(|(_, w)| w).sum()
    }

    /// `Σ_nodes w Σ_m p(n, m) K_S(n, m)` with `p` from `probabilities(node)`.
    pub fn reconstruct_with<F>(&self, sys: &SpinSystem, mut probabilities: F) -> Result<ComplexMatrix>
    where
        F: FnMut(usize, Direction) -> Result<Vec<f64>>,
    {
        let mut acc = crate::numerics::CompensatedMatrixSum::new(sys.dim());
        for (i, (n, w)) in self.directions.iter().enumerate() {
            let p = probabilities(i, *n)?;
            if p.len() != sys.dim() {
                return Err(TomoError::DimensionMismatch { expected: sys.dim(), found: p.len() });
            }
            acc.add_scaled(&sys.pattern_sum(*n, &p), c64(*w, 0.0));
        }
        Ok(acc.value())
    }
}

/// `ρ̂ = Σ_nodes w Σ_m p(n, m) K_S(n, m)` with exact probabilities.
pub fn reconstruct_spin_quadrature(rho_true: &DensityMatrix, sys: &SpinSystem, frame: &SpinFrame) -> Result<ReconstructionResult> {
    sys.check_state(rho_true)?;
    let est = frame.reconstruct_with(sys, |_, n| sys.spin_probabilities(rho_true, n))?;
    ReconstructionResult::exact(est)
}

/// Draws `(n, m)` pairs: `n` uniform on the sphere, `m` from `p(n, m)`.
fn draw_spin_shot(sys: &SpinSystem, rho: &DensityMatrix, rng: &mut impl Rng) -> Result<(Direction, ComplexMatrix, usize)> {
    let n = sample_sphere(rng);
    let u = sys.eigenbasis(n);
    let k = sample_categorical(&probabilities_in(rho.matrix(), &u), rng)?;
    Ok((n, u, k))
}

fn mc_term(sys: &SpinSystem, u: &ComplexMatrix, k: usize) -> ComplexMatrix {
    let mut w = vec![0.0; sys.dim()];
    w[k] = 4.0 * PI;
    sys.diagonal_in(u, &sys.pattern_diagonal(&w))
}

/// Monte Carlo estimate of `ρ` from `shots` single-outcome measurements along
/// uniformly random axes; every shot contributes `4π K_S(n, m)`.
pub fn reconstruct_spin_mc(rho_true: &DensityMatrix, sys: &SpinSystem, shots: u64, seed: u64) -> Result<ReconstructionResult> {
    reconstruct_spin_mc_sharded(rho_true, sys, shots, seed, DEFAULT_SHARDS)
}

pub fn reconstruct_spin_mc_sharded(
    rho_true: &DensityMatrix,
    sys: &SpinSystem,
    shots: u64,
    seed: u64,
    shards: usize,
) -> Result<ReconstructionResult> {
    sys.check_state(rho_true)?;
    if shots == 0 {
        return Err(TomoError::InvalidParameter("shots must be at least 1".into()));
    }
    let parts: Vec<Result<Option<_>>> = run_sharded(seed, shots, shards, |rng, n, _| {
        if n == 0 {
            return Ok(None);
        }
        let mut terms = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let (_, u, k) = draw_spin_shot(sys, rho_true, rng)?;
            terms.push(mc_term(sys, &u, k));
        }
        mc_accumulate(terms).map(Some)
    });
    let parts: Vec<_> = parts.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
    let mut merged = merge_shards(&parts)?;
    close_checkpoints(&mut merged.checkpoints, &merged.accumulator);
    let acc = &merged.accumulator;
    let units: Vec<(f64, ComplexMatrix)> = parts.iter().map(|p| (p.accumulator.count() as f64, p.accumulator.mean())).collect();
    let fid_se = bootstrap_stderr(&units, BOOTSTRAP_RESAMPLES, seed, |m| {
        DensityMatrix::from_estimate(m).ok().and_then(|d| crate::numerics::fidelity(rho_true, &d).ok())
    });
    let mut result = ReconstructionResult::sampled(acc.mean(), acc.count(), acc.stderr())?.with_trace(rho_true, &merged.checkpoints)?;
    result.fidelity_stderr = fid_se;
    Ok(result)
}

/// Simulated sphere measurements, one record per shot, in shard order.
pub fn simulate_spin_sphere_records(rho: &DensityMatrix, sys: &SpinSystem, shots: u64, seed: u64, shards: usize) -> Result<Vec<MeasurementRecord>> {
    sys.check_state(rho)?;
    let parts: Vec<Result<Vec<MeasurementRecord>>> = run_sharded(seed, shots, shards, |rng, n, _| {
        (0..n)
            .map(|_| {
                let (dir, _, k) = draw_spin_shot(sys, rho, rng)?;
                Ok(MeasurementRecord { scheme: SchemeId::SpinSphere, setting: vec![dir.theta, dir.phi], outcome: sys.m_value(k), count: 1 })
            })
            .collect()
    });
    let mut out = Vec::with_capacity(shots as usize);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Sphere estimate from records, each shot contributing `4π K_S(n, m)`, in
/// record order. Returns the accumulator and its power-of-two snapshots.
pub fn spin_sphere_from_records(sys: &SpinSystem, records: &[MeasurementRecord]) -> Result<(McAccumulator, Vec<(u64, ComplexMatrix)>)> {
    let mut acc = McAccumulator::new(sys.dim());
    let mut checkpoints = Vec::new();
    for r in records {
        let (theta, phi) = match r.setting.as_slice() {
            [t, p] if t.is_finite() && p.is_finite() => (*t, *p),
            _ => return Err(TomoError::InvalidParameter("spin-sphere record needs finite (theta, phi)".into())),
        };
        let k = sys.m_index(r.outcome)?;
        let term = mc_term(sys, &sys.eigenbasis(Direction::new(theta, phi)), k);
        for _ in 0..r.count {
            acc.push(&term)?;
            if acc.count().is_power_of_two() {
                checkpoints.push((acc.count(), acc.mean()));
            }
        }
    }
    if acc.count() == 0 {
        return Err(TomoError::InvalidParameter("records carry zero total counts".into()));
    }
    close_checkpoints(&mut checkpoints, &acc);
    Ok((acc, checkpoints))
}

/// Operator family of a finite spin frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FiniteMode {
    /// `R(n_i, ψ_i)`, kernel `e^{-iψ_i m} ℛ_i`.
    Rotations,
    /// `|n_i, S><n_i, S|`, kernel `δ_{m,S} ℛ_i`; `ψ_i` is ignored.
    Projectors,
}

impl fmt::Display for FiniteMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FiniteMode::Rotations => "rotations",
            FiniteMode::Projectors => "projectors",
        })
    }
}

impl FromStr for FiniteMode {
    type Err = TomoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotations" => Ok(FiniteMode::Rotations),
            "projectors" => Ok(FiniteMode::Projectors),
            other => Err(TomoError::InvalidParameter(format!("unknown finite-frame mode '{other}'"))),
        }
    }
}

/// `(2S+1)²` labelled operators with their dual operators.
#[derive(Clone, Debug)]
pub struct FiniteSpinFrame {
    labels: Vec<(Direction, f64)>,
    mode: FiniteMode,
    ops: Vec<ComplexMatrix>,
    duals: Vec<ComplexMatrix>,
}

impl FiniteSpinFrame {
    pub fn new(sys: &SpinSystem, labels: Vec<(Direction, f64)>, mode: FiniteMode) -> Result<Self> {
        let need = sys.dim() * sys.dim();
        if labels.len() != need {
            return Err(TomoError::DimensionMismatch { expected: need, found: labels.len() });
        }
        if labels.iter().any(|(n, psi)| !n.is_finite() || !psi.is_finite()) {
            return Err(TomoError::InvalidParameter("finite-frame labels must be finite".into()));
        }
        let ops: Vec<ComplexMatrix> = labels
            .iter()
            .map(|&(n, psi)| match mode {
                FiniteMode::Rotations => sys.rotation(n, psi),
                FiniteMode::Projectors => ComplexMatrix::projector(&sys.eigenvector(n, 0)),
            })
            .collect();
        let duals = match dual_frame(&ops) {
            Ok(df) => df.duals,
            Err(TomoError::IllConditioned { index, .. }) => {
                return Err(TomoError::IllConditioned { index, condition: gram_condition(&ops)? });
            }
            Err(e) => return Err(e),
        };
        Ok(Self { labels, mode, ops, duals })
    }

    pub fn labels(&self) -> &[(Direction, f64)] {
        &self.labels
    }

    pub fn mode(&self) -> FiniteMode {
        self.mode
    }

    pub fn operators(&self) -> &[ComplexMatrix] {
        &self.ops
    }

    pub fn duals(&self) -> &[ComplexMatrix] {
        &self.duals
    }

    /// `max_ij |Tr[ℛ_i op_j] - δ_ij|`.
    pub fn dual_residual(&self) -> Result<f64> {
        dual_check(&self.ops, &self.duals)
    }

    /// `𝒦_S(i, m)`.
    pub fn kernel(&self, sys: &SpinSystem, i: usize, m: f64) -> Result<ComplexMatrix> {
        let k = sys.m_index(m)?;
        let r = self.duals.get(i).ok_or_else(|| TomoError::InvalidParameter(format!("label index {i} out of range")))?;
        Ok(match self.mode {
            FiniteMode::Rotations => r.scale(C64::from_polar(1.0, -self.labels[i].1 * m)),
            FiniteMode::Projectors if k == 0 => r.clone(),
            FiniteMode::Projectors => ComplexMatrix::zeros(sys.dim()),
        })
    }

    /// `Σ_i Σ_m p(n_i, m) 𝒦_S(i, m)` for per-label outcome distributions.
    pub fn reconstruct(&self, sys: &SpinSystem, probabilities: &[Vec<f64>]) -> Result<ComplexMatrix> {
        if probabilities.len() != self.labels.len() {
            return Err(TomoError::DimensionMismatch { expected: self.labels.len(), found: probabilities.len() });
        }
        let mut acc = crate::numerics::CompensatedMatrixSum::new(sys.dim());
        for (i, p) in probabilities.iter().enumerate() {
            if p.len() != sys.dim() {
                return Err(TomoError::DimensionMismatch { expected: sys.dim(), found: p.len() });
            }
            let coeff: C64 = match self.mode {
                FiniteMode::Rotations => p
                    .iter()
                    .enumerate()
                    .map(|(k, pk)| C64::from_polar(*pk, -self.labels[i].1 * sys.m_value(k)))
                    .sum(),
                FiniteMode::Projectors => c64(p[0], 0.0),
            };
            acc.add_scaled(&self.duals[i], coeff);
        }
        Ok(acc.value())
    }

    /// Exact outcome distributions of `ρ` at every label.
    pub fn probabilities(&self, sys: &SpinSystem, rho: &DensityMatrix) -> Result<Vec<Vec<f64>>> {
        self.labels.iter().map(|(n, _)| sys.spin_probabilities(rho, *n)).collect()
    }

    /// Simulated counts: `shots_per_label` outcomes at every label, label `i`
    /// drawing from RNG stream `i`. Records list every `(label, m)` pair, zeros included.
    pub fn simulate_records(&self, sys: &SpinSystem, rho: &DensityMatrix, shots_per_label: u64, seed: u64) -> Result<Vec<MeasurementRecord>> {
        let probs = self.probabilities(sys, rho)?;
        let mut out = Vec::with_capacity(self.labels.len() * sys.dim());
        for (i, ((n, psi), p)) in self.labels.iter().zip(&probs).enumerate() {
            let mut rng = shard_rng(seed, i);
            let mut counts = vec![0u64; sys.dim()];
            for _ in 0..shots_per_label {
                counts[sample_categorical(p, &mut rng)?] += 1;
            }
            for (k, c) in counts.into_iter().enumerate() {
                out.push(MeasurementRecord {
                    scheme: SchemeId::SpinFinite,
                    setting: vec![n.theta, n.phi, *psi],
                    outcome: sys.m_value(k),
                    count: c,
                });
            }
        }
        Ok(out)
    }
}

/// Reconstruction through a finite frame with exact probabilities.
pub fn reconstruct_spin_finite(
    rho_true: &DensityMatrix,
    sys: &SpinSystem,
    labels: Vec<(Direction, f64)>,
    mode: FiniteMode,
) -> Result<ReconstructionResult> {
    sys.check_state(rho_true)?;
    let frame = FiniteSpinFrame::new(sys, labels, mode)?;
    let probs = frame.probabilities(sys, rho_true)?;
    ReconstructionResult::exact(frame.reconstruct(sys, &probs)?)
}

/// Finite-frame labels `(n_i, ψ_i)` with per-label outcome counts.
pub type LabelCounts = (Vec<(Direction, f64)>, Vec<Vec<u64>>);

/// Labels in first-appearance order and their outcome counts, `counts[i][k]`
/// for `m = S - k`.
pub fn finite_counts(sys: &SpinSystem, records: &[MeasurementRecord]) -> Result<LabelCounts> {
    let mut index: HashMap<[u64; 3], usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut counts: Vec<Vec<u64>> = Vec::new();
    for r in records {
        if r.scheme != SchemeId::SpinFinite {
            return Err(TomoError::InvalidParameter(format!("expected spin-finite records, got {}", r.scheme.as_str())));
        }
        let (theta, phi, psi) = match r.setting.as_slice() {
            [t, p, s] if t.is_finite() && p.is_finite() && s.is_finite() => (*t, *p, *s),
            _ => return Err(TomoError::InvalidParameter("spin-finite record needs finite (theta, phi, psi)".into())),
        };
        let k = sys.m_index(r.outcome)?;
        let slot = *index.entry([theta.to_bits(), phi.to_bits(), psi.to_bits()]).or_insert_with(|| {
            labels.push((Direction::new(theta, phi), psi));
            counts.push(vec![0; sys.dim()]);
            labels.len() - 1
        });
        counts[slot][k] += r.count;
    }
    if let Some(i) = counts.iter().position(|c| c.iter().sum::<u64>() == 0) {
        return Err(TomoError::InvalidParameter(format!("label {i} has zero total counts")));
    }
    Ok((labels, counts))
}

/// Finite-frame reconstruction from observed counts; frequencies replace
/// the exact probabilities. Labels are taken from the records.
pub fn reconstruct_spin_finite_records(sys: &SpinSystem, mode: FiniteMode, records: &[MeasurementRecord]) -> Result<ReconstructionResult> {
    let (labels, counts) = finite_counts(sys, records)?;
    let frame = FiniteSpinFrame::new(sys, labels, mode)?;
    let freqs: Vec<Vec<f64>> = counts
        .iter()
        .map(|c| {
            let n = c.iter().sum::<u64>() as f64;
            c.iter().map(|&x| x as f64 / n).collect()
        })
        .collect();
    let estimate = frame.reconstruct(sys, &freqs)?;
    let dim = sys.dim();
    // per-label multinomial variance of the coefficient multiplying the dual
    let mut var = vec![vec![0.0; dim]; dim];
    for (i, (f, c)) in freqs.iter().zip(&counts).enumerate() {
        let n = c.iter().sum::<u64>() as f64;
        let v = match mode {
            FiniteMode::Rotations => {
                let mean: C64 = f.iter().enumerate().map(|(k, p)| C64::from_polar(*p, -frame.labels[i].1 * sys.m_value(k))).sum();
                (1.0 - mean.norm_sqr()).max(0.0) / n
            }
            FiniteMode::Projectors => f[0] * (1.0 - f[0]) / n,
        };
        let r = &frame.duals[i];
        for (a, row) in var.iter_mut().enumerate() {
            for (b, x) in row.iter_mut().enumerate() {
                *x += v * r[(a, b)].norm_sqr();
            }
        }
    }
    let stderr = var.into_iter().map(|row| row.into_iter().map(f64::sqrt).collect()).collect();
    let shots = counts.iter().flatten().sum();
    ReconstructionResult::sampled(estimate, shots, stderr)
}

/// Gram condition number above which random labels are redrawn.
pub const RANDOM_LABEL_MAX_CONDITION: f64 = 1e6;

/// `(2S+1)²` random labels: uniform directions, `ψ` uniform in `(0.2, 2π - 0.2)`,
/// redrawn until the induced family is well conditioned.
pub fn random_finite_labels(sys: &SpinSystem, mode: FiniteMode, seed: u64) -> Result<Vec<(Direction, f64)>> {
    let mut rng = shard_rng(seed, 0);
    let count = sys.dim() * sys.dim();
    let mut last = f64::INFINITY;
    for _ in 0..1000 {
        let labels: Vec<(Direction, f64)> =
            (0..count).map(|_| (sample_sphere(&mut rng), rng.gen_range(0.2..2.0 * PI - 0.2))).collect();
        let ops: Vec<ComplexMatrix> = labels
            .iter()
            .map(|&(n, psi)| match mode {
                FiniteMode::Rotations => sys.rotation(n, psi),
                FiniteMode::Projectors => ComplexMatrix::projector(&sys.eigenvector(n, 0)),
            })
            .collect();
        last = gram_condition(&ops)?;
        if last <= RANDOM_LABEL_MAX_CONDITION {
            return Ok(labels);
        }
    }
    Err(TomoError::IllConditioned { index: count - 1, condition: last })
}

/// SU(2) element `(n, ψ)` as the unit quaternion `(cos ψ/2, sin ψ/2 n)`.
fn quaternion(label: &[f64]) -> Option<(f64, [f64; 3])> {
    match label {
        [theta, phi, psi] if theta.is_finite() && phi.is_finite() && psi.is_finite() => {
            let n = Direction::new(*theta, *phi).unit_vector();
            let (s, c) = (psi / 2.0).sin_cos();
            Some((c, [s * n[0], s * n[1], s * n[2]]))
        }
        _ => None,
    }
}

fn from_quaternion(a: f64, v: [f64; 3]) -> Vec<f64> {
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let psi = 2.0 * norm.atan2(a);
    let n = Direction::from_vector(v).unwrap_or_else(Direction::z);
    vec![n.theta, n.phi, psi]
}

/// Label of `R(g) R(h)`, labels `[θ, φ, ψ]` with `ψ` in `[0, 2π]`.
pub fn su2_compose(g: &[f64], h: &[f64]) -> Option<Vec<f64>> {
    let (a1, v1) = quaternion(g)?;
    let (a2, v2) = quaternion(h)?;
    let dot = v1[0] * v2[0] + v1[1] * v2[1] + v1[2] * v2[2];
    let cross = [v1[1] * v2[2] - v1[2] * v2[1], v1[2] * v2[0] - v1[0] * v2[2], v1[0] * v2[1] - v1[1] * v2[0]];
    let v = [0, 1, 2].map(|i| a1 * v2[i] + a2 * v1[i] + cross[i]);
    Some(from_quaternion(a1 * a2 - dot, v))
}

/// Label of `R(g)^{-1}`.
pub fn su2_inverse(g: &[f64]) -> Option<Vec<f64>> {
    let (a, v) = quaternion(g)?;
    Some(from_quaternion(a, v.map(|x| -x)))
}

struct SpinRotationFamily {
    sys: Arc<SpinSystem>,
}

impl OperatorFamily for SpinRotationFamily {
    fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn operator(&self, label: &[f64]) -> Option<ComplexMatrix> {
        match label {
            [theta, phi, psi] if theta.is_finite() && phi.is_finite() && psi.is_finite() => {
                Some(self.sys.rotation(Direction::new(*theta, *phi), *psi))
            }
            _ => None,
        }
    }
}

/// `D = T`: the rotations act on themselves by composition.
struct Su2Action {
    sys: Arc<SpinSystem>,
}

impl GroupAction for Su2Action {
    fn identity(&self) -> Vec<f64> {
        vec![0.0, 0.0, 0.0]
    }

    fn representation(&self, g: &[f64]) -> Option<ComplexMatrix> {
        SpinRotationFamily { sys: self.sys.clone() }.operator(g)
    }

    fn covariant_label(&self, g: &[f64], h: &[f64]) -> Option<Vec<f64>> {
        su2_compose(g, h)
    }

    fn adjoint_label(&self, g: &[f64], h: &[f64]) -> Option<Vec<f64>> {
        // R(g) R(h)^H = R(g h^{-1}) = R(h g^{-1})^H
        su2_compose(h, &su2_inverse(g)?)
    }
}

/// Declared tolerance of the Haar quadrature frame at [`SpinFrame::for_spin`] orders.
pub const HAAR_FRAME_TOL: f64 = 1e-10;

/// The rotation frame `{R(n, ψ)}` with Haar quadrature weights.
pub fn haar_frame(sys: &SpinSystem, frame: &SpinFrame) -> Result<OperatorFrame> {
    let sys = Arc::new(sys.clone());
    let mut elements = Vec::with_capacity(frame.directions.len() * frame.psi_nodes.len());
    for (n, wn) in &frame.directions {
        for (psi, wpsi) in &frame.psi_nodes {
            elements.push(FrameElement { label: vec![n.theta, n.phi, *psi], weight: wn * wpsi });
        }
    }
    Ok(OperatorFrame::new(format!("spin-haar-2s{}", sys.two_s()), elements, Arc::new(SpinRotationFamily { sys: sys.clone() }))?
        .with_group(Arc::new(Su2Action { sys }))
        .with_tolerance(HAAR_FRAME_TOL))
}
