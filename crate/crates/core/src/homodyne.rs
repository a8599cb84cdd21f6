//! Homodyne tomography.
//!
//! Quadrature densities `p(φ, x)` from oscillator wavefunctions, the
//! cutoff-regularized kernel `𝖪(φ, x)`, and reconstruction by `(φ, x)`
//! quadrature or by sampling.
//! The displacement frame `{D(α)}` (`k̃ = π`) the kernel derives from is also
//! built here.
//!
//! Phase convention: `X_φ = e^{iφn̂} X_0 e^{-iφn̂}`, so
//! `p(φ, x) = Σ_{nm} ρ_nm e^{-i(n-m)φ} ψ_n(x) ψ_m(x)` is the distribution of `X_φ`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use log::warn;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Result, TomoError};
use crate::frames::{FrameElement, GroupAction, OperatorFamily, OperatorFrame};
use crate::numerics::{c64, gauss_legendre, herm_eig, ComplexMatrix, DensityMatrix, C64};
use crate::oscillator::{displacement_block, DiskLattice, FockSpace};
use crate::simulate::{
    finish_sharded, run_sharded, InverseCdf, MeasurementRecord, Mode, ReconstructionResult, SampledEstimate, SchemeId,
    DEFAULT_SHARDS,
};

/// `ψ_0(x), …, ψ_{count-1}(x)`, the `X_0` eigenfunctions
/// `(2/π)^{1/4} (2ⁿ n!)^{-1/2} H_n(√2 x) e^{-x²}`.
pub fn quad_wavefunctions(count: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    // normalized Hermite functions h_n(ξ) at ξ = √2 x, rescaled by 2^{1/4}
    let xi = std::f64::consts::SQRT_2 * x;
    let scale = 2f64.powf(0.25);
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25) * (-0.5 * xi * xi).exp();
    out.push(scale * cur);
    for n in 0..count - 1 {
        let nf = n as f64;
        let next = (2.0 / (nf + 1.0)).sqrt() * xi * cur - (nf / (nf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        out.push(scale * cur);
    }
    out
}

pub fn quad_wavefunction(n: usize, x: f64) -> f64 {
    quad_wavefunctions(n + 1, x)[n]
}

fn pdf_from_wavefunctions(rho: &ComplexMatrix, psi: &[f64], phi: f64) -> f64 {
    let u: Vec<C64> = psi.iter().enumerate().map(|(m, p)| C64::from_polar(*p, m as f64 * phi)).collect();
    rho.sandwich(&u, &u).re
}

/// Density of `X_φ` at `x`.
pub fn homodyne_pdf(rho: &DensityMatrix, phi: f64, x: f64) -> f64 {
    pdf_from_wavefunctions(rho.matrix(), &quad_wavefunctions(rho.dim(), x), phi)
}

/// `(1/π) ∫_{-K}^{K} dk (|k|/4) e^{ikδ}` in closed form.
pub fn kernel_profile(delta: f64, k_max: f64) -> f64 {
    let u = k_max * delta;
    if u.abs() < 1e-2 {
        let u2 = u * u;
        return k_max * k_max / (2.0 * PI) * (0.5 - u2 / 8.0 + u2 * u2 / 144.0);
    }
    (k_max * u.sin() / delta + (u.cos() - 1.0) / (delta * delta)) / (2.0 * PI)
}

/// Kernel `𝖪(φ, x) = (1/π) ∫_{-K}^{K} dk (|k|/4) e^{ik(x - X_φ)}` on a Fock space.
///
/// `e^{-ikX_φ} = D(-ik e^{iφ}/2)`, so the matrix elements follow from the
/// closed-form displacement blocks and carry no truncation artifacts:
/// `𝖪(φ, x) = H + H^H` with `H = (1/(4π)) ∫_0^K dk k e^{ikx} D(-ik e^{iφ}/2)`,
/// integrated by Gauss-Legendre in `k`. Rotating by `φ` multiplies entry
/// `(a, b)` by `e^{iφ(a-b)}`.
#[derive(Clone, Debug)]
pub struct HomodyneKernel {
    dim: usize,
    k_max: f64,
    /// `(k_q, w_q k_q / (4π), D(-ik_q/2))`.
    nodes: Vec<(f64, f64, ComplexMatrix)>,
}

impl HomodyneKernel {
    /// Kernel with cutoff `k_max`, `k` nodes sized for outcomes `|x| <= x_range`.
    pub fn new(space: &FockSpace, k_max: f64, x_range: f64) -> Result<Self> {
        if !(k_max > 0.0) || !k_max.is_finite() {
            return Err(TomoError::InvalidParameter(format!("k_max must be positive, got {k_max}")));
        }
        let dim = space.dim();
        // e^{ikx} D(-ik/2) oscillates at most at rate |x| + sqrt(2 dim) in k
        let reach = x_range.abs() + (2.0 * dim as f64).sqrt();
        let count = (k_max * reach / 2.0).ceil() as usize + 32;
        let (t, w) = gauss_legendre(count);
        let nodes = t
            .iter()
            .zip(&w)
            .map(|(ti, wi)| {
                let k = 0.5 * k_max * (ti + 1.0);
                let weight = 0.5 * k_max * wi * k / (4.0 * PI);
                (k, weight, displacement_block(dim, c64(0.0, -k / 2.0)))
            })
            .collect();
        Ok(Self { dim, k_max, nodes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k_max(&self) -> f64 {
        self.k_max
    }

    /// `𝖪(0, x)`.
    pub fn kernel_at_zero_phase(&self, x: f64) -> ComplexMatrix {
        let mut h = ComplexMatrix::zeros(self.dim);
        for (k, w, d) in &self.nodes {
            h += &d.scale(C64::from_polar(*w, k * x));
        }
        &h + &h.adjoint()
    }

    /// `𝖪(φ, x)`.
    pub fn kernel(&self, phi: f64, x: f64) -> ComplexMatrix {
        rotate(&self.kernel_at_zero_phase(x), phi)
    }

    /// `𝖪(0, x)` for each `x`, evaluated in parallel.
    fn table(&self, xs: &[f64]) -> Vec<ComplexMatrix> {
        xs.par_iter().map(|x| self.kernel_at_zero_phase(*x)).collect()
    }

    /// Sample-mean estimate `π 𝖪(φ, x)` over homodyne records, with
    /// per-entry standard errors from `|𝖪(φ, x)_ab| = |𝖪(0, x)_ab|`.
    pub fn estimate_from_records(&self, records: &[MeasurementRecord]) -> Result<SampledEstimate> {
        let dim = self.dim;
        let mut x_index: HashMap<u64, usize> = HashMap::new();
        let mut xs: Vec<f64> = Vec::new();
        let mut phi_index: HashMap<u64, usize> = HashMap::new();
        let mut phis: Vec<f64> = Vec::new();
        let mut cells: Vec<(usize, usize, f64)> = Vec::with_capacity(records.len());
        let mut shots = 0u64;
        for r in records {
            if r.scheme != SchemeId::Homodyne {
                return Err(TomoError::InvalidParameter(format!("expected homodyne records, got {}", r.scheme.as_str())));
            }
            let phi = match r.setting.as_slice() {
                [p] if p.is_finite() => *p,
                _ => return Err(TomoError::InvalidParameter("homodyne record needs one finite phi".into())),
            };
            if !r.outcome.is_finite() {
                return Err(TomoError::InvalidParameter("homodyne outcome must be finite".into()));
            }
            if r.count == 0 {
                continue;
            }
            shots += r.count;
            let i = *phi_index.entry(phi.to_bits()).or_insert_with(|| {
                phis.push(phi);
                phis.len() - 1
            });
            let j = *x_index.entry(r.outcome.to_bits()).or_insert_with(|| {
                xs.push(r.outcome);
                xs.len() - 1
            });
            cells.push((i, j, r.count as f64));
        }
        if shots == 0 {
            return Err(TomoError::InvalidParameter("records carry zero total counts".into()));
        }
        let table = self.table(&xs);
        let mut per_phi = vec![ComplexMatrix::zeros(dim); phis.len()];
        let mut second = vec![vec![0.0; dim]; dim];
        for &(i, j, c) in &cells {
            let k = &table[j];
            per_phi[i] += &k.scale_real(c);
            for (a, row) in second.iter_mut().enumerate() {
                for (b, s) in row.iter_mut().enumerate() {
                    *s += c * k[(a, b)].norm_sqr();
                }
            }
        }
        let n = shots as f64;
        let mut acc = crate::numerics::CompensatedMatrixSum::new(dim);
        for (phi, m) in phis.iter().zip(&per_phi) {
            acc.add_scaled(&rotate(m, *phi), c64(PI / n, 0.0));
        }
        for row in &mut second {
            for s in row.iter_mut() {
                *s *= PI * PI / n;
            }
        }
        Ok(SampledEstimate::from_moments(acc.value(), &second, shots))
    }
}

/// `e^{iφn̂} m e^{-iφn̂}`.
fn rotate(m: &ComplexMatrix, phi: f64) -> ComplexMatrix {
    ComplexMatrix::from_fn(m.dim(), |a, b| m[(a, b)] * C64::from_polar(1.0, phi * (a as f64 - b as f64)))
}

/// `𝖪(φ, x)` for a single evaluation; reconstructions reuse a [`HomodyneKernel`].
pub fn homodyne_kernel(space: &FockSpace, phi: f64, x: f64, k_max: f64) -> Result<ComplexMatrix> {
    Ok(HomodyneKernel::new(space, k_max, x)?.kernel(phi, x))
}

/// `𝖪(φ, x)` as `Σ_j f(x - x_j) |x_j><x_j|` over the eigenbasis of the
/// truncated `X_φ` of `space`. Rows near the truncation are wrong; with a
/// padded space the leading block converges to [`homodyne_kernel`].
pub fn homodyne_kernel_truncated(space: &FockSpace, phi: f64, x: f64, k_max: f64) -> Result<ComplexMatrix> {
    if !(k_max > 0.0) {
        return Err(TomoError::InvalidParameter(format!("k_max must be positive, got {k_max}")));
    }
    let eig = herm_eig(&space.quadrature(phi))?;
    let g: Vec<C64> = eig.eigenvalues.iter().map(|xj| c64(kernel_profile(x - xj, k_max), 0.0)).collect();
    let v = &eig.eigenvectors;
    let dim = space.dim();
    Ok(ComplexMatrix::from_fn(dim, |a, b| (0..dim).map(|j| v[(a, j)] * g[j] * v[(b, j)].conj()).sum()))
}

/// `φ` nodes on `[0, π)` with weight `π/N_φ`, trapezoid `x` nodes on `[-x_max, x_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HomodyneGrid {
    pub phi_nodes: Vec<(f64, f64)>,
    pub x_nodes: Vec<(f64, f64)>,
    pub x_max: f64,
    pub k_max: f64,
}

impl HomodyneGrid {
    pub fn new(phi_count: usize, x_max: f64, x_count: usize, k_max: f64) -> Result<Self> {
        if phi_count == 0 {
            return Err(TomoError::InvalidParameter("homodyne grid needs at least one phase".into()));
        }
        if x_count < 2 {
            return Err(TomoError::InvalidParameter("homodyne grid needs at least two x nodes".into()));
        }
        if !(x_max > 0.0) || !x_max.is_finite() {
            return Err(TomoError::InvalidParameter(format!("x_max must be positive, got {x_max}")));
        }
        if !(k_max > 0.0) || !k_max.is_finite() {
            return Err(TomoError::InvalidParameter(format!("k_max must be positive, got {k_max}")));
        }
        let dphi = PI / phi_count as f64;
        let phi_nodes = (0..phi_count).map(|j| (j as f64 * dphi, dphi)).collect();
        let h = 2.0 * x_max / (x_count - 1) as f64;
        let x_nodes = (0..x_count)
            .map(|i| {
                let w = if i == 0 || i + 1 == x_count { h / 2.0 } else { h };
                (-x_max + i as f64 * h, w)
            })
            .collect();
        Ok(Self { phi_nodes, x_nodes, x_max, k_max })
    }

    pub fn with_k_max(&self, k_max: f64) -> Result<Self> {
        Self::new(self.phi_nodes.len(), self.x_max, self.x_nodes.len(), k_max)
    }

    /// `∫ p(φ, x) dx` on the grid at every phase.
    pub fn masses(&self, rho: &DensityMatrix) -> Vec<f64> {
        self.probability_table(rho).iter().map(|row| row.iter().zip(&self.x_nodes).map(|(p, (_, w))| p * w).sum()).collect()
    }

    /// `p(φ_i, x_j)` for every grid node.
    pub fn probability_table(&self, rho: &DensityMatrix) -> Vec<Vec<f64>> {
        let psi: Vec<Vec<f64>> = self.x_nodes.iter().map(|(x, _)| quad_wavefunctions(rho.dim(), *x)).collect();
        self.phi_nodes
            .par_iter()
            .map(|(phi, _)| psi.iter().map(|p| pdf_from_wavefunctions(rho.matrix(), p, *phi)).collect())
            .collect()
    }

    fn check_coverage(&self, space: &FockSpace, rho: &DensityMatrix, table: &[Vec<f64>]) {
        let recommended = 3.0 + 2.0 * space.mean_photon_number(rho).max(0.0).sqrt();
        if self.x_max < recommended {
            warn!("homodyne grid x_max = {} is below the recommended {recommended:.3}", self.x_max);
        }
        let worst = table
            .iter()
            .map(|row| (row.iter().zip(&self.x_nodes).map(|(p, (_, w))| p * w).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        if worst > 1e-6 {
            warn!("homodyne grid under-resolves the state: |∫p dx - 1| reaches {worst:.3e}");
        }
    }
}

fn exact_estimate(kernel: &HomodyneKernel, grid: &HomodyneGrid, table: &[Vec<f64>]) -> ComplexMatrix {
    let xs: Vec<f64> = grid.x_nodes.iter().map(|(x, _)| *x).collect();
    let kernels = kernel.table(&xs);
    let parts: Vec<ComplexMatrix> = grid
        .phi_nodes
        .par_iter()
        .zip(table)
        .map(|((phi, wphi), row)| {
            let mut m = ComplexMatrix::zeros(kernel.dim());
            for ((p, (_, wx)), k) in row.iter().zip(&grid.x_nodes).zip(&kernels) {
                m += &k.scale_real(wphi * wx * p);
            }
            rotate(&m, *phi)
        })
        .collect();
    let mut acc = crate::numerics::CompensatedMatrixSum::new(kernel.dim());
    for p in &parts {
        acc.add_scaled(p, c64(1.0, 0.0));
    }
    acc.value()
}

/// Per-shard `[φ][x]` count tables: `φ` uniform over the grid phases, `x` by
/// inverse CDF of `w_x p(φ, x)`.
pub fn simulate_homodyne_counts(rho: &DensityMatrix, grid: &HomodyneGrid, shots: u64, seed: u64, shards: usize) -> Result<Vec<Vec<Vec<u64>>>> {
    let table = grid.probability_table(rho);
    let cdfs = table
        .iter()
        .map(|row| InverseCdf::new(&row.iter().zip(&grid.x_nodes).map(|(p, (_, w))| p * w).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let nphi = grid.phi_nodes.len();
    let nx = grid.x_nodes.len();
    Ok(run_sharded(seed, shots, shards, |rng, n, _| {
        let mut counts = vec![vec![0u64; nx]; nphi];
        for _ in 0..n {
            let i = rng.gen_range(0..nphi);
            counts[i][cdfs[i].sample(rng)] += 1;
        }
        counts
    }))
}

/// One record per nonzero `(φ, x)` cell, phases outer.
pub fn homodyne_records(grid: &HomodyneGrid, counts: &[Vec<u64>]) -> Vec<MeasurementRecord> {
    let mut out = Vec::new();
    for ((phi, _), row) in grid.phi_nodes.iter().zip(counts) {
        for ((x, _), &c) in grid.x_nodes.iter().zip(row) {
            if c > 0 {
                out.push(MeasurementRecord { scheme: SchemeId::Homodyne, setting: vec![*phi], outcome: *x, count: c });
            }
        }
    }
    out
}

fn total_counts(shards: &[Vec<Vec<u64>>]) -> Vec<Vec<u64>> {
    let mut total = shards[0].clone();
    for s in &shards[1..] {
        for (tr, sr) in total.iter_mut().zip(s) {
            for (t, c) in tr.iter_mut().zip(sr) {
                *t += c;
            }
        }
    }
    total
}

/// Simulated records for `shots` homodyne measurements, aggregated over shards.
pub fn simulate_homodyne_records(rho: &DensityMatrix, grid: &HomodyneGrid, shots: u64, seed: u64, shards: usize) -> Result<Vec<MeasurementRecord>> {
    let parts = simulate_homodyne_counts(rho, grid, shots, seed, shards)?;
    Ok(homodyne_records(grid, &total_counts(&parts)))
}

/// Homodyne reconstruction of `rho_true` on `space`.
///
/// Exact mode sums `w_φ w_x p(φ, x) 𝖪(φ, x)` over the grid. Sampled mode
/// averages `π 𝖪(φ, x)` over simulated shots drawn on the same grid.
pub fn reconstruct_homodyne(
    rho_true: &DensityMatrix,
    space: &FockSpace,
    grid: &HomodyneGrid,
    mode: Mode,
    shots: u64,
    seed: u64,
) -> Result<ReconstructionResult> {
    reconstruct_homodyne_sharded(rho_true, space, grid, mode, shots, seed, DEFAULT_SHARDS)
}

pub fn reconstruct_homodyne_sharded(
    rho_true: &DensityMatrix,
    space: &FockSpace,
    grid: &HomodyneGrid,
    mode: Mode,
    shots: u64,
    seed: u64,
    shards: usize,
) -> Result<ReconstructionResult> {
    if rho_true.dim() != space.dim() {
        return Err(TomoError::DimensionMismatch { expected: space.dim(), found: rho_true.dim() });
    }
    let kernel = HomodyneKernel::new(space, grid.k_max, grid.x_max)?;
    match mode {
        Mode::Exact => {
            let table = grid.probability_table(rho_true);
            grid.check_coverage(space, rho_true, &table);
            ReconstructionResult::exact(exact_estimate(&kernel, grid, &table))
        }
        Mode::Sampled => {
            if shots == 0 {
                return Err(TomoError::InvalidParameter("sampled mode needs at least one shot".into()));
            }
            grid.check_coverage(space, rho_true, &grid.probability_table(rho_true));
            let parts = simulate_homodyne_counts(rho_true, grid, shots, seed, shards)?;
            let total = kernel.estimate_from_records(&homodyne_records(grid, &total_counts(&parts)))?;
            let per_shard = parts
                .iter()
                .map(|c| {
                    let recs = homodyne_records(grid, c);
                    if recs.is_empty() {
                        return Ok((0, ComplexMatrix::zeros(space.dim())));
                    }
                    let e = kernel.estimate_from_records(&recs)?;
                    Ok((e.shots, e.mean))
                })
                .collect::<Result<Vec<_>>>()?;
            finish_sharded(total.into_result()?, rho_true, &per_shard, seed)
        }
    }
}

/// Accuracy of exact-mode reconstruction at one cutoff.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KmaxPoint {
    pub k_max: f64,
    pub fidelity: f64,
    pub trace_distance: f64,
}

/// Exact-mode fidelity and trace distance for each cutoff, probabilities computed once.
pub fn scan_k_max(rho_true: &DensityMatrix, space: &FockSpace, grid: &HomodyneGrid, k_values: &[f64]) -> Result<Vec<KmaxPoint>> {
    let table = grid.probability_table(rho_true);
    k_values
        .iter()
        .map(|&k| {
            let g = grid.with_k_max(k)?;
            let kernel = HomodyneKernel::new(space, k, grid.x_max)?;
            let r = ReconstructionResult::exact(exact_estimate(&kernel, &g, &table))?;
            Ok(KmaxPoint { k_max: k, fidelity: r.fidelity_to(rho_true)?, trace_distance: r.trace_distance_to(rho_true)? })
        })
        .collect()
}

fn alpha_label(label: &[f64]) -> Option<C64> {
    match label {
        [re, im] if re.is_finite() && im.is_finite() => Some(c64(*re, *im)),
        _ => None,
    }
}

struct DisplacementFamily {
    dim: usize,
}

impl OperatorFamily for DisplacementFamily {
    fn dim(&self) -> usize {
        self.dim
    }

    fn operator(&self, label: &[f64]) -> Option<ComplexMatrix> {
        alpha_label(label).map(|a| displacement_block(self.dim, a))
    }
}

/// Displacements acting on displacements: `D(β)D(α) ∝ D(α + β)`.
pub(crate) struct DisplacementGroup {
    pub(crate) dim: usize,
}

impl GroupAction for DisplacementGroup {
    fn identity(&self) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn representation(&self, g: &[f64]) -> Option<ComplexMatrix> {
        alpha_label(g).map(|b| displacement_block(self.dim, b))
    }

    fn covariant_label(&self, g: &[f64], h: &[f64]) -> Option<Vec<f64>> {
        let s = alpha_label(h)? + alpha_label(g)?;
        Some(vec![s.re, s.im])
    }

    fn adjoint_label(&self, g: &[f64], h: &[f64]) -> Option<Vec<f64>> {
        // D(β) D(α)^H ∝ D(β - α) = D(α - β)^H
        let s = alpha_label(h)? - alpha_label(g)?;
        Some(vec![s.re, s.im])
    }
}

/// Declared closure tolerance of displacement and displaced-count lattice frames
/// on their central check block.
pub const LATTICE_FRAME_TOL: f64 = 1e-6;

/// `{D(α)}` over a disk lattice; residual checks use the block `n <= nmax/2`.
pub fn displacement_frame(space: &FockSpace, lattice: &DiskLattice) -> Result<OperatorFrame> {
    let elements = lattice.nodes().iter().map(|(a, w)| FrameElement { label: vec![a.re, a.im], weight: *w }).collect();
    Ok(OperatorFrame::new(
        format!("displacement-r{}-s{}", lattice.radius(), lattice.steps()),
        elements,
        Arc::new(DisplacementFamily { dim: space.dim() }),
    )?
    .with_group(Arc::new(DisplacementGroup { dim: space.dim() }))
    .with_tolerance(LATTICE_FRAME_TOL)
    .with_check_block(space.nmax() / 2 + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        (0..=n).map(|i| f(a + i as f64 * h) * if i == 0 || i == n { 0.5 } else { 1.0 }).sum::<f64>() * h
    }

    #[test]
    fn wavefunction_examples() {
        assert_abs_diff_eq!(quad_wavefunction(0, 0.3), (2.0 / PI).powf(0.25) * (-0.09f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(trapezoid(|x| quad_wavefunction(0, x).powi(2), -8.0, 8.0, 4000), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(quad_wavefunction(1, 0.0), 0.0, epsilon = 1e-300);
        let var = trapezoid(|x| x * x * quad_wavefunction(0, x).powi(2), -8.0, 8.0, 4000);
        let space = FockSpace::new(4);
        let x = space.quadrature(0.7);
        assert_abs_diff_eq!(var, (&x * &x)[(0, 0)].re, epsilon = 1e-10);
        assert_abs_diff_eq!(var, 0.25, epsilon = 1e-10);
    }

    #[test]
    fn wavefunctions_orthonormal() {
        let count = 25;
        let n = 6000;
        let (a, b) = (-9.0, 9.0);
        let h = (b - a) / n as f64;
        let table: Vec<Vec<f64>> = (0..=n).map(|i| quad_wavefunctions(count, a + i as f64 * h)).collect();
        for j in 0..count {
            for k in 0..count {
                let s: f64 = table.iter().map(|r| r[j] * r[k]).sum::<f64>() * h;
                assert_abs_diff_eq!(s, if j == k { 1.0 } else { 0.0 }, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn wavefunctions_are_quadrature_eigenfunctions() {
        // X_0 ψ_n = x ψ_n in the Fock basis: (√n ψ_{n-1} + √(n+1) ψ_{n+1}) / 2 = x ψ_n
        let x = 0.83;
        let psi = quad_wavefunctions(12, x);
        for n in 1..11 {
            let lhs = ((n as f64).sqrt() * psi[n - 1] + ((n + 1) as f64).sqrt() * psi[n + 1]) / 2.0;
            assert_abs_diff_eq!(lhs, x * psi[n], epsilon = 1e-13);
        }
    }

    #[test]
    fn pdf_examples() {
        let space = FockSpace::new(20);
        let vac = space.fock_state(0).unwrap();
        for phi in [0.0, 1.1, 2.5] {
            for x in [-1.0, 0.0, 0.4] {
                assert_abs_diff_eq!(homodyne_pdf(&vac, phi, x), (2.0 / PI).sqrt() * (-2.0 * x * x).exp(), epsilon = 1e-14);
            }
        }
        let one = space.fock_state(1).unwrap();
        assert_abs_diff_eq!(homodyne_pdf(&one, 0.3, 0.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(homodyne_pdf(&one, 0.3, 0.7), homodyne_pdf(&one, 2.0, 0.7), epsilon = 1e-14);
        let coh = FockSpace::new(30).coherent_state(c64(1.0, 0.0)).unwrap();
        let mean = trapezoid(|x| x * homodyne_pdf(&coh, 0.0, x), -8.0, 8.0, 4000);
        assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn pdf_is_distribution_of_rotated_quadrature() {
        // <X_φ> of a coherent state |α> is Re(α e^{-iφ})
        let space = FockSpace::new(30);
        let alpha = c64(0.6, 0.8);
        let coh = space.coherent_state(alpha).unwrap();
        for phi in [0.0, PI / 4.0, PI / 2.0, 2.0] {
            let mean = trapezoid(|x| x * homodyne_pdf(&coh, phi, x), -8.0, 8.0, 4000);
            let expected = (alpha * C64::from_polar(1.0, -phi)).re;
            assert_abs_diff_eq!(mean, expected, epsilon = 1e-6);
            let op = (&space.quadrature(phi) * coh.matrix()).trace().re;
            assert_abs_diff_eq!(mean, op, epsilon = 1e-6);
        }
    }

    #[test]
    fn pdf_normalization_on_grid() {
        let space = FockSpace::new(20);
        let grid = HomodyneGrid::new(4, 7.0, 701, 10.0).unwrap();
        let states =
            [space.fock_state(0).unwrap(), space.fock_state(1).unwrap(), space.coherent_state(c64(1.0, 0.5)).unwrap(), space.thermal_state(0.5).unwrap()];
        for rho in &states {
            for phi in [0.0, PI / 4.0, PI / 2.0] {
                let g = HomodyneGrid { phi_nodes: vec![(phi, 1.0)], ..grid.clone() };
                assert_abs_diff_eq!(g.masses(rho)[0], 1.0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn kernel_profile_limit_and_quadrature() {
        let k = 7.0;
        assert_abs_diff_eq!(kernel_profile(0.0, k), k * k / (4.0 * PI), epsilon = 1e-14);
        assert_abs_diff_eq!(kernel_profile(1e-7, k), k * k / (4.0 * PI), epsilon = 1e-10);
        // continuity across the series switch
        let u = 1e-2 / k;
        assert_abs_diff_eq!(kernel_profile(u * 0.999_999, k), kernel_profile(u * 1.000_001, k), epsilon = 1e-9);
        let (nodes, weights) = gauss_legendre(200);
        for delta in [-2.3, -0.4, 0.013, 0.5, 1.7, 3.9] {
            // (1/π) ∫_{-K}^{K} (|k|/4) e^{ikδ} dk = (1/(2π)) ∫_0^K k cos(kδ) dk
            let q: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(t, w)| {
                    let kk = 0.5 * k * (t + 1.0);
                    0.5 * k * w * kk * (kk * delta).cos()
                })
                .sum::<f64>()
                / (2.0 * PI);
            assert_abs_diff_eq!(kernel_profile(delta, k), q, epsilon = 1e-10);
        }
    }

    #[test]
    fn kernel_symmetries() {
        let space = FockSpace::new(12);
        let hk = HomodyneKernel::new(&space, 8.0, 1.0).unwrap();
        let k = hk.kernel(0.4, 0.9);
        assert!(k.hermitian_deviation() < 1e-12);
        let flipped = hk.kernel(0.4 + PI, -0.9);
        assert!((&k - &flipped).max_abs() < 1e-10);
        let direct = homodyne_kernel(&space, 0.4, 0.9, 8.0).unwrap();
        assert!((&k - &direct).max_abs() < 1e-12);
        assert!(homodyne_kernel(&space, 0.0, 0.0, 0.0).is_err());
        assert!(homodyne_kernel_truncated(&space, 0.0, 0.0, 0.0).is_err());
        let t = homodyne_kernel_truncated(&space, 0.4, 0.9, 8.0).unwrap();
        assert!((&t - &homodyne_kernel_truncated(&space, 0.4 + PI, -0.9, 8.0).unwrap()).max_abs() < 1e-10);
    }

    #[test]
    fn kernel_matches_padded_eigenbasis_oracle() {
        let space = FockSpace::new(10);
        let padded = FockSpace::new(260);
        for (phi, x, k) in [(0.0, 0.3, 6.0), (1.1, -1.4, 8.0), (2.7, 2.2, 12.0)] {
            let exact = homodyne_kernel(&space, phi, x, k).unwrap();
            let oracle = homodyne_kernel_truncated(&padded, phi, x, k).unwrap().top_left(space.dim());
            assert!((&exact - &oracle).max_abs() < 1e-8, "phi={phi} x={x} k={k}: {}", (&exact - &oracle).max_abs());
        }
        // the diagonal limit survives in the vacuum entry: <0|𝖪(0,x)|0> = ∫ f(x - y) ψ_0(y)² dy
        let k = 6.0;
        let direct = trapezoid(|y| kernel_profile(0.5 - y, k) * quad_wavefunction(0, y).powi(2), -8.0, 8.0, 8000);
        assert_abs_diff_eq!(homodyne_kernel(&space, 0.0, 0.5, k).unwrap()[(0, 0)].re, direct, epsilon = 1e-9);
    }

    #[test]
    fn kernel_k_quadrature_converged() {
        let space = FockSpace::new(20);
        let a = HomodyneKernel::new(&space, 24.0, 7.0).unwrap().kernel(0.3, 6.5);
        let b = HomodyneKernel::new(&space, 24.0, 14.0).unwrap().kernel(0.3, 6.5);
        assert!((&a - &b).max_abs() < 1e-10);
    }

    #[test]
    fn grid_validation() {
        assert!(HomodyneGrid::new(0, 6.0, 100, 10.0).is_err());
        assert!(HomodyneGrid::new(10, 6.0, 1, 10.0).is_err());
        assert!(HomodyneGrid::new(10, -6.0, 100, 10.0).is_err());
        assert!(HomodyneGrid::new(10, 6.0, 100, 0.0).is_err());
        let g = HomodyneGrid::new(10, 6.0, 101, 10.0).unwrap();
        assert_abs_diff_eq!(g.phi_nodes.iter().map(|p| p.1).sum::<f64>(), PI, epsilon = 1e-14);
        assert_abs_diff_eq!(g.x_nodes.iter().map(|p| p.1).sum::<f64>(), 12.0, epsilon = 1e-12);
    }

    #[test]
    fn vacuum_exact_reconstruction() {
        let space = FockSpace::new(20);
        let vac = space.fock_state(0).unwrap();
        let grid = HomodyneGrid::new(50, 6.0, 400, 12.0).unwrap();
        let r = reconstruct_homodyne(&vac, &space, &grid, Mode::Exact, 0, 0).unwrap();
        assert!((r.estimate[(0, 0)].re - 1.0).abs() < 0.02, "rho00 = {}", r.estimate[(0, 0)]);
        assert!(r.symmetrized.matrix().hermitian_deviation() <= 1e-12);
    }

    #[test]
    fn thermal_off_diagonals_vanish() {
        let space = FockSpace::new(20);
        let th = space.thermal_state(0.5).unwrap();
        let grid = HomodyneGrid::new(50, 7.0, 400, 12.0).unwrap();
        let r = reconstruct_homodyne(&th, &space, &grid, Mode::Exact, 0, 0).unwrap();
        for a in 0..space.dim() {
            for b in 0..space.dim() {
                if a != b {
                    assert!(r.estimate[(a, b)].norm() <= 1e-3, "({a},{b}) = {}", r.estimate[(a, b)]);
                }
            }
        }
    }

    #[test]
    fn sampled_records_reproduce_sampled_result() {
        let space = FockSpace::new(8);
        let vac = space.fock_state(0).unwrap();
        let grid = HomodyneGrid::new(10, 5.0, 120, 6.0).unwrap();
        let r = reconstruct_homodyne_sharded(&vac, &space, &grid, Mode::Sampled, 5000, 3, 4).unwrap();
        let recs = simulate_homodyne_records(&vac, &grid, 5000, 3, 4).unwrap();
        let e = HomodyneKernel::new(&space, grid.k_max, grid.x_max).unwrap().estimate_from_records(&recs).unwrap();
        assert_eq!(e.mean, r.estimate);
        assert_eq!(r.shots, 5000);
        assert_eq!(r.trace.len(), 4);
        assert!(r.fidelity_stderr.is_some());
        assert!(HomodyneKernel::new(&space, 6.0, 5.0).unwrap().estimate_from_records(&[]).is_err());
    }

    #[test]
    fn sampled_stderr_matches_direct_accumulation() {
        let space = FockSpace::new(5);
        let hk = HomodyneKernel::new(&space, 4.0, 2.0).unwrap();
        let recs = vec![
            MeasurementRecord { scheme: SchemeId::Homodyne, setting: vec![0.0], outcome: 0.3, count: 2 },
            MeasurementRecord { scheme: SchemeId::Homodyne, setting: vec![1.0], outcome: -0.5, count: 1 },
            MeasurementRecord { scheme: SchemeId::Homodyne, setting: vec![0.0], outcome: 1.2, count: 3 },
        ];
        let e = hk.estimate_from_records(&recs).unwrap();
        let mut terms = Vec::new();
        for r in &recs {
            for _ in 0..r.count {
                terms.push(hk.kernel(r.setting[0], r.outcome).scale_real(PI));
            }
        }
        let acc = crate::simulate::mc_accumulate(terms).unwrap().accumulator;
        assert!((&acc.mean() - &e.mean).max_abs() < 1e-12);
        for (x, y) in e.stderr.iter().flatten().zip(acc.stderr().iter().flatten()) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn k_max_scan_improves_vacuum() {
        let space = FockSpace::new(20);
        let vac = space.fock_state(0).unwrap();
        let grid = HomodyneGrid::new(50, 7.0, 800, 6.0).unwrap();
        let pts = scan_k_max(&vac, &space, &grid, &[6.0, 12.0, 24.0]).unwrap();
        assert!(pts[0].trace_distance > pts[1].trace_distance, "{pts:?}");
    }

    #[test]
    fn displacement_frame_k_tilde_is_pi() {
        let space = FockSpace::new(10);
        let f = displacement_frame(&space, &DiskLattice::with_step(6.0, 0.05).unwrap()).unwrap();
        let v = space.vacuum();
        assert_abs_diff_eq!(f.estimate_k_tilde(&v, &v).unwrap(), PI, epsilon = 1e-3);
    }

    #[test]
    fn displacement_frame_covariance() {
        let space = FockSpace::new(60);
        let f = displacement_frame(&space, &DiskLattice::new(2.0, 4).unwrap()).unwrap();
        let mut rng = crate::simulate::shard_rng(11, 0);
        for _ in 0..5 {
            let g = vec![rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7)];
            let h = vec![rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7)];
            assert!(f.covariance_residual(&g, &h).unwrap() <= 1e-6);
            assert!(f.adjoint_covariance_residual(&g, &h).unwrap() <= 1e-6);
        }
        assert!(f.covariance_residual(&[0.0, 0.0], &[0.3, -0.2]).unwrap() <= 1e-12);
    }

    #[test]
    fn displacement_frame_closure_on_vacuum_projector() {
        let space = FockSpace::new(19);
        let f = displacement_frame(&space, &DiskLattice::with_step(6.0, 0.1).unwrap()).unwrap();
        let a = ComplexMatrix::projector(&space.vacuum());
        let r = f.closure_residual(&a).unwrap();
        assert!(r <= 1e-2, "closure residual {r}");
        assert!(r <= f.tolerance(), "closure residual {r}");
    }
}
