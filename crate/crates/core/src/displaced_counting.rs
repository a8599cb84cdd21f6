//! Displaced photon counting.
//!
//! The tomographic set `{D^H(α) e^{iy n̂} D(α)}`, photon statistics of
//! displaced states, the kernel `K_y(α, n)`, and reconstruction over a disk
//! lattice in the complex `α` plane.
//!
//! `D^H(α) e^{iyn̂} D(α) = e^{i|α|² sin y} e^{iyn̂} D(α(1 - e^{-iy}))`, so each
//! operator needs a single closed-form displacement block and no inner sum
//! over the truncated space.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;

use crate::error::{Result, TomoError};
use crate::frames::{FrameElement, GroupAction, OperatorFamily, OperatorFrame};
use crate::homodyne::LATTICE_FRAME_TOL;
use crate::numerics::{c64, CompensatedMatrixSum, ComplexMatrix, DensityMatrix, C64};
use crate::oscillator::{displacement_block, displacement_rect, DiskLattice, FockSpace};
use crate::simulate::{
    finish_sharded, run_sharded, InverseCdf, MeasurementRecord, Mode, ReconstructionResult, SampledEstimate, SchemeId,
    DEFAULT_SHARDS,
};

/// Rejects `y` that are (numerically) multiples of `2π`.
pub fn validate_y(y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(TomoError::InvalidParameter(format!("y must be finite, got {y}")));
    }
    let r = y.rem_euclid(2.0 * PI);
    if r < 1e-9 || 2.0 * PI - r < 1e-9 {
        return Err(TomoError::InvalidParameter(format!("y = {y} is a multiple of 2π")));
    }
    Ok(y)
}

/// `2(1 - cos y)/π`, the inverse of `k̃`.
pub fn kernel_prefactor(y: f64) -> f64 {
    2.0 * (1.0 - y.cos()) / PI
}

/// Disk lattice in the `α` plane together with the phase `y`.
///
/// `photon_cutoff` is the largest photon count the detector resolves. `None`
/// picks one per state so the displaced distributions keep all but `1e-12`
/// of their mass; `Some(nmax)` sums only the counts representable in the
/// reconstruction space.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaGrid {
    pub lattice: DiskLattice,
    pub y: f64,
    pub photon_cutoff: Option<usize>,
}

impl AlphaGrid {
    pub fn new(radius: f64, steps: usize, y: f64) -> Result<Self> {
        Ok(Self { lattice: DiskLattice::new(radius, steps)?, y: validate_y(y)?, photon_cutoff: None })
    }

    pub fn with_step(radius: f64, step: f64, y: f64) -> Result<Self> {
        Ok(Self { lattice: DiskLattice::with_step(radius, step)?, y: validate_y(y)?, photon_cutoff: None })
    }

    pub fn with_photon_cutoff(mut self, cutoff: usize) -> Self {
        self.photon_cutoff = Some(cutoff);
        self
    }

    pub fn nodes(&self) -> &[(C64, f64)] {
        self.lattice.nodes()
    }

    pub fn area(&self) -> f64 {
        self.lattice.area()
    }
}

fn bw_operator_unchecked(dim: usize, alpha: C64, y: f64) -> ComplexMatrix {
    let shift = displacement_block(dim, alpha * (c64(1.0, 0.0) - C64::from_polar(1.0, -y)));
    let global = alpha.norm_sqr() * y.sin();
    ComplexMatrix::from_fn(dim, |i, j| shift[(i, j)] * C64::from_polar(1.0, global + y * i as f64))
}

/// `D^H(α) e^{iyn̂} D(α)`.
pub fn bw_operator(space: &FockSpace, alpha: C64, y: f64) -> Result<ComplexMatrix> {
    validate_y(y)?;
    Ok(bw_operator_unchecked(space.dim(), alpha, y))
}

/// `p_n` for `n = 0..=cutoff`, `rho` padded with zeros above its dimension.
fn photon_distribution(rho: &ComplexMatrix, alpha: C64, cutoff: usize) -> Vec<f64> {
    let d = displacement_rect(cutoff + 1, rho.dim(), alpha);
    let dr = &d * rho.as_dmatrix();
    (0..=cutoff)
        .map(|n| dr.row(n).iter().zip(d.row(n).iter()).map(|(a, b)| (a * b.conj()).re).sum::<f64>().max(0.0))
        .collect()
}

/// `p(α, n) = <n|D(α) ρ D^H(α)|n>` for `n = 0..=nmax`.
pub fn photon_pdf(rho: &DensityMatrix, space: &FockSpace, alpha: C64) -> Result<Vec<f64>> {
    if rho.dim() != space.dim() {
        return Err(TomoError::DimensionMismatch { expected: space.dim(), found: rho.dim() });
    }
    Ok(photon_distribution(rho.matrix(), alpha, space.nmax()))
}

/// Photon statistics of the displaced state up to an arbitrary count `cutoff`.
pub fn photon_pdf_to(rho: &DensityMatrix, alpha: C64, cutoff: usize) -> Vec<f64> {
    photon_distribution(rho.matrix(), alpha, cutoff)
}

/// `K_y(α, n) = (2(1 - cos y)/π) e^{iyn} D^H(α) e^{-iyn̂} D(α)`.
pub fn bw_kernel(space: &FockSpace, alpha: C64, n: usize, y: f64) -> Result<ComplexMatrix> {
    validate_y(y)?;
    let m = bw_operator_unchecked(space.dim(), alpha, -y);
    Ok(m.scale(C64::from_polar(kernel_prefactor(y), y * n as f64)))
}

/// Photon distributions below this captured mass trigger a warning.
pub const MASS_WARNING: f64 = 1e-4;

/// Captured mass the automatic photon cutoff aims for at every node.
pub const CUTOFF_MASS: f64 = 1e-12;

/// Largest automatic photon cutoff.
pub const MAX_PHOTON_CUTOFF: usize = 2048;

/// Bound on the truncation leak into the central block that still counts as success.
pub const LEAK_TOLERANCE: f64 = 1e-2;

/// Per-node data shared by exact and sampled reconstruction.
struct NodeData {
    alpha: C64,
    weight: f64,
    probabilities: Vec<f64>,
    kernel_base: ComplexMatrix,
}

fn node_data_at(rho: &DensityMatrix, grid: &AlphaGrid, cutoff: usize) -> Vec<NodeData> {
    let dim = rho.dim();
    grid.nodes()
        .par_iter()
        .map(|(alpha, w)| NodeData {
            alpha: *alpha,
            weight: *w,
            probabilities: photon_distribution(rho.matrix(), *alpha, cutoff),
            kernel_base: bw_operator_unchecked(dim, *alpha, -grid.y),
        })
        .collect()
}

fn node_data(rho: &DensityMatrix, grid: &AlphaGrid) -> Vec<NodeData> {
    if let Some(c) = grid.photon_cutoff {
        return node_data_at(rho, grid, c);
    }
    let nmax = rho.dim() - 1;
    let reach = (nmax as f64).sqrt() + grid.lattice.radius();
    let mut cutoff = ((reach * reach).ceil() as usize).clamp(nmax, MAX_PHOTON_CUTOFF);
    loop {
        let nodes = node_data_at(rho, grid, cutoff);
        let worst = nodes.iter().map(|n| n.probabilities.iter().sum::<f64>()).fold(1.0, f64::min);
        if worst >= 1.0 - CUTOFF_MASS || cutoff >= MAX_PHOTON_CUTOFF {
            return nodes;
        }
        cutoff = (2 * cutoff).min(MAX_PHOTON_CUTOFF);
    }
}

/// Photon cutoff [`reconstruct_bw`] uses for `rho` on `grid`.
pub fn photon_cutoff(rho: &DensityMatrix, grid: &AlphaGrid) -> usize {
    grid.photon_cutoff.unwrap_or_else(|| node_data(rho, grid).first().map(|n| n.probabilities.len() - 1).unwrap_or(rho.dim() - 1))
}

/// Checks how much photon-number mass beyond `nmax` can reach the central
/// block `n <= nmax/2`. The dropped tail `Σ_{n>nmax} p_n e^{iyn}` is bounded
/// by `1 - Σp`, so `Σ_α w_α (1 - Σp) C |M_α[a,b]|` bounds the error of entry
/// `(a, b)`. Warns on any node below `1 - MASS_WARNING` and fails with
/// [`TomoError::MassDeficit`] if the largest entry bound exceeds `LEAK_TOLERANCE`.
fn leak_bound(nodes: &[NodeData], y: f64, block: usize) -> f64 {
    let prefactor = kernel_prefactor(y);
    let mut bound = vec![0.0; block * block];
    for n in nodes {
        let deficit = (1.0 - n.probabilities.iter().sum::<f64>()).max(0.0);
        if deficit == 0.0 {
            continue;
        }
        let s = n.weight * deficit * prefactor;
        for b in 0..block {
            for a in 0..block {
                bound[a + b * block] += s * n.kernel_base[(a, b)].norm();
            }
        }
    }
    bound.into_iter().fold(0.0, f64::max)
}

fn check_mass(nodes: &[NodeData], y: f64, block: usize) -> Result<()> {
    let masses: Vec<f64> = nodes.iter().map(|n| n.probabilities.iter().sum()).collect();
    let deficient = masses.iter().filter(|m| **m < 1.0 - MASS_WARNING).count();
    if deficient == 0 {
        return Ok(());
    }
    let worst = masses.iter().copied().fold(1.0, f64::min);
    let leak = leak_bound(nodes, y, block);
    warn!(
        "photon sum truncated: {deficient} of {} lattice nodes capture less than 1 - {MASS_WARNING:e} (worst {worst:.6}); central-block leak bound {leak:.3e}",
        nodes.len()
    );
    if leak > LEAK_TOLERANCE {
        return Err(TomoError::MassDeficit { captured: 1.0 - leak, required: 1.0 - LEAK_TOLERANCE });
    }
    Ok(())
}

fn exact_estimate(nodes: &[NodeData], y: f64, dim: usize) -> ComplexMatrix {
    let prefactor = kernel_prefactor(y);
    let parts: Vec<CompensatedMatrixSum> = nodes
        .par_chunks(256)
        .map(|chunk| {
            let mut acc = CompensatedMatrixSum::new(dim);
            for n in chunk {
                let s: C64 = n.probabilities.iter().enumerate().map(|(k, p)| C64::from_polar(*p, y * k as f64)).sum();
                acc.add_scaled(&n.kernel_base, s * (n.weight * prefactor));
            }
            acc
        })
        .collect();
    let mut total = CompensatedMatrixSum::new(dim);
    for p in &parts {
        total.merge(p);
    }
    total.value()
}

/// Sample-mean estimate of `A K_y(α, n)` over records, `A` the lattice area
/// the settings were drawn from.
pub fn bw_estimate_from_records(space: &FockSpace, y: f64, area: f64, records: &[MeasurementRecord]) -> Result<SampledEstimate> {
    validate_y(y)?;
    if !(area > 0.0) || !area.is_finite() {
        return Err(TomoError::InvalidParameter(format!("sampling area must be positive, got {area}")));
    }
    let dim = space.dim();
    let mut index: HashMap<(u64, u64), usize> = HashMap::new();
    // (α, Σ count e^{iyn}, Σ count)
    let mut groups: Vec<(C64, C64, f64)> = Vec::new();
    let mut shots = 0u64;
    for r in records {
        if r.scheme != SchemeId::DisplacedCount {
            return Err(TomoError::InvalidParameter(format!("expected displaced-count records, got {}", r.scheme.as_str())));
        }
        let alpha = match r.setting.as_slice() {
            [re, im] if re.is_finite() && im.is_finite() => c64(*re, *im),
            _ => return Err(TomoError::InvalidParameter("displaced-count record needs finite (alpha_re, alpha_im)".into())),
        };
        if !(r.outcome >= 0.0) || r.outcome.fract() != 0.0 || r.outcome > u32::MAX as f64 {
            return Err(TomoError::InvalidParameter(format!("photon count {} is not a nonnegative integer", r.outcome)));
        }
        if r.count == 0 {
            continue;
        }
        shots += r.count;
        let slot = *index.entry((alpha.re.to_bits(), alpha.im.to_bits())).or_insert_with(|| {
            groups.push((alpha, C64::default(), 0.0));
            groups.len() - 1
        });
        let c = r.count as f64;
        groups[slot].1 += C64::from_polar(c, y * r.outcome);
        groups[slot].2 += c;
    }
    if shots == 0 {
        return Err(TomoError::InvalidParameter("records carry zero total counts".into()));
    }
    let scale = area * kernel_prefactor(y);
    let n = shots as f64;
    let parts: Vec<(ComplexMatrix, Vec<f64>)> = groups
        .par_iter()
        .map(|(alpha, s, c)| {
            let m = bw_operator_unchecked(dim, *alpha, -y);
            let sq = m.as_dmatrix().iter().map(|z| c * z.norm_sqr()).collect();
            (m.scale(*s), sq)
        })
        .collect();
    let mut acc = CompensatedMatrixSum::new(dim);
    let mut second = vec![0.0; dim * dim];
    for (m, sq) in &parts {
        acc.add_scaled(m, c64(scale / n, 0.0));
        for (t, v) in second.iter_mut().zip(sq) {
            *t += v;
        }
    }
    // column-major, as stored by the matrix
    let second: Vec<Vec<f64>> = (0..dim).map(|a| (0..dim).map(|b| second[a + b * dim] * scale * scale / n).collect()).collect();
    Ok(SampledEstimate::from_moments(acc.value(), &second, shots))
}

fn simulate_counts(nodes: &[NodeData], shots: u64, seed: u64, shards: usize) -> Result<Vec<Vec<Vec<u64>>>> {
    let node_cdf = InverseCdf::new(&nodes.iter().map(|n| n.weight).collect::<Vec<_>>())?;
    let photon_cdfs = nodes.iter().map(|n| InverseCdf::new(&n.probabilities)).collect::<Result<Vec<_>>>()?;
    let dim = nodes.first().map(|n| n.probabilities.len()).unwrap_or(0);
    Ok(run_sharded(seed, shots, shards, |rng, count, _| {
        let mut counts = vec![vec![0u64; dim]; nodes.len()];
        for _ in 0..count {
            let i = node_cdf.sample(rng);
            counts[i][photon_cdfs[i].sample(rng)] += 1;
        }
        counts
    }))
}

fn records_from_counts(nodes: &[NodeData], counts: &[Vec<u64>]) -> Vec<MeasurementRecord> {
    let mut out = Vec::new();
    for (node, row) in nodes.iter().zip(counts) {
        for (k, &c) in row.iter().enumerate() {
            if c > 0 {
                out.push(MeasurementRecord {
                    scheme: SchemeId::DisplacedCount,
                    setting: vec![node.alpha.re, node.alpha.im],
                    outcome: k as f64,
                    count: c,
                });
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

/// Simulated displaced-count records: `α` drawn from the lattice nodes in
/// proportion to their weights, `n` from `p(α, ·)`; aggregated over shards.
pub fn simulate_bw_records(rho: &DensityMatrix, space: &FockSpace, grid: &AlphaGrid, shots: u64, seed: u64, shards: usize) -> Result<Vec<MeasurementRecord>> {
    if rho.dim() != space.dim() {
        return Err(TomoError::DimensionMismatch { expected: space.dim(), found: rho.dim() });
    }
    let nodes = node_data(rho, grid);
    check_mass(&nodes, grid.y, space.nmax() / 2 + 1)?;
    Ok(records_from_counts(&nodes, &total_counts(&simulate_counts(&nodes, shots, seed, shards)?)))
}

/// Displaced-count reconstruction of `rho_true` on `space`.
///
/// Exact mode sums `w_α Σ_n p(α, n) K_y(α, n)` over the lattice, with `n`
/// up to the detector cutoff of [`photon_cutoff`]. Sampled mode averages `A K_y(α, n)` over simulated shots.
pub fn reconstruct_bw(
    rho_true: &DensityMatrix,
    space: &FockSpace,
    grid: &AlphaGrid,
    mode: Mode,
    shots: u64,
    seed: u64,
) -> Result<ReconstructionResult> {
    reconstruct_bw_sharded(rho_true, space, grid, mode, shots, seed, DEFAULT_SHARDS)
}

pub fn reconstruct_bw_sharded(
    rho_true: &DensityMatrix,
    space: &FockSpace,
    grid: &AlphaGrid,
    mode: Mode,
    shots: u64,
    seed: u64,
    shards: usize,
) -> Result<ReconstructionResult> {
    if rho_true.dim() != space.dim() {
        return Err(TomoError::DimensionMismatch { expected: space.dim(), found: rho_true.dim() });
    }
    let nodes = node_data(rho_true, grid);
    check_mass(&nodes, grid.y, space.nmax() / 2 + 1)?;
    match mode {
        Mode::Exact => ReconstructionResult::exact(exact_estimate(&nodes, grid.y, space.dim())),
        Mode::Sampled => {
            if shots == 0 {
                return Err(TomoError::InvalidParameter("sampled mode needs at least one shot".into()));
            }
            let parts = simulate_counts(&nodes, shots, seed, shards)?;
            let area = grid.area();
            let total = bw_estimate_from_records(space, grid.y, area, &records_from_counts(&nodes, &total_counts(&parts)))?;
            let per_shard = parts
                .iter()
                .map(|c| {
                    let recs = records_from_counts(&nodes, c);
                    if recs.is_empty() {
                        return Ok((0, ComplexMatrix::zeros(space.dim())));
                    }
                    let e = bw_estimate_from_records(space, grid.y, area, &recs)?;
                    Ok((e.shots, e.mean))
                })
                .collect::<Result<Vec<_>>>()?;
            finish_sharded(total.into_result()?, rho_true, &per_shard, seed)
        }
    }
}

fn alpha_label(label: &[f64]) -> Option<C64> {
    match label {
        [re, im] if re.is_finite() && im.is_finite() => Some(c64(*re, *im)),
        _ => None,
    }
}

struct CountingFamily {
    dim: usize,
    y: f64,
}

impl OperatorFamily for CountingFamily {
    fn dim(&self) -> usize {
        self.dim
    }

    fn operator(&self, label: &[f64]) -> Option<ComplexMatrix> {
        alpha_label(label).map(|a| bw_operator_unchecked(self.dim, a, self.y))
    }
}

/// Displacements acting on the counting set: `D(β) T(α) ∝ T(α + β/(e^{iy} - 1))`.
struct CountingGroup {
    dim: usize,
    y: f64,
}

fn shifted(g: &[f64], h: &[f64], y: f64) -> Option<Vec<f64>> {
    let s = alpha_label(h)? + alpha_label(g)? / (C64::from_polar(1.0, y) - 1.0);
    Some(vec![s.re, s.im])
}

impl GroupAction for CountingGroup {
    fn identity(&self) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn representation(&self, g: &[f64]) -> Option<ComplexMatrix> {
        alpha_label(g).map(|b| displacement_block(self.dim, b))
    }

    fn covariant_label(&self, g: &[f64], h: &[f64]) -> Option<Vec<f64>> {
        shifted(g, h, self.y)
    }

    fn adjoint_label(&self, g: &[f64], h: &[f64]) -> Option<Vec<f64>> {
        // T_y(α)^H = T_{-y}(α)
        shifted(g, h, -self.y)
    }
}

/// `{D^H(α) e^{iyn̂} D(α)}` over the grid; residual checks use the block `n <= nmax/2`.
pub fn counting_frame(space: &FockSpace, grid: &AlphaGrid) -> Result<OperatorFrame> {
    let elements = grid.nodes().iter().map(|(a, w)| FrameElement { label: vec![a.re, a.im], weight: *w }).collect();
    let dim = space.dim();
    Ok(OperatorFrame::new(
        format!("displaced-count-y{}-r{}-s{}", grid.y, grid.lattice.radius(), grid.lattice.steps()),
        elements,
        Arc::new(CountingFamily { dim, y: grid.y }),
    )?
    .with_group(Arc::new(CountingGroup { dim, y: grid.y }))
    .with_tolerance(LATTICE_FRAME_TOL)
    .with_check_block(space.nmax() / 2 + 1))
}
